//! Semi-Riemannian metric fields, inverses, signatures and Christoffel
//! symbols.
//!
//! A metric is a symmetric matrix of jet-layout fields. Its kind fixes
//! which variable block it may depend on and which block its Christoffel
//! symbols differentiate in:
//!
//! | kind            | depends on  | Christoffel block |
//! |-----------------|-------------|-------------------|
//! | temporal `h`    | `t`         | `t`               |
//! | spatial `φ`     | `x`         | `x`               |
//! | parametric `ε`  | `t, x`      | `x` (t frozen)    |
//! | fiber-dependent | `t, x, v`   | `x` (t, v frozen) |
//!
//! The "generalized Christoffel symbols" of a parametric metric are read as
//! the spatial Christoffel symbols with `t` as a parameter.

use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use thiserror::Error;

use crate::exprlang::{self, ExprError};
use crate::jet::{is_nondegenerate, Block, JetDims, JetPoint};
use crate::smooth::{self, constant_field, EvalError, Field, TaylorScalar};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("metric is singular at {point:?} (det = {det:e})")]
    SingularMetric { point: Vec<f64>, det: f64 },
    #[error("signature changes: {first_signature:?} at {first:?} but {second_signature:?} at {second:?}")]
    NonconstantSignature {
        first: Vec<f64>,
        first_signature: (usize, usize),
        second: Vec<f64>,
        second_signature: (usize, usize),
    },
    #[error("metric components ({0}, {1}) and ({1}, {0}) differ")]
    NotSymmetric(usize, usize),
    #[error("{kind:?} metric may not depend on `{variable}`")]
    ForbiddenVariable { kind: MetricKind, variable: String },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("at least one sample point is required")]
    NoSamples,
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Expr(#[from] ExprError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricKind {
    Temporal,
    Spatial,
    Parametric,
    FiberDependent,
}

impl MetricKind {
    fn allowed(&self, block: Block) -> bool {
        matches!(
            (self, block),
            (MetricKind::Temporal, Block::Time)
                | (MetricKind::Spatial, Block::Space)
                | (MetricKind::Parametric, Block::Time | Block::Space)
                | (MetricKind::FiberDependent, _)
        )
    }

    /// Block the Christoffel symbols differentiate in.
    pub fn own_block(&self) -> Block {
        match self {
            MetricKind::Temporal => Block::Time,
            _ => Block::Space,
        }
    }
}

/// A smooth symmetric-matrix-valued field. Entries `(a, b)` and `(b, a)`
/// share one field.
#[derive(Debug, Clone)]
pub struct MetricField {
    kind: MetricKind,
    dims: JetDims,
    size: usize,
    comps: Vec<Field>,
}

impl MetricField {
    fn size_for(kind: MetricKind, dims: JetDims) -> usize {
        match kind {
            MetricKind::Temporal => dims.p,
            _ => dims.n,
        }
    }

    /// Build from a generator called once per upper-triangular entry.
    pub fn from_fn(kind: MetricKind, dims: JetDims, mut f: impl FnMut(usize, usize) -> Field) -> Self {
        let size = Self::size_for(kind, dims);
        let mut comps: Vec<Option<Field>> = vec![None; size * size];
        for a in 0..size {
            for b in a..size {
                let c = f(a, b);
                comps[b * size + a] = Some(c.clone());
                comps[a * size + b] = Some(c);
            }
        }
        MetricField { kind, dims, size, comps: comps.into_iter().map(Option::unwrap).collect() }
    }

    pub fn constant(kind: MetricKind, dims: JetDims, rows: &[Vec<f64>]) -> Result<Self, GeometryError> {
        let size = Self::size_for(kind, dims);
        if rows.len() != size || rows.iter().any(|r| r.len() != size) {
            return Err(GeometryError::Dimension(format!("expected a {size}×{size} matrix")));
        }
        for a in 0..size {
            for b in a + 1..size {
                if rows[a][b] != rows[b][a] {
                    return Err(GeometryError::NotSymmetric(a, b));
                }
            }
        }
        Ok(Self::from_fn(kind, dims, |a, b| constant_field(dims.nvars(), rows[a][b])))
    }

    /// The identity matrix (flat metric).
    pub fn flat(kind: MetricKind, dims: JetDims) -> Self {
        Self::from_fn(kind, dims, |a, b| {
            constant_field(dims.nvars(), if a == b { 1.0 } else { 0.0 })
        })
    }

    /// Parse a full square matrix of expressions; the two triangles must
    /// agree structurally and every variable must be allowed by `kind`.
    pub fn from_sources<S: AsRef<str>>(kind: MetricKind, dims: JetDims, rows: &[Vec<S>]) -> Result<Self, GeometryError> {
        let size = Self::size_for(kind, dims);
        if rows.len() != size || rows.iter().any(|r| r.len() != size) {
            return Err(GeometryError::Dimension(format!("expected a {size}×{size} matrix")));
        }
        let mut parsed = Vec::with_capacity(size * size);
        for row in rows {
            for s in row {
                let e = exprlang::parse(s.as_ref(), dims)?;
                for &var in e.variables() {
                    let block = [Block::Time, Block::Space, Block::Fiber]
                        .into_iter()
                        .find(|&b| dims.block(b).contains(&var))
                        .unwrap();
                    if !kind.allowed(block) {
                        return Err(GeometryError::ForbiddenVariable {
                            kind,
                            variable: variable_name(dims, var),
                        });
                    }
                }
                parsed.push(e);
            }
        }
        for a in 0..size {
            for b in a + 1..size {
                if parsed[a * size + b] != parsed[b * size + a] {
                    return Err(GeometryError::NotSymmetric(a, b));
                }
            }
        }
        Ok(Self::from_fn(kind, dims, |a, b| Arc::new(parsed[a * size + b].clone()) as Field))
    }

    pub fn kind(&self) -> MetricKind {
        self.kind
    }

    pub fn dims(&self) -> JetDims {
        self.dims
    }

    /// Matrix size: `p` for temporal metrics, `n` otherwise.
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn component(&self, a: usize, b: usize) -> &Field {
        &self.comps[a * self.size + b]
    }

    /// Components at Taylor arguments in the flat jet layout (row-major).
    pub fn eval_taylor(&self, args: &[TaylorScalar]) -> Result<Vec<TaylorScalar>, EvalError> {
        let d = self.size;
        let mut out = vec![TaylorScalar::constant(0.0); d * d];
        for a in 0..d {
            for b in a..d {
                let v = self.component(a, b).eval(args)?;
                out[b * d + a] = v.clone();
                out[a * d + b] = v;
            }
        }
        Ok(out)
    }

    /// Matrix at a point, without a nondegeneracy check.
    pub fn eval(&self, point: &JetPoint) -> Result<DMatrix<f64>, GeometryError> {
        self.check_point(point)?;
        let args: Vec<TaylorScalar> =
            point.to_flat().into_iter().map(TaylorScalar::constant).collect();
        let vals = self.eval_taylor(&args)?;
        Ok(DMatrix::from_fn(self.size, self.size, |a, b| vals[a * self.size + b].value()))
    }

    /// Matrix at a point; errors if it is degenerate.
    pub fn eval_checked(&self, point: &JetPoint) -> Result<DMatrix<f64>, GeometryError> {
        let m = self.eval(point)?;
        if !is_nondegenerate(&m) {
            return Err(GeometryError::SingularMetric { point: point.to_flat(), det: m.determinant() });
        }
        Ok(m)
    }

    /// Matrix and its partials in each variable of `block`.
    pub fn derivatives(&self, point: &JetPoint, block: Block) -> Result<(DMatrix<f64>, Vec<DMatrix<f64>>), GeometryError> {
        self.check_point(point)?;
        let flat = point.to_flat();
        let seeds: Vec<usize> = self.dims.block(block).collect();
        let d = self.size;
        let mut value = DMatrix::zeros(d, d);
        let mut partials = vec![DMatrix::zeros(d, d); seeds.len()];
        for a in 0..d {
            for b in a..d {
                let e = smooth::eval_seeded(self.component(a, b).as_ref(), &flat, &seeds, 1)?;
                value[(a, b)] = e.value();
                value[(b, a)] = e.value();
                for (k, m) in partials.iter_mut().enumerate() {
                    let dv = e.partial(&[k]);
                    m[(a, b)] = dv;
                    m[(b, a)] = dv;
                }
            }
        }
        Ok((value, partials))
    }

    fn check_point(&self, point: &JetPoint) -> Result<(), GeometryError> {
        if point.dims() != self.dims {
            return Err(GeometryError::Dimension(format!(
                "metric expects {:?}, point has {:?}",
                self.dims,
                point.dims()
            )));
        }
        Ok(())
    }
}

fn variable_name(dims: JetDims, var: usize) -> String {
    if var < dims.p {
        format!("t{}", var + 1)
    } else if var < dims.p + dims.n {
        format!("x{}", var - dims.p + 1)
    } else {
        let k = var - dims.p - dims.n;
        format!("v{}{}", k / dims.p + 1, k % dims.p + 1)
    }
}

/// Inverse of a metric at a point; residual `‖m·m⁻¹ − I‖_∞` is at rounding
/// level for well-conditioned metrics.
pub fn inverse_metric(m: &MetricField, point: &JetPoint) -> Result<DMatrix<f64>, GeometryError> {
    let value = m.eval_checked(point)?;
    invert_symmetric(&value).ok_or_else(|| GeometryError::SingularMetric {
        point: point.to_flat(),
        det: value.determinant(),
    })
}

pub(crate) fn invert_symmetric(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    if !is_nondegenerate(m) {
        return None;
    }
    let inv = m.clone().try_inverse()?;
    Some((&inv + inv.transpose()) * 0.5)
}

/// Christoffel symbols `c[l][j][k]` at a point, symmetric in `(j, k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Christoffel {
    dim: usize,
    coeffs: Vec<f64>,
}

impl Christoffel {
    pub fn zeros(dim: usize) -> Self {
        Christoffel { dim, coeffs: vec![0.0; dim * dim * dim] }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, l: usize, j: usize, k: usize) -> f64 {
        self.coeffs[(l * self.dim + j) * self.dim + k]
    }

    pub fn max_abs(&self) -> f64 {
        self.coeffs.iter().map(|c| c.abs()).fold(0.0, f64::max)
    }

    /// From a value matrix, its inverse and the partials in the metric's own
    /// variables: `c[l][j][k] = ½ m^{li} (∂_k m_ij + ∂_j m_ik − ∂_i m_jk)`.
    pub fn from_parts(inv: &DMatrix<f64>, partials: &[DMatrix<f64>]) -> Self {
        let d = inv.nrows();
        let mut out = Christoffel::zeros(d);
        for l in 0..d {
            for j in 0..d {
                for k in j..d {
                    let mut acc = 0.0;
                    for i in 0..d {
                        acc += inv[(l, i)]
                            * (partials[k][(i, j)] + partials[j][(i, k)] - partials[i][(j, k)]);
                    }
                    let c = 0.5 * acc;
                    out.coeffs[(l * d + j) * d + k] = c;
                    out.coeffs[(l * d + k) * d + j] = c;
                }
            }
        }
        out
    }
}

/// Christoffel symbols of `m` in its own variable block.
pub fn christoffel(m: &MetricField, point: &JetPoint) -> Result<Christoffel, GeometryError> {
    let (value, partials) = m.derivatives(point, m.kind().own_block())?;
    let inv = invert_symmetric(&value).ok_or_else(|| GeometryError::SingularMetric {
        point: point.to_flat(),
        det: value.determinant(),
    })?;
    Ok(Christoffel::from_parts(&inv, &partials))
}

/// Spatial Christoffel symbols of a parametric metric `ε(t, x)` at fixed `t`.
pub fn christoffel_parametric(eps: &MetricField, t: &[f64], x: &[f64]) -> Result<Christoffel, GeometryError> {
    if eps.kind() == MetricKind::Temporal {
        return Err(GeometryError::Dimension("parametric Christoffel symbols need a spatial metric".into()));
    }
    let point = JetPoint::base(eps.dims(), t.to_vec(), x.to_vec())
        .map_err(|e| GeometryError::Dimension(e.to_string()))?;
    christoffel(eps, &point)
}

/// Eigenvalue sign counts `(plus, minus)`, required to agree at every sample.
pub fn signature(m: &MetricField, samples: &[JetPoint]) -> Result<(usize, usize), GeometryError> {
    let first = samples.first().ok_or(GeometryError::NoSamples)?;
    let sig_at = |p: &JetPoint| -> Result<(usize, usize), GeometryError> {
        let value = m.eval_checked(p)?;
        let sym = (&value + value.transpose()) * 0.5;
        let eig = SymmetricEigen::new(sym);
        let scale = eig.eigenvalues.iter().map(|e| e.abs()).fold(0.0, f64::max);
        if eig.eigenvalues.iter().any(|e| e.abs() <= 1e-12 * scale) {
            return Err(GeometryError::SingularMetric { point: p.to_flat(), det: value.determinant() });
        }
        let plus = eig.eigenvalues.iter().filter(|&&e| e > 0.0).count();
        Ok((plus, value.nrows() - plus))
    };
    let reference = sig_at(first)?;
    for p in &samples[1..] {
        let s = sig_at(p)?;
        if s != reference {
            return Err(GeometryError::NonconstantSignature {
                first: first.to_flat(),
                first_signature: reference,
                second: p.to_flat(),
                second_signature: s,
            });
        }
    }
    Ok(reference)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sphere(dims: JetDims) -> MetricField {
        MetricField::from_sources(MetricKind::Spatial, dims, &[vec!["1", "0"], vec!["0", "sin(x1)^2"]]).unwrap()
    }

    #[test]
    fn identity_inverse() {
        let d = JetDims::new(1, 3);
        let m = MetricField::flat(MetricKind::Spatial, d);
        let p = JetPoint::base(d, vec![0.0], vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(inverse_metric(&m, &p).unwrap(), DMatrix::identity(3, 3));
    }

    #[test]
    fn sphere_inverse_and_christoffels() {
        let d = JetDims::new(1, 2);
        let m = sphere(d);
        let theta = std::f64::consts::FRAC_PI_4;
        let p = JetPoint::base(d, vec![0.0], vec![theta, 0.3]).unwrap();
        let inv = inverse_metric(&m, &p).unwrap();
        assert!((inv[(0, 0)] - 1.0).abs() < 1e-15);
        assert!((inv[(1, 1)] - 2.0).abs() < 1e-12);
        let c = christoffel(&m, &p).unwrap();
        assert!((c.get(0, 1, 1) + 0.5).abs() < 1e-12);
        assert!((c.get(1, 0, 1) - 1.0).abs() < 1e-12);
        assert_eq!(c.get(1, 0, 1), c.get(1, 1, 0));
        assert!(c.get(0, 0, 0).abs() < 1e-15);
    }

    #[test]
    fn exponential_temporal_metric() {
        let d = JetDims::new(1, 1);
        let h = MetricField::from_sources(MetricKind::Temporal, d, &[vec!["exp(2*t1)"]]).unwrap();
        for t in [-1.0, 0.0, 0.7] {
            let p = JetPoint::base(d, vec![t], vec![0.0]).unwrap();
            assert!((christoffel(&h, &p).unwrap().get(0, 0, 0) - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn flat_christoffels_vanish() {
        let d = JetDims::new(2, 2);
        let m = MetricField::constant(MetricKind::Spatial, d, &[vec![2.0, 0.5], vec![0.5, -1.0]]).unwrap();
        let p = JetPoint::base(d, vec![0.0, 0.0], vec![0.3, 0.1]).unwrap();
        assert_eq!(christoffel(&m, &p).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn parametric_examples() {
        let d = JetDims::new(2, 2);
        let conformal = MetricField::from_sources(
            MetricKind::Parametric,
            d,
            &[vec!["exp(2*t1)", "0"], vec!["0", "exp(2*t1)"]],
        )
        .unwrap();
        let c = christoffel_parametric(&conformal, &[0.4, 0.1], &[1.0, -2.0]).unwrap();
        assert_eq!(c.max_abs(), 0.0);
        let bump = MetricField::from_sources(
            MetricKind::Parametric,
            d,
            &[vec!["1+x1^2", "0"], vec!["0", "1"]],
        )
        .unwrap();
        let c = christoffel_parametric(&bump, &[0.0, 0.0], &[1.0, 0.0]).unwrap();
        assert!((c.get(0, 0, 0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn signatures() {
        let d = JetDims::new(1, 3);
        let e = MetricField::flat(MetricKind::Spatial, d);
        let p = JetPoint::base(d, vec![0.0], vec![0.0; 3]).unwrap();
        assert_eq!(signature(&e, &[p]).unwrap(), (3, 0));
        let d4 = JetDims::new(1, 4);
        let mink = MetricField::constant(
            MetricKind::Spatial,
            d4,
            &[
                vec![-1.0, 0.0, 0.0, 0.0],
                vec![0.0, 1.0, 0.0, 0.0],
                vec![0.0, 0.0, 1.0, 0.0],
                vec![0.0, 0.0, 0.0, 1.0],
            ],
        )
        .unwrap();
        let p = JetPoint::base(d4, vec![0.0], vec![0.0; 4]).unwrap();
        assert_eq!(signature(&mink, &[p]).unwrap(), (3, 1));

        let d2 = JetDims::new(1, 2);
        let flip = MetricField::from_sources(MetricKind::Parametric, d2, &[vec!["t1", "0"], vec!["0", "1"]]).unwrap();
        let a = JetPoint::base(d2, vec![1.0], vec![0.0, 0.0]).unwrap();
        let b = JetPoint::base(d2, vec![-1.0], vec![0.0, 0.0]).unwrap();
        assert!(matches!(
            signature(&flip, &[a, b]),
            Err(GeometryError::NonconstantSignature { .. })
        ));
        assert_eq!(signature(&flip, &[]), Err(GeometryError::NoSamples));
    }

    #[test]
    fn singular_metric_rejected() {
        let d = JetDims::new(1, 2);
        let m = MetricField::constant(MetricKind::Spatial, d, &[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let p = JetPoint::base(d, vec![0.0], vec![0.0, 0.0]).unwrap();
        assert!(matches!(inverse_metric(&m, &p), Err(GeometryError::SingularMetric { .. })));
    }

    #[test]
    fn kind_restricts_variables() {
        let d = JetDims::new(1, 1);
        assert!(matches!(
            MetricField::from_sources(MetricKind::Temporal, d, &[vec!["x1"]]),
            Err(GeometryError::ForbiddenVariable { .. })
        ));
        assert!(matches!(
            MetricField::from_sources(MetricKind::Spatial, JetDims::new(1, 2), &[vec!["1", "x1"], vec!["x2", "1"]]),
            Err(GeometryError::NotSymmetric(0, 1))
        ));
    }
}
