//! Canonical connections of multi-time Lagrangians.

use std::sync::Arc;

use nalgebra::DMatrix;

use super::{
    fiber_variables, require_kind, time_derivative_term, AffineConnection, AffineSpatial, CoefficientSource,
    Coefficients, ConnectionError, NonlinearConnection, Provenance,
};
use crate::geometry::{self, Christoffel, GeometryError, MetricField, MetricKind};
use crate::jet::{is_nondegenerate, JetDims, JetPoint};
use crate::smooth::{self, check_arity, EvalError, Field, ScalarField, Space, TaylorScalar};

/// `L = h^{αβ} g_ij x^i_α x^j_β + U^(α)_(i) x^i_α + F`.
///
/// `u[α·n + i]` holds `U^(α)_(i)`; `u` and `f` are jet-layout fields that
/// should depend on `(t, x)` only.
#[derive(Debug, Clone)]
pub struct QuadraticLagrangian {
    dims: JetDims,
    h: MetricField,
    g: MetricField,
    u: Vec<Field>,
    f: Field,
}

impl QuadraticLagrangian {
    pub fn new(h: MetricField, g: MetricField, u: Vec<Field>, f: Field) -> Result<Self, ConnectionError> {
        require_kind(&h, &[MetricKind::Temporal], "h")?;
        require_kind(&g, &[MetricKind::Spatial, MetricKind::Parametric], "g")?;
        let dims = super::require_same_dims(&h, &g)?;
        if u.len() != dims.p * dims.n {
            return Err(ConnectionError::Invalid(format!("U needs {} components", dims.p * dims.n)));
        }
        if u.iter().chain(std::iter::once(&f)).any(|c| c.arity() != dims.nvars()) {
            return Err(ConnectionError::Invalid("U and F must take jet-layout arguments".into()));
        }
        Ok(QuadraticLagrangian { dims, h, g, u, f })
    }

    /// Pure kinetic term: `U = 0`, `F = 0`.
    pub fn kinetic(h: MetricField, g: MetricField) -> Result<Self, ConnectionError> {
        let dims = h.dims();
        let zero = smooth::constant_field(dims.nvars(), 0.0);
        QuadraticLagrangian::new(h, g, vec![zero.clone(); dims.p * dims.n], zero)
    }

    pub fn dims(&self) -> JetDims {
        self.dims
    }

    pub fn h(&self) -> &MetricField {
        &self.h
    }

    pub fn g(&self) -> &MetricField {
        &self.g
    }

    pub fn u(&self) -> &[Field] {
        &self.u
    }

    pub fn f(&self) -> &Field {
        &self.f
    }

    /// The assembled scalar `L` on J¹.
    pub fn scalar(&self) -> Field {
        Arc::new(Assembled(self.clone()))
    }

    /// Christoffel slope of `g` and the offset
    /// `½ g^{ik} ∂_α g_jk + ¼ g^{ik} h_αγ U^(γ)_(k)j`, stored at `(α·n + i)·n + j`.
    pub(crate) fn spatial_parts(&self, jp: &JetPoint) -> Result<(Christoffel, Vec<f64>), ConnectionError> {
        let JetDims { p, n } = self.dims;
        let (chris, ginv, dt) = time_derivative_term(&self.g, jp)?;
        let base = JetPoint::base(self.dims, jp.t.clone(), jp.x.clone()).expect("dims checked");
        let h = self.h.eval(&base)?;
        let curl = curl_tensor(&self.u, self.dims, &jp.t, &jp.x)?;
        let mut offset = vec![0.0; p * n * n];
        for a in 0..p {
            for i in 0..n {
                for j in 0..n {
                    let mut acc = 0.0;
                    for k in 0..n {
                        let lifted: f64 = (0..p).map(|g| h[(a, g)] * curl.get(g, k, j)).sum();
                        acc += ginv[(i, k)] * (0.5 * dt[a][(j, k)] + 0.25 * lifted);
                    }
                    offset[(a * n + i) * n + j] = acc;
                }
            }
        }
        Ok((chris, offset))
    }
}

#[derive(Debug)]
struct Assembled(QuadraticLagrangian);

impl ScalarField for Assembled {
    fn arity(&self) -> usize {
        self.0.dims.nvars()
    }

    fn eval(&self, args: &[TaylorScalar]) -> Result<TaylorScalar, EvalError> {
        check_arity(self.arity(), args.len())?;
        let ql = &self.0;
        let JetDims { p, n } = ql.dims;
        let hinv = smooth::invert(&ql.h.eval_taylor(args)?, p).ok_or_else(|| EvalError::NonFinite {
            location: "inverse temporal metric".into(),
        })?;
        let g = ql.g.eval_taylor(args)?;
        let v = |i: usize, a: usize| &args[ql.dims.v_index(i, a)];
        let mut acc = ql.f.eval(args)?;
        for a in 0..p {
            for i in 0..n {
                let mut inner = TaylorScalar::constant(0.0);
                for b in 0..p {
                    for j in 0..n {
                        inner = inner + &hinv[a * p + b] * &g[i * n + j] * v(j, b);
                    }
                }
                acc = acc + (inner + ql.u[a * n + i].eval(args)?) * v(i, a);
            }
        }
        Ok(acc)
    }
}

/// `U^(α)_(i)j = ∂U^(α)_(i)/∂x^j − ∂U^(α)_(j)/∂x^i` at a base point.
#[derive(Debug, Clone, PartialEq)]
pub struct CurlTensor {
    p: usize,
    n: usize,
    data: Vec<f64>,
}

impl CurlTensor {
    pub fn get(&self, alpha: usize, i: usize, j: usize) -> f64 {
        self.data[(alpha * self.n + i) * self.n + j]
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|c| c.abs()).fold(0.0, f64::max)
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.p, self.n)
    }
}

/// Curl of the covector family `u[α·n + i]` (jet-layout fields, evaluated
/// with zero fiber coordinates).
pub fn curl_tensor(u: &[Field], dims: JetDims, t: &[f64], x: &[f64]) -> Result<CurlTensor, ConnectionError> {
    let JetDims { p, n } = dims;
    if u.len() != p * n || t.len() != p || x.len() != n {
        return Err(ConnectionError::Invalid("curl_tensor: component count does not match dims".into()));
    }
    let mut flat = vec![0.0; dims.nvars()];
    flat[..p].copy_from_slice(t);
    flat[p..p + n].copy_from_slice(x);
    let seeds: Vec<usize> = (p..p + n).collect();
    // grad[(α·n + i)·n + j] = ∂U^(α)_(i)/∂x^j
    let mut grad = Vec::with_capacity(p * n * n);
    for c in u {
        let e = smooth::eval_seeded(c.as_ref(), &flat, &seeds, 1)?;
        grad.extend((0..n).map(|j| e.partial(&[j])));
    }
    let mut data = vec![0.0; p * n * n];
    for a in 0..p {
        for i in 0..n {
            for j in 0..n {
                data[(a * n + i) * n + j] = grad[(a * n + i) * n + j] - grad[(a * n + j) * n + i];
            }
        }
    }
    Ok(CurlTensor { p, n, data })
}

/// Canonical connection of a quadratic multi-time Lagrangian with `p ≥ 2`.
pub fn canonical_ml_pge2(ql: &QuadraticLagrangian) -> Result<NonlinearConnection, ConnectionError> {
    if ql.dims.p < 2 {
        return Err(ConnectionError::WrongArity {
            construction: "canonical_ml_pge2",
            requirement: "p >= 2",
            p: ql.dims.p,
        });
    }
    let source = AffineConnection { h: ql.h.clone(), spatial: AffineSpatial::Quadratic(Arc::new(ql.clone())) };
    Ok(NonlinearConnection::new(ql.dims, Provenance::MlPge2, Arc::new(source)))
}

/// Semispray `G^i(t, x, y)` of a single-time Lagrangian.
///
/// `G^i = ¼ g^{ik} [L_{x^h y^k} y^h − L_{x^k} + L_{t y^k} + L_{y^k} H + 2 H g_kl y^l]`
/// with `g = ½ L_yy` and `H` the Christoffel symbol of `h`, so that
/// `x″ − H x′ + 2G = 0` is the Euler–Lagrange system of `∫ L √|h| dt`.
/// The `H` terms differ from the usual printed form (`L_{x^k} H`, and
/// `h^{11} g_kl` with `g` the Kronecker factor, which is `½ L_yy` here);
/// only this form is natural under time reparametrization.
#[derive(Debug, Clone)]
pub struct Semispray {
    dims: JetDims,
    l: Field,
    h: MetricField,
}

impl Semispray {
    pub fn dims(&self) -> JetDims {
        self.dims
    }

    pub fn lagrangian(&self) -> &Field {
        &self.l
    }

    pub fn h(&self) -> &MetricField {
        &self.h
    }

    /// `G^i` at a point.
    pub fn eval(&self, t: f64, x: &[f64], y: &[f64]) -> Result<Vec<f64>, ConnectionError> {
        let jp = JetPoint::new(self.dims, vec![t], x.to_vec(), y.to_vec())
            .map_err(|e| ConnectionError::Invalid(e.to_string()))?;
        Ok(self.taylor(&jp, 0)?.iter().map(|g| g.value()).collect())
    }

    /// `G^i` expanded to `order` in all jet variables `(t, x, y)`.
    pub fn taylor(&self, jp: &JetPoint, order: usize) -> Result<Vec<TaylorScalar>, ConnectionError> {
        let n = self.dims.n;
        let nv = self.dims.nvars();
        let (t, y0) = (0, 1 + n);
        let flat = jp.to_flat();
        let base = JetPoint::base(self.dims, jp.t.clone(), jp.x.clone()).expect("dims checked");
        let big_h = geometry::christoffel(&self.h, &base)?.get(0, 0, 0);

        let seeds: Vec<usize> = (0..nv).collect();
        let l = smooth::eval_seeded(self.l.as_ref(), &flat, &seeds, order + 2)?;
        let lx: Vec<TaylorScalar> = (0..n).map(|k| l.derivative(1 + k)).collect();
        let ly: Vec<TaylorScalar> = (0..n).map(|k| l.derivative(y0 + k)).collect();
        let mut g = Vec::with_capacity(n * n);
        for k in 0..n {
            for m in 0..n {
                g.push(ly[k].derivative(y0 + m) * 0.5);
            }
        }
        let gval = DMatrix::from_fn(n, n, |a, b| g[a * n + b].value());
        if !is_nondegenerate(&gval) {
            return Err(GeometryError::SingularMetric { point: flat, det: gval.determinant() }.into());
        }
        let ginv = smooth::invert(&g, n).ok_or_else(|| GeometryError::SingularMetric {
            point: flat.clone(),
            det: gval.determinant(),
        })?;
        let y: Vec<TaylorScalar> = if order == 0 {
            jp.v.iter().map(|&c| TaylorScalar::constant(c)).collect()
        } else {
            let space = Space::get(nv, order);
            (0..n).map(|k| TaylorScalar::variable(&space, y0 + k, jp.v[k])).collect()
        };

        let bracket: Vec<TaylorScalar> = (0..n)
            .map(|k| {
                let mut acc = &ly[k] * big_h - &lx[k] + ly[k].derivative(t);
                for m in 0..n {
                    acc = acc + ly[k].derivative(1 + m) * &y[m];
                    acc = acc + &g[k * n + m] * &y[m] * (2.0 * big_h);
                }
                acc
            })
            .collect();
        Ok((0..n)
            .map(|i| smooth::sum((0..n).map(|k| &ginv[i * n + k] * &bracket[k])) * 0.25)
            .collect())
    }
}

/// Semispray of a `p = 1` Lagrangian with temporal metric `h`.
pub fn semispray_p1(l: &Field, h: &MetricField) -> Result<Semispray, ConnectionError> {
    require_kind(h, &[MetricKind::Temporal], "h")?;
    let dims = h.dims();
    if dims.p != 1 {
        return Err(ConnectionError::WrongArity { construction: "semispray_p1", requirement: "p = 1", p: dims.p });
    }
    if l.arity() != dims.nvars() {
        return Err(ConnectionError::Invalid(format!(
            "Lagrangian arity {} does not match jet layout {}",
            l.arity(),
            dims.nvars()
        )));
    }
    Ok(Semispray { dims, l: l.clone(), h: h.clone() })
}

#[derive(Debug)]
struct SemisprayConnection(Semispray);

impl CoefficientSource for SemisprayConnection {
    fn fiber_jet(&self, jp: &JetPoint, order: usize) -> Result<Coefficients<TaylorScalar>, ConnectionError> {
        let s = &self.0;
        let n = s.dims.n;
        let base = JetPoint::base(s.dims, jp.t.clone(), jp.x.clone()).expect("dims checked");
        let big_h = geometry::christoffel(&s.h, &base)?.get(0, 0, 0);
        let gs = s.taylor(jp, order + 1)?;
        let fibers: Vec<usize> = (1 + n..1 + 2 * n).collect();
        let y = fiber_variables(jp, order);
        Ok(Coefficients::from_fn(
            s.dims,
            |i, _, _| &y[i] * (-big_h),
            |i, _, j| {
                let d = gs[i].derivative(1 + n + j).restrict(&fibers);
                if order == 0 {
                    TaylorScalar::constant(d.value())
                } else {
                    d
                }
            },
        ))
    }
}

/// Canonical connection of a `p = 1` Lagrangian: `N^(i)_(1)j = ∂G^i/∂y^j`,
/// `M^(i)_(1)1 = −H y^i`.
pub fn canonical_ml_p1(l: &Field, h: &MetricField) -> Result<NonlinearConnection, ConnectionError> {
    let s = semispray_p1(l, h)?;
    Ok(NonlinearConnection::new(s.dims, Provenance::MlP1, Arc::new(SemisprayConnection(s))))
}
