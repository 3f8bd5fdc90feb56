//! Vertical metrics, their Kronecker factorization and the generalized
//! (vertical-metric driven) canonical connection.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    require_kind, AffineConnection, AffineSpatial, ConnectionError, NonlinearConnection, Provenance,
    RegularityClause,
};
use crate::geometry::{self, GeometryError, MetricField, MetricKind};
use crate::jet::{is_nondegenerate, Block, JetDims, JetPoint};
use crate::smooth::{self, check_arity, EvalError, Field, ScalarField, TaylorScalar};

#[derive(Debug, Clone)]
enum VerticalSource {
    /// `½` fiber Hessian of a Lagrangian.
    Lagrangian(Field),
    /// `h^{αβ} g_ij`.
    Product { h: MetricField, g: MetricField },
    /// Explicit components at `A·(n·p) + B`, `A = α·n + i`; only `A ≤ B` is read.
    Components(Vec<Field>),
}

/// `G^(α)(β)_(i)(j)` on J¹, symmetric under `(α, i) ↔ (β, j)`.
#[derive(Debug, Clone)]
pub struct FundamentalVerticalMetric {
    dims: JetDims,
    source: VerticalSource,
}

/// Values of a vertical metric at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct VerticalArray {
    dims: JetDims,
    data: Vec<f64>,
}

impl VerticalArray {
    pub fn get(&self, alpha: usize, beta: usize, i: usize, j: usize) -> f64 {
        let JetDims { p, n } = self.dims;
        self.data[(alpha * n + i) * (p * n) + beta * n + j]
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|c| c.abs()).fold(0.0, f64::max)
    }

    pub fn dims(&self) -> JetDims {
        self.dims
    }
}

impl FundamentalVerticalMetric {
    /// `G = ½ ∂²L/∂x^i_α ∂x^j_β`.
    pub fn from_lagrangian(l: Field, dims: JetDims) -> Result<Self, ConnectionError> {
        if l.arity() != dims.nvars() {
            return Err(ConnectionError::Invalid(format!(
                "Lagrangian arity {} does not match jet layout {}",
                l.arity(),
                dims.nvars()
            )));
        }
        Ok(FundamentalVerticalMetric { dims, source: VerticalSource::Lagrangian(l) })
    }

    /// `G = h^{αβ} g_ij` for any spatial-sized `g` (which may depend on the fiber).
    pub fn product(h: &MetricField, g: &MetricField) -> Result<Self, ConnectionError> {
        require_kind(h, &[MetricKind::Temporal], "h")?;
        require_kind(g, &[MetricKind::Spatial, MetricKind::Parametric, MetricKind::FiberDependent], "g")?;
        let dims = super::require_same_dims(h, g)?;
        Ok(FundamentalVerticalMetric { dims, source: VerticalSource::Product { h: h.clone(), g: g.clone() } })
    }

    /// Explicit components `fields[A·(n·p) + B]`, `A = α·n + i`. The upper
    /// triangle `A ≤ B` defines the metric.
    pub fn from_fields(dims: JetDims, fields: Vec<Field>) -> Result<Self, ConnectionError> {
        let m = dims.p * dims.n;
        if fields.len() != m * m || fields.iter().any(|f| f.arity() != dims.nvars()) {
            return Err(ConnectionError::Invalid(format!("vertical metric needs {} jet-layout components", m * m)));
        }
        Ok(FundamentalVerticalMetric { dims, source: VerticalSource::Components(fields) })
    }

    pub fn dims(&self) -> JetDims {
        self.dims
    }

    /// Components at Taylor arguments, row-major over `A = α·n + i`.
    pub fn eval_taylor(&self, args: &[TaylorScalar]) -> Result<Vec<TaylorScalar>, EvalError> {
        let dims = self.dims;
        check_arity(dims.nvars(), args.len())?;
        let JetDims { p, n } = dims;
        let m = p * n;
        let mut out = vec![TaylorScalar::constant(0.0); m * m];
        match &self.source {
            VerticalSource::Lagrangian(l) => {
                let wrt: Vec<usize> = dims.block(Block::Fiber).collect();
                let probed = smooth::probe(l.as_ref(), args, &wrt, 2)?;
                for aa in 0..m {
                    for bb in aa..m {
                        let (a, i, b, j) = (aa / n, aa % n, bb / n, bb % n);
                        let v = probed.partial(&[i * p + a, j * p + b]) * 0.5;
                        out[bb * m + aa] = v.clone();
                        out[aa * m + bb] = v;
                    }
                }
            }
            VerticalSource::Product { h, g } => {
                let hinv = smooth::invert(&h.eval_taylor(args)?, p)
                    .ok_or_else(|| EvalError::NonFinite { location: "inverse temporal metric".into() })?;
                let g = g.eval_taylor(args)?;
                for aa in 0..m {
                    for bb in 0..m {
                        let (a, i, b, j) = (aa / n, aa % n, bb / n, bb % n);
                        out[aa * m + bb] = &hinv[a * p + b] * &g[i * n + j];
                    }
                }
            }
            VerticalSource::Components(fields) => {
                for aa in 0..m {
                    for bb in aa..m {
                        let v = fields[aa * m + bb].eval(args)?;
                        out[bb * m + aa] = v.clone();
                        out[aa * m + bb] = v;
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn eval(&self, jp: &JetPoint) -> Result<VerticalArray, ConnectionError> {
        if jp.dims() != self.dims {
            return Err(ConnectionError::Invalid("vertical metric and point disagree on dims".into()));
        }
        let args: Vec<TaylorScalar> = jp.to_flat().into_iter().map(TaylorScalar::constant).collect();
        let data = self.eval_taylor(&args)?.iter().map(|c| c.value()).collect();
        Ok(VerticalArray { dims: self.dims, data })
    }
}

/// Fundamental vertical metric of a Lagrangian.
pub fn fundamental_metric(l: &Field, dims: JetDims) -> Result<FundamentalVerticalMetric, ConnectionError> {
    FundamentalVerticalMetric::from_lagrangian(l.clone(), dims)
}

fn flat_args(jp: &JetPoint) -> Vec<TaylorScalar> {
    jp.to_flat().into_iter().map(TaylorScalar::constant).collect()
}

/// `(1/p) h_αβ G^(α)(β)_(i)(j)`; the unique candidate when `G = h^{αβ} g_ij`.
#[derive(Debug)]
struct TraceExtracted {
    g: FundamentalVerticalMetric,
    h: MetricField,
    i: usize,
    j: usize,
}

impl ScalarField for TraceExtracted {
    fn arity(&self) -> usize {
        self.g.dims.nvars()
    }

    fn eval(&self, args: &[TaylorScalar]) -> Result<TaylorScalar, EvalError> {
        let JetDims { p, n } = self.g.dims;
        let m = p * n;
        let big = self.g.eval_taylor(args)?;
        let h = self.h.eval_taylor(args)?;
        let mut acc = TaylorScalar::constant(0.0);
        for a in 0..p {
            for b in 0..p {
                acc = acc + &h[a * p + b] * &big[(a * n + self.i) * m + b * n + self.j];
            }
        }
        Ok(acc * (1.0 / p as f64))
    }
}

/// Result of a successful Kronecker factorization.
#[derive(Debug, Clone)]
pub struct KroneckerFactor {
    /// The spatial factor `g_ij(t, x, x_γ)`.
    pub g: MetricField,
    /// Worst relative residual `‖G − h^{αβ} g‖_∞ / ‖G‖_∞` over the samples.
    pub worst_residual: f64,
}

/// Trace-extract `g` from `G` at each point and measure the relative product
/// residual. Returns `(g, relative residual)`.
fn factor_at(
    big: &dyn Fn(usize, usize, usize, usize) -> f64,
    metric: &DMatrix<f64>,
    dims: JetDims,
) -> Option<(DMatrix<f64>, f64)> {
    let JetDims { p, n } = dims;
    let inv = geometry::invert_symmetric(metric)?;
    let g = DMatrix::from_fn(n, n, |i, j| {
        let mut acc = 0.0;
        for a in 0..p {
            for b in 0..p {
                acc += metric[(a, b)] * big(a, b, i, j);
            }
        }
        acc / p as f64
    });
    let (mut resid, mut norm) = (0.0_f64, 0.0_f64);
    for a in 0..p {
        for b in 0..p {
            for i in 0..n {
                for j in 0..n {
                    let v = big(a, b, i, j);
                    norm = norm.max(v.abs());
                    resid = resid.max((v - inv[(a, b)] * g[(i, j)]).abs());
                }
            }
        }
    }
    let rel = if norm > 0.0 { resid / norm } else { resid };
    Some((g, rel))
}

/// Factor `G = h^{αβ} g_ij`, certified at every sample.
pub fn kronecker_factor(
    big: &FundamentalVerticalMetric,
    h: &MetricField,
    samples: &[JetPoint],
    tol: f64,
) -> Result<KroneckerFactor, ConnectionError> {
    require_kind(h, &[MetricKind::Temporal], "h")?;
    if samples.is_empty() {
        return Err(GeometryError::NoSamples.into());
    }
    let mut worst = (0.0_f64, None::<Vec<f64>>);
    let mut degenerate = None;
    for jp in samples {
        let arr = big.eval(jp)?;
        let hm = h.eval_checked(jp)?;
        let (g, rel) = factor_at(&|a, b, i, j| arr.get(a, b, i, j), &hm, big.dims)
            .ok_or_else(|| GeometryError::SingularMetric { point: jp.to_flat(), det: hm.determinant() })?;
        if rel > worst.0 || worst.1.is_none() {
            worst = (rel.max(worst.0), Some(jp.to_flat()));
        }
        if degenerate.is_none() && !is_nondegenerate(&g) {
            degenerate = Some(jp.to_flat());
        }
    }
    if worst.0 > tol {
        return Err(ConnectionError::NotRegular {
            clause: RegularityClause::NonProduct,
            residual: worst.0,
            point: worst.1.unwrap_or_default(),
        });
    }
    if let Some(point) = degenerate {
        return Err(ConnectionError::DegenerateFactor { point });
    }
    let g = MetricField::from_fn(MetricKind::FiberDependent, big.dims, |i, j| {
        Arc::new(TraceExtracted { g: big.clone(), h: h.clone(), i, j }) as Field
    });
    Ok(KroneckerFactor { g, worst_residual: worst.0 })
}

#[derive(Debug)]
struct Energy(FundamentalVerticalMetric);

impl ScalarField for Energy {
    fn arity(&self) -> usize {
        self.0.dims.nvars()
    }

    fn eval(&self, args: &[TaylorScalar]) -> Result<TaylorScalar, EvalError> {
        let dims = self.0.dims;
        let JetDims { p, n } = dims;
        let m = p * n;
        let big = self.0.eval_taylor(args)?;
        let v = |aa: usize| &args[dims.v_index(aa % n, aa / n)];
        let mut acc = TaylorScalar::constant(0.0);
        for aa in 0..m {
            let row = smooth::sum((0..m).map(|bb| &big[aa * m + bb] * v(bb)));
            acc = acc + row * v(aa);
        }
        Ok(acc)
    }
}

/// `E_G = G^(μ)(ν)_(m)(r) x^m_μ x^r_ν`.
pub fn energy_lagrangian(big: &FundamentalVerticalMetric) -> Field {
    Arc::new(Energy(big.clone()))
}

/// Arguments at the base point of `args` with the fiber set to zero.
fn zero_fiber(args: &[TaylorScalar], dims: JetDims) -> Vec<TaylorScalar> {
    let mut out = args.to_vec();
    for k in dims.block(Block::Fiber) {
        out[k] = TaylorScalar::constant(0.0);
    }
    out
}

#[derive(Debug)]
enum FiberTerm {
    /// `F = E(t, x, 0)`
    Potential,
    /// `U^(α)_(i) = ∂E/∂x^i_α (t, x, 0)`
    Linear { alpha: usize, i: usize },
    /// `ε_ij = (1/p) ψ_αβ · ½ ∂²E/∂x^i_α ∂x^j_β (t, x, 0)`
    Factor { psi: MetricField, i: usize, j: usize },
}

#[derive(Debug)]
struct FiberCoefficient {
    e: Field,
    dims: JetDims,
    term: FiberTerm,
}

impl ScalarField for FiberCoefficient {
    fn arity(&self) -> usize {
        self.dims.nvars()
    }

    fn eval(&self, args: &[TaylorScalar]) -> Result<TaylorScalar, EvalError> {
        check_arity(self.arity(), args.len())?;
        let dims = self.dims;
        let base = zero_fiber(args, dims);
        match &self.term {
            FiberTerm::Potential => self.e.eval(&base),
            FiberTerm::Linear { alpha, i } => {
                Ok(smooth::probe(self.e.as_ref(), &base, &[dims.v_index(*i, *alpha)], 1)?.partial(&[0]))
            }
            FiberTerm::Factor { psi, i, j } => {
                let p = dims.p;
                let mut wrt: Vec<usize> = (0..p).map(|a| dims.v_index(*i, a)).collect();
                wrt.extend((0..p).map(|b| dims.v_index(*j, b)));
                let probed = smooth::probe(self.e.as_ref(), &base, &wrt, 2)?;
                let psi = psi.eval_taylor(args)?;
                let mut acc = TaylorScalar::constant(0.0);
                for a in 0..p {
                    for b in 0..p {
                        acc = acc + &psi[a * p + b] * probed.partial(&[a, p + b]);
                    }
                }
                Ok(acc * (0.5 / p as f64))
            }
        }
    }
}

/// `E = ψ^{αβ} ε_ij x^i_α x^j_β + U^(α)_(i) x^i_α + F`, recovered from `E`.
#[derive(Debug, Clone)]
pub struct RegularFactorization {
    /// Parametric metric `ε_ij(t, x)`.
    pub eps: MetricField,
    /// `u[α·n + i] = U^(α)_(i)(t, x)`.
    pub u: Vec<Field>,
    pub f: Field,
    /// Worst residual of the quadratic-exactness and product checks.
    pub worst_residual: f64,
}

/// `|E(t, x, w) − T₂(w)|`, where `T₂` is the second-order fiber Taylor
/// expansion of `E` about `(t, x, 0)`. The fiber of `base` is ignored.
pub fn quadratic_defect(e: &dyn ScalarField, base: &JetPoint, offset: &[f64]) -> Result<f64, ConnectionError> {
    let (value, expanded) = quadratic_check(e, base, offset)?;
    Ok((value - expanded).abs())
}

fn quadratic_check(e: &dyn ScalarField, base: &JetPoint, offset: &[f64]) -> Result<(f64, f64), ConnectionError> {
    let dims = base.dims();
    let zero = JetPoint::base(dims, base.t.clone(), base.x.clone()).expect("dims checked");
    let seeds: Vec<usize> = dims.block(Block::Fiber).collect();
    if offset.len() != seeds.len() {
        return Err(ConnectionError::Invalid("fiber offset has the wrong length".into()));
    }
    let taylor = smooth::eval_seeded(e, &zero.to_flat(), &seeds, 2)?;
    let mut expanded = taylor.value();
    for (k, wk) in offset.iter().enumerate() {
        expanded += taylor.partial(&[k]) * wk;
        for (l, wl) in offset.iter().enumerate() {
            expanded += 0.5 * taylor.partial(&[k, l]) * wk * wl;
        }
    }
    let moved = zero.with_fiber(offset.to_vec()).map_err(|err| ConnectionError::Invalid(err.to_string()))?;
    let value = e.eval(&flat_args(&moved))?.value();
    Ok((value, expanded))
}

const OFFSET_SCALES: [f64; 3] = [0.5, 1.0, 2.0];

/// Decide whether `E` is a Kronecker ψ-regular Lagrangian and, if so,
/// recover `(ε, U, F)`.
///
/// Clause (a) compares `E` with its quadratic fiber expansion at seeded
/// random offsets of sup-norm 0.5, 1 and 2 (relative to `max(1, |E|)`);
/// clause (b) trace-extracts `ε` from the quadratic part and checks the
/// product residual relative to its sup-norm.
pub fn psi_regularity(
    e: &Field,
    psi: &MetricField,
    samples: &[JetPoint],
    tol: f64,
    seed: u64,
) -> Result<RegularFactorization, ConnectionError> {
    require_kind(psi, &[MetricKind::Temporal], "ψ")?;
    let dims = psi.dims();
    let JetDims { p, n } = dims;
    if e.arity() != dims.nvars() {
        return Err(ConnectionError::Invalid("energy arity does not match ψ's jet layout".into()));
    }
    if samples.is_empty() {
        return Err(GeometryError::NoSamples.into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let seeds: Vec<usize> = dims.block(Block::Fiber).collect();
    let mut worst_a = (0.0_f64, Vec::new());
    let mut worst_b = (0.0_f64, Vec::new());
    let mut degenerate = None;
    for jp in samples {
        let base = JetPoint::base(dims, jp.t.clone(), jp.x.clone()).expect("dims checked");
        let flat = base.to_flat();
        for &scale in &OFFSET_SCALES {
            let w: Vec<f64> = (0..seeds.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let norm = w.iter().map(|c: &f64| c.abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
            let offset: Vec<f64> = w.iter().map(|c| c * scale / norm).collect();
            let (value, expanded) = quadratic_check(e.as_ref(), &base, &offset)?;
            let rel = (value - expanded).abs() / value.abs().max(1.0);
            if rel > worst_a.0 {
                worst_a = (rel, flat.clone());
            }
        }

        let taylor = smooth::eval_seeded(e.as_ref(), &flat, &seeds, 2)?;
        // Q(α, β, i, j) = ½ ∂²E/∂x^i_α ∂x^j_β
        let q = |a: usize, b: usize, i: usize, j: usize| 0.5 * taylor.partial(&[i * p + a, j * p + b]);
        let psi_m = psi.eval_checked(&base)?;
        let (eps, rel) = factor_at(&q, &psi_m, dims).ok_or_else(|| GeometryError::SingularMetric {
            point: flat.clone(),
            det: psi_m.determinant(),
        })?;
        if rel > worst_b.0 {
            worst_b = (rel, flat.clone());
        }
        if degenerate.is_none() && !is_nondegenerate(&eps) {
            degenerate = Some(flat);
        }
    }
    if worst_a.0 > tol {
        return Err(ConnectionError::NotRegular {
            clause: RegularityClause::NonQuadratic,
            residual: worst_a.0,
            point: worst_a.1,
        });
    }
    if worst_b.0 > tol {
        return Err(ConnectionError::NotRegular {
            clause: RegularityClause::NonProduct,
            residual: worst_b.0,
            point: worst_b.1,
        });
    }
    if let Some(point) = degenerate {
        return Err(ConnectionError::DegenerateFactor { point });
    }
    let coefficient = |term| Arc::new(FiberCoefficient { e: e.clone(), dims, term }) as Field;
    let eps = MetricField::from_fn(MetricKind::Parametric, dims, |i, j| {
        coefficient(FiberTerm::Factor { psi: psi.clone(), i, j })
    });
    let u = (0..p * n).map(|k| coefficient(FiberTerm::Linear { alpha: k / n, i: k % n })).collect();
    Ok(RegularFactorization {
        eps,
        u,
        f: coefficient(FiberTerm::Potential),
        worst_residual: worst_a.0.max(worst_b.0),
    })
}

/// Sampling and tolerance used by [`canonical_gml`] for the regularity test.
#[derive(Debug, Clone)]
pub struct GmlOptions {
    pub samples: Vec<JetPoint>,
    pub tol: f64,
    pub seed: u64,
}

/// Canonical connection of a generalized multi-time Lagrange space.
///
/// Temporal components come from `h`. Spatial components come from the
/// ψ-regular factorization of the energy of `G` when it exists, otherwise
/// from the Christoffel symbols of `fallback`.
pub fn canonical_gml(
    big: &FundamentalVerticalMetric,
    h: &MetricField,
    psi: &MetricField,
    fallback: Option<&MetricField>,
    options: &GmlOptions,
) -> Result<NonlinearConnection, ConnectionError> {
    require_kind(h, &[MetricKind::Temporal], "h")?;
    let dims = super::require_same_dims(h, psi)?;
    if big.dims() != dims {
        return Err(ConnectionError::Invalid("vertical metric and h disagree on dims".into()));
    }
    if let Some(phi) = fallback {
        require_kind(phi, &[MetricKind::Spatial], "fallback φ")?;
        super::require_same_dims(h, phi)?;
    }
    let energy = energy_lagrangian(big);
    let (provenance, spatial) = match psi_regularity(&energy, psi, &options.samples, options.tol, options.seed) {
        Ok(fac) => (Provenance::GmlRegular, AffineSpatial::Parametric(fac.eps)),
        Err(err @ (ConnectionError::NotRegular { .. } | ConnectionError::DegenerateFactor { .. })) => match fallback {
            Some(phi) => (Provenance::GmlApriori, AffineSpatial::Christoffel(phi.clone())),
            None => {
                return Err(ConnectionError::NoSpatialComponents {
                    reason: format!("vertical metric is not ψ-regular ({err}) and no fallback metric was given"),
                })
            }
        },
        Err(err) => return Err(err),
    };
    let source = AffineConnection { h: h.clone(), spatial };
    Ok(NonlinearConnection::new(dims, provenance, Arc::new(source)))
}
