//! Nonlinear connections on J¹(T, M) and their canonical constructions.
//!
//! A connection is a pair of coefficient families: temporal
//! `M^(i)_(α)β` and spatial `N^(i)_(α)j`. Every connection here can report
//! its coefficients as Taylor expansions in the fiber coordinates `x^i_α`,
//! which is what the torsion and affinity checks differentiate.

mod lagrangian;
mod vertical;

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::exprlang::{self, ExprError};
use crate::geometry::{self, Christoffel, GeometryError, MetricField, MetricKind};
use crate::jet::{JetDims, JetPoint};
use crate::smooth::{EvalError, Field, Space, TaylorScalar};

pub use lagrangian::{
    canonical_ml_p1, canonical_ml_pge2, curl_tensor, CurlTensor, QuadraticLagrangian, Semispray,
    semispray_p1,
};
pub use vertical::{
    canonical_gml, energy_lagrangian, fundamental_metric, kronecker_factor, psi_regularity,
    quadratic_defect, FundamentalVerticalMetric, GmlOptions, KroneckerFactor, RegularFactorization,
    VerticalArray,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegularityClause {
    /// The energy is not exactly quadratic in the fiber coordinates.
    NonQuadratic,
    /// The quadratic part does not factor as a Kronecker product.
    NonProduct,
}

impl fmt::Display for RegularityClause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RegularityClause::NonQuadratic => "non-quadratic",
            RegularityClause::NonProduct => "non-product",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConnectionError {
    #[error("NotRegular ({clause}): residual {residual:e} at {point:?}")]
    NotRegular {
        clause: RegularityClause,
        residual: f64,
        point: Vec<f64>,
    },
    #[error("DegenerateFactor: spatial factor has rank < n at {point:?}")]
    DegenerateFactor { point: Vec<f64> },
    #[error("NoSpatialComponents: {reason}")]
    NoSpatialComponents { reason: String },
    #[error("WrongArity: {construction} requires {requirement}, got p = {p}")]
    WrongArity {
        construction: &'static str,
        requirement: &'static str,
        p: usize,
    },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Expr(#[from] ExprError),
}

/// Coefficient arrays at one jet point.
///
/// `temporal(i, α, β) = M^(i)_(α)β` and `spatial(i, α, j) = N^(i)_(α)j`.
#[derive(Debug, Clone, PartialEq)]
pub struct Coefficients<T> {
    dims: JetDims,
    temporal: Vec<T>,
    spatial: Vec<T>,
}

impl<T> Coefficients<T> {
    pub fn from_fn(
        dims: JetDims,
        mut m: impl FnMut(usize, usize, usize) -> T,
        mut n: impl FnMut(usize, usize, usize) -> T,
    ) -> Self {
        let (pp, nn) = (dims.p, dims.n);
        let mut temporal = Vec::with_capacity(nn * pp * pp);
        let mut spatial = Vec::with_capacity(nn * pp * nn);
        for i in 0..nn {
            for a in 0..pp {
                for b in 0..pp {
                    temporal.push(m(i, a, b));
                }
                for j in 0..nn {
                    spatial.push(n(i, a, j));
                }
            }
        }
        Coefficients { dims, temporal, spatial }
    }

    pub fn dims(&self) -> JetDims {
        self.dims
    }

    fn t_idx(&self, i: usize, a: usize, b: usize) -> usize {
        (i * self.dims.p + a) * self.dims.p + b
    }

    fn s_idx(&self, i: usize, a: usize, j: usize) -> usize {
        (i * self.dims.p + a) * self.dims.n + j
    }

    pub fn temporal_ref(&self, i: usize, a: usize, b: usize) -> &T {
        &self.temporal[self.t_idx(i, a, b)]
    }

    pub fn spatial_ref(&self, i: usize, a: usize, j: usize) -> &T {
        &self.spatial[self.s_idx(i, a, j)]
    }

    pub fn temporal_mut(&mut self, i: usize, a: usize, b: usize) -> &mut T {
        let k = self.t_idx(i, a, b);
        &mut self.temporal[k]
    }

    pub fn spatial_mut(&mut self, i: usize, a: usize, j: usize) -> &mut T {
        let k = self.s_idx(i, a, j);
        &mut self.spatial[k]
    }

    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> Coefficients<U> {
        Coefficients {
            dims: self.dims,
            temporal: self.temporal.iter().map(&mut f).collect(),
            spatial: self.spatial.iter().map(&mut f).collect(),
        }
    }

    pub fn temporal_slice(&self) -> &[T] {
        &self.temporal
    }

    pub fn spatial_slice(&self) -> &[T] {
        &self.spatial
    }
}

impl Coefficients<f64> {
    pub fn zeros(dims: JetDims) -> Self {
        Coefficients::from_fn(dims, |_, _, _| 0.0, |_, _, _| 0.0)
    }

    pub fn temporal(&self, i: usize, a: usize, b: usize) -> f64 {
        *self.temporal_ref(i, a, b)
    }

    pub fn spatial(&self, i: usize, a: usize, j: usize) -> f64 {
        *self.spatial_ref(i, a, j)
    }

    /// Largest absolute entry-wise difference over both families.
    pub fn max_abs_diff(&self, other: &Coefficients<f64>) -> f64 {
        self.temporal
            .iter()
            .zip(&other.temporal)
            .chain(self.spatial.iter().zip(&other.spatial))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.temporal
            .iter()
            .chain(&self.spatial)
            .map(|a| a.abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    GammaZero,
    MlP1,
    MlPge2,
    GmlRegular,
    GmlApriori,
    User,
}

impl Provenance {
    pub fn tag(&self) -> &'static str {
        match self {
            Provenance::GammaZero => "gamma-zero",
            Provenance::MlP1 => "ML-p1",
            Provenance::MlPge2 => "ML-pge2",
            Provenance::GmlRegular => "GML-regular",
            Provenance::GmlApriori => "GML-apriori",
            Provenance::User => "user",
        }
    }

    /// Constructions whose spatial coefficients are affine in the fiber.
    pub fn is_fiber_affine(&self) -> bool {
        !matches!(self, Provenance::MlP1 | Provenance::User)
    }
}

/// Source of connection coefficients at a jet point.
pub trait CoefficientSource: Send + Sync + fmt::Debug {
    /// Coefficients expanded to `order` in the fiber coordinates, as
    /// scalars over `Space::get(n·p, order)` with variable `i·p + α`
    /// standing for `x^i_α`. Base coordinates are held fixed.
    fn fiber_jet(&self, jp: &JetPoint, order: usize) -> Result<Coefficients<TaylorScalar>, ConnectionError>;
}

/// Fiber coordinates of `jp` as Taylor variables of the given order.
pub fn fiber_variables(jp: &JetPoint, order: usize) -> Vec<TaylorScalar> {
    let len = jp.dims().fiber_len();
    if order == 0 {
        return jp.v.iter().map(|&c| TaylorScalar::constant(c)).collect();
    }
    let space = Space::get(len, order);
    (0..len).map(|k| TaylorScalar::variable(&space, k, jp.v[k])).collect()
}

/// A nonlinear connection: immutable, cheap to clone, safe to share.
#[derive(Debug, Clone)]
pub struct NonlinearConnection {
    dims: JetDims,
    provenance: Provenance,
    source: Arc<dyn CoefficientSource>,
}

impl NonlinearConnection {
    pub fn new(dims: JetDims, provenance: Provenance, source: Arc<dyn CoefficientSource>) -> Self {
        NonlinearConnection { dims, provenance, source }
    }

    pub fn dims(&self) -> JetDims {
        self.dims
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    fn check(&self, jp: &JetPoint) -> Result<(), ConnectionError> {
        if jp.dims() != self.dims {
            return Err(ConnectionError::Invalid(format!(
                "connection has dims {:?}, point has {:?}",
                self.dims,
                jp.dims()
            )));
        }
        Ok(())
    }

    pub fn evaluate(&self, jp: &JetPoint) -> Result<Coefficients<f64>, ConnectionError> {
        self.check(jp)?;
        Ok(self.source.fiber_jet(jp, 0)?.map(|c| c.value()))
    }

    pub fn fiber_jet(&self, jp: &JetPoint, order: usize) -> Result<Coefficients<TaylorScalar>, ConnectionError> {
        self.check(jp)?;
        self.source.fiber_jet(jp, order)
    }

    /// The connection with all coefficients zero.
    pub fn zero(dims: JetDims) -> Self {
        #[derive(Debug)]
        struct Zero;
        impl CoefficientSource for Zero {
            fn fiber_jet(&self, jp: &JetPoint, _order: usize) -> Result<Coefficients<TaylorScalar>, ConnectionError> {
                let z = TaylorScalar::constant(0.0);
                Ok(Coefficients::from_fn(jp.dims(), |_, _, _| z.clone(), |_, _, _| z.clone()))
            }
        }
        NonlinearConnection::new(dims, Provenance::User, Arc::new(Zero))
    }

    /// A user connection from jet-layout fields; `m[(i·p + α)·p + β]` and
    /// `n[(i·p + α)·n + j]`.
    pub fn from_fields(dims: JetDims, m: Vec<Field>, n: Vec<Field>) -> Result<Self, ConnectionError> {
        let (pp, nn) = (dims.p, dims.n);
        if m.len() != nn * pp * pp || n.len() != nn * pp * nn {
            return Err(ConnectionError::Invalid(format!(
                "expected {} temporal and {} spatial components",
                nn * pp * pp,
                nn * pp * nn
            )));
        }
        if m.iter().chain(&n).any(|f| f.arity() != dims.nvars()) {
            return Err(ConnectionError::Invalid("component arity must match the jet layout".into()));
        }
        Ok(NonlinearConnection::new(dims, Provenance::User, Arc::new(UserSource { m, n })))
    }

    /// A user connection from expression strings in the same layout as
    /// [`NonlinearConnection::from_fields`].
    pub fn from_sources<S: AsRef<str>>(dims: JetDims, m: &[S], n: &[S]) -> Result<Self, ConnectionError> {
        let parse = |srcs: &[S]| -> Result<Vec<Field>, ConnectionError> {
            srcs.iter()
                .map(|s| Ok(Arc::new(exprlang::parse(s.as_ref(), dims)?) as Field))
                .collect()
        };
        NonlinearConnection::from_fields(dims, parse(m)?, parse(n)?)
    }
}

#[derive(Debug)]
struct UserSource {
    m: Vec<Field>,
    n: Vec<Field>,
}

impl CoefficientSource for UserSource {
    fn fiber_jet(&self, jp: &JetPoint, order: usize) -> Result<Coefficients<TaylorScalar>, ConnectionError> {
        let dims = jp.dims();
        let mut args: Vec<TaylorScalar> = jp
            .t
            .iter()
            .chain(&jp.x)
            .map(|&c| TaylorScalar::constant(c))
            .collect();
        args.extend(fiber_variables(jp, order));
        let m = self.m.iter().map(|f| f.eval(&args)).collect::<Result<Vec<_>, _>>()?;
        let n = self.n.iter().map(|f| f.eval(&args)).collect::<Result<Vec<_>, _>>()?;
        let (pp, nn) = (dims.p, dims.n);
        Ok(Coefficients::from_fn(
            dims,
            |i, a, b| m[(i * pp + a) * pp + b].clone(),
            |i, a, j| n[(i * pp + a) * nn + j].clone(),
        ))
    }
}

/// Spatial coefficients of the form `N^(i)_(α)j = S^i_jk x^k_α + C^i_(α)j`,
/// with `S` and `C` depending on the base point only.
#[derive(Debug)]
pub(crate) enum AffineSpatial {
    /// `S` = Christoffel symbols of a spatial metric, `C = 0`.
    Christoffel(MetricField),
    /// Multi-time quadratic Lagrangian, p ≥ 2.
    Quadratic(Arc<QuadraticLagrangian>),
    /// `S` = parametric Christoffel symbols of `ε`, `C = ½ ε^{im} ∂_α ε_jm`.
    Parametric(MetricField),
}

/// Temporal part `M^(i)_(α)β = −H^γ_αβ x^i_γ` plus an affine spatial part.
#[derive(Debug)]
pub(crate) struct AffineConnection {
    pub h: MetricField,
    pub spatial: AffineSpatial,
}

/// `½ m^{ik} ∂_α m_jk` for a parametric metric.
pub(crate) fn time_derivative_term(
    m: &MetricField,
    jp: &JetPoint,
) -> Result<(Christoffel, DMatrix<f64>, Vec<DMatrix<f64>>), ConnectionError> {
    let base = JetPoint::base(jp.dims(), jp.t.clone(), jp.x.clone()).expect("dims checked");
    let (value, dt) = m.derivatives(&base, crate::jet::Block::Time)?;
    let inv = geometry::invert_symmetric(&value).ok_or_else(|| GeometryError::SingularMetric {
        point: base.to_flat(),
        det: value.determinant(),
    })?;
    let chris = geometry::christoffel(m, &base)?;
    Ok((chris, inv, dt))
}

impl AffineConnection {
    /// Slope `S` (Christoffel-like) and offset `C[(α·n + i)·n + j]`.
    fn spatial_parts(&self, jp: &JetPoint) -> Result<(Christoffel, Vec<f64>), ConnectionError> {
        let dims = jp.dims();
        let (p, n) = (dims.p, dims.n);
        let mut offset = vec![0.0; p * n * n];
        let slope = match &self.spatial {
            AffineSpatial::Christoffel(phi) => {
                let base = JetPoint::base(dims, jp.t.clone(), jp.x.clone()).expect("dims checked");
                geometry::christoffel(phi, &base)?
            }
            AffineSpatial::Parametric(eps) => {
                let (chris, inv, dt) = time_derivative_term(eps, jp)?;
                for a in 0..p {
                    for i in 0..n {
                        for j in 0..n {
                            let s: f64 = (0..n).map(|m| inv[(i, m)] * dt[a][(j, m)]).sum();
                            offset[(a * n + i) * n + j] = 0.5 * s;
                        }
                    }
                }
                chris
            }
            AffineSpatial::Quadratic(ql) => {
                let (chris, offsets) = ql.spatial_parts(jp)?;
                offset = offsets;
                chris
            }
        };
        Ok((slope, offset))
    }
}

impl CoefficientSource for AffineConnection {
    fn fiber_jet(&self, jp: &JetPoint, order: usize) -> Result<Coefficients<TaylorScalar>, ConnectionError> {
        let dims = jp.dims();
        let (p, n) = (dims.p, dims.n);
        let base = JetPoint::base(dims, jp.t.clone(), jp.x.clone()).expect("dims checked");
        let hc = geometry::christoffel(&self.h, &base)?;
        let (slope, offset) = self.spatial_parts(jp)?;
        let v = fiber_variables(jp, order);
        let vel = |i: usize, a: usize| &v[i * p + a];
        Ok(Coefficients::from_fn(
            dims,
            |i, a, b| {
                let mut acc = TaylorScalar::constant(0.0);
                for g in 0..p {
                    acc = acc - vel(i, g) * hc.get(g, a, b);
                }
                acc
            },
            |i, a, j| {
                let mut acc = TaylorScalar::constant(offset[(a * n + i) * n + j]);
                for k in 0..n {
                    acc = acc + vel(k, a) * slope.get(i, j, k);
                }
                acc
            },
        ))
    }
}

fn require_kind(m: &MetricField, kinds: &[MetricKind], what: &str) -> Result<(), ConnectionError> {
    if !kinds.contains(&m.kind()) {
        return Err(ConnectionError::Invalid(format!(
            "{what} must be one of {kinds:?}, got {:?}",
            m.kind()
        )));
    }
    Ok(())
}

fn require_same_dims(a: &MetricField, b: &MetricField) -> Result<JetDims, ConnectionError> {
    if a.dims() != b.dims() {
        return Err(ConnectionError::Invalid(format!(
            "metrics disagree on dims: {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    Ok(a.dims())
}

/// Canonical connection of a temporal metric `h` and a spatial metric `φ`:
/// `M^(i)_(α)β = −H^γ_αβ x^i_γ`, `N^(i)_(α)j = γ^i_jk x^k_α`.
///
/// Coefficients are evaluated lazily; singular metrics surface on evaluation.
pub fn gamma_zero(h: &MetricField, phi: &MetricField) -> Result<NonlinearConnection, ConnectionError> {
    require_kind(h, &[MetricKind::Temporal], "h")?;
    require_kind(phi, &[MetricKind::Spatial], "φ")?;
    let dims = require_same_dims(h, phi)?;
    let source = AffineConnection { h: h.clone(), spatial: AffineSpatial::Christoffel(phi.clone()) };
    Ok(NonlinearConnection::new(dims, Provenance::GammaZero, Arc::new(source)))
}

/// Outcome of [`torsion_free_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct TorsionReport {
    pub passed: bool,
    /// Largest `|∂N^(i)_(α)j/∂x^k_γ − ∂N^(i)_(α)k/∂x^j_γ|` over samples.
    pub worst: f64,
    pub worst_point: Option<JetPoint>,
    /// `(i, α, j, k, γ)` of the worst violation.
    pub worst_index: Option<[usize; 5]>,
}

/// Check the fiber-derivative symmetry
/// `∂N^(i)_(α)j/∂x^k_γ = ∂N^(i)_(α)k/∂x^j_γ` at every sample.
pub fn torsion_free_check(
    conn: &NonlinearConnection,
    samples: &[JetPoint],
    tol: f64,
) -> Result<TorsionReport, ConnectionError> {
    let dims = conn.dims();
    let (p, n) = (dims.p, dims.n);
    let mut report = TorsionReport { passed: true, worst: 0.0, worst_point: None, worst_index: None };
    for jp in samples {
        let jet = conn.fiber_jet(jp, 1)?;
        for i in 0..n {
            for a in 0..p {
                for j in 0..n {
                    for k in j + 1..n {
                        for g in 0..p {
                            let lhs = jet.spatial_ref(i, a, j).partial(&[k * p + g]);
                            let rhs = jet.spatial_ref(i, a, k).partial(&[j * p + g]);
                            let dev = (lhs - rhs).abs();
                            if dev > report.worst || report.worst_point.is_none() {
                                report.worst = dev.max(report.worst);
                                if dev >= report.worst {
                                    report.worst_point = Some(jp.clone());
                                    report.worst_index = Some([i, a, j, k, g]);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    report.passed = report.worst <= tol;
    Ok(report)
}

/// Largest second fiber derivative of the spatial coefficients over the
/// samples; zero exactly when `N` is affine in the fiber coordinates.
pub fn fiber_nonlinearity(conn: &NonlinearConnection, samples: &[JetPoint]) -> Result<f64, ConnectionError> {
    let dims = conn.dims();
    let len = dims.fiber_len();
    let mut worst: f64 = 0.0;
    for jp in samples {
        let jet = conn.fiber_jet(jp, 2)?;
        for c in jet.spatial_slice() {
            for u in 0..len {
                for w in u..len {
                    worst = worst.max(c.partial(&[u, w]).abs());
                }
            }
        }
    }
    Ok(worst)
}
