//! Points of the first jet bundle, product coordinate changes, their
//! prolongation, and the transformation laws of nonlinear connections.

mod pushforward;
mod sampling;

use std::fmt;
use std::ops::Range;
use std::sync::Arc;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::connection::{Coefficients, ConnectionError, NonlinearConnection};
use crate::exprlang::{self, Expr, ExprError};
use crate::smooth::{self, EvalError, Field, ScalarField, Space, TaylorScalar};

pub use pushforward::{push_covector, push_metric, push_scalar, pull_back};
pub use sampling::JetBox;

/// Temporal dimension `p` and spatial dimension `n`.
///
/// Every field on the jet bundle uses the flat variable layout
/// `t_1..t_p, x_1..x_n, v^1_1..v^1_p, .., v^n_1..v^n_p`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct JetDims {
    pub p: usize,
    pub n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    Time,
    Space,
    Fiber,
}

impl JetDims {
    pub const fn new(p: usize, n: usize) -> Self {
        JetDims { p, n }
    }

    pub fn nvars(&self) -> usize {
        self.p + self.n + self.n * self.p
    }

    pub fn t_index(&self, a: usize) -> usize {
        debug_assert!(a < self.p);
        a
    }

    pub fn x_index(&self, i: usize) -> usize {
        debug_assert!(i < self.n);
        self.p + i
    }

    pub fn v_index(&self, i: usize, a: usize) -> usize {
        debug_assert!(i < self.n && a < self.p);
        self.p + self.n + i * self.p + a
    }

    pub fn block(&self, block: Block) -> Range<usize> {
        match block {
            Block::Time => 0..self.p,
            Block::Space => self.p..self.p + self.n,
            Block::Fiber => self.p + self.n..self.nvars(),
        }
    }

    /// Number of fiber coordinates `n·p`.
    pub fn fiber_len(&self) -> usize {
        self.n * self.p
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum JetError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("non-finite jet coordinate")]
    NonFinite,
    #[error("{map} Jacobian is singular at {point:?}")]
    SingularJacobian { map: &'static str, point: Vec<f64> },
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error(transparent)]
    Connection(#[from] Box<ConnectionError>),
}

impl From<ConnectionError> for JetError {
    fn from(e: ConnectionError) -> Self {
        JetError::Connection(Box::new(e))
    }
}

/// A point `(t^α, x^i, x^i_α)` of J¹(T, M).
#[derive(Debug, Clone, PartialEq)]
pub struct JetPoint {
    dims: JetDims,
    pub t: Vec<f64>,
    pub x: Vec<f64>,
    /// `v[i·p + α] = x^i_α`.
    pub v: Vec<f64>,
}

impl JetPoint {
    pub fn new(dims: JetDims, t: Vec<f64>, x: Vec<f64>, v: Vec<f64>) -> Result<Self, JetError> {
        if t.len() != dims.p || x.len() != dims.n || v.len() != dims.fiber_len() {
            return Err(JetError::Dimension(format!(
                "expected (p, n) = ({}, {}), got |t|={}, |x|={}, |v|={}",
                dims.p,
                dims.n,
                t.len(),
                x.len(),
                v.len()
            )));
        }
        if !t.iter().chain(&x).chain(&v).all(|c| c.is_finite()) {
            return Err(JetError::NonFinite);
        }
        Ok(JetPoint { dims, t, x, v })
    }

    /// Base point `(t, x)` with vanishing partial velocities.
    pub fn base(dims: JetDims, t: Vec<f64>, x: Vec<f64>) -> Result<Self, JetError> {
        let v = vec![0.0; dims.fiber_len()];
        JetPoint::new(dims, t, x, v)
    }

    pub fn from_flat(dims: JetDims, flat: &[f64]) -> Result<Self, JetError> {
        if flat.len() != dims.nvars() {
            return Err(JetError::Dimension(format!(
                "expected {} coordinates, got {}",
                dims.nvars(),
                flat.len()
            )));
        }
        let (t, rest) = flat.split_at(dims.p);
        let (x, v) = rest.split_at(dims.n);
        JetPoint::new(dims, t.to_vec(), x.to_vec(), v.to_vec())
    }

    pub fn dims(&self) -> JetDims {
        self.dims
    }

    pub fn vel(&self, i: usize, a: usize) -> f64 {
        self.v[i * self.dims.p + a]
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dims.nvars());
        out.extend_from_slice(&self.t);
        out.extend_from_slice(&self.x);
        out.extend_from_slice(&self.v);
        out
    }

    /// Copy with the fiber coordinates replaced.
    pub fn with_fiber(&self, v: Vec<f64>) -> Result<Self, JetError> {
        JetPoint::new(self.dims, self.t.clone(), self.x.clone(), v)
    }

    pub fn max_abs_diff(&self, other: &JetPoint) -> f64 {
        self.to_flat()
            .iter()
            .zip(other.to_flat())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// A product change of coordinates `t̃ = T(t)`, `x̃ = X(x)` with declared
/// inverses. Temporal maps are fields of arity `p`, spatial maps of arity `n`.
#[derive(Debug, Clone)]
pub struct CoordinateChange {
    dims: JetDims,
    temporal: Vec<Field>,
    temporal_inverse: Vec<Field>,
    spatial: Vec<Field>,
    spatial_inverse: Vec<Field>,
}

fn check_component_arity(fields: &[Field], count: usize, arity: usize, what: &str) -> Result<(), JetError> {
    if fields.len() != count || fields.iter().any(|f| f.arity() != arity) {
        return Err(JetError::Dimension(format!(
            "{what}: expected {count} components of arity {arity}"
        )));
    }
    Ok(())
}

impl CoordinateChange {
    pub fn new(
        dims: JetDims,
        temporal: Vec<Field>,
        temporal_inverse: Vec<Field>,
        spatial: Vec<Field>,
        spatial_inverse: Vec<Field>,
    ) -> Result<Self, JetError> {
        check_component_arity(&temporal, dims.p, dims.p, "temporal map")?;
        check_component_arity(&temporal_inverse, dims.p, dims.p, "temporal inverse")?;
        check_component_arity(&spatial, dims.n, dims.n, "spatial map")?;
        check_component_arity(&spatial_inverse, dims.n, dims.n, "spatial inverse")?;
        Ok(CoordinateChange { dims, temporal, temporal_inverse, spatial, spatial_inverse })
    }

    /// Build from expression strings: temporal maps use `t1..tp`, spatial
    /// maps use `x1..xn`.
    pub fn from_sources<S: AsRef<str>>(
        dims: JetDims,
        temporal: &[S],
        temporal_inverse: &[S],
        spatial: &[S],
        spatial_inverse: &[S],
    ) -> Result<Self, JetError> {
        let tdims = JetDims::new(dims.p, 0);
        let xdims = JetDims::new(0, dims.n);
        let parse = |srcs: &[S], d: JetDims| -> Result<Vec<Field>, JetError> {
            srcs.iter()
                .map(|s| Ok(Arc::new(exprlang::parse(s.as_ref(), d)?) as Field))
                .collect()
        };
        CoordinateChange::new(
            dims,
            parse(temporal, tdims)?,
            parse(temporal_inverse, tdims)?,
            parse(spatial, xdims)?,
            parse(spatial_inverse, xdims)?,
        )
    }

    pub fn identity(dims: JetDims) -> Self {
        let coord = |k: usize, arity: usize| -> Field {
            smooth::field(arity, "identity", move |a: &[TaylorScalar]| a[k].clone())
        };
        let t: Vec<Field> = (0..dims.p).map(|a| coord(a, dims.p)).collect();
        let x: Vec<Field> = (0..dims.n).map(|i| coord(i, dims.n)).collect();
        CoordinateChange {
            dims,
            temporal: t.clone(),
            temporal_inverse: t,
            spatial: x.clone(),
            spatial_inverse: x,
        }
    }

    pub fn dims(&self) -> JetDims {
        self.dims
    }

    pub fn temporal(&self) -> &[Field] {
        &self.temporal
    }

    pub fn spatial(&self) -> &[Field] {
        &self.spatial
    }

    pub fn temporal_inverse(&self) -> &[Field] {
        &self.temporal_inverse
    }

    pub fn spatial_inverse(&self) -> &[Field] {
        &self.spatial_inverse
    }

    /// The change with forward and inverse maps swapped.
    pub fn inverse(&self) -> CoordinateChange {
        CoordinateChange {
            dims: self.dims,
            temporal: self.temporal_inverse.clone(),
            temporal_inverse: self.temporal.clone(),
            spatial: self.spatial_inverse.clone(),
            spatial_inverse: self.spatial.clone(),
        }
    }

    /// `outer ∘ self`: apply `self` first, then `outer`.
    pub fn then(&self, outer: &CoordinateChange) -> CoordinateChange {
        CoordinateChange {
            dims: self.dims,
            temporal: compose(&outer.temporal, &self.temporal),
            temporal_inverse: compose(&self.temporal_inverse, &outer.temporal_inverse),
            spatial: compose(&outer.spatial, &self.spatial),
            spatial_inverse: compose(&self.spatial_inverse, &outer.spatial_inverse),
        }
    }

    pub fn map_time(&self, t: &[f64]) -> Result<Vec<f64>, JetError> {
        eval_all(&self.temporal, t)
    }

    pub fn map_space(&self, x: &[f64]) -> Result<Vec<f64>, JetError> {
        eval_all(&self.spatial, x)
    }

    /// `∂T^μ/∂t^α` as a `p×p` matrix (row μ).
    pub fn temporal_jacobian(&self, t: &[f64]) -> Result<DMatrix<f64>, JetError> {
        jacobian(&self.temporal, t)
    }

    /// `∂X^j/∂x^k` as an `n×n` matrix (row j).
    pub fn spatial_jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>, JetError> {
        jacobian(&self.spatial, x)
    }
}

#[derive(Debug)]
struct Composed {
    outer: Field,
    inner: Vec<Field>,
}

impl ScalarField for Composed {
    fn arity(&self) -> usize {
        self.inner[0].arity()
    }

    fn eval(&self, args: &[TaylorScalar]) -> Result<TaylorScalar, EvalError> {
        let mid = self
            .inner
            .iter()
            .map(|f| f.eval(args))
            .collect::<Result<Vec<_>, _>>()?;
        self.outer.eval(&mid)
    }
}

fn compose(outer: &[Field], inner: &[Field]) -> Vec<Field> {
    if inner.is_empty() {
        return outer.to_vec();
    }
    outer
        .iter()
        .map(|o| Arc::new(Composed { outer: o.clone(), inner: inner.to_vec() }) as Field)
        .collect()
}

fn eval_all(fields: &[Field], at: &[f64]) -> Result<Vec<f64>, JetError> {
    let args: Vec<TaylorScalar> = at.iter().map(|&c| TaylorScalar::constant(c)).collect();
    fields
        .iter()
        .map(|f| Ok(f.eval(&args)?.value()))
        .collect()
}

fn jacobian(fields: &[Field], at: &[f64]) -> Result<DMatrix<f64>, JetError> {
    let d = at.len();
    let seeds: Vec<usize> = (0..d).collect();
    let mut jac = DMatrix::zeros(fields.len(), d);
    for (r, f) in fields.iter().enumerate() {
        let e = smooth::eval_seeded(f.as_ref(), at, &seeds, 1)?;
        for c in 0..d {
            jac[(r, c)] = e.partial(&[c]);
        }
    }
    Ok(jac)
}

/// Scale-aware nondegeneracy test shared by metrics and Jacobians:
/// `|det| ≥ 1e-12 · (max |entry|)^d`.
pub(crate) fn is_nondegenerate(m: &DMatrix<f64>) -> bool {
    let d = m.nrows();
    if d == 0 {
        return true;
    }
    let scale = m.iter().map(|c| c.abs()).fold(0.0, f64::max);
    if scale == 0.0 || !scale.is_finite() {
        return false;
    }
    m.determinant().abs() >= 1e-12 * scale.powi(d as i32)
}

fn checked_inverse(m: &DMatrix<f64>, map: &'static str, point: &[f64]) -> Result<DMatrix<f64>, JetError> {
    if !is_nondegenerate(m) {
        return Err(JetError::SingularJacobian { map, point: point.to_vec() });
    }
    m.clone()
        .try_inverse()
        .ok_or_else(|| JetError::SingularJacobian { map, point: point.to_vec() })
}

/// Prolongation of a product coordinate change to the jet bundle:
/// `x̃^i_α = (∂x̃^i/∂x^j)(∂t^β/∂t̃^α) x^j_β`, with `∂t/∂t̃` obtained by
/// inverting the forward temporal Jacobian.
pub fn prolong(change: &CoordinateChange, jp: &JetPoint) -> Result<JetPoint, JetError> {
    let dims = check_dims(change, jp)?;
    let (p, n) = (dims.p, dims.n);
    let jt = change.temporal_jacobian(&jp.t)?;
    let jx = change.spatial_jacobian(&jp.x)?;
    let jt_inv = checked_inverse(&jt, "temporal", &jp.t)?;
    checked_inverse(&jx, "spatial", &jp.x)?;
    let mut v = vec![0.0; n * p];
    for i in 0..n {
        for a in 0..p {
            let mut acc = 0.0;
            for j in 0..n {
                for b in 0..p {
                    acc += jx[(i, j)] * jp.vel(j, b) * jt_inv[(b, a)];
                }
            }
            v[i * p + a] = acc;
        }
    }
    JetPoint::new(dims, change.map_time(&jp.t)?, change.map_space(&jp.x)?, v)
}

fn check_dims(change: &CoordinateChange, jp: &JetPoint) -> Result<JetDims, JetError> {
    if change.dims != jp.dims() {
        return Err(JetError::Dimension(format!(
            "change has dims {:?}, point has {:?}",
            change.dims,
            jp.dims()
        )));
    }
    Ok(jp.dims())
}

/// Prolonged fiber coordinates as Taylor scalars of order 1 in the seeds
/// `(t_1..t_p, x_1..x_n)`, so their base-coordinate partials are exact.
fn prolonged_fiber_taylor(change: &CoordinateChange, jp: &JetPoint) -> Result<Vec<TaylorScalar>, JetError> {
    let dims = jp.dims();
    let (p, n) = (dims.p, dims.n);
    let space = Space::get(p + n, 2);
    let t: Vec<TaylorScalar> = (0..p).map(|a| TaylorScalar::variable(&space, a, jp.t[a])).collect();
    let x: Vec<TaylorScalar> =
        (0..n).map(|i| TaylorScalar::variable(&space, p + i, jp.x[i])).collect();
    let mut jt = Vec::with_capacity(p * p);
    for f in &change.temporal {
        let e = f.eval(&t)?;
        jt.extend((0..p).map(|a| e.derivative(a)));
    }
    let mut jx = Vec::with_capacity(n * n);
    for f in &change.spatial {
        let e = f.eval(&x)?;
        jx.extend((0..n).map(|k| e.derivative(p + k)));
    }
    let jt_inv = smooth::invert(&jt, p)
        .ok_or_else(|| JetError::SingularJacobian { map: "temporal", point: jp.t.clone() })?;
    let mut out = Vec::with_capacity(n * p);
    for i in 0..n {
        for a in 0..p {
            let mut acc = TaylorScalar::constant(0.0);
            for j in 0..n {
                for b in 0..p {
                    acc = acc + &jx[i * n + j] * &jt_inv[b * p + a] * jp.vel(j, b);
                }
            }
            out.push(acc);
        }
    }
    Ok(out)
}

/// Connection coefficients expressed in new coordinates at the prolonged point.
#[derive(Debug, Clone)]
pub struct TransformedCoefficients {
    pub point: JetPoint,
    pub coefficients: Coefficients<f64>,
}

/// Solve the transformation laws of a nonlinear connection for the
/// coefficients in the new coordinates:
///
/// ```text
/// M̃^(j)_(β)μ ∂t̃^μ/∂t^α = M^(k)_(γ)α ∂x̃^j/∂x^k ∂t^γ/∂t̃^β − ∂x̃^j_β/∂t^α
/// Ñ^(j)_(β)k ∂x̃^k/∂x^i = N^(k)_(γ)i ∂x̃^j/∂x^k ∂t^γ/∂t̃^β − ∂x̃^j_β/∂x^i
/// ```
///
/// The inhomogeneous terms are differentiated exactly through the
/// prolongation formula.
pub fn transform_connection(
    conn: &NonlinearConnection,
    change: &CoordinateChange,
    jp: &JetPoint,
) -> Result<TransformedCoefficients, JetError> {
    let dims = check_dims(change, jp)?;
    let (p, n) = (dims.p, dims.n);
    let point = prolong(change, jp)?;
    let jt = change.temporal_jacobian(&jp.t)?;
    let jx = change.spatial_jacobian(&jp.x)?;
    let jt_inv = checked_inverse(&jt, "temporal", &jp.t)?;
    let jx_inv = checked_inverse(&jx, "spatial", &jp.x)?;
    let old = conn.evaluate(jp)?;
    let fiber = prolonged_fiber_taylor(change, jp)?;
    let mut out = Coefficients::zeros(dims);
    for j in 0..n {
        for b in 0..p {
            let vt = &fiber[j * p + b];
            // rhs_t[α], rhs_x[i]
            let mut rhs_t = vec![0.0; p];
            for (a, r) in rhs_t.iter_mut().enumerate() {
                let mut acc = 0.0;
                for k in 0..n {
                    for g in 0..p {
                        acc += old.temporal(k, g, a) * jx[(j, k)] * jt_inv[(g, b)];
                    }
                }
                *r = acc - vt.partial(&[a]);
            }
            let mut rhs_x = vec![0.0; n];
            for (i, r) in rhs_x.iter_mut().enumerate() {
                let mut acc = 0.0;
                for k in 0..n {
                    for g in 0..p {
                        acc += old.spatial(k, g, i) * jx[(j, k)] * jt_inv[(g, b)];
                    }
                }
                *r = acc - vt.partial(&[p + i]);
            }
            for mu in 0..p {
                let m: f64 = (0..p).map(|a| rhs_t[a] * jt_inv[(a, mu)]).sum();
                *out.temporal_mut(j, b, mu) = m;
            }
            for k in 0..n {
                let v: f64 = (0..n).map(|i| rhs_x[i] * jx_inv[(i, k)]).sum();
                *out.spatial_mut(j, b, k) = v;
            }
        }
    }
    Ok(TransformedCoefficients { point, coefficients: out })
}

impl fmt::Display for JetPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t={:?} x={:?} v={:?}", self.t, self.x, self.v)
    }
}

/// Parse a list of expressions sharing dimensions.
pub fn parse_all<S: AsRef<str>>(srcs: &[S], dims: JetDims) -> Result<Vec<Expr>, ExprError> {
    srcs.iter().map(|s| exprlang::parse(s.as_ref(), dims)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn point(dims: JetDims, flat: &[f64]) -> JetPoint {
        JetPoint::from_flat(dims, flat).unwrap()
    }

    #[test]
    fn layout_indices() {
        let d = JetDims::new(2, 3);
        assert_eq!(d.nvars(), 11);
        assert_eq!(d.x_index(0), 2);
        assert_eq!(d.v_index(0, 0), 5);
        assert_eq!(d.v_index(2, 1), 10);
        assert_eq!(d.block(Block::Fiber), 5..11);
    }

    #[test]
    fn identity_prolongation() {
        let d = JetDims::new(2, 2);
        let jp = point(d, &[0.1, 0.2, 0.3, 0.4, 1.0, 2.0, 3.0, 4.0]);
        let out = prolong(&CoordinateChange::identity(d), &jp).unwrap();
        assert_eq!(out, jp);
    }

    #[test]
    fn time_doubling_halves_velocity() {
        let d = JetDims::new(1, 1);
        let c = CoordinateChange::from_sources(d, &["2*t1"], &["t1/2"], &["x1"], &["x1"]).unwrap();
        let jp = point(d, &[0.3, -1.0, 0.8]);
        let out = prolong(&c, &jp).unwrap();
        assert_eq!(out.t, vec![0.6]);
        assert_eq!(out.v, vec![0.4]);
    }

    #[test]
    fn singular_jacobian_reported() {
        let d = JetDims::new(1, 1);
        let c = CoordinateChange::from_sources(d, &["t1"], &["t1"], &["x1^3"], &["x1"]).unwrap();
        let jp = point(d, &[0.0, 0.0, 1.0]);
        assert!(matches!(
            prolong(&c, &jp),
            Err(JetError::SingularJacobian { map: "spatial", .. })
        ));
    }

    #[test]
    fn wrong_point_dims() {
        assert!(JetPoint::new(JetDims::new(1, 2), vec![0.0], vec![0.0], vec![0.0, 0.0]).is_err());
        assert!(JetPoint::new(JetDims::new(1, 1), vec![f64::NAN], vec![0.0], vec![0.0]).is_err());
    }
}
