//! Harmonic-map residuals, single-time integrators and the h-energy
//! functional.
//!
//! A map `f: T → M` is h-generalized harmonic for a connection `(M, N)` when
//! `h^{αβ} (x^i_αβ + M^(i)_(α)β + N^(i)_(α)m x^m_β) = 0`. This module
//! evaluates that residual for analytic and sampled maps, integrates the
//! `p = 1` case as an initial-value problem, and computes the energy
//! `∫_T L(t, x, x_α) √|h| dt`.

mod energy;
mod integrate;

use std::sync::Arc;

use thiserror::Error;

use crate::connection::{ConnectionError, NonlinearConnection};
use crate::exprlang::{self, ExprError};
use crate::geometry::{self, GeometryError, MetricField, MetricKind};
use crate::jet::{JetDims, JetPoint};
use crate::smooth::{self, EvalError, Field};

pub use energy::{energy, first_variation, EnergyDomain, Quadrature, DEFAULT_VARIATION_STEP};
pub use integrate::{integrate_p1, integrate_semispray_p1, IntegrationSettings, Trajectory, CSV_VERSION};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HarmonicError {
    #[error("OutOfDomain: no central stencil fits at t = {t:?}")]
    OutOfDomain { t: Vec<f64> },
    #[error("BlowUp: state norm {norm:e} exceeds the bound at t = {time}")]
    BlowUp { time: f64, norm: f64 },
    #[error("coefficient evaluation failed at t = {time}: {source}")]
    Coefficient { time: f64, source: ConnectionError },
    #[error("BoundaryViolation: perturbation is {value:e} at boundary point {point:?}")]
    BoundaryViolation { point: Vec<f64>, value: f64 },
    #[error("GridTooSmall: need p = 2 and at least 5x5 nodes, got {0}")]
    GridTooSmall(String),
    #[error("invalid map: {0}")]
    InvalidMap(String),
    #[error(transparent)]
    Connection(#[from] ConnectionError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Expr(#[from] ExprError),
}

const MIN_NODES: usize = 5;

#[derive(Debug, Clone)]
enum Repr {
    /// `x^i(t)` as fields of arity `p`.
    Analytic(Vec<Field>),
    /// `p = 1`: uniform nodes `t0 + k·step`, optional exact velocities.
    Trajectory {
        t0: f64,
        step: f64,
        values: Vec<Vec<f64>>,
        velocities: Option<Vec<Vec<f64>>>,
    },
    /// `p = 2`: node `(k1, k2)` at `origin + (k1·step[0], k2·step[1])`,
    /// stored at `k1·shape[1] + k2`.
    Grid {
        origin: [f64; 2],
        step: [f64; 2],
        shape: [usize; 2],
        values: Vec<Vec<f64>>,
    },
}

/// A map `T → M` in coordinates.
#[derive(Debug, Clone)]
pub struct SmoothMap {
    dims: JetDims,
    repr: Repr,
}

/// Value, first partials `[i·p + α]` and second partials `[(i·p + α)·p + β]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MapJet {
    pub x: Vec<f64>,
    pub first: Vec<f64>,
    pub second: Vec<f64>,
}

fn check_values(values: &[Vec<f64>], n: usize) -> Result<(), HarmonicError> {
    if values.iter().any(|v| v.len() != n) {
        return Err(HarmonicError::InvalidMap(format!("every node needs {n} values")));
    }
    if !values.iter().flatten().all(|c| c.is_finite()) {
        return Err(HarmonicError::InvalidMap("node values must be finite".into()));
    }
    Ok(())
}

/// Index of the node at `t` on a uniform axis, if `t` sits on one.
fn node_index(t: f64, t0: f64, step: f64, count: usize) -> Option<usize> {
    let k = ((t - t0) / step).round();
    if k < 0.0 || k >= count as f64 || ((t0 + k * step) - t).abs() > 1e-9 * step.abs().max(1.0) {
        return None;
    }
    Some(k as usize)
}

impl SmoothMap {
    pub fn analytic(dims: JetDims, components: Vec<Field>) -> Result<Self, HarmonicError> {
        if components.len() != dims.n || components.iter().any(|c| c.arity() != dims.p) {
            return Err(HarmonicError::InvalidMap(format!(
                "analytic map needs {} components of arity {}",
                dims.n, dims.p
            )));
        }
        Ok(SmoothMap { dims, repr: Repr::Analytic(components) })
    }

    /// Components written in `t1..tp`.
    pub fn from_sources<S: AsRef<str>>(dims: JetDims, sources: &[S]) -> Result<Self, HarmonicError> {
        let time = JetDims::new(dims.p, 0);
        let comps = sources
            .iter()
            .map(|s| Ok(Arc::new(exprlang::parse(s.as_ref(), time)?) as Field))
            .collect::<Result<Vec<_>, HarmonicError>>()?;
        SmoothMap::analytic(dims, comps)
    }

    /// Sampled `p = 1` map on the uniform grid `t0 + k·step`.
    pub fn trajectory(
        n: usize,
        t0: f64,
        step: f64,
        values: Vec<Vec<f64>>,
        velocities: Option<Vec<Vec<f64>>>,
    ) -> Result<Self, HarmonicError> {
        if values.len() < MIN_NODES {
            return Err(HarmonicError::InvalidMap(format!("need at least {MIN_NODES} nodes")));
        }
        if !(step > 0.0 && step.is_finite() && t0.is_finite()) {
            return Err(HarmonicError::InvalidMap("time step must be positive and finite".into()));
        }
        check_values(&values, n)?;
        if let Some(v) = &velocities {
            if v.len() != values.len() {
                return Err(HarmonicError::InvalidMap("one velocity per node is required".into()));
            }
            check_values(v, n)?;
        }
        Ok(SmoothMap { dims: JetDims::new(1, n), repr: Repr::Trajectory { t0, step, values, velocities } })
    }

    /// Sampled `p = 2` map on a rectangular lattice; `values[k1·shape[1] + k2]`.
    pub fn grid(
        n: usize,
        origin: [f64; 2],
        step: [f64; 2],
        shape: [usize; 2],
        values: Vec<Vec<f64>>,
    ) -> Result<Self, HarmonicError> {
        if shape[0] < MIN_NODES || shape[1] < MIN_NODES {
            return Err(HarmonicError::GridTooSmall(format!("{}x{}", shape[0], shape[1])));
        }
        if values.len() != shape[0] * shape[1] {
            return Err(HarmonicError::InvalidMap("node count does not match the grid shape".into()));
        }
        if !step.iter().all(|s| *s > 0.0 && s.is_finite()) {
            return Err(HarmonicError::InvalidMap("grid steps must be positive and finite".into()));
        }
        check_values(&values, n)?;
        Ok(SmoothMap { dims: JetDims::new(2, n), repr: Repr::Grid { origin, step, shape, values } })
    }

    /// Sample an analytic `p = 2` map on a lattice.
    pub fn sample_grid(&self, origin: [f64; 2], step: [f64; 2], shape: [usize; 2]) -> Result<Self, HarmonicError> {
        let mut values = Vec::with_capacity(shape[0] * shape[1]);
        for k1 in 0..shape[0] {
            for k2 in 0..shape[1] {
                let t = [origin[0] + k1 as f64 * step[0], origin[1] + k2 as f64 * step[1]];
                values.push(self.value(&t)?);
            }
        }
        SmoothMap::grid(self.dims.n, origin, step, shape, values)
    }

    pub fn dims(&self) -> JetDims {
        self.dims
    }

    pub fn is_analytic(&self) -> bool {
        matches!(self.repr, Repr::Analytic(_))
    }

    pub(crate) fn components(&self) -> Option<&[Field]> {
        match &self.repr {
            Repr::Analytic(c) => Some(c),
            _ => None,
        }
    }

    /// Node times of a sampled `p = 1` map.
    pub fn node_times(&self) -> Option<Vec<f64>> {
        match &self.repr {
            Repr::Trajectory { t0, step, values, .. } => {
                Some((0..values.len()).map(|k| t0 + k as f64 * step).collect())
            }
            _ => None,
        }
    }

    pub fn value(&self, t: &[f64]) -> Result<Vec<f64>, HarmonicError> {
        self.check_t(t)?;
        match &self.repr {
            Repr::Analytic(comps) => comps
                .iter()
                .map(|c| Ok(smooth::eval_seeded(c.as_ref(), t, &[], 0)?.value()))
                .collect(),
            Repr::Trajectory { t0, step, values, .. } => node_index(t[0], *t0, *step, values.len())
                .map(|k| values[k].clone())
                .ok_or_else(|| HarmonicError::OutOfDomain { t: t.to_vec() }),
            Repr::Grid { origin, step, shape, values } => {
                let k1 = node_index(t[0], origin[0], step[0], shape[0]);
                let k2 = node_index(t[1], origin[1], step[1], shape[1]);
                match (k1, k2) {
                    (Some(a), Some(b)) => Ok(values[a * shape[1] + b].clone()),
                    _ => Err(HarmonicError::OutOfDomain { t: t.to_vec() }),
                }
            }
        }
    }

    fn check_t(&self, t: &[f64]) -> Result<(), HarmonicError> {
        if t.len() != self.dims.p {
            return Err(HarmonicError::InvalidMap(format!("expected {} time coordinates", self.dims.p)));
        }
        Ok(())
    }

    /// First jet `(x, x_α)` at `t`. Sampled trajectories with stored
    /// velocities answer at every node; otherwise central differences need
    /// interior nodes.
    pub fn first_jet(&self, t: &[f64]) -> Result<(Vec<f64>, Vec<f64>), HarmonicError> {
        self.check_t(t)?;
        if let Repr::Trajectory { t0, step, values, velocities: Some(vel) } = &self.repr {
            let k = node_index(t[0], *t0, *step, values.len())
                .ok_or_else(|| HarmonicError::OutOfDomain { t: t.to_vec() })?;
            return Ok((values[k].clone(), vel[k].clone()));
        }
        let jet = self.jet(t, 1)?;
        Ok((jet.x, jet.first))
    }

    /// Value, first and second partials at `t`.
    pub fn second_jet(&self, t: &[f64]) -> Result<MapJet, HarmonicError> {
        self.check_t(t)?;
        self.jet(t, 2)
    }

    fn jet(&self, t: &[f64], order: usize) -> Result<MapJet, HarmonicError> {
        let JetDims { p, n } = self.dims;
        let out_of_domain = || HarmonicError::OutOfDomain { t: t.to_vec() };
        let mut jet = MapJet { x: vec![0.0; n], first: vec![0.0; n * p], second: vec![0.0; n * p * p] };
        match &self.repr {
            Repr::Analytic(comps) => {
                let seeds: Vec<usize> = (0..p).collect();
                for (i, c) in comps.iter().enumerate() {
                    let d = smooth::eval_seeded(c.as_ref(), t, &seeds, order)?;
                    jet.x[i] = d.value();
                    for a in 0..p {
                        jet.first[i * p + a] = d.partial(&[a]);
                        if order >= 2 {
                            for b in 0..p {
                                jet.second[(i * p + a) * p + b] = d.partial(&[a, b]);
                            }
                        }
                    }
                }
            }
            Repr::Trajectory { t0, step, values, .. } => {
                let k = node_index(t[0], *t0, *step, values.len()).ok_or_else(out_of_domain)?;
                if k == 0 || k + 1 == values.len() {
                    return Err(out_of_domain());
                }
                let h = *step;
                for i in 0..n {
                    let (m, c, pl) = (values[k - 1][i], values[k][i], values[k + 1][i]);
                    jet.x[i] = c;
                    jet.first[i] = (pl - m) / (2.0 * h);
                    jet.second[i] = (pl - 2.0 * c + m) / (h * h);
                }
            }
            Repr::Grid { origin, step, shape, values } => {
                let k1 = node_index(t[0], origin[0], step[0], shape[0]).ok_or_else(out_of_domain)?;
                let k2 = node_index(t[1], origin[1], step[1], shape[1]).ok_or_else(out_of_domain)?;
                if k1 == 0 || k2 == 0 || k1 + 1 == shape[0] || k2 + 1 == shape[1] {
                    return Err(out_of_domain());
                }
                let at = |d1: isize, d2: isize, i: usize| {
                    let a = (k1 as isize + d1) as usize;
                    let b = (k2 as isize + d2) as usize;
                    values[a * shape[1] + b][i]
                };
                let [h1, h2] = *step;
                for i in 0..n {
                    let c = at(0, 0, i);
                    jet.x[i] = c;
                    jet.first[i * 2] = (at(1, 0, i) - at(-1, 0, i)) / (2.0 * h1);
                    jet.first[i * 2 + 1] = (at(0, 1, i) - at(0, -1, i)) / (2.0 * h2);
                    let mixed = (at(1, 1, i) - at(1, -1, i) - at(-1, 1, i) + at(-1, -1, i)) / (4.0 * h1 * h2);
                    jet.second[i * 4] = (at(1, 0, i) - 2.0 * c + at(-1, 0, i)) / (h1 * h1);
                    jet.second[i * 4 + 1] = mixed;
                    jet.second[i * 4 + 2] = mixed;
                    jet.second[i * 4 + 3] = (at(0, 1, i) - 2.0 * c + at(0, -1, i)) / (h2 * h2);
                }
            }
        }
        Ok(jet)
    }

    /// `f + ε·η` for an analytic perturbation `η`.
    pub fn perturbed(&self, eta: &SmoothMap, eps: f64) -> Result<SmoothMap, HarmonicError> {
        let eta_c = eta
            .components()
            .ok_or_else(|| HarmonicError::InvalidMap("perturbations must be analytic".into()))?;
        if eta.dims != self.dims {
            return Err(HarmonicError::InvalidMap("perturbation dims differ from the map's".into()));
        }
        let p = self.dims.p;
        match &self.repr {
            Repr::Analytic(comps) => {
                let summed = comps
                    .iter()
                    .zip(eta_c)
                    .map(|(f, e)| {
                        let (f, e) = (f.clone(), e.clone());
                        smooth::field(p, "perturbed component", move |args| {
                            // both evaluate at the same arguments; errors surface as non-finite
                            let fv = f.eval(args).unwrap_or_else(|_| smooth::TaylorScalar::constant(f64::NAN));
                            let ev = e.eval(args).unwrap_or_else(|_| smooth::TaylorScalar::constant(f64::NAN));
                            fv + ev * eps
                        })
                    })
                    .collect();
                SmoothMap::analytic(self.dims, summed)
            }
            Repr::Trajectory { t0, step, values, velocities } => {
                let mut vals = Vec::with_capacity(values.len());
                let mut vels = Vec::with_capacity(values.len());
                for (k, x) in values.iter().enumerate() {
                    let t = [t0 + k as f64 * step];
                    let jet = eta.jet(&t, 1)?;
                    vals.push(x.iter().zip(&jet.x).map(|(a, b)| a + eps * b).collect());
                    if let Some(v) = velocities {
                        vels.push(v[k].iter().zip(&jet.first).map(|(a, b)| a + eps * b).collect());
                    }
                }
                let vels = velocities.as_ref().map(|_| vels);
                SmoothMap::trajectory(self.dims.n, *t0, *step, vals, vels)
            }
            Repr::Grid { origin, step, shape, values } => {
                let mut vals = Vec::with_capacity(values.len());
                for k1 in 0..shape[0] {
                    for k2 in 0..shape[1] {
                        let t = [origin[0] + k1 as f64 * step[0], origin[1] + k2 as f64 * step[1]];
                        let e = eta.value(&t)?;
                        let x = &values[k1 * shape[1] + k2];
                        vals.push(x.iter().zip(&e).map(|(a, b)| a + eps * b).collect());
                    }
                }
                SmoothMap::grid(self.dims.n, *origin, *step, *shape, vals)
            }
        }
    }
}

/// Inverse temporal metric at `t`.
pub(crate) fn inverse_h(h: &MetricField, t: &[f64], n: usize) -> Result<nalgebra::DMatrix<f64>, HarmonicError> {
    if h.kind() != MetricKind::Temporal {
        return Err(HarmonicError::InvalidMap("h must be a temporal metric".into()));
    }
    let base = JetPoint::base(JetDims::new(t.len(), n), t.to_vec(), vec![0.0; n])
        .map_err(|e| HarmonicError::InvalidMap(e.to_string()))?;
    Ok(geometry::inverse_metric(h, &base)?)
}

/// `h^{αβ} (x^i_αβ + M^(i)_(α)β + N^(i)_(α)m x^m_β)` at `t`.
pub fn harmonic_residual(
    f: &SmoothMap,
    conn: &NonlinearConnection,
    h: &MetricField,
    t: &[f64],
) -> Result<Vec<f64>, HarmonicError> {
    let dims = f.dims;
    if conn.dims() != dims || h.dims() != dims {
        return Err(HarmonicError::InvalidMap("map, connection and h disagree on dims".into()));
    }
    let jet = f.second_jet(t)?;
    residual_from_jet(&jet, dims, conn, h, t)
}

fn residual_from_jet(
    jet: &MapJet,
    dims: JetDims,
    conn: &NonlinearConnection,
    h: &MetricField,
    t: &[f64],
) -> Result<Vec<f64>, HarmonicError> {
    let JetDims { p, n } = dims;
    let hinv = inverse_h(h, t, n)?;
    let jp = JetPoint::new(dims, t.to_vec(), jet.x.clone(), jet.first.clone())
        .map_err(|e| HarmonicError::InvalidMap(e.to_string()))?;
    let c = conn.evaluate(&jp)?;
    Ok((0..n)
        .map(|i| {
            let mut acc = 0.0;
            for a in 0..p {
                for b in 0..p {
                    let mut term = jet.second[(i * p + a) * p + b] + c.temporal(i, a, b);
                    for m in 0..n {
                        term += c.spatial(i, a, m) * jet.first[m * p + b];
                    }
                    acc += hinv[(a, b)] * term;
                }
            }
            acc
        })
        .collect())
}

/// Residuals at the interior nodes of a `p = 2` grid map.
#[derive(Debug, Clone, PartialEq)]
pub struct GridResidual {
    pub shape: [usize; 2],
    /// `(k1, k2, residual)` for each interior node, in row-major order.
    pub nodes: Vec<(usize, usize, Vec<f64>)>,
    /// Largest absolute residual component over the interior.
    pub max_norm: f64,
}

pub fn grid_residual_p2(
    f: &SmoothMap,
    conn: &NonlinearConnection,
    h: &MetricField,
) -> Result<GridResidual, HarmonicError> {
    let Repr::Grid { origin, step, shape, .. } = &f.repr else {
        return Err(HarmonicError::GridTooSmall("map is not a p = 2 grid".into()));
    };
    if f.dims.p != 2 || shape[0] < MIN_NODES || shape[1] < MIN_NODES {
        return Err(HarmonicError::GridTooSmall(format!("{}x{}", shape[0], shape[1])));
    }
    let mut nodes = Vec::new();
    let mut max_norm: f64 = 0.0;
    for k1 in 1..shape[0] - 1 {
        for k2 in 1..shape[1] - 1 {
            let t = [origin[0] + k1 as f64 * step[0], origin[1] + k2 as f64 * step[1]];
            let r = harmonic_residual(f, conn, h, &t)?;
            max_norm = r.iter().fold(max_norm, |m, c| m.max(c.abs()));
            nodes.push((k1, k2, r));
        }
    }
    Ok(GridResidual { shape: *shape, nodes, max_norm })
}
