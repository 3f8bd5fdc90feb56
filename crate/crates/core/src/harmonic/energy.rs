use super::{HarmonicError, SmoothMap};
use crate::geometry::MetricField;
use crate::jet::{JetDims, JetPoint};
use crate::smooth::{ScalarField, TaylorScalar};

/// Central-difference step for [`first_variation`].
pub const DEFAULT_VARIATION_STEP: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quadrature {
    Trapezoid,
    Simpson,
}

/// The rectangle `[lower, upper]^p` with `nodes` quadrature nodes per axis.
///
/// Sampled trajectories are integrated over their own nodes; only `rule`
/// is used for them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyDomain {
    pub lower: f64,
    pub upper: f64,
    pub nodes: usize,
    pub rule: Quadrature,
}

fn weights(rule: Quadrature, nodes: usize, width: f64) -> Result<Vec<f64>, HarmonicError> {
    if nodes < 2 || width.is_nan() || width <= 0.0 {
        return Err(HarmonicError::InvalidMap("quadrature needs at least two nodes on a non-empty interval".into()));
    }
    let h = width / (nodes - 1) as f64;
    match rule {
        Quadrature::Trapezoid => Ok((0..nodes)
            .map(|k| if k == 0 || k + 1 == nodes { 0.5 * h } else { h })
            .collect()),
        Quadrature::Simpson => {
            if nodes.is_multiple_of(2) {
                return Err(HarmonicError::InvalidMap("Simpson's rule needs an odd node count".into()));
            }
            Ok((0..nodes)
                .map(|k| {
                    let c = if k == 0 || k + 1 == nodes {
                        1.0
                    } else if k % 2 == 1 {
                        4.0
                    } else {
                        2.0
                    };
                    c * h / 3.0
                })
                .collect())
        }
    }
}

fn integrand(l: &dyn ScalarField, f: &SmoothMap, h: &MetricField, t: &[f64]) -> Result<f64, HarmonicError> {
    let dims = f.dims();
    let (x, first) = f.first_jet(t)?;
    let jp = JetPoint::new(dims, t.to_vec(), x, first).map_err(|e| HarmonicError::InvalidMap(e.to_string()))?;
    let args: Vec<TaylorScalar> = jp.to_flat().into_iter().map(TaylorScalar::constant).collect();
    let value = l.eval(&args)?.value();
    let base = JetPoint::base(dims, t.to_vec(), vec![0.0; dims.n]).expect("dims checked");
    let det = h.eval_checked(&base)?.determinant();
    Ok(value * det.abs().sqrt())
}

/// Decode a flat index into a multi-index over `p` axes of `nodes` each.
fn multi_index(mut flat: usize, p: usize, nodes: usize) -> Vec<usize> {
    let mut out = vec![0; p];
    for slot in out.iter_mut().rev() {
        *slot = flat % nodes;
        flat /= nodes;
    }
    out
}

/// `∫_T L(t, f(t), ∂f(t)) √|det h(t)| dt` by composite quadrature.
pub fn energy(
    l: &dyn ScalarField,
    f: &SmoothMap,
    h: &MetricField,
    domain: &EnergyDomain,
) -> Result<f64, HarmonicError> {
    let dims = f.dims();
    if l.arity() != dims.nvars() || h.dims() != dims {
        return Err(HarmonicError::InvalidMap("Lagrangian, map and h disagree on dims".into()));
    }
    if let Some(times) = f.node_times() {
        let w = weights(domain.rule, times.len(), times[times.len() - 1] - times[0])?;
        let mut acc = 0.0;
        for (t, wk) in times.iter().zip(w) {
            acc += wk * integrand(l, f, h, &[*t])?;
        }
        return Ok(acc);
    }
    if !f.is_analytic() {
        return Err(HarmonicError::InvalidMap("energy is defined for analytic maps and trajectories".into()));
    }
    let JetDims { p, .. } = dims;
    let w = weights(domain.rule, domain.nodes, domain.upper - domain.lower)?;
    let step = (domain.upper - domain.lower) / (domain.nodes - 1) as f64;
    let mut acc = 0.0;
    for flat in 0..domain.nodes.pow(p as u32) {
        let idx = multi_index(flat, p, domain.nodes);
        let t: Vec<f64> = idx.iter().map(|&k| domain.lower + k as f64 * step).collect();
        let weight: f64 = idx.iter().map(|&k| w[k]).product();
        acc += weight * integrand(l, f, h, &t)?;
    }
    Ok(acc)
}

const BOUNDARY_TOL: f64 = 1e-12;

/// `(𝔼(f + εη) − 𝔼(f − εη)) / 2ε` for an analytic `η` vanishing on `∂T`.
///
/// The boundary condition is checked at the boundary quadrature nodes
/// (the trajectory endpoints for sampled maps).
pub fn first_variation(
    l: &dyn ScalarField,
    f: &SmoothMap,
    h: &MetricField,
    eta: &SmoothMap,
    eps: f64,
    domain: &EnergyDomain,
) -> Result<f64, HarmonicError> {
    if !eta.is_analytic() {
        return Err(HarmonicError::InvalidMap("perturbations must be analytic".into()));
    }
    let p = f.dims().p;
    let boundary: Vec<Vec<f64>> = match f.node_times() {
        Some(times) => vec![vec![times[0]], vec![times[times.len() - 1]]],
        None => {
            let nodes = domain.nodes.max(2);
            let step = (domain.upper - domain.lower) / (nodes - 1) as f64;
            (0..nodes.pow(p as u32))
                .map(|flat| multi_index(flat, p, nodes))
                .filter(|idx| idx.iter().any(|&k| k == 0 || k + 1 == nodes))
                .map(|idx| idx.iter().map(|&k| domain.lower + k as f64 * step).collect())
                .collect()
        }
    };
    for t in boundary {
        let value = eta.value(&t)?.iter().fold(0.0_f64, |m, c| m.max(c.abs()));
        if value > BOUNDARY_TOL {
            return Err(HarmonicError::BoundaryViolation { point: t, value });
        }
    }
    let plus = energy(l, &f.perturbed(eta, eps)?, h, domain)?;
    let minus = energy(l, &f.perturbed(eta, -eps)?, h, domain)?;
    Ok((plus - minus) / (2.0 * eps))
}
