use std::sync::Arc;

use jetconn::connection::{
    canonical_gml, canonical_ml_p1, canonical_ml_pge2, gamma_zero, kronecker_factor, semispray_p1,
    torsion_free_check, Coefficients, ConnectionError, FundamentalVerticalMetric, GmlOptions, NonlinearConnection,
    QuadraticLagrangian,
};
use jetconn::geometry::{self, MetricField};
use jetconn::harmonic::{
    energy, first_variation, integrate_p1, integrate_semispray_p1, EnergyDomain, IntegrationSettings, SmoothMap,
    Trajectory,
};
use jetconn::smooth::{eval_derivatives, Field};
use jetconn::jet::{push_covector, push_metric, push_scalar, transform_connection, JetDims, JetPoint};
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::config::{Construction, Geodesic, Problem, Route};
use crate::report::Check;
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Verification {
    Naturality,
    Torsion,
    Regularity,
    Equivalence,
}

impl Verification {
    pub fn tag(self) -> &'static str {
        match self {
            Verification::Naturality => "naturality",
            Verification::Torsion => "torsion",
            Verification::Regularity => "regularity",
            Verification::Equivalence => "equivalence",
        }
    }
}

pub struct Outcome {
    pub checks: Vec<Check>,
    pub data: Value,
}

pub fn build_connection(problem: &Problem, which: Construction, seed: u64) -> Result<NonlinearConnection, CliError> {
    let h = problem.h()?;
    match which {
        Construction::Gamma0 => gamma_zero(&h, &problem.metric()?).map_err(CliError::math),
        Construction::Ml if problem.dims.p == 1 => canonical_ml_p1(&problem.lagrangian()?, &h).map_err(CliError::math),
        Construction::Ml => canonical_ml_pge2(&problem.quadratic()?).map_err(CliError::math),
        Construction::Gml => {
            let options = GmlOptions {
                samples: problem.samples(seed)?,
                tol: problem.config.tolerances.regularity,
                seed,
            };
            let fallback = problem.fallback()?;
            canonical_gml(&problem.vertical()?, &h, &problem.psi()?, fallback.as_ref(), &options).map_err(CliError::math)
        }
        Construction::User => problem.user_connection(),
    }
}

fn flatten(c: &Coefficients<f64>) -> (Vec<f64>, Vec<f64>) {
    (c.temporal_slice().to_vec(), c.spatial_slice().to_vec())
}

fn evaluate_all(conn: &NonlinearConnection, points: &[JetPoint]) -> Result<Vec<Coefficients<f64>>, CliError> {
    points
        .par_iter()
        .map(|jp| conn.evaluate(jp).map_err(CliError::math))
        .collect()
}

pub type Table = (Vec<JetPoint>, Vec<Coefficients<f64>>);

/// Coefficient table at the sample points.
pub fn connection(problem: &Problem, which: Construction, seed: u64) -> Result<(Outcome, Table), CliError> {
    let conn = build_connection(problem, which, seed)?;
    let points = problem.samples(seed)?;
    let table = evaluate_all(&conn, &points)?;
    let rows: Vec<Value> = points
        .iter()
        .zip(&table)
        .map(|(jp, c)| {
            let (m, n) = flatten(c);
            json!({"point": jp.to_flat(), "m": m, "n": n})
        })
        .collect();
    let data = json!({
        "construction": which.tag(),
        "provenance": conn.provenance().tag(),
        "layout": {"m": "(i*p + a)*p + b", "n": "(i*p + a)*n + j"},
        "samples": rows,
    });
    Ok((Outcome { checks: Vec::new(), data }, (points, table)))
}

/// CSV rendering of a coefficient table.
pub fn connection_csv(dims: JetDims, points: &[JetPoint], table: &[Coefficients<f64>]) -> String {
    let JetDims { p, n } = dims;
    let mut header: Vec<String> = (1..=p).map(|a| format!("t{a}")).collect();
    header.extend((1..=n).map(|i| format!("x{i}")));
    for i in 1..=n {
        for a in 1..=p {
            header.push(format!("v{i}_{a}"));
        }
    }
    for i in 1..=n {
        for a in 1..=p {
            header.extend((1..=p).map(|b| format!("M{i}_{a}_{b}")));
        }
    }
    for i in 1..=n {
        for a in 1..=p {
            header.extend((1..=n).map(|j| format!("N{i}_{a}_{j}")));
        }
    }
    let mut out = header.join(",");
    out.push('\n');
    for (jp, c) in points.iter().zip(table) {
        let (m, nn) = flatten(c);
        let row: Vec<String> = jp.to_flat().iter().chain(&m).chain(&nn).map(|v| format!("{v:.16e}")).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn verify(problem: &Problem, which: Verification, construction: Construction, seed: u64) -> Result<Outcome, CliError> {
    match which {
        Verification::Naturality => naturality(problem, construction, seed),
        Verification::Torsion => {
            let conn = build_connection(problem, construction, seed)?;
            let tol = problem.config.tolerances.torsion;
            let report = torsion_free_check(&conn, &problem.samples(seed)?, tol).map_err(CliError::math)?;
            let location = report.worst_point.as_ref().map(JetPoint::to_flat);
            Ok(Outcome {
                checks: vec![Check::at_most("torsion", report.worst, tol, location)],
                data: json!({"construction": construction.tag(), "worst_index": report.worst_index}),
            })
        }
        Verification::Regularity => regularity(problem, seed),
        Verification::Equivalence => equivalence(problem, seed),
    }
}

fn naturality(problem: &Problem, construction: Construction, seed: u64) -> Result<Outcome, CliError> {
    let change = Arc::new(problem.change()?);
    let h = problem.h()?;
    let pushed_h = push_metric(&change, &h);
    let (original, recomputed) = match construction {
        Construction::Gamma0 => {
            let phi = problem.metric()?;
            (
                gamma_zero(&h, &phi).map_err(CliError::math)?,
                gamma_zero(&pushed_h, &push_metric(&change, &phi)).map_err(CliError::math)?,
            )
        }
        Construction::Ml if problem.dims.p == 1 => {
            let l = problem.lagrangian()?;
            (
                canonical_ml_p1(&l, &h).map_err(CliError::math)?,
                canonical_ml_p1(&push_scalar(&change, &l), &pushed_h).map_err(CliError::math)?,
            )
        }
        Construction::Ml => {
            let ql = problem.quadratic()?;
            let pushed = QuadraticLagrangian::new(
                pushed_h,
                push_metric(&change, ql.g()),
                push_covector(&change, ql.u()),
                push_scalar(&change, ql.f()),
            )
            .map_err(CliError::math)?;
            (canonical_ml_pge2(&ql).map_err(CliError::math)?, canonical_ml_pge2(&pushed).map_err(CliError::math)?)
        }
        other => {
            return Err(CliError::config(
                "$.construction",
                format!("naturality is checked for gamma0 and ml, not {}", other.tag()),
            ))
        }
    };
    let points = problem.samples(seed)?;
    let errors: Vec<f64> = points
        .par_iter()
        .map(|jp| -> Result<f64, CliError> {
            let moved = transform_connection(&original, &change, jp).map_err(CliError::math)?;
            let direct = recomputed.evaluate(&moved.point).map_err(CliError::math)?;
            Ok(moved.coefficients.max_abs_diff(&direct))
        })
        .collect::<Result<_, _>>()?;
    let (k, worst) = worst_of(&errors);
    Ok(Outcome {
        checks: vec![Check::at_most(
            "naturality",
            worst,
            problem.config.tolerances.naturality,
            k.map(|k| points[k].to_flat()),
        )],
        data: json!({"construction": construction.tag(), "points": points.len()}),
    })
}

/// Index and value of the largest entry; NaN counts as largest.
fn worst_of(values: &[f64]) -> (Option<usize>, f64) {
    let mut best: (Option<usize>, f64) = (None, 0.0);
    for (k, &v) in values.iter().enumerate() {
        if v.is_nan() {
            return (Some(k), f64::NAN);
        }
        if best.0.is_none() || v > best.1 {
            best = (Some(k), v);
        }
    }
    best
}

fn regularity(problem: &Problem, seed: u64) -> Result<Outcome, CliError> {
    let big = problem.vertical()?;
    let h = problem.h()?;
    let points = problem.samples(seed)?;
    let tol = problem.config.tolerances.regularity;
    match kronecker_factor(&big, &h, &points, tol) {
        Ok(factor) => {
            let recovered: Vec<Value> = points
                .par_iter()
                .map(|jp| -> Result<Value, CliError> {
                    let g = factor.g.eval(jp).map_err(CliError::math)?;
                    let rows: Vec<Vec<f64>> = g.row_iter().map(|r| r.iter().copied().collect()).collect();
                    Ok(json!({"point": jp.to_flat(), "g": rows}))
                })
                .collect::<Result<_, _>>()?;
            Ok(Outcome {
                checks: vec![Check::at_most("kronecker", factor.worst_residual, tol, None)],
                data: json!({"recovered": recovered}),
            })
        }
        Err(ConnectionError::NotRegular { residual, point, clause }) => Ok(Outcome {
            checks: vec![Check::at_most("kronecker", residual, tol, Some(point))],
            data: json!({"clause": clause.to_string()}),
        }),
        Err(e) => Err(CliError::math(e)),
    }
}

fn equivalence(problem: &Problem, seed: u64) -> Result<Outcome, CliError> {
    let tol = problem.config.tolerances.equivalence;
    if problem.dims.p == 1 {
        // connection route vs semispray route from the same initial data
        let geo = problem.config.geodesic.as_ref().ok_or_else(|| CliError::config("$.geodesic", "required"))?;
        let a = integrate(problem, geo, Route::Connection, Construction::Ml, geo.steps, geo.t_end, seed)?;
        let b = integrate(problem, geo, Route::Semispray, Construction::Ml, geo.steps, geo.t_end, seed)?;
        let gaps: Vec<f64> = a
            .states
            .iter()
            .zip(&b.states)
            .map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max))
            .collect();
        let (k, worst) = worst_of(&gaps);
        return Ok(Outcome {
            checks: vec![Check::at_most("routes", worst, tol, k.map(|k| vec![a.times[k]]))],
            data: json!({"compared": "connection route vs semispray route", "nodes": gaps.len()}),
        });
    }
    // direction-independent vertical metric: GML agrees with ML for U = F = 0
    let ql = problem.quadratic()?;
    let h = problem.h()?;
    let points = problem.samples(seed)?;
    let big = FundamentalVerticalMetric::product(&h, ql.g()).map_err(CliError::math)?;
    let options = GmlOptions { samples: points.clone(), tol: problem.config.tolerances.regularity, seed };
    let gml = canonical_gml(&big, &h, &h, None, &options).map_err(CliError::math)?;
    let ml = canonical_ml_pge2(&QuadraticLagrangian::kinetic(h, ql.g().clone()).map_err(CliError::math)?)
        .map_err(CliError::math)?;
    let gaps: Vec<f64> = points
        .par_iter()
        .map(|jp| -> Result<f64, CliError> {
            let (x, y) = (gml.evaluate(jp).map_err(CliError::math)?, ml.evaluate(jp).map_err(CliError::math)?);
            Ok(x.max_abs_diff(&y))
        })
        .collect::<Result<_, _>>()?;
    let (k, worst) = worst_of(&gaps);
    Ok(Outcome {
        checks: vec![Check::at_most("gml_vs_ml", worst, tol, k.map(|k| points[k].to_flat()))],
        data: json!({"compared": "GML(h, g) vs ML(h, g, U = 0, F = 0)", "points": points.len()}),
    })
}

fn integrate(
    problem: &Problem,
    geo: &Geodesic,
    route: Route,
    construction: Construction,
    steps: usize,
    t_end: f64,
    seed: u64,
) -> Result<Trajectory, CliError> {
    let d = problem.dims;
    if d.p != 1 {
        return Err(CliError::config("$.dims.p", "geodesics need p = 1"));
    }
    let start = JetPoint::new(d, vec![geo.initial.t], geo.initial.x.clone(), geo.initial.v.clone())
        .map_err(|e| CliError::config("$.geodesic.initial", e.to_string()))?;
    let h = problem.h()?;
    let settings = IntegrationSettings::new(steps);
    match route {
        Route::Connection => {
            let conn = build_connection(problem, construction, seed)?;
            integrate_p1(&conn, &h, &start, t_end, settings).map_err(CliError::math)
        }
        Route::Semispray => {
            let s = semispray_p1(&problem.lagrangian()?, &h).map_err(CliError::math)?;
            integrate_semispray_p1(&s, &h, &start, t_end, settings).map_err(CliError::math)
        }
    }
}

pub struct GeodesicRun {
    pub outcome: Outcome,
    pub trajectory: Trajectory,
}

pub fn geodesic(
    problem: &Problem,
    route: Option<Route>,
    steps: Option<usize>,
    t_end: Option<f64>,
    seed: u64,
) -> Result<GeodesicRun, CliError> {
    let geo = problem.config.geodesic.as_ref().ok_or_else(|| CliError::config("$.geodesic", "required"))?;
    let route = route.unwrap_or(geo.route);
    let steps = steps.unwrap_or(geo.steps);
    let t_end = t_end.unwrap_or(geo.t_end);
    let traj = integrate(problem, geo, route, geo.construction, steps, t_end, seed)?;
    let tol = &problem.config.tolerances;
    let mut checks = Vec::new();

    // On a flat time axis the Γ₀ route conserves the speed φ(x′, x′), and an
    // autonomous Lagrangian conserves y·∂L/∂y − L.
    let h = problem.h()?;
    let mut conserved = Value::Null;
    if time_axis_is_flat(&h, &traj)? {
        let values = if route == Route::Connection && geo.construction == Construction::Gamma0 {
            conserved = json!("speed");
            Some(speeds(&problem.metric()?, &traj)?)
        } else if problem.config.lagrangian.is_some() {
            let values = lagrangian_energy(&problem.lagrangian()?, &traj)?;
            conserved = json!(if values.is_some() { "lagrangian_energy" } else { "none: L depends on t" });
            values
        } else {
            None
        };
        if let Some(values) = values {
            let drift: Vec<f64> = values.iter().map(|s| (s - values[0]).abs()).collect();
            let (k, worst) = worst_of(&drift);
            checks.push(Check::at_most("conservation", worst, tol.conservation, k.map(|k| vec![traj.times[k]])));
        }
    }
    if let Some(expected) = &geo.expected_endpoint {
        let (x, v) = traj.endpoint();
        if expected.x.len() != x.len() || expected.v.len() != v.len() {
            return Err(CliError::config("$.geodesic.expected_endpoint", "dimension mismatch"));
        }
        let gap = x.iter().zip(&expected.x).chain(v.iter().zip(&expected.v)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        checks.push(Check::at_most("endpoint", gap, tol.equivalence, Some(vec![traj.times[traj.times.len() - 1]])));
    }
    let (x, v) = traj.endpoint();
    let data = json!({
        "route": match route { Route::Connection => "connection", Route::Semispray => "semispray" },
        "steps": steps,
        "t_end": t_end,
        "endpoint": {"x": x, "v": v},
        "ode_residual": ode_residual(&traj),
        "conserved": conserved,
        "csv_version": jetconn::harmonic::CSV_VERSION,
    });
    Ok(GeodesicRun { outcome: Outcome { checks, data }, trajectory: traj })
}

fn time_axis_is_flat(h: &MetricField, traj: &Trajectory) -> Result<bool, CliError> {
    let d = h.dims();
    for &t in [traj.times[0], traj.times[traj.times.len() / 2], traj.times[traj.times.len() - 1]].iter() {
        let base = JetPoint::base(d, vec![t], vec![0.0; d.n]).expect("dims match");
        if geometry::christoffel(h, &base).map_err(CliError::math)?.max_abs() != 0.0 {
            return Ok(false);
        }
    }
    Ok(true)
}

fn speeds(phi: &MetricField, traj: &Trajectory) -> Result<Vec<f64>, CliError> {
    let d = phi.dims();
    traj.times
        .iter()
        .zip(traj.states.iter().zip(&traj.velocities))
        .map(|(&t, (x, v))| {
            let base = JetPoint::base(d, vec![t], x.clone()).expect("dims match");
            let g = phi.eval(&base).map_err(CliError::math)?;
            let n = v.len();
            Ok((0..n).map(|i| (0..n).map(|j| v[i] * g[(i, j)] * v[j]).sum::<f64>()).sum())
        })
        .collect()
}

/// `y·∂L/∂y − L` along the trajectory, or `None` when `∂L/∂t` is nonzero
/// somewhere on it.
fn lagrangian_energy(l: &Field, traj: &Trajectory) -> Result<Option<Vec<f64>>, CliError> {
    let mut out = Vec::with_capacity(traj.times.len());
    for ((&t, x), v) in traj.times.iter().zip(&traj.states).zip(&traj.velocities) {
        let n = x.len();
        let point: Vec<f64> = std::iter::once(t).chain(x.iter().copied()).chain(v.iter().copied()).collect();
        let d = eval_derivatives(l.as_ref(), &point, 1).map_err(CliError::math)?;
        if d.first(0) != 0.0 {
            return Ok(None);
        }
        out.push((0..n).map(|i| v[i] * d.first(1 + n + i)).sum::<f64>() - d.value());
    }
    Ok(Some(out))
}

/// Consistency of the stored states and velocities: the largest gap
/// between `x′` and a fourth-order difference of `x` at interior nodes.
fn ode_residual(traj: &Trajectory) -> f64 {
    let (x, v, h) = (&traj.states, &traj.velocities, traj.step);
    let mut worst: f64 = 0.0;
    for k in 2..x.len().saturating_sub(2) {
        for i in 0..x[k].len() {
            let d = (x[k - 2][i] - 8.0 * x[k - 1][i] + 8.0 * x[k + 1][i] - x[k + 2][i]) / (12.0 * h);
            worst = worst.max((d - v[k][i]).abs());
        }
    }
    worst
}

pub fn energy_cmd(problem: &Problem) -> Result<Outcome, CliError> {
    let cfg = problem.config.energy.as_ref().ok_or_else(|| CliError::config("$.energy", "required"))?;
    let d = problem.dims;
    let map = SmoothMap::from_sources(d, &cfg.map).map_err(|e| CliError::config("$.energy.map", e.to_string()))?;
    let l = problem.lagrangian()?;
    let h = problem.h()?;
    let domain = EnergyDomain { lower: cfg.lower, upper: cfg.upper, nodes: cfg.nodes, rule: cfg.rule.into() };
    let value = energy(l.as_ref(), &map, &h, &domain).map_err(CliError::math)?;
    let mut variations = Vec::with_capacity(cfg.perturbations.len());
    for (k, eta) in cfg.perturbations.iter().enumerate() {
        let eta = SmoothMap::from_sources(d, eta)
            .map_err(|e| CliError::config(&format!("$.energy.perturbations[{k}]"), e.to_string()))?;
        variations.push(first_variation(l.as_ref(), &map, &h, &eta, cfg.eps, &domain).map_err(CliError::math)?);
    }
    let mut checks = Vec::new();
    if cfg.extremal {
        let abs: Vec<f64> = variations.iter().map(|v| v.abs()).collect();
        let (k, worst) = worst_of(&abs);
        checks.push(Check::at_most("first_variation", worst, problem.config.tolerances.variation, k.map(|k| vec![k as f64])));
    }
    Ok(Outcome { checks, data: json!({"energy": value, "first_variations": variations}) })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worst_prefers_nan() {
        assert_eq!(worst_of(&[1.0, 3.0, 2.0]), (Some(1), 3.0));
        let (k, v) = worst_of(&[1.0, f64::NAN]);
        assert_eq!(k, Some(1));
        assert!(v.is_nan());
        assert_eq!(worst_of(&[]), (None, 0.0));
    }
}
