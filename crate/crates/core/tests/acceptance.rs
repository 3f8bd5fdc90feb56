//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test -p jetconn --test acceptance`. The process exits
//! non-zero when any criterion fails.

use std::f64::consts::PI;
use std::panic::{self, AssertUnwindSafe};
use std::sync::Arc;
use std::time::Instant;

use jetconn::connection::{
    canonical_gml, canonical_ml_p1, canonical_ml_pge2, fundamental_metric, gamma_zero, kronecker_factor,
    semispray_p1, torsion_free_check, FundamentalVerticalMetric, GmlOptions, NonlinearConnection,
    QuadraticLagrangian,
};
use jetconn::exprlang::{self, ExprError};
use jetconn::geometry::{MetricField, MetricKind};
use jetconn::harmonic::{
    first_variation, grid_residual_p2, harmonic_residual, integrate_p1, integrate_semispray_p1, EnergyDomain,
    IntegrationSettings, Quadrature, SmoothMap, Trajectory, DEFAULT_VARIATION_STEP,
};
use jetconn::jet::{push_metric, transform_connection, CoordinateChange, JetBox, JetDims, JetPoint};
use jetconn::smooth::{self, Field, ScalarField, Space, TaylorScalar};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn expr(src: &str, d: JetDims) -> Field {
    Arc::new(exprlang::parse(src, d).unwrap_or_else(|e| panic!("{src}: {e}")))
}

fn temporal(d: JetDims, rows: &[Vec<&str>]) -> MetricField {
    MetricField::from_sources(MetricKind::Temporal, d, rows).unwrap()
}

fn sphere(d: JetDims) -> MetricField {
    MetricField::from_sources(MetricKind::Spatial, d, &[vec!["1", "0"], vec!["0", "sin(x1)^2"]]).unwrap()
}

fn flat_h(d: JetDims) -> MetricField {
    MetricField::flat(MetricKind::Temporal, d)
}

/// Jet points with the base point away from the sphere's poles.
fn jet_samples(d: JetDims, count: usize, seed: u64) -> Vec<JetPoint> {
    let mut x = vec![(0.4, 1.2)];
    x.extend(vec![(-1.0, 1.0); d.n - 1]);
    JetBox::new(d, vec![(-0.5, 0.5); d.p], x, (-1.5, 1.5)).unwrap().sample(count, seed)
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, c| m.max(c.abs()))
}

// ---------------------------------------------------------------- 1

/// Real root of `x + c·x³ = y` (c > 0) as an expression in `y`.
fn cubic_inverse(y: &str, c: f64) -> String {
    let u = format!("(({y})/{} + sqrt(({y})^2/{} + {}))^(1/3)", 2.0 * c, 4.0 * c * c, 1.0 / (27.0 * c * c * c));
    format!("({u} - 1/({}*{u}))", 3.0 * c)
}

fn naturality() -> Outcome {
    let d = JetDims::new(1, 2);
    let h = temporal(d, &[vec!["exp(2*t1)"]]);
    let phi = sphere(d);
    let conn = gamma_zero(&h, &phi).map_err(err)?;
    let points = jet_samples(d, 100, 11);
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for _ in 0..5 {
        let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let a: f64 = sign * rng.gen_range(0.5..2.0);
        let b: f64 = rng.gen_range(-1.0..1.0);
        let (c1, c2, k): (f64, f64, f64) = (rng.gen_range(0.05..0.3), rng.gen_range(0.05..0.3), rng.gen_range(-0.5..0.5));
        let x1_back = cubic_inverse("x1", c1);
        let change = CoordinateChange::from_sources(
            d,
            &[format!("{a}*t1 + {b}")],
            &[format!("(t1 - {b})/{a}")],
            &[format!("x1 + {c1}*x1^3"), format!("x2 + {c2}*x2^3 + {k}*x1")],
            &[x1_back.clone(), cubic_inverse(&format!("x2 - {k}*{x1_back}"), c2)],
        )
        .map_err(err)?;
        let change = Arc::new(change);
        let direct = gamma_zero(&push_metric(&change, &h), &push_metric(&change, &phi)).map_err(err)?;
        for jp in &points {
            let moved = transform_connection(&conn, &change, jp).map_err(err)?;
            let recomputed = direct.evaluate(&moved.point).map_err(err)?;
            worst = worst.max(moved.coefficients.max_abs_diff(&recomputed));
        }
    }
    check(worst <= 1e-8, || format!("max abs error {worst:e} > 1e-8"))?;
    Ok(format!("5 changes x 100 points, max abs error {worst:.2e}"))
}

// ---------------------------------------------------------------- 2

fn acos(u: &TaylorScalar) -> TaylorScalar {
    let x = u.value();
    let w = 1.0 - x * x;
    u.compose(&[x.acos(), -w.powf(-0.5), -x * w.powf(-1.5), -(1.0 + 2.0 * x * x) * w.powf(-2.5)])
}

fn atan(u: &TaylorScalar) -> TaylorScalar {
    let x = u.value();
    let s = 1.0 + x * x;
    u.compose(&[x.atan(), 1.0 / s, -2.0 * x / (s * s), (6.0 * x * x - 2.0) / (s * s * s)])
}

/// Unit-speed great circle through `(π/2, 0)` tilted by `tilt` from the
/// equator: `θ = acos(sin tilt · sin t)`, `φ = atan(cos tilt · tan t)`.
fn great_circle(d: JetDims, tilt: f64) -> SmoothMap {
    let (s, c) = tilt.sin_cos();
    let theta = smooth::field(1, "theta", move |a: &[TaylorScalar]| acos(&(a[0].sin() * s)));
    let phi = smooth::field(1, "phi", move |a: &[TaylorScalar]| atan(&(a[0].tan() * c)));
    SmoothMap::analytic(d, vec![theta, phi]).unwrap()
}

/// `x″ − H x′ + γ(x′, x′)` at interior nodes, with `x″` from fourth-order
/// central differences of the integrated velocities.
fn classical_residual(traj: &Trajectory, big_h: f64) -> f64 {
    let h = traj.step;
    let mut worst: f64 = 0.0;
    let vel = &traj.velocities;
    for k in 2..traj.times.len() - 2 {
        let (x, v) = (&traj.states[k], &vel[k]);
        let acc: Vec<f64> = (0..2)
            .map(|i| (vel[k - 2][i] - 8.0 * vel[k - 1][i] + 8.0 * vel[k + 1][i] - vel[k + 2][i]) / (12.0 * h))
            .collect();
        let (s, c) = x[0].sin_cos();
        let r0 = acc[0] - big_h * v[0] - s * c * v[1] * v[1];
        let r1 = acc[1] - big_h * v[1] + 2.0 * c / s * v[0] * v[1];
        worst = worst.max(r0.abs()).max(r1.abs());
    }
    worst
}

fn harmonic_equivalence() -> Outcome {
    let d = JetDims::new(1, 2);
    let h = flat_h(d);
    let conn = gamma_zero(&h, &sphere(d)).map_err(err)?;
    let mut residual: f64 = 0.0;
    for tilt in [0.0, 0.35, 0.8, 1.2] {
        let circle = great_circle(d, tilt);
        for k in 0..50 {
            let t = 1.2 * k as f64 / 49.0;
            residual = residual.max(max_abs(&harmonic_residual(&circle, &conn, &h, &[t]).map_err(err)?));
        }
    }
    check(residual <= 1e-8, || format!("great-circle residual {residual:e}"))?;

    let curved = temporal(d, &[vec!["exp(2*t1)"]]);
    let curved_conn = gamma_zero(&curved, &sphere(d)).map_err(err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut drift, mut ode): (f64, f64) = (0.0, 0.0);
    for _ in 0..3 {
        let start = JetPoint::new(
            d,
            vec![0.0],
            vec![rng.gen_range(0.7..1.3), rng.gen_range(-1.0..1.0)],
            vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
        )
        .unwrap();
        let traj = integrate_p1(&conn, &h, &start, 1.0, IntegrationSettings::new(10_000)).map_err(err)?;
        let speed = |x: &[f64], v: &[f64]| v[0] * v[0] + x[0].sin().powi(2) * v[1] * v[1];
        let s0 = speed(&traj.states[0], &traj.velocities[0]);
        for (x, v) in traj.states.iter().zip(&traj.velocities) {
            drift = drift.max((speed(x, v) - s0).abs());
        }
        ode = ode.max(classical_residual(&traj, 0.0));
        let bent = integrate_p1(&curved_conn, &curved, &start, 1.0, IntegrationSettings::new(10_000)).map_err(err)?;
        ode = ode.max(classical_residual(&bent, 1.0));
    }
    check(drift <= 1e-8, || format!("speed drift {drift:e}"))?;
    check(ode <= 1e-8, || format!("classical ODE residual {ode:e}"))?;
    Ok(format!("circle residual {residual:.2e}, speed drift {drift:.2e}, ODE residual {ode:.2e}"))
}

// ---------------------------------------------------------------- 3

fn random_bump(rng: &mut ChaCha8Rng, d: JetDims, span: f64) -> SmoothMap {
    let comps: Vec<String> = (0..d.n)
        .map(|_| {
            let k = rng.gen_range(1..=3);
            let (c0, c1): (f64, f64) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            format!("({c0} + {c1}*t1)*sin({k}*pi*t1/{span})")
        })
        .collect();
    SmoothMap::from_sources(d, &comps).unwrap()
}

fn extremal_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst: f64 = 0.0;
    let cases = [
        ("v11^2 + sin(x1)^2*v21^2", JetDims::new(1, 2), vec![1.0, 0.2], vec![0.4, 0.9], 1.0),
        ("v11^2 - x1^2", JetDims::new(1, 1), vec![1.0], vec![0.0], 2.0 * PI),
    ];
    let mut endpoint = 0.0;
    for (src, d, x0, v0, span) in cases {
        let l = expr(src, d);
        let h = flat_h(d);
        let semispray = semispray_p1(&l, &h).map_err(err)?;
        let start = JetPoint::new(d, vec![0.0], x0, v0).unwrap();
        let traj = integrate_semispray_p1(&semispray, &h, &start, span, IntegrationSettings::new(10_000)).map_err(err)?;
        if d.n == 1 {
            for (t, x) in traj.times.iter().zip(&traj.states) {
                endpoint = f64::max(endpoint, (x[0] - t.cos()).abs());
            }
            let (x, v) = traj.endpoint();
            endpoint = f64::max(endpoint, (x[0] - (2.0 * PI).cos()).abs().max((v[0] + (2.0 * PI).sin()).abs()));
        }
        let map = traj.to_map().map_err(err)?;
        let domain = EnergyDomain { lower: 0.0, upper: span, nodes: 0, rule: Quadrature::Simpson };
        for _ in 0..20 {
            let eta = random_bump(&mut rng, d, span);
            let var = first_variation(l.as_ref(), &map, &h, &eta, DEFAULT_VARIATION_STEP, &domain).map_err(err)?;
            worst = worst.max(var.abs());
        }
    }
    check(worst <= 1e-5, || format!("|first variation| {worst:e} > 1e-5"))?;
    check(endpoint <= 1e-6, || format!("oscillator deviates from cos by {endpoint:e}"))?;
    Ok(format!("max |first variation| {worst:.2e} over 40 perturbations, oscillator error {endpoint:.2e}"))
}

// ---------------------------------------------------------------- 4

fn random_spd(rng: &mut ChaCha8Rng) -> [[f64; 2]; 2] {
    let (a, c) = (rng.gen_range(1.0..2.0), rng.gen_range(1.0..2.0));
    let b = rng.gen_range(-0.4..0.4);
    [[a, b], [b, c]]
}

fn kronecker() -> Outcome {
    let d = JetDims::new(2, 2);
    let tol = 1e-9;
    let samples = jet_samples(d, 10, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut round_trip: f64 = 0.0;
    for case in 0..10 {
        let hm = random_spd(&mut rng);
        let (q1, q2, q3): (f64, f64, f64) = (rng.gen_range(0.1..1.0), rng.gen_range(-0.3..0.3), rng.gen_range(0.1..1.0));
        let h = MetricField::from_sources(
            MetricKind::Temporal,
            d,
            &[vec![format!("{} + 0.1*t1^2", hm[0][0]), format!("{}", hm[0][1])], vec![format!("{}", hm[1][0]), format!("{} + 0.2*sin(t2)^2", hm[1][1])]],
        )
        .unwrap();
        let g = MetricField::from_sources(
            MetricKind::Parametric,
            d,
            &[
                vec![format!("1 + {q1}*x1^2"), format!("{q2}*sin(t1)")],
                vec![format!("{q2}*sin(t1)"), format!("2 + {q3}*x2^2*exp(t2)")],
            ],
        )
        .unwrap();
        let big = if case % 2 == 0 {
            FundamentalVerticalMetric::product(&h, &g).map_err(err)?
        } else {
            let u = vec![expr("x2", d), expr("-x1*t1", d), expr("sin(x1)", d), expr("t2", d)];
            let ql = QuadraticLagrangian::new(h.clone(), g.clone(), u, expr("x1*x2", d)).map_err(err)?;
            fundamental_metric(&ql.scalar(), d).map_err(err)?
        };
        let factor = kronecker_factor(&big, &h, &samples, tol).map_err(err)?;
        round_trip = round_trip.max(factor.worst_residual);
        for jp in &samples {
            let diff = factor.g.eval(jp).map_err(err)? - g.eval(jp).map_err(err)?;
            round_trip = round_trip.max(diff.amax());
        }
    }
    check(round_trip <= 1e-10, || format!("round-trip residual {round_trip:e}"))?;

    let mut weakest = f64::INFINITY;
    for _ in 0..10 {
        let hm = random_spd(&mut rng);
        let gm = random_spd(&mut rng);
        let det = hm[0][0] * hm[1][1] - hm[0][1] * hm[1][0];
        let hinv = [[hm[1][1] / det, -hm[0][1] / det], [-hm[1][0] / det, hm[0][0] / det]];
        let w: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut fields = Vec::new();
        for aa in 0..4 {
            for bb in 0..4 {
                let (a, i, b, j) = (aa / 2, aa % 2, bb / 2, bb % 2);
                let base = hinv[a][b] * gm[i][j];
                fields.push(expr(&format!("{base} + 0.05*{}*(1 + v11^2)", w[aa] * w[bb]), d));
            }
        }
        let big = FundamentalVerticalMetric::from_fields(d, fields).map_err(err)?;
        let h = MetricField::constant(MetricKind::Temporal, d, &[hm[0].to_vec(), hm[1].to_vec()]).map_err(err)?;
        match kronecker_factor(&big, &h, &samples, tol) {
            Err(jetconn::connection::ConnectionError::NotRegular { residual, .. }) => weakest = weakest.min(residual),
            other => return Err(format!("perturbed field not rejected: {other:?}")),
        }
    }
    check(weakest >= 10.0 * tol, || format!("weakest rejection residual {weakest:e} < 10 x tol"))?;
    Ok(format!("round-trip residual {round_trip:.2e}; 10/10 perturbed rejected, min residual {weakest:.2e}"))
}

// ---------------------------------------------------------------- 5

fn canonical_connections() -> Result<Vec<(&'static str, NonlinearConnection, JetDims)>, String> {
    let d = JetDims::new(2, 2);
    let h = temporal(d, &[vec!["exp(t2)", "0.1"], vec!["0.1", "1 + t1^2"]]);
    let g = MetricField::from_sources(
        MetricKind::Parametric,
        d,
        &[vec!["exp(t1)*(1 + x2^2)", "0.2*x1"], vec!["0.2*x1", "2 + sin(t2)"]],
    )
    .unwrap();
    let u = vec![expr("-x2", d), expr("x1*t2", d), expr("x1^2", d), expr("sin(x2)", d)];
    let ql = QuadraticLagrangian::new(h.clone(), g.clone(), u, expr("x1*x2", d)).map_err(err)?;
    let samples = jet_samples(d, 10, 77);
    let opts = GmlOptions { samples, tol: 1e-9, seed: 5 };
    let regular = canonical_gml(&FundamentalVerticalMetric::product(&h, &g).map_err(err)?, &h, &h, None, &opts).map_err(err)?;
    let bent = MetricField::from_sources(MetricKind::FiberDependent, d, &[vec!["1 + v11^2", "0"], vec!["0", "1 + v22^2"]])
        .unwrap();
    let apriori = canonical_gml(&FundamentalVerticalMetric::product(&h, &bent).map_err(err)?, &h, &h, Some(&sphere(d)), &opts)
        .map_err(err)?;
    let d1 = JetDims::new(1, 2);
    let ml_p1 = canonical_ml_p1(&expr("v11^2 + sin(x1)^2*v21^2", d1), &temporal(d1, &[vec!["exp(2*t1)"]])).map_err(err)?;
    Ok(vec![
        ("gamma-zero", gamma_zero(&h, &sphere(d)).map_err(err)?, d),
        ("ML-pge2", canonical_ml_pge2(&ql).map_err(err)?, d),
        ("GML-regular", regular, d),
        ("GML-apriori", apriori, d),
        ("ML-p1", ml_p1, d1),
    ])
}

fn torsion() -> Outcome {
    let mut parts = Vec::new();
    for (name, conn, d) in canonical_connections()? {
        let report = torsion_free_check(&conn, &jet_samples(d, 100, 13), 1e-10).map_err(err)?;
        check(report.passed, || format!("{name} fails with violation {:e}", report.worst))?;
        check(conn.provenance().tag() == name, || format!("{name} has provenance {}", conn.provenance().tag()))?;
        parts.push(format!("{name} {:.1e}", report.worst));
    }
    Ok(parts.join(", "))
}

// ---------------------------------------------------------------- 6

fn ml_gml_consistency() -> Outcome {
    let d = JetDims::new(2, 2);
    let h = temporal(d, &[vec!["exp(t1)", "0"], vec!["0", "1 + t2^2"]]);
    let g = MetricField::from_sources(
        MetricKind::Parametric,
        d,
        &[vec!["exp(2*t1)*(1 + x2^2)", "0.3*sin(t2)"], vec!["0.3*sin(t2)", "exp(2*t1)*sin(x1)^2 + 1"]],
    )
    .unwrap();
    let points = jet_samples(d, 100, 17);
    let opts = GmlOptions { samples: points[..10].to_vec(), tol: 1e-9, seed: 1 };
    let gml = canonical_gml(&FundamentalVerticalMetric::product(&h, &g).map_err(err)?, &h, &h, None, &opts).map_err(err)?;
    let ml = canonical_ml_pge2(&QuadraticLagrangian::kinetic(h, g).map_err(err)?).map_err(err)?;
    let mut worst: f64 = 0.0;
    for jp in &points {
        let (a, b) = (gml.evaluate(jp).map_err(err)?, ml.evaluate(jp).map_err(err)?);
        worst = worst.max(a.max_abs_diff(&b));
    }
    check(worst <= 1e-10, || format!("max difference {worst:e}"))?;
    Ok(format!("100 points, max difference {worst:.2e}"))
}

// ---------------------------------------------------------------- 7

fn ad_engine() -> Outcome {
    let d = JetDims::new(1, 1);
    let corpus = [
        "exp(t1)*sin(x1)",
        "log(2 + t1^2)*cos(x1)",
        "sqrt(3 + t1*x1)",
        "tan(0.5*t1) + x1^3",
        "t1^2*x1 - x1^4/3",
        "1/(1 + t1^2 + x1^2)",
        "sin(t1*x1)*exp(-x1)",
        "(2 + cos(t1))^1.5",
        "exp(sin(t1 + x1))",
        "x1*log(1.5 + sin(t1))*v11",
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let steps = [4e-2, 2e-2, 1e-2, 5e-3];
    let (mut lo, mut hi): (f64, f64) = (f64::INFINITY, f64::NEG_INFINITY);
    for src in corpus {
        let f = expr(src, d);
        let point: Vec<f64> = (0..3).map(|_| rng.gen_range(-0.8..0.8)).collect();
        let errs: Vec<f64> = steps
            .iter()
            .map(|&s| smooth::fd_check(f.as_ref(), &point, s).map(|r| r.max()))
            .collect::<Result<_, _>>()
            .map_err(err)?;
        let xs: Vec<f64> = steps.iter().map(|s| s.ln()).collect();
        let ys: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
        let (mx, my) = (xs.iter().sum::<f64>() / 4.0, ys.iter().sum::<f64>() / 4.0);
        let slope = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
            / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
        check((1.8..=2.2).contains(&slope), || format!("{src}: slope {slope:.3}"))?;
        lo = lo.min(slope);
        hi = hi.max(slope);
    }

    // Leibniz and mixed-partial symmetry at order 3
    let space = Space::get(3, 3);
    let mut identity: f64 = 0.0;
    for k in 0..20 {
        let vars: Vec<TaylorScalar> = (0..3).map(|i| TaylorScalar::variable(&space, i, rng.gen_range(-0.8..0.8))).collect();
        let f = expr(corpus[k % 10], d).eval(&vars).map_err(err)?;
        let g = expr(corpus[(k + 3) % 10], d).eval(&vars).map_err(err)?;
        let fg = &f * &g;
        for i in 0..3 {
            let leibniz = f.derivative(i) * &g + &f * g.derivative(i);
            for (a, b) in fg.derivative(i).coefficients().iter().zip(leibniz.coefficients()) {
                identity = identity.max((a - b).abs() / a.abs().max(1.0));
            }
            for j in 0..3 {
                let (a, b) = (f.derivative(i).derivative(j), f.derivative(j).derivative(i));
                for (x, y) in a.coefficients().iter().zip(b.coefficients()) {
                    identity = identity.max((x - y).abs() / x.abs().max(1.0));
                }
                identity = identity.max((f.partial(&[i, j]) - f.partial(&[j, i])).abs());
            }
        }
    }
    check(identity <= 1e-13, || format!("identity defect {identity:e}"))?;
    Ok(format!("slopes in [{lo:.3}, {hi:.3}], identity defect {identity:.1e}"))
}

// ---------------------------------------------------------------- 8

fn integrator_order() -> Outcome {
    let d = JetDims::new(1, 2);
    let h = flat_h(d);
    let conn = gamma_zero(&h, &sphere(d)).map_err(err)?;
    let start = JetPoint::new(d, vec![0.0], vec![1.0, 0.0], vec![0.6, 1.4]).unwrap();
    let end = |steps| -> Result<Vec<f64>, String> {
        let traj = integrate_p1(&conn, &h, &start, 1.5, IntegrationSettings::new(steps)).map_err(err)?;
        let (x, v) = traj.endpoint();
        Ok(x.iter().chain(v).copied().collect())
    };
    let reference = end(6400)?;
    let error = |steps| -> Result<f64, String> {
        Ok(end(steps)?.iter().zip(&reference).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
    };
    let errs = [error(20)?, error(40)?, error(80)?];
    let ratios = [errs[0] / errs[1], errs[1] / errs[2]];
    check(ratios.iter().all(|r| *r >= 12.0), || format!("ratios {ratios:?}"))?;
    Ok(format!("error ratios per halving {:.2}, {:.2}", ratios[0], ratios[1]))
}

// ---------------------------------------------------------------- 9

fn grid_residuals() -> Outcome {
    let d = JetDims::new(2, 2);
    let h = flat_h(d);
    let zero = NonlinearConnection::zero(d);
    let sample = |srcs: &[&str]| {
        SmoothMap::from_sources(d, srcs).unwrap().sample_grid([-0.7, 0.3], [0.13, 0.21], [9, 8]).unwrap()
    };
    let affine = grid_residual_p2(&sample(&["3*t1 - 2*t2 + 1", "0.5*t2 - t1"]), &zero, &h).map_err(err)?;
    let poly = grid_residual_p2(&sample(&["t1^2 - t2^2", "2*t1*t2"]), &zero, &h).map_err(err)?;
    check(affine.max_norm <= 1e-12, || format!("affine residual {:e}", affine.max_norm))?;
    check(poly.max_norm <= 1e-12, || format!("harmonic polynomial residual {:e}", poly.max_norm))?;
    let forced = grid_residual_p2(&sample(&["t1^2", "0"]), &zero, &h).map_err(err)?;
    let mut dev: f64 = 0.0;
    for (_, _, r) in &forced.nodes {
        dev = dev.max((r[0] - 2.0).abs()).max(r[1].abs());
    }
    check(dev <= 1e-12, || format!("(t1^2, 0) residual deviates from (2, 0) by {dev:e}"))?;
    Ok(format!(
        "affine {:.1e}, harmonic polynomial {:.1e}, forced deviation {dev:.1e}",
        affine.max_norm, poly.max_norm
    ))
}

// ---------------------------------------------------------------- 10

const ROUND_TRIP: [&str; 50] = [
    "1", "x1", "t1 + t2", "x1 - x2 - t1", "x1 - (x2 - t1)", "2*x1*x2", "x1/x2/t1", "x1/(x2/t1)",
    "-x1", "--x1", "-x1^2", "(-x1)^2", "x1^2^3", "(x1^2)^3", "x1^-2", "2^-x1^2",
    "sin(x1)", "cos(x1 + x2)", "tan(0.5*t1)", "exp(-t1^2)", "log(1 + x1^2)", "sqrt(2 + v11)", "abs(x1 - 0.5)",
    "sin(x1)^2 + cos(x1)^2", "pi*x1", "2*pi - t1", "1.5e-3*x1", "3E2 + x2", "0.25", "v11*v12 - v21*v22",
    "v_1_1 + v_2_2", "(x1 + x2)*(x1 - x2)", "x1*(x2 + t1)*t2", "(x1*x2)^0.5", "-(x1 + x2)", "-(x1*x2)",
    "x1 - -x2", "x1*-x2", "x1^(t1 + 1)", "exp(sin(cos(x1)))", "1/(1 + exp(-x1))", "((((x1))))",
    "t1*t2*x1*x2", "x1 + x2*t1 - t2/x1", "(x1 - x2)/(t1 + 2)", "sqrt(x1^2 + x2^2 + 1)",
    "2*sin(t1)*cos(t1) - sin(2*t1)", "exp(log(2 + x1))", "abs(-x1)^3", "-2^2",
];

fn parser() -> Outcome {
    let d = JetDims::new(2, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for src in ROUND_TRIP {
        let first = exprlang::parse(src, d).map_err(|e| format!("{src}: {e}"))?;
        let printed = first.to_string();
        let second = exprlang::parse(&printed, d).map_err(|e| format!("{src} -> {printed}: {e}"))?;
        check(first.root() == second.root(), || format!("{src} -> {printed} changes the tree"))?;
        check(second.to_string() == printed, || format!("{printed} is not a fixed point"))?;
        let args: Vec<TaylorScalar> = (0..d.nvars()).map(|_| TaylorScalar::constant(rng.gen_range(0.1..0.9))).collect();
        let (a, b) = (first.eval(&args).map_err(err)?.value(), second.eval(&args).map_err(err)?.value());
        check(a == b, || format!("{src}: {a} != {b}"))?;
    }

    // (source, offset, end of the offending token)
    let malformed: [(&str, usize, usize); 14] = [
        ("1 + * 2", 4, 5),
        ("sin(x1", 6, 6),
        ("x1 + 2)", 6, 7),
        ("2 $ 3", 2, 3),
        ("foo(1)", 0, 3),
        ("x1 x2", 3, 5),
        ("sin 2", 4, 5),
        ("()", 1, 2),
        ("3 +", 3, 3),
        ("x9", 0, 2),
        ("v1 + 1", 0, 2),
        ("2 ^ ^ 3", 4, 5),
        ("((1)", 4, 4),
        ("1.5e + x1", 0, 4),
    ];
    for (src, offset, end) in malformed {
        let e: ExprError = match exprlang::parse(src, d) {
            Ok(_) => return Err(format!("{src:?} parsed")),
            Err(e) => e,
        };
        check(e.offset() == offset, || format!("{src:?}: offset {} != {offset} ({e})", e.offset()))?;
        check(offset <= end && (offset < end || offset == src.len()), || format!("{src:?}: offset outside token"))?;
    }

    let pythagoras = exprlang::parse("sin(x1*t1 + v12)^2 + cos(x1*t1 + v12)^2", d).map_err(err)?;
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let args: Vec<TaylorScalar> = (0..d.nvars()).map(|_| TaylorScalar::constant(rng.gen_range(-10.0..10.0))).collect();
        worst = worst.max((pythagoras.eval(&args).map_err(err)?.value() - 1.0).abs());
    }
    check(worst <= 1e-15, || format!("sin^2 + cos^2 deviates by {worst:e}"))?;
    Ok(format!("50 round trips, {} malformed offsets, identity defect {worst:.1e}", malformed.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("naturality of gamma-zero under product changes", naturality),
        ("harmonic maps vs classical geodesics", harmonic_equivalence),
        ("semispray extremals", extremal_equivalence),
        ("Kronecker factorization", kronecker),
        ("torsion-free canonical connections", torsion),
        ("ML/GML consistency", ml_gml_consistency),
        ("AD engine", ad_engine),
        ("RK4 order", integrator_order),
        ("p=2 grid residuals", grid_residuals),
        ("expression parser", parser),
    ];
    let mut failures = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail} ({secs:.2}s)", k + 1),
            Err(why) => {
                failures += 1;
                println!("FAIL {:>2} {name}: {why} ({secs:.2}s)", k + 1);
            }
        }
    }
    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all {} acceptance criteria passed", criteria.len());
}
