mod common;

use std::sync::Arc;

use common::{build_change, change_params, samples, sphere};
use jetconn::connection::{
    gamma_zero, CoefficientSource, Coefficients, ConnectionError, NonlinearConnection, Provenance,
};
use jetconn::geometry::{christoffel, inverse_metric, MetricField, MetricKind};
use jetconn::jet::{prolong, transform_connection, CoordinateChange, JetDims, JetPoint};
use jetconn::smooth::TaylorScalar;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn random_metric(d: JetDims, q: &[f64]) -> MetricField {
    MetricField::from_sources(
        MetricKind::Spatial,
        d,
        &[
            vec![format!("2 + {}*x1^2 + sin({}*x2)", q[0], q[1]), format!("{}*x1*x2", q[2])],
            vec![format!("{}*x1*x2", q[2]), format!("2 + cos({}*x1) + {}*x2^2", q[3], q[0])],
        ],
    )
    .unwrap()
}

/// A connection defined pointwise by transforming `inner` under `change`:
/// its coefficients at a new-coordinate point are the transformed ones.
#[derive(Debug)]
struct Transformed {
    inner: NonlinearConnection,
    change: CoordinateChange,
    back: CoordinateChange,
}

impl CoefficientSource for Transformed {
    fn fiber_jet(&self, jp: &JetPoint, _order: usize) -> Result<Coefficients<TaylorScalar>, ConnectionError> {
        let original = prolong(&self.back, jp).map_err(|e| ConnectionError::Invalid(e.to_string()))?;
        let moved = transform_connection(&self.inner, &self.change, &original)
            .map_err(|e| ConnectionError::Invalid(e.to_string()))?;
        Ok(moved.coefficients.map(|c| TaylorScalar::constant(*c)))
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn christoffels_are_symmetric_and_match_differences(q in prop::collection::vec(-0.3..0.3f64, 4), seed in any::<u64>()) {
        let d = JetDims::new(1, 2);
        let m = random_metric(d, &q);
        for jp in samples(d, 10, seed) {
            let c = christoffel(&m, &jp).unwrap();
            let inv = inverse_metric(&m, &jp).unwrap();
            let g = m.eval(&jp).unwrap();
            prop_assert!((&g * &inv - DMatrix::identity(2, 2)).amax() <= 1e-10);
            // oracle: first-kind symbols from central differences of the metric
            let step = 1e-5;
            let dg = |k: usize| {
                let shift = |s: f64| {
                    let mut x = jp.x.clone();
                    x[k] += s;
                    m.eval(&JetPoint::base(d, jp.t.clone(), x).unwrap()).unwrap()
                };
                (shift(step) - shift(-step)) / (2.0 * step)
            };
            let partials = [dg(0), dg(1)];
            for l in 0..2 {
                for j in 0..2 {
                    for k in 0..2 {
                        prop_assert_eq!(c.get(l, j, k), c.get(l, k, j));
                        let want: f64 = (0..2)
                            .map(|s| 0.5 * inv[(l, s)] * (partials[j][(s, k)] + partials[k][(s, j)] - partials[s][(j, k)]))
                            .sum();
                        prop_assert!((c.get(l, j, k) - want).abs() <= 1e-8);
                    }
                }
            }
        }
    }

    #[test]
    fn prolongation_is_functorial(q1 in change_params(2), q2 in change_params(2), seed in any::<u64>()) {
        let d = JetDims::new(2, 2);
        let (c1, c2) = (build_change(d, &q1), build_change(d, &q2));
        let composite = c1.then(&c2);
        for jp in samples(d, 20, seed) {
            let direct = prolong(&composite, &jp).unwrap();
            let stepwise = prolong(&c2, &prolong(&c1, &jp).unwrap()).unwrap();
            prop_assert!(direct.max_abs_diff(&stepwise) <= 1e-9);
            let back = prolong(&c1.inverse(), &prolong(&c1, &jp).unwrap()).unwrap();
            prop_assert!(back.max_abs_diff(&jp) <= 1e-9);
        }
    }

    #[test]
    fn transformation_law_is_a_group_action(q in change_params(2), seed in any::<u64>()) {
        let d = JetDims::new(2, 2);
        let h = MetricField::from_sources(MetricKind::Temporal, d, &[vec!["exp(t2)", "0.1"], vec!["0.1", "1 + t1^2"]]).unwrap();
        let conn = gamma_zero(&h, &sphere(d)).unwrap();
        let change = build_change(d, &q);
        let moved = NonlinearConnection::new(
            d,
            Provenance::User,
            Arc::new(Transformed { inner: conn.clone(), change: (*change).clone(), back: change.inverse() }),
        );
        for jp in samples(d, 20, seed) {
            let there = prolong(&change, &jp).unwrap();
            let returned = transform_connection(&moved, &change.inverse(), &there).unwrap();
            prop_assert!(returned.point.max_abs_diff(&jp) <= 1e-9);
            let original = conn.evaluate(&returned.point).unwrap();
            prop_assert!(returned.coefficients.max_abs_diff(&original) <= 1e-9);
        }
    }
}

#[test]
fn hyperbolic_half_plane_christoffels() {
    let d = JetDims::new(1, 2);
    let m = MetricField::from_sources(MetricKind::Spatial, d, &[vec!["1/x2^2", "0"], vec!["0", "1/x2^2"]]).unwrap();
    for jp in samples(d, 50, 4) {
        let jp = JetPoint::base(d, jp.t.clone(), vec![jp.x[1], 0.3 + jp.x[0]]).unwrap();
        let c = christoffel(&m, &jp).unwrap();
        let y = jp.x[1];
        let want = |l, j, k| match (l, j, k) {
            (0, 0, 1) | (0, 1, 0) => -1.0 / y,
            (1, 0, 0) => 1.0 / y,
            (1, 1, 1) => -1.0 / y,
            _ => 0.0,
        };
        for l in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    assert!((c.get(l, j, k) - want(l, j, k)).abs() <= 1e-10);
                }
            }
        }
    }
}
