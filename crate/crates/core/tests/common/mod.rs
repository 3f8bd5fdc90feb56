#![allow(dead_code)]

use std::sync::Arc;

use jetconn::exprlang;
use jetconn::geometry::{MetricField, MetricKind};
use jetconn::jet::{CoordinateChange, JetBox, JetDims, JetPoint};
use jetconn::smooth::Field;
use proptest::prelude::*;

pub fn expr(src: &str, d: JetDims) -> Field {
    Arc::new(exprlang::parse(src, d).unwrap_or_else(|e| panic!("{src}: {e}")))
}

pub fn sphere(d: JetDims) -> MetricField {
    MetricField::from_sources(MetricKind::Spatial, d, &[vec!["1", "0"], vec!["0", "sin(x1)^2"]]).unwrap()
}

/// Jet points with `x1` away from the sphere's poles.
pub fn samples(d: JetDims, count: usize, seed: u64) -> Vec<JetPoint> {
    let mut x = vec![(0.4, 1.2)];
    x.extend(vec![(-1.0, 1.0); d.n - 1]);
    JetBox::new(d, vec![(-0.5, 0.5); d.p], x, (-1.5, 1.5)).unwrap().sample(count, seed)
}

/// Real root of `x + c·x³ = y` (c > 0) as an expression in `y`.
pub fn cubic_inverse(y: &str, c: f64) -> String {
    let u = format!("(({y})/{} + sqrt(({y})^2/{} + {}))^(1/3)", 2.0 * c, 4.0 * c * c, 1.0 / (27.0 * c * c * c));
    format!("({u} - 1/({}*{u}))", 3.0 * c)
}

/// Parameters of an affine temporal × cubic-perturbed spatial change.
#[derive(Debug, Clone)]
pub struct ChangeParams {
    /// Row-major `p×p` matrix, kept well conditioned.
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: [f64; 2],
    pub k: f64,
}

pub fn change_params(p: usize) -> impl Strategy<Value = ChangeParams> {
    (
        prop::collection::vec(-0.3..0.3f64, p * p),
        prop::collection::vec(0.5..2.0f64, p),
        prop::collection::vec(-1.0..1.0f64, p),
        (0.05..0.3f64, 0.05..0.3f64, -0.5..0.5f64),
    )
        .prop_map(move |(off, diag, b, (c1, c2, k))| {
            let mut a = off;
            for i in 0..p {
                a[i * p + i] = diag[i];
            }
            ChangeParams { a, b, c: [c1, c2], k }
        })
}

/// `t̃ = A t + b`, `x̃1 = x1 + c1 x1³`, `x̃2 = x2 + c2 x2³ + k x1` (n = 2).
pub fn build_change(d: JetDims, q: &ChangeParams) -> Arc<CoordinateChange> {
    let p = d.p;
    let a = nalgebra::DMatrix::from_row_slice(p, p, &q.a);
    let inv = a.clone().try_inverse().expect("diagonally dominant");
    let t = |i: usize| format!("t{}", i + 1);
    let forward: Vec<String> = (0..p)
        .map(|r| {
            let terms: Vec<String> = (0..p).map(|c| format!("{}*{}", a[(r, c)], t(c))).collect();
            format!("{} + {}", terms.join(" + "), q.b[r])
        })
        .collect();
    let backward: Vec<String> = (0..p)
        .map(|r| {
            let terms: Vec<String> = (0..p).map(|c| format!("{}*({} - {})", inv[(r, c)], t(c), q.b[c])).collect();
            terms.join(" + ")
        })
        .collect();
    let x1_back = cubic_inverse("x1", q.c[0]);
    let change = CoordinateChange::from_sources(
        d,
        &forward,
        &backward,
        &[format!("x1 + {}*x1^3", q.c[0]), format!("x2 + {}*x2^3 + {}*x1", q.c[1], q.k)],
        &[x1_back.clone(), cubic_inverse(&format!("x2 - {}*{x1_back}", q.k), q.c[1])],
    )
    .unwrap();
    Arc::new(change)
}
