//! Ready-made problem configs.

use std::f64::consts::{FRAC_PI_2, TAU};

use serde_json::{json, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Example {
    Flat,
    Sphere,
    Hyperbolic,
    Oscillator,
    EmQuadratic,
}

/// Real root of `x + c·x³ = y` (c > 0) as an expression in `y`.
fn cubic_inverse(y: &str, c: f64) -> String {
    let u = format!("(({y})/{} + sqrt(({y})^2/{} + {}))^(1/3)", 2.0 * c, 4.0 * c * c, 1.0 / (27.0 * c * c * c));
    format!("({u} - 1/({}*{u}))", 3.0 * c)
}

/// `t̃ = 2t + 0.5`, `x̃1 = x1 + 0.1 x1³`, `x̃2 = x2 + 0.2 x2³ + 0.3 x1`.
fn cubic_change() -> Value {
    let x1 = cubic_inverse("x1", 0.1);
    json!({
        "temporal": ["2*t1 + 0.5"],
        "temporal_inverse": ["(t1 - 0.5)/2"],
        "spatial": ["x1 + 0.1*x1^3", "x2 + 0.2*x2^3 + 0.3*x1"],
        "spatial_inverse": [x1.clone(), cubic_inverse(&format!("x2 - 0.3*{x1}"), 0.2)],
    })
}

pub fn config(example: Example) -> Value {
    match example {
        Example::Flat => json!({
            "version": 1,
            "dims": {"p": 1, "n": 2},
            "h": [["1"]],
            "metric": [["1", "0"], ["0", "1"]],
            "lagrangian": {"expr": "v11^2 + v21^2"},
            "change": cubic_change(),
            "samples": {"random": {"count": 20, "t": [[-1.0, 1.0]], "x": [[-1.0, 1.0], [-1.0, 1.0]], "v": [-1.0, 1.0]}},
            "seed": 1,
            "geodesic": {"initial": {"t": 0.0, "x": [0.0, 0.0], "v": [1.0, 0.0]}, "t_end": 1.0, "steps": 100},
            "energy": {
                "map": ["1 + 2*t1", "-t1"],
                "lower": 0.0, "upper": 1.0, "nodes": 1001,
                "perturbations": [["sin(pi*t1)*(1 + t1^2)", "0.3*sin(2*pi*t1)"]],
                "extremal": true
            }
        }),
        Example::Sphere => json!({
            "version": 1,
            "dims": {"p": 1, "n": 2},
            "h": [["1"]],
            "metric": [["1", "0"], ["0", "sin(x1)^2"]],
            "lagrangian": {"expr": "v11^2 + sin(x1)^2*v21^2"},
            "change": cubic_change(),
            "samples": {"random": {"count": 100, "t": [[-0.5, 0.5]], "x": [[0.4, 1.2], [-1.0, 1.0]], "v": [-1.5, 1.5]}},
            "seed": 7,
            "geodesic": {"initial": {"t": 0.0, "x": [FRAC_PI_2, 0.0], "v": [0.0, 1.0]}, "t_end": 2.0, "steps": 2000},
            "energy": {
                "map": ["1.5707963267948966", "t1"],
                "lower": 0.0, "upper": 1.0, "nodes": 1001,
                "perturbations": [["0.1*sin(pi*t1)", "0.2*sin(2*pi*t1)"]],
                "extremal": true
            }
        }),
        Example::Hyperbolic => json!({
            "version": 1,
            "dims": {"p": 1, "n": 2},
            "h": [["exp(2*t1)"]],
            "metric": [["1/x2^2", "0"], ["0", "1/x2^2"]],
            "lagrangian": {"expr": "exp(-2*t1)*(v11^2 + v21^2)/x2^2"},
            "change": cubic_change(),
            "samples": {"random": {"count": 50, "t": [[-0.5, 0.5]], "x": [[-1.0, 1.0], [0.5, 2.0]], "v": [-1.0, 1.0]}},
            "seed": 3,
            "geodesic": {"initial": {"t": 0.0, "x": [0.0, 1.0], "v": [0.5, 0.2]}, "t_end": 1.0, "steps": 1000}
        }),
        Example::Oscillator => json!({
            "version": 1,
            "dims": {"p": 1, "n": 1},
            "h": [["1"]],
            "metric": [["1"]],
            "lagrangian": {"expr": "v11^2 - x1^2"},
            "samples": {"random": {"count": 20, "t": [[0.0, 1.0]], "x": [[-1.0, 1.0]], "v": [-1.0, 1.0]}},
            "seed": 5,
            "geodesic": {
                "initial": {"t": 0.0, "x": [1.0], "v": [0.0]},
                "t_end": TAU,
                "steps": 10000,
                "route": "semispray",
                "construction": "ml",
                "expected_endpoint": {"x": [1.0], "v": [0.0]}
            },
            "energy": {
                "map": ["cos(t1) + 0.5*sin(t1)"],
                "lower": 0.0, "upper": 1.0, "nodes": 1001,
                "perturbations": [["sin(pi*t1)*(1 + t1^2)"]],
                "extremal": true
            }
        }),
        Example::EmQuadratic => json!({
            "version": 1,
            "dims": {"p": 2, "n": 2},
            "h": [["1", "0"], ["0", "1"]],
            "metric": [["1", "0"], ["0", "1"]],
            "lagrangian": {"quadratic": {
                "g": [["exp(t1)", "0"], ["0", "exp(t1)"]],
                "u": [["-x2", "x1"], ["0", "0"]],
                "f": "0"
            }},
            "vertical": {"product": {"g": [["exp(t1)", "0"], ["0", "exp(t1)"]]}},
            "construction": "ml",
            "change": {
                "temporal": ["2*t1 + 0.2*t2", "t2 - 0.5"],
                "temporal_inverse": ["(t1 - 0.2*(t2 + 0.5))/2", "t2 + 0.5"],
                "spatial": cubic_change()["spatial"].clone(),
                "spatial_inverse": cubic_change()["spatial_inverse"].clone()
            },
            "samples": {"random": {"count": 50, "t": [[-0.5, 0.5], [-0.5, 0.5]], "x": [[-1.0, 1.0], [-1.0, 1.0]], "v": [-1.0, 1.0]}},
            "seed": 11
        }),
    }
}
