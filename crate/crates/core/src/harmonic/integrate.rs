use std::fmt::Write as _;

use super::{inverse_h, HarmonicError, SmoothMap};
use crate::connection::{NonlinearConnection, Semispray};
use crate::geometry::{self, MetricField};
use crate::jet::{JetDims, JetPoint};

/// Version of the trajectory CSV layout written by [`Trajectory::to_csv`].
pub const CSV_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegrationSettings {
    /// Number of RK4 steps; at least 10.
    pub steps: usize,
    /// Abort when the max-norm of `(x, x′)` exceeds this.
    pub blow_up: f64,
}

impl IntegrationSettings {
    pub fn new(steps: usize) -> Self {
        IntegrationSettings { steps, blow_up: 1e8 }
    }
}

/// Nodes `t_0 < … < t_K` with states and velocities.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub velocities: Vec<Vec<f64>>,
    pub step: f64,
    /// Order of the one-step method.
    pub method_order: usize,
}

impl Trajectory {
    pub fn n(&self) -> usize {
        self.states.first().map_or(0, |s| s.len())
    }

    pub fn endpoint(&self) -> (&[f64], &[f64]) {
        (self.states.last().expect("non-empty"), self.velocities.last().expect("non-empty"))
    }

    /// CSV with header `t,x1..xn,v1..vn`; 17 significant digits per value.
    pub fn to_csv(&self) -> String {
        let n = self.n();
        let mut out = String::from("t");
        for i in 1..=n {
            write!(out, ",x{i}").unwrap();
        }
        for i in 1..=n {
            write!(out, ",v{i}").unwrap();
        }
        out.push('\n');
        for (k, t) in self.times.iter().enumerate() {
            write!(out, "{t:.16e}").unwrap();
            for c in self.states[k].iter().chain(&self.velocities[k]) {
                write!(out, ",{c:.16e}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    /// The trajectory as a sampled map, keeping the integrated velocities.
    pub fn to_map(&self) -> Result<SmoothMap, HarmonicError> {
        SmoothMap::trajectory(
            self.n(),
            self.times[0],
            self.step,
            self.states.clone(),
            Some(self.velocities.clone()),
        )
    }
}

fn axpy(y: &[f64], a: f64, x: &[f64]) -> Vec<f64> {
    y.iter().zip(x).map(|(yi, xi)| yi + a * xi).collect()
}

/// Classical RK4 for `x″ = accel(t, x, x′)`.
fn rk4(
    n: usize,
    initial: &JetPoint,
    t_end: f64,
    settings: IntegrationSettings,
    accel: impl Fn(f64, &[f64], &[f64]) -> Result<Vec<f64>, HarmonicError>,
) -> Result<Trajectory, HarmonicError> {
    if settings.steps < 10 {
        return Err(HarmonicError::InvalidMap(format!("need at least 10 steps, got {}", settings.steps)));
    }
    let t0 = initial.t[0];
    if !(t_end > t0 && t_end.is_finite()) {
        return Err(HarmonicError::InvalidMap("integration span must be increasing and finite".into()));
    }
    let h = (t_end - t0) / settings.steps as f64;
    let rhs = |t: f64, s: &[f64]| -> Result<Vec<f64>, HarmonicError> {
        let (x, v) = s.split_at(n);
        let mut d = v.to_vec();
        d.extend(accel(t, x, v)?);
        Ok(d)
    };
    let mut state: Vec<f64> = initial.x.iter().chain(&initial.v).copied().collect();
    let mut traj = Trajectory {
        times: vec![t0],
        states: vec![initial.x.clone()],
        velocities: vec![initial.v.clone()],
        step: h,
        method_order: 4,
    };
    for k in 0..settings.steps {
        let t = t0 + k as f64 * h;
        let k1 = rhs(t, &state)?;
        let k2 = rhs(t + 0.5 * h, &axpy(&state, 0.5 * h, &k1))?;
        let k3 = rhs(t + 0.5 * h, &axpy(&state, 0.5 * h, &k2))?;
        let k4 = rhs(t + h, &axpy(&state, h, &k3))?;
        for j in 0..state.len() {
            state[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
        let t_next = if k + 1 == settings.steps { t_end } else { t0 + (k + 1) as f64 * h };
        let norm = state.iter().fold(0.0_f64, |m, c| m.max(c.abs()));
        if !norm.is_finite() || norm > settings.blow_up {
            return Err(HarmonicError::BlowUp { time: t_next, norm });
        }
        traj.times.push(t_next);
        traj.states.push(state[..n].to_vec());
        traj.velocities.push(state[n..].to_vec());
    }
    Ok(traj)
}

fn check_initial(initial: &JetPoint, dims: JetDims, h: &MetricField) -> Result<(), HarmonicError> {
    if dims.p != 1 || initial.dims() != dims || h.dims() != dims {
        return Err(HarmonicError::InvalidMap("single-time integration needs p = 1 and matching dims".into()));
    }
    inverse_h(h, &initial.t, dims.n)?;
    Ok(())
}

/// Integrate `x″^i = −M^(i)_(1)1 − N^(i)_(1)m x′^m` from `initial` to `t_end`.
///
/// The `h^{11}` factor of the harmonic equation is a nonzero scalar for
/// `p = 1` and divides out.
pub fn integrate_p1(
    conn: &NonlinearConnection,
    h: &MetricField,
    initial: &JetPoint,
    t_end: f64,
    settings: IntegrationSettings,
) -> Result<Trajectory, HarmonicError> {
    let dims = conn.dims();
    check_initial(initial, dims, h)?;
    let n = dims.n;
    rk4(n, initial, t_end, settings, |t, x, v| {
        let jp = JetPoint::new(dims, vec![t], x.to_vec(), v.to_vec())
            .map_err(|_| HarmonicError::BlowUp { time: t, norm: f64::NAN })?;
        let c = conn.evaluate(&jp).map_err(|source| HarmonicError::Coefficient { time: t, source })?;
        Ok((0..n)
            .map(|i| -c.temporal(i, 0, 0) - (0..n).map(|m| c.spatial(i, 0, m) * v[m]).sum::<f64>())
            .collect())
    })
}

/// Integrate `x″^i = H x′^i − 2G^i(t, x, x′)`, the semispray form of the
/// single-time Euler–Lagrange system.
pub fn integrate_semispray_p1(
    semispray: &Semispray,
    h: &MetricField,
    initial: &JetPoint,
    t_end: f64,
    settings: IntegrationSettings,
) -> Result<Trajectory, HarmonicError> {
    let dims = semispray.dims();
    check_initial(initial, dims, h)?;
    let n = dims.n;
    rk4(n, initial, t_end, settings, |t, x, v| {
        let base = JetPoint::base(dims, vec![t], x.to_vec())
            .map_err(|_| HarmonicError::BlowUp { time: t, norm: f64::NAN })?;
        let big_h = geometry::christoffel(h, &base)
            .map_err(|e| HarmonicError::Coefficient { time: t, source: e.into() })?
            .get(0, 0, 0);
        let g = semispray.eval(t, x, v).map_err(|source| HarmonicError::Coefficient { time: t, source })?;
        Ok((0..n).map(|i| big_h * v[i] - 2.0 * g[i]).collect())
    })
}
