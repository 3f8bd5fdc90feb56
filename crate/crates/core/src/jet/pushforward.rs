//! Fields expressed in the coordinates produced by a [`CoordinateChange`].
//!
//! A pushed-forward field takes arguments in the new coordinates, maps them
//! back through the declared inverse, and applies the appropriate tensor
//! transformation. Derivatives of the inverse maps are taken exactly, so the
//! result is itself a smooth field to any order.

use std::sync::Arc;

use super::{CoordinateChange, JetDims};
use crate::geometry::{MetricField, MetricKind};
use crate::smooth::{self, EvalError, Field, ScalarField, TaylorScalar};

/// Original-coordinate arguments and Jacobians at a point given in new
/// coordinates.
pub struct PulledBack {
    /// Flat jet-layout arguments in the original coordinates.
    pub args: Vec<TaylorScalar>,
    /// `dt_dnew[β·p + α] = ∂t^β/∂t̃^α`.
    pub dt_dnew: Vec<TaylorScalar>,
    /// `dnew_dt[α·p + β] = ∂t̃^α/∂t^β`.
    pub dnew_dt: Vec<TaylorScalar>,
    /// `dx_dnew[i·n + k] = ∂x^i/∂x̃^k`.
    pub dx_dnew: Vec<TaylorScalar>,
}

fn map_with_jacobian(
    maps: &[Field],
    args: &[TaylorScalar],
) -> Result<(Vec<TaylorScalar>, Vec<TaylorScalar>), EvalError> {
    let d = args.len();
    let wrt: Vec<usize> = (0..d).collect();
    let mut values = Vec::with_capacity(maps.len());
    let mut jac = Vec::with_capacity(maps.len() * d);
    for f in maps {
        let probed = smooth::probe(f.as_ref(), args, &wrt, 1)?;
        values.push(probed.value());
        jac.extend((0..d).map(|k| probed.partial(&[k])));
    }
    Ok((values, jac))
}

/// Map jet-layout arguments in new coordinates back to the original ones.
pub fn pull_back(change: &CoordinateChange, new_args: &[TaylorScalar]) -> Result<PulledBack, EvalError> {
    let dims = change.dims();
    smooth::check_arity(dims.nvars(), new_args.len())?;
    let (p, n) = (dims.p, dims.n);
    let (t, dt_dnew) = map_with_jacobian(change.temporal_inverse(), &new_args[..p])?;
    let (x, dx_dnew) = map_with_jacobian(change.spatial_inverse(), &new_args[p..p + n])?;
    let dnew_dt = if p == 0 {
        Vec::new()
    } else {
        smooth::invert(&dt_dnew, p).ok_or_else(|| EvalError::NonFinite {
            location: "inverse temporal Jacobian".into(),
        })?
    };
    let vel_new = |k: usize, b: usize| &new_args[dims.v_index(k, b)];
    let mut args = Vec::with_capacity(dims.nvars());
    args.extend(t);
    args.extend(x);
    for i in 0..n {
        for a in 0..p {
            let mut acc = TaylorScalar::constant(0.0);
            for k in 0..n {
                for b in 0..p {
                    acc = acc + &dx_dnew[i * n + k] * vel_new(k, b) * &dnew_dt[b * p + a];
                }
            }
            args.push(acc);
        }
    }
    Ok(PulledBack { args, dt_dnew, dnew_dt, dx_dnew })
}

#[derive(Debug, Clone, Copy)]
enum Rule {
    Scalar,
    /// `h̃_ab = h_μν ∂t^μ/∂t̃^a ∂t^ν/∂t̃^b`
    Temporal(usize, usize),
    /// `g̃_ab = g_ij ∂x^i/∂x̃^a ∂x^j/∂x̃^b`
    Spatial(usize, usize),
    /// `Ũ^(α)_(a) = U^(β)_(i) ∂t̃^α/∂t^β ∂x^i/∂x̃^a`
    Covector(usize, usize),
}

struct Pushed {
    change: Arc<CoordinateChange>,
    sources: Vec<Field>,
    rule: Rule,
}

impl std::fmt::Debug for Pushed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Pushed({:?})", self.rule)
    }
}

impl ScalarField for Pushed {
    fn arity(&self) -> usize {
        self.change.dims().nvars()
    }

    fn eval(&self, args: &[TaylorScalar]) -> Result<TaylorScalar, EvalError> {
        let dims = self.change.dims();
        let (p, n) = (dims.p, dims.n);
        let pulled = pull_back(&self.change, args)?;
        let src = |k: usize| self.sources[k].eval(&pulled.args);
        let mut acc = TaylorScalar::constant(0.0);
        match self.rule {
            Rule::Scalar => return src(0),
            Rule::Temporal(a, b) => {
                for mu in 0..p {
                    for nu in 0..p {
                        let w = &pulled.dt_dnew[mu * p + a] * &pulled.dt_dnew[nu * p + b];
                        acc = acc + src(mu * p + nu)? * w;
                    }
                }
            }
            Rule::Spatial(a, b) => {
                for i in 0..n {
                    for j in 0..n {
                        let w = &pulled.dx_dnew[i * n + a] * &pulled.dx_dnew[j * n + b];
                        acc = acc + src(i * n + j)? * w;
                    }
                }
            }
            Rule::Covector(alpha, a) => {
                for beta in 0..p {
                    for i in 0..n {
                        let w = &pulled.dnew_dt[alpha * p + beta] * &pulled.dx_dnew[i * n + a];
                        acc = acc + src(beta * n + i)? * w;
                    }
                }
            }
        }
        Ok(acc)
    }
}

/// A scalar field on J¹ written in the new coordinates.
pub fn push_scalar(change: &Arc<CoordinateChange>, f: &Field) -> Field {
    Arc::new(Pushed { change: change.clone(), sources: vec![f.clone()], rule: Rule::Scalar })
}

/// A metric transformed as a covariant 2-tensor on its own factor.
pub fn push_metric(change: &Arc<CoordinateChange>, m: &MetricField) -> MetricField {
    let d = m.size();
    let sources: Vec<Field> = (0..d * d).map(|k| m.component(k / d, k % d).clone()).collect();
    let kind = m.kind();
    MetricField::from_fn(kind, m.dims(), |a, b| {
        let rule = match kind {
            MetricKind::Temporal => Rule::Temporal(a, b),
            _ => Rule::Spatial(a, b),
        };
        Arc::new(Pushed { change: change.clone(), sources: sources.clone(), rule }) as Field
    })
}

/// A d-tensor `U^(α)_(i)` given as `fields[α·n + i]`.
pub fn push_covector(change: &Arc<CoordinateChange>, fields: &[Field]) -> Vec<Field> {
    let JetDims { p, n } = change.dims();
    (0..p * n)
        .map(|k| {
            Arc::new(Pushed {
                change: change.clone(),
                sources: fields.to_vec(),
                rule: Rule::Covector(k / n, k % n),
            }) as Field
        })
        .collect()
}
