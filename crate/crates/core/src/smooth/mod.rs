//! Forward-mode differentiation of scalar fields up to third order.
//!
//! Fields are evaluated over [`TaylorScalar`] arguments, so any field written
//! against the arithmetic in [`taylor`] yields exact partials. [`fd_check`]
//! compares those partials with central differences and is meant for tests.

pub mod taylor;

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

pub use taylor::{invert, sum, Space, TaylorScalar};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("field expects {expected} arguments, got {found}")]
    Arity { expected: usize, found: usize },
    #[error("derivative order {0} is not supported (expected 0..=3)")]
    Order(usize),
    #[error("{function} is undefined at {value} ({location})")]
    Domain {
        function: &'static str,
        value: f64,
        location: String,
    },
    #[error("non-finite value produced at {location}")]
    NonFinite { location: String },
}

/// A smooth scalar function of a flat list of real variables.
///
/// Implementations must be deterministic and side-effect free: every
/// evaluation is a pure function of its arguments.
pub trait ScalarField: Send + Sync + fmt::Debug {
    fn arity(&self) -> usize;

    fn eval(&self, args: &[TaylorScalar]) -> Result<TaylorScalar, EvalError>;

    /// Whether the field may vary with argument `var`. Used only to skip
    /// work; returning `true` is always correct.
    fn depends_on(&self, _var: usize) -> bool {
        true
    }
}

pub type Field = Arc<dyn ScalarField>;

/// A field backed by a closure over Taylor scalars.
pub struct FnField<F> {
    arity: usize,
    name: String,
    f: F,
}

impl<F> fmt::Debug for FnField<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "FnField({}, arity {})", self.name, self.arity)
    }
}

impl<F> ScalarField for FnField<F>
where
    F: Fn(&[TaylorScalar]) -> TaylorScalar + Send + Sync,
{
    fn arity(&self) -> usize {
        self.arity
    }

    fn eval(&self, args: &[TaylorScalar]) -> Result<TaylorScalar, EvalError> {
        check_arity(self.arity, args.len())?;
        let out = (self.f)(args);
        if !out.is_finite() {
            return Err(EvalError::NonFinite { location: self.name.clone() });
        }
        Ok(out)
    }
}

/// Wrap a closure as a shared field.
pub fn field<F>(arity: usize, name: &str, f: F) -> Field
where
    F: Fn(&[TaylorScalar]) -> TaylorScalar + Send + Sync + 'static,
{
    Arc::new(FnField { arity, name: name.to_string(), f })
}

/// A field that is identically `value`.
pub fn constant_field(arity: usize, value: f64) -> Field {
    #[derive(Debug)]
    struct Const(usize, f64);
    impl ScalarField for Const {
        fn arity(&self) -> usize {
            self.0
        }
        fn eval(&self, args: &[TaylorScalar]) -> Result<TaylorScalar, EvalError> {
            check_arity(self.0, args.len())?;
            Ok(TaylorScalar::constant(self.1))
        }
        fn depends_on(&self, _var: usize) -> bool {
            false
        }
    }
    Arc::new(Const(arity, value))
}

pub(crate) fn check_arity(expected: usize, found: usize) -> Result<(), EvalError> {
    if expected != found {
        return Err(EvalError::Arity { expected, found });
    }
    Ok(())
}

/// Value and all partial derivatives of a field up to some order.
#[derive(Debug, Clone)]
pub struct Derivatives {
    inner: TaylorScalar,
    order: usize,
}

impl Derivatives {
    pub fn value(&self) -> f64 {
        self.inner.value()
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Partial derivative in the listed variables; any permutation of the
    /// list reads the same stored coefficient.
    pub fn partial(&self, vars: &[usize]) -> f64 {
        assert!(vars.len() <= self.order, "order {} not computed", vars.len());
        self.inner.partial(vars)
    }

    pub fn first(&self, i: usize) -> f64 {
        self.partial(&[i])
    }

    pub fn second(&self, i: usize, j: usize) -> f64 {
        self.partial(&[i, j])
    }

    pub fn third(&self, i: usize, j: usize, k: usize) -> f64 {
        self.partial(&[i, j, k])
    }

    pub fn taylor(&self) -> &TaylorScalar {
        &self.inner
    }
}

/// Evaluate `field` at `point` with derivatives in the variables `seeds`
/// (the rest held constant) up to `order`.
pub fn eval_seeded(
    field: &dyn ScalarField,
    point: &[f64],
    seeds: &[usize],
    order: usize,
) -> Result<TaylorScalar, EvalError> {
    check_arity(field.arity(), point.len())?;
    let space = Space::get(seeds.len(), order);
    let mut args: Vec<TaylorScalar> = point.iter().map(|&c| TaylorScalar::constant(c)).collect();
    if order > 0 {
        for (k, &var) in seeds.iter().enumerate() {
            args[var] = TaylorScalar::variable(&space, k, point[var]);
        }
    }
    let out = field.eval(&args)?;
    if !out.is_finite() {
        return Err(EvalError::NonFinite { location: format!("{field:?}") });
    }
    // Constant results are lifted so that callers can read any partial.
    Ok(match out.space() {
        None if order > 0 => out.embed(&space, &[]),
        _ => out,
    })
}

/// Value and every partial derivative of `field` at `point` up to `order`.
/// Order 0 is served by the order-1 machinery.
pub fn eval_derivatives(
    field: &dyn ScalarField,
    point: &[f64],
    order: usize,
) -> Result<Derivatives, EvalError> {
    if order > 3 {
        return Err(EvalError::Order(order));
    }
    let seeds: Vec<usize> = (0..point.len()).collect();
    let inner = eval_seeded(field, point, &seeds, order.max(1))?;
    Ok(Derivatives { inner, order })
}

/// Result of evaluating a field at Taylor arguments with extra probe
/// variables attached to some of them.
///
/// This gives partial derivatives of the field *at a composite point*:
/// `partial(&[k])` is `(∂f/∂u_{wrt[k]})(args)`, still expanded in the
/// original seed variables of `args` to their full order.
#[derive(Debug, Clone)]
pub struct Probed {
    result: TaylorScalar,
    base_vars: usize,
    base_order: Option<usize>,
}

impl Probed {
    pub fn value(&self) -> TaylorScalar {
        self.partial(&[])
    }

    /// Partial in probe variables `probes` (indices into the `wrt` list).
    pub fn partial(&self, probes: &[usize]) -> TaylorScalar {
        let mut r = self.result.clone();
        for &k in probes {
            r = r.derivative(self.base_vars + k);
        }
        let keep: Vec<usize> = (0..self.base_vars).collect();
        let r = r.restrict(&keep);
        match self.base_order {
            None => TaylorScalar::constant(r.value()),
            Some(o) => {
                let r = r.truncate(o);
                if r.is_constant() {
                    r.embed(&Space::get(self.base_vars, o), &[])
                } else {
                    r
                }
            }
        }
    }
}

/// Evaluate `field` at `args` with probe variables added to the arguments
/// listed in `wrt`, carrying `extra` additional orders so that partials of
/// order up to `extra` in the probes remain exact to the base order.
pub fn probe(
    field: &dyn ScalarField,
    args: &[TaylorScalar],
    wrt: &[usize],
    extra: usize,
) -> Result<Probed, EvalError> {
    check_arity(field.arity(), args.len())?;
    let base = args.iter().find_map(|a| a.space().cloned());
    let (base_vars, base_order) = match &base {
        Some(s) => (s.nvars(), Some(s.order())),
        None => (0, None),
    };
    let order = base_order.unwrap_or(0) + extra;
    let space = Space::get(base_vars + wrt.len(), order);
    let map: Vec<usize> = (0..base_vars).collect();
    let mut lifted: Vec<TaylorScalar> = args
        .iter()
        .map(|a| {
            if a.is_constant() {
                a.clone()
            } else {
                a.embed(&space, &map)
            }
        })
        .collect();
    for (k, &var) in wrt.iter().enumerate() {
        let probe = TaylorScalar::variable(&space, base_vars + k, 0.0);
        lifted[var] = &lifted[var] + &probe;
    }
    let result = field.eval(&lifted)?;
    let result = if result.is_constant() {
        result.embed(&space, &[])
    } else {
        result
    };
    Ok(Probed { result, base_vars, base_order })
}

/// Maximum relative deviation between exact and central-difference partials.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdReport {
    pub first_order: f64,
    pub second_order: f64,
}

impl FdReport {
    pub fn max(&self) -> f64 {
        self.first_order.max(self.second_order)
    }
}

fn rel_dev(exact: f64, approx: f64) -> f64 {
    (exact - approx).abs() / exact.abs().max(1.0)
}

/// Compare first and second partials of `field` at `point` against central
/// differences with the given step. Test-suite helper.
pub fn fd_check(field: &dyn ScalarField, point: &[f64], step: f64) -> Result<FdReport, EvalError> {
    assert!(step > 0.0, "finite-difference step must be positive");
    let d = eval_derivatives(field, point, 2)?;
    let f = |p: &[f64]| -> Result<f64, EvalError> {
        let args: Vec<TaylorScalar> = p.iter().map(|&c| TaylorScalar::constant(c)).collect();
        Ok(field.eval(&args)?.value())
    };
    let shifted = |moves: &[(usize, f64)]| -> Vec<f64> {
        let mut p = point.to_vec();
        for &(i, s) in moves {
            p[i] += s;
        }
        p
    };
    let n = point.len();
    let f0 = f(point)?;
    let mut first_order: f64 = 0.0;
    let mut second_order: f64 = 0.0;
    for i in 0..n {
        let fp = f(&shifted(&[(i, step)]))?;
        let fm = f(&shifted(&[(i, -step)]))?;
        first_order = first_order.max(rel_dev(d.first(i), (fp - fm) / (2.0 * step)));
        second_order =
            second_order.max(rel_dev(d.second(i, i), (fp - 2.0 * f0 + fm) / (step * step)));
        for j in (i + 1)..n {
            let fpp = f(&shifted(&[(i, step), (j, step)]))?;
            let fpm = f(&shifted(&[(i, step), (j, -step)]))?;
            let fmp = f(&shifted(&[(i, -step), (j, step)]))?;
            let fmm = f(&shifted(&[(i, -step), (j, -step)]))?;
            let mixed = (fpp - fpm - fmp + fmm) / (4.0 * step * step);
            second_order = second_order.max(rel_dev(d.second(i, j), mixed));
        }
    }
    Ok(FdReport { first_order, second_order })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square() -> Field {
        field(1, "x^2", |a| &a[0] * &a[0])
    }

    #[test]
    fn square_at_three() {
        let d = eval_derivatives(square().as_ref(), &[3.0], 2).unwrap();
        assert_eq!((d.value(), d.first(0), d.second(0, 0)), (9.0, 6.0, 2.0));
    }

    #[test]
    fn sine_at_zero_order_three() {
        let f = field(1, "sin", |a| a[0].sin());
        let d = eval_derivatives(f.as_ref(), &[0.0], 3).unwrap();
        assert_eq!(
            [d.value(), d.first(0), d.second(0, 0), d.third(0, 0, 0)],
            [0.0, 1.0, 0.0, -1.0]
        );
    }

    #[test]
    fn arity_mismatch() {
        let err = eval_derivatives(square().as_ref(), &[1.0, 2.0], 1).unwrap_err();
        assert_eq!(err, EvalError::Arity { expected: 1, found: 2 });
    }

    #[test]
    fn order_four_rejected() {
        assert_eq!(
            eval_derivatives(square().as_ref(), &[1.0], 4).unwrap_err(),
            EvalError::Order(4)
        );
    }

    #[test]
    fn log_of_negative_is_an_error() {
        let f = field(1, "log(x)", |a| a[0].ln());
        assert!(matches!(
            eval_derivatives(f.as_ref(), &[-1.0], 1),
            Err(EvalError::NonFinite { .. })
        ));
    }

    #[test]
    fn order_zero_uses_order_one() {
        let d = eval_derivatives(square().as_ref(), &[2.0], 0).unwrap();
        assert_eq!(d.value(), 4.0);
        assert_eq!(d.order(), 0);
    }

    #[test]
    fn constant_field_has_zero_deviation() {
        let c = constant_field(3, 2.5);
        let r = fd_check(c.as_ref(), &[0.1, -2.0, 7.0], 1e-3).unwrap();
        assert_eq!(r.max(), 0.0);
    }

    #[test]
    fn cubic_fd_deviation_small() {
        let f = field(1, "x^3", |a| a[0].powi(3));
        let r = fd_check(f.as_ref(), &[1.0], 1e-4).unwrap();
        assert!(r.max() <= 1e-7, "{r:?}");
    }

    #[test]
    fn exp_fd_deviation_shrinks_fourfold() {
        let f = field(1, "exp", |a| a[0].exp());
        let devs: Vec<f64> = [1e-2, 5e-3, 2.5e-3]
            .iter()
            .map(|&h| fd_check(f.as_ref(), &[0.0], h).unwrap().max())
            .collect();
        for w in devs.windows(2) {
            let ratio = w[0] / w[1];
            assert!((3.6..4.4).contains(&ratio), "ratio {ratio}");
        }
    }

    #[test]
    fn probe_gives_partials_at_composite_point() {
        // f(a, b) = a^2 b, probed at a = s^2, b = 3 with s the seed.
        let f = field(2, "a^2 b", |a| &a[0] * &a[0] * &a[1]);
        let space = Space::get(1, 2);
        let s = TaylorScalar::variable(&space, 0, 0.7);
        let args = vec![&s * &s, TaylorScalar::constant(3.0)];
        let probed = probe(f.as_ref(), &args, &[0], 1).unwrap();
        // ∂f/∂a = 2ab = 6 s^2 → value 2.94, d/ds 12s = 8.4, d2/ds2 = 12
        let da = probed.partial(&[0]);
        assert!((da.value() - 6.0 * 0.49).abs() < 1e-14);
        assert!((da.partial(&[0]) - 8.4).abs() < 1e-13);
        assert!((da.partial(&[0, 0]) - 12.0).abs() < 1e-13);
    }
}
