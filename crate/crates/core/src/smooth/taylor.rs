//! Truncated multivariate Taylor arithmetic.
//!
//! A [`TaylorScalar`] stores the normalized Taylor coefficients
//! `∂^α f / α!` of a function of `nvars` seed variables, for every
//! multi-index `α` with `|α| ≤ order`. Mixed partials are therefore stored
//! once per multi-index, and permuted index tuples read the same slot.

use std::collections::HashMap;
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};
use std::sync::{Arc, Mutex, OnceLock};

/// Monomial layout and multiplication table for a given `(nvars, order)`.
///
/// Monomials are sorted by total degree; within a degree the ordering does
/// not depend on `order`, so a lower-order space is always a prefix of a
/// higher-order one with the same variable count.
pub struct Space {
    nvars: usize,
    order: usize,
    exps: Vec<Vec<u8>>,
    index: HashMap<Vec<u8>, usize>,
    degree_end: Vec<usize>,
    products: Vec<(u32, u32, u32)>,
}

impl fmt::Debug for Space {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Space")
            .field("nvars", &self.nvars)
            .field("order", &self.order)
            .field("len", &self.exps.len())
            .finish()
    }
}

fn push_degree(nvars: usize, degree: usize, out: &mut Vec<Vec<u8>>) {
    fn rec(pos: usize, left: usize, cur: &mut Vec<u8>, out: &mut Vec<Vec<u8>>) {
        if pos + 1 == cur.len() {
            cur[pos] = left as u8;
            out.push(cur.clone());
            return;
        }
        for k in (0..=left).rev() {
            cur[pos] = k as u8;
            rec(pos + 1, left - k, cur, out);
        }
        cur[pos] = 0;
    }
    if nvars == 0 {
        if degree == 0 {
            out.push(Vec::new());
        }
        return;
    }
    let mut cur = vec![0u8; nvars];
    rec(0, degree, &mut cur, out);
}

impl Space {
    fn build(nvars: usize, order: usize) -> Space {
        let mut exps = Vec::new();
        let mut degree_end = Vec::with_capacity(order + 1);
        for d in 0..=order {
            push_degree(nvars, d, &mut exps);
            degree_end.push(exps.len());
        }
        let index: HashMap<Vec<u8>, usize> =
            exps.iter().enumerate().map(|(k, e)| (e.clone(), k)).collect();
        let degree = |e: &Vec<u8>| e.iter().map(|&a| a as usize).sum::<usize>();
        let mut products = Vec::new();
        for (i, ei) in exps.iter().enumerate() {
            let di = degree(ei);
            for (j, ej) in exps[..degree_end[order - di]].iter().enumerate() {
                let sum: Vec<u8> = ei.iter().zip(ej).map(|(a, b)| a + b).collect();
                products.push((i as u32, j as u32, index[&sum] as u32));
            }
        }
        Space { nvars, order, exps, index, degree_end, products }
    }

    /// Shared space for `(nvars, order)`; built once per process.
    pub fn get(nvars: usize, order: usize) -> Arc<Space> {
        static CACHE: OnceLock<Mutex<HashMap<(usize, usize), Arc<Space>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        let mut guard = cache.lock().unwrap_or_else(|e| e.into_inner());
        guard
            .entry((nvars, order))
            .or_insert_with(|| Arc::new(Space::build(nvars, order)))
            .clone()
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn len(&self) -> usize {
        self.exps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exps.is_empty()
    }

    /// Number of monomials of degree at most `d`.
    pub fn len_to_degree(&self, d: usize) -> usize {
        self.degree_end[d.min(self.order)]
    }

    pub fn exponents(&self, k: usize) -> &[u8] {
        &self.exps[k]
    }

    pub fn position(&self, exps: &[u8]) -> Option<usize> {
        self.index.get(exps).copied()
    }
}

fn same_space(a: &Arc<Space>, b: &Arc<Space>) -> bool {
    Arc::ptr_eq(a, b) || (a.nvars == b.nvars && a.order == b.order)
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

/// A value together with its Taylor coefficients in a set of seed variables.
///
/// Scalars without a space are plain constants; they mix freely with scalars
/// of any space. Mixing two spaces with different orders truncates to the
/// lower order, which is exact since the higher coefficients of the other
/// operand are unknown.
#[derive(Clone)]
pub struct TaylorScalar {
    space: Option<Arc<Space>>,
    coeffs: Vec<f64>,
}

impl fmt::Debug for TaylorScalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.space {
            None => write!(f, "TaylorScalar({})", self.coeffs[0]),
            Some(s) => write!(
                f,
                "TaylorScalar(nvars={}, order={}, {:?})",
                s.nvars, s.order, self.coeffs
            ),
        }
    }
}

impl From<f64> for TaylorScalar {
    fn from(c: f64) -> Self {
        TaylorScalar::constant(c)
    }
}

impl TaylorScalar {
    pub fn constant(c: f64) -> Self {
        TaylorScalar { space: None, coeffs: vec![c] }
    }

    /// The seed variable `var` of `space`, evaluated at `value`.
    pub fn variable(space: &Arc<Space>, var: usize, value: f64) -> Self {
        assert!(var < space.nvars, "seed variable {var} out of range");
        let mut coeffs = vec![0.0; space.len()];
        coeffs[0] = value;
        if space.order >= 1 {
            coeffs[1 + var] = 1.0;
        }
        TaylorScalar { space: Some(space.clone()), coeffs }
    }

    /// A constant lifted into `space` (all derivatives zero).
    pub fn constant_in(space: &Arc<Space>, c: f64) -> Self {
        let mut coeffs = vec![0.0; space.len()];
        coeffs[0] = c;
        TaylorScalar { space: Some(space.clone()), coeffs }
    }

    pub(crate) fn from_parts(space: Arc<Space>, coeffs: Vec<f64>) -> Self {
        debug_assert_eq!(space.len(), coeffs.len());
        TaylorScalar { space: Some(space), coeffs }
    }

    pub fn value(&self) -> f64 {
        self.coeffs[0]
    }

    pub fn space(&self) -> Option<&Arc<Space>> {
        self.space.as_ref()
    }

    pub fn is_constant(&self) -> bool {
        self.space.is_none()
    }

    pub fn nvars(&self) -> usize {
        self.space.as_ref().map_or(0, |s| s.nvars)
    }

    /// Highest derivative order carried; constants report `usize::MAX`.
    pub fn order(&self) -> usize {
        self.space.as_ref().map_or(usize::MAX, |s| s.order)
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|c| c.is_finite())
    }

    /// Mixed partial derivative with respect to the listed seed variables
    /// (repetitions allowed, order irrelevant). The empty list is the value.
    pub fn partial(&self, vars: &[usize]) -> f64 {
        if vars.is_empty() {
            return self.coeffs[0];
        }
        let space = match &self.space {
            None => return 0.0,
            Some(s) => s,
        };
        assert!(
            vars.len() <= space.order,
            "derivative of order {} requested from a scalar of order {}",
            vars.len(),
            space.order
        );
        let mut exps = vec![0u8; space.nvars];
        for &v in vars {
            assert!(v < space.nvars, "seed variable {v} out of range");
            exps[v] += 1;
        }
        let k = space.index[&exps];
        let scale: f64 = exps.iter().map(|&a| factorial(a as usize)).product();
        self.coeffs[k] * scale
    }

    /// Gradient with respect to all seed variables.
    pub fn gradient(&self) -> Vec<f64> {
        (0..self.nvars()).map(|v| self.partial(&[v])).collect()
    }

    /// Exact partial derivative in `var`, one order lower.
    pub fn derivative(&self, var: usize) -> TaylorScalar {
        let space = match &self.space {
            None => return TaylorScalar::constant(0.0),
            Some(s) => s,
        };
        assert!(space.order >= 1, "cannot differentiate an order-0 scalar");
        assert!(var < space.nvars);
        let lower = Space::get(space.nvars, space.order - 1);
        let mut coeffs = vec![0.0; lower.len()];
        let mut e = vec![0u8; space.nvars];
        for (k, c) in coeffs.iter_mut().enumerate() {
            e.copy_from_slice(&lower.exps[k]);
            e[var] += 1;
            let src = space.index[&e];
            *c = e[var] as f64 * self.coeffs[src];
        }
        TaylorScalar::from_parts(lower, coeffs)
    }

    /// Keep only the listed seed variables (others pinned at their base
    /// value); `keep[m]` becomes variable `m` of the result.
    pub fn restrict(&self, keep: &[usize]) -> TaylorScalar {
        let space = match &self.space {
            None => return self.clone(),
            Some(s) => s,
        };
        if keep.is_empty() {
            return TaylorScalar::constant(self.coeffs[0]);
        }
        let target = Space::get(keep.len(), space.order);
        let mut coeffs = vec![0.0; target.len()];
        let mut e = vec![0u8; space.nvars];
        for (k, c) in coeffs.iter_mut().enumerate() {
            e.iter_mut().for_each(|a| *a = 0);
            for (m, &src) in keep.iter().enumerate() {
                e[src] = target.exps[k][m];
            }
            *c = self.coeffs[space.index[&e]];
        }
        TaylorScalar::from_parts(target, coeffs)
    }

    /// Re-express in `target`, mapping seed variable `m` to `map[m]`.
    /// Coefficients above the target order are dropped; monomials the source
    /// does not carry are zero.
    pub fn embed(&self, target: &Arc<Space>, map: &[usize]) -> TaylorScalar {
        let mut coeffs = vec![0.0; target.len()];
        match &self.space {
            None => coeffs[0] = self.coeffs[0],
            Some(space) => {
                assert_eq!(map.len(), space.nvars);
                let mut e = vec![0u8; target.nvars];
                let top = space.len_to_degree(target.order);
                for k in 0..top {
                    e.iter_mut().for_each(|a| *a = 0);
                    for (m, &a) in space.exps[k].iter().enumerate() {
                        e[map[m]] += a;
                    }
                    coeffs[target.index[&e]] = self.coeffs[k];
                }
            }
        }
        TaylorScalar::from_parts(target.clone(), coeffs)
    }

    /// Drop coefficients above `order`.
    pub fn truncate(&self, order: usize) -> TaylorScalar {
        match &self.space {
            Some(s) if s.order > order => {
                let lower = Space::get(s.nvars, order);
                let coeffs = self.coeffs[..lower.len()].to_vec();
                TaylorScalar::from_parts(lower, coeffs)
            }
            _ => self.clone(),
        }
    }

    fn common_space(a: &TaylorScalar, b: &TaylorScalar) -> Option<Arc<Space>> {
        match (&a.space, &b.space) {
            (None, None) => None,
            (Some(s), None) | (None, Some(s)) => Some(s.clone()),
            (Some(s), Some(t)) => {
                assert_eq!(
                    s.nvars, t.nvars,
                    "mixing Taylor scalars over different seed sets"
                );
                if same_space(s, t) || s.order <= t.order {
                    Some(s.clone())
                } else {
                    Some(t.clone())
                }
            }
        }
    }

    fn add_impl(&self, rhs: &TaylorScalar, sign: f64) -> TaylorScalar {
        match Self::common_space(self, rhs) {
            None => TaylorScalar::constant(self.coeffs[0] + sign * rhs.coeffs[0]),
            Some(space) => {
                let len = space.len();
                let mut coeffs = vec![0.0; len];
                for (c, a) in coeffs.iter_mut().zip(&self.coeffs) {
                    *c = *a;
                }
                for (c, b) in coeffs.iter_mut().zip(&rhs.coeffs) {
                    *c += sign * b;
                }
                TaylorScalar::from_parts(space, coeffs)
            }
        }
    }

    fn scale(&self, k: f64) -> TaylorScalar {
        TaylorScalar {
            space: self.space.clone(),
            coeffs: self.coeffs.iter().map(|c| c * k).collect(),
        }
    }

    fn mul_impl(&self, rhs: &TaylorScalar) -> TaylorScalar {
        match (&self.space, &rhs.space) {
            (None, _) => rhs.scale(self.coeffs[0]),
            (_, None) => self.scale(rhs.coeffs[0]),
            _ => {
                let space = Self::common_space(self, rhs).unwrap();
                let mut coeffs = vec![0.0; space.len()];
                let (a, b) = (&self.coeffs, &rhs.coeffs);
                for &(i, j, k) in &space.products {
                    coeffs[k as usize] += a[i as usize] * b[j as usize];
                }
                TaylorScalar::from_parts(space, coeffs)
            }
        }
    }

    /// Compose with a univariate function given its derivatives
    /// `d[k] = f^(k)(value)` for `k = 0..=order`.
    pub fn compose(&self, derivs: &[f64]) -> TaylorScalar {
        let space = match &self.space {
            None => return TaylorScalar::constant(derivs[0]),
            Some(s) => s.clone(),
        };
        assert!(derivs.len() > space.order);
        let mut delta = self.clone();
        delta.coeffs[0] = 0.0;
        let mut out = TaylorScalar::constant_in(&space, derivs[0]);
        let mut power = delta.clone();
        for (k, d) in derivs.iter().enumerate().take(space.order + 1).skip(1) {
            let w = d / factorial(k);
            if w != 0.0 {
                for (o, p) in out.coeffs.iter_mut().zip(&power.coeffs) {
                    *o += w * p;
                }
            }
            if k < space.order {
                power = power.mul_impl(&delta);
            }
        }
        out
    }

    fn order_for_series(&self) -> usize {
        self.space.as_ref().map_or(0, |s| s.order)
    }

    pub fn exp(&self) -> TaylorScalar {
        let e = self.value().exp();
        self.compose(&vec![e; self.order_for_series() + 1])
    }

    pub fn sin(&self) -> TaylorScalar {
        let (s, c) = self.value().sin_cos();
        let cycle = [s, c, -s, -c];
        let d: Vec<f64> = (0..=self.order_for_series()).map(|k| cycle[k % 4]).collect();
        self.compose(&d)
    }

    pub fn cos(&self) -> TaylorScalar {
        let (s, c) = self.value().sin_cos();
        let cycle = [c, -s, -c, s];
        let d: Vec<f64> = (0..=self.order_for_series()).map(|k| cycle[k % 4]).collect();
        self.compose(&d)
    }

    /// Tangent; derivatives follow from `P_{k+1}(t) = P_k'(t)(1 + t²)`.
    pub fn tan(&self) -> TaylorScalar {
        let t = self.value().tan();
        let order = self.order_for_series();
        let mut poly = vec![0.0, 1.0];
        let mut d = Vec::with_capacity(order + 1);
        for _ in 0..=order {
            d.push(poly.iter().rev().fold(0.0, |acc, c| acc * t + c));
            let deriv: Vec<f64> = poly
                .iter()
                .enumerate()
                .skip(1)
                .map(|(k, c)| k as f64 * c)
                .collect();
            let mut next = vec![0.0; deriv.len() + 2];
            for (k, c) in deriv.iter().enumerate() {
                next[k] += c;
                next[k + 2] += c;
            }
            poly = next;
        }
        self.compose(&d)
    }

    /// Natural logarithm; non-positive values yield non-finite coefficients.
    pub fn ln(&self) -> TaylorScalar {
        let u = self.value();
        let order = self.order_for_series();
        let mut d = vec![if u > 0.0 { u.ln() } else { f64::NAN }];
        for k in 1..=order {
            let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
            d.push(sign * factorial(k - 1) / u.powi(k as i32));
        }
        self.compose(&d)
    }

    pub fn powi(&self, n: i32) -> TaylorScalar {
        let u = self.value();
        let order = self.order_for_series();
        let mut d = Vec::with_capacity(order + 1);
        let mut factor = 1.0;
        for k in 0..=order {
            if factor == 0.0 {
                d.push(0.0);
            } else {
                d.push(factor * u.powi(n - k as i32));
            }
            factor *= (n - k as i32) as f64;
        }
        self.compose(&d)
    }

    /// Real power with a constant exponent; the base must be positive
    /// unless the exponent is an integer.
    pub fn powf(&self, c: f64) -> TaylorScalar {
        if c.fract() == 0.0 && c.abs() < i32::MAX as f64 {
            return self.powi(c as i32);
        }
        let u = self.value();
        let order = self.order_for_series();
        let mut d = Vec::with_capacity(order + 1);
        let mut factor = 1.0;
        for k in 0..=order {
            d.push(if u >= 0.0 { factor * u.powf(c - k as f64) } else { f64::NAN });
            factor *= c - k as f64;
        }
        self.compose(&d)
    }

    /// `self^rhs`; falls back to `exp(rhs·ln self)` for a varying exponent.
    pub fn pow(&self, rhs: &TaylorScalar) -> TaylorScalar {
        if rhs.coeffs[1..].iter().all(|&c| c == 0.0) {
            self.powf(rhs.value())
        } else {
            (rhs * &self.ln()).exp()
        }
    }

    pub fn sqrt(&self) -> TaylorScalar {
        self.powf(0.5)
    }

    pub fn recip(&self) -> TaylorScalar {
        self.powi(-1)
    }

    /// Absolute value; not differentiable at zero (non-finite coefficients).
    pub fn abs(&self) -> TaylorScalar {
        let u = self.value();
        let order = self.order_for_series();
        if u == 0.0 {
            let mut d = vec![f64::NAN; order + 1];
            d[0] = 0.0;
            return self.compose(&d);
        }
        if u > 0.0 {
            self.clone()
        } else {
            -self
        }
    }
}

impl Neg for &TaylorScalar {
    type Output = TaylorScalar;
    fn neg(self) -> TaylorScalar {
        self.scale(-1.0)
    }
}

impl Neg for TaylorScalar {
    type Output = TaylorScalar;
    fn neg(self) -> TaylorScalar {
        self.scale(-1.0)
    }
}

macro_rules! binop {
    ($tr:ident, $method:ident, |$a:ident, $b:ident| $body:expr) => {
        impl $tr<&TaylorScalar> for &TaylorScalar {
            type Output = TaylorScalar;
            fn $method(self, $b: &TaylorScalar) -> TaylorScalar {
                let $a = self;
                $body
            }
        }
        impl $tr<TaylorScalar> for TaylorScalar {
            type Output = TaylorScalar;
            fn $method(self, rhs: TaylorScalar) -> TaylorScalar {
                $tr::$method(&self, &rhs)
            }
        }
        impl $tr<&TaylorScalar> for TaylorScalar {
            type Output = TaylorScalar;
            fn $method(self, rhs: &TaylorScalar) -> TaylorScalar {
                $tr::$method(&self, rhs)
            }
        }
        impl $tr<TaylorScalar> for &TaylorScalar {
            type Output = TaylorScalar;
            fn $method(self, rhs: TaylorScalar) -> TaylorScalar {
                $tr::$method(self, &rhs)
            }
        }
        impl $tr<f64> for &TaylorScalar {
            type Output = TaylorScalar;
            fn $method(self, rhs: f64) -> TaylorScalar {
                $tr::$method(self, &TaylorScalar::constant(rhs))
            }
        }
        impl $tr<f64> for TaylorScalar {
            type Output = TaylorScalar;
            fn $method(self, rhs: f64) -> TaylorScalar {
                $tr::$method(&self, &TaylorScalar::constant(rhs))
            }
        }
        impl $tr<TaylorScalar> for f64 {
            type Output = TaylorScalar;
            fn $method(self, rhs: TaylorScalar) -> TaylorScalar {
                $tr::$method(&TaylorScalar::constant(self), &rhs)
            }
        }
        impl $tr<&TaylorScalar> for f64 {
            type Output = TaylorScalar;
            fn $method(self, rhs: &TaylorScalar) -> TaylorScalar {
                $tr::$method(&TaylorScalar::constant(self), rhs)
            }
        }
    };
}

binop!(Add, add, |a, b| a.add_impl(b, 1.0));
binop!(Sub, sub, |a, b| a.add_impl(b, -1.0));
binop!(Mul, mul, |a, b| a.mul_impl(b));
binop!(Div, div, |a, b| match &b.space {
    None => a.scale(1.0 / b.coeffs[0]),
    Some(_) => a.mul_impl(&b.recip()),
});

/// Sum of an iterator of scalars.
pub fn sum<I: IntoIterator<Item = TaylorScalar>>(items: I) -> TaylorScalar {
    items
        .into_iter()
        .fold(TaylorScalar::constant(0.0), |acc, x| acc + x)
}

/// Inverse of a dense row-major `d×d` matrix of Taylor scalars by
/// Gauss–Jordan elimination, pivoting on the base values.
///
/// Returns `None` when a pivot vanishes at the base point.
pub fn invert(matrix: &[TaylorScalar], d: usize) -> Option<Vec<TaylorScalar>> {
    assert_eq!(matrix.len(), d * d);
    let mut a = matrix.to_vec();
    let mut inv: Vec<TaylorScalar> = (0..d * d)
        .map(|k| TaylorScalar::constant(if k / d == k % d { 1.0 } else { 0.0 }))
        .collect();
    let scale = matrix.iter().map(|m| m.value().abs()).fold(0.0, f64::max);
    for col in 0..d {
        let pivot = (col..d)
            .max_by(|&r, &s| {
                a[r * d + col]
                    .value()
                    .abs()
                    .total_cmp(&a[s * d + col].value().abs())
            })
            .unwrap();
        if a[pivot * d + col].value().abs() <= 1e-300_f64.max(scale * 1e-15) {
            return None;
        }
        if pivot != col {
            for k in 0..d {
                a.swap(pivot * d + k, col * d + k);
                inv.swap(pivot * d + k, col * d + k);
            }
        }
        let p = a[col * d + col].recip();
        for k in 0..d {
            a[col * d + k] = &a[col * d + k] * &p;
            inv[col * d + k] = &inv[col * d + k] * &p;
        }
        for r in 0..d {
            if r == col {
                continue;
            }
            let f = a[r * d + col].clone();
            if f.coeffs.iter().all(|&c| c == 0.0) {
                continue;
            }
            for k in 0..d {
                a[r * d + k] = &a[r * d + k] - &(&f * &a[col * d + k]);
                inv[r * d + k] = &inv[r * d + k] - &(&f * &inv[col * d + k]);
            }
        }
    }
    Some(inv)
}
