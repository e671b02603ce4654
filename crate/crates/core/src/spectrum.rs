//! Eigenvalue sequences, the contraction semigroup `Q_t`, and the norms
//! `|w|_t` and `|x|_beta`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Finite coordinate vector with respect to the eigenbasis. Its length is the
/// truncation level; operations between states of different lengths pad the
/// shorter one with zeros.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct State(Vec<f64>);

impl State {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if let Some(i) = coords.iter().position(|v| !v.is_finite()) {
            return Err(invalid("state", format!("coordinate {i} is not finite")));
        }
        Ok(State(coords))
    }

    pub fn zeros(n: usize) -> Self {
        State(vec![0.0; n])
    }

    /// Unit vector `e_k` (zero-based `k`) in dimension `n`.
    pub fn basis(n: usize, k: usize) -> Self {
        let mut v = vec![0.0; n.max(k + 1)];
        v[k] = 1.0;
        State(v)
    }

    pub fn from_fn(n: usize, f: impl FnMut(usize) -> f64) -> Self {
        State((0..n).map(f).collect())
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    /// Coordinate `k`, zero beyond the truncation.
    pub fn get(&self, k: usize) -> f64 {
        self.0.get(k).copied().unwrap_or(0.0)
    }

    /// Copy padded or cut to dimension `n`.
    pub fn resized(&self, n: usize) -> State {
        State::from_fn(n, |k| self.get(k))
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn add(&self, other: &State) -> State {
        let n = self.dim().max(other.dim());
        State::from_fn(n, |k| self.get(k) + other.get(k))
    }

    pub fn sub(&self, other: &State) -> State {
        let n = self.dim().max(other.dim());
        State::from_fn(n, |k| self.get(k) - other.get(k))
    }

    pub fn scale(&self, c: f64) -> State {
        State(self.0.iter().map(|v| c * v).collect())
    }
}

impl From<Vec<f64>> for State {
    fn from(v: Vec<f64>) -> Self {
        State(v)
    }
}

/// How eigenvalues are generated by [`make_spectrum`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "rule")]
pub enum EigenRule {
    /// `lambda_k = c1 * k^p`.
    Power,
    /// Explicit list, validated against `(p, c1)`.
    Explicit { lambdas: Vec<f64> },
}

/// What is known about the eigenvalues beyond the stored ones.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Tail {
    /// `lambda_k >= c1 * k^p` for every `k`, stored or not.
    PowerLaw { p: f64, c1: f64 },
    /// The system is genuinely finite: there are no further eigenvalues.
    Finite,
    /// No growth information (e.g. an arbitrary user sequence).
    Unknown,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    lambdas: Vec<f64>,
    tail: Tail,
}

/// Builds a spectrum from the growth law `lambda_k >= c1 * k^p`.
pub fn make_spectrum(p: f64, c1: f64, n: usize, rule: &EigenRule) -> Result<Spectrum> {
    if !(p > 1.0) || !p.is_finite() {
        return Err(invalid("p", format!("growth exponent must exceed 1, got {p}")));
    }
    if !(c1 > 0.0) || !c1.is_finite() {
        return Err(invalid("c1", format!("must be positive, got {c1}")));
    }
    let lambdas = match rule {
        EigenRule::Power => {
            if n == 0 {
                return Err(invalid("n", "at least one eigenvalue is required"));
            }
            (1..=n).map(|k| c1 * (k as f64).powf(p)).collect()
        }
        EigenRule::Explicit { lambdas } => lambdas.clone(),
    };
    check_sequence(&lambdas)?;
    for (i, &l) in lambdas.iter().enumerate() {
        let bound = c1 * ((i + 1) as f64).powf(p);
        if l < bound * (1.0 - 1e-12) {
            return Err(Error::GrowthViolation { index: i + 1, value: l, bound });
        }
    }
    Ok(Spectrum { lambdas, tail: Tail::PowerLaw { p, c1 } })
}

fn check_sequence(lambdas: &[f64]) -> Result<()> {
    if lambdas.is_empty() {
        return Err(invalid("lambdas", "at least one eigenvalue is required"));
    }
    let mut previous = 0.0;
    for (i, &l) in lambdas.iter().enumerate() {
        if !(l > 0.0) || !l.is_finite() || l < previous {
            return Err(Error::NotMonotone { index: i + 1, previous, value: l });
        }
        previous = l;
    }
    Ok(())
}

impl Spectrum {
    /// A finite system with exactly these eigenvalues.
    pub fn finite(lambdas: Vec<f64>) -> Result<Self> {
        check_sequence(&lambdas)?;
        Ok(Spectrum { lambdas, tail: Tail::Finite })
    }

    /// A truncation of an infinite sequence about which nothing further is
    /// known; hypothesis checks on it fit the growth from the stored values.
    pub fn unconstrained(lambdas: Vec<f64>) -> Result<Self> {
        check_sequence(&lambdas)?;
        Ok(Spectrum { lambdas, tail: Tail::Unknown })
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }

    pub fn tail(&self) -> &Tail {
        &self.tail
    }

    /// `(p, c1)` when the spectrum carries a growth law.
    pub fn growth(&self) -> Option<(f64, f64)> {
        match self.tail {
            Tail::PowerLaw { p, c1 } => Some((p, c1)),
            _ => None,
        }
    }

    /// The first `n` eigenvalues with the same tail information.
    pub fn truncated(&self, n: usize) -> Result<Spectrum> {
        if n == 0 || n > self.len() {
            return Err(Error::DimensionMismatch { what: "truncation", got: n, limit: self.len() });
        }
        Ok(Spectrum { lambdas: self.lambdas[..n].to_vec(), tail: self.tail.clone() })
    }

    /// Upper bound on `sum_{k > from} lambda_k^{-s}` (one-based `k`), combining
    /// the stored terms past `from` with the analytic tail past the stored
    /// range. `None` when the tail is unknown or diverges.
    pub fn inverse_power_tail(&self, s: f64, from: usize) -> Option<f64> {
        let stored: f64 = self.lambdas.iter().skip(from).map(|l| l.powf(-s)).sum();
        let n = self.len().max(from);
        match self.tail {
            Tail::Finite => Some(stored),
            Tail::Unknown => None,
            Tail::PowerLaw { p, c1 } => power_tail(p * s, n).map(|t| stored + c1.powf(-s) * t),
        }
    }

    /// Upper bound on `sum_k lambda_k^{-s}` over all `k`.
    pub fn inverse_power_sum(&self, s: f64) -> Option<f64> {
        self.inverse_power_tail(s, 0)
    }

    pub fn check_dim(&self, what: &'static str, dim: usize) -> Result<()> {
        if dim > self.len() {
            Err(Error::DimensionMismatch { what, got: dim, limit: self.len() })
        } else {
            Ok(())
        }
    }
}

/// Upper bound on `sum_{k > n} k^{-q}` by the integral `n^{1-q}/(q-1)`;
/// `None` if `q <= 1`. For `n = 0` the first term is added explicitly.
pub fn power_tail(q: f64, n: usize) -> Option<f64> {
    if !(q > 1.0) {
        return None;
    }
    if n == 0 {
        return Some(1.0 + 1.0 / (q - 1.0));
    }
    Some((n as f64).powf(1.0 - q) / (q - 1.0))
}

/// `h(u) = 2u / (e^{2u} - 1)`, `h(0) = 1`.
pub fn h(u: f64) -> f64 {
    if u.abs() < 1e-4 {
        let u2 = u * u;
        1.0 - u + u2 / 3.0 - u2 * u2 / 45.0
    } else {
        2.0 * u / (2.0 * u).exp_m1()
    }
}

fn check_time(t: f64) -> Result<()> {
    if !(t >= 0.0) {
        return Err(invalid("t", format!("time must be nonnegative, got {t}")));
    }
    Ok(())
}

/// `|w|_t = (sum w_i^2 h(rate_i t))^{1/2}` for arbitrary positive rates.
pub fn time_norm_rates(w: &[f64], t: f64, rates: &[f64]) -> Result<f64> {
    check_time(t)?;
    if w.len() > rates.len() {
        return Err(Error::DimensionMismatch { what: "w", got: w.len(), limit: rates.len() });
    }
    Ok(w.iter().zip(rates).map(|(wi, r)| wi * wi * h(r * t)).sum::<f64>().sqrt())
}

pub fn time_norm(w: &State, t: f64, s: &Spectrum) -> Result<f64> {
    time_norm_rates(w.coords(), t, s.lambdas())
}

/// `|x|_beta = max_k |x_k| lambda_k^{beta/2}` over stored coordinates.
pub fn weighted_norm(x: &State, beta: f64, s: &Spectrum) -> Result<f64> {
    check_beta(beta)?;
    s.check_dim("x", x.dim())?;
    Ok(weighted_norm_unchecked(x.coords(), beta, s.lambdas()))
}

pub(crate) fn check_beta(beta: f64) -> Result<()> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(invalid("beta", format!("must lie in (0, 1), got {beta}")));
    }
    Ok(())
}

pub(crate) fn weighted_norm_unchecked(x: &[f64], beta: f64, lambdas: &[f64]) -> f64 {
    x.iter()
        .zip(lambdas)
        .map(|(v, l)| v.abs() * l.powf(0.5 * beta))
        .fold(0.0, f64::max)
}

/// `Q_t x`, coordinatewise multiplication by `e^{-rate_i t}`.
pub fn apply_qt_rates(x: &[f64], t: f64, rates: &[f64]) -> Result<Vec<f64>> {
    check_time(t)?;
    if x.len() > rates.len() {
        return Err(Error::DimensionMismatch { what: "x", got: x.len(), limit: rates.len() });
    }
    Ok(x.iter().zip(rates).map(|(v, r)| v * (-r * t).exp()).collect())
}

pub fn apply_qt(x: &State, t: f64, s: &Spectrum) -> Result<State> {
    apply_qt_rates(x.coords(), t, s.lambdas()).map(State)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sq(n: usize) -> Spectrum {
        make_spectrum(2.0, 1.0, n, &EigenRule::Power).unwrap()
    }

    #[test]
    fn power_rule() {
        assert_eq!(sq(4).lambdas(), &[1.0, 4.0, 9.0, 16.0]);
        let s = make_spectrum(1.5, 0.5, 3, &EigenRule::Power).unwrap();
        let expect = [0.5, 0.5 * 2f64.powf(1.5), 0.5 * 3f64.powf(1.5)];
        for (a, b) in s.lambdas().iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((s.lambdas()[1] - std::f64::consts::SQRT_2).abs() < 1e-8);
        assert!((s.lambdas()[2] - 2.598_076_211).abs() < 1e-8);
    }

    #[test]
    fn explicit_rules_are_validated() {
        let bad = EigenRule::Explicit { lambdas: vec![1.0, 4.0, 3.0, 16.0] };
        assert!(matches!(make_spectrum(2.0, 1.0, 4, &bad), Err(Error::NotMonotone { index: 3, .. })));
        let slow = EigenRule::Explicit { lambdas: vec![1.0, 3.0] };
        assert!(matches!(make_spectrum(2.0, 1.0, 2, &slow), Err(Error::GrowthViolation { index: 2, .. })));
        assert!(make_spectrum(1.0, 1.0, 2, &EigenRule::Power).is_err());
        assert!(make_spectrum(2.0, 0.0, 2, &EigenRule::Power).is_err());
        assert!(Spectrum::finite(vec![0.0, 1.0]).is_err());
    }

    #[test]
    fn h_values() {
        assert_eq!(h(0.0), 1.0);
        let e2 = 1f64.exp().powi(2);
        assert!((h(1.0) - 2.0 / (e2 - 1.0)).abs() < 1e-15);
        assert!((h(1.0) - 0.313_035).abs() < 1e-6);
        assert!((h(1e-12) - 1.0).abs() < 1e-9);
        // Both branches agree at the switch point.
        let u: f64 = 1e-4;
        let direct = 2.0 * u / (2.0 * u).exp_m1();
        let series = 1.0 - u + u * u / 3.0;
        assert!((direct - series).abs() < 1e-14);
    }

    #[test]
    fn time_norm_examples() {
        let s = sq(3);
        let w = State::new(vec![0.3, -1.2, 2.0]).unwrap();
        assert!((time_norm(&w, 0.0, &s).unwrap() - w.norm()).abs() < 1e-15);
        let e1 = State::basis(3, 0);
        assert!((time_norm(&e1, 1.0, &s).unwrap() - 0.559_50).abs() < 1e-5);
        assert_eq!(time_norm(&State::zeros(3), 2.0, &s).unwrap(), 0.0);
        assert!(time_norm(&w, -1.0, &s).is_err());
        assert!(time_norm(&State::zeros(4), 1.0, &s).is_err());
    }

    #[test]
    fn weighted_norm_examples() {
        let s = Spectrum::finite(vec![1.0, 4.0, 9.0]).unwrap();
        let x = State::new(vec![2.0, 0.0, 0.0]).unwrap();
        assert_eq!(weighted_norm(&x, 0.5, &s).unwrap(), 2.0);
        assert_eq!(weighted_norm(&State::zeros(3), 0.5, &s).unwrap(), 0.0);
        let y = State::from_fn(3, |k| s.lambdas()[k].powf(-0.35));
        assert!((weighted_norm(&y, 0.7, &s).unwrap() - 1.0).abs() < 1e-14);
        assert!(weighted_norm(&x, 1.0, &s).is_err());
        assert!(weighted_norm(&x, 0.0, &s).is_err());
    }

    #[test]
    fn qt_examples() {
        let s = sq(3);
        let x = State::new(vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(apply_qt(&x, 0.0, &s).unwrap(), x);
        let half = apply_qt(&State::basis(3, 0), 2f64.ln(), &s).unwrap();
        assert!((half.get(0) - 0.5).abs() < 1e-15);
        assert!(apply_qt(&x, -0.1, &s).is_err());
    }

    #[test]
    fn tails() {
        let s = sq(10);
        // sum_{k>10} k^{-2} <= 1/10
        let t = s.inverse_power_tail(1.0, 10).unwrap();
        assert!((t - 0.1).abs() < 1e-12);
        assert!(s.inverse_power_sum(0.4).is_none());
        let f = Spectrum::finite(vec![1.0, 2.0]).unwrap();
        assert_eq!(f.inverse_power_sum(1.0), Some(1.5));
        assert!(Spectrum::unconstrained(vec![1.0]).unwrap().inverse_power_sum(1.0).is_none());
        // The stored partial sum plus tail bounds the true series sum pi^2/6.
        let total = s.inverse_power_sum(1.0).unwrap();
        assert!(total >= std::f64::consts::PI.powi(2) / 6.0);
        assert!(total < std::f64::consts::PI.powi(2) / 6.0 + 0.01);
    }

    fn vec_strategy(n: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-5.0f64..5.0, n)
    }

    proptest! {
        #[test]
        fn h_positive_and_decreasing(u in 0.0f64..20.0, du in 1e-6f64..1.0) {
            prop_assert!(h(u) > 0.0);
            prop_assert!(h(u + du) < h(u));
            prop_assert!(h(u) <= 1.0);
        }

        #[test]
        fn time_norm_nonincreasing(w in vec_strategy(5), t in 0.0f64..3.0, dt in 0.0f64..3.0) {
            let s = sq(5);
            let w = State::new(w).unwrap();
            let a = time_norm(&w, t, &s).unwrap();
            let b = time_norm(&w, t + dt, &s).unwrap();
            prop_assert!(b <= a + 1e-15);
            prop_assert!(a <= w.norm() + 1e-12);
        }

        #[test]
        fn qt_contracts_both_norms(x in vec_strategy(5), t in 0.0f64..2.0, beta in 0.05f64..0.95) {
            let s = sq(5);
            let x = State::new(x).unwrap();
            let q = apply_qt(&x, t, &s).unwrap();
            prop_assert!(q.norm() <= x.norm() + 1e-15);
            prop_assert!(weighted_norm(&q, beta, &s).unwrap() <= weighted_norm(&x, beta, &s).unwrap() + 1e-15);
        }

        #[test]
        fn qt_semigroup_and_linear(x in vec_strategy(4), y in vec_strategy(4), a in 0.0f64..2.0, b in 0.0f64..2.0) {
            let s = sq(4);
            let x = State::new(x).unwrap();
            let y = State::new(y).unwrap();
            let two = apply_qt(&apply_qt(&x, a, &s).unwrap(), b, &s).unwrap();
            let one = apply_qt(&x, a + b, &s).unwrap();
            for k in 0..4 {
                prop_assert!((two.get(k) - one.get(k)).abs() <= 1e-12 * one.get(k).abs().max(1e-300));
            }
            let sum = apply_qt(&x.add(&y), a, &s).unwrap();
            let parts = apply_qt(&x, a, &s).unwrap().add(&apply_qt(&y, a, &s).unwrap());
            for k in 0..4 {
                prop_assert!((sum.get(k) - parts.get(k)).abs() <= 1e-12 * (1.0 + sum.get(k).abs()));
            }
        }

        #[test]
        fn weighted_norm_monotone_in_beta(x in vec_strategy(6), b1 in 0.01f64..0.99, b2 in 0.01f64..0.99) {
            let s = sq(6);
            let x = State::new(x).unwrap();
            let (lo, hi) = if b1 < b2 { (b1, b2) } else { (b2, b1) };
            prop_assert!(weighted_norm(&x, hi, &s).unwrap() >= weighted_norm(&x, lo, &s).unwrap() - 1e-15);
        }

        #[test]
        fn inverse_partial_sums_bounded(n in 1usize..40) {
            let s = make_spectrum(1.7, 0.8, n, &EigenRule::Power).unwrap();
            let mut partial = 0.0;
            let bound = s.inverse_power_sum(1.0).unwrap();
            for l in s.lambdas() {
                let next = partial + 1.0 / l;
                prop_assert!(next >= partial);
                partial = next;
            }
            prop_assert!(partial <= bound);
        }
    }
}
