//! Exact transition law of the frozen-coefficient OU process and Monte Carlo
//! estimators of `P_t f`, `R_lambda f` and their directional derivatives.

use nalgebra::{Cholesky, DMatrix, SymmetricEigen};
use rand::Rng as _;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::coefficients::{psd_sqrt, CoefficientField};
use crate::error::{invalid, Error, Result};
use crate::functions::ScalarFn;
use crate::rng::{self, domain, par_chunks, Rng, CHUNK};
use crate::spectrum::{time_norm_rates, Spectrum, State};
use crate::stats::{MCEstimate, Moments};

/// Generator with coefficients frozen at `z0`: diffusion `a0 = a(z0)` and
/// rates `lam_hat_i = b_i(z0) lambda_i`.
#[derive(Clone, Debug, PartialEq)]
pub struct FrozenGenerator {
    a0: DMatrix<f64>,
    lam_hat: Vec<f64>,
    z0: State,
    diagonal: bool,
}

impl FrozenGenerator {
    pub fn new(a0: DMatrix<f64>, lam_hat: Vec<f64>, z0: State) -> Result<Self> {
        let n = lam_hat.len();
        if a0.nrows() != n || a0.ncols() != n {
            return Err(invalid("a0", format!("expected {n}x{n}, got {}x{}", a0.nrows(), a0.ncols())));
        }
        if let Some(i) = lam_hat.iter().position(|l| !(*l > 0.0) || !l.is_finite()) {
            return Err(invalid("lam_hat", format!("rate {i} must be positive, got {}", lam_hat[i])));
        }
        // Validates symmetry and semidefiniteness.
        psd_sqrt(&a0)?;
        let diagonal = (0..n).all(|i| (0..n).all(|j| i == j || a0[(i, j)] == 0.0));
        Ok(FrozenGenerator { a0, lam_hat, z0: z0.resized(n), diagonal })
    }

    /// Freezes `field` at `z0` on its truncation.
    pub fn freeze(field: &CoefficientField, s: &Spectrum, z0: &State) -> Result<Self> {
        let n = field.dim();
        s.check_dim("field", n)?;
        let z = z0.resized(n);
        let a0 = field.a_matrix(z.coords(), n);
        let lam_hat = (0..n).map(|i| field.b(z.coords(), i) * s.lambdas()[i]).collect();
        FrozenGenerator::new(a0, lam_hat, z)
    }

    pub fn dim(&self) -> usize {
        self.lam_hat.len()
    }
    pub fn a0(&self) -> &DMatrix<f64> {
        &self.a0
    }
    pub fn lam_hat(&self) -> &[f64] {
        &self.lam_hat
    }
    pub fn z0(&self) -> &State {
        &self.z0
    }

    /// `x_i e^{-lam_hat_i t}`.
    pub fn mean(&self, x: &[f64], t: f64) -> Vec<f64> {
        (0..self.dim()).map(|i| x.get(i).copied().unwrap_or(0.0) * (-self.lam_hat[i] * t).exp()).collect()
    }

    /// `C_ij(t) = a0_ij (1 - e^{-(l_i + l_j) t}) / (l_i + l_j)`.
    pub fn covariance(&self, t: f64) -> DMatrix<f64> {
        let n = self.dim();
        DMatrix::from_fn(n, n, |i, j| {
            let r = self.lam_hat[i] + self.lam_hat[j];
            self.a0[(i, j)] * -(-r * t).exp_m1() / r
        })
    }

    /// Stationary covariance `a0_ij / (l_i + l_j)`.
    pub fn stationary_covariance(&self) -> DMatrix<f64> {
        let n = self.dim();
        DMatrix::from_fn(n, n, |i, j| self.a0[(i, j)] / (self.lam_hat[i] + self.lam_hat[j]))
    }

    /// Bound `|w|_t (gamma t)^{-1/2}` on `|D_w P_t f| / ||f||`.
    pub fn first_derivative_bound(&self, w: &[f64], t: f64, gamma: f64) -> Result<f64> {
        Ok(time_norm_rates(w, t, &self.lam_hat)? / (gamma * t).sqrt())
    }

    fn check_x(&self, x: &State) -> Result<Vec<f64>> {
        if x.dim() > self.dim() {
            return Err(Error::DimensionMismatch { what: "x", got: x.dim(), limit: self.dim() });
        }
        Ok(x.resized(self.dim()).into_vec())
    }

    pub(crate) fn factor(&self, t: f64) -> Result<Factor> {
        Factor::new(self, t)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianTransition {
    pub mean: State,
    pub cov: DMatrix<f64>,
    pub t: f64,
}

pub fn transition(g: &FrozenGenerator, x: &State, t: f64) -> Result<GaussianTransition> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(invalid("t", format!("must be nonnegative and finite, got {t}")));
    }
    let x = g.check_x(x)?;
    Ok(GaussianTransition { mean: State::from(g.mean(&x, t)), cov: g.covariance(t), t })
}

/// Gaussian factorisation `C = L L^T` used for sampling and score weights:
/// `Y = L z` and `C^{-1} Y = L^{-T} z`.
pub(crate) struct Factor {
    n: usize,
    l: Vec<f64>,
    /// `L^{-T}`, row-major.
    lit: Vec<f64>,
    diagonal: bool,
}

impl Factor {
    fn new(g: &FrozenGenerator, t: f64) -> Result<Self> {
        let n = g.dim();
        if g.diagonal {
            let mut l = vec![0.0; n * n];
            let mut lit = vec![0.0; n * n];
            for i in 0..n {
                let r = 2.0 * g.lam_hat[i];
                let c = g.a0[(i, i)] * -(-r * t).exp_m1() / r;
                if !(c > 0.0) {
                    return Err(Error::SingularCovariance { t, min_eigenvalue: c });
                }
                l[i * n + i] = c.sqrt();
                lit[i * n + i] = 1.0 / c.sqrt();
            }
            return Ok(Factor { n, l, lit, diagonal: true });
        }
        let c = g.covariance(t);
        let chol = Cholesky::new(c.clone()).ok_or_else(|| Error::SingularCovariance {
            t,
            min_eigenvalue: SymmetricEigen::new(c.clone()).eigenvalues.min(),
        })?;
        let lm = chol.l();
        let li = lm.clone().try_inverse().ok_or(Error::SingularCovariance { t, min_eigenvalue: 0.0 })?;
        let lit = li.transpose();
        Ok(Factor {
            n,
            l: lm.transpose().as_slice().to_vec(),
            lit: lit.transpose().as_slice().to_vec(),
            diagonal: false,
        })
    }

    /// `out = L z`.
    fn apply(&self, z: &[f64], out: &mut [f64]) {
        let n = self.n;
        if self.diagonal {
            for i in 0..n {
                out[i] = self.l[i * n + i] * z[i];
            }
            return;
        }
        for i in 0..n {
            out[i] = (0..=i).map(|j| self.l[i * n + j] * z[j]).sum();
        }
    }

    /// `out = L^{-T} z = C^{-1} L z`.
    fn score(&self, z: &[f64], out: &mut [f64]) {
        let n = self.n;
        if self.diagonal {
            for i in 0..n {
                out[i] = self.lit[i * n + i] * z[i];
            }
            return;
        }
        for i in 0..n {
            out[i] = (i..n).map(|j| self.lit[i * n + j] * z[j]).sum();
        }
    }

    /// `C^{-1} = L^{-T} L^{-1}`, row-major.
    fn precision(&self) -> Vec<f64> {
        let n = self.n;
        let mut p = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                p[i * n + j] = (0..n).map(|k| self.lit[i * n + k] * self.lit[j * n + k]).sum();
            }
        }
        p
    }
}

fn normals(rng: &mut Rng, out: &mut [f64]) {
    for v in out.iter_mut() {
        *v = StandardNormal.sample(rng);
    }
}

/// I.i.d. draws from the transition law, sampled through the symmetric
/// square root of the covariance.
pub fn sample_transition(g: &FrozenGenerator, x: &State, t: f64, count: usize, seed: u64) -> Result<Vec<State>> {
    let tr = transition(g, x, t)?;
    let n = g.dim();
    let s = psd_sqrt(&tr.cov)?;
    let mean = tr.mean.coords().to_vec();
    let chunks = par_chunks(count, CHUNK, |c, range| {
        let mut rng = rng::substream(seed, domain::TRANSITION, c as u64);
        let mut z = vec![0.0; n];
        range
            .map(|_| {
                normals(&mut rng, &mut z);
                State::from((0..n).map(|i| mean[i] + (0..n).map(|j| s[(i, j)] * z[j]).sum::<f64>()).collect::<Vec<_>>())
            })
            .collect::<Vec<_>>()
    });
    Ok(chunks.into_iter().flatten().collect())
}

/// `P_t f(x)` by plain Monte Carlo over the exact transition law.
pub fn semigroup_apply(
    g: &FrozenGenerator,
    f: &dyn ScalarFn,
    x: &State,
    t: f64,
    count: usize,
    seed: u64,
) -> Result<MCEstimate> {
    let tr = transition(g, x, t)?;
    let n = g.dim();
    let s = psd_sqrt(&tr.cov)?;
    let mean = tr.mean.coords().to_vec();
    let parts = par_chunks(count, CHUNK, |c, range| {
        let mut rng = rng::substream(seed, domain::TRANSITION, c as u64);
        let mut z = vec![0.0; n];
        let mut y = vec![0.0; n];
        let mut m = Moments::default();
        for _ in range {
            normals(&mut rng, &mut z);
            for i in 0..n {
                y[i] = mean[i] + (0..n).map(|j| s[(i, j)] * z[j]).sum::<f64>();
            }
            m.push(f.eval(&y));
        }
        m
    });
    Ok(MCEstimate::from_moments(&Moments::from_chunks(&parts), seed))
}

/// Time discretisation for the resolvent.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "method")]
pub enum ResolventMethod {
    /// `tau ~ Exp(lambda)` and one transition draw: unbiased.
    #[default]
    ExponentialTime,
    /// Gauss-Laguerre nodes in `lambda t`, one shared normal vector per
    /// sample across all nodes.
    Laguerre { nodes: usize },
}

/// Gauss-Laguerre nodes and weights for `int_0^inf e^{-s} g(s) ds`
/// (Golub-Welsch).
pub fn gauss_laguerre(m: usize) -> (Vec<f64>, Vec<f64>) {
    let jac = DMatrix::from_fn(m, m, |i, j| {
        if i == j {
            (2 * i + 1) as f64
        } else if i.abs_diff(j) == 1 {
            i.max(j) as f64
        } else {
            0.0
        }
    });
    let eig = SymmetricEigen::new(jac);
    let mut pairs: Vec<(f64, f64)> =
        (0..m).map(|k| (eig.eigenvalues[k], eig.eigenvectors[(0, k)].powi(2))).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

/// `R_lambda f(x) = int_0^inf e^{-lambda t} P_t f(x) dt`.
pub fn resolvent_apply(
    g: &FrozenGenerator,
    f: &dyn ScalarFn,
    x: &State,
    lambda: f64,
    method: ResolventMethod,
    count: usize,
    seed: u64,
) -> Result<MCEstimate> {
    if !(lambda > 0.0) {
        return Err(invalid("lambda", format!("must be positive, got {lambda}")));
    }
    let x = g.check_x(x)?;
    let n = g.dim();
    match method {
        ResolventMethod::ExponentialTime => {
            let exp = Exp::new(lambda).map_err(|e| invalid("lambda", e.to_string()))?;
            let parts = par_chunks(count, CHUNK, |c, range| -> Result<Moments> {
                let mut rng = rng::substream(seed, domain::RESOLVENT, c as u64);
                let (mut z, mut y) = (vec![0.0; n], vec![0.0; n]);
                let mut m = Moments::default();
                for _ in range {
                    let tau: f64 = exp.sample(&mut rng);
                    let fac = g.factor(tau.max(1e-300))?;
                    normals(&mut rng, &mut z);
                    fac.apply(&z, &mut y);
                    for i in 0..n {
                        y[i] += x[i] * (-g.lam_hat[i] * tau).exp();
                    }
                    m.push(f.eval(&y) / lambda);
                }
                Ok(m)
            });
            let parts = parts.into_iter().collect::<Result<Vec<_>>>()?;
            Ok(MCEstimate::from_moments(&Moments::from_chunks(&parts), seed))
        }
        ResolventMethod::Laguerre { nodes } => {
            if nodes == 0 {
                return Err(invalid("nodes", "at least one quadrature node is required"));
            }
            let (s_nodes, weights) = gauss_laguerre(nodes);
            let factors = s_nodes.iter().map(|s| g.factor(s / lambda)).collect::<Result<Vec<_>>>()?;
            let means: Vec<Vec<f64>> = s_nodes.iter().map(|s| g.mean(&x, s / lambda)).collect();
            let parts = par_chunks(count, CHUNK, |c, range| {
                let mut rng = rng::substream(seed, domain::RESOLVENT, c as u64);
                let (mut z, mut y) = (vec![0.0; n], vec![0.0; n]);
                let mut m = Moments::default();
                for _ in range {
                    normals(&mut rng, &mut z);
                    let mut acc = 0.0;
                    for k in 0..nodes {
                        factors[k].apply(&z, &mut y);
                        for i in 0..n {
                            y[i] += means[k][i];
                        }
                        acc += weights[k] * f.eval(&y);
                    }
                    m.push(acc / lambda);
                }
                m
            });
            Ok(MCEstimate::from_moments(&Moments::from_chunks(&parts), seed))
        }
    }
}

/// Derivative order for [`directional_derivative`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Order {
    First,
    Second,
}

/// Smallest time at which derivative weights are attempted.
pub const MIN_DERIVATIVE_TIME: f64 = 1e-10;

/// Likelihood-ratio estimate of `D_w P_t f(x)` (first order) or
/// `D_u D_w P_t f(x)` (second order, `u` required).
///
/// First order: `E[f(m + Y) <C^{-1} Y, Q_t w>]` with antithetic pairs.
/// Second order: splits `P_t = P_{t/2} P_{t/2}` and weights each half,
/// `E[f(Q_{t/2}(Q_{t/2} x + Y1) + Y2) <C_{t/2}^{-1} Y1, Q_{t/2} u> <C_{t/2}^{-1} Y2, Q_t w>]`,
/// with the four sign combinations of `(Y1, Y2)` averaged.
#[allow(clippy::too_many_arguments)]
pub fn directional_derivative(
    g: &FrozenGenerator,
    f: &dyn ScalarFn,
    x: &State,
    t: f64,
    w: &State,
    order: Order,
    u: Option<&State>,
    count: usize,
    seed: u64,
) -> Result<MCEstimate> {
    if !(t > 0.0) {
        return Err(invalid("t", format!("derivatives need t > 0, got {t}")));
    }
    let n = g.dim();
    let x = g.check_x(x)?;
    let w = g.check_x(w)?;
    let h = match order {
        Order::First => t,
        Order::Second => t / 2.0,
    };
    if h < MIN_DERIVATIVE_TIME {
        let c = g.covariance(h);
        return Err(Error::SingularCovariance { t: h, min_eigenvalue: SymmetricEigen::new(c).eigenvalues.min() });
    }
    let fac = g.factor(h)?;
    let qt_w: Vec<f64> = (0..n).map(|i| w[i] * (-g.lam_hat[i] * t).exp()).collect();
    match order {
        Order::First => {
            let m = g.mean(&x, t);
            let parts = par_chunks(count, CHUNK, |c, range| {
                let mut rng = rng::substream(seed, domain::DERIVATIVE, c as u64);
                let (mut z, mut y, mut v) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
                let (mut p, mut q) = (vec![0.0; n], vec![0.0; n]);
                let mut acc = Moments::default();
                for _ in range {
                    normals(&mut rng, &mut z);
                    fac.apply(&z, &mut y);
                    fac.score(&z, &mut v);
                    for i in 0..n {
                        p[i] = m[i] + y[i];
                        q[i] = m[i] - y[i];
                    }
                    let weight: f64 = (0..n).map(|i| v[i] * qt_w[i]).sum();
                    acc.push(0.5 * (f.eval(&p) - f.eval(&q)) * weight);
                }
                acc
            });
            Ok(MCEstimate::from_moments(&Moments::from_chunks(&parts), seed))
        }
        Order::Second => {
            let u = g.check_x(u.ok_or_else(|| invalid("u", "second derivatives need a direction u"))?)?;
            let qh: Vec<f64> = (0..n).map(|i| (-g.lam_hat[i] * h).exp()).collect();
            let qh_u: Vec<f64> = (0..n).map(|i| u[i] * qh[i]).collect();
            let m1: Vec<f64> = (0..n).map(|i| x[i] * qh[i]).collect();
            let parts = par_chunks(count, CHUNK, |c, range| {
                let mut rng = rng::substream(seed, domain::DERIVATIVE, c as u64);
                let (mut z1, mut z2) = (vec![0.0; n], vec![0.0; n]);
                let (mut y1, mut y2, mut v1, mut v2) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
                let mut pt = vec![0.0; n];
                let mut acc = Moments::default();
                for _ in range {
                    normals(&mut rng, &mut z1);
                    normals(&mut rng, &mut z2);
                    fac.apply(&z1, &mut y1);
                    fac.apply(&z2, &mut y2);
                    fac.score(&z1, &mut v1);
                    fac.score(&z2, &mut v2);
                    let w1: f64 = (0..n).map(|i| v1[i] * qh_u[i]).sum();
                    let w2: f64 = (0..n).map(|i| v2[i] * qt_w[i]).sum();
                    let mut sum = 0.0;
                    for (s1, s2) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
                        for i in 0..n {
                            pt[i] = qh[i] * (m1[i] + s1 * y1[i]) + s2 * y2[i];
                        }
                        sum += s1 * s2 * f.eval(&pt);
                    }
                    acc.push(0.25 * sum * w1 * w2);
                }
                acc
            });
            Ok(MCEstimate::from_moments(&Moments::from_chunks(&parts), seed))
        }
    }
}

/// Central finite differences of `P_t f` with common random numbers and
/// step `1e-4 |w|` (and `1e-4 |u|`); an independent check on
/// [`directional_derivative`] for smooth `f`.
#[allow(clippy::too_many_arguments)]
pub fn finite_difference_derivative(
    g: &FrozenGenerator,
    f: &dyn ScalarFn,
    x: &State,
    t: f64,
    w: &State,
    order: Order,
    u: Option<&State>,
    count: usize,
    seed: u64,
) -> Result<MCEstimate> {
    if !(t > 0.0) {
        return Err(invalid("t", format!("derivatives need t > 0, got {t}")));
    }
    let n = g.dim();
    let x = g.check_x(x)?;
    let w = g.check_x(w)?;
    let u = match (order, u) {
        (Order::Second, Some(u)) => g.check_x(u)?,
        (Order::Second, None) => return Err(invalid("u", "second derivatives need a direction u")),
        (Order::First, _) => vec![0.0; n],
    };
    let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
    let (ew, eu) = (1e-4 * norm(&w), 1e-4 * norm(&u));
    if ew == 0.0 || (order == Order::Second && eu == 0.0) {
        return Ok(MCEstimate::exact(0.0, seed));
    }
    let s = psd_sqrt(&g.covariance(t))?;
    let m = g.mean(&x, t);
    let q: Vec<f64> = (0..n).map(|i| (-g.lam_hat[i] * t).exp()).collect();
    let parts = par_chunks(count, CHUNK, |c, range| {
        let mut rng = rng::substream(seed, domain::FINITE_DIFF, c as u64);
        let (mut z, mut y, mut p) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        let mut acc = Moments::default();
        for _ in range {
            normals(&mut rng, &mut z);
            for i in 0..n {
                y[i] = m[i] + (0..n).map(|j| s[(i, j)] * z[j]).sum::<f64>();
            }
            let mut at = |a: f64, b: f64| {
                for i in 0..n {
                    p[i] = y[i] + q[i] * (a * w[i] / norm(&w) * ew + b * u[i] / norm(&u).max(1e-300) * eu);
                }
                f.eval(&p)
            };
            let v = match order {
                Order::First => (at(1.0, 0.0) - at(-1.0, 0.0)) / (2.0 * ew) * norm(&w),
                Order::Second => {
                    (at(1.0, 1.0) - at(-1.0, 1.0) - at(1.0, -1.0) + at(-1.0, -1.0)) / (4.0 * ew * eu) * norm(&w) * norm(&u)
                }
            };
            acc.push(v);
        }
        acc
    });
    Ok(MCEstimate::from_moments(&Moments::from_chunks(&parts), seed))
}

/// One draw of the resolvent time and the Gaussian increment, with score
/// weights. Used by the perturbation estimators.
pub(crate) struct ResolventSample {
    pub mean: Vec<f64>,
    pub y: Vec<f64>,
    /// `C(tau)^{-1} Y`.
    pub score: Vec<f64>,
    /// `C(tau)^{-1}`, row-major.
    pub precision: Vec<f64>,
    /// `e^{-lam_hat_i tau}`.
    pub decay: Vec<f64>,
}

impl FrozenGenerator {
    pub(crate) fn resolvent_sample(&self, x: &[f64], lambda: f64, rng: &mut Rng, want_precision: bool) -> Result<ResolventSample> {
        let n = self.dim();
        let u: f64 = rng.random::<f64>();
        let tau = (-(1.0 - u).ln() / lambda).max(1e-300);
        let fac = self.factor(tau)?;
        let mut z = vec![0.0; n];
        normals(rng, &mut z);
        let mut y = vec![0.0; n];
        let mut score = vec![0.0; n];
        fac.apply(&z, &mut y);
        fac.score(&z, &mut score);
        let decay: Vec<f64> = self.lam_hat.iter().map(|l| (-l * tau).exp()).collect();
        let mean = (0..n).map(|i| x.get(i).copied().unwrap_or(0.0) * decay[i]).collect();
        let precision = if want_precision { fac.precision() } else { Vec::new() };
        Ok(ResolventSample { mean, y, score, precision, decay })
    }
}

/// Diagnostic `max over (t, x) of t^{-alpha/2} |P_t f(x) - f(x)|` on a finite
/// grid: a Monte Carlo lower estimate of the semigroup Hölder norm, not the
/// true supremum.
pub fn semigroup_holder_diagnostic(
    g: &FrozenGenerator,
    f: &dyn ScalarFn,
    alpha: f64,
    points: &[State],
    times: &[f64],
    count: usize,
    seed: u64,
) -> Result<f64> {
    let mut best: f64 = 0.0;
    for (pi, x) in points.iter().enumerate() {
        let fx = f.eval(&x.resized(g.dim()).into_vec());
        for (ti, &t) in times.iter().enumerate() {
            let est = semigroup_apply(g, f, x, t, count, seed.wrapping_add((pi * times.len() + ti) as u64))?;
            best = best.max(t.powf(-alpha / 2.0) * (est.value - fx).abs());
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn one_dim() -> FrozenGenerator {
        FrozenGenerator::new(DMatrix::from_element(1, 1, 1.0), vec![1.0], State::zeros(1)).unwrap()
    }

    fn three_dim() -> FrozenGenerator {
        let a0 = DMatrix::from_row_slice(3, 3, &[1.0, 0.2, 0.0, 0.2, 0.8, 0.1, 0.0, 0.1, 1.2]);
        FrozenGenerator::new(a0, vec![1.0, 4.0, 9.0], State::zeros(3)).unwrap()
    }

    #[test]
    fn transition_examples() {
        let g = one_dim();
        let x = State::new(vec![1.3]).unwrap();
        let tr = transition(&g, &x, 2f64.ln()).unwrap();
        assert!((tr.mean.get(0) - 0.65).abs() < 1e-15);
        assert!((tr.cov[(0, 0)] - 0.375).abs() < 1e-15);
        let tiny = transition(&g, &x, 1e-14).unwrap();
        assert!((tiny.mean.get(0) - 1.3).abs() < 1e-12 && tiny.cov[(0, 0)] < 1e-13);
        let g3 = three_dim();
        let far = transition(&g3, &x, 200.0).unwrap();
        assert!((far.cov - g3.stationary_covariance()).amax() < 1e-15);
        assert!(far.mean.norm() < 1e-80);
    }

    #[test]
    fn sampling_examples() {
        let g = one_dim();
        let x = State::new(vec![1.0]).unwrap();
        let t = 2f64.ln();
        let xs = sample_transition(&g, &x, t, 100_000, 11).unwrap();
        let m: Moments = xs.iter().map(|s| s.get(0)).collect();
        assert!((m.mean - 0.5).abs() < 3.0 * (0.375f64 / 1e5).sqrt());
        let tiny = sample_transition(&g, &x, 1e-8, 100, 1).unwrap();
        assert!(tiny.iter().all(|s| (s.get(0) - 1.0).abs() < 1e-3));
        assert_eq!(sample_transition(&g, &x, t, 5000, 4).unwrap(), sample_transition(&g, &x, t, 5000, 4).unwrap());
    }

    #[test]
    fn semigroup_examples() {
        let g = one_dim();
        let x = State::new(vec![0.8]).unwrap();
        let t = 0.7;
        let one = semigroup_apply(&g, &|_x: &[f64]| 1.0, &x, t, 1000, 1).unwrap();
        assert_eq!((one.value, one.std_error), (1.0, 0.0));
        let c = -(-2.0 * t).exp_m1() / 2.0;
        let exact = (0.8 * (-t).exp()).sin() * (-c / 2.0).exp();
        let est = semigroup_apply(&g, &|x: &[f64]| x[0].sin(), &x, t, 200_000, 2).unwrap();
        assert!(est.z_score(exact) < 3.0, "{est:?} vs {exact}");
        let lin = semigroup_apply(&g, &|x: &[f64]| x[0], &x, t, 200_000, 3).unwrap();
        assert!(lin.z_score(0.8 * (-t).exp()) < 3.0);
    }

    #[test]
    fn chapman_kolmogorov() {
        let g = three_dim();
        let (s, t) = (0.3, 0.5);
        let lhs = g.covariance(s + t);
        let qt = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(3, g.lam_hat.iter().map(|l| (-l * t).exp())));
        let rhs = &qt * g.covariance(s) * &qt + g.covariance(t);
        assert!((lhs - rhs).amax() < 1e-14);
        // Nested Monte Carlo: P_{s+t} f = P_t (P_s f) with f = cos(x1 + x2).
        let x = State::new(vec![0.5, -0.3, 0.2]).unwrap();
        let f = |y: &[f64]| (y[0] + y[1]).cos();
        let direct = semigroup_apply(&g, &f, &x, s + t, 400_000, 5).unwrap();
        let inner = |y: &[f64]| {
            // P_s f is explicit for a cosine of a linear form.
            let tr = transition(&g, &State::from(y.to_vec()), s).unwrap();
            let m = tr.mean.get(0) + tr.mean.get(1);
            let v = tr.cov[(0, 0)] + 2.0 * tr.cov[(0, 1)] + tr.cov[(1, 1)];
            m.cos() * (-v / 2.0).exp()
        };
        let nested = semigroup_apply(&g, &inner, &x, t, 400_000, 6).unwrap();
        let joint = (direct.std_error.powi(2) + nested.std_error.powi(2)).sqrt();
        assert!((direct.value - nested.value).abs() < 3.0 * joint);
    }

    #[test]
    fn resolvent_examples() {
        let g = one_dim();
        let x = State::new(vec![0.9]).unwrap();
        let lam = 2.0;
        for method in [ResolventMethod::ExponentialTime, ResolventMethod::Laguerre { nodes: 12 }] {
            let one = resolvent_apply(&g, &|_x: &[f64]| 1.0, &x, lam, method, 1000, 1).unwrap();
            assert!((one.value - 0.5).abs() < 1e-12);
            let lin = resolvent_apply(&g, &|x: &[f64]| x[0], &x, lam, method, 200_000, 2).unwrap();
            let exact = 0.9 / (lam + 1.0);
            assert!(lin.z_score(exact) < 3.0 || (lin.value - exact).abs() < 1e-9, "{method:?} {lin:?}");
            let sq = resolvent_apply(&g, &|x: &[f64]| x[0] * x[0], &x, lam, method, 200_000, 3).unwrap();
            let exact = 0.81 / (lam + 2.0) + 1.0 / (lam * (lam + 2.0));
            assert!(sq.z_score(exact) < 3.0 || (sq.value - exact).abs() < 1e-6, "{method:?} {sq:?} vs {exact}");
        }
    }

    #[test]
    fn laguerre_rule() {
        let (x, w) = gauss_laguerre(5);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        // Exact for polynomials of degree <= 9: int s^4 e^{-s} = 24.
        let m4: f64 = x.iter().zip(&w).map(|(a, b)| a.powi(4) * b).sum();
        assert!((m4 - 24.0).abs() < 1e-9);
    }

    #[test]
    fn derivative_examples() {
        let g = one_dim();
        let x = State::new(vec![0.6]).unwrap();
        let w = State::basis(1, 0);
        let t = 0.4;
        let zero = directional_derivative(&g, &|_x: &[f64]| 1.0, &x, t, &w, Order::First, None, 1000, 1).unwrap();
        assert_eq!(zero.value, 0.0);
        let d1 = directional_derivative(&g, &|x: &[f64]| x[0], &x, t, &w, Order::First, None, 100_000, 2).unwrap();
        assert!(d1.z_score((-t).exp()) < 3.0 || (d1.value - (-t).exp()).abs() < 1e-12);
        let d2 = directional_derivative(&g, &|x: &[f64]| x[0] * x[0], &x, t, &w, Order::Second, Some(&w), 200_000, 3).unwrap();
        assert!(d2.z_score(2.0 * (-2.0 * t).exp()) < 3.0, "{d2:?}");
        assert!(matches!(
            directional_derivative(&g, &|x: &[f64]| x[0], &x, 1e-12, &w, Order::First, None, 10, 1),
            Err(Error::SingularCovariance { .. })
        ));
        assert!(directional_derivative(&g, &|x: &[f64]| x[0], &x, 0.0, &w, Order::First, None, 10, 1).is_err());
    }

    #[test]
    fn likelihood_ratio_matches_finite_differences() {
        let g = three_dim();
        let x = State::new(vec![0.3, -0.2, 0.5]).unwrap();
        let f = |y: &[f64]| (y[0] + 0.5 * y[1] - y[2]).sin() + (-(y[0] * y[0])).exp();
        let w = State::new(vec![0.6, -0.8, 0.0]).unwrap();
        let u = State::new(vec![0.0, 1.0, 1.0]).unwrap();
        for (order, uu) in [(Order::First, None), (Order::Second, Some(&u))] {
            let lr = directional_derivative(&g, &f, &x, 0.3, &w, order, uu, 400_000, 8).unwrap();
            let fd = finite_difference_derivative(&g, &f, &x, 0.3, &w, order, uu, 400_000, 9).unwrap();
            let joint = (lr.std_error.powi(2) + fd.std_error.powi(2)).sqrt();
            assert!((lr.value - fd.value).abs() < 3.0 * joint, "{order:?}: {lr:?} vs {fd:?}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn covariance_is_psd_and_monotone(t in 1e-6f64..5.0, dt in 0.0f64..5.0) {
            let g = three_dim();
            let c1 = g.covariance(t);
            let c2 = g.covariance(t + dt);
            prop_assert!(SymmetricEigen::new(c1.clone()).eigenvalues.min() >= -1e-15);
            prop_assert!(SymmetricEigen::new(c2 - c1).eigenvalues.min() >= -1e-14);
        }
    }
}
