//! The generator, martingale-problem diagnostics, the resolvent `S_lambda`
//! of a simulated process, the perturbation `B = L - L0` and the Neumann
//! series for `S_lambda`.

use std::sync::Arc;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::coefficients::CoefficientField;
use crate::error::{invalid, Error, Result};
use crate::functions::ScalarFn;
pub use crate::functions::{make_test_function, TestFunction, TestFunctionSpec};
use crate::galerkin::PathEnsemble;
use crate::ou_kernel::{resolvent_apply, FrozenGenerator, ResolventMethod};
use crate::rng::{self, domain, par_chunks, Rng};
use crate::spectrum::{Spectrum, State};
use crate::stats::{MCEstimate, Moments};

fn check_support(field: &CoefficientField, s: &Spectrum, d: usize) -> Result<()> {
    if field.dim() < d {
        return Err(Error::DimensionMismatch { what: "function support", got: d, limit: field.dim() });
    }
    s.check_dim("function support", d)
}

/// `L f(x) = 1/2 sum a_ij(x) D_ij f(x) - sum lambda_i x_i b_i(x) D_i f(x)`
/// over the coordinates `f` depends on.
pub fn apply_generator(field: &CoefficientField, s: &Spectrum, f: &TestFunction, x: &[f64]) -> Result<f64> {
    let d = f.depends_on();
    if d == 0 {
        return Ok(0.0);
    }
    check_support(field, s, d)?;
    let mut a = vec![0.0; d * d];
    field.model().a_block(x, d, &mut a);
    let b: Vec<f64> = (0..d).map(|i| field.b(x, i)).collect();
    Ok(generator_value(&a, &s.lambdas()[..d], &b, f, x))
}

/// `L0 f(x)` for the frozen generator.
pub fn apply_frozen_generator(g: &FrozenGenerator, f: &TestFunction, x: &[f64]) -> Result<f64> {
    let d = f.depends_on();
    if d == 0 {
        return Ok(0.0);
    }
    if g.dim() < d {
        return Err(Error::DimensionMismatch { what: "function support", got: d, limit: g.dim() });
    }
    let a: Vec<f64> = (0..d * d).map(|k| g.a0()[(k / d, k % d)]).collect();
    Ok(generator_value(&a, &g.lam_hat()[..d], &vec![1.0; d], f, x))
}

fn generator_value(a: &[f64], lam: &[f64], b: &[f64], f: &TestFunction, x: &[f64]) -> f64 {
    let d = lam.len();
    let hess = f.hessian(x);
    let grad = f.gradient(x);
    let diffusion: f64 = (0..d * d).map(|k| a[k] * hess[k]).sum();
    let drift: f64 = (0..d).map(|i| lam[i] * x.get(i).copied().unwrap_or(0.0) * b[i] * grad[i]).sum();
    0.5 * diffusion - drift
}

/// One entry of the martingale-defect table: `E[phi(X_t1) (f(X_t2) - f(X_t1) - int_t1^t2 Lf)]`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DefectEntry {
    pub t1: f64,
    pub t2: f64,
    pub functional: String,
    pub value: f64,
    pub std_error: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DefectReport {
    pub entries: Vec<DefectEntry>,
    pub max_abs: f64,
    /// Largest `|value| / std_error`.
    pub max_z: f64,
}

type Functional = (&'static str, fn(&[f64]) -> f64);

const DICTIONARY: [Functional; 4] = [
    ("1", |_| 1.0),
    ("tanh(x1)", |x| x[0].tanh()),
    ("cos(x1)", |x| x[0].cos()),
    ("tanh(x2)", |x| x.get(1).copied().unwrap_or(0.0).tanh()),
];

fn grid_indices(e: &PathEnsemble, t_grid: &[f64]) -> Result<Vec<usize>> {
    t_grid
        .iter()
        .map(|&t| {
            let i = e.grid_index(t);
            if (e.grid[i] - t).abs() > 1e-9 * t.abs().max(1.0) {
                Err(invalid("t_grid", format!("time {t} is not on the ensemble grid")))
            } else {
                Ok(i)
            }
        })
        .collect()
}

/// Martingale defect of `f` under the generator of `field`.
pub fn martingale_defect(
    e: &PathEnsemble,
    field: &CoefficientField,
    s: &Spectrum,
    f: &TestFunction,
    t_grid: &[f64],
) -> Result<DefectReport> {
    check_support(field, s, f.depends_on())?;
    let lf = |x: &[f64]| apply_generator(field, s, f, x).unwrap_or(f64::NAN);
    martingale_defect_with(e, &lf, f, t_grid)
}

/// Martingale defect with an arbitrary `Lf` (used for perturbed-generator
/// controls). The time integral uses the trapezoid rule on the ensemble grid.
pub fn martingale_defect_with(e: &PathEnsemble, lf: &dyn ScalarFn, f: &TestFunction, t_grid: &[f64]) -> Result<DefectReport> {
    if f.depends_on() > e.n {
        return Err(Error::DimensionMismatch { what: "function support", got: f.depends_on(), limit: e.n });
    }
    let idx = grid_indices(e, t_grid)?;
    let mut entries = Vec::new();
    for w in idx.windows(2) {
        let (i1, i2) = (w[0], w[1]);
        if i2 <= i1 {
            return Err(invalid("t_grid", "times must be increasing"));
        }
        let per_path: Vec<(Vec<f64>, f64)> = (0..e.count)
            .map(|p| {
                let mut integral = 0.0;
                let mut prev = lf.eval(e.state(p, i1));
                for k in i1 + 1..=i2 {
                    let cur = lf.eval(e.state(p, k));
                    integral += 0.5 * (prev + cur) * (e.grid[k] - e.grid[k - 1]);
                    prev = cur;
                }
                let incr = f.value(e.state(p, i2)) - f.value(e.state(p, i1)) - integral;
                let x1 = e.state(p, i1);
                (DICTIONARY.iter().map(|(_, phi)| phi(x1)).collect(), incr)
            })
            .collect();
        for (k, (name, _)) in DICTIONARY.iter().enumerate() {
            let m: Moments = per_path.iter().map(|(phi, incr)| phi[k] * incr).collect();
            entries.push(DefectEntry {
                t1: e.grid[i1],
                t2: e.grid[i2],
                functional: name.to_string(),
                value: m.mean,
                std_error: m.std_error(),
            });
        }
    }
    let max_abs = entries.iter().map(|d| d.value.abs()).fold(0.0, f64::max);
    let max_z = entries
        .iter()
        .map(|d| if d.value == 0.0 { 0.0 } else { d.value.abs() / d.std_error })
        .fold(0.0, f64::max);
    Ok(DefectReport { entries, max_abs, max_z })
}

/// Weights `w_i` with `sum w_i g(t_i) = int_0^T e^{-lambda s} g(s) ds` for
/// `g` linear between grid points.
pub fn laplace_weights(grid: &[f64], lambda: f64) -> Vec<f64> {
    let mut w = vec![0.0; grid.len()];
    for k in 1..grid.len() {
        let (a, h) = (grid[k - 1], grid[k] - grid[k - 1]);
        if h <= 0.0 {
            continue;
        }
        let ea = (-lambda * a).exp();
        let one_minus = -(-lambda * h).exp_m1();
        let left = ea * (1.0 / lambda - one_minus / (lambda * lambda * h));
        let right = ea * (one_minus / (lambda * lambda * h) - (-lambda * h).exp() / lambda);
        w[k - 1] += left;
        w[k] += right;
    }
    w
}

fn check_horizon(e: &PathEnsemble, lambda: f64) -> Result<()> {
    if !(lambda > 0.0) {
        return Err(invalid("lambda", format!("must be positive, got {lambda}")));
    }
    let t = e.horizon();
    if lambda * t < 10.0 {
        return Err(Error::HorizonTooShort { lambda, actual: t, required: 10.0 / lambda });
    }
    Ok(())
}

/// `S_lambda f = E int_0^inf e^{-lambda s} f(X_s) ds`, truncated at the
/// ensemble horizon `T` (needs `lambda T >= 10`); the truncation bound
/// `||f|| e^{-lambda T} / lambda` is returned as `bias_bound`.
pub fn s_lambda(e: &PathEnsemble, f: &TestFunction, lambda: f64) -> Result<MCEstimate> {
    check_horizon(e, lambda)?;
    let w = laplace_weights(&e.grid, lambda);
    let m: Moments = (0..e.count)
        .map(|p| w.iter().enumerate().map(|(i, wi)| wi * f.value(e.state(p, i))).sum::<f64>())
        .collect();
    let mut est = MCEstimate::from_moments(&m, e.scheme.seed);
    est.bias_bound = f.sup_norm() * (-lambda * e.horizon()).exp() / lambda;
    Ok(est)
}

/// A function of the state that can only be sampled: each draw is an
/// unbiased estimate of its value.
pub trait StochasticFn: Send + Sync {
    /// Number of leading coordinates the function depends on.
    fn depends_on(&self) -> usize;
    fn draw(&self, x: &[f64], rng: &mut Rng) -> Result<f64>;
    fn is_deterministic(&self) -> bool {
        false
    }
}

impl StochasticFn for TestFunction {
    fn depends_on(&self) -> usize {
        TestFunction::depends_on(self)
    }
    fn draw(&self, x: &[f64], _rng: &mut Rng) -> Result<f64> {
        Ok(self.value(x))
    }
    fn is_deterministic(&self) -> bool {
        true
    }
}

/// Monte Carlo effort for one estimate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct McBudget {
    pub count: usize,
    pub seed: u64,
}

/// `B = L - L0` for `field` frozen at `z0`, acting on resolvents of
/// functions of the first `d` coordinates.
#[derive(Clone, Debug)]
pub struct Perturbation {
    field: CoefficientField,
    lam: Vec<f64>,
    b0: Vec<f64>,
    a0: Vec<f64>,
    gen: FrozenGenerator,
    lambda: f64,
    d: usize,
}

impl Perturbation {
    pub fn new(field: &CoefficientField, s: &Spectrum, z0: &State, lambda: f64, d: usize) -> Result<Self> {
        if !(lambda > 0.0) {
            return Err(invalid("lambda", format!("must be positive, got {lambda}")));
        }
        if d == 0 {
            return Err(invalid("d", "support must be at least one coordinate"));
        }
        check_support(field, s, d)?;
        let gen = FrozenGenerator::freeze(&field.with_dim(d), s, z0)?;
        let mut a0 = vec![0.0; d * d];
        field.model().a_block(z0.coords(), d, &mut a0);
        let b0 = (0..d).map(|i| field.b(z0.coords(), i)).collect();
        Ok(Perturbation { field: field.clone(), lam: s.lambdas()[..d].to_vec(), b0, a0, gen, lambda, d })
    }

    pub fn generator(&self) -> &FrozenGenerator {
        &self.gen
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Coordinates `B R_lambda g` depends on when `g` depends on the first `d`.
    pub fn image_support(&self) -> usize {
        image_support(&self.field, self.d)
    }

    /// `(a(x) - a0, lambda_i x_i (b_i(x) - b_i(z0)))` on the first `d` coordinates.
    fn differences(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let d = self.d;
        let mut da = vec![0.0; d * d];
        self.field.model().a_block(x, d, &mut da);
        for (v, a0) in da.iter_mut().zip(&self.a0) {
            *v -= a0;
        }
        let drift = (0..d)
            .map(|i| self.lam[i] * x.get(i).copied().unwrap_or(0.0) * (self.field.b(x, i) - self.b0[i]))
            .collect();
        (da, drift)
    }

    /// One unbiased draw of `B R_lambda g(x)`:
    /// with `tau ~ Exp(lambda)`, `Y ~ N(0, C(tau))`, `v = C^{-1} Y`, `q = e^{-lam_hat tau}`,
    /// `D_i R g ~ (g(m+Y) - g(m-Y))/2 v_i q_i / lambda` and
    /// `D_ij R g ~ ((g(m+Y) + g(m-Y))/2 - g(m)) (v_i v_j - C^{-1}_ij) q_i q_j / lambda`.
    /// The three evaluations of `g` share an inner seed.
    pub fn draw(&self, g: &dyn StochasticFn, x: &[f64], rng: &mut Rng, inner: usize) -> Result<f64> {
        let d = self.d;
        let (da, drift) = self.differences(x);
        let has_a = da.iter().any(|v| *v != 0.0);
        let has_b = drift.iter().any(|v| *v != 0.0);
        let rs = self.gen.resolvent_sample(x, self.lambda, rng, has_a)?;
        let inner_seed: u64 = rng.random();
        if !has_a && !has_b {
            return Ok(0.0);
        }
        let eval = |sign: f64| -> Result<f64> {
            let p: Vec<f64> = (0..d).map(|i| rs.mean[i] + sign * rs.y[i]).collect();
            if g.is_deterministic() {
                return g.draw(&p, &mut rng::substream(inner_seed, domain::NEUMANN, 0));
            }
            let mut r = rng::substream(inner_seed, domain::NEUMANN, 0);
            let mut acc = 0.0;
            for _ in 0..inner.max(1) {
                acc += g.draw(&p, &mut r)?;
            }
            Ok(acc / inner.max(1) as f64)
        };
        let (gp, gm) = (eval(1.0)?, eval(-1.0)?);
        let mut total = 0.0;
        if has_a {
            let second = 0.5 * (gp + gm) - eval(0.0)?;
            let mut w = 0.0;
            for i in 0..d {
                for j in 0..d {
                    let dij = da[i * d + j];
                    if dij != 0.0 {
                        w += dij * (rs.score[i] * rs.score[j] - rs.precision[i * d + j]) * rs.decay[i] * rs.decay[j];
                    }
                }
            }
            total += 0.5 * w * second;
        }
        if has_b {
            let first = 0.5 * (gp - gm);
            total -= first * (0..d).map(|i| drift[i] * rs.score[i] * rs.decay[i]).sum::<f64>();
        }
        Ok(total / self.lambda)
    }

    /// One draw of `R_lambda g(x) = E[g(m + Y)] / lambda`.
    pub fn draw_resolvent(&self, g: &dyn StochasticFn, x: &[f64], rng: &mut Rng) -> Result<f64> {
        let rs = self.gen.resolvent_sample(x, self.lambda, rng, false)?;
        let p: Vec<f64> = (0..self.d).map(|i| rs.mean[i] + rs.y[i]).collect();
        Ok(g.draw(&p, rng)? / self.lambda)
    }
}

/// Support of `B R g` for `g` on the first `d` coordinates.
pub fn image_support(field: &CoefficientField, d: usize) -> usize {
    let model = field.model();
    if !model.b_is_constant() {
        return field.dim().max(d);
    }
    let mut top = d;
    for i in 0..d {
        for j in i..d {
            match model.window(i, j) {
                Some(w) => top = top.max(w.iter().map(|k| k + 1).max().unwrap_or(0)),
                None => return field.dim().max(d),
            }
        }
    }
    top
}

fn estimate<F>(count: usize, seed: u64, dom: u64, f: F) -> Result<MCEstimate>
where
    F: Fn(&mut Rng) -> Result<f64> + Sync,
{
    if count == 0 {
        return Err(invalid("count", "need at least one sample"));
    }
    let parts = par_chunks(count, 256, |c, range| -> Result<Moments> {
        let mut rng = rng::substream(seed, dom, c as u64);
        let mut m = Moments::default();
        for _ in range {
            m.push(f(&mut rng)?);
        }
        Ok(m)
    });
    let parts = parts.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(MCEstimate::from_moments(&Moments::from_chunks(&parts), seed))
}

/// Monte Carlo estimate of `(B R_lambda f)(x)` with `B = L - L0`, `L0`
/// frozen at `z0`.
pub fn perturbation_apply(
    field: &CoefficientField,
    s: &Spectrum,
    z0: &State,
    f: &dyn StochasticFn,
    x: &State,
    lambda: f64,
    budget: McBudget,
) -> Result<MCEstimate> {
    let pert = Perturbation::new(field, s, z0, lambda, f.depends_on().max(1))?;
    let xs = x.coords();
    estimate(budget.count, budget.seed, domain::PERTURBATION, |rng| pert.draw(f, xs, rng, 1))
}

/// `(B R_lambda)^k f` as a sampled function.
#[derive(Clone)]
pub struct IteratedFn {
    pert: Arc<Perturbation>,
    inner: Arc<dyn StochasticFn>,
    inner_draws: usize,
    support: usize,
}

impl IteratedFn {
    pub fn new(pert: Arc<Perturbation>, inner: Arc<dyn StochasticFn>, inner_draws: usize) -> Self {
        let support = pert.image_support();
        IteratedFn { pert, inner, inner_draws, support }
    }
}

impl StochasticFn for IteratedFn {
    fn depends_on(&self) -> usize {
        self.support
    }
    fn draw(&self, x: &[f64], rng: &mut Rng) -> Result<f64> {
        self.pert.draw(self.inner.as_ref(), x, rng, self.inner_draws)
    }
}

/// Budgets for the nested Monte Carlo of the Neumann series. Level `k`
/// uses `max(count * shrink^k, 64)` outer samples and averages
/// `inner` draws of the level below per evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeumannBudget {
    pub count: usize,
    pub shrink: f64,
    pub inner: usize,
    /// Samples per probe point for the per-level sup estimates.
    pub probe_count: usize,
    pub seed: u64,
    /// Largest acceptable standard error of a partial-sum term.
    #[serde(default)]
    pub tolerance: Option<f64>,
}

impl Default for NeumannBudget {
    fn default() -> Self {
        NeumannBudget { count: 20_000, shrink: 0.5, inner: 1, probe_count: 4000, seed: 0, tolerance: None }
    }
}

impl NeumannBudget {
    fn level_count(&self, base: usize, k: usize) -> usize {
        ((base as f64 * self.shrink.powi(k as i32)).ceil() as usize).max(64)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NeumannTrace {
    pub lambda: f64,
    pub k_max: usize,
    /// `R_lambda (B R_lambda)^i f (y0)`.
    pub terms: Vec<MCEstimate>,
    /// `R_lambda sum_{i <= k} (B R_lambda)^i f (y0)`.
    pub partial_sums: Vec<MCEstimate>,
    /// Estimated `sup_x |(B R_lambda)^k f(x)|` over the probe set.
    pub level_sup: Vec<f64>,
    pub level_sup_se: Vec<f64>,
    /// `level_sup[k] / level_sup[k - 1]`.
    pub ratios: Vec<f64>,
}

impl NeumannTrace {
    pub fn max_ratio(&self) -> f64 {
        self.ratios.iter().copied().fold(0.0, f64::max)
    }
}

/// Neumann series `S_lambda f = R_lambda sum_i (B R_lambda)^i f (y0)` up to
/// `k_max`, with per-level sup estimates over `probes`.
#[allow(clippy::too_many_arguments)]
pub fn neumann_series(
    field: &CoefficientField,
    s: &Spectrum,
    z0: &State,
    f: &TestFunction,
    y0: &State,
    lambda: f64,
    k_max: usize,
    probes: &[State],
    budget: &NeumannBudget,
) -> Result<NeumannTrace> {
    let mut level: Arc<dyn StochasticFn> = Arc::new(f.clone());
    let mut terms = Vec::new();
    let mut partial_sums: Vec<MCEstimate> = Vec::new();
    let mut level_sup = Vec::new();
    let mut level_sup_se = Vec::new();
    for k in 0..=k_max {
        let d = level.depends_on().max(1);
        let pert = Arc::new(Perturbation::new(field, s, z0, lambda, d)?);
        let count = budget.level_count(budget.count, k);
        let seed = budget.seed.wrapping_add(k as u64);
        let y = y0.coords();
        let term = if level.is_deterministic() {
            resolvent_apply(pert.generator(), &|x: &[f64]| f.value(x), &y0.resized(d), lambda, ResolventMethod::ExponentialTime, count, seed)?
        } else {
            estimate(count, seed, domain::NEUMANN, |rng| pert.draw_resolvent(level.as_ref(), y, rng))?
        };
        if let Some(tol) = budget.tolerance {
            if term.std_error > tol {
                return Err(Error::BudgetExhausted { depth: k, std_error: term.std_error, required: tol });
            }
        }
        let partial = match partial_sums.last() {
            None => term,
            Some(prev) => MCEstimate {
                value: prev.value + term.value,
                std_error: prev.std_error.hypot(term.std_error),
                samples: prev.samples + term.samples,
                seed: budget.seed,
                bias_bound: 0.0,
            },
        };
        terms.push(term);
        partial_sums.push(partial);

        let (mut sup, mut sup_se) = (0.0f64, 0.0);
        let probe_count = budget.level_count(budget.probe_count, k);
        for (pi, p) in probes.iter().enumerate() {
            let xs = p.coords();
            let est = if level.is_deterministic() {
                MCEstimate::exact(f.value(xs), seed)
            } else {
                let ps = seed.wrapping_mul(1000).wrapping_add(pi as u64);
                estimate(probe_count, ps, domain::SAMPLER, |rng| level.draw(xs, rng))?
            };
            if est.value.abs() > sup {
                sup = est.value.abs();
                sup_se = est.std_error;
            }
        }
        level_sup.push(sup);
        level_sup_se.push(sup_se);

        if k < k_max {
            let next = IteratedFn::new(pert, level.clone(), budget.inner);
            if next.depends_on() > field.dim() {
                return Err(Error::DimensionMismatch { what: "iterate support", got: next.depends_on(), limit: field.dim() });
            }
            level = Arc::new(next);
        }
    }
    let ratios = level_sup
        .windows(2)
        .map(|w| if w[0] > 0.0 { w[1] / w[0] } else { 0.0 })
        .collect();
    Ok(NeumannTrace { lambda, k_max, terms, partial_sums, level_sup, level_sup_se, ratios })
}

/// Smallest `lambda` in an increasing ladder from which every trace has all
/// level ratios below `threshold`.
pub fn contraction_threshold(traces: &[NeumannTrace], threshold: f64) -> Option<f64> {
    let mut found = None;
    for t in traces.iter().rev() {
        if t.max_ratio() < threshold {
            found = Some(t.lambda);
        } else {
            break;
        }
    }
    found
}

/// Residual of `S_lambda f = R_lambda f(y0) + S_lambda B R_lambda f`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ResidualReport {
    pub s_lambda_f: f64,
    pub r_lambda_f: MCEstimate,
    pub s_lambda_brf: f64,
    /// Residual with its combined standard error and truncation bound.
    pub residual: MCEstimate,
    /// `|residual| / std_error`.
    pub normalized: f64,
}

/// Estimates the resolvent-identity residual along the paths of `e`.
/// `S_lambda f` uses the exact-exponential quadrature on the grid;
/// `S_lambda B R_lambda f` samples grid times with the same weights and
/// draws `B R_lambda f` there.
#[allow(clippy::too_many_arguments)]
pub fn resolvent_identity_residual(
    e: &PathEnsemble,
    field: &CoefficientField,
    s: &Spectrum,
    z0: &State,
    f: &TestFunction,
    lambda: f64,
    draws_per_path: usize,
    r_budget: McBudget,
) -> Result<ResidualReport> {
    check_horizon(e, lambda)?;
    let d = f.depends_on().max(1);
    if d > e.n {
        return Err(Error::DimensionMismatch { what: "function support", got: d, limit: e.n });
    }
    let pert = Perturbation::new(field, s, z0, lambda, d)?;
    let w = laplace_weights(&e.grid, lambda);
    let total: f64 = w.iter().sum();
    let cdf: Vec<f64> = w
        .iter()
        .scan(0.0, |acc, v| {
            *acc += v / total;
            Some(*acc)
        })
        .collect();
    let draws = draws_per_path.max(1);
    let seed = e.scheme.seed ^ r_budget.seed.rotate_left(17);
    let parts = par_chunks(e.count, 64, |_, range| -> Result<(Moments, Moments, Moments)> {
        let (mut md, mut mf, mut mb) = (Moments::default(), Moments::default(), Moments::default());
        for p in range {
            let mut rng = rng::substream(seed, domain::RESIDUAL, p as u64);
            let sf: f64 = w.iter().enumerate().map(|(i, wi)| wi * f.value(e.state(p, i))).sum();
            let mut bg = 0.0;
            for _ in 0..draws {
                let u: f64 = rng.random();
                let i = cdf.partition_point(|c| *c < u).min(cdf.len() - 1);
                bg += total * pert.draw(f, e.state(p, i), &mut rng, 1)?;
            }
            bg /= draws as f64;
            md.push(sf - bg);
            mf.push(sf);
            mb.push(bg);
        }
        Ok((md, mf, mb))
    });
    let parts = parts.into_iter().collect::<Result<Vec<_>>>()?;
    let md = Moments::from_chunks(parts.iter().map(|p| &p.0));
    let mf = Moments::from_chunks(parts.iter().map(|p| &p.1));
    let mb = Moments::from_chunks(parts.iter().map(|p| &p.2));
    let r = resolvent_apply(
        pert.generator(),
        &|x: &[f64]| f.value(x),
        &e.x0.resized(d),
        lambda,
        ResolventMethod::ExponentialTime,
        r_budget.count,
        r_budget.seed,
    )?;
    let value = md.mean - r.value;
    let std_error = md.std_error().hypot(r.std_error);
    let residual = MCEstimate {
        value,
        std_error,
        samples: md.n + r.samples,
        seed,
        bias_bound: f.sup_norm() * (-lambda * e.horizon()).exp() / lambda,
    };
    Ok(ResidualReport {
        s_lambda_f: mf.mean,
        r_lambda_f: r,
        s_lambda_brf: mb.mean,
        residual,
        normalized: if value == 0.0 { 0.0 } else { value.abs() / std_error },
    })
}

/// Agreement of `S_lambda f` computed from two independent constructions.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct UniquenessReport {
    pub first: MCEstimate,
    pub second: MCEstimate,
    pub difference: f64,
    pub joint_se: f64,
    pub allowance: f64,
    pub agree: bool,
}

/// Pass iff `|S1 - S2| <= 3 joint SE + allowance + truncation bounds`.
pub fn uniqueness_probe(
    e1: &PathEnsemble,
    e2: &PathEnsemble,
    f: &TestFunction,
    lambda: f64,
    allowance: f64,
) -> Result<UniquenessReport> {
    let a = s_lambda(e1, f, lambda)?;
    let b = s_lambda(e2, f, lambda)?;
    let difference = a.value - b.value;
    let joint_se = a.std_error.hypot(b.std_error);
    let slack = 3.0 * joint_se + allowance + a.bias_bound + b.bias_bound;
    Ok(UniquenessReport { first: a, second: b, difference, joint_se, allowance, agree: difference.abs() <= slack })
}

/// Sampled lower estimate of the `C^alpha` operator norm of `B R_lambda`
/// over a probe family: `max_f (sup|BRf| + max quotient) / (||f|| + |f|_alpha)`
/// with the quotient taken over consecutive pairs of `points` (common
/// random numbers within a pair). A diagnostic, not a certified norm.
#[allow(clippy::too_many_arguments)]
pub fn perturbation_norm_diagnostic(
    field: &CoefficientField,
    s: &Spectrum,
    z0: &State,
    probes: &[TestFunction],
    points: &[State],
    lambda: f64,
    alpha: f64,
    budget: McBudget,
) -> Result<f64> {
    let mut best: f64 = 0.0;
    for (fi, f) in probes.iter().enumerate() {
        let pert = Perturbation::new(field, s, z0, lambda, f.depends_on().max(1))?;
        let seed = budget.seed.wrapping_add(fi as u64);
        let vals = points
            .iter()
            .map(|x| estimate(budget.count, seed, domain::PERTURBATION, |rng| pert.draw(f, x.coords(), rng, 1)))
            .collect::<Result<Vec<_>>>()?;
        let sup = vals.iter().map(|v| v.value.abs()).fold(0.0, f64::max);
        let mut quotient: f64 = 0.0;
        for k in 1..points.len() {
            let r = points[k].sub(&points[k - 1]).norm();
            if r > 0.0 {
                quotient = quotient.max((vals[k].value - vals[k - 1].value).abs() / r.powf(alpha));
            }
        }
        let denom = f.sup_norm() + f.holder_bound(alpha);
        if denom > 0.0 {
            best = best.max((sup + quotient) / denom);
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{banded_field, constant_field, BlockKind, FieldModel, StandardBlock};
    use crate::galerkin::{simulate, simulate_exact_ou, SchemeSpec, Stepper};
    use crate::spectrum::{make_spectrum, EigenRule};
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    fn unit_field(n: usize) -> CoefficientField {
        constant_field(DMatrix::identity(n, n), vec![1.0; n], 1.0).unwrap()
    }

    /// `a_11 = 1 + 0.5 tanh(x_1)`, everything else the identity, `b = 1`.
    #[derive(Debug)]
    struct OneEntry;
    impl FieldModel for OneEntry {
        fn a(&self, x: &[f64], i: usize, j: usize) -> f64 {
            match (i, j) {
                (0, 0) => 1.0 + 0.5 * x[0].tanh(),
                _ if i == j => 1.0,
                _ => 0.0,
            }
        }
        fn b(&self, _x: &[f64], _i: usize) -> f64 {
            1.0
        }
        fn b_is_constant(&self) -> bool {
            true
        }
        fn window(&self, i: usize, j: usize) -> Option<Vec<usize>> {
            Some(if i == 0 && j == 0 { vec![0] } else { vec![] })
        }
    }

    /// Identity diffusion, `b_1 = 1 + 0.5 sin(x_1)`.
    #[derive(Debug)]
    struct DriftOnly;
    impl FieldModel for DriftOnly {
        fn a(&self, _x: &[f64], i: usize, j: usize) -> f64 {
            if i == j {
                1.0
            } else {
                0.0
            }
        }
        fn b(&self, x: &[f64], i: usize) -> f64 {
            if i == 0 {
                1.0 + 0.5 * x[0].sin()
            } else {
                1.0
            }
        }
    }

    fn field_from(model: impl FieldModel + 'static, n: usize) -> CoefficientField {
        CoefficientField::from_model(n, Arc::new(model), 0.4, 0.5, None, "test").unwrap()
    }

    #[test]
    fn generator_examples() {
        let s = Spectrum::finite(vec![2.0]).unwrap();
        let f = make_test_function("sine", 1, &[1.0]).unwrap();
        let field = field_from(OneEntry, 1);
        let x = [0.7];
        let a11 = 1.0 + 0.5 * 0.7f64.tanh();
        let want = -0.5 * a11 * 0.7f64.sin() - 2.0 * 0.7 * 0.7f64.cos();
        assert!((apply_generator(&field, &s, &f, &x).unwrap() - want).abs() < 1e-14);
        let c = make_test_function("constant", 0, &[1.0]).unwrap();
        assert_eq!(apply_generator(&field, &s, &c, &x).unwrap(), 0.0);

        let s3 = make_spectrum(2.0, 1.0, 3, &EigenRule::Power).unwrap();
        let a0 = DMatrix::from_row_slice(3, 3, &[1.0, 0.2, 0.0, 0.2, 0.9, 0.1, 0.0, 0.1, 1.1]);
        let cf = constant_field(a0, vec![1.0, 2.0, 0.5], 0.5).unwrap();
        let g = FrozenGenerator::freeze(&cf, &s3, &State::zeros(3)).unwrap();
        let f3 = make_test_function("gaussian-bump", 3, &[0.1, 0.2, -0.3, 0.7]).unwrap();
        let x = [0.3, -0.4, 0.5];
        assert_eq!(apply_generator(&cf, &s3, &f3, &x).unwrap(), apply_frozen_generator(&g, &f3, &x).unwrap());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn generator_matches_finite_differences(x in proptest::collection::vec(-1.5f64..1.5, 3), c in proptest::collection::vec(-2.0f64..2.0, 3)) {
            let s = make_spectrum(2.0, 1.0, 3, &EigenRule::Power).unwrap();
            let field = banded_field(1, 1, Arc::new(StandardBlock::new(BlockKind::SinSum, 0.2)), 0.5, 0.5, &s).unwrap();
            let f = make_test_function("sine", 3, &c).unwrap();
            let lf = apply_generator(&field, &s, &f, &x).unwrap();
            let h = 1e-3;
            let at = |dx: &[f64]| f.value(&(0..3).map(|i| x[i] + dx[i]).collect::<Vec<_>>());
            let mut fd = 0.0;
            for i in 0..3 {
                for j in 0..3 {
                    let mut e = [[0.0; 3]; 4];
                    e[0][i] += h; e[0][j] += h;
                    e[1][i] += h; e[1][j] -= h;
                    e[2][i] -= h; e[2][j] += h;
                    e[3][i] -= h; e[3][j] -= h;
                    let dij = (at(&e[0]) - at(&e[1]) - at(&e[2]) + at(&e[3])) / (4.0 * h * h);
                    fd += 0.5 * field.a(&x, i, j) * dij;
                }
                let mut ep = [0.0; 3];
                ep[i] = h;
                let mut em = [0.0; 3];
                em[i] = -h;
                fd -= s.lambdas()[i] * x[i] * field.b(&x, i) * (at(&ep) - at(&em)) / (2.0 * h);
            }
            let scale = 1.0 + lf.abs();
            prop_assert!((lf - fd).abs() < 1e-4 * scale, "{} vs {}", lf, fd);
        }
    }

    #[test]
    fn laplace_weights_integrate_exponentials() {
        let grid: Vec<f64> = (0..=100).map(|k| k as f64 * 0.01).collect();
        let w = laplace_weights(&grid, 3.0);
        let total: f64 = w.iter().sum();
        assert!((total - (1.0 - (-3.0f64).exp()) / 3.0).abs() < 1e-14);
        // Exact for linear integrands.
        let lin: f64 = w.iter().zip(&grid).map(|(w, t)| w * t).sum();
        let want = (1.0 - (-3.0f64).exp() * 4.0) / 9.0;
        assert!((lin - want).abs() < 1e-14);
    }

    fn ou_ensemble(lambda_t: f64, count: usize, seed: u64, dt: f64) -> (CoefficientField, Spectrum, PathEnsemble) {
        let s = make_spectrum(2.0, 1.0, 2, &EigenRule::Power).unwrap();
        let field = unit_field(2);
        let g = FrozenGenerator::freeze(&field, &s, &State::zeros(2)).unwrap();
        let x0 = State::new(vec![0.6, -0.4]).unwrap();
        let e = simulate_exact_ou(&g, &x0, &SchemeSpec::new(Stepper::ExponentialEuler, dt, lambda_t, 2, count, seed)).unwrap();
        (field, s, e)
    }

    #[test]
    fn s_lambda_examples() {
        let (field, s, e) = ou_ensemble(1.0, 2000, 1, 0.01);
        let one = make_test_function("constant", 0, &[1.0]).unwrap();
        let a = s_lambda(&e, &one, 10.0).unwrap();
        assert!(a.covers(0.1, 3.0));
        let b = s_lambda(&e, &one, 20.0).unwrap();
        assert!((a.value / b.value - 2.0).abs() < 1e-3);
        assert!(matches!(s_lambda(&e, &one, 5.0), Err(Error::HorizonTooShort { .. })));

        let f = make_test_function("sine", 2, &[1.0, 0.5, 0.3]).unwrap();
        let sl = s_lambda(&e, &f, 10.0).unwrap();
        let g = FrozenGenerator::freeze(&field, &s, &e.x0).unwrap();
        let r = resolvent_apply(&g, &f, &e.x0, 10.0, ResolventMethod::ExponentialTime, 200_000, 3).unwrap();
        let joint = sl.std_error.hypot(r.std_error);
        assert!((sl.value - r.value).abs() < 3.0 * joint + sl.bias_bound + 1e-4, "{sl:?} {r:?}");
    }

    #[test]
    fn defect_on_exact_paths() {
        let (field, s, e) = ou_ensemble(1.0, 4000, 2, 0.002);
        let f = make_test_function("sine", 2, &[1.0, 0.5]).unwrap();
        let times = [0.0, 0.25, 0.5, 1.0];
        let rep = martingale_defect(&e, &field, &s, &f, &times).unwrap();
        assert!(rep.max_z < 4.0, "{rep:?}");
        let c = make_test_function("constant", 0, &[2.0]).unwrap();
        assert_eq!(martingale_defect(&e, &field, &s, &c, &times).unwrap().max_abs, 0.0);
        // Negative control: doubled drift in the generator only.
        let wrong = |x: &[f64]| {
            let grad = f.gradient(x);
            let hess = f.hessian(x);
            0.5 * (hess[0] + hess[3]) - 2.0 * (s.lambdas()[0] * x[0] * grad[0] + s.lambdas()[1] * x[1] * grad[1])
        };
        let bad = martingale_defect_with(&e, &wrong, &f, &times).unwrap();
        assert!(bad.max_z >= 5.0, "{bad:?}");
        assert!(martingale_defect(&e, &field, &s, &f, &[0.0, 0.1234]).is_err());
    }

    #[test]
    fn perturbation_examples() {
        let s = make_spectrum(2.0, 1.0, 2, &EigenRule::Power).unwrap();
        let z0 = State::zeros(2);
        let budget = McBudget { count: 20_000, seed: 1 };
        let f = make_test_function("sine", 2, &[1.0, 1.0]).unwrap();
        let x = State::new(vec![0.4, -0.3]).unwrap();
        let zero = perturbation_apply(&unit_field(2), &s, &z0, &f, &x, 5.0, budget).unwrap();
        assert_eq!(zero.value, 0.0);

        // a_11 varies only: B R f(x) = 1/2 (a11(x) - a11(z0)) D_11 R f, with
        // D_11 R x1^2 = 2 / (lambda + 2 lam_hat_1).
        #[derive(Debug)]
        struct Square;
        impl StochasticFn for Square {
            fn depends_on(&self) -> usize {
                1
            }
            fn draw(&self, x: &[f64], _: &mut crate::rng::Rng) -> Result<f64> {
                Ok(x[0] * x[0])
            }
            fn is_deterministic(&self) -> bool {
                true
            }
        }
        let field = field_from(OneEntry, 2);
        let x = State::new(vec![0.8, 0.0]).unwrap();
        let lambda = 3.0;
        let est = perturbation_apply(&field, &s, &z0, &Square, &x, lambda, McBudget { count: 200_000, seed: 5 }).unwrap();
        let want = 0.5 * (0.5 * 0.8f64.tanh()) * 2.0 / (lambda + 2.0);
        assert!(est.covers(want, 3.0), "{est:?} vs {want}");
    }

    #[test]
    fn drift_perturbation_matches_finite_differences() {
        let s = Spectrum::finite(vec![1.0]).unwrap();
        let field = field_from(DriftOnly, 1);
        let z0 = State::zeros(1);
        let f = make_test_function("sine", 1, &[1.0, 0.3]).unwrap();
        let x = State::new(vec![0.9]).unwrap();
        let lambda = 2.0;
        let est = perturbation_apply(&field, &s, &z0, &f, &x, lambda, McBudget { count: 200_000, seed: 2 }).unwrap();
        // -lambda_1 x (b(x) - b(z0)) D R f, with D R f by finite differences of
        // the Laguerre resolvent under common random numbers.
        let g = FrozenGenerator::freeze(&field, &s, &z0).unwrap();
        let h = 1e-3;
        let r = |v: f64| {
            resolvent_apply(&g, &f, &State::new(vec![v]).unwrap(), lambda, ResolventMethod::Laguerre { nodes: 40 }, 200_000, 9).unwrap().value
        };
        let drf = (r(0.9 + h) - r(0.9 - h)) / (2.0 * h);
        let want = -0.9 * (0.5 * 0.9f64.sin()) * drf;
        assert!(est.covers(want, 3.5), "{est:?} vs {want}");
    }

    #[test]
    fn neumann_trivial_cases() {
        let s = make_spectrum(2.0, 1.0, 2, &EigenRule::Power).unwrap();
        let f = make_test_function("sine", 2, &[1.0, 1.0]).unwrap();
        let y0 = State::new(vec![0.3, 0.1]).unwrap();
        let budget = NeumannBudget { count: 4000, probe_count: 200, ..Default::default() };
        let probes = vec![y0.clone()];
        let t0 = neumann_series(&unit_field(2), &s, &y0, &f, &y0, 10.0, 0, &probes, &budget).unwrap();
        assert_eq!(t0.terms.len(), 1);
        let t2 = neumann_series(&unit_field(2), &s, &y0, &f, &y0, 10.0, 2, &probes, &budget).unwrap();
        assert_eq!(t2.partial_sums[2].value, t0.terms[0].value);
        assert!(t2.ratios.iter().all(|r| *r == 0.0));
    }

    #[test]
    fn neumann_contracts_for_small_eta() {
        let s = make_spectrum(2.0, 1.0, 6, &EigenRule::Power).unwrap();
        let field = banded_field(1, 1, Arc::new(StandardBlock::new(BlockKind::SinSum, 0.1)), 0.5, 0.5, &s).unwrap();
        let y0 = State::new(vec![0.2, -0.1]).unwrap();
        let f = make_test_function("sine", 2, &[1.0, 1.0]).unwrap();
        let probes: Vec<State> = (0..4).map(|k| State::new(vec![0.3 * k as f64 - 0.4, 0.2]).unwrap()).collect();
        let budget = NeumannBudget { count: 4000, probe_count: 2000, seed: 3, ..Default::default() };
        let t = neumann_series(&field, &s, &y0, &f, &y0, 20.0, 2, &probes, &budget).unwrap();
        assert!(t.ratios[0] < 0.5, "{t:?}");
        let d = (t.partial_sums[2].value - t.partial_sums[1].value).abs();
        assert!(d <= 3.0 * t.terms[2].std_error + 1e-12, "{t:?}");
    }

    #[test]
    fn contraction_threshold_shrinks_with_eta() {
        let s = make_spectrum(2.0, 1.0, 6, &EigenRule::Power).unwrap();
        let y0 = State::new(vec![0.2, -0.1]).unwrap();
        let f = make_test_function("sine", 2, &[1.0, 1.0]).unwrap();
        let probes: Vec<State> = (0..4).map(|k| State::new(vec![0.3 * k as f64 - 0.4, 0.2]).unwrap()).collect();
        let budget = NeumannBudget { count: 2000, probe_count: 1000, seed: 5, ..Default::default() };
        let ladder = [2.0, 5.0, 10.0, 20.0, 40.0];
        let mut prev = f64::INFINITY;
        for eta in [0.4, 0.2, 0.05] {
            let field = banded_field(1, 1, Arc::new(StandardBlock::new(BlockKind::SinSum, eta)), 0.5, 0.5, &s).unwrap();
            let traces: Vec<_> = ladder
                .iter()
                .map(|&l| neumann_series(&field, &s, &y0, &f, &y0, l, 1, &probes, &budget).unwrap())
                .collect();
            let th = contraction_threshold(&traces, 0.3).unwrap_or(f64::INFINITY);
            assert!(th <= prev, "eta {eta}: threshold {th} above {prev}");
            prev = th;
        }
        assert!(prev.is_finite());
    }

    #[test]
    fn residual_constant_field() {
        let (field, s, e) = ou_ensemble(1.0, 4000, 4, 0.005);
        let f = make_test_function("sine", 2, &[1.0, 0.5, 0.2]).unwrap();
        let rep = resolvent_identity_residual(&e, &field, &s, &State::zeros(2), &f, 10.0, 1, McBudget { count: 100_000, seed: 8 }).unwrap();
        assert_eq!(rep.s_lambda_brf, 0.0);
        assert!(rep.normalized < 3.0, "{rep:?}");
        let one = make_test_function("constant", 0, &[1.0]).unwrap();
        let rep = resolvent_identity_residual(&e, &field, &s, &State::zeros(2), &one, 10.0, 1, McBudget { count: 1000, seed: 8 }).unwrap();
        assert!(rep.residual.value.abs() <= rep.residual.bias_bound + 1e-12);
    }

    #[test]
    fn residual_banded_field() {
        let s = make_spectrum(2.0, 1.0, 2, &EigenRule::Power).unwrap();
        let field = banded_field(1, 1, Arc::new(StandardBlock::new(BlockKind::SinSum, 0.1)), 0.5, 0.5, &s).unwrap();
        let y0 = State::new(vec![0.5, -0.3]).unwrap();
        let e = simulate(&field, &s, &y0, &SchemeSpec::new(Stepper::ExponentialEuler, 0.002, 1.0, 2, 4000, 6)).unwrap();
        let f = make_test_function("sine", 2, &[1.0, 1.0, 0.4]).unwrap();
        let rep = resolvent_identity_residual(&e, &field, &s, &y0, &f, 20.0, 4, McBudget { count: 100_000, seed: 2 }).unwrap();
        assert!(rep.normalized <= 3.0, "{rep:?}");
    }

    #[test]
    fn uniqueness_control() {
        let (_, s, e1) = ou_ensemble(1.0, 3000, 1, 0.01);
        let (_, _, e2) = ou_ensemble(1.0, 3000, 2, 0.005);
        let f = make_test_function("sine", 2, &[1.0, 0.0, 1.0]).unwrap();
        assert!(uniqueness_probe(&e1, &e2, &f, 10.0, 1e-3).unwrap().agree);
        let slow = constant_field(DMatrix::identity(2, 2), vec![0.1, 0.1], 0.1).unwrap();
        let e3 = simulate(&slow, &s, &e1.x0, &SchemeSpec::new(Stepper::ExponentialEuler, 0.01, 1.0, 2, 3000, 3)).unwrap();
        let rep = uniqueness_probe(&e1, &e3, &f, 10.0, 0.0).unwrap();
        assert!(rep.difference.abs() >= 5.0 * rep.joint_se, "{rep:?}");
    }
}
