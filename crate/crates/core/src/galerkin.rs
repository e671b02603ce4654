//! Galerkin truncation of the SDE system, weighted-norm tracking and the
//! increment-moment scaling diagnostic.

use std::collections::VecDeque;
use std::io::Write;

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coefficients::{psd_sqrt, CoefficientField};
use crate::error::{invalid, Error, Result};
use crate::ou_kernel::{transition, FrozenGenerator};
use crate::rng::{self, domain, par_chunks, Rng};
use crate::spectrum::{check_beta, weighted_norm_unchecked, Spectrum, State};
use crate::stats::{quantile, regression_slope, Moments};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stepper {
    EulerMaruyama,
    /// Drift integrated exactly over each step with `b` frozen.
    #[default]
    ExponentialEuler,
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchemeSpec {
    #[serde(default)]
    pub stepper: Stepper,
    pub dt: f64,
    pub horizon: f64,
    pub n: usize,
    pub count: usize,
    pub seed: u64,
    /// Record every `save_every`-th step (the final step is always kept).
    #[serde(default = "one")]
    pub save_every: usize,
    /// Recompute the diffusion square root every `sqrt_refresh` steps.
    #[serde(default = "one")]
    pub sqrt_refresh: usize,
}

impl SchemeSpec {
    pub fn new(stepper: Stepper, dt: f64, horizon: f64, n: usize, count: usize, seed: u64) -> Self {
        SchemeSpec { stepper, dt, horizon, n, count, seed, save_every: 1, sqrt_refresh: 1 }
    }

    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }

    /// Step indices that are recorded.
    pub fn record_steps(&self) -> Vec<usize> {
        let steps = self.steps();
        let every = self.save_every.max(1);
        let mut r: Vec<usize> = (0..=steps).step_by(every).collect();
        if *r.last().unwrap() != steps {
            r.push(steps);
        }
        r
    }

    pub fn validate(&self, max_rate: f64, gamma: f64) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(invalid("dt", format!("must be positive, got {}", self.dt)));
        }
        if !(self.horizon >= 0.0) || !self.horizon.is_finite() {
            return Err(invalid("horizon", format!("must be nonnegative, got {}", self.horizon)));
        }
        if ((self.horizon / self.dt).round() * self.dt - self.horizon).abs() > 1e-9 * self.horizon.max(1.0) {
            return Err(invalid("dt", format!("horizon {} is not a multiple of dt {}", self.horizon, self.dt)));
        }
        if self.n == 0 {
            return Err(invalid("n", "truncation must be at least 1"));
        }
        if self.stepper == Stepper::EulerMaruyama {
            let value = self.dt * max_rate / gamma;
            if value >= 0.5 {
                return Err(Error::UnstableStep { value });
            }
        }
        Ok(())
    }
}

/// Simulated trajectories on a common time grid, path-major:
/// `data[(path * grid.len() + ti) * n + k]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathEnsemble {
    pub grid: Vec<f64>,
    pub n: usize,
    pub count: usize,
    pub data: Vec<f64>,
    pub scheme: SchemeSpec,
    pub field_id: String,
    pub x0: State,
}

impl PathEnsemble {
    pub fn horizon(&self) -> f64 {
        *self.grid.last().unwrap_or(&0.0)
    }

    pub fn state(&self, path: usize, ti: usize) -> &[f64] {
        let o = (path * self.grid.len() + ti) * self.n;
        &self.data[o..o + self.n]
    }

    pub fn value(&self, path: usize, ti: usize, k: usize) -> f64 {
        self.state(path, ti)[k]
    }

    pub fn terminal(&self, path: usize) -> &[f64] {
        self.state(path, self.grid.len() - 1)
    }

    /// Index of the grid point closest to `t`.
    pub fn grid_index(&self, t: f64) -> usize {
        let mut best = 0;
        for (i, g) in self.grid.iter().enumerate() {
            if (g - t).abs() < (self.grid[best] - t).abs() {
                best = i;
            }
        }
        best
    }

    /// Columnar export with header `path,t,k,value` (`k` one-based).
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["path", "t", "k", "value"])?;
        for p in 0..self.count {
            for (ti, t) in self.grid.iter().enumerate() {
                for (k, v) in self.state(p, ti).iter().enumerate() {
                    wr.write_record(&[p.to_string(), format!("{t}"), (k + 1).to_string(), format!("{v}")])?;
                }
            }
        }
        wr.flush()?;
        Ok(())
    }
}

/// Square root of the leading `n x n` block in `buf`, with a diagonal fast path.
fn sqrt_into(buf: &[f64], n: usize, out: &mut [f64]) -> Result<()> {
    let diagonal = (0..n).all(|i| (0..n).all(|j| i == j || buf[i * n + j] == 0.0));
    if diagonal {
        out.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..n {
            let d = buf[i * n + i];
            if d < -1e-12 * d.abs().max(1.0) {
                return Err(Error::Indefinite { eigenvalue: d });
            }
            out[i * n + i] = d.max(0.0).sqrt();
        }
        return Ok(());
    }
    let s = psd_sqrt(&DMatrix::from_row_slice(n, n, buf))?;
    for i in 0..n {
        for j in 0..n {
            out[i * n + j] = s[(i, j)];
        }
    }
    Ok(())
}

fn coord_streams(seed: u64, path: usize, n: usize) -> Vec<Rng> {
    (0..n).map(|k| rng::path_coord_stream(seed, domain::GALERKIN, path, k)).collect()
}

/// Simulates `X^n` on `[0, T]`:
/// `X_k <- X_k - lambda_k b_k(X) X_k dt + (sigma dW)_k` (Euler-Maruyama) or
/// `X_k <- e^{-lambda_k b_k(X) dt} X_k + (sigma dW)_k` (exponential Euler),
/// with `sigma = a(X)^{1/2}` on the leading `n x n` block.
///
/// Coordinate `k` of path `p` draws its increments from its own stream, so
/// runs at different truncations are coupled.
pub fn simulate(field: &CoefficientField, s: &Spectrum, x0: &State, spec: &SchemeSpec) -> Result<PathEnsemble> {
    let n = spec.n;
    if field.dim() < n {
        return Err(Error::DimensionMismatch { what: "truncation", got: n, limit: field.dim() });
    }
    s.check_dim("truncation", n)?;
    let lam = &s.lambdas()[..n];
    spec.validate(lam[n - 1], field.gamma())?;
    let x_init = x0.resized(n).into_vec();
    let record = spec.record_steps();
    let steps = spec.steps();
    let sqdt = spec.dt.sqrt();

    let constant_sigma = if field.is_constant() {
        let mut buf = vec![0.0; n * n];
        field.model().a_block(&x_init, n, &mut buf);
        let mut sig = vec![0.0; n * n];
        sqrt_into(&buf, n, &mut sig)?;
        Some(sig)
    } else {
        None
    };

    let stride = record.len() * n;
    let mut data = vec![0.0; spec.count * stride];
    data.par_chunks_mut(stride).enumerate().try_for_each(|(p, out)| -> Result<()> {
        let mut rngs = coord_streams(spec.seed, p, n);
        let mut x = x_init.clone();
        let mut buf = vec![0.0; n * n];
        let mut sig = constant_sigma.clone().unwrap_or_else(|| vec![0.0; n * n]);
        let mut dw = vec![0.0; n];
        let mut next = vec![0.0; n];
        let mut ri = 0;
        for step in 0..=steps {
            if record[ri] == step {
                out[ri * n..(ri + 1) * n].copy_from_slice(&x);
                ri += 1;
                if step == steps {
                    break;
                }
            }
            if constant_sigma.is_none() && step % spec.sqrt_refresh.max(1) == 0 {
                field.model().a_block(&x, n, &mut buf);
                sqrt_into(&buf, n, &mut sig)?;
            }
            for k in 0..n {
                let z: f64 = StandardNormal.sample(&mut rngs[k]);
                dw[k] = sqdt * z;
            }
            for k in 0..n {
                let noise: f64 = (0..n).map(|j| sig[k * n + j] * dw[j]).sum();
                let rate = lam[k] * field.b(&x, k);
                next[k] = match spec.stepper {
                    Stepper::EulerMaruyama => x[k] - rate * x[k] * spec.dt + noise,
                    Stepper::ExponentialEuler => (-rate * spec.dt).exp() * x[k] + noise,
                };
            }
            if next.iter().any(|v| !v.is_finite()) {
                return Err(Error::BlowUp { path: p, step: step + 1 });
            }
            std::mem::swap(&mut x, &mut next);
        }
        Ok(())
    })?;

    Ok(PathEnsemble {
        grid: record.iter().map(|&k| k as f64 * spec.dt).collect(),
        n,
        count: spec.count,
        data,
        scheme: spec.clone(),
        field_id: field.id().to_string(),
        x0: State::from(x_init),
    })
}

/// Exact OU paths of the frozen generator on the scheme's grid:
/// `X <- Q_dt X + C(dt)^{1/2} xi`. Uses the same per-coordinate streams as
/// [`simulate`], so equal seeds give coupled ensembles.
pub fn simulate_exact_ou(g: &FrozenGenerator, x0: &State, spec: &SchemeSpec) -> Result<PathEnsemble> {
    let n = g.dim();
    if spec.n != n {
        return Err(invalid("n", format!("scheme truncation {} differs from generator dimension {n}", spec.n)));
    }
    spec.validate(0.0, 1.0)?;
    let x_init = x0.resized(n).into_vec();
    let root = psd_sqrt(&g.covariance(spec.dt))?;
    let decay: Vec<f64> = g.lam_hat().iter().map(|l| (-l * spec.dt).exp()).collect();
    let record = spec.record_steps();
    let steps = spec.steps();
    let stride = record.len() * n;
    let mut data = vec![0.0; spec.count * stride];
    data.par_chunks_mut(stride).enumerate().for_each(|(p, out)| {
        let mut rngs = coord_streams(spec.seed, p, n);
        let mut x = x_init.clone();
        let mut z = vec![0.0; n];
        let mut ri = 0;
        for step in 0..=steps {
            if record[ri] == step {
                out[ri * n..(ri + 1) * n].copy_from_slice(&x);
                ri += 1;
                if step == steps {
                    break;
                }
            }
            for k in 0..n {
                z[k] = StandardNormal.sample(&mut rngs[k]);
            }
            let prev = x.clone();
            for k in 0..n {
                x[k] = decay[k] * prev[k] + (0..n).map(|j| root[(k, j)] * z[j]).sum::<f64>();
            }
        }
    });
    Ok(PathEnsemble {
        grid: record.iter().map(|&k| k as f64 * spec.dt).collect(),
        n,
        count: spec.count,
        data,
        scheme: spec.clone(),
        field_id: "exact-ou".into(),
        x0: State::from(x_init),
    })
}

/// Terminal first and second moments of an ensemble with standard errors,
/// row-major over `(i, j)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TerminalMoments {
    pub mean: Vec<Moments2>,
    pub second: Vec<Moments2>,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Moments2 {
    pub value: f64,
    pub std_error: f64,
}

impl From<&Moments> for Moments2 {
    fn from(m: &Moments) -> Self {
        Moments2 { value: m.mean, std_error: m.std_error() }
    }
}

/// Terminal mean and centred covariance estimates (covariance standard
/// errors from the sample variance of the centred products).
pub fn terminal_moments(e: &PathEnsemble) -> TerminalMoments {
    let n = e.n;
    let mean: Vec<Moments> = (0..n).map(|k| (0..e.count).map(|p| e.terminal(p)[k]).collect()).collect();
    let mut second = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let m: Moments =
                (0..e.count).map(|p| (e.terminal(p)[i] - mean[i].mean) * (e.terminal(p)[j] - mean[j].mean)).collect();
            second.push(Moments2::from(&m));
        }
    }
    TerminalMoments { mean: mean.iter().map(Moments2::from).collect(), second }
}

/// Discretisation bias of a constant-field scheme, measured against the
/// exact OU recursion driven by the same normals.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WeakBiasReport {
    pub dt: f64,
    /// `E[X_i X_j]` (scheme minus exact), row-major.
    pub second_moment_bias: Vec<Moments2>,
    pub mean_bias: Vec<Moments2>,
    /// Frobenius norm of `second_moment_bias`.
    pub norm: f64,
    /// Standard error of `norm` from the entrywise standard errors.
    pub norm_se: f64,
}

pub fn weak_bias(field: &CoefficientField, s: &Spectrum, x0: &State, spec: &SchemeSpec) -> Result<WeakBiasReport> {
    if !field.is_constant() {
        return Err(invalid("field", "weak-bias measurement needs a constant field"));
    }
    let n = spec.n;
    let mut terminal_only = spec.clone();
    terminal_only.save_every = spec.steps().max(1);
    let g = FrozenGenerator::freeze(&field.with_dim(n), s, x0)?;
    let scheme = simulate(field, s, x0, &terminal_only)?;
    let exact = simulate_exact_ou(&g, x0, &terminal_only)?;
    let mut second = Vec::with_capacity(n * n);
    let mut norm2 = 0.0;
    let mut var = 0.0;
    for i in 0..n {
        for j in 0..n {
            let m: Moments = (0..spec.count)
                .map(|p| {
                    let (a, b) = (scheme.terminal(p), exact.terminal(p));
                    a[i] * a[j] - b[i] * b[j]
                })
                .collect();
            norm2 += m.mean * m.mean;
            var += (m.mean * m.std_error()).powi(2);
            second.push(Moments2::from(&m));
        }
    }
    let mean_bias = (0..n)
        .map(|k| Moments2::from(&(0..spec.count).map(|p| scheme.terminal(p)[k] - exact.terminal(p)[k]).collect::<Moments>()))
        .collect();
    let norm = norm2.sqrt();
    Ok(WeakBiasReport {
        dt: spec.dt,
        second_moment_bias: second,
        mean_bias,
        norm,
        norm_se: if norm > 0.0 { var.sqrt() / norm } else { 0.0 },
    })
}

/// `|X_t|_beta` for every path and recorded time, path-major.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BetaNormTrajectory {
    pub beta: f64,
    pub grid: Vec<f64>,
    pub count: usize,
    pub values: Vec<f64>,
}

impl BetaNormTrajectory {
    pub fn value(&self, path: usize, ti: usize) -> f64 {
        self.values[path * self.grid.len() + ti]
    }

    /// Per-path `sup_{t in [from, to]} |X_t|_beta` over recorded times.
    pub fn running_sup(&self, from: f64, to: f64) -> Vec<f64> {
        let eps = 1e-12;
        (0..self.count)
            .map(|p| {
                self.grid
                    .iter()
                    .enumerate()
                    .filter(|(_, &t)| t >= from - eps && t <= to + eps)
                    .map(|(ti, _)| self.value(p, ti))
                    .fold(0.0, f64::max)
            })
            .collect()
    }

    pub fn sup_quantile(&self, from: f64, to: f64, q: f64) -> f64 {
        quantile(&self.running_sup(from, to), q)
    }

    /// Quantiles of `|X_t|_beta` across paths at each recorded time.
    pub fn quantiles(&self, q: f64) -> Vec<f64> {
        (0..self.grid.len())
            .map(|ti| quantile(&(0..self.count).map(|p| self.value(p, ti)).collect::<Vec<_>>(), q))
            .collect()
    }
}

pub fn beta_norm_trajectory(e: &PathEnsemble, beta: f64, s: &Spectrum) -> Result<BetaNormTrajectory> {
    check_beta(beta)?;
    s.check_dim("ensemble", e.n)?;
    let lam = s.lambdas();
    let g = e.grid.len();
    let values = (0..e.count * g).map(|idx| weighted_norm_unchecked(e.state(idx / g, idx % g), beta, lam)).collect();
    Ok(BetaNormTrajectory { beta, grid: e.grid.clone(), count: e.count, values })
}

/// Configuration of the increment-moment scaling diagnostic.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IncrementMomentConfig {
    pub lambdas: Vec<f64>,
    /// `<M>_t - <M>_s = c_bound (t - s)`.
    pub c_bound: f64,
    pub q: u32,
    pub eps: f64,
    pub delta: f64,
    pub horizon: f64,
    pub dt: f64,
    pub count: usize,
    pub seed: u64,
}

impl Default for IncrementMomentConfig {
    fn default() -> Self {
        IncrementMomentConfig {
            lambdas: vec![1.0, 4.0, 16.0, 64.0],
            c_bound: 1.0,
            q: 2,
            eps: 0.5,
            delta: 1.0,
            horizon: 1.0,
            dt: 1e-3,
            count: 10_000,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IncrementMomentReport {
    pub lambdas: Vec<f64>,
    /// `E sup_{|t-s| <= delta} |Z_t - Z_s|^{2q}` per rate.
    pub moments: Vec<f64>,
    pub std_errors: Vec<f64>,
    /// Slope of `log moment` against `log lambda`.
    pub slope: f64,
    pub slope_se: f64,
    /// 95% interval for the slope.
    pub slope_ci: (f64, f64),
    /// `-(1 - eps) q`.
    pub bound_exponent: f64,
}

/// Largest `max - min` of `z` over windows of `w + 1` consecutive points.
fn max_window_range(z: &[f64], w: usize) -> f64 {
    let mut hi: VecDeque<usize> = VecDeque::new();
    let mut lo: VecDeque<usize> = VecDeque::new();
    let mut best: f64 = 0.0;
    for i in 0..z.len() {
        while hi.back().is_some_and(|&j| z[j] <= z[i]) {
            hi.pop_back();
        }
        hi.push_back(i);
        while lo.back().is_some_and(|&j| z[j] >= z[i]) {
            lo.pop_back();
        }
        lo.push_back(i);
        let start = i.saturating_sub(w);
        while hi.front().is_some_and(|&j| j < start) {
            hi.pop_front();
        }
        while lo.front().is_some_and(|&j| j < start) {
            lo.pop_front();
        }
        best = best.max(z[hi[0]] - z[lo[0]]);
    }
    best
}

/// Simulates `Z_t = int_0^t e^{-lambda (t - s)} dM_s` exactly on a grid for
/// each rate and regresses the sup-increment moment against `lambda`.
pub fn increment_moment_diagnostic(cfg: &IncrementMomentConfig) -> Result<IncrementMomentReport> {
    if cfg.lambdas.len() < 2 {
        return Err(invalid("lambdas", "need at least two rates for a slope"));
    }
    if !(cfg.eps > 0.0 && cfg.eps < 1.0) {
        return Err(invalid("eps", format!("must lie in (0, 1), got {}", cfg.eps)));
    }
    if !(cfg.delta > 0.0 && cfg.delta <= cfg.horizon) {
        return Err(invalid("delta", format!("must lie in (0, T], got {}", cfg.delta)));
    }
    if !(cfg.c_bound >= 0.0) || !(cfg.dt > 0.0) || cfg.q == 0 {
        return Err(invalid("c_bound", "need c_bound >= 0, dt > 0 and q >= 1"));
    }
    let steps = (cfg.horizon / cfg.dt).round() as usize;
    let window = ((cfg.delta / cfg.dt).round() as usize).max(1);
    let mut moments = Vec::new();
    let mut ses = Vec::new();
    for (li, &lam) in cfg.lambdas.iter().enumerate() {
        let decay = (-lam * cfg.dt).exp();
        let sd = (cfg.c_bound * -(-2.0 * lam * cfg.dt).exp_m1() / (2.0 * lam)).sqrt();
        let parts = par_chunks(cfg.count, 256, |c, range| {
            let mut rng = rng::substream(cfg.seed, domain::LEMMA41, ((li as u64) << 32) | c as u64);
            let mut z = vec![0.0; steps + 1];
            let mut m = Moments::default();
            for _ in range {
                for k in 0..steps {
                    let xi: f64 = StandardNormal.sample(&mut rng);
                    z[k + 1] = decay * z[k] + sd * xi;
                }
                m.push(max_window_range(&z, window).powi(2 * cfg.q as i32));
            }
            m
        });
        let m = Moments::from_chunks(&parts);
        moments.push(m.mean);
        ses.push(m.std_error());
    }
    let (slope, slope_se) = if moments.iter().all(|m| *m > 0.0) {
        let x: Vec<f64> = cfg.lambdas.iter().map(|l| l.ln()).collect();
        let y: Vec<f64> = moments.iter().map(|m| m.ln()).collect();
        let yse: Vec<f64> = moments.iter().zip(&ses).map(|(m, s)| s / m).collect();
        regression_slope(&x, &y, &yse)
    } else {
        (f64::NAN, f64::NAN)
    };
    Ok(IncrementMomentReport {
        lambdas: cfg.lambdas.clone(),
        moments,
        std_errors: ses,
        slope,
        slope_se,
        slope_ci: (slope - 1.96 * slope_se, slope + 1.96 * slope_se),
        bound_exponent: -(1.0 - cfg.eps) * cfg.q as f64,
    })
}

/// Analytic transition law at the horizon for constant fields, for oracle
/// comparisons.
pub fn analytic_terminal(field: &CoefficientField, s: &Spectrum, x0: &State, horizon: f64) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let g = FrozenGenerator::freeze(field, s, x0)?;
    let tr = transition(&g, x0, horizon)?;
    Ok((tr.mean.into_vec(), tr.cov))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{banded_field, constant_field, BlockKind, StandardBlock};
    use crate::spectrum::{make_spectrum, EigenRule};
    use std::sync::Arc;

    fn unit_field(n: usize) -> CoefficientField {
        constant_field(DMatrix::identity(n, n), vec![1.0; n], 1.0).unwrap()
    }

    #[test]
    fn one_step_euler_mean() {
        let s = Spectrum::finite(vec![1.0]).unwrap();
        let x0 = State::new(vec![0.7]).unwrap();
        let dt = 0.01;
        let spec = SchemeSpec::new(Stepper::EulerMaruyama, dt, dt, 1, 100_000, 3);
        let e = simulate(&unit_field(1), &s, &x0, &spec).unwrap();
        let m: Moments = (0..e.count).map(|p| e.terminal(p)[0]).collect();
        assert!((m.mean - 0.7 * (1.0 - dt)).abs() < 3.0 * m.std_error());
    }

    #[test]
    fn symmetric_field_keeps_zero_mean() {
        let s = make_spectrum(2.0, 1.0, 3, &EigenRule::Power).unwrap();
        let f = banded_field(1, 1, Arc::new(StandardBlock::new(BlockKind::Constant, 0.0)), 1.0, 0.5, &s).unwrap();
        let spec = SchemeSpec::new(Stepper::ExponentialEuler, 0.01, 0.5, 3, 20_000, 5);
        let e = simulate(&f, &s, &State::zeros(3), &spec).unwrap();
        for k in 0..3 {
            let m: Moments = (0..e.count).map(|p| e.terminal(p)[k]).collect();
            assert!(m.mean.abs() < 3.0 * m.std_error());
        }
    }

    #[test]
    fn euler_stability_rejected() {
        let s = make_spectrum(2.0, 1.0, 4, &EigenRule::Power).unwrap();
        let spec = SchemeSpec::new(Stepper::EulerMaruyama, 0.05, 1.0, 4, 10, 1);
        assert!(matches!(simulate(&unit_field(4), &s, &State::zeros(4), &spec), Err(Error::UnstableStep { .. })));
        let ee = SchemeSpec { stepper: Stepper::ExponentialEuler, ..spec };
        assert!(simulate(&unit_field(4), &s, &State::zeros(4), &ee).is_ok());
    }

    #[test]
    fn deterministic_and_thread_independent() {
        let s = make_spectrum(2.0, 1.0, 4, &EigenRule::Power).unwrap();
        let f = banded_field(1, 1, Arc::new(StandardBlock::new(BlockKind::SinSum, 0.2)), 0.5, 0.5, &s).unwrap();
        let x0 = State::new(vec![0.5, -0.2, 0.1, 0.0]).unwrap();
        let spec = SchemeSpec::new(Stepper::ExponentialEuler, 0.01, 0.2, 4, 64, 9);
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let many = rayon::ThreadPoolBuilder::new().num_threads(8).build().unwrap();
        let a = one.install(|| simulate(&f, &s, &x0, &spec).unwrap());
        let b = many.install(|| simulate(&f, &s, &x0, &spec).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn coupling_across_truncations() {
        // For a diagonal constant field, coordinate k's path does not depend
        // on the truncation level at all.
        let s = make_spectrum(2.0, 1.0, 6, &EigenRule::Power).unwrap();
        let x0 = State::new(vec![1.0; 6]).unwrap();
        let a = simulate(&unit_field(6), &s, &x0, &SchemeSpec::new(Stepper::ExponentialEuler, 0.01, 0.1, 4, 8, 2)).unwrap();
        let b = simulate(&unit_field(6), &s, &x0, &SchemeSpec::new(Stepper::ExponentialEuler, 0.01, 0.1, 6, 8, 2)).unwrap();
        for p in 0..8 {
            assert_eq!(a.terminal(p)[..4], b.terminal(p)[..4]);
        }
    }

    #[test]
    fn galerkin_consistency_for_banded_fields() {
        let s = make_spectrum(2.0, 1.0, 16, &EigenRule::Power).unwrap();
        let f = banded_field(1, 1, Arc::new(StandardBlock::new(BlockKind::SinSum, 0.2)), 0.5, 0.5, &s).unwrap();
        let m = 2;
        let n = m + 2 * (f.band_m().unwrap() + 1);
        let x0 = State::from_fn(16, |k| 0.5 / (k + 1) as f64);
        let obs = |e: &PathEnsemble| -> Moments { (0..e.count).map(|p| (e.terminal(p)[0] + e.terminal(p)[1]).cos()).collect() };
        let a = simulate(&f, &s, &x0, &SchemeSpec::new(Stepper::ExponentialEuler, 0.005, 0.5, n, 4000, 4)).unwrap();
        let b = simulate(&f, &s, &x0, &SchemeSpec::new(Stepper::ExponentialEuler, 0.005, 0.5, n + 2 * (f.band_m().unwrap() + 1), 4000, 4)).unwrap();
        let (ma, mb) = (obs(&a), obs(&b));
        // Coupled runs: the paired difference is what carries the error.
        let d: Moments = (0..a.count)
            .map(|p| (a.terminal(p)[0] + a.terminal(p)[1]).cos() - (b.terminal(p)[0] + b.terminal(p)[1]).cos())
            .collect();
        assert!(d.mean.abs() <= 3.0 * d.std_error().max(1e-15), "{} vs {}", ma.mean, mb.mean);
    }

    #[test]
    fn exact_ou_matches_transition() {
        let s = make_spectrum(2.0, 1.0, 2, &EigenRule::Power).unwrap();
        let a0 = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.8]);
        let f = constant_field(a0, vec![1.0, 1.0], 0.5).unwrap();
        let x0 = State::new(vec![1.0, -0.5]).unwrap();
        let g = FrozenGenerator::freeze(&f, &s, &x0).unwrap();
        let spec = SchemeSpec::new(Stepper::ExponentialEuler, 0.05, 1.0, 2, 50_000, 7);
        let e = simulate_exact_ou(&g, &x0, &spec).unwrap();
        let tm = terminal_moments(&e);
        let (mean, cov) = analytic_terminal(&f, &s, &x0, 1.0).unwrap();
        for k in 0..2 {
            assert!((tm.mean[k].value - mean[k]).abs() < 3.5 * tm.mean[k].std_error);
        }
        for i in 0..2 {
            for j in 0..2 {
                let c = tm.second[i * 2 + j];
                assert!((c.value - cov[(i, j)]).abs() < 3.5 * c.std_error, "{i}{j}");
            }
        }
    }

    #[test]
    fn weak_bias_halves() {
        let s = make_spectrum(2.0, 1.0, 2, &EigenRule::Power).unwrap();
        let f = unit_field(2);
        let x0 = State::new(vec![1.0, 1.0]).unwrap();
        let b1 = weak_bias(&f, &s, &x0, &SchemeSpec::new(Stepper::ExponentialEuler, 0.02, 1.0, 2, 4000, 1)).unwrap();
        let b2 = weak_bias(&f, &s, &x0, &SchemeSpec::new(Stepper::ExponentialEuler, 0.01, 1.0, 2, 4000, 1)).unwrap();
        let r = b2.norm / b1.norm;
        assert!((0.4..0.6).contains(&r), "ratio {r}");
    }

    #[test]
    fn beta_norms() {
        let s = make_spectrum(2.0, 1.0, 3, &EigenRule::Power).unwrap();
        let spec = SchemeSpec::new(Stepper::ExponentialEuler, 0.01, 0.0, 3, 4, 1);
        let e = simulate(&unit_field(3), &s, &State::zeros(3), &spec).unwrap();
        let b = beta_norm_trajectory(&e, 0.5, &s).unwrap();
        assert!(b.values.iter().all(|v| *v == 0.0));
        assert!(beta_norm_trajectory(&e, 1.5, &s).is_err());
    }

    #[test]
    fn window_range() {
        let z = [0.0, 1.0, -1.0, 3.0, 2.0, 2.5];
        assert_eq!(max_window_range(&z, 1), 4.0);
        assert_eq!(max_window_range(&z, 5), 4.0);
        assert_eq!(max_window_range(&[0.0, 1.0, 0.5, 0.7], 1), 1.0);
        // Brute force on a longer sequence.
        let z: Vec<f64> = (0..200).map(|i| ((i * 7919) % 113) as f64 - 56.0).collect();
        for w in [1, 3, 17] {
            let mut best: f64 = 0.0;
            for i in 0..z.len() {
                for j in i..(i + w + 1).min(z.len()) {
                    best = best.max((z[i] - z[j]).abs());
                }
            }
            assert_eq!(max_window_range(&z, w), best);
        }
    }

    #[test]
    fn increment_moments() {
        let zero = IncrementMomentConfig { c_bound: 0.0, count: 100, ..Default::default() };
        let r = increment_moment_diagnostic(&zero).unwrap();
        assert!(r.moments.iter().all(|m| *m == 0.0));
        let cfg = IncrementMomentConfig { count: 2000, seed: 3, ..Default::default() };
        let r = increment_moment_diagnostic(&cfg).unwrap();
        assert!(r.slope <= r.bound_exponent + 0.3, "{r:?}");
        let short = IncrementMomentConfig { delta: 0.1, count: 2000, seed: 3, ..Default::default() };
        assert!(increment_moment_diagnostic(&short).unwrap().slope > r.slope);
        // Full window, fast rates: stationary O(lambda^{-q}) scaling.
        let full = IncrementMomentConfig { lambdas: vec![100.0, 400.0], delta: 1.0, count: 2000, seed: 4, ..Default::default() };
        let r = increment_moment_diagnostic(&full).unwrap();
        assert!((r.slope + 2.0).abs() < 0.3, "{r:?}");
    }

    #[test]
    fn csv_export() {
        let s = Spectrum::finite(vec![1.0, 2.0]).unwrap();
        let spec = SchemeSpec::new(Stepper::ExponentialEuler, 0.5, 1.0, 2, 2, 1);
        let e = simulate(&unit_field(2), &s, &State::zeros(2), &spec).unwrap();
        let mut buf = Vec::new();
        e.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("path,t,k,value\n"));
        assert_eq!(text.lines().count(), 1 + 2 * 3 * 2);
    }
}
