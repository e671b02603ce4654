//! Named verification scenarios. Each scenario carries its embedded default
//! configuration, validates feasibility before computing, and returns a
//! [`ScenarioReport`] whose criteria gate the exit status.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::coefficients::{
    banded_field, banded_field_unchecked, check_hypotheses, continuity_modulus, eta, BlockKind, BoxPairSampler,
    BoxSampler, CoefficientField, HypothesisBudget, QBallSampler, StandardBlock, Verdict,
};
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::functions::TestFunction;
use crate::galerkin::{
    analytic_terminal, beta_norm_trajectory, increment_moment_diagnostic, simulate, terminal_moments, weak_bias,
    IncrementMomentConfig, SchemeSpec,
};
use crate::localization::{agreement_gap, delta1_from_delta, holder_domination, localized_field, measure_c2, LocalizationBox};
use crate::martingale::{neumann_series, resolvent_identity_residual, McBudget, NeumannBudget};
use crate::ou_kernel::{directional_derivative, sample_transition, FrozenGenerator, Order};
use crate::report::{Criterion, Row, ScenarioReport, Table};
use crate::spectrum::{time_norm_rates, weighted_norm, Spectrum, State};
use crate::stats::{quantile, regression_slope, Moments};

/// Largest path ensemble a scenario may allocate, in stored values.
const MAX_STORED_VALUES: usize = 1 << 28;

#[derive(Clone, Copy, Serialize)]
pub struct ScenarioInfo {
    pub name: &'static str,
    pub description: &'static str,
    /// The identity or bound the scenario exercises.
    pub anchor: &'static str,
    #[serde(skip)]
    pub defaults: &'static str,
    #[serde(skip)]
    check: fn(&ExperimentConfig) -> Result<()>,
    #[serde(skip)]
    run: fn(&ExperimentConfig) -> Result<ScenarioReport>,
}

impl std::fmt::Debug for ScenarioInfo {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ScenarioInfo").field("name", &self.name).finish()
    }
}

static REGISTRY: [ScenarioInfo; 8] = [
    ScenarioInfo {
        name: "transition-moments",
        description: "exact OU transition moments and exponential-Euler weak bias for a constant field",
        anchor: "E X_t = e^{-lambda t} x, C_ij(t) = a_ij (1 - e^{-(lambda_i + lambda_j) t}) / (lambda_i + lambda_j)",
        defaults: TRANSITION_DEFAULTS,
        check: check_transition,
        run: run_transition,
    },
    ScenarioInfo {
        name: "derivative-bounds",
        description: "likelihood-ratio derivatives of P_t f against the gradient bound and Hölder time scaling",
        anchor: "|D_w P_t f| <= |w|_t (gamma t)^{-1/2} ||f||",
        defaults: DERIVATIVE_DEFAULTS,
        check: check_derivative,
        run: run_derivative,
    },
    ScenarioInfo {
        name: "resolvent-identity",
        description: "residual of the resolvent perturbation identity along simulated banded-field paths",
        anchor: "S_lambda f = R_lambda f(y0) + S_lambda B R_lambda f",
        defaults: RESOLVENT_DEFAULTS,
        check: check_resolvent,
        run: run_resolvent,
    },
    ScenarioInfo {
        name: "neumann-contraction",
        description: "per-level decay of (B R_lambda)^k f over a lambda ladder and Cauchy partial sums",
        anchor: "S_lambda f = sum_k R_lambda (B R_lambda)^k f (y0)",
        defaults: NEUMANN_DEFAULTS,
        check: check_neumann,
        run: run_neumann,
    },
    ScenarioInfo {
        name: "lemma41-scaling",
        description: "scaling of sup-increment moments of fast OU coordinates with lambda",
        anchor: "E sup_{|t-s|<=delta} |Z_t - Z_s|^q <= C lambda^{-(1-eps) q}",
        defaults: LEMMA41_DEFAULTS,
        check: check_lemma41,
        run: run_lemma41,
    },
    ScenarioInfo {
        name: "beta-regularization",
        description: "uniform-in-truncation bounds on sup_t |X_t|_beta for rough initial data",
        anchor: "sup_{t in [t0, T]} |X_t|_beta < infinity for t0 > 0",
        defaults: BETA_DEFAULTS,
        check: check_beta,
        run: run_beta,
    },
    ScenarioInfo {
        name: "hypothesis-check",
        description: "structural hypotheses (a)-(e) and ellipticity on a positive and two negative field families",
        anchor: "gamma |v|^2 <= <a v, v> <= |v|^2 / gamma, gamma <= b_i <= 1/gamma, conditions (a)-(e)",
        defaults: HYPOTHESIS_DEFAULTS,
        check: check_hypothesis,
        run: run_hypothesis,
    },
    ScenarioInfo {
        name: "localization-roundtrip",
        description: "clipped and tapered coefficients: agreement, Hölder domination and the eta bound",
        anchor: "a~ = a o psi, b~(x) = b(x0 + rho(x - x0))",
        defaults: LOCALIZATION_DEFAULTS,
        check: check_localization,
        run: run_localization,
    },
];

pub fn registry() -> &'static [ScenarioInfo] {
    &REGISTRY
}

pub fn lookup(name: &str) -> Result<&'static ScenarioInfo> {
    REGISTRY.iter().find(|s| s.name == name).ok_or_else(|| {
        let names: Vec<&str> = REGISTRY.iter().map(|s| s.name).collect();
        Error::Config(format!("unknown scenario `{name}`; available: {}", names.join(", ")))
    })
}

/// The registry as pretty-printed JSON: name, description, anchor.
pub fn registry_json() -> String {
    serde_json::to_string_pretty(&REGISTRY[..]).expect("registry serialises")
}

/// Feasibility checks only: no simulation or sampling.
pub fn validate(cfg: &ExperimentConfig) -> Result<()> {
    (lookup(&cfg.scenario)?.check)(cfg)
}

/// Validates, then runs the configured scenario.
pub fn run(cfg: &ExperimentConfig) -> Result<ScenarioReport> {
    let info = lookup(&cfg.scenario)?;
    (info.check)(cfg)?;
    (info.run)(cfg)
}

struct Setup {
    s: Spectrum,
    field: CoefficientField,
    x0: State,
    probes: Vec<TestFunction>,
}

fn setup(cfg: &ExperimentConfig) -> Result<Setup> {
    let s = cfg.spectrum.build()?;
    let field = cfg.field.build(&s)?;
    let x0 = cfg.x0.build(s.len())?;
    let probes = cfg.probes.iter().map(TestFunction::from_spec).collect::<Result<Vec<_>>>()?;
    for (i, f) in probes.iter().enumerate() {
        if f.depends_on() > s.len() {
            return Err(Error::Config(format!("probes[{i}] depends on {} coordinates, spectrum has {}", f.depends_on(), s.len())));
        }
    }
    Ok(Setup { s, field, x0, probes })
}

fn positive(name: &str, v: usize) -> Result<()> {
    if v == 0 {
        return Err(Error::Config(format!("{name} must be positive")));
    }
    Ok(())
}

fn scheme(cfg: &ExperimentConfig, st: &Setup) -> Result<SchemeSpec> {
    let spec = cfg.scheme.spec(st.s.len(), cfg.seed);
    positive("scheme.paths", spec.count)?;
    if spec.n > st.s.len() {
        return Err(Error::Config(format!("scheme.n = {} exceeds the spectrum length {}", spec.n, st.s.len())));
    }
    spec.validate(st.s.lambdas()[spec.n - 1], st.field.gamma())?;
    let stored = spec.count.saturating_mul(spec.record_steps().len()).saturating_mul(spec.n);
    if stored > MAX_STORED_VALUES {
        return Err(Error::Config(format!(
            "budget infeasible: ensemble would store {stored} values (limit {MAX_STORED_VALUES}); raise scheme.save_every or lower scheme.paths"
        )));
    }
    Ok(spec)
}

fn terminal_only(mut spec: SchemeSpec) -> SchemeSpec {
    spec.save_every = spec.steps().max(1);
    spec
}

fn seed_for(seed: u64, k: u64) -> u64 {
    seed.wrapping_add(k.wrapping_mul(0x9e37_79b9))
}

// ---------------------------------------------------------------- transition

const TRANSITION_DEFAULTS: &str = r#"
seed = 1
lambdas = []

[spectrum]
rule = "explicit"
p = 2.0
c1 = 1.0
lambdas = [1.0, 4.0, 9.0, 16.0]

[field]
kind = "constant"
gamma = 0.5
a0 = [[1.0, 0.3, 0.0, 0.0], [0.3, 1.0, 0.15, 0.0], [0.0, 0.15, 1.2, 0.1], [0.0, 0.0, 0.1, 0.8]]
b = [1.0, 1.5, 0.8, 1.2]

[x0]
kind = "values"
values = [0.5, -0.3, 0.2, 0.1]

[scheme]
stepper = "exponential-euler"
dt = 1e-3
horizon = 1.0
paths = 10000

[budget]
samples = 100000

[params]
t = 0.5
dt_ratio_band = [0.35, 0.65]
"#;

fn check_transition(cfg: &ExperimentConfig) -> Result<()> {
    let st = setup(cfg)?;
    if !st.field.is_constant() {
        return Err(Error::Config("transition-moments needs field.kind = \"constant\"".into()));
    }
    positive("budget.samples", cfg.budget.samples)?;
    if !(cfg.param_f64("t")? > 0.0) {
        return Err(Error::Config("params.t must be positive".into()));
    }
    band(cfg, "dt_ratio_band")?;
    let spec = scheme(cfg, &st)?;
    let mut half = spec.clone();
    half.dt /= 2.0;
    half.validate(st.s.lambdas()[spec.n - 1], st.field.gamma())
}

fn band(cfg: &ExperimentConfig, key: &str) -> Result<(f64, f64)> {
    match cfg.param_vec(key)?.as_slice() {
        [lo, hi] if lo <= hi => Ok((*lo, *hi)),
        _ => Err(Error::Config(format!("params.{key} must be [low, high]"))),
    }
}

fn run_transition(cfg: &ExperimentConfig) -> Result<ScenarioReport> {
    let st = setup(cfg)?;
    let info = lookup(&cfg.scenario)?;
    let mut rep = ScenarioReport::new(info.name, info.anchor, cfg.seed);
    let n = st.s.len();
    let t = cfg.param_f64("t")?;
    let g = FrozenGenerator::freeze(&st.field, &st.s, &st.x0)?;
    let tr = crate::ou_kernel::transition(&g, &st.x0, t)?;
    let samples = sample_transition(&g, &st.x0, t, cfg.budget.samples, cfg.seed)?;

    let mut table = Table::new("transition", &["i", "j", "exact", "empirical", "std_error"]);
    let mut rows = Vec::new();
    let mean: Vec<Moments> = (0..n).map(|i| samples.iter().map(|y| y.get(i)).collect()).collect();
    for i in 0..n {
        let exact = tr.mean.get(i);
        let (v, se) = (mean[i].mean, mean[i].std_error());
        table.push(vec![i as f64, -1.0, exact, v, se]);
        rows.push(Row::gate(format!("mean[{i}]"), v - exact, se, "|deviation| <= 3 se", (v - exact).abs() <= 3.0 * se));
    }
    for i in 0..n {
        for j in i..n {
            let (mi, mj) = (mean[i].mean, mean[j].mean);
            let m: Moments = samples.iter().map(|y| (y.get(i) - mi) * (y.get(j) - mj)).collect();
            let exact = tr.cov[(i, j)];
            let (v, se) = (m.mean, m.std_error());
            table.push(vec![i as f64, j as f64, exact, v, se]);
            rows.push(Row::gate(format!("cov[{i},{j}]"), v - exact, se, "|deviation| <= 3 se", (v - exact).abs() <= 3.0 * se));
        }
    }
    rep.push(Criterion::new("transition-law", format!("{} exact transition samples at t = {t}", cfg.budget.samples), rows));
    rep.tables.push(table);

    // Galerkin scheme against the analytic transition, with its coupled bias.
    let spec = terminal_only(scheme(cfg, &st)?);
    let mut half = spec.clone();
    half.dt /= 2.0;
    half.save_every = half.steps().max(1);
    let wb = weak_bias(&st.field, &st.s, &st.x0, &spec)?;
    let wb_half = weak_bias(&st.field, &st.s, &st.x0, &half)?;
    let e = simulate(&st.field, &st.s, &st.x0, &spec)?;
    let tm = terminal_moments(&e);
    let (am, ac) = analytic_terminal(&st.field, &st.s, &st.x0, spec.horizon)?;
    let mut rows = Vec::new();
    let mut btable = Table::new("weak-bias", &["dt", "i", "j", "second_moment_bias", "std_error"]);
    for w in [&wb, &wb_half] {
        for i in 0..n {
            for j in 0..n {
                let b = &w.second_moment_bias[i * n + j];
                btable.push(vec![w.dt, i as f64, j as f64, b.value, b.std_error]);
            }
        }
    }
    for i in 0..n {
        let allowance = wb.mean_bias[i].value.abs();
        let d = tm.mean[i].value - am[i];
        let se = tm.mean[i].std_error;
        rows.push(Row::gate(
            format!("terminal-mean[{i}]"),
            d,
            se,
            format!("|deviation| <= 3 se + {allowance:.3e}"),
            d.abs() <= 3.0 * se + allowance,
        ));
    }
    for i in 0..n {
        for j in i..n {
            let allowance = wb.second_moment_bias[i * n + j].value.abs()
                + (wb.mean_bias[i].value * am[j]).abs()
                + (am[i] * wb.mean_bias[j].value).abs();
            let c = &tm.second[i * n + j];
            let d = c.value - ac[(i, j)];
            rows.push(Row::gate(
                format!("terminal-cov[{i},{j}]"),
                d,
                c.std_error,
                format!("|deviation| <= 3 se + {allowance:.3e}"),
                d.abs() <= 3.0 * c.std_error + allowance,
            ));
        }
    }
    let (lo, hi) = band(cfg, "dt_ratio_band")?;
    let ratio = wb_half.norm / wb.norm;
    let ratio_se = ratio * ((wb.norm_se / wb.norm).powi(2) + (wb_half.norm_se / wb_half.norm).powi(2)).sqrt();
    rows.push(Row::info(format!("bias-norm(dt={})", wb.dt), wb.norm, wb.norm_se, ""));
    rows.push(Row::info(format!("bias-norm(dt={})", wb_half.dt), wb_half.norm, wb_half.norm_se, ""));
    rows.push(Row::gate("bias-ratio", ratio, ratio_se, format!("[{lo}, {hi}]"), (lo..=hi).contains(&ratio)));
    rep.push(Criterion::new(
        "scheme-oracle",
        format!("{:?} with dt = {}, T = {}, {} paths", spec.stepper, spec.dt, spec.horizon, spec.count),
        rows,
    ));
    rep.tables.push(btable);
    Ok(rep)
}

// ---------------------------------------------------------------- derivatives

const DERIVATIVE_DEFAULTS: &str = r#"
seed = 1
lambdas = []

[spectrum]
rule = "explicit"
p = 2.0
c1 = 1.0
lambdas = [1.0, 4.0, 9.0, 16.0]

[field]
kind = "constant"
gamma = 0.5
a0 = [[1.0, 0.2, 0.0, 0.0], [0.2, 1.0, 0.15, 0.0], [0.0, 0.15, 1.2, 0.1], [0.0, 0.0, 0.1, 0.8]]
b = [1.0, 1.0, 1.0, 1.0]

[x0]
kind = "values"
values = [0.2, -0.1, 0.0, 0.0]

[scheme]
dt = 1e-3
horizon = 1.0
paths = 1

[[probes]]
kind = "sine"
n = 2
params = [1.0, 2.0, 0.3]

[[probes]]
kind = "product-sine"
n = 2
params = [1.0, 1.0, 1.5707963267948966, 0.5]

[[probes]]
kind = "gaussian-bump"
n = 2
params = [0.1, 0.0, 2.0]

[[probes]]
kind = "compact-bump"
n = 2
params = [0.0, 0.0, 1.0]

[[probes]]
kind = "sine"
n = 1
params = [3.0]

[budget]
samples = 200000

[params]
times = [0.01, 0.05, 0.25, 1.0]
w = [1.0, 0.5]
holder_alpha = 0.5
slope_tolerance = 0.3
"#;

fn check_derivative(cfg: &ExperimentConfig) -> Result<()> {
    let st = setup(cfg)?;
    if !st.field.is_constant() {
        return Err(Error::Config("derivative-bounds needs field.kind = \"constant\"".into()));
    }
    if st.probes.is_empty() {
        return Err(Error::Config("derivative-bounds needs at least one probe".into()));
    }
    positive("budget.samples", cfg.budget.samples)?;
    let times = cfg.param_vec("times")?;
    if times.len() < 2 || times.iter().any(|t| !(*t > 0.0)) {
        return Err(Error::Config("params.times needs at least two positive times".into()));
    }
    let w = cfg.param_vec("w")?;
    if w.len() > st.s.len() {
        return Err(Error::Config("params.w is longer than the spectrum".into()));
    }
    let a = cfg.param_f64("holder_alpha")?;
    if !(a > 0.0 && a < 1.0) {
        return Err(Error::Config("params.holder_alpha must lie in (0, 1)".into()));
    }
    cfg.param_f64("slope_tolerance").map(|_| ())
}

fn run_derivative(cfg: &ExperimentConfig) -> Result<ScenarioReport> {
    let st = setup(cfg)?;
    let info = lookup(&cfg.scenario)?;
    let mut rep = ScenarioReport::new(info.name, info.anchor, cfg.seed);
    let times = cfg.param_vec("times")?;
    let g = FrozenGenerator::freeze(&st.field, &st.s, &st.x0)?;
    let gamma = st.field.gamma();
    let w = State::new(cfg.param_vec("w")?)?.resized(g.dim());
    let count = cfg.budget.samples;

    let mut rows = Vec::new();
    let mut table = Table::new("gradient", &["probe", "t", "estimate", "std_error", "bound"]);
    for (fi, f) in st.probes.iter().enumerate() {
        for (ti, &t) in times.iter().enumerate() {
            let est = directional_derivative(&g, f, &st.x0, t, &w, Order::First, None, count, seed_for(cfg.seed, (fi * times.len() + ti) as u64))?;
            let bound = g.first_derivative_bound(w.coords(), t, gamma)? * f.sup_norm();
            table.push(vec![fi as f64, t, est.value, est.std_error, bound]);
            rows.push(Row::gate(
                format!("probe{fi}/t={t}"),
                est.value.abs(),
                est.std_error,
                format!("<= {bound:.6e} + 3 se"),
                est.value.abs() <= bound + 3.0 * est.std_error,
            ));
        }
    }
    rep.push(Criterion::new("gradient-bound", format!("{} probes, {count} samples per point", st.probes.len()), rows));
    rep.tables.push(table);

    // Hölder probes in the first coordinate: the derivative only sees its
    // one-dimensional marginal.
    let alpha = cfg.param_f64("holder_alpha")?;
    let tol = cfg.param_f64("slope_tolerance")?;
    let lh = g.lam_hat()[0];
    let g1 = FrozenGenerator::new(DMatrix::from_element(1, 1, g.a0()[(0, 0)]), vec![lh], State::zeros(1))?;
    let odd = move |y: &[f64]| y[0].signum() * y[0].abs().powf(alpha).min(1.0);
    let even = move |y: &[f64]| y[0].abs().powf(alpha).min(1.0);
    let (x, e1) = (State::zeros(1), State::basis(1, 0));
    let base = st.probes.len() * times.len();
    let mut logt = Vec::new();
    let (mut raw1, mut raw2, mut norm1, mut norm2) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut htable = Table::new("holder", &["t", "first", "first_se", "first_normalized", "second", "second_se", "second_normalized"]);
    for (ti, &t) in times.iter().enumerate() {
        let d1 = directional_derivative(&g1, &odd, &x, t, &e1, Order::First, None, count, seed_for(cfg.seed, (base + 2 * ti) as u64))?;
        let d2 = directional_derivative(&g1, &even, &x, t, &e1, Order::Second, Some(&e1), count, seed_for(cfg.seed, (base + 2 * ti + 1) as u64))?;
        let n1 = time_norm_rates(&[1.0], t, &[lh])?;
        let n2 = time_norm_rates(&[(-lh * t / 2.0).exp()], t / 2.0, &[lh])? * time_norm_rates(&[1.0], t / 2.0, &[lh])?;
        logt.push(t.ln());
        raw1.push((d1.value.abs(), d1.std_error));
        raw2.push((d2.value.abs(), d2.std_error));
        norm1.push((d1.value.abs() / n1, d1.std_error / n1));
        norm2.push((d2.value.abs() / n2, d2.std_error / n2));
        htable.push(vec![t, d1.value, d1.std_error, d1.value / n1, d2.value, d2.std_error, d2.value / n2]);
    }
    let slope = |v: &[(f64, f64)]| {
        let y: Vec<f64> = v.iter().map(|(m, _)| m.ln()).collect();
        let se: Vec<f64> = v.iter().map(|(m, s)| s / m).collect();
        regression_slope(&logt, &y, &se)
    };
    let (t1, t2) = ((alpha - 1.0) / 2.0, alpha / 2.0 - 1.0);
    let (r1, r1se) = slope(&raw1);
    let (r2, r2se) = slope(&raw2);
    let (s1, s1se) = slope(&norm1);
    let (s2, s2se) = slope(&norm2);
    let rows = vec![
        Row::gate("first-order-slope", s1, s1se, format!("{t1} +/- {tol}"), (s1 - t1).abs() <= tol),
        Row::gate("second-order-slope", s2, s2se, format!("{t2} +/- {tol}"), (s2 - t2).abs() <= tol),
        Row::info("first-order-slope-raw", r1, r1se, format!("{t1} +/- {tol}")),
        Row::info("second-order-slope-raw", r2, r2se, format!("{t2} +/- {tol}")),
    ];
    rep.push(Criterion::new(
        "holder-scaling",
        format!("alpha = {alpha} probes; slopes of log|D P_t f| / |w|_t-type norms against log t"),
        rows,
    ));
    rep.tables.push(htable);
    Ok(rep)
}

// ---------------------------------------------------------------- resolvent

macro_rules! banded_field_toml {
    () => {
        r#"
[spectrum]
rule = "power"
p = 2.0
c1 = 1.0
n = 4

[field]
kind = "banded"
block = "sin-sum"
amplitude = 0.1
block_n = 1
overlap = 1
gamma = 0.5
alpha = 0.5

[x0]
kind = "values"
values = [0.5, -0.3, 0.2, -0.1]
"#
    };
}

const RESOLVENT_DEFAULTS: &str = concat!(
    r#"
seed = 1
lambdas = [10.0, 20.0]

[scheme]
stepper = "exponential-euler"
dt = 1e-3
horizon = 1.0
paths = 20000

[budget]
samples = 100000
inner = 4

[[probes]]
kind = "sine"
n = 2
params = [1.0, 1.0, 0.4]

[[probes]]
kind = "product-sine"
n = 2
params = [1.0, 2.0, 0.3, 0.2]

[[probes]]
kind = "gaussian-bump"
n = 2
params = [0.5, -0.3, 1.0]

[[probes]]
kind = "compact-bump"
n = 2
params = [0.5, -0.3, 1.5]

[[probes]]
kind = "sine"
n = 1
params = [2.0, 0.1]

[params]
max_normalized = 3.0
"#,
    banded_field_toml!()
);

fn check_lambdas(cfg: &ExperimentConfig, horizon: Option<f64>) -> Result<()> {
    if cfg.lambdas.is_empty() || cfg.lambdas.iter().any(|l| !(*l > 0.0)) {
        return Err(Error::Config("lambdas must be a nonempty list of positive rates".into()));
    }
    if let Some(t) = horizon {
        for &l in &cfg.lambdas {
            if l * t < 10.0 {
                return Err(Error::HorizonTooShort { lambda: l, actual: t, required: 10.0 / l });
            }
        }
    }
    Ok(())
}

fn check_resolvent(cfg: &ExperimentConfig) -> Result<()> {
    let st = setup(cfg)?;
    if st.probes.is_empty() {
        return Err(Error::Config("resolvent-identity needs at least one probe".into()));
    }
    positive("budget.samples", cfg.budget.samples)?;
    positive("budget.inner", cfg.budget.inner)?;
    let spec = scheme(cfg, &st)?;
    for (i, f) in st.probes.iter().enumerate() {
        if f.depends_on() > spec.n {
            return Err(Error::Config(format!("probes[{i}] depends on more coordinates than scheme.n")));
        }
    }
    check_lambdas(cfg, Some(spec.horizon))?;
    cfg.param_f64("max_normalized").map(|_| ())
}

fn run_resolvent(cfg: &ExperimentConfig) -> Result<ScenarioReport> {
    let st = setup(cfg)?;
    let info = lookup(&cfg.scenario)?;
    let mut rep = ScenarioReport::new(info.name, info.anchor, cfg.seed);
    let spec = scheme(cfg, &st)?;
    let limit = cfg.param_f64("max_normalized")?;
    let e = simulate(&st.field, &st.s, &st.x0, &spec)?;
    let mut rows = Vec::new();
    let mut table = Table::new(
        "residuals",
        &["lambda", "probe", "s_lambda_f", "r_lambda_f", "r_lambda_f_se", "s_lambda_brf", "residual", "std_error", "normalized"],
    );
    for (li, &lambda) in cfg.lambdas.iter().enumerate() {
        for (fi, f) in st.probes.iter().enumerate() {
            let budget = McBudget { count: cfg.budget.samples, seed: seed_for(cfg.seed, (li * st.probes.len() + fi) as u64) };
            let r = resolvent_identity_residual(&e, &st.field, &st.s, &st.x0, f, lambda, cfg.budget.inner, budget)?;
            table.push(vec![
                lambda,
                fi as f64,
                r.s_lambda_f,
                r.r_lambda_f.value,
                r.r_lambda_f.std_error,
                r.s_lambda_brf,
                r.residual.value,
                r.residual.std_error,
                r.normalized,
            ]);
            rows.push(Row::gate(
                format!("lambda={lambda}/probe{fi}"),
                r.residual.value,
                r.residual.std_error,
                format!("|residual| / se <= {limit}"),
                r.normalized <= limit,
            ));
        }
    }
    rep.push(Criterion::new(
        "resolvent-residual",
        format!("{} paths, dt = {}, {} B R f draws per path", spec.count, spec.dt, cfg.budget.inner),
        rows,
    ));
    rep.tables.push(table);
    Ok(rep)
}

// ---------------------------------------------------------------- neumann

const NEUMANN_DEFAULTS: &str = concat!(
    r#"
seed = 1
lambdas = [5.0, 10.0, 20.0, 40.0]

[scheme]
dt = 1e-3
horizon = 1.0
paths = 1

[budget]
samples = 20000
depth = 3
inner = 1
probe_samples = 4000

[[probes]]
kind = "sine"
n = 2
params = [1.0, 1.0, 0.4]

[params]
shrink = 0.5
probe_radius = 0.3
max_ratio = 0.5
"#,
    r#"
[spectrum]
rule = "power"
p = 2.0
c1 = 1.0
n = 8

[field]
kind = "banded"
block = "sin-sum"
amplitude = 0.1
block_n = 1
overlap = 1
gamma = 0.5
alpha = 0.5

[x0]
kind = "values"
values = [0.5, -0.3, 0.2, -0.1]
"#
);

fn check_neumann(cfg: &ExperimentConfig) -> Result<()> {
    let st = setup(cfg)?;
    if st.probes.is_empty() {
        return Err(Error::Config("neumann-contraction needs a probe function".into()));
    }
    check_lambdas(cfg, None)?;
    positive("budget.samples", cfg.budget.samples)?;
    positive("budget.inner", cfg.budget.inner)?;
    positive("budget.probe_samples", cfg.budget.probe_samples)?;
    if cfg.budget.depth < 1 {
        return Err(Error::Config("budget.depth must be at least 1".into()));
    }
    let shrink = cfg.param_f64("shrink")?;
    if !(shrink > 0.0 && shrink <= 1.0) {
        return Err(Error::Config("params.shrink must lie in (0, 1]".into()));
    }
    cfg.param_f64("probe_radius")?;
    cfg.param_f64("max_ratio").map(|_| ())
}

fn neumann_probe_points(x0: &State, d: usize, r: f64) -> Vec<State> {
    let mut pts = vec![x0.clone()];
    for k in 0..d.min(x0.dim()) {
        for sgn in [1.0, -1.0] {
            let mut v = x0.coords().to_vec();
            v[k] += sgn * r;
            pts.push(State::from(v));
        }
    }
    pts
}

fn run_neumann(cfg: &ExperimentConfig) -> Result<ScenarioReport> {
    let st = setup(cfg)?;
    let info = lookup(&cfg.scenario)?;
    let mut rep = ScenarioReport::new(info.name, info.anchor, cfg.seed);
    let f = &st.probes[0];
    let k_max = cfg.budget.depth;
    let max_ratio = cfg.param_f64("max_ratio")?;
    let probes = neumann_probe_points(&st.x0, f.depends_on().max(1), cfg.param_f64("probe_radius")?);
    let mut traces = Vec::new();
    let mut levels = Table::new("levels", &["lambda", "k", "level_sup", "level_sup_se", "term", "term_se", "partial_sum", "partial_sum_se"]);
    for (li, &lambda) in cfg.lambdas.iter().enumerate() {
        let budget = NeumannBudget {
            count: cfg.budget.samples,
            shrink: cfg.param_f64("shrink")?,
            inner: cfg.budget.inner,
            probe_count: cfg.budget.probe_samples,
            seed: seed_for(cfg.seed, li as u64),
            tolerance: None,
        };
        let t = neumann_series(&st.field, &st.s, &st.x0, f, &st.x0, lambda, k_max, &probes, &budget)?;
        for k in 0..=k_max {
            levels.push(vec![
                lambda,
                k as f64,
                t.level_sup[k],
                t.level_sup_se[k],
                t.terms[k].value,
                t.terms[k].std_error,
                t.partial_sums[k].value,
                t.partial_sums[k].std_error,
            ]);
        }
        traces.push(t);
    }

    // Contraction ratio of the first application of B R_lambda, the level
    // resolved well above its Monte Carlo noise.
    let ratio = |t: &crate::martingale::NeumannTrace| {
        let r = t.level_sup[1] / t.level_sup[0];
        let se = r * ((t.level_sup_se[1] / t.level_sup[1]).powi(2) + (t.level_sup_se[0] / t.level_sup[0]).powi(2)).sqrt();
        (r, se)
    };
    let mut rows = Vec::new();
    let top = traces.len().saturating_sub(2);
    for (i, t) in traces.iter().enumerate() {
        let (r, se) = ratio(t);
        if i >= top {
            rows.push(Row::gate(format!("ratio(lambda={})", t.lambda), r, se, format!("< {max_ratio}"), r < max_ratio));
        } else {
            rows.push(Row::info(format!("ratio(lambda={})", t.lambda), r, se, format!("< {max_ratio} for the top two")));
        }
    }
    rep.push(Criterion::new("contraction", "sup_x |(B R_lambda) f| / sup_x |f| over the probe points", rows));

    let mut rows = Vec::new();
    for pair in traces.windows(2) {
        let ((a, ase), (b, bse)) = (ratio(&pair[0]), ratio(&pair[1]));
        let slack = 2.0 * ase.hypot(bse);
        rows.push(Row::gate(
            format!("ratio(lambda={}) - ratio(lambda={})", pair[1].lambda, pair[0].lambda),
            b - a,
            ase.hypot(bse),
            "<= 2 se",
            b - a <= slack,
        ));
    }
    rep.push(Criterion::new("monotone", "contraction ratio nonincreasing in lambda", rows));

    let mut rows = Vec::new();
    for t in &traces {
        let last = &t.terms[k_max];
        let prev = &t.terms[k_max - 1];
        rows.push(Row::gate(
            format!("last-increment(lambda={})", t.lambda),
            last.value,
            last.std_error,
            format!("|increment| <= 3 se or <= |previous increment| = {:.3e}", prev.value.abs()),
            last.value.abs() <= 3.0 * last.std_error || last.value.abs() <= prev.value.abs(),
        ));
        rows.push(Row::info(format!("partial-sum(lambda={})", t.lambda), t.partial_sums[k_max].value, t.partial_sums[k_max].std_error, ""));
    }
    rep.push(Criterion::new("cauchy", format!("partial sums at y0 up to k = {k_max}"), rows));
    rep.tables.push(levels);
    Ok(rep)
}

// ---------------------------------------------------------------- increments

const LEMMA41_DEFAULTS: &str = r#"
seed = 1
lambdas = [1.0, 4.0, 16.0, 64.0]

[spectrum]
rule = "power"
p = 2.0
c1 = 1.0
n = 1

[field]
kind = "constant"
gamma = 1.0

[x0]
kind = "zero"

[scheme]
dt = 1e-3
horizon = 1.0
paths = 10000

[budget]
samples = 10000

[params]
q = 2
eps = 0.5
delta = 1.0
c_bound = 1.0
slope_slack = 0.3
"#;

fn increment_config(cfg: &ExperimentConfig) -> Result<IncrementMomentConfig> {
    let q = cfg.param_usize("q")?;
    Ok(IncrementMomentConfig {
        lambdas: cfg.lambdas.clone(),
        c_bound: cfg.param_f64("c_bound")?,
        q: u32::try_from(q).map_err(|_| Error::Config("params.q is too large".into()))?,
        eps: cfg.param_f64("eps")?,
        delta: cfg.param_f64("delta")?,
        horizon: cfg.scheme.horizon,
        dt: cfg.scheme.dt,
        count: cfg.scheme.paths,
        seed: cfg.seed,
    })
}

fn check_lemma41(cfg: &ExperimentConfig) -> Result<()> {
    check_lambdas(cfg, None)?;
    if cfg.lambdas.len() < 2 {
        return Err(Error::Config("a slope needs at least two lambdas".into()));
    }
    let c = increment_config(cfg)?;
    positive("scheme.paths", c.count)?;
    if c.q == 0 || !(c.eps > 0.0 && c.eps < 1.0) || !(c.delta > 0.0) || !(c.dt > 0.0) || c.horizon < c.dt {
        return Err(Error::Config("need q >= 1, eps in (0, 1), delta > 0 and 0 < dt <= horizon".into()));
    }
    cfg.param_f64("slope_slack").map(|_| ())
}

fn run_lemma41(cfg: &ExperimentConfig) -> Result<ScenarioReport> {
    let info = lookup(&cfg.scenario)?;
    let mut rep = ScenarioReport::new(info.name, info.anchor, cfg.seed);
    let c = increment_config(cfg)?;
    let slack = cfg.param_f64("slope_slack")?;
    let r = increment_moment_diagnostic(&c)?;
    let mut table = Table::new("moments", &["lambda", "moment", "std_error"]);
    let mut rows = Vec::new();
    for i in 0..r.lambdas.len() {
        table.push(vec![r.lambdas[i], r.moments[i], r.std_errors[i]]);
        rows.push(Row::info(format!("moment(lambda={})", r.lambdas[i]), r.moments[i], r.std_errors[i], ""));
    }
    let limit = r.bound_exponent + slack;
    rows.push(Row::gate("slope", r.slope, r.slope_se, format!("<= {limit}"), r.slope <= limit));
    rep.push(Criterion::new(
        "increment-scaling",
        format!("q = {}, eps = {}, delta = {}, {} paths", c.q, c.eps, c.delta, c.count),
        rows,
    ));
    rep.tables.push(table);
    Ok(rep)
}

// ---------------------------------------------------------------- beta norms

const BETA_DEFAULTS: &str = r#"
seed = 1
lambdas = []

[spectrum]
rule = "power"
p = 2.0
c1 = 1.0
n = 32

[field]
kind = "constant"
gamma = 0.5

[x0]
kind = "power"
exponent = -0.6
scale = 1.0

[scheme]
stepper = "exponential-euler"
dt = 1e-3
horizon = 1.0
paths = 2000
save_every = 10

[budget]
samples = 2000

[params]
beta = 0.9
truncations = [8, 16, 32]
window = [0.1, 1.0]
quantile = 0.95
max_spread = 1.5
min_growth = 2.0
"#;

fn truncations(cfg: &ExperimentConfig) -> Result<Vec<usize>> {
    let v = cfg.param_vec("truncations")?;
    if v.is_empty() || v.iter().any(|x| !(*x >= 1.0) || x.fract() != 0.0) {
        return Err(Error::Config("params.truncations must be positive integers".into()));
    }
    Ok(v.into_iter().map(|x| x as usize).collect())
}

fn check_beta(cfg: &ExperimentConfig) -> Result<()> {
    let st = setup(cfg)?;
    let beta = cfg.param_f64("beta")?;
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::Config("params.beta must lie in (0, 1)".into()));
    }
    let base = scheme(cfg, &st)?;
    for n in truncations(cfg)? {
        let mut spec = base.clone();
        spec.n = n;
        if n > st.s.len() {
            return Err(Error::Config(format!("truncation {n} exceeds the spectrum length {}", st.s.len())));
        }
        spec.validate(st.s.lambdas()[n - 1], st.field.gamma())?;
    }
    let (t0, t1) = band(cfg, "window")?;
    if !(t0 >= 0.0 && t1 <= base.horizon) {
        return Err(Error::Config("params.window must lie inside [0, horizon]".into()));
    }
    let q = cfg.param_f64("quantile")?;
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::Config("params.quantile must lie in (0, 1)".into()));
    }
    cfg.param_f64("max_spread")?;
    cfg.param_f64("min_growth").map(|_| ())
}

fn run_beta(cfg: &ExperimentConfig) -> Result<ScenarioReport> {
    let st = setup(cfg)?;
    let info = lookup(&cfg.scenario)?;
    let mut rep = ScenarioReport::new(info.name, info.anchor, cfg.seed);
    let beta = cfg.param_f64("beta")?;
    let (t0, t1) = band(cfg, "window")?;
    let q = cfg.param_f64("quantile")?;
    let base = scheme(cfg, &st)?;
    let mut table = Table::new("norms", &["n", "initial_norm", "sup_quantile", "sup_quantile_se"]);
    let mut quants = Vec::new();
    let mut initial = Vec::new();
    for n in truncations(cfg)? {
        let mut spec = base.clone();
        spec.n = n;
        let e = simulate(&st.field, &st.s, &st.x0, &spec)?;
        let traj = beta_norm_trajectory(&e, beta, &st.s)?;
        let sups = traj.running_sup(t0, t1);
        let v = quantile(&sups, q);
        // Order-statistic standard error from the binomial spread of ranks.
        let h = (q * (1.0 - q) / sups.len() as f64).sqrt();
        let se = (quantile(&sups, (q + h).min(1.0)) - quantile(&sups, (q - h).max(0.0))) / 2.0;
        let x0n = weighted_norm(&st.x0.resized(n), beta, &st.s)?;
        table.push(vec![n as f64, x0n, v, se]);
        quants.push((n, v, se));
        initial.push((n, x0n));
    }
    let mut rows: Vec<Row> = quants
        .iter()
        .map(|(n, v, se)| Row::info(format!("sup-quantile(n={n})"), *v, *se, ""))
        .collect();
    let hi = quants.iter().map(|x| x.1).fold(f64::NEG_INFINITY, f64::max);
    let lo = quants.iter().map(|x| x.1).fold(f64::INFINITY, f64::min);
    let max_spread = cfg.param_f64("max_spread")?;
    let spread_se = {
        let (imax, imin) = (
            quants.iter().max_by(|a, b| a.1.total_cmp(&b.1)).unwrap(),
            quants.iter().min_by(|a, b| a.1.total_cmp(&b.1)).unwrap(),
        );
        (hi / lo) * ((imax.2 / imax.1).powi(2) + (imin.2 / imin.1).powi(2)).sqrt()
    };
    rows.push(Row::gate("max/min", hi / lo, spread_se, format!("<= {max_spread}"), hi / lo <= max_spread));
    rep.push(Criterion::new(
        "uniform-bound",
        format!("{} quantile of sup over t in [{t0}, {t1}] of |X_t|_beta, beta = {beta}", q),
        rows,
    ));

    let min_growth = cfg.param_f64("min_growth")?;
    let mut rows: Vec<Row> = initial.iter().map(|(n, v)| Row::info(format!("initial-norm(n={n})"), *v, 0.0, "exact")).collect();
    let growth = initial.last().unwrap().1 / initial[0].1;
    rows.push(Row::gate("growth", growth, 0.0, format!(">= {min_growth}"), growth >= min_growth));
    rep.push(Criterion::new("initial-growth", "|X_0|_beta from the smallest to the largest truncation", rows));
    rep.tables.push(table);
    Ok(rep)
}

// ---------------------------------------------------------------- hypotheses

const HYPOTHESIS_DEFAULTS: &str = r#"
seed = 1
lambdas = []

[spectrum]
rule = "power"
p = 2.5
c1 = 1.0
n = 16

[field]
kind = "banded"
block = "sin-sum"
amplitude = 0.1
block_n = 1
overlap = 1
gamma = 0.5
alpha = 0.5

[x0]
kind = "zero"

[scheme]
dt = 1e-3
horizon = 1.0
paths = 1

[budget]
samples = 1
points = 2000

[params]
beta = 0.9
q_bound = 1.0
delta = 0.5
log_n = 16
bad_amplitude = 2.0
"#;

const STRUCTURAL: [&str; 6] = ["ellipticity", "(a)", "(b)", "(c)", "(d)", "(e)"];

fn hypothesis_budget(cfg: &ExperimentConfig) -> Result<HypothesisBudget> {
    Ok(HypothesisBudget {
        points: cfg.budget.points,
        seed: cfg.seed,
        q_bound: cfg.param_f64("q_bound")?,
        delta: cfg.param_f64("delta")?,
    })
}

fn block_kind(cfg: &ExperimentConfig) -> Result<BlockKind> {
    match cfg.field.block.as_str() {
        "constant" => Ok(BlockKind::Constant),
        "sin-sum" => Ok(BlockKind::SinSum),
        "tanh-sum" => Ok(BlockKind::TanhSum),
        other => Err(Error::Config(format!("field.block: unknown block `{other}`"))),
    }
}

fn check_hypothesis(cfg: &ExperimentConfig) -> Result<()> {
    let st = setup(cfg)?;
    if cfg.field.kind != "banded" {
        return Err(Error::Config("hypothesis-check needs field.kind = \"banded\"".into()));
    }
    positive("budget.points", cfg.budget.points)?;
    let beta = cfg.param_f64("beta")?;
    if !(beta > 0.0 && beta < 1.0) || !(st.field.holder_alpha() > 0.0 && st.field.holder_alpha() < 1.0) {
        return Err(Error::Config("beta and field.alpha must lie in (0, 1)".into()));
    }
    hypothesis_budget(cfg)?;
    positive("params.log_n", cfg.param_usize("log_n")?)?;
    cfg.param_f64("bad_amplitude").map(|_| ())
}

fn condition_row(r: &crate::coefficients::HypothesisReport, name: &str, expect: Verdict) -> Row {
    match r.get(name) {
        Some(c) => Row::gate(
            format!("{name}:{}", verdict_str(c.verdict)),
            c.value,
            0.0,
            expectation(expect, c.threshold),
            c.verdict == expect,
        ),
        None => Row::gate(format!("{name}:missing"), f64::NAN, 0.0, format!("expect {}", verdict_str(expect)), false),
    }
}

fn limit(threshold: f64) -> String {
    if threshold.is_infinite() {
        "finite".into()
    } else {
        format!("threshold {threshold}")
    }
}

fn expectation(v: Verdict, threshold: f64) -> String {
    format!("expect {} ({})", verdict_str(v), limit(threshold))
}

fn verdict_str(v: Verdict) -> &'static str {
    match v {
        Verdict::Pass => "pass",
        Verdict::Fail => "fail",
        Verdict::Inconclusive => "inconclusive",
    }
}

fn run_hypothesis(cfg: &ExperimentConfig) -> Result<ScenarioReport> {
    let st = setup(cfg)?;
    let info = lookup(&cfg.scenario)?;
    let mut rep = ScenarioReport::new(info.name, info.anchor, cfg.seed);
    let alpha = st.field.holder_alpha();
    let beta = cfg.param_f64("beta")?;
    let budget = hypothesis_budget(cfg)?;
    let f = &cfg.field;

    let good = check_hypotheses(&st.field, &st.s, alpha, beta, &budget)?;
    let mut rows: Vec<Row> = STRUCTURAL.iter().map(|n| condition_row(&good, n, Verdict::Pass)).collect();
    for c in good.conditions.iter().filter(|c| !STRUCTURAL.contains(&c.name.as_str())) {
        rows.push(Row::info(format!("{}:{}", c.name, verdict_str(c.verdict)), c.value, 0.0, limit(c.threshold)));
    }
    rep.push(Criterion::new("positive-family", format!("banded field on the configured spectrum, alpha = {alpha}, beta = {beta}"), rows));
    for c in &good.conditions {
        rep.notes.push(format!("positive-family {}: {}", c.name, c.detail));
    }

    let n_log = cfg.param_usize("log_n")?;
    let log_s = Spectrum::unconstrained((1..=n_log).map(|k| ((k + 1) as f64).ln()).collect())?;
    let gen = std::sync::Arc::new(StandardBlock::new(block_kind(cfg)?, f.amplitude));
    let log_field = banded_field_unchecked(f.block_n, f.overlap, gen, f.gamma, f.alpha, n_log)?;
    let slow = check_hypotheses(&log_field, &log_s, alpha, beta, &budget)?;
    rep.push(Criterion::new("log-spectrum", "lambda_k = ln(k + 1)", vec![condition_row(&slow, "(a)", Verdict::Fail)]));

    let bad_amp = cfg.param_f64("bad_amplitude")?;
    let gen = std::sync::Arc::new(StandardBlock::new(block_kind(cfg)?, bad_amp));
    let wild = banded_field_unchecked(f.block_n, f.overlap, gen.clone(), f.gamma, f.alpha, st.s.len())?;
    let bad = check_hypotheses(&wild, &st.s, alpha, beta, &budget)?;
    let mut rows = vec![condition_row(&bad, "ellipticity", Verdict::Fail)];
    let witness = bad.get("ellipticity").and_then(|c| c.witness.clone());
    rows.push(Row::gate("witness", witness.as_ref().map_or(0.0, |w| w.len() as f64), 0.0, "witness point reported", witness.is_some()));
    let rejected = banded_field(f.block_n, f.overlap, gen, f.gamma, f.alpha, &st.s);
    rows.push(Row::gate(
        "constructor-rejects",
        f64::from(u8::from(rejected.is_err())),
        0.0,
        "validated constructor returns an ellipticity error",
        matches!(rejected, Err(Error::Ellipticity { .. })),
    ));
    if let Some(w) = &witness {
        rep.notes.push(format!("ellipticity witness: {w:?}"));
    }
    rep.push(Criterion::new("ellipticity-violation", format!("block amplitude {bad_amp}"), rows));
    Ok(rep)
}

// ---------------------------------------------------------------- localization

const LOCALIZATION_DEFAULTS: &str = r#"
seed = 1
lambdas = []

[spectrum]
rule = "power"
p = 2.5
c1 = 1.0
n = 8

[field]
kind = "banded"
block = "sin-sum"
amplitude = 0.1
block_n = 1
overlap = 1
gamma = 0.5
alpha = 0.5

[x0]
kind = "power"
exponent = -0.9
scale = 0.3

[scheme]
dt = 1e-3
horizon = 1.0
paths = 1

[budget]
samples = 4000
points = 1000

[params]
beta = 0.9
n_box = 1.0
delta = 0.5
pair_half_width = 2.0
far_half_width = 3.0
holder_coords = 3
"#;

fn check_localization(cfg: &ExperimentConfig) -> Result<()> {
    let st = setup(cfg)?;
    positive("budget.points", cfg.budget.points)?;
    positive("budget.samples", cfg.budget.samples)?;
    let beta = cfg.param_f64("beta")?;
    let (_, d1) = delta1_from_delta(cfg.param_f64("delta")?, cfg.param_f64("n_box")?, beta, &st.s)?;
    LocalizationBox::new(&st.x0, d1, cfg.param_f64("n_box")?, beta, &st.s)?;
    cfg.param_f64("pair_half_width")?;
    cfg.param_f64("far_half_width")?;
    cfg.param_usize("holder_coords").map(|_| ())
}

fn run_localization(cfg: &ExperimentConfig) -> Result<ScenarioReport> {
    let st = setup(cfg)?;
    let info = lookup(&cfg.scenario)?;
    let mut rep = ScenarioReport::new(info.name, info.anchor, cfg.seed);
    let n = st.s.len();
    let beta = cfg.param_f64("beta")?;
    let n_box = cfg.param_f64("n_box")?;
    let delta = cfg.param_f64("delta")?;
    let alpha = st.field.holder_alpha();
    let (k0, d1) = delta1_from_delta(delta, n_box, beta, &st.s)?;
    let bx = LocalizationBox::new(&st.x0, d1, n_box, beta, &st.s)?;
    let loc = localized_field(&st.field, d1, &bx)?;
    let points = cfg.budget.points;

    let near = QBallSampler::new(&st.x0, d1 * (1.0 - 1e-9), n_box, beta, &st.s)?;
    let gap = agreement_gap(&st.field, &loc, &near, points, cfg.seed);
    rep.push(Criterion::new(
        "agreement",
        format!("{points} points of Q_N within |x - x0| < r = {d1:.6} (K0 = {k0})"),
        vec![Row::gate("max-gap", gap, 0.0, "== 0", gap == 0.0)],
    ));

    let pairs = BoxPairSampler::cube(n, cfg.param_f64("pair_half_width")?, 1e-3, 1.0);
    let m = cfg.param_usize("holder_coords")?.min(n);
    let mut rows = Vec::new();
    for i in 0..m {
        for j in i..m {
            let d = holder_domination(&st.field, &loc, &bx, i, j, alpha, &pairs, cfg.budget.samples, seed_for(cfg.seed, (i * n + j) as u64));
            rows.push(Row::gate(format!("excess[{i},{j}]"), d.max_excess, 0.0, "<= 1e-12", d.max_excess <= 1e-12));
            rows.push(Row::gate(
                format!("quotient[{i},{j}]"),
                d.localized,
                0.0,
                format!("<= {:.6e} + 1e-12", d.original),
                d.localized <= d.original + 1e-12,
            ));
        }
    }
    rep.push(Criterion::new("holder-domination", format!("{} sampled pairs per entry, alpha = {alpha}", cfg.budget.samples), rows));

    let cert = eta(&loc, &st.x0, &BoxSampler::cube(n, cfg.param_f64("far_half_width")?), points, cfg.seed);
    let modulus = continuity_modulus(&st.field, &st.s, beta, n_box, delta);
    let row = match modulus {
        Some(w) => Row::gate("eta", cert.sampled, 0.0, format!("<= {w:.6e}"), cert.sampled <= w),
        None => Row::gate("eta", cert.sampled, 0.0, "continuity modulus unavailable", false),
    };
    rep.push(Criterion::new("eta-bound", format!("sampled eta of the localized field at delta = {delta}"), vec![row]));

    let c2 = measure_c2(&loc, m, alpha, &BoxPairSampler::cube(n, 1.0, 1e-3, 1.0), cfg.budget.samples, cfg.seed)?;
    rep.push(Criterion::new(
        "drift-geometry",
        "empirical c2 and far-field drift perturbation",
        vec![
            Row::info("c2", c2.c2, 0.0, "empirical"),
            Row::gate("far-field", c2.far_field, 0.0, "== 0", c2.far_field == 0.0),
        ],
    ));
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::resolve;

    #[test]
    fn registry_has_eight_unique_entries() {
        let names: std::collections::BTreeSet<_> = registry().iter().map(|s| s.name).collect();
        assert_eq!(names.len(), 8);
        assert!(registry().iter().all(|s| !s.anchor.is_empty() && !s.description.is_empty()));
        let err = lookup("nope").unwrap_err().to_string();
        assert!(err.contains("transition-moments") && err.contains("localization-roundtrip"));
    }

    #[test]
    fn defaults_are_feasible() {
        for s in registry() {
            let cfg = resolve(None, Some(s.name), &[]).unwrap();
            validate(&cfg).unwrap_or_else(|e| panic!("{}: {e}", s.name));
        }
    }

    #[test]
    fn infeasible_budgets_are_rejected() {
        let cfg = resolve(None, Some("resolvent-identity"), &["lambdas=[5.0]".into()]).unwrap();
        assert!(matches!(validate(&cfg), Err(Error::HorizonTooShort { .. })));
        let cfg = resolve(None, Some("beta-regularization"), &["scheme.save_every=1".into(), "scheme.paths=100000".into()]).unwrap();
        assert!(validate(&cfg).unwrap_err().to_string().contains("budget infeasible"));
        let cfg = resolve(None, Some("transition-moments"), &["scheme.stepper=\"euler-maruyama\"".into(), "scheme.dt=0.1".into()]).unwrap();
        assert!(matches!(validate(&cfg), Err(Error::UnstableStep { .. })));
    }

    #[test]
    fn small_runs_complete() {
        let cfg = resolve(None, Some("hypothesis-check"), &["budget.points=200".into()]).unwrap();
        let rep = run(&cfg).unwrap();
        assert!(rep.criterion("log-spectrum").unwrap().pass);
        assert!(rep.criterion("ellipticity-violation").unwrap().pass);
        let cfg = resolve(None, Some("localization-roundtrip"), &["budget.points=200".into(), "budget.samples=500".into()]).unwrap();
        assert!(run(&cfg).unwrap().passed());
    }
}
