//! Experiment configuration: a TOML document layered over per-scenario
//! defaults, with dotted `key=value` overrides.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use toml::Value;

use crate::coefficients::{
    banded_field, banded_field_unchecked, constant_field, BlockKind, CoefficientField, StandardBlock,
};
use crate::error::{Error, Result};
use crate::functions::TestFunctionSpec;
use crate::galerkin::{SchemeSpec, Stepper};
use crate::spectrum::{make_spectrum, EigenRule, Spectrum, State};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumConfig {
    /// `power` (`c1 k^p`), `explicit` (validated list), `finite` (list, no
    /// tail), `unconstrained` (list, unknown tail) or `log` (`ln(k + 1)`).
    pub rule: String,
    #[serde(default = "default_p")]
    pub p: f64,
    #[serde(default = "default_one")]
    pub c1: f64,
    #[serde(default)]
    pub n: usize,
    #[serde(default)]
    pub lambdas: Vec<f64>,
}

fn default_p() -> f64 {
    2.0
}
fn default_one() -> f64 {
    1.0
}

impl SpectrumConfig {
    pub fn build(&self) -> Result<Spectrum> {
        let n = if self.n > 0 { self.n } else { self.lambdas.len() };
        match self.rule.as_str() {
            "power" => make_spectrum(self.p, self.c1, n, &EigenRule::Power),
            "explicit" => make_spectrum(self.p, self.c1, n, &EigenRule::Explicit { lambdas: self.lambdas.clone() }),
            "finite" => Spectrum::finite(self.lambdas.clone()),
            "unconstrained" => Spectrum::unconstrained(self.lambdas.clone()),
            "log" => Spectrum::unconstrained((1..=n).map(|k| ((k + 1) as f64).ln()).collect()),
            other => Err(Error::Config(format!("spectrum.rule: unknown rule `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldConfig {
    /// `constant` or `banded`.
    pub kind: String,
    pub gamma: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Constant fields: full matrix rows, or `diag`; identity by default.
    #[serde(default)]
    pub a0: Vec<Vec<f64>>,
    #[serde(default)]
    pub diag: Vec<f64>,
    /// Constant fields: `b`, ones by default.
    #[serde(default)]
    pub b: Vec<f64>,
    /// Banded fields: `constant`, `sin-sum` or `tanh-sum`.
    #[serde(default = "default_block")]
    pub block: String,
    #[serde(default)]
    pub amplitude: f64,
    #[serde(default = "default_usize_one")]
    pub block_n: usize,
    #[serde(default = "default_usize_one")]
    pub overlap: usize,
    /// Skip the ellipticity validation (the hypothesis checker reports it).
    #[serde(default)]
    pub unchecked: bool,
}

fn default_alpha() -> f64 {
    0.5
}
fn default_block() -> String {
    "sin-sum".into()
}
fn default_usize_one() -> usize {
    1
}

impl FieldConfig {
    pub fn build(&self, s: &Spectrum) -> Result<CoefficientField> {
        let n = s.len();
        match self.kind.as_str() {
            "constant" => {
                let a0 = if !self.a0.is_empty() {
                    if self.a0.len() != n || self.a0.iter().any(|r| r.len() != n) {
                        return Err(Error::Config(format!("field.a0 must be {n}x{n}")));
                    }
                    DMatrix::from_fn(n, n, |i, j| self.a0[i][j])
                } else if !self.diag.is_empty() {
                    if self.diag.len() != n {
                        return Err(Error::Config(format!("field.diag must have {n} entries")));
                    }
                    DMatrix::from_diagonal(&nalgebra::DVector::from_vec(self.diag.clone()))
                } else {
                    DMatrix::identity(n, n)
                };
                let b = if self.b.is_empty() { vec![1.0; n] } else { self.b.clone() };
                if b.len() != n {
                    return Err(Error::Config(format!("field.b must have {n} entries")));
                }
                constant_field(a0, b, self.gamma)
            }
            "banded" => {
                let kind = match self.block.as_str() {
                    "constant" => BlockKind::Constant,
                    "sin-sum" => BlockKind::SinSum,
                    "tanh-sum" => BlockKind::TanhSum,
                    other => return Err(Error::Config(format!("field.block: unknown block `{other}`"))),
                };
                let gen = Arc::new(StandardBlock::new(kind, self.amplitude));
                if self.unchecked {
                    banded_field_unchecked(self.block_n, self.overlap, gen, self.gamma, self.alpha, n)
                } else {
                    banded_field(self.block_n, self.overlap, gen, self.gamma, self.alpha, s)
                }
            }
            other => Err(Error::Config(format!("field.kind: unknown kind `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct X0Config {
    /// `zero`, `values` or `power` (`scale * k^exponent`, one-based `k`).
    pub kind: String,
    #[serde(default)]
    pub values: Vec<f64>,
    #[serde(default)]
    pub exponent: f64,
    #[serde(default = "default_one")]
    pub scale: f64,
}

impl X0Config {
    pub fn build(&self, n: usize) -> Result<State> {
        match self.kind.as_str() {
            "zero" => Ok(State::zeros(n)),
            "values" => {
                if self.values.len() > n {
                    return Err(Error::Config(format!("x0.values has {} entries, truncation is {n}", self.values.len())));
                }
                Ok(State::new(self.values.clone())?.resized(n))
            }
            "power" => Ok(State::from_fn(n, |k| self.scale * ((k + 1) as f64).powf(self.exponent))),
            other => Err(Error::Config(format!("x0.kind: unknown kind `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeConfig {
    #[serde(default)]
    pub stepper: Stepper,
    pub dt: f64,
    pub horizon: f64,
    pub paths: usize,
    /// Truncation; defaults to the spectrum length.
    #[serde(default)]
    pub n: usize,
    #[serde(default = "default_usize_one")]
    pub save_every: usize,
}

impl SchemeConfig {
    pub fn spec(&self, n_default: usize, seed: u64) -> SchemeSpec {
        SchemeSpec {
            stepper: self.stepper,
            dt: self.dt,
            horizon: self.horizon,
            n: if self.n > 0 { self.n } else { n_default },
            count: self.paths,
            seed,
            save_every: self.save_every,
            sqrt_refresh: 1,
        }
    }
}

/// Monte Carlo budgets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetConfig {
    /// Samples per estimate.
    pub samples: usize,
    /// Nested Monte Carlo depth.
    #[serde(default)]
    pub depth: usize,
    #[serde(default = "default_usize_one")]
    pub inner: usize,
    #[serde(default)]
    pub probe_samples: usize,
    /// Sampled points for sup-type scans.
    #[serde(default)]
    pub points: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: String,
    pub seed: u64,
    pub spectrum: SpectrumConfig,
    pub field: FieldConfig,
    pub x0: X0Config,
    pub scheme: SchemeConfig,
    #[serde(default)]
    pub probes: Vec<TestFunctionSpec>,
    #[serde(default)]
    pub lambdas: Vec<f64>,
    pub budget: BudgetConfig,
    /// Output directory; the runner's `--out-dir` takes precedence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<String>,
    /// Scenario-specific knobs.
    #[serde(default)]
    pub params: BTreeMap<String, Value>,
}

impl ExperimentConfig {
    pub fn param_f64(&self, key: &str) -> Result<f64> {
        match self.params.get(key) {
            Some(Value::Float(v)) => Ok(*v),
            Some(Value::Integer(v)) => Ok(*v as f64),
            Some(other) => Err(Error::Config(format!("params.{key}: expected a number, got {other}"))),
            None => Err(Error::Config(format!("params.{key} is required"))),
        }
    }

    pub fn param_usize(&self, key: &str) -> Result<usize> {
        match self.params.get(key) {
            Some(Value::Integer(v)) if *v >= 0 => Ok(*v as usize),
            Some(other) => Err(Error::Config(format!("params.{key}: expected a nonnegative integer, got {other}"))),
            None => Err(Error::Config(format!("params.{key} is required"))),
        }
    }

    pub fn param_vec(&self, key: &str) -> Result<Vec<f64>> {
        match self.params.get(key) {
            Some(Value::Array(items)) => items
                .iter()
                .map(|v| match v {
                    Value::Float(x) => Ok(*x),
                    Value::Integer(x) => Ok(*x as f64),
                    other => Err(Error::Config(format!("params.{key}: expected numbers, got {other}"))),
                })
                .collect(),
            Some(other) => Err(Error::Config(format!("params.{key}: expected an array, got {other}"))),
            None => Err(Error::Config(format!("params.{key} is required"))),
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

/// Recursively overlays `top` on `base`; tables merge, everything else is
/// replaced.
pub fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Table(b), Value::Table(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Parses the right-hand side of an override as a TOML value, falling back
/// to a bare string.
fn parse_override_value(raw: &str) -> Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| Value::String(raw.into())),
        Err(_) => Value::String(raw.into()),
    }
}

/// Applies `a.b.c=value`.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not of the form key=value")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("override `{assignment}` has an empty key segment")));
    }
    let mut cur = doc;
    for seg in &path[..path.len() - 1] {
        let table = cur
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override `{key}`: `{seg}` is not a table")))?;
        cur = table.entry(seg.to_string()).or_insert_with(|| Value::Table(Default::default()));
    }
    let table = cur.as_table_mut().ok_or_else(|| Error::Config(format!("override `{key}`: parent is not a table")))?;
    table.insert(path[path.len() - 1].to_string(), parse_override_value(raw.trim()));
    Ok(())
}

/// Resolves a configuration: scenario defaults, then the user document,
/// then overrides. The scenario is taken from `scenario` if given, else
/// from the user document.
pub fn resolve(user: Option<&str>, scenario: Option<&str>, overrides: &[String]) -> Result<ExperimentConfig> {
    let user_doc: Option<Value> = match user {
        Some(text) => Some(Value::Table(
            text.parse::<toml::Table>().map_err(|e| Error::Config(format!("config parse error: {e}")))?,
        )),
        None => None,
    };
    let name = match scenario {
        Some(s) => s.to_string(),
        None => user_doc
            .as_ref()
            .and_then(|d| d.get("scenario"))
            .and_then(|v| v.as_str())
            .map(str::to_string)
            .ok_or_else(|| Error::Config("no scenario given (use --scenario or set `scenario` in the config)".into()))?,
    };
    let info = crate::scenarios::lookup(&name)?;
    let mut doc = Value::Table(info.defaults.parse::<toml::Table>().map_err(|e| Error::Config(format!("defaults for {name}: {e}")))?);
    if let Some(u) = user_doc {
        merge(&mut doc, u);
    }
    if let Some(t) = doc.as_table_mut() {
        t.insert("scenario".into(), Value::String(name.clone()));
    }
    for o in overrides {
        apply_override(&mut doc, o)?;
    }
    let text = toml::to_string(&doc).map_err(|e| Error::Config(e.to_string()))?;
    toml::from_str::<ExperimentConfig>(&text).map_err(|e| Error::Config(format!("config error: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_parse_values() {
        let mut doc = Value::Table(Default::default());
        apply_override(&mut doc, "scheme.dt=1e-3").unwrap();
        apply_override(&mut doc, "lambdas=[5, 10]").unwrap();
        apply_override(&mut doc, "field.block=sin-sum").unwrap();
        assert_eq!(doc["scheme"]["dt"].as_float(), Some(1e-3));
        assert_eq!(doc["lambdas"].as_array().unwrap().len(), 2);
        assert_eq!(doc["field"]["block"].as_str(), Some("sin-sum"));
        assert!(apply_override(&mut doc, "novalue").is_err());
        assert!(apply_override(&mut doc, "a..b=1").is_err());
    }

    #[test]
    fn every_scenario_default_resolves_and_round_trips() {
        for info in crate::scenarios::registry() {
            let cfg = resolve(None, Some(info.name), &[]).unwrap();
            let text = cfg.to_toml().unwrap();
            let back: ExperimentConfig = toml::from_str(&text).unwrap();
            assert_eq!(back, cfg, "{}", info.name);
            let s = cfg.spectrum.build().unwrap();
            cfg.field.build(&s).unwrap();
            cfg.x0.build(s.len()).unwrap();
        }
    }

    #[test]
    fn user_document_and_overrides_layer() {
        let user = "scenario = \"lemma41-scaling\"\nseed = 11\n[budget]\nsamples = 50\n";
        let cfg = resolve(Some(user), None, &["seed=12".into()]).unwrap();
        assert_eq!(cfg.seed, 12);
        assert_eq!(cfg.budget.samples, 50);
        assert!(resolve(Some("seed = 1"), None, &[]).is_err());
        assert!(resolve(None, Some("nope"), &[]).unwrap_err().to_string().contains("unknown scenario"));
        let bad = resolve(Some("scenario = \"lemma41-scaling\"\n[budget]\nsampels = 3\n"), None, &[]);
        assert!(bad.unwrap_err().to_string().contains("sampels"));
        assert!(resolve(Some("scenario = \n"), None, &[]).unwrap_err().to_string().contains("line"));
    }
}
