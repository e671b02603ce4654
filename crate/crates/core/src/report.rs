//! Scenario results: gating criteria rows, auxiliary tables, and their
//! deterministic serialisation (`summary.json`, `<scenario>.csv`).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// One reported quantity. `pass` is `None` for informational rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub quantity: String,
    pub value: f64,
    pub std_error: f64,
    pub tolerance: String,
    pub pass: Option<bool>,
}

impl Row {
    pub fn gate(quantity: impl Into<String>, value: f64, std_error: f64, tolerance: impl Into<String>, pass: bool) -> Self {
        Row { quantity: quantity.into(), value, std_error, tolerance: tolerance.into(), pass: Some(pass) }
    }

    pub fn info(quantity: impl Into<String>, value: f64, std_error: f64, tolerance: impl Into<String>) -> Self {
        Row { quantity: quantity.into(), value, std_error, tolerance: tolerance.into(), pass: None }
    }
}

/// A named acceptance criterion: passes iff every gating row passes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Criterion {
    pub name: String,
    pub description: String,
    pub pass: bool,
    pub rows: Vec<Row>,
}

impl Criterion {
    pub fn new(name: impl Into<String>, description: impl Into<String>, rows: Vec<Row>) -> Self {
        let pass = rows.iter().all(|r| r.pass != Some(false));
        Criterion { name: name.into(), description: description.into(), pass, rows }
    }
}

/// Free-form numeric table written as its own CSV file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(name: &str, header: &[&str]) -> Self {
        Table { name: name.into(), header: header.iter().map(|h| h.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub scenario: String,
    pub anchor: String,
    pub seed: u64,
    pub pass: bool,
    pub criteria: Vec<Criterion>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
    #[serde(skip)]
    pub tables: Vec<Table>,
}

impl ScenarioReport {
    pub fn new(scenario: &str, anchor: &str, seed: u64) -> Self {
        ScenarioReport {
            scenario: scenario.into(),
            anchor: anchor.into(),
            seed,
            pass: true,
            criteria: Vec::new(),
            notes: Vec::new(),
            tables: Vec::new(),
        }
    }

    pub fn push(&mut self, c: Criterion) {
        self.pass &= c.pass;
        self.criteria.push(c);
    }

    pub fn criterion(&self, name: &str) -> Option<&Criterion> {
        self.criteria.iter().find(|c| c.name == name)
    }

    pub fn passed(&self) -> bool {
        self.pass
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// Diagnostics table with columns `scenario,quantity,value,std_error,tolerance,pass`;
    /// quantities are prefixed by their criterion, informational rows carry
    /// `info` in the `pass` column.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["scenario", "quantity", "value", "std_error", "tolerance", "pass"])?;
        for c in &self.criteria {
            for r in &c.rows {
                let pass = match r.pass {
                    Some(true) => "true",
                    Some(false) => "false",
                    None => "info",
                };
                w.write_record([
                    self.scenario.as_str(),
                    &format!("{}/{}", c.name, r.quantity),
                    &r.value.to_string(),
                    &r.std_error.to_string(),
                    &r.tolerance,
                    pass,
                ])?;
            }
        }
        csv_string(w)
    }

    /// Writes `summary.json`, `<scenario>.csv` and one `<scenario>-<table>.csv`
    /// per table; returns the paths written.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let mut out = Vec::new();
        let summary = dir.join("summary.json");
        fs::write(&summary, self.to_json()?)?;
        out.push(summary);
        let main = dir.join(format!("{}.csv", self.scenario));
        fs::write(&main, self.to_csv()?)?;
        out.push(main);
        for t in &self.tables {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(&t.header)?;
            for r in &t.rows {
                w.write_record(r.iter().map(|v| v.to_string()))?;
            }
            let path = dir.join(format!("{}-{}.csv", self.scenario, t.name));
            fs::write(&path, csv_string(w)?)?;
            out.push(path);
        }
        Ok(out)
    }
}

fn csv_string(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| std::io::Error::other(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn criteria_gate_the_report() {
        let mut r = ScenarioReport::new("demo", "x", 1);
        r.push(Criterion::new("a", "", vec![Row::gate("z", 1.0, 0.1, "<= 3", true), Row::info("slope", -0.5, 0.01, "")]));
        assert!(r.passed());
        r.push(Criterion::new("b", "", vec![Row::gate("z", 4.0, 0.1, "<= 3", false)]));
        assert!(!r.passed() && !r.criterion("b").unwrap().pass);
        let csv = r.to_csv().unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "scenario,quantity,value,std_error,tolerance,pass");
        assert_eq!(lines[2], "demo,a/slope,-0.5,0.01,,info");
        assert_eq!(lines[3], "demo,b/z,4,0.1,<= 3,false");
    }

    #[test]
    fn writes_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut r = ScenarioReport::new("demo", "x", 1);
        let mut t = Table::new("levels", &["k", "value"]);
        t.push(vec![0.0, 1.5]);
        r.tables.push(t);
        r.push(Criterion::new("a", "", vec![Row::gate("z", f64::NAN, 0.0, "", false)]));
        let paths = r.write(dir.path()).unwrap();
        assert_eq!(paths.len(), 3);
        let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&paths[0]).unwrap()).unwrap();
        assert_eq!(json["pass"], false);
        assert!(json["criteria"][0]["rows"][0]["value"].is_null());
        assert_eq!(fs::read_to_string(&paths[2]).unwrap(), "k,value\n0,1.5\n");
    }
}
