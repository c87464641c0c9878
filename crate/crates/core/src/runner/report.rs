//! Experiment reports and their plot-ready files.
//!
//! `report.csv` has one row per (trial, method) with the columns
//! `trial, method, objective, avg_delay_s, acc_own, acc_avg` followed by one
//! `freq_<model>` column per catalog entry: the fraction of users that chose
//! the model. `users.csv` lists every user's decision and resources, and
//! `summary.json` holds per-method means.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::Scheme;
use super::experiment::{user_records, Evaluation};
use crate::error::{Error, Result};
use crate::model::Scenario;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserRecord {
    pub user: usize,
    pub local: bool,
    pub model: usize,
    /// Server CPU share (GHz).
    pub f: f64,
    /// Bandwidth (MHz).
    pub b: f64,
    /// Sum of the four delay components (s).
    pub delay_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub method: Scheme,
    pub objective: f64,
    pub avg_delay_s: f64,
    pub acc_own: f64,
    pub acc_avg: f64,
    /// Fraction of users per catalog model, in catalog order.
    pub frequencies: Vec<f64>,
    pub users: Vec<UserRecord>,
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

impl TrialRecord {
    pub fn new(trial: usize, method: Scheme, sc: &Scenario<f64>, ev: &Evaluation) -> Self {
        let n = ev.decision.m.len();
        let mut frequencies = vec![0.0; sc.catalog.len()];
        for &m in &ev.decision.m {
            frequencies[m] += 1.0 / n as f64;
        }
        Self {
            trial,
            method,
            objective: ev.objective,
            avg_delay_s: mean(&ev.delays),
            acc_own: mean(&ev.acc_own),
            acc_avg: mean(&ev.acc_avg),
            frequencies,
            users: user_records(ev),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    /// Catalog model names, in catalog order.
    pub models: Vec<String>,
    pub records: Vec<TrialRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFrequency {
    pub model: String,
    pub frequency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Scheme,
    pub trials: usize,
    pub objective_mean: f64,
    pub avg_delay_s_mean: f64,
    pub acc_own_mean: f64,
    pub acc_avg_mean: f64,
    /// Share of all user selections over all trials.
    pub frequencies: Vec<ModelFrequency>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub models: Vec<String>,
    pub methods: Vec<MethodSummary>,
}

impl Report {
    /// Methods in order of first appearance.
    pub fn methods(&self) -> Vec<Scheme> {
        let mut out: Vec<Scheme> = Vec::new();
        for r in &self.records {
            if !out.contains(&r.method) {
                out.push(r.method);
            }
        }
        out
    }

    pub fn records_of(&self, method: Scheme) -> impl Iterator<Item = &TrialRecord> {
        self.records.iter().filter(move |r| r.method == method)
    }

    pub fn summary(&self) -> Summary {
        let methods = self
            .methods()
            .into_iter()
            .map(|method| {
                let rows: Vec<&TrialRecord> = self.records_of(method).collect();
                let col = |f: fn(&TrialRecord) -> f64| mean(&rows.iter().map(|r| f(r)).collect::<Vec<_>>());
                let frequencies = self
                    .models
                    .iter()
                    .enumerate()
                    .map(|(k, model)| ModelFrequency {
                        model: model.clone(),
                        frequency: mean(&rows.iter().map(|r| r.frequencies[k]).collect::<Vec<_>>()),
                    })
                    .collect();
                MethodSummary {
                    method,
                    trials: rows.len(),
                    objective_mean: col(|r| r.objective),
                    avg_delay_s_mean: col(|r| r.avg_delay_s),
                    acc_own_mean: col(|r| r.acc_own),
                    acc_avg_mean: col(|r| r.acc_avg),
                    frequencies,
                }
            })
            .collect();
        Summary {
            models: self.models.clone(),
            methods,
        }
    }

    pub fn report_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header: Vec<String> = ["trial", "method", "objective", "avg_delay_s", "acc_own", "acc_avg"]
            .map(String::from)
            .to_vec();
        header.extend(self.models.iter().map(|m| format!("freq_{m}")));
        w.write_record(&header)?;
        for r in &self.records {
            let mut row = vec![
                r.trial.to_string(),
                r.method.to_string(),
                r.objective.to_string(),
                r.avg_delay_s.to_string(),
                r.acc_own.to_string(),
                r.acc_avg.to_string(),
            ];
            row.extend(r.frequencies.iter().map(f64::to_string));
            w.write_record(&row)?;
        }
        finish(w)
    }

    pub fn users_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["trial", "method", "user", "local", "model", "f_ghz", "b_mhz", "delay_s"])?;
        for r in &self.records {
            for u in &r.users {
                w.write_record([
                    r.trial.to_string(),
                    r.method.to_string(),
                    u.user.to_string(),
                    u.local.to_string(),
                    self.models[u.model].clone(),
                    u.f.to_string(),
                    u.b.to_string(),
                    u.delay_s.to_string(),
                ])?;
            }
        }
        finish(w)
    }
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Files written by [`emit_report`].
#[derive(Debug, Clone, PartialEq)]
pub struct EmittedReport {
    pub report_csv: PathBuf,
    pub users_csv: PathBuf,
    pub summary_json: PathBuf,
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Writes `report.csv`, `users.csv` and `summary.json` into `dir`.
pub fn emit_report(report: &Report, dir: &Path) -> Result<EmittedReport> {
    let out = EmittedReport {
        report_csv: dir.join("report.csv"),
        users_csv: dir.join("users.csv"),
        summary_json: dir.join("summary.json"),
    };
    write_file(&out.report_csv, &report.report_csv()?)?;
    write_file(&out.users_csv, &report.users_csv()?)?;
    let mut json = serde_json::to_string_pretty(&report.summary())?;
    json.push('\n');
    write_file(&out.summary_json, &json)?;
    Ok(out)
}
