//! File-producing entry points behind the CLI subcommands. Each returns the
//! paths it wrote, in a fixed order.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use super::config::{load_experiment, load_problem, ProblemConfig, Scheme};
use super::experiment::{evaluate, run_experiment, run_scheme, stream_rng, Evaluation, SchemeInputs};
use super::report::{emit_report, write_file, Report};
use crate::allocator::allocate;
use crate::error::{Error, Result};
use crate::kd::{run_demo, KdDemoConfig, KdDemoOutcome};
use crate::model::{user_delays, DelayBreakdown};
use crate::oracle::{AccuracyTable, Method};
use crate::qlearn::{greedy_decision, train, ActionSpace, FixedScenario, RewardContext};

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn json<S: Serialize>(value: &S) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationOutput {
    pub local: Vec<bool>,
    pub model: Vec<String>,
    pub f_ghz: Vec<f64>,
    pub b_mhz: Vec<f64>,
    pub delays: Vec<DelayBreakdown<f64>>,
    pub objective: f64,
    /// Present when the resources come from the convex solve.
    pub kkt_residual: Option<f64>,
}

fn allocation_output(p: &ProblemConfig, ev: &Evaluation, kkt_residual: Option<f64>) -> Result<AllocationOutput> {
    let sc = &p.scenario;
    Ok(AllocationOutput {
        local: ev.decision.x.clone(),
        model: ev.decision.m.iter().map(|&m| sc.catalog[m].name.clone()).collect(),
        f_ghz: ev.allocation.f.clone(),
        b_mhz: ev.allocation.b.clone(),
        delays: user_delays(sc, &ev.decision, &ev.allocation)?,
        objective: ev.objective,
        kkt_residual,
    })
}

/// Optimal resources for the `[decision]` of a scenario file; writes
/// `allocation.json`.
pub fn cmd_allocate(config: &Path, out: &Path, table: &AccuracyTable) -> Result<Vec<PathBuf>> {
    let p = load_problem(&read(config)?)?;
    let dec = p
        .decision
        .clone()
        .ok_or_else(|| Error::config("decision", "allocate needs a [decision] block with `local` and `model`"))?;
    let res = allocate(&p.scenario, &dec)?;
    let ctx = RewardContext {
        table,
        method: Method::Kd,
        distribution: p.distribution,
    };
    let ev = evaluate(&p.scenario, dec, res.allocation, &ctx)?;
    let path = out.join("allocation.json");
    write_file(&path, &json(&allocation_output(&p, &ev, Some(res.kkt_residual))?)?)?;
    Ok(vec![path])
}

/// Trains the proposed agent on the scenario file; writes `qtable.csv` and
/// the greedy decision with its allocation to `decision.json`.
pub fn cmd_train_q(
    config: &Path,
    out: &Path,
    seed: u64,
    episodes: Option<usize>,
    table: &AccuracyTable,
) -> Result<Vec<PathBuf>> {
    let mut p = load_problem(&read(config)?)?;
    if let Some(e) = episodes {
        p.q.episodes = e;
    }
    let sc = &p.scenario;
    let ctx = RewardContext {
        table,
        method: Method::Kd,
        distribution: p.distribution,
    };
    let space = ActionSpace::for_scenario(sc);
    let mut rng = stream_rng(seed, 0);
    let q = train(&mut FixedScenario(sc), &ctx, &space, &p.q, &mut rng)?;
    let dec = greedy_decision(&q, sc, &space, &p.q)?;
    let res = allocate(sc, &dec)?;
    let ev = evaluate(sc, dec, res.allocation, &ctx)?;

    let q_path = out.join("qtable.csv");
    let d_path = out.join("decision.json");
    write_file(&q_path, &q.to_csv()?)?;
    write_file(&d_path, &json(&allocation_output(&p, &ev, Some(res.kkt_residual))?)?)?;
    Ok(vec![q_path, d_path])
}

/// Runs an experiment file, or the default experiment without one. `seed`, `method` and `episodes` override the
/// file; output goes to `out` when given, else to the configured directory.
pub fn cmd_experiment(
    config: Option<&Path>,
    out: Option<&Path>,
    seed: Option<u64>,
    method: Option<Scheme>,
    episodes: Option<usize>,
    table: &AccuracyTable,
) -> Result<(Report, Vec<PathBuf>)> {
    let mut cfg = match config {
        Some(path) => load_experiment(&read(path)?, path.parent().unwrap_or(Path::new(".")))?,
        None => load_experiment("", Path::new("."))?,
    };
    if let Some(s) = seed {
        cfg.experiment.seed = s;
    }
    if let Some(m) = method {
        cfg.experiment.methods = vec![m];
    }
    if let Some(e) = episodes {
        cfg.q.episodes = e;
    }
    let dir = out.map_or_else(|| cfg.experiment.out.clone(), Path::to_path_buf);
    let report = run_experiment(&cfg, table)?;
    let emitted = emit_report(&report, &dir)?;
    Ok((report, vec![emitted.report_csv, emitted.users_csv, emitted.summary_json]))
}

/// One scheme on the fixed scenario of a problem file; used for quick
/// comparisons. Writes `<method>.json`.
pub fn cmd_solve(config: &Path, out: &Path, seed: u64, method: Scheme, table: &AccuracyTable) -> Result<Vec<PathBuf>> {
    let p = load_problem(&read(config)?)?;
    let inputs = SchemeInputs {
        table,
        distribution: p.distribution,
        q: &p.q,
        q_only_levels: super::config::QOnlyConfig::default().levels,
    };
    let ev = run_scheme(&p.scenario, method, &inputs, &mut stream_rng(seed, 0))?;
    let path = out.join(format!("{method}.json"));
    write_file(&path, &json(&allocation_output(&p, &ev, None)?)?)?;
    Ok(vec![path])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KdDemoSummary {
    pub runs: usize,
    pub teacher_full: f64,
    pub hard_full: f64,
    pub hard_own: f64,
    pub kd_full: f64,
    pub kd_own: f64,
    pub simkd_full: f64,
    pub simkd_own: f64,
}

impl KdDemoSummary {
    pub fn from_outcomes(o: &[KdDemoOutcome]) -> Self {
        let m = |f: fn(&KdDemoOutcome) -> f64| o.iter().map(f).sum::<f64>() / o.len().max(1) as f64;
        Self {
            runs: o.len(),
            teacher_full: m(|x| x.teacher_full),
            hard_full: m(|x| x.hard_full),
            hard_own: m(|x| x.hard_own),
            kd_full: m(|x| x.kd_full),
            kd_own: m(|x| x.kd_own),
            simkd_full: m(|x| x.simkd_full),
            simkd_own: m(|x| x.simkd_own),
        }
    }
}

/// Demo settings plus the number of consecutive seeds to run.
pub fn load_kd_demo(text: &str) -> Result<(KdDemoConfig, usize)> {
    let mut table: Table = text.parse().map_err(|e: toml::de::Error| Error::config("kd-demo", e.message().to_string()))?;
    let runs = match table.remove("runs") {
        None => 10,
        Some(Value::Integer(n)) if n >= 1 => n as usize,
        Some(_) => return Err(Error::config("runs", "must be a positive integer")),
    };
    let mut base = Table::try_from(KdDemoConfig::default()).expect("defaults serialise");
    for (k, v) in table {
        base.insert(k, v);
    }
    let cfg = serde_path_to_error::deserialize(base)
        .map_err(|e| Error::config(e.path().to_string(), e.inner().message().to_string()))?;
    Ok((cfg, runs))
}

/// Toy distillation comparison over consecutive seeds. Writes per-seed
/// accuracies (`kd_demo.csv`), their means (`kd_demo_summary.json`), and
/// for the first seed the datasets and trained parameters.
pub fn cmd_kd_demo(config: Option<&Path>, out: &Path, seed: u64) -> Result<(KdDemoSummary, Vec<PathBuf>)> {
    let (cfg, runs) = match config {
        Some(p) => load_kd_demo(&read(p)?)?,
        None => (KdDemoConfig::default(), 10),
    };
    let mut outcomes = Vec::with_capacity(runs);
    let mut first = None;
    for k in 0..runs as u64 {
        let run = run_demo(&cfg, seed + k)?;
        outcomes.push(run.outcome.clone());
        if first.is_none() {
            first = Some(run);
        }
    }
    let first = first.expect("runs >= 1");

    let mut w = csv::Writer::from_writer(Vec::new());
    for o in &outcomes {
        w.serialize(o)?;
    }
    let table = String::from_utf8(w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?).expect("utf-8");
    let summary = KdDemoSummary::from_outcomes(&outcomes);

    #[derive(Serialize)]
    struct Students<'a> {
        hard_only: &'a crate::kd::Distilled<f64>,
        kd: &'a crate::kd::Distilled<f64>,
        simkd: &'a crate::kd::Distilled<f64>,
    }
    let files = [
        ("kd_demo.csv", table),
        ("kd_demo_summary.json", json(&summary)?),
        ("kd_config.json", json(&cfg)?),
        ("train.csv", first.train.to_csv()?),
        ("test.csv", first.test.to_csv()?),
        ("teacher.json", json(&first.teacher)?),
        ("students.json", json(&Students { hard_only: &first.hard, kd: &first.kd, simkd: &first.simkd })?),
    ];
    let mut paths = Vec::new();
    for (name, body) in files {
        let p = out.join(name);
        write_file(&p, &body)?;
        paths.push(p);
    }
    Ok((summary, paths))
}

/// Writes the accuracy table as `oracle.csv`.
pub fn cmd_dump_oracle(out: &Path, table: &AccuracyTable) -> Result<Vec<PathBuf>> {
    let p = out.join("oracle.csv");
    write_file(&p, &table.to_csv()?)?;
    Ok(vec![p])
}

#[cfg(test)]
mod tests {
    use super::*;

    const PROBLEM: &str = r#"
        [[users]]
        f_loc = 1.5
        d = 20.0
        [[users]]
        f_loc = 0.7
        d = 70.0
        [decision]
        local = [true, false]
        model = [1, 2]
        [q]
        episodes = 500
    "#;

    #[test]
    fn allocate_and_train_write_files() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("p.toml");
        std::fs::write(&cfg, PROBLEM).unwrap();
        let table = AccuracyTable::builtin();
        let files = cmd_allocate(&cfg, dir.path(), &table).unwrap();
        let out: AllocationOutput = serde_json::from_str(&std::fs::read_to_string(&files[0]).unwrap()).unwrap();
        assert_eq!(out.model, vec!["ResNet-8x4", "ResNet-14x4"]);
        assert!(out.kkt_residual.unwrap() < 1e-8);
        let files = cmd_train_q(&cfg, &dir.path().join("q"), 3, Some(200), &table).unwrap();
        assert!(std::fs::read_to_string(&files[0]).unwrap().starts_with("state,action,value,visits"));
    }

    #[test]
    fn kd_demo_config_overrides() {
        let (cfg, runs) = load_kd_demo("runs = 2\nstudent_epochs = 10\n[blobs]\nclasses = 4\nfeatures = 3\ncenter_scale = 1.0\nspread = 0.5\n").unwrap();
        assert_eq!(runs, 2);
        assert_eq!(cfg.student_epochs, 10);
        assert_eq!(cfg.blobs.features, 3);
        let err = load_kd_demo("student_epoch = 10\n").unwrap_err().to_string();
        assert!(err.contains("student_epoch"), "{err}");
    }
}
