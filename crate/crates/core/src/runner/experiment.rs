//! Seeded trials comparing the decision schemes on shared scenario draws.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::{DrawConfig, ExperimentConfig, Scheme};
use super::qonly::train_q_only;
use super::report::{Report, TrialRecord, UserRecord};
use crate::allocator::allocate;
use crate::error::{Error, Result};
use crate::model::{objective, user_delays, Allocation, Decision, Scenario, UserSpec};
use crate::oracle::{AccuracyTable, Distribution, Method};
use crate::qlearn::{accuracies, exhaustive_optimum, greedy_decision, train, ActionSpace, FixedScenario, QConfig, RewardContext};

/// A priced decision.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub decision: Decision,
    pub allocation: Allocation<f64>,
    pub objective: f64,
    /// Per-user sum of all four delay components (s).
    pub delays: Vec<f64>,
    pub acc_own: Vec<f64>,
    pub acc_avg: Vec<f64>,
}

pub fn evaluate(
    sc: &Scenario<f64>,
    decision: Decision,
    allocation: Allocation<f64>,
    ctx: &RewardContext<'_>,
) -> Result<Evaluation> {
    let (acc_own, acc_avg) = accuracies(sc, &decision, ctx)?;
    let objective = objective(sc, &decision, &allocation, &acc_own, &acc_avg)?;
    let delays = user_delays(sc, &decision, &allocation)?.iter().map(|d| d.total()).collect();
    Ok(Evaluation {
        decision,
        allocation,
        objective,
        delays,
        acc_own,
        acc_avg,
    })
}

/// Users with uniformly drawn distance and local CPU.
pub fn draw_users<R: Rng + ?Sized>(cfg: &DrawConfig, rng: &mut R) -> Vec<UserSpec<f64>> {
    (0..cfg.users)
        .map(|id| {
            let d = rng.random_range(cfg.d_range.0..cfg.d_range.1);
            let f_loc = rng.random_range(cfg.f_loc_range.0..cfg.f_loc_range.1);
            UserSpec {
                id,
                f_loc,
                d,
                p: cfg.p,
                dataset_size: cfg.dataset_size,
            }
        })
        .collect()
}

/// Independent generator for `(seed, stream)`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const STREAMS_PER_TRIAL: u64 = 8;

fn scheme_stream(trial: usize, scheme: Scheme) -> u64 {
    let k = Scheme::ALL.iter().position(|s| *s == scheme).expect("listed scheme") as u64;
    trial as u64 * STREAMS_PER_TRIAL + 1 + k
}

/// Scenario of one trial: the base scenario with users redrawn when a draw
/// is configured.
pub fn trial_scenario(cfg: &ExperimentConfig, trial: usize) -> Scenario<f64> {
    let mut sc = cfg.scenario.clone();
    if let Some(draw) = &cfg.draw {
        let mut rng = stream_rng(cfg.experiment.seed, trial as u64 * STREAMS_PER_TRIAL);
        sc.users = draw_users(draw, &mut rng);
    }
    sc
}

/// Catalog index with the smallest (or largest) per-epoch cost, lowest
/// index on ties.
pub fn extreme_model(sc: &Scenario<f64>, largest: bool) -> usize {
    let mut best = 0;
    for (k, m) in sc.catalog.iter().enumerate() {
        let better = if largest { m.mu > sc.catalog[best].mu } else { m.mu < sc.catalog[best].mu };
        if better {
            best = k;
        }
    }
    best
}

/// Inputs shared by every scheme of one trial.
pub struct SchemeInputs<'a> {
    pub table: &'a AccuracyTable,
    pub distribution: Distribution,
    pub q: &'a QConfig<f64>,
    pub q_only_levels: usize,
}

/// Runs one scheme on a fixed scenario.
pub fn run_scheme(sc: &Scenario<f64>, scheme: Scheme, inputs: &SchemeInputs<'_>, rng: &mut ChaCha8Rng) -> Result<Evaluation> {
    let kd = RewardContext {
        table: inputs.table,
        method: Method::Kd,
        distribution: inputs.distribution,
    };
    let fl = RewardContext { method: Method::Fl, ..kd };
    let q = inputs.q;
    match scheme {
        Scheme::Proposed => {
            let space = ActionSpace::for_scenario(sc);
            let table = train(&mut FixedScenario(sc), &kd, &space, q, rng)?;
            let dec = greedy_decision(&table, sc, &space, q)?;
            let alloc = allocate(sc, &dec)?;
            evaluate(sc, dec, alloc.allocation, &kd)
        }
        Scheme::QOnly => {
            let (dec, al) = train_q_only(sc, &kd, q, inputs.q_only_levels, rng)?;
            evaluate(sc, dec, al, &kd)
        }
        Scheme::FlMin | Scheme::FlMax => {
            let model = extreme_model(sc, scheme == Scheme::FlMax);
            let space = ActionSpace::offload_only(sc.num_users(), sc.catalog.len(), model);
            let table = train(&mut FixedScenario(sc), &fl, &space, q, rng)?;
            let dec = greedy_decision(&table, sc, &space, q)?;
            let alloc = allocate(sc, &dec)?;
            evaluate(sc, dec, alloc.allocation, &fl)
        }
        Scheme::Exhaustive => {
            let space = ActionSpace::for_scenario(sc);
            let (dec, _) = exhaustive_optimum(sc, &kd, &space, q.action_cap)?;
            let alloc = allocate(sc, &dec)?;
            evaluate(sc, dec, alloc.allocation, &kd)
        }
    }
}

/// Every configured scheme on every trial. Trials run in parallel and are
/// reported in trial order, so the report depends only on the config.
pub fn run_experiment(cfg: &ExperimentConfig, table: &AccuracyTable) -> Result<Report> {
    if cfg.experiment.trials == 0 {
        return Err(Error::config("experiment.trials", "must be >= 1"));
    }
    let inputs = SchemeInputs {
        table,
        distribution: cfg.experiment.distribution,
        q: &cfg.q,
        q_only_levels: cfg.q_only.levels,
    };
    let per_trial: Vec<Vec<TrialRecord>> = (0..cfg.experiment.trials)
        .into_par_iter()
        .map(|trial| {
            let sc = trial_scenario(cfg, trial);
            sc.validate()?;
            cfg.experiment
                .methods
                .iter()
                .map(|&scheme| {
                    let mut rng = stream_rng(cfg.experiment.seed, scheme_stream(trial, scheme));
                    let ev = run_scheme(&sc, scheme, &inputs, &mut rng)?;
                    Ok(TrialRecord::new(trial, scheme, &sc, &ev))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    Ok(Report {
        models: cfg.scenario.catalog.iter().map(|m| m.name.clone()).collect(),
        records: per_trial.into_iter().flatten().collect(),
    })
}

/// Per-user rows of an evaluation.
pub fn user_records(ev: &Evaluation) -> Vec<UserRecord> {
    (0..ev.decision.x.len())
        .map(|i| UserRecord {
            user: i,
            local: ev.decision.x[i],
            model: ev.decision.m[i],
            f: ev.allocation.f[i],
            b: ev.allocation.b[i],
            delay_s: ev.delays[i],
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runner::config::QOnlyConfig;

    fn small_config(methods: Vec<Scheme>) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.experiment.methods = methods;
        cfg.experiment.trials = 4;
        cfg.experiment.seed = 11;
        cfg.q.episodes = 3000;
        cfg.draw = Some(DrawConfig { users: 2, ..DrawConfig::default() });
        cfg.q_only = QOnlyConfig { levels: 4 };
        cfg
    }

    #[test]
    fn extreme_models_of_the_default_catalog() {
        let sc = Scenario::<f64>::with_users(vec![]);
        assert_eq!(sc.catalog[extreme_model(&sc, false)].name, "VGG-8");
        assert_eq!(sc.catalog[extreme_model(&sc, true)].name, "ResNet-26x4");
    }

    #[test]
    fn trials_share_scenarios_and_are_reproducible() {
        let cfg = small_config(vec![Scheme::Proposed, Scheme::FlMax, Scheme::Exhaustive]);
        assert_eq!(trial_scenario(&cfg, 2), trial_scenario(&cfg, 2));
        assert_ne!(trial_scenario(&cfg, 1).users, trial_scenario(&cfg, 2).users);
        let table = AccuracyTable::builtin();
        let a = run_experiment(&cfg, &table).unwrap();
        assert_eq!(a, run_experiment(&cfg, &table).unwrap());
        assert_eq!(a.records.len(), 12);
        for chunk in a.records.chunks(3) {
            let (p, m, e) = (&chunk[0], &chunk[1], &chunk[2]);
            assert!(e.objective <= p.objective + 1e-12);
            assert!(e.objective <= m.objective + 1e-12);
            assert_eq!(m.frequencies[3], 1.0);
        }
    }

    #[test]
    fn fixed_users_without_draw() {
        let mut cfg = small_config(vec![Scheme::FlMin]);
        cfg.draw = None;
        cfg.scenario.users = draw_users(&DrawConfig { users: 3, ..DrawConfig::default() }, &mut stream_rng(1, 0));
        assert_eq!(trial_scenario(&cfg, 0), trial_scenario(&cfg, 3));
        let r = run_experiment(&cfg, &AccuracyTable::builtin()).unwrap();
        assert!(r.records.iter().all(|t| t.frequencies[0] == 1.0));
    }
}
