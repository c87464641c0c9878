use kdfl_core::allocator::allocate;
use kdfl_core::model::{Decision, Scenario, UserSpec};
use kdfl_core::oracle::{AccuracyTable, Distribution, Method};
use kdfl_core::qlearn::{train, ActionSpace, FixedScenario, QConfig, QTable, RewardContext};
use kdfl_core::runner::{
    load_scenario, run_experiment, scenario_to_toml, DrawConfig, ExperimentConfig, QOnlyConfig, Scheme,
};
use kdfl_core::ScenarioF64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn users() -> Vec<UserSpec<f64>> {
    [(0.7, 12.0), (1.9, 48.0), (1.2, 95.0)]
        .iter()
        .enumerate()
        .map(|(id, &(f_loc, d))| UserSpec { id, f_loc, d, p: 0.1, dataset_size: 500 })
        .collect()
}

#[test]
fn scenario_toml_round_trip() {
    let sc = ScenarioF64::with_users(users());
    let text = scenario_to_toml(&sc).unwrap();
    let back: Scenario<f64> = load_scenario(&text).unwrap();
    assert_eq!(back, sc);
}

#[test]
fn omitted_channel_takes_defaults() {
    let sc: Scenario<f64> = load_scenario("[[users]]\nf_loc = 1.0\nd = 30.0\n").unwrap();
    assert_eq!(sc.channel.g0, 1e-4);
    assert_eq!(sc.channel.gamma, 2.8);
    assert_eq!(sc.users[0].p, 0.1);
    let err = load_scenario::<f64>("[[users]]\nf_loc = -1.0\nd = 30.0\n").unwrap_err().to_string();
    assert!(err.contains("f_loc"), "{err}");
}

#[test]
fn q_table_csv_round_trip() {
    let sc = ScenarioF64::with_users(users());
    let table = AccuracyTable::builtin();
    let ctx = RewardContext { table: &table, method: Method::Kd, distribution: Distribution::NonIid };
    let space = ActionSpace::for_scenario(&sc);
    let cfg = QConfig { episodes: 1500, ..QConfig::default() };
    let q = train(&mut FixedScenario(&sc), &ctx, &space, &cfg, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    let text = q.to_csv().unwrap();
    let back = QTable::<f64>::from_csv(&text, q.num_actions()).unwrap();
    assert_eq!(back.to_csv().unwrap(), text);
}

#[test]
fn dominance_on_a_draw_set() {
    let mut cfg = ExperimentConfig::default();
    cfg.experiment.methods = Scheme::ALL.to_vec();
    cfg.experiment.trials = 12;
    cfg.experiment.seed = 21;
    cfg.q.episodes = 6000;
    cfg.q_only = QOnlyConfig { levels: 4 };
    cfg.draw = Some(DrawConfig { users: 3, ..DrawConfig::default() });
    let r = run_experiment(&cfg, &AccuracyTable::builtin()).unwrap();
    let s = r.summary();
    let mean = |m: Scheme| s.methods.iter().find(|x| x.method == m).unwrap().objective_mean;
    let delay = |m: Scheme| s.methods.iter().find(|x| x.method == m).unwrap().avg_delay_s_mean;
    assert!(mean(Scheme::Exhaustive) <= mean(Scheme::Proposed) + 1e-12);
    assert!(mean(Scheme::Proposed) <= mean(Scheme::FlMin));
    assert!(mean(Scheme::Proposed) <= mean(Scheme::FlMax));
    assert!(delay(Scheme::FlMax) >= delay(Scheme::FlMin));
    for t in 0..12 {
        let of = |m| r.records_of(m).find(|x| x.trial == t).unwrap();
        assert!(of(Scheme::Exhaustive).objective <= of(Scheme::Proposed).objective + 1e-12);
        assert!(of(Scheme::Exhaustive).objective <= of(Scheme::QOnly).objective + 1e-12);
    }
}

#[test]
fn allocation_respects_budgets_for_every_decision() {
    let sc = ScenarioF64::with_users(users());
    let space = ActionSpace::for_scenario(&sc);
    for a in 0..space.checked_len(1_000_000).unwrap() {
        let dec: Decision = space.decode(kdfl_core::qlearn::ActionKey(a as u64));
        let al = allocate(&sc, &dec).unwrap().allocation;
        al.validate(&sc.server).unwrap();
        assert!(al.f.iter().sum::<f64>() <= sc.server.f_ser * (1.0 + 1e-12));
        assert!(al.b.iter().sum::<f64>() <= sc.server.b_max * (1.0 + 1e-12));
    }
}
