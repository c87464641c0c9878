//! Tabular Q-learning over the joint discrete decision of all users.
//!
//! Each episode is a single decision: the agent observes the quantised user
//! state, picks an offloading flag and a catalog model for every user, the
//! allocator prices that choice with optimal resources, and the negated
//! objective is the reward. The successor state is terminal.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::allocator::{allocate, AllocResult};
use crate::error::{Error, Result};
use crate::model::{objective, Decision, Scenario};
use crate::oracle::{AccuracyTable, Distribution, Method};
use crate::scalar::Scalar;

/// Default refusal threshold for enumerating an action space.
pub const DEFAULT_ACTION_CAP: u64 = 1_000_000;

/// `epsilon(e) = max(floor, initial * decay^e)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpsilonSchedule<T> {
    pub initial: T,
    pub decay: T,
    pub floor: T,
}

impl<T: Scalar> Default for EpsilonSchedule<T> {
    fn default() -> Self {
        Self {
            initial: T::one(),
            decay: T::lit(0.999),
            floor: T::lit(0.05),
        }
    }
}

impl<T: Scalar> EpsilonSchedule<T> {
    pub fn constant(epsilon: T) -> Self {
        Self {
            initial: epsilon,
            decay: T::one(),
            floor: epsilon,
        }
    }

    pub fn at(&self, episode: usize) -> T {
        let decayed = self.initial * self.decay.powf(T::from_usize_lossy(episode));
        decayed.max(self.floor)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QConfig<T> {
    /// Learning rate in `(0, 1]`.
    pub lr: T,
    /// Discount in `[0, 1)`; inert for terminal successors.
    pub discount: T,
    pub epsilon: EpsilonSchedule<T>,
    pub episodes: usize,
    pub f_loc_bins: usize,
    pub h_bins: usize,
    /// Quantisation range of the local CPU frequency (GHz).
    pub f_loc_range: (T, T),
    /// Distances (m) whose gains bound the channel quantisation range.
    pub distance_range: (T, T),
    /// Reward assigned to infeasible decisions.
    pub penalty: T,
    pub action_cap: u64,
}

impl<T: Scalar> Default for QConfig<T> {
    fn default() -> Self {
        Self {
            lr: T::one(),
            discount: T::lit(0.9),
            epsilon: EpsilonSchedule::default(),
            episodes: 5000,
            f_loc_bins: 4,
            h_bins: 4,
            f_loc_range: (T::lit(0.5), T::lit(2.0)),
            distance_range: (T::lit(10.0), T::lit(100.0)),
            penalty: T::lit(-1e6),
            action_cap: DEFAULT_ACTION_CAP,
        }
    }
}

impl<T: Scalar> QConfig<T> {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: T| v >= T::zero() && v <= T::one();
        if !(self.lr > T::zero() && self.lr <= T::one()) {
            return Err(Error::Invariant(format!("q.lr must lie in (0, 1] (got {})", self.lr)));
        }
        if !(self.discount >= T::zero() && self.discount < T::one()) {
            return Err(Error::Invariant(format!("q.discount must lie in [0, 1) (got {})", self.discount)));
        }
        let e = &self.epsilon;
        if !(unit(e.initial) && unit(e.decay) && unit(e.floor)) {
            return Err(Error::Invariant("q.epsilon values must lie in [0, 1]".into()));
        }
        if self.f_loc_bins == 0 || self.h_bins == 0 {
            return Err(Error::Invariant("q state bins must be >= 1".into()));
        }
        let ordered = |(lo, hi): (T, T)| lo > T::zero() && hi > lo;
        if !ordered(self.f_loc_range) || !ordered(self.distance_range) {
            return Err(Error::Invariant("q quantisation ranges must satisfy 0 < lo < hi".into()));
        }
        if !self.penalty.is_finite() {
            return Err(Error::Invariant("q.penalty must be finite".into()));
        }
        Ok(())
    }
}

/// Quantised `(f_loc bin, channel bin)` of every user.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StateKey(pub Vec<(u16, u16)>);

impl fmt::Display for StateKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (a, b)) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(";")?;
            }
            write!(f, "{a}.{b}")?;
        }
        Ok(())
    }
}

impl FromStr for StateKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.is_empty() {
            return Ok(StateKey(Vec::new()));
        }
        s.split(';')
            .map(|part| {
                let (a, b) = part
                    .split_once('.')
                    .ok_or_else(|| Error::config("state", format!("malformed state component `{part}`")))?;
                let parse = |v: &str| v.parse::<u16>().map_err(|e| Error::config("state", e.to_string()));
                Ok((parse(a)?, parse(b)?))
            })
            .collect::<Result<_>>()
            .map(StateKey)
    }
}

/// Packed joint action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ActionKey(pub u64);

/// Bijection between decisions and action indices.
///
/// In joint mode each user contributes the digit `x_i * |M| + m_i` in base
/// `2|M|`, user 0 least significant. With a fixed model only the offloading
/// flags are searched and each user contributes one bit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActionSpace {
    pub users: usize,
    pub models: usize,
    pub fixed_model: Option<usize>,
}

impl ActionSpace {
    pub fn joint(users: usize, models: usize) -> Self {
        Self {
            users,
            models,
            fixed_model: None,
        }
    }

    pub fn offload_only(users: usize, models: usize, model: usize) -> Self {
        Self {
            users,
            models,
            fixed_model: Some(model),
        }
    }

    pub fn for_scenario<T>(sc: &Scenario<T>) -> Self {
        Self::joint(sc.users.len(), sc.catalog.len())
    }

    fn radix(&self) -> u128 {
        match self.fixed_model {
            Some(_) => 2,
            None => 2 * self.models as u128,
        }
    }

    /// Number of actions, saturating at `u128::MAX`.
    pub fn size(&self) -> u128 {
        let radix = self.radix();
        (0..self.users).try_fold(1u128, |acc, _| acc.checked_mul(radix)).unwrap_or(u128::MAX)
    }

    /// Action count as a `usize`, or a refusal past `cap`.
    pub fn checked_len(&self, cap: u64) -> Result<usize> {
        let size = self.size();
        if size > cap as u128 {
            return Err(Error::ActionSpaceTooLarge {
                size,
                cap,
                hint: "reduce the number of users or catalog models".into(),
            });
        }
        Ok(size as usize)
    }

    pub fn decode(&self, a: ActionKey) -> Decision {
        let radix = self.radix() as u64;
        let mut rest = a.0;
        let mut dec = Decision {
            x: Vec::with_capacity(self.users),
            m: Vec::with_capacity(self.users),
        };
        for _ in 0..self.users {
            let digit = rest % radix;
            rest /= radix;
            match self.fixed_model {
                Some(model) => {
                    dec.x.push(digit == 1);
                    dec.m.push(model);
                }
                None => {
                    dec.x.push(digit >= self.models as u64);
                    dec.m.push((digit % self.models as u64) as usize);
                }
            }
        }
        dec
    }

    pub fn encode(&self, dec: &Decision) -> Result<ActionKey> {
        if dec.x.len() != self.users || dec.m.len() != self.users {
            return Err(Error::Contract("decision length does not match the action space".into()));
        }
        let radix = self.radix() as u64;
        let mut key = 0u64;
        for i in (0..self.users).rev() {
            let digit = match self.fixed_model {
                Some(model) if dec.m[i] != model => {
                    return Err(Error::Contract(format!("user {i} must use model {model}")));
                }
                Some(_) => dec.x[i] as u64,
                None if dec.m[i] >= self.models => {
                    return Err(Error::Contract(format!("model index {} out of range", dec.m[i])));
                }
                None => dec.x[i] as u64 * self.models as u64 + dec.m[i] as u64,
            };
            key = key * radix + digit;
        }
        Ok(ActionKey(key))
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Row<T> {
    values: Vec<T>,
    visits: Vec<u64>,
    /// Lowest-index maximiser of `values`.
    best: usize,
}

impl<T: Scalar> Row<T> {
    fn new(actions: usize) -> Self {
        Self {
            values: vec![T::zero(); actions],
            visits: vec![0; actions],
            best: 0,
        }
    }

    fn set(&mut self, a: usize, v: T) {
        let old = self.values[a];
        self.values[a] = v;
        if a == self.best {
            if v < old {
                self.best = argmax(&self.values);
            }
        } else {
            let incumbent = self.values[self.best];
            if v > incumbent || (v == incumbent && a < self.best) {
                self.best = a;
            }
        }
    }
}

fn argmax<T: Scalar>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Sparse-by-state Q-table; unseen entries read as zero.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable<T> {
    actions: usize,
    rows: BTreeMap<StateKey, Row<T>>,
}

/// One line of the flat Q-table file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QRecord {
    pub state: String,
    pub action: u64,
    pub value: String,
    pub visits: u64,
}

impl<T: Scalar> QTable<T> {
    pub fn new(actions: usize) -> Self {
        Self {
            actions,
            rows: BTreeMap::new(),
        }
    }

    pub fn num_actions(&self) -> usize {
        self.actions
    }

    pub fn get(&self, s: &StateKey, a: ActionKey) -> T {
        self.rows.get(s).map_or(T::zero(), |r| r.values[a.0 as usize])
    }

    pub fn visits(&self, s: &StateKey, a: ActionKey) -> u64 {
        self.rows.get(s).map_or(0, |r| r.visits[a.0 as usize])
    }

    /// Greedy action with lowest-index tie-breaking.
    pub fn best_action(&self, s: &StateKey) -> ActionKey {
        ActionKey(self.rows.get(s).map_or(0, |r| r.best) as u64)
    }

    pub fn max_value(&self, s: &StateKey) -> T {
        self.rows.get(s).map_or(T::zero(), |r| r.values[r.best])
    }

    /// Number of visited `(state, action)` pairs.
    pub fn len(&self) -> usize {
        self.rows.values().map(|r| r.visits.iter().filter(|v| **v > 0).count()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn states(&self) -> impl Iterator<Item = &StateKey> {
        self.rows.keys()
    }

    fn row_mut(&mut self, s: &StateKey) -> &mut Row<T> {
        let actions = self.actions;
        self.rows.entry(s.clone()).or_insert_with(|| Row::new(actions))
    }

    /// Visited entries ordered by state then action.
    pub fn records(&self) -> Vec<QRecord> {
        let mut out = Vec::new();
        for (s, row) in &self.rows {
            let state = s.to_string();
            for (a, (v, n)) in row.values.iter().zip(&row.visits).enumerate() {
                if *n > 0 {
                    out.push(QRecord {
                        state: state.clone(),
                        action: a as u64,
                        value: v.to_string(),
                        visits: *n,
                    });
                }
            }
        }
        out
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        // header is written even for an empty table
        w.write_record(["state", "action", "value", "visits"])?;
        for r in self.records() {
            w.write_record([r.state, r.action.to_string(), r.value, r.visits.to_string()])?;
        }
        let bytes = w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Restores a table written by [`QTable::to_csv`] for warm starts.
    pub fn from_csv(text: &str, actions: usize) -> Result<Self> {
        let mut table = Self::new(actions);
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        for rec in reader.deserialize::<QRecord>() {
            let rec = rec?;
            let s: StateKey = rec.state.parse()?;
            let a = rec.action as usize;
            if a >= actions {
                return Err(Error::config("action", format!("action {a} outside the {actions}-action space")));
            }
            let v: T = rec
                .value
                .parse()
                .map_err(|_| Error::config("value", format!("not a number: `{}`", rec.value)))?;
            if !v.is_finite() {
                return Err(Error::Invariant("Q-values must be finite".into()));
            }
            let row = table.row_mut(&s);
            row.set(a, v);
            row.visits[a] = rec.visits;
        }
        Ok(table)
    }
}

fn bin_index<T: Scalar>(value: T, lo: T, hi: T, bins: usize, what: &str) -> u16 {
    let top = bins - 1;
    if value < lo || value > hi {
        log::warn!("{what} = {value} outside [{lo}, {hi}]; clamped to boundary bin");
    }
    let scaled = (value - lo) / (hi - lo) * T::from_usize_lossy(bins);
    let idx = scaled.floor().to_i64().unwrap_or(0).clamp(0, top as i64);
    idx as u16
}

/// Uniform quantisation of each user's local CPU and log channel gain.
pub fn encode_state<T: Scalar>(sc: &Scenario<T>, cfg: &QConfig<T>) -> Result<StateKey> {
    let (f_lo, f_hi) = cfg.f_loc_range;
    let (d_lo, d_hi) = cfg.distance_range;
    let ch = &sc.channel;
    // log-gain is affine in log-distance; the far edge has the lowest gain
    let g_lo = ch.g0.ln() - ch.gamma * d_hi.ln();
    let g_hi = ch.g0.ln() - ch.gamma * d_lo.ln();
    sc.users
        .iter()
        .map(|u| {
            let g = crate::model::channel_gain(u.d, ch)?.ln();
            Ok((
                bin_index(u.f_loc, f_lo, f_hi, cfg.f_loc_bins, "f_loc"),
                bin_index(g, g_lo, g_hi, cfg.h_bins, "log channel gain"),
            ))
        })
        .collect::<Result<_>>()
        .map(StateKey)
}

/// Epsilon-greedy choice: uniform with probability `epsilon`, otherwise the
/// lowest-index maximiser.
pub fn select_action<T: Scalar, R: Rng + ?Sized>(q: &QTable<T>, s: &StateKey, epsilon: T, rng: &mut R) -> ActionKey {
    if epsilon > T::zero() && rng.random::<f64>() < epsilon.as_f64() {
        ActionKey(rng.random_range(0..q.actions) as u64)
    } else {
        q.best_action(s)
    }
}

/// One temporal-difference step. `next == None` marks a terminal successor.
/// Returns the updated value.
pub fn update<T: Scalar>(
    q: &mut QTable<T>,
    s: &StateKey,
    a: ActionKey,
    r: T,
    next: Option<&StateKey>,
    cfg: &QConfig<T>,
) -> T {
    debug_assert!(r.is_finite(), "non-finite reward");
    let bootstrap = next.map_or(T::zero(), |n| cfg.discount * q.max_value(n));
    let row = q.row_mut(s);
    let idx = a.0 as usize;
    let old = row.values[idx];
    let new = old + cfg.lr * (r + bootstrap - old);
    row.set(idx, new);
    row.visits[idx] += 1;
    new
}

/// Where accuracies come from when pricing a decision.
#[derive(Debug, Clone, Copy)]
pub struct RewardContext<'a> {
    pub table: &'a AccuracyTable,
    pub method: Method,
    pub distribution: Distribution,
}

/// Per-user `(own, average)` accuracy fractions of a decision.
pub fn accuracies<T: Scalar>(sc: &Scenario<T>, dec: &Decision, ctx: &RewardContext<'_>) -> Result<(Vec<T>, Vec<T>)> {
    dec.validate(sc)?;
    let mut own = Vec::with_capacity(dec.m.len());
    let mut avg = Vec::with_capacity(dec.m.len());
    for &mi in &dec.m {
        let (o, a) = ctx.table.acc_pair(&sc.catalog[mi].name, ctx.method, ctx.distribution)?;
        own.push(T::lit(o));
        avg.push(T::lit(a));
    }
    Ok((own, avg))
}

/// Objective of a decision under its optimal allocation.
pub fn decision_value<T: Scalar>(
    sc: &Scenario<T>,
    dec: &Decision,
    ctx: &RewardContext<'_>,
) -> Result<(T, AllocResult<T>)> {
    let alloc = allocate(sc, dec)?;
    let (own, avg) = accuracies(sc, dec, ctx)?;
    let value = objective(sc, dec, &alloc.allocation, &own, &avg)?;
    Ok((value, alloc))
}

/// Negated objective of action `a`, or `penalty` when it cannot be priced.
pub fn reward<T: Scalar>(sc: &Scenario<T>, ctx: &RewardContext<'_>, space: &ActionSpace, a: ActionKey, penalty: T) -> T {
    match decision_value(sc, &space.decode(a), ctx) {
        Ok((value, _)) if value.is_finite() => -value,
        Ok(_) => penalty,
        Err(e) => {
            log::debug!("action {} infeasible: {e}", a.0);
            penalty
        }
    }
}

/// Source of training scenarios.
pub trait ScenarioSampler<T> {
    fn sample(&mut self, rng: &mut dyn rand::RngCore) -> &Scenario<T>;

    /// True when every sample is the same scenario, which lets the trainer
    /// memoise rewards per action.
    fn is_fixed(&self) -> bool {
        false
    }
}

pub struct FixedScenario<'a, T>(pub &'a Scenario<T>);

impl<T> ScenarioSampler<T> for FixedScenario<'_, T> {
    fn sample(&mut self, _rng: &mut dyn rand::RngCore) -> &Scenario<T> {
        self.0
    }

    fn is_fixed(&self) -> bool {
        true
    }
}

/// Draws a fresh scenario per episode from a closure.
pub struct DrawnScenarios<T, F> {
    draw: F,
    current: Option<Scenario<T>>,
}

impl<T, F> DrawnScenarios<T, F>
where
    F: FnMut(&mut dyn rand::RngCore) -> Scenario<T>,
{
    pub fn new(draw: F) -> Self {
        Self { draw, current: None }
    }
}

impl<T, F> ScenarioSampler<T> for DrawnScenarios<T, F>
where
    F: FnMut(&mut dyn rand::RngCore) -> Scenario<T>,
{
    fn sample(&mut self, rng: &mut dyn rand::RngCore) -> &Scenario<T> {
        self.current.insert((self.draw)(rng))
    }
}

/// Runs `cfg.episodes` one-step episodes and returns the learned table.
pub fn train<T: Scalar, S: ScenarioSampler<T> + ?Sized, R: rand::RngCore>(
    sampler: &mut S,
    ctx: &RewardContext<'_>,
    space: &ActionSpace,
    cfg: &QConfig<T>,
    rng: &mut R,
) -> Result<QTable<T>> {
    cfg.validate()?;
    let actions = space.checked_len(cfg.action_cap)?;
    let mut q = QTable::new(actions);
    let mut cache: Vec<Option<T>> = if sampler.is_fixed() {
        vec![None; actions]
    } else {
        Vec::new()
    };
    for episode in 0..cfg.episodes {
        let epsilon = cfg.epsilon.at(episode);
        let sc = sampler.sample(rng);
        let s = encode_state(sc, cfg)?;
        let a = select_action(&q, &s, epsilon, rng);
        let r = if cache.is_empty() {
            reward(sc, ctx, space, a, cfg.penalty)
        } else {
            *cache[a.0 as usize].get_or_insert_with(|| reward(sc, ctx, space, a, cfg.penalty))
        };
        update(&mut q, &s, a, r, None, cfg);
    }
    Ok(q)
}

/// Greedy decision for the scenario's state.
pub fn greedy_decision<T: Scalar>(q: &QTable<T>, sc: &Scenario<T>, space: &ActionSpace, cfg: &QConfig<T>) -> Result<Decision> {
    let s = encode_state(sc, cfg)?;
    Ok(space.decode(q.best_action(&s)))
}

/// Minimises the objective over every action of `space`. Ties keep the
/// lowest action index.
pub fn exhaustive_optimum<T: Scalar>(
    sc: &Scenario<T>,
    ctx: &RewardContext<'_>,
    space: &ActionSpace,
    cap: u64,
) -> Result<(Decision, T)> {
    let actions = space.checked_len(cap)?;
    let mut best: Option<(Decision, T)> = None;
    for a in 0..actions {
        let dec = space.decode(ActionKey(a as u64));
        match decision_value(sc, &dec, ctx) {
            Ok((v, _)) if v.is_finite() => {
                if best.as_ref().is_none_or(|(_, b)| v < *b) {
                    best = Some((dec, v));
                }
            }
            Ok(_) => {}
            Err(e) => log::debug!("action {a} skipped: {e}"),
        }
    }
    best.ok_or_else(|| Error::Degenerate("no feasible decision in the action space".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ObjectiveWeights, UserSpec};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn user(id: usize, f_loc: f64, d: f64) -> UserSpec<f64> {
        UserSpec { id, f_loc, d, p: 0.1, dataset_size: 100 }
    }

    fn small_scenario() -> Scenario<f64> {
        let mut sc = Scenario::with_users(vec![user(0, 0.7, 25.0), user(1, 1.8, 80.0)]);
        sc.catalog.truncate(2);
        sc
    }

    fn ctx(table: &AccuracyTable) -> RewardContext<'_> {
        RewardContext { table, method: Method::Kd, distribution: Distribution::NonIid }
    }

    #[test]
    fn action_codec_is_bijective() {
        let space = ActionSpace::joint(3, 4);
        assert_eq!(space.size(), 512);
        for a in 0..512 {
            let dec = space.decode(ActionKey(a));
            assert_eq!(space.encode(&dec).unwrap(), ActionKey(a));
        }
        let fixed = ActionSpace::offload_only(4, 4, 3);
        assert_eq!(fixed.size(), 16);
        let dec = fixed.decode(ActionKey(0b0101));
        assert_eq!(dec.x, vec![true, false, true, false]);
        assert_eq!(dec.m, vec![3; 4]);
        assert_eq!(fixed.encode(&dec).unwrap(), ActionKey(5));
        assert!(ActionSpace::joint(30, 4).checked_len(DEFAULT_ACTION_CAP).is_err());
    }

    #[test]
    fn state_encoding_examples() {
        let mut cfg = QConfig::<f64> { f_loc_bins: 1, h_bins: 1, ..QConfig::default() };
        let a = Scenario::with_users(vec![user(0, 0.6, 12.0)]);
        let b = Scenario::with_users(vec![user(0, 1.9, 95.0)]);
        assert_eq!(encode_state(&a, &cfg).unwrap(), encode_state(&b, &cfg).unwrap());

        cfg.f_loc_bins = 2;
        let mid = Scenario::with_users(vec![user(0, 1.25, 50.0)]);
        assert_eq!(encode_state(&mid, &cfg).unwrap().0[0].0, 1);

        let cfg = QConfig::<f64>::default();
        let near = Scenario::with_users(vec![user(0, 1.0, 40.0)]);
        let nudged = Scenario::with_users(vec![user(0, 1.0 + 1e-9, 40.0 + 1e-9)]);
        assert_eq!(encode_state(&near, &cfg).unwrap(), encode_state(&nudged, &cfg).unwrap());
        // close users get the best channel bin, far users the worst
        let near = Scenario::with_users(vec![user(0, 1.0, 10.0), user(1, 1.0, 100.0), user(2, 9.0, 500.0)]);
        let key = encode_state(&near, &cfg).unwrap();
        assert_eq!(key.0, vec![(1, 3), (1, 0), (3, 0)]);
        assert_eq!(key.to_string().parse::<StateKey>().unwrap(), key);
    }

    #[test]
    fn greedy_selection_and_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut q = QTable::<f64>::new(8);
        let s = StateKey(vec![(0, 0)]);
        assert_eq!(select_action(&q, &s, 0.0, &mut rng), ActionKey(0));
        let cfg = QConfig { lr: 1.0, ..QConfig::default() };
        update(&mut q, &s, ActionKey(5), 2.0, None, &cfg);
        update(&mut q, &s, ActionKey(3), 1.0, None, &cfg);
        for _ in 0..100 {
            assert_eq!(select_action(&q, &s, 0.0, &mut rng), ActionKey(5));
        }
        update(&mut q, &s, ActionKey(2), 2.0, None, &cfg);
        assert_eq!(q.best_action(&s), ActionKey(2));
        // lowering the incumbent falls back to the next best
        update(&mut q, &s, ActionKey(2), -1.0, None, &cfg);
        assert_eq!(q.best_action(&s), ActionKey(5));
        update(&mut q, &s, ActionKey(5), -3.0, None, &cfg);
        assert_eq!(q.best_action(&s), ActionKey(3));
        update(&mut q, &s, ActionKey(3), -2.0, None, &cfg);
        // untouched zero entries now win, lowest index first
        assert_eq!(q.best_action(&s), ActionKey(0));
    }

    #[test]
    fn uniform_exploration() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let q = QTable::<f64>::new(16);
        let s = StateKey(vec![]);
        let draws = 100_000;
        let mut counts = [0usize; 16];
        for _ in 0..draws {
            counts[select_action(&q, &s, 1.0, &mut rng).0 as usize] += 1;
        }
        let p = 1.0 / 16.0;
        let mean = draws as f64 * p;
        let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - mean).abs() < 3.0 * sigma, "{counts:?}");
        }
    }

    #[test]
    fn update_examples() {
        let s = StateKey(vec![(0, 0)]);
        let t = StateKey(vec![(1, 1)]);
        let mut q = QTable::<f64>::new(4);
        let full = QConfig { lr: 1.0, discount: 0.0, ..QConfig::default() };
        update(&mut q, &s, ActionKey(1), 7.0, None, &full);
        assert_eq!(update(&mut q, &s, ActionKey(1), -3.5, Some(&t), &full), -3.5);

        let half = QConfig { lr: 0.5, ..QConfig::default() };
        assert_eq!(update(&mut q, &s, ActionKey(0), 1.0, None, &half), 0.5);

        let mut q = QTable::<f64>::new(4);
        let cfg = QConfig { lr: 0.1, discount: 0.9, ..QConfig::default() };
        update(&mut q, &t, ActionKey(2), 2.0, None, &QConfig { lr: 1.0, ..cfg.clone() });
        let v = update(&mut q, &s, ActionKey(0), 1.0, Some(&t), &cfg);
        assert!((v - 0.28).abs() < 1e-15);
        assert_eq!(q.visits(&s, ActionKey(0)), 1);
    }

    #[test]
    fn repeated_updates_converge_to_reward() {
        for lr in [0.05, 0.3, 1.0] {
            let cfg = QConfig { lr, ..QConfig::default() };
            let mut q = QTable::<f64>::new(2);
            let s = StateKey(vec![(0, 0)]);
            for _ in 0..1000 {
                update(&mut q, &s, ActionKey(1), -4.25, None, &cfg);
            }
            assert!((q.get(&s, ActionKey(1)) + 4.25).abs() < 1e-9);
        }
    }

    #[test]
    fn reward_follows_accuracy_when_only_accuracy_counts() {
        let table = AccuracyTable::builtin();
        let ctx = ctx(&table);
        let mut sc = Scenario::with_users(vec![user(0, 1.0, 50.0)]);
        let w = ObjectiveWeights { alpha_d: 1e-12, beta_c: 0.0, delta_b: 0.0, eta_o: 1.0, eta_a: 0.25 };
        sc.weights = w;
        let space = ActionSpace::for_scenario(&sc);
        let score = |m: usize| {
            let (o, a) = table.acc_pair(&sc.catalog[m].name, Method::Kd, Distribution::NonIid).unwrap();
            o + 0.25 * a
        };
        let mut order: Vec<usize> = (0..4).collect();
        order.sort_by(|a, b| score(*a).partial_cmp(&score(*b)).unwrap());
        let rewards: Vec<f64> = order
            .iter()
            .map(|m| reward(&sc, &ctx, &space, space.encode(&Decision::uniform(1, true, *m)).unwrap(), -1e6))
            .collect();
        assert!(rewards.windows(2).all(|w| w[0] < w[1]), "{rewards:?}");

        let (dec, _) = exhaustive_optimum(&sc, &ctx, &space, DEFAULT_ACTION_CAP).unwrap();
        assert_eq!(dec.m, vec![*order.last().unwrap()]);
    }

    #[test]
    fn reward_is_pure_and_penalises_infeasible_actions() {
        let table = AccuracyTable::builtin();
        let ctx = ctx(&table);
        let mut sc = small_scenario();
        let space = ActionSpace::for_scenario(&sc);
        let a = ActionKey(5);
        assert_eq!(reward(&sc, &ctx, &space, a, -1e6), reward(&sc, &ctx, &space, a, -1e6));
        sc.weights.alpha_d = 0.0;
        assert_eq!(reward(&sc, &ctx, &space, a, -1e6), -1e6);
        sc.catalog[0].name = "unknown".into();
        sc.weights.alpha_d = 0.01;
        assert_eq!(reward(&sc, &ctx, &space, ActionKey(0), -7.0), -7.0);
    }

    #[test]
    fn exhaustive_examples() {
        let table = AccuracyTable::builtin();
        let ctx = ctx(&table);
        let mut sc = Scenario::with_users(vec![user(0, 1.0, 50.0)]);
        sc.catalog.truncate(1);
        let fixed = ActionSpace::offload_only(1, 1, 0);
        let (dec, v) = exhaustive_optimum(&sc, &ctx, &fixed, DEFAULT_ACTION_CAP).unwrap();
        let direct = decision_value(&sc, &dec, &ctx).unwrap().0;
        assert_eq!(v, direct);
        let big = Scenario::with_users((0..12).map(|i| user(i, 1.0, 30.0)).collect());
        let err = exhaustive_optimum(&big, &ctx, &ActionSpace::for_scenario(&big), DEFAULT_ACTION_CAP).unwrap_err();
        assert!(err.to_string().contains("exceeds the cap"), "{err}");
    }

    #[test]
    fn zero_episodes_yield_an_empty_table() {
        let table = AccuracyTable::builtin();
        let sc = small_scenario();
        let cfg = QConfig { episodes: 0, ..QConfig::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let q = train(&mut FixedScenario(&sc), &ctx(&table), &ActionSpace::for_scenario(&sc), &cfg, &mut rng).unwrap();
        assert!(q.is_empty());
        assert_eq!(q.to_csv().unwrap(), "state,action,value,visits\n");
    }

    #[test]
    fn training_finds_the_small_optimum_deterministically() {
        let table = AccuracyTable::builtin();
        let ctx = ctx(&table);
        let sc = small_scenario();
        let space = ActionSpace::for_scenario(&sc);
        assert_eq!(space.size(), 16);
        let cfg = QConfig::default();
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            train(&mut FixedScenario(&sc), &ctx, &space, &cfg, &mut rng).unwrap()
        };
        let q = run(9);
        assert_eq!(q, run(9));
        let (best, _) = exhaustive_optimum(&sc, &ctx, &space, DEFAULT_ACTION_CAP).unwrap();
        assert_eq!(greedy_decision(&q, &sc, &space, &cfg).unwrap(), best);
        // one state visited, so the table cannot exceed one row of actions
        assert!(q.len() <= 16);
        let restored = QTable::<f64>::from_csv(&q.to_csv().unwrap(), 16).unwrap();
        assert_eq!(restored, q);
    }

    #[test]
    fn drawn_scenarios_respect_the_growth_bound() {
        let table = AccuracyTable::builtin();
        let ctx = ctx(&table);
        let base = small_scenario();
        let space = ActionSpace::for_scenario(&base);
        let mut sampler = DrawnScenarios::new(|rng: &mut dyn rand::RngCore| {
            let mut sc = base.clone();
            for u in &mut sc.users {
                u.f_loc = rand::Rng::random_range(rng, 0.5..2.0);
                u.d = rand::Rng::random_range(rng, 10.0..100.0);
            }
            sc
        });
        let cfg = QConfig { episodes: 3000, ..QConfig::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let q = train(&mut sampler, &ctx, &space, &cfg, &mut rng).unwrap();
        let states = q.states().count();
        assert!(states > 1);
        assert!(q.len() <= states * 16);
    }

    proptest! {
        #[test]
        fn epsilon_schedule_stays_in_bounds(ep in 0usize..1_000_000) {
            let e = EpsilonSchedule::<f64>::default().at(ep);
            prop_assert!((0.05..=1.0).contains(&e));
        }

        #[test]
        fn state_keys_round_trip(parts in proptest::collection::vec((0u16..64, 0u16..64), 0..6)) {
            let key = StateKey(parts);
            prop_assert_eq!(key.to_string().parse::<StateKey>().unwrap(), key);
        }
    }
}
