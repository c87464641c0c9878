//! Domain types and closed-form system physics: path-loss channel gain,
//! OFDM transmission rate, the four per-epoch delay components and the joint
//! objective that the optimiser minimises.
//!
//! Units are fixed crate-wide: CPU frequency in GHz, computation cost in
//! giga-cycles (so cost / frequency is seconds), payloads in megabits,
//! bandwidth in MHz and rates in Mbit/s.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Relative slack allowed when checking the two resource budgets.
pub const BUDGET_TOLERANCE: f64 = 1e-9;

fn require_positive<T: Scalar>(value: T, what: &str) -> Result<()> {
    if value > T::zero() && value.is_finite() {
        Ok(())
    } else {
        Err(Error::Invariant(format!("{what} must be > 0 and finite (got {value})")))
    }
}

/// Path-loss channel constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSpec<T> {
    /// Linear gain at the 1 m reference distance.
    pub g0: T,
    /// Path-loss exponent.
    pub gamma: T,
    /// Total noise power in watts. This is a fixed power, not a density.
    pub n0: T,
}

impl<T: Scalar> Default for ChannelSpec<T> {
    fn default() -> Self {
        Self {
            g0: T::lit(1e-4),
            gamma: T::lit(2.8),
            n0: T::lit(1e-13),
        }
    }
}

impl<T: Scalar> ChannelSpec<T> {
    pub fn validate(&self) -> Result<()> {
        require_positive(self.g0, "channel.g0")?;
        require_positive(self.gamma, "channel.gamma")?;
        require_positive(self.n0, "channel.n0")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserSpec<T> {
    pub id: usize,
    /// Local CPU frequency (GHz).
    pub f_loc: T,
    /// Distance to the server (m).
    pub d: T,
    /// Transmit power (W).
    pub p: T,
    pub dataset_size: u64,
}

impl<T: Scalar> UserSpec<T> {
    pub fn validate(&self) -> Result<()> {
        let tag = format!("users[{}]", self.id);
        require_positive(self.f_loc, &format!("{tag}.f_loc"))?;
        require_positive(self.d, &format!("{tag}.d"))?;
        require_positive(self.p, &format!("{tag}.p"))
    }
}

/// One entry of the student model catalog.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec<T> {
    pub name: String,
    /// Giga-cycles to train one epoch, i.e. seconds per epoch at 1 GHz.
    pub mu: T,
    /// Parameter payload (Mbit).
    pub theta_s: T,
}

impl<T: Scalar> ModelSpec<T> {
    pub fn new(name: impl Into<String>, mu: f64, theta_s: f64) -> Self {
        Self {
            name: name.into(),
            mu: T::lit(mu),
            theta_s: T::lit(theta_s),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TeacherSpec<T> {
    /// Giga-cycles for one epoch of teacher forward passes.
    pub mu_t: T,
    /// Teacher-output payload shipped to a locally training user (Mbit).
    pub theta_l: T,
}

impl<T: Scalar> Default for TeacherSpec<T> {
    fn default() -> Self {
        Self {
            mu_t: T::lit(10.0),
            theta_l: T::lit(20.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServerSpec<T> {
    /// Total server CPU (GHz).
    pub f_ser: T,
    /// Total bandwidth (MHz).
    pub b_max: T,
}

impl<T: Scalar> Default for ServerSpec<T> {
    fn default() -> Self {
        Self {
            f_ser: T::lit(10.0),
            b_max: T::lit(10.0),
        }
    }
}

/// Weights of the joint objective. These are not the Q-learning rates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveWeights<T> {
    /// Weight on per-epoch delay (1/s).
    pub alpha_d: T,
    /// Weight on purchased server computation.
    pub beta_c: T,
    /// Price per MHz of bandwidth.
    pub delta_b: T,
    /// Weight on accuracy on the user's own data.
    pub eta_o: T,
    /// Weight on accuracy over all users' data.
    pub eta_a: T,
}

impl<T: Scalar> Default for ObjectiveWeights<T> {
    /// Non-published defaults chosen so delay and accuracy terms have the
    /// same order of magnitude on the default scenario.
    fn default() -> Self {
        Self {
            alpha_d: T::lit(0.01),
            beta_c: T::lit(0.001),
            delta_b: T::lit(0.001),
            eta_o: T::lit(1.0),
            eta_a: T::lit(0.25),
        }
    }
}

impl<T: Scalar> ObjectiveWeights<T> {
    pub fn zero() -> Self {
        Self {
            alpha_d: T::zero(),
            beta_c: T::zero(),
            delta_b: T::zero(),
            eta_o: T::zero(),
            eta_a: T::zero(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            ("alpha_d", self.alpha_d),
            ("beta_c", self.beta_c),
            ("delta_b", self.delta_b),
            ("eta_o", self.eta_o),
            ("eta_a", self.eta_a),
        ];
        for (name, w) in all {
            if !(w >= T::zero() && w.is_finite()) {
                return Err(Error::Invariant(format!("weights.{name} must be >= 0 (got {w})")));
            }
        }
        if all.iter().all(|(_, w)| *w == T::zero()) {
            return Err(Error::Invariant("at least one objective weight must be > 0".into()));
        }
        Ok(())
    }
}

/// The four student models of the default catalog with per-epoch costs at
/// 1 GHz and placeholder parameter payloads.
pub fn default_catalog<T: Scalar>() -> Vec<ModelSpec<T>> {
    vec![
        ModelSpec::new("VGG-8", 6.83, 150.0),
        ModelSpec::new("ResNet-8x4", 8.75, 39.0),
        ModelSpec::new("ResNet-14x4", 12.27, 88.0),
        ModelSpec::new("ResNet-26x4", 18.96, 186.0),
    ]
}

/// A complete problem instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario<T> {
    pub users: Vec<UserSpec<T>>,
    pub server: ServerSpec<T>,
    pub channel: ChannelSpec<T>,
    pub catalog: Vec<ModelSpec<T>>,
    pub teacher: TeacherSpec<T>,
    pub weights: ObjectiveWeights<T>,
}

impl<T: Scalar> Scenario<T> {
    /// Scenario with the given users and every other block at its default.
    pub fn with_users(users: Vec<UserSpec<T>>) -> Self {
        Self {
            users,
            server: ServerSpec::default(),
            channel: ChannelSpec::default(),
            catalog: default_catalog(),
            teacher: TeacherSpec::default(),
            weights: ObjectiveWeights::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.users.is_empty() {
            return Err(Error::Invariant("scenario needs at least one user".into()));
        }
        if self.catalog.is_empty() {
            return Err(Error::Invariant("model catalog must not be empty".into()));
        }
        for u in &self.users {
            u.validate()?;
        }
        for (k, m) in self.catalog.iter().enumerate() {
            require_positive(m.mu, &format!("catalog[{k}].mu"))?;
            require_positive(m.theta_s, &format!("catalog[{k}].theta_s"))?;
        }
        require_positive(self.server.f_ser, "server.f_ser")?;
        require_positive(self.server.b_max, "server.b_max")?;
        require_positive(self.teacher.mu_t, "teacher.mu_t")?;
        require_positive(self.teacher.theta_l, "teacher.theta_l")?;
        self.channel.validate()?;
        self.weights.validate()
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    /// Channel gain of every user.
    pub fn gains(&self) -> Result<Vec<T>> {
        self.users.iter().map(|u| channel_gain(u.d, &self.channel)).collect()
    }

    /// `log2(1 + p h / n0)` of every user, i.e. Mbit/s per MHz.
    pub fn spectral_efficiencies(&self) -> Result<Vec<T>> {
        self.users
            .iter()
            .map(|u| Ok(spectral_efficiency(u.p, channel_gain(u.d, &self.channel)?, &self.channel)))
            .collect()
    }
}

/// Discrete per-user choices.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Decision {
    /// `true` trains the student on the user's own CPU (teacher outputs are
    /// shipped to the user); `false` trains it on the server.
    pub x: Vec<bool>,
    /// Catalog index chosen by each user.
    pub m: Vec<usize>,
}

impl Decision {
    pub fn uniform(users: usize, local: bool, model: usize) -> Self {
        Self {
            x: vec![local; users],
            m: vec![model; users],
        }
    }

    pub fn validate<T: Scalar>(&self, sc: &Scenario<T>) -> Result<()> {
        let n = sc.num_users();
        if self.x.len() != n || self.m.len() != n {
            return Err(Error::Contract(format!(
                "decision has {} offload flags and {} model choices for {n} users",
                self.x.len(),
                self.m.len()
            )));
        }
        if let Some((i, &mi)) = self.m.iter().enumerate().find(|(_, &mi)| mi >= sc.catalog.len()) {
            return Err(Error::Contract(format!(
                "user {i} selects model {mi} but the catalog has {} entries",
                sc.catalog.len()
            )));
        }
        Ok(())
    }
}

/// Continuous per-user resources.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation<T> {
    /// Server CPU share (GHz).
    pub f: Vec<T>,
    /// Bandwidth (MHz).
    pub b: Vec<T>,
}

impl<T: Scalar> Allocation<T> {
    pub fn equal_split(users: usize, server: &ServerSpec<T>) -> Self {
        let n = T::from_usize_lossy(users);
        Self {
            f: vec![server.f_ser / n; users],
            b: vec![server.b_max / n; users],
        }
    }

    pub fn validate(&self, server: &ServerSpec<T>) -> Result<()> {
        if self.f.len() != self.b.len() {
            return Err(Error::Contract("allocation f and b lengths differ".into()));
        }
        if self.f.iter().chain(&self.b).any(|v| !(*v > T::zero())) {
            return Err(Error::Invariant("every allocated resource must be > 0".into()));
        }
        let slack = T::one() + T::lit(BUDGET_TOLERANCE);
        let fsum: T = self.f.iter().copied().sum();
        let bsum: T = self.b.iter().copied().sum();
        if fsum > server.f_ser * slack {
            return Err(Error::Invariant(format!("CPU budget exceeded: {fsum} > {}", server.f_ser)));
        }
        if bsum > server.b_max * slack {
            return Err(Error::Invariant(format!("bandwidth budget exceeded: {bsum} > {}", server.b_max)));
        }
        Ok(())
    }
}

/// Per-epoch delay components of one user (seconds).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayBreakdown<T> {
    pub t_tea: T,
    pub t_stu: T,
    pub t_label: T,
    pub t_model: T,
}

impl<T: Scalar> DelayBreakdown<T> {
    /// Sum of all four components. `t_label` is already zero for server-side
    /// training, so this equals the delay term of the objective.
    pub fn total(&self) -> T {
        self.t_tea + self.t_stu + self.t_label + self.t_model
    }
}

/// `g0 / d^gamma`.
pub fn channel_gain<T: Scalar>(d: T, ch: &ChannelSpec<T>) -> Result<T> {
    if !(d > T::zero()) || !d.is_finite() {
        return Err(Error::Domain(format!("distance must be > 0 (got {d})")));
    }
    Ok(ch.g0 / d.powf(ch.gamma))
}

/// `log2(1 + p h / n0)`.
pub fn spectral_efficiency<T: Scalar>(p: T, h: T, ch: &ChannelSpec<T>) -> T {
    (p * h / ch.n0).ln_1p() / T::lit(std::f64::consts::LN_2)
}

/// Shannon rate `b log2(1 + p h / n0)` in Mbit/s for `b` in MHz.
pub fn tx_rate<T: Scalar>(b: T, p: T, h: T, ch: &ChannelSpec<T>) -> T {
    b * spectral_efficiency(p, h, ch)
}

/// Delay components for one user.
///
/// With `local == false` the user's own CPU is never consulted; with
/// `local == true` the server share only prices the teacher pass.
pub fn delays<T: Scalar>(
    user: &UserSpec<T>,
    model: &ModelSpec<T>,
    teacher: &TeacherSpec<T>,
    local: bool,
    f_share: T,
    rate: T,
) -> Result<DelayBreakdown<T>> {
    if !(f_share > T::zero()) {
        return Err(Error::Domain(format!("server CPU share must be > 0 (got {f_share})")));
    }
    if !(rate > T::zero()) {
        return Err(Error::InfiniteDelay(format!(
            "user {} has transmission rate {rate}",
            user.id
        )));
    }
    let t_stu = if local {
        model.mu / user.f_loc
    } else {
        model.mu / f_share
    };
    Ok(DelayBreakdown {
        t_tea: teacher.mu_t / f_share,
        t_stu,
        t_label: if local { teacher.theta_l / rate } else { T::zero() },
        t_model: model.theta_s / rate,
    })
}

/// Delay breakdown of every user under a decision and allocation.
pub fn user_delays<T: Scalar>(
    sc: &Scenario<T>,
    dec: &Decision,
    al: &Allocation<T>,
) -> Result<Vec<DelayBreakdown<T>>> {
    dec.validate(sc)?;
    let n = sc.num_users();
    if al.f.len() != n || al.b.len() != n {
        return Err(Error::Contract(format!(
            "allocation covers {} / {} users, scenario has {n}",
            al.f.len(),
            al.b.len()
        )));
    }
    sc.users
        .iter()
        .enumerate()
        .map(|(i, u)| {
            let h = channel_gain(u.d, &sc.channel)?;
            let rate = tx_rate(al.b[i], u.p, h, &sc.channel);
            delays(u, &sc.catalog[dec.m[i]], &sc.teacher, dec.x[i], al.f[i], rate)
        })
        .collect()
}

/// The joint objective: weighted delay, purchased computation and bandwidth,
/// minus weighted own and average accuracy (fractions in `[0, 1]`).
pub fn objective<T: Scalar>(
    sc: &Scenario<T>,
    dec: &Decision,
    al: &Allocation<T>,
    acc_own: &[T],
    acc_avg: &[T],
) -> Result<T> {
    let n = sc.num_users();
    if acc_own.len() != n || acc_avg.len() != n {
        return Err(Error::Contract(format!(
            "accuracy lists have {} / {} entries for {n} users",
            acc_own.len(),
            acc_avg.len()
        )));
    }
    let w = &sc.weights;
    let breakdown = user_delays(sc, dec, al)?;
    let mut total = T::zero();
    for (i, dl) in breakdown.iter().enumerate() {
        let server_training = if dec.x[i] { T::zero() } else { dl.t_stu * al.f[i] };
        total += w.alpha_d * dl.total()
            + w.beta_c * (dl.t_tea * al.f[i] + server_training)
            + w.delta_b * al.b[i]
            - w.eta_o * acc_own[i]
            - w.eta_a * acc_avg[i];
    }
    Ok(total)
}
