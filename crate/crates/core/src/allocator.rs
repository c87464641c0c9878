//! Optimal server CPU and bandwidth for a fixed discrete decision.
//!
//! With the decision fixed, the resource-dependent part of the objective is
//!
//! ```text
//! sum_i c_i / f_i  +  sum_i (d_i / b_i + delta_b * b_i)
//! s.t. sum_i f_i <= f_ser,  sum_i b_i <= b_max
//! ```
//!
//! which separates into two convex problems. Stationarity gives
//! `f_i = sqrt(c_i / nu)` and `b_i = sqrt(d_i / (delta_b + lambda))`. The CPU
//! budget always binds, so `sqrt(nu) = sum_j sqrt(c_j) / f_ser`. The bandwidth
//! multiplier is zero when the unconstrained optimum fits the budget and
//! otherwise solves `sum_i b_i(lambda) = b_max`, which also has a closed form
//! because every `b_i` shares the same denominator.
//!
//! [`grid_oracle`] solves the same problem by exhaustive dynamic programming
//! over a discretised budget and is used to cross-check the closed forms.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{Allocation, Decision, Scenario};
use crate::scalar::Scalar;

/// Lower bound on any CPU share (GHz).
pub const MIN_CPU_SHARE: f64 = 1e-6;
/// Lower bound on any bandwidth (MHz).
pub const MIN_BANDWIDTH: f64 = 1e-6;

/// Resource sub-problem for one decision.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AllocProblem<T> {
    /// Compute-delay weights: `alpha_d * (mu_t + [server training] mu_m)`.
    pub c: Vec<T>,
    /// Transmit-delay weights: `alpha_d * ([local] theta_l + theta_s) / log2(1 + SNR)`.
    pub d: Vec<T>,
    pub delta_b: T,
    pub f_ser: T,
    pub b_max: T,
    /// Decision-only part of the delay and cost terms (local training time
    /// and purchased computation). Accuracy terms are not included.
    pub constant: T,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AllocResult<T> {
    pub allocation: Allocation<T>,
    /// Resource-dependent part of the objective, excluding `constant`.
    pub objective_fb: T,
    /// Largest relative violation of the KKT conditions.
    pub kkt_residual: T,
}

/// Splits the objective for `dec` into the resource problem and a constant.
pub fn build_problem<T: Scalar>(sc: &Scenario<T>, dec: &Decision) -> Result<AllocProblem<T>> {
    dec.validate(sc)?;
    let w = &sc.weights;
    let efficiencies = sc.spectral_efficiencies()?;
    let n = sc.num_users();
    let mut c = Vec::with_capacity(n);
    let mut d = Vec::with_capacity(n);
    let mut constant = T::zero();
    for (i, user) in sc.users.iter().enumerate() {
        let model = &sc.catalog[dec.m[i]];
        let local = dec.x[i];
        let server_cycles = if local {
            sc.teacher.mu_t
        } else {
            sc.teacher.mu_t + model.mu
        };
        let payload = if local {
            sc.teacher.theta_l + model.theta_s
        } else {
            model.theta_s
        };
        c.push(w.alpha_d * server_cycles);
        d.push(w.alpha_d * payload / efficiencies[i]);
        constant += w.beta_c * server_cycles;
        if local {
            constant += w.alpha_d * model.mu / user.f_loc;
        }
    }
    let bad = |v: &T| !(*v > T::zero() && v.is_finite());
    if c.iter().chain(&d).any(bad) {
        return Err(Error::Degenerate(
            "every compute and transmit weight must be positive; is alpha_d zero?".into(),
        ));
    }
    Ok(AllocProblem {
        c,
        d,
        delta_b: w.delta_b,
        f_ser: sc.server.f_ser,
        b_max: sc.server.b_max,
        constant,
    })
}

/// Minimiser of `sum c_i / f_i` subject to `sum f_i <= f_ser`.
pub fn allocate_compute<T: Scalar>(c: &[T], f_ser: T) -> Result<Vec<T>> {
    if c.is_empty() {
        return Err(Error::Contract("no users to allocate CPU to".into()));
    }
    if c.iter().any(|v| !(*v > T::zero())) || !(f_ser > T::zero()) {
        return Err(Error::Contract("compute weights and f_ser must be positive".into()));
    }
    let roots: Vec<T> = c.iter().map(|v| v.sqrt()).collect();
    let total: T = roots.iter().copied().sum();
    let floor = T::lit(MIN_CPU_SHARE);
    Ok(roots.iter().map(|r| (f_ser * *r / total).max(floor)).collect())
}

/// Bandwidth multiplier `lambda >= 0` at the optimum.
pub fn bandwidth_multiplier<T: Scalar>(d: &[T], delta_b: T, b_max: T) -> T {
    let root_sum: T = d.iter().map(|v| v.sqrt()).sum();
    let binding = (root_sum / b_max).powi(2);
    (binding - delta_b).max(T::zero())
}

/// Minimiser of `sum d_i / b_i + delta_b b_i` subject to `sum b_i <= b_max`.
pub fn allocate_bandwidth<T: Scalar>(d: &[T], delta_b: T, b_max: T) -> Result<Vec<T>> {
    if d.is_empty() {
        return Err(Error::Contract("no users to allocate bandwidth to".into()));
    }
    if d.iter().any(|v| !(*v > T::zero())) || !(b_max > T::zero()) || !(delta_b >= T::zero()) {
        return Err(Error::Contract(
            "transmit weights and b_max must be positive, delta_b non-negative".into(),
        ));
    }
    let price = delta_b + bandwidth_multiplier(d, delta_b, b_max);
    let floor = T::lit(MIN_BANDWIDTH);
    Ok(d.iter().map(|v| (*v / price).sqrt().max(floor)).collect())
}

impl<T: Scalar> AllocProblem<T> {
    pub fn num_users(&self) -> usize {
        self.c.len()
    }

    pub fn objective_fb(&self, al: &Allocation<T>) -> T {
        let compute: T = self.c.iter().zip(&al.f).map(|(c, f)| *c / *f).sum();
        let bandwidth: T = self
            .d
            .iter()
            .zip(&al.b)
            .map(|(d, b)| *d / *b + self.delta_b * *b)
            .sum();
        compute + bandwidth
    }

    /// Largest relative violation of stationarity, complementary slackness,
    /// primal and dual feasibility. Multipliers are estimated from the
    /// allocation itself, so any feasible point can be scored.
    pub fn kkt_residual(&self, al: &Allocation<T>) -> T {
        let n = T::from_usize_lossy(self.num_users());
        // CPU: c_i / f_i^2 = nu for all i, and the budget binds.
        let marginal_f: Vec<T> = self.c.iter().zip(&al.f).map(|(c, f)| *c / (*f * *f)).collect();
        let nu = marginal_f.iter().copied().sum::<T>() / n;
        let stationarity_f = marginal_f
            .iter()
            .map(|m| (*m - nu).abs() / nu)
            .fold(T::zero(), T::max);
        let f_sum: T = al.f.iter().copied().sum();
        let slack_f = (self.f_ser - f_sum).abs() / self.f_ser;

        // Bandwidth: d_i / b_i^2 - delta_b = lambda >= 0, lambda * slack = 0.
        let marginal_b: Vec<T> = self
            .d
            .iter()
            .zip(&al.b)
            .map(|(d, b)| *d / (*b * *b) - self.delta_b)
            .collect();
        let lambda = marginal_b.iter().copied().sum::<T>() / n;
        let scale = (self.delta_b + lambda.abs()).max(T::min_positive_value());
        let stationarity_b = marginal_b
            .iter()
            .map(|m| (*m - lambda).abs() / scale)
            .fold(T::zero(), T::max);
        let dual_b = (-lambda).max(T::zero()) / scale;
        let b_sum: T = al.b.iter().copied().sum();
        let primal_b = (b_sum - self.b_max).max(T::zero()) / self.b_max;
        let slackness_b = lambda.max(T::zero()) / scale * (self.b_max - b_sum).abs() / self.b_max;

        [stationarity_f, slack_f, stationarity_b, dual_b, primal_b, slackness_b]
            .into_iter()
            .fold(T::zero(), T::max)
    }

    /// Closed-form optimum of this problem.
    pub fn solve(&self) -> Result<AllocResult<T>> {
        let allocation = Allocation {
            f: allocate_compute(&self.c, self.f_ser)?,
            b: allocate_bandwidth(&self.d, self.delta_b, self.b_max)?,
        };
        Ok(self.score(allocation))
    }

    fn score(&self, allocation: Allocation<T>) -> AllocResult<T> {
        AllocResult {
            objective_fb: self.objective_fb(&allocation),
            kkt_residual: self.kkt_residual(&allocation),
            allocation,
        }
    }
}

/// Optimal resources for `dec`.
pub fn allocate<T: Scalar>(sc: &Scenario<T>, dec: &Decision) -> Result<AllocResult<T>> {
    build_problem(sc, dec)?.solve()
}

/// Exact minimiser of `sum_i cost_i(k_i * unit)` over integers `k_i >= 1`
/// with `sum k_i <= steps`.
fn grid_split<T: Scalar>(n: usize, steps: usize, unit: T, cost: impl Fn(usize, T) -> T) -> Vec<T> {
    let inf = T::infinity();
    // best[i][j]: cheapest cost of users 0..i using exactly j units.
    let mut best = vec![vec![inf; steps + 1]; n + 1];
    let mut choice = vec![vec![0usize; steps + 1]; n + 1];
    best[0][0] = T::zero();
    for i in 0..n {
        let levels: Vec<T> = (0..=steps)
            .map(|k| if k == 0 { inf } else { cost(i, unit * T::from_usize_lossy(k)) })
            .collect();
        for used in 0..=steps {
            let base = best[i][used];
            if base == inf {
                continue;
            }
            for k in 1..=steps - used {
                let v = base + levels[k];
                if v < best[i + 1][used + k] {
                    best[i + 1][used + k] = v;
                    choice[i + 1][used + k] = k;
                }
            }
        }
    }
    let mut end = 0;
    for j in 0..=steps {
        if best[n][j] < best[n][end] {
            end = j;
        }
    }
    let mut out = vec![T::zero(); n];
    for i in (1..=n).rev() {
        let k = choice[i][end];
        out[i - 1] = unit * T::from_usize_lossy(k);
        end -= k;
    }
    out
}

/// Brute-force reference: optimises each resource over the grid
/// `{budget * k / steps}` by dynamic programming. Exact on the grid, so a
/// finer nested grid (e.g. doubled `steps`) never does worse.
pub fn grid_oracle<T: Scalar>(sc: &Scenario<T>, dec: &Decision, steps: usize) -> Result<AllocResult<T>> {
    let problem = build_problem(sc, dec)?;
    let n = problem.num_users();
    if steps < 10 || steps < n {
        return Err(Error::Contract(format!(
            "grid oracle needs at least max(10, users) steps, got {steps}"
        )));
    }
    let f_unit = problem.f_ser / T::from_usize_lossy(steps);
    let b_unit = problem.b_max / T::from_usize_lossy(steps);
    let f = grid_split(n, steps, f_unit, |i, f| problem.c[i] / f);
    let b = grid_split(n, steps, b_unit, |i, b| problem.d[i] / b + problem.delta_b * b);
    Ok(problem.score(Allocation { f, b }))
}
