//! Convex self-scheduled storage arbitrage model and its solvers.
//!
//! A price-taking storage unit chooses a discharge profile `p` and a charge
//! profile `b` over a horizon of `T` steps to maximize
//!
//! ```text
//!     sum_t  lambda_t (p_t - b_t) - u(p_t, b_t)
//!     u(p, b) = c1 p + c2 p^2 + c3 b + c4 b^2
//! ```
//!
//! subject to power limits `0 <= p_t, b_t <= P`, state-of-charge limits
//! `0 <= e_t <= E`, the charging dynamics
//!
//! ```text
//!     e_t - e_{t-1} = (-p_t / eta + b_t eta) * step_hours,   e_0 given,
//! ```
//!
//! and a no-discharge rule at negative prices: whenever `lambda_t < 0` the
//! discharge variable is fixed to zero before solving. The rule is applied to
//! the reward vector actually passed in, so a perturbed price produces the
//! same program with a shifted price. Note that charging at negative prices
//! remains allowed and is profitable (paid consumption); only discharging
//! into the grid is ruled out.
//!
//! Terminal state of charge is free. Two independent solvers are provided:
//! [`solve_dispatch`], a primal-dual interior-point method on the condensed
//! problem (state-of-charge variables eliminated), and [`dp_oracle_solve`],
//! value iteration over a discretized state-of-charge grid used as a slow but
//! transparent cross-check.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qp;

/// Default relative duality-gap tolerance for [`solve_dispatch`].
pub const DEFAULT_TOL: f64 = 1e-8;

/// Iteration cap for the interior-point solver.
pub const ITERATION_CAP: usize = 200;

/// Default cap on `grid points x horizon` for [`dp_oracle_solve`].
pub const DP_CELL_CAP: usize = 20_000_000;

/// Marginal cost coefficients of the storage unit, all in $ per MWh (linear
/// terms) or $ per MWh^2 (quadratic terms). All must be nonnegative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostCoeffs {
    pub discharge_linear: f64,
    pub discharge_quad: f64,
    pub charge_linear: f64,
    pub charge_quad: f64,
}

impl Default for CostCoeffs {
    fn default() -> Self {
        CostCoeffs {
            discharge_linear: 10.0,
            discharge_quad: 0.0,
            charge_linear: 0.0,
            charge_quad: 0.0,
        }
    }
}

impl CostCoeffs {
    pub fn zero() -> Self {
        CostCoeffs {
            discharge_linear: 0.0,
            discharge_quad: 0.0,
            charge_linear: 0.0,
            charge_quad: 0.0,
        }
    }

    /// Linear discharge cost only.
    pub fn linear(discharge: f64) -> Self {
        CostCoeffs {
            discharge_linear: discharge,
            ..CostCoeffs::zero()
        }
    }

    /// Per-step cost of one `(p, b)` pair.
    pub fn eval(&self, p: f64, b: f64) -> f64 {
        self.discharge_linear * p
            + self.discharge_quad * p * p
            + self.charge_linear * b
            + self.charge_quad * b * b
    }
}

/// Physical and economic description of one storage unit over a fixed
/// horizon. Power variables are in MW and are interpreted as energy per step
/// by multiplying with `step_hours` (1.0 by default, making MW and MWh per
/// step numerically identical at hourly resolution).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StorageSpec {
    /// Number of steps `T`.
    pub horizon: usize,
    /// Symmetric power rating `P` in MW.
    pub power_limit_mw: f64,
    /// Usable energy capacity `E` in MWh.
    pub capacity_mwh: f64,
    /// One-way efficiency `eta` in (0, 1]; a full cycle returns `eta^2`.
    pub efficiency: f64,
    /// Initial state of charge `e_0` in MWh, within `[0, E]`.
    pub initial_soc_mwh: f64,
    pub cost: CostCoeffs,
    /// Hours per step.
    pub step_hours: f64,
}

impl Default for StorageSpec {
    /// The 0.5 MW / 2 MWh hourly unit used throughout the synthetic studies.
    fn default() -> Self {
        StorageSpec {
            horizon: 24,
            power_limit_mw: 0.5,
            capacity_mwh: 2.0,
            efficiency: 0.9,
            initial_soc_mwh: 0.5,
            cost: CostCoeffs::default(),
            step_hours: 1.0,
        }
    }
}

impl StorageSpec {
    /// Checks internal consistency; every solver entry point calls this.
    pub fn validate(&self) -> Result<()> {
        let fail = |reason: String| Err(Error::InfeasibleSpec { reason });
        if self.horizon == 0 {
            return fail("horizon must be at least 1".into());
        }
        let finite = [
            self.power_limit_mw,
            self.capacity_mwh,
            self.efficiency,
            self.initial_soc_mwh,
            self.step_hours,
            self.cost.discharge_linear,
            self.cost.discharge_quad,
            self.cost.charge_linear,
            self.cost.charge_quad,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return fail("spec contains a non-finite value".into());
        }
        if self.power_limit_mw <= 0.0 {
            return fail(format!("power limit {} must be > 0", self.power_limit_mw));
        }
        if self.capacity_mwh <= 0.0 {
            return fail(format!("capacity {} must be > 0", self.capacity_mwh));
        }
        if !(self.efficiency > 0.0 && self.efficiency <= 1.0) {
            return fail(format!("efficiency {} must be in (0, 1]", self.efficiency));
        }
        if self.step_hours <= 0.0 {
            return fail(format!("step_hours {} must be > 0", self.step_hours));
        }
        if self.initial_soc_mwh < 0.0 || self.initial_soc_mwh > self.capacity_mwh {
            return fail(format!(
                "initial SoC {} outside [0, {}]",
                self.initial_soc_mwh, self.capacity_mwh
            ));
        }
        let costs = [
            self.cost.discharge_linear,
            self.cost.discharge_quad,
            self.cost.charge_linear,
            self.cost.charge_quad,
        ];
        if costs.iter().any(|c| *c < 0.0) {
            return fail("cost coefficients must be nonnegative".into());
        }
        Ok(())
    }

    /// Energy added to the store in one step by `(p, b)`, in MWh.
    fn soc_delta(&self, p: f64, b: f64) -> f64 {
        (-p / self.efficiency + b * self.efficiency) * self.step_hours
    }
}

/// A complete dispatch: per-step discharge `p`, charge `b`, resulting state
/// of charge `e` (value after each step; the initial state lives in the
/// spec), net output `y = p - b`, and the objective of the reward it was
/// solved against. JSON field names are the short math symbols.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispatchSchedule {
    #[serde(rename = "p")]
    pub discharge_mw: Vec<f64>,
    #[serde(rename = "b")]
    pub charge_mw: Vec<f64>,
    #[serde(rename = "e")]
    pub soc_mwh: Vec<f64>,
    #[serde(rename = "y")]
    pub net_mw: Vec<f64>,
    pub objective: f64,
}

impl DispatchSchedule {
    /// Assembles a schedule from `(p, b)`, recomputing the state of charge
    /// and the objective so the stored values are exactly consistent with
    /// the profiles.
    pub fn from_profiles(
        discharge_mw: Vec<f64>,
        charge_mw: Vec<f64>,
        reward: &[f64],
        spec: &StorageSpec,
    ) -> Result<Self> {
        let t = spec.horizon;
        check_len("discharge profile", &discharge_mw, t)?;
        check_len("charge profile", &charge_mw, t)?;
        check_len("reward", reward, t)?;
        let mut soc = Vec::with_capacity(t);
        let mut e = spec.initial_soc_mwh;
        for i in 0..t {
            e += spec.soc_delta(discharge_mw[i], charge_mw[i]);
            soc.push(e);
        }
        let net: Vec<f64> = discharge_mw
            .iter()
            .zip(&charge_mw)
            .map(|(p, b)| p - b)
            .collect();
        let mut schedule = DispatchSchedule {
            discharge_mw,
            charge_mw,
            soc_mwh: soc,
            net_mw: net,
            objective: 0.0,
        };
        schedule.objective = objective_value(reward, &schedule, spec)?;
        Ok(schedule)
    }

    /// Splits a net-output vector into nonnegative `(p, b)` profiles.
    pub fn split_net(net: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let p = net.iter().map(|y| y.max(0.0)).collect();
        let b = net.iter().map(|y| (-y).max(0.0)).collect();
        (p, b)
    }
}

/// One violated constraint found by [`check_feasible`]. `step` is 1-based to
/// match the `t = 1..T` indexing of the dynamics; magnitudes are the amount
/// by which the constraint is exceeded.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub constraint: &'static str,
    pub step: usize,
    pub amount: f64,
}

fn check_len(what: &'static str, v: &[f64], expected: usize) -> Result<()> {
    if v.len() != expected {
        return Err(Error::DimensionMismatch {
            what,
            expected,
            actual: v.len(),
        });
    }
    Ok(())
}

/// Total dispatch cost `sum_t u(p_t, b_t)` of a schedule.
pub fn dispatch_cost(schedule: &DispatchSchedule, spec: &StorageSpec) -> f64 {
    schedule
        .discharge_mw
        .iter()
        .zip(&schedule.charge_mw)
        .map(|(p, b)| spec.cost.eval(*p, *b))
        .sum()
}

/// Objective `sum_t lambda_t (p_t - b_t) - u(p_t, b_t)` of a schedule under
/// the given reward.
pub fn objective_value(reward: &[f64], schedule: &DispatchSchedule, spec: &StorageSpec) -> Result<f64> {
    let t = spec.horizon;
    check_len("reward", reward, t)?;
    check_len("discharge profile", &schedule.discharge_mw, t)?;
    check_len("charge profile", &schedule.charge_mw, t)?;
    let revenue: f64 = reward
        .iter()
        .zip(schedule.discharge_mw.iter().zip(&schedule.charge_mw))
        .map(|(lambda, (p, b))| lambda * (p - b))
        .sum();
    Ok(revenue - dispatch_cost(schedule, spec))
}

/// Checks a schedule against all constraints with an absolute slack and
/// returns every violation found (empty means feasible). The reward-dependent
/// no-discharge rule is not checked here because it depends on the price, not
/// the schedule alone.
pub fn check_feasible(
    schedule: &DispatchSchedule,
    spec: &StorageSpec,
    slack: f64,
) -> Result<Vec<Violation>> {
    let t = spec.horizon;
    check_len("discharge profile", &schedule.discharge_mw, t)?;
    check_len("charge profile", &schedule.charge_mw, t)?;
    check_len("soc trajectory", &schedule.soc_mwh, t)?;
    check_len("net profile", &schedule.net_mw, t)?;

    let mut out = Vec::new();
    let mut push = |constraint: &'static str, step: usize, amount: f64| {
        if amount > slack {
            out.push(Violation {
                constraint,
                step,
                amount,
            });
        }
    };

    let p_max = spec.power_limit_mw;
    let mut prev_e = spec.initial_soc_mwh;
    for i in 0..t {
        let step = i + 1;
        let p = schedule.discharge_mw[i];
        let b = schedule.charge_mw[i];
        let e = schedule.soc_mwh[i];
        push("discharge lower bound", step, -p);
        push("discharge upper bound", step, p - p_max);
        push("charge lower bound", step, -b);
        push("charge upper bound", step, b - p_max);
        push("SoC lower bound", step, -e);
        push("SoC upper bound", step, e - spec.capacity_mwh);
        push(
            "SoC dynamics",
            step,
            (e - prev_e - spec.soc_delta(p, b)).abs(),
        );
        push(
            "net dispatch consistency",
            step,
            (schedule.net_mw[i] - (p - b)).abs(),
        );
        prev_e = e;
    }
    Ok(out)
}

/// Indices of steps whose discharge variable is fixed to zero for this
/// reward (the negative-price rule).
fn locked_steps(reward: &[f64]) -> Vec<bool> {
    reward.iter().map(|l| *l < 0.0).collect()
}

/// Solves the arbitrage program for one reward vector with the interior-point
/// method. `tol` is the relative duality-gap tolerance; [`DEFAULT_TOL`] is
/// the intended value for production use. On a tie the central path lands on
/// the analytic center of the optimal face, so the output is deterministic.
pub fn solve_dispatch(reward: &[f64], spec: &StorageSpec, tol: f64) -> Result<DispatchSchedule> {
    spec.validate()?;
    let t = spec.horizon;
    check_len("reward", reward, t)?;
    if reward.iter().any(|l| !l.is_finite()) {
        return Err(Error::InvalidArgument {
            what: "reward",
            reason: "contains a non-finite value".into(),
        });
    }
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(Error::InvalidArgument {
            what: "tol",
            reason: format!("{tol} must be a positive finite number"),
        });
    }

    // The discharge variable disappears from the program at locked steps;
    // charge variables are always free. Variable order: free discharges in
    // step order, then all charges.
    let locked = locked_steps(reward);
    let p_index: Vec<usize> = (0..t).filter(|i| !locked[*i]).collect();
    let np = p_index.len();
    let n = np + t;
    let m = 2 * n + 2 * t;

    let mut quad = vec![0.0; n];
    let mut lin = vec![0.0; n];
    for (col, &step) in p_index.iter().enumerate() {
        quad[col] = 2.0 * spec.cost.discharge_quad;
        lin[col] = spec.cost.discharge_linear - reward[step];
    }
    for step in 0..t {
        let col = np + step;
        quad[col] = 2.0 * spec.cost.charge_quad;
        lin[col] = spec.cost.charge_linear + reward[step];
    }

    // Box rows first (2 per variable), then one SoC upper and one SoC lower
    // row per step. SoC is eliminated:
    //   e_k = e0 + sum_{s<=k} (-p_s/eta + b_s*eta) * step_hours.
    let mut g = vec![0.0; m * n];
    let mut h = vec![0.0; m];
    for j in 0..n {
        g[(2 * j) * n + j] = -1.0;
        h[2 * j] = 0.0;
        g[(2 * j + 1) * n + j] = 1.0;
        h[2 * j + 1] = spec.power_limit_mw;
    }
    let p_coeff = -spec.step_hours / spec.efficiency;
    let b_coeff = spec.step_hours * spec.efficiency;
    let room_up = spec.capacity_mwh - spec.initial_soc_mwh;
    let room_down = spec.initial_soc_mwh;
    for k in 0..t {
        let up_row = 2 * n + 2 * k;
        let lo_row = up_row + 1;
        for (col, &step) in p_index.iter().enumerate() {
            if step <= k {
                g[up_row * n + col] = p_coeff;
                g[lo_row * n + col] = -p_coeff;
            }
        }
        for step in 0..=k {
            let col = np + step;
            g[up_row * n + col] = b_coeff;
            g[lo_row * n + col] = -b_coeff;
        }
        h[up_row] = room_up;
        h[lo_row] = room_down;
    }

    let problem = qp::QpProblem {
        quad_diag: &quad,
        linear: &lin,
        g: &g,
        h: &h,
        n,
        m,
    };
    let settings = qp::QpSettings {
        tol,
        feas_tol: tol.min(1e-8),
        max_iter: ITERATION_CAP,
    };
    let x0 = vec![0.5 * spec.power_limit_mw; n];
    let solution = match qp::solve(&problem, &settings, &x0) {
        qp::QpOutcome::Converged(sol) => sol,
        qp::QpOutcome::IterationLimit { gap } => {
            return Err(Error::NonConvergence {
                iterations: ITERATION_CAP,
                gap,
                tol,
            })
        }
    };

    let mut p = vec![0.0; t];
    for (col, &step) in p_index.iter().enumerate() {
        p[step] = solution.x[col];
    }
    let b: Vec<f64> = (0..t).map(|step| solution.x[np + step]).collect();
    DispatchSchedule::from_profiles(p, b, reward, spec)
}

/// Brute-force reference solver: backward value iteration over a uniform
/// state-of-charge grid of the given resolution (MWh per cell), with the
/// initial state inserted as an extra grid point so the start is exact. Only
/// pure moves are enumerated per step; with nonnegative costs a simultaneous
/// charge and discharge is never strictly better than the pure move with the
/// same net energy, so this loses no optimality beyond the grid rounding.
///
/// Intended for small instances; fails with `ResourceLimit` when
/// `grid points x horizon` exceeds [`DP_CELL_CAP`].
pub fn dp_oracle_solve(reward: &[f64], spec: &StorageSpec, resolution: f64) -> Result<DispatchSchedule> {
    spec.validate()?;
    let t = spec.horizon;
    check_len("reward", reward, t)?;
    if !(resolution > 0.0 && resolution.is_finite()) {
        return Err(Error::InvalidArgument {
            what: "resolution",
            reason: format!("{resolution} must be a positive finite number"),
        });
    }

    // Uniform grid over [0, E] plus the exact initial state. The cell
    // budget is checked before any allocation; the +2 covers the possible
    // extra points for the capacity endpoint and the initial state.
    let e_max = spec.capacity_mwh;
    let steps_f = (e_max / resolution).floor();
    if !steps_f.is_finite() || (steps_f + 2.0) * t as f64 > DP_CELL_CAP as f64 {
        return Err(Error::ResourceLimit {
            cells: if steps_f.is_finite() {
                ((steps_f + 2.0) * t as f64) as usize
            } else {
                usize::MAX
            },
            cap: DP_CELL_CAP,
        });
    }
    let steps = steps_f as usize;
    let mut grid: Vec<f64> = (0..=steps).map(|k| k as f64 * resolution).collect();
    if e_max - grid[steps] > 1e-12 * e_max.max(1.0) {
        grid.push(e_max);
    }
    let e0 = spec.initial_soc_mwh;
    let start = match grid.binary_search_by(|v| v.partial_cmp(&e0).unwrap()) {
        Ok(i) => i,
        Err(i) => {
            grid.insert(i, e0);
            i
        }
    };
    let points = grid.len();

    // Reachable window in energy terms for one step.
    let h = spec.step_hours;
    let eta = spec.efficiency;
    let max_up = spec.power_limit_mw * h * eta;
    let max_down = spec.power_limit_mw * h / eta;
    let slack = 1e-9 * spec.power_limit_mw.max(1.0);

    // value[i] is the best profit from state grid[i] at the current step
    // onward; filled backward from the free terminal state.
    let mut value = vec![0.0_f64; points];
    let mut next_value = vec![0.0_f64; points];
    let mut choice = vec![0u32; points * t];

    // Invariant: `value` holds the continuation values for the step after
    // the one being filled; the swap at the bottom maintains it.
    for step in (0..t).rev() {
        let lambda = reward[step];
        for i in 0..points {
            let e_here = grid[i];
            let lo = grid.partition_point(|v| *v < e_here - max_down - slack);
            let hi = grid.partition_point(|v| *v <= e_here + max_up + slack);
            let mut best = f64::NEG_INFINITY;
            let mut best_j = i as u32;
            for j in lo..hi {
                let de = grid[j] - e_here;
                let profit = if de <= 0.0 {
                    // Pure discharge; forbidden entirely at negative prices.
                    let p = -de * eta / h;
                    if p > spec.power_limit_mw + slack || (lambda < 0.0 && p > 0.0) {
                        continue;
                    }
                    lambda * p - spec.cost.eval(p, 0.0)
                } else {
                    let b = de / (eta * h);
                    if b > spec.power_limit_mw + slack {
                        continue;
                    }
                    -lambda * b - spec.cost.eval(0.0, b)
                };
                let total = profit + value[j];
                if total > best {
                    best = total;
                    best_j = j as u32;
                }
            }
            next_value[i] = best;
            choice[step * points + i] = best_j;
        }
        std::mem::swap(&mut value, &mut next_value);
    }

    // Trace the optimal path forward from the exact initial state.
    let mut p = vec![0.0; t];
    let mut b = vec![0.0; t];
    let mut at = start;
    for step in 0..t {
        let j = choice[step * points + at] as usize;
        let de = grid[j] - grid[at];
        if de <= 0.0 {
            p[step] = (-de * eta / h).min(spec.power_limit_mw);
        } else {
            b[step] = (de / (eta * h)).min(spec.power_limit_mw);
        }
        at = j;
    }
    DispatchSchedule::from_profiles(p, b, reward, spec)
}
