//! Training pipelines and model checkpoints.
//!
//! Three methods share one scaffold and differ only in the per-sample loss:
//!
//! * `proposed`: decision-focused training. The predictor output feeds the
//!   perturbed Fenchel-Young layer; the upstream gradient is the hybrid
//!   loss gradient `(y*_eps - y_bar) + 2 beta (lambda_hat - xi)`.
//! * `two_stage`: plain squared error against the realized real-time price;
//!   decisions come from solving the dispatch problem on the prediction.
//! * `direct`: squared error against the optimal dispatch itself; the net
//!   maps features straight to decisions, clipped to the power box at
//!   inference with no feasibility guarantee.
//!
//! Batches are the dataset order split into fixed chunks (no shuffling), so
//! a (config, seed) pair reproduces the exact trajectory. Perturbation
//! noise uses a fresh seed per (epoch, batch, sample) derived from the
//! master seed by a running counter. Per-sample gradients within a batch
//! are computed in parallel and reduced in fixed order, which keeps results
//! independent of thread count.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{Dataset, PriceSeries, Sample};
use crate::error::{Error, Result};
use crate::mlp::{
    adam_step, backward, forward, init_params, AdamState, FeatureWindow, LayerDims, MlpParams,
    NormStats,
};
use crate::perturb::{derive_seed, hybrid_loss, PerturbConfig};
use crate::storage::{check_feasible, solve_dispatch, DispatchSchedule, StorageSpec, DEFAULT_TOL};

/// What the model is trained to reproduce: profit-seeking dispatch from
/// prices, or observed charge/discharge behavior.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Arbitrage,
    Behavior,
}

/// Training method; see the module doc.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Proposed,
    TwoStage,
    Direct,
}

/// Full training configuration; serializes to the JSON config file format.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub task: Task,
    pub method: Method,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Weight of the squared-error anchor inside the hybrid loss.
    pub beta: f64,
    pub perturb: PerturbConfig,
    pub storage: StorageSpec,
    pub seed: u64,
    /// Look-back window length used when building datasets from a series.
    pub lookback: usize,
    /// Fraction of samples held out from the end of the dataset.
    pub val_split: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            task: Task::Behavior,
            method: Method::Proposed,
            epochs: 30,
            batch_size: 32,
            lr: 0.01,
            beta: 0.001,
            perturb: PerturbConfig::default(),
            storage: StorageSpec::default(),
            seed: 0,
            lookback: 24,
            val_split: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidArgument {
                what: "epochs",
                reason: "must be at least 1".into(),
            });
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument {
                what: "batch_size",
                reason: "must be at least 1".into(),
            });
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidArgument {
                what: "lr",
                reason: format!("must be finite and > 0, got {}", self.lr),
            });
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidArgument {
                what: "beta",
                reason: format!("must be finite and >= 0, got {}", self.beta),
            });
        }
        if !(0.0..1.0).contains(&self.val_split) {
            return Err(Error::InvalidArgument {
                what: "val_split",
                reason: format!("must lie in [0, 1), got {}", self.val_split),
            });
        }
        if self.lookback == 0 {
            return Err(Error::InvalidArgument {
                what: "lookback",
                reason: "must be at least 1".into(),
            });
        }
        self.perturb.validate()?;
        self.storage.validate()
    }
}

/// Hex SHA-256 of a value's JSON form; stamped into derived outputs so
/// artifacts can be traced to the configuration that produced them.
pub fn json_hash<T: Serialize>(value: &T) -> String {
    let text = serde_json::to_string(value).expect("value serializes");
    let digest = Sha256::digest(text.as_bytes());
    digest.iter().fold(String::new(), |mut acc, b| {
        use std::fmt::Write as _;
        let _ = write!(acc, "{b:02x}");
        acc
    })
}

/// Hex SHA-256 of the config's JSON form.
pub fn config_hash(cfg: &TrainConfig) -> String {
    json_hash(cfg)
}

/// One logged batch. For the squared-error methods the whole loss is
/// recorded under `mse_reg` and `perturbed_fy` stays 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub epoch: usize,
    pub batch: usize,
    pub perturbed_fy: f64,
    pub mse_reg: f64,
    pub total: f64,
}

/// Writes the loss log as `epoch,batch,perturbed_fy,mse_reg,total`.
pub fn write_loss_csv(log: &[LossRecord], path: &Path) -> Result<()> {
    use std::fmt::Write as _;
    let mut text = String::from("epoch,batch,perturbed_fy,mse_reg,total\n");
    for r in log {
        let _ = writeln!(
            text,
            "{},{},{},{},{}",
            r.epoch, r.batch, r.perturbed_fy, r.mse_reg, r.total
        );
    }
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

/// A trained model with everything inference needs: network weights, the
/// feature standardization fitted on the training set, the storage model to
/// solve against, and provenance (seed, config hash).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub method: Method,
    pub task: Task,
    pub dims: LayerDims,
    pub lookback: usize,
    pub norm: NormStats,
    pub params: MlpParams,
    pub adam: AdamState,
    pub storage: StorageSpec,
    pub seed: u64,
    pub config_hash: String,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|e| Error::SchemaMismatch {
            what: "checkpoint",
            reason: e.to_string(),
        })?;
        std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let ckpt: Checkpoint =
            serde_json::from_str(&text).map_err(|e| Error::SchemaMismatch {
                what: "checkpoint",
                reason: e.to_string(),
            })?;
        ckpt.validate()?;
        Ok(ckpt)
    }

    /// Internal consistency: tensor shapes against dims, dims against the
    /// stored look-back and channel count, horizon against the storage.
    pub fn validate(&self) -> Result<()> {
        let channels = self.norm.mean.len();
        if self.norm.std.len() != channels
            || self.dims.input != self.lookback * channels
            || self.dims.output != self.storage.horizon
            || self.params.dims != self.dims
            || self.adam.m.dims != self.dims
        {
            return Err(Error::SchemaMismatch {
                what: "checkpoint",
                reason: format!(
                    "inconsistent shapes: dims {:?}, lookback {}, channels {channels}, horizon {}",
                    self.dims, self.lookback, self.storage.horizon
                ),
            });
        }
        self.storage.validate()
    }
}

/// Checkpoint plus the full batch loss log.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutput {
    pub checkpoint: Checkpoint,
    pub loss_log: Vec<LossRecord>,
}

struct SampleResult {
    grads: MlpParams,
    perturbed_fy: f64,
    mse_reg: f64,
    total: f64,
}

fn squared_error(pred: &[f64], target: &[f64]) -> (f64, Vec<f64>) {
    let loss = pred
        .iter()
        .zip(target)
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    let grad = pred.iter().zip(target).map(|(p, t)| 2.0 * (p - t)).collect();
    (loss, grad)
}

fn sample_loss(
    method: Method,
    params: &MlpParams,
    norm: &NormStats,
    sample: &Sample,
    cfg: &TrainConfig,
    noise_seed: u64,
) -> Result<SampleResult> {
    let window = norm.apply(&sample.features)?;
    let reward_hat = forward(params, &window)?;
    if reward_hat.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteLoss {
            epoch: 0,
            batch: 0,
            detail: "predictor output is not finite".into(),
        });
    }
    let (perturbed_fy, mse_reg, total, upstream) = match method {
        Method::Proposed => {
            let perturb = cfg.perturb.clone().with_seed(noise_seed);
            let breakdown = hybrid_loss(
                &reward_hat,
                &sample.target_y,
                &sample.prior_price_xi,
                cfg.beta,
                &cfg.storage,
                &perturb,
            )?;
            (
                breakdown.perturbed_fy,
                breakdown.mse_regularizer,
                breakdown.total,
                breakdown.gradient,
            )
        }
        Method::TwoStage => {
            let (loss, grad) = squared_error(&reward_hat, &sample.realized_rtp);
            (0.0, loss, loss, grad)
        }
        Method::Direct => {
            let (loss, grad) = squared_error(&reward_hat, &sample.target_y);
            (0.0, loss, loss, grad)
        }
    };
    let grads = backward(params, &window, &upstream)?;
    Ok(SampleResult {
        grads,
        perturbed_fy,
        mse_reg,
        total,
    })
}

fn run_training(dataset: &Dataset, cfg: &TrainConfig, method: Method) -> Result<TrainOutput> {
    cfg.validate()?;
    if dataset.samples.is_empty() {
        return Err(Error::InsufficientData {
            needed: 1,
            available: 0,
        });
    }
    if cfg.storage.horizon != dataset.horizon {
        return Err(Error::DimensionMismatch {
            what: "storage horizon",
            expected: dataset.horizon,
            actual: cfg.storage.horizon,
        });
    }
    let n = dataset.samples.len();
    let held_out = ((n as f64) * cfg.val_split).floor() as usize;
    let train_n = n - held_out;
    if train_n == 0 {
        return Err(Error::InsufficientData {
            needed: 1,
            available: 0,
        });
    }
    let train_samples = &dataset.samples[..train_n];
    // ReLU maps NaN to 0, so a poisoned feature would otherwise corrupt
    // the normalization statistics silently instead of failing loudly.
    for (idx, s) in train_samples.iter().enumerate() {
        if s.features.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument {
                what: "features",
                reason: format!("sample {idx} contains a non-finite value"),
            });
        }
    }

    let channels = train_samples[0].features.cols;
    let dims = LayerDims::new(dataset.lookback * channels, dataset.horizon);
    let norm = NormStats::fit(train_samples.iter().map(|s| &s.features))?;
    let mut params = init_params(cfg.seed, dims);
    let mut adam = AdamState::new(dims, cfg.lr);
    let mut log = Vec::new();
    let mut counter: u64 = 0;

    for epoch in 1..=cfg.epochs {
        for (batch_idx, batch) in train_samples.chunks(cfg.batch_size).enumerate() {
            let base = counter;
            counter += batch.len() as u64;
            let results: Vec<SampleResult> = batch
                .par_iter()
                .enumerate()
                .map(|(k, sample)| {
                    sample_loss(
                        method,
                        &params,
                        &norm,
                        sample,
                        cfg,
                        derive_seed(cfg.seed, base + k as u64),
                    )
                })
                .collect::<Result<_>>()?;

            let scale = 1.0 / batch.len() as f64;
            let mut grads = MlpParams::zeros(dims);
            let (mut fy, mut reg, mut total) = (0.0, 0.0, 0.0);
            for r in &results {
                grads.add_assign(&r.grads)?;
                fy += r.perturbed_fy;
                reg += r.mse_reg;
                total += r.total;
            }
            grads.scale(scale);
            fy *= scale;
            reg *= scale;
            total *= scale;
            if !total.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: batch_idx + 1,
                    detail: format!("batch mean loss {total}"),
                });
            }
            adam_step(&mut params, &grads, &mut adam)?;
            log.push(LossRecord {
                epoch,
                batch: batch_idx + 1,
                perturbed_fy: fy,
                mse_reg: reg,
                total,
            });
        }
    }

    Ok(TrainOutput {
        checkpoint: Checkpoint {
            method,
            task: cfg.task,
            dims,
            lookback: dataset.lookback,
            norm,
            params,
            adam,
            storage: cfg.storage.clone(),
            seed: cfg.seed,
            config_hash: config_hash(cfg),
        },
        loss_log: log,
    })
}

/// Decision-focused training through the perturbed layer.
pub fn train_decision_focused(dataset: &Dataset, cfg: &TrainConfig) -> Result<TrainOutput> {
    run_training(dataset, cfg, Method::Proposed)
}

/// Price regression; the dispatch solver is applied only at inference.
pub fn train_two_stage(dataset: &Dataset, cfg: &TrainConfig) -> Result<TrainOutput> {
    run_training(dataset, cfg, Method::TwoStage)
}

/// Direct feature-to-decision regression.
pub fn train_direct(dataset: &Dataset, cfg: &TrainConfig) -> Result<TrainOutput> {
    run_training(dataset, cfg, Method::Direct)
}

/// Dispatches on `cfg.method`.
pub fn train(dataset: &Dataset, cfg: &TrainConfig) -> Result<TrainOutput> {
    run_training(dataset, cfg, cfg.method)
}

/// Inference output. For the solver-backed methods the schedule is optimal
/// for the predicted reward and always feasible; for the direct method the
/// net output is clipped to the power box and `feasible` reports whether
/// the implied state of charge stays within bounds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prediction {
    /// Predicted reward vector; absent for the direct method, whose output
    /// is already a dispatch.
    pub reward: Option<Vec<f64>>,
    pub schedule: DispatchSchedule,
    pub feasible: bool,
}

/// Runs one feature window through a checkpoint. The direct route stores
/// the clipped dispatch in a schedule whose objective is the (negative)
/// dispatch cost; profit against realized prices is a separate evaluation.
pub fn predict(checkpoint: &Checkpoint, features: &FeatureWindow) -> Result<Prediction> {
    checkpoint.validate()?;
    let window = checkpoint.norm.apply(features)?;
    let output = forward(&checkpoint.params, &window)?;
    match checkpoint.method {
        Method::Proposed | Method::TwoStage => {
            let schedule = solve_dispatch(&output, &checkpoint.storage, DEFAULT_TOL)?;
            Ok(Prediction {
                reward: Some(output),
                schedule,
                feasible: true,
            })
        }
        Method::Direct => {
            let p_max = checkpoint.storage.power_limit_mw;
            let clipped: Vec<f64> = output.iter().map(|y| y.clamp(-p_max, p_max)).collect();
            let (p, b) = DispatchSchedule::split_net(&clipped);
            let zero_reward = vec![0.0; checkpoint.storage.horizon];
            let schedule =
                DispatchSchedule::from_profiles(p, b, &zero_reward, &checkpoint.storage)?;
            let feasible = check_feasible(&schedule, &checkpoint.storage, 1e-6)?.is_empty();
            Ok(Prediction {
                reward: None,
                schedule,
                feasible,
            })
        }
    }
}

/// One receding-horizon simulation: executed actions, state of charge, and
/// profit against realized prices.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RolloutResult {
    /// Total profit over the simulated range.
    pub profit: f64,
    /// Running profit after each executed step.
    pub cumulative_profit: Vec<f64>,
    /// Executed net dispatch per step (discharge positive).
    pub executed_net_mw: Vec<f64>,
    /// State of charge after each executed step.
    pub soc_mwh: Vec<f64>,
}

/// Self-scheduling receding-horizon simulation over `series[start..end)`.
///
/// At every step the checkpoint predicts a reward for the next
/// `storage.horizon` steps from the trailing feature window, the dispatch
/// problem is solved from the current state of charge, and only the first
/// action is executed before the window rolls forward one step. Profit per
/// step is `rtp * (p - b) * h - u(p, b) * h` under the realized real-time
/// price. The storage spec, horizon, and look-back all come from the
/// checkpoint, so the simulation matches the model's training setup.
///
/// For the solver-backed methods the executed action is feasible by
/// construction. The direct method's raw output is clipped to the power box
/// and to the energy actually available at the current state of charge.
pub fn mpc_rollout(
    checkpoint: &Checkpoint,
    series: &PriceSeries,
    start: usize,
    end: usize,
) -> Result<RolloutResult> {
    checkpoint.validate()?;
    let lookback = checkpoint.lookback;
    let cols = series.channel_count();
    if cols * lookback != checkpoint.dims.input {
        return Err(Error::ShapeMismatch {
            what: "rollout features",
            expected: format!("{} inputs", checkpoint.dims.input),
            actual: format!("{lookback} steps x {cols} channels"),
        });
    }
    if start < lookback || start >= end || end > series.len() {
        return Err(Error::InvalidArgument {
            what: "rollout range",
            reason: format!(
                "need lookback {lookback} <= start < end <= len {}, got [{start}, {end})",
                series.len()
            ),
        });
    }
    let spec = &checkpoint.storage;
    let h = spec.step_hours;
    let mut soc = spec.initial_soc_mwh;
    let mut profit = 0.0;
    let mut cumulative_profit = Vec::with_capacity(end - start);
    let mut executed_net_mw = Vec::with_capacity(end - start);
    let mut soc_mwh = Vec::with_capacity(end - start);
    for t in start..end {
        let mut values = Vec::with_capacity(lookback * cols);
        for r in t - lookback..t {
            values.push(series.rtp[r]);
            values.push(series.dap[r]);
            if let Some(load) = &series.load {
                values.push(load[r]);
            }
        }
        let window = checkpoint
            .norm
            .apply(&FeatureWindow::new(lookback, cols, values)?)?;
        let output = forward(&checkpoint.params, &window)?;
        let (p0, b0) = match checkpoint.method {
            Method::Proposed | Method::TwoStage => {
                let mut spec_t = spec.clone();
                spec_t.initial_soc_mwh = soc;
                let schedule = solve_dispatch(&output, &spec_t, DEFAULT_TOL)?;
                (schedule.discharge_mw[0], schedule.charge_mw[0])
            }
            Method::Direct => {
                let y0 = output[0].clamp(-spec.power_limit_mw, spec.power_limit_mw);
                if y0 >= 0.0 {
                    (y0.min(soc * spec.efficiency / h), 0.0)
                } else {
                    (0.0, (-y0).min((spec.capacity_mwh - soc) / (spec.efficiency * h)))
                }
            }
        };
        let c = &spec.cost;
        let u = c.discharge_linear * p0 + c.discharge_quad * p0 * p0
            + c.charge_linear * b0
            + c.charge_quad * b0 * b0;
        profit += (series.rtp[t] * (p0 - b0) - u) * h;
        soc = (soc + (-p0 / spec.efficiency + b0 * spec.efficiency) * h)
            .clamp(0.0, spec.capacity_mwh);
        cumulative_profit.push(profit);
        executed_net_mw.push(p0 - b0);
        soc_mwh.push(soc);
    }
    Ok(RolloutResult {
        profit,
        cumulative_profit,
        executed_net_mw,
        soc_mwh,
    })
}
