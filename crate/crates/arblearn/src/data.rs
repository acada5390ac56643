//! Market data plumbing: price series ingestion, a synthetic market
//! generator, blended reward synthesis, optimal-dispatch target generation,
//! and rolling-window dataset assembly.
//!
//! A [`PriceSeries`] holds aligned real-time and day-ahead price channels
//! (plus an optional load channel) on a strictly uniform time grid. Targets
//! for supervised training come from solving the dispatch problem on every
//! length-T window of a reward channel; samples pair an L-step look-back
//! feature window with the dispatch of the following T steps. The prior
//! price vector attached to each sample is the same hours-of-day slice from
//! one day earlier, which anchors the hybrid training loss.

use std::fmt::Write as _;
use std::path::Path;

use chrono::{Duration, NaiveDateTime};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mlp::FeatureWindow;
use crate::storage::{check_feasible, solve_dispatch, DispatchSchedule, StorageSpec, DEFAULT_TOL};

/// Objective slack under which a charge/discharge pair counts as a tie and
/// is zeroed during target generation.
const IDLE_TIE_TOL: f64 = 1e-9;

// ---------------------------------------------------------------------------
// Price series

/// Uniformly sampled market series. `rtp` and `dap` are required channels;
/// `load` is optional. All channels share the timestamp grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceSeries {
    pub timestamps: Vec<NaiveDateTime>,
    pub rtp: Vec<f64>,
    pub dap: Vec<f64>,
    pub load: Option<Vec<f64>>,
}

impl PriceSeries {
    /// Validates lengths, finiteness, and a strictly uniform positive step.
    pub fn new(
        timestamps: Vec<NaiveDateTime>,
        rtp: Vec<f64>,
        dap: Vec<f64>,
        load: Option<Vec<f64>>,
    ) -> Result<Self> {
        let n = timestamps.len();
        if n < 2 {
            return Err(Error::InsufficientData {
                needed: 2,
                available: n,
            });
        }
        for (name, channel) in [("rtp", &rtp), ("dap", &dap)] {
            if channel.len() != n {
                return Err(Error::LengthMismatch {
                    left_name: "timestamps",
                    left: n,
                    right_name: name,
                    right: channel.len(),
                });
            }
        }
        if let Some(l) = &load {
            if l.len() != n {
                return Err(Error::LengthMismatch {
                    left_name: "timestamps",
                    left: n,
                    right_name: "load",
                    right: l.len(),
                });
            }
        }
        let all = rtp.iter().chain(&dap).chain(load.iter().flatten());
        for v in all {
            if !v.is_finite() {
                return Err(Error::InvalidArgument {
                    what: "price series",
                    reason: format!("non-finite value {v}"),
                });
            }
        }
        let step = timestamps[1] - timestamps[0];
        if step <= Duration::zero() {
            return Err(Error::NonUniformStep {
                row: 2,
                expected: "positive step".into(),
                actual: format!("{step}"),
            });
        }
        for i in 2..n {
            let d = timestamps[i] - timestamps[i - 1];
            if d != step {
                return Err(Error::NonUniformStep {
                    row: i + 1,
                    expected: format!("{step}"),
                    actual: format!("{d}"),
                });
            }
        }
        Ok(PriceSeries {
            timestamps,
            rtp,
            dap,
            load,
        })
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    /// The uniform spacing between consecutive samples.
    pub fn step(&self) -> Duration {
        self.timestamps[1] - self.timestamps[0]
    }

    /// Number of steps per calendar day; the step must divide 24 hours.
    pub fn steps_per_day(&self) -> Result<usize> {
        let secs = self.step().num_seconds();
        if secs <= 0 || 86_400 % secs != 0 {
            return Err(Error::InvalidArgument {
                what: "series step",
                reason: format!("{secs} s does not divide one day"),
            });
        }
        Ok((86_400 / secs) as usize)
    }

    /// Number of feature channels (rtp, dap, and load when present).
    pub fn channel_count(&self) -> usize {
        2 + usize::from(self.load.is_some())
    }
}

// ---------------------------------------------------------------------------
// CSV ingestion

/// Column names and timestamp formats accepted by the CSV loaders. The load
/// column is used only when the header contains it.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CsvSchema {
    pub timestamp_col: String,
    pub rtp_col: String,
    pub dap_col: String,
    pub load_col: String,
    pub timestamp_formats: Vec<String>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema {
            timestamp_col: "timestamp".into(),
            rtp_col: "rtp".into(),
            dap_col: "dap".into(),
            load_col: "load".into(),
            timestamp_formats: vec![
                "%Y-%m-%dT%H:%M:%S".into(),
                "%Y-%m-%d %H:%M:%S".into(),
                "%Y-%m-%d %H:%M".into(),
            ],
        }
    }
}

struct RawRows {
    timestamps: Vec<NaiveDateTime>,
    rtp: Vec<f64>,
    dap: Vec<f64>,
    load: Option<Vec<f64>>,
    lines: Vec<usize>,
}

/// Accepts plain floats plus quoted thousands-separator forms ("1,234.5").
fn parse_number(raw: &str) -> Option<f64> {
    let t = raw.trim();
    let direct = t.parse::<f64>().ok();
    let v = direct.or_else(|| t.replace(',', "").parse::<f64>().ok())?;
    v.is_finite().then_some(v)
}

fn parse_timestamp(raw: &str, formats: &[String]) -> Option<NaiveDateTime> {
    let t = raw.trim();
    formats
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(t, f).ok())
}

fn read_raw_rows(path: &Path, schema: &CsvSchema) -> Result<RawRows> {
    let display = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(display.clone(), io),
            other => Error::SchemaMismatch {
                what: "price csv",
                reason: format!("{other:?}"),
            },
        })?;

    let headers = reader
        .headers()
        .map_err(|e| Error::SchemaMismatch {
            what: "price csv",
            reason: e.to_string(),
        })?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let ts_idx = col(&schema.timestamp_col).ok_or_else(|| Error::SchemaMismatch {
        what: "price csv",
        reason: format!("missing column '{}'", schema.timestamp_col),
    })?;
    let rtp_idx = col(&schema.rtp_col).ok_or_else(|| Error::SchemaMismatch {
        what: "price csv",
        reason: format!("missing column '{}'", schema.rtp_col),
    })?;
    let dap_idx = col(&schema.dap_col).ok_or_else(|| Error::SchemaMismatch {
        what: "price csv",
        reason: format!("missing column '{}'", schema.dap_col),
    })?;
    let load_idx = col(&schema.load_col);

    let mut rows = RawRows {
        timestamps: Vec::new(),
        rtp: Vec::new(),
        dap: Vec::new(),
        load: load_idx.map(|_| Vec::new()),
        lines: Vec::new(),
    };
    for record in reader.records() {
        let record = record.map_err(|e| Error::SchemaMismatch {
            what: "price csv",
            reason: e.to_string(),
        })?;
        let line = record
            .position()
            .map(|p| p.line() as usize)
            .unwrap_or(rows.timestamps.len() + 2);
        let field = |idx: usize, col_name: &str| -> Result<&str> {
            record.get(idx).ok_or_else(|| Error::ParseError {
                row: line,
                col: col_name.to_string(),
                message: "missing field".into(),
            })
        };
        let ts_raw = field(ts_idx, &schema.timestamp_col)?;
        let ts = parse_timestamp(ts_raw, &schema.timestamp_formats).ok_or_else(|| {
            Error::ParseError {
                row: line,
                col: schema.timestamp_col.clone(),
                message: format!("unrecognized timestamp '{ts_raw}'"),
            }
        })?;
        let number = |idx: usize, col_name: &str| -> Result<f64> {
            let raw = field(idx, col_name)?;
            parse_number(raw).ok_or_else(|| Error::ParseError {
                row: line,
                col: col_name.to_string(),
                message: format!("not a finite number: '{raw}'"),
            })
        };
        rows.timestamps.push(ts);
        rows.rtp.push(number(rtp_idx, &schema.rtp_col)?);
        rows.dap.push(number(dap_idx, &schema.dap_col)?);
        if let (Some(idx), Some(load)) = (load_idx, rows.load.as_mut()) {
            load.push(number(idx, &schema.load_col)?);
        }
        rows.lines.push(line);
    }
    Ok(rows)
}

/// Smallest positive spacing in the series; the reference step for gap
/// detection.
fn infer_step(rows: &RawRows) -> Result<Duration> {
    let mut step: Option<Duration> = None;
    for i in 1..rows.timestamps.len() {
        let d = rows.timestamps[i] - rows.timestamps[i - 1];
        if d <= Duration::zero() {
            return Err(Error::NonUniformStep {
                row: rows.lines[i],
                expected: "strictly increasing timestamps".into(),
                actual: format!("{d}"),
            });
        }
        step = Some(match step {
            Some(s) if s <= d => s,
            _ => d,
        });
    }
    step.ok_or(Error::InsufficientData {
        needed: 2,
        available: rows.timestamps.len(),
    })
}

/// Indices `i` where a whole-step gap precedes row `i`, plus the missing
/// timestamps. Misaligned spacings are an error.
fn find_gaps(rows: &RawRows, step: Duration) -> Result<(Vec<usize>, Vec<NaiveDateTime>)> {
    let step_s = step.num_seconds();
    let mut breaks = Vec::new();
    let mut missing = Vec::new();
    for i in 1..rows.timestamps.len() {
        let d = rows.timestamps[i] - rows.timestamps[i - 1];
        if d == step {
            continue;
        }
        if d.num_seconds() % step_s != 0 {
            return Err(Error::NonUniformStep {
                row: rows.lines[i],
                expected: format!("multiple of {step}"),
                actual: format!("{d}"),
            });
        }
        breaks.push(i);
        let mut t = rows.timestamps[i - 1] + step;
        while t < rows.timestamps[i] {
            missing.push(t);
            t += step;
        }
    }
    Ok((breaks, missing))
}

/// Strict loader: any missing timestamp is an error naming the gap.
pub fn load_price_csv(path: &Path, schema: &CsvSchema) -> Result<PriceSeries> {
    let rows = read_raw_rows(path, schema)?;
    let step = infer_step(&rows)?;
    let (_, missing) = find_gaps(&rows, step)?;
    if let Some(first) = missing.first().copied() {
        return Err(Error::Gap { missing, first });
    }
    PriceSeries::new(rows.timestamps, rows.rtp, rows.dap, rows.load)
}

/// Lenient loader: splits the file into maximal gap-free segments, dropping
/// the missing spans instead of imputing them. Segments too short to carry a
/// step (fewer than 2 rows) are discarded.
pub fn load_price_csv_segments(path: &Path, schema: &CsvSchema) -> Result<Vec<PriceSeries>> {
    let rows = read_raw_rows(path, schema)?;
    let step = infer_step(&rows)?;
    let (breaks, _) = find_gaps(&rows, step)?;
    let mut bounds = vec![0];
    bounds.extend(breaks);
    bounds.push(rows.timestamps.len());
    let mut segments = Vec::new();
    for w in bounds.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        if hi - lo < 2 {
            continue;
        }
        segments.push(PriceSeries::new(
            rows.timestamps[lo..hi].to_vec(),
            rows.rtp[lo..hi].to_vec(),
            rows.dap[lo..hi].to_vec(),
            rows.load.as_ref().map(|l| l[lo..hi].to_vec()),
        )?);
    }
    Ok(segments)
}

/// Writes a series back to the CSV schema the loaders accept. Floats use the
/// shortest representation that round-trips exactly.
pub fn write_price_csv(series: &PriceSeries, path: &Path) -> Result<()> {
    let mut text = String::new();
    let has_load = series.load.is_some();
    text.push_str(if has_load {
        "timestamp,rtp,dap,load\n"
    } else {
        "timestamp,rtp,dap\n"
    });
    for i in 0..series.len() {
        let _ = write!(
            text,
            "{},{},{}",
            series.timestamps[i].format("%Y-%m-%dT%H:%M:%S"),
            series.rtp[i],
            series.dap[i]
        );
        if let Some(load) = &series.load {
            let _ = write!(text, ",{}", load[i]);
        }
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

// ---------------------------------------------------------------------------
// Synthetic market

/// Hourly synthetic market: a daily price sinusoid between 20 and 60 $/MWh
/// with Gaussian noise (sigma 3), plus an evening spike below 200 $/MWh on
/// roughly one day in ten. The day-ahead channel is a 5-tap moving average
/// of the real-time channel, so it misses most of the spike. Deterministic
/// per seed.
pub fn synth_price_series(days: usize, seed: u64) -> Result<PriceSeries> {
    if days == 0 {
        return Err(Error::InvalidArgument {
            what: "days",
            reason: "must be at least 1".into(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 3.0).expect("fixed sigma");
    let n = days * 24;
    let mut rtp = Vec::with_capacity(n);
    for _ in 0..days {
        let day_noise: Vec<f64> = (0..24).map(|_| noise.sample(&mut rng)).collect();
        let spike = if rng.random_range(0.0..1.0) < 0.1 {
            let hour = rng.random_range(17..=21usize);
            let level = rng.random_range(140.0..200.0);
            Some((hour, level))
        } else {
            None
        };
        for h in 0..24 {
            let base = 40.0 + 20.0 * (2.0 * std::f64::consts::PI * (h as f64 - 15.0) / 24.0).cos();
            let v = match spike {
                Some((sh, level)) if sh == h => level,
                _ => base + day_noise[h],
            };
            rtp.push(v.max(-45.0));
        }
    }
    let dap: Vec<f64> = (0..n)
        .map(|i| {
            let lo = i.saturating_sub(2);
            let hi = (i + 3).min(n);
            rtp[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect();
    let start = NaiveDateTime::parse_from_str("2024-01-01T00:00:00", "%Y-%m-%dT%H:%M:%S")
        .expect("fixed start");
    let timestamps = (0..n)
        .map(|i| start + Duration::hours(i as i64))
        .collect();
    PriceSeries::new(timestamps, rtp, dap, None)
}

/// Parameters of the blended synthetic reward: a per-step convex mix of the
/// day-ahead and real-time channels plus Gaussian noise.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticGenConfig {
    pub alpha_low: f64,
    pub alpha_high: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SyntheticGenConfig {
    fn default() -> Self {
        SyntheticGenConfig {
            alpha_low: 0.5,
            alpha_high: 1.0,
            noise_std: 1.0,
            seed: 0,
        }
    }
}

impl SyntheticGenConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_low.is_finite() && self.alpha_high.is_finite())
            || self.alpha_low < 0.0
            || self.alpha_high > 1.0
            || self.alpha_low > self.alpha_high
        {
            return Err(Error::InvalidArgument {
                what: "alpha bounds",
                reason: format!(
                    "need 0 <= low <= high <= 1, got [{}, {}]",
                    self.alpha_low, self.alpha_high
                ),
            });
        }
        if !self.noise_std.is_finite() || self.noise_std < 0.0 {
            return Err(Error::InvalidArgument {
                what: "noise_std",
                reason: format!("must be finite and >= 0, got {}", self.noise_std),
            });
        }
        Ok(())
    }
}

/// Per step t: draw alpha uniformly from the configured band and zeta from
/// N(0, noise_std^2), then return alpha*dap_t + (1-alpha)*rtp_t + zeta.
/// Deterministic per seed.
pub fn synth_reward(series: &PriceSeries, cfg: &SyntheticGenConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = Normal::new(0.0, cfg.noise_std).expect("validated sigma");
    let mut out = Vec::with_capacity(series.len());
    for i in 0..series.len() {
        let alpha = if cfg.alpha_low == cfg.alpha_high {
            cfg.alpha_low
        } else {
            rng.random_range(cfg.alpha_low..cfg.alpha_high)
        };
        let zeta = noise.sample(&mut rng);
        out.push(alpha * series.dap[i] + (1.0 - alpha) * series.rtp[i] + zeta);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Target generation

/// Optimal net dispatch for every length-T window of a reward channel,
/// indexed by window start. `windows[j]` is the solution on steps
/// `[j, j + horizon)`.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowTargets {
    pub horizon: usize,
    pub series_len: usize,
    pub windows: Vec<Vec<f64>>,
}

impl WindowTargets {
    /// Wraps an existing per-step decision series (recorded behavior, or a
    /// generated one) so each window is simply its slice.
    pub fn from_flat_series(values: &[f64], horizon: usize) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::InvalidArgument {
                what: "horizon",
                reason: "must be at least 1".into(),
            });
        }
        if values.len() < horizon {
            return Err(Error::InsufficientData {
                needed: horizon,
                available: values.len(),
            });
        }
        Ok(WindowTargets {
            horizon,
            series_len: values.len(),
            windows: values.windows(horizon).map(|w| w.to_vec()).collect(),
        })
    }
}

/// Zeroes charge/discharge activity whose removal leaves the objective
/// within [`IDLE_TIE_TOL`], so flat-price ties resolve to idling instead of
/// the solver's interior point. Tries the all-idle schedule first (balanced
/// round trips cannot be removed one step at a time), then sweeps single
/// steps to a fixpoint. A zeroing is kept only if the schedule stays
/// feasible.
fn prefer_idle(
    schedule: DispatchSchedule,
    reward: &[f64],
    spec: &StorageSpec,
) -> Result<DispatchSchedule> {
    let slack = 1e-7 * (1.0 + spec.capacity_mwh.abs());
    let t_max = spec.horizon;
    let idle = DispatchSchedule::from_profiles(vec![0.0; t_max], vec![0.0; t_max], reward, spec)?;
    if schedule.objective - idle.objective < IDLE_TIE_TOL {
        return Ok(idle);
    }
    let mut best = schedule;
    loop {
        let mut changed = false;
        for t in 0..t_max {
            if best.discharge_mw[t] == 0.0 && best.charge_mw[t] == 0.0 {
                continue;
            }
            let mut p = best.discharge_mw.clone();
            let mut b = best.charge_mw.clone();
            p[t] = 0.0;
            b[t] = 0.0;
            let trial = DispatchSchedule::from_profiles(p, b, reward, spec)?;
            let feasible = check_feasible(&trial, spec, slack)?.is_empty();
            if feasible && best.objective - trial.objective < IDLE_TIE_TOL {
                best = trial;
                changed = true;
            }
        }
        if !changed {
            return Ok(best);
        }
    }
}

/// Solves every window of an arbitrary reward channel. The window length is
/// `spec.horizon`.
pub fn build_reward_targets(values: &[f64], spec: &StorageSpec) -> Result<WindowTargets> {
    spec.validate()?;
    let t = spec.horizon;
    if values.len() < t {
        return Err(Error::InsufficientData {
            needed: t,
            available: values.len(),
        });
    }
    let count = values.len() - t + 1;
    let windows: Vec<Vec<f64>> = (0..count)
        .into_par_iter()
        .map(|j| {
            let reward = &values[j..j + t];
            let schedule = solve_dispatch(reward, spec, DEFAULT_TOL)?;
            Ok(prefer_idle(schedule, reward, spec)?.net_mw)
        })
        .collect::<Result<_>>()?;
    Ok(WindowTargets {
        horizon: t,
        series_len: values.len(),
        windows,
    })
}

/// Standard target generation: optimal dispatch against the realized
/// real-time price of each window.
pub fn build_arbitrage_targets(series: &PriceSeries, spec: &StorageSpec) -> Result<WindowTargets> {
    build_reward_targets(&series.rtp, spec)
}

/// Synthesizes a storage behavior series: blends a governing reward from
/// the two price channels, then solves consecutive non-overlapping
/// horizon-length windows and concatenates the dispatches. Steps past the
/// last full window stay idle.
pub fn synth_behavior_series(
    series: &PriceSeries,
    spec: &StorageSpec,
    cfg: &SyntheticGenConfig,
) -> Result<Vec<f64>> {
    spec.validate()?;
    let reward = synth_reward(series, cfg)?;
    let t = spec.horizon;
    let mut out = vec![0.0; series.len()];
    let full = series.len() / t;
    let dispatches: Vec<Vec<f64>> = (0..full)
        .into_par_iter()
        .map(|k| {
            let window = &reward[k * t..(k + 1) * t];
            let schedule = solve_dispatch(window, spec, DEFAULT_TOL)?;
            Ok(prefer_idle(schedule, window, spec)?.net_mw)
        })
        .collect::<Result<_>>()?;
    for (k, w) in dispatches.into_iter().enumerate() {
        out[k * t..(k + 1) * t].copy_from_slice(&w);
    }
    Ok(out)
}

/// Writes a `timestamp,y` behavior series next to its price data.
pub fn write_behavior_csv(
    timestamps: &[NaiveDateTime],
    y: &[f64],
    path: &Path,
) -> Result<()> {
    if timestamps.len() != y.len() {
        return Err(Error::LengthMismatch {
            left_name: "timestamps",
            left: timestamps.len(),
            right_name: "behavior",
            right: y.len(),
        });
    }
    let mut text = String::from("timestamp,y\n");
    for (ts, v) in timestamps.iter().zip(y) {
        let _ = writeln!(text, "{},{}", ts.format("%Y-%m-%dT%H:%M:%S"), v);
    }
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Reads a `timestamp,y` behavior series.
pub fn load_behavior_csv(path: &Path) -> Result<(Vec<NaiveDateTime>, Vec<f64>)> {
    let display = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(display.clone(), io),
            other => Error::SchemaMismatch {
                what: "behavior csv",
                reason: format!("{other:?}"),
            },
        })?;
    let headers = reader
        .headers()
        .map_err(|e| Error::SchemaMismatch {
            what: "behavior csv",
            reason: e.to_string(),
        })?
        .clone();
    let ts_idx = headers
        .iter()
        .position(|h| h.trim() == "timestamp")
        .ok_or(Error::SchemaMismatch {
            what: "behavior csv",
            reason: "missing column 'timestamp'".into(),
        })?;
    let y_idx = headers
        .iter()
        .position(|h| h.trim() == "y")
        .ok_or(Error::SchemaMismatch {
            what: "behavior csv",
            reason: "missing column 'y'".into(),
        })?;
    let formats = CsvSchema::default().timestamp_formats;
    let mut timestamps = Vec::new();
    let mut y = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::SchemaMismatch {
            what: "behavior csv",
            reason: e.to_string(),
        })?;
        let line = record
            .position()
            .map(|p| p.line() as usize)
            .unwrap_or(timestamps.len() + 2);
        let ts_raw = record.get(ts_idx).unwrap_or("");
        let ts = parse_timestamp(ts_raw, &formats).ok_or_else(|| Error::ParseError {
            row: line,
            col: "timestamp".into(),
            message: format!("unrecognized timestamp '{ts_raw}'"),
        })?;
        let raw = record.get(y_idx).unwrap_or("");
        let v = parse_number(raw).ok_or_else(|| Error::ParseError {
            row: line,
            col: "y".into(),
            message: format!("not a finite number: '{raw}'"),
        })?;
        timestamps.push(ts);
        y.push(v);
    }
    Ok((timestamps, y))
}

// ---------------------------------------------------------------------------
// Rolling dataset

/// Which channel supplies the prior price vector of each sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PriorChannel {
    #[default]
    Rtp,
    Dap,
}

/// One supervised sample: an L-step feature window, the optimal net dispatch
/// of the following T steps, the previous-day prior price slice, and the
/// realized real-time price of the target window. `anchor` is the series
/// index of the first target step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub features: FeatureWindow,
    pub target_y: Vec<f64>,
    pub prior_price_xi: Vec<f64>,
    pub realized_rtp: Vec<f64>,
    pub anchor: usize,
}

/// A rolling-window dataset with fixed look-back and horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub lookback: usize,
    pub horizon: usize,
    pub samples: Vec<Sample>,
}

/// Builds samples by sliding a window over the series. Sample i uses feature
/// steps `[i, i+L)`, target steps `[i+L, i+L+T)`, and the prior slice one
/// day before the target. Anchors whose prior slice would precede the series
/// are skipped, which only happens when the look-back is shorter than a day.
pub fn build_rolling_dataset(
    series: &PriceSeries,
    targets: &WindowTargets,
    lookback: usize,
    horizon: usize,
    step: usize,
    prior: PriorChannel,
) -> Result<Dataset> {
    if lookback == 0 || horizon == 0 || step == 0 {
        return Err(Error::InvalidArgument {
            what: "window layout",
            reason: format!("lookback {lookback}, horizon {horizon}, step {step} must all be >= 1"),
        });
    }
    if targets.horizon != horizon {
        return Err(Error::ShapeMismatch {
            what: "target windows",
            expected: format!("horizon {horizon}"),
            actual: format!("horizon {}", targets.horizon),
        });
    }
    if targets.series_len != series.len() {
        return Err(Error::LengthMismatch {
            left_name: "price series",
            left: series.len(),
            right_name: "target windows",
            right: targets.series_len,
        });
    }
    let n = series.len();
    if n < lookback + horizon {
        return Err(Error::InsufficientData {
            needed: lookback + horizon,
            available: n,
        });
    }
    let spd = series.steps_per_day()?;
    let first = spd.saturating_sub(lookback);
    let last = n - lookback - horizon;
    if first > last {
        return Err(Error::InsufficientData {
            needed: first + lookback + horizon,
            available: n,
        });
    }

    let cols = series.channel_count();
    let mut samples = Vec::new();
    let mut i = first;
    while i <= last {
        let mut values = Vec::with_capacity(lookback * cols);
        for r in i..i + lookback {
            values.push(series.rtp[r]);
            values.push(series.dap[r]);
            if let Some(load) = &series.load {
                values.push(load[r]);
            }
        }
        let anchor = i + lookback;
        let prior_start = anchor - spd;
        let channel = match prior {
            PriorChannel::Rtp => &series.rtp,
            PriorChannel::Dap => &series.dap,
        };
        samples.push(Sample {
            features: FeatureWindow::new(lookback, cols, values)?,
            target_y: targets.windows[anchor].clone(),
            prior_price_xi: channel[prior_start..prior_start + horizon].to_vec(),
            realized_rtp: series.rtp[anchor..anchor + horizon].to_vec(),
            anchor,
        });
        i += step;
    }
    Ok(Dataset {
        lookback,
        horizon,
        samples,
    })
}

impl Dataset {
    /// Writes one sample per line as JSON.
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut text = String::new();
        for s in &self.samples {
            let line = serde_json::to_string(s).map_err(|e| Error::SchemaMismatch {
                what: "dataset",
                reason: e.to_string(),
            })?;
            text.push_str(&line);
            text.push('\n');
        }
        std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
    }

    /// Reads a JSON-lines file written by [`Dataset::write_jsonl`],
    /// rejecting mixed shapes.
    pub fn read_jsonl(path: &Path) -> Result<Dataset> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut samples: Vec<Sample> = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let s: Sample = serde_json::from_str(line).map_err(|e| Error::ParseError {
                row: idx + 1,
                col: "sample".into(),
                message: e.to_string(),
            })?;
            samples.push(s);
        }
        let first = samples.first().ok_or(Error::InsufficientData {
            needed: 1,
            available: 0,
        })?;
        let (lookback, horizon) = (first.features.rows, first.target_y.len());
        for (idx, s) in samples.iter().enumerate() {
            if s.features.rows != lookback
                || s.features.cols != first.features.cols
                || s.target_y.len() != horizon
                || s.prior_price_xi.len() != horizon
                || s.realized_rtp.len() != horizon
            {
                return Err(Error::SchemaMismatch {
                    what: "dataset",
                    reason: format!("sample on line {} has inconsistent shape", idx + 1),
                });
            }
        }
        Ok(Dataset {
            lookback,
            horizon,
            samples,
        })
    }
}
