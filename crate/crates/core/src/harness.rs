//! Monte Carlo experiment engine: per-trial statistics, sweeps of the
//! second response delay, discrete-event ranging sessions, and CSV output.
//!
//! Trials are reproducible: a trial derives its noise stream from its seed
//! alone, so identical configs give bit-identical results regardless of
//! which worker runs them. Sweep rows run in parallel and are merged by row
//! index, never by completion order.

use std::io::{self, Write};

use rayon::prelude::*;

use crate::analytics::ds_variance;
use crate::optimizer::{r_avg, ObjectiveParams};
use crate::protocol::{
    estimate_ds, estimate_ss, simulate_transaction, Protocol, Scene, TimestampSet, TimingConfig,
};
use crate::timebase::{worker_stream, ClockParams, NoiseModel, Seconds, SecondsSq};
use crate::{Error, Result};

/// Default per-timestamp noise variance, reverse-engineered from a DS-TWR
/// standard deviation that converges to about 2.5 cm at long second-response
/// delays: sigma = 0.025 m / c ~ 83.4 ps, R = sigma^2 ~ 6.96e-21 s².
/// Override freely; nothing else in the crate depends on it.
pub const DEFAULT_NOISE_VARIANCE: SecondsSq = SecondsSq(6.96e-21);

/// Everything needed to run one trial of repeated transactions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialConfig {
    /// Measurements per trial.
    pub n_measurements: usize,
    pub timing: TimingConfig,
    pub scene: Scene,
    pub clock_i: ClockParams,
    pub clock_j: ClockParams,
    pub noise: NoiseModel,
    /// Master seed for the trial's noise stream.
    pub seed: u64,
}

impl TrialConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_measurements < 2 {
            return Err(Error::InvalidConfig(format!(
                "a trial needs at least 2 measurements, got {}",
                self.n_measurements
            )));
        }
        self.timing.validate()?;
        self.scene.validate()?;
        self.clock_i.validate()?;
        self.clock_j.validate()?;
        self.noise.validate()
    }
}

/// Sample statistics of the time-of-flight error over one trial.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialResult {
    /// Sample mean of `estimate - tof_initial`.
    pub mean_error: Seconds,
    /// Unbiased sample variance of the error.
    pub variance: SecondsSq,
    /// Number of measurements.
    pub n: usize,
}

impl TrialResult {
    pub fn std(&self) -> Seconds {
        self.variance.sqrt()
    }

    /// Standard deviation as an equivalent distance in centimetres.
    pub fn std_cm(&self) -> f64 {
        self.std().to_cm()
    }

    /// Mean error as an equivalent distance in centimetres.
    pub fn mean_error_cm(&self) -> f64 {
        self.mean_error.to_cm()
    }
}

/// One record of a dt53 sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub dt53: Seconds,
    pub empirical_std: Seconds,
    /// Whole measurements per second: `floor(1 / period)`.
    pub empirical_rate: f64,
    /// Empirical variance times the measurement period, in s²·s.
    pub empirical_r_avg: f64,
    pub analytic_std: Seconds,
    /// The continuous-relaxation objective at this dt53, in s²·s.
    pub analytic_r_avg: f64,
}

/// Single-pass mean/variance accumulator.
#[derive(Debug, Default, Clone, Copy)]
struct Welford {
    n: usize,
    mean: f64,
    m2: f64,
}

impl Welford {
    fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    fn result(&self) -> TrialResult {
        TrialResult {
            mean_error: Seconds(self.mean),
            variance: SecondsSq(if self.n > 1 { self.m2 / (self.n - 1) as f64 } else { 0.0 }),
            n: self.n,
        }
    }
}

fn apply_estimator(ts: &TimestampSet, protocol: Protocol) -> Result<f64> {
    Ok(match protocol {
        Protocol::Ss => estimate_ss(ts).tof.0,
        Protocol::Ds => estimate_ds(ts)?.tof.0,
    })
}

/// Run `cfg.n_measurements` independent transactions and return the error
/// statistics of the chosen estimator.
///
/// Every transaction simulates the full DS exchange; the SS estimator just
/// reads the first four timestamps, so SS and DS statistics for the same
/// seed come from identical transactions.
pub fn run_trial(cfg: &TrialConfig, protocol: Protocol) -> Result<TrialResult> {
    cfg.validate()?;
    let mut rng = worker_stream(cfg.seed, 0);
    let mut stats = Welford::default();
    for _ in 0..cfg.n_measurements {
        let ts = simulate_transaction(
            &cfg.scene,
            &cfg.clock_i,
            &cfg.clock_j,
            &cfg.timing,
            &cfg.noise,
            &mut rng,
        )?;
        stats.push(apply_estimator(&ts, protocol)? - cfg.scene.tof_initial.0);
    }
    Ok(stats.result())
}

/// The exact transaction sequence a trial with this config consumes, for
/// per-transaction logging.
pub fn transaction_log(cfg: &TrialConfig) -> Result<Vec<TimestampSet>> {
    cfg.validate()?;
    let mut rng = worker_stream(cfg.seed, 0);
    (0..cfg.n_measurements)
        .map(|_| {
            simulate_transaction(
                &cfg.scene,
                &cfg.clock_i,
                &cfg.clock_j,
                &cfg.timing,
                &cfg.noise,
                &mut rng,
            )
        })
        .collect()
}

/// Run one DS trial per `dt53` value and pair the empirical statistics with
/// the analytic models.
///
/// Rows execute in parallel and all reuse the base seed, so every row sees
/// the same noise realization (common random numbers). That makes the
/// empirical std and averaged uncertainty smooth functions of `dt53`,
/// directly comparable with the analytic curves even at a few thousand
/// measurements per row.
pub fn sweep_dt53(base: &TrialConfig, dt53_values: &[Seconds]) -> Result<Vec<SweepRow>> {
    let objective = ObjectiveParams {
        dt32: base.timing.dt32,
        processing: base.timing.processing,
        noise_variance: base.noise.variance,
    };
    dt53_values
        .par_iter()
        .map(|&dt53| {
            let mut cfg = *base;
            cfg.timing.dt53 = dt53;
            let trial = run_trial(&cfg, Protocol::Ds)?;
            let period = cfg.timing.measurement_period().0;
            let analytic = ds_variance(cfg.noise.variance, cfg.timing.dt32, dt53)?;
            Ok(SweepRow {
                dt53,
                empirical_std: trial.variance.sqrt(),
                empirical_rate: (1.0 / period).floor(),
                empirical_r_avg: trial.variance.0 * period,
                analytic_std: analytic.sqrt(),
                analytic_r_avg: r_avg(dt53, &objective)?,
            })
        })
        .collect()
}

/// Discrete-event ranging session: transactions run back to back, each
/// occupying one measurement period, for as long as they fit in `duration`.
pub fn run_session(duration: Seconds, cfg: &TrialConfig) -> Result<TrialResult> {
    if !(duration.0.is_finite() && duration.0 > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "session duration must be positive, got {}",
            duration.0
        )));
    }
    cfg.timing.validate()?;
    cfg.scene.validate()?;
    cfg.clock_i.validate()?;
    cfg.clock_j.validate()?;
    cfg.noise.validate()?;

    let period = cfg.timing.measurement_period().0;
    let count = (duration.0 / period).floor() as usize;
    if count == 0 {
        return Err(Error::ZeroMeasurements);
    }

    let mut rng = worker_stream(cfg.seed, 0);
    let mut stats = Welford::default();
    let mut session_clock = 0.0f64;
    for _ in 0..count {
        let ts = simulate_transaction(
            &cfg.scene,
            &cfg.clock_i,
            &cfg.clock_j,
            &cfg.timing,
            &cfg.noise,
            &mut rng,
        )?;
        stats.push(apply_estimator(&ts, Protocol::Ds)? - cfg.scene.tof_initial.0);
        session_clock += period;
    }
    debug_assert!(session_clock <= duration.0 * (1.0 + 1e-12));
    Ok(stats.result())
}

/// SS-TWR trial in which the initiator's skew ramps linearly by
/// `skew_drift_per_trial` across the trial (centred on its nominal value).
///
/// The drifting relative skew turns the SS bias into a wandering offset,
/// which inflates the sample variance beyond the noise floor R — the same
/// effect that makes long SS-TWR recordings look noisier than DS-TWR ones.
pub fn ss_drift_experiment(cfg: &TrialConfig, skew_drift_per_trial: f64) -> Result<TrialResult> {
    cfg.validate()?;
    if !skew_drift_per_trial.is_finite() {
        return Err(Error::InvalidConfig("skew drift must be finite".into()));
    }
    let n = cfg.n_measurements;
    let mut rng = worker_stream(cfg.seed, 0);
    let mut stats = Welford::default();
    for k in 0..n {
        let fraction = k as f64 / (n - 1) as f64 - 0.5;
        let clock_i = ClockParams {
            offset: cfg.clock_i.offset,
            skew: cfg.clock_i.skew + skew_drift_per_trial * fraction,
        };
        let ts = simulate_transaction(
            &cfg.scene,
            &clock_i,
            &cfg.clock_j,
            &cfg.timing,
            &cfg.noise,
            &mut rng,
        )?;
        stats.push(estimate_ss(&ts).tof.0 - cfg.scene.tof_initial.0);
    }
    Ok(stats.result())
}

/// Write sweep rows as CSV with a header, floats at 12 significant digits.
pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: &mut W) -> io::Result<()> {
    let f = crate::csv_float;
    writeln!(
        out,
        "dt53,empirical_std,empirical_rate,empirical_r_avg,analytic_std,analytic_r_avg"
    )?;
    for row in rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            f(row.dt53.0),
            f(row.empirical_std.0),
            f(row.empirical_rate),
            f(row.empirical_r_avg),
            f(row.analytic_std.0),
            f(row.analytic_r_avg),
        )?;
    }
    Ok(())
}

/// Write a per-transaction timestamp log as CSV.
pub fn write_timestamp_csv<W: Write>(sets: &[TimestampSet], out: &mut W) -> io::Result<()> {
    writeln!(out, "{}", TimestampSet::csv_header())?;
    for ts in sets {
        writeln!(out, "{}", ts.csv_row())?;
    }
    Ok(())
}
