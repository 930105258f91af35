//! Timestamp generation for one TWR transaction and the SS-TWR / DS-TWR
//! time-of-flight estimators.
//!
//! The simulator builds the *exact* event times of the exchange — no
//! small-skew or short-flight approximations — then maps each event through
//! the owning transceiver's affine clock and adds timestamping noise. The
//! approximations the closed-form error models rely on live only in
//! [`crate::analytics`], so tests can measure how good they are instead of
//! baking them in.
//!
//! Event times are relative to the transaction origin (the true time of the
//! first transmission):
//!
//! ```text
//! T1 = 0                 first transmission (transceiver i)
//! T2 = tf1               reception at j
//! T3 = T2 + dt32         first response (j)           [delay in true time]
//! T4 = T3 + tf2          reception at i
//! T5 = T3 + dt53         second response (j)
//! T6 = T5 + tf3          reception at i
//! ```
//!
//! Under constant-velocity relative motion the per-message flight times are
//! `tf2 = tf1 + vbar * dt32` and `tf3 = tf2 + vbar * dt53`.

use rand::Rng;

use crate::timebase::{ClockParams, NoiseModel, Seconds};
use crate::{Error, Result};

/// Geometry and kinematics of one ranging scene.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scene {
    /// Time of flight at the start of the transaction (`tf1` under motion).
    pub tof_initial: Seconds,
    /// Relative radial velocity over the speed of light (`v / c`).
    pub vbar: f64,
}

/// Relative speeds beyond ~300 m/s are outside the model's intent.
pub const MAX_VBAR: f64 = 1e-6;

impl Scene {
    /// Static scene at the given time of flight.
    pub fn static_at(tof: Seconds) -> Self {
        Scene { tof_initial: tof, vbar: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tof_initial.0.is_finite() && self.tof_initial.0 >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "time of flight must be nonnegative, got {}",
                self.tof_initial.0
            )));
        }
        if !(self.vbar.is_finite() && self.vbar.abs() < MAX_VBAR) {
            return Err(Error::InvalidConfig(format!(
                "relative velocity ratio must satisfy |vbar| < {MAX_VBAR}, got {}",
                self.vbar
            )));
        }
        Ok(())
    }
}

/// The user-programmed delays of the exchange plus per-measurement
/// processing time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimingConfig {
    /// First response delay (between T2 and T3).
    pub dt32: Seconds,
    /// Second response delay (between T3 and T5).
    pub dt53: Seconds,
    /// Fixed processing overhead per measurement (register reads, range
    /// computation); only affects measurement rate, not timestamps.
    pub processing: Seconds,
}

impl TimingConfig {
    pub fn new(dt32: Seconds, dt53: Seconds, processing: Seconds) -> Result<Self> {
        let timing = TimingConfig { dt32, dt53, processing };
        timing.validate()?;
        Ok(timing)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt32.0.is_finite() && self.dt32.0 > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "dt32 must be positive, got {}",
                self.dt32.0
            )));
        }
        if !(self.dt53.0.is_finite() && self.dt53.0 > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "dt53 must be positive, got {}",
                self.dt53.0
            )));
        }
        if !(self.processing.0.is_finite() && self.processing.0 >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "processing time must be nonnegative, got {}",
                self.processing.0
            )));
        }
        Ok(())
    }

    /// Wall-clock length of one full measurement: `processing + dt32 + dt53`.
    pub fn measurement_period(&self) -> Seconds {
        Seconds(self.processing.0 + self.dt32.0 + self.dt53.0)
    }

    /// The error models assume the response delay dwarfs the flight time.
    /// Returns a warning when `dt32 < 1000 * tof`.
    pub fn short_delay_warning(&self, scene: &Scene) -> Option<String> {
        if self.dt32.0 < 1000.0 * scene.tof_initial.0 {
            Some(format!(
                "dt32 = {:.3e} s is less than 1000x the time of flight ({:.3e} s); \
                 the closed-form bias/variance models assume dt32 >> tof",
                self.dt32.0, scene.tof_initial.0
            ))
        } else {
            None
        }
    }
}

/// Which estimator a value belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Protocol {
    Ss,
    Ds,
}

impl std::fmt::Display for Protocol {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Protocol::Ss => write!(f, "ss"),
            Protocol::Ds => write!(f, "ds"),
        }
    }
}

/// Timestamp-set mode: SS-only (first two messages) or full DS exchange.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    SsOnly,
    Ds,
}

/// The second-response timestamps present only in DS mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DsTimestamps {
    /// Second response transmission, in transceiver j's clock.
    pub t5_j: Seconds,
    /// Second response reception, in transceiver i's clock.
    pub t6_i: Seconds,
}

/// The noisy timestamps recorded during one transaction.
///
/// `t1_i`, `t4_i` (and `t6_i`) are readings of transceiver i's clock;
/// `t2_j`, `t3_j` (and `t5_j`) of transceiver j's.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimestampSet {
    pub t1_i: Seconds,
    pub t2_j: Seconds,
    pub t3_j: Seconds,
    pub t4_i: Seconds,
    /// `None` for an SS-only exchange.
    pub ds: Option<DsTimestamps>,
}

impl TimestampSet {
    pub fn mode(&self) -> Mode {
        if self.ds.is_some() {
            Mode::Ds
        } else {
            Mode::SsOnly
        }
    }

    /// An SS-only set (two messages, four timestamps).
    pub fn ss_only(t1_i: Seconds, t2_j: Seconds, t3_j: Seconds, t4_i: Seconds) -> Self {
        TimestampSet { t1_i, t2_j, t3_j, t4_i, ds: None }
    }

    pub fn validate(&self) -> Result<()> {
        if self.t4_i <= self.t1_i {
            return Err(Error::InvalidConfig("t4_i must exceed t1_i".into()));
        }
        if self.t3_j <= self.t2_j {
            return Err(Error::InvalidConfig("t3_j must exceed t2_j".into()));
        }
        if let Some(ds) = &self.ds {
            if ds.t5_j <= self.t3_j {
                return Err(Error::InvalidConfig("t5_j must exceed t3_j".into()));
            }
            if ds.t6_i <= self.t4_i {
                return Err(Error::InvalidConfig("t6_i must exceed t4_i".into()));
            }
        }
        Ok(())
    }

    /// CSV header matching [`TimestampSet::csv_row`].
    pub fn csv_header() -> &'static str {
        "t1_i,t2_j,t3_j,t4_i,t5_j,t6_i,mode"
    }

    /// One CSV row; SS-only sets leave the t5/t6 cells empty.
    pub fn csv_row(&self) -> String {
        let f = crate::csv_float;
        let (t5, t6, mode) = match &self.ds {
            Some(ds) => (f(ds.t5_j.0), f(ds.t6_i.0), "ds"),
            None => (String::new(), String::new(), "ss"),
        };
        format!(
            "{},{},{},{},{},{},{}",
            f(self.t1_i.0),
            f(self.t2_j.0),
            f(self.t3_j.0),
            f(self.t4_i.0),
            t5,
            t6,
            mode
        )
    }
}

/// A time-of-flight estimate and its distance equivalent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TofEstimate {
    pub tof: Seconds,
    pub protocol: Protocol,
    /// `tof` converted to metres at the speed of light.
    pub range_m: f64,
}

impl TofEstimate {
    fn new(tof: Seconds, protocol: Protocol) -> Self {
        TofEstimate { tof, protocol, range_m: tof.to_metres() }
    }
}

/// Simulate the six timestamps of one full DS-TWR transaction.
///
/// Event times are built exactly from the scene and timing (see the module
/// docs), mapped through each owner's clock, and perturbed by six
/// independent noise draws in chronological order.
pub fn simulate_transaction<R: Rng>(
    scene: &Scene,
    clock_i: &ClockParams,
    clock_j: &ClockParams,
    timing: &TimingConfig,
    noise: &NoiseModel,
    rng: &mut R,
) -> Result<TimestampSet> {
    scene.validate()?;
    timing.validate()?;
    clock_i.validate()?;
    clock_j.validate()?;
    noise.validate()?;

    // Per-message flight times under constant-velocity motion.
    let tf1 = scene.tof_initial.0;
    let tf2 = tf1 + scene.vbar * timing.dt32.0;
    let tf3 = tf2 + scene.vbar * timing.dt53.0;

    // True event times relative to the transaction origin.
    let t1 = 0.0;
    let t2 = tf1;
    let t3 = tf1 + timing.dt32.0;
    let t4 = t3 + tf2;
    let t5 = t3 + timing.dt53.0;
    let t6 = t5 + tf3;

    Ok(TimestampSet {
        t1_i: clock_i.to_clock(Seconds(t1)) + noise.sample_noise(rng),
        t2_j: clock_j.to_clock(Seconds(t2)) + noise.sample_noise(rng),
        t3_j: clock_j.to_clock(Seconds(t3)) + noise.sample_noise(rng),
        t4_i: clock_i.to_clock(Seconds(t4)) + noise.sample_noise(rng),
        ds: Some(DsTimestamps {
            t5_j: clock_j.to_clock(Seconds(t5)) + noise.sample_noise(rng),
            t6_i: clock_i.to_clock(Seconds(t6)) + noise.sample_noise(rng),
        }),
    })
}

/// SS-TWR estimate: half the difference between the round-trip interval
/// seen by i and the response delay seen by j.
pub fn estimate_ss(ts: &TimestampSet) -> TofEstimate {
    let d41 = ts.t4_i.0 - ts.t1_i.0;
    let d32 = ts.t3_j.0 - ts.t2_j.0;
    TofEstimate::new(Seconds(0.5 * (d41 - d32)), Protocol::Ss)
}

/// DS-TWR estimate: the SS estimate with the response delay rescaled by the
/// interval ratio `(t6 - t4) / (t5 - t3)`, which cancels the relative-skew
/// bias.
///
/// Evaluated as `0.5 * ((d41 - d32) - (d64 - d53) * d32 / d53)`, which is
/// algebraically identical to `0.5 * (d41 - (d64 / d53) * d32)` but keeps
/// the two large, nearly equal interval pairs in exact subtractions.
pub fn estimate_ds(ts: &TimestampSet) -> Result<TofEstimate> {
    let tail = ts.ds.as_ref().ok_or(Error::SsOnlyTimestamps)?;
    let d41 = ts.t4_i.0 - ts.t1_i.0;
    let d32 = ts.t3_j.0 - ts.t2_j.0;
    let d53 = tail.t5_j.0 - ts.t3_j.0;
    let d64 = tail.t6_i.0 - ts.t4_i.0;
    if d53 == 0.0 {
        return Err(Error::DegenerateInterval("t5_j - t3_j is zero"));
    }
    let tof = 0.5 * ((d41 - d32) - (d64 - d53) * (d32 / d53));
    Ok(TofEstimate::new(Seconds(tof), Protocol::Ds))
}
