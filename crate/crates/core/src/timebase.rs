//! Unit-safe time quantities, affine clock models, and the
//! timestamping-noise model shared by every other module.
//!
//! All simulation times are double-precision **seconds relative to the
//! transaction origin** (the true time of the first transmission). Keeping
//! timestamps near zero preserves sub-picosecond resolution that would be
//! destroyed by epoch-scale (~1e9 s) absolute timestamps; absolute origins,
//! when needed, are metadata carried elsewhere.

use rand::Rng;
use rand::SeedableRng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::{Error, Result};

/// A time quantity in seconds.
///
/// Arithmetic is closed over the type; multiplying two `Seconds` yields
/// [`SecondsSq`], the unit of timestamp variances.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default)]
pub struct Seconds(pub f64);

/// A squared-time quantity in seconds², used for variances.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default)]
pub struct SecondsSq(pub f64);

impl Seconds {
    /// Validating constructor; rejects non-finite values.
    pub fn checked(value: f64) -> Result<Self> {
        if value.is_finite() {
            Ok(Seconds(value))
        } else {
            Err(Error::InvalidConfig(format!(
                "time value must be finite, got {value}"
            )))
        }
    }

    pub fn abs(self) -> Seconds {
        Seconds(self.0.abs())
    }

    /// Equivalent one-way distance in metres at the speed of light.
    pub fn to_metres(self) -> f64 {
        self.0 * crate::SPEED_OF_LIGHT
    }

    /// Equivalent one-way distance in centimetres at the speed of light.
    pub fn to_cm(self) -> f64 {
        self.to_metres() * 100.0
    }
}

impl SecondsSq {
    pub fn sqrt(self) -> Seconds {
        Seconds(self.0.sqrt())
    }

    /// Variance on the equivalent distance, in cm².
    pub fn to_cm2(self) -> f64 {
        self.0 * (crate::SPEED_OF_LIGHT * 100.0) * (crate::SPEED_OF_LIGHT * 100.0)
    }
}

impl std::ops::Add for Seconds {
    type Output = Seconds;
    fn add(self, rhs: Seconds) -> Seconds {
        Seconds(self.0 + rhs.0)
    }
}

impl std::ops::Sub for Seconds {
    type Output = Seconds;
    fn sub(self, rhs: Seconds) -> Seconds {
        Seconds(self.0 - rhs.0)
    }
}

impl std::ops::Neg for Seconds {
    type Output = Seconds;
    fn neg(self) -> Seconds {
        Seconds(-self.0)
    }
}

impl std::ops::Mul<f64> for Seconds {
    type Output = Seconds;
    fn mul(self, rhs: f64) -> Seconds {
        Seconds(self.0 * rhs)
    }
}

impl std::ops::Mul<Seconds> for f64 {
    type Output = Seconds;
    fn mul(self, rhs: Seconds) -> Seconds {
        Seconds(self * rhs.0)
    }
}

/// seconds × seconds = seconds² (variance unit).
impl std::ops::Mul<Seconds> for Seconds {
    type Output = SecondsSq;
    fn mul(self, rhs: Seconds) -> SecondsSq {
        SecondsSq(self.0 * rhs.0)
    }
}

/// Ratio of two time intervals is dimensionless.
impl std::ops::Div<Seconds> for Seconds {
    type Output = f64;
    fn div(self, rhs: Seconds) -> f64 {
        self.0 / rhs.0
    }
}

impl std::ops::Add for SecondsSq {
    type Output = SecondsSq;
    fn add(self, rhs: SecondsSq) -> SecondsSq {
        SecondsSq(self.0 + rhs.0)
    }
}

impl std::ops::Sub for SecondsSq {
    type Output = SecondsSq;
    fn sub(self, rhs: SecondsSq) -> SecondsSq {
        SecondsSq(self.0 - rhs.0)
    }
}

impl std::ops::Mul<f64> for SecondsSq {
    type Output = SecondsSq;
    fn mul(self, rhs: f64) -> SecondsSq {
        SecondsSq(self.0 * rhs)
    }
}

impl std::ops::Div<SecondsSq> for SecondsSq {
    type Output = f64;
    fn div(self, rhs: SecondsSq) -> f64 {
        self.0 / rhs.0
    }
}

/// A transceiver's clock state over one ranging transaction.
///
/// The clock maps a true elapsed time `t` (since the transaction origin) to
/// the transceiver's own reading `t + offset + skew * t`. The skew is held
/// constant within a transaction; drift between transactions is a scenario
/// feature of the harness, not of the clock model.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ClockParams {
    /// Clock offset at the transaction origin.
    pub offset: Seconds,
    /// Dimensionless clock skew (rate error); e.g. 20e-6 is 20 ppm fast.
    pub skew: f64,
}

/// Clock skews beyond ±1000 ppm are outside any crystal's spec and rejected.
pub const MAX_SKEW: f64 = 1e-3;

impl ClockParams {
    pub fn new(offset: Seconds, skew: f64) -> Result<Self> {
        let clock = ClockParams { offset, skew };
        clock.validate()?;
        Ok(clock)
    }

    /// An ideal clock: zero offset, zero skew.
    pub fn ideal() -> Self {
        ClockParams::default()
    }

    pub fn validate(&self) -> Result<()> {
        if !self.offset.0.is_finite() {
            return Err(Error::InvalidConfig("clock offset must be finite".into()));
        }
        if !(self.skew.is_finite() && self.skew.abs() < MAX_SKEW) {
            return Err(Error::InvalidConfig(format!(
                "clock skew must satisfy |skew| < {MAX_SKEW}, got {}",
                self.skew
            )));
        }
        Ok(())
    }

    /// Map a true elapsed time since the transaction origin into this
    /// clock's reading: `t + offset + skew * t`.
    pub fn to_clock(&self, t: Seconds) -> Seconds {
        Seconds(t.0 + self.offset.0 + self.skew * t.0)
    }
}

/// Sampling distribution of the per-timestamp noise.
///
/// Only the first two moments matter to the variance models; `Gaussian` is
/// the default (and what the CRLB assumes), `Uniform` exists to probe the
/// models' distribution-robustness, and `None` disables noise entirely.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NoiseDistribution {
    #[default]
    Gaussian,
    Uniform,
    None,
}

/// Timestamping-noise model: zero-mean, mutually independent draws with a
/// common variance, optionally quantized to a device tick after sampling.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NoiseModel {
    /// Per-timestamp noise variance R, in seconds².
    pub variance: SecondsSq,
    pub distribution: NoiseDistribution,
    /// Post-noise rounding granularity (e.g. ~15.65 ps for DW1000-style
    /// timestamps). Off by default.
    pub quantization_tick: Option<Seconds>,
}

impl NoiseModel {
    pub fn gaussian(variance: SecondsSq) -> Result<Self> {
        let model = NoiseModel {
            variance,
            distribution: NoiseDistribution::Gaussian,
            quantization_tick: None,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn uniform(variance: SecondsSq) -> Result<Self> {
        let model = NoiseModel {
            variance,
            distribution: NoiseDistribution::Uniform,
            quantization_tick: None,
        };
        model.validate()?;
        Ok(model)
    }

    /// Noise-free model.
    pub fn none() -> Self {
        NoiseModel {
            variance: SecondsSq(0.0),
            distribution: NoiseDistribution::None,
            quantization_tick: None,
        }
    }

    pub fn with_quantization(mut self, tick: Seconds) -> Self {
        self.quantization_tick = Some(tick);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.variance.0.is_finite() && self.variance.0 >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "noise variance must be nonnegative, got {}",
                self.variance.0
            )));
        }
        if let Some(tick) = self.quantization_tick {
            if !(tick.0.is_finite() && tick.0 > 0.0) {
                return Err(Error::InvalidConfig(
                    "quantization tick must be positive".into(),
                ));
            }
        }
        Ok(())
    }

    /// One zero-mean draw with variance `self.variance`.
    ///
    /// `NoiseDistribution::None` always yields exactly zero. When a
    /// quantization tick is set, the draw is rounded to the nearest tick.
    pub fn sample_noise<R: Rng>(&self, rng: &mut R) -> Seconds {
        let raw = match self.distribution {
            NoiseDistribution::None => 0.0,
            NoiseDistribution::Gaussian => {
                let sigma = self.variance.0.sqrt();
                Normal::new(0.0, sigma)
                    .expect("validated variance")
                    .sample(rng)
            }
            NoiseDistribution::Uniform => {
                // Half-width sqrt(3 R) gives variance R.
                let half = (3.0 * self.variance.0).sqrt();
                if half == 0.0 {
                    0.0
                } else {
                    Uniform::new(-half, half).expect("validated half-width").sample(rng)
                }
            }
        };
        match self.quantization_tick {
            Some(tick) => Seconds((raw / tick.0).round() * tick.0),
            None => Seconds(raw),
        }
    }
}

/// The reproducible pseudorandom stream used throughout the crate.
pub type RandomStream = rand_chacha::ChaCha12Rng;

/// Derive an independent stream from a master seed and a worker index.
///
/// Streams for distinct indices never overlap, so parallel workers can each
/// own one while the overall experiment stays reproducible.
pub fn worker_stream(seed: u64, worker: u64) -> RandomStream {
    let mut rng = RandomStream::seed_from_u64(seed);
    rng.set_stream(worker);
    rng
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn to_clock_offset_only() {
        let clock = ClockParams::new(Seconds(1e-3), 0.0).unwrap();
        assert_eq!(clock.to_clock(Seconds(0.0)), Seconds(1e-3));
    }

    #[test]
    fn to_clock_affine_map() {
        let clock = ClockParams::new(Seconds(0.0), 20e-6).unwrap();
        let read = clock.to_clock(Seconds(1e-3));
        assert!((read.0 - 1.00002e-3).abs() < 1e-18);
    }

    #[test]
    fn to_clock_offset_and_skew() {
        // 3.5e-4 + 5e-4 + 40e-6 * 3.5e-4 = 8.50014e-4
        let clock = ClockParams::new(Seconds(5e-4), 40e-6).unwrap();
        let read = clock.to_clock(Seconds(3.5e-4));
        assert!((read.0 - 8.50014e-4).abs() < 1e-18, "got {}", read.0);
    }

    #[test]
    fn skew_outside_spec_rejected() {
        assert!(ClockParams::new(Seconds(0.0), 1.5e-3).is_err());
        assert!(ClockParams::new(Seconds(0.0), -1e-3).is_err());
        assert!(ClockParams::new(Seconds(0.0), 999e-6).is_ok());
        assert!(ClockParams::new(Seconds(f64::NAN), 0.0).is_err());
    }

    #[test]
    fn noise_none_is_exactly_zero() {
        let mut rng = worker_stream(7, 0);
        let model = NoiseModel::none();
        for _ in 0..100 {
            assert_eq!(model.sample_noise(&mut rng), Seconds(0.0));
        }
    }

    #[test]
    fn negative_variance_rejected() {
        assert!(NoiseModel::gaussian(SecondsSq(-1.0)).is_err());
    }

    #[test]
    fn gaussian_mean_within_standard_error() {
        let r = SecondsSq(6.96e-21);
        let model = NoiseModel::gaussian(r).unwrap();
        let mut rng = worker_stream(42, 0);
        let n = 1_000_000usize;
        let mean: f64 = (0..n).map(|_| model.sample_noise(&mut rng).0).sum::<f64>() / n as f64;
        let bound = 3.0 * r.0.sqrt() / (n as f64).sqrt();
        assert!(mean.abs() < bound, "mean {mean} exceeds 3-sigma bound {bound}");
    }

    /// Two-sided chi-square 99% interval for the sample variance of n draws.
    fn chi2_band_99(n: usize, variance: f64) -> (f64, f64) {
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let df = (n - 1) as f64;
        let chi = ChiSquared::new(df).unwrap();
        (
            variance * chi.inverse_cdf(0.005) / df,
            variance * chi.inverse_cdf(0.995) / df,
        )
    }

    fn empirical_variance(model: &NoiseModel, seed: u64, n: usize) -> f64 {
        let mut rng = worker_stream(seed, 0);
        let mut mean = 0.0f64;
        let mut m2 = 0.0f64;
        for k in 0..n {
            let x = model.sample_noise(&mut rng).0;
            let delta = x - mean;
            mean += delta / (k + 1) as f64;
            m2 += delta * (x - mean);
        }
        m2 / (n - 1) as f64
    }

    #[test]
    fn gaussian_variance_in_chi2_band() {
        let r = 6.96e-21;
        let model = NoiseModel::gaussian(SecondsSq(r)).unwrap();
        let n = 1_000_000;
        let s2 = empirical_variance(&model, 3, n);
        let (lo, hi) = chi2_band_99(n, r);
        assert!(lo < s2 && s2 < hi, "s2 {s2} outside [{lo}, {hi}]");
        assert!((s2 - r).abs() / r < 0.01, "not within 1% of R");
    }

    #[test]
    fn uniform_variance_in_chi2_band() {
        // The chi-square band is derived for Gaussian samples; for the
        // uniform distribution it is only approximate but far wider than the
        // actual estimator spread at n = 1e6.
        let r = 6.96e-21;
        let model = NoiseModel::uniform(SecondsSq(r)).unwrap();
        let n = 1_000_000;
        let s2 = empirical_variance(&model, 4, n);
        assert!((s2 - r).abs() / r < 0.01, "s2 {s2} not within 1% of R {r}");
    }

    #[test]
    fn quantized_draws_are_tick_multiples() {
        let tick = 15.65e-12;
        let model = NoiseModel::gaussian(SecondsSq(6.96e-21))
            .unwrap()
            .with_quantization(Seconds(tick));
        let mut rng = worker_stream(11, 0);
        for _ in 0..1000 {
            let x = model.sample_noise(&mut rng).0;
            let k = x / tick;
            assert!(
                (k - k.round()).abs() < 1e-9,
                "draw {x} is not a tick multiple (k = {k})"
            );
        }
    }

    #[test]
    fn fixed_seed_reproduces_bit_identical_sequence() {
        let model = NoiseModel::gaussian(SecondsSq(6.96e-21)).unwrap();
        let mut a = worker_stream(99, 5);
        let mut b = worker_stream(99, 5);
        for _ in 0..1000 {
            let x = model.sample_noise(&mut a).0;
            let y = model.sample_noise(&mut b).0;
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn distinct_workers_get_distinct_streams() {
        let model = NoiseModel::gaussian(SecondsSq(6.96e-21)).unwrap();
        let mut a = worker_stream(99, 0);
        let mut b = worker_stream(99, 1);
        let xs: Vec<u64> = (0..8).map(|_| model.sample_noise(&mut a).0.to_bits()).collect();
        let ys: Vec<u64> = (0..8).map(|_| model.sample_noise(&mut b).0.to_bits()).collect();
        assert_ne!(xs, ys);
    }

    proptest! {
        /// Affine property on a dyadic grid where every operation is exact
        /// in f64: to_clock(a + b) - to_clock(a) == (1 + skew) * b.
        #[test]
        fn to_clock_is_affine_exact_on_dyadic_grid(
            ma in 1i64..(1 << 20),
            mb in 1i64..(1 << 20),
            ms in -(1 << 10)..(1i64 << 10),
            mo in -(1 << 10)..(1i64 << 10),
        ) {
            let a = Seconds(ma as f64 * 2f64.powi(-30));
            let b = Seconds(mb as f64 * 2f64.powi(-30));
            let skew = ms as f64 * 2f64.powi(-24);
            let offset = Seconds(mo as f64 * 2f64.powi(-20));
            let clock = ClockParams { offset, skew };
            let lhs = clock.to_clock(a + b) - clock.to_clock(a);
            let rhs = (1.0 + skew) * b;
            prop_assert_eq!(lhs.0.to_bits(), rhs.0.to_bits());
        }

        /// On arbitrary finite inputs the affine property holds to rounding.
        #[test]
        fn to_clock_is_affine_to_roundoff(
            a in 0.0..1e-1f64,
            b in 1e-9..1e-1f64,
            skew in -9e-4..9e-4f64,
            offset in -1.0..1.0f64,
        ) {
            let clock = ClockParams { offset: Seconds(offset), skew };
            let lhs = clock.to_clock(Seconds(a) + Seconds(b)) - clock.to_clock(Seconds(a));
            let rhs = (1.0 + skew) * Seconds(b);
            // Error is bounded by a few ulps of the largest intermediate.
            let scale = (a + b).abs().max(offset.abs()).max(1e-12);
            prop_assert!((lhs - rhs).0.abs() <= 8.0 * scale * f64::EPSILON);
        }
    }
}
