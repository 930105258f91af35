//! Choice of the second response delay: the averaged-uncertainty objective
//! and its closed-form minimizer.
//!
//! Lengthening `dt53` lowers each measurement's variance but also lowers the
//! measurement rate. The objective below multiplies the per-measurement
//! variance by the measurement period, i.e. the variance left after
//! averaging one second's worth of measurements (its reciprocal is the
//! information accumulated per second). Setting the derivative to zero
//! yields a depressed cubic in `dt53` whose single positive root is the
//! optimum; the noise variance scales the objective but cancels from the
//! stationarity condition.

use crate::analytics::ds_variance;
use crate::timebase::{Seconds, SecondsSq};
use crate::{Error, Result};

/// Fixed quantities of the averaged-uncertainty objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveParams {
    /// First response delay (minimized separately by hardware limits).
    pub dt32: Seconds,
    /// Per-measurement processing overhead.
    pub processing: Seconds,
    /// Per-timestamp noise variance R.
    pub noise_variance: SecondsSq,
}

impl ObjectiveParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt32.0.is_finite() && self.dt32.0 > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "dt32 must be positive, got {}",
                self.dt32.0
            )));
        }
        if !(self.processing.0.is_finite() && self.processing.0 >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "processing time must be nonnegative, got {}",
                self.processing.0
            )));
        }
        if !(self.noise_variance.0.is_finite() && self.noise_variance.0 > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "noise variance must be positive, got {}",
                self.noise_variance.0
            )));
        }
        Ok(())
    }
}

/// Solution of the delay optimization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimalDelay {
    /// The optimal second response delay.
    pub dt53_star: Seconds,
    /// Cubic evaluated at the returned root (absolute).
    pub residual: f64,
    /// Averaged uncertainty at the optimum, in s²·s.
    pub r_avg_at_star: f64,
}

/// Averaged uncertainty `(T + dt32 + dt53) * ds_variance(R, dt32, dt53)`,
/// in s²·s.
///
/// This is the continuous relaxation: the measurement count per second is
/// `1 / period` without flooring, which is the form the stationarity cubic
/// is derived from. The discrete floor appears only in the session
/// simulator.
pub fn r_avg(dt53: Seconds, params: &ObjectiveParams) -> Result<f64> {
    if dt53.0 <= 0.0 {
        return Err(Error::DegenerateInterval("dt53 must be positive"));
    }
    let period = params.processing.0 + params.dt32.0 + dt53.0;
    let variance = ds_variance(params.noise_variance, params.dt32, dt53)?;
    Ok(period * variance.0)
}

/// Coefficients `(p, q)` of the stationarity condition written as the
/// depressed cubic `t^3 + p t + q = 0` in `t = dt53`:
/// `p = -dt32 (T + 2 dt32)`, `q = -2 dt32^2 (T + dt32)`.
pub fn optimality_cubic(params: &ObjectiveParams) -> (f64, f64) {
    let a = params.dt32.0;
    let t = params.processing.0;
    (-a * (t + 2.0 * a), -2.0 * a * a * (t + a))
}

/// Evaluate the depressed cubic `t^3 + p t + q`.
fn cubic(t: f64, p: f64, q: f64) -> f64 {
    (t * t + p) * t + q
}

/// The positive real root of `t^3 + p t + q = 0` by Cardano's method.
///
/// For `p < 0, q < 0` the sign pattern guarantees exactly one positive
/// root. With a positive Cardano discriminant term the real root is the sum
/// of the two cube roots; otherwise all three roots are real and the
/// positive one is the largest.
fn cardano_positive_root(p: f64, q: f64) -> f64 {
    let disc_term = (q / 2.0) * (q / 2.0) + (p / 3.0) * (p / 3.0) * (p / 3.0);
    if disc_term >= 0.0 {
        let s = disc_term.sqrt();
        let u = (-q / 2.0 + s).cbrt();
        if u != 0.0 {
            // v = cbrt(-q/2 - s) rewritten as -p/(3u) to avoid cancellation.
            u - p / (3.0 * u)
        } else {
            (-q / 2.0 - s).cbrt()
        }
    } else {
        // Three real roots; the largest is 2 sqrt(-p/3) cos(theta / 3).
        let m = (-p / 3.0).sqrt();
        let theta = (-q / (2.0 * m * m * m)).clamp(-1.0, 1.0).acos();
        2.0 * m * (theta / 3.0).cos()
    }
}

/// Bisection on `t^3 + p t + q` over a bracket grown from the origin.
fn bisect_positive_root(p: f64, q: f64) -> f64 {
    let mut hi = (-q).cbrt().max((-p).sqrt()).max(f64::MIN_POSITIVE);
    while cubic(hi, p, q) < 0.0 {
        hi *= 2.0;
    }
    let mut lo = 0.0f64;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if cubic(mid, p, q) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Discriminant magnitude below which Cardano is considered untrustworthy
/// and the bisection fallback is used.
const DISCRIMINANT_GUARD: f64 = 1e-30;

/// Solve for the information-maximizing second response delay.
pub fn solve_optimal_delay(params: &ObjectiveParams) -> Result<OptimalDelay> {
    params.validate()?;
    let (p, q) = optimality_cubic(params);
    let discriminant = -4.0 * p * p * p - 27.0 * q * q;

    let mut root = if discriminant.abs() < DISCRIMINANT_GUARD {
        bisect_positive_root(p, q)
    } else {
        cardano_positive_root(p, q)
    };

    // One sign change on (0, inf) means Newton from the Cardano root
    // converges; two guarded steps polish residual to rounding level.
    for _ in 0..2 {
        let slope = 3.0 * root * root + p;
        if slope > 0.0 {
            let next = root - cubic(root, p, q) / slope;
            if next > 0.0 && cubic(next, p, q).abs() <= cubic(root, p, q).abs() {
                root = next;
            }
        }
    }

    if !(root.is_finite() && root > 0.0) {
        return Err(Error::NoPositiveRoot);
    }

    Ok(OptimalDelay {
        dt53_star: Seconds(root),
        residual: cubic(root, p, q),
        r_avg_at_star: r_avg(Seconds(root), params)?,
    })
}

/// The grid point minimizing [`r_avg`] — an independent optimality oracle
/// for [`solve_optimal_delay`].
pub fn grid_argmin_r_avg(params: &ObjectiveParams, grid: &[Seconds]) -> Result<Seconds> {
    if grid.is_empty() {
        return Err(Error::InvalidConfig("grid must be non-empty".into()));
    }
    let mut best = grid[0];
    let mut best_value = r_avg(grid[0], params)?;
    for &point in &grid[1..] {
        let value = r_avg(point, params)?;
        if value < best_value {
            best = point;
            best_value = value;
        }
    }
    Ok(best)
}

/// A log-spaced grid of `points` values from `min` to `max` inclusive.
pub fn log_spaced(min: Seconds, max: Seconds, points: usize) -> Result<Vec<Seconds>> {
    if !(min.0 > 0.0 && max.0 > min.0 || (points == 1 && min.0 > 0.0)) {
        return Err(Error::InvalidConfig(
            "log grid needs 0 < min < max (or a single point with min > 0)".into(),
        ));
    }
    if points == 0 {
        return Err(Error::InvalidConfig("grid needs at least one point".into()));
    }
    if points == 1 {
        return Ok(vec![min]);
    }
    let log_min = min.0.ln();
    let log_max = max.0.ln();
    Ok((0..points)
        .map(|k| {
            let frac = k as f64 / (points - 1) as f64;
            Seconds((log_min + frac * (log_max - log_min)).exp())
        })
        .collect())
}

/// A linearly spaced grid of `points` values from `min` to `max` inclusive.
pub fn lin_spaced(min: Seconds, max: Seconds, points: usize) -> Result<Vec<Seconds>> {
    if !(min.0 > 0.0 && (max.0 > min.0 || points == 1)) {
        return Err(Error::InvalidConfig(
            "linear grid needs 0 < min < max (or a single point with min > 0)".into(),
        ));
    }
    if points == 0 {
        return Err(Error::InvalidConfig("grid needs at least one point".into()));
    }
    if points == 1 {
        return Ok(vec![min]);
    }
    Ok((0..points)
        .map(|k| {
            let frac = k as f64 / (points - 1) as f64;
            Seconds(min.0 + frac * (max.0 - min.0))
        })
        .collect())
}
