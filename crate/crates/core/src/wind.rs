//! Stochastic wind injection: Weibull wind speed pushed through a
//! cut-in / rated / cut-out power curve.
//!
//! The resulting power distribution is mixed: point masses at zero (calm
//! or storm shutdown) and at rated power, plus a continuous part on the
//! cubic ramp. Sampling happens in the speed domain by inverse CDF, so the
//! transformed density never has to be built explicitly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Samples per independently seeded stream.
///
/// Chunk `c` of a request draws from `ChaCha8Rng::seed_from_u64(seed)` with
/// its stream id set to `c`, so the concatenated vector depends only on
/// `(seed, n)` and not on the number of worker threads.
pub const SAMPLE_CHUNK: usize = 1 << 14;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindModel {
    /// Weibull shape k.
    pub shape: f64,
    /// Weibull scale c, m/s.
    pub scale: f64,
    pub cut_in: f64,
    pub rated_speed: f64,
    pub cut_out: f64,
    /// Plant rating, p.u. on the system base.
    pub rated_power: f64,
    /// Operating point P_w0 the linear estimator is built around.
    #[serde(default)]
    pub base_power: f64,
}

impl Default for WindModel {
    fn default() -> Self {
        WindModel {
            shape: 2.0,
            scale: 9.0,
            cut_in: 3.0,
            rated_speed: 12.0,
            cut_out: 25.0,
            rated_power: 1.0,
            base_power: 0.0,
        }
    }
}

impl WindModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.shape > 0.0 && self.scale > 0.0) {
            return Err(Error::Validation(
                "wind: Weibull shape and scale must be positive".into(),
            ));
        }
        if !(0.0 < self.cut_in && self.cut_in < self.rated_speed && self.rated_speed < self.cut_out)
        {
            return Err(Error::Validation(
                "wind: require 0 < cut_in < rated_speed < cut_out".into(),
            ));
        }
        if !(self.rated_power > 0.0) {
            return Err(Error::Validation("wind: rated_power must be positive".into()));
        }
        if !(self.base_power >= 0.0) {
            return Err(Error::Validation("wind: base_power must be non-negative".into()));
        }
        Ok(())
    }

    pub fn power_curve(&self, v: f64) -> f64 {
        power_curve(v, self)
    }

    /// Weibull CDF of the wind speed.
    pub fn speed_cdf(&self, v: f64) -> f64 {
        if v <= 0.0 {
            0.0
        } else {
            -(-(v / self.scale).powf(self.shape)).exp_m1()
        }
    }

    pub fn speed_pdf(&self, v: f64) -> f64 {
        if v < 0.0 {
            return 0.0;
        }
        let (k, c) = (self.shape, self.scale);
        (k / c) * (v / c).powf(k - 1.0) * (-(v / c).powf(k)).exp()
    }

    /// Inverse of [`WindModel::speed_cdf`] for `u` in `[0, 1)`.
    pub fn speed_quantile(&self, u: f64) -> f64 {
        self.scale * (-(-u).ln_1p()).powf(1.0 / self.shape)
    }

    /// Probability that the plant produces exactly zero.
    pub fn zero_mass(&self) -> f64 {
        self.speed_cdf(self.cut_in) + (1.0 - self.speed_cdf(self.cut_out))
    }

    /// Probability that the plant produces exactly its rating.
    pub fn rated_mass(&self) -> f64 {
        let (k, c) = (self.shape, self.scale);
        (-(self.rated_speed / c).powf(k)).exp() - (-(self.cut_out / c).powf(k)).exp()
    }

    /// CDF of the injected power, P(P_w <= p).
    pub fn power_cdf(&self, p: f64) -> f64 {
        if p < 0.0 {
            return 0.0;
        }
        if p >= self.rated_power {
            return 1.0;
        }
        // invert the cubic ramp
        let (vi3, vr3) = (self.cut_in.powi(3), self.rated_speed.powi(3));
        let v = (vi3 + p / self.rated_power * (vr3 - vi3)).cbrt();
        self.speed_cdf(v) + (1.0 - self.speed_cdf(self.cut_out))
    }
}

/// Deterministic speed-to-power characteristic.
pub fn power_curve(v: f64, model: &WindModel) -> f64 {
    if v < model.cut_in || v >= model.cut_out {
        0.0
    } else if v >= model.rated_speed {
        model.rated_power
    } else {
        let (vi3, vr3) = (model.cut_in.powi(3), model.rated_speed.powi(3));
        model.rated_power * (v.powi(3) - vi3) / (vr3 - vi3)
    }
}

/// Draws `n` wind power samples. Identical `(model, n, seed)` yield an
/// identical vector regardless of thread count.
pub fn sample_wind_power(model: &WindModel, n: usize, seed: u64) -> Vec<f64> {
    let mut out = vec![0.0; n];
    out.par_chunks_mut(SAMPLE_CHUNK)
        .enumerate()
        .for_each(|(chunk, slot)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(chunk as u64);
            for p in slot.iter_mut() {
                let u: f64 = rng.random();
                *p = power_curve(model.speed_quantile(u), model);
            }
        });
    out
}
