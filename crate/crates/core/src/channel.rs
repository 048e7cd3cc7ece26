//! Wireless link model: log-distance path loss, Rayleigh fading, and the
//! resulting achievable rates and transmission times.
//!
//! All functions are pure; the environment owns the rng streams that feed
//! [`sample_fading`].

use rand::{Rng, RngExt};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Unit in which link distances are fed to the path-loss law.
///
/// The field geometry is always in meters; `Km` converts distances to
/// kilometers before applying the loss formula (the default operating
/// regime, where offloading can pay off), while `M` feeds raw meters
/// (which drives link rates down to sub-kbps and makes every transfer
/// dominate the timeline).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceUnit {
    #[default]
    Km,
    M,
}

impl DistanceUnit {
    /// Converts a geometric distance in meters to the unit the loss law
    /// expects.
    pub fn from_meters(self, meters: f64) -> f64 {
        match self {
            DistanceUnit::Km => meters / 1000.0,
            DistanceUnit::M => meters,
        }
    }
}

impl std::str::FromStr for DistanceUnit {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "km" => Ok(DistanceUnit::Km),
            "m" => Ok(DistanceUnit::M),
            other => Err(Error::Config(format!(
                "distance_unit must be `km` or `m`, got `{other}`"
            ))),
        }
    }
}

/// Position of a node on the deployment square, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodePosition {
    pub x_m: f64,
    pub y_m: f64,
}

impl NodePosition {
    pub fn distance_m(&self, other: &NodePosition) -> f64 {
        let dx = self.x_m - other.x_m;
        let dy = self.y_m - other.y_m;
        (dx * dx + dy * dy).sqrt()
    }
}

/// Physical parameters of one directed link.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkParams {
    /// Pre-allocated bandwidth in Hz; orthogonal access means concurrent
    /// transfers never share it.
    pub bandwidth_hz: f64,
    /// Transmit power of the sending node, in W.
    pub tx_power_w: f64,
    /// Noise power spectral density in W/Hz.
    pub noise_psd: f64,
}

impl LinkParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.bandwidth_hz > 0.0) {
            return Err(Error::Config("channel.bandwidth_hz must be > 0".into()));
        }
        if !(self.tx_power_w > 0.0) {
            return Err(Error::Config("channel power must be > 0".into()));
        }
        if !(self.noise_psd > 0.0) {
            return Err(Error::Config("channel.noise_psd must be > 0".into()));
        }
        Ok(())
    }
}

/// One small-scale fading power gain `|g|^2` for a directed link in a slot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FadingSample(pub f64);

/// Large-scale path loss in dB: `127 + 30·log10(d)`.
pub fn path_loss(distance: f64) -> Result<f64> {
    if !(distance > 0.0) {
        return Err(Error::Domain(format!(
            "path_loss requires a positive distance, got {distance}"
        )));
    }
    Ok(127.0 + 30.0 * distance.log10())
}

/// Draws `|g|^2` for one link and slot. Complex-normal fading with unit
/// variance makes the power gain Exponential(1).
pub fn sample_fading<R: Rng + ?Sized>(rng: &mut R) -> FadingSample {
    let u: f64 = rng.random(); // [0, 1)
    FadingSample(-(1.0 - u).ln())
}

/// Achievable rate in bits/s: `B·log2(1 + p·h / (B·N0))` with
/// `h = |g|^2 / 10^(PL/10)`.
pub fn link_rate(params: &LinkParams, gain: f64, distance: f64) -> Result<f64> {
    params.validate()?;
    if !(gain >= 0.0) {
        return Err(Error::Domain(format!(
            "fading gain must be >= 0, got {gain}"
        )));
    }
    let loss_db = path_loss(distance)?;
    let h = gain / 10f64.powf(loss_db / 10.0);
    let snr = params.tx_power_w * h / (params.bandwidth_hz * params.noise_psd);
    Ok(params.bandwidth_hz * (1.0 + snr).log2())
}

/// Transmission time in seconds for a payload at a given rate. Zero bits
/// cost zero regardless of the rate (the same-server short-circuit).
pub fn tx_time(bits: f64, rate: f64) -> Result<f64> {
    if bits <= 0.0 {
        return Ok(0.0);
    }
    if rate <= 0.0 {
        return Err(Error::UnreachableLink { from: 0, to: 0 });
    }
    Ok(bits / rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use proptest::prelude::*;

    fn table_params(bs: bool) -> LinkParams {
        LinkParams {
            bandwidth_hz: 2e6,
            tx_power_w: if bs { 1.0 } else { 0.1 },
            noise_psd: 4e-21,
        }
    }

    #[test]
    fn path_loss_reference_distances() {
        assert_eq!(path_loss(1.0).unwrap(), 127.0);
        assert!((path_loss(10.0).unwrap() - 157.0).abs() < 1e-12);
        // Independent evaluation of 127 + 30·log10(0.05).
        let expected = 127.0 + 30.0 * 0.05f64.log10();
        assert!((expected - 87.969).abs() < 1e-3);
        assert_eq!(path_loss(0.05).unwrap(), expected);
    }

    #[test]
    fn path_loss_rejects_nonpositive() {
        assert!(path_loss(0.0).is_err());
        assert!(path_loss(-3.0).is_err());
    }

    #[test]
    fn fading_is_unit_mean_exponential() {
        let mut rng = stream_rng(11, 0);
        let n = 100_000;
        let mut sum = 0.0;
        let mut above_one = 0usize;
        for _ in 0..n {
            let g = sample_fading(&mut rng).0;
            assert!(g >= 0.0);
            sum += g;
            if g > 1.0 {
                above_one += 1;
            }
        }
        let mean = sum / n as f64;
        assert!(mean > 0.99 && mean < 1.01, "mean {mean}");
        let p = above_one as f64 / n as f64;
        assert!((p - (-1.0f64).exp()).abs() < 0.01, "P(g>1) {p}");
    }

    #[test]
    fn rate_reference_link() {
        // Full chain re-evaluated independently of link_rate internals.
        let pl = 127.0 + 30.0 * 0.05f64.log10();
        let h = 1.0 / 10f64.powf(pl / 10.0);
        assert!((h - 1.596e-9).abs() < 0.01e-9);
        let snr = 1.0 * h / (2e6 * 4e-21);
        assert!((snr - 1.995e5).abs() < 0.01e5);
        let expected = 2e6 * (1.0 + snr).log2();
        assert!((expected - 35.2e6).abs() < 0.1e6);

        let r = link_rate(&table_params(true), 1.0, 0.05).unwrap();
        assert_eq!(r, expected);
    }

    #[test]
    fn rate_zero_gain_is_zero() {
        let r = link_rate(&table_params(true), 0.0, 0.05).unwrap();
        assert_eq!(r, 0.0);
    }

    #[test]
    fn rate_increases_with_power() {
        let mut rng = stream_rng(5, 0);
        for _ in 0..200 {
            let g = sample_fading(&mut rng).0;
            if g == 0.0 {
                continue;
            }
            let base = table_params(false);
            let doubled = LinkParams {
                tx_power_w: base.tx_power_w * 2.0,
                ..base
            };
            let r1 = link_rate(&base, g, 0.03).unwrap();
            let r2 = link_rate(&doubled, g, 0.03).unwrap();
            assert!(r2 > r1);
        }
    }

    #[test]
    fn rate_monotone_in_distance_over_random_params() {
        // 1,000 random parameterizations: closer never puts us below farther.
        let mut rng = stream_rng(17, 0);
        for _ in 0..1_000 {
            let params = LinkParams {
                bandwidth_hz: rng.random_range(1e5..1e7),
                tx_power_w: rng.random_range(1e-3..10.0),
                noise_psd: rng.random_range(1e-22..1e-19),
            };
            let g = sample_fading(&mut rng).0;
            let d1 = rng.random_range(0.001..0.2);
            let d2 = d1 + rng.random_range(0.0..0.2);
            let r1 = link_rate(&params, g, d1).unwrap();
            let r2 = link_rate(&params, g, d2).unwrap();
            assert!(r1 >= r2, "r({d1})={r1} < r({d2})={r2}");
            assert!(r1.is_finite() && r2.is_finite() && r2 >= 0.0);
        }
    }

    #[test]
    fn tx_time_cases() {
        assert_eq!(tx_time(0.0, 0.0).unwrap(), 0.0);
        assert_eq!(tx_time(8_000.0, 8_000.0).unwrap(), 1.0);
        let rate = link_rate(&table_params(true), 1.0, 0.05).unwrap();
        let t = tx_time(60_000.0, rate).unwrap();
        assert_eq!(t, 60_000.0 / rate);
        assert!((t - 1.70e-3).abs() < 0.02e-3);
        assert!(tx_time(1.0, 0.0).is_err());
    }

    #[test]
    fn distance_unit_conversion() {
        assert_eq!(DistanceUnit::Km.from_meters(50.0), 0.05);
        assert_eq!(DistanceUnit::M.from_meters(50.0), 50.0);
        // Literal meters reading collapses the 50 m link to sub-kbps.
        let r = link_rate(&table_params(true), 1.0, DistanceUnit::M.from_meters(50.0)).unwrap();
        assert!(r < 1_000.0, "meters mode should be sub-kbps, got {r}");
    }

    proptest! {
        #[test]
        fn rate_finite_nonnegative(gain in 0.0f64..50.0, d in 1e-4f64..10.0) {
            let r = link_rate(&table_params(true), gain, d).unwrap();
            prop_assert!(r.is_finite());
            prop_assert!(r >= 0.0);
        }
    }
}
