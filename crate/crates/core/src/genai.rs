//! Token-count laws for generation quality and delay, plus the curve
//! fitting that produces per-server constants from measurements.
//!
//! Quality follows an exponential saturation `score_max − σ·e^(−ρC)` and
//! delay an affine law `η·C + ψ`. The laws are used raw: quality is not
//! clamped below, so very small token counts can yield negative scores
//! (the simulator never requests counts under 50, where all shipped
//! constants keep scores positive).

use rand::{Rng, RngExt};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ServerRole {
    Bs,
    Sp,
}

/// Fitted generation constants for one server.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ServerProfile {
    pub score_max: f64,
    /// Initial score deficit: larger means the model starts further from
    /// the ceiling.
    pub sigma: f64,
    /// Quality improvement rate per output token.
    pub rho: f64,
    /// Generation delay per output token, seconds.
    pub eta: f64,
    /// Base generation overhead, seconds.
    pub psi: f64,
    pub role: ServerRole,
}

impl ServerProfile {
    pub fn validate(&self) -> Result<()> {
        if !(self.score_max > 0.0) {
            return Err(Error::Config("profile.score_max must be > 0".into()));
        }
        if !(self.sigma > 0.0) || !(self.rho > 0.0) || !(self.eta > 0.0) || !(self.psi >= 0.0) {
            return Err(Error::Config(
                "profile requires sigma > 0, rho > 0, eta > 0, psi >= 0".into(),
            ));
        }
        Ok(())
    }

    /// The base-station profile used throughout the default setup.
    pub fn bs_default() -> Self {
        ServerProfile {
            score_max: 10.0,
            sigma: 50.0,
            rho: 0.085,
            eta: 0.05,
            psi: 0.1,
            role: ServerRole::Bs,
        }
    }

    /// Draws one service-provider profile uniformly from the configured
    /// open intervals.
    pub fn sample_sp<R: Rng + ?Sized>(
        ranges: &SpProfileRanges,
        score_max: f64,
        rng: &mut R,
    ) -> Self {
        ServerProfile {
            score_max,
            sigma: rng.random_range(ranges.sigma.0..ranges.sigma.1),
            rho: rng.random_range(ranges.rho.0..ranges.rho.1),
            eta: rng.random_range(ranges.eta.0..ranges.eta.1),
            psi: rng.random_range(ranges.psi.0..ranges.psi.1),
            role: ServerRole::Sp,
        }
    }
}

/// Sampling intervals for service-provider profiles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpProfileRanges {
    pub sigma: (f64, f64),
    pub rho: (f64, f64),
    pub eta: (f64, f64),
    pub psi: (f64, f64),
}

impl Default for SpProfileRanges {
    fn default() -> Self {
        SpProfileRanges {
            sigma: (30.0, 55.0),
            rho: (0.035, 0.055),
            eta: (0.02, 0.04),
            psi: (0.05, 0.15),
        }
    }
}

impl SpProfileRanges {
    pub fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in [
            ("sigma", self.sigma),
            ("rho", self.rho),
            ("eta", self.eta),
            ("psi", self.psi),
        ] {
            if !(lo > 0.0 && hi > lo) {
                return Err(Error::Config(format!(
                    "sp_ranges.{name} must satisfy 0 < lo < hi, got ({lo}, {hi})"
                )));
            }
        }
        Ok(())
    }
}

/// Generation quality of a thought produced with `tokens` output tokens.
pub fn gen_quality(profile: &ServerProfile, tokens: f64) -> f64 {
    profile.score_max - profile.sigma * (-profile.rho * tokens).exp()
}

/// Generation delay in seconds for `tokens` output tokens.
pub fn gen_delay(profile: &ServerProfile, tokens: f64) -> f64 {
    profile.eta * tokens + profile.psi
}

/// One measurement: token count plus an observed score or delay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitSample {
    pub tokens: f64,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QualityFit {
    pub sigma: f64,
    pub rho: f64,
    pub rmse: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DelayFit {
    pub eta: f64,
    pub psi: f64,
    pub rmse: f64,
}

/// Ordinary least squares of y on x. Errors when the x values carry no
/// spread (degenerate design).
fn ols(xs: &[f64], ys: &[f64]) -> Result<(f64, f64)> {
    let n = xs.len() as f64;
    let mean_x = xs.iter().sum::<f64>() / n;
    let mean_y = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        sxx += (x - mean_x) * (x - mean_x);
        sxy += (x - mean_x) * (y - mean_y);
    }
    if sxx <= f64::EPSILON * n * mean_x.abs().max(1.0) {
        return Err(Error::Singular(
            "all token counts identical; slope is undetermined".into(),
        ));
    }
    let slope = sxy / sxx;
    Ok((slope, mean_y - slope * mean_x))
}

fn check_samples(samples: &[FitSample]) -> Result<()> {
    if samples.len() < 2 {
        return Err(Error::FitDomain("need at least 2 samples".into()));
    }
    if samples.iter().any(|s| !(s.tokens > 0.0)) {
        return Err(Error::FitDomain("token counts must be > 0".into()));
    }
    Ok(())
}

/// Fits `(σ, ρ)` of the saturation law by least squares on the
/// log-linearized deficit `ln(score_max − score) = ln σ − ρ·C`.
pub fn fit_quality(samples: &[FitSample], score_max: f64) -> Result<QualityFit> {
    check_samples(samples)?;
    let mut xs = Vec::with_capacity(samples.len());
    let mut ys = Vec::with_capacity(samples.len());
    for s in samples {
        let deficit = score_max - s.value;
        if deficit <= 0.0 {
            return Err(Error::FitDomain(format!(
                "score {} at C={} is not below score_max {}",
                s.value, s.tokens, score_max
            )));
        }
        xs.push(s.tokens);
        ys.push(deficit.ln());
    }
    let (slope, intercept) = ols(&xs, &ys)?;
    let sigma = intercept.exp();
    let rho = -slope;
    let mut sq = 0.0;
    for s in samples {
        let pred = score_max - sigma * (-rho * s.tokens).exp();
        sq += (pred - s.value) * (pred - s.value);
    }
    Ok(QualityFit {
        sigma,
        rho,
        rmse: (sq / samples.len() as f64).sqrt(),
    })
}

/// Fits the affine delay law `η·C + ψ` by ordinary least squares. The
/// slope is not sign-constrained; physical data yields η > 0.
pub fn fit_delay(samples: &[FitSample]) -> Result<DelayFit> {
    check_samples(samples)?;
    let xs: Vec<f64> = samples.iter().map(|s| s.tokens).collect();
    let ys: Vec<f64> = samples.iter().map(|s| s.value).collect();
    let (eta, psi) = ols(&xs, &ys)?;
    let mut sq = 0.0;
    for s in samples {
        let pred = eta * s.tokens + psi;
        sq += (pred - s.value) * (pred - s.value);
    }
    Ok(DelayFit {
        eta,
        psi,
        rmse: (sq / samples.len() as f64).sqrt(),
    })
}
