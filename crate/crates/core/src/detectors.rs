//! Click-probability models for saturating photon counters.
//!
//! A real photon counter fires once per dead time no matter how many photons
//! arrive, so its response is a step in photon number rather than a linear
//! ramp. The threshold model treats each incident photon as an independent
//! absorption with probability eta; a click is one or more absorptions. The
//! order-2 Taylor form is the same step written as (3/2)n - (1/2)n^2 on the
//! subspace of at most two photons. The linear (Glauber) model is kept only
//! as a comparison baseline.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Efficiency, background and a label for one counter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorParams {
    /// Combined quantum and path efficiency, in [0, 1].
    pub efficiency: f64,
    /// Background count rate in counts/second.
    pub background_rate: f64,
    pub label: String,
}

impl DetectorParams {
    pub fn new(efficiency: f64, background_rate: f64, label: impl Into<String>) -> Self {
        DetectorParams {
            efficiency,
            background_rate,
            label: label.into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.efficiency) {
            return Err(Error::invalid(
                "efficiency",
                "must be in [0, 1]",
                self.efficiency,
            ));
        }
        if !(self.background_rate >= 0.0) {
            return Err(Error::invalid(
                "background_rate",
                "must be >= 0",
                self.background_rate,
            ));
        }
        Ok(())
    }
}

/// Response law mapping incident photon number to click probability.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClickModel {
    /// 1 - (1-eta)^n: independent absorptions, click on the first.
    Threshold,
    /// min(1, eta*n): the linear-detector limit, comparison only.
    LinearGlauber,
    /// Binomial loss followed by the eta = 1 step expansion
    /// (3/2)m - (1/2)m^2; defined for n <= 2 only.
    TaylorOrder2,
}

fn taylor2(m: u32) -> f64 {
    let m = m as f64;
    1.5 * m - 0.5 * m * m
}

/// Probability that a counter fires given `photons` incident photons.
pub fn click_prob(model: ClickModel, photons: u32, efficiency: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&efficiency) {
        return Err(Error::invalid(
            "efficiency",
            "must be in [0, 1]",
            efficiency,
        ));
    }
    match model {
        ClickModel::Threshold => Ok(1.0 - (1.0 - efficiency).powi(photons as i32)),
        ClickModel::LinearGlauber => Ok((efficiency * photons as f64).min(1.0)),
        ClickModel::TaylorOrder2 => {
            if photons > 2 {
                return Err(Error::TaylorDomain { photons });
            }
            // Thin the incident number binomially, then apply the step
            // expansion to the surviving photons.
            let n = photons;
            let eta = efficiency;
            let mut expectation = 0.0;
            for m in 0..=n {
                let binom = match (n, m) {
                    (_, 0) | (0, _) => 1.0,
                    (1, 1) => 1.0,
                    (2, 1) => 2.0,
                    (2, 2) => 1.0,
                    _ => unreachable!(),
                };
                let weight = binom * eta.powi(m as i32) * (1.0 - eta).powi((n - m) as i32);
                expectation += weight * taylor2(m);
            }
            Ok(expectation)
        }
    }
}

/// Photon-number distribution on n = 0..probs.len()-1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhotonNumberDistribution {
    probs: Vec<f64>,
}

impl PhotonNumberDistribution {
    /// Validates nonnegativity and normalization to 1e-12.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::EmptyInput("photon number distribution"));
        }
        let mut sum = 0.0;
        for &p in &probs {
            if !(p >= 0.0) {
                return Err(Error::invalid("probs", "must be nonnegative", p));
            }
            sum += p;
        }
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::invalid("probs", "must sum to 1 (within 1e-12)", sum));
        }
        Ok(PhotonNumberDistribution { probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn mean(&self) -> f64 {
        self.probs
            .iter()
            .enumerate()
            .map(|(n, p)| n as f64 * p)
            .sum()
    }
}

/// Expected click probability of `model` over a photon-number distribution.
pub fn response_expectation(
    model: ClickModel,
    dist: &PhotonNumberDistribution,
    efficiency: f64,
) -> Result<f64> {
    let mut total = 0.0;
    for (n, &p) in dist.probs().iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        total += p * click_prob(model, n as u32, efficiency)?;
    }
    Ok(total)
}

/// Click probability for exactly two incident photons: 2*eta - eta^2.
pub fn two_photon_click_prob(efficiency: f64) -> f64 {
    2.0 * efficiency - efficiency * efficiency
}
