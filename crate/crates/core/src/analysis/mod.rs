//! Reduction pipeline: delay binning, classical-fringe removal, dip fitting,
//! background correction, efficiency calibration and the visibility-ratio
//! aggregation.

pub mod fit;

pub use fit::{fit_gaussian_line, fit_gaussian_line_with, FitOptions, FitResult};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simkit::ScanRecord;

/// A value with separate statistical and systematic one-sigma errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measured {
    pub value: f64,
    pub stat: f64,
    pub syst: f64,
}

impl Measured {
    pub fn new(value: f64, stat: f64, syst: f64) -> Self {
        Measured { value, stat, syst }
    }

    pub fn exact(value: f64) -> Self {
        Measured {
            value,
            stat: 0.0,
            syst: 0.0,
        }
    }

    /// Statistical and systematic errors combined in quadrature.
    pub fn total_err(&self) -> f64 {
        self.stat.hypot(self.syst)
    }
}

/// Counts summed per delay setting, with Poisson variance floored at one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinnedSeries {
    pub delay_fs: Vec<f64>,
    pub counts: Vec<f64>,
    pub variance: Vec<f64>,
}

impl BinnedSeries {
    /// Builds a series with Poisson variance (counts, floored at 1).
    pub fn from_counts(delay_fs: Vec<f64>, counts: Vec<f64>) -> Self {
        let variance = counts.iter().map(|&c| c.max(1.0)).collect();
        BinnedSeries {
            delay_fs,
            counts,
            variance,
        }
    }

    pub fn len(&self) -> usize {
        self.delay_fs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.delay_fs.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.is_empty() {
            return Err(Error::EmptyInput("binned series"));
        }
        if self.counts.len() != self.len() || self.variance.len() != self.len() {
            return Err(Error::GridMismatch(
                "delay, counts and variance arrays differ in length".into(),
            ));
        }
        if !self.delay_fs.windows(2).all(|w| w[1] > w[0]) {
            return Err(Error::GridMismatch(
                "delay grid must be strictly increasing".into(),
            ));
        }
        if self.counts.iter().any(|&c| !(c >= 0.0)) {
            return Err(Error::GridMismatch("counts must be nonnegative".into()));
        }
        Ok(())
    }

    /// Uniform grid spacing; errors if the grid is uneven beyond 1e-6 relative.
    pub fn spacing(&self) -> Result<f64> {
        if self.len() < 2 {
            return Err(Error::GridMismatch("need at least two points".into()));
        }
        let step = (self.delay_fs[self.len() - 1] - self.delay_fs[0]) / (self.len() - 1) as f64;
        for w in self.delay_fs.windows(2) {
            if ((w[1] - w[0]) - step).abs() > 1e-6 * step.abs() {
                return Err(Error::GridMismatch(format!(
                    "uneven delay spacing: expected {step}, found {}",
                    w[1] - w[0]
                )));
            }
        }
        Ok(step)
    }
}

/// The three binned observables of one campaign.
#[derive(Debug, Clone, PartialEq)]
pub struct CampaignSeries {
    pub coincidences: BinnedSeries,
    pub singles_a: BinnedSeries,
    pub singles_b: BinnedSeries,
}

/// Sum raw records over scans, per delay setting.
///
/// Every scan must visit the same (point index, delay) grid with the same
/// dwell; ascending and descending scans land in the same bins.
pub fn bin_and_sum(records: &[ScanRecord]) -> Result<CampaignSeries> {
    if records.is_empty() {
        return Err(Error::EmptyInput("scan records"));
    }
    let dwell = records[0].dwell_s;
    let mut n_points = 0u32;
    for r in records {
        if (r.dwell_s - dwell).abs() > 1e-12 {
            return Err(Error::GridMismatch(format!(
                "mixed dwell times: {} vs {}",
                dwell, r.dwell_s
            )));
        }
        n_points = n_points.max(r.point_index + 1);
    }

    let n = n_points as usize;
    let mut delay = vec![f64::NAN; n];
    let mut coincidences = vec![0.0; n];
    let mut singles_a = vec![0.0; n];
    let mut singles_b = vec![0.0; n];
    let mut hits = vec![0u32; n];

    for r in records {
        let i = r.point_index as usize;
        if delay[i].is_nan() {
            delay[i] = r.delay_fs;
        } else if (delay[i] - r.delay_fs).abs() > 1e-9 {
            return Err(Error::GridMismatch(format!(
                "point {} maps to delays {} and {}",
                r.point_index, delay[i], r.delay_fs
            )));
        }
        coincidences[i] += r.coincidences as f64;
        singles_a[i] += r.singles_a as f64;
        singles_b[i] += r.singles_b as f64;
        hits[i] += 1;
    }

    if hits.iter().any(|&h| h != hits[0]) {
        return Err(Error::GridMismatch(
            "scans cover different subsets of the delay grid".into(),
        ));
    }

    // Sort bins by delay; point indices may enumerate in either direction.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| delay[a].total_cmp(&delay[b]));
    let pick = |v: &[f64]| order.iter().map(|&i| v[i]).collect::<Vec<f64>>();
    let delays = pick(&delay);

    Ok(CampaignSeries {
        coincidences: BinnedSeries::from_counts(delays.clone(), pick(&coincidences)),
        singles_a: BinnedSeries::from_counts(delays.clone(), pick(&singles_a)),
        singles_b: BinnedSeries::from_counts(delays, pick(&singles_b)),
    })
}

/// Remove classical fringes by averaging pairs of points separated by half
/// the fringe period.
///
/// Output point i is the mean of inputs i and i+k at their midpoint delay,
/// where k is the half period in grid steps; length shrinks by k. Variances
/// combine as (v_i + v_{i+k}) / 4.
pub fn remove_fringes(series: &BinnedSeries, fringe_period_fs: f64) -> Result<BinnedSeries> {
    series.validate()?;
    if !(fringe_period_fs > 0.0) {
        return Err(Error::invalid(
            "fringe_period_fs",
            "must be > 0",
            fringe_period_fs,
        ));
    }
    let step = series.spacing()?;
    let k = ((fringe_period_fs / 2.0) / step).round() as usize;
    if k == 0 {
        return Err(Error::FringeSpacing {
            spacing_fs: step,
            period_fs: fringe_period_fs,
        });
    }
    let n = series.len();
    if k >= n {
        return Err(Error::GridMismatch(format!(
            "series of {n} points is too short for a half-period offset of {k} steps"
        )));
    }

    let m = n - k;
    let mut delay = Vec::with_capacity(m);
    let mut counts = Vec::with_capacity(m);
    let mut variance = Vec::with_capacity(m);
    for i in 0..m {
        delay.push(0.5 * (series.delay_fs[i] + series.delay_fs[i + k]));
        counts.push(0.5 * (series.counts[i] + series.counts[i + k]));
        variance.push(0.25 * (series.variance[i] + series.variance[i + k]));
    }
    Ok(BinnedSeries {
        delay_fs: delay,
        counts,
        variance,
    })
}

/// Variance inflation for fits to half-period-averaged series.
///
/// [`remove_fringes`] output points k apart share an input bin, so adjacent
/// information is double counted by diagonal weights: for model components
/// that vary slowly over k bins (the dip is an order of magnitude wider) the
/// true parameter variances are twice the inverse-normal-matrix estimate.
pub const PAIR_AVERAGING_VARIANCE_FACTOR: f64 = 2.0;

/// Relative amplitude of the single-frequency component at the fringe period:
/// the residual fringe visibility of a series.
pub fn fringe_visibility(series: &BinnedSeries, period_fs: f64) -> f64 {
    let n = series.len();
    if n == 0 || period_fs <= 0.0 {
        return 0.0;
    }
    let mean = series.counts.iter().sum::<f64>() / n as f64;
    if mean <= 0.0 {
        return 0.0;
    }
    let omega = std::f64::consts::TAU / period_fs;
    let mut re = 0.0;
    let mut im = 0.0;
    for (&tau, &c) in series.delay_fs.iter().zip(&series.counts) {
        let centered = c - mean;
        re += centered * (omega * tau).cos();
        im += centered * (omega * tau).sin();
    }
    2.0 / n as f64 * re.hypot(im) / mean
}

/// Undo background dilution: v_corrected = v_raw / (1 - background_fraction).
pub fn correct_background(v_raw: f64, background_fraction: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&background_fraction) {
        return Err(Error::invalid(
            "background_fraction",
            "must be in [0, 1)",
            background_fraction,
        ));
    }
    Ok(v_raw / (1.0 - background_fraction))
}

/// Background correction with error propagation. The statistical error scales
/// with the raw one; the background-fraction uncertainty enters the
/// systematic band as v * d(fraction) / (1-fraction)^2.
pub fn correct_background_measured(
    v_raw: &Measured,
    background_fraction: f64,
    background_fraction_err: f64,
) -> Result<Measured> {
    let value = correct_background(v_raw.value, background_fraction)?;
    let dilution = 1.0 - background_fraction;
    let from_fraction = v_raw.value * background_fraction_err / (dilution * dilution);
    Ok(Measured {
        value,
        stat: v_raw.stat / dilution,
        syst: (v_raw.syst / dilution).hypot(from_fraction),
    })
}

/// Heralded efficiency: 2 C_AB / (S - B), where the factor 2 compensates for
/// the 50/50 polarization split.
pub fn estimate_efficiency(c_ab: f64, s_other: f64, b_other: f64) -> Result<f64> {
    if !(s_other > b_other) {
        return Err(Error::NonpositiveHeraldRate {
            singles: s_other,
            background: b_other,
        });
    }
    if !(c_ab >= 0.0) {
        return Err(Error::invalid("c_ab", "must be >= 0", c_ab));
    }
    Ok(2.0 * c_ab / (s_other - b_other))
}

/// Efficiency estimate from accumulated counts with Poisson statistics and a
/// fractional background systematic band.
pub fn estimate_efficiency_measured(
    coincidence_counts: f64,
    singles_counts: f64,
    background_counts: f64,
    background_syst_frac: f64,
) -> Result<Measured> {
    let value = estimate_efficiency(coincidence_counts, singles_counts, background_counts)?;
    let herald = singles_counts - background_counts;
    let var_c = coincidence_counts.max(1.0);
    let var_herald = singles_counts + background_counts;
    let rel_stat = (var_c / (coincidence_counts * coincidence_counts).max(1.0)
        + var_herald / (herald * herald))
        .sqrt();
    let syst = value * background_syst_frac * background_counts / herald;
    Ok(Measured {
        value,
        stat: value * rel_stat,
        syst,
    })
}

/// One point of the visibility-ratio curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioPoint {
    /// Background-corrected collection efficiency.
    pub efficiency: Measured,
    /// Singles-to-coincidence visibility ratio.
    pub ratio: Measured,
}

/// Per-point comparison against the saturation model eta / (4 - eta).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioPointComparison {
    pub efficiency: Measured,
    pub ratio: Measured,
    pub model: f64,
}

/// Weighted straight line through the origin plus the model curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioCurveFit {
    pub slope: f64,
    pub slope_stat: f64,
    pub chi2: f64,
    pub dof: usize,
    pub points: Vec<RatioPointComparison>,
    /// Sampled model curve (efficiency, ratio) for plotting.
    pub model_curve: Vec<(f64, f64)>,
}

/// Saturation model for the visibility ratio.
pub fn ratio_model(efficiency: f64) -> f64 {
    efficiency / (4.0 - efficiency)
}

/// Fit ratio-versus-efficiency points with a zero-intercept line, weighted by
/// statistical errors only, and tabulate the model curve for comparison.
pub fn ratio_curve(points: &[RatioPoint]) -> Result<RatioCurveFit> {
    if points.is_empty() {
        return Err(Error::EmptyInput("ratio points"));
    }
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for p in points {
        let w = if p.ratio.stat > 0.0 {
            1.0 / (p.ratio.stat * p.ratio.stat)
        } else {
            1.0
        };
        sxy += w * p.efficiency.value * p.ratio.value;
        sxx += w * p.efficiency.value * p.efficiency.value;
    }
    if sxx == 0.0 {
        return Err(Error::invalid(
            "efficiency",
            "all efficiencies are zero",
            0.0,
        ));
    }
    let slope = sxy / sxx;
    let chi2: f64 = points
        .iter()
        .map(|p| {
            let w = if p.ratio.stat > 0.0 {
                1.0 / (p.ratio.stat * p.ratio.stat)
            } else {
                1.0
            };
            let r = p.ratio.value - slope * p.efficiency.value;
            w * r * r
        })
        .sum();

    let max_eta = points
        .iter()
        .fold(0.0f64, |acc, p| acc.max(p.efficiency.value));
    let curve_max = (1.05 * max_eta).clamp(1e-3, 1.0);
    let model_curve: Vec<(f64, f64)> = (0..=100)
        .map(|i| {
            let eta = curve_max * i as f64 / 100.0;
            (eta, ratio_model(eta))
        })
        .collect();

    Ok(RatioCurveFit {
        slope,
        slope_stat: (1.0 / sxx).sqrt(),
        chi2,
        dof: points.len().saturating_sub(1),
        points: points
            .iter()
            .map(|p| RatioPointComparison {
                efficiency: p.efficiency,
                ratio: p.ratio,
                model: ratio_model(p.efficiency.value),
            })
            .collect(),
        model_curve,
    })
}
