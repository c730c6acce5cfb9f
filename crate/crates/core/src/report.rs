//! End-to-end reductions over raw scan records, and the serializable reports
//! the tools emit: closed-form prediction, per-campaign fit report and the
//! closed-iris efficiency calibration.

use serde::{Deserialize, Serialize};

use crate::analysis::{
    bin_and_sum, correct_background_measured, estimate_efficiency_measured, fit_gaussian_line,
    fringe_visibility, remove_fringes, BinnedSeries, FitResult, Measured, RatioPoint,
    PAIR_AVERAGING_VARIANCE_FACTOR,
};
use crate::config::{CampaignConfig, SCHEMA_VERSION};
use crate::error::{Error, Result};
use crate::pairstats::{
    predict_rates, singles_visibility, singles_visibility_error, RatePrediction,
};
use crate::simkit::{apply_nd_filter, sample_poisson, simulate_dwell, ScanRecord};

/// Closed-form prediction for a configured campaign.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictReport {
    pub schema_version: u32,
    /// Ideal coincidence visibility (the peak overlap).
    pub coincidence_visibility: f64,
    /// Predicted singles visibilities with the efficiency uncertainty
    /// propagated into the systematic band.
    pub singles_visibility_a: Measured,
    pub singles_visibility_b: Measured,
    /// Per-pair click probabilities at the dip center.
    pub rates_at_dip: RatePrediction,
    /// Expected counting rates away from the dip, counts/second.
    pub baseline_singles_a: f64,
    pub baseline_singles_b: f64,
    pub baseline_coincidences: f64,
}

pub fn predict_report(config: &CampaignConfig) -> Result<PredictReport> {
    config.validate()?;
    let eta_a = config.detector_a.efficiency;
    let eta_b = config.detector_b.efficiency;
    let peak = config.overlap.peak;

    let at_dip = predict_rates(peak, eta_a, eta_b)?;
    let baseline = predict_rates(0.0, eta_a, eta_b)?;
    let rate = config.source.pair_rate;

    Ok(PredictReport {
        schema_version: SCHEMA_VERSION,
        coincidence_visibility: peak,
        singles_visibility_a: Measured::new(
            singles_visibility(eta_a, peak)?,
            0.0,
            singles_visibility_error(eta_a, config.detector_a.efficiency_err, peak),
        ),
        singles_visibility_b: Measured::new(
            singles_visibility(eta_b, peak)?,
            0.0,
            singles_visibility_error(eta_b, config.detector_b.efficiency_err, peak),
        ),
        rates_at_dip: at_dip,
        baseline_singles_a: rate * baseline.singles_a_per_pair + config.detector_a.background_rate,
        baseline_singles_b: rate * baseline.singles_b_per_pair + config.detector_b.background_rate,
        baseline_coincidences: rate * baseline.coincidence_per_pair,
    })
}

/// One fitted series in a campaign report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesFitReport {
    pub baseline_offset: f64,
    pub baseline_slope: f64,
    pub amplitude: f64,
    pub center_fs: f64,
    pub width_rms_fs: f64,
    pub width_fwhm_fs: f64,
    pub covariance: [[f64; 5]; 5],
    pub chi2: f64,
    pub dof: usize,
    pub visibility: Measured,
    pub converged: bool,
    pub iterations: usize,
    /// Residual fringe visibility of the series after removal.
    pub residual_fringe_visibility: f64,
}

impl SeriesFitReport {
    fn new(fit: &FitResult, residual_fringe_visibility: f64) -> Self {
        SeriesFitReport {
            baseline_offset: fit.baseline_offset,
            baseline_slope: fit.baseline_slope,
            amplitude: fit.amplitude,
            center_fs: fit.center_fs,
            width_rms_fs: fit.width_fs,
            width_fwhm_fs: fit.width_fwhm_fs(),
            covariance: fit.covariance,
            chi2: fit.chi2,
            dof: fit.dof,
            visibility: Measured::new(fit.visibility, fit.visibility_stat, 0.0),
            converged: fit.converged,
            iterations: fit.iterations,
            residual_fringe_visibility,
        }
    }
}

/// Full per-campaign analysis output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignReport {
    pub schema_version: u32,
    pub label: String,
    pub nd_transmission: f64,
    pub n_scans: u32,
    pub coincidence_fit: SeriesFitReport,
    pub singles_a_fit: SeriesFitReport,
    pub singles_b_fit: SeriesFitReport,
    pub background_fraction_a: Measured,
    pub background_fraction_b: Measured,
    pub coincidence_visibility: Measured,
    pub singles_a_visibility_raw: Measured,
    pub singles_a_visibility_corrected: Measured,
    pub singles_b_visibility_raw: Measured,
    pub singles_b_visibility_corrected: Measured,
    /// Efficiencies estimated from the campaign's own far-from-dip region.
    pub efficiency_a: Measured,
    pub efficiency_b: Measured,
    pub ratio_point_a: RatioPoint,
    pub ratio_point_b: RatioPoint,
}

/// Fringe-removed series and their fits, for plot emission.
#[derive(Debug, Clone, PartialEq)]
pub struct ProcessedSeries {
    pub coincidences: BinnedSeries,
    pub singles_a: BinnedSeries,
    pub singles_b: BinnedSeries,
    pub coincidence_fit: FitResult,
    pub singles_a_fit: FitResult,
    pub singles_b_fit: FitResult,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CampaignAnalysis {
    pub report: CampaignReport,
    pub processed: ProcessedSeries,
}

/// Totals over the far-from-dip (outer-quartile) delay region.
struct OuterTotals {
    coincidences: f64,
    singles_a: f64,
    singles_b: f64,
    exposure_s: f64,
}

fn outer_point_set(records: &[ScanRecord]) -> Vec<u32> {
    let mut points: Vec<(u32, f64)> = Vec::new();
    for r in records {
        if !points.iter().any(|&(i, _)| i == r.point_index) {
            points.push((r.point_index, r.delay_fs));
        }
    }
    points.sort_by(|a, b| a.1.total_cmp(&b.1));
    let quartile = points.len() / 4;
    points[..quartile]
        .iter()
        .chain(&points[points.len() - quartile..])
        .map(|&(i, _)| i)
        .collect()
}

fn outer_totals(records: &[ScanRecord], outer: &[u32], scan_filter: Option<u32>) -> OuterTotals {
    let mut totals = OuterTotals {
        coincidences: 0.0,
        singles_a: 0.0,
        singles_b: 0.0,
        exposure_s: 0.0,
    };
    for r in records {
        if let Some(scan) = scan_filter {
            if r.scan_id != scan {
                continue;
            }
        }
        if !outer.contains(&r.point_index) {
            continue;
        }
        totals.coincidences += r.coincidences as f64;
        totals.singles_a += r.singles_a as f64;
        totals.singles_b += r.singles_b as f64;
        totals.exposure_s += r.dwell_s;
    }
    totals
}

fn background_fraction(
    background_rate: f64,
    begin_counts: f64,
    begin_exposure_s: f64,
    syst_frac: f64,
) -> Result<Measured> {
    if begin_counts <= 0.0 || begin_exposure_s <= 0.0 {
        return Err(Error::EmptyInput("beginning-of-run singles"));
    }
    let rate = begin_counts / begin_exposure_s;
    let fraction = background_rate / rate;
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::invalid(
            "background_fraction",
            "must be in [0, 1); background exceeds observed singles",
            fraction,
        ));
    }
    Ok(Measured {
        value: fraction,
        stat: fraction / begin_counts.sqrt(),
        syst: syst_frac * fraction,
    })
}

fn inflate_fit_errors(fit: &mut FitResult, variance_factor: f64) {
    fit.visibility_stat *= variance_factor.sqrt();
    for row in fit.covariance.iter_mut() {
        for entry in row.iter_mut() {
            *entry *= variance_factor;
        }
    }
}

fn ratio_of(numerator: &Measured, denominator: &Measured) -> Measured {
    if numerator.value == 0.0 || denominator.value == 0.0 {
        return Measured::exact(0.0);
    }
    let value = numerator.value / denominator.value;
    let rel_stat = (numerator.stat / numerator.value).hypot(denominator.stat / denominator.value);
    let rel_syst = (numerator.syst / numerator.value).hypot(denominator.syst / denominator.value);
    Measured {
        value,
        stat: value.abs() * rel_stat,
        syst: value.abs() * rel_syst,
    }
}

/// Run the full reduction pipeline on raw records.
///
/// Bins and sums, measures background fractions against beginning-of-run
/// singles, removes classical fringes, fits every series, corrects the
/// singles visibilities for background and estimates both efficiencies from
/// the far-from-dip region.
pub fn analyze_campaign(
    records: &[ScanRecord],
    config: &CampaignConfig,
) -> Result<CampaignAnalysis> {
    config.validate()?;
    let series = bin_and_sum(records)?;
    let n_scans = (records.len() / series.singles_a.len()) as u32;

    let outer = outer_point_set(records);
    let first_scan = records.iter().map(|r| r.scan_id).min().unwrap_or(0);
    let begin = outer_totals(records, &outer, Some(first_scan));
    let syst_frac = config.background_syst_frac;

    let fraction_a = background_fraction(
        config.detector_a.background_rate,
        begin.singles_a,
        begin.exposure_s,
        syst_frac,
    )?;
    let fraction_b = background_fraction(
        config.detector_b.background_rate,
        begin.singles_b,
        begin.exposure_s,
        syst_frac,
    )?;

    let period = config.source.fringes.period_fs;
    let coincidences = remove_fringes(&series.coincidences, period)?;
    let singles_a = remove_fringes(&series.singles_a, period)?;
    let singles_b = remove_fringes(&series.singles_b, period)?;

    let mut coincidence_fit = fit_gaussian_line(&coincidences)?;
    let mut singles_a_fit = fit_gaussian_line(&singles_a)?;
    let mut singles_b_fit = fit_gaussian_line(&singles_b)?;
    for fit in [&mut coincidence_fit, &mut singles_a_fit, &mut singles_b_fit] {
        inflate_fit_errors(fit, PAIR_AVERAGING_VARIANCE_FACTOR);
    }

    let coincidence_visibility = Measured::new(
        coincidence_fit.visibility,
        coincidence_fit.visibility_stat,
        0.0,
    );
    let raw_a = Measured::new(singles_a_fit.visibility, singles_a_fit.visibility_stat, 0.0);
    let raw_b = Measured::new(singles_b_fit.visibility, singles_b_fit.visibility_stat, 0.0);
    let corrected_a =
        correct_background_measured(&raw_a, fraction_a.value, fraction_a.total_err())?;
    let corrected_b =
        correct_background_measured(&raw_b, fraction_b.value, fraction_b.total_err())?;

    // Klyshko-style efficiencies from the distinguishable-delay region; the
    // declared backgrounds over the same exposure enter the subtraction.
    let all = outer_totals(records, &outer, None);
    let efficiency_a = estimate_efficiency_measured(
        all.coincidences,
        all.singles_b,
        config.detector_b.background_rate * all.exposure_s,
        syst_frac,
    )?;
    let efficiency_b = estimate_efficiency_measured(
        all.coincidences,
        all.singles_a,
        config.detector_a.background_rate * all.exposure_s,
        syst_frac,
    )?;

    let report = CampaignReport {
        schema_version: SCHEMA_VERSION,
        label: format!("{}+{}", config.detector_a.label, config.detector_b.label),
        nd_transmission: config.nd_transmission,
        n_scans,
        coincidence_fit: SeriesFitReport::new(
            &coincidence_fit,
            fringe_visibility(&coincidences, period),
        ),
        singles_a_fit: SeriesFitReport::new(&singles_a_fit, fringe_visibility(&singles_a, period)),
        singles_b_fit: SeriesFitReport::new(&singles_b_fit, fringe_visibility(&singles_b, period)),
        background_fraction_a: fraction_a,
        background_fraction_b: fraction_b,
        coincidence_visibility,
        singles_a_visibility_raw: raw_a,
        singles_a_visibility_corrected: corrected_a,
        singles_b_visibility_raw: raw_b,
        singles_b_visibility_corrected: corrected_b,
        efficiency_a,
        efficiency_b,
        ratio_point_a: RatioPoint {
            efficiency: efficiency_a,
            ratio: ratio_of(&corrected_a, &coincidence_visibility),
        },
        ratio_point_b: RatioPoint {
            efficiency: efficiency_b,
            ratio: ratio_of(&corrected_b, &coincidence_visibility),
        },
    };

    Ok(CampaignAnalysis {
        report,
        processed: ProcessedSeries {
            coincidences,
            singles_a,
            singles_b,
            coincidence_fit,
            singles_a_fit,
            singles_b_fit,
        },
    })
}

/// Closed-iris calibration result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub schema_version: u32,
    pub iris_transmission: f64,
    pub duration_s: f64,
    pub efficiency_a: Measured,
    pub efficiency_b: Measured,
    pub configured_efficiency_a: f64,
    pub configured_efficiency_b: f64,
}

// Reserved scan ids for calibration substreams; campaigns use small ids.
const CAL_SCAN_A: u32 = 0xFFFF_FFF0;
const CAL_SCAN_B: u32 = 0xFFFF_FFF1;
const CAL_BG_A: u32 = 0xFFFF_FFF2;
const CAL_BG_B: u32 = 0xFFFF_FFF3;

/// Simulate the closed-iris calibration and estimate both efficiencies.
///
/// To estimate one detector the iris in front of the other is nearly closed
/// (its efficiency and background scale by the iris transmission), the delay
/// sits far outside the dip and the source has not yet drifted. The heralding
/// background is measured in a source-off run, which by construction misses
/// any hidden background excess.
pub fn run_calibration(config: &CampaignConfig) -> Result<CalibrationReport> {
    config.validate()?;
    let cal = &config.calibration;
    let n_dwells = cal.duration_s.ceil() as u32;
    let seed = config.seed_policy();
    let delay = cal.delay_fs;

    let estimate = |target_is_a: bool| -> Result<Measured> {
        let (target, herald, scan_tag, bg_tag) = if target_is_a {
            (
                config.detector_a.params(),
                apply_nd_filter(&config.detector_b.params(), cal.iris_transmission)?,
                CAL_SCAN_A,
                CAL_BG_B,
            )
        } else {
            (
                config.detector_b.params(),
                apply_nd_filter(&config.detector_a.params(), cal.iris_transmission)?,
                CAL_SCAN_B,
                CAL_BG_A,
            )
        };
        let mut coincidences = 0.0;
        let mut herald_singles = 0.0;
        for i in 0..n_dwells {
            let mut rng = seed.substream(scan_tag, i);
            let (det_a, det_b) = if target_is_a {
                (&target, &herald)
            } else {
                (&herald, &target)
            };
            let counts = simulate_dwell(
                delay,
                &config.source,
                &config.overlap,
                det_a,
                det_b,
                1.0,
                1.0,
                &mut rng,
            );
            coincidences += counts.coincidences as f64;
            herald_singles += if target_is_a {
                counts.singles_b as f64
            } else {
                counts.singles_a as f64
            };
        }
        // Source-off background measurement at the herald.
        let mut rng = seed.substream(bg_tag, 0);
        let herald_background =
            sample_poisson(&mut rng, herald.background_rate * n_dwells as f64) as f64;
        estimate_efficiency_measured(
            coincidences,
            herald_singles,
            herald_background,
            config.background_syst_frac,
        )
    };

    Ok(CalibrationReport {
        schema_version: SCHEMA_VERSION,
        iris_transmission: cal.iris_transmission,
        duration_s: n_dwells as f64,
        efficiency_a: estimate(true)?,
        efficiency_b: estimate(false)?,
        configured_efficiency_a: config.detector_a.efficiency,
        configured_efficiency_b: config.detector_b.efficiency,
    })
}
