//! Statistical integration checks: the Monte Carlo engine against the
//! closed-form expectations, drift behaviour, and the reduction pipeline on
//! simulated campaigns.

use homsim::analysis::bin_and_sum;
use homsim::config::CampaignConfig;
use homsim::detectors::{click_prob, ClickModel, DetectorParams};
use homsim::pairstats::{predict_rates, routing, DipShape, FringeModel, OverlapModel};
use homsim::report::{analyze_campaign, predict_report, run_calibration};
use homsim::simkit::{
    read_records_csv_path, run_campaign, simulate_dwell, write_records_csv_atomic, ScanPlan,
    SeedPolicy, SourceParams,
};

/// The simulate_dwell operating point quoted directly from raw rates:
/// singles 13600/13800 with backgrounds 1415/2006.
fn raw_rate_point() -> (SourceParams, DetectorParams, DetectorParams) {
    let eta_a = 0.084;
    let signal_a = 13_600.0 - 1_415.0;
    let pair_rate = signal_a * 4.0 / (eta_a * (4.0 - eta_a));
    // Solve eta (4 - eta) / 4 * pair_rate = 13800 - 2006 for detector B.
    let target_b: f64 = (13_800.0 - 2_006.0) * 4.0 / pair_rate;
    let eta_b = 2.0 - (4.0 - target_b).sqrt();
    (
        SourceParams {
            pair_rate,
            drift: 0.0,
            fringes: FringeModel {
                visibility: 0.0,
                ..FringeModel::default()
            },
            hidden_background_scale: 1.0,
            accidental_window_s: None,
        },
        DetectorParams::new(eta_a, 1_415.0, "Alice"),
        DetectorParams::new(eta_b, 2_006.0, "Bob"),
    )
}

fn default_overlap() -> OverlapModel {
    OverlapModel {
        peak: 0.394,
        center_fs: 0.0,
        width_fs: 8.5,
        shape: DipShape::Gaussian,
    }
}

#[test]
fn sampler_matches_rate_predictions_through_click_models() {
    // Reconstruct the singles prediction from routing plus the threshold
    // click law; both routes must agree exactly.
    for &v in &[0.0, 0.3, 0.394, 1.0] {
        for &eta in &[0.0, 0.084, 0.5, 1.0] {
            let r = routing(v).unwrap();
            let rebuilt = r.both_a * click_prob(ClickModel::Threshold, 2, eta).unwrap()
                + r.split * click_prob(ClickModel::Threshold, 1, eta).unwrap();
            let predicted = predict_rates(v, eta, eta).unwrap().singles_a_per_pair;
            assert!(
                (rebuilt - predicted).abs() < 1e-14,
                "v={v} eta={eta}: {rebuilt} vs {predicted}"
            );
        }
    }
}

#[test]
fn dwell_means_match_paper_operating_point_within_3_sigma() {
    let (source, det_a, det_b) = raw_rate_point();
    let overlap = default_overlap();
    let seed = SeedPolicy::new(20_06);
    let n_dwells = 1_000u32;
    let delay = 150.0; // far outside the dip

    let mut sum_a = 0.0;
    let mut sum_b = 0.0;
    let mut sum_c = 0.0;
    for i in 0..n_dwells {
        let mut rng = seed.substream(0, i);
        let counts = simulate_dwell(delay, &source, &overlap, &det_a, &det_b, 1.0, 1.0, &mut rng);
        sum_a += counts.singles_a as f64;
        sum_b += counts.singles_b as f64;
        sum_c += counts.coincidences as f64;
    }
    let n = n_dwells as f64;
    let v = overlap.overlap_at(delay);
    let p = predict_rates(v, det_a.efficiency, det_b.efficiency).unwrap();
    let expect_a = source.pair_rate * p.singles_a_per_pair + det_a.background_rate;
    let expect_b = source.pair_rate * p.singles_b_per_pair + det_b.background_rate;
    let expect_c = source.pair_rate * p.coincidence_per_pair;

    assert!((expect_a - 13_600.0).abs() < 1.0);
    assert!((expect_b - 13_800.0).abs() < 1.0);
    assert!(
        (expect_c - 510.0).abs() < 10.0,
        "coincidence point {expect_c}"
    );

    for (label, mean, expect) in [
        ("singles_a", sum_a / n, expect_a),
        ("singles_b", sum_b / n, expect_b),
        ("coincidences", sum_c / n, expect_c),
    ] {
        let band = 3.0 * (expect / n).sqrt();
        assert!(
            (mean - expect).abs() < band,
            "{label}: mean {mean} vs expected {expect} (3-sigma {band})"
        );
    }
}

#[test]
fn dwell_means_match_predictions_inside_the_dip_within_4_sigma() {
    // Law of total expectation over the routing distribution, with fringes
    // and a drift factor in play, checked over ten thousand dwells.
    let (mut source, det_a, det_b) = raw_rate_point();
    source.fringes = FringeModel::default();
    let overlap = default_overlap();
    let seed = SeedPolicy::new(7);
    let delay = 5.0;
    let drift_factor = 0.97;
    let n_dwells = 10_000u32;

    let mut sum_a = 0.0;
    let mut sum_c = 0.0;
    for i in 0..n_dwells {
        let mut rng = seed.substream(1, i);
        let counts = simulate_dwell(
            delay,
            &source,
            &overlap,
            &det_a,
            &det_b,
            1.0,
            drift_factor,
            &mut rng,
        );
        sum_a += counts.singles_a as f64;
        sum_c += counts.coincidences as f64;
    }
    let n = n_dwells as f64;
    let v = overlap.overlap_at(delay);
    let pair_mean = source.pair_rate * drift_factor * source.fringes.factor(delay);
    let p = predict_rates(v, det_a.efficiency, det_b.efficiency).unwrap();
    let expect_a = pair_mean * p.singles_a_per_pair + det_a.background_rate;
    let expect_c = pair_mean * p.coincidence_per_pair;

    for (label, mean, expect) in [
        ("singles_a", sum_a / n, expect_a),
        ("coincidences", sum_c / n, expect_c),
    ] {
        let band = 4.0 * (expect / n).sqrt();
        assert!(
            (mean - expect).abs() < band,
            "{label}: mean {mean} vs expected {expect} (4-sigma {band})"
        );
    }
}

#[test]
fn drift_lowers_late_scans_by_the_configured_fraction() {
    let source = SourceParams {
        pair_rate: 1e7,
        drift: 0.10,
        fringes: FringeModel {
            visibility: 0.0,
            ..FringeModel::default()
        },
        hidden_background_scale: 1.0,
        accidental_window_s: None,
    };
    let det = DetectorParams::new(1.0, 0.0, "d");
    let plan = ScanPlan {
        n_points: 100,
        dwell_s: 1.0,
        delay_min_fs: 100.0,
        delay_max_fs: 200.0,
        n_scans: 10,
        alternate_directions: true,
    };
    let records = run_campaign(
        &plan,
        &source,
        &default_overlap(),
        &det,
        &det,
        &SeedPolicy::new(5),
    )
    .unwrap();

    let scan_mean = |scan: u32| {
        let counts: Vec<f64> = records
            .iter()
            .filter(|r| r.scan_id == scan)
            .map(|r| r.singles_a as f64)
            .collect();
        counts.iter().sum::<f64>() / counts.len() as f64
    };
    // Mid-scan drift factors: 0.995 for the first scan, 0.905 for the last.
    let ratio = scan_mean(9) / scan_mean(0);
    assert!(
        (ratio - 0.905 / 0.995).abs() < 5e-4,
        "late/early ratio {ratio}"
    );
}

#[test]
fn analyze_recovers_configured_physics_at_modest_statistics() {
    let mut config = CampaignConfig::default();
    config.plan.n_scans = 5;
    config.seed = 99;
    let records = run_campaign(
        &config.plan,
        &config.source,
        &config.overlap,
        &config.detector_a.params(),
        &config.detector_b.params(),
        &config.seed_policy(),
    )
    .unwrap();
    let analysis = analyze_campaign(&records, &config).unwrap();
    let report = &analysis.report;

    assert!(report.coincidence_fit.converged);
    assert!(
        (report.coincidence_visibility.value - 0.394).abs() < 0.03,
        "V_c = {}",
        report.coincidence_visibility.value
    );
    let raw = report.singles_a_visibility_raw.value;
    assert!(
        (0.004..0.012).contains(&raw),
        "raw singles visibility {raw}"
    );
    assert!(report.singles_a_visibility_corrected.value > raw);
    assert!(
        (report.background_fraction_a.value - 0.094).abs() < 0.01,
        "fraction_a {}",
        report.background_fraction_a.value
    );
    assert!(
        ((report.efficiency_a.value - 0.084) / 0.084).abs() < 0.05,
        "efficiency_a {}",
        report.efficiency_a.value
    );

    // Dip centers and widths of coincidences and singles agree roughly.
    let c = &report.coincidence_fit;
    let s = &report.singles_a_fit;
    assert!((c.center_fs - s.center_fs).abs() < 2.0);
    assert!((c.width_rms_fs - s.width_rms_fs).abs() < 2.5);
}

#[test]
fn predicted_and_fitted_singles_visibility_agree() {
    let mut config = CampaignConfig::default();
    config.plan.n_scans = 10;
    config.seed = 123;
    let records = run_campaign(
        &config.plan,
        &config.source,
        &config.overlap,
        &config.detector_a.params(),
        &config.detector_b.params(),
        &config.seed_policy(),
    )
    .unwrap();
    let analysis = analyze_campaign(&records, &config).unwrap();
    let predicted = predict_report(&config).unwrap();

    let fitted = analysis.report.singles_a_visibility_corrected;
    let expected = predicted.singles_visibility_a;
    let combined = fitted.total_err().hypot(expected.total_err()).max(1e-12);
    assert!(
        (fitted.value - expected.value).abs() < 3.0 * combined,
        "fitted {} vs predicted {} (sigma {})",
        fitted.value,
        expected.value,
        combined
    );
}

#[test]
fn calibration_is_unbiased_for_a_range_of_efficiencies() {
    for &eta in &[0.05, 0.12] {
        let mut config = CampaignConfig::default();
        config.detector_a.efficiency = eta;
        config.calibration.duration_s = 400.0;
        config.seed = 31;
        let report = run_calibration(&config).unwrap();
        let rel = (report.efficiency_a.value - eta) / eta;
        assert!(rel.abs() < 0.05, "eta {eta}: relative error {rel}");
        // Nonzero heralding background shows up as a systematic band.
        assert!(report.efficiency_a.syst > 0.0);
        assert!(report.efficiency_b.syst > 0.0);
    }
}

#[test]
fn analysis_commutes_with_rate_rescaling() {
    // Scaling every count (and the declared backgrounds) by a constant
    // leaves the estimated efficiency and visibilities unchanged.
    let mut config = CampaignConfig::default();
    config.plan.n_scans = 4;
    config.seed = 1234;
    let records = run_campaign(
        &config.plan,
        &config.source,
        &config.overlap,
        &config.detector_a.params(),
        &config.detector_b.params(),
        &config.seed_policy(),
    )
    .unwrap();
    let base = analyze_campaign(&records, &config).unwrap().report;

    let scale = 4u64;
    let scaled_records: Vec<_> = records
        .iter()
        .map(|r| {
            let mut r = r.clone();
            r.singles_a *= scale;
            r.singles_b *= scale;
            r.coincidences *= scale;
            r
        })
        .collect();
    let mut scaled_config = config.clone();
    scaled_config.detector_a.background_rate *= scale as f64;
    scaled_config.detector_b.background_rate *= scale as f64;
    scaled_config.source.pair_rate *= scale as f64;
    let scaled = analyze_campaign(&scaled_records, &scaled_config)
        .unwrap()
        .report;

    assert_eq!(base.efficiency_a.value, scaled.efficiency_a.value);
    assert_eq!(base.background_fraction_a.value, scaled.background_fraction_a.value);
    for (a, b) in [
        (base.coincidence_visibility, scaled.coincidence_visibility),
        (base.singles_a_visibility_raw, scaled.singles_a_visibility_raw),
        (
            base.singles_a_visibility_corrected,
            scaled.singles_a_visibility_corrected,
        ),
    ] {
        assert!(
            ((a.value - b.value) / a.value).abs() < 1e-6,
            "visibility changed under rescaling: {} vs {}",
            a.value,
            b.value
        );
    }
}

#[test]
fn visibility_law_closes_over_the_efficiency_range() {
    // Drift-free, background-free, fringe-free campaigns reproduce
    // V_s/V_c = eta/(4 - eta) within 3 combined sigma.
    for (i, &eta) in [0.027f64, 0.084, 0.2].iter().enumerate() {
        let mut config = CampaignConfig::default();
        config.source.drift = 0.0;
        config.source.fringes.visibility = 0.0;
        config.detector_a.efficiency = eta;
        config.detector_a.background_rate = 0.0;
        config.detector_b.background_rate = 0.0;
        config.plan.n_scans = 12;
        config.seed = 4100 + i as u64;
        let records = run_campaign(
            &config.plan,
            &config.source,
            &config.overlap,
            &config.detector_a.params(),
            &config.detector_b.params(),
            &config.seed_policy(),
        )
        .unwrap();
        let report = analyze_campaign(&records, &config).unwrap().report;
        let ratio = report.ratio_point_a.ratio;
        let law = eta / (4.0 - eta);
        let sigma = ratio.total_err();
        assert!(
            (ratio.value - law).abs() < 3.0 * sigma,
            "eta {eta}: ratio {} vs law {law} (sigma {sigma})",
            ratio.value
        );
    }
}

#[test]
fn csv_files_round_trip_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = CampaignConfig::default();
    config.plan.n_scans = 2;
    config.plan.n_points = 40;
    let records = run_campaign(
        &config.plan,
        &config.source,
        &config.overlap,
        &config.detector_a.params(),
        &config.detector_b.params(),
        &config.seed_policy(),
    )
    .unwrap();
    let path = dir.path().join("campaign.csv");
    write_records_csv_atomic(&path, &records).unwrap();
    let loaded = read_records_csv_path(&path).unwrap();
    assert_eq!(records, loaded);

    let series = bin_and_sum(&loaded).unwrap();
    assert_eq!(series.singles_a.len(), 40);
}

#[test]
fn hidden_background_biases_the_measured_visibility_upward() {
    // When the true background exceeds the measured one, the corrected
    // visibility overshoots the closed-form prediction.
    let mut config = CampaignConfig::default();
    config.plan.n_scans = 20;
    config.seed = 400;
    config.source.hidden_background_scale = 1.6;
    let records = run_campaign(
        &config.plan,
        &config.source,
        &config.overlap,
        &config.detector_a.params(),
        &config.detector_b.params(),
        &config.seed_policy(),
    )
    .unwrap();
    let with_hidden = analyze_campaign(&records, &config).unwrap();

    config.source.hidden_background_scale = 1.0;
    let records = run_campaign(
        &config.plan,
        &config.source,
        &config.overlap,
        &config.detector_a.params(),
        &config.detector_b.params(),
        &config.seed_policy(),
    )
    .unwrap();
    let faithful = analyze_campaign(&records, &config).unwrap();

    let ratio_hidden = with_hidden.report.ratio_point_a.ratio.value
        / homsim::analysis::ratio_model(with_hidden.report.efficiency_a.value);
    let ratio_faithful = faithful.report.ratio_point_a.ratio.value
        / homsim::analysis::ratio_model(faithful.report.efficiency_a.value);
    assert!(
        ratio_hidden > ratio_faithful,
        "hidden background should inflate measured/model: {ratio_hidden} vs {ratio_faithful}"
    );
}
