//! Closed-form statistics of the two-photon interferometer.
//!
//! A photon pair enters the analyzing beamsplitter with a delay-dependent
//! indistinguishability v(tau). The pair is routed to the two counters with
//! probabilities (1+v)/4 (both to A), (1-v)/2 (one to each) and (1+v)/4
//! (both to B); at v = 0 these are the classical 0.25 / 0.5 / 0.25, and at
//! v = 1 every pair bunches and coincidences vanish. Because a saturating
//! counter fires once whether one or two photons arrive, the singles rate at
//! finite efficiency inherits a shallow dip with visibility v * eta/(4-eta).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape of the overlap (dip) profile versus delay.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DipShape {
    Gaussian,
    Triangular,
}

/// Delay-dependent two-photon overlap v(tau) in [0, peak].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapModel {
    /// Peak overlap; equals the ideal coincidence-dip visibility.
    pub peak: f64,
    /// Dip center in femtoseconds.
    pub center_fs: f64,
    /// Gaussian RMS width (or half base width for the triangular shape), fs.
    pub width_fs: f64,
    pub shape: DipShape,
}

impl OverlapModel {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.peak) {
            return Err(Error::invalid("peak", "must be in [0, 1]", self.peak));
        }
        if !(self.width_fs > 0.0) {
            return Err(Error::invalid("width_fs", "must be > 0", self.width_fs));
        }
        if !self.center_fs.is_finite() {
            return Err(Error::invalid(
                "center_fs",
                "must be finite",
                self.center_fs,
            ));
        }
        Ok(())
    }

    /// Overlap at delay `tau_fs`; symmetric about the center, peaks there.
    pub fn overlap_at(&self, tau_fs: f64) -> f64 {
        let d = tau_fs - self.center_fs;
        match self.shape {
            DipShape::Gaussian => {
                let u = d / self.width_fs;
                self.peak * (-0.5 * u * u).exp()
            }
            DipShape::Triangular => self.peak * (1.0 - d.abs() / (2.0 * self.width_fs)).max(0.0),
        }
    }
}

/// Per-pair routing probabilities at the beamsplitter output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoutingDistribution {
    pub both_a: f64,
    pub split: f64,
    pub both_b: f64,
}

/// Routing probabilities for overlap `v`.
///
/// both_a = both_b = (1+v)/4, split = (1-v)/2.
pub fn routing(v: f64) -> Result<RoutingDistribution> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::invalid("v", "overlap must be in [0, 1]", v));
    }
    let both = (1.0 + v) / 4.0;
    Ok(RoutingDistribution {
        both_a: both,
        split: (1.0 - v) / 2.0,
        both_b: both,
    })
}

/// Classical interference fringes riding on the pair flux.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FringeModel {
    /// Fringe period in femtoseconds (the optical period of the light).
    pub period_fs: f64,
    /// Fringe visibility in [0, 1).
    pub visibility: f64,
    /// Phase offset in radians.
    pub phase_rad: f64,
}

impl Default for FringeModel {
    fn default() -> Self {
        FringeModel {
            period_fs: 2.67,
            visibility: 0.01,
            phase_rad: 0.0,
        }
    }
}

impl FringeModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.period_fs > 0.0) {
            return Err(Error::invalid("period_fs", "must be > 0", self.period_fs));
        }
        if !(0.0..1.0).contains(&self.visibility) {
            return Err(Error::invalid(
                "visibility",
                "must be in [0, 1)",
                self.visibility,
            ));
        }
        if !self.phase_rad.is_finite() {
            return Err(Error::invalid(
                "phase_rad",
                "must be finite",
                self.phase_rad,
            ));
        }
        Ok(())
    }

    /// Multiplicative flux factor at delay `tau_fs`; strictly positive.
    pub fn factor(&self, tau_fs: f64) -> f64 {
        1.0 + self.visibility
            * (std::f64::consts::TAU * tau_fs / self.period_fs + self.phase_rad).cos()
    }
}

/// Analytic per-pair click probabilities and the visibilities they imply.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatePrediction {
    /// Probability that counter A fires, per emitted pair.
    pub singles_a_per_pair: f64,
    pub singles_b_per_pair: f64,
    /// Probability of a coincidence (split pair, both counters fire).
    pub coincidence_per_pair: f64,
    /// Singles dip visibility at each counter, (rate(0) - rate(v)) / rate(0).
    pub singles_visibility_a: f64,
    pub singles_visibility_b: f64,
    /// Coincidence dip visibility; equals v for a balanced splitter.
    pub coincidence_visibility: f64,
}

fn singles_per_pair(v: f64, efficiency: f64) -> f64 {
    let split = (1.0 - v) / 2.0;
    let both = (1.0 + v) / 4.0;
    split * efficiency + both * (2.0 * efficiency - efficiency * efficiency)
}

fn visibility_from_rates(baseline: f64, dipped: f64) -> f64 {
    if baseline > 0.0 {
        (baseline - dipped) / baseline
    } else {
        0.0
    }
}

/// Closed-form rates at overlap `v` for counters with the given efficiencies.
pub fn predict_rates(v: f64, efficiency_a: f64, efficiency_b: f64) -> Result<RatePrediction> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::invalid("v", "overlap must be in [0, 1]", v));
    }
    for (name, eta) in [
        ("efficiency_a", efficiency_a),
        ("efficiency_b", efficiency_b),
    ] {
        if !(0.0..=1.0).contains(&eta) {
            return Err(Error::invalid(name, "efficiency must be in [0, 1]", eta));
        }
    }
    let singles_a = singles_per_pair(v, efficiency_a);
    let singles_b = singles_per_pair(v, efficiency_b);
    // Grouping the efficiency product first keeps the prediction bit-exact
    // under detector exchange.
    let pair_efficiency = efficiency_a * efficiency_b;
    let coincidence = pair_efficiency * ((1.0 - v) / 2.0);
    let coincidence_baseline = pair_efficiency * 0.5;
    Ok(RatePrediction {
        singles_a_per_pair: singles_a,
        singles_b_per_pair: singles_b,
        coincidence_per_pair: coincidence,
        singles_visibility_a: visibility_from_rates(singles_per_pair(0.0, efficiency_a), singles_a),
        singles_visibility_b: visibility_from_rates(singles_per_pair(0.0, efficiency_b), singles_b),
        coincidence_visibility: visibility_from_rates(coincidence_baseline, coincidence),
    })
}

/// Singles dip visibility v_c * eta / (4 - eta).
pub fn singles_visibility(efficiency: f64, coincidence_visibility: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&efficiency) {
        return Err(Error::invalid(
            "efficiency",
            "must be in [0, 1]",
            efficiency,
        ));
    }
    if !(0.0..=1.0).contains(&coincidence_visibility) {
        return Err(Error::invalid(
            "coincidence_visibility",
            "must be in [0, 1]",
            coincidence_visibility,
        ));
    }
    if efficiency == 0.0 {
        return Ok(0.0);
    }
    Ok(coincidence_visibility * efficiency / (4.0 - efficiency))
}

/// Propagated error on [`singles_visibility`] from an efficiency uncertainty:
/// d/d(eta) [eta/(4-eta)] = 4/(4-eta)^2.
pub fn singles_visibility_error(
    efficiency: f64,
    efficiency_err: f64,
    coincidence_visibility: f64,
) -> f64 {
    let denom = 4.0 - efficiency;
    coincidence_visibility * 4.0 / (denom * denom) * efficiency_err
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn gaussian_model(peak: f64, width: f64) -> OverlapModel {
        OverlapModel {
            peak,
            center_fs: 0.0,
            width_fs: width,
            shape: DipShape::Gaussian,
        }
    }

    #[test]
    fn overlap_peaks_at_center() {
        let m = gaussian_model(1.0, 8.5);
        assert_abs_diff_eq!(m.overlap_at(0.0), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn overlap_tail_vanishes() {
        let m = gaussian_model(1.0, 8.5);
        assert!(m.overlap_at(1000.0) < 1e-9);
        assert!(m.overlap_at(-1000.0) < 1e-9);
    }

    #[test]
    fn overlap_half_maximum_point() {
        // At tau = w*sqrt(2 ln 2) a Gaussian is at half its peak.
        let m = gaussian_model(0.5, 8.5);
        let tau = 8.5 * (2.0 * std::f64::consts::LN_2).sqrt();
        assert_abs_diff_eq!(m.overlap_at(tau), 0.25, epsilon = 1e-12);
    }

    #[test]
    fn triangular_overlap_hits_zero() {
        let m = OverlapModel {
            peak: 1.0,
            center_fs: 0.0,
            width_fs: 8.5,
            shape: DipShape::Triangular,
        };
        assert_abs_diff_eq!(m.overlap_at(0.0), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(m.overlap_at(8.5), 0.5, epsilon = 1e-15);
        assert_eq!(m.overlap_at(17.0), 0.0);
        assert_eq!(m.overlap_at(40.0), 0.0);
    }

    #[test]
    fn routing_limits() {
        let r = routing(0.0).unwrap();
        assert_eq!((r.both_a, r.split, r.both_b), (0.25, 0.5, 0.25));
        let r = routing(1.0).unwrap();
        assert_eq!((r.both_a, r.split, r.both_b), (0.5, 0.0, 0.5));
        let r = routing(0.5).unwrap();
        assert_eq!((r.both_a, r.split, r.both_b), (0.375, 0.25, 0.375));
    }

    #[test]
    fn routing_rejects_out_of_range() {
        assert!(routing(-0.1).is_err());
        assert!(routing(1.1).is_err());
    }

    #[test]
    fn predicted_singles_at_unit_efficiency() {
        // Perfect counters: 75% of pairs fire A when distinguishable,
        // 50% when fully bunched.
        let p = predict_rates(0.0, 1.0, 1.0).unwrap();
        assert_abs_diff_eq!(p.singles_a_per_pair, 0.75, epsilon = 1e-15);
        let p = predict_rates(1.0, 1.0, 1.0).unwrap();
        assert_abs_diff_eq!(p.singles_a_per_pair, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(p.coincidence_per_pair, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p.singles_visibility_a, 1.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn predict_rejects_out_of_range() {
        assert!(predict_rates(0.5, 1.2, 0.5).is_err());
        assert!(predict_rates(0.5, 0.5, -0.1).is_err());
        assert!(predict_rates(2.0, 0.5, 0.5).is_err());
    }

    #[test]
    fn singles_visibility_examples() {
        assert_abs_diff_eq!(
            singles_visibility(1.0, 1.0).unwrap(),
            1.0 / 3.0,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            singles_visibility(0.084, 0.3939).unwrap(),
            0.00845,
            epsilon = 5e-6
        );
        assert_eq!(singles_visibility(0.0, 0.7).unwrap(), 0.0);
    }

    #[test]
    fn fringe_factor_examples() {
        let quiet = FringeModel {
            visibility: 0.0,
            ..FringeModel::default()
        };
        assert_eq!(quiet.factor(0.0), 1.0);
        assert_eq!(quiet.factor(123.4), 1.0);

        let f = FringeModel::default();
        assert_abs_diff_eq!(f.factor(0.0), 1.01, epsilon = 1e-12);
        assert_abs_diff_eq!(f.factor(f.period_fs / 2.0), 0.99, epsilon = 1e-12);
    }

    #[test]
    fn visibility_matches_affine_slope() {
        // singles(v) is affine in v with slope -eta^2/4.
        for &eta in &[0.05, 0.084, 0.3, 1.0] {
            let s0 = predict_rates(0.0, eta, eta).unwrap().singles_a_per_pair;
            let s1 = predict_rates(1.0, eta, eta).unwrap().singles_a_per_pair;
            assert_abs_diff_eq!(s1 - s0, -eta * eta / 4.0, epsilon = 1e-15);
        }
    }

    proptest! {
        #[test]
        fn routing_is_normalized(v in 0.0f64..=1.0) {
            let r = routing(v).unwrap();
            prop_assert!((r.both_a + r.split + r.both_b - 1.0).abs() < 1e-12);
            for p in [r.both_a, r.split, r.both_b] {
                prop_assert!((0.0..=1.0).contains(&p));
            }
            prop_assert_eq!(r.both_a, r.both_b);
        }

        #[test]
        fn singles_is_affine_in_overlap(
            v in 0.0f64..=1.0,
            eta in 0.0f64..=1.0,
        ) {
            // Linear interpolation between the endpoints reproduces the rate.
            let s0 = predict_rates(0.0, eta, eta).unwrap().singles_a_per_pair;
            let s1 = predict_rates(1.0, eta, eta).unwrap().singles_a_per_pair;
            let sv = predict_rates(v, eta, eta).unwrap().singles_a_per_pair;
            prop_assert!((sv - (s0 + v * (s1 - s0))).abs() < 1e-14);
        }

        #[test]
        fn detector_swap_symmetry(
            v in 0.0f64..=1.0,
            eta_a in 0.0f64..=1.0,
            eta_b in 0.0f64..=1.0,
        ) {
            let p = predict_rates(v, eta_a, eta_b).unwrap();
            let q = predict_rates(v, eta_b, eta_a).unwrap();
            prop_assert_eq!(p.singles_a_per_pair, q.singles_b_per_pair);
            prop_assert_eq!(p.singles_b_per_pair, q.singles_a_per_pair);
            prop_assert_eq!(p.coincidence_per_pair, q.coincidence_per_pair);
            prop_assert_eq!(p.singles_visibility_a, q.singles_visibility_b);
        }

        #[test]
        fn coincidence_strictly_decreasing_in_overlap(
            v1 in 0.0f64..0.999,
            dv in 0.001f64..=1.0,
            eta_a in 0.01f64..=1.0,
            eta_b in 0.01f64..=1.0,
        ) {
            let v2 = (v1 + dv).min(1.0);
            let c1 = predict_rates(v1, eta_a, eta_b).unwrap().coincidence_per_pair;
            let c2 = predict_rates(v2, eta_a, eta_b).unwrap().coincidence_per_pair;
            prop_assert!(c2 < c1);
        }

        #[test]
        fn singles_visibility_below_coincidence_visibility(
            v in 0.0f64..=1.0,
            eta in 0.0f64..=1.0,
        ) {
            let p = predict_rates(v, eta, eta).unwrap();
            prop_assert!(p.singles_visibility_a <= p.coincidence_visibility + 1e-15);
        }

        #[test]
        fn fringe_factor_strictly_positive(
            tau in -1e4f64..1e4,
            vis in 0.0f64..0.999,
            phase in -10.0f64..10.0,
        ) {
            let f = FringeModel { period_fs: 2.67, visibility: vis, phase_rad: phase };
            prop_assert!(f.factor(tau) > 0.0);
        }

        #[test]
        fn overlap_bounded_and_symmetric(
            tau in -200.0f64..200.0,
            peak in 0.0f64..=1.0,
            width in 0.1f64..50.0,
        ) {
            for shape in [DipShape::Gaussian, DipShape::Triangular] {
                let m = OverlapModel { peak, center_fs: 3.0, width_fs: width, shape };
                let v = m.overlap_at(tau);
                prop_assert!((0.0..=peak + 1e-15).contains(&v));
                let mirrored = m.overlap_at(2.0 * m.center_fs - tau);
                prop_assert!((v - mirrored).abs() < 1e-12);
            }
        }
    }
}
