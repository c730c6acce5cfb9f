//! Monte Carlo campaign engine.
//!
//! Generates per-dwell counts (singles at each counter, coincidences) for a
//! delay-scan campaign: Poisson pair arrivals modulated by classical fringes
//! and slow source drift, per-pair routing from the overlap model, saturating
//! clicks, and independent background counts. Every dwell draws from its own
//! counter-seeded substream, so campaign output is a pure function of
//! (config, master seed) regardless of execution order or thread count.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detectors::DetectorParams;
use crate::error::{Error, Result};
use crate::pairstats::{routing, FringeModel, OverlapModel};

/// Pair source: mean rate, linear drift over the campaign, classical fringes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceParams {
    /// Emitted pairs per second at campaign start.
    pub pair_rate: f64,
    /// Fractional linear rate decay over the whole campaign duration.
    pub drift: f64,
    pub fringes: FringeModel,
    /// Scales the background actually generated during pair runs relative to
    /// the declared (measured) background rate. 1.0 means the measurement is
    /// faithful; > 1.0 emulates an underestimated background.
    #[serde(default = "default_hidden_background_scale")]
    pub hidden_background_scale: f64,
    /// Coincidence window for accidental coincidences; None disables them.
    #[serde(default)]
    pub accidental_window_s: Option<f64>,
}

fn default_hidden_background_scale() -> f64 {
    1.0
}

impl SourceParams {
    pub fn validate(&self) -> Result<()> {
        // Zero rate is allowed so background-only campaigns can be generated.
        if !(self.pair_rate >= 0.0) || !self.pair_rate.is_finite() {
            return Err(Error::invalid("pair_rate", "must be >= 0", self.pair_rate));
        }
        if !(0.0..1.0).contains(&self.drift) {
            return Err(Error::invalid("drift", "must be in [0, 1)", self.drift));
        }
        if !(self.hidden_background_scale >= 0.0) {
            return Err(Error::invalid(
                "hidden_background_scale",
                "must be >= 0",
                self.hidden_background_scale,
            ));
        }
        if let Some(w) = self.accidental_window_s {
            if !(w >= 0.0) {
                return Err(Error::invalid("accidental_window_s", "must be >= 0", w));
            }
        }
        self.fringes.validate()
    }
}

/// Delay-scan schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanPlan {
    pub n_points: u32,
    pub dwell_s: f64,
    pub delay_min_fs: f64,
    pub delay_max_fs: f64,
    pub n_scans: u32,
    /// Odd-numbered scans traverse the delay axis in reverse.
    pub alternate_directions: bool,
}

impl ScanPlan {
    pub fn validate(&self) -> Result<()> {
        if self.n_points < 2 {
            return Err(Error::invalid(
                "n_points",
                "must be >= 2",
                self.n_points as f64,
            ));
        }
        if !(self.dwell_s > 0.0) {
            return Err(Error::invalid("dwell_s", "must be > 0", self.dwell_s));
        }
        if !(self.delay_max_fs > self.delay_min_fs) {
            return Err(Error::invalid(
                "delay_max_fs",
                "must exceed delay_min_fs",
                self.delay_max_fs,
            ));
        }
        Ok(())
    }

    /// Evenly spaced delay settings, ascending.
    pub fn delays(&self) -> Vec<f64> {
        let n = self.n_points as usize;
        let step = (self.delay_max_fs - self.delay_min_fs) / (n - 1) as f64;
        (0..n)
            .map(|i| self.delay_min_fs + i as f64 * step)
            .collect()
    }

    pub fn total_duration_s(&self) -> f64 {
        self.n_scans as f64 * self.n_points as f64 * self.dwell_s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScanDirection {
    #[serde(rename = "asc")]
    Ascending,
    #[serde(rename = "desc")]
    Descending,
}

/// One dwell's worth of raw counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanRecord {
    pub scan_id: u32,
    pub direction: ScanDirection,
    pub point_index: u32,
    pub delay_fs: f64,
    pub dwell_s: f64,
    pub singles_a: u64,
    pub singles_b: u64,
    pub coincidences: u64,
}

/// Deterministic substream derivation from a master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedPolicy {
    pub master_seed: u64,
}

impl SeedPolicy {
    pub fn new(master_seed: u64) -> Self {
        SeedPolicy { master_seed }
    }

    /// RNG for one (scan, point) cell. Distinct cells get distinct ChaCha
    /// keys by construction, so streams never collide.
    pub fn substream(&self, scan_id: u32, point_index: u32) -> ChaCha8Rng {
        let mut seed = [0u8; 32];
        seed[0..8].copy_from_slice(&self.master_seed.to_le_bytes());
        seed[8..16].copy_from_slice(&(scan_id as u64).to_le_bytes());
        seed[16..24].copy_from_slice(&(point_index as u64).to_le_bytes());
        seed[24..32].copy_from_slice(b"homsim01");
        ChaCha8Rng::from_seed(seed)
    }
}

/// Counts produced by a single dwell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DwellCounts {
    pub singles_a: u64,
    pub singles_b: u64,
    pub coincidences: u64,
}

pub(crate) fn sample_poisson(rng: &mut impl Rng, lambda: f64) -> u64 {
    if lambda <= 0.0 {
        return 0;
    }
    Poisson::new(lambda)
        .expect("positive finite lambda")
        .sample(rng) as u64
}

pub(crate) fn sample_binomial(rng: &mut impl Rng, n: u64, p: f64) -> u64 {
    if n == 0 || p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return n;
    }
    Binomial::new(n, p).expect("p in (0, 1)").sample(rng)
}

/// Simulate one dwell at delay `delay_fs`.
///
/// Pair arrivals are Poisson with mean
/// `pair_rate * dwell * drift_factor * fringe_factor(delay)`. Each pair is
/// routed per the overlap at this delay; bunched pairs click with probability
/// 2*eta - eta^2, split pairs click independently at each counter and a
/// coincidence requires both. Background clicks are Poisson and never create
/// coincidences unless the accidental model is enabled.
#[allow(clippy::too_many_arguments)]
pub fn simulate_dwell(
    delay_fs: f64,
    source: &SourceParams,
    overlap: &OverlapModel,
    det_a: &DetectorParams,
    det_b: &DetectorParams,
    dwell_s: f64,
    drift_factor: f64,
    rng: &mut impl Rng,
) -> DwellCounts {
    let eta_a = det_a.efficiency;
    let eta_b = det_b.efficiency;

    let v = overlap.overlap_at(delay_fs);
    let route = routing(v).expect("overlap model keeps v in [0, 1]");

    let mean_pairs = source.pair_rate * dwell_s * drift_factor * source.fringes.factor(delay_fs);
    let n_pairs = sample_poisson(rng, mean_pairs);

    // Multinomial routing via sequential binomial conditioning.
    let n_both_a = sample_binomial(rng, n_pairs, route.both_a);
    let rest = n_pairs - n_both_a;
    let split_frac = if route.split + route.both_b > 0.0 {
        route.split / (route.split + route.both_b)
    } else {
        0.0
    };
    let n_split = sample_binomial(rng, rest, split_frac);
    let n_both_b = rest - n_split;

    // Bunched pairs: the counter sees two photons at once.
    let mut singles_a = sample_binomial(rng, n_both_a, 2.0 * eta_a - eta_a * eta_a);
    let mut singles_b = sample_binomial(rng, n_both_b, 2.0 * eta_b - eta_b * eta_b);

    // Split pairs: four-way outcome (both click, A only, B only, neither).
    let k_ab = sample_binomial(rng, n_split, eta_a * eta_b);
    let r1 = n_split - k_ab;
    let p_a_only = if eta_a * eta_b < 1.0 {
        eta_a * (1.0 - eta_b) / (1.0 - eta_a * eta_b)
    } else {
        0.0
    };
    let k_a_only = sample_binomial(rng, r1, p_a_only);
    // Conditioned on neither "both" nor "A only", B clicks with prob eta_b.
    let k_b_only = sample_binomial(rng, r1 - k_a_only, eta_b);

    singles_a += k_ab + k_a_only;
    singles_b += k_ab + k_b_only;
    let mut coincidences = k_ab;

    let bg_scale = source.hidden_background_scale * dwell_s;
    singles_a += sample_poisson(rng, det_a.background_rate * bg_scale);
    singles_b += sample_poisson(rng, det_b.background_rate * bg_scale);

    if let Some(window) = source.accidental_window_s {
        // Accidentals pair clicks already counted in the singles streams,
        // so the coincidence bound survives the clamp.
        let lambda = singles_a as f64 * singles_b as f64 * window / dwell_s;
        coincidences += sample_poisson(rng, lambda);
        coincidences = coincidences.min(singles_a).min(singles_b);
    }

    DwellCounts {
        singles_a,
        singles_b,
        coincidences,
    }
}

/// Linear drift factor at elapsed time `elapsed_s` of a `total_s` campaign.
pub(crate) fn drift_factor(drift: f64, elapsed_s: f64, total_s: f64) -> f64 {
    if total_s <= 0.0 {
        return 1.0;
    }
    1.0 - drift * elapsed_s / total_s
}

#[allow(clippy::too_many_arguments)]
fn campaign_cell(
    plan: &ScanPlan,
    source: &SourceParams,
    overlap: &OverlapModel,
    det_a: &DetectorParams,
    det_b: &DetectorParams,
    seed: &SeedPolicy,
    delays: &[f64],
    total_s: f64,
    scan_id: u32,
    exec_index: u32,
) -> ScanRecord {
    let descending = plan.alternate_directions && scan_id % 2 == 1;
    let point_index = if descending {
        plan.n_points - 1 - exec_index
    } else {
        exec_index
    };
    let delay_fs = delays[point_index as usize];
    // Mid-dwell evaluation: exact mean of a linearly drifting rate.
    let elapsed_mid = ((scan_id * plan.n_points + exec_index) as f64 + 0.5) * plan.dwell_s;
    let factor = drift_factor(source.drift, elapsed_mid, total_s);

    let mut rng = seed.substream(scan_id, point_index);
    let counts = simulate_dwell(
        delay_fs,
        source,
        overlap,
        det_a,
        det_b,
        plan.dwell_s,
        factor,
        &mut rng,
    );
    ScanRecord {
        scan_id,
        direction: if descending {
            ScanDirection::Descending
        } else {
            ScanDirection::Ascending
        },
        point_index,
        delay_fs,
        dwell_s: plan.dwell_s,
        singles_a: counts.singles_a,
        singles_b: counts.singles_b,
        coincidences: counts.coincidences,
    }
}

fn validate_campaign_inputs(
    plan: &ScanPlan,
    source: &SourceParams,
    overlap: &OverlapModel,
    det_a: &DetectorParams,
    det_b: &DetectorParams,
) -> Result<()> {
    plan.validate()?;
    source.validate()?;
    overlap.validate()?;
    det_a.validate()?;
    det_b.validate()?;
    Ok(())
}

/// Run a full campaign, generating dwell cells in parallel.
///
/// Output is identical to [`run_campaign_serial`] for the same inputs.
pub fn run_campaign(
    plan: &ScanPlan,
    source: &SourceParams,
    overlap: &OverlapModel,
    det_a: &DetectorParams,
    det_b: &DetectorParams,
    seed: &SeedPolicy,
) -> Result<Vec<ScanRecord>> {
    validate_campaign_inputs(plan, source, overlap, det_a, det_b)?;
    let delays = plan.delays();
    let total_s = plan.total_duration_s();
    let n_cells = plan.n_scans as usize * plan.n_points as usize;
    Ok((0..n_cells)
        .into_par_iter()
        .map(|cell| {
            let scan_id = (cell / plan.n_points as usize) as u32;
            let exec_index = (cell % plan.n_points as usize) as u32;
            campaign_cell(
                plan, source, overlap, det_a, det_b, seed, &delays, total_s, scan_id, exec_index,
            )
        })
        .collect())
}

/// Single-threaded campaign generation; reference for the determinism contract.
pub fn run_campaign_serial(
    plan: &ScanPlan,
    source: &SourceParams,
    overlap: &OverlapModel,
    det_a: &DetectorParams,
    det_b: &DetectorParams,
    seed: &SeedPolicy,
) -> Result<Vec<ScanRecord>> {
    validate_campaign_inputs(plan, source, overlap, det_a, det_b)?;
    let delays = plan.delays();
    let total_s = plan.total_duration_s();
    let mut records = Vec::with_capacity(plan.n_scans as usize * plan.n_points as usize);
    for scan_id in 0..plan.n_scans {
        for exec_index in 0..plan.n_points {
            records.push(campaign_cell(
                plan, source, overlap, det_a, det_b, seed, &delays, total_s, scan_id, exec_index,
            ));
        }
    }
    Ok(records)
}

/// Detector behind a neutral-density filter (or a partially closed iris):
/// efficiency and background both scale with the transmission.
pub fn apply_nd_filter(det: &DetectorParams, transmission: f64) -> Result<DetectorParams> {
    if !(transmission > 0.0 && transmission <= 1.0) {
        return Err(Error::invalid(
            "transmission",
            "must be in (0, 1]",
            transmission,
        ));
    }
    Ok(DetectorParams {
        efficiency: det.efficiency * transmission,
        background_rate: det.background_rate * transmission,
        label: det.label.clone(),
    })
}

/// Write records as CSV with the schema
/// `scan_id,direction,point_index,delay_fs,dwell_s,singles_a,singles_b,coincidences`.
///
/// The header row is always present, so an empty campaign still produces a
/// parseable file.
pub fn write_records_csv<W: Write>(writer: W, records: &[ScanRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    if records.is_empty() {
        w.write_record([
            "scan_id",
            "direction",
            "point_index",
            "delay_fs",
            "dwell_s",
            "singles_a",
            "singles_b",
            "coincidences",
        ])
        .map_err(csv_error)?;
    }
    for record in records {
        w.serialize(record).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

/// Atomic CSV emission: write to a temporary sibling, then rename into place.
pub fn write_records_csv_atomic(path: &Path, records: &[ScanRecord]) -> Result<()> {
    let tmp = path.with_extension("csv.tmp");
    {
        let file = fs::File::create(&tmp)?;
        write_records_csv(file, records)?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Parse records from CSV; parse failures carry the 1-based line number.
pub fn read_records_csv<R: Read>(reader: R) -> Result<Vec<ScanRecord>> {
    let mut r = csv::Reader::from_reader(reader);
    let mut records = Vec::new();
    for row in r.deserialize() {
        let record: ScanRecord = row.map_err(csv_error)?;
        records.push(record);
    }
    Ok(records)
}

pub fn read_records_csv_path(path: &Path) -> Result<Vec<ScanRecord>> {
    let file = fs::File::open(path)?;
    read_records_csv(file)
}

fn csv_error(err: csv::Error) -> Error {
    let line = err.position().map(|p| p.line()).unwrap_or(0);
    Error::CsvParse {
        line,
        message: err.to_string(),
    }
}
