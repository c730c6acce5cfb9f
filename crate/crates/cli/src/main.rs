//! Command-line driver: predict, simulate, analyze, calibrate and report
//! workflows over a single JSON campaign configuration.
//!
//! Log verbosity is controlled by the RUST_LOG environment variable.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use homsim::analysis::{ratio_curve, BinnedSeries, Measured, RatioCurveFit, RatioPoint};
use homsim::config::CampaignConfig;
use homsim::report::{
    analyze_campaign, predict_report, run_calibration, CampaignAnalysis, CampaignReport,
};
use homsim::simkit::{read_records_csv_path, run_campaign, write_records_csv_atomic};
use homsim::Error as CoreError;

const EXIT_CONFIG_INVALID: u8 = 2;
const EXIT_PARSE_ERROR: u8 = 3;
const EXIT_FIT_NONCONVERGENCE: u8 = 4;

#[derive(Parser)]
#[command(
    name = "homsim",
    about = "Two-photon interferometer simulator with saturating-counter analysis",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Closed-form rate and visibility predictions for a configuration.
    Predict {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate campaign CSV data (plus a config echo per campaign).
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the master seed from the config.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Comma-separated ND transmissions, e.g. "1.0,0.8,0.57,0.27";
        /// pass --nd without a value to use the configured series.
        #[arg(long, num_args = 0..=1, default_missing_value = "config")]
        nd: Option<String>,
    },
    /// Reduce campaign CSVs to fit reports and plot data.
    Analyze {
        /// Campaign CSV files; each looks for `<name>.config.json` beside it.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Configuration applied to every input instead of the sibling echo.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate the closed-iris efficiency calibration.
    Calibrate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Analyze plus a markdown summary.
    Report {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    fn new(code: u8, message: impl Into<String>) -> Self {
        CliError {
            code,
            message: message.into(),
        }
    }
}

impl From<CoreError> for CliError {
    fn from(err: CoreError) -> Self {
        let code = match &err {
            CoreError::InvalidConfig { .. } | CoreError::InvalidParameter { .. } => {
                EXIT_CONFIG_INVALID
            }
            CoreError::CsvParse { .. }
            | CoreError::Json(_)
            | CoreError::EmptyInput(_)
            | CoreError::GridMismatch(_) => EXIT_PARSE_ERROR,
            _ => 1,
        };
        CliError::new(code, err.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(err: std::io::Error) -> Self {
        CliError::new(1, err.to_string())
    }
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Predict { config, out } => cmd_predict(config.as_deref(), out.as_deref()),
        Command::Simulate {
            config,
            seed,
            out,
            nd,
        } => cmd_simulate(config.as_deref(), seed, out.as_deref(), nd.as_deref()),
        Command::Analyze {
            inputs,
            config,
            out,
        } => cmd_analyze(&inputs, config.as_deref(), out.as_deref(), false),
        Command::Calibrate { config, seed, out } => {
            cmd_calibrate(config.as_deref(), seed, out.as_deref())
        }
        Command::Report {
            inputs,
            config,
            out,
        } => cmd_analyze(&inputs, config.as_deref(), out.as_deref(), true),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", err.message);
            ExitCode::from(err.code)
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<CampaignConfig, CliError> {
    match path {
        Some(path) => Ok(CampaignConfig::load(path)?),
        None => Ok(CampaignConfig::default()),
    }
}

fn output_dir(out: Option<&Path>, config: &CampaignConfig) -> Result<PathBuf, CliError> {
    let dir = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from(&config.out_dir));
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn write_atomic(path: &Path, contents: &str) -> Result<(), CliError> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn percent(m: &Measured) -> String {
    format!(
        "({:.3} ± {:.3}_stat ± {:.3}_syst)%",
        100.0 * m.value,
        100.0 * m.stat,
        100.0 * m.syst
    )
}

fn cmd_predict(config: Option<&Path>, out: Option<&Path>) -> Result<(), CliError> {
    let config = load_config(config)?;
    let report = predict_report(&config)?;
    if config.detector_a.efficiency == 0.0 || config.detector_b.efficiency == 0.0 {
        log::warn!("a detector has zero efficiency; its singles dip vanishes");
    }

    println!("closed-form prediction");
    println!(
        "  coincidence visibility V_c : {:.2}%",
        100.0 * report.coincidence_visibility
    );
    println!(
        "  singles visibility ({})    : {}",
        config.detector_a.label,
        percent(&report.singles_visibility_a)
    );
    println!(
        "  singles visibility ({})    : {}",
        config.detector_b.label,
        percent(&report.singles_visibility_b)
    );
    println!(
        "  baseline rates             : {:.0}/s, {:.0}/s singles; {:.0}/s coincidences",
        report.baseline_singles_a, report.baseline_singles_b, report.baseline_coincidences
    );

    let dir = output_dir(out, &config)?;
    let path = dir.join("predict.json");
    write_atomic(
        &path,
        &serde_json::to_string_pretty(&report).map_err(CoreError::from)?,
    )?;
    println!("wrote {}", path.display());
    Ok(())
}

fn nd_tag(transmission: f64) -> String {
    format!("nd{:03}", (transmission * 100.0).round() as u32)
}

fn cmd_simulate(
    config: Option<&Path>,
    seed: Option<u64>,
    out: Option<&Path>,
    nd: Option<&str>,
) -> Result<(), CliError> {
    let mut config = load_config(config)?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    config.validate()?;
    let dir = output_dir(out, &config)?;

    let series: Vec<(String, CampaignConfig)> = match nd {
        None => vec![("campaign".to_string(), config.clone())],
        Some(list) => {
            let transmissions: Vec<f64> = if list == "config" {
                config.nd_series.clone()
            } else {
                list.split(',')
                    .map(|t| {
                        t.trim().parse::<f64>().map_err(|e| {
                            CliError::new(
                                EXIT_CONFIG_INVALID,
                                format!("--nd: cannot parse {t:?}: {e}"),
                            )
                        })
                    })
                    .collect::<Result<_, _>>()?
            };
            transmissions
                .iter()
                .enumerate()
                .map(|(i, &t)| {
                    let mut campaign = config.with_nd_transmission(t)?;
                    // Each filter run is an independent data set; give it its
                    // own substream family.
                    campaign.seed = config.seed.wrapping_add(i as u64);
                    Ok((format!("campaign_{}", nd_tag(t)), campaign))
                })
                .collect::<Result<_, CliError>>()?
        }
    };

    if config.plan.n_scans == 0 {
        log::warn!("n_scans is 0; campaigns will be empty");
    }

    for (name, campaign) in &series {
        let records = run_campaign(
            &campaign.plan,
            &campaign.source,
            &campaign.overlap,
            &campaign.detector_a.params(),
            &campaign.detector_b.params(),
            &campaign.seed_policy(),
        )?;
        let csv_path = dir.join(format!("{name}.csv"));
        write_records_csv_atomic(&csv_path, &records)?;
        let echo_path = dir.join(format!("{name}.config.json"));
        campaign.save(&echo_path)?;
        println!(
            "wrote {} ({} records) and {}",
            csv_path.display(),
            records.len(),
            echo_path.display()
        );
    }
    Ok(())
}

fn cmd_calibrate(
    config: Option<&Path>,
    seed: Option<u64>,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let mut config = load_config(config)?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    let report = run_calibration(&config)?;
    println!(
        "closed-iris calibration (iris transmission {:.4}, {}s per detector)",
        report.iris_transmission, report.duration_s
    );
    println!(
        "  {}: {} [configured {:.4}]",
        config.detector_a.label,
        percent(&report.efficiency_a),
        report.configured_efficiency_a
    );
    println!(
        "  {}: {} [configured {:.4}]",
        config.detector_b.label,
        percent(&report.efficiency_b),
        report.configured_efficiency_b
    );
    let dir = output_dir(out, &config)?;
    let path = dir.join("calibration.json");
    write_atomic(
        &path,
        &serde_json::to_string_pretty(&report).map_err(CoreError::from)?,
    )?;
    println!("wrote {}", path.display());
    Ok(())
}

fn sibling_config(csv: &Path) -> PathBuf {
    csv.with_extension("config.json")
}

fn stem_of(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "campaign".into())
}

fn write_series_dat(
    path: &Path,
    series: &BinnedSeries,
    fit: &homsim::analysis::FitResult,
) -> Result<(), CliError> {
    let mut text = String::from("# delay_fs counts fit\n");
    for (&tau, &c) in series.delay_fs.iter().zip(&series.counts) {
        writeln!(text, "{tau} {c} {}", fit.model_at(tau)).expect("string write");
    }
    write_atomic(path, &text)
}

fn write_plot_files(dir: &Path, stem: &str, analysis: &CampaignAnalysis) -> Result<(), CliError> {
    let p = &analysis.processed;
    write_series_dat(
        &dir.join(format!("{stem}_coincidences.dat")),
        &p.coincidences,
        &p.coincidence_fit,
    )?;
    write_series_dat(
        &dir.join(format!("{stem}_singles_a.dat")),
        &p.singles_a,
        &p.singles_a_fit,
    )?;
    write_series_dat(
        &dir.join(format!("{stem}_singles_b.dat")),
        &p.singles_b,
        &p.singles_b_fit,
    )?;
    Ok(())
}

fn print_campaign_summary(stem: &str, report: &CampaignReport) {
    println!("{stem} (ND transmission {:.2}):", report.nd_transmission);
    println!(
        "  coincidence visibility : {}",
        percent(&report.coincidence_visibility)
    );
    println!(
        "  singles A raw/corrected: {} / {}",
        percent(&report.singles_a_visibility_raw),
        percent(&report.singles_a_visibility_corrected)
    );
    println!(
        "  singles B raw/corrected: {} / {}",
        percent(&report.singles_b_visibility_raw),
        percent(&report.singles_b_visibility_corrected)
    );
    println!(
        "  efficiencies           : A {:.4} ± {:.4}, B {:.4} ± {:.4}",
        report.efficiency_a.value,
        report.efficiency_a.total_err(),
        report.efficiency_b.value,
        report.efficiency_b.total_err()
    );
    println!(
        "  dip center/width (coinc): {:.2} fs / {:.2} fs RMS ({:.2} fs FWHM)",
        report.coincidence_fit.center_fs,
        report.coincidence_fit.width_rms_fs,
        report.coincidence_fit.width_fwhm_fs
    );
}

fn markdown_summary(
    analyses: &[(String, CampaignReport)],
    curve: Option<&RatioCurveFit>,
) -> String {
    let mut text = String::from("# Campaign analysis summary\n\n");
    text.push_str(
        "| campaign | ND | V_c | V_s(A) raw | V_s(A) corr | V_s(B) corr | eta_A | eta_B |\n",
    );
    text.push_str("|---|---|---|---|---|---|---|---|\n");
    for (stem, report) in analyses {
        writeln!(
            text,
            "| {stem} | {:.2} | {:.2}% ± {:.2}% | {:.3}% | {:.3}% ± {:.3}% | {:.3}% ± {:.3}% | {:.4} | {:.4} |",
            report.nd_transmission,
            100.0 * report.coincidence_visibility.value,
            100.0 * report.coincidence_visibility.stat,
            100.0 * report.singles_a_visibility_raw.value,
            100.0 * report.singles_a_visibility_corrected.value,
            100.0 * report.singles_a_visibility_corrected.total_err(),
            100.0 * report.singles_b_visibility_corrected.value,
            100.0 * report.singles_b_visibility_corrected.total_err(),
            report.efficiency_a.value,
            report.efficiency_b.value,
        )
        .expect("string write");
    }
    if let Some(curve) = curve {
        text.push_str("\n## Visibility ratio versus efficiency\n\n");
        writeln!(
            text,
            "Through-origin line fit: slope {:.4} ± {:.4}, chi2 {:.2} over {} dof.\n",
            curve.slope, curve.slope_stat, curve.chi2, curve.dof
        )
        .expect("string write");
        text.push_str("| efficiency | ratio | stat | syst | model eta/(4-eta) |\n");
        text.push_str("|---|---|---|---|---|\n");
        for point in &curve.points {
            writeln!(
                text,
                "| {:.4} | {:.4} | {:.4} | {:.4} | {:.4} |",
                point.efficiency.value,
                point.ratio.value,
                point.ratio.stat,
                point.ratio.syst,
                point.model
            )
            .expect("string write");
        }
    }
    text
}

fn cmd_analyze(
    inputs: &[PathBuf],
    config_override: Option<&Path>,
    out: Option<&Path>,
    markdown: bool,
) -> Result<(), CliError> {
    let mut analyses: Vec<(String, CampaignReport)> = Vec::new();
    let mut ratio_points: Vec<RatioPoint> = Vec::new();
    let mut all_converged = true;
    let mut dir_for_outputs: Option<PathBuf> = None;

    for csv in inputs {
        let config_path = match config_override {
            Some(path) => path.to_path_buf(),
            None => sibling_config(csv),
        };
        if !config_path.exists() {
            return Err(CliError::new(
                EXIT_CONFIG_INVALID,
                format!(
                    "no configuration for {}: expected {} (or pass --config)",
                    csv.display(),
                    config_path.display()
                ),
            ));
        }
        let config = CampaignConfig::load(&config_path)?;
        let records = read_records_csv_path(csv)?;
        let analysis = analyze_campaign(&records, &config)?;

        let stem = stem_of(csv);
        let dir = match out {
            Some(dir) => {
                fs::create_dir_all(dir)?;
                dir.to_path_buf()
            }
            None => csv
                .parent()
                .filter(|p| !p.as_os_str().is_empty())
                .map(Path::to_path_buf)
                .unwrap_or_else(|| PathBuf::from(".")),
        };
        dir_for_outputs.get_or_insert_with(|| dir.clone());

        let report_path = dir.join(format!("{stem}.report.json"));
        write_atomic(
            &report_path,
            &serde_json::to_string_pretty(&analysis.report).map_err(CoreError::from)?,
        )?;
        write_plot_files(&dir, &stem, &analysis)?;
        print_campaign_summary(&stem, &analysis.report);
        println!("  wrote {}", report_path.display());

        for fit in [
            &analysis.report.coincidence_fit,
            &analysis.report.singles_a_fit,
            &analysis.report.singles_b_fit,
        ] {
            if !fit.converged {
                log::warn!("{stem}: a fit hit the iteration limit without converging");
                all_converged = false;
            }
        }
        ratio_points.push(analysis.report.ratio_point_b);
        analyses.push((stem, analysis.report));
    }

    let mut curve = None;
    if analyses.len() >= 2 {
        let fit = ratio_curve(&ratio_points)?;
        let dir = dir_for_outputs
            .clone()
            .unwrap_or_else(|| PathBuf::from("."));
        let mut points_text =
            String::from("# efficiency eff_stat eff_syst ratio ratio_stat ratio_syst model\n");
        for point in &fit.points {
            writeln!(
                points_text,
                "{} {} {} {} {} {} {}",
                point.efficiency.value,
                point.efficiency.stat,
                point.efficiency.syst,
                point.ratio.value,
                point.ratio.stat,
                point.ratio.syst,
                point.model
            )
            .expect("string write");
        }
        write_atomic(&dir.join("ratio_points.dat"), &points_text)?;
        let mut model_text = String::from("# efficiency ratio\n");
        for (eta, ratio) in &fit.model_curve {
            writeln!(model_text, "{eta} {ratio}").expect("string write");
        }
        write_atomic(&dir.join("ratio_model.dat"), &model_text)?;
        write_atomic(
            &dir.join("ratio_curve.json"),
            &serde_json::to_string_pretty(&fit).map_err(CoreError::from)?,
        )?;
        println!(
            "ratio curve: slope {:.4} ± {:.4}, chi2/dof {:.2}",
            fit.slope,
            fit.slope_stat,
            fit.chi2 / fit.dof.max(1) as f64
        );
        curve = Some(fit);
    }

    if markdown {
        let dir = dir_for_outputs.unwrap_or_else(|| PathBuf::from("."));
        let path = dir.join("report.md");
        write_atomic(&path, &markdown_summary(&analyses, curve.as_ref()))?;
        println!("wrote {}", path.display());
    }

    if !all_converged {
        return Err(CliError::new(
            EXIT_FIT_NONCONVERGENCE,
            "one or more fits did not converge",
        ));
    }
    Ok(())
}
