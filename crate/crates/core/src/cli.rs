//! Command implementations behind the `pacb` binary: wire a [`RunConfig`]
//! to the library and write JSON/CSV reports.
//!
//! Exit codes: 0 success, 1 configuration or validation error, 2 diverged or
//! infeasible bound (so scripts can branch on feasibility). Outputs carry no
//! timestamps; two runs with the same config are byte-identical regardless
//! of thread count.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::bounds::{BoundCertificate, BoundKind, PsiEstimate};
use crate::config::RunConfig;
use crate::datagen::{load_dataset_csv, sample_dataset};
use crate::error::{Error, Result};
use crate::experiments::{
    certificate_for_dataset, compare_bounds, convergence_sweep, coverage_experiment,
    lambda_grid_in_unit_interval, noniid_asymptote_sweep, AsymptoteSweep, CompareTable,
    CoverageRun, SweepTable,
};
use crate::model::{DataModel, Dataset};
use crate::spectral;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_DIVERGED: i32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Both,
    Json,
    Csv,
}

#[derive(Debug, Clone)]
pub struct OutputOptions {
    pub out_dir: PathBuf,
    pub format: OutputFormat,
}

impl OutputOptions {
    fn want_json(&self) -> bool {
        matches!(self.format, OutputFormat::Both | OutputFormat::Json)
    }

    fn want_csv(&self) -> bool {
        matches!(self.format, OutputFormat::Both | OutputFormat::Csv)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Certify,
    Coverage,
    Compare,
    Sweep,
    Spectrum,
    Simulate,
}

/// Run one command, mapping errors onto the exit-code contract.
pub fn run_command(command: Command, config: &RunConfig, opts: &OutputOptions) -> i32 {
    let outcome = match command {
        Command::Certify => cmd_certify(config, opts),
        Command::Coverage => cmd_coverage(config, opts),
        Command::Compare => cmd_compare(config, opts),
        Command::Sweep => cmd_sweep(config, opts),
        Command::Spectrum => cmd_spectrum(config, opts),
        Command::Simulate => cmd_simulate(config, opts),
    };
    match outcome {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            match err {
                Error::Diverged(_) => EXIT_DIVERGED,
                _ => EXIT_CONFIG,
            }
        }
    }
}

/// The serialized certificate report.
#[derive(Debug, Clone, Serialize)]
pub struct CertificateReport {
    pub bound_kind: BoundKind,
    pub lambda: f64,
    pub delta: f64,
    pub n: usize,
    pub d: usize,
    pub expected_empirical: f64,
    pub kl: f64,
    pub psi: PsiEstimate,
    pub rhs: f64,
    pub rhs_std_error: f64,
    pub config_digest: String,
}

impl CertificateReport {
    fn new(cert: &BoundCertificate, n: usize, d: usize, config_digest: String) -> Self {
        CertificateReport {
            bound_kind: cert.bound_kind,
            lambda: cert.lambda,
            delta: cert.delta,
            n,
            d,
            expected_empirical: cert.expected_empirical,
            kl: cert.kl,
            psi: cert.psi.clone(),
            rhs: cert.rhs,
            rhs_std_error: cert.rhs_std_error,
            config_digest,
        }
    }
}

fn certify_dataset(config: &RunConfig, model: &DataModel) -> Result<Dataset> {
    match &config.dataset {
        Some(path) => load_dataset_csv(path),
        None => sample_dataset(model, config.require_n()?, config.seed_spec()),
    }
}

/// Build the certificate report for a configuration (shared by the CLI and
/// the C API).
pub fn certify_value(config: &RunConfig) -> Result<CertificateReport> {
    let model = config.data_model()?;
    let prior = config.prior_spec(model.dim())?;
    let lambda = config.require_lambda()?;
    let delta = config.require_delta()?;
    let dataset = certify_dataset(config, &model)?;
    let cert = certificate_for_dataset(
        &model,
        &prior,
        &dataset,
        lambda,
        delta,
        config.bound_kind(),
        config.loss_clip,
        config.psi_samples,
        config.seed_spec(),
    )?;
    Ok(CertificateReport::new(
        &cert,
        dataset.n(),
        dataset.d(),
        config.digest(),
    ))
}

pub fn cmd_certify(config: &RunConfig, opts: &OutputOptions) -> Result<i32> {
    let report = certify_value(config)?;
    write_json(opts, "certificate.json", &report)?;
    if report.rhs.is_finite() {
        println!(
            "certificate ({}): rhs = {} (expected empirical {}, kl {}, psi {})",
            report.bound_kind, report.rhs, report.expected_empirical, report.kl, report.psi.value
        );
        Ok(EXIT_OK)
    } else {
        let model = config.data_model()?;
        let prior = config.prior_spec(model.dim())?;
        eprintln!(
            "complexity term diverged: {}",
            crate::bounds::finiteness_condition(&prior, &model, config.require_lambda()?)
        );
        Ok(EXIT_DIVERGED)
    }
}

pub fn coverage_value(config: &RunConfig) -> Result<CoverageRun> {
    let model = config.data_model()?;
    let prior = config.prior_spec(model.dim())?;
    coverage_experiment(
        &model,
        &prior,
        config.require_lambda()?,
        config.require_delta()?,
        config.require_n()?,
        config.require_trials()?,
        config.bound_kind(),
        config.psi_samples,
        config.seed_spec(),
    )
}

pub fn cmd_coverage(config: &RunConfig, opts: &OutputOptions) -> Result<i32> {
    let run = coverage_value(config)?;

    let mut csv = String::from("trial,lhs,rhs,violation\n");
    for row in &run.rows {
        let _ = writeln!(
            csv,
            "{},{},{},{}",
            row.trial,
            row.lhs,
            row.rhs,
            u8::from(row.violation)
        );
    }
    write_csv(opts, "coverage.csv", &csv)?;

    #[derive(Serialize)]
    struct Summary<'a> {
        report: &'a crate::experiments::CoverageReport,
        psi: &'a PsiEstimate,
    }
    write_json(
        opts,
        "coverage.json",
        &Summary {
            report: &run.report,
            psi: &run.psi,
        },
    )?;
    println!(
        "coverage: {} violations in {} trials (rate {}, delta {})",
        run.report.violations, run.report.trials, run.report.rate, run.report.delta
    );
    Ok(EXIT_OK)
}

pub fn compare_value(config: &RunConfig) -> Result<CompareTable> {
    let model = config.data_model()?;
    let DataModel::IidIsotropic(iid) = &model else {
        return Err(Error::Config(
            "compare requires the iid data model".to_string(),
        ));
    };
    let prior = config.prior_spec(model.dim())?;
    let grid = match &config.lambda_grid {
        Some(grid) => grid.clone(),
        None => {
            let sigma_pi = prior.base.cov()[(0, 0)].sqrt();
            let c = config
                .thm2_c
                .unwrap_or(2.0 * iid.sigma_x * iid.sigma_x * sigma_pi * sigma_pi);
            lambda_grid_in_unit_interval(c, config.lambda_grid_points.unwrap_or(20))
        }
    };
    compare_bounds(
        iid,
        &prior,
        &grid,
        config.require_delta()?,
        config.require_n()?,
        config.psi_samples,
        config.seed_spec(),
    )
}

pub fn cmd_compare(config: &RunConfig, opts: &OutputOptions) -> Result<i32> {
    let table = compare_value(config)?;
    let mut csv = String::from("n,lambda,psi,psi_se,lhs,rhs,gap\n");
    for row in &table.rows {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{}",
            row.n, row.lambda, row.psi_value, row.psi_se, row.lhs, row.rhs_thm3, row.gap
        );
    }
    write_csv(opts, "compare.csv", &csv)?;
    write_json(opts, "compare.json", &table)?;
    println!(
        "compare: {} rows, {} skipped",
        table.rows.len(),
        table.skipped.len()
    );
    Ok(EXIT_OK)
}

/// Output of the sweep command: either a convergence table or, for the cor6
/// kind, the asymptote sweep.
#[derive(Debug, Clone, Serialize)]
#[serde(untagged)]
pub enum SweepOutput {
    Convergence(SweepTable),
    Asymptote(AsymptoteSweep),
}

impl SweepOutput {
    pub fn rows(&self) -> &[crate::experiments::SweepRow] {
        match self {
            SweepOutput::Convergence(t) => &t.rows,
            SweepOutput::Asymptote(t) => &t.rows,
        }
    }
}

pub fn sweep_value(config: &RunConfig) -> Result<SweepOutput> {
    let model = config.data_model()?;
    let prior = config.prior_spec(model.dim())?;
    let n_grid = config.require_n_grid()?;
    let kind = config.bound_kind();
    if kind == BoundKind::Cor6 {
        let DataModel::Arx(arx) = &model else {
            return Err(Error::Config(
                "the asymptote sweep requires the ARX data model".to_string(),
            ));
        };
        return Ok(SweepOutput::Asymptote(noniid_asymptote_sweep(
            arx,
            &prior,
            config.require_lambda()?,
            &n_grid,
            config.psi_samples,
            config.seed_spec(),
        )?));
    }
    Ok(SweepOutput::Convergence(convergence_sweep(
        &model,
        &prior,
        config.lambda_rule()?,
        kind,
        config.loss_clip,
        &n_grid,
        config.require_delta()?,
        config.psi_samples,
        config.seed_spec(),
    )?))
}

pub fn cmd_sweep(config: &RunConfig, opts: &OutputOptions) -> Result<i32> {
    let output = sweep_value(config)?;
    write_csv(opts, "sweep.csv", &sweep_csv(output.rows()))?;
    write_json(opts, "sweep.json", &output)?;
    match &output {
        SweepOutput::Asymptote(sweep) => println!(
            "asymptote sweep: limit {} (rho_* in [{}, {}])",
            sweep.limit.value, sweep.rho_star_bracket.0, sweep.rho_star_bracket.1
        ),
        SweepOutput::Convergence(table) => println!("sweep: {} rows", table.rows.len()),
    }
    Ok(EXIT_OK)
}

fn sweep_csv(rows: &[crate::experiments::SweepRow]) -> String {
    let mut csv = String::from("n,lambda,psi,psi_se,lhs,rhs,gap\n");
    for row in rows {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{}",
            row.n, row.lambda, row.psi_value, row.psi_se, row.lhs, row.rhs, row.gap
        );
    }
    csv
}

pub fn spectrum_csv_value(config: &RunConfig) -> Result<String> {
    let model = config.data_model()?;
    let n_max = config
        .n_max
        .or(config.n)
        .ok_or_else(|| Error::Config("field 'n_max' (or 'n') is required".to_string()))?;
    let summary = spectral::rho_sequence(&model, n_max)?;
    let mut csv = String::from("n,rho_n\n");
    for (i, rho) in summary.rho.iter().enumerate() {
        let _ = writeln!(csv, "{},{}", i + 1, rho);
    }
    Ok(csv)
}

pub fn cmd_spectrum(config: &RunConfig, opts: &OutputOptions) -> Result<i32> {
    let csv = spectrum_csv_value(config)?;
    // The spectrum artifact is CSV by contract; always write it.
    write_file(&opts.out_dir, "spectrum.csv", &csv)?;
    let last = csv.lines().last().unwrap_or_default();
    println!("spectrum: wrote {} (last row {last})", "spectrum.csv");
    Ok(EXIT_OK)
}

pub fn simulate_csv_value(config: &RunConfig) -> Result<String> {
    let model = config.data_model()?;
    let n = config.require_n()?;
    let dataset = sample_dataset(&model, n, config.seed_spec())?;
    Ok(crate::datagen::dataset_to_csv(&dataset))
}

pub fn cmd_simulate(config: &RunConfig, opts: &OutputOptions) -> Result<i32> {
    let csv = simulate_csv_value(config)?;
    let path = opts.out_dir.join("dataset.csv");
    write_file(&opts.out_dir, "dataset.csv", &csv)?;
    println!("simulate: wrote {}", path.display());
    Ok(EXIT_OK)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    if !dir.as_os_str().is_empty() {
        fs::create_dir_all(dir)?;
    }
    Ok(())
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<()> {
    ensure_dir(dir)?;
    fs::write(dir.join(name), contents)?;
    Ok(())
}

fn write_json<T: Serialize>(opts: &OutputOptions, name: &str, value: &T) -> Result<()> {
    if !opts.want_json() {
        return Ok(());
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_file(&opts.out_dir, name, &text)
}

fn write_csv(opts: &OutputOptions, name: &str, contents: &str) -> Result<()> {
    if !opts.want_csv() {
        return Ok(());
    }
    write_file(&opts.out_dir, name, contents)
}
