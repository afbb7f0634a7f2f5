use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use lorlab::config::{Experiment, ExperimentConfig};
use lorlab::experiments::{run_experiment, Outcome};
use lorlab::report::{ErrorInfo, RunReport};
use lorlab::LabError;

/// Numerical experiments on Lorentzian time separation, Busemann functions
/// and splitting.
#[derive(Parser, Debug)]
#[command(name = "lorlab", version)]
struct Cli {
    /// timesep, busemann, compare, bochner, split, energycond, hawking or seccheck
    experiment: Experiment,
    /// Experiment config file (`key = value` lines).
    #[arg(long)]
    config: PathBuf,
    /// Directory for report.json, timings.json and field CSVs.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (falls back to LORLAB_THREADS, then all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// The run is a negative control: pass only if a primary check fails.
    #[arg(long)]
    expect_negative: bool,
}

fn threads(cli: &Cli) -> Result<Option<usize>, LabError> {
    if let Some(n) = cli.threads {
        return if n == 0 { Err(LabError::Usage("--threads must be at least 1".into())) } else { Ok(Some(n)) };
    }
    match std::env::var("LORLAB_THREADS") {
        Ok(s) => match s.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(LabError::Usage(format!("LORLAB_THREADS must be a positive integer, got '{s}'"))),
        },
        Err(_) => Ok(None),
    }
}

fn failed(experiment: Experiment, e: LabError) -> Outcome {
    let mut report = RunReport::new(experiment.name(), Default::default(), false);
    report.error = Some(ErrorInfo::from(&e));
    let exit_code = report.finish();
    Outcome { report, exit_code, fields: Vec::new(), timings: Vec::new() }
}

fn execute(cli: &Cli) -> Outcome {
    let text = match std::fs::read_to_string(&cli.config) {
        Ok(t) => t,
        Err(e) => return failed(cli.experiment, LabError::Usage(format!("cannot read {}: {e}", cli.config.display()))),
    };
    let mut cfg = match ExperimentConfig::parse(&text) {
        Ok(c) => c,
        Err(e) => return failed(cli.experiment, e),
    };
    if let Some(e) = cfg.experiment {
        if e != cli.experiment {
            return failed(cli.experiment, LabError::Usage(format!("config is for '{e}' but '{}' was requested", cli.experiment)));
        }
    }
    if cli.expect_negative {
        cfg.expect_negative = true;
    }
    let n = match threads(cli) {
        Ok(n) => n,
        Err(e) => return failed(cli.experiment, e),
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = n {
        builder = builder.num_threads(n);
    }
    match builder.build() {
        Ok(pool) => pool.install(|| run_experiment(&cfg, cli.experiment)),
        Err(e) => failed(cli.experiment, LabError::Internal(format!("thread pool: {e}"))),
    }
}

fn write_outputs(dir: &PathBuf, out: &mut Outcome) -> Result<(), LabError> {
    std::fs::create_dir_all(dir)?;
    for (name, field) in &out.fields {
        let file = format!("{name}.csv");
        field.write_csv(&dir.join(&file))?;
        out.report.artifacts.push(file);
    }
    let timings: serde_json::Map<String, serde_json::Value> =
        out.timings.iter().map(|(k, v)| (k.clone(), serde_json::Value::from(*v))).collect();
    std::fs::write(dir.join("timings.json"), serde_json::to_string_pretty(&timings).unwrap_or_default() + "\n")?;
    out.report.write(&dir.join("report.json"))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut out = execute(&cli);
    if let Some(dir) = &cli.out {
        if let Err(e) = write_outputs(dir, &mut out) {
            eprintln!("error: {e}");
            return ExitCode::from(3);
        }
    }
    print!("{}", out.report.to_json());
    if let Some(e) = &out.report.error {
        eprintln!("error: {}", e.message);
    }
    ExitCode::from(out.exit_code as u8)
}
