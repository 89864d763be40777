use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand};

use qfpt_cli::config::{AnalyzeSection, ClassicalSection, DesignSection, EvalSection, QfptdSection};
use qfpt_cli::{parse_config, run, CliError, Measurement, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "qfpt", version, about = "First-passage times of a heated trapped-ion oscillator")]
struct Cli {
    /// Run from a TOML config instead of subcommand flags.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Truncated Fock basis size.
    #[arg(long, global = true)]
    n_cut: Option<usize>,
    /// Print the effective config as TOML and exit without running.
    #[arg(long, global = true)]
    emit_config: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// First-passage-time distribution under stroboscopic step measurements.
    Qfptd(QfptdArgs),
    /// Synthesize a composite step pulse.
    DesignPulse(DesignArgs),
    /// Score pulse-table sequences with and without beam noise.
    EvalPulse(EvalArgs),
    /// Classical noise-driven oscillator first-passage samples.
    ClassicalFpt(ClassicalArgs),
    /// Estimate a distribution from per-trial records.
    Analyze(AnalyzeArgs),
}

#[derive(Args, Debug)]
#[command(group(ArgGroup::new("model").args(["ideal", "realistic"])))]
struct QfptdArgs {
    /// Projective step measurement (default).
    #[arg(long)]
    ideal: bool,
    /// Composite pulse with noise, decay and readout error (Monte Carlo).
    #[arg(long)]
    realistic: bool,
    #[arg(long)]
    nb: usize,
    #[arg(long)]
    theta: f64,
    #[arg(long)]
    steps: usize,
    /// 0 runs the deterministic pipeline.
    #[arg(long, default_value_t = 0)]
    trials: u64,
    #[arg(long)]
    pulse_table: Option<PathBuf>,
    /// Zero-based pulse-table row.
    #[arg(long)]
    pulse_row: Option<usize>,
    #[arg(long, default_value_t = 0.0)]
    noise_sigma_over_w: f64,
    /// Excited-state lifetime in seconds.
    #[arg(long, requires = "ndot_per_s")]
    spont_tau_s: Option<f64>,
    /// Heating rate in quanta per second.
    #[arg(long, requires = "spont_tau_s")]
    ndot_per_s: Option<f64>,
    #[arg(long)]
    detection_error: Option<f64>,
    /// Report detected-mass moments.
    #[arg(long)]
    moments: bool,
    /// Fit the exponential tail beyond T_MIN (default 2·N_B).
    #[arg(long, value_name = "T_MIN", num_args = 0..=1)]
    tail_fit: Option<Option<f64>>,
}

#[derive(Args, Debug)]
struct DesignArgs {
    #[arg(long)]
    nb: usize,
    #[arg(long)]
    mp: usize,
    #[arg(long)]
    n_range: Option<usize>,
    #[arg(long)]
    duration_bound: Option<f64>,
    #[arg(long)]
    restarts: Option<usize>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Pulse table (default: the bundled table).
    #[arg(long)]
    pulse_table: Option<PathBuf>,
    #[arg(long, default_value_t = qfpt_core::step_gate::DEFAULT_N_RANGE)]
    n_range: usize,
    #[arg(long, default_value_t = 0.0)]
    noise_sigma_over_w: f64,
    #[arg(long, default_value_t = 10_000)]
    samples: usize,
}

#[derive(Args, Debug)]
struct ClassicalArgs {
    #[arg(long)]
    eb: f64,
    #[arg(long, default_value_t = 0.5)]
    h0: f64,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    trials: usize,
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    /// CSV with header `trial_id,first_bright_step`; step 0 marks a censored trial.
    #[arg(long)]
    trials_csv: PathBuf,
    #[arg(long)]
    theta: f64,
    #[arg(long)]
    moments: bool,
    /// Fit the exponential tail beyond T_MIN (default: twice the mean).
    #[arg(long, value_name = "T_MIN", num_args = 0..=1)]
    tail_fit: Option<Option<f64>>,
}

fn from_flags(cli: &Cli, command: &Command) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::with_seed(cli.seed.unwrap_or(0));
    match command {
        Command::Qfptd(a) => {
            cfg.qfptd = Some(QfptdSection {
                n_b: a.nb,
                theta: a.theta,
                max_steps: a.steps,
                trials: a.trials,
                measurement: if a.realistic { Measurement::Realistic } else { Measurement::Ideal },
                pulse_table: a.pulse_table.clone().map(absolute),
                pulse_row: a.pulse_row,
                noise_sigma_over_w: a.noise_sigma_over_w,
                spont_tau_s: a.spont_tau_s,
                ndot_per_s: a.ndot_per_s,
                detection_error: a.detection_error,
                moments: a.moments,
                tail_fit: a.tail_fit.map(|t| t.unwrap_or(2.0 * a.nb as f64)),
            })
        }
        Command::DesignPulse(a) => {
            cfg.design_pulse = Some(DesignSection {
                n_b: a.nb,
                m_p: a.mp,
                n_range: a.n_range,
                duration_bound: a.duration_bound,
                restarts: a.restarts,
            })
        }
        Command::EvalPulse(a) => {
            cfg.eval_pulse = Some(EvalSection {
                pulse_table: a.pulse_table.clone().map(absolute),
                n_range: a.n_range,
                noise_sigma_over_w: a.noise_sigma_over_w,
                samples: a.samples,
                levels: qfpt_core::step_gate::DEFAULT_PROFILE_LEVELS,
            })
        }
        Command::ClassicalFpt(a) => {
            cfg.classical_fpt = Some(ClassicalSection {
                e_b: a.eb,
                h0: a.h0,
                trials: a.trials,
                dt: a.dt,
                omega: None,
                crossing: None,
            })
        }
        Command::Analyze(a) => {
            let tail_fit = match a.tail_fit {
                None => None,
                Some(Some(t)) => Some(t),
                Some(None) => Some(default_analyze_t_min(&a.trials_csv, a.theta)?),
            };
            cfg.analyze = Some(AnalyzeSection {
                trials_csv: absolute(a.trials_csv.clone()),
                theta: a.theta,
                max_steps: None,
                moments: a.moments,
                tail_fit,
            })
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Twice the detected mean, so the fit sees the tail rather than the onset.
fn default_analyze_t_min(path: &PathBuf, theta: f64) -> Result<f64, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io {
        path: path.clone(),
        source: e,
    })?;
    let records = qfpt_core::estimators::parse_trial_records(&text)?;
    let res = qfpt_core::estimators::counts_to_fptd(&records, theta, None)?;
    Ok(2.0 * res.moments.mean)
}

fn absolute(p: PathBuf) -> PathBuf {
    std::path::absolute(&p).unwrap_or(p)
}

fn effective_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match (&cli.config, &cli.command) {
        (Some(path), None) => parse_config(path)?,
        (None, Some(cmd)) => from_flags(cli, cmd)?,
        (None, None) => return Err(CliError::Config("give a subcommand or --config <file>".into())),
        (Some(_), Some(_)) => return Err(CliError::Config("--config cannot be combined with a subcommand".into())),
    };
    if let Some(out) = &cli.out {
        cfg.output_dir = absolute(out.clone());
    } else if cli.config.is_none() {
        cfg.output_dir = absolute(cfg.output_dir);
    }
    if cli.config.is_some() {
        if let Some(seed) = cli.seed {
            cfg.seed = seed;
        }
    }
    if cli.threads.is_some() {
        cfg.threads = cli.threads;
    }
    if cli.n_cut.is_some() {
        cfg.n_cut = cli.n_cut;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = effective_config(&cli).and_then(|cfg| {
        if cli.emit_config {
            print!("{}", cfg.to_toml());
            return Ok(());
        }
        let out = run(&cfg)?;
        println!("{}", out.summary);
        for f in &out.files {
            println!("wrote {}", f.display());
        }
        Ok(())
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
