//! Batch front end for the first-passage toolkit.

pub mod config;

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use qfpt_core::classical::{self, ClassicalConfig};
use qfpt_core::designer::{self, DesignSpec};
use qfpt_core::estimators;
use qfpt_core::fpt::{
    self, FptConfig, FptdResult, MeasurementModel, RealisticOptions, SpontEmissionModel,
};
use qfpt_core::pulse_table::{parse_pulse_table, write_pulse_table, TABLE_ONE};
use qfpt_core::seeds;
use qfpt_core::step_gate::{self, IntensityNoise, PulseSequence, StepMeasurement};

pub use config::{parse_config, parse_config_str, CommandKind, Measurement, RunConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Core(#[from] qfpt_core::Error),
}

impl CliError {
    /// 1 config or I/O, 2 numerical, 3 truncation.
    pub fn exit_code(&self) -> i32 {
        use qfpt_core::Error as E;
        match self {
            CliError::Config(_) | CliError::Io { .. } => 1,
            CliError::Core(e) => match e {
                E::Truncation { .. } => 3,
                E::InvalidParameter(_) | E::Parse { .. } | E::Io(_) | E::Json(_) => 1,
                _ => 2,
            },
        }
    }

    pub(crate) fn message(&self) -> String {
        match self {
            CliError::Config(m) => m.clone(),
            other => other.to_string(),
        }
    }
}

/// Files written by one run, in write order.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub files: Vec<PathBuf>,
    /// One-line human summary.
    pub summary: String,
}

/// Dispatch the configured command inside a pool of `cfg.threads` workers.
pub fn run(cfg: &RunConfig) -> Result<RunOutput, CliError> {
    cfg.validate()?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cfg.threads {
        pool = pool.num_threads(n);
    }
    let pool = pool
        .build()
        .map_err(|e| CliError::Config(format!("cannot start {} worker threads: {e}", cfg.threads.unwrap_or(0))))?;
    pool.install(|| dispatch(cfg))
}

fn dispatch(cfg: &RunConfig) -> Result<RunOutput, CliError> {
    fs::create_dir_all(&cfg.output_dir).map_err(|e| CliError::Io {
        path: cfg.output_dir.clone(),
        source: e,
    })?;
    match cfg.command()? {
        CommandKind::Qfptd => run_qfptd(cfg),
        CommandKind::DesignPulse => run_design(cfg),
        CommandKind::EvalPulse => run_eval(cfg),
        CommandKind::ClassicalFpt => run_classical(cfg),
        CommandKind::Analyze => run_analyze(cfg),
    }
}

fn write(path: PathBuf, text: &str, files: &mut Vec<PathBuf>) -> Result<(), CliError> {
    fs::write(&path, text).map_err(|e| CliError::Io {
        path: path.clone(),
        source: e,
    })?;
    files.push(path);
    Ok(())
}

/// Sidecar with the full effective config next to every result file.
fn write_meta(cfg: &RunConfig, stem: &str, result: Value, files: &mut Vec<PathBuf>) -> Result<(), CliError> {
    let meta = json!({
        "command": cfg.command()?.name(),
        "version": env!("CARGO_PKG_VERSION"),
        "config": serde_json::to_value(cfg).expect("config serializes"),
        "result": result,
    });
    let text = serde_json::to_string_pretty(&meta).expect("metadata serializes") + "\n";
    write(cfg.output_dir.join(format!("{stem}.meta.json")), &text, files)
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn load_table(path: Option<&Path>) -> Result<Vec<PulseSequence>, CliError> {
    let seqs = match path {
        Some(p) => parse_pulse_table(&read(p)?)?,
        None => parse_pulse_table(TABLE_ONE)?,
    };
    if seqs.is_empty() {
        return Err(CliError::Config("pulse table has no rows".into()));
    }
    Ok(seqs)
}

/// Moments and tail fit requested as post-processing.
fn post_process(res: &mut FptdResult, moments: bool, tail_fit: Option<f64>, extra: &mut Value) -> Result<(), CliError> {
    if moments {
        extra["moments"] = serde_json::to_value(fpt::moments(res)).expect("moments serialize");
    }
    if let Some(t_min) = tail_fit {
        let fit = fpt::tail_fit(res, t_min)?;
        res.tail = Some(fit);
        extra["tail_fit"] = serde_json::to_value(fit).expect("fit serializes");
    }
    Ok(())
}

fn run_qfptd(cfg: &RunConfig) -> Result<RunOutput, CliError> {
    let q = cfg.qfptd.as_ref().expect("dispatched on section");
    let mut fc = FptConfig::new(q.n_b, q.theta, q.max_steps)?;
    if let Some(n) = cfg.n_cut {
        fc = fc.with_n_cut(n);
        fc.validate()?;
    }
    let spont = match (q.spont_tau_s, q.ndot_per_s) {
        (Some(tau), Some(ndot)) => Some(SpontEmissionModel::new(tau, ndot)?),
        _ => None,
    };
    let mut extra = json!({});
    let mut res = if q.trials == 0 {
        let ideal = fpt::qfptd_ideal(&fc)?;
        match &spont {
            Some(m) => fpt::spont_forward(&ideal, m)?,
            None => ideal,
        }
    } else {
        let model = match q.measurement {
            Measurement::Ideal => MeasurementModel::Kraus(StepMeasurement::perfect(q.n_b, fc.space()?)),
            Measurement::Realistic => {
                let seqs = load_table(q.pulse_table.as_deref())?;
                let row = match q.pulse_row {
                    Some(r) => r,
                    None => seqs.iter().position(|s| s.n_b_target() == q.n_b).ok_or_else(|| {
                        CliError::Config(format!("pulse table has no row with N_B = {}", q.n_b))
                    })?,
                };
                let seq = seqs.get(row).cloned().ok_or_else(|| {
                    CliError::Config(format!("pulse_row {row} out of range ({} rows)", seqs.len()))
                })?;
                if seq.n_b_target() != q.n_b {
                    return Err(CliError::Config(format!(
                        "pulse row {row} targets N_B = {}, not {}",
                        seq.n_b_target(),
                        q.n_b
                    )));
                }
                extra["pulse"] = json!({
                    "row": row,
                    "phases_pi": seq.phases_pi(),
                    "durations": seq.durations(),
                    "eta": seq.sideband().eta,
                });
                MeasurementModel::Pulse(seq)
            }
        };
        let mut opts = RealisticOptions::new(q.trials, cfg.seed);
        opts.spont = spont;
        if q.noise_sigma_over_w > 0.0 {
            opts.noise = Some(IntensityNoise::new(q.noise_sigma_over_w)?);
        }
        opts.detection_error = q.detection_error.unwrap_or(match q.measurement {
            Measurement::Ideal => 0.0,
            Measurement::Realistic => fpt::DEFAULT_DETECTION_ERROR,
        });
        extra["detection_error"] = json!(opts.detection_error);
        fpt::qfptd_realistic(&fc, &model, &opts)?
    };
    extra["basis_size"] = json!(fc.space()?.dim());
    if let Some(m) = &spont {
        extra["false_bright_per_step"] = json!(1.0 - m.step_survival(q.theta));
    }
    post_process(&mut res, q.moments, q.tail_fit, &mut extra)?;
    if q.moments {
        extra["continuous_limit_moments"] =
            serde_json::to_value(fpt::analytic_quantum_moments(q.n_b)?).expect("moments serialize");
    }
    let mut files = Vec::new();
    write(cfg.output_dir.join("qfptd.csv"), &res.to_csv(), &mut files)?;
    let mut result = res.metadata();
    merge(&mut result, extra);
    write_meta(cfg, "qfptd", result, &mut files)?;
    Ok(RunOutput {
        files,
        summary: format!(
            "qfptd: {} steps, escape {:.6}, mean {:.6}",
            res.steps(),
            res.escape.last().copied().unwrap_or(0.0),
            res.moments.mean
        ),
    })
}

fn merge(into: &mut Value, from: Value) {
    if let (Some(a), Value::Object(b)) = (into.as_object_mut(), from) {
        a.extend(b);
    }
}

fn run_design(cfg: &RunConfig) -> Result<RunOutput, CliError> {
    let d = cfg.design_pulse.as_ref().expect("dispatched on section");
    let mut spec = DesignSpec::new(d.n_b, d.m_p, cfg.seed);
    if let Some(n) = d.n_range {
        spec = spec.with_n_range(n);
    }
    if let Some(b) = d.duration_bound {
        spec = spec.with_duration_bound(b);
    }
    if let Some(r) = d.restarts {
        spec = spec.with_restarts(r);
    }
    let outcome = designer::design_pulse_detailed(&spec)?;
    let mut files = Vec::new();
    write(
        cfg.output_dir.join("design_pulse.txt"),
        &write_pulse_table(std::slice::from_ref(&outcome.sequence)),
        &mut files,
    )?;
    let restarts: Vec<Value> = outcome
        .restarts
        .iter()
        .map(|r| {
            json!({
                "seed": r.seed.to_string(),
                "initial_objective": r.initial_objective,
                "final_objective": r.final_objective,
                "iterations": r.iterations,
                "converged": r.converged,
            })
        })
        .collect();
    let result = json!({
        "objective": outcome.objective,
        "n_range": spec.n_range,
        "duration_bound": spec.duration_bound,
        "total_duration": outcome.sequence.total_duration(),
        "kappa": step_gate::step_profile(&outcome.sequence, spec.n_range, 1.0).kappa,
        "restarts": restarts,
    });
    write_meta(cfg, "design_pulse", result, &mut files)?;
    Ok(RunOutput {
        files,
        summary: format!("design-pulse: objective {:.6e}", outcome.objective),
    })
}

fn run_eval(cfg: &RunConfig) -> Result<RunOutput, CliError> {
    let e = cfg.eval_pulse.as_ref().expect("dispatched on section");
    let seqs = load_table(e.pulse_table.as_deref())?;
    let noise = IntensityNoise::new(e.noise_sigma_over_w)?;
    let levels = e.levels.max(e.n_range);
    let mut csv = String::from("row,n_b,m_p,n,kappa,kappa_noisy\n");
    let mut rows = Vec::new();
    for (i, seq) in seqs.iter().enumerate() {
        let spec = DesignSpec::new(seq.n_b_target(), seq.len(), cfg.seed).with_n_range(e.n_range);
        let noiseless = step_gate::step_profile(seq, levels, 1.0);
        let mut rng = seeds::stream(cfg.seed, i as u64);
        let noisy = step_gate::noise_averaged_profile(seq, levels, Some(&noise), e.samples, &mut rng)?;
        let mut rng = seeds::stream(cfg.seed, i as u64);
        let noisy_error =
            step_gate::mean_step_error(seq, seq.n_b_target(), e.n_range, Some(&noise), e.samples, &mut rng)?;
        let noiseless_error = step_gate::mean_step_error(seq, seq.n_b_target(), e.n_range, None, 1, &mut rng)?;
        for n in 0..levels {
            csv.push_str(&format!(
                "{i},{},{},{n},{},{}\n",
                seq.n_b_target(),
                seq.len(),
                noiseless.kappa[n],
                noisy.kappa[n]
            ));
        }
        rows.push(json!({
            "row": i,
            "n_b": seq.n_b_target(),
            "m_p": seq.len(),
            "objective": designer::objective(seq, &spec),
            "noiseless_error": noiseless_error,
            "noisy_error": noisy_error,
        }));
    }
    let mut files = Vec::new();
    write(cfg.output_dir.join("eval_pulse.csv"), &csv, &mut files)?;
    let source = if e.pulse_table.is_some() { "file" } else { "bundled" };
    write_meta(
        cfg,
        "eval_pulse",
        json!({ "table": source, "rows": rows, "mean_rabi_scale": noise.mean_scale() }),
        &mut files,
    )?;
    Ok(RunOutput {
        files,
        summary: format!("eval-pulse: {} sequences", seqs.len()),
    })
}

fn run_classical(cfg: &RunConfig) -> Result<RunOutput, CliError> {
    let c = cfg.classical_fpt.as_ref().expect("dispatched on section");
    let mut cc = ClassicalConfig::new(c.e_b, c.h0)?;
    if let Some(w) = c.omega {
        cc = cc.with_omega(w).with_dt(classical::default_dt(w));
    }
    if let Some(dt) = c.dt {
        cc = cc.with_dt(dt);
    }
    if let Some(x) = c.crossing {
        cc = cc.with_crossing(x);
    }
    cc.validate()?;
    let s = classical::simulate_classical_fpt(&cc, c.trials, cfg.seed)?;
    let analytic = classical::classical_moments(&cc);
    let mut files = Vec::new();
    write(cfg.output_dir.join("classical_fpt.csv"), &s.to_csv(), &mut files)?;
    let result = json!({
        "delta_h": cc.delta_h(),
        "dt": cc.dt,
        "omega": cc.omega,
        "max_time": cc.max_time,
        "crossing": cc.crossing,
        "analytic_moments": analytic,
        "sample_moments": {
            "mean": s.mean,
            "mean_stderr": s.mean_stderr,
            "second_moment": s.second_moment,
            "second_stderr": s.second_stderr,
            "third_moment": s.third_moment(),
        },
        "censored": s.censored,
    });
    write_meta(cfg, "classical_fpt", result, &mut files)?;
    Ok(RunOutput {
        files,
        summary: format!(
            "classical-fpt: mean {:.4} ± {:.4} (analytic {}), second {:.4} ± {:.4} (analytic {})",
            s.mean, s.mean_stderr, analytic.mean, s.second_moment, s.second_stderr, analytic.second_moment
        ),
    })
}

fn run_analyze(cfg: &RunConfig) -> Result<RunOutput, CliError> {
    let a = cfg.analyze.as_ref().expect("dispatched on section");
    let records = estimators::parse_trial_records(&read(&a.trials_csv)?)?;
    let mut res = estimators::counts_to_fptd(&records, a.theta, a.max_steps)?;
    let mut extra = json!({ "trials": records.len() });
    post_process(&mut res, a.moments, a.tail_fit, &mut extra)?;
    let mut files = Vec::new();
    write(cfg.output_dir.join("analyze.csv"), &res.to_csv(), &mut files)?;
    let mut result = res.metadata();
    merge(&mut result, extra);
    write_meta(cfg, "analyze", result, &mut files)?;
    Ok(RunOutput {
        files,
        summary: format!(
            "analyze: {} trials over {} steps, escape {:.6}",
            records.len(),
            res.steps(),
            res.escape.last().copied().unwrap_or(0.0)
        ),
    })
}
