//! Run configuration: one TOML file per run, one command section per file.
//!
//! ```toml
//! seed = 7
//! output_dir = "out"
//!
//! [qfptd]
//! n_b = 2
//! theta = 0.43
//! max_steps = 40
//! trials = 0
//! ```
//!
//! Relative paths are resolved against the directory holding the file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Measurement {
    /// Projective step at N_B.
    #[default]
    Ideal,
    /// A composite pulse from a pulse table, with beam noise, decay and readout error.
    Realistic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QfptdSection {
    pub n_b: usize,
    pub theta: f64,
    pub max_steps: usize,
    /// 0 selects the deterministic pipeline.
    #[serde(default)]
    pub trials: u64,
    #[serde(default)]
    pub measurement: Measurement,
    /// Pulse table for the realistic model; the bundled table when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pulse_table: Option<PathBuf>,
    /// Zero-based row of the pulse table; the first row with this N_B when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pulse_row: Option<usize>,
    #[serde(default)]
    pub noise_sigma_over_w: f64,
    /// Excited-state lifetime in seconds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spont_tau_s: Option<f64>,
    /// Heating rate in quanta per second, used to convert the lifetime.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ndot_per_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detection_error: Option<f64>,
    #[serde(default)]
    pub moments: bool,
    /// Fit the exponential tail beyond this time.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tail_fit: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignSection {
    pub n_b: usize,
    pub m_p: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_range: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_bound: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub restarts: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    /// The bundled table when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pulse_table: Option<PathBuf>,
    #[serde(default = "default_n_range")]
    pub n_range: usize,
    #[serde(default)]
    pub noise_sigma_over_w: f64,
    #[serde(default = "default_samples")]
    pub samples: usize,
    /// Levels written to the profile CSV.
    #[serde(default = "default_levels")]
    pub levels: usize,
}

fn default_n_range() -> usize {
    qfpt_core::step_gate::DEFAULT_N_RANGE
}

fn default_samples() -> usize {
    10_000
}

fn default_levels() -> usize {
    qfpt_core::step_gate::DEFAULT_PROFILE_LEVELS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassicalSection {
    pub e_b: f64,
    pub h0: f64,
    pub trials: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crossing: Option<qfpt_core::classical::CrossingDetection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyzeSection {
    pub trials_csv: PathBuf,
    pub theta: f64,
    /// Grid length; the largest recorded step when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<usize>,
    #[serde(default)]
    pub moments: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tail_fit: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, with = "seed_repr")]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Basis-size override for the quantum pipelines.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_cut: Option<usize>,
    /// Worker threads; all available cores when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qfptd: Option<QfptdSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub design_pulse: Option<DesignSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_pulse: Option<EvalSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classical_fpt: Option<ClassicalSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub analyze: Option<AnalyzeSection>,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from(".")
}

/// TOML integers are signed 64-bit, so seeds above `i64::MAX` are written as strings.
mod seed_repr {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(seed: &u64, s: S) -> Result<S::Ok, S::Error> {
        match i64::try_from(*seed) {
            Ok(v) => s.serialize_i64(v),
            Err(_) => s.serialize_str(&seed.to_string()),
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Int(i64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Int(v) => u64::try_from(v).map_err(|_| de::Error::custom(format!("seed must be nonnegative, got {v}"))),
            Repr::Text(t) => t
                .parse()
                .map_err(|_| de::Error::custom(format!("seed `{t}` is not a 64-bit unsigned integer"))),
        }
    }
}

/// Which command a config selects.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommandKind {
    Qfptd,
    DesignPulse,
    EvalPulse,
    ClassicalFpt,
    Analyze,
}

impl CommandKind {
    pub fn name(self) -> &'static str {
        match self {
            CommandKind::Qfptd => "qfptd",
            CommandKind::DesignPulse => "design_pulse",
            CommandKind::EvalPulse => "eval_pulse",
            CommandKind::ClassicalFpt => "classical_fpt",
            CommandKind::Analyze => "analyze",
        }
    }
}

impl RunConfig {
    /// Empty config with defaults; exactly one section must be filled in.
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            output_dir: default_output_dir(),
            n_cut: None,
            threads: None,
            qfptd: None,
            design_pulse: None,
            eval_pulse: None,
            classical_fpt: None,
            analyze: None,
        }
    }

    pub fn command(&self) -> Result<CommandKind, CliError> {
        let present: Vec<CommandKind> = [
            (self.qfptd.is_some(), CommandKind::Qfptd),
            (self.design_pulse.is_some(), CommandKind::DesignPulse),
            (self.eval_pulse.is_some(), CommandKind::EvalPulse),
            (self.classical_fpt.is_some(), CommandKind::ClassicalFpt),
            (self.analyze.is_some(), CommandKind::Analyze),
        ]
        .into_iter()
        .filter_map(|(p, k)| p.then_some(k))
        .collect();
        match present.as_slice() {
            [one] => Ok(*one),
            [] => Err(CliError::Config(
                "no command section; expected one of [qfptd], [design_pulse], [eval_pulse], [classical_fpt], [analyze]"
                    .into(),
            )),
            many => Err(CliError::Config(format!(
                "expected exactly one command section, found {}",
                many.iter().map(|k| format!("[{}]", k.name())).collect::<Vec<_>>().join(", ")
            ))),
        }
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        if let Some(q) = self.qfptd.as_mut() {
            q.pulse_table.as_mut().map(fix);
        }
        if let Some(e) = self.eval_pulse.as_mut() {
            e.pulse_table.as_mut().map(fix);
        }
        if let Some(a) = self.analyze.as_mut() {
            fix(&mut a.trials_csv);
        }
    }

    /// Structural checks that do not need the numerical modules.
    pub fn validate(&self) -> Result<(), CliError> {
        self.command()?;
        if self.threads == Some(0) {
            return Err(CliError::Config("threads must be at least 1".into()));
        }
        let must_exist = |p: &Path, key: &str| {
            if p.is_file() {
                Ok(())
            } else {
                Err(CliError::Config(format!("{key}: file `{}` does not exist", p.display())))
            }
        };
        if let Some(q) = &self.qfptd {
            if let Some(p) = &q.pulse_table {
                must_exist(p, "qfptd.pulse_table")?;
            }
            if q.spont_tau_s.is_some() != q.ndot_per_s.is_some() {
                return Err(CliError::Config(
                    "qfptd: spont_tau_s and ndot_per_s must be given together".into(),
                ));
            }
            if q.trials == 0 {
                if q.measurement == Measurement::Realistic {
                    return Err(CliError::Config(
                        "qfptd: the realistic measurement model is Monte Carlo only; set trials > 0".into(),
                    ));
                }
                if q.noise_sigma_over_w != 0.0 || q.detection_error.is_some_and(|e| e != 0.0) {
                    return Err(CliError::Config(
                        "qfptd: beam noise and readout error need Monte Carlo; set trials > 0".into(),
                    ));
                }
            }
            if q.measurement == Measurement::Ideal && (q.pulse_table.is_some() || q.pulse_row.is_some()) {
                return Err(CliError::Config("qfptd: pulse_table applies to the realistic measurement only".into()));
            }
            if q.measurement == Measurement::Ideal && q.noise_sigma_over_w != 0.0 {
                return Err(CliError::Config("qfptd: beam noise applies to the realistic measurement only".into()));
            }
        }
        if let Some(e) = &self.eval_pulse {
            if let Some(p) = &e.pulse_table {
                must_exist(p, "eval_pulse.pulse_table")?;
            }
        }
        if let Some(a) = &self.analyze {
            must_exist(&a.trials_csv, "analyze.trials_csv")?;
        }
        Ok(())
    }

    /// Effective config as TOML, suitable for [`parse_config_str`].
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Parse and validate config text; relative paths resolve against `base`.
pub fn parse_config_str(text: &str, base: &Path) -> Result<RunConfig, CliError> {
    let mut cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
    cfg.resolve_paths(base);
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let base = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    parse_config_str(&text, base)
        .map_err(|e| CliError::Config(format!("{}: {}", path.display(), e.message())))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[qfptd]\nn_b = 2\ntheta = 0.43\nmax_steps = 40\ntrials = 0\n";

    #[test]
    fn minimal_qfptd_gets_defaults() {
        let cfg = parse_config_str(MINIMAL, Path::new("/tmp")).unwrap();
        assert_eq!(cfg.command().unwrap(), CommandKind::Qfptd);
        assert_eq!(cfg.seed, 0);
        assert_eq!(cfg.output_dir, PathBuf::from("/tmp/."));
        let q = cfg.qfptd.unwrap();
        assert_eq!(q.measurement, Measurement::Ideal);
        assert_eq!((q.n_b, q.max_steps, q.trials), (2, 40, 0));
        assert_eq!(q.noise_sigma_over_w, 0.0);
    }

    #[test]
    fn unknown_key_is_named() {
        let text = "[qfptd]\nn_b = 2\nthetaa = 0.43\nmax_steps = 40\n";
        let err = parse_config_str(text, Path::new(".")).unwrap_err();
        assert!(err.to_string().contains("thetaa"), "{err}");
        assert_eq!(err.exit_code(), 1);
        let top = parse_config_str(&format!("sed = 3\n{MINIMAL}"), Path::new(".")).unwrap_err();
        assert!(top.to_string().contains("sed"), "{top}");
    }

    #[test]
    fn effective_config_round_trips() {
        let mut cfg = parse_config_str(MINIMAL, Path::new("/tmp")).unwrap();
        cfg.seed = u64::MAX;
        cfg.n_cut = Some(33);
        let back = parse_config_str(&cfg.to_toml(), Path::new("/elsewhere")).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn sections_are_exclusive() {
        let text = format!("{MINIMAL}[design_pulse]\nn_b = 2\nm_p = 3\n");
        assert!(parse_config_str(&text, Path::new(".")).is_err());
        assert!(parse_config_str("seed = 1\n", Path::new(".")).is_err());
    }

    #[test]
    fn missing_files_are_reported() {
        let text = "[analyze]\ntrials_csv = \"no/such/file.csv\"\ntheta = 0.4\n";
        let err = parse_config_str(text, Path::new("/nonexistent")).unwrap_err();
        assert!(err.to_string().contains("no/such/file.csv"));
    }

    #[test]
    fn realistic_needs_trials() {
        let text = "[qfptd]\nn_b = 2\ntheta = 0.43\nmax_steps = 4\nmeasurement = \"realistic\"\n";
        assert!(parse_config_str(text, Path::new(".")).is_err());
        let ok = format!("{text}trials = 10\n");
        assert!(parse_config_str(&ok, Path::new(".")).is_ok());
    }
}
