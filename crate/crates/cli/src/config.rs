//! The experiment config file: one JSON document that drives every
//! subcommand. Missing keys take their defaults; unknown keys are errors.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Duration;

use privfed_core::data::GeneratorSpec;
use privfed_core::learners::TrainConfig;
use privfed_core::{Exec, ModelKind};
use privfed_federation::{PrivacySpec, RunSpec, Weighting};
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Desk-scale preset for generated data.
pub const DESK_SCALE: f64 = 0.02;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub learner: ModelKind,
    pub privacy: PrivacySpec,
    pub rounds: usize,
    pub local_epochs: usize,
    pub learning_rate: f64,
    pub l2_penalty: f64,
    pub batch_size: usize,
    /// Per-site batch size overrides, keyed by site name.
    pub site_batch_size: BTreeMap<String, usize>,
    pub weighting: Weighting,
    pub threshold: f64,
    pub train_frac: f64,
    pub seed: u64,
    pub data: DataSource,
    pub central: CentralConfig,
    pub network: NetworkConfig,
    /// Run the data-parallel inner loops on the rayon pool.
    pub parallel: bool,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            learner: ModelKind::FeedForwardNN,
            privacy: PrivacySpec::Plain,
            rounds: 250,
            local_epochs: 20,
            learning_rate: 0.01,
            l2_penalty: TrainConfig::default().l2_penalty,
            batch_size: 20_000,
            site_batch_size: BTreeMap::from([("Stockholm".to_string(), 100_000)]),
            weighting: Weighting::Unit,
            threshold: 0.5,
            train_frac: 0.8,
            seed: 42,
            data: DataSource::default(),
            central: CentralConfig::default(),
            network: NetworkConfig::default(),
            parallel: true,
            out_dir: PathBuf::from("out"),
        }
    }
}

/// Where site data comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Generate(GeneratorSpec),
    /// Site CSV files, in client-index order.
    Csv(Vec<CsvSite>),
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Generate(GeneratorSpec { scale_factor: DESK_SCALE, ..Default::default() })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSite {
    pub name: String,
    pub path: PathBuf,
}

/// The pooled cross-validation baseline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CentralConfig {
    pub folds: usize,
    /// Training epochs per fold; defaults to `rounds * local_epochs`, the
    /// number of passes a federated client makes over its data.
    pub epochs: Option<usize>,
    /// Defaults to the top-level `batch_size`.
    pub batch_size: Option<usize>,
}

impl Default for CentralConfig {
    fn default() -> Self {
        CentralConfig { folds: 10, epochs: None, batch_size: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub listen: String,
    pub connect: String,
    pub round_timeout_secs: f64,
    /// How long the server waits for every site to join.
    pub join_timeout_secs: f64,
    /// How long a client keeps retrying a refused connection.
    pub connect_retry_secs: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            listen: "127.0.0.1:7878".into(),
            connect: "127.0.0.1:7878".into(),
            round_timeout_secs: 600.0,
            join_timeout_secs: 600.0,
            connect_retry_secs: 60.0,
        }
    }
}

/// A config problem, with the file line when one can be pinned down.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub source: String,
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "{}:{line}: {}", self.source, self.message),
            None => write!(f, "{}: {}", self.source, self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

fn strip_position(e: &serde_json::Error) -> String {
    let s = e.to_string();
    match s.rfind(" at line ") {
        Some(i) => s[..i].to_string(),
        None => s,
    }
}

/// First line mentioning `"key"`, 1-based.
fn line_of(text: &str, key: &str) -> Option<usize> {
    let needle = format!("\"{key}\"");
    text.lines().position(|l| l.contains(&needle)).map(|i| i + 1)
}

/// Applies `a.b.c=value` to a JSON tree. The value is read as JSON when it
/// parses, otherwise taken as a string.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<(), String> {
    let (path, raw) = assignment.split_once('=').ok_or_else(|| format!("`{assignment}` is not KEY=VALUE"))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(format!("bad key path `{path}`"));
    }
    let mut node = root;
    for k in &keys[..keys.len() - 1] {
        let obj = node.as_object_mut().ok_or_else(|| format!("`{path}`: `{k}` is inside a non-object"))?;
        node = obj.entry(k.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    let obj = node.as_object_mut().ok_or_else(|| format!("`{path}` does not name an object field"))?;
    obj.insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}

/// Keys under `privacy` that the selected mode does not use. Plain mode has
/// no settings at all, so serde alone would accept anything next to it.
fn stray_privacy_keys(text: &str, cfg: &ExperimentConfig) -> Result<(), String> {
    let raw: Value = serde_json::from_str(text).map_err(|e| e.to_string())?;
    let Some(given) = raw.get("privacy").and_then(Value::as_object) else { return Ok(()) };
    let used = serde_json::to_value(&cfg.privacy).expect("privacy serializes");
    let stray: Vec<&str> =
        given.keys().filter(|k| used.get(k.as_str()).is_none()).map(String::as_str).collect();
    if stray.is_empty() {
        Ok(())
    } else {
        Err(format!("privacy: {} not used in `{}` mode", stray.join(", "), used["mode"].as_str().unwrap_or("?")))
    }
}

impl ExperimentConfig {
    /// Parses config text (`source` names it in messages), then applies the
    /// overrides on top of the fully defaulted config.
    pub fn parse(text: &str, source: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        let err = |line, message| ConfigError { source: source.to_string(), line, message };
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| err(Some(e.line()), strip_position(&e)))?;
        stray_privacy_keys(text, &cfg).map_err(|m| err(line_of(text, "privacy"), m))?;
        let cfg = if overrides.is_empty() {
            cfg
        } else {
            let mut tree = serde_json::to_value(&cfg).expect("config serializes");
            for o in overrides {
                apply_override(&mut tree, o).map_err(|m| ConfigError { source: "--set".into(), line: None, message: m })?;
            }
            serde_json::from_value(tree).map_err(|e| ConfigError {
                source: "--set".into(),
                line: None,
                message: strip_position(&e),
            })?
        };
        cfg.validate().map_err(|(key, message)| {
            let line = if overrides.iter().any(|o| o.starts_with(key)) { None } else { line_of(text, key) };
            err(line, format!("{key}: {message}"))
        })?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, ConfigError> {
        match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| ConfigError {
                    source: p.display().to_string(),
                    line: None,
                    message: e.to_string(),
                })?;
                Self::parse(&text, &p.display().to_string(), overrides)
            }
            None => Self::parse("{}", "defaults", overrides),
        }
    }

    /// Semantic checks; the error names the offending key.
    pub fn validate(&self) -> Result<(), (&'static str, String)> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.learning_rate) {
            return Err(("learning_rate", format!("must be positive, got {}", self.learning_rate)));
        }
        if !(self.l2_penalty >= 0.0 && self.l2_penalty.is_finite()) {
            return Err(("l2_penalty", format!("must be nonnegative, got {}", self.l2_penalty)));
        }
        if self.batch_size == 0 {
            return Err(("batch_size", "must be positive".into()));
        }
        if let Some((site, _)) = self.site_batch_size.iter().find(|(_, &b)| b == 0) {
            return Err(("site_batch_size", format!("batch size for `{site}` must be positive")));
        }
        if !self.threshold.is_finite() {
            return Err(("threshold", "must be finite".into()));
        }
        if !(self.train_frac > 0.0 && self.train_frac < 1.0) {
            return Err(("train_frac", format!("must be in (0, 1), got {}", self.train_frac)));
        }
        match &self.privacy {
            PrivacySpec::Plain => {}
            PrivacySpec::Dp(svt) => svt.validate().map_err(|e| ("privacy", e.to_string()))?,
            PrivacySpec::He(he) => {
                he.params.validate().map_err(|e| ("privacy", e.to_string()))?;
                if he.params.top_level() == 0 {
                    return Err(("privacy", "the HE modulus chain needs at least three primes".into()));
                }
            }
        }
        match &self.data {
            DataSource::Generate(g) => g.validate().map_err(|e| ("data", e.to_string()))?,
            DataSource::Csv(sites) => {
                if sites.is_empty() {
                    return Err(("data", "no CSV sites listed".into()));
                }
                for (i, s) in sites.iter().enumerate() {
                    if sites[..i].iter().any(|o| o.name == s.name) {
                        return Err(("data", format!("duplicate site `{}`", s.name)));
                    }
                    if !s.path.is_file() {
                        return Err(("data", format!("site `{}`: {} does not exist", s.name, s.path.display())));
                    }
                }
            }
        }
        if self.central.folds < 2 {
            return Err(("folds", format!("must be at least 2, got {}", self.central.folds)));
        }
        if self.central.batch_size == Some(0) {
            return Err(("central", "batch_size must be positive".into()));
        }
        let n = &self.network;
        for (key, v) in [
            ("round_timeout_secs", n.round_timeout_secs),
            ("join_timeout_secs", n.join_timeout_secs),
            ("connect_retry_secs", n.connect_retry_secs),
        ] {
            if !positive(v) {
                return Err((key, format!("must be positive, got {v}")));
            }
        }
        Ok(())
    }

    pub fn exec(&self) -> Exec {
        if self.parallel {
            Exec::Parallel
        } else {
            Exec::Sequential
        }
    }

    pub fn site_names(&self) -> Vec<String> {
        match &self.data {
            DataSource::Generate(g) => g.sites.iter().map(|s| s.name.clone()).collect(),
            DataSource::Csv(sites) => sites.iter().map(|s| s.name.clone()).collect(),
        }
    }

    pub fn run_spec(&self) -> RunSpec {
        RunSpec {
            learner: self.learner,
            rounds: self.rounds,
            train: TrainConfig {
                learning_rate: self.learning_rate,
                batch_size: self.batch_size,
                local_epochs: self.local_epochs,
                l2_penalty: self.l2_penalty,
                seed: 0,
                exec: self.exec(),
            },
            site_batch_size: self.site_batch_size.clone(),
            privacy: self.privacy.clone(),
            weighting: self.weighting,
            threshold: self.threshold,
            seed: self.seed,
        }
    }

    pub fn round_timeout(&self) -> Duration {
        Duration::from_secs_f64(self.network.round_timeout_secs)
    }

    /// The config as recorded in reports: HE key seed removed.
    pub fn snapshot(&self) -> Value {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(p) = v.get_mut("privacy").and_then(|p| p.as_object_mut()) {
            p.remove("key_seed");
        }
        v
    }
}
