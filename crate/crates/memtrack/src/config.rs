//! Experiment configuration: a flat `key = value` text format with
//! `[section]` headers.
//!
//! ```text
//! # comment
//! [scenario]
//! steps = 140
//! noise_levels = 0.4/0.6, 1.0/1.2
//!
//! [train]
//! epochs = 30
//! ```
//!
//! Blank lines and lines starting with `#` are ignored; keys are unique per
//! section; unknown sections or keys are errors. Command-line overrides are
//! applied as `section.key=value` assignments after the file is read.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use memtrack_core::filter::InitConfig;
use memtrack_core::memnet::{Masks, TrainConfig};
use memtrack_core::models::{ExtensionTransition, ExtensionUpdate, ModelConfig, ScenarioConfig};
use memtrack_core::simulator::NOISE_LEVELS;

use crate::error::ConfigError;

/// Where a value came from, for error messages.
#[derive(Clone, Debug, PartialEq)]
struct Entry {
    value: String,
    origin: String,
    line: usize,
}

/// Parsed but untyped configuration.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConfigText {
    sections: BTreeMap<String, BTreeMap<String, Entry>>,
}

impl ConfigText {
    pub fn parse(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let err = |line: usize, message: String| ConfigError { origin: origin.to_string(), line, message };
        let mut out = ConfigText::default();
        let mut section: Option<String> = None;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            let n = i + 1;
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest.strip_suffix(']').ok_or_else(|| err(n, "unterminated section header".into()))?;
                let name = name.trim();
                if !SECTIONS.iter().any(|(s, _)| *s == name) {
                    return Err(err(n, format!("unknown section [{name}]")));
                }
                out.sections.entry(name.to_string()).or_default();
                section = Some(name.to_string());
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| err(n, format!("expected key = value, got {line:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            let sec = section.as_deref().ok_or_else(|| err(n, format!("key {key:?} outside any section")))?;
            check_key(sec, key).map_err(|m| err(n, m))?;
            let entries = out.sections.get_mut(sec).expect("section registered");
            if entries.contains_key(key) {
                return Err(err(n, format!("duplicate key {sec}.{key}")));
            }
            entries.insert(key.to_string(), Entry { value: value.to_string(), origin: origin.to_string(), line: n });
        }
        Ok(out)
    }

    pub fn read(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
            origin: path.display().to_string(),
            line: 0,
            message: e.to_string(),
        })?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Applies a `section.key=value` override, replacing any file value.
    pub fn set(&mut self, assignment: &str, origin: &str) -> Result<(), ConfigError> {
        let err = |message: String| ConfigError { origin: origin.to_string(), line: 0, message };
        let (path, value) =
            assignment.split_once('=').ok_or_else(|| err(format!("expected section.key=value, got {assignment:?}")))?;
        let (sec, key) =
            path.trim().split_once('.').ok_or_else(|| err(format!("expected section.key, got {path:?}")))?;
        check_key(sec, key).map_err(err)?;
        self.sections.entry(sec.to_string()).or_default().insert(
            key.to_string(),
            Entry { value: value.trim().to_string(), origin: origin.to_string(), line: 0 },
        );
        Ok(())
    }

    fn get(&self, sec: &str, key: &str) -> Option<&Entry> {
        self.sections.get(sec).and_then(|s| s.get(key))
    }

    fn value<T: FromStr>(&self, sec: &str, key: &str) -> Result<Option<T>, ConfigError> {
        self.get(sec, key).map(|e| parse_value(e, sec, key)).transpose()
    }

    fn list<T: FromStr>(&self, sec: &str, key: &str) -> Result<Option<Vec<T>>, ConfigError> {
        self.get(sec, key)
            .map(|e| {
                e.value
                    .split(',')
                    .map(|item| {
                        parse_value(&Entry { value: item.trim().to_string(), ..e.clone() }, sec, key)
                    })
                    .collect()
            })
            .transpose()
    }

    fn entry_error(&self, sec: &str, key: &str, message: String) -> ConfigError {
        match self.get(sec, key) {
            Some(e) => ConfigError { origin: e.origin.clone(), line: e.line, message },
            None => ConfigError { origin: format!("[{sec}]"), line: 0, message },
        }
    }
}

fn parse_value<T: FromStr>(e: &Entry, sec: &str, key: &str) -> Result<T, ConfigError> {
    e.value.parse().map_err(|_| ConfigError {
        origin: e.origin.clone(),
        line: e.line,
        message: format!("cannot parse {sec}.{key} = {:?}", e.value),
    })
}

/// Accepted keys per section.
const SECTIONS: [(&str, &[&str]); 6] = [
    (
        "scenario",
        &[
            "steps", "dt", "sigma_w", "sigma_v", "noise_levels", "major_axis", "minor_axis", "speed",
            "scatter_rate", "cases", "train_cases", "turn_rate_min_deg", "turn_rate_max_deg", "segment_min",
            "segment_max", "area",
        ],
    ),
    ("model", &["sigma_w", "distortion", "delta", "transition", "update"]),
    ("init", &["pos_var", "vel_var", "dof", "min_extent"]),
    (
        "train",
        &["learning_rate", "momentum", "epochs", "batch_size", "gamma", "folds", "memory_dim", "clip", "mask"],
    ),
    ("gradcheck", &["steps", "memory_dim", "step", "gamma", "perturbation"]),
    ("datascale", &["ladder", "test_cases"]),
];

fn check_key(sec: &str, key: &str) -> Result<(), String> {
    match SECTIONS.iter().find(|(s, _)| *s == sec) {
        None => Err(format!("unknown section [{sec}]")),
        Some((_, keys)) if !keys.contains(&key) => Err(format!("unknown key {sec}.{key}")),
        Some(_) => Ok(()),
    }
}

/// A `σ_w/σ_v` pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseLevel(pub f64, pub f64);

impl FromStr for NoiseLevel {
    type Err = ();
    fn from_str(s: &str) -> Result<Self, ()> {
        let (w, v) = s.split_once('/').ok_or(())?;
        Ok(NoiseLevel(w.trim().parse().map_err(|_| ())?, v.trim().parse().map_err(|_| ())?))
    }
}

/// Finite-difference gradient check settings.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckConfig {
    pub steps: usize,
    pub memory_dim: usize,
    /// Central-difference step.
    pub step: f64,
    pub gamma: f64,
    /// Standard deviation of the noise added to a fresh network, so the
    /// compensation heads are active during the check.
    pub perturbation: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig { steps: 5, memory_dim: 16, step: 1e-5, gamma: 1e-4, perturbation: 0.1 }
    }
}

/// Training-set-size sweep settings.
#[derive(Clone, Debug, PartialEq)]
pub struct DatascaleConfig {
    pub ladder: Vec<usize>,
    pub test_cases: usize,
}

impl Default for DatascaleConfig {
    fn default() -> Self {
        DatascaleConfig { ladder: vec![100, 200, 1000], test_cases: 120 }
    }
}

/// Fully typed experiment configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub scenario: ScenarioConfig,
    /// Noise levels generated by `simulate`.
    pub noise_levels: Vec<NoiseLevel>,
    /// Model settings; `sigma_w: None` follows the dataset's noise level.
    pub model: ModelConfig,
    pub model_sigma_w: Option<f64>,
    pub init: InitConfig,
    pub train: TrainConfig,
    pub masks: Masks,
    pub gradcheck: GradCheckConfig,
    pub datascale: DatascaleConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            scenario: ScenarioConfig::default(),
            noise_levels: NOISE_LEVELS.iter().map(|&(w, v)| NoiseLevel(w, v)).collect(),
            model: ModelConfig::default(),
            model_sigma_w: None,
            init: InitConfig::default(),
            train: TrainConfig::default(),
            masks: Masks::default(),
            gradcheck: GradCheckConfig::default(),
            datascale: DatascaleConfig::default(),
        }
    }
}

macro_rules! assign {
    ($text:expr, $sec:literal, $target:expr, [$($key:ident),* $(,)?]) => {
        $(if let Some(v) = $text.value($sec, stringify!($key))? {
            $target.$key = v;
        })*
    };
}

impl RunConfig {
    pub fn from_text(text: &ConfigText) -> Result<Self, ConfigError> {
        let mut c = RunConfig::default();
        let s = &mut c.scenario;
        assign!(text, "scenario", s, [
            steps, dt, major_axis, minor_axis, speed, scatter_rate, cases, train_cases, turn_rate_min_deg,
            turn_rate_max_deg, segment_min, segment_max, area,
        ]);
        if text.get("scenario", "cases").is_some() && text.get("scenario", "train_cases").is_none() {
            // keep the 80/20 split when only the case count is given
            c.scenario.train_cases = c.scenario.cases * 4 / 5;
        }
        if let Some(levels) = text.list::<NoiseLevel>("scenario", "noise_levels")? {
            c.noise_levels = levels;
        }
        // an explicit σ pair selects a single level
        let w: Option<f64> = text.value("scenario", "sigma_w")?;
        let v: Option<f64> = text.value("scenario", "sigma_v")?;
        if w.is_some() || v.is_some() {
            if text.get("scenario", "noise_levels").is_some() {
                return Err(text.entry_error(
                    "scenario",
                    "sigma_w",
                    "give either sigma_w/sigma_v or noise_levels, not both".into(),
                ));
            }
            let d = ScenarioConfig::default();
            c.noise_levels = vec![NoiseLevel(w.unwrap_or(d.sigma_w), v.unwrap_or(d.sigma_v))];
        }
        if c.noise_levels.is_empty() {
            return Err(text.entry_error("scenario", "noise_levels", "at least one noise level is required".into()));
        }
        c.scenario.sigma_w = c.noise_levels[0].0;
        c.scenario.sigma_v = c.noise_levels[0].1;

        assign!(text, "model", c.model, [distortion, delta]);
        c.model_sigma_w = text.value("model", "sigma_w")?;
        if let Some(t) = text.value::<String>("model", "transition")? {
            c.model.transition_rule = match t.as_str() {
                "scaled" => ExtensionTransition::Scaled,
                "mean_preserving" => ExtensionTransition::MeanPreserving,
                _ => return Err(text.entry_error("model", "transition", format!("expected scaled|mean_preserving, got {t:?}"))),
            };
        }
        if let Some(u) = text.value::<String>("model", "update")? {
            c.model.update_rule = match u.as_str() {
                "direct" => ExtensionUpdate::Direct,
                "whitened" => ExtensionUpdate::Whitened,
                _ => return Err(text.entry_error("model", "update", format!("expected direct|whitened, got {u:?}"))),
            };
        }
        assign!(text, "init", c.init, [pos_var, vel_var, dof, min_extent]);
        assign!(text, "train", c.train, [learning_rate, momentum, epochs, batch_size, gamma, folds, memory_dim, clip]);
        if let Some(m) = text.value::<String>("train", "mask")? {
            c.masks = parse_masks(&m).map_err(|msg| text.entry_error("train", "mask", msg))?;
        }
        assign!(text, "gradcheck", c.gradcheck, [steps, memory_dim, step, gamma, perturbation]);
        if let Some(l) = text.list("datascale", "ladder")? {
            c.datascale.ladder = l;
        }
        assign!(text, "datascale", c.datascale, [test_cases]);
        c.validate(text)?;
        Ok(c)
    }

    fn validate(&self, text: &ConfigText) -> Result<(), ConfigError> {
        let core = |sec: &str, key: &str, e: memtrack_core::Error| text.entry_error(sec, key, e.to_string());
        for l in &self.noise_levels {
            ScenarioConfig { sigma_w: l.0, sigma_v: l.1, ..self.scenario.clone() }
                .validate()
                .map_err(|e| core("scenario", "cases", e))?;
        }
        self.train.validate().map_err(|e| core("train", "epochs", e))?;
        self.model_for(self.scenario.dt, self.scenario.sigma_w).build().map_err(|e| core("model", "delta", e))?;
        let valid = self.init.dof > 8.0 && self.init.pos_var > 0.0 && self.init.vel_var > 0.0;
        if !valid {
            return Err(text.entry_error("init", "dof", "init needs dof > 8 and positive variances".into()));
        }
        if self.gradcheck.steps < 2 || self.gradcheck.memory_dim == 0 || self.gradcheck.step.is_nan() || self.gradcheck.step <= 0.0 {
            return Err(text.entry_error("gradcheck", "steps", "gradcheck needs steps >= 2, memory_dim > 0, step > 0".into()));
        }
        if self.datascale.ladder.is_empty() || self.datascale.ladder.contains(&0) || self.datascale.test_cases == 0 {
            return Err(text.entry_error("datascale", "ladder", "ladder sizes and test_cases must be positive".into()));
        }
        Ok(())
    }

    /// Model settings for a dataset sampled with step `dt` and noise `σ_w`.
    pub fn model_for(&self, dt: f64, sigma_w: f64) -> ModelConfig {
        ModelConfig { dt, sigma_w: self.model_sigma_w.unwrap_or(sigma_w), ..self.model }
    }

    /// Scenario for one noise level.
    pub fn scenario_for(&self, level: NoiseLevel, seed: u64) -> ScenarioConfig {
        ScenarioConfig { sigma_w: level.0, sigma_v: level.1, seed, ..self.scenario.clone() }
    }
}

/// Parses a comma-separated subset of `mub`, `jeb`, `jub` (or `none`).
pub fn parse_masks(s: &str) -> Result<Masks, String> {
    let mut m = Masks::default();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part {
            "mub" => m.mub = true,
            "jeb" => m.jeb = true,
            "jub" => m.jub = true,
            "none" => {}
            other => return Err(format!("unknown block {other:?}; expected mub, jeb, jub or none")),
        }
    }
    Ok(m)
}
