//! Run configuration and its on-disk format.
//!
//! Configs are TOML documents: top-level scalars followed by the sections
//! `[task]`, `[model]`, `[surrogate]` and `[optim]`. Every key is optional
//! and falls back to [`RunConfig::default`]; keys that the schema does not
//! know are rejected by name. See `docs/config.md` for the full grammar.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    #[default]
    Multitone,
    Smnist,
    Psmnist,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Sequential,
    #[default]
    Parallel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SpikeFnKind {
    #[default]
    Heaviside,
    /// Heaviside replaced by the antiderivative of the surrogate; used for
    /// finite-difference gradient checks.
    Smooth,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Schedule {
    #[default]
    Constant,
    Cosine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskConfig {
    pub kind: TaskKind,
    /// Sequence length L.
    pub length: usize,
    /// Class count K.
    pub classes: usize,
    pub tones_per_class: usize,
    pub amplitude: f64,
    pub noise: f64,
    pub train_size: usize,
    pub test_size: usize,
    /// Time-axis permutation seed for psmnist; 0 selects the identity.
    pub perm_seed: u64,
    /// Dataset root; empty means `$DRF_DATA_DIR`, then `./data/mnist`.
    pub data_dir: String,
    /// Base URL for `fetch`; empty means `$DRF_MNIST_MIRROR`, then the default mirror.
    pub mirror_url: String,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            kind: TaskKind::Multitone,
            length: 512,
            classes: 4,
            tones_per_class: 3,
            amplitude: 1.0,
            noise: 3.5,
            train_size: 2000,
            test_size: 500,
            perm_seed: 1,
            data_dir: String::new(),
            mirror_url: String::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Dendritic branches per neuron.
    pub n: usize,
    /// Adaptive-threshold window length; 0 gives a static threshold.
    pub n_a: usize,
    /// Hidden D-RF layer widths, input side first.
    pub widths: Vec<usize>,
    /// Seconds per step.
    pub delta: f64,
    pub v_pre: f64,
    pub alpha_init: f64,
    pub readout_leak: f64,
    /// Gain applied to the default dense-weight initialization.
    pub weight_gain: f64,
    pub spike_fn: SpikeFnKind,
    /// Straight-through gradient into the adaptive kernel.
    pub train_alpha: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n: 4,
            n_a: 3,
            widths: vec![16, 16],
            delta: 0.01,
            v_pre: 1.0,
            alpha_init: 0.5,
            readout_leak: 0.9,
            weight_gain: 2.0,
            spike_fn: SpikeFnKind::Heaviside,
            train_alpha: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurrogateConfig {
    pub sigma: f64,
    pub h: f64,
    pub s: f64,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        Self {
            sigma: 0.5,
            h: 0.15,
            s: 6.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub grad_clip: f64,
    pub schedule: Schedule,
    pub batch_size: usize,
    pub epochs: usize,
    pub mode: Mode,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            grad_clip: 1.0,
            schedule: Schedule::Constant,
            batch_size: 32,
            epochs: 10,
            mode: Mode::Parallel,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub precision: Precision,
    /// Worker threads; 0 uses every available core.
    pub threads: usize,
    pub task: TaskConfig,
    pub model: ModelConfig,
    pub surrogate: SurrogateConfig,
    pub optim: OptimConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            precision: Precision::F64,
            threads: 0,
            task: TaskConfig::default(),
            model: ModelConfig::default(),
            surrogate: SurrogateConfig::default(),
            optim: OptimConfig::default(),
        }
    }
}

fn invalid(field: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::InvalidValue {
        field: field.to_string(),
        reason: reason.into(),
    }
}

fn line_of(text: &str, err: &toml::de::Error) -> usize {
    err.span()
        .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1)
        .unwrap_or(0)
}

fn check_known_keys(known: &toml::Table, given: &toml::Table, prefix: &str) -> Result<(), ConfigError> {
    for (key, value) in given {
        let path = if prefix.is_empty() {
            key.clone()
        } else {
            format!("{prefix}.{key}")
        };
        match (known.get(key), value) {
            (None, _) => return Err(ConfigError::UnknownKey(path)),
            (Some(toml::Value::Table(k)), toml::Value::Table(g)) => check_known_keys(k, g, &path)?,
            _ => {}
        }
    }
    Ok(())
}

fn schema() -> toml::Table {
    toml::Table::try_from(RunConfig::default()).expect("default config serializes")
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse {
            line: line_of(text, &e),
            message: e.message().to_string(),
        })?;
        check_known_keys(&schema(), &table, "")?;
        let config: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
            line: line_of(text, &e),
            message: e.message().to_string(),
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        fs::write(path, self.to_toml_string())
    }

    /// Applies dotted-path `key=value` overrides, e.g. `model.n=8`.
    ///
    /// Values are parsed as TOML (`8`, `0.5`, `[8, 8]`, `true`); anything that
    /// does not parse is taken as a bare string (`precision=f32`).
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self, ConfigError> {
        let known = schema();
        let mut table = toml::Table::try_from(self).expect("config serializes");
        for raw in overrides {
            let raw = raw.as_ref();
            let (key, value) = raw
                .split_once('=')
                .ok_or_else(|| invalid(raw, "override must have the form key=value"))?;
            let key = key.trim();
            let value = value.trim();
            let parsed = format!("v = {value}")
                .parse::<toml::Table>()
                .ok()
                .and_then(|mut t| t.remove("v"))
                .unwrap_or_else(|| toml::Value::String(value.to_string()));

            let parts: Vec<&str> = key.split('.').collect();
            let (last, parents) = parts.split_last().expect("split yields at least one part");
            let mut known_node = &known;
            let mut node = &mut table;
            for part in parents {
                known_node = match known_node.get(*part) {
                    Some(toml::Value::Table(t)) => t,
                    _ => return Err(ConfigError::UnknownKey(key.to_string())),
                };
                node = match node.get_mut(*part) {
                    Some(toml::Value::Table(t)) => t,
                    _ => return Err(ConfigError::UnknownKey(key.to_string())),
                };
            }
            match known_node.get(*last) {
                Some(toml::Value::Table(_)) | None => return Err(ConfigError::UnknownKey(key.to_string())),
                Some(_) => {
                    node.insert(last.to_string(), parsed);
                }
            }
        }
        let text = toml::to_string(&table).expect("table serializes");
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.seed > i64::MAX as u64 {
            return Err(invalid("seed", "must fit in a signed 64-bit integer"));
        }
        let m = &self.model;
        if m.n == 0 {
            return Err(invalid("n", "must be ≥ 1"));
        }
        if m.widths.is_empty() {
            return Err(invalid("widths", "need at least one hidden layer"));
        }
        if m.widths.contains(&0) {
            return Err(invalid("widths", "every width must be ≥ 1"));
        }
        if !(m.delta.is_finite() && m.delta > 0.0) {
            return Err(invalid("delta", "must be > 0"));
        }
        if !(m.v_pre.is_finite() && m.v_pre > 0.0) {
            return Err(invalid("v_pre", "must be > 0"));
        }
        if !(m.alpha_init > 0.0 && m.alpha_init < 1.0) {
            return Err(invalid("alpha_init", "must lie in (0, 1)"));
        }
        if !(m.readout_leak > 0.0 && m.readout_leak < 1.0) {
            return Err(invalid("readout_leak", "must lie in (0, 1)"));
        }
        if !(m.weight_gain.is_finite() && m.weight_gain > 0.0) {
            return Err(invalid("weight_gain", "must be > 0"));
        }
        let s = &self.surrogate;
        if !(s.sigma.is_finite() && s.sigma > 0.0) {
            return Err(invalid("sigma", "must be > 0"));
        }
        if !(0.0..1.0).contains(&s.h) {
            return Err(invalid("h", "must lie in [0, 1)"));
        }
        if !(s.s.is_finite() && s.s > 1.0) {
            return Err(invalid("s", "must be > 1"));
        }
        let o = &self.optim;
        if !(o.lr.is_finite() && o.lr >= 0.0) {
            return Err(invalid("lr", "must be ≥ 0"));
        }
        if !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) {
            return Err(invalid("beta1", "Adam betas must lie in [0, 1)"));
        }
        if !(o.eps.is_finite() && o.eps > 0.0) {
            return Err(invalid("eps", "must be > 0"));
        }
        if !(o.grad_clip.is_finite() && o.grad_clip >= 0.0) {
            return Err(invalid("grad_clip", "must be ≥ 0"));
        }
        if o.batch_size == 0 {
            return Err(invalid("batch_size", "must be ≥ 1"));
        }
        let t = &self.task;
        if t.length < 16 {
            return Err(invalid("length", "must be ≥ 16"));
        }
        if t.classes < 2 {
            return Err(invalid("classes", "must be ≥ 2"));
        }
        if t.tones_per_class == 0 {
            return Err(invalid("tones_per_class", "must be ≥ 1"));
        }
        if !(t.amplitude.is_finite() && t.amplitude > 0.0) {
            return Err(invalid("amplitude", "must be > 0"));
        }
        if !(t.noise.is_finite() && t.noise >= 0.0) {
            return Err(invalid("noise", "must be ≥ 0"));
        }
        if t.train_size == 0 || t.test_size == 0 {
            return Err(invalid("train_size", "split sizes must be ≥ 1"));
        }
        if t.perm_seed > i64::MAX as u64 {
            return Err(invalid("perm_seed", "must fit in a signed 64-bit integer"));
        }
        if matches!(t.kind, TaskKind::Smnist | TaskKind::Psmnist) {
            if t.length != 784 {
                return Err(invalid("length", "MNIST tasks use L = 784"));
            }
            if t.classes != 10 {
                return Err(invalid("classes", "MNIST tasks have 10 classes"));
            }
        }
        Ok(())
    }
}

pub fn load_config(path: impl AsRef<Path>) -> Result<RunConfig, ConfigError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => ConfigError::MissingFile(path.to_path_buf()),
        _ => invalid(&path.display().to_string(), e.to_string()),
    })?;
    RunConfig::from_toml_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn minimal_config_uses_defaults() {
        let c = RunConfig::from_toml_str("seed = 0\n[model]\nn = 4\n").unwrap();
        assert_eq!(c.model.n, 4);
        assert_eq!(c.model.n_a, ModelConfig::default().n_a);
    }

    #[test]
    fn zero_branches_rejected() {
        let err = RunConfig::from_toml_str("[model]\nn = 0\n").unwrap_err();
        match err {
            ConfigError::InvalidValue { field, reason } => {
                assert_eq!(field, "n");
                assert_eq!(reason, "must be ≥ 1");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_key_is_named() {
        let err = RunConfig::from_toml_str("[model]\nbranches = 4\n").unwrap_err();
        assert!(matches!(err, ConfigError::UnknownKey(ref k) if k == "model.branches"), "{err:?}");
        let err = RunConfig::from_toml_str("colour = 1\n").unwrap_err();
        assert!(matches!(err, ConfigError::UnknownKey(ref k) if k == "colour"));
    }

    #[test]
    fn parse_error_reports_line() {
        let err = RunConfig::from_toml_str("seed = 1\n[model]\nn = = 3\n").unwrap_err();
        assert!(matches!(err, ConfigError::Parse { line: 3, .. }), "{err:?}");
    }

    #[test]
    fn type_error_reports_line() {
        let err = RunConfig::from_toml_str("seed = 1\n\n[model]\nn = \"four\"\n").unwrap_err();
        assert!(matches!(err, ConfigError::Parse { line: 4, .. }), "{err:?}");
    }

    #[test]
    fn missing_file() {
        let err = load_config("/nonexistent/drf.toml").unwrap_err();
        assert!(matches!(err, ConfigError::MissingFile(_)));
    }

    #[test]
    fn overrides_apply_and_validate() {
        let base = RunConfig::default();
        let c = base
            .with_overrides(&["model.n=8", "precision=f32", "model.widths=[8, 4]", "task.data_dir=/tmp/x y"])
            .unwrap();
        assert_eq!(c.model.n, 8);
        assert_eq!(c.precision, Precision::F32);
        assert_eq!(c.model.widths, vec![8, 4]);
        assert_eq!(c.task.data_dir, "/tmp/x y");
        assert!(matches!(
            base.with_overrides(&["model.nope=1"]),
            Err(ConfigError::UnknownKey(_))
        ));
        assert!(matches!(
            base.with_overrides(&["model=1"]),
            Err(ConfigError::UnknownKey(_))
        ));
        assert!(matches!(
            base.with_overrides(&["model.n=0"]),
            Err(ConfigError::InvalidValue { .. })
        ));
    }

    fn arb_config() -> impl Strategy<Value = RunConfig> {
        (
            0u64..=i64::MAX as u64,
            any::<bool>(),
            1usize..16,
            0usize..8,
            proptest::collection::vec(1usize..64, 1..4),
            1e-4f64..1.0,
            1e-4f64..0.9999,
            0.0f64..2.0,
            1e-6f64..1.0,
            16usize..4096,
        )
            .prop_map(|(seed, f32p, n, n_a, widths, delta, alpha, noise, lr, length)| {
                let mut c = RunConfig::default();
                c.seed = seed;
                c.precision = if f32p { Precision::F32 } else { Precision::F64 };
                c.model.n = n;
                c.model.n_a = n_a;
                c.model.widths = widths;
                c.model.delta = delta;
                c.model.alpha_init = alpha;
                c.task.noise = noise;
                c.task.length = length;
                c.optim.lr = lr;
                c
            })
    }

    proptest! {
        #[test]
        fn save_load_round_trip(c in arb_config()) {
            let text = c.to_toml_string();
            let back = RunConfig::from_toml_str(&text).unwrap();
            prop_assert_eq!(&back, &c);
            prop_assert_eq!(back.to_toml_string(), text);
        }
    }
}
