//! Run configuration: a flat-key JSON file overridable by repeated
//! `--set key=value` flags (flag wins). Validation happens before any
//! computation and always names the offending field.

use gll_core::{
    FlowForm, FlowSpec, HarnessError, InitialKind, InitialSpec, PeriodicGrid, PotentialMatrix,
    Scheme, SphereField,
};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

/// A configuration problem, reported with the field it concerns (exit 2).
#[derive(Debug, Clone)]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl ConfigError {
    fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config error: {}: {}", self.field, self.message)
    }
}

impl std::error::Error for ConfigError {}

/// Flat run configuration; every key can come from the JSON file or a
/// `--set` override.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub form: String,
    pub epsilon: f64,
    pub a_diag: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a_matrix: Option<Vec<Vec<f64>>>,
    pub t_end: f64,
    pub cfl: f64,
    pub scheme: String,
    pub sample_every: usize,
    pub n_points: usize,
    pub sphere_dim: usize,
    pub initial: String,
    pub amplitude: f64,
    pub max_mode: usize,
    pub decay: f64,
    pub seed: u64,
    pub out_dir: String,
    /// Perturbation size for the uniqueness study.
    pub delta: f64,
    /// Regularization strengths for the epsilon study (descending).
    pub epsilons: Vec<f64>,
    /// Grid sizes for the traveling-wave study (ascending).
    pub n_list: Vec<usize>,
    /// Target spacing of diagnostic samples inside studies.
    pub sample_dt: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            form: "intrinsic".into(),
            epsilon: 0.0,
            a_diag: vec![0.0, 0.0, 0.0],
            a_matrix: None,
            t_end: 1.0,
            cfl: gll_core::DEFAULT_CFL,
            scheme: "spectral".into(),
            sample_every: 16,
            n_points: 128,
            sphere_dim: 2,
            initial: "great_circle".into(),
            amplitude: 0.1,
            max_mode: 4,
            decay: 3.0,
            seed: 42,
            out_dir: "out".into(),
            delta: 1e-6,
            epsilons: vec![1e-2, 1e-3, 1e-4],
            n_list: vec![32, 64, 128],
            sample_dt: 2.5e-4,
        }
    }
}

const KNOWN_KEYS: &[&str] = &[
    "form",
    "epsilon",
    "a_diag",
    "a_matrix",
    "t_end",
    "cfl",
    "scheme",
    "sample_every",
    "n_points",
    "sphere_dim",
    "initial",
    "amplitude",
    "max_mode",
    "decay",
    "seed",
    "out_dir",
    "delta",
    "epsilons",
    "n_list",
    "sample_dt",
];

impl RunConfig {
    /// Reads the optional config file, then applies `--set key=value`
    /// overrides in order.
    pub fn load(path: Option<&Path>, sets: &[String]) -> Result<Self, ConfigError> {
        let mut value = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| {
                    ConfigError::new("config", format!("cannot read {}: {e}", p.display()))
                })?;
                serde_json::from_str::<serde_json::Value>(&text).map_err(|e| {
                    ConfigError::new("config", format!("{} is not valid JSON: {e}", p.display()))
                })?
            }
            None => serde_json::json!({}),
        };
        let obj = value
            .as_object_mut()
            .ok_or_else(|| ConfigError::new("config", "top level must be a JSON object"))?;
        for set in sets {
            let (key, raw) = set.split_once('=').ok_or_else(|| {
                ConfigError::new("--set", format!("expected key=value, got '{set}'"))
            })?;
            // values parse as JSON when possible, else as a bare string
            let parsed = serde_json::from_str::<serde_json::Value>(raw)
                .unwrap_or_else(|_| serde_json::Value::String(raw.to_owned()));
            obj.insert(key.to_owned(), parsed);
        }
        for key in obj.keys() {
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(ConfigError::new(key.clone(), "unknown configuration key"));
            }
        }
        let mut config = RunConfig::default();
        for (key, val) in obj.iter() {
            config.apply(key, val)?;
        }
        Ok(config)
    }

    fn apply(&mut self, key: &str, val: &serde_json::Value) -> Result<(), ConfigError> {
        fn take<T: serde::de::DeserializeOwned>(
            key: &str,
            val: &serde_json::Value,
            expected: &str,
        ) -> Result<T, ConfigError> {
            serde_json::from_value(val.clone())
                .map_err(|_| ConfigError::new(key, format!("expected {expected}, got {val}")))
        }
        match key {
            "form" => self.form = take(key, val, "a string")?,
            "epsilon" => self.epsilon = take(key, val, "a number")?,
            "a_diag" => self.a_diag = take(key, val, "an array of numbers")?,
            "a_matrix" => self.a_matrix = Some(take(key, val, "an array of rows")?),
            "t_end" => self.t_end = take(key, val, "a number")?,
            "cfl" => self.cfl = take(key, val, "a number")?,
            "scheme" => self.scheme = take(key, val, "a string")?,
            "sample_every" => self.sample_every = take(key, val, "a positive integer")?,
            "n_points" => self.n_points = take(key, val, "a positive integer")?,
            "sphere_dim" => self.sphere_dim = take(key, val, "a positive integer")?,
            "initial" => self.initial = take(key, val, "a string")?,
            "amplitude" => self.amplitude = take(key, val, "a number")?,
            "max_mode" => self.max_mode = take(key, val, "a positive integer")?,
            "decay" => self.decay = take(key, val, "a number")?,
            "seed" => self.seed = take(key, val, "an unsigned integer")?,
            "out_dir" => self.out_dir = take(key, val, "a string")?,
            "delta" => self.delta = take(key, val, "a number")?,
            "epsilons" => self.epsilons = take(key, val, "an array of numbers")?,
            "n_list" => self.n_list = take(key, val, "an array of integers")?,
            "sample_dt" => self.sample_dt = take(key, val, "a number")?,
            other => return Err(ConfigError::new(other, "unknown configuration key")),
        }
        Ok(())
    }

    /// Full validation into typed solver inputs.
    pub fn validate(&self) -> Result<Validated, ConfigError> {
        let form = FlowForm::from_str(&self.form).map_err(|e| ConfigError::new("form", e))?;
        let scheme = Scheme::from_str(&self.scheme).map_err(|e| ConfigError::new("scheme", e))?;
        let initial_kind =
            InitialKind::from_str(&self.initial).map_err(|e| ConfigError::new("initial", e))?;
        if self.sphere_dim < 1 {
            return Err(ConfigError::new("sphere_dim", "must be >= 1"));
        }
        let dim = self.sphere_dim + 1;
        let grid = PeriodicGrid::new(self.n_points)
            .map_err(|e| ConfigError::new("n_points", e.to_string()))?;

        let potential = match &self.a_matrix {
            Some(rows) => {
                if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
                    return Err(ConfigError::new(
                        "a_matrix",
                        format!("must be a {dim}x{dim} matrix for sphere_dim {}", self.sphere_dim),
                    ));
                }
                PotentialMatrix::from_entries(ndarray_from_rows(rows))
                    .map_err(|e| ConfigError::new("a_matrix", e.to_string()))?
            }
            None => {
                if self.a_diag.iter().all(|x| *x == 0.0) {
                    // zero potential adapts to any dimension
                    PotentialMatrix::zeros(dim)
                } else if self.a_diag.len() == dim {
                    PotentialMatrix::diagonal(&self.a_diag)
                } else {
                    return Err(ConfigError::new(
                        "a_diag",
                        format!(
                            "needs {dim} entries for sphere_dim {} (got {})",
                            self.sphere_dim,
                            self.a_diag.len()
                        ),
                    ));
                }
            }
        };

        if form == FlowForm::Regularized {
            if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
                return Err(ConfigError::new(
                    "epsilon",
                    format!(
                        "must lie in the valid range (0, 1] for the regularized form (got {})",
                        self.epsilon
                    ),
                ));
            }
        } else if self.epsilon != 0.0 {
            return Err(ConfigError::new(
                "epsilon",
                format!("must be 0 for the {form} form (got {})", self.epsilon),
            ));
        }
        if form == FlowForm::ClassicalLl && self.sphere_dim != 2 {
            return Err(ConfigError::new(
                "sphere_dim",
                "the classical_ll form needs sphere_dim = 2",
            ));
        }
        if !(self.t_end > 0.0) {
            return Err(ConfigError::new("t_end", "must be positive"));
        }
        if !(self.cfl > 0.0) {
            return Err(ConfigError::new("cfl", "must be positive"));
        }
        if self.sample_every == 0 {
            return Err(ConfigError::new("sample_every", "must be >= 1"));
        }
        if !(self.amplitude >= 0.0) {
            return Err(ConfigError::new("amplitude", "must be >= 0"));
        }
        if self.max_mode == 0 {
            return Err(ConfigError::new("max_mode", "must be >= 1"));
        }
        if !(self.delta >= 0.0) {
            return Err(ConfigError::new("delta", "must be >= 0"));
        }
        if !(self.sample_dt > 0.0) {
            return Err(ConfigError::new("sample_dt", "must be positive"));
        }

        let mut flow = FlowSpec::new(form, potential);
        flow.epsilon = if form == FlowForm::Regularized {
            self.epsilon
        } else {
            0.0
        };
        flow.t_end = self.t_end;
        flow.cfl = self.cfl;
        flow.scheme = scheme;
        flow.sample_every = self.sample_every;

        let initial = InitialSpec {
            kind: initial_kind,
            sphere_dim: self.sphere_dim,
            amplitude: self.amplitude,
            max_mode: self.max_mode,
            decay: self.decay,
            seed: self.seed,
        };
        Ok(Validated {
            grid,
            flow,
            initial,
        })
    }

    /// Builds the initial map described by this configuration.
    pub fn build_initial(&self, v: &Validated) -> Result<SphereField, HarnessError> {
        gll_core::make_initial(v.grid, &v.initial)
    }
}

/// Typed, validated view of a [`RunConfig`].
#[derive(Debug)]
pub struct Validated {
    pub grid: PeriodicGrid,
    pub flow: FlowSpec,
    pub initial: InitialSpec,
}

fn ndarray_from_rows(rows: &[Vec<f64>]) -> ndarray::Array2<f64> {
    let dim = rows.len();
    let mut m = ndarray::Array2::zeros((dim, dim));
    for (i, row) in rows.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            m[[i, j]] = *v;
        }
    }
    m
}

use gll_core::ndarray;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let config = RunConfig::default();
        let v = config.validate().unwrap();
        assert_eq!(v.grid.n_points(), 128);
        assert_eq!(v.flow.form, FlowForm::Intrinsic);
    }

    #[test]
    fn set_overrides_apply_in_order() {
        let config = RunConfig::load(
            None,
            &[
                "n_points=64".into(),
                "seed=7".into(),
                "form=\"extrinsic\"".into(),
                "a_diag=[1,2,3]".into(),
                "form=intrinsic".into(),
            ],
        )
        .unwrap();
        assert_eq!(config.n_points, 64);
        assert_eq!(config.seed, 7);
        assert_eq!(config.form, "intrinsic");
        assert_eq!(config.a_diag, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = RunConfig::load(None, &["n_pionts=64".into()]).unwrap_err();
        assert_eq!(err.field, "n_pionts");
    }

    #[test]
    fn epsilon_range_error_names_field_and_range() {
        let config = RunConfig::load(
            None,
            &["form=regularized".into(), "epsilon=2.0".into()],
        )
        .unwrap();
        let err = config.validate().unwrap_err();
        assert_eq!(err.field, "epsilon");
        assert!(err.message.contains("(0, 1]"), "{}", err.message);
    }

    #[test]
    fn config_round_trips_through_json() {
        let config = RunConfig::load(
            None,
            &[
                "amplitude=0.12345678901234567".into(),
                "cfl=0.037".into(),
                "a_diag=[1.5,2.25,-0.125]".into(),
            ],
        )
        .unwrap();
        let text = serde_json::to_string_pretty(&config).unwrap();
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(config, back);
    }
}
