//! Experiment configuration: parsing, defaults and validation.
//!
//! Parsing rejects unknown keys and reports the JSON path of the offending
//! field. Semantic checks run before any computation.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use serde_json::Value;
use turnpike_core::{
    A2Variant, ComplementarySide, DistributionSpec, Ensemble, FeedbackSpec, FitWindow, GainEntry,
    Scheme, Side, SolverOptions, Which,
};

use crate::error::CliError;

pub const DEFAULT_HORIZON: f64 = 10.0;
pub const DEFAULT_STEPS: usize = 150;
pub const DEFAULT_SAMPLE_COUNT: usize = 200;
pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_TARGET: [f64; 2] = [4.0, 4.0];

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default)]
    ensemble: Option<Value>,
    #[serde(default)]
    problem: ProblemConfig,
    #[serde(default)]
    solver: SolverOptions,
    #[serde(default)]
    output: OutputConfig,
    #[serde(default)]
    checks: Vec<CheckConfig>,
    #[serde(default)]
    sweep: Option<SweepConfig>,
    #[serde(default)]
    fit: FitWindow,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EnsembleFileRef {
    file: PathBuf,
}

#[derive(Clone, Debug)]
pub enum EnsembleSource {
    Spec(DistributionSpec),
    File(PathBuf),
}

/// Per-sample vector data: initial states or terminal adjoint weights.
#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum VectorField {
    #[default]
    Zero,
    /// The same vector for every sample.
    Constant(Vec<f64>),
    /// One vector per sample.
    Samples(Vec<Vec<f64>>),
    /// A JSON file holding one vector per sample.
    File(PathBuf),
    /// The matching field of the stationary solution.
    Stationary,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    #[serde(rename = "T", default = "default_horizon")]
    pub horizon: f64,
    #[serde(default = "default_steps")]
    pub n_steps: usize,
    #[serde(default)]
    pub scheme: Scheme,
    #[serde(default)]
    pub x0: VectorField,
    #[serde(default)]
    pub z: Option<Vec<f64>>,
    #[serde(rename = "phi_T", default)]
    pub phi_terminal: VectorField,
}

impl Default for ProblemConfig {
    fn default() -> Self {
        Self {
            horizon: DEFAULT_HORIZON,
            n_steps: DEFAULT_STEPS,
            scheme: Scheme::default(),
            x0: VectorField::Zero,
            z: None,
            phi_terminal: VectorField::Zero,
        }
    }
}

fn default_horizon() -> f64 {
    DEFAULT_HORIZON
}

fn default_steps() -> usize {
    DEFAULT_STEPS
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default)]
    pub dir: Option<PathBuf>,
    #[serde(default = "yes")]
    pub plots: bool,
    #[serde(default)]
    pub gnuplot: bool,
    /// Samples whose states go into `solution.csv`.
    #[serde(default = "first_sample")]
    pub samples: Vec<usize>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: None,
            plots: true,
            gnuplot: false,
            samples: first_sample(),
        }
    }
}

fn yes() -> bool {
    true
}

fn first_sample() -> Vec<usize> {
    vec![0]
}

#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "kind", deny_unknown_fields)]
pub enum CheckConfig {
    A1 {
        gain: FeedbackSpec,
    },
    A2 {
        gain: FeedbackSpec,
        #[serde(default)]
        variant: A2Variant,
    },
    A0 {
        gain: FeedbackSpec,
    },
    #[serde(rename = "scan")]
    Scan {
        which: Which,
        entries: Vec<GainEntry>,
    },
    #[serde(rename = "complementary")]
    Complementary {
        gain: FeedbackSpec,
        #[serde(default = "side_c")]
        side: ComplementarySide,
        #[serde(default)]
        decay: Option<DecayConfig>,
    },
    #[serde(rename = "stationary-coercivity")]
    Coercivity {
        side: Side,
    },
}

fn side_c() -> ComplementarySide {
    ComplementarySide::C
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecayConfig {
    #[serde(rename = "T", default = "default_horizon")]
    pub horizon: f64,
    #[serde(default = "default_steps")]
    pub n_steps: usize,
    pub x0: VectorField,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub horizons: Vec<f64>,
    #[serde(default = "default_steps_per_unit")]
    pub steps_per_unit: f64,
}

fn default_steps_per_unit() -> f64 {
    DEFAULT_STEPS as f64 / DEFAULT_HORIZON
}

#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub ensemble: EnsembleSource,
    pub problem: ProblemConfig,
    pub solver: SolverOptions,
    pub output: OutputConfig,
    pub checks: Vec<CheckConfig>,
    pub sweep: Option<SweepConfig>,
    pub fit: FitWindow,
    /// Directory that relative paths in the config are resolved against.
    pub base_dir: PathBuf,
}

fn invalid(field: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Validation(format!("{field}: {msg}"))
}

fn parse_at<T: serde::de::DeserializeOwned>(value: Value, prefix: &str) -> Result<T, CliError> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let inner = e.path().to_string();
        let path = match (prefix.is_empty(), inner == ".") {
            (true, _) => inner,
            (false, true) => prefix.to_string(),
            (false, false) => format!("{prefix}.{inner}"),
        };
        invalid(&path, e.into_inner())
    })
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", path.display())))?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, base_dir)
    }

    pub fn parse(text: &str, base_dir: PathBuf) -> Result<Self, CliError> {
        let value: Value = serde_json::from_str(text)
            .map_err(|e| CliError::Validation(format!("config is not valid JSON: {e}")))?;
        let raw: RawConfig = parse_at(value, "")?;
        let ensemble = match raw.ensemble {
            None => EnsembleSource::Spec(DistributionSpec::poisson_oscillator(
                DEFAULT_SAMPLE_COUNT,
                DEFAULT_SEED,
            )),
            Some(v) if v.get("file").is_some() => {
                EnsembleSource::File(parse_at::<EnsembleFileRef>(v, "ensemble")?.file)
            }
            Some(v) => EnsembleSource::Spec(parse_at(v, "ensemble")?),
        };
        let cfg = Self {
            ensemble,
            problem: raw.problem,
            solver: raw.solver,
            output: raw.output,
            checks: raw.checks,
            sweep: raw.sweep,
            fit: raw.fit,
            base_dir,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), CliError> {
        let p = &self.problem;
        if !(p.horizon.is_finite() && p.horizon > 0.0) {
            return Err(invalid("problem.T", format!("must be a positive finite number, got {}", p.horizon)));
        }
        if p.n_steps < 2 {
            return Err(invalid("problem.n_steps", format!("must be at least 2, got {}", p.n_steps)));
        }
        let s = &self.solver;
        if !(s.tol_rel_grad.is_finite() && s.tol_rel_grad > 0.0) {
            return Err(invalid("solver.tol_rel_grad", "must be positive"));
        }
        if s.max_iters == 0 {
            return Err(invalid("solver.max_iters", "must be positive"));
        }
        if !(s.armijo_c > 0.0 && s.armijo_c < 1.0) {
            return Err(invalid("solver.armijo_c", "must lie in (0, 1)"));
        }
        if !(s.bb_min > 0.0 && s.bb_min < s.bb_max && s.bb_max.is_finite()) {
            return Err(invalid("solver.bb_min", "need 0 < bb_min < bb_max < infinity"));
        }
        let f = &self.fit;
        if !(0.0 <= f.start && f.start < f.end && f.end <= 1.0) {
            return Err(invalid("fit", "window must satisfy 0 <= start < end <= 1"));
        }
        if let Some(sw) = &self.sweep {
            if sw.horizons.is_empty() {
                return Err(invalid("sweep.horizons", "must not be empty"));
            }
            for (i, t) in sw.horizons.iter().enumerate() {
                if !(t.is_finite() && *t > 0.0) {
                    return Err(invalid(&format!("sweep.horizons[{i}]"), "must be positive"));
                }
            }
            if sw.horizons.windows(2).any(|w| w[0] >= w[1]) {
                return Err(invalid("sweep.horizons", "must be strictly increasing"));
            }
            if !(sw.steps_per_unit.is_finite() && sw.steps_per_unit > 0.0) {
                return Err(invalid("sweep.steps_per_unit", "must be positive"));
            }
        }
        for (i, c) in self.checks.iter().enumerate() {
            if let CheckConfig::Complementary {
                side: ComplementarySide::B,
                decay: Some(_),
                ..
            } = c
            {
                return Err(invalid(
                    &format!("checks[{i}].decay"),
                    "decay simulation needs the observation side C",
                ));
            }
            if let CheckConfig::Complementary { decay: Some(d), .. } = c {
                if !(d.horizon.is_finite() && d.horizon > 0.0) {
                    return Err(invalid(&format!("checks[{i}].decay.T"), "must be positive"));
                }
                if d.n_steps < 2 {
                    return Err(invalid(&format!("checks[{i}].decay.n_steps"), "must be at least 2"));
                }
            }
        }
        Ok(())
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn seed(&self) -> Option<u64> {
        match &self.ensemble {
            EnsembleSource::Spec(spec) => spec.seed(),
            EnsembleSource::File(_) => None,
        }
    }

    pub fn override_seed(&mut self, seed: u64) -> Result<(), CliError> {
        match &mut self.ensemble {
            EnsembleSource::Spec(spec @ DistributionSpec::PoissonScaled { .. }) => {
                spec.set_seed(seed);
                Ok(())
            }
            _ => Err(invalid("--seed", "only sampled ensembles take a seed")),
        }
    }

    pub fn build_ensemble(&self) -> Result<Ensemble, CliError> {
        match &self.ensemble {
            EnsembleSource::Spec(spec) => spec.build().map_err(|e| invalid("ensemble", e)),
            EnsembleSource::File(file) => {
                let path = self.resolve(file);
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| invalid("ensemble.file", format!("cannot read {}: {e}", path.display())))?;
                let value: Value = serde_json::from_str(&text)
                    .map_err(|e| invalid("ensemble.file", format!("{}: {e}", path.display())))?;
                parse_at(value, &format!("ensemble.file({})", path.display()))
            }
        }
    }

    /// Target `z`; defaults to the benchmark target when the observation has
    /// dimension 2.
    pub fn target(&self, ens: &Ensemble) -> Result<Vec<f64>, CliError> {
        let z = match &self.problem.z {
            Some(z) => z.clone(),
            None if ens.p() == DEFAULT_TARGET.len() => DEFAULT_TARGET.to_vec(),
            None => return Err(invalid("problem.z", "is required for this ensemble")),
        };
        if z.len() != ens.p() {
            return Err(invalid(
                "problem.z",
                format!("has dimension {}, the observation has dimension {}", z.len(), ens.p()),
            ));
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(invalid("problem.z", "must be finite"));
        }
        Ok(z)
    }

    /// Expands a vector field; `stationary` is resolved by the caller.
    pub fn vectors(
        &self,
        field: &VectorField,
        name: &str,
        ens: &Ensemble,
        stationary: Option<&[Vec<f64>]>,
    ) -> Result<Vec<Vec<f64>>, CliError> {
        let n = ens.n();
        let data = match field {
            VectorField::Zero => ens.zeros(n),
            VectorField::Constant(v) => ens.broadcast(v),
            VectorField::Samples(v) => v.clone(),
            VectorField::File(file) => {
                let path = self.resolve(file);
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| invalid(name, format!("cannot read {}: {e}", path.display())))?;
                serde_json::from_str(&text)
                    .map_err(|e| invalid(name, format!("{}: {e}", path.display())))?
            }
            VectorField::Stationary => stationary
                .ok_or_else(|| invalid(name, "stationary data is not available here"))?
                .to_vec(),
        };
        ens.check_sample_vectors(&data, n, name)
            .map_err(|e| invalid(name, e))?;
        Ok(data)
    }

    pub fn check_samples(&self, ens: &Ensemble) -> Result<(), CliError> {
        for (i, s) in self.output.samples.iter().enumerate() {
            if *s >= ens.len() {
                return Err(invalid(
                    &format!("output.samples[{i}]"),
                    format!("sample {s} does not exist (ensemble has {})", ens.len()),
                ));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<ExperimentConfig, CliError> {
        ExperimentConfig::parse(text, PathBuf::new())
    }

    fn message(r: Result<ExperimentConfig, CliError>) -> String {
        match r {
            Err(CliError::Validation(m)) => m,
            other => panic!("expected a validation error, got {other:?}"),
        }
    }

    #[test]
    fn empty_config_takes_benchmark_defaults() {
        let cfg = parse("{}").unwrap();
        assert_eq!(cfg.problem.horizon, 10.0);
        assert_eq!(cfg.problem.n_steps, 150);
        assert_eq!(cfg.seed(), Some(42));
        let ens = cfg.build_ensemble().unwrap();
        assert_eq!(ens.len(), 200);
        assert_eq!(cfg.target(&ens).unwrap(), vec![4.0, 4.0]);
    }

    #[test]
    fn negative_horizon_names_field() {
        assert!(message(parse(r#"{"problem": {"T": -1}}"#)).starts_with("problem.T"));
    }

    #[test]
    fn unknown_keys_name_their_path() {
        let m = message(parse(r#"{"problem": {"T": 1, "horizon": 2}}"#));
        assert!(m.starts_with("problem"), "{m}");
        assert!(m.contains("horizon"));
        let m = message(parse(r#"{"ensemble": {"kind": "two-point", "atoms": [], "masses": [], "x": 1}}"#));
        assert!(m.starts_with("ensemble"), "{m}");
        let m = message(parse(r#"{"solver": {"max_iters": "many"}}"#));
        assert!(m.starts_with("solver.max_iters"), "{m}");
    }

    #[test]
    fn vector_fields() {
        let cfg = parse(r#"{"problem": {"x0": {"constant": [1, 2]}, "phi_T": "stationary"}}"#).unwrap();
        assert_eq!(cfg.problem.x0, VectorField::Constant(vec![1.0, 2.0]));
        assert_eq!(cfg.problem.phi_terminal, VectorField::Stationary);
    }

    #[test]
    fn checks_parse() {
        let cfg = parse(
            r#"{"checks": [
                {"kind": "A0", "gain": {"per_sample": [[[0]], [[-2]]]}},
                {"kind": "scan", "which": "A1", "entries": [{"sample": 0, "row": 0, "col": 0}]},
                {"kind": "stationary-coercivity", "side": "AC"}
            ]}"#,
        )
        .unwrap();
        assert_eq!(cfg.checks.len(), 3);
    }

    #[test]
    fn sweep_must_increase() {
        let m = message(parse(r#"{"sweep": {"horizons": [10, 5]}}"#));
        assert!(m.starts_with("sweep.horizons"));
    }
}
