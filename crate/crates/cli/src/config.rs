//! TOML run configuration.
//!
//! ```toml
//! [model]
//! preset = "laplace-contractive"
//! observation_amplitude = 0.05
//!
//! [grid]
//! lower = -20.0
//! upper = 20.0
//! points = 401
//!
//! [perturbation]
//! drift_shift = 0.01
//! observation_shift = 0.01
//! radius = 2.0
//!
//! [experiment]
//! horizon = 200
//! replicas = 500
//! seed = 0
//! c = 0.1
//! radius = 4.0
//! initial = "point:0"
//! alternate_initial = "laplace:1:1"
//! diagnose_horizon = 20
//! ```
//!
//! Only `model.preset` is required. Unknown keys are rejected.

use serde::Deserialize;
use thiserror::Error;

use filterlab_core::experiments::{ExperimentConfig, MAX_TELESCOPING_HORIZON};
use filterlab_core::measure::GridSpec;
use filterlab_core::model::InitialLaw;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("{0}")]
    Parse(String),
    #[error("{0}")]
    Validation(String),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Document {
    model: ModelSection,
    #[serde(default)]
    grid: GridSection,
    #[serde(default)]
    perturbation: PerturbationSection,
    #[serde(default)]
    experiment: ExperimentSection,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelSection {
    preset: String,
    observation_amplitude: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridSection {
    lower: Option<f64>,
    upper: Option<f64>,
    points: Option<i64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PerturbationSection {
    drift_shift: Option<f64>,
    observation_shift: Option<f64>,
    radius: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExperimentSection {
    horizon: Option<i64>,
    replicas: Option<i64>,
    seed: Option<i64>,
    c: Option<f64>,
    radius: Option<f64>,
    initial: Option<String>,
    alternate_initial: Option<String>,
    diagnose_horizon: Option<i64>,
}

/// Parsed and validated run configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub experiment: ExperimentConfig,
    /// Observation count for `diagnose`.
    pub diagnose_horizon: usize,
}

pub const DEFAULT_DIAGNOSE_HORIZON: usize = 20;

fn count(value: Option<i64>, default: usize, rule: &str) -> Result<usize, ConfigError> {
    match value {
        None => Ok(default),
        Some(v) => usize::try_from(v).map_err(|_| ConfigError::Validation(rule.to_string())),
    }
}

fn initial(text: Option<&str>, key: &str) -> Result<Option<InitialLaw>, ConfigError> {
    text.map(|t| {
        t.parse()
            .map_err(|e| ConfigError::Validation(format!("experiment.{key}: {e}")))
    })
    .transpose()
}

pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let doc: Document = toml::from_str(text).map_err(|e| {
        ConfigError::Parse(e.to_string().trim_end().replace('\n', " | "))
    })?;
    let defaults = ExperimentConfig::default();

    let g = &doc.grid;
    let grid = GridSpec::new(
        g.lower.unwrap_or(defaults.grid.lower()),
        g.upper.unwrap_or(defaults.grid.upper()),
        count(g.points, defaults.grid.points(), "grid points ≥ 2")?,
    )
    .map_err(|e| ConfigError::Validation(e.to_string()))?;

    let p = &doc.perturbation;
    let e = &doc.experiment;
    let experiment = ExperimentConfig {
        preset: doc.model.preset.clone(),
        observation_amplitude: doc.model.observation_amplitude.unwrap_or(defaults.observation_amplitude),
        perturbation_scale: p.drift_shift.unwrap_or(defaults.perturbation_scale),
        observation_shift: p.observation_shift.unwrap_or(defaults.observation_shift),
        perturbation_radius: p.radius.unwrap_or(defaults.perturbation_radius),
        horizon: count(e.horizon, defaults.horizon, "horizon ≥ 2")?,
        replicas: count(e.replicas, defaults.replicas, "replicas ≥ 1")?,
        seed: match e.seed {
            None => defaults.seed,
            Some(s) => u64::try_from(s)
                .map_err(|_| ConfigError::Validation("seed ≥ 0".into()))?,
        },
        grid,
        c: e.c.unwrap_or(defaults.c),
        radius: e.radius.unwrap_or(defaults.radius),
        initial: initial(e.initial.as_deref(), "initial")?.unwrap_or(defaults.initial),
        alternate_initial: initial(e.alternate_initial.as_deref(), "alternate_initial")?,
    };
    experiment.validate().map_err(|err| match err {
        filterlab_core::Error::InvalidArgument(msg) => ConfigError::Validation(msg),
        other => ConfigError::Validation(other.to_string()),
    })?;

    let diagnose_horizon = count(e.diagnose_horizon, DEFAULT_DIAGNOSE_HORIZON, "diagnose_horizon ≥ 1")?;
    if !(1..=MAX_TELESCOPING_HORIZON).contains(&diagnose_horizon) {
        return Err(ConfigError::Validation(format!(
            "1 ≤ diagnose_horizon ≤ {MAX_TELESCOPING_HORIZON}"
        )));
    }
    Ok(RunConfig { experiment, diagnose_horizon })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_document_takes_defaults() {
        let cfg = parse_config("[model]\npreset = \"laplace-contractive\"\n").unwrap();
        let d = ExperimentConfig::default();
        assert_eq!(cfg.experiment, d);
        assert_eq!(cfg.experiment.grid, GridSpec::new(-20.0, 20.0, 401).unwrap());
        assert_eq!(cfg.experiment.c, 0.1);
        assert_eq!(cfg.experiment.replicas, 500);
        assert_eq!(cfg.experiment.horizon, 200);
        assert_eq!(cfg.diagnose_horizon, DEFAULT_DIAGNOSE_HORIZON);
    }

    #[test]
    fn zero_replicas_is_a_validation_error() {
        let text = "[model]\npreset = \"laplace-contractive\"\n[experiment]\nreplicas = 0\n";
        assert_eq!(parse_config(text), Err(ConfigError::Validation("replicas ≥ 1".into())));
        let text = "[model]\npreset = \"laplace-contractive\"\n[experiment]\nreplicas = -3\n";
        assert_eq!(parse_config(text), Err(ConfigError::Validation("replicas ≥ 1".into())));
    }

    #[test]
    fn unknown_key_is_a_parse_error_naming_it() {
        let text = "[model]\npreset = \"laplace-contractive\"\n[experiment]\nreplics = 10\n";
        match parse_config(text) {
            Err(ConfigError::Parse(msg)) => {
                assert!(msg.contains("replics"), "{msg}");
                assert!(msg.contains("line 4"), "{msg}");
            }
            other => panic!("{other:?}"),
        }
        let text = "[model]\npreset = \"laplace-contractive\"\n[extra]\n";
        assert!(matches!(parse_config(text), Err(ConfigError::Parse(_))));
    }

    #[test]
    fn full_document() {
        let text = r#"
[model]
preset = "polynomial-observation"
observation_amplitude = 0.02

[grid]
lower = -15.0
upper = 15.0
points = 301

[perturbation]
drift_shift = 0.01
observation_shift = 0.005
radius = 2.0

[experiment]
horizon = 50
replicas = 20
seed = 9
c = 0.2
radius = 3.0
initial = "uniform:-2:2"
alternate_initial = "laplace:1:1"
diagnose_horizon = 12
"#;
        let cfg = parse_config(text).unwrap();
        let e = &cfg.experiment;
        assert_eq!(e.preset, "polynomial-observation");
        assert_eq!(e.grid.points(), 301);
        assert_eq!(e.perturbation_scale, 0.01);
        assert_eq!(e.initial, InitialLaw::Uniform { lower: -2.0, upper: 2.0 });
        assert_eq!(e.alternate_initial, Some(InitialLaw::Laplace { center: 1.0, scale: 1.0 }));
        assert_eq!(cfg.diagnose_horizon, 12);
    }

    #[test]
    fn bad_values() {
        let base = "[model]\npreset = \"laplace-contractive\"\n";
        let cases = [
            ("[experiment]\nhorizon = 1\n", "horizon ≥ 2"),
            ("[experiment]\nc = 0.0\n", "c > 0"),
            ("[experiment]\ndiagnose_horizon = 31\n", "1 ≤ diagnose_horizon ≤ 30"),
        ];
        for (extra, rule) in cases {
            let got = parse_config(&format!("{base}{extra}"));
            assert_eq!(got, Err(ConfigError::Validation(rule.into())));
        }
        assert!(matches!(
            parse_config("[model]\npreset = \"nope\"\n"),
            Err(ConfigError::Validation(_))
        ));
        assert!(matches!(
            parse_config(&format!("{base}[experiment]\ninitial = \"gauss:0:1\"\n")),
            Err(ConfigError::Validation(_))
        ));
        assert!(matches!(
            parse_config(&format!("{base}[grid]\npoints = 1\n")),
            Err(ConfigError::Validation(_))
        ));
        assert!(matches!(parse_config("[model]\n"), Err(ConfigError::Parse(_))));
        assert!(matches!(
            parse_config(&format!("{base}[experiment]\nhorizon = \"ten\"\n")),
            Err(ConfigError::Parse(_))
        ));
    }
}
