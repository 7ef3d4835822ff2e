//! Experiment configuration: flat typed key = value text with section
//! headers (TOML), strict unknown-key rejection, and a deterministic echo
//! so every run can emit the fully resolved manifest it ran from.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("unknown top-level key `{0}` (allowed: kind, seed, quick, params)")]
    UnknownKey(String),
    #[error("missing `kind`")]
    MissingKind,
    #[error("unknown experiment kind `{0}`")]
    UnknownKind(String),
}

/// One experiment: a kind tag, the master seed, and the kind's parameter
/// block.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default)]
    pub quick: bool,
    #[serde(flatten)]
    pub study: Study,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", content = "params", rename_all = "kebab-case")]
pub enum Study {
    Simulate(SimulateParams),
    SolvePde(SolvePdeParams),
    NoiseDecay(NoiseDecayParams),
    OuToy(OuToyParams),
    GpRatio(GpRatioParams),
    SewingCheck(SewingCheckParams),
    SemigroupBounds(SemigroupBoundsParams),
    ResolventDecay(ResolventDecayParams),
    MildResidual(MildResidualParams),
    Stability(StabilityParams),
    Lln(LlnParams),
}

pub const ALL_KINDS: [&str; 11] = [
    "simulate",
    "solve-pde",
    "noise-decay",
    "ou-toy",
    "gp-ratio",
    "sewing-check",
    "semigroup-bounds",
    "resolvent-decay",
    "mild-residual",
    "stability",
    "lln",
];

impl Study {
    pub fn kind(&self) -> &'static str {
        match self {
            Study::Simulate(_) => "simulate",
            Study::SolvePde(_) => "solve-pde",
            Study::NoiseDecay(_) => "noise-decay",
            Study::OuToy(_) => "ou-toy",
            Study::GpRatio(_) => "gp-ratio",
            Study::SewingCheck(_) => "sewing-check",
            Study::SemigroupBounds(_) => "semigroup-bounds",
            Study::ResolventDecay(_) => "resolvent-decay",
            Study::MildResidual(_) => "mild-residual",
            Study::Stability(_) => "stability",
            Study::Lln(_) => "lln",
        }
    }
}

/// A Gaussian bump given by plain numbers, the config-file face of a
/// single-bump test function.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct BumpSpec {
    #[serde(default = "one")]
    pub amplitude: f64,
    #[serde(default)]
    pub center: f64,
    #[serde(default = "default_width")]
    pub width: f64,
}

fn one() -> f64 {
    1.0
}
fn default_width() -> f64 {
    0.8
}

impl Default for BumpSpec {
    fn default() -> Self {
        BumpSpec {
            amplitude: 1.0,
            center: 0.0,
            width: 0.8,
        }
    }
}

impl BumpSpec {
    pub fn build(&self, d: usize) -> crate::sobolev::TestFunction {
        crate::sobolev::TestFunction::single_bump(
            d,
            self.amplitude,
            vec![self.center; d],
            self.width,
        )
    }
}

/// Initial law by name: `iid-gaussian`, `iid-cauchy`, `iid-two-cluster`,
/// `two-cluster-deterministic`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct InitialSpec {
    pub law: String,
    #[serde(default)]
    pub center: f64,
    #[serde(default = "one")]
    pub scale: f64,
    #[serde(default = "default_offset")]
    pub offset: f64,
}

fn default_offset() -> f64 {
    3.0
}

impl Default for InitialSpec {
    fn default() -> Self {
        InitialSpec {
            law: "iid-gaussian".into(),
            center: 0.0,
            scale: 1.0,
            offset: 3.0,
        }
    }
}

impl InitialSpec {
    pub fn build(&self) -> Result<crate::particles::InitialLaw, ConfigError> {
        use crate::particles::InitialLaw;
        Ok(match self.law.as_str() {
            "iid-gaussian" => InitialLaw::IidGaussian {
                mean: self.center,
                std: self.scale,
            },
            "iid-cauchy" => InitialLaw::IidCauchy {
                location: self.center,
                scale: self.scale,
            },
            "iid-two-cluster" => InitialLaw::IidTwoCluster {
                offset: self.offset,
                std: self.scale,
            },
            "two-cluster-deterministic" => InitialLaw::TwoClusterDeterministic {
                offset: self.offset,
            },
            other => {
                return Err(ConfigError::Parse(format!(
                    "unknown initial law `{other}`"
                )))
            }
        })
    }
}

pub fn kernel_by_name(name: &str) -> Result<crate::particles::InteractionKernel, ConfigError> {
    match name {
        "tanh" => Ok(crate::particles::InteractionKernel::tanh_attractive()),
        "zero" => Ok(crate::particles::InteractionKernel::zero()),
        other => Err(ConfigError::Parse(format!(
            "unknown kernel `{other}` (tanh, zero)"
        ))),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SimulateParams {
    pub n: usize,
    pub d: usize,
    pub t_horizon: f64,
    pub dt: f64,
    pub kernel: String,
    pub initial: InitialSpec,
    /// Also dump the micro increment record (replay-exact).
    #[serde(default)]
    pub dump_increments: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SolvePdeParams {
    pub half_width: f64,
    pub n_per_axis: usize,
    pub dt: f64,
    pub t_horizon: f64,
    pub kernel: String,
    pub initial: InitialSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct NoiseDecayParams {
    pub ladder: Vec<usize>,
    pub replicas: usize,
    pub t_horizon: f64,
    pub dt: f64,
    pub m: f64,
    pub alpha: f64,
    pub kernel: String,
    pub initial: InitialSpec,
    pub h: BumpSpec,
    /// Exploratory uniform-in-h probe over a small dictionary.
    pub probe: bool,
    pub probe_ladder: Vec<usize>,
    pub probe_replicas: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct OuToyParams {
    pub a: f64,
    pub ladder: Vec<usize>,
    pub t_horizon: f64,
    pub steps: usize,
    pub replicas: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct GpRatioParams {
    pub t_ladder: Vec<f64>,
    pub steps: usize,
    pub replicas: usize,
    pub ou_a: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SewingCheckParams {
    pub steps: usize,
    pub micro: usize,
    pub t_horizon: f64,
    pub frozen_at: f64,
    pub replicas: usize,
    pub h: BumpSpec,
    pub alpha: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SemigroupBoundsParams {
    pub t_points: usize,
    pub t_min: f64,
    pub t_max: f64,
    pub m: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ResolventDecayParams {
    pub eta: f64,
    pub epsilons: Vec<f64>,
    pub rho_ladder: Vec<f64>,
    pub m: f64,
    pub h: BumpSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct MildResidualParams {
    pub half_width: f64,
    pub n_per_axis: usize,
    pub dt: f64,
    pub t_horizon: f64,
    pub kernel: String,
    pub m: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct StabilityParams {
    pub half_width: f64,
    pub n_per_axis: usize,
    pub dt: f64,
    pub t_horizon: f64,
    pub kernel: String,
    pub m: f64,
    pub epsilons: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct LlnParams {
    pub ladder: Vec<usize>,
    pub replicas: usize,
    pub m: f64,
    pub t_horizon: f64,
    pub dt: f64,
    pub pde_dt: f64,
    pub kernel: String,
    /// Any of `gaussian`, `two-cluster`, `cauchy`.
    pub tracks: Vec<String>,
    pub save_points: usize,
    /// Skip the Monte Carlo cross-check of the PDE reference.
    #[serde(default)]
    pub skip_oracle_check: bool,
}

impl ExperimentConfig {
    /// Strict parse: unknown top-level keys and unknown params keys are
    /// both rejected.
    pub fn parse_toml(text: &str) -> Result<Self, ConfigError> {
        let table: toml::Table =
            toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        for key in table.keys() {
            if !["kind", "seed", "quick", "params"].contains(&key.as_str()) {
                return Err(ConfigError::UnknownKey(key.clone()));
            }
        }
        if !table.contains_key("kind") {
            return Err(ConfigError::MissingKind);
        }
        let value = toml::Value::Table(table);
        value
            .try_into::<ExperimentConfig>()
            .map_err(|e| ConfigError::Parse(e.to_string()))
    }

    /// Deterministic echo of the resolved config.
    pub fn to_toml(&self) -> String {
        let params = match &self.study {
            Study::Simulate(p) => toml::to_string(p),
            Study::SolvePde(p) => toml::to_string(p),
            Study::NoiseDecay(p) => toml::to_string(p),
            Study::OuToy(p) => toml::to_string(p),
            Study::GpRatio(p) => toml::to_string(p),
            Study::SewingCheck(p) => toml::to_string(p),
            Study::SemigroupBounds(p) => toml::to_string(p),
            Study::ResolventDecay(p) => toml::to_string(p),
            Study::MildResidual(p) => toml::to_string(p),
            Study::Stability(p) => toml::to_string(p),
            Study::Lln(p) => toml::to_string(p),
        }
        .expect("params serialize");
        // Nested tables inside params (e.g. [params.initial]) must keep
        // their section headers; plain keys are indented under [params].
        let mut flat = String::new();
        let mut nested = String::new();
        let mut in_nested = false;
        for line in params.lines() {
            if line.starts_with('[') {
                in_nested = true;
                nested.push_str(&format!(
                    "[params.{}]\n",
                    line.trim_matches(['[', ']'])
                ));
            } else if in_nested {
                nested.push_str(line);
                nested.push('\n');
            } else {
                flat.push_str(line);
                flat.push('\n');
            }
        }
        format!(
            "kind = \"{}\"\nseed = {}\nquick = {}\n\n[params]\n{}{}",
            self.study.kind(),
            self.seed,
            self.quick,
            flat,
            nested
        )
    }

    /// Built-in defaults per kind; `quick` swaps in CI-sized ladders.
    pub fn default_for(kind: &str, seed: u64, quick: bool) -> Result<Self, ConfigError> {
        let study = match kind {
            "simulate" => Study::Simulate(SimulateParams {
                n: if quick { 32 } else { 200 },
                d: 1,
                t_horizon: 1.0,
                dt: 1.0 / 64.0,
                kernel: "tanh".into(),
                initial: InitialSpec::default(),
                dump_increments: false,
            }),
            "solve-pde" => Study::SolvePde(SolvePdeParams {
                half_width: 15.0,
                n_per_axis: if quick { 128 } else { 512 },
                dt: 1.0 / 128.0,
                t_horizon: 1.0,
                kernel: "tanh".into(),
                initial: InitialSpec::default(),
            }),
            "noise-decay" => Study::NoiseDecay(NoiseDecayParams {
                ladder: if quick {
                    vec![16, 64, 256]
                } else {
                    vec![64, 256, 1024, 4096]
                },
                replicas: if quick { 30 } else { 50 },
                t_horizon: 1.0,
                dt: 1.0 / 64.0,
                m: 1.6,
                alpha: 0.4,
                kernel: "tanh".into(),
                initial: InitialSpec::default(),
                h: BumpSpec::default(),
                probe: true,
                probe_ladder: if quick {
                    vec![16, 64]
                } else {
                    vec![64, 256, 1024]
                },
                probe_replicas: if quick { 8 } else { 20 },
            }),
            "ou-toy" => Study::OuToy(OuToyParams {
                a: 1.0,
                ladder: vec![64, 256, 1024],
                t_horizon: 1.0,
                steps: 64,
                replicas: if quick { 200 } else { 2000 },
            }),
            "gp-ratio" => Study::GpRatio(GpRatioParams {
                t_ladder: vec![1.0, 4.0, 16.0, 64.0],
                steps: 1024,
                replicas: if quick { 200 } else { 2000 },
                ou_a: 1.0,
            }),
            "sewing-check" => Study::SewingCheck(SewingCheckParams {
                steps: if quick { 1024 } else { 4096 },
                micro: 4,
                t_horizon: 1.0 / 16.0,
                frozen_at: 1.0,
                replicas: if quick { 50 } else { 200 },
                h: BumpSpec {
                    amplitude: 1.0,
                    center: 0.0,
                    width: 1.0,
                },
                alpha: 0.4,
            }),
            "semigroup-bounds" => Study::SemigroupBounds(SemigroupBoundsParams {
                t_points: 30,
                t_min: 1e-3,
                t_max: 1.0,
                m: 1.6,
            }),
            "resolvent-decay" => Study::ResolventDecay(ResolventDecayParams {
                eta: 3.0 * std::f64::consts::FRAC_PI_4,
                epsilons: vec![0.1, 0.25],
                rho_ladder: vec![2.0, 8.0, 32.0, 128.0, 512.0],
                m: 1.6,
                h: BumpSpec::default(),
            }),
            "mild-residual" => Study::MildResidual(MildResidualParams {
                half_width: 12.0,
                n_per_axis: if quick { 128 } else { 256 },
                dt: 1.0 / 64.0,
                t_horizon: 0.5,
                kernel: "tanh".into(),
                m: 1.6,
            }),
            "stability" => Study::Stability(StabilityParams {
                half_width: 12.0,
                n_per_axis: if quick { 128 } else { 256 },
                dt: 1.0 / 64.0,
                t_horizon: 0.5,
                kernel: "tanh".into(),
                m: 1.6,
                epsilons: vec![1e-2, 1e-3, 1e-4],
            }),
            "lln" => Study::Lln(LlnParams {
                ladder: if quick {
                    vec![50, 200, 800]
                } else {
                    vec![100, 400, 1600, 6400]
                },
                replicas: if quick { 8 } else { 30 },
                m: 1.6,
                t_horizon: 1.0,
                dt: 1.0 / 64.0,
                pde_dt: 1.0 / 128.0,
                kernel: "tanh".into(),
                tracks: vec!["gaussian".into(), "two-cluster".into(), "cauchy".into()],
                save_points: 8,
                skip_oracle_check: false,
            }),
            other => return Err(ConfigError::UnknownKind(other.into())),
        };
        Ok(ExperimentConfig { seed, quick, study })
    }
}
