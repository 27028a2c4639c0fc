//! Built-in scenarios and the scenario file format.
//!
//! A scenario file is strict JSON:
//!
//! ```json
//! {
//!   "id": "generic",
//!   "kernel": "(1+z)*y",
//!   "type_b": [{"name": "z", "dist": {"uniform": {"lower": 5, "upper": 10}}}],
//!   "data": {"mean": 50, "count": 1, "variance": 1},
//!   "default_y0": 5.882352941176471,
//!   "units": null,
//!   "description": "optional free text"
//! }
//! ```
//!
//! Distributions are `{"gaussian": {"mean", "variance"}}` or
//! `{"uniform": {"lower", "upper"}}`. Unknown fields are rejected.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engines::{self, EngineConfig, EngineError, EngineKind, SampleSet, PILOT_STREAM};
use crate::expr::{self, ParseError};
use crate::model::{
    check_affine, default_probes, AffinityCheck, AffinityViolation, ExprKernel, MeasurementData,
    ModelError, TypeBSpec, VirtualExperiment, ZPoint, DEFAULT_AFFINE_REL_TOL, MEASURAND,
};
use crate::randkit::{derive_substream, Distribution};

/// Seed of the pilot z draw used by the load-time affinity check.
pub const PILOT_SEED: u64 = 0;

pub const GENERIC_ID: &str = "generic";
pub const MASS_ID: &str = "mass_calibration";

pub const GENERIC_KERNEL: &str = "(1+z)*y";
pub const MASS_KERNEL: &str = "(y + 100000)/(1 + (rho_a - 1.2)*(1/rho_W - 1/rho_R)) - m_Rc";

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("scenario JSON error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("type_b entry `{name}`: unknown distribution `{tag}`")]
    UnknownDistribution { name: String, tag: String },
    #[error("type_b entry `{name}`: {message}")]
    BadDistribution { name: String, message: String },
    #[error("kernel: {0}")]
    Kernel(#[from] ParseError),
    #[error("kernel references unbound identifiers: {}", .0.join(", "))]
    FreeVariables(Vec<String>),
    #[error("kernel does not mention the measurand `y`")]
    MissingMeasurand,
    #[error("invalid field: {0}")]
    InvalidField(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(
        "affinity violation at pilot z = {z}: kernel({}) = {} but the line through the first two probes gives {}",
        .violation.probe, .violation.value, .violation.line_value
    )]
    Affinity {
        z: ZPoint,
        violation: AffinityViolation,
    },
    #[error("unknown scenario `{0}`")]
    Unknown(String),
}

impl From<serde_json::Error> for ScenarioError {
    fn from(e: serde_json::Error) -> Self {
        ScenarioError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TypeBEntry {
    pub name: String,
    pub dist: Distribution,
}

/// On-disk form of a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub id: String,
    pub kernel: String,
    pub type_b: Vec<TypeBEntry>,
    pub data: MeasurementData,
    pub default_y0: f64,
    #[serde(default)]
    pub units: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
}

// First pass keeps `dist` opaque so an unknown tag gets its own error.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEntry {
    name: String,
    dist: serde_json::Value,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFile {
    id: String,
    kernel: String,
    type_b: Vec<RawEntry>,
    data: MeasurementData,
    default_y0: f64,
    #[serde(default)]
    units: Option<String>,
    #[serde(default)]
    description: Option<String>,
}

fn decode_dist(name: &str, value: serde_json::Value) -> Result<Distribution, ScenarioError> {
    if let Some(obj) = value.as_object() {
        if let Some(tag) = obj.keys().find(|k| *k != "gaussian" && *k != "uniform") {
            return Err(ScenarioError::UnknownDistribution {
                name: name.to_string(),
                tag: tag.clone(),
            });
        }
    }
    serde_json::from_value(value).map_err(|e| ScenarioError::BadDistribution {
        name: name.to_string(),
        message: e.to_string(),
    })
}

impl ScenarioFile {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let raw: RawFile = serde_json::from_str(text)?;
        let type_b = raw
            .type_b
            .into_iter()
            .map(|e| {
                let dist = decode_dist(&e.name, e.dist)?;
                Ok(TypeBEntry { name: e.name, dist })
            })
            .collect::<Result<Vec<_>, ScenarioError>>()?;
        Ok(ScenarioFile {
            id: raw.id,
            kernel: raw.kernel,
            type_b,
            data: raw.data,
            default_y0: raw.default_y0,
            units: raw.units,
            description: raw.description,
        })
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }
}

/// A validated scenario, ready to run.
#[derive(Clone)]
pub struct Scenario {
    file: ScenarioFile,
    pub ve: VirtualExperiment,
    pub typeb: TypeBSpec,
}

impl Scenario {
    pub fn from_file(file: ScenarioFile) -> Result<Self, ScenarioError> {
        if file.id.trim().is_empty() {
            return Err(ScenarioError::InvalidField("id must not be empty".into()));
        }
        if !file.default_y0.is_finite() {
            return Err(ScenarioError::InvalidField(
                "default_y0 must be finite".into(),
            ));
        }
        file.data.validate()?;
        for e in &file.type_b {
            e.dist
                .validate()
                .map_err(|err| ScenarioError::BadDistribution {
                    name: e.name.clone(),
                    message: err.to_string(),
                })?;
        }
        let typeb = TypeBSpec::new(file.type_b.iter().map(|e| (e.name.clone(), e.dist)))?;

        let parsed = expr::parse(&file.kernel)?;
        let used = expr::free_variables(&parsed);
        if !used.contains(MEASURAND) {
            return Err(ScenarioError::MissingMeasurand);
        }
        let known: BTreeSet<&str> = typeb
            .names()
            .iter()
            .map(String::as_str)
            .chain([MEASURAND])
            .collect();
        let unbound: Vec<String> = used
            .iter()
            .filter(|n| !known.contains(n.as_str()))
            .cloned()
            .collect();
        if !unbound.is_empty() {
            return Err(ScenarioError::FreeVariables(unbound));
        }

        let kernel = ExprKernel::new(file.kernel.clone(), parsed);
        let ve = VirtualExperiment::new(Arc::new(kernel), file.data.variance)?;

        let mut pilot = derive_substream(PILOT_SEED, PILOT_STREAM);
        let z = typeb.sample(&mut pilot)?;
        let probes = default_probes(file.default_y0);
        if let AffinityCheck::Violation(violation) =
            check_affine(&ve, &z, &probes, DEFAULT_AFFINE_REL_TOL)?
        {
            return Err(ScenarioError::Affinity { z, violation });
        }

        Ok(Scenario { file, ve, typeb })
    }

    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        Scenario::from_file(ScenarioFile::from_json(text)?)
    }

    pub fn id(&self) -> &str {
        &self.file.id
    }

    pub fn kernel(&self) -> &str {
        &self.file.kernel
    }

    pub fn data(&self) -> &MeasurementData {
        &self.file.data
    }

    pub fn default_y0(&self) -> f64 {
        self.file.default_y0
    }

    pub fn units(&self) -> Option<&str> {
        self.file.units.as_deref()
    }

    pub fn description(&self) -> Option<&str> {
        self.file.description.as_deref()
    }

    pub fn to_file(&self) -> &ScenarioFile {
        &self.file
    }

    pub fn to_json_pretty(&self) -> String {
        self.file.to_json_pretty()
    }

    /// Run one engine; the result carries this scenario's id.
    pub fn run(&self, engine: EngineKind, cfg: &EngineConfig) -> Result<SampleSet, EngineError> {
        let data = self.data();
        let set = match engine {
            EngineKind::Jcgm101 => engines::run_jcgm101(&self.ve, data, &self.typeb, cfg)?,
            EngineKind::McVe => engines::run_mc_ve(&self.ve, data, &self.typeb, cfg)?,
            EngineKind::Conditional => {
                return Err(EngineError::Config(
                    "the conditional sampler needs a fixed z; use sample_conditional".into(),
                ))
            }
        };
        Ok(set.with_scenario_id(self.id()))
    }
}

impl PartialEq for Scenario {
    fn eq(&self, other: &Self) -> bool {
        self.file == other.file
    }
}

impl fmt::Debug for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Scenario")
            .field("file", &self.file)
            .finish()
    }
}

pub fn generic_example_file() -> ScenarioFile {
    ScenarioFile {
        id: GENERIC_ID.into(),
        kernel: GENERIC_KERNEL.into(),
        type_b: vec![TypeBEntry {
            name: "z".into(),
            dist: Distribution::Uniform {
                lower: 5.0,
                upper: 10.0,
            },
        }],
        data: MeasurementData {
            mean: 50.0,
            count: 1,
            variance: 1.0,
        },
        default_y0: 50.0 / 8.5,
        units: None,
        description: Some(
            "Generic non-linear model x = (1 + z) y + eps, z ~ U(5, 10), one observation x = 50"
                .into(),
        ),
    }
}

pub fn mass_calibration_file() -> ScenarioFile {
    ScenarioFile {
        id: MASS_ID.into(),
        kernel: MASS_KERNEL.into(),
        type_b: vec![
            TypeBEntry {
                name: "m_Rc".into(),
                dist: Distribution::Gaussian {
                    mean: 100000.0,
                    variance: 0.0025,
                },
            },
            TypeBEntry {
                name: "rho_a".into(),
                dist: Distribution::Uniform {
                    lower: 1.1,
                    upper: 1.3,
                },
            },
            TypeBEntry {
                name: "rho_W".into(),
                dist: Distribution::Uniform {
                    lower: 7000.0,
                    upper: 9000.0,
                },
            },
            TypeBEntry {
                name: "rho_R".into(),
                dist: Distribution::Uniform {
                    lower: 7950.0,
                    upper: 8050.0,
                },
            },
        ],
        data: MeasurementData {
            mean: 1.2345,
            count: 5,
            variance: 0.001,
        },
        default_y0: 1.0,
        units: Some("mg".into()),
        description: Some(
            "Mass calibration of a 100 g weight against a reference with air-buoyancy \
             correction; y is the deviation from m_nom = 1e5 mg. The numerator reads \
             (y + m_nom); the sign variant (y - m_nom) would place the measurand near 2e5 mg."
                .into(),
        ),
    }
}

pub fn generic_example() -> Scenario {
    Scenario::from_file(generic_example_file()).expect("built-in scenario is valid")
}

pub fn mass_calibration() -> Scenario {
    Scenario::from_file(mass_calibration_file()).expect("built-in scenario is valid")
}

pub fn builtin_ids() -> [&'static str; 2] {
    [GENERIC_ID, MASS_ID]
}

pub fn builtin(id: &str) -> Option<Scenario> {
    match id {
        GENERIC_ID => Some(generic_example()),
        MASS_ID => Some(mass_calibration()),
        _ => None,
    }
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Scenario::from_json(&text)
}

/// A built-in id, or else a path to a scenario file.
pub fn resolve(id_or_path: &str) -> Result<Scenario, ScenarioError> {
    if let Some(s) = builtin(id_or_path) {
        return Ok(s);
    }
    let path = Path::new(id_or_path);
    if path.exists() {
        load_scenario(path)
    } else {
        Err(ScenarioError::Unknown(id_or_path.to_string()))
    }
}

/// Exact mean and standard deviation of the generic example's measurand,
/// `Y = X′ / (1 + Z)` with `X′ ~ N(50, 1)` and `Z ~ U(5, 10)` independent.
pub fn generic_true_moments() -> (f64, f64) {
    // E[1/(1+Z)] = ln(11/6)/5, E[1/(1+Z)²] = (1/6 − 1/11)/5
    let e_w = (11.0f64 / 6.0).ln() / 5.0;
    let e_w2 = (1.0 / 6.0 - 1.0 / 11.0) / 5.0;
    let e_x2 = 50.0 * 50.0 + 1.0;
    let mean = 50.0 * e_w;
    (mean, (e_x2 * e_w2 - mean * mean).sqrt())
}
