//! Monte Carlo engines.
//!
//! * [`run_jcgm101`]: classical propagation. Draw `x′ ~ N(x̄, σ²/m)` and
//!   `z ~ π(Z)`, then invert the measurement, `y′ = (x′ − Δ₂(z)) / Δ₁(z)`.
//! * [`run_mc_ve`]: virtual-experiment propagation. Run the VE `m` times at an
//!   arbitrary `y₀`, average, and correct with
//!   `y = (x̄ − x̄ᵛᵉ) / Δ₁(z) + y₀`. Only Δ₁ is needed, so the kernel stays a
//!   black box. The result does not depend on `y₀`.
//! * [`sample_conditional`]: direct draws from `y | z ~ N((x̄ − Δ₂)/Δ₁, σ²/(m Δ₁²))`.
//!
//! Iteration `i` (0-based) draws everything from substream `i` of the master
//! seed: `x′` then the z components for JCGM 101, the z components then the
//! `m` noise draws for MC-VE. Output is therefore identical for any worker
//! count. The affinity pilot uses substream [`PILOT_STREAM`].

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    check_affine, default_probes, extract_affine, invert_measurement, AffinityCheck,
    AffinityViolation, MeasurementData, ModelError, TypeBSpec, VirtualExperiment, ZPoint,
    DEFAULT_AFFINE_REL_TOL,
};
use crate::randkit::{derive_substream, sample_gaussian, DistributionError, RandomStream};

/// Substream reserved for the pilot z draw of the affinity check.
pub const PILOT_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EngineKind {
    Jcgm101,
    McVe,
    Conditional,
}

impl fmt::Display for EngineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EngineKind::Jcgm101 => "jcgm101",
            EngineKind::McVe => "mc_ve",
            EngineKind::Conditional => "conditional",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleSet {
    pub values: Vec<f64>,
    pub engine: EngineKind,
    pub master_seed: u64,
    pub scenario_id: String,
    pub n: usize,
    pub y0: Option<f64>,
}

impl SampleSet {
    pub fn with_scenario_id(mut self, id: impl Into<String>) -> Self {
        self.scenario_id = id.into();
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    pub n: usize,
    pub master_seed: u64,
    /// Hypothetical measurand value the VE is run at (MC-VE only).
    pub y0: f64,
    /// Draw all `m` noise terms per iteration. When off, a single
    /// `N(0, σ²/m)` draw stands in for their mean.
    pub literal_inner_loop: bool,
    /// Worker threads; `None` uses the global rayon pool.
    pub workers: Option<usize>,
}

impl EngineConfig {
    pub fn new(n: usize, master_seed: u64) -> Self {
        EngineConfig {
            n,
            master_seed,
            y0: 0.0,
            literal_inner_loop: true,
            workers: None,
        }
    }

    pub fn y0(mut self, y0: f64) -> Self {
        self.y0 = y0;
        self
    }

    pub fn literal_inner_loop(mut self, on: bool) -> Self {
        self.literal_inner_loop = on;
        self
    }

    pub fn workers(mut self, workers: usize) -> Self {
        self.workers = Some(workers);
        self
    }

    fn validate(&self) -> Result<(), EngineError> {
        if self.n < 1 {
            return Err(EngineError::Config("n must be at least 1".into()));
        }
        if !self.y0.is_finite() {
            return Err(EngineError::Config("y0 must be finite".into()));
        }
        if self.workers == Some(0) {
            return Err(EngineError::Config("workers must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(
        "model is not affine in the measurand at pilot z = {z}: kernel({}) = {} but the line gives {}",
        .violation.probe, .violation.value, .violation.line_value
    )]
    NotAffine {
        z: ZPoint,
        violation: AffinityViolation,
    },
    #[error("iteration {index}: {source}")]
    Iteration { index: u64, source: ModelError },
    #[error("iteration {index}: non-finite sample {value}")]
    NonFinite { index: u64, value: f64 },
    #[error("thread pool: {0}")]
    Pool(String),
}

impl From<DistributionError> for EngineError {
    fn from(e: DistributionError) -> Self {
        EngineError::Model(e.into())
    }
}

fn prepare(
    ve: &VirtualExperiment,
    data: &MeasurementData,
    typeb: &TypeBSpec,
    cfg: &EngineConfig,
) -> Result<(), EngineError> {
    cfg.validate()?;
    data.validate()?;
    let mut pilot = derive_substream(cfg.master_seed, PILOT_STREAM);
    let z = typeb.sample(&mut pilot)?;
    match check_affine(ve, &z, &default_probes(cfg.y0), DEFAULT_AFFINE_REL_TOL)? {
        AffinityCheck::Ok => Ok(()),
        AffinityCheck::Violation(violation) => Err(EngineError::NotAffine { z, violation }),
    }
}

/// Evaluate `draw(i)` for `i in 0..n`, in index order. On failure the error of
/// the lowest failing index is reported, whatever the scheduling.
fn run_indexed<F>(n: usize, workers: Option<usize>, draw: F) -> Result<Vec<f64>, EngineError>
where
    F: Fn(u64) -> Result<f64, ModelError> + Sync,
{
    let checked = |i: u64| -> Result<f64, EngineError> {
        let v = draw(i).map_err(|source| EngineError::Iteration { index: i, source })?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(EngineError::NonFinite { index: i, value: v })
        }
    };
    let job = || {
        let res: Result<Vec<f64>, EngineError> =
            (0..n as u64).into_par_iter().map(checked).collect();
        res.map_err(|_| {
            (0..n as u64)
                .into_par_iter()
                .filter_map(|i| checked(i).err().map(|e| (i, e)))
                .min_by_key(|(i, _)| *i)
                .map(|(_, e)| e)
                .expect("a failing iteration exists")
        })
    };
    match workers {
        None => job(),
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build()
            .map_err(|e| EngineError::Pool(e.to_string()))?
            .install(job),
    }
}

/// Monte Carlo propagation through the inverted measurement model.
pub fn run_jcgm101(
    ve: &VirtualExperiment,
    data: &MeasurementData,
    typeb: &TypeBSpec,
    cfg: &EngineConfig,
) -> Result<SampleSet, EngineError> {
    prepare(ve, data, typeb, cfg)?;
    let var_mean = data.variance_of_mean();
    let values = run_indexed(cfg.n, cfg.workers, |i| {
        let mut s = derive_substream(cfg.master_seed, i);
        let x = sample_gaussian(&mut s, data.mean, var_mean)?;
        let z = typeb.sample(&mut s)?;
        let parts = extract_affine(ve, &z, 0.0, 1.0)?;
        Ok(invert_measurement(x, parts))
    })?;
    Ok(SampleSet {
        n: values.len(),
        values,
        engine: EngineKind::Jcgm101,
        master_seed: cfg.master_seed,
        scenario_id: String::new(),
        y0: None,
    })
}

/// One corrected MC-VE draw at a given z. Consumes the noise draws from
/// `stream`.
fn mc_ve_draw(
    ve: &VirtualExperiment,
    data: &MeasurementData,
    z: &ZPoint,
    cfg: &EngineConfig,
    stream: &mut RandomStream,
) -> Result<f64, ModelError> {
    let y0 = cfg.y0;
    let h = ve.kernel().eval(y0, z)?;
    let m = data.count;
    let sim_mean = if cfg.literal_inner_loop {
        let mut sum = 0.0;
        for _ in 0..m {
            let eps = sample_gaussian(stream, 0.0, data.variance)?;
            sum += h + eps;
        }
        sum / m as f64
    } else {
        h + sample_gaussian(stream, 0.0, data.variance_of_mean())?
    };
    let parts = extract_affine(ve, z, 0.0, 1f64.max(y0.abs()))?;
    Ok((data.mean - sim_mean) / parts.delta1 + y0)
}

fn check_noise(ve: &VirtualExperiment, data: &MeasurementData) -> Result<(), EngineError> {
    if ve.noise_variance() != data.variance {
        return Err(EngineError::Config(format!(
            "VE noise variance {} differs from data variance {}",
            ve.noise_variance(),
            data.variance
        )));
    }
    Ok(())
}

/// Monte Carlo propagation through repeated runs of the virtual experiment.
pub fn run_mc_ve(
    ve: &VirtualExperiment,
    data: &MeasurementData,
    typeb: &TypeBSpec,
    cfg: &EngineConfig,
) -> Result<SampleSet, EngineError> {
    prepare(ve, data, typeb, cfg)?;
    check_noise(ve, data)?;
    let values = run_indexed(cfg.n, cfg.workers, |i| {
        let mut s = derive_substream(cfg.master_seed, i);
        let z = typeb.sample(&mut s)?;
        mc_ve_draw(ve, data, &z, cfg, &mut s)
    })?;
    Ok(SampleSet {
        n: values.len(),
        values,
        engine: EngineKind::McVe,
        master_seed: cfg.master_seed,
        scenario_id: String::new(),
        y0: Some(cfg.y0),
    })
}

/// The MC-VE inner path with z held fixed: substream `i` feeds only the noise
/// draws of iteration `i`.
pub fn run_mc_ve_given(
    ve: &VirtualExperiment,
    data: &MeasurementData,
    z: &ZPoint,
    cfg: &EngineConfig,
) -> Result<SampleSet, EngineError> {
    cfg.validate()?;
    data.validate()?;
    check_noise(ve, data)?;
    let values = run_indexed(cfg.n, cfg.workers, |i| {
        let mut s = derive_substream(cfg.master_seed, i);
        mc_ve_draw(ve, data, z, cfg, &mut s)
    })?;
    Ok(SampleSet {
        n: values.len(),
        values,
        engine: EngineKind::McVe,
        master_seed: cfg.master_seed,
        scenario_id: String::new(),
        y0: Some(cfg.y0),
    })
}

/// `k` draws from the conditional law of the measurand given `z`.
pub fn sample_conditional(
    z: &ZPoint,
    ve: &VirtualExperiment,
    data: &MeasurementData,
    k: usize,
    stream: &mut RandomStream,
) -> Result<SampleSet, EngineError> {
    data.validate()?;
    let (mean, variance) = conditional_law(z, ve, data)?;
    let values = (0..k)
        .map(|_| sample_gaussian(stream, mean, variance))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SampleSet {
        n: k,
        values,
        engine: EngineKind::Conditional,
        master_seed: stream.master_seed(),
        scenario_id: String::new(),
        y0: None,
    })
}

/// Mean and variance of `y | z`.
pub fn conditional_law(
    z: &ZPoint,
    ve: &VirtualExperiment,
    data: &MeasurementData,
) -> Result<(f64, f64), EngineError> {
    let parts = extract_affine(ve, z, 0.0, 1.0)?;
    let mean = invert_measurement(data.mean, parts);
    let variance = data.variance_of_mean() / (parts.delta1 * parts.delta1);
    Ok((mean, variance))
}
