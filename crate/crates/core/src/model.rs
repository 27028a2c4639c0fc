//! Virtual experiments and the affine-in-measurand model class.
//!
//! A virtual experiment (VE) here is a deterministic kernel `h(y, z)` plus
//! additive noise `ε ~ N(0, σ²)` that the engines apply. Models in scope satisfy
//!
//! ```text
//! h(y, z) = Δ₁(z)·y + Δ₂(z)
//! ```
//!
//! for arbitrary Δ₁, Δ₂ with Δ₁(z) ≠ 0. Both parts are recovered from two kernel
//! evaluations, so the VE can be treated as a black box. A model that is linear
//! in `y` with no `z` dependence in Δ₁ is the special case of constant Δ₁ and
//! needs no separate path.

use std::fmt;
use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{self, Bindings, Compiled, EvalError, Expr};
use crate::randkit::{Distribution, DistributionError, RandomStream};

/// Name the kernel uses for the measurand.
pub const MEASURAND: &str = "y";

/// Relative tolerance used by the default affinity check.
pub const DEFAULT_AFFINE_REL_TOL: f64 = 1e-9;

/// Relative threshold below which Δ₁ counts as zero.
pub const DELTA1_ZERO_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("near-singular model: |Δ₁| = {delta1:e} at z = {z}")]
    NearSingular { delta1: f64, z: ZPoint },
    #[error("invalid measurement data: {0}")]
    InvalidData(String),
    #[error("invalid Type B specification: {0}")]
    InvalidTypeB(String),
    #[error(transparent)]
    Distribution(#[from] DistributionError),
    #[error("invalid probes: {0}")]
    BadProbes(String),
}

/// Summary of the real observations: mean of `count` draws with known variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasurementData {
    pub mean: f64,
    pub count: u64,
    pub variance: f64,
}

impl MeasurementData {
    pub fn new(mean: f64, count: u64, variance: f64) -> Result<Self, ModelError> {
        let d = MeasurementData {
            mean,
            count,
            variance,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !self.mean.is_finite() {
            return Err(ModelError::InvalidData("mean is not finite".into()));
        }
        if self.count < 1 {
            return Err(ModelError::InvalidData("count must be at least 1".into()));
        }
        if !(self.variance > 0.0) || !self.variance.is_finite() {
            return Err(ModelError::InvalidData(format!(
                "variance must be positive and finite, got {}",
                self.variance
            )));
        }
        Ok(())
    }

    /// Variance of the mean, σ²/m.
    pub fn variance_of_mean(&self) -> f64 {
        self.variance / self.count as f64
    }
}

/// Values of the Type B quantities, in [`TypeBSpec`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct ZPoint {
    names: Arc<[String]>,
    values: Vec<f64>,
}

impl ZPoint {
    pub fn new(names: Arc<[String]>, values: Vec<f64>) -> Self {
        assert_eq!(
            names.len(),
            values.len(),
            "ZPoint names/values length mismatch"
        );
        ZPoint { names, values }
    }

    pub fn from_pairs(pairs: &[(&str, f64)]) -> Self {
        let names: Arc<[String]> = pairs.iter().map(|(n, _)| n.to_string()).collect();
        ZPoint::new(names, pairs.iter().map(|(_, v)| *v).collect())
    }

    pub fn empty() -> Self {
        ZPoint::from_pairs(&[])
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.values[i])
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn shares_names(&self, other: &Arc<[String]>) -> bool {
        Arc::ptr_eq(&self.names, other) || *self.names == **other
    }
}

impl Bindings for ZPoint {
    fn lookup(&self, name: &str) -> Option<f64> {
        self.get(name)
    }
}

impl fmt::Display for ZPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (i, (n, v)) in self.names.iter().zip(&self.values).enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{n}: {v}")?;
        }
        f.write_str("}")
    }
}

/// Ordered, uniquely named Type B quantities and their distributions.
#[derive(Debug, Clone, PartialEq)]
pub struct TypeBSpec {
    names: Arc<[String]>,
    dists: Vec<Distribution>,
}

impl TypeBSpec {
    pub fn new<S: Into<String>>(
        entries: impl IntoIterator<Item = (S, Distribution)>,
    ) -> Result<Self, ModelError> {
        let mut names = Vec::new();
        let mut dists = Vec::new();
        for (name, dist) in entries {
            let name = name.into();
            if !expr::is_identifier(&name) {
                return Err(ModelError::InvalidTypeB(format!(
                    "`{name}` is not a valid identifier"
                )));
            }
            if name == MEASURAND {
                return Err(ModelError::InvalidTypeB(format!(
                    "`{MEASURAND}` is reserved for the measurand"
                )));
            }
            if names.contains(&name) {
                return Err(ModelError::InvalidTypeB(format!("duplicate name `{name}`")));
            }
            dist.validate()?;
            names.push(name);
            dists.push(dist);
        }
        Ok(TypeBSpec {
            names: names.into(),
            dists,
        })
    }

    pub fn empty() -> Self {
        TypeBSpec {
            names: Arc::from(Vec::<String>::new()),
            dists: Vec::new(),
        }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.dists.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dists.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Distribution)> {
        self.names.iter().map(String::as_str).zip(&self.dists)
    }

    /// One draw of every component, in declaration order.
    pub fn sample(&self, stream: &mut RandomStream) -> Result<ZPoint, ModelError> {
        let values = self
            .dists
            .iter()
            .map(|d| d.sample(stream))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(ZPoint::new(self.names.clone(), values))
    }

    /// Component means; a convenient non-random pilot point.
    pub fn means(&self) -> ZPoint {
        ZPoint::new(
            self.names.clone(),
            self.dists.iter().map(Distribution::mean).collect(),
        )
    }
}

/// A deterministic forward kernel `h(y, z)`.
pub trait Kernel: Send + Sync {
    fn eval(&self, y: f64, z: &ZPoint) -> Result<f64, EvalError>;

    /// Expression text, when the kernel came from one.
    fn source(&self) -> Option<&str> {
        None
    }
}

/// Kernel compiled from an expression over `y` and Type B names.
pub struct ExprKernel {
    source: String,
    expr: Expr,
    compiled: OnceLock<(Arc<[String]>, Compiled)>,
}

impl ExprKernel {
    pub fn new(source: impl Into<String>, expr: Expr) -> Self {
        ExprKernel {
            source: source.into(),
            expr,
            compiled: OnceLock::new(),
        }
    }

    pub fn parse(source: &str) -> Result<Self, expr::ParseError> {
        Ok(ExprKernel::new(source, expr::parse(source)?))
    }

    pub fn expr(&self) -> &Expr {
        &self.expr
    }
}

struct WithMeasurand<'a> {
    y: f64,
    z: &'a ZPoint,
}

impl Bindings for WithMeasurand<'_> {
    fn lookup(&self, name: &str) -> Option<f64> {
        if name == MEASURAND {
            Some(self.y)
        } else {
            self.z.get(name)
        }
    }
}

impl Kernel for ExprKernel {
    fn eval(&self, y: f64, z: &ZPoint) -> Result<f64, EvalError> {
        // Compile once against the first name layout seen; other layouts fall
        // back to the tree walk.
        if self.compiled.get().is_none() {
            let mut slots: Vec<&str> = vec![MEASURAND];
            slots.extend(z.names().iter().map(String::as_str));
            if let Ok(c) = Compiled::new(&self.expr, &slots) {
                let _ = self.compiled.set((z.names.clone(), c));
            }
        }
        match self.compiled.get() {
            Some((names, c)) if z.shares_names(names) => {
                let zv = z.values();
                c.eval_by(|i| if i == 0 { y } else { zv[i - 1] })
            }
            _ => expr::evaluate(&self.expr, &WithMeasurand { y, z }),
        }
    }

    fn source(&self) -> Option<&str> {
        Some(&self.source)
    }
}

impl fmt::Debug for ExprKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_tuple("ExprKernel").field(&self.source).finish()
    }
}

/// Kernel backed by a caller-supplied closure.
pub struct FnKernel<F>(pub F);

impl<F> Kernel for FnKernel<F>
where
    F: Fn(f64, &ZPoint) -> f64 + Send + Sync,
{
    fn eval(&self, y: f64, z: &ZPoint) -> Result<f64, EvalError> {
        Ok((self.0)(y, z))
    }
}

/// Deterministic kernel plus additive Gaussian noise of variance
/// `noise_variance`. The engines draw the noise; the kernel never sees it.
#[derive(Clone)]
pub struct VirtualExperiment {
    kernel: Arc<dyn Kernel>,
    noise_variance: f64,
}

impl VirtualExperiment {
    pub fn new(kernel: Arc<dyn Kernel>, noise_variance: f64) -> Result<Self, ModelError> {
        if !(noise_variance >= 0.0) || !noise_variance.is_finite() {
            return Err(ModelError::InvalidData(format!(
                "noise variance must be non-negative and finite, got {noise_variance}"
            )));
        }
        Ok(VirtualExperiment {
            kernel,
            noise_variance,
        })
    }

    pub fn from_fn<F>(f: F, noise_variance: f64) -> Result<Self, ModelError>
    where
        F: Fn(f64, &ZPoint) -> f64 + Send + Sync + 'static,
    {
        VirtualExperiment::new(Arc::new(FnKernel(f)), noise_variance)
    }

    pub fn from_expr_source(source: &str, noise_variance: f64) -> Result<Self, ExprKernelError> {
        let k = ExprKernel::parse(source)?;
        Ok(VirtualExperiment::new(Arc::new(k), noise_variance)?)
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }

    pub fn kernel(&self) -> &dyn Kernel {
        &*self.kernel
    }

    pub fn kernel_source(&self) -> Option<&str> {
        self.kernel.source()
    }
}

impl fmt::Debug for VirtualExperiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("VirtualExperiment")
            .field("kernel", &self.kernel.source().unwrap_or("<fn>"))
            .field("noise_variance", &self.noise_variance)
            .finish()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprKernelError {
    #[error(transparent)]
    Parse(#[from] expr::ParseError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Parameterised law of the internal fluctuation `w` of a stochastic VE.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseLaw {
    pub family: String,
    pub params: Vec<f64>,
}

type StochasticKernel = Arc<dyn Fn(f64, &ZPoint, f64) -> f64 + Send + Sync>;

/// General VE `x = G(y, z, w)`, `w ~ F_v`. Declared for modelling completeness;
/// no engine evaluates it.
#[derive(Clone)]
pub struct StochasticVE {
    kernel: StochasticKernel,
    pub noise_law: NoiseLaw,
}

impl StochasticVE {
    pub fn new<F>(kernel: F, noise_law: NoiseLaw) -> Self
    where
        F: Fn(f64, &ZPoint, f64) -> f64 + Send + Sync + 'static,
    {
        StochasticVE {
            kernel: Arc::new(kernel),
            noise_law,
        }
    }

    pub fn eval(&self, y: f64, z: &ZPoint, w: f64) -> f64 {
        (self.kernel)(y, z, w)
    }

    /// The forward model: `G(y, z, 0)`.
    pub fn forward(&self, y: f64, z: &ZPoint) -> f64 {
        self.eval(y, z, 0.0)
    }
}

/// Δ₁(z) and Δ₂(z) at one z.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AffineParts {
    pub delta1: f64,
    pub delta2: f64,
}

/// Noiseless kernel value `h(y, z)`.
pub fn eval_forward(ve: &VirtualExperiment, y: f64, z: &ZPoint) -> Result<f64, ModelError> {
    Ok(ve.kernel.eval(y, z)?)
}

/// Two-point difference quotient. Exact (up to rounding) on the affine class.
pub fn extract_affine(
    ve: &VirtualExperiment,
    z: &ZPoint,
    probe_a: f64,
    probe_b: f64,
) -> Result<AffineParts, ModelError> {
    if probe_a == probe_b || !probe_a.is_finite() || !probe_b.is_finite() {
        return Err(ModelError::BadProbes(format!(
            "need two distinct finite probes, got {probe_a} and {probe_b}"
        )));
    }
    let ka = ve.kernel.eval(probe_a, z)?;
    let kb = ve.kernel.eval(probe_b, z)?;
    let delta1 = (kb - ka) / (probe_b - probe_a);
    let delta2 = ka - probe_a * delta1;
    let scale = 1f64.max(delta2.abs()).max(ka.abs());
    if !(delta1.abs() >= DELTA1_ZERO_TOL * scale) {
        return Err(ModelError::NearSingular {
            delta1,
            z: z.clone(),
        });
    }
    Ok(AffineParts { delta1, delta2 })
}

/// `y = (x − Δ₂) / Δ₁`.
pub fn invert_measurement(x: f64, parts: AffineParts) -> f64 {
    (x - parts.delta2) / parts.delta1
}

/// Probes `{0, s, 2s}` with `s = max(1, |y0|)`.
pub fn default_probes(y0: f64) -> [f64; 3] {
    let s = 1f64.max(y0.abs());
    [0.0, s, 2.0 * s]
}

/// Worst departure from the line through the first two probes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AffinityViolation {
    pub probe: f64,
    pub value: f64,
    pub line_value: f64,
    pub residual: f64,
    pub tolerance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AffinityCheck {
    Ok,
    Violation(AffinityViolation),
}

impl AffinityCheck {
    pub fn is_ok(&self) -> bool {
        matches!(self, AffinityCheck::Ok)
    }
}

pub fn check_affine(
    ve: &VirtualExperiment,
    z: &ZPoint,
    probes: &[f64],
    rel_tol: f64,
) -> Result<AffinityCheck, ModelError> {
    if probes.len() < 3 {
        return Err(ModelError::BadProbes("need at least 3 probes".into()));
    }
    for (i, p) in probes.iter().enumerate() {
        if !p.is_finite() {
            return Err(ModelError::BadProbes(format!("probe {p} is not finite")));
        }
        if probes[..i].contains(p) {
            return Err(ModelError::BadProbes(format!("probe {p} is repeated")));
        }
    }
    let values = probes
        .iter()
        .map(|&p| ve.kernel.eval(p, z))
        .collect::<Result<Vec<_>, _>>()?;
    let (p0, p1) = (probes[0], probes[1]);
    let (v0, v1) = (values[0], values[1]);
    let slope = (v1 - v0) / (p1 - p0);
    let scale = values.iter().fold(1f64, |m, v| m.max(v.abs()));
    let tolerance = rel_tol * scale;

    let mut worst: Option<AffinityViolation> = None;
    for (&probe, &value) in probes.iter().zip(&values).skip(2) {
        let line_value = v0 + slope * (probe - p0);
        let residual = value - line_value;
        if !(residual.abs() <= tolerance) && worst.is_none_or(|w| residual.abs() > w.residual.abs())
        {
            worst = Some(AffinityViolation {
                probe,
                value,
                line_value,
                residual,
                tolerance,
            });
        }
    }
    Ok(worst.map_or(AffinityCheck::Ok, AffinityCheck::Violation))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const MASS: &str = "(y + 100000)/(1 + (rho_a - 1.2)*(1/rho_W - 1/rho_R)) - m_Rc";

    fn generic() -> VirtualExperiment {
        VirtualExperiment::from_expr_source("(1+z)*y", 1.0).unwrap()
    }

    fn mass() -> VirtualExperiment {
        VirtualExperiment::from_expr_source(MASS, 0.001).unwrap()
    }

    fn mass_z(m_rc: f64, rho_a: f64, rho_w: f64, rho_r: f64) -> ZPoint {
        ZPoint::from_pairs(&[
            ("m_Rc", m_rc),
            ("rho_a", rho_a),
            ("rho_W", rho_w),
            ("rho_R", rho_r),
        ])
    }

    #[test]
    fn forward_values() {
        let z = ZPoint::from_pairs(&[("z", 5.0)]);
        assert_eq!(eval_forward(&generic(), 2.0, &z).unwrap(), 12.0);
        let mz = mass_z(1e5, 1.2, 8000.0, 8000.0);
        assert_eq!(eval_forward(&mass(), 0.0, &mz).unwrap(), 0.0);
        let a = eval_forward(&mass(), 0.3, &mass_z(1e5, 1.15, 7100.0, 8020.0)).unwrap();
        let b = eval_forward(&mass(), 0.3, &mass_z(1e5, 1.15, 7100.0, 8020.0)).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn forward_missing_binding() {
        let z = ZPoint::from_pairs(&[("w", 5.0)]);
        assert!(matches!(
            eval_forward(&generic(), 2.0, &z),
            Err(ModelError::Eval(EvalError::Unbound(n))) if n == "z"
        ));
    }

    #[test]
    fn name_layouts_do_not_leak_between_calls() {
        let ve = VirtualExperiment::from_expr_source("a - b*y", 1.0).unwrap();
        let z1 = ZPoint::from_pairs(&[("a", 10.0), ("b", 2.0)]);
        let z2 = ZPoint::from_pairs(&[("b", 2.0), ("a", 10.0)]);
        assert_eq!(eval_forward(&ve, 1.0, &z1).unwrap(), 8.0);
        assert_eq!(eval_forward(&ve, 1.0, &z2).unwrap(), 8.0);
    }

    #[test]
    fn affine_parts_generic() {
        let z = ZPoint::from_pairs(&[("z", 5.0)]);
        let p = extract_affine(&generic(), &z, 0.0, 1.0).unwrap();
        assert_eq!(
            p,
            AffineParts {
                delta1: 6.0,
                delta2: 0.0
            }
        );
    }

    #[test]
    fn affine_parts_mass_at_reference_air_density() {
        let p = extract_affine(&mass(), &mass_z(1e5, 1.2, 7300.0, 8040.0), 0.0, 1.0).unwrap();
        assert_eq!(p.delta1, 1.0);
        assert_eq!(p.delta2, 0.0);
    }

    #[test]
    fn affine_parts_without_z() {
        let ve = VirtualExperiment::from_fn(|y, _| 2.0 * y + 3.0, 1.0).unwrap();
        for (a, b) in [(0.0, 1.0), (-7.0, 13.0), (2.5, -4.0)] {
            let p = extract_affine(&ve, &ZPoint::empty(), a, b).unwrap();
            assert_eq!(
                p,
                AffineParts {
                    delta1: 2.0,
                    delta2: 3.0
                }
            );
        }
    }

    #[test]
    fn singular_model_is_rejected() {
        let ve = VirtualExperiment::from_expr_source("z + 0*y", 1.0).unwrap();
        let z = ZPoint::from_pairs(&[("z", 4.0)]);
        match extract_affine(&ve, &z, 0.0, 1.0) {
            Err(ModelError::NearSingular { delta1, z: at }) => {
                assert_eq!(delta1, 0.0);
                assert_eq!(at.get("z"), Some(4.0));
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            extract_affine(&generic(), &ZPoint::from_pairs(&[("z", 1.0)]), 1.0, 1.0),
            Err(ModelError::BadProbes(_))
        ));
    }

    #[test]
    fn inversion_examples() {
        let p = AffineParts {
            delta1: 6.0,
            delta2: 0.0,
        };
        assert!((invert_measurement(50.0, p) - 50.0 / 6.0).abs() < 1e-15);
        let q = AffineParts {
            delta1: -3.7,
            delta2: 2.25,
        };
        assert_eq!(invert_measurement(2.25, q), 0.0);
        let parts = extract_affine(&mass(), &mass_z(1e5, 1.2, 8000.0, 7990.0), 0.0, 1.0).unwrap();
        assert_eq!(invert_measurement(1.2345, parts), 1.2345);
    }

    #[test]
    fn check_affine_examples() {
        let z = ZPoint::from_pairs(&[("z", 5.0)]);
        assert!(check_affine(&generic(), &z, &[0.0, 1.0, 2.0], 1e-9)
            .unwrap()
            .is_ok());

        let sq = VirtualExperiment::from_expr_source("y*y", 1.0).unwrap();
        match check_affine(&sq, &z, &[0.0, 1.0, 2.0], 1e-9).unwrap() {
            AffinityCheck::Violation(v) => {
                assert_eq!(v.probe, 2.0);
                assert_eq!(v.residual, 2.0);
                assert_eq!(v.line_value, 2.0);
            }
            AffinityCheck::Ok => panic!("y*y accepted"),
        }

        let quad_z = VirtualExperiment::from_expr_source("(1+z)*y + z*z", 1.0).unwrap();
        assert!(check_affine(&quad_z, &z, &[-1.0, 0.0, 3.0], 1e-9)
            .unwrap()
            .is_ok());
    }

    #[test]
    fn check_affine_rejects_nonlinear_shapes() {
        let z = ZPoint::empty();
        let abs = VirtualExperiment::from_fn(|y, _| y.abs(), 1.0).unwrap();
        let exp = VirtualExperiment::from_fn(|y, _| y.exp(), 1.0).unwrap();
        let probes = [-1.0, 0.0, 1.0, 2.0];
        assert!(!check_affine(&abs, &z, &probes, 1e-9).unwrap().is_ok());
        assert!(!check_affine(&exp, &z, &probes, 1e-9).unwrap().is_ok());
    }

    #[test]
    fn check_affine_probe_preconditions() {
        let z = ZPoint::from_pairs(&[("z", 5.0)]);
        assert!(check_affine(&generic(), &z, &[0.0, 1.0], 1e-9).is_err());
        assert!(check_affine(&generic(), &z, &[0.0, 1.0, 1.0], 1e-9).is_err());
    }

    #[test]
    fn default_probes_scale_with_y0() {
        assert_eq!(default_probes(0.3), [0.0, 1.0, 2.0]);
        assert_eq!(default_probes(-100.0), [0.0, 100.0, 200.0]);
    }

    #[test]
    fn mass_kernel_passes_default_check() {
        for rho_a in [1.1, 1.2, 1.29] {
            let z = mass_z(1e5 + 0.03, rho_a, 7001.0, 8049.0);
            for y0 in [1.0, -100.0, 0.0, 1e3] {
                let res = check_affine(&mass(), &z, &default_probes(y0), DEFAULT_AFFINE_REL_TOL);
                assert!(res.unwrap().is_ok(), "rho_a={rho_a} y0={y0}");
            }
        }
    }

    #[test]
    fn stochastic_ve_recovers_forward_model() {
        let sve = StochasticVE::new(
            |y, z: &ZPoint, w| (1.0 + z.get("z").unwrap()) * y * (1.0 + w),
            NoiseLaw {
                family: "gaussian".into(),
                params: vec![0.0, 0.01],
            },
        );
        let z = ZPoint::from_pairs(&[("z", 5.0)]);
        assert_eq!(
            sve.forward(2.0, &z),
            eval_forward(&generic(), 2.0, &z).unwrap()
        );
    }

    #[test]
    fn typeb_validation() {
        let u = Distribution::uniform(0.0, 1.0).unwrap();
        assert!(TypeBSpec::new([("a", u), ("a", u)]).is_err());
        assert!(TypeBSpec::new([("1a", u)]).is_err());
        assert!(TypeBSpec::new([("y", u)]).is_err());
        assert!(TypeBSpec::new([(
            "a",
            Distribution::Uniform {
                lower: 1.0,
                upper: 0.0
            }
        )])
        .is_err());
        let spec = TypeBSpec::new([("a", u), ("b", u)]).unwrap();
        assert_eq!(spec.names(), ["a", "b"]);
        assert!(MeasurementData::new(0.0, 0, 1.0).is_err());
        assert!(MeasurementData::new(0.0, 1, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn invert_round_trip(
            a0 in 0.5f64..5.0, a1 in -2.0f64..2.0, b0 in -10.0f64..10.0, b1 in -3.0f64..3.0,
            y in -100.0f64..100.0, zv in -1.0f64..1.0,
        ) {
            let ve = VirtualExperiment::from_fn(
                move |y, z: &ZPoint| {
                    let z = z.get("z").unwrap();
                    (a0 + a1 * z * z) * y + b0 + b1 * z * z * z
                },
                1.0,
            ).unwrap();
            let z = ZPoint::from_pairs(&[("z", zv)]);
            let x = eval_forward(&ve, y, &z).unwrap();
            let back = invert_measurement(x, extract_affine(&ve, &z, 0.0, 1.0).unwrap());
            prop_assert!((back - y).abs() <= 1e-10 * y.abs().max(1.0));
        }

        #[test]
        fn affine_parts_are_probe_invariant(
            zv in 5.0f64..10.0, c in -50.0f64..50.0,
        ) {
            let ve = VirtualExperiment::from_fn(
                move |y, z: &ZPoint| {
                    let z = z.get("z").unwrap();
                    (1.0 + z) * y + c / z
                },
                1.0,
            ).unwrap();
            let z = ZPoint::from_pairs(&[("z", zv)]);
            let p = extract_affine(&ve, &z, 0.0, 1.0).unwrap();
            let q = extract_affine(&ve, &z, -7.0, 13.0).unwrap();
            prop_assert!((p.delta1 - q.delta1).abs() <= 1e-9 * p.delta1.abs());
            prop_assert!((p.delta2 - q.delta2).abs() <= 1e-9 * p.delta2.abs().max(1.0));
        }

        #[test]
        fn affine_kernels_always_accepted(
            a in -10.0f64..10.0, b in -1e3f64..1e3, zv in -5.0f64..5.0,
            p0 in -50.0f64..50.0, step1 in 0.1f64..20.0, step2 in 0.1f64..20.0,
        ) {
            prop_assume!(a.abs() > 1e-3);
            let ve = VirtualExperiment::from_fn(
                move |y, z: &ZPoint| {
                    let z = z.get("z").unwrap();
                    a * (1.0 + z * z) * y + b * z
                },
                1.0,
            ).unwrap();
            let z = ZPoint::from_pairs(&[("z", zv)]);
            let probes = [p0, p0 + step1, p0 + step1 + step2];
            prop_assert!(check_affine(&ve, &z, &probes, 1e-9).unwrap().is_ok());
        }
    }
}
