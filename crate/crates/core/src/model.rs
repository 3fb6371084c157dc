//! Additive-noise state-space models and their grid discretization.
//!
//! The continuous model is
//!
//! ```text
//! X_{n+1} = X_n + b(X_n) + xi_{n+1}
//! Y_n     = h(X_n) + V_n
//! ```
//!
//! with IID noises of densities `q_xi` and `q_v`. [`discretize`] turns a
//! [`ModelSpec`] into a [`DiscreteModel`]: a row-stochastic transition matrix
//! on a [`GridSpec`] plus a likelihood `(node, y) -> q_v(y - h(x_node))`.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::measure::{normalize, tv_weights, GridMeasure, GridSpec};

/// Largest row mass that [`discretize`] lets escape the grid.
pub const DEFAULT_TRUNCATION_TOLERANCE: f64 = 1e-3;

/// Row sums must equal one within this.
pub const ROW_SUM_TOLERANCE: f64 = 1e-10;

/// Names accepted by [`preset`].
pub const PRESETS: &[&str] = &[
    "laplace-contractive",
    "laplace-linear",
    "laplace-random-walk",
    "polynomial-observation",
];

/// Shared real function `R -> R`.
#[derive(Clone)]
pub struct RealFn(Arc<dyn Fn(f64) -> f64 + Send + Sync>);

impl RealFn {
    pub fn new(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self(Arc::new(f))
    }

    pub fn zero() -> Self {
        Self::new(|_| 0.0)
    }

    pub fn eval(&self, x: f64) -> f64 {
        (self.0)(x)
    }
}

impl fmt::Debug for RealFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("RealFn(..)")
    }
}

/// Uniform draw from the open interval (0, 1).
fn open_unit<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    ((rng.random::<u64>() >> 11) as f64 + 0.5) / (1u64 << 53) as f64
}

/// Discrete inverse CDF: index `i` with probability `weights[i] / sum`.
fn sample_index<R: Rng + ?Sized>(rng: &mut R, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let target = open_unit(rng) * total;
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            last = i;
            acc += w;
            if target < acc {
                return i;
            }
        }
    }
    last
}

/// Piecewise-linear density on a grid, zero outside it.
#[derive(Debug, Clone, PartialEq)]
pub struct TabulatedDensity {
    grid: GridSpec,
    values: Vec<f64>,
    // 1 / (trapezoid integral of values)
    scale: f64,
}

impl TabulatedDensity {
    pub fn new(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.points() {
            return Err(Error::InvalidDensity(format!(
                "{} values for {} grid points",
                values.len(),
                grid.points()
            )));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidDensity("values must be finite and nonnegative".into()));
        }
        let h = grid.spacing();
        let integral: f64 = values.windows(2).map(|w| 0.5 * h * (w[0] + w[1])).sum();
        if integral <= 0.0 {
            return Err(Error::InvalidDensity("tabulated density has no mass".into()));
        }
        Ok(Self { grid, values, scale: 1.0 / integral })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn pdf(&self, x: f64) -> f64 {
        let g = &self.grid;
        if !(x >= g.lower() && x <= g.upper()) {
            return 0.0;
        }
        let t = (x - g.lower()) / g.spacing();
        let k = (t.floor() as usize).min(g.points() - 2);
        let frac = t - k as f64;
        self.scale * (self.values[k] * (1.0 - frac) + self.values[k + 1] * frac)
    }

    fn cdf(&self, x: f64) -> f64 {
        let g = &self.grid;
        if x <= g.lower() {
            return 0.0;
        }
        if x >= g.upper() {
            return 1.0;
        }
        let h = g.spacing();
        let t = (x - g.lower()) / h;
        let k = (t.floor() as usize).min(g.points() - 2);
        let full: f64 = self.values[..=k].windows(2).map(|w| 0.5 * h * (w[0] + w[1])).sum();
        let d = x - g.node(k);
        let slope = (self.values[k + 1] - self.values[k]) / h;
        let partial = self.values[k] * d + 0.5 * slope * d * d;
        (self.scale * (full + partial)).clamp(0.0, 1.0)
    }

    fn mean(&self) -> f64 {
        let h = self.grid.spacing();
        (0..self.values.len() - 1)
            .map(|k| {
                let a = self.grid.node(k);
                let b = a + h;
                let (fa, fb) = (self.values[k], self.values[k + 1]);
                h / 6.0 * (fa * (2.0 * a + b) + fb * (a + 2.0 * b))
            })
            .sum::<f64>()
            * self.scale
    }
}

/// Noise density on the real line.
#[derive(Debug, Clone, PartialEq)]
pub enum NoiseDensity {
    /// `exp(-|x| / scale) / (2 scale)`.
    Laplace { scale: f64 },
    /// `c (1 + max(|x|, M))^{-m}`: flat core of radius `M`, polynomial tails.
    PolynomialTail { exponent: f64, core_radius: f64 },
    /// Linear interpolation of node values; sampled by inverse CDF on the nodes.
    Tabulated(TabulatedDensity),
}

impl NoiseDensity {
    pub fn laplace(scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidDensity(format!("Laplace scale {scale} must be positive")));
        }
        Ok(Self::Laplace { scale })
    }

    pub fn polynomial_tail(exponent: f64, core_radius: f64) -> Result<Self> {
        if !(exponent > 1.0 && exponent.is_finite()) {
            return Err(Error::InvalidDensity(format!("tail exponent {exponent} must exceed 1")));
        }
        if !(core_radius >= 0.0 && core_radius.is_finite()) {
            return Err(Error::InvalidDensity(format!(
                "core radius {core_radius} must be nonnegative"
            )));
        }
        Ok(Self::PolynomialTail { exponent, core_radius })
    }

    pub fn tabulated(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        TabulatedDensity::new(grid, values).map(Self::Tabulated)
    }

    fn poly_constant(m: f64, core: f64) -> f64 {
        let half = core * (1.0 + core).powf(-m) + (1.0 + core).powf(1.0 - m) / (m - 1.0);
        0.5 / half
    }

    pub fn pdf(&self, x: f64) -> f64 {
        match self {
            Self::Laplace { scale } => (-x.abs() / scale).exp() / (2.0 * scale),
            Self::PolynomialTail { exponent, core_radius } => {
                Self::poly_constant(*exponent, *core_radius)
                    * (1.0 + x.abs().max(*core_radius)).powf(-exponent)
            }
            Self::Tabulated(t) => t.pdf(x),
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match self {
            Self::Laplace { scale } => {
                if x < 0.0 {
                    0.5 * (x / scale).exp()
                } else {
                    1.0 - 0.5 * (-x / scale).exp()
                }
            }
            Self::PolynomialTail { exponent: m, core_radius: core } => {
                let c = Self::poly_constant(*m, *core);
                let t = x.abs();
                let half = if t <= *core {
                    c * t * (1.0 + core).powf(-m)
                } else {
                    c * core * (1.0 + core).powf(-m)
                        + c * ((1.0 + core).powf(1.0 - m) - (1.0 + t).powf(1.0 - m)) / (m - 1.0)
                };
                if x < 0.0 {
                    0.5 - half
                } else {
                    0.5 + half
                }
            }
            Self::Tabulated(t) => t.cdf(x),
        }
    }

    /// Mean of the noise; `None` when it does not exist.
    pub fn mean(&self) -> Option<f64> {
        match self {
            Self::Laplace { .. } => Some(0.0),
            Self::PolynomialTail { exponent, .. } => (*exponent > 2.0).then_some(0.0),
            Self::Tabulated(t) => Some(t.mean()),
        }
    }

    /// Supremum of the `eps` for which `E exp(eps |xi|)` is finite.
    /// `None` when no exponential moment exists.
    pub fn exp_moment_limit(&self) -> Option<f64> {
        match self {
            Self::Laplace { scale } => Some(1.0 / scale),
            Self::PolynomialTail { .. } => None,
            Self::Tabulated(_) => Some(f64::INFINITY),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Self::Laplace { scale } => {
                let u = open_unit(rng);
                if u < 0.5 {
                    scale * (2.0 * u).ln()
                } else {
                    -scale * (2.0 * (1.0 - u)).ln()
                }
            }
            Self::PolynomialTail { exponent: m, core_radius: core } => {
                let u = open_unit(rng);
                let v = (u - 0.5).abs();
                let c = Self::poly_constant(*m, *core);
                let core_mass = c * core * (1.0 + core).powf(-m);
                let t = if v <= core_mass {
                    v / (c * (1.0 + core).powf(-m))
                } else {
                    let tail = (1.0 + core).powf(1.0 - m) - (v - core_mass) * (m - 1.0) / c;
                    tail.powf(1.0 / (1.0 - m)) - 1.0
                };
                if u < 0.5 {
                    -t
                } else {
                    t
                }
            }
            Self::Tabulated(t) => t.grid.node(sample_index(rng, &t.values)),
        }
    }
}

/// Law of `X_0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitialLaw {
    PointMass(f64),
    Uniform { lower: f64, upper: f64 },
    Laplace { center: f64, scale: f64 },
}

impl Default for InitialLaw {
    fn default() -> Self {
        Self::PointMass(0.0)
    }
}

impl InitialLaw {
    /// Grid version of the law.
    pub fn to_measure(&self, grid: GridSpec) -> Result<GridMeasure> {
        match *self {
            Self::PointMass(x) => Ok(GridMeasure::point_mass(grid, x)),
            Self::Uniform { lower, upper } => GridMeasure::uniform_on(grid, lower, upper),
            Self::Laplace { center, scale } => {
                GridMeasure::from_density(grid, |x| (-(x - center).abs() / scale).exp())
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Self::PointMass(x) => x,
            Self::Uniform { lower, upper } => lower + (upper - lower) * open_unit(rng),
            Self::Laplace { center, scale } => center + NoiseDensity::Laplace { scale }.sample(rng),
        }
    }
}

impl fmt::Display for InitialLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::PointMass(x) => write!(f, "point:{x}"),
            Self::Uniform { lower, upper } => write!(f, "uniform:{lower}:{upper}"),
            Self::Laplace { center, scale } => write!(f, "laplace:{center}:{scale}"),
        }
    }
}

/// Parses `point:X`, `uniform:LO:HI` or `laplace:CENTER:SCALE`.
impl FromStr for InitialLaw {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("unrecognized initial law `{s}`"));
        let mut parts = s.split(':');
        let kind = parts.next().ok_or_else(bad)?;
        let nums: Vec<f64> = parts
            .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        if nums.iter().any(|v| !v.is_finite()) {
            return Err(bad());
        }
        match (kind.trim(), nums.as_slice()) {
            ("point", [x]) => Ok(Self::PointMass(*x)),
            ("uniform", [lo, hi]) if lo <= hi => Ok(Self::Uniform { lower: *lo, upper: *hi }),
            ("laplace", [c, s]) if *s > 0.0 => Ok(Self::Laplace { center: *c, scale: *s }),
            _ => Err(bad()),
        }
    }
}

/// Continuous model: drift `b`, observation map `h`, and the two noise densities.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub drift: RealFn,
    pub observation: RealFn,
    pub signal_noise: NoiseDensity,
    pub observation_noise: NoiseDensity,
    pub initial: InitialLaw,
}

impl ModelSpec {
    pub fn new(
        drift: RealFn,
        observation: RealFn,
        signal_noise: NoiseDensity,
        observation_noise: NoiseDensity,
    ) -> Self {
        Self {
            drift,
            observation,
            signal_noise,
            observation_noise,
            initial: InitialLaw::default(),
        }
    }

    pub fn with_initial(mut self, initial: InitialLaw) -> Self {
        self.initial = initial;
        self
    }
}

/// Named model presets. `observation_amplitude` is the bound `|h| <= amplitude`
/// of the observation map `h(x) = amplitude * tanh(x)`.
pub fn preset(name: &str, observation_amplitude: f64) -> Result<ModelSpec> {
    if !(observation_amplitude >= 0.0 && observation_amplitude.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "observation amplitude {observation_amplitude} must be nonnegative"
        )));
    }
    let a = observation_amplitude;
    let h = RealFn::new(move |x: f64| a * x.tanh());
    let saturating = RealFn::new(|x: f64| -0.5 * x.signum() * x.abs().min(2.0));
    let laplace = NoiseDensity::Laplace { scale: 1.0 };
    let spec = match name {
        "laplace-contractive" => ModelSpec::new(saturating, h, laplace.clone(), laplace),
        "laplace-linear" => {
            ModelSpec::new(RealFn::new(|x| -0.5 * x), h, laplace.clone(), laplace)
        }
        "laplace-random-walk" => ModelSpec::new(RealFn::zero(), h, laplace.clone(), laplace),
        "polynomial-observation" => ModelSpec::new(
            saturating,
            h,
            laplace,
            NoiseDensity::PolynomialTail { exponent: 3.0, core_radius: 1.0 },
        ),
        other => {
            return Err(Error::InvalidArgument(format!(
                "unknown preset `{other}` (known: {})",
                PRESETS.join(", ")
            )))
        }
    };
    Ok(spec)
}

/// A model perturbation: additive deltas for `b` and `h` plus optional noise
/// replacements.
#[derive(Debug, Clone)]
pub struct PerturbationSpec {
    pub drift_delta: RealFn,
    pub observation_delta: RealFn,
    /// Radius outside of which the deltas vanish.
    pub radius: f64,
    pub signal_noise: Option<NoiseDensity>,
    pub observation_noise: Option<NoiseDensity>,
}

impl PerturbationSpec {
    pub fn none() -> Self {
        Self {
            drift_delta: RealFn::zero(),
            observation_delta: RealFn::zero(),
            radius: 0.0,
            signal_noise: None,
            observation_noise: None,
        }
    }

    /// Constant shifts of `b` and `h` on `|x| <= radius`, nothing outside.
    pub fn local(drift_shift: f64, observation_shift: f64, radius: f64) -> Self {
        let inside = move |x: f64| x.abs() <= radius;
        Self {
            drift_delta: RealFn::new(move |x| if inside(x) { drift_shift } else { 0.0 }),
            observation_delta: RealFn::new(move |x| if inside(x) { observation_shift } else { 0.0 }),
            radius,
            signal_noise: None,
            observation_noise: None,
        }
    }
}

/// `b + delta_b`, `h + delta_h`, and the replaced noises. `spec` is untouched.
pub fn apply_perturbation(spec: &ModelSpec, pert: &PerturbationSpec) -> ModelSpec {
    let (b, db) = (spec.drift.clone(), pert.drift_delta.clone());
    let (h, dh) = (spec.observation.clone(), pert.observation_delta.clone());
    ModelSpec {
        drift: RealFn::new(move |x| b.eval(x) + db.eval(x)),
        observation: RealFn::new(move |x| h.eval(x) + dh.eval(x)),
        signal_noise: pert.signal_noise.clone().unwrap_or_else(|| spec.signal_noise.clone()),
        observation_noise: pert
            .observation_noise
            .clone()
            .unwrap_or_else(|| spec.observation_noise.clone()),
        initial: spec.initial,
    }
}

/// Observation density on the grid.
#[derive(Clone)]
pub enum Likelihood {
    /// `noise.pdf(y - offsets[i])`.
    Additive { offsets: Vec<f64>, noise: NoiseDensity },
    /// Arbitrary `(node, y) -> density`.
    Custom(Arc<dyn Fn(usize, f64) -> f64 + Send + Sync>),
}

impl fmt::Debug for Likelihood {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Additive { offsets, noise } => f
                .debug_struct("Additive")
                .field("nodes", &offsets.len())
                .field("noise", noise)
                .finish(),
            Self::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

impl Likelihood {
    pub fn custom(f: impl Fn(usize, f64) -> f64 + Send + Sync + 'static) -> Self {
        Self::Custom(Arc::new(f))
    }

    pub fn eval(&self, i: usize, y: f64) -> f64 {
        match self {
            Self::Additive { offsets, noise } => noise.pdf(y - offsets[i]),
            Self::Custom(f) => f(i, y),
        }
    }

    /// Observation-map values at the nodes, when the likelihood is additive.
    pub fn offsets(&self) -> Option<&[f64]> {
        match self {
            Self::Additive { offsets, .. } => Some(offsets),
            Self::Custom(_) => None,
        }
    }
}

/// Finite-state version of a model: transition matrix and likelihood on a grid.
#[derive(Debug, Clone)]
pub struct DiscreteModel {
    grid: GridSpec,
    // row-major, transition[i * n + j] is the mass moved from node i to node j
    transition: Vec<f64>,
    likelihood: Likelihood,
    truncation: Vec<f64>,
}

impl DiscreteModel {
    /// Builds a model from explicit rows. Each row must be nonnegative and sum
    /// to one within [`ROW_SUM_TOLERANCE`].
    pub fn new(grid: GridSpec, rows: Vec<Vec<f64>>, likelihood: Likelihood) -> Result<Self> {
        let n = grid.points();
        if rows.len() != n || rows.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidArgument(format!("transition must be {n} x {n}")));
        }
        let transition: Vec<f64> = rows.into_iter().flatten().collect();
        Self::from_flat(grid, transition, likelihood, vec![0.0; n])
    }

    fn from_flat(
        grid: GridSpec,
        transition: Vec<f64>,
        likelihood: Likelihood,
        truncation: Vec<f64>,
    ) -> Result<Self> {
        let n = grid.points();
        for (i, row) in transition.chunks(n).enumerate() {
            if row.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
                return Err(Error::InvalidArgument(format!("row {i} has invalid entries")));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(Error::InvalidArgument(format!("row {i} sums to {s}")));
            }
        }
        if let Likelihood::Additive { offsets, .. } = &likelihood {
            if offsets.len() != n {
                return Err(Error::InvalidArgument("one observation offset per node".into()));
            }
        }
        Ok(Self { grid, transition, likelihood, truncation })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn states(&self) -> usize {
        self.grid.points()
    }

    pub fn transition(&self, i: usize, j: usize) -> f64 {
        self.transition[i * self.states() + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.states();
        &self.transition[i * n..(i + 1) * n]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.transition.chunks_exact(self.states())
    }

    pub fn likelihood(&self, i: usize, y: f64) -> f64 {
        self.likelihood.eval(i, y)
    }

    pub fn likelihood_model(&self) -> &Likelihood {
        &self.likelihood
    }

    /// Fills `out[j] = likelihood(j, y)`.
    pub fn likelihood_vector(&self, y: f64, out: &mut [f64]) {
        match &self.likelihood {
            Likelihood::Additive { offsets, noise } => {
                for (o, h) in out.iter_mut().zip(offsets) {
                    *o = noise.pdf(y - h);
                }
            }
            Likelihood::Custom(f) => {
                for (j, o) in out.iter_mut().enumerate() {
                    *o = f(j, y);
                }
            }
        }
    }

    /// Mass each row lost outside the grid before renormalization.
    pub fn truncation(&self) -> &[f64] {
        &self.truncation
    }

    /// Measure pushed one step through the transition matrix.
    pub fn predict(&self, mu: &GridMeasure) -> Result<GridMeasure> {
        if mu.grid() != &self.grid {
            return Err(Error::GridMismatch);
        }
        let mut out = vec![0.0; self.states()];
        self.predict_into(mu.weights(), &mut out);
        normalize(self.grid, out).map(|(m, _)| m)
    }

    pub(crate) fn predict_into(&self, mu: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (&w, row) in mu.iter().zip(self.rows()) {
            if w == 0.0 {
                continue;
            }
            for (o, &p) in out.iter_mut().zip(row) {
                *o += w * p;
            }
        }
    }

    /// Samples the grid chain itself: `X_0 ~ mu0`, rows of the transition
    /// matrix for the moves, and `Y_k = h(X_k) + V_k` for the observations.
    /// Requires an additive likelihood.
    pub fn sample_path(&self, mu0: &GridMeasure, n: usize, seed: u64) -> Result<TrajectorySample> {
        let Likelihood::Additive { offsets, noise } = &self.likelihood else {
            return Err(Error::NotSamplable("custom likelihoods have no sampler"));
        };
        if mu0.grid() != &self.grid {
            return Err(Error::GridMismatch);
        }
        if n == 0 {
            return Err(Error::InvalidArgument("path length must be at least 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx = sample_index(&mut rng, mu0.weights());
        let mut states = Vec::with_capacity(n + 1);
        let mut observations = Vec::with_capacity(n);
        states.push(self.grid.node(idx));
        for _ in 0..n {
            idx = sample_index(&mut rng, self.row(idx));
            states.push(self.grid.node(idx));
            observations.push(offsets[idx] + noise.sample(&mut rng));
        }
        Ok(TrajectorySample { seed, states, observations })
    }
}

/// Discretizes with [`DEFAULT_TRUNCATION_TOLERANCE`].
pub fn discretize(spec: &ModelSpec, grid: GridSpec) -> Result<DiscreteModel> {
    discretize_with_tolerance(spec, grid, DEFAULT_TRUNCATION_TOLERANCE)
}

/// Row `i` is `q_xi(x_j - x_i - b(x_i)) * h`, renormalized. The truncated mass
/// (noise mass outside `[lower - h/2, upper + h/2]`) is recorded per row; rows
/// whose node lies in the middle half of the grid may lose at most
/// `max_truncation`. Edge rows of any finite grid lose mass, so they are
/// reported but not checked.
pub fn discretize_with_tolerance(
    spec: &ModelSpec,
    grid: GridSpec,
    max_truncation: f64,
) -> Result<DiscreteModel> {
    let n = grid.points();
    let h = grid.spacing();
    let (lo, hi) = (grid.lower() - 0.5 * h, grid.upper() + 0.5 * h);
    let quarter = 0.25 * (grid.upper() - grid.lower());
    let (core_lo, core_hi) = (grid.lower() + quarter, grid.upper() - quarter);
    let noise = &spec.signal_noise;

    let mut transition = vec![0.0; n * n];
    let mut truncation = vec![0.0; n];
    for (i, row) in transition.chunks_mut(n).enumerate() {
        let x = grid.node(i);
        let b = spec.drift.eval(x);
        if !b.is_finite() {
            return Err(Error::InvalidArgument(format!("drift is not finite at x = {x}")));
        }
        let center = x + b;
        let lost = (1.0 - (noise.cdf(hi - center) - noise.cdf(lo - center))).max(0.0);
        truncation[i] = lost;
        if x >= core_lo && x <= core_hi && lost > max_truncation {
            return Err(Error::TruncationExcess { row: i, lost });
        }
        let mut total = 0.0;
        for (j, p) in row.iter_mut().enumerate() {
            *p = noise.pdf(grid.node(j) - center) * h;
            total += *p;
        }
        if !(total > 0.0) {
            return Err(Error::TruncationExcess { row: i, lost: 1.0 });
        }
        row.iter_mut().for_each(|p| *p /= total);
    }

    let offsets: Vec<f64> = grid.nodes().map(|x| spec.observation.eval(x)).collect();
    if let Some(i) = offsets.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "observation map is not finite at x = {}",
            grid.node(i)
        )));
    }
    let likelihood = Likelihood::Additive {
        offsets,
        noise: spec.observation_noise.clone(),
    };
    DiscreteModel::from_flat(grid, transition, likelihood, truncation)
}

/// TV between the one-step predictions of the uniform prior on `grid` and on
/// the refined grid (aggregated back onto `grid` with hat weights). Small values
/// mean the discretization has converged.
pub fn refinement_discrepancy(spec: &ModelSpec, grid: GridSpec) -> Result<f64> {
    let fine_grid = grid.refined();
    let coarse = discretize(spec, grid)?;
    let fine = discretize(spec, fine_grid)?;
    let uniform = |g: GridSpec| GridMeasure::uniform_on(g, g.lower(), g.upper());
    let pc = coarse.predict(&uniform(grid)?)?;
    let pf = fine.predict(&uniform(fine_grid)?)?;

    let fw = pf.weights();
    let mut agg = vec![0.0; grid.points()];
    for (k, a) in agg.iter_mut().enumerate() {
        *a = fw[2 * k];
        if k > 0 {
            *a += 0.5 * fw[2 * k - 1];
        }
        if 2 * k + 1 < fw.len() {
            *a += 0.5 * fw[2 * k + 1];
        }
    }
    Ok(tv_weights(pc.weights(), &agg))
}

/// A sampled path `X_0..X_n` with observations `Y_1..Y_n`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySample {
    pub seed: u64,
    pub states: Vec<f64>,
    pub observations: Vec<f64>,
}

/// Simulates the continuous model for `n` steps from `spec.initial`.
pub fn sample_trajectory(spec: &ModelSpec, n: usize, seed: u64) -> Result<TrajectorySample> {
    if n == 0 {
        return Err(Error::InvalidArgument("trajectory length must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = spec.initial.sample(&mut rng);
    let mut states = Vec::with_capacity(n + 1);
    let mut observations = Vec::with_capacity(n);
    states.push(x);
    for _ in 0..n {
        x = x + spec.drift.eval(x) + spec.signal_noise.sample(&mut rng);
        states.push(x);
        observations.push(spec.observation.eval(x) + spec.observation_noise.sample(&mut rng));
    }
    Ok(TrajectorySample { seed, states, observations })
}

/// Seed of replica `index` in a run with base seed `base`.
pub fn replica_seed(base: u64, index: usize) -> u64 {
    base.wrapping_add(index as u64)
}
