//! Probability measures on a uniform one-dimensional grid.
//!
//! Every filter state in this crate is a [`GridMeasure`]. The two metrics that
//! matter for stability analysis live here as well: total variation, taken as
//! the full mass `sum |mu_i - nu_i|` (range `[0, 2]`), and the Birkhoff
//! projective metric `ln max(mu/nu) + ln max(nu/mu)`.

use crate::error::{Error, Result};

/// Absolute tolerance on the total mass of a [`GridMeasure`].
pub const MASS_TOLERANCE: f64 = 1e-12;

/// Uniform grid `lower, lower + h, ..., upper` with `points` nodes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    lower: f64,
    upper: f64,
    points: usize,
}

impl GridSpec {
    pub fn new(lower: f64, upper: f64, points: usize) -> Result<Self> {
        if !lower.is_finite() || !upper.is_finite() {
            return Err(Error::InvalidGrid("bounds must be finite".into()));
        }
        if lower >= upper {
            return Err(Error::InvalidGrid(format!(
                "lower ({lower}) must be below upper ({upper})"
            )));
        }
        if points < 2 {
            return Err(Error::InvalidGrid("points must be at least 2".into()));
        }
        Ok(Self { lower, upper, points })
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn spacing(&self) -> f64 {
        (self.upper - self.lower) / (self.points - 1) as f64
    }

    /// Coordinate of node `i`.
    pub fn node(&self, i: usize) -> f64 {
        self.lower + i as f64 * self.spacing()
    }

    pub fn nodes(&self) -> impl ExactSizeIterator<Item = f64> + '_ {
        let h = self.spacing();
        (0..self.points).map(move |i| self.lower + i as f64 * h)
    }

    /// Index of the node closest to `x`, clamped to the grid.
    pub fn nearest_index(&self, x: f64) -> usize {
        let t = ((x - self.lower) / self.spacing()).round();
        t.clamp(0.0, (self.points - 1) as f64) as usize
    }

    /// The grid with twice the resolution on the same interval. Node `i` of
    /// `self` is node `2i` of the result.
    pub fn refined(&self) -> Self {
        Self {
            lower: self.lower,
            upper: self.upper,
            points: 2 * (self.points - 1) + 1,
        }
    }
}

/// A probability measure on the nodes of a [`GridSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct GridMeasure {
    grid: GridSpec,
    weights: Vec<f64>,
}

impl GridMeasure {
    /// Wraps already-normalized weights, checking nonnegativity and unit mass.
    pub fn new(grid: GridSpec, weights: Vec<f64>) -> Result<Self> {
        check_weights(&grid, &weights)?;
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::InvalidMeasure(format!(
                "weights sum to {total}, not 1"
            )));
        }
        Ok(Self { grid, weights })
    }

    /// Unit mass on the node nearest to `x`.
    pub fn point_mass(grid: GridSpec, x: f64) -> Self {
        let mut weights = vec![0.0; grid.points()];
        weights[grid.nearest_index(x)] = 1.0;
        Self { grid, weights }
    }

    /// Uniform over the nodes in `[lo, hi]`.
    pub fn uniform_on(grid: GridSpec, lo: f64, hi: f64) -> Result<Self> {
        let h = grid.spacing();
        let eps = 1e-9 * h;
        let weights = grid
            .nodes()
            .map(|x| if x >= lo - eps && x <= hi + eps { 1.0 } else { 0.0 })
            .collect();
        normalize(grid, weights)
            .map(|(m, _)| m)
            .map_err(|_| Error::InvalidMeasure(format!("no grid node inside [{lo}, {hi}]")))
    }

    /// Node masses proportional to `density(x_i)`.
    pub fn from_density(grid: GridSpec, density: impl Fn(f64) -> f64) -> Result<Self> {
        let weights = grid.nodes().map(density).collect();
        normalize(grid, weights).map(|(m, _)| m)
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn into_weights(self) -> Vec<f64> {
        self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// `sum_i mu_i exp(c |x_i|)`.
    pub fn exp_moment(&self, c: f64) -> f64 {
        exp_moment(self, c)
    }

    pub fn mean(&self) -> f64 {
        self.grid
            .nodes()
            .zip(&self.weights)
            .map(|(x, w)| x * w)
            .sum()
    }

    pub(crate) fn from_parts_unchecked(grid: GridSpec, weights: Vec<f64>) -> Self {
        Self { grid, weights }
    }
}

fn check_weights(grid: &GridSpec, weights: &[f64]) -> Result<()> {
    if weights.len() != grid.points() {
        return Err(Error::InvalidMeasure(format!(
            "{} weights for a grid of {} points",
            weights.len(),
            grid.points()
        )));
    }
    for (index, &value) in weights.iter().enumerate() {
        if value.is_nan() || value < 0.0 {
            return Err(Error::NegativeWeight { index, value });
        }
        if value.is_infinite() {
            return Err(Error::InvalidMeasure(format!("infinite weight at index {index}")));
        }
    }
    Ok(())
}

/// Rescales nonnegative weights to unit mass. Returns the measure together with
/// the mass that was divided out.
pub fn normalize(grid: GridSpec, mut weights: Vec<f64>) -> Result<(GridMeasure, f64)> {
    check_weights(&grid, &weights)?;
    let mass: f64 = weights.iter().sum();
    if mass <= 0.0 {
        return Err(Error::AllZeroMass);
    }
    if !mass.is_finite() {
        return Err(Error::InvalidMeasure("total mass overflows".into()));
    }
    let inv = 1.0 / mass;
    weights.iter_mut().for_each(|w| *w *= inv);
    Ok((GridMeasure { grid, weights }, mass))
}

fn same_grid(mu: &GridMeasure, nu: &GridMeasure) -> Result<()> {
    if mu.grid != nu.grid {
        return Err(Error::GridMismatch);
    }
    Ok(())
}

/// Total variation as the full mass of the signed difference.
pub fn tv_distance(mu: &GridMeasure, nu: &GridMeasure) -> Result<f64> {
    same_grid(mu, nu)?;
    Ok(tv_weights(&mu.weights, &nu.weights))
}

pub(crate) fn tv_weights(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// Birkhoff projective distance between two probability measures on the same grid.
pub fn birkhoff_distance(mu: &GridMeasure, nu: &GridMeasure) -> Result<f64> {
    same_grid(mu, nu)?;
    Ok(birkhoff_weights(&mu.weights, &nu.weights))
}

/// Birkhoff distance between two nonnegative vectors of equal length (no
/// normalization required, the metric is projective). Indices where both
/// entries vanish are skipped; a zero against a positive entry gives `+inf`.
pub fn birkhoff_weights(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "birkhoff_weights: length mismatch");
    let mut max_ratio = 0.0_f64;
    let mut min_ratio = f64::INFINITY;
    let mut any = false;
    for (&x, &y) in a.iter().zip(b) {
        match (x > 0.0, y > 0.0) {
            (false, false) => continue,
            (true, true) => {
                let r = x / y;
                max_ratio = max_ratio.max(r);
                min_ratio = min_ratio.min(r);
                any = true;
            }
            _ => return f64::INFINITY,
        }
    }
    if !any {
        return 0.0;
    }
    (max_ratio.ln() - min_ratio.ln()).max(0.0)
}

/// `sum_i mu_i exp(c |x_i|)`.
pub fn exp_moment(mu: &GridMeasure, c: f64) -> f64 {
    mu.grid
        .nodes()
        .zip(&mu.weights)
        .filter(|(_, &w)| w > 0.0)
        .map(|(x, w)| w * (c * x.abs()).exp())
        .sum()
}
