//! Recursive Bayes filter on a [`DiscreteModel`].
//!
//! One step predicts with the transition matrix, reweights by the likelihood of
//! the new observation and renormalizes:
//!
//! ```text
//! out_j ∝ sum_i mu_i T[i][j] L(j, y)
//! ```
//!
//! The same code runs the exact filter (true model) and the wrong filter
//! (perturbed model); only the model argument changes. Normalizing masses are
//! kept as logs so long runs never under- or overflow.

use crate::error::{Error, Result};
use crate::measure::{GridMeasure, GridSpec};
use crate::model::DiscreteModel;

/// Corrected masses below this are rescaled by their maximum before normalizing.
const UNDERFLOW_GUARD: f64 = 1e-300;

/// Which model produced a trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelTag {
    True,
    Wrong,
}

/// Filter measures `mu_0..mu_n` and the log of each step's normalizing mass.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterTrace {
    pub measures: Vec<GridMeasure>,
    pub log_normalizers: Vec<f64>,
    pub tag: ModelTag,
}

impl FilterTrace {
    pub fn steps(&self) -> usize {
        self.log_normalizers.len()
    }

    pub fn last(&self) -> &GridMeasure {
        self.measures.last().expect("trace holds at least mu_0")
    }

    /// `ln c_i`: log-likelihood of `Y_1..Y_i` under the filter's model.
    pub fn log_evidence_until(&self, i: usize) -> f64 {
        self.log_normalizers[..i].iter().sum()
    }

    /// `ln c_n` for the whole run.
    pub fn log_evidence(&self) -> f64 {
        self.log_evidence_until(self.steps())
    }

    /// `d_i = c_{i-1} / c_i`, for `1 <= i <= n`.
    pub fn step_ratio(&self, i: usize) -> f64 {
        (-self.log_normalizers[i - 1]).exp()
    }
}

/// Streaming filter state. Keeps scratch buffers so a long run does not allocate.
#[derive(Debug, Clone)]
pub struct Filter<'m> {
    model: &'m DiscreteModel,
    weights: Vec<f64>,
    lik: Vec<f64>,
    next: Vec<f64>,
}

impl<'m> Filter<'m> {
    pub fn new(model: &'m DiscreteModel, mu0: &GridMeasure) -> Result<Self> {
        if mu0.grid() != model.grid() {
            return Err(Error::GridMismatch);
        }
        let n = model.states();
        Ok(Self {
            model,
            weights: mu0.weights().to_vec(),
            lik: vec![0.0; n],
            next: vec![0.0; n],
        })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn grid(&self) -> &GridSpec {
        self.model.grid()
    }

    pub fn measure(&self) -> GridMeasure {
        GridMeasure::from_parts_unchecked(*self.model.grid(), self.weights.clone())
    }

    /// Advances by one observation; returns the log normalizer.
    pub fn step(&mut self, y: f64) -> Result<f64> {
        self.model.predict_into(&self.weights, &mut self.next);
        self.model.likelihood_vector(y, &mut self.lik);
        let mut total = 0.0;
        for (w, l) in self.next.iter_mut().zip(&self.lik) {
            *w *= l;
            total += *w;
        }
        let log_norm = if total >= UNDERFLOW_GUARD && total.is_finite() {
            let inv = 1.0 / total;
            self.next.iter_mut().for_each(|w| *w *= inv);
            total.ln()
        } else {
            let max = self.next.iter().copied().fold(0.0_f64, f64::max);
            if !(max > 0.0) || !max.is_finite() {
                return Err(Error::AllZeroMass);
            }
            self.next.iter_mut().for_each(|w| *w /= max);
            let scaled: f64 = self.next.iter().sum();
            self.next.iter_mut().for_each(|w| *w /= scaled);
            max.ln() + scaled.ln()
        };
        std::mem::swap(&mut self.weights, &mut self.next);
        Ok(log_norm)
    }
}

/// One filter step: `(posterior, ln normalizer)`.
pub fn filter_step(model: &DiscreteModel, mu: &GridMeasure, y: f64) -> Result<(GridMeasure, f64)> {
    let mut f = Filter::new(model, mu)?;
    let log_norm = f.step(y)?;
    Ok((f.measure(), log_norm))
}

/// Runs the filter over `observations` and keeps every intermediate measure.
pub fn run_filter(
    model: &DiscreteModel,
    mu0: &GridMeasure,
    observations: &[f64],
    tag: ModelTag,
) -> Result<FilterTrace> {
    if observations.is_empty() {
        return Err(Error::InvalidArgument("no observations to filter".into()));
    }
    let mut f = Filter::new(model, mu0)?;
    let mut measures = Vec::with_capacity(observations.len() + 1);
    let mut log_normalizers = Vec::with_capacity(observations.len());
    measures.push(mu0.clone());
    for &y in observations {
        log_normalizers.push(f.step(y)?);
        measures.push(f.measure());
    }
    Ok(FilterTrace { measures, log_normalizers, tag })
}

/// `mu S_{k:n}`: the filter applied over an observation window. An empty window
/// returns `mu` unchanged.
pub fn multi_step(model: &DiscreteModel, mu: &GridMeasure, window: &[f64]) -> Result<GridMeasure> {
    multi_step_with_evidence(model, mu, window).map(|(m, _)| m)
}

/// [`multi_step`] together with the log evidence of the window.
pub fn multi_step_with_evidence(
    model: &DiscreteModel,
    mu: &GridMeasure,
    window: &[f64],
) -> Result<(GridMeasure, f64)> {
    let mut f = Filter::new(model, mu)?;
    let mut log_evidence = 0.0;
    for &y in window {
        log_evidence += f.step(y)?;
    }
    Ok((f.measure(), log_evidence))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::tv_distance;
    use crate::model::Likelihood;
    use approx::assert_relative_eq;

    fn two_state(lik: [f64; 2]) -> DiscreteModel {
        let grid = GridSpec::new(0.0, 1.0, 2).unwrap();
        DiscreteModel::new(
            grid,
            vec![vec![0.9, 0.1], vec![0.2, 0.8]],
            Likelihood::custom(move |i, _| lik[i]),
        )
        .unwrap()
    }

    #[test]
    fn hand_bayes_step() {
        let model = two_state([0.7, 0.3]);
        let prior = GridMeasure::new(*model.grid(), vec![0.5, 0.5]).unwrap();
        let predicted = model.predict(&prior).unwrap();
        assert_relative_eq!(predicted.weights()[0], 0.55, epsilon = 1e-15);
        assert_relative_eq!(predicted.weights()[1], 0.45, epsilon = 1e-15);
        let (post, log_norm) = filter_step(&model, &prior, 0.0).unwrap();
        assert_relative_eq!(post.weights()[0], 0.385 / 0.52, epsilon = 1e-15);
        assert_relative_eq!(post.weights()[0], 0.740_384_615_384_615, epsilon = 1e-14);
        assert_relative_eq!(post.weights()[1], 0.259_615_384_615_384, epsilon = 1e-14);
        assert_relative_eq!(log_norm.exp(), 0.52, epsilon = 1e-15);
    }

    #[test]
    fn uninformative_observation_gives_prediction() {
        let model = two_state([0.4, 0.4]);
        let prior = GridMeasure::new(*model.grid(), vec![0.3, 0.7]).unwrap();
        let (post, log_norm) = filter_step(&model, &prior, 1.0).unwrap();
        let predicted = model.predict(&prior).unwrap();
        assert!(tv_distance(&post, &predicted).unwrap() < 1e-15);
        assert_relative_eq!(log_norm, 0.4f64.ln(), epsilon = 1e-15);
    }

    #[test]
    fn frozen_chain_keeps_point_mass() {
        let grid = GridSpec::new(0.0, 3.0, 4).unwrap();
        let identity = (0..4)
            .map(|i| (0..4).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        let model = DiscreteModel::new(
            grid,
            identity,
            Likelihood::custom(|i, y| 1.0 + (i as f64 - y).abs()),
        )
        .unwrap();
        let mu = GridMeasure::point_mass(grid, 2.0);
        for y in [-5.0, 0.0, 2.0, 17.0] {
            assert_eq!(filter_step(&model, &mu, y).unwrap().0, mu);
        }
    }

    #[test]
    fn underflow_guard_rescales() {
        let model = two_state([1e-310, 3e-310]);
        let prior = GridMeasure::new(*model.grid(), vec![0.5, 0.5]).unwrap();
        let (post, log_norm) = filter_step(&model, &prior, 0.0).unwrap();
        let expect = 0.55 * 1.0 / (0.55 + 0.45 * 3.0);
        assert_relative_eq!(post.weights()[0], expect, epsilon = 1e-10);
        assert_relative_eq!(log_norm, (0.55e-310f64 + 1.35e-310).ln(), epsilon = 1e-6);

        let dead = two_state([0.0, 0.0]);
        assert_eq!(filter_step(&dead, &prior, 0.0), Err(Error::AllZeroMass));
    }

    #[test]
    fn single_step_run_and_windows() {
        let model = two_state([0.7, 0.3]);
        let prior = GridMeasure::new(*model.grid(), vec![0.5, 0.5]).unwrap();
        let trace = run_filter(&model, &prior, &[0.0], ModelTag::True).unwrap();
        assert_eq!(trace.measures.len(), 2);
        assert_eq!(trace.measures[1], filter_step(&model, &prior, 0.0).unwrap().0);
        assert_relative_eq!(trace.step_ratio(1), 1.0 / 0.52, epsilon = 1e-14);
        assert!(run_filter(&model, &prior, &[], ModelTag::True).is_err());

        assert_eq!(multi_step(&model, &prior, &[]).unwrap(), prior);
        assert_eq!(
            multi_step(&model, &prior, &[0.0]).unwrap(),
            filter_step(&model, &prior, 0.0).unwrap().0
        );
    }

    #[test]
    fn grid_mismatch_is_reported() {
        let model = two_state([0.7, 0.3]);
        let other = GridMeasure::point_mass(GridSpec::new(0.0, 2.0, 2).unwrap(), 0.0);
        assert_eq!(filter_step(&model, &other, 0.0).unwrap_err(), Error::GridMismatch);
    }
}
