//! Monte Carlo experiments: stability of the wrong filter, forgetting of the
//! initial condition, and per-run diagnostics.
//!
//! Trajectories are drawn from the discretized true chain, so the exact filter
//! really is the exact posterior of the simulated data. Replicas run in
//! parallel; each replica's seed is derived from the base seed and its index,
//! and per-step sums are taken in replica order, so reports do not depend on
//! the thread count.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::assumptions::{certify, default_probes, AssumptionReport};
use crate::error::{Error, Result};
use crate::filter::{filter_step, multi_step, Filter, FilterTrace, ModelTag};
use crate::measure::{birkhoff_distance, exp_moment, tv_weights, GridMeasure, GridSpec};
use crate::model::{
    apply_perturbation, discretize, preset, replica_seed, DiscreteModel, InitialLaw, ModelSpec,
    PerturbationSpec,
};
use crate::stats::{least_squares, mean_and_stderr, LinearFit};

/// Mean TV values at or below this count as numerically zero.
pub const NUMERICAL_FLOOR: f64 = 1e-12;

/// Steps dropped from the start of the forgetting fit.
pub const FIT_TRIM: usize = 5;

/// Fewest points for a decay-rate fit.
pub const MIN_FIT_POINTS: usize = 5;

/// Longest horizon accepted by [`telescoping_diagnostic`].
pub const MAX_TELESCOPING_HORIZON: usize = 30;

/// Numerical slack for the per-step Birkhoff inequality.
pub const BIRKHOFF_SLACK: f64 = 1e-9;

/// Everything needed to rebuild a run.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub preset: String,
    /// Bound of the observation map `|h| <= amplitude`.
    pub observation_amplitude: f64,
    /// Drift shift applied on `|x| <= perturbation_radius` (the scale that
    /// sweeps multiply).
    pub perturbation_scale: f64,
    pub observation_shift: f64,
    pub perturbation_radius: f64,
    pub horizon: usize,
    pub replicas: usize,
    pub seed: u64,
    pub grid: GridSpec,
    /// Exponent for moment diagnostics.
    pub c: f64,
    /// Ball radius `R` used to certify mixing and drift.
    pub radius: f64,
    pub initial: InitialLaw,
    /// Second initial law, for forgetting runs.
    pub alternate_initial: Option<InitialLaw>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            preset: "laplace-contractive".into(),
            observation_amplitude: 0.05,
            perturbation_scale: 0.0,
            observation_shift: 0.0,
            perturbation_radius: 2.0,
            horizon: 200,
            replicas: 500,
            seed: 0,
            grid: GridSpec::new(-20.0, 20.0, 401).expect("default grid is valid"),
            c: 0.1,
            radius: 4.0,
            initial: InitialLaw::PointMass(0.0),
            alternate_initial: None,
        }
    }
}

impl ExperimentConfig {
    /// Checks the invariants; the message names the one that fails.
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::InvalidArgument(msg.to_string()));
        if self.replicas < 1 {
            return fail("replicas ≥ 1");
        }
        if self.horizon < 2 {
            return fail("horizon ≥ 2");
        }
        if !(self.c > 0.0 && self.c.is_finite()) {
            return fail("c > 0");
        }
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return fail("radius > 0");
        }
        if !(self.perturbation_radius >= 0.0) {
            return fail("perturbation radius ≥ 0");
        }
        if !(self.perturbation_scale.is_finite() && self.observation_shift.is_finite()) {
            return fail("perturbation shifts are finite");
        }
        preset(&self.preset, self.observation_amplitude)?;
        Ok(())
    }

    pub fn true_spec(&self) -> Result<ModelSpec> {
        Ok(preset(&self.preset, self.observation_amplitude)?.with_initial(self.initial))
    }

    pub fn wrong_spec(&self) -> Result<ModelSpec> {
        let pert = PerturbationSpec::local(
            self.perturbation_scale,
            self.observation_shift,
            self.perturbation_radius,
        );
        Ok(apply_perturbation(&self.true_spec()?, &pert))
    }

    /// Discretized `(true, wrong)` models.
    pub fn models(&self) -> Result<(DiscreteModel, DiscreteModel)> {
        Ok((
            discretize(&self.true_spec()?, self.grid)?,
            discretize(&self.wrong_spec()?, self.grid)?,
        ))
    }

    /// Same run with both perturbation shifts multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            perturbation_scale: self.perturbation_scale * factor,
            observation_shift: self.observation_shift * factor,
            ..self.clone()
        }
    }

    /// `name = value` lines echoing the configuration.
    pub fn to_key_values(&self) -> String {
        let mut out = String::new();
        let alt = self.alternate_initial.map_or("none".to_string(), |l| l.to_string());
        let rows: [(&str, String); 14] = [
            ("preset", self.preset.clone()),
            ("observation_amplitude", self.observation_amplitude.to_string()),
            ("perturbation_scale", self.perturbation_scale.to_string()),
            ("observation_shift", self.observation_shift.to_string()),
            ("perturbation_radius", self.perturbation_radius.to_string()),
            ("horizon", self.horizon.to_string()),
            ("replicas", self.replicas.to_string()),
            ("seed", self.seed.to_string()),
            ("grid", format!("{}:{}:{}", self.grid.lower(), self.grid.upper(), self.grid.points())),
            ("moment_c", self.c.to_string()),
            ("radius", self.radius.to_string()),
            ("initial", self.initial.to_string()),
            ("alternate_initial", alt),
            ("probe_reach", "40".to_string()),
        ];
        for (k, v) in rows {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}

/// Per-step means and standard errors over replicas; index `k - 1` holds step `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct TvSeries {
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
    pub replicas: usize,
}

impl TvSeries {
    fn from_replicas(rows: Vec<Vec<f64>>) -> Self {
        let replicas = rows.len();
        let steps = rows.first().map_or(0, Vec::len);
        let mut column = vec![0.0; replicas];
        let (mut mean, mut stderr) = (Vec::with_capacity(steps), Vec::with_capacity(steps));
        for k in 0..steps {
            for (c, row) in column.iter_mut().zip(&rows) {
                *c = row[k];
            }
            let (m, s) = mean_and_stderr(&column);
            mean.push(m);
            stderr.push(s);
        }
        Self { mean, stderr, replicas }
    }

    /// Largest mean over steps `1..=upto`.
    pub fn max_until(&self, upto: usize) -> f64 {
        self.mean[..upto.min(self.mean.len())].iter().copied().fold(0.0, f64::max)
    }

    pub fn sup(&self) -> f64 {
        self.max_until(self.mean.len())
    }

    /// Mean TV over steps `from..=to` (1-based, inclusive).
    pub fn window(&self, from: usize, to: usize) -> &[f64] {
        &self.mean[from - 1..to.min(self.mean.len())]
    }

    /// CSV body: `step,mean_tv,stderr`.
    pub fn to_csv_rows(&self) -> String {
        let mut out = String::from("step,mean_tv,stderr\n");
        for (k, (m, s)) in self.mean.iter().zip(&self.stderr).enumerate() {
            let _ = writeln!(out, "{},{},{}", k + 1, m, s);
        }
        out
    }
}

/// TV between the exact and the wrong filter at every step, averaged over
/// replicas. Both filters start from `mu0` and read the same observations,
/// drawn from the true chain started at `mu0`.
pub fn stability_series(
    true_model: &DiscreteModel,
    wrong_model: &DiscreteModel,
    mu0: &GridMeasure,
    horizon: usize,
    replicas: usize,
    seed: u64,
) -> Result<TvSeries> {
    let rows = (0..replicas)
        .into_par_iter()
        .map(|r| {
            let path = true_model.sample_path(mu0, horizon, replica_seed(seed, r))?;
            let mut exact = Filter::new(true_model, mu0)?;
            let mut wrong = Filter::new(wrong_model, mu0)?;
            path.observations
                .iter()
                .map(|&y| {
                    exact.step(y)?;
                    wrong.step(y)?;
                    Ok(tv_weights(exact.weights(), wrong.weights()))
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TvSeries::from_replicas(rows))
}

/// TV between two filters of the same model started from `mu0` and `nu0`, on
/// observations drawn from the chain started at `mu0`.
pub fn forgetting_series(
    model: &DiscreteModel,
    mu0: &GridMeasure,
    nu0: &GridMeasure,
    horizon: usize,
    replicas: usize,
    seed: u64,
) -> Result<TvSeries> {
    let rows = (0..replicas)
        .into_par_iter()
        .map(|r| {
            let path = model.sample_path(mu0, horizon, replica_seed(seed, r))?;
            let mut a = Filter::new(model, mu0)?;
            let mut b = Filter::new(model, nu0)?;
            path.observations
                .iter()
                .map(|&y| {
                    a.step(y)?;
                    b.step(y)?;
                    Ok(tv_weights(a.weights(), b.weights()))
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TvSeries::from_replicas(rows))
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityReport {
    pub q: f64,
    pub series: TvSeries,
    pub sup_mean_tv: f64,
    pub assumptions: AssumptionReport,
}

impl StabilityReport {
    pub fn certified(&self) -> bool {
        self.assumptions.certified()
    }

    /// `#`-prefixed metadata, then the per-step rows.
    pub fn to_csv(&self, config: &ExperimentConfig) -> String {
        let mut out = String::new();
        push_header(&mut out, "stability", self.certified(), config, &self.assumptions);
        let _ = writeln!(out, "# sup_mean_tv = {}", self.sup_mean_tv);
        out.push_str(&self.series.to_csv_rows());
        out
    }
}

fn push_header(
    out: &mut String,
    kind: &str,
    certified: bool,
    config: &ExperimentConfig,
    report: &AssumptionReport,
) {
    let _ = writeln!(out, "# experiment = {kind}");
    let status = if certified { "CERTIFIED" } else { "UNCERTIFIED" };
    let _ = writeln!(out, "# status = {status}");
    for line in config.to_key_values().lines().chain(report.to_key_values().lines()) {
        let _ = writeln!(out, "# {line}");
    }
}

/// Certifies the configured pair and runs the stability experiment. An
/// uncertified pair still runs; the report says so.
pub fn stability_experiment(config: &ExperimentConfig) -> Result<StabilityReport> {
    config.validate()?;
    let (true_model, wrong_model) = config.models()?;
    let assumptions = certify(&true_model, &wrong_model, config.radius, &default_probes())?;
    let mu0 = config.initial.to_measure(config.grid)?;
    let series = stability_series(
        &true_model,
        &wrong_model,
        &mu0,
        config.horizon,
        config.replicas,
        config.seed,
    )?;
    Ok(StabilityReport {
        q: assumptions.q,
        sup_mean_tv: series.sup(),
        series,
        assumptions,
    })
}

/// One stability report per scale factor, each with the same seed.
pub fn sweep_experiment(config: &ExperimentConfig, factors: &[f64]) -> Result<Vec<StabilityReport>> {
    factors.iter().map(|&f| stability_experiment(&config.scaled(f))).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Warning {
    /// The initial measures are not mutually absolutely continuous; only the
    /// decay rate is meaningful, not the prefactor.
    InfiniteBirkhoff,
}

/// Least-squares fit of `ln mean_tv` against the step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayFit {
    /// `-slope`.
    pub alpha: f64,
    pub r_squared: f64,
    pub first_step: usize,
    pub last_step: usize,
}

impl DecayFit {
    pub fn points(&self) -> usize {
        self.last_step + 1 - self.first_step
    }
}

/// Fits over steps after [`FIT_TRIM`] while the mean stays above
/// `100 * NUMERICAL_FLOOR`; `None` with fewer than [`MIN_FIT_POINTS`] points.
pub fn fit_decay(mean_tv: &[f64]) -> Option<DecayFit> {
    let floor = 100.0 * NUMERICAL_FLOOR;
    let first_step = FIT_TRIM + 1;
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for (k, &m) in mean_tv.iter().enumerate().skip(FIT_TRIM) {
        if !(m > floor) {
            break;
        }
        xs.push((k + 1) as f64);
        ys.push(m.ln());
    }
    if xs.len() < MIN_FIT_POINTS {
        return None;
    }
    let LinearFit { slope, r_squared, .. } = least_squares(&xs, &ys)?;
    Some(DecayFit {
        alpha: -slope,
        r_squared,
        first_step,
        last_step: first_step + xs.len() - 1,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForgettingReport {
    pub series: TvSeries,
    pub fit: Option<DecayFit>,
    pub initial_birkhoff: f64,
    pub warnings: Vec<Warning>,
    pub assumptions: AssumptionReport,
}

impl ForgettingReport {
    pub fn alpha(&self) -> Option<f64> {
        self.fit.map(|f| f.alpha)
    }

    pub fn certified(&self) -> bool {
        self.assumptions.certified()
    }

    pub fn to_csv(&self, config: &ExperimentConfig) -> String {
        let mut out = String::new();
        push_header(&mut out, "forgetting", self.certified(), config, &self.assumptions);
        let _ = writeln!(out, "# initial_birkhoff = {}", self.initial_birkhoff);
        match self.fit {
            Some(f) => {
                let _ = writeln!(out, "# alpha_hat = {}", f.alpha);
                let _ = writeln!(out, "# fit_r_squared = {}", f.r_squared);
                let _ = writeln!(out, "# fit_steps = {}:{}", f.first_step, f.last_step);
            }
            None => out.push_str("# alpha_hat = undefined\n"),
        }
        for w in &self.warnings {
            let _ = writeln!(out, "# warning = {w:?}");
        }
        out.push_str(&self.series.to_csv_rows());
        out
    }
}

/// Runs two filters of the true model from `config.initial` and
/// `config.alternate_initial` and fits the decay rate of their mean TV.
pub fn forgetting_experiment(config: &ExperimentConfig) -> Result<ForgettingReport> {
    config.validate()?;
    let alternate = config.alternate_initial.ok_or_else(|| {
        Error::InvalidArgument("forgetting needs a second initial law".into())
    })?;
    let model = discretize(&config.true_spec()?, config.grid)?;
    let assumptions = certify(&model, &model, config.radius, &default_probes())?;
    let mu0 = config.initial.to_measure(config.grid)?;
    let nu0 = alternate.to_measure(config.grid)?;
    for m in [&mu0, &nu0] {
        if !exp_moment(m, config.c).is_finite() {
            return Err(Error::InvalidArgument("initial law has no finite exponential moment".into()));
        }
    }
    let initial_birkhoff = birkhoff_distance(&mu0, &nu0)?;
    let warnings = if initial_birkhoff.is_infinite() {
        vec![Warning::InfiniteBirkhoff]
    } else {
        Vec::new()
    };
    let series = forgetting_series(
        &model,
        &mu0,
        &nu0,
        config.horizon,
        config.replicas,
        config.seed,
    )?;
    Ok(ForgettingReport {
        fit: fit_decay(&series.mean),
        series,
        initial_birkhoff,
        warnings,
        assumptions,
    })
}

/// Terms of `mu'_n - mu_n = sum_k [mu'_k S_{k+1:n} - (mu'_{k-1} Q^{Y_k}) S_{k+1:n}]`,
/// where `S` is the exact filter and `mu'` the wrong one.
#[derive(Debug, Clone, PartialEq)]
pub struct Telescoping {
    /// Signed node-wise terms, `k = 1..=n`.
    pub terms: Vec<Vec<f64>>,
    /// `mu'_n - mu_n`.
    pub difference: Vec<f64>,
}

impl Telescoping {
    /// Largest node-wise gap between the summed terms and the difference.
    pub fn residual(&self) -> f64 {
        let mut sum = vec![0.0; self.difference.len()];
        for t in &self.terms {
            sum.iter_mut().zip(t).for_each(|(s, v)| *s += v);
        }
        sum.iter().zip(&self.difference).map(|(s, d)| (s - d).abs()).fold(0.0, f64::max)
    }

    /// `||term_k||_TV` for each term.
    pub fn term_norms(&self) -> Vec<f64> {
        self.terms.iter().map(|t| t.iter().map(|v| v.abs()).sum()).collect()
    }

    pub fn difference_norm(&self) -> f64 {
        self.difference.iter().map(|v| v.abs()).sum()
    }
}

/// Splits the wrong-minus-exact filter difference after `observations` into
/// one term per step at which the wrong model was substituted.
pub fn telescoping_diagnostic(
    true_model: &DiscreteModel,
    wrong_model: &DiscreteModel,
    mu0: &GridMeasure,
    observations: &[f64],
) -> Result<Telescoping> {
    let n = observations.len();
    if n == 0 || n > MAX_TELESCOPING_HORIZON {
        return Err(Error::InvalidArgument(format!(
            "telescoping horizon must be in 1..={MAX_TELESCOPING_HORIZON}, got {n}"
        )));
    }
    if true_model.grid() != wrong_model.grid() {
        return Err(Error::GridMismatch);
    }
    let exact_n = multi_step(true_model, mu0, observations)?;
    let mut wrong = mu0.clone();
    let mut terms = Vec::with_capacity(n);
    for k in 1..=n {
        let y = observations[k - 1];
        let rest = &observations[k..];
        let (via_true, _) = filter_step(true_model, &wrong, y)?;
        let (via_wrong, _) = filter_step(wrong_model, &wrong, y)?;
        let a = multi_step(true_model, &via_wrong, rest)?;
        let b = multi_step(true_model, &via_true, rest)?;
        terms.push(a.weights().iter().zip(b.weights()).map(|(x, y)| x - y).collect());
        wrong = via_wrong;
    }
    let difference = wrong.weights().iter().zip(exact_n.weights()).map(|(a, b)| a - b).collect();
    Ok(Telescoping { terms, difference })
}

/// For each step `k` of a wrong-model trace, the Birkhoff distance between
/// `mu'_k` and one exact step from the same predecessor `mu'_{k-1}`.
pub fn per_step_birkhoff_probe(
    true_model: &DiscreteModel,
    trace: &FilterTrace,
    observations: &[f64],
) -> Result<Vec<f64>> {
    if trace.tag != ModelTag::Wrong {
        return Err(Error::InvalidArgument("probe needs a wrong-model trace".into()));
    }
    if observations.len() != trace.steps() {
        return Err(Error::InvalidArgument(format!(
            "{} observations for a trace of {} steps",
            observations.len(),
            trace.steps()
        )));
    }
    observations
        .iter()
        .enumerate()
        .map(|(k, &y)| {
            let (exact, _) = filter_step(true_model, &trace.measures[k], y)?;
            birkhoff_distance(&trace.measures[k + 1], &exact)
        })
        .collect()
}

/// Largest exponential moment along a trace, against the ceiling implied by
/// the certified drift constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentProbe {
    pub max_moment: f64,
    pub ceiling: f64,
}

impl MomentProbe {
    pub fn holds(&self) -> bool {
        self.max_moment <= self.ceiling
    }
}

/// `max_k exp_moment(mu_k, c)` with `c` taken from the report, and the ceiling
/// `K' / (1 - rho') + exp_moment(mu_0, c)`. The ceiling is infinite when the
/// report is not certified.
pub fn moment_stability_probe(trace: &FilterTrace, report: &AssumptionReport) -> MomentProbe {
    let max_moment = trace
        .measures
        .iter()
        .map(|m| exp_moment(m, report.c))
        .fold(0.0, f64::max);
    let ceiling = if report.certified() && report.rho_prime < 1.0 {
        report.moment_ceiling(&trace.measures[0])
    } else {
        f64::INFINITY
    };
    MomentProbe { max_moment, ceiling }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter::run_filter;
    use crate::model::Likelihood;
    use approx::assert_relative_eq;

    fn small_config() -> ExperimentConfig {
        ExperimentConfig {
            grid: GridSpec::new(-12.0, 12.0, 121).unwrap(),
            horizon: 30,
            replicas: 8,
            perturbation_scale: 0.01,
            seed: 11,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn validation_names_the_invariant() {
        let bad = ExperimentConfig { replicas: 0, ..small_config() };
        assert_eq!(bad.validate(), Err(Error::InvalidArgument("replicas ≥ 1".into())));
        let bad = ExperimentConfig { horizon: 1, ..small_config() };
        assert_eq!(bad.validate(), Err(Error::InvalidArgument("horizon ≥ 2".into())));
        let bad = ExperimentConfig { preset: "nope".into(), ..small_config() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn zero_perturbation_gives_zero_tv() {
        let cfg = ExperimentConfig { perturbation_scale: 0.0, ..small_config() };
        let r = stability_experiment(&cfg).unwrap();
        assert_eq!(r.q, 0.0);
        assert!(r.series.mean.iter().all(|&m| m == 0.0));
        assert_eq!(r.series.mean.len(), cfg.horizon);
    }

    #[test]
    fn stability_report_is_sane_and_reproducible() {
        let cfg = small_config();
        let a = stability_experiment(&cfg).unwrap();
        assert!(a.series.mean.iter().all(|&m| (0.0..=2.0).contains(&m)));
        assert!(a.series.stderr.iter().all(|&s| s >= 0.0));
        assert!(a.sup_mean_tv > 0.0);
        let b = stability_experiment(&cfg).unwrap();
        assert_eq!(a.to_csv(&cfg), b.to_csv(&cfg));

        // serial evaluation of each replica reproduces the parallel means bit for bit
        let (t, w) = cfg.models().unwrap();
        let mu0 = cfg.initial.to_measure(cfg.grid).unwrap();
        let serial: Vec<Vec<f64>> = (0..cfg.replicas)
            .map(|r| stability_series(&t, &w, &mu0, cfg.horizon, 1, replica_seed(cfg.seed, r)))
            .map(|s| s.unwrap().mean)
            .collect();
        let again = TvSeries::from_replicas(serial);
        assert_eq!(again.mean, a.series.mean);
    }

    #[test]
    fn csv_layout() {
        let cfg = small_config();
        let csv = stability_experiment(&cfg).unwrap().to_csv(&cfg);
        let header: Vec<&str> = csv.lines().take_while(|l| l.starts_with('#')).collect();
        assert!(header.contains(&"# status = CERTIFIED"));
        assert!(header.iter().any(|l| l.starts_with("# q = ")));
        let body: Vec<&str> = csv.lines().skip(header.len()).collect();
        assert_eq!(body[0], "step,mean_tv,stderr");
        assert_eq!(body.len(), cfg.horizon + 1);
        assert!(body[1].starts_with("1,"));
    }

    #[test]
    fn uncertified_pair_still_runs() {
        let cfg = ExperimentConfig {
            preset: "laplace-random-walk".into(),
            grid: GridSpec::new(-20.0, 20.0, 201).unwrap(),
            ..small_config()
        };
        let r = stability_experiment(&cfg).unwrap();
        assert!(!r.certified());
        assert!(r.to_csv(&cfg).contains("# status = UNCERTIFIED"));
    }

    #[test]
    fn identical_initials_do_not_fit() {
        let cfg = ExperimentConfig {
            alternate_initial: Some(InitialLaw::PointMass(0.0)),
            ..small_config()
        };
        let r = forgetting_experiment(&cfg).unwrap();
        assert!(r.series.mean.iter().all(|&m| m == 0.0));
        assert_eq!(r.alpha(), None);
        assert_eq!(r.initial_birkhoff, 0.0);
    }

    #[test]
    fn disjoint_initials_warn() {
        let cfg = ExperimentConfig {
            initial: InitialLaw::Uniform { lower: -2.0, upper: 2.0 },
            alternate_initial: Some(InitialLaw::Uniform { lower: -1.0, upper: 3.0 }),
            ..small_config()
        };
        let r = forgetting_experiment(&cfg).unwrap();
        assert_eq!(r.warnings, vec![Warning::InfiniteBirkhoff]);
        assert!(r.initial_birkhoff.is_infinite());
        assert!(r.alpha().unwrap() > 0.0);
    }

    #[test]
    fn decay_fit_recovers_rate() {
        let tv: Vec<f64> = (1..=40).map(|k| 0.5 * (-0.3 * k as f64).exp()).collect();
        let fit = fit_decay(&tv).unwrap();
        assert_relative_eq!(fit.alpha, 0.3, epsilon = 1e-12);
        assert_relative_eq!(fit.r_squared, 1.0, epsilon = 1e-12);
        assert_eq!((fit.first_step, fit.last_step), (6, 40));

        // the window stops at the floor
        let tv: Vec<f64> = (1..=200).map(|k| (-0.5 * k as f64).exp()).collect();
        let fit = fit_decay(&tv).unwrap();
        assert!(tv[fit.last_step - 1] > 1e-10 && tv[fit.last_step] <= 1e-10);

        assert!(fit_decay(&[1.0; 9]).is_none_or(|f| f.alpha == 0.0));
        assert!(fit_decay(&[1.0; 8]).is_none());
    }

    fn remark_models() -> (DiscreteModel, DiscreteModel) {
        small_config().models().unwrap()
    }

    #[test]
    fn telescoping_reconstructs_difference() {
        let (t, w) = remark_models();
        let mu0 = GridMeasure::point_mass(*t.grid(), 0.0);
        let path = t.sample_path(&mu0, 12, 5).unwrap();
        let tel = telescoping_diagnostic(&t, &w, &mu0, &path.observations).unwrap();
        assert_eq!(tel.terms.len(), 12);
        assert!(tel.residual() <= 1e-10, "{}", tel.residual());
        assert!(tel.term_norms().iter().sum::<f64>() >= tel.difference_norm() - 1e-12);

        let one = telescoping_diagnostic(&t, &w, &mu0, &path.observations[..1]).unwrap();
        assert_eq!(one.terms[0], one.difference);

        let same = telescoping_diagnostic(&t, &t, &mu0, &path.observations).unwrap();
        assert!(same.terms.iter().flatten().all(|&v| v == 0.0));

        assert!(telescoping_diagnostic(&t, &w, &mu0, &[0.0; 31]).is_err());
    }

    #[test]
    fn birkhoff_probe_bounded_by_q() {
        let (t, w) = remark_models();
        let probes = default_probes();
        let q = crate::assumptions::check_a1(&t, &w, &probes).unwrap();
        let mu0 = GridMeasure::point_mass(*t.grid(), 0.0);
        let path = t.sample_path(&mu0, 40, 3).unwrap();
        let trace = run_filter(&w, &mu0, &path.observations, ModelTag::Wrong).unwrap();
        let probe = per_step_birkhoff_probe(&t, &trace, &path.observations).unwrap();
        // only the kernel differs here
        assert!(probe.iter().all(|&p| p <= q.kernel + BIRKHOFF_SLACK));
        assert!(probe.iter().any(|&p| p > 0.0));

        let same = run_filter(&t, &mu0, &path.observations, ModelTag::Wrong).unwrap();
        let zero = per_step_birkhoff_probe(&t, &same, &path.observations).unwrap();
        assert!(zero.iter().all(|&p| p == 0.0));

        let exact = run_filter(&t, &mu0, &path.observations, ModelTag::True).unwrap();
        assert!(per_step_birkhoff_probe(&t, &exact, &path.observations).is_err());
    }

    #[test]
    fn moment_probe_examples() {
        let g = GridSpec::new(-2.0, 2.0, 5).unwrap();
        let identity = (0..5)
            .map(|i| (0..5).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        let frozen = DiscreteModel::new(g, identity, Likelihood::custom(|_, _| 1.0)).unwrap();
        let mu0 = GridMeasure::point_mass(g, 0.0);
        let trace = run_filter(&frozen, &mu0, &[0.3; 10], ModelTag::True).unwrap();
        let (t, _) = remark_models();
        let report = certify(&t, &t, 4.0, &default_probes()).unwrap();
        assert_eq!(moment_stability_probe(&trace, &report).max_moment, 1.0);

        let path = t.sample_path(&GridMeasure::point_mass(*t.grid(), 0.0), 50, 1).unwrap();
        let near = GridMeasure::point_mass(*t.grid(), 0.0);
        let far = GridMeasure::point_mass(*t.grid(), 10.0);
        let p0 = moment_stability_probe(
            &run_filter(&t, &near, &path.observations, ModelTag::True).unwrap(),
            &report,
        );
        let p10 = moment_stability_probe(
            &run_filter(&t, &far, &path.observations, ModelTag::True).unwrap(),
            &report,
        );
        assert!(p0.holds() && p10.holds());
        assert_relative_eq!(
            p10.ceiling - p0.ceiling,
            (10.0 * report.c).exp() - 1.0,
            max_relative = 1e-12
        );
    }
}
