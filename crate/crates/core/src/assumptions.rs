//! Numerical certification of the hypotheses behind the stability results.
//!
//! Each checker works on a pair of [`DiscreteModel`]s sharing one grid: the
//! true model `(Q, Psi)` and the wrong model `(P, Xi)`. Suprema over
//! observations are taken over a finite probe set, always augmented with the
//! node values of the observation maps (where Laplace-type likelihood ratios
//! have their kinks).
//!
//! | check       | quantity                                                   |
//! |-------------|------------------------------------------------------------|
//! | [`check_a1`] | `q = ln sup (Q Psi)/(P Xi) + ln sup (P Xi)/(Q Psi)`       |
//! | [`check_a2`] | `C_R`, worst ratio of two rows inside the ball of radius R |
//! | [`check_a3`] | positivity of both likelihoods                            |
//! | [`check_a4`] | exponential drift constants `rho < 1` and `K`             |
//! | [`check_a5`] | `delta`, spread of the likelihood across states           |

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::filter::filter_step;
use crate::measure::{exp_moment, GridMeasure, GridSpec};
use crate::model::{replica_seed, DiscreteModel, ModelSpec};

/// Ratios above this make a constant useless; reported as [`Error::UnboundedRatio`].
pub const RATIO_CEILING: f64 = 1e12;

/// `C_R` above this flags weak local mixing.
pub const WEAK_MIXING: f64 = 1e6;

/// Candidate exponents for the drift condition, largest first.
pub const C_SCAN: [f64; 5] = [0.5, 0.25, 0.1, 0.05, 0.01];

/// Running-max stabilization threshold for the adaptive probe extension.
pub const PROBE_STABILITY: f64 = 1e-3;

/// `count` evenly spaced observations on `[-half_width, half_width]`.
pub fn probe_grid(half_width: f64, count: usize) -> Vec<f64> {
    let count = count.max(2);
    let step = 2.0 * half_width / (count - 1) as f64;
    (0..count).map(|k| -half_width + k as f64 * step).collect()
}

/// Probe set used by the experiments: `[-40, 40]` in steps of 0.1.
pub fn default_probes() -> Vec<f64> {
    probe_grid(40.0, 801)
}

fn with_offsets(probes: &[f64], models: &[&DiscreteModel]) -> Vec<f64> {
    let mut out = probes.to_vec();
    for m in models {
        if let Some(offsets) = m.likelihood_model().offsets() {
            out.extend_from_slice(offsets);
        }
    }
    out
}

fn same_grid(a: &DiscreteModel, b: &DiscreteModel) -> Result<()> {
    if a.grid() != b.grid() {
        return Err(Error::GridMismatch);
    }
    Ok(())
}

/// Range `(min, max)` of `num / den` over index pairs, skipping `0/0`.
/// A zero against a positive entry yields an unbounded range.
fn ratio_range(pairs: impl Iterator<Item = (f64, f64)>) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = 0.0_f64;
    for (a, b) in pairs {
        match (a > 0.0, b > 0.0) {
            (false, false) => {}
            (true, true) => {
                let r = a / b;
                lo = lo.min(r);
                hi = hi.max(r);
            }
            (true, false) => hi = f64::INFINITY,
            (false, true) => lo = 0.0,
        }
    }
    if lo > hi {
        (1.0, 1.0)
    } else {
        (lo, hi)
    }
}

fn log_oscillation(what: &'static str, (lo, hi): (f64, f64)) -> Result<f64> {
    let worst = hi.max(1.0 / lo);
    if !(worst <= RATIO_CEILING) {
        return Err(Error::UnboundedRatio { what, ratio: worst });
    }
    Ok((hi.ln() - lo.ln()).max(0.0))
}

/// Perturbation size and its split into kernel and likelihood parts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbationBound {
    pub q: f64,
    pub kernel: f64,
    pub likelihood: f64,
}

/// Two-sided log-supremum discrepancy between `(Q, Psi)` and `(P, Xi)`.
///
/// The supremum of the product ratio factorizes, so
/// `q = [ln max Q/P - ln min Q/P] + [ln max Psi/Xi - ln min Psi/Xi]`.
pub fn check_a1(
    true_model: &DiscreteModel,
    wrong_model: &DiscreteModel,
    probes: &[f64],
) -> Result<PerturbationBound> {
    same_grid(true_model, wrong_model)?;
    if probes.is_empty() {
        return Err(Error::InvalidArgument("observation probe set is empty".into()));
    }
    let kernel_range = ratio_range(
        true_model
            .rows()
            .flatten()
            .copied()
            .zip(wrong_model.rows().flatten().copied()),
    );
    let kernel = log_oscillation("kernel", kernel_range)?;

    let ys = with_offsets(probes, &[true_model, wrong_model]);
    let n = true_model.states();
    let (mut lt, mut lw) = (vec![0.0; n], vec![0.0; n]);
    let mut lo = f64::INFINITY;
    let mut hi = 0.0_f64;
    for &y in &ys {
        true_model.likelihood_vector(y, &mut lt);
        wrong_model.likelihood_vector(y, &mut lw);
        let (a, b) = ratio_range(lt.iter().copied().zip(lw.iter().copied()));
        lo = lo.min(a);
        hi = hi.max(b);
    }
    let likelihood = log_oscillation("likelihood", (lo, hi))?;
    Ok(PerturbationBound { q: kernel + likelihood, kernel, likelihood })
}

/// Local mixing constant on the ball of radius `radius`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixingBound {
    pub radius: f64,
    pub c_r: f64,
    /// `c_r` above [`WEAK_MIXING`].
    pub weak: bool,
}

/// `C_R = max Q(x0, x') / Q(v0, x')` (and the same for `P`) over grid nodes with
/// `|x0|, |v0|, |x'| <= R`.
pub fn check_a2(
    true_model: &DiscreteModel,
    wrong_model: &DiscreteModel,
    radius: f64,
) -> Result<MixingBound> {
    same_grid(true_model, wrong_model)?;
    let grid = true_model.grid();
    let inside: Vec<usize> = (0..grid.points())
        .filter(|&i| grid.node(i).abs() <= radius)
        .collect();
    if inside.is_empty() {
        return Err(Error::InvalidArgument(format!("no grid node within radius {radius}")));
    }
    let mut c_r = 1.0_f64;
    for model in [true_model, wrong_model] {
        for &j in &inside {
            let column = inside.iter().map(|&i| model.transition(i, j));
            let (lo, hi) = column.fold((f64::INFINITY, 0.0_f64), |(lo, hi), p| {
                (lo.min(p), hi.max(p))
            });
            if hi == 0.0 {
                continue;
            }
            let ratio = if lo > 0.0 { hi / lo } else { f64::INFINITY };
            if !(ratio <= RATIO_CEILING) {
                return Err(Error::UnboundedRatio { what: "mixing", ratio });
            }
            c_r = c_r.max(ratio);
        }
    }
    Ok(MixingBound { radius, c_r, weak: c_r > WEAK_MIXING })
}

/// Both likelihoods strictly positive on every node and probe.
pub fn check_a3(true_model: &DiscreteModel, wrong_model: &DiscreteModel, probes: &[f64]) -> bool {
    let ys = with_offsets(probes, &[true_model, wrong_model]);
    [true_model, wrong_model].iter().all(|m| {
        let mut l = vec![0.0; m.states()];
        ys.iter().all(|&y| {
            m.likelihood_vector(y, &mut l);
            l.iter().all(|&v| v > 0.0)
        })
    })
}

/// Constants of the exponential drift condition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriftBound {
    pub c: f64,
    pub radius: f64,
    /// `max_{|x| >= R} E_x exp(c|X_1|) / exp(c|x|)`, over both kernels.
    pub rho: f64,
    /// `max_{|x| <= R} E_x exp(c|X_1|)`, over both kernels.
    pub k: f64,
    /// Node attaining `rho`.
    pub witness: f64,
}

fn drift_constants(models: [&DiscreteModel; 2], c: f64, radius: f64) -> Result<DriftBound> {
    let grid = models[0].grid();
    let abs: Vec<f64> = grid.nodes().map(f64::abs).collect();
    if !abs.iter().any(|&a| a >= radius) {
        return Err(Error::InvalidArgument(format!(
            "radius {radius} leaves no grid node outside the ball"
        )));
    }
    let mut rho = 0.0_f64;
    let mut witness = f64::NAN;
    let mut k = 0.0_f64;
    for model in models {
        for (i, row) in model.rows().enumerate() {
            let ai = abs[i];
            if ai >= radius {
                let r: f64 = row.iter().zip(&abs).map(|(p, a)| p * (c * (a - ai)).exp()).sum();
                if r > rho {
                    rho = r;
                    witness = grid.node(i);
                }
            }
            if ai <= radius {
                let m: f64 = row.iter().zip(&abs).map(|(p, a)| p * (c * a).exp()).sum();
                k = k.max(m);
            }
        }
    }
    Ok(DriftBound { c, radius, rho, k, witness })
}

/// Drift constants for a given exponent `c` and radius `R`; fails when
/// `rho >= 1`.
pub fn check_a4(
    true_model: &DiscreteModel,
    wrong_model: &DiscreteModel,
    c: f64,
    radius: f64,
) -> Result<DriftBound> {
    same_grid(true_model, wrong_model)?;
    if !(c > 0.0) {
        return Err(Error::InvalidArgument(format!("exponent c = {c} must be positive")));
    }
    let bound = drift_constants([true_model, wrong_model], c, radius)?;
    if bound.rho >= 1.0 {
        return Err(Error::RecurrenceFailure { witness: bound.witness, ratio: bound.rho });
    }
    Ok(bound)
}

/// Tries the exponents of [`C_SCAN`] from largest to smallest and returns the
/// first that certifies `rho < 1`. On failure returns the error for the
/// smallest exponent.
pub fn certify_a4(
    true_model: &DiscreteModel,
    wrong_model: &DiscreteModel,
    radius: f64,
) -> Result<DriftBound> {
    let mut last = None;
    for c in C_SCAN {
        match check_a4(true_model, wrong_model, c, radius) {
            Ok(bound) => return Ok(bound),
            Err(e @ Error::RecurrenceFailure { .. }) => last = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last.expect("scan is nonempty"))
}

/// Outcome of the drift-margin check on the continuous specs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarginReport {
    pub holds: bool,
    /// Smallest `|x|` beyond which every grid node satisfies
    /// `|x + b(x)| <= |x| - r` for both drifts.
    pub threshold: Option<f64>,
    /// `min (|x| - |x + b(x)|)` over nodes beyond the threshold, both drifts.
    pub margin: f64,
    pub bounded_image: bool,
    pub zero_mean: bool,
    /// Smallest (over both signal noises) supremum of admissible exponential
    /// moment exponents.
    pub exp_moment_limit: Option<f64>,
}

/// Checks the inward-drift margin `|x + b(x)| v |x + b~(x)| <= |x| - r` for
/// large `|x|` on the grid, plus the noise clauses (zero mean, some finite
/// exponential moment). "Large" means the threshold sits in the inner half of
/// the grid's reach.
pub fn check_a4prime(
    true_spec: &ModelSpec,
    wrong_spec: &ModelSpec,
    grid: &GridSpec,
    r: f64,
) -> MarginReport {
    let mut nodes: Vec<f64> = grid.nodes().collect();
    nodes.sort_by(|a, b| b.abs().total_cmp(&a.abs()));
    let reach = nodes[0].abs();

    let image = |x: f64| {
        let a = (x + true_spec.drift.eval(x)).abs();
        let b = (x + wrong_spec.drift.eval(x)).abs();
        a.max(b)
    };
    let bounded_image = nodes.iter().all(|&x| image(x).is_finite());

    // walk |x| levels from the outside in; the threshold is the last level
    // before the first failure
    let mut threshold = None;
    let mut margin = f64::INFINITY;
    for level in nodes.chunk_by(|a, b| a.abs() == b.abs()) {
        let slack = level.iter().map(|&x| x.abs() - image(x)).fold(f64::INFINITY, f64::min);
        if slack < r - 1e-12 {
            break;
        }
        threshold = Some(level[0].abs());
        margin = margin.min(slack);
    }
    if threshold.is_none() {
        margin = f64::NAN;
    }
    let drift_ok = threshold.is_some_and(|t| t <= 0.5 * reach);

    let zero_mean = [&true_spec.signal_noise, &wrong_spec.signal_noise]
        .iter()
        .all(|d| d.mean().is_some_and(|m| m.abs() <= 1e-6));
    let limits = [
        true_spec.signal_noise.exp_moment_limit(),
        wrong_spec.signal_noise.exp_moment_limit(),
    ];
    let exp_moment_limit = match limits {
        [Some(a), Some(b)] => Some(a.min(b)),
        _ => None,
    };
    let holds =
        drift_ok && bounded_image && zero_mean && exp_moment_limit.is_some_and(|e| e > 0.0);
    MarginReport {
        holds,
        threshold,
        margin,
        bounded_image,
        zero_mean,
        exp_moment_limit,
    }
}

/// Observation-influence constant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObservationBound {
    pub delta: f64,
    /// `(1 + delta) * rho < 1`.
    pub product_ok: bool,
    /// Largest `|y|` probed.
    pub probe_reach: f64,
}

fn likelihood_spread(models: &[&DiscreteModel], ys: &[f64]) -> f64 {
    let mut worst = 1.0_f64;
    for m in models {
        let mut l = vec![0.0; m.states()];
        for &y in ys {
            m.likelihood_vector(y, &mut l);
            let (lo, hi) = l
                .iter()
                .fold((f64::INFINITY, 0.0_f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
            let r = if lo > 0.0 { hi / lo } else { f64::INFINITY };
            worst = worst.max(r);
        }
    }
    worst - 1.0
}

/// `delta = max_y max_i L(i, y) / min_i L(i, y) - 1` over both models and the
/// probes, and the product condition against `rho`.
pub fn check_a5(
    true_model: &DiscreteModel,
    wrong_model: &DiscreteModel,
    probes: &[f64],
    rho: f64,
) -> ObservationBound {
    let ys = with_offsets(probes, &[true_model, wrong_model]);
    let delta = likelihood_spread(&[true_model, wrong_model], &ys);
    ObservationBound {
        delta,
        product_ok: (1.0 + delta) * rho < 1.0,
        probe_reach: ys.iter().fold(0.0_f64, |m, y| m.max(y.abs())),
    }
}

/// [`check_a5`] on `[-W, W]` (step 0.1), doubling `W` from `initial_reach`
/// until `delta` moves by at most [`PROBE_STABILITY`].
pub fn check_a5_adaptive(
    true_model: &DiscreteModel,
    wrong_model: &DiscreteModel,
    rho: f64,
    initial_reach: f64,
) -> ObservationBound {
    let probes_for = |w: f64| probe_grid(w, (20.0 * w) as usize + 1);
    let mut reach = initial_reach.max(1.0);
    let mut current = check_a5(true_model, wrong_model, &probes_for(reach), rho);
    for _ in 0..10 {
        reach *= 2.0;
        let next = check_a5(true_model, wrong_model, &probes_for(reach), rho);
        let settled = (next.delta - current.delta).abs() <= PROBE_STABILITY;
        current = next;
        if settled {
            break;
        }
    }
    current
}

/// One-step growth of the exponential moment under the conditional kernel:
/// `exp_moment(mu Q^y, c) / exp_moment(mu, c)`.
pub fn conditional_moment_factor(
    model: &DiscreteModel,
    mu: &GridMeasure,
    y: f64,
    c: f64,
) -> Result<f64> {
    let (post, _) = filter_step(model, mu, y)?;
    Ok(exp_moment(&post, c) / exp_moment(mu, c))
}

/// Certified constants for a (true, wrong) pair, with a flag per hypothesis.
#[derive(Debug, Clone, PartialEq)]
pub struct AssumptionReport {
    pub q: f64,
    pub q_kernel: f64,
    pub q_likelihood: f64,
    pub a1_ok: bool,
    pub radius: f64,
    pub c_r: f64,
    pub a2_ok: bool,
    pub a3_ok: bool,
    pub c: f64,
    pub rho: f64,
    pub k: f64,
    pub a4_ok: bool,
    pub delta: f64,
    pub rho_prime: f64,
    pub k_prime: f64,
    pub a5_product_ok: bool,
}

impl AssumptionReport {
    pub fn certified(&self) -> bool {
        self.a1_ok && self.a2_ok && self.a3_ok && self.a4_ok && self.a5_product_ok
    }

    /// Bound on every `exp_moment(mu_n, c)` along a filter run started at
    /// `mu0`: `K' / (1 - rho') + exp_moment(mu0, c)`.
    pub fn moment_ceiling(&self, mu0: &GridMeasure) -> f64 {
        self.k_prime / (1.0 - self.rho_prime) + exp_moment(mu0, self.c)
    }

    /// `name = value` lines.
    pub fn to_key_values(&self) -> String {
        let mut out = String::new();
        let rows: [(&str, String); 17] = [
            ("certified", self.certified().to_string()),
            ("q", self.q.to_string()),
            ("q_kernel", self.q_kernel.to_string()),
            ("q_likelihood", self.q_likelihood.to_string()),
            ("a1_ok", self.a1_ok.to_string()),
            ("R", self.radius.to_string()),
            ("C_R", self.c_r.to_string()),
            ("a2_ok", self.a2_ok.to_string()),
            ("a3_ok", self.a3_ok.to_string()),
            ("c", self.c.to_string()),
            ("rho", self.rho.to_string()),
            ("K", self.k.to_string()),
            ("a4_ok", self.a4_ok.to_string()),
            ("delta", self.delta.to_string()),
            ("rho_prime", self.rho_prime.to_string()),
            ("K_prime", self.k_prime.to_string()),
            ("a5_product_ok", self.a5_product_ok.to_string()),
        ];
        for (k, v) in rows {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}

/// Runs every check and collects the constants. Failures are recorded in the
/// flags rather than returned, so a report always exists.
pub fn certify(
    true_model: &DiscreteModel,
    wrong_model: &DiscreteModel,
    radius: f64,
    probes: &[f64],
) -> Result<AssumptionReport> {
    same_grid(true_model, wrong_model)?;
    let (q, q_kernel, q_likelihood, a1_ok) = match check_a1(true_model, wrong_model, probes) {
        Ok(b) => (b.q, b.kernel, b.likelihood, true),
        Err(Error::UnboundedRatio { .. }) => (f64::INFINITY, f64::NAN, f64::NAN, false),
        Err(e) => return Err(e),
    };
    let (c_r, a2_ok) = match check_a2(true_model, wrong_model, radius) {
        Ok(m) => (m.c_r, true),
        Err(Error::UnboundedRatio { ratio, .. }) => (ratio, false),
        Err(e) => return Err(e),
    };
    let a3_ok = check_a3(true_model, wrong_model, probes);
    let drift = match certify_a4(true_model, wrong_model, radius) {
        Ok(d) => d,
        Err(Error::RecurrenceFailure { .. }) => {
            let c = C_SCAN[C_SCAN.len() - 1];
            drift_constants([true_model, wrong_model], c, radius)?
        }
        Err(e) => return Err(e),
    };
    let a4_ok = drift.rho < 1.0;
    let reach = probes.iter().fold(1.0_f64, |m, y| m.max(y.abs()));
    let obs = check_a5_adaptive(true_model, wrong_model, drift.rho, reach);
    Ok(AssumptionReport {
        q,
        q_kernel,
        q_likelihood,
        a1_ok,
        radius,
        c_r,
        a2_ok,
        a3_ok,
        c: drift.c,
        rho: drift.rho,
        k: drift.k,
        a4_ok,
        delta: obs.delta,
        rho_prime: drift.rho * (1.0 + obs.delta),
        k_prime: drift.k * (1.0 + obs.delta),
        a5_product_ok: a4_ok && obs.product_ok,
    })
}

/// Empirical exponential moment of the time to enter `|x| <= radius`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HittingTimeMoment {
    /// Sample mean of `exp(lambda * tau)`.
    pub mean: f64,
    pub mean_tau: f64,
    /// Paths that had not entered the ball after `max_steps`.
    pub censored: usize,
}

/// Simulates `paths` trajectories of the continuous model from `start` and
/// averages `exp(lambda * tau)`, `tau = inf { t >= 0 : |X_t| <= radius }`.
pub fn hitting_time_moment(
    spec: &ModelSpec,
    start: f64,
    radius: f64,
    lambda: f64,
    paths: usize,
    max_steps: usize,
    seed: u64,
) -> HittingTimeMoment {
    let mut sum = 0.0;
    let mut sum_tau = 0.0;
    let mut censored = 0;
    for p in 0..paths {
        let mut rng = ChaCha8Rng::seed_from_u64(replica_seed(seed, p));
        let mut x = start;
        let mut t = 0;
        while x.abs() > radius && t < max_steps {
            x = x + spec.drift.eval(x) + spec.signal_noise.sample(&mut rng);
            t += 1;
        }
        if x.abs() > radius {
            censored += 1;
        }
        sum += (lambda * t as f64).exp();
        sum_tau += t as f64;
    }
    HittingTimeMoment {
        mean: sum / paths as f64,
        mean_tau: sum_tau / paths as f64,
        censored,
    }
}
