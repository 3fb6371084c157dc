//! Monte Carlo signatures of the stability and forgetting results, at reduced
//! replica counts.

use filterlab_core::experiments::{
    forgetting_experiment, stability_experiment, sweep_experiment, ExperimentConfig, Warning,
};
use filterlab_core::model::InitialLaw;
use filterlab_core::stats::mann_kendall;

fn remark() -> ExperimentConfig {
    ExperimentConfig {
        perturbation_scale: 0.01,
        observation_shift: 0.01,
        replicas: 100,
        horizon: 150,
        seed: 31,
        ..ExperimentConfig::default()
    }
}

#[test]
fn stability_is_uniform_in_time() {
    let r = stability_experiment(&remark()).unwrap();
    assert!(r.certified());
    let early = r.series.max_until(50);
    let late = r.series.max_until(150);
    assert!(late <= 1.5 * early, "early {early}, late {late}");
}

#[test]
fn doubling_the_perturbation_at_most_quadruples_the_error() {
    let cfg = ExperimentConfig { horizon: 60, ..remark() };
    let reports = sweep_experiment(&cfg, &[1.0, 2.0]).unwrap();
    let ratio = reports[1].sup_mean_tv / reports[0].sup_mean_tv;
    assert!((1.0..=4.0).contains(&ratio), "ratio {ratio}");
    // grid offsets make the discretized q only approximately linear in the shift
    assert!((reports[1].q / reports[0].q - 2.0).abs() < 1e-3);
}

fn forgetting(initial: InitialLaw, alternate: InitialLaw) -> ExperimentConfig {
    ExperimentConfig {
        horizon: 100,
        replicas: 100,
        seed: 77,
        initial,
        alternate_initial: Some(alternate),
        ..ExperimentConfig::default()
    }
}

#[test]
fn forgetting_from_disjoint_uniforms() {
    let cfg = forgetting(
        InitialLaw::Uniform { lower: -2.0, upper: 2.0 },
        InitialLaw::Uniform { lower: -1.0, upper: 3.0 },
    );
    let r = forgetting_experiment(&cfg).unwrap();
    assert_eq!(r.warnings, vec![Warning::InfiniteBirkhoff]);
    let fit = r.fit.unwrap();
    assert!(fit.alpha > 0.0);
    let window = &r.series.mean[fit.first_step - 1..fit.last_step];
    let logs: Vec<f64> = window.iter().map(|m| m.ln()).collect();
    assert!(mann_kendall(&logs).decreasing());
}

#[test]
fn decay_rate_does_not_depend_on_the_initial_pair() {
    let near = forgetting_experiment(&forgetting(
        InitialLaw::Laplace { center: 0.0, scale: 1.0 },
        InitialLaw::Laplace { center: 1.0, scale: 1.0 },
    ))
    .unwrap();
    let far = forgetting_experiment(&forgetting(
        InitialLaw::Laplace { center: 0.0, scale: 1.0 },
        InitialLaw::Laplace { center: 3.0, scale: 1.0 },
    ))
    .unwrap();
    assert!(far.initial_birkhoff > near.initial_birkhoff);
    assert!(far.series.mean[0] > near.series.mean[0]);
    let (a, b) = (near.alpha().unwrap(), far.alpha().unwrap());
    assert!((a - b).abs() <= 0.25 * a.max(b), "alpha {a} vs {b}");
}
