use filterlab_core::filter::{multi_step, multi_step_with_evidence, run_filter, ModelTag};
use filterlab_core::measure::{normalize, tv_distance, GridMeasure, GridSpec};
use filterlab_core::model::{DiscreteModel, Likelihood};
use proptest::prelude::*;

#[derive(Debug, Clone)]
struct Chain {
    rows: Vec<Vec<f64>>,
    lik: Vec<Vec<f64>>, // lik[state][observation symbol]
    mu0: Vec<f64>,
    obs: Vec<usize>,
}

fn chain() -> impl Strategy<Value = Chain> {
    (2usize..=3, 1usize..=6).prop_flat_map(|(n, len)| {
        (
            prop::collection::vec(prop::collection::vec(0.01f64..1.0, n), n),
            prop::collection::vec(prop::collection::vec(0.01f64..1.0, 3), n),
            prop::collection::vec(0.01f64..1.0, n),
            prop::collection::vec(0usize..3, len),
        )
            .prop_map(|(rows, lik, mu0, obs)| {
                let rows = rows
                    .into_iter()
                    .map(|r| {
                        let s: f64 = r.iter().sum();
                        r.into_iter().map(|v| v / s).collect()
                    })
                    .collect();
                Chain { rows, lik, mu0, obs }
            })
    })
}

fn build(c: &Chain) -> (DiscreteModel, GridMeasure, Vec<f64>) {
    let n = c.rows.len();
    let grid = GridSpec::new(0.0, 1.0, n).unwrap();
    let table = c.lik.clone();
    let model = DiscreteModel::new(
        grid,
        c.rows.clone(),
        Likelihood::custom(move |i, y: f64| table[i][y as usize]),
    )
    .unwrap();
    let mu0 = normalize(grid, c.mu0.clone()).unwrap().0;
    let obs = c.obs.iter().map(|&o| o as f64).collect();
    (model, mu0, obs)
}

// Joint weight of every state path, summed by final state.
fn brute_force(c: &Chain, mu0: &[f64]) -> Vec<f64> {
    let n = c.rows.len();
    let len = c.obs.len();
    let mut out = vec![0.0; n];
    let total_paths = n.pow(len as u32 + 1);
    for code in 0..total_paths {
        let mut states = Vec::with_capacity(len + 1);
        let mut rest = code;
        for _ in 0..=len {
            states.push(rest % n);
            rest /= n;
        }
        let mut w = mu0[states[0]];
        for k in 0..len {
            w *= c.rows[states[k]][states[k + 1]] * c.lik[states[k + 1]][c.obs[k]];
        }
        out[states[len]] += w;
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn filter_equals_path_enumeration(c in chain()) {
        let (model, mu0, obs) = build(&c);
        let trace = run_filter(&model, &mu0, &obs, ModelTag::True).unwrap();
        let joint = brute_force(&c, mu0.weights());
        let evidence: f64 = joint.iter().sum();
        let oracle = normalize(*mu0.grid(), joint).unwrap().0;
        prop_assert!(tv_distance(trace.last(), &oracle).unwrap() <= 1e-12);
        let rel = (trace.log_evidence().exp() - evidence).abs() / evidence;
        prop_assert!(rel <= 1e-10);
    }

    #[test]
    fn flow_property(c in chain(), split in 0usize..7) {
        let (model, mu0, obs) = build(&c);
        let split = split.min(obs.len());
        let (whole, ev) = multi_step_with_evidence(&model, &mu0, &obs).unwrap();
        let (head, ev1) = multi_step_with_evidence(&model, &mu0, &obs[..split]).unwrap();
        let (tail, ev2) = multi_step_with_evidence(&model, &head, &obs[split..]).unwrap();
        prop_assert!(tv_distance(&whole, &tail).unwrap() <= 1e-12);
        prop_assert!((ev - (ev1 + ev2)).abs() <= 1e-10);
    }

    #[test]
    fn filter_outputs_are_probability_measures(c in chain()) {
        let (model, mu0, obs) = build(&c);
        let out = multi_step(&model, &mu0, &obs).unwrap();
        let mass: f64 = out.weights().iter().sum();
        prop_assert!((mass - 1.0).abs() <= 1e-12);
        prop_assert!(out.weights().iter().all(|&w| w >= 0.0));
    }

    #[test]
    fn filters_from_equal_measures_agree(c in chain()) {
        let (model, mu0, obs) = build(&c);
        let a = run_filter(&model, &mu0, &obs, ModelTag::True).unwrap();
        let b = run_filter(&model, &mu0.clone(), &obs, ModelTag::Wrong).unwrap();
        prop_assert_eq!(a.measures, b.measures);
    }
}

#[test]
fn evidence_of_ten_steps_on_four_states() {
    let c = Chain {
        rows: vec![
            vec![0.4, 0.3, 0.2, 0.1],
            vec![0.1, 0.4, 0.3, 0.2],
            vec![0.2, 0.1, 0.4, 0.3],
            vec![0.3, 0.2, 0.1, 0.4],
        ],
        lik: vec![
            vec![0.9, 0.05, 0.05],
            vec![0.1, 0.8, 0.1],
            vec![0.2, 0.2, 0.6],
            vec![1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
        ],
        mu0: vec![0.25; 4],
        obs: vec![0, 1, 2, 2, 1, 0, 0, 1, 2, 1],
    };
    let (model, mu0, obs) = build(&c);
    let trace = run_filter(&model, &mu0, &obs, ModelTag::True).unwrap();
    let joint = brute_force(&c, mu0.weights());
    let evidence: f64 = joint.iter().sum();
    for i in 1..=obs.len() {
        let partial = Chain { obs: c.obs[..i].to_vec(), ..c.clone() };
        let e: f64 = brute_force(&partial, mu0.weights()).iter().sum();
        let got = trace.log_evidence_until(i).exp();
        assert!((got - e).abs() / e <= 1e-10);
        let ratio = trace.step_ratio(i);
        let prev = if i == 1 { 1.0 } else { trace.log_evidence_until(i - 1).exp() };
        assert!((ratio - prev / got).abs() / ratio <= 1e-10);
    }
    assert!((trace.log_evidence().exp() - evidence).abs() / evidence <= 1e-10);
}
