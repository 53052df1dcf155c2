use atdlab::eval::{
    exact_values, monte_carlo_values, pct_abs_mean_error, sweep, EvaluationSet, FiniteMdpSimulator, FiniteMdpTask,
    SweepEntry,
};
use atdlab::learners::{LearnerConfig, Schedule, TdConfig};
use atdlab::mdp::{boyan_chain, Policy};
use nalgebra::DVector;
use proptest::prelude::*;

#[test]
fn rollout_standard_error_shrinks_as_inverse_square_root() {
    let (mdp, _) = boyan_chain();
    let policy = Policy::uniform(13, 1);
    let sim = FiniteMdpSimulator { mdp: &mdp, policy: &policy };
    let states: Vec<usize> = (2..13).collect();
    let mean_se = |n: usize| {
        let stats = monte_carlo_values(&sim, &states, n, 1.0, 1000, 5);
        stats.std_errors.iter().sum::<f64>() / states.len() as f64
    };
    let (small, large) = (mean_se(100), mean_se(6400));
    let slope = (large / small).ln() / 64f64.ln();
    assert!((-0.6..=-0.4).contains(&slope), "slope {slope}");

    let truth = exact_values(&mdp, &policy).unwrap();
    let stats = monte_carlo_values(&sim, &states, 6400, 1.0, 1000, 6);
    for (i, &s) in states.iter().enumerate() {
        assert!((stats.means[i] - truth[s]).abs() < 5.0 * stats.std_errors[i] + 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn percentage_error_is_nonnegative_and_zero_at_truth(w in proptest::collection::vec(-20.0f64..20.0, 4)) {
        let (mdp, x) = boyan_chain();
        let v = exact_values(&mdp, &Policy::uniform(13, 1)).unwrap();
        let set = EvaluationSet::exact(&x, &v).unwrap();
        prop_assert!(pct_abs_mean_error(&DVector::from_vec(w), &set).unwrap() >= 0.0);
        let exact_w = DVector::from_vec(vec![-24.0, -16.0, -8.0, 0.0]);
        prop_assert!(pct_abs_mean_error(&exact_w, &set).unwrap() < 1e-12);
    }
}

#[test]
fn sweep_rows_average_their_runs() {
    let (mdp, x) = boyan_chain();
    let policy = Policy::uniform(13, 1);
    let v = exact_values(&mdp, &policy).unwrap();
    let set = EvaluationSet::exact(&x, &v).unwrap();
    let task = FiniteMdpTask::on_policy(mdp, x, policy);
    let entries: Vec<SweepEntry> = [0.01, 0.1]
        .iter()
        .map(|&alpha0| SweepEntry {
            label: "td".into(),
            config: LearnerConfig::Td(TdConfig {
                alpha0,
                lambda: 0.0,
                schedule: Schedule::Constant,
            }),
            param_name: "alpha0".into(),
            param_value: alpha0,
        })
        .collect();
    let seeds = [3, 1, 2];
    let out = sweep(&task, &entries, &seeds, 200, &set, 20).unwrap();
    for (i, row) in out.rows.iter().enumerate() {
        let runs = out.runs_of(i, seeds.len());
        assert_eq!(runs.iter().map(|r| r.seed).collect::<Vec<_>>(), vec![1, 2, 3]);
        let mean = runs.iter().map(|r| r.mean_error()).sum::<f64>() / 3.0;
        let fin = runs.iter().map(|r| r.final_error()).sum::<f64>() / 3.0;
        assert!((row.mean_error - mean).abs() < 1e-12);
        assert!((row.mean_final_error - fin).abs() < 1e-12);
        assert!(runs.iter().all(|r| r.error_curve.len() == 10 && r.error_at(200).is_some()));
    }
}
