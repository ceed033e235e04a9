use super::*;
use crate::estimators::{delayed_mhe, extended_window, fie, mhe, ExtendedWindowOptions};
use crate::linalg::Matrix;
use crate::models::{batch_reactor, scalar_integrator};
use crate::simulate::{simulate, InputProfile, NoiseSpec};
use crate::solver::{solve_linear_horizon, HorizonProblem, SolverOptions};
use crate::types::{EstimatorKind, HorizonSolution, SolverStats, Termination};
use proptest::prelude::*;

fn v1(x: f64) -> Vector {
    Vector::from_element(1, x)
}

fn scalar_example(a: i64, b: i64) -> DataBatch {
    let len = (b - a + 1) as usize;
    DataBatch {
        t0: a,
        inputs: vec![Vector::zeros(0); len],
        outputs: (a..=b).map(|t| v1((t + 2) as f64)).collect(),
        truth: None,
        meta: Default::default(),
    }
}

fn sequence(start: i64, states: Vec<Vector>, disturbances: Option<Vec<Vector>>) -> EstimateSequence {
    EstimateSequence {
        kind: EstimatorKind::Fie,
        delay: 0,
        start,
        states,
        disturbances,
        config_digest: String::new(),
        label: "test".into(),
    }
}

fn truth_sequence(data: &DataBatch) -> EstimateSequence {
    let tr = data.truth.as_ref().unwrap();
    sequence(data.t0, tr.states.clone(), Some(tr.disturbances.clone()))
}

fn scalar_benchmark(t1: i64) -> EstimateSequence {
    let model = scalar_integrator();
    extended_window(&model, &CostSpec::identity(1, 1), 0, t1, |a, b| Ok(scalar_example(a, b)), &ExtendedWindowOptions::default())
        .unwrap()
        .sequence
}

fn window(data: &DataBatch, a: i64, b: i64) -> HorizonSolution {
    let model = scalar_integrator();
    let (inputs, outputs) = data.window(a, b).unwrap();
    let cost = CostSpec::identity(1, 1);
    solve_linear_horizon(&HorizonProblem { model: &model, start: a, inputs, outputs, cost: &cost, prior: None, options: SolverOptions::default() })
        .unwrap()
}

#[test]
fn performance_of_noise_free_truth_and_empty_interval() {
    let model = batch_reactor();
    let data = simulate(&model, &Vector::from_vec(vec![3.0, 1.0]), &InputProfile::reactor_default(), &NoiseSpec::none(2, 1), 60, 0).unwrap();
    let cost = CostSpec::identity(2, 1);
    let truth = truth_sequence(&data);
    assert_eq!(performance(&model, &truth, &data, &cost, 0, 60).unwrap(), 0.0);
    assert_eq!(performance(&model, &truth, &data, &cost, 17, 17).unwrap(), 0.0);
    // reconstructed disturbances agree with the recorded ones
    let bare = sequence(0, truth.states.clone(), None);
    assert!(performance(&model, &bare, &data, &cost, 0, 60).unwrap() < 1e-20);
    assert!(performance(&model, &truth, &data, &cost, 0, 61).is_err());
}

#[test]
fn benchmark_performance_matches_hand_summation() {
    let model = scalar_integrator();
    let bench = scalar_benchmark(30);
    let data = scalar_example(0, 30);
    let j = performance(&model, &bench, &data, &CostSpec::identity(1, 1), 5, 25).unwrap();
    let ws = bench.disturbances.as_ref().unwrap();
    let hand: f64 = (5..25usize).map(|t| ws[t][0].powi(2) + (t as f64 + 2.0 - bench.states[t][0]).powi(2)).sum();
    assert!((j - hand).abs() < 1e-12);
    // x^∞_t = t + 2 and w^∞_t = 1, so each stage contributes one
    assert!((j - 20.0).abs() < 1e-7);
}

#[test]
fn sse_basics() {
    let model = scalar_integrator();
    let data = simulate(&model, &v1(0.0), &InputProfile::Zero, &NoiseSpec::uniform(vec![1.0], vec![1.0]), 10, 4).unwrap();
    let truth = truth_sequence(&data);
    assert_eq!(sse(&truth, &data, 0, 10).unwrap(), 0.0);
    let mut off = truth.clone();
    off.states[3][0] += 2.0;
    assert_eq!(sse(&off, &data, 3, 3).unwrap(), 4.0);
    assert_eq!(sse(&off, &data, 0, 10).unwrap(), 4.0);
    assert!(matches!(sse(&truth, &data.without_truth(), 0, 10), Err(Error::MissingTruth)));
}

#[test]
fn regret_vanishes_for_benchmark_and_shrinks_with_delay() {
    let model = scalar_integrator();
    let data = scalar_example(0, 30);
    let bench = scalar_benchmark(30);
    let cost = CostSpec::identity(1, 1);
    assert_eq!(regret(&model, &bench, &bench, &data, &cost, 0, 30).unwrap(), 0.0);
    let opts = SolverOptions::default();
    let d0 = delayed_mhe(&model, &data, &cost, 10, 0, &opts).unwrap();
    let d5 = delayed_mhe(&model, &data, &cost, 10, 5, &opts).unwrap();
    let r0 = regret(&model, &d0, &bench, &data, &cost, 5, 25).unwrap();
    let r5 = regret(&model, &d5, &bench, &data, &cost, 5, 25).unwrap();
    assert!(r5 <= r0, "{r5} > {r0}");
}

#[test]
fn benchmark_windows_have_zero_profile() {
    let bench = scalar_benchmark(40);
    let windows: Vec<HorizonSolution> = (0..20)
        .map(|a| HorizonSolution {
            start: a,
            xs: bench.states[a as usize..=(a + 10) as usize].to_vec(),
            ws: bench.disturbances.as_ref().unwrap()[a as usize..(a + 10) as usize].to_vec(),
            cost: 0.0,
            penalty: 0.0,
            stats: SolverStats { iterations: 0, grad_norm: 0.0, termination: Termination::Exact, max_violation: 0.0, trace: vec![] },
        })
        .collect();
    let mut prof = turnpike_profile(&windows, &bench, 1e-3).unwrap();
    assert!(prof.state.iter().flatten().all(|&d| d == 0.0));
    assert!(prof.full.as_ref().unwrap().iter().flatten().all(|&d| d == 0.0));
    assert_eq!(prof.summaries[0].approach_len(), Some(0));
    assert_eq!(prof.summaries[0].leave_len(), Some(0));
    assert!(!fit_exponential_envelope(&mut prof).ok);
}

#[test]
fn scalar_arcs_do_not_depend_on_horizon() {
    let data = scalar_example(0, 60);
    let bench = scalar_benchmark(60);
    let profile = |n: i64| turnpike_profile(&[window(&data, 20, 20 + n)], &bench, 1e-3).unwrap();
    let (short, long) = (profile(16), profile(24));
    let (s, l) = (&short.state[0], &long.state[0]);
    for j in 0..=4 {
        assert!((s[j] - l[j]).abs() < 1e-4, "left arc offset {j}");
        assert!((s[16 - j] - l[24 - j]).abs() < 1e-4, "right arc offset {j}");
    }
    assert!(long.summaries[0].midpoint < 1e-3);
    assert!(s[0] > 0.1 && s[16] > 0.1);
    let mut long = long;
    let env = fit_exponential_envelope(&mut long);
    assert!(env.ok && env.lambda > 0.0 && env.lambda < 1.0);
    assert!(env.relative_residual < 0.1, "{env:?}");
}

#[test]
fn envelope_recovers_exact_exponential() {
    let pts: Vec<(f64, f64)> = (0..12).map(|d| (d as f64, 2.0 * 0.5f64.powi(d))).collect();
    let env = fit_envelope_points(&pts);
    assert!((env.k - 2.0).abs() < 1e-9 && (env.lambda - 0.5).abs() < 1e-9);
    assert!(env.ok && env.residual < 1e-9);
    let growing: Vec<(f64, f64)> = (0..5).map(|d| (d as f64, 1.5f64.powi(d))).collect();
    assert!(!fit_envelope_points(&growing).ok);
    assert!(!fit_envelope_points(&[(0.0, 0.0), (1.0, 0.0)]).ok);
}

#[test]
fn accuracy_bound_is_trivial_for_exact_estimates() {
    let model = scalar_integrator();
    let data = simulate(&model, &v1(1.0), &InputProfile::Zero, &NoiseSpec::none(1, 1), 20, 0).unwrap();
    let one = || Matrix::identity(1, 1);
    let cert = IossCertificate::new(one(), one(), one() * 2.0, one() * 2.0, 0.5).unwrap();
    let b = accuracy_bound(&model, &cert, &truth_sequence(&data), &data, 0, 20, 13).unwrap();
    assert_eq!((b.lhs, b.rhs), (0.0, 0.0));
    let bad = IossCertificate { eta: 1.2, ..cert.clone() };
    assert!(matches!(accuracy_bound(&model, &bad, &truth_sequence(&data), &data, 0, 20, 5), Err(Error::InvalidCertificate(_))));
    assert!(accuracy_bound(&model, &cert, &truth_sequence(&data), &data, 0, 20, 21).is_err());
}

#[test]
fn accuracy_bound_holds_along_scalar_runs() {
    let model = scalar_integrator();
    let one = || Matrix::identity(1, 1);
    let cert = IossCertificate::new(one(), one(), one() * 2.0, one() * 2.0, 0.5).unwrap();
    let data = simulate(&model, &v1(0.0), &InputProfile::Zero, &NoiseSpec::uniform(vec![0.5], vec![1.0]), 40, 9).unwrap();
    let cost = CostSpec::identity(1, 1);
    let opts = SolverOptions::default();
    for est in [
        fie(&model, &data, &cost, &opts).unwrap(),
        mhe(&model, &data, &cost, 10, &opts).unwrap(),
        delayed_mhe(&model, &data, &cost, 10, 5, &opts).unwrap(),
    ] {
        let t2 = est.end();
        for tau in 0..=t2 {
            let b = accuracy_bound(&model, &cert, &est, &data, 0, t2, tau).unwrap();
            assert!(b.holds(), "{} at {tau}: {} > {}", est.label, b.lhs, b.rhs);
        }
    }
}

proptest! {
    #[test]
    fn scalar_certificate_dissipation_holds(e in -1e3f64..1e3, dw in -1e3f64..1e3) {
        // U(x1, x2) = (x1 - x2)^2 with f = x + w, h = x, eta = 0.5, q = r = 2
        let lhs = (e + dw).powi(2);
        prop_assert!(lhs <= 0.5 * e * e + 2.0 * dw * dw + 2.0 * e * e + 1e-9 * (1.0 + lhs));
    }

    #[test]
    fn performance_is_additive(seed in 0u64..1000, a in 0i64..10, b in 10i64..20, c in 20i64..30) {
        let model = batch_reactor();
        let data = simulate(&model, &Vector::from_vec(vec![3.0, 1.0]), &InputProfile::reactor_default(), &NoiseSpec::uniform(vec![0.1, 0.1], vec![0.2]), 30, seed).unwrap();
        let truth = truth_sequence(&data);
        let est = sequence(0, truth.states.iter().map(|x| x.map(|v| v * 1.01 + 0.05)).collect(), None);
        let cost = CostSpec::identity(2, 1);
        let j = |s, t| performance(&model, &est, &data, &cost, s, t).unwrap();
        let total = j(a, c);
        prop_assert!(total >= 0.0);
        prop_assert!((j(a, b) + j(b, c) - total).abs() <= 1e-12 * total.max(1e-300));
    }

    #[test]
    fn envelope_fit_is_scale_equivariant(k in 0.1f64..10.0, lam in 0.1f64..0.9, c in 1e-3f64..1e3, noise in prop::collection::vec(0.8f64..1.25, 10)) {
        let pts: Vec<(f64, f64)> = noise.iter().enumerate().map(|(d, z)| (d as f64, k * lam.powi(d as i32) * z)).collect();
        let scaled: Vec<(f64, f64)> = pts.iter().map(|&(d, v)| (d, c * v)).collect();
        let (e1, e2) = (fit_envelope_points(&pts), fit_envelope_points(&scaled));
        prop_assert!((e2.k / (c * e1.k) - 1.0).abs() < 1e-12);
        prop_assert!((e2.lambda - e1.lambda).abs() < 1e-12);
    }
}
