use dafd::tensor::Activation;
use dafd::theory::checks::dilation_fact1;
use dafd::theory::theorem::{oriented_stack, rotation_epsilon};
use dafd::theory::{
    check_fact1, check_lemma1, check_nonexpansive, commutation_pair, make_displacement, reports_csv, run_sweep,
    run_theorem1, slack_refinement, warp, Check, DisplacementField, FieldKind, FilterSpec, Lattice, Lemma1Config,
    SignalSpec, SweepConfig, WarpDirection,
};

fn lemma_cfg(n: usize, field: FieldKind, seed: u64) -> Lemma1Config {
    Lemma1Config {
        n,
        signal: SignalSpec::gaussian(seed, 0.55),
        w: FilterSpec::Bump { seed: 1000 + seed, scale: -3.0, l1: 1.0 },
        f: FilterSpec::Bump { seed: 2000 + seed, scale: -3.0, l1: 1.0 },
        field,
        activation: Activation::Relu,
        bias: 0.0,
    }
}

#[test]
fn zero_field_commutes_exactly() {
    let cfg = lemma_cfg(64, FieldKind::Zero, 1);
    let r = check_lemma1(&cfg).unwrap();
    assert_eq!(r.measured_error, 0.0);
    assert!(r.pass);
}

#[test]
fn rotation_commutator_is_within_bound_and_grows_with_angle() {
    let small = check_lemma1(&lemma_cfg(128, FieldKind::rotation_degrees(2.0), 3)).unwrap();
    let large = check_lemma1(&lemma_cfg(128, FieldKind::rotation_degrees(10.0), 3)).unwrap();
    assert!(small.pass && large.pass);
    assert!(small.measured_error > 0.0);
    assert!(large.measured_error > small.measured_error);
    assert!(large.theoretical_bound > small.theoretical_bound);
}

#[test]
fn commutation_pair_outputs_share_a_lattice() {
    let cfg = lemma_cfg(64, FieldKind::rotation_degrees(5.0), 2);
    let (a, b) = commutation_pair(
        &cfg.signal.sample(64).unwrap(),
        &cfg.w.sample(64).unwrap(),
        &cfg.f.sample(64).unwrap(),
        &make_displacement(cfg.field).unwrap(),
        Activation::Relu,
        0.0,
    )
    .unwrap();
    assert_eq!(a.lattice(), b.lattice());
    assert!(a.l1_distance(&b).unwrap() > 0.0);
}

#[test]
fn gate_rejects_large_gradients() {
    assert!(make_displacement(FieldKind::rotation_degrees(15.0)).is_err());
    assert!(make_displacement(FieldKind::Dilation { s: 1.3 }).is_err());
    assert!(make_displacement(FieldKind::rotation_degrees(10.0)).is_ok());
}

#[test]
fn quarter_turn_of_a_sampled_signal_is_exact() {
    let field = DisplacementField::unchecked(FieldKind::rotation_degrees(90.0)).unwrap();
    let x = SignalSpec::gaussian(4, 0.5).sample(32).unwrap();
    let y = warp(&x, &field, WarpDirection::Forward).unwrap();
    let turn = |s| warp(s, &field, WarpDirection::Forward).unwrap();
    let back = turn(&turn(&turn(&y)));
    assert!(back.max_abs_diff(&x).unwrap() < 1e-12);
}

#[test]
fn fact1_closed_forms() {
    for deg in [0.0, 2.0, 5.0, 10.0] {
        let field = make_displacement(FieldKind::rotation_degrees(deg)).unwrap();
        let r = check_fact1(&field, Lattice::domain(32)).unwrap();
        assert!(r.pass);
        // Rotations preserve area, so the left side is zero.
        assert!(r.measured_error.abs() < 1e-12);
        if deg == 0.0 {
            assert_eq!(r.theoretical_bound, 0.0);
        }
    }
    for s in [0.85, 0.9, 1.0, 1.1, 1.15] {
        let (lhs, rhs) = dilation_fact1(s);
        assert!(lhs <= rhs + 1e-15, "s={s}: {lhs} > {rhs}");
        assert!((lhs - (s * s - 1.0).abs()).abs() < 1e-12);
    }
}

#[test]
fn nonexpansive_norm_inequalities_hold() {
    for seed in 0..5 {
        let x = SignalSpec::gaussian(seed, 0.55).sample(64).unwrap();
        let w = FilterSpec::Bump { seed: 50 + seed, scale: -3.0, l1: 1.0 }.sample(64).unwrap();
        let (l1, tv) = check_nonexpansive(&x, &w).unwrap();
        assert!(l1.pass && tv.pass, "seed {seed}");
        assert!(l1.measured_error <= l1.theoretical_bound + l1.discretization_slack);
    }
}

#[test]
fn theorem_pipeline_with_zero_fields_is_exactly_zero() {
    let mut stack = oriented_stack(128, SignalSpec::gaussian(0, 0.3), -3.0, &[0.0, 0.0], -0.02);
    for l in &mut stack.layers {
        l.field = FieldKind::Zero;
    }
    let (report, eval) = run_theorem1(&stack).unwrap();
    assert_eq!(eval.measured, 0.0);
    assert_eq!(eval.epsilon, 0.0);
    assert!(report.pass);
}

#[test]
fn theorem_pipeline_corrects_a_single_rotated_layer() {
    let stack = oriented_stack(256, SignalSpec::gaussian(1, 0.45), -3.0, &[10.0], -0.02);
    let (report, eval) = run_theorem1(&stack).unwrap();
    assert!(report.pass, "{report:?}");
    assert!((eval.epsilon - rotation_epsilon(10.0)).abs() < 1e-8);
    assert!(eval.control > eval.measured);
}

#[test]
fn reduced_lemma_sweep_refines() {
    let cfg = SweepConfig {
        degrees: vec![5.0],
        amplitudes: vec![0.05],
        resolutions: vec![64, 128],
        seeds: 2,
        ..SweepConfig::default_for(Check::Lemma1)
    };
    let rows = run_sweep(&cfg).unwrap();
    assert_eq!(rows.len(), 2 * 2 * 2);
    assert!(rows.iter().all(|r| r.pass));
    let (shrinking, pairs) = slack_refinement(&rows, 64, 128);
    assert_eq!(pairs, 4);
    assert!(shrinking >= 3);
    let csv = reports_csv(&rows);
    assert_eq!(csv.lines().count(), rows.len() + 1);
    assert!(csv.starts_with("check,config,n,measured_error,theoretical_bound,discretization_slack,pass,rejected,details"));
}

#[test]
fn sweeps_are_deterministic() {
    let cfg = SweepConfig {
        seeds: 6,
        ..SweepConfig::default_for(Check::Nonexpansive)
    };
    assert_eq!(run_sweep(&cfg).unwrap(), run_sweep(&cfg).unwrap());
    let cfg = SweepConfig::default_for(Check::Fact1);
    let rows = run_sweep(&cfg).unwrap();
    assert!(rows.iter().all(|r| r.pass));
}

#[test]
fn atom_implementability_sweep_passes() {
    let rows = run_sweep(&SweepConfig::default_for(Check::AtomImplementability)).unwrap();
    assert!(!rows.is_empty());
    assert!(rows.iter().all(|r| r.pass || r.is_rejected()), "{rows:?}");
}

#[test]
fn norm_drift_sweep_passes() {
    let cfg = SweepConfig {
        seeds: 1,
        ..SweepConfig::default_for(Check::NormDrift)
    };
    let rows = run_sweep(&cfg).unwrap();
    assert!(rows.iter().all(|r| r.pass), "{rows:?}");
}
