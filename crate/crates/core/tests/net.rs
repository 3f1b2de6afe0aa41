use dafd::cost::count_costs;
use dafd::data::{gen_shapes, ShapeKind};
use dafd::net::{
    build_network, build_task, evaluate, evaluate_fused, fit, loss_and_grad, median_bandwidths, mmd_loss, Arch,
    Batch, LayerSpec, Mode, NetSpec, Network, Partition, TaskData, TaskSpec, TrainConfig,
};
use dafd::tensor::{grad_check, softmax_xent, Tensor4};
use dafd::DomainId;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_spec(arch: Arch) -> NetSpec {
    NetSpec {
        arch,
        input: [1, 6, 6],
        layers: vec![
            LayerSpec::conv(3, 3, 1, 1),
            LayerSpec::relu(),
            LayerSpec::conv(3, 3, 1, 1),
            LayerSpec::relu(),
            LayerSpec::Pool { size: 2 },
            LayerSpec::Dense { width: 5 },
            LayerSpec::relu(),
        ],
        classes: 3,
        branched: 2,
        k: 4,
        domains: DomainId::pair(),
    }
}

fn images(n: usize, dims: [usize; 3], seed: u64) -> Tensor4<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor4::uniform([n, dims[0], dims[1], dims[2]], 1.0, &mut rng)
}

fn blocks_in(net: &Network<f64>, part: Partition) -> Vec<(String, Vec<f64>)> {
    net.blocks()
        .into_iter()
        .filter(|(i, _)| i.partition == part)
        .map(|(i, v)| (i.name, v))
        .collect()
}

fn small_task() -> TaskData {
    let spec = TaskSpec {
        train_per_class: 24,
        test_per_class: 10,
        ..TaskSpec::default()
    };
    build_task(&spec, 0.25, Mode::SupervisedBoth, 3).unwrap()
}

#[test]
fn partition_counts_follow_the_architecture() {
    let a1 = build_network::<f32>(&NetSpec::toy(Arch::A1), 0).unwrap();
    assert_eq!(a1.partition_counts().per_domain, vec![0, 0]);

    let a2 = build_network::<f32>(&NetSpec::toy(Arch::A2), 0).unwrap();
    let a3 = build_network::<f32>(&NetSpec::toy(Arch::A3), 0).unwrap();
    let costs = count_costs(&a3.branched_cost_specs(), 2).unwrap();
    assert_eq!(a2.partition_counts().per_domain, vec![costs.total.extra_params_regular as usize; 2]);
    assert_eq!(a3.partition_counts().per_domain, vec![costs.total.extra_params_dafd as usize; 2]);
    // Two 3x3 layers, six atoms each.
    assert_eq!(costs.total.extra_params_dafd, 2 * 6 * 9);
    assert_eq!(a1.param_count(), a1.partition_counts().shared);
}

#[test]
fn a2_branch_of_eight_channels_holds_576_weights_per_domain() {
    let spec = NetSpec {
        input: [8, 6, 6],
        layers: vec![LayerSpec::conv(8, 3, 1, 1), LayerSpec::relu()],
        branched: 1,
        ..small_spec(Arch::A2)
    };
    let net = build_network::<f64>(&spec, 1).unwrap();
    let weights: usize = net
        .blocks()
        .iter()
        .filter(|(i, _)| i.partition != Partition::Shared && i.shape.len() == 4)
        .map(|(_, v)| v.len())
        .sum();
    assert_eq!(weights, 1152);
    for d in 0..2 {
        let w: usize = blocks_in(&net, Partition::Domain(d))
            .iter()
            .filter(|(_, v)| v.len() == 576)
            .count();
        assert_eq!(w, 1);
    }
}

#[test]
fn fresh_networks_agree_across_domains() {
    let x = images(4, [1, 18, 18], 5);
    for arch in Arch::ALL {
        let net = build_network::<f64>(&NetSpec::toy(arch), 3).unwrap();
        let a = net.forward_index(&x, 0).unwrap().0;
        let b = net.forward_index(&x, 1).unwrap().0;
        assert_eq!(a, b, "{arch}");
    }
}

#[test]
fn a2_branches_are_independent_parameters() {
    let x = images(4, [1, 18, 18], 5);
    let mut net = build_network::<f64>(&NetSpec::toy(Arch::A2), 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for (info, v) in net.blocks_mut() {
        if info.partition == Partition::Domain(1) {
            let fresh = Tensor4::<f64>::uniform([1, 1, 1, v.len()], 0.5, &mut rng);
            v.copy_from_slice(fresh.data());
        }
    }
    let a = net.forward_index(&x, 0).unwrap().0.features;
    let b = net.forward_index(&x, 1).unwrap().0.features;
    assert!(a.max_abs_diff(&b).unwrap() > 1e-3);
    let untouched = build_network::<f64>(&NetSpec::toy(Arch::A2), 3).unwrap();
    assert_eq!(untouched.forward_index(&x, 0).unwrap().0.features, a);
}

#[test]
fn full_rank_a3_equals_a1() {
    let x = images(6, [1, 18, 18], 8);
    let a1 = build_network::<f64>(&NetSpec::toy(Arch::A1), 4).unwrap();
    let a3 = build_network::<f64>(&NetSpec::toy(Arch::A3).with_k(9), 4).unwrap();
    let y1 = a1.forward_index(&x, 0).unwrap().0.logits;
    for d in 0..2 {
        let y3 = a3.forward_index(&x, d).unwrap().0.logits;
        assert!(y1.max_abs_diff(&y3).unwrap() <= 1e-10);
    }
}

#[test]
fn source_only_loss_leaves_target_gradients_exactly_zero() {
    let x = images(5, [1, 18, 18], 2);
    let y = vec![0, 1, 2, 3, 0];
    for arch in [Arch::A2, Arch::A3] {
        let net = build_network::<f64>(&NetSpec::toy(arch), 6).unwrap();
        let cfg = TrainConfig::default();
        let (_, g) = loss_and_grad(&net, Batch { images: &x, labels: &y }, None, &cfg, &[1.0]).unwrap();
        for (name, v) in blocks_in(&g, Partition::Domain(1)) {
            assert!(v.iter().all(|&e| e == 0.0), "{arch} {name}");
        }
        assert!(blocks_in(&g, Partition::Domain(0)).iter().any(|(_, v)| v.iter().any(|&e| e != 0.0)));
    }
}

#[test]
fn joint_shared_gradient_is_the_sum_of_domain_gradients() {
    let xs = images(5, [1, 18, 18], 2);
    let xt = images(4, [1, 18, 18], 3);
    let ys = vec![0, 1, 2, 3, 0];
    let yt = vec![3, 2, 1, 0];
    for arch in Arch::ALL {
        let net = build_network::<f64>(&NetSpec::toy(arch), 6).unwrap();
        let cfg = TrainConfig::default();
        let (_, joint) = loss_and_grad(
            &net,
            Batch { images: &xs, labels: &ys },
            Some(Batch { images: &xt, labels: &yt }),
            &cfg,
            &[1.0],
        )
        .unwrap();
        let per_domain = |x: &Tensor4<f64>, y: &[usize], d: usize| {
            let (out, cache) = net.forward_index(x, d).unwrap();
            let (_, dl) = softmax_xent(&out.logits, y).unwrap();
            let mut g = net.zeros_like();
            net.backward(&cache, Some(&dl), None, &mut g).unwrap();
            g
        };
        let gs = per_domain(&xs, &ys, 0);
        let gt = per_domain(&xt, &yt, 1);
        let mut worst = 0.0f64;
        for (((j, s), t), (info, _)) in blocks_in(&joint, Partition::Shared)
            .iter()
            .zip(blocks_in(&gs, Partition::Shared))
            .zip(blocks_in(&gt, Partition::Shared))
            .zip(joint.blocks().iter().filter(|(i, _)| i.partition == Partition::Shared))
        {
            assert_eq!(j.0, info.name);
            for ((a, b), c) in j.1.iter().zip(&s.1).zip(&t.1) {
                worst = worst.max((a - (b + c)).abs());
            }
        }
        assert!(worst <= 1e-12, "{arch}: {worst}");
    }
}

#[test]
fn network_gradients_match_central_differences() {
    let xs = images(3, [1, 6, 6], 10);
    let xt = images(3, [1, 6, 6], 11);
    let ys = vec![0, 1, 2];
    let yt = vec![2, 0, 1];
    for arch in Arch::ALL {
        for mode in [Mode::SupervisedBoth, Mode::UnsupervisedTarget] {
            let net = build_network::<f64>(&small_spec(arch), 12).unwrap();
            let cfg = TrainConfig {
                mode,
                mmd_weight: 0.7,
                ..TrainConfig::default()
            };
            let bw = [0.5, 1.5];
            let loss_of = |n: &Network<f64>| {
                loss_and_grad(
                    n,
                    Batch { images: &xs, labels: &ys },
                    Some(Batch { images: &xt, labels: &yt }),
                    &cfg,
                    &bw,
                )
                .unwrap()
                .0
                .loss
            };
            let (_, g) = loss_and_grad(
                &net,
                Batch { images: &xs, labels: &ys },
                Some(Batch { images: &xt, labels: &yt }),
                &cfg,
                &bw,
            )
            .unwrap();
            let params = net.blocks();
            for (b, ((info, point), (_, analytic))) in params.iter().zip(g.blocks()).enumerate() {
                // Source atoms only see the source path; the target atoms
                // psi_s + delta are held fixed by moving delta the other way.
                let twin = info
                    .name
                    .strip_suffix("atoms@0")
                    .and_then(|p| params.iter().position(|(i, _)| i.name == format!("{p}delta@1")));
                let err = grad_check(
                    |p| {
                        let mut n = net.clone();
                        let mut blocks = n.blocks_mut();
                        if let Some(t) = twin {
                            for ((d, &new), &old) in blocks[t].1.iter_mut().zip(p).zip(point) {
                                *d -= new - old;
                            }
                        }
                        blocks[b].1.copy_from_slice(p);
                        drop(blocks);
                        loss_of(&n)
                    },
                    point,
                    &analytic,
                    1e-5,
                )
                .unwrap();
                assert!(err <= 1e-5, "{arch} {mode:?} {}: {err}", info.name);
            }
        }
    }
}

#[test]
fn mmd_matches_closed_form_and_is_symmetric() {
    let s = Tensor4::new([1, 1, 1, 1], vec![0.3]).unwrap();
    let t = Tensor4::new([1, 1, 1, 1], vec![1.1]).unwrap();
    let bw = [0.5, 2.0];
    let m = mmd_loss(&s, &t, &bw).unwrap();
    let d2: f64 = 0.8 * 0.8;
    let expect: f64 = bw.iter().map(|b| 2.0 - 2.0 * (-d2 / (2.0 * b * b)).exp()).sum();
    assert!((m.value - expect).abs() < 1e-14);

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let s = Tensor4::<f64>::uniform([5, 4, 1, 1], 1.0, &mut rng);
    let t = Tensor4::<f64>::uniform([7, 4, 1, 1], 1.0, &mut rng);
    let ab = mmd_loss(&s, &t, &bw).unwrap();
    let ba = mmd_loss(&t, &s, &bw).unwrap();
    assert!((ab.value - ba.value).abs() < 1e-14);
    assert!(mmd_loss(&s, &s, &bw).unwrap().value.abs() < 1e-14);
    assert!(ab.value > 0.0);

    let e = grad_check(|p| mmd_loss(&Tensor4::new(s.dims(), p.to_vec()).unwrap(), &t, &bw).unwrap().value, s.data(), ab.grad_s.data(), 1e-6).unwrap();
    assert!(e <= 1e-5, "grad_s {e}");
    let e = grad_check(|p| mmd_loss(&s, &Tensor4::new(t.dims(), p.to_vec()).unwrap(), &bw).unwrap().value, t.data(), ab.grad_t.data(), 1e-6).unwrap();
    assert!(e <= 1e-5, "grad_t {e}");

    let bws = median_bandwidths(&s, &t, &[1.0, 2.0]);
    assert!((bws[1] - 2.0 * bws[0]).abs() < 1e-12 && bws[0] > 0.0);
}

#[test]
fn untrained_accuracy_is_near_chance_and_tables_cover_every_sample() {
    let test = gen_shapes(&ShapeKind::ALL, 100, 18, 4).unwrap();
    let net = build_network::<f32>(&NetSpec::toy(Arch::A3), 9).unwrap();
    let ev = evaluate(&net, &test, &DomainId::source()).unwrap();
    assert!((0.1..=0.45).contains(&ev.accuracy), "{}", ev.accuracy);
    assert_eq!(ev.table.len(), test.len());
    assert_eq!(ev.total, 400);
    assert_eq!(ev.table.rows[0].features.len(), net.feature_dim());

    let src = DomainId::source();
    let fused = evaluate_fused(&net, &[(&test, &src)]).unwrap();
    assert_eq!(fused.correct, ev.correct);
    let csv = ev.table.to_csv();
    assert_eq!(csv.lines().count(), test.len() + 1);
}

#[test]
fn fit_is_deterministic_and_learns() {
    let task = small_task();
    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 16,
        ..TrainConfig::default()
    };
    let run = || {
        let mut net = build_network::<f32>(&NetSpec::toy(Arch::A3), 1).unwrap();
        let mut steps = Vec::new();
        let s = fit(&mut net, &task, &cfg, |r| steps.push(r.clone()), |_| {}).unwrap();
        (steps, s, net)
    };
    let (a, sa, na) = run();
    let (b, sb, nb) = run();
    assert_eq!(a, b);
    assert_eq!(sa, sb);
    assert_eq!(na, nb);
    assert_eq!(sa.epochs.len(), 3);
    assert_eq!(sa.steps, 2 * task.source_train.len().div_ceil(16));
    let first = a.first().unwrap().metrics.loss_s;
    let last = a.last().unwrap().metrics.loss_s;
    assert!(last < first, "{first} -> {last}");
}

#[test]
fn unsupervised_mode_never_reads_target_labels() {
    let spec = TaskSpec {
        train_per_class: 16,
        test_per_class: 8,
        ..TaskSpec::default()
    };
    let task = build_task(&spec, 1.0, Mode::UnsupervisedTarget, 3).unwrap();
    let mut poisoned = task.clone();
    poisoned.target_train.labels.iter_mut().for_each(|l| *l = (*l + 1) % 4);
    let cfg = TrainConfig {
        epochs: 1,
        batch_size: 16,
        mode: Mode::UnsupervisedTarget,
        mmd_weight: 1.0,
        ..TrainConfig::default()
    };
    let run = |t: &TaskData| {
        let mut net = build_network::<f32>(&NetSpec::toy(Arch::A3), 2).unwrap();
        let mut steps = Vec::new();
        fit(&mut net, t, &cfg, |r| steps.push(r.clone()), |_| {}).unwrap();
        steps
    };
    let a = run(&task);
    assert_eq!(a, run(&poisoned));
    assert!(a.iter().all(|r| r.metrics.loss_t.is_none() && r.metrics.mmd.is_some()));
}
