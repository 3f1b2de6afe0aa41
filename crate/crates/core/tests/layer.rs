use dafd::layer::{init_from_dense, reconstruct_filter, AtomBank, CoeffTensor, DafdLayer};
use dafd::tensor::{
    conv2d_backward, conv2d_bias, depthwise_backward, depthwise_forward, grad_check,
    pointwise_backward, pointwise_forward, ConvSpec, Tensor4,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Direct six-loop correlation with zero padding, written without the crate.
fn naive_conv(x: &Tensor4<f64>, w: &Tensor4<f64>, bias: &[f64], stride: usize, pad: usize) -> Tensor4<f64> {
    let [n, c_in, h, wd] = x.dims();
    let [c_out, _, l, _] = w.dims();
    let ho = (h + 2 * pad - l) / stride + 1;
    let wo = (wd + 2 * pad - l) / stride + 1;
    Tensor4::from_fn([n, c_out, ho, wo], |[b, co, i, j]| {
        let mut s = bias[co];
        for ci in 0..c_in {
            for p in 0..l {
                for q in 0..l {
                    let r = (i * stride + p) as isize - pad as isize;
                    let c = (j * stride + q) as isize - pad as isize;
                    if r >= 0 && c >= 0 && (r as usize) < h && (c as usize) < wd {
                        s += w.get(co, ci, p, q) * x.get(b, ci, r as usize, c as usize);
                    }
                }
            }
        }
        s
    })
}

fn random_layer(rng: &mut ChaCha8Rng, k: usize, c_in: usize, c_out: usize, l: usize, spec: ConvSpec) -> DafdLayer<f64> {
    let atoms = Tensor4::<f64>::uniform([1, 1, k, l * l], 1.0, rng).into_data();
    let a = Tensor4::<f64>::uniform([1, k, c_in, c_out], 1.0, rng).into_data();
    let bias = Tensor4::<f64>::uniform([1, 1, 1, c_out], 0.5, rng).into_data();
    DafdLayer::new(
        AtomBank::new(0, k, l, atoms).unwrap(),
        CoeffTensor::new(k, c_in, c_out, a).unwrap(),
        bias,
        spec,
        2,
    )
    .unwrap()
}

#[test]
fn decomposed_forward_matches_naive_dense_conv() {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let ks = [1, 4, 6, 9];
    let mut worst = 0.0f64;
    for trial in 0..100 {
        let k = ks[trial % 4];
        let stride = 1 + (trial / 4) % 3;
        let l = 3;
        let pad = rng.random_range(0..=1);
        let c_in = rng.random_range(1..=3);
        let c_out = rng.random_range(1..=4);
        let m = rng.random_range(2..=4);
        let h = l - 2 * pad + stride * m;
        let spec = ConvSpec::new(stride, pad).unwrap();
        let mut layer = random_layer(&mut rng, k, c_in, c_out, l, spec);
        let delta = Tensor4::<f64>::uniform([1, 1, k, l * l], 0.3, &mut rng);
        layer.residual_mut(1).unwrap().values_mut().copy_from_slice(delta.data());
        let x = Tensor4::<f64>::uniform([2, c_in, h, h], 1.0, &mut rng);
        for domain in 0..2 {
            let (y, _) = layer.forward(&x, domain).unwrap();
            let w = layer.dense_filter(domain).unwrap();
            let oracle = naive_conv(&x, &w, layer.bias(), stride, pad);
            let lib = conv2d_bias(&x, &w, Some(layer.bias()), spec).unwrap();
            worst = worst.max(y.max_abs_diff(&oracle).unwrap());
            worst = worst.max(lib.max_abs_diff(&oracle).unwrap());
        }
    }
    assert!(worst <= 1e-10, "max deviation {worst}");
}

#[test]
fn full_rank_dense_init_reproduces_dense_outputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let w = Tensor4::<f64>::uniform([5, 3, 3, 3], 1.0, &mut rng);
    let bias = vec![0.1, -0.2, 0.0, 0.3, 0.05];
    let spec = ConvSpec::same(3).unwrap();
    let (layer, err) = DafdLayer::from_dense(&w, bias.clone(), 9, spec, 2).unwrap();
    assert!(err < 1e-10);
    let x = Tensor4::<f64>::uniform([2, 3, 6, 6], 1.0, &mut rng);
    let y = layer.forward(&x, 1).unwrap().0;
    let dense = naive_conv(&x, &w, &bias, 1, 1);
    assert!(y.max_abs_diff(&dense).unwrap() <= 1e-10);
}

#[test]
fn truncated_init_error_is_the_discarded_energy() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let w = Tensor4::<f64>::uniform([4, 4, 3, 3], 1.0, &mut rng);
    for k in 1..=9 {
        let (bank, coeffs, err) = init_from_dense(&w, k).unwrap();
        let approx = reconstruct_filter(&bank, &coeffs).unwrap();
        let direct = w.sub(&approx).unwrap().data().iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((direct - err).abs() <= 1e-9, "k={k}: {direct} vs {err}");
        // Atoms are orthonormal.
        for a in 0..k {
            for b in 0..k {
                let dot: f64 = bank.atom(a).iter().zip(bank.atom(b)).map(|(x, y)| x * y).sum();
                let expect = if a == b { 1.0 } else { 0.0 };
                assert!((dot - expect).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn primitive_gradients_match_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let (k, l, c_in, c_out) = (3, 3, 2, 3);
    let spec = ConvSpec::new(2, 1).unwrap();
    let x = Tensor4::<f64>::uniform([2, c_in, 5, 5], 1.0, &mut rng);
    let atoms = Tensor4::<f64>::uniform([1, 1, k, l * l], 1.0, &mut rng).into_data();
    let m_shape = depthwise_forward(&x, &atoms, k, l, spec).unwrap().dims();
    let probe = Tensor4::<f64>::uniform(m_shape, 1.0, &mut rng);
    let dot = |a: &Tensor4<f64>, b: &Tensor4<f64>| -> f64 { a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum() };

    let (dx, datoms) = depthwise_backward(&x, &atoms, k, l, &probe, spec).unwrap();
    let e = grad_check(
        |p| dot(&depthwise_forward(&Tensor4::new(x.dims(), p.to_vec()).unwrap(), &atoms, k, l, spec).unwrap(), &probe),
        x.data(),
        dx.data(),
        1e-6,
    )
    .unwrap();
    assert!(e <= 1e-5, "depthwise input {e}");
    let e = grad_check(
        |p| dot(&depthwise_forward(&x, p, k, l, spec).unwrap(), &probe),
        &atoms,
        &datoms,
        1e-6,
    )
    .unwrap();
    assert!(e <= 1e-5, "depthwise atoms {e}");

    let m = Tensor4::<f64>::uniform(m_shape, 1.0, &mut rng);
    let coeffs = Tensor4::<f64>::uniform([1, k, c_in, c_out], 1.0, &mut rng).into_data();
    let bias = vec![0.1, 0.2, -0.3];
    let out_shape = pointwise_forward(&m, &coeffs, k, c_in, c_out, &bias).unwrap().dims();
    let probe = Tensor4::<f64>::uniform(out_shape, 1.0, &mut rng);
    let (dm, dcoeffs, dbias) = pointwise_backward(&m, &coeffs, k, c_in, c_out, &probe).unwrap();
    let fwd = |m: &Tensor4<f64>, c: &[f64], b: &[f64]| dot(&pointwise_forward(m, c, k, c_in, c_out, b).unwrap(), &probe);
    for (e, what) in [
        (grad_check(|p| fwd(&Tensor4::new(m_shape, p.to_vec()).unwrap(), &coeffs, &bias), m.data(), dm.data(), 1e-6), "m"),
        (grad_check(|p| fwd(&m, p, &bias), &coeffs, &dcoeffs, 1e-6), "coeffs"),
        (grad_check(|p| fwd(&m, &coeffs, p), &bias, &dbias, 1e-6), "bias"),
    ] {
        let e = e.unwrap();
        assert!(e <= 1e-5, "pointwise {what} {e}");
    }

    let w = Tensor4::<f64>::uniform([c_out, c_in, l, l], 1.0, &mut rng);
    let y_shape = conv2d_bias(&x, &w, Some(&bias), spec).unwrap().dims();
    let probe = Tensor4::<f64>::uniform(y_shape, 1.0, &mut rng);
    let (dx, dw, db) = conv2d_backward(&x, &w, &probe, spec).unwrap();
    let fwd = |x: &Tensor4<f64>, w: &Tensor4<f64>, b: &[f64]| dot(&conv2d_bias(x, w, Some(b), spec).unwrap(), &probe);
    for (e, what) in [
        (grad_check(|p| fwd(&Tensor4::new(x.dims(), p.to_vec()).unwrap(), &w, &bias), x.data(), dx.data(), 1e-6), "x"),
        (grad_check(|p| fwd(&x, &Tensor4::new(w.dims(), p.to_vec()).unwrap(), &bias), w.data(), dw.data(), 1e-6), "w"),
        (grad_check(|p| fwd(&x, &w, p), &bias, &db, 1e-6), "bias"),
    ] {
        let e = e.unwrap();
        assert!(e <= 1e-5, "conv {what} {e}");
    }
}

#[test]
fn layer_routes_atom_gradients_to_the_active_domain() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let spec = ConvSpec::same(3).unwrap();
    let layer = random_layer(&mut rng, 6, 2, 3, 3, spec);
    let x = Tensor4::<f64>::uniform([3, 2, 5, 5], 1.0, &mut rng);
    let (y, cache) = layer.forward(&x, 0).unwrap();
    let dy = Tensor4::<f64>::uniform(y.dims(), 1.0, &mut rng);
    let mut g = layer.zeros_like();
    layer.backward(&cache, &dy, 0, &mut g).unwrap();
    assert!(g.residual(1).unwrap().values().iter().all(|&v| v == 0.0));
    assert!(g.source().values().iter().any(|&v| v != 0.0));

    let (_, cache) = layer.forward(&x, 1).unwrap();
    let mut g = layer.zeros_like();
    layer.backward(&cache, &dy, 1, &mut g).unwrap();
    assert!(g.source().values().iter().all(|&v| v == 0.0));
    assert!(g.residual(1).unwrap().values().iter().any(|&v| v != 0.0));
}

#[test]
fn f32_layer_tracks_f64_layer() {
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    let layer = random_layer(&mut rng, 4, 3, 4, 3, ConvSpec::same(3).unwrap());
    let x = Tensor4::<f64>::uniform([2, 3, 6, 6], 1.0, &mut rng);
    let y64 = layer.forward(&x, 1).unwrap().0;
    let y32 = layer.cast::<f32>().forward(&x.cast::<f32>(), 1).unwrap().0;
    assert!(y32.cast::<f64>().max_abs_diff(&y64).unwrap() < 1e-4);
}
