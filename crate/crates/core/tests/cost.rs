use dafd::checkpoint::{decode, encode, read_checkpoint, write_checkpoint};
use dafd::cost::{count_costs, vgg16_report, LayerCostSpec};
use dafd::net::{build_network, Arch, NetSpec, Network};

#[test]
fn vgg16_extra_domain_costs() {
    let r = vgg16_report(6, 224).unwrap();
    assert_eq!(r.total.extra_params_dafd, 702);
    assert_eq!(r.total.extra_params_regular, 14_714_688);
    let (mac_r, mac_d) = r.total.macs_per_domain();
    assert!((mac_r / 15.38e9 - 1.0).abs() <= 0.10, "{mac_r}");
    assert!((mac_d / 10.75e9 - 1.0).abs() <= 0.10, "{mac_d}");
    assert_eq!(r.layers.len(), 13);
}

#[test]
fn single_layer_by_hand() {
    // 64 -> 128 channels, 3x3, 56x56 output, K = 6, two domains.
    let s = LayerCostSpec { c_in: 64, c_out: 128, l: 3, width: 56, k: 6 };
    let r = count_costs(&[s], 2).unwrap();
    let c = r.total;
    assert_eq!(c.params_regular, 2 * 64 * 128 * 9);
    assert_eq!(c.params_dafd, 6 * (64 * 128 + 2 * 9));
    assert_eq!(c.extra_params_dafd, 54);
    assert_eq!(c.extra_params_regular, 64 * 128 * 9 + 128);
    assert_eq!(c.flops_regular_per_domain, 56 * 56 * 64 * 128 * 19);
    assert_eq!(c.flops_dafd_per_domain, 56 * 56 * 64 * 2 * 6 * (9 + 128));
    assert!(r.layers[0].dafd_cheaper);
}

#[test]
fn extra_domain_cost_is_linear_in_domains() {
    let layers = dafd::cost::vgg16_layers(6, 224);
    let two = count_costs(&layers, 2).unwrap().total;
    let three = count_costs(&layers, 3).unwrap().total;
    assert_eq!(three.params_dafd - two.params_dafd, two.extra_params_dafd);
    assert_eq!(three.params_regular - two.params_regular + three.bias_regular - two.bias_regular, two.extra_params_regular);
}

#[test]
fn invalid_specs_are_rejected() {
    assert!(count_costs(&[], 2).is_err());
    let s = LayerCostSpec { c_in: 1, c_out: 1, l: 2, width: 4, k: 1 };
    assert!(count_costs(&[s], 2).is_err());
    assert!(vgg16_report(0, 224).is_err());
}

#[test]
fn checkpoints_survive_a_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    for arch in Arch::ALL {
        let net = build_network::<f64>(&NetSpec::toy(arch), 5).unwrap();
        let path = dir.path().join(format!("{arch}.bin"));
        write_checkpoint(&path, &net).unwrap();
        let back: Network<f64> = read_checkpoint(&path).unwrap();
        assert_eq!(back, net);
        let narrow: Network<f32> = decode(&encode(&net).unwrap()).unwrap();
        assert_eq!(narrow, net.cast::<f32>());
    }
}
