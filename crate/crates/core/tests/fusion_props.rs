use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use satocc::fusion::{
    ddf_fuse, dsa_refine, dyn_head, load_weights, save_weights, u_fuse, DynAttention, FusionConfig, FusionWeights,
};
use satocc::tensor::Tensor;

fn map_of(value: f64, n: usize) -> DynAttention {
    DynAttention { pre_activation: Tensor::zeros(&[1, n, n]), map: Tensor::full(&[1, n, n], value) }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn closed_gate_ignores_satellite(seed: u64, scale in 1e-3..1e6f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = FusionConfig::default();
        let w = FusionWeights::random(&cfg, &mut rng);
        let n = 6;
        let sat = Tensor::randn(&[8, n, n], 1.0, &mut rng);
        let street = Tensor::randn(&[8, n, n], 1.0, &mut rng);
        let delta = Tensor::randn(&[8, n, n], scale, &mut rng);
        let a = ddf_fuse(&sat, &street, &map_of(1.0, n), &w).unwrap();
        let b = ddf_fuse(&sat.add(&delta).unwrap(), &street, &map_of(1.0, n), &w).unwrap();
        prop_assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn ddf_interpolates_in_scalar_map(seed: u64, m in 0.0..1.0f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = FusionWeights::random(&FusionConfig::default(), &mut rng);
        let n = 5;
        let sat = Tensor::randn(&[8, n, n], 1.0, &mut rng);
        let street = Tensor::randn(&[8, n, n], 1.0, &mut rng);
        let open = ddf_fuse(&sat, &street, &map_of(0.0, n), &w).unwrap();
        let closed = ddf_fuse(&sat, &street, &map_of(1.0, n), &w).unwrap();
        let mid = ddf_fuse(&sat, &street, &map_of(m, n), &w).unwrap();
        let expect = open.scale(1.0 - m).add(&closed.scale(m)).unwrap();
        prop_assert!(mid.max_abs_diff(&expect).unwrap() < 1e-12);
    }

    #[test]
    fn dsa_never_amplifies(seed: u64, bias in -20.0..20.0f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = FusionWeights::random(&FusionConfig::default(), &mut rng);
        let f = Tensor::randn(&[8, 7, 7], 3.0, &mut rng);
        let pre = Tensor::randn(&[1, 7, 7], 2.0, &mut rng).map(|v| v + bias);
        let out = dsa_refine(&f, &DynAttention::from_pre_activation(pre), &w).unwrap();
        prop_assert!(out.data().iter().zip(f.data()).all(|(o, x)| o.abs() <= x.abs()));
    }
}

#[test]
fn pipeline_shapes() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let w = FusionWeights::random(&FusionConfig::default(), &mut rng);
    let half = Tensor::randn(&[4, 16, 16], 1.0, &mut rng);
    let quarter = Tensor::randn(&[2, 8, 8], 1.0, &mut rng);
    let ctx = Tensor::randn(&[2, 4, 4], 1.0, &mut rng);
    assert_eq!(u_fuse(&half, &quarter, &ctx).unwrap().shape(), &[8, 16, 16]);
    let street = Tensor::randn(&[8, 16, 16], 1.0, &mut rng);
    let att = dyn_head(&street, &w).unwrap();
    assert_eq!(att.map.shape(), &[1, 16, 16]);
    assert!(att.map.data().iter().all(|&p| p > 0.0 && p < 1.0));
}

#[test]
fn weights_file_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.sawt");
    let w = FusionWeights::random(&FusionConfig::default(), &mut ChaCha8Rng::seed_from_u64(9));
    save_weights(&path, &w).unwrap();
    assert_eq!(load_weights(&path).unwrap(), w);
}
