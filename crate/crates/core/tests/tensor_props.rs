use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use satocc::tensor::{ops, Tensor};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn combo(a: f64, x: &Tensor, b: f64, y: &Tensor) -> Tensor {
    x.scale(a).add(&y.scale(b)).unwrap()
}

fn close(p: &Tensor, q: &Tensor, tol: f64) -> bool {
    let scale = p.data().iter().fold(1.0f64, |m, v| m.max(v.abs()));
    p.max_abs_diff(q).unwrap() <= tol * scale
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn conv2d_is_linear(seed: u64, a in -3.0..3.0f64, b in -3.0..3.0f64,
                        c in 1usize..4, h in 3usize..9, w in 3usize..9, stride in 1usize..3) {
        let mut r = rng(seed);
        let x = Tensor::randn(&[c, h, w], 1.0, &mut r);
        let y = Tensor::randn(&[c, h, w], 1.0, &mut r);
        let k = Tensor::randn(&[2, c, 3, 3], 1.0, &mut r);
        let lhs = ops::conv2d(&combo(a, &x, b, &y), &k, stride, 1).unwrap();
        let rhs = combo(a, &ops::conv2d(&x, &k, stride, 1).unwrap(), b, &ops::conv2d(&y, &k, stride, 1).unwrap());
        prop_assert!(close(&lhs, &rhs, 1e-12));
    }

    #[test]
    fn bilinear_sample_is_linear(seed: u64, a in -3.0..3.0f64, b in -3.0..3.0f64, n in 1usize..40) {
        let mut r = rng(seed);
        let x = Tensor::randn(&[2, 6, 7], 1.0, &mut r);
        let y = Tensor::randn(&[2, 6, 7], 1.0, &mut r);
        let u = Tensor::uniform(&[n, 2], -1.0, 8.0, &mut r);
        let xy: Vec<[f64; 2]> = u.data().chunks(2).map(|p| [p[0], p[1]]).collect();
        let (lhs, _) = ops::bilinear_sample(&combo(a, &x, b, &y), &xy).unwrap();
        let (sx, _) = ops::bilinear_sample(&x, &xy).unwrap();
        let (sy, _) = ops::bilinear_sample(&y, &xy).unwrap();
        prop_assert!(close(&lhs, &combo(a, &sx, b, &sy), 1e-12));
    }

    #[test]
    fn concat_then_slice_is_exact(seed: u64, c1 in 1usize..4, c2 in 1usize..4, c3 in 1usize..4) {
        let mut r = rng(seed);
        let parts: Vec<Tensor> = [c1, c2, c3].iter().map(|&c| Tensor::randn(&[c, 3, 5], 1e3, &mut r)).collect();
        let cat = ops::concat_channels(&parts.iter().collect::<Vec<_>>()).unwrap();
        let mut start = 0;
        for p in &parts {
            let end = start + p.shape()[0];
            prop_assert_eq!(&cat.slice_channels(start, end).unwrap(), p);
            start = end;
        }
    }
}
