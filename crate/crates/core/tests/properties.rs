//! Randomized properties of kernels, cells, preprocessing and formats.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sclstm_core::cells::{sepconvlstm_step, unroll_last, CellParams, CellState};
use sclstm_core::io::{read_clp1, write_clp1};
use sclstm_core::ops::{maxpool2d, pointwise_conv2d, separable_conv2d, ConvKernel, Padding};
use sclstm_core::preproc::{augment, background_suppress, frame_difference, AugmentSpec};
use sclstm_core::{CellKind, Clip, Tensor};

fn tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn maxpool_matches_window_max(seed in any::<u64>(), h in 2usize..9, w in 2usize..9, c in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = tensor(&mut rng, &[h, w, c], -5.0, 5.0);
        let y = maxpool2d(&x).unwrap();
        prop_assert_eq!(y.shape(), &[h / 2, w / 2, c]);
        for oy in 0..h / 2 {
            for ox in 0..w / 2 {
                for ch in 0..c {
                    let m = [(0, 0), (0, 1), (1, 0), (1, 1)]
                        .iter()
                        .map(|(dy, dx)| x.at(&[2 * oy + dy, 2 * ox + dx, ch]))
                        .fold(f64::NEG_INFINITY, f64::max);
                    prop_assert_eq!(y.at(&[oy, ox, ch]), m);
                }
            }
        }
    }

    #[test]
    fn delta_depthwise_reduces_to_pointwise(seed in any::<u64>(), c_in in 1usize..5, c_out in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = tensor(&mut rng, &[2, 5, 4, c_in], -1.0, 1.0);
        let pw = ConvKernel::pointwise(tensor(&mut rng, &[c_in, c_out], -1.0, 1.0));
        let delta = Tensor::from_fn(&[3, 3, c_in], |i| if i / c_in == 4 { 1.0 } else { 0.0 });
        let sep = separable_conv2d(&x, &ConvKernel::depthwise(delta, 1, Padding::Same), &pw).unwrap();
        prop_assert_eq!(sep, pointwise_conv2d(&x, &pw).unwrap());
    }

    #[test]
    fn hidden_state_is_bounded(seed in any::<u64>(), steps in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = CellParams::<f64>::init(CellKind::Separable, 3, 3, 4, &mut rng);
        let xs: Vec<_> = (0..steps).map(|_| tensor(&mut rng, &[4, 4, 3], -10.0, 10.0)).collect();
        let h = unroll_last(&xs, &p, None).unwrap();
        prop_assert!(h.data().iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn unroll_is_a_fold_of_steps(seed in any::<u64>(), steps in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = CellParams::<f64>::init(CellKind::Separable, 3, 2, 3, &mut rng);
        let xs: Vec<_> = (0..steps).map(|_| tensor(&mut rng, &[3, 5, 2], -1.0, 1.0)).collect();
        let mut s = CellState::zeros(None, 3, 5, 3);
        for x in &xs {
            s = sepconvlstm_step(x, &s, &p).unwrap();
        }
        prop_assert_eq!(unroll_last(&xs, &p, None).unwrap(), s.h);
    }

    #[test]
    fn streams_stay_in_range(seed in any::<u64>(), t in 2usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let clip = Clip::new(Tensor::from_fn(&[t, 6, 5, 3], |_| rng.random_range(0.0..=1.0f32)), "p").unwrap();
        let fd = frame_difference(&clip);
        prop_assert_eq!(fd.shape()[0], t - 1);
        prop_assert!(fd.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        prop_assert!(background_suppress(&clip).frames().data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn augmentation_is_reproducible(seed in any::<u64>(), index in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let clip = Clip::new(Tensor::from_fn(&[3, 12, 10, 3], |_| rng.random_range(0.0..=1.0f32)), "p").unwrap();
        let spec = AugmentSpec { seed, ..AugmentSpec::default() };
        let a = augment(&clip, &spec, index).unwrap();
        let b = augment(&clip, &spec, index).unwrap();
        prop_assert_eq!(a.frames(), b.frames());
        prop_assert!(a.frames().data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn clp1_rejects_every_truncation(cut in 0usize..(24 + 4 * 2 * 3 * 2 * 3)) {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.clp1");
        write_clp1(&p, &Tensor::from_fn(&[2, 3, 2, 3], |i| i as f32 / 36.0)).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..cut]).unwrap();
        prop_assert!(read_clp1(&p).is_err());
    }
}
