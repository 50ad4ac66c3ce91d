mod common;

use common::*;
use cxray::tensor::gradcheck::grad_check;
use cxray::tensor::ops::{self, Padding};
use cxray::tensor::Tensor;
use proptest::prelude::*;

fn assert_primitive(name: &str, seed: u64) {
    for (i, r) in check_primitive(name, seed).unwrap().iter().enumerate() {
        assert!(
            r.passed,
            "{name} input {i} seed {seed}: deviation {:.3e} at {}",
            r.max_deviation,
            r.worst_index
        );
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 6, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn elementwise_and_reductions(seed in any::<u64>()) {
        for name in ["add", "mul", "scale", "relu", "sigmoid", "sum", "mean", "reshape"] {
            assert_primitive(name, seed);
        }
    }

    #[test]
    fn matrix_ops(seed in any::<u64>()) {
        for name in ["concat", "column", "dense"] {
            assert_primitive(name, seed);
        }
    }

    #[test]
    fn spatial_ops(seed in any::<u64>()) {
        for name in ["conv2d", "maxpool2d", "global_avgpool", "batchnorm2d"] {
            assert_primitive(name, seed);
        }
    }

    #[test]
    fn losses(seed in any::<u64>()) {
        for name in ["bce_with_logits", "bce_with_probs", "mean_abs_error"] {
            assert_primitive(name, seed);
        }
    }

    #[test]
    fn bottleneck_block(seed in any::<u64>()) {
        assert_primitive("bottleneck", seed);
    }

    #[test]
    fn odd_kernel_same_padding_keeps_ceil_extent(
        h in 1usize..12, w in 1usize..12, half in 0usize..3, stride in 1usize..4
    ) {
        let k = 2 * half + 1;
        prop_assume!(h + 2 * half >= k && w + 2 * half >= k);
        let x = Tensor::zeros(vec![1, 1, h, w]);
        let wt = Tensor::zeros(vec![1, 1, k, k]);
        let y = ops::conv2d(&x, &wt, None, stride, Padding::Same).unwrap();
        prop_assert_eq!(y.shape(), &[1, 1, h.div_ceil(stride), w.div_ceil(stride)]);
    }
}

#[test]
fn every_listed_primitive_is_covered() {
    for name in PRIMITIVES {
        assert!(!check_primitive(name, 11).unwrap().is_empty());
    }
}

#[test]
fn corrupted_backward_is_rejected() {
    let x = tensor(vec![4], vec![0.5, -1.5, 2.0, 3.0]);
    let r = grad_check(|t| Ok(ops::sum(&corrupted_square(t))), &x, STEP, TOLERANCE).unwrap();
    assert!(!r.passed);
    assert!(r.max_deviation > 0.4);
}
