use docnmt::tensor::Tensor;
use docnmt::Error;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn identity_matmul() {
    let eye = Tensor::from_vec(vec![1.0f64, 0.0, 0.0, 1.0], &[2, 2]).unwrap();
    let a = Tensor::from_vec(vec![1.5, -2.0, 0.25, 3.0, 7.0, -1.0], &[2, 3]).unwrap();
    assert_eq!(eye.matmul(&a).unwrap().data(), a.data());
}

#[test]
fn softmax_of_equal_logits() {
    let z = Tensor::from_vec(vec![0.0f64, 0.0], &[2]).unwrap();
    assert_eq!(z.softmax(0).unwrap().data(), &[0.5, 0.5]);
}

#[test]
fn uniform_cross_entropy_is_ln_classes() {
    let z = Tensor::from_vec(vec![0.3f64; 4], &[1, 4]).unwrap();
    for t in 0..4 {
        let ce = z.cross_entropy(&[t], None, None).unwrap().item().unwrap();
        assert!((ce - 4f64.ln()).abs() < 1e-12);
    }
    assert!((4f64.ln() - 1.3863).abs() < 1e-4);
}

#[test]
fn sum_of_softmax_has_zero_gradient() {
    let z = Tensor::param(vec![0.3f64, -1.2, 2.0, 0.1], &[4]).unwrap();
    z.softmax(0).unwrap().sum().unwrap().backward().unwrap();
    for g in z.grad().unwrap() {
        assert!(g.abs() < 1e-15);
    }
}

#[test]
fn shape_errors_name_the_primitive() {
    let a = Tensor::from_vec(vec![1.0f32; 6], &[2, 3]).unwrap();
    let b = Tensor::from_vec(vec![1.0f32; 6], &[2, 3]).unwrap();
    let err = a.matmul(&b).unwrap_err();
    assert!(matches!(err, Error::Shape { op: "matmul", .. }));
    let msg = err.to_string();
    assert!(msg.contains("matmul") && msg.contains("[2, 3]"), "{msg}");
    assert!(a.add(&Tensor::from_vec(vec![1.0; 2], &[2]).unwrap()).is_err());
    assert!(a.softmax(2).is_err());
}

#[test]
fn dropout_is_identity_at_eval_and_seeded_at_train() {
    let x = Tensor::from_vec((0..64).map(|i| i as f32).collect(), &[8, 8]).unwrap();
    let mut r = ChaCha8Rng::seed_from_u64(3);
    assert_eq!(x.dropout(0.3, false, &mut r).unwrap().data(), x.data());
    let a = x.dropout(0.3, true, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    let b = x.dropout(0.3, true, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    assert_eq!(a.data(), b.data());
    assert!(a.data().iter().any(|&v| v == 0.0));
    assert!(x.dropout(1.0, true, &mut r).is_err());
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(vals in prop::collection::vec(-30.0f64..30.0, 12), axis in 0usize..2) {
        let z = Tensor::from_vec(vals, &[3, 4]).unwrap();
        let y = z.softmax(axis).unwrap();
        let d = y.data();
        prop_assert!(d.iter().all(|&v| v >= 0.0));
        if axis == 1 {
            for r in 0..3 {
                let s: f64 = d[r * 4..r * 4 + 4].iter().sum();
                prop_assert!((s - 1.0).abs() < 1e-6);
            }
        } else {
            for c in 0..4 {
                let s: f64 = (0..3).map(|r| d[r * 4 + c]).sum();
                prop_assert!((s - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn forward_is_deterministic(vals in prop::collection::vec(-3.0f32..3.0, 16)) {
        let w = Tensor::from_vec(vals.clone(), &[4, 4]).unwrap();
        let a = w.matmul(&w).unwrap().gelu().unwrap().softmax(1).unwrap();
        let b = w.matmul(&w).unwrap().gelu().unwrap().softmax(1).unwrap();
        prop_assert_eq!(a.data(), b.data());
    }
}
