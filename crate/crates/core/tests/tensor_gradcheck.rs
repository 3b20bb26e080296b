//! Every primitive's analytic gradient against central finite differences (f64, h = 1e-3).

mod common;

use std::sync::Arc;

use common::*;
use docnmt::tensor::{apply_primitive, Primitive, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

type Build = dyn Fn(&[Tensor<f64>]) -> Tensor<f64>;

/// Checks d(sum(w ⊙ f(inputs)))/d(input) for every input element, where `w` is a fixed random weighting.
fn gradcheck(inputs: &[(Vec<f64>, Vec<usize>)], f: &Build) {
    let probe = {
        let consts: Vec<Tensor<f64>> = inputs
            .iter()
            .map(|(d, s)| Tensor::from_vec(d.clone(), s).unwrap())
            .collect();
        f(&consts)
    };
    let mut r = rng(99);
    let weights = Tensor::from_vec(random_vec(&mut r, probe.numel(), 1.0), probe.shape()).unwrap();
    let loss_of = |ts: &[Tensor<f64>]| f(ts).mul(&weights).unwrap().sum().unwrap();

    let params: Vec<Tensor<f64>> = inputs
        .iter()
        .map(|(d, s)| Tensor::param(d.clone(), s).unwrap())
        .collect();
    loss_of(&params).backward().unwrap();

    for (pi, (data, _)) in inputs.iter().enumerate() {
        let analytic = params[pi].grad().unwrap_or_else(|| vec![0.0; data.len()]);
        let eval = |x: &[f64]| {
            let ts: Vec<Tensor<f64>> = inputs
                .iter()
                .enumerate()
                .map(|(i, (d, s))| {
                    let v = if i == pi { x.to_vec() } else { d.clone() };
                    Tensor::from_vec(v, s).unwrap()
                })
                .collect();
            loss_of(&ts).item().unwrap()
        };
        for j in 0..data.len() {
            let numeric = central_difference(data, j, &eval);
            let err = rel_error(analytic[j], numeric);
            assert!(
                err <= FD_REL_TOL,
                "input {pi} elem {j}: analytic {} numeric {numeric} rel {err}",
                analytic[j]
            );
        }
    }
}

fn rand_input(seed: u64, shape: &[usize]) -> (Vec<f64>, Vec<usize>) {
    let mut r = rng(seed);
    (random_vec(&mut r, shape.iter().product(), 1.0), shape.to_vec())
}

#[test]
fn matmul_2d_shared_and_batched() {
    gradcheck(&[rand_input(1, &[3, 4]), rand_input(2, &[4, 5])], &|t| t[0].matmul(&t[1]).unwrap());
    gradcheck(&[rand_input(3, &[2, 3, 4]), rand_input(4, &[4, 2])], &|t| t[0].matmul(&t[1]).unwrap());
    gradcheck(&[rand_input(5, &[2, 2, 3, 4]), rand_input(6, &[2, 2, 4, 3])], &|t| {
        t[0].matmul(&t[1]).unwrap()
    });
}

#[test]
fn add_and_mul_with_suffix_broadcast() {
    gradcheck(&[rand_input(1, &[2, 3]), rand_input(2, &[2, 3])], &|t| t[0].add(&t[1]).unwrap());
    gradcheck(&[rand_input(3, &[2, 2, 3]), rand_input(4, &[3])], &|t| t[0].add(&t[1]).unwrap());
    gradcheck(&[rand_input(5, &[2, 3]), rand_input(6, &[2, 3])], &|t| t[0].mul(&t[1]).unwrap());
    gradcheck(&[rand_input(7, &[4, 3]), rand_input(8, &[3])], &|t| t[0].mul(&t[1]).unwrap());
}

#[test]
fn softmax_each_axis() {
    for axis in 0..3 {
        gradcheck(&[rand_input(10 + axis as u64, &[2, 3, 4])], &move |t| t[0].softmax(axis).unwrap());
    }
}

#[test]
fn layernorm_all_inputs() {
    gradcheck(
        &[rand_input(1, &[3, 5]), rand_input(2, &[5]), rand_input(3, &[5])],
        &|t| t[0].layer_norm(&t[1], &t[2], 1e-5).unwrap(),
    );
}

#[test]
fn embedding_lookup_table() {
    let ids = vec![2, 0, 2, 1, 3, 2];
    gradcheck(&[rand_input(1, &[4, 3])], &move |t| t[0].embedding(&ids, &[2, 3]).unwrap());
}

#[test]
fn relu_away_from_kink() {
    let (mut d, s) = rand_input(1, &[3, 4]);
    for v in d.iter_mut() {
        *v += 0.2 * v.signum();
    }
    gradcheck(&[(d, s)], &|t| t[0].relu().unwrap());
}

#[test]
fn gelu() {
    gradcheck(&[rand_input(4, &[3, 4])], &|t| t[0].gelu().unwrap());
}

#[test]
fn transpose_and_reshape() {
    gradcheck(&[rand_input(1, &[2, 3, 4])], &|t| t[0].transpose(&[2, 0, 1]).unwrap());
    gradcheck(&[rand_input(2, &[2, 3, 4, 2])], &|t| t[0].transpose(&[0, 2, 1, 3]).unwrap());
    gradcheck(&[rand_input(3, &[2, 6])], &|t| t[0].reshape(&[3, 4]).unwrap());
}

#[test]
fn concat_middle_axis() {
    gradcheck(&[rand_input(1, &[2, 1, 3]), rand_input(2, &[2, 2, 3])], &|t| {
        Tensor::concat(&[t[0].clone(), t[1].clone()], 1).unwrap()
    });
}

#[test]
fn mask_fill_scale_mean_sum() {
    let mask = Arc::new(vec![true, false, false, true, false, true]);
    gradcheck(&[rand_input(1, &[2, 3])], &move |t| t[0].mask_fill(Arc::clone(&mask), -1e9).unwrap());
    gradcheck(&[rand_input(2, &[2, 3])], &|t| t[0].scale(-0.7).unwrap());
    gradcheck(&[rand_input(3, &[2, 3])], &|t| t[0].mean().unwrap());
    gradcheck(&[rand_input(4, &[2, 3])], &|t| t[0].sum().unwrap());
}

#[test]
fn cross_entropy_with_ignored_rows() {
    gradcheck(&[rand_input(1, &[2, 2, 5])], &|t| t[0].cross_entropy(&[1, 0, 4, 0], Some(0), None).unwrap());
    gradcheck(&[rand_input(2, &[3, 4])], &|t| t[0].cross_entropy(&[3, 1, 2], None, Some(7.0)).unwrap());
}

#[test]
fn dropout_with_fixed_mask() {
    gradcheck(&[rand_input(1, &[4, 4])], &|t| {
        let mut r = ChaCha8Rng::seed_from_u64(5);
        t[0].dropout(0.3, true, &mut r).unwrap()
    });
}

#[test]
fn composite_attention_block() {
    // softmax(mask(Q Kᵀ)) V, the pattern used by every attention layer.
    let mask = Arc::new(vec![false, false, true, false, false, true]);
    gradcheck(
        &[rand_input(1, &[2, 4]), rand_input(2, &[3, 4]), rand_input(3, &[3, 2])],
        &move |t| {
            let kt = t[1].transpose(&[1, 0]).unwrap();
            let scores = t[0].matmul(&kt).unwrap().scale(0.5).unwrap();
            let p = scores.mask_fill(Arc::clone(&mask), -1e9).unwrap().softmax(1).unwrap();
            p.matmul(&t[2]).unwrap()
        },
    );
}

#[test]
fn apply_primitive_dispatch_and_arity() {
    let a = Tensor::from_vec(vec![1.0f64, 2.0, 3.0, 4.0], &[2, 2]).unwrap();
    let eye = Tensor::from_vec(vec![1.0f64, 0.0, 0.0, 1.0], &[2, 2]).unwrap();
    let out = apply_primitive(&Primitive::MatMul, &[&eye, &a]).unwrap();
    assert_eq!(out.data(), a.data());
    assert!(apply_primitive(&Primitive::MatMul, &[&a]).is_err());
    let d = apply_primitive(&Primitive::Dropout { p: 0.5, train: false, seed: 1 }, &[&a]).unwrap();
    assert_eq!(d.data(), a.data());
}
