//! Two unshared encoders, outside attention fusion (`H = H_src + Attn(H_src, H_ctx, H_ctx)`)
//! and a standard decoder. Blocks are pre-layer-norm; embeddings are learned and untied.

mod config;
mod forward;
mod params;

pub use config::{Activation, ModelConfig};
pub use forward::{decode_logits, encode_fuse, Decoded, Dropout, Fused, Padded};
pub use params::{init_parameters, ModelParams, ModelVars, Param};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::{BOS, PAD};

    fn tiny() -> ModelConfig {
        ModelConfig {
            n_layers: 2,
            n_heads: 2,
            d_model: 8,
            d_ff: 16,
            max_len: 12,
            vocab_size: 20,
            dropout: 0.1,
            activation: Activation::Gelu,
        }
    }

    fn params() -> ModelParams<f64> {
        init_parameters(&tiny(), 9).unwrap()
    }

    fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn fused_shape_ignores_context_length() {
        let p = params();
        for ctx in [vec![5], vec![5, 6, 7, 8, 9, 10, 11]] {
            let h = encode_fuse(&p, &ctx, &[4, 5, 6], false, 0).unwrap();
            assert_eq!(h.shape(), &[3, 8]);
        }
    }

    #[test]
    fn zero_value_projection_reduces_to_source_encoder() {
        let mut p = params();
        p.set("fusion.wv", vec![0.0; 64]).unwrap();
        let vars = p.bind(false).unwrap();
        let f = vars
            .encode_parts(&Padded::single(&[7, 8, 9]), &Padded::single(&[4, 5]), &mut Dropout::eval())
            .unwrap();
        assert!(f.attn.data().iter().all(|&v| v == 0.0));
        assert_eq!(f.h.data(), f.h_src.data());
    }

    #[test]
    fn self_context_is_finite() {
        let h = encode_fuse(&params(), &[4, 5, 6], &[4, 5, 6], false, 0).unwrap();
        assert!(h.data().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn context_padding_is_invisible() {
        let p = params();
        let a = encode_fuse(&p, &[7, 8], &[4, 5, 6], false, 0).unwrap();
        let b = encode_fuse(&p, &[7, 8, PAD, PAD, PAD], &[4, 5, 6], false, 0).unwrap();
        assert!(max_abs_diff(a.data(), b.data()) <= 1e-5);
    }

    #[test]
    fn batched_rows_match_single_rows() {
        let p = params();
        let vars = p.bind(false).unwrap();
        let ctx = Padded::new(&[vec![7, 8], vec![9, 10, 11, 12]]).unwrap();
        let src = Padded::new(&[vec![4, 5, 6], vec![13]]).unwrap();
        let h = vars.encode(&ctx, &src, &mut Dropout::eval()).unwrap();
        let one = encode_fuse(&p, &[9, 10, 11, 12], &[13], false, 0).unwrap();
        assert!(max_abs_diff(&h.data()[24..32], one.data()) <= 1e-12);
    }

    #[test]
    fn decoder_is_causal() {
        let p = params();
        let h = encode_fuse(&p, &[7, 8], &[4, 5, 6], false, 0).unwrap();
        let a = decode_logits(&p, &h, &[BOS, 5, 6, 7], false, 0).unwrap();
        let b = decode_logits(&p, &h, &[BOS, 5, 9, 11], false, 0).unwrap();
        assert_eq!(a.shape(), &[4, 20]);
        assert_eq!(&a.data()[..40], &b.data()[..40]);
        assert_ne!(&a.data()[40..60], &b.data()[40..60]);
    }

    #[test]
    fn eval_is_deterministic_and_training_uses_dropout() {
        let p = params();
        let h = encode_fuse(&p, &[7, 8], &[4, 5, 6], false, 0).unwrap();
        let a = decode_logits(&p, &h, &[BOS, 5], false, 1).unwrap();
        let b = decode_logits(&p, &h, &[BOS, 5], false, 2).unwrap();
        assert_eq!(a.data(), b.data());
        let t1 = encode_fuse(&p, &[7, 8], &[4, 5, 6], true, 3).unwrap();
        let t2 = encode_fuse(&p, &[7, 8], &[4, 5, 6], true, 3).unwrap();
        assert_eq!(t1.data(), t2.data());
        assert_ne!(t1.data(), h.data());
    }

    #[test]
    fn prefix_must_start_with_bos() {
        let p = params();
        let h = encode_fuse(&p, &[7], &[4], false, 0).unwrap();
        assert!(decode_logits(&p, &h, &[5, 6], false, 0).is_err());
    }

    #[test]
    fn overlong_input_rejected() {
        let p = params();
        let long: Vec<usize> = vec![5; 13];
        let err = encode_fuse(&p, &long, &[4], false, 0).unwrap_err().to_string();
        assert!(err.contains("exceeds max_len 12"), "{err}");
        assert!(encode_fuse(&p, &[4], &long, false, 0).is_err());
        assert!(encode_fuse(&p, &long[..12], &long[..12], false, 0).is_ok());
    }

    #[test]
    fn padded_layout() {
        let b = Padded::new(&[vec![1, 2, 3], vec![4]]).unwrap();
        assert_eq!(b.ids, vec![1, 2, 3, 4, PAD, PAD]);
        assert_eq!(b.row(1), &[4, PAD, PAD]);
        assert_eq!(Padded::new(&[Vec::<usize>::new()]).unwrap().len, 1);
        assert!(Padded::new::<Vec<usize>>(&[]).is_err());
    }
}
