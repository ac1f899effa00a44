use rand::Rng;

use super::tensor::{axpy, dot, Tensor};
use crate::error::{invalid, Error, Result};
use crate::seed;

/// Numerically stable softmax (max-subtracted).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= sum);
    out
}

/// Output classifier: `softmax(weights * hidden + bias)` over the vocabulary.
pub fn softmax_over_vocab(weights: &Tensor, bias: &Tensor, hidden: &[f64]) -> Result<Vec<f64>> {
    if weights.cols != hidden.len() || bias.data.len() != weights.rows {
        return Err(Error::ShapeMismatch("classifier shapes".into()));
    }
    let mut logits = bias.data.clone();
    weights.matvec_acc(hidden, &mut logits);
    Ok(softmax(&logits))
}

/// Inverted-dropout scale factors: each entry is 0 with probability `rate`,
/// otherwise `1 / (1 - rate)`.
pub fn dropout_mask<R: Rng>(len: usize, rate: f64, rng: &mut R) -> Vec<f64> {
    let keep = 1.0 / (1.0 - rate);
    (0..len)
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect()
}

/// Applies inverted dropout when `training` is set; identity otherwise.
pub fn dropout(vec: &[f64], rate: f64, seed: u64, training: bool) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&rate) {
        return Err(invalid(format!("dropout rate {rate} outside [0, 1)")));
    }
    if !training || rate == 0.0 {
        return Ok(vec.to_vec());
    }
    let mask = dropout_mask(vec.len(), rate, &mut seed::rng(seed));
    Ok(vec.iter().zip(mask).map(|(v, m)| v * m).collect())
}

/// Dot-product attention of one decoder state over the encoder states.
#[derive(Clone, Debug, PartialEq)]
pub struct Attention {
    pub weights: Vec<f64>,
    pub context: Vec<f64>,
}

pub fn attention(decoder_hidden: &[f64], encoder_hiddens: &[Vec<f64>]) -> Result<Attention> {
    if encoder_hiddens.is_empty() {
        return Err(invalid("attention over an empty encoder sequence"));
    }
    if encoder_hiddens.iter().any(|e| e.len() != decoder_hidden.len()) {
        return Err(Error::ShapeMismatch("encoder/decoder widths differ".into()));
    }
    let scores: Vec<f64> = encoder_hiddens.iter().map(|e| dot(decoder_hidden, e)).collect();
    let weights = softmax(&scores);
    let mut context = vec![0.0; decoder_hidden.len()];
    for (w, e) in weights.iter().zip(encoder_hiddens) {
        axpy(*w, e, &mut context);
    }
    Ok(Attention { weights, context })
}

/// Backward pass of [`attention`] given the context gradient.
///
/// Adds the decoder-state gradient to `d_decoder` and the per-step encoder
/// gradients to `d_encoder`.
pub fn attention_backward(
    decoder_hidden: &[f64],
    encoder_hiddens: &[Vec<f64>],
    weights: &[f64],
    d_context: &[f64],
    d_decoder: &mut [f64],
    d_encoder: &mut [Vec<f64>],
) {
    let d_weights: Vec<f64> = encoder_hiddens.iter().map(|e| dot(d_context, e)).collect();
    let mean: f64 = weights.iter().zip(&d_weights).map(|(a, d)| a * d).sum();
    for (j, e) in encoder_hiddens.iter().enumerate() {
        let d_score = weights[j] * (d_weights[j] - mean);
        axpy(d_score, e, d_decoder);
        axpy(d_score, decoder_hidden, &mut d_encoder[j]);
        axpy(weights[j], d_context, &mut d_encoder[j]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn softmax_symmetric_and_stable() {
        assert_eq!(softmax(&[0.3; 4]), vec![0.25; 4]);
        let p = softmax(&[1000.0, 0.0]);
        assert!((p[0] - 1.0).abs() < 1e-12 && p[1] < 1e-300 && p.iter().all(|v| v.is_finite()));
    }

    proptest! {
        #[test]
        fn softmax_is_on_simplex(logits in prop::collection::vec(-50.0f64..50.0, 1..40)) {
            let p = softmax(&logits);
            let s: f64 = p.iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-6);
            prop_assert!(p.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn dropout_identity_cases() {
        let v = vec![1.0, -2.0, 3.0];
        assert_eq!(dropout(&v, 0.0, 1, true).unwrap(), v);
        assert_eq!(dropout(&v, 0.7, 1, false).unwrap(), v);
        assert!(dropout(&v, 1.0, 1, true).is_err());
    }

    #[test]
    fn dropout_zero_fraction_matches_rate() {
        let n = 100_000;
        let out = dropout(&vec![1.0; n], 0.3, 42, true).unwrap();
        let zeros = out.iter().filter(|&&v| v == 0.0).count() as f64 / n as f64;
        assert!((zeros - 0.3).abs() < 0.01, "zero fraction {zeros}");
        assert!(out.iter().all(|&v| v == 0.0 || (v - 1.0 / 0.7).abs() < 1e-12));
    }

    #[test]
    fn attention_edge_cases() {
        let a = attention(&[1.0, 2.0], &[vec![3.0, 4.0]]).unwrap();
        assert_eq!(a.weights, vec![1.0]);
        assert_eq!(a.context, vec![3.0, 4.0]);
        let u = attention(&[0.0, 1.0], &[vec![5.0, 0.0], vec![-2.0, 0.0], vec![7.0, 0.0]]).unwrap();
        for w in &u.weights {
            assert!((w - 1.0 / 3.0).abs() < 1e-12);
        }
        assert!(attention(&[1.0], &[]).is_err());
    }

    #[test]
    fn attention_gradient_matches_finite_differences() {
        let dec = vec![0.3, -0.7, 0.2];
        let enc = vec![vec![0.5, 0.1, -0.4], vec![-0.2, 0.8, 0.3], vec![0.9, -0.6, 0.1]];
        let coef = vec![0.7, -1.1, 0.4];
        let loss = |d: &[f64], e: &[Vec<f64>]| dot(&attention(d, e).unwrap().context, &coef);
        let a = attention(&dec, &enc).unwrap();
        let mut dd = vec![0.0; 3];
        let mut de = vec![vec![0.0; 3]; 3];
        attention_backward(&dec, &enc, &a.weights, &coef, &mut dd, &mut de);
        let h = 1e-4;
        for k in 0..3 {
            let (mut p, mut m) = (dec.clone(), dec.clone());
            p[k] += h;
            m[k] -= h;
            let fd = (loss(&p, &enc) - loss(&m, &enc)) / (2.0 * h);
            assert!((fd - dd[k]).abs() / fd.abs().max(dd[k].abs()).max(1e-6) < 1e-4);
            for j in 0..3 {
                let (mut p, mut m) = (enc.clone(), enc.clone());
                p[j][k] += h;
                m[j][k] -= h;
                let fd = (loss(&dec, &p) - loss(&dec, &m)) / (2.0 * h);
                assert!((fd - de[j][k]).abs() / fd.abs().max(de[j][k].abs()).max(1e-6) < 1e-4);
            }
        }
    }
}
