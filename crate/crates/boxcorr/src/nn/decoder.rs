//! Single-head cross-attention decoder that turns one box embedding into
//! center-form box coordinates by attending over a feature map.
//!
//! The embedding is the query; the flattened feature map provides keys and
//! values, with a fixed 2-d sinusoidal encoding added to the key inputs so
//! attention can be position-selective. A two-layer head maps the attended
//! vector to four logits squashed into (0,1), which is always a valid
//! center-form box.

use super::{mlp_forward, Binding, NetError};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Fixed `[hw*hw, d_model]` sinusoidal encoding: the first half of the
/// channels encodes the column index, the second half the row index, each
/// with interleaved sin/cos at geometrically spaced frequencies.
pub fn positional_encoding(hw: usize, d_model: usize) -> Vec<f64> {
    assert!(d_model % 4 == 0, "d_model must split into sin/cos x/y groups");
    let d_axis = d_model / 2;
    let mut enc = vec![0.0; hw * hw * d_model];
    for r in 0..hw {
        for c in 0..hw {
            let base = (r * hw + c) * d_model;
            for i in 0..d_axis / 2 {
                let omega = 1.0 / 10000f64.powf(2.0 * i as f64 / d_axis as f64);
                enc[base + 2 * i] = (c as f64 * omega).sin();
                enc[base + 2 * i + 1] = (c as f64 * omega).cos();
                enc[base + d_axis + 2 * i] = (r as f64 * omega).sin();
                enc[base + d_axis + 2 * i + 1] = (r as f64 * omega).cos();
            }
        }
    }
    enc
}

/// Cross-attention of one `[embed]` query over an `[hw,hw,C]` feature map,
/// then the squashed 4-way head. Returns `[4]` = (cx, cy, w, h), each in
/// (0,1). Differentiable in both the map and the query.
pub fn decoder_forward<S: Scalar>(
    bind: &Binding<S>,
    fmap: &Tensor<S>,
    u: &Tensor<S>,
) -> Result<Tensor<S>, NetError> {
    let s = fmap.shape();
    if s.len() != 3 || s[0] != s[1] {
        return Err(NetError::WrongInput {
            expected: vec![s[0], s[0], s[2]],
            got: s.to_vec(),
        });
    }
    let (hw, ch) = (s[0], s[2]);
    let d_model = bind.get("decoder.k.w")?.shape()[1];
    debug_assert_eq!(ch, d_model, "key inputs and positional encoding must align");
    let positions = hw * hw;

    let flat = fmap.reshape(&[positions, ch])?;
    let pos = Tensor::constant(
        positional_encoding(hw, d_model).iter().map(|&v| S::from_f64(v)).collect(),
        &[positions, d_model],
    )?;
    let keys = flat
        .add(&pos)?
        .matmul(bind.get("decoder.k.w")?)?
        .add(bind.get("decoder.k.b")?)?;
    let values = flat
        .matmul(bind.get("decoder.v.w")?)?
        .add(bind.get("decoder.v.b")?)?;
    let query = u
        .reshape(&[1, u.numel()])?
        .matmul(bind.get("decoder.q.w")?)?
        .add(bind.get("decoder.q.b")?)?;

    let scale = S::from_f64(1.0 / (d_model as f64).sqrt());
    let scores = keys.matmul(&query.transpose()?)?.mul_scalar(scale)?;
    let weights = scores.softmax(0)?;
    let attended = weights.transpose()?.matmul(&values)?;
    Ok(mlp_forward(bind, "decoder.head", &attended)?
        .sigmoid()?
        .reshape(&[4])?)
}
