//! 2-d convolution via im2col plus the shared matmul kernel.
//!
//! Layout: input `[H,W,Cin]`, weight `[kh,kw,Cin,Cout]`, output `[oh,ow,Cout]`.
//! The weight's row-major flattening is exactly the `[kh*kw*Cin, Cout]`
//! matrix im2col needs, so no repacking happens on either pass.

use super::kernels;
use super::{Tensor, TensorError};
use crate::scalar::Scalar;
use std::rc::Rc;

struct ConvDims {
    h: usize,
    w: usize,
    c_in: usize,
    kh: usize,
    kw: usize,
    c_out: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad: usize,
}

impl ConvDims {
    fn m(&self) -> usize {
        self.oh * self.ow
    }
    fn kdim(&self) -> usize {
        self.kh * self.kw * self.c_in
    }
}

fn im2col<S: Scalar>(x: &[S], d: &ConvDims) -> Vec<S> {
    let mut col = vec![S::zero(); d.m() * d.kdim()];
    let mut cursor = 0;
    for oy in 0..d.oh {
        for ox in 0..d.ow {
            for ky in 0..d.kh {
                let iy = (oy * d.stride + ky) as isize - d.pad as isize;
                for kx in 0..d.kw {
                    let ix = (ox * d.stride + kx) as isize - d.pad as isize;
                    if iy >= 0 && (iy as usize) < d.h && ix >= 0 && (ix as usize) < d.w {
                        let base = (iy as usize * d.w + ix as usize) * d.c_in;
                        col[cursor..cursor + d.c_in]
                            .copy_from_slice(&x[base..base + d.c_in]);
                    }
                    cursor += d.c_in;
                }
            }
        }
    }
    col
}

fn col2im<S: Scalar>(d_col: &[S], d: &ConvDims) -> Vec<S> {
    let mut g = vec![S::zero(); d.h * d.w * d.c_in];
    let mut cursor = 0;
    for oy in 0..d.oh {
        for ox in 0..d.ow {
            for ky in 0..d.kh {
                let iy = (oy * d.stride + ky) as isize - d.pad as isize;
                for kx in 0..d.kw {
                    let ix = (ox * d.stride + kx) as isize - d.pad as isize;
                    if iy >= 0 && (iy as usize) < d.h && ix >= 0 && (ix as usize) < d.w {
                        let base = (iy as usize * d.w + ix as usize) * d.c_in;
                        for c in 0..d.c_in {
                            g[base + c] += d_col[cursor + c];
                        }
                    }
                    cursor += d.c_in;
                }
            }
        }
    }
    g
}

impl<S: Scalar> Tensor<S> {
    /// Convolves an `[H,W,Cin]` input with an `[kh,kw,Cin,Cout]` weight,
    /// zero padding, producing `[oh,ow,Cout]`. Differentiable in both.
    pub fn conv2d(
        &self,
        weight: &Tensor<S>,
        stride: usize,
        pad: usize,
    ) -> Result<Self, TensorError> {
        let op = "conv2d";
        let (xs, ws) = (self.shape(), weight.shape());
        if xs.len() != 3 || ws.len() != 4 || xs[2] != ws[2] {
            return Err(TensorError::ShapeMismatch {
                op,
                lhs: xs.to_vec(),
                rhs: ws.to_vec(),
            });
        }
        if stride == 0 {
            return Err(TensorError::Invalid {
                op,
                detail: "stride must be positive".into(),
            });
        }
        let (h, w, c_in) = (xs[0], xs[1], xs[2]);
        let (kh, kw, c_out) = (ws[0], ws[1], ws[3]);
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(TensorError::Invalid {
                op,
                detail: format!("kernel {kh}x{kw} exceeds padded input {h}x{w} (pad {pad})"),
            });
        }
        let d = ConvDims {
            h,
            w,
            c_in,
            kh,
            kw,
            c_out,
            oh: (h + 2 * pad - kh) / stride + 1,
            ow: (w + 2 * pad - kw) / stride + 1,
            stride,
            pad,
        };
        let col = Rc::new(im2col(&self.td.data, &d));
        let data = kernels::matmul(&col, &weight.td.data, d.m(), d.kdim(), d.c_out);
        let w_td = Rc::clone(&weight.td);
        let shape = vec![d.oh, d.ow, d.c_out];
        Tensor::from_op(op, &[self, weight], shape, data, move |up, needs| {
            let gx = needs[0].then(|| {
                let wt = kernels::transpose(&w_td.data, d.kdim(), d.c_out);
                let d_col = kernels::matmul(up, &wt, d.m(), d.c_out, d.kdim());
                col2im(&d_col, &d)
            });
            let gw = needs[1].then(|| kernels::matmul_at_b(&col, up, d.m(), d.kdim(), d.c_out));
            vec![gx, gw]
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tape;

    fn t64(data: Vec<f64>, shape: &[usize]) -> Tensor<f64> {
        Tensor::constant(data, shape).unwrap()
    }

    #[test]
    fn pointwise_kernel_scales_input() {
        let x = t64(vec![1.0, 2.0, 3.0, 4.0], &[2, 2, 1]);
        let w = t64(vec![2.0], &[1, 1, 1, 1]);
        let y = x.conv2d(&w, 1, 0).unwrap();
        assert_eq!(y.shape(), &[2, 2, 1]);
        assert_eq!(y.data(), &[2.0, 4.0, 6.0, 8.0]);
    }

    #[test]
    fn padded_box_filter_sums_neighborhood() {
        let x = t64(vec![1.0, 2.0, 3.0, 4.0], &[2, 2, 1]);
        let w = t64(vec![1.0; 9], &[3, 3, 1, 1]);
        let y = x.conv2d(&w, 1, 1).unwrap();
        // every 3x3 window over the zero-padded 2x2 sees all four cells
        assert_eq!(y.data(), &[10.0, 10.0, 10.0, 10.0]);
    }

    #[test]
    fn stride_two_downsamples() {
        let x = t64(vec![1.0; 16], &[4, 4, 1]);
        let w = t64(vec![1.0; 4], &[2, 2, 1, 1]);
        let y = x.conv2d(&w, 2, 0).unwrap();
        assert_eq!(y.shape(), &[2, 2, 1]);
        assert_eq!(y.data(), &[4.0, 4.0, 4.0, 4.0]);
    }

    #[test]
    fn multi_channel_shapes() {
        let x = t64(vec![0.5; 8 * 8 * 3], &[8, 8, 3]);
        let w = t64(vec![0.1; 3 * 3 * 3 * 5], &[3, 3, 3, 5]);
        let y = x.conv2d(&w, 2, 1).unwrap();
        assert_eq!(y.shape(), &[4, 4, 5]);
    }

    #[test]
    fn weight_gradient_matches_hand_value() {
        let tape = Tape::<f64>::new();
        let x = t64(vec![1.0, 2.0, 3.0, 4.0], &[2, 2, 1]);
        let w = tape.leaf(vec![1.0], &[1, 1, 1, 1]).unwrap();
        let y = x.conv2d(&w, 1, 0).unwrap();
        y.sum_all().unwrap().backward().unwrap();
        // d/dw sum(conv(x, w)) = sum(x)
        assert_eq!(w.grad().unwrap(), vec![10.0]);
    }

    #[test]
    fn input_gradient_matches_hand_value() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(vec![1.0, 2.0, 3.0, 4.0], &[2, 2, 1]).unwrap();
        let w = t64(vec![3.0], &[1, 1, 1, 1]);
        let y = x.conv2d(&w, 1, 0).unwrap();
        y.sum_all().unwrap().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![3.0; 4]);
    }

    #[test]
    fn off_tape_inputs_produce_off_tape_output() {
        let x = t64(vec![1.0; 16], &[4, 4, 1]);
        let w = t64(vec![1.0; 4], &[2, 2, 1, 1]);
        assert!(!x.conv2d(&w, 2, 0).unwrap().is_on_tape());
    }

    #[test]
    fn rejects_channel_mismatch() {
        let x = t64(vec![1.0; 8], &[2, 2, 2]);
        let w = t64(vec![1.0; 3], &[1, 1, 3, 1]);
        assert!(matches!(
            x.conv2d(&w, 1, 0),
            Err(TensorError::ShapeMismatch { .. })
        ));
    }
}
