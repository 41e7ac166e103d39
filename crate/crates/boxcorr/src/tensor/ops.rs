//! Forward kernels and VJPs for every differentiable primitive.
//!
//! Binary ops broadcast when one side's shape is a trailing suffix of the
//! other's (or is a single element); the gradient for the smaller side
//! sum-reduces over the broadcast positions. Row-major layout makes the
//! broadcast index a plain modulus.

use super::kernels;
use super::{Tensor, TensorError};
use crate::scalar::Scalar;
use std::rc::Rc;

fn broadcast_shape<'s>(
    op: &'static str,
    a: &'s [usize],
    b: &'s [usize],
    a_len: usize,
    b_len: usize,
) -> Result<&'s [usize], TensorError> {
    if a == b || b_len == 1 {
        Ok(a)
    } else if a_len == 1 || b.ends_with(a) {
        Ok(b)
    } else if a.ends_with(b) {
        Ok(a)
    } else {
        Err(TensorError::ShapeMismatch {
            op,
            lhs: a.to_vec(),
            rhs: b.to_vec(),
        })
    }
}

/// `(outer, mid, inner)` extents for iterating lanes along `axis`.
fn lane_extents(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let mid = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, mid, inner)
}

fn check_axis(op: &'static str, shape: &[usize], axis: usize) -> Result<(), TensorError> {
    if axis >= shape.len() {
        return Err(TensorError::Invalid {
            op,
            detail: format!("axis {axis} out of range for shape {shape:?}"),
        });
    }
    Ok(())
}

impl<S: Scalar> Tensor<S> {
    fn unary<D>(&self, op: &'static str, f: impl Fn(S) -> S, df: D) -> Result<Self, TensorError>
    where
        D: Fn(S) -> S + 'static,
    {
        let data: Vec<S> = self.td.data.iter().map(|&x| f(x)).collect();
        let x_td = Rc::clone(&self.td);
        Tensor::from_op(op, &[self], self.td.shape.clone(), data, move |up, _| {
            vec![Some(
                up.iter().zip(&x_td.data).map(|(&g, &x)| g * df(x)).collect(),
            )]
        })
    }

    fn binary<Da, Db>(
        &self,
        other: &Self,
        op: &'static str,
        f: impl Fn(S, S) -> S,
        dfa: Da,
        dfb: Db,
    ) -> Result<Self, TensorError>
    where
        Da: Fn(S, S) -> S + 'static,
        Db: Fn(S, S) -> S + 'static,
    {
        let (pa, pb) = (self.numel(), other.numel());
        let shape =
            broadcast_shape(op, &self.td.shape, &other.td.shape, pa, pb)?.to_vec();
        let n: usize = shape.iter().product();
        let a = &self.td.data;
        let b = &other.td.data;
        let data: Vec<S> = (0..n).map(|i| f(a[i % pa], b[i % pb])).collect();
        let a_td = Rc::clone(&self.td);
        let b_td = Rc::clone(&other.td);
        Tensor::from_op(op, &[self, other], shape, data, move |up, needs| {
            let (a, b) = (&a_td.data, &b_td.data);
            let ga = needs[0].then(|| {
                let mut g = vec![S::zero(); pa];
                for (i, &u) in up.iter().enumerate() {
                    g[i % pa] += u * dfa(a[i % pa], b[i % pb]);
                }
                g
            });
            let gb = needs[1].then(|| {
                let mut g = vec![S::zero(); pb];
                for (i, &u) in up.iter().enumerate() {
                    g[i % pb] += u * dfb(a[i % pa], b[i % pb]);
                }
                g
            });
            vec![ga, gb]
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self, TensorError> {
        self.binary(other, "add", |a, b| a + b, |_, _| S::one(), |_, _| S::one())
    }

    pub fn sub(&self, other: &Self) -> Result<Self, TensorError> {
        self.binary(other, "sub", |a, b| a - b, |_, _| S::one(), |_, _| -S::one())
    }

    pub fn mul(&self, other: &Self) -> Result<Self, TensorError> {
        self.binary(other, "mul", |a, b| a * b, |_, b| b, |a, _| a)
    }

    pub fn div(&self, other: &Self) -> Result<Self, TensorError> {
        self.binary(
            other,
            "div",
            |a, b| a / b,
            |_, b| S::one() / b,
            |a, b| -a / (b * b),
        )
    }

    /// Elementwise minimum; ties split the gradient evenly.
    pub fn minimum(&self, other: &Self) -> Result<Self, TensorError> {
        let half = S::from_f64(0.5);
        self.binary(
            other,
            "minimum",
            |a, b| a.min(b),
            move |a, b| {
                if a < b {
                    S::one()
                } else if a > b {
                    S::zero()
                } else {
                    half
                }
            },
            move |a, b| {
                if b < a {
                    S::one()
                } else if b > a {
                    S::zero()
                } else {
                    half
                }
            },
        )
    }

    /// Elementwise maximum; ties split the gradient evenly.
    pub fn maximum(&self, other: &Self) -> Result<Self, TensorError> {
        let half = S::from_f64(0.5);
        self.binary(
            other,
            "maximum",
            |a, b| a.max(b),
            move |a, b| {
                if a > b {
                    S::one()
                } else if a < b {
                    S::zero()
                } else {
                    half
                }
            },
            move |a, b| {
                if b > a {
                    S::one()
                } else if b < a {
                    S::zero()
                } else {
                    half
                }
            },
        )
    }

    pub fn neg(&self) -> Result<Self, TensorError> {
        self.unary("neg", |x| -x, |_| -S::one())
    }

    /// Derivative taken as 0 at the origin.
    pub fn relu(&self) -> Result<Self, TensorError> {
        self.unary(
            "relu",
            |x| x.max(S::zero()),
            |x| if x > S::zero() { S::one() } else { S::zero() },
        )
    }

    /// Derivative taken as 0 at the origin.
    pub fn abs(&self) -> Result<Self, TensorError> {
        self.unary(
            "abs",
            |x| x.abs(),
            |x| {
                if x > S::zero() {
                    S::one()
                } else if x < S::zero() {
                    -S::one()
                } else {
                    S::zero()
                }
            },
        )
    }

    pub fn exp(&self) -> Result<Self, TensorError> {
        self.unary("exp", |x| x.exp(), |x| x.exp())
    }

    pub fn log(&self) -> Result<Self, TensorError> {
        self.unary("log", |x| x.ln(), |x| S::one() / x)
    }

    pub fn sigmoid(&self) -> Result<Self, TensorError> {
        let s = |x: S| S::one() / (S::one() + (-x).exp());
        self.unary("sigmoid", s, move |x| {
            let y = s(x);
            y * (S::one() - y)
        })
    }

    pub fn tanh(&self) -> Result<Self, TensorError> {
        self.unary("tanh", |x| x.tanh(), |x| {
            let y = x.tanh();
            S::one() - y * y
        })
    }

    pub fn add_scalar(&self, c: S) -> Result<Self, TensorError> {
        self.unary("add_scalar", |x| x + c, |_| S::one())
    }

    pub fn mul_scalar(&self, c: S) -> Result<Self, TensorError> {
        self.unary("mul_scalar", |x| x * c, move |_| c)
    }

    /// `[m,k] @ [k,n] -> [m,n]` for rank-2 operands.
    pub fn matmul(&self, other: &Self) -> Result<Self, TensorError> {
        let (sa, sb) = (&self.td.shape, &other.td.shape);
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: sa.clone(),
                rhs: sb.clone(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let data = kernels::matmul(&self.td.data, &other.td.data, m, k, n);
        let a_td = Rc::clone(&self.td);
        let b_td = Rc::clone(&other.td);
        Tensor::from_op("matmul", &[self, other], vec![m, n], data, move |up, needs| {
            let ga = needs[0].then(|| {
                let bt = kernels::transpose(&b_td.data, k, n);
                kernels::matmul(up, &bt, m, n, k)
            });
            let gb = needs[1].then(|| kernels::matmul_at_b(&a_td.data, up, m, k, n));
            vec![ga, gb]
        })
    }

    /// Rank-2 transpose.
    pub fn transpose(&self) -> Result<Self, TensorError> {
        let s = &self.td.shape;
        if s.len() != 2 {
            return Err(TensorError::Invalid {
                op: "transpose",
                detail: format!("expected rank 2, got shape {s:?}"),
            });
        }
        let (r, c) = (s[0], s[1]);
        let data = kernels::transpose(&self.td.data, r, c);
        Tensor::from_op("transpose", &[self], vec![c, r], data, move |up, _| {
            vec![Some(kernels::transpose(up, c, r))]
        })
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self, TensorError> {
        let numel: usize = shape.iter().product();
        if numel != self.numel() || shape.iter().any(|&d| d == 0) {
            return Err(TensorError::Invalid {
                op: "reshape",
                detail: format!("cannot view {:?} as {shape:?}", self.td.shape),
            });
        }
        let data = self.td.data.clone();
        Tensor::from_op("reshape", &[self], shape.to_vec(), data, |up, _| {
            vec![Some(up.to_vec())]
        })
    }

    /// Concatenates along `axis`; all other dimensions must match.
    pub fn concat(parts: &[&Tensor<S>], axis: usize) -> Result<Self, TensorError> {
        let op = "concat";
        let first = parts.first().ok_or(TensorError::Invalid {
            op,
            detail: "empty input list".into(),
        })?;
        let rank = first.td.shape.len();
        check_axis(op, &first.td.shape, axis)?;
        let mut axis_total = 0;
        for p in parts {
            let s = &p.td.shape;
            let compatible = s.len() == rank
                && s.iter()
                    .zip(&first.td.shape)
                    .enumerate()
                    .all(|(d, (&a, &b))| d == axis || a == b);
            if !compatible {
                return Err(TensorError::ShapeMismatch {
                    op,
                    lhs: first.td.shape.clone(),
                    rhs: s.clone(),
                });
            }
            axis_total += s[axis];
        }
        let mut shape = first.td.shape.clone();
        shape[axis] = axis_total;
        let (outer, _, inner) = lane_extents(&shape, axis);
        let rows: Vec<usize> = parts.iter().map(|p| p.td.shape[axis] * inner).collect();
        let out_row: usize = rows.iter().sum();

        let mut data = Vec::with_capacity(outer * out_row);
        for o in 0..outer {
            for (p, &row) in parts.iter().zip(&rows) {
                data.extend_from_slice(&p.td.data[o * row..(o + 1) * row]);
            }
        }
        Tensor::from_op(op, parts, shape, data, move |up, needs| {
            let mut grads: Vec<Option<Vec<S>>> = rows
                .iter()
                .zip(needs)
                .map(|(&row, &need)| need.then(|| Vec::with_capacity(outer * row)))
                .collect();
            let mut cursor = 0;
            for _ in 0..outer {
                for (g, &row) in grads.iter_mut().zip(&rows) {
                    if let Some(g) = g {
                        g.extend_from_slice(&up[cursor..cursor + row]);
                    }
                    cursor += row;
                }
            }
            grads
        })
    }

    /// Stacks equal-shaped tensors along a new leading axis.
    pub fn stack(parts: &[&Tensor<S>]) -> Result<Self, TensorError> {
        let op = "stack";
        let first = parts.first().ok_or(TensorError::Invalid {
            op,
            detail: "empty input list".into(),
        })?;
        let row = first.numel();
        for p in parts {
            if p.td.shape != first.td.shape {
                return Err(TensorError::ShapeMismatch {
                    op,
                    lhs: first.td.shape.clone(),
                    rhs: p.td.shape.clone(),
                });
            }
        }
        let mut shape = vec![parts.len()];
        shape.extend_from_slice(&first.td.shape);
        let mut data = Vec::with_capacity(parts.len() * row);
        for p in parts {
            data.extend_from_slice(&p.td.data);
        }
        Tensor::from_op(op, parts, shape, data, move |up, needs| {
            needs
                .iter()
                .enumerate()
                .map(|(i, &need)| need.then(|| up[i * row..(i + 1) * row].to_vec()))
                .collect()
        })
    }

    /// Contiguous sub-range `[start, end)` along `axis`.
    pub fn slice(&self, axis: usize, start: usize, end: usize) -> Result<Self, TensorError> {
        let op = "slice";
        check_axis(op, &self.td.shape, axis)?;
        let (outer, mid, inner) = lane_extents(&self.td.shape, axis);
        if start >= end || end > mid {
            return Err(TensorError::Invalid {
                op,
                detail: format!(
                    "range {start}..{end} out of bounds for axis length {mid}"
                ),
            });
        }
        let keep = end - start;
        let mut shape = self.td.shape.clone();
        shape[axis] = keep;
        let mut data = Vec::with_capacity(outer * keep * inner);
        for o in 0..outer {
            let base = (o * mid + start) * inner;
            data.extend_from_slice(&self.td.data[base..base + keep * inner]);
        }
        let parent_numel = self.numel();
        Tensor::from_op(op, &[self], shape, data, move |up, _| {
            let mut g = vec![S::zero(); parent_numel];
            for o in 0..outer {
                let src = o * keep * inner;
                let dst = (o * mid + start) * inner;
                g[dst..dst + keep * inner].copy_from_slice(&up[src..src + keep * inner]);
            }
            vec![Some(g)]
        })
    }

    fn reduce_axis(&self, op: &'static str, axis: usize, mean: bool) -> Result<Self, TensorError> {
        check_axis(op, &self.td.shape, axis)?;
        let (outer, mid, inner) = lane_extents(&self.td.shape, axis);
        let scale = if mean {
            S::one() / S::from_usize(mid)
        } else {
            S::one()
        };
        let mut data = vec![S::zero(); outer * inner];
        for o in 0..outer {
            for m in 0..mid {
                let base = (o * mid + m) * inner;
                let out_base = o * inner;
                for i in 0..inner {
                    data[out_base + i] += self.td.data[base + i];
                }
            }
        }
        for v in &mut data {
            *v *= scale;
        }
        let mut shape: Vec<usize> = self.td.shape.clone();
        shape.remove(axis);
        if shape.is_empty() {
            shape.push(1);
        }
        Tensor::from_op(op, &[self], shape, data, move |up, _| {
            let mut g = vec![S::zero(); outer * mid * inner];
            for o in 0..outer {
                for m in 0..mid {
                    let base = (o * mid + m) * inner;
                    let up_base = o * inner;
                    for i in 0..inner {
                        g[base + i] = up[up_base + i] * scale;
                    }
                }
            }
            vec![Some(g)]
        })
    }

    pub fn sum_axis(&self, axis: usize) -> Result<Self, TensorError> {
        self.reduce_axis("sum_axis", axis, false)
    }

    pub fn mean_axis(&self, axis: usize) -> Result<Self, TensorError> {
        self.reduce_axis("mean_axis", axis, true)
    }

    fn reduce_all(&self, op: &'static str, mean: bool) -> Result<Self, TensorError> {
        let n = self.numel();
        let scale = if mean {
            S::one() / S::from_usize(n)
        } else {
            S::one()
        };
        let mut acc = S::zero();
        for &v in &self.td.data {
            acc += v;
        }
        Tensor::from_op(op, &[self], vec![1], vec![acc * scale], move |up, _| {
            vec![Some(vec![up[0] * scale; n])]
        })
    }

    pub fn sum_all(&self) -> Result<Self, TensorError> {
        self.reduce_all("sum_all", false)
    }

    pub fn mean_all(&self) -> Result<Self, TensorError> {
        self.reduce_all("mean_all", true)
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&self, axis: usize) -> Result<Self, TensorError> {
        let op = "softmax";
        check_axis(op, &self.td.shape, axis)?;
        let (outer, mid, inner) = lane_extents(&self.td.shape, axis);
        let x = &self.td.data;
        let mut data = vec![S::zero(); x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |m: usize| (o * mid + m) * inner + i;
                let mut mx = x[at(0)];
                for m in 1..mid {
                    mx = mx.max(x[at(m)]);
                }
                let mut sum = S::zero();
                for m in 0..mid {
                    let e = (x[at(m)] - mx).exp();
                    data[at(m)] = e;
                    sum += e;
                }
                for m in 0..mid {
                    data[at(m)] /= sum;
                }
            }
        }
        let y = Rc::new(data.clone());
        Tensor::from_op(op, &[self], self.td.shape.clone(), data, move |up, _| {
            let mut g = vec![S::zero(); y.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |m: usize| (o * mid + m) * inner + i;
                    let mut dot = S::zero();
                    for m in 0..mid {
                        dot += up[at(m)] * y[at(m)];
                    }
                    for m in 0..mid {
                        g[at(m)] = y[at(m)] * (up[at(m)] - dot);
                    }
                }
            }
            vec![Some(g)]
        })
    }

    /// Unit-norm lanes along `axis`; the norm is floored at the smallest
    /// positive normal value so all-zero lanes pass through as zeros.
    pub fn l2_normalize(&self, axis: usize) -> Result<Self, TensorError> {
        let op = "l2_normalize";
        check_axis(op, &self.td.shape, axis)?;
        let (outer, mid, inner) = lane_extents(&self.td.shape, axis);
        let x = &self.td.data;
        let mut data = vec![S::zero(); x.len()];
        let mut norms = vec![S::zero(); outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let at = |m: usize| (o * mid + m) * inner + i;
                let mut n2 = S::zero();
                for m in 0..mid {
                    n2 += x[at(m)] * x[at(m)];
                }
                let n = n2.sqrt().max(S::min_positive_value());
                norms[o * inner + i] = n;
                for m in 0..mid {
                    data[at(m)] = x[at(m)] / n;
                }
            }
        }
        let y = Rc::new(data.clone());
        Tensor::from_op(op, &[self], self.td.shape.clone(), data, move |up, _| {
            let mut g = vec![S::zero(); y.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |m: usize| (o * mid + m) * inner + i;
                    let n = norms[o * inner + i];
                    let mut dot = S::zero();
                    for m in 0..mid {
                        dot += up[at(m)] * y[at(m)];
                    }
                    for m in 0..mid {
                        g[at(m)] = (up[at(m)] - y[at(m)] * dot) / n;
                    }
                }
            }
            vec![Some(g)]
        })
    }

    /// Bilinear read of an `[H,W,C]` map at continuous feature coordinates,
    /// borders clamped; returns `[C]`. Differentiable in the map values.
    pub fn bilinear_sample(&self, x: f64, y: f64) -> Result<Self, TensorError> {
        let op = "bilinear_sample";
        let s = &self.td.shape;
        if s.len() != 3 {
            return Err(TensorError::Invalid {
                op,
                detail: format!("expected [H,W,C] map, got shape {s:?}"),
            });
        }
        if !x.is_finite() || !y.is_finite() {
            return Err(TensorError::Invalid {
                op,
                detail: format!("non-finite sample point ({x}, {y})"),
            });
        }
        let (h, w, c) = (s[0], s[1], s[2]);
        let taps = kernels::bilinear_taps(h, w, x, y);
        let mut data = vec![S::zero(); c];
        for &(r, col, wt) in &taps {
            let base = (r * w + col) * c;
            let wt = S::from_f64(wt);
            for ch in 0..c {
                data[ch] += self.td.data[base + ch] * wt;
            }
        }
        let numel = self.numel();
        Tensor::from_op(op, &[self], vec![c], data, move |up, _| {
            let mut g = vec![S::zero(); numel];
            for &(r, col, wt) in &taps {
                let base = (r * w + col) * c;
                let wt = S::from_f64(wt);
                for ch in 0..c {
                    g[base + ch] += up[ch] * wt;
                }
            }
            vec![Some(g)]
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
    fn add_broadcasts_trailing_suffix() {
        let a = t64(vec![1.0, 2.0, 3.0, 4.0], &[2, 2]);
        let b = t64(vec![10.0, 20.0], &[2]);
        assert_eq!(a.add(&b).unwrap().data(), &[11.0, 22.0, 13.0, 24.0]);
        // symmetric: smaller side first
        assert_eq!(b.add(&a).unwrap().data(), &[11.0, 22.0, 13.0, 24.0]);
    }

    #[test]
    fn add_rejects_incompatible_shapes() {
        let a = t64(vec![1.0, 2.0, 3.0, 4.0], &[2, 2]);
        let b = t64(vec![1.0, 2.0, 3.0], &[3]);
        assert!(matches!(
            a.add(&b),
            Err(TensorError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn broadcast_gradient_sum_reduces() {
        let tape = Tape::<f64>::new();
        let b = tape.leaf(vec![1.0, 2.0], &[2]).unwrap();
        let a = t64(vec![1.0, 1.0, 1.0, 1.0], &[2, 2]);
        a.mul(&b).unwrap().sum_all().unwrap().backward().unwrap();
        // each b element multiplies two 1.0 cells
        assert_eq!(b.grad().unwrap(), vec![2.0, 2.0]);
    }

    #[test]
    fn div_by_zero_faults() {
        let a = t64(vec![1.0], &[1]);
        let b = t64(vec![0.0], &[1]);
        assert!(matches!(a.div(&b), Err(TensorError::NonFinite { .. })));
    }

    #[test]
    fn log_of_nonpositive_faults() {
        let a = t64(vec![-1.0], &[1]);
        assert!(matches!(a.log(), Err(TensorError::NonFinite { .. })));
    }

    #[test]
    fn matmul_known_product_and_grads() {
        let tape = Tape::<f64>::new();
        let a = tape.leaf(vec![1.0, 2.0, 3.0, 4.0], &[2, 2]).unwrap();
        let b = tape.leaf(vec![5.0, 6.0, 7.0, 8.0], &[2, 2]).unwrap();
        let y = a.matmul(&b).unwrap();
        assert_eq!(y.data(), &[19.0, 22.0, 43.0, 50.0]);
        y.sum_all().unwrap().backward().unwrap();
        // dA = 1s @ Bᵀ, dB = Aᵀ @ 1s
        assert_eq!(a.grad().unwrap(), vec![11.0, 15.0, 11.0, 15.0]);
        assert_eq!(b.grad().unwrap(), vec![4.0, 4.0, 6.0, 6.0]);
    }

    #[test]
    fn transpose_round_trips() {
        let a = t64(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[2, 3]);
        let at = a.transpose().unwrap();
        assert_eq!(at.shape(), &[3, 2]);
        assert_eq!(at.data(), &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
        assert_eq!(at.transpose().unwrap().data(), a.data());
    }

    #[test]
    fn concat_and_slice_invert() {
        let a = t64(vec![1.0, 2.0, 3.0, 4.0], &[2, 2]);
        let b = t64(vec![5.0, 6.0], &[2, 1]);
        let c = Tensor::concat(&[&a, &b], 1).unwrap();
        assert_eq!(c.shape(), &[2, 3]);
        assert_eq!(c.data(), &[1.0, 2.0, 5.0, 3.0, 4.0, 6.0]);
        let back = c.slice(1, 0, 2).unwrap();
        assert_eq!(back.data(), a.data());
        assert_eq!(c.slice(1, 2, 3).unwrap().data(), b.data());
    }

    #[test]
    fn stack_builds_matrix_from_rows() {
        let a = t64(vec![1.0, 2.0], &[2]);
        let b = t64(vec![3.0, 4.0], &[2]);
        let m = Tensor::stack(&[&a, &b]).unwrap();
        assert_eq!(m.shape(), &[2, 2]);
        assert_eq!(m.data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn reductions_hand_values() {
        let a = t64(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[2, 3]);
        assert_eq!(a.sum_axis(0).unwrap().data(), &[5.0, 7.0, 9.0]);
        assert_eq!(a.sum_axis(1).unwrap().data(), &[6.0, 15.0]);
        assert_eq!(a.mean_axis(1).unwrap().data(), &[2.0, 5.0]);
        assert_eq!(a.sum_all().unwrap().data(), &[21.0]);
        assert_eq!(a.mean_all().unwrap().data(), &[3.5]);
        assert_eq!(a.sum_axis(0).unwrap().shape(), &[3]);
        // rank-1 reduction keeps scalar shape [1]
        let v = t64(vec![1.0, 2.0], &[2]);
        assert_eq!(v.sum_axis(0).unwrap().shape(), &[1]);
    }

    #[test]
    fn softmax_rows_sum_to_one_and_order_preserved() {
        let a = t64(vec![1.0, 2.0, 3.0, 1.0, 1.0, 1.0], &[2, 3]);
        let s = a.softmax(1).unwrap();
        for row in 0..2 {
            let sum: f64 = s.data()[row * 3..(row + 1) * 3].iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
        assert!(s.data()[0] < s.data()[1] && s.data()[1] < s.data()[2]);
        assert!((s.data()[3] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_survives_large_logits() {
        let a = t64(vec![1000.0, 1001.0], &[2]);
        let s = a.softmax(0).unwrap();
        assert!(s.data().iter().all(|v| v.is_finite()));
        assert!((s.data()[0] + s.data()[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn l2_normalize_unit_norm() {
        let a = t64(vec![3.0, 4.0, 0.0, 5.0], &[2, 2]);
        let n = a.l2_normalize(1).unwrap();
        assert!((n.data()[0] - 0.6).abs() < 1e-12);
        assert!((n.data()[1] - 0.8).abs() < 1e-12);
        for row in 0..2 {
            let norm: f64 = n.data()[row * 2..(row + 1) * 2]
                .iter()
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt();
            assert!((norm - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn l2_normalize_zero_lane_stays_zero() {
        let a = t64(vec![0.0, 0.0], &[1, 2]);
        let n = a.l2_normalize(1).unwrap();
        assert_eq!(n.data(), &[0.0, 0.0]);
    }

    #[test]
    fn bilinear_sample_center_and_clamp() {
        let map = t64(vec![1.0, 2.0, 3.0, 4.0], &[2, 2, 1]);
        assert!((map.bilinear_sample(0.5, 0.5).unwrap().item() - 2.5).abs() < 1e-12);
        assert!((map.bilinear_sample(-1.0, -1.0).unwrap().item() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bilinear_sample_gradient_scatters_weights() {
        let tape = Tape::<f64>::new();
        let map = tape.leaf(vec![1.0, 2.0, 3.0, 4.0], &[2, 2, 1]).unwrap();
        map.bilinear_sample(0.25, 0.75).unwrap().backward().unwrap();
        let g = map.grad().unwrap();
        assert!((g.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        // fy=0.75, fx=0.25 weights
        assert!((g[0] - 0.25 * 0.75).abs() < 1e-12);
        assert!((g[1] - 0.25 * 0.25).abs() < 1e-12);
        assert!((g[2] - 0.75 * 0.75).abs() < 1e-12);
        assert!((g[3] - 0.75 * 0.25).abs() < 1e-12);
    }

    #[test]
    fn minimum_maximum_route_gradients() {
        let tape = Tape::<f64>::new();
        let a = tape.leaf(vec![1.0, 5.0], &[2]).unwrap();
        let b = tape.leaf(vec![3.0, 3.0], &[2]).unwrap();
        a.minimum(&b).unwrap().sum_all().unwrap().backward().unwrap();
        assert_eq!(a.grad().unwrap(), vec![1.0, 0.0]);
        assert_eq!(b.grad().unwrap(), vec![0.0, 1.0]);
        tape.zero_grads();
        a.maximum(&b).unwrap().sum_all().unwrap().backward().unwrap();
        assert_eq!(a.grad().unwrap(), vec![0.0, 1.0]);
        assert_eq!(b.grad().unwrap(), vec![1.0, 0.0]);
    }
}
