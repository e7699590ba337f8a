//! Fully connected leaky-ReLU networks over a flat parameter vector.
//!
//! Used for the BNN particles and for the MC-dropout interpolator. The
//! parameter layout is, per layer, the `fan_in × fan_out` weight matrix in
//! row-major order followed by the `fan_out` biases.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub const LEAKY_SLOPE: f64 = 0.01;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    sizes: Vec<usize>,
}

/// Intermediate values of one forward pass, kept for the backward pass.
pub struct ForwardTrace {
    /// Input to every layer (post activation and dropout mask for hidden ones).
    inputs: Vec<DMatrix<f64>>,
    /// Pre-activations of every hidden layer.
    pre: Vec<DMatrix<f64>>,
    masks: Option<Vec<DMatrix<f64>>>,
    pub output: DVector<f64>,
}

#[inline]
fn leaky(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        LEAKY_SLOPE * x
    }
}

#[inline]
fn leaky_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        LEAKY_SLOPE
    }
}

impl Mlp {
    /// `sizes` lists layer widths from input to output, e.g. `[d, 32, 32, 32, 1]`.
    pub fn new(sizes: Vec<usize>) -> Self {
        assert!(sizes.len() >= 2 && sizes.iter().all(|&s| s > 0));
        assert_eq!(*sizes.last().unwrap(), 1, "scalar-output networks only");
        Mlp { sizes }
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn num_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn hidden_widths(&self) -> &[usize] {
        &self.sizes[1..self.sizes.len() - 1]
    }

    pub fn num_params(&self) -> usize {
        self.sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// Offsets `(weight_start, bias_start)` of layer `l`.
    pub fn layer_offsets(&self, l: usize) -> (usize, usize) {
        let mut off = 0;
        for w in self.sizes.windows(2).take(l) {
            off += w[0] * w[1] + w[1];
        }
        (off, off + self.sizes[l] * self.sizes[l + 1])
    }

    fn weight(&self, theta: &[f64], l: usize) -> DMatrix<f64> {
        let (w, b) = self.layer_offsets(l);
        DMatrix::from_row_slice(self.sizes[l], self.sizes[l + 1], &theta[w..b])
    }

    fn bias<'a>(&self, theta: &'a [f64], l: usize) -> &'a [f64] {
        let (_, b) = self.layer_offsets(l);
        &theta[b..b + self.sizes[l + 1]]
    }

    pub fn forward(&self, theta: &[f64], x: &DMatrix<f64>) -> DVector<f64> {
        self.forward_trace(theta, x, None).output
    }

    /// Forward pass; `masks[l]` (rows × width of hidden layer `l`) multiplies
    /// that layer's activations when given.
    pub fn forward_trace(&self, theta: &[f64], x: &DMatrix<f64>, masks: Option<Vec<DMatrix<f64>>>) -> ForwardTrace {
        assert_eq!(theta.len(), self.num_params());
        assert_eq!(x.ncols(), self.input_dim());
        let nl = self.num_layers();
        let mut inputs = Vec::with_capacity(nl);
        let mut pre = Vec::with_capacity(nl - 1);
        let mut a = x.clone();
        for l in 0..nl {
            let mut z = &a * self.weight(theta, l);
            let b = self.bias(theta, l);
            for mut row in z.row_iter_mut() {
                for (v, bj) in row.iter_mut().zip(b) {
                    *v += bj;
                }
            }
            inputs.push(a);
            if l + 1 == nl {
                return ForwardTrace {
                    inputs,
                    pre,
                    masks,
                    output: z.column(0).into_owned(),
                };
            }
            let mut act = z.map(leaky);
            if let Some(m) = masks.as_ref() {
                act.component_mul_assign(&m[l]);
            }
            pre.push(z);
            a = act;
        }
        unreachable!()
    }

    /// Gradient of `⟨h_θ(X), v⟩` with respect to θ, i.e. `Jᵀ v`.
    pub fn vjp(&self, theta: &[f64], trace: &ForwardTrace, v: &DVector<f64>) -> Vec<f64> {
        let nl = self.num_layers();
        let mut grad = vec![0.0; self.num_params()];
        let mut delta = DMatrix::from_column_slice(v.len(), 1, v.as_slice());
        for l in (0..nl).rev() {
            let (w_off, b_off) = self.layer_offsets(l);
            let gw = trace.inputs[l].transpose() * &delta;
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            for i in 0..fan_in {
                for j in 0..fan_out {
                    grad[w_off + i * fan_out + j] = gw[(i, j)];
                }
            }
            for j in 0..fan_out {
                grad[b_off + j] = delta.column(j).sum();
            }
            if l == 0 {
                break;
            }
            let mut back = &delta * self.weight(theta, l).transpose();
            if let Some(m) = trace.masks.as_ref() {
                back.component_mul_assign(&m[l - 1]);
            }
            let z = &trace.pre[l - 1];
            back.zip_apply(z, |b, zz| *b *= leaky_grad(zz));
            delta = back;
        }
        grad
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lcg(n: usize, seed: u64) -> Vec<f64> {
        let mut s = seed;
        (0..n)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            })
            .collect()
    }

    #[test]
    fn param_count_and_offsets() {
        let mlp = Mlp::new(vec![2, 3, 1]);
        assert_eq!(mlp.num_params(), 2 * 3 + 3 + 3 + 1);
        assert_eq!(mlp.layer_offsets(1), (9, 12));
    }

    #[test]
    fn vjp_matches_finite_differences() {
        let mlp = Mlp::new(vec![2, 4, 3, 1]);
        let theta = lcg(mlp.num_params(), 3);
        let x = DMatrix::from_row_slice(3, 2, &lcg(6, 9));
        let v = DVector::from_vec(vec![0.3, -1.2, 0.7]);
        let trace = mlp.forward_trace(&theta, &x, None);
        let g = mlp.vjp(&theta, &trace, &v);
        let eps = 1e-6;
        for i in 0..theta.len() {
            let mut tp = theta.clone();
            tp[i] += eps;
            let mut tm = theta.clone();
            tm[i] -= eps;
            let fd = (mlp.forward(&tp, &x).dot(&v) - mlp.forward(&tm, &x).dot(&v)) / (2.0 * eps);
            assert!(
                (fd - g[i]).abs() < 1e-6 * (1.0 + fd.abs()),
                "param {i}: {fd} vs {}",
                g[i]
            );
        }
    }
}
