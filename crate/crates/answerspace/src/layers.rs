//! Weight-normalized nonlinear layers and plain linear layers.
//!
//! A nonlinear layer computes `relu(wn(W) x + b)` where `wn` rescales
//! each row of `W` to unit L2 norm (weight normalization with the gain
//! folded into the direction). Normalization can be disabled per layer.

use crate::linalg::{axpy, dot, l2_norm, Matrix};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct NonLinearLayer<S> {
    pub weight: Matrix<S>,
    pub bias: Vec<S>,
    pub weight_norm: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearLayer<S> {
    pub weight: Matrix<S>,
    pub bias: Vec<S>,
}

/// Intermediates needed by the backward pass of a nonlinear layer.
#[derive(Debug, Clone)]
pub struct LayerCache<S> {
    /// Pre-activation values, z = wn(W) x + b.
    pub pre_activation: Vec<S>,
    /// Post-ReLU outputs.
    pub output: Vec<S>,
    /// Row norms of the weight matrix (ones when normalization is off).
    row_norms: Vec<S>,
}

/// Parameter gradients of one layer.
#[derive(Debug, Clone)]
pub struct LayerGrad<S> {
    pub weight: Matrix<S>,
    pub bias: Vec<S>,
}

impl<S: Scalar> LayerGrad<S> {
    pub fn zeros_like_nonlinear(layer: &NonLinearLayer<S>) -> Self {
        Self {
            weight: Matrix::zeros(layer.weight.rows(), layer.weight.cols()),
            bias: vec![S::zero(); layer.bias.len()],
        }
    }

    pub fn zeros_like_linear(layer: &LinearLayer<S>) -> Self {
        Self {
            weight: Matrix::zeros(layer.weight.rows(), layer.weight.cols()),
            bias: vec![S::zero(); layer.bias.len()],
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        axpy(self.weight.data_mut(), S::one(), other.weight.data());
        axpy(&mut self.bias, S::one(), &other.bias);
    }

    pub fn scale(&mut self, s: S) {
        crate::linalg::scale_in_place(self.weight.data_mut(), s);
        crate::linalg::scale_in_place(&mut self.bias, s);
    }

    pub fn zero(&mut self) {
        self.weight.data_mut().fill(S::zero());
        self.bias.fill(S::zero());
    }
}

impl<S: Scalar> NonLinearLayer<S> {
    pub fn output_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn forward(&self, x: &[S]) -> LayerCache<S> {
        assert_eq!(x.len(), self.input_dim(), "layer input dimension mismatch");
        let rows = self.weight.rows();
        let mut pre = Vec::with_capacity(rows);
        let mut norms = Vec::with_capacity(rows);
        for (row, &b) in self.weight.iter_rows().zip(&self.bias) {
            let norm = if self.weight_norm { l2_norm(row) } else { S::one() };
            // A zero row under weight normalization contributes its bias only.
            let z = if norm > S::zero() {
                dot(row, x) / norm + b
            } else {
                b
            };
            pre.push(z);
            norms.push(norm);
        }
        let output = pre
            .iter()
            .map(|&z| if z > S::zero() { z } else { S::zero() })
            .collect();
        LayerCache {
            pre_activation: pre,
            output,
            row_norms: norms,
        }
    }

    /// Backpropagates `grad_output` (gradient w.r.t. the post-ReLU
    /// output) through the layer, accumulating the parameter gradients
    /// into `grad` and the input gradient into `grad_input`.
    ///
    /// The ReLU subgradient at zero is taken as 0. With weight
    /// normalization, the gradient of z = <w/|w|, x> + b w.r.t. the row w
    /// is (x - <w_hat, x> w_hat) / |w|; rows with zero norm get zero
    /// gradient.
    pub fn backward_into(
        &self,
        x: &[S],
        cache: &LayerCache<S>,
        grad_output: &[S],
        grad_input: &mut [S],
        grad: &mut LayerGrad<S>,
    ) {
        for (j, &g) in grad_output.iter().enumerate() {
            if cache.pre_activation[j] <= S::zero() || g == S::zero() {
                continue;
            }
            grad.bias[j] += g;
            let row = self.weight.row(j);
            if self.weight_norm {
                let norm = cache.row_norms[j];
                if norm > S::zero() {
                    // <w_hat, x> equals the pre-activation minus the bias.
                    let proj = cache.pre_activation[j] - self.bias[j];
                    let inv = S::one() / norm;
                    let grad_row = grad.weight.row_mut(j);
                    for k in 0..row.len() {
                        let w_hat = row[k] * inv;
                        grad_row[k] += g * (x[k] - proj * w_hat) * inv;
                        grad_input[k] += g * w_hat;
                    }
                }
            } else {
                axpy(grad.weight.row_mut(j), g, x);
                axpy(grad_input, g, row);
            }
        }
    }

    pub fn backward(
        &self,
        x: &[S],
        cache: &LayerCache<S>,
        grad_output: &[S],
        grad_input: &mut [S],
    ) -> LayerGrad<S> {
        let mut grad = LayerGrad::zeros_like_nonlinear(self);
        self.backward_into(x, cache, grad_output, grad_input, &mut grad);
        grad
    }
}

impl<S: Scalar> LinearLayer<S> {
    pub fn output_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn forward(&self, x: &[S]) -> Vec<S> {
        assert_eq!(x.len(), self.input_dim(), "layer input dimension mismatch");
        let mut out = self.weight.matvec(x);
        for (o, &b) in out.iter_mut().zip(&self.bias) {
            *o += b;
        }
        out
    }

    pub fn backward_into(
        &self,
        x: &[S],
        grad_output: &[S],
        grad_input: &mut [S],
        grad: &mut LayerGrad<S>,
    ) {
        for (j, &g) in grad_output.iter().enumerate() {
            if g == S::zero() {
                continue;
            }
            grad.bias[j] += g;
            axpy(grad.weight.row_mut(j), g, x);
            axpy(grad_input, g, self.weight.row(j));
        }
    }

    pub fn backward(
        &self,
        x: &[S],
        grad_output: &[S],
        grad_input: &mut [S],
    ) -> LayerGrad<S> {
        let mut grad = LayerGrad::zeros_like_linear(self);
        self.backward_into(x, grad_output, grad_input, &mut grad);
        grad
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layer(weight_norm: bool) -> NonLinearLayer<f64> {
        NonLinearLayer {
            weight: Matrix::from_rows(vec![vec![3.0, 4.0], vec![-1.0, 0.5]]),
            bias: vec![0.1, -0.2],
            weight_norm,
        }
    }

    #[test]
    fn forward_without_weight_norm_matches_hand_computation() {
        let l = layer(false);
        let cache = l.forward(&[1.0, 2.0]);
        // z0 = 3 + 8 + 0.1 = 11.1; z1 = -1 + 1 - 0.2 = -0.2 -> relu 0.
        assert!((cache.pre_activation[0] - 11.1).abs() < 1e-12);
        assert_eq!(cache.output[1], 0.0);
    }

    #[test]
    fn forward_with_weight_norm_uses_unit_rows() {
        let l = layer(true);
        let cache = l.forward(&[1.0, 2.0]);
        // Row 0 has norm 5: z0 = (3 + 8)/5 + 0.1 = 2.3.
        assert!((cache.pre_activation[0] - 2.3).abs() < 1e-12);
    }

    #[test]
    fn identity_rows_are_fixed_points_of_weight_norm() {
        let l = NonLinearLayer {
            weight: Matrix::from_rows(vec![vec![1.0, 0.0], vec![0.0, 1.0]]),
            bias: vec![0.0, 0.0],
            weight_norm: true,
        };
        let cache = l.forward(&[0.5, 1.5]);
        assert_eq!(cache.output, vec![0.5, 1.5]);
    }

    #[test]
    fn zero_row_contributes_bias_only() {
        let l = NonLinearLayer {
            weight: Matrix::from_rows(vec![vec![0.0, 0.0]]),
            bias: vec![0.7],
            weight_norm: true,
        };
        let cache = l.forward(&[5.0, -3.0]);
        assert_eq!(cache.pre_activation, vec![0.7]);
        let mut gx = vec![0.0; 2];
        let grad = l.backward(&[5.0, -3.0], &cache, &[1.0], &mut gx);
        assert_eq!(grad.weight.row(0), &[0.0, 0.0]);
        assert_eq!(gx, vec![0.0, 0.0]);
    }
}
