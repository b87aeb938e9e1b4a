//! Mini-batch optimizers and the warm-up/decay learning-rate schedule.

use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adamax,
}

impl OptimizerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adamax => "adamax",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "sgd" => Some(OptimizerKind::Sgd),
            "adamax" => Some(OptimizerKind::Adamax),
            _ => None,
        }
    }
}

/// Linear warm-up to `base_lr` over `warmup` iterations, then multiplied
/// by `factor` at each decay step.
pub fn learning_rate(
    base_lr: f64,
    warmup: usize,
    decay_steps: &[usize],
    factor: f64,
    iteration: usize,
) -> f64 {
    let mut lr = if warmup > 0 && iteration < warmup {
        base_lr * (iteration + 1) as f64 / warmup as f64
    } else {
        base_lr
    };
    for &step in decay_steps {
        if iteration >= step {
            lr *= factor;
        }
    }
    lr
}

struct AdamaxSlot<S> {
    first_moment: Vec<S>,
    inf_norm: Vec<S>,
}

/// Optimizer over an ordered list of parameter tensors. The tensor order
/// must be identical on every step.
pub struct Optimizer<S> {
    kind: OptimizerKind,
    beta1: S,
    beta2: S,
    epsilon: S,
    step: u32,
    slots: Vec<AdamaxSlot<S>>,
}

impl<S: Scalar> Optimizer<S> {
    pub fn new(kind: OptimizerKind, tensor_lens: &[usize]) -> Self {
        let slots = match kind {
            OptimizerKind::Sgd => Vec::new(),
            OptimizerKind::Adamax => tensor_lens
                .iter()
                .map(|&len| AdamaxSlot {
                    first_moment: vec![S::zero(); len],
                    inf_norm: vec![S::zero(); len],
                })
                .collect(),
        };
        Self {
            kind,
            beta1: S::from_f64(0.9),
            beta2: S::from_f64(0.999),
            epsilon: S::from_f64(1e-8),
            step: 0,
            slots,
        }
    }

    pub fn step(&mut self, params: &mut [&mut [S]], grads: &[&[S]], lr: S) {
        assert_eq!(params.len(), grads.len(), "tensor list mismatch");
        self.step += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (tensor, grad) in params.iter_mut().zip(grads) {
                    for (t, &g) in tensor.iter_mut().zip(*grad) {
                        *t -= lr * g;
                    }
                }
            }
            OptimizerKind::Adamax => {
                let bias_correction = S::one() - self.beta1.powi(self.step as i32);
                let scale = lr / bias_correction;
                for ((tensor, grad), slot) in
                    params.iter_mut().zip(grads).zip(self.slots.iter_mut())
                {
                    assert_eq!(tensor.len(), grad.len(), "tensor/grad length mismatch");
                    for k in 0..tensor.len() {
                        let g = grad[k];
                        slot.first_moment[k] =
                            self.beta1 * slot.first_moment[k] + (S::one() - self.beta1) * g;
                        let decayed = self.beta2 * slot.inf_norm[k];
                        let mag = g.abs();
                        slot.inf_norm[k] = if decayed > mag { decayed } else { mag };
                        tensor[k] -=
                            scale * slot.first_moment[k] / (slot.inf_norm[k] + self.epsilon);
                    }
                }
            }
        }
    }
}
