use super::{GradVector, ParamVector};
use crate::error::{Error, Result};

/// Update rule the server applies to the aggregated client quantity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ServerOptimizer {
    Sgd,
    Adam {
        beta1: f64,
        beta2: f64,
        epsilon: f64,
    },
    RmsProp {
        rho: f64,
        epsilon: f64,
    },
}

impl ServerOptimizer {
    pub fn adam() -> Self {
        Self::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn rmsprop() -> Self {
        Self::RmsProp {
            rho: 0.9,
            epsilon: 1e-8,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Sgd => "sgd",
            Self::Adam { .. } => "adam",
            Self::RmsProp { .. } => "rmsprop",
        }
    }
}

/// Server learning rate, optimizer hyperparameters and moment buffers.
///
/// Buffers stay empty until the first step sizes them to the parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ServerOptimizerState {
    optimizer: ServerOptimizer,
    learning_rate: f64,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
    step: u64,
}

impl ServerOptimizerState {
    pub fn new(optimizer: ServerOptimizer, learning_rate: f64) -> Self {
        Self {
            optimizer,
            learning_rate,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
            step: 0,
        }
    }

    pub fn optimizer(&self) -> ServerOptimizer {
        self.optimizer
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.first_moment
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.second_moment
    }

    fn ensure_buffers(&mut self, len: usize) -> Result<()> {
        let (m, v) = match self.optimizer {
            ServerOptimizer::Sgd => (false, false),
            ServerOptimizer::Adam { .. } => (true, true),
            ServerOptimizer::RmsProp { .. } => (false, true),
        };
        for (wanted, buf) in [(m, &mut self.first_moment), (v, &mut self.second_moment)] {
            if !wanted {
                continue;
            }
            if buf.is_empty() {
                buf.resize(len, 0.0);
            } else if buf.len() != len {
                return Err(Error::ShapeMismatch {
                    context: "server optimizer moments",
                    expected: buf.len(),
                    found: len,
                });
            }
        }
        Ok(())
    }

    /// Applies one server step to `params` in place.
    pub fn apply(&mut self, params: &mut ParamVector, pseudo_grad: &GradVector) -> Result<()> {
        if params.len() != pseudo_grad.len() {
            return Err(Error::ShapeMismatch {
                context: "server_apply",
                expected: params.len(),
                found: pseudo_grad.len(),
            });
        }
        self.ensure_buffers(params.len())?;
        self.step += 1;
        let lr = self.learning_rate;
        let g = pseudo_grad.values();
        let w = params.values_mut();
        match self.optimizer {
            ServerOptimizer::Sgd => {
                for (w, g) in w.iter_mut().zip(g) {
                    *w -= lr * g;
                }
            }
            ServerOptimizer::Adam {
                beta1,
                beta2,
                epsilon,
            } => {
                let t = self.step as i32;
                let bias1 = 1.0 - beta1.powi(t);
                let bias2 = 1.0 - beta2.powi(t);
                for i in 0..w.len() {
                    let m = &mut self.first_moment[i];
                    let v = &mut self.second_moment[i];
                    *m = beta1 * *m + (1.0 - beta1) * g[i];
                    *v = beta2 * *v + (1.0 - beta2) * g[i] * g[i];
                    let m_hat = *m / bias1;
                    let v_hat = *v / bias2;
                    w[i] -= lr * m_hat / (v_hat.sqrt() + epsilon);
                }
            }
            ServerOptimizer::RmsProp { rho, epsilon } => {
                for i in 0..w.len() {
                    let v = &mut self.second_moment[i];
                    *v = rho * *v + (1.0 - rho) * g[i] * g[i];
                    w[i] -= lr * g[i] / (v.sqrt() + epsilon);
                }
            }
        }
        Ok(())
    }
}

/// `w_{t+1} = w_t - lr * f(pseudo_grad)` for the configured rule; returns the
/// new parameters and the advanced optimizer state.
pub fn server_apply(
    state: &ServerOptimizerState,
    params: &ParamVector,
    pseudo_grad: &GradVector,
) -> Result<(ParamVector, ServerOptimizerState)> {
    let mut state = state.clone();
    let mut params = params.clone();
    state.apply(&mut params, pseudo_grad)?;
    Ok((params, state))
}
