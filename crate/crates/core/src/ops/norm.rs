use crate::tensor::{Tensor, TensorError};

/// Inference-mode batch normalization parameters, one entry per channel.
#[derive(Debug, Clone, Copy)]
pub struct BatchNormParams<'a> {
    pub gamma: &'a Tensor,
    pub beta: &'a Tensor,
    pub running_mean: &'a Tensor,
    pub running_var: &'a Tensor,
    pub epsilon: f32,
}

impl BatchNormParams<'_> {
    fn channels(&self) -> Result<usize, TensorError> {
        let c = self.gamma.len();
        let named = [
            ("gamma", self.gamma),
            ("beta", self.beta),
            ("running_mean", self.running_mean),
            ("running_var", self.running_var),
        ];
        for (name, t) in named {
            if t.shape() != [c] {
                return Err(TensorError::ParamShape {
                    op: "batchnorm",
                    name,
                    expected: vec![c],
                    found: t.shape().to_vec(),
                });
            }
        }
        if !(self.epsilon >= 0.0) {
            return Err(TensorError::InvalidParam {
                op: "batchnorm",
                detail: format!("epsilon {} must be non-negative", self.epsilon),
            });
        }
        if let Some((i, v)) = self
            .running_var
            .data()
            .iter()
            .enumerate()
            .find(|(_, &v)| !(v >= 0.0) || v + self.epsilon <= 0.0)
        {
            return Err(TensorError::InvalidParam {
                op: "batchnorm",
                detail: format!("channel {i}: running_var {v} with epsilon {} is not positive", self.epsilon),
            });
        }
        Ok(c)
    }
}

/// `gamma * (x - mean) / sqrt(var + eps) + beta`, per channel.
pub fn batchnorm_infer(input: &Tensor, params: &BatchNormParams<'_>) -> Result<Tensor, TensorError> {
    let (c, h, w) = input.chw("batchnorm")?;
    let pc = params.channels()?;
    if pc != c {
        return Err(TensorError::ChannelMismatch {
            op: "batchnorm",
            input: c,
            params: pc,
        });
    }
    let mut out = input.clone();
    let plane = h * w;
    for (ch, dst) in out.data_mut().chunks_mut(plane).enumerate() {
        let g = params.gamma.data()[ch];
        let b = params.beta.data()[ch];
        let m = params.running_mean.data()[ch];
        let denom = (params.running_var.data()[ch] + params.epsilon).sqrt();
        for v in dst {
            *v = g * (*v - m) / denom + b;
        }
    }
    Ok(out)
}
