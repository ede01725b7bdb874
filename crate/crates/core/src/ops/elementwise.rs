use crate::tensor::{Tensor, TensorError};

pub fn relu(input: &Tensor) -> Tensor {
    input.map(|x| x.max(0.0))
}

pub fn relu_in_place(t: &mut Tensor) {
    for v in t.data_mut() {
        *v = v.max(0.0);
    }
}

/// Stacks `(C_i, H, W)` tensors along the channel axis in argument order.
pub fn concat_channels(inputs: &[&Tensor]) -> Result<Tensor, TensorError> {
    let first = inputs.first().ok_or_else(|| TensorError::InvalidParam {
        op: "concat_channels",
        detail: "no inputs".into(),
    })?;
    let (_, h, w) = first.chw("concat_channels")?;
    let mut channels = 0;
    for t in inputs {
        match t.shape() {
            [c, th, tw] if *th == h && *tw == w => channels += c,
            _ => {
                return Err(TensorError::SpatialMismatch {
                    shapes: inputs.iter().map(|t| t.shape().to_vec()).collect(),
                })
            }
        }
    }
    let mut data = Vec::with_capacity(channels * h * w);
    for t in inputs {
        data.extend_from_slice(t.data());
    }
    Tensor::new(vec![channels, h, w], data)
}

/// `weights . input + bias` for `weights` of shape `(M, N)`.
pub fn linear(input: &Tensor, weights: &Tensor, bias: Option<&Tensor>) -> Result<Tensor, TensorError> {
    let n = input.len();
    if input.rank() != 1 {
        return Err(TensorError::Rank {
            op: "linear",
            expected: 1,
            shape: input.shape().to_vec(),
        });
    }
    let m = match *weights.shape() {
        [m, wn] if wn == n => m,
        _ => {
            return Err(TensorError::ParamShape {
                op: "linear",
                name: "weights",
                expected: vec![weights.shape().first().copied().unwrap_or(0), n],
                found: weights.shape().to_vec(),
            })
        }
    };
    if let Some(b) = bias {
        if b.shape() != [m] {
            return Err(TensorError::ParamShape {
                op: "linear",
                name: "bias",
                expected: vec![m],
                found: b.shape().to_vec(),
            });
        }
    }
    let x = input.data();
    let out = weights
        .data()
        .chunks(n)
        .enumerate()
        .map(|(i, row)| {
            let mut acc = 0.0f32;
            for (&wv, &xv) in row.iter().zip(x) {
                acc += wv * xv;
            }
            acc + bias.map_or(0.0, |b| b.data()[i])
        })
        .collect();
    Ok(Tensor::from_vec(out))
}

/// Max-shifted softmax over a vector; sums are accumulated in `f64`.
pub fn softmax(input: &Tensor) -> Tensor {
    let max = input.data().iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let exps: Vec<f64> = input.data().iter().map(|&x| (x as f64 - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let data = exps.iter().map(|e| (e / sum) as f32).collect();
    Tensor::new(input.shape().to_vec(), data).expect("shape preserved")
}

/// Row-major linearization to a rank-1 tensor.
pub fn flatten(input: &Tensor) -> Tensor {
    Tensor::from_vec(input.data().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_definition() {
        let y = relu(&Tensor::from_vec(vec![-1.0, 0.0, 2.0]));
        assert_eq!(y.data(), [0.0, 0.0, 2.0]);
        assert!(relu(&Tensor::from_vec(vec![-1.0, -3.0])).data().iter().all(|&v| v == 0.0));
        let pos = Tensor::from_vec(vec![0.5, 3.0]);
        assert_eq!(relu(&pos), pos);
    }

    #[test]
    fn concat_two() {
        let a = Tensor::new(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::new(vec![1, 2, 2], vec![5.0, 6.0, 7.0, 8.0]).unwrap();
        let y = concat_channels(&[&a, &b]).unwrap();
        assert_eq!(y.shape(), [2, 2, 2]);
        assert_eq!(y.data(), [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
        assert_eq!(concat_channels(&[&a]).unwrap(), a);
    }

    #[test]
    fn concat_spatial_mismatch_lists_shapes() {
        let a = Tensor::zeros(vec![1, 2, 2]);
        let b = Tensor::zeros(vec![1, 3, 2]);
        let err = concat_channels(&[&a, &b]).unwrap_err();
        assert_eq!(
            err,
            TensorError::SpatialMismatch {
                shapes: vec![vec![1, 2, 2], vec![1, 3, 2]]
            }
        );
    }

    #[test]
    fn linear_identity_and_zero_input() {
        let x = Tensor::from_vec(vec![1.0, -2.0, 3.5]);
        let mut eye = Tensor::zeros(vec![3, 3]);
        for i in 0..3 {
            eye.data_mut()[i * 4] = 1.0;
        }
        let zero_b = Tensor::zeros(vec![3]);
        assert_eq!(linear(&x, &eye, Some(&zero_b)).unwrap(), x);
        let b = Tensor::from_vec(vec![0.1, 0.2]);
        let w = Tensor::full(vec![2, 3], 4.0);
        let y = linear(&Tensor::zeros(vec![3]), &w, Some(&b)).unwrap();
        assert_eq!(y, b);
    }

    #[test]
    fn softmax_uniform_and_stable() {
        let y = softmax(&Tensor::full(vec![4], 3.0));
        assert_eq!(y.data(), [0.25; 4]);
        let y = softmax(&Tensor::from_vec(vec![1000.0, 0.0]));
        assert!(y.is_finite());
        assert!((y.data()[0] - 1.0).abs() < 1e-6 && y.data()[1] < 1e-6);
        let y = softmax(&Tensor::from_vec(vec![-1e4, 1e4, 0.0]));
        assert!(y.is_finite());
    }

    #[test]
    fn flatten_row_major() {
        let x = Tensor::new(vec![2, 2, 2], (0..8).map(|v| v as f32).collect()).unwrap();
        let y = flatten(&x);
        assert_eq!(y.shape(), [8]);
        assert_eq!(y.data(), [0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]);
        let v = Tensor::from_vec(vec![1.0, 2.0]);
        assert_eq!(flatten(&v), v);
    }
}
