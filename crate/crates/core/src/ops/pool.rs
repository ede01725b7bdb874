use crate::par::*;
use crate::tensor::{Tensor, TensorError};

use super::window_extent;

/// Window geometry shared by the pooling kernels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolGeometry {
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
}

impl PoolGeometry {
    pub fn square(kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            kernel: (kernel, kernel),
            stride: (stride, stride),
            padding: (padding, padding),
        }
    }

    /// Output `(H', W')` for an `h x w` input.
    pub fn output_extent(&self, op: &'static str, h: usize, w: usize) -> Result<(usize, usize), TensorError> {
        let (kh, kw) = self.kernel;
        let (ph, pw) = self.padding;
        // Every window must contain at least one real element.
        if ph >= kh || pw >= kw {
            return Err(TensorError::Geometry {
                op,
                detail: format!("padding {ph}x{pw} must be smaller than kernel {kh}x{kw}"),
            });
        }
        let err = || TensorError::Geometry {
            op,
            detail: format!(
                "kernel {kh}x{kw} stride {:?} padding {ph}x{pw} does not fit input {h}x{w}",
                self.stride
            ),
        };
        let hout = window_extent(h, kh, self.stride.0, ph).ok_or_else(err)?;
        let wout = window_extent(w, kw, self.stride.1, pw).ok_or_else(err)?;
        Ok((hout, wout))
    }
}

/// Clipped window rows/cols `[start, end)` for output index `o`.
#[inline]
fn window(o: usize, stride: usize, pad: usize, kernel: usize, len: usize) -> (usize, usize) {
    let start = (o * stride) as isize - pad as isize;
    let end = (start + kernel as isize).min(len as isize);
    (start.max(0) as usize, end as usize)
}

fn pool2d(
    op: &'static str,
    input: &Tensor,
    geom: PoolGeometry,
    reduce: impl Fn(&[f32], usize, (usize, usize), (usize, usize)) -> f32 + Sync,
) -> Result<Tensor, TensorError> {
    let (c, h, w) = input.chw(op)?;
    let (hout, wout) = geom.output_extent(op, h, w)?;
    let mut out = vec![0.0f32; c * hout * wout];
    let src = input.data();
    out.par_chunks_mut(hout * wout)
        .enumerate()
        .for_each(|(ch, dst)| {
            let plane = &src[ch * h * w..(ch + 1) * h * w];
            for oy in 0..hout {
                let rows = window(oy, geom.stride.0, geom.padding.0, geom.kernel.0, h);
                for ox in 0..wout {
                    let cols = window(ox, geom.stride.1, geom.padding.1, geom.kernel.1, w);
                    dst[oy * wout + ox] = reduce(plane, w, rows, cols);
                }
            }
        });
    Tensor::new(vec![c, hout, wout], out)
}

/// Max pooling; padded positions act as negative infinity and never win.
pub fn maxpool2d(input: &Tensor, geom: PoolGeometry) -> Result<Tensor, TensorError> {
    pool2d("maxpool2d", input, geom, |plane, w, (r0, r1), (c0, c1)| {
        let mut m = f32::NEG_INFINITY;
        for y in r0..r1 {
            for &v in &plane[y * w + c0..y * w + c1] {
                if v > m {
                    m = v;
                }
            }
        }
        m
    })
}

/// Average pooling; padded positions are excluded from the divisor.
pub fn avgpool2d(input: &Tensor, geom: PoolGeometry) -> Result<Tensor, TensorError> {
    pool2d("avgpool2d", input, geom, |plane, w, (r0, r1), (c0, c1)| {
        let mut sum = 0.0f32;
        for y in r0..r1 {
            for &v in &plane[y * w + c0..y * w + c1] {
                sum += v;
            }
        }
        sum / ((r1 - r0) * (c1 - c0)) as f32
    })
}
