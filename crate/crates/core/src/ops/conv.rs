use crate::par::*;
use crate::tensor::{Tensor, TensorError};

use super::window_extent;

const OC_BLOCK: usize = 4;
const TILE: usize = 128;

/// Borrowed convolution parameters. `weights` is `(out, in, kH, kW)`.
#[derive(Debug, Clone, Copy)]
pub struct ConvParams<'a> {
    pub weights: &'a Tensor,
    pub bias: Option<&'a Tensor>,
    pub stride: (usize, usize),
    pub padding: (usize, usize),
}

impl ConvParams<'_> {
    fn kernel_dims(&self) -> Result<[usize; 4], TensorError> {
        match *self.weights.shape() {
            [o, i, kh, kw] => Ok([o, i, kh, kw]),
            _ => Err(TensorError::Rank {
                op: "conv2d",
                expected: 4,
                shape: self.weights.shape().to_vec(),
            }),
        }
    }
}

/// 2-D cross-correlation (no kernel flip) with zero padding.
///
/// Each output element is the sum over the receptive field in
/// `(in_channel, kh, kw)` row-major order, then the bias is added.
pub fn conv2d(input: &Tensor, params: &ConvParams<'_>) -> Result<Tensor, TensorError> {
    let (cin, h, w) = input.chw("conv2d")?;
    let [cout, kcin, kh, kw] = params.kernel_dims()?;
    if cin != kcin {
        return Err(TensorError::ChannelMismatch {
            op: "conv2d",
            input: cin,
            params: kcin,
        });
    }
    if let Some(b) = params.bias {
        if b.shape() != [cout] {
            return Err(TensorError::ParamShape {
                op: "conv2d",
                name: "bias",
                expected: vec![cout],
                found: b.shape().to_vec(),
            });
        }
    }
    let (sh, sw) = params.stride;
    let (ph, pw) = params.padding;
    let geometry_err = || TensorError::Geometry {
        op: "conv2d",
        detail: format!(
            "kernel {kh}x{kw} stride {sh}x{sw} padding {ph}x{pw} does not fit input {h}x{w}"
        ),
    };
    let hout = window_extent(h, kh, sh, ph).ok_or_else(geometry_err)?;
    let wout = window_extent(w, kw, sw, pw).ok_or_else(geometry_err)?;

    let k_len = cin * kh * kw;
    let p_len = hout * wout;
    let pointwise = kh == 1 && kw == 1 && sh == 1 && sw == 1 && ph == 0 && pw == 0;
    let cols_owned;
    let cols: &[f32] = if pointwise {
        input.data()
    } else {
        cols_owned = im2col(input.data(), (cin, h, w), (kh, kw), (sh, sw), (ph, pw), (hout, wout));
        &cols_owned
    };

    let weights = params.weights.data();
    let bias = params.bias.map(Tensor::data);
    let mut out = vec![0.0f32; cout * p_len];
    out.par_chunks_mut(OC_BLOCK * p_len)
        .enumerate()
        .for_each(|(blk, out_blk)| {
            let oc0 = blk * OC_BLOCK;
            let n_oc = out_blk.len() / p_len;
            let mut acc = [[0.0f32; TILE]; OC_BLOCK];
            for p0 in (0..p_len).step_by(TILE) {
                let p1 = (p0 + TILE).min(p_len);
                let width = p1 - p0;
                for row in acc.iter_mut().take(n_oc) {
                    row[..width].fill(0.0);
                }
                for k in 0..k_len {
                    let col = &cols[k * p_len + p0..k * p_len + p1];
                    for (j, row) in acc.iter_mut().enumerate().take(n_oc) {
                        let wv = weights[(oc0 + j) * k_len + k];
                        for (a, &c) in row[..width].iter_mut().zip(col) {
                            *a += wv * c;
                        }
                    }
                }
                for (j, row) in acc.iter().enumerate().take(n_oc) {
                    let b = bias.map_or(0.0, |b| b[oc0 + j]);
                    let dst = &mut out_blk[j * p_len + p0..j * p_len + p1];
                    for (d, &a) in dst.iter_mut().zip(&row[..width]) {
                        *d = a + b;
                    }
                }
            }
        });
    Tensor::new(vec![cout, hout, wout], out)
}

/// Unfolds receptive fields into a `(C*kH*kW, H'*W')` matrix; padded taps are zero.
fn im2col(
    input: &[f32],
    (c, h, w): (usize, usize, usize),
    (kh, kw): (usize, usize),
    (sh, sw): (usize, usize),
    (ph, pw): (usize, usize),
    (hout, wout): (usize, usize),
) -> Vec<f32> {
    let p_len = hout * wout;
    let mut cols = vec![0.0f32; c * kh * kw * p_len];
    cols.par_chunks_mut(p_len).enumerate().for_each(|(row, dst)| {
        let ci = row / (kh * kw);
        let ky = (row / kw) % kh;
        let kx = row % kw;
        let plane = &input[ci * h * w..(ci + 1) * h * w];
        for oy in 0..hout {
            let iy = (oy * sh + ky) as isize - ph as isize;
            if iy < 0 || iy >= h as isize {
                continue;
            }
            let src_row = &plane[iy as usize * w..(iy as usize + 1) * w];
            let dst_row = &mut dst[oy * wout..(oy + 1) * wout];
            for (ox, d) in dst_row.iter_mut().enumerate() {
                let ix = (ox * sw + kx) as isize - pw as isize;
                if ix >= 0 && ix < w as isize {
                    *d = src_row[ix as usize];
                }
            }
        }
    });
    cols
}
