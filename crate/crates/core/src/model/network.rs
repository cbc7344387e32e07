//! The reference patch classifier: a fixed input standardization, blocks of
//! [3x3 same-padded conv, ReLU, 2x2 max-pool], global average pooling, a ReLU dense layer, and a single
//! logit. Forward and backward passes are written out by hand over
//! im2col + GEMM.

use serde::{Deserialize, Serialize};

use super::scalar::Scalar;
use crate::rng::{Stream, UniformSource};

pub const INPUT_CHANNELS: usize = 3;
/// Fixed standardization applied to `[0, 1]` inputs before the first conv:
/// `(x - INPUT_MEAN) / INPUT_STD`.
pub const INPUT_MEAN: f64 = 0.5;
pub const INPUT_STD: f64 = 0.25;
const KERNEL: usize = 3;
const TAPS: usize = KERNEL * KERNEL;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    /// Side of the square RGB input.
    pub input_size: usize,
    /// Output channels of each conv block.
    pub conv_channels: Vec<usize>,
    /// Width of the hidden dense layer.
    pub hidden: usize,
}

/// Name and shape of one parameter tensor.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl Architecture {
    /// Conv widths 8/16/32/64 and a 32-unit hidden layer.
    pub fn reference(input_size: usize) -> Self {
        Self {
            input_size,
            conv_channels: vec![8, 16, 32, 64],
            hidden: 32,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.conv_channels.is_empty() {
            return Err("at least one conv block is required".into());
        }
        if self.conv_channels.contains(&0) || self.hidden == 0 {
            return Err("layer widths must be positive".into());
        }
        if self.input_size >> self.conv_channels.len() == 0 {
            return Err(format!(
                "input size {} is too small for {} pooling stages",
                self.input_size,
                self.conv_channels.len()
            ));
        }
        Ok(())
    }

    /// Spatial side entering conv block `i`.
    pub fn side_at(&self, block: usize) -> usize {
        self.input_size >> block
    }

    pub fn last_channels(&self) -> usize {
        *self.conv_channels.last().expect("validated architecture")
    }

    /// Parameter tensors in storage order.
    pub fn tensor_specs(&self) -> Vec<TensorSpec> {
        let mut specs = Vec::new();
        let mut in_c = INPUT_CHANNELS;
        for (i, &out_c) in self.conv_channels.iter().enumerate() {
            specs.push(TensorSpec {
                name: format!("conv{i}.weight"),
                shape: vec![out_c, in_c, KERNEL, KERNEL],
            });
            specs.push(TensorSpec {
                name: format!("conv{i}.bias"),
                shape: vec![out_c],
            });
            in_c = out_c;
        }
        specs.push(TensorSpec {
            name: "dense0.weight".into(),
            shape: vec![self.hidden, in_c],
        });
        specs.push(TensorSpec {
            name: "dense0.bias".into(),
            shape: vec![self.hidden],
        });
        specs.push(TensorSpec {
            name: "dense1.weight".into(),
            shape: vec![1, self.hidden],
        });
        specs.push(TensorSpec {
            name: "dense1.bias".into(),
            shape: vec![1],
        });
        specs
    }

    pub fn parameter_count(&self) -> usize {
        self.tensor_specs().iter().map(TensorSpec::len).sum()
    }

    /// Zero-filled tensors matching [`Self::tensor_specs`].
    pub fn zeros<T: Scalar>(&self) -> Vec<Vec<T>> {
        self.tensor_specs()
            .iter()
            .map(|s| vec![T::ZERO; s.len()])
            .collect()
    }

    /// He-uniform kernels (`U(-sqrt(6/fan_in), sqrt(6/fan_in))`), zero biases,
    /// and a zero output layer so an untrained network predicts exactly 0.5.
    pub fn init_weights(&self, stream: &mut Stream) -> Vec<Vec<f32>> {
        let specs = self.tensor_specs();
        let output_weight = specs.len() - 2;
        specs
            .iter()
            .enumerate()
            .map(|(i, spec)| {
                if spec.shape.len() == 1 || i == output_weight {
                    vec![0.0; spec.len()]
                } else {
                    let fan_in: usize = spec.shape[1..].iter().product();
                    let limit = (6.0 / fan_in as f64).sqrt();
                    (0..spec.len())
                        .map(|_| stream.next_range(-limit, limit) as f32)
                        .collect()
                }
            })
            .collect()
    }
}

/// Per-block activations kept for the backward pass.
#[derive(Clone, Debug, Default)]
struct BlockCache<T> {
    col: Vec<T>,
    act: Vec<T>,
    pooled: Vec<T>,
    argmax: Vec<u32>,
}

/// Reusable buffers for one forward/backward pass.
#[derive(Clone, Debug)]
pub struct Workspace<T> {
    input: Vec<T>,
    blocks: Vec<BlockCache<T>>,
    features: Vec<T>,
    hidden: Vec<T>,
    d_act: Vec<T>,
    d_col: Vec<T>,
    d_in: Vec<T>,
    d_pool: Vec<T>,
}

impl<T: Scalar> Workspace<T> {
    pub fn new(arch: &Architecture) -> Self {
        let mut blocks = Vec::with_capacity(arch.conv_channels.len());
        let mut in_c = INPUT_CHANNELS;
        for (i, &out_c) in arch.conv_channels.iter().enumerate() {
            let s = arch.side_at(i);
            let hw = s * s;
            let pooled = (s / 2) * (s / 2);
            blocks.push(BlockCache {
                col: vec![T::ZERO; in_c * TAPS * hw],
                act: vec![T::ZERO; out_c * hw],
                pooled: vec![T::ZERO; out_c * pooled],
                argmax: vec![0; out_c * pooled],
            });
            in_c = out_c;
        }
        Self {
            input: vec![T::ZERO; INPUT_CHANNELS * arch.input_size * arch.input_size],
            blocks,
            features: vec![T::ZERO; arch.last_channels()],
            hidden: vec![T::ZERO; arch.hidden],
            d_act: Vec::new(),
            d_col: Vec::new(),
            d_in: Vec::new(),
            d_pool: Vec::new(),
        }
    }
}

/// Unfolds a `(c, s, s)` input into a `(c*9, s*s)` matrix for a 3x3 kernel
/// with one pixel of zero padding.
fn im2col<T: Scalar>(input: &[T], c: usize, s: usize, col: &mut [T]) {
    let hw = s * s;
    for ch in 0..c {
        let plane = &input[ch * hw..(ch + 1) * hw];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = &mut col[(ch * TAPS + ky * KERNEL + kx) * hw..][..hw];
                for y in 0..s {
                    let dst = &mut row[y * s..(y + 1) * s];
                    let iy = y as isize + ky as isize - 1;
                    if iy < 0 || iy >= s as isize {
                        dst.fill(T::ZERO);
                        continue;
                    }
                    let src = &plane[iy as usize * s..(iy as usize + 1) * s];
                    match kx {
                        0 => {
                            dst[0] = T::ZERO;
                            dst[1..].copy_from_slice(&src[..s - 1]);
                        }
                        1 => dst.copy_from_slice(src),
                        _ => {
                            dst[..s - 1].copy_from_slice(&src[1..]);
                            dst[s - 1] = T::ZERO;
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates a `(c*9, s*s)` matrix into a
/// `(c, s, s)` gradient.
fn col2im<T: Scalar>(col: &[T], c: usize, s: usize, out: &mut [T]) {
    let hw = s * s;
    out[..c * hw].fill(T::ZERO);
    for ch in 0..c {
        let plane = &mut out[ch * hw..(ch + 1) * hw];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = &col[(ch * TAPS + ky * KERNEL + kx) * hw..][..hw];
                for y in 0..s {
                    let iy = y as isize + ky as isize - 1;
                    if iy < 0 || iy >= s as isize {
                        continue;
                    }
                    let src = &row[y * s..(y + 1) * s];
                    let dst = &mut plane[iy as usize * s..(iy as usize + 1) * s];
                    match kx {
                        0 => {
                            for x in 1..s {
                                dst[x - 1] += src[x];
                            }
                        }
                        1 => {
                            for x in 0..s {
                                dst[x] += src[x];
                            }
                        }
                        _ => {
                            for x in 0..s - 1 {
                                dst[x + 1] += src[x];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// 2x2 max-pool (floor on odd sides), recording the flat argmax of each window.
fn max_pool<T: Scalar>(act: &[T], c: usize, s: usize, pooled: &mut [T], argmax: &mut [u32]) {
    let ps = s / 2;
    for ch in 0..c {
        let base = ch * s * s;
        for py in 0..ps {
            for px in 0..ps {
                let mut best = base + 2 * py * s + 2 * px;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * py + dy) * s + 2 * px + dx;
                    if act[idx] > act[best] {
                        best = idx;
                    }
                }
                let out = ch * ps * ps + py * ps + px;
                pooled[out] = act[best];
                argmax[out] = best as u32;
            }
        }
    }
}

/// Forward pass for one `(3, s, s)` input. Returns the output logit and
/// leaves every intermediate in `ws`.
pub fn forward<T: Scalar>(
    arch: &Architecture,
    params: &[Vec<T>],
    input: &[T],
    ws: &mut Workspace<T>,
) -> T {
    debug_assert_eq!(
        input.len(),
        INPUT_CHANNELS * arch.input_size * arch.input_size
    );
    let mean = T::from_f64(INPUT_MEAN);
    let inv_std = T::from_f64(1.0 / INPUT_STD);
    for (dst, &x) in ws.input.iter_mut().zip(input) {
        *dst = (x - mean) * inv_std;
    }
    let mut in_c = INPUT_CHANNELS;
    for (i, &out_c) in arch.conv_channels.iter().enumerate() {
        let s = arch.side_at(i);
        let hw = s * s;
        let (prev, rest) = ws.blocks.split_at_mut(i);
        let block = &mut rest[0];
        let x = if i == 0 {
            &ws.input[..]
        } else {
            &prev[i - 1].pooled[..]
        };
        im2col(x, in_c, s, &mut block.col);
        let weight = &params[2 * i];
        let bias = &params[2 * i + 1];
        let k = in_c * TAPS;
        T::gemm(
            out_c,
            k,
            hw,
            T::ONE,
            weight,
            (k as isize, 1),
            &block.col,
            (hw as isize, 1),
            T::ZERO,
            &mut block.act,
            (hw as isize, 1),
        );
        for (o, plane) in block.act.chunks_exact_mut(hw).enumerate() {
            let b = bias[o];
            for v in plane {
                let z = *v + b;
                *v = if z > T::ZERO { z } else { T::ZERO };
            }
        }
        max_pool(&block.act, out_c, s, &mut block.pooled, &mut block.argmax);
        in_c = out_c;
    }

    // Global average pool.
    let last = ws.blocks.last().expect("at least one block");
    let ps = arch.side_at(arch.conv_channels.len());
    let area = T::from_f64((ps * ps) as f64);
    for (f, plane) in ws
        .features
        .iter_mut()
        .zip(last.pooled.chunks_exact(ps * ps))
    {
        let mut sum = T::ZERO;
        for &v in plane {
            sum += v;
        }
        *f = sum / area;
    }

    let n_blocks = arch.conv_channels.len();
    let (w0, b0) = (&params[2 * n_blocks], &params[2 * n_blocks + 1]);
    let (w1, b1) = (&params[2 * n_blocks + 2], &params[2 * n_blocks + 3]);
    let c_last = arch.last_channels();
    let mut logit = b1[0];
    for j in 0..arch.hidden {
        let row = &w0[j * c_last..(j + 1) * c_last];
        let mut z = b0[j];
        for (w, f) in row.iter().zip(&ws.features) {
            z += *w * *f;
        }
        let h = if z > T::ZERO { z } else { T::ZERO };
        ws.hidden[j] = h;
        logit += w1[j] * h;
    }
    logit
}

/// Backward pass for the input last seen by [`forward`] on `ws`.
/// Accumulates `d_logit * d(logit)/d(param)` into `grads`.
pub fn backward<T: Scalar>(
    arch: &Architecture,
    params: &[Vec<T>],
    ws: &mut Workspace<T>,
    d_logit: T,
    grads: &mut [Vec<T>],
) {
    let n_blocks = arch.conv_channels.len();
    let c_last = arch.last_channels();
    let (i_w0, i_b0, i_w1, i_b1) = (
        2 * n_blocks,
        2 * n_blocks + 1,
        2 * n_blocks + 2,
        2 * n_blocks + 3,
    );

    grads[i_b1][0] += d_logit;
    let mut d_features = vec![T::ZERO; c_last];
    for j in 0..arch.hidden {
        let h = ws.hidden[j];
        grads[i_w1][j] += d_logit * h;
        if h > T::ZERO {
            let dh = d_logit * params[i_w1][j];
            grads[i_b0][j] += dh;
            let row = j * c_last;
            for c in 0..c_last {
                grads[i_w0][row + c] += dh * ws.features[c];
                d_features[c] += dh * params[i_w0][row + c];
            }
        }
    }

    // Spread the pooled-feature gradient evenly over the last pooled maps.
    let ps = arch.side_at(n_blocks);
    let area = T::from_f64((ps * ps) as f64);
    ws.d_pool.clear();
    for &df in &d_features {
        let g = df / area;
        ws.d_pool.extend(std::iter::repeat_n(g, ps * ps));
    }

    for i in (0..n_blocks).rev() {
        let s = arch.side_at(i);
        let hw = s * s;
        let out_c = arch.conv_channels[i];
        let in_c = if i == 0 {
            INPUT_CHANNELS
        } else {
            arch.conv_channels[i - 1]
        };
        let k = in_c * TAPS;
        let block = &ws.blocks[i];

        ws.d_act.clear();
        ws.d_act.resize(out_c * hw, T::ZERO);
        for (&idx, &g) in block.argmax.iter().zip(&ws.d_pool) {
            let idx = idx as usize;
            if block.act[idx] > T::ZERO {
                ws.d_act[idx] += g;
            }
        }

        let (gw, gb) = {
            let (lo, hi) = grads.split_at_mut(2 * i + 1);
            (&mut lo[2 * i], &mut hi[0])
        };
        for (o, plane) in ws.d_act.chunks_exact(hw).enumerate() {
            let mut sum = T::ZERO;
            for &v in plane {
                sum += v;
            }
            gb[o] += sum;
        }
        // dW (out_c x k) += dAct (out_c x hw) * col^T (hw x k)
        T::gemm(
            out_c,
            hw,
            k,
            T::ONE,
            &ws.d_act,
            (hw as isize, 1),
            &block.col,
            (1, hw as isize),
            T::ONE,
            gw,
            (k as isize, 1),
        );

        if i > 0 {
            // dCol (k x hw) = W^T (k x out_c) * dAct (out_c x hw)
            ws.d_col.resize(k * hw, T::ZERO);
            T::gemm(
                k,
                out_c,
                hw,
                T::ONE,
                &params[2 * i],
                (1, k as isize),
                &ws.d_act,
                (hw as isize, 1),
                T::ZERO,
                &mut ws.d_col,
                (hw as isize, 1),
            );
            ws.d_in.resize(in_c * hw, T::ZERO);
            col2im(&ws.d_col, in_c, s, &mut ws.d_in);
            // The block input was the previous block's pooled output.
            ws.d_pool.clear();
            ws.d_pool.extend_from_slice(&ws.d_in[..in_c * hw]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn micro() -> Architecture {
        Architecture {
            input_size: 8,
            conv_channels: vec![3, 4],
            hidden: 5,
        }
    }

    #[test]
    fn reference_shapes() {
        let arch = Architecture::reference(64);
        arch.validate().unwrap();
        let specs = arch.tensor_specs();
        assert_eq!(specs.len(), 12);
        assert_eq!(specs[0].shape, vec![8, 3, 3, 3]);
        assert_eq!(specs[6].shape, vec![64, 32, 3, 3]);
        assert_eq!(specs[8].shape, vec![32, 64]);
        assert_eq!(specs[10].shape, vec![1, 32]);
        assert_eq!(arch.side_at(4), 4);
    }

    #[test]
    fn too_small_input_is_rejected() {
        assert!(Architecture::reference(15).validate().is_err());
        assert!(Architecture::reference(16).validate().is_ok());
    }

    #[test]
    fn im2col_and_col2im_are_adjoint() {
        // <im2col(x), y> == <x, col2im(y)> for arbitrary x, y.
        let (c, s) = (2, 5);
        let mut stream = Stream::new(5, 0);
        let x: Vec<f64> = (0..c * s * s).map(|_| stream.next_unit() - 0.5).collect();
        let y: Vec<f64> = (0..c * TAPS * s * s)
            .map(|_| stream.next_unit() - 0.5)
            .collect();
        let mut col = vec![0.0; y.len()];
        im2col(&x, c, s, &mut col);
        let mut back = vec![0.0; x.len()];
        col2im(&y, c, s, &mut back);
        let lhs: f64 = col.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn conv_matches_direct_convolution() {
        let arch = micro();
        let mut stream = Stream::new(9, 0);
        let params: Vec<Vec<f64>> = arch
            .tensor_specs()
            .iter()
            .map(|s| (0..s.len()).map(|_| stream.next_unit() - 0.5).collect())
            .collect();
        let s = arch.input_size;
        let input: Vec<f64> = (0..3 * s * s).map(|_| stream.next_unit()).collect();
        let mut ws = Workspace::new(&arch);
        forward(&arch, &params, &input, &mut ws);
        for o in 0..3 {
            for y in 0..s {
                for x in 0..s {
                    let mut z = params[1][o];
                    for c in 0..3 {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let iy = y as isize + ky as isize - 1;
                                let ix = x as isize + kx as isize - 1;
                                if iy < 0 || ix < 0 || iy >= s as isize || ix >= s as isize {
                                    continue;
                                }
                                z += params[0][((o * 3 + c) * 3 + ky) * 3 + kx]
                                    * (input[c * s * s + iy as usize * s + ix as usize]
                                        - INPUT_MEAN)
                                    / INPUT_STD;
                            }
                        }
                    }
                    let expected = z.max(0.0);
                    let got = ws.blocks[0].act[o * s * s + y * s + x];
                    assert!((expected - got).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn zero_output_layer_gives_zero_logit() {
        let arch = Architecture::reference(16);
        let weights = arch.init_weights(&mut Stream::new(1, 0));
        let input = vec![0.3f32; 3 * 16 * 16];
        let mut ws = Workspace::new(&arch);
        assert_eq!(forward(&arch, &weights, &input, &mut ws), 0.0);
    }
}
