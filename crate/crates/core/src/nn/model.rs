use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::arch::ArchConfig;
use super::kernel::{gemm_abt_acc, gemm_acc, gemm_atb};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Weights stored `c_out × (c_in·k·k)` with the column index
/// `(i·k + ky)·k + kx`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer<T> {
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> ConvLayer<T> {
    pub fn zeros(c_in: usize, c_out: usize, kernel: usize) -> Self {
        ConvLayer {
            c_in,
            c_out,
            kernel,
            weight: vec![T::zero(); c_out * c_in * kernel * kernel],
            bias: vec![T::zero(); c_out],
        }
    }

    #[inline]
    fn fan_in(&self) -> usize {
        self.c_in * self.kernel * self.kernel
    }

    pub fn cast<U: Scalar>(&self) -> ConvLayer<U> {
        let cv = |v: &Vec<T>| v.iter().map(|x| U::lit(x.as_f64())).collect();
        ConvLayer {
            c_in: self.c_in,
            c_out: self.c_out,
            kernel: self.kernel,
            weight: cv(&self.weight),
            bias: cv(&self.bias),
        }
    }
}

/// Training provenance stored with a model.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainMeta {
    pub seed: u64,
    pub epochs: usize,
    pub steps: usize,
    pub optimizer: String,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub loss: String,
    pub final_train_loss: Option<f64>,
    pub final_val_loss: Option<f64>,
    pub best_val_loss: Option<f64>,
    /// Names given to the output bands at inference time.
    pub target_bands: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SrcnnModel<T> {
    pub arch: ArchConfig,
    pub layers: Vec<ConvLayer<T>>,
    pub meta: TrainMeta,
}

/// Parameter gradients, one entry per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads<T> {
    pub weight: Vec<Vec<T>>,
    pub bias: Vec<Vec<T>>,
}

impl<T: Scalar> ParamGrads<T> {
    pub fn zeros_like(model: &SrcnnModel<T>) -> Self {
        ParamGrads {
            weight: model.layers.iter().map(|l| vec![T::zero(); l.weight.len()]).collect(),
            bias: model.layers.iter().map(|l| vec![T::zero(); l.bias.len()]).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &ParamGrads<T>) {
        for (a, b) in self.weight.iter_mut().zip(&other.weight) {
            a.iter_mut().zip(b).for_each(|(x, &y)| *x += y);
        }
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            a.iter_mut().zip(b).for_each(|(x, &y)| *x += y);
        }
    }

    /// All gradients flattened in layer order (weights, then bias).
    pub fn flatten(&self) -> Vec<T> {
        let mut out = Vec::new();
        for (w, b) in self.weight.iter().zip(&self.bias) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }
}

/// Per-layer state saved by [`SrcnnModel::forward_train`].
pub struct ForwardCache<T> {
    height: usize,
    width: usize,
    in_channels: usize,
    /// im2col of each layer's input.
    cols: Vec<Vec<T>>,
    /// Pre-activation output of each layer.
    pre: Vec<Vec<T>>,
}

impl<T: Scalar> SrcnnModel<T> {
    /// He-uniform weights (bound √(6 / fan_in)) and zero biases, drawn from a
    /// ChaCha stream seeded with `seed`.
    pub fn build(arch: ArchConfig, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = arch
            .layer_shapes()
            .into_iter()
            .map(|(ci, co, k)| {
                let mut l = ConvLayer::zeros(ci, co, k);
                let bound = (6.0 / l.fan_in() as f64).sqrt();
                for w in &mut l.weight {
                    *w = T::lit(rng.gen_range(-bound..bound));
                }
                l
            })
            .collect();
        Ok(SrcnnModel { arch, layers, meta: TrainMeta { seed, ..Default::default() } })
    }

    pub fn from_layers(arch: ArchConfig, layers: Vec<ConvLayer<T>>) -> Result<Self> {
        arch.validate()?;
        let shapes = arch.layer_shapes();
        if shapes.len() != layers.len()
            || shapes.iter().zip(&layers).any(|(&(ci, co, k), l)| {
                l.c_in != ci
                    || l.c_out != co
                    || l.kernel != k
                    || l.weight.len() != co * ci * k * k
                    || l.bias.len() != co
            })
        {
            return Err(Error::Config("layer tensors do not match the architecture".into()));
        }
        Ok(SrcnnModel { arch, layers, meta: TrainMeta::default() })
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Parameters flattened in layer order (weights, then bias).
    pub fn flat_params(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(&l.weight);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_flat_params(&mut self, flat: &[T]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::Shape(format!("{} values for {} parameters", flat.len(), self.param_count())));
        }
        let mut at = 0;
        for l in &mut self.layers {
            let nw = l.weight.len();
            l.weight.copy_from_slice(&flat[at..at + nw]);
            at += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&flat[at..at + nb]);
            at += nb;
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> SrcnnModel<U> {
        SrcnnModel {
            arch: self.arch.clone(),
            layers: self.layers.iter().map(|l| l.cast()).collect(),
            meta: self.meta.clone(),
        }
    }

    fn check_input(&self, input: &Tensor<T>) -> Result<()> {
        if input.channels != self.arch.in_channels {
            return Err(Error::Shape(format!(
                "input has {} channels, model expects {}",
                input.channels, self.arch.in_channels
            )));
        }
        let k = self.arch.max_kernel();
        if input.height < k || input.width < k {
            return Err(Error::Shape(format!(
                "input {}x{} is smaller than the largest kernel {k}",
                input.height, input.width
            )));
        }
        Ok(())
    }

    /// Same-size forward pass with replicate-edge padding.
    pub fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(input)?;
        let slope = T::lit(self.arch.slope);
        let last = self.layers.len() - 1;
        let mut x = input.clone();
        for (li, layer) in self.layers.iter().enumerate() {
            let mut y = conv_forward_strips(&x, layer);
            if li != last {
                leaky_inplace(&mut y.data, slope);
            }
            x = y;
        }
        Ok(x)
    }

    /// Forward pass that keeps what [`Self::backward`] needs. Memory grows
    /// with `c_in·k²·H·W` per layer, so this is meant for training patches.
    pub fn forward_train(&self, input: &Tensor<T>) -> Result<(Tensor<T>, ForwardCache<T>)> {
        self.check_input(input)?;
        let (h, w) = (input.height, input.width);
        let n = h * w;
        let slope = T::lit(self.arch.slope);
        let last = self.layers.len() - 1;
        let mut cols = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut x = input.data.clone();
        for (li, layer) in self.layers.iter().enumerate() {
            let col = im2col(&x, layer.c_in, h, w, layer.kernel, 0, h);
            let mut z = vec![T::zero(); layer.c_out * n];
            for (o, zo) in z.chunks_exact_mut(n).enumerate() {
                zo.iter_mut().for_each(|v| *v = layer.bias[o]);
            }
            gemm_acc(&layer.weight, &col, &mut z, layer.c_out, layer.fan_in(), n);
            let mut a = z.clone();
            if li != last {
                leaky_inplace(&mut a, slope);
            }
            cols.push(col);
            pre.push(z);
            x = a;
        }
        let out = Tensor::from_vec(self.arch.out_channels, h, w, x)?;
        Ok((out, ForwardCache { height: h, width: w, in_channels: input.channels, cols, pre }))
    }

    /// Exact gradients of the forward graph given `dL/d(output)`. The input
    /// gradient is computed only when `want_input` is set.
    pub fn backward(
        &self,
        cache: &ForwardCache<T>,
        grad_out: &Tensor<T>,
        want_input: bool,
    ) -> Result<(ParamGrads<T>, Option<Tensor<T>>)> {
        let (h, w) = (cache.height, cache.width);
        if grad_out.channels != self.arch.out_channels || grad_out.height != h || grad_out.width != w {
            return Err(Error::Shape(format!(
                "gradient is {}x{}x{}, forward output was {}x{h}x{w}",
                grad_out.channels, grad_out.height, grad_out.width, self.arch.out_channels
            )));
        }
        let n = h * w;
        let slope = T::lit(self.arch.slope);
        let last = self.layers.len() - 1;
        let mut grads = ParamGrads::zeros_like(self);
        let mut g = grad_out.data.clone();
        for li in (0..self.layers.len()).rev() {
            let layer = &self.layers[li];
            if li != last {
                for (gv, &z) in g.iter_mut().zip(&cache.pre[li]) {
                    if !(z > T::zero()) {
                        *gv *= slope;
                    }
                }
            }
            for (o, go) in g.chunks_exact(n).enumerate() {
                grads.bias[li][o] = go.iter().fold(T::zero(), |acc, &v| acc + v);
            }
            gemm_abt_acc(&g, &cache.cols[li], &mut grads.weight[li], layer.c_out, layer.fan_in(), n);
            if li == 0 && !want_input {
                break;
            }
            let mut dcol = vec![T::zero(); layer.fan_in() * n];
            gemm_atb(&layer.weight, &g, &mut dcol, layer.c_out, layer.fan_in(), n);
            g = col2im(&dcol, layer.c_in, h, w, layer.kernel);
        }
        let input_grad = if want_input { Some(Tensor::from_vec(cache.in_channels, h, w, g)?) } else { None };
        Ok((grads, input_grad))
    }

    /// Convenience: recompute the forward pass, then backpropagate.
    pub fn backward_from_input(&self, input: &Tensor<T>, grad_out: &Tensor<T>) -> Result<(ParamGrads<T>, Tensor<T>)> {
        let (_, cache) = self.forward_train(input)?;
        let (g, gi) = self.backward(&cache, grad_out, true)?;
        Ok((g, gi.expect("input gradient requested")))
    }
}

#[inline]
fn leaky_inplace<T: Scalar>(v: &mut [T], slope: T) {
    for x in v {
        if !(*x > T::zero()) {
            *x *= slope;
        }
    }
}

/// im2col for output rows `[y0, y1)` with replicate padding; result is
/// `(c·k·k) × ((y1−y0)·w)`.
fn im2col<T: Scalar>(x: &[T], c: usize, h: usize, w: usize, k: usize, y0: usize, y1: usize) -> Vec<T> {
    let p = k / 2;
    let rows = y1 - y0;
    let n = rows * w;
    let mut col = vec![T::zero(); c * k * k * n];
    let xs: Vec<Vec<usize>> =
        (0..k).map(|kx| (0..w).map(|xo| (xo + kx).saturating_sub(p).min(w - 1)).collect()).collect();
    for i in 0..c {
        let plane = &x[i * h * w..(i + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let r = (i * k + ky) * k + kx;
                let dst = &mut col[r * n..(r + 1) * n];
                let idx = &xs[kx];
                for yo in 0..rows {
                    let sy = (y0 + yo + ky).saturating_sub(p).min(h - 1);
                    let src = &plane[sy * w..(sy + 1) * w];
                    let d = &mut dst[yo * w..(yo + 1) * w];
                    for (dv, &sx) in d.iter_mut().zip(idx) {
                        *dv = src[sx];
                    }
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col`] over the full image: accumulates column gradients
/// onto the (clamped) source pixels.
fn col2im<T: Scalar>(dcol: &[T], c: usize, h: usize, w: usize, k: usize) -> Vec<T> {
    let p = k / 2;
    let n = h * w;
    let mut out = vec![T::zero(); c * n];
    let xs: Vec<Vec<usize>> =
        (0..k).map(|kx| (0..w).map(|xo| (xo + kx).saturating_sub(p).min(w - 1)).collect()).collect();
    for i in 0..c {
        let plane = &mut out[i * n..(i + 1) * n];
        for ky in 0..k {
            for kx in 0..k {
                let r = (i * k + ky) * k + kx;
                let src = &dcol[r * n..(r + 1) * n];
                let idx = &xs[kx];
                for yo in 0..h {
                    let sy = (yo + ky).saturating_sub(p).min(h - 1);
                    let row = &mut plane[sy * w..(sy + 1) * w];
                    for (&g, &sx) in src[yo * w..(yo + 1) * w].iter().zip(idx) {
                        row[sx] += g;
                    }
                }
            }
        }
    }
    out
}

/// Convolution over horizontal strips so the im2col buffer stays bounded.
fn conv_forward_strips<T: Scalar>(x: &Tensor<T>, layer: &ConvLayer<T>) -> Tensor<T> {
    const COL_BUDGET: usize = 1 << 22;
    let (h, w) = (x.height, x.width);
    let per_row = layer.fan_in() * w;
    let strip = (COL_BUDGET / per_row.max(1)).clamp(1, h);
    let mut out = Tensor::zeros(layer.c_out, h, w);
    let mut buf = Vec::new();
    let mut y0 = 0;
    while y0 < h {
        let y1 = (y0 + strip).min(h);
        let n = (y1 - y0) * w;
        let col = im2col(&x.data, layer.c_in, h, w, layer.kernel, y0, y1);
        buf.clear();
        for o in 0..layer.c_out {
            buf.extend(std::iter::repeat_n(layer.bias[o], n));
        }
        gemm_acc(&layer.weight, &col, &mut buf, layer.c_out, layer.fan_in(), n);
        for o in 0..layer.c_out {
            out.plane_mut(o)[y0 * w..y1 * w].copy_from_slice(&buf[o * n..(o + 1) * n]);
        }
        y0 = y1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_model_gives_zero_output() {
        let arch = ArchConfig::custom(2, &[(3, 4), (3, 2)], 0.1).unwrap();
        let mut m = SrcnnModel::<f64>::build(arch, 1).unwrap();
        let zeros = vec![0.0; m.param_count()];
        m.set_flat_params(&zeros).unwrap();
        let x = Tensor::from_vec(2, 5, 5, (0..50).map(|v| v as f64).collect()).unwrap();
        assert!(m.forward(&x).unwrap().data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_kernel() {
        let arch = ArchConfig::custom(3, &[(1, 3), (1, 3)], 1.0).unwrap();
        let mut m = SrcnnModel::<f64>::build(arch, 1).unwrap();
        for l in &mut m.layers {
            l.weight = vec![0.0; 9];
            for c in 0..3 {
                l.weight[c * 3 + c] = 1.0;
            }
        }
        let x = Tensor::from_vec(3, 4, 4, (0..48).map(|v| v as f64 * 0.1 - 2.0).collect()).unwrap();
        let y = m.forward(&x).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn same_seed_same_params() {
        let arch = ArchConfig::preset("spectral").unwrap();
        let a = SrcnnModel::<f64>::build(arch.clone(), 9).unwrap();
        let b = SrcnnModel::<f64>::build(arch, 9).unwrap();
        assert_eq!(a.flat_params(), b.flat_params());
        assert_eq!(a.param_count(), a.arch.param_count());
    }

    #[test]
    fn channel_mismatch_is_shape_error() {
        let m = SrcnnModel::<f64>::build(ArchConfig::preset("spectral").unwrap(), 0).unwrap();
        let x = Tensor::zeros(8, 16, 16);
        assert!(matches!(m.forward(&x), Err(Error::Shape(_))));
    }

    #[test]
    fn zero_grad_out_gives_zero_grads() {
        let arch = ArchConfig::custom(2, &[(3, 4), (3, 2)], 0.1).unwrap();
        let m = SrcnnModel::<f64>::build(arch, 3).unwrap();
        let x = Tensor::from_vec(2, 6, 6, (0..72).map(|v| (v as f64).sin()).collect()).unwrap();
        let (g, gi) = m.backward_from_input(&x, &Tensor::zeros(2, 6, 6)).unwrap();
        assert!(g.flatten().iter().all(|&v| v == 0.0));
        assert!(gi.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn strip_forward_matches_cached_forward() {
        let arch = ArchConfig::custom(2, &[(5, 6), (3, 2)], 0.1).unwrap();
        let m = SrcnnModel::<f64>::build(arch, 5).unwrap();
        let x = Tensor::from_vec(2, 9, 7, (0..126).map(|v| (v as f64 * 0.37).cos()).collect()).unwrap();
        let a = m.forward(&x).unwrap();
        let (b, _) = m.forward_train(&x).unwrap();
        assert_eq!(a, b);
    }
}
