//! Layers with hand-written reverse passes. Activations are `f64`; image
//! batches are `(batch, channel, height, width)`, feature batches
//! `(batch, features)`. Every `backward` accumulates parameter gradients into
//! a flat buffer aligned with the owning [`ParamStore`].

use ndarray::{s, Array1, Array2, Array4, ArrayView2, Axis};
use rand::Rng as _;

use super::params::{ParamStore, TensorId};
use crate::rng::Rng;

fn uniform(rng: &mut Rng, n: usize, bound: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
}

fn grad_slice<'g>(store: &ParamStore, grads: &'g mut [f64], id: TensorId) -> &'g mut [f64] {
    &mut grads[store.spec(id).range()]
}

/// Square-kernel 2-D convolution computed through an im2col matrix product.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Conv2d {
    weight: TensorId,
    bias: TensorId,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

pub struct ConvCache {
    cols: Array2<f64>,
    input_dim: (usize, usize, usize, usize),
}

impl Conv2d {
    /// He-uniform weights, zero bias.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut Rng,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        let bound = (6.0 / fan_in as f64).sqrt();
        let weight = store.add(
            &format!("{name}.weight"),
            &[out_channels, in_channels, kernel, kernel],
            uniform(rng, out_channels * fan_in, bound),
        );
        let bias = store.add(&format!("{name}.bias"), &[out_channels], vec![0.0; out_channels]);
        Conv2d { weight, bias, in_channels, out_channels, kernel, stride, padding }
    }

    pub fn output_size(&self, input: usize) -> usize {
        (input + 2 * self.padding - self.kernel) / self.stride + 1
    }

    fn im2col(&self, x: &Array4<f64>) -> Array2<f64> {
        let (b, c, h, w) = x.dim();
        let (ho, wo) = (self.output_size(h), self.output_size(w));
        let k = self.kernel;
        let per = ho * wo;
        let mut cols = Array2::<f64>::zeros((c * k * k, b * per));
        let xs = x.as_standard_layout();
        let xs = xs.as_slice().expect("standard layout");
        let ncols = b * per;
        let out = cols.as_slice_mut().expect("fresh array is contiguous");
        for ci in 0..c {
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let row_out = &mut out[row * ncols..(row + 1) * ncols];
                    for bi in 0..b {
                        let plane = &xs[(bi * c + ci) * h * w..(bi * c + ci + 1) * h * w];
                        for oy in 0..ho {
                            let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                            let dst = &mut row_out[bi * per + oy * wo..bi * per + (oy + 1) * wo];
                            for (ox, d) in dst.iter_mut().enumerate() {
                                let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                                if ix >= 0 && ix < w as isize {
                                    *d = src[ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &Array2<f64>, dim: (usize, usize, usize, usize)) -> Array4<f64> {
        let (b, c, h, w) = dim;
        let (ho, wo) = (self.output_size(h), self.output_size(w));
        let k = self.kernel;
        let per = ho * wo;
        let ncols = b * per;
        let mut dx = Array4::<f64>::zeros(dim);
        let dxs = dx.as_slice_mut().expect("fresh array is contiguous");
        let cs = cols.as_slice().expect("cols are contiguous");
        for ci in 0..c {
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let row_in = &cs[row * ncols..(row + 1) * ncols];
                    for bi in 0..b {
                        let base = (bi * c + ci) * h * w;
                        for oy in 0..ho {
                            let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for ox in 0..wo {
                                let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                                if ix >= 0 && ix < w as isize {
                                    dxs[base + iy as usize * w + ix as usize] +=
                                        row_in[bi * per + oy * wo + ox];
                                }
                            }
                        }
                    }
                }
            }
        }
        dx
    }

    fn weight_matrix<'a>(&self, store: &'a ParamStore) -> ArrayView2<'a, f64> {
        store.view2(self.weight)
    }

    pub fn forward(&self, store: &ParamStore, x: &Array4<f64>) -> (Array4<f64>, ConvCache) {
        let (b, _, h, w) = x.dim();
        let (ho, wo) = (self.output_size(h), self.output_size(w));
        let cols = self.im2col(x);
        let mut out = self.weight_matrix(store).dot(&cols);
        let bias = store.view1(self.bias);
        for (mut row, &bv) in out.axis_iter_mut(Axis(0)).zip(bias.iter()) {
            row += bv;
        }
        let y = out
            .into_shape((self.out_channels, b, ho, wo))
            .expect("conv output reshape")
            .permuted_axes([1, 0, 2, 3])
            .as_standard_layout()
            .to_owned();
        (y, ConvCache { cols, input_dim: x.dim() })
    }

    pub fn backward(
        &self,
        store: &ParamStore,
        cache: &ConvCache,
        dy: &Array4<f64>,
        grads: &mut [f64],
        need_input_grad: bool,
    ) -> Option<Array4<f64>> {
        let (b, co, ho, wo) = dy.dim();
        let dy2 = dy
            .view()
            .permuted_axes([1, 0, 2, 3])
            .as_standard_layout()
            .into_owned()
            .into_shape((co, b * ho * wo))
            .expect("conv grad reshape");
        let dw = dy2.dot(&cache.cols.t());
        grad_slice(store, grads, self.weight)
            .iter_mut()
            .zip(dw.iter())
            .for_each(|(g, d)| *g += d);
        grad_slice(store, grads, self.bias)
            .iter_mut()
            .zip(dy2.sum_axis(Axis(1)).iter())
            .for_each(|(g, d)| *g += d);
        if need_input_grad {
            let dcols = self.weight_matrix(store).t().dot(&dy2);
            Some(self.col2im(&dcols, cache.input_dim))
        } else {
            None
        }
    }
}

/// Group normalization with per-channel affine parameters. Statistics are
/// per sample, so batched and single-sample evaluation agree.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupNorm {
    gamma: TensorId,
    beta: TensorId,
    pub channels: usize,
    pub groups: usize,
    pub eps: f64,
}

pub struct NormCache {
    xhat: Array4<f64>,
    inv_std: Array2<f64>,
}

impl GroupNorm {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, groups: usize) -> Self {
        assert!(groups > 0 && channels.is_multiple_of(groups), "{channels} channels not divisible into {groups} groups");
        let gamma = store.add(&format!("{name}.gamma"), &[channels], vec![1.0; channels]);
        let beta = store.add(&format!("{name}.beta"), &[channels], vec![0.0; channels]);
        GroupNorm { gamma, beta, channels, groups, eps: 1e-5 }
    }

    pub fn forward(&self, store: &ParamStore, x: &Array4<f64>) -> (Array4<f64>, NormCache) {
        let (b, c, h, w) = x.dim();
        let cg = c / self.groups;
        let m = (cg * h * w) as f64;
        let gamma = store.slice(self.gamma);
        let beta = store.slice(self.beta);
        let mut xhat = x.as_standard_layout().into_owned();
        let mut y = Array4::<f64>::zeros((b, c, h, w));
        let mut inv_std = Array2::<f64>::zeros((b, self.groups));
        for bi in 0..b {
            for g in 0..self.groups {
                let mut grp = xhat.slice_mut(s![bi, g * cg..(g + 1) * cg, .., ..]);
                let mean = grp.sum() / m;
                let var = grp.fold(0.0, |a, v| a + (v - mean) * (v - mean)) / m;
                let is = 1.0 / (var + self.eps).sqrt();
                grp.mapv_inplace(|v| (v - mean) * is);
                inv_std[[bi, g]] = is;
                for ci in g * cg..(g + 1) * cg {
                    let src = xhat.slice(s![bi, ci, .., ..]);
                    let mut dst = y.slice_mut(s![bi, ci, .., ..]);
                    dst.zip_mut_with(&src, |d, &v| *d = gamma[ci] * v + beta[ci]);
                }
            }
        }
        (y, NormCache { xhat, inv_std })
    }

    pub fn backward(
        &self,
        store: &ParamStore,
        cache: &NormCache,
        dy: &Array4<f64>,
        grads: &mut [f64],
    ) -> Array4<f64> {
        let (b, c, h, w) = dy.dim();
        let cg = c / self.groups;
        let m = (cg * h * w) as f64;
        let gamma = store.slice(self.gamma).to_vec();
        let mut dgamma = vec![0.0; c];
        let mut dbeta = vec![0.0; c];
        let mut dx = Array4::<f64>::zeros((b, c, h, w));
        for bi in 0..b {
            for g in 0..self.groups {
                let mut sum_d = 0.0;
                let mut sum_dx = 0.0;
                for ci in g * cg..(g + 1) * cg {
                    let dyp = dy.slice(s![bi, ci, .., ..]);
                    let xp = cache.xhat.slice(s![bi, ci, .., ..]);
                    let mut dxhat = dx.slice_mut(s![bi, ci, .., ..]);
                    ndarray::Zip::from(&mut dxhat).and(&dyp).and(&xp).for_each(|o, &d, &xv| {
                        dgamma[ci] += d * xv;
                        dbeta[ci] += d;
                        let v = d * gamma[ci];
                        *o = v;
                        sum_d += v;
                        sum_dx += v * xv;
                    });
                }
                let is = cache.inv_std[[bi, g]];
                let mut grp = dx.slice_mut(s![bi, g * cg..(g + 1) * cg, .., ..]);
                let xg = cache.xhat.slice(s![bi, g * cg..(g + 1) * cg, .., ..]);
                ndarray::Zip::from(&mut grp).and(&xg).for_each(|o, &xv| {
                    *o = is / m * (m * *o - sum_d - xv * sum_dx);
                });
            }
        }
        grad_slice(store, grads, self.gamma).iter_mut().zip(&dgamma).for_each(|(g, d)| *g += d);
        grad_slice(store, grads, self.beta).iter_mut().zip(&dbeta).for_each(|(g, d)| *g += d);
        dx
    }
}

/// Fully connected layer `y = x W^T + b` with `W: (out, in)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Linear {
    weight: TensorId,
    bias: TensorId,
    pub inputs: usize,
    pub outputs: usize,
}

impl Linear {
    /// Uniform weights in `±bound_scale / sqrt(fan_in)`, zero bias.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        inputs: usize,
        outputs: usize,
        bound_scale: f64,
        rng: &mut Rng,
    ) -> Self {
        let bound = bound_scale / (inputs as f64).sqrt();
        let init = if bound_scale == 0.0 {
            vec![0.0; inputs * outputs]
        } else {
            uniform(rng, inputs * outputs, bound)
        };
        let weight = store.add(&format!("{name}.weight"), &[outputs, inputs], init);
        let bias = store.add(&format!("{name}.bias"), &[outputs], vec![0.0; outputs]);
        Linear { weight, bias, inputs, outputs }
    }

    pub fn forward(&self, store: &ParamStore, x: &ArrayView2<f64>) -> Array2<f64> {
        let mut y = x.dot(&store.view2(self.weight).t());
        y += &store.view1(self.bias);
        y
    }

    pub fn backward(
        &self,
        store: &ParamStore,
        x: &ArrayView2<f64>,
        dy: &Array2<f64>,
        grads: &mut [f64],
    ) -> Array2<f64> {
        let dw = dy.t().dot(x);
        grad_slice(store, grads, self.weight).iter_mut().zip(dw.iter()).for_each(|(g, d)| *g += d);
        let db: Array1<f64> = dy.sum_axis(Axis(0));
        grad_slice(store, grads, self.bias).iter_mut().zip(db.iter()).for_each(|(g, d)| *g += d);
        dy.dot(&store.view2(self.weight))
    }
}

pub fn relu(x: &mut Array4<f64>) {
    x.mapv_inplace(|v| v.max(0.0));
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
