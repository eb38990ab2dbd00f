//! Forward and backward kernels for the layer zoo.
//!
//! Every kernel parallelises only over independent outputs (batch rows,
//! filters, input rows), and each output element is accumulated in a fixed
//! order, so the thread count never changes a result.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tensor::{Scalar, Tensor};
use crate::par;
use crate::{Error, Result};

/// Batch-norm epsilon.
pub const BN_EPS: f64 = 1e-5;
/// Weight of the previous running statistic in the batch-norm update.
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Sigmoid,
    Relu,
    Softmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

fn shape_err(what: &str, a: &[usize], b: &[usize]) -> Error {
    Error::Shape(format!("{what}: {a:?} vs {b:?}"))
}

// ---------------------------------------------------------------- dense

/// `x @ w + b` for `x: [batch, in]`, `w: [in, out]`, `b: [out]`.
pub fn affine<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if x.rank() != 2 || w.rank() != 2 || x.dims()[1] != w.dims()[0] {
        return Err(shape_err("dense input vs weight", x.dims(), w.dims()));
    }
    let (batch, inputs, outputs) = (x.dims()[0], w.dims()[0], w.dims()[1]);
    if b.dims() != [outputs] {
        return Err(shape_err("dense bias vs weight", b.dims(), w.dims()));
    }
    let (xd, wd, bd) = (x.data(), w.data(), b.data());
    let mut y = vec![T::zero(); batch * outputs];
    par::for_each_chunk(&mut y, outputs, |r, row| {
        row.copy_from_slice(bd);
        let xr = &xd[r * inputs..(r + 1) * inputs];
        for (i, &xv) in xr.iter().enumerate() {
            let wr = &wd[i * outputs..(i + 1) * outputs];
            for (o, &wv) in row.iter_mut().zip(wr) {
                *o += xv * wv;
            }
        }
    });
    Tensor::new(vec![batch, outputs], y)
}

/// Gradients of [`affine`]: `(dx, dw, db)`. `dx` is skipped when not needed.
pub fn affine_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
    need_dx: bool,
) -> (Option<Tensor<T>>, Tensor<T>, Tensor<T>) {
    let (batch, inputs, outputs) = (x.dims()[0], w.dims()[0], w.dims()[1]);
    let (xd, wd, gd) = (x.data(), w.data(), dy.data());

    let dx = need_dx.then(|| {
        let mut dx = vec![T::zero(); batch * inputs];
        par::for_each_chunk(&mut dx, inputs, |r, row| {
            let gr = &gd[r * outputs..(r + 1) * outputs];
            for (i, v) in row.iter_mut().enumerate() {
                let wr = &wd[i * outputs..(i + 1) * outputs];
                *v = wr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
            }
        });
        Tensor::new(vec![batch, inputs], dx).expect("dx dims")
    });

    let mut dw = vec![T::zero(); inputs * outputs];
    par::for_each_chunk(&mut dw, outputs, |i, row| {
        for r in 0..batch {
            let xv = xd[r * inputs + i];
            let gr = &gd[r * outputs..(r + 1) * outputs];
            for (o, &g) in row.iter_mut().zip(gr) {
                *o += xv * g;
            }
        }
    });

    let mut db = vec![T::zero(); outputs];
    for r in 0..batch {
        for (o, &g) in db.iter_mut().zip(&gd[r * outputs..(r + 1) * outputs]) {
            *o += g;
        }
    }
    (
        dx,
        Tensor::new(vec![inputs, outputs], dw).expect("dw dims"),
        Tensor::new(vec![outputs], db).expect("db dims"),
    )
}

/// Affine map followed by `activation`.
pub fn dense_forward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
    activation: Activation,
) -> Result<Tensor<T>> {
    Ok(activate(&affine(x, w, b)?, activation))
}

// ---------------------------------------------------------------- activations

pub fn activate<T: Scalar>(x: &Tensor<T>, act: Activation) -> Tensor<T> {
    match act {
        Activation::Sigmoid => x.map(|v| T::one() / (T::one() + (-v).exp())),
        Activation::Relu => x.map(|v| if v > T::zero() { v } else { T::zero() }),
        Activation::Softmax => softmax(x),
    }
}

/// Row-wise softmax over the last dimension.
pub fn softmax<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let width = x.dims().last().copied().unwrap_or(1).max(1);
    let mut out = x.clone();
    for row in out.data_mut().chunks_mut(width) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v = *v / sum;
        }
    }
    out
}

/// Backward pass of an activation given its input `x`, output `y` and `dy`.
pub fn activate_backward<T: Scalar>(
    act: Activation,
    x: &Tensor<T>,
    y: &Tensor<T>,
    dy: &Tensor<T>,
) -> Tensor<T> {
    let mut dx = dy.clone();
    match act {
        Activation::Sigmoid => {
            for (d, &s) in dx.data_mut().iter_mut().zip(y.data()) {
                *d = *d * s * (T::one() - s);
            }
        }
        Activation::Relu => {
            for (d, &v) in dx.data_mut().iter_mut().zip(x.data()) {
                if v <= T::zero() {
                    *d = T::zero();
                }
            }
        }
        Activation::Softmax => {
            let width = y.dims().last().copied().unwrap_or(1).max(1);
            for (drow, yrow) in dx.data_mut().chunks_mut(width).zip(y.data().chunks(width)) {
                let dot: T = drow.iter().zip(yrow).map(|(&a, &b)| a * b).sum();
                for (d, &s) in drow.iter_mut().zip(yrow) {
                    *d = s * (*d - dot);
                }
            }
        }
    }
    dx
}

// ---------------------------------------------------------------- convolution

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    batch: usize,
    channels: usize,
    filters: usize,
    in_h: usize,
    in_w: usize,
    k_h: usize,
    k_w: usize,
    out_h: usize,
    out_w: usize,
    stride: usize,
}

impl ConvGeom {
    fn in_plane(&self) -> usize {
        self.in_h * self.in_w
    }
    fn out_plane(&self) -> usize {
        self.out_h * self.out_w
    }
}

/// Output length of a valid convolution or `None` if the kernel does not fit.
pub fn conv_out_len(n: usize, k: usize, stride: usize) -> Option<usize> {
    (k >= 1 && stride >= 1 && n >= k).then(|| (n - k) / stride + 1)
}

fn conv_geom<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, stride: usize, dim: usize) -> Result<ConvGeom> {
    let ok_rank = x.rank() == dim + 2 && w.rank() == dim + 2;
    if !ok_rank || x.dims()[1] != w.dims()[1] {
        return Err(shape_err("conv input vs kernel", x.dims(), w.dims()));
    }
    if stride == 0 {
        return Err(Error::Shape("conv stride must be >= 1".into()));
    }
    let (in_h, in_w, k_h, k_w) = if dim == 1 {
        (1, x.dims()[2], 1, w.dims()[2])
    } else {
        (x.dims()[2], x.dims()[3], w.dims()[2], w.dims()[3])
    };
    let too_big = || shape_err("conv kernel larger than input", w.dims(), x.dims());
    let out_h = if dim == 1 {
        1
    } else {
        conv_out_len(in_h, k_h, stride).ok_or_else(too_big)?
    };
    let out_w = conv_out_len(in_w, k_w, stride).ok_or_else(too_big)?;
    Ok(ConvGeom {
        batch: x.dims()[0],
        channels: x.dims()[1],
        filters: w.dims()[0],
        in_h,
        in_w,
        k_h,
        k_w,
        out_h,
        out_w,
        stride,
    })
}

fn conv_out_dims(g: &ConvGeom, dim: usize) -> Vec<usize> {
    if dim == 1 {
        vec![g.batch, g.filters, g.out_w]
    } else {
        vec![g.batch, g.filters, g.out_h, g.out_w]
    }
}

/// Valid cross-correlation. `dim = 1`: `x: [batch, c, l]`, `w: [f, c, k]`;
/// `dim = 2`: `x: [batch, c, h, w]`, `w: [f, c, kh, kw]`.
pub fn conv_forward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    dim: usize,
) -> Result<Tensor<T>> {
    let g = conv_geom(x, w, stride, dim)?;
    if let Some(b) = bias {
        if b.dims() != [g.filters] {
            return Err(shape_err("conv bias vs filters", b.dims(), w.dims()));
        }
    }
    let (xd, wd) = (x.data(), w.data());
    let ksz = g.channels * g.k_h * g.k_w;
    let sample_out = g.filters * g.out_plane();
    let mut y = vec![T::zero(); g.batch * sample_out];
    par::for_each_chunk(&mut y, sample_out, |b, out| {
        let xs = &xd[b * g.channels * g.in_plane()..(b + 1) * g.channels * g.in_plane()];
        for f in 0..g.filters {
            let of = &mut out[f * g.out_plane()..(f + 1) * g.out_plane()];
            let b0 = bias.map_or(T::zero(), |t| t.data()[f]);
            of.iter_mut().for_each(|v| *v = b0);
            for c in 0..g.channels {
                let xc = &xs[c * g.in_plane()..(c + 1) * g.in_plane()];
                for ky in 0..g.k_h {
                    for kx in 0..g.k_w {
                        let wv = wd[f * ksz + (c * g.k_h + ky) * g.k_w + kx];
                        for oy in 0..g.out_h {
                            let xrow = &xc[(oy * g.stride + ky) * g.in_w..];
                            let orow = &mut of[oy * g.out_w..(oy + 1) * g.out_w];
                            if g.stride == 1 {
                                for (o, &xv) in orow.iter_mut().zip(&xrow[kx..kx + g.out_w]) {
                                    *o += wv * xv;
                                }
                            } else {
                                for (ox, o) in orow.iter_mut().enumerate() {
                                    *o += wv * xrow[ox * g.stride + kx];
                                }
                            }
                        }
                    }
                }
            }
        }
    });
    Tensor::new(conv_out_dims(&g, dim), y)
}

/// Gradients of [`conv_forward`]: `(dx, dw, db)`.
pub fn conv_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
    stride: usize,
    dim: usize,
    need_dx: bool,
) -> Result<(Option<Tensor<T>>, Tensor<T>, Tensor<T>)> {
    let g = conv_geom(x, w, stride, dim)?;
    if dy.dims() != conv_out_dims(&g, dim).as_slice() {
        return Err(shape_err("conv output gradient", dy.dims(), &conv_out_dims(&g, dim)));
    }
    let (xd, wd, gd) = (x.data(), w.data(), dy.data());
    let ksz = g.channels * g.k_h * g.k_w;
    let sample_in = g.channels * g.in_plane();
    let sample_out = g.filters * g.out_plane();

    let dx = if need_dx {
        let mut dx = vec![T::zero(); g.batch * sample_in];
        par::for_each_chunk(&mut dx, sample_in, |b, dxs| {
            let gs = &gd[b * sample_out..(b + 1) * sample_out];
            for f in 0..g.filters {
                let gf = &gs[f * g.out_plane()..(f + 1) * g.out_plane()];
                for c in 0..g.channels {
                    let dxc = &mut dxs[c * g.in_plane()..(c + 1) * g.in_plane()];
                    for ky in 0..g.k_h {
                        for kx in 0..g.k_w {
                            let wv = wd[f * ksz + (c * g.k_h + ky) * g.k_w + kx];
                            for oy in 0..g.out_h {
                                let grow = &gf[oy * g.out_w..(oy + 1) * g.out_w];
                                let base = (oy * g.stride + ky) * g.in_w + kx;
                                for (ox, &gv) in grow.iter().enumerate() {
                                    dxc[base + ox * g.stride] += wv * gv;
                                }
                            }
                        }
                    }
                }
            }
        });
        Some(Tensor::new(x.dims().to_vec(), dx)?)
    } else {
        None
    };

    let mut dw = vec![T::zero(); g.filters * ksz];
    par::for_each_chunk(&mut dw, ksz, |f, dwf| {
        for b in 0..g.batch {
            let gf = &gd[b * sample_out + f * g.out_plane()..b * sample_out + (f + 1) * g.out_plane()];
            let xs = &xd[b * sample_in..(b + 1) * sample_in];
            for c in 0..g.channels {
                let xc = &xs[c * g.in_plane()..(c + 1) * g.in_plane()];
                for ky in 0..g.k_h {
                    for kx in 0..g.k_w {
                        let mut acc = T::zero();
                        for oy in 0..g.out_h {
                            let grow = &gf[oy * g.out_w..(oy + 1) * g.out_w];
                            let base = (oy * g.stride + ky) * g.in_w + kx;
                            if g.stride == 1 {
                                for (&gv, &xv) in grow.iter().zip(&xc[base..base + g.out_w]) {
                                    acc += gv * xv;
                                }
                            } else {
                                for (ox, &gv) in grow.iter().enumerate() {
                                    acc += gv * xc[base + ox * g.stride];
                                }
                            }
                        }
                        dwf[(c * g.k_h + ky) * g.k_w + kx] += acc;
                    }
                }
            }
        }
    });

    let mut db = vec![T::zero(); g.filters];
    for b in 0..g.batch {
        for (f, d) in db.iter_mut().enumerate() {
            let s = b * sample_out + f * g.out_plane();
            *d += gd[s..s + g.out_plane()].iter().copied().sum::<T>();
        }
    }
    Ok((
        dx,
        Tensor::new(w.dims().to_vec(), dw)?,
        Tensor::new(vec![g.filters], db)?,
    ))
}

// ---------------------------------------------------------------- pooling

/// Non-overlapping max pooling with window and stride `pool` over the last
/// `dim` axes. Returns the output and, per output element, the flat input
/// index it came from (the first maximum on ties).
pub fn maxpool_forward<T: Scalar>(
    x: &Tensor<T>,
    pool: usize,
    dim: usize,
) -> Result<(Tensor<T>, Vec<usize>)> {
    if x.rank() != dim + 2 || pool == 0 {
        return Err(Error::Shape(format!(
            "maxpool{dim}d expects rank {} input, got {:?}",
            dim + 2,
            x.dims()
        )));
    }
    let (in_h, in_w) = if dim == 1 {
        (1, x.dims()[2])
    } else {
        (x.dims()[2], x.dims()[3])
    };
    let (ph, pw) = if dim == 1 { (1, pool) } else { (pool, pool) };
    let (out_h, out_w) = (in_h / ph, in_w / pw);
    if out_h == 0 || out_w == 0 {
        return Err(Error::Shape(format!(
            "pool {pool} larger than input {:?}",
            x.dims()
        )));
    }
    let planes = x.dims()[0] * x.dims()[1];
    let xd = x.data();
    let mut y = Vec::with_capacity(planes * out_h * out_w);
    let mut arg = Vec::with_capacity(planes * out_h * out_w);
    for p in 0..planes {
        let base = p * in_h * in_w;
        for oy in 0..out_h {
            for ox in 0..out_w {
                let mut best = base + oy * ph * in_w + ox * pw;
                for dy in 0..ph {
                    for dx in 0..pw {
                        let idx = base + (oy * ph + dy) * in_w + ox * pw + dx;
                        if xd[idx] > xd[best] {
                            best = idx;
                        }
                    }
                }
                y.push(xd[best]);
                arg.push(best);
            }
        }
    }
    let mut dims = x.dims().to_vec();
    if dim == 1 {
        dims[2] = out_w;
    } else {
        dims[2] = out_h;
        dims[3] = out_w;
    }
    Ok((Tensor::new(dims, y)?, arg))
}

pub fn maxpool_backward<T: Scalar>(in_dims: &[usize], argmax: &[usize], dy: &Tensor<T>) -> Tensor<T> {
    let mut dx = Tensor::zeros(in_dims);
    let d = dx.data_mut();
    for (&i, &g) in argmax.iter().zip(dy.data()) {
        d[i] += g;
    }
    dx
}

// ---------------------------------------------------------------- batch norm

/// Per-channel statistics and normalised values from a training pass.
#[derive(Debug, Clone)]
pub struct BatchNormCache<T> {
    pub xhat: Tensor<T>,
    pub inv_std: Vec<T>,
    pub mean: Vec<T>,
    pub var: Vec<T>,
    /// True when batch statistics were used (training behaviour).
    pub batch_stats: bool,
}

fn bn_layout(dims: &[usize]) -> Result<(usize, usize, usize)> {
    if dims.len() < 2 {
        return Err(Error::Shape(format!("batch norm needs rank >= 2, got {dims:?}")));
    }
    Ok((dims[0], dims[1], dims[2..].iter().product()))
}

/// Normalises channel axis 1 of `x`: statistics span the batch and any
/// spatial axes. Training uses population batch variance; evaluation uses
/// the running statistics.
pub fn batchnorm_forward<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running_mean: &Tensor<T>,
    running_var: &Tensor<T>,
    mode: Mode,
) -> Result<(Tensor<T>, BatchNormCache<T>)> {
    let (batch, channels, spatial) = bn_layout(x.dims())?;
    if gamma.dims() != [channels] || beta.dims() != [channels] {
        return Err(shape_err("batch norm scale vs input", gamma.dims(), x.dims()));
    }
    if mode == Mode::Train && batch < 2 {
        return Err(Error::Domain(
            "batch norm in training mode needs a batch of at least 2".into(),
        ));
    }
    let eps = T::from_f64(BN_EPS);
    let m = T::from_f64((batch * spatial) as f64);
    let xd = x.data();
    let at = |b: usize, c: usize, s: usize| (b * channels + c) * spatial + s;

    let (mean, var) = if mode == Mode::Train {
        let mut mean = vec![T::zero(); channels];
        let mut var = vec![T::zero(); channels];
        for c in 0..channels {
            let mut s = T::zero();
            for b in 0..batch {
                for k in 0..spatial {
                    s += xd[at(b, c, k)];
                }
            }
            mean[c] = s / m;
            let mut v = T::zero();
            for b in 0..batch {
                for k in 0..spatial {
                    let d = xd[at(b, c, k)] - mean[c];
                    v += d * d;
                }
            }
            var[c] = v / m;
        }
        (mean, var)
    } else {
        (running_mean.data().to_vec(), running_var.data().to_vec())
    };
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mut xhat = vec![T::zero(); xd.len()];
    let mut y = vec![T::zero(); xd.len()];
    for b in 0..batch {
        for c in 0..channels {
            let (g, bt) = (gamma.data()[c], beta.data()[c]);
            for k in 0..spatial {
                let i = at(b, c, k);
                xhat[i] = (xd[i] - mean[c]) * inv_std[c];
                y[i] = g * xhat[i] + bt;
            }
        }
    }
    Ok((
        Tensor::new(x.dims().to_vec(), y)?,
        BatchNormCache {
            xhat: Tensor::new(x.dims().to_vec(), xhat)?,
            inv_std,
            mean,
            var,
            batch_stats: mode == Mode::Train,
        },
    ))
}

/// Gradients `(dx, dgamma, dbeta)` of [`batchnorm_forward`].
pub fn batchnorm_backward<T: Scalar>(
    cache: &BatchNormCache<T>,
    gamma: &Tensor<T>,
    dy: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (batch, channels, spatial) = bn_layout(dy.dims())?;
    let m = T::from_f64((batch * spatial) as f64);
    let (gd, xh) = (dy.data(), cache.xhat.data());
    let at = |b: usize, c: usize, s: usize| (b * channels + c) * spatial + s;
    let mut dgamma = vec![T::zero(); channels];
    let mut dbeta = vec![T::zero(); channels];
    for c in 0..channels {
        for b in 0..batch {
            for k in 0..spatial {
                let i = at(b, c, k);
                dgamma[c] += gd[i] * xh[i];
                dbeta[c] += gd[i];
            }
        }
    }
    let mut dx = vec![T::zero(); gd.len()];
    for c in 0..channels {
        let scale = gamma.data()[c] * cache.inv_std[c];
        for b in 0..batch {
            for k in 0..spatial {
                let i = at(b, c, k);
                dx[i] = if cache.batch_stats {
                    scale / m * (m * gd[i] - dbeta[c] - xh[i] * dgamma[c])
                } else {
                    scale * gd[i]
                };
            }
        }
    }
    Ok((
        Tensor::new(dy.dims().to_vec(), dx)?,
        Tensor::new(vec![channels], dgamma)?,
        Tensor::new(vec![channels], dbeta)?,
    ))
}

/// Blends batch statistics into running statistics in place.
pub fn batchnorm_update_running<T: Scalar>(
    running_mean: &mut Tensor<T>,
    running_var: &mut Tensor<T>,
    cache: &BatchNormCache<T>,
) {
    let keep = T::from_f64(BN_MOMENTUM);
    let take = T::one() - keep;
    for (r, &m) in running_mean.data_mut().iter_mut().zip(&cache.mean) {
        *r = keep * *r + take * m;
    }
    for (r, &v) in running_var.data_mut().iter_mut().zip(&cache.var) {
        *r = keep * *r + take * v;
    }
}

// ---------------------------------------------------------------- dropout

/// Inverted dropout. Returns the output and the multiplier applied to each
/// element (`0` or `1 / (1 - rate)`); evaluation mode is the identity.
pub fn dropout_forward<T: Scalar>(
    x: &Tensor<T>,
    rate: f64,
    mode: Mode,
    rng: &mut ChaCha8Rng,
) -> Result<(Tensor<T>, Option<Vec<T>>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
    }
    if mode == Mode::Eval || rate == 0.0 {
        return Ok((x.clone(), None));
    }
    let keep = T::from_f64(1.0 / (1.0 - rate));
    let mask: Vec<T> = (0..x.len())
        .map(|_| {
            if rng.random::<f64>() < rate {
                T::zero()
            } else {
                keep
            }
        })
        .collect();
    let mut y = x.clone();
    for (v, &m) in y.data_mut().iter_mut().zip(&mask) {
        *v = *v * m;
    }
    Ok((y, Some(mask)))
}

/// Deterministic generator for one dropout draw.
pub fn dropout_rng(seed: u64, step: u64, salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix64(mix64(seed, step), salt))
}

/// SplitMix-style 64-bit mixer used to derive independent seeds.
pub fn mix64(a: u64, b: u64) -> u64 {
    let mut z = a
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(b.rotate_left(17).wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// FNV-1a hash of a name, for per-layer seed derivation.
pub fn name_hash(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

// ---------------------------------------------------------------- loss

/// Mean softmax cross-entropy over the batch and its gradient with respect
/// to the logits, `(softmax - onehot) / batch`.
pub fn softmax_xent<T: Scalar>(logits: &Tensor<T>, targets: &[usize]) -> Result<(T, Tensor<T>)> {
    if logits.rank() != 2 || logits.dims()[0] != targets.len() {
        return Err(Error::Shape(format!(
            "logits {:?} for {} targets",
            logits.dims(),
            targets.len()
        )));
    }
    let (batch, classes) = (logits.dims()[0], logits.dims()[1]);
    if let Some(&t) = targets.iter().find(|&&t| t >= classes) {
        return Err(Error::Domain(format!(
            "target class {t} out of range for {classes} outputs"
        )));
    }
    let probs = softmax(logits);
    let inv_b = T::one() / T::from_f64(batch as f64);
    let mut loss = T::zero();
    let mut grad = probs.clone();
    for (r, &t) in targets.iter().enumerate() {
        let row = logits.row(r);
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
        loss += lse - row[t];
        let g = &mut grad.data_mut()[r * classes..(r + 1) * classes];
        g[t] = g[t] - T::one();
        for v in g.iter_mut() {
            *v = *v * inv_b;
        }
    }
    Ok((loss * inv_b, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(dims: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(dims.to_vec(), v).unwrap()
    }

    #[test]
    fn dense_examples() {
        let w = t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        let b = t(&[2], &[0.0, 0.0]);
        let y = dense_forward(&t(&[1, 2], &[0.0, 0.0]), &w, &b, Activation::Sigmoid).unwrap();
        assert_eq!(y.data(), &[0.5, 0.5]);
        let y = dense_forward(&t(&[1, 2], &[-1.0, 2.0]), &w, &b, Activation::Relu).unwrap();
        assert_eq!(y.data(), &[0.0, 2.0]);
        let y = dense_forward(&t(&[1, 2], &[0.0, 0.0]), &w, &b, Activation::Softmax).unwrap();
        assert_eq!(y.data(), &[0.5, 0.5]);
    }

    #[test]
    fn dense_shape_error_names_both() {
        let err = affine(&t(&[1, 3], &[0.0; 3]), &t(&[2, 2], &[0.0; 4]), &t(&[2], &[0.0; 2]))
            .unwrap_err()
            .to_string();
        assert!(err.contains("[1, 3]") && err.contains("[2, 2]"), "{err}");
    }

    #[test]
    fn conv_examples() {
        let x = t(&[1, 1, 4], &[1.0, 2.0, 3.0, 4.0]);
        let k = t(&[1, 1, 3], &[1.0, 0.0, -1.0]);
        assert_eq!(conv_forward(&x, &k, None, 1, 1).unwrap().data(), &[-2.0, -2.0]);

        let img = t(&[1, 1, 2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let id = t(&[1, 1, 1, 1], &[1.0]);
        assert_eq!(conv_forward(&img, &id, None, 1, 2).unwrap().data(), img.data());

        let x5 = t(&[1, 1, 5], &[0.0; 5]);
        let k3 = t(&[1, 1, 3], &[0.0; 3]);
        assert_eq!(conv_forward(&x5, &k3, None, 2, 1).unwrap().dims(), &[1, 1, 2]);

        let big = t(&[1, 1, 6], &[0.0; 6]);
        assert!(matches!(conv_forward(&x5, &big, None, 1, 1), Err(Error::Shape(_))));
    }

    #[test]
    fn maxpool_ties_take_first() {
        let x = t(&[1, 1, 4], &[2.0, 2.0, 1.0, 3.0]);
        let (y, arg) = maxpool_forward(&x, 2, 1).unwrap();
        assert_eq!(y.data(), &[2.0, 3.0]);
        assert_eq!(arg, vec![0, 3]);
        let dx = maxpool_backward(x.dims(), &arg, &t(&[1, 1, 2], &[1.0, 1.0]));
        assert_eq!(dx.data(), &[1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn batchnorm_examples() {
        let x = t(&[3, 1], &[1.0, 2.0, 3.0]);
        let (g, b) = (t(&[1], &[1.0]), t(&[1], &[0.0]));
        let (rm, rv) = (t(&[1], &[0.0]), t(&[1], &[1.0]));
        let (y, _) = batchnorm_forward(&x, &g, &b, &rm, &rv, Mode::Train).unwrap();
        let expect = [-1.2247, 0.0, 1.2247];
        for (a, e) in y.data().iter().zip(expect) {
            assert!((a - e).abs() < 1e-3);
        }

        let z = t(&[4, 1], &[-1.0, 1.0, -1.0, 1.0]);
        let (y, _) = batchnorm_forward(&z, &g, &b, &rm, &rv, Mode::Train).unwrap();
        assert!(y.max_abs_diff(&z) < 1e-4);

        let (y, _) = batchnorm_forward(&x, &g, &b, &rm, &rv, Mode::Eval).unwrap();
        assert!(y.max_abs_diff(&x) < 1e-4);

        let one = t(&[1, 1], &[1.0]);
        assert!(matches!(
            batchnorm_forward(&one, &g, &b, &rm, &rv, Mode::Train),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn dropout_examples() {
        let x = t(&[2, 8], &[1.0; 16]);
        let mut rng = dropout_rng(1, 0, 0);
        assert_eq!(dropout_forward(&x, 0.0, Mode::Train, &mut rng).unwrap().0, x);
        assert_eq!(dropout_forward(&x, 0.5, Mode::Eval, &mut rng).unwrap().0, x);

        let (a, mask_a) = dropout_forward(&x, 0.5, Mode::Train, &mut dropout_rng(7, 3, 9)).unwrap();
        let (b, mask_b) = dropout_forward(&x, 0.5, Mode::Train, &mut dropout_rng(7, 3, 9)).unwrap();
        assert_eq!(mask_a, mask_b);
        assert_eq!(a, b);
        assert!(a.data().iter().all(|&v| v == 0.0 || v == 2.0));
        assert!(a.data().contains(&0.0) && a.data().contains(&2.0));
        assert!(dropout_forward(&x, 1.0, Mode::Train, &mut rng).is_err());
    }

    #[test]
    fn xent_examples() {
        let (l, _) = softmax_xent(&t(&[1, 2], &[0.0, 0.0]), &[0]).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
        let (l, g) = softmax_xent(&t(&[1, 2], &[1e3, 0.0]), &[0]).unwrap();
        assert!(l.abs() < 1e-12 && l.is_finite());
        assert!(g.all_finite());
        let (l32, _) = softmax_xent(&Tensor::new(vec![1, 2], vec![1e3f32, 0.0]).unwrap(), &[0]).unwrap();
        assert!(l32.is_finite());
        assert!(softmax_xent(&t(&[1, 2], &[0.0, 0.0]), &[2]).is_err());
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let x = t(&[3, 4], &[1e3, -1e3, 0.0, 5.0, 0.1, 0.2, 0.3, 0.4, -50.0, 50.0, 0.0, 0.0]);
        let y = softmax(&x);
        for r in 0..3 {
            let s: f64 = y.row(r).iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }
}
