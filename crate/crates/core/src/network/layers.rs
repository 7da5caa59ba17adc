//! Layer implementations with analytic forward and backward passes.
//!
//! Feature maps are `[N, C, H, W]` tensors. Convolution is im2col-based:
//! every receptive field is flattened channel-major, then row, then column,
//! and each neuron is evaluated on every patch. A quadratic conv layer holds
//! m quadratic neurons (each emitting k+1 channels ordered `[y, f...]`)
//! followed by r linear fill neurons so the channel budget is met exactly.

use crate::error::{Error, Result};
use crate::network::arch::{ConvSpec, NeuronKind};
use crate::numerics::{dot, Tensor};

/// Parameter group membership for the optimizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Main,
    Lambda,
}

/// Forward mode: training uses batch statistics in batchnorm.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// One trainable parameter tensor with its gradient and momentum buffers.
pub struct ParamSlot<'a> {
    pub name: String,
    pub kind: ParamKind,
    pub data: &'a mut Vec<f64>,
    pub grad: &'a mut Vec<f64>,
    pub mom: &'a mut Vec<f64>,
}

pub(crate) type ParamVisitor<'v> = dyn FnMut(ParamSlot<'_>) + 'v;

/// Rearranges the receptive fields of a single feature map into the columns
/// of an n-by-P matrix (column p = flattened patch at output position p).
pub fn im2col(x: &Tensor, spec: &ConvSpec) -> Result<Tensor> {
    if x.rank() != 3 || x.shape()[0] != spec.in_channels {
        return Err(Error::Shape(format!(
            "im2col: input {:?} incompatible with {} channels",
            x.shape(),
            spec.in_channels
        )));
    }
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (oh, ow) = spec.out_spatial(h, w)?;
    let n = spec.input_size();
    let p = oh * ow;
    let mut cols = vec![0.0; p * n];
    im2col_patches(x.data(), c, h, w, spec, oh, ow, &mut cols);
    // Internal buffer is patch-major; the public matrix is n x P.
    let mut out = Tensor::zeros(&[n, p]);
    for pi in 0..p {
        for j in 0..n {
            out.set2(j, pi, cols[pi * n + j]);
        }
    }
    Ok(out)
}

/// Patch-major im2col into a preallocated `P*n` buffer.
#[allow(clippy::too_many_arguments)]
pub(crate) fn im2col_patches(
    x: &[f64],
    c: usize,
    h: usize,
    w: usize,
    spec: &ConvSpec,
    oh: usize,
    ow: usize,
    cols: &mut [f64],
) {
    let (kh, kw) = spec.kernel;
    let stride = spec.stride;
    let pad = spec.pad as isize;
    let mut idx = 0;
    for oi in 0..oh {
        for oj in 0..ow {
            let i0 = (oi * stride) as isize - pad;
            let j0 = (oj * stride) as isize - pad;
            for ch in 0..c {
                let plane = &x[ch * h * w..(ch + 1) * h * w];
                for r in 0..kh {
                    let ii = i0 + r as isize;
                    for s in 0..kw {
                        let jj = j0 + s as isize;
                        cols[idx] = if ii >= 0 && (ii as usize) < h && jj >= 0 && (jj as usize) < w
                        {
                            plane[ii as usize * w + jj as usize]
                        } else {
                            0.0
                        };
                        idx += 1;
                    }
                }
            }
        }
    }
}

/// Scatters patch-major column gradients back onto the input map.
#[allow(clippy::too_many_arguments)]
pub(crate) fn col2im_accum(
    cols_grad: &[f64],
    c: usize,
    h: usize,
    w: usize,
    spec: &ConvSpec,
    oh: usize,
    ow: usize,
    gx: &mut [f64],
) {
    let (kh, kw) = spec.kernel;
    let stride = spec.stride;
    let pad = spec.pad as isize;
    let mut idx = 0;
    for oi in 0..oh {
        for oj in 0..ow {
            let i0 = (oi * stride) as isize - pad;
            let j0 = (oj * stride) as isize - pad;
            for ch in 0..c {
                for r in 0..kh {
                    let ii = i0 + r as isize;
                    for s in 0..kw {
                        let jj = j0 + s as isize;
                        if ii >= 0 && (ii as usize) < h && jj >= 0 && (jj as usize) < w {
                            gx[ch * h * w + ii as usize * w + jj as usize] += cols_grad[idx];
                        }
                        idx += 1;
                    }
                }
            }
        }
    }
}

/// Flat parameter storage for one conv layer, shared by values, gradients
/// and momentum buffers.
#[derive(Debug, Clone)]
pub enum ConvParams {
    Linear {
        /// out_channels rows of length n.
        w: Vec<f64>,
        b: Vec<f64>,
    },
    Quad {
        /// Retained directions: m neurons, k rows of length n each; the
        /// row for (neuron j, direction i) starts at `(j*k + i) * n`.
        q: Vec<f64>,
        /// m*k eigenvalue diagonals.
        lam: Vec<f64>,
        /// m linear rows of length n.
        w: Vec<f64>,
        b: Vec<f64>,
        /// r fill rows of length n.
        fw: Vec<f64>,
        fb: Vec<f64>,
    },
    Product {
        w1: Vec<f64>,
        w2: Vec<f64>,
        w3: Vec<f64>,
        b: Vec<f64>,
    },
}

impl ConvParams {
    fn zeros_like(&self) -> ConvParams {
        match self {
            ConvParams::Linear { w, b } => ConvParams::Linear {
                w: vec![0.0; w.len()],
                b: vec![0.0; b.len()],
            },
            ConvParams::Quad {
                q,
                lam,
                w,
                b,
                fw,
                fb,
            } => ConvParams::Quad {
                q: vec![0.0; q.len()],
                lam: vec![0.0; lam.len()],
                w: vec![0.0; w.len()],
                b: vec![0.0; b.len()],
                fw: vec![0.0; fw.len()],
                fb: vec![0.0; fb.len()],
            },
            ConvParams::Product { w1, w2, w3, b } => ConvParams::Product {
                w1: vec![0.0; w1.len()],
                w2: vec![0.0; w2.len()],
                w3: vec![0.0; w3.len()],
                b: vec![0.0; b.len()],
            },
        }
    }
}

struct ConvCache {
    /// Patch-major columns per sample: `[N][P*n]`.
    cols: Vec<Vec<f64>>,
    /// Quadratic intermediate features per sample: `[(j*P + p)*k + i]`.
    f: Vec<Vec<f64>>,
    /// Product-neuron partial dots per sample: `[c*P + p]` for w1 and w2.
    a1: Vec<Vec<f64>>,
    a2: Vec<Vec<f64>>,
    in_shape: (usize, usize, usize, usize),
}

/// Convolution layer over any of the three neuron families.
pub struct ConvLayer {
    pub spec: ConvSpec,
    /// Receptive-field size in_channels * kh * kw.
    pub n: usize,
    /// Quadratic neuron count and fill count (zero for other kinds).
    pub m: usize,
    pub r: usize,
    pub k: usize,
    pub bias_enabled: bool,
    pub params: ConvParams,
    pub grads: ConvParams,
    pub mom: ConvParams,
    cache: Option<ConvCache>,
}

impl ConvLayer {
    pub fn new(spec: ConvSpec, bias_enabled: bool) -> Result<Self> {
        let kind = spec
            .neuron_kind
            .ok_or_else(|| Error::Build("conv layer without a resolved neuron kind".into()))?;
        let n = spec.input_size();
        let out = spec.out_channels;
        let (m, r, k, params) = match kind {
            NeuronKind::Linear => (
                0,
                0,
                0,
                ConvParams::Linear {
                    w: vec![0.0; out * n],
                    b: vec![0.0; out],
                },
            ),
            NeuronKind::Quadratic { k } => {
                if k == 0 {
                    return Err(Error::Build("quadratic rank k must be >= 1".into()));
                }
                let m = out / (k + 1);
                let r = out - m * (k + 1);
                (
                    m,
                    r,
                    k,
                    ConvParams::Quad {
                        q: vec![0.0; m * k * n],
                        lam: vec![0.0; m * k],
                        w: vec![0.0; m * n],
                        b: vec![0.0; m],
                        fw: vec![0.0; r * n],
                        fb: vec![0.0; r],
                    },
                )
            }
            NeuronKind::Product => (
                0,
                0,
                0,
                ConvParams::Product {
                    w1: vec![0.0; out * n],
                    w2: vec![0.0; out * n],
                    w3: vec![0.0; out * n],
                    b: vec![0.0; out],
                },
            ),
        };
        let grads = params.zeros_like();
        let mom = params.zeros_like();
        Ok(ConvLayer {
            spec,
            n,
            m,
            r,
            k,
            bias_enabled,
            params,
            grads,
            mom,
            cache: None,
        })
    }

    pub fn kind(&self) -> NeuronKind {
        self.spec.neuron_kind.expect("resolved at construction")
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        if x.rank() != 4 || x.shape()[1] != self.spec.in_channels {
            return Err(Error::Shape(format!(
                "conv forward: input {:?} incompatible with spec {:?}",
                x.shape(),
                self.spec
            )));
        }
        let (nb, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let (oh, ow) = self.spec.out_spatial(h, w)?;
        let p = oh * ow;
        let n = self.n;
        let out_c = self.spec.out_channels;
        let mut out = Tensor::zeros(&[nb, out_c, oh, ow]);

        let mut cache = ConvCache {
            cols: Vec::with_capacity(nb),
            f: Vec::with_capacity(nb),
            a1: Vec::with_capacity(nb),
            a2: Vec::with_capacity(nb),
            in_shape: (nb, c, h, w),
        };

        for s in 0..nb {
            let xs = &x.data()[s * c * h * w..(s + 1) * c * h * w];
            let mut cols = vec![0.0; p * n];
            im2col_patches(xs, c, h, w, &self.spec, oh, ow, &mut cols);
            let os = &mut out.data_mut()[s * out_c * p..(s + 1) * out_c * p];

            match &self.params {
                ConvParams::Linear { w, b } => {
                    for ch in 0..out_c {
                        let wr = &w[ch * n..(ch + 1) * n];
                        let bias = if self.bias_enabled { b[ch] } else { 0.0 };
                        for pi in 0..p {
                            os[ch * p + pi] = dot(wr, &cols[pi * n..(pi + 1) * n]) + bias;
                        }
                    }
                }
                ConvParams::Quad {
                    q,
                    lam,
                    w,
                    b,
                    fw,
                    fb,
                } => {
                    let k = self.k;
                    let kf = k as f64;
                    let mut fbuf = vec![0.0; self.m * p * k];
                    for j in 0..self.m {
                        let wr = &w[j * n..(j + 1) * n];
                        let bias = if self.bias_enabled { b[j] } else { 0.0 };
                        let base = j * (k + 1);
                        for pi in 0..p {
                            let xp = &cols[pi * n..(pi + 1) * n];
                            let mut quad = 0.0;
                            for i in 0..k {
                                let qi = &q[(j * k + i) * n..(j * k + i + 1) * n];
                                let fv = dot(qi, xp);
                                fbuf[(j * p + pi) * k + i] = fv;
                                os[(base + 1 + i) * p + pi] = fv;
                                quad += lam[j * k + i] * fv * fv;
                            }
                            os[base * p + pi] = dot(wr, xp) + bias + quad / kf;
                        }
                    }
                    let fill_base = self.m * (k + 1);
                    for jr in 0..self.r {
                        let wr = &fw[jr * n..(jr + 1) * n];
                        let bias = if self.bias_enabled { fb[jr] } else { 0.0 };
                        for pi in 0..p {
                            os[(fill_base + jr) * p + pi] =
                                dot(wr, &cols[pi * n..(pi + 1) * n]) + bias;
                        }
                    }
                    cache.f.push(fbuf);
                }
                ConvParams::Product { w1, w2, w3, b } => {
                    let mut a1 = vec![0.0; out_c * p];
                    let mut a2 = vec![0.0; out_c * p];
                    for ch in 0..out_c {
                        let r1 = &w1[ch * n..(ch + 1) * n];
                        let r2 = &w2[ch * n..(ch + 1) * n];
                        let r3 = &w3[ch * n..(ch + 1) * n];
                        let bias = if self.bias_enabled { b[ch] } else { 0.0 };
                        for pi in 0..p {
                            let xp = &cols[pi * n..(pi + 1) * n];
                            let d1 = dot(r1, xp);
                            let d2 = dot(r2, xp);
                            a1[ch * p + pi] = d1;
                            a2[ch * p + pi] = d2;
                            os[ch * p + pi] = d1 * d2 + dot(r3, xp) + bias;
                        }
                    }
                    cache.a1.push(a1);
                    cache.a2.push(a2);
                }
            }
            cache.cols.push(cols);
        }
        self.cache = Some(cache);
        Ok(out)
    }

    pub fn backward(&mut self, gout: &Tensor) -> Result<Tensor> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::Domain("conv backward before forward".into()))?;
        let (nb, c, h, w) = cache.in_shape;
        let (oh, ow) = self.spec.out_spatial(h, w)?;
        let p = oh * ow;
        let n = self.n;
        let out_c = self.spec.out_channels;
        if gout.shape() != [nb, out_c, oh, ow] {
            return Err(Error::Shape(format!(
                "conv backward: upstream {:?}, expected {:?}",
                gout.shape(),
                [nb, out_c, oh, ow]
            )));
        }
        let mut gx = Tensor::zeros(&[nb, c, h, w]);

        for s in 0..nb {
            let cols = &cache.cols[s];
            let gs = &gout.data()[s * out_c * p..(s + 1) * out_c * p];
            let mut gcols = vec![0.0; p * n];

            match (&self.params, &mut self.grads) {
                (ConvParams::Linear { w, .. }, ConvParams::Linear { w: gw, b: gb }) => {
                    for ch in 0..out_c {
                        let wr = &w[ch * n..(ch + 1) * n];
                        let gwr = &mut gw[ch * n..(ch + 1) * n];
                        for pi in 0..p {
                            let gy = gs[ch * p + pi];
                            if gy == 0.0 {
                                continue;
                            }
                            let xp = &cols[pi * n..(pi + 1) * n];
                            let gc = &mut gcols[pi * n..(pi + 1) * n];
                            for jj in 0..n {
                                gwr[jj] += gy * xp[jj];
                                gc[jj] += gy * wr[jj];
                            }
                            if self.bias_enabled {
                                gb[ch] += gy;
                            }
                        }
                    }
                }
                (
                    ConvParams::Quad { q, lam, w, .. },
                    ConvParams::Quad {
                        q: gq,
                        lam: glam,
                        w: gw,
                        b: gb,
                        fw: gfw,
                        fb: gfb,
                    },
                ) => {
                    let k = self.k;
                    let kf = k as f64;
                    let fbuf = &cache.f[s];
                    for j in 0..self.m {
                        let wr = &w[j * n..(j + 1) * n];
                        let gwr = &mut gw[j * n..(j + 1) * n];
                        let base = j * (k + 1);
                        for pi in 0..p {
                            let gy = gs[base * p + pi];
                            let xp = &cols[pi * n..(pi + 1) * n];
                            let gc = &mut gcols[pi * n..(pi + 1) * n];
                            if gy != 0.0 {
                                for jj in 0..n {
                                    gwr[jj] += gy * xp[jj];
                                    gc[jj] += gy * wr[jj];
                                }
                                if self.bias_enabled {
                                    gb[j] += gy;
                                }
                            }
                            for i in 0..k {
                                let fv = fbuf[(j * p + pi) * k + i];
                                let gfv = gs[(base + 1 + i) * p + pi];
                                let sgrad = gy * (2.0 / kf) * lam[j * k + i] * fv + gfv;
                                glam[j * k + i] += gy * fv * fv / kf;
                                if sgrad == 0.0 {
                                    continue;
                                }
                                let row = (j * k + i) * n;
                                let qi = &q[row..row + n];
                                let gqi = &mut gq[row..row + n];
                                for jj in 0..n {
                                    gqi[jj] += sgrad * xp[jj];
                                    gc[jj] += sgrad * qi[jj];
                                }
                            }
                        }
                    }
                    let fill_base = self.m * (k + 1);
                    for jr in 0..self.r {
                        let row = jr * n;
                        let wr = &self_fw(&self.params)[row..row + n];
                        let gwr = &mut gfw[row..row + n];
                        for pi in 0..p {
                            let gy = gs[(fill_base + jr) * p + pi];
                            if gy == 0.0 {
                                continue;
                            }
                            let xp = &cols[pi * n..(pi + 1) * n];
                            let gc = &mut gcols[pi * n..(pi + 1) * n];
                            for jj in 0..n {
                                gwr[jj] += gy * xp[jj];
                                gc[jj] += gy * wr[jj];
                            }
                            if self.bias_enabled {
                                gfb[jr] += gy;
                            }
                        }
                    }
                }
                (
                    ConvParams::Product { w1, w2, w3, .. },
                    ConvParams::Product {
                        w1: gw1,
                        w2: gw2,
                        w3: gw3,
                        b: gb,
                    },
                ) => {
                    let a1 = &cache.a1[s];
                    let a2 = &cache.a2[s];
                    for ch in 0..out_c {
                        let r1 = &w1[ch * n..(ch + 1) * n];
                        let r2 = &w2[ch * n..(ch + 1) * n];
                        let r3 = &w3[ch * n..(ch + 1) * n];
                        let g1 = &mut gw1[ch * n..(ch + 1) * n];
                        let g2 = &mut gw2[ch * n..(ch + 1) * n];
                        let g3 = &mut gw3[ch * n..(ch + 1) * n];
                        for pi in 0..p {
                            let gy = gs[ch * p + pi];
                            if gy == 0.0 {
                                continue;
                            }
                            let xp = &cols[pi * n..(pi + 1) * n];
                            let gc = &mut gcols[pi * n..(pi + 1) * n];
                            let d1 = a1[ch * p + pi];
                            let d2 = a2[ch * p + pi];
                            for jj in 0..n {
                                g1[jj] += gy * d2 * xp[jj];
                                g2[jj] += gy * d1 * xp[jj];
                                g3[jj] += gy * xp[jj];
                                gc[jj] += gy * (d2 * r1[jj] + d1 * r2[jj] + r3[jj]);
                            }
                            if self.bias_enabled {
                                gb[ch] += gy;
                            }
                        }
                    }
                }
                _ => unreachable!("params and grads share a variant"),
            }

            col2im_accum(
                &gcols,
                c,
                h,
                w,
                &self.spec,
                oh,
                ow,
                &mut gx.data_mut()[s * c * h * w..(s + 1) * c * h * w],
            );
        }
        Ok(gx)
    }

    pub(crate) fn visit_params(&mut self, idx: usize, f: &mut ParamVisitor<'_>) {
        let bias = self.bias_enabled;
        match (&mut self.params, &mut self.grads, &mut self.mom) {
            (
                ConvParams::Linear { w, b },
                ConvParams::Linear { w: gw, b: gb },
                ConvParams::Linear { w: mw, b: mb },
            ) => {
                f(ParamSlot {
                    name: format!("conv{idx}.w"),
                    kind: ParamKind::Main,
                    data: w,
                    grad: gw,
                    mom: mw,
                });
                if bias {
                    f(ParamSlot {
                        name: format!("conv{idx}.b"),
                        kind: ParamKind::Main,
                        data: b,
                        grad: gb,
                        mom: mb,
                    });
                }
            }
            (
                ConvParams::Quad {
                    q,
                    lam,
                    w,
                    b,
                    fw,
                    fb,
                },
                ConvParams::Quad {
                    q: gq,
                    lam: glam,
                    w: gw,
                    b: gb,
                    fw: gfw,
                    fb: gfb,
                },
                ConvParams::Quad {
                    q: mq,
                    lam: mlam,
                    w: mw,
                    b: mb,
                    fw: mfw,
                    fb: mfb,
                },
            ) => {
                f(ParamSlot {
                    name: format!("conv{idx}.q"),
                    kind: ParamKind::Main,
                    data: q,
                    grad: gq,
                    mom: mq,
                });
                f(ParamSlot {
                    name: format!("conv{idx}.lam"),
                    kind: ParamKind::Lambda,
                    data: lam,
                    grad: glam,
                    mom: mlam,
                });
                f(ParamSlot {
                    name: format!("conv{idx}.w"),
                    kind: ParamKind::Main,
                    data: w,
                    grad: gw,
                    mom: mw,
                });
                if !fw.is_empty() {
                    f(ParamSlot {
                        name: format!("conv{idx}.fw"),
                        kind: ParamKind::Main,
                        data: fw,
                        grad: gfw,
                        mom: mfw,
                    });
                }
                if bias {
                    f(ParamSlot {
                        name: format!("conv{idx}.b"),
                        kind: ParamKind::Main,
                        data: b,
                        grad: gb,
                        mom: mb,
                    });
                    if !fb.is_empty() {
                        f(ParamSlot {
                            name: format!("conv{idx}.fb"),
                            kind: ParamKind::Main,
                            data: fb,
                            grad: gfb,
                            mom: mfb,
                        });
                    }
                }
            }
            (
                ConvParams::Product { w1, w2, w3, b },
                ConvParams::Product {
                    w1: g1,
                    w2: g2,
                    w3: g3,
                    b: gb,
                },
                ConvParams::Product {
                    w1: m1,
                    w2: m2,
                    w3: m3,
                    b: mb,
                },
            ) => {
                f(ParamSlot {
                    name: format!("conv{idx}.w1"),
                    kind: ParamKind::Main,
                    data: w1,
                    grad: g1,
                    mom: m1,
                });
                f(ParamSlot {
                    name: format!("conv{idx}.w2"),
                    kind: ParamKind::Main,
                    data: w2,
                    grad: g2,
                    mom: m2,
                });
                f(ParamSlot {
                    name: format!("conv{idx}.w3"),
                    kind: ParamKind::Main,
                    data: w3,
                    grad: g3,
                    mom: m3,
                });
                if bias {
                    f(ParamSlot {
                        name: format!("conv{idx}.b"),
                        kind: ParamKind::Main,
                        data: b,
                        grad: gb,
                        mom: mb,
                    });
                }
            }
            _ => unreachable!("params/grads/mom share a variant"),
        }
    }
}

fn self_fw(params: &ConvParams) -> &[f64] {
    match params {
        ConvParams::Quad { fw, .. } => fw,
        _ => unreachable!(),
    }
}

pub(crate) const BN_EPS: f64 = 1e-5;
pub(crate) const BN_MOMENTUM: f64 = 0.9;

/// Per-channel batch normalization with running averages for evaluation.
pub struct BatchNormLayer {
    pub c: usize,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub ggamma: Vec<f64>,
    pub gbeta: Vec<f64>,
    pub mgamma: Vec<f64>,
    pub mbeta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    cache: Option<BnCache>,
}

struct BnCache {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    shape: Vec<usize>,
}

impl BatchNormLayer {
    pub fn new(c: usize) -> Self {
        BatchNormLayer {
            c,
            gamma: vec![1.0; c],
            beta: vec![0.0; c],
            ggamma: vec![0.0; c],
            gbeta: vec![0.0; c],
            mgamma: vec![0.0; c],
            mbeta: vec![0.0; c],
            running_mean: vec![0.0; c],
            running_var: vec![1.0; c],
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        if x.rank() != 4 || x.shape()[1] != self.c {
            return Err(Error::Shape(format!(
                "batchnorm: input {:?}, expected [N, {}, H, W]",
                x.shape(),
                self.c
            )));
        }
        let (nb, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        if mode == Mode::Train && nb < 2 {
            return Err(Error::Domain(
                "batchnorm in training mode needs a batch of at least 2".into(),
            ));
        }
        let plane = h * w;
        let count = (nb * plane) as f64;
        let mut out = Tensor::zeros(x.shape());
        let mut xhat = vec![0.0; x.len()];
        let mut inv_stds = vec![0.0; c];
        for ch in 0..c {
            let (mean, var) = match mode {
                Mode::Train => {
                    let mut sum = 0.0;
                    for s in 0..nb {
                        let base = (s * c + ch) * plane;
                        for i in 0..plane {
                            sum += x.data()[base + i];
                        }
                    }
                    let mean = sum / count;
                    let mut varsum = 0.0;
                    for s in 0..nb {
                        let base = (s * c + ch) * plane;
                        for i in 0..plane {
                            let d = x.data()[base + i] - mean;
                            varsum += d * d;
                        }
                    }
                    let var = varsum / count;
                    self.running_mean[ch] =
                        BN_MOMENTUM * self.running_mean[ch] + (1.0 - BN_MOMENTUM) * mean;
                    self.running_var[ch] =
                        BN_MOMENTUM * self.running_var[ch] + (1.0 - BN_MOMENTUM) * var;
                    (mean, var)
                }
                Mode::Eval => (self.running_mean[ch], self.running_var[ch]),
            };
            let inv_std = 1.0 / (var + BN_EPS).sqrt();
            inv_stds[ch] = inv_std;
            for s in 0..nb {
                let base = (s * c + ch) * plane;
                for i in 0..plane {
                    let xh = (x.data()[base + i] - mean) * inv_std;
                    xhat[base + i] = xh;
                    out.data_mut()[base + i] = self.gamma[ch] * xh + self.beta[ch];
                }
            }
        }
        if mode == Mode::Train {
            self.cache = Some(BnCache {
                xhat,
                inv_std: inv_stds,
                shape: x.shape().to_vec(),
            });
        } else {
            self.cache = None;
        }
        Ok(out)
    }

    pub fn backward(&mut self, gout: &Tensor) -> Result<Tensor> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::Domain("batchnorm backward before training forward".into()))?;
        if gout.shape() != cache.shape.as_slice() {
            return Err(Error::Shape("batchnorm backward shape mismatch".into()));
        }
        let (nb, c, h, w) = (
            cache.shape[0],
            cache.shape[1],
            cache.shape[2],
            cache.shape[3],
        );
        let plane = h * w;
        let count = (nb * plane) as f64;
        let mut gx = Tensor::zeros(gout.shape());
        for ch in 0..c {
            let mut sum_g = 0.0;
            let mut sum_gx = 0.0;
            for s in 0..nb {
                let base = (s * c + ch) * plane;
                for i in 0..plane {
                    let g = gout.data()[base + i];
                    sum_g += g;
                    sum_gx += g * cache.xhat[base + i];
                }
            }
            self.gbeta[ch] += sum_g;
            self.ggamma[ch] += sum_gx;
            let scale = self.gamma[ch] * cache.inv_std[ch] / count;
            for s in 0..nb {
                let base = (s * c + ch) * plane;
                for i in 0..plane {
                    let g = gout.data()[base + i];
                    gx.data_mut()[base + i] =
                        scale * (count * g - sum_g - cache.xhat[base + i] * sum_gx);
                }
            }
        }
        Ok(gx)
    }
}

/// Elementwise rectifier.
pub struct ReluLayer {
    mask: Option<Vec<bool>>,
}

impl ReluLayer {
    pub fn new() -> Self {
        ReluLayer { mask: None }
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let mask: Vec<bool> = x.data().iter().map(|&v| v > 0.0).collect();
        let out = Tensor::from_fn(x.shape(), |i| if mask[i] { x.data()[i] } else { 0.0 })?;
        self.mask = Some(mask);
        Ok(out)
    }

    pub fn backward(&mut self, gout: &Tensor) -> Result<Tensor> {
        let mask = self
            .mask
            .take()
            .ok_or_else(|| Error::Domain("relu backward before forward".into()))?;
        if mask.len() != gout.len() {
            return Err(Error::Shape("relu backward shape mismatch".into()));
        }
        Tensor::from_fn(gout.shape(), |i| if mask[i] { gout.data()[i] } else { 0.0 })
    }
}

impl Default for ReluLayer {
    fn default() -> Self {
        Self::new()
    }
}

/// Max pooling (no padding); ties resolve to the first maximum in scan order.
pub struct MaxPoolLayer {
    pub kernel: usize,
    pub stride: usize,
    argmax: Option<(Vec<usize>, Vec<usize>, Vec<usize>)>,
}

impl MaxPoolLayer {
    pub fn new(kernel: usize, stride: usize) -> Self {
        MaxPoolLayer {
            kernel,
            stride,
            argmax: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        if x.rank() != 4 {
            return Err(Error::Shape("maxpool expects [N,C,H,W]".into()));
        }
        let (nb, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        if self.kernel > h || self.kernel > w {
            return Err(Error::Shape("maxpool kernel larger than input".into()));
        }
        let oh = (h - self.kernel) / self.stride + 1;
        let ow = (w - self.kernel) / self.stride + 1;
        let mut out = Tensor::zeros(&[nb, c, oh, ow]);
        let mut arg = vec![0usize; nb * c * oh * ow];
        for s in 0..nb {
            for ch in 0..c {
                let plane = &x.data()[(s * c + ch) * h * w..(s * c + ch + 1) * h * w];
                for oi in 0..oh {
                    for oj in 0..ow {
                        let mut best = f64::NEG_INFINITY;
                        let mut best_idx = 0;
                        for r in 0..self.kernel {
                            for t in 0..self.kernel {
                                let idx = (oi * self.stride + r) * w + oj * self.stride + t;
                                if plane[idx] > best {
                                    best = plane[idx];
                                    best_idx = idx;
                                }
                            }
                        }
                        let o = ((s * c + ch) * oh + oi) * ow + oj;
                        out.data_mut()[o] = best;
                        arg[o] = best_idx;
                    }
                }
            }
        }
        self.argmax = Some((arg, x.shape().to_vec(), out.shape().to_vec()));
        Ok(out)
    }

    pub fn backward(&mut self, gout: &Tensor) -> Result<Tensor> {
        let (arg, in_shape, out_shape) = self
            .argmax
            .take()
            .ok_or_else(|| Error::Domain("maxpool backward before forward".into()))?;
        if gout.shape() != out_shape.as_slice() {
            return Err(Error::Shape("maxpool backward shape mismatch".into()));
        }
        let (nb, c) = (in_shape[0], in_shape[1]);
        let plane_in = in_shape[2] * in_shape[3];
        let plane_out = out_shape[2] * out_shape[3];
        let mut gx = Tensor::zeros(&in_shape);
        for s in 0..nb {
            for ch in 0..c {
                for o in 0..plane_out {
                    let oidx = (s * c + ch) * plane_out + o;
                    gx.data_mut()[(s * c + ch) * plane_in + arg[oidx]] += gout.data()[oidx];
                }
            }
        }
        Ok(gx)
    }
}

/// Global average pooling: `[N,C,H,W] -> [N,C]`.
pub struct GapLayer {
    in_shape: Option<Vec<usize>>,
}

impl GapLayer {
    pub fn new() -> Self {
        GapLayer { in_shape: None }
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        if x.rank() != 4 {
            return Err(Error::Shape("gap expects [N,C,H,W]".into()));
        }
        let (nb, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let plane = (h * w) as f64;
        let mut out = Tensor::zeros(&[nb, c]);
        for s in 0..nb {
            for ch in 0..c {
                let base = (s * c + ch) * h * w;
                let mut sum = 0.0;
                for i in 0..h * w {
                    sum += x.data()[base + i];
                }
                out.data_mut()[s * c + ch] = sum / plane;
            }
        }
        self.in_shape = Some(x.shape().to_vec());
        Ok(out)
    }

    pub fn backward(&mut self, gout: &Tensor) -> Result<Tensor> {
        let in_shape = self
            .in_shape
            .take()
            .ok_or_else(|| Error::Domain("gap backward before forward".into()))?;
        let (nb, c, h, w) = (in_shape[0], in_shape[1], in_shape[2], in_shape[3]);
        if gout.shape() != [nb, c] {
            return Err(Error::Shape("gap backward shape mismatch".into()));
        }
        let plane = (h * w) as f64;
        let mut gx = Tensor::zeros(&in_shape);
        for s in 0..nb {
            for ch in 0..c {
                let g = gout.data()[s * c + ch] / plane;
                let base = (s * c + ch) * h * w;
                for i in 0..h * w {
                    gx.data_mut()[base + i] = g;
                }
            }
        }
        Ok(gx)
    }
}

impl Default for GapLayer {
    fn default() -> Self {
        Self::new()
    }
}

/// Fully connected head. Flattens map inputs.
pub struct DenseLayer {
    pub in_features: usize,
    pub out_features: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub gw: Vec<f64>,
    pub gb: Vec<f64>,
    pub mw: Vec<f64>,
    pub mb: Vec<f64>,
    cache: Option<(Vec<f64>, usize, Vec<usize>)>,
}

impl DenseLayer {
    pub fn new(in_features: usize, out_features: usize) -> Self {
        DenseLayer {
            in_features,
            out_features,
            w: vec![0.0; out_features * in_features],
            b: vec![0.0; out_features],
            gw: vec![0.0; out_features * in_features],
            gb: vec![0.0; out_features],
            mw: vec![0.0; out_features * in_features],
            mb: vec![0.0; out_features],
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let nb = x.shape()[0];
        let features: usize = x.shape()[1..].iter().product();
        if features != self.in_features {
            return Err(Error::Shape(format!(
                "dense: {} input features, expected {}",
                features, self.in_features
            )));
        }
        let mut out = Tensor::zeros(&[nb, self.out_features]);
        for s in 0..nb {
            let xs = &x.data()[s * features..(s + 1) * features];
            for o in 0..self.out_features {
                out.data_mut()[s * self.out_features + o] =
                    dot(&self.w[o * features..(o + 1) * features], xs) + self.b[o];
            }
        }
        self.cache = Some((x.data().to_vec(), nb, x.shape().to_vec()));
        Ok(out)
    }

    pub fn backward(&mut self, gout: &Tensor) -> Result<Tensor> {
        let (xdata, nb, in_shape) = self
            .cache
            .take()
            .ok_or_else(|| Error::Domain("dense backward before forward".into()))?;
        if gout.shape() != [nb, self.out_features] {
            return Err(Error::Shape("dense backward shape mismatch".into()));
        }
        let features = self.in_features;
        let mut gx = Tensor::zeros(&in_shape);
        for s in 0..nb {
            let xs = &xdata[s * features..(s + 1) * features];
            let gxs = &mut gx.data_mut()[s * features..(s + 1) * features];
            for o in 0..self.out_features {
                let gy = gout.data()[s * self.out_features + o];
                if gy == 0.0 {
                    continue;
                }
                self.gb[o] += gy;
                let wr = &self.w[o * features..(o + 1) * features];
                let gwr = &mut self.gw[o * features..(o + 1) * features];
                for j in 0..features {
                    gwr[j] += gy * xs[j];
                    gxs[j] += gy * wr[j];
                }
            }
        }
        Ok(gx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    fn spec(ic: usize, oc: usize, k: usize, stride: usize, pad: usize, kind: NeuronKind) -> ConvSpec {
        ConvSpec {
            in_channels: ic,
            out_channels: oc,
            kernel: (k, k),
            stride,
            pad,
            neuron_kind: Some(kind),
        }
    }

    #[test]
    fn im2col_single_patch_is_flattened_input() {
        let x = Tensor::from_fn(&[1, 3, 3], |i| i as f64).unwrap();
        let s = spec(1, 1, 3, 1, 0, NeuronKind::Linear);
        let cols = im2col(&x, &s).unwrap();
        assert_eq!(cols.shape(), &[9, 1]);
        for i in 0..9 {
            assert_eq!(cols.get2(i, 0), i as f64);
        }
    }

    #[test]
    fn im2col_zero_input_zero_patches() {
        let x = Tensor::zeros(&[2, 4, 4]);
        let s = spec(2, 1, 3, 1, 1, NeuronKind::Linear);
        let cols = im2col(&x, &s).unwrap();
        assert!(cols.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn im2col_quadrants() {
        // 1x4x4 input, 2x2 kernel, stride 2: four quadrant patches.
        let x = Tensor::from_fn(&[1, 4, 4], |i| i as f64).unwrap();
        let s = spec(1, 1, 2, 2, 0, NeuronKind::Linear);
        let cols = im2col(&x, &s).unwrap();
        assert_eq!(cols.shape(), &[4, 4]);
        let expect = [
            [0.0, 1.0, 4.0, 5.0],
            [2.0, 3.0, 6.0, 7.0],
            [8.0, 9.0, 12.0, 13.0],
            [10.0, 11.0, 14.0, 15.0],
        ];
        for (p, patch) in expect.iter().enumerate() {
            for (j, v) in patch.iter().enumerate() {
                assert_eq!(cols.get2(j, p), *v);
            }
        }
    }

    #[test]
    fn qconv_degenerate_spatial_equals_quad_forward() {
        // 1x1 spatial input: the conv layer is a dense quadratic neuron.
        let mut rng = Rng::new(9);
        let n = 5;
        let k = 2;
        let s = ConvSpec {
            in_channels: n,
            out_channels: k + 1,
            kernel: (1, 1),
            stride: 1,
            pad: 0,
            neuron_kind: Some(NeuronKind::Quadratic { k }),
        };
        let mut layer = ConvLayer::new(s, true).unwrap();
        let (q, lam, w, b): (Vec<f64>, Vec<f64>, Vec<f64>, f64);
        {
            let ConvParams::Quad {
                q: ql,
                lam: ll,
                w: wl,
                b: bl,
                ..
            } = &mut layer.params
            else {
                unreachable!()
            };
            for v in ql.iter_mut() {
                *v = rng.range(-1.0, 1.0);
            }
            for v in ll.iter_mut() {
                *v = rng.range(-1.0, 1.0);
            }
            for v in wl.iter_mut() {
                *v = rng.range(-1.0, 1.0);
            }
            bl[0] = 0.3;
            q = ql.clone();
            lam = ll.clone();
            w = wl.clone();
            b = bl[0];
        }
        let x: Vec<f64> = (0..n).map(|_| rng.range(-1.0, 1.0)).collect();
        let xt = Tensor::from_vec(&[1, n, 1, 1], x.clone()).unwrap();
        let out = layer.forward(&xt).unwrap();

        // Reference neuron: qk is n-by-k; layer rows are direction-major.
        let mut qk = Tensor::zeros(&[n, k]);
        for i in 0..k {
            for j in 0..n {
                qk.set2(j, i, q[i * n + j]);
            }
        }
        let p = crate::neurons::QuadNeuronParams {
            qk,
            lam: lam.clone(),
            w: w.clone(),
            b,
            k,
        };
        let (y, f) = crate::neurons::quad_forward(&p, &x).unwrap();
        assert!((out.data()[0] - y).abs() <= 1e-12 * y.abs().max(1.0));
        for i in 0..k {
            assert!((out.data()[1 + i] - f[i]).abs() <= 1e-12);
        }
    }

    #[test]
    fn qconv_zero_lambda_matches_linear_conv_bitwise() {
        let mut rng = Rng::new(10);
        let k = 3;
        let sq = spec(2, 8, 3, 1, 1, NeuronKind::Quadratic { k });
        let sl = spec(2, 8, 3, 1, 1, NeuronKind::Linear);
        let mut quad = ConvLayer::new(sq, false).unwrap();
        let mut lin = ConvLayer::new(sl, false).unwrap();
        let n = quad.n;
        // Fill the quadratic layer channel-major and mirror into the linear
        // layer row by row.
        {
            let ConvParams::Quad { q, w, .. } = &mut quad.params else {
                unreachable!()
            };
            let ConvParams::Linear { w: lw, .. } = &mut lin.params else {
                unreachable!()
            };
            for j in 0..2usize {
                for jj in 0..n {
                    let v = rng.range(-1.0, 1.0);
                    w[j * n + jj] = v;
                    lw[(j * (k + 1)) * n + jj] = v;
                }
                for i in 0..k {
                    for jj in 0..n {
                        let v = rng.range(-1.0, 1.0);
                        q[(j * k + i) * n + jj] = v;
                        lw[(j * (k + 1) + 1 + i) * n + jj] = v;
                    }
                }
            }
        }
        let x = Tensor::from_fn(&[2, 2, 5, 5], |_| rng.range(-1.0, 1.0)).unwrap();
        let a = quad.forward(&x).unwrap();
        let b = lin.forward(&x).unwrap();
        assert_eq!(a.data(), b.data());
    }

    fn fill_conv(layer: &mut ConvLayer, rng: &mut Rng, scale: f64) {
        let visit = |v: &mut Vec<f64>, rng: &mut Rng, s: f64| {
            for x in v.iter_mut() {
                *x = rng.range(-s, s);
            }
        };
        match &mut layer.params {
            ConvParams::Linear { w, b } => {
                visit(w, rng, scale);
                visit(b, rng, scale);
            }
            ConvParams::Quad {
                q,
                lam,
                w,
                b,
                fw,
                fb,
            } => {
                visit(q, rng, scale);
                visit(lam, rng, scale);
                visit(w, rng, scale);
                visit(b, rng, scale);
                visit(fw, rng, scale);
                visit(fb, rng, scale);
            }
            ConvParams::Product { w1, w2, w3, b } => {
                visit(w1, rng, scale);
                visit(w2, rng, scale);
                visit(w3, rng, scale);
                visit(b, rng, scale);
            }
        }
    }

    /// Scalar objective sum(out * weights) for finite-difference checks.
    fn conv_objective(layer: &mut ConvLayer, x: &Tensor, obj_w: &[f64]) -> f64 {
        let out = layer.forward(x).unwrap();
        out.data().iter().zip(obj_w).map(|(a, b)| a * b).sum()
    }

    fn conv_param_vecs(p: &mut ConvParams) -> Vec<&mut Vec<f64>> {
        match p {
            ConvParams::Linear { w, b } => vec![w, b],
            ConvParams::Quad {
                q,
                lam,
                w,
                b,
                fw,
                fb,
            } => vec![q, lam, w, b, fw, fb],
            ConvParams::Product { w1, w2, w3, b } => vec![w1, w2, w3, b],
        }
    }

    fn conv_fd_check(mut layer: ConvLayer, x: &Tensor, tol: f64) {
        let mut rng = Rng::new(1234);
        let out = layer.forward(x).unwrap();
        let obj_w: Vec<f64> = (0..out.len()).map(|_| rng.range(-1.0, 1.0)).collect();
        let gout = Tensor::from_vec(out.shape(), obj_w.clone()).unwrap();
        // Analytic: one forward already cached; backward accumulates.
        let gx = layer.backward(&gout).unwrap();

        let eps = 1e-5;
        // Parameter gradients.
        let analytic: Vec<Vec<f64>> = conv_param_vecs(&mut layer.grads)
            .into_iter()
            .map(|v| v.clone())
            .collect();
        let nvecs = analytic.len();
        for vi in 0..nvecs {
            let len = analytic[vi].len();
            for idx in 0..len.min(40) {
                let orig = conv_param_vecs(&mut layer.params)[vi][idx];
                conv_param_vecs(&mut layer.params)[vi][idx] = orig + eps;
                let up = conv_objective(&mut layer, x, &obj_w);
                conv_param_vecs(&mut layer.params)[vi][idx] = orig - eps;
                let dn = conv_objective(&mut layer, x, &obj_w);
                conv_param_vecs(&mut layer.params)[vi][idx] = orig;
                let num = (up - dn) / (2.0 * eps);
                let a = analytic[vi][idx];
                let rel = (a - num).abs() / a.abs().max(num.abs()).max(1e-6);
                assert!(rel <= tol, "param vec {vi} idx {idx}: {a} vs {num}");
            }
        }
        // Input gradients.
        let mut xv = x.clone();
        for idx in 0..x.len().min(40) {
            let orig = xv.data()[idx];
            xv.data_mut()[idx] = orig + eps;
            let up = conv_objective(&mut layer, &xv, &obj_w);
            xv.data_mut()[idx] = orig - eps;
            let dn = conv_objective(&mut layer, &xv, &obj_w);
            xv.data_mut()[idx] = orig;
            let num = (up - dn) / (2.0 * eps);
            let a = gx.data()[idx];
            let rel = (a - num).abs() / a.abs().max(num.abs()).max(1e-6);
            assert!(rel <= tol, "input idx {idx}: {a} vs {num}");
        }
    }

    #[test]
    fn qconv_backward_finite_difference() {
        let mut rng = Rng::new(42);
        let s = spec(2, 6, 3, 1, 1, NeuronKind::Quadratic { k: 2 });
        let mut layer = ConvLayer::new(s, true).unwrap();
        fill_conv(&mut layer, &mut rng, 0.7);
        let x = Tensor::from_fn(&[2, 2, 4, 4], |_| rng.range(-1.0, 1.0)).unwrap();
        conv_fd_check(layer, &x, 1e-5);
    }

    #[test]
    fn linear_conv_backward_finite_difference() {
        let mut rng = Rng::new(43);
        let s = spec(2, 4, 3, 2, 1, NeuronKind::Linear);
        let mut layer = ConvLayer::new(s, true).unwrap();
        fill_conv(&mut layer, &mut rng, 0.7);
        let x = Tensor::from_fn(&[2, 2, 5, 5], |_| rng.range(-1.0, 1.0)).unwrap();
        conv_fd_check(layer, &x, 1e-6);
    }

    #[test]
    fn product_conv_backward_finite_difference() {
        let mut rng = Rng::new(44);
        let s = spec(1, 3, 3, 1, 0, NeuronKind::Product);
        let mut layer = ConvLayer::new(s, true).unwrap();
        fill_conv(&mut layer, &mut rng, 0.7);
        let x = Tensor::from_fn(&[2, 1, 4, 4], |_| rng.range(-1.0, 1.0)).unwrap();
        conv_fd_check(layer, &x, 1e-5);
    }

    #[test]
    fn qconv_zero_upstream_zero_param_grads() {
        let mut rng = Rng::new(45);
        let s = spec(1, 4, 3, 1, 1, NeuronKind::Quadratic { k: 3 });
        let mut layer = ConvLayer::new(s, true).unwrap();
        fill_conv(&mut layer, &mut rng, 0.7);
        let x = Tensor::from_fn(&[1, 1, 4, 4], |_| rng.range(-1.0, 1.0)).unwrap();
        let out = layer.forward(&x).unwrap();
        let gout = Tensor::zeros(out.shape());
        let gx = layer.backward(&gout).unwrap();
        assert!(gx.data().iter().all(|&v| v == 0.0));
        for v in conv_param_vecs(&mut layer.grads) {
            assert!(v.iter().all(|&g| g == 0.0));
        }
    }

    #[test]
    fn relu_cases() {
        let mut relu = ReluLayer::new();
        let x = Tensor::from_vec(&[1, 3], vec![-1.0, 0.0, 2.0]).unwrap();
        let y = relu.forward(&x).unwrap();
        assert_eq!(y.data(), &[0.0, 0.0, 2.0]);
        let g = relu
            .backward(&Tensor::from_vec(&[1, 3], vec![5.0, 5.0, 5.0]).unwrap())
            .unwrap();
        assert_eq!(g.data(), &[0.0, 0.0, 5.0]);
    }

    #[test]
    fn batchnorm_constant_channel_maps_to_beta() {
        let mut bn = BatchNormLayer::new(1);
        bn.beta[0] = 0.25;
        let x = Tensor::from_vec(&[2, 1, 1, 2], vec![3.0, 3.0, 3.0, 3.0]).unwrap();
        let y = bn.forward(&x, Mode::Train).unwrap();
        for &v in y.data() {
            assert!((v - 0.25).abs() <= 1e-9);
        }
    }

    #[test]
    fn batchnorm_rejects_tiny_batch_in_training() {
        let mut bn = BatchNormLayer::new(1);
        let x = Tensor::zeros(&[1, 1, 2, 2]);
        assert!(matches!(
            bn.forward(&x, Mode::Train),
            Err(Error::Domain(_))
        ));
        // Eval mode is fine.
        assert!(bn.forward(&x, Mode::Eval).is_ok());
    }

    #[test]
    fn batchnorm_backward_finite_difference() {
        let mut rng = Rng::new(46);
        let x = Tensor::from_fn(&[3, 2, 2, 2], |_| rng.range(-1.0, 1.0)).unwrap();
        let mut bn = BatchNormLayer::new(2);
        bn.gamma = vec![1.3, 0.8];
        bn.beta = vec![0.1, -0.2];
        let out = bn.forward(&x, Mode::Train).unwrap();
        let obj_w: Vec<f64> = (0..out.len()).map(|_| rng.range(-1.0, 1.0)).collect();
        let gout = Tensor::from_vec(out.shape(), obj_w.clone()).unwrap();
        let gx = bn.backward(&gout).unwrap();
        let eps = 1e-6;
        for idx in 0..x.len() {
            let mut bn2 = BatchNormLayer::new(2);
            bn2.gamma = bn.gamma.clone();
            bn2.beta = bn.beta.clone();
            let mut xp = x.clone();
            xp.data_mut()[idx] += eps;
            let up: f64 = bn2
                .forward(&xp, Mode::Train)
                .unwrap()
                .data()
                .iter()
                .zip(&obj_w)
                .map(|(a, b)| a * b)
                .sum();
            let mut xm = x.clone();
            xm.data_mut()[idx] -= eps;
            let dn: f64 = bn2
                .forward(&xm, Mode::Train)
                .unwrap()
                .data()
                .iter()
                .zip(&obj_w)
                .map(|(a, b)| a * b)
                .sum();
            let num = (up - dn) / (2.0 * eps);
            let a = gx.data()[idx];
            let rel = (a - num).abs() / a.abs().max(num.abs()).max(1e-4);
            assert!(rel <= 1e-4, "idx {idx}: {a} vs {num}");
        }
    }

    #[test]
    fn gap_and_dense_gradcheck() {
        let mut rng = Rng::new(47);
        let x = Tensor::from_fn(&[2, 3, 2, 2], |_| rng.range(-1.0, 1.0)).unwrap();
        let mut gap = GapLayer::new();
        let mut dense = DenseLayer::new(3, 4);
        for v in dense.w.iter_mut() {
            *v = rng.range(-1.0, 1.0);
        }
        for v in dense.b.iter_mut() {
            *v = rng.range(-1.0, 1.0);
        }
        let out = dense.forward(&gap.forward(&x).unwrap()).unwrap();
        let obj_w: Vec<f64> = (0..out.len()).map(|_| rng.range(-1.0, 1.0)).collect();
        let gout = Tensor::from_vec(out.shape(), obj_w.clone()).unwrap();
        let gmid = dense.backward(&gout).unwrap();
        let gx = gap.backward(&gmid).unwrap();
        let eps = 1e-6;
        let run = |dense: &mut DenseLayer, x: &Tensor, obj_w: &[f64]| -> f64 {
            let mut g = GapLayer::new();
            dense
                .forward(&g.forward(x).unwrap())
                .unwrap()
                .data()
                .iter()
                .zip(obj_w)
                .map(|(a, b)| a * b)
                .sum()
        };
        for idx in 0..dense.w.len() {
            let orig = dense.w[idx];
            dense.w[idx] = orig + eps;
            let up = run(&mut dense, &x, &obj_w);
            dense.w[idx] = orig - eps;
            let dn = run(&mut dense, &x, &obj_w);
            dense.w[idx] = orig;
            let num = (up - dn) / (2.0 * eps);
            let a = dense.gw[idx];
            let rel = (a - num).abs() / a.abs().max(num.abs()).max(1e-6);
            assert!(rel <= 1e-6, "dense w {idx}: {a} vs {num}");
        }
        for idx in 0..x.len() {
            let mut xp = x.clone();
            xp.data_mut()[idx] += eps;
            let up = run(&mut dense, &xp, &obj_w);
            let mut xm = x.clone();
            xm.data_mut()[idx] -= eps;
            let dn = run(&mut dense, &xm, &obj_w);
            let num = (up - dn) / (2.0 * eps);
            let a = gx.data()[idx];
            let rel = (a - num).abs() / a.abs().max(num.abs()).max(1e-6);
            assert!(rel <= 1e-6, "input {idx}: {a} vs {num}");
        }
    }

    #[test]
    fn maxpool_forward_backward() {
        let x = Tensor::from_vec(
            &[1, 1, 2, 2],
            vec![1.0, 4.0, 2.0, 3.0],
        )
        .unwrap();
        let mut pool = MaxPoolLayer::new(2, 2);
        let y = pool.forward(&x).unwrap();
        assert_eq!(y.data(), &[4.0]);
        let g = pool
            .backward(&Tensor::from_vec(&[1, 1, 1, 1], vec![2.5]).unwrap())
            .unwrap();
        assert_eq!(g.data(), &[0.0, 2.5, 0.0, 0.0]);
    }
}
