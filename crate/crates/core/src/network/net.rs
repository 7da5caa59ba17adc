//! Network container: builds an [`ArchDescriptor`] into layers and runs
//! forward/backward passes, including identity-pad residual shortcuts.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::network::arch::{ArchDescriptor, LayerSpec, NeuronKind, ShapePoint};
use crate::network::layers::{
    BatchNormLayer, ConvLayer, DenseLayer, GapLayer, MaxPoolLayer, Mode, ParamSlot, ParamVisitor,
    ReluLayer,
};
use crate::numerics::{Rng, Tensor};

pub enum Layer {
    Conv(ConvLayer),
    BatchNorm(BatchNormLayer),
    Relu(ReluLayer),
    MaxPool(MaxPoolLayer),
    Gap(GapLayer),
    Dense(DenseLayer),
    Save {
        name: String,
    },
    ResidualAdd {
        from: String,
        /// (source shape, output shape) recorded during forward.
        shapes: Option<(Vec<usize>, Vec<usize>)>,
    },
}

/// A built network. Layer order mirrors the descriptor one-to-one.
pub struct Network {
    pub arch: ArchDescriptor,
    pub layers: Vec<Layer>,
}

impl Network {
    /// Instantiates layers with zero parameters. Conv entries must already be
    /// resolved to a neuron kind (see [`ArchDescriptor::resolved`]).
    pub fn new(arch: ArchDescriptor) -> Result<Network> {
        let shapes = arch.trace_shapes()?;
        let (c0, h0, w0) = arch.input;
        let mut layers = Vec::with_capacity(arch.layers.len());
        for (idx, spec) in arch.layers.iter().enumerate() {
            // Shape entering this layer.
            let before = if idx == 0 {
                ShapePoint::Map {
                    c: c0,
                    h: h0,
                    w: w0,
                }
            } else {
                shapes[idx - 1]
            };
            let layer = match spec {
                LayerSpec::Conv(cs) => {
                    if cs.neuron_kind.is_none() {
                        return Err(Error::Build(format!(
                            "layer {idx}: conv neuron kind unresolved"
                        )));
                    }
                    let bias = !matches!(arch.layers.get(idx + 1), Some(LayerSpec::BatchNorm));
                    Layer::Conv(ConvLayer::new(cs.clone(), bias)?)
                }
                LayerSpec::BatchNorm => {
                    let ShapePoint::Map { c, .. } = before else {
                        return Err(Error::Build(format!("layer {idx}: batchnorm after flatten")));
                    };
                    Layer::BatchNorm(BatchNormLayer::new(c))
                }
                LayerSpec::Relu => Layer::Relu(ReluLayer::new()),
                LayerSpec::MaxPool { kernel, stride } => {
                    Layer::MaxPool(MaxPoolLayer::new(*kernel, *stride))
                }
                LayerSpec::GlobalAvgPool => Layer::Gap(GapLayer::new()),
                LayerSpec::Dense { out } => {
                    let features = match before {
                        ShapePoint::Flat { features } => features,
                        ShapePoint::Map { c, h, w } => c * h * w,
                    };
                    Layer::Dense(DenseLayer::new(features, *out))
                }
                LayerSpec::Save { name } => Layer::Save { name: name.clone() },
                LayerSpec::ResidualAdd { from } => Layer::ResidualAdd {
                    from: from.clone(),
                    shapes: None,
                },
            };
            layers.push(layer);
        }
        Ok(Network { arch, layers })
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let n = self.layers.len();
        self.forward_until(x, mode, n)
    }

    /// Runs the first `until` layers and returns that activation. `until`
    /// equal to the layer count gives the full forward pass.
    pub fn forward_until(&mut self, x: &Tensor, mode: Mode, until: usize) -> Result<Tensor> {
        if until > self.layers.len() {
            return Err(Error::Domain(format!(
                "layer index {until} out of range (network has {})",
                self.layers.len()
            )));
        }
        let mut saved: BTreeMap<String, Tensor> = BTreeMap::new();
        let mut cur = x.clone();
        for layer in self.layers.iter_mut().take(until) {
            cur = match layer {
                Layer::Conv(l) => l.forward(&cur)?,
                Layer::BatchNorm(l) => l.forward(&cur, mode)?,
                Layer::Relu(l) => l.forward(&cur)?,
                Layer::MaxPool(l) => l.forward(&cur)?,
                Layer::Gap(l) => l.forward(&cur)?,
                Layer::Dense(l) => l.forward(&cur)?,
                Layer::Save { name } => {
                    saved.insert(name.clone(), cur.clone());
                    cur
                }
                Layer::ResidualAdd { from, shapes } => {
                    let src = saved.get(from).ok_or_else(|| {
                        Error::Build(format!("residual source '{from}' not saved"))
                    })?;
                    let out = residual_add(&cur, src)?;
                    *shapes = Some((src.shape().to_vec(), cur.shape().to_vec()));
                    out
                }
            };
        }
        if !cur.data().iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("non-finite activation in forward".into()));
        }
        Ok(cur)
    }

    /// Backpropagates from the loss gradient on the final output, adding into
    /// the layers' gradient buffers. Returns the input gradient.
    pub fn backward(&mut self, gout: &Tensor) -> Result<Tensor> {
        let mut pending: BTreeMap<String, Tensor> = BTreeMap::new();
        let mut cur = gout.clone();
        for layer in self.layers.iter_mut().rev() {
            cur = match layer {
                Layer::Conv(l) => l.backward(&cur)?,
                Layer::BatchNorm(l) => l.backward(&cur)?,
                Layer::Relu(l) => l.backward(&cur)?,
                Layer::MaxPool(l) => l.backward(&cur)?,
                Layer::Gap(l) => l.backward(&cur)?,
                Layer::Dense(l) => l.backward(&cur)?,
                Layer::Save { name } => match pending.remove(name) {
                    Some(g) => cur.add(&g)?,
                    None => cur,
                },
                Layer::ResidualAdd { from, shapes } => {
                    let (src_shape, out_shape) = shapes.take().ok_or_else(|| {
                        Error::Domain("residual backward before forward".into())
                    })?;
                    if cur.shape() != out_shape.as_slice() {
                        return Err(Error::Shape("residual backward shape mismatch".into()));
                    }
                    let gsrc = residual_backward(&cur, &src_shape)?;
                    match pending.remove(from.as_str()) {
                        Some(acc) => pending.insert(from.clone(), acc.add(&gsrc)?),
                        None => pending.insert(from.clone(), gsrc),
                    };
                    cur
                }
            };
        }
        Ok(cur)
    }

    /// Visits every trainable parameter in a fixed layer order.
    pub fn visit_params(&mut self, f: &mut ParamVisitor<'_>) {
        for (idx, layer) in self.layers.iter_mut().enumerate() {
            match layer {
                Layer::Conv(l) => l.visit_params(idx, f),
                Layer::BatchNorm(l) => {
                    f(ParamSlot {
                        name: format!("bn{idx}.gamma"),
                        kind: crate::network::layers::ParamKind::Main,
                        data: &mut l.gamma,
                        grad: &mut l.ggamma,
                        mom: &mut l.mgamma,
                    });
                    f(ParamSlot {
                        name: format!("bn{idx}.beta"),
                        kind: crate::network::layers::ParamKind::Main,
                        data: &mut l.beta,
                        grad: &mut l.gbeta,
                        mom: &mut l.mbeta,
                    });
                }
                Layer::Dense(l) => {
                    f(ParamSlot {
                        name: format!("dense{idx}.w"),
                        kind: crate::network::layers::ParamKind::Main,
                        data: &mut l.w,
                        grad: &mut l.gw,
                        mom: &mut l.mw,
                    });
                    f(ParamSlot {
                        name: format!("dense{idx}.b"),
                        kind: crate::network::layers::ParamKind::Main,
                        data: &mut l.b,
                        grad: &mut l.gb,
                        mom: &mut l.mb,
                    });
                }
                _ => {}
            }
        }
    }

    pub fn zero_grads(&mut self) {
        self.visit_params(&mut |slot| {
            for g in slot.grad.iter_mut() {
                *g = 0.0;
            }
        });
    }

    /// Total trainable parameter count.
    pub fn param_count(&mut self) -> usize {
        let mut total = 0;
        self.visit_params(&mut |slot| total += slot.data.len());
        total
    }
}

/// Builds and initializes a network: every unpinned conv entry becomes a
/// rank-`k` quadratic layer.
pub fn build(arch: &ArchDescriptor, k: usize, rng: &mut Rng) -> Result<Network> {
    build_with_kind(arch, NeuronKind::Quadratic { k }, rng)
}

/// Builds and initializes a network with an explicit default neuron kind.
pub fn build_with_kind(
    arch: &ArchDescriptor,
    kind: NeuronKind,
    rng: &mut Rng,
) -> Result<Network> {
    let mut net = Network::new(arch.resolved(kind))?;
    crate::training::init_params(&mut net, rng);
    Ok(net)
}

/// y = x + shortcut(src). A smaller source map is strided-subsampled to the
/// target spatial size and zero-padded along channels.
fn residual_add(x: &Tensor, src: &Tensor) -> Result<Tensor> {
    if x.rank() != 4 || src.rank() != 4 {
        return Err(Error::Shape("residual expects [N,C,H,W] operands".into()));
    }
    let (nb, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (sn, sc, sh, sw) = (
        src.shape()[0],
        src.shape()[1],
        src.shape()[2],
        src.shape()[3],
    );
    let f = sh.div_ceil(h);
    if sn != nb || sc > c || f != sw.div_ceil(w) || (h - 1) * f >= sh || (w - 1) * f >= sw {
        return Err(Error::Shape(format!(
            "residual source {:?} incompatible with {:?}",
            src.shape(),
            x.shape()
        )));
    }
    let mut out = x.clone();
    for s in 0..nb {
        for ch in 0..sc {
            for i in 0..h {
                for j in 0..w {
                    let v = src.data()[((s * sc + ch) * sh + i * f) * sw + j * f];
                    out.data_mut()[((s * c + ch) * h + i) * w + j] += v;
                }
            }
        }
    }
    Ok(out)
}

/// Gradient of `residual_add` with respect to the source map.
fn residual_backward(gout: &Tensor, src_shape: &[usize]) -> Result<Tensor> {
    let (nb, c, h, w) = (
        gout.shape()[0],
        gout.shape()[1],
        gout.shape()[2],
        gout.shape()[3],
    );
    let (sc, sh, sw) = (src_shape[1], src_shape[2], src_shape[3]);
    let f = sh.div_ceil(h);
    let mut gsrc = Tensor::zeros(src_shape);
    for s in 0..nb {
        for ch in 0..sc {
            for i in 0..h {
                for j in 0..w {
                    gsrc.data_mut()[((s * sc + ch) * sh + i * f) * sw + j * f] =
                        gout.data()[((s * c + ch) * h + i) * w + j];
                }
            }
        }
    }
    Ok(gsrc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::arch::ConvSpec;

    fn conv(ic: usize, oc: usize, k: usize, stride: usize, pad: usize) -> LayerSpec {
        LayerSpec::Conv(ConvSpec {
            in_channels: ic,
            out_channels: oc,
            kernel: (k, k),
            stride,
            pad,
            neuron_kind: None,
        })
    }

    fn toy_arch() -> ArchDescriptor {
        ArchDescriptor {
            input: (3, 8, 8),
            layers: vec![
                conv(3, 8, 3, 1, 1),
                LayerSpec::Relu,
                LayerSpec::GlobalAvgPool,
                LayerSpec::Dense { out: 4 },
            ],
        }
    }

    #[test]
    fn toy_network_builds_and_shapes_check() {
        let mut rng = Rng::new(1);
        let mut net = build(&toy_arch(), 3, &mut rng).unwrap();
        let x = Tensor::from_fn(&[2, 3, 8, 8], |i| (i % 7) as f64 * 0.1).unwrap();
        let out = net.forward(&x, Mode::Eval).unwrap();
        assert_eq!(out.shape(), &[2, 4]);
    }

    #[test]
    fn mismatched_residual_fails_to_build() {
        let arch = ArchDescriptor {
            input: (3, 8, 8),
            layers: vec![
                conv(3, 8, 3, 1, 1),
                LayerSpec::Save { name: "a".into() },
                conv(8, 6, 3, 1, 1),
                // 6 < 8 channels: pad shortcut cannot shrink channels.
                LayerSpec::ResidualAdd { from: "a".into() },
            ],
        };
        assert!(Network::new(arch.resolved(NeuronKind::Linear)).is_err());
    }

    #[test]
    fn channel_conservation_across_widths_and_ranks() {
        for out_c in [4usize, 7, 16, 33] {
            for k in [1usize, 2, 3, 9] {
                if out_c < k + 1 {
                    continue;
                }
                let spec = ConvSpec {
                    in_channels: 2,
                    out_channels: out_c,
                    kernel: (3, 3),
                    stride: 1,
                    pad: 1,
                    neuron_kind: Some(NeuronKind::Quadratic { k }),
                };
                let layer = ConvLayer::new(spec, true).unwrap();
                assert_eq!(layer.m * (k + 1) + layer.r, out_c);
            }
        }
    }

    #[test]
    fn zero_lambda_network_matches_linear_network_bitwise() {
        // Same seed, same draw order: the quadratic network at init must
        // produce the exact logits of the width-matched linear network.
        let arch = ArchDescriptor {
            input: (3, 8, 8),
            layers: vec![
                conv(3, 8, 3, 1, 1),
                LayerSpec::BatchNorm,
                LayerSpec::Relu,
                LayerSpec::Save { name: "s".into() },
                conv(8, 8, 3, 1, 1),
                LayerSpec::ResidualAdd { from: "s".into() },
                LayerSpec::Relu,
                LayerSpec::GlobalAvgPool,
                LayerSpec::Dense { out: 5 },
            ],
        };
        let mut quad = build(&arch, 3, &mut Rng::new(77)).unwrap();
        let mut lin = build_with_kind(&arch, NeuronKind::Linear, &mut Rng::new(77)).unwrap();
        let mut rng = Rng::new(5);
        for _ in 0..5 {
            let x = Tensor::from_fn(&[2, 3, 8, 8], |_| rng.range(-1.0, 1.0)).unwrap();
            let a = quad.forward(&x, Mode::Eval).unwrap();
            let b = lin.forward(&x, Mode::Eval).unwrap();
            assert_eq!(a.data(), b.data());
        }
    }

    #[test]
    fn residual_identity_roundtrip() {
        let x = Tensor::from_fn(&[1, 2, 4, 4], |i| i as f64).unwrap();
        let y = residual_add(&x, &x).unwrap();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert_eq!(*a, 2.0 * b);
        }
        let g = residual_backward(&y, x.shape()).unwrap();
        assert_eq!(g.data(), y.data());
    }

    #[test]
    fn residual_pad_shortcut_subsamples() {
        // Source 1x8x8, target 2x4x4: stride-2 subsample into channel 0.
        let src = Tensor::from_fn(&[1, 1, 8, 8], |i| i as f64).unwrap();
        let x = Tensor::zeros(&[1, 2, 4, 4]);
        let y = residual_add(&x, &src).unwrap();
        assert_eq!(y.data()[0], 0.0); // src[0][0]
        assert_eq!(y.data()[1], 2.0); // src[0][2]
        assert_eq!(y.data()[4], 16.0); // src[2][0]
        // Padded channel stays zero.
        assert!(y.data()[16..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn translation_consistency_in_interior() {
        // Shifting the input by the stride shifts the output by one position
        // away from the padding boundary.
        let mut rng = Rng::new(11);
        let spec = ConvSpec {
            in_channels: 1,
            out_channels: 4,
            kernel: (3, 3),
            stride: 1,
            pad: 1,
            neuron_kind: Some(NeuronKind::Quadratic { k: 3 }),
        };
        let mut layer = ConvLayer::new(spec, true).unwrap();
        // Random parameters.
        let mut net_fill = |l: &mut ConvLayer| {
            l.visit_params(0, &mut |slot| {
                for v in slot.data.iter_mut() {
                    *v = rng.range(-1.0, 1.0);
                }
            });
        };
        net_fill(&mut layer);
        let base = Tensor::from_fn(&[1, 1, 8, 8], |_| rng.range(-1.0, 1.0)).unwrap();
        // Shift right by one column.
        let mut shifted = Tensor::zeros(&[1, 1, 8, 8]);
        for i in 0..8 {
            for j in 1..8 {
                shifted.data_mut()[i * 8 + j] = base.data()[i * 8 + j - 1];
            }
        }
        let a = layer.forward(&base).unwrap();
        let b = layer.forward(&shifted).unwrap();
        for ch in 0..4 {
            for i in 1..7 {
                for j in 1..6 {
                    let va = a.data()[(ch * 8 + i) * 8 + j];
                    let vb = b.data()[(ch * 8 + i) * 8 + j + 1];
                    assert!(
                        (va - vb).abs() <= 1e-9 * va.abs().max(1.0),
                        "channel {ch} at ({i},{j})"
                    );
                }
            }
        }
    }

    #[test]
    fn end_to_end_gradcheck_toy_residual_net() {
        // Three conv layers with a residual link; finite differences on a
        // subsample of parameters.
        let arch = ArchDescriptor {
            input: (2, 6, 6),
            layers: vec![
                conv(2, 4, 3, 1, 1),
                LayerSpec::Relu,
                LayerSpec::Save { name: "s".into() },
                conv(4, 4, 3, 1, 1),
                LayerSpec::ResidualAdd { from: "s".into() },
                LayerSpec::GlobalAvgPool,
                LayerSpec::Dense { out: 3 },
            ],
        };
        let mut net = build(&arch, 3, &mut Rng::new(3)).unwrap();
        // Perturb lambdas so the quadratic path is active.
        net.visit_params(&mut |slot| {
            if slot.kind == crate::network::layers::ParamKind::Lambda {
                for (i, v) in slot.data.iter_mut().enumerate() {
                    *v = 0.1 * (i as f64 + 1.0);
                }
            }
        });
        let mut rng = Rng::new(8);
        let x = Tensor::from_fn(&[2, 2, 6, 6], |_| rng.range(-1.0, 1.0)).unwrap();
        let obj: Vec<f64> = (0..6).map(|_| rng.range(-1.0, 1.0)).collect();
        let out = net.forward(&x, Mode::Eval).unwrap();
        let gout = Tensor::from_vec(out.shape(), obj.clone()).unwrap();
        net.zero_grads();
        net.backward(&gout).unwrap();
        // Snapshot analytic grads.
        let mut grads: Vec<Vec<f64>> = Vec::new();
        net.visit_params(&mut |slot| grads.push(slot.grad.clone()));
        let eps = 1e-5;
        let nvec = grads.len();
        for vi in 0..nvec {
            for idx in 0..grads[vi].len().min(6) {
                let set = |delta: f64, net: &mut Network| {
                    let mut count = 0;
                    net.visit_params(&mut |slot| {
                        if count == vi {
                            slot.data[idx] += delta;
                        }
                        count += 1;
                    });
                };
                set(eps, &mut net);
                let up: f64 = net
                    .forward(&x, Mode::Eval)
                    .unwrap()
                    .data()
                    .iter()
                    .zip(&obj)
                    .map(|(a, b)| a * b)
                    .sum();
                set(-2.0 * eps, &mut net);
                let dn: f64 = net
                    .forward(&x, Mode::Eval)
                    .unwrap()
                    .data()
                    .iter()
                    .zip(&obj)
                    .map(|(a, b)| a * b)
                    .sum();
                set(eps, &mut net);
                let num = (up - dn) / (2.0 * eps);
                let a = grads[vi][idx];
                let rel = (a - num).abs() / a.abs().max(num.abs()).max(1e-4);
                assert!(rel <= 1e-4, "vec {vi} idx {idx}: {a} vs {num}");
            }
        }
    }
}
