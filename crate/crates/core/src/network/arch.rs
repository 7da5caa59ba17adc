//! Architecture descriptors: an ordered list of layer specs that can be
//! shape-checked, built into a network, or costed analytically.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Neuron family used by a convolutional layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NeuronKind {
    Linear,
    Quadratic { k: usize },
    Product,
}

/// Convolution layer specification.
///
/// `neuron_kind: None` means "use the build-time default", which lets one
/// descriptor serve both the quadratic deployment and the width-matched
/// linear baseline. A per-entry override pins the kind for ablations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: usize,
    pub pad: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub neuron_kind: Option<NeuronKind>,
}

impl ConvSpec {
    /// Receptive-field size n = in_channels * kh * kw.
    pub fn input_size(&self) -> usize {
        self.in_channels * self.kernel.0 * self.kernel.1
    }

    pub fn out_spatial(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (kh, kw) = self.kernel;
        let hp = h + 2 * self.pad;
        let wp = w + 2 * self.pad;
        if kh == 0 || kw == 0 || self.stride == 0 || kh > hp || kw > wp {
            return Err(Error::Shape(format!(
                "conv kernel {kh}x{kw} stride {} does not fit {h}x{w} (pad {})",
                self.stride, self.pad
            )));
        }
        Ok(((hp - kh) / self.stride + 1, (wp - kw) / self.stride + 1))
    }
}

/// One entry in an architecture descriptor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerSpec {
    Conv(ConvSpec),
    BatchNorm,
    Relu,
    MaxPool { kernel: usize, stride: usize },
    GlobalAvgPool,
    Dense { out: usize },
    /// Names the current activation so a later residual add can reference it.
    Save { name: String },
    /// Adds the activation saved under `from`. If shapes differ, the source
    /// is strided-subsampled and zero-padded in channels (identity shortcut).
    ResidualAdd { from: String },
}

/// Ordered layer specs plus the input shape (channels, height, width).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchDescriptor {
    pub input: (usize, usize, usize),
    pub layers: Vec<LayerSpec>,
}

/// Activation shape at a point in the chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapePoint {
    Map { c: usize, h: usize, w: usize },
    Flat { features: usize },
}

impl ArchDescriptor {
    /// Shape-checks the chain end to end and returns the shape *after* each
    /// layer entry.
    pub fn trace_shapes(&self) -> Result<Vec<ShapePoint>> {
        let (c0, h0, w0) = self.input;
        if c0 == 0 || h0 == 0 || w0 == 0 {
            return Err(Error::Build("input shape has a zero extent".into()));
        }
        let mut cur = ShapePoint::Map {
            c: c0,
            h: h0,
            w: w0,
        };
        let mut saved: std::collections::BTreeMap<&str, ShapePoint> = Default::default();
        let mut out = Vec::with_capacity(self.layers.len());
        for (idx, layer) in self.layers.iter().enumerate() {
            cur = match layer {
                LayerSpec::Conv(spec) => {
                    let ShapePoint::Map { c, h, w } = cur else {
                        return Err(Error::Build(format!("layer {idx}: conv after flatten")));
                    };
                    if spec.in_channels != c {
                        return Err(Error::Build(format!(
                            "layer {idx}: conv expects {} input channels, chain has {c}",
                            spec.in_channels
                        )));
                    }
                    if let Some(NeuronKind::Quadratic { k }) = spec.neuron_kind {
                        if k == 0 {
                            return Err(Error::Build(format!("layer {idx}: rank k must be >= 1")));
                        }
                    }
                    let (oh, ow) = spec.out_spatial(h, w)?;
                    ShapePoint::Map {
                        c: spec.out_channels,
                        h: oh,
                        w: ow,
                    }
                }
                LayerSpec::BatchNorm | LayerSpec::Relu => cur,
                LayerSpec::MaxPool { kernel, stride } => {
                    let ShapePoint::Map { c, h, w } = cur else {
                        return Err(Error::Build(format!("layer {idx}: pool after flatten")));
                    };
                    if *kernel == 0 || *stride == 0 || *kernel > h || *kernel > w {
                        return Err(Error::Build(format!(
                            "layer {idx}: pool {kernel}/{stride} does not fit {h}x{w}"
                        )));
                    }
                    ShapePoint::Map {
                        c,
                        h: (h - kernel) / stride + 1,
                        w: (w - kernel) / stride + 1,
                    }
                }
                LayerSpec::GlobalAvgPool => {
                    let ShapePoint::Map { c, .. } = cur else {
                        return Err(Error::Build(format!("layer {idx}: gap after flatten")));
                    };
                    ShapePoint::Flat { features: c }
                }
                LayerSpec::Dense { out } => {
                    let features = match cur {
                        ShapePoint::Flat { features } => features,
                        ShapePoint::Map { c, h, w } => c * h * w,
                    };
                    if *out == 0 {
                        return Err(Error::Build(format!("layer {idx}: dense out must be >= 1")));
                    }
                    let _ = features;
                    ShapePoint::Flat { features: *out }
                }
                LayerSpec::Save { name } => {
                    saved.insert(name.as_str(), cur);
                    cur
                }
                LayerSpec::ResidualAdd { from } => {
                    let Some(&src) = saved.get(from.as_str()) else {
                        return Err(Error::Build(format!(
                            "layer {idx}: residual source '{from}' not saved earlier"
                        )));
                    };
                    let ShapePoint::Map { c, h, w } = cur else {
                        return Err(Error::Build(format!("layer {idx}: residual after flatten")));
                    };
                    let ShapePoint::Map {
                        c: sc,
                        h: sh,
                        w: sw,
                    } = src
                    else {
                        return Err(Error::Build(format!(
                            "layer {idx}: residual source '{from}' is flat"
                        )));
                    };
                    // Identity shortcut: equal maps, or a larger source that
                    // strided subsampling (ceil division) brings down to the
                    // target size, with channels zero-padded.
                    let fh = sh.div_ceil(h);
                    let fw_ = sw.div_ceil(w);
                    let ok = sc <= c
                        && fh == fw_
                        && (h - 1) * fh < sh
                        && (w - 1) * fw_ < sw;
                    if !ok {
                        return Err(Error::Build(format!(
                            "layer {idx}: residual source {sc}x{sh}x{sw} incompatible with {c}x{h}x{w}"
                        )));
                    }
                    cur
                }
            };
            out.push(cur);
        }
        Ok(out)
    }

    /// Returns a copy with every unpinned conv entry resolved to `kind`.
    pub fn resolved(&self, kind: NeuronKind) -> ArchDescriptor {
        let mut arch = self.clone();
        for layer in &mut arch.layers {
            if let LayerSpec::Conv(spec) = layer {
                if spec.neuron_kind.is_none() {
                    spec.neuron_kind = Some(kind);
                }
            }
        }
        arch
    }
}
