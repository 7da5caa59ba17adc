//! Exact parameter and multiply-accumulate accounting for architectures,
//! comparing the quadratic deployment against a width-matched linear
//! baseline. Conv bias terms are excluded on both sides; batchnorm and the
//! dense head are counted identically in both variants so the percentage
//! deltas isolate the neuron change.

use crate::error::Result;
use crate::network::arch::{ArchDescriptor, ConvSpec, LayerSpec, NeuronKind, ShapePoint};

/// Per-layer cost accounting. `m`/`r` are the quadratic-neuron and linear
/// fill counts of the quadratic variant (zero for non-quadratic layers).
#[derive(Debug, Clone, Default)]
pub struct LayerCostRow {
    pub id: String,
    pub n: usize,
    pub out_channels: usize,
    pub m: usize,
    pub r: usize,
    pub params_linear: u64,
    pub params_quad: u64,
    pub macs_linear: u64,
    pub macs_quad: u64,
}

#[derive(Debug, Clone)]
pub struct CostReport {
    pub rows: Vec<LayerCostRow>,
    pub totals: LayerCostRow,
    pub param_increase_pct: f64,
    pub mac_increase_pct: f64,
}

/// Percentage delta with the numerator kept in integer arithmetic.
fn increase_pct(quad: u64, base: u64) -> f64 {
    (100 * (quad as i128 - base as i128)) as f64 / base as f64
}

/// Per-output-channel cost of a rank-k quadratic neuron: its total cost
/// divided across the k+1 channels it emits.
pub fn averaged_complexity(n: usize, k: usize) -> (f64, f64) {
    let (params, macs) = crate::neurons::neuron_cost(n as u64, k as u64);
    let channels = (k + 1) as f64;
    (params as f64 / channels, macs as f64 / channels)
}

/// Costs one conv entry at the given output spatial size. An unpinned entry
/// deploys rank-`k` quadratic neurons; a pinned entry keeps its own kind.
pub fn layer_cost(spec: &ConvSpec, k: usize, spatial: (usize, usize)) -> LayerCostRow {
    let n = spec.input_size() as u64;
    let out = spec.out_channels as u64;
    let positions = (spatial.0 * spatial.1) as u64;
    let params_linear = out * n;
    let macs_linear_pos = out * n;
    let kind = spec.neuron_kind.unwrap_or(NeuronKind::Quadratic { k });
    let (m, r, params_quad, macs_quad_pos) = match kind {
        NeuronKind::Linear => (0, 0, params_linear, macs_linear_pos),
        NeuronKind::Quadratic { k } => {
            let k = k as u64;
            let m = out / (k + 1);
            let r = out - m * (k + 1);
            let params = m * ((k + 1) * n + k) + r * n;
            let macs = m * ((k + 1) * n + 2 * k) + r * n;
            (m as usize, r as usize, params, macs)
        }
        NeuronKind::Product => (0, 0, out * 3 * n, out * (3 * n + 1)),
    };
    LayerCostRow {
        id: String::new(),
        n: n as usize,
        out_channels: out as usize,
        m,
        r,
        params_linear,
        params_quad,
        macs_linear: macs_linear_pos * positions,
        macs_quad: macs_quad_pos * positions,
    }
}

/// Aggregates layer costs over the whole architecture.
pub fn network_cost(arch: &ArchDescriptor, k: usize) -> Result<CostReport> {
    let shapes = arch.trace_shapes()?;
    let mut rows = Vec::new();
    for (idx, layer) in arch.layers.iter().enumerate() {
        let after = shapes[idx];
        let row = match layer {
            LayerSpec::Conv(spec) => {
                let ShapePoint::Map { h, w, .. } = after else {
                    unreachable!("conv output is a map");
                };
                let mut row = layer_cost(spec, k, (h, w));
                row.id = format!("conv{idx}");
                row
            }
            LayerSpec::BatchNorm => {
                let ShapePoint::Map { c, h, w } = after else {
                    unreachable!("batchnorm output is a map");
                };
                let params = 2 * c as u64;
                let macs = 2 * (c * h * w) as u64;
                LayerCostRow {
                    id: format!("bn{idx}"),
                    out_channels: c,
                    params_linear: params,
                    params_quad: params,
                    macs_linear: macs,
                    macs_quad: macs,
                    ..Default::default()
                }
            }
            LayerSpec::Dense { out } => {
                let features = match if idx == 0 {
                    ShapePoint::Map {
                        c: arch.input.0,
                        h: arch.input.1,
                        w: arch.input.2,
                    }
                } else {
                    shapes[idx - 1]
                } {
                    ShapePoint::Flat { features } => features,
                    ShapePoint::Map { c, h, w } => c * h * w,
                };
                let params = (*out * (features + 1)) as u64;
                let macs = (*out * features) as u64;
                LayerCostRow {
                    id: format!("dense{idx}"),
                    n: features,
                    out_channels: *out,
                    params_linear: params,
                    params_quad: params,
                    macs_linear: macs,
                    macs_quad: macs,
                    ..Default::default()
                }
            }
            _ => continue,
        };
        rows.push(row);
    }
    let mut totals = LayerCostRow {
        id: "total".into(),
        ..Default::default()
    };
    for row in &rows {
        totals.params_linear += row.params_linear;
        totals.params_quad += row.params_quad;
        totals.macs_linear += row.macs_linear;
        totals.macs_quad += row.macs_quad;
        totals.m += row.m;
        totals.r += row.r;
    }
    let param_increase_pct = increase_pct(totals.params_quad, totals.params_linear);
    let mac_increase_pct = increase_pct(totals.macs_quad, totals.macs_linear);
    Ok(CostReport {
        rows,
        totals,
        param_increase_pct,
        mac_increase_pct,
    })
}

impl CostReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "layer,n,out_channels,m_quadratic,r_linear,params_linear,params_quadratic,\
             macs_linear,macs_quadratic\n",
        );
        for row in self.rows.iter().chain(std::iter::once(&self.totals)) {
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                row.id,
                row.n,
                row.out_channels,
                row.m,
                row.r,
                row.params_linear,
                row.params_quad,
                row.macs_linear,
                row.macs_quad
            ));
        }
        s
    }

    pub fn to_text(&self) -> String {
        format!(
            "params: linear {} -> quadratic {} ({:+.4}%)\n\
             macs:   linear {} -> quadratic {} ({:+.4}%)\n",
            self.totals.params_linear,
            self.totals.params_quad,
            self.param_increase_pct,
            self.totals.macs_linear,
            self.totals.macs_quad,
            self.mac_increase_pct
        )
    }
}
