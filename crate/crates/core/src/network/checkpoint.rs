//! Binary model checkpoints.
//!
//! Layout: magic `QNET1`, a little-endian u64 byte length, the architecture
//! descriptor as JSON, then every state tensor in fixed layer order, each as
//! (u32 rank, u64 extents..., little-endian f64 values...). Batchnorm running
//! statistics are included so evaluation mode round-trips bit-exactly.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::network::arch::ArchDescriptor;
use crate::network::layers::ConvParams;
use crate::network::net::{Layer, Network};

const MAGIC: &[u8; 5] = b"QNET1";

/// One state tensor: extents plus a flat value buffer.
type StateTensor = (Vec<usize>, Vec<f64>);

fn conv_state_shapes(layer: &crate::network::layers::ConvLayer) -> Vec<Vec<usize>> {
    let n = layer.n;
    let out = layer.spec.out_channels;
    match &layer.params {
        ConvParams::Linear { .. } => vec![vec![out, n], vec![out]],
        ConvParams::Quad { .. } => vec![
            vec![layer.m, layer.k, n],
            vec![layer.m, layer.k],
            vec![layer.m, n],
            vec![layer.m],
            vec![layer.r, n],
            vec![layer.r],
        ],
        ConvParams::Product { .. } => {
            vec![vec![out, n], vec![out, n], vec![out, n], vec![out]]
        }
    }
}

fn conv_state_vecs(params: &ConvParams) -> Vec<&Vec<f64>> {
    match params {
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

fn conv_state_vecs_mut(params: &mut ConvParams) -> Vec<&mut Vec<f64>> {
    match params {
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

/// Collects every state tensor in checkpoint order.
fn state_tensors(net: &Network) -> Vec<StateTensor> {
    let mut out = Vec::new();
    for layer in &net.layers {
        match layer {
            Layer::Conv(l) => {
                for (shape, vec) in conv_state_shapes(l)
                    .into_iter()
                    .zip(conv_state_vecs(&l.params))
                {
                    out.push((shape, vec.clone()));
                }
            }
            Layer::BatchNorm(l) => {
                for v in [&l.gamma, &l.beta, &l.running_mean, &l.running_var] {
                    out.push((vec![l.c], v.clone()));
                }
            }
            Layer::Dense(l) => {
                out.push((vec![l.out_features, l.in_features], l.w.clone()));
                out.push((vec![l.out_features], l.b.clone()));
            }
            _ => {}
        }
    }
    out
}

/// Writes a network checkpoint.
pub fn save(net: &Network, path: &Path) -> Result<()> {
    let json = serde_json::to_vec(&net.arch)
        .map_err(|e| Error::Build(format!("descriptor serialization failed: {e}")))?;
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    for (shape, data) in state_tensors(net) {
        buf.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for ext in &shape {
            buf.extend_from_slice(&(*ext as u64).to_le_bytes());
        }
        for v in &data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}

/// Reads a checkpoint back into a freshly instantiated network.
pub fn load(path: &Path) -> Result<Network> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut off = 0usize;
    let take = |off: &mut usize, n: usize| -> Result<&[u8]> {
        if *off + n > bytes.len() {
            return Err(Error::Parse(format!(
                "checkpoint truncated at byte {} (needed {n} more)",
                *off
            )));
        }
        let s = &bytes[*off..*off + n];
        *off += n;
        Ok(s)
    };
    if take(&mut off, 5)? != MAGIC {
        return Err(Error::Parse("bad checkpoint magic (expected QNET1)".into()));
    }
    let json_len = u64::from_le_bytes(take(&mut off, 8)?.try_into().unwrap()) as usize;
    let arch: ArchDescriptor = serde_json::from_slice(take(&mut off, json_len)?)
        .map_err(|e| Error::Parse(format!("checkpoint descriptor at byte 13: {e}")))?;
    let mut net = Network::new(arch)?;

    let read_tensor = |off: &mut usize, expect: &[usize]| -> Result<Vec<f64>> {
        let rank = u32::from_le_bytes(take(off, 4)?.try_into().unwrap()) as usize;
        if rank != expect.len() {
            return Err(Error::Parse(format!(
                "checkpoint tensor rank {rank} at byte {}, expected {}",
                *off,
                expect.len()
            )));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u64::from_le_bytes(take(off, 8)?.try_into().unwrap()) as usize);
        }
        if shape != expect {
            return Err(Error::Parse(format!(
                "checkpoint tensor shape {shape:?} at byte {}, expected {expect:?}",
                *off
            )));
        }
        let count: usize = shape.iter().product();
        let raw = take(off, count * 8)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    };

    for layer in net.layers.iter_mut() {
        match layer {
            Layer::Conv(l) => {
                let shapes = conv_state_shapes(l);
                for (shape, dst) in shapes.iter().zip(conv_state_vecs_mut(&mut l.params)) {
                    *dst = read_tensor(&mut off, shape)?;
                }
            }
            Layer::BatchNorm(l) => {
                let c = l.c;
                l.gamma = read_tensor(&mut off, &[c])?;
                l.beta = read_tensor(&mut off, &[c])?;
                l.running_mean = read_tensor(&mut off, &[c])?;
                l.running_var = read_tensor(&mut off, &[c])?;
            }
            Layer::Dense(l) => {
                l.w = read_tensor(&mut off, &[l.out_features, l.in_features])?;
                l.b = read_tensor(&mut off, &[l.out_features])?;
            }
            _ => {}
        }
    }
    if off != bytes.len() {
        return Err(Error::Parse(format!(
            "checkpoint has {} trailing bytes at byte {off}",
            bytes.len() - off
        )));
    }
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::arch::{ConvSpec, LayerSpec};
    use crate::network::layers::Mode;
    use crate::network::net::build;
    use crate::numerics::{Rng, Tensor};

    fn arch() -> ArchDescriptor {
        ArchDescriptor {
            input: (2, 6, 6),
            layers: vec![
                LayerSpec::Conv(ConvSpec {
                    in_channels: 2,
                    out_channels: 5,
                    kernel: (3, 3),
                    stride: 1,
                    pad: 1,
                    neuron_kind: None,
                }),
                LayerSpec::BatchNorm,
                LayerSpec::Relu,
                LayerSpec::GlobalAvgPool,
                LayerSpec::Dense { out: 3 },
            ],
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.qnet");
        let mut rng = Rng::new(21);
        let mut net = build(&arch(), 2, &mut rng).unwrap();
        // Dirty the batchnorm running stats so they are exercised too.
        let x = Tensor::from_fn(&[4, 2, 6, 6], |_| rng.range(-1.0, 1.0)).unwrap();
        net.forward(&x, Mode::Train).unwrap();
        save(&net, &path).unwrap();
        let mut back = load(&path).unwrap();
        let a = save_to_vec(&net);
        let b = save_to_vec(&back);
        assert_eq!(a, b);
        // Eval forward agrees bit-for-bit.
        let y1 = net.forward(&x, Mode::Eval).unwrap();
        let y2 = back.forward(&x, Mode::Eval).unwrap();
        assert_eq!(y1.data(), y2.data());
    }

    fn save_to_vec(net: &Network) -> Vec<StateTensor> {
        state_tensors(net)
    }

    #[test]
    fn bad_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.qnet");
        std::fs::write(&path, b"QNETXjunk").unwrap();
        assert!(matches!(load(&path), Err(Error::Parse(_))));
    }

    #[test]
    fn truncated_file_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.qnet");
        let mut rng = Rng::new(22);
        let net = build(&arch(), 2, &mut rng).unwrap();
        save(&net, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(load(&path), Err(Error::Parse(_))));
    }
}
