//! Stock architecture descriptors referenced by name from the CLI.

use crate::error::{Error, Result};
use crate::network::arch::{ArchDescriptor, ConvSpec, LayerSpec};

fn conv(ic: usize, oc: usize, kernel: usize, stride: usize, pad: usize) -> LayerSpec {
    LayerSpec::Conv(ConvSpec {
        in_channels: ic,
        out_channels: oc,
        kernel: (kernel, kernel),
        stride,
        pad,
        neuron_kind: None,
    })
}

/// One basic residual block: two 3x3 convs with an identity shortcut. A
/// stride-2 first conv doubles as the downsample; the shortcut then
/// subsamples and zero-pads channels.
fn basic_block(layers: &mut Vec<LayerSpec>, save: &str, ic: usize, oc: usize, stride: usize) {
    layers.push(LayerSpec::Save { name: save.into() });
    layers.push(conv(ic, oc, 3, stride, 1));
    layers.push(LayerSpec::BatchNorm);
    layers.push(LayerSpec::Relu);
    layers.push(conv(oc, oc, 3, 1, 1));
    layers.push(LayerSpec::BatchNorm);
    layers.push(LayerSpec::ResidualAdd { from: save.into() });
    layers.push(LayerSpec::Relu);
}

/// CIFAR residual network of depth 6n+2 (depth 20 -> 19 conv entries):
/// a 3x3 stem then three stages of n blocks at widths 16/32/64.
pub fn resnet_cifar(depth: usize, classes: usize) -> Result<ArchDescriptor> {
    if depth < 8 || (depth - 2) % 6 != 0 {
        return Err(Error::Build(format!(
            "cifar resnet depth must be 6n+2, got {depth}"
        )));
    }
    let n = (depth - 2) / 6;
    let mut layers = vec![conv(3, 16, 3, 1, 1), LayerSpec::BatchNorm, LayerSpec::Relu];
    let widths = [16usize, 32, 64];
    let mut ic = 16;
    for (stage, &oc) in widths.iter().enumerate() {
        for block in 0..n {
            let stride = if stage > 0 && block == 0 { 2 } else { 1 };
            let save = format!("s{stage}b{block}");
            basic_block(&mut layers, &save, ic, oc, stride);
            ic = oc;
        }
    }
    layers.push(LayerSpec::GlobalAvgPool);
    layers.push(LayerSpec::Dense { out: classes });
    Ok(ArchDescriptor {
        input: (3, 32, 32),
        layers,
    })
}

/// 34-layer residual network over 224x224 RGB input: 7x7 stem, max pooling,
/// stages of 3/4/6/3 basic blocks at widths 64/128/256/512.
pub fn resnet34_imagenet() -> ArchDescriptor {
    let mut layers = vec![
        conv(3, 64, 7, 2, 3),
        LayerSpec::BatchNorm,
        LayerSpec::Relu,
        LayerSpec::MaxPool { kernel: 3, stride: 2 },
    ];
    let stages = [(3usize, 64usize), (4, 128), (6, 256), (3, 512)];
    let mut ic = 64;
    for (stage, &(blocks, oc)) in stages.iter().enumerate() {
        for block in 0..blocks {
            let stride = if stage > 0 && block == 0 { 2 } else { 1 };
            let save = format!("s{stage}b{block}");
            basic_block(&mut layers, &save, ic, oc, stride);
            ic = oc;
        }
    }
    layers.push(LayerSpec::GlobalAvgPool);
    layers.push(LayerSpec::Dense { out: 1000 });
    ArchDescriptor {
        input: (3, 224, 224),
        layers,
    }
}

/// Four-conv classifier for the 1x16x16 synthetic shapes task. Widths are
/// multiples of 4 so rank-3 layers need no fill neurons.
pub fn shapes_cnn() -> ArchDescriptor {
    ArchDescriptor {
        input: (1, 16, 16),
        layers: vec![
            conv(1, 8, 3, 1, 1),
            LayerSpec::BatchNorm,
            LayerSpec::Relu,
            conv(8, 16, 3, 2, 1),
            LayerSpec::BatchNorm,
            LayerSpec::Relu,
            conv(16, 16, 3, 1, 1),
            LayerSpec::BatchNorm,
            LayerSpec::Relu,
            conv(16, 32, 3, 2, 1),
            LayerSpec::BatchNorm,
            LayerSpec::Relu,
            LayerSpec::GlobalAvgPool,
            LayerSpec::Dense { out: 4 },
        ],
    }
}

/// Small three-conv network used by the gradient-check command.
pub fn toy3() -> ArchDescriptor {
    ArchDescriptor {
        input: (3, 8, 8),
        layers: vec![
            conv(3, 8, 3, 1, 1),
            LayerSpec::Relu,
            conv(8, 8, 3, 2, 1),
            LayerSpec::Relu,
            conv(8, 8, 3, 1, 1),
            LayerSpec::Relu,
            LayerSpec::GlobalAvgPool,
            LayerSpec::Dense { out: 4 },
        ],
    }
}

/// Looks up a stock architecture by CLI name.
pub fn by_name(name: &str) -> Result<ArchDescriptor> {
    match name {
        "toy3" => Ok(toy3()),
        "shapes-cnn" => Ok(shapes_cnn()),
        "resnet20-cifar" => resnet_cifar(20, 10),
        "resnet56-cifar" => resnet_cifar(56, 10),
        "resnet110-cifar" => resnet_cifar(110, 10),
        "resnet34-imagenet" => Ok(resnet34_imagenet()),
        other => Err(Error::Parse(format!(
            "unknown architecture '{other}' \
             (known: toy3, shapes-cnn, resnet20-cifar, resnet56-cifar, \
             resnet110-cifar, resnet34-imagenet)"
        ))),
    }
}
