//! Subcommand implementations. Each returns the process exit code on the
//! success path; errors are mapped to exit codes by `main`.

use std::path::Path;

use qnet::costmodel;
use qnet::data::{self, Dataset, DatasetSpec};
use qnet::network::{
    build_with_kind, checkpoint, im2col, ConvParams, Layer, Mode, NeuronKind,
};
use qnet::numerics::dot;
use qnet::training::{self, train_single_neuron, SingleNeuron, TrainOutcome};
use qnet::{Error, Result, Rng, Tensor};

use crate::config::RunConfig;
use crate::pgm;

pub const GRAD_CHECK_TOLERANCE: f64 = 1e-4;
pub const GRAD_CHECK_EPS: f64 = 1e-5;

/// Writes an output file, refusing to overwrite without `force`.
pub fn write_output(path: &Path, bytes: &[u8], force: bool) -> Result<()> {
    if path.exists() && !force {
        return Err(Error::Parse(format!(
            "{} already exists (use --force to overwrite)",
            path.display()
        )));
    }
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(path, bytes)?;
    Ok(())
}

fn resolve_seed(cfg: &RunConfig, flag: Option<u64>) -> u64 {
    flag.unwrap_or_else(|| cfg.optim().seed)
}

fn load_normalized(spec: &DatasetSpec) -> Result<(Dataset, Dataset)> {
    let (mut train, mut test) = data::load_dataset(spec)?;
    data::normalize(&mut train, &mut test)?;
    Ok((train, test))
}

pub fn grad_check(cfg: &RunConfig, seed: Option<u64>) -> Result<i32> {
    let arch = match &cfg.arch {
        None => qnet::network::zoo::toy3(),
        Some(_) => cfg.descriptor()?,
    };
    let kind = cfg.neuron_kind()?;
    let seed = resolve_seed(cfg, seed);
    let mut net = build_with_kind(&arch, kind, &mut Rng::new(seed))?;
    // Move the lambdas off their zero init so the quadratic gradient paths
    // are exercised, not just the feature path.
    net.visit_params(&mut |slot| {
        if slot.kind == qnet::network::ParamKind::Lambda {
            for (i, v) in slot.data.iter_mut().enumerate() {
                *v = 0.05 * ((i % 5) as f64 - 2.0);
            }
        }
    });
    let (c, h, w) = arch.input;
    let mut rng = Rng::new(seed.wrapping_add(1));
    let x = Tensor::from_fn(&[2, c, h, w], |_| rng.range(-1.0, 1.0))?;
    let classes = output_classes(&arch);
    let labels = [0usize, 1 % classes];
    let per_tensor = training::grad_check_tensors(&mut net, &x, &labels, GRAD_CHECK_EPS)?;
    let mut worst = 0.0f64;
    let mut worst_name = String::from("none");
    for (name, err) in &per_tensor {
        println!("{name}: max relative error {err:.3e}");
        if *err >= worst {
            worst = *err;
            worst_name = name.clone();
        }
    }
    println!("max relative error: {worst:.3e} ({worst_name})");
    Ok(i32::from(worst > GRAD_CHECK_TOLERANCE))
}

fn output_classes(arch: &qnet::network::ArchDescriptor) -> usize {
    arch.layers
        .iter()
        .rev()
        .find_map(|l| match l {
            qnet::network::LayerSpec::Dense { out } => Some(*out),
            _ => None,
        })
        .unwrap_or(2)
}

pub fn cost_report(cfg: &RunConfig, out_dir: &Path, force: bool) -> Result<i32> {
    let arch = cfg.descriptor()?;
    let k = cfg.k.unwrap_or(9);
    let report = costmodel::network_cost(&arch, k)?;
    write_output(
        &out_dir.join("cost_report.csv"),
        report.to_csv().as_bytes(),
        force,
    )?;
    print!("{}", report.to_text());
    Ok(0)
}

fn write_train_outputs(
    out_dir: &Path,
    outcome: &TrainOutcome,
    force: bool,
) -> Result<()> {
    write_output(
        &out_dir.join("metrics.csv"),
        outcome.metrics_csv.as_bytes(),
        force,
    )?;
    write_output(
        &out_dir.join("histograms.csv"),
        outcome.histogram_csv.as_bytes(),
        force,
    )
}

/// Serializes a single-neuron model as deterministic JSON.
fn single_neuron_json(model: &SingleNeuron) -> String {
    match model {
        SingleNeuron::Quad { p, .. } => serde_json::json!({
            "kind": "quadratic",
            "k": p.k,
            "qk": p.qk.data(),
            "lam": p.lam,
            "w": p.w,
            "b": p.b,
        })
        .to_string(),
        SingleNeuron::Linear { w, b, .. } => serde_json::json!({
            "kind": "linear",
            "w": w,
            "b": b,
        })
        .to_string(),
    }
}

pub fn train(cfg: &RunConfig, seed: Option<u64>, out_dir: &Path, force: bool) -> Result<i32> {
    let dataset = cfg
        .dataset
        .as_ref()
        .ok_or_else(|| Error::Parse("train needs a dataset".into()))?;
    let (train_data, test_data) = load_normalized(dataset)?;
    let mut optim = cfg.optim();
    if let Some(s) = seed {
        optim.seed = s;
    }
    let arch_name = cfg.arch.as_deref().unwrap_or("");
    let outcome = if arch_name == "single-quad" || arch_name == "single-linear" {
        let kind = if arch_name == "single-quad" {
            NeuronKind::Quadratic {
                k: cfg.k.unwrap_or(2),
            }
        } else {
            NeuronKind::Linear
        };
        let n = train_data.sample_size();
        let mut rng = Rng::new(optim.seed);
        let mut model = SingleNeuron::new(kind, n, &mut rng)?;
        let steps = cfg.steps.unwrap_or(2000);
        let outcome =
            train_single_neuron(&mut model, &train_data, &test_data, steps, &optim, &mut rng)?;
        write_output(
            &out_dir.join("model.json"),
            single_neuron_json(&model).as_bytes(),
            force,
        )?;
        outcome
    } else {
        let arch = cfg.descriptor()?;
        let kind = cfg.neuron_kind()?;
        let mut rng = Rng::new(optim.seed);
        let mut net = build_with_kind(&arch, kind, &mut rng)?;
        let outcome = training::train(&mut net, &train_data, &test_data, &optim, &mut rng)?;
        let path = out_dir.join("model.qnet");
        if path.exists() && !force {
            return Err(Error::Parse(format!(
                "{} already exists (use --force to overwrite)",
                path.display()
            )));
        }
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        checkpoint::save(&net, &path)?;
        outcome
    };
    write_train_outputs(out_dir, &outcome, force)?;
    println!("final test accuracy: {:.4}", outcome.final_test_accuracy);
    Ok(0)
}

pub fn sweep_rank(cfg: &RunConfig, seed: Option<u64>, out_dir: &Path, force: bool) -> Result<i32> {
    let ks = cfg
        .ks
        .clone()
        .ok_or_else(|| Error::Parse("sweep-rank needs a ks list".into()))?;
    if ks.is_empty() {
        return Err(Error::Parse("sweep-rank ks list is empty".into()));
    }
    let reps = cfg.repetitions.unwrap_or(5);
    let dataset = cfg
        .dataset
        .as_ref()
        .ok_or_else(|| Error::Parse("sweep-rank needs a dataset".into()))?;
    let (train_data, test_data) = load_normalized(dataset)?;
    let arch = cfg.descriptor()?;
    let mut optim = cfg.optim();
    if let Some(s) = seed {
        optim.seed = s;
    }
    let base_seed = optim.seed;
    let mut csv = String::from("k,mean_accuracy,std_accuracy\n");
    for &k in &ks {
        if k == 0 {
            return Err(Error::Parse("sweep-rank ranks must be >= 1".into()));
        }
        let mut accs = Vec::with_capacity(reps);
        for rep in 0..reps {
            let run_seed = base_seed
                .wrapping_add(1_000_000 * rep as u64)
                .wrapping_add(k as u64);
            let mut rng = Rng::new(run_seed);
            let mut net = build_with_kind(&arch, NeuronKind::Quadratic { k }, &mut rng)?;
            let outcome = training::train(&mut net, &train_data, &test_data, &optim, &mut rng)?;
            accs.push(outcome.final_test_accuracy);
        }
        let mean = accs.iter().sum::<f64>() / accs.len() as f64;
        let var = accs.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / accs.len() as f64;
        csv.push_str(&format!("{k},{mean:.6},{:.6}\n", var.sqrt()));
        println!("k={k}: mean accuracy {mean:.4} (std {:.4})", var.sqrt());
    }
    write_output(&out_dir.join("sweep.csv"), csv.as_bytes(), force)?;
    Ok(0)
}

pub fn export_response(
    cfg: &RunConfig,
    checkpoint_path: &Path,
    out_dir: &Path,
    force: bool,
) -> Result<i32> {
    let dataset = cfg
        .dataset
        .as_ref()
        .ok_or_else(|| Error::Parse("export-response needs a dataset".into()))?;
    let (_, test_data) = load_normalized(dataset)?;
    let index = cfg.sample_index.unwrap_or(0);
    if index >= test_data.len() {
        return Err(Error::Parse(format!(
            "sample_index {index} out of range ({} test samples)",
            test_data.len()
        )));
    }
    let layer_idx = cfg
        .layer
        .ok_or_else(|| Error::Parse("export-response needs a layer index".into()))?;
    let mut net = checkpoint::load(checkpoint_path)?;
    if layer_idx >= net.layers.len() {
        return Err(Error::Parse(format!(
            "layer index {layer_idx} out of range ({} layers)",
            net.layers.len()
        )));
    }
    let x = test_data.batch(&[index])?;
    let input = net.forward_until(&x, Mode::Eval, layer_idx)?;
    let Layer::Conv(conv) = &net.layers[layer_idx] else {
        return Err(Error::Parse(format!(
            "layer {layer_idx} is not a conv layer"
        )));
    };
    let ConvParams::Quad { q, lam, w, b, .. } = &conv.params else {
        return Err(Error::Parse(format!(
            "layer {layer_idx} has no quadratic neurons"
        )));
    };
    if input.rank() != 4 {
        return Err(Error::Parse("chosen layer does not see a feature map".into()));
    }
    let (h, wd) = (input.shape()[2], input.shape()[3]);
    let (oh, ow) = conv.spec.out_spatial(h, wd)?;
    let map = Tensor::from_vec(
        &input.shape()[1..].to_vec(),
        input.data().to_vec(),
    )?;
    let cols = im2col(&map, &conv.spec)?;
    let n = conv.n;
    let k = conv.k;
    let p = oh * ow;
    let mut paths = Vec::new();
    for j in 0..conv.m {
        let wr = &w[j * n..(j + 1) * n];
        let bias = if conv.bias_enabled { b[j] } else { 0.0 };
        let mut linear = vec![0.0; p];
        let mut quad = vec![0.0; p];
        let mut xp = vec![0.0; n];
        for pi in 0..p {
            for jj in 0..n {
                xp[jj] = cols.get2(jj, pi);
            }
            linear[pi] = dot(wr, &xp) + bias;
            let mut acc = 0.0;
            for i in 0..k {
                let f = dot(&q[(j * k + i) * n..(j * k + i + 1) * n], &xp);
                acc += lam[j * k + i] * f * f;
            }
            quad[pi] = acc / k as f64;
        }
        let lin_path = out_dir.join(format!("linear_l{layer_idx}_n{j}.pgm"));
        let quad_path = out_dir.join(format!("quadratic_l{layer_idx}_n{j}.pgm"));
        write_output(&lin_path, &pgm::encode(ow, oh, &linear), force)?;
        write_output(&quad_path, &pgm::encode(ow, oh, &quad), force)?;
        paths.push((lin_path, quad_path));
    }
    println!(
        "wrote {} neuron response map pairs to {}",
        paths.len(),
        out_dir.display()
    );
    Ok(0)
}

/// Maps library errors onto the stable exit-code contract.
pub fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::Instability(_) | Error::NonFinite(_) => 3,
        _ => 2,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overwrite_guard() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.csv");
        write_output(&path, b"a", false).unwrap();
        assert!(write_output(&path, b"b", false).is_err());
        write_output(&path, b"b", true).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), b"b");
    }

    #[test]
    fn exit_codes_by_error_kind() {
        assert_eq!(exit_code_for(&Error::Parse("x".into())), 2);
        assert_eq!(exit_code_for(&Error::Instability("x".into())), 3);
        assert_eq!(exit_code_for(&Error::Shape("x".into())), 2);
    }

    #[test]
    fn single_neuron_json_is_deterministic() {
        let mut rng = Rng::new(4);
        let model = SingleNeuron::new(NeuronKind::Quadratic { k: 2 }, 2, &mut rng).unwrap();
        let mut rng = Rng::new(4);
        let model2 = SingleNeuron::new(NeuronKind::Quadratic { k: 2 }, 2, &mut rng).unwrap();
        assert_eq!(single_neuron_json(&model), single_neuron_json(&model2));
    }
}
