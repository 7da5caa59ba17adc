//! JSON run configuration shared by all subcommands.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use qnet::data::DatasetSpec;
use qnet::network::{ArchDescriptor, NeuronKind};
use qnet::training::OptimConfig;
use qnet::{Error, Result};

/// Command-specific settings parsed from a JSON file. Unknown keys are
/// rejected; any referenced paths must exist at parse time.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Stock architecture name, or the single-neuron pseudo-architectures
    /// `single-quad` / `single-linear`.
    pub arch: Option<String>,
    /// Path to an architecture descriptor JSON file (alternative to `arch`).
    pub arch_path: Option<PathBuf>,
    /// Rank of decomposition for quadratic deployments.
    pub k: Option<usize>,
    /// Default neuron kind: quadratic (default), linear, or product.
    pub neuron: Option<String>,
    pub dataset: Option<DatasetSpec>,
    pub optim: Option<OptimConfig>,
    /// Step budget for single-neuron training.
    pub steps: Option<usize>,
    /// Rank list for sweep-rank.
    pub ks: Option<Vec<usize>>,
    /// Repetitions per rank for sweep-rank.
    pub repetitions: Option<usize>,
    /// Network layer index for export-response.
    pub layer: Option<usize>,
    /// Test-split sample used by export-response.
    pub sample_index: Option<usize>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        cfg.check_paths()?;
        if let Some(k) = cfg.k {
            if k == 0 {
                return Err(Error::Parse("k must be >= 1".into()));
            }
        }
        Ok(cfg)
    }

    fn check_paths(&self) -> Result<()> {
        let mut paths: Vec<&Path> = Vec::new();
        if let Some(p) = &self.arch_path {
            paths.push(p);
        }
        match &self.dataset {
            Some(DatasetSpec::IdxImages {
                train_images,
                train_labels,
                test_images,
                test_labels,
            }) => {
                paths.extend([train_images, train_labels, test_images, test_labels]
                    .map(|p| p.as_path()));
            }
            Some(DatasetSpec::CsvVectors { train, test }) => {
                paths.extend([train.as_path(), test.as_path()]);
            }
            _ => {}
        }
        for p in paths {
            if !p.exists() {
                return Err(Error::Parse(format!("{}: file not found", p.display())));
            }
        }
        Ok(())
    }

    /// The default neuron kind for unpinned conv entries.
    pub fn neuron_kind(&self) -> Result<NeuronKind> {
        match self.neuron.as_deref().unwrap_or("quadratic") {
            "quadratic" => Ok(NeuronKind::Quadratic {
                k: self.k.unwrap_or(3),
            }),
            "linear" => Ok(NeuronKind::Linear),
            "product" => Ok(NeuronKind::Product),
            other => Err(Error::Parse(format!(
                "unknown neuron kind '{other}' (quadratic, linear, product)"
            ))),
        }
    }

    /// Resolves the architecture descriptor from name or path.
    pub fn descriptor(&self) -> Result<ArchDescriptor> {
        match (&self.arch, &self.arch_path) {
            (Some(name), None) => qnet::network::zoo::by_name(name),
            (None, Some(path)) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
                serde_json::from_str(&text)
                    .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
            }
            (Some(_), Some(_)) => Err(Error::Parse(
                "config sets both arch and arch_path; pick one".into(),
            )),
            (None, None) => Err(Error::Parse("config needs arch or arch_path".into())),
        }
    }

    pub fn optim(&self) -> OptimConfig {
        self.optim.clone().unwrap_or_default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &tempfile::TempDir, body: &str) -> PathBuf {
        let path = dir.path().join("cfg.json");
        std::fs::write(&path, body).unwrap();
        path
    }

    #[test]
    fn unknown_keys_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(&dir, r#"{"arch": "toy3", "bogus": 1}"#);
        assert!(matches!(RunConfig::load(&path), Err(Error::Parse(_))));
    }

    #[test]
    fn missing_referenced_file_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(
            &dir,
            r#"{"arch": "toy3", "dataset": {"kind": "csv-vectors",
                "train": "/nonexistent/a.csv", "test": "/nonexistent/b.csv"}}"#,
        );
        assert!(matches!(RunConfig::load(&path), Err(Error::Parse(_))));
    }

    #[test]
    fn stock_arch_resolves() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(&dir, r#"{"arch": "toy3", "k": 3}"#);
        let cfg = RunConfig::load(&path).unwrap();
        cfg.descriptor().unwrap().trace_shapes().unwrap();
        assert!(matches!(
            cfg.neuron_kind().unwrap(),
            NeuronKind::Quadratic { k: 3 }
        ));
    }

    #[test]
    fn zero_k_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(&dir, r#"{"arch": "toy3", "k": 0}"#);
        assert!(RunConfig::load(&path).is_err());
    }
}
