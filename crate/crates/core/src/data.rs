//! Datasets: deterministic synthetic generators plus IDX and CSV parsers,
//! with per-feature normalization fitted on the training split.

use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Rng, Tensor};

/// Dataset source description, loadable from a JSON config.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DatasetSpec {
    /// 2-D points in [-1,1]^2; class 1 inside a centered circle whose area
    /// is half the square, so classes balance in expectation.
    SyntheticCircle { train: usize, test: usize, seed: u64 },
    /// 2-D points in [-1,1]^2 labeled by the sign product of coordinates.
    SyntheticXor { train: usize, test: usize, seed: u64 },
    /// 1x16x16 images of four shape classes (disk, ring, square, cross)
    /// with jittered position/scale and additive Gaussian noise.
    SyntheticShapes { train: usize, test: usize, seed: u64 },
    /// IDX-format image and label files (big-endian, unsigned bytes).
    IdxImages {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
    },
    /// Header-less CSV rows: features then a trailing integer label.
    CsvVectors { train: PathBuf, test: PathBuf },
}

/// A split: flat sample-major features with a per-sample shape.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub x: Vec<f64>,
    pub sample_shape: Vec<usize>,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample_size(&self) -> usize {
        self.sample_shape.iter().product()
    }

    /// Assembles a batch tensor `[indices.len(), sample_shape...]`.
    pub fn batch(&self, indices: &[usize]) -> Result<Tensor> {
        let size = self.sample_size();
        let mut shape = vec![indices.len()];
        shape.extend_from_slice(&self.sample_shape);
        let mut data = Vec::with_capacity(indices.len() * size);
        for &i in indices {
            if i >= self.len() {
                return Err(Error::Domain(format!("sample index {i} out of range")));
            }
            data.extend_from_slice(&self.x[i * size..(i + 1) * size]);
        }
        Tensor::from_vec(&shape, data)
    }

    pub fn batch_labels(&self, indices: &[usize]) -> Vec<usize> {
        indices.iter().map(|&i| self.labels[i]).collect()
    }
}

/// Loads both splits for a dataset spec.
pub fn load_dataset(spec: &DatasetSpec) -> Result<(Dataset, Dataset)> {
    match spec {
        DatasetSpec::SyntheticCircle { train, test, seed } => {
            let mut rng = Rng::new(*seed);
            Ok((gen_circle(*train, &mut rng), gen_circle(*test, &mut rng)))
        }
        DatasetSpec::SyntheticXor { train, test, seed } => {
            let mut rng = Rng::new(*seed);
            Ok((gen_xor(*train, &mut rng), gen_xor(*test, &mut rng)))
        }
        DatasetSpec::SyntheticShapes { train, test, seed } => {
            let mut rng = Rng::new(*seed);
            Ok((gen_shapes(*train, &mut rng), gen_shapes(*test, &mut rng)))
        }
        DatasetSpec::IdxImages {
            train_images,
            train_labels,
            test_images,
            test_labels,
        } => Ok((
            load_idx_pair(train_images, train_labels)?,
            load_idx_pair(test_images, test_labels)?,
        )),
        DatasetSpec::CsvVectors { train, test } => {
            let tr = load_csv(train)?;
            let mut te = load_csv(test)?;
            if te.sample_shape != tr.sample_shape {
                return Err(Error::Parse(format!(
                    "csv splits disagree on feature count: {:?} vs {:?}",
                    tr.sample_shape, te.sample_shape
                )));
            }
            let classes = tr.classes.max(te.classes);
            let mut tr = tr;
            tr.classes = classes;
            te.classes = classes;
            Ok((tr, te))
        }
    }
}

/// Radius giving the inscribed circle half the square's area.
pub const CIRCLE_RADIUS: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gen_circle(count: usize, rng: &mut Rng) -> Dataset {
    let mut x = Vec::with_capacity(count * 2);
    let mut labels = Vec::with_capacity(count);
    for _ in 0..count {
        let a = rng.range(-1.0, 1.0);
        let b = rng.range(-1.0, 1.0);
        x.push(a);
        x.push(b);
        labels.push(usize::from(a * a + b * b < CIRCLE_RADIUS * CIRCLE_RADIUS));
    }
    Dataset {
        x,
        sample_shape: vec![2],
        labels,
        classes: 2,
    }
}

fn gen_xor(count: usize, rng: &mut Rng) -> Dataset {
    let mut x = Vec::with_capacity(count * 2);
    let mut labels = Vec::with_capacity(count);
    for _ in 0..count {
        let a = rng.range(-1.0, 1.0);
        let b = rng.range(-1.0, 1.0);
        x.push(a);
        x.push(b);
        labels.push(usize::from((a > 0.0) != (b > 0.0)));
    }
    Dataset {
        x,
        sample_shape: vec![2],
        labels,
        classes: 2,
    }
}

pub const SHAPES_SIDE: usize = 16;
const SHAPES_NOISE_STD: f64 = 0.1;

/// Renders one 16x16 shape image. Classes: 0 disk, 1 ring, 2 square, 3 cross.
fn render_shape(class: usize, cx: f64, cy: f64, scale: f64, img: &mut [f64]) {
    for i in 0..SHAPES_SIDE {
        for j in 0..SHAPES_SIDE {
            let dy = i as f64 - cy;
            let dx = j as f64 - cx;
            let r = (dx * dx + dy * dy).sqrt();
            let inside = match class {
                0 => r <= scale,
                1 => r <= scale && r >= 0.55 * scale,
                2 => dx.abs() <= 0.8 * scale && dy.abs() <= 0.8 * scale,
                3 => (dx.abs() <= 0.3 * scale || dy.abs() <= 0.3 * scale) && r <= 1.1 * scale,
                _ => unreachable!(),
            };
            img[i * SHAPES_SIDE + j] = f64::from(u8::from(inside));
        }
    }
}

/// Pixel mask of the most recent shape geometry (no noise), used by the
/// response-map qualitative check.
pub fn shape_mask(class: usize, cx: f64, cy: f64, scale: f64) -> Vec<bool> {
    let mut img = vec![0.0; SHAPES_SIDE * SHAPES_SIDE];
    render_shape(class, cx, cy, scale, &mut img);
    img.iter().map(|&v| v > 0.5).collect()
}

fn gen_shapes(count: usize, rng: &mut Rng) -> Dataset {
    let pixels = SHAPES_SIDE * SHAPES_SIDE;
    let mut x = Vec::with_capacity(count * pixels);
    let mut labels = Vec::with_capacity(count);
    let mut img = vec![0.0; pixels];
    for _ in 0..count {
        let class = rng.below(4) as usize;
        let cx = 7.5 + rng.range(-2.0, 2.0);
        let cy = 7.5 + rng.range(-2.0, 2.0);
        let scale = rng.range(4.0, 6.0);
        render_shape(class, cx, cy, scale, &mut img);
        for v in &img {
            x.push(v + SHAPES_NOISE_STD * rng.normal());
        }
        labels.push(class);
    }
    Dataset {
        x,
        sample_shape: vec![1, SHAPES_SIDE, SHAPES_SIDE],
        labels,
        classes: 4,
    }
}

/// Sampled geometry parameters for one shapes-style image, exposed so the
/// CLI can regenerate a sample together with its mask.
pub fn sample_shape_params(rng: &mut Rng) -> (usize, f64, f64, f64) {
    let class = rng.below(4) as usize;
    let cx = 7.5 + rng.range(-2.0, 2.0);
    let cy = 7.5 + rng.range(-2.0, 2.0);
    let scale = rng.range(4.0, 6.0);
    (class, cx, cy, scale)
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?
        .read_to_end(&mut bytes)?;
    Ok(bytes)
}

fn be_u32(bytes: &[u8], off: usize, path: &Path) -> Result<u32> {
    bytes
        .get(off..off + 4)
        .map(|s| u32::from_be_bytes(s.try_into().unwrap()))
        .ok_or_else(|| {
            Error::Parse(format!(
                "{}: truncated at byte {off} (expected 4 more)",
                path.display()
            ))
        })
}

/// Parses one IDX file of unsigned bytes, returning extents plus raw data.
fn parse_idx(path: &Path, expect_dims: usize) -> Result<(Vec<usize>, Vec<u8>)> {
    let bytes = read_file(path)?;
    let magic = be_u32(&bytes, 0, path)?;
    if magic >> 8 != 0x08 || bytes[0] != 0 || bytes[1] != 0 {
        return Err(Error::Parse(format!(
            "{}: bad IDX magic {magic:#010x} at byte 0 (expected unsigned-byte type 0x08)",
            path.display()
        )));
    }
    let ndims = (magic & 0xff) as usize;
    if ndims != expect_dims {
        return Err(Error::Parse(format!(
            "{}: {ndims} dimensions at byte 3, expected {expect_dims}",
            path.display()
        )));
    }
    let mut dims = Vec::with_capacity(ndims);
    for d in 0..ndims {
        dims.push(be_u32(&bytes, 4 + 4 * d, path)? as usize);
    }
    let header = 4 + 4 * ndims;
    let count: usize = dims.iter().product();
    if bytes.len() != header + count {
        return Err(Error::Parse(format!(
            "{}: {} data bytes at byte {header}, expected {count}",
            path.display(),
            bytes.len() - header
        )));
    }
    Ok((dims, bytes[header..].to_vec()))
}

fn load_idx_pair(images: &Path, labels: &Path) -> Result<Dataset> {
    let (idims, idata) = parse_idx(images, 3)?;
    let (ldims, ldata) = parse_idx(labels, 1)?;
    if idims[0] != ldims[0] {
        return Err(Error::Parse(format!(
            "{}: {} images but {} labels",
            images.display(),
            idims[0],
            ldims[0]
        )));
    }
    let labels: Vec<usize> = ldata.iter().map(|&b| b as usize).collect();
    let classes = labels.iter().copied().max().map_or(1, |m| m + 1);
    Ok(Dataset {
        x: idata.iter().map(|&b| f64::from(b) / 255.0).collect(),
        sample_shape: vec![1, idims[1], idims[2]],
        labels,
        classes,
    })
}

fn load_csv(path: &Path) -> Result<Dataset> {
    let text = String::from_utf8(read_file(path)?)
        .map_err(|e| Error::Parse(format!("{}: not UTF-8: {e}", path.display())))?;
    let mut x = Vec::new();
    let mut labels = Vec::new();
    let mut width: Option<usize> = None;
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 2 {
            return Err(Error::Parse(format!(
                "{} line {}: need at least one feature and a label",
                path.display(),
                lineno + 1
            )));
        }
        let nfeat = fields.len() - 1;
        match width {
            None => width = Some(nfeat),
            Some(w) if w != nfeat => {
                return Err(Error::Parse(format!(
                    "{} line {}: {nfeat} features, expected {w}",
                    path.display(),
                    lineno + 1
                )));
            }
            _ => {}
        }
        for field in &fields[..nfeat] {
            x.push(field.trim().parse::<f64>().map_err(|_| {
                Error::Parse(format!(
                    "{} line {}: non-numeric field '{field}'",
                    path.display(),
                    lineno + 1
                ))
            })?);
        }
        labels.push(fields[nfeat].trim().parse::<usize>().map_err(|_| {
            Error::Parse(format!(
                "{} line {}: non-integer label '{}'",
                path.display(),
                lineno + 1,
                fields[nfeat]
            ))
        })?);
    }
    let width = width
        .ok_or_else(|| Error::Parse(format!("{}: empty csv file", path.display())))?;
    let classes = labels.iter().copied().max().map_or(1, |m| m + 1);
    Ok(Dataset {
        x,
        sample_shape: vec![width],
        labels,
        classes,
    })
}

/// Per-feature affine normalization to zero mean / unit variance, fitted on
/// the training split and applied to both.
pub fn normalize(train: &mut Dataset, test: &mut Dataset) -> Result<()> {
    if train.sample_shape != test.sample_shape {
        return Err(Error::Shape("splits disagree on sample shape".into()));
    }
    let size = train.sample_size();
    let n = train.len();
    if n == 0 {
        return Err(Error::Domain("cannot normalize an empty training split".into()));
    }
    for j in 0..size {
        let mut sum = 0.0;
        for i in 0..n {
            sum += train.x[i * size + j];
        }
        let mean = sum / n as f64;
        let mut var = 0.0;
        for i in 0..n {
            let d = train.x[i * size + j] - mean;
            var += d * d;
        }
        let std = (var / n as f64).sqrt().max(1e-8);
        for i in 0..n {
            train.x[i * size + j] = (train.x[i * size + j] - mean) / std;
        }
        for i in 0..test.len() {
            test.x[i * size + j] = (test.x[i * size + j] - mean) / std;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn circle_is_balanced_and_sized() {
        let (train, test) = load_dataset(&DatasetSpec::SyntheticCircle {
            train: 1000,
            test: 200,
            seed: 7,
        })
        .unwrap();
        assert_eq!(train.len(), 1000);
        assert_eq!(test.len(), 200);
        let pos = train.labels.iter().filter(|&&l| l == 1).count();
        // Balanced within 10%.
        assert!((400..=600).contains(&pos), "positives: {pos}");
    }

    #[test]
    fn generators_are_deterministic() {
        let spec = DatasetSpec::SyntheticShapes {
            train: 50,
            test: 10,
            seed: 3,
        };
        let (a, _) = load_dataset(&spec).unwrap();
        let (b, _) = load_dataset(&spec).unwrap();
        assert_eq!(a.x, b.x);
        assert_eq!(a.labels, b.labels);
    }

    #[test]
    fn shapes_have_all_classes_and_shape() {
        let (train, _) = load_dataset(&DatasetSpec::SyntheticShapes {
            train: 200,
            test: 10,
            seed: 11,
        })
        .unwrap();
        assert_eq!(train.sample_shape, vec![1, 16, 16]);
        for class in 0..4 {
            assert!(train.labels.contains(&class));
        }
    }

    #[test]
    fn xor_quadrants_label_correctly() {
        let (train, _) = load_dataset(&DatasetSpec::SyntheticXor {
            train: 500,
            test: 10,
            seed: 2,
        })
        .unwrap();
        for i in 0..train.len() {
            let (a, b) = (train.x[2 * i], train.x[2 * i + 1]);
            assert_eq!(train.labels[i], usize::from((a > 0.0) != (b > 0.0)));
        }
    }

    #[test]
    fn normalization_zeroes_train_mean() {
        let (mut train, mut test) = load_dataset(&DatasetSpec::SyntheticCircle {
            train: 400,
            test: 100,
            seed: 5,
        })
        .unwrap();
        normalize(&mut train, &mut test).unwrap();
        for j in 0..2 {
            let mean: f64 =
                (0..train.len()).map(|i| train.x[i * 2 + j]).sum::<f64>() / train.len() as f64;
            assert!(mean.abs() < 1e-10);
            let var: f64 = (0..train.len())
                .map(|i| train.x[i * 2 + j] * train.x[i * 2 + j])
                .sum::<f64>()
                / train.len() as f64;
            assert!((var - 1.0).abs() < 1e-8);
        }
    }

    fn write_idx(path: &Path, dims: &[usize], data: &[u8]) {
        let mut bytes = vec![0, 0, 0x08, dims.len() as u8];
        for d in dims {
            bytes.extend_from_slice(&(*d as u32).to_be_bytes());
        }
        bytes.extend_from_slice(data);
        std::fs::write(path, bytes).unwrap();
    }

    #[test]
    fn idx_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("img.idx");
        let lab = dir.path().join("lab.idx");
        write_idx(&img, &[2, 2, 2], &[0, 51, 102, 153, 204, 255, 0, 128]);
        write_idx(&lab, &[2], &[1, 0]);
        let ds = load_idx_pair(&img, &lab).unwrap();
        assert_eq!(ds.sample_shape, vec![1, 2, 2]);
        assert_eq!(ds.labels, vec![1, 0]);
        assert!((ds.x[1] - 0.2).abs() < 1e-12);
        assert!((ds.x[5] - 1.0).abs() < 1e-12);

        // Wrong magic.
        std::fs::write(&img, [9, 9, 9, 9, 0, 0, 0, 0]).unwrap();
        let err = parse_idx(&img, 3).unwrap_err();
        assert!(err.to_string().contains("magic"), "{err}");

        // Truncated payload reports the byte position.
        write_idx(&lab, &[5], &[1, 0]);
        let err = parse_idx(&lab, 1).unwrap_err();
        assert!(err.to_string().contains("byte"), "{err}");
    }

    #[test]
    fn csv_parses_and_reports_bad_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.csv");
        std::fs::write(&path, "1.0,2.0,0\n-0.5,0.25,1\n").unwrap();
        let ds = load_csv(&path).unwrap();
        assert_eq!(ds.sample_shape, vec![2]);
        assert_eq!(ds.labels, vec![0, 1]);
        assert_eq!(ds.classes, 2);

        std::fs::write(&path, "1.0,oops,0\n").unwrap();
        let err = load_csv(&path).unwrap_err();
        assert!(err.to_string().contains("line 1"), "{err}");
    }
}
