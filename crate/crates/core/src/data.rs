//! Synthetic and file-backed datasets.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{norm2, Matrix};

/// Retained inputs have `‖x‖₂` at least this large.
pub const NORM_FLOOR: f64 = 1e-8;

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Normalization {
    None,
    /// Pixels divided by 255.
    PixelScale,
    /// Per-feature standardization with statistics from the train split.
    Standardized {
        mean: Vec<f64>,
        std: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    /// `n × M`
    pub inputs: Matrix,
    /// `n × N`
    pub targets: Matrix,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub one_hot: bool,
    pub normalization: Normalization,
    /// Samples dropped by the norm floor.
    pub excluded_zero_norm: usize,
}

impl Dataset {
    /// Builds a dataset with every sample in the train split. Rows with
    /// `‖x‖₂ < NORM_FLOOR` are dropped and counted.
    pub fn new(name: impl Into<String>, inputs: Matrix, targets: Matrix, one_hot: bool) -> Result<Self> {
        if inputs.rows() != targets.rows() {
            return Err(Error::shape("dataset targets", inputs.rows(), targets.rows()));
        }
        if inputs.rows() == 0 {
            return Err(Error::EmptySamples("dataset has no samples".into()));
        }
        if one_hot {
            for i in 0..targets.rows() {
                let row = targets.row(i);
                let ones = row.iter().filter(|&&v| v == 1.0).count();
                let zeros = row.iter().filter(|&&v| v == 0.0).count();
                if ones != 1 || ones + zeros != row.len() {
                    return Err(Error::Contract(format!("target row {i} is not one-hot")));
                }
            }
        }
        let keep: Vec<usize> = (0..inputs.rows())
            .filter(|&i| norm2(inputs.row(i)) >= NORM_FLOOR)
            .collect();
        let excluded = inputs.rows() - keep.len();
        if keep.is_empty() {
            return Err(Error::EmptySamples("every sample is below the norm floor".into()));
        }
        let (inputs, targets) = if excluded > 0 {
            (select_rows(&inputs, &keep), select_rows(&targets, &keep))
        } else {
            (inputs, targets)
        };
        Ok(Self {
            name: name.into(),
            train: (0..inputs.rows()).collect(),
            test: Vec::new(),
            inputs,
            targets,
            one_hot,
            normalization: Normalization::None,
            excluded_zero_norm: excluded,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.targets.cols()
    }

    pub fn x(&self, i: usize) -> &[f64] {
        self.inputs.row(i)
    }

    pub fn y(&self, i: usize) -> &[f64] {
        self.targets.row(i)
    }

    /// Class index (argmax of the target row).
    pub fn label(&self, i: usize) -> usize {
        argmax(self.targets.row(i))
    }

    /// Reassigns a random `test_fraction` of samples to the test split,
    /// stratified by class for one-hot targets.
    pub fn with_split(mut self, test_fraction: f64, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&test_fraction) {
            return Err(Error::config("test_fraction", "must lie in [0, 1)"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let groups: Vec<Vec<usize>> = if self.one_hot {
            let mut g = vec![Vec::new(); self.output_dim()];
            for i in 0..self.len() {
                g[self.label(i)].push(i);
            }
            g
        } else {
            vec![(0..self.len()).collect()]
        };
        let mut train = Vec::new();
        let mut test = Vec::new();
        for mut g in groups {
            g.shuffle(&mut rng);
            let n_test = (g.len() as f64 * test_fraction).round() as usize;
            test.extend_from_slice(&g[..n_test]);
            train.extend_from_slice(&g[n_test..]);
        }
        train.sort_unstable();
        test.sort_unstable();
        if train.is_empty() {
            return Err(Error::EmptySamples("train split is empty".into()));
        }
        self.train = train;
        self.test = test;
        Ok(self)
    }

    /// Standardizes every feature with train-split statistics. Constant
    /// features are centred only. Samples falling under the norm floor are dropped.
    pub fn standardize(self) -> Result<Self> {
        let m = self.input_dim();
        let n = self.train.len() as f64;
        let mut mean = vec![0.0; m];
        for &i in &self.train {
            mean.iter_mut().zip(self.x(i)).for_each(|(a, v)| *a += v / n);
        }
        let mut var = vec![0.0; m];
        for &i in &self.train {
            var.iter_mut()
                .zip(self.x(i))
                .zip(&mean)
                .for_each(|((a, v), mu)| *a += (v - mu).powi(2) / n);
        }
        let std: Vec<f64> = var.iter().map(|v| if *v > 0.0 { v.sqrt() } else { 1.0 }).collect();
        let mut inputs = self.inputs.clone();
        for i in 0..inputs.rows() {
            for ((v, mu), s) in inputs.row_mut(i).iter_mut().zip(&mean).zip(&std) {
                *v = (*v - mu) / s;
            }
        }
        let (train, test) = (self.train.clone(), self.test.clone());
        let mut out = Dataset::new(self.name.clone(), inputs, self.targets.clone(), self.one_hot)?;
        if out.excluded_zero_norm > 0 {
            // Dropping rows shifts indices; rebuild the split by original position.
            let kept: Vec<usize> = (0..self.len())
                .filter(|&i| {
                    let row: Vec<f64> = self
                        .x(i)
                        .iter()
                        .zip(&mean)
                        .zip(&std)
                        .map(|((v, mu), s)| (v - mu) / s)
                        .collect();
                    norm2(&row) >= NORM_FLOOR
                })
                .collect();
            let remap =
                |ids: &[usize]| -> Vec<usize> { ids.iter().filter_map(|i| kept.binary_search(i).ok()).collect() };
            out.train = remap(&train);
            out.test = remap(&test);
        } else {
            out.train = train;
            out.test = test;
        }
        out.excluded_zero_norm += self.excluded_zero_norm;
        out.normalization = Normalization::Standardized { mean, std };
        Ok(out)
    }
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn select_rows(m: &Matrix, rows: &[usize]) -> Matrix {
    let data = rows.iter().flat_map(|&i| m.row(i).iter().copied()).collect();
    Matrix::from_vec_unchecked(rows.len(), m.cols(), data)
}

/// `classes` Gaussian blobs with means `separation·e_c` and unit covariance.
/// Samples are ordered class by class.
pub fn synth_gaussian_mixture(
    n_per_class: usize,
    classes: usize,
    dim: usize,
    separation: f64,
    seed: u64,
) -> Result<Dataset> {
    if n_per_class == 0 || classes == 0 {
        return Err(Error::EmptySamples("synthetic mixture with no samples".into()));
    }
    if dim < classes {
        return Err(Error::config(
            "dim",
            format!("must be at least the class count {classes}"),
        ));
    }
    if !separation.is_finite() {
        return Err(Error::config("separation", "must be finite"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = n_per_class * classes;
    let mut inputs = Vec::with_capacity(n * dim);
    let mut targets = vec![0.0; n * classes];
    for c in 0..classes {
        for k in 0..n_per_class {
            for d in 0..dim {
                let z: f64 = StandardNormal.sample(&mut rng);
                inputs.push(z + if d == c { separation } else { 0.0 });
            }
            targets[(c * n_per_class + k) * classes + c] = 1.0;
        }
    }
    Dataset::new(
        format!("gauss{classes}x{dim}"),
        Matrix::from_vec_unchecked(n, dim, inputs),
        Matrix::from_vec_unchecked(n, classes, targets),
        true,
    )
}

/// Reads an IDX image/label pair. Pixels are scaled to `[0, 1]`; targets are
/// one-hot over `classes_filter` (sorted) or over all ten digits.
pub fn load_idx_images(
    image_path: &Path,
    label_path: &Path,
    limit: Option<usize>,
    classes_filter: Option<&[u8]>,
) -> Result<Dataset> {
    let images = std::fs::read(image_path).map_err(|e| Error::io(image_path, e))?;
    let labels = std::fs::read(label_path).map_err(|e| Error::io(label_path, e))?;

    let (img_dims, img_body) = parse_idx(image_path, &images, IDX_IMAGES_MAGIC, 3)?;
    let (lab_dims, lab_body) = parse_idx(label_path, &labels, IDX_LABELS_MAGIC, 1)?;
    let (count, rows, cols) = (img_dims[0], img_dims[1], img_dims[2]);
    if count != lab_dims[0] {
        return Err(Error::CountMismatch {
            images: count,
            labels: lab_dims[0],
        });
    }
    let pixels = rows * cols;

    let classes: Vec<u8> = match classes_filter {
        Some(f) => f.iter().copied().collect::<BTreeSet<_>>().into_iter().collect(),
        None => (0..10).collect(),
    };
    if classes.is_empty() {
        return Err(Error::config("classes_filter", "must name at least one class"));
    }
    let mut inputs = Vec::new();
    let mut targets = Vec::new();
    let mut n = 0;
    for i in 0..count {
        if limit.is_some_and(|l| n >= l) {
            break;
        }
        let label = lab_body[i];
        let Ok(class) = classes.binary_search(&label) else {
            if classes_filter.is_none() {
                return Err(Error::Format {
                    path: label_path.to_path_buf(),
                    offset: 8 + i as u64,
                    reason: format!("label {label} outside 0..=9"),
                });
            }
            continue;
        };
        inputs.extend(img_body[i * pixels..(i + 1) * pixels].iter().map(|&p| p as f64 / 255.0));
        let mut t = vec![0.0; classes.len()];
        t[class] = 1.0;
        targets.extend(t);
        n += 1;
    }
    if n == 0 {
        return Err(Error::EmptySamples(format!(
            "no samples selected from {}",
            image_path.display()
        )));
    }
    let mut ds = Dataset::new(
        image_path
            .file_stem()
            .map_or("idx".into(), |s| s.to_string_lossy().into_owned()),
        Matrix::from_vec_unchecked(n, pixels, inputs),
        Matrix::from_vec_unchecked(n, classes.len(), targets),
        true,
    )?;
    ds.normalization = Normalization::PixelScale;
    Ok(ds)
}

/// Validates magic and dimensions, returning `(dims, body)`.
fn parse_idx<'a>(path: &Path, bytes: &'a [u8], magic: u32, ndims: usize) -> Result<(Vec<usize>, &'a [u8])> {
    let header = 4 + 4 * ndims;
    if bytes.len() < 4 {
        return Err(truncated(path, header, bytes.len()));
    }
    let found = u32::from_be_bytes(bytes[..4].try_into().expect("4 bytes"));
    if found != magic {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: 0,
            reason: format!("bad magic 0x{found:08x}, expected 0x{magic:08x}"),
        });
    }
    if bytes.len() < header {
        return Err(truncated(path, header, bytes.len()));
    }
    let dims: Vec<usize> = (0..ndims)
        .map(|k| u32::from_be_bytes(bytes[4 + 4 * k..8 + 4 * k].try_into().expect("4 bytes")) as usize)
        .collect();
    let body_len: usize = dims.iter().product();
    if bytes.len() < header + body_len {
        return Err(truncated(path, header + body_len, bytes.len()));
    }
    Ok((dims, &bytes[header..header + body_len]))
}

fn truncated(path: &Path, expected: usize, found: usize) -> Error {
    Error::Truncated {
        path: PathBuf::from(path),
        expected: expected as u64,
        found: found as u64,
    }
}

/// CSV with a header row; the last `n_targets` columns are targets.
pub fn load_csv(path: &Path, n_targets: usize, one_hot: bool) -> Result<Dataset> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Format {
            path: path.to_path_buf(),
            offset: 0,
            reason: format!("{other:?}"),
        },
    })?;
    let width = reader.headers()?.len();
    if n_targets == 0 || n_targets >= width {
        return Err(Error::config("n_targets", format!("must be in 1..{width}")));
    }
    let m = width - n_targets;
    let mut inputs = Vec::new();
    let mut targets = Vec::new();
    let mut n = 0;
    for rec in reader.records() {
        let rec = rec?;
        let offset = rec.position().map_or(0, |p| p.byte());
        if rec.len() != width {
            return Err(Error::Format {
                path: path.to_path_buf(),
                offset,
                reason: format!("expected {width} fields, found {}", rec.len()),
            });
        }
        for (k, field) in rec.iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| Error::Format {
                path: path.to_path_buf(),
                offset,
                reason: format!("field {k} is not a number: {field:?}"),
            })?;
            if !v.is_finite() {
                return Err(Error::Format {
                    path: path.to_path_buf(),
                    offset,
                    reason: format!("field {k} is not finite"),
                });
            }
            if k < m {
                inputs.push(v);
            } else {
                targets.push(v);
            }
        }
        n += 1;
    }
    Dataset::new(
        path.file_stem()
            .map_or("csv".into(), |s| s.to_string_lossy().into_owned()),
        Matrix::from_vec_unchecked(n, m, inputs),
        Matrix::from_vec_unchecked(n, n_targets, targets),
        one_hot,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn idx_images(n: u32, rows: u32, cols: u32, magic: u32) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend(magic.to_be_bytes());
        b.extend(n.to_be_bytes());
        b.extend(rows.to_be_bytes());
        b.extend(cols.to_be_bytes());
        b.extend((0..n * rows * cols).map(|i| (i % 256) as u8 | 1));
        b
    }

    fn idx_labels(labels: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend(IDX_LABELS_MAGIC.to_be_bytes());
        b.extend((labels.len() as u32).to_be_bytes());
        b.extend(labels);
        b
    }

    fn write(dir: &Path, name: &str, bytes: &[u8]) -> PathBuf {
        let p = dir.join(name);
        std::fs::File::create(&p).unwrap().write_all(bytes).unwrap();
        p
    }

    #[test]
    fn idx_fixture_loads() {
        let dir = tempfile::tempdir().unwrap();
        let img = write(dir.path(), "img", &idx_images(4, 2, 3, IDX_IMAGES_MAGIC));
        let lab = write(dir.path(), "lab", &idx_labels(&[0, 1, 2, 1]));
        let ds = load_idx_images(&img, &lab, None, None).unwrap();
        assert_eq!((ds.len(), ds.input_dim(), ds.output_dim()), (4, 6, 10));
        assert_eq!(ds.x(0)[0], 1.0 / 255.0);
        assert_eq!(ds.label(2), 2);
        assert!(ds.inputs.data().iter().all(|&v| (0.0..=1.0).contains(&v)));

        let filtered = load_idx_images(&img, &lab, None, Some(&[1, 0])).unwrap();
        assert_eq!((filtered.len(), filtered.output_dim()), (3, 2));
        assert_eq!(filtered.label(1), 1);

        let limited = load_idx_images(&img, &lab, Some(2), None).unwrap();
        assert_eq!(limited.len(), 2);
    }

    #[test]
    fn idx_errors_are_distinct() {
        let dir = tempfile::tempdir().unwrap();
        let lab = write(dir.path(), "lab", &idx_labels(&[0, 1, 2, 1]));
        let bad = write(dir.path(), "bad", &idx_images(4, 2, 3, 0x0000_0802));
        match load_idx_images(&bad, &lab, None, None) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("{other:?}"),
        }
        let mut short = idx_images(4, 2, 3, IDX_IMAGES_MAGIC);
        short.truncate(20);
        let short = write(dir.path(), "short", &short);
        assert!(matches!(
            load_idx_images(&short, &lab, None, None),
            Err(Error::Truncated { .. })
        ));
        let img3 = write(dir.path(), "img3", &idx_images(3, 2, 3, IDX_IMAGES_MAGIC));
        assert!(matches!(
            load_idx_images(&img3, &lab, None, None),
            Err(Error::CountMismatch { images: 3, labels: 4 })
        ));
        assert!(matches!(
            load_idx_images(&dir.path().join("missing"), &lab, None, None),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn mixture_is_deterministic_and_validated() {
        let a = synth_gaussian_mixture(5, 2, 3, 4.0, 7).unwrap();
        let b = synth_gaussian_mixture(5, 2, 3, 4.0, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 10);
        assert!(matches!(
            synth_gaussian_mixture(0, 2, 3, 1.0, 0),
            Err(Error::EmptySamples(_))
        ));
        assert!(synth_gaussian_mixture(5, 3, 2, 1.0, 0).is_err());
    }

    #[test]
    fn split_is_disjoint_and_covering() {
        let ds = synth_gaussian_mixture(20, 2, 2, 3.0, 1)
            .unwrap()
            .with_split(0.25, 9)
            .unwrap();
        assert_eq!(ds.test.len(), 10);
        let all: BTreeSet<usize> = ds.train.iter().chain(&ds.test).copied().collect();
        assert_eq!(all.len(), 40);
    }

    #[test]
    fn zero_rows_are_excluded() {
        let x = Matrix::from_rows(&[vec![0.0, 0.0], vec![1.0, 0.0]]).unwrap();
        let y = Matrix::from_rows(&[vec![1.0], vec![0.0]]).unwrap();
        let ds = Dataset::new("t", x, y, false).unwrap();
        assert_eq!((ds.len(), ds.excluded_zero_norm), (1, 1));
    }

    #[test]
    fn csv_import() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "d.csv", b"a,b,t0,t1\n1,2,1,0\n3,4,0,1\n");
        let ds = load_csv(&p, 2, true).unwrap();
        assert_eq!((ds.len(), ds.input_dim(), ds.output_dim()), (2, 2, 2));
        assert_eq!(ds.label(1), 1);
        let bad = write(dir.path(), "e.csv", b"a,t\n1,x\n");
        assert!(matches!(load_csv(&bad, 1, false), Err(Error::Format { .. })));
    }

    #[test]
    fn standardize_uses_train_stats() {
        let ds = synth_gaussian_mixture(10, 2, 2, 3.0, 2).unwrap().standardize().unwrap();
        let mean0: f64 = (0..ds.len()).map(|i| ds.x(i)[0]).sum::<f64>() / ds.len() as f64;
        assert!(mean0.abs() < 1e-12);
    }
}
