//! Datasets: MNIST IDX files, the synthetic binary task, splits and batches.

use std::io::{Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, ImbError, Result};
use crate::exact::{state_bits, InputJoint};
use crate::math::Matrix;
use crate::rng::{stream, Purpose};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
pub const MAX_TASK_BITS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Mnist,
    Synthetic,
    Custom,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// `N x d`, entries in `[0, 1]`.
    pub inputs: Matrix,
    pub labels: Vec<usize>,
    pub n_classes: usize,
    pub provenance: Provenance,
    /// Population joint `p(x, y)` when the input space is enumerated.
    pub joint: Option<InputJoint>,
}

impl Dataset {
    pub fn new(inputs: Matrix, labels: Vec<usize>, n_classes: usize, provenance: Provenance) -> Result<Self> {
        let ds = Dataset {
            inputs,
            labels,
            n_classes,
            provenance,
            joint: None,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.len() > 0, Contract, "dataset is empty");
        ensure!(
            self.labels.len() == self.inputs.rows,
            Contract,
            "{} labels for {} inputs",
            self.labels.len(),
            self.inputs.rows
        );
        if let Some(i) = self.labels.iter().position(|&y| y >= self.n_classes) {
            return Err(ImbError::Contract(format!(
                "label {} at row {} outside {} classes",
                self.labels[i], i, self.n_classes
            )));
        }
        if let Some(i) = self.inputs.data.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(ImbError::Contract(format!(
                "input value {} at row {} outside [0, 1]",
                self.inputs.data[i],
                i / self.inputs.cols.max(1)
            )));
        }
        if let Some(joint) = &self.joint {
            joint.validate()?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.cols
    }

    pub fn input(&self, i: usize) -> &[f64] {
        self.inputs.row(i)
    }

    /// Rows in the given order. The population joint is carried over unchanged.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        let mut inputs = Matrix::zeros(indices.len(), self.dim());
        for (dst, &src) in indices.iter().enumerate() {
            inputs.row_mut(dst).copy_from_slice(self.input(src));
        }
        Dataset {
            inputs,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            n_classes: self.n_classes,
            provenance: self.provenance,
            joint: self.joint.clone(),
        }
    }

    /// The first `n` rows (all rows if `n >= len`).
    pub fn head(&self, n: usize) -> Dataset {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.select(&idx)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    /// CSV with header `x_0,...,x_{d-1},y`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let header: Vec<String> = (0..self.dim()).map(|i| format!("x_{i}")).collect();
        writeln!(out, "{},y", header.join(","))?;
        for (i, &y) in self.labels.iter().enumerate() {
            for v in self.input(i) {
                write!(out, "{v},")?;
            }
            writeln!(out, "{y}")?;
        }
        Ok(())
    }
}

/// Reads a CSV with header `x_0,...,x_{d-1},y`; values in `[0, 1]`, integer labels.
pub fn load_csv(path: impl AsRef<Path>, n_classes: Option<usize>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| ImbError::io(path, e))?;
    let mut offset = 0u64;
    let mut lines = text.split_inclusive('\n');
    let header = lines.next().unwrap_or("").trim_end();
    let cols: Vec<&str> = header.split(',').collect();
    let d = cols.len().saturating_sub(1);
    let valid = cols.last() == Some(&"y") && cols[..d].iter().enumerate().all(|(i, c)| *c == format!("x_{i}"));
    if !valid || d == 0 {
        return Err(parse_err(path, 0, "header must read x_0,...,x_{d-1},y"));
    }
    offset += header.len() as u64 + 1;
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for line in lines {
        let row = line.trim_end();
        if !row.is_empty() {
            let fields: Vec<&str> = row.split(',').collect();
            if fields.len() != d + 1 {
                return Err(parse_err(path, offset, format!("expected {} fields, found {}", d + 1, fields.len())));
            }
            for f in &fields[..d] {
                data.push(f.parse::<f64>().map_err(|_| parse_err(path, offset, format!("bad value `{f}`")))?);
            }
            let y = fields[d];
            labels.push(y.parse::<usize>().map_err(|_| parse_err(path, offset, format!("bad label `{y}`")))?);
        }
        offset += line.len() as u64;
    }
    let n_classes = n_classes.unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1));
    let inputs = Matrix {
        rows: labels.len(),
        cols: d,
        data,
    };
    Dataset::new(inputs, labels, n_classes, Provenance::Custom)
}

/// How labels of the synthetic task are assigned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LabelRule {
    /// Uniformly random balanced partition of the patterns.
    #[default]
    Partition,
    /// Patterns ranked by a seeded score with linear and pairwise terms;
    /// the upper half gets label 1.
    Ranked,
}

/// All `2^n_bits` binary patterns, uniform `p(x)`, exactly balanced labels.
///
/// Bit `i` of pattern `k` is input `x_i`.
pub fn gen_binary_task(seed: u64, n_bits: usize, rule: LabelRule) -> Result<Dataset> {
    ensure!(
        (1..=MAX_TASK_BITS).contains(&n_bits),
        Contract,
        "n_bits must lie in 1..={}, got {}",
        MAX_TASK_BITS,
        n_bits
    );
    let n = 1usize << n_bits;
    let mut rng = stream(seed, Purpose::Labels, &[n_bits as u64]);
    let order: Vec<usize> = match rule {
        LabelRule::Partition => {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut rng);
            idx
        }
        LabelRule::Ranked => {
            let linear: Vec<f64> = (0..n_bits).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let pair: Vec<f64> = (0..n_bits * n_bits).map(|_| 0.5 * rng.gen_range(-1.0..1.0)).collect();
            let score = |k: usize| {
                let bits = state_bits(k, n_bits);
                let mut s = 0.0;
                for i in 0..n_bits {
                    s += linear[i] * bits[i];
                    for j in i + 1..n_bits {
                        s += pair[i * n_bits + j] * bits[i] * bits[j];
                    }
                }
                s
            };
            let mut keyed: Vec<(f64, usize)> = (0..n).map(|k| (score(k), k)).collect();
            keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            keyed.into_iter().map(|(_, k)| k).collect()
        }
    };
    let mut labels = vec![0usize; n];
    for &k in &order[n / 2..] {
        labels[k] = 1;
    }
    let rows: Vec<Vec<f64>> = (0..n).map(|k| state_bits(k, n_bits)).collect();
    let inputs = Matrix::from_rows(&rows);
    let mut pxy = Matrix::zeros(n, 2);
    for (k, &y) in labels.iter().enumerate() {
        pxy.set(k, y, 1.0 / n as f64);
    }
    let ds = Dataset {
        inputs,
        labels,
        n_classes: 2,
        provenance: Provenance::Synthetic,
        joint: Some(InputJoint { inputs: rows, pxy }),
    };
    ds.validate()?;
    Ok(ds)
}

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = std::fs::read(path).map_err(|e| ImbError::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| ImbError::io(path, e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn parse_err(path: &Path, offset: u64, message: impl Into<String>) -> ImbError {
    ImbError::Parse {
        offset,
        message: format!("{}: {}", path.display(), message.into()),
    }
}

fn be_u32(bytes: &[u8], offset: usize, path: &Path, what: &str) -> Result<u32> {
    match bytes.get(offset..offset + 4) {
        Some(b) => Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]])),
        None => Err(parse_err(path, offset as u64, format!("truncated header while reading {what}"))),
    }
}

struct IdxImages {
    count: usize,
    rows: usize,
    cols: usize,
    pixels: Vec<u8>,
}

fn parse_images(bytes: &[u8], path: &Path) -> Result<IdxImages> {
    let magic = be_u32(bytes, 0, path, "magic")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(parse_err(path, 0, format!("bad magic 0x{magic:08x}, expected 0x{IDX_IMAGES_MAGIC:08x}")));
    }
    let count = be_u32(bytes, 4, path, "image count")? as usize;
    let rows = be_u32(bytes, 8, path, "row count")? as usize;
    let cols = be_u32(bytes, 12, path, "column count")? as usize;
    let need = count * rows * cols;
    let payload = &bytes[16..];
    if payload.len() < need {
        return Err(parse_err(
            path,
            bytes.len() as u64,
            format!("truncated payload: {need} pixel bytes declared, {} present", payload.len()),
        ));
    }
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels: payload[..need].to_vec(),
    })
}

fn parse_labels(bytes: &[u8], path: &Path) -> Result<Vec<u8>> {
    let magic = be_u32(bytes, 0, path, "magic")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(parse_err(path, 0, format!("bad magic 0x{magic:08x}, expected 0x{IDX_LABELS_MAGIC:08x}")));
    }
    let count = be_u32(bytes, 4, path, "label count")? as usize;
    let payload = &bytes[8..];
    if payload.len() < count {
        return Err(parse_err(
            path,
            bytes.len() as u64,
            format!("truncated payload: {count} labels declared, {} present", payload.len()),
        ));
    }
    Ok(payload[..count].to_vec())
}

/// Loads an IDX image/label pair (plain or gzip). Pixels are scaled by `1/255`.
pub fn load_mnist_idx(image_path: impl AsRef<Path>, label_path: impl AsRef<Path>) -> Result<Dataset> {
    let (image_path, label_path) = (image_path.as_ref(), label_path.as_ref());
    let images = parse_images(&read_maybe_gz(image_path)?, image_path)?;
    let labels = parse_labels(&read_maybe_gz(label_path)?, label_path)?;
    if labels.len() != images.count {
        return Err(parse_err(
            label_path,
            4,
            format!("label count {} does not match image count {}", labels.len(), images.count),
        ));
    }
    ensure!(images.count > 0, Contract, "{} holds no images", image_path.display());
    if let Some(i) = labels.iter().position(|&y| y > 9) {
        return Err(parse_err(label_path, 8 + i as u64, format!("label {} outside 0..=9", labels[i])));
    }
    let d = images.rows * images.cols;
    let inputs = Matrix {
        rows: images.count,
        cols: d,
        data: images.pixels.iter().map(|&b| f64::from(b) / 255.0).collect(),
    };
    Dataset::new(inputs, labels.into_iter().map(usize::from).collect(), 10, Provenance::Mnist)
}

/// Writes an uncompressed IDX image file (test fixtures, exports).
pub fn write_idx_images<W: Write>(mut out: W, rows: usize, cols: usize, pixels: &[u8]) -> std::io::Result<()> {
    let count = pixels.len() / (rows * cols).max(1);
    out.write_all(&IDX_IMAGES_MAGIC.to_be_bytes())?;
    for v in [count, rows, cols] {
        out.write_all(&(v as u32).to_be_bytes())?;
    }
    out.write_all(pixels)
}

pub fn write_idx_labels<W: Write>(mut out: W, labels: &[u8]) -> std::io::Result<()> {
    out.write_all(&IDX_LABELS_MAGIC.to_be_bytes())?;
    out.write_all(&(labels.len() as u32).to_be_bytes())?;
    out.write_all(labels)
}

/// Standard file names inside an MNIST directory, gzipped or not.
pub fn mnist_files(dir: &Path, train: bool) -> (std::path::PathBuf, std::path::PathBuf) {
    let prefix = if train { "train" } else { "t10k" };
    let pick = |stem: String| {
        let plain = dir.join(&stem);
        let gz = dir.join(format!("{stem}.gz"));
        if !plain.exists() && gz.exists() {
            gz
        } else {
            plain
        }
    };
    (
        pick(format!("{prefix}-images-idx3-ubyte")),
        pick(format!("{prefix}-labels-idx1-ubyte")),
    )
}

pub fn load_mnist_dir(dir: impl AsRef<Path>, train: bool) -> Result<Dataset> {
    let (images, labels) = mnist_files(dir.as_ref(), train);
    load_mnist_idx(images, labels)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SplitRule {
    /// The last rows become the holdout.
    #[default]
    Tail,
    /// Seeded shuffle, then split.
    Shuffled,
}

/// Train size for a holdout fraction: `ceil((1 - fraction) * n)`.
pub fn train_size(n: usize, holdout_fraction: f64) -> usize {
    // the small slack keeps exact products such as 5/6 * 60000 from rounding up
    (((1.0 - holdout_fraction) * n as f64) - 1e-9).ceil().max(0.0) as usize
}

pub fn split(dataset: &Dataset, holdout_fraction: f64, rule: SplitRule, seed: u64) -> Result<(Dataset, Dataset)> {
    ensure!(
        (0.0..1.0).contains(&holdout_fraction),
        Contract,
        "holdout fraction {} outside [0, 1)",
        holdout_fraction
    );
    let n = dataset.len();
    let mut order: Vec<usize> = (0..n).collect();
    if rule == SplitRule::Shuffled {
        order.shuffle(&mut stream(seed, Purpose::Split, &[]));
    }
    let n_train = train_size(n, holdout_fraction).min(n);
    Ok((dataset.select(&order[..n_train]), dataset.select(&order[n_train..])))
}

/// Seeded per-epoch minibatch plan over `n` training rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Batches {
    pub n: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Batches {
    pub fn new(n: usize, batch_size: usize, seed: u64) -> Result<Self> {
        ensure!(n > 0, Contract, "cannot batch an empty training set");
        ensure!(batch_size > 0, Config, "batch_size must be positive");
        let mut effective = batch_size;
        if batch_size > n {
            log::warn!("batch_size {batch_size} exceeds the {n} training rows, using one full batch");
            effective = n;
        }
        Ok(Batches {
            n,
            batch_size: effective,
            seed,
        })
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.n.div_ceil(self.batch_size)
    }

    /// Row indices per batch for one epoch; every row appears exactly once.
    pub fn epoch(&self, epoch: usize) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..self.n).collect();
        order.shuffle(&mut stream(self.seed, Purpose::Shuffle, &[epoch as u64]));
        order.chunks(self.batch_size).map(<[usize]>::to_vec).collect()
    }
}

/// Splits, then plans batches over the training part.
pub fn split_and_batch(
    dataset: &Dataset,
    holdout_fraction: f64,
    rule: SplitRule,
    batch_size: usize,
    seed: u64,
) -> Result<(Dataset, Dataset, Batches)> {
    let (train, holdout) = split(dataset, holdout_fraction, rule, seed)?;
    let batches = Batches::new(train.len(), batch_size, seed)?;
    Ok((train, holdout, batches))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn binary_task_shapes_and_balance() {
        for rule in [LabelRule::Partition, LabelRule::Ranked] {
            let ds = gen_binary_task(3, 12, rule).unwrap();
            assert_eq!(ds.len(), 4096);
            assert_eq!(ds.dim(), 12);
            assert_eq!(ds.class_counts(), vec![2048, 2048]);
            let joint = ds.joint.as_ref().unwrap();
            assert!((joint.pxy.data.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for (k, &y) in ds.labels.iter().enumerate() {
                assert_eq!(joint.pxy.get(k, y), 1.0 / 4096.0);
            }
        }
        let one = gen_binary_task(0, 1, LabelRule::Partition).unwrap();
        assert_eq!(one.class_counts(), vec![1, 1]);
        assert!(gen_binary_task(0, 21, LabelRule::Partition).is_err());
    }

    #[test]
    fn binary_task_is_deterministic_in_seed() {
        let a = gen_binary_task(9, 10, LabelRule::Partition).unwrap();
        let b = gen_binary_task(9, 10, LabelRule::Partition).unwrap();
        let c = gen_binary_task(10, 10, LabelRule::Partition).unwrap();
        assert_eq!(a.labels, b.labels);
        assert_ne!(a.labels, c.labels);
    }

    fn fixture(dir: &Path, pixels: &[u8], rows: usize, cols: usize, labels: &[u8]) -> (std::path::PathBuf, std::path::PathBuf) {
        let ip = dir.join("img.idx");
        let lp = dir.join("lab.idx");
        write_idx_images(std::fs::File::create(&ip).unwrap(), rows, cols, pixels).unwrap();
        write_idx_labels(std::fs::File::create(&lp).unwrap(), labels).unwrap();
        (ip, lp)
    }

    #[test]
    fn single_image_fixture() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = fixture(dir.path(), &[0; 784], 28, 28, &[7]);
        let ds = load_mnist_idx(&ip, &lp).unwrap();
        assert_eq!((ds.len(), ds.dim(), ds.n_classes), (1, 784, 10));
        assert!(ds.input(0).iter().all(|&v| v == 0.0));
        assert_eq!(ds.labels, vec![7]);
    }

    #[test]
    fn idx_roundtrip_preserves_payload() {
        let dir = tempfile::tempdir().unwrap();
        let pixels: Vec<u8> = (0..3 * 4 * 5).map(|i| (i * 37 % 256) as u8).collect();
        let (ip, lp) = fixture(dir.path(), &pixels, 4, 5, &[1, 2, 3]);
        let ds = load_mnist_idx(&ip, &lp).unwrap();
        let back: Vec<u8> = ds.inputs.data.iter().map(|v| (v * 255.0).round() as u8).collect();
        assert_eq!(back, pixels);
    }

    #[test]
    fn idx_errors_carry_offsets() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = fixture(dir.path(), &[0; 4], 2, 2, &[1]);
        let bad = dir.path().join("bad.idx");
        std::fs::write(&bad, [0u8; 16]).unwrap();
        match load_mnist_idx(&bad, &lp) {
            Err(ImbError::Parse { offset: 0, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        let mut truncated = std::fs::read(&ip).unwrap();
        truncated.pop();
        std::fs::write(&bad, &truncated).unwrap();
        assert!(matches!(load_mnist_idx(&bad, &lp), Err(ImbError::Parse { offset: 19, .. })));
        let two = dir.path().join("two.idx");
        write_idx_labels(std::fs::File::create(&two).unwrap(), &[1, 2]).unwrap();
        assert!(matches!(load_mnist_idx(&ip, &two), Err(ImbError::Parse { offset: 4, .. })));
    }

    #[test]
    fn gzip_files_are_read() {
        let dir = tempfile::tempdir().unwrap();
        let write_gz = |name: &str, bytes: Vec<u8>| {
            let p = dir.path().join(name);
            let mut enc = flate2::write::GzEncoder::new(std::fs::File::create(&p).unwrap(), flate2::Compression::default());
            enc.write_all(&bytes).unwrap();
            enc.finish().unwrap();
        };
        let mut img = Vec::new();
        write_idx_images(&mut img, 1, 2, &[255, 0]).unwrap();
        let mut lab = Vec::new();
        write_idx_labels(&mut lab, &[4]).unwrap();
        write_gz("train-images-idx3-ubyte.gz", img);
        write_gz("train-labels-idx1-ubyte.gz", lab);
        let ds = load_mnist_dir(dir.path(), true).unwrap();
        assert_eq!(ds.input(0), &[1.0, 0.0]);
        assert_eq!(ds.labels, vec![4]);
    }

    #[test]
    fn split_rounding_rules() {
        assert_eq!(train_size(60000, 1.0 / 6.0), 50000);
        assert_eq!(train_size(4096, 0.2), 3277);
        assert_eq!(train_size(10, 0.0), 10);
        let ds = Dataset::new(
            Matrix::from_rows(&(0..12).map(|i| vec![i as f64 / 12.0]).collect::<Vec<_>>()),
            vec![0; 12],
            1,
            Provenance::Custom,
        )
        .unwrap();
        let (train, hold) = split(&ds, 0.25, SplitRule::Tail, 0).unwrap();
        assert_eq!(train.len(), 9);
        assert_eq!(hold.inputs.data, vec![9.0 / 12.0, 10.0 / 12.0, 11.0 / 12.0]);
        let (_, empty) = split(&ds, 0.0, SplitRule::Shuffled, 0).unwrap();
        assert!(empty.is_empty());
        assert!(split(&ds, 1.0, SplitRule::Tail, 0).is_err());
    }

    #[test]
    fn batches_cover_each_row_once() {
        let b = Batches::new(103, 10, 4).unwrap();
        for epoch in 0..3 {
            let batches = b.epoch(epoch);
            assert_eq!(batches.len(), 11);
            let all: Vec<usize> = batches.concat();
            let set: BTreeSet<usize> = all.iter().copied().collect();
            assert_eq!(all.len(), 103);
            assert_eq!(set.len(), 103);
        }
        assert_ne!(b.epoch(0), b.epoch(1));
        let big = Batches::new(5, 100, 0).unwrap();
        assert_eq!(big.epoch(0).len(), 1);
    }

    #[test]
    fn csv_export_header_and_rows() {
        let ds = gen_binary_task(1, 2, LabelRule::Partition).unwrap();
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "x_0,x_1,y");
        assert_eq!(lines.len(), 5);
        assert!(lines[2].starts_with("1,0,"));

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("task.csv");
        std::fs::write(&path, &text).unwrap();
        let back = load_csv(&path, Some(2)).unwrap();
        assert_eq!(back.inputs, ds.inputs);
        assert_eq!(back.labels, ds.labels);
        std::fs::write(&path, "x_0,y\n0.5,1\n0.25\n").unwrap();
        assert!(matches!(load_csv(&path, None), Err(ImbError::Parse { offset: 12, .. })));
    }
}
