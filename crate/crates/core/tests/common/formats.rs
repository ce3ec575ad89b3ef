//! Format fixtures and an independent byte-level label reader.

use std::path::{Path, PathBuf};

use dptune::datasets::{encode_cifar10, encode_idx_images, encode_idx_labels, load_cifar10_bin, load_mnist_idx, parse_cifar10, parse_idx_images, parse_idx_labels};

pub const MNIST_DIR_ENV: &str = "DPTUNE_MNIST_DIR";
pub const CIFAR_DIR_ENV: &str = "DPTUNE_CIFAR_DIR";

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn read(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

fn ensure(ok: bool, what: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(what.into())
    }
}

/// Parses the IDX fixtures, checks the generated pixel pattern and
/// requires the re-encoded bytes to equal the files.
pub fn idx_fixture_roundtrip() -> Result<(), String> {
    let (ip, lp) = (fixture("tiny-images-idx3-ubyte"), fixture("tiny-labels-idx1-ubyte"));
    let (img_bytes, lab_bytes) = (read(&ip), read(&lp));
    let (n, rows, cols, px) = parse_idx_images(&ip, &img_bytes).map_err(|e| e.to_string())?;
    ensure((n, rows, cols) == (5, 4, 3), format!("shape {n}x{rows}x{cols}"))?;
    let expect: Vec<u8> = (0..n)
        .flat_map(|i| (0..rows).flat_map(move |y| (0..cols).map(move |x| ((i * 37 + y * 11 + x * 5) % 256) as u8)))
        .collect();
    ensure(px == expect, "pixel pattern")?;
    let labels = parse_idx_labels(&lp, &lab_bytes).map_err(|e| e.to_string())?;
    ensure(labels == [3, 1, 4, 1, 5], format!("labels {labels:?}"))?;
    ensure(encode_idx_images(rows, cols, &px) == img_bytes, "image re-encode differs")?;
    ensure(encode_idx_labels(&labels) == lab_bytes, "label re-encode differs")?;
    let ds = load_mnist_idx(&ip, &lp).map_err(|e| e.to_string())?;
    ensure(ds.dim == 12 && ds.len() == 5, "loaded shape")?;
    ensure(
        ds.features.iter().zip(&px).all(|(f, &p)| *f == p as f64 / 255.0),
        "loaded pixels are not p/255",
    )?;
    ensure(ds.labels == [3, 1, 4, 1, 5], "loaded labels")
}

pub fn cifar_fixture_roundtrip() -> Result<(), String> {
    let p = fixture("tiny-cifar10.bin");
    let bytes = read(&p);
    let (labels, px) = parse_cifar10(&p, &bytes).map_err(|e| e.to_string())?;
    ensure(labels == [0, 9, 2], format!("labels {labels:?}"))?;
    let expect: Vec<u8> = (0..3).flat_map(|i| (0..3072).map(move |k| ((i * 101 + k * 7) % 256) as u8)).collect();
    ensure(px == expect, "pixel pattern")?;
    ensure(encode_cifar10(&labels, &px) == bytes, "re-encode differs")?;
    let ds = load_cifar10_bin(&[&p, &p]).map_err(|e| e.to_string())?;
    ensure(ds.len() == 6 && ds.dim == 3072, "loaded shape")?;
    ensure(ds.labels == [0, 9, 2, 0, 9, 2], "concatenated labels")?;
    ensure(
        ds.features[..px.len()].iter().zip(&px).all(|(f, &v)| *f == v as f64 / 255.0),
        "loaded pixels are not p/255",
    )
}

/// Label histogram straight from the bytes: big-endian count at offset 4,
/// one label byte each from offset 8.
pub fn idx_label_histogram(path: &Path) -> Vec<usize> {
    let b = read(path);
    assert_eq!(&b[..4], &[0, 0, 8, 1], "{}: not an IDX label file", path.display());
    let n = u32::from_be_bytes([b[4], b[5], b[6], b[7]]) as usize;
    let mut h = vec![0; 10];
    for &l in &b[8..8 + n] {
        h[l as usize] += 1;
    }
    h
}

/// Label byte of every 3073-byte record.
pub fn cifar_label_histogram(paths: &[PathBuf]) -> Vec<usize> {
    let mut h = vec![0; 10];
    for p in paths {
        for l in read(p).iter().step_by(3073) {
            h[*l as usize] += 1;
        }
    }
    h
}

pub fn mnist_files() -> Option<(PathBuf, PathBuf)> {
    let dir = PathBuf::from(std::env::var_os(MNIST_DIR_ENV)?);
    let pick = |names: &[&str]| names.iter().map(|n| dir.join(n)).find(|p| p.is_file());
    Some((
        pick(&["images-idx3-ubyte", "train-images-idx3-ubyte", "train-images.idx3-ubyte"])?,
        pick(&["labels-idx1-ubyte", "train-labels-idx1-ubyte", "train-labels.idx1-ubyte"])?,
    ))
}

pub fn cifar_files() -> Option<Vec<PathBuf>> {
    let dir = PathBuf::from(std::env::var_os(CIFAR_DIR_ENV)?);
    let files: Vec<PathBuf> = (1..=5)
        .map(|i| dir.join(format!("data_batch_{i}.bin")))
        .filter(|p| p.is_file())
        .collect();
    (!files.is_empty()).then_some(files)
}

/// `None` when no real files are configured.
pub fn real_histograms() -> Option<Result<String, String>> {
    let mut found = false;
    let mut lines = Vec::new();
    if let Some((ip, lp)) = mnist_files() {
        found = true;
        let ds = match load_mnist_idx(&ip, &lp) {
            Ok(ds) => ds,
            Err(e) => return Some(Err(e.to_string())),
        };
        let (ours, theirs) = (ds.class_counts(), idx_label_histogram(&lp));
        if ours[..] != theirs[..] {
            return Some(Err(format!("mnist {ours:?} vs {theirs:?}")));
        }
        lines.push(format!("mnist {ours:?}"));
    }
    if let Some(files) = cifar_files() {
        found = true;
        let ds = match load_cifar10_bin(&files) {
            Ok(ds) => ds,
            Err(e) => return Some(Err(e.to_string())),
        };
        let (ours, theirs) = (ds.class_counts(), cifar_label_histogram(&files));
        if ours != theirs {
            return Some(Err(format!("cifar10 {ours:?} vs {theirs:?}")));
        }
        lines.push(format!("cifar10 {ours:?}"));
    }
    found.then(|| Ok(lines.join("; ")))
}
