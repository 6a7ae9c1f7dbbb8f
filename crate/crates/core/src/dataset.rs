//! Labelled image folders, stratified splits, class weights, the binary
//! KL remap and a synthetic radiograph generator.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::GrayImage;
use crate::rng;
use crate::tensor::Tensor;

pub const KL_GRADES: usize = 5;

/// Collapses KL grades to KOA absence (0: grades 0–1) or presence (1: grades 2–4).
pub fn remap_binary(grade: usize) -> Result<usize> {
    match grade {
        0 | 1 => Ok(0),
        2..=4 => Ok(1),
        g => Err(Error::invalid(format!("KL grade {g} outside 0..=4"))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    #[default]
    Multiclass,
    Binary,
}

impl Task {
    pub fn n_classes(self) -> usize {
        match self {
            Task::Multiclass => KL_GRADES,
            Task::Binary => 2,
        }
    }

    /// Training label for a KL grade under this task.
    pub fn label(self, grade: usize) -> Result<usize> {
        match self {
            Task::Multiclass if grade < KL_GRADES => Ok(grade),
            Task::Multiclass => Err(Error::invalid(format!("KL grade {grade} outside 0..=4"))),
            Task::Binary => remap_binary(grade),
        }
    }
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Task::Multiclass => "multiclass",
            Task::Binary => "binary",
        })
    }
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "multiclass" => Ok(Task::Multiclass),
            "binary" => Ok(Task::Binary),
            other => Err(Error::Config(format!("unknown task {other:?}"))),
        }
    }
}

/// Anything that carries a class label and a unique source id.
pub trait Labeled {
    fn label(&self) -> usize;
    fn source_id(&self) -> &str;
}

/// Preprocessed network input with its KL grade.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub tensor: Tensor,
    pub grade: usize,
    pub source_id: String,
}

impl Labeled for LabeledSample {
    fn label(&self) -> usize {
        self.grade
    }

    fn source_id(&self) -> &str {
        &self.source_id
    }
}

/// Raw image with its grade as read from disk or generated.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSample {
    pub image: GrayImage,
    pub grade: usize,
    pub source_id: String,
}

impl Labeled for RawSample {
    fn label(&self) -> usize {
        self.grade
    }

    fn source_id(&self) -> &str {
        &self.source_id
    }
}

/// One row of a split manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub source_id: String,
    pub grade: usize,
    pub split: SplitName,
}

impl Labeled for ManifestEntry {
    fn label(&self) -> usize {
        self.grade
    }

    fn source_id(&self) -> &str {
        &self.source_id
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Val,
    Test,
}

impl SplitName {
    pub const ALL: [SplitName; 3] = [SplitName::Train, SplitName::Val, SplitName::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Val => "val",
            SplitName::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitSet<T> {
    pub train: Vec<T>,
    pub val: Vec<T>,
    pub test: Vec<T>,
    pub seed: u64,
    pub ratios: [f64; 3],
}

impl<T> SplitSet<T> {
    pub fn get(&self, name: SplitName) -> &[T] {
        match name {
            SplitName::Train => &self.train,
            SplitName::Val => &self.val,
            SplitName::Test => &self.test,
        }
    }

    pub fn map<U>(self, mut f: impl FnMut(T) -> U) -> SplitSet<U> {
        SplitSet {
            train: self.train.into_iter().map(&mut f).collect(),
            val: self.val.into_iter().map(&mut f).collect(),
            test: self.test.into_iter().map(&mut f).collect(),
            seed: self.seed,
            ratios: self.ratios,
        }
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl<T: Labeled> SplitSet<T> {
    pub fn manifest(&self) -> Vec<ManifestEntry> {
        SplitName::ALL
            .iter()
            .flat_map(|&split| {
                self.get(split).iter().map(move |s| ManifestEntry {
                    source_id: s.source_id().to_string(),
                    grade: s.label(),
                    split,
                })
            })
            .collect()
    }
}

pub const DEFAULT_RATIOS: [f64; 3] = [0.7, 0.15, 0.15];

/// Shuffles each class under `seed` and deals it into train/val/test in
/// proportion to `ratios`.
pub fn stratified_split<T: Labeled + Clone>(samples: &[T], ratios: [f64; 3], seed: u64) -> Result<SplitSet<T>> {
    if ratios.iter().any(|r| !(0.0..=1.0).contains(r)) || ratios[0] <= 0.0 {
        return Err(Error::invalid(format!("split ratios must be non-negative with a positive train share: {ratios:?}")));
    }
    if (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("split ratios must sum to 1: {ratios:?}")));
    }
    for (name, r) in ["val", "test"].iter().zip(&ratios[1..]) {
        if *r == 0.0 {
            log::warn!("split ratio for {name} is zero; the {name} split will be empty");
        }
    }
    let mut seen = std::collections::HashSet::new();
    for s in samples {
        if !seen.insert(s.source_id()) {
            return Err(Error::data(format!("duplicate source id {:?}", s.source_id())));
        }
    }

    let mut by_class: BTreeMap<usize, Vec<&T>> = BTreeMap::new();
    for s in samples {
        by_class.entry(s.label()).or_default().push(s);
    }
    let mut out = SplitSet {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
        seed,
        ratios,
    };
    for (&class, members) in &by_class {
        if members.len() < 3 {
            return Err(Error::data(format!(
                "class {class} has {} samples; stratified splitting needs at least 3",
                members.len()
            )));
        }
        let mut members = members.clone();
        members.shuffle(&mut rng::stream(seed, class as u64));
        let n = members.len();
        let n_train = ((ratios[0] * n as f64).round() as usize).min(n);
        let n_val = ((ratios[1] * n as f64).round() as usize).min(n - n_train);
        let n_test = if ratios[2] == 0.0 { 0 } else { n - n_train - n_val };
        let n_train = n - n_val - n_test;
        out.train.extend(members[..n_train].iter().map(|s| (*s).clone()));
        out.val.extend(members[n_train..n_train + n_val].iter().map(|s| (*s).clone()));
        out.test.extend(members[n_train + n_val..].iter().map(|s| (*s).clone()));
    }
    Ok(out)
}

/// Per-class loss multipliers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights(pub Vec<f64>);

impl ClassWeights {
    pub fn uniform(n_classes: usize) -> Self {
        ClassWeights(vec![1.0; n_classes])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Inverse-frequency weights `N / (C * n_c)`.
pub fn class_weights(labels: &[usize], n_classes: usize) -> Result<ClassWeights> {
    let mut counts = vec![0usize; n_classes];
    for &l in labels {
        *counts
            .get_mut(l)
            .ok_or_else(|| Error::invalid(format!("label {l} outside 0..{n_classes}")))? += 1;
    }
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(Error::data(format!("class {c} has no samples; its weight is undefined")));
    }
    let total = labels.len() as f64;
    Ok(ClassWeights(
        counts.iter().map(|&n| total / (n_classes as f64 * n as f64)).collect(),
    ))
}

pub fn class_histogram(labels: impl IntoIterator<Item = usize>, n_classes: usize) -> Vec<usize> {
    let mut h = vec![0; n_classes];
    for l in labels {
        if l < n_classes {
            h[l] += 1;
        }
    }
    h
}

/// Result of scanning an image folder.
#[derive(Debug, Clone)]
pub struct Ingested {
    pub samples: Vec<RawSample>,
    pub class_counts: Vec<usize>,
    pub skipped: Vec<PathBuf>,
}

fn is_image(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("png" | "pgm")
    )
}

/// Reads `root/<grade>/*.{png,pgm}`. Unreadable files are skipped with a
/// warning; a subdirectory not named 0–4 is an error.
pub fn ingest(root: &Path) -> Result<Ingested> {
    let entries = fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    let mut class_dirs = BTreeMap::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(root, e))?;
        let path = entry.path();
        if !path.is_dir() {
            continue;
        }
        let name = entry.file_name().to_string_lossy().into_owned();
        match name.parse::<usize>() {
            Ok(g) if g < KL_GRADES => {
                class_dirs.insert(g, (name, path));
            }
            _ => {
                return Err(Error::data(format!(
                    "{} is not a KL grade directory (expected 0..4)",
                    path.display()
                )))
            }
        }
    }
    if class_dirs.is_empty() {
        return Err(Error::data(format!("no classes found under {}", root.display())));
    }

    let mut samples = Vec::new();
    let mut skipped = Vec::new();
    for (&grade, (dir_name, dir)) in &class_dirs {
        let mut files: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file() && is_image(p))
            .collect();
        files.sort();
        for path in files {
            match GrayImage::load(&path) {
                Ok(image) => {
                    let file = path.file_name().unwrap_or_default().to_string_lossy();
                    samples.push(RawSample {
                        image,
                        grade,
                        source_id: format!("{dir_name}/{file}"),
                    });
                }
                Err(e) => {
                    log::warn!("skipping unreadable image: {e}");
                    skipped.push(path);
                }
            }
        }
    }
    let class_counts = class_histogram(samples.iter().map(|s| s.grade), KL_GRADES);
    log::info!(
        "ingested {} images from {} (per class {:?}, skipped {})",
        samples.len(),
        root.display(),
        class_counts,
        skipped.len()
    );
    Ok(Ingested {
        samples,
        class_counts,
        skipped,
    })
}

/// Mean joint-space width per KL grade as a fraction of image height.
const GAP_FRACTION: [f64; KL_GRADES] = [0.30, 0.24, 0.18, 0.12, 0.06];
/// Per-image spread of the joint-space width, as a fraction of height.
const GAP_JITTER: f64 = 0.035;

/// Approximately normal draw (Irwin–Hall with 12 terms).
fn normal(r: &mut rng::Rng) -> f64 {
    (0..12).map(|_| r.gen::<f64>()).sum::<f64>() - 6.0
}

/// Generates knee-like radiographs: two bright bone bands separated by a
/// dark joint space that narrows with grade, grade-scaled noise, and
/// osteophyte-like speckles for grades 3 and 4.
pub fn synthesize(counts: &[usize], size: usize, seed: u64) -> Result<Vec<RawSample>> {
    if counts.len() != KL_GRADES {
        return Err(Error::invalid(format!("need {KL_GRADES} class counts, got {}", counts.len())));
    }
    if size < 32 {
        return Err(Error::invalid(format!("synthetic images must be at least 32x32, got {size}")));
    }
    let s = size as f64;
    let mut out = Vec::with_capacity(counts.iter().sum());
    let mut index = 0u64;
    for (grade, &n) in counts.iter().enumerate() {
        for i in 0..n {
            let mut r = rng::stream(seed, index);
            index += 1;
            let gap = (GAP_FRACTION[grade] * s + GAP_JITTER * s * normal(&mut r)).clamp(1.0, 0.45 * s);
            let centre = s / 2.0 + s / 24.0 * (2.0 * r.gen::<f64>() - 1.0);
            let gap_top = centre - gap / 2.0;
            let gap_bottom = centre + gap / 2.0;
            let bone_top = 0.08 * s + 0.04 * s * r.gen::<f64>();
            let bone_bottom = 0.92 * s - 0.04 * s * r.gen::<f64>();
            let bone = 175.0 + 25.0 * r.gen::<f64>();
            let soft = 55.0 + 15.0 * r.gen::<f64>();
            let background = 20.0 + 10.0 * r.gen::<f64>();
            let curve = 0.02 * s * r.gen::<f64>();
            let phase = std::f64::consts::TAU * r.gen::<f64>();
            let noise_sd = 6.0 + 3.0 * grade as f64;

            let mut pixels = vec![0u8; size * size];
            for y in 0..size {
                for x in 0..size {
                    let yc = y as f64 + 0.5;
                    let bend = curve * (std::f64::consts::TAU * x as f64 / s + phase).sin();
                    let v = if yc < bone_top || yc > bone_bottom {
                        background
                    } else if yc >= gap_top + bend && yc <= gap_bottom + bend {
                        soft
                    } else {
                        bone
                    };
                    let v = v + noise_sd * normal(&mut r);
                    pixels[y * size + x] = v.round().clamp(0.0, 255.0) as u8;
                }
            }
            if grade >= 3 {
                let n_spots = (grade - 2) * size / 8;
                for _ in 0..n_spots {
                    let side = if r.gen_bool(0.5) { 0.0 } else { 0.85 * s };
                    let x = (side + 0.15 * s * r.gen::<f64>()) as usize;
                    let edge = if r.gen_bool(0.5) { gap_top } else { gap_bottom };
                    let y = (edge + 2.0 * (2.0 * r.gen::<f64>() - 1.0)).clamp(0.0, s - 1.0) as usize;
                    pixels[y.min(size - 1) * size + x.min(size - 1)] = 250;
                }
            }
            out.push(RawSample {
                image: GrayImage::new(size, size, pixels)?,
                grade,
                source_id: format!("{grade}/synth_{grade}_{i:05}.png"),
            });
        }
    }
    Ok(out)
}

/// Writes samples as `root/<grade>/<file>.png`.
pub fn write_image_tree(root: &Path, samples: &[RawSample]) -> Result<()> {
    for s in samples {
        let path = root.join(&s.source_id);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        s.image.save_png(&path)?;
    }
    Ok(())
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for e in entries {
        w.serialize(e)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let mut rdr = csv::Reader::from_path(path)?;
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Clone, Debug)]
    struct Item(String, usize);

    impl Labeled for Item {
        fn label(&self) -> usize {
            self.1
        }
        fn source_id(&self) -> &str {
            &self.0
        }
    }

    fn items(per_class: &[usize]) -> Vec<Item> {
        per_class
            .iter()
            .enumerate()
            .flat_map(|(c, &n)| (0..n).map(move |i| Item(format!("{c}-{i}"), c)))
            .collect()
    }

    #[test]
    fn remap_examples() {
        assert_eq!(remap_binary(0).unwrap(), 0);
        assert_eq!(remap_binary(1).unwrap(), 0);
        assert_eq!(remap_binary(2).unwrap(), 1);
        assert_eq!(remap_binary(3).unwrap(), 1);
        assert_eq!(remap_binary(4).unwrap(), 1);
        assert!(remap_binary(5).is_err());
    }

    #[test]
    fn class_weight_examples() {
        let lab = |counts: &[usize]| -> Vec<usize> {
            counts.iter().enumerate().flat_map(|(c, &n)| std::iter::repeat_n(c, n)).collect()
        };
        assert_eq!(class_weights(&lab(&[10, 10]), 2).unwrap().0, vec![1.0, 1.0]);
        assert_eq!(class_weights(&lab(&[40, 10]), 2).unwrap().0, vec![0.625, 2.5]);
        assert_eq!(class_weights(&lab(&[5; 5]), 5).unwrap().0, vec![1.0; 5]);
        assert!(class_weights(&lab(&[3, 0, 2]), 3).is_err());
    }

    #[test]
    fn split_counts_are_exact_for_divisible_classes() {
        let s = stratified_split(&items(&[100; 5]), DEFAULT_RATIOS, 7).unwrap();
        for c in 0..5 {
            let count = |v: &[Item]| v.iter().filter(|i| i.1 == c).count();
            assert_eq!((count(&s.train), count(&s.val), count(&s.test)), (70, 15, 15));
        }
    }

    #[test]
    fn split_is_deterministic_and_seed_sensitive() {
        let data = items(&[20, 13, 9]);
        let ids = |s: &SplitSet<Item>| s.train.iter().map(|i| i.0.clone()).collect::<Vec<_>>();
        let a = stratified_split(&data, DEFAULT_RATIOS, 1).unwrap();
        let b = stratified_split(&data, DEFAULT_RATIOS, 1).unwrap();
        let c = stratified_split(&data, DEFAULT_RATIOS, 2).unwrap();
        assert_eq!(ids(&a), ids(&b));
        assert_ne!(ids(&a), ids(&c));
    }

    #[test]
    fn zero_test_ratio_gives_empty_test() {
        let s = stratified_split(&items(&[10, 10]), [0.5, 0.5, 0.0], 0).unwrap();
        assert!(s.test.is_empty());
        assert_eq!(s.train.len(), 10);
    }

    #[test]
    fn split_rejects_small_classes_and_bad_ratios() {
        assert!(stratified_split(&items(&[10, 2]), DEFAULT_RATIOS, 0).is_err());
        assert!(stratified_split(&items(&[10, 10]), [0.5, 0.3, 0.3], 0).is_err());
        let mut dup = items(&[5]);
        dup.push(dup[0].clone());
        assert!(stratified_split(&dup, DEFAULT_RATIOS, 0).is_err());
    }

    #[test]
    fn synth_counts_and_determinism() {
        let counts = [50, 40, 45, 30, 15];
        let a = synthesize(&counts, 32, 3).unwrap();
        assert_eq!(a.len(), 180);
        assert_eq!(class_histogram(a.iter().map(|s| s.grade), 5), counts.to_vec());
        let b = synthesize(&counts, 32, 3).unwrap();
        assert_eq!(a, b);
        assert!(synthesize(&counts, 16, 3).is_err());
    }

    #[test]
    fn ingest_reads_class_tree() {
        let dir = tempfile::tempdir().unwrap();
        let samples = synthesize(&[2; 5], 32, 1).unwrap();
        write_image_tree(dir.path(), &samples).unwrap();
        std::fs::write(dir.path().join("3").join("broken.png"), b"not a png").unwrap();
        let got = ingest(dir.path()).unwrap();
        assert_eq!(got.samples.len(), 10);
        assert_eq!(got.class_counts, vec![2; 5]);
        assert_eq!(got.skipped.len(), 1);
        assert_eq!(got.samples[0].image, samples[0].image);
    }

    #[test]
    fn ingest_errors() {
        let dir = tempfile::tempdir().unwrap();
        let err = ingest(dir.path()).unwrap_err();
        assert!(err.to_string().contains("no classes found"));

        std::fs::create_dir(dir.path().join("0")).unwrap();
        std::fs::create_dir(dir.path().join("5")).unwrap();
        let err = ingest(dir.path()).unwrap_err().to_string();
        assert!(err.contains(&dir.path().join("5").display().to_string()), "{err}");
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let entries = vec![
            ManifestEntry {
                source_id: "0/a.png".into(),
                grade: 0,
                split: SplitName::Train,
            },
            ManifestEntry {
                source_id: "4/b.png".into(),
                grade: 4,
                split: SplitName::Test,
            },
        ];
        let p = dir.path().join("m.csv");
        write_manifest(&p, &entries).unwrap();
        assert_eq!(read_manifest(&p).unwrap(), entries);
    }

    #[test]
    fn gap_narrows_with_grade() {
        // Dark pixels between the bone bands, counted per column: a direct
        // estimate of the joint-space height.
        let size = 48;
        let samples = synthesize(&[30; 5], size, 21).unwrap();
        let mut mean_gap = [0.0; 5];
        for s in &samples {
            let lo = size / 5;
            let hi = size - size / 5;
            let dark = (lo..hi)
                .flat_map(|y| (0..size).map(move |x| (x, y)))
                .filter(|&(x, y)| s.image.get(x, y) < 115)
                .count();
            mean_gap[s.grade] += dark as f64 / size as f64 / 30.0;
        }
        assert!(mean_gap.windows(2).all(|w| w[0] > w[1]), "{mean_gap:?}");
    }
}
