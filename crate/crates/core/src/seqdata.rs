//! Fixed-length, spatially ordered peak-frequency sequences.

use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::defect::DefectClass;
use crate::error::{Error, Result};
use crate::spectral::PeakReading;

pub const SEQ_LEN: usize = 20;

/// Rows closer than this (inches) belong to the same scan line.
const ROW_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSequence {
    pub values: Vec<f64>,
    pub label: usize,
    pub slab_id: usize,
    pub zone: Option<DefectClass>,
    pub anchor_x_in: f64,
    pub anchor_y_in: f64,
    /// Built from a run shorter than the window (reflection padded).
    pub padded: bool,
}

/// Stream of validated points sharing one class label.
#[derive(Debug, Clone, PartialEq)]
pub struct PointRun {
    pub slab_id: usize,
    pub class: DefectClass,
    pub points: Vec<PeakReading>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SequenceConfig {
    pub length: usize,
    pub stride: usize,
    /// Number of distinct serpentine traversals per run (1..=8): row- or
    /// column-wise, from each corner.
    pub orderings: usize,
    /// Also start windows near the end of long runs (reflection padded),
    /// so every point anchors a window.
    pub anchor_all: bool,
}

impl Default for SequenceConfig {
    fn default() -> Self {
        SequenceConfig {
            length: SEQ_LEN,
            stride: 1,
            orderings: 1,
            anchor_all: false,
        }
    }
}

/// Boustrophedon traversal. `variant` bits: 1 flips x, 2 flips y, 4 walks
/// columns instead of rows.
pub fn serpentine_order(points: &[PeakReading], variant: usize) -> Vec<PeakReading> {
    let key = |p: &PeakReading| {
        let (mut a, mut b) = (p.x_in, p.y_in);
        if variant & 1 != 0 {
            a = -a;
        }
        if variant & 2 != 0 {
            b = -b;
        }
        if variant & 4 != 0 {
            std::mem::swap(&mut a, &mut b);
        }
        (b, a) // (line, position along line)
    };
    let mut keyed: Vec<((f64, f64), &PeakReading)> = points.iter().map(|p| (key(p), p)).collect();
    keyed.sort_by(|x, y| x.0 .0.total_cmp(&y.0 .0).then(x.0 .1.total_cmp(&y.0 .1)));

    let mut out = Vec::with_capacity(points.len());
    let mut line_start = 0;
    let mut line_no = 0;
    for i in 1..=keyed.len() {
        if i == keyed.len() || (keyed[i].0 .0 - keyed[line_start].0 .0).abs() > ROW_EPS {
            let line = &keyed[line_start..i];
            if line_no % 2 == 0 {
                out.extend(line.iter().map(|(_, p)| (*p).clone()));
            } else {
                out.extend(line.iter().rev().map(|(_, p)| (*p).clone()));
            }
            line_no += 1;
            line_start = i;
        }
    }
    out
}

/// Mirror index into a run of `n` without repeating end points.
fn reflect(i: usize, n: usize) -> usize {
    if n <= 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let m = i % period;
    if m < n {
        m
    } else {
        period - m
    }
}

/// Sliding windows over one ordered stream: `(start, padded)` pairs.
pub fn window_starts(n: usize, cfg: &SequenceConfig) -> Vec<(usize, bool)> {
    let stride = cfg.stride.max(1);
    if n == 0 {
        return Vec::new();
    }
    if n < cfg.length {
        return (0..n).step_by(stride).map(|s| (s, true)).collect();
    }
    let last = n - cfg.length;
    let mut starts: Vec<(usize, bool)> = (0..=last).step_by(stride).map(|s| (s, false)).collect();
    if cfg.anchor_all {
        let next = starts.last().map_or(0, |s| s.0 + stride);
        starts.extend((next..n).step_by(stride).map(|s| (s, true)));
    }
    starts
}

/// One window cut from an ordered stream, before labeling.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchoredWindow {
    pub values: Vec<f64>,
    /// First point of the window in stream order.
    pub anchor: PeakReading,
    pub padded: bool,
}

/// Windows over `points` in every configured ordering. Windows that extend
/// past the stream are filled by reflection and flagged as padded.
pub fn anchored_windows(points: &[PeakReading], cfg: &SequenceConfig) -> Vec<AnchoredWindow> {
    let mut out = Vec::new();
    if points.is_empty() {
        return out;
    }
    for variant in 0..cfg.orderings.clamp(1, 8) {
        let stream = serpentine_order(points, variant);
        let n = stream.len();
        for (start, padded) in window_starts(n, cfg) {
            out.push(AnchoredWindow {
                values: (0..cfg.length)
                    .map(|k| stream[reflect(start + k, n)].f_peak_khz)
                    .collect(),
                anchor: stream[start].clone(),
                padded,
            });
        }
    }
    out
}

/// Labeled windows for every run, labeled with the run's class.
pub fn build_sequences(runs: &[PointRun], cfg: &SequenceConfig) -> Vec<LabeledSequence> {
    let mut out = Vec::new();
    for run in runs {
        if run.points.is_empty() {
            log::warn!(
                "slab {} zone {}: no valid points, skipped",
                run.slab_id,
                run.class
            );
            continue;
        }
        out.extend(
            anchored_windows(&run.points, cfg)
                .into_iter()
                .map(|w| LabeledSequence {
                    values: w.values,
                    label: run.class.label(),
                    slab_id: run.slab_id,
                    zone: Some(run.class),
                    anchor_x_in: w.anchor.x_in,
                    anchor_y_in: w.anchor.y_in,
                    padded: w.padded,
                }),
        );
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Global z-score parameters computed on the train split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: f64,
    pub std: f64,
    pub fingerprint: u64,
}

impl Normalization {
    pub fn new(mean: f64, std: f64) -> Self {
        Normalization {
            mean,
            std,
            fingerprint: fingerprint(&[mean, std]),
        }
    }

    pub fn identity() -> Self {
        Normalization::new(0.0, 1.0)
    }

    pub fn apply(&self, values: &[f64]) -> Vec<f64> {
        values.iter().map(|v| (v - self.mean) / self.std).collect()
    }

    pub fn invert(&self, values: &[f64]) -> Vec<f64> {
        values.iter().map(|v| v * self.std + self.mean).collect()
    }
}

/// FNV-1a over the bit patterns.
pub fn fingerprint(values: &[f64]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in values {
        for b in v.to_bits().to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SequenceDataset {
    pub sequences: Vec<LabeledSequence>,
    /// One entry per sequence once split; empty before.
    pub splits: Vec<Split>,
    pub normalization: Option<Normalization>,
}

impl SequenceDataset {
    pub fn new(sequences: Vec<LabeledSequence>) -> Self {
        SequenceDataset {
            sequences,
            splits: Vec::new(),
            normalization: None,
        }
    }

    pub fn class_counts(&self) -> [usize; DefectClass::COUNT] {
        let mut counts = [0; DefectClass::COUNT];
        for s in &self.sequences {
            counts[s.label] += 1;
        }
        counts
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn part(&self, which: Split) -> impl Iterator<Item = &LabeledSequence> {
        self.sequences
            .iter()
            .zip(&self.splits)
            .filter(move |(_, s)| **s == which)
            .map(|(q, _)| q)
    }

    pub fn count(&self, which: Split) -> usize {
        self.splits.iter().filter(|s| **s == which).count()
    }

    /// Distinct labels present.
    pub fn label_set(&self) -> Vec<usize> {
        let mut labels: Vec<usize> = self.sequences.iter().map(|s| s.label).collect();
        labels.sort_unstable();
        labels.dedup();
        labels
    }
}

const MIN_PER_CLASS: usize = 5;

/// Splits `round(ratio·N)` sequences into train. Stratified splits allocate
/// per class by largest remainder so the total is exact.
pub fn train_test_split(
    ds: SequenceDataset,
    ratio: f64,
    seed: u64,
    stratified: bool,
) -> Result<SequenceDataset> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::InvalidInput(format!(
            "split ratio {ratio} outside [0, 1]"
        )));
    }
    let n = ds.len();
    let total_train = (ratio * n as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut splits = vec![Split::Test; n];

    let counts = ds.class_counts();
    let can_stratify = counts.iter().all(|&c| c == 0 || c >= MIN_PER_CLASS);
    if stratified && !can_stratify {
        log::warn!("a class has fewer than {MIN_PER_CLASS} sequences; falling back to an unstratified split");
    }

    if stratified && can_stratify {
        let mut quotas: Vec<(usize, usize, f64)> = counts
            .iter()
            .enumerate()
            .map(|(c, &k)| {
                let exact = ratio * k as f64;
                (c, exact.floor() as usize, exact - exact.floor())
            })
            .collect();
        let assigned: usize = quotas.iter().map(|q| q.1).sum();
        let mut by_remainder: Vec<usize> = (0..quotas.len()).filter(|&c| counts[c] > 0).collect();
        by_remainder.sort_by(|&a, &b| quotas[b].2.total_cmp(&quotas[a].2).then(a.cmp(&b)));
        for &c in by_remainder
            .iter()
            .take(total_train.saturating_sub(assigned))
        {
            quotas[c].1 += 1;
        }
        for (class, quota, _) in quotas {
            let mut idx: Vec<usize> = (0..n).filter(|&i| ds.sequences[i].label == class).collect();
            idx.shuffle(&mut rng);
            for &i in idx.iter().take(quota) {
                splits[i] = Split::Train;
            }
        }
    } else {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng);
        for &i in idx.iter().take(total_train) {
            splits[i] = Split::Train;
        }
    }
    Ok(SequenceDataset {
        splits,
        normalization: None,
        ..ds
    })
}

/// Z-scores every sequence with mean and std of the train split.
pub fn normalize(ds: SequenceDataset) -> Result<SequenceDataset> {
    if ds.splits.len() != ds.len() {
        return Err(Error::InvalidInput(
            "dataset must be split before normalizing".into(),
        ));
    }
    if ds.normalization.is_some() {
        return Err(Error::InvalidInput("dataset is already normalized".into()));
    }
    let train: Vec<f64> = ds
        .part(Split::Train)
        .flat_map(|s| s.values.iter().copied())
        .collect();
    if train.is_empty() {
        return Err(Error::InvalidInput("train split is empty".into()));
    }
    let mean = train.iter().sum::<f64>() / train.len() as f64;
    let var = train.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / train.len() as f64;
    let norm = if var.sqrt() > 1e-12 {
        Normalization::new(mean, var.sqrt())
    } else {
        log::warn!("train split has zero variance; using identity scaling");
        Normalization::identity()
    };
    let sequences = ds
        .sequences
        .into_iter()
        .map(|s| LabeledSequence {
            values: norm.apply(&s.values),
            ..s
        })
        .collect();
    Ok(SequenceDataset {
        sequences,
        splits: ds.splits,
        normalization: Some(norm),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Autocorr {
    pub value: f64,
    /// Constant input: correlation undefined, value reported as 0.
    pub degenerate: bool,
}

/// Pearson correlation of `values[..n-1]` with `values[1..]`.
pub fn lag1_autocorr(values: &[f64]) -> Autocorr {
    if values.len() < 3 {
        return Autocorr {
            value: 0.0,
            degenerate: true,
        };
    }
    let (a, b) = (&values[..values.len() - 1], &values[1..]);
    let m = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / m, b.iter().sum::<f64>() / m);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    let den = (saa * sbb).sqrt();
    if den <= 1e-300 {
        return Autocorr {
            value: 0.0,
            degenerate: true,
        };
    }
    Autocorr {
        value: (sab / den).clamp(-1.0, 1.0),
        degenerate: false,
    }
}

/// Mean and standard deviation of lag-1 autocorrelation over non-constant
/// sequences.
pub fn corpus_autocorr(seqs: &[LabeledSequence]) -> Option<(f64, f64)> {
    let vals: Vec<f64> = seqs
        .iter()
        .map(|s| lag1_autocorr(&s.values))
        .filter(|a| !a.degenerate)
        .map(|a| a.value)
        .collect();
    if vals.is_empty() {
        return None;
    }
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let std = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    Some((mean, std))
}

#[derive(Serialize, Deserialize)]
struct JsonLine {
    values: Vec<f64>,
    label: usize,
    slab: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    split: Option<Split>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    zone: Option<DefectClass>,
    #[serde(default)]
    anchor: (f64, f64),
    #[serde(default)]
    padded: bool,
}

/// One JSON object per line:
/// `{"values":[..],"label":k,"slab":id,"split":"train|test",...}`.
pub fn write_jsonl(ds: &SequenceDataset, path: &Path) -> Result<()> {
    let mut out = Vec::new();
    for (i, s) in ds.sequences.iter().enumerate() {
        let line = JsonLine {
            values: s.values.clone(),
            label: s.label,
            slab: s.slab_id,
            split: ds.splits.get(i).copied(),
            zone: s.zone,
            anchor: (s.anchor_x_in, s.anchor_y_in),
            padded: s.padded,
        };
        serde_json::to_writer(&mut out, &line)?;
        out.push(b'\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

pub fn read_jsonl(path: &Path) -> Result<SequenceDataset> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut ds = SequenceDataset::default();
    let mut splits = Vec::new();
    for (no, line) in std::io::BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let l: JsonLine = serde_json::from_str(&line)
            .map_err(|e| Error::parse(format!("{}:{}", path.display(), no + 1), e.to_string()))?;
        if l.label >= DefectClass::COUNT {
            return Err(Error::parse(
                format!("{}:{}", path.display(), no + 1),
                format!("label {} out of range", l.label),
            ));
        }
        splits.push(l.split);
        ds.sequences.push(LabeledSequence {
            values: l.values,
            label: l.label,
            slab_id: l.slab,
            zone: l.zone,
            anchor_x_in: l.anchor.0,
            anchor_y_in: l.anchor.1,
            padded: l.padded,
        });
    }
    if splits.iter().all(Option::is_some) && !splits.is_empty() {
        ds.splits = splits.into_iter().flatten().collect();
    }
    Ok(ds)
}
