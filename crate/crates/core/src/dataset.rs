//! Corpus ingestion: PCM16 WAV records, the reference label table and
//! seeded train/evaluation splits.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const PCM16_SCALE: f64 = 32768.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    Normal,
    Abnormal,
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Normal => f.write_str("normal"),
            Label::Abnormal => f.write_str("abnormal"),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Quality {
    #[default]
    Good,
    Poor,
}

/// A mono recording with amplitudes in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioRecord {
    pub record_id: String,
    pub samples: Vec<f64>,
    pub sample_rate_hz: u32,
    pub label: Option<Label>,
    pub quality: Quality,
}

impl AudioRecord {
    pub fn new(record_id: impl Into<String>, samples: Vec<f64>, sample_rate_hz: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidInput("record has no samples".into()));
        }
        if sample_rate_hz == 0 {
            return Err(Error::InvalidInput("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite() || s.abs() > 1.0) {
            return Err(Error::InvalidInput(format!(
                "sample {i} is {} (must be finite and within [-1, 1])",
                samples[i]
            )));
        }
        Ok(Self {
            record_id: record_id.into(),
            samples,
            sample_rate_hz,
            label: None,
            quality: Quality::Good,
        })
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }
}

/// Reads a mono 16-bit PCM WAV file. The record id is the file stem.
pub fn load_wav(path: impl AsRef<Path>) -> Result<AudioRecord> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path).map_err(|e| wav_error(e, path))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::UnsupportedFormat(format!(
            "{}: {} channels, only mono is supported",
            path.display(),
            spec.channels
        )));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::UnsupportedFormat(format!(
            "{}: {}-bit {:?} samples, only 16-bit PCM is supported",
            path.display(),
            spec.bits_per_sample,
            spec.sample_format
        )));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f64 / PCM16_SCALE))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| wav_error(e, path))?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    AudioRecord::new(id, samples, spec.sample_rate).map_err(Error::at_path(path))
}

fn wav_error(e: hound::Error, path: &Path) -> Error {
    match e {
        hound::Error::Unsupported => Error::UnsupportedFormat(format!("{}: unsupported WAV encoding", path.display())),
        hound::Error::IoError(io) if io.kind() == std::io::ErrorKind::NotFound => Error::Io(io),
        other => Error::Format(format!("{}: {other}", path.display())),
    }
}

/// Writes samples as mono 16-bit PCM, clamping to the representable range.
pub fn write_wav(path: impl AsRef<Path>, samples: &[f64], sample_rate_hz: u32) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: sample_rate_hz,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let path = path.as_ref();
    let io = |e: hound::Error| Error::Format(format!("{}: {e}", path.display()));
    let mut writer = hound::WavWriter::create(path, spec).map_err(io)?;
    for &s in samples {
        let q = (s * PCM16_SCALE).round().clamp(i16::MIN as f64, i16::MAX as f64) as i16;
        writer.write_sample(q).map_err(io)?;
    }
    writer.finalize().map_err(io)
}

/// Record id → (label, quality), ordered by id.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LabelTable {
    entries: BTreeMap<String, (Label, Quality)>,
}

impl LabelTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: impl Into<String>, label: Label, quality: Quality) -> Result<()> {
        let id = id.into();
        if self.entries.contains_key(&id) {
            return Err(Error::DuplicateRecord(id));
        }
        self.entries.insert(id, (label, quality));
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<(Label, Quality)> {
        self.entries.get(id).copied()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.entries.contains_key(id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Label, Quality)> {
        self.entries.iter().map(|(k, &(l, q))| (k.as_str(), l, q))
    }

    fn subset<'a>(&self, ids: impl IntoIterator<Item = &'a String>) -> LabelTable {
        let entries = ids.into_iter().map(|id| (id.clone(), self.entries[id])).collect();
        LabelTable { entries }
    }
}

impl FromIterator<(String, Label, Quality)> for LabelTable {
    /// Later duplicates overwrite earlier ones; use [`LabelTable::insert`] to reject them.
    fn from_iter<I: IntoIterator<Item = (String, Label, Quality)>>(iter: I) -> Self {
        LabelTable {
            entries: iter.into_iter().map(|(id, l, q)| (id, (l, q))).collect(),
        }
    }
}

pub fn load_reference(path: impl AsRef<Path>) -> Result<LabelTable> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    parse_reference(&text).map_err(Error::at_path(path))
}

/// Parses `record_id,code[,quality]` lines: code `-1` is normal, `1` abnormal;
/// quality `g`/`p` defaults to good.
pub fn parse_reference(text: &str) -> Result<LabelTable> {
    let mut table = LabelTable::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse { line: i + 1, message };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if !(2..=3).contains(&fields.len()) {
            return Err(parse_err(format!("expected 2 or 3 fields, got {}", fields.len())));
        }
        if fields[0].is_empty() {
            return Err(parse_err("empty record id".into()));
        }
        let label = match fields[1] {
            "-1" => Label::Normal,
            "1" | "+1" => Label::Abnormal,
            other => return Err(parse_err(format!("unknown label code '{other}'"))),
        };
        let quality = match fields.get(2).copied() {
            None | Some("g") | Some("G") | Some("") => Quality::Good,
            Some("p") | Some("P") => Quality::Poor,
            Some(other) => return Err(parse_err(format!("unknown quality '{other}'"))),
        };
        table.insert(fields[0], label, quality)?;
    }
    Ok(table)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
    pub fold_count: usize,
}

impl SplitSpec {
    pub fn new(train_fraction: f64, seed: u64, fold_count: usize) -> Result<Self> {
        let spec = Self {
            train_fraction,
            seed,
            fold_count,
        };
        spec.validate()?;
        Ok(spec)
    }

    fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::InvalidSpec(format!(
                "train fraction {} not in (0, 1)",
                self.train_fraction
            )));
        }
        if self.fold_count == 0 {
            return Err(Error::InvalidSpec("fold count must be positive".into()));
        }
        Ok(())
    }
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
            seed: 0,
            fold_count: 5,
        }
    }
}

/// Ids in canonical (sorted) order, shuffled by the seed.
fn shuffled_ids(table: &LabelTable, seed: u64) -> Vec<&String> {
    let mut ids: Vec<&String> = table.entries.keys().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    ids
}

/// Random train/evaluation partition. Depends only on the set of ids, the
/// fraction and the seed.
pub fn split_train_eval(table: &LabelTable, spec: &SplitSpec) -> Result<(LabelTable, LabelTable)> {
    spec.validate()?;
    if table.is_empty() {
        return Err(Error::InvalidSpec("cannot split an empty table".into()));
    }
    let n = table.len();
    let n_train = (spec.train_fraction * n as f64).round() as usize;
    if n_train == 0 || n_train >= n {
        return Err(Error::InvalidSpec(format!(
            "fraction {} of {n} records leaves an empty partition",
            spec.train_fraction
        )));
    }
    let ids = shuffled_ids(table, spec.seed);
    Ok((
        table.subset(ids[..n_train].iter().copied()),
        table.subset(ids[n_train..].iter().copied()),
    ))
}

/// Disjoint, near-equal folds covering the whole table.
pub fn fold_partition(table: &LabelTable, spec: &SplitSpec) -> Result<Vec<LabelTable>> {
    spec.validate()?;
    let n = table.len();
    if spec.fold_count > n {
        return Err(Error::InvalidSpec(format!(
            "{} folds requested from {n} records",
            spec.fold_count
        )));
    }
    let ids = shuffled_ids(table, spec.seed);
    let k = spec.fold_count;
    Ok((0..k)
        .map(|f| table.subset(ids[f * n / k..(f + 1) * n / k].iter().copied()))
        .collect())
}

/// Union of the first `count` folds.
pub fn cumulative_folds(folds: &[LabelTable], count: usize) -> LabelTable {
    let entries = folds[..count.min(folds.len())]
        .iter()
        .flat_map(|f| f.entries.iter().map(|(k, v)| (k.clone(), *v)))
        .collect();
    LabelTable { entries }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(n: usize) -> LabelTable {
        (0..n)
            .map(|i| {
                let label = if i % 2 == 0 { Label::Normal } else { Label::Abnormal };
                (format!("r{i:04}"), label, Quality::Good)
            })
            .collect()
    }

    #[test]
    fn wav_scaling_and_rate() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a0001.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 2000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&path, spec).unwrap();
        for s in [0i16, 16384, -32768, 0] {
            w.write_sample(s).unwrap();
        }
        w.finalize().unwrap();

        let rec = load_wav(&path).unwrap();
        assert_eq!(rec.samples, vec![0.0, 0.5, -1.0, 0.0]);
        assert_eq!(rec.sample_rate_hz, 2000);
        assert_eq!(rec.record_id, "a0001");
        assert_eq!(rec.label, None);
    }

    #[test]
    fn wav_truncated_header_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.wav");
        std::fs::write(&path, b"RIFF\x24\x00\x00\x00WAVEfmt ").unwrap();
        assert!(matches!(load_wav(&path), Err(Error::Format(_))));
    }

    #[test]
    fn wav_stereo_is_unsupported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("st.wav");
        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: 2000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&path, spec).unwrap();
        for _ in 0..4 {
            w.write_sample(0i16).unwrap();
        }
        w.finalize().unwrap();
        assert!(matches!(load_wav(&path), Err(Error::UnsupportedFormat(_))));
    }

    #[test]
    fn wav_8bit_is_unsupported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b8.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 2000,
            bits_per_sample: 8,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&path, spec).unwrap();
        w.write_sample(3i8).unwrap();
        w.finalize().unwrap();
        assert!(matches!(load_wav(&path), Err(Error::UnsupportedFormat(_))));
    }

    #[test]
    fn reference_lines() {
        let t = parse_reference("a0001,-1\na0002,1,p\n\n").unwrap();
        assert_eq!(t.get("a0001"), Some((Label::Normal, Quality::Good)));
        assert_eq!(t.get("a0002"), Some((Label::Abnormal, Quality::Poor)));
        assert_eq!(t.len(), 2);
    }

    #[test]
    fn reference_duplicate_and_bad_code() {
        assert!(matches!(
            parse_reference("a0001,-1\na0001,1"),
            Err(Error::DuplicateRecord(id)) if id == "a0001"
        ));
        assert!(matches!(parse_reference("a0001,0"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse_reference("a0001,1,x"), Err(Error::Parse { .. })));
    }

    #[test]
    fn split_cardinality_and_determinism() {
        let t = table(10);
        let spec = SplitSpec::new(0.8, 7, 5).unwrap();
        let (train, eval) = split_train_eval(&t, &spec).unwrap();
        assert_eq!((train.len(), eval.len()), (8, 2));
        assert!(train.ids().all(|id| !eval.contains(id)));
        let (train2, eval2) = split_train_eval(&t, &spec).unwrap();
        assert_eq!(train, train2);
        assert_eq!(eval, eval2);
    }

    #[test]
    fn split_rejects_empty_partition() {
        let t = table(5);
        let spec = SplitSpec::new(0.999, 1, 5).unwrap();
        assert!(matches!(split_train_eval(&t, &spec), Err(Error::InvalidSpec(_))));
        assert!(SplitSpec::new(1.0, 1, 5).is_err());
        assert!(SplitSpec::new(0.0, 1, 5).is_err());
    }

    #[test]
    fn split_ignores_insertion_order() {
        let forward = table(23);
        let mut reversed = LabelTable::new();
        let rows: Vec<_> = forward.iter().map(|(a, b, c)| (a.to_string(), b, c)).collect();
        for (id, l, q) in rows.into_iter().rev() {
            reversed.insert(id, l, q).unwrap();
        }
        let spec = SplitSpec::new(0.8, 3, 5).unwrap();
        assert_eq!(
            split_train_eval(&forward, &spec).unwrap(),
            split_train_eval(&reversed, &spec).unwrap()
        );
    }

    #[test]
    fn folds_cover_table() {
        let t = table(23);
        let spec = SplitSpec::new(0.8, 11, 5).unwrap();
        let folds = fold_partition(&t, &spec).unwrap();
        assert_eq!(folds.len(), 5);
        assert_eq!(folds.iter().map(LabelTable::len).sum::<usize>(), 23);
        let all = cumulative_folds(&folds, 5);
        assert_eq!(all, t);
        assert_eq!(cumulative_folds(&folds, 2).len(), folds[0].len() + folds[1].len());
        assert_eq!(folds, fold_partition(&t, &spec).unwrap());
    }
}
