//! MFCC front end: pre-emphasis, Hamming-windowed framing, FFT magnitude,
//! triangular mel filterbank, log energies and DCT.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::container::{expect_dims, expect_len, ContainerModel, ModelKind};
use crate::dataset::AudioRecord;
use crate::error::{Error, Result};

/// Energies below this are clamped before the logarithm.
pub const LOG_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MfccConfig {
    pub pre_emphasis: f64,
    pub frame_ms: f64,
    pub hop_ms: f64,
    pub fft_size: usize,
    pub n_filters: usize,
    pub n_ceps: usize,
    pub sample_rate_hz: u32,
}

impl Default for MfccConfig {
    fn default() -> Self {
        Self {
            pre_emphasis: 0.97,
            frame_ms: 25.0,
            hop_ms: 10.0,
            fft_size: 64,
            n_filters: 20,
            n_ceps: 12,
            sample_rate_hz: 2000,
        }
    }
}

impl MfccConfig {
    pub fn frame_len(&self) -> usize {
        (self.frame_ms * self.sample_rate_hz as f64 / 1000.0).round() as usize
    }

    pub fn hop_len(&self) -> usize {
        (self.hop_ms * self.sample_rate_hz as f64 / 1000.0).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.sample_rate_hz == 0 {
            return bad("sample rate must be positive".into());
        }
        if self.frame_len() < 2 {
            return bad(format!("frame of {} ms is under two samples", self.frame_ms));
        }
        if self.hop_len() == 0 {
            return bad(format!("hop of {} ms rounds to zero samples", self.hop_ms));
        }
        if !self.fft_size.is_power_of_two() {
            return bad(format!("fft size {} is not a power of two", self.fft_size));
        }
        if self.fft_size < self.frame_len() {
            return bad(format!(
                "fft size {} shorter than the {}-sample frame",
                self.fft_size,
                self.frame_len()
            ));
        }
        if self.n_filters == 0 || self.n_ceps == 0 {
            return bad("filter and cepstrum counts must be positive".into());
        }
        if self.n_ceps > self.n_filters {
            return bad(format!(
                "{} cepstra requested from {} filters",
                self.n_ceps, self.n_filters
            ));
        }
        if !self.pre_emphasis.is_finite() {
            return bad("pre-emphasis must be finite".into());
        }
        Ok(())
    }
}

/// Row-major matrix of per-frame feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::InvalidInput(format!(
                "{} values cannot fill a {rows}×{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::InvalidInput(format!(
                    "row {i} has {} columns, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    /// Stacks matrices with equal column counts.
    pub fn vstack<'a>(parts: impl IntoIterator<Item = &'a FeatureMatrix>) -> Result<Self> {
        let mut out: Option<FeatureMatrix> = None;
        for p in parts {
            match out.as_mut() {
                None => out = Some(p.clone()),
                Some(acc) => {
                    if acc.cols != p.cols {
                        return Err(Error::dims(acc.cols, p.cols));
                    }
                    acc.data.extend_from_slice(&p.data);
                    acc.rows += p.rows;
                }
            }
        }
        out.ok_or_else(|| Error::InvalidInput("nothing to stack".into()))
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        // chunks_exact panics on zero chunk size
        let cols = self.cols.max(1);
        self.data.chunks_exact(cols).take(self.rows)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.iter_rows().map(<[f64]>::to_vec).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl ContainerModel for FeatureMatrix {
    const KIND: ModelKind = ModelKind::FeatureMatrix;

    fn dims(&self) -> Vec<u64> {
        vec![self.rows as u64, self.cols as u64]
    }

    fn payload(&self) -> Vec<f64> {
        self.data.clone()
    }

    fn from_parts(dims: &[u64], payload: Vec<f64>) -> Result<Self> {
        let d = expect_dims(dims, 2, "feature matrix")?;
        expect_len(&payload, d[0] * d[1], "feature matrix")?;
        FeatureMatrix::new(d[0], d[1], payload)
    }
}

pub fn pre_emphasize(signal: &[f64], coeff: f64) -> Result<Vec<f64>> {
    let Some(&first) = signal.first() else {
        return Err(Error::InvalidInput("cannot pre-emphasize an empty signal".into()));
    };
    let mut out = Vec::with_capacity(signal.len());
    out.push(first);
    out.extend(signal.windows(2).map(|w| w[1] - coeff * w[0]));
    Ok(out)
}

pub fn hamming_window(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    let denom = (n - 1) as f64;
    (0..n)
        .map(|i| 0.54 - 0.46 * (2.0 * PI * i as f64 / denom).cos())
        .collect()
}

/// `floor((len - frame) / hop) + 1`, or zero when the signal is shorter than a frame.
pub fn frame_count(len: usize, frame: usize, hop: usize) -> usize {
    if len < frame || hop == 0 {
        0
    } else {
        (len - frame) / hop + 1
    }
}

pub fn frame_and_window(signal: &[f64], config: &MfccConfig) -> Result<Vec<Vec<f64>>> {
    config.validate()?;
    let n = config.frame_len();
    let hop = config.hop_len();
    if signal.len() < n {
        return Err(Error::TooShort {
            len: signal.len(),
            needed: n,
        });
    }
    let window = hamming_window(n);
    Ok((0..frame_count(signal.len(), n, hop))
        .map(|f| {
            signal[f * hop..f * hop + n]
                .iter()
                .zip(&window)
                .map(|(s, w)| s * w)
                .collect()
        })
        .collect())
}

/// Reusable zero-padded FFT magnitude computation.
pub struct SpectrumAnalyzer {
    fft: Arc<dyn Fft<f64>>,
    buffer: Vec<Complex<f64>>,
    scratch: Vec<Complex<f64>>,
}

impl SpectrumAnalyzer {
    pub fn new(fft_size: usize) -> Self {
        let fft = FftPlanner::new().plan_fft_forward(fft_size);
        let scratch = vec![Complex::default(); fft.get_inplace_scratch_len()];
        Self {
            fft,
            buffer: vec![Complex::default(); fft_size],
            scratch,
        }
    }

    pub fn fft_size(&self) -> usize {
        self.buffer.len()
    }

    /// `|H[k]|` for `k = 0..=fft_size/2`.
    pub fn magnitudes(&mut self, frame: &[f64]) -> Result<Vec<f64>> {
        let n = self.buffer.len();
        if frame.len() > n {
            return Err(Error::InvalidInput(format!(
                "frame of {} samples exceeds fft size {n}",
                frame.len()
            )));
        }
        for (slot, v) in self
            .buffer
            .iter_mut()
            .zip(frame.iter().copied().chain(std::iter::repeat(0.0)))
        {
            *slot = Complex::new(v, 0.0);
        }
        self.fft.process_with_scratch(&mut self.buffer, &mut self.scratch);
        Ok(self.buffer[..=n / 2].iter().map(|c| c.norm()).collect())
    }
}

pub fn power_spectrum(frame: &[f64], fft_size: usize) -> Result<Vec<f64>> {
    if fft_size == 0 {
        return Err(Error::InvalidInput("fft size must be positive".into()));
    }
    SpectrumAnalyzer::new(fft_size).magnitudes(frame)
}

pub fn hz_to_mel(f: f64) -> Result<f64> {
    if f.is_nan() || f < 0.0 {
        return Err(Error::InvalidInput(format!("frequency {f} Hz is negative")));
    }
    Ok(2595.0 * (1.0 + f / 700.0).log10())
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    /// `n_filters × (fft_size/2 + 1)`.
    pub weights: Vec<Vec<f64>>,
    /// Inclusive `(k_ll, k_lu)` bin range of each filter.
    pub edges: Vec<(usize, usize)>,
    pub center_bins: Vec<usize>,
    pub center_hz: Vec<f64>,
}

impl MelFilterbank {
    pub fn n_filters(&self) -> usize {
        self.weights.len()
    }

    pub fn n_bins(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }
}

/// Triangular filters with apexes equally spaced on the mel axis from 0 Hz to
/// Nyquist. Each triangle rises from the previous center bin to 1.0 at its own
/// center and falls to zero at the next center.
pub fn build_mel_filterbank(config: &MfccConfig) -> Result<MelFilterbank> {
    config.validate()?;
    let l = config.n_filters;
    let n_bins = config.fft_size / 2 + 1;
    let sr = config.sample_rate_hz as f64;
    let top = hz_to_mel(sr / 2.0)?;
    let bins: Vec<usize> = (0..l + 2)
        .map(|i| {
            let hz = mel_to_hz(top * i as f64 / (l + 1) as f64);
            ((hz * config.fft_size as f64 / sr).round() as usize).min(n_bins - 1)
        })
        .collect();
    if let Some(w) = bins.windows(2).position(|w| w[1] <= w[0]) {
        return Err(Error::InvalidConfig(format!(
            "{l} filters do not fit {n_bins} FFT bins (edge {w} and {} share bin {})",
            w + 1,
            bins[w]
        )));
    }
    let mut weights = vec![vec![0.0; n_bins]; l];
    let mut edges = Vec::with_capacity(l);
    for (f, row) in weights.iter_mut().enumerate() {
        let (lo, mid, hi) = (bins[f], bins[f + 1], bins[f + 2]);
        for k in lo..=mid {
            row[k] = (k - lo) as f64 / (mid - lo) as f64;
        }
        for k in mid..=hi {
            row[k] = (hi - k) as f64 / (hi - mid) as f64;
        }
        edges.push((lo, hi));
    }
    let center_bins = bins[1..=l].to_vec();
    let center_hz = center_bins
        .iter()
        .map(|&b| b as f64 * sr / config.fft_size as f64)
        .collect();
    Ok(MelFilterbank {
        weights,
        edges,
        center_bins,
        center_hz,
    })
}

pub fn log_mel_energies(spectrum: &[f64], bank: &MelFilterbank) -> Result<Vec<f64>> {
    if spectrum.len() != bank.n_bins() {
        return Err(Error::dims(bank.n_bins(), spectrum.len()));
    }
    Ok(bank
        .weights
        .iter()
        .zip(&bank.edges)
        .map(|(w, &(lo, hi))| {
            let e: f64 = (lo..=hi).map(|k| spectrum[k] * w[k]).sum();
            e.max(LOG_FLOOR).ln()
        })
        .collect())
}

/// `C[m] = Σ_l X[l] cos(π m (l - 0.5) / L)` for `m = 1..=n_ceps`, `l = 1..=L`.
pub fn dct_cepstra(log_energies: &[f64], n_ceps: usize) -> Result<Vec<f64>> {
    let l = log_energies.len();
    if n_ceps > l {
        return Err(Error::InvalidConfig(format!(
            "{n_ceps} cepstra requested from {l} filter energies"
        )));
    }
    Ok((1..=n_ceps)
        .map(|m| {
            log_energies
                .iter()
                .enumerate()
                .map(|(j, x)| x * (PI * m as f64 * (j as f64 + 0.5) / l as f64).cos())
                .sum()
        })
        .collect())
}

/// Precomputed window, filterbank and DCT basis for one configuration.
pub struct MfccExtractor {
    config: MfccConfig,
    bank: MelFilterbank,
    dct: Vec<Vec<f64>>,
}

impl MfccExtractor {
    pub fn new(config: &MfccConfig) -> Result<Self> {
        let bank = build_mel_filterbank(config)?;
        let l = config.n_filters;
        let dct = (1..=config.n_ceps)
            .map(|m| {
                (0..l)
                    .map(|j| (PI * m as f64 * (j as f64 + 0.5) / l as f64).cos())
                    .collect()
            })
            .collect();
        Ok(Self {
            config: config.clone(),
            bank,
            dct,
        })
    }

    pub fn config(&self) -> &MfccConfig {
        &self.config
    }

    pub fn filterbank(&self) -> &MelFilterbank {
        &self.bank
    }

    pub fn extract(&self, record: &AudioRecord) -> Result<FeatureMatrix> {
        if record.sample_rate_hz != self.config.sample_rate_hz {
            return Err(Error::InvalidConfig(format!(
                "record '{}' is sampled at {} Hz, expected {} Hz",
                record.record_id, record.sample_rate_hz, self.config.sample_rate_hz
            )));
        }
        self.extract_samples(&record.samples)
    }

    pub fn extract_samples(&self, samples: &[f64]) -> Result<FeatureMatrix> {
        let emphasized = pre_emphasize(samples, self.config.pre_emphasis)?;
        let frames = frame_and_window(&emphasized, &self.config)?;
        let mut analyzer = SpectrumAnalyzer::new(self.config.fft_size);
        let m = self.config.n_ceps;
        let mut data = Vec::with_capacity(frames.len() * m);
        for frame in &frames {
            let spectrum = analyzer.magnitudes(frame)?;
            let energies = log_mel_energies(&spectrum, &self.bank)?;
            data.extend(
                self.dct
                    .iter()
                    .map(|basis| basis.iter().zip(&energies).map(|(b, x)| b * x).sum::<f64>()),
            );
        }
        let out = FeatureMatrix::new(frames.len(), m, data)?;
        if !out.is_finite() {
            return Err(Error::Numerical("non-finite cepstral coefficient".into()));
        }
        Ok(out)
    }
}

pub fn extract_mfcc(record: &AudioRecord, config: &MfccConfig) -> Result<FeatureMatrix> {
    MfccExtractor::new(config)?.extract(record)
}
