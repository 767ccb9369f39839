//! Seeded synthetic two-class corpus of band-limited noise in white noise.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::dataset::{write_wav, AudioRecord, Label, LabelTable, Quality};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub records: usize,
    pub sample_rate_hz: u32,
    pub duration_secs: f64,
    /// Band centers for normal and abnormal records.
    pub normal_center_hz: f64,
    pub abnormal_center_hz: f64,
    pub bandwidth_hz: f64,
    pub snr_db: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            records: 40,
            sample_rate_hz: 2000,
            duration_secs: 10.0,
            normal_center_hz: 150.0,
            abnormal_center_hz: 400.0,
            bandwidth_hz: 500.0,
            snr_db: 10.0,
            seed: 0,
        }
    }
}

/// Unit-power Gaussian noise restricted to `[center - bw/2, center + bw/2]` Hz.
pub fn band_limited_noise(
    n: usize,
    sample_rate_hz: u32,
    center_hz: f64,
    bandwidth_hz: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let mut buf: Vec<Complex<f64>> = (0..n).map(|_| Complex::new(StandardNormal.sample(rng), 0.0)).collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);
    let (lo, hi) = (center_hz - bandwidth_hz / 2.0, center_hz + bandwidth_hz / 2.0);
    for (k, c) in buf.iter_mut().enumerate() {
        let f = k.min(n - k) as f64 * sample_rate_hz as f64 / n as f64;
        if f < lo || f > hi {
            *c = Complex::new(0.0, 0.0);
        }
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let x: Vec<f64> = buf.iter().map(|c| c.re).collect();
    let power = x.iter().map(|v| v * v).sum::<f64>() / n as f64;
    let g = if power > 0.0 { power.sqrt().recip() } else { 0.0 };
    x.into_iter().map(|v| v * g).collect()
}

/// Alternating normal/abnormal records `syn000`, `syn001`, ... with peak
/// amplitude 0.9.
pub fn generate(spec: &SyntheticSpec) -> Result<Vec<AudioRecord>> {
    if spec.records == 0 || spec.sample_rate_hz == 0 || !(spec.duration_secs > 0.0) {
        return Err(Error::InvalidConfig(
            "synthetic corpus needs records, rate and duration".into(),
        ));
    }
    let nyquist = spec.sample_rate_hz as f64 / 2.0;
    for c in [spec.normal_center_hz, spec.abnormal_center_hz] {
        if !(c > 0.0 && c < nyquist) {
            return Err(Error::InvalidConfig(format!(
                "band center {c} Hz outside (0, {nyquist})"
            )));
        }
    }
    let n = (spec.duration_secs * spec.sample_rate_hz as f64).round() as usize;
    let noise_sd = 10f64.powf(-spec.snr_db / 20.0);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    (0..spec.records)
        .map(|i| {
            let label = if i % 2 == 0 { Label::Normal } else { Label::Abnormal };
            let center = match label {
                Label::Normal => spec.normal_center_hz,
                Label::Abnormal => spec.abnormal_center_hz,
            };
            let band = band_limited_noise(n, spec.sample_rate_hz, center, spec.bandwidth_hz, &mut rng);
            let mixed: Vec<f64> = band
                .iter()
                .map(|s| s + noise_sd * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
                .collect();
            let peak = mixed.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let scale = if peak > 0.0 { 0.9 / peak } else { 1.0 };
            let mut rec = AudioRecord::new(
                format!("syn{i:03}"),
                mixed.into_iter().map(|v| v * scale).collect(),
                spec.sample_rate_hz,
            )?;
            rec.label = Some(label);
            Ok(rec)
        })
        .collect()
}

/// Label table of generated records (all good quality).
pub fn label_table(records: &[AudioRecord]) -> LabelTable {
    records
        .iter()
        .filter_map(|r| r.label.map(|l| (r.record_id.clone(), l, Quality::Good)))
        .collect()
}

/// Writes `<id>.wav` files into `dir`.
pub fn write_records(dir: impl AsRef<Path>, records: &[AudioRecord]) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    for r in records {
        write_wav(dir.join(format!("{}.wav", r.record_id)), &r.samples, r.sample_rate_hz)?;
    }
    Ok(())
}

/// Renders a label table in the `id,code,quality` reference format.
pub fn reference_text(table: &LabelTable) -> String {
    table
        .iter()
        .map(|(id, l, q)| {
            let code = match l {
                Label::Normal => "-1",
                Label::Abnormal => "1",
            };
            let qual = match q {
                Quality::Good => "g",
                Quality::Poor => "p",
            };
            format!("{id},{code},{qual}\n")
        })
        .collect()
}
