//! Pipeline configuration as a flat `key = value` file.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mfcc::MfccConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Reduction {
    None,
    Pca,
    Vae,
}

impl Reduction {
    pub const ALL: [Reduction; 3] = [Reduction::None, Reduction::Pca, Reduction::Vae];
}

impl fmt::Display for Reduction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Reduction::None => "none",
            Reduction::Pca => "pca",
            Reduction::Vae => "vae",
        })
    }
}

impl FromStr for Reduction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(Reduction::None),
            "pca" => Ok(Reduction::Pca),
            "vae" => Ok(Reduction::Vae),
            _ => Err(Error::InvalidConfig(format!(
                "unknown reduction '{s}' (none, pca, vae)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClassifierKind {
    Gmm,
    Svm,
}

impl fmt::Display for ClassifierKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ClassifierKind::Gmm => "gmm",
            ClassifierKind::Svm => "svm",
        })
    }
}

impl FromStr for ClassifierKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gmm" => Ok(ClassifierKind::Gmm),
            "svm" => Ok(ClassifierKind::Svm),
            _ => Err(Error::InvalidConfig(format!("unknown classifier '{s}' (gmm, svm)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub mfcc: MfccConfig,
    pub ubm_components: usize,
    pub ubm_iterations: usize,
    pub ivector_rank: usize,
    pub tv_iterations: usize,
    pub reduction: Reduction,
    pub reduced_dim: usize,
    pub classifier: ClassifierKind,
    pub class_gmm_components: usize,
    pub class_gmm_iterations: usize,
    pub vae_hidden: usize,
    pub vae_epochs: usize,
    pub vae_learning_rate: f64,
    pub svm_c: f64,
    /// `None` uses the median pairwise distance of the training vectors.
    pub svm_sigma: Option<f64>,
    pub svm_tolerance: f64,
    pub svm_max_passes: usize,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            mfcc: MfccConfig::default(),
            ubm_components: 2048,
            ubm_iterations: 10,
            ivector_rank: 100,
            tv_iterations: 10,
            reduction: Reduction::Pca,
            reduced_dim: 50,
            classifier: ClassifierKind::Gmm,
            class_gmm_components: 128,
            class_gmm_iterations: 20,
            vae_hidden: 64,
            vae_epochs: 50,
            vae_learning_rate: 1e-3,
            svm_c: 1.0,
            svm_sigma: None,
            svm_tolerance: 1e-3,
            svm_max_passes: 1000,
            seed: 0,
        }
    }
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::InvalidConfig(format!("{key}: cannot parse '{value}': {e}")))
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.mfcc.validate()?;
        let counts = [
            ("ubm_components", self.ubm_components),
            ("ivector_rank", self.ivector_rank),
            ("reduced_dim", self.reduced_dim),
            ("class_gmm_components", self.class_gmm_components),
            ("vae_hidden", self.vae_hidden),
            ("svm_max_passes", self.svm_max_passes),
        ];
        for (k, v) in counts {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{k} must be positive")));
            }
        }
        if self.reduction != Reduction::None && self.reduced_dim > self.ivector_rank {
            return Err(Error::InvalidConfig(format!(
                "reduced_dim {} exceeds ivector_rank {}",
                self.reduced_dim, self.ivector_rank
            )));
        }
        let sv = self.ubm_components * self.mfcc.n_ceps;
        if self.ivector_rank > sv {
            return Err(Error::InvalidConfig(format!(
                "ivector_rank {} exceeds the supervector size {sv}",
                self.ivector_rank
            )));
        }
        for (k, v) in [
            ("vae_learning_rate", self.vae_learning_rate),
            ("svm_c", self.svm_c),
            ("svm_tolerance", self.svm_tolerance),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!("{k} must be positive")));
            }
        }
        if let Some(s) = self.svm_sigma {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::InvalidConfig("svm_sigma must be positive or 'auto'".into()));
            }
        }
        Ok(())
    }

    /// Output dimension of the reduction stage.
    pub fn embedding_dim(&self) -> usize {
        match self.reduction {
            Reduction::None => self.ivector_rank,
            _ => self.reduced_dim,
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "pre_emphasis" => self.mfcc.pre_emphasis = parse_num(key, v)?,
            "frame_ms" => self.mfcc.frame_ms = parse_num(key, v)?,
            "hop_ms" => self.mfcc.hop_ms = parse_num(key, v)?,
            "fft_size" => self.mfcc.fft_size = parse_num(key, v)?,
            "n_filters" => self.mfcc.n_filters = parse_num(key, v)?,
            "n_ceps" => self.mfcc.n_ceps = parse_num(key, v)?,
            "sample_rate_hz" => self.mfcc.sample_rate_hz = parse_num(key, v)?,
            "ubm_components" => self.ubm_components = parse_num(key, v)?,
            "ubm_iterations" => self.ubm_iterations = parse_num(key, v)?,
            "ivector_rank" => self.ivector_rank = parse_num(key, v)?,
            "tv_iterations" => self.tv_iterations = parse_num(key, v)?,
            "reduction" => self.reduction = v.parse()?,
            "reduced_dim" => self.reduced_dim = parse_num(key, v)?,
            "classifier" => self.classifier = v.parse()?,
            "class_gmm_components" => self.class_gmm_components = parse_num(key, v)?,
            "class_gmm_iterations" => self.class_gmm_iterations = parse_num(key, v)?,
            "vae_hidden" => self.vae_hidden = parse_num(key, v)?,
            "vae_epochs" => self.vae_epochs = parse_num(key, v)?,
            "vae_learning_rate" => self.vae_learning_rate = parse_num(key, v)?,
            "svm_c" => self.svm_c = parse_num(key, v)?,
            "svm_sigma" => {
                self.svm_sigma = if v.eq_ignore_ascii_case("auto") {
                    None
                } else {
                    Some(parse_num(key, v)?)
                }
            }
            "svm_tolerance" => self.svm_tolerance = parse_num(key, v)?,
            "svm_max_passes" => self.svm_max_passes = parse_num(key, v)?,
            "seed" => self.seed = parse_num(key, v)?,
            other => return Err(Error::InvalidConfig(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines over `self`. `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                message: format!("expected key = value, got '{line}'"),
            })?;
            self.set(k, v).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.apply_text(text)?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::at_path(path)(e.into()))?;
        Self::parse(&text).map_err(Error::at_path(path))
    }

    /// Canonical `key = value` rendering; parses back to an equal config.
    pub fn to_text(&self) -> String {
        let m = &self.mfcc;
        let sigma = self.svm_sigma.map_or_else(|| "auto".to_string(), |s| s.to_string());
        let pairs: [(&str, String); 24] = [
            ("pre_emphasis", m.pre_emphasis.to_string()),
            ("frame_ms", m.frame_ms.to_string()),
            ("hop_ms", m.hop_ms.to_string()),
            ("fft_size", m.fft_size.to_string()),
            ("n_filters", m.n_filters.to_string()),
            ("n_ceps", m.n_ceps.to_string()),
            ("sample_rate_hz", m.sample_rate_hz.to_string()),
            ("ubm_components", self.ubm_components.to_string()),
            ("ubm_iterations", self.ubm_iterations.to_string()),
            ("ivector_rank", self.ivector_rank.to_string()),
            ("tv_iterations", self.tv_iterations.to_string()),
            ("reduction", self.reduction.to_string()),
            ("reduced_dim", self.reduced_dim.to_string()),
            ("classifier", self.classifier.to_string()),
            ("class_gmm_components", self.class_gmm_components.to_string()),
            ("class_gmm_iterations", self.class_gmm_iterations.to_string()),
            ("vae_hidden", self.vae_hidden.to_string()),
            ("vae_epochs", self.vae_epochs.to_string()),
            ("vae_learning_rate", self.vae_learning_rate.to_string()),
            ("svm_c", self.svm_c.to_string()),
            ("svm_sigma", sigma),
            ("svm_tolerance", self.svm_tolerance.to_string()),
            ("svm_max_passes", self.svm_max_passes.to_string()),
            ("seed", self.seed.to_string()),
        ];
        pairs.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}
