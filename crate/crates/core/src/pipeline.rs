//! End-to-end training, scoring, evaluation and ablation over WAV corpora.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ClassifierKind, PipelineConfig, Reduction};
use crate::container::{load_model, save_model};
use crate::dataset::{
    cumulative_folds, fold_partition, load_reference, load_wav, split_train_eval, AudioRecord, Label, LabelTable,
    SplitSpec,
};
use crate::error::{Error, Result};
use crate::eval::{evaluate_at, sweep_curve, write_curve_csv, EvalReport, EvalWeights};
use crate::gmm::{em_fit, train_class_gmms, EmConfig, Gmm, GmmClassifier};
use crate::ivector::{accumulate_stats, extract_ivectors, train_tv, TotalVariabilityModel, TvConfig};
use crate::mfcc::{FeatureMatrix, MfccExtractor};
use crate::reduce::pca::{pca_fit, PcaModel};
use crate::reduce::vae::{vae_fit, VaeConfig, VaeModel};
use crate::reduce::Reducer;
use crate::svm::{svm_decision, svm_train, SvmModel, SvmParams};

pub const UBM_FILE: &str = "ubm.model";
pub const TV_FILE: &str = "tv.model";
pub const REDUCE_FILE: &str = "reduce.model";
pub const CLASSIFIER_FILE: &str = "classifier.model";
pub const MANIFEST_FILE: &str = "manifest.json";
const MANIFEST_FORMAT: u32 = 1;

/// Seeds for the individual training stages, derived from the run seed.
fn stage_seed(seed: u64, stage: u64) -> u64 {
    seed.wrapping_add(stage.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Sorted `*.wav` paths directly inside `dir`.
pub fn list_wavs(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::at_path(dir)(e.into()))? {
        let path = entry?.path();
        let is_wav = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav"));
        if is_wav && path.is_file() {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// Loads every WAV in `dir`, ordered by record id.
pub fn load_corpus(dir: impl AsRef<Path>) -> Result<Vec<AudioRecord>> {
    let records: Vec<AudioRecord> = list_wavs(dir)?.par_iter().map(load_wav).collect::<Result<_>>()?;
    let mut seen = std::collections::BTreeSet::new();
    for r in &records {
        if !seen.insert(r.record_id.as_str()) {
            return Err(Error::DuplicateRecord(r.record_id.clone()));
        }
    }
    Ok(records)
}

/// MFCCs per record id, extracted in parallel.
pub fn extract_features(records: &[AudioRecord], config: &PipelineConfig) -> Result<BTreeMap<String, FeatureMatrix>> {
    let extractor = MfccExtractor::new(&config.mfcc)?;
    let feats: Vec<(String, FeatureMatrix)> = records
        .par_iter()
        .map(|r| {
            extractor
                .extract(r)
                .map(|f| (r.record_id.clone(), f))
                .map_err(|e| Error::InvalidInput(format!("record '{}': {e}", r.record_id)))
        })
        .collect::<Result<_>>()?;
    Ok(feats.into_iter().collect())
}

#[derive(Debug, Clone, PartialEq)]
pub enum Classifier {
    Gmm(GmmClassifier),
    Svm(SvmModel),
}

impl Classifier {
    pub fn dim(&self) -> usize {
        match self {
            Classifier::Gmm(m) => m.dim(),
            Classifier::Svm(m) => m.dim(),
        }
    }

    /// Positive favors normal.
    pub fn score(&self, x: &[f64]) -> Result<f64> {
        match self {
            Classifier::Gmm(m) => m.score(x),
            Classifier::Svm(m) => svm_decision(m, x),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub ubm_log_likelihood: Vec<f64>,
    pub ubm_reinitialized: usize,
    pub tv_residual: Vec<f64>,
    pub tv_violations: Vec<usize>,
    pub pca_eigenvalues: Vec<f64>,
    pub vae_elbo: Vec<f64>,
    pub normal_gmm_log_likelihood: Vec<f64>,
    pub abnormal_gmm_log_likelihood: Vec<f64>,
    pub svm_converged: Option<bool>,
    pub svm_passes: Option<usize>,
    pub svm_support_vectors: Option<usize>,
    pub warnings: Vec<String>,
}

/// UBM and total-variability extractor shared by every back end.
#[derive(Debug, Clone)]
pub struct FrontEnd {
    pub ubm: Gmm,
    pub tv: TotalVariabilityModel,
}

impl FrontEnd {
    pub fn ivectors(&self, features: &[&FeatureMatrix]) -> Result<Vec<Vec<f64>>> {
        let stats = features
            .par_iter()
            .map(|f| accumulate_stats(&self.ubm, f))
            .collect::<Result<Vec<_>>>()?;
        extract_ivectors(&self.tv, &stats)
    }
}

/// Trains the UBM on pooled frames and the total-variability matrix on
/// per-record statistics.
pub fn train_front_end(
    features: &[&FeatureMatrix],
    config: &PipelineConfig,
    diag: &mut Diagnostics,
) -> Result<FrontEnd> {
    if features.is_empty() {
        return Err(Error::InvalidInput("no training records".into())).map_err(Error::in_stage("ubm"));
    }
    let pooled = FeatureMatrix::vstack(features.iter().copied()).map_err(Error::in_stage("ubm"))?;
    let ubm_cfg = EmConfig::new(config.ubm_components, config.ubm_iterations, stage_seed(config.seed, 1));
    let ubm_fit = em_fit(&pooled, &ubm_cfg).map_err(Error::in_stage("ubm"))?;
    diag.ubm_log_likelihood = ubm_fit.log_likelihood_trace;
    diag.ubm_reinitialized = ubm_fit.reinitialized;
    let ubm = ubm_fit.model;

    let stats = features
        .par_iter()
        .map(|f| accumulate_stats(&ubm, f))
        .collect::<Result<Vec<_>>>()
        .map_err(Error::in_stage("statistics"))?;
    let tv_cfg = TvConfig {
        rank: config.ivector_rank,
        iterations: config.tv_iterations,
        seed: stage_seed(config.seed, 2),
    };
    let tv_fit = train_tv(&ubm, &stats, &tv_cfg).map_err(Error::in_stage("total-variability"))?;
    diag.tv_residual = tv_fit.residual_trace;
    diag.tv_violations = tv_fit.monotonicity_violations;
    Ok(FrontEnd { ubm, tv: tv_fit.model })
}

fn matrix(rows: &[Vec<f64>]) -> Result<FeatureMatrix> {
    FeatureMatrix::from_rows(rows)
}

/// Fits the reduction on training i-vectors and the classifier on the
/// reduced vectors.
pub fn train_back_end(
    ivectors: &[Vec<f64>],
    labels: &[Label],
    config: &PipelineConfig,
    diag: &mut Diagnostics,
) -> Result<(Reducer, Classifier)> {
    if ivectors.len() != labels.len() {
        return Err(Error::dims(ivectors.len(), labels.len()));
    }
    let data = matrix(ivectors).map_err(Error::in_stage("reduction"))?;
    let reducer = match config.reduction {
        Reduction::None => Reducer::Identity { dim: data.cols() },
        Reduction::Pca => {
            let m = pca_fit(&data, config.reduced_dim).map_err(Error::in_stage("reduction"))?;
            diag.pca_eigenvalues = m.eigenvalues.as_slice().to_vec();
            Reducer::Pca(m)
        }
        Reduction::Vae => {
            let cfg = VaeConfig {
                latent: config.reduced_dim,
                hidden: config.vae_hidden,
                epochs: config.vae_epochs,
                learning_rate: config.vae_learning_rate,
                seed: stage_seed(config.seed, 3),
            };
            let fit = vae_fit(&data, &cfg).map_err(Error::in_stage("reduction"))?;
            diag.vae_elbo = fit.elbo_trace;
            diag.warnings.extend(fit.warnings);
            Reducer::Vae(fit.model)
        }
    };
    let reduced: Vec<Vec<f64>> = ivectors
        .iter()
        .map(|v| reducer.apply(v))
        .collect::<Result<_>>()
        .map_err(Error::in_stage("reduction"))?;

    let classifier = match config.classifier {
        ClassifierKind::Gmm => {
            let pick = |want: Label| -> Vec<Vec<f64>> {
                reduced
                    .iter()
                    .zip(labels)
                    .filter(|(_, &l)| l == want)
                    .map(|(v, _)| v.clone())
                    .collect()
            };
            let (normal, abnormal) = (pick(Label::Normal), pick(Label::Abnormal));
            if normal.is_empty() || abnormal.is_empty() {
                return Err(Error::InvalidInput("both classes need training records".into()))
                    .map_err(Error::in_stage("classifier"));
            }
            let cfg = EmConfig::new(
                config.class_gmm_components,
                config.class_gmm_iterations,
                stage_seed(config.seed, 4),
            );
            let (n, a) = train_class_gmms(&matrix(&normal)?, &matrix(&abnormal)?, &cfg)
                .map_err(Error::in_stage("classifier"))?;
            diag.normal_gmm_log_likelihood = n.log_likelihood_trace;
            diag.abnormal_gmm_log_likelihood = a.log_likelihood_trace;
            Classifier::Gmm(GmmClassifier {
                normal: n.model,
                abnormal: a.model,
            })
        }
        ClassifierKind::Svm => {
            let t: Vec<f64> = labels
                .iter()
                .map(|l| if *l == Label::Normal { 1.0 } else { -1.0 })
                .collect();
            let params = SvmParams {
                c: config.svm_c,
                sigma: config.svm_sigma,
                tolerance: config.svm_tolerance,
                max_passes: config.svm_max_passes,
                seed: stage_seed(config.seed, 5),
            };
            let fit = svm_train(&matrix(&reduced)?, &t, &params).map_err(Error::in_stage("classifier"))?;
            diag.svm_converged = Some(fit.converged);
            diag.svm_passes = Some(fit.passes);
            diag.svm_support_vectors = Some(fit.model.dual_coeffs.len());
            if !fit.converged {
                diag.warnings
                    .push(format!("SMO stopped after {} passes without converging", fit.passes));
            }
            Classifier::Svm(fit.model)
        }
    };
    Ok((reducer, classifier))
}

/// All trained stages plus the configuration that produced them.
#[derive(Debug, Clone)]
pub struct Bundle {
    pub config: PipelineConfig,
    pub ubm: Gmm,
    pub tv: TotalVariabilityModel,
    pub reducer: Reducer,
    pub classifier: Classifier,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: u32,
    /// Resolved configuration in `key = value` form.
    pub config: String,
    pub seed: u64,
    pub files: BTreeMap<String, String>,
    pub training_records: Vec<String>,
    pub diagnostics: Diagnostics,
}

impl Bundle {
    /// Checks that every stage's output feeds the next stage's input.
    pub fn check_consistency(&self) -> Result<()> {
        let bad = |m: String| Err(Error::IncompatibleBundle(m));
        if self.ubm.dim() != self.config.mfcc.n_ceps {
            return bad(format!(
                "UBM dimension {} but features have {} cepstra",
                self.ubm.dim(),
                self.config.mfcc.n_ceps
            ));
        }
        if self.tv.components() != self.ubm.components() || self.tv.dim() != self.ubm.dim() {
            return bad(format!(
                "total-variability model is {}×{}, UBM is {}×{}",
                self.tv.components(),
                self.tv.dim(),
                self.ubm.components(),
                self.ubm.dim()
            ));
        }
        if self.tv.ubm_means != self.ubm.means() || self.tv.ubm_variances != self.ubm.variances() {
            return bad("total-variability model was trained against a different UBM".into());
        }
        if self.reducer.input_dim() != self.tv.rank() {
            return bad(format!(
                "reduction expects {} inputs, i-vectors have {}",
                self.reducer.input_dim(),
                self.tv.rank()
            ));
        }
        if self.classifier.dim() != self.reducer.output_dim() {
            return bad(format!(
                "classifier expects {} inputs, reduction yields {}",
                self.classifier.dim(),
                self.reducer.output_dim()
            ));
        }
        Ok(())
    }

    pub fn score_features(&self, features: &[&FeatureMatrix]) -> Result<Vec<f64>> {
        let ivecs = FrontEnd {
            ubm: self.ubm.clone(),
            tv: self.tv.clone(),
        }
        .ivectors(features)?;
        ivecs
            .iter()
            .map(|v| self.classifier.score(&self.reducer.apply(v)?))
            .collect()
    }

    pub fn save(&self, dir: impl AsRef<Path>, training_records: Vec<String>, diagnostics: Diagnostics) -> Result<()> {
        self.check_consistency()?;
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::at_path(dir)(e.into()))?;
        let mut files = BTreeMap::new();
        save_model(&self.ubm, dir.join(UBM_FILE))?;
        files.insert("ubm".to_string(), UBM_FILE.to_string());
        save_model(&self.tv, dir.join(TV_FILE))?;
        files.insert("total_variability".to_string(), TV_FILE.to_string());
        let reduce_path = dir.join(REDUCE_FILE);
        match &self.reducer {
            Reducer::Identity { .. } => {
                if reduce_path.exists() {
                    fs::remove_file(&reduce_path)?;
                }
            }
            Reducer::Pca(m) => save_model(m, &reduce_path)?,
            Reducer::Vae(m) => save_model(m, &reduce_path)?,
        }
        if !matches!(self.reducer, Reducer::Identity { .. }) {
            files.insert("reduction".to_string(), REDUCE_FILE.to_string());
        }
        match &self.classifier {
            Classifier::Gmm(m) => save_model(m, dir.join(CLASSIFIER_FILE))?,
            Classifier::Svm(m) => save_model(m, dir.join(CLASSIFIER_FILE))?,
        }
        files.insert("classifier".to_string(), CLASSIFIER_FILE.to_string());
        let manifest = Manifest {
            format: MANIFEST_FORMAT,
            config: self.config.to_text(),
            seed: self.config.seed,
            files,
            training_records,
            diagnostics,
        };
        let mut json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Format(format!("manifest: {e}")))?;
        json.push('\n');
        fs::write(dir.join(MANIFEST_FILE), json)?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest = read_manifest(dir)?;
        if manifest.format != MANIFEST_FORMAT {
            return Err(Error::IncompatibleBundle(format!(
                "manifest format {} (expected {MANIFEST_FORMAT})",
                manifest.format
            )));
        }
        let config = PipelineConfig::parse(&manifest.config).map_err(Error::at_path(dir.join(MANIFEST_FILE)))?;
        let ubm: Gmm = load_model(dir.join(UBM_FILE))?;
        let tv: TotalVariabilityModel = load_model(dir.join(TV_FILE))?;
        let reducer = match config.reduction {
            Reduction::None => Reducer::Identity { dim: tv.rank() },
            Reduction::Pca => Reducer::Pca(load_model::<PcaModel>(dir.join(REDUCE_FILE))?),
            Reduction::Vae => Reducer::Vae(load_model::<VaeModel>(dir.join(REDUCE_FILE))?),
        };
        let classifier = match config.classifier {
            ClassifierKind::Gmm => Classifier::Gmm(load_model(dir.join(CLASSIFIER_FILE))?),
            ClassifierKind::Svm => Classifier::Svm(load_model(dir.join(CLASSIFIER_FILE))?),
        };
        let bundle = Bundle {
            config,
            ubm,
            tv,
            reducer,
            classifier,
        };
        bundle.check_consistency()?;
        Ok(bundle)
    }
}

pub fn read_manifest(dir: impl AsRef<Path>) -> Result<Manifest> {
    let path = dir.as_ref().join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::at_path(&path)(e.into()))?;
    serde_json::from_str(&text).map_err(|e| Error::at_path(&path)(Error::Format(e.to_string())))
}

/// Trains every stage on the given records.
pub fn train_bundle(
    features: &BTreeMap<String, FeatureMatrix>,
    labels: &LabelTable,
    config: &PipelineConfig,
) -> Result<(Bundle, Diagnostics)> {
    config.validate()?;
    let mut diag = Diagnostics::default();
    let ids: Vec<&String> = features.keys().collect();
    let mut y = Vec::with_capacity(ids.len());
    for id in &ids {
        let (l, _) = labels.get(id).ok_or_else(|| Error::MissingLabel((*id).clone()))?;
        y.push(l);
    }
    let feats: Vec<&FeatureMatrix> = features.values().collect();
    let front = train_front_end(&feats, config, &mut diag)?;
    let ivecs = front.ivectors(&feats).map_err(Error::in_stage("i-vector extraction"))?;
    let (reducer, classifier) = train_back_end(&ivecs, &y, config, &mut diag)?;
    let bundle = Bundle {
        config: config.clone(),
        ubm: front.ubm,
        tv: front.tv,
        reducer,
        classifier,
    };
    bundle.check_consistency()?;
    Ok((bundle, diag))
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub records: usize,
    pub diagnostics: Diagnostics,
}

/// Trains on every WAV in `data_dir` and writes the bundle to `out_dir`.
/// Every WAV must have a label.
pub fn cmd_train(
    data_dir: impl AsRef<Path>,
    labels_file: impl AsRef<Path>,
    config: &PipelineConfig,
    out_dir: impl AsRef<Path>,
) -> Result<TrainSummary> {
    config.validate()?;
    let labels = load_reference(labels_file)?;
    let records = load_corpus(data_dir)?;
    if let Some(r) = records.iter().find(|r| !labels.contains(&r.record_id)) {
        return Err(Error::MissingLabel(r.record_id.clone()));
    }
    let features = extract_features(&records, config).map_err(Error::in_stage("feature extraction"))?;
    let (bundle, diag) = train_bundle(&features, &labels, config)?;
    bundle.save(out_dir, features.keys().cloned().collect(), diag.clone())?;
    Ok(TrainSummary {
        records: features.len(),
        diagnostics: diag,
    })
}

/// Scores every WAV in `data_dir`; writes `record_id,score` rows sorted by id.
pub fn cmd_score(
    data_dir: impl AsRef<Path>,
    bundle_dir: impl AsRef<Path>,
    output_file: impl AsRef<Path>,
) -> Result<BTreeMap<String, f64>> {
    let bundle = Bundle::load(bundle_dir)?;
    let records = load_corpus(&data_dir)?;
    if records.is_empty() {
        log::warn!("no WAV files in {}", data_dir.as_ref().display());
    }
    let features = extract_features(&records, &bundle.config).map_err(Error::in_stage("feature extraction"))?;
    let feats: Vec<&FeatureMatrix> = features.values().collect();
    let values = bundle.score_features(&feats).map_err(Error::in_stage("scoring"))?;
    let scores: BTreeMap<String, f64> = features.keys().cloned().zip(values).collect();
    write_scores(output_file, &scores)?;
    Ok(scores)
}

pub fn write_scores(path: impl AsRef<Path>, scores: &BTreeMap<String, f64>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::at_path(path)(e.into()))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "record_id,score")?;
    for (id, s) in scores {
        writeln!(w, "{id},{s}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn parse_scores(text: &str) -> Result<BTreeMap<String, f64>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || (i == 0 && line.starts_with("record_id")) {
            continue;
        }
        let err = |message: String| Error::Parse { line: i + 1, message };
        let (id, s) = line
            .split_once(',')
            .ok_or_else(|| err(format!("expected record_id,score, got '{line}'")))?;
        let score: f64 = s.trim().parse().map_err(|e| err(format!("bad score '{s}': {e}")))?;
        if out.insert(id.trim().to_string(), score).is_some() {
            return Err(Error::DuplicateRecord(id.trim().to_string()));
        }
    }
    Ok(out)
}

pub fn read_scores(path: impl AsRef<Path>) -> Result<BTreeMap<String, f64>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::at_path(path)(e.into()))?;
    parse_scores(&text).map_err(Error::at_path(path))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EvalMode {
    Threshold(f64),
    /// Full sweep with the curve subsampled to this many points.
    Sweep {
        grid_size: usize,
    },
}

/// Evaluates a score file. In sweep mode the curve is written to
/// `curve_file` when given.
pub fn cmd_evaluate(
    scores_file: impl AsRef<Path>,
    labels_file: impl AsRef<Path>,
    weights: &EvalWeights,
    mode: EvalMode,
    curve_file: Option<&Path>,
) -> Result<EvalReport> {
    let scores = read_scores(scores_file)?;
    let labels = load_reference(labels_file)?;
    let report = match mode {
        EvalMode::Threshold(t) => evaluate_at(&scores, &labels, weights, t)?,
        EvalMode::Sweep { grid_size } => sweep_curve(&scores, &labels, weights, grid_size)?,
    };
    if let Some(path) = curve_file {
        let file = fs::File::create(path).map_err(|e| Error::at_path(path)(e.into()))?;
        let mut w = BufWriter::new(file);
        write_curve_csv(&report.curve, &mut w)?;
        w.flush()?;
    }
    Ok(report)
}

#[derive(Debug)]
pub struct AblationCell {
    pub folds_used: usize,
    pub train_percent: f64,
    pub reduction: Reduction,
    pub result: Result<EvalReport>,
}

#[derive(Debug)]
pub struct AblationTable {
    pub folds: usize,
    pub cells: Vec<AblationCell>,
}

impl AblationTable {
    /// CSV grid `train_pct,reduction,Se,Sp,MAcc,threshold`; failed cells read "error".
    pub fn to_csv(&self) -> String {
        let mut s = String::from("train_pct,reduction,Se,Sp,MAcc,threshold\n");
        for c in &self.cells {
            match &c.result {
                Ok(r) => s.push_str(&format!(
                    "{},{},{:.4},{:.4},{:.4},{}\n",
                    c.train_percent, c.reduction, r.se, r.sp, r.macc, r.threshold
                )),
                Err(_) => s.push_str(&format!(
                    "{},{},error,error,error,error\n",
                    c.train_percent, c.reduction
                )),
            }
        }
        s
    }
}

/// Trains on cumulative folds of the training portion and evaluates each on
/// a fixed held-out split, once per reduction method. Cells report the
/// best-threshold operating point on the held-out set.
pub fn cmd_ablate(
    data_dir: impl AsRef<Path>,
    labels_file: impl AsRef<Path>,
    config: &PipelineConfig,
    folds: usize,
    weights: &EvalWeights,
) -> Result<AblationTable> {
    if folds < 2 {
        return Err(Error::InvalidConfig(format!("need at least 2 folds, got {folds}")));
    }
    let labels = load_reference(labels_file)?;
    let records = load_corpus(data_dir)?;
    if let Some(r) = records.iter().find(|r| !labels.contains(&r.record_id)) {
        return Err(Error::MissingLabel(r.record_id.clone()));
    }
    let features = extract_features(&records, config).map_err(Error::in_stage("feature extraction"))?;
    let present: LabelTable = labels
        .iter()
        .filter(|(id, _, _)| features.contains_key(*id))
        .map(|(id, l, q)| (id.to_string(), l, q))
        .collect();
    let split = SplitSpec::new(0.8, config.seed, folds)?;
    let (train_pool, held_out) = split_train_eval(&present, &split)?;
    let fold_tables = fold_partition(&train_pool, &split)?;

    let held_ids: Vec<&str> = held_out.ids().collect();
    let held_feats: Vec<&FeatureMatrix> = held_ids.iter().map(|id| &features[*id]).collect();

    let mut cells = Vec::new();
    for k in 1..=folds {
        let train = cumulative_folds(&fold_tables, k);
        let pct = 100.0 * k as f64 / folds as f64;
        let ids: Vec<&str> = train.ids().collect();
        let feats: Vec<&FeatureMatrix> = ids.iter().map(|id| &features[*id]).collect();
        let y: Vec<Label> = ids.iter().map(|id| train.get(id).expect("own id").0).collect();
        let mut diag = Diagnostics::default();
        let front = train_front_end(&feats, config, &mut diag).and_then(|f| {
            let tr = f.ivectors(&feats)?;
            let ho = f.ivectors(&held_feats)?;
            Ok((tr, ho))
        });
        for reduction in Reduction::ALL {
            let result = match &front {
                Err(e) => Err(Error::InvalidInput(format!("front end failed: {e}"))),
                Ok((tr, ho)) => {
                    let cfg = PipelineConfig {
                        reduction,
                        ..config.clone()
                    };
                    train_back_end(tr, &y, &cfg, &mut Diagnostics::default()).and_then(|(red, cls)| {
                        let scores = held_ids
                            .iter()
                            .zip(ho)
                            .map(|(id, v)| Ok((id.to_string(), cls.score(&red.apply(v)?)?)))
                            .collect::<Result<BTreeMap<_, _>>>()?;
                        sweep_curve(&scores, &held_out, weights, 2)
                    })
                }
            };
            if let Err(e) = &result {
                log::warn!("ablation cell {pct}% / {reduction} failed: {e}");
            }
            cells.push(AblationCell {
                folds_used: k,
                train_percent: pct,
                reduction,
                result,
            });
        }
    }
    Ok(AblationTable { folds, cells })
}

/// Writes each record's MFCC matrix to `<out_dir>/<id>.mfcc`.
pub fn cmd_extract_features(
    data_dir: impl AsRef<Path>,
    out_dir: impl AsRef<Path>,
    config: &PipelineConfig,
) -> Result<usize> {
    config.mfcc.validate()?;
    let records = load_corpus(data_dir)?;
    let features = extract_features(&records, config)?;
    let out = out_dir.as_ref();
    fs::create_dir_all(out).map_err(|e| Error::at_path(out)(e.into()))?;
    for (id, f) in &features {
        save_model(f, out.join(format!("{id}.mfcc")))?;
    }
    Ok(features.len())
}
