//! Quality-weighted sensitivity, specificity and modified accuracy, plus
//! threshold sweeps for DET/DAT curves.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::{Label, LabelTable, Quality};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalWeights {
    pub wa1: f64,
    pub wa2: f64,
    pub wn1: f64,
    pub wn2: f64,
}

impl EvalWeights {
    pub const TRAINING_PROFILE: EvalWeights = EvalWeights {
        wa1: 0.8602,
        wa2: 0.1398,
        wn1: 0.9252,
        wn2: 0.0748,
    };

    /// Weights where every quality class counts the same as recall.
    pub const UNIFORM: EvalWeights = EvalWeights {
        wa1: 0.5,
        wa2: 0.5,
        wn1: 0.5,
        wn2: 0.5,
    };

    pub fn new(wa1: f64, wa2: f64, wn1: f64, wn2: f64) -> Result<Self> {
        let w = EvalWeights { wa1, wa2, wn1, wn2 };
        for v in [wa1, wa2, wn1, wn2] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidConfig(format!("weight {v} outside [0, 1]")));
            }
        }
        if (wa1 + wa2 - 1.0).abs() > 1e-6 || (wn1 + wn2 - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidConfig(format!(
                "weights must satisfy wa1 + wa2 = 1 and wn1 + wn2 = 1, got {w}"
            )));
        }
        Ok(w)
    }
}

impl Default for EvalWeights {
    fn default() -> Self {
        Self::TRAINING_PROFILE
    }
}

impl fmt::Display for EvalWeights {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{},{}", self.wa1, self.wa2, self.wn1, self.wn2)
    }
}

/// Parses `wa1,wa2,wn1,wn2`.
impl FromStr for EvalWeights {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::InvalidConfig(format!("bad weights '{s}': {e}")))?;
        match parts[..] {
            [a1, a2, n1, n2] => EvalWeights::new(a1, a2, n1, n2),
            _ => Err(Error::InvalidConfig(format!(
                "expected four comma-separated weights, got '{s}'"
            ))),
        }
    }
}

/// Counts by true class (`a`/`n` prefix), predicted class (`a`/`q`/`n`) and
/// signal quality (1 good, 2 poor).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub aa1: u64,
    pub aq1: u64,
    pub an1: u64,
    pub aa2: u64,
    pub aq2: u64,
    pub an2: u64,
    pub na1: u64,
    pub nq1: u64,
    pub nn1: u64,
    pub na2: u64,
    pub nq2: u64,
    pub nn2: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.aa1
            + self.aq1
            + self.an1
            + self.aa2
            + self.aq2
            + self.an2
            + self.na1
            + self.nq1
            + self.nn1
            + self.na2
            + self.nq2
            + self.nn2
    }

    fn add(&mut self, truth: Label, quality: Quality, predicted: Label, delta: i64) {
        let cell = match (truth, predicted, quality) {
            (Label::Abnormal, Label::Abnormal, Quality::Good) => &mut self.aa1,
            (Label::Abnormal, Label::Normal, Quality::Good) => &mut self.an1,
            (Label::Abnormal, Label::Abnormal, Quality::Poor) => &mut self.aa2,
            (Label::Abnormal, Label::Normal, Quality::Poor) => &mut self.an2,
            (Label::Normal, Label::Abnormal, Quality::Good) => &mut self.na1,
            (Label::Normal, Label::Normal, Quality::Good) => &mut self.nn1,
            (Label::Normal, Label::Abnormal, Quality::Poor) => &mut self.na2,
            (Label::Normal, Label::Normal, Quality::Poor) => &mut self.nn2,
        };
        *cell = cell.checked_add_signed(delta).expect("confusion count underflow");
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub threshold: f64,
    pub se: f64,
    pub sp: f64,
    pub macc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub se: f64,
    pub sp: f64,
    pub macc: f64,
    pub threshold: f64,
    pub curve: Vec<CurvePoint>,
}

impl EvalReport {
    /// One-line summary with metrics to four decimals.
    pub fn summary_line(&self) -> String {
        format!(
            "{{\"Se\": {:.4}, \"Sp\": {:.4}, \"MAcc\": {:.4}, \"threshold\": {}}}",
            self.se,
            self.sp,
            self.macc,
            fmt_threshold(self.threshold)
        )
    }
}

fn fmt_threshold(t: f64) -> String {
    if t == f64::INFINITY {
        "inf".into()
    } else if t == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{t}")
    }
}

/// Score strictly above the threshold is Normal; everything else Abnormal.
pub fn apply_threshold(scores: &BTreeMap<String, f64>, threshold: f64) -> BTreeMap<String, Label> {
    scores
        .iter()
        .map(|(id, &s)| {
            let label = if s > threshold { Label::Normal } else { Label::Abnormal };
            (id.clone(), label)
        })
        .collect()
}

pub fn tally_confusion(predictions: &BTreeMap<String, Label>, truth: &LabelTable) -> Result<ConfusionCounts> {
    let missing: Vec<String> = predictions.keys().filter(|id| !truth.contains(id)).cloned().collect();
    if !missing.is_empty() {
        return Err(Error::UnknownIds(missing));
    }
    let mut counts = ConfusionCounts::default();
    for (id, &pred) in predictions {
        let (label, quality) = truth.get(id).expect("checked above");
        counts.add(label, quality, pred, 1);
    }
    Ok(counts)
}

/// Weighted sum of per-quality ratios; terms with an empty denominator are
/// dropped and the remaining weights rescaled to sum to one.
fn weighted_ratio(terms: [(f64, u64, u64); 2], what: &str) -> Result<f64> {
    let present: Vec<(f64, u64, u64)> = terms.into_iter().filter(|t| t.2 > 0).collect();
    match present.len() {
        0 => Err(Error::UndefinedMetric(format!("no {what} records"))),
        1 => {
            let (_, num, den) = present[0];
            Ok(num as f64 / den as f64)
        }
        _ => Ok(present
            .iter()
            .map(|&(w, num, den)| w * num as f64 / den as f64)
            .sum::<f64>()
            .clamp(0.0, 1.0)),
    }
}

pub fn compute_se_sp(counts: &ConfusionCounts, weights: &EvalWeights) -> Result<(f64, f64)> {
    let c = counts;
    let se = weighted_ratio(
        [
            (weights.wa1, c.aa1, c.aa1 + c.aq1 + c.an1),
            (weights.wa2, c.aa2 + c.aq2, c.aa2 + c.aq2 + c.an2),
        ],
        "abnormal",
    )?;
    let sp = weighted_ratio(
        [
            (weights.wn1, c.nn1, c.na1 + c.nq1 + c.nn1),
            (weights.wn2, c.nn2 + c.nq2, c.na2 + c.nq2 + c.nn2),
        ],
        "normal",
    )?;
    Ok((se, sp))
}

pub fn compute_macc(se: f64, sp: f64) -> f64 {
    (se + sp) / 2.0
}

fn check_scores(scores: &BTreeMap<String, f64>) -> Result<()> {
    let bad: Vec<&String> = scores
        .iter()
        .filter(|(_, s)| !s.is_finite())
        .map(|(id, _)| id)
        .collect();
    if bad.is_empty() {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("non-finite scores for {bad:?}")))
    }
}

/// Report at a single fixed threshold (empty curve).
pub fn evaluate_at(
    scores: &BTreeMap<String, f64>,
    truth: &LabelTable,
    weights: &EvalWeights,
    threshold: f64,
) -> Result<EvalReport> {
    check_scores(scores)?;
    let counts = tally_confusion(&apply_threshold(scores, threshold), truth)?;
    let (se, sp) = compute_se_sp(&counts, weights)?;
    Ok(EvalReport {
        se,
        sp,
        macc: compute_macc(se, sp),
        threshold,
        curve: Vec::new(),
    })
}

/// Midpoint of `a < b`, kept strictly below `b`.
fn midpoint(a: f64, b: f64) -> f64 {
    let m = a / 2.0 + b / 2.0;
    if m >= b {
        a
    } else {
        m
    }
}

/// Candidate thresholds: `-∞`, midpoints between consecutive distinct scores, `+∞`.
pub fn candidate_thresholds(scores: &BTreeMap<String, f64>) -> Vec<f64> {
    let mut s: Vec<f64> = scores.values().copied().collect();
    s.sort_by(f64::total_cmp);
    s.dedup();
    let mut out = Vec::with_capacity(s.len() + 1);
    out.push(f64::NEG_INFINITY);
    out.extend(s.windows(2).map(|w| midpoint(w[0], w[1])));
    out.push(f64::INFINITY);
    out
}

/// Sweeps every candidate threshold, returning the best-MAcc operating point
/// and a curve subsampled to at most `grid_size` points (the best point is
/// always included).
pub fn sweep_curve(
    scores: &BTreeMap<String, f64>,
    truth: &LabelTable,
    weights: &EvalWeights,
    grid_size: usize,
) -> Result<EvalReport> {
    if grid_size < 2 {
        return Err(Error::InvalidConfig(format!(
            "grid size {grid_size} must be at least 2"
        )));
    }
    if scores.is_empty() {
        return Err(Error::InvalidInput("no scores to sweep".into()));
    }
    check_scores(scores)?;

    let mut entries: Vec<(f64, Label, Quality)> = Vec::with_capacity(scores.len());
    let mut missing = Vec::new();
    for (id, &s) in scores {
        match truth.get(id) {
            Some((l, q)) => entries.push((s, l, q)),
            None => missing.push(id.clone()),
        }
    }
    if !missing.is_empty() {
        return Err(Error::UnknownIds(missing));
    }
    for want in [Label::Normal, Label::Abnormal] {
        if !entries.iter().any(|e| e.1 == want) {
            return Err(Error::UndefinedMetric(format!("no {want} records in the scored set")));
        }
    }
    entries.sort_by(|a, b| a.0.total_cmp(&b.0));

    let thresholds = candidate_thresholds(scores);
    let mut counts = ConfusionCounts::default();
    for &(_, l, q) in &entries {
        counts.add(l, q, Label::Normal, 1);
    }
    let point = |threshold: f64, counts: &ConfusionCounts| -> Result<CurvePoint> {
        let (se, sp) = compute_se_sp(counts, weights)?;
        Ok(CurvePoint {
            threshold,
            se,
            sp,
            macc: compute_macc(se, sp),
        })
    };

    let mut all = Vec::with_capacity(thresholds.len());
    let mut next = 0;
    for &th in &thresholds {
        while next < entries.len() && entries[next].0 <= th {
            let (_, l, q) = entries[next];
            counts.add(l, q, Label::Normal, -1);
            counts.add(l, q, Label::Abnormal, 1);
            next += 1;
        }
        all.push(point(th, &counts)?);
    }

    let best_idx = all
        .iter()
        .enumerate()
        .fold(0, |best, (i, p)| if p.macc > all[best].macc { i } else { best });
    let best = all[best_idx];

    let curve = if all.len() <= grid_size {
        all
    } else {
        let n = all.len();
        let mut idx: Vec<usize> = (0..grid_size)
            .map(|i| ((i as f64) * (n - 1) as f64 / (grid_size - 1) as f64).round() as usize)
            .collect();
        if !idx.contains(&best_idx) {
            let inner = if idx.len() > 2 { 1..idx.len() - 1 } else { 0..idx.len() };
            let slot = inner
                .min_by_key(|&i| idx[i].abs_diff(best_idx))
                .expect("non-empty grid");
            idx[slot] = best_idx;
            idx.sort_unstable();
        }
        idx.dedup();
        idx.into_iter().map(|i| all[i]).collect()
    };

    Ok(EvalReport {
        se: best.se,
        sp: best.sp,
        macc: best.macc,
        threshold: best.threshold,
        curve,
    })
}

pub fn write_curve_csv(points: &[CurvePoint], mut out: impl Write) -> Result<()> {
    writeln!(out, "threshold,Se,Sp,MAcc")?;
    for p in points {
        writeln!(out, "{},{},{},{}", fmt_threshold(p.threshold), p.se, p.sp, p.macc)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn map(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn threshold_rule() {
        let p = apply_threshold(&map(&[("a", 0.5), ("b", -0.3)]), 0.0);
        assert_eq!(p["a"], Label::Normal);
        assert_eq!(p["b"], Label::Abnormal);
        assert_eq!(apply_threshold(&map(&[("a", 0.0)]), 0.0)["a"], Label::Abnormal);
        let all = apply_threshold(&map(&[("a", -1e300), ("b", 3.0)]), f64::NEG_INFINITY);
        assert!(all.values().all(|&l| l == Label::Normal));
    }

    #[test]
    fn tally_examples() {
        let truth: LabelTable = (0..3)
            .map(|i| (format!("r{i}"), Label::Abnormal, Quality::Good))
            .collect();
        let preds = (0..3).map(|i| (format!("r{i}"), Label::Abnormal)).collect();
        let c = tally_confusion(&preds, &truth).unwrap();
        assert_eq!(
            c,
            ConfusionCounts {
                aa1: 3,
                ..Default::default()
            }
        );

        let truth: LabelTable = [("x".to_string(), Label::Normal, Quality::Poor)].into_iter().collect();
        let preds = [("x".to_string(), Label::Abnormal)].into_iter().collect();
        let c = tally_confusion(&preds, &truth).unwrap();
        assert_eq!(
            c,
            ConfusionCounts {
                na2: 1,
                ..Default::default()
            }
        );

        let preds = [("y".to_string(), Label::Abnormal), ("z".to_string(), Label::Normal)]
            .into_iter()
            .collect();
        match tally_confusion(&preds, &truth) {
            Err(Error::UnknownIds(ids)) => assert_eq!(ids, vec!["y", "z"]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn se_sp_examples() {
        let c = ConfusionCounts {
            aa1: 9,
            an1: 1,
            nn1: 4,
            ..Default::default()
        };
        let (se, sp) = compute_se_sp(&c, &EvalWeights::default()).unwrap();
        assert_abs_diff_eq!(se, 0.9, epsilon = 1e-15);
        assert_eq!(sp, 1.0);

        let c = ConfusionCounts {
            aa1: 8,
            an1: 2,
            aa2: 1,
            an2: 1,
            nn1: 1,
            ..Default::default()
        };
        let (se, _) = compute_se_sp(&c, &EvalWeights::TRAINING_PROFILE).unwrap();
        assert_abs_diff_eq!(se, 0.75806, epsilon = 1e-10);

        let none = ConfusionCounts {
            nn1: 3,
            ..Default::default()
        };
        assert!(matches!(
            compute_se_sp(&none, &EvalWeights::default()),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn weights_parse_and_validate() {
        let w: EvalWeights = "0.8602,0.1398,0.9252,0.0748".parse().unwrap();
        assert_eq!(w, EvalWeights::TRAINING_PROFILE);
        assert!("0.5,0.6,0.5,0.5".parse::<EvalWeights>().is_err());
        assert!("0.5,0.5,0.5".parse::<EvalWeights>().is_err());
        assert!("a,b,c,d".parse::<EvalWeights>().is_err());
    }

    #[test]
    fn macc_examples() {
        assert_eq!(compute_macc(0.845, 0.785), 0.815);
        assert_eq!(compute_macc(0.3, 0.3), 0.3);
        assert_eq!(compute_macc(1.0, 0.0), 0.5);
    }

    #[test]
    fn sweep_endpoints_and_best() {
        let scores = map(&[("a", 2.0), ("b", 1.0), ("c", -1.0), ("d", -2.0), ("e", 1.0)]);
        let truth: LabelTable = [
            ("a", Label::Normal),
            ("b", Label::Normal),
            ("c", Label::Abnormal),
            ("d", Label::Abnormal),
            ("e", Label::Abnormal),
        ]
        .into_iter()
        .map(|(id, l)| (id.to_string(), l, Quality::Good))
        .collect();
        let r = sweep_curve(&scores, &truth, &EvalWeights::default(), 100).unwrap();
        let first = r.curve.first().unwrap();
        let last = r.curve.last().unwrap();
        assert_eq!((first.se, first.sp), (0.0, 1.0));
        assert_eq!((last.se, last.sp), (1.0, 0.0));
        assert_eq!(r.curve.len(), 5);
        // best threshold sits between -1 and 1
        assert_eq!(r.threshold, 0.0);
        assert_abs_diff_eq!(r.macc, (2.0 / 3.0 + 1.0) / 2.0, epsilon = 1e-15);
        assert_eq!(r.macc, compute_macc(r.se, r.sp));
    }

    #[test]
    fn sweep_subsamples_and_keeps_best() {
        let scores: BTreeMap<String, f64> = (0..200).map(|i| (format!("r{i:03}"), i as f64)).collect();
        let truth: LabelTable = (0..200)
            .map(|i| {
                let l = if i == 137 {
                    Label::Normal
                } else if i < 100 {
                    Label::Abnormal
                } else {
                    Label::Normal
                };
                (format!("r{i:03}"), l, Quality::Good)
            })
            .collect();
        let r = sweep_curve(&scores, &truth, &EvalWeights::default(), 10).unwrap();
        assert!(r.curve.len() <= 11);
        assert!(r.curve.iter().any(|p| p.threshold == r.threshold));
        assert_eq!(r.threshold, 99.5);
    }

    #[test]
    fn sweep_errors() {
        let truth: LabelTable = [("a".to_string(), Label::Normal, Quality::Good)].into_iter().collect();
        assert!(matches!(
            sweep_curve(&map(&[("a", 1.0)]), &truth, &EvalWeights::default(), 10),
            Err(Error::UndefinedMetric(_))
        ));
        assert!(sweep_curve(&map(&[("a", f64::NAN)]), &truth, &EvalWeights::default(), 10).is_err());
    }

    #[test]
    fn curve_csv_header() {
        let mut buf = Vec::new();
        let p = CurvePoint {
            threshold: f64::NEG_INFINITY,
            se: 0.0,
            sp: 1.0,
            macc: 0.5,
        };
        write_curve_csv(&[p], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "threshold,Se,Sp,MAcc\n-inf,0,1,0.5\n");
    }
}
