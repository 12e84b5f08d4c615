//! Feature-extraction and classification metrics.

use serde::{Deserialize, Serialize};

use crate::dsp;
use crate::error::{Error, Result};
use crate::model::{FeatureSeries, PatternLabel};

/// Confusion matrix (rows: true class, columns: predicted, both in code
/// order) with overall accuracy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Confusion {
    pub counts: Vec<Vec<usize>>,
    pub accuracy: f64,
}

impl Confusion {
    pub fn from_pairs(pairs: &[(PatternLabel, PatternLabel)]) -> Self {
        let n = PatternLabel::COUNT;
        let mut counts = vec![vec![0usize; n]; n];
        for &(t, p) in pairs {
            counts[t.code() as usize][p.code() as usize] += 1;
        }
        let total = pairs.len();
        let trace: usize = (0..n).map(|i| counts[i][i]).sum();
        Self {
            counts,
            accuracy: if total == 0 { 0.0 } else { trace as f64 / total as f64 },
        }
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn row_total(&self, label: PatternLabel) -> usize {
        self.counts[label.code() as usize].iter().sum()
    }

    /// Fraction of `label`'s samples predicted as something else.
    pub fn confusion_rate(&self, label: PatternLabel) -> f64 {
        let row = &self.counts[label.code() as usize];
        let total: usize = row.iter().sum();
        if total == 0 {
            return 0.0;
        }
        (total - row[label.code() as usize]) as f64 / total as f64
    }
}

/// Agreement statistics of paired measurements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlandAltman {
    pub bias: f64,
    pub sd: f64,
    pub lower: f64,
    pub upper: f64,
    /// `(mean of pair, extracted − reference)`.
    pub points: Vec<(f64, f64)>,
}

impl BlandAltman {
    pub fn from_pairs(extracted: &[f64], reference: &[f64]) -> Option<Self> {
        if extracted.is_empty() {
            return None;
        }
        let points: Vec<(f64, f64)> = extracted.iter().zip(reference).map(|(e, r)| (0.5 * (e + r), e - r)).collect();
        let diffs: Vec<f64> = points.iter().map(|p| p.1).collect();
        let bias = dsp::mean(&diffs);
        let sd = if diffs.len() > 1 { dsp::std_dev(&diffs) } else { 0.0 };
        Some(Self {
            bias,
            sd,
            lower: bias - 1.96 * sd,
            upper: bias + 1.96 * sd,
            points,
        })
    }
}

/// Per-pattern error summary for one modality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternErrors {
    pub label: PatternLabel,
    pub samples: usize,
    pub rmse: Option<f64>,
    pub outliers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalityReport {
    pub patterns: Vec<PatternErrors>,
    /// Standard deviation of all errors of this modality.
    pub error_sd: f64,
    pub bland_altman: Option<BlandAltman>,
}

impl ModalityReport {
    pub fn rmse(&self, label: PatternLabel) -> Option<f64> {
        self.patterns.iter().find(|p| p.label == label).and_then(|p| p.rmse)
    }

    pub fn mean_rmse(&self) -> Option<f64> {
        let v: Vec<f64> = self.patterns.iter().filter_map(|p| p.rmse).collect();
        (!v.is_empty()).then(|| dsp::mean(&v))
    }

    pub fn median_rmse(&self) -> Option<f64> {
        let v: Vec<f64> = self.patterns.iter().filter_map(|p| p.rmse).collect();
        dsp::median(&v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureEval {
    pub rr: ModalityReport,
    pub amp: ModalityReport,
}

/// Samples with `|error| > 2 sd`.
pub fn outlier_count(errors: &[f64], sd: f64) -> usize {
    errors.iter().filter(|e| e.abs() > 2.0 * sd).count()
}

/// Which samples enter the tables.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    /// Score apnea segments against zero, counting rule-zeroed extracted
    /// samples as measured zeros.
    pub apnea_in_rmse: bool,
    pub apnea_in_bland_altman: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            apnea_in_rmse: true,
            apnea_in_bland_altman: false,
        }
    }
}

struct Pairs {
    label: PatternLabel,
    ext: Vec<f64>,
    reference: Vec<f64>,
}

fn collect(
    extracted: &FeatureSeries,
    reference: &FeatureSeries,
    segments: &[(PatternLabel, std::ops::Range<usize>)],
    pick: impl Fn(&FeatureSeries) -> &[f64],
) -> Vec<Pairs> {
    let mut out: Vec<Pairs> = PatternLabel::ALL
        .iter()
        .map(|&label| Pairs {
            label,
            ext: Vec::new(),
            reference: Vec::new(),
        })
        .collect();
    let (e, r) = (pick(extracted), pick(reference));
    for (label, range) in segments {
        let slot = &mut out[label.code() as usize];
        for k in range.clone() {
            if !reference.valid[k] {
                continue;
            }
            if *label == PatternLabel::Apnea {
                slot.ext.push(if extracted.valid[k] { e[k] } else { 0.0 });
                slot.reference.push(r[k]);
            } else if extracted.valid[k] {
                slot.ext.push(e[k]);
                slot.reference.push(r[k]);
            }
        }
    }
    out
}

fn modality(pairs: &[Pairs], opts: &EvalOptions) -> ModalityReport {
    let in_rmse = |p: &Pairs| opts.apnea_in_rmse || p.label != PatternLabel::Apnea;
    let all_errors: Vec<f64> = pairs
        .iter()
        .filter(|p| in_rmse(p))
        .flat_map(|p| p.ext.iter().zip(&p.reference).map(|(e, r)| e - r))
        .collect();
    let error_sd = if all_errors.len() > 1 { dsp::std_dev(&all_errors) } else { 0.0 };
    let patterns = pairs
        .iter()
        .map(|p| {
            let errors: Vec<f64> = p.ext.iter().zip(&p.reference).map(|(e, r)| e - r).collect();
            let used = in_rmse(p) && !errors.is_empty();
            PatternErrors {
                label: p.label,
                samples: if used { errors.len() } else { 0 },
                rmse: used.then(|| (errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64).sqrt()),
                outliers: if used { outlier_count(&errors, error_sd) } else { 0 },
            }
        })
        .collect();
    let (mut e, mut r) = (Vec::new(), Vec::new());
    for p in pairs {
        if opts.apnea_in_bland_altman || p.label != PatternLabel::Apnea {
            e.extend_from_slice(&p.ext);
            r.extend_from_slice(&p.reference);
        }
    }
    ModalityReport {
        patterns,
        error_sd,
        bland_altman: BlandAltman::from_pairs(&e, &r),
    }
}

/// Compares `extracted` against an aligned `reference` over labelled
/// sample ranges.
pub fn evaluate_features_with(
    extracted: &FeatureSeries,
    reference: &FeatureSeries,
    segments: &[(PatternLabel, std::ops::Range<usize>)],
    opts: &EvalOptions,
) -> Result<FeatureEval> {
    if extracted.len() != reference.len() {
        return Err(Error::LengthMismatch {
            what: "extracted/reference features",
            left: extracted.len(),
            right: reference.len(),
        });
    }
    if let Some((_, r)) = segments.iter().find(|(_, r)| r.end > reference.len() || r.start > r.end) {
        return Err(Error::InvalidArgument(format!("segment {r:?} outside series of {} samples", reference.len())));
    }
    let rr = collect(extracted, reference, segments, |f| &f.rr);
    if rr.iter().all(|p| p.ext.is_empty()) {
        return Err(Error::InvalidArgument("no overlap between extracted and reference".into()));
    }
    let amp = collect(extracted, reference, segments, |f| &f.amp);
    Ok(FeatureEval {
        rr: modality(&rr, opts),
        amp: modality(&amp, opts),
    })
}

pub fn evaluate_features(
    extracted: &FeatureSeries,
    reference: &FeatureSeries,
    segments: &[(PatternLabel, std::ops::Range<usize>)],
) -> Result<FeatureEval> {
    evaluate_features_with(extracted, reference, segments, &EvalOptions::default())
}
