//! Dataset augmentation: convex mixing of subjects, rate redistribution by
//! time rescaling, and Kussmaul substitution from hyperpnea.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dsp;
use crate::error::{Error, Result};
use crate::features::{cwt, peaks};
use crate::model::{LabeledSegment, PatternLabel, RespiratorySignal};
use crate::seed;

/// Rescaled segments shorter than this are first extended by whole breaths.
pub const MIN_OUTPUT_S: f64 = 30.0;
pub const KUSSMAUL_RANGE: (f64, f64) = (20.0, 35.0);

/// `p·a + (1−p)·b`; valid where both inputs are.
pub fn mix_signals(a: &RespiratorySignal, b: &RespiratorySignal, p: f64) -> Result<RespiratorySignal> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            what: "mixed signals",
            left: a.len(),
            right: b.len(),
        });
    }
    if a.fs() != b.fs() {
        return Err(Error::FsMismatch(a.fs(), b.fs()));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!("mixing weight {p} outside [0, 1]")));
    }
    let samples = a.samples().iter().zip(b.samples()).map(|(x, y)| p * x + (1.0 - p) * y).collect();
    let valid = a.valid().iter().zip(b.valid()).map(|(x, y)| *x && *y).collect();
    RespiratorySignal::new(samples, a.fs(), valid)
}

/// Dominant breathing rate of a segment in breaths/min: median ridge rate
/// over samples outside the cone of influence whose ridge magnitude is at
/// least half the maximum. Segments too short for the wavelet fall back to
/// peak intervals. `None` when nothing breathes.
pub fn measure_rr(s: &RespiratorySignal) -> Option<f64> {
    let params = cwt::CwtParams::default();
    if s.len() >= cwt::min_len(&params, s.fs()) {
        let spec = cwt::cwt_spectrogram(s.samples(), s.fs(), &params).ok()?;
        let ridge = cwt::ridge_features(&spec).ok()?;
        let max = (0..ridge.len())
            .filter(|&k| ridge.valid[k])
            .map(|k| ridge.amp[k])
            .fold(0.0, f64::max);
        if max <= 1e-9 {
            return None;
        }
        let rr: Vec<f64> = (0..ridge.len())
            .filter(|&k| ridge.valid[k] && ridge.amp[k] >= 0.5 * max)
            .map(|k| ridge.rr[k])
            .collect();
        return dsp::median(&rr);
    }
    let p = peaks::detect_peaks(s.samples(), s.fs(), &peaks::PeakParams::default());
    let rates: Vec<f64> = p.locations.windows(2).map(|w| 60.0 / (w[1] - w[0])).collect();
    dsp::median(&rates)
}

/// Time-rescales a segment by `factor` (output sample `k` is input sample
/// `k / factor`).
pub fn rescale(s: &RespiratorySignal, factor: f64) -> Result<RespiratorySignal> {
    if (factor - 1.0).abs() < 1e-12 {
        return Ok(s.clone());
    }
    RespiratorySignal::new(dsp::resample(s.samples(), factor), s.fs(), dsp::resample_mask(s.valid(), factor))
}

/// Rescales the segment in time so its measured rate becomes `target_rr`.
/// The rescaling is deterministic; `seed` is accepted for interface
/// symmetry with the other augmentation steps.
pub fn redistribute_rr(seg: &LabeledSegment, target_rr: f64, _seed: u64) -> Result<LabeledSegment> {
    let (current, factor) = redistribution_factor(seg, target_rr)?;
    log::trace!("redistributing {:?} from {current:.2} to {target_rr:.2}", seg.label);
    Ok(LabeledSegment {
        signal: rescale(&seg.signal, factor)?,
        label: seg.label,
        target_rr_range: seg.target_rr_range,
    })
}

fn redistribution_factor(seg: &LabeledSegment, target_rr: f64) -> Result<(f64, f64)> {
    if seg.label == PatternLabel::Apnea {
        return Err(Error::NoRate);
    }
    let (lo, hi) = seg.target_rr_range;
    if !(target_rr >= lo && target_rr <= hi) || !(target_rr > 0.0) {
        return Err(Error::TargetOutOfRange { target: target_rr, lo, hi });
    }
    let current = measure_rr(&seg.signal).ok_or(Error::NoRate)?;
    Ok((current, current / target_rr))
}

/// Repeats whole breaths of a periodic segment until it spans at least
/// `min_len` samples.
pub fn extend_periodic(s: &RespiratorySignal, rr: f64, min_len: usize) -> Result<RespiratorySignal> {
    if s.len() >= min_len {
        return Ok(s.clone());
    }
    let period = 60.0 / rr * s.fs();
    let cycles = (s.len() as f64 / period).floor();
    if cycles < 1.0 {
        return Err(Error::InsufficientSource(format!(
            "segment of {} samples holds no full breath at {rr:.1} breaths/min",
            s.len()
        )));
    }
    let unit = (cycles * period).round() as usize;
    let (x, v) = (&s.samples()[..unit], &s.valid()[..unit]);
    let mut samples = Vec::with_capacity(min_len + unit);
    let mut valid = Vec::with_capacity(min_len + unit);
    while samples.len() < min_len {
        samples.extend_from_slice(x);
        valid.extend_from_slice(v);
    }
    RespiratorySignal::new(samples, s.fs(), valid)
}

/// Redistributes, extending short outputs by whole source breaths first.
fn redistribute_padded(seg: &LabeledSegment, target_rr: f64) -> Result<(LabeledSegment, f64)> {
    let (current, factor) = redistribution_factor(seg, target_rr)?;
    let fs = seg.signal.fs();
    let min_out = (MIN_OUTPUT_S * fs).ceil() as usize;
    let signal = if (seg.signal.len() as f64 * factor) < min_out as f64 && !seg.label.is_complex() {
        extend_periodic(&seg.signal, current, (min_out as f64 / factor).ceil() as usize)?
    } else {
        seg.signal.clone()
    };
    Ok((
        LabeledSegment {
            signal: rescale(&signal, factor)?,
            label: seg.label,
            target_rr_range: seg.target_rr_range,
        },
        factor,
    ))
}

/// Kussmaul stand-ins: random hyperpnea segments redistributed into
/// 20–35 breaths/min and relabelled.
pub fn substitute_kussmaul(pool: &[LabeledSegment], count: usize, seed: u64) -> Result<Vec<LabeledSegment>> {
    if pool.is_empty() {
        return Err(Error::InsufficientSource("empty hyperpnea pool".into()));
    }
    (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = seed::rng(seed::derive(seed, &[seed::stage::AUGMENT, PatternLabel::Kussmaul.code() as u64, i as u64]));
            let src = &pool[rng.random_range(0..pool.len())];
            let target = rng.random_range(KUSSMAUL_RANGE.0..=KUSSMAUL_RANGE.1);
            let relabeled = LabeledSegment {
                signal: src.signal.clone(),
                label: PatternLabel::Kussmaul,
                target_rr_range: KUSSMAUL_RANGE,
            };
            Ok(redistribute_padded(&relabeled, target)?.0)
        })
        .collect()
}

/// A recorded segment with its origin.
#[derive(Debug, Clone)]
pub struct SourceSegment {
    pub subject: usize,
    /// Protocol entry the segment was recorded in.
    pub entry: usize,
    pub segment: LabeledSegment,
}

/// How an augmented segment was made.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub subjects: (usize, usize),
    pub entry: usize,
    pub p: f64,
    pub factor: f64,
    pub target_rr: Option<f64>,
    /// Set when the segment was built from hyperpnea recordings.
    pub substituted: bool,
}

#[derive(Debug, Clone)]
pub struct AugmentedSegment {
    pub segment: LabeledSegment,
    pub provenance: Provenance,
}

fn make_one(
    label: PatternLabel,
    donors: &[&SourceSegment],
    substituted: bool,
    i: usize,
    root: u64,
) -> Result<AugmentedSegment> {
    let mut rng = seed::rng(seed::derive(root, &[seed::stage::AUGMENT, label.code() as u64, i as u64]));
    let mut entries: Vec<usize> = donors.iter().map(|s| s.entry).collect();
    entries.sort_unstable();
    entries.dedup();
    // entries recorded by at least two subjects
    let usable: Vec<usize> = entries
        .into_iter()
        .filter(|e| {
            let mut subs: Vec<usize> = donors.iter().filter(|s| s.entry == *e).map(|s| s.subject).collect();
            subs.sort_unstable();
            subs.dedup();
            subs.len() >= 2
        })
        .collect();
    if usable.is_empty() {
        return Err(Error::InsufficientSource(format!("{label}: fewer than two subjects per entry")));
    }
    let entry = usable[rng.random_range(0..usable.len())];
    let cands: Vec<&SourceSegment> = donors.iter().copied().filter(|s| s.entry == entry).collect();
    let a = cands[rng.random_range(0..cands.len())];
    let others: Vec<&SourceSegment> = cands.iter().copied().filter(|s| s.subject != a.subject).collect();
    let b = others[rng.random_range(0..others.len())];
    let p: f64 = rng.random_range(0.0..=1.0);
    let n = a.segment.signal.len().min(b.segment.signal.len());
    let mixed = mix_signals(&a.segment.signal.slice(0..n)?, &b.segment.signal.slice(0..n)?, p)?;
    let range = label.target_rr_range();
    let mut prov = Provenance {
        subjects: (a.subject, b.subject),
        entry,
        p,
        factor: 1.0,
        target_rr: None,
        substituted,
    };
    if label == PatternLabel::Apnea {
        return Ok(AugmentedSegment {
            segment: LabeledSegment::new(mixed, label, (0.0, 0.0))?,
            provenance: prov,
        });
    }
    let target = rng.random_range(range.0..=range.1);
    let seg = LabeledSegment::new(mixed, label, range)?;
    let (out, factor) = redistribute_padded(&seg, target)?;
    prov.factor = factor;
    prov.target_rr = Some(target);
    Ok(AugmentedSegment { segment: out, provenance: prov })
}

/// Builds `per_class` segments for every label by mixing the same protocol
/// entry from two different subjects and redistributing the rate uniformly
/// over the label's target range. Apnea is mixed only. Without recorded
/// Kussmaul material, Kussmaul segments are made from hyperpnea.
pub fn build_dataset(sources: &[SourceSegment], per_class: usize, seed: u64) -> Result<Vec<AugmentedSegment>> {
    let mut out = Vec::with_capacity(per_class * PatternLabel::COUNT);
    for label in PatternLabel::ALL {
        let mut donors: Vec<&SourceSegment> = sources.iter().filter(|s| s.segment.label == label).collect();
        let mut substituted = false;
        if label == PatternLabel::Kussmaul && distinct_subjects(&donors) < 2 {
            donors = sources.iter().filter(|s| s.segment.label == PatternLabel::Hyperpnea).collect();
            substituted = true;
        }
        if distinct_subjects(&donors) < 2 {
            return Err(Error::InsufficientSource(format!("{label}: need at least two subjects")));
        }
        let items: Vec<AugmentedSegment> = (0..per_class)
            .into_par_iter()
            .map(|i| make_one(label, &donors, substituted, i, seed))
            .collect::<Result<_>>()?;
        out.extend(items);
    }
    Ok(out)
}

fn distinct_subjects(s: &[&SourceSegment]) -> usize {
    let mut v: Vec<usize> = s.iter().map(|x| x.subject).collect();
    v.sort_unstable();
    v.dedup();
    v.len()
}
