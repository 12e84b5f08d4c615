//! Artifact correction, fusion of the two feature paths, moving variances
//! and per-segment medians.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::dsp;
use crate::error::{Error, Result};
use crate::model::{FeatureSeries, FeatureVector};

/// Thresholds of the correction and fusion rules.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RuleParams {
    /// breaths/min
    pub max_rr_step: f64,
    /// s
    pub jump_pair_window_s: f64,
    /// n.u.
    pub low_amp: f64,
    /// Minimum low-amplitude duration in breaths.
    pub low_amp_min_breaths: f64,
    /// breaths/min
    pub low_amp_min_rr: f64,
    pub low_amp_max_spread: f64,
    /// s
    pub min_segment_s: f64,
    /// s
    pub max_fill_gap_s: f64,
    pub fill_median_len: usize,
    /// breaths/min
    pub fusion_agree: f64,
    /// s
    pub fusion_min_stable_s: f64,
    /// s
    pub fusion_max_fill_gap_s: f64,
    /// Cap on correction passes while seeking a fixed point.
    pub max_passes: usize,
}

impl Default for RuleParams {
    fn default() -> Self {
        Self {
            max_rr_step: 5.0,
            jump_pair_window_s: 10.0,
            low_amp: 0.05,
            low_amp_min_breaths: 5.0,
            low_amp_min_rr: 5.0,
            low_amp_max_spread: 0.45,
            min_segment_s: 10.0,
            max_fill_gap_s: 10.0,
            fill_median_len: 5,
            fusion_agree: 3.0,
            fusion_min_stable_s: 10.0,
            fusion_max_fill_gap_s: 5.0,
            max_passes: 32,
        }
    }
}

/// Maximal runs `start..end` of samples where `pred` holds.
pub fn runs(mask: impl IntoIterator<Item = bool>) -> Vec<Range<usize>> {
    let mut out = Vec::new();
    let mut start = None;
    let mut n = 0;
    for (k, v) in mask.into_iter().enumerate() {
        match (v, start) {
            (true, None) => start = Some(k),
            (false, Some(s)) => {
                out.push(s..k);
                start = None;
            }
            _ => {}
        }
        n = k + 1;
    }
    if let Some(s) = start {
        out.push(s..n);
    }
    out
}

/// Indices `k` where the RR differs by more than `step` from the previous
/// valid sample.
pub fn jump_marks(f: &FeatureSeries, step: f64) -> Vec<usize> {
    let mut marks = Vec::new();
    let mut prev: Option<f64> = None;
    for k in 0..f.len() {
        if !f.valid[k] {
            continue;
        }
        if let Some(p) = prev {
            if (f.rr[k] - p).abs() > step {
                marks.push(k);
            }
        }
        prev = Some(f.rr[k]);
    }
    marks
}

/// Decision of the low-amplitude rule for one segment: keep only when the
/// segment spans at least `min_breaths` breaths at its median rate, that
/// rate exceeds `min_rr`, and the rate spread relative to the median stays
/// below `max_spread`.
pub fn keep_low_amplitude(rr: &[f64], fs: f64, p: &RuleParams) -> bool {
    let Some(med) = dsp::median(rr) else {
        return false;
    };
    if !(med > p.low_amp_min_rr) {
        return false;
    }
    let duration = rr.len() as f64 / fs;
    let max = rr.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = rr.iter().copied().fold(f64::INFINITY, f64::min);
    duration >= p.low_amp_min_breaths * 60.0 / med && (max - min) / med < p.low_amp_max_spread
}

/// Fills invalid gaps shorter than `max_gap` samples that follow valid data
/// with the moving median of the last `len` valid values. Everything left
/// invalid is zeroed.
fn fill_gaps(f: &mut FeatureSeries, max_gap: usize, len: usize) {
    let gaps = runs(f.valid.iter().map(|v| !v));
    for gap in gaps {
        let fillable = gap.start > 0 && gap.len() < max_gap;
        if !fillable {
            for k in gap {
                f.zero_out(k);
            }
            continue;
        }
        let donors: Vec<usize> = (0..gap.start).rev().filter(|&k| f.valid[k]).take(len).collect();
        if donors.is_empty() {
            for k in gap {
                f.zero_out(k);
            }
            continue;
        }
        let mut rr: Vec<f64> = donors.iter().rev().map(|&k| f.rr[k]).collect();
        let mut amp: Vec<f64> = donors.iter().rev().map(|&k| f.amp[k]).collect();
        let mut width: Option<Vec<f64>> = f.width.as_ref().map(|w| donors.iter().rev().map(|&k| w[k]).collect());
        for k in gap {
            let r = dsp::median(&rr[rr.len().saturating_sub(len)..]).unwrap_or(0.0);
            let a = dsp::median(&amp[amp.len().saturating_sub(len)..]).unwrap_or(0.0);
            f.rr[k] = r;
            f.amp[k] = a;
            rr.push(r);
            amp.push(a);
            if let (Some(w), Some(fw)) = (width.as_mut(), f.width.as_mut()) {
                let v = dsp::median(&w[w.len().saturating_sub(len)..]).unwrap_or(0.0);
                fw[k] = v;
                w.push(v);
            }
            f.valid[k] = true;
        }
    }
}

fn correct_once(f: &FeatureSeries, p: &RuleParams) -> FeatureSeries {
    let mut out = f.clone();
    let fs = f.fs;
    let pair = p.jump_pair_window_s * fs;

    // jumps: two marks close together enclose an artifact
    let marks = jump_marks(f, p.max_rr_step);
    for w in marks.windows(2) {
        if (w[1] - w[0]) as f64 <= pair {
            for k in w[0]..=w[1] {
                out.valid[k] = false;
            }
        }
    }

    // low amplitude
    let low = runs((0..f.len()).map(|k| out.valid[k] && f.amp[k] < p.low_amp));
    for r in low {
        if !keep_low_amplitude(&f.rr[r.clone()], fs, p) {
            for k in r {
                out.valid[k] = false;
            }
        }
    }

    // short segments
    let min_len = p.min_segment_s * fs;
    for r in runs(out.valid.clone()) {
        if (r.len() as f64) < min_len {
            for k in r {
                out.valid[k] = false;
            }
        }
    }

    let max_gap = (p.max_fill_gap_s * fs).round() as usize;
    fill_gaps(&mut out, max_gap, p.fill_median_len);
    out
}

/// Applies the correction rules until nothing changes (at most
/// `max_passes` times), which makes the result a fixed point.
pub fn artifact_correct_with(f: &FeatureSeries, p: &RuleParams) -> FeatureSeries {
    let mut cur = correct_once(f, p);
    for _ in 1..p.max_passes {
        let next = correct_once(&cur, p);
        if next == cur {
            return cur;
        }
        cur = next;
    }
    log::warn!("artifact correction did not settle after {} passes", p.max_passes);
    cur
}

pub fn artifact_correct(f: &FeatureSeries) -> FeatureSeries {
    artifact_correct_with(f, &RuleParams::default())
}

fn check_pair(a: &FeatureSeries, b: &FeatureSeries) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            what: "fusion inputs",
            left: a.len(),
            right: b.len(),
        });
    }
    if a.fs != b.fs {
        return Err(Error::FsMismatch(a.fs, b.fs));
    }
    Ok(())
}

fn longest_valid_run(f: &FeatureSeries, r: &Range<usize>) -> usize {
    runs(r.clone().map(|k| f.valid[k])).iter().map(|x| x.len()).max().unwrap_or(0)
}

fn valid_values(f: &FeatureSeries, r: &Range<usize>) -> Vec<f64> {
    r.clone().filter(|&k| f.valid[k]).map(|k| f.rr[k]).collect()
}

/// Merges the peak-path and ridge-path features.
///
/// The record is split at every RR jump of either input. Within a piece:
/// agreeing medians give the elementwise mean; otherwise the input with a
/// jump-free valid stretch of at least `fusion_min_stable_s` wins, the
/// higher mean RR breaking ties; with neither, the piece is invalid. Short
/// invalid gaps are then filled and the rest zeroed.
pub fn fuse_features_with(fp: &FeatureSeries, fr: &FeatureSeries, p: &RuleParams) -> Result<FeatureSeries> {
    check_pair(fp, fr)?;
    let n = fp.len();
    let fs = fp.fs;
    let mut borders: Vec<usize> = jump_marks(fp, p.max_rr_step);
    borders.extend(jump_marks(fr, p.max_rr_step));
    borders.push(0);
    borders.push(n);
    borders.sort_unstable();
    borders.dedup();

    let mut out = FeatureSeries::invalid(n, fs, false);
    let stable = (p.fusion_min_stable_s * fs).round() as usize;
    for w in borders.windows(2) {
        let r = w[0]..w[1];
        let (vp, vr) = (valid_values(fp, &r), valid_values(fr, &r));
        let agree = match (dsp::median(&vp), dsp::median(&vr)) {
            (Some(a), Some(b)) => (a - b).abs() < p.fusion_agree,
            _ => false,
        };
        if agree {
            for k in r {
                match (fp.valid[k], fr.valid[k]) {
                    (true, true) => {
                        out.rr[k] = 0.5 * (fp.rr[k] + fr.rr[k]);
                        out.amp[k] = 0.5 * (fp.amp[k] + fr.amp[k]);
                        out.valid[k] = true;
                    }
                    (true, false) => {
                        out.rr[k] = fp.rr[k];
                        out.amp[k] = fp.amp[k];
                        out.valid[k] = true;
                    }
                    (false, true) => {
                        out.rr[k] = fr.rr[k];
                        out.amp[k] = fr.amp[k];
                        out.valid[k] = true;
                    }
                    (false, false) => {}
                }
            }
            continue;
        }
        let qp = !vp.is_empty() && longest_valid_run(fp, &r) >= stable;
        let qr = !vr.is_empty() && longest_valid_run(fr, &r) >= stable;
        let pick = match (qp, qr) {
            (true, true) => Some(if dsp::mean(&vr) > dsp::mean(&vp) { fr } else { fp }),
            (true, false) => Some(fp),
            (false, true) => Some(fr),
            (false, false) => None,
        };
        if let Some(src) = pick {
            for k in r {
                if src.valid[k] {
                    out.rr[k] = src.rr[k];
                    out.amp[k] = src.amp[k];
                    out.valid[k] = true;
                }
            }
        }
    }
    let max_gap = (p.fusion_max_fill_gap_s * fs).round() as usize;
    fill_gaps(&mut out, max_gap, p.fill_median_len);
    out.check()?;
    Ok(out)
}

pub fn fuse_features(fp: &FeatureSeries, fr: &FeatureSeries) -> Result<FeatureSeries> {
    fuse_features_with(fp, fr, &RuleParams::default())
}

/// Centred moving variances of RR and amplitude.
#[derive(Debug, Clone, PartialEq)]
pub struct MovingVariance {
    pub rr_var: Vec<f64>,
    pub a_var: Vec<f64>,
    pub valid: Vec<bool>,
}

fn windowed_var(x: &[f64], valid: &[bool], len: usize) -> (Vec<f64>, Vec<bool>) {
    let n = x.len();
    let shift = {
        let v: Vec<f64> = (0..n).filter(|&k| valid[k]).map(|k| x[k]).collect();
        dsp::mean(&v)
    };
    let mut c = vec![0usize; n + 1];
    let mut s = vec![0.0; n + 1];
    let mut q = vec![0.0; n + 1];
    for k in 0..n {
        let (dc, ds) = if valid[k] { (1, x[k] - shift) } else { (0, 0.0) };
        c[k + 1] = c[k] + dc;
        s[k + 1] = s[k] + ds;
        q[k + 1] = q[k] + ds * ds;
    }
    let mut var = vec![0.0; n];
    let mut ok = vec![false; n];
    for k in 0..n {
        let start = k.saturating_sub(len / 2).min(n - len);
        let end = start + len;
        let m = c[end] - c[start];
        if 2 * m < len || m < 2 {
            continue;
        }
        let sum = s[end] - s[start];
        let sq = q[end] - q[start];
        var[k] = ((sq - sum * sum / m as f64) / (m - 1) as f64).max(0.0);
        ok[k] = true;
    }
    (var, ok)
}

/// Sample variance over the valid samples of a centred window (shifted to
/// stay inside the record). Windows under half valid are invalid.
pub fn moving_variance(f: &FeatureSeries, window_s: f64) -> MovingVariance {
    let n = f.len();
    if n == 0 {
        return MovingVariance {
            rr_var: vec![],
            a_var: vec![],
            valid: vec![],
        };
    }
    let len = ((window_s * f.fs).round() as usize).clamp(1, n);
    let (rr_var, ok) = windowed_var(&f.rr, &f.valid, len);
    let (a_var, _) = windowed_var(&f.amp, &f.valid, len);
    MovingVariance {
        rr_var,
        a_var,
        valid: ok,
    }
}

/// Medians of the features over the valid samples of `segment`.
pub fn segment_features(f: &FeatureSeries, vars: &MovingVariance, segment: Range<usize>) -> Result<FeatureVector> {
    if segment.end > f.len() || vars.valid.len() != f.len() {
        return Err(Error::InvalidArgument(format!("segment {segment:?} outside {} samples", f.len())));
    }
    let needed = (10.0 * f.fs).round() as usize;
    if segment.len() < needed {
        return Err(Error::TooShort {
            needed,
            got: segment.len(),
        });
    }
    let pick = |x: &[f64], mask: &[bool]| -> Option<f64> {
        let v: Vec<f64> = segment.clone().filter(|&k| mask[k]).map(|k| x[k]).collect();
        dsp::median(&v)
    };
    let (Some(rr), Some(a)) = (pick(&f.rr, &f.valid), pick(&f.amp, &f.valid)) else {
        return Err(Error::UnusableSegment);
    };
    let (Some(rv), Some(av)) = (pick(&vars.rr_var, &vars.valid), pick(&vars.a_var, &vars.valid)) else {
        return Err(Error::UnusableSegment);
    };
    Ok(FeatureVector {
        rr_med: rr,
        a_med: a,
        rr_var_med: rv,
        a_var_med: av,
    })
}

/// Treats zeroed samples as measured absence of breathing: every sample
/// becomes valid (invalid samples already hold 0). Leading and trailing
/// invalid runs, which stem from the analysis edges rather than the
/// signal, are cut unless the whole series is invalid.
pub fn breathing_view(f: &FeatureSeries) -> FeatureSeries {
    let first = f.valid.iter().position(|&v| v);
    let last = f.valid.iter().rposition(|&v| v);
    let (a, b) = match (first, last) {
        (Some(a), Some(b)) => (a, b + 1),
        _ => (0, f.len()),
    };
    let mut rr = f.rr[a..b].to_vec();
    let mut amp = f.amp[a..b].to_vec();
    for k in 0..rr.len() {
        if !f.valid[a + k] {
            rr[k] = 0.0;
            amp[k] = 0.0;
        }
    }
    FeatureSeries {
        valid: vec![true; rr.len()],
        rr,
        amp,
        width: None,
        fs: f.fs,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(rr: Vec<f64>, amp: Vec<f64>) -> FeatureSeries {
        let n = rr.len();
        FeatureSeries::new(rr, amp, None, vec![true; n], 10.0).unwrap()
    }

    fn constant(n: usize, rr: f64, amp: f64) -> FeatureSeries {
        series(vec![rr; n], vec![amp; n])
    }

    #[test]
    fn clean_features_are_unchanged() {
        let f = constant(600, 12.0, 1.0);
        assert_eq!(artifact_correct(&f), f);
    }

    #[test]
    fn enclosed_jump_section_is_removed() {
        // 6 bpm jump up at 20 s and back down at 24 s
        let mut f = constant(600, 12.0, 1.0);
        for k in 200..240 {
            f.rr[k] = 18.0;
        }
        let g = artifact_correct(&f);
        // the section is filled from the preceding values
        for k in 200..=240 {
            assert_eq!(g.rr[k], 12.0, "k={k}");
            assert!(g.valid[k]);
        }
        let marks = jump_marks(&f, 5.0);
        assert_eq!(marks, vec![200, 240]);
    }

    #[test]
    fn distant_jumps_are_kept() {
        let mut f = constant(600, 12.0, 1.0);
        for k in 200..400 {
            f.rr[k] = 18.0;
        }
        assert_eq!(artifact_correct(&f), f);
    }

    fn low_amp_rule(rr: f64, spread: f64, secs: f64) -> bool {
        let n = (secs * 10.0) as usize;
        let v: Vec<f64> = (0..n)
            .map(|k| rr + if k % 2 == 0 { 0.5 * spread * rr } else { -0.5 * spread * rr })
            .collect();
        keep_low_amplitude(&v, 10.0, &RuleParams::default())
    }

    #[test]
    fn low_amplitude_rule_boundaries() {
        // all three conditions hold with margin
        assert!(low_amp_rule(15.0, 0.1, 40.0));
        // too short: 5 breaths at 15 bpm need 20 s
        assert!(!low_amp_rule(15.0, 0.1, 19.0));
        assert!(low_amp_rule(15.0, 0.1, 21.0));
        // too slow
        assert!(!low_amp_rule(4.9, 0.1, 70.0));
        assert!(low_amp_rule(5.5, 0.1, 70.0));
        // too variable
        assert!(!low_amp_rule(15.0, 0.46, 40.0));
        assert!(low_amp_rule(15.0, 0.44, 40.0));
    }

    #[test]
    fn stable_low_amplitude_stretch_is_kept() {
        let f = constant(400, 15.0, 0.03);
        assert_eq!(artifact_correct(&f), f);
    }

    #[test]
    fn unstable_low_amplitude_is_zeroed() {
        let rr: Vec<f64> = (0..400).map(|k| if (k / 10) % 2 == 0 { 7.0 } else { 12.0 }).collect();
        let f = series(rr, vec![0.03; 400]);
        let g = artifact_correct(&f);
        assert_eq!(g.valid_count(), 0);
        assert!(g.rr.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn short_segments_are_dropped_and_filled() {
        let mut f = constant(600, 12.0, 1.0);
        for k in (300..320).chain(360..380) {
            f.valid[k] = false;
        }
        for k in 320..360 {
            f.rr[k] = 14.0;
        }
        // the 4 s island goes, and the merged 8 s gap is filled
        let g = artifact_correct(&f);
        assert!(g.valid.iter().all(|&v| v));
        assert!(g.rr[300..380].iter().all(|&v| v == 12.0));
    }

    #[test]
    fn long_gaps_are_zeroed() {
        let mut f = constant(600, 12.0, 1.0);
        for k in 200..350 {
            f.valid[k] = false;
        }
        let g = artifact_correct(&f);
        assert!((200..350).all(|k| !g.valid[k] && g.rr[k] == 0.0));
        assert!(g.valid[100] && g.valid[400]);
    }

    #[test]
    fn correction_is_idempotent_on_messy_input() {
        let mut f = constant(900, 12.0, 1.0);
        for k in (0..900).step_by(37) {
            f.rr[k] = 30.0;
        }
        for k in 500..520 {
            f.amp[k] = 0.01;
            f.rr[k] = (k % 7) as f64 * 3.0;
        }
        let once = artifact_correct(&f);
        assert_eq!(artifact_correct(&once), once);
    }

    #[test]
    fn identical_inputs_fuse_to_themselves() {
        let f = constant(600, 14.0, 0.8);
        assert_eq!(fuse_features(&f, &f).unwrap(), f);
    }

    #[test]
    fn agreeing_medians_average() {
        let a = constant(300, 12.0, 1.0);
        let b = constant(300, 14.0, 1.2);
        let g = fuse_features(&a, &b).unwrap();
        assert!(g.rr.iter().all(|&v| v == 13.0));
        assert!(g.amp.iter().all(|&v| (v - 1.1).abs() < 1e-12));
    }

    #[test]
    fn corrupted_peak_path_defers_to_ridge() {
        let mut fp = constant(3000, 15.0, 1.0);
        let fr = constant(3000, 15.5, 1.0);
        for k in 1000..1200 {
            fp.rr[k] = 0.0;
        }
        let g = fuse_features(&fp, &fr).unwrap();
        for k in 1000..1200 {
            assert_eq!(g.rr[k], 15.5);
        }
    }

    #[test]
    fn disagreeing_stable_paths_prefer_higher_rate() {
        let fp = constant(300, 10.0, 1.0);
        let fr = constant(300, 20.0, 1.0);
        let g = fuse_features(&fp, &fr).unwrap();
        assert!(g.rr.iter().all(|&v| v == 20.0));
    }

    #[test]
    fn disagreeing_unstable_paths_are_invalid() {
        // both inputs keep jumping, so no piece is 10 s long
        let fp = series((0..300).map(|k| if (k / 40) % 2 == 0 { 10.0 } else { 16.0 }).collect(), vec![1.0; 300]);
        let fr = series((0..300).map(|k| if (k / 40) % 2 == 0 { 30.0 } else { 22.0 }).collect(), vec![1.0; 300]);
        let g = fuse_features(&fp, &fr).unwrap();
        assert_eq!(g.valid_count(), 0);
        assert!(g.rr.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn no_donor_means_zero_and_invalid() {
        let mut fp = constant(300, 12.0, 1.0);
        let mut fr = constant(300, 12.0, 1.0);
        for k in 0..30 {
            fp.valid[k] = false;
            fr.valid[k] = false;
        }
        let g = fuse_features(&fp, &fr).unwrap();
        assert!((0..30).all(|k| !g.valid[k] && g.rr[k] == 0.0));
    }

    #[test]
    fn constant_rate_has_zero_variance() {
        let v = moving_variance(&constant(600, 12.0, 1.0), 30.0);
        assert!(v.rr_var.iter().all(|&x| x.abs() < 1e-12));
    }

    #[test]
    fn two_level_rate_variance() {
        let rr: Vec<f64> = (0..1200).map(|k| if (k / 50) % 2 == 0 { 10.0 } else { 20.0 }).collect();
        let v = moving_variance(&series(rr, vec![1.0; 1200]), 30.0);
        // a 300-sample window holds 150 of each level
        let expect = 25.0 * 300.0 / 299.0;
        for k in 150..1050 {
            assert!((v.rr_var[k] - expect).abs() < 1e-9, "k={k}: {}", v.rr_var[k]);
        }
    }

    #[test]
    fn half_invalid_windows_are_invalid() {
        let mut f = constant(600, 12.0, 1.0);
        for k in 0..200 {
            f.valid[k] = false;
        }
        let v = moving_variance(&f, 30.0);
        assert!(!v.valid[0]);
        assert!(v.valid[400]);
    }

    #[test]
    fn segment_medians() {
        let f = constant(600, 12.0, 1.0);
        let v = moving_variance(&f, 30.0);
        let fv = segment_features(&f, &v, 0..600).unwrap();
        assert_eq!(fv.rr_med, 12.0);
        assert_eq!(fv.a_med, 1.0);
        assert!(fv.rr_var_med.abs() < 1e-12);
    }

    #[test]
    fn all_invalid_segment_is_unusable() {
        let f = FeatureSeries::invalid(300, 10.0, false);
        let v = moving_variance(&f, 30.0);
        assert!(matches!(segment_features(&f, &v, 0..300), Err(Error::UnusableSegment)));
        let b = breathing_view(&f);
        let fv = segment_features(&b, &moving_variance(&b, 30.0), 0..300).unwrap();
        assert_eq!(fv.to_array(), [0.0; 4]);
    }

    #[test]
    fn breathing_view_trims_edges_keeps_gaps() {
        let mut f = constant(100, 12.0, 1.0);
        for k in (0..10).chain(40..60).chain(95..100) {
            f.zero_out(k);
        }
        let b = breathing_view(&f);
        assert_eq!(b.len(), 85);
        assert_eq!(b.rr[30], 0.0);
        assert!(b.valid.iter().all(|&v| v));
    }
}
