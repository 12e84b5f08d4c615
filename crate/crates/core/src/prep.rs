//! Amplitude normalization and mutual alignment of recordings.
//!
//! Lag convention: `d_ij > 0` means signal `j` is a copy of signal `i`
//! delayed by `d_ij` samples. Offsets satisfy `d_ij = off_j − off_i` with
//! `off_0 = 0`, so a positive offset means the signal starts later.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::dsp;
use crate::error::{Error, Result};
use crate::model::RespiratorySignal;

pub const MIN_CALIBRATION_S: f64 = 10.0;
const ZERO_PAD: usize = 16;

/// Amplitude of the dominant oscillation in `x`: peak of the Hann-windowed,
/// zero-padded DFT, scaled by the window's coherent gain so a unit
/// sinusoid yields 1.
pub fn dominant_amplitude(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 2 {
        return 0.0;
    }
    let mu = dsp::mean(x);
    let w: Vec<f64> = (0..n)
        .map(|k| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * k as f64 / (n - 1) as f64).cos())
        .collect();
    let gain: f64 = w.iter().sum();
    let len = (n * ZERO_PAD).next_power_of_two();
    let mut buf: Vec<Complex64> = (0..len)
        .map(|k| Complex64::new(if k < n { (x[k] - mu) * w[k] } else { 0.0 }, 0.0))
        .collect();
    FftPlanner::new().plan_fft_forward(len).process(&mut buf);
    let peak = buf[1..len / 2].iter().map(|c| c.norm()).fold(0.0, f64::max);
    2.0 * peak / gain
}

/// Scale factor mapping the calibration segment's oscillation to 1.
pub fn calibration_scale(s: &RespiratorySignal, calib: Range<usize>) -> Result<f64> {
    if calib.end > s.len() || calib.start >= calib.end {
        return Err(Error::InvalidArgument(format!(
            "calibration range {calib:?} outside signal of {} samples",
            s.len()
        )));
    }
    let needed = (MIN_CALIBRATION_S * s.fs()).ceil() as usize;
    if calib.len() < needed {
        return Err(Error::TooShort {
            needed,
            got: calib.len(),
        });
    }
    let seg = &s.samples()[calib];
    if seg.iter().all(|&v| v == 0.0) {
        return Err(Error::ZeroCalibration);
    }
    let a = dominant_amplitude(seg);
    if !(a > 0.0) {
        return Err(Error::ZeroCalibration);
    }
    Ok(1.0 / a)
}

/// Scales `s` so the dominant oscillation of the calibration segment has
/// amplitude 1.
pub fn normalize(s: &RespiratorySignal, calib: Range<usize>) -> Result<RespiratorySignal> {
    let k = calibration_scale(s, calib)?;
    Ok(s.scaled(k))
}

/// One pairwise lag.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairLag {
    pub i: usize,
    pub j: usize,
    pub lag: f64,
}

/// Cross-correlation lag for every pair `i < j`, searched over
/// `±min_len/2` samples.
pub fn estimate_lags(signals: &[&RespiratorySignal]) -> Result<Vec<PairLag>> {
    if signals.len() < 2 {
        return Err(Error::InvalidArgument("need at least two signals".into()));
    }
    let fs = signals[0].fs();
    if let Some(s) = signals.iter().find(|s| s.fs() != fs) {
        return Err(Error::FsMismatch(fs, s.fs()));
    }
    let pairs: Vec<(usize, usize)> = (0..signals.len())
        .flat_map(|i| (i + 1..signals.len()).map(move |j| (i, j)))
        .collect();
    Ok(pairs
        .par_iter()
        .map(|&(i, j)| {
            let (a, b) = (signals[i].samples(), signals[j].samples());
            let max_lag = a.len().min(b.len()) / 2;
            let (lag, _) = dsp::best_lag(a, b, max_lag);
            PairLag { i, j, lag: lag as f64 }
        })
        .collect())
}

/// Least-squares offsets with their residual.
#[derive(Debug, Clone, PartialEq)]
pub struct OffsetSolution {
    pub offsets: Vec<f64>,
    pub residual_norm: f64,
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Solves `off_j − off_i ≈ d_ij` in the least-squares sense with
/// `off_0 = 0`.
pub fn solve_offsets(lags: &[PairLag], n: usize) -> Result<OffsetSolution> {
    if n == 0 {
        return Err(Error::InvalidArgument("no signals".into()));
    }
    let mut parent: Vec<usize> = (0..n).collect();
    for p in lags {
        if p.i >= n || p.j >= n || p.i == p.j {
            return Err(Error::InvalidArgument(format!("bad pair ({}, {})", p.i, p.j)));
        }
        let (a, b) = (find(&mut parent, p.i), find(&mut parent, p.j));
        parent[a] = b;
    }
    let root = find(&mut parent, 0);
    if (1..n).any(|k| find(&mut parent, k) != root) {
        return Err(Error::DisconnectedLags);
    }
    if n == 1 {
        return Ok(OffsetSolution {
            offsets: vec![0.0],
            residual_norm: 0.0,
        });
    }
    // unknowns off_1..off_{n-1}
    let mut a = DMatrix::<f64>::zeros(lags.len(), n - 1);
    let mut y = DVector::<f64>::zeros(lags.len());
    for (r, p) in lags.iter().enumerate() {
        if p.j > 0 {
            a[(r, p.j - 1)] += 1.0;
        }
        if p.i > 0 {
            a[(r, p.i - 1)] -= 1.0;
        }
        y[r] = p.lag;
    }
    let ata = a.transpose() * &a;
    let aty = a.transpose() * &y;
    let x = ata
        .cholesky()
        .ok_or(Error::DisconnectedLags)?
        .solve(&aty);
    let residual = &a * &x - &y;
    let mut offsets = vec![0.0];
    offsets.extend(x.iter().copied());
    Ok(OffsetSolution {
        offsets,
        residual_norm: residual.norm(),
    })
}

/// Resampling factors 0.950, 0.951, ..., 1.050.
pub fn default_factor_grid() -> Vec<f64> {
    (0..=100).map(|i| 0.95 + 0.001 * i as f64).collect()
}

/// Result of the resampling grid search.
#[derive(Debug, Clone)]
pub struct ResampleMatch {
    /// Rate error of `s` relative to `ref`: `s` looks like `ref`
    /// stretched by this factor.
    pub factor: f64,
    /// Lag of the corrected signal relative to `ref`.
    pub lag: isize,
    /// `s` resampled by `1 / factor`.
    pub signal: RespiratorySignal,
    pub correlation: f64,
}

fn normalized_peak(a: &[f64], b: &[f64], max_lag: usize) -> (isize, f64) {
    let (lag, v) = dsp::best_lag(a, b, max_lag);
    let ea: f64 = {
        let m = dsp::mean(a);
        a.iter().map(|x| (x - m) * (x - m)).sum()
    };
    let eb: f64 = {
        let m = dsp::mean(b);
        b.iter().map(|x| (x - m) * (x - m)).sum()
    };
    let denom = (ea * eb).sqrt();
    (lag, if denom > 0.0 { v / denom } else { 0.0 })
}

/// Tries every factor in `grid`, undoes it on `s`, and keeps the one whose
/// cross-correlation with `reference` peaks highest. Ties go to the factor
/// closest to 1.
pub fn grid_search_resample(
    s: &RespiratorySignal,
    reference: &RespiratorySignal,
    grid: &[f64],
    max_lag: usize,
) -> Result<ResampleMatch> {
    if s.fs() != reference.fs() {
        return Err(Error::FsMismatch(reference.fs(), s.fs()));
    }
    if grid.is_empty() || grid.iter().any(|&f| !(f > 0.0)) {
        return Err(Error::InvalidArgument("resampling grid must be non-empty and positive".into()));
    }
    let scored: Vec<(f64, isize, f64)> = grid
        .par_iter()
        .map(|&f| {
            let c = dsp::resample(s.samples(), 1.0 / f);
            let (lag, r) = normalized_peak(reference.samples(), &c, max_lag);
            (f, lag, r)
        })
        .collect();
    let &(factor, lag, correlation) = scored
        .iter()
        .reduce(|best, cand| {
            let tol = 1e-12;
            if cand.2 > best.2 + tol || ((cand.2 - best.2).abs() <= tol && (cand.0 - 1.0).abs() < (best.0 - 1.0).abs()) {
                cand
            } else {
                best
            }
        })
        .expect("non-empty grid");
    let samples = dsp::resample(s.samples(), 1.0 / factor);
    let valid = dsp::resample_mask(s.valid(), 1.0 / factor);
    Ok(ResampleMatch {
        factor,
        lag,
        signal: RespiratorySignal::new(samples, s.fs(), valid)?,
        correlation,
    })
}

/// Shifts a signal earlier by `offset` samples (rounded), so that signals
/// with different offsets line up. Edge values are held and the shifted-in
/// samples are marked invalid.
pub fn remove_offset(s: &RespiratorySignal, offset: f64) -> Result<RespiratorySignal> {
    let d = -(offset.round() as isize);
    let samples = dsp::shift(s.samples(), d);
    let mut valid = dsp::shift(s.valid(), d);
    let n = valid.len() as isize;
    for k in 0..n {
        if k - d < 0 || k - d >= n {
            valid[k as usize] = false;
        }
    }
    RespiratorySignal::new(samples, s.fs(), valid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::PatternLabel;
    use crate::synth::{default_protocol, generate_pattern, generate_protocol, PatternSpec};

    fn eupnea(amp: f64) -> RespiratorySignal {
        let spec = PatternSpec::new(PatternLabel::Eupnea, 12.0, amp, (12.0, 18.0));
        generate_pattern(&spec, 10.0, 0).unwrap()
    }

    fn half_peak_to_peak(x: &[f64]) -> f64 {
        let max = x.iter().cloned().fold(f64::MIN, f64::max);
        let min = x.iter().cloned().fold(f64::MAX, f64::min);
        0.5 * (max - min)
    }

    #[test]
    fn normalize_scales_to_unit_amplitude() {
        let s = eupnea(3.7);
        let n = normalize(&s, 0..300).unwrap();
        assert!((half_peak_to_peak(n.samples()) - 1.0).abs() < 0.02);
    }

    #[test]
    fn unit_signal_scale_is_one() {
        let k = calibration_scale(&eupnea(1.0), 100..400).unwrap();
        assert!((k - 1.0).abs() < 0.02, "{k}");
    }

    #[test]
    fn zero_calibration_fails() {
        let s = RespiratorySignal::from_samples(vec![0.0; 200], 10.0).unwrap();
        assert!(matches!(normalize(&s, 0..200), Err(Error::ZeroCalibration)));
    }

    #[test]
    fn short_calibration_fails() {
        assert!(matches!(normalize(&eupnea(1.0), 0..50), Err(Error::TooShort { .. })));
    }

    fn protocol() -> RespiratorySignal {
        let specs: Vec<PatternSpec> = default_protocol().into_iter().take(5).collect();
        generate_protocol(&specs, 5.0, 10.0, 3).unwrap().signal
    }

    fn delayed(s: &RespiratorySignal, d: isize) -> RespiratorySignal {
        s.with_samples(dsp::shift(s.samples(), d)).unwrap()
    }

    #[test]
    fn lag_of_delayed_copy() {
        let s = protocol();
        let lags = estimate_lags(&[&s, &delayed(&s, 13)]).unwrap();
        assert_eq!(lags[0].lag, 13.0);
        let same = estimate_lags(&[&s, &s]).unwrap();
        assert_eq!(same[0].lag, 0.0);
    }

    #[test]
    fn pairwise_lags_follow_offsets() {
        let s = protocol();
        let sigs = [s.clone(), delayed(&s, 5), delayed(&s, 9)];
        let refs: Vec<&RespiratorySignal> = sigs.iter().collect();
        let lags: Vec<f64> = estimate_lags(&refs).unwrap().iter().map(|p| p.lag).collect();
        assert_eq!(lags, vec![5.0, 9.0, 4.0]);
    }

    #[test]
    fn fs_mismatch_is_rejected() {
        let a = RespiratorySignal::from_samples(vec![0.0, 1.0], 10.0).unwrap();
        let b = RespiratorySignal::from_samples(vec![0.0, 1.0], 20.0).unwrap();
        assert!(matches!(estimate_lags(&[&a, &b]), Err(Error::FsMismatch(..))));
    }

    fn pl(i: usize, j: usize, lag: f64) -> PairLag {
        PairLag { i, j, lag }
    }

    #[test]
    fn consistent_offsets_are_exact() {
        let sol = solve_offsets(&[pl(0, 1, 5.0), pl(0, 2, 9.0), pl(1, 2, 4.0)], 3).unwrap();
        assert_eq!(sol.offsets.len(), 3);
        for (a, b) in sol.offsets.iter().zip([0.0, 5.0, 9.0]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(sol.residual_norm < 1e-12);
    }

    #[test]
    fn zero_lag_pair() {
        let sol = solve_offsets(&[pl(0, 1, 0.0)], 2).unwrap();
        assert_eq!(sol.offsets, vec![0.0, 0.0]);
    }

    #[test]
    fn inconsistent_lags_give_least_squares_compromise() {
        let sol = solve_offsets(&[pl(0, 1, 5.0), pl(0, 2, 9.0), pl(1, 2, 3.0)], 3).unwrap();
        // normal equations by hand: [2 -1; -1 2] x = [5-3, 9+3] -> x = (16/3, 26/3)
        assert!((sol.offsets[1] - 16.0 / 3.0).abs() < 1e-12);
        assert!((sol.offsets[2] - 26.0 / 3.0).abs() < 1e-12);
        let r = (1.0f64 / 3.0) * 3f64.sqrt();
        assert!((sol.residual_norm - r).abs() < 1e-12);
    }

    #[test]
    fn disconnected_graph_is_rejected() {
        assert!(matches!(
            solve_offsets(&[pl(0, 1, 2.0), pl(2, 3, 1.0)], 4),
            Err(Error::DisconnectedLags)
        ));
    }

    #[test]
    fn grid_search_recovers_rate_error() {
        let r = protocol();
        let s = RespiratorySignal::from_samples(dsp::resample(r.samples(), 1.02), 10.0).unwrap();
        let m = grid_search_resample(&s, &r, &default_factor_grid(), 200).unwrap();
        assert!((m.factor - 1.02).abs() <= 0.001 + 1e-12, "{}", m.factor);
    }

    #[test]
    fn grid_search_identity_and_delay() {
        let r = protocol();
        let m = grid_search_resample(&r, &r, &default_factor_grid(), 200).unwrap();
        assert_eq!((m.factor, m.lag), (1.0, 0));
        let m = grid_search_resample(&delayed(&r, 8), &r, &default_factor_grid(), 200).unwrap();
        assert!((m.factor - 1.0).abs() < 1e-12);
        assert_eq!(m.lag, 8);
    }

    #[test]
    fn remove_offset_aligns() {
        let r = protocol();
        let d = remove_offset(&delayed(&r, 6), 6.0).unwrap();
        assert_eq!(&d.samples()[..100], &r.samples()[..100]);
        assert!(!d.valid()[d.len() - 1]);
    }
}
