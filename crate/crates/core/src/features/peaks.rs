//! Prominence-based peak detection and the peak feature path.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::FeatureSeries;

/// Detection limits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PeakParams {
    /// n.u.
    pub min_prominence: f64,
    /// s
    pub min_distance_s: f64,
    /// Width at half prominence, s.
    pub max_width_s: f64,
}

impl Default for PeakParams {
    fn default() -> Self {
        Self {
            min_prominence: 0.3,
            min_distance_s: 1.5,
            max_width_s: 10.0,
        }
    }
}

/// Detected peaks, ordered by location.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PeakSet {
    /// Sample index of each peak.
    pub indices: Vec<usize>,
    /// Sub-sample location in seconds.
    pub locations: Vec<f64>,
    pub prominences: Vec<f64>,
    /// Half the prominence.
    pub amplitudes: Vec<f64>,
    /// Width at half prominence, s.
    pub widths: Vec<f64>,
}

impl PeakSet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Local maxima; a flat top counts once, at its middle sample.
pub fn local_maxima(x: &[f64]) -> Vec<usize> {
    let n = x.len();
    let mut out = Vec::new();
    let mut i = 1;
    while i + 1 < n {
        if x[i - 1] < x[i] {
            let mut ahead = i + 1;
            while ahead + 1 < n && x[ahead] == x[i] {
                ahead += 1;
            }
            if x[ahead] < x[i] {
                out.push((i + ahead - 1) / 2);
                i = ahead;
                continue;
            }
        }
        i += 1;
    }
    out
}

/// Prominence and the indices of the left and right bases.
pub fn prominence(x: &[f64], peak: usize) -> (f64, usize, usize) {
    let h = x[peak];
    let mut left_min = h;
    let mut left_base = peak;
    let mut i = peak;
    while i > 0 {
        i -= 1;
        if x[i] > h {
            break;
        }
        if x[i] < left_min {
            left_min = x[i];
            left_base = i;
        }
    }
    let mut right_min = h;
    let mut right_base = peak;
    let mut i = peak;
    while i + 1 < x.len() {
        i += 1;
        if x[i] > h {
            break;
        }
        if x[i] < right_min {
            right_min = x[i];
            right_base = i;
        }
    }
    (h - left_min.max(right_min), left_base, right_base)
}

/// Width in samples at `peak - 0.5 · prominence`, with linear
/// interpolation of the crossings and the search bounded by the bases.
pub fn half_prominence_width(x: &[f64], peak: usize, prom: f64, left_base: usize, right_base: usize) -> f64 {
    let level = x[peak] - 0.5 * prom;
    let mut i = peak;
    while i > left_base && x[i] > level {
        i -= 1;
    }
    let mut left = i as f64;
    if x[i] < level {
        left += (level - x[i]) / (x[i + 1] - x[i]);
    }
    let mut j = peak;
    while j < right_base && x[j] > level {
        j += 1;
    }
    let mut right = j as f64;
    if x[j] < level {
        right -= (level - x[j]) / (x[j - 1] - x[j]);
    }
    right - left
}

fn parabolic_offset(x: &[f64], i: usize) -> f64 {
    if i == 0 || i + 1 >= x.len() {
        return 0.0;
    }
    let (a, b, c) = (x[i - 1], x[i], x[i + 1]);
    let d = a - 2.0 * b + c;
    if d >= 0.0 {
        return 0.0;
    }
    (0.5 * (a - c) / d).clamp(-0.5, 0.5)
}

/// Peaks passing, in order, the prominence, distance and width limits.
/// On a distance conflict the more prominent peak wins (earlier on ties).
pub fn detect_peaks(x: &[f64], fs: f64, params: &PeakParams) -> PeakSet {
    let cands: Vec<(usize, f64, usize, usize)> = local_maxima(x)
        .into_iter()
        .map(|p| {
            let (prom, l, r) = prominence(x, p);
            (p, prom, l, r)
        })
        .filter(|c| c.1 >= params.min_prominence)
        .collect();

    let min_dist = params.min_distance_s * fs;
    let mut order: Vec<usize> = (0..cands.len()).collect();
    order.sort_by(|&a, &b| cands[b].1.total_cmp(&cands[a].1).then(a.cmp(&b)));
    let mut keep = vec![false; cands.len()];
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        let p = cands[i].0 as f64;
        if kept.iter().all(|&j| (cands[j].0 as f64 - p).abs() >= min_dist) {
            keep[i] = true;
            kept.push(i);
        }
    }

    let mut out = PeakSet::default();
    for (i, &(p, prom, l, r)) in cands.iter().enumerate() {
        if !keep[i] {
            continue;
        }
        let width = half_prominence_width(x, p, prom, l, r) / fs;
        if width > params.max_width_s {
            continue;
        }
        out.indices.push(p);
        out.locations.push((p as f64 + parabolic_offset(x, p)) / fs);
        out.prominences.push(prom);
        out.amplitudes.push(0.5 * prom);
        out.widths.push(width);
    }
    out
}

/// Longest gap between peaks (s) over which the last value is held.
pub const MAX_HOLD_S: f64 = 15.0;

/// Per-sample features from peaks: from the second peak on, each peak sets
/// `rr = 60 / (T_p − T_{p−1})`, its amplitude and width, held until the
/// next peak. Samples before the second peak, or more than
/// [`MAX_HOLD_S`] after the latest peak, are invalid.
pub fn peak_features(peaks: &PeakSet, len: usize, fs: f64) -> Result<FeatureSeries> {
    let mut f = FeatureSeries::invalid(len, fs, true);
    if peaks.len() < 2 {
        return Ok(f);
    }
    let hold = (MAX_HOLD_S * fs).round() as usize;
    let width = f.width.as_mut().expect("width channel");
    for p in 1..peaks.len() {
        let dt = peaks.locations[p] - peaks.locations[p - 1];
        if !(dt > 0.0) {
            continue;
        }
        let rr = 60.0 / dt;
        let start = peaks.indices[p].min(len);
        let next = peaks.indices.get(p + 1).copied().unwrap_or(len).min(len);
        let end = next.min(start + hold + 1);
        for k in start..end {
            f.rr[k] = rr;
            f.amp[k] = peaks.amplitudes[p];
            width[k] = peaks.widths[p];
            f.valid[k] = true;
        }
    }
    f.check()?;
    Ok(f)
}
