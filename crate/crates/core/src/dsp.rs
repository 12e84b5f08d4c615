//! Small numeric helpers shared by several stages.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

pub fn mean(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().sum::<f64>() / x.len() as f64
}

/// Population variance.
pub fn variance(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / x.len() as f64
}

/// Sample (n-1) standard deviation.
pub fn std_dev(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(x);
    (x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1) as f64).sqrt()
}

/// Pearson correlation. Zero-variance inputs correlate as 0.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    if n < 2 {
        return 0.0;
    }
    let (ma, mb) = (mean(&a[..n]), mean(&b[..n]));
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    let mut raw_a = 0.0;
    let mut raw_b = 0.0;
    for k in 0..n {
        let (da, db) = (a[k] - ma, b[k] - mb);
        sab += da * db;
        saa += da * da;
        sbb += db * db;
        raw_a += a[k] * a[k];
        raw_b += b[k] * b[k];
    }
    // constant columns leave only rounding noise in the centred sums
    if saa <= 1e-24 * raw_a || sbb <= 1e-24 * raw_b || saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    sab / (saa * sbb).sqrt()
}

/// Median (mean of the two middle values for even counts). `None` when empty.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    let n = v.len();
    let mid = n / 2;
    v.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = v[mid];
    if n % 2 == 1 {
        Some(upper)
    } else {
        let lower = v[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Some(0.5 * (lower + upper))
    }
}

pub fn rmse(err: impl IntoIterator<Item = f64>) -> Option<f64> {
    let mut n = 0usize;
    let mut s = 0.0;
    for e in err {
        n += 1;
        s += e * e;
    }
    (n > 0).then(|| (s / n as f64).sqrt())
}

/// Full linear cross-correlation of mean-removed signals,
/// `c[d] = Σ_k a[k] · b[k + d]`, for `d` in `-max_lag..=max_lag`.
///
/// A positive lag means `b` is a delayed copy of `a`.
pub fn cross_correlation(a: &[f64], b: &[f64], max_lag: usize) -> Vec<(isize, f64)> {
    let (na, nb) = (a.len(), b.len());
    if na == 0 || nb == 0 {
        return Vec::new();
    }
    let n = (na + nb).next_power_of_two();
    let (ma, mb) = (mean(a), mean(b));
    let mut fa: Vec<Complex64> = (0..n)
        .map(|k| Complex64::new(if k < na { a[k] - ma } else { 0.0 }, 0.0))
        .collect();
    let mut fb: Vec<Complex64> = (0..n)
        .map(|k| Complex64::new(if k < nb { b[k] - mb } else { 0.0 }, 0.0))
        .collect();
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    fwd.process(&mut fa);
    fwd.process(&mut fb);
    let mut prod: Vec<Complex64> = fa.iter().zip(&fb).map(|(x, y)| x.conj() * y).collect();
    inv.process(&mut prod);
    let scale = 1.0 / n as f64;
    let max_pos = max_lag.min(nb.saturating_sub(1)) as isize;
    let max_neg = max_lag.min(na.saturating_sub(1)) as isize;
    (-max_neg..=max_pos)
        .map(|d| {
            let idx = d.rem_euclid(n as isize) as usize;
            (d, prod[idx].re * scale)
        })
        .collect()
}

/// Lag maximizing the cross-correlation; ties go to the smallest |lag|.
pub fn best_lag(a: &[f64], b: &[f64], max_lag: usize) -> (isize, f64) {
    let cc = cross_correlation(a, b, max_lag);
    let mut best = (0isize, f64::NEG_INFINITY);
    for (d, v) in cc {
        let better = v > best.1 + 1e-12 * v.abs().max(1.0)
            || ((v - best.1).abs() <= 1e-12 * v.abs().max(1.0) && d.abs() < best.0.abs());
        if better {
            best = (d, v);
        }
    }
    best
}

const SINC_HALF_TAPS: f64 = 16.0;

fn blackman(u: f64) -> f64 {
    // u in [-1, 1]
    if u.abs() >= 1.0 {
        return 0.0;
    }
    let x = PI * (u + 1.0);
    0.42 - 0.5 * x.cos() + 0.08 * (2.0 * x).cos()
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Band-limited interpolation of `x` at fractional sample positions, using a
/// Blackman-windowed sinc kernel with relative cutoff `cutoff` (1 = input
/// Nyquist). Positions outside the signal clamp to the edge samples.
pub fn interpolate_at(x: &[f64], positions: &[f64], cutoff: f64) -> Vec<f64> {
    let n = x.len();
    if n == 0 {
        return vec![0.0; positions.len()];
    }
    let c = cutoff.clamp(1e-3, 1.0);
    let half = SINC_HALF_TAPS / c;
    positions
        .iter()
        .map(|&p| {
            let lo = (p - half).floor() as isize;
            let hi = (p + half).ceil() as isize;
            let mut acc = 0.0;
            let mut wsum = 0.0;
            for j in lo..=hi {
                let t = p - j as f64;
                let w = c * sinc(c * t) * blackman(t / half);
                if w == 0.0 {
                    continue;
                }
                let idx = j.clamp(0, n as isize - 1) as usize;
                acc += w * x[idx];
                wsum += w;
            }
            if wsum.abs() > 1e-12 {
                acc / wsum
            } else {
                x[p.round().clamp(0.0, (n - 1) as f64) as usize]
            }
        })
        .collect()
}

/// Resamples by `factor`: output sample `k` is `x(k / factor)` and the
/// output has `round(len · factor)` samples. A factor above 1 stretches the
/// signal (lower rate), below 1 compresses it.
pub fn resample(x: &[f64], factor: f64) -> Vec<f64> {
    assert!(factor > 0.0, "resample factor must be positive");
    let out_len = ((x.len() as f64) * factor).round() as usize;
    let positions: Vec<f64> = (0..out_len).map(|k| k as f64 / factor).collect();
    interpolate_at(x, &positions, factor.min(1.0))
}

/// Nearest-neighbour resampling of a mask with the same geometry as [`resample`].
pub fn resample_mask(mask: &[bool], factor: f64) -> Vec<bool> {
    let out_len = ((mask.len() as f64) * factor).round() as usize;
    if mask.is_empty() {
        return vec![false; out_len];
    }
    (0..out_len)
        .map(|k| {
            let i = (k as f64 / factor).round() as usize;
            mask[i.min(mask.len() - 1)]
        })
        .collect()
}

/// `y[k] = x[k - d]`, holding the edge values.
pub fn shift<T: Copy>(x: &[T], d: isize) -> Vec<T> {
    let n = x.len() as isize;
    (0..n)
        .map(|k| x[(k - d).clamp(0, n - 1) as usize])
        .collect()
}
