//! Analytic Morse wavelet transform and ridge features.
//!
//! The wavelet is the generalized Morse wavelet with `γ = 3` and
//! `β = 10/3` (time-bandwidth product `βγ = 10`). In the frequency domain
//!
//! ```text
//! ψ̂(ω) = 2 · (ω/ω_ψ)^β · exp(ω_ψ^γ − ω^γ),   ω > 0,   ω_ψ = (β/γ)^(1/γ)
//! ```
//!
//! so the filter peaks at 2 and a unit-amplitude real sinusoid produces a
//! ridge magnitude of 1.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::FeatureSeries;

pub const GAMMA: f64 = 3.0;
pub const TIME_BANDWIDTH: f64 = 10.0;
pub const VOICES_PER_OCTAVE: usize = 48;
/// breaths/min
pub const MIN_RR: f64 = 4.0;
/// breaths/min
pub const MAX_RR: f64 = 40.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CwtParams {
    pub gamma: f64,
    pub time_bandwidth: f64,
    pub voices_per_octave: usize,
    pub min_rr: f64,
    pub max_rr: f64,
}

impl Default for CwtParams {
    fn default() -> Self {
        Self {
            gamma: GAMMA,
            time_bandwidth: TIME_BANDWIDTH,
            voices_per_octave: VOICES_PER_OCTAVE,
            min_rr: MIN_RR,
            max_rr: MAX_RR,
        }
    }
}

impl CwtParams {
    pub fn beta(&self) -> f64 {
        self.time_bandwidth / self.gamma
    }

    /// Peak angular frequency of the mother wavelet.
    pub fn peak_omega(&self) -> f64 {
        (self.beta() / self.gamma).powf(1.0 / self.gamma)
    }

    /// Analysis frequencies in Hz, `min_rr/60 · 2^(j/voices)` up to `max_rr/60`.
    pub fn freqs(&self) -> Vec<f64> {
        let f0 = self.min_rr / 60.0;
        let f1 = self.max_rr / 60.0;
        let v = self.voices_per_octave as f64;
        let count = (v * (f1 / f0).log2() + 1e-9).floor() as usize + 1;
        (0..count).map(|j| f0 * 2f64.powf(j as f64 / v)).collect()
    }

    /// Cone-of-influence half-width in seconds at frequency `f` (Hz):
    /// the e-folding time `√2 · P / (2π f)` of the wavelet envelope.
    pub fn coi_s(&self, f: f64) -> f64 {
        std::f64::consts::SQRT_2 * self.time_bandwidth.sqrt() / (2.0 * std::f64::consts::PI * f)
    }

    /// Filter response at angular frequency `omega` of the mother wavelet.
    /// Normalized frequency past which the response stays below 1e-12.
    pub fn support(&self) -> f64 {
        let mut w = self.peak_omega();
        while self.response(w) >= 1e-12 {
            w += 0.01;
        }
        w
    }

    pub fn response(&self, omega: f64) -> f64 {
        if omega <= 0.0 {
            return 0.0;
        }
        let wp = self.peak_omega();
        let (b, g) = (self.beta(), self.gamma);
        let log = b * (omega / wp).ln() + wp.powf(g) - omega.powf(g);
        2.0 * log.exp()
    }
}

/// Magnitude scalogram.
#[derive(Debug, Clone, PartialEq)]
pub struct CwtSpectrogram {
    /// Hz, strictly increasing.
    pub freqs: Vec<f64>,
    /// Frequency-major magnitudes: `mags[j * len + k]`.
    mags: Vec<f64>,
    len: usize,
    pub fs: f64,
    params: CwtParams,
}

impl CwtSpectrogram {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn magnitude(&self, k: usize, j: usize) -> f64 {
        self.mags[j * self.len + k]
    }

    /// Magnitudes of one frequency row.
    pub fn row(&self, j: usize) -> &[f64] {
        &self.mags[j * self.len..(j + 1) * self.len]
    }

    pub fn params(&self) -> &CwtParams {
        &self.params
    }

    /// True where sample `k` lies outside the cone of influence at `f`.
    pub fn outside_coi(&self, k: usize, f: f64) -> bool {
        let c = self.params.coi_s(f) * self.fs;
        let t = k as f64;
        t >= c && (self.len - 1) as f64 - t >= c
    }

    /// Time × frequency CSV (header row of frequencies).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t_s");
        for f in &self.freqs {
            out.push_str(&format!(",{f:.6}"));
        }
        out.push('\n');
        for k in 0..self.len {
            out.push_str(&format!("{:.3}", k as f64 / self.fs));
            for j in 0..self.freqs.len() {
                out.push_str(&format!(",{:.6e}", self.magnitude(k, j)));
            }
            out.push('\n');
        }
        out
    }
}

/// Minimum signal length in samples: twice the cone of influence at the
/// lowest frequency.
pub fn min_len(params: &CwtParams, fs: f64) -> usize {
    (2.0 * params.coi_s(params.min_rr / 60.0) * fs).ceil() as usize
}

fn reflect_pad(x: &[f64], pad: usize) -> Vec<f64> {
    let n = x.len() as isize;
    let period = 2 * (n - 1).max(1);
    (-(pad as isize)..n + pad as isize)
        .map(|i| {
            let mut j = i.rem_euclid(period);
            if j >= n {
                j = period - j;
            }
            x[j as usize]
        })
        .collect()
}

pub fn cwt_spectrogram(x: &[f64], fs: f64, params: &CwtParams) -> Result<CwtSpectrogram> {
    if !(fs > 0.0) {
        return Err(Error::NonPositiveFs(fs));
    }
    let needed = min_len(params, fs);
    if x.len() < needed.max(2) {
        return Err(Error::TooShort {
            needed: needed.max(2),
            got: x.len(),
        });
    }
    let n = x.len();
    let freqs = params.freqs();
    // wavelet envelope is below 1% beyond ~1.5 periods of the centre frequency
    let pad = ((1.5 / freqs[0]) * fs).ceil() as usize;
    let padded = reflect_pad(x, pad);
    let len = padded.len().next_power_of_two();
    let mu = crate::dsp::mean(x);
    let mut spec: Vec<Complex64> = (0..len)
        .map(|k| Complex64::new(padded.get(k).map_or(0.0, |v| v - mu), 0.0))
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(len).process(&mut spec);
    let inv = planner.plan_fft_inverse(len);
    let wp = params.peak_omega();
    let support = params.support();
    let mut mags = vec![0.0; freqs.len() * n];
    let mut buf = vec![Complex64::new(0.0, 0.0); len];
    for (j, &f) in freqs.iter().enumerate() {
        buf.fill(Complex64::new(0.0, 0.0));
        let top = ((support * f * len as f64 / (wp * fs)).floor() as usize).min(len / 2);
        for i in 1..=top {
            let nu = i as f64 * fs / len as f64;
            buf[i] = spec[i] * params.response(wp * nu / f);
        }
        inv.process(&mut buf);
        let scale = 1.0 / len as f64;
        for k in 0..n {
            mags[j * n + k] = buf[pad + k].norm() * scale;
        }
    }
    Ok(CwtSpectrogram {
        freqs,
        mags,
        len: n,
        fs,
        params: *params,
    })
}

/// Instantaneous ridge: per sample, the frequency of maximal magnitude
/// (ties toward the lower frequency) and that magnitude. Samples inside the
/// cone of influence of their ridge frequency are invalid.
pub fn ridge_features(spec: &CwtSpectrogram) -> Result<FeatureSeries> {
    let n = spec.len();
    let nf = spec.freqs.len();
    if n == 0 || nf == 0 {
        return Err(Error::InvalidArgument("empty spectrogram".into()));
    }
    let mut f = FeatureSeries::invalid(n, spec.fs, false);
    for k in 0..n {
        let mut best = 0;
        for j in 1..nf {
            if spec.magnitude(k, j) > spec.magnitude(k, best) {
                best = j;
            }
        }
        let freq = spec.freqs[best];
        f.rr[k] = 60.0 * freq;
        f.amp[k] = spec.magnitude(k, best);
        f.valid[k] = spec.outside_coi(k, freq);
    }
    Ok(f)
}
