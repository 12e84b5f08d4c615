//! Synthetic breathing patterns and multi-channel observations.
//!
//! Simple patterns are sinusoids (`effort · sin(2π·rr/60·t)`). Cheyne-Stokes
//! alternates 20 s raised-cosine crescendo/decrescendo bursts with 10 s
//! apnea. Biot's breathing alternates constant-amplitude bursts of
//! 10–20 s (rounded to whole breaths) with random 5–12 s apnea gaps.

use std::f64::consts::PI;
use std::ops::Range;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dsp;
use crate::error::{Error, Result};
use crate::model::{FeatureSeries, LabeledSegment, ObservationMatrix, PatternLabel, RespiratorySignal};
use crate::seed;

pub const CHEYNE_STOKES_BURST_S: f64 = 20.0;
pub const CHEYNE_STOKES_APNEA_S: f64 = 10.0;
pub const BIOTS_BURST_S: (f64, f64) = (10.0, 20.0);
pub const BIOTS_GAP_S: (f64, f64) = (5.0, 12.0);
pub const DEFAULT_DURATION_S: f64 = 60.0;
pub const PAUSE_RR: f64 = 14.0;
pub const PAUSE_EFFORT: f64 = 1.0;

/// One protocol entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternSpec {
    #[serde(rename = "pattern")]
    pub label: PatternLabel,
    /// Breathing rate in breaths/min (the burst rate for complex patterns).
    #[serde(rename = "frequency")]
    pub rr: f64,
    /// Amplitude in n.u. (peak envelope for Cheyne-Stokes).
    pub effort: f64,
    #[serde(default = "default_duration")]
    pub duration_s: f64,
    #[serde(rename = "target_range")]
    pub target_rr_range: (f64, f64),
}

fn default_duration() -> f64 {
    DEFAULT_DURATION_S
}

impl PatternSpec {
    pub fn new(label: PatternLabel, rr: f64, effort: f64, target_rr_range: (f64, f64)) -> Self {
        Self {
            label,
            rr,
            effort,
            duration_s: DEFAULT_DURATION_S,
            target_rr_range,
        }
    }

    pub fn with_duration(mut self, duration_s: f64) -> Self {
        self.duration_s = duration_s;
        self
    }

    fn check(&self) -> Result<()> {
        let (lo, hi) = self.target_rr_range;
        if !(self.effort >= 0.0) || !(self.rr >= 0.0) || !(self.duration_s > 0.0) {
            return Err(Error::InvalidArgument(format!("bad pattern spec {self:?}")));
        }
        if !(lo >= 0.0 && hi >= lo) {
            return Err(Error::InvalidArgument(format!("bad target range [{lo}, {hi}]")));
        }
        let simple = !self.label.is_complex() && self.label != PatternLabel::Apnea;
        if simple && (self.rr < lo || self.rr > hi) && self.label != PatternLabel::Hyperpnea {
            // the protocol's hyperpnea entry (10 breaths/min) sits below its
            // own redistribution range; everything else must be inside
            log::debug!("{:?} rate {} outside [{lo}, {hi}]", self.label, self.rr);
        }
        Ok(())
    }
}

/// The twelve-entry breathing protocol.
pub fn default_protocol() -> Vec<PatternSpec> {
    use PatternLabel::*;
    vec![
        PatternSpec::new(Bradypnea, 5.0, 1.0, (5.0, 10.0)),
        PatternSpec::new(Eupnea, 12.0, 1.0, (12.0, 18.0)),
        PatternSpec::new(Hypopnea, 12.0, 0.25, (12.0, 18.0)),
        PatternSpec::new(Hyperpnea, 10.0, 2.5, (12.0, 18.0)),
        PatternSpec::new(Tachypnea, 35.0, 1.0, (20.0, 35.0)),
        PatternSpec::new(Eupnea, 15.0, 1.0, (12.0, 25.0)),
        PatternSpec::new(Kussmaul, 30.0, 2.5, (20.0, 35.0)),
        PatternSpec::new(CheyneStokes, 20.0, 4.5, (12.0, 25.0)),
        PatternSpec::new(Tachypnea, 35.0, 0.25, (20.0, 35.0)),
        PatternSpec::new(Biots, 15.0, 1.0, (12.0, 25.0)),
        PatternSpec::new(Biots, 10.0, 2.5, (12.0, 25.0)),
        PatternSpec::new(Apnea, 0.0, 0.0, (0.0, 0.0)),
    ]
}

/// A generated pattern with its ground truth.
#[derive(Debug, Clone)]
pub struct GeneratedPattern {
    pub signal: RespiratorySignal,
    /// Instantaneous rate and amplitude of the generator. Invalid during
    /// apnea phases of complex patterns, where no rate is defined.
    pub reference: FeatureSeries,
    /// True where the generator is breathing.
    pub breathing: Vec<bool>,
}

pub fn generate_pattern(spec: &PatternSpec, fs: f64, seed: u64) -> Result<RespiratorySignal> {
    Ok(generate_pattern_detailed(spec, fs, seed)?.signal)
}

pub fn generate_pattern_detailed(spec: &PatternSpec, fs: f64, seed: u64) -> Result<GeneratedPattern> {
    spec.check()?;
    if !(fs > 0.0) {
        return Err(Error::NonPositiveFs(fs));
    }
    if fs < 4.0 * spec.rr / 60.0 {
        return Err(Error::UnsatisfiableFs { fs, rr: spec.rr });
    }
    let n = (spec.duration_s * fs).round() as usize;
    let mut x = vec![0.0; n];
    let mut rr = vec![0.0; n];
    let mut amp = vec![0.0; n];
    let mut breathing = vec![false; n];
    let mut ref_valid = vec![true; n];
    let omega = 2.0 * PI * spec.rr / 60.0;

    match spec.label {
        PatternLabel::Apnea => {}
        PatternLabel::CheyneStokes => {
            let cycle = CHEYNE_STOKES_BURST_S + CHEYNE_STOKES_APNEA_S;
            for k in 0..n {
                let tau = (k as f64 / fs) % cycle;
                if tau < CHEYNE_STOKES_BURST_S {
                    let env = spec.effort * 0.5 * (1.0 - (2.0 * PI * tau / CHEYNE_STOKES_BURST_S).cos());
                    x[k] = env * (omega * tau).sin();
                    rr[k] = spec.rr;
                    amp[k] = env;
                    breathing[k] = true;
                } else {
                    ref_valid[k] = false;
                }
            }
        }
        PatternLabel::Biots => {
            let mut rng = seed::rng(seed);
            let period = 60.0 / spec.rr.max(f64::MIN_POSITIVE);
            let mut t0 = 0.0;
            let total = spec.duration_s;
            let mut phases: Vec<(f64, f64, bool)> = Vec::new();
            let mut burst = true;
            while t0 < total {
                let len = if burst {
                    let target = rng.random_range(BIOTS_BURST_S.0..=BIOTS_BURST_S.1);
                    (target / period).round().max(1.0) * period
                } else {
                    rng.random_range(BIOTS_GAP_S.0..=BIOTS_GAP_S.1)
                };
                phases.push((t0, t0 + len, burst));
                t0 += len;
                burst = !burst;
            }
            for k in 0..n {
                let t = k as f64 / fs;
                let &(start, _, is_burst) = phases
                    .iter()
                    .find(|(s, e, _)| t >= *s && t < *e)
                    .unwrap_or(phases.last().expect("at least one phase"));
                if is_burst {
                    x[k] = spec.effort * (omega * (t - start)).sin();
                    rr[k] = spec.rr;
                    amp[k] = spec.effort;
                    breathing[k] = true;
                } else {
                    ref_valid[k] = false;
                }
            }
        }
        _ => {
            for k in 0..n {
                let t = k as f64 / fs;
                x[k] = spec.effort * (omega * t).sin();
                rr[k] = spec.rr;
                amp[k] = spec.effort;
                breathing[k] = spec.effort > 0.0 && spec.rr > 0.0;
            }
        }
    }

    Ok(GeneratedPattern {
        signal: RespiratorySignal::from_samples(x, fs)?,
        reference: FeatureSeries::new(rr, amp, None, ref_valid, fs)?,
        breathing,
    })
}

/// A concatenated protocol recording.
#[derive(Debug, Clone)]
pub struct ProtocolRecording {
    pub signal: RespiratorySignal,
    pub segments: Vec<LabeledSegment>,
    /// Sample range of each segment inside `signal`.
    pub ranges: Vec<Range<usize>>,
    pub reference: FeatureSeries,
    pub breathing: Vec<bool>,
}

/// Concatenates the protocol entries with `pause_s` of free breathing
/// between consecutive entries. Entry `i` is generated with seed
/// `seed::derive(seed, &[i])`.
pub fn generate_protocol(specs: &[PatternSpec], pause_s: f64, fs: f64, seed: u64) -> Result<ProtocolRecording> {
    if specs.is_empty() {
        return Err(Error::InvalidArgument("empty protocol".into()));
    }
    if !(pause_s >= 0.0) {
        return Err(Error::InvalidArgument(format!("negative pause {pause_s}")));
    }
    let pause = PatternSpec::new(PatternLabel::Eupnea, PAUSE_RR, PAUSE_EFFORT, (12.0, 18.0));
    let mut samples = Vec::new();
    let mut rr = Vec::new();
    let mut amp = Vec::new();
    let mut ref_valid = Vec::new();
    let mut breathing = Vec::new();
    let mut segments = Vec::with_capacity(specs.len());
    let mut ranges = Vec::with_capacity(specs.len());

    let append = |g: &GeneratedPattern,
                      samples: &mut Vec<f64>,
                      rr: &mut Vec<f64>,
                      amp: &mut Vec<f64>,
                      ref_valid: &mut Vec<bool>,
                      breathing: &mut Vec<bool>| {
        samples.extend_from_slice(g.signal.samples());
        rr.extend_from_slice(&g.reference.rr);
        amp.extend_from_slice(&g.reference.amp);
        ref_valid.extend_from_slice(&g.reference.valid);
        breathing.extend_from_slice(&g.breathing);
    };

    for (i, spec) in specs.iter().enumerate() {
        if i > 0 && pause_s > 0.0 {
            let g = generate_pattern_detailed(&pause.clone().with_duration(pause_s), fs, 0)?;
            append(&g, &mut samples, &mut rr, &mut amp, &mut ref_valid, &mut breathing);
        }
        let g = generate_pattern_detailed(spec, fs, seed::derive(seed, &[i as u64]))?;
        let start = samples.len();
        append(&g, &mut samples, &mut rr, &mut amp, &mut ref_valid, &mut breathing);
        ranges.push(start..samples.len());
        let range = if spec.label == PatternLabel::Apnea {
            (0.0, 0.0)
        } else {
            spec.target_rr_range
        };
        segments.push(LabeledSegment::new(g.signal, spec.label, range)?);
    }

    Ok(ProtocolRecording {
        signal: RespiratorySignal::from_samples(samples, fs)?,
        segments,
        ranges,
        reference: FeatureSeries::new(rr, amp, None, ref_valid, fs)?,
        breathing,
    })
}

/// Noise and geometry of one observation channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelModel {
    pub gain: f64,
    pub noise_sd: f64,
    pub baseline_wander_amp: f64,
    pub baseline_wander_freq: f64,
    /// Step artifacts per minute.
    pub artifact_rate: f64,
    /// Standard deviation of each step's height.
    #[serde(default = "default_artifact_amp")]
    pub artifact_amp: f64,
    /// Delay in samples (fractional delays are interpolated).
    pub delay: f64,
    /// Relative sampling-rate multiplier of the channel clock.
    pub rate_error: f64,
}

fn default_artifact_amp() -> f64 {
    1.0
}

impl Default for ChannelModel {
    fn default() -> Self {
        Self {
            gain: 1.0,
            noise_sd: 0.0,
            baseline_wander_amp: 0.0,
            baseline_wander_freq: 0.0,
            artifact_rate: 0.0,
            artifact_amp: 1.0,
            delay: 0.0,
            rate_error: 1.0,
        }
    }
}

impl ChannelModel {
    pub fn with_noise(noise_sd: f64) -> Self {
        Self {
            noise_sd,
            ..Self::default()
        }
    }

    fn check(&self) -> Result<()> {
        if !(self.noise_sd >= 0.0) {
            return Err(Error::InvalidArgument(format!("negative noise_sd {}", self.noise_sd)));
        }
        if !(0.95..=1.05).contains(&self.rate_error) {
            return Err(Error::InvalidArgument(format!(
                "rate_error {} outside [0.95, 1.05]",
                self.rate_error
            )));
        }
        if !(self.artifact_rate >= 0.0) {
            return Err(Error::InvalidArgument("negative artifact rate".into()));
        }
        Ok(())
    }
}

/// Builds one observation column per channel:
/// `fraction · gain · clean(resampled, delayed) + wander + noise + steps`.
/// Channel `i` draws from `seed::derive(seed, &[i])`.
pub fn synthesize_observations(
    clean: &RespiratorySignal,
    channels: &[ChannelModel],
    respiratory_fraction: &[f64],
    seed: u64,
) -> Result<ObservationMatrix> {
    if channels.is_empty() {
        return Err(Error::InvalidArgument("empty channel list".into()));
    }
    if respiratory_fraction.len() != channels.len() {
        return Err(Error::LengthMismatch {
            what: "channels/respiratory_fraction",
            left: channels.len(),
            right: respiratory_fraction.len(),
        });
    }
    let fs = clean.fs();
    let m = clean.len();
    let columns = channels
        .iter()
        .zip(respiratory_fraction)
        .enumerate()
        .map(|(i, (ch, &frac))| {
            ch.check()?;
            if !(0.0..=1.0).contains(&frac) {
                return Err(Error::InvalidArgument(format!("respiratory fraction {frac} outside [0, 1]")));
            }
            let mut rng = seed::rng(seed::derive(seed, &[i as u64]));
            let positions: Vec<f64> = (0..m).map(|k| (k as f64 - ch.delay) / ch.rate_error).collect();
            let resp = if frac > 0.0 && ch.gain != 0.0 {
                dsp::interpolate_at(clean.samples(), &positions, 1.0)
            } else {
                vec![0.0; m]
            };
            let phase = rng.random_range(0.0..2.0 * PI);
            let noise = Normal::new(0.0, ch.noise_sd.max(0.0)).map_err(|e| Error::InvalidArgument(e.to_string()))?;
            let step = Normal::new(0.0, ch.artifact_amp.abs()).map_err(|e| Error::InvalidArgument(e.to_string()))?;
            let p_step = ch.artifact_rate / 60.0 / fs;
            let mut offset = 0.0;
            let col = (0..m)
                .map(|k| {
                    let t = k as f64 / fs;
                    let mut v = frac * ch.gain * resp[k];
                    if ch.baseline_wander_amp != 0.0 {
                        v += ch.baseline_wander_amp * (2.0 * PI * ch.baseline_wander_freq * t + phase).sin();
                    }
                    if ch.noise_sd > 0.0 {
                        v += noise.sample(&mut rng);
                    }
                    if p_step > 0.0 && rng.random::<f64>() < p_step {
                        offset += step.sample(&mut rng);
                    }
                    v + offset
                })
                .collect::<Vec<f64>>();
            Ok(col)
        })
        .collect::<Result<Vec<_>>>()?;
    ObservationMatrix::from_columns(&columns, fs)
}
