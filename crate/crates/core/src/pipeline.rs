//! Simulated study: synthetic subjects follow the breathing protocol in
//! front of a noisy multi-channel sensor, and every stage of the pipeline
//! runs on the result.
//!
//! Each function here is one stage on one subject or one segment, so the
//! CLI can cache stage outputs on disk and the in-memory [`run_study`]
//! produces the same numbers.

use std::ops::Range;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{build_dataset, AugmentedSegment, SourceSegment};
use crate::classify::{cross_validate, evaluate_features_with, CvReport, EvalOptions, FeatureEval, SvmParams};
use crate::error::{Error, Result};
use crate::extract::{extract_signal, ExtractConfig};
use crate::features::{extract_features, FeatureParams};
use crate::model::{FeatureSeries, FeatureVector, LabeledSegment, ObservationMatrix, PatternLabel, RespiratorySignal};
use crate::prep::{default_factor_grid, estimate_lags, grid_search_resample, normalize, remove_offset, solve_offsets};
use crate::refine::{artifact_correct_with, breathing_view, fuse_features_with, moving_variance, segment_features, RuleParams};
use crate::seed;
use crate::synth::{default_protocol, generate_protocol, synthesize_observations, ChannelModel, PatternSpec, ProtocolRecording};

/// Sensor model shared by all subjects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObservationConfig {
    pub respiratory_channels: usize,
    pub noise_channels: usize,
    pub noise_sd: f64,
    pub gain_range: (f64, f64),
    pub baseline_wander_amp: f64,
    pub baseline_wander_freq: f64,
    /// Step artifacts per minute and channel.
    pub artifact_rate: f64,
    pub artifact_amp: f64,
    /// Largest extra per-channel delay in seconds.
    pub channel_delay_s: f64,
}

impl Default for ObservationConfig {
    fn default() -> Self {
        Self {
            respiratory_channels: 5,
            noise_channels: 3,
            noise_sd: 0.05,
            gain_range: (0.5, 1.5),
            baseline_wander_amp: 0.1,
            baseline_wander_freq: 0.005,
            artifact_rate: 0.0,
            artifact_amp: 1.0,
            channel_delay_s: 0.2,
        }
    }
}

/// Everything a study run depends on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    pub seed: u64,
    pub fs: f64,
    pub subjects: usize,
    pub pause_s: f64,
    pub protocol: Vec<PatternSpec>,
    /// Relative spread of each subject's effort around the protocol value.
    pub effort_jitter: f64,
    /// Range of the per-subject sensor clock error.
    pub rate_error_range: (f64, f64),
    /// Range of the subject's reaction delay to the animation in seconds.
    pub reaction_delay_s: (f64, f64),
    pub observation: ObservationConfig,
    pub extract: ExtractConfig,
    /// Largest lag searched while matching the animation, in seconds.
    pub max_lag_s: f64,
    pub features: FeatureParams,
    pub rules: RuleParams,
    pub variance_window_s: f64,
    /// Recorded Kussmaul entries are replaced by hyperpnea substitutes.
    pub discard_recorded_kussmaul: bool,
    pub per_class: usize,
    pub svm: SvmParams,
    pub folds: usize,
    pub eval: EvalOptions,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            seed: 2024,
            fs: 10.0,
            subjects: 10,
            pause_s: 5.0,
            protocol: default_protocol(),
            effort_jitter: 0.1,
            rate_error_range: (0.98, 1.02),
            reaction_delay_s: (0.5, 2.0),
            observation: ObservationConfig::default(),
            extract: ExtractConfig::default(),
            max_lag_s: 10.0,
            features: FeatureParams::default(),
            rules: RuleParams::default(),
            variance_window_s: 30.0,
            discard_recorded_kussmaul: true,
            per_class: 1000,
            svm: SvmParams::default(),
            folds: 10,
            eval: EvalOptions::default(),
        }
    }
}

impl StudyConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.fs > 0.0) {
            return Err(Error::NonPositiveFs(self.fs));
        }
        if self.subjects < 2 {
            return bad(format!("need at least 2 subjects, got {}", self.subjects));
        }
        if self.protocol.is_empty() {
            return bad("empty protocol".into());
        }
        if calibration_entry(&self.protocol).is_none() {
            return bad("protocol has no eupnea entry for calibration".into());
        }
        if !(0.0..1.0).contains(&self.effort_jitter) {
            return bad(format!("effort_jitter {} outside [0, 1)", self.effort_jitter));
        }
        let (lo, hi) = self.rate_error_range;
        if !(0.95 <= lo && lo <= hi && hi <= 1.05) {
            return bad(format!("rate_error_range ({lo}, {hi}) outside [0.95, 1.05]"));
        }
        let (lo, hi) = self.reaction_delay_s;
        if !(0.0 <= lo && lo <= hi) {
            return bad(format!("bad reaction_delay_s ({lo}, {hi})"));
        }
        let o = &self.observation;
        if o.respiratory_channels == 0 {
            return bad("need at least one respiratory channel".into());
        }
        if !(o.noise_sd >= 0.0) || !(0.0 < o.gain_range.0 && o.gain_range.0 <= o.gain_range.1) {
            return bad("bad observation noise or gain range".into());
        }
        if self.per_class == 0 {
            return bad("per_class must be positive".into());
        }
        if self.folds < 2 {
            return bad(format!("need at least 2 folds, got {}", self.folds));
        }
        if !(self.svm.c > 0.0) {
            return bad(format!("svm C must be positive, got {}", self.svm.c));
        }
        if !(self.extract.window_s > 0.0) || self.extract.keep_channels == 0 {
            return bad("bad extraction window or channel count".into());
        }
        Ok(())
    }
}

/// Index of the first eupnea entry, whose amplitude defines 1 n.u.
pub fn calibration_entry(protocol: &[PatternSpec]) -> Option<usize> {
    protocol.iter().position(|s| s.label == PatternLabel::Eupnea)
}

/// Ground truth of one simulated subject.
#[derive(Debug, Clone)]
pub struct SubjectTruth {
    pub subject: usize,
    /// What the subject breathed, on the animation clock.
    pub recording: ProtocolRecording,
    /// The instruction signal the subject followed.
    pub animation: RespiratorySignal,
    pub rate_error: f64,
    pub reaction_delay_s: f64,
    /// Effort of the calibration entry.
    pub calibration_effort: f64,
}

impl SubjectTruth {
    /// Reference features in normalized units.
    pub fn reference(&self) -> FeatureSeries {
        let mut r = self.recording.reference.clone();
        let k = 1.0 / self.calibration_effort;
        r.amp.iter_mut().for_each(|a| *a *= k);
        r
    }

    pub fn labelled_ranges(&self) -> Vec<(PatternLabel, Range<usize>)> {
        self.recording
            .segments
            .iter()
            .zip(&self.recording.ranges)
            .map(|(s, r)| (s.label, r.clone()))
            .collect()
    }
}

/// Draws a subject and the breathing it produces.
pub fn simulate_truth(cfg: &StudyConfig, subject: usize) -> Result<SubjectTruth> {
    let root = seed::derive(cfg.seed, &[seed::stage::SYNTH, subject as u64]);
    let mut rng = seed::rng(seed::derive(root, &[0]));
    let specs: Vec<PatternSpec> = cfg
        .protocol
        .iter()
        .map(|s| {
            let mut s = s.clone();
            s.effort *= 1.0 + rng.random_range(-cfg.effort_jitter..=cfg.effort_jitter);
            s
        })
        .collect();
    let (lo, hi) = cfg.rate_error_range;
    let rate_error = if hi > lo { rng.random_range(lo..=hi) } else { lo };
    let (lo, hi) = cfg.reaction_delay_s;
    let reaction_delay_s = if hi > lo { rng.random_range(lo..=hi) } else { lo };
    let calib = calibration_entry(&specs).ok_or_else(|| Error::InvalidArgument("no calibration entry".into()))?;
    let protocol_seed = seed::derive(root, &[1]);
    let recording = generate_protocol(&specs, cfg.pause_s, cfg.fs, protocol_seed)?;
    let animation = generate_protocol(&cfg.protocol, cfg.pause_s, cfg.fs, protocol_seed)?.signal;
    Ok(SubjectTruth {
        subject,
        recording,
        animation,
        rate_error,
        reaction_delay_s,
        calibration_effort: specs[calib].effort,
    })
}

/// Sensor channels of one subject: respiratory channels first, then pure
/// noise channels.
pub fn channel_models(cfg: &StudyConfig, truth: &SubjectTruth) -> (Vec<ChannelModel>, Vec<f64>) {
    let o = &cfg.observation;
    let mut rng = seed::rng(seed::derive(cfg.seed, &[seed::stage::OBSERVE, truth.subject as u64, 0]));
    let n = o.respiratory_channels + o.noise_channels;
    let mut channels = Vec::with_capacity(n);
    let mut fractions = Vec::with_capacity(n);
    for i in 0..n {
        let respiratory = i < o.respiratory_channels;
        let gain = if o.gain_range.1 > o.gain_range.0 {
            rng.random_range(o.gain_range.0..=o.gain_range.1)
        } else {
            o.gain_range.0
        };
        let extra = if o.channel_delay_s > 0.0 { rng.random_range(0.0..=o.channel_delay_s) } else { 0.0 };
        channels.push(ChannelModel {
            gain,
            noise_sd: o.noise_sd,
            baseline_wander_amp: o.baseline_wander_amp,
            baseline_wander_freq: o.baseline_wander_freq,
            artifact_rate: o.artifact_rate,
            artifact_amp: o.artifact_amp,
            delay: (truth.reaction_delay_s + extra) * cfg.fs,
            rate_error: truth.rate_error,
        });
        fractions.push(if respiratory { 1.0 } else { 0.0 });
    }
    (channels, fractions)
}

/// Raw sensor output for one subject.
pub fn observe(cfg: &StudyConfig, truth: &SubjectTruth) -> Result<ObservationMatrix> {
    let (channels, fractions) = channel_models(cfg, truth);
    synthesize_observations(
        &truth.recording.signal,
        &channels,
        &fractions,
        seed::derive(cfg.seed, &[seed::stage::OBSERVE, truth.subject as u64, 1]),
    )
}

pub fn extract(cfg: &StudyConfig, o: &ObservationMatrix) -> Result<RespiratorySignal> {
    extract_signal(o, &cfg.extract)
}

/// Alignment found while preparing a subject.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrepInfo {
    pub factor: f64,
    pub offset: f64,
    pub correlation: f64,
    pub scale: f64,
}

fn fit_length(s: &RespiratorySignal, n: usize) -> Result<RespiratorySignal> {
    let (mut x, fs, mut v) = s.clone().into_parts();
    x.resize(n, 0.0);
    v.resize(n, false);
    RespiratorySignal::new(x, fs, v)
}

/// Undoes the sensor clock error, aligns the extracted signal to the
/// animation and scales it to normalized units.
pub fn prepare(
    cfg: &StudyConfig,
    extracted: &RespiratorySignal,
    animation: &RespiratorySignal,
    calibration: Range<usize>,
) -> Result<(RespiratorySignal, PrepInfo)> {
    let max_lag = (cfg.max_lag_s * cfg.fs).round() as usize;
    let m = grid_search_resample(extracted, animation, &default_factor_grid(), max_lag)?;
    let resampled = fit_length(&m.signal, animation.len())?;
    let lags = estimate_lags(&[animation, &resampled])?;
    let offsets = solve_offsets(&lags, 2)?;
    let aligned = remove_offset(&resampled, offsets.offsets[1])?;
    let before = crate::prep::calibration_scale(&aligned, calibration.clone())?;
    let normalized = normalize(&aligned, calibration)?;
    Ok((
        normalized,
        PrepInfo {
            factor: m.factor,
            offset: offsets.offsets[1],
            correlation: m.correlation,
            scale: before,
        },
    ))
}

/// Peak and ridge features, corrected and fused.
pub fn fused_features(cfg: &StudyConfig, s: &RespiratorySignal) -> Result<FeatureSeries> {
    let (peaks, ridge) = extract_features(s, &cfg.features)?;
    let peaks = artifact_correct_with(&peaks, &cfg.rules);
    let ridge = artifact_correct_with(&ridge, &cfg.rules);
    fuse_features_with(&peaks, &ridge, &cfg.rules)
}

/// Classifier input of one segment.
pub fn segment_vector(cfg: &StudyConfig, s: &RespiratorySignal) -> Result<FeatureVector> {
    let view = breathing_view(&fused_features(cfg, s)?);
    let vars = moving_variance(&view, cfg.variance_window_s);
    segment_features(&view, &vars, 0..view.len())
}

/// Cuts a prepared recording into labelled protocol segments.
pub fn source_segments(cfg: &StudyConfig, truth: &SubjectTruth, prepared: &RespiratorySignal) -> Result<Vec<SourceSegment>> {
    let mut out = Vec::new();
    for (entry, (seg, range)) in truth.recording.segments.iter().zip(&truth.recording.ranges).enumerate() {
        if cfg.discard_recorded_kussmaul && seg.label == PatternLabel::Kussmaul {
            continue;
        }
        let signal = prepared.slice(range.clone())?;
        out.push(SourceSegment {
            subject: truth.subject,
            entry,
            segment: LabeledSegment::new(signal, seg.label, seg.target_rr_range)?,
        });
    }
    Ok(out)
}

pub fn augment(cfg: &StudyConfig, sources: &[SourceSegment]) -> Result<Vec<AugmentedSegment>> {
    build_dataset(sources, cfg.per_class, cfg.seed)
}

pub fn dataset_vectors(cfg: &StudyConfig, segments: &[LabeledSegment]) -> Result<Vec<(FeatureVector, PatternLabel)>> {
    segments
        .par_iter()
        .map(|s| Ok((segment_vector(cfg, &s.signal)?, s.label)))
        .collect()
}

/// Classification and feature-extraction results of a study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub classification: CvReport,
    pub features: FeatureEval,
}

/// One subject after extraction and preparation.
#[derive(Debug, Clone)]
pub struct SubjectResult {
    pub truth: SubjectTruth,
    pub prepared: RespiratorySignal,
    pub info: PrepInfo,
    pub features: FeatureSeries,
}

/// Runs synthesis, extraction and preparation for one subject.
pub fn process_subject(cfg: &StudyConfig, subject: usize) -> Result<SubjectResult> {
    let truth = simulate_truth(cfg, subject)?;
    let o = observe(cfg, &truth)?;
    let extracted = extract(cfg, &o)?;
    let calib = truth.recording.ranges[calibration_entry(&cfg.protocol).expect("validated")].clone();
    let (prepared, info) = prepare(cfg, &extracted, &truth.animation, calib)?;
    let features = fused_features(cfg, &prepared)?;
    Ok(SubjectResult {
        truth,
        prepared,
        info,
        features,
    })
}

/// Pools per-subject feature series so one evaluation covers all subjects.
pub fn evaluate_subjects(cfg: &StudyConfig, subjects: &[(&SubjectTruth, &FeatureSeries)]) -> Result<FeatureEval> {
    let fs = cfg.fs;
    let (mut e, mut r) = (FeatureSeries::invalid(0, fs, false), FeatureSeries::invalid(0, fs, false));
    let mut segments = Vec::new();
    for (truth, features) in subjects {
        if features.len() != truth.recording.signal.len() {
            return Err(Error::LengthMismatch {
                what: "subject features/reference",
                left: features.len(),
                right: truth.recording.signal.len(),
            });
        }
        let base = e.len();
        let reference = truth.reference();
        for (label, range) in truth.labelled_ranges() {
            segments.push((label, range.start + base..range.end + base));
        }
        for (dst, src) in [(&mut e, *features), (&mut r, &reference)] {
            dst.rr.extend_from_slice(&src.rr);
            dst.amp.extend_from_slice(&src.amp);
            dst.valid.extend_from_slice(&src.valid);
        }
    }
    evaluate_features_with(&e, &r, &segments, &cfg.eval)
}

/// Full in-memory run.
pub fn run_study(cfg: &StudyConfig) -> Result<EvalReport> {
    cfg.validate()?;
    let subjects = (0..cfg.subjects)
        .into_par_iter()
        .map(|i| process_subject(cfg, i))
        .collect::<Result<Vec<_>>>()?;
    let mut sources = Vec::new();
    for s in &subjects {
        sources.extend(source_segments(cfg, &s.truth, &s.prepared)?);
    }
    let dataset = augment(cfg, &sources)?;
    let segments: Vec<LabeledSegment> = dataset.into_iter().map(|a| a.segment).collect();
    let data = dataset_vectors(cfg, &segments)?;
    Ok(EvalReport {
        classification: cross_validate(&data, cfg.folds, &cfg.svm, cfg.seed)?,
        features: evaluate_subjects(cfg, &subjects.iter().map(|s| (&s.truth, &s.features)).collect::<Vec<_>>())?,
    })
}
