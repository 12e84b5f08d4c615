use std::f64::consts::PI;

use proptest::prelude::*;
use respfuse_core::augment::{build_dataset, mix_signals, redistribute_rr, SourceSegment};
use respfuse_core::classify::metrics::Confusion;
use respfuse_core::classify::{cross_validate, train_ovo, SvmParams};
use respfuse_core::extract::{motion_gate, motion_gate_masked, windowed_pca_fuse};
use respfuse_core::features::cwt::{cwt_spectrogram, ridge_features, CwtParams};
use respfuse_core::features::peaks::{detect_peaks, peak_features, PeakParams, PeakSet};
use respfuse_core::prep::{calibration_scale, estimate_lags, normalize, solve_offsets, PairLag};
use respfuse_core::record::{read_signal, write_signal, RecordMeta};
use respfuse_core::refine::{artifact_correct, fuse_features, moving_variance, runs};
use respfuse_core::synth::{default_protocol, generate_pattern, generate_pattern_detailed, PatternSpec};
use respfuse_core::{dsp, seed};
use respfuse_core::{FeatureSeries, FeatureVector, LabeledSegment, ObservationMatrix, PatternLabel, RespiratorySignal};
use rand::Rng;
use rand_distr::{Distribution, Normal};

const FS: f64 = 10.0;

fn sinusoid(n: usize, rr: f64, amp: f64) -> Vec<f64> {
    (0..n).map(|k| amp * (2.0 * PI * rr / 60.0 * k as f64 / FS).sin()).collect()
}

fn noise(n: usize, sd: f64, s: u64) -> Vec<f64> {
    let mut rng = seed::rng(s);
    let d = Normal::new(0.0, sd).unwrap();
    (0..n).map(|_| d.sample(&mut rng)).collect()
}

fn voice() -> f64 {
    2f64.powf(1.0 / CwtParams::default().voices_per_octave as f64)
}

/// Samples at least two cone-of-influence widths from both ends.
fn interior(n: usize, rr: f64) -> std::ops::Range<usize> {
    let edge = (2.0 * CwtParams::default().coi_s(rr / 60.0) * FS).ceil() as usize;
    edge..n - edge
}

fn observations(n: usize, rr: f64, gains: &[f64], sd: f64, s: u64) -> ObservationMatrix {
    let clean = sinusoid(n, rr, 1.0);
    let cols: Vec<Vec<f64>> = gains
        .iter()
        .enumerate()
        .map(|(i, g)| {
            let e = noise(n, sd, seed::derive(s, &[i as u64]));
            clean.iter().zip(e).map(|(c, e)| g * c + e).collect()
        })
        .collect();
    ObservationMatrix::from_columns(&cols, FS).unwrap()
}

fn feature_series(rr: Vec<f64>, amp: Vec<f64>, valid: Vec<bool>) -> FeatureSeries {
    let rr = rr.iter().zip(&valid).map(|(r, v)| if *v { *r } else { 0.0 }).collect();
    let amp = amp.iter().zip(&valid).map(|(a, v)| if *v { *a } else { 0.0 }).collect();
    FeatureSeries::new(rr, amp, None, valid, FS).unwrap()
}

/// Piecewise-constant features with occasional spikes, low-amplitude
/// stretches and gaps.
fn messy_features() -> impl Strategy<Value = FeatureSeries> {
    (300usize..1200, any::<u64>()).prop_map(|(n, s)| {
        let mut rng = seed::rng(s);
        let mut rr = Vec::with_capacity(n);
        let mut amp = Vec::with_capacity(n);
        let mut valid = Vec::with_capacity(n);
        let (mut r, mut a, mut v) = (12.0, 1.0, true);
        for _ in 0..n {
            if rng.random_bool(0.01) {
                r = rng.random_range(4.0..40.0);
                a = if rng.random_bool(0.2) { rng.random_range(0.0..0.05) } else { rng.random_range(0.1..3.0) };
            }
            if rng.random_bool(0.01) {
                v = !v;
            }
            let spike = rng.random_bool(0.02);
            rr.push(if spike { rng.random_range(0.0..40.0) } else { r });
            amp.push(a);
            valid.push(v);
        }
        feature_series(rr, amp, valid)
    })
}

fn blobs(per_class: usize, spread: f64, s: u64) -> Vec<(FeatureVector, PatternLabel)> {
    let mut rng = seed::rng(s);
    let mut out = Vec::new();
    for (i, label) in PatternLabel::ALL.into_iter().enumerate() {
        let c = [(i % 3) as f64 * 10.0, (i / 3) as f64 * 10.0, 1.0, 2.0];
        for _ in 0..per_class {
            let mut x = c;
            for v in &mut x {
                *v += rng.random_range(-spread..spread);
            }
            out.push((FeatureVector::from_array(x), label));
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn signal_record_rewrites_identically(
        samples in prop::collection::vec(-1e4f64..1e4, 1..200),
        fs in 0.5f64..200.0,
        mask_seed in any::<u64>(),
        label in 0u8..9,
    ) {
        let mut rng = seed::rng(mask_seed);
        let valid: Vec<bool> = samples.iter().map(|_| rng.random_bool(0.8)).collect();
        let s = RespiratorySignal::new(samples, fs, valid).unwrap();
        let meta = RecordMeta { label: Some(label), subject: Some(3), ..Default::default() };
        let mut first = Vec::new();
        write_signal(&mut first, &s, &meta).unwrap();
        let (back, back_meta) = read_signal(first.as_slice()).unwrap();
        let mut second = Vec::new();
        write_signal(&mut second, &back, &back_meta).unwrap();
        prop_assert_eq!(first, second);
    }

    #[test]
    fn generation_repeats_per_seed(entry in 0usize..12, s in any::<u64>()) {
        let spec = default_protocol()[entry].clone().with_duration(40.0);
        prop_assert_eq!(generate_pattern(&spec, FS, s).unwrap(), generate_pattern(&spec, FS, s).unwrap());
    }

    #[test]
    fn complex_patterns_pause_at_least_twice(s in any::<u64>(), biots in any::<bool>()) {
        let spec = if biots {
            PatternSpec::new(PatternLabel::Biots, 15.0, 1.0, (12.0, 25.0))
        } else {
            PatternSpec::new(PatternLabel::CheyneStokes, 20.0, 4.5, (12.0, 25.0))
        };
        let g = generate_pattern_detailed(&spec, FS, s).unwrap();
        let long = runs(g.breathing.iter().map(|b| !b))
            .into_iter()
            .filter(|r| r.len() as f64 / FS >= 3.0)
            .count();
        prop_assert!(long >= 2, "{} pauses", long);
    }

    #[test]
    fn mixing_is_symmetric_in_weight(
        a in prop::collection::vec(-5f64..5.0, 10..100),
        p in 0f64..=1.0,
        s in any::<u64>(),
    ) {
        let b = noise(a.len(), 1.0, s);
        let sa = RespiratorySignal::from_samples(a.clone(), FS).unwrap();
        let sb = RespiratorySignal::from_samples(b.clone(), FS).unwrap();
        let ab = mix_signals(&sa, &sb, p).unwrap();
        let ba = mix_signals(&sb, &sa, 1.0 - p).unwrap();
        for k in 0..a.len() {
            prop_assert_eq!(ab.samples()[k], p * a[k] + (1.0 - p) * b[k]);
            prop_assert!((ab.samples()[k] - ba.samples()[k]).abs() <= 1e-12 * (1.0 + a[k].abs() + b[k].abs()));
        }
    }

    #[test]
    fn gating_a_gated_matrix_changes_nothing(
        steps in prop::collection::vec((0usize..400, 0.5f64..6.0), 0..6),
        threshold in 0.5f64..8.0,
        s in any::<u64>(),
    ) {
        let o = observations(400, 15.0, &[1.0, 0.8, 1.2], 0.05, s);
        let mut m = o.data().clone();
        for (at, h) in steps {
            for r in at..400 {
                m[(r, 0)] += h;
            }
        }
        let o = ObservationMatrix::new(m, FS).unwrap();
        let gate = motion_gate(&o, threshold, 2.0);
        prop_assert_eq!(motion_gate_masked(&o, &gate, threshold, 2.0), gate);
    }

    #[test]
    fn solve_offsets_recovers_consistent_offsets(offs in prop::collection::vec(-50i32..50, 1..8)) {
        let mut truth = vec![0.0];
        truth.extend(offs.iter().map(|&d| d as f64));
        let n = truth.len();
        let lags: Vec<PairLag> = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .map(|(i, j)| PairLag { i, j, lag: truth[j] - truth[i] })
            .collect();
        let sol = solve_offsets(&lags, n).unwrap();
        for (a, b) in sol.offsets.iter().zip(&truth) {
            prop_assert!((a - b).abs() < 1e-9);
        }
        prop_assert!(sol.residual_norm < 1e-9);
    }

    #[test]
    fn confusion_accounting_holds(pairs in prop::collection::vec((0u8..9, 0u8..9), 1..300)) {
        let pairs: Vec<(PatternLabel, PatternLabel)> = pairs
            .into_iter()
            .map(|(a, b)| (PatternLabel::from_code(a).unwrap(), PatternLabel::from_code(b).unwrap()))
            .collect();
        let c = Confusion::from_pairs(&pairs);
        prop_assert_eq!(c.total(), pairs.len());
        prop_assert!((0.0..=1.0).contains(&c.accuracy));
        let hits = pairs.iter().filter(|(a, b)| a == b).count();
        prop_assert!((c.accuracy - hits as f64 / pairs.len() as f64).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn fusion_scales_with_the_observations(k in 0.01f64..100.0, s in any::<u64>()) {
        let o = observations(600, 14.0, &[1.0, -0.7, 1.3, 0.9], 0.1, s);
        let a = windowed_pca_fuse(&o, 30.0, 1).unwrap();
        let b = windowed_pca_fuse(&o.scaled(k), 30.0, 1).unwrap();
        for (x, y) in a.samples().iter().zip(b.samples()) {
            prop_assert!((k * x - y).abs() <= 1e-9 * k.max(1.0) * (1.0 + x.abs()));
        }
    }

    #[test]
    fn fusion_ignores_channel_order(perm_seed in any::<u64>(), s in any::<u64>()) {
        use rand::seq::SliceRandom;
        let o = observations(600, 14.0, &[1.0, -0.7, 1.3, 0.9, 0.5], 0.1, s);
        let mut perm: Vec<usize> = (0..5).collect();
        perm.shuffle(&mut seed::rng(perm_seed));
        let a = windowed_pca_fuse(&o, 30.0, 1).unwrap();
        let b = windowed_pca_fuse(&o.select_columns(&perm).unwrap(), 30.0, 1).unwrap();
        let sign = dsp::pearson(a.samples(), b.samples()).signum();
        for (x, y) in a.samples().iter().zip(b.samples()) {
            prop_assert!((x - sign * y).abs() < 1e-8 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn normalization_is_idempotent(rr in 6f64..30.0, amp in 0.05f64..20.0, s in any::<u64>()) {
        let x: Vec<f64> = sinusoid(300, rr, amp).iter().zip(noise(300, 0.05 * amp, s)).map(|(a, b)| a + b).collect();
        let sig = RespiratorySignal::from_samples(x, FS).unwrap();
        let once = normalize(&sig, 0..300).unwrap();
        let again = calibration_scale(&once, 0..300).unwrap();
        prop_assert!((again - 1.0).abs() < 0.03);
    }

    #[test]
    fn lag_of_shifted_noise_is_recovered(k in -99isize..100, s in any::<u64>()) {
        let x = noise(400, 1.0, s);
        let a = RespiratorySignal::from_samples(x.clone(), FS).unwrap();
        let b = RespiratorySignal::from_samples(dsp::shift(&x, k), FS).unwrap();
        let lags = estimate_lags(&[&a, &b]).unwrap();
        prop_assert_eq!(lags[0].lag, k as f64);
    }

    #[test]
    fn regular_peaks_give_their_rate(period_s in 1.6f64..12.0, start in 0f64..5.0, count in 3usize..12) {
        let locations: Vec<f64> = (0..count).map(|p| start + p as f64 * period_s).collect();
        let n = ((locations[count - 1] + 1.0) * FS).ceil() as usize;
        let peaks = PeakSet {
            indices: locations.iter().map(|t| (t * FS).round() as usize).collect(),
            locations: locations.clone(),
            prominences: vec![2.0; count],
            amplitudes: vec![1.0; count],
            widths: vec![period_s / 2.0; count],
        };
        let f = peak_features(&peaks, n, FS).unwrap();
        prop_assert!(f.valid_count() > 0);
        for k in 0..n {
            if f.valid[k] {
                prop_assert!((f.rr[k] - 60.0 / period_s).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn sinusoid_peak_rate_is_accurate(rr in 6f64..30.0, phase in 0f64..6.28) {
        let x: Vec<f64> = (0..900).map(|k| (2.0 * PI * rr / 60.0 * k as f64 / FS + phase).sin()).collect();
        let peaks = detect_peaks(&x, FS, &PeakParams::default());
        let f = peak_features(&peaks, x.len(), FS).unwrap();
        for k in 0..x.len() {
            if f.valid[k] {
                prop_assert!((f.rr[k] / rr - 1.0).abs() < 0.01, "{} vs {}", f.rr[k], rr);
            }
        }
    }

    #[test]
    fn correction_reaches_a_fixed_point(f in messy_features()) {
        let once = artifact_correct(&f);
        prop_assert_eq!(artifact_correct(&once), once.clone());
        for k in 0..once.len() {
            if !once.valid[k] {
                prop_assert_eq!((once.rr[k], once.amp[k]), (0.0, 0.0));
            }
        }
    }

    #[test]
    fn moving_variance_is_nonnegative_and_shift_free(f in messy_features(), c in -3f64..30.0, w in 5f64..60.0) {
        let v = moving_variance(&f, w);
        prop_assert!(v.rr_var.iter().chain(&v.a_var).all(|&x| x >= 0.0));
        let mut g = f.clone();
        for k in 0..g.len() {
            if g.valid[k] {
                g.rr[k] += c;
            }
        }
        let u = moving_variance(&g, w);
        prop_assert_eq!(&u.valid, &v.valid);
        for (a, b) in u.rr_var.iter().zip(&v.rr_var) {
            prop_assert!((a - b).abs() < 1e-9 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn constant_features_fuse_to_themselves(n in 100usize..1500, rr in 4f64..40.0, amp in 0.1f64..5.0) {
        let f = feature_series(vec![rr; n], vec![amp; n], vec![true; n]);
        prop_assert_eq!(fuse_features(&f, &f).unwrap(), f);
    }

    #[test]
    fn predictions_ignore_affine_feature_maps(
        scale in prop::array::uniform4(0.05f64..20.0),
        offset in prop::array::uniform4(-100f64..100.0),
        s in any::<u64>(),
    ) {
        let data = blobs(8, 2.0, s);
        let mapped: Vec<(FeatureVector, PatternLabel)> = data
            .iter()
            .map(|(x, l)| {
                let a = x.to_array();
                (FeatureVector::from_array(std::array::from_fn(|i| scale[i] * a[i] + offset[i])), *l)
            })
            .collect();
        let params = SvmParams::default();
        let m1 = train_ovo(&data, &params).unwrap();
        let m2 = train_ovo(&mapped, &params).unwrap();
        for ((x, _), (y, _)) in data.iter().zip(&mapped) {
            prop_assert_eq!(m1.predict(x), m2.predict(y));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn simple_pattern_ridge_is_within_one_voice(rr in 5f64..35.0, s in any::<u64>()) {
        let spec = PatternSpec::new(PatternLabel::Eupnea, rr, 1.0, (rr, rr));
        let sig = generate_pattern(&spec, FS, s).unwrap();
        let ridge = ridge_features(&cwt_spectrogram(sig.samples(), FS, &CwtParams::default()).unwrap()).unwrap();
        let rates: Vec<f64> = (0..ridge.len()).filter(|&k| ridge.valid[k]).map(|k| ridge.rr[k]).collect();
        let med = dsp::median(&rates).unwrap();
        prop_assert!(med / rr < voice() && rr / med < voice(), "{} vs {}", med, rr);
    }

    #[test]
    fn ridge_of_a_sinusoid_is_within_one_voice(rr in 5f64..35.0, phase in 0f64..6.28) {
        let x: Vec<f64> = (0..1200).map(|k| (2.0 * PI * rr / 60.0 * k as f64 / FS + phase).sin()).collect();
        let ridge = ridge_features(&cwt_spectrogram(&x, FS, &CwtParams::default()).unwrap()).unwrap();
        for k in interior(x.len(), rr) {
            prop_assert!(ridge.valid[k]);
            prop_assert!(ridge.rr[k] / rr < voice() && rr / ridge.rr[k] < voice(), "{} vs {}", ridge.rr[k], rr);
        }
    }

    #[test]
    fn ridge_scales_with_amplitude(k in 0.01f64..100.0, s in any::<u64>()) {
        let x: Vec<f64> = sinusoid(800, 14.0, 1.0).iter().zip(noise(800, 0.2, s)).map(|(a, b)| a + b).collect();
        let y: Vec<f64> = x.iter().map(|v| k * v).collect();
        let p = CwtParams::default();
        let a = ridge_features(&cwt_spectrogram(&x, FS, &p).unwrap()).unwrap();
        let b = ridge_features(&cwt_spectrogram(&y, FS, &p).unwrap()).unwrap();
        prop_assert_eq!(&a.valid, &b.valid);
        for i in 0..x.len() {
            prop_assert!((a.rr[i] - b.rr[i]).abs() < 1e-9);
            prop_assert!((k * a.amp[i] - b.amp[i]).abs() < 1e-9 * k.max(1.0));
        }
    }

    #[test]
    fn ridge_follows_a_time_shift(d in 1usize..200, rr in 8f64..25.0) {
        let n = 1200;
        let x: Vec<f64> = (0..n + d)
            .map(|k| {
                let t = k as f64 / FS;
                (1.0 + 0.5 * (2.0 * PI * t / 40.0).sin()) * (2.0 * PI * rr / 60.0 * t).sin()
            })
            .collect();
        let p = CwtParams::default();
        let a = ridge_features(&cwt_spectrogram(&x[..n], FS, &p).unwrap()).unwrap();
        let b = ridge_features(&cwt_spectrogram(&x[d..], FS, &p).unwrap()).unwrap();
        let inner = interior(n, rr);
        for k in inner.start + d..inner.end {
            prop_assert!(a.rr[k] / b.rr[k - d] < voice() * 1.0001 && b.rr[k - d] / a.rr[k] < voice() * 1.0001);
            prop_assert!((a.amp[k] - b.amp[k - d]).abs() < 0.02 * a.amp[k].max(0.1));
        }
    }

    #[test]
    fn redistribution_keeps_breath_count(rr in 12f64..18.0, target in 12f64..18.0) {
        let x = sinusoid(600, rr, 1.0);
        let seg = LabeledSegment::new(RespiratorySignal::from_samples(x.clone(), FS).unwrap(), PatternLabel::Eupnea, (12.0, 18.0)).unwrap();
        let out = redistribute_rr(&seg, target, 0).unwrap();
        let count = |v: &[f64]| detect_peaks(v, FS, &PeakParams::default()).len() as i64;
        prop_assert!((count(&x) - count(out.signal.samples())).abs() <= 1);
    }

    #[test]
    fn large_c_separates_the_training_set(s in any::<u64>()) {
        let data = blobs(6, 3.0, s);
        let params = SvmParams { c: 1e4, ..SvmParams::default() };
        let model = train_ovo(&data, &params).unwrap();
        for (x, l) in &data {
            prop_assert_eq!(model.predict(x), *l);
        }
    }

    #[test]
    fn cross_validation_repeats_per_seed(s in any::<u64>()) {
        let data = blobs(10, 6.0, s);
        let a = cross_validate(&data, 5, &SvmParams::default(), s).unwrap();
        let b = cross_validate(&data, 5, &SvmParams::default(), s).unwrap();
        prop_assert_eq!(a.confusion.counts, b.confusion.counts);
        prop_assert_eq!(a.fold_accuracy, b.fold_accuracy);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(3))]

    #[test]
    fn dataset_repeats_per_seed(s in any::<u64>()) {
        let mut sources = Vec::new();
        for subject in 0..2 {
            for (entry, spec) in default_protocol().into_iter().enumerate() {
                let signal = generate_pattern(&spec, FS, seed::derive(s, &[subject as u64, entry as u64])).unwrap();
                let segment = LabeledSegment::new(signal, spec.label, spec.target_rr_range).unwrap();
                sources.push(SourceSegment { subject, entry, segment });
            }
        }
        let a = build_dataset(&sources, 2, s).unwrap();
        let b = build_dataset(&sources, 2, s).unwrap();
        prop_assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            prop_assert_eq!(&x.segment, &y.segment);
            prop_assert_eq!(&x.provenance, &y.provenance);
        }
    }
}
