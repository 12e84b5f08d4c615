//! Two redundant feature paths: time-domain peaks and wavelet ridges.

pub mod cwt;
pub mod peaks;
pub mod sgolay;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{FeatureSeries, RespiratorySignal};

pub use cwt::{cwt_spectrogram, ridge_features, CwtParams, CwtSpectrogram};
pub use peaks::{detect_peaks, peak_features, PeakParams, PeakSet};
pub use sgolay::sgolay_smooth;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureParams {
    pub sgolay_order: usize,
    pub sgolay_frame_s: f64,
    pub peaks: PeakParams,
    pub cwt: CwtParams,
}

impl Default for FeatureParams {
    fn default() -> Self {
        Self {
            sgolay_order: sgolay::DEFAULT_ORDER,
            sgolay_frame_s: sgolay::DEFAULT_FRAME_S,
            peaks: PeakParams::default(),
            cwt: CwtParams::default(),
        }
    }
}

/// Peak-path and ridge-path features of one signal. Samples invalid in the
/// signal's own mask are invalid in both outputs.
pub fn extract_features(s: &RespiratorySignal, params: &FeatureParams) -> Result<(FeatureSeries, FeatureSeries)> {
    let smooth = sgolay_smooth(s, params.sgolay_order, params.sgolay_frame_s)?;
    let peaks = detect_peaks(smooth.samples(), s.fs(), &params.peaks);
    let mut fp = peak_features(&peaks, s.len(), s.fs())?;
    let spec = cwt_spectrogram(s.samples(), s.fs(), &params.cwt)?;
    let mut fr = ridge_features(&spec)?;
    for (k, &v) in s.valid().iter().enumerate() {
        if !v {
            fp.valid[k] = false;
            fr.valid[k] = false;
        }
    }
    Ok((fp, fr))
}
