//! Shared domain types.
//!
//! Validity is carried as an explicit boolean mask next to the samples.
//! Stages that "set to zero" write `0.0` and clear the mask bit, so
//! downstream metrics can decide whether to count those samples.

use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The nine breathing patterns. Integer codes are stable and used in
/// persisted records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PatternLabel {
    Bradypnea,
    Eupnea,
    Hypopnea,
    Hyperpnea,
    Tachypnea,
    Kussmaul,
    CheyneStokes,
    Biots,
    Apnea,
}

impl PatternLabel {
    pub const ALL: [PatternLabel; 9] = [
        PatternLabel::Bradypnea,
        PatternLabel::Eupnea,
        PatternLabel::Hypopnea,
        PatternLabel::Hyperpnea,
        PatternLabel::Tachypnea,
        PatternLabel::Kussmaul,
        PatternLabel::CheyneStokes,
        PatternLabel::Biots,
        PatternLabel::Apnea,
    ];

    pub const COUNT: usize = 9;

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    /// Row label used in report tables.
    pub fn display_name(self) -> &'static str {
        match self {
            PatternLabel::Bradypnea => "Bradypnea",
            PatternLabel::Eupnea => "Eupnea",
            PatternLabel::Hypopnea => "Hypopnea",
            PatternLabel::Hyperpnea => "Hyperpnea",
            PatternLabel::Tachypnea => "Tachypnea",
            PatternLabel::Kussmaul => "Kussmaul",
            PatternLabel::CheyneStokes => "Cheyne Stokes",
            PatternLabel::Biots => "Biot's",
            PatternLabel::Apnea => "Apnea",
        }
    }

    /// Patterns built from several simple patterns (apnea phases mixed with breathing).
    pub fn is_complex(self) -> bool {
        matches!(self, PatternLabel::CheyneStokes | PatternLabel::Biots)
    }

    /// Class-level respiratory-rate range in breaths/min used when
    /// redistributing rates during augmentation.
    pub fn target_rr_range(self) -> (f64, f64) {
        match self {
            PatternLabel::Bradypnea => (5.0, 10.0),
            PatternLabel::Eupnea | PatternLabel::Hypopnea | PatternLabel::Hyperpnea => (12.0, 18.0),
            PatternLabel::Tachypnea | PatternLabel::Kussmaul => (20.0, 35.0),
            PatternLabel::CheyneStokes | PatternLabel::Biots => (12.0, 25.0),
            PatternLabel::Apnea => (0.0, 0.0),
        }
    }
}

impl fmt::Display for PatternLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.display_name())
    }
}

/// A 1-D respiratory signal in normalized units.
#[derive(Debug, Clone, PartialEq)]
pub struct RespiratorySignal {
    samples: Vec<f64>,
    fs: f64,
    valid: Vec<bool>,
}

impl RespiratorySignal {
    pub fn new(samples: Vec<f64>, fs: f64, valid: Vec<bool>) -> Result<Self> {
        if !(fs > 0.0) || !fs.is_finite() {
            return Err(Error::NonPositiveFs(fs));
        }
        if samples.len() != valid.len() {
            return Err(Error::LengthMismatch {
                what: "samples/valid",
                left: samples.len(),
                right: valid.len(),
            });
        }
        if let Some(index) = samples.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { samples, fs, valid })
    }

    /// All samples marked valid.
    pub fn from_samples(samples: Vec<f64>, fs: f64) -> Result<Self> {
        let valid = vec![true; samples.len()];
        Self::new(samples, fs, valid)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn fs(&self) -> f64 {
        self.fs
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.fs
    }

    pub fn into_parts(self) -> (Vec<f64>, f64, Vec<bool>) {
        (self.samples, self.fs, self.valid)
    }

    /// Sub-signal over `range` (sample indices).
    pub fn slice(&self, range: std::ops::Range<usize>) -> Result<Self> {
        if range.end > self.len() || range.start > range.end {
            return Err(Error::InvalidArgument(format!(
                "slice {:?} out of bounds for length {}",
                range,
                self.len()
            )));
        }
        Ok(Self {
            samples: self.samples[range.clone()].to_vec(),
            fs: self.fs,
            valid: self.valid[range].to_vec(),
        })
    }

    /// Same mask and rate, new sample values.
    pub fn with_samples(&self, samples: Vec<f64>) -> Result<Self> {
        Self::new(samples, self.fs, self.valid.clone())
    }

    /// Multiplies every sample by `k`.
    pub fn scaled(&self, k: f64) -> Self {
        Self {
            samples: self.samples.iter().map(|x| x * k).collect(),
            fs: self.fs,
            valid: self.valid.clone(),
        }
    }
}

/// Raw record content before invariant checks.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecord {
    pub fs: f64,
    pub samples: Vec<f64>,
    pub valid: Option<Vec<bool>>,
}

/// Turns a parsed record into a checked signal. A missing mask means all
/// samples are valid.
pub fn validate_record(raw: RawRecord) -> Result<RespiratorySignal> {
    let valid = raw.valid.unwrap_or_else(|| vec![true; raw.samples.len()]);
    RespiratorySignal::new(raw.samples, raw.fs, valid)
}

/// Time × channel block of raw candidate respiratory signals.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationMatrix {
    data: DMatrix<f64>,
    fs: f64,
}

impl ObservationMatrix {
    pub fn new(data: DMatrix<f64>, fs: f64) -> Result<Self> {
        if !(fs > 0.0) || !fs.is_finite() {
            return Err(Error::NonPositiveFs(fs));
        }
        if data.nrows() < 2 || data.ncols() < 1 {
            return Err(Error::InvalidArgument(format!(
                "observation matrix must be at least 2x1, got {}x{}",
                data.nrows(),
                data.ncols()
            )));
        }
        if let Some(index) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { data, fs })
    }

    /// Builds from equal-length columns.
    pub fn from_columns(columns: &[Vec<f64>], fs: f64) -> Result<Self> {
        let Some(first) = columns.first() else {
            return Err(Error::InvalidArgument("no channels".into()));
        };
        let m = first.len();
        for c in columns {
            if c.len() != m {
                return Err(Error::LengthMismatch {
                    what: "observation channels",
                    left: m,
                    right: c.len(),
                });
            }
        }
        let data = DMatrix::from_fn(m, columns.len(), |r, c| columns[c][r]);
        Self::new(data, fs)
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn fs(&self) -> f64 {
        self.fs
    }

    pub fn rows(&self) -> usize {
        self.data.nrows()
    }

    pub fn channels(&self) -> usize {
        self.data.ncols()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.data.column(j).iter().copied().collect()
    }

    /// Keeps only the listed columns, in the given order.
    pub fn select_columns(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() || indices.iter().any(|&i| i >= self.channels()) {
            return Err(Error::InvalidArgument(format!(
                "column selection {indices:?} invalid for {} channels",
                self.channels()
            )));
        }
        Ok(Self {
            data: self.data.select_columns(indices),
            fs: self.fs,
        })
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self {
            data: &self.data * k,
            fs: self.fs,
        }
    }
}

/// Per-sample respiratory features.
///
/// `width` is only produced by the peak path.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSeries {
    /// Respiratory rate in breaths/min.
    pub rr: Vec<f64>,
    /// Amplitude in n.u.
    pub amp: Vec<f64>,
    /// Width at half prominence in seconds.
    pub width: Option<Vec<f64>>,
    pub valid: Vec<bool>,
    pub fs: f64,
}

impl FeatureSeries {
    pub fn new(
        rr: Vec<f64>,
        amp: Vec<f64>,
        width: Option<Vec<f64>>,
        valid: Vec<bool>,
        fs: f64,
    ) -> Result<Self> {
        let f = Self {
            rr,
            amp,
            width,
            valid,
            fs,
        };
        f.check()?;
        Ok(f)
    }

    /// All-invalid zero series of length `n`.
    pub fn invalid(n: usize, fs: f64, with_width: bool) -> Self {
        Self {
            rr: vec![0.0; n],
            amp: vec![0.0; n],
            width: with_width.then(|| vec![0.0; n]),
            valid: vec![false; n],
            fs,
        }
    }

    pub fn len(&self) -> usize {
        self.rr.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rr.is_empty()
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    pub fn check(&self) -> Result<()> {
        if !(self.fs > 0.0) {
            return Err(Error::NonPositiveFs(self.fs));
        }
        let n = self.rr.len();
        let lens = [
            ("feature rr/amp", self.amp.len()),
            ("feature rr/valid", self.valid.len()),
            ("feature rr/width", self.width.as_ref().map_or(n, Vec::len)),
        ];
        for (what, len) in lens {
            if len != n {
                return Err(Error::LengthMismatch {
                    what,
                    left: n,
                    right: len,
                });
            }
        }
        for k in 0..n {
            if self.valid[k] && (self.rr[k] < 0.0 || self.amp[k] < 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "negative feature value at index {k}"
                )));
            }
        }
        Ok(())
    }

    /// Marks `k` invalid and zeroes every channel there.
    pub fn zero_out(&mut self, k: usize) {
        self.rr[k] = 0.0;
        self.amp[k] = 0.0;
        if let Some(w) = self.width.as_mut() {
            w[k] = 0.0;
        }
        self.valid[k] = false;
    }
}

/// Segment-level classifier input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub rr_med: f64,
    pub a_med: f64,
    pub rr_var_med: f64,
    pub a_var_med: f64,
}

impl FeatureVector {
    pub const DIM: usize = 4;

    pub fn to_array(&self) -> [f64; 4] {
        [self.rr_med, self.a_med, self.rr_var_med, self.a_var_med]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self {
            rr_med: a[0],
            a_med: a[1],
            rr_var_med: a[2],
            a_var_med: a[3],
        }
    }
}

/// A signal slice with its breathing-pattern label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSegment {
    pub signal: RespiratorySignal,
    pub label: PatternLabel,
    pub target_rr_range: (f64, f64),
}

impl LabeledSegment {
    pub fn new(
        signal: RespiratorySignal,
        label: PatternLabel,
        target_rr_range: (f64, f64),
    ) -> Result<Self> {
        let (lo, hi) = target_rr_range;
        if !(lo >= 0.0 && hi >= lo) {
            return Err(Error::InvalidArgument(format!(
                "bad target range [{lo}, {hi}]"
            )));
        }
        if label == PatternLabel::Apnea && (lo != 0.0 || hi != 0.0) {
            return Err(Error::InvalidArgument(
                "apnea target range must be [0, 0]".into(),
            ));
        }
        Ok(Self {
            signal,
            label,
            target_rr_range,
        })
    }
}
