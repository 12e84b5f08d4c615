//! Savitzky-Golay smoothing.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::RespiratorySignal;

pub const DEFAULT_ORDER: usize = 2;
pub const DEFAULT_FRAME_S: f64 = 1.5;

/// Odd frame length in samples nearest to `frame_s · fs`.
pub fn frame_len(frame_s: f64, fs: f64) -> usize {
    let raw = frame_s * fs;
    let lo = ((raw - 1.0) / 2.0).floor() as i64 * 2 + 1;
    let hi = lo + 2;
    let pick = if (raw - lo as f64).abs() <= (hi as f64 - raw).abs() { lo } else { hi };
    pick.max(1) as usize
}

/// Hat matrix `V (VᵀV)⁻¹ Vᵀ` of a degree-`order` polynomial fit over a
/// frame. Row `r` holds the weights that evaluate the fit at position `r`.
pub fn hat_matrix(frame: usize, order: usize) -> DMatrix<f64> {
    let h = (frame / 2) as f64;
    let v = DMatrix::from_fn(frame, order + 1, |r, c| ((r as f64 - h) / h.max(1.0)).powi(c as i32));
    let vtv = v.transpose() * &v;
    let inv = vtv.try_inverse().expect("Vandermonde normal matrix is invertible for frame > order");
    &v * inv * v.transpose()
}

/// Smooths with a local polynomial fit. The first and last half-frame are
/// evaluated from the polynomial fitted to the first and last full frame.
pub fn sgolay_filter(x: &[f64], frame: usize, order: usize) -> Result<Vec<f64>> {
    if frame % 2 == 0 || frame < order + 2 {
        return Err(Error::InvalidArgument(format!(
            "frame {frame} must be odd and at least order + 2 = {}",
            order + 2
        )));
    }
    let n = x.len();
    if n < frame {
        return Err(Error::TooShort { needed: frame, got: n });
    }
    let hat = hat_matrix(frame, order);
    let half = frame / 2;
    let centre = hat.row(half);
    let mut y = vec![0.0; n];
    for k in half..n - half {
        y[k] = (0..frame).map(|j| centre[j] * x[k - half + j]).sum();
    }
    for k in 0..half {
        y[k] = (0..frame).map(|j| hat[(k, j)] * x[j]).sum();
        let r = frame - half + k;
        let kk = n - half + k;
        y[kk] = (0..frame).map(|j| hat[(r, j)] * x[n - frame + j]).sum();
    }
    Ok(y)
}

pub fn sgolay_smooth(s: &RespiratorySignal, order: usize, frame_s: f64) -> Result<RespiratorySignal> {
    let frame = frame_len(frame_s, s.fs());
    let y = sgolay_filter(s.samples(), frame, order)?;
    s.with_samples(y)
}
