//! From raw observations to one respiratory signal.
//!
//! The chain is: motion gating, bridging of gated rows, correlation-based
//! channel selection and moving-window PCA with sign alignment between
//! consecutive windows.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dsp;
use crate::error::{Error, Result};
use crate::model::{ObservationMatrix, RespiratorySignal};

pub const DEFAULT_MOTION_THRESHOLD: f64 = 5.0;
pub const DEFAULT_REINIT_DELAY_S: f64 = 2.0;
pub const DEFAULT_KEEP_CHANNELS: usize = 5;
pub const DEFAULT_WINDOW_S: f64 = 30.0;

/// A tracked 2-D point trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory2D {
    points: DMatrix<f64>,
    fs: f64,
}

impl Trajectory2D {
    pub fn new(points: DMatrix<f64>, fs: f64) -> Result<Self> {
        if !(fs > 0.0) {
            return Err(Error::NonPositiveFs(fs));
        }
        if points.ncols() != 2 || points.nrows() < 2 {
            return Err(Error::InvalidArgument(format!(
                "trajectory must be m x 2 with m >= 2, got {}x{}",
                points.nrows(),
                points.ncols()
            )));
        }
        if let Some(index) = points.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { points, fs })
    }

    pub fn from_xy(xy: &[(f64, f64)], fs: f64) -> Result<Self> {
        let m = xy.len();
        Self::new(DMatrix::from_fn(m, 2, |r, c| if c == 0 { xy[r].0 } else { xy[r].1 }), fs)
    }

    pub fn points(&self) -> &DMatrix<f64> {
        &self.points
    }

    pub fn fs(&self) -> f64 {
        self.fs
    }
}

/// Principal direction of a mean-centred trajectory and the share of
/// variance it explains.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrincipalAxis {
    pub direction: [f64; 2],
    pub explained: f64,
}

fn centered(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut c = m.clone();
    for mut col in c.column_iter_mut() {
        let mu = col.mean();
        col.add_scalar_mut(-mu);
    }
    c
}

/// Index of the largest singular value.
fn top_singular(values: &DVector<f64>) -> usize {
    values.iter().enumerate().fold(0, |best, (i, &v)| if v > values[best] { i } else { best })
}

pub fn principal_axis(t: &Trajectory2D) -> Result<PrincipalAxis> {
    let c = centered(&t.points);
    let total: f64 = c.iter().map(|v| v * v).sum();
    if total <= 0.0 {
        return Err(Error::DegenerateTrajectory);
    }
    let svd = c.svd(false, true);
    let v_t = svd.v_t.expect("v_t requested");
    let i = top_singular(&svd.singular_values);
    let mut d = [v_t[(i, 0)], v_t[(i, 1)]];
    // deterministic polarity: largest component positive
    let lead = if d[0].abs() >= d[1].abs() { d[0] } else { d[1] };
    if lead < 0.0 {
        d = [-d[0], -d[1]];
    }
    let s = svd.singular_values[i];
    Ok(PrincipalAxis {
        direction: d,
        explained: s * s / total,
    })
}

/// Projects a trajectory onto its direction of greatest variance. The
/// output is mean-centred.
pub fn project_trajectory(t: &Trajectory2D) -> Result<Vec<f64>> {
    let axis = principal_axis(t)?;
    let c = centered(&t.points);
    Ok((0..c.nrows())
        .map(|r| c[(r, 0)] * axis.direction[0] + c[(r, 1)] * axis.direction[1])
        .collect())
}

/// Column-stacks equal-length signals.
pub fn build_observation_matrix(signals: &[Vec<f64>], fs: f64) -> Result<ObservationMatrix> {
    ObservationMatrix::from_columns(signals, fs)
}

/// Motion gate: rows whose squared frame-to-frame change exceeds
/// `threshold` are invalid, and so is every row up to `reinit_delay_s`
/// after the latest marked one.
pub fn motion_gate(o: &ObservationMatrix, threshold: f64, reinit_delay_s: f64) -> Vec<bool> {
    motion_gate_masked(o, &vec![true; o.rows()], threshold, reinit_delay_s)
}

/// Like [`motion_gate`], but only compares consecutive rows that are both
/// valid in `prior`, and ANDs the result with `prior`. Gating a gated
/// matrix again therefore changes nothing.
pub fn motion_gate_masked(o: &ObservationMatrix, prior: &[bool], threshold: f64, reinit_delay_s: f64) -> Vec<bool> {
    let m = o.rows();
    assert_eq!(prior.len(), m, "prior mask length");
    let data = o.data();
    let delay = (reinit_delay_s * o.fs()).round().max(0.0) as usize;
    let mut valid = prior.to_vec();
    let mut hold_until: Option<usize> = None;
    for k in 0..m {
        if k > 0 && prior[k] && prior[k - 1] {
            let e: f64 = (data.row(k) - data.row(k - 1)).iter().map(|v| v * v).sum();
            if e > threshold {
                hold_until = Some(k + delay);
            }
        }
        if hold_until.is_some_and(|h| k <= h) {
            valid[k] = false;
        }
    }
    valid
}

/// Replaces invalid rows by linear interpolation between the nearest valid
/// rows (edges hold the nearest valid row). All-invalid input is returned
/// unchanged.
pub fn bridge_invalid_rows(o: &ObservationMatrix, valid: &[bool]) -> Result<ObservationMatrix> {
    let m = o.rows();
    if valid.len() != m {
        return Err(Error::LengthMismatch {
            what: "gate mask/rows",
            left: valid.len(),
            right: m,
        });
    }
    let idx: Vec<usize> = (0..m).filter(|&k| valid[k]).collect();
    if idx.is_empty() || idx.len() == m {
        return Ok(o.clone());
    }
    let mut data = o.data().clone();
    let mut next = 0usize;
    for k in 0..m {
        if valid[k] {
            continue;
        }
        while next < idx.len() && idx[next] < k {
            next += 1;
        }
        let before = next.checked_sub(1).map(|i| idx[i]);
        let after = idx.get(next).copied();
        for c in 0..data.ncols() {
            data[(k, c)] = match (before, after) {
                (Some(a), Some(b)) => {
                    let w = (k - a) as f64 / (b - a) as f64;
                    (1.0 - w) * o.data()[(a, c)] + w * o.data()[(b, c)]
                }
                (Some(a), None) => o.data()[(a, c)],
                (None, Some(b)) => o.data()[(b, c)],
                (None, None) => unreachable!(),
            };
        }
    }
    ObservationMatrix::new(data, o.fs())
}

/// Mean of each column of the Pearson correlation matrix, self term
/// included.
pub fn mean_correlations(o: &ObservationMatrix) -> Vec<f64> {
    let n = o.channels();
    let cols: Vec<Vec<f64>> = (0..n).map(|j| o.column(j)).collect();
    let mut p = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i..n {
            let r = if i == j {
                // a zero-variance column correlates as 0, even with itself
                if dsp::variance(&cols[i]) > 0.0 {
                    1.0
                } else {
                    0.0
                }
            } else {
                dsp::pearson(&cols[i], &cols[j])
            };
            p[i][j] = r;
            p[j][i] = r;
        }
    }
    p.iter().map(|row| row.iter().sum::<f64>() / n as f64).collect()
}

/// Keeps the `keep` channels with the largest mean correlation. Returned
/// indices are ascending; ties go to the lower index.
pub fn select_channels(o: &ObservationMatrix, keep: usize) -> Result<(ObservationMatrix, Vec<usize>)> {
    if keep == 0 {
        return Err(Error::InvalidArgument("keep must be at least 1".into()));
    }
    let n = o.channels();
    if n <= keep {
        if n < keep {
            log::warn!("only {n} channels available, keeping all (requested {keep})");
        }
        return Ok((o.clone(), (0..n).collect()));
    }
    let rho = mean_correlations(o);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| rho[b].total_cmp(&rho[a]).then(a.cmp(&b)));
    let mut chosen = order[..keep].to_vec();
    chosen.sort_unstable();
    Ok((o.select_columns(&chosen)?, chosen))
}

/// Window length in samples for a window duration.
pub fn window_len(window_s: f64, fs: f64) -> usize {
    (window_s * fs).round().max(2.0) as usize
}

/// Start row of the window evaluated for row `k`: centred on `k`, clamped to
/// the record.
pub fn window_start(k: usize, len: usize, rows: usize) -> usize {
    k.saturating_sub(len / 2).min(rows - len)
}

/// Raw (unaligned) first principal direction of the window around each
/// evaluated row `0, stride, 2·stride, ...`. A window without variance
/// inherits nothing and yields `None`.
pub fn window_directions(o: &ObservationMatrix, len: usize, stride: usize) -> Result<Vec<Option<DVector<f64>>>> {
    let m = o.rows();
    if len < 2 {
        return Err(Error::InvalidArgument("window must span at least 2 samples".into()));
    }
    if m < len {
        return Err(Error::TooShort { needed: len, got: m });
    }
    let stride = stride.max(1);
    let data = o.data();
    let positions: Vec<usize> = (0..m).step_by(stride).collect();
    Ok(positions
        .par_iter()
        .map(|&k| {
            let start = window_start(k, len, m);
            let w = centered(&data.rows(start, len).into_owned());
            let svd = w.svd(false, true);
            let i = top_singular(&svd.singular_values);
            if svd.singular_values[i] <= 1e-12 {
                return None;
            }
            let v_t = svd.v_t.expect("v_t requested");
            Some(v_t.row(i).transpose())
        })
        .collect())
}

/// Sign-aligns each direction to its predecessor: a direction pointing
/// against the previous one (negative inner product) is negated. Windows
/// without a direction inherit the previous one.
pub fn align_directions(raw: &[Option<DVector<f64>>], channels: usize) -> Vec<DVector<f64>> {
    let mut out: Vec<DVector<f64>> = Vec::with_capacity(raw.len());
    // first defined direction seeds any leading gaps
    let seed = raw
        .iter()
        .flatten()
        .next()
        .cloned()
        .unwrap_or_else(|| DVector::from_element(channels, 1.0 / (channels as f64).sqrt()));
    for c in raw {
        let prev = out.last().unwrap_or(&seed);
        let next = match c {
            Some(c) if c.dot(prev) < 0.0 => -c,
            Some(c) => c.clone(),
            None => prev.clone(),
        };
        out.push(next);
    }
    out
}

/// Projects every row onto the aligned direction of its window, after
/// removing that window's mean.
pub fn project_windows(o: &ObservationMatrix, len: usize, stride: usize, directions: &[DVector<f64>]) -> Vec<f64> {
    let m = o.rows();
    let stride = stride.max(1);
    let data = o.data();
    let n = o.channels();
    // prefix sums for O(1) window means
    let mut prefix = vec![vec![0.0; n]; m + 1];
    for k in 0..m {
        for c in 0..n {
            prefix[k + 1][c] = prefix[k][c] + data[(k, c)];
        }
    }
    (0..m)
        .map(|k| {
            let slot = k / stride;
            let d = &directions[slot];
            let start = window_start(slot * stride, len, m);
            (0..n)
                .map(|c| {
                    let mu = (prefix[start + len][c] - prefix[start][c]) / len as f64;
                    (data[(k, c)] - mu) * d[c]
                })
                .sum()
        })
        .collect()
}

/// Moving-window PCA fusion of the selected channels.
///
/// The fused signal's polarity is fixed so that it correlates positively
/// with the mean of the input channels.
pub fn windowed_pca_fuse(o_max: &ObservationMatrix, window_s: f64, stride: usize) -> Result<RespiratorySignal> {
    let len = window_len(window_s, o_max.fs());
    let raw = window_directions(o_max, len, stride)?;
    let aligned = align_directions(&raw, o_max.channels());
    let mut s = project_windows(o_max, len, stride, &aligned);
    let mean_channel: Vec<f64> = (0..o_max.rows()).map(|r| o_max.data().row(r).mean()).collect();
    if dsp::pearson(&s, &mean_channel) < 0.0 {
        s.iter_mut().for_each(|v| *v = -*v);
    }
    RespiratorySignal::from_samples(s, o_max.fs())
}

/// Extraction parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtractConfig {
    pub motion_threshold: f64,
    pub reinit_delay_s: f64,
    pub keep_channels: usize,
    pub window_s: f64,
    pub stride: usize,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        Self {
            motion_threshold: DEFAULT_MOTION_THRESHOLD,
            reinit_delay_s: DEFAULT_REINIT_DELAY_S,
            keep_channels: DEFAULT_KEEP_CHANNELS,
            window_s: DEFAULT_WINDOW_S,
            stride: 1,
        }
    }
}

/// Gate, bridge, select and fuse. Gated rows stay invalid in the output
/// mask.
pub fn extract_signal(o: &ObservationMatrix, cfg: &ExtractConfig) -> Result<RespiratorySignal> {
    let gate = motion_gate(o, cfg.motion_threshold, cfg.reinit_delay_s);
    let bridged = bridge_invalid_rows(o, &gate)?;
    let (selected, _) = select_channels(&bridged, cfg.keep_channels)?;
    let fused = windowed_pca_fuse(&selected, cfg.window_s, cfg.stride)?;
    let (samples, fs, _) = fused.into_parts();
    RespiratorySignal::new(samples, fs, gate)
}
