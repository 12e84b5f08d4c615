//! Plain-text record formats.
//!
//! Every file is UTF-8 with LF line endings. The first line is a JSON
//! header object, the remaining lines are CSV rows without a column-name
//! line. Floats are written as `{:.8e}` (nine significant digits), so a
//! file written here reads back and re-writes byte for byte.
//!
//! ```text
//! signal record   {"kind":"signal","fs":10.0,"samples":3,...}
//!                 1.00000000e0,1
//!                 -2.50000000e-1,0
//! observations    {"kind":"observations","fs":10.0,"rows":2,"channels":2,...}
//!                 1.00000000e0,3.00000000e0
//! features        {"kind":"features","fs":10.0,"samples":2}
//!                 rr,amp,valid per row
//! ```

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::augment::Provenance;
use crate::error::{Error, Result};
use crate::model::{validate_record, FeatureSeries, ObservationMatrix, PatternLabel, RawRecord, RespiratorySignal};

/// Canonical float text.
pub fn format_f64(v: f64) -> String {
    format!("{v:.8e}")
}

/// Rounds through the text representation.
pub fn quantize(v: f64) -> f64 {
    format_f64(v).parse().expect("formatted float parses")
}

pub fn quantize_signal(s: &RespiratorySignal) -> RespiratorySignal {
    let samples = s.samples().iter().map(|&v| quantize(v)).collect();
    s.with_samples(samples).expect("same length")
}

fn parse_f64(field: &str, line: usize) -> Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|_| Error::Format(format!("line {line}: bad number {field:?}")))
}

fn parse_flag(field: &str, line: usize) -> Result<bool> {
    match field.trim() {
        "1" => Ok(true),
        "0" => Ok(false),
        f => Err(Error::Format(format!("line {line}: bad validity flag {f:?}"))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Kind {
    Signal,
    Observations,
    Features,
}

/// Metadata carried by a signal record.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RecordMeta {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_rr_range: Option<(f64, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

impl RecordMeta {
    pub fn pattern(&self) -> Result<Option<PatternLabel>> {
        self.label
            .map(|c| PatternLabel::from_code(c).ok_or_else(|| Error::Format(format!("unknown label code {c}"))))
            .transpose()
    }
}

#[derive(Serialize, Deserialize)]
struct SignalHeader {
    kind: Kind,
    fs: f64,
    samples: usize,
    #[serde(flatten)]
    meta: RecordMeta,
}

#[derive(Serialize, Deserialize)]
struct MatrixHeader {
    kind: Kind,
    fs: f64,
    rows: usize,
    channels: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    subject: Option<usize>,
}

#[derive(Serialize, Deserialize)]
struct FeatureHeader {
    kind: Kind,
    fs: f64,
    samples: usize,
}

fn header_line<T: Serialize>(h: &T) -> Result<String> {
    Ok(serde_json::to_string(h)? + "\n")
}

fn read_header<T: for<'de> Deserialize<'de>>(lines: &mut impl Iterator<Item = std::io::Result<String>>) -> Result<T> {
    let line = lines.next().ok_or_else(|| Error::Format("empty file".into()))??;
    Ok(serde_json::from_str(&line)?)
}

fn check_kind(got: &Kind, want: Kind) -> Result<()> {
    if *got != want {
        return Err(Error::Format(format!("expected a {want:?} file, found {got:?}")));
    }
    Ok(())
}

pub fn write_signal(mut w: impl Write, s: &RespiratorySignal, meta: &RecordMeta) -> Result<()> {
    let header = SignalHeader {
        kind: Kind::Signal,
        fs: s.fs(),
        samples: s.len(),
        meta: meta.clone(),
    };
    let mut out = header_line(&header)?;
    for (v, ok) in s.samples().iter().zip(s.valid()) {
        out.push_str(&format_f64(*v));
        out.push_str(if *ok { ",1\n" } else { ",0\n" });
    }
    w.write_all(out.as_bytes())?;
    Ok(())
}

pub fn read_signal(r: impl Read) -> Result<(RespiratorySignal, RecordMeta)> {
    let mut lines = BufReader::new(r).lines();
    let h: SignalHeader = read_header(&mut lines)?;
    check_kind(&h.kind, Kind::Signal)?;
    let mut samples = Vec::with_capacity(h.samples);
    let mut valid = Vec::with_capacity(h.samples);
    for (i, line) in lines.enumerate() {
        let line = line?;
        let n = i + 2;
        let (v, f) = line
            .split_once(',')
            .ok_or_else(|| Error::Format(format!("line {n}: expected value,valid")))?;
        samples.push(parse_f64(v, n)?);
        valid.push(parse_flag(f, n)?);
    }
    if samples.len() != h.samples {
        return Err(Error::LengthMismatch {
            what: "record header/sample count",
            left: h.samples,
            right: samples.len(),
        });
    }
    let signal = validate_record(RawRecord {
        fs: h.fs,
        samples,
        valid: Some(valid),
    })?;
    h.meta.pattern()?;
    Ok((signal, h.meta))
}

pub fn write_observations(mut w: impl Write, o: &ObservationMatrix, subject: Option<usize>) -> Result<()> {
    let header = MatrixHeader {
        kind: Kind::Observations,
        fs: o.fs(),
        rows: o.rows(),
        channels: o.channels(),
        subject,
    };
    let mut out = header_line(&header)?;
    let d = o.data();
    for r in 0..o.rows() {
        for c in 0..o.channels() {
            if c > 0 {
                out.push(',');
            }
            out.push_str(&format_f64(d[(r, c)]));
        }
        out.push('\n');
    }
    w.write_all(out.as_bytes())?;
    Ok(())
}

pub fn read_observations(r: impl Read) -> Result<(ObservationMatrix, Option<usize>)> {
    let mut lines = BufReader::new(r).lines();
    let h: MatrixHeader = read_header(&mut lines)?;
    check_kind(&h.kind, Kind::Observations)?;
    let mut data = Vec::with_capacity(h.rows * h.channels);
    let mut rows = 0;
    for (i, line) in lines.enumerate() {
        let line = line?;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != h.channels {
            return Err(Error::Format(format!("line {}: expected {} columns", i + 2, h.channels)));
        }
        for f in fields {
            data.push(parse_f64(f, i + 2)?);
        }
        rows += 1;
    }
    if rows != h.rows {
        return Err(Error::LengthMismatch {
            what: "observation header/row count",
            left: h.rows,
            right: rows,
        });
    }
    let m = ObservationMatrix::new(DMatrix::from_row_slice(rows, h.channels, &data), h.fs)?;
    Ok((m, h.subject))
}

pub fn write_features(mut w: impl Write, f: &FeatureSeries) -> Result<()> {
    let header = FeatureHeader {
        kind: Kind::Features,
        fs: f.fs,
        samples: f.len(),
    };
    let mut out = header_line(&header)?;
    for k in 0..f.len() {
        out.push_str(&format_f64(f.rr[k]));
        out.push(',');
        out.push_str(&format_f64(f.amp[k]));
        out.push_str(if f.valid[k] { ",1\n" } else { ",0\n" });
    }
    w.write_all(out.as_bytes())?;
    Ok(())
}

pub fn read_features(r: impl Read) -> Result<FeatureSeries> {
    let mut lines = BufReader::new(r).lines();
    let h: FeatureHeader = read_header(&mut lines)?;
    check_kind(&h.kind, Kind::Features)?;
    let (mut rr, mut amp, mut valid) = (Vec::new(), Vec::new(), Vec::new());
    for (i, line) in lines.enumerate() {
        let line = line?;
        let n = i + 2;
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 3 {
            return Err(Error::Format(format!("line {n}: expected rr,amp,valid")));
        }
        rr.push(parse_f64(f[0], n)?);
        amp.push(parse_f64(f[1], n)?);
        valid.push(parse_flag(f[2], n)?);
    }
    if rr.len() != h.samples {
        return Err(Error::LengthMismatch {
            what: "feature header/sample count",
            left: h.samples,
            right: rr.len(),
        });
    }
    FeatureSeries::new(rr, amp, None, valid, h.fs)
}

pub fn quantize_features(f: &FeatureSeries) -> FeatureSeries {
    FeatureSeries {
        rr: f.rr.iter().map(|&v| quantize(v)).collect(),
        amp: f.amp.iter().map(|&v| quantize(v)).collect(),
        width: None,
        valid: f.valid.clone(),
        fs: f.fs,
    }
}

pub fn save_signal(path: &Path, s: &RespiratorySignal, meta: &RecordMeta) -> Result<()> {
    write_signal(std::fs::File::create(path)?, s, meta)
}

pub fn load_signal(path: &Path) -> Result<(RespiratorySignal, RecordMeta)> {
    read_signal(std::fs::File::open(path)?)
}

pub fn save_observations(path: &Path, o: &ObservationMatrix, subject: Option<usize>) -> Result<()> {
    write_observations(std::fs::File::create(path)?, o, subject)
}

pub fn load_observations(path: &Path) -> Result<(ObservationMatrix, Option<usize>)> {
    read_observations(std::fs::File::open(path)?)
}

pub fn save_features(path: &Path, f: &FeatureSeries) -> Result<()> {
    write_features(std::fs::File::create(path)?, f)
}

pub fn load_features(path: &Path) -> Result<FeatureSeries> {
    read_features(std::fs::File::open(path)?)
}
