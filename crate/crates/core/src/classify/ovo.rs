//! One-vs-one multiclass model over standardized feature vectors.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::svm::{train_binary_svm, BinarySvm, Kernel, SvmParams};
use crate::error::{Error, Result};
use crate::model::{FeatureVector, PatternLabel};

const MAGIC: &[u8; 4] = b"RSVM";
const VERSION: u32 = 1;

/// Per-feature z-score parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: [f64; 4],
    pub sd: [f64; 4],
}

impl Standardizer {
    /// Fits on `xs`; features without spread get `sd = 1`.
    pub fn fit(xs: &[[f64; 4]]) -> Self {
        let n = xs.len().max(1) as f64;
        let mut mean = [0.0; 4];
        for x in xs {
            for k in 0..4 {
                mean[k] += x[k] / n;
            }
        }
        let mut sd = [0.0; 4];
        for x in xs {
            for k in 0..4 {
                sd[k] += (x[k] - mean[k]).powi(2);
            }
        }
        for s in &mut sd {
            *s = (*s / (n - 1.0).max(1.0)).sqrt();
            if !(*s > 0.0) || !s.is_finite() {
                *s = 1.0;
            }
        }
        Self { mean, sd }
    }

    pub fn apply(&self, x: &[f64; 4]) -> Vec<f64> {
        (0..4).map(|k| (x[k] - self.mean[k]) / self.sd[k]).collect()
    }
}

/// Binary machine voting between `pos` (f > 0) and `neg`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairMachine {
    pub pos: PatternLabel,
    pub neg: PatternLabel,
    pub svm: BinarySvm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub standardizer: Standardizer,
    pub classes: Vec<PatternLabel>,
    pub machines: Vec<PairMachine>,
}

impl SvmModel {
    /// Vote counts and summed signed decision values per class.
    pub fn scores(&self, x: &FeatureVector) -> Vec<(PatternLabel, usize, f64)> {
        let z = self.standardizer.apply(&x.to_array());
        let mut out: Vec<(PatternLabel, usize, f64)> = self.classes.iter().map(|&c| (c, 0, 0.0)).collect();
        let slot = |out: &mut Vec<(PatternLabel, usize, f64)>, c: PatternLabel| out.iter().position(|e| e.0 == c).expect("known class");
        for m in &self.machines {
            let f = m.svm.decision(&z);
            let (p, n) = (slot(&mut out, m.pos), slot(&mut out, m.neg));
            if f > 0.0 {
                out[p].1 += 1;
            } else {
                out[n].1 += 1;
            }
            out[p].2 += f;
            out[n].2 -= f;
        }
        out
    }

    /// Majority vote; ties go to the larger summed decision value, then the
    /// lower class code.
    pub fn predict(&self, x: &FeatureVector) -> PatternLabel {
        let scores = self.scores(x);
        let mut best = scores[0];
        for &s in &scores[1..] {
            let better = s.1 > best.1
                || (s.1 == best.1 && s.2 > best.2)
                || (s.1 == best.1 && s.2 == best.2 && s.0.code() < best.0.code());
            if better {
                best = s;
            }
        }
        best.0
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(MAGIC);
        put_u32(&mut b, VERSION);
        for v in self.standardizer.mean.iter().chain(&self.standardizer.sd) {
            put_f64(&mut b, *v);
        }
        put_u32(&mut b, self.classes.len() as u32);
        b.extend(self.classes.iter().map(|c| c.code()));
        put_u32(&mut b, self.machines.len() as u32);
        for m in &self.machines {
            b.push(m.pos.code());
            b.push(m.neg.code());
            match m.svm.kernel {
                Kernel::Linear => {
                    b.push(0);
                    put_f64(&mut b, 0.0);
                }
                Kernel::Rbf { gamma } => {
                    b.push(1);
                    put_f64(&mut b, gamma);
                }
            }
            put_f64(&mut b, m.svm.b);
            let w = m.svm.w.as_deref().unwrap_or(&[]);
            put_u32(&mut b, w.len() as u32);
            for v in w {
                put_f64(&mut b, *v);
            }
            put_u32(&mut b, m.svm.support.len() as u32);
            for (s, c) in m.svm.support.iter().zip(&m.svm.coef) {
                put_f64(&mut b, *c);
                put_u32(&mut b, s.len() as u32);
                for v in s {
                    put_f64(&mut b, *v);
                }
            }
        }
        b
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { b: bytes, at: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("bad model magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported model version {version}")));
        }
        let mut mean = [0.0; 4];
        let mut sd = [0.0; 4];
        for v in mean.iter_mut().chain(sd.iter_mut()) {
            *v = r.f64()?;
        }
        let nc = r.u32()? as usize;
        let classes = r.take(nc)?.iter().map(|&c| label_of(c)).collect::<Result<Vec<_>>>()?;
        let nm = r.u32()? as usize;
        let mut machines = Vec::with_capacity(nm);
        for _ in 0..nm {
            let pos = label_of(r.take(1)?[0])?;
            let neg = label_of(r.take(1)?[0])?;
            let tag = r.take(1)?[0];
            let gamma = r.f64()?;
            let kernel = match tag {
                0 => Kernel::Linear,
                1 => Kernel::Rbf { gamma },
                t => return Err(Error::Format(format!("unknown kernel tag {t}"))),
            };
            let bias = r.f64()?;
            let nw = r.u32()? as usize;
            let w: Vec<f64> = (0..nw).map(|_| r.f64()).collect::<Result<_>>()?;
            let ns = r.u32()? as usize;
            let mut support = Vec::with_capacity(ns);
            let mut coef = Vec::with_capacity(ns);
            for _ in 0..ns {
                coef.push(r.f64()?);
                let d = r.u32()? as usize;
                support.push((0..d).map(|_| r.f64()).collect::<Result<Vec<f64>>>()?);
            }
            machines.push(PairMachine {
                pos,
                neg,
                svm: BinarySvm {
                    kernel,
                    w: matches!(kernel, Kernel::Linear).then_some(w),
                    b: bias,
                    support,
                    coef,
                },
            });
        }
        if r.at != bytes.len() {
            return Err(Error::Format("trailing bytes after model".into()));
        }
        Ok(Self {
            standardizer: Standardizer { mean, sd },
            classes,
            machines,
        })
    }
}

fn put_u32(b: &mut Vec<u8>, v: u32) {
    b.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(b: &mut Vec<u8>, v: f64) {
    b.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    b: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.b.len());
        let end = end.ok_or_else(|| Error::Format("truncated model".into()))?;
        let s = &self.b[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

}

fn label_of(code: u8) -> Result<PatternLabel> {
    PatternLabel::from_code(code).ok_or_else(|| Error::Format(format!("unknown class code {code}")))
}

/// Trains all pairwise machines over the nine patterns.
pub fn train_ovo(data: &[(FeatureVector, PatternLabel)], params: &SvmParams) -> Result<SvmModel> {
    for c in PatternLabel::ALL {
        if !data.iter().any(|(_, l)| *l == c) {
            return Err(Error::MissingClass(c.to_string()));
        }
    }
    let raw: Vec<[f64; 4]> = data.iter().map(|(x, _)| x.to_array()).collect();
    let standardizer = Standardizer::fit(&raw);
    let z: Vec<Vec<f64>> = raw.iter().map(|x| standardizer.apply(x)).collect();
    let mut pairs = Vec::new();
    for (a, &pos) in PatternLabel::ALL.iter().enumerate() {
        for &neg in &PatternLabel::ALL[a + 1..] {
            pairs.push((pos, neg));
        }
    }
    let machines = pairs
        .par_iter()
        .map(|&(pos, neg)| {
            let mut x = Vec::new();
            let mut y = Vec::new();
            for (zi, (_, l)) in z.iter().zip(data) {
                if *l == pos || *l == neg {
                    x.push(zi.clone());
                    y.push(if *l == pos { 1.0 } else { -1.0 });
                }
            }
            Ok(PairMachine {
                pos,
                neg,
                svm: train_binary_svm(&x, &y, params)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SvmModel {
        standardizer,
        classes: PatternLabel::ALL.to_vec(),
        machines,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn blobs(per_class: usize, spread: f64, seed: u64) -> Vec<(FeatureVector, PatternLabel)> {
        let mut rng = crate::seed::rng(seed);
        let noise = Normal::new(0.0, spread).unwrap();
        let mut out = Vec::new();
        for (i, &l) in PatternLabel::ALL.iter().enumerate() {
            let centre = [(i % 3) as f64 * 10.0, (i / 3) as f64 * 10.0, i as f64, 1.0];
            for _ in 0..per_class {
                let mut v = centre;
                for c in &mut v {
                    *c += noise.sample(&mut rng);
                }
                out.push((FeatureVector::from_array(v), l));
            }
        }
        out
    }

    fn centre(i: usize) -> FeatureVector {
        FeatureVector::from_array([(i % 3) as f64 * 10.0, (i / 3) as f64 * 10.0, i as f64, 1.0])
    }

    #[test]
    fn separable_blobs_are_learned() {
        let data = blobs(20, 0.5, 1);
        let m = train_ovo(&data, &SvmParams::default()).unwrap();
        assert_eq!(m.machines.len(), 36);
        assert!(m.standardizer.sd.iter().all(|&s| s > 0.0));
        assert!(data.iter().all(|(x, l)| m.predict(x) == *l));
        for (i, &l) in PatternLabel::ALL.iter().enumerate() {
            assert_eq!(m.predict(&centre(i)), l);
        }
    }

    #[test]
    fn missing_class_is_rejected() {
        let data: Vec<_> = blobs(5, 0.5, 1).into_iter().filter(|(_, l)| *l != PatternLabel::Apnea).collect();
        assert!(matches!(train_ovo(&data, &SvmParams::default()), Err(Error::MissingClass(_))));
    }

    #[test]
    fn sample_order_does_not_matter() {
        let data = blobs(15, 3.0, 2);
        let mut rev = data.clone();
        rev.reverse();
        let m1 = train_ovo(&data, &SvmParams::default()).unwrap();
        let m2 = train_ovo(&rev, &SvmParams::default()).unwrap();
        let queries = blobs(10, 4.0, 9);
        for (x, _) in &queries {
            assert_eq!(m1.predict(x), m2.predict(x));
        }
    }

    #[test]
    fn feature_scale_is_absorbed() {
        let data = blobs(15, 3.0, 3);
        let scale = |x: &FeatureVector| {
            let mut a = x.to_array();
            a[1] = a[1] * 1000.0 + 7.0;
            FeatureVector::from_array(a)
        };
        let scaled: Vec<_> = data.iter().map(|(x, l)| (scale(x), *l)).collect();
        let m1 = train_ovo(&data, &SvmParams::default()).unwrap();
        let m2 = train_ovo(&scaled, &SvmParams::default()).unwrap();
        for (x, _) in &blobs(10, 4.0, 10) {
            assert_eq!(m1.predict(x), m2.predict(&scale(x)));
        }
    }

    fn fixed(w0: f64) -> BinarySvm {
        BinarySvm {
            kernel: Kernel::Linear,
            w: Some(vec![w0, 0.0, 0.0, 0.0]),
            b: 0.0,
            support: Vec::new(),
            coef: Vec::new(),
        }
    }

    #[test]
    fn condorcet_cycle_uses_decision_sums() {
        use PatternLabel::*;
        let (a, b, c) = (Bradypnea, Eupnea, Tachypnea);
        // x0 = 1: a beats b by 1, b beats c by 2, c beats a by 0.5
        let model = SvmModel {
            standardizer: Standardizer { mean: [0.0; 4], sd: [1.0; 4] },
            classes: vec![a, b, c],
            machines: vec![
                PairMachine { pos: a, neg: b, svm: fixed(1.0) },
                PairMachine { pos: b, neg: c, svm: fixed(2.0) },
                PairMachine { pos: c, neg: a, svm: fixed(0.5) },
            ],
        };
        let x = FeatureVector::from_array([1.0, 0.0, 0.0, 0.0]);
        let s = model.scores(&x);
        assert!(s.iter().all(|e| e.1 == 1));
        // sums: a = 1 - 0.5, b = -1 + 2, c = -2 + 0.5
        assert_eq!(model.predict(&x), b);
        assert_eq!(model.predict(&x), model.predict(&x));
        let y = FeatureVector::from_array([-1.0, 0.0, 0.0, 0.0]);
        // every machine flips: a = -0.5, b = -1, c = 1.5
        assert_eq!(model.predict(&y), c);
    }

    #[test]
    fn bytes_round_trip() {
        let m = train_ovo(&blobs(8, 1.0, 4), &SvmParams::default()).unwrap();
        let b = m.to_bytes();
        assert_eq!(SvmModel::from_bytes(&b).unwrap(), m);
        assert!(SvmModel::from_bytes(&b[..b.len() - 1]).is_err());
    }
}
