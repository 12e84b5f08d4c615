//! Binary soft-margin SVM trained by SMO with second-order working-set
//! selection.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const TAU: f64 = 1e-12;

/// Kernel choice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Kernel {
    #[default]
    Linear,
    Rbf {
        gamma: f64,
    },
}

impl Kernel {
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match *self {
            Kernel::Linear => a.iter().zip(b).map(|(x, y)| x * y).sum(),
            Kernel::Rbf { gamma } => {
                let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                (-gamma * d).exp()
            }
        }
    }
}

/// Solver settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvmParams {
    pub c: f64,
    pub kernel: Kernel,
    /// Target relative duality gap.
    pub gap_tol: f64,
    pub max_iter: usize,
}

impl Default for SvmParams {
    fn default() -> Self {
        Self {
            c: 1.0,
            kernel: Kernel::Linear,
            gap_tol: 1e-6,
            max_iter: 10_000_000,
        }
    }
}

/// Trained binary decision function `f(x) = Σ coef_i K(sv_i, x) + b`;
/// linear machines also carry the explicit weight vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinarySvm {
    pub kernel: Kernel,
    pub w: Option<Vec<f64>>,
    pub b: f64,
    pub support: Vec<Vec<f64>>,
    pub coef: Vec<f64>,
}

impl BinarySvm {
    pub fn decision(&self, x: &[f64]) -> f64 {
        match &self.w {
            Some(w) => w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + self.b,
            None => {
                self.support
                    .iter()
                    .zip(&self.coef)
                    .map(|(s, c)| c * self.kernel.eval(s, x))
                    .sum::<f64>()
                    + self.b
            }
        }
    }
}

/// Convergence diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveInfo {
    pub iterations: usize,
    pub primal: f64,
    pub dual: f64,
}

impl SolveInfo {
    pub fn relative_gap(&self) -> f64 {
        (self.primal - self.dual) / self.primal.abs().max(1.0)
    }
}

struct Smo<'a> {
    x: &'a [Vec<f64>],
    y: &'a [f64],
    kernel: Kernel,
    c: f64,
    qd: Vec<f64>,
    alpha: Vec<f64>,
    g: Vec<f64>,
}

impl Smo<'_> {
    fn column(&self, i: usize, out: &mut [f64]) {
        for (t, o) in out.iter_mut().enumerate() {
            *o = self.y[i] * self.y[t] * self.kernel.eval(&self.x[i], &self.x[t]);
        }
    }

    fn upper(&self, t: usize) -> bool {
        self.alpha[t] >= self.c
    }

    fn lower(&self, t: usize) -> bool {
        self.alpha[t] <= 0.0
    }

    /// Second-order working set; `None` when the KKT gap is below `eps`.
    fn select(&self, eps: f64, qi: &mut [f64]) -> Option<(usize, usize)> {
        let n = self.y.len();
        let mut gmax = f64::NEG_INFINITY;
        let mut imax = None;
        for t in 0..n {
            if self.y[t] > 0.0 {
                if !self.upper(t) && -self.g[t] >= gmax {
                    gmax = -self.g[t];
                    imax = Some(t);
                }
            } else if !self.lower(t) && self.g[t] >= gmax {
                gmax = self.g[t];
                imax = Some(t);
            }
        }
        let i = imax?;
        self.column(i, qi);
        let mut gmax2 = f64::NEG_INFINITY;
        let mut jmin = None;
        let mut best = f64::INFINITY;
        for t in 0..n {
            let (grad_diff, quad) = if self.y[t] > 0.0 {
                if self.lower(t) {
                    continue;
                }
                gmax2 = gmax2.max(self.g[t]);
                (gmax + self.g[t], self.qd[i] + self.qd[t] - 2.0 * self.y[i] * qi[t])
            } else {
                if self.upper(t) {
                    continue;
                }
                gmax2 = gmax2.max(-self.g[t]);
                (gmax - self.g[t], self.qd[i] + self.qd[t] + 2.0 * self.y[i] * qi[t])
            };
            if grad_diff > 0.0 {
                let obj = -(grad_diff * grad_diff) / if quad > 0.0 { quad } else { TAU };
                if obj <= best {
                    best = obj;
                    jmin = Some(t);
                }
            }
        }
        if gmax + gmax2 < eps {
            return None;
        }
        jmin.map(|j| (i, j))
    }

    fn update(&mut self, i: usize, j: usize, qi: &[f64], qj: &mut [f64]) {
        self.column(j, qj);
        let c = self.c;
        let (oi, oj) = (self.alpha[i], self.alpha[j]);
        let (mut ai, mut aj) = (oi, oj);
        if self.y[i] != self.y[j] {
            let quad = (self.qd[i] + self.qd[j] + 2.0 * qi[j]).max(TAU);
            let delta = (-self.g[i] - self.g[j]) / quad;
            let diff = ai - aj;
            ai += delta;
            aj += delta;
            if diff > 0.0 {
                if aj < 0.0 {
                    aj = 0.0;
                    ai = diff;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = -diff;
            }
            if diff > 0.0 {
                if ai > c {
                    ai = c;
                    aj = c - diff;
                }
            } else if aj > c {
                aj = c;
                ai = c + diff;
            }
        } else {
            let quad = (self.qd[i] + self.qd[j] - 2.0 * qi[j]).max(TAU);
            let delta = (self.g[i] - self.g[j]) / quad;
            let sum = ai + aj;
            ai -= delta;
            aj += delta;
            if sum > c {
                if ai > c {
                    ai = c;
                    aj = sum - c;
                }
            } else if aj < 0.0 {
                aj = 0.0;
                ai = sum;
            }
            if sum > c {
                if aj > c {
                    aj = c;
                    ai = sum - c;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = sum;
            }
        }
        self.alpha[i] = ai;
        self.alpha[j] = aj;
        let (di, dj) = (ai - oi, aj - oj);
        for t in 0..self.g.len() {
            self.g[t] += qi[t] * di + qj[t] * dj;
        }
    }

    fn run(&mut self, eps: f64, max_iter: usize, iters: &mut usize) {
        let n = self.y.len();
        let mut qi = vec![0.0; n];
        let mut qj = vec![0.0; n];
        while *iters < max_iter {
            let Some((i, j)) = self.select(eps, &mut qi) else {
                return;
            };
            self.update(i, j, &qi, &mut qj);
            *iters += 1;
        }
    }

    /// Offset `b` (negative of libsvm's rho).
    fn bias(&self) -> f64 {
        let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut sum, mut free) = (0.0, 0usize);
        for t in 0..self.y.len() {
            let yg = self.y[t] * self.g[t];
            if self.upper(t) {
                if self.y[t] < 0.0 {
                    ub = ub.min(yg);
                } else {
                    lb = lb.max(yg);
                }
            } else if self.lower(t) {
                if self.y[t] > 0.0 {
                    ub = ub.min(yg);
                } else {
                    lb = lb.max(yg);
                }
            } else {
                free += 1;
                sum += yg;
            }
        }
        let rho = if free > 0 { sum / free as f64 } else { 0.5 * (ub + lb) };
        -rho
    }

    fn objectives(&self, b: f64) -> (f64, f64) {
        // αᵀQα = Σ α_i (G_i + 1); y_i f(x_i) = G_i + 1 + y_i b
        let quad: f64 = self.alpha.iter().zip(&self.g).map(|(a, g)| a * (g + 1.0)).sum();
        let sum_alpha: f64 = self.alpha.iter().sum();
        let hinge: f64 = (0..self.y.len())
            .map(|t| (1.0 - (self.g[t] + 1.0 + self.y[t] * b)).max(0.0))
            .sum();
        (0.5 * quad + self.c * hinge, sum_alpha - 0.5 * quad)
    }
}

/// Trains on `x` with labels `y ∈ {−1, +1}`. The KKT tolerance is
/// tightened until the relative duality gap falls below `gap_tol`.
pub fn train_binary_svm_with_info(x: &[Vec<f64>], y: &[f64], params: &SvmParams) -> Result<(BinarySvm, SolveInfo)> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            what: "svm samples/labels",
            left: x.len(),
            right: y.len(),
        });
    }
    if y.iter().any(|&v| v != 1.0 && v != -1.0) {
        return Err(Error::InvalidArgument("labels must be +1 or -1".into()));
    }
    if !y.iter().any(|&v| v > 0.0) || !y.iter().any(|&v| v < 0.0) {
        return Err(Error::SingleClass);
    }
    if !(params.c > 0.0) {
        return Err(Error::InvalidArgument(format!("C must be positive, got {}", params.c)));
    }
    let n = y.len();
    let qd: Vec<f64> = x.iter().map(|v| params.kernel.eval(v, v)).collect();
    let mut smo = Smo {
        x,
        y,
        kernel: params.kernel,
        c: params.c,
        qd,
        alpha: vec![0.0; n],
        g: vec![-1.0; n],
    };
    let mut eps = 1e-3;
    let mut iters = 0;
    let (b, primal, dual) = loop {
        smo.run(eps, params.max_iter, &mut iters);
        let b = smo.bias();
        let (p, d) = smo.objectives(b);
        let gap = (p - d) / p.abs().max(1.0);
        if gap < params.gap_tol || eps < 1e-12 || iters >= params.max_iter {
            if gap >= params.gap_tol {
                log::debug!("svm stopped with relative gap {gap:.2e} after {iters} iterations");
            }
            break (b, p, d);
        }
        eps *= 0.1;
    };

    let mut support = Vec::new();
    let mut coef = Vec::new();
    for t in 0..n {
        if smo.alpha[t] > 0.0 {
            support.push(x[t].clone());
            coef.push(smo.alpha[t] * y[t]);
        }
    }
    let w = match params.kernel {
        Kernel::Linear => {
            let d = x.first().map_or(0, Vec::len);
            let mut w = vec![0.0; d];
            for (s, c) in support.iter().zip(&coef) {
                for (wk, sk) in w.iter_mut().zip(s) {
                    *wk += c * sk;
                }
            }
            Some(w)
        }
        Kernel::Rbf { .. } => None,
    };
    let (support, coef) = if w.is_some() { (Vec::new(), Vec::new()) } else { (support, coef) };
    Ok((
        BinarySvm {
            kernel: params.kernel,
            w,
            b,
            support,
            coef,
        },
        SolveInfo {
            iterations: iters,
            primal,
            dual,
        },
    ))
}

pub fn train_binary_svm(x: &[Vec<f64>], y: &[f64], params: &SvmParams) -> Result<BinarySvm> {
    Ok(train_binary_svm_with_info(x, y, params)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn accuracy(m: &BinarySvm, x: &[Vec<f64>], y: &[f64]) -> f64 {
        let ok = x.iter().zip(y).filter(|(v, &l)| m.decision(v).signum() == l).count();
        ok as f64 / y.len() as f64
    }

    #[test]
    fn symmetric_clusters() {
        let x: Vec<Vec<f64>> = vec![vec![-1.0, 0.1], vec![-1.2, -0.3], vec![1.0, 0.2], vec![1.1, -0.1], vec![-1.0, 0.0], vec![1.0, 0.0]];
        let y = vec![-1.0, -1.0, 1.0, 1.0, -1.0, 1.0];
        let (m, info) = train_binary_svm_with_info(&x, &y, &SvmParams { c: 100.0, ..Default::default() }).unwrap();
        let w = m.w.as_ref().unwrap();
        assert!(w[1].abs() < 1e-4 * w[0].abs());
        // the margin midplane is x = 0
        assert!((m.b / w[0]).abs() < 1e-4);
        assert_eq!(accuracy(&m, &x, &y), 1.0);
        assert!(info.relative_gap() < 1e-6);
    }

    #[test]
    fn two_point_maximum_margin() {
        // analytic solution: w = 2 (b - a) / |b - a|², b = -(w·(a + b)) / 2
        let a = vec![0.5, -1.0];
        let p = vec![2.5, 0.0];
        let (m, _) = train_binary_svm_with_info(&[a.clone(), p.clone()], &[-1.0, 1.0], &SvmParams { c: 1e3, ..Default::default() }).unwrap();
        let d = [p[0] - a[0], p[1] - a[1]];
        let n2 = d[0] * d[0] + d[1] * d[1];
        let w = [2.0 * d[0] / n2, 2.0 * d[1] / n2];
        let b = -(w[0] * (a[0] + p[0]) + w[1] * (a[1] + p[1])) / 2.0;
        let got = m.w.as_ref().unwrap();
        assert!((got[0] - w[0]).abs() < 1e-4 && (got[1] - w[1]).abs() < 1e-4);
        assert!((m.b - b).abs() < 1e-4);
    }

    #[test]
    fn xor_is_not_linearly_separable() {
        let x = vec![vec![0.0, 0.0], vec![1.0, 1.0], vec![0.0, 1.0], vec![1.0, 0.0]];
        let y = vec![1.0, 1.0, -1.0, -1.0];
        let m = train_binary_svm(&x, &y, &SvmParams { c: 10.0, ..Default::default() }).unwrap();
        assert!(accuracy(&m, &x, &y) <= 0.75);
        let rbf = SvmParams {
            c: 10.0,
            kernel: Kernel::Rbf { gamma: 2.0 },
            ..Default::default()
        };
        let m = train_binary_svm(&x, &y, &rbf).unwrap();
        assert_eq!(accuracy(&m, &x, &y), 1.0);
    }

    #[test]
    fn duplicated_points_give_same_plane() {
        let x: Vec<Vec<f64>> = vec![vec![-2.0, 1.0], vec![-1.5, -0.5], vec![-1.0, 0.3], vec![1.0, 0.5], vec![2.0, -1.0], vec![1.3, 0.0]];
        let y = vec![-1.0, -1.0, -1.0, 1.0, 1.0, 1.0];
        let params = SvmParams { c: 10.0, ..Default::default() };
        let m1 = train_binary_svm(&x, &y, &params).unwrap();
        let x2: Vec<Vec<f64>> = x.iter().chain(&x).cloned().collect();
        let y2: Vec<f64> = y.iter().chain(&y).copied().collect();
        let m2 = train_binary_svm(&x2, &y2, &params).unwrap();
        for (a, b) in m1.w.unwrap().iter().zip(m2.w.unwrap()) {
            assert!((a - b).abs() < 1e-6);
        }
        assert!((m1.b - m2.b).abs() < 1e-6);
    }

    #[test]
    fn single_class_is_rejected() {
        assert!(matches!(
            train_binary_svm(&[vec![0.0], vec![1.0]], &[1.0, 1.0], &SvmParams::default()),
            Err(Error::SingleClass)
        ));
    }

    #[test]
    fn overlapping_classes_reach_gap_target() {
        let mut rng = crate::seed::rng(3);
        use rand_distr::{Distribution, StandardNormal};
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..400 {
            let l = if i % 2 == 0 { 1.0 } else { -1.0 };
            let v: Vec<f64> = (0..4).map(|_| StandardNormal.sample(&mut rng)).collect::<Vec<f64>>();
            x.push(v.iter().enumerate().map(|(k, e)| e + if k == 0 { 0.8 * l } else { 0.0 }).collect());
            y.push(l);
        }
        let (_, info) = train_binary_svm_with_info(&x, &y, &SvmParams::default()).unwrap();
        assert!(info.relative_gap() < 1e-6, "{:?}", info);
    }
}
