//! Independent reference implementations used as test oracles. Nothing here
//! calls into the crate's numerics.
#![allow(dead_code)]

use std::sync::{Arc, Mutex};

use mabo::platoon::{sample_fleet, true_platoon_optimum, FleetConfig, FuelModel, SpeedDomain};
use mabo::{Objective, SharedObjective};

pub fn se(a: f64, b: f64, sf2: f64, ell: f64) -> f64 {
    sf2 * (-(a - b) * (a - b) / (2.0 * ell * ell)).exp()
}

/// Inverse and log-determinant by Gauss-Jordan elimination with partial pivoting.
pub fn gauss_jordan(a: &[Vec<f64>]) -> (Vec<Vec<f64>>, f64) {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            r
        })
        .collect();
    let mut log_det = 0.0;
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs())).unwrap();
        m.swap(col, piv);
        let p = m[col][col];
        assert!(p != 0.0, "singular matrix");
        log_det += p.abs().ln();
        for v in m[col].iter_mut() {
            *v /= p;
        }
        for r in 0..n {
            if r != col {
                let f = m[r][col];
                if f != 0.0 {
                    let pivot_row = m[col].clone();
                    for (v, p) in m[r].iter_mut().zip(&pivot_row) {
                        *v -= f * p;
                    }
                }
            }
        }
    }
    (m.into_iter().map(|r| r[n..].to_vec()).collect(), log_det)
}

pub struct DenseGp {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub sf2: f64,
    pub ell: f64,
    /// Noise variance plus any diagonal regularization.
    pub diag: f64,
    pub offset: f64,
    pub scale: f64,
}

impl DenseGp {
    fn gram(&self) -> Vec<Vec<f64>> {
        let n = self.xs.len();
        (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| se(self.xs[i], self.xs[j], self.sf2, self.ell) + if i == j { self.diag } else { 0.0 })
                    .collect()
            })
            .collect()
    }

    fn targets(&self) -> Vec<f64> {
        self.ys.iter().map(|y| (y - self.offset) / self.scale).collect()
    }

    /// `K⁻¹ b` from the explicit inverse, plus one step of iterative
    /// refinement; without it the inverse alone loses ~1e-8 on
    /// well-posed 50-point problems.
    fn solve(&self, k: &[Vec<f64>], kinv: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
        let mul = |m: &[Vec<f64>], v: &[f64]| -> Vec<f64> {
            m.iter().map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum()).collect()
        };
        let mut x = mul(kinv, b);
        let kx = mul(k, &x);
        let r: Vec<f64> = b.iter().zip(&kx).map(|(b, kx)| b - kx).collect();
        for (xi, d) in x.iter_mut().zip(mul(kinv, &r)) {
            *xi += d;
        }
        x
    }

    /// Mean and latent variance from `K⁻¹` formed explicitly.
    pub fn predict(&self, x: f64) -> (f64, f64) {
        let k = self.gram();
        let (kinv, _) = gauss_jordan(&k);
        let ks: Vec<f64> = self.xs.iter().map(|xi| se(*xi, x, self.sf2, self.ell)).collect();
        let alpha = self.solve(&k, &kinv, &self.targets());
        let w = self.solve(&k, &kinv, &ks);
        let mean: f64 = ks.iter().zip(&alpha).map(|(a, b)| a * b).sum();
        let quad: f64 = ks.iter().zip(&w).map(|(a, b)| a * b).sum();
        (self.offset + self.scale * mean, self.scale * self.scale * (self.sf2 - quad))
    }

    /// `log N(y; 0, K)` of the transformed targets.
    pub fn log_pdf(&self) -> f64 {
        let (kinv, log_det) = gauss_jordan(&self.gram());
        let y = self.targets();
        let n = y.len();
        let mut q = 0.0;
        for i in 0..n {
            for j in 0..n {
                q += y[i] * kinv[i][j] * y[j];
            }
        }
        -0.5 * q - 0.5 * log_det - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln()
    }
}

/// Plain Cholesky, used to draw correlated samples.
pub fn cholesky(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                l[i][j] = (a[i][i] - s).sqrt();
            } else {
                l[i][j] = (a[i][j] - s) / l[j][j];
            }
        }
    }
    l
}

pub const WIDTH: f64 = 50.0;

pub struct Fleet {
    pub models: Vec<FuelModel>,
    pub x_star: f64,
}

impl Fleet {
    pub fn new(seed: u64) -> Self {
        let models = sample_fleet(&FleetConfig::benchmark(seed)).unwrap();
        let (x_star, _) = true_platoon_optimum(&models, &SpeedDomain::DEFAULT).unwrap();
        Self { models, x_star }
    }

    pub fn oracles(&self) -> Vec<SharedObjective> {
        self.models.iter().map(|m| Arc::new(*m) as SharedObjective).collect()
    }
}

pub fn quad(center: f64) -> SharedObjective {
    Arc::new(move |x: &[f64]| (x[0] - center).powi(2))
}

pub type ObservationLog = Arc<Mutex<Vec<(Vec<f64>, f64)>>>;

/// Oracle wrapper that records every query and its answer.
pub struct Recorder {
    pub inner: SharedObjective,
    pub seen: ObservationLog,
}

impl Objective for Recorder {
    fn evaluate(&self, x: &[f64]) -> f64 {
        let y = self.inner.evaluate(x);
        self.seen.lock().unwrap().push((x.to_vec(), y));
        y
    }
}

/// Wrap each oracle in a [`Recorder`], returning the wrapped oracles and their logs.
pub fn recorded(oracles: Vec<SharedObjective>) -> (Vec<SharedObjective>, Vec<ObservationLog>) {
    let logs: Vec<ObservationLog> = oracles.iter().map(|_| ObservationLog::default()).collect();
    let wrapped = oracles
        .into_iter()
        .zip(&logs)
        .map(|(inner, seen)| Arc::new(Recorder { inner, seen: seen.clone() }) as SharedObjective)
        .collect();
    (wrapped, logs)
}
