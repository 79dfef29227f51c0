//! Gaussian-process regression with a squared-exponential (ARD) kernel.
//!
//! Targets are standardized before conditioning by default: the prior mean
//! is the empirical mean of the training targets and the kernel acts on
//! targets divided by their standard deviation. Predictions are mapped back
//! to the original cost scale.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::BoxDomain;
use crate::error::{check_dims, Error, Result};
use crate::search::{latin_hypercube, pattern_search, Minimum};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Relative jitter (to the mean kernel diagonal) tried first.
pub const JITTER_START: f64 = 1e-10;
/// Largest relative jitter tried before giving up.
pub const JITTER_MAX: f64 = 1e-4;
/// Negative predictive variances down to this value are round-off.
pub const VARIANCE_CLAMP: f64 = 1e-10;

/// Observations owned by one agent. Append-only, every input inside `domain`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    domain: BoxDomain,
    xs: Vec<Vec<f64>>,
    ys: Vec<f64>,
}

impl Dataset {
    pub fn new(domain: BoxDomain) -> Self {
        Self { domain, xs: Vec::new(), ys: Vec::new() }
    }

    pub fn push(&mut self, x: Vec<f64>, y: f64) -> Result<()> {
        check_dims("dataset input", self.domain.dim(), x.len())?;
        if !self.domain.contains(&x) {
            return Err(Error::invalid(format!("observation input {x:?} lies outside the domain")));
        }
        if !y.is_finite() {
            return Err(Error::numerical(format!("non-finite observation {y} at {x:?}")));
        }
        self.xs.push(x);
        self.ys.push(y);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.ys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ys.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn domain(&self) -> &BoxDomain {
        &self.domain
    }

    pub fn xs(&self) -> &[Vec<f64>] {
        &self.xs
    }

    pub fn ys(&self) -> &[f64] {
        &self.ys
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], f64)> {
        self.xs.iter().map(Vec::as_slice).zip(self.ys.iter().copied())
    }

    /// Observation with the smallest cost.
    pub fn best(&self) -> Option<(&[f64], f64)> {
        self.iter().min_by(|a, b| a.1.total_cmp(&b.1))
    }

    pub fn last(&self) -> Option<(&[f64], f64)> {
        self.xs.last().map(|x| (x.as_slice(), *self.ys.last().unwrap()))
    }

    /// Roll back to the first `len` observations. Used only to undo a failed round.
    pub(crate) fn truncate(&mut self, len: usize) {
        self.xs.truncate(len);
        self.ys.truncate(len);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub signal_variance: f64,
    pub lengthscales: Vec<f64>,
    pub noise_variance: f64,
}

impl KernelParams {
    pub fn new(signal_variance: f64, lengthscales: Vec<f64>, noise_variance: f64) -> Result<Self> {
        let p = Self { signal_variance, lengthscales, noise_variance };
        p.validate()?;
        Ok(p)
    }

    pub fn isotropic(signal_variance: f64, lengthscale: f64, noise_variance: f64, dim: usize) -> Result<Self> {
        Self::new(signal_variance, vec![lengthscale; dim], noise_variance)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.signal_variance > 0.0 && self.signal_variance.is_finite()) {
            return Err(Error::invalid(format!("signal_variance must be > 0, got {}", self.signal_variance)));
        }
        if self.lengthscales.is_empty() {
            return Err(Error::invalid("lengthscales must not be empty"));
        }
        if let Some(l) = self.lengthscales.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
            return Err(Error::invalid(format!("lengthscales must be > 0, got {l}")));
        }
        if !(self.noise_variance >= 0.0 && self.noise_variance.is_finite()) {
            return Err(Error::invalid(format!("noise_variance must be >= 0, got {}", self.noise_variance)));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lengthscales.len()
    }
}

/// `σ_f² · exp(−½ Σ_d ((x_d − x2_d)/ℓ_d)²)`
pub fn se_kernel(x: &[f64], x2: &[f64], params: &KernelParams) -> Result<f64> {
    check_dims("se_kernel first argument", params.dim(), x.len())?;
    check_dims("se_kernel second argument", params.dim(), x2.len())?;
    Ok(se_unchecked(x, x2, params))
}

fn se_unchecked(x: &[f64], x2: &[f64], params: &KernelParams) -> f64 {
    let r2: f64 = x
        .iter()
        .zip(x2)
        .zip(&params.lengthscales)
        .map(|((a, b), l)| ((a - b) / l).powi(2))
        .sum();
    params.signal_variance * (-0.5 * r2).exp()
}

/// Gram matrix `K` (without noise or jitter).
pub fn kernel_matrix(xs: &[Vec<f64>], params: &KernelParams) -> DMatrix<f64> {
    let n = xs.len();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = se_unchecked(&xs[i], &xs[j], params);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpConfig {
    /// Subtract the target mean and divide by the target standard deviation.
    pub standardize: bool,
}

impl Default for GpConfig {
    fn default() -> Self {
        Self { standardize: true }
    }
}

/// Immutable fitted surrogate.
#[derive(Debug, Clone)]
pub struct GpPosterior {
    params: KernelParams,
    training: Dataset,
    /// Lower factor of `K + σ_n² I + jitter I`.
    chol: DMatrix<f64>,
    alpha: DVector<f64>,
    jitter: f64,
    y_offset: f64,
    y_scale: f64,
}

struct Factorized {
    chol: DMatrix<f64>,
    alpha: DVector<f64>,
    jitter: f64,
    y_offset: f64,
    y_scale: f64,
    targets: DVector<f64>,
}

fn factorize(data: &Dataset, params: &KernelParams, config: &GpConfig) -> Result<Factorized> {
    if data.is_empty() {
        return Err(Error::invalid("cannot fit a GP to an empty dataset"));
    }
    params.validate()?;
    check_dims("kernel lengthscales", data.dim(), params.dim())?;

    let n = data.len();
    let (y_offset, y_scale) = if config.standardize {
        let mean = data.ys().iter().sum::<f64>() / n as f64;
        let var = data.ys().iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n as f64;
        let sd = var.sqrt();
        if n > 1 && sd > 1e-12 * mean.abs().max(1.0) {
            (mean, sd)
        } else {
            (mean, 1.0)
        }
    } else {
        (0.0, 1.0)
    };
    let targets = DVector::from_iterator(n, data.ys().iter().map(|y| (y - y_offset) / y_scale));

    let mut base = kernel_matrix(data.xs(), params);
    let mean_diag = base.diagonal().mean();
    for i in 0..n {
        base[(i, i)] += params.noise_variance;
    }

    let mut rel = JITTER_START;
    loop {
        let jitter = rel * mean_diag;
        let mut k = base.clone();
        for i in 0..n {
            k[(i, i)] += jitter;
        }
        if let Some(chol) = k.cholesky() {
            let alpha = chol.solve(&targets);
            return Ok(Factorized { chol: chol.unpack(), alpha, jitter, y_offset, y_scale, targets });
        }
        if rel >= JITTER_MAX * (1.0 - 1e-12) {
            return Err(Error::numerical(format!(
                "Cholesky factorization failed with jitter up to {jitter:e} (n = {n})"
            )));
        }
        rel *= 10.0;
    }
}

/// Condition a GP on `data` with standardized targets.
pub fn fit(data: &Dataset, params: &KernelParams) -> Result<GpPosterior> {
    fit_with(data, params, &GpConfig::default())
}

pub fn fit_with(data: &Dataset, params: &KernelParams, config: &GpConfig) -> Result<GpPosterior> {
    let f = factorize(data, params, config)?;
    Ok(GpPosterior {
        params: params.clone(),
        training: data.clone(),
        chol: f.chol,
        alpha: f.alpha,
        jitter: f.jitter,
        y_offset: f.y_offset,
        y_scale: f.y_scale,
    })
}

impl GpPosterior {
    /// Predictive mean and latent variance at `x`.
    pub fn predict(&self, x: &[f64]) -> Result<(f64, f64)> {
        check_dims("predict query", self.params.dim(), x.len())?;
        let n = self.training.len();
        let kstar = DVector::from_iterator(
            n,
            self.training.xs().iter().map(|xi| se_unchecked(xi, x, &self.params)),
        );
        let mean_std = kstar.dot(&self.alpha);
        let v = self
            .chol
            .solve_lower_triangular(&kstar)
            .ok_or_else(|| Error::numerical("singular Cholesky factor"))?;
        let mut var_std = self.params.signal_variance - v.norm_squared();
        if var_std < 0.0 {
            if var_std < -VARIANCE_CLAMP {
                return Err(Error::numerical(format!(
                    "predictive variance {var_std:e} at {x:?} is below the round-off clamp"
                )));
            }
            var_std = 0.0;
        }
        Ok((
            self.y_offset + self.y_scale * mean_std,
            self.y_scale * self.y_scale * var_std,
        ))
    }

    pub fn params(&self) -> &KernelParams {
        &self.params
    }

    pub fn training(&self) -> &Dataset {
        &self.training
    }

    /// Lower Cholesky factor of the regularized (standardized-scale) kernel matrix.
    pub fn chol(&self) -> &DMatrix<f64> {
        &self.chol
    }

    /// Absolute jitter that was added to the diagonal.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// `(offset, scale)` applied to the targets before conditioning.
    pub fn standardization(&self) -> (f64, f64) {
        (self.y_offset, self.y_scale)
    }
}

/// `−½ yᵀα − Σ log L_ii − (n/2) log 2π` for the (standardized) targets.
pub fn log_marginal_likelihood(data: &Dataset, params: &KernelParams) -> Result<f64> {
    log_marginal_likelihood_with(data, params, &GpConfig::default())
}

pub fn log_marginal_likelihood_with(data: &Dataset, params: &KernelParams, config: &GpConfig) -> Result<f64> {
    let f = factorize(data, params, config)?;
    let n = data.len() as f64;
    let log_det_half: f64 = f.chol.diagonal().iter().map(|d| d.ln()).sum();
    Ok(-0.5 * f.targets.dot(&f.alpha) - log_det_half - 0.5 * n * LN_2PI)
}

/// Search box for ML-II. Every bound must be strictly positive because the
/// search runs in log space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperBounds {
    pub signal_variance: (f64, f64),
    pub lengthscales: Vec<(f64, f64)>,
    pub noise_variance: (f64, f64),
}

impl HyperBounds {
    /// Defaults scaled to the domain: lengthscales in `[0.01, 10]` domain widths.
    pub fn for_domain(domain: &BoxDomain) -> Self {
        Self {
            signal_variance: (1e-2, 1e3),
            lengthscales: (0..domain.dim())
                .map(|d| (1e-2 * domain.width(d), 10.0 * domain.width(d)))
                .collect(),
            noise_variance: (1e-6, 1e-1),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lengthscales.is_empty() {
            return Err(Error::invalid("hyperparameter bounds: no lengthscale bounds"));
        }
        let named = std::iter::once(("signal_variance", self.signal_variance))
            .chain(self.lengthscales.iter().map(|b| ("lengthscale", *b)))
            .chain(std::iter::once(("noise_variance", self.noise_variance)));
        for (name, (lo, hi)) in named {
            if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
                return Err(Error::invalid(format!(
                    "hyperparameter bounds: {name} interval [{lo}, {hi}] is empty or not strictly positive"
                )));
            }
        }
        Ok(())
    }

    fn log_box(&self) -> Result<BoxDomain> {
        let all: Vec<(f64, f64)> = std::iter::once(self.signal_variance)
            .chain(self.lengthscales.iter().copied())
            .chain(std::iter::once(self.noise_variance))
            .collect();
        BoxDomain::new(
            all.iter().map(|b| b.0.ln()).collect(),
            all.iter().map(|b| b.1.ln()).collect(),
        )
    }
}

fn params_from_log(theta: &[f64]) -> KernelParams {
    let d = theta.len() - 2;
    KernelParams {
        signal_variance: theta[0].exp(),
        lengthscales: theta[1..=d].iter().map(|t| t.exp()).collect(),
        noise_variance: theta[d + 1].exp(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HyperSearch {
    pub random_starts: usize,
    pub max_evals_per_start: usize,
    /// Pattern-search resolution in natural-log units.
    pub log_tol: f64,
}

impl Default for HyperSearch {
    fn default() -> Self {
        Self { random_starts: 5, max_evals_per_start: 300, log_tol: 1e-3 }
    }
}

/// ML-II by multi-start bounded pattern search in log space.
pub fn optimize_hyperparameters(data: &Dataset, bounds: &HyperBounds, seed: u64) -> Result<KernelParams> {
    optimize_hyperparameters_with(data, bounds, seed, &GpConfig::default(), &HyperSearch::default())
}

pub fn optimize_hyperparameters_with(
    data: &Dataset,
    bounds: &HyperBounds,
    seed: u64,
    config: &GpConfig,
    search: &HyperSearch,
) -> Result<KernelParams> {
    bounds.validate()?;
    check_dims("lengthscale bounds", data.dim(), bounds.lengthscales.len())?;
    if data.len() < 2 {
        return Err(Error::invalid("hyperparameter optimization needs at least 2 observations"));
    }
    let log_box = bounds.log_box()?;

    // Infeasible points are mapped to a huge finite value so the search can step away.
    let mut objective = |theta: &[f64]| -> Result<f64> {
        Ok(match log_marginal_likelihood_with(data, &params_from_log(theta), config) {
            Ok(v) if v.is_finite() => -v,
            _ => f64::MAX / 4.0,
        })
    };

    let mut starts = Vec::with_capacity(search.random_starts + 1);
    // data-informed start: unit signal, a quarter of the domain, smallest noise
    let mut heuristic = vec![0.0];
    heuristic.extend((0..data.dim()).map(|d| (0.25 * data.domain().width(d)).ln()));
    heuristic.push(bounds.noise_variance.0.ln());
    starts.push(log_box.clip(&heuristic));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    starts.extend(latin_hypercube(&log_box, search.random_starts, &mut rng));

    let steps: Vec<f64> = (0..log_box.dim()).map(|d| 0.25 * log_box.width(d).max(1e-12)).collect();
    let min_steps = vec![search.log_tol; log_box.dim()];

    let mut best: Option<Minimum> = None;
    for start in starts {
        let value = objective(&start)?;
        let local = pattern_search(
            &mut objective,
            Minimum { x: start, value },
            &log_box,
            &steps,
            &min_steps,
            search.max_evals_per_start,
        )?;
        if best.as_ref().is_none_or(|b| local.value < b.value) {
            best = Some(local);
        }
    }
    let best = best.expect("at least one start");
    if best.value >= f64::MAX / 4.0 {
        return Err(Error::numerical("no hyperparameter start produced a factorizable kernel"));
    }
    // exp(ln(x)) can leave the box by an ulp
    let mut params = params_from_log(&best.x);
    params.signal_variance = params.signal_variance.clamp(bounds.signal_variance.0, bounds.signal_variance.1);
    for (l, (lo, hi)) in params.lengthscales.iter_mut().zip(&bounds.lengthscales) {
        *l = l.clamp(*lo, *hi);
    }
    params.noise_variance = params.noise_variance.clamp(bounds.noise_variance.0, bounds.noise_variance.1);
    Ok(params)
}
