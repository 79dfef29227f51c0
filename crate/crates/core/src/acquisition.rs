//! Acquisition functions in minimization convention, the consensus penalty
//! `δ(x) = λᵀx + (ρ/2)‖x − x₀‖²`, and the minimizer of their sum.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::domain::BoxDomain;
use crate::error::{check_dims, Error, Result};
use crate::gp::GpPosterior;
use crate::search::{minimize_box, Minimum, SearchSettings};

pub const DEFAULT_BETA: f64 = 4.0;
pub const DEFAULT_XI: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AcquisitionKind {
    /// Lower confidence bound `μ − √β σ`.
    Lcb,
    /// Negated expected improvement.
    Ei,
    /// Negated probability of improvement.
    Pi,
    /// Posterior mean only.
    GreedyMean,
}

impl AcquisitionKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lcb" => Some(Self::Lcb),
            "ei" => Some(Self::Ei),
            "pi" => Some(Self::Pi),
            "greedy" | "greedy_mean" | "mean" => Some(Self::GreedyMean),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Lcb => "lcb",
            Self::Ei => "ei",
            Self::Pi => "pi",
            Self::GreedyMean => "greedy_mean",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionSpec {
    pub kind: AcquisitionKind,
    pub beta: f64,
    pub xi: f64,
}

impl AcquisitionSpec {
    pub fn new(kind: AcquisitionKind, beta: f64, xi: f64) -> Result<Self> {
        let s = Self { kind, beta, xi };
        s.validate()?;
        Ok(s)
    }

    pub fn lcb(beta: f64) -> Self {
        Self { kind: AcquisitionKind::Lcb, beta, xi: DEFAULT_XI }
    }

    pub fn ei(xi: f64) -> Self {
        Self { kind: AcquisitionKind::Ei, beta: DEFAULT_BETA, xi }
    }

    pub fn pi(xi: f64) -> Self {
        Self { kind: AcquisitionKind::Pi, beta: DEFAULT_BETA, xi }
    }

    pub fn greedy_mean() -> Self {
        Self { kind: AcquisitionKind::GreedyMean, beta: DEFAULT_BETA, xi: DEFAULT_XI }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == AcquisitionKind::Lcb && !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::invalid(format!("LCB beta must be > 0, got {}", self.beta)));
        }
        if !(self.xi >= 0.0 && self.xi.is_finite()) {
            return Err(Error::invalid(format!("xi must be >= 0, got {}", self.xi)));
        }
        Ok(())
    }
}

pub(crate) fn std_normal_cdf(z: f64) -> f64 {
    if z == f64::INFINITY {
        1.0
    } else if z == f64::NEG_INFINITY {
        0.0
    } else {
        0.5 * erfc(-z * FRAC_1_SQRT_2)
    }
}

pub(crate) fn std_normal_pdf(z: f64) -> f64 {
    if z.is_infinite() {
        0.0
    } else {
        (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
    }
}

/// Acquisition value at a point with posterior `(mean, std)`. Smaller is better.
/// `f_best` is only read by EI and PI.
pub fn evaluate_acquisition(spec: &AcquisitionSpec, mean: f64, std: f64, f_best: f64) -> Result<f64> {
    if std.is_nan() || std < 0.0 {
        return Err(Error::invalid(format!("posterior std must be >= 0, got {std}")));
    }
    match spec.kind {
        AcquisitionKind::Lcb => Ok(mean - spec.beta.sqrt() * std),
        AcquisitionKind::GreedyMean => Ok(mean),
        AcquisitionKind::Ei | AcquisitionKind::Pi => {
            if !f_best.is_finite() {
                return Err(Error::invalid(format!("f_best must be finite, got {f_best}")));
            }
            let improvement = f_best - mean - spec.xi;
            let z = if std > 0.0 {
                improvement / std
            } else if improvement > 0.0 {
                f64::INFINITY
            } else {
                f64::NEG_INFINITY
            };
            if spec.kind == AcquisitionKind::Pi {
                return Ok(-std_normal_cdf(z));
            }
            let ei = if std > 0.0 {
                improvement * std_normal_cdf(z) + std * std_normal_pdf(z)
            } else {
                improvement.max(0.0)
            };
            // the closed form can dip a few ulps below zero deep in the tail
            Ok(-ei.max(0.0))
        }
    }
}

/// Coordinating variables seen by one agent: dual `λᵢ`, consensus `x₀`, penalty `ρ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltyParams {
    pub lambda_i: Vec<f64>,
    pub x0: Vec<f64>,
    pub rho: f64,
}

impl PenaltyParams {
    pub fn new(lambda_i: Vec<f64>, x0: Vec<f64>, rho: f64) -> Result<Self> {
        let p = Self { lambda_i, x0, rho };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(Error::invalid(format!("rho must be > 0, got {}", self.rho)));
        }
        check_dims("penalty dual", self.x0.len(), self.lambda_i.len())
    }

    /// Minimizer of the penalty alone, `x₀ − λ/ρ`.
    pub fn unconstrained_minimizer(&self) -> Vec<f64> {
        self.x0.iter().zip(&self.lambda_i).map(|(z, l)| z - l / self.rho).collect()
    }
}

/// `λᵀx + (ρ/2)‖x − x₀‖²`
pub fn penalty(x: &[f64], p: &PenaltyParams) -> Result<f64> {
    check_dims("penalty point", p.x0.len(), x.len())?;
    check_dims("penalty dual", p.x0.len(), p.lambda_i.len())?;
    let linear: f64 = p.lambda_i.iter().zip(x).map(|(l, v)| l * v).sum();
    let sq: f64 = x.iter().zip(&p.x0).map(|(v, z)| (v - z).powi(2)).sum();
    Ok(linear + 0.5 * p.rho * sq)
}

/// `λ + ρ(x − x₀)`
pub fn penalty_gradient(x: &[f64], p: &PenaltyParams) -> Result<Vec<f64>> {
    check_dims("penalty point", p.x0.len(), x.len())?;
    check_dims("penalty dual", p.x0.len(), p.lambda_i.len())?;
    Ok(x
        .iter()
        .zip(&p.x0)
        .zip(&p.lambda_i)
        .map(|((v, z), l)| l + p.rho * (v - z))
        .collect())
}

/// Acquisition value of `spec` at `x` under `post`, using the posterior's own
/// best observation as the incumbent.
pub fn acquisition_at(post: &GpPosterior, spec: &AcquisitionSpec, x: &[f64]) -> Result<f64> {
    let f_best = post
        .training()
        .best()
        .map(|(_, y)| y)
        .ok_or_else(|| Error::invalid("posterior has no training data"))?;
    let (mean, var) = post.predict(x)?;
    evaluate_acquisition(spec, mean, var.sqrt(), f_best)
}

/// Minimize `α(x) + δ(x)` over `domain`.
pub fn minimize_penalized(
    post: &GpPosterior,
    spec: &AcquisitionSpec,
    p: &PenaltyParams,
    domain: &BoxDomain,
) -> Result<Vec<f64>> {
    Ok(minimize_penalized_with(post, spec, p, domain, &SearchSettings::default())?.x)
}

pub fn minimize_penalized_with(
    post: &GpPosterior,
    spec: &AcquisitionSpec,
    p: &PenaltyParams,
    domain: &BoxDomain,
    settings: &SearchSettings,
) -> Result<Minimum> {
    spec.validate()?;
    p.validate()?;
    check_dims("penalty consensus", domain.dim(), p.x0.len())?;
    let f_best = post
        .training()
        .best()
        .map(|(_, y)| y)
        .ok_or_else(|| Error::invalid("posterior has no training data"))?;
    minimize_box(
        |x| {
            let (mean, var) = post.predict(x)?;
            Ok(evaluate_acquisition(spec, mean, var.sqrt(), f_best)? + penalty(x, p)?)
        },
        domain,
        settings,
    )
}
