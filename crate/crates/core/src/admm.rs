//! Consensus ADMM coordinator: the averaging step for `x₀`, the per-agent
//! dual ascent step, residuals, and the exact local subproblem used when the
//! local costs are known.

use serde::{Deserialize, Serialize};

use crate::acquisition::{penalty, PenaltyParams};
use crate::domain::BoxDomain;
use crate::error::{check_dims, Error, Result};
use crate::objective::Objective;
use crate::search::{minimize_box, SearchSettings};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordinatorState {
    x0: Vec<f64>,
    x0_prev: Vec<f64>,
    lambdas: Vec<Vec<f64>>,
    rho: f64,
    n_agents: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    /// `Σᵢ ‖xᵢ − x₀‖²`
    pub primal: f64,
    /// `N ρ² ‖x₀ − x₀_prev‖²`
    pub dual: f64,
}

impl CoordinatorState {
    /// Zero duals, `x₀ = x0`.
    pub fn new(x0: Vec<f64>, n_agents: usize, rho: f64) -> Result<Self> {
        if n_agents == 0 {
            return Err(Error::invalid("coordinator needs at least one agent"));
        }
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(Error::invalid(format!("rho must be > 0, got {rho}")));
        }
        if x0.is_empty() {
            return Err(Error::invalid("consensus variable must have at least one dimension"));
        }
        let dim = x0.len();
        Ok(Self {
            x0_prev: x0.clone(),
            x0,
            lambdas: vec![vec![0.0; dim]; n_agents],
            rho,
            n_agents,
        })
    }

    /// Starts from the domain midpoint.
    pub fn for_domain(domain: &BoxDomain, n_agents: usize, rho: f64) -> Result<Self> {
        Self::new(domain.midpoint(), n_agents, rho)
    }

    pub fn x0(&self) -> &[f64] {
        &self.x0
    }

    pub fn x0_prev(&self) -> &[f64] {
        &self.x0_prev
    }

    pub fn lambdas(&self) -> &[Vec<f64>] {
        &self.lambdas
    }

    pub fn lambda(&self, i: usize) -> &[f64] {
        &self.lambdas[i]
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn dim(&self) -> usize {
        self.x0.len()
    }

    fn check_xs(&self, xs: &[Vec<f64>]) -> Result<()> {
        if xs.len() != self.n_agents {
            return Err(Error::invalid(format!(
                "expected {} agent iterates, got {}",
                self.n_agents,
                xs.len()
            )));
        }
        xs.iter().try_for_each(|x| check_dims("agent iterate", self.dim(), x.len()))
    }

    /// `x₀ ← (1/N) Σᵢ (xᵢ + λᵢ/ρ)`; the previous `x₀` is kept for the dual residual.
    pub fn update_consensus(&mut self, xs: &[Vec<f64>]) -> Result<Vec<f64>> {
        self.check_xs(xs)?;
        let x0 = consensus_average(xs, &self.lambdas, self.rho);
        self.x0_prev = std::mem::replace(&mut self.x0, x0);
        Ok(self.x0.clone())
    }

    /// Dual step for every agent against the current `x₀`.
    pub fn update_duals(&mut self, xs: &[Vec<f64>]) -> Result<()> {
        self.check_xs(xs)?;
        for (lambda, x) in self.lambdas.iter_mut().zip(xs) {
            *lambda = update_dual(lambda, x, &self.x0, self.rho)?;
        }
        Ok(())
    }

    pub fn residuals(&self, xs: &[Vec<f64>]) -> Result<Residuals> {
        self.check_xs(xs)?;
        Ok(residuals(&self.x0, &self.x0_prev, xs, self.rho))
    }

    /// Penalty parameters agent `i` needs for its next subproblem.
    pub fn penalty_params(&self, i: usize) -> PenaltyParams {
        PenaltyParams { lambda_i: self.lambdas[i].clone(), x0: self.x0.clone(), rho: self.rho }
    }
}

/// `(1/N) Σᵢ (xᵢ + λᵢ/ρ)`, summed in agent order.
pub fn consensus_average(xs: &[Vec<f64>], lambdas: &[Vec<f64>], rho: f64) -> Vec<f64> {
    let dim = xs[0].len();
    let n = xs.len() as f64;
    let mut acc = vec![0.0; dim];
    for (x, lambda) in xs.iter().zip(lambdas) {
        for d in 0..dim {
            acc[d] += x[d] + lambda[d] / rho;
        }
    }
    acc.iter().map(|s| s / n).collect()
}

/// `λᵢ + ρ (xᵢ − x₀)`
pub fn update_dual(lambda_i: &[f64], x_i: &[f64], x0: &[f64], rho: f64) -> Result<Vec<f64>> {
    check_dims("dual update iterate", x0.len(), x_i.len())?;
    check_dims("dual update multiplier", x0.len(), lambda_i.len())?;
    Ok(lambda_i
        .iter()
        .zip(x_i.iter().zip(x0))
        .map(|(l, (x, z))| l + rho * (x - z))
        .collect())
}

pub fn residuals(x0: &[f64], x0_prev: &[f64], xs: &[Vec<f64>], rho: f64) -> Residuals {
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(u, v)| (u - v).powi(2)).sum::<f64>();
    let primal = xs.iter().map(|x| sq(x, x0)).sum();
    let dual = xs.len() as f64 * rho * rho * sq(x0, x0_prev);
    Residuals { primal, dual }
}

/// Exact local step with a known cost: `argmin_x f(x) + λᵀx + (ρ/2)‖x − x₀‖²`.
pub fn model_based_subproblem(f: &dyn Objective, p: &PenaltyParams, domain: &BoxDomain) -> Result<Vec<f64>> {
    model_based_subproblem_with(f, p, domain, &SearchSettings::default())
}

pub fn model_based_subproblem_with(
    f: &dyn Objective,
    p: &PenaltyParams,
    domain: &BoxDomain,
    settings: &SearchSettings,
) -> Result<Vec<f64>> {
    p.validate()?;
    check_dims("subproblem consensus", domain.dim(), p.x0.len())?;
    let m = minimize_box(
        |x| {
            let v = f.evaluate(x);
            if !v.is_finite() {
                return Err(Error::numerical(format!("local cost is non-finite ({v}) at x = {x:?}")));
            }
            Ok(v + penalty(x, p)?)
        },
        domain,
        settings,
    )?;
    Ok(m.x)
}
