//! A local Bayesian-optimization subsystem.
//!
//! An agent owns its observations and surrogate. It only ever receives the
//! coordinating variables [`Theta`] and only ever hands back its latest
//! decision; its dataset never leaves the agent.

use rand::RngCore;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::acquisition::{minimize_penalized_with, AcquisitionSpec, PenaltyParams};
use crate::domain::BoxDomain;
use crate::error::{check_dims, Error, Result};
use crate::gp::{fit_with, optimize_hyperparameters_with, Dataset, GpConfig, HyperBounds, HyperSearch, KernelParams};
use crate::objective::Objective;
use crate::rng::{stream_rng, PURPOSE_AGENT};
use crate::search::SearchSettings;

pub const DEFAULT_N0: usize = 3;

/// Coordinating variables for one agent: `(x₀^{k+1}, λᵢ^k)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theta {
    pub x0: Vec<f64>,
    pub lambda_i: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum HyperMode {
    /// ML-II refit before every acquisition step.
    Refit(HyperBounds),
    Fixed(KernelParams),
}

impl HyperMode {
    pub fn refit_for(domain: &BoxDomain) -> Self {
        HyperMode::Refit(HyperBounds::for_domain(domain))
    }
}

#[derive(Debug, Clone)]
pub struct AgentState {
    id: usize,
    data: Dataset,
    spec: AcquisitionSpec,
    domain: BoxDomain,
    inner_iters: usize,
    hyper_mode: HyperMode,
    noise_std: f64,
    rng: ChaCha8Rng,
    gp_config: GpConfig,
    hyper_search: HyperSearch,
    search: SearchSettings,
}

impl AgentState {
    /// `stream` keys this agent's random stream under `seed`.
    pub fn new(
        id: usize,
        domain: BoxDomain,
        spec: AcquisitionSpec,
        inner_iters: usize,
        hyper_mode: HyperMode,
        seed: u64,
        stream: u64,
    ) -> Result<Self> {
        spec.validate()?;
        if inner_iters == 0 {
            return Err(Error::invalid("inner_iters must be >= 1"));
        }
        match &hyper_mode {
            HyperMode::Refit(b) => {
                b.validate()?;
                check_dims("lengthscale bounds", domain.dim(), b.lengthscales.len())?;
            }
            HyperMode::Fixed(p) => {
                p.validate()?;
                check_dims("kernel lengthscales", domain.dim(), p.dim())?;
            }
        }
        Ok(Self {
            id,
            data: Dataset::new(domain.clone()),
            spec,
            domain,
            inner_iters,
            hyper_mode,
            noise_std: 0.0,
            rng: stream_rng(seed, stream, PURPOSE_AGENT),
            gp_config: GpConfig::default(),
            hyper_search: HyperSearch::default(),
            search: SearchSettings::default(),
        })
    }

    /// Additive Gaussian observation noise with this standard deviation.
    pub fn with_noise(mut self, noise_std: f64) -> Result<Self> {
        if !(noise_std >= 0.0 && noise_std.is_finite()) {
            return Err(Error::invalid(format!("noise std must be >= 0, got {noise_std}")));
        }
        self.noise_std = noise_std;
        Ok(self)
    }

    pub fn with_search(mut self, search: SearchSettings) -> Self {
        self.search = search;
        self
    }

    pub fn with_gp_config(mut self, config: GpConfig) -> Self {
        self.gp_config = config;
        self
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn spec(&self) -> &AcquisitionSpec {
        &self.spec
    }

    pub fn domain(&self) -> &BoxDomain {
        &self.domain
    }

    pub fn inner_iters(&self) -> usize {
        self.inner_iters
    }

    /// The agent's own observations.
    pub fn dataset(&self) -> &Dataset {
        &self.data
    }

    fn observe(&mut self, oracle: &dyn Objective, x: &[f64]) -> Result<f64> {
        let y = oracle.evaluate(x);
        if !y.is_finite() {
            return Err(Error::numerical(format!("oracle returned {y} at x = {x:?}")));
        }
        if self.noise_std > 0.0 {
            let noise = Normal::new(0.0, self.noise_std).map_err(|e| Error::invalid(e.to_string()))?;
            return Ok(y + noise.sample(&mut self.rng));
        }
        Ok(y)
    }

    /// Evaluate the oracle at `n0` seeded uniform points.
    pub fn seed_initial_data(&mut self, oracle: &dyn Objective, n0: usize) -> Result<()> {
        if n0 == 0 {
            return Err(Error::invalid("n0 must be >= 1"));
        }
        let len = self.data.len();
        let rng = self.rng.clone();
        let result = (0..n0).try_for_each(|_| {
            let x = self.domain.sample_uniform(&mut self.rng);
            let y = self.observe(oracle, &x)?;
            self.data.push(x, y)
        });
        if result.is_err() {
            self.data.truncate(len);
            self.rng = rng;
        }
        result
    }

    fn kernel_params(&mut self) -> Result<KernelParams> {
        match &self.hyper_mode {
            HyperMode::Fixed(p) => Ok(p.clone()),
            HyperMode::Refit(bounds) if self.data.len() < 2 => {
                // ML-II is undefined for one point; use the search's starting guess
                let ls = (0..self.domain.dim())
                    .map(|d| (0.25 * self.domain.width(d)).clamp(bounds.lengthscales[d].0, bounds.lengthscales[d].1))
                    .collect();
                KernelParams::new(
                    1.0f64.clamp(bounds.signal_variance.0, bounds.signal_variance.1),
                    ls,
                    bounds.noise_variance.0,
                )
            }
            HyperMode::Refit(bounds) => {
                let seed = self.rng.next_u64();
                optimize_hyperparameters_with(&self.data, bounds, seed, &self.gp_config, &self.hyper_search)
            }
        }
    }

    fn inner_iteration(&mut self, penalty: &PenaltyParams, oracle: &dyn Objective) -> Result<Vec<f64>> {
        let params = self.kernel_params()?;
        let post = fit_with(&self.data, &params, &self.gp_config)?;
        let x = minimize_penalized_with(&post, &self.spec, penalty, &self.domain, &self.search)?.x;
        let y = self.observe(oracle, &x)?;
        self.data.push(x.clone(), y)?;
        Ok(x)
    }

    /// Run `inner_iters` penalized BO steps for the given coordinating
    /// variables and return the final iterate. On error the dataset and the
    /// random stream are rolled back to their state before the round.
    pub fn local_bo_round(&mut self, theta: &Theta, rho: f64, oracle: &dyn Objective) -> Result<Vec<f64>> {
        check_dims("theta consensus", self.domain.dim(), theta.x0.len())?;
        check_dims("theta dual", self.domain.dim(), theta.lambda_i.len())?;
        if self.data.is_empty() {
            return Err(Error::invalid(format!("agent {} has no initial data", self.id)));
        }
        let penalty = PenaltyParams::new(theta.lambda_i.clone(), theta.x0.clone(), rho)?;

        let len = self.data.len();
        let rng = self.rng.clone();
        let mut last = Vec::new();
        for _ in 0..self.inner_iters {
            match self.inner_iteration(&penalty, oracle) {
                Ok(x) => last = x,
                Err(e) => {
                    self.data.truncate(len);
                    self.rng = rng;
                    return Err(e);
                }
            }
        }
        Ok(last)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn domain() -> BoxDomain {
        BoxDomain::interval(0.0, 5.0).unwrap()
    }

    fn agent(spec: AcquisitionSpec, inner: usize, seed: u64) -> AgentState {
        let d = domain();
        AgentState::new(0, d.clone(), spec, inner, HyperMode::refit_for(&d), seed, 0).unwrap()
    }

    fn quad(x: &[f64]) -> f64 {
        (x[0] - 2.0).powi(2)
    }

    #[test]
    fn seeding_contract() {
        let mut a = agent(AcquisitionSpec::lcb(4.0), 1, 7);
        a.seed_initial_data(&quad, 3).unwrap();
        assert_eq!(a.dataset().len(), 3);
        assert!(a.dataset().xs().iter().all(|x| domain().contains(x)));

        let mut b = agent(AcquisitionSpec::lcb(4.0), 1, 7);
        b.seed_initial_data(&quad, 3).unwrap();
        assert_eq!(a.dataset(), b.dataset());

        let mut c = agent(AcquisitionSpec::lcb(4.0), 1, 8);
        c.seed_initial_data(&quad, 3).unwrap();
        assert_ne!(a.dataset(), c.dataset());
        assert!(a.seed_initial_data(&quad, 0).is_err());
    }

    #[test]
    fn constant_oracle_gives_constant_posterior() {
        let mut a = agent(AcquisitionSpec::lcb(4.0), 1, 3);
        let c = 42.5;
        let konst = move |_: &[f64]| c;
        a.seed_initial_data(&konst, 3).unwrap();
        assert!(a.dataset().ys().iter().all(|y| *y == c));
        let params = a.kernel_params().unwrap();
        let post = crate::gp::fit(a.dataset(), &params).unwrap();
        for j in 0..=50 {
            let (m, _) = post.predict(&[j as f64 * 0.1]).unwrap();
            assert!((m - c).abs() < 1e-6);
        }
    }

    #[test]
    fn non_finite_oracle_rejected_atomically() {
        let mut a = agent(AcquisitionSpec::lcb(4.0), 1, 3);
        let bad = |x: &[f64]| if x[0] > 0.0 { f64::INFINITY } else { 0.0 };
        assert!(matches!(a.seed_initial_data(&bad, 3), Err(Error::Numerical(_))));
        assert!(a.dataset().is_empty());
    }

    #[test]
    fn one_observation_per_inner_iteration() {
        for inner in [1, 3] {
            let mut a = agent(AcquisitionSpec::ei(0.01), inner, 1);
            a.seed_initial_data(&quad, 3).unwrap();
            let theta = Theta { x0: vec![2.5], lambda_i: vec![0.0] };
            for k in 1..=4 {
                let x = a.local_bo_round(&theta, 10.0, &quad).unwrap();
                assert_eq!(a.dataset().len(), 3 + k * inner);
                assert_eq!(a.dataset().last().unwrap().0, x.as_slice());
            }
        }
    }

    #[test]
    fn round_is_atomic_on_oracle_failure() {
        let mut a = agent(AcquisitionSpec::lcb(4.0), 3, 2);
        a.seed_initial_data(&quad, 3).unwrap();
        let before = a.dataset().clone();
        let calls = AtomicUsize::new(0);
        let flaky = |x: &[f64]| {
            if calls.fetch_add(1, Ordering::SeqCst) == 1 {
                f64::NAN
            } else {
                quad(x)
            }
        };
        let theta = Theta { x0: vec![1.0], lambda_i: vec![0.0] };
        assert!(a.local_bo_round(&theta, 1.0, &flaky).is_err());
        assert_eq!(a.dataset(), &before);
        // the rolled-back agent replays exactly like a fresh clone would
        let mut fresh = agent(AcquisitionSpec::lcb(4.0), 3, 2);
        fresh.seed_initial_data(&quad, 3).unwrap();
        assert_eq!(
            a.local_bo_round(&theta, 1.0, &quad).unwrap(),
            fresh.local_bo_round(&theta, 1.0, &quad).unwrap()
        );
    }

    #[test]
    fn theta_dimension_checked() {
        let mut a = agent(AcquisitionSpec::lcb(4.0), 1, 2);
        a.seed_initial_data(&quad, 3).unwrap();
        let theta = Theta { x0: vec![1.0, 2.0], lambda_i: vec![0.0] };
        assert!(a.local_bo_round(&theta, 1.0, &quad).is_err());
    }

    #[test]
    fn huge_rho_follows_penalty() {
        let mut a = agent(AcquisitionSpec::lcb(4.0), 1, 5);
        a.seed_initial_data(&quad, 3).unwrap();
        let cell = SearchSettings::default().grid_spacing(&domain(), 0);
        for (x0, lam) in [(3.3, 0.0), (1.0, 4e5), (4.0, -2e6)] {
            let theta = Theta { x0: vec![x0], lambda_i: vec![lam] };
            let x = a.local_bo_round(&theta, 1e6, &quad).unwrap();
            let target = domain().clip(&[x0 - lam / 1e6]);
            assert!((x[0] - target[0]).abs() <= cell, "{x:?} vs {target:?}");
        }
    }

    #[test]
    fn lcb_rounds_find_quadratic_minimum() {
        let mut a = agent(AcquisitionSpec::lcb(4.0), 1, 11);
        a.seed_initial_data(&quad, 3).unwrap();
        let theta = Theta { x0: vec![2.5], lambda_i: vec![0.0] };
        for _ in 0..20 {
            a.local_bo_round(&theta, 1e-3, &quad).unwrap();
        }
        let (best, _) = a.dataset().best().unwrap();
        assert!((best[0] - 2.0).abs() < 0.1, "{best:?}");
    }

    #[test]
    fn noisy_observations_differ_from_oracle() {
        let d = domain();
        let mut a = AgentState::new(0, d.clone(), AcquisitionSpec::lcb(4.0), 1, HyperMode::refit_for(&d), 1, 0)
            .unwrap()
            .with_noise(0.5)
            .unwrap();
        a.seed_initial_data(&quad, 5).unwrap();
        assert!(a.dataset().iter().any(|(x, y)| (y - quad(x)).abs() > 1e-9));
        assert!(AgentState::new(0, d.clone(), AcquisitionSpec::lcb(4.0), 1, HyperMode::refit_for(&d), 1, 0)
            .unwrap()
            .with_noise(-1.0)
            .is_err());
    }

    #[test]
    fn zero_inner_iters_rejected() {
        let d = domain();
        assert!(AgentState::new(0, d.clone(), AcquisitionSpec::lcb(4.0), 0, HyperMode::refit_for(&d), 1, 0).is_err());
    }
}
