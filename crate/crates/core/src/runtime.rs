//! Synchronous multi-agent runs.
//!
//! One coordination loop owns the [`CoordinatorState`]. Each agent lives in
//! its own worker context and talks to the coordinator only through
//! [`Message`]s: a [`Theta`] goes out, a decision `xᵢ` comes back. Every
//! round ends at a barrier, so results do not depend on whether workers run
//! on threads or one after another.
//!
//! The newest observation of each agent is reported on a separate telemetry
//! tap that feeds the trace only; the coordinator never reads it.

use std::sync::mpsc;
use std::thread;

use serde::{Deserialize, Serialize};

use crate::acquisition::AcquisitionSpec;
use crate::admm::{consensus_average, model_based_subproblem_with, residuals, update_dual, CoordinatorState, Residuals};
use crate::agent::{AgentState, HyperMode, Theta, DEFAULT_N0};
use crate::domain::BoxDomain;
use crate::error::{Error, Result};
use crate::gp::GpConfig;
use crate::objective::{Objective, SharedObjective};
use crate::rng::{stream_rng, PURPOSE_INITIAL_ITERATE};
use crate::search::SearchSettings;

pub const DEFAULT_RHO: f64 = 10.0;
pub const DEFAULT_MAX_ADMM_ITERS: usize = 30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    /// Key of the agent's random streams. Travels with the agent, so
    /// reordering agents reorders their streams too.
    pub stream: u64,
    pub acquisition: AcquisitionSpec,
    pub inner_iters: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Execution {
    Sequential,
    Threaded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub domain: BoxDomain,
    pub rho: f64,
    pub max_admm_iters: usize,
    pub agents: Vec<AgentConfig>,
    pub n0: usize,
    pub seed: u64,
    pub noise_std: f64,
    /// `None` refits with bounds derived from the domain.
    pub hyper_mode: Option<HyperMode>,
    pub gp: GpConfig,
    pub execution: Execution,
    /// Stop early once both residuals are at or below these values.
    pub tolerance: Option<Residuals>,
}

impl RunConfig {
    /// Defaults: `ρ = 10`, 30 iterations, `n0 = 3`, one inner iteration,
    /// ML-II refits, no observation noise, threaded workers.
    pub fn new(domain: BoxDomain, acquisitions: Vec<AcquisitionSpec>, seed: u64) -> Self {
        let agents = acquisitions
            .into_iter()
            .enumerate()
            .map(|(i, acquisition)| AgentConfig { stream: i as u64, acquisition, inner_iters: 1 })
            .collect();
        Self {
            domain,
            rho: DEFAULT_RHO,
            max_admm_iters: DEFAULT_MAX_ADMM_ITERS,
            agents,
            n0: DEFAULT_N0,
            seed,
            noise_std: 0.0,
            hyper_mode: None,
            gp: GpConfig::default(),
            execution: Execution::Threaded,
            tolerance: None,
        }
    }

    pub fn n_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.agents.is_empty() {
            return Err(Error::invalid("a run needs at least one agent"));
        }
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(Error::invalid(format!("rho must be > 0, got {}", self.rho)));
        }
        if self.max_admm_iters == 0 {
            return Err(Error::invalid("max_admm_iters must be >= 1"));
        }
        if self.n0 == 0 {
            return Err(Error::invalid("n0 must be >= 1"));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::invalid(format!("noise std must be >= 0, got {}", self.noise_std)));
        }
        if let Some(t) = self.tolerance {
            if !(t.primal >= 0.0 && t.dual >= 0.0) {
                return Err(Error::invalid(format!("residual tolerances must be >= 0, got {} and {}", t.primal, t.dual)));
            }
        }
        for (i, a) in self.agents.iter().enumerate() {
            if a.inner_iters == 0 {
                return Err(Error::invalid(format!("agent {i}: inner_iters must be >= 1")));
            }
            a.acquisition.validate()?;
        }
        Ok(())
    }

    /// `xᵢ⁰`, one uniform draw per agent from its own stream.
    pub fn initial_iterates(&self) -> Vec<Vec<f64>> {
        self.agents
            .iter()
            .map(|a| self.domain.sample_uniform(&mut stream_rng(self.seed, a.stream, PURPOSE_INITIAL_ITERATE)))
            .collect()
    }

    fn build_agent(&self, i: usize) -> Result<AgentState> {
        let a = &self.agents[i];
        let mode = self.hyper_mode.clone().unwrap_or_else(|| HyperMode::refit_for(&self.domain));
        Ok(AgentState::new(i, self.domain.clone(), a.acquisition, a.inner_iters, mode, self.seed, a.stream)?
            .with_noise(self.noise_std)?
            .with_gp_config(self.gp))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub x: Vec<f64>,
    pub y: f64,
}

/// State after ADMM iteration `k` (1-based): `x0` is `x₀^k`, `xs` and
/// `lambdas` are the agents' `xᵢ^k` and `λᵢ^k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub k: usize,
    pub x0: Vec<f64>,
    pub x0_prev: Vec<f64>,
    pub xs: Vec<Vec<f64>>,
    pub lambdas: Vec<Vec<f64>>,
    pub residuals: Residuals,
    pub newest: Vec<Observation>,
}

/// Coordination traffic. Only these two payloads ever cross an agent boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Message {
    ToAgent { iteration: usize, agent: usize, theta: Theta },
    Decision { iteration: usize, agent: usize, x: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub rho: f64,
    pub initial_x0: Vec<f64>,
    pub initial_xs: Vec<Vec<f64>>,
    pub records: Vec<IterationRecord>,
    /// Final consensus estimate.
    pub final_x0: Vec<f64>,
    pub messages: Vec<Message>,
}

impl RunTrace {
    pub fn n_agents(&self) -> usize {
        self.initial_xs.len()
    }

    pub fn last(&self) -> &IterationRecord {
        self.records.last().expect("trace has at least one record")
    }

    /// Recompute every consensus, dual and residual value from the stored
    /// iterates and compare bit for bit.
    pub fn verify_replay(&self) -> Result<()> {
        let n = self.n_agents();
        let dim = self.initial_x0.len();
        let mut xs = self.initial_xs.clone();
        let mut lambdas = vec![vec![0.0; dim]; n];
        let mut x0_prev = self.initial_x0.clone();
        for rec in &self.records {
            let mismatch = |what: &str| Err(Error::numerical(format!("replay mismatch in {what} at k = {}", rec.k)));
            let x0 = consensus_average(&xs, &lambdas, self.rho);
            if x0 != rec.x0 {
                return mismatch("x0");
            }
            if x0_prev != rec.x0_prev {
                return mismatch("x0_prev");
            }
            for (lambda, x) in lambdas.iter_mut().zip(&rec.xs) {
                *lambda = update_dual(lambda, x, &x0, self.rho)?;
            }
            if lambdas != rec.lambdas {
                return mismatch("lambda");
            }
            if residuals(&x0, &x0_prev, &rec.xs, self.rho) != rec.residuals {
                return mismatch("residuals");
            }
            xs = rec.xs.clone();
            x0_prev = x0;
        }
        Ok(())
    }
}

/// What one round produced for one agent.
struct Step {
    x: Vec<f64>,
    newest: Observation,
}

/// Shared ADMM loop. `round` receives the iteration index and every agent's
/// coordinating variables and must return one step per agent, in order.
fn drive<F>(config: &RunConfig, mut round: F) -> Result<RunTrace>
where
    F: FnMut(usize, &[Theta]) -> Result<Vec<Step>>,
{
    let n = config.n_agents();
    let mut state = CoordinatorState::for_domain(&config.domain, n, config.rho)?;
    let initial_x0 = state.x0().to_vec();
    let initial_xs = config.initial_iterates();
    let mut xs = initial_xs.clone();
    let mut records = Vec::with_capacity(config.max_admm_iters);
    let mut messages = Vec::new();

    for k in 1..=config.max_admm_iters {
        let x0 = state.update_consensus(&xs)?;
        let thetas: Vec<Theta> = (0..n)
            .map(|i| Theta { x0: x0.clone(), lambda_i: state.lambda(i).to_vec() })
            .collect();
        for (i, theta) in thetas.iter().enumerate() {
            messages.push(Message::ToAgent { iteration: k, agent: i, theta: theta.clone() });
        }
        let steps = round(k, &thetas)?;
        for (i, s) in steps.iter().enumerate() {
            messages.push(Message::Decision { iteration: k, agent: i, x: s.x.clone() });
        }
        let (next, newest): (Vec<_>, Vec<_>) = steps.into_iter().map(|s| (s.x, s.newest)).unzip();
        state.update_duals(&next)?;
        let res = state.residuals(&next)?;
        records.push(IterationRecord {
            k,
            x0,
            x0_prev: state.x0_prev().to_vec(),
            xs: next.clone(),
            lambdas: state.lambdas().to_vec(),
            residuals: res,
            newest,
        });
        xs = next;
        if config.tolerance.is_some_and(|t| res.primal <= t.primal && res.dual <= t.dual) {
            break;
        }
    }
    Ok(RunTrace {
        rho: config.rho,
        initial_x0,
        initial_xs,
        final_x0: state.x0().to_vec(),
        records,
        messages,
    })
}

enum Request {
    Round { iteration: usize, theta: Theta },
}

struct Reply {
    agent: usize,
    iteration: usize,
    outcome: Result<Vec<f64>>,
}

/// Telemetry from a worker to the trace recorder.
struct Tap {
    agent: usize,
    newest: Observation,
}

fn agent_error(iteration: usize, agent: usize, e: Error) -> Error {
    Error::AgentRound { iteration, agent, source: Box::new(e) }
}

/// Run the multi-agent BO loop with one black-box oracle per agent.
pub fn run_mabo(config: &RunConfig, oracles: &[SharedObjective]) -> Result<RunTrace> {
    config.validate()?;
    if oracles.len() != config.n_agents() {
        return Err(Error::invalid(format!(
            "expected {} oracles, got {}",
            config.n_agents(),
            oracles.len()
        )));
    }
    let n = config.n_agents();
    let mut agents = Vec::with_capacity(n);
    for (i, oracle) in oracles.iter().enumerate() {
        let mut agent = config.build_agent(i).map_err(|e| agent_error(0, i, e))?;
        agent.seed_initial_data(oracle.as_ref(), config.n0).map_err(|e| agent_error(0, i, e))?;
        agents.push(agent);
    }

    match config.execution {
        Execution::Sequential => drive(config, |k, thetas| {
            let mut steps = Vec::with_capacity(n);
            for (i, agent) in agents.iter_mut().enumerate() {
                let x = agent
                    .local_bo_round(&thetas[i], config.rho, oracles[i].as_ref())
                    .map_err(|e| agent_error(k, i, e))?;
                steps.push(Step { x, newest: latest(agent) });
            }
            Ok(steps)
        }),
        Execution::Threaded => run_threaded(config, agents, oracles),
    }
}

fn latest(agent: &AgentState) -> Observation {
    let (x, y) = agent.dataset().last().expect("agent has data after a round");
    Observation { x: x.to_vec(), y }
}

fn run_threaded(config: &RunConfig, agents: Vec<AgentState>, oracles: &[SharedObjective]) -> Result<RunTrace> {
    let n = agents.len();
    let rho = config.rho;
    thread::scope(|scope| {
        let (reply_tx, reply_rx) = mpsc::channel::<Reply>();
        let (tap_tx, tap_rx) = mpsc::channel::<Tap>();
        let mut request_txs = Vec::with_capacity(n);
        for (mut agent, oracle) in agents.into_iter().zip(oracles) {
            let (tx, rx) = mpsc::channel::<Request>();
            request_txs.push(tx);
            let reply_tx = reply_tx.clone();
            let tap_tx = tap_tx.clone();
            let oracle: &dyn Objective = oracle.as_ref();
            scope.spawn(move || {
                // exits when the coordinator drops its request sender
                while let Ok(Request::Round { iteration, theta }) = rx.recv() {
                    let id = agent.id();
                    let outcome = agent.local_bo_round(&theta, rho, oracle);
                    if outcome.is_ok() {
                        let _ = tap_tx.send(Tap { agent: id, newest: latest(&agent) });
                    }
                    if reply_tx.send(Reply { agent: id, iteration, outcome }).is_err() {
                        break;
                    }
                }
            });
        }
        drop(reply_tx);
        drop(tap_tx);

        let result = drive(config, |k, thetas| {
            for (i, tx) in request_txs.iter().enumerate() {
                tx.send(Request::Round { iteration: k, theta: thetas[i].clone() })
                    .map_err(|_| agent_error(k, i, Error::numerical("worker stopped")))?;
            }
            // barrier: wait for every agent, then order by agent index
            let mut decided: Vec<Option<Vec<f64>>> = vec![None; n];
            let mut first_error: Option<Error> = None;
            for _ in 0..n {
                let reply = reply_rx
                    .recv()
                    .map_err(|_| agent_error(k, 0, Error::numerical("all workers stopped")))?;
                debug_assert_eq!(reply.iteration, k);
                match reply.outcome {
                    Ok(x) => decided[reply.agent] = Some(x),
                    Err(e) => {
                        let e = agent_error(k, reply.agent, e);
                        // keep the lowest agent index so failures are reported deterministically
                        let replace = match &first_error {
                            Some(Error::AgentRound { agent, .. }) => reply.agent < *agent,
                            _ => true,
                        };
                        if replace {
                            first_error = Some(e);
                        }
                    }
                }
            }
            if let Some(e) = first_error {
                return Err(e);
            }
            let mut newest: Vec<Option<Observation>> = vec![None; n];
            for _ in 0..n {
                let tap = tap_rx
                    .recv()
                    .map_err(|_| agent_error(k, 0, Error::numerical("telemetry closed")))?;
                newest[tap.agent] = Some(tap.newest);
            }
            let mut steps = Vec::with_capacity(n);
            for (x, obs) in decided.into_iter().zip(newest) {
                steps.push(Step {
                    x: x.expect("every agent replied"),
                    newest: obs.expect("every agent reported"),
                });
            }
            Ok(steps)
        });
        drop(request_txs);
        result
    })
}

/// Same loop with each agent solving its subproblem exactly on a known model.
pub fn run_model_based_admm(config: &RunConfig, models: &[SharedObjective]) -> Result<RunTrace> {
    run_model_based_admm_with(config, models, &SearchSettings::default())
}

pub fn run_model_based_admm_with(
    config: &RunConfig,
    models: &[SharedObjective],
    search: &SearchSettings,
) -> Result<RunTrace> {
    config.validate()?;
    if models.len() != config.n_agents() {
        return Err(Error::invalid(format!(
            "expected {} models, got {}",
            config.n_agents(),
            models.len()
        )));
    }
    drive(config, |k, thetas| {
        let mut steps = Vec::with_capacity(models.len());
        for (i, (model, theta)) in models.iter().zip(thetas).enumerate() {
            let p = crate::acquisition::PenaltyParams::new(theta.lambda_i.clone(), theta.x0.clone(), config.rho)
                .map_err(|e| agent_error(k, i, e))?;
            let x = model_based_subproblem_with(model.as_ref(), &p, &config.domain, search)
                .map_err(|e| agent_error(k, i, e))?;
            let y = model.evaluate(&x);
            steps.push(Step { newest: Observation { x: x.clone(), y }, x });
        }
        Ok(steps)
    })
}
