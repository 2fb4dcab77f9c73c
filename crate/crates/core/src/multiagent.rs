//! Leader-following for a group of driftless followers.
//!
//! Each follower steers its displacement `x_l - x_L - d_l` to zero with the
//! same oscillatory law as a single system, using its own fields evaluated at
//! its own state. Followers only interact with the leader, so the stacked
//! extension matrix is block diagonal and agents are integrated independently
//! against one precomputed leader path.

use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::PartitionedSystem;
use crate::sampling::{
    grid_steps, integrate_sampled, interval_grid, Interval, SampledLoop, SampledTrajectory,
    SimConfig, DIVERGENCE_BOUND,
};
use crate::synthesis::{coefficients_for_error, BracketSelection, ControllerGains, HeldControl};

type LeaderFn = Arc<dyn Fn(f64, &DVector<f64>) -> DVector<f64> + Send + Sync>;

/// Autonomous or time-varying leader `x_L' = f(t, x_L)`.
#[derive(Clone)]
pub struct LeaderModel {
    name: String,
    dynamics: LeaderFn,
    x0: DVector<f64>,
}

impl fmt::Debug for LeaderModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LeaderModel")
            .field("name", &self.name)
            .field("x0", &self.x0.as_slice())
            .finish()
    }
}

impl LeaderModel {
    pub fn new<F>(name: impl Into<String>, dynamics: F, x0: DVector<f64>) -> Self
    where
        F: Fn(f64, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    {
        LeaderModel {
            name: name.into(),
            dynamics: Arc::new(dynamics),
            x0,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn x0(&self) -> &DVector<f64> {
        &self.x0
    }

    pub fn dim(&self) -> usize {
        self.x0.len()
    }

    #[inline]
    pub fn eval(&self, t: f64, x: &DVector<f64>) -> DVector<f64> {
        (self.dynamics)(t, x)
    }
}

/// A follower whose whole state is the stabilized block.
#[derive(Debug, Clone)]
pub struct FollowerAgent {
    pub system: PartitionedSystem,
    pub selection: BracketSelection,
    pub gamma: f64,
    pub offset: DVector<f64>,
}

impl FollowerAgent {
    pub fn new(
        system: PartitionedSystem,
        selection: BracketSelection,
        gamma: f64,
        offset: DVector<f64>,
    ) -> Result<Self> {
        if system.n2() != 0 {
            return Err(Error::InvalidSystem(format!(
                "follower system '{}' must have n2 = 0, got n2 = {}",
                system.name(),
                system.n2()
            )));
        }
        selection.check_against(&system)?;
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::InvalidParameter {
                invariant: "gamma > 0",
                detail: format!("agent gamma = {gamma}"),
            });
        }
        if offset.len() != system.n() {
            return Err(Error::DimensionMismatch {
                context: "agent offset",
                expected: system.n(),
                actual: offset.len(),
            });
        }
        Ok(FollowerAgent {
            system,
            selection,
            gamma,
            offset,
        })
    }

    pub fn dim(&self) -> usize {
        self.system.n()
    }
}

/// `u_l(t, x_l, x_L)` for one follower.
#[derive(Debug, Clone)]
pub struct FollowerController<'a> {
    agent: &'a FollowerAgent,
    epsilon: f64,
    cond_cap: f64,
}

impl FollowerController<'_> {
    /// Frozen control with `a = -gamma_l F_l(x_l)^-1 (x_l - x_L - d_l)`.
    pub fn hold(&self, x: &DVector<f64>, leader: &DVector<f64>) -> Result<HeldControl> {
        let sys = &self.agent.system;
        sys.check_state(x)?;
        if leader.len() != x.len() {
            return Err(Error::DimensionMismatch {
                context: "leader state",
                expected: x.len(),
                actual: leader.len(),
            });
        }
        let err = x - leader - &self.agent.offset;
        let a = coefficients_for_error(
            sys,
            &self.agent.selection,
            self.agent.gamma,
            self.cond_cap,
            x,
            &err,
        )?;
        Ok(HeldControl::from_coefficients(
            &self.agent.selection,
            sys.m(),
            self.epsilon,
            a,
        ))
    }

    pub fn control(&self, t: f64, x: &DVector<f64>, leader: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.hold(x, leader)?.at(t))
    }
}

/// Controller for `agent`; `gains` supplies the sampling period and conditioning cap,
/// the gain comes from the agent.
pub fn follower_controller<'a>(
    agent: &'a FollowerAgent,
    gains: &ControllerGains,
) -> FollowerController<'a> {
    FollowerController {
        agent,
        epsilon: gains.epsilon,
        cond_cap: gains.cond_cap,
    }
}

/// Outcome of one follower's simulation.
#[derive(Debug)]
pub struct AgentRun {
    pub trajectory: SampledTrajectory,
    /// Set when the agent stopped early; `trajectory` is then a prefix.
    pub failure: Option<Error>,
}

#[derive(Debug)]
pub struct FormationTrajectory {
    pub dense_times: Vec<f64>,
    pub leader_states: Vec<DVector<f64>>,
    pub offsets: Vec<DVector<f64>>,
    pub agents: Vec<AgentRun>,
}

impl FormationTrajectory {
    pub fn all_succeeded(&self) -> bool {
        self.agents.iter().all(|a| a.failure.is_none())
    }

    /// First agent failure, if any.
    pub fn first_failure(&self) -> Option<(usize, &Error)> {
        self.agents
            .iter()
            .enumerate()
            .find_map(|(i, a)| a.failure.as_ref().map(|e| (i, e)))
    }
}

/// `|x_l(t) - x_L(t) - d_l|` on the shared grid.
pub fn formation_error(traj: &FormationTrajectory, agent_index: usize) -> Result<Vec<f64>> {
    let run = traj
        .agents
        .get(agent_index)
        .ok_or_else(|| Error::InvalidParameter {
            invariant: "agent index in range",
            detail: format!("index {agent_index} of {} agents", traj.agents.len()),
        })?;
    let d = &traj.offsets[agent_index];
    Ok(run
        .trajectory
        .dense_states
        .iter()
        .zip(&traj.leader_states)
        .map(|(x, xl)| (x - xl - d).norm())
        .collect())
}

/// Grid indices that get recorded for a given stride.
fn recorded_indices(grid: &[Interval], stride: usize) -> Vec<usize> {
    let total = grid_steps(grid);
    let mut out: Vec<usize> = (0..total).filter(|k| k % stride == 0).collect();
    out.push(total);
    out
}

/// RK4 over the whole grid; returns the leader state at every grid point.
fn integrate_leader(leader: &LeaderModel, grid: &[Interval]) -> Result<Vec<DVector<f64>>> {
    let mut states = Vec::with_capacity(grid_steps(grid) + 1);
    let mut x = leader.x0.clone();
    if !x.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite {
            context: "leader initial state",
        });
    }
    states.push(x.clone());
    for iv in grid {
        let h = iv.step();
        let half = 0.5 * h;
        for i in 0..iv.steps {
            let t = iv.time(i);
            let k1 = leader.eval(t, &x);
            let k2 = leader.eval(t + half, &(&x + &k1 * half));
            let k3 = leader.eval(t + half, &(&x + &k2 * half));
            let k4 = leader.eval(t + h, &(&x + &k3 * h));
            x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
            let norm = x.norm();
            if !norm.is_finite() || norm > DIVERGENCE_BOUND {
                return Err(Error::Divergence {
                    t: iv.time(i + 1),
                    norm,
                });
            }
            states.push(x.clone());
        }
    }
    Ok(states)
}

struct AgentLoop<'a> {
    controller: FollowerController<'a>,
    leader: &'a [DVector<f64>],
    interval_start: &'a [usize],
}

impl SampledLoop for AgentLoop<'_> {
    fn hold(&self, j: usize, x: &DVector<f64>) -> Result<HeldControl> {
        let k = self.interval_start[j];
        self.controller.hold(x, &self.leader[k])
    }

    fn y_error(&self, k: usize, x: &DVector<f64>) -> f64 {
        (x - &self.leader[k] - &self.controller.agent.offset).norm()
    }
}

/// Simulates every follower against a shared leader path.
pub fn simulate_formation(
    agents: &[FollowerAgent],
    leader: &LeaderModel,
    x0s: &[DVector<f64>],
    gains: &ControllerGains,
    cfg: &SimConfig,
) -> Result<FormationTrajectory> {
    cfg.validate()?;
    if agents.is_empty() {
        return Err(Error::InvalidParameter {
            invariant: "at least one follower",
            detail: "no agents".into(),
        });
    }
    if x0s.len() != agents.len() {
        return Err(Error::DimensionMismatch {
            context: "agent initial states",
            expected: agents.len(),
            actual: x0s.len(),
        });
    }
    let p = leader.dim();
    for (agent, x0) in agents.iter().zip(x0s) {
        if agent.dim() != p {
            return Err(Error::DimensionMismatch {
                context: "agent state dimension",
                expected: p,
                actual: agent.dim(),
            });
        }
        agent.system.check_state(x0)?;
    }
    for agent in agents {
        if !cfg.resolves(&agent.selection) {
            log::warn!(
                "agent '{}' oscillations are under-resolved",
                agent.system.name()
            );
        }
    }

    let (grid, exact) = interval_grid(gains.epsilon, cfg.t_final, cfg.substeps_per_period);
    let leader_path = integrate_leader(leader, &grid)?;
    let interval_start: Vec<usize> = grid
        .iter()
        .scan(0usize, |k, iv| {
            let start = *k;
            *k += iv.steps;
            Some(start)
        })
        .chain(std::iter::once(grid_steps(&grid)))
        .collect();

    let runs: Vec<AgentRun> = agents
        .par_iter()
        .zip(x0s.par_iter())
        .map(|(agent, x0)| {
            let lp = AgentLoop {
                controller: follower_controller(agent, gains),
                leader: &leader_path,
                interval_start: &interval_start,
            };
            match integrate_sampled(
                &agent.system,
                gains.epsilon,
                &grid,
                exact,
                cfg.record_stride,
                x0,
                &lp,
            ) {
                Ok(trajectory) => AgentRun {
                    trajectory,
                    failure: None,
                },
                Err(f) => AgentRun {
                    trajectory: f.partial,
                    failure: Some(f.error),
                },
            }
        })
        .collect();

    let indices = recorded_indices(&grid, cfg.record_stride);
    let all_times: Vec<f64> = grid
        .iter()
        .flat_map(|iv| (0..iv.steps).map(move |i| iv.time(i)))
        .chain(grid.last().map(|iv| iv.end))
        .collect();
    Ok(FormationTrajectory {
        dense_times: indices.iter().map(|&k| all_times[k]).collect(),
        leader_states: indices.iter().map(|&k| leader_path[k].clone()).collect(),
        offsets: agents.iter().map(|a| a.offset.clone()).collect(),
        agents: runs,
    })
}

/// Whether each follower's gain exceeds `sup |f(t, x_L(t))| / rho` along the leader path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainCondition {
    pub rho: f64,
    pub sup_leader_speed: f64,
    pub required_gamma: f64,
    pub satisfied: Vec<bool>,
}

pub fn gain_condition(
    traj: &FormationTrajectory,
    leader: &LeaderModel,
    agents: &[FollowerAgent],
    rho: f64,
) -> Result<GainCondition> {
    if !(rho > 0.0) {
        return Err(Error::InvalidParameter {
            invariant: "rho > 0",
            detail: format!("rho = {rho}"),
        });
    }
    let sup = traj
        .dense_times
        .iter()
        .zip(&traj.leader_states)
        .map(|(&t, x)| leader.eval(t, x).norm())
        .fold(0.0, f64::max);
    let required = sup / rho;
    Ok(GainCondition {
        rho,
        sup_leader_speed: sup,
        required_gamma: required,
        satisfied: agents.iter().map(|a| a.gamma > required).collect(),
    })
}
