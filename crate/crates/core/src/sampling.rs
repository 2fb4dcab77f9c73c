//! Sample-and-hold closed-loop simulation and decay analysis.
//!
//! On each interval `[j eps, (j + 1) eps)` the control's state argument is
//! frozen at `x(j eps)` while its time argument runs with the integrator. The
//! interval is integrated with a fixed number of classical RK4 steps, so the
//! sampling instants always lie on the step grid.

use std::fmt;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::PartitionedSystem;
use crate::synthesis::{held_control, BracketSelection, ControllerGains, HeldControl};

/// States with a norm above this abort the simulation.
pub const DIVERGENCE_BOUND: f64 = 1e9;

/// RK4 steps per oscillation period of the fastest bracket frequency.
pub const DEFAULT_STEPS_PER_OSCILLATION: usize = 40;

/// Below this many steps per fastest oscillation a warning is logged.
pub const MIN_STEPS_PER_OSCILLATION: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub t_final: f64,
    pub substeps_per_period: usize,
    pub record_stride: usize,
}

impl SimConfig {
    pub fn new(t_final: f64, substeps_per_period: usize, record_stride: usize) -> Result<Self> {
        let cfg = SimConfig {
            t_final,
            substeps_per_period,
            record_stride,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Horizon of `50 eps ceil(1 / (gamma eps))` and `40 kappa_max` steps per interval.
    pub fn default_for(sel: &BracketSelection, gains: &ControllerGains) -> Self {
        let eps = gains.epsilon;
        SimConfig {
            t_final: 50.0 * eps * (1.0 / (gains.gamma * eps)).ceil(),
            substeps_per_period: default_substeps(sel),
            record_stride: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_final > 0.0 && self.t_final.is_finite()) {
            return Err(Error::InvalidParameter {
                invariant: "t_final > 0",
                detail: format!("t_final = {}", self.t_final),
            });
        }
        if self.substeps_per_period == 0 {
            return Err(Error::InvalidParameter {
                invariant: "substeps_per_period >= 1",
                detail: "zero sub-steps".into(),
            });
        }
        if self.record_stride == 0 {
            return Err(Error::InvalidParameter {
                invariant: "record_stride >= 1",
                detail: "zero stride".into(),
            });
        }
        Ok(())
    }

    /// Whether the fastest oscillation gets at least 20 steps per period.
    pub fn resolves(&self, sel: &BracketSelection) -> bool {
        let kmax = sel.kappa_max().max(1) as usize;
        self.substeps_per_period >= MIN_STEPS_PER_OSCILLATION * kmax
    }
}

pub fn default_substeps(sel: &BracketSelection) -> usize {
    DEFAULT_STEPS_PER_OSCILLATION * sel.kappa_max().max(1) as usize
}

/// One sampling interval of the step grid.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Interval {
    pub start: f64,
    pub end: f64,
    pub steps: usize,
}

impl Interval {
    #[inline]
    pub fn time(&self, i: usize) -> f64 {
        if i == self.steps {
            self.end
        } else {
            self.start + i as f64 * (self.end - self.start) / self.steps as f64
        }
    }

    #[inline]
    pub fn step(&self) -> f64 {
        (self.end - self.start) / self.steps as f64
    }
}

/// Splits `[0, t_final]` into sampling intervals. A trailing partial interval
/// gets proportionally fewer steps. Returns the intervals and whether `t_final`
/// is itself a sampling instant.
pub(crate) fn interval_grid(epsilon: f64, t_final: f64, substeps: usize) -> (Vec<Interval>, bool) {
    let ratio = t_final / epsilon;
    let rounded = ratio.round();
    let exact = (ratio - rounded).abs() <= 1e-9 * rounded.max(1.0);
    let full = if exact {
        rounded as usize
    } else {
        ratio.floor() as usize
    };
    let mut grid: Vec<Interval> = (0..full)
        .map(|j| Interval {
            start: j as f64 * epsilon,
            end: if exact && j + 1 == full {
                t_final
            } else {
                (j + 1) as f64 * epsilon
            },
            steps: substeps,
        })
        .collect();
    if !exact {
        let start = full as f64 * epsilon;
        let frac = (t_final - start) / epsilon;
        grid.push(Interval {
            start,
            end: t_final,
            steps: ((substeps as f64 * frac).ceil() as usize).max(1),
        });
    }
    (grid, exact)
}

/// Total number of steps on a grid.
pub(crate) fn grid_steps(grid: &[Interval]) -> usize {
    grid.iter().map(|iv| iv.steps).sum()
}

/// A sample-and-hold closed-loop solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledTrajectory {
    pub epsilon: f64,
    pub n1: usize,
    /// `tau_j = j eps` for `j = 0..=floor(t_final / eps)`.
    pub sample_times: Vec<f64>,
    pub sample_states: Vec<DVector<f64>>,
    /// `|y(tau_j) - y*|` at each sampling instant.
    pub sample_y_error: Vec<f64>,
    pub dense_times: Vec<f64>,
    pub dense_states: Vec<DVector<f64>>,
    pub dense_controls: Vec<DVector<f64>>,
    /// Index `j` of the sampling interval whose held state produced each control.
    pub dense_interval: Vec<usize>,
    /// `|y(t) - y*|` at each recorded point.
    pub y_error: Vec<f64>,
}

impl SampledTrajectory {
    fn empty(epsilon: f64, n1: usize) -> Self {
        SampledTrajectory {
            epsilon,
            n1,
            sample_times: Vec::new(),
            sample_states: Vec::new(),
            sample_y_error: Vec::new(),
            dense_times: Vec::new(),
            dense_states: Vec::new(),
            dense_controls: Vec::new(),
            dense_interval: Vec::new(),
            y_error: Vec::new(),
        }
    }

    pub fn final_state(&self) -> Option<&DVector<f64>> {
        self.dense_states.last()
    }

    pub fn final_time(&self) -> Option<f64> {
        self.dense_times.last().copied()
    }

    pub fn len(&self) -> usize {
        self.dense_times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dense_times.is_empty()
    }
}

/// A simulation that stopped early; `partial` holds everything computed before the failure.
#[derive(Debug)]
pub struct SimFailure {
    pub partial: SampledTrajectory,
    pub error: Error,
}

impl fmt::Display for SimFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "simulation stopped after {} recorded points: {}",
            self.partial.len(),
            self.error
        )
    }
}

impl std::error::Error for SimFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

impl From<SimFailure> for Error {
    fn from(f: SimFailure) -> Self {
        f.error
    }
}

/// Hooks the integration engine needs from a closed loop.
pub(crate) trait SampledLoop {
    /// Frozen control for interval `j` given the state at its start.
    fn hold(&self, j: usize, x: &DVector<f64>) -> Result<HeldControl>;
    /// Stabilized-block error at global grid point `k`.
    fn y_error(&self, k: usize, x: &DVector<f64>) -> f64;
}

#[inline]
fn rk4_step(
    sys: &PartitionedSystem,
    hold: &HeldControl,
    t: f64,
    h: f64,
    x: &DVector<f64>,
) -> DVector<f64> {
    let half = 0.5 * h;
    let k1 = sys.rhs(t, x, &hold.at(t));
    let k2 = sys.rhs(t + half, &(x + &k1 * half), &hold.at(t + half));
    let k3 = sys.rhs(t + half, &(x + &k2 * half), &hold.at(t + half));
    let k4 = sys.rhs(t + h, &(x + &k3 * h), &hold.at(t + h));
    x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

/// Integrates a sampled closed loop over `grid`.
pub(crate) fn integrate_sampled<L: SampledLoop>(
    sys: &PartitionedSystem,
    epsilon: f64,
    grid: &[Interval],
    final_is_sample: bool,
    record_stride: usize,
    x0: &DVector<f64>,
    lp: &L,
) -> std::result::Result<SampledTrajectory, SimFailure> {
    let mut traj = SampledTrajectory::empty(epsilon, sys.n1());
    if let Err(error) = sys.check_state(x0) {
        return Err(SimFailure {
            partial: traj,
            error,
        });
    }

    let mut x = x0.clone();
    let mut k = 0usize;
    for (j, iv) in grid.iter().enumerate() {
        let hold = match lp.hold(j, &x) {
            Ok(h) => h,
            Err(error) => {
                return Err(SimFailure {
                    partial: traj,
                    error,
                })
            }
        };
        let err = lp.y_error(k, &x);
        traj.sample_times.push(iv.start);
        traj.sample_states.push(x.clone());
        traj.sample_y_error.push(err);
        if k.is_multiple_of(record_stride) {
            record(&mut traj, iv.start, &x, hold.at(iv.start), j, err);
        }

        let h = iv.step();
        for i in 0..iv.steps {
            let t = iv.time(i);
            x = rk4_step(sys, &hold, t, h, &x);
            k += 1;
            let t_next = iv.time(i + 1);
            let norm = x.norm();
            if !norm.is_finite() || norm > DIVERGENCE_BOUND {
                let error = if norm.is_finite() {
                    Error::Divergence { t: t_next, norm }
                } else {
                    Error::NonFinite {
                        context: "closed-loop state",
                    }
                };
                return Err(SimFailure {
                    partial: traj,
                    error,
                });
            }
            let last_of_interval = i + 1 == iv.steps;
            let interior = !last_of_interval && k.is_multiple_of(record_stride);
            let unsampled_end = last_of_interval && j + 1 == grid.len() && !final_is_sample;
            if interior || unsampled_end {
                let err = lp.y_error(k, &x);
                record(&mut traj, t_next, &x, hold.at(t_next), j, err);
            }
        }
    }

    if final_is_sample {
        let j = grid.len();
        let t = grid.last().map_or(0.0, |iv| iv.end);
        let hold = match lp.hold(j, &x) {
            Ok(h) => h,
            Err(error) => {
                return Err(SimFailure {
                    partial: traj,
                    error,
                })
            }
        };
        let err = lp.y_error(k, &x);
        traj.sample_times.push(t);
        traj.sample_states.push(x.clone());
        traj.sample_y_error.push(err);
        record(&mut traj, t, &x, hold.at(t), j, err);
    }
    Ok(traj)
}

fn record(
    traj: &mut SampledTrajectory,
    t: f64,
    x: &DVector<f64>,
    u: DVector<f64>,
    interval: usize,
    err: f64,
) {
    traj.dense_times.push(t);
    traj.dense_states.push(x.clone());
    traj.dense_controls.push(u);
    traj.dense_interval.push(interval);
    traj.y_error.push(err);
}

struct SingleLoop<'a> {
    sys: &'a PartitionedSystem,
    sel: &'a BracketSelection,
    gains: &'a ControllerGains,
}

impl SampledLoop for SingleLoop<'_> {
    fn hold(&self, _j: usize, x: &DVector<f64>) -> Result<HeldControl> {
        held_control(self.sys, self.sel, self.gains, x)
    }

    fn y_error(&self, _k: usize, x: &DVector<f64>) -> f64 {
        (x.rows(0, self.sys.n1()) - &self.gains.y_star).norm()
    }
}

/// Sample-and-hold solution of the closed loop from `x0`.
pub fn simulate_pi_epsilon(
    sys: &PartitionedSystem,
    sel: &BracketSelection,
    gains: &ControllerGains,
    x0: &DVector<f64>,
    cfg: &SimConfig,
) -> std::result::Result<SampledTrajectory, SimFailure> {
    let precheck = cfg
        .validate()
        .and_then(|_| gains.validate())
        .and_then(|_| sel.check_against(sys))
        .and_then(|_| {
            if gains.y_star.len() == sys.n1() {
                Ok(())
            } else {
                Err(Error::DimensionMismatch {
                    context: "y_star",
                    expected: sys.n1(),
                    actual: gains.y_star.len(),
                })
            }
        });
    if let Err(error) = precheck {
        return Err(SimFailure {
            partial: SampledTrajectory::empty(gains.epsilon, sys.n1()),
            error,
        });
    }
    if !cfg.resolves(sel) {
        log::warn!(
            "{} sub-steps per period resolve the fastest oscillation (kappa = {}) with fewer than {} steps",
            cfg.substeps_per_period,
            sel.kappa_max(),
            MIN_STEPS_PER_OSCILLATION
        );
    }
    let (grid, exact) = interval_grid(gains.epsilon, cfg.t_final, cfg.substeps_per_period);
    log::debug!(
        "simulating {} over {} intervals, {} RK4 steps",
        sys.name(),
        grid.len(),
        grid_steps(&grid)
    );
    let lp = SingleLoop { sys, sel, gains };
    integrate_sampled(sys, gains.epsilon, &grid, exact, cfg.record_stride, x0, &lp)
}

/// Closed-form solution of `y' = -gamma (y - y*)` from `y0`.
pub fn averaged_reference(y0: &DVector<f64>, gains: &ControllerGains, t: f64) -> DVector<f64> {
    &gains.y_star + (y0 - &gains.y_star) * (-gains.gamma * t).exp()
}

mod infinite_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

/// Empirical exponential-decay summary of a trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayReport {
    pub rho: f64,
    /// First sampling instant after which the error stays within `rho`; infinite if never.
    /// Serialized as `null` when infinite.
    #[serde(with = "infinite_as_null")]
    pub t1: f64,
    pub lambda_fit: Option<f64>,
    pub zeta_fit: Option<f64>,
    pub monotone_fraction: f64,
    pub fit_samples: usize,
}

/// Fits `|y(tau_j) - y*| ~ zeta exp(-lambda tau_j)` over samples above `rho`.
pub fn decay_report(traj: &SampledTrajectory, rho: f64) -> Result<DecayReport> {
    if traj.sample_times.len() < 2 {
        return Err(Error::InvalidParameter {
            invariant: "at least 2 samples",
            detail: format!("trajectory has {} samples", traj.sample_times.len()),
        });
    }
    if !(rho >= 0.0 && rho.is_finite()) {
        return Err(Error::InvalidParameter {
            invariant: "rho >= 0",
            detail: format!("rho = {rho}"),
        });
    }

    // Last dense point above the floor; t1 is the first sampling instant after it.
    let last_violation = traj
        .y_error
        .iter()
        .zip(&traj.dense_times)
        .rev()
        .find(|(e, _)| **e > rho)
        .map(|(_, &t)| t);
    let t1 = traj
        .sample_times
        .iter()
        .zip(&traj.sample_y_error)
        .find(|(&t, &e)| e <= rho && last_violation.is_none_or(|tv| t > tv))
        .map_or(f64::INFINITY, |(&t, _)| t);

    let points: Vec<(f64, f64)> = traj
        .sample_times
        .iter()
        .zip(&traj.sample_y_error)
        .filter(|(_, &e)| e > rho && e > 0.0)
        .map(|(&t, &e)| (t, e.ln()))
        .collect();
    let (lambda_fit, zeta_fit) = if points.len() >= 3 {
        let (slope, intercept) = least_squares_line(&points);
        (Some(-slope), Some(intercept.exp()))
    } else {
        (None, None)
    };

    let pairs = traj.sample_y_error.windows(2);
    let n_pairs = pairs.len();
    let monotone = pairs.filter(|w| w[1] <= w[0]).count();

    Ok(DecayReport {
        rho,
        t1,
        lambda_fit,
        zeta_fit,
        monotone_fraction: monotone as f64 / n_pairs as f64,
        fit_samples: points.len(),
    })
}

fn least_squares_line(points: &[(f64, f64)]) -> (f64, f64) {
    let n = points.len() as f64;
    let mean_t = points.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_v = points.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut stt, mut stv) = (0.0, 0.0);
    for &(t, v) in points {
        stt += (t - mean_t) * (t - mean_t);
        stv += (t - mean_t) * (v - mean_v);
    }
    let slope = stv / stt;
    (slope, mean_v - slope * mean_t)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub epsilon: f64,
    /// `max_j |y(tau_j) - y_avg(tau_j)|`
    pub max_deviation: f64,
}

/// Deviation of the sampled closed loop from the averaged flow, one row per `epsilon`.
///
/// `substeps` defaults to the usual `40 kappa_max`. Rows run in parallel.
pub fn epsilon_sweep(
    sys: &PartitionedSystem,
    sel: &BracketSelection,
    gains_base: &ControllerGains,
    x0: &DVector<f64>,
    t_final: f64,
    eps_list: &[f64],
    substeps: Option<usize>,
) -> Result<Vec<SweepRow>> {
    if eps_list.is_empty() {
        return Err(Error::InvalidParameter {
            invariant: "eps_list non-empty",
            detail: "no epsilon values".into(),
        });
    }
    if eps_list.iter().any(|&e| !(e > 0.0 && e.is_finite())) {
        return Err(Error::InvalidParameter {
            invariant: "epsilon > 0",
            detail: format!("{eps_list:?}"),
        });
    }
    if eps_list.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidParameter {
            invariant: "eps_list strictly decreasing",
            detail: format!("{eps_list:?}"),
        });
    }
    let substeps = substeps.unwrap_or_else(|| default_substeps(sel));
    let y0 = sys.y_part(x0);
    eps_list
        .par_iter()
        .map(|&epsilon| {
            let gains = ControllerGains {
                epsilon,
                ..gains_base.clone()
            };
            let cfg = SimConfig::new(t_final, substeps, 1)?;
            let traj = simulate_pi_epsilon(sys, sel, &gains, x0, &cfg)?;
            let max_deviation = traj
                .sample_times
                .iter()
                .zip(&traj.sample_states)
                .map(|(&t, x)| (sys.y_part(x) - averaged_reference(&y0, &gains, t)).norm())
                .fold(0.0, f64::max);
            Ok(SweepRow {
                epsilon,
                max_deviation,
            })
        })
        .collect()
}
