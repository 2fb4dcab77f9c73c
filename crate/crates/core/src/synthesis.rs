//! Extension matrix, steering coefficients and the oscillatory control law.
//!
//! Given selected fields `S1` and bracket pairs `S2`, the extension matrix
//! `F(x)` stacks the `y`-rows of `f_i(x)` for `i` in `S1` followed by the
//! `y`-rows of `[f_i1, f_i2](x)` for `(i1, i2)` in `S2`. The coefficients solve
//! `F(x) a = -gamma (y - y*)`. Each control then combines the constant part
//! `a_i` with, per bracket pair, a cosine on channel `i1` and a signed sine on
//! channel `i2` of amplitude `2 sqrt(pi kappa |a_i1i2| / eps)` and frequency
//! `kappa / eps`. Over one period these oscillations produce a net motion of
//! `eps * a_i1i2 * [f_i1, f_i2]`.

use std::collections::BTreeSet;
use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{bracket_of, PartitionedSystem};

/// Default bound on the condition number of the extension matrix.
pub const DEFAULT_COND_CAP: f64 = 1e6;

/// Fields and bracket pairs spanning the stabilized block, with a distinct
/// frequency multiplier `kappa` per pair. Indices are 1-based.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BracketSelection {
    s1: Vec<usize>,
    s2: Vec<(usize, usize)>,
    kappa: Vec<u32>,
}

impl BracketSelection {
    pub fn new(s1: Vec<usize>, s2: Vec<(usize, usize)>, kappa: Vec<u32>) -> Result<Self> {
        if kappa.len() != s2.len() {
            return Err(Error::SelectionShape {
                invariant: "one kappa per bracket pair",
                detail: format!("{} pairs but {} kappa values", s2.len(), kappa.len()),
            });
        }
        if let Some(&(i, _)) = s2.iter().find(|(i1, i2)| i1 == i2) {
            return Err(Error::SelectionShape {
                invariant: "i1 != i2",
                detail: format!("pair ({i}, {i}) brackets a field with itself"),
            });
        }
        if kappa.contains(&0) {
            return Err(Error::SelectionShape {
                invariant: "kappa positive",
                detail: format!("kappa values {kappa:?}"),
            });
        }
        let distinct: BTreeSet<_> = kappa.iter().collect();
        if distinct.len() != kappa.len() {
            return Err(Error::SelectionShape {
                invariant: "kappa pairwise distinct",
                detail: format!("kappa values {kappa:?}"),
            });
        }
        if s1
            .iter()
            .chain(s2.iter().flat_map(|(a, b)| [a, b]))
            .any(|&i| i == 0)
        {
            return Err(Error::SelectionShape {
                invariant: "indices are 1-based",
                detail: "field index 0 refers to the drift".into(),
            });
        }
        Ok(BracketSelection { s1, s2, kappa })
    }

    /// Selection with `kappa = 1, 2, 3, ...` in pair order.
    pub fn with_default_kappa(s1: Vec<usize>, s2: Vec<(usize, usize)>) -> Result<Self> {
        let kappa = (1..=s2.len() as u32).collect();
        Self::new(s1, s2, kappa)
    }

    pub fn s1(&self) -> &[usize] {
        &self.s1
    }
    pub fn s2(&self) -> &[(usize, usize)] {
        &self.s2
    }
    pub fn kappa(&self) -> &[u32] {
        &self.kappa
    }

    /// `|S1| + |S2|`.
    pub fn len(&self) -> usize {
        self.s1.len() + self.s2.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn kappa_max(&self) -> u32 {
        self.kappa.iter().copied().max().unwrap_or(0)
    }

    /// Checks that the selection fits `sys`: `|S1| + |S2| = n1` and indices in `1..=m`.
    pub fn check_against(&self, sys: &PartitionedSystem) -> Result<()> {
        if self.len() != sys.n1() {
            return Err(Error::SelectionShape {
                invariant: "|S1| + |S2| = n1",
                detail: format!(
                    "|S1| + |S2| = {} + {} = {} but n1 = {}",
                    self.s1.len(),
                    self.s2.len(),
                    self.len(),
                    sys.n1()
                ),
            });
        }
        let m = sys.m();
        if let Some(&i) = self
            .s1
            .iter()
            .chain(self.s2.iter().flat_map(|(a, b)| [a, b]))
            .find(|&&i| i > m)
        {
            return Err(Error::SelectionShape {
                invariant: "indices within 1..=m",
                detail: format!("index {i} but system has m = {m} fields"),
            });
        }
        Ok(())
    }
}

/// Sampling period, gain, target and conditioning bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerGains {
    pub epsilon: f64,
    pub gamma: f64,
    pub y_star: DVector<f64>,
    pub cond_cap: f64,
}

impl ControllerGains {
    pub fn new(epsilon: f64, gamma: f64, y_star: DVector<f64>) -> Result<Self> {
        Self::with_cond_cap(epsilon, gamma, y_star, DEFAULT_COND_CAP)
    }

    pub fn with_cond_cap(
        epsilon: f64,
        gamma: f64,
        y_star: DVector<f64>,
        cond_cap: f64,
    ) -> Result<Self> {
        let gains = ControllerGains {
            epsilon,
            gamma,
            y_star,
            cond_cap,
        };
        gains.validate()?;
        Ok(gains)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidParameter {
                invariant: "epsilon > 0",
                detail: format!("epsilon = {}", self.epsilon),
            });
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidParameter {
                invariant: "gamma > 0",
                detail: format!("gamma = {}", self.gamma),
            });
        }
        if !(self.cond_cap > 1.0) {
            return Err(Error::InvalidParameter {
                invariant: "cond_cap > 1",
                detail: format!("cond_cap = {}", self.cond_cap),
            });
        }
        if !self.y_star.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { context: "y_star" });
        }
        Ok(())
    }

    fn check_target(&self, sys: &PartitionedSystem) -> Result<()> {
        if self.y_star.len() != sys.n1() {
            return Err(Error::DimensionMismatch {
                context: "y_star",
                expected: sys.n1(),
                actual: self.y_star.len(),
            });
        }
        Ok(())
    }
}

/// Empirical check of the rank condition over a set of probe states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankCertificate {
    pub sampled_states: Vec<Vec<f64>>,
    pub worst_condition: f64,
    pub rank_ok: bool,
    /// Largest spectral norm of `F(x)^-1` seen over the probes.
    pub alpha_estimate: f64,
}

/// The `n1 x n1` extension matrix at `x`, columns in `S1` then `S2` order.
pub fn extension_matrix(
    sys: &PartitionedSystem,
    sel: &BracketSelection,
    x: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    sys.check_state(x)?;
    sel.check_against(sys)?;
    let f = extension_matrix_unchecked(sys, sel, x);
    if !f.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite {
            context: "extension matrix",
        });
    }
    Ok(f)
}

pub(crate) fn extension_matrix_unchecked(
    sys: &PartitionedSystem,
    sel: &BracketSelection,
    x: &DVector<f64>,
) -> DMatrix<f64> {
    let n1 = sys.n1();
    let fields = sys.fields();
    let mut f = DMatrix::zeros(n1, n1);
    let mut col = 0;
    for &i in &sel.s1 {
        let v = fields[i - 1].eval(x);
        f.set_column(col, &v.rows(0, n1));
        col += 1;
    }
    for &(i1, i2) in &sel.s2 {
        let v = bracket_of(&fields[i1 - 1], &fields[i2 - 1], x);
        f.set_column(col, &v.rows(0, n1));
        col += 1;
    }
    f
}

/// 2-norm condition number; infinite for singular matrices.
pub fn condition_number(f: &DMatrix<f64>) -> f64 {
    let sv = f.singular_values();
    let max = sv.max();
    let min = sv.min();
    if min == 0.0 || !min.is_finite() {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Solves `F(x) a = -gamma * err` after checking the conditioning of `F(x)`.
pub(crate) fn coefficients_for_error(
    sys: &PartitionedSystem,
    sel: &BracketSelection,
    gamma: f64,
    cond_cap: f64,
    x: &DVector<f64>,
    err: &DVector<f64>,
) -> Result<DVector<f64>> {
    let f = extension_matrix_unchecked(sys, sel, x);
    let degenerate = |condition: f64| Error::RankDegeneracy {
        state: x.as_slice().to_vec(),
        condition,
        cap: cond_cap,
    };
    if !f.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite {
            context: "extension matrix",
        });
    }
    let cond = condition_number(&f);
    if !(cond <= cond_cap) {
        return Err(degenerate(cond));
    }
    let rhs = err * -gamma;
    let a = f
        .lu()
        .solve(&rhs)
        .ok_or_else(|| degenerate(f64::INFINITY))?;
    if !a.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite {
            context: "steering coefficients",
        });
    }
    Ok(a)
}

/// `a(x) = -gamma F(x)^-1 (y - y*)`, ordered as `S1` then `S2`.
pub fn steering_coefficients(
    sys: &PartitionedSystem,
    sel: &BracketSelection,
    gains: &ControllerGains,
    x: &DVector<f64>,
) -> Result<DVector<f64>> {
    sys.check_state(x)?;
    sel.check_against(sys)?;
    gains.check_target(sys)?;
    let err = sys.y_part(x) - &gains.y_star;
    coefficients_for_error(sys, sel, gains.gamma, gains.cond_cap, x, &err)
}

/// One bracket pair's oscillation, fixed for a sampling interval.
#[derive(Debug, Clone, PartialEq)]
pub struct Oscillation {
    /// 0-based control channels.
    pub cos_channel: usize,
    pub sin_channel: usize,
    pub kappa: u32,
    /// `2 sqrt(pi kappa |a|) / sqrt(eps)`
    pub amplitude: f64,
    /// `sign(a)`, with `sign(0) = 0`
    pub sign: f64,
}

/// The control law with its state argument frozen: a function of time only.
#[derive(Debug, Clone, PartialEq)]
pub struct HeldControl {
    epsilon: f64,
    coefficients: DVector<f64>,
    constant: DVector<f64>,
    oscillations: Vec<Oscillation>,
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

impl HeldControl {
    /// Builds the frozen control from coefficients `a` ordered as `S1` then `S2`.
    pub fn from_coefficients(
        sel: &BracketSelection,
        m: usize,
        epsilon: f64,
        a: DVector<f64>,
    ) -> Self {
        let mut constant = DVector::zeros(m);
        for (j, &i) in sel.s1.iter().enumerate() {
            constant[i - 1] += a[j];
        }
        let offset = sel.s1.len();
        let inv_sqrt_eps = 1.0 / epsilon.sqrt();
        let oscillations = sel
            .s2
            .iter()
            .zip(&sel.kappa)
            .enumerate()
            .map(|(j, (&(i1, i2), &kappa))| {
                let aij = a[offset + j];
                Oscillation {
                    cos_channel: i1 - 1,
                    sin_channel: i2 - 1,
                    kappa,
                    amplitude: 2.0 * (PI * kappa as f64 * aij.abs()).sqrt() * inv_sqrt_eps,
                    sign: sign(aij),
                }
            })
            .collect();
        HeldControl {
            epsilon,
            coefficients: a,
            constant,
            oscillations,
        }
    }

    pub fn coefficients(&self) -> &DVector<f64> {
        &self.coefficients
    }

    pub fn oscillations(&self) -> &[Oscillation] {
        &self.oscillations
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Control value at absolute time `t`.
    pub fn at(&self, t: f64) -> DVector<f64> {
        let mut u = self.constant.clone();
        self.add_oscillations(t, &mut u);
        u
    }

    /// Only the zero-mean oscillatory part at time `t`.
    pub fn oscillatory_at(&self, t: f64) -> DVector<f64> {
        let mut u = DVector::zeros(self.constant.len());
        self.add_oscillations(t, &mut u);
        u
    }

    #[inline]
    fn add_oscillations(&self, t: f64, u: &mut DVector<f64>) {
        if self.oscillations.is_empty() {
            return;
        }
        // Reducing to the phase within the period keeps the control exactly
        // eps-periodic wherever t / eps is representable.
        let s = t / self.epsilon;
        let phase = s - s.floor();
        for osc in &self.oscillations {
            if osc.amplitude == 0.0 {
                continue;
            }
            let (sn, cs) = (2.0 * PI * osc.kappa as f64 * phase).sin_cos();
            u[osc.cos_channel] += osc.amplitude * cs;
            u[osc.sin_channel] += osc.amplitude * osc.sign * sn;
        }
    }
}

/// Frozen control at the held state `x_hold`.
pub fn held_control(
    sys: &PartitionedSystem,
    sel: &BracketSelection,
    gains: &ControllerGains,
    x_hold: &DVector<f64>,
) -> Result<HeldControl> {
    let a = steering_coefficients(sys, sel, gains, x_hold)?;
    Ok(HeldControl::from_coefficients(
        sel,
        sys.m(),
        gains.epsilon,
        a,
    ))
}

/// `u(t, x_hold)`: the control at absolute time `t` with the state argument frozen.
pub fn control_value(
    sys: &PartitionedSystem,
    sel: &BracketSelection,
    gains: &ControllerGains,
    t: f64,
    x_hold: &DVector<f64>,
) -> Result<DVector<f64>> {
    Ok(held_control(sys, sel, gains, x_hold)?.at(t))
}

/// Evaluates `F` at every probe and records the worst conditioning seen.
pub fn validate_selection(
    sys: &PartitionedSystem,
    sel: &BracketSelection,
    probes: &[DVector<f64>],
    gains: &ControllerGains,
) -> Result<RankCertificate> {
    sel.check_against(sys)?;
    if probes.is_empty() {
        return Err(Error::InvalidParameter {
            invariant: "probes non-empty",
            detail: "no probe states given".into(),
        });
    }
    let mut worst_condition: f64 = 0.0;
    let mut alpha_estimate: f64 = 0.0;
    let mut all_inverted = true;
    for x in probes {
        sys.check_state(x)?;
        let f = extension_matrix_unchecked(sys, sel, x);
        let sv = f.singular_values();
        let (max, min) = (sv.max(), sv.min());
        if min > 0.0 && min.is_finite() && max.is_finite() {
            worst_condition = worst_condition.max(max / min);
            alpha_estimate = alpha_estimate.max(1.0 / min);
        } else {
            all_inverted = false;
            worst_condition = f64::INFINITY;
            alpha_estimate = f64::INFINITY;
        }
        if f.lu().try_inverse().is_none() {
            all_inverted = false;
        }
    }
    Ok(RankCertificate {
        sampled_states: probes.iter().map(|x| x.as_slice().to_vec()).collect(),
        worst_condition,
        rank_ok: all_inverted && worst_condition <= gains.cond_cap,
        alpha_estimate,
    })
}
