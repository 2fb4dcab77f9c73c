//! Partitioned control-affine systems
//!
//! A system has the form `x' = f0(t, x) + sum_k f_k(x) u_k` with the state split
//! as `x = (y, z)`: `y` holds the first `n1` entries (the block to stabilize) and
//! `z` the remaining `n2`. Control fields carry analytic Jacobians, which the
//! bracket computations rely on. Finite differences are provided only as an
//! independent check of those Jacobians.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type DriftFn = Arc<dyn Fn(f64, &DVector<f64>) -> DVector<f64> + Send + Sync>;
pub type FieldFn = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
pub type JacobianFn = Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;
pub type DomainFn = Arc<dyn Fn(&DVector<f64>) -> bool + Send + Sync>;

/// Default central-difference step.
pub const DEFAULT_FD_STEP: f64 = 1e-6;

/// A control vector field `f_k` together with its analytic Jacobian.
#[derive(Clone)]
pub struct ControlField {
    name: String,
    eval: FieldFn,
    jacobian: JacobianFn,
}

impl ControlField {
    pub fn new<F, J>(name: impl Into<String>, eval: F, jacobian: J) -> Self
    where
        F: Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        J: Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    {
        ControlField {
            name: name.into(),
            eval: Arc::new(eval),
            jacobian: Arc::new(jacobian),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    #[inline]
    pub fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.eval)(x)
    }

    #[inline]
    pub fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        (self.jacobian)(x)
    }

    /// The same field multiplied by a constant.
    pub fn scaled(&self, c: f64) -> ControlField {
        let eval = Arc::clone(&self.eval);
        let jac = Arc::clone(&self.jacobian);
        ControlField {
            name: format!("{}*{}", c, self.name),
            eval: Arc::new(move |x| eval(x) * c),
            jacobian: Arc::new(move |x| jac(x) * c),
        }
    }
}

impl fmt::Debug for ControlField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ControlField")
            .field("name", &self.name)
            .finish()
    }
}

/// Control-affine system with a declared `y`/`z` partition.
#[derive(Clone)]
pub struct PartitionedSystem {
    name: String,
    n: usize,
    n1: usize,
    drift: Option<DriftFn>,
    fields: Vec<ControlField>,
    domain: Option<DomainFn>,
}

impl fmt::Debug for PartitionedSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PartitionedSystem")
            .field("name", &self.name)
            .field("n", &self.n)
            .field("n1", &self.n1)
            .field("m", &self.fields.len())
            .field("has_drift", &self.drift.is_some())
            .field("fields", &self.fields)
            .finish()
    }
}

impl PartitionedSystem {
    /// Driftless system of dimension `n` whose first `n1` entries form the stabilized block.
    pub fn new(
        name: impl Into<String>,
        n: usize,
        n1: usize,
        fields: Vec<ControlField>,
    ) -> Result<Self> {
        if n1 == 0 || n1 > n {
            return Err(Error::InvalidSystem(format!(
                "need 1 <= n1 <= n, got n1 = {n1}, n = {n}"
            )));
        }
        if fields.is_empty() {
            return Err(Error::InvalidSystem(
                "at least one control field required".into(),
            ));
        }
        Ok(PartitionedSystem {
            name: name.into(),
            n,
            n1,
            drift: None,
            fields,
            domain: None,
        })
    }

    pub fn with_drift<F>(mut self, drift: F) -> Self
    where
        F: Fn(f64, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    {
        self.drift = Some(Arc::new(drift));
        self
    }

    pub fn with_domain<F>(mut self, inside: F) -> Self
    where
        F: Fn(&DVector<f64>) -> bool + Send + Sync + 'static,
    {
        self.domain = Some(Arc::new(inside));
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }
    pub fn n(&self) -> usize {
        self.n
    }
    pub fn n1(&self) -> usize {
        self.n1
    }
    pub fn n2(&self) -> usize {
        self.n - self.n1
    }
    pub fn m(&self) -> usize {
        self.fields.len()
    }
    pub fn has_drift(&self) -> bool {
        self.drift.is_some()
    }
    pub fn fields(&self) -> &[ControlField] {
        &self.fields
    }

    /// Control field `k`, 1-based.
    pub fn field(&self, k: usize) -> Result<&ControlField> {
        if k == 0 || k > self.fields.len() {
            return Err(Error::FieldIndex {
                index: k,
                m: self.fields.len(),
            });
        }
        Ok(&self.fields[k - 1])
    }

    /// `y`, the first `n1` entries of a state.
    pub fn y_part(&self, x: &DVector<f64>) -> DVector<f64> {
        x.rows(0, self.n1).into_owned()
    }

    pub fn in_domain(&self, x: &DVector<f64>) -> bool {
        self.domain.as_ref().is_none_or(|d| d(x))
    }

    /// Checks dimension and finiteness of a state.
    pub fn check_state(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.n {
            return Err(Error::DimensionMismatch {
                context: "state",
                expected: self.n,
                actual: x.len(),
            });
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { context: "state" });
        }
        Ok(())
    }

    /// Evaluates `f_field_id` at `(t, x)`; index 0 is the drift, `1..=m` the control fields.
    pub fn eval_field(&self, field_id: usize, t: f64, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_state(x)?;
        let v = if field_id == 0 {
            self.drift_at(t, x)
        } else {
            self.field(field_id)?.eval(x)
        };
        self.check_vector(v, "field evaluation")
    }

    /// Analytic Jacobian of control field `field_id` (1-based).
    pub fn jacobian(&self, field_id: usize, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_state(x)?;
        let jac = self.field(field_id)?.jacobian(x);
        if jac.nrows() != self.n || jac.ncols() != self.n {
            return Err(Error::DimensionMismatch {
                context: "jacobian",
                expected: self.n,
                actual: jac.nrows(),
            });
        }
        if !jac.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                context: "jacobian",
            });
        }
        Ok(jac)
    }

    /// `[f_j1, f_j2](x) = (df_j2/dx) f_j1 - (df_j1/dx) f_j2`, from the analytic Jacobians.
    pub fn lie_bracket(&self, j1: usize, j2: usize, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_state(x)?;
        let f = self.field(j1)?;
        let g = self.field(j2)?;
        let v = bracket_of(f, g, x);
        self.check_vector(v, "lie bracket")
    }

    #[inline]
    pub(crate) fn drift_at(&self, t: f64, x: &DVector<f64>) -> DVector<f64> {
        match &self.drift {
            Some(d) => d(t, x),
            None => DVector::zeros(self.n),
        }
    }

    /// Right-hand side `f0(t, x) + sum_k f_k(x) u_k` without validation.
    pub(crate) fn rhs(&self, t: f64, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let mut dx = self.drift_at(t, x);
        for (f, &uk) in self.fields.iter().zip(u.iter()) {
            if uk != 0.0 {
                dx.axpy(uk, &f.eval(x), 1.0);
            }
        }
        dx
    }

    /// Largest discrepancy between analytic and central-difference Jacobians over `probes`,
    /// measured relative to `max(1, |J|_max)`. Errors if it exceeds `rel_tol`.
    pub fn check_jacobians(&self, probes: &[DVector<f64>], rel_tol: f64) -> Result<f64> {
        let mut worst = 0.0_f64;
        for x in probes {
            for k in 1..=self.m() {
                let analytic = self.jacobian(k, x)?;
                let field = self.field(k)?;
                let numeric = finite_diff_jacobian(|p| field.eval(p), x, DEFAULT_FD_STEP)?;
                let scale = analytic.amax().max(1.0);
                let err = (&analytic - &numeric).amax() / scale;
                worst = worst.max(err);
                if err > rel_tol {
                    return Err(Error::InvalidSystem(format!(
                        "analytic jacobian of field {k} ({}) disagrees with finite differences \
                         by {err:e} at x = {:?}",
                        field.name(),
                        x.as_slice()
                    )));
                }
            }
        }
        Ok(worst)
    }

    fn check_vector(&self, v: DVector<f64>, context: &'static str) -> Result<DVector<f64>> {
        if v.len() != self.n {
            return Err(Error::DimensionMismatch {
                context,
                expected: self.n,
                actual: v.len(),
            });
        }
        if !v.iter().all(|e| e.is_finite()) {
            return Err(Error::NonFinite { context });
        }
        Ok(v)
    }
}

#[inline]
pub(crate) fn bracket_of(f: &ControlField, g: &ControlField, x: &DVector<f64>) -> DVector<f64> {
    let fx = f.eval(x);
    let gx = g.eval(x);
    g.jacobian(x) * fx - f.jacobian(x) * gx
}

/// Central-difference Jacobian; column `i` is `(f(x + h e_i) - f(x - h e_i)) / 2h`.
pub fn finite_diff_jacobian<F>(field: F, x: &DVector<f64>, h: f64) -> Result<DMatrix<f64>>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidParameter {
            invariant: "h > 0",
            detail: format!("finite-difference step {h}"),
        });
    }
    let n = x.len();
    let rows = field(x).len();
    let mut jac = DMatrix::zeros(rows, n);
    let mut xp = x.clone();
    for i in 0..n {
        let xi = x[i];
        xp[i] = xi + h;
        let fp = field(&xp);
        xp[i] = xi - h;
        let fm = field(&xp);
        xp[i] = xi;
        jac.set_column(i, &((fp - fm) / (2.0 * h)));
    }
    if !jac.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite {
            context: "finite-difference jacobian",
        });
    }
    Ok(jac)
}

/// Lie bracket `[f, g]` composed from finite-difference Jacobians only.
pub fn finite_diff_bracket<F, G>(f: F, g: G, x: &DVector<f64>, h: f64) -> Result<DVector<f64>>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
    G: Fn(&DVector<f64>) -> DVector<f64>,
{
    let jf = finite_diff_jacobian(&f, x, h)?;
    let jg = finite_diff_jacobian(&g, x, h)?;
    Ok(jg * f(x) - jf * g(x))
}
