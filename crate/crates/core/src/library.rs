//! Registry of named vector fields and leader dynamics.
//!
//! Scenario files refer to fields by name; arbitrary user fields are added
//! through [`FieldLibrary::register_field`] rather than through config.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{ControlField, PartitionedSystem};
use crate::multiagent::LeaderModel;

type LeaderDynamics = Arc<dyn Fn(f64, &DVector<f64>) -> DVector<f64> + Send + Sync>;

#[derive(Clone)]
struct LeaderEntry {
    /// `None` means the dynamics work in any dimension.
    dim: Option<usize>,
    dynamics: LeaderDynamics,
}

/// Named fields (with their state dimension) and leader vector fields.
#[derive(Clone, Default)]
pub struct FieldLibrary {
    fields: BTreeMap<String, (usize, ControlField)>,
    leaders: BTreeMap<String, LeaderEntry>,
}

impl FieldLibrary {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Library preloaded with the rolling-disc and unicycle fields and the
    /// figure-eight and stationary leaders.
    pub fn builtin() -> Self {
        let mut lib = Self::empty();
        lib.register_field("disc.roll", 4, disc_roll());
        lib.register_field("disc.turn", 4, constant_field("disc.turn", 4, 2));
        lib.register_field("unicycle.drive", 3, unicycle_drive());
        lib.register_field("unicycle.turn", 3, constant_field("unicycle.turn", 3, 2));
        lib.register_leader("figure-eight", Some(3), figure_eight);
        lib.register_leader("stationary", None, |_t, x: &DVector<f64>| {
            DVector::zeros(x.len())
        });
        lib
    }

    pub fn register_field(&mut self, name: impl Into<String>, dim: usize, field: ControlField) {
        self.fields.insert(name.into(), (dim, field));
    }

    pub fn register_leader<F>(&mut self, name: impl Into<String>, dim: Option<usize>, dynamics: F)
    where
        F: Fn(f64, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    {
        self.leaders.insert(
            name.into(),
            LeaderEntry {
                dim,
                dynamics: Arc::new(dynamics),
            },
        );
    }

    /// Looks up a field and its state dimension.
    pub fn field(&self, name: &str) -> Result<(usize, ControlField)> {
        self.fields
            .get(name)
            .cloned()
            .ok_or_else(|| Error::UnknownLibraryEntry {
                kind: "field",
                name: name.to_string(),
            })
    }

    pub fn field_names(&self) -> impl Iterator<Item = &str> {
        self.fields.keys().map(String::as_str)
    }

    pub fn leader_names(&self) -> impl Iterator<Item = &str> {
        self.leaders.keys().map(String::as_str)
    }

    /// Builds a system from named fields; all fields must share one dimension.
    pub fn system(
        &self,
        name: &str,
        field_names: &[String],
        n1: usize,
    ) -> Result<PartitionedSystem> {
        let mut dim = None;
        let mut fields = Vec::with_capacity(field_names.len());
        for fname in field_names {
            let (d, f) = self.field(fname)?;
            match dim {
                None => dim = Some(d),
                Some(prev) if prev != d => {
                    return Err(Error::DimensionMismatch {
                        context: "field library dimensions",
                        expected: prev,
                        actual: d,
                    })
                }
                _ => {}
            }
            fields.push(f);
        }
        let n = dim.ok_or_else(|| Error::InvalidSystem("no fields listed".into()))?;
        PartitionedSystem::new(name, n, n1, fields)
    }

    /// Leader model with dynamics `name` and initial state `x0`.
    pub fn leader(&self, name: &str, x0: DVector<f64>) -> Result<LeaderModel> {
        let entry = self
            .leaders
            .get(name)
            .ok_or_else(|| Error::UnknownLibraryEntry {
                kind: "leader",
                name: name.to_string(),
            })?;
        if let Some(d) = entry.dim {
            if d != x0.len() {
                return Err(Error::DimensionMismatch {
                    context: "leader initial state",
                    expected: d,
                    actual: x0.len(),
                });
            }
        }
        let dynamics = Arc::clone(&entry.dynamics);
        Ok(LeaderModel::new(name, move |t, x| dynamics(t, x), x0))
    }
}

/// Looks up a field from the built-in library.
pub fn field(name: &str) -> Result<ControlField> {
    FieldLibrary::builtin().field(name).map(|(_, f)| f)
}

fn disc_roll() -> ControlField {
    ControlField::new(
        "disc.roll",
        |x: &DVector<f64>| {
            let (s, c) = x[2].sin_cos();
            DVector::from_vec(vec![c, s, 0.0, 1.0])
        },
        |x: &DVector<f64>| {
            let (s, c) = x[2].sin_cos();
            let mut j = DMatrix::zeros(4, 4);
            j[(0, 2)] = -s;
            j[(1, 2)] = c;
            j
        },
    )
}

fn unicycle_drive() -> ControlField {
    ControlField::new(
        "unicycle.drive",
        |x: &DVector<f64>| {
            let (s, c) = x[2].sin_cos();
            DVector::from_vec(vec![c, s, 0.0])
        },
        |x: &DVector<f64>| {
            let (s, c) = x[2].sin_cos();
            let mut j = DMatrix::zeros(3, 3);
            j[(0, 2)] = -s;
            j[(1, 2)] = c;
            j
        },
    )
}

/// Unit vector `e_axis` in dimension `n`.
fn constant_field(name: &str, n: usize, axis: usize) -> ControlField {
    let mut v = DVector::zeros(n);
    v[axis] = 1.0;
    ControlField::new(
        name,
        move |_x: &DVector<f64>| v.clone(),
        move |_x: &DVector<f64>| DMatrix::zeros(n, n),
    )
}

/// Figure-eight leader: heading rate follows the curvature of the planar path
/// traced by the first two components. The denominator stays >= 0.4375.
pub fn figure_eight(t: f64, _x: &DVector<f64>) -> DVector<f64> {
    let (s, c) = (0.1 * t).sin_cos();
    let c2 = c * c;
    let heading_rate = -0.2 * s * (c2 + 0.5) / (4.0 * c2 * c2 - 3.0 * c2 + 1.0);
    DVector::from_vec(vec![0.2 * c, -0.2, heading_rate])
}

/// The rolling disc on the plane: `y = (x1, x2)` position, `z = (x3, x4)` angles.
pub fn rolling_disc_system() -> PartitionedSystem {
    PartitionedSystem::new(
        "rolling-disc",
        4,
        2,
        vec![disc_roll(), constant_field("disc.turn", 4, 2)],
    )
    .expect("static system definition")
}

/// Kinematic unicycle with the whole state stabilized (`n2 = 0`).
pub fn unicycle_system() -> PartitionedSystem {
    PartitionedSystem::new(
        "unicycle",
        3,
        3,
        vec![unicycle_drive(), constant_field("unicycle.turn", 3, 2)],
    )
    .expect("static system definition")
}

/// `count` deterministic uniform samples from the box `[lower, upper]`.
pub fn uniform_probes(lower: &[f64], upper: &[f64], count: usize, seed: u64) -> Vec<DVector<f64>> {
    assert_eq!(
        lower.len(),
        upper.len(),
        "probe box bounds differ in length"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            DVector::from_iterator(
                lower.len(),
                lower
                    .iter()
                    .zip(upper)
                    .map(|(&lo, &hi)| if hi > lo { rng.gen_range(lo..hi) } else { lo }),
            )
        })
        .collect()
}
