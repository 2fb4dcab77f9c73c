//! Built-in scenarios and the TOML scenario format.
//!
//! A scenario file names its vector fields from a [`FieldLibrary`]; it never
//! contains expressions. Single-system scenarios carry `[system]`,
//! `[selection]` and `[initial]` tables; formation scenarios carry `[leader]`
//! and one `[[agents]]` table per follower. See `scenarios/*.toml` for the two
//! shipped examples.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::library::{uniform_probes, FieldLibrary};
use crate::model::PartitionedSystem;
use crate::multiagent::{FollowerAgent, LeaderModel};
use crate::sampling::{default_substeps, SimConfig};
use crate::synthesis::{
    condition_number, extension_matrix, validate_selection, BracketSelection, ControllerGains,
    RankCertificate, DEFAULT_COND_CAP,
};

pub const BUILTIN_NAMES: [&str; 2] = ["rolling-disc", "unicycle-leader"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    SingleSystem,
    Formation,
}

fn default_cond_cap() -> f64 {
    DEFAULT_COND_CAP
}
fn default_stride() -> usize {
    1
}
fn default_probe_count() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainsSection {
    pub epsilon: f64,
    pub gamma: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y_star: Option<Vec<f64>>,
    #[serde(default = "default_cond_cap")]
    pub cond_cap: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_final: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub substeps_per_period: Option<usize>,
    #[serde(default = "default_stride")]
    pub record_stride: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    pub fields: Vec<String>,
    pub n1: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionSection {
    pub s1: Vec<usize>,
    pub s2: Vec<[usize; 2]>,
    /// Defaults to `1, 2, 3, ...` in pair order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<Vec<u32>>,
}

impl SelectionSection {
    fn build(&self) -> Result<BracketSelection> {
        let s2 = self.s2.iter().map(|p| (p[0], p[1])).collect();
        match &self.kappa {
            Some(k) => BracketSelection::new(self.s1.clone(), s2, k.clone()),
            None => BracketSelection::with_default_kappa(self.s1.clone(), s2),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    pub x0: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LeaderSection {
    pub dynamics: String,
    pub x0: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSection {
    pub fields: Vec<String>,
    pub selection: SelectionSection,
    /// Defaults to the scenario gain.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    pub offset: Vec<f64>,
    pub x0: Vec<f64>,
}

/// Box the rank condition is checked on before any simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeSection {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    #[serde(default = "default_probe_count")]
    pub count: usize,
    #[serde(default)]
    pub seed: u64,
}

/// Thresholds used by acceptance runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpectedSection {
    pub rho: f64,
    /// Time by which the error must be within `rho` for the rest of the run.
    pub settle_time: f64,
    /// Window over which the free coordinates must be nearly constant.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub still_window: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub still_tolerance: Option<f64>,
}

/// On-disk form of a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub kind: ScenarioKind,
    pub gains: GainsSection,
    #[serde(default)]
    pub sim: SimSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system: Option<SystemSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selection: Option<SelectionSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<InitialSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub leader: Option<LeaderSection>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub agents: Vec<AgentSection>,
    pub probe: ProbeSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected: Option<ExpectedSection>,
}

#[derive(Debug, Clone)]
pub struct SingleSetup {
    pub system: PartitionedSystem,
    pub selection: BracketSelection,
    pub x0: DVector<f64>,
    pub certificate: RankCertificate,
}

#[derive(Debug, Clone)]
pub struct FormationSetup {
    pub agents: Vec<FollowerAgent>,
    pub leader: LeaderModel,
    pub x0s: Vec<DVector<f64>>,
    pub certificates: Vec<RankCertificate>,
}

#[derive(Debug, Clone)]
pub enum Setup {
    Single(SingleSetup),
    Formation(FormationSetup),
}

/// A validated scenario ready to simulate.
#[derive(Debug, Clone)]
pub struct ScenarioBundle {
    pub config: ScenarioConfig,
    pub gains: ControllerGains,
    pub sim: SimConfig,
    pub setup: Setup,
}

impl PartialEq for ScenarioBundle {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
    }
}

/// Command-line style overrides applied on top of a scenario.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Overrides {
    pub epsilon: Option<f64>,
    pub gamma: Option<f64>,
    pub t_final: Option<f64>,
    pub substeps: Option<usize>,
}

impl ScenarioBundle {
    pub fn name(&self) -> &str {
        &self.config.name
    }

    pub fn kind(&self) -> ScenarioKind {
        self.config.kind
    }

    pub fn expected(&self) -> Option<&ExpectedSection> {
        self.config.expected.as_ref()
    }

    /// Re-validates the scenario with overrides applied.
    pub fn with_overrides(&self, ov: &Overrides, lib: &FieldLibrary) -> Result<ScenarioBundle> {
        let mut cfg = self.config.clone();
        if let Some(e) = ov.epsilon {
            cfg.gains.epsilon = e;
        }
        if let Some(g) = ov.gamma {
            cfg.gains.gamma = g;
            for a in &mut cfg.agents {
                a.gamma = Some(g);
            }
        }
        if let Some(t) = ov.t_final {
            cfg.sim.t_final = Some(t);
        }
        if let Some(s) = ov.substeps {
            cfg.sim.substeps_per_period = Some(s);
        }
        ScenarioBundle::from_config(cfg, lib)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(&self.config).map_err(|e| Error::Serialize(e.to_string()))
    }

    /// Validates `cfg` against `lib` and resolves it into systems and controllers.
    pub fn from_config(cfg: ScenarioConfig, lib: &FieldLibrary) -> Result<ScenarioBundle> {
        match cfg.kind {
            ScenarioKind::SingleSystem => resolve_single(cfg, lib),
            ScenarioKind::Formation => resolve_formation(cfg, lib),
        }
    }
}

fn missing(section: &'static str, kind: &str) -> Error {
    Error::Parse(format!("{kind} scenario requires a [{section}] table"))
}

fn probes(cfg: &ProbeSection, dim: usize) -> Result<Vec<DVector<f64>>> {
    if cfg.lower.len() != dim || cfg.upper.len() != dim {
        return Err(Error::DimensionMismatch {
            context: "probe box",
            expected: dim,
            actual: cfg.lower.len().min(cfg.upper.len()),
        });
    }
    if cfg.lower.iter().zip(&cfg.upper).any(|(lo, hi)| !(lo <= hi)) {
        return Err(Error::InvalidParameter {
            invariant: "probe lower <= upper",
            detail: format!("{:?} / {:?}", cfg.lower, cfg.upper),
        });
    }
    if cfg.count == 0 {
        return Err(Error::InvalidParameter {
            invariant: "probes non-empty",
            detail: "probe count is 0".into(),
        });
    }
    Ok(uniform_probes(&cfg.lower, &cfg.upper, cfg.count, cfg.seed))
}

fn certify(
    sys: &PartitionedSystem,
    sel: &BracketSelection,
    probe_states: &[DVector<f64>],
    gains: &ControllerGains,
) -> Result<RankCertificate> {
    let cert = validate_selection(sys, sel, probe_states, gains)?;
    if !cert.rank_ok {
        let mut worst = (&probe_states[0], f64::NEG_INFINITY);
        for x in probe_states {
            let cond = condition_number(&extension_matrix(sys, sel, x)?);
            if cond > worst.1 {
                worst = (x, cond);
            }
        }
        let (state, condition) = worst;
        log::error!(
            "selection for '{}' fails the rank condition on its probe box",
            sys.name()
        );
        return Err(Error::RankDegeneracy {
            state: state.iter().copied().collect(),
            condition,
            cap: gains.cond_cap,
        });
    }
    Ok(cert)
}

fn sim_config(
    cfg: &SimSection,
    sel: &[&BracketSelection],
    gains: &ControllerGains,
) -> Result<SimConfig> {
    let kmax_sel = sel
        .iter()
        .max_by_key(|s| s.kappa_max())
        .copied()
        .ok_or_else(|| Error::Parse("no selection".into()))?;
    let base = SimConfig::default_for(kmax_sel, gains);
    SimConfig::new(
        cfg.t_final.unwrap_or(base.t_final),
        cfg.substeps_per_period
            .unwrap_or_else(|| default_substeps(kmax_sel)),
        cfg.record_stride,
    )
}

fn resolve_single(cfg: ScenarioConfig, lib: &FieldLibrary) -> Result<ScenarioBundle> {
    let kind = "single-system";
    let sys_cfg = cfg.system.as_ref().ok_or_else(|| missing("system", kind))?;
    let sel_cfg = cfg
        .selection
        .as_ref()
        .ok_or_else(|| missing("selection", kind))?;
    let init = cfg
        .initial
        .as_ref()
        .ok_or_else(|| missing("initial", kind))?;

    let system = lib.system(&cfg.name, &sys_cfg.fields, sys_cfg.n1)?;
    let selection = sel_cfg.build()?;
    selection.check_against(&system)?;
    let y_star = cfg
        .gains
        .y_star
        .clone()
        .unwrap_or_else(|| vec![0.0; system.n1()]);
    let gains = ControllerGains::with_cond_cap(
        cfg.gains.epsilon,
        cfg.gains.gamma,
        DVector::from_vec(y_star),
        cfg.gains.cond_cap,
    )?;
    if gains.y_star.len() != system.n1() {
        return Err(Error::DimensionMismatch {
            context: "y_star",
            expected: system.n1(),
            actual: gains.y_star.len(),
        });
    }
    let x0 = DVector::from_vec(init.x0.clone());
    system.check_state(&x0)?;
    let probe_states = probes(&cfg.probe, system.n())?;
    let certificate = certify(&system, &selection, &probe_states, &gains)?;
    let sim = sim_config(&cfg.sim, &[&selection], &gains)?;
    Ok(ScenarioBundle {
        config: cfg,
        gains,
        sim,
        setup: Setup::Single(SingleSetup {
            system,
            selection,
            x0,
            certificate,
        }),
    })
}

fn resolve_formation(cfg: ScenarioConfig, lib: &FieldLibrary) -> Result<ScenarioBundle> {
    let leader_cfg = cfg
        .leader
        .as_ref()
        .ok_or_else(|| missing("leader", "formation"))?;
    if cfg.agents.is_empty() {
        return Err(Error::Parse(
            "formation scenario requires at least one [[agents]] table".into(),
        ));
    }
    let leader = lib.leader(
        &leader_cfg.dynamics,
        DVector::from_vec(leader_cfg.x0.clone()),
    )?;
    let p = leader.dim();
    let gains = ControllerGains::with_cond_cap(
        cfg.gains.epsilon,
        cfg.gains.gamma,
        DVector::zeros(p),
        cfg.gains.cond_cap,
    )?;
    let probe_states = probes(&cfg.probe, p)?;

    let mut agents = Vec::with_capacity(cfg.agents.len());
    let mut x0s = Vec::with_capacity(cfg.agents.len());
    let mut certificates = Vec::with_capacity(cfg.agents.len());
    for (i, a) in cfg.agents.iter().enumerate() {
        let system = lib.system(&format!("agent-{}", i + 1), &a.fields, p)?;
        if system.n() != p {
            return Err(Error::DimensionMismatch {
                context: "agent state dimension",
                expected: p,
                actual: system.n(),
            });
        }
        let selection = a.selection.build()?;
        let agent = FollowerAgent::new(
            system,
            selection,
            a.gamma.unwrap_or(cfg.gains.gamma),
            DVector::from_vec(a.offset.clone()),
        )?;
        let x0 = DVector::from_vec(a.x0.clone());
        agent.system.check_state(&x0)?;
        certificates.push(certify(
            &agent.system,
            &agent.selection,
            &probe_states,
            &gains,
        )?);
        agents.push(agent);
        x0s.push(x0);
    }
    let sels: Vec<&BracketSelection> = agents.iter().map(|a| &a.selection).collect();
    let sim = sim_config(&cfg.sim, &sels, &gains)?;
    Ok(ScenarioBundle {
        config: cfg,
        gains,
        sim,
        setup: Setup::Formation(FormationSetup {
            agents,
            leader,
            x0s,
            certificates,
        }),
    })
}

/// Configuration of the rolling disc: position `(x1, x2)` is stabilized to the
/// origin using the roll field and the roll/turn bracket.
pub fn rolling_disc_config() -> ScenarioConfig {
    ScenarioConfig {
        name: "rolling-disc".into(),
        kind: ScenarioKind::SingleSystem,
        gains: GainsSection {
            epsilon: 1.0,
            gamma: 5.0,
            y_star: Some(vec![0.0, 0.0]),
            cond_cap: DEFAULT_COND_CAP,
        },
        sim: SimSection {
            t_final: Some(50.0),
            substeps_per_period: Some(40),
            record_stride: 1,
        },
        system: Some(SystemSection {
            fields: vec!["disc.roll".into(), "disc.turn".into()],
            n1: 2,
        }),
        selection: Some(SelectionSection {
            s1: vec![1],
            s2: vec![[1, 2]],
            kappa: Some(vec![1]),
        }),
        initial: Some(InitialSection {
            x0: vec![2.0, 1.0, 0.0, PI],
        }),
        leader: None,
        agents: Vec::new(),
        probe: ProbeSection {
            lower: vec![-3.0; 4],
            upper: vec![3.0; 4],
            count: 100,
            seed: 0,
        },
        expected: Some(ExpectedSection {
            rho: 0.1,
            settle_time: 20.0,
            still_window: Some([40.0, 50.0]),
            still_tolerance: Some(0.05),
        }),
    }
}

/// Configuration of a unicycle following a figure-eight leader at offset `(0.1, 0.1, 0)`.
pub fn unicycle_leader_config() -> ScenarioConfig {
    ScenarioConfig {
        name: "unicycle-leader".into(),
        kind: ScenarioKind::Formation,
        gains: GainsSection {
            epsilon: 0.1,
            gamma: 10.0,
            y_star: None,
            cond_cap: DEFAULT_COND_CAP,
        },
        sim: SimSection {
            t_final: Some(60.0),
            substeps_per_period: Some(40),
            record_stride: 1,
        },
        system: None,
        selection: None,
        initial: None,
        leader: Some(LeaderSection {
            dynamics: "figure-eight".into(),
            x0: vec![0.0, 0.0, PI / 4.0],
        }),
        agents: vec![AgentSection {
            fields: vec!["unicycle.drive".into(), "unicycle.turn".into()],
            selection: SelectionSection {
                s1: vec![1, 2],
                s2: vec![[1, 2]],
                kappa: Some(vec![1]),
            },
            gamma: Some(10.0),
            offset: vec![0.1, 0.1, 0.0],
            x0: vec![1.0, 0.5, 0.0],
        }],
        probe: ProbeSection {
            lower: vec![-3.0; 3],
            upper: vec![3.0; 3],
            count: 100,
            seed: 0,
        },
        expected: Some(ExpectedSection {
            rho: 0.3,
            settle_time: 30.0,
            still_window: None,
            still_tolerance: None,
        }),
    }
}

/// One of the shipped scenarios, by name.
pub fn builtin_scenario(name: &str) -> Result<ScenarioBundle> {
    let cfg = match name {
        "rolling-disc" => rolling_disc_config(),
        "unicycle-leader" => unicycle_leader_config(),
        other => return Err(Error::UnknownScenario(other.to_string())),
    };
    ScenarioBundle::from_config(cfg, &FieldLibrary::builtin())
}

/// Parses and validates a scenario document.
pub fn parse_scenario(text: &str, lib: &FieldLibrary) -> Result<ScenarioBundle> {
    let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    ScenarioBundle::from_config(cfg, lib)
}

/// Loads a scenario file against the built-in field library.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<ScenarioBundle> {
    load_scenario_with(path, &FieldLibrary::builtin())
}

pub fn load_scenario_with(path: impl AsRef<Path>, lib: &FieldLibrary) -> Result<ScenarioBundle> {
    let path = path.as_ref();
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    parse_scenario(&text, lib).map_err(|e| match e {
        Error::Parse(msg) => Error::Parse(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Built-in scenario name or path to a scenario file.
pub fn resolve_scenario(source: &str, lib: &FieldLibrary) -> Result<ScenarioBundle> {
    if BUILTIN_NAMES.contains(&source) {
        let cfg = match source {
            "rolling-disc" => rolling_disc_config(),
            _ => unicycle_leader_config(),
        };
        return ScenarioBundle::from_config(cfg, lib);
    }
    let path = Path::new(source);
    if path.exists() {
        load_scenario_with(path, lib)
    } else {
        Err(Error::UnknownScenario(source.to_string()))
    }
}
