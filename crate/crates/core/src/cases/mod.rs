//! Case files: the complete simulatable description of a system, its
//! validation, JSON ingestion, and the built-in test systems.

mod builtin;

use std::collections::{HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dynmodels::{CompositeLoadParams, GeneratorParams, GovernorIeesgoParams, LtcParams, ZipLoadParams};
use crate::error::{Error, Result};
use crate::netmodel::{Branch, Bus, BusKind};
use crate::simulator::{Contingency, EventAction};

pub use builtin::{builtin_parallel_twobus, builtin_two_area, builtin_twobus, TwoAreaLoadMix};

/// Case-file format version understood by this build.
pub const SCHEMA_VERSION: u32 = 1;

fn default_base_mva() -> f64 {
    100.0
}

fn default_frequency() -> f64 {
    50.0
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Area {
    pub id: u32,
    #[serde(default)]
    pub name: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorModel {
    #[default]
    TwoAxis,
    /// Ideal voltage source behind zero impedance; serves as the angle and
    /// frequency reference.
    InfiniteBus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorUnit {
    pub id: String,
    pub bus: u32,
    #[serde(default)]
    pub model: GeneratorModel,
    /// Dispatch, MW. Ignored for the slack unit, which balances the system.
    #[serde(default)]
    pub p_mw: f64,
    /// Reactive limits used by static power flow (PV→PQ switching).
    #[serde(default)]
    pub q_min_mvar: Option<f64>,
    #[serde(default)]
    pub q_max_mvar: Option<f64>,
    /// Share of the generation-area stress; defaults to headroom-proportional.
    #[serde(default)]
    pub participation: Option<f64>,
    /// Machine and exciter data; required for `two_axis` units.
    #[serde(default)]
    pub machine: Option<GeneratorParams>,
    #[serde(default)]
    pub governor: GovernorIeesgoParams,
    #[serde(default = "default_true")]
    pub in_service: bool,
}

impl GeneratorUnit {
    /// Capability in MW (governor ceiling on the machine base).
    pub fn p_max_mw(&self) -> f64 {
        match &self.machine {
            Some(m) => self.governor.p_max * m.s_base_mva,
            None => f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoadModel {
    Zip(ZipLoadParams),
    Composite(CompositeLoadParams),
}

impl LoadModel {
    /// Nominal consumption at 1.0 pu, MW.
    pub fn nominal_p_mw(&self) -> f64 {
        match self {
            LoadModel::Zip(z) => z.z * z.p0_mw * z.p_factor(1.0),
            LoadModel::Composite(c) => c.p0_mw,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadUnit {
    pub id: String,
    pub bus: u32,
    pub model: LoadModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LtcUnit {
    /// Transformer branch whose tap is controlled.
    pub branch: String,
    pub params: LtcParams,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Monitoring {
    /// Buses whose voltages are sampled for P-V curves.
    #[serde(default)]
    pub buses: Vec<u32>,
}

/// Default stress areas: loads grow in `load_area`, generation in `gen_area`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StressAreas {
    pub load_area: u32,
    pub gen_area: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemCase {
    pub schema_version: u32,
    #[serde(default)]
    pub name: String,
    #[serde(default = "default_base_mva")]
    pub base_mva: f64,
    #[serde(default = "default_frequency")]
    pub frequency_hz: f64,
    #[serde(default)]
    pub areas: Vec<Area>,
    pub buses: Vec<Bus>,
    #[serde(default)]
    pub branches: Vec<Branch>,
    #[serde(default)]
    pub generators: Vec<GeneratorUnit>,
    #[serde(default)]
    pub loads: Vec<LoadUnit>,
    #[serde(default)]
    pub ltcs: Vec<LtcUnit>,
    #[serde(default)]
    pub monitoring: Monitoring,
    #[serde(default)]
    pub stress: Option<StressAreas>,
    #[serde(default)]
    pub contingencies: Vec<Contingency>,
}

impl SystemCase {
    /// Bus id → position in `buses`.
    pub fn bus_index(&self) -> HashMap<u32, usize> {
        self.buses.iter().enumerate().map(|(i, b)| (b.id, i)).collect()
    }

    pub fn bus(&self, id: u32) -> Option<&Bus> {
        self.buses.iter().find(|b| b.id == id)
    }

    pub fn branch_position(&self, id: &str) -> Option<usize> {
        self.branches.iter().position(|b| b.id == id)
    }

    pub fn generator_position(&self, id: &str) -> Option<usize> {
        self.generators.iter().position(|g| g.id == id)
    }

    pub fn contingency(&self, label: &str) -> Result<&Contingency> {
        self.contingencies
            .iter()
            .find(|c| c.label == label)
            .ok_or_else(|| Error::UnknownContingency {
                label: label.to_string(),
                available: self.contingencies.iter().map(|c| c.label.clone()).collect(),
            })
    }

    /// Area of the bus a device sits on.
    pub fn area_of(&self, bus: u32) -> Option<u32> {
        self.bus(bus).map(|b| b.area)
    }

    /// Turn off the slow limiters: OEL field-current limits, generator
    /// reactive limits and tap changers. Used for static/dynamic equivalence
    /// checks.
    pub fn disable_limiters(&mut self) {
        for g in &mut self.generators {
            if let Some(m) = &mut g.machine {
                m.ifd_max = None;
            }
            g.q_min_mvar = None;
            g.q_max_mvar = None;
        }
        self.ltcs.clear();
    }

    /// Every invariant violation in the case, one message each.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.schema_version != SCHEMA_VERSION {
            out.push(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        if !(self.base_mva > 0.0) {
            out.push(format!("base_mva = {} (must be > 0)", self.base_mva));
        }
        if !(self.frequency_hz > 0.0) {
            out.push(format!("frequency_hz = {} (must be > 0)", self.frequency_hz));
        }
        let areas: HashSet<u32> = self.areas.iter().map(|a| a.id).collect();
        if areas.len() != self.areas.len() {
            out.push("duplicate area id".to_string());
        }

        let mut seen = HashSet::new();
        for b in &self.buses {
            if !seen.insert(b.id) {
                out.push(format!("bus {}: duplicate id", b.id));
            }
            if !(b.v > 0.0) {
                out.push(format!("bus {}: V = {} (must be > 0)", b.id, b.v));
            }
            if !(b.base_kv > 0.0) {
                out.push(format!("bus {}: base_kv = {} (must be > 0)", b.id, b.base_kv));
            }
            if !areas.contains(&b.area) {
                out.push(format!("bus {}: area {} is not defined", b.id, b.area));
            }
        }

        let mut seen = HashSet::new();
        for br in &self.branches {
            if !seen.insert(br.id.as_str()) {
                out.push(format!("branch {}: duplicate id", br.id));
            }
            for end in [br.from, br.to] {
                if !self.buses.iter().any(|b| b.id == end) {
                    out.push(format!("branch {}: bus {end} does not exist", br.id));
                }
            }
            if br.from == br.to {
                out.push(format!("branch {}: from and to are the same bus", br.id));
            }
            if br.in_service && br.x == 0.0 {
                out.push(format!("branch {}: x must be nonzero when in service", br.id));
            }
            if !(br.tap > 0.0) {
                out.push(format!("branch {}: tap = {} (must be > 0)", br.id, br.tap));
            }
        }

        let mut seen = HashSet::new();
        let mut gen_buses = HashSet::new();
        for g in &self.generators {
            let tag = format!("generator {}", g.id);
            if !seen.insert(g.id.as_str()) {
                out.push(format!("{tag}: duplicate id"));
            }
            let Some(bus) = self.bus(g.bus) else {
                out.push(format!("{tag}: bus {} does not exist", g.bus));
                continue;
            };
            if g.in_service && !gen_buses.insert(g.bus) {
                out.push(format!("{tag}: bus {} already has a generator", g.bus));
            }
            match g.model {
                GeneratorModel::TwoAxis => match &g.machine {
                    Some(m) => out.extend(m.violations(&format!("{tag}.machine"))),
                    None => out.push(format!("{tag}: two_axis units need a machine block")),
                },
                GeneratorModel::InfiniteBus => {
                    if bus.kind != BusKind::Slack {
                        out.push(format!("{tag}: infinite_bus units must sit on the slack bus"));
                    }
                }
            }
            out.extend(g.governor.violations(&format!("{tag}.governor")));
            if let (Some(lo), Some(hi)) = (g.q_min_mvar, g.q_max_mvar) {
                if lo > hi {
                    out.push(format!("{tag}: q_min_mvar > q_max_mvar"));
                }
            }
            if let Some(p) = g.participation {
                if p < 0.0 {
                    out.push(format!("{tag}: participation must be >= 0"));
                }
            }
            if let Some(m) = &g.machine {
                if g.model == GeneratorModel::TwoAxis && bus.kind != BusKind::Slack {
                    let pu = g.p_mw / m.s_base_mva;
                    if pu > g.governor.p_max + 1e-9 || pu < g.governor.p_min - 1e-9 {
                        out.push(format!(
                            "{tag}: dispatch {} MW outside governor range [{}, {}] pu",
                            g.p_mw, g.governor.p_min, g.governor.p_max
                        ));
                    }
                }
            }
        }
        for b in &self.buses {
            if b.kind == BusKind::Pv && !gen_buses.contains(&b.id) {
                out.push(format!("bus {}: PV bus without an in-service generator", b.id));
            }
        }

        let mut seen = HashSet::new();
        for l in &self.loads {
            let tag = format!("load {}", l.id);
            if !seen.insert(l.id.as_str()) {
                out.push(format!("{tag}: duplicate id"));
            }
            if self.bus(l.bus).is_none() {
                out.push(format!("{tag}: bus {} does not exist", l.bus));
            }
            let v = match &l.model {
                LoadModel::Zip(z) => z.violations(),
                LoadModel::Composite(c) => c.violations(),
            };
            out.extend(v.into_iter().map(|m| format!("{tag}: {m}")));
        }

        for (k, t) in self.ltcs.iter().enumerate() {
            let tag = format!("ltc {k} on branch {}", t.branch);
            match self.branches.iter().find(|b| b.id == t.branch) {
                None => out.push(format!("{tag}: branch does not exist")),
                Some(br) => {
                    if br.tap < t.params.tap_min - 1e-9 || br.tap > t.params.tap_max + 1e-9 {
                        out.push(format!("{tag}: initial tap {} outside [tap_min, tap_max]", br.tap));
                    }
                }
            }
            if self.bus(t.params.controlled_bus).is_none() {
                out.push(format!(
                    "{tag}: controlled bus {} does not exist",
                    t.params.controlled_bus
                ));
            }
            out.extend(t.params.violations(&tag));
        }
        if self
            .ltcs
            .iter()
            .map(|t| t.branch.as_str())
            .collect::<HashSet<_>>()
            .len()
            != self.ltcs.len()
        {
            out.push("two tap changers control the same branch".to_string());
        }

        for b in &self.monitoring.buses {
            if self.bus(*b).is_none() {
                out.push(format!("monitoring: bus {b} does not exist"));
            }
        }
        if let Some(s) = &self.stress {
            for (what, a) in [("load_area", s.load_area), ("gen_area", s.gen_area)] {
                if !areas.contains(&a) {
                    out.push(format!("stress.{what}: area {a} is not defined"));
                }
            }
        }

        let mut labels = HashSet::new();
        for c in &self.contingencies {
            if !labels.insert(c.label.as_str()) {
                out.push(format!("contingency '{}': duplicate label", c.label));
            }
            out.extend(self.contingency_violations(c));
        }

        out.extend(self.island_violations());
        out
    }

    /// Reference checks for a contingency against this case, together with
    /// its own ordering rules.
    pub fn contingency_violations(&self, c: &Contingency) -> Vec<String> {
        let mut out = c.violations();
        for (k, ev) in c.events.iter().enumerate() {
            let tag = format!("contingency '{}': event {k}", c.label);
            match &ev.action {
                EventAction::ApplyBusFault { bus, .. } => {
                    if self.bus(*bus).is_none() {
                        out.push(format!("{tag}: bus {bus} does not exist"));
                    }
                }
                EventAction::TripBranch { id } => {
                    if self.branch_position(id).is_none() {
                        out.push(format!("{tag}: branch {id} does not exist"));
                    }
                }
                EventAction::TripGenerator { id } => {
                    if self.generator_position(id).is_none() {
                        out.push(format!("{tag}: generator {id} does not exist"));
                    }
                }
                EventAction::ClearFault => {}
            }
        }
        out
    }

    /// Each connected island must contain exactly one slack bus.
    fn island_violations(&self) -> Vec<String> {
        let index = self.bus_index();
        let n = self.buses.len();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], mut i: usize) -> usize {
            while p[i] != i {
                p[i] = p[p[i]];
                i = p[i];
            }
            i
        }
        for br in self.branches.iter().filter(|b| b.in_service) {
            if let (Some(&f), Some(&t)) = (index.get(&br.from), index.get(&br.to)) {
                let (a, b) = (find(&mut parent, f), find(&mut parent, t));
                parent[a] = b;
            }
        }
        let mut slack_count: HashMap<usize, usize> = HashMap::new();
        for i in 0..n {
            let root = find(&mut parent, i);
            let e = slack_count.entry(root).or_insert(0);
            if self.buses[i].kind == BusKind::Slack {
                *e += 1;
            }
        }
        let mut roots: Vec<_> = slack_count.into_iter().collect();
        roots.sort();
        roots
            .into_iter()
            .filter(|(_, c)| *c != 1)
            .map(|(root, c)| {
                format!(
                    "island containing bus {} has {c} slack buses (need exactly 1)",
                    self.buses[root].id
                )
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(v))
        }
    }
}

/// Parse and validate a case from JSON text.
pub fn parse_case(text: &str) -> Result<SystemCase> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let case: SystemCase = serde_path_to_error::deserialize(de).map_err(|e| Error::Schema {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })?;
    case.validate()?;
    Ok(case)
}

pub fn load_case(path: impl AsRef<Path>) -> Result<SystemCase> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    parse_case(&text)
}

pub fn save_case(case: &SystemCase, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(case).expect("case serializes");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}
