//! Static network: buses, branches, admittance assembly, Newton power flow
//! and parameterized continuation of the loadability limit.

mod admittance;
mod continuation;
mod powerflow;

use serde::{Deserialize, Serialize};

pub use admittance::{build_admittance, AdmittanceMatrix};
pub use continuation::{continuation_loadability, ContinuationOptions, ContinuationResult, StressDirection};
pub use powerflow::{
    solve_power_flow, solve_power_flow_with, AvrSteadyState, GeneratorControl, PowerFlowOptions, PowerFlowSolution,
};

pub(crate) use admittance::build_network;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusKind {
    Slack,
    #[serde(rename = "pv", alias = "PV")]
    Pv,
    #[serde(rename = "pq", alias = "PQ")]
    Pq,
}

fn default_v() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bus {
    pub id: u32,
    #[serde(default)]
    pub name: String,
    pub kind: BusKind,
    pub base_kv: f64,
    pub area: u32,
    /// Voltage magnitude: setpoint for slack/PV buses, initial guess otherwise.
    #[serde(default = "default_v")]
    pub v: f64,
    #[serde(default)]
    pub theta: f64,
    /// Shunt conductance, pu on system base.
    #[serde(default)]
    pub g_shunt: f64,
    /// Shunt susceptance, pu on system base (positive = capacitive).
    #[serde(default)]
    pub b_shunt: f64,
}

impl Bus {
    /// Label used in trace headers and P-V exports.
    pub fn label(&self) -> String {
        if self.name.is_empty() {
            self.id.to_string()
        } else {
            self.name.clone()
        }
    }
}

fn default_tap() -> f64 {
    1.0
}

fn default_true() -> bool {
    true
}

/// Pi-model branch. A tap other than 1.0 sits on the `from` side, so
/// `V_to ≈ V_from / tap` for an unloaded transformer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Branch {
    pub id: String,
    pub from: u32,
    pub to: u32,
    #[serde(default)]
    pub r: f64,
    pub x: f64,
    #[serde(default)]
    pub b_shunt: f64,
    #[serde(default = "default_tap")]
    pub tap: f64,
    #[serde(default = "default_true")]
    pub in_service: bool,
}

impl Branch {
    pub fn new(id: &str, from: u32, to: u32, r: f64, x: f64) -> Self {
        Branch {
            id: id.to_string(),
            from,
            to,
            r,
            x,
            b_shunt: 0.0,
            tap: 1.0,
            in_service: true,
        }
    }
}
