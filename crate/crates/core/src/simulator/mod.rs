//! Time-domain simulation of the full system: two-axis machines, governors,
//! limiters, tap changers and dynamic loads, integrated with a fixed-step
//! trapezoidal rule alternating with a Newton solve of the network.

mod classify;
mod engine;
mod events;
mod init;
mod network;
mod trace;

pub use classify::{classify_instability, InstabilityClass};
pub use engine::{run, step, Settle, SimOptions, Simulator};
pub use events::{Contingency, EventAction, TimedEvent};
pub use init::{initialize_dynamics, DynamicState, LoadState, MachineState};
pub use trace::{EventRecord, SimulationTrace, StopPolicy, TraceSample, Verdict, VerdictReason};
