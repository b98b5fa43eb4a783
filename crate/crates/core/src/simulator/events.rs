use serde::{Deserialize, Serialize};

fn default_fault_b() -> f64 {
    -1.0e4
}

/// Disturbance actions that can be scheduled in a contingency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventAction {
    /// Three-phase bus fault modeled as a shunt admittance (pu).
    ApplyBusFault {
        bus: u32,
        #[serde(default)]
        g: f64,
        #[serde(default = "default_fault_b")]
        b: f64,
    },
    ClearFault,
    TripBranch {
        id: String,
    },
    TripGenerator {
        id: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimedEvent {
    /// Offset from the start of the run, s.
    pub t: f64,
    pub action: EventAction,
}

/// Timed event sequence applied on top of an operating point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contingency {
    pub label: String,
    #[serde(default)]
    pub events: Vec<TimedEvent>,
    /// Marks disturbances whose margins are known to be fragile (e.g. unit
    /// trips close to a limiter threshold).
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub sensitive: bool,
}

impl Contingency {
    pub fn none() -> Self {
        Contingency {
            label: "none".to_string(),
            events: Vec::new(),
            sensitive: false,
        }
    }

    /// Bus fault at `t`, cleared after `duration`, followed by tripping `branch`.
    pub fn fault_and_trip(label: &str, bus: u32, t: f64, duration: f64, branch: &str) -> Self {
        Contingency {
            label: label.to_string(),
            events: vec![
                TimedEvent {
                    t,
                    action: EventAction::ApplyBusFault {
                        bus,
                        g: 0.0,
                        b: default_fault_b(),
                    },
                },
                TimedEvent {
                    t: t + duration,
                    action: EventAction::ClearFault,
                },
                TimedEvent {
                    t: t + duration,
                    action: EventAction::TripBranch { id: branch.to_string() },
                },
            ],
            sensitive: false,
        }
    }

    pub fn trip_branch(label: &str, t: f64, branch: &str) -> Self {
        Contingency {
            label: label.to_string(),
            events: vec![TimedEvent {
                t,
                action: EventAction::TripBranch { id: branch.to_string() },
            }],
            sensitive: false,
        }
    }

    /// Time of the first event, if any.
    pub fn disturbance_time(&self) -> Option<f64> {
        self.events.first().map(|e| e.t)
    }

    /// Time of the last event, if any.
    pub fn last_event_time(&self) -> Option<f64> {
        self.events.last().map(|e| e.t)
    }

    /// Ordering and pairing violations; device references are checked by
    /// the case validator.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let tag = format!("contingency '{}'", self.label);
        let mut fault_open = false;
        let mut last_t = f64::NEG_INFINITY;
        for (k, ev) in self.events.iter().enumerate() {
            if !(ev.t >= 0.0) {
                out.push(format!("{tag}: event {k} at t = {} (must be >= 0)", ev.t));
            }
            if ev.t < last_t {
                out.push(format!("{tag}: event {k} at t = {} precedes the previous event", ev.t));
            }
            last_t = ev.t;
            match ev.action {
                EventAction::ApplyBusFault { .. } => {
                    if fault_open {
                        out.push(format!("{tag}: event {k} applies a fault while another is active"));
                    }
                    fault_open = true;
                }
                EventAction::ClearFault => {
                    if !fault_open {
                        out.push(format!("{tag}: event {k} clears a fault that was never applied"));
                    }
                    fault_open = false;
                }
                _ => {}
            }
        }
        out
    }
}
