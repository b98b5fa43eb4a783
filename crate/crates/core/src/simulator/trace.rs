use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictReason {
    ConvergedStable,
    LowVoltageFinal,
    VoltageCollapseEarly,
    NumericalDivergence,
}

impl VerdictReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            VerdictReason::ConvergedStable => "converged_stable",
            VerdictReason::LowVoltageFinal => "low_voltage_final",
            VerdictReason::VoltageCollapseEarly => "voltage_collapse_early",
            VerdictReason::NumericalDivergence => "numerical_divergence",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub stable: bool,
    pub reason: VerdictReason,
    pub t_violation: Option<f64>,
    /// Lowest network bus voltage when the run ended, pu.
    pub min_voltage: f64,
}

impl Verdict {
    pub fn stable(min_voltage: f64) -> Self {
        Verdict {
            stable: true,
            reason: VerdictReason::ConvergedStable,
            t_violation: None,
            min_voltage,
        }
    }

    pub fn unstable(reason: VerdictReason, t: f64, min_voltage: f64) -> Self {
        Verdict {
            stable: false,
            reason,
            t_violation: Some(t),
            min_voltage,
        }
    }
}

/// Termination rules: a run fails if any bus ends below `v_final`, and is
/// stopped early once any bus drops below `v_early` after the grace period
/// that follows the disturbance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StopPolicy {
    pub v_final: f64,
    pub v_early: f64,
    pub grace: f64,
}

impl Default for StopPolicy {
    fn default() -> Self {
        StopPolicy {
            v_final: 0.9,
            v_early: 0.7,
            grace: 20.0,
        }
    }
}

impl StopPolicy {
    pub fn early_stop(&self, t: f64, t_disturbance: f64, min_v: f64) -> bool {
        t >= t_disturbance + self.grace - 1e-9 && min_v < self.v_early
    }

    pub fn final_verdict(&self, t_end: f64, min_v: f64) -> Verdict {
        if min_v < self.v_final {
            Verdict::unstable(VerdictReason::LowVoltageFinal, t_end, min_v)
        } else {
            Verdict::stable(min_v)
        }
    }

    /// Apply the rules to a recorded trace whose last sample is the end of
    /// the horizon.
    pub fn judge(&self, trace: &SimulationTrace) -> Verdict {
        let t_dist = trace.disturbance.map(|d| d.0).unwrap_or(trace.t_start);
        for s in &trace.samples {
            let m = s.min_voltage();
            if self.early_stop(s.t, t_dist, m) {
                return Verdict::unstable(VerdictReason::VoltageCollapseEarly, s.t, m);
            }
        }
        match trace.samples.last() {
            Some(s) => self.final_verdict(s.t, s.min_voltage()),
            None => Verdict::stable(f64::NAN),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub t: f64,
    /// `fault_on`, `fault_off`, `trip_branch`, `trip_generator`, `ltc`,
    /// `oel_on`, `oel_off`, `dl_off`, `dl_on`, `motor_stall`, `stress`.
    pub kind: String,
    pub device: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceSample {
    pub t: f64,
    /// Network bus voltage magnitudes, pu.
    pub v: Vec<f64>,
    /// Rotor angles, rad (NaN for units out of service).
    pub delta: Vec<f64>,
    /// Rotor speeds, pu.
    pub speed: Vec<f64>,
    /// Load consumption, MW and Mvar.
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    /// Slip of every motor listed in `SimulationTrace::motors`.
    pub slip: Vec<f64>,
}

impl TraceSample {
    pub fn min_voltage(&self) -> f64 {
        self.v.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SimulationTrace {
    pub dt: f64,
    pub record_every: usize,
    pub t_start: f64,
    pub buses: Vec<String>,
    pub generators: Vec<String>,
    pub loads: Vec<String>,
    pub motors: Vec<String>,
    /// Stored kinetic energy per generator, MWs (0 for ideal sources).
    pub inertia: Vec<f64>,
    /// Generator holding the angle reference (an infinite bus), if any.
    pub reference: Option<usize>,
    pub samples: Vec<TraceSample>,
    pub events: Vec<EventRecord>,
    /// First and last contingency event times.
    pub disturbance: Option<(f64, f64)>,
    pub verdict: Option<Verdict>,
}

impl SimulationTrace {
    pub fn sample_spacing(&self) -> f64 {
        self.dt * self.record_every as f64
    }

    /// Samples as CSV: `t`, bus voltages, generator angle and speed pairs,
    /// load P and Q pairs.
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_string()];
        header.extend(self.buses.iter().map(|b| format!("{b}.V")));
        for g in &self.generators {
            header.push(format!("{g}.delta"));
            header.push(format!("{g}.speed"));
        }
        for l in &self.loads {
            header.push(format!("{l}.P"));
            header.push(format!("{l}.Q"));
        }
        out.write_record(&header).map_err(csv_err)?;
        for s in &self.samples {
            let mut row = vec![s.t.to_string()];
            row.extend(s.v.iter().map(|x| x.to_string()));
            for (d, w) in s.delta.iter().zip(&s.speed) {
                row.push(d.to_string());
                row.push(w.to_string());
            }
            for (p, q) in s.p.iter().zip(&s.q) {
                row.push(p.to_string());
                row.push(q.to_string());
            }
            out.write_record(&row).map_err(csv_err)?;
        }
        out.flush().map_err(|e| Error::io("<trace csv>", e))
    }

    /// Event log, one JSON object per line.
    pub fn write_events_jsonl(&self, mut w: impl Write) -> Result<()> {
        for e in &self.events {
            let line = serde_json::to_string(e).expect("event records serialize");
            writeln!(w, "{line}").map_err(|e| Error::io("<event log>", e))?;
        }
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::io("<trace csv>", std::io::Error::other(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace(vs: &[(f64, f64)], t_dist: f64) -> SimulationTrace {
        SimulationTrace {
            dt: 0.1,
            record_every: 1,
            disturbance: Some((t_dist, t_dist)),
            buses: vec!["B".into()],
            samples: vs
                .iter()
                .map(|&(t, v)| TraceSample {
                    t,
                    v: vec![v],
                    delta: vec![],
                    speed: vec![],
                    p: vec![],
                    q: vec![],
                    slip: vec![],
                })
                .collect(),
            ..Default::default()
        }
    }

    #[test]
    fn csv_header_layout() {
        let mut t = trace(&[(0.0, 1.0)], 0.0);
        t.generators = vec!["G1".into()];
        t.loads = vec!["L1".into()];
        t.samples[0].delta = vec![0.1];
        t.samples[0].speed = vec![1.0];
        t.samples[0].p = vec![10.0];
        t.samples[0].q = vec![2.0];
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "t,B.V,G1.delta,G1.speed,L1.P,L1.Q");
        assert_eq!(text.lines().nth(1).unwrap(), "0,1,0.1,1,10,2");
    }

    #[test]
    fn event_log_is_json_lines() {
        let mut t = trace(&[], 0.0);
        t.events.push(EventRecord {
            t: 1.0,
            kind: "fault_on".into(),
            device: "10".into(),
            value: None,
        });
        let mut buf = Vec::new();
        t.write_events_jsonl(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "{\"t\":1.0,\"kind\":\"fault_on\",\"device\":\"10\"}\n"
        );
    }

    #[test]
    fn judge_prefers_early_stop() {
        let p = StopPolicy::default();
        let v = p.judge(&trace(&[(0.0, 1.0), (25.0, 0.6), (100.0, 0.95)], 1.0));
        assert_eq!(v.reason, VerdictReason::VoltageCollapseEarly);
        assert_eq!(v.t_violation, Some(25.0));
    }
}
