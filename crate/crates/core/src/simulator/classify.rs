use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::trace::SimulationTrace;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstabilityClass {
    LossOfEquilibrium,
    LossOfAttraction,
    Oscillatory,
    LongTerm,
}

impl InstabilityClass {
    pub fn as_str(&self) -> &'static str {
        match self {
            InstabilityClass::LossOfEquilibrium => "loss_of_equilibrium",
            InstabilityClass::LossOfAttraction => "loss_of_attraction",
            InstabilityClass::Oscillatory => "oscillatory",
            InstabilityClass::LongTerm => "long_term",
        }
    }
}

/// Largest rotor-angle separation from the reference (the ideal source if
/// there is one, otherwise the inertia-weighted mean).
fn angle_spread(trace: &SimulationTrace, k: usize) -> f64 {
    let s = &trace.samples[k];
    let reference = match trace.reference {
        Some(r) if s.delta[r].is_finite() => s.delta[r],
        _ => {
            let (mut num, mut den) = (0.0, 0.0);
            for (d, h) in s.delta.iter().zip(&trace.inertia) {
                if d.is_finite() && *h > 0.0 {
                    num += d * h;
                    den += h;
                }
            }
            if den > 0.0 {
                num / den
            } else {
                0.0
            }
        }
    };
    s.delta
        .iter()
        .filter(|d| d.is_finite())
        .map(|d| (d - reference).abs())
        .fold(0.0, f64::max)
}

/// Peak-to-peak amplitudes of successive swings of a signal.
fn swings(x: &[f64]) -> Vec<f64> {
    let mut extrema = Vec::new();
    for w in x.windows(3) {
        if (w[1] > w[0] && w[1] >= w[2]) || (w[1] < w[0] && w[1] <= w[2]) {
            extrema.push(w[1]);
        }
    }
    extrema.windows(2).map(|w| (w[1] - w[0]).abs()).collect()
}

fn growing_oscillation(x: &[f64]) -> bool {
    let amp = swings(x);
    if amp.len() < 4 {
        return false;
    }
    let tail = &amp[amp.len() - 4..];
    tail[0] > 1e-4 && tail.windows(2).all(|w| w[1] > w[0])
}

/// Heuristic mechanism label for an unstable run, checked in this order:
/// angle separation beyond 180° within 5 s of clearing, motor stall, growing
/// oscillation before the violation, late violation after LTC/OEL action.
/// Anything else is a loss of equilibrium.
pub fn classify_instability(trace: &SimulationTrace) -> Result<InstabilityClass> {
    let verdict = trace
        .verdict
        .as_ref()
        .ok_or_else(|| Error::Classification("trace carries no verdict".to_string()))?;
    if verdict.stable {
        return Err(Error::Classification("trace is stable".to_string()));
    }
    let (t_dist, t_clear) = trace.disturbance.unwrap_or((trace.t_start, trace.t_start));
    let t_viol = verdict.t_violation.unwrap_or(f64::INFINITY);

    for (k, s) in trace.samples.iter().enumerate() {
        if s.t > t_clear + 5.0 {
            break;
        }
        if s.t >= t_dist && angle_spread(trace, k) > PI {
            return Ok(InstabilityClass::LossOfAttraction);
        }
    }

    if trace.samples.iter().any(|s| s.slip.iter().any(|&x| x >= 0.999)) {
        return Ok(InstabilityClass::LossOfEquilibrium);
    }

    let before: Vec<_> = trace
        .samples
        .iter()
        .filter(|s| s.t >= t_dist && s.t <= t_viol)
        .collect();
    let n_gen = trace.generators.len();
    for g in 0..n_gen {
        let x: Vec<f64> = before.iter().map(|s| s.speed[g]).filter(|w| w.is_finite()).collect();
        if growing_oscillation(&x) {
            return Ok(InstabilityClass::Oscillatory);
        }
    }
    for b in 0..trace.buses.len() {
        let x: Vec<f64> = before.iter().map(|s| s.v[b]).collect();
        if growing_oscillation(&x) {
            return Ok(InstabilityClass::Oscillatory);
        }
    }

    let slow_events = trace
        .events
        .iter()
        .any(|e| e.kind == "ltc" || e.kind.starts_with("oel"));
    if t_viol - t_dist > 20.0 && slow_events {
        return Ok(InstabilityClass::LongTerm);
    }
    Ok(InstabilityClass::LossOfEquilibrium)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::{EventRecord, TraceSample, Verdict, VerdictReason};

    fn fixture(n: usize, f: impl Fn(f64) -> (f64, f64, f64), t_viol: f64) -> SimulationTrace {
        SimulationTrace {
            dt: 0.01,
            record_every: 1,
            buses: vec!["B".into()],
            generators: vec!["REF".into(), "G".into()],
            motors: vec!["L.lim".into()],
            inertia: vec![0.0, 500.0],
            reference: Some(0),
            disturbance: Some((1.0, 1.1)),
            samples: (0..n)
                .map(|k| {
                    let t = k as f64 * 0.01;
                    let (v, delta, slip) = f(t);
                    TraceSample {
                        t,
                        v: vec![v],
                        delta: vec![0.0, delta],
                        speed: vec![1.0, 1.0],
                        p: vec![],
                        q: vec![],
                        slip: vec![slip],
                    }
                })
                .collect(),
            verdict: Some(Verdict::unstable(VerdictReason::VoltageCollapseEarly, t_viol, 0.5)),
            ..Default::default()
        }
    }

    #[test]
    fn angle_runaway_is_loss_of_attraction() {
        let t = fixture(
            500,
            |t| (0.8, if t > 2.0 { 0.5 + 3.0 * (t - 2.0) } else { 0.5 }, 0.02),
            4.9,
        );
        assert_eq!(classify_instability(&t).unwrap(), InstabilityClass::LossOfAttraction);
    }

    #[test]
    fn stalled_motor_is_loss_of_equilibrium() {
        let t = fixture(500, |t| (1.0 - 0.05 * t, 0.5, (0.02 + 0.3 * t).min(1.0)), 4.9);
        assert_eq!(classify_instability(&t).unwrap(), InstabilityClass::LossOfEquilibrium);
    }

    #[test]
    fn growing_swings_are_oscillatory() {
        let t = fixture(
            2000,
            |t| (1.0 - 0.01 * (0.3 * t).exp() * (6.0 * t).sin(), 0.5, 0.02),
            19.9,
        );
        assert_eq!(classify_instability(&t).unwrap(), InstabilityClass::Oscillatory);
    }

    #[test]
    fn late_collapse_after_taps_is_long_term() {
        let mut t = fixture(4000, |t| (1.0 - 0.004 * t, 0.5, 0.02), 39.0);
        t.events.push(EventRecord {
            t: 31.0,
            kind: "ltc".into(),
            device: "T1".into(),
            value: Some(0.99),
        });
        assert_eq!(classify_instability(&t).unwrap(), InstabilityClass::LongTerm);
    }

    #[test]
    fn stable_trace_is_rejected() {
        let mut t = fixture(10, |_| (1.0, 0.5, 0.02), 0.0);
        t.verdict = Some(Verdict::stable(1.0));
        assert!(matches!(classify_instability(&t), Err(Error::Classification(_))));
    }
}
