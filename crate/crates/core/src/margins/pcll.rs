use super::{
    prepare_base, stress_direction, LevelRecord, MarginMethod, MarginResult, StabilityCriterion, StressSchedule,
};
use crate::cases::SystemCase;
use crate::error::Result;
use crate::simulator::{Contingency, Settle, Simulator, StopPolicy, Verdict, VerdictReason};

/// Guard against schedules that never reach an unstable level.
const MAX_LEVELS: usize = 20_000;

fn settle(sim: &mut Simulator, cap: f64, stop: &StopPolicy, since: f64, warnings: &mut Vec<String>) -> Verdict {
    match sim.run_to_stabilization(cap, stop, since) {
        Settle::Stabilized => stop.final_verdict(sim.time(), sim.min_bus_voltage()),
        Settle::TimedOut => {
            let msg = format!(
                "no settled state within {cap} s at t = {:.1} s; judged on the last state",
                sim.time()
            );
            log::warn!("{msg}");
            warnings.push(msg);
            stop.final_verdict(sim.time(), sim.min_bus_voltage())
        }
        Settle::Failed(v) => v,
    }
}

/// Post-contingency loadability limit. The contingency is applied to the
/// base case and simulated until it settles; stress increments are then
/// injected into the same running simulation, each followed by a settle.
/// The first unstable coarse level sends the scan back to the last stable
/// state to continue in fine steps. The margin is the last stable level.
pub fn compute_pcll(
    case: &SystemCase,
    contingency: &Contingency,
    schedule: &StressSchedule,
    criterion: &StabilityCriterion,
) -> Result<MarginResult> {
    let plan = stress_direction(case, schedule)?;
    let base = prepare_base(case)?;
    let mut result = MarginResult::new(MarginMethod::Pcll, case, &contingency.label, schedule);
    let index = case.bus_index();
    let monitored: Vec<usize> = result.monitored.iter().map(|b| index[b]).collect();
    let snapshot = |sim: &Simulator| -> Vec<f64> {
        let v = sim.bus_voltages();
        monitored.iter().map(|&i| v[i]).collect()
    };

    let mut sim = Simulator::new(case, base.state, criterion.sim.clone())?;
    sim.schedule(contingency);
    let t_dist = contingency.disturbance_time().unwrap_or(0.0);
    let mut warnings = Vec::new();
    let verdict = settle(&mut sim, criterion.t_end, &criterion.stop, t_dist, &mut warnings);
    let stable = verdict.stable;
    let reason = verdict.reason;
    result.record(LevelRecord {
        stress_mw: 0.0,
        verdict,
        voltages: snapshot(&sim),
    });
    if !stable {
        result.limiting_reason = Some(reason.as_str().to_string());
        result.warnings.append(&mut warnings);
        result.warn(format!(
            "base case is unstable under contingency '{}'",
            contingency.label
        ));
        return Ok(result);
    }

    let mut s = 0.0;
    let mut coarse = true;
    for _ in 0..MAX_LEVELS {
        let (target, is_coarse) = schedule.next(s, coarse);
        coarse = is_coarse;
        if target > plan.headroom_mw + 1e-9 {
            result.limiting_reason = Some("headroom".to_string());
            break;
        }
        let keep = coarse.then(|| sim.clone());
        let now = sim.time();
        let verdict = match sim.apply_stress(&plan.direction, target - s) {
            Ok(()) => settle(&mut sim, criterion.settle_cap, &criterion.stop, now, &mut warnings),
            Err(_) => Verdict::unstable(VerdictReason::NumericalDivergence, now, f64::NAN),
        };
        let stable = verdict.stable;
        let reason = verdict.reason;
        result.record(LevelRecord {
            stress_mw: target,
            verdict,
            voltages: if stable { snapshot(&sim) } else { Vec::new() },
        });
        if stable {
            s = target;
        } else if let Some(back) = keep {
            sim = back;
            coarse = false;
        } else {
            result.limiting_reason = Some(reason.as_str().to_string());
            break;
        }
    }
    result.margin_mw = s;
    result.warnings.append(&mut warnings);
    Ok(result)
}
