use rayon::prelude::*;

use super::{
    apply_plan, monitored_voltages, prepare_base, stress_direction, BaseState, LevelRecord, MarginMethod, MarginResult,
    StabilityCriterion, StressPlan, StressSchedule,
};
use crate::cases::SystemCase;
use crate::error::{Error, Result};
use crate::netmodel::{solve_power_flow_with, GeneratorControl, PowerFlowOptions};
use crate::simulator::{initialize_dynamics, Contingency, DynamicState, Simulator, Verdict, VerdictReason};

const MAX_LEVELS: usize = 20_000;

/// Everything one SOL probe needs; shared read-only across workers.
struct Prober<'a> {
    case: &'a SystemCase,
    contingency: &'a Contingency,
    criterion: &'a StabilityCriterion,
    plan: StressPlan,
    base: BaseState,
    monitored: Vec<u32>,
}

impl Prober<'_> {
    fn new<'a>(
        case: &'a SystemCase,
        contingency: &'a Contingency,
        schedule: &StressSchedule,
        criterion: &'a StabilityCriterion,
        monitored: Vec<u32>,
    ) -> Result<Prober<'a>> {
        Ok(Prober {
            case,
            contingency,
            criterion,
            plan: stress_direction(case, schedule)?,
            base: prepare_base(case)?,
            monitored,
        })
    }

    fn simulator(&self, stress: f64) -> Result<Simulator> {
        let (stressed, state) = stressed_state(self.case, &self.plan, &self.base, stress)?;
        Simulator::new(&stressed, state, self.criterion.sim.clone())
    }

    /// Stressed intact operating point, then the contingency simulated to
    /// the horizon. A level whose operating point cannot be built counts as
    /// a numerical divergence.
    fn probe(&self, stress: f64) -> LevelRecord {
        let mut sim = match self.simulator(stress) {
            Ok(s) => s,
            Err(e) => {
                log::debug!("stress {stress} MW: {e}");
                return LevelRecord {
                    stress_mw: stress,
                    verdict: Verdict::unstable(VerdictReason::NumericalDivergence, 0.0, f64::NAN),
                    voltages: Vec::new(),
                };
            }
        };
        let t_end = sim.time() + self.criterion.t_end;
        let verdict = sim.run(Some(self.contingency), t_end, &self.criterion.stop);
        let voltages = if verdict.stable {
            monitored_voltages(self.case, &self.monitored, &sim.bus_voltages())
        } else {
            Vec::new()
        };
        LevelRecord {
            stress_mw: stress,
            verdict,
            voltages,
        }
    }

    /// Probe several levels at once; results come back in input order.
    fn probe_all(&self, levels: &[f64]) -> Vec<LevelRecord> {
        levels.par_iter().map(|&s| self.probe(s)).collect()
    }
}

fn stressed_state(
    case: &SystemCase,
    plan: &StressPlan,
    base: &BaseState,
    stress: f64,
) -> Result<(SystemCase, DynamicState)> {
    let stressed = apply_plan(case, plan, stress)?;
    let options = PowerFlowOptions {
        control: GeneratorControl::Avr(base.avr.clone()),
        adjust_taps: true,
        ..Default::default()
    };
    let pf = solve_power_flow_with(&stressed, Some(&base.pf), &options)?;
    let state = initialize_dynamics(&stressed, &pf)?;
    Ok((stressed, state))
}

/// Pre-contingency operating point of one SOL level: the stressed case and
/// its dynamic equilibrium, with every voltage regulator keeping the
/// reference it has in the unstressed case and taps settled.
pub fn sol_operating_point(
    case: &SystemCase,
    schedule: &StressSchedule,
    stress: f64,
) -> Result<(SystemCase, DynamicState)> {
    let plan = stress_direction(case, schedule)?;
    let base = prepare_base(case)?;
    stressed_state(case, &plan, &base, stress)
}

/// Secure operating limit by linear scan: coarse levels, then fine levels
/// from the last stable coarse level. Every level is an independent
/// stress-then-disturb run; the scan ends at the first unstable level.
/// Levels are probed in batches of the worker count, so a batch may run a
/// few levels past the first failure; those are discarded.
pub fn compute_sol(
    case: &SystemCase,
    contingency: &Contingency,
    schedule: &StressSchedule,
    criterion: &StabilityCriterion,
) -> Result<MarginResult> {
    let mut result = MarginResult::new(MarginMethod::Sol, case, &contingency.label, schedule);
    let prober = Prober::new(case, contingency, schedule, criterion, result.monitored.clone())?;
    let base = prober.probe(0.0);
    let base_ok = base.verdict.stable;
    let reason = base.verdict.reason;
    result.record(base);
    if !base_ok {
        result.limiting_reason = Some(reason.as_str().to_string());
        result.warn(format!(
            "base case is unstable under contingency '{}'",
            contingency.label
        ));
        return Ok(result);
    }

    let batch = rayon::current_num_threads().max(1);
    let mut s = 0.0;
    let mut coarse = true;
    let mut count = 0;
    'scan: while count < MAX_LEVELS {
        let mut levels = Vec::with_capacity(batch);
        let (mut x, mut c) = (s, coarse);
        let mut capped = false;
        while levels.len() < batch {
            let (next, is_coarse) = schedule.next(x, c);
            if is_coarse != coarse && !levels.is_empty() {
                break;
            }
            if next > prober.plan.headroom_mw + 1e-9 {
                capped = true;
                break;
            }
            levels.push(next);
            x = next;
            c = is_coarse;
        }
        if levels.is_empty() {
            if capped {
                result.limiting_reason = Some("headroom".to_string());
            }
            break;
        }
        let phase_coarse = schedule.next(s, coarse).1;
        count += levels.len();
        for rec in prober.probe_all(&levels) {
            let stable = rec.verdict.stable;
            let reason = rec.verdict.reason;
            let level = rec.stress_mw;
            result.record(rec);
            if stable {
                s = level;
                continue;
            }
            if phase_coarse {
                // discard anything past the failure and refine below it
                result.levels.retain(|l| l.stress_mw <= level + 1e-9);
                coarse = false;
                continue 'scan;
            }
            result.levels.retain(|l| l.stress_mw <= level + 1e-9);
            result.limiting_reason = Some(reason.as_str().to_string());
            break 'scan;
        }
        coarse = phase_coarse;
        if capped {
            result.limiting_reason = Some("headroom".to_string());
            break;
        }
    }
    result.margin_mw = s;
    Ok(result)
}

/// Secure operating limit by bisection between `lo` (must be stable) and
/// `hi`. If `hi` is stable it is pushed up geometrically until a failure is
/// found. Probes are snapped to the fine-step grid, so on a monotone
/// problem the result matches the linear scan to within `tol`. After
/// convergence one extra probe halfway below the margin checks the stable
/// set is an interval; a contradiction is reported as a warning.
#[allow(clippy::too_many_arguments)]
pub fn binary_search_sol(
    case: &SystemCase,
    contingency: &Contingency,
    lo: f64,
    hi: f64,
    tol: f64,
    schedule: &StressSchedule,
    criterion: &StabilityCriterion,
) -> Result<MarginResult> {
    let mut result = MarginResult::new(MarginMethod::Sol, case, &contingency.label, schedule);
    let prober = Prober::new(case, contingency, schedule, criterion, result.monitored.clone())?;
    let headroom = prober.plan.headroom_mw;
    bisect(&mut result, lo, hi, tol, schedule.fine_step, headroom, |s| {
        prober.probe(s)
    })?;
    Ok(result)
}

pub(crate) fn bisect(
    result: &mut MarginResult,
    lo: f64,
    hi: f64,
    tol: f64,
    grid: f64,
    headroom: f64,
    mut probe: impl FnMut(f64) -> LevelRecord,
) -> Result<()> {
    if !(tol > 0.0) || !(hi > lo) || !(lo >= 0.0) {
        return Err(Error::Bracket(format!(
            "need 0 <= lo < hi and tol > 0 (lo = {lo}, hi = {hi}, tol = {tol})"
        )));
    }
    let snap = |s: f64| (s / grid + 1e-9).floor() * grid;
    let mut check = |result: &mut MarginResult, s: f64| -> (bool, VerdictReason) {
        let rec = probe(s);
        let out = (rec.verdict.stable, rec.verdict.reason);
        result.record(rec);
        out
    };

    let (ok, reason) = check(result, lo);
    if !ok {
        return Err(Error::Bracket(format!(
            "lower bound {lo} MW is not stable ({})",
            reason.as_str()
        )));
    }
    let mut lo = lo;
    let mut hi = hi.min(headroom);
    let mut width = hi - lo;
    let mut hi_reason = None;
    loop {
        if hi <= lo {
            result.margin_mw = lo;
            result.limiting_reason = Some("headroom".to_string());
            return Ok(());
        }
        let (ok, reason) = check(result, hi);
        if !ok {
            hi_reason = Some(reason);
            break;
        }
        lo = hi;
        if hi >= headroom {
            break;
        }
        width *= 2.0;
        hi = (lo + width).min(headroom);
    }
    let Some(reason) = hi_reason else {
        result.margin_mw = lo;
        result.limiting_reason = Some("headroom".to_string());
        return Ok(());
    };
    let mut reason = reason;
    while hi - lo > tol + 1e-9 {
        let mut mid = snap(0.5 * (lo + hi));
        if mid <= lo + 1e-9 {
            mid = lo + grid;
        }
        if mid >= hi - 1e-9 {
            break;
        }
        let (ok, r) = check(result, mid);
        if ok {
            lo = mid;
        } else {
            hi = mid;
            reason = r;
        }
    }
    result.margin_mw = lo;
    result.limiting_reason = Some(reason.as_str().to_string());

    let spot = snap(0.5 * lo);
    if spot > 0.0 && lo - spot > tol && !result.levels.iter().any(|l| (l.stress_mw - spot).abs() < 1e-9) {
        check(result, spot);
    }
    let bad = result.inconsistencies();
    if !bad.is_empty() {
        result.warn(format!(
            "verdicts are not monotone in stress: unstable at {bad:?} MW below the stable margin {lo} MW"
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cases::builtin_twobus;

    fn fixture(stable: impl Fn(f64) -> bool) -> impl FnMut(f64) -> LevelRecord {
        move |s| LevelRecord {
            stress_mw: s,
            verdict: if stable(s) {
                Verdict::stable(0.95)
            } else {
                Verdict::unstable(VerdictReason::LowVoltageFinal, 1000.0, 0.85)
            },
            voltages: vec![1.0],
        }
    }

    fn empty() -> MarginResult {
        let case = builtin_twobus();
        let s = StressSchedule::for_case(&case).unwrap();
        MarginResult::new(MarginMethod::Sol, &case, "A", &s)
    }

    #[test]
    fn degenerate_bracket_returns_lower_bound() {
        let mut r = empty();
        bisect(&mut r, 142.0, 143.0, 1.0, 1.0, f64::INFINITY, fixture(|s| s <= 142.0)).unwrap();
        assert_eq!(r.margin_mw, 142.0);
        assert!(r.warnings.is_empty());
    }

    #[test]
    fn bisection_finds_boundary_on_grid() {
        let mut r = empty();
        bisect(&mut r, 0.0, 50.0, 1.0, 1.0, f64::INFINITY, fixture(|s| s <= 173.0)).unwrap();
        assert_eq!(r.margin_mw, 173.0);
        assert_eq!(r.limiting_reason.as_deref(), Some("low_voltage_final"));
        assert!(r.levels.windows(2).all(|w| w[0].stress_mw < w[1].stress_mw));
    }

    #[test]
    fn unstable_lower_bound_is_a_bracket_error() {
        let mut r = empty();
        let err = bisect(&mut r, 10.0, 20.0, 1.0, 1.0, f64::INFINITY, fixture(|_| false)).unwrap_err();
        assert!(matches!(err, Error::Bracket(_)));
    }

    #[test]
    fn non_monotone_verdicts_warn() {
        // stable below 100 and again from 180 to 250
        let mut r = empty();
        let stable = |s: f64| s < 100.0 || (180.0..=250.0).contains(&s);
        bisect(&mut r, 0.0, 400.0, 1.0, 1.0, f64::INFINITY, fixture(stable)).unwrap();
        assert_eq!(r.margin_mw, 250.0);
        assert_eq!(r.warnings.len(), 1, "{:?}", r.warnings);
    }

    #[test]
    fn headroom_bounds_the_search() {
        let mut r = empty();
        bisect(&mut r, 0.0, 10.0, 1.0, 1.0, 35.0, fixture(|_| true)).unwrap();
        assert_eq!(r.margin_mw, 35.0);
        assert_eq!(r.limiting_reason.as_deref(), Some("headroom"));
    }
}
