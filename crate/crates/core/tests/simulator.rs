use proptest::prelude::*;

use secmargin::cases::{builtin_two_area, SystemCase, TwoAreaLoadMix};
use secmargin::margins::{sol_operating_point, StressSchedule};
use secmargin::simulator::{
    classify_instability, step, DynamicState, InstabilityClass, SimOptions, SimulationTrace, Simulator, StopPolicy,
    Verdict, VerdictReason,
};

fn two_area_at(mix: TwoAreaLoadMix, stress: f64) -> (SystemCase, DynamicState) {
    let case = builtin_two_area(mix);
    let schedule = StressSchedule::for_case(&case).unwrap();
    sol_operating_point(&case, &schedule, stress).unwrap()
}

fn replay(
    case: &SystemCase,
    state: DynamicState,
    label: &str,
    t_end: f64,
    opts: SimOptions,
) -> (SimulationTrace, Verdict) {
    let mut sim = Simulator::new(case, state, opts).unwrap();
    let c = case.contingency(label).unwrap().clone();
    let verdict = sim.run(Some(&c), t_end, &StopPolicy::default());
    (sim.take_trace(), verdict)
}

fn max_deviation(trace: &SimulationTrace, v0: &[f64]) -> f64 {
    trace
        .samples
        .iter()
        .flat_map(|s| s.v.iter().zip(v0).map(|(a, b)| (a - b).abs()))
        .fold(0.0, f64::max)
}

#[test]
fn undisturbed_equilibrium_stays_flat() {
    let (case, state) = two_area_at(TwoAreaLoadMix::default(), 0.0);
    let n = case.buses.len();
    let v0 = state.bus_voltages(n);
    let opts = SimOptions {
        fast_forward: false,
        ..Default::default()
    };
    let (trace, verdict) = replay(&case, state, "none", 10.0, opts);
    assert!(verdict.stable);
    let dev = max_deviation(&trace, &v0);
    assert!(dev < 1e-6, "drift {dev}");
}

#[test]
fn single_step_from_equilibrium_is_a_fixed_point() {
    let (case, state) = two_area_at(TwoAreaLoadMix::default(), 50.0);
    let next = step(&state, &case, 0.0005).unwrap();
    for (a, b) in state.voltages.iter().zip(&next.voltages) {
        assert!((a - b).norm() < 1e-9, "{a} -> {b}");
    }
}

#[test]
fn motor_loads_start_at_rest() {
    let (case, state) = two_area_at(TwoAreaLoadMix::motor_share(0.4), 0.0);
    let v0 = state.bus_voltages(case.buses.len());
    let opts = SimOptions {
        fast_forward: false,
        ..Default::default()
    };
    let (trace, verdict) = replay(&case, state, "none", 5.0, opts);
    assert!(verdict.stable);
    assert!(max_deviation(&trace, &v0) < 1e-6);
    let s0 = &trace.samples[0].slip;
    assert!(!s0.is_empty());
    for s in &trace.samples {
        for (a, b) in s.slip.iter().zip(s0) {
            assert!((a - b).abs() < 1e-8);
        }
    }
}

#[test]
fn fault_lasts_exactly_its_duration_and_holds_the_bus_down() {
    let (case, state) = two_area_at(TwoAreaLoadMix::default(), 0.0);
    let opts = SimOptions {
        record_every: 1,
        ..Default::default()
    };
    let dt = opts.dt;
    let (trace, _) = replay(&case, state, "A", 3.0, opts);
    let on = trace.events.iter().find(|e| e.kind == "fault_on").unwrap().t;
    let off = trace.events.iter().find(|e| e.kind == "fault_off").unwrap().t;
    assert_eq!(((off - on) / dt).round() as i64, 80);
    let k = case.bus_index()[&10];
    let during: Vec<f64> = trace
        .samples
        .iter()
        .filter(|s| s.t > on + 1e-9 && s.t < off - 1e-9)
        .map(|s| s.v[k])
        .collect();
    assert!(!during.is_empty());
    assert!(during.iter().all(|&v| v < 0.01), "{during:?}");
}

#[test]
fn scenario_a_low_stress_recovers() {
    let (case, state) = two_area_at(TwoAreaLoadMix::default(), 0.0);
    let (trace, verdict) = replay(&case, state, "A", 60.0, SimOptions::default());
    assert!(verdict.stable, "{verdict:?}");
    assert!(trace.samples.last().unwrap().min_voltage() > 0.9);
}

#[test]
fn scenario_a_beyond_limit_fails_with_a_violation_time() {
    let (case, state) = two_area_at(TwoAreaLoadMix::default(), 250.0);
    let (_, verdict) = replay(&case, state, "A", 300.0, SimOptions::default());
    assert!(!verdict.stable);
    let t = verdict.t_violation.expect("violation time");
    assert!(t > 1.0, "{t}");
}

#[test]
fn scenario_b_collapse_is_classified_as_voltage_instability() {
    let (case, state) = two_area_at(TwoAreaLoadMix::default(), 200.0);
    let (trace, verdict) = replay(&case, state, "B", 300.0, SimOptions::default());
    assert!(!verdict.stable);
    let class = classify_instability(&trace).unwrap();
    assert!(
        matches!(
            class,
            InstabilityClass::LossOfAttraction | InstabilityClass::LossOfEquilibrium
        ),
        "{class:?}"
    );
}

#[test]
fn replays_are_deterministic() {
    let (case, state) = two_area_at(TwoAreaLoadMix::default(), 100.0);
    let a = replay(&case, state.clone(), "A", 20.0, SimOptions::default());
    let b = replay(&case, state, "A", 20.0, SimOptions::default());
    assert_eq!(a, b);
}

#[test]
fn power_balances_through_a_fault() {
    let (case, state) = two_area_at(TwoAreaLoadMix::default(), 100.0);
    let mut sim = Simulator::new(&case, state, SimOptions::default()).unwrap();
    sim.schedule(case.contingency("A").unwrap());
    for k in 0..6000 {
        sim.step().unwrap();
        if k % 500 == 0 {
            let (gen, load, losses) = sim.power_balance();
            assert!(
                (gen - load - losses).abs() < 1e-3,
                "t {}: {gen} {load} {losses}",
                sim.time()
            );
        }
    }
}

#[test]
fn divergent_reason_is_reported_as_unstable() {
    let v = Verdict::unstable(VerdictReason::NumericalDivergence, 2.0, f64::NAN);
    assert!(!v.stable);
    assert_eq!(v.reason.as_str(), "numerical_divergence");
}

proptest! {
    #[test]
    fn no_early_stop_inside_grace(t_d in 0.0..100.0f64, frac in 0.0..0.999f64, v in 0.0..0.7f64) {
        let stop = StopPolicy::default();
        prop_assert!(!stop.early_stop(t_d + frac * stop.grace, t_d, v));
        prop_assert!(stop.early_stop(t_d + stop.grace + frac, t_d, v));
    }
}
