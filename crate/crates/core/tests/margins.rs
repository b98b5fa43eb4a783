use approx::assert_relative_eq;

use secmargin::cases::{builtin_parallel_twobus, builtin_two_area, builtin_twobus, LoadModel, TwoAreaLoadMix};
use secmargin::dynmodels::{zip_power, ZipLoadParams};
use secmargin::margins::{
    binary_search_sol, compute_pcll, compute_sol, distribute_stress, sample_pv_curve, stress_direction,
    StabilityCriterion, StressSchedule,
};
use secmargin::netmodel::{continuation_loadability, ContinuationOptions};

#[test]
fn twobus_static_nose_matches_closed_form() {
    let case = builtin_twobus();
    let schedule = StressSchedule::for_case(&case).unwrap();
    let plan = stress_direction(&case, &schedule).unwrap();
    let r = continuation_loadability(&case, &plan.direction, &ContinuationOptions::default()).unwrap();
    // V1^2 / (2x) - P0
    assert_relative_eq!(r.lambda_max_mw, 400.0, max_relative = 0.005);
}

#[test]
fn twobus_pv_curve_follows_the_upper_branch() {
    let case = builtin_twobus();
    let schedule = StressSchedule::for_case(&case).unwrap().with_steps(5.0, 20.0);
    let r = compute_pcll(
        &case,
        case.contingency("none").unwrap(),
        &schedule,
        &StabilityCriterion::collapse_only(0.6),
    )
    .unwrap();
    let curve = sample_pv_curve(&r, 2).unwrap();
    assert!(curve.points.len() > 10);
    for (p_mw, v) in curve.points {
        let p = p_mw / 100.0;
        let x = 0.1;
        let exact = ((1.0 + (1.0 - 4.0 * p * p * x * x).sqrt()) / 2.0).sqrt();
        assert!((v - exact).abs() < 1e-4, "P {p_mw}: {v} vs {exact}");
    }
}

#[test]
fn parallel_twobus_trip_uses_the_doubled_reactance() {
    let case = builtin_parallel_twobus();
    let schedule = StressSchedule::for_case(&case).unwrap().with_steps(1.0, 10.0);
    let r = compute_pcll(
        &case,
        case.contingency("trip_L1b").unwrap(),
        &schedule,
        &StabilityCriterion::collapse_only(0.6),
    )
    .unwrap();
    assert_relative_eq!(r.margin_mw, 150.0, max_relative = 0.01);
}

#[test]
fn stress_keeps_the_power_factor() {
    let mut case = builtin_twobus();
    let q0 = 100.0 * 0.95f64.acos().tan();
    case.loads[0].model = LoadModel::Zip(ZipLoadParams::constant_power(100.0, q0));
    let schedule = StressSchedule::for_case(&case).unwrap();
    let stressed = distribute_stress(&case, 10.0, &schedule).unwrap();
    let LoadModel::Zip(z) = &stressed.loads[0].model else {
        unreachable!()
    };
    let (p, q) = zip_power(z, 1.0);
    assert_relative_eq!(p, 110.0, max_relative = 1e-12);
    assert!((q - q0 - 3.287).abs() < 5e-4, "dQ = {}", q - q0);
}

#[test]
fn negative_stress_is_rejected() {
    let case = builtin_twobus();
    let schedule = StressSchedule::for_case(&case).unwrap();
    assert!(distribute_stress(&case, -1.0, &schedule).is_err());
}

#[test]
fn constant_impedance_load_is_more_loadable_than_constant_power() {
    let schedule = |c: &_| StressSchedule::for_case(c).unwrap().with_steps(5.0, 5.0);
    let criterion = StabilityCriterion::default();
    let cp = builtin_two_area(TwoAreaLoadMix::default());
    let cz = builtin_two_area(TwoAreaLoadMix::Zip {
        p: [1.0, 0.0, 0.0],
        q: [1.0, 0.0, 0.0],
    });
    let p_cp = compute_pcll(&cp, cp.contingency("A").unwrap(), &schedule(&cp), &criterion).unwrap();
    let p_cz = compute_pcll(&cz, cz.contingency("A").unwrap(), &schedule(&cz), &criterion).unwrap();
    assert!(
        p_cz.margin_mw > p_cp.margin_mw,
        "{} vs {}",
        p_cz.margin_mw,
        p_cp.margin_mw
    );
}

#[test]
fn bisection_matches_the_linear_scan() {
    let case = builtin_two_area(TwoAreaLoadMix::default());
    let contingency = case.contingency("A").unwrap();
    let schedule = StressSchedule::for_case(&case).unwrap().with_steps(5.0, 20.0);
    let criterion = StabilityCriterion::default();
    let linear = compute_sol(&case, contingency, &schedule, &criterion).unwrap();
    let bisect = binary_search_sol(&case, contingency, 0.0, 100.0, 5.0, &schedule, &criterion).unwrap();
    assert!(
        (linear.margin_mw - bisect.margin_mw).abs() <= 5.0,
        "{} vs {}",
        linear.margin_mw,
        bisect.margin_mw
    );
    assert!(bisect.levels.len() < linear.levels.len());
}

#[test]
fn sol_pv_curve_lies_on_or_below_pcll() {
    let case = builtin_two_area(TwoAreaLoadMix::default());
    let contingency = case.contingency("A").unwrap();
    let schedule = StressSchedule::for_case(&case).unwrap().with_steps(20.0, 20.0);
    let criterion = StabilityCriterion::default();
    let pcll = compute_pcll(&case, contingency, &schedule, &criterion).unwrap();
    let sol = compute_sol(&case, contingency, &schedule, &criterion).unwrap();
    let bus = case.monitoring.buses[0];
    let a = sample_pv_curve(&pcll, bus).unwrap();
    let b = sample_pv_curve(&sol, bus).unwrap();
    let mut shared = 0;
    for (p, v_sol) in &b.points {
        if let Some((_, v_pcll)) = a.points.iter().find(|(q, _)| (q - p).abs() < 1e-9) {
            shared += 1;
            assert!(*v_sol <= v_pcll + 1e-3, "P {p}: SOL {v_sol} PCLL {v_pcll}");
        }
    }
    assert!(shared > 3);
}
