//! Security margins: stress distribution, the post-contingency loadability
//! limit (PCLL) and the secure operating limit (SOL).
//!
//! The two methods differ in where the stress goes. PCLL applies the
//! contingency first and then injects each increment into the running
//! simulation. SOL rebuilds the stressed pre-contingency operating point for
//! every level and then simulates the contingency from it.

mod pcll;
mod sol;

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::cases::{GeneratorModel, LoadModel, SystemCase};
use crate::error::{Error, Result};
use crate::netmodel::{AvrSteadyState, GeneratorControl, PowerFlowOptions, PowerFlowSolution, StressDirection};
use crate::simulator::{initialize_dynamics, DynamicState, MachineState, SimOptions, StopPolicy, Verdict};

pub use pcll::compute_pcll;
pub use sol::{binary_search_sol, compute_sol, sol_operating_point};

/// Stress levels: `coarse_step` increments up to `coarse_until`, then
/// `fine_step`. Loads grow in `load_area`, generation in `gen_area`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StressSchedule {
    pub fine_step: f64,
    pub coarse_step: f64,
    pub coarse_until: f64,
    pub load_area: u32,
    pub gen_area: u32,
}

impl StressSchedule {
    pub fn new(load_area: u32, gen_area: u32) -> Self {
        StressSchedule {
            fine_step: 1.0,
            coarse_step: 5.0,
            coarse_until: 300.0,
            load_area,
            gen_area,
        }
    }

    /// Default schedule on the stress areas declared by the case.
    pub fn for_case(case: &SystemCase) -> Result<Self> {
        let areas = case
            .stress
            .ok_or_else(|| Error::Validation(vec![format!("case '{}' declares no stress areas", case.name)]))?;
        Ok(Self::new(areas.load_area, areas.gen_area))
    }

    pub fn with_steps(mut self, fine: f64, coarse: f64) -> Self {
        self.fine_step = fine;
        self.coarse_step = coarse;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let mut out = Vec::new();
        if !(self.fine_step > 0.0) {
            out.push(format!("stress schedule: fine_step = {} (must be > 0)", self.fine_step));
        }
        if !(self.coarse_step >= self.fine_step) {
            out.push(format!(
                "stress schedule: coarse_step = {} (must be >= fine_step {})",
                self.coarse_step, self.fine_step
            ));
        }
        if !(self.coarse_until >= 0.0) {
            out.push(format!(
                "stress schedule: coarse_until = {} (must be >= 0)",
                self.coarse_until
            ));
        }
        if out.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(out))
        }
    }

    /// Next level after `s` and whether it is still a coarse step.
    fn next(&self, s: f64, coarse: bool) -> (f64, bool) {
        if coarse && self.coarse_step > self.fine_step && s + self.coarse_step <= self.coarse_until + 1e-9 {
            (s + self.coarse_step, true)
        } else {
            (s + self.fine_step, false)
        }
    }
}

/// Stress direction of a schedule plus the generation headroom that bounds
/// it (infinite when an ideal source in the generation area takes the slack).
#[derive(Debug, Clone, PartialEq)]
pub struct StressPlan {
    pub direction: StressDirection,
    pub headroom_mw: f64,
}

/// Loads in `load_area` share the stress in proportion to their nominal P.
/// Generators in `gen_area` share it by participation factor if any unit
/// declares one, else by headroom `P_max - P`. An ideal source in the area
/// picks up everything itself.
pub fn stress_direction(case: &SystemCase, schedule: &StressSchedule) -> Result<StressPlan> {
    schedule.validate()?;
    let in_area = |bus: u32, area: u32| case.area_of(bus) == Some(area);
    let nominal: Vec<f64> = case
        .loads
        .iter()
        .map(|l| {
            if in_area(l.bus, schedule.load_area) {
                l.model.nominal_p_mw()
            } else {
                0.0
            }
        })
        .collect();
    let total: f64 = nominal.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Validation(vec![format!(
            "stress load area {} has no load with positive nominal P",
            schedule.load_area
        )]));
    }
    let loads = nominal.iter().map(|p| p / total).collect();

    let units: Vec<usize> = case
        .generators
        .iter()
        .enumerate()
        .filter(|(_, g)| g.in_service && in_area(g.bus, schedule.gen_area))
        .map(|(k, _)| k)
        .collect();
    let mut generators = vec![0.0; case.generators.len()];
    if units
        .iter()
        .any(|&k| case.generators[k].model == GeneratorModel::InfiniteBus)
    {
        return Ok(StressPlan {
            direction: StressDirection { loads, generators },
            headroom_mw: f64::INFINITY,
        });
    }
    let headroom: Vec<f64> = units
        .iter()
        .map(|&k| {
            let g = &case.generators[k];
            (g.p_max_mw() - g.p_mw).max(0.0)
        })
        .collect();
    let total_headroom: f64 = headroom.iter().sum();
    let use_factors = units.iter().any(|&k| case.generators[k].participation.is_some());
    let weights: Vec<f64> = if use_factors {
        units
            .iter()
            .map(|&k| case.generators[k].participation.unwrap_or(0.0))
            .collect()
    } else {
        headroom.clone()
    };
    let wsum: f64 = weights.iter().sum();
    if !(wsum > 0.0) {
        return Err(Error::Headroom {
            requested: schedule.fine_step,
            available: total_headroom,
        });
    }
    for (&k, w) in units.iter().zip(&weights) {
        generators[k] = w / wsum;
    }
    // with participation factors the first unit to reach its ceiling binds
    let headroom_mw = if use_factors {
        units
            .iter()
            .zip(&headroom)
            .filter(|(&k, _)| generators[k] > 0.0)
            .map(|(&k, h)| h / generators[k])
            .fold(f64::INFINITY, f64::min)
    } else {
        total_headroom
    };
    Ok(StressPlan {
        direction: StressDirection { loads, generators },
        headroom_mw,
    })
}

/// Copy of `case` with `delta` MW of stress added: nominal load at 1.0 pu
/// grows by `delta` at constant power factor and the generation area
/// dispatches the same amount.
pub fn distribute_stress(case: &SystemCase, delta: f64, schedule: &StressSchedule) -> Result<SystemCase> {
    if !(delta >= 0.0) {
        return Err(Error::Validation(vec![format!(
            "stress delta = {delta} MW (must be >= 0)"
        )]));
    }
    let plan = stress_direction(case, schedule)?;
    apply_plan(case, &plan, delta)
}

fn apply_plan(case: &SystemCase, plan: &StressPlan, delta: f64) -> Result<SystemCase> {
    if delta > plan.headroom_mw + 1e-9 {
        return Err(Error::Headroom {
            requested: delta,
            available: plan.headroom_mw,
        });
    }
    let mut out = case.clone();
    if delta == 0.0 {
        return Ok(out);
    }
    for (l, w) in out.loads.iter_mut().zip(&plan.direction.loads) {
        let share = w * delta;
        if share == 0.0 {
            continue;
        }
        match &mut l.model {
            LoadModel::Zip(z) => {
                let base = z.p0_mw * z.p_factor(1.0);
                if base > 0.0 {
                    z.z += share / base;
                }
            }
            LoadModel::Composite(c) => {
                let f = (c.p0_mw + share) / c.p0_mw;
                c.p0_mw *= f;
                c.q0_mvar *= f;
            }
        }
    }
    for (g, w) in out.generators.iter_mut().zip(&plan.direction.generators) {
        g.p_mw += w * delta;
    }
    Ok(out)
}

/// Verdict rules and run lengths used to judge every stress level.
#[derive(Debug, Clone, PartialEq)]
pub struct StabilityCriterion {
    pub stop: StopPolicy,
    /// Horizon of each SOL run and of the initial PCLL settle, s.
    pub t_end: f64,
    /// Longest a PCLL increment may take to settle, s.
    pub settle_cap: f64,
    pub sim: SimOptions,
}

impl Default for StabilityCriterion {
    fn default() -> Self {
        StabilityCriterion {
            stop: StopPolicy::default(),
            t_end: 1000.0,
            settle_cap: 300.0,
            sim: SimOptions {
                record: false,
                record_every: 200,
                ..Default::default()
            },
        }
    }
}

impl StabilityCriterion {
    /// Only outright collapse counts: the voltage thresholds are lowered to
    /// `v_min`, so the margin lands on the loadability nose instead of the
    /// 0.9 pu band.
    pub fn collapse_only(v_min: f64) -> Self {
        StabilityCriterion {
            stop: StopPolicy {
                v_final: v_min,
                v_early: v_min,
                ..Default::default()
            },
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum MarginMethod {
    Pcll,
    Sol,
}

impl MarginMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            MarginMethod::Pcll => "PCLL",
            MarginMethod::Sol => "SOL",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelRecord {
    pub stress_mw: f64,
    pub verdict: Verdict,
    /// Settled voltages of the monitored buses, pu.
    pub voltages: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginResult {
    pub margin_mw: f64,
    pub method: MarginMethod,
    pub contingency: String,
    /// Evaluated levels in increasing stress.
    pub levels: Vec<LevelRecord>,
    /// Why the scan stopped: the verdict reason of the first unstable
    /// level, or `headroom` when generation ran out first.
    pub limiting_reason: Option<String>,
    pub monitored: Vec<u32>,
    /// Nominal load of the stressed area before stress, MW.
    pub base_load_mw: f64,
    pub warnings: Vec<String>,
}

impl MarginResult {
    fn new(method: MarginMethod, case: &SystemCase, contingency: &str, schedule: &StressSchedule) -> Self {
        let base_load_mw = case
            .loads
            .iter()
            .filter(|l| case.area_of(l.bus) == Some(schedule.load_area))
            .map(|l| l.model.nominal_p_mw())
            .sum();
        MarginResult {
            margin_mw: 0.0,
            method,
            contingency: contingency.to_string(),
            levels: Vec::new(),
            limiting_reason: None,
            monitored: monitored_buses(case),
            base_load_mw,
            warnings: Vec::new(),
        }
    }

    /// Insert a level, replacing an earlier record at the same stress.
    fn record(&mut self, level: LevelRecord) {
        match self
            .levels
            .iter()
            .position(|l| (l.stress_mw - level.stress_mw).abs() < 1e-9)
        {
            Some(k) => self.levels[k] = level,
            None => {
                let k = self.levels.partition_point(|l| l.stress_mw < level.stress_mw);
                self.levels.insert(k, level);
            }
        }
    }

    fn warn(&mut self, msg: String) {
        log::warn!("{msg}");
        self.warnings.push(msg);
    }

    /// Stable levels as (total stressed-area load MW, monitored voltages).
    pub fn pv_samples(&self) -> Vec<(f64, Vec<f64>)> {
        self.levels
            .iter()
            .filter(|l| l.verdict.stable)
            .map(|l| (self.base_load_mw + l.stress_mw, l.voltages.clone()))
            .collect()
    }

    /// Unstable levels that lie below a stable one.
    pub fn inconsistencies(&self) -> Vec<f64> {
        self.levels
            .iter()
            .filter(|l| !l.verdict.stable && l.stress_mw < self.margin_mw)
            .map(|l| l.stress_mw)
            .collect()
    }
}

fn monitored_buses(case: &SystemCase) -> Vec<u32> {
    if case.monitoring.buses.is_empty() {
        case.buses.iter().map(|b| b.id).collect()
    } else {
        case.monitoring.buses.clone()
    }
}

fn monitored_voltages(case: &SystemCase, buses: &[u32], v: &[f64]) -> Vec<f64> {
    let index = case.bus_index();
    buses.iter().map(|b| v[index[b]]).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PvCurve {
    pub bus: u32,
    /// (total stressed-area load MW, V pu), P strictly increasing.
    pub points: Vec<(f64, f64)>,
}

impl PvCurve {
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["P_MW", "V_pu"]).map_err(csv_err)?;
        for (p, v) in &self.points {
            out.write_record([p.to_string(), v.to_string()]).map_err(csv_err)?;
        }
        out.flush().map_err(|e| Error::io("<pv csv>", e))
    }
}

/// P-V curve of one monitored bus from the settled levels of a result.
pub fn sample_pv_curve(result: &MarginResult, bus: u32) -> Result<PvCurve> {
    let k = result
        .monitored
        .iter()
        .position(|&b| b == bus)
        .ok_or_else(|| Error::Lookup(format!("bus {bus} is not monitored")))?;
    let mut points: Vec<(f64, f64)> = Vec::new();
    for (p, v) in result.pv_samples() {
        if points.last().is_some_and(|last| p <= last.0) {
            continue;
        }
        points.push((p, v[k]));
    }
    Ok(PvCurve { bus, points })
}

/// One row of a margin table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginRow {
    pub scenario: String,
    pub load_config: String,
    pub method: String,
    pub margin_mw: Option<f64>,
    pub limiting_reason: String,
}

impl MarginRow {
    pub fn from_result(load_config: &str, r: &MarginResult) -> Self {
        MarginRow {
            scenario: r.contingency.clone(),
            load_config: load_config.to_string(),
            method: r.method.as_str().to_string(),
            margin_mw: Some(r.margin_mw),
            limiting_reason: r.limiting_reason.clone().unwrap_or_default(),
        }
    }
}

/// Margin table as CSV `scenario,load_config,method,margin_MW,limiting_reason`.
pub fn write_margin_table(rows: &[MarginRow], w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["scenario", "load_config", "method", "margin_MW", "limiting_reason"])
        .map_err(csv_err)?;
    for r in rows {
        let m = r.margin_mw.map(|m| m.to_string()).unwrap_or_default();
        out.write_record([&r.scenario, &r.load_config, &r.method, &m, &r.limiting_reason])
            .map_err(csv_err)?;
    }
    out.flush().map_err(|e| Error::io("<margin csv>", e))
}

fn csv_err(e: csv::Error) -> Error {
    Error::io("<csv>", std::io::Error::other(e.to_string()))
}

/// Intact operating point both methods start from: the case power flow with
/// taps settled, its dynamic equilibrium, and the regulator references that
/// pin every machine's steady-state voltage for stressed rebuilds.
#[derive(Debug, Clone)]
pub(crate) struct BaseState {
    pub pf: PowerFlowSolution,
    pub state: DynamicState,
    pub avr: Vec<Option<AvrSteadyState>>,
}

pub(crate) fn prepare_base(case: &SystemCase) -> Result<BaseState> {
    let options = PowerFlowOptions {
        adjust_taps: true,
        ..Default::default()
    };
    let pf = crate::netmodel::solve_power_flow_with(case, None, &options)?;
    let state = initialize_dynamics(case, &pf)?;
    let avr = case
        .generators
        .iter()
        .zip(&state.machines)
        .map(|(g, m)| match (m, &g.machine) {
            (MachineState::TwoAxis { gen, .. }, Some(params)) => Some(AvrSteadyState::new(params, gen.v_ref)),
            _ => None,
        })
        .collect();
    Ok(BaseState { pf, state, avr })
}

/// Generator control that holds every machine's voltage reference at its
/// unstressed value: the static counterpart of the dynamic runs, for
/// continuation studies comparable with PCLL.
pub fn regulated_control(case: &SystemCase) -> Result<GeneratorControl> {
    Ok(GeneratorControl::Avr(prepare_base(case)?.avr))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cases::{builtin_two_area, builtin_twobus, TwoAreaLoadMix};
    use crate::dynmodels::ZipLoadParams;
    use crate::simulator::VerdictReason;

    fn zip_load(case: &SystemCase, k: usize) -> &ZipLoadParams {
        match &case.loads[k].model {
            LoadModel::Zip(z) => z,
            _ => panic!("zip load expected"),
        }
    }

    #[test]
    fn zero_stress_leaves_case_unchanged() {
        let case = builtin_two_area(TwoAreaLoadMix::default());
        let s = StressSchedule::for_case(&case).unwrap();
        assert_eq!(distribute_stress(&case, 0.0, &s).unwrap(), case);
    }

    #[test]
    fn equal_loads_split_evenly() {
        let mut case = builtin_twobus();
        let mut second = case.loads[0].clone();
        second.id = "L2".into();
        case.loads.push(second);
        let s = StressSchedule::for_case(&case).unwrap();
        let out = distribute_stress(&case, 10.0, &s).unwrap();
        for k in 0..2 {
            assert!((zip_load(&out, k).z - 1.05).abs() < 1e-12);
        }
        let total: f64 = out.loads.iter().map(|l| l.model.nominal_p_mw()).sum();
        assert!((total - 210.0).abs() < 1e-9);
    }

    #[test]
    fn headroom_caps_stress() {
        let case = builtin_two_area(TwoAreaLoadMix::default());
        let s = StressSchedule::for_case(&case).unwrap();
        let plan = stress_direction(&case, &s).unwrap();
        assert!(plan.headroom_mw.is_finite());
        let gsum: f64 = plan.direction.generators.iter().sum();
        assert!((gsum - 1.0).abs() < 1e-12);
        let err = distribute_stress(&case, plan.headroom_mw + 1.0, &s).unwrap_err();
        assert!(matches!(err, Error::Headroom { .. }));
    }

    #[test]
    fn schedule_levels_go_coarse_then_fine() {
        let s = StressSchedule {
            coarse_until: 10.0,
            ..StressSchedule::new(1, 1)
        };
        let mut x = (0.0, true);
        let mut seen = Vec::new();
        for _ in 0..4 {
            x = s.next(x.0, x.1);
            seen.push(x.0);
        }
        assert_eq!(seen, vec![5.0, 10.0, 11.0, 12.0]);
        assert!(StressSchedule {
            fine_step: 0.0,
            ..s.clone()
        }
        .validate()
        .is_err());
        assert!(StressSchedule { coarse_step: 0.5, ..s }.validate().is_err());
    }

    #[test]
    fn pv_curve_keeps_stable_levels() {
        let case = builtin_twobus();
        let s = StressSchedule::for_case(&case).unwrap();
        let mut r = MarginResult::new(MarginMethod::Pcll, &case, "none", &s);
        for (p, ok) in [(10.0, true), (0.0, true), (20.0, false)] {
            r.record(LevelRecord {
                stress_mw: p,
                verdict: if ok {
                    Verdict::stable(0.95)
                } else {
                    Verdict::unstable(VerdictReason::LowVoltageFinal, 1.0, 0.8)
                },
                voltages: vec![1.0 - p / 100.0],
            });
        }
        let c = sample_pv_curve(&r, 2).unwrap();
        assert_eq!(c.points, vec![(100.0, 1.0), (110.0, 0.9)]);
        assert!(matches!(sample_pv_curve(&r, 99), Err(Error::Lookup(_))));
        let mut buf = Vec::new();
        c.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "P_MW,V_pu\n100,1\n110,0.9\n");
    }

    #[test]
    fn margin_table_layout() {
        let rows = vec![MarginRow {
            scenario: "A".into(),
            load_config: "cP=1".into(),
            method: "SOL".into(),
            margin_mw: Some(142.0),
            limiting_reason: "low_voltage_final".into(),
        }];
        let mut buf = Vec::new();
        write_margin_table(&rows, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "scenario,load_config,method,margin_MW,limiting_reason\nA,cP=1,SOL,142,low_voltage_final\n"
        );
    }
}
