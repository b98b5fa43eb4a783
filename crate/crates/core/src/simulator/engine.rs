use std::collections::VecDeque;
use std::f64::consts::PI;

use num_complex::Complex64;

use super::events::{Contingency, EventAction};
use super::init::{DynamicState, LoadState, MachineState};
use super::network::{static_load_current, Injection, NetworkSolver};
use super::trace::{EventRecord, SimulationTrace, StopPolicy, TraceSample, Verdict, VerdictReason};
use crate::cases::{GeneratorModel, LoadModel, SystemCase};
use crate::dynmodels::{
    field_current, from_dq, generator_derivatives, governor_step, ltc_step, oel_update, terminal, to_dq,
    update_lighting, CompositeDesign, GeneratorParams, GovernorIeesgoParams, LtcParams, ZipLoadParams,
};
use crate::error::{Error, Result};
use crate::netmodel::{build_network, StressDirection};

#[derive(Debug, Clone, PartialEq)]
pub struct SimOptions {
    /// Integration step, s.
    pub dt: f64,
    /// Keep every n-th step in the trace.
    pub record_every: usize,
    /// Jump over quiescent stretches straight to the next timer expiry or
    /// event. Only taken when every derivative is below `ff_tol`.
    pub fast_forward: bool,
    pub ff_tol: f64,
    /// Current mismatch tolerance of the network solve, pu.
    pub net_tol: f64,
    pub max_corrector: usize,
    pub corrector_tol: f64,
    /// Keep a trace at all. Margin scans only need the final state.
    pub record: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            dt: 0.0005,
            record_every: 20,
            fast_forward: true,
            ff_tol: 1e-6,
            net_tol: 1e-8,
            max_corrector: 8,
            corrector_tol: 1e-9,
            record: true,
        }
    }
}

/// Outcome of [`Simulator::run_to_stabilization`].
#[derive(Debug, Clone, PartialEq)]
pub enum Settle {
    Stabilized,
    /// The cap elapsed while the system was still moving.
    TimedOut,
    Failed(Verdict),
}

#[derive(Debug, Clone)]
struct MachineData {
    id: String,
    node: usize,
    params: Option<GeneratorParams>,
    governor: GovernorIeesgoParams,
    /// Machine base over system base.
    ratio: f64,
}

#[derive(Debug, Clone)]
enum LoadKind {
    Zip(ZipLoadParams),
    Composite(CompositeDesign),
}

#[derive(Debug, Clone)]
struct LoadData {
    id: String,
    node: usize,
    kind: LoadKind,
}

#[derive(Debug, Clone)]
struct LtcData {
    branch: usize,
    node: usize,
    params: LtcParams,
}

#[derive(Debug, Clone)]
struct Devices {
    base: f64,
    omega_b: f64,
    gens: Vec<MachineData>,
    loads: Vec<LoadData>,
}

impl Devices {
    fn inject(&self, st: &DynamicState, v: &[Complex64], inj: &mut [Injection]) {
        for (g, m) in self.gens.iter().zip(&st.machines) {
            let (MachineState::TwoAxis { gen, .. }, Some(p)) = (m, &g.params) else {
                continue;
            };
            let k = g.ratio;
            let (vd, vq) = to_dq(v[g.node], gen.delta);
            let id = (gen.eq_p - vq) / p.xd_p;
            let iq = (vd - gen.ed_p) / p.xq_p;
            let (s, c) = gen.delta.sin_cos();
            let cross = s * c * (1.0 / p.xq_p - 1.0 / p.xd_p);
            let d = [
                k * cross,
                -k * (s * s / p.xd_p + c * c / p.xq_p),
                k * (s * s / p.xq_p + c * c / p.xd_p),
                -k * cross,
            ];
            inj[g.node].add(from_dq(id, iq, gen.delta) * k, d);
        }
        for (l, ls) in self.loads.iter().zip(&st.loads) {
            let vn = v[l.node];
            let m = vn.norm();
            match (&l.kind, ls) {
                (LoadKind::Zip(zp), LoadState::Zip { z }) => {
                    let (s, ds) = zp.network_power(m);
                    let f = z / self.base;
                    let (i, d) = static_load_current(vn, [s[0] * f, s[1] * f], [ds[0] * f, ds[1] * f]);
                    inj[l.node].sub(i, d);
                }
                (LoadKind::Composite(design), LoadState::Composite(cs)) => {
                    let (s, ds) = design.static_power(m, cs.dl_lit, cs.scale);
                    let f = 1.0 / self.base;
                    let (i, d) = static_load_current(vn, [s[0] * f, s[1] * f], [ds[0] * f, ds[1] * f]);
                    inj[l.node].sub(i, d);
                    for (md, ms) in design.motors.iter().zip(&cs.motors) {
                        if let (Some(md), true) = (md, ms.connected) {
                            let y = md.params.impedance(ms.slip).inv() * (md.mva * cs.scale / self.base);
                            inj[l.node].sub(y * vn, [y.re, -y.im, y.im, y.re]);
                        }
                    }
                }
                _ => unreachable!("load state kind matches the case"),
            }
        }
    }

    /// Load consumption at the node voltage, MW and Mvar.
    fn load_power(&self, l: usize, st: &LoadState, v: f64) -> (f64, f64) {
        match (&self.loads[l].kind, st) {
            (LoadKind::Zip(zp), LoadState::Zip { z }) => {
                let (s, _) = zp.network_power(v);
                (s[0] * z, s[1] * z)
            }
            (LoadKind::Composite(d), LoadState::Composite(cs)) => crate::dynmodels::composite_power(d, cs, v),
            _ => unreachable!("load state kind matches the case"),
        }
    }

    fn derivatives(&self, st: &DynamicState, out: &mut Vec<f64>) {
        out.clear();
        for (g, m) in self.gens.iter().zip(&st.machines) {
            if let (MachineState::TwoAxis { gen, .. }, Some(p)) = (m, &g.params) {
                let d = generator_derivatives(gen, p, st.voltages[g.node], self.omega_b);
                out.extend_from_slice(&[d.delta, d.omega, d.eq_p, d.ed_p, d.efd]);
            }
        }
        for (l, ls) in self.loads.iter().zip(&st.loads) {
            if let (LoadKind::Composite(design), LoadState::Composite(cs)) = (&l.kind, ls) {
                let v = st.voltages[l.node].norm();
                for (md, ms) in design.motors.iter().zip(&cs.motors) {
                    if let (Some(md), true) = (md, ms.connected) {
                        let mut f = md.slip_derivative(ms.slip, v);
                        if ms.slip >= 1.0 && f > 0.0 {
                            f = 0.0;
                        }
                        out.push(f);
                    }
                }
            }
        }
    }
}

fn get_x(st: &DynamicState, out: &mut Vec<f64>) {
    out.clear();
    for m in &st.machines {
        if let MachineState::TwoAxis { gen, .. } = m {
            out.extend_from_slice(&[gen.delta, gen.omega, gen.eq_p, gen.ed_p, gen.efd]);
        }
    }
    for ls in &st.loads {
        if let LoadState::Composite(cs) = ls {
            for ms in cs.motors.iter().filter(|m| m.connected) {
                out.push(ms.slip);
            }
        }
    }
}

/// Write back the differential states. Motor slips of motors that are not
/// part of a design never appear in the vector because they are never
/// connected.
fn set_x(st: &mut DynamicState, x: &[f64]) {
    let mut k = 0;
    for m in st.machines.iter_mut() {
        if let MachineState::TwoAxis { gen, .. } = m {
            gen.delta = x[k];
            gen.omega = x[k + 1];
            gen.eq_p = x[k + 2];
            gen.ed_p = x[k + 3];
            gen.efd = x[k + 4];
            k += 5;
        }
    }
    for ls in st.loads.iter_mut() {
        if let LoadState::Composite(cs) = ls {
            for ms in cs.motors.iter_mut().filter(|m| m.connected) {
                ms.slip = x[k].clamp(0.0, 1.0);
                k += 1;
            }
        }
    }
}

/// Fixed-step simulation of one case. Owns a working copy of the case whose
/// topology and taps follow the events of the run.
#[derive(Debug, Clone)]
pub struct Simulator {
    case: SystemCase,
    opts: SimOptions,
    dev: Devices,
    ltcs: Vec<LtcData>,
    n_bus: usize,
    net: NetworkSolver,
    fault: Option<(usize, Complex64)>,
    /// Node voltages just before the active fault was applied.
    prefault: Option<Vec<Complex64>>,
    state: DynamicState,
    /// Steps taken since construction; time is `t0 + k dt`.
    k: u64,
    t0: f64,
    pending: VecDeque<(u64, EventAction)>,
    stalled: Vec<[bool; 2]>,
    rate: f64,
    trace: SimulationTrace,
    x_buf: Vec<f64>,
}

impl Simulator {
    pub fn new(case: &SystemCase, state: DynamicState, opts: SimOptions) -> Result<Self> {
        if !(opts.dt > 0.0) || opts.record_every == 0 {
            return Err(Error::Validation(vec![
                "dt must be > 0 and record_every >= 1".to_string()
            ]));
        }
        let mut case = case.clone();
        if state.machines.len() != case.generators.len()
            || state.loads.len() != case.loads.len()
            || state.ltcs.len() != case.ltcs.len()
        {
            return Err(Error::Initialization(
                "dynamic state does not match the case".to_string(),
            ));
        }
        let index = case.bus_index();
        let mut ltcs = Vec::new();
        for (unit, st) in case.ltcs.clone().iter().zip(&state.ltcs) {
            let branch = case
                .branch_position(&unit.branch)
                .ok_or_else(|| Error::Structural(format!("tap changer on missing branch {}", unit.branch)))?;
            case.branches[branch].tap = st.tap;
            ltcs.push(LtcData {
                branch,
                node: index[&unit.params.controlled_bus],
                params: unit.params.clone(),
            });
        }
        for (g, m) in case.generators.iter_mut().zip(&state.machines) {
            if matches!(m, MachineState::Offline) {
                g.in_service = false;
            }
        }
        let (y, load_nodes) = build_network(&case)?;
        if y.dim() != state.voltages.len() {
            return Err(Error::Initialization(
                "dynamic state does not match the network".to_string(),
            ));
        }
        let gens: Vec<MachineData> = case
            .generators
            .iter()
            .map(|g| MachineData {
                id: g.id.clone(),
                node: index[&g.bus],
                params: g.machine.clone(),
                governor: g.governor.clone(),
                ratio: g.machine.as_ref().map(|m| m.s_base_mva / case.base_mva).unwrap_or(0.0),
            })
            .collect();
        let loads: Vec<LoadData> = case
            .loads
            .iter()
            .zip(&load_nodes)
            .map(|(l, &node)| LoadData {
                id: l.id.clone(),
                node,
                kind: match &l.model {
                    LoadModel::Zip(z) => {
                        // the size multiplier lives in the state
                        let mut z = z.clone();
                        z.z = 1.0;
                        LoadKind::Zip(z)
                    }
                    LoadModel::Composite(c) => LoadKind::Composite(c.design()),
                },
            })
            .collect();
        let fixed = fixed_nodes(y.dim(), &gens, &state);
        let net = NetworkSolver::new(y, &fixed, opts.net_tol);

        let mut motors = Vec::new();
        for (l, ls) in loads.iter().zip(&state.loads) {
            if let (LoadKind::Composite(d), LoadState::Composite(_)) = (&l.kind, ls) {
                for (tag, m) in ["lim", "sim"].iter().zip(&d.motors) {
                    if m.is_some() {
                        motors.push(format!("{}.{tag}", l.id));
                    }
                }
            }
        }
        let trace = SimulationTrace {
            dt: opts.dt,
            record_every: opts.record_every,
            t_start: state.t,
            buses: case.buses.iter().map(|b| b.label()).collect(),
            generators: gens.iter().map(|g| g.id.clone()).collect(),
            loads: loads.iter().map(|l| l.id.clone()).collect(),
            motors,
            inertia: gens
                .iter()
                .map(|g| g.params.as_ref().map(|p| p.h * p.s_base_mva).unwrap_or(0.0))
                .collect(),
            reference: case
                .generators
                .iter()
                .position(|g| g.in_service && g.model == GeneratorModel::InfiniteBus),
            ..Default::default()
        };
        let n_bus = case.buses.len();
        let mut sim = Simulator {
            dev: Devices {
                base: case.base_mva,
                omega_b: 2.0 * PI * case.frequency_hz,
                gens,
                loads,
            },
            stalled: vec![[false; 2]; case.loads.len()],
            case,
            ltcs,
            n_bus,
            net,
            fault: None,
            prefault: None,
            t0: state.t,
            state,
            k: 0,
            pending: VecDeque::new(),
            rate: f64::INFINITY,
            trace,
            x_buf: Vec::new(),
            opts,
        };
        let mut st = sim.state.clone();
        sim.solve_network(&mut st)?;
        sim.state = st;
        // rate stays unknown until the first step has armed the limiter timers
        sim.record();
        Ok(sim)
    }

    pub fn state(&self) -> &DynamicState {
        &self.state
    }

    pub fn time(&self) -> f64 {
        self.state.t
    }

    pub fn options(&self) -> &SimOptions {
        &self.opts
    }

    /// Working copy of the case (taps and tripped elements as simulated).
    pub fn case(&self) -> &SystemCase {
        &self.case
    }

    pub fn trace(&self) -> &SimulationTrace {
        &self.trace
    }

    pub fn take_trace(&mut self) -> SimulationTrace {
        let fresh = SimulationTrace {
            samples: Vec::new(),
            events: Vec::new(),
            verdict: None,
            disturbance: None,
            t_start: self.state.t,
            ..self.trace.clone_header()
        };
        std::mem::replace(&mut self.trace, fresh)
    }

    pub fn bus_voltages(&self) -> Vec<f64> {
        self.state.bus_voltages(self.n_bus)
    }

    pub fn min_bus_voltage(&self) -> f64 {
        self.state.voltages[..self.n_bus]
            .iter()
            .map(|v| v.norm())
            .fold(f64::INFINITY, f64::min)
    }

    /// Largest state derivative at the last step.
    pub fn max_rate(&mut self, st: &DynamicState) -> f64 {
        let mut f = std::mem::take(&mut self.x_buf);
        self.dev.derivatives(st, &mut f);
        let m = f.iter().fold(0.0f64, |a, x| a.max(x.abs()));
        self.x_buf = f;
        m
    }

    /// Total generation, load and network losses, MW. Ideal sources report
    /// the power they inject at their node.
    pub fn power_balance(&self) -> (f64, f64, f64) {
        let v = &self.state.voltages;
        let y = self.net.admittance();
        let yv = y.mul(v);
        let losses: f64 = v.iter().zip(&yv).map(|(v, i)| (v * i.conj()).re).sum::<f64>() * self.dev.base;
        let mut inj = vec![Injection::default(); v.len()];
        self.dev.inject(&self.state, v, &mut inj);
        let mut gen = 0.0;
        for (g, m) in self.dev.gens.iter().zip(&self.state.machines) {
            match m {
                MachineState::TwoAxis { gen: st, .. } => {
                    let p = g.params.as_ref().expect("two-axis machine has parameters");
                    gen += terminal(p, st, v[g.node]).p * p.s_base_mva;
                }
                MachineState::InfiniteBus { .. } => {
                    // whatever the node needs beyond the other devices there
                    let i = yv[g.node] - inj[g.node].i;
                    gen += (v[g.node] * i.conj()).re * self.dev.base;
                }
                MachineState::Offline => {}
            }
        }
        let load: f64 = self
            .dev
            .loads
            .iter()
            .enumerate()
            .map(|(l, d)| self.dev.load_power(l, &self.state.loads[l], v[d.node].norm()).0)
            .sum();
        (gen, load, losses)
    }

    fn rebuild_network(&mut self) -> Result<()> {
        let (mut y, _) = build_network(&self.case)?;
        if let Some((node, yf)) = self.fault {
            y.add_shunt(node, yf);
        }
        self.net.set_admittance(y);
        Ok(())
    }

    fn solve_network(&mut self, st: &mut DynamicState) -> Result<usize> {
        let mut v = std::mem::take(&mut st.voltages);
        let dev = &self.dev;
        let r = self.net.solve(&mut v, |v, inj| dev.inject(st, v, inj));
        st.voltages = v;
        r
    }

    fn log(&mut self, kind: &str, device: impl Into<String>, value: Option<f64>) {
        self.trace.events.push(EventRecord {
            t: self.state.t,
            kind: kind.to_string(),
            device: device.into(),
            value,
        });
    }

    /// Queue a contingency with its offsets counted from the current time.
    pub fn schedule(&mut self, contingency: &Contingency) {
        let mut items: Vec<(u64, EventAction)> = self.pending.drain(..).collect();
        for ev in &contingency.events {
            let steps = (ev.t / self.opts.dt).round().max(0.0) as u64;
            items.push((self.k + steps, ev.action.clone()));
        }
        items.sort_by_key(|e| e.0);
        if let (Some(first), Some(last)) = (items.first(), items.last()) {
            let t = |k: u64| self.t0 + k as f64 * self.opts.dt;
            self.trace.disturbance = Some((t(first.0), t(last.0)));
        }
        self.pending = items.into();
    }

    fn apply_event(&mut self, action: EventAction) -> Result<()> {
        match action {
            EventAction::ApplyBusFault { bus, g, b } => {
                let node = *self
                    .case
                    .bus_index()
                    .get(&bus)
                    .ok_or_else(|| Error::Lookup(format!("fault bus {bus} not in case")))?;
                self.fault = Some((node, Complex64::new(g, b)));
                self.log("fault_on", bus.to_string(), None);
            }
            EventAction::ClearFault => {
                self.fault = None;
                self.log("fault_off", "", None);
            }
            EventAction::TripBranch { id } => {
                let p = self
                    .case
                    .branch_position(&id)
                    .ok_or_else(|| Error::Lookup(format!("branch {id} not in case")))?;
                self.case.branches[p].in_service = false;
                self.log("trip_branch", id, None);
            }
            EventAction::TripGenerator { id } => {
                let p = self
                    .case
                    .generator_position(&id)
                    .ok_or_else(|| Error::Lookup(format!("generator {id} not in case")))?;
                let was_source = matches!(self.state.machines[p], MachineState::InfiniteBus { .. });
                self.state.machines[p] = MachineState::Offline;
                self.case.generators[p].in_service = false;
                if was_source {
                    let fixed = fixed_nodes(self.state.voltages.len(), &self.dev.gens, &self.state);
                    self.net = NetworkSolver::new(self.net.admittance().clone(), &fixed, self.opts.net_tol);
                }
                self.log("trip_generator", id, None);
            }
        }
        self.rebuild_network()
    }

    fn apply_due_events(&mut self) -> Result<()> {
        let mut any = false;
        let before = self.state.voltages.clone();
        while self.pending.front().is_some_and(|e| e.0 <= self.k) {
            let (_, action) = self.pending.pop_front().expect("checked non-empty");
            if matches!(action, EventAction::ApplyBusFault { .. }) {
                self.prefault = Some(before.clone());
            }
            self.apply_event(action)?;
            any = true;
        }
        if !any {
            return Ok(());
        }
        let mut st = self.state.clone();
        if let Err(e) = self.solve_network(&mut st) {
            // Newton from the collapsed fault-on voltages can miss the
            // post-clearing solution; the pre-fault profile is a better start
            let Some(v0) = self.prefault.clone() else { return Err(e) };
            st = self.state.clone();
            st.voltages = v0;
            self.solve_network(&mut st)?;
        }
        if self.fault.is_none() {
            self.prefault = None;
        }
        self.state = st;
        self.rate = f64::INFINITY;
        Ok(())
    }

    /// Advance one integration step: pending events, trapezoidal update of
    /// the differential states with a network solve per corrector pass, then
    /// the discrete controllers.
    pub fn step(&mut self) -> Result<()> {
        self.apply_due_events()?;
        let dt = self.opts.dt;
        let mut x0 = Vec::new();
        get_x(&self.state, &mut x0);
        let mut f0 = Vec::new();
        self.dev.derivatives(&self.state, &mut f0);

        let mut next = self.state.clone();
        let mut x: Vec<f64> = x0.iter().zip(&f0).map(|(x, f)| x + dt * f).collect();
        set_x(&mut next, &x);
        self.solve_network(&mut next)?;
        let mut f1 = Vec::new();
        for _ in 0..self.opts.max_corrector {
            self.dev.derivatives(&next, &mut f1);
            let mut change = 0.0f64;
            for i in 0..x.len() {
                let xi = x0[i] + 0.5 * dt * (f0[i] + f1[i]);
                change = change.max((xi - x[i]).abs());
                x[i] = xi;
            }
            set_x(&mut next, &x);
            self.solve_network(&mut next)?;
            if change < self.opts.corrector_tol {
                break;
            }
        }
        self.dev.derivatives(&next, &mut f1);
        self.rate = f1.iter().fold(0.0f64, |a, v| a.max(v.abs()));

        self.k += 1;
        next.t = self.t0 + self.k as f64 * dt;
        self.state = next;
        if self.discrete_updates()? {
            self.rebuild_network()?;
            let mut st = self.state.clone();
            self.solve_network(&mut st)?;
            self.state = st;
            self.rate = f64::INFINITY;
        }
        if self.k.is_multiple_of(self.opts.record_every as u64) {
            self.record();
        }
        Ok(())
    }

    /// Governors, OELs, lighting, stall flags and tap changers. Returns true
    /// when the network needs a new solve.
    fn discrete_updates(&mut self) -> Result<bool> {
        let dt = self.opts.dt;
        let t = self.state.t;
        let mut resolve = false;
        let mut logs: Vec<(&'static str, String, Option<f64>)> = Vec::new();
        for (g, m) in self.dev.gens.iter().zip(self.state.machines.iter_mut()) {
            let MachineState::TwoAxis { gen, gov, p_ref } = m else {
                continue;
            };
            let p = g.params.as_ref().expect("two-axis machine has parameters");
            let mut gp = g.governor.clone();
            gp.p_ref = *p_ref;
            gen.p_mech = governor_step(gov, &gp, gen.omega - 1.0, dt);
            let term = terminal(p, gen, self.state.voltages[g.node]);
            let ifd = field_current(p, gen, &term);
            let demand = p.k_avr * (gen.v_ref - term.vt - p.droop * term.q);
            if oel_update(p, gen, ifd, demand, t) {
                let kind = if gen.oel.active { "oel_on" } else { "oel_off" };
                logs.push((kind, g.id.clone(), Some(ifd)));
            }
        }
        for (l, (ls, stalled)) in self
            .dev
            .loads
            .iter()
            .zip(self.state.loads.iter_mut().zip(&mut self.stalled))
        {
            let LoadState::Composite(cs) = ls else { continue };
            let v = self.state.voltages[l.node].norm();
            let lit = update_lighting(cs.dl_lit, v);
            if lit != cs.dl_lit {
                cs.dl_lit = lit;
                resolve = true;
                logs.push((if lit { "dl_on" } else { "dl_off" }, l.id.clone(), Some(v)));
            }
            for (i, ms) in cs.motors.iter().enumerate() {
                let now = ms.connected && ms.slip >= 0.999;
                if now && !stalled[i] {
                    logs.push(("motor_stall", format!("{}.{}", l.id, ["lim", "sim"][i]), Some(v)));
                }
                stalled[i] = now;
            }
        }
        for (d, st) in self.ltcs.iter().zip(self.state.ltcs.iter_mut()) {
            let v = self.state.voltages[d.node].norm();
            if let Some(tap) = ltc_step(st, &d.params, v, t) {
                self.case.branches[d.branch].tap = tap;
                resolve = true;
                logs.push(("ltc", self.case.branches[d.branch].id.clone(), Some(tap)));
            }
        }
        if !logs.is_empty() {
            // a switched limiter moves the equilibrium; no fast-forward until it settles
            self.rate = f64::INFINITY;
        }
        for (kind, dev, value) in logs {
            self.log(kind, dev, value);
        }
        Ok(resolve)
    }

    fn sample(&self) -> TraceSample {
        let st = &self.state;
        let mut s = TraceSample {
            t: st.t,
            v: self.bus_voltages(),
            delta: Vec::with_capacity(st.machines.len()),
            speed: Vec::with_capacity(st.machines.len()),
            p: Vec::with_capacity(st.loads.len()),
            q: Vec::with_capacity(st.loads.len()),
            slip: Vec::new(),
        };
        for m in &st.machines {
            let (d, w) = match m {
                MachineState::TwoAxis { gen, .. } => (gen.delta, gen.omega),
                MachineState::InfiniteBus { v } => (v.arg(), 1.0),
                MachineState::Offline => (f64::NAN, f64::NAN),
            };
            s.delta.push(d);
            s.speed.push(w);
        }
        for (l, (d, ls)) in self.dev.loads.iter().zip(&st.loads).enumerate() {
            let (p, q) = self.dev.load_power(l, ls, st.voltages[d.node].norm());
            s.p.push(p);
            s.q.push(q);
            if let (LoadKind::Composite(design), LoadState::Composite(cs)) = (&d.kind, ls) {
                for (md, ms) in design.motors.iter().zip(&cs.motors) {
                    if md.is_some() {
                        s.slip.push(ms.slip);
                    }
                }
            }
        }
        s
    }

    fn record(&mut self) {
        if !self.opts.record {
            return;
        }
        let s = self.sample();
        self.trace.samples.push(s);
    }

    /// Every differential state and governor at rest.
    pub fn is_quiescent(&self) -> bool {
        self.rate < self.opts.ff_tol
            && self.dev.gens.iter().zip(&self.state.machines).all(|(g, m)| match m {
                MachineState::TwoAxis { gov, p_ref, .. } => {
                    let mut gp = g.governor.clone();
                    gp.p_ref = *p_ref;
                    gov.is_settled(&gp, self.opts.ff_tol)
                }
                _ => true,
            })
    }

    /// Earliest time a running LTC or OEL timer can fire.
    pub fn next_timer(&self) -> Option<f64> {
        let mut next: Option<f64> = None;
        let mut push = |t: f64| next = Some(next.map_or(t, |n: f64| n.min(t)));
        for (d, st) in self.ltcs.iter().zip(&self.state.ltcs) {
            let v = self.state.voltages[d.node].norm();
            if st.is_armed(&d.params, v) {
                let delay = if st.in_sequence {
                    d.params.delay_subsequent
                } else {
                    d.params.delay_first
                };
                push(st.timer_start.expect("armed timer has a start") + delay);
            }
        }
        for (g, m) in self.dev.gens.iter().zip(&self.state.machines) {
            if let (MachineState::TwoAxis { gen, .. }, Some(p)) = (m, &g.params) {
                if let Some(start) = gen.oel.timer_start {
                    push(start + p.t_oel);
                }
            }
        }
        next
    }

    pub fn timers_armed(&self) -> bool {
        self.next_timer().is_some()
    }

    fn step_of(&self, t: f64) -> u64 {
        ((t - self.t0) / self.opts.dt - 1e-6).ceil().max(0.0) as u64
    }

    /// Jump over a quiescent stretch ending no later than `t_limit`. The
    /// state is frozen; trace samples are filled in at their usual spacing.
    fn fast_forward(&mut self, t_limit: f64) {
        let mut target = self.step_of(t_limit);
        if let Some(t) = self.next_timer() {
            target = target.min(self.step_of(t));
        }
        if let Some(e) = self.pending.front() {
            // events apply at the start of a step
            target = target.min(e.0 + 1);
        }
        let target = target.saturating_sub(1);
        if target <= self.k {
            return;
        }
        let every = self.opts.record_every as u64;
        let mut j = (self.k / every + 1) * every;
        while j <= target {
            self.state.t = self.t0 + j as f64 * self.opts.dt;
            self.record();
            j += every;
        }
        self.k = target;
        self.state.t = self.t0 + self.k as f64 * self.opts.dt;
    }

    fn advance(&mut self, t_limit: f64) -> Result<()> {
        if self.opts.fast_forward && self.is_quiescent() {
            self.fast_forward(t_limit);
        }
        self.step()
    }

    /// Simulate to `t_end` applying `contingency` (offsets from now) and the
    /// stop policy. Numerical divergence ends the run with its own verdict.
    pub fn run(&mut self, contingency: Option<&Contingency>, t_end: f64, stop: &StopPolicy) -> Verdict {
        let mut t_dist = self.state.t;
        if let Some(c) = contingency {
            t_dist += c.disturbance_time().unwrap_or(0.0);
            self.schedule(c);
        }
        let verdict = self.run_until(t_end, t_dist, stop);
        self.trace.verdict = Some(verdict.clone());
        verdict
    }

    fn run_until(&mut self, t_end: f64, t_dist: f64, stop: &StopPolicy) -> Verdict {
        let end = self.step_of(t_end);
        while self.k < end {
            if let Err(e) = self.advance(t_end) {
                log::debug!("simulation diverged at t = {:.4}: {e}", self.state.t);
                let t = self.state.t + self.opts.dt;
                return Verdict::unstable(VerdictReason::NumericalDivergence, t, f64::NAN);
            }
            let m = self.min_bus_voltage();
            if stop.early_stop(self.state.t, t_dist, m) {
                if !self.k.is_multiple_of(self.opts.record_every as u64) {
                    self.record();
                }
                return Verdict::unstable(VerdictReason::VoltageCollapseEarly, self.state.t, m);
            }
        }
        stop.final_verdict(self.state.t, self.min_bus_voltage())
    }

    /// Simulate until the system settles: quiescent with no timer running,
    /// or voltage swing below 1e-4 pu over a 5 s window with speeds within
    /// 1e-5 pu of nominal and no timer running. Gives up after `cap` seconds.
    /// A bus below `stop.v_early` once `stop.grace` has passed since `since`
    /// fails the run.
    pub fn run_to_stabilization(&mut self, cap: f64, stop: &StopPolicy, since: f64) -> Settle {
        const WINDOW: f64 = 5.0;
        let t_start = self.state.t;
        let t_cap = t_start + cap;
        let mut window: VecDeque<(f64, Vec<f64>)> = VecDeque::new();
        let mut next_probe = t_start;
        loop {
            if self.is_quiescent() && !self.timers_armed() && self.pending.is_empty() {
                return Settle::Stabilized;
            }
            if self.state.t >= t_cap - 1e-9 {
                return Settle::TimedOut;
            }
            if let Err(e) = self.advance(t_cap) {
                log::debug!("simulation diverged at t = {:.4}: {e}", self.state.t);
                let t = self.state.t + self.opts.dt;
                return Settle::Failed(Verdict::unstable(VerdictReason::NumericalDivergence, t, f64::NAN));
            }
            let m = self.min_bus_voltage();
            if stop.early_stop(self.state.t, since, m) {
                return Settle::Failed(Verdict::unstable(VerdictReason::VoltageCollapseEarly, self.state.t, m));
            }
            if self.state.t >= next_probe {
                next_probe = self.state.t + 0.1;
                window.push_back((self.state.t, self.bus_voltages()));
                while window.front().is_some_and(|w| self.state.t - w.0 > WINDOW + 1e-9) {
                    window.pop_front();
                }
                let span = window.back().map(|w| w.0).unwrap_or(0.0) - window.front().map(|w| w.0).unwrap_or(0.0);
                if span >= WINDOW - 0.1 - 1e-9 && !self.timers_armed() && self.pending.is_empty() {
                    let swing = (0..self.n_bus)
                        .map(|i| {
                            let (lo, hi) = window.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), w| {
                                (lo.min(w.1[i]), hi.max(w.1[i]))
                            });
                            hi - lo
                        })
                        .fold(0.0f64, f64::max);
                    let speed = self
                        .state
                        .machines
                        .iter()
                        .map(|m| match m {
                            MachineState::TwoAxis { gen, .. } => (gen.omega - 1.0).abs(),
                            _ => 0.0,
                        })
                        .fold(0.0f64, f64::max);
                    if swing < 1e-4 && speed < 1e-5 {
                        return Settle::Stabilized;
                    }
                }
            }
        }
    }

    /// Add `delta_mw` of stress along `direction` to the running system:
    /// loads grow at constant power factor, generator setpoints follow.
    pub fn apply_stress(&mut self, direction: &StressDirection, delta_mw: f64) -> Result<()> {
        for (l, (d, ls)) in self.dev.loads.iter().zip(self.state.loads.iter_mut()).enumerate() {
            let w = direction.loads.get(l).copied().unwrap_or(0.0) * delta_mw;
            if w == 0.0 {
                continue;
            }
            match (&d.kind, ls) {
                (LoadKind::Zip(zp), LoadState::Zip { z }) => {
                    let p_nominal = zp.p0_mw * zp.p_factor(1.0);
                    if p_nominal > 0.0 {
                        *z += w / p_nominal;
                    }
                }
                (LoadKind::Composite(design), LoadState::Composite(cs)) => {
                    cs.scale += w / design.p0_mw;
                }
                _ => unreachable!("load state kind matches the case"),
            }
        }
        for (g, (d, m)) in self.dev.gens.iter().zip(self.state.machines.iter_mut()).enumerate() {
            let w = direction.generators.get(g).copied().unwrap_or(0.0) * delta_mw;
            if let (MachineState::TwoAxis { p_ref, .. }, Some(p)) = (m, &d.params) {
                *p_ref += w / p.s_base_mva;
            }
        }
        self.trace.events.push(EventRecord {
            t: self.state.t,
            kind: "stress".to_string(),
            device: String::new(),
            value: Some(delta_mw),
        });
        let mut st = self.state.clone();
        self.solve_network(&mut st)?;
        self.state = st;
        self.rate = f64::INFINITY;
        Ok(())
    }
}

impl SimulationTrace {
    fn clone_header(&self) -> SimulationTrace {
        SimulationTrace {
            dt: self.dt,
            record_every: self.record_every,
            t_start: self.t_start,
            buses: self.buses.clone(),
            generators: self.generators.clone(),
            loads: self.loads.clone(),
            motors: self.motors.clone(),
            inertia: self.inertia.clone(),
            reference: self.reference,
            ..Default::default()
        }
    }
}

fn fixed_nodes(dim: usize, gens: &[MachineData], st: &DynamicState) -> Vec<bool> {
    let mut fixed = vec![false; dim];
    for (g, m) in gens.iter().zip(&st.machines) {
        if matches!(m, MachineState::InfiniteBus { .. }) {
            fixed[g.node] = true;
        }
    }
    fixed
}

/// One integration step from `state` on `case`.
pub fn step(state: &DynamicState, case: &SystemCase, dt: f64) -> Result<DynamicState> {
    let opts = SimOptions {
        dt,
        fast_forward: false,
        ..Default::default()
    };
    let mut sim = Simulator::new(case, state.clone(), opts)?;
    sim.step()?;
    Ok(sim.state.clone())
}

/// Simulate `state` to `t_end` with default options.
pub fn run(
    state: &DynamicState,
    case: &SystemCase,
    contingency: Option<&Contingency>,
    t_end: f64,
    stop: &StopPolicy,
) -> Result<(SimulationTrace, Verdict)> {
    let mut sim = Simulator::new(case, state.clone(), SimOptions::default())?;
    let verdict = sim.run(contingency, t_end, stop);
    Ok((sim.take_trace(), verdict))
}
