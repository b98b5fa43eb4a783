//! Polar Newton-Raphson power flow with voltage-dependent loads.
//!
//! Composite loads with a feeder get an internal node; their consumption is
//! the quasi-static characteristic with motors at equilibrium slip.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use super::admittance::build_network;
use super::continuation::StressDirection;
use super::BusKind;
use crate::cases::{GeneratorModel, LoadModel, SystemCase};
use crate::dynmodels::{to_dq, CompositeDesign, GeneratorParams, ZipLoadParams};
use crate::error::{Error, Result};

/// Steady-state behaviour of a generator under its voltage regulator:
/// terminal voltage settles where `V + droop·Q + E_fd/K = V_ref`, with E_fd
/// the field voltage needed to deliver (P, Q) from a salient-pole machine.
#[derive(Debug, Clone, PartialEq)]
pub struct AvrSteadyState {
    pub v_ref: f64,
    pub k_avr: f64,
    pub droop: f64,
    pub xd: f64,
    pub xq: f64,
    pub s_base_mva: f64,
}

impl AvrSteadyState {
    pub fn new(machine: &GeneratorParams, v_ref: f64) -> Self {
        AvrSteadyState {
            v_ref,
            k_avr: machine.k_avr,
            droop: machine.droop,
            xd: machine.xd,
            xq: machine.xq,
            s_base_mva: machine.s_base_mva,
        }
    }

    /// Regulation error at terminal voltage `v` (pu) delivering `p_mw`, `q_mvar`.
    pub fn error(&self, v: f64, p_mw: f64, q_mvar: f64) -> f64 {
        let p = p_mw / self.s_base_mva;
        let q = q_mvar / self.s_base_mva;
        let vc = Complex64::new(v, 0.0);
        let i = Complex64::new(p, -q) / v;
        let e = vc + Complex64::new(0.0, self.xq) * i;
        let delta = e.arg();
        let (_, vq) = to_dq(vc, delta);
        let (id, _) = to_dq(i, delta);
        let efd = vq + self.xd * id;
        v + self.droop * q + efd / self.k_avr - self.v_ref
    }

    fn gradient(&self, v: f64, p_mw: f64, q_mvar: f64) -> (f64, f64) {
        let hv = 1e-7;
        let hq = 1e-5 * self.s_base_mva;
        let dv = (self.error(v + hv, p_mw, q_mvar) - self.error(v - hv, p_mw, q_mvar)) / (2.0 * hv);
        let dq = (self.error(v, p_mw, q_mvar + hq) - self.error(v, p_mw, q_mvar - hq)) / (2.0 * hq);
        (dv, dq)
    }
}

/// How generator buses are represented in the static model.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum GeneratorControl {
    /// Classical PV bus: terminal voltage fixed at the case setpoint.
    #[default]
    Setpoint,
    /// Voltage follows the regulator steady state; indexed like
    /// `case.generators` (`None` keeps the PV setpoint for that unit).
    Avr(Vec<Option<AvrSteadyState>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerFlowOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Switch PV buses to PQ at their reactive limits.
    pub enforce_q_limits: bool,
    pub control: GeneratorControl,
    /// Step tap changers until every controlled voltage is inside its deadband.
    pub adjust_taps: bool,
}

impl Default for PowerFlowOptions {
    fn default() -> Self {
        PowerFlowOptions {
            tol: 1e-8,
            max_iter: 20,
            enforce_q_limits: true,
            control: GeneratorControl::Setpoint,
            adjust_taps: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerFlowSolution {
    /// Per-bus voltage magnitude, pu.
    pub v: Vec<f64>,
    /// Per-bus angle, rad.
    pub theta: Vec<f64>,
    /// Voltage at the point each load is connected (internal node for
    /// composite loads with a feeder).
    pub load_voltage: Vec<Complex64>,
    pub gen_p_mw: Vec<f64>,
    pub gen_q_mvar: Vec<f64>,
    /// Final tap of each tap changer, in `case.ltcs` order.
    pub taps: Vec<f64>,
    /// Generators that hit a reactive limit.
    pub switched: Vec<String>,
    pub iterations: usize,
    pub max_mismatch: f64,
    internal: Vec<(f64, f64)>,
}

impl PowerFlowSolution {
    pub fn bus_voltage(&self, i: usize) -> Complex64 {
        Complex64::from_polar(self.v[i], self.theta[i])
    }

    pub fn min_voltage(&self) -> f64 {
        self.v.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum NodeKind {
    Slack,
    Pv,
    Pq,
}

#[derive(Debug, Clone)]
struct PfGen {
    node: usize,
    p_mw: f64,
    rate: f64,
    slack: bool,
    q_min: Option<f64>,
    q_max: Option<f64>,
    avr: Option<AvrSteadyState>,
    /// Reactive output frozen at a limit, Mvar.
    fixed_q: Option<f64>,
}

#[derive(Debug, Clone)]
enum StaticLoad {
    /// Template with `z = 1`; the multiplier carries the loading.
    Zip(ZipLoadParams),
    Composite(CompositeDesign),
}

#[derive(Debug, Clone)]
struct PfLoad {
    node: usize,
    model: StaticLoad,
    mult: f64,
    rate: f64,
}

impl PfLoad {
    /// (P, Q) in MW/Mvar and their voltage derivatives at loading `lambda`.
    fn power(&self, v: f64, lambda: f64) -> Option<([f64; 2], [f64; 2])> {
        let m = self.mult + lambda * self.rate;
        match &self.model {
            StaticLoad::Zip(z) => {
                let (s, d) = z.network_power(v);
                Some(([m * s[0], m * s[1]], [m * d[0], m * d[1]]))
            }
            StaticLoad::Composite(c) => {
                let s = c.steady_state_power(v, m)?;
                let h = 1e-6;
                let hi = c.steady_state_power(v + h, m)?;
                let lo = c.steady_state_power(v - h, m)?;
                Some((s, [(hi[0] - lo[0]) / (2.0 * h), (hi[1] - lo[1]) / (2.0 * h)]))
            }
        }
    }
}

/// Voltages of every node (buses then internal nodes) and the loading
/// parameter, MW.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct OperatingPoint {
    pub v: Vec<f64>,
    pub theta: Vec<f64>,
    pub lambda: f64,
}

/// Which quantity is held fixed by the corrector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Param {
    Lambda,
    /// Node voltage held at the value in the operating point; the loading
    /// parameter becomes an unknown.
    Voltage(usize),
}

struct Eval {
    p: Vec<f64>,
    q: Vec<f64>,
    pl: Vec<f64>,
    ql: Vec<f64>,
    dpl: Vec<f64>,
    dql: Vec<f64>,
}

struct VarMap {
    p_rows: Vec<usize>,
    q_rows: Vec<usize>,
    theta_col: Vec<Option<usize>>,
    v_col: Vec<Option<usize>>,
    lambda_col: Option<usize>,
    dim: usize,
}

/// Static network model assembled from a case: admittances, node types,
/// generator dispatch and load characteristics along a stress direction.
#[derive(Debug, Clone)]
pub(crate) struct PfModel {
    base: f64,
    n_bus: usize,
    n: usize,
    g: Vec<f64>,
    b: Vec<f64>,
    kind: Vec<NodeKind>,
    v_set: Vec<f64>,
    gens: Vec<PfGen>,
    gen_ids: Vec<String>,
    node_gen: Vec<Option<usize>>,
    loads: Vec<PfLoad>,
    tol: f64,
    max_iter: usize,
    enforce_q_limits: bool,
    init: OperatingPoint,
}

impl PfModel {
    pub fn new(case: &SystemCase, options: &PowerFlowOptions) -> Result<Self> {
        let (y, load_node) = build_network(case)?;
        let n_bus = case.buses.len();
        let n = y.dim();
        let mut g = vec![0.0; n * n];
        let mut b = vec![0.0; n * n];
        for i in 0..n {
            for (j, yij) in y.row(i).iter().enumerate() {
                g[i * n + j] = yij.re;
                b[i * n + j] = yij.im;
            }
        }
        let index = case.bus_index();
        let mut kind = vec![NodeKind::Pq; n];
        let mut v_set = vec![1.0; n];
        let mut init_v = vec![1.0; n];
        let mut init_th = vec![0.0; n];
        for (i, bus) in case.buses.iter().enumerate() {
            kind[i] = match bus.kind {
                BusKind::Slack => NodeKind::Slack,
                BusKind::Pv => NodeKind::Pv,
                BusKind::Pq => NodeKind::Pq,
            };
            v_set[i] = bus.v;
            init_v[i] = bus.v;
            init_th[i] = bus.theta;
        }
        let mut node_gen = vec![None; n];
        let mut gens = Vec::new();
        let mut gen_ids = Vec::new();
        for (k, unit) in case.generators.iter().enumerate() {
            if !unit.in_service {
                continue;
            }
            let node = *index
                .get(&unit.bus)
                .ok_or_else(|| Error::Structural(format!("generator {} on missing bus {}", unit.id, unit.bus)))?;
            let avr = match (&options.control, unit.model) {
                (GeneratorControl::Avr(list), GeneratorModel::TwoAxis) => list.get(k).cloned().flatten(),
                _ => None,
            };
            node_gen[node] = Some(gens.len());
            gens.push(PfGen {
                node,
                p_mw: unit.p_mw,
                rate: 0.0,
                slack: kind[node] == NodeKind::Slack,
                q_min: unit.q_min_mvar,
                q_max: unit.q_max_mvar,
                avr,
                fixed_q: None,
            });
            gen_ids.push(unit.id.clone());
        }
        for (i, k) in kind.iter_mut().enumerate() {
            if *k == NodeKind::Pv && node_gen[i].is_none() {
                *k = NodeKind::Pq;
            }
        }
        let loads = case
            .loads
            .iter()
            .zip(&load_node)
            .map(|(l, &node)| match &l.model {
                LoadModel::Zip(z) => {
                    let mut t = z.clone();
                    t.z = 1.0;
                    PfLoad {
                        node,
                        model: StaticLoad::Zip(t),
                        mult: z.z,
                        rate: 0.0,
                    }
                }
                LoadModel::Composite(c) => PfLoad {
                    node,
                    model: StaticLoad::Composite(c.design()),
                    mult: 1.0,
                    rate: 0.0,
                },
            })
            .collect::<Vec<_>>();
        for (l, &node) in case.loads.iter().zip(&load_node) {
            if node >= n_bus {
                let parent = index[&l.bus];
                init_v[node] = init_v[parent];
                init_th[node] = init_th[parent];
            }
        }
        Ok(PfModel {
            base: case.base_mva,
            n_bus,
            n,
            g,
            b,
            kind,
            v_set,
            gens,
            gen_ids,
            node_gen,
            loads,
            tol: options.tol,
            max_iter: options.max_iter,
            enforce_q_limits: options.enforce_q_limits,
            init: OperatingPoint {
                v: init_v,
                theta: init_th,
                lambda: 0.0,
            },
        })
    }

    /// Attach per-MW growth rates of load multipliers and generator dispatch.
    pub fn set_direction(&mut self, case: &SystemCase, dir: &StressDirection) {
        for (k, l) in self.loads.iter_mut().enumerate() {
            let w = dir.loads.get(k).copied().unwrap_or(0.0);
            l.rate = match (&l.model, &case.loads[k].model) {
                (StaticLoad::Zip(t), _) => {
                    let base = t.p0_mw * t.p_factor(1.0);
                    if base > 0.0 {
                        w / base
                    } else {
                        0.0
                    }
                }
                (StaticLoad::Composite(_), LoadModel::Composite(c)) => w / c.p0_mw,
                _ => 0.0,
            };
        }
        let mut k = 0;
        for (unit, w) in case
            .generators
            .iter()
            .zip(dir.generators.iter().chain(std::iter::repeat(&0.0)))
        {
            if !unit.in_service {
                continue;
            }
            self.gens[k].rate = *w;
            k += 1;
        }
    }

    pub fn initial_point(&self, guess: Option<&PowerFlowSolution>) -> OperatingPoint {
        let mut op = self.init.clone();
        if let Some(s) = guess {
            if s.v.len() == self.n_bus && s.internal.len() == self.n - self.n_bus {
                for i in 0..self.n_bus {
                    op.v[i] = s.v[i];
                    op.theta[i] = s.theta[i];
                }
                for (k, &(v, th)) in s.internal.iter().enumerate() {
                    op.v[self.n_bus + k] = v;
                    op.theta[self.n_bus + k] = th;
                }
            }
        }
        for (i, k) in self.kind.iter().enumerate() {
            if self.holds_setpoint(i) || *k == NodeKind::Slack {
                op.v[i] = self.v_set[i];
            }
            if *k == NodeKind::Slack {
                op.theta[i] = self.init.theta[i];
            }
        }
        op
    }

    fn holds_setpoint(&self, i: usize) -> bool {
        match self.kind[i] {
            NodeKind::Slack => true,
            NodeKind::Pq => false,
            NodeKind::Pv => {
                let g = &self.gens[self.node_gen[i].expect("PV node has a generator")];
                g.fixed_q.is_none() && g.avr.is_none()
            }
        }
    }

    fn var_map(&self, param: Param) -> VarMap {
        let mut theta_col = vec![None; self.n];
        let mut v_col = vec![None; self.n];
        let mut p_rows = Vec::new();
        let mut q_rows = Vec::new();
        for i in 0..self.n {
            if self.kind[i] != NodeKind::Slack {
                theta_col[i] = Some(p_rows.len());
                p_rows.push(i);
            }
        }
        for i in 0..self.n {
            if !self.holds_setpoint(i) {
                q_rows.push(i);
            }
        }
        let mut col = p_rows.len();
        for &i in &q_rows {
            if param != Param::Voltage(i) {
                v_col[i] = Some(col);
                col += 1;
            }
        }
        let lambda_col = match param {
            Param::Voltage(_) => {
                col += 1;
                Some(col - 1)
            }
            Param::Lambda => None,
        };
        debug_assert_eq!(col, p_rows.len() + q_rows.len());
        VarMap {
            p_rows,
            q_rows,
            theta_col,
            v_col,
            lambda_col,
            dim: col,
        }
    }

    fn eval(&self, op: &OperatingPoint) -> Option<Eval> {
        let n = self.n;
        let mut e = Eval {
            p: vec![0.0; n],
            q: vec![0.0; n],
            pl: vec![0.0; n],
            ql: vec![0.0; n],
            dpl: vec![0.0; n],
            dql: vec![0.0; n],
        };
        for i in 0..n {
            let (mut p, mut q) = (0.0, 0.0);
            for j in 0..n {
                let (gij, bij) = (self.g[i * n + j], self.b[i * n + j]);
                if gij == 0.0 && bij == 0.0 {
                    continue;
                }
                let (s, c) = (op.theta[i] - op.theta[j]).sin_cos();
                p += op.v[j] * (gij * c + bij * s);
                q += op.v[j] * (gij * s - bij * c);
            }
            e.p[i] = op.v[i] * p;
            e.q[i] = op.v[i] * q;
        }
        for l in &self.loads {
            let (s, d) = l.power(op.v[l.node], op.lambda)?;
            e.pl[l.node] += s[0] / self.base;
            e.ql[l.node] += s[1] / self.base;
            e.dpl[l.node] += d[0] / self.base;
            e.dql[l.node] += d[1] / self.base;
        }
        Some(e)
    }

    fn gen_p(&self, i: usize, lambda: f64) -> f64 {
        match self.node_gen[i] {
            Some(k) if !self.gens[k].slack => (self.gens[k].p_mw + lambda * self.gens[k].rate) / self.base,
            _ => 0.0,
        }
    }

    fn residual(&self, map: &VarMap, op: &OperatingPoint, e: &Eval) -> Vec<f64> {
        let mut f = Vec::with_capacity(map.dim);
        for &i in &map.p_rows {
            f.push(e.p[i] + e.pl[i] - self.gen_p(i, op.lambda));
        }
        for &i in &map.q_rows {
            let qnet = e.q[i] + e.ql[i];
            let row = match self.node_gen[i].map(|k| &self.gens[k]) {
                Some(g) if g.fixed_q.is_none() && self.kind[i] == NodeKind::Pv => {
                    let avr = g.avr.as_ref().expect("regulated node");
                    avr.error(op.v[i], self.gen_p(i, op.lambda) * self.base, qnet * self.base)
                }
                Some(g) => qnet - g.fixed_q.unwrap_or(0.0) / self.base,
                None => qnet,
            };
            f.push(row);
        }
        f
    }

    fn jacobian(&self, map: &VarMap, op: &OperatingPoint, e: &Eval) -> DMatrix<f64> {
        let n = self.n;
        let mut jac = DMatrix::<f64>::zeros(map.dim, map.dim);
        // dP_i, dQ_i with respect to theta_j and V_j
        let partials = |i: usize, j: usize| -> [f64; 4] {
            let (vi, vj) = (op.v[i], op.v[j]);
            let (gij, bij) = (self.g[i * n + j], self.b[i * n + j]);
            if i == j {
                [
                    -e.q[i] - bij * vi * vi,
                    e.p[i] / vi + gij * vi + e.dpl[i],
                    e.p[i] - gij * vi * vi,
                    e.q[i] / vi - bij * vi + e.dql[i],
                ]
            } else {
                let (s, c) = (op.theta[i] - op.theta[j]).sin_cos();
                [
                    vi * vj * (gij * s - bij * c),
                    vi * (gij * c + bij * s),
                    -vi * vj * (gij * c + bij * s),
                    vi * (gij * s - bij * c),
                ]
            }
        };
        let coupled = |i: usize, j: usize| i == j || self.g[i * n + j] != 0.0 || self.b[i * n + j] != 0.0;
        for (r, &i) in map.p_rows.iter().enumerate() {
            for j in (0..n).filter(|&j| coupled(i, j)) {
                let d = partials(i, j);
                if let Some(c) = map.theta_col[j] {
                    jac[(r, c)] += d[0];
                }
                if let Some(c) = map.v_col[j] {
                    jac[(r, c)] += d[1];
                }
            }
        }
        let np = map.p_rows.len();
        for (r, &i) in map.q_rows.iter().enumerate() {
            let row = np + r;
            let avr = match self.node_gen[i].map(|k| &self.gens[k]) {
                Some(g) if g.fixed_q.is_none() && self.kind[i] == NodeKind::Pv => g.avr.as_ref(),
                _ => None,
            };
            let (hv, hq) = match avr {
                Some(a) => {
                    let qnet = (e.q[i] + e.ql[i]) * self.base;
                    let (dv, dq) = a.gradient(op.v[i], self.gen_p(i, op.lambda) * self.base, qnet);
                    (dv, dq * self.base)
                }
                None => (0.0, 1.0),
            };
            for j in (0..n).filter(|&j| coupled(i, j)) {
                let d = partials(i, j);
                if let Some(c) = map.theta_col[j] {
                    jac[(row, c)] += hq * d[2];
                }
                if let Some(c) = map.v_col[j] {
                    jac[(row, c)] += hq * d[3];
                }
            }
            if let Some(c) = map.v_col[i] {
                jac[(row, c)] += hv;
            }
        }
        if let Some(c) = map.lambda_col {
            let h = 1e-3;
            let mut shifted = op.clone();
            shifted.lambda += h;
            if let Some(e2) = self.eval(&shifted) {
                let f0 = self.residual(map, op, e);
                let f1 = self.residual(map, &shifted, &e2);
                for r in 0..map.dim {
                    jac[(r, c)] = (f1[r] - f0[r]) / h;
                }
            }
        }
        jac
    }

    /// Freeze generators beyond their reactive limits. Returns true when
    /// anything switched.
    fn switch_q_limits(&mut self, e: &Eval) -> bool {
        let mut changed = false;
        for g in self.gens.iter_mut().filter(|g| !g.slack && g.fixed_q.is_none()) {
            let i = g.node;
            if self.kind[i] != NodeKind::Pv {
                continue;
            }
            let q = (e.q[i] + e.ql[i]) * self.base;
            if let Some(hi) = g.q_max.filter(|hi| q > hi + 1e-6) {
                g.fixed_q = Some(hi);
                changed = true;
            } else if let Some(lo) = g.q_min.filter(|lo| q < lo - 1e-6) {
                g.fixed_q = Some(lo);
                changed = true;
            }
        }
        changed
    }

    /// Newton corrector. On success `op` holds the solution.
    pub fn correct(&mut self, op: &mut OperatingPoint, param: Param) -> Result<(usize, f64)> {
        let mut iterations = 0;
        let mut budget = self.max_iter;
        let mut last = f64::INFINITY;
        loop {
            let map = self.var_map(param);
            let Some(e) = self.eval(op) else {
                return Err(Error::Diverged {
                    iterations,
                    mismatch: last,
                });
            };
            let f = self.residual(&map, op, &e);
            let mis = f.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            if !mis.is_finite() {
                return Err(Error::Diverged {
                    iterations,
                    mismatch: mis,
                });
            }
            last = mis;
            if self.enforce_q_limits && mis < 1e-4 && self.switch_q_limits(&e) {
                budget = iterations + self.max_iter;
                continue;
            }
            if mis <= self.tol {
                return Ok((iterations, mis));
            }
            if iterations >= budget {
                return Err(Error::Diverged {
                    iterations,
                    mismatch: mis,
                });
            }
            let jac = self.jacobian(&map, op, &e);
            let rhs = DVector::from_iterator(map.dim, f.iter().map(|x| -x));
            let dx = jac.lu().solve(&rhs).ok_or(Error::Diverged {
                iterations,
                mismatch: mis,
            })?;
            for (k, &i) in map.p_rows.iter().enumerate() {
                op.theta[i] += dx[k];
            }
            for i in 0..self.n {
                if let Some(c) = map.v_col[i] {
                    op.v[i] += dx[c];
                }
            }
            if let Some(c) = map.lambda_col {
                op.lambda += dx[c];
            }
            if op.v.iter().any(|v| !(*v > 0.0)) {
                return Err(Error::Diverged {
                    iterations,
                    mismatch: mis,
                });
            }
            iterations += 1;
        }
    }

    /// Nodes whose voltage magnitude is an unknown (candidates for the
    /// continuation parameter).
    pub fn free_voltage_nodes(&self) -> Vec<usize> {
        (0..self.n).filter(|&i| !self.holds_setpoint(i)).collect()
    }

    pub fn n_bus(&self) -> usize {
        self.n_bus
    }

    pub fn solution(&self, op: &OperatingPoint, iterations: usize, max_mismatch: f64) -> PowerFlowSolution {
        let e = self.eval(op).expect("evaluated at a converged point");
        let mut gen_p = Vec::new();
        let mut gen_q = Vec::new();
        let mut switched = Vec::new();
        for (g, id) in self.gens.iter().zip(&self.gen_ids) {
            let i = g.node;
            gen_p.push(if g.slack {
                (e.p[i] + e.pl[i]) * self.base
            } else {
                g.p_mw + op.lambda * g.rate
            });
            gen_q.push((e.q[i] + e.ql[i]) * self.base);
            if g.fixed_q.is_some() {
                switched.push(id.clone());
            }
        }
        PowerFlowSolution {
            v: op.v[..self.n_bus].to_vec(),
            theta: op.theta[..self.n_bus].to_vec(),
            load_voltage: self
                .loads
                .iter()
                .map(|l| Complex64::from_polar(op.v[l.node], op.theta[l.node]))
                .collect(),
            gen_p_mw: gen_p,
            gen_q_mvar: gen_q,
            taps: Vec::new(),
            switched,
            iterations,
            max_mismatch,
            internal: (self.n_bus..self.n).map(|i| (op.v[i], op.theta[i])).collect(),
        }
    }

    pub fn solve(&mut self, guess: Option<&PowerFlowSolution>) -> Result<PowerFlowSolution> {
        let mut op = self.initial_point(guess);
        let (it, mis) = self.correct(&mut op, Param::Lambda)?;
        Ok(self.solution(&op, it, mis))
    }
}

/// Newton-Raphson power flow with default options apart from `tol` and
/// `max_iter`.
pub fn solve_power_flow(
    case: &SystemCase,
    guess: Option<&PowerFlowSolution>,
    tol: f64,
    max_iter: usize,
) -> Result<PowerFlowSolution> {
    let options = PowerFlowOptions {
        tol,
        max_iter,
        ..Default::default()
    };
    solve_power_flow_with(case, guess, &options)
}

/// Power flow with full options. With `adjust_taps`, tap changers are
/// stepped (all at once, one step per round) until every controlled voltage
/// is inside its deadband or the taps saturate.
pub fn solve_power_flow_with(
    case: &SystemCase,
    guess: Option<&PowerFlowSolution>,
    options: &PowerFlowOptions,
) -> Result<PowerFlowSolution> {
    let index = case.bus_index();
    let mut work = case.clone();
    let mut prev: Option<PowerFlowSolution> = guess.cloned();
    for _ in 0..200 {
        let mut model = PfModel::new(&work, options)?;
        let mut sol = model.solve(prev.as_ref())?;
        sol.taps = work
            .ltcs
            .iter()
            .map(|t| work.branches[work.branch_position(&t.branch).expect("validated")].tap)
            .collect();
        if !options.adjust_taps {
            return Ok(sol);
        }
        let mut moved = false;
        for t in &work.ltcs {
            let v = sol.v[index[&t.params.controlled_bus]];
            let dir = t.params.correction(v);
            let pos = work.branch_position(&t.branch).expect("validated");
            let tap = work.branches[pos].tap;
            if dir != 0 && t.params.can_move(tap, dir) {
                work.branches[pos].tap = tap + dir as f64 * t.params.step;
                moved = true;
            }
        }
        if !moved {
            return Ok(sol);
        }
        prev = Some(sol);
    }
    Err(Error::Diverged {
        iterations: 200,
        mismatch: f64::NAN,
    })
}
