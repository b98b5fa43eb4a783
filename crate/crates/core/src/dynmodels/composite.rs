//! Composite load: induction motors, discharge lighting, a constant-MVA part
//! and a polynomial remainder, all sitting behind a feeder impedance.
//!
//! Motors are first-order slip models with the electrical torque taken from
//! the steady-state equivalent circuit (no rotor flux states). This captures
//! stalling and fast load restoration, at a lower fidelity than a fifth-order
//! machine model.
//!
//! The design point (motor ratings, mechanical torque, reactive compensation)
//! is fixed at 1.0 pu internal-node voltage, so scaling `p0_mw`/`q0_mvar`
//! scales every component by the same factor.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::zip::relief;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotorParams {
    /// Inertia constant on motor base, s.
    pub h: f64,
    pub rs: f64,
    pub xs: f64,
    pub xm: f64,
    pub rr: f64,
    pub xr: f64,
    /// Mechanical torque `T0 (1 - s)^m`.
    pub torque_exp: f64,
    /// Electrical torque at the design point, pu on motor base.
    pub load_factor: f64,
}

impl MotorParams {
    pub fn large_default() -> Self {
        MotorParams {
            h: 0.8,
            rs: 0.01,
            xs: 0.12,
            xm: 3.0,
            rr: 0.012,
            xr: 0.12,
            torque_exp: 0.0,
            load_factor: 0.8,
        }
    }

    pub fn small_default() -> Self {
        MotorParams {
            h: 0.25,
            rs: 0.03,
            xs: 0.12,
            xm: 2.5,
            rr: 0.03,
            xr: 0.12,
            torque_exp: 0.0,
            load_factor: 0.75,
        }
    }

    /// Input impedance of the equivalent circuit at slip `s`.
    pub fn impedance(&self, s: f64) -> Complex64 {
        let s = s.max(1e-9);
        let zr = Complex64::new(self.rr / s, self.xr);
        let zm = Complex64::new(0.0, self.xm);
        Complex64::new(self.rs, self.xs) + zm * zr / (zm + zr)
    }

    /// Electrical (air-gap) torque at slip `s` and terminal voltage `v`.
    pub fn electrical_torque(&self, s: f64, v: f64) -> f64 {
        let s = s.max(1e-9);
        let is = Complex64::new(v, 0.0) / self.impedance(s);
        let zr = Complex64::new(self.rr / s, self.xr);
        let zm = Complex64::new(0.0, self.xm);
        let ir = is * zm / (zm + zr);
        ir.norm_sqr() * self.rr / s
    }

    /// Complex power drawn at slip `s`, pu on motor base.
    pub fn power(&self, s: f64, v: f64) -> Complex64 {
        let y = self.impedance(s).inv();
        y.conj() * v * v
    }

    /// Slip of maximum electrical torque (voltage independent).
    pub fn peak_slip(&self) -> f64 {
        // Thevenin seen by the rotor branch.
        let zs = Complex64::new(self.rs, self.xs);
        let zm = Complex64::new(0.0, self.xm);
        let zth = zs * zm / (zs + zm);
        self.rr / (zth.re * zth.re + (zth.im + self.xr).powi(2)).sqrt()
    }

    pub fn violations(&self, tag: &str) -> Vec<String> {
        let mut out = Vec::new();
        if self.h <= 0.0 {
            out.push(format!("{tag}.h must be > 0"));
        }
        if self.rr <= 0.0 || self.xm <= 0.0 || self.xs < 0.0 || self.xr < 0.0 || self.rs < 0.0 {
            out.push(format!("{tag}: equivalent-circuit parameters must be positive"));
        }
        if self.load_factor <= 0.0 {
            out.push(format!("{tag}.load_factor must be > 0"));
        }
        out
    }
}

fn default_kp() -> f64 {
    2.0
}

fn default_feeder_x() -> f64 {
    0.04
}

fn default_dl_p_exp() -> f64 {
    1.8
}

fn default_dl_q_exp() -> f64 {
    4.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompositeLoadParams {
    pub p0_mw: f64,
    pub q0_mvar: f64,
    pub share_lim: f64,
    pub share_sim: f64,
    pub share_dl: f64,
    pub share_mva: f64,
    /// Polynomial remainder share. Anything left over after all shares is
    /// also modeled as constant impedance.
    pub share_kp: f64,
    #[serde(default = "default_kp")]
    pub kp: f64,
    /// Feeder impedance, pu on the load's own `p0_mw` base.
    #[serde(default)]
    pub feeder_r: f64,
    #[serde(default = "default_feeder_x")]
    pub feeder_x: f64,
    #[serde(default = "MotorParams::large_default")]
    pub lim: MotorParams,
    #[serde(default = "MotorParams::small_default")]
    pub sim: MotorParams,
    #[serde(default = "default_dl_p_exp")]
    pub dl_p_exp: f64,
    #[serde(default = "default_dl_q_exp")]
    pub dl_q_exp: f64,
    #[serde(default = "super::zip_default_relief")]
    pub v_relief: f64,
}

/// Discharge lighting goes dark below this voltage ...
pub const DL_EXTINCTION_V: f64 = 0.7;
/// ... and re-strikes above this one.
pub const DL_RESTART_V: f64 = 0.8;

impl CompositeLoadParams {
    pub fn new(p0_mw: f64, q0_mvar: f64, lim: f64, sim: f64, dl: f64, mva: f64) -> Self {
        CompositeLoadParams {
            p0_mw,
            q0_mvar,
            share_lim: lim,
            share_sim: sim,
            share_dl: dl,
            share_mva: mva,
            share_kp: (1.0 - lim - sim - dl - mva).max(0.0),
            kp: default_kp(),
            feeder_r: 0.0,
            feeder_x: default_feeder_x(),
            lim: MotorParams::large_default(),
            sim: MotorParams::small_default(),
            dl_p_exp: default_dl_p_exp(),
            dl_q_exp: default_dl_q_exp(),
            v_relief: super::zip_default_relief(),
        }
    }

    pub fn motor_share(&self) -> f64 {
        self.share_lim + self.share_sim
    }

    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let shares = [
            ("share_lim", self.share_lim),
            ("share_sim", self.share_sim),
            ("share_dl", self.share_dl),
            ("share_mva", self.share_mva),
            ("share_kp", self.share_kp),
        ];
        for (name, v) in shares {
            if v < 0.0 {
                out.push(format!("{name} = {v} (must be >= 0)"));
            }
        }
        let total: f64 = shares.iter().map(|s| s.1).sum();
        if total > 1.0 + 1e-9 {
            out.push(format!("sum of shares = {total} (must be <= 1)"));
        }
        if self.p0_mw <= 0.0 {
            out.push(format!("p0_mw = {} (composite loads need p0_mw > 0)", self.p0_mw));
        }
        if self.feeder_r < 0.0 || self.feeder_x < 0.0 {
            out.push("feeder impedance must be >= 0".to_string());
        }
        out.extend(self.lim.violations("lim"));
        out.extend(self.sim.violations("sim"));
        out
    }

    /// Feeder impedance in pu on the system base.
    pub fn feeder_impedance(&self, base_mva: f64) -> Complex64 {
        Complex64::new(self.feeder_r, self.feeder_x) * (base_mva / self.p0_mw)
    }

    pub fn has_feeder(&self) -> bool {
        self.feeder_r != 0.0 || self.feeder_x != 0.0
    }

    /// Fix motor ratings, torque constants and reactive compensation at the
    /// 1.0 pu design point.
    pub fn design(&self) -> CompositeDesign {
        let motor = |m: &MotorParams, share: f64| -> Option<MotorDesign> {
            if share <= 0.0 {
                return None;
            }
            let s0 = design_slip(m);
            let t0 = m.load_factor / (1.0 - s0).powf(m.torque_exp);
            let pin = m.power(s0, 1.0).re;
            let mva = share * self.p0_mw / pin;
            Some(MotorDesign {
                params: m.clone(),
                mva,
                t0,
            })
        };
        let lim = motor(&self.lim, self.share_lim);
        let sim = motor(&self.sim, self.share_sim);
        let q_motor: f64 = [&lim, &sim]
            .iter()
            .filter_map(|m| m.as_ref())
            .map(|m| m.params.power(design_slip(&m.params), 1.0).im * m.mva)
            .sum();
        let q_dl = self.share_dl * self.q0_mvar;
        let q_mva = self.share_mva * self.q0_mvar;
        let p_rem_kp = self.share_kp * self.p0_mw;
        let leftover =
            (1.0 - self.share_lim - self.share_sim - self.share_dl - self.share_mva - self.share_kp).max(0.0);
        CompositeDesign {
            motors: [lim, sim],
            p_dl: self.share_dl * self.p0_mw,
            q_dl,
            p_mva: self.share_mva * self.p0_mw,
            q_mva,
            p_kp: p_rem_kp,
            p_z: leftover * self.p0_mw,
            q_z: self.q0_mvar - q_motor - q_dl - q_mva,
            kp: self.kp,
            dl_p_exp: self.dl_p_exp,
            dl_q_exp: self.dl_q_exp,
            v_relief: self.v_relief,
            p0_mw: self.p0_mw,
        }
    }
}

/// Slip where the electrical torque equals the load factor at 1.0 pu.
fn design_slip(m: &MotorParams) -> f64 {
    let sp = m.peak_slip().min(1.0);
    bisect(|s| m.electrical_torque(s, 1.0) - m.load_factor, 1e-9, sp).unwrap_or(sp)
}

fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> Option<f64> {
    let mut flo = f(lo);
    let fhi = f(hi);
    if flo * fhi > 0.0 {
        return None;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if fm == 0.0 || hi - lo < 1e-15 {
            return Some(mid);
        }
        if (fm < 0.0) == (flo < 0.0) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotorDesign {
    pub params: MotorParams,
    /// Rating in MVA at the design point (scaled by the load multiplier).
    pub mva: f64,
    /// Mechanical torque coefficient, pu on motor base.
    pub t0: f64,
}

impl MotorDesign {
    pub fn mechanical_torque(&self, s: f64) -> f64 {
        self.t0 * (1.0 - s).max(0.0).powf(self.params.torque_exp)
    }

    /// Steady-state slip at voltage `v`, on the stable side of the torque
    /// peak. `None` when electrical torque cannot match the load anywhere.
    pub fn equilibrium_slip(&self, v: f64) -> Option<f64> {
        let m = &self.params;
        let sp = m.peak_slip().min(1.0);
        bisect(|s| m.electrical_torque(s, v) - self.mechanical_torque(s), 1e-9, sp)
    }

    /// Slip derivative: `2H ds/dt = Tm - Te`.
    pub fn slip_derivative(&self, s: f64, v: f64) -> f64 {
        (self.mechanical_torque(s) - self.params.electrical_torque(s, v)) / (2.0 * self.params.h)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompositeDesign {
    pub motors: [Option<MotorDesign>; 2],
    pub p_dl: f64,
    pub q_dl: f64,
    pub p_mva: f64,
    pub q_mva: f64,
    pub p_kp: f64,
    pub p_z: f64,
    /// Reactive consumption of the constant-impedance remainder at 1.0 pu;
    /// negative when it acts as shunt compensation.
    pub q_z: f64,
    pub kp: f64,
    pub dl_p_exp: f64,
    pub dl_q_exp: f64,
    pub v_relief: f64,
    pub p0_mw: f64,
}

impl CompositeDesign {
    /// Non-motor consumption and its voltage derivative, MW/Mvar, with
    /// `scale` applied and discharge lighting lit or dark.
    pub fn static_power(&self, v: f64, dl_lit: bool, scale: f64) -> ([f64; 2], [f64; 2]) {
        let (cp, dcp) = relief(v, self.v_relief);
        let mut p = self.p_mva * cp + self.p_kp * v.powf(self.kp) + self.p_z * v * v;
        let mut q = self.q_mva * cp + self.q_z * v * v;
        let mut dp = self.p_mva * dcp + self.p_kp * self.kp * v.powf(self.kp - 1.0) + 2.0 * self.p_z * v;
        let mut dq = self.q_mva * dcp + 2.0 * self.q_z * v;
        if dl_lit && v > 0.0 {
            p += self.p_dl * v.powf(self.dl_p_exp);
            q += self.q_dl * v.powf(self.dl_q_exp);
            dp += self.p_dl * self.dl_p_exp * v.powf(self.dl_p_exp - 1.0);
            dq += self.q_dl * self.dl_q_exp * v.powf(self.dl_q_exp - 1.0);
        }
        ([p * scale, q * scale], [dp * scale, dq * scale])
    }

    /// Quasi-static characteristic with motors at their equilibrium slip.
    /// `None` when a motor has no equilibrium at this voltage.
    pub fn steady_state_power(&self, v: f64, scale: f64) -> Option<[f64; 2]> {
        let (mut s, _) = self.static_power(v, v >= DL_EXTINCTION_V, scale);
        for m in self.motors.iter().flatten() {
            let slip = m.equilibrium_slip(v)?;
            let pm = m.params.power(slip, v) * m.mva * scale;
            s[0] += pm.re;
            s[1] += pm.im;
        }
        Some(s)
    }
}

/// Runtime state of one composite load.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositeState {
    pub motors: [MotorState; 2],
    pub dl_lit: bool,
    /// Multiplier on the design (grows with stress applied to a live run).
    pub scale: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotorState {
    pub slip: f64,
    pub connected: bool,
}

/// Result of one explicit composite-load step.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositeStep {
    pub state: CompositeState,
    pub p_mw: f64,
    pub q_mvar: f64,
}

/// Consumption (MW, Mvar) of the composite at internal-node voltage `v`.
pub fn composite_power(design: &CompositeDesign, state: &CompositeState, v: f64) -> (f64, f64) {
    let (s, _) = design.static_power(v, state.dl_lit, state.scale);
    let (mut p, mut q) = (s[0], s[1]);
    for (m, ms) in design.motors.iter().zip(&state.motors) {
        if let (Some(m), true) = (m, ms.connected) {
            let pm = m.params.power(ms.slip, v) * m.mva * state.scale;
            p += pm.re;
            q += pm.im;
        }
    }
    (p, q)
}

/// Discharge-lighting hysteresis: dark below the extinction voltage, lit
/// again only above the restart voltage.
pub fn update_lighting(lit: bool, v: f64) -> bool {
    if lit {
        v >= DL_EXTINCTION_V
    } else {
        v > DL_RESTART_V
    }
}

/// Advance the composite load by `dt` at a held voltage (trapezoidal slip
/// update with a fixed-point corrector) and report its consumption.
pub fn composite_load_step(design: &CompositeDesign, state: &CompositeState, v: f64, dt: f64) -> CompositeStep {
    let mut next = state.clone();
    for (m, ms) in design.motors.iter().zip(next.motors.iter_mut()) {
        let Some(m) = m else { continue };
        if !ms.connected {
            continue;
        }
        let f0 = m.slip_derivative(ms.slip, v);
        let mut s = (ms.slip + dt * f0).clamp(0.0, 1.0);
        for _ in 0..20 {
            let s_new = (ms.slip + 0.5 * dt * (f0 + m.slip_derivative(s, v))).clamp(0.0, 1.0);
            let done = (s_new - s).abs() < 1e-13;
            s = s_new;
            if done {
                break;
            }
        }
        ms.slip = s;
    }
    next.dl_lit = update_lighting(state.dl_lit, v);
    let (p, q) = composite_power(design, &next, v);
    CompositeStep {
        state: next,
        p_mw: p,
        q_mvar: q,
    }
}

/// Equilibrium state at internal-node voltage `v`.
pub fn initialize_composite(design: &CompositeDesign, v: f64) -> Option<CompositeState> {
    let mut motors = [MotorState {
        slip: 0.0,
        connected: false,
    }; 2];
    for (m, ms) in design.motors.iter().zip(motors.iter_mut()) {
        if let Some(m) = m {
            ms.slip = m.equilibrium_slip(v)?;
            ms.connected = true;
        }
    }
    Some(CompositeState {
        motors,
        dl_lit: v >= DL_EXTINCTION_V,
        scale: 1.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mixed() -> CompositeLoadParams {
        CompositeLoadParams::new(100.0, 30.0, 0.2, 0.2, 0.1, 0.1)
    }

    #[test]
    fn design_reproduces_nominal_consumption() {
        let d = mixed().design();
        let s = d.steady_state_power(1.0, 1.0).unwrap();
        assert!((s[0] - 100.0).abs() < 1e-6, "{s:?}");
        assert!((s[1] - 30.0).abs() < 1e-6, "{s:?}");
    }

    #[test]
    fn motor_at_equilibrium_has_no_slip_derivative() {
        let d = mixed().design();
        let st = initialize_composite(&d, 1.0).unwrap();
        for (m, ms) in d.motors.iter().zip(&st.motors) {
            let m = m.as_ref().unwrap();
            assert!(m.slip_derivative(ms.slip, 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn initial_slip_matches_independent_root_find() {
        // Oracle: scan the torque balance on a fine grid, then refine by secant.
        let d = mixed().design();
        let v = 0.93;
        let st = initialize_composite(&d, v).unwrap();
        let m = d.motors[1].as_ref().unwrap();
        let g = |s: f64| m.mechanical_torque(s) - m.params.electrical_torque(s, v);
        let mut s_prev = 1e-6;
        let mut root = None;
        let mut s = s_prev;
        while s < 0.5 {
            s += 1e-4;
            if g(s_prev).signum() != g(s).signum() {
                let (mut a, mut b) = (s_prev, s);
                for _ in 0..60 {
                    let c = b - g(b) * (b - a) / (g(b) - g(a));
                    a = b;
                    b = c;
                    if (b - a).abs() < 1e-14 {
                        break;
                    }
                }
                root = Some(b);
                break;
            }
            s_prev = s;
        }
        let root = root.unwrap();
        assert!((st.motors[1].slip - root).abs() < 1e-9);
    }

    #[test]
    fn lighting_extinguished_below_threshold() {
        let d = CompositeLoadParams::new(100.0, 30.0, 0.0, 0.0, 1.0, 0.0).design();
        let st = CompositeState {
            motors: [MotorState {
                slip: 0.0,
                connected: false,
            }; 2],
            dl_lit: true,
            scale: 1.0,
        };
        let out = composite_load_step(&d, &st, 0.65, 0.01);
        assert!(!out.state.dl_lit);
        assert_eq!(out.p_mw, 0.0);
        // stays dark at 0.75, re-strikes at 0.81
        assert!(!update_lighting(false, 0.75));
        assert!(update_lighting(false, 0.81));
    }

    #[test]
    fn stalls_at_low_voltage() {
        let d = CompositeLoadParams::new(100.0, 30.0, 0.0, 0.6, 0.0, 0.0).design();
        let m = d.motors[1].as_ref().unwrap();
        // Torque-curve analysis: no intersection at 0.6 pu.
        let peak = m.params.electrical_torque(m.params.peak_slip(), 0.6);
        assert!(peak < m.mechanical_torque(m.params.peak_slip()));
        let mut st = initialize_composite(&d, 1.0).unwrap();
        let mut last = st.motors[1].slip;
        for _ in 0..4000 {
            st = composite_load_step(&d, &st, 0.6, 0.001).state;
            assert!(st.motors[1].slip >= last);
            last = st.motors[1].slip;
        }
        assert_eq!(last, 1.0);
    }

    #[test]
    fn locked_rotor_reactive_draw() {
        let d = CompositeLoadParams::new(100.0, 30.0, 0.0, 0.5, 0.0, 0.0).design();
        let m = d.motors[1].as_ref().unwrap();
        let v = 0.8;
        let st = CompositeState {
            motors: [
                MotorState {
                    slip: 0.0,
                    connected: false,
                },
                MotorState {
                    slip: 1.0,
                    connected: true,
                },
            ],
            dl_lit: false,
            scale: 1.0,
        };
        // hand-computed: Q = V^2 X / |Z|^2 with Z the locked-rotor input impedance
        let p = &m.params;
        let zr = (p.rr, p.xr);
        let (a, b) = (zr.0, zr.1 + p.xm);
        let den = a * a + b * b;
        // (j xm)(rr + j xr) / (rr + j(xr+xm))
        let num = (-p.xm * zr.1, p.xm * zr.0);
        let zp = ((num.0 * a + num.1 * b) / den, (num.1 * a - num.0 * b) / den);
        let (zre, zim) = (p.rs + zp.0, p.xs + zp.1);
        let q_lr = v * v * zim / (zre * zre + zim * zim) * m.mva;
        let (_, q) = composite_power(&d, &st, v);
        let (s_static, _) = d.static_power(v, false, 1.0);
        assert!((q - s_static[1] - q_lr).abs() < 1e-9, "{q} {} {q_lr}", s_static[1]);
    }
}
