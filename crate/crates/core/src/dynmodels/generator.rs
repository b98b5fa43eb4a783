//! Two-axis synchronous machine with a first-order AVR, reactive droop and a
//! fixed-delay over-excitation limiter.
//!
//! Machine quantities are per unit on the machine base. Stator resistance is
//! neglected. Network frame to dq: `Vd + jVq = V e^{-j(δ - π/2)}`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorParams {
    pub h: f64,
    #[serde(default = "default_d")]
    pub d: f64,
    pub xd: f64,
    pub xq: f64,
    pub xd_p: f64,
    pub xq_p: f64,
    pub td0_p: f64,
    pub tq0_p: f64,
    pub s_base_mva: f64,
    #[serde(default = "default_k_avr")]
    pub k_avr: f64,
    #[serde(default = "default_t_avr")]
    pub t_avr: f64,
    /// Reactive droop of the voltage regulator, pu voltage per pu Q.
    #[serde(default = "default_droop")]
    pub droop: f64,
    #[serde(default = "default_efd_min")]
    pub efd_min: f64,
    #[serde(default = "default_efd_max")]
    pub efd_max: f64,
    /// Field current the OEL clamps to; `None` disables the limiter.
    #[serde(default)]
    pub ifd_max: Option<f64>,
    #[serde(default = "default_t_oel")]
    pub t_oel: f64,
}

fn default_d() -> f64 {
    2.0
}
fn default_k_avr() -> f64 {
    200.0
}
fn default_t_avr() -> f64 {
    0.02
}
fn default_droop() -> f64 {
    0.04
}
fn default_efd_min() -> f64 {
    -4.0
}
fn default_efd_max() -> f64 {
    5.0
}
fn default_t_oel() -> f64 {
    20.0
}

impl GeneratorParams {
    /// Round-rotor machine with typical transient data and the default
    /// regulator settings.
    pub fn typical(s_base_mva: f64) -> Self {
        GeneratorParams {
            h: 5.0,
            d: default_d(),
            xd: 2.0,
            xq: 1.9,
            xd_p: 0.3,
            xq_p: 0.55,
            td0_p: 6.0,
            tq0_p: 0.8,
            s_base_mva,
            k_avr: default_k_avr(),
            t_avr: default_t_avr(),
            droop: default_droop(),
            efd_min: default_efd_min(),
            efd_max: default_efd_max(),
            ifd_max: None,
            t_oel: default_t_oel(),
        }
    }

    pub fn violations(&self, tag: &str) -> Vec<String> {
        let mut out = Vec::new();
        if self.h <= 0.0 {
            out.push(format!("{tag}.h = {} (must be > 0)", self.h));
        }
        if !(self.xd_p > 0.0) || self.xd < self.xd_p {
            out.push(format!("{tag}: need xd >= xd_p > 0"));
        }
        if !(self.xq_p > 0.0) || self.xq < self.xq_p {
            out.push(format!("{tag}: need xq >= xq_p > 0"));
        }
        for (n, t) in [
            ("td0_p", self.td0_p),
            ("tq0_p", self.tq0_p),
            ("t_avr", self.t_avr),
            ("t_oel", self.t_oel),
        ] {
            if !(t > 0.0) {
                out.push(format!("{tag}.{n} = {t} (time constants must be > 0)"));
            }
        }
        if self.s_base_mva <= 0.0 {
            out.push(format!("{tag}.s_base_mva must be > 0"));
        }
        if self.efd_min >= self.efd_max {
            out.push(format!("{tag}: efd_min must be < efd_max"));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct OelState {
    /// Time the field current first exceeded the limit, if it still does.
    pub timer_start: Option<f64>,
    pub active: bool,
}

/// Differential states of one machine and its exciter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorState {
    pub delta: f64,
    /// Rotor speed, pu.
    pub omega: f64,
    pub eq_p: f64,
    pub ed_p: f64,
    pub efd: f64,
    pub v_ref: f64,
    pub p_mech: f64,
    pub oel: OelState,
    pub online: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GeneratorDerivatives {
    pub delta: f64,
    pub omega: f64,
    pub eq_p: f64,
    pub ed_p: f64,
    pub efd: f64,
}

impl GeneratorDerivatives {
    pub fn max_abs(&self) -> f64 {
        [self.delta, self.omega, self.eq_p, self.ed_p, self.efd]
            .iter()
            .fold(0.0f64, |m, x| m.max(x.abs()))
    }
}

/// Terminal electrical quantities in the machine dq frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Terminal {
    pub vd: f64,
    pub vq: f64,
    pub id: f64,
    pub iq: f64,
    pub p: f64,
    pub q: f64,
    pub vt: f64,
}

pub fn to_dq(v: Complex64, delta: f64) -> (f64, f64) {
    let (s, c) = delta.sin_cos();
    (v.re * s - v.im * c, v.re * c + v.im * s)
}

pub fn from_dq(d: f64, q: f64, delta: f64) -> Complex64 {
    let (s, c) = delta.sin_cos();
    Complex64::new(d * s + q * c, q * s - d * c)
}

/// Stator algebra: currents follow from the internal EMFs and the terminal
/// voltage.
pub fn terminal(params: &GeneratorParams, st: &GeneratorState, v: Complex64) -> Terminal {
    let (vd, vq) = to_dq(v, st.delta);
    let id = (st.eq_p - vq) / params.xd_p;
    let iq = (vd - st.ed_p) / params.xq_p;
    Terminal {
        vd,
        vq,
        id,
        iq,
        p: vd * id + vq * iq,
        q: vq * id - vd * iq,
        vt: v.norm(),
    }
}

/// Field current in the non-reciprocal pu system (equals E_fd in steady state).
pub fn field_current(params: &GeneratorParams, st: &GeneratorState, term: &Terminal) -> f64 {
    st.eq_p + (params.xd - params.xd_p) * term.id
}

/// Voltage-regulator target for E_fd, after OEL override and ceiling.
pub fn efd_target(params: &GeneratorParams, st: &GeneratorState, term: &Terminal) -> f64 {
    let mut target = params.k_avr * (st.v_ref - term.vt - params.droop * term.q);
    if st.oel.active {
        if let Some(lim) = params.ifd_max {
            target = target.min(lim);
        }
    }
    target.clamp(params.efd_min, params.efd_max)
}

/// Two-axis model and AVR right-hand side at terminal voltage `v`
/// (network frame, pu).
pub fn generator_derivatives(
    st: &GeneratorState,
    params: &GeneratorParams,
    v: Complex64,
    omega_base: f64,
) -> GeneratorDerivatives {
    if !st.online {
        return GeneratorDerivatives::default();
    }
    let t = terminal(params, st, v);
    let dw = st.omega - 1.0;
    GeneratorDerivatives {
        delta: omega_base * dw,
        omega: (st.p_mech - t.p - params.d * dw) / (2.0 * params.h),
        eq_p: (st.efd - st.eq_p - (params.xd - params.xd_p) * t.id) / params.td0_p,
        ed_p: (-st.ed_p + (params.xq - params.xq_p) * t.iq) / params.tq0_p,
        efd: (efd_target(params, st, &t) - st.efd) / params.t_avr,
    }
}

/// Equilibrium from a terminal voltage and the complex power delivered (pu
/// on machine base).
pub fn initialize_generator(params: &GeneratorParams, v: Complex64, s: Complex64) -> GeneratorState {
    let i = (s / v).conj();
    let eq_axis = v + Complex64::new(0.0, params.xq) * i;
    let delta = eq_axis.arg();
    let (vd, vq) = to_dq(v, delta);
    let (id, iq) = to_dq(i, delta);
    let ed_p = vd - params.xq_p * iq;
    let eq_p = vq + params.xd_p * id;
    let efd = eq_p + (params.xd - params.xd_p) * id;
    let q = vq * id - vd * iq;
    GeneratorState {
        delta,
        omega: 1.0,
        eq_p,
        ed_p,
        efd,
        v_ref: v.norm() + params.droop * q + efd / params.k_avr,
        p_mech: vd * id + vq * iq,
        oel: OelState::default(),
        online: true,
    }
}

/// Advance the OEL timer. Returns `true` when the limiter switches on or off.
pub fn oel_update(params: &GeneratorParams, st: &mut GeneratorState, ifd: f64, demand: f64, t: f64) -> bool {
    let Some(lim) = params.ifd_max else {
        return false;
    };
    if st.oel.active {
        if demand < lim {
            st.oel = OelState::default();
            return true;
        }
        return false;
    }
    if ifd > lim + 1e-9 {
        let start = *st.oel.timer_start.get_or_insert(t);
        if t - start >= params.t_oel - 1e-9 {
            st.oel.active = true;
            st.oel.timer_start = None;
            return true;
        }
    } else {
        st.oel.timer_start = None;
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    const WB: f64 = 2.0 * PI * 50.0;

    #[test]
    fn initialized_machine_is_at_equilibrium() {
        let p = GeneratorParams::typical(500.0);
        let v = Complex64::from_polar(1.02, 0.3);
        let st = initialize_generator(&p, v, Complex64::new(0.8, 0.25));
        let d = generator_derivatives(&st, &p, v, WB);
        assert!(d.max_abs() < 1e-8, "{d:?}");
        let t = terminal(&p, &st, v);
        assert!((t.p - 0.8).abs() < 1e-12 && (t.q - 0.25).abs() < 1e-12);
    }

    #[test]
    fn rotor_angle_from_phasor_diagram() {
        // Round-rotor hand computation: E = V + j Xq I, angle of E.
        let p = GeneratorParams::typical(100.0);
        let v = Complex64::new(1.0, 0.0);
        let st = initialize_generator(&p, v, Complex64::new(1.0, 0.0));
        // I = 1 ∠0, E = 1 + j1.9 → δ = atan(1.9)
        assert!((st.delta - 1.9f64.atan()).abs() < 1e-12);
    }

    #[test]
    fn damping_opposes_overspeed() {
        let p = GeneratorParams::typical(500.0);
        let v = Complex64::from_polar(1.0, 0.1);
        let mut st = initialize_generator(&p, v, Complex64::new(0.5, 0.1));
        st.omega = 1.01;
        let d = generator_derivatives(&st, &p, v, WB);
        assert!(d.omega < 0.0);
        assert!(d.delta > 0.0);
    }

    #[test]
    fn oel_waits_for_delay() {
        let mut p = GeneratorParams::typical(500.0);
        p.ifd_max = Some(2.0);
        let v = Complex64::new(1.0, 0.0);
        let mut st = initialize_generator(&p, v, Complex64::new(0.5, 0.1));
        assert!(!oel_update(&p, &mut st, 2.5, 2.5, 0.0));
        assert!(!oel_update(&p, &mut st, 2.5, 2.5, 19.9));
        assert!(oel_update(&p, &mut st, 2.5, 2.5, 20.0));
        assert!(st.oel.active);
        // dropping below the limit before expiry resets the timer
        let mut st2 = initialize_generator(&p, v, Complex64::new(0.5, 0.1));
        oel_update(&p, &mut st2, 2.5, 2.5, 0.0);
        oel_update(&p, &mut st2, 1.9, 1.9, 10.0);
        assert!(!oel_update(&p, &mut st2, 2.5, 2.5, 25.0));
        assert!(!st2.oel.active);
    }
}
