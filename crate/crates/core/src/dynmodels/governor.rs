use serde::{Deserialize, Serialize};

/// IEEE standard steam governor (IEESGO) parameters, pu on machine base.
///
/// Structure: `K1 (1 + sT2)/(1 + sT1)` on speed deviation, subtracted from
/// `p_ref`, first-order lag `T3`, clamp to `[p_min, p_max]`, lag `T4`, then
/// a turbine split where `K2` of the power passes an extra lag `T5` and `K3`
/// a further lag `T6`. A zero time constant bypasses its block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GovernorIeesgoParams {
    #[serde(default)]
    pub k1: f64,
    #[serde(default)]
    pub t1: f64,
    #[serde(default)]
    pub t2: f64,
    #[serde(default = "default_t3")]
    pub t3: f64,
    #[serde(default)]
    pub t4: f64,
    #[serde(default)]
    pub t5: f64,
    #[serde(default)]
    pub t6: f64,
    #[serde(default)]
    pub k2: f64,
    #[serde(default)]
    pub k3: f64,
    #[serde(default = "default_pmax")]
    pub p_max: f64,
    #[serde(default)]
    pub p_min: f64,
    /// Set at initialization from the dispatch; moved by stress increments.
    #[serde(default)]
    pub p_ref: f64,
}

fn default_t3() -> f64 {
    0.01
}

fn default_pmax() -> f64 {
    1.0
}

impl Default for GovernorIeesgoParams {
    fn default() -> Self {
        GovernorIeesgoParams {
            k1: 0.0,
            t1: 0.0,
            t2: 0.0,
            t3: default_t3(),
            t4: 0.0,
            t5: 0.0,
            t6: 0.0,
            k2: 0.0,
            k3: 0.0,
            p_max: default_pmax(),
            p_min: 0.0,
            p_ref: 0.0,
        }
    }
}

impl GovernorIeesgoParams {
    pub fn violations(&self, tag: &str) -> Vec<String> {
        let mut out = Vec::new();
        if self.t3 <= 0.0 {
            out.push(format!("{tag}.t3 = {} (must be > 0)", self.t3));
        }
        if self.p_min > self.p_max {
            out.push(format!("{tag}: p_min > p_max"));
        }
        for (n, t) in [
            ("t1", self.t1),
            ("t2", self.t2),
            ("t4", self.t4),
            ("t5", self.t5),
            ("t6", self.t6),
        ] {
            if t < 0.0 {
                out.push(format!("{tag}.{n} must be >= 0"));
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GovernorState {
    lead_lag: f64,
    lag3: f64,
    lag4: f64,
    lag5: f64,
    lag6: f64,
    /// Speed-path input of the previous step (held for the trapezoid).
    prev_in: f64,
    pub p_mech: f64,
}

impl GovernorState {
    /// Equilibrium at zero speed deviation producing `p_mech`.
    pub fn equilibrium(params: &GovernorIeesgoParams, p_mech: f64) -> Self {
        let p = p_mech.clamp(params.p_min, params.p_max);
        GovernorState {
            lead_lag: 0.0,
            lag3: p,
            lag4: p,
            lag5: p,
            lag6: p,
            prev_in: p,
            p_mech: p,
        }
    }

    pub fn is_settled(&self, params: &GovernorIeesgoParams, tol: f64) -> bool {
        (self.lag3 - self.prev_in.clamp(params.p_min, params.p_max)).abs() < tol
            && (self.lag4 - self.lag3).abs() < tol
            && (self.p_mech - self.lag4).abs() < tol
    }
}

/// Trapezoidal update of `T x' = u - x` with input ramping from `u0` to `u1`.
fn lag(x: f64, u0: f64, u1: f64, t: f64, dt: f64) -> f64 {
    if t <= 0.0 {
        return u1;
    }
    let a = dt / (2.0 * t);
    x + a * (u0 + u1 - 2.0 * x) / (1.0 + a)
}

/// Advance the governor by `dt` and return the mechanical power.
pub fn governor_step(state: &mut GovernorState, params: &GovernorIeesgoParams, speed_dev: f64, dt: f64) -> f64 {
    // speed path
    let w = params.k1 * speed_dev;
    let droop = if params.t1 > 0.0 {
        state.lead_lag = lag(state.lead_lag, state.lead_lag, w, params.t1, dt);
        state.lead_lag + (params.t2 / params.t1) * (w - state.lead_lag)
    } else {
        w
    };
    let u = params.p_ref - droop;
    let u_prev = state.prev_in;
    state.prev_in = u;
    state.lag3 = lag(state.lag3, u_prev, u, params.t3, dt).clamp(params.p_min, params.p_max);
    let x4_prev = state.lag4;
    state.lag4 = lag(state.lag4, state.lag3, state.lag3, params.t4, dt);
    let x5_prev = state.lag5;
    state.lag5 = lag(state.lag5, x4_prev, state.lag4, params.t5, dt);
    state.lag6 = lag(state.lag6, x5_prev, state.lag5, params.t6, dt);
    let p = (1.0 - params.k2 - params.k3) * state.lag4 + params.k2 * state.lag5 + params.k3 * state.lag6;
    state.p_mech = p.clamp(params.p_min, params.p_max);
    state.p_mech
}

#[cfg(test)]
mod tests {
    use super::*;

    fn typical_params() -> GovernorIeesgoParams {
        GovernorIeesgoParams {
            p_ref: 0.8,
            ..Default::default()
        }
    }

    #[test]
    fn equilibrium_holds() {
        let p = typical_params();
        let mut st = GovernorState::equilibrium(&p, 0.8);
        for _ in 0..1000 {
            assert_eq!(governor_step(&mut st, &p, 0.0, 0.0005), 0.8);
        }
    }

    #[test]
    fn step_response_of_t3_lag() {
        let mut p = typical_params();
        let mut st = GovernorState::equilibrium(&p, 0.8);
        p.p_ref = 0.9;
        let dt = 0.0005;
        let mut out = 0.0;
        for _ in 0..100 {
            out = governor_step(&mut st, &p, 0.0, dt);
        }
        // 1 - exp(-0.05/0.01) of the step after 50 ms
        let expect = 0.8 + 0.1 * (1.0 - (-5.0f64).exp());
        assert!((out - expect).abs() < 1e-3 * 0.1, "{out} vs {expect}");
        assert!((out - 0.9).abs() < 0.009);
    }

    #[test]
    fn clamps_at_pmax() {
        let mut p = typical_params();
        let mut st = GovernorState::equilibrium(&p, 0.8);
        p.p_ref = 1.3;
        for _ in 0..2000 {
            let pm = governor_step(&mut st, &p, 0.0, 0.0005);
            assert!(pm <= p.p_max && pm >= p.p_min);
        }
        assert_eq!(st.p_mech, 1.0);
    }

    #[test]
    fn droop_reduces_power_on_overspeed() {
        let mut p = typical_params();
        p.k1 = 20.0;
        let mut st = GovernorState::equilibrium(&p, 0.8);
        for _ in 0..2000 {
            governor_step(&mut st, &p, 0.005, 0.0005);
        }
        assert!((st.p_mech - 0.7).abs() < 1e-6);
    }
}
