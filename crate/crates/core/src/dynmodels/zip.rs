use serde::{Deserialize, Serialize};

fn one() -> f64 {
    1.0
}

fn default_relief() -> f64 {
    0.7
}

/// Static polynomial load: constant impedance (a), current (b) and power (c)
/// shares on top of a reference consumption `p0_mw`/`q0_mvar` at `v0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZipLoadParams {
    pub p0_mw: f64,
    pub q0_mvar: f64,
    #[serde(default = "one")]
    pub v0: f64,
    pub a_p: f64,
    pub b_p: f64,
    pub c_p: f64,
    pub a_q: f64,
    pub b_q: f64,
    pub c_q: f64,
    /// Loading multiplier; stress is applied by raising it.
    #[serde(default = "one")]
    pub z: f64,
    /// Below this voltage the constant-current and constant-power shares
    /// fade towards impedance-like behaviour, so that deep sags and faults
    /// keep the network solvable.
    #[serde(default = "default_relief")]
    pub v_relief: f64,
}

impl ZipLoadParams {
    pub fn new(p0_mw: f64, q0_mvar: f64, p_shares: [f64; 3], q_shares: [f64; 3]) -> Self {
        ZipLoadParams {
            p0_mw,
            q0_mvar,
            v0: 1.0,
            a_p: p_shares[0],
            b_p: p_shares[1],
            c_p: p_shares[2],
            a_q: q_shares[0],
            b_q: q_shares[1],
            c_q: q_shares[2],
            z: 1.0,
            v_relief: default_relief(),
        }
    }

    pub fn constant_power(p0_mw: f64, q0_mvar: f64) -> Self {
        Self::new(p0_mw, q0_mvar, [0.0, 0.0, 1.0], [0.0, 0.0, 1.0])
    }

    /// Invariant violations, one message per broken constraint.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let sp = self.a_p + self.b_p + self.c_p;
        if (sp - 1.0).abs() > 1e-9 {
            out.push(format!("a_p + b_p + c_p = {sp} (must equal 1)"));
        }
        let sq = self.a_q + self.b_q + self.c_q;
        if (sq - 1.0).abs() > 1e-9 {
            out.push(format!("a_q + b_q + c_q = {sq} (must equal 1)"));
        }
        for (name, v) in [
            ("a_p", self.a_p),
            ("b_p", self.b_p),
            ("c_p", self.c_p),
            ("a_q", self.a_q),
            ("b_q", self.b_q),
            ("c_q", self.c_q),
        ] {
            if v < 0.0 {
                out.push(format!("{name} = {v} (shares must be >= 0)"));
            }
        }
        if self.v0 <= 0.0 {
            out.push(format!("v0 = {} (must be > 0)", self.v0));
        }
        if self.z < 0.0 {
            out.push(format!("z = {} (must be >= 0)", self.z));
        }
        if !(self.v_relief >= 0.0) {
            out.push(format!("v_relief = {} (must be >= 0)", self.v_relief));
        }
        out
    }

    /// Voltage factor of active power, `a (V/V0)^2 + b V/V0 + c`.
    pub fn p_factor(&self, v: f64) -> f64 {
        let r = v / self.v0;
        self.a_p * r * r + self.b_p * r + self.c_p
    }

    pub fn q_factor(&self, v: f64) -> f64 {
        let r = v / self.v0;
        self.a_q * r * r + self.b_q * r + self.c_q
    }

    /// Consumption and its voltage derivative, MW and Mvar, including the
    /// low-voltage relief of the constant-current and constant-power shares.
    pub(crate) fn network_power(&self, v: f64) -> ([f64; 2], [f64; 2]) {
        let r = v / self.v0;
        let (c, dc) = relief(v, self.v_relief);
        let (ci, dci) = (r * c, c / self.v0 + r * dc);
        let p = self.z * self.p0_mw * (self.a_p * r * r + self.b_p * ci + self.c_p * c);
        let q = self.z * self.q0_mvar * (self.a_q * r * r + self.b_q * ci + self.c_q * c);
        let dp = self.z * self.p0_mw * (2.0 * self.a_p * r / self.v0 + self.b_p * dci + self.c_p * dc);
        let dq = self.z * self.q0_mvar * (2.0 * self.a_q * r / self.v0 + self.b_q * dci + self.c_q * dc);
        ([p, q], [dp, dq])
    }
}

/// Multiplier applied to a constant-power component and its derivative.
/// Below `v_relief` the share fades as `r^2 (3 - 2 r)`, `r = V / v_relief`:
/// impedance-like near 0 V and joining the flat part with matching slope,
/// so the network Newton sees no kink at the threshold.
pub(crate) fn relief(v: f64, v_relief: f64) -> (f64, f64) {
    if v >= v_relief || v_relief <= 0.0 {
        (1.0, 0.0)
    } else {
        let r = v / v_relief;
        (r * r * (3.0 - 2.0 * r), 6.0 * r * (1.0 - r) / v_relief)
    }
}

/// ZIP consumption at voltage `v`: returns (P MW, Q Mvar).
pub fn zip_power(params: &ZipLoadParams, v: f64) -> (f64, f64) {
    (
        params.z * params.p0_mw * params.p_factor(v),
        params.z * params.q0_mvar * params.q_factor(v),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identity_at_reference() {
        let p = ZipLoadParams::new(123.4, 56.7, [0.2, 0.3, 0.5], [0.6, 0.1, 0.3]);
        assert_eq!(zip_power(&p, 1.0), (123.4, 56.7));
    }

    #[test]
    fn impedance_law() {
        let p = ZipLoadParams::new(100.0, 0.0, [1.0, 0.0, 0.0], [1.0, 0.0, 0.0]);
        let (pw, _) = zip_power(&p, 0.9);
        assert!((pw - 81.0).abs() <= 1e-12 * 81.0);
    }

    #[test]
    fn mixed_shares() {
        let mut p = ZipLoadParams::new(10.0, 0.0, [0.2, 0.3, 0.5], [1.0, 0.0, 0.0]);
        p.z = 2.0;
        let (pw, _) = zip_power(&p, 0.95);
        assert!((pw - 19.31).abs() < 1e-12);
    }

    #[test]
    fn bad_shares_reported() {
        let p = ZipLoadParams::new(10.0, 0.0, [0.2, 0.4, 0.5], [1.0, 0.0, 0.0]);
        let v = p.violations();
        assert_eq!(v.len(), 1);
        assert!(v[0].contains("a_p + b_p + c_p"));
    }

    #[test]
    fn relief_only_below_threshold() {
        let p = ZipLoadParams::constant_power(100.0, 20.0);
        assert_eq!(p.network_power(0.75).0, [100.0, 20.0]);
        let ([pw, _], _) = p.network_power(0.35);
        assert!((pw - 50.0).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn linear_in_z(v in 0.0f64..1.5, a in 0.0f64..1.0, b in 0.0f64..1.0, z in 0.0f64..5.0) {
            let b = b * (1.0 - a);
            let mut p = ZipLoadParams::new(37.0, 11.0, [a, b, 1.0 - a - b], [b, a, 1.0 - a - b]);
            p.z = z;
            let (p1, q1) = zip_power(&p, v);
            p.z = 2.0 * z;
            let (p2, q2) = zip_power(&p, v);
            prop_assert_eq!(p2, 2.0 * p1);
            prop_assert_eq!(q2, 2.0 * q1);
        }

        #[test]
        fn network_slope_matches_finite_difference(v in 0.1f64..1.4, c in 0.0f64..1.0) {
            let p = ZipLoadParams::new(50.0, 20.0, [1.0 - c, 0.0, c], [0.5 * (1.0 - c), 0.5 * (1.0 - c), c]);
            let h = 1e-6;
            prop_assume!((v - p.v_relief).abs() > 2.0 * h);
            let (_, d) = p.network_power(v);
            let (up, _) = p.network_power(v + h);
            let (dn, _) = p.network_power(v - h);
            prop_assert!(((up[0] - dn[0]) / (2.0 * h) - d[0]).abs() < 1e-5);
            prop_assert!(((up[1] - dn[1]) / (2.0 * h) - d[1]).abs() < 1e-5);
        }
    }
}
