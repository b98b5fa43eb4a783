use serde::{Deserialize, Serialize};

fn d_deadband() -> f64 {
    0.01
}
fn d_step() -> f64 {
    0.01
}
fn d_first() -> f64 {
    30.0
}
fn d_subsequent() -> f64 {
    10.0
}
fn d_min() -> f64 {
    0.85
}
fn d_max() -> f64 {
    1.15
}
fn d_vset() -> f64 {
    1.0
}

/// Load tap changer acting on a transformer branch whose tap sits on the
/// high-voltage (`from`) side; lowering the ratio raises the controlled
/// voltage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LtcParams {
    #[serde(default = "d_deadband")]
    pub deadband: f64,
    #[serde(default = "d_step")]
    pub step: f64,
    #[serde(default = "d_first")]
    pub delay_first: f64,
    #[serde(default = "d_subsequent")]
    pub delay_subsequent: f64,
    #[serde(default = "d_min")]
    pub tap_min: f64,
    #[serde(default = "d_max")]
    pub tap_max: f64,
    pub controlled_bus: u32,
    #[serde(default = "d_vset")]
    pub v_set: f64,
}

impl LtcParams {
    pub fn with_bus(controlled_bus: u32) -> Self {
        LtcParams {
            deadband: d_deadband(),
            step: d_step(),
            delay_first: d_first(),
            delay_subsequent: d_subsequent(),
            tap_min: d_min(),
            tap_max: d_max(),
            controlled_bus,
            v_set: d_vset(),
        }
    }

    pub fn violations(&self, tag: &str) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.deadband > self.step / 2.0) {
            out.push(format!(
                "{tag}: deadband {} must exceed step/2 = {}",
                self.deadband,
                self.step / 2.0
            ));
        }
        if !(self.tap_min < self.tap_max) {
            out.push(format!("{tag}: tap_min must be < tap_max"));
        }
        if self.step <= 0.0 {
            out.push(format!("{tag}: step must be > 0"));
        }
        if self.delay_first < 0.0 || self.delay_subsequent < 0.0 {
            out.push(format!("{tag}: delays must be >= 0"));
        }
        out
    }

    /// Direction the tap should move for voltage `v`: -1, 0 or +1.
    pub fn correction(&self, v: f64) -> i32 {
        if v < self.v_set - self.deadband {
            -1
        } else if v > self.v_set + self.deadband {
            1
        } else {
            0
        }
    }

    pub(crate) fn can_move(&self, tap: f64, dir: i32) -> bool {
        match dir {
            -1 => tap - self.step >= self.tap_min - 1e-9,
            1 => tap + self.step <= self.tap_max + 1e-9,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LtcState {
    pub tap: f64,
    pub timer_start: Option<f64>,
    /// A move already happened in the current out-of-band episode.
    pub in_sequence: bool,
    pub enabled: bool,
}

impl LtcState {
    pub fn new(tap: f64) -> Self {
        LtcState {
            tap,
            timer_start: None,
            in_sequence: false,
            enabled: true,
        }
    }

    /// A timer is running that can still lead to a move.
    pub fn is_armed(&self, params: &LtcParams, v: f64) -> bool {
        self.enabled && self.timer_start.is_some() && params.can_move(self.tap, params.correction(v))
    }
}

/// Advance the tap changer to time `t`. Returns the new tap when it moved.
pub fn ltc_step(state: &mut LtcState, params: &LtcParams, v_controlled: f64, t: f64) -> Option<f64> {
    if !state.enabled {
        return None;
    }
    let dir = params.correction(v_controlled);
    if dir == 0 {
        state.timer_start = None;
        state.in_sequence = false;
        return None;
    }
    let start = *state.timer_start.get_or_insert(t);
    let delay = if state.in_sequence {
        params.delay_subsequent
    } else {
        params.delay_first
    };
    if t - start < delay - 1e-9 || !params.can_move(state.tap, dir) {
        return None;
    }
    state.tap = (state.tap + dir as f64 * params.step).clamp(params.tap_min, params.tap_max);
    state.timer_start = Some(t);
    state.in_sequence = true;
    Some(state.tap)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(params: &LtcParams, st: &mut LtcState, v: impl Fn(f64) -> f64, t_end: f64) -> Vec<(f64, f64)> {
        let dt = 0.01;
        let mut moves = Vec::new();
        let n = (t_end / dt).round() as usize;
        for k in 0..=n {
            let t = k as f64 * dt;
            if let Some(tap) = ltc_step(st, params, v(t), t) {
                moves.push((t, tap));
            }
        }
        moves
    }

    #[test]
    fn idle_inside_deadband() {
        let p = LtcParams::with_bus(1);
        let mut st = LtcState::new(1.0);
        assert!(run(&p, &mut st, |_| 1.005, 500.0).is_empty());
    }

    #[test]
    fn timeline_first_and_subsequent() {
        let p = LtcParams::with_bus(1);
        let mut st = LtcState::new(1.0);
        let moves = run(&p, &mut st, |_| p.v_set - 2.0 * p.deadband, 65.0);
        let times: Vec<f64> = moves.iter().map(|m| (m.0 * 100.0).round() / 100.0).collect();
        assert_eq!(times, vec![30.0, 40.0, 50.0, 60.0]);
        assert!((moves[0].1 - 0.99).abs() < 1e-12);
        for w in moves.windows(2) {
            assert!((w[0].1 - w[1].1 - p.step).abs() < 1e-12);
        }
    }

    #[test]
    fn reentry_resets_timer() {
        let p = LtcParams::with_bus(1);
        let mut st = LtcState::new(1.0);
        let moves = run(
            &p,
            &mut st,
            |t| if !(20.0..=25.0).contains(&t) { 0.97 } else { 1.0 },
            54.0,
        );
        assert!(moves.is_empty(), "{moves:?}");
    }

    #[test]
    fn saturates_at_limit() {
        let p = LtcParams::with_bus(1);
        let mut st = LtcState::new(p.tap_min);
        assert!(run(&p, &mut st, |_| 0.9, 300.0).is_empty());
        assert_eq!(st.tap, p.tap_min);
        assert!(!st.is_armed(&p, 0.9));
    }
}
