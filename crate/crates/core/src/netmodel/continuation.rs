//! Continuation power flow: trace the P-V curve along a stress direction
//! up to its nose.

use super::powerflow::{OperatingPoint, Param, PfModel, PowerFlowOptions};
use crate::cases::SystemCase;
use crate::error::{Error, Result};

/// MW of extra consumption (per load) and extra dispatch (per generator)
/// for each MW of stress. Loads keep their power factor.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StressDirection {
    pub loads: Vec<f64>,
    pub generators: Vec<f64>,
}

impl StressDirection {
    pub fn is_zero(&self) -> bool {
        self.loads.iter().all(|w| *w == 0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContinuationOptions {
    pub pf: PowerFlowOptions,
    pub initial_step_mw: f64,
    pub min_step_mw: f64,
    /// Switch to voltage parameterization once one load step moves the
    /// weakest voltage by more than this, pu.
    pub switch_dv: f64,
    pub max_points: usize,
}

impl Default for ContinuationOptions {
    fn default() -> Self {
        ContinuationOptions {
            pf: PowerFlowOptions::default(),
            initial_step_mw: 10.0,
            min_step_mw: 0.1,
            switch_dv: 0.01,
            max_points: 5000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContinuationResult {
    /// Stress added at the nose, MW.
    pub lambda_max_mw: f64,
    /// Traced points: stress (MW) and per-bus voltage magnitudes.
    pub curve: Vec<(f64, Vec<f64>)>,
    pub warnings: Vec<String>,
}

fn secant(last: &OperatingPoint, prev: Option<&OperatingPoint>, ratio: f64) -> OperatingPoint {
    let mut p = last.clone();
    if let Some(prev) = prev {
        for i in 0..p.v.len() {
            p.v[i] += ratio * (last.v[i] - prev.v[i]);
            p.theta[i] += ratio * (last.theta[i] - prev.theta[i]);
        }
        p.lambda += ratio * (last.lambda - prev.lambda);
    }
    p
}

/// Vertex of the parabola through three (x, y) points, if it opens downward.
fn parabola_max(pts: [(f64, f64); 3]) -> Option<f64> {
    let [(x0, y0), (x1, y1), (x2, y2)] = pts;
    let d = (x0 - x1) * (x0 - x2) * (x1 - x2);
    if d == 0.0 {
        return None;
    }
    let a = (x2 * (y1 - y0) + x1 * (y0 - y2) + x0 * (y2 - y1)) / d;
    let b = (x2 * x2 * (y0 - y1) + x1 * x1 * (y2 - y0) + x0 * x0 * (y1 - y2)) / d;
    let c = (x1 * x2 * (x1 - x2) * y0 + x2 * x0 * (x2 - x0) * y1 + x0 * x1 * (x0 - x1) * y2) / d;
    if a >= 0.0 {
        return None;
    }
    let x = -b / (2.0 * a);
    Some(a * x * x + b * x + c)
}

/// Stress (MW) at which the static P-V curve along `direction` reaches its
/// nose. Natural-parameter steps with a secant predictor are used far from
/// the nose; near it the weakest bus voltage becomes the parameter, and the
/// maximum is refined by a parabola through the last three points.
pub fn continuation_loadability(
    case: &SystemCase,
    direction: &StressDirection,
    options: &ContinuationOptions,
) -> Result<ContinuationResult> {
    let mut model = PfModel::new(case, &options.pf)?;
    model.set_direction(case, direction);
    let mut op = model.initial_point(None);
    model.correct(&mut op, Param::Lambda)?;
    let n_bus = model.n_bus();
    let mut result = ContinuationResult {
        lambda_max_mw: 0.0,
        curve: vec![(0.0, op.v[..n_bus].to_vec())],
        warnings: Vec::new(),
    };
    if direction.is_zero() {
        let msg = "stress direction is all zero; loadability margin is 0".to_string();
        log::warn!("{msg}");
        result.warnings.push(msg);
        return Ok(result);
    }

    let mut points = vec![op];
    let mut h = options.initial_step_mw;
    let mut weakest: Option<usize> = None;

    // natural parameter phase
    while weakest.is_none() && points.len() < options.max_points {
        let last = points.last().unwrap();
        let prev = points.len().checked_sub(2).map(|k| &points[k]);
        let ratio = prev.map(|p| h / (last.lambda - p.lambda)).unwrap_or(0.0);
        let mut pred = secant(last, prev, ratio);
        pred.lambda = last.lambda + h;
        match model.correct(&mut pred, Param::Lambda) {
            Ok(_) => {
                let (k, dv) = model
                    .free_voltage_nodes()
                    .into_iter()
                    .map(|i| (i, last.v[i] - pred.v[i]))
                    .fold((usize::MAX, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a });
                points.push(pred);
                if k != usize::MAX && dv > options.switch_dv {
                    weakest = Some(k);
                }
            }
            Err(_) => {
                h /= 2.0;
                if h < options.min_step_mw {
                    let k = model.free_voltage_nodes().into_iter().max_by(|&a, &b| {
                        let last = points.last().unwrap();
                        let first = &points[0];
                        (first.v[a] - last.v[a]).total_cmp(&(first.v[b] - last.v[b]))
                    });
                    match (k, points.len() >= 2) {
                        (Some(k), true) => weakest = Some(k),
                        _ => break,
                    }
                }
            }
        }
    }

    // voltage parameter phase
    if let Some(k) = weakest {
        let mut dv = 0.01;
        while points.len() < options.max_points {
            let last = points.last().unwrap();
            let prev = &points[points.len() - 2];
            let step_prev = prev.v[k] - last.v[k];
            let ratio = if step_prev.abs() > 1e-12 { dv / step_prev } else { 0.0 };
            let mut pred = secant(last, Some(prev), ratio);
            pred.v[k] = last.v[k] - dv;
            match model.correct(&mut pred, Param::Voltage(k)) {
                Ok(_) => {
                    let turned = pred.lambda < last.lambda;
                    points.push(pred);
                    if turned {
                        break;
                    }
                }
                Err(_) => {
                    dv /= 2.0;
                    if dv < 1e-5 {
                        break;
                    }
                }
            }
        }
        if points.len() >= 3 {
            let tail: Vec<(f64, f64)> = points[points.len() - 3..].iter().map(|p| (p.v[k], p.lambda)).collect();
            if let Some(top) = parabola_max([tail[0], tail[1], tail[2]]) {
                result.lambda_max_mw = top;
            }
        }
    }

    let best = points.iter().map(|p| p.lambda).fold(0.0f64, f64::max);
    result.lambda_max_mw = result.lambda_max_mw.max(best);
    // the parabola may only refine, not extrapolate far beyond the trace
    let step_cap = best + options.initial_step_mw;
    result.lambda_max_mw = result.lambda_max_mw.min(step_cap);
    let top = points.iter().position(|p| p.lambda == best).unwrap_or(0);
    result.curve = points[..=top]
        .iter()
        .map(|p| (p.lambda, p.v[..n_bus].to_vec()))
        .collect();
    if result.curve.len() < 2 {
        return Err(Error::Diverged {
            iterations: points.len(),
            mismatch: f64::NAN,
        });
    }
    Ok(result)
}
