use num_complex::Complex64;

use crate::cases::{GeneratorModel, LoadModel, SystemCase};
use crate::dynmodels::{
    initialize_composite, initialize_generator, CompositeState, GeneratorState, GovernorState, LtcState,
};
use crate::error::{Error, Result};
use crate::netmodel::{build_network, PowerFlowSolution};

#[derive(Debug, Clone, PartialEq)]
pub enum MachineState {
    TwoAxis {
        gen: GeneratorState,
        gov: GovernorState,
        /// Governor setpoint, pu on machine base.
        p_ref: f64,
    },
    /// Ideal source holding its power-flow voltage.
    InfiniteBus {
        v: Complex64,
    },
    Offline,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LoadState {
    /// Current size multiplier of a ZIP load.
    Zip {
        z: f64,
    },
    Composite(CompositeState),
}

/// Complete dynamic state of a case. Topology changes (tripped branches,
/// taps) live in the simulator's working copy of the case; `ltcs` mirrors
/// the taps so a state can be re-simulated from scratch.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicState {
    pub t: f64,
    /// One entry per case generator.
    pub machines: Vec<MachineState>,
    /// One entry per case tap changer.
    pub ltcs: Vec<LtcState>,
    /// One entry per case load.
    pub loads: Vec<LoadState>,
    /// Network node voltages: case buses first, then composite-load
    /// internal nodes.
    pub voltages: Vec<Complex64>,
}

impl DynamicState {
    pub fn bus_voltages(&self, n_bus: usize) -> Vec<f64> {
        self.voltages[..n_bus].iter().map(|v| v.norm()).collect()
    }
}

/// Equilibrium state matching a converged power flow. Governor setpoints are
/// chosen so mechanical power equals the dispatch.
pub fn initialize_dynamics(case: &SystemCase, pf: &PowerFlowSolution) -> Result<DynamicState> {
    let (y, load_nodes) = build_network(case)?;
    let n_bus = case.buses.len();
    if pf.v.len() != n_bus || pf.load_voltage.len() != case.loads.len() {
        return Err(Error::Initialization(
            "power-flow solution does not match the case dimensions".to_string(),
        ));
    }
    let mut voltages = vec![Complex64::new(0.0, 0.0); y.dim()];
    for (i, v) in voltages.iter_mut().take(n_bus).enumerate() {
        *v = pf.bus_voltage(i);
    }
    for (l, &node) in load_nodes.iter().enumerate() {
        voltages[node] = pf.load_voltage[l];
    }

    let index = case.bus_index();
    let mut machines = Vec::with_capacity(case.generators.len());
    let mut k = 0;
    for g in &case.generators {
        if !g.in_service {
            machines.push(MachineState::Offline);
            continue;
        }
        let (p_mw, q_mvar) = (pf.gen_p_mw[k], pf.gen_q_mvar[k]);
        k += 1;
        let v = voltages[index[&g.bus]];
        match g.model {
            GeneratorModel::InfiniteBus => machines.push(MachineState::InfiniteBus { v }),
            GeneratorModel::TwoAxis => {
                let params = g
                    .machine
                    .as_ref()
                    .ok_or_else(|| Error::Initialization(format!("generator {} has no machine data", g.id)))?;
                let s = Complex64::new(p_mw, q_mvar) / params.s_base_mva;
                let gen = initialize_generator(params, v, s);
                if gen.efd < params.efd_min || gen.efd > params.efd_max {
                    return Err(Error::Initialization(format!(
                        "generator {}: field voltage {:.3} outside [{}, {}]",
                        g.id, gen.efd, params.efd_min, params.efd_max
                    )));
                }
                let gov_p = &g.governor;
                if gen.p_mech > gov_p.p_max + 1e-9 || gen.p_mech < gov_p.p_min - 1e-9 {
                    return Err(Error::Initialization(format!(
                        "generator {}: dispatch {:.1} MW outside governor range [{:.1}, {:.1}] MW",
                        g.id,
                        p_mw,
                        gov_p.p_min * params.s_base_mva,
                        gov_p.p_max * params.s_base_mva
                    )));
                }
                machines.push(MachineState::TwoAxis {
                    gen,
                    gov: GovernorState::equilibrium(gov_p, gen.p_mech),
                    p_ref: gen.p_mech,
                });
            }
        }
    }

    let ltcs = pf.taps.iter().map(|&tap| LtcState::new(tap)).collect();

    let mut loads = Vec::with_capacity(case.loads.len());
    for (l, &node) in case.loads.iter().zip(&load_nodes) {
        loads.push(match &l.model {
            LoadModel::Zip(z) => LoadState::Zip { z: z.z },
            LoadModel::Composite(c) => {
                let v = voltages[node].norm();
                let st = initialize_composite(&c.design(), v).ok_or_else(|| {
                    Error::Initialization(format!("load {}: motors have no equilibrium at {v:.3} pu", l.id))
                })?;
                LoadState::Composite(st)
            }
        });
    }

    Ok(DynamicState {
        t: 0.0,
        machines,
        ltcs,
        loads,
        voltages,
    })
}
