//! Built-in systems: a two-bus oracle network with a closed-form nose point
//! and a reduced two-area (North exporting to Central) system.

use crate::dynmodels::{CompositeLoadParams, GeneratorParams, GovernorIeesgoParams, LtcParams, ZipLoadParams};
use crate::netmodel::{Branch, Bus, BusKind};
use crate::simulator::Contingency;

use super::{
    Area, GeneratorModel, GeneratorUnit, LoadModel, LoadUnit, LtcUnit, Monitoring, StressAreas, SystemCase,
    SCHEMA_VERSION,
};

fn bus(id: u32, name: &str, kind: BusKind, base_kv: f64, area: u32, v: f64) -> Bus {
    Bus {
        id,
        name: name.to_string(),
        kind,
        base_kv,
        area,
        v,
        theta: 0.0,
        g_shunt: 0.0,
        b_shunt: 0.0,
    }
}

fn infinite_bus(id: &str, bus: u32) -> GeneratorUnit {
    GeneratorUnit {
        id: id.to_string(),
        bus,
        model: GeneratorModel::InfiniteBus,
        p_mw: 0.0,
        q_min_mvar: None,
        q_max_mvar: None,
        participation: None,
        machine: None,
        governor: GovernorIeesgoParams::default(),
        in_service: true,
    }
}

fn machine(id: &str, bus: u32, p_mw: f64, mva: f64, ifd_max: Option<f64>) -> GeneratorUnit {
    let mut m = GeneratorParams::typical(mva);
    m.ifd_max = ifd_max;
    GeneratorUnit {
        id: id.to_string(),
        bus,
        model: GeneratorModel::TwoAxis,
        p_mw,
        q_min_mvar: None,
        q_max_mvar: None,
        participation: None,
        machine: Some(m),
        governor: GovernorIeesgoParams::default(),
        in_service: true,
    }
}

/// Slack bus at 1.0 pu feeding a 100 MW unity-power-factor constant-power
/// load through a lossless x = 0.1 pu line (100 MVA base). The static
/// maximum total load is V1²/(2x) = 500 MW.
pub fn builtin_twobus() -> SystemCase {
    let mut load = ZipLoadParams::constant_power(100.0, 0.0);
    // the nose sits at 0.707 pu; keep the constant-power law in force there
    load.v_relief = 0.5;
    SystemCase {
        schema_version: SCHEMA_VERSION,
        name: "two-bus".to_string(),
        base_mva: 100.0,
        frequency_hz: 50.0,
        areas: vec![
            Area {
                id: 1,
                name: "source".to_string(),
            },
            Area {
                id: 2,
                name: "load".to_string(),
            },
        ],
        buses: vec![
            bus(1, "B1", BusKind::Slack, 400.0, 1, 1.0),
            bus(2, "B2", BusKind::Pq, 400.0, 2, 1.0),
        ],
        branches: vec![Branch::new("L1", 1, 2, 0.0, 0.1)],
        generators: vec![infinite_bus("G1", 1)],
        loads: vec![LoadUnit {
            id: "L2".to_string(),
            bus: 2,
            model: LoadModel::Zip(load),
        }],
        ltcs: Vec::new(),
        monitoring: Monitoring { buses: vec![2] },
        stress: Some(StressAreas {
            load_area: 2,
            gen_area: 1,
        }),
        contingencies: vec![Contingency::none()],
    }
}

/// Two-bus system with the line split into two identical x = 0.2 pu
/// circuits. Contingency `trip_L1b` opens one of them at t = 1 s, leaving a
/// maximum total load of 250 MW.
pub fn builtin_parallel_twobus() -> SystemCase {
    let mut case = builtin_twobus();
    case.name = "two-bus parallel".to_string();
    case.branches = vec![Branch::new("L1a", 1, 2, 0.0, 0.2), Branch::new("L1b", 1, 2, 0.0, 0.2)];
    case.contingencies
        .push(Contingency::trip_branch("trip_L1b", 1.0, "L1b"));
    case
}

/// Load composition of the Central area of the two-area system.
#[derive(Debug, Clone, PartialEq)]
pub enum TwoAreaLoadMix {
    /// ZIP shares `[a, b, c]` for P and Q.
    Zip { p: [f64; 3], q: [f64; 3] },
    /// Composite loads with the given large-motor, small-motor,
    /// discharge-lighting and constant-MVA shares.
    Composite { lim: f64, sim: f64, dl: f64, mva: f64 },
}

impl TwoAreaLoadMix {
    /// Constant-power share `c_p` of active power with a constant-current
    /// remainder; reactive power is constant impedance.
    pub fn constant_current_remainder(c_p: f64) -> Self {
        TwoAreaLoadMix::Zip {
            p: [0.0, 1.0 - c_p, c_p],
            q: [1.0, 0.0, 0.0],
        }
    }

    /// Composite mix with the given total motor share split evenly between
    /// large and small motors, plus 10% discharge lighting.
    pub fn motor_share(share: f64) -> Self {
        TwoAreaLoadMix::Composite {
            lim: share / 2.0,
            sim: share / 2.0,
            dl: 0.1,
            mva: 0.0,
        }
    }
}

impl Default for TwoAreaLoadMix {
    fn default() -> Self {
        Self::constant_current_remainder(1.0)
    }
}

/// Reduced two-area system. North (two machines plus a stiff external
/// equivalent) exports over a double-circuit corridor to Central, whose
/// loads sit behind tap-changing transformers. One Central machine supports
/// the local voltage.
///
/// Contingencies: `A` (40 ms fault at the North hub, then one corridor
/// circuit trips), `B` (same with 100 ms clearing), `C` (loss of the
/// Central unit; flagged sensitive) and `none`.
pub fn builtin_two_area(mix: TwoAreaLoadMix) -> SystemCase {
    const NORTH: u32 = 1;
    const CENTRAL: u32 = 2;
    const EXTERNAL: u32 = 3;
    let mut buses = vec![
        bus(1, "EXT", BusKind::Slack, 400.0, EXTERNAL, 1.02),
        bus(10, "NHUB", BusKind::Pq, 400.0, NORTH, 1.0),
        bus(11, "N1", BusKind::Pv, 20.0, NORTH, 1.02),
        bus(12, "N2", BusKind::Pv, 20.0, NORTH, 1.02),
        bus(20, "CHUB", BusKind::Pq, 400.0, CENTRAL, 1.0),
        bus(21, "C1", BusKind::Pq, 400.0, CENTRAL, 1.0),
        bus(22, "C2", BusKind::Pq, 400.0, CENTRAL, 1.0),
        bus(23, "C3", BusKind::Pv, 20.0, CENTRAL, 1.01),
        bus(31, "C1LV", BusKind::Pq, 130.0, CENTRAL, 1.0),
        bus(32, "C2LV", BusKind::Pq, 130.0, CENTRAL, 1.0),
        bus(33, "C2LVB", BusKind::Pq, 130.0, CENTRAL, 1.0),
    ];
    // shunt compensation in Central
    for b in buses.iter_mut() {
        match b.id {
            21 | 22 => b.b_shunt = 2.0,
            _ => {}
        }
    }
    let t = |id: &str, f: u32, to: u32, x: f64, tap: f64| {
        let mut br = Branch::new(id, f, to, 0.0, x);
        br.tap = tap;
        br
    };
    let branches = vec![
        t("EXT-NHUB", 1, 10, 0.04, 1.0),
        t("T-N1", 11, 10, 0.015, 1.0),
        t("T-N2", 12, 10, 0.015, 1.0),
        {
            let mut b = Branch::new("NC1", 10, 20, 0.0053, 0.08);
            b.b_shunt = 0.3;
            b
        },
        {
            let mut b = Branch::new("NC2", 10, 20, 0.0053, 0.08);
            b.b_shunt = 0.3;
            b
        },
        Branch::new("C-C1", 20, 21, 0.001, 0.015),
        Branch::new("C-C2", 20, 22, 0.001, 0.015),
        t("T-C3", 23, 20, 0.02, 1.0),
        t("T-C1", 21, 31, 0.012, 1.0),
        t("T-C2", 22, 32, 0.012, 1.0),
        t("T-C2B", 22, 33, 0.016, 1.0),
    ];
    let generators = vec![
        infinite_bus("EXT", 1),
        machine("G1", 11, 400.0, 800.0, Some(2.9)),
        machine("G2", 12, 400.0, 800.0, Some(2.9)),
        machine("G3", 23, 400.0, 600.0, Some(4.0)),
    ];
    let load_sizes = [(31u32, "LD1", 300.0), (32, "LD2", 300.0), (33, "LD3", 200.0)];
    let loads = load_sizes
        .iter()
        .map(|&(b, id, p)| {
            let q = p * 0.3;
            let model = match &mix {
                TwoAreaLoadMix::Zip { p: sp, q: sq } => LoadModel::Zip(ZipLoadParams::new(p, q, *sp, *sq)),
                TwoAreaLoadMix::Composite { lim, sim, dl, mva } => {
                    LoadModel::Composite(CompositeLoadParams::new(p, q, *lim, *sim, *dl, *mva))
                }
            };
            LoadUnit {
                id: id.to_string(),
                bus: b,
                model,
            }
        })
        .collect();
    let ltcs = [("T-C1", 31), ("T-C2", 32), ("T-C2B", 33)]
        .iter()
        .map(|&(br, b)| LtcUnit {
            branch: br.to_string(),
            params: LtcParams::with_bus(b),
        })
        .collect();
    let scenario_c = Contingency {
        label: "C".to_string(),
        events: vec![crate::simulator::TimedEvent {
            t: 1.0,
            action: crate::simulator::EventAction::TripGenerator { id: "G3".to_string() },
        }],
        sensitive: true,
    };
    SystemCase {
        schema_version: SCHEMA_VERSION,
        name: "two-area".to_string(),
        base_mva: 100.0,
        frequency_hz: 50.0,
        areas: vec![
            Area {
                id: NORTH,
                name: "North".to_string(),
            },
            Area {
                id: CENTRAL,
                name: "Central".to_string(),
            },
            Area {
                id: EXTERNAL,
                name: "External".to_string(),
            },
        ],
        buses,
        branches,
        generators,
        loads,
        ltcs,
        monitoring: Monitoring {
            buses: vec![20, 21, 31, 32],
        },
        stress: Some(StressAreas {
            load_area: CENTRAL,
            gen_area: NORTH,
        }),
        contingencies: vec![
            Contingency::none(),
            Contingency::fault_and_trip("A", 10, 1.0, 0.040, "NC2"),
            Contingency::fault_and_trip("B", 10, 1.0, 0.100, "NC2"),
            scenario_c,
        ],
    }
}
