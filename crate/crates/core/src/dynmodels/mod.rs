//! Dynamic device models: synchronous generator with AVR and OEL, IEESGO
//! governor, load tap changer, ZIP load and composite motor load.

mod composite;
mod generator;
mod governor;
mod ltc;
mod zip;

pub use composite::{
    composite_load_step, composite_power, initialize_composite, update_lighting, CompositeDesign, CompositeLoadParams,
    CompositeState, CompositeStep, MotorDesign, MotorParams, MotorState, DL_EXTINCTION_V, DL_RESTART_V,
};
pub use generator::{
    efd_target, field_current, from_dq, generator_derivatives, initialize_generator, oel_update, terminal, to_dq,
    GeneratorDerivatives, GeneratorParams, GeneratorState, OelState, Terminal,
};
pub use governor::{governor_step, GovernorIeesgoParams, GovernorState};
pub use ltc::{ltc_step, LtcParams, LtcState};
pub use zip::{zip_power, ZipLoadParams};

pub(crate) fn zip_default_relief() -> f64 {
    0.7
}
