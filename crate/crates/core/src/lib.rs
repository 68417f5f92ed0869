//! Uniform causality model for cyber-physical systems.

pub mod detection;
pub mod diagnosis;
pub mod distributions;
mod ids;
pub mod model;
pub mod planning;
pub mod scenario;
pub mod simulation;

/// The guide's chapters and the README, compiled so their examples run as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/sensors.md")]
    mod sensors {}
    #[doc = include_str!("../../../book/src/subsystems.md")]
    mod subsystems {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/detection.md")]
    mod detection {}
    #[doc = include_str!("../../../book/src/diagnosis.md")]
    mod diagnosis {}
    #[doc = include_str!("../../../book/src/planning.md")]
    mod planning {}
    #[doc = include_str!("../../../book/src/scenarios.md")]
    mod scenarios {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
    #[doc = include_str!("../../../README.md")]
    mod readme {}
}
