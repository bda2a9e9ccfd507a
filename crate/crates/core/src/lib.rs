//! Far-field diffraction of molecular beams at a deep-ultraviolet standing
//! light wave.
//!
//! The crate covers the whole chain from a configuration file to a synthetic
//! detector image ([`beamline`]), the momentum-transfer model at the grating
//! ([`grating`]), preprocessing of measured micrographs ([`imageproc`]) and
//! the two-stage least-squares fit of the optical constants ([`fitting`]).

pub mod beamline;
pub mod config;
pub mod constants;
pub mod error;
pub mod fitting;
pub mod grating;
pub mod imageproc;
pub mod io;
pub mod units;

pub use config::{ExperimentConfig, Stations};
pub use error::{Error, ErrorKind, Result};

#[cfg(test)]
pub(crate) mod testutil {
    use crate::config::ExperimentConfig;

    pub const PCH2: &str = include_str!("../../../configs/pch2.cfg");

    pub fn pch2() -> ExperimentConfig {
        ExperimentConfig::parse(PCH2).expect("bundled PcH2 config")
    }
}
