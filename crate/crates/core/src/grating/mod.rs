//! Momentum transfer at the standing-wave grating.

pub mod channels;
pub mod fluorescence;
pub mod kicks;
pub mod strength;

pub use channels::{
    channel_amplitudes, poisson_consistency_check, Channel, ChannelOptions, ChannelSet,
    DEFAULT_EPSILON_TRUNC, DEFAULT_M_MAX,
};
pub use fluorescence::{fluorescence_kernel, FluorescenceKernel};
pub use kicks::{kick_distribution, KickDistribution, SmearComponent};
pub use strength::{grating_strength, GratingCoupling, GratingStrength};
