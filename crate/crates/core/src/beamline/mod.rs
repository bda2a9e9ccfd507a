//! Beam propagation from the source through the slits and the grating to
//! the screen, and synthesis of the detector image.

pub mod image;
pub mod kick_table;
pub mod synth;
pub mod trajectory;
pub mod velocity;

pub use image::DetectorImage;
pub use kick_table::KickTable;
pub use synth::{
    prepare, render, render_profile, synthesize_image, PreparedBeam, QuadratureSizes, RenderOutput,
    SimulationOptions,
};
pub use trajectory::{propagate, slit_pass, Slit, Trajectory};
pub use velocity::{velocity_grid, VelocityGrid};
