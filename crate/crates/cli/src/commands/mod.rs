mod compare;
mod dump;
mod fit;
mod preprocess;
mod simulate;

pub use compare::{compare, CompareArgs};
pub use dump::{dump_config, dump_kicks, DumpConfigArgs, DumpKicksArgs};
pub use fit::{fit, FitArgs};
pub use preprocess::{preprocess, PreprocessArgs};
pub use simulate::{simulate, SimulateArgs};

use std::path::Path;

use duv_diffraction::io::{encode_csv, encode_pgm16};

use crate::report::RunManifest;

/// Writes `<dir>/<name>.pgm` and `<dir>/<name>.csv` and records both.
pub(crate) fn write_image(
    manifest: &mut RunManifest,
    dir: &Path,
    name: &str,
    width: usize,
    height: usize,
    data: &[f64],
) -> anyhow::Result<()> {
    manifest.write(dir.join(format!("{name}.pgm")), encode_pgm16(width, height, data)?)?;
    manifest.write(dir.join(format!("{name}.csv")), encode_csv(width, data))?;
    Ok(())
}
