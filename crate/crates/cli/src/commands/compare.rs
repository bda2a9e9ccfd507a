use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::Args;
use duv_diffraction::imageproc::{normalize_unity, rss};
use duv_diffraction::io::{read_raster, Grid};
use duv_diffraction::Error;
use serde::Serialize;
use serde_json::json;

use crate::report::{Log, RunManifest};
use crate::trace::{column_trace, find_peaks, main_peak, order_masses, Peak};
use crate::{create_dir, UsageError};

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// First image (.pgm or .csv).
    a: PathBuf,
    /// Second image, same dimensions.
    b: PathBuf,
    /// Directory for the trace, report and manifest.
    #[arg(long)]
    out_dir: PathBuf,
    /// Fraction of rows, from the top, left out of the trace; the default
    /// keeps the lower two thirds.
    #[arg(long, default_value_t = 1.0 / 3.0)]
    trace_skip: f64,
    /// Peaks lower than this fraction of the trace maximum are ignored.
    #[arg(long, default_value_t = 0.01)]
    peak_threshold: f64,
    /// Maxima rising less than this fraction of their height above the
    /// surrounding valleys are ripples, not peaks.
    #[arg(long, default_value_t = 0.5)]
    min_prominence: f64,
    /// Diffraction-order spacing in pixels; enables per-order masses,
    /// counting orders from each image's tallest peak.
    #[arg(long)]
    order_spacing: Option<f64>,
}

#[derive(Debug, Serialize)]
struct Side {
    path: PathBuf,
    peaks: Vec<Peak>,
    order_mass: Option<BTreeMap<i64, f64>>,
    odd_order_fraction: Option<f64>,
}

fn load(path: &Path) -> anyhow::Result<Grid> {
    read_raster(path).with_context(|| format!("reading {}", path.display()))
}

fn side(path: &Path, trace: &[f64], a: &CompareArgs) -> Side {
    let peaks = find_peaks(trace, a.peak_threshold, a.min_prominence);
    let order_mass = match (a.order_spacing, main_peak(&peaks)) {
        (Some(s), Some(p)) => Some(order_masses(&peaks, p.position, s)),
        _ => None,
    };
    let odd_order_fraction = order_mass
        .as_ref()
        .map(|m| m.iter().filter(|(j, _)| *j % 2 != 0).map(|(_, v)| v).sum());
    Side {
        path: path.to_path_buf(),
        peaks,
        order_mass,
        odd_order_fraction,
    }
}

pub fn compare(a: &CompareArgs, log: Log) -> anyhow::Result<()> {
    if !(0.0..1.0).contains(&a.trace_skip) {
        return Err(UsageError(format!("--trace-skip {} is not in [0, 1)", a.trace_skip)).into());
    }
    if let Some(s) = a.order_spacing {
        if !(s > 0.0) {
            return Err(UsageError(format!("--order-spacing {s} must be positive")).into());
        }
    }
    let ga = load(&a.a)?;
    let gb = load(&a.b)?;
    if (ga.width, ga.height) != (gb.width, gb.height) {
        return Err(Error::DimensionMismatch(format!(
            "{} is {}x{}, {} is {}x{}",
            a.a.display(),
            ga.width,
            ga.height,
            a.b.display(),
            gb.width,
            gb.height
        ))
        .into());
    }
    let dir = create_dir(&a.out_dir)?;
    let mut manifest = RunManifest::new("compare", None);
    manifest.inputs = vec![a.a.clone(), a.b.clone()];

    let na = Grid::new(ga.width, ga.height, normalize_unity(&ga.data)?)?;
    let nb = Grid::new(gb.width, gb.height, normalize_unity(&gb.data)?)?;
    let value = rss(&na, &nb, None)?;
    let first_row = (a.trace_skip * ga.height as f64).floor() as usize;
    let ta = column_trace(&na.data, na.width, first_row);
    let tb = column_trace(&nb.data, nb.width, first_row);
    let sa = side(&a.a, &ta, a);
    let sb = side(&a.b, &tb, a);

    let mut csv = String::from("column,a,b\n");
    for (c, (x, y)) in ta.iter().zip(&tb).enumerate() {
        writeln!(csv, "{c},{x},{y}")?;
    }
    manifest.write(dir.join("trace.csv"), csv)?;
    let report = json!({
        "rss": value,
        "trace_rows": [first_row, ga.height],
        "order_spacing_px": a.order_spacing,
        "a": sa,
        "b": sb,
    });
    manifest.write(dir.join("compare.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    log.info("compared images", json!({ "rss": value, "peaks_a": sa.peaks.len(), "peaks_b": sb.peaks.len() }));
    manifest.finish(&dir)?;
    Ok(())
}
