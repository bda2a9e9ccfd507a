use std::path::PathBuf;

use clap::Args;
use duv_diffraction::beamline::synthesize_image;
use serde_json::json;

use super::write_image;
use crate::report::{Log, RunManifest};
use crate::{args, create_dir, load_config, QuadratureArgs};

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Experiment configuration file.
    config: PathBuf,
    /// Directory for the image, summary and manifest.
    #[arg(long)]
    out_dir: PathBuf,
    /// Base name of the image files.
    #[arg(long, default_value = "image")]
    name: String,
    #[command(flatten)]
    quadrature: QuadratureArgs,
    /// Simulate a single forward velocity instead of the thermal spread (e.g. 150mps).
    #[arg(long, value_parser = args::velocity)]
    fixed_velocity: Option<f64>,
    /// Ignore the velocity-selection slit.
    #[arg(long)]
    no_slit2: bool,
    /// Keep ray-weight units instead of normalising to unit sum.
    #[arg(long)]
    unnormalized: bool,
}

pub fn simulate(a: &SimulateArgs, log: Log) -> anyhow::Result<()> {
    let cfg = load_config(&a.config)?;
    let dir = create_dir(&a.out_dir)?;
    let opts = duv_diffraction::beamline::SimulationOptions {
        fixed_velocity: a.fixed_velocity,
        use_slit2: !a.no_slit2,
        normalize: !a.unnormalized,
        ..a.quadrature.options()
    };
    let mut manifest = RunManifest::new("simulate", Some(&a.config));
    manifest.inputs.push(a.config.clone());
    manifest.quadrature = Some(a.quadrature.record());

    let out = synthesize_image(&cfg, &opts)?;
    let img = &out.image;
    write_image(&mut manifest, &dir, &a.name, img.width, img.height, &img.data)?;
    let orders: serde_json::Map<String, serde_json::Value> =
        out.order_mass.iter().map(|(j, m)| (j.to_string(), json!(m))).collect();
    let summary = json!({
        "width_px": img.width,
        "height_px": img.height,
        "normalized": img.normalized,
        "admitted": out.admitted,
        "on_window": out.on_window,
        "transmitted": out.transmitted,
        "detected": out.detected,
        "odd_even_ratio": out.odd_even_ratio(),
        "odd_fraction": out.odd_fraction(),
        "order_mass": orders,
    });
    manifest.write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    log.info(
        "simulated image",
        json!({ "odd_even_ratio": out.odd_even_ratio(), "detected": out.detected }),
    );
    manifest.finish(&dir)?;
    Ok(())
}
