use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::Args;
use duv_diffraction::imageproc::{Pipeline, Provenance, RawImage, Rect};
use duv_diffraction::io::{read_mask, read_raster};
use duv_diffraction::Error;
use serde_json::json;

use super::write_image;
use crate::report::{Log, RunManifest};
use crate::{args, create_dir};

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    /// Dark-subtracted camera frame (.pgm or .csv).
    #[arg(long)]
    raw: PathBuf,
    /// Bright frame(s) to subtract; several are averaged.
    #[arg(long)]
    bright: Vec<PathBuf>,
    /// Region kept after rotation, col:row:width:height in pixels.
    #[arg(long, value_parser = args::rect)]
    crop: Rect,
    /// Rotation angle, counter-clockwise positive.
    #[arg(long, value_parser = args::angle, default_value = "0.4deg", allow_hyphen_values = true)]
    theta: f64,
    /// Quantile winsorised at each tail.
    #[arg(long, value_parser = args::fraction, default_value = "1e-5")]
    quantile: f64,
    /// Graymap of pixels used for the background plane (0 = unused);
    /// defaults to everything outside the crop.
    #[arg(long)]
    plane_mask: Option<PathBuf>,
    /// Graymap of contaminated pixels to leave out of the plane fit (0 = excluded).
    #[arg(long)]
    exclude: Option<PathBuf>,
    /// Detector pixel pitch recorded with the frames.
    #[arg(long, value_parser = args::length, default_value = "0.33um")]
    pixel_pitch: f64,
    /// Directory for the processed image and manifest.
    #[arg(long)]
    out_dir: PathBuf,
    /// Base name of the image files.
    #[arg(long, default_value = "processed")]
    name: String,
}

fn mask_for(path: &Path, width: usize, height: usize) -> anyhow::Result<Vec<bool>> {
    let (w, h, m) = read_mask(path).with_context(|| format!("reading mask {}", path.display()))?;
    if (w, h) != (width, height) {
        return Err(Error::DimensionMismatch(format!(
            "mask {} is {w}x{h}, image {width}x{height}",
            path.display()
        ))
        .into());
    }
    Ok(m)
}

fn frame(path: &Path, pitch: f64) -> anyhow::Result<RawImage> {
    let g = read_raster(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(RawImage::new(g.width, g.height, pitch, g.data, Provenance::DarkSubtracted)?)
}

pub fn preprocess(a: &PreprocessArgs, log: Log) -> anyhow::Result<()> {
    let dir = create_dir(&a.out_dir)?;
    let mut manifest = RunManifest::new("preprocess", None);
    let raw = frame(&a.raw, a.pixel_pitch)?;
    manifest.inputs.push(a.raw.clone());
    let bright = a
        .bright
        .iter()
        .map(|p| {
            manifest.inputs.push(p.clone());
            frame(p, a.pixel_pitch)
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    let mut pipeline = Pipeline::new(a.crop);
    pipeline.despike_quantile = a.quantile;
    pipeline.theta_deg = a.theta.to_degrees();
    if let Some(p) = &a.plane_mask {
        pipeline.plane_mask = Some(mask_for(p, raw.width, raw.height)?);
        manifest.inputs.push(p.clone());
    }
    if let Some(p) = &a.exclude {
        pipeline.exclude = Some(mask_for(p, raw.width, raw.height)?);
        manifest.inputs.push(p.clone());
    }
    let refs: Vec<&RawImage> = bright.iter().collect();
    let out = pipeline.run(&raw, &refs)?;
    write_image(&mut manifest, &dir, &a.name, out.width, out.height, &out.data)?;
    log.info(
        "preprocessed frame",
        json!({ "width_px": out.width, "height_px": out.height, "bright_frames": bright.len() }),
    );
    manifest.finish(&dir)?;
    Ok(())
}
