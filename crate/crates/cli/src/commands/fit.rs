use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::Context;
use clap::Args;
use duv_diffraction::beamline::synthesize_image;
use duv_diffraction::constants::FOUR_PI_EPS0;
use duv_diffraction::fitting::{
    fit_stage1, fit_stage2, integrate_horizontal, FitStage1Params, Stage1Bounds, Stage1Grid, Stage2Grid,
};
use duv_diffraction::imageproc::{normalize_unity_image, rss, vertical_smooth_image, Provenance, RawImage};
use duv_diffraction::io::{read_mask, read_raster};
use duv_diffraction::Error;
use serde_json::{json, Value};

use super::write_image;
use crate::args::{self, Range};
use crate::report::{Log, RunManifest};
use crate::{create_dir, load_config, QuadratureArgs, UsageError};

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Experiment configuration file; supplies every parameter not fitted.
    config: PathBuf,
    /// Preprocessed image with the detector's dimensions (.pgm or .csv).
    #[arg(long)]
    image: PathBuf,
    /// Half-width in rows of the vertical box filter applied to the image
    /// (0 leaves it unsmoothed).
    #[arg(long)]
    smooth_rows: usize,
    /// Graymap of pixels left out of the image RSS (0 = excluded).
    #[arg(long)]
    mask: Option<PathBuf>,
    /// Velocity-selection slit height scan, lo:hi:n (e.g. -19.3um:-13.9um:9).
    #[arg(long, value_parser = args::length_range, allow_hyphen_values = true)]
    y02: Option<Range>,
    /// Velocity shift scan, lo:hi:n (e.g. 62mps:94mps:9).
    #[arg(long, value_parser = args::velocity_range, allow_hyphen_values = true)]
    v_shift: Option<Range>,
    /// |alpha| grid, lo:hi:n[:log|lin] (e.g. 0.5A3_4pie0:4A3_4pie0:21:log).
    #[arg(long, value_parser = args::polarizability_range)]
    alpha: Option<Range>,
    /// Absorption cross-section grid, lo:hi:n[:log|lin].
    #[arg(long, value_parser = args::area_range)]
    sigma: Option<Range>,
    /// Candidate grating heights, lo:hi:n.
    #[arg(long, value_parser = args::length_range, allow_hyphen_values = true)]
    y0g: Option<Range>,
    /// Golden-section stop: coarse stage-1 step divided by this.
    #[arg(long, default_value_t = 16)]
    refine_divisions: usize,
    /// Stage-1 coordinate-descent sweeps.
    #[arg(long, default_value_t = 2)]
    sweeps: usize,
    /// Least-squares polish iterations after the stage-2 grid (0 disables).
    #[arg(long, default_value_t = 30)]
    max_iterations: usize,
    /// Skip both stages and simulate the configuration as given.
    #[arg(long, conflicts_with_all = ["y02", "v_shift", "alpha", "sigma", "y0g"])]
    manual_params: bool,
    #[command(flatten)]
    quadrature: QuadratureArgs,
    /// Directory for the heatmap, best fit, report and manifest.
    #[arg(long)]
    out_dir: PathBuf,
}

fn a3(alpha: f64) -> f64 {
    alpha / (FOUR_PI_EPS0 * 1e-30)
}

fn stage1_json(p: &FitStage1Params) -> Value {
    json!({
        "y02_m": p.y02,
        "v_shift_mps": p.v_shift,
        "objective": p.objective,
        "resolution": [p.resolution.0, p.resolution.1],
        "at_boundary": p.at_boundary,
        "degenerate": p.degenerate,
        "evaluations": p.evaluations,
    })
}

pub fn fit(a: &FitArgs, log: Log) -> anyhow::Result<()> {
    let cfg = load_config(&a.config)?;
    let mut manifest = RunManifest::new("fit", Some(&a.config));
    manifest.inputs = vec![a.config.clone(), a.image.clone()];
    manifest.quadrature = Some(a.quadrature.record());
    let opts = a.quadrature.options();

    let grid = read_raster(&a.image).with_context(|| format!("reading {}", a.image.display()))?;
    let img = RawImage::from_grid(grid, &cfg.detector, Provenance::Processed)?;
    let target = normalize_unity_image(&vertical_smooth_image(&img, a.smooth_rows))?;
    let mask = match &a.mask {
        Some(p) => {
            let (w, h, m) = read_mask(p).with_context(|| format!("reading mask {}", p.display()))?;
            if (w, h) != (target.width, target.height) {
                return Err(Error::DimensionMismatch(format!(
                    "mask is {w}x{h}, image {}x{}",
                    target.width, target.height
                ))
                .into());
            }
            manifest.inputs.push(p.clone());
            Some(m)
        }
        None => None,
    };
    let mut warnings: Vec<String> = Vec::new();
    let dir = create_dir(&a.out_dir)?;

    if a.manual_params {
        let sim = synthesize_image(&cfg, &opts)?.image;
        let value = rss(&sim, &target, mask.as_deref())?;
        write_image(&mut manifest, &dir, "best_fit", sim.width, sim.height, &sim.data)?;
        let report = json!({
            "mode": "manual",
            "rss": value,
            "ln_rss": value.ln(),
            "params": {
                "y02_m": cfg.geometry.slit2_height,
                "v_shift_mps": cfg.source.v_shift,
                "y0g_m": cfg.grating.height,
                "abs_alpha_Cm2_V": cfg.molecule.alpha_duv.abs(),
                "sigma_m2": cfg.molecule.sigma_duv,
            },
            "warnings": warnings,
        });
        manifest.write(dir.join("fit_report.json"), serde_json::to_string_pretty(&report)? + "\n")?;
        log.info("manual parameters simulated", json!({ "rss": value }));
        manifest.finish(&dir)?;
        return Ok(());
    }

    let (alpha, sigma, y0g) = match (a.alpha, a.sigma, a.y0g) {
        (Some(x), Some(s), Some(y)) => (x, s, y),
        _ => {
            return Err(UsageError("--alpha, --sigma and --y0g are required unless --manual-params is given".into()).into())
        }
    };
    let stage1 = match (a.y02, a.v_shift) {
        (Some(y), Some(v)) => {
            let profile = integrate_horizontal(&target);
            let grid = Stage1Grid {
                n_y02: y.n,
                n_v_shift: v.n,
                refine_divisions: a.refine_divisions,
                sweeps: a.sweeps,
            };
            let bounds = Stage1Bounds {
                y02: y.bounds(),
                v_shift: v.bounds(),
            };
            let p = fit_stage1(&profile, &cfg, &opts, bounds, grid)?;
            if p.at_boundary {
                warnings.push("stage-1 optimum lies on the boundary of the search box".into());
            }
            if p.degenerate {
                warnings.push("stage-1 objective is flat; slit height and velocity shift are undetermined".into());
            }
            log.info("stage 1 done", stage1_json(&p));
            Some(p)
        }
        (None, None) => {
            warnings.push("stage 1 skipped; slit height and velocity shift taken from the config".into());
            None
        }
        _ => return Err(UsageError("--y02 and --v-shift must be given together".into()).into()),
    };
    let fixed = stage1.clone().unwrap_or(FitStage1Params {
        y02: cfg.geometry.slit2_height,
        v_shift: cfg.source.v_shift,
        objective: f64::NAN,
        resolution: (0.0, 0.0),
        at_boundary: false,
        degenerate: false,
        evaluations: 0,
    });

    let mut grid = Stage2Grid::new(
        alpha.axis().map_err(UsageError)?,
        sigma.axis().map_err(UsageError)?,
        y0g.axis().map_err(UsageError)?,
    );
    grid.max_iterations = a.max_iterations;
    let s2 = fit_stage2(&target, &cfg, &fixed, &opts, &grid, mask.as_deref())?;
    let hm = &s2.heatmap;
    if hm.tie {
        warnings.push("heatmap minimum is shared by several cells; lowest index reported".into());
    }
    let (i, j) = hm.argmin;
    if (i == 0 || i + 1 == hm.alpha.len()) && hm.alpha.len() > 1 || (j == 0 || j + 1 == hm.sigma.len()) && hm.sigma.len() > 1
    {
        warnings.push("heatmap minimum lies on the edge of the (|alpha|, sigma) grid".into());
    }
    for w in &warnings {
        log.warn(w, json!({}));
    }

    manifest.write(dir.join("heatmap.csv"), hm.to_csv())?;
    let mut sidecar = String::new();
    writeln!(sidecar, "y0g_m = {:e}", hm.y0g)?;
    writeln!(sidecar, "argmin_index = {i} {j}")?;
    writeln!(sidecar, "abs_alpha_Cm2_V = {:e}", hm.alpha[i])?;
    writeln!(sidecar, "abs_alpha_A3 = {}", a3(hm.alpha[i]))?;
    writeln!(sidecar, "sigma_m2 = {:e}", hm.sigma[j])?;
    writeln!(sidecar, "ln_rss = {}", hm.get(i, j))?;
    writeln!(sidecar, "tie = {}", hm.tie)?;
    manifest.write(dir.join("heatmap_argmin.txt"), sidecar)?;

    let mut best = fixed.apply(&cfg);
    best.grating.height = s2.params.y0g;
    best.molecule.alpha_duv = s2.params.alpha;
    best.molecule.sigma_duv = s2.params.sigma;
    let sim = synthesize_image(&best, &opts)?.image;
    write_image(&mut manifest, &dir, "best_fit", sim.width, sim.height, &sim.data)?;
    manifest.write(dir.join("best_fit.cfg"), best.to_config_string())?;

    let report = json!({
        "mode": "fit",
        "stage1": stage1.as_ref().map(stage1_json),
        "stage2": {
            "y0g_m": s2.params.y0g,
            "abs_alpha_Cm2_V": s2.params.alpha,
            "abs_alpha_A3": a3(s2.params.alpha),
            "sigma_m2": s2.params.sigma,
            "rss": s2.rss,
            "ln_rss": s2.rss.max(f64::MIN_POSITIVE).ln(),
            "refined": s2.refined,
            "grid": {
                "y0g_m": s2.grid_params.y0g,
                "abs_alpha_Cm2_V": s2.grid_params.alpha,
                "sigma_m2": s2.grid_params.sigma,
                "rss": s2.grid_rss,
                "argmin_index": [i, j],
                "tie": hm.tie,
            },
            "candidates": s2.candidates.iter().map(|(y, r)| json!({ "y0g_m": y, "rss": r })).collect::<Vec<_>>(),
        },
        "warnings": warnings,
    });
    manifest.write(dir.join("fit_report.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    log.info(
        "stage 2 done",
        json!({ "abs_alpha_A3": a3(s2.params.alpha), "sigma_m2": s2.params.sigma, "y0g_m": s2.params.y0g, "rss": s2.rss }),
    );
    manifest.finish(&dir)?;
    Ok(())
}
