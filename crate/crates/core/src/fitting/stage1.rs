use rayon::prelude::*;

use super::golden_section;
use super::stage2::quadratic_minimum;
use crate::beamline::{prepare, render_profile, SimulationOptions};
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stage1Bounds {
    /// Velocity-selection slit height range (m).
    pub y02: (f64, f64),
    /// Velocity shift range (m/s).
    pub v_shift: (f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Stage1Grid {
    pub n_y02: usize,
    pub n_v_shift: usize,
    /// Golden-section searches stop once the bracket is narrower than the
    /// coarse step divided by this.
    pub refine_divisions: usize,
    pub sweeps: usize,
}

impl Default for Stage1Grid {
    fn default() -> Self {
        Stage1Grid {
            n_y02: 9,
            n_v_shift: 9,
            refine_divisions: 16,
            sweeps: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitStage1Params {
    pub y02: f64,
    pub v_shift: f64,
    /// Sum of squared profile residuals at the optimum.
    pub objective: f64,
    /// Refinement cell (y₀2, v_shift): the final golden-section tolerance.
    pub resolution: (f64, f64),
    /// The optimum sits on a bound of the search box.
    pub at_boundary: bool,
    /// The target or the objective carries no information about the
    /// parameters.
    pub degenerate: bool,
    pub evaluations: usize,
}

impl FitStage1Params {
    /// `cfg` with the fitted slit height and velocity shift.
    pub fn apply(&self, cfg: &ExperimentConfig) -> ExperimentConfig {
        let mut out = cfg.clone();
        out.geometry.slit2_height = self.y02;
        out.source.v_shift = self.v_shift;
        out
    }
}

/// Sum of squared residuals between the normalised simulated profile at
/// (y₀2, v_shift) and `target`. Configurations that put nothing on the
/// detector score +∞.
pub fn profile_objective(
    cfg: &ExperimentConfig,
    opts: &SimulationOptions,
    target: &[f64],
    y02: f64,
    v_shift: f64,
) -> Result<f64> {
    let mut trial = cfg.clone();
    trial.geometry.slit2_height = y02;
    trial.source.v_shift = v_shift;
    let prep = match prepare(&trial, opts) {
        Ok(p) => p,
        Err(Error::EmptyImage(_)) => return Ok(f64::INFINITY),
        Err(e) => return Err(e),
    };
    let profile = render_profile(&prep, &trial.molecule, &trial.grating, opts)?;
    let total: f64 = profile.iter().sum();
    if !(total > 0.0) {
        return Ok(f64::INFINITY);
    }
    let obj: f64 = profile.iter().zip(target).map(|(p, t)| (p / total - t).powi(2)).sum();
    if !obj.is_finite() {
        return Err(Error::Numerical(format!(
            "non-finite profile objective at y02 = {y02:e} m, v_shift = {v_shift} m/s"
        )));
    }
    Ok(obj)
}

fn step(range: (f64, f64), n: usize) -> f64 {
    if n > 1 {
        (range.1 - range.0) / (n - 1) as f64
    } else {
        range.1 - range.0
    }
}

fn grid_value(range: (f64, f64), n: usize, i: usize) -> f64 {
    if n == 1 {
        0.5 * (range.0 + range.1)
    } else if i == n - 1 {
        range.1
    } else {
        range.0 + i as f64 * step(range, n)
    }
}

/// Coarse grid over (y₀2, v_shift) followed by golden-section coordinate
/// descent.
pub fn fit_stage1(
    target: &[f64],
    cfg: &ExperimentConfig,
    opts: &SimulationOptions,
    bounds: Stage1Bounds,
    grid: Stage1Grid,
) -> Result<FitStage1Params> {
    if target.len() != cfg.detector.height_px {
        return Err(Error::DimensionMismatch(format!(
            "profile has {} rows, detector {}",
            target.len(),
            cfg.detector.height_px
        )));
    }
    let total: f64 = target.iter().sum();
    if !((total - 1.0).abs() <= 1e-9) || target.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data(format!("target profile is not normalised (sum {total})")));
    }
    for (name, (lo, hi)) in [("y02", bounds.y02), ("v_shift", bounds.v_shift)] {
        if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::Domain(format!("invalid {name} bounds [{lo}, {hi}]")));
        }
    }
    if bounds.v_shift.0 < 0.0 {
        return Err(Error::Domain("v_shift bounds must be non-negative".into()));
    }
    if grid.n_y02 == 0 || grid.n_v_shift == 0 || grid.refine_divisions == 0 {
        return Err(Error::Domain(format!("invalid stage-1 grid {grid:?}")));
    }

    let cells: Vec<(usize, usize)> = (0..grid.n_y02)
        .flat_map(|i| (0..grid.n_v_shift).map(move |j| (i, j)))
        .collect();
    let values: Vec<f64> = cells
        .par_iter()
        .map(|&(i, j)| {
            profile_objective(
                cfg,
                opts,
                target,
                grid_value(bounds.y02, grid.n_y02, i),
                grid_value(bounds.v_shift, grid.n_v_shift, j),
            )
        })
        .collect::<Result<_>>()?;
    let mut best = 0;
    for (k, v) in values.iter().enumerate() {
        if *v < values[best] {
            best = k;
        }
    }
    if !values[best].is_finite() {
        return Err(Error::EmptyImage("no stage-1 grid point puts molecules on the detector".into()));
    }
    let (bi, bj) = cells[best];
    let mut evaluations = values.len();

    let t_max = target.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let t_min = target.iter().copied().fold(f64::INFINITY, f64::min);
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    let o_max = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let degenerate = t_max - t_min <= 1e-12 * t_max.abs() || o_max - values[best] <= 1e-9 * o_max;

    let steps = (step(bounds.y02, grid.n_y02), step(bounds.v_shift, grid.n_v_shift));
    let resolution = (
        steps.0 / grid.refine_divisions as f64,
        steps.1 / grid.refine_divisions as f64,
    );
    let mut x = [
        grid_value(bounds.y02, grid.n_y02, bi),
        grid_value(bounds.v_shift, grid.n_v_shift, bj),
    ];
    let mut fx = values[best];
    // The two parameters are correlated; start the descent from the minimum
    // of a quadratic through the coarse neighbourhood when it has one.
    if bi > 0 && bi + 1 < grid.n_y02 && bj > 0 && bj + 1 < grid.n_v_shift {
        let mut z = [[0.0; 3]; 3];
        for (a, row) in z.iter_mut().enumerate() {
            for (b, cell) in row.iter_mut().enumerate() {
                *cell = values[(bi + a - 1) * grid.n_v_shift + (bj + b - 1)];
            }
        }
        if z.iter().flatten().all(|v| v.is_finite()) {
            if let Some((u, w)) = quadratic_minimum(&z) {
                let p = [x[0] + u * steps.0, x[1] + w * steps.1];
                let fp = profile_objective(cfg, opts, target, p[0], p[1])?;
                evaluations += 1;
                if fp < fx {
                    x = p;
                    fx = fp;
                }
            }
        }
    }
    let ranges = [bounds.y02, bounds.v_shift];
    let step_of = [steps.0, steps.1];
    let tol = [resolution.0, resolution.1];
    for _ in 0..grid.sweeps {
        for axis in 0..2 {
            let lo = (x[axis] - step_of[axis]).max(ranges[axis].0);
            let hi = (x[axis] + step_of[axis]).min(ranges[axis].1);
            if !(hi - lo > tol[axis]) {
                continue;
            }
            let (cand, fc, n) = golden_section(
                |t| {
                    let mut p = x;
                    p[axis] = t;
                    profile_objective(cfg, opts, target, p[0], p[1])
                },
                lo,
                hi,
                tol[axis],
            )?;
            evaluations += n;
            if fc < fx {
                fx = fc;
                x[axis] = cand;
            }
        }
    }
    let near = |v: f64, r: (f64, f64), t: f64| v - r.0 <= t || r.1 - v <= t;
    let at_boundary = ((bi == 0 || bi == grid.n_y02 - 1) && grid.n_y02 > 1)
        || ((bj == 0 || bj == grid.n_v_shift - 1) && grid.n_v_shift > 1)
        || near(x[0], bounds.y02, resolution.0)
        || near(x[1], bounds.v_shift, resolution.1);
    Ok(FitStage1Params {
        y02: x[0],
        v_shift: x[1],
        objective: fx,
        resolution,
        at_boundary,
        degenerate,
        evaluations,
    })
}
