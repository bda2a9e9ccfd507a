//! Two-stage fit of simulated to measured images.
//!
//! Stage 1 matches the horizontally integrated profile by varying the
//! velocity-selection slit height and the velocity shift. Stage 2 fixes
//! those, scans (|α|, σ) on a grid at each candidate grating height and
//! refines the best cell.

mod stage1;
mod stage2;

pub use stage1::{fit_stage1, profile_objective, FitStage1Params, Stage1Bounds, Stage1Grid};
pub use stage2::{cell_rss, fit_stage2, FitStage2Params, HeatmapResult, Stage2Grid, Stage2Result};

use crate::error::{Error, Result};
use crate::imageproc::Raster;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Spacing {
    Linear,
    Log,
}

/// `n` grid values from `lo` to `hi` inclusive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
    pub spacing: Spacing,
}

impl Axis {
    pub fn new(lo: f64, hi: f64, n: usize, spacing: Spacing) -> Result<Axis> {
        let a = Axis { lo, hi, n, spacing };
        a.validate()?;
        Ok(a)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || !self.lo.is_finite() || !self.hi.is_finite() || self.hi < self.lo {
            return Err(Error::Domain(format!("invalid grid {}:{}:{}", self.lo, self.hi, self.n)));
        }
        if self.n > 1 && self.hi == self.lo {
            return Err(Error::Domain(format!("grid of {} points over an empty range", self.n)));
        }
        if self.spacing == Spacing::Log && !(self.lo > 0.0) {
            return Err(Error::Domain(format!("log grid needs a positive lower end, got {}", self.lo)));
        }
        Ok(())
    }

    pub fn values(&self) -> Vec<f64> {
        if self.n == 1 {
            return vec![self.lo];
        }
        let last = (self.n - 1) as f64;
        (0..self.n)
            .map(|i| {
                if i == self.n - 1 {
                    return self.hi;
                }
                let t = i as f64 / last;
                match self.spacing {
                    Spacing::Linear => self.lo + t * (self.hi - self.lo),
                    Spacing::Log => self.lo * (self.hi / self.lo).powf(t),
                }
            })
            .collect()
    }

    /// Value at fractional index `u`, interpolated in the axis' own spacing.
    pub fn at(&self, u: f64) -> f64 {
        if self.n == 1 {
            return self.lo;
        }
        let t = u / (self.n - 1) as f64;
        match self.spacing {
            Spacing::Linear => self.lo + t * (self.hi - self.lo),
            Spacing::Log => self.lo * (self.hi / self.lo).powf(t),
        }
    }
}

/// Row sums of an image, top row first.
pub fn integrate_horizontal(img: &impl Raster) -> Vec<f64> {
    let (w, _) = img.dims();
    img.values().chunks(w).map(|r| r.iter().sum()).collect()
}

const INV_PHI: f64 = 0.618_033_988_749_894_8;

/// Golden-section search for a minimum of `f` on [a, b], stopping when the
/// bracket is narrower than `tol`. Returns the best point evaluated.
pub(crate) fn golden_section(
    mut f: impl FnMut(f64) -> Result<f64>,
    mut a: f64,
    mut b: f64,
    tol: f64,
) -> Result<(f64, f64, usize)> {
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    let mut evals = 2;
    while b - a > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d)?;
        }
        evals += 1;
    }
    Ok(if fc <= fd { (c, fc, evals) } else { (d, fd, evals) })
}
