use rayon::prelude::*;

use super::stage1::FitStage1Params;
use super::{Axis, Spacing};
use crate::beamline::{prepare, render, PreparedBeam, SimulationOptions};
use crate::config::{ExperimentConfig, GratingSpec, MoleculeSpec};
use crate::error::{Error, Result};
use crate::imageproc::{rss, rss_unchecked, Raster};

/// Scan ranges: |α| (C·m²/V), σ (m²) and the grating heights y₀g (m).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stage2Grid {
    pub alpha: Axis,
    pub sigma: Axis,
    pub y0g: Axis,
    /// Least-squares polish iterations after the quadratic step; 0 keeps
    /// the quadratic estimate.
    pub max_iterations: usize,
}

impl Stage2Grid {
    pub fn new(alpha: Axis, sigma: Axis, y0g: Axis) -> Stage2Grid {
        Stage2Grid {
            alpha,
            sigma,
            y0g,
            max_iterations: 30,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitStage2Params {
    pub y0g: f64,
    /// Magnitude of the polarisability (C·m²/V).
    pub alpha: f64,
    pub sigma: f64,
}

/// ln RSS over the (|α|, σ) grid at one grating height.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapResult {
    pub y0g: f64,
    pub alpha: Vec<f64>,
    pub sigma: Vec<f64>,
    /// Row-major: one row per |α| value, one column per σ value.
    pub ln_rss: Vec<f64>,
    /// (|α| index, σ index) of the smallest entry, lowest index on ties.
    pub argmin: (usize, usize),
    /// More than one cell attains the minimum.
    pub tie: bool,
}

impl HeatmapResult {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.ln_rss[i * self.sigma.len() + j]
    }

    /// Header row of σ values, then one row per |α| value led by that value.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("abs_alpha_Cm2_V\\sigma_m2");
        for s in &self.sigma {
            out.push(',');
            out.push_str(&format!("{s:e}"));
        }
        out.push('\n');
        for (i, a) in self.alpha.iter().enumerate() {
            out.push_str(&format!("{a:e}"));
            for j in 0..self.sigma.len() {
                out.push(',');
                out.push_str(&format!("{:e}", self.get(i, j)));
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage2Result {
    /// Refined parameters, or the grid optimum when refinement did not
    /// lower the RSS.
    pub params: FitStage2Params,
    pub rss: f64,
    pub grid_params: FitStage2Params,
    pub grid_rss: f64,
    pub refined: bool,
    /// Heatmap at the best grating height.
    pub heatmap: HeatmapResult,
    /// (y₀g, smallest RSS over the (|α|, σ) grid) per candidate height.
    pub candidates: Vec<(f64, f64)>,
}

/// ln of an RSS value, floored so exact matches stay finite.
pub fn ln_rss(v: f64) -> f64 {
    v.max(f64::MIN_POSITIVE).ln()
}

fn with_params(mol: &MoleculeSpec, grat: &GratingSpec, p: FitStage2Params) -> (MoleculeSpec, GratingSpec) {
    let mut m = mol.clone();
    m.alpha_duv = p.alpha;
    m.sigma_duv = p.sigma;
    let mut g = grat.clone();
    g.height = p.y0g;
    (m, g)
}

fn simulate(prep: &PreparedBeam, cfg: &ExperimentConfig, opts: &SimulationOptions, p: FitStage2Params) -> Result<Vec<f64>> {
    let (m, g) = with_params(&cfg.molecule, &cfg.grating, p);
    let out = render(prep, &m, &g, &SimulationOptions { normalize: true, ..*opts }).map_err(|e| {
        Error::Numerical(format!(
            "simulation failed at y0g = {:e} m, |alpha| = {:e} C m2/V, sigma = {:e} m2: {e}",
            p.y0g, p.alpha, p.sigma
        ))
    })?;
    Ok(out.image.data)
}

/// RSS between the normalised simulation at `p` and `target`.
pub fn cell_rss(
    prep: &PreparedBeam,
    cfg: &ExperimentConfig,
    opts: &SimulationOptions,
    target: &[f64],
    mask: Option<&[bool]>,
    p: FitStage2Params,
) -> Result<f64> {
    let v = rss_unchecked(&simulate(prep, cfg, opts, p)?, target, mask);
    if !v.is_finite() {
        return Err(Error::Numerical(format!(
            "non-finite RSS at y0g = {:e} m, |alpha| = {:e} C m2/V, sigma = {:e} m2",
            p.y0g, p.alpha, p.sigma
        )));
    }
    Ok(v)
}

/// Pixel residuals simulation − target, zero where masked out.
fn cell_residuals(
    prep: &PreparedBeam,
    cfg: &ExperimentConfig,
    opts: &SimulationOptions,
    target: &[f64],
    mask: Option<&[bool]>,
    p: FitStage2Params,
) -> Result<Vec<f64>> {
    let mut sim = simulate(prep, cfg, opts, p)?;
    for (i, (s, t)) in sim.iter_mut().zip(target).enumerate() {
        *s = if mask.map_or(true, |m| m[i]) { *s - t } else { 0.0 };
    }
    Ok(sim)
}

/// Least-squares quadratic through a 3×3 neighbourhood sampled at offsets
/// u, v ∈ {−1, 0, 1}; returns its minimum if the fit is convex and the
/// minimum lies inside the neighbourhood.
pub(crate) fn quadratic_minimum(z: &[[f64; 3]; 3]) -> Option<(f64, f64)> {
    // Basis 1, u, v, u², v², uv; normal equations solved directly.
    let mut ata = [[0.0; 6]; 6];
    let mut atb = [0.0; 6];
    for (a, row) in z.iter().enumerate() {
        for (b, &val) in row.iter().enumerate() {
            let (u, v) = (a as f64 - 1.0, b as f64 - 1.0);
            let phi = [1.0, u, v, u * u, v * v, u * v];
            for i in 0..6 {
                atb[i] += phi[i] * val;
                for j in 0..6 {
                    ata[i][j] += phi[i] * phi[j];
                }
            }
        }
    }
    let c = solve(ata, atb)?;
    let (b, cc, d, e, f) = (c[1], c[2], c[3], c[4], c[5]);
    let det = 4.0 * d * e - f * f;
    if !(d > 0.0 && det > 0.0) {
        return None;
    }
    let u = (-2.0 * e * b + f * cc) / det;
    let v = (-2.0 * d * cc + f * b) / det;
    (u.abs() <= 1.0 && v.abs() <= 1.0).then_some((u, v))
}

/// Gaussian elimination with partial pivoting; `None` when singular.
fn solve<const N: usize>(mut a: [[f64; N]; N], mut b: [f64; N]) -> Option<[f64; N]> {
    let scale = a.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    if !(scale > 0.0) || !scale.is_finite() {
        return None;
    }
    for col in 0..N {
        let piv = (col..N).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() <= 1e-14 * scale {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..N {
            let f = a[r][col] / a[col][col];
            for k in col..N {
                a[r][k] -= f * a[col][k];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = [0.0; N];
    for r in (0..N).rev() {
        let s: f64 = (r + 1..N).map(|k| a[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Some(x)
}

/// Vertex offset of the parabola through (−1, a), (0, b), (1, c), if convex.
fn parabola_vertex(a: f64, b: f64, c: f64) -> Option<f64> {
    let den = a - 2.0 * b + c;
    (den > 0.0).then(|| (0.5 * (a - c) / den).clamp(-1.0, 1.0))
}

/// Fractional grid index of `value` on `axis`, clamped to the grid.
fn axis_index(axis: &Axis, value: f64, fallback: usize) -> f64 {
    if axis.n < 2 {
        return 0.0;
    }
    let t = match axis.spacing {
        Spacing::Linear => (value - axis.lo) / (axis.hi - axis.lo),
        Spacing::Log => (value / axis.lo).ln() / (axis.hi / axis.lo).ln(),
    };
    let u = t * (axis.n - 1) as f64;
    if u.is_finite() {
        u.clamp(0.0, (axis.n - 1) as f64)
    } else {
        fallback as f64
    }
}

/// Damped Gauss-Newton (Levenberg-Marquardt) on a residual vector over
/// fractional-index coordinates confined to the box [0, upper]. Jacobian
/// columns are forward differences of `FD_STEP` cells. Axes with
/// `upper == 0` stay fixed. Returns the best point and its sum of squares.
fn levenberg_marquardt(
    mut residuals: impl FnMut(&[f64; 3]) -> Result<Vec<f64>>,
    mut x: [f64; 3],
    upper: [f64; 3],
    iterations: usize,
) -> Result<([f64; 3], f64)> {
    const FD_STEP: f64 = 1e-3;
    let sumsq = |r: &[f64]| r.iter().map(|v| v * v).sum::<f64>();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut r = residuals(&x)?;
    let mut f = sumsq(&r);
    let mut lambda = 1e-3;
    for _ in 0..iterations {
        let mut cols: [Vec<f64>; 3] = Default::default();
        for k in 0..3 {
            if upper[k] <= 0.0 {
                continue;
            }
            let h = if x[k] + FD_STEP <= upper[k] { FD_STEP } else { -FD_STEP };
            let mut xp = x;
            xp[k] += h;
            cols[k] = residuals(&xp)?.iter().zip(&r).map(|(a, b)| (a - b) / h).collect();
        }
        let mut jtj = [[0.0; 3]; 3];
        let mut g = [0.0; 3];
        for i in 0..3 {
            if cols[i].is_empty() {
                jtj[i][i] = 1.0;
                continue;
            }
            g[i] = dot(&cols[i], &r);
            for j in 0..3 {
                if !cols[j].is_empty() {
                    jtj[i][j] = dot(&cols[i], &cols[j]);
                }
            }
        }
        let mut accepted = None;
        for _ in 0..16 {
            let mut m = jtj;
            for i in 0..3 {
                m[i][i] *= 1.0 + lambda;
            }
            let Some(d) = solve(m, g.map(|v| -v)) else {
                lambda *= 10.0;
                continue;
            };
            let mut xn = x;
            for k in 0..3 {
                xn[k] = (x[k] + d[k]).clamp(0.0, upper[k].max(0.0));
            }
            if xn == x {
                break;
            }
            let rn = residuals(&xn)?;
            let fn_ = sumsq(&rn);
            if fn_ < f {
                lambda = (lambda / 10.0).max(1e-12);
                accepted = Some((xn, rn, fn_));
                break;
            }
            lambda *= 10.0;
        }
        let Some((xn, rn, fn_)) = accepted else { break };
        let moved = (0..3).map(|k| (xn[k] - x[k]).abs()).fold(0.0, f64::max);
        let gain = f - fn_;
        x = xn;
        r = rn;
        f = fn_;
        if moved < 1e-9 || gain <= 1e-12 * f {
            break;
        }
    }
    Ok((x, f))
}

/// Grid scan over (|α|, σ) at each candidate grating height, then local
/// refinement of the best cell. `target` must be normalised and match the
/// detector; `mask` excludes pixels (false) from the RSS.
pub fn fit_stage2(
    target: &impl Raster,
    cfg: &ExperimentConfig,
    stage1: &FitStage1Params,
    opts: &SimulationOptions,
    grid: &Stage2Grid,
    mask: Option<&[bool]>,
) -> Result<Stage2Result> {
    let cfg = stage1.apply(cfg);
    let (w, h) = target.dims();
    if (w, h) != (cfg.detector.width_px, cfg.detector.height_px) {
        return Err(Error::DimensionMismatch(format!(
            "target is {w}x{h}, detector {}x{}",
            cfg.detector.width_px, cfg.detector.height_px
        )));
    }
    // Validates normalisation and the mask size.
    rss(target, target, mask)?;
    grid.alpha.validate()?;
    grid.sigma.validate()?;
    grid.y0g.validate()?;
    if grid.sigma.lo < 0.0 || grid.alpha.lo < 0.0 {
        return Err(Error::Domain("|alpha| and sigma grids must be non-negative".into()));
    }
    let tv = target.values();
    let prep = prepare(&cfg, opts)?;
    let (alphas, sigmas, heights) = (grid.alpha.values(), grid.sigma.values(), grid.y0g.values());
    let (na, ns) = (alphas.len(), sigmas.len());
    let per = na * ns;
    let values: Vec<f64> = (0..heights.len() * per)
        .into_par_iter()
        .map(|k| {
            let p = FitStage2Params {
                y0g: heights[k / per],
                alpha: alphas[(k % per) / ns],
                sigma: sigmas[k % ns],
            };
            cell_rss(&prep, &cfg, opts, tv, mask, p)
        })
        .collect::<Result<_>>()?;

    let argmin = |s: &[f64]| {
        let mut best = 0;
        for (k, v) in s.iter().enumerate() {
            if *v < s[best] {
                best = k;
            }
        }
        best
    };
    let candidates: Vec<(f64, f64)> = heights
        .iter()
        .enumerate()
        .map(|(c, &y)| (y, values[c * per + argmin(&values[c * per..(c + 1) * per])]))
        .collect();
    let kc = argmin(&candidates.iter().map(|c| c.1).collect::<Vec<_>>());
    let block = &values[kc * per..(kc + 1) * per];
    let best = argmin(block);
    let (bi, bj) = (best / ns, best % ns);
    let min = block[best];
    let tie = block.iter().filter(|&&v| v <= min * (1.0 + 1e-12)).count() > 1;
    let heatmap = HeatmapResult {
        y0g: heights[kc],
        alpha: alphas.clone(),
        sigma: sigmas.clone(),
        ln_rss: block.iter().map(|&v| ln_rss(v)).collect(),
        argmin: (bi, bj),
        tie,
    };
    let grid_params = FitStage2Params {
        y0g: heights[kc],
        alpha: alphas[bi],
        sigma: sigmas[bj],
    };

    let mut refined_p = grid_params;
    let mut moved = false;
    if !tie && bi > 0 && bi + 1 < na && bj > 0 && bj + 1 < ns {
        let mut z = [[0.0; 3]; 3];
        for (a, row) in z.iter_mut().enumerate() {
            for (b, cell) in row.iter_mut().enumerate() {
                *cell = block[(bi + a - 1) * ns + (bj + b - 1)];
            }
        }
        if let Some((u, v)) = quadratic_minimum(&z) {
            refined_p.alpha = grid.alpha.at(bi as f64 + u);
            refined_p.sigma = grid.sigma.at(bj as f64 + v);
            moved = true;
        }
    }
    if kc > 0 && kc + 1 < heights.len() {
        if let Some(d) = parabola_vertex(candidates[kc - 1].1, candidates[kc].1, candidates[kc + 1].1) {
            refined_p.y0g = grid.y0g.at(kc as f64 + d);
            moved = true;
        }
    }
    let mut best_p = grid_params;
    let mut best_rss = min;
    if moved {
        let r = cell_rss(&prep, &cfg, opts, tv, mask, refined_p)?;
        if r < best_rss {
            best_p = refined_p;
            best_rss = r;
        }
    }
    if !tie && grid.max_iterations > 0 {
        let axes = [grid.y0g, grid.alpha, grid.sigma];
        let x0 = [
            axis_index(&grid.y0g, best_p.y0g, kc),
            axis_index(&grid.alpha, best_p.alpha, bi),
            axis_index(&grid.sigma, best_p.sigma, bj),
        ];
        let upper = axes.map(|a| a.n.saturating_sub(1) as f64);
        let point = |x: &[f64; 3]| FitStage2Params {
            y0g: axes[0].at(x[0]),
            alpha: axes[1].at(x[1]),
            sigma: axes[2].at(x[2]),
        };
        let (x, _) = levenberg_marquardt(
            |x| cell_residuals(&prep, &cfg, opts, tv, mask, point(x)),
            x0,
            upper,
            grid.max_iterations,
        )?;
        let p = point(&x);
        if p != best_p {
            // Reported through the same reduction as the grid cells.
            let r = cell_rss(&prep, &cfg, opts, tv, mask, p)?;
            if r < best_rss {
                best_rss = r;
                best_p = p;
            }
        }
    }
    let refined = best_p != grid_params;
    Ok(Stage2Result {
        params: best_p,
        rss: best_rss,
        grid_params,
        grid_rss: min,
        refined,
        heatmap,
        candidates,
    })
}
