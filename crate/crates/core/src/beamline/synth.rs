//! Detector image synthesis.
//!
//! Transverse axes are separable: the grating only kicks along x and its
//! strength only depends on y at the grating. For each velocity class the
//! beam is therefore a product of x-rays (undiffracted screen positions)
//! and y-rays (screen row and height at the grating). Geometry is traced
//! once in [`prepare`]; [`render`] then combines it with the kick table for
//! any optical constants, grating height and laser power.

use std::collections::BTreeMap;

use rayon::prelude::*;

use super::image::DetectorImage;
use super::kick_table::KickTable;
use super::velocity::{velocity_grid, VelocityGrid};
use crate::config::{DetectorSpec, ExperimentConfig, GratingSpec, MoleculeSpec};
use crate::constants::HBAR;
use crate::error::{Error, Result};
use crate::grating::{fluorescence_kernel, ChannelOptions, GratingCoupling};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QuadratureSizes {
    /// Nodes across the upstream limiting aperture of each axis.
    pub source_points: usize,
    /// Nodes across the downstream limiting aperture of each axis.
    pub angles: usize,
    pub velocities: usize,
}

impl Default for QuadratureSizes {
    fn default() -> Self {
        QuadratureSizes {
            source_points: 128,
            angles: 16,
            velocities: 64,
        }
    }
}

impl QuadratureSizes {
    pub fn validate(&self) -> Result<()> {
        if self.source_points < 2 || self.angles < 1 || self.velocities < 8 {
            return Err(Error::Domain(format!(
                "quadrature sizes below minimum (source_points >= 2, angles >= 1, velocities >= 8): {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulationOptions {
    pub quadrature: QuadratureSizes,
    /// Simulate a single velocity class instead of the thermal distribution.
    pub fixed_velocity: Option<f64>,
    pub use_slit2: bool,
    pub channels: ChannelOptions,
    pub normalize: bool,
}

impl Default for SimulationOptions {
    fn default() -> Self {
        SimulationOptions {
            quadrature: QuadratureSizes::default(),
            fixed_velocity: None,
            use_slit2: true,
            channels: ChannelOptions::default(),
            normalize: true,
        }
    }
}

/// Contiguous run of column weights.
#[derive(Debug, Clone, Default, PartialEq)]
struct Columns {
    start: usize,
    values: Vec<f64>,
}

impl Columns {
    fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    fn from_positions(positions: &[(f64, f64)], offset: f64, x_left: f64, pitch: f64, width: usize) -> Columns {
        let col = |x: f64| ((x + offset - x_left) / pitch).floor();
        let (lo, hi) = positions
            .iter()
            .map(|&(x, _)| col(x))
            .filter(|&c| c >= 0.0 && c < width as f64)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), c| (lo.min(c), hi.max(c)));
        if lo > hi {
            return Columns::default();
        }
        let start = lo as usize;
        let mut values = vec![0.0; hi as usize - start + 1];
        for &(x, w) in positions {
            let c = col(x);
            if c >= lo && c <= hi {
                values[c as usize - start] += w;
            }
        }
        Columns { start, values }
    }

    /// Discrete convolution with `kernel` centred on offset `half`, clipped
    /// to [0, width).
    fn convolve(&self, kernel: &[f64], half: usize, width: usize) -> Columns {
        if self.values.is_empty() {
            return Columns::default();
        }
        let lo = self.start as i64 - half as i64;
        let len = self.values.len() + kernel.len() - 1;
        let mut full = vec![0.0; len];
        for (i, &a) in self.values.iter().enumerate() {
            for (k, &b) in kernel.iter().enumerate() {
                full[i + k] += a * b;
            }
        }
        let first = (-lo).max(0) as usize;
        let last = ((width as i64 - lo).min(len as i64)).max(0) as usize;
        if first >= last {
            return Columns::default();
        }
        Columns {
            start: (lo + first as i64) as usize,
            values: full[first..last].to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct YRay {
    /// Upper of the two rows sharing the ray by linear weighting, relative
    /// to the class' deposit range, and the share of the lower one.
    slot: usize,
    frac: f64,
    /// Some part of the ray's footprint lies on the window.
    on_window: bool,
    y_grating: f64,
    /// Velocity weight times the y quadrature weight.
    weight: f64,
}

#[derive(Debug, Clone)]
struct VelocityClass {
    v: f64,
    rays: Vec<YRay>,
    /// First row (possibly off the window) of the linear-weighting deposit
    /// and its extent.
    deposit0: i64,
    deposit_rows: usize,
    /// Pixel-integrated footprint of one quadrature cell on the screen,
    /// centred at index `half`.
    footprint: Vec<f64>,
    half: usize,
    /// Rows of the window reached after spreading by the footprint.
    row0: usize,
    rows: usize,
    /// Orders considered: |j| ≤ j_reach.
    j_reach: i64,
    /// Column weights of order j at index j + j_reach.
    orders: Vec<Columns>,
    x_weight: f64,
    /// Screen displacement per ħk_L of kick (m).
    shift: f64,
}

/// Geometry traced for one configuration, independent of the grating's
/// optical constants, height and power.
#[derive(Debug, Clone)]
pub struct PreparedBeam {
    detector: DetectorSpec,
    pub velocities: VelocityGrid,
    classes: Vec<VelocityClass>,
    /// Total ray weight admitted by every aperture.
    pub admitted: f64,
    mass: f64,
    lambda_l: f64,
    lever: f64,
}

impl PreparedBeam {
    pub fn detector(&self) -> &DetectorSpec {
        &self.detector
    }

    /// (velocity, screen displacement per ħk_L of kick) for every class.
    pub fn order_spacing(&self) -> Vec<(f64, f64)> {
        self.classes.iter().map(|c| (c.v, c.shift)).collect()
    }

    /// Highest order each velocity class can deposit.
    pub fn order_reach(&self) -> Vec<i64> {
        self.classes.iter().map(|c| c.j_reach).collect()
    }
}

#[derive(Debug, Clone, Copy)]
struct Aperture {
    name: &'static str,
    z: f64,
    center: f64,
    width: f64,
}

/// A ray along one transverse axis: position p0 at z0, velocity u.
#[derive(Debug, Clone, Copy)]
struct AxisRay {
    z0: f64,
    p0: f64,
    u: f64,
    weight: f64,
}

impl AxisRay {
    fn at(&self, z: f64, accel: f64, vz: f64) -> f64 {
        let t = (z - self.z0) / vz;
        self.p0 + self.u * t + 0.5 * accel * t * t
    }
}

/// Quadrature cell of an axis: widths `da`, `db` on the apertures at
/// `za` < `zb`.
#[derive(Debug, Clone, Copy)]
struct Cell {
    za: f64,
    zb: f64,
    da: f64,
    db: f64,
}

impl Cell {
    /// Widths of the two boxes whose convolution is the cell's footprint
    /// at `z`.
    fn footprint_at(&self, z: f64) -> (f64, f64) {
        let lambda = (z - self.za) / (self.zb - self.za);
        ((1.0 - lambda).abs() * self.da, lambda.abs() * self.db)
    }
}

/// Midpoint grid over the two narrowest apertures; the others are checked.
/// `failures[i]` counts rays stopped by aperture i.
fn axis_rays(
    apertures: &[Aperture],
    n_up: usize,
    n_down: usize,
    accel: f64,
    vz: f64,
    failures: &mut [usize],
) -> (Vec<AxisRay>, Cell) {
    let mut order: Vec<usize> = (0..apertures.len()).collect();
    order.sort_by(|&a, &b| apertures[a].width.total_cmp(&apertures[b].width).then(a.cmp(&b)));
    let (mut ia, mut ib) = (order[0], order[1]);
    if apertures[ia].z > apertures[ib].z {
        std::mem::swap(&mut ia, &mut ib);
    }
    let (a, b) = (apertures[ia], apertures[ib]);
    let rest: Vec<usize> = order[2..].to_vec();
    let da = a.width / n_up as f64;
    let db = b.width / n_down as f64;
    let t = (b.z - a.z) / vz;
    let base = da * db / (b.z - a.z);
    let mut rays = Vec::with_capacity(n_up * n_down);
    for i in 0..n_up {
        let pa = a.center - 0.5 * a.width + (i as f64 + 0.5) * da;
        for k in 0..n_down {
            let pb = b.center - 0.5 * b.width + (k as f64 + 0.5) * db;
            let ray = AxisRay {
                z0: a.z,
                p0: pa,
                u: (pb - pa - 0.5 * accel * t * t) / t,
                weight: base,
            };
            let blocked = rest.iter().find(|&&r| {
                let ap = apertures[r];
                (ray.at(ap.z, accel, vz) - ap.center).abs() > 0.5 * ap.width
            });
            match blocked {
                Some(&r) => failures[r] += 1,
                None => rays.push(ray),
            }
        }
    }
    (
        rays,
        Cell {
            za: a.z,
            zb: b.z,
            da,
            db,
        },
    )
}

/// Cumulative distribution of the sum of two centred uniform variables
/// with full widths `a` and `b`.
fn box_pair_cdf(t: f64, a: f64, b: f64) -> f64 {
    let (a, b) = if a < b { (a, b) } else { (b, a) };
    if b == 0.0 {
        return if t >= 0.0 { 1.0 } else { 0.0 };
    }
    if a <= 1e-9 * b {
        return ((t + 0.5 * b) / b).clamp(0.0, 1.0);
    }
    let r2 = |x: f64| if x > 0.0 { 0.5 * x * x } else { 0.0 };
    let v = (r2(t + 0.5 * (a + b)) - r2(t + 0.5 * (b - a)) - r2(t - 0.5 * (b - a)) + r2(t - 0.5 * (a + b))) / (a * b);
    v.clamp(0.0, 1.0)
}

/// Pixel masses of the footprint box(a) ⊗ box(b), both in pixel units.
fn footprint_kernel(a: f64, b: f64) -> (Vec<f64>, usize) {
    let half = (0.5 * (a + b)).ceil() as usize;
    let k: Vec<f64> = (0..=2 * half)
        .map(|i| {
            let d = i as f64 - half as f64;
            box_pair_cdf(d + 0.5, a, b) - box_pair_cdf(d - 0.5, a, b)
        })
        .collect();
    let total: f64 = k.iter().sum();
    (k.iter().map(|v| v / total).collect(), half)
}

/// Traces the geometry of `cfg`: velocity quadrature, x-rays per order and
/// y-rays per velocity class.
pub fn prepare(cfg: &ExperimentConfig, opts: &SimulationOptions) -> Result<PreparedBeam> {
    let quad = opts.quadrature;
    quad.validate()?;
    let st = cfg.stations()?;
    let geo = &cfg.geometry;
    let det = &cfg.detector;
    let env = &cfg.environment;
    let mass = cfg.molecule.mass;
    let velocities = match opts.fixed_velocity {
        Some(v) => VelocityGrid::single(v)?,
        None => velocity_grid(&cfg.source, &cfg.molecule, quad.velocities)?,
    };

    let mut x_aps = vec![
        Aperture { name: "source", z: st.source, center: 0.0, width: geo.source_size },
        Aperture { name: "slit1", z: st.slit1, center: 0.0, width: geo.slit1_width_x },
    ];
    let mut y_aps = vec![
        Aperture { name: "source", z: st.source, center: 0.0, width: geo.source_size },
        Aperture { name: "slit1", z: st.slit1, center: geo.slit1_height, width: geo.slit1_width_y },
    ];
    if opts.use_slit2 {
        x_aps.push(Aperture { name: "slit2", z: st.slit2, center: 0.0, width: geo.slit2_width_x });
        y_aps.push(Aperture { name: "slit2", z: st.slit2, center: geo.slit2_height, width: geo.slit2_width_y });
    }

    let image = DetectorImage::zeros(det);
    let (x_left, y_top, pitch) = (image.x_left(), image.y_top(), det.pixel_pitch);
    let photon = HBAR * cfg.grating.wavenumber();
    let lever = st.screen - st.grating;

    let traced: Vec<(VelocityClass, f64, Vec<usize>, Vec<usize>)> = velocities
        .nodes
        .par_iter()
        .zip(&velocities.weights)
        .map(|(&v, &wv)| {
            let (ax, ay) = super::trajectory::acceleration(env, v);
            let mut fx = vec![0usize; x_aps.len()];
            let mut fy = vec![0usize; y_aps.len()];
            let (xr, _) = axis_rays(&x_aps, quad.source_points, quad.angles, ax, v, &mut fx);
            let (yr, cell) = axis_rays(&y_aps, quad.source_points, quad.angles, ay, v, &mut fy);
            let xs: Vec<(f64, f64)> = xr.iter().map(|r| (r.at(st.screen, ax, v), r.weight)).collect();
            let x_weight: f64 = xr.iter().map(|r| r.weight).sum();

            let shift = photon / (mass * v) * lever;
            let j_acc = if det.acceptance_angle.is_finite() {
                (det.acceptance_angle * mass * v / photon).floor() as i64
            } else {
                i64::MAX
            };
            let (x_min, x_max) = xs
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(x, _)| (lo.min(x), hi.max(x)));
            let span = det.width_px as f64 * pitch;
            let reach = if xs.is_empty() {
                0
            } else {
                let far = (x_left + span - x_min).abs().max((x_max - x_left).abs());
                (far / shift).ceil() as i64 + 1
            };
            let j_reach = j_acc.min(reach);
            let orders: Vec<Columns> = (-j_reach..=j_reach)
                .map(|j| {
                    Columns::from_positions(&xs, j as f64 * shift, x_left, pitch, det.width_px)
                })
                .collect();

            let (fa, fb) = cell.footprint_at(st.screen);
            let (footprint, half) = footprint_kernel(fa / pitch, fb / pitch);
            let height = det.height_px as i64;
            // Fractional row coordinate: row r is centred at r.
            let placed: Vec<(i64, f64, &AxisRay)> = yr
                .iter()
                .map(|r| {
                    let u = (y_top - r.at(st.screen, ay, v)) / pitch - 0.5;
                    let r0 = u.floor();
                    (r0 as i64, u - r0, r)
                })
                .collect();
            let reach = |r0: i64| r0 + 1 + half as i64 >= 0 && r0 - (half as i64) < height;
            let (lo, hi) = placed
                .iter()
                .filter(|p| reach(p.0))
                .fold((i64::MAX, i64::MIN), |(lo, hi), p| (lo.min(p.0), hi.max(p.0 + 1)));
            let (deposit0, deposit_rows) = if lo > hi { (0, 0) } else { (lo, (hi - lo + 1) as usize) };
            let rays: Vec<YRay> = placed
                .iter()
                .map(|&(r0, frac, r)| YRay {
                    slot: if reach(r0) { (r0 - deposit0) as usize } else { 0 },
                    frac,
                    on_window: reach(r0),
                    y_grating: r.at(st.grating, ay, v),
                    weight: wv * r.weight,
                })
                .collect();
            let admitted = x_weight * rays.iter().map(|r| r.weight).sum::<f64>();
            let (row0, rows) = if deposit_rows == 0 {
                (0, 0)
            } else {
                let first = (deposit0 - half as i64).max(0);
                let last = (deposit0 + deposit_rows as i64 - 1 + half as i64).min(height - 1);
                if first > last {
                    (0, 0)
                } else {
                    (first as usize, (last - first + 1) as usize)
                }
            };
            (
                VelocityClass {
                    v,
                    rays,
                    deposit0,
                    deposit_rows,
                    footprint,
                    half,
                    row0,
                    rows,
                    j_reach,
                    orders,
                    x_weight,
                    shift,
                },
                admitted,
                fx,
                fy,
            )
        })
        .collect();

    let admitted: f64 = traced.iter().map(|t| t.1).sum();
    if !(admitted > 0.0) {
        let mut fx = vec![0usize; x_aps.len()];
        let mut fy = vec![0usize; y_aps.len()];
        for t in &traced {
            fx.iter_mut().zip(&t.2).for_each(|(a, b)| *a += b);
            fy.iter_mut().zip(&t.3).for_each(|(a, b)| *a += b);
        }
        let describe = |aps: &[Aperture], fails: &[usize]| {
            aps.iter()
                .zip(fails)
                .map(|(a, n)| format!("{} blocked {n}", a.name))
                .collect::<Vec<_>>()
                .join(", ")
        };
        let no_x = traced.iter().all(|t| t.0.x_weight == 0.0);
        return Err(Error::EmptyImage(format!(
            "{} axis closed; x: {}; y: {}",
            if no_x { "x" } else { "y" },
            describe(&x_aps, &fx),
            describe(&y_aps, &fy)
        )));
    }
    Ok(PreparedBeam {
        detector: det.clone(),
        velocities,
        classes: traced.into_iter().map(|t| t.0).collect(),
        admitted,
        mass,
        lambda_l: cfg.grating.lambda_l,
        lever,
    })
}

/// An image together with its flux bookkeeping (all in ray-weight units).
#[derive(Debug, Clone)]
pub struct RenderOutput {
    pub image: DetectorImage,
    /// Weight admitted by the apertures.
    pub admitted: f64,
    /// Admitted weight whose undeflected footprint falls on window rows.
    pub on_window: f64,
    /// Part of `on_window` that survives depletion at the grating.
    pub transmitted: f64,
    /// Weight deposited on the detector window before normalisation.
    pub detected: f64,
    /// Deposited weight per diffraction order (fluorescence-smeared mass is
    /// booked under its base order), before normalisation.
    pub order_mass: BTreeMap<i64, f64>,
}

impl RenderOutput {
    /// Deposited mass in odd orders divided by that in even orders.
    pub fn odd_even_ratio(&self) -> f64 {
        let (odd, even) = self.order_mass.iter().fold((0.0, 0.0), |(o, e), (j, m)| {
            if j % 2 != 0 {
                (o + m, e)
            } else {
                (o, e + m)
            }
        });
        odd / even
    }

    /// Deposited mass in odd orders as a fraction of all deposited mass.
    pub fn odd_fraction(&self) -> f64 {
        let odd: f64 = self.order_mass.iter().filter(|(j, _)| *j % 2 != 0).map(|(_, m)| m).sum();
        odd / self.order_mass.values().sum::<f64>()
    }
}

fn order_mass(classes: &[ClassRows]) -> BTreeMap<i64, f64> {
    let mut out = BTreeMap::new();
    for c in classes {
        let totals: Vec<f64> = c.columns.iter().map(Columns::total).collect();
        for (slot, &j) in c.orders.iter().enumerate() {
            let m: f64 = (0..c.rows).map(|r| c.q[r * c.entries + slot]).sum::<f64>() * totals[slot];
            *out.entry(j).or_insert(0.0) += m;
        }
    }
    out
}

/// Kick entries whose probability never exceeds this are not deposited.
const NEGLIGIBLE_ENTRY: f64 = 1e-14;

/// Per-class row weights of every kick entry that can reach the detector.
struct ClassRows {
    row0: usize,
    rows: usize,
    entries: usize,
    /// Row-major [row][entry].
    q: Vec<f64>,
    columns: Vec<Columns>,
    /// Diffraction order of each entry.
    orders: Vec<i64>,
    on_window: f64,
    transmitted: f64,
}

fn kick_table(prep: &PreparedBeam, mol: &MoleculeSpec, grat: &GratingSpec, opts: &SimulationOptions) -> Result<(KickTable, GratingCoupling)> {
    if (grat.lambda_l - prep.lambda_l).abs() > 1e-15 * prep.lambda_l {
        return Err(Error::Domain("laser wavelength differs from the prepared geometry".into()));
    }
    let coupling = GratingCoupling::new(mol, grat);
    let s_max = prep
        .classes
        .iter()
        .flat_map(|c| {
            c.rays
                .iter()
                .filter(|r| r.on_window)
                .map(move |r| coupling.envelope(r.y_grating) / c.v)
        })
        .fold(0.0f64, f64::max);
    let table = KickTable::build(&coupling, mol, s_max, &opts.channels)?;
    Ok((table, coupling))
}

fn class_rows(
    prep: &PreparedBeam,
    mol: &MoleculeSpec,
    table: &KickTable,
    coupling: &GratingCoupling,
) -> Result<Vec<ClassRows>> {
    let det = &prep.detector;
    let pitch = det.pixel_pitch;
    let n_discrete = (2 * table.j_max + 1) as usize;
    prep.classes
        .par_iter()
        .map(|class| {
            // (table entry, columns) pairs this class can deposit.
            let mut picks: Vec<(usize, Columns)> = Vec::new();
            for j in -class.j_reach.min(table.j_max)..=class.j_reach.min(table.j_max) {
                let cols = &class.orders[(j + class.j_reach) as usize];
                if !cols.values.is_empty() && table.peak((j + table.j_max) as usize) > NEGLIGIBLE_ENTRY {
                    picks.push(((j + table.j_max) as usize, cols.clone()));
                }
            }
            let mut kernels: Vec<(u32, Vec<f64>, usize)> = Vec::new();
            for (k, &(j, f)) in table.smear_keys.iter().enumerate() {
                if j.abs() > class.j_reach || table.peak(n_discrete + k) <= NEGLIGIBLE_ENTRY {
                    continue;
                }
                let base = &class.orders[(j + class.j_reach) as usize];
                if base.values.is_empty() {
                    continue;
                }
                if !kernels.iter().any(|kk| kk.0 == f) {
                    let kernel = fluorescence_kernel(f, mol.lambda_f)?;
                    // Momentum per metre of screen displacement.
                    let scale = prep.mass * class.v / prep.lever;
                    let half = (kernel.half_width() / scale / pitch + 0.5).ceil() as usize;
                    let weights = (0..=2 * half)
                        .map(|i| {
                            let d = i as f64 - half as f64;
                            kernel.mass_between((d - 0.5) * pitch * scale, (d + 0.5) * pitch * scale)
                        })
                        .collect();
                    kernels.push((f, weights, half));
                }
                let (_, weights, half) = kernels.iter().find(|kk| kk.0 == f).expect("kernel");
                let cols = base.convolve(weights, *half, det.width_px);
                if !cols.values.is_empty() {
                    picks.push((n_discrete + k, cols));
                }
            }

            let entries = picks.len();
            // Two bookkeeping columns follow the entries: ray weight and
            // surviving ray weight.
            let stride = entries + 2;
            let mut raw = vec![0.0; class.deposit_rows * stride];
            let survival_col = table.entries();
            let pick_entries: Vec<usize> = picks.iter().map(|p| p.0).collect();
            // Table columns to interpolate: the picks, then the survival.
            let columns: Vec<usize> = pick_entries.iter().copied().chain([survival_col]).collect();
            let mut cell = vec![0.0; stride];
            for ray in class.rays.iter().filter(|r| r.on_window) {
                let s = coupling.envelope(ray.y_grating) / class.v;
                let (k0, w) = table.stencil(s);
                let taps = if table.is_constant() { 1 } else { 4 };
                let pts: [&[f64]; 4] = std::array::from_fn(|i| table.point(if i < taps { k0 + i } else { k0 }));
                let p = |e: usize| {
                    let mut v = 0.0;
                    for i in 0..taps {
                        v += w[i] * pts[i][e];
                    }
                    v.max(0.0)
                };
                for (c, &e) in cell.iter_mut().zip(&columns) {
                    *c = ray.weight * p(e);
                }
                // Slot `entries` now holds the survival; move it behind the
                // plain ray weight.
                cell[entries + 1] = cell[entries];
                cell[entries] = ray.weight;
                let (wa, wb) = (1.0 - ray.frac, ray.frac);
                let a = ray.slot * stride;
                for (dst, c) in raw[a..a + stride].iter_mut().zip(&cell) {
                    *dst += wa * c;
                }
                for (dst, c) in raw[a + stride..a + 2 * stride].iter_mut().zip(&cell) {
                    *dst += wb * c;
                }
            }
            // Spread by the cell footprint and clip to the window.
            let mut q = vec![0.0; class.rows * entries];
            let (mut on_window, mut transmitted) = (0.0, 0.0);
            for r in 0..class.rows {
                let row = (class.row0 + r) as i64;
                let dst = &mut q[r * entries..(r + 1) * entries];
                for (k, &kw) in class.footprint.iter().enumerate() {
                    let src = row - class.deposit0 + class.half as i64 - k as i64;
                    if src < 0 || src >= class.deposit_rows as i64 {
                        continue;
                    }
                    let srow = &raw[src as usize * stride..(src as usize + 1) * stride];
                    for (d, v) in dst.iter_mut().zip(srow) {
                        *d += kw * v;
                    }
                    on_window += kw * srow[entries];
                    transmitted += kw * srow[entries + 1];
                }
            }
            on_window *= class.x_weight;
            transmitted *= class.x_weight;
            let orders = pick_entries
                .iter()
                .map(|&e| {
                    if e < n_discrete {
                        e as i64 - table.j_max
                    } else {
                        table.smear_keys[e - n_discrete].0
                    }
                })
                .collect();
            Ok(ClassRows {
                orders,
                row0: class.row0,
                rows: class.rows,
                entries,
                q,
                columns: picks.into_iter().map(|p| p.1).collect(),
                on_window,
                transmitted,
            })
        })
        .collect()
}

/// Renders the detector image for the given molecule and grating.
pub fn render(
    prep: &PreparedBeam,
    mol: &MoleculeSpec,
    grat: &GratingSpec,
    opts: &SimulationOptions,
) -> Result<RenderOutput> {
    let (table, coupling) = kick_table(prep, mol, grat, opts)?;
    let classes = class_rows(prep, mol, &table, &coupling)?;
    let mut image = DetectorImage::zeros(&prep.detector);
    let width = image.width;
    image.data.par_chunks_mut(width).enumerate().for_each(|(r, row)| {
        for c in &classes {
            if r < c.row0 || r >= c.row0 + c.rows {
                continue;
            }
            let q = &c.q[(r - c.row0) * c.entries..(r - c.row0 + 1) * c.entries];
            for (qe, cols) in q.iter().zip(&c.columns) {
                if *qe == 0.0 {
                    continue;
                }
                for (dst, h) in row[cols.start..cols.start + cols.values.len()].iter_mut().zip(&cols.values) {
                    *dst += qe * h;
                }
            }
        }
    });
    let detected = image.sum();
    let transmitted = classes.iter().map(|c| c.transmitted).sum();
    let on_window = classes.iter().map(|c| c.on_window).sum();
    if opts.normalize {
        if !(detected > 0.0) {
            return Err(Error::EmptyImage(format!(
                "admitted weight {:e} but nothing landed on the {}x{} detector window",
                prep.admitted, image.width, image.height
            )));
        }
        image.normalize()?;
    }
    if image.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite pixel in rendered image".into()));
    }
    Ok(RenderOutput {
        image,
        admitted: prep.admitted,
        on_window,
        transmitted,
        detected,
        order_mass: order_mass(&classes),
    })
}

/// Row sums of the unnormalised image, without assembling it.
pub fn render_profile(
    prep: &PreparedBeam,
    mol: &MoleculeSpec,
    grat: &GratingSpec,
    opts: &SimulationOptions,
) -> Result<Vec<f64>> {
    let (table, coupling) = kick_table(prep, mol, grat, opts)?;
    let classes = class_rows(prep, mol, &table, &coupling)?;
    let mut profile = vec![0.0; prep.detector.height_px];
    for c in &classes {
        let totals: Vec<f64> = c.columns.iter().map(Columns::total).collect();
        for r in 0..c.rows {
            let q = &c.q[r * c.entries..(r + 1) * c.entries];
            profile[c.row0 + r] += q.iter().zip(&totals).map(|(a, b)| a * b).sum::<f64>();
        }
    }
    Ok(profile)
}

/// Prepares and renders `cfg` in one go.
pub fn synthesize_image(cfg: &ExperimentConfig, opts: &SimulationOptions) -> Result<RenderOutput> {
    let prep = prepare(cfg, opts)?;
    render(&prep, &cfg.molecule, &cfg.grating, opts)
}
