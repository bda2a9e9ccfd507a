//! Kick distributions tabulated against the grating scale s = G(y)/v_z.
//!
//! For fixed optical constants φ₀ and n₀ are both linear in s, so one
//! table serves every (velocity, height) pair of a render. Exact
//! distributions are computed on Chebyshev–Lobatto nodes in s, resampled
//! onto a uniform grid by barycentric interpolation and looked up with a
//! four-point Lagrange stencil.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::config::MoleculeSpec;
use crate::error::Result;
use crate::grating::{channel_amplitudes, kick_distribution, ChannelOptions, GratingCoupling, KickDistribution};

const UNIFORM_POINTS: usize = 1025;

#[derive(Debug, Clone)]
pub struct KickTable {
    s_max: f64,
    /// Discrete orders −j_max..=j_max occupy entries 0..2·j_max+1.
    pub j_max: i64,
    /// (order, fluorescence count) of the smear entries that follow.
    pub smear_keys: Vec<(i64, u32)>,
    entries: usize,
    points: usize,
    /// Row-major [point][entry]; the last column of each row is the survival.
    values: Vec<f64>,
    /// Largest tabulated value of each entry.
    peaks: Vec<f64>,
    pub photon_momentum: f64,
    pub fluorescence_momentum: f64,
}

fn column_peaks(values: &[f64], stride: usize) -> Vec<f64> {
    let mut peaks = vec![0.0f64; stride];
    for row in values.chunks(stride) {
        for (p, v) in peaks.iter_mut().zip(row) {
            *p = p.max(*v);
        }
    }
    peaks
}

/// Number of Chebyshev nodes for a table reaching (φ₀, n₀) at its upper end.
fn node_count(phi0: f64, n0: f64) -> usize {
    ((3.0 * n0.sqrt() + 1.5 * phi0.abs() + 20.0).ceil() as usize).clamp(24, 200)
}

impl KickTable {
    pub fn build(
        coupling: &GratingCoupling,
        mol: &MoleculeSpec,
        s_max: f64,
        opts: &ChannelOptions,
    ) -> Result<KickTable> {
        let top = coupling.at_scale(s_max);
        let reference = channel_amplitudes(&top, opts)?;
        if s_max <= 0.0 || (top.phi0 == 0.0 && top.n0 == 0.0 && top.n_uniform == 0.0) {
            let kd = kick_distribution(&reference, mol);
            return Ok(Self::constant(&kd));
        }
        let shared = ChannelOptions {
            j_max: Some(reference.j_max),
            m_min: reference.m_max(),
            ..*opts
        };
        let k = node_count(top.phi0, top.n0);
        let nodes: Vec<f64> = (0..k)
            .map(|i| 0.5 * s_max * (1.0 - (std::f64::consts::PI * i as f64 / (k - 1) as f64).cos()))
            .collect();
        let kicks: Vec<KickDistribution> = nodes
            .par_iter()
            .map(|&s| {
                let cs = channel_amplitudes(&coupling.at_scale(s), &shared)?;
                Ok(kick_distribution(&cs, mol))
            })
            .collect::<Result<_>>()?;

        let j_max = reference.j_max as i64;
        let mut keys = BTreeMap::new();
        for kd in &kicks {
            for c in &kd.smear {
                keys.insert((c.order, c.fluorescence), ());
            }
        }
        let smear_keys: Vec<(i64, u32)> = keys.into_keys().collect();
        let entries = (2 * j_max + 1) as usize + smear_keys.len();
        let stride = entries + 1;
        let dense: Vec<Vec<f64>> = kicks
            .iter()
            .map(|kd| {
                let mut row = vec![0.0; stride];
                for (j, p) in kd.discrete_orders() {
                    row[(j + j_max) as usize] = p;
                }
                for c in &kd.smear {
                    let idx = smear_keys.binary_search(&(c.order, c.fluorescence)).expect("key");
                    row[(2 * j_max + 1) as usize + idx] = c.probability;
                }
                row[entries] = kd.survival;
                row
            })
            .collect();

        // Barycentric weights for Lobatto nodes: (−1)^i, halved at both ends.
        let bary: Vec<f64> = (0..k)
            .map(|i| {
                let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
                if i == 0 || i == k - 1 {
                    0.5 * sign
                } else {
                    sign
                }
            })
            .collect();
        let step = s_max / (UNIFORM_POINTS - 1) as f64;
        let rows: Vec<Vec<f64>> = (0..UNIFORM_POINTS)
            .into_par_iter()
            .map(|p| {
                let s = if p == UNIFORM_POINTS - 1 { s_max } else { p as f64 * step };
                if let Some(i) = nodes.iter().position(|&n| n == s) {
                    return dense[i].clone();
                }
                let mut out = vec![0.0; stride];
                let mut denom = 0.0;
                for i in 0..k {
                    let c = bary[i] / (s - nodes[i]);
                    denom += c;
                    for (o, d) in out.iter_mut().zip(&dense[i]) {
                        *o += c * d;
                    }
                }
                for o in &mut out {
                    *o = (*o / denom).max(0.0);
                }
                out
            })
            .collect();
        let kd0 = &kicks[0];
        let values = rows.concat();
        Ok(KickTable {
            s_max,
            j_max,
            smear_keys,
            entries,
            points: UNIFORM_POINTS,
            peaks: column_peaks(&values, stride),
            values,
            photon_momentum: kd0.photon_momentum,
            fluorescence_momentum: kd0.fluorescence_momentum,
        })
    }

    /// A table that returns `kd` for every scale.
    fn constant(kd: &KickDistribution) -> KickTable {
        let j_max = kd.j_max();
        let mut keys: Vec<(i64, u32)> = kd.smear.iter().map(|c| (c.order, c.fluorescence)).collect();
        keys.sort_unstable();
        keys.dedup();
        let entries = (2 * j_max + 1) as usize + keys.len();
        let mut row = vec![0.0; entries + 1];
        for (j, p) in kd.discrete_orders() {
            row[(j + j_max) as usize] = p;
        }
        for c in &kd.smear {
            let idx = keys.binary_search(&(c.order, c.fluorescence)).expect("key");
            row[(2 * j_max + 1) as usize + idx] += c.probability;
        }
        row[entries] = kd.survival;
        KickTable {
            s_max: 0.0,
            j_max,
            smear_keys: keys,
            entries,
            points: 1,
            peaks: row.clone(),
            values: row,
            photon_momentum: kd.photon_momentum,
            fluorescence_momentum: kd.fluorescence_momentum,
        }
    }

    /// Largest tabulated probability of entry `e` over all scales.
    pub fn peak(&self, e: usize) -> f64 {
        self.peaks[e]
    }

    /// Whether the table holds a single distribution for every scale.
    pub fn is_constant(&self) -> bool {
        self.points == 1
    }

    /// Number of probability entries (discrete orders, then smear keys).
    pub fn entries(&self) -> usize {
        self.entries
    }

    pub fn discrete_index(&self, j: i64) -> Option<usize> {
        (j.abs() <= self.j_max).then(|| (j + self.j_max) as usize)
    }

    /// Interpolation stencil for scale `s`: first point and four weights.
    pub fn stencil(&self, s: f64) -> (usize, [f64; 4]) {
        if self.points == 1 {
            return (0, [1.0, 0.0, 0.0, 0.0]);
        }
        let u = (s / self.s_max * (self.points - 1) as f64).clamp(0.0, (self.points - 1) as f64);
        let k0 = (u.floor() as usize).saturating_sub(1).min(self.points - 4);
        let t = u - k0 as f64;
        let w = [
            -(t - 1.0) * (t - 2.0) * (t - 3.0) / 6.0,
            t * (t - 2.0) * (t - 3.0) / 2.0,
            -t * (t - 1.0) * (t - 3.0) / 2.0,
            t * (t - 1.0) * (t - 2.0) / 6.0,
        ];
        (k0, w)
    }

    /// Tabulated row at uniform point `k` (entries followed by survival).
    pub fn point(&self, k: usize) -> &[f64] {
        let stride = self.entries + 1;
        &self.values[k * stride..(k + 1) * stride]
    }

    /// Interpolated probability of entry `e` at scale `s`.
    pub fn value(&self, s: f64, e: usize) -> f64 {
        let (k0, w) = self.stencil(s);
        let taps = if self.points == 1 { 1 } else { 4 };
        (0..taps).map(|i| w[i] * self.point(k0 + i)[e]).sum::<f64>().max(0.0)
    }

    pub fn survival(&self, s: f64) -> f64 {
        self.value(s, self.entries)
    }
}
