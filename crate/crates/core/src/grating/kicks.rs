use std::collections::BTreeMap;

use super::channels::ChannelSet;
use crate::config::MoleculeSpec;
use crate::constants::HBAR;

/// Probability mass at discrete order `order` that is further spread by
/// `fluorescence` isotropic photon recoils.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmearComponent {
    pub order: i64,
    pub fluorescence: u32,
    pub probability: f64,
}

/// Transverse momentum distribution of the molecules that survive the grating.
#[derive(Debug, Clone, PartialEq)]
pub struct KickDistribution {
    j_max: i64,
    discrete: Vec<f64>,
    pub smear: Vec<SmearComponent>,
    pub survival: f64,
    /// ħk_L (kg·m/s).
    pub photon_momentum: f64,
    /// ħk_F (kg·m/s).
    pub fluorescence_momentum: f64,
}

impl KickDistribution {
    /// The undeflected distribution: everything in order 0.
    pub fn identity(photon_momentum: f64, fluorescence_momentum: f64) -> Self {
        KickDistribution {
            j_max: 0,
            discrete: vec![1.0],
            smear: Vec::new(),
            survival: 1.0,
            photon_momentum,
            fluorescence_momentum,
        }
    }

    pub fn j_max(&self) -> i64 {
        self.j_max
    }

    /// Probability of a sharp kick j·ħk_L.
    pub fn discrete(&self, j: i64) -> f64 {
        let idx = j + self.j_max;
        if idx < 0 || idx as usize >= self.discrete.len() {
            0.0
        } else {
            self.discrete[idx as usize]
        }
    }

    pub fn discrete_orders(&self) -> impl Iterator<Item = (i64, f64)> + '_ {
        let off = self.j_max;
        self.discrete.iter().enumerate().map(move |(i, &p)| (i as i64 - off, p))
    }

    pub fn discrete_total(&self) -> f64 {
        self.discrete.iter().sum()
    }

    pub fn smear_total(&self) -> f64 {
        self.smear.iter().map(|s| s.probability).sum()
    }

    /// Mass at odd diffraction orders, sharp and smeared.
    pub fn odd_order_mass(&self) -> f64 {
        self.discrete_orders()
            .filter(|(j, _)| j % 2 != 0)
            .map(|(_, p)| p)
            .sum::<f64>()
            + self
                .smear
                .iter()
                .filter(|s| s.order % 2 != 0)
                .map(|s| s.probability)
                .sum::<f64>()
    }

    /// ⟨p_x²⟩ over the surviving distribution, unnormalised (kg²·m²/s²).
    pub fn second_moment(&self) -> f64 {
        let pk = self.photon_momentum;
        let pf = self.fluorescence_momentum;
        let sharp: f64 = self
            .discrete_orders()
            .map(|(j, p)| p * (j as f64 * pk).powi(2))
            .sum();
        let smeared: f64 = self
            .smear
            .iter()
            .map(|s| s.probability * ((s.order as f64 * pk).powi(2) + s.fluorescence as f64 * pf * pf / 3.0))
            .sum();
        sharp + smeared
    }
}

fn binomial_pmf(n: usize, p: f64) -> Vec<f64> {
    let mut out = vec![0.0; n + 1];
    if p <= 0.0 {
        out[0] = 1.0;
        return out;
    }
    if p >= 1.0 {
        out[n] = 1.0;
        return out;
    }
    let ratio = p / (1.0 - p);
    out[0] = (1.0 - p).powi(n as i32);
    for f in 1..=n {
        out[f] = out[f - 1] * (n - f + 1) as f64 / f as f64 * ratio;
    }
    out
}

/// Splits every absorption channel into surviving sharp orders and
/// fluorescence-smeared components.
///
/// Channel m survives depletion with probability (1 − p_dep)^m; survivors
/// emit f ~ Binomial(m, φ_F) fluorescence photons. Non-radiative decay
/// (IC, ISC) leaves the kick unchanged.
pub fn kick_distribution(cs: &ChannelSet, mol: &MoleculeSpec) -> KickDistribution {
    let photon_momentum = HBAR * 2.0 * std::f64::consts::PI / cs.strength.lambda_l;
    let fluorescence_momentum = HBAR * 2.0 * std::f64::consts::PI / mol.lambda_f;
    let j_max = cs.j_max as i64;
    let keep = 1.0 - mol.p_dep;
    let uniform_survival = (-cs.strength.n_uniform * mol.p_dep).exp();

    let mut discrete = vec![0.0; 2 * cs.j_max + 1];
    let mut smear: BTreeMap<(i64, u32), f64> = BTreeMap::new();
    let mut survival = 0.0;
    for ch in &cs.channels {
        let m = ch.absorbed;
        let s = keep.powi(m as i32) * uniform_survival;
        if s == 0.0 {
            continue;
        }
        let split = binomial_pmf(m, mol.phi_f);
        for (j, c) in ch.orders() {
            let mass = c.norm_sqr() * s;
            if mass == 0.0 {
                continue;
            }
            survival += mass;
            discrete[(j + j_max) as usize] += mass * split[0];
            for (f, &b) in split.iter().enumerate().skip(1) {
                if b > 0.0 {
                    *smear.entry((j, f as u32)).or_insert(0.0) += mass * b;
                }
            }
        }
    }
    KickDistribution {
        j_max,
        discrete,
        smear: smear
            .into_iter()
            .map(|((order, fluorescence), probability)| SmearComponent {
                order,
                fluorescence,
                probability,
            })
            .collect(),
        survival,
        photon_momentum,
        fluorescence_momentum,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grating::channels::{channel_amplitudes, ChannelOptions};
    use crate::grating::strength::GratingStrength;
    use crate::testutil::pch2;

    fn channels(phi0: f64, n0: f64) -> ChannelSet {
        let gs = GratingStrength {
            phi0,
            n0,
            n_uniform: 0.0,
            lambda_l: 266e-9,
        };
        channel_amplitudes(&gs, &ChannelOptions::default()).unwrap()
    }

    fn molecule(phi_f: f64, p_dep: f64) -> MoleculeSpec {
        let mut m = pch2().molecule;
        m.phi_f = phi_f;
        m.phi_isc = 1.0 - phi_f;
        m.phi_ic = 0.0;
        m.p_dep = p_dep;
        m
    }

    #[test]
    fn lossless_limit_sums_channels() {
        let cs = channels(0.8, 2.0);
        let kd = kick_distribution(&cs, &molecule(0.0, 0.0));
        assert!(kd.smear.is_empty());
        for j in -10..=10 {
            let want: f64 = cs.channels.iter().map(|c| c.coeff(j).norm_sqr()).sum();
            assert!((kd.discrete(j) - want).abs() < 1e-15);
        }
        assert!((kd.survival - 1.0).abs() < 1e-6);
        assert!((kd.discrete_total() - kd.survival).abs() < 1e-14);
    }

    #[test]
    fn full_depletion_keeps_only_the_dark_channel() {
        let cs = channels(0.8, 2.0);
        let kd = kick_distribution(&cs, &molecule(0.0, 1.0));
        let dark = &cs.channels[0];
        for j in -10..=10 {
            assert_eq!(kd.discrete(j), dark.coeff(j).norm_sqr());
        }
        assert_eq!(kd.odd_order_mass(), 0.0);
        assert!((kd.survival - dark.mass()).abs() < 1e-15);
        assert!(kd.survival < 1.0);
    }

    #[test]
    fn binomial_split_of_one_photon_channel() {
        // Oracle: channel-1 mass M splits into (1 − φ_F)M sharp and φ_F·M smeared.
        let cs = channels(0.0, 0.2);
        let one = cs.channels[1].mass();
        let zero = cs.channels[0].mass();
        let two: f64 = cs.channels.iter().skip(2).map(|c| c.mass()).sum();
        let kd = kick_distribution(&cs, &molecule(0.3, 0.0));
        let smear_f1: f64 = kd.smear.iter().filter(|s| s.fluorescence == 1).map(|s| s.probability).sum();
        let from_higher: f64 = cs
            .channels
            .iter()
            .skip(2)
            .map(|c| c.mass() * c.absorbed as f64 * 0.3 * 0.7f64.powi(c.absorbed as i32 - 1))
            .sum();
        assert!((smear_f1 - (0.3 * one + from_higher)).abs() < 1e-15);
        let sharp_from_higher: f64 = cs
            .channels
            .iter()
            .skip(2)
            .map(|c| c.mass() * 0.7f64.powi(c.absorbed as i32))
            .sum();
        assert!((kd.discrete_total() - (zero + 0.7 * one + sharp_from_higher)).abs() < 1e-14);
        assert!(two < one);
        assert!((kd.discrete_total() + kd.smear_total() - kd.survival).abs() < 1e-14);
    }

    #[test]
    fn binomial_split_example_values() {
        // Channel mass 0.1 with φ_F = 0.3 → 0.03 smeared, 0.07 sharp.
        let b = binomial_pmf(1, 0.3);
        assert!((0.1 * b[1] - 0.03).abs() < 1e-15);
        assert!((0.1 * b[0] - 0.07).abs() < 1e-15);
        let b = binomial_pmf(5, 1.0);
        assert_eq!(b, vec![0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn orders_are_symmetric() {
        let cs = channels(2.0, 1.0);
        let kd = kick_distribution(&cs, &molecule(0.4, 0.2));
        for j in 1..=12 {
            assert!((kd.discrete(j) - kd.discrete(-j)).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_coupling_survives_entirely() {
        let cs = channels(0.0, 0.0);
        let kd = kick_distribution(&cs, &molecule(0.5, 0.7));
        assert_eq!(kd.survival, 1.0);
        assert_eq!(kd.discrete(0), 1.0);
    }
}
