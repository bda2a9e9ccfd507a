use std::f64::consts::PI;

use crate::config::{GratingSpec, MoleculeSpec};
use crate::constants::{HBAR, PLANCK, SPEED_OF_LIGHT, VACUUM_PERMITTIVITY};
use crate::error::{Error, Result};

/// Grating coupling seen by one molecule crossing the standing wave.
///
/// `phi0` and `n0` are the amplitudes of the cos²(k_L x) modulated phase and
/// mean absorbed photon number. `n_uniform` is the photon number absorbed
/// from the unmodulated running-wave remainder when the mirror is lossy
/// (zero for η = 1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GratingStrength {
    pub phi0: f64,
    pub n0: f64,
    pub n_uniform: f64,
    /// Laser wavelength the strength refers to (m).
    pub lambda_l: f64,
}

impl GratingStrength {
    pub fn zero(lambda_l: f64) -> Self {
        GratingStrength {
            phi0: 0.0,
            n0: 0.0,
            n_uniform: 0.0,
            lambda_l,
        }
    }
}

/// Velocity- and height-independent part of the coupling for one molecule
/// and grating. Both amplitudes scale as G(y)/v_z with
/// G(y) = exp(−2(y − y₀g)²/w_y²).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GratingCoupling {
    /// phi0 · v_z at the antinode line for a perfect mirror (m/s).
    phase_velocity: f64,
    /// n0 · v_z at the antinode line for a perfect mirror (m/s).
    photon_velocity: f64,
    modulated_fraction: f64,
    uniform_fraction: f64,
    height: f64,
    waist_y: f64,
    lambda_l: f64,
}

impl GratingCoupling {
    pub fn new(mol: &MoleculeSpec, grat: &GratingSpec) -> Self {
        // Antinode intensity 8P/(π w²) for a round waist and a perfect mirror,
        // transit integral ∫exp(−2v²t²/w²)dt = (w/v)·√(π/2).
        let phase_velocity = (8.0 / PI).sqrt() * mol.alpha_duv * grat.power
            / (HBAR * VACUUM_PERMITTIVITY * SPEED_OF_LIGHT * grat.waist_y);
        let photon_velocity = 8.0 / (2.0 * PI).sqrt() * mol.sigma_duv * grat.power * grat.lambda_l
            / (PLANCK * SPEED_OF_LIGHT * grat.waist_y);
        // |1 + √η e^{2ikx}|² = (1 − √η)² + 4√η cos²(kx); normalised to the η = 1 antinode.
        let root = grat.reflectivity.sqrt();
        GratingCoupling {
            phase_velocity,
            photon_velocity,
            modulated_fraction: root,
            uniform_fraction: (1.0 - root).powi(2) / 4.0,
            height: grat.height,
            waist_y: grat.waist_y,
            lambda_l: grat.lambda_l,
        }
    }

    pub fn envelope(&self, y: f64) -> f64 {
        let d = (y - self.height) / self.waist_y;
        (-2.0 * d * d).exp()
    }

    pub fn strength(&self, v_z: f64, y: f64) -> Result<GratingStrength> {
        if !(v_z > 0.0) {
            return Err(Error::Domain(format!("forward velocity must be positive, got {v_z}")));
        }
        Ok(self.at_scale(self.envelope(y) / v_z))
    }

    /// Strength for a given G(y)/v_z (s/m). Every amplitude is linear in it.
    pub fn at_scale(&self, scale: f64) -> GratingStrength {
        let n_full = self.photon_velocity * scale;
        GratingStrength {
            phi0: self.phase_velocity * scale * self.modulated_fraction,
            n0: n_full * self.modulated_fraction,
            n_uniform: n_full * self.uniform_fraction,
            lambda_l: self.lambda_l,
        }
    }

    pub fn lambda_l(&self) -> f64 {
        self.lambda_l
    }
}

pub fn grating_strength(
    mol: &MoleculeSpec,
    grat: &GratingSpec,
    v_z: f64,
    y: f64,
) -> Result<GratingStrength> {
    GratingCoupling::new(mol, grat).strength(v_z, y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::FOUR_PI_EPS0;
    use crate::testutil::pch2;

    #[test]
    fn pch2_phase_at_antinode_line() {
        let cfg = pch2();
        let gs = grating_strength(&cfg.molecule, &cfg.grating, 150.0, cfg.grating.height).unwrap();
        // Hand evaluation: √(8/π)·(1.2e-30·4π)·0.96 / (ħ c · 16e-6 · 150).
        let alpha_over_eps0 = 1.2e-30 * 4.0 * PI;
        let hand = 1.595_769_121_6 * alpha_over_eps0 * 0.96
            / (1.054_571_817e-34 * 299_792_458.0 * 16e-6 * 150.0);
        assert!((gs.phi0 - hand).abs() < 1e-9 * hand);
        assert!((gs.phi0 - 0.304).abs() < 0.002, "phi0 = {}", gs.phi0);
        assert!((cfg.molecule.alpha_duv / FOUR_PI_EPS0 - 1.2e-30).abs() < 1e-42);
    }

    #[test]
    fn pch2_photons_match_flux_transit_integral() {
        let cfg = pch2();
        let v = 150.0;
        let gs = grating_strength(&cfg.molecule, &cfg.grating, v, cfg.grating.height).unwrap();
        // Oracle: photon flux at the antinode (4 × peak of a round Gaussian)
        // times σ, integrated over the transit by trapezoid quadrature.
        let (p, w, lambda, sigma) = (0.96, 16e-6, 266e-9, 8.5e-21);
        let photon_energy = PLANCK * SPEED_OF_LIGHT / lambda;
        let peak_flux = 4.0 * 2.0 * p / (PI * w * w) / photon_energy;
        let t_max = 8.0 * w / v;
        let steps = 20_000;
        let dt = 2.0 * t_max / steps as f64;
        let integral: f64 = (0..=steps)
            .map(|i| {
                let t = -t_max + i as f64 * dt;
                let wgt = if i == 0 || i == steps { 0.5 } else { 1.0 };
                wgt * (-2.0 * (v * t / w).powi(2)).exp()
            })
            .sum::<f64>()
            * dt;
        let oracle = sigma * peak_flux * integral;
        assert!((gs.n0 - oracle).abs() < 1e-9 * oracle, "{} vs {}", gs.n0, oracle);
        assert!((gs.n0 - 14.6).abs() < 0.15, "n0 = {}", gs.n0);
    }

    #[test]
    fn zero_power_means_no_coupling() {
        let mut cfg = pch2();
        cfg.grating.power = 0.0;
        let gs = grating_strength(&cfg.molecule, &cfg.grating, 150.0, 0.0).unwrap();
        assert_eq!((gs.phi0, gs.n0, gs.n_uniform), (0.0, 0.0, 0.0));
    }

    #[test]
    fn scales_with_inverse_velocity_and_gaussian_height() {
        let cfg = pch2();
        let c = GratingCoupling::new(&cfg.molecule, &cfg.grating);
        let y0 = cfg.grating.height;
        let a = c.strength(150.0, y0).unwrap();
        let b = c.strength(300.0, y0 + cfg.grating.waist_y).unwrap();
        let ratio = 0.5 * (-2.0f64).exp();
        assert!((b.phi0 / a.phi0 - ratio).abs() < 1e-12);
        assert!((b.n0 / a.n0 - ratio).abs() < 1e-12);
    }

    #[test]
    fn nonpositive_velocity_is_a_domain_error() {
        let cfg = pch2();
        assert!(grating_strength(&cfg.molecule, &cfg.grating, 0.0, 0.0).is_err());
        assert!(grating_strength(&cfg.molecule, &cfg.grating, -3.0, 0.0).is_err());
    }

    #[test]
    fn lossy_mirror_splits_modulated_and_uniform_parts() {
        let mut cfg = pch2();
        let full = grating_strength(&cfg.molecule, &cfg.grating, 200.0, 0.0).unwrap();
        cfg.grating.reflectivity = 0.25;
        let lossy = grating_strength(&cfg.molecule, &cfg.grating, 200.0, 0.0).unwrap();
        assert!((lossy.n0 / full.n0 - 0.5).abs() < 1e-12);
        assert!((lossy.phi0 / full.phi0 - 0.5).abs() < 1e-12);
        assert!((lossy.n_uniform / full.n0 - 0.0625).abs() < 1e-12);
        // Mean intensity (1 + η)·I_inc relative to the η = 1 antinode 4·I_inc.
        let mean = lossy.n_uniform + lossy.n0 / 2.0;
        assert!((mean / full.n0 - (1.0 + 0.25) / 4.0).abs() < 1e-12);
        cfg.grating.reflectivity = 0.0;
        let none = grating_strength(&cfg.molecule, &cfg.grating, 200.0, 0.0).unwrap();
        assert_eq!(none.n0, 0.0);
        assert!((none.n_uniform / full.n0 - 0.25).abs() < 1e-12);
    }
}
