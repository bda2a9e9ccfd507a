use crate::config::EnvironmentSpec;

/// Transverse state of a molecule at longitudinal position `z`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Trajectory {
    pub z: f64,
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
    /// Forward velocity, constant along the flight (m/s).
    pub vz: f64,
}

/// Transverse accelerations (a_x, a_y): gravity plus the Coriolis term
/// −2 Ω × v with Ω = (ω_x, ω_y, 0), keeping only the v_z contributions.
pub fn acceleration(env: &EnvironmentSpec, vz: f64) -> (f64, f64) {
    (-2.0 * env.omega_y * vz, env.g + 2.0 * env.omega_x * vz)
}

impl Trajectory {
    /// The trajectory with forward velocity `vz` that is at `a` (x, y) when
    /// crossing `z_a` and at `b` when crossing `z_b`.
    pub fn through(
        z_a: f64,
        a: (f64, f64),
        z_b: f64,
        b: (f64, f64),
        vz: f64,
        env: &EnvironmentSpec,
    ) -> Trajectory {
        let (ax, ay) = acceleration(env, vz);
        let t = (z_b - z_a) / vz;
        Trajectory {
            z: z_a,
            x: a.0,
            y: a.1,
            vx: (b.0 - a.0 - 0.5 * ax * t * t) / t,
            vy: (b.1 - a.1 - 0.5 * ay * t * t) / t,
            vz,
        }
    }

    /// Adds a transverse momentum kick `dp` (kg·m/s) along x.
    pub fn kicked(mut self, dp: f64, mass: f64) -> Trajectory {
        self.vx += dp / mass;
        self
    }
}

/// Constant-acceleration flight from `traj.z` to `z_to`.
pub fn propagate(traj: &Trajectory, z_to: f64, env: &EnvironmentSpec) -> Trajectory {
    let t = (z_to - traj.z) / traj.vz;
    let (ax, ay) = acceleration(env, traj.vz);
    Trajectory {
        z: z_to,
        x: traj.x + traj.vx * t + 0.5 * ax * t * t,
        y: traj.y + traj.vy * t + 0.5 * ay * t * t,
        vx: traj.vx + ax * t,
        vy: traj.vy + ay * t,
        vz: traj.vz,
    }
}

/// Rectangular aperture centred on (center_x, center_y).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Slit {
    pub z: f64,
    pub center_x: f64,
    pub center_y: f64,
    pub width_x: f64,
    pub width_y: f64,
}

impl Slit {
    /// Closed-interval test on both axes.
    pub fn admits(&self, x: f64, y: f64) -> bool {
        (x - self.center_x).abs() <= 0.5 * self.width_x && (y - self.center_y).abs() <= 0.5 * self.width_y
    }
}

/// Whether `traj`, already evaluated at the slit plane, passes the slit.
pub fn slit_pass(traj: &Trajectory, slit: &Slit) -> bool {
    debug_assert!((traj.z - slit.z).abs() <= 1e-12 * slit.z.abs().max(1.0));
    slit.admits(traj.x, traj.y)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env(g: f64, omega_x: f64, omega_y: f64) -> EnvironmentSpec {
        EnvironmentSpec { g, omega_x, omega_y }
    }

    fn start(vz: f64) -> Trajectory {
        Trajectory {
            z: 0.0,
            x: 0.0,
            y: 0.0,
            vx: 0.0,
            vy: 0.0,
            vz,
        }
    }

    #[test]
    fn free_fall_drop_over_screen_distance() {
        let e = env(-9.81, 0.0, 0.0);
        let end = propagate(&start(150.0), 0.69, &e);
        let t = 0.69 / 150.0;
        assert!((end.y + 9.81 * t * t / 2.0).abs() < 1e-18);
        assert!((end.y.abs() - 0.1038e-3).abs() < 0.0001e-3, "{}", end.y);
    }

    #[test]
    fn zero_distance_is_identity() {
        let e = env(-9.81, 5.4e-5, -4.9e-5);
        let t0 = Trajectory {
            z: 0.3,
            x: 1e-6,
            y: -2e-6,
            vx: 1e-4,
            vy: 3e-4,
            vz: 200.0,
        };
        assert_eq!(propagate(&t0, 0.3, &e), t0);
    }

    #[test]
    fn coriolis_deflection_over_beamline() {
        let e = env(0.0, 0.0, -4.9e-5);
        let end = propagate(&start(150.0), 1.51, &e);
        let t = 1.51 / 150.0;
        // x = a_x t²/2 with a_x = −2 ω_y v_z.
        let expected = 4.9e-5 * 150.0 * t * t;
        assert!((end.x - expected).abs() < 1e-15);
        assert!((end.x.abs() - 0.75e-6).abs() < 0.01e-6, "{}", end.x);
    }

    #[test]
    fn ray_through_two_points_hits_both() {
        let e = env(-9.81, 5.4e-5, -4.9e-5);
        let tr = Trajectory::through(0.0, (3e-6, -40e-6), 0.84, (-1e-6, -16e-6), 120.0, &e);
        let at = propagate(&tr, 0.84, &e);
        assert!((at.x + 1e-6).abs() < 1e-17);
        assert!((at.y + 16e-6).abs() < 1e-17);
    }

    #[test]
    fn slit_edges_are_inclusive() {
        let slit = Slit {
            z: 0.84,
            center_x: 0.0,
            center_y: -16.5e-6,
            width_x: 2.0,
            width_y: 20e-6,
        };
        assert!(slit.admits(1.0, -16.5e-6));
        assert!(!slit.admits(0.0, -16.5e-6 + 11e-6));
        assert!(slit.admits(0.0, -16.5e-6 + 9e-6));
        let open = Slit {
            width_y: 1.0,
            ..slit
        };
        assert!(open.admits(0.0, 300e-6));
    }
}
