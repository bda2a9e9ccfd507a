use crate::constants::HBAR;
use crate::error::{Error, Result};

/// Transverse momentum density after `count` isotropic fluorescence photons.
///
/// The x-projection of one isotropically emitted recoil is uniform on
/// [−ħk_F, ħk_F]; `count` independent recoils give the scaled Irwin–Hall
/// density, i.e. a cardinal B-spline of order `count`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FluorescenceKernel {
    pub count: u32,
    /// ħk_F (kg·m/s).
    pub recoil: f64,
}

pub fn fluorescence_kernel(count: u32, lambda_f: f64) -> Result<FluorescenceKernel> {
    if count == 0 {
        return Err(Error::Domain("fluorescence count must be at least 1".into()));
    }
    if !(lambda_f > 0.0) {
        return Err(Error::Domain(format!("fluorescence wavelength must be positive, got {lambda_f}")));
    }
    Ok(FluorescenceKernel {
        count,
        recoil: HBAR * 2.0 * std::f64::consts::PI / lambda_f,
    })
}

/// Cardinal B-spline of order `order` (support [0, order]) at `x`, by the
/// Cox–de Boor recursion.
fn cardinal_bspline(order: u32, x: f64) -> f64 {
    let n = order as usize;
    if x <= 0.0 || x >= n as f64 {
        return 0.0;
    }
    // values[i] holds M_k(x − i) for the current order k.
    let mut values: Vec<f64> = (0..n)
        .map(|i| {
            let u = x - i as f64;
            if (0.0..1.0).contains(&u) {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    for k in 2..=n {
        let kf = k as f64;
        for i in 0..=(n - k) {
            let u = x - i as f64;
            values[i] = (u * values[i] + (kf - u) * values[i + 1]) / (kf - 1.0);
        }
    }
    values[0]
}

impl FluorescenceKernel {
    /// Half-width of the support, count·ħk_F.
    pub fn half_width(&self) -> f64 {
        self.count as f64 * self.recoil
    }

    pub fn variance(&self) -> f64 {
        self.count as f64 * self.recoil * self.recoil / 3.0
    }

    fn to_unit(&self, p: f64) -> f64 {
        (p + self.half_width()) / (2.0 * self.recoil)
    }

    pub fn pdf(&self, p: f64) -> f64 {
        cardinal_bspline(self.count, self.to_unit(p)) / (2.0 * self.recoil)
    }

    pub fn cdf(&self, p: f64) -> f64 {
        let u = self.to_unit(p);
        let n = self.count as f64;
        if u <= 0.0 {
            return 0.0;
        }
        if u >= n {
            return 1.0;
        }
        // ∫₀ᵘ M_n = Σ_{i≥0} M_{n+1}(u − i).
        (0..=(u.floor() as usize))
            .map(|i| cardinal_bspline(self.count + 1, u - i as f64))
            .sum::<f64>()
            .clamp(0.0, 1.0)
    }

    /// Probability mass on [a, b].
    pub fn mass_between(&self, a: f64, b: f64) -> f64 {
        (self.cdf(b) - self.cdf(a)).max(0.0)
    }
}
