use crate::config::{MoleculeSpec, SourceSpec};
use crate::constants::BOLTZMANN;
use crate::error::{Error, Result};

/// Density mass left out below the lower and above the upper bound.
const TAIL_MASS: f64 = 2.5e-4;
const CDF_SAMPLES: usize = 20_000;

/// Quadrature over the forward velocity distribution of the beam.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityGrid {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub v_min: f64,
    pub v_max: f64,
}

impl VelocityGrid {
    /// A single velocity class carrying all the weight.
    pub fn single(v: f64) -> Result<Self> {
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::Domain(format!("velocity must be positive, got {v}")));
        }
        Ok(VelocityGrid {
            nodes: vec![v],
            weights: vec![1.0],
            v_min: v,
            v_max: v,
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// ln of the unnormalised beam density v³·exp(−m(v − v_s)²/(2k_BT)).
pub fn log_density(v: f64, v_shift: f64, thermal: f64) -> f64 {
    if v <= 0.0 {
        return f64::NEG_INFINITY;
    }
    3.0 * v.ln() - (v - v_shift).powi(2) / (2.0 * thermal * thermal)
}

/// Gauss–Legendre nodes and weights on [−1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..(n + 1) / 2 {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // P_n(x) and its derivative by the three-term recurrence.
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 0 { 1.0 } else if n == 1 { x } else { p1 };
            let pm = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * pn - pm) / (x * x - 1.0);
            let dx = pn / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Gauss–Legendre quadrature over the central 1 − 5·10⁻⁴ of the beam density,
/// with weights f(v_i)·w_i normalised to one.
pub fn velocity_grid(src: &SourceSpec, mol: &MoleculeSpec, n: usize) -> Result<VelocityGrid> {
    if n < 8 {
        return Err(Error::Domain(format!("velocity grid needs at least 8 nodes, got {n}")));
    }
    let thermal = (BOLTZMANN * src.temperature / mol.mass).sqrt();
    if !(thermal > 1e-6) && src.v_shift <= 0.0 || !thermal.is_finite() || !(thermal > 0.0) {
        return Err(Error::Domain(format!(
            "degenerate velocity distribution (T = {} K, v_shift = {} m/s)",
            src.temperature, src.v_shift
        )));
    }
    let v_hi = src.v_shift + 14.0 * thermal;
    let ln_peak = {
        // The density is unimodal; its mode solves v² − v_s·v − 3σ² = 0.
        let mode = 0.5 * (src.v_shift + (src.v_shift.powi(2) + 12.0 * thermal * thermal).sqrt());
        log_density(mode, src.v_shift, thermal)
    };
    let h = v_hi / CDF_SAMPLES as f64;
    let density = |v: f64| (log_density(v, src.v_shift, thermal) - ln_peak).exp();
    let mut cdf = vec![0.0; CDF_SAMPLES + 1];
    let mut prev = density(0.0);
    for i in 1..=CDF_SAMPLES {
        let cur = density(i as f64 * h);
        cdf[i] = cdf[i - 1] + 0.5 * h * (prev + cur);
        prev = cur;
    }
    let total = cdf[CDF_SAMPLES];
    if !(total > 0.0) {
        return Err(Error::Numerical("velocity density integrates to zero".into()));
    }
    let quantile = |q: f64| {
        let target = q * total;
        let i = cdf.partition_point(|&c| c < target).clamp(1, CDF_SAMPLES);
        let (c0, c1) = (cdf[i - 1], cdf[i]);
        let t = if c1 > c0 { (target - c0) / (c1 - c0) } else { 0.0 };
        (i as f64 - 1.0 + t) * h
    };
    let v_min = quantile(TAIL_MASS);
    let v_max = quantile(1.0 - TAIL_MASS);

    let (x, w) = gauss_legendre(n);
    let half = 0.5 * (v_max - v_min);
    let mid = 0.5 * (v_max + v_min);
    let nodes: Vec<f64> = x.iter().map(|&t| mid + half * t).collect();
    let raw: Vec<f64> = nodes.iter().zip(&w).map(|(&v, &wi)| wi * density(v)).collect();
    let sum: f64 = raw.iter().sum();
    let weights = raw.iter().map(|r| r / sum).collect();
    Ok(VelocityGrid {
        nodes,
        weights,
        v_min,
        v_max,
    })
}
