//! Absorption-channel decomposition of the grating transmission.
//!
//! A molecule that absorbed `m` photons coherently from the standing wave
//! leaves the grating with the transmission function
//!
//! ```text
//! t_m(x) = exp(i·φ₀·cos²(k_L x)) · exp(−n̄(x)/2) · (√n₀·cos(k_L x))^m / √(m!)
//! ```
//!
//! with n̄(x) = n₀·cos²(k_L x). Its Fourier coefficient at j·k_L is the
//! amplitude for a transverse kick of j·ħk_L. Channels with different `m`
//! end in distinguishable internal states and add incoherently.

use std::cell::RefCell;
use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;

use super::strength::GratingStrength;
use crate::error::{Error, Result};

pub const DEFAULT_EPSILON_TRUNC: f64 = 1e-6;
pub const DEFAULT_M_MAX: usize = 200;
/// Channels lighter than this are stored as exact zeros.
const NEGLIGIBLE_CHANNEL: f64 = 1e-40;

/// Largest Fourier mass allowed outside ±j_max before the order range is widened.
const ORDER_LEAK_TOLERANCE: f64 = 1e-13;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelOptions {
    /// Largest absorbed-photon count the caller allows.
    pub m_max: usize,
    /// Poisson mass allowed beyond the chosen truncation.
    pub epsilon_trunc: f64,
    /// Order range; `None` uses 2·⌈|φ₀|⌉ + m + 8 and widens it if needed.
    pub j_max: Option<usize>,
    /// Keep at least this many absorption channels beyond m = 0, so that
    /// sets built for different strengths share one layout.
    pub m_min: usize,
}

impl Default for ChannelOptions {
    fn default() -> Self {
        ChannelOptions {
            m_max: DEFAULT_M_MAX,
            epsilon_trunc: DEFAULT_EPSILON_TRUNC,
            j_max: None,
            m_min: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Channel {
    pub absorbed: usize,
    j_max: usize,
    coeffs: Vec<Complex64>,
}

impl Channel {
    /// Amplitude c_{m,j}; zero outside the stored order range.
    pub fn coeff(&self, j: i64) -> Complex64 {
        let idx = j + self.j_max as i64;
        if idx < 0 || idx as usize >= self.coeffs.len() {
            Complex64::new(0.0, 0.0)
        } else {
            self.coeffs[idx as usize]
        }
    }

    /// Σ_j |c_{m,j}|².
    pub fn mass(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum()
    }

    pub fn orders(&self) -> impl Iterator<Item = (i64, Complex64)> + '_ {
        let off = self.j_max as i64;
        self.coeffs.iter().enumerate().map(move |(i, c)| (i as i64 - off, *c))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    pub strength: GratingStrength,
    pub channels: Vec<Channel>,
    pub j_max: usize,
    pub epsilon_trunc: f64,
    /// Period-averaged Poisson mass in channels beyond `m_max`.
    pub residual_mass: f64,
    /// Samples per period used for the discrete transform.
    pub samples: usize,
}

impl ChannelSet {
    pub fn m_max(&self) -> usize {
        self.channels.len() - 1
    }

    pub fn total_mass(&self) -> f64 {
        self.channels.iter().map(Channel::mass).sum()
    }

    /// Σ_m m·(channel-m mass): the mean absorbed photon number.
    pub fn mean_absorbed(&self) -> f64 {
        self.channels
            .iter()
            .map(|c| c.absorbed as f64 * c.mass())
            .sum()
    }
}

fn ln_factorial(m: usize) -> f64 {
    (2..=m).map(|k| (k as f64).ln()).sum()
}

/// Poisson probability of `m` events at mean `mean`, evaluated in log space.
pub(crate) fn poisson_pmf(m: usize, mean: f64, ln_m_fact: f64) -> f64 {
    if mean <= 0.0 {
        return if m == 0 { 1.0 } else { 0.0 };
    }
    (m as f64 * mean.ln() - mean - ln_m_fact).exp()
}

/// Smallest m such that the period-averaged Poisson tail beyond it is below
/// `epsilon`. Returns the count and the residual tail mass.
fn choose_truncation(n0: f64, cap: usize, epsilon: f64) -> Result<(usize, f64)> {
    if n0 <= 0.0 {
        return Ok((0, 0.0));
    }
    let samples = (8 * (n0.ceil() as usize + 16)).next_power_of_two().max(256);
    // cos² has period π; midpoints of a uniform grid are spectrally accurate.
    let means: Vec<f64> = (0..samples)
        .map(|k| {
            let c = (PI * (k as f64 + 0.5) / samples as f64).cos();
            n0 * c * c
        })
        .collect();
    // Poisson weights by the recurrence p_m = p_{m−1}·x/m, in log form when
    // e^{−x} would underflow.
    let direct = n0 < 600.0;
    let mut pmf: Vec<f64> = means.iter().map(|&x| (-x).exp()).collect();
    let mut cumulative = 0.0;
    let mut ln_fact = 0.0;
    for m in 0..=cap {
        if m > 1 {
            ln_fact += (m as f64).ln();
        }
        let avg: f64 = if direct {
            if m > 0 {
                let inv = 1.0 / m as f64;
                for (p, &x) in pmf.iter_mut().zip(&means) {
                    *p *= x * inv;
                }
            }
            pmf.iter().sum::<f64>() / samples as f64
        } else {
            means.iter().map(|&x| poisson_pmf(m, x, ln_fact)).sum::<f64>() / samples as f64
        };
        cumulative += avg;
        let residual = (1.0 - cumulative).max(0.0);
        if residual < epsilon {
            return Ok((m, residual));
        }
    }
    Err(Error::Truncation {
        m_max: cap,
        epsilon,
        residual: (1.0 - cumulative).max(0.0),
    })
}

pub fn channel_amplitudes(gs: &GratingStrength, opts: &ChannelOptions) -> Result<ChannelSet> {
    if !(gs.n0 >= 0.0) || !gs.phi0.is_finite() || !gs.n0.is_finite() {
        return Err(Error::Domain(format!(
            "grating strength must be finite with n0 >= 0 (phi0 = {}, n0 = {})",
            gs.phi0, gs.n0
        )));
    }
    if !(opts.epsilon_trunc > 0.0) {
        return Err(Error::Domain("epsilon_trunc must be positive".into()));
    }
    let (m_max, residual) = choose_truncation(gs.n0, opts.m_max, opts.epsilon_trunc)?;
    let m_max = m_max.max(opts.m_min);
    let phase_band = 2 * gs.phi0.abs().ceil() as usize;
    let mut j_max = match opts.j_max {
        Some(j) if j < m_max + phase_band => {
            return Err(Error::Domain(format!(
                "j_max = {j} is below m_max + phase bandwidth = {}",
                m_max + phase_band
            )))
        }
        Some(j) => j,
        None => phase_band + m_max + 8,
    };
    let widen = opts.j_max.is_none();

    loop {
        let samples = (4 * j_max + 1).next_power_of_two().max(64);
        let (channels, leak) = transform_channels(gs, m_max, j_max, samples);
        if leak <= ORDER_LEAK_TOLERANCE || !widen {
            return Ok(ChannelSet {
                strength: *gs,
                channels,
                j_max,
                epsilon_trunc: opts.epsilon_trunc,
                residual_mass: residual,
                samples,
            });
        }
        if j_max > 64 * (phase_band + m_max + 8) {
            return Err(Error::Numerical(format!(
                "order range did not converge: leak {leak:e} at j_max = {j_max}"
            )));
        }
        j_max += (j_max / 2).max(8);
    }
}

/// Samples every channel on `samples` points of one period and extracts the
/// Fourier coefficients for |j| ≤ j_max. Returns the channels and the
/// largest mass found outside the kept range.
fn transform_channels(
    gs: &GratingStrength,
    m_max: usize,
    j_max: usize,
    samples: usize,
) -> (Vec<Channel>, f64) {
    let cosines: Vec<f64> = (0..samples)
        .map(|k| (2.0 * PI * k as f64 / samples as f64).cos())
        .collect();
    let sqrt_n0 = gs.n0.sqrt();
    let exponent = Complex64::new(-gs.n0 / 2.0, gs.phi0);
    let mut current: Vec<Complex64> = cosines.iter().map(|&c| (exponent * (c * c)).exp()).collect();
    let norm = 1.0 / samples as f64;

    PLANNER.with(|planner| {
        let fft = planner.borrow_mut().plan_fft_forward(samples);
        let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
        let mut buffer = vec![Complex64::new(0.0, 0.0); samples];
        let mut channels = Vec::with_capacity(m_max + 1);
        let mut leak_max = 0.0f64;
        for m in 0..=m_max {
            if m > 0 {
                let step = sqrt_n0 / (m as f64).sqrt();
                for (t, &c) in current.iter_mut().zip(&cosines) {
                    *t *= step * c;
                }
            }
            let weight: f64 = current.iter().map(|c| c.norm_sqr()).sum::<f64>() * norm;
            if weight < NEGLIGIBLE_CHANNEL {
                channels.push(Channel {
                    absorbed: m,
                    j_max,
                    coeffs: vec![Complex64::new(0.0, 0.0); 2 * j_max + 1],
                });
                continue;
            }
            buffer.copy_from_slice(&current);
            fft.process_with_scratch(&mut buffer, &mut scratch);
            let total: f64 = buffer.iter().map(|c| c.norm_sqr()).sum::<f64>() * norm * norm;
            let mut coeffs = vec![Complex64::new(0.0, 0.0); 2 * j_max + 1];
            let mut kept = 0.0;
            for j in -(j_max as i64)..=(j_max as i64) {
                let bin = j.rem_euclid(samples as i64) as usize;
                let c = buffer[bin] * norm;
                kept += c.norm_sqr();
                // cos^m has the parity of m and cos² is even, so c_{m,j}
                // vanishes analytically whenever m + j is odd.
                if (m as i64 + j) % 2 == 0 {
                    coeffs[(j + j_max as i64) as usize] = c;
                }
            }
            leak_max = leak_max.max(total - kept);
            channels.push(Channel {
                absorbed: m,
                j_max,
                coeffs,
            });
        }
        (channels, leak_max)
    })
}

/// Largest deviation between each channel's Fourier mass and the period
/// average of e^{−n̄} n̄^m / m!, computed by an independent dense quadrature.
pub fn poisson_consistency_check(cs: &ChannelSet) -> f64 {
    let n0 = cs.strength.n0;
    let samples = 8192usize;
    let mut deviation = 0.0f64;
    let mut ln_fact = 0.0;
    for ch in &cs.channels {
        let m = ch.absorbed;
        if m > 1 {
            ln_fact = ln_factorial(m);
        }
        let expected = (0..samples)
            .map(|k| {
                let c = (2.0 * PI * (k as f64 + 0.25) / samples as f64).cos();
                poisson_pmf(m, n0 * c * c, ln_fact)
            })
            .sum::<f64>()
            / samples as f64;
        deviation = deviation.max((ch.mass() - expected).abs());
    }
    deviation
}
