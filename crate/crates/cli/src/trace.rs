//! Horizontal traces of detector images and their peak statistics.

use std::collections::BTreeMap;

use serde::Serialize;

/// Column sums over rows `first_row..height`.
pub fn column_trace(data: &[f64], width: usize, first_row: usize) -> Vec<f64> {
    let mut out = vec![0.0; width];
    for row in data.chunks(width).skip(first_row) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Peak {
    /// Intensity-weighted column over the contiguous region above half
    /// maximum.
    pub position: f64,
    pub height: f64,
    /// Full width at half maximum in pixels, linearly interpolated.
    pub fwhm: f64,
    /// Trace sum over the peak's segment. Segments split the trace at the
    /// lowest point between neighbouring peaks, so the masses of all peaks
    /// add up to the trace total.
    pub mass: f64,
}

/// Height of maximum `i` above the higher of its two bases. Ties go to the
/// leftmost column of a plateau.
fn prominence(trace: &[f64], i: usize) -> f64 {
    let v = trace[i];
    let mut left = v;
    for &x in trace[..i].iter().rev() {
        if x >= v {
            break;
        }
        left = left.min(x);
    }
    let mut right = v;
    for &x in &trace[i + 1..] {
        if x > v {
            break;
        }
        right = right.min(x);
    }
    v - left.max(right)
}

/// Peaks higher than `threshold`·max whose prominence is at least
/// `min_prominence` of their height, left to right.
pub fn find_peaks(trace: &[f64], threshold: f64, min_prominence: f64) -> Vec<Peak> {
    let n = trace.len();
    let top = trace.iter().copied().fold(0.0, f64::max);
    if n == 0 || !(top > 0.0) {
        return Vec::new();
    }
    let maxima: Vec<usize> = (0..n)
        .filter(|&i| {
            let v = trace[i];
            let left = if i > 0 { trace[i - 1] } else { f64::NEG_INFINITY };
            let right = if i + 1 < n { trace[i + 1] } else { f64::NEG_INFINITY };
            v > left && v >= right && v > threshold * top && prominence(trace, i) >= min_prominence * v
        })
        .collect();
    let mut bounds = vec![0];
    for w in maxima.windows(2) {
        let (a, b) = (w[0], w[1]);
        let cut = (a..=b).min_by(|&x, &y| trace[x].total_cmp(&trace[y])).unwrap_or(a);
        bounds.push(cut);
    }
    bounds.push(n);
    maxima
        .iter()
        .enumerate()
        .map(|(k, &i)| {
            let (seg_lo, seg_hi) = (bounds[k], bounds[k + 1]);
            let v = trace[i];
            let half = 0.5 * v;
            let mut a = i;
            while a > seg_lo && trace[a - 1] > half {
                a -= 1;
            }
            let mut b = i;
            while b + 1 < seg_hi && trace[b + 1] > half {
                b += 1;
            }
            let lo = if a > 0 {
                let (y0, y1) = (trace[a - 1], trace[a]);
                (a - 1) as f64 + (half - y0) / (y1 - y0)
            } else {
                0.0
            };
            let hi = if b + 1 < n {
                let (y0, y1) = (trace[b], trace[b + 1]);
                b as f64 + (y0 - half) / (y0 - y1)
            } else {
                (n - 1) as f64
            };
            let (s, m) = (a..=b).fold((0.0, 0.0), |(s, m), c| (s + trace[c], m + trace[c] * c as f64));
            Peak {
                position: m / s,
                height: v,
                fwhm: hi - lo,
                mass: trace[seg_lo..seg_hi].iter().sum(),
            }
        })
        .collect()
}

/// Fraction of the trace carried by each diffraction order: every peak
/// goes to order round((position − centre)/spacing).
pub fn order_masses(peaks: &[Peak], centre: f64, spacing: f64) -> BTreeMap<i64, f64> {
    let total: f64 = peaks.iter().map(|p| p.mass).sum();
    let mut out = BTreeMap::new();
    if !(total > 0.0) || !(spacing > 0.0) {
        return out;
    }
    for p in peaks {
        let j = ((p.position - centre) / spacing).round() as i64;
        *out.entry(j).or_insert(0.0) += p.mass / total;
    }
    out
}

/// The tallest peak, if any.
pub fn main_peak(peaks: &[Peak]) -> Option<&Peak> {
    peaks.iter().max_by(|a, b| a.height.total_cmp(&b.height))
}
