//! Flag value parsers: unit-suffixed quantities, scan ranges and crop
//! rectangles.

use duv_diffraction::fitting::{Axis, Spacing};
use duv_diffraction::imageproc::Rect;
use duv_diffraction::units::{parse_quantity, Quantity};

/// `lo:hi:n[:log|lin]`, each end carrying the quantity's unit suffix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
    pub spacing: Spacing,
}

impl Range {
    pub fn axis(&self) -> Result<Axis, String> {
        Axis::new(self.lo, self.hi, self.n, self.spacing).map_err(|e| e.to_string())
    }

    pub fn bounds(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }
}

pub fn parse_range(text: &str, quantity: Quantity) -> Result<Range, String> {
    let parts: Vec<&str> = text.split(':').collect();
    if !(3..=4).contains(&parts.len()) {
        return Err(format!("`{text}` is not lo:hi:n[:log|lin]"));
    }
    let lo = parse_quantity(parts[0], quantity)?;
    let hi = parse_quantity(parts[1], quantity)?;
    let n: usize = parts[2]
        .trim()
        .parse()
        .map_err(|_| format!("`{}` is not a point count", parts[2]))?;
    let spacing = match parts.get(3).map(|s| s.trim()) {
        None | Some("lin") => Spacing::Linear,
        Some("log") => Spacing::Log,
        Some(other) => return Err(format!("unknown spacing `{other}` (log or lin)")),
    };
    let r = Range { lo, hi, n, spacing };
    r.axis()?;
    Ok(r)
}

pub fn length(text: &str) -> Result<f64, String> {
    parse_quantity(text, Quantity::Length)
}

pub fn velocity(text: &str) -> Result<f64, String> {
    parse_quantity(text, Quantity::Velocity)
}

pub fn angle(text: &str) -> Result<f64, String> {
    parse_quantity(text, Quantity::Angle)
}

pub fn length_range(text: &str) -> Result<Range, String> {
    parse_range(text, Quantity::Length)
}

pub fn velocity_range(text: &str) -> Result<Range, String> {
    parse_range(text, Quantity::Velocity)
}

pub fn polarizability_range(text: &str) -> Result<Range, String> {
    parse_range(text, Quantity::Polarizability)
}

pub fn area_range(text: &str) -> Result<Range, String> {
    parse_range(text, Quantity::Area)
}

/// `col:row:width:height` in pixels.
pub fn rect(text: &str) -> Result<Rect, String> {
    let v: Vec<usize> = text
        .split(':')
        .map(|p| p.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|_| format!("`{text}` is not col:row:width:height"))?;
    match v[..] {
        [col, row, width, height] if width > 0 && height > 0 => Ok(Rect { col, row, width, height }),
        _ => Err(format!("`{text}` is not col:row:width:height with a non-empty size")),
    }
}

/// A fraction strictly between 0 and 1.
pub fn fraction(text: &str) -> Result<f64, String> {
    let v: f64 = text.trim().parse().map_err(|_| format!("`{text}` is not a number"))?;
    if v > 0.0 && v < 1.0 {
        Ok(v)
    } else {
        Err(format!("{v} is not in (0, 1)"))
    }
}
