//! Whitelisted unit suffixes for configuration values and numeric CLI flags.
//!
//! A quantity is written as a number immediately or whitespace-separated
//! followed by a suffix, e.g. `16 um`, `8.5e-21m2`, `0.96 W`. Each
//! [`Quantity`] accepts only its own suffixes and converts to SI.

use crate::constants::{ATOMIC_MASS_UNIT, FOUR_PI_EPS0};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quantity {
    Mass,
    Length,
    Area,
    Power,
    Temperature,
    Polarizability,
    Velocity,
    Acceleration,
    Rate,
    Angle,
    Dimensionless,
}

impl Quantity {
    /// Accepted suffixes and their SI scale factors. The first entry is the
    /// SI suffix written by the serializer.
    pub fn suffixes(self) -> &'static [(&'static str, f64)] {
        match self {
            Quantity::Mass => &[("kg", 1.0), ("u", ATOMIC_MASS_UNIT)],
            Quantity::Length => &[("m", 1.0), ("mm", 1e-3), ("um", 1e-6), ("nm", 1e-9)],
            Quantity::Area => &[("m2", 1.0), ("cm2", 1e-4)],
            Quantity::Power => &[("W", 1.0), ("mW", 1e-3)],
            Quantity::Temperature => &[("K", 1.0)],
            Quantity::Polarizability => &[("Cm2_V", 1.0), ("A3_4pie0", 1e-30 * FOUR_PI_EPS0)],
            Quantity::Velocity => &[("mps", 1.0)],
            Quantity::Acceleration => &[("mps2", 1.0)],
            Quantity::Rate => &[("per_s", 1.0)],
            Quantity::Angle => &[("rad", 1.0), ("mrad", 1e-3), ("urad", 1e-6), ("deg", std::f64::consts::PI / 180.0)],
            Quantity::Dimensionless => &[("", 1.0)],
        }
    }

    pub fn si_suffix(self) -> &'static str {
        self.suffixes()[0].0
    }
}

/// Splits `text` into its longest numeric prefix and the trailing suffix.
fn split_number(text: &str) -> Option<(f64, &str)> {
    let text = text.trim();
    if let Some((num, unit)) = text.split_once(char::is_whitespace) {
        return num.parse::<f64>().ok().map(|v| (v, unit.trim()));
    }
    (1..=text.len())
        .rev()
        .filter(|&i| text.is_char_boundary(i))
        .find_map(|i| text[..i].parse::<f64>().ok().map(|v| (v, &text[i..])))
}

/// Parses `text` as `quantity` and returns its SI value.
///
/// A bare number is accepted for dimensionless quantities only.
pub fn parse_quantity(text: &str, quantity: Quantity) -> std::result::Result<f64, String> {
    let (value, suffix) = split_number(text).ok_or_else(|| format!("`{text}` is not a number"))?;
    if !value.is_finite() {
        return Err(format!("`{text}` is not finite"));
    }
    let scale = quantity
        .suffixes()
        .iter()
        .find(|(s, _)| *s == suffix)
        .map(|(_, f)| *f)
        .ok_or_else(|| {
            let allowed: Vec<_> = quantity
                .suffixes()
                .iter()
                .map(|(s, _)| if s.is_empty() { "<none>" } else { s })
                .collect();
            format!("unit `{suffix}` not accepted here (allowed: {})", allowed.join(", "))
        })?;
    Ok(value * scale)
}

pub(crate) fn parse_key(key: &str, text: &str, quantity: Quantity) -> Result<f64> {
    parse_quantity(text, quantity).map_err(|message| Error::InvalidValue {
        key: key.to_string(),
        message,
    })
}

/// Formats an SI value with its SI suffix so that it parses back bit-exactly.
pub fn format_si(value: f64, quantity: Quantity) -> String {
    let suffix = quantity.si_suffix();
    if suffix.is_empty() {
        format!("{value:e}")
    } else {
        format!("{value:e} {suffix}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suffix_forms() {
        assert_eq!(parse_quantity("16 um", Quantity::Length).unwrap(), 16e-6);
        assert_eq!(parse_quantity("16um", Quantity::Length).unwrap(), 16e-6);
        assert_eq!(parse_quantity("8.5e-21m2", Quantity::Area).unwrap(), 8.5e-21);
        assert_eq!(parse_quantity("-9.81 mps2", Quantity::Acceleration).unwrap(), -9.81);
        assert_eq!(parse_quantity("0.5", Quantity::Dimensionless).unwrap(), 0.5);
        assert!((parse_quantity("514.5 u", Quantity::Mass).unwrap() - 514.5 * ATOMIC_MASS_UNIT).abs() < 1e-40);
    }

    #[test]
    fn rejects_wrong_or_missing_units() {
        assert!(parse_quantity("16 W", Quantity::Length).is_err());
        assert!(parse_quantity("16", Quantity::Length).is_err());
        assert!(parse_quantity("abc", Quantity::Length).is_err());
        assert!(parse_quantity("inf m", Quantity::Length).is_err());
    }

    #[test]
    fn si_formatting_round_trips() {
        for &v in &[1.335e-40, 0.1 + 0.2, -4.9e-5, 514.5 * ATOMIC_MASS_UNIT] {
            let s = format_si(v, Quantity::Polarizability);
            assert_eq!(parse_quantity(&s, Quantity::Polarizability).unwrap().to_bits(), v.to_bits());
        }
    }
}
