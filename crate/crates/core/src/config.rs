//! Experiment configuration: physical parameters, beamline geometry and the
//! line-oriented `key = value` file format.
//!
//! ```text
//! # PcH2
//! [molecule]
//! mass = 514.5 u
//! alpha = 1.2 A3_4pie0
//! ...
//! [grating]
//! power = 0.96 W
//! ```
//!
//! Keys may also be written fully qualified (`grating.power = 0.96 W`)
//! without a section header. All values are converted to SI on parse and
//! [`ExperimentConfig::to_config_string`] writes them back in SI.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::units::{format_si, parse_key, Quantity};

/// Tolerance on φ_IC + φ_ISC + φ_F = 1.
pub const BRANCHING_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct MoleculeSpec {
    /// Mass (kg).
    pub mass: f64,
    /// Deep-UV polarisability (C·m²/V). The parser stores the magnitude;
    /// diffraction does not depend on the sign.
    pub alpha_duv: f64,
    /// Absorption cross section (m²).
    pub sigma_duv: f64,
    pub phi_ic: f64,
    pub phi_isc: f64,
    pub phi_f: f64,
    /// Probability that one absorbed photon removes the molecule from the beam.
    pub p_dep: f64,
    /// Fluorescence wavelength (m).
    pub lambda_f: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GratingSpec {
    /// Laser wavelength λ_L (m).
    pub lambda_l: f64,
    /// Incident power (W).
    pub power: f64,
    /// Vertical 1/e² intensity waist (m).
    pub waist_y: f64,
    /// Vertical centre of the laser beam y₀g (m).
    pub height: f64,
    /// Mirror power reflectivity η.
    pub reflectivity: f64,
}

impl GratingSpec {
    /// Grating period d = λ_L / 2.
    pub fn period(&self) -> f64 {
        self.lambda_l / 2.0
    }

    pub fn wavenumber(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.lambda_l
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeometrySpec {
    /// Source to collimation slit.
    pub l1: f64,
    /// Collimation slit to grating.
    pub l2: f64,
    /// Grating to velocity-selection slit.
    pub l2p: f64,
    /// Parsed but not used by the default station table.
    pub l3: f64,
    /// Grating to screen.
    pub l4: f64,
    /// Parsed but not used by the default station table.
    pub l4p: f64,
    pub slit1_width_x: f64,
    pub slit2_width_x: f64,
    pub slit1_width_y: f64,
    pub slit2_width_y: f64,
    /// Vertical centre of slit 1 (y₀1).
    pub slit1_height: f64,
    /// Vertical centre of slit 2 (y₀2).
    pub slit2_height: f64,
    /// Horizontal and vertical extent of the source.
    pub source_size: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourceSpec {
    pub temperature: f64,
    /// Forward velocity shift p₀z/m (m/s).
    pub v_shift: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorSpec {
    pub pixel_pitch: f64,
    pub width_px: usize,
    pub height_px: usize,
    /// Half-angle beyond which transverse kicks miss the detector (rad).
    pub acceptance_angle: f64,
    /// Horizontal position of the detector centre (m).
    pub x_center: f64,
    /// Vertical position of the detector centre (m).
    pub y_center: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvironmentSpec {
    /// Signed vertical gravitational acceleration (m/s²).
    pub g: f64,
    pub omega_x: f64,
    pub omega_y: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub molecule: MoleculeSpec,
    pub grating: GratingSpec,
    pub geometry: GeometrySpec,
    pub source: SourceSpec,
    pub detector: DetectorSpec,
    pub environment: EnvironmentSpec,
}

/// Longitudinal positions of the beamline elements, measured from the source.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stations {
    pub source: f64,
    pub slit1: f64,
    pub grating: f64,
    pub slit2: f64,
    pub screen: f64,
}

pub fn z_stations(geom: &GeometrySpec) -> Result<Stations> {
    let source = 0.0;
    let slit1 = geom.l1;
    let grating = slit1 + geom.l2;
    let slit2 = grating + geom.l2p;
    let screen = grating + geom.l4;
    let z = [source, slit1, grating, slit2, screen];
    let names = ["source", "slit1", "grating", "slit2", "screen"];
    for i in 1..z.len() {
        if !(z[i] > z[i - 1]) {
            return Err(Error::InvalidValue {
                key: "geometry".into(),
                message: format!(
                    "stations not monotone: {} at {} m is not downstream of {} at {} m",
                    names[i],
                    z[i],
                    names[i - 1],
                    z[i - 1]
                ),
            });
        }
    }
    Ok(Stations {
        source,
        slit1,
        grating,
        slit2,
        screen,
    })
}

/// Key/value pairs collected from a config document, keyed `section.name`.
struct RawConfig {
    entries: BTreeMap<String, (usize, String)>,
}

impl RawConfig {
    fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        let mut section: Option<String> = None;
        for (idx, raw_line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = match raw_line.find('#') {
                Some(pos) => &raw_line[..pos],
                None => raw_line,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest.strip_suffix(']').ok_or_else(|| Error::Syntax {
                    line: line_no,
                    message: format!("unterminated section header `{line}`"),
                })?;
                let name = name.trim();
                if !SECTIONS.contains(&name) {
                    return Err(Error::Syntax {
                        line: line_no,
                        message: format!("unknown section `[{name}]`"),
                    });
                }
                section = Some(name.to_string());
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Syntax {
                line: line_no,
                message: format!("expected `key = value`, found `{line}`"),
            })?;
            let key = key.trim();
            let full = match (&section, key.contains('.')) {
                (_, true) => key.to_string(),
                (Some(s), false) => format!("{s}.{key}"),
                (None, false) => {
                    return Err(Error::Syntax {
                        line: line_no,
                        message: format!("key `{key}` outside any section"),
                    })
                }
            };
            if !KEYS.iter().any(|k| k.name == full) {
                return Err(Error::UnknownKey(full));
            }
            if entries
                .insert(full.clone(), (line_no, value.trim().to_string()))
                .is_some()
            {
                return Err(Error::Syntax {
                    line: line_no,
                    message: format!("duplicate key `{full}`"),
                });
            }
        }
        Ok(RawConfig { entries })
    }

    fn text(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(_, v)| v.as_str())
    }

    fn get(&self, key: &str) -> Result<f64> {
        let spec = KEYS.iter().find(|k| k.name == key).expect("key table");
        let text = self
            .text(key)
            .ok_or_else(|| Error::MissingKey(key.to_string()))?;
        parse_key(key, text, spec.quantity)
    }

    fn get_or(&self, key: &str, default: f64) -> Result<f64> {
        if self.text(key).is_some() {
            self.get(key)
        } else {
            Ok(default)
        }
    }

    fn get_count(&self, key: &str) -> Result<usize> {
        let text = self
            .text(key)
            .ok_or_else(|| Error::MissingKey(key.to_string()))?;
        text.parse::<usize>().map_err(|_| Error::InvalidValue {
            key: key.to_string(),
            message: format!("`{text}` is not a non-negative integer"),
        })
    }
}

struct KeySpec {
    name: &'static str,
    quantity: Quantity,
}

const fn key(name: &'static str, quantity: Quantity) -> KeySpec {
    KeySpec { name, quantity }
}

const SECTIONS: [&str; 6] = ["molecule", "grating", "geometry", "source", "detector", "environment"];

use Quantity::*;

const KEYS: &[KeySpec] = &[
    key("molecule.mass", Mass),
    key("molecule.alpha", Polarizability),
    key("molecule.sigma", Area),
    key("molecule.phi_ic", Dimensionless),
    key("molecule.phi_isc", Dimensionless),
    key("molecule.phi_f", Dimensionless),
    key("molecule.p_dep", Dimensionless),
    key("molecule.lambda_f", Length),
    key("grating.wavelength", Length),
    key("grating.power", Power),
    key("grating.waist_y", Length),
    key("grating.height", Length),
    key("grating.reflectivity", Dimensionless),
    key("geometry.l1", Length),
    key("geometry.l2", Length),
    key("geometry.l2p", Length),
    key("geometry.l3", Length),
    key("geometry.l4", Length),
    key("geometry.l4p", Length),
    key("geometry.slit1_width_x", Length),
    key("geometry.slit2_width_x", Length),
    key("geometry.slit1_width_y", Length),
    key("geometry.slit2_width_y", Length),
    key("geometry.slit1_height", Length),
    key("geometry.slit2_height", Length),
    key("geometry.source_size", Length),
    key("source.temperature", Temperature),
    key("source.v_shift", Velocity),
    key("detector.pixel_pitch", Length),
    key("detector.width_px", Dimensionless),
    key("detector.height_px", Dimensionless),
    key("detector.acceptance_angle", Angle),
    key("detector.x_center", Length),
    key("detector.y_center", Length),
    key("environment.g", Acceleration),
    key("environment.omega_x", Rate),
    key("environment.omega_y", Rate),
];

fn check(ok: bool, field: &str, value: f64, bound: &str) -> Result<()> {
    if ok && value.is_finite() {
        Ok(())
    } else {
        Err(Error::bound(field, value, bound))
    }
}

impl ExperimentConfig {
    /// Parses and validates a configuration document.
    pub fn parse(text: &str) -> Result<Self> {
        let raw = RawConfig::parse(text)?;

        let grating = GratingSpec {
            lambda_l: raw.get("grating.wavelength")?,
            power: raw.get("grating.power")?,
            waist_y: raw.get("grating.waist_y")?,
            height: raw.get("grating.height")?,
            reflectivity: raw.get("grating.reflectivity")?,
        };
        let molecule = MoleculeSpec {
            mass: raw.get("molecule.mass")?,
            alpha_duv: raw.get("molecule.alpha")?.abs(),
            sigma_duv: raw.get("molecule.sigma")?,
            phi_ic: raw.get("molecule.phi_ic")?,
            phi_isc: raw.get("molecule.phi_isc")?,
            phi_f: raw.get("molecule.phi_f")?,
            p_dep: raw.get("molecule.p_dep")?,
            lambda_f: raw.get_or("molecule.lambda_f", grating.lambda_l)?,
        };
        let geometry = GeometrySpec {
            l1: raw.get("geometry.l1")?,
            l2: raw.get("geometry.l2")?,
            l2p: raw.get("geometry.l2p")?,
            l3: raw.get("geometry.l3")?,
            l4: raw.get("geometry.l4")?,
            l4p: raw.get("geometry.l4p")?,
            slit1_width_x: raw.get("geometry.slit1_width_x")?,
            slit2_width_x: raw.get("geometry.slit2_width_x")?,
            slit1_width_y: raw.get("geometry.slit1_width_y")?,
            slit2_width_y: raw.get("geometry.slit2_width_y")?,
            slit1_height: raw.get("geometry.slit1_height")?,
            slit2_height: raw.get("geometry.slit2_height")?,
            source_size: raw.get("geometry.source_size")?,
        };
        let source = SourceSpec {
            temperature: raw.get("source.temperature")?,
            v_shift: raw.get("source.v_shift")?,
        };
        let detector = DetectorSpec {
            pixel_pitch: raw.get("detector.pixel_pitch")?,
            width_px: raw.get_count("detector.width_px")?,
            height_px: raw.get_count("detector.height_px")?,
            acceptance_angle: raw.get("detector.acceptance_angle")?,
            x_center: raw.get_or("detector.x_center", 0.0)?,
            y_center: raw.get_or("detector.y_center", 0.0)?,
        };
        let environment = EnvironmentSpec {
            g: raw.get("environment.g")?,
            omega_x: raw.get("environment.omega_x")?,
            omega_y: raw.get("environment.omega_y")?,
        };
        let cfg = ExperimentConfig {
            molecule,
            grating,
            geometry,
            source,
            detector,
            environment,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks every invariant of the aggregate.
    pub fn validate(&self) -> Result<()> {
        let m = &self.molecule;
        check(m.mass > 0.0, "molecule.mass", m.mass, "> 0")?;
        check(m.alpha_duv.is_finite(), "molecule.alpha", m.alpha_duv, "finite")?;
        check(m.sigma_duv >= 0.0, "molecule.sigma", m.sigma_duv, ">= 0")?;
        for (name, v) in [
            ("molecule.phi_ic", m.phi_ic),
            ("molecule.phi_isc", m.phi_isc),
            ("molecule.phi_f", m.phi_f),
        ] {
            check((0.0..=1.0).contains(&v), name, v, "in [0, 1]")?;
        }
        let branching = m.phi_ic + m.phi_isc + m.phi_f;
        check(
            (branching - 1.0).abs() <= BRANCHING_TOLERANCE,
            "molecule.phi_ic + phi_isc + phi_f",
            branching,
            "= 1 within 1e-12",
        )?;
        check((0.0..=1.0).contains(&m.p_dep), "molecule.p_dep", m.p_dep, "in [0, 1]")?;
        check(m.lambda_f > 0.0, "molecule.lambda_f", m.lambda_f, "> 0")?;

        let g = &self.grating;
        check(g.lambda_l > 0.0, "grating.wavelength", g.lambda_l, "> 0")?;
        check(g.power >= 0.0, "grating.power", g.power, ">= 0")?;
        check(g.waist_y > 0.0, "grating.waist_y", g.waist_y, "> 0")?;
        check(g.height.is_finite(), "grating.height", g.height, "finite")?;
        check(
            (0.0..=1.0).contains(&g.reflectivity),
            "grating.reflectivity",
            g.reflectivity,
            "in [0, 1]",
        )?;

        let geo = &self.geometry;
        for (name, v) in [
            ("geometry.l1", geo.l1),
            ("geometry.l2", geo.l2),
            ("geometry.l2p", geo.l2p),
            ("geometry.l3", geo.l3),
            ("geometry.l4", geo.l4),
            ("geometry.l4p", geo.l4p),
            ("geometry.slit1_width_x", geo.slit1_width_x),
            ("geometry.slit2_width_x", geo.slit2_width_x),
            ("geometry.slit1_width_y", geo.slit1_width_y),
            ("geometry.slit2_width_y", geo.slit2_width_y),
            ("geometry.source_size", geo.source_size),
        ] {
            check(v > 0.0, name, v, "> 0")?;
        }
        check(geo.slit1_height.is_finite(), "geometry.slit1_height", geo.slit1_height, "finite")?;
        check(geo.slit2_height.is_finite(), "geometry.slit2_height", geo.slit2_height, "finite")?;
        z_stations(geo)?;

        let s = &self.source;
        check(s.temperature > 0.0, "source.temperature", s.temperature, "> 0")?;
        check(s.v_shift >= 0.0, "source.v_shift", s.v_shift, ">= 0")?;

        let d = &self.detector;
        check(d.pixel_pitch > 0.0, "detector.pixel_pitch", d.pixel_pitch, "> 0")?;
        check(d.width_px > 0, "detector.width_px", d.width_px as f64, "> 0")?;
        check(d.height_px > 0, "detector.height_px", d.height_px as f64, "> 0")?;
        // An infinite acceptance is allowed: it means "no angular cut".
        if !(d.acceptance_angle > 0.0) {
            return Err(Error::bound("detector.acceptance_angle", d.acceptance_angle, "> 0"));
        }
        check(d.x_center.is_finite(), "detector.x_center", d.x_center, "finite")?;
        check(d.y_center.is_finite(), "detector.y_center", d.y_center, "finite")?;

        let e = &self.environment;
        check(e.g.is_finite(), "environment.g", e.g, "finite")?;
        check(e.omega_x.is_finite(), "environment.omega_x", e.omega_x, "finite")?;
        check(e.omega_y.is_finite(), "environment.omega_y", e.omega_y, "finite")?;
        Ok(())
    }

    pub fn stations(&self) -> Result<Stations> {
        z_stations(&self.geometry)
    }

    /// Serializes to the config format with every value in SI units.
    /// Parsing the output reproduces `self` bit-exactly.
    pub fn to_config_string(&self) -> String {
        let m = &self.molecule;
        let g = &self.grating;
        let geo = &self.geometry;
        let d = &self.detector;
        let e = &self.environment;
        let mut out = String::new();
        let mut section = |name: &str, rows: &[(&str, String)]| {
            let _ = writeln!(out, "[{name}]");
            for (k, v) in rows {
                let _ = writeln!(out, "{k} = {v}");
            }
            out.push('\n');
        };
        section(
            "molecule",
            &[
                ("mass", format_si(m.mass, Mass)),
                ("alpha", format_si(m.alpha_duv, Polarizability)),
                ("sigma", format_si(m.sigma_duv, Area)),
                ("phi_ic", format_si(m.phi_ic, Dimensionless)),
                ("phi_isc", format_si(m.phi_isc, Dimensionless)),
                ("phi_f", format_si(m.phi_f, Dimensionless)),
                ("p_dep", format_si(m.p_dep, Dimensionless)),
                ("lambda_f", format_si(m.lambda_f, Length)),
            ],
        );
        section(
            "grating",
            &[
                ("wavelength", format_si(g.lambda_l, Length)),
                ("power", format_si(g.power, Power)),
                ("waist_y", format_si(g.waist_y, Length)),
                ("height", format_si(g.height, Length)),
                ("reflectivity", format_si(g.reflectivity, Dimensionless)),
            ],
        );
        section(
            "geometry",
            &[
                ("l1", format_si(geo.l1, Length)),
                ("l2", format_si(geo.l2, Length)),
                ("l2p", format_si(geo.l2p, Length)),
                ("l3", format_si(geo.l3, Length)),
                ("l4", format_si(geo.l4, Length)),
                ("l4p", format_si(geo.l4p, Length)),
                ("slit1_width_x", format_si(geo.slit1_width_x, Length)),
                ("slit2_width_x", format_si(geo.slit2_width_x, Length)),
                ("slit1_width_y", format_si(geo.slit1_width_y, Length)),
                ("slit2_width_y", format_si(geo.slit2_width_y, Length)),
                ("slit1_height", format_si(geo.slit1_height, Length)),
                ("slit2_height", format_si(geo.slit2_height, Length)),
                ("source_size", format_si(geo.source_size, Length)),
            ],
        );
        section(
            "source",
            &[
                ("temperature", format_si(self.source.temperature, Temperature)),
                ("v_shift", format_si(self.source.v_shift, Velocity)),
            ],
        );
        section(
            "detector",
            &[
                ("pixel_pitch", format_si(d.pixel_pitch, Length)),
                ("width_px", d.width_px.to_string()),
                ("height_px", d.height_px.to_string()),
                ("acceptance_angle", format_si(d.acceptance_angle, Angle)),
                ("x_center", format_si(d.x_center, Length)),
                ("y_center", format_si(d.y_center, Length)),
            ],
        );
        section(
            "environment",
            &[
                ("g", format_si(e.g, Acceleration)),
                ("omega_x", format_si(e.omega_x, Rate)),
                ("omega_y", format_si(e.omega_y, Rate)),
            ],
        );
        out
    }
}
