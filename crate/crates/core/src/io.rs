//! Raster file formats: binary 16-bit graymaps (P5) and plain float CSV.
//!
//! Graymaps written here carry `# offset` and `# scale` comments so that
//! pixel value = offset + scale·code; files without them read back as raw
//! codes. CSV cells use the shortest representation that parses back to
//! the same f64, so CSV round trips are exact.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// A bare row-major raster.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Grid {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Grid> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a {width}x{height} raster",
                data.len()
            )));
        }
        Ok(Grid { width, height, data })
    }
}

const MAX_CODE: f64 = 65535.0;

/// Encodes `data` as a 16-bit P5 graymap spanning its value range.
pub fn encode_pgm16(width: usize, height: usize, data: &[f64]) -> Result<Vec<u8>> {
    if data.len() != width * height {
        return Err(Error::DimensionMismatch(format!("{} values for {width}x{height}", data.len())));
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("cannot encode non-finite pixel".into()));
    }
    let lo = data.iter().copied().fold(f64::INFINITY, f64::min).min(0.0);
    let hi = data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let scale = if hi > lo { (hi - lo) / MAX_CODE } else { 1.0 };
    let mut out = format!("P5\n# offset {lo:e}\n# scale {scale:e}\n{width} {height}\n65535\n").into_bytes();
    out.reserve(2 * data.len());
    for v in data {
        let code = ((v - lo) / scale).round().clamp(0.0, MAX_CODE) as u16;
        out.extend_from_slice(&code.to_be_bytes());
    }
    Ok(out)
}

/// Decodes an 8- or 16-bit P5 graymap.
pub fn decode_pgm(bytes: &[u8]) -> Result<Grid> {
    decode_pgm_with(bytes, true)
}

fn decode_pgm_with(bytes: &[u8], apply_scale: bool) -> Result<Grid> {
    let mut pos = 0;
    let mut offset = 0.0;
    let mut scale = 1.0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos >= bytes.len() {
            return Err(Error::Data("truncated graymap header".into()));
        }
        if bytes[pos] == b'#' {
            let end = bytes[pos..].iter().position(|&b| b == b'\n').map_or(bytes.len(), |e| pos + e);
            let comment = String::from_utf8_lossy(&bytes[pos + 1..end]);
            let mut words = comment.split_whitespace();
            match (words.next(), words.next().map(str::parse::<f64>)) {
                (Some("offset"), Some(Ok(v))) if apply_scale => offset = v,
                (Some("scale"), Some(Ok(v))) if apply_scale => scale = v,
                _ => {}
            }
            pos = end;
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if fields[0] != "P5" {
        return Err(Error::Data(format!("not a binary graymap (magic `{}`)", fields[0])));
    }
    let num = |s: &str, what: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::Data(format!("bad graymap {what} `{s}`")))
    };
    let width = num(&fields[1], "width")?;
    let height = num(&fields[2], "height")?;
    let maxval = num(&fields[3], "maxval")?;
    if maxval == 0 || maxval > 65535 {
        return Err(Error::Data(format!("graymap maxval {maxval} out of range")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let depth = if maxval > 255 { 2 } else { 1 };
    let body = bytes.get(pos..).unwrap_or_default();
    if body.len() < width * height * depth {
        return Err(Error::Data(format!(
            "graymap raster holds {} bytes, expected {}",
            body.len(),
            width * height * depth
        )));
    }
    let data = (0..width * height)
        .map(|i| {
            let code = if depth == 2 {
                u16::from_be_bytes([body[2 * i], body[2 * i + 1]]) as f64
            } else {
                body[i] as f64
            };
            offset + scale * code
        })
        .collect();
    Grid::new(width, height, data)
}

pub fn encode_csv(width: usize, data: &[f64]) -> String {
    let mut out = String::with_capacity(data.len() * 12);
    for row in data.chunks(width) {
        for (i, v) in row.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    out
}

pub fn decode_csv(text: &str) -> Result<Grid> {
    let mut width = 0;
    let mut data = Vec::new();
    let mut height = 0;
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let before = data.len();
        for cell in line.split(',') {
            let v: f64 = cell
                .trim()
                .parse()
                .map_err(|_| Error::Data(format!("line {}: `{}` is not a number", n + 1, cell.trim())))?;
            data.push(v);
        }
        let w = data.len() - before;
        if height == 0 {
            width = w;
        } else if w != width {
            return Err(Error::Data(format!("line {}: {w} columns, expected {width}", n + 1)));
        }
        height += 1;
    }
    if height == 0 {
        return Err(Error::Data("empty CSV raster".into()));
    }
    Grid::new(width, height, data)
}

fn is_graymap(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("pgm" | "p5")
    )
}

/// Reads a raster, choosing the format from the extension (`.pgm`/`.p5`
/// for graymaps, anything else as CSV).
pub fn read_raster(path: &Path) -> Result<Grid> {
    if is_graymap(path) {
        decode_pgm(&fs::read(path)?)
    } else {
        decode_csv(&fs::read_to_string(path)?)
    }
}

pub fn write_pgm16(path: &Path, width: usize, height: usize, data: &[f64]) -> Result<()> {
    let bytes = encode_pgm16(width, height, data)?;
    fs::File::create(path)?.write_all(&bytes)?;
    Ok(())
}

pub fn write_csv(path: &Path, width: usize, data: &[f64]) -> Result<()> {
    fs::write(path, encode_csv(width, data))?;
    Ok(())
}

/// Reads a pixel mask graymap; raw code 0 marks an excluded pixel.
pub fn read_mask(path: &Path) -> Result<(usize, usize, Vec<bool>)> {
    let g = decode_pgm_with(&fs::read(path)?, false)?;
    Ok((g.width, g.height, g.data.iter().map(|&c| c != 0.0).collect()))
}

/// Encodes a boolean mask as an 8-bit graymap (255 = included).
pub fn encode_mask(width: usize, height: usize, mask: &[bool]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(mask.iter().map(|&m| if m { 255u8 } else { 0 }));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn csv_round_trip_is_exact() {
        let data = vec![0.1, -2.5e-300, 1.0 / 3.0, 0.0, 7.0, f64::MIN_POSITIVE];
        let g = decode_csv(&encode_csv(3, &data)).unwrap();
        assert_eq!((g.width, g.height), (3, 2));
        assert_eq!(g.data, data);
    }

    #[test]
    fn ragged_csv_rejected() {
        assert!(decode_csv("1,2,3\n4,5\n").is_err());
        assert!(decode_csv("1,x\n").is_err());
        assert!(decode_csv("\n").is_err());
    }

    #[test]
    fn pgm_quantisation_within_half_code() {
        let data: Vec<f64> = (0..12).map(|i| (i as f64 * 0.37).sin()).collect();
        let bytes = encode_pgm16(4, 3, &data).unwrap();
        let g = decode_pgm(&bytes).unwrap();
        let (lo, hi) = (-1.0f64, 1.0f64);
        let half_code = 0.5 * (hi - lo) / 65535.0;
        for (a, b) in g.data.iter().zip(&data) {
            assert!((a - b).abs() <= half_code + 1e-15, "{a} vs {b}");
        }
    }

    #[test]
    fn plain_8bit_graymap_reads_raw_codes() {
        let mut bytes = b"P5\n# made by hand\n3 1\n255\n".to_vec();
        bytes.extend([0u8, 17, 255]);
        let g = decode_pgm(&bytes).unwrap();
        assert_eq!(g.data, vec![0.0, 17.0, 255.0]);
    }

    #[test]
    fn truncated_graymap_rejected() {
        let mut bytes = b"P5\n2 2\n65535\n".to_vec();
        bytes.extend([0u8, 1, 0]);
        assert!(decode_pgm(&bytes).is_err());
        assert!(decode_pgm(b"P2\n1 1\n255\n0").is_err());
    }

    #[test]
    fn mask_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.pgm");
        let mask = vec![true, false, true, true, false, false];
        fs::write(&p, encode_mask(3, 2, &mask)).unwrap();
        let (w, h, m) = read_mask(&p).unwrap();
        assert_eq!((w, h), (3, 2));
        assert_eq!(m, mask);
    }

    proptest! {
        #[test]
        fn csv_round_trips_any_finite(values in prop::collection::vec(-1e300f64..1e300, 1..40)) {
            let g = decode_csv(&encode_csv(values.len(), &values)).unwrap();
            prop_assert_eq!(g.data, values);
        }
    }
}
