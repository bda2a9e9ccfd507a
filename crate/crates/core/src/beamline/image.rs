use crate::config::DetectorSpec;
use crate::error::{Error, Result};

/// Row-major intensity map on the screen. Row 0 is the top (largest y),
/// column 0 the left edge (smallest x).
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorImage {
    pub width: usize,
    pub height: usize,
    pub pixel_pitch: f64,
    /// Screen position of the image centre (m).
    pub x_center: f64,
    pub y_center: f64,
    pub data: Vec<f64>,
    pub normalized: bool,
}

impl DetectorImage {
    pub fn zeros(det: &DetectorSpec) -> Self {
        DetectorImage {
            width: det.width_px,
            height: det.height_px,
            pixel_pitch: det.pixel_pitch,
            x_center: det.x_center,
            y_center: det.y_center,
            data: vec![0.0; det.width_px * det.height_px],
            normalized: false,
        }
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.width..(row + 1) * self.width]
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Left edge of column 0 on the screen.
    pub fn x_left(&self) -> f64 {
        self.x_center - 0.5 * self.width as f64 * self.pixel_pitch
    }

    /// Top edge of row 0 on the screen.
    pub fn y_top(&self) -> f64 {
        self.y_center + 0.5 * self.height as f64 * self.pixel_pitch
    }

    pub fn column_x(&self, col: usize) -> f64 {
        self.x_left() + (col as f64 + 0.5) * self.pixel_pitch
    }

    pub fn row_y(&self, row: usize) -> f64 {
        self.y_top() - (row as f64 + 0.5) * self.pixel_pitch
    }

    /// Pixel containing the screen point (x, y), if any.
    pub fn pixel_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let c = ((x - self.x_left()) / self.pixel_pitch).floor();
        let r = ((self.y_top() - y) / self.pixel_pitch).floor();
        if c >= 0.0 && r >= 0.0 && (c as usize) < self.width && (r as usize) < self.height {
            Some((r as usize, c as usize))
        } else {
            None
        }
    }

    /// Scales the image to unit sum.
    pub fn normalize(&mut self) -> Result<()> {
        let total = self.sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::Numerical(format!("cannot normalise image with total {total}")));
        }
        for v in &mut self.data {
            *v /= total;
        }
        self.normalized = true;
        Ok(())
    }
}
