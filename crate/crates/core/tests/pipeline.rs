use duv_diffraction::imageproc::{Pipeline, Provenance, RawImage, Rect};

const W: usize = 800;
const H: usize = 600;
const PEAK: f64 = 100.0;
const BLOB_SIGMA: f64 = 12.0;
const TILT_DEG: f64 = 0.4;

/// Where content at processed position (row, col) sits in a frame whose
/// content is tilted by −TILT_DEG about the centre.
fn raw_position(row: f64, col: f64) -> (f64, f64) {
    let (cx, cy) = (0.5 * (W - 1) as f64, 0.5 * (H - 1) as f64);
    let (s, c) = TILT_DEG.to_radians().sin_cos();
    // Display coordinates with y up; a clockwise turn by θ.
    let (x, y) = (col - cx, cy - row);
    let (xr, yr) = (c * x + s * y, -s * x + c * y);
    (cy - yr, cx + xr)
}

struct Fixture {
    raw: RawImage,
    bright: RawImage,
    truth: (f64, f64),
    crop: Rect,
}

fn fixture() -> Fixture {
    let truth = (310.0, 420.0);
    let (br, bc) = raw_position(truth.0, truth.1);
    let bright: Vec<f64> = (0..W * H).map(|i| 20.0 + 0.003 * (i % W) as f64).collect();
    let mut raw: Vec<f64> = (0..W * H)
        .map(|i| {
            let (r, c) = ((i / W) as f64, (i % W) as f64);
            let plane = 50.0 + 0.01 * c - 0.02 * r;
            let d2 = (r - br).powi(2) + (c - bc).powi(2);
            bright[i] + plane + PEAK * (-d2 / (2.0 * BLOB_SIGMA * BLOB_SIGMA)).exp()
        })
        .collect();
    for &(r, c, v) in &[
        (20, 30, 6e4),
        (500, 700, 6e4),
        (250, 300, 3e4),
        (580, 10, 6e4),
        (100, 650, -5e3),
        (400, 250, -5e3),
        (5, 795, -5e3),
    ] {
        raw[r * W + c] = v;
    }
    Fixture {
        raw: RawImage::new(W, H, 0.33e-6, raw, Provenance::DarkSubtracted).unwrap(),
        bright: RawImage::new(W, H, 0.33e-6, bright, Provenance::DarkSubtracted).unwrap(),
        truth,
        crop: Rect {
            col: 200,
            row: 150,
            width: 440,
            height: 300,
        },
    }
}

#[test]
fn chain_recovers_blob_and_flattens_background() {
    let f = fixture();
    let out = Pipeline::new(f.crop).run(&f.raw, &[&f.bright]).unwrap();
    assert_eq!((out.width, out.height), (440, 300));
    assert_eq!(out.provenance, Provenance::Processed);
    let (tr, tc) = (f.truth.0 - 150.0, f.truth.1 - 200.0);
    let valid = out.valid.clone().unwrap();
    let (mut s, mut sr, mut sc) = (0.0, 0.0, 0.0);
    let (mut bg, mut nbg) = (0.0, 0usize);
    for r in 0..out.height {
        for c in 0..out.width {
            let i = r * out.width + c;
            if !valid[i] {
                continue;
            }
            let d = ((r as f64 - tr).powi(2) + (c as f64 - tc).powi(2)).sqrt();
            let v = out.data[i];
            if d < 6.0 * BLOB_SIGMA {
                s += v;
                sr += v * r as f64;
                sc += v * c as f64;
            } else {
                bg += v;
                nbg += 1;
            }
        }
    }
    let err = ((sr / s - tr).powi(2) + (sc / s - tc).powi(2)).sqrt();
    assert!(err < 0.5, "centroid error {err} px");
    let bg_mean = bg / nbg as f64;
    assert!(bg_mean.abs() < 1e-3 * PEAK, "background mean {bg_mean}");
}

#[test]
fn constant_frame_over_its_bright_frame_processes_to_zero() {
    let f = fixture();
    let flat = RawImage::new(W, H, 0.33e-6, f.bright.data.clone(), Provenance::DarkSubtracted).unwrap();
    let out = Pipeline::new(f.crop).run(&flat, &[&f.bright]).unwrap();
    assert!(out.data.iter().all(|v| v.abs() < 1e-12));
}
