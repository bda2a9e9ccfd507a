use duv_diffraction::beamline::{prepare, render, synthesize_image, QuadratureSizes, RenderOutput, SimulationOptions};
use duv_diffraction::constants::{FOUR_PI_EPS0, HBAR};
use duv_diffraction::ExperimentConfig;

const PCH2: &str = include_str!("../../../configs/pch2.cfg");
const TPP: &str = include_str!("../../../configs/tpp.cfg");

fn pch2() -> ExperimentConfig {
    ExperimentConfig::parse(PCH2).unwrap()
}

fn small() -> SimulationOptions {
    SimulationOptions {
        quadrature: QuadratureSizes {
            source_points: 32,
            angles: 8,
            velocities: 16,
        },
        ..SimulationOptions::default()
    }
}

fn unnormalised(opts: SimulationOptions) -> SimulationOptions {
    SimulationOptions {
        normalize: false,
        ..opts
    }
}

fn column_sums(out: &RenderOutput) -> Vec<f64> {
    let w = out.image.width;
    let mut cols = vec![0.0; w];
    for row in out.image.data.chunks(w) {
        for (c, v) in cols.iter_mut().zip(row) {
            *c += v;
        }
    }
    cols
}

/// Intensity-weighted mean column over [lo, hi).
fn centroid(cols: &[f64], lo: usize, hi: usize) -> f64 {
    let (s, m) = (lo..hi).fold((0.0, 0.0), |(s, m), c| (s + cols[c], m + cols[c] * c as f64));
    m / s
}

#[test]
fn flux_is_conserved_without_losses() {
    let mut cfg = pch2();
    cfg.geometry.slit1_width_y = 20e-6;
    cfg.detector.acceptance_angle = f64::INFINITY;
    cfg.detector.pixel_pitch = 2e-6;
    cfg.detector.width_px = 1024;
    cfg.detector.height_px = 4000;
    cfg.detector.y_center = -3e-3;
    let opts = unnormalised(SimulationOptions {
        use_slit2: false,
        ..small()
    });
    let out = synthesize_image(&cfg, &opts).unwrap();
    let g = &cfg.geometry;
    let expected = (g.source_size * g.slit1_width_x / g.l1) * (g.source_size * g.slit1_width_y / g.l1);
    assert!((out.admitted / expected - 1.0).abs() < 1e-9, "{} vs {expected}", out.admitted);
    let rel = (out.detected / out.admitted - 1.0).abs();
    assert!(rel < 1e-6, "detected/admitted off by {rel:e}");
}

#[test]
fn image_is_mirror_symmetric_without_coriolis() {
    let mut cfg = pch2();
    cfg.environment.omega_x = 0.0;
    cfg.environment.omega_y = 0.0;
    let out = synthesize_image(&cfg, &small()).unwrap();
    let (w, h) = (out.image.width, out.image.height);
    let peak = out.image.data.iter().copied().fold(0.0, f64::max);
    let mut worst: f64 = 0.0;
    for r in 0..h {
        for c in 0..w / 2 {
            worst = worst.max((out.image.get(r, c) - out.image.get(r, w - 1 - c)).abs());
        }
    }
    assert!(worst <= 1e-9 * peak, "asymmetry {worst:e} of peak {peak:e}");

    // Earth's rotation breaks the symmetry by a measurable amount.
    let tilted = synthesize_image(&pch2(), &small()).unwrap();
    let mut skew: f64 = 0.0;
    for r in 0..h {
        for c in 0..w / 2 {
            skew = skew.max((tilted.image.get(r, c) - tilted.image.get(r, w - 1 - c)).abs());
        }
    }
    assert!(skew > 1e-3 * peak);
}

#[test]
fn phase_grating_populates_even_orders_only() {
    let mut cfg = pch2();
    cfg.molecule.sigma_duv = 0.0;
    cfg.molecule.alpha_duv = 24e-30 * FOUR_PI_EPS0;
    let opts = SimulationOptions {
        fixed_velocity: Some(150.0),
        ..small()
    };
    let prep = prepare(&cfg, &opts).unwrap();
    let out = render(&prep, &cfg.molecule, &cfg.grating, &opts).unwrap();
    let total: f64 = out.order_mass.values().sum();
    for (j, m) in &out.order_mass {
        if j % 2 != 0 {
            assert!(*m <= 1e-15 * total, "order {j} carries {m:e}");
        }
    }
    let unit = prep.order_spacing()[0].1 / cfg.detector.pixel_pitch;
    let cols = column_sums(&out);
    let c0 = cols.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
    let window = |centre: f64| {
        let lo = (centre - 0.5 * unit).round() as usize;
        (lo, lo + unit.round() as usize)
    };
    let (lo, hi) = window(c0 as f64);
    let centre = centroid(&cols, lo, hi);
    for n in [-2i64, 2, -4, 4] {
        let expect = centre + n as f64 * unit;
        let (lo, hi) = window(expect);
        let got = centroid(&cols, lo, hi);
        assert!((got - expect).abs() < 0.5, "order {n}: {got} vs {expect}");
    }
}

#[test]
fn efficient_depletion_suppresses_odd_orders() {
    let mut cfg = pch2();
    cfg.molecule.p_dep = 1.0;
    let out = synthesize_image(&cfg, &small()).unwrap();
    assert!(out.odd_fraction() < 1e-3, "odd fraction {}", out.odd_fraction());
    assert!(out.transmitted < out.on_window);
}

#[test]
fn slower_molecules_land_lower() {
    let mut cfg = pch2();
    cfg.grating.power = 0.0;
    let mut last = f64::NEG_INFINITY;
    for v in [450.0, 300.0, 200.0, 160.0, 130.0] {
        let opts = SimulationOptions {
            fixed_velocity: Some(v),
            ..small()
        };
        let out = synthesize_image(&cfg, &opts).unwrap();
        let w = out.image.width;
        let (s, m) = out
            .image
            .data
            .chunks(w)
            .enumerate()
            .fold((0.0, 0.0), |(s, m), (r, row)| {
                let t: f64 = row.iter().sum();
                (s + t, m + t * r as f64)
            });
        // Row indices grow downwards.
        let row = m / s;
        assert!(row > last, "{v} m/s at row {row}, faster class at {last}");
        last = row;
    }
}

#[test]
fn adjacent_orders_are_forty_pixels_apart_at_150() {
    let cfg = pch2();
    let opts = SimulationOptions {
        fixed_velocity: Some(150.0),
        ..small()
    };
    let prep = prepare(&cfg, &opts).unwrap();
    let (v, shift) = prep.order_spacing()[0];
    assert_eq!(v, 150.0);
    let oracle = HBAR * 2.0 * std::f64::consts::PI / 266e-9 / (514.5 * 1.660_539_066_60e-27 * 150.0) * 0.69;
    assert!((shift / oracle - 1.0).abs() < 1e-9);
    assert!((shift - 13.4e-6).abs() < 0.5e-6, "{shift:e}");
    assert!((shift / 0.33e-6 - 40.0).abs() < 2.0);
}

#[test]
fn no_laser_leaves_a_single_stripe_of_geometric_width() {
    let mut cfg = pch2();
    cfg.grating.power = 0.0;
    cfg.environment.omega_x = 0.0;
    cfg.environment.omega_y = 0.0;
    let out = synthesize_image(&cfg, &small()).unwrap();
    assert_eq!(out.order_mass.keys().copied().collect::<Vec<_>>(), vec![0]);
    let cols = column_sums(&out);
    let lit: Vec<usize> = (0..cols.len()).filter(|&c| cols[c] > 0.0).collect();
    let (first, last) = (lit[0], *lit.last().unwrap());
    assert_eq!(lit.len(), last - first + 1, "stripe is not contiguous");
    // Slit 1 and slit 2 bound the beam; the source is wide enough not to.
    let st = cfg.stations().unwrap();
    let g = &cfg.geometry;
    let full = (g.slit1_width_x * (st.screen - st.slit2) + g.slit2_width_x * (st.screen - st.slit1)) / (st.slit2 - st.slit1);
    let px = full / cfg.detector.pixel_pitch;
    let width = (last - first + 1) as f64;
    assert!((width - px).abs() <= 2.0, "stripe {width} px, geometric {px:.2} px");
}

#[test]
fn absorbing_molecule_shows_more_odd_order_mass() {
    let tpp = ExperimentConfig::parse(TPP).unwrap();
    let ratio_tpp = synthesize_image(&tpp, &small()).unwrap().odd_even_ratio();
    let ratio_pch2 = synthesize_image(&pch2(), &small()).unwrap().odd_even_ratio();
    assert!(ratio_pch2 > 0.2, "PcH2 odd/even {ratio_pch2}");
    assert!(ratio_tpp < ratio_pch2, "TPP {ratio_tpp} vs PcH2 {ratio_pch2}");
}

#[test]
fn worker_count_does_not_change_the_image() {
    let cfg = pch2();
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| synthesize_image(&cfg, &small()).unwrap().image.data)
    };
    let one = run(1);
    for threads in [3, 8] {
        assert!(one.iter().zip(run(threads)).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
}
