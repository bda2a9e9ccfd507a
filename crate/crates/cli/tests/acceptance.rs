//! Acceptance checks, one PASS/FAIL line each. Runs as a plain binary so
//! the verdicts are always printed; exits non-zero if any check fails.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use duv_diffraction::beamline::{prepare, render, synthesize_image, QuadratureSizes, SimulationOptions};
use duv_diffraction::constants::{ATOMIC_MASS_UNIT, FOUR_PI_EPS0, PLANCK};
use duv_diffraction::grating::{
    channel_amplitudes, fluorescence_kernel, kick_distribution, ChannelOptions, GratingStrength, KickDistribution,
};
use duv_diffraction::io::read_raster;
use duv_diffraction::ExperimentConfig;
use serde_json::Value;

const PCH2: &str = include_str!("../../../configs/pch2.cfg");
const ZNPC: &str = include_str!("../../../configs/znpc_nbe4.cfg");
const LAMBDA_L: f64 = 266e-9;

fn pch2() -> ExperimentConfig {
    ExperimentConfig::parse(PCH2).unwrap()
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_duvdiff"))
}

fn run(cmd: &mut Command) -> Result<(), String> {
    let out = cmd.output().map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{:?}: {}", out.status, String::from_utf8_lossy(&out.stderr)))
    }
}

fn strength(phi0: f64, n0: f64) -> GratingStrength {
    GratingStrength {
        phi0,
        n0,
        n_uniform: 0.0,
        lambda_l: LAMBDA_L,
    }
}

fn kicks(phi0: f64, n0: f64, mol: &duv_diffraction::config::MoleculeSpec) -> KickDistribution {
    let cs = channel_amplitudes(&strength(phi0, n0), &ChannelOptions::default()).unwrap();
    kick_distribution(&cs, mol)
}

/// J_n(x) from its power series; exact to rounding for the small
/// arguments used here.
fn bessel_j(n: u32, x: f64) -> f64 {
    let h = 0.5 * x;
    let mut term = h.powi(n as i32) / (1..=n).map(f64::from).product::<f64>();
    let mut sum = term;
    for k in 1..60 {
        term *= -h * h / (k as f64 * (k + n) as f64);
        sum += term;
    }
    sum
}

/// Mean over one grating period of the Poisson probability of m photons
/// at local mean n0·cos²(kx), by the midpoint rule (spectrally accurate
/// for periodic integrands).
fn averaged_poisson(m: usize, n0: f64) -> f64 {
    let samples = 4096;
    let ln_fact: f64 = (2..=m).map(|k| (k as f64).ln()).sum();
    (0..samples)
        .map(|i| {
            let t = std::f64::consts::PI * (i as f64 + 0.5) / samples as f64;
            let nbar = n0 * t.cos().powi(2);
            if nbar == 0.0 {
                if m == 0 {
                    1.0
                } else {
                    0.0
                }
            } else {
                (m as f64 * nbar.ln() - nbar - ln_fact).exp()
            }
        })
        .sum::<f64>()
        / samples as f64
}

fn column_sums(data: &[f64], width: usize) -> Vec<f64> {
    let mut cols = vec![0.0; width];
    for row in data.chunks(width) {
        for (c, v) in cols.iter_mut().zip(row) {
            *c += v;
        }
    }
    cols
}

fn centroid(cols: &[f64], lo: usize, hi: usize) -> f64 {
    let (s, m) = (lo..hi).fold((0.0, 0.0), |(s, m), c| (s + cols[c], m + cols[c] * c as f64));
    m / s
}

type Outcome = Result<String, String>;

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn bessel_oracle() -> Outcome {
    let start = Instant::now();
    let mut mol = pch2().molecule;
    mol.sigma_duv = 0.0;
    let mut worst: f64 = 0.0;
    for phi0 in [0.5, 2.0, 5.4] {
        let kd = kicks(phi0, 0.0, &mol);
        for n in 0..=6u32 {
            let want = bessel_j(n, 0.5 * phi0).powi(2);
            for j in [2 * n as i64, -2 * n as i64] {
                worst = worst.max((kd.discrete(j) - want).abs());
            }
            worst = worst.max(kd.discrete(2 * n as i64 + 1).abs());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        worst <= 1e-6 && secs < 1.0,
        format!("max |P - J_n^2| = {worst:.2e} (tol 1e-6), {secs:.3} s (< 1 s)"),
    )
}

fn poisson_oracle() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut channels = 0;
    for n0 in [0.1, 1.0, 14.6] {
        let cs = channel_amplitudes(&strength(1.0, n0), &ChannelOptions::default()).unwrap();
        for ch in &cs.channels {
            worst = worst.max((ch.mass() - averaged_poisson(ch.absorbed, n0)).abs());
            channels += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        worst <= 1e-8 && secs < 5.0,
        format!("{channels} channels, max mass error {worst:.2e} (tol 1e-8), {secs:.3} s (< 5 s)"),
    )
}

fn norm_conservation() -> Outcome {
    let mut mol = pch2().molecule;
    mol.p_dep = 0.0;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for phi_f in [0.0, 0.37, 1.0] {
        mol.phi_f = phi_f;
        mol.phi_isc = 1.0 - phi_f;
        mol.phi_ic = 0.0;
        for phi0 in [0.0, 0.5, 2.0, 5.4, 12.0] {
            for n0 in [0.0, 0.1, 1.0, 14.6, 40.0] {
                let kd = kicks(phi0, n0, &mol);
                let total = kd.discrete_total() + kd.smear_total();
                lo = lo.min(total);
                hi = hi.max(total);
            }
        }
    }
    verdict(
        lo >= 1.0 - 1e-6 && hi <= 1.0 + 1e-12,
        format!("total mass in [1 {:+.2e}, 1 {:+.2e}]", lo - 1.0, hi - 1.0),
    )
}

fn parity_and_symmetry() -> Outcome {
    let mut worst_rel: f64 = 0.0;
    for (phi0, n0) in [(0.5, 0.1), (2.0, 1.0), (5.4, 14.6)] {
        let cs = channel_amplitudes(&strength(phi0, n0), &ChannelOptions::default()).unwrap();
        for ch in &cs.channels {
            let scale = ch.orders().map(|(_, c)| c.norm()).fold(0.0, f64::max);
            if scale == 0.0 {
                continue;
            }
            for (j, c) in ch.orders() {
                if (ch.absorbed as i64 + j) % 2 != 0 {
                    worst_rel = worst_rel.max(c.norm() / scale);
                }
            }
        }
    }
    let mut cfg = pch2();
    cfg.environment.omega_x = 0.0;
    cfg.environment.omega_y = 0.0;
    let img = synthesize_image(&cfg, &SimulationOptions::default()).unwrap().image;
    let peak = img.data.iter().copied().fold(0.0, f64::max);
    let mut asym: f64 = 0.0;
    for r in 0..img.height {
        for c in 0..img.width / 2 {
            asym = asym.max((img.get(r, c) - img.get(r, img.width - 1 - c)).abs());
        }
    }
    verdict(
        worst_rel <= 1e-12 && asym <= 1e-9 * peak,
        format!(
            "odd m+j amplitude {worst_rel:.1e} (tol 1e-12); mirror asymmetry {:.1e} of peak (tol 1e-9)",
            asym / peak
        ),
    )
}

fn geometry() -> Outcome {
    let cfg = pch2();
    let opts = SimulationOptions {
        fixed_velocity: Some(150.0),
        ..SimulationOptions::default()
    };
    let prep = prepare(&cfg, &opts).unwrap();
    let out = render(&prep, &cfg.molecule, &cfg.grating, &opts).unwrap();
    let pitch = cfg.detector.pixel_pitch;
    // Independent lever arm: grating to screen is l4.
    let oracle = PLANCK / LAMBDA_L / (514.5 * ATOMIC_MASS_UNIT * 150.0) * cfg.geometry.l4;
    let model = prep.order_spacing()[0].1;
    let cols = column_sums(&out.image.data, out.image.width);
    let c0 = cols.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0 as f64;
    let unit = oracle / pitch;
    let window = |centre: f64| {
        let lo = (centre - 0.5 * unit).round() as usize;
        (lo, lo + unit.round() as usize)
    };
    let (lo, hi) = window(c0);
    let zero = centroid(&cols, lo, hi);
    let (lo, hi) = window(zero + unit);
    let plus = centroid(&cols, lo, hi);
    let (lo, hi) = window(zero - unit);
    let minus = centroid(&cols, lo, hi);
    let measured = 0.5 * (plus - minus);
    let ok = (oracle - 13.4e-6).abs() <= 0.5e-6
        && (model / oracle - 1.0).abs() < 1e-9
        && (measured - 40.0).abs() <= 2.0
        && (measured * pitch - 13.4e-6).abs() <= 0.5e-6;
    verdict(
        ok,
        format!(
            "hbar k/(m v) L4 = {:.3} um ({:.2} px); measured order spacing {measured:.2} px = {:.3} um",
            oracle * 1e6,
            oracle / pitch,
            measured * pitch * 1e6
        ),
    )
}

/// Exact ⟨p²⟩ of a kick distribution, integrating the smeared components
/// against their kernel densities numerically.
fn numeric_second_moment(kd: &KickDistribution, lambda_f: f64) -> f64 {
    let pk = kd.photon_momentum;
    let mut total: f64 = kd.discrete_orders().map(|(j, p)| p * (j as f64 * pk).powi(2)).sum();
    for s in &kd.smear {
        let kernel = fluorescence_kernel(s.fluorescence, lambda_f).unwrap();
        let w = kernel.half_width();
        let n = 4000;
        let h = 2.0 * w / n as f64;
        let centre = s.order as f64 * pk;
        let integral: f64 = (0..n)
            .map(|i| {
                let q = -w + (i as f64 + 0.5) * h;
                kernel.pdf(q) * (centre + q).powi(2) * h
            })
            .sum();
        total += s.probability * integral;
    }
    total
}

fn fluorescence_broadening() -> Outcome {
    let n0 = 0.3;
    let mut mol = pch2().molecule;
    mol.p_dep = 0.0;
    mol.phi_ic = 0.0;
    mol.phi_isc = 1.0;
    mol.phi_f = 0.0;
    let dark = kicks(1.0, n0, &mol);
    mol.phi_isc = 0.0;
    mol.phi_f = 1.0;
    let bright = kicks(1.0, n0, &mol);
    let delta = numeric_second_moment(&bright, mol.lambda_f) - numeric_second_moment(&dark, mol.lambda_f);
    // Period-averaged mean photon number of n0 cos²(kx) is n0/2.
    let pf = PLANCK / mol.lambda_f;
    let analytic = 0.5 * n0 * pf * pf / 3.0;
    let rel = delta / analytic - 1.0;
    verdict(rel.abs() <= 0.05, format!("second-moment increase {:+.2}% from m (hbar k_F)^2/3 (tol 5%)", 100.0 * rel))
}

fn depletion_mode() -> Outcome {
    let opts = SimulationOptions::default();
    let mut pch2_dep = pch2();
    pch2_dep.molecule.p_dep = 1.0;
    let a = synthesize_image(&pch2_dep, &opts).unwrap().odd_fraction();
    let b = synthesize_image(&ExperimentConfig::parse(ZNPC).unwrap(), &opts).unwrap().odd_fraction();
    verdict(
        a < 1e-3 && b < 1e-3,
        format!("odd-order mass fraction: PcH2 with p_dep = 1 {:.1e}, ZnPc-NBE4 {:.1e} (tol 1e-3)", a.abs(), b.abs()),
    )
}

fn parameter_recovery(tmp: &Path) -> Outcome {
    let cfg_path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/pch2.cfg");
    let start = Instant::now();
    let sim = tmp.join("recovery_sim");
    let fit = tmp.join("recovery_fit");
    run(bin().arg("simulate").arg(&cfg_path).arg("--out-dir").arg(&sim))?;
    run(bin()
        .arg("fit")
        .arg(&cfg_path)
        .arg("--image")
        .arg(sim.join("image.csv"))
        .args(["--smooth-rows", "0"])
        .args(["--y02=-19.3um:-13.9um:9", "--v-shift=62mps:94mps:9"])
        .args(["--alpha=0.5A3_4pie0:4A3_4pie0:21:log", "--sigma=2e-21m2:4e-20m2:21:log"])
        .args(["--y0g=-6.1um:-3.6um:3"])
        .arg("--out-dir")
        .arg(&fit))?;
    let secs = start.elapsed().as_secs_f64();
    let text = std::fs::read_to_string(fit.join("fit_report.json")).map_err(|e| e.to_string())?;
    let report: Value = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    let s1 = &report["stage1"];
    let s2 = &report["stage2"];
    let num = |v: &Value| v.as_f64().unwrap_or(f64::NAN);
    let cell_a = 8f64.ln() / 20.0;
    let cell_s = 20f64.ln() / 20.0;
    let alpha_true = 1.2e-30 * FOUR_PI_EPS0;
    let da = (num(&s2["abs_alpha_Cm2_V"]) / alpha_true).ln().abs();
    let ds = (num(&s2["sigma_m2"]) / 8.5e-21).ln().abs();
    let dy = (num(&s1["y02_m"]) + 16.5e-6).abs();
    let dv = (num(&s1["v_shift_mps"]) - 76.5).abs();
    let (ry, rv) = (num(&s1["resolution"][0]), num(&s1["resolution"][1]));
    let ok = da <= cell_a && ds <= cell_s && dy <= ry && dv <= rv && secs < 600.0;
    verdict(
        ok,
        format!(
            "|ln a/a0| {:.2} cells, |ln s/s0| {:.2} cells, y02 {:.2} cells, v_shift {:.2} cells, \
             y0g error {:.3} um; {secs:.0} s (< 600 s)",
            da / cell_a,
            ds / cell_s,
            dy / ry,
            dv / rv,
            (num(&s2["y0g_m"]) + 5.1e-6).abs() * 1e6
        ),
    )
}

fn pipeline_fixture(tmp: &Path) -> Outcome {
    const W: usize = 800;
    const H: usize = 600;
    const PEAK: f64 = 100.0;
    const SIGMA: f64 = 12.0;
    let (cx, cy) = (0.5 * (W - 1) as f64, 0.5 * (H - 1) as f64);
    let (s, c) = 0.4f64.to_radians().sin_cos();
    // Processed (row, col) of the blob, and where the tilted frame shows it.
    let truth = (310.0, 420.0);
    let (x, y) = (truth.1 - cx, cy - truth.0);
    let (xr, yr) = (c * x + s * y, -s * x + c * y);
    let (br, bc) = (cy - yr, cx + xr);
    let bright: Vec<f64> = (0..W * H).map(|i| 20.0 + 0.003 * (i % W) as f64).collect();
    let mut raw: Vec<f64> = (0..W * H)
        .map(|i| {
            let (r, c) = ((i / W) as f64, (i % W) as f64);
            let d2 = (r - br).powi(2) + (c - bc).powi(2);
            bright[i] + 50.0 + 0.01 * c - 0.02 * r + PEAK * (-d2 / (2.0 * SIGMA * SIGMA)).exp()
        })
        .collect();
    for (r, c, v) in [(20, 30, 6e4), (500, 700, 6e4), (250, 300, 3e4), (100, 650, -5e3), (400, 250, -5e3)] {
        raw[r * W + c] = v;
    }
    let raw_path = tmp.join("fixture_raw.csv");
    let bright_path = tmp.join("fixture_bright.csv");
    std::fs::write(&raw_path, duv_diffraction::io::encode_csv(W, &raw)).map_err(|e| e.to_string())?;
    std::fs::write(&bright_path, duv_diffraction::io::encode_csv(W, &bright)).map_err(|e| e.to_string())?;
    let out_dir = tmp.join("fixture_out");
    run(bin()
        .arg("preprocess")
        .arg("--raw")
        .arg(&raw_path)
        .arg("--bright")
        .arg(&bright_path)
        .args(["--crop", "200:150:440:300", "--theta", "0.4deg"])
        .arg("--out-dir")
        .arg(&out_dir))?;
    let out = read_raster(&out_dir.join("processed.csv")).map_err(|e| e.to_string())?;
    let (tr, tc) = (truth.0 - 150.0, truth.1 - 200.0);
    let (mut sum, mut sr, mut sc, mut bg, mut nbg) = (0.0, 0.0, 0.0, 0.0, 0usize);
    for (i, v) in out.data.iter().enumerate() {
        let (r, c) = ((i / out.width) as f64, (i % out.width) as f64);
        if ((r - tr).powi(2) + (c - tc).powi(2)).sqrt() < 6.0 * SIGMA {
            sum += v;
            sr += v * r;
            sc += v * c;
        } else {
            bg += v;
            nbg += 1;
        }
    }
    let err = ((sr / sum - tr).powi(2) + (sc / sum - tc).powi(2)).sqrt();
    let bg_mean = bg / nbg as f64;
    verdict(
        err < 0.5 && bg_mean.abs() < 1e-3 * PEAK,
        format!("blob centroid error {err:.3} px (< 0.5); background mean {:.1e} of peak (< 1e-3)", bg_mean / PEAK),
    )
}

fn determinism(tmp: &Path) -> Outcome {
    let cfg_path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/pch2.cfg");
    let mut images = Vec::new();
    for (k, threads) in [1, 1, 4, 8].into_iter().enumerate() {
        let dir = tmp.join(format!("det_{k}"));
        run(bin()
            .arg("--threads")
            .arg(threads.to_string())
            .arg("simulate")
            .arg(&cfg_path)
            .arg("--out-dir")
            .arg(&dir))?;
        images.push(std::fs::read(dir.join("image.csv")).map_err(|e| e.to_string())?);
    }
    let same = images.iter().all(|b| *b == images[0]);
    verdict(same, format!("image.csv byte-identical across runs at 1, 1, 4, 8 workers: {same}"))
}

fn main() {
    // Quadrature defaults must match the stated acceptance sizes.
    let q = QuadratureSizes::default();
    assert_eq!((q.source_points, q.velocities), (128, 64));
    let tmp = tempfile::tempdir().expect("temporary directory");
    let checks: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        ("1 Bessel oracle", Box::new(bessel_oracle)),
        ("2 Poisson oracle", Box::new(poisson_oracle)),
        ("3 norm conservation", Box::new(norm_conservation)),
        ("4 parity and mirror symmetry", Box::new(parity_and_symmetry)),
        ("5 order spacing", Box::new(geometry)),
        ("6 fluorescence broadening", Box::new(fluorescence_broadening)),
        ("7 depletion mode", Box::new(depletion_mode)),
        ("8 parameter recovery", Box::new(|| parameter_recovery(tmp.path()))),
        ("9 preprocessing fixture", Box::new(|| pipeline_fixture(tmp.path()))),
        ("10 determinism", Box::new(|| determinism(tmp.path()))),
    ];
    let mut failed = 0;
    for (name, check) in &checks {
        let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(check))
            .unwrap_or_else(|_| Err("check panicked".into()));
        match outcome {
            Ok(detail) => println!("PASS criterion {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {name}: {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", checks.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
