use std::io::Write;
use std::path::PathBuf;

use clap::Args;
use duv_diffraction::grating::{channel_amplitudes, kick_distribution, ChannelOptions, GratingCoupling};

use crate::{args, load_config};

#[derive(Debug, Args)]
pub struct DumpKicksArgs {
    /// Experiment configuration file.
    config: PathBuf,
    /// Forward velocity of the molecules (e.g. 150mps).
    #[arg(long, value_parser = args::velocity)]
    velocity: f64,
    /// Beam height at the grating; defaults to the grating axis.
    #[arg(long, value_parser = args::length, allow_hyphen_values = true)]
    height: Option<f64>,
    /// Largest absorbed-photon count per transit.
    #[arg(long, default_value_t = ChannelOptions::default().m_max)]
    m_max: usize,
}

/// One row per discrete order (f = 0) and per fluorescence-smeared
/// component (f = emitted photons). Probabilities sum to the survival.
pub fn dump_kicks(a: &DumpKicksArgs) -> anyhow::Result<()> {
    let cfg = load_config(&a.config)?;
    let y = a.height.unwrap_or(cfg.grating.height);
    let gs = GratingCoupling::new(&cfg.molecule, &cfg.grating).strength(a.velocity, y)?;
    let opts = ChannelOptions {
        m_max: a.m_max,
        ..ChannelOptions::default()
    };
    let cs = channel_amplitudes(&gs, &opts)?;
    let kd = kick_distribution(&cs, &cfg.molecule);
    let mut out = String::from("j,f,probability\n");
    for (j, p) in kd.discrete_orders() {
        out.push_str(&format!("{j},0,{p:e}\n"));
    }
    for s in &kd.smear {
        out.push_str(&format!("{},{},{:e}\n", s.order, s.fluorescence, s.probability));
    }
    std::io::stdout().lock().write_all(out.as_bytes())?;
    Ok(())
}

#[derive(Debug, Args)]
pub struct DumpConfigArgs {
    /// Experiment configuration file.
    config: PathBuf,
}

pub fn dump_config(a: &DumpConfigArgs) -> anyhow::Result<()> {
    let cfg = load_config(&a.config)?;
    std::io::stdout().lock().write_all(cfg.to_config_string().as_bytes())?;
    Ok(())
}
