use std::fs;
use std::path::PathBuf;

use anyhow::Context;
use descatter_core::io::write_spsf_stack;
use descatter_core::scatter::{generate_spsf_stack, SpsfRequest, TissueOptics};
use descatter_core::RngStream;
use serde_json::json;

use crate::plot::plot_profiles;
use crate::Failure;

pub const STACK_FILE: &str = "spsf.tns";
pub const SUMMARY_FILE: &str = "summary.json";
pub const PLOT_FILE: &str = "radial_profile.png";

#[derive(clap::Args)]
pub struct Args {
    /// Scattering coefficient in 1/µm.
    #[arg(long, default_value_t = 0.02)]
    mu_s: f64,
    /// Henyey-Greenstein anisotropy.
    #[arg(long, default_value_t = 0.9)]
    g: f64,
    /// Source depths in scattering lengths, strictly increasing.
    #[arg(long, value_delimiter = ',', required = true)]
    depths_sl: Vec<f64>,
    #[arg(long, default_value_t = 1.0)]
    na: f64,
    #[arg(long, default_value_t = 1.33)]
    n_medium: f64,
    /// Photons launched per depth.
    #[arg(long, default_value_t = 100_000)]
    photons: u64,
    /// Odd kernel width in pixels.
    #[arg(long, default_value_t = 101)]
    kernel_px: usize,
    /// Kernel pixel pitch in µm.
    #[arg(long, default_value_t = 1.0)]
    pitch: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
}

/// Kernels draw from stream `(seed, 0)`; depth `j` uses `split(j)`.
pub fn run(a: Args) -> Result<(), Failure> {
    let optics = TissueOptics::new(a.mu_s, a.g).map_err(Failure::usage)?;
    if a.depths_sl.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Failure::usage(anyhow::anyhow!(
            "--depths-sl must be strictly increasing"
        )));
    }
    let base = SpsfRequest {
        photon_budget: a.photons,
        ..SpsfRequest::new(
            a.depths_sl[0],
            optics,
            a.na,
            a.n_medium,
            a.kernel_px,
            a.pitch,
        )
    };
    for &d in &a.depths_sl {
        if d > 0.0 {
            base.with_depth(d).validate().map_err(Failure::usage)?;
        } else if d < 0.0 || !d.is_finite() {
            return Err(Failure::usage(anyhow::anyhow!(
                "depth {d} SL must be nonnegative"
            )));
        }
    }

    let stack = generate_spsf_stack(&a.depths_sl, &base, &RngStream::new(a.seed, 0))
        .map_err(Failure::simulation)?;
    let mut fwhm = Vec::with_capacity(stack.len());
    for k in stack.kernels() {
        let w = k.fwhm().ok();
        log::info!(
            "depth {} SL: capture {:.4}, FWHM {}",
            k.depth_sl,
            k.capture_fraction,
            w.map_or("undefined".into(), |w| format!("{w:.2} µm"))
        );
        fwhm.push(w);
    }

    let io = |e: anyhow::Error| Failure::simulation(e);
    fs::create_dir_all(&a.out)
        .with_context(|| format!("creating {}", a.out.display()))
        .map_err(io)?;
    write_spsf_stack(&a.out.join(STACK_FILE), &stack).map_err(Failure::simulation)?;
    let summary = json!({
        "command": "gen-spsf",
        "mu_s": a.mu_s,
        "g": a.g,
        "depths_sl": a.depths_sl,
        "na": a.na,
        "n_medium": a.n_medium,
        "photons": a.photons,
        "kernel_px": a.kernel_px,
        "pitch_um": a.pitch,
        "seed": a.seed,
        "fwhm_um": fwhm,
        "capture_fraction": stack.kernels().iter().map(|k| k.capture_fraction).collect::<Vec<_>>(),
    });
    fs::write(
        a.out.join(SUMMARY_FILE),
        serde_json::to_vec_pretty(&summary).expect("plain json"),
    )
    .context("writing summary")
    .map_err(io)?;
    let profiles: Vec<(String, Vec<f64>)> = stack
        .kernels()
        .iter()
        .map(|k| (format!("{} SL", k.depth_sl), k.radial_profile()))
        .collect();
    plot_profiles(&a.out.join(PLOT_FILE), &profiles).map_err(io)?;
    println!("wrote {} kernels to {}", stack.len(), a.out.display());
    Ok(())
}
