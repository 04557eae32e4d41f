use anyhow::anyhow;
use descatter_core::emccd::{build_gain_table, detect, excess_noise_factor_sq, CameraSpec};
use descatter_core::{Image2D, RngStream};

use crate::Failure;

pub const MEAN_TOL: f64 = 0.01;
pub const VAR_TOL: f64 = 0.05;

#[derive(clap::Args)]
pub struct Args {
    #[arg(long, default_value_t = 300.0)]
    g_em: f64,
    #[arg(long, default_value_t = 512)]
    n_stages: u32,
    /// Expected photons per pixel.
    #[arg(long, default_value_t = 10.0)]
    photons_per_px: f64,
    #[arg(long, default_value_t = 1_000_000)]
    pixels: usize,
    /// Read noise σ in electrons.
    #[arg(long, default_value_t = 60.0)]
    sigma_read: f64,
    /// Register simulations per gain-table row.
    #[arg(long, default_value_t = 20_000)]
    samples_per_k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// The gain table draws from stream `(seed, 0)` and detection from
/// `(seed, 1)`.
pub fn run(a: Args) -> Result<(), Failure> {
    let spec = CameraSpec {
        g_em: a.g_em,
        n_stages: a.n_stages,
        sigma_read: a.sigma_read,
        ..CameraSpec::default()
    };
    spec.validate().map_err(Failure::usage)?;
    if !(a.photons_per_px.is_finite() && a.photons_per_px >= 0.0) {
        return Err(Failure::usage(anyhow!(
            "--photons-per-px must be nonnegative"
        )));
    }
    if a.pixels < 2 || a.samples_per_k == 0 {
        return Err(Failure::usage(anyhow!(
            "--pixels must be at least 2 and --samples-per-k at least 1"
        )));
    }

    let mu = a.photons_per_px + spec.dark_mean();
    let k_max = (mu + 8.0 * mu.sqrt()).ceil() as u64;
    let table = build_gain_table(
        &spec.with_max_input(k_max),
        a.samples_per_k,
        &RngStream::new(a.seed, 0),
    )
    .map_err(Failure::simulation)?;
    let clean =
        Image2D::new(a.pixels, 1, 1.0, vec![a.photons_per_px; a.pixels]).map_err(Failure::usage)?;
    let out =
        detect(&clean, &spec, &table, &RngStream::new(a.seed, 1)).map_err(Failure::simulation)?;

    let n = a.pixels as f64;
    let mean = out.mean();
    let var = out.values().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let g2 = a.g_em * a.g_em;
    let f2 = excess_noise_factor_sq(a.g_em, a.n_stages);
    let pred_mean = a.g_em * mu;
    let pred_var = f2 * g2 * mu + a.sigma_read * a.sigma_read;
    let emp_f2 = (var - a.sigma_read * a.sigma_read) / (g2 * mu);

    let rel = |x: f64, y: f64| {
        if y == 0.0 {
            x.abs()
        } else {
            (x / y - 1.0).abs()
        }
    };
    let (mean_err, var_err) = (rel(mean, pred_mean), rel(var, pred_var));
    println!(
        "g_em {} N {} photons/px {} pixels {}",
        a.g_em, a.n_stages, a.photons_per_px, a.pixels
    );
    println!(
        "{:<10} {:>16} {:>16} {:>10}",
        "quantity", "predicted", "empirical", "rel err"
    );
    println!(
        "{:<10} {:>16.4} {:>16.4} {:>9.3}%",
        "mean",
        pred_mean,
        mean,
        100.0 * mean_err
    );
    println!(
        "{:<10} {:>16.4} {:>16.4} {:>9.3}%",
        "variance",
        pred_var,
        var,
        100.0 * var_err
    );
    println!(
        "{:<10} {:>16.6} {:>16.6} {:>9.3}%",
        "F²",
        f2,
        emp_f2,
        100.0 * rel(emp_f2, f2)
    );
    if mean_err < MEAN_TOL && var_err < VAR_TOL {
        println!(
            "closure holds (mean within {}%, variance within {}%)",
            100.0 * MEAN_TOL,
            100.0 * VAR_TOL
        );
        Ok(())
    } else {
        Err(Failure {
            code: 4,
            error: anyhow!(
                "closure failed: mean off by {:.3}%, variance off by {:.3}%",
                100.0 * mean_err,
                100.0 * var_err
            ),
        })
    }
}
