use std::path::PathBuf;

use anyhow::anyhow;
use descatter_core::dataset::{dry_run, generate_dataset, DatasetConfig, Recipe};

use crate::Failure;

#[derive(clap::Args)]
pub struct Args {
    /// TOML (`.toml`) or JSON config.
    config: PathBuf,
    /// Output directory; must be absent or empty.
    #[arg(long, required_unless_present = "dry_run")]
    out: Option<PathBuf>,
    /// Validate the config and print the plan without writing anything.
    #[arg(long)]
    dry_run: bool,
    #[arg(long)]
    seed: Option<u64>,
    /// Instance count for the beads recipe, or a cap for the neuron recipe.
    #[arg(long)]
    instances: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    depths_sl: Option<Vec<f64>>,
    /// Photons launched per sPSF kernel.
    #[arg(long)]
    spsf_photons: Option<u64>,
}

fn apply_overrides(cfg: &mut DatasetConfig, a: &Args) -> anyhow::Result<()> {
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(d) = &a.depths_sl {
        cfg.depths_sl = d.clone();
    }
    if let Some(p) = a.spsf_photons {
        cfg.spsf.photons = p;
    }
    if let Some(n) = a.instances {
        match &mut cfg.recipe {
            Recipe::Beads { instances, .. } => *instances = n,
            Recipe::Neuron { max_instances, .. } => *max_instances = Some(n),
            Recipe::Vessels { .. } => {
                return Err(anyhow!("--instances does not apply to the vessels recipe"))
            }
        }
    }
    Ok(())
}

pub fn run(a: Args) -> Result<(), Failure> {
    let mut cfg = DatasetConfig::from_path(&a.config).map_err(Failure::usage)?;
    apply_overrides(&mut cfg, &a).map_err(Failure::usage)?;
    let plan = dry_run(&cfg).map_err(Failure::usage)?;
    if a.dry_run {
        println!(
            "{}",
            serde_json::to_string_pretty(&plan).expect("plain json")
        );
        return Ok(());
    }
    let out = a.out.expect("clap requires --out without --dry-run");
    if out.is_file() || (out.is_dir() && out.read_dir().map_err(Failure::usage)?.next().is_some()) {
        return Err(Failure::usage(anyhow!(
            "{} exists and is not an empty directory",
            out.display()
        )));
    }
    let report = generate_dataset(&cfg, &out).map_err(Failure::simulation)?;
    log::info!(
        "{} instances in {:.1} s ({:.2} instances/min)",
        report.plan.instances,
        report.seconds,
        report.instances_per_min
    );
    println!(
        "{}",
        serde_json::to_string_pretty(&report).expect("plain json")
    );
    Ok(())
}
