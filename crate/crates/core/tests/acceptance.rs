//! Acceptance checks. Prints one line per criterion and exits nonzero if
//! any fails. Run with `cargo test --release --test acceptance`; extra
//! arguments select criteria by name.
//!
//! Time budgets stated for 8 cores are scaled by `8 / cores` when fewer
//! are available.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use descatter_core::dataset::{generate_dataset, DatasetConfig};
use descatter_core::emccd::{build_gain_table, detect, excess_noise_factor_sq, CameraSpec};
use descatter_core::forward::{
    conv3d, make_patterns, simulate_clean, ConvMode, ForwardConfig, PatternSet,
};
use descatter_core::io::{
    read_instance, read_manifest, read_tensor, split_manifest, DatasetManifest, ManifestEntry,
    Split,
};
use descatter_core::phantoms::{
    gen_beads, preprocess_neuron_stack, BeadSpec, NeuronPreprocessConfig,
};
use descatter_core::psf::{make_psf, PsfParams};
use descatter_core::scatter::{
    generate_spsf, sample_deflection_cos, sample_free_path, trace_photon_from, PhotonFate,
    SpsfRequest, SpsfStack, TissueOptics,
};
use descatter_core::{Image2D, RngStream, Volume3D, VolumeGrid};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn cores() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// Multiplier for budgets quoted on 8 cores.
fn core_scale() -> f64 {
    8.0 / cores().min(8) as f64
}

fn rel(a: f64, b: f64) -> f64 {
    (a / b - 1.0).abs()
}

fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    a.iter()
        .zip(b)
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
        / scale
}

fn free_path_law() -> Outcome {
    let mu = 0.02;
    let n = 1_000_000;
    let start = Instant::now();
    let mut rng = RngStream::new(101, 0);
    let mut xs: Vec<f64> = (0..n)
        .map(|_| sample_free_path(mu, rng.uniform()))
        .collect();
    let mean = xs.iter().sum::<f64>() / n as f64;
    xs.sort_by(f64::total_cmp);
    let nf = n as f64;
    let d = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = 1.0 - (-mu * x).exp();
            (f - i as f64 / nf).max((i + 1) as f64 / nf - f)
        })
        .fold(0.0, f64::max);
    let secs = start.elapsed().as_secs_f64();
    // asymptotic KS critical value at α = 0.01
    let crit = 1.628 / nf.sqrt();
    let pass = rel(mean, 1.0 / mu) < 0.005 && d < crit && secs < 5.0;
    outcome(
        pass,
        format!("mean {mean:.3} µm vs 50 (tol 0.5%), KS D {d:.5} < {crit:.5}, {secs:.2} s < 5 s"),
    )
}

fn hg_sampler() -> Outcome {
    let n = 1_000_000;
    let mut pass = true;
    let mut parts = Vec::new();
    for g in [0.0, 0.5, 0.9] {
        let mut rng = RngStream::new(102, 0);
        let m = (0..n)
            .map(|_| sample_deflection_cos(g, rng.uniform()))
            .sum::<f64>()
            / n as f64;
        pass &= (m - g).abs() <= 0.002;
        parts.push(format!("g {g}: E[cos] {m:.4}"));
    }
    let mut ends = true;
    for g in [0.0, 0.5, 0.9, -0.9] {
        ends &= sample_deflection_cos(g, 0.0) == -1.0 && sample_deflection_cos(g, 1.0) == 1.0;
    }
    pass &= ends;
    outcome(
        pass,
        format!("{} (tol 0.002), endpoints exact: {ends}", parts.join(", ")),
    )
}

fn spsf_depth_trend() -> Outcome {
    let optics = TissueOptics::new(0.02, 0.9).unwrap();
    let base = SpsfRequest {
        photon_budget: 100_000,
        ..SpsfRequest::new(2.0, optics, 1.0, 1.33, 101, 5.0)
    };
    let start = Instant::now();
    let shallow = generate_spsf(&base, &RngStream::new(103, 0));
    let deep = generate_spsf(&base.with_depth(7.0), &RngStream::new(103, 1));
    let secs = start.elapsed().as_secs_f64();
    let budget = 60.0 * core_scale();
    match (shallow.and_then(|s| s.fwhm()), deep.and_then(|s| s.fwhm())) {
        (Ok(a), Ok(b)) => outcome(
            b > a && secs < budget,
            format!("FWHM 7 SL {b:.1} µm > 2 SL {a:.1} µm, {secs:.1} s < {budget:.0} s"),
        ),
        (a, b) => outcome(false, format!("FWHM failed: {a:?} {b:?}")),
    }
}

fn ballistic_fraction() -> Outcome {
    let optics = TissueOptics::new(0.02, 0.9).unwrap();
    let n = 500_000;
    let mut pass = true;
    let mut parts = Vec::new();
    let c: f64 = 0.8;
    let launches = [
        (1.0, [0.0, 0.0, 1.0]),
        (2.0, [0.0, 0.0, 1.0]),
        (1.0, [(1.0 - c * c).sqrt(), 0.0, c]),
    ];
    for (i, &(depth, dir)) in launches.iter().enumerate() {
        let req = SpsfRequest::new(depth, optics, 1.0, 1.33, 41, 5.0);
        let mut rng = RngStream::new(104, i as u64);
        let hits = (0..n)
            .filter(|_| {
                matches!(
                    trace_photon_from(&req, dir, &mut rng),
                    PhotonFate::Accepted { n_scatters: 0, .. }
                )
            })
            .count();
        let f = hits as f64 / n as f64;
        let path_um = req.z0() / dir[2];
        let expected = (-optics.mu_s * path_um).exp();
        pass &= rel(f, expected) < 0.02;
        parts.push(format!("path {path_um:.1} µm: {f:.4} vs {expected:.4}"));
    }
    outcome(pass, format!("{} (tol 2%)", parts.join(", ")))
}

fn emccd_closures() -> Outcome {
    let spec = CameraSpec {
        g_em: 300.0,
        n_stages: 512,
        ..CameraSpec::default()
    };
    let lambda = 10.0;
    let pixels = 1_000_000;
    let start = Instant::now();
    let mu = lambda + spec.dark_mean();
    // rows beyond μ + 8√μ are never reached at this mean
    let k_max = (mu + 8.0 * mu.sqrt()).ceil() as u64;
    let table = match build_gain_table(&spec.with_max_input(k_max), 20_000, &RngStream::new(105, 0))
    {
        Ok(t) => t,
        Err(e) => return outcome(false, format!("table build failed: {e}")),
    };
    let clean = Image2D::new(1000, 1000, 1.0, vec![lambda; pixels]).unwrap();
    let out = match detect(&clean, &spec, &table, &RngStream::new(105, 1)) {
        Ok(o) => o,
        Err(e) => return outcome(false, format!("detect failed: {e}")),
    };
    let secs = start.elapsed().as_secs_f64();
    let f2 = excess_noise_factor_sq(spec.g_em, spec.n_stages);
    let mean = out.mean();
    let var = out.values().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / pixels as f64;
    let em = spec.g_em * mu;
    let ev = f2 * spec.g_em * spec.g_em * mu + spec.sigma_read * spec.sigma_read;
    let unit = excess_noise_factor_sq(1.0, 512);
    let f2_1000 = excess_noise_factor_sq(1000.0, 512);
    let pass = rel(mean, em) < 0.01
        && rel(var, ev) < 0.05
        && unit == 1.0
        && (f2_1000 - 1.972).abs() <= 0.001
        && secs < 60.0;
    outcome(
        pass,
        format!(
            "mean err {:.3}% (tol 1%), var err {:.2}% (tol 5%), F²(1,512) = {unit}, F²(1000,512) = {f2_1000:.4}, {secs:.1} s < 60 s",
            100.0 * rel(mean, em),
            100.0 * rel(var, ev)
        ),
    )
}

fn random_volume(grid: VolumeGrid, rng: &mut RngStream) -> Volume3D {
    Volume3D::from_fn(grid, |_, _, _| rng.uniform()).unwrap()
}

fn forward_invariants() -> Outcome {
    let mut rng = RngStream::new(106, 0);
    let grid = VolumeGrid::new(32, 32, 13, 0.5, 0.5, 1.0).unwrap();
    let psf_grid = VolumeGrid::new(15, 15, 13, 0.5, 0.5, 1.0).unwrap();
    let em = make_psf(&PsfParams::default_emission(), &psf_grid).unwrap();
    let ex_real = make_psf(&PsfParams::default_excitation(), &psf_grid).unwrap();
    let mut ex_delta = Volume3D::zeros(VolumeGrid::new(3, 3, 3, 0.5, 0.5, 1.0).unwrap());
    ex_delta.set(1, 1, 1, 1.0);
    let object = random_volume(grid, &mut rng);
    let cfg = ForwardConfig::new(6);
    let ones =
        PatternSet::new(vec![Image2D::new(32, 32, 0.5, vec![1.0; 1024]).unwrap()], 0).unwrap();
    let delta = SpsfStack::delta(7, 0.5).unwrap();

    // identity: delta sPSF, all-ones pattern, delta exPSF. Only the focal
    // plane is excited, so the image is the ground truth convolved with the
    // center plane of the emission PSF, written here as the plain sum.
    let y = simulate_clean(&object, &ones, &ex_delta, &em, &delta, &cfg, 1.0).unwrap();
    let gt = &y.ground_truth;
    let (mx, my, mz) = em.grid().dims();
    let blurred: Vec<f64> = (0..32 * 32)
        .map(|i| {
            let (x, y) = ((i % 32) as i64, (i / 32) as i64);
            let mut acc = 0.0;
            for ky in 0..my {
                for kx in 0..mx {
                    let (sx, sy) = (
                        x - (kx as i64 - (mx / 2) as i64),
                        y - (ky as i64 - (my / 2) as i64),
                    );
                    if (0..32).contains(&sx) && (0..32).contains(&sy) {
                        acc += em.get(kx, ky, mz / 2) * gt.get(sx as usize, sy as usize);
                    }
                }
            }
            acc
        })
        .collect();
    let ident = max_rel_err(y.images[0].values(), &blurred);
    let gt_ok = max_rel_err(gt.values(), object.plane(6)) < 1e-12;

    // FFT vs direct on 16³ random volumes
    let g16 = VolumeGrid::new(16, 16, 16, 1.0, 1.0, 1.0).unwrap();
    let mut fft_err = 0.0f64;
    for _ in 0..3 {
        let v = random_volume(g16, &mut rng);
        let k = random_volume(VolumeGrid::new(7, 5, 9, 1.0, 1.0, 1.0).unwrap(), &mut rng);
        let a = conv3d(&v, &k, &ForwardConfig::new(0)).unwrap();
        let b = conv3d(
            &v,
            &k,
            &ForwardConfig {
                conv_mode: ConvMode::Direct,
                ..ForwardConfig::new(0)
            },
        )
        .unwrap();
        fft_err = fft_err.max(max_rel_err(a.values(), b.values()));
    }

    // linearity and complementary patterns with the realistic exPSF
    let patterns = make_patterns(4, 32, 32, 0.5, 106).unwrap();
    let other = random_volume(grid, &mut rng);
    let (a, b) = (0.7, 2.5);
    let mix = Volume3D::from_fn(grid, |x, y, z| {
        a * object.get(x, y, z) + b * other.get(x, y, z)
    })
    .unwrap();
    let run = |o: &Volume3D, p: &PatternSet| {
        simulate_clean(o, p, &ex_real, &em, &delta, &cfg, 1.0).unwrap()
    };
    let (y1, y2, ym) = (
        run(&object, &patterns),
        run(&other, &patterns),
        run(&mix, &patterns),
    );
    let mut lin = 0.0f64;
    for t in 0..4 {
        let expect: Vec<f64> = y1.images[t]
            .values()
            .iter()
            .zip(y2.images[t].values())
            .map(|(p, q)| a * p + b * q)
            .collect();
        lin = lin.max(max_rel_err(ym.images[t].values(), &expect));
    }
    let h = patterns.masks()[0].clone();
    let inv = Image2D::new(32, 32, 0.5, h.values().iter().map(|v| 1.0 - v).collect()).unwrap();
    let full = Image2D::new(32, 32, 0.5, vec![1.0; 1024]).unwrap();
    let yc = run(&object, &PatternSet::new(vec![h, inv, full], 0).unwrap());
    let sum: Vec<f64> = yc.images[0]
        .values()
        .iter()
        .zip(yc.images[1].values())
        .map(|(p, q)| p + q)
        .collect();
    let comp = max_rel_err(&sum, yc.images[2].values());

    let pass = ident < 1e-6 && gt_ok && fft_err < 1e-6 && lin < 1e-9 && comp < 1e-9;
    outcome(
        pass,
        format!(
            "identity {ident:.1e} (tol 1e-6, ground truth is the focal plane: {gt_ok}), fft vs direct {fft_err:.1e} (tol 1e-6), linearity {lin:.1e}, complementary {comp:.1e} (tol 1e-9)"
        ),
    )
}

fn files_under(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut todo = vec![root.to_path_buf()];
    while let Some(d) = todo.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                todo.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn check_dataset(root: &Path) -> Result<(), String> {
    let manifest = read_manifest(root, true).map_err(|e| e.to_string())?;
    if manifest.instances.len() != 8 {
        return Err(format!("{} instances", manifest.instances.len()));
    }
    for entry in &manifest.instances {
        let rec =
            read_instance(&root.join(&entry.path)).map_err(|e| format!("{}: {e}", entry.path))?;
        if rec.measurements.shape() != [32, 256, 256] || rec.ground_truth.shape() != [256, 256] {
            return Err(format!(
                "{}: shapes {:?} {:?}",
                entry.path,
                rec.measurements.shape(),
                rec.ground_truth.shape()
            ));
        }
    }
    for f in files_under(root)
        .iter()
        .filter(|p| p.extension().is_some_and(|e| e == "tns"))
    {
        read_tensor(&root.join(f)).map_err(|e| format!("{}: {e}", f.display()))?;
    }
    Ok(())
}

fn dataset_pipeline() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let grid = VolumeGrid::new(256, 256, 21, 0.5, 0.5, 1.0).unwrap();
    let cfg = DatasetConfig::beads(107, 8, grid, vec![2.0, 7.0]);
    let budget = 600.0 * core_scale();
    let mut times = Vec::new();
    for run in ["a", "b"] {
        let start = Instant::now();
        if let Err(e) = generate_dataset(&cfg, &dir.path().join(run)) {
            return outcome(false, format!("run {run} failed: {e}"));
        }
        times.push(start.elapsed().as_secs_f64());
    }
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let valid = check_dataset(&a).and_then(|_| check_dataset(&b));
    let (fa, fb) = (files_under(&a), files_under(&b));
    let identical = fa == fb
        && fa
            .iter()
            .all(|f| fs::read(a.join(f)).unwrap() == fs::read(b.join(f)).unwrap());
    let worst = times.iter().fold(0.0f64, |m, &t| m.max(t));
    let pass = valid.is_ok() && identical && worst < budget;
    outcome(
        pass,
        format!(
            "8 × 32×256×256, files valid: {}, regeneration bit-identical over {} files: {identical}, {:.0} s and {:.0} s < {budget:.0} s",
            valid.err().unwrap_or_else(|| "yes".into()),
            fa.len(),
            times[0],
            times[1]
        ),
    )
}

fn phantom_statistics() -> Outcome {
    let spec = BeadSpec::new(VolumeGrid::new(256, 256, 21, 0.5, 0.5, 1.0).unwrap());
    let base = RngStream::new(108, 0);
    let (mut small, mut large) = ((0.0, 0usize), (0.0, 0usize));
    for i in 0..100 {
        let p = gen_beads(&spec, &mut base.split(i)).unwrap();
        let (s, l) = p.class_totals();
        small = (small.0 + s.0, small.1 + s.1);
        large = (large.0 + l.0, large.1 + l.1);
    }
    let ratio = (small.0 / small.1 as f64) / (large.0 / large.1 as f64);

    // neuron-like stack with values well above the clip level
    let grid = VolumeGrid::new(64, 64, 45, 0.25, 0.25, 1.0).unwrap();
    let mut r = RngStream::new(108, 1);
    let stack = Volume3D::from_fn(grid, |x, y, _| {
        let blob = if x < 24 && y < 24 { 60.0 } else { 0.0 };
        blob + 30.0 * r.uniform()
    })
    .unwrap();
    let cfg = NeuronPreprocessConfig {
        subvolume_depth: 13,
        tile_px: Some(32),
        ..Default::default()
    };
    let subs = preprocess_neuron_stack(&stack, &cfg).unwrap();
    let peak = subs.iter().fold(0.0f64, |m, s| m.max(s.volume.max()));
    let pass = (ratio - 5.0).abs() <= 0.5 && !subs.is_empty() && peak <= 20.0;
    outcome(
        pass,
        format!(
            "small/large mean intensity {ratio:.3} over 100 volumes (5 ± 0.5), neuron windows {} with max {peak} ≤ 20 (input max {:.1})",
            subs.len(),
            stack.max()
        ),
    )
}

fn split_arithmetic() -> Outcome {
    let manifest = DatasetManifest {
        format_version: descatter_core::io::MANIFEST_VERSION,
        config: serde_json::json!({}),
        instances: (0..3455)
            .map(|i| ManifestEntry {
                path: format!("instances/{i:05}"),
                split: None,
                files: Default::default(),
            })
            .collect(),
    };
    match split_manifest(&manifest, 0.8, 109) {
        Ok(m) => {
            let (tr, va) = (m.count(Split::Train), m.count(Split::Val));
            outcome(
                tr == 2764 && va == 691,
                format!("3455 → train {tr}, val {va} (expect 2764 / 691)"),
            )
        }
        Err(e) => outcome(false, e.to_string()),
    }
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("free-path law", free_path_law),
        ("Henyey-Greenstein sampler", hg_sampler),
        ("sPSF depth trend", spsf_depth_trend),
        ("ballistic fraction", ballistic_fraction),
        ("EMCCD closures", emccd_closures),
        ("forward-model invariants", forward_invariants),
        ("dataset pipeline", dataset_pipeline),
        ("phantom statistics", phantom_statistics),
        ("split arithmetic", split_arithmetic),
    ];
    // optional name filters, e.g. `--test acceptance -- emccd`
    let filters: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let selected: Vec<_> = criteria
        .into_iter()
        .filter(|(name, _)| {
            filters.is_empty()
                || filters
                    .iter()
                    .any(|f| name.to_lowercase().contains(&f.to_lowercase()))
        })
        .collect();
    println!("acceptance on {} core(s)", cores());
    let mut failed = 0;
    for &(name, check) in &selected {
        let o = check();
        if !o.pass {
            failed += 1;
        }
        println!(
            "[{}] {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
    }
    println!(
        "{} of {} criteria passed",
        selected.len() - failed,
        selected.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
