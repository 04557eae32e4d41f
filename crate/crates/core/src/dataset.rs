//! End-to-end dataset synthesis: phantoms → forward model → EMCCD → files.
//!
//! Output layout under the dataset root:
//!
//! ```text
//! manifest.json              instance list, split tags, config snapshot, file hashes
//! config.json                the resolved configuration
//! patterns.tns (+ .json)     shared binary excitation masks, u8 [t, H, W]
//! gain_table.tns (+ .json)   EMCCD inverse-CDF table, f32 [k_max + 1, 1024]
//! spsf/depth_NN.tns (+ .json) sPSF stack used for configured depth NN
//! instances/NNNNN/           measurements.tns, ground_truth.tns, meta.json
//! ```
//!
//! Random streams, all derived from `seed`:
//! - patterns: [`make_patterns`] with `seed` (stream 0)
//! - phantom `i`: `(seed, 1).split(1).split(i)`
//! - sPSF stack for configured depth `d`: `(seed, 1).split(2).split(d)`
//! - detection of pattern `t` of instance `i`: `(seed, 1).split(3).split(i).split(t)`
//! - gain table: `(seed, 1).split(4)`
//!
//! Every stream depends only on these indices, so a dataset regenerates bit
//! for bit regardless of worker count.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::emccd::{
    build_gain_table, detect, required_k_max, CameraSpec, GainTable, DEFAULT_SAMPLES_PER_K,
};
use crate::error::{Error, Result};
use crate::forward::{
    calibrate_photon_scale, make_patterns, simulate_clean, ForwardConfig, PatternSet,
};
use crate::grid::{Volume3D, VolumeGrid};
use crate::io::{
    sha256_file, split_manifest, write_gain_table, write_instance, write_manifest, write_patterns,
    write_spsf_stack, DatasetManifest, InstanceMeta, InstanceRecord, ManifestEntry,
    GROUND_TRUTH_FILE, MANIFEST_VERSION, MEASUREMENTS_FILE, META_FILE,
};
use crate::phantoms::{
    clip_stack, extract_window, gated_window_origins, gen_beads, preprocess_vessels,
    read_tiff_stack, BeadSpec, NeuronPreprocessConfig, VesselPreprocessConfig,
};
use crate::psf::{make_psf, PsfParams};
use crate::rng::RngStream;
use crate::scatter::{
    generate_spsf_stack, SpsfRequest, SpsfStack, TissueOptics, DEFAULT_MAX_SCATTER_EVENTS,
    DEFAULT_N_MEDIUM,
};

pub const CONFIG_VERSION: u32 = 1;
pub const CONFIG_FILE: &str = "config.json";
pub const PATTERNS_FILE: &str = "patterns.tns";
pub const GAIN_TABLE_FILE: &str = "gain_table.tns";

const STREAM_PHANTOM: u64 = 1;
const STREAM_SPSF: u64 = 2;
const STREAM_DETECT: u64 = 3;
const STREAM_GAIN: u64 = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Recipe {
    /// Random bead mixtures on `grid`.
    Beads {
        instances: usize,
        grid: VolumeGrid,
        /// Overrides the default 10 to 60 beads per volume.
        #[serde(default)]
        beads_per_volume: Option<(usize, usize)>,
    },
    /// Gated subvolumes of one neuron TIFF stack; one instance per window.
    Neuron {
        tiff: PathBuf,
        /// `(dx, dy, dz)` of the TIFF in µm.
        pitch_um: (f64, f64, f64),
        #[serde(default)]
        preprocess: NeuronPreprocessConfig,
        /// Divide windows by the clip threshold so the brightest voxel is 1.
        #[serde(default = "yes")]
        normalize: bool,
        #[serde(default)]
        max_instances: Option<usize>,
    },
    /// One instance per vasculature TIFF.
    Vessels {
        tiffs: Vec<PathBuf>,
        pitch_um: (f64, f64, f64),
        #[serde(default)]
        preprocess: VesselPreprocessConfig,
    },
}

impl Recipe {
    pub fn name(&self) -> &'static str {
        match self {
            Recipe::Beads { .. } => "beads",
            Recipe::Neuron { .. } => "neuron",
            Recipe::Vessels { .. } => "vessels",
        }
    }
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OpticsConfig {
    pub mu_s: f64,
    pub g: f64,
    /// Collection NA for the sPSF.
    pub na: f64,
    pub n_medium: f64,
}

impl Default for OpticsConfig {
    fn default() -> Self {
        let t = TissueOptics::default();
        Self {
            mu_s: t.mu_s,
            g: t.g,
            na: 1.0,
            n_medium: DEFAULT_N_MEDIUM,
        }
    }
}

impl OpticsConfig {
    pub fn tissue(&self) -> TissueOptics {
        TissueOptics {
            mu_s: self.mu_s,
            g: self.g,
        }
    }
}

/// PSFs are sampled at the object pitch on a `lateral_px² × axial_px` grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PsfConfig {
    pub excitation: PsfParams,
    pub emission: PsfParams,
    pub lateral_px: usize,
    pub axial_px: usize,
}

impl Default for PsfConfig {
    fn default() -> Self {
        Self {
            excitation: PsfParams::default_excitation(),
            emission: PsfParams::default_emission(),
            lateral_px: 15,
            axial_px: 13,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PatternConfig {
    pub t: usize,
    /// Probability that a mask pixel is on.
    pub fill: f64,
}

impl Default for PatternConfig {
    fn default() -> Self {
        Self { t: 32, fill: 0.5 }
    }
}

/// sPSF kernels are simulated at the object's lateral pitch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpsfConfig {
    pub photons: u64,
    pub kernel_px: usize,
    /// One kernel every `stride_planes` object planes, plus the last plane.
    pub stride_planes: usize,
    pub max_scatter_events: u32,
}

impl Default for SpsfConfig {
    fn default() -> Self {
        Self {
            photons: 100_000,
            kernel_px: 101,
            stride_planes: 5,
            max_scatter_events: DEFAULT_MAX_SCATTER_EVENTS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub train_fraction: f64,
    /// Shuffle seed; the dataset seed when absent.
    pub seed: Option<u64>,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    #[serde(default = "config_version")]
    pub version: u32,
    pub seed: u64,
    pub recipe: Recipe,
    /// Focal-plane depths in scattering lengths; instance `i` uses entry
    /// `i mod len`.
    pub depths_sl: Vec<f64>,
    #[serde(default)]
    pub optics: OpticsConfig,
    #[serde(default)]
    pub psf: PsfConfig,
    #[serde(default)]
    pub camera: CameraSpec,
    #[serde(default)]
    pub patterns: PatternConfig,
    #[serde(default)]
    pub spsf: SpsfConfig,
    #[serde(default)]
    pub split: SplitConfig,
    /// Fixed photon scale; calibrated from `calibration_photons` when absent.
    #[serde(default)]
    pub photon_scale: Option<f64>,
    #[serde(default = "calibration_photons")]
    pub calibration_photons: f64,
    #[serde(default = "samples_per_k")]
    pub gain_samples_per_k: usize,
}

fn config_version() -> u32 {
    CONFIG_VERSION
}

fn calibration_photons() -> f64 {
    20.0
}

fn samples_per_k() -> usize {
    DEFAULT_SAMPLES_PER_K
}

impl DatasetConfig {
    /// Beads recipe with every other setting at its default.
    pub fn beads(seed: u64, instances: usize, grid: VolumeGrid, depths_sl: Vec<f64>) -> Self {
        Self {
            version: CONFIG_VERSION,
            seed,
            recipe: Recipe::Beads {
                instances,
                grid,
                beads_per_volume: None,
            },
            depths_sl,
            optics: OpticsConfig::default(),
            psf: PsfConfig::default(),
            camera: CameraSpec::default(),
            patterns: PatternConfig::default(),
            spsf: SpsfConfig::default(),
            split: SplitConfig::default(),
            photon_scale: None,
            calibration_photons: calibration_photons(),
            gain_samples_per_k: samples_per_k(),
        }
    }

    /// Parses TOML (`.toml`) or JSON (anything else). Relative input paths
    /// are resolved against the config file's directory.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut cfg = if path.extension().is_some_and(|e| e == "toml") {
            Self::from_toml(&text)?
        } else {
            Self::from_json(&text)?
        };
        if let Some(base) = path.parent() {
            cfg.resolve_paths(base);
        }
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::invalid("config", e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::invalid("config", e.to_string()))
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match &mut self.recipe {
            Recipe::Neuron { tiff, .. } => fix(tiff),
            Recipe::Vessels { tiffs, .. } => tiffs.iter_mut().for_each(fix),
            Recipe::Beads { .. } => {}
        }
    }

    /// Checks everything that does not need the input files.
    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::invalid(
                "version",
                format!(
                    "config version {} is not supported (expected {CONFIG_VERSION})",
                    self.version
                ),
            ));
        }
        if self.depths_sl.is_empty() {
            return Err(Error::invalid("depths_sl", "need at least one depth"));
        }
        if let Some(d) = self
            .depths_sl
            .iter()
            .find(|d| !(d.is_finite() && **d >= 0.0))
        {
            return Err(Error::invalid(
                "depths_sl",
                format!("depths must be finite and nonnegative, got {d}"),
            ));
        }
        self.optics.tissue().validate()?;
        let req = self.spsf_request(1.0, 1.0);
        req.validate()?;
        self.psf.excitation.validate()?;
        self.psf.emission.validate()?;
        self.camera.validate()?;
        if self.patterns.t == 0 {
            return Err(Error::invalid("patterns.t", "need at least one pattern"));
        }
        if !(self.patterns.fill > 0.0 && self.patterns.fill < 1.0) {
            return Err(Error::invalid(
                "patterns.fill",
                format!("must lie in (0, 1), got {}", self.patterns.fill),
            ));
        }
        if self.spsf.stride_planes == 0 {
            return Err(Error::invalid("spsf.stride_planes", "must be at least 1"));
        }
        if let Some(s) = self.photon_scale {
            if !(s.is_finite() && s > 0.0) {
                return Err(Error::invalid(
                    "photon_scale",
                    format!("must be positive, got {s}"),
                ));
            }
        }
        if !(self.calibration_photons.is_finite() && self.calibration_photons > 0.0) {
            return Err(Error::invalid("calibration_photons", "must be positive"));
        }
        if self.gain_samples_per_k == 0 {
            return Err(Error::invalid("gain_samples_per_k", "must be at least 1"));
        }
        match &self.recipe {
            Recipe::Beads {
                instances,
                grid,
                beads_per_volume,
            } => {
                if *instances == 0 {
                    return Err(Error::invalid("recipe.instances", "must be at least 1"));
                }
                self.bead_spec(*grid, *beads_per_volume).validate()?;
                self.check_object_grid(grid)?;
            }
            Recipe::Neuron {
                preprocess,
                pitch_um,
                max_instances,
                ..
            } => {
                if preprocess.subvolume_depth != self.psf.axial_px {
                    return Err(Error::invalid(
                        "recipe.preprocess.subvolume_depth",
                        format!(
                            "must equal psf.axial_px ({}), got {}",
                            self.psf.axial_px, preprocess.subvolume_depth
                        ),
                    ));
                }
                check_pitch(*pitch_um)?;
                if *max_instances == Some(0) {
                    return Err(Error::invalid("recipe.max_instances", "must be at least 1"));
                }
            }
            Recipe::Vessels {
                tiffs,
                pitch_um,
                preprocess,
            } => {
                if tiffs.is_empty() {
                    return Err(Error::invalid("recipe.tiffs", "need at least one file"));
                }
                check_pitch(*pitch_um)?;
                if preprocess.output_shape.is_none() {
                    return Err(Error::invalid(
                        "recipe.preprocess.output_shape",
                        "vessel instances need a fixed output shape",
                    ));
                }
            }
        }
        Ok(())
    }

    fn bead_spec(&self, grid: VolumeGrid, beads_per_volume: Option<(usize, usize)>) -> BeadSpec {
        let mut spec = BeadSpec::new(grid);
        if let Some(r) = beads_per_volume {
            spec.beads_per_volume = r;
        }
        spec
    }

    fn spsf_request(&self, depth_sl: f64, pitch: f64) -> SpsfRequest {
        SpsfRequest {
            photon_budget: self.spsf.photons,
            max_scatter_events: self.spsf.max_scatter_events,
            ..SpsfRequest::new(
                depth_sl,
                self.optics.tissue(),
                self.optics.na,
                self.optics.n_medium,
                self.spsf.kernel_px,
                pitch,
            )
        }
    }

    fn psf_grid(&self, object: &VolumeGrid) -> Result<VolumeGrid> {
        VolumeGrid::new(
            self.psf.lateral_px,
            self.psf.lateral_px,
            self.psf.axial_px,
            object.dx(),
            object.dy(),
            object.dz(),
        )
    }

    fn check_object_grid(&self, g: &VolumeGrid) -> Result<()> {
        if g.dx() != g.dy() {
            return Err(Error::invalid("grid", "lateral pitches must match"));
        }
        let (nx, ny, nz) = g.dims();
        let need = [
            ("psf.lateral_px", self.psf.lateral_px, nx.min(ny)),
            ("psf.axial_px", self.psf.axial_px, nz),
            ("spsf.kernel_px", self.spsf.kernel_px, nx.min(ny)),
        ];
        for (name, k, n) in need {
            if k > n {
                return Err(Error::invalid(
                    name,
                    format!("{k} exceeds the object size {n}"),
                ));
            }
        }
        Ok(())
    }
}

fn check_pitch(p: (f64, f64, f64)) -> Result<()> {
    if [p.0, p.1, p.2].iter().any(|d| !(d.is_finite() && *d > 0.0)) {
        return Err(Error::invalid(
            "recipe.pitch_um",
            "pitches must be positive",
        ));
    }
    Ok(())
}

/// Object source: produces instance `i` on demand.
enum Source {
    Beads {
        spec: BeadSpec,
        count: usize,
        stream: RngStream,
    },
    Neuron {
        clipped: Volume3D,
        origins: Vec<(usize, usize, usize)>,
        config: NeuronPreprocessConfig,
        scale: f64,
    },
    Vessels {
        tiffs: Vec<PathBuf>,
        pitch: (f64, f64, f64),
        config: VesselPreprocessConfig,
    },
}

impl Source {
    fn open(cfg: &DatasetConfig, base: &RngStream) -> Result<Self> {
        Ok(match &cfg.recipe {
            Recipe::Beads {
                instances,
                grid,
                beads_per_volume,
            } => Source::Beads {
                spec: cfg.bead_spec(*grid, *beads_per_volume),
                count: *instances,
                stream: base.split(STREAM_PHANTOM),
            },
            Recipe::Neuron {
                tiff,
                pitch_um,
                preprocess,
                normalize,
                max_instances,
            } => {
                let clipped =
                    clip_stack(read_tiff_stack(tiff, *pitch_um)?, preprocess.clip_threshold);
                let mut origins = gated_window_origins(&clipped, preprocess)?;
                if let Some(m) = max_instances {
                    origins.truncate(*m);
                }
                if origins.is_empty() {
                    return Err(Error::invalid(
                        "recipe.tiff",
                        "no subvolume passes the mean gate",
                    ));
                }
                Source::Neuron {
                    clipped,
                    origins,
                    config: preprocess.clone(),
                    scale: if *normalize {
                        1.0 / preprocess.clip_threshold
                    } else {
                        1.0
                    },
                }
            }
            Recipe::Vessels {
                tiffs,
                pitch_um,
                preprocess,
            } => {
                for p in tiffs {
                    if !p.is_file() {
                        return Err(Error::Io(std::io::Error::new(
                            std::io::ErrorKind::NotFound,
                            format!("{} not found", p.display()),
                        )));
                    }
                }
                Source::Vessels {
                    tiffs: tiffs.clone(),
                    pitch: *pitch_um,
                    config: preprocess.clone(),
                }
            }
        })
    }

    fn len(&self) -> usize {
        match self {
            Source::Beads { count, .. } => *count,
            Source::Neuron { origins, .. } => origins.len(),
            Source::Vessels { tiffs, .. } => tiffs.len(),
        }
    }

    /// Object grid shared by every instance.
    fn grid(&self) -> Result<VolumeGrid> {
        match self {
            Source::Beads { spec, .. } => Ok(spec.grid),
            Source::Neuron {
                clipped, config, ..
            } => {
                let g = clipped.grid();
                let (tx, ty) = config.tile_px.map_or((g.nx(), g.ny()), |t| (t, t));
                VolumeGrid::new(tx, ty, config.subvolume_depth, g.dx(), g.dy(), g.dz())
            }
            Source::Vessels { pitch, config, .. } => {
                let (nx, ny, nz) = config.output_shape.expect("validated");
                let f = config.rescale_factor;
                VolumeGrid::new(nx, ny, nz, pitch.0 / f, pitch.1 / f, pitch.2 / f)
            }
        }
    }

    fn object(&self, i: usize) -> Result<Volume3D> {
        match self {
            Source::Beads { spec, stream, .. } => {
                Ok(gen_beads(spec, &mut stream.split(i as u64))?.volume)
            }
            Source::Neuron {
                clipped,
                origins,
                config,
                scale,
            } => Ok(extract_window(clipped, origins[i], config)?
                .volume
                .scaled(*scale)),
            Source::Vessels {
                tiffs,
                pitch,
                config,
            } => preprocess_vessels(&read_tiff_stack(&tiffs[i], *pitch)?, config),
        }
    }
}

/// What a run would produce.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetPlan {
    pub recipe: String,
    pub instances: usize,
    pub t: usize,
    /// Object grid `(nx, ny, nz)`.
    pub object_shape: (usize, usize, usize),
    pub pitch_um: (f64, f64, f64),
    /// Per configured depth, the depths in µm the sPSF stack is simulated at.
    pub spsf_depths_um: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetReport {
    pub plan: DatasetPlan,
    pub photon_scale: f64,
    pub gain_k_max: u64,
    pub seconds: f64,
    pub instances_per_min: f64,
}

/// Depths in µm of the planes that get their own sPSF: every
/// `stride`-th plane and the last one.
pub fn stack_depths_um(grid: &VolumeGrid, fwd: &ForwardConfig, stride: usize) -> Vec<f64> {
    let nz = grid.nz();
    let mut planes: Vec<usize> = (0..nz).step_by(stride.max(1)).collect();
    if *planes.last().expect("nz ≥ 1") != nz - 1 {
        planes.push(nz - 1);
    }
    planes
        .into_iter()
        .map(|z| fwd.plane_depth_um(z, grid.dz()))
        .collect()
}

fn forward_config(grid: &VolumeGrid, optics: &TissueOptics, depth_sl: f64) -> ForwardConfig {
    ForwardConfig {
        focal_depth_um: optics.sl_to_um(depth_sl),
        ..ForwardConfig::new(grid.nz() / 2)
    }
}

fn plan(cfg: &DatasetConfig, source: &Source) -> Result<DatasetPlan> {
    let grid = source.grid()?;
    cfg.check_object_grid(&grid)?;
    let optics = cfg.optics.tissue();
    Ok(DatasetPlan {
        recipe: cfg.recipe.name().to_string(),
        instances: source.len(),
        t: cfg.patterns.t,
        object_shape: grid.dims(),
        pitch_um: (grid.dx(), grid.dy(), grid.dz()),
        spsf_depths_um: cfg
            .depths_sl
            .iter()
            .map(|&d| {
                stack_depths_um(
                    &grid,
                    &forward_config(&grid, &optics, d),
                    cfg.spsf.stride_planes,
                )
            })
            .collect(),
    })
}

/// Validates the configuration and opens the inputs without writing
/// anything.
pub fn dry_run(cfg: &DatasetConfig) -> Result<DatasetPlan> {
    cfg.validate()?;
    let source = Source::open(cfg, &RngStream::new(cfg.seed, 1))?;
    let p = plan(cfg, &source)?;
    make_psf(&cfg.psf.excitation, &cfg.psf_grid(&source.grid()?)?)?;
    make_psf(&cfg.psf.emission, &cfg.psf_grid(&source.grid()?)?)?;
    Ok(p)
}

fn instance_dir(i: usize) -> String {
    format!("instances/{i:05}")
}

fn spsf_file(d: usize) -> String {
    format!("spsf/depth_{d:02}.tns")
}

/// Generates the dataset under `out`, which must be absent or empty.
///
/// Any failure aborts the run; failures while producing an instance are
/// wrapped in [`Error::AtInstance`].
pub fn generate_dataset(cfg: &DatasetConfig, out: &Path) -> Result<DatasetReport> {
    let start = Instant::now();
    cfg.validate()?;
    if out.exists() && fs::read_dir(out)?.next().is_some() {
        return Err(Error::invalid(
            "out",
            format!("{} exists and is not empty", out.display()),
        ));
    }
    let base = RngStream::new(cfg.seed, 1);
    let source = Source::open(cfg, &base)?;
    let plan = plan(cfg, &source)?;
    let grid = source.grid()?;
    let psf_grid = cfg.psf_grid(&grid)?;
    let ex = make_psf(&cfg.psf.excitation, &psf_grid)?;
    let em = make_psf(&cfg.psf.emission, &psf_grid)?;
    let photon_scale = match cfg.photon_scale {
        Some(s) => s,
        None => calibrate_photon_scale(&ex, &em, cfg.calibration_photons)?,
    };
    let optics = cfg.optics.tissue();

    fs::create_dir_all(out.join("spsf"))?;
    fs::create_dir_all(out.join("instances"))?;
    fs::write(
        out.join(CONFIG_FILE),
        serde_json::to_vec_pretty(cfg).map_err(crate::io::FormatError::from)?,
    )?;

    let patterns = make_patterns(
        cfg.patterns.t,
        grid.nx(),
        grid.ny(),
        cfg.patterns.fill,
        cfg.seed,
    )?;
    write_patterns(&out.join(PATTERNS_FILE), &patterns)?;
    let pattern_hash = sha256_file(&out.join(PATTERNS_FILE))?;

    log::info!(
        "{} recipe: {} instances of {}x{}x{}, t = {}",
        plan.recipe,
        plan.instances,
        plan.t,
        grid.ny(),
        grid.nx(),
        plan.t
    );
    let spsf_stream = base.split(STREAM_SPSF);
    let mut stacks: Vec<Option<SpsfStack>> = vec![None; cfg.depths_sl.len()];
    let mut gain = build_gain_table(
        &cfg.camera,
        cfg.gain_samples_per_k,
        &base.split(STREAM_GAIN),
    )?;
    let detect_stream = base.split(STREAM_DETECT);
    let mut entries = Vec::with_capacity(plan.instances);

    for i in 0..plan.instances {
        let d = i % cfg.depths_sl.len();
        if stacks[d].is_none() {
            let t0 = Instant::now();
            let depths_sl: Vec<f64> = plan.spsf_depths_um[d]
                .iter()
                .map(|&u| optics.um_to_sl(u))
                .collect();
            let stack = generate_spsf_stack(
                &depths_sl,
                &cfg.spsf_request(1.0, grid.dx()),
                &spsf_stream.split(d as u64),
            )?;
            write_spsf_stack(&out.join(spsf_file(d)), &stack)?;
            log::info!(
                "sPSF stack for {} SL: {} kernels in {:.1} s",
                cfg.depths_sl[d],
                stack.len(),
                t0.elapsed().as_secs_f64()
            );
            stacks[d] = Some(stack);
        }
        let stack = stacks[d].as_ref().expect("just built");
        let meta = InstanceMeta {
            seed: cfg.seed,
            index: i,
            recipe: plan.recipe.clone(),
            depth_sl: cfg.depths_sl[d],
            optics,
            na: cfg.optics.na,
            n_medium: cfg.optics.n_medium,
            ex_psf: cfg.psf.excitation,
            em_psf: cfg.psf.emission,
            camera: cfg.camera,
            pattern_file: format!("../../{PATTERNS_FILE}"),
            pattern_set_hash: pattern_hash.clone(),
            photon_scale,
        };
        let entry = make_instance(
            i,
            cfg,
            &source,
            (&ex, &em, stack, &patterns),
            photon_scale,
            &mut gain,
            &detect_stream,
            meta,
            out,
        )
        .map_err(|e| Error::AtInstance {
            index: i,
            source: Box::new(e),
        })?;
        entries.push(entry);
        let secs = start.elapsed().as_secs_f64();
        log::info!(
            "instance {}/{} written ({:.2} instances/min)",
            i + 1,
            plan.instances,
            60.0 * (i + 1) as f64 / secs
        );
    }

    write_gain_table(&out.join(GAIN_TABLE_FILE), &gain)?;
    let mut manifest = DatasetManifest {
        format_version: MANIFEST_VERSION,
        config: serde_json::to_value(cfg).map_err(crate::io::FormatError::from)?,
        instances: entries,
    };
    if manifest.instances.len() >= 2 {
        manifest = split_manifest(
            &manifest,
            cfg.split.train_fraction,
            cfg.split.seed.unwrap_or(cfg.seed),
        )?;
    }
    write_manifest(out, &manifest)?;

    let seconds = start.elapsed().as_secs_f64();
    Ok(DatasetReport {
        instances_per_min: 60.0 * plan.instances as f64 / seconds,
        plan,
        photon_scale,
        gain_k_max: gain.k_max(),
        seconds,
    })
}

#[allow(clippy::too_many_arguments)]
fn make_instance(
    i: usize,
    cfg: &DatasetConfig,
    source: &Source,
    (ex, em, stack, patterns): (&Volume3D, &Volume3D, &SpsfStack, &PatternSet),
    photon_scale: f64,
    gain: &mut GainTable,
    detect_stream: &RngStream,
    meta: InstanceMeta,
    out: &Path,
) -> Result<ManifestEntry> {
    let object = source.object(i)?;
    let fwd = forward_config(object.grid(), &cfg.optics.tissue(), meta.depth_sl);
    let mut clean = simulate_clean(&object, patterns, ex, em, stack, &fwd, photon_scale)?;
    // FFT round-off leaves values near -1e-16 where the image is empty
    for im in clean
        .images
        .iter_mut()
        .chain(std::iter::once(&mut clean.ground_truth))
    {
        im.values_mut().iter_mut().for_each(|v| *v = v.max(0.0));
    }
    let k_max = clean
        .images
        .iter()
        .map(|im| required_k_max(im, &cfg.camera))
        .max()
        .unwrap_or(0);
    gain.ensure_rows(k_max);
    let stream = detect_stream.split(i as u64);
    let detected = clean
        .images
        .iter()
        .enumerate()
        .map(|(t, im)| detect(im, &cfg.camera, gain, &stream.split(t as u64)))
        .collect::<Result<Vec<_>>>()?;
    let record = InstanceRecord::from_images(&detected, &clean.ground_truth, meta)?;
    let rel = instance_dir(i);
    let dir = out.join(&rel);
    write_instance(&dir, &record)?;
    let mut files = BTreeMap::new();
    for name in [MEASUREMENTS_FILE, GROUND_TRUTH_FILE, META_FILE] {
        files.insert(format!("{rel}/{name}"), sha256_file(&dir.join(name))?);
    }
    Ok(ManifestEntry {
        path: rel,
        split: None,
        files,
    })
}
