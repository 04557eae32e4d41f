//! EMCCD detection: shot and dark noise, electron multiplication, read noise.
//!
//! The gain register has `N` stages; at each stage every electron
//! independently spawns a second one with probability `α = g^{1/N} - 1`, so
//! the mean gain is `(1 + α)^N = g`. Sampling that cascade per pixel is slow,
//! so [`GainTable`] stores 1024 quantiles of the simulated output for every
//! input count and detection draws from those.

use rand_distr::{Binomial, Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Image2D;
use crate::rng::RngStream;

pub const QUANTILES: usize = 1024;
pub const DEFAULT_SAMPLES_PER_K: usize = 100_000;

/// Smallest table size ever built.
const MIN_K_MAX: u64 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraSpec {
    /// Electrons per pixel per second.
    pub dark_rate: f64,
    /// Seconds.
    pub exposure: f64,
    /// Read noise σ in electrons.
    pub sigma_read: f64,
    pub g_em: f64,
    pub n_stages: u32,
    /// Largest input count the gain table must cover.
    pub max_input: u64,
}

impl Default for CameraSpec {
    fn default() -> Self {
        Self {
            dark_rate: 0.005,
            exposure: 0.05,
            sigma_read: 60.0,
            g_em: 300.0,
            n_stages: 512,
            max_input: MIN_K_MAX,
        }
    }
}

impl CameraSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.dark_rate.is_finite() && self.dark_rate >= 0.0) {
            return Err(Error::invalid(
                "dark_rate",
                format!("must be nonnegative, got {}", self.dark_rate),
            ));
        }
        if !(self.exposure.is_finite() && self.exposure > 0.0) {
            return Err(Error::invalid(
                "exposure",
                format!("must be positive, got {}", self.exposure),
            ));
        }
        if !(self.sigma_read.is_finite() && self.sigma_read >= 0.0) {
            return Err(Error::invalid(
                "sigma_read",
                format!("must be nonnegative, got {}", self.sigma_read),
            ));
        }
        if !(self.g_em.is_finite() && self.g_em >= 1.0) {
            return Err(Error::invalid(
                "g_em",
                format!("must be at least 1, got {}", self.g_em),
            ));
        }
        if self.n_stages == 0 {
            return Err(Error::invalid("n_stages", "must be at least 1"));
        }
        let a = self.alpha();
        if !(a < 1.0) {
            return Err(Error::invalid(
                "g_em",
                format!(
                    "gain {} over {} stages needs α = {a} ≥ 1",
                    self.g_em, self.n_stages
                ),
            ));
        }
        Ok(())
    }

    /// Per-stage multiplication probability; zero at unit gain.
    pub fn alpha(&self) -> f64 {
        self.g_em.powf(1.0 / self.n_stages as f64) - 1.0
    }

    /// Mean dark electrons per pixel per exposure.
    pub fn dark_mean(&self) -> f64 {
        self.dark_rate * self.exposure
    }

    /// `max(ceil(μ + 8√μ), 64)` for a mean input of `mean_photons` plus dark.
    pub fn k_max_for(&self, mean_photons: f64) -> u64 {
        let mu = mean_photons.max(0.0) + self.dark_mean();
        ((mu + 8.0 * mu.sqrt()).ceil() as u64).max(MIN_K_MAX)
    }

    pub fn with_max_input(self, max_input: u64) -> Self {
        Self { max_input, ..self }
    }
}

/// `F² = 2(g - 1)·g^{-(N+1)/N} + 1/g`.
pub fn excess_noise_factor_sq(g_em: f64, n_stages: u32) -> f64 {
    let n = n_stages as f64;
    2.0 * (g_em - 1.0) * g_em.powf(-(n + 1.0) / n) + 1.0 / g_em
}

/// One pass through the gain register starting from `k` electrons.
pub fn simulate_cascade(k: u64, alpha: f64, n_stages: u32, rng: &mut RngStream) -> u64 {
    let mut out = k;
    if alpha <= 0.0 {
        return out;
    }
    for _ in 0..n_stages {
        if out == 0 {
            break;
        }
        out += Binomial::new(out, alpha)
            .expect("α lies in (0, 1)")
            .sample(rng);
    }
    out
}

/// Quantile tables of the gain-register output for inputs `0..=k_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct GainTable {
    spec: CameraSpec,
    samples_per_k: usize,
    seed: u64,
    stream_id: u64,
    /// Row-major `(k_max + 1) × QUANTILES`.
    quantiles: Vec<u32>,
}

fn build_row(k: u64, spec: &CameraSpec, samples: usize, base: &RngStream) -> Vec<u32> {
    if k == 0 {
        return vec![0; QUANTILES];
    }
    let mut rng = base.split(k);
    let alpha = spec.alpha();
    let mut draws: Vec<u64> = (0..samples)
        .map(|_| simulate_cascade(k, alpha, spec.n_stages, &mut rng))
        .collect();
    draws.sort_unstable();
    (0..QUANTILES)
        .map(|i| {
            let j = ((i as f64 + 0.5) * samples as f64 / QUANTILES as f64) as usize;
            u32::try_from(draws[j.min(samples - 1)]).expect("gain output fits in u32")
        })
        .collect()
}

/// Simulates `samples_per_k` cascades for every input count up to
/// `spec.max_input`. Row `k` draws from `rng.split(k)`.
pub fn build_gain_table(
    spec: &CameraSpec,
    samples_per_k: usize,
    rng: &RngStream,
) -> Result<GainTable> {
    spec.validate()?;
    if samples_per_k == 0 {
        return Err(Error::invalid("samples_per_k", "must be at least 1"));
    }
    let mut t = GainTable {
        spec: *spec,
        samples_per_k,
        seed: rng.seed(),
        stream_id: rng.stream_id(),
        quantiles: Vec::new(),
    };
    t.ensure_rows(spec.max_input);
    Ok(t)
}

impl GainTable {
    /// Reassembles a table from stored quantiles.
    pub fn from_parts(
        spec: CameraSpec,
        samples_per_k: usize,
        seed: u64,
        stream_id: u64,
        quantiles: Vec<u32>,
    ) -> Result<Self> {
        spec.validate()?;
        if quantiles.is_empty() || quantiles.len() % QUANTILES != 0 {
            return Err(Error::ShapeMismatch(format!(
                "{} quantiles is not a whole number of {QUANTILES}-point rows",
                quantiles.len()
            )));
        }
        if quantiles
            .chunks_exact(QUANTILES)
            .any(|r| r.windows(2).any(|w| w[1] < w[0]))
        {
            return Err(Error::invalid("gain table", "rows must be nondecreasing"));
        }
        let k_max = (quantiles.len() / QUANTILES - 1) as u64;
        Ok(Self {
            spec: spec.with_max_input(k_max),
            samples_per_k,
            seed,
            stream_id,
            quantiles,
        })
    }

    pub fn spec(&self) -> &CameraSpec {
        &self.spec
    }

    pub fn samples_per_k(&self) -> usize {
        self.samples_per_k
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    pub fn k_max(&self) -> u64 {
        (self.quantiles.len() / QUANTILES) as u64 - 1
    }

    pub fn quantiles(&self) -> &[u32] {
        &self.quantiles
    }

    pub fn row(&self, k: u64) -> Option<&[u32]> {
        let k = usize::try_from(k).ok()?;
        self.quantiles.get(k * QUANTILES..(k + 1) * QUANTILES)
    }

    /// Extends the table to cover inputs up to `k_max`. Rows are keyed by
    /// their own sub-stream, so a grown table equals one built at full size.
    pub fn ensure_rows(&mut self, k_max: u64) {
        let have = (self.quantiles.len() / QUANTILES) as u64;
        if k_max < have {
            return;
        }
        let base = RngStream::new(self.seed, self.stream_id);
        let spec = self.spec;
        let samples = self.samples_per_k;
        let rows: Vec<Vec<u32>> = (have..=k_max)
            .into_par_iter()
            .map(|k| build_row(k, &spec, samples, &base))
            .collect();
        for r in rows {
            self.quantiles.extend(r);
        }
        self.spec.max_input = k_max;
    }

    /// Mean of the stored distribution for input `k`.
    pub fn row_mean(&self, k: u64) -> Option<f64> {
        self.row(k)
            .map(|r| r.iter().map(|&v| v as f64).sum::<f64>() / QUANTILES as f64)
    }

    /// Variance of the stored distribution for input `k`.
    pub fn row_variance(&self, k: u64) -> Option<f64> {
        let r = self.row(k)?;
        let m = r.iter().map(|&v| v as f64).sum::<f64>() / QUANTILES as f64;
        Some(r.iter().map(|&v| (v as f64 - m).powi(2)).sum::<f64>() / QUANTILES as f64)
    }

    /// Stored CDF of row `k` evaluated at `x`.
    pub fn row_cdf(&self, k: u64, x: u64) -> Option<f64> {
        let r = self.row(k)?;
        let below = r.partition_point(|&v| (v as u64) <= x);
        Some(below as f64 / QUANTILES as f64)
    }
}

/// Inverse-CDF draw of the gain output for `k` input electrons.
pub fn apply_em_gain(k: u64, table: &GainTable, rnd: f64) -> Result<u64> {
    let row = table.row(k).ok_or(Error::GainTableExceeded {
        k,
        k_max: table.k_max(),
    })?;
    let i = ((rnd * QUANTILES as f64) as usize).min(QUANTILES - 1);
    Ok(row[i] as u64)
}

/// Largest input count [`detect`] can plausibly need for `clean`.
pub fn required_k_max(clean: &Image2D, spec: &CameraSpec) -> u64 {
    spec.k_max_for(clean.max().max(0.0))
}

/// Turns expected photons into output electrons. Row `y` of the image draws
/// from `rng.split(y)`.
pub fn detect(
    clean: &Image2D,
    spec: &CameraSpec,
    table: &GainTable,
    rng: &RngStream,
) -> Result<Image2D> {
    spec.validate()?;
    if let Some(index) = clean.values().iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    if let Some(i) = clean.values().iter().position(|&v| v < 0.0) {
        return Err(Error::invalid(
            "clean",
            format!("negative expected count at index {i}"),
        ));
    }
    let nx = clean.nx();
    let dark = spec.dark_mean();
    let dark_dist = (dark > 0.0).then(|| Poisson::new(dark).expect("positive mean"));
    let read =
        (spec.sigma_read > 0.0).then(|| Normal::new(0.0, spec.sigma_read).expect("positive σ"));
    let rows: Vec<Vec<f64>> = clean
        .values()
        .par_chunks(nx)
        .enumerate()
        .map(|(y, row)| {
            let mut r = rng.split(y as u64);
            row.iter()
                .map(|&lambda| {
                    let mut k = if lambda > 0.0 {
                        Poisson::new(lambda).expect("positive mean").sample(&mut r) as u64
                    } else {
                        0
                    };
                    if let Some(d) = &dark_dist {
                        k += d.sample(&mut r) as u64;
                    }
                    let e = apply_em_gain(k, table, r.uniform())? as f64;
                    Ok(match &read {
                        Some(n) => e + n.sample(&mut r),
                        None => e,
                    })
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    Image2D::new(nx, clean.ny(), clean.pitch(), rows.concat())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(g: f64, n: u32) -> CameraSpec {
        CameraSpec {
            g_em: g,
            n_stages: n,
            ..CameraSpec::default()
        }
    }

    #[test]
    fn enf_values() {
        assert_eq!(excess_noise_factor_sq(1.0, 512), 1.0);
        assert_eq!(excess_noise_factor_sq(1.0, 1), 1.0);
        assert!((excess_noise_factor_sq(1000.0, 512) - 1.972).abs() < 0.001);
        // branching-process form: F² = 1 + (1 - α)(g - 1) / (g (1 + α))
        for (g, n) in [(100.0, 512), (300.0, 512), (1000.0, 512), (7.0, 3)] {
            let a = spec(g, n).alpha();
            let oracle = 1.0 + (1.0 - a) * (g - 1.0) / (g * (1.0 + a));
            let f2 = excess_noise_factor_sq(g, n);
            assert!((f2 - oracle).abs() < 1e-12, "{g} {n}");
            assert!(f2 < 2.0);
        }
        // at N = 512 the curve peaks between g = 100 and g = 1000
        assert!(excess_noise_factor_sq(300.0, 512) > excess_noise_factor_sq(1000.0, 512));
    }

    #[test]
    fn alpha_inversion() {
        let s = spec(300.0, 512);
        let a = s.alpha();
        assert!(a > 0.011 && a < 0.0113, "{a}");
        assert!(((1.0 + a).powi(512) - 300.0).abs() / 300.0 < 1e-6);
        assert_eq!(spec(1.0, 512).alpha(), 0.0);
        assert!(spec(1.0, 512).validate().is_ok());
        assert!(spec(0.5, 512).validate().is_err());
        assert!(spec(3.0, 1).validate().is_err());
    }

    #[test]
    fn k_max_rule() {
        let s = CameraSpec::default();
        assert_eq!(s.k_max_for(0.0), 64);
        assert_eq!(
            s.k_max_for(100.0),
            (100.00025f64 + 8.0 * 100.00025f64.sqrt()).ceil() as u64
        );
    }

    #[test]
    fn zero_row_is_point_mass() {
        let t = build_gain_table(
            &spec(300.0, 512).with_max_input(2),
            100,
            &RngStream::new(1, 0),
        )
        .unwrap();
        assert!(t.row(0).unwrap().iter().all(|&v| v == 0));
        for i in 0..50 {
            assert_eq!(apply_em_gain(0, &t, i as f64 / 50.0).unwrap(), 0);
        }
    }

    #[test]
    fn single_stage_is_bernoulli() {
        let s = CameraSpec {
            g_em: 1.3,
            n_stages: 1,
            ..CameraSpec::default()
        }
        .with_max_input(1);
        let t = build_gain_table(&s, 20_000, &RngStream::new(2, 0)).unwrap();
        let row = t.row(1).unwrap();
        assert!(row.iter().all(|&v| v == 1 || v == 2));
        let p2 = row.iter().filter(|&&v| v == 2).count() as f64 / QUANTILES as f64;
        // quantile resolution is 1/1024, sampling sd is sqrt(0.21/2e4) ≈ 3.2e-3
        assert!((p2 - 0.3).abs() < 0.015, "{p2}");
    }

    #[test]
    fn exceeding_table_errors() {
        let t =
            build_gain_table(&spec(10.0, 8).with_max_input(3), 10, &RngStream::new(3, 0)).unwrap();
        assert!(matches!(
            apply_em_gain(4, &t, 0.5),
            Err(Error::GainTableExceeded { k: 4, k_max: 3 })
        ));
        assert_eq!(
            apply_em_gain(2, &t, 0.3).unwrap(),
            apply_em_gain(2, &t, 0.3).unwrap()
        );
    }

    #[test]
    fn grown_table_equals_full_build() {
        let s = spec(50.0, 64);
        let mut small = build_gain_table(&s.with_max_input(3), 500, &RngStream::new(4, 9)).unwrap();
        small.ensure_rows(7);
        let full = build_gain_table(&s.with_max_input(7), 500, &RngStream::new(4, 9)).unwrap();
        assert_eq!(small, full);
    }

    #[test]
    fn rows_are_nondecreasing() {
        let t = build_gain_table(
            &spec(100.0, 128).with_max_input(5),
            2000,
            &RngStream::new(5, 0),
        )
        .unwrap();
        for k in 0..=5 {
            assert!(t.row(k).unwrap().windows(2).all(|w| w[0] <= w[1]));
        }
        assert!(GainTable::from_parts(*t.spec(), 2000, 5, 0, t.quantiles().to_vec()).is_ok());
        let mut bad = t.quantiles().to_vec();
        bad[QUANTILES + 3] = u32::MAX;
        assert!(GainTable::from_parts(*t.spec(), 2000, 5, 0, bad).is_err());
    }

    #[test]
    fn detect_noise_free_zero() {
        let s = CameraSpec {
            dark_rate: 0.0,
            sigma_read: 0.0,
            ..CameraSpec::default()
        }
        .with_max_input(1);
        let t = build_gain_table(&s, 10, &RngStream::new(6, 0)).unwrap();
        let clean = Image2D::zeros(16, 8, 1.0).unwrap();
        let out = detect(&clean, &s, &t, &RngStream::new(7, 0)).unwrap();
        assert!(out.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn detect_rejects_negative_input() {
        let s = CameraSpec::default().with_max_input(1);
        let t = build_gain_table(&s, 10, &RngStream::new(6, 0)).unwrap();
        let clean = Image2D::new(2, 1, 1.0, vec![1.0, -1.0]).unwrap();
        assert!(detect(&clean, &s, &t, &RngStream::new(7, 0)).is_err());
    }
}
