//! Experiment configuration: a TOML file with one table per concern.
//!
//! ```toml
//! [phantom]
//! kind = "r1"        # r1 | r2
//! seed = 1
//! # nx = 63, ny = 63, pitch = 0.1 override the kind's default grid
//! # dir = "phantom"  loads maps written by `sqdm-gp phantom`
//!
//! [experiment]
//! models = ["feedback", "none", "sod-sw", "fitc"]
//! scan_times = [75.0, 150.0, 300.0]
//! polarities = ["minus"]
//! seeds = 2          # seeds per cell, numbered from seed_base
//! images = true
//!
//! [esc]        # amplitude, omega, k_i, lpf_tau, hpf_tau, dt
//! [optimizer]  # max_cg_iters, rel_improvement_tol, grad_tol
//! [prior]      # enabled, noise, noise_log_std, length_pitches, length_log_std
//! [sod]        # window_lines, k_clusters, egp_error, egp_variance
//! [fitc]       # window_lines, m_fraction
//! [ssgpr]      # window_lines, m_fraction
//! ```

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::control::{ModelKind, PriorSpec, ScanConfig};
use crate::error::{Error, Result};
use crate::grid::{GridSpec, Polarity};
use crate::plant::{make_phantom, Phantom, PhantomKind};

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    phantom: RawPhantom,
    experiment: RawExperiment,
    #[serde(default)]
    esc: RawEsc,
    #[serde(default)]
    optimizer: RawOptimizer,
    #[serde(default)]
    prior: RawPrior,
    #[serde(default)]
    sod: RawSod,
    #[serde(default)]
    fitc: RawSparse,
    #[serde(default)]
    ssgpr: RawSparse,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPhantom {
    kind: Option<String>,
    #[serde(default)]
    seed: u64,
    nx: Option<usize>,
    ny: Option<usize>,
    pitch: Option<f64>,
    dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawExperiment {
    models: Vec<String>,
    scan_times: Vec<f64>,
    #[serde(default = "default_polarities")]
    polarities: Vec<String>,
    #[serde(default = "one")]
    seeds: u64,
    #[serde(default)]
    seed_base: u64,
    #[serde(default = "yes")]
    images: bool,
    output: Option<PathBuf>,
    first_line_slowdown: Option<f64>,
    compensate_delay: Option<bool>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEsc {
    amplitude: Option<f64>,
    omega: Option<f64>,
    k_i: Option<f64>,
    lpf_tau: Option<f64>,
    hpf_tau: Option<f64>,
    dt: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOptimizer {
    max_cg_iters: Option<usize>,
    rel_improvement_tol: Option<f64>,
    grad_tol: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPrior {
    enabled: Option<bool>,
    noise: Option<f64>,
    noise_log_std: Option<f64>,
    length_pitches: Option<f64>,
    length_log_std: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSod {
    window_lines: Option<usize>,
    k_clusters: Option<usize>,
    egp_error: Option<f64>,
    egp_variance: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSparse {
    window_lines: Option<usize>,
    m_fraction: Option<f64>,
}

fn default_polarities() -> Vec<String> {
    vec!["minus".into()]
}

fn one() -> u64 {
    1
}

fn yes() -> bool {
    true
}

/// Where the phantom comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum PhantomSource {
    Generate { kind: PhantomKind, grid: Option<GridSpec>, seed: u64 },
    Load(PathBuf),
}

impl PhantomSource {
    pub fn build(&self) -> Result<Phantom> {
        match self {
            PhantomSource::Generate { kind, grid, seed } => Ok(make_phantom(*kind, *grid, *seed)),
            PhantomSource::Load(dir) => Phantom::load(dir),
        }
    }
}

/// A validated experiment grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub phantom: PhantomSource,
    pub models: Vec<ModelKind>,
    pub scan_times: Vec<f64>,
    pub polarities: Vec<Polarity>,
    pub seeds: Vec<u64>,
    pub images: bool,
    pub output: Option<PathBuf>,
    /// Settings shared by every cell; model, time and polarity are filled
    /// in per cell by [`ExperimentConfig::scan_config`].
    pub base: ScanConfig,
    sod_window: Option<usize>,
    fitc: RawSparse,
    ssgpr: RawSparse,
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| {
            let line = e.span().map(|s| line_of(text, s.start)).unwrap_or(0);
            Error::Parse { line, message: e.message().to_string() }
        })?;
        Self::from_raw(raw, text)
    }

    fn from_raw(raw: RawConfig, text: &str) -> Result<Self> {
        let at = |key: &str, message: String| Error::Parse { line: find_key(text, key), message };

        let phantom = match (&raw.phantom.dir, &raw.phantom.kind) {
            (Some(dir), _) => PhantomSource::Load(dir.clone()),
            (None, kind) => {
                let kind = kind.as_deref().unwrap_or("r1");
                let kind = PhantomKind::parse(kind)
                    .ok_or_else(|| at("kind", format!("unknown phantom kind '{kind}', expected r1 or r2")))?;
                let p = &raw.phantom;
                let grid = if p.nx.is_some() || p.ny.is_some() || p.pitch.is_some() {
                    let d = kind.default_grid();
                    let pitch = p.pitch.unwrap_or(d.pitch_x);
                    let g = GridSpec::new(p.nx.unwrap_or(d.nx), p.ny.unwrap_or(d.ny), pitch, pitch)
                        .map_err(|e| at("nx", e.to_string()))?;
                    Some(g)
                } else {
                    None
                };
                PhantomSource::Generate { kind, grid, seed: p.seed }
            }
        };

        let e = &raw.experiment;
        if e.models.is_empty() {
            return Err(at("models", "models must not be empty".into()));
        }
        let models = e
            .models
            .iter()
            .map(|m| {
                ModelKind::parse(m).ok_or_else(|| {
                    let names: Vec<&str> = ModelKind::ALL.iter().map(|k| k.as_str()).collect();
                    at("models", format!("unknown model '{m}', expected one of {}", names.join(", ")))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if e.scan_times.is_empty() {
            return Err(at("scan_times", "scan_times must not be empty".into()));
        }
        if let Some(t) = e.scan_times.iter().find(|t| !(t.is_finite() && **t > 0.0)) {
            return Err(at("scan_times", format!("scan time {t} is not positive")));
        }
        if e.polarities.is_empty() {
            return Err(at("polarities", "polarities must not be empty".into()));
        }
        let polarities = e
            .polarities
            .iter()
            .map(|p| Polarity::parse(p).ok_or_else(|| at("polarities", format!("unknown polarity '{p}'"))))
            .collect::<Result<Vec<_>>>()?;
        if e.seeds == 0 {
            return Err(at("seeds", "seeds must be at least 1".into()));
        }

        let mut base = ScanConfig::new(1.0, Polarity::Negative, ModelKind::None);
        if let Some(s) = e.first_line_slowdown {
            base.first_line_slowdown = s;
        }
        if let Some(c) = e.compensate_delay {
            base.compensate_delay = c;
        }
        let esc = &raw.esc;
        for (slot, v) in [
            (&mut base.esc.amplitude, esc.amplitude),
            (&mut base.esc.omega, esc.omega),
            (&mut base.esc.k_i, esc.k_i),
            (&mut base.esc.lpf_tau, esc.lpf_tau),
            (&mut base.esc.hpf_tau, esc.hpf_tau),
            (&mut base.esc.dt, esc.dt),
        ] {
            if let Some(v) = v {
                *slot = v;
            }
        }
        let o = &raw.optimizer;
        if let Some(v) = o.max_cg_iters {
            base.optimizer.max_cg_iters = v;
        }
        if let Some(v) = o.rel_improvement_tol {
            base.optimizer.rel_improvement_tol = v;
        }
        if let Some(v) = o.grad_tol {
            base.optimizer.grad_tol = v;
        }
        let pr = &raw.prior;
        base.prior = if pr.enabled == Some(false) {
            None
        } else {
            let d = PriorSpec::default();
            Some(PriorSpec {
                noise: pr.noise.unwrap_or(d.noise),
                noise_log_std: pr.noise_log_std.unwrap_or(d.noise_log_std),
                length_pitches: pr.length_pitches.unwrap_or(d.length_pitches),
                length_log_std: pr.length_log_std.unwrap_or(d.length_log_std),
            })
        };
        if let Some(k) = raw.sod.k_clusters {
            if k == 0 {
                return Err(at("k_clusters", "k_clusters must be at least 1".into()));
            }
            base.k_clusters = k;
        }
        if let Some(v) = raw.sod.egp_error {
            base.egp.error = v;
        }
        if let Some(v) = raw.sod.egp_variance {
            base.egp.variance = v;
        }
        for (name, s) in [("fitc", &raw.fitc), ("ssgpr", &raw.ssgpr)] {
            if let Some(f) = s.m_fraction {
                if !(f > 0.0 && f <= 1.0) {
                    return Err(at("m_fraction", format!("[{name}] m_fraction must lie in (0, 1]")));
                }
            }
        }
        for w in [raw.sod.window_lines, raw.fitc.window_lines, raw.ssgpr.window_lines].into_iter().flatten() {
            if w == 0 {
                return Err(at("window_lines", "window_lines must be at least 1".into()));
            }
        }

        Ok(Self {
            phantom,
            models,
            scan_times: e.scan_times.clone(),
            polarities,
            seeds: (e.seed_base..e.seed_base + e.seeds).collect(),
            images: e.images,
            output: e.output.clone(),
            base,
            sod_window: raw.sod.window_lines,
            fitc: raw.fitc,
            ssgpr: raw.ssgpr,
        })
    }

    /// Scan settings of one grid cell.
    pub fn scan_config(&self, model: ModelKind, total_time: f64, polarity: Polarity) -> ScanConfig {
        let mut cfg = self.base.clone();
        cfg.model = model;
        cfg.total_time = total_time;
        cfg.polarity = polarity;
        cfg.window_lines = model.window_lines();
        let sparse = match model {
            ModelKind::Fitc => Some(&self.fitc),
            ModelKind::Ssgpr => Some(&self.ssgpr),
            _ => None,
        };
        if let Some(s) = sparse {
            if let Some(w) = s.window_lines {
                cfg.window_lines = w;
            }
            if let Some(f) = s.m_fraction {
                cfg.m_fraction = f;
            }
        }
        if matches!(model, ModelKind::SodSw | ModelKind::SodEgp | ModelKind::SodCluster | ModelKind::Kronecker) {
            if let Some(w) = self.sod_window {
                cfg.window_lines = w;
            }
        }
        cfg
    }

    /// Number of scans the grid runs.
    pub fn cell_count(&self) -> usize {
        self.models.len() * self.scan_times.len() * self.polarities.len() * self.seeds.len()
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].bytes().filter(|&b| b == b'\n').count() + 1
}

/// First line assigning `key`, for semantic errors that carry no span.
fn find_key(text: &str, key: &str) -> usize {
    text.lines()
        .position(|l| {
            let l = l.trim_start();
            l.strip_prefix(key).is_some_and(|rest| rest.trim_start().starts_with('='))
        })
        .map_or(0, |i| i + 1)
}
