//! Two-degree-of-freedom scan: a per-line GP feedforward for the bias plus
//! the extremum-seeking feedback, with model adaptation charged to the
//! backward pass of every line.

use std::time::Instant;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::gp_exact::FitState;
use crate::grid::{GridSpec, Point, Polarity, SamplePoint, ScanResult};
use crate::hyperopt::{per_line_adapt, HyperPrior, OptimizerConfig};
use crate::kernels::{sample_se_spectrum, Extras, HyperParams, KernelKind};
use crate::model::{Fitted, Method};
use crate::plant::{esc_step, EscConfig, EscState, Phantom, PhantomPlant};
use crate::sparse::fitc::subsample_inducing;
use crate::sparse::sod::{build_sod, ActiveSet, ActiveSetPolicy, EvolvingThresholds, SodModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    /// ESC alone, no feedforward.
    FeedbackOnly,
    /// Feedforward copies the previously tracked line.
    None,
    SodSw,
    SodEgp,
    SodCluster,
    Kronecker,
    Fitc,
    Ssgpr,
    /// Ground-truth feedforward; a reference for the feedback loop.
    Oracle,
}

impl ModelKind {
    pub const ALL: [ModelKind; 9] = [
        ModelKind::FeedbackOnly,
        ModelKind::None,
        ModelKind::SodSw,
        ModelKind::SodEgp,
        ModelKind::SodCluster,
        ModelKind::Kronecker,
        ModelKind::Fitc,
        ModelKind::Ssgpr,
        ModelKind::Oracle,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::FeedbackOnly => "feedback",
            ModelKind::None => "none",
            ModelKind::SodSw => "sod-sw",
            ModelKind::SodEgp => "sod-egp",
            ModelKind::SodCluster => "sod-cluster",
            ModelKind::Kronecker => "kronecker",
            ModelKind::Fitc => "fitc",
            ModelKind::Ssgpr => "ssgpr",
            ModelKind::Oracle => "oracle",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|k| k.as_str() == s.to_ascii_lowercase())
    }

    /// Lines of recent data each model is fitted on.
    pub fn window_lines(&self) -> usize {
        match self {
            ModelKind::Fitc | ModelKind::Ssgpr => 5,
            ModelKind::SodSw | ModelKind::SodEgp | ModelKind::SodCluster | ModelKind::Kronecker => 2,
            ModelKind::FeedbackOnly | ModelKind::None | ModelKind::Oracle => 1,
        }
    }

    pub fn is_gp(&self) -> bool {
        !matches!(self, ModelKind::FeedbackOnly | ModelKind::None | ModelKind::Oracle)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanConfig {
    /// Total scan time, s.
    pub total_time: f64,
    pub polarity: Polarity,
    pub model: ModelKind,
    pub window_lines: usize,
    /// Inducing inputs or spectral points per training point.
    pub m_fraction: f64,
    pub optimizer: OptimizerConfig,
    pub esc: EscConfig,
    /// The model-free first line runs this many times slower.
    pub first_line_slowdown: f64,
    pub egp: EvolvingThresholds,
    pub k_clusters: usize,
    pub seed_offset: u64,
    pub prior: Option<PriorSpec>,
    /// Read the feedback share one loop delay late.
    pub compensate_delay: bool,
    /// Adapted length scales below this many pitches are rejected.
    pub min_length_pitches: f64,
}

/// Log-normal priors on the noise level and the length scales, applied
/// during per-line adaptation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriorSpec {
    /// Prior median of sigma_n, V.
    pub noise: f64,
    pub noise_log_std: f64,
    /// Prior median of the length scales, in pixel pitches.
    pub length_pitches: f64,
    pub length_log_std: f64,
}

impl Default for PriorSpec {
    fn default() -> Self {
        Self { noise: 0.005, noise_log_std: 0.05, length_pitches: 5.0, length_log_std: 0.5 }
    }
}

impl PriorSpec {
    pub fn build(&self, h: &HyperParams, grid: &GridSpec) -> HyperPrior {
        let layout = h.layout();
        let mut p = HyperPrior::new().with(layout.noise, self.noise.ln(), self.noise_log_std);
        for (d, idx) in layout.lengths.clone().enumerate() {
            let pitch = if d == 0 { grid.pitch_x } else { grid.pitch_y };
            p = p.with(idx, (self.length_pitches * pitch).ln(), self.length_log_std);
        }
        p
    }
}

impl ScanConfig {
    pub fn new(total_time: f64, polarity: Polarity, model: ModelKind) -> Self {
        Self {
            total_time,
            polarity,
            model,
            window_lines: model.window_lines(),
            m_fraction: 1.0 / 3.0,
            optimizer: scan_optimizer(),
            esc: EscConfig::default(),
            first_line_slowdown: 4.0,
            egp: EvolvingThresholds::default(),
            k_clusters: 4,
            seed_offset: 0,
            prior: Some(PriorSpec::default()),
            compensate_delay: true,
            min_length_pitches: 0.5,
        }
    }

    pub fn line_time(&self, grid: &GridSpec) -> f64 {
        self.total_time / grid.ny as f64
    }

    /// Backward half of a line, available for computation.
    pub fn budget_per_line(&self, grid: &GridSpec) -> f64 {
        self.line_time(grid) / 2.0
    }

    /// Training points in a full window and the matching sparse size.
    pub fn window_sizes(&self, grid: &GridSpec) -> (usize, usize) {
        let n = self.window_lines * grid.nx;
        (n, (n as f64 * self.m_fraction).ceil() as usize)
    }
}

/// Optimizer settings used between scan lines.
pub fn scan_optimizer() -> OptimizerConfig {
    OptimizerConfig { rel_improvement_tol: 1e-6, ..OptimizerConfig::default() }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinePrediction {
    pub line: usize,
    pub vb_ff: Vec<f64>,
    pub variance: Vec<f64>,
}

/// A fitted source of next-line predictions.
pub enum Predictor<'a> {
    /// Copy of the previous tracked line.
    Copy(&'a [f64]),
    Gp(&'a Fitted),
    Sod(&'a SodModel),
}

/// Feedforward for line `j + 1` from a model fitted up to line `j`.
pub fn predict_next_line(model: Option<Predictor<'_>>, grid: &GridSpec, j: usize) -> Result<LinePrediction> {
    let line = j + 1;
    if line >= grid.ny {
        return Err(Error::InvalidArgument(format!("line {line} is outside a {}-line grid", grid.ny)));
    }
    let test = grid.line_positions(line);
    let (vb_ff, variance) = match model.ok_or(Error::Unfitted)? {
        Predictor::Copy(row) => {
            if row.len() != grid.nx {
                return Err(Error::Dimension(format!("{} tracked values for {} columns", row.len(), grid.nx)));
            }
            (row.to_vec(), vec![0.0; grid.nx])
        }
        Predictor::Gp(f) => {
            let (mean, var) = f.predict_marginals(&test)?;
            (mean.iter().copied().collect(), var.iter().copied().collect())
        }
        Predictor::Sod(s) => {
            let p = s.predict(&test)?;
            (p.mean.iter().copied().collect(), p.variance().iter().copied().collect())
        }
    };
    if vb_ff.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("prediction is not finite".into()));
    }
    Ok(LinePrediction { line, vb_ff, variance })
}

/// Per-line bookkeeping of the model adaptation.
#[derive(Debug, Clone)]
pub struct LineReport {
    pub line: usize,
    pub compute_s: f64,
    pub budget_s: f64,
    pub locked: bool,
    /// Objective values of the optimizer call, start first.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub hyper: Option<HyperParams>,
    /// Set when the model could not be refitted and the previous
    /// feedforward was reused.
    pub model_error: Option<String>,
    /// Feedforward computed for the next line, if any.
    pub prediction: Option<LinePrediction>,
}

#[derive(Debug, Clone)]
pub struct ScanOutcome {
    pub result: ScanResult,
    pub lines: Vec<LineReport>,
    /// Simulated time including compute overruns, s.
    pub simulated_time: f64,
}

/// Data-driven starting point from the first tracked line.
pub fn initial_hyper(row: &[f64], grid: &GridSpec, kernel: KernelKind) -> HyperParams {
    let n = row.len() as f64;
    let c = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|v| (v - c).powi(2)).sum::<f64>() / n;
    let sf = var.sqrt().max(1e-3);
    let lengths: Vec<f64> = match kernel {
        KernelKind::SeArd => vec![5.0 * grid.pitch_x, 5.0 * grid.pitch_y],
        _ => vec![5.0 * grid.pitch_x],
    };
    HyperParams::new(c, sf, &lengths, 0.01 * sf)
}

/// Model state carried from line to line.
struct Adapter<'a> {
    cfg: &'a ScanConfig,
    grid: GridSpec,
    phantom: &'a Phantom,
    seed: u64,
    hyper: Option<HyperParams>,
    egp_set: ActiveSet,
    egp_model: Option<FitState>,
}

struct Adapted {
    prediction: Option<LinePrediction>,
    trace: Vec<f64>,
    iterations: usize,
    hyper: Option<HyperParams>,
}

impl<'a> Adapter<'a> {
    fn new(cfg: &'a ScanConfig, phantom: &'a Phantom, seed: u64) -> Self {
        Self {
            cfg,
            grid: phantom.grid,
            phantom,
            seed,
            hyper: None,
            egp_set: ActiveSet::new(2 * phantom.grid.nx),
            egp_model: None,
        }
    }

    fn kernel(&self) -> KernelKind {
        match self.cfg.model {
            ModelKind::Ssgpr => KernelKind::SeIso,
            _ => KernelKind::SeArd,
        }
    }

    fn window(&self, image: &DMatrix<f64>, j: usize) -> (Vec<Point>, Vec<f64>) {
        let first = (j + 1).saturating_sub(self.cfg.window_lines);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for row in first..=j {
            for i in 0..self.grid.nx {
                x.push(self.grid.position(i, row));
                y.push(image[(row, i)]);
            }
        }
        (x, y)
    }

    /// Re-sizes or slides the method-specific extras for the current window.
    fn prepare(&self, h: HyperParams, x: &[Point], j: usize) -> HyperParams {
        let m = ((x.len() as f64) * self.cfg.m_fraction).ceil().max(1.0) as usize;
        match self.cfg.model {
            ModelKind::Fitc => {
                let extras = match h.inducing() {
                    Some(z) if z.len() == m => {
                        Extras::Inducing(z.iter().map(|p| [p[0], p[1] + self.grid.pitch_y]).collect())
                    }
                    _ => Extras::Inducing(subsample_inducing(x, m)),
                };
                h.with_extras(extras)
            }
            ModelKind::Ssgpr => match h.frequencies() {
                Some(s) if s.len() == m => h,
                _ => {
                    let l = h.lengths()[0];
                    let seed = self.seed ^ (0x5353_4750 + j as u64);
                    h.with_extras(Extras::Spectral(sample_se_spectrum(m, l, seed)))
                }
            },
            ModelKind::Kronecker => match &h.extras {
                Extras::AxisAmplitudes(_) => h,
                _ => {
                    let amps = vec![h.log_sigma_f, 0.0];
                    h.with_extras(Extras::AxisAmplitudes(amps))
                }
            },
            _ => h,
        }
    }

    fn method(&self) -> Method {
        match self.cfg.model {
            ModelKind::Fitc => Method::Fitc(KernelKind::SeArd),
            ModelKind::Ssgpr => Method::Ssgpr,
            ModelKind::Kronecker => Method::Kronecker,
            _ => Method::Exact(KernelKind::SeArd),
        }
    }

    /// Everything done during the backward pass of line `j`.
    fn after_line(&mut self, image: &DMatrix<f64>, j: usize) -> Result<Adapted> {
        let done = |prediction| Adapted { prediction, trace: Vec::new(), iterations: 0, hyper: None };
        if j + 1 >= self.grid.ny {
            return Ok(done(None));
        }
        match self.cfg.model {
            ModelKind::FeedbackOnly => return Ok(done(None)),
            ModelKind::None => {
                let row: Vec<f64> = image.row(j).iter().copied().collect();
                return predict_next_line(Some(Predictor::Copy(&row)), &self.grid, j).map(Some).map(done);
            }
            ModelKind::Oracle => {
                let truth = self.phantom.map(self.cfg.polarity);
                let vb_ff = truth.row(j + 1).iter().copied().collect();
                return Ok(done(Some(LinePrediction { line: j + 1, vb_ff, variance: vec![0.0; self.grid.nx] })));
            }
            _ => {}
        }

        let kernel = self.kernel();
        let h0 = match self.hyper.take() {
            Some(h) => h,
            None => {
                let row: Vec<f64> = image.row(j).iter().copied().collect();
                initial_hyper(&row, &self.grid, kernel)
            }
        };

        let (x, y) = if self.cfg.model == ModelKind::SodEgp {
            self.stream_evolving(image, j, &h0)?;
            (self.egp_set.inputs(), self.egp_set.targets())
        } else {
            self.window(image, j)
        };
        let h0 = self.prepare(h0, &x, j);
        let method = self.method();
        let prior = self.cfg.prior.map(|p| p.build(&h0, &self.grid));
        let adapt = per_line_adapt(method, &h0, &x, &y, &self.cfg.optimizer, prior.as_ref());
        // A length below the pixel pitch cannot be resolved by the grid; such
        // optima come from flat data and never recover, so keep the start.
        let floor = self.cfg.min_length_pitches * self.grid.pitch_x.min(self.grid.pitch_y);
        let h = if adapt.hyper.lengths().iter().all(|&l| l >= floor) { adapt.hyper } else { h0 };
        let (trace, iterations) = adapt.report.map(|r| (r.trace, r.iterations)).unwrap_or_default();

        let prediction = match self.cfg.model {
            ModelKind::SodCluster => {
                let data = self.all_points(image, j);
                let policy = ActiveSetPolicy::Clustering {
                    k: self.cfg.k_clusters,
                    capacity: self.cfg.window_lines * self.grid.nx,
                    seed: self.seed,
                };
                let sod = build_sod(&policy, &data, KernelKind::SeArd, &h)?;
                predict_next_line(Some(Predictor::Sod(&sod)), &self.grid, j)?
            }
            ModelKind::SodEgp => {
                let model = crate::gp_exact::fit_points(KernelKind::SeArd, &h, &x, &y)?;
                self.egp_model = Some(model.clone());
                predict_next_line(Some(Predictor::Sod(&SodModel::Single(model))), &self.grid, j)?
            }
            _ => {
                let fitted = method.fit(&h, &x, &y)?;
                predict_next_line(Some(Predictor::Gp(&fitted)), &self.grid, j)?
            }
        };
        self.hyper = Some(h.clone());
        Ok(Adapted { prediction: Some(prediction), trace, iterations, hyper: Some(h) })
    }

    fn all_points(&self, image: &DMatrix<f64>, j: usize) -> Vec<SamplePoint> {
        (0..=j)
            .flat_map(|row| (0..self.grid.nx).map(move |i| (row, i)))
            .map(|(row, i)| SamplePoint::new(self.grid.position(i, row), image[(row, i)]))
            .collect()
    }

    fn stream_evolving(&mut self, image: &DMatrix<f64>, j: usize, h: &HyperParams) -> Result<()> {
        if let Some(m) = &self.egp_model {
            if m.hyper() != h {
                self.egp_model =
                    Some(crate::gp_exact::fit_points(KernelKind::SeArd, h, m.inputs(), &self.egp_set.targets())?);
            }
        }
        for i in 0..self.grid.nx {
            let p = SamplePoint::new(self.grid.position(i, j), image[(j, i)]);
            if self.egp_set.evolve(self.egp_model.as_ref(), p, self.cfg.egp)? {
                self.egp_model = Some(crate::gp_exact::fit_points(
                    KernelKind::SeArd,
                    h,
                    &self.egp_set.inputs(),
                    &self.egp_set.targets(),
                )?);
            }
        }
        Ok(())
    }
}

/// Feedforward along a line as a function of the column coordinate.
fn interp(values: &[f64], fx: f64) -> f64 {
    let n = values.len();
    let f = fx.clamp(0.0, (n - 1) as f64);
    let i0 = f.floor() as usize;
    let i1 = (i0 + 1).min(n - 1);
    let t = f - i0 as f64;
    values[i0] * (1.0 - t) + values[i1] * t
}

struct Pass<'p> {
    row: usize,
    forward: bool,
    samples_per_pixel: usize,
    ff: Option<&'p [f64]>,
    /// Readout delay compensation, in samples.
    lag: usize,
}

/// Drives the ESC across one line. Returns per-pixel readouts in column
/// order, or `None` when the dip was lost.
///
/// For a ramping dip the integrator trails by the loop delay `1/K`, so the
/// feedback share of a pixel is read `lag` samples later; the feedforward
/// share has no delay.
fn run_pass<R: rand::Rng>(
    pass: Pass<'_>,
    grid: &GridSpec,
    esc_cfg: &EscConfig,
    esc: &mut EscState,
    plant: &mut PhantomPlant<'_, R>,
) -> Option<Vec<f64>> {
    let nx = grid.nx;
    let k = pass.samples_per_pixel;
    let y = pass.row as f64 * grid.pitch_y;
    if pass.ff.is_some() {
        esc.fb = 0.0;
    }
    let total = nx * k;
    let mut ff_log = Vec::with_capacity(total);
    let mut fb_log = Vec::with_capacity(total);
    for step in 0..nx {
        let i = if pass.forward { step } else { nx - 1 - step };
        for s in 0..k {
            let frac = (s as f64 + 0.5) / k as f64 - 0.5;
            let fx = if pass.forward { i as f64 + frac } else { i as f64 - frac };
            let fx = fx.clamp(0.0, (nx - 1) as f64);
            plant.move_to([fx * grid.pitch_x, y]);
            let ff = pass.ff.map_or(0.0, |v| interp(v, fx));
            let sample = esc_step(esc, esc_cfg, ff, plant);
            if !sample.locked {
                return None;
            }
            ff_log.push(ff);
            fb_log.push(sample.estimate - ff);
        }
    }
    let mut out = vec![0.0; nx];
    for step in 0..nx {
        let i = if pass.forward { step } else { nx - 1 - step };
        let mut acc = 0.0;
        for s in step * k..(step + 1) * k {
            acc += ff_log[s] + fb_log[(s + pass.lag).min(total - 1)];
        }
        out[i] = acc / k as f64;
    }
    Some(out)
}

/// Ramp-following delay of the feedback loop, `1 / (k_i a D / (2 w^2))`.
pub fn loop_delay(esc: &EscConfig, phantom: &Phantom) -> f64 {
    let curvature = phantom.dip_depth / (phantom.dip_width * phantom.dip_width);
    1.0 / (esc.k_i * 0.5 * esc.amplitude * curvature)
}

pub fn run_scan(phantom: &Phantom, cfg: &ScanConfig, seed: u64) -> Result<ScanResult> {
    Ok(run_scan_detailed(phantom, cfg, seed)?.result)
}

/// Full closed-loop scan of one polarity.
pub fn run_scan_detailed(phantom: &Phantom, cfg: &ScanConfig, seed: u64) -> Result<ScanOutcome> {
    if !(cfg.total_time.is_finite() && cfg.total_time > 0.0) {
        return Err(Error::InvalidArgument("scan time must be positive".into()));
    }
    if cfg.window_lines == 0 || !(cfg.m_fraction > 0.0 && cfg.m_fraction <= 1.0) {
        return Err(Error::InvalidArgument("window must hold at least one line and 0 < m_fraction <= 1".into()));
    }
    if cfg.first_line_slowdown < 1.0 {
        return Err(Error::InvalidArgument("first-line slowdown must be >= 1".into()));
    }
    cfg.esc.validate(phantom.dip_width)?;
    let grid = phantom.grid;
    let (nx, ny) = (grid.nx, grid.ny);
    let budget = cfg.budget_per_line(&grid);
    let half_line = cfg.line_time(&grid) / 2.0;

    let rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(cfg.seed_offset));
    let start = grid.position(0, 0);
    let mut plant = PhantomPlant::new(phantom, cfg.polarity, start, rng);
    let mut esc = EscState::new(phantom.dip_center(cfg.polarity, start));
    let mut adapter = Adapter::new(cfg, phantom, seed);

    let mut image = DMatrix::from_element(ny, nx, f64::NAN);
    let mut lock_map = DMatrix::from_element(ny, nx, false);
    let mut timing = Vec::with_capacity(ny);
    let mut lines = Vec::with_capacity(ny);
    let mut aborted = None;
    let mut feedforward: Option<LinePrediction> = None;
    let mut simulated = 0.0;
    let lag = if cfg.compensate_delay { (loop_delay(&cfg.esc, phantom) / cfg.esc.dt).round() as usize } else { 0 };

    for j in 0..ny {
        let slow = if j == 0 { cfg.first_line_slowdown } else { 1.0 };
        let samples = ((half_line * slow / nx as f64) / cfg.esc.dt).round().max(1.0) as usize;
        simulated += 2.0 * half_line * slow;

        let ff = feedforward.as_ref().map(|p| p.vb_ff.as_slice());
        let pass = Pass { row: j, forward: true, samples_per_pixel: samples, ff, lag };
        let Some(row) = run_pass(pass, &grid, &cfg.esc, &mut esc, &mut plant) else {
            aborted = Some(j);
            break;
        };
        for i in 0..nx {
            image[(j, i)] = row[i];
            lock_map[(j, i)] = true;
        }

        // the backward pass runs while the next line is being prepared
        let t0 = Instant::now();
        let adapted = adapter.after_line(&image, j);
        let compute_s = t0.elapsed().as_secs_f64();
        if compute_s > budget {
            simulated += compute_s - budget;
        }
        let (prediction, report) = match adapted {
            Ok(a) => (
                a.prediction.clone(),
                LineReport {
                    line: j,
                    compute_s,
                    budget_s: budget,
                    locked: true,
                    trace: a.trace,
                    iterations: a.iterations,
                    hyper: a.hyper,
                    model_error: None,
                    prediction: a.prediction,
                },
            ),
            Err(e) => {
                // keep scanning on the copy of this line
                let copy = LinePrediction { line: j + 1, vb_ff: row.clone(), variance: vec![0.0; nx] };
                (
                    Some(copy.clone()),
                    LineReport {
                        line: j,
                        compute_s,
                        budget_s: budget,
                        locked: true,
                        trace: Vec::new(),
                        iterations: 0,
                        hyper: None,
                        model_error: Some(e.to_string()),
                        prediction: Some(copy),
                    },
                )
            }
        };
        timing.push(compute_s);
        lines.push(report);

        let back_ff = (cfg.model != ModelKind::FeedbackOnly).then_some(row.as_slice());
        let pass = Pass { row: j, forward: false, samples_per_pixel: samples, ff: back_ff, lag };
        if run_pass(pass, &grid, &cfg.esc, &mut esc, &mut plant).is_none() {
            if j + 1 < ny {
                aborted = Some(j + 1);
            }
            break;
        }
        feedforward = prediction.filter(|p| p.line == j + 1);
    }

    Ok(ScanOutcome { result: ScanResult { image, lock_map, timing, aborted }, lines, simulated_time: simulated })
}

/// One row of the per-line timing table.
#[derive(Debug, Clone, PartialEq)]
pub struct TimingRow {
    pub line: usize,
    pub compute_s: f64,
    pub budget_s: f64,
    pub fraction: f64,
    pub locked: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BudgetReport {
    pub budget_s: f64,
    pub rows: Vec<TimingRow>,
    pub mean_compute_s: f64,
    pub max_compute_s: f64,
    pub mean_fraction: f64,
    pub max_fraction: f64,
}

pub fn compute_budget_report(result: &ScanResult, cfg: &ScanConfig, grid: &GridSpec) -> BudgetReport {
    let budget = cfg.budget_per_line(grid);
    let rows: Vec<TimingRow> = (0..grid.ny)
        .map(|line| {
            let compute_s = result.timing.get(line).copied().unwrap_or(0.0);
            TimingRow {
                line,
                compute_s,
                budget_s: budget,
                fraction: compute_s / budget,
                locked: result.lock_map.row(line).iter().all(|&l| l),
            }
        })
        .collect();
    let measured = &result.timing;
    let mean = if measured.is_empty() { 0.0 } else { measured.iter().sum::<f64>() / measured.len() as f64 };
    let max = measured.iter().copied().fold(0.0, f64::max);
    BudgetReport {
        budget_s: budget,
        rows,
        mean_compute_s: mean,
        max_compute_s: max,
        mean_fraction: mean / budget,
        max_fraction: max / budget,
    }
}
