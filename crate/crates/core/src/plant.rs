//! Simulated microscope: ground-truth dip maps, the frequency-shift spectrum
//! and an extremum-seeking controller that tracks the dip minimum.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::grid::{GridSpec, Point, Polarity};
use crate::matrix_io;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhantomKind {
    R1Like,
    R2Like,
}

impl PhantomKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            PhantomKind::R1Like => "r1",
            PhantomKind::R2Like => "r2",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "r1" | "r1-like" | "r1like" => Some(PhantomKind::R1Like),
            "r2" | "r2-like" | "r2like" => Some(PhantomKind::R2Like),
            _ => None,
        }
    }

    pub fn default_grid(&self) -> GridSpec {
        match self {
            PhantomKind::R1Like => GridSpec::unchecked(63, 63, 0.1, 0.1),
            PhantomKind::R2Like => GridSpec::unchecked(200, 200, 0.1, 0.1),
        }
    }
}

/// Generator settings. Radii are in pixels, voltages in volts.
#[derive(Debug, Clone, PartialEq)]
pub struct PhantomParams {
    pub bumps_min: usize,
    pub bumps_max: usize,
    pub radius_px: (f64, f64),
    pub amplitude: (f64, f64),
    pub offset_minus: f64,
    pub offset_plus: f64,
    /// Largest first difference between neighbouring pixels after scaling,
    /// as a fraction of the dip width.
    pub max_step_fraction: f64,
    pub dip_depth: f64,
    pub dip_width: f64,
    pub background_slope: f64,
    pub noise_std: f64,
}

impl PhantomParams {
    pub fn for_kind(kind: PhantomKind) -> Self {
        let (bumps_min, bumps_max) = match kind {
            PhantomKind::R1Like => (3, 8),
            PhantomKind::R2Like => (30, 60),
        };
        Self {
            bumps_min,
            bumps_max,
            radius_px: (4.0, 10.0),
            amplitude: (0.1, 0.3),
            offset_minus: -1.1,
            offset_plus: 0.9,
            max_step_fraction: 0.225,
            dip_depth: 2.0,
            dip_width: 0.1,
            background_slope: 5e-4,
            noise_std: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub grid: GridSpec,
    pub v_minus: DMatrix<f64>,
    pub v_plus: DMatrix<f64>,
    /// Hz.
    pub dip_depth: f64,
    /// V.
    pub dip_width: f64,
    /// Hz/V^2.
    pub background_slope: f64,
    /// Hz.
    pub noise_std: f64,
}

struct Bump {
    cx: f64,
    cy: f64,
    radius: f64,
    amp_minus: f64,
    amp_plus: f64,
}

fn bump_field(grid: &GridSpec, bumps: &[Bump], pick: impl Fn(&Bump) -> (f64, f64)) -> DMatrix<f64> {
    DMatrix::from_fn(grid.ny, grid.nx, |j, i| {
        bumps
            .iter()
            .map(|b| {
                let (amp, scale) = pick(b);
                let r = b.radius * scale;
                let d2 = (i as f64 - b.cx).powi(2) + (j as f64 - b.cy).powi(2);
                amp * (-0.5 * d2 / (r * r)).exp()
            })
            .sum()
    })
}

/// Largest absolute difference between horizontally or vertically adjacent
/// pixels.
pub fn max_step(m: &DMatrix<f64>) -> f64 {
    let mut s: f64 = 0.0;
    for j in 0..m.nrows() {
        for i in 0..m.ncols() {
            if i + 1 < m.ncols() {
                s = s.max((m[(j, i + 1)] - m[(j, i)]).abs());
            }
            if j + 1 < m.nrows() {
                s = s.max((m[(j + 1, i)] - m[(j, i)]).abs());
            }
        }
    }
    s
}

/// Scales the relief so its steepest pixel step equals `target`.
fn normalize_steps(mut relief: DMatrix<f64>, target: f64) -> DMatrix<f64> {
    let s = max_step(&relief);
    if s > 0.0 {
        relief *= target / s;
    }
    relief
}

pub fn make_phantom(kind: PhantomKind, grid: Option<GridSpec>, seed: u64) -> Phantom {
    make_phantom_with(grid.unwrap_or_else(|| kind.default_grid()), &PhantomParams::for_kind(kind), seed)
}

/// Sum of seeded Gaussian bumps on flat offsets. Each molecule-like bump
/// shifts both dips; the negative map also gets a narrower satellite per bump,
/// making it the more structured of the two.
pub fn make_phantom_with(grid: GridSpec, p: &PhantomParams, seed: u64) -> Phantom {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = if p.bumps_max > p.bumps_min { rng.random_range(p.bumps_min..=p.bumps_max) } else { p.bumps_min };
    let bumps: Vec<Bump> = (0..count)
        .map(|_| {
            let amp = rng.random_range(p.amplitude.0..=p.amplitude.1) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            Bump {
                cx: rng.random_range(0.0..grid.nx as f64),
                cy: rng.random_range(0.0..grid.ny as f64),
                radius: rng.random_range(p.radius_px.0..=p.radius_px.1),
                amp_minus: amp,
                amp_plus: -amp * rng.random_range(0.5..=1.0),
            }
        })
        .collect();
    let target = p.max_step_fraction * p.dip_width;
    let minus =
        bump_field(&grid, &bumps, |b| (b.amp_minus, 1.0)) + bump_field(&grid, &bumps, |b| (0.4 * b.amp_minus, 0.5));
    let plus = bump_field(&grid, &bumps, |b| (b.amp_plus, 1.0));
    Phantom {
        grid,
        v_minus: normalize_steps(minus, target).add_scalar(p.offset_minus),
        v_plus: normalize_steps(plus, target).add_scalar(p.offset_plus),
        dip_depth: p.dip_depth,
        dip_width: p.dip_width,
        background_slope: p.background_slope,
        noise_std: p.noise_std,
    }
}

impl Phantom {
    pub fn map(&self, polarity: Polarity) -> &DMatrix<f64> {
        match polarity {
            Polarity::Negative => &self.v_minus,
            Polarity::Positive => &self.v_plus,
        }
    }

    /// Dip position at a continuous tip position, bilinear between pixels
    /// and clamped to the grid.
    pub fn dip_center(&self, polarity: Polarity, r: Point) -> f64 {
        let m = self.map(polarity);
        let g = &self.grid;
        let fx = (r[0] / g.pitch_x).clamp(0.0, (g.nx - 1) as f64);
        let fy = (r[1] / g.pitch_y).clamp(0.0, (g.ny - 1) as f64);
        let (i0, j0) = (fx.floor() as usize, fy.floor() as usize);
        let (i1, j1) = ((i0 + 1).min(g.nx - 1), (j0 + 1).min(g.ny - 1));
        let (tx, ty) = (fx - i0 as f64, fy - j0 as f64);
        let top = m[(j0, i0)] * (1.0 - tx) + m[(j0, i1)] * tx;
        let bottom = m[(j1, i0)] * (1.0 - tx) + m[(j1, i1)] * tx;
        top * (1.0 - ty) + bottom * ty
    }

    /// Noise-free spectrum for a known dip position.
    pub fn spectrum_at(&self, vb: f64, vd: f64) -> f64 {
        let d = vb - vd;
        self.background_slope * vb * vb - self.dip_depth * (-0.5 * d * d / (self.dip_width * self.dip_width)).exp()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let header = self.header();
        matrix_io::save(&dir.join("v_minus.txt"), &self.v_minus, &header)?;
        matrix_io::save(&dir.join("v_plus.txt"), &self.v_plus, &header)?;
        Ok(())
    }

    fn header(&self) -> Vec<(String, String)> {
        [
            ("pitch_x", self.grid.pitch_x),
            ("pitch_y", self.grid.pitch_y),
            ("dip_depth", self.dip_depth),
            ("dip_width", self.dip_width),
            ("background_slope", self.background_slope),
            ("noise_std", self.noise_std),
        ]
        .iter()
        .map(|(k, v)| (k.to_string(), format!("{v:?}")))
        .collect()
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let (v_minus, header) = matrix_io::load(&dir.join("v_minus.txt"))?;
        let (v_plus, _) = matrix_io::load(&dir.join("v_plus.txt"))?;
        if v_minus.shape() != v_plus.shape() {
            return Err(Error::Dimension("phantom maps differ in shape".into()));
        }
        let get = |key: &str| -> Result<f64> {
            header
                .iter()
                .find(|(k, _)| k == key)
                .ok_or_else(|| Error::InvalidArgument(format!("phantom header lacks `{key}`")))?
                .1
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("phantom header `{key}` is not a number")))
        };
        let grid = GridSpec::new(v_minus.ncols(), v_minus.nrows(), get("pitch_x")?, get("pitch_y")?)?;
        Ok(Self {
            grid,
            v_minus,
            v_plus,
            dip_depth: get("dip_depth")?,
            dip_width: get("dip_width")?,
            background_slope: get("background_slope")?,
            noise_std: get("noise_std")?,
        })
    }
}

/// `background_slope Vb^2 - dip_depth exp(-(Vb - V^d(r))^2 / 2w^2) + noise`.
pub fn spectrum_eval(phantom: &Phantom, polarity: Polarity, vb: f64, r: Point, rng: &mut impl Rng) -> f64 {
    let clean = phantom.spectrum_at(vb, phantom.dip_center(polarity, r));
    if phantom.noise_std > 0.0 {
        let z: f64 = StandardNormal.sample(rng);
        clean + phantom.noise_std * z
    } else {
        clean
    }
}

/// Anything that returns a frequency shift for an applied bias and knows
/// where its dip currently is.
pub trait DipPlant {
    fn delta_f(&mut self, vb: f64) -> f64;
    fn dip_center(&self) -> f64;
    fn dip_width(&self) -> f64;
}

/// Phantom spectrum at a movable tip position.
pub struct PhantomPlant<'a, R: Rng> {
    pub phantom: &'a Phantom,
    pub polarity: Polarity,
    pub position: Point,
    pub rng: R,
    vd: f64,
}

impl<'a, R: Rng> PhantomPlant<'a, R> {
    pub fn new(phantom: &'a Phantom, polarity: Polarity, position: Point, rng: R) -> Self {
        let vd = phantom.dip_center(polarity, position);
        Self { phantom, polarity, position, rng, vd }
    }

    pub fn move_to(&mut self, r: Point) {
        self.position = r;
        self.vd = self.phantom.dip_center(self.polarity, r);
    }
}

impl<R: Rng> DipPlant for PhantomPlant<'_, R> {
    fn delta_f(&mut self, vb: f64) -> f64 {
        let clean = self.phantom.spectrum_at(vb, self.vd);
        if self.phantom.noise_std > 0.0 {
            let z: f64 = StandardNormal.sample(&mut self.rng);
            clean + self.phantom.noise_std * z
        } else {
            clean
        }
    }

    fn dip_center(&self) -> f64 {
        self.vd
    }

    fn dip_width(&self) -> f64 {
        self.phantom.dip_width
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EscConfig {
    /// Dither amplitude, V.
    pub amplitude: f64,
    /// Dither frequency, rad/s.
    pub omega: f64,
    /// Integrator gain, 1/(Hz s).
    pub k_i: f64,
    /// Demodulation low-pass time constant, s.
    pub lpf_tau: f64,
    /// High-pass time constant removing the spectrum's DC level, s.
    pub hpf_tau: f64,
    /// Sample step, s.
    pub dt: f64,
}

impl Default for EscConfig {
    fn default() -> Self {
        Self { amplitude: 0.02, omega: 2.0 * PI * 200.0, k_i: 8.0, lpf_tau: 0.02, hpf_tau: 0.01, dt: 5e-5 }
    }
}

impl EscConfig {
    pub fn validate(&self, dip_width: f64) -> Result<()> {
        let positive = [self.amplitude, self.omega, self.k_i, self.lpf_tau, self.hpf_tau, self.dt];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidArgument("ESC parameters must be positive and finite".into()));
        }
        if self.amplitude >= dip_width / 2.0 {
            return Err(Error::InvalidArgument(format!(
                "dither amplitude {} must be below half the dip width {}",
                self.amplitude, dip_width
            )));
        }
        if self.dt * 20.0 > 2.0 * PI / self.omega {
            return Err(Error::InvalidArgument("need at least 20 samples per dither period".into()));
        }
        Ok(())
    }
}

/// Controller state. The integrator `fb` is the feedback share of the dip
/// estimate; the dither rides on top of it.
#[derive(Debug, Clone, PartialEq)]
pub struct EscState {
    pub step: u64,
    pub fb: f64,
    pub locked: bool,
    hp: f64,
    prev_df: Option<f64>,
    lp: f64,
}

/// One logged sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EscSample {
    pub vb_ff: f64,
    /// Integrator plus dither.
    pub vb_fb: f64,
    /// Bias handed to the plant, `vb_ff + vb_fb`.
    pub vb: f64,
    /// Dip estimate `vb_ff + fb`, without dither.
    pub estimate: f64,
    pub delta_f: f64,
    pub locked: bool,
}

impl EscState {
    pub fn new(fb: f64) -> Self {
        Self { step: 0, fb, locked: true, hp: 0.0, prev_df: None, lp: 0.0 }
    }

    pub fn time(&self, cfg: &EscConfig) -> f64 {
        self.step as f64 * cfg.dt
    }
}

/// Dither, measure, high-pass, demodulate, low-pass, integrate.
pub fn esc_step(state: &mut EscState, cfg: &EscConfig, vb_ff: f64, plant: &mut impl DipPlant) -> EscSample {
    let s = (cfg.omega * state.step as f64 * cfg.dt).sin();
    let vb_fb = state.fb + cfg.amplitude * s;
    let vb = vb_ff + vb_fb;
    let df = plant.delta_f(vb);

    let alpha = cfg.hpf_tau / (cfg.hpf_tau + cfg.dt);
    let prev = state.prev_df.unwrap_or(df);
    state.hp = alpha * (state.hp + df - prev);
    state.prev_df = Some(df);
    state.lp += cfg.dt / cfg.lpf_tau * (state.hp * s - state.lp);
    state.fb -= cfg.k_i * state.lp * cfg.dt;
    state.step += 1;

    let estimate = vb_ff + state.fb;
    if (estimate - plant.dip_center()).abs() > plant.dip_width() {
        state.locked = false;
    }
    EscSample { vb_ff, vb_fb, vb, estimate, delta_f: df, locked: state.locked }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dip_bottom_and_far_field() {
        let mut ph = make_phantom(PhantomKind::R1Like, None, 1);
        ph.noise_std = 0.0;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = [0.7, 1.3];
        let vd = ph.dip_center(Polarity::Negative, r);
        let bottom = spectrum_eval(&ph, Polarity::Negative, vd, r, &mut rng);
        assert!((bottom - (ph.background_slope * vd * vd - ph.dip_depth)).abs() < 1e-15);
        let vb = vd + 3.0;
        let far = spectrum_eval(&ph, Polarity::Negative, vb, r, &mut rng);
        let bg = ph.background_slope * vb * vb;
        assert!((far - bg).abs() <= 1e-12 * bg.abs());
    }

    #[test]
    fn default_grids() {
        let r1 = make_phantom(PhantomKind::R1Like, None, 3);
        assert_eq!(r1.v_minus.shape(), (63, 63));
        let r2 = make_phantom(PhantomKind::R2Like, None, 3);
        assert_eq!(r2.v_plus.shape(), (200, 200));
    }

    #[test]
    fn zero_bumps_give_constant_maps() {
        let mut p = PhantomParams::for_kind(PhantomKind::R1Like);
        p.bumps_min = 0;
        p.bumps_max = 0;
        let ph = make_phantom_with(GridSpec::new(10, 8, 0.1, 0.1).unwrap(), &p, 5);
        assert!(ph.v_minus.iter().all(|v| *v == p.offset_minus));
        assert!(ph.v_plus.iter().all(|v| *v == p.offset_plus));
    }

    #[test]
    fn bilinear_hits_pixels() {
        let ph = make_phantom(PhantomKind::R1Like, None, 2);
        let g = ph.grid;
        for (i, j) in [(0, 0), (5, 7), (62, 62), (30, 1)] {
            let r = g.position(i, j);
            assert!((ph.dip_center(Polarity::Positive, r) - ph.v_plus[(j, i)]).abs() < 1e-12);
        }
    }

    #[test]
    fn config_validation() {
        let c = EscConfig::default();
        assert!(c.validate(0.1).is_ok());
        assert!(EscConfig { amplitude: 0.06, ..c.clone() }.validate(0.1).is_err());
        assert!(EscConfig { dt: 1e-3, ..c }.validate(0.1).is_err());
    }
}
