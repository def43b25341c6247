//! Scan geometry, sample records and scan results.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// A position on the sample surface, `(x, y)` in nanometers.
pub type Point = [f64; 2];

/// Rectangular raster: `nx` pixels per line, `ny` lines.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    pub pitch_x: f64,
    pub pitch_y: f64,
}

impl GridSpec {
    pub fn new(nx: usize, ny: usize, pitch_x: f64, pitch_y: f64) -> Result<Self> {
        if nx < 2 || ny < 2 {
            return Err(Error::InvalidArgument(format!("grid needs at least 2x2 pixels, got {nx}x{ny}")));
        }
        if !(pitch_x > 0.0 && pitch_y > 0.0) || !pitch_x.is_finite() || !pitch_y.is_finite() {
            return Err(Error::InvalidArgument(format!("pitches must be positive, got ({pitch_x}, {pitch_y})")));
        }
        Ok(Self { nx, ny, pitch_x, pitch_y })
    }

    /// Single-line or single-column grids used by tests and the plant.
    /// Skips the `nx, ny >= 2` check.
    pub(crate) fn unchecked(nx: usize, ny: usize, pitch_x: f64, pitch_y: f64) -> Self {
        Self { nx, ny, pitch_x, pitch_y }
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn position(&self, i: usize, j: usize) -> Point {
        [i as f64 * self.pitch_x, j as f64 * self.pitch_y]
    }

    /// Positions of line `j`, ascending x.
    pub fn line_positions(&self, j: usize) -> Vec<Point> {
        (0..self.nx).map(|i| self.position(i, j)).collect()
    }

    /// Inverse of [`GridSpec::position`] within `1e-9` nm.
    pub fn index_of(&self, p: Point) -> Option<(usize, usize)> {
        let fi = p[0] / self.pitch_x;
        let fj = p[1] / self.pitch_y;
        let i = fi.round();
        let j = fj.round();
        if i < 0.0 || j < 0.0 {
            return None;
        }
        let (i, j) = (i as usize, j as usize);
        if i >= self.nx || j >= self.ny {
            return None;
        }
        let q = self.position(i, j);
        if (q[0] - p[0]).abs() <= 1e-9 && (q[1] - p[1]).abs() <= 1e-9 {
            Some((i, j))
        } else {
            None
        }
    }
}

/// Forward-pass raster order: line-major, ascending x within a line.
pub fn raster_positions(grid: &GridSpec) -> Vec<Point> {
    (0..grid.ny).flat_map(|j| grid.line_positions(j)).collect()
}

/// Which dip the targets belong to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Polarity {
    Negative,
    Positive,
}

impl Polarity {
    pub fn as_str(&self) -> &'static str {
        match self {
            Polarity::Negative => "minus",
            Polarity::Positive => "plus",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "minus" | "negative" | "v-" | "-" => Some(Polarity::Negative),
            "plus" | "positive" | "v+" | "+" => Some(Polarity::Positive),
            _ => None,
        }
    }
}

/// A training pair: tip position and tracked dip voltage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplePoint {
    pub input: Point,
    pub target: f64,
}

impl SamplePoint {
    pub fn new(input: Point, target: f64) -> Self {
        Self { input, target }
    }
}

/// Training pairs in acquisition order, all of one polarity.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub points: Vec<SamplePoint>,
    pub polarity: Polarity,
}

impl Dataset {
    pub fn new(polarity: Polarity) -> Self {
        Self { points: Vec::new(), polarity }
    }

    pub fn from_points(points: Vec<SamplePoint>, polarity: Polarity) -> Self {
        Self { points, polarity }
    }

    pub fn from_pairs(inputs: &[Point], targets: &[f64], polarity: Polarity) -> Result<Self> {
        if inputs.len() != targets.len() {
            return Err(Error::Dimension(format!("{} inputs vs {} targets", inputs.len(), targets.len())));
        }
        let points = inputs.iter().zip(targets).map(|(&x, &y)| SamplePoint::new(x, y)).collect();
        Ok(Self { points, polarity })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn push(&mut self, p: SamplePoint) {
        self.points.push(p);
    }

    pub fn inputs(&self) -> Vec<Point> {
        self.points.iter().map(|p| p.input).collect()
    }

    pub fn targets(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.target).collect()
    }

    /// The trailing `count` points, still in acquisition order.
    pub fn tail(&self, count: usize) -> Dataset {
        let start = self.points.len().saturating_sub(count);
        Dataset::from_points(self.points[start..].to_vec(), self.polarity)
    }

    /// True when the acquisition order is line-major with ascending x.
    pub fn is_raster_ordered(&self) -> bool {
        self.points.windows(2).all(|w| {
            let (a, b) = (w[0].input, w[1].input);
            b[1] > a[1] || (b[1] == a[1] && b[0] > a[0])
        })
    }
}

/// Outcome of one simulated scan.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanResult {
    /// `ny x nx` tracked voltages; NaN on lines never scanned.
    pub image: DMatrix<f64>,
    /// `ny x nx`; true where the dip lock held.
    pub lock_map: DMatrix<bool>,
    /// Measured compute time per line, seconds.
    pub timing: Vec<f64>,
    /// Line index at which the scan was aborted.
    pub aborted: Option<usize>,
}

impl ScanResult {
    pub fn is_aborted(&self) -> bool {
        self.aborted.is_some()
    }

    /// Number of lines fully scanned.
    pub fn completed_lines(&self) -> usize {
        match self.aborted {
            Some(j) => j,
            None => self.image.nrows(),
        }
    }
}

/// Mean of squared elementwise differences.
pub fn mse(image: &DMatrix<f64>, reference: &DMatrix<f64>) -> Result<f64> {
    if image.shape() != reference.shape() {
        return Err(Error::Dimension(format!("image {:?} vs reference {:?}", image.shape(), reference.shape())));
    }
    if image.is_empty() {
        return Err(Error::Dimension("empty matrices".into()));
    }
    let sum: f64 = image.iter().zip(reference.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(sum / image.len() as f64)
}

/// MSE restricted to the first `rows` rows.
pub fn mse_rows(image: &DMatrix<f64>, reference: &DMatrix<f64>, rows: usize) -> Result<f64> {
    if image.shape() != reference.shape() {
        return Err(Error::Dimension(format!("image {:?} vs reference {:?}", image.shape(), reference.shape())));
    }
    let rows = rows.min(image.nrows());
    if rows == 0 {
        return Err(Error::Dimension("no rows to compare".into()));
    }
    let a = image.rows(0, rows).into_owned();
    let b = reference.rows(0, rows).into_owned();
    mse(&a, &b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn raster_smallest_grid() {
        let g = GridSpec::new(2, 2, 1.0, 1.0).unwrap();
        assert_eq!(raster_positions(&g), vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]);
    }

    #[test]
    fn raster_single_line_pitch() {
        let g = GridSpec::unchecked(3, 1, 0.5, 1.0);
        assert_eq!(raster_positions(&g), vec![[0.0, 0.0], [0.5, 0.0], [1.0, 0.0]]);
    }

    #[test]
    fn raster_r1_size() {
        let g = GridSpec::new(63, 63, 1.0, 1.0).unwrap();
        assert_eq!(raster_positions(&g).len(), 3969);
    }

    #[test]
    fn grid_rejects_degenerate() {
        assert!(GridSpec::new(1, 5, 1.0, 1.0).is_err());
        assert!(GridSpec::new(5, 5, 0.0, 1.0).is_err());
        assert!(GridSpec::new(5, 5, 1.0, -2.0).is_err());
    }

    #[test]
    fn index_roundtrip() {
        let g = GridSpec::new(7, 4, 0.3, 0.7).unwrap();
        for (k, p) in raster_positions(&g).into_iter().enumerate() {
            assert_eq!(g.index_of(p), Some((k % 7, k / 7)));
        }
        assert_eq!(g.index_of([0.15, 0.0]), None);
    }

    #[test]
    fn mse_examples() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 2.0, 3.0]);
        let b = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 2.0, 5.0]);
        assert_eq!(mse(&a, &b).unwrap(), 1.25);
        assert_eq!(mse(&a, &a).unwrap(), 0.0);
        let shifted = a.map(|v| v + 0.25);
        assert!((mse(&shifted, &a).unwrap() - 0.0625).abs() < 1e-15);
    }

    #[test]
    fn mse_dimension_mismatch() {
        let a = DMatrix::<f64>::zeros(2, 3);
        let b = DMatrix::<f64>::zeros(3, 2);
        assert!(matches!(mse(&a, &b), Err(Error::Dimension(_))));
    }

    #[test]
    fn raster_order_detection() {
        let g = GridSpec::new(3, 3, 1.0, 1.0).unwrap();
        let pts = raster_positions(&g);
        let d = Dataset::from_pairs(&pts, &[0.0; 9], Polarity::Negative).unwrap();
        assert!(d.is_raster_ordered());
        let mut rev = pts.clone();
        rev.swap(0, 1);
        let d = Dataset::from_pairs(&rev, &[0.0; 9], Polarity::Negative).unwrap();
        assert!(!d.is_raster_ordered());
    }
}
