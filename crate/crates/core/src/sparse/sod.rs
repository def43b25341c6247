//! Subset-of-data active sets: sliding window, evolving GP and k-means
//! clusters with one exact GP per cluster.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::gp_exact::{fit_points, FitState, GpPosterior};
use crate::grid::{Point, SamplePoint};
use crate::kernels::{kernel_value, HyperParams, KernelKind};

/// Evolving-GP acceptance thresholds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvolvingThresholds {
    /// Absolute prediction error, V.
    pub error: f64,
    /// Predictive variance of the latent function, V^2.
    pub variance: f64,
}

impl Default for EvolvingThresholds {
    fn default() -> Self {
        Self { error: 0.005, variance: 2.5e-5 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ActiveSetPolicy {
    SlidingWindow { capacity: usize },
    Evolving { capacity: usize, thresholds: EvolvingThresholds },
    Clustering { k: usize, capacity: usize, seed: u64 },
}

impl ActiveSetPolicy {
    pub fn capacity(&self) -> usize {
        match self {
            ActiveSetPolicy::SlidingWindow { capacity }
            | ActiveSetPolicy::Evolving { capacity, .. }
            | ActiveSetPolicy::Clustering { capacity, .. } => *capacity,
        }
    }
}

/// Ordered, bounded subset of the data, oldest first.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ActiveSet {
    pub capacity: usize,
    pub points: Vec<SamplePoint>,
}

impl ActiveSet {
    pub fn new(capacity: usize) -> Self {
        Self { capacity, points: Vec::with_capacity(capacity) }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn inputs(&self) -> Vec<Point> {
        self.points.iter().map(|p| p.input).collect()
    }

    pub fn targets(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.target).collect()
    }

    /// Appends `p`, dropping the oldest point when full.
    pub fn slide(&mut self, p: SamplePoint) {
        if self.capacity == 0 {
            return;
        }
        if self.points.len() == self.capacity {
            self.points.remove(0);
        }
        self.points.push(p);
    }

    /// Keeps `p` only if the current model predicts it badly or is unsure
    /// about it. Returns whether the point was accepted.
    pub fn evolve(&mut self, model: Option<&FitState>, p: SamplePoint, thr: EvolvingThresholds) -> Result<bool> {
        let accept = match model {
            None => true,
            Some(m) if m.is_empty() => true,
            Some(m) => {
                let (mean, var) = m.predict_marginals(&[p.input])?;
                (mean[0] - p.target).abs() > thr.error || var[0] > thr.variance
            }
        };
        if accept {
            self.slide(p);
        }
        Ok(accept)
    }
}

pub fn update_sliding(set: &ActiveSet, p: SamplePoint) -> ActiveSet {
    let mut s = set.clone();
    s.slide(p);
    s
}

pub fn update_evolving(
    set: &ActiveSet,
    model: Option<&FitState>,
    p: SamplePoint,
    thr: EvolvingThresholds,
) -> Result<(ActiveSet, bool)> {
    let mut s = set.clone();
    let accepted = s.evolve(model, p, thr)?;
    Ok((s, accepted))
}

#[derive(Debug, Clone)]
pub struct Clustering {
    pub centroids: Vec<Point>,
    pub assignments: Vec<usize>,
    pub iterations: usize,
}

impl Clustering {
    /// Index of the centroid most similar to `p` under the kernel.
    pub fn route(&self, kind: KernelKind, h: &HyperParams, p: Point) -> usize {
        nearest(kind, h, &self.centroids, p).0
    }

    /// Sum over points of the kernel similarity to their own centroid.
    pub fn quality(&self, kind: KernelKind, h: &HyperParams, inputs: &[Point]) -> f64 {
        inputs.iter().zip(&self.assignments).map(|(p, &a)| kernel_value(kind, h, *p, self.centroids[a])).sum()
    }
}

fn nearest(kind: KernelKind, h: &HyperParams, centroids: &[Point], p: Point) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (c, q) in centroids.iter().enumerate() {
        let s = kernel_value(kind, h, p, *q);
        if s > best.1 {
            best = (c, s);
        }
    }
    best
}

pub const KMEANS_MAX_ITERS: usize = 100;

/// Lloyd iterations with kernel similarity for assignment and the arithmetic
/// mean as centroid. Seeding picks a random first centre and then the least
/// similar point each time; empty clusters are re-seeded the same way.
pub fn cluster_kmeans(inputs: &[Point], k: usize, kind: KernelKind, h: &HyperParams, seed: u64) -> Result<Clustering> {
    if k == 0 {
        return Err(Error::InvalidArgument("k-means needs k >= 1".into()));
    }
    if inputs.len() < k {
        return Err(Error::InvalidArgument(format!("{} points cannot form {k} clusters", inputs.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = vec![inputs[rng.random_range(0..inputs.len())]];
    while centroids.len() < k {
        centroids.push(least_similar(kind, h, inputs, &centroids));
    }
    let mut assignments = vec![usize::MAX; inputs.len()];
    let mut iterations = 0;
    while iterations < KMEANS_MAX_ITERS {
        iterations += 1;
        let mut changed = false;
        for (a, p) in assignments.iter_mut().zip(inputs) {
            let c = nearest(kind, h, &centroids, *p).0;
            if *a != c {
                *a = c;
                changed = true;
            }
        }
        let mut sums = vec![[0.0, 0.0]; k];
        let mut counts = vec![0usize; k];
        for (a, p) in assignments.iter().zip(inputs) {
            sums[*a][0] += p[0];
            sums[*a][1] += p[1];
            counts[*a] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = [sums[c][0] / counts[c] as f64, sums[c][1] / counts[c] as f64];
            }
        }
        if let Some(empty) = (0..k).find(|&c| counts[c] == 0) {
            let others: Vec<Point> = (0..k).filter(|&c| c != empty).map(|c| centroids[c]).collect();
            centroids[empty] = least_similar(kind, h, inputs, &others);
            continue;
        }
        if !changed {
            break;
        }
    }
    Ok(Clustering { centroids, assignments, iterations })
}

fn least_similar(kind: KernelKind, h: &HyperParams, inputs: &[Point], centroids: &[Point]) -> Point {
    let mut best = (inputs[0], f64::INFINITY);
    for p in inputs {
        let s = nearest(kind, h, centroids, *p).1;
        if s < best.1 {
            best = (*p, s);
        }
    }
    best.0
}

/// Fitted subset-of-data predictor.
#[derive(Debug, Clone)]
pub enum SodModel {
    Single(FitState),
    Clustered { clustering: Clustering, models: Vec<FitState> },
}

impl SodModel {
    pub fn predict(&self, test: &[Point]) -> Result<GpPosterior> {
        match self {
            SodModel::Single(m) => m.predict(test),
            SodModel::Clustered { clustering, models } => {
                let h = models[0].hyper();
                let kind = models[0].kind();
                let n = test.len();
                let routes: Vec<usize> = test.iter().map(|p| clustering.route(kind, h, *p)).collect();
                let mut mean = DVector::zeros(n);
                let mut cov = DMatrix::zeros(n, n);
                for (c, model) in models.iter().enumerate() {
                    let idx: Vec<usize> = (0..n).filter(|&t| routes[t] == c).collect();
                    if idx.is_empty() {
                        continue;
                    }
                    let pts: Vec<Point> = idx.iter().map(|&t| test[t]).collect();
                    let post = model.predict(&pts)?;
                    for (a, &ta) in idx.iter().enumerate() {
                        mean[ta] = post.mean[a];
                        for (b, &tb) in idx.iter().enumerate() {
                            cov[(ta, tb)] = post.cov[(a, b)];
                        }
                    }
                }
                Ok(GpPosterior { mean, cov })
            }
        }
    }

    pub fn predict_mean(&self, test: &[Point]) -> Result<DVector<f64>> {
        match self {
            SodModel::Single(m) => m.predict_mean(test),
            _ => Ok(self.predict(test)?.mean),
        }
    }
}

/// Streams `data` through `policy` in order, fits the resulting active set(s)
/// and predicts at `test`.
pub fn build_sod(
    policy: &ActiveSetPolicy,
    data: &[SamplePoint],
    kind: KernelKind,
    h: &HyperParams,
) -> Result<SodModel> {
    match policy {
        ActiveSetPolicy::SlidingWindow { capacity } => {
            let mut set = ActiveSet::new(*capacity);
            for p in data {
                set.slide(*p);
            }
            Ok(SodModel::Single(fit_points(kind, h, &set.inputs(), &set.targets())?))
        }
        ActiveSetPolicy::Evolving { capacity, thresholds } => {
            let mut set = ActiveSet::new(*capacity);
            let mut model: Option<FitState> = None;
            for p in data {
                if set.evolve(model.as_ref(), *p, *thresholds)? {
                    model = Some(fit_points(kind, h, &set.inputs(), &set.targets())?);
                }
            }
            match model {
                Some(m) => Ok(SodModel::Single(m)),
                None => Ok(SodModel::Single(fit_points(kind, h, &[], &[])?)),
            }
        }
        ActiveSetPolicy::Clustering { k, capacity, seed } => {
            let inputs: Vec<Point> = data.iter().map(|p| p.input).collect();
            let clustering = cluster_kmeans(&inputs, *k, kind, h, *seed)?;
            let mut sets = vec![ActiveSet::new(*capacity); *k];
            for (p, &a) in data.iter().zip(&clustering.assignments) {
                sets[a].slide(*p);
            }
            let models =
                sets.iter().map(|s| fit_points(kind, h, &s.inputs(), &s.targets())).collect::<Result<Vec<_>>>()?;
            Ok(SodModel::Clustered { clustering, models })
        }
    }
}

pub fn predict_sod(
    policy: &ActiveSetPolicy,
    data: &[SamplePoint],
    test: &[Point],
    kind: KernelKind,
    h: &HyperParams,
) -> Result<GpPosterior> {
    build_sod(policy, data, kind, h)?.predict(test)
}
