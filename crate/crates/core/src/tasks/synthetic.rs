//! Synthetic few-shot task distributions.
//!
//! Classes live in a low-dimensional latent space and are pushed into feature
//! space through a fixed random `affine -> tanh -> affine` map, so the
//! embedding network has a nonlinearity to undo.

use std::f64::consts::TAU;

use crate::error::{Error, Result};
use crate::rng::Rng;

use super::dataset::{ClassData, Dataset};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeneratorKind {
    /// Gaussian blobs around well-separated centers.
    GaussianClusters,
    /// Arcs of distinct radius and phase in a 2D latent plane.
    RotatedRings,
}

impl GeneratorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            GeneratorKind::GaussianClusters => "gaussian_clusters",
            GeneratorKind::RotatedRings => "rotated_rings",
        }
    }
}

impl std::str::FromStr for GeneratorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian_clusters" => Ok(Self::GaussianClusters),
            "rotated_rings" => Ok(Self::RotatedRings),
            other => Err(Error::Config(format!(
                "unknown generator {other:?} (expected gaussian_clusters or rotated_rings)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub kind: GeneratorKind,
    pub num_classes: usize,
    pub instances_per_class: usize,
    pub latent_dim: usize,
    pub feature_dim: usize,
    /// Minimum distance between class centers (gaussian) or ring radius step (rings).
    pub class_separation: f64,
    pub noise_std: f64,
    /// Seeds the latent-to-feature map independently of the sampling rng.
    pub mixing_seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            kind: GeneratorKind::GaussianClusters,
            num_classes: 60,
            instances_per_class: 40,
            latent_dim: 8,
            feature_dim: 16,
            class_separation: 6.0,
            noise_std: 1.0,
            mixing_seed: 7,
        }
    }
}

/// Two classes per episode, and room for a disjoint pair.
pub const MIN_SYNTHETIC_CLASSES: usize = 4;

const MAX_CENTER_TRIES: usize = 10_000;

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < MIN_SYNTHETIC_CLASSES {
            return Err(Error::Config(format!(
                "synthetic.num_classes = {} is below the minimum of {MIN_SYNTHETIC_CLASSES}",
                self.num_classes
            )));
        }
        if self.instances_per_class == 0 || self.latent_dim == 0 || self.feature_dim == 0 {
            return Err(Error::Config("synthetic sizes must be positive".into()));
        }
        if !(self.noise_std > 0.0) || !self.noise_std.is_finite() {
            return Err(Error::Config(format!("synthetic.noise_std must be > 0, got {}", self.noise_std)));
        }
        if !(self.class_separation > 0.0) || !self.class_separation.is_finite() {
            return Err(Error::Config(format!(
                "synthetic.class_separation must be > 0, got {}",
                self.class_separation
            )));
        }
        if self.kind == GeneratorKind::RotatedRings && self.latent_dim != 2 {
            return Err(Error::Config("rotated_rings needs synthetic.latent_dim = 2".into()));
        }
        Ok(())
    }
}

/// Generated dataset plus the latent quantities behind it.
#[derive(Debug, Clone)]
pub struct Synthetic {
    pub dataset: Dataset,
    /// Per class: the latent center (gaussian) or the arc midpoint (rings).
    pub centers: Vec<Vec<f64>>,
    /// Per class, per instance latent point before mixing.
    pub latent: Vec<Vec<Vec<f64>>>,
}

/// Fixed random map `latent -> tanh(A z + a) -> B h + b` into feature space.
struct Mixing {
    latent_dim: usize,
    hidden: usize,
    feature_dim: usize,
    a: Vec<f64>,
    a_bias: Vec<f64>,
    b: Vec<f64>,
    b_bias: Vec<f64>,
}

impl Mixing {
    fn new(latent_dim: usize, feature_dim: usize, input_scale: f64, seed: u64) -> Self {
        let mut rng = Rng::new(seed);
        let hidden = latent_dim.max(feature_dim);
        // Pre-activations stay O(1) for latent points of magnitude ~input_scale.
        let a_std = 1.0 / (input_scale * (latent_dim as f64).sqrt());
        let b_std = 1.0 / (hidden as f64).sqrt();
        let a = (0..hidden * latent_dim).map(|_| a_std * rng.normal()).collect();
        let a_bias = (0..hidden).map(|_| 0.1 * rng.normal()).collect();
        let b = (0..feature_dim * hidden).map(|_| b_std * rng.normal()).collect();
        let b_bias = (0..feature_dim).map(|_| 0.1 * rng.normal()).collect();
        Self { latent_dim, hidden, feature_dim, a, a_bias, b, b_bias }
    }

    fn apply(&self, z: &[f64]) -> Vec<f64> {
        let h: Vec<f64> = (0..self.hidden)
            .map(|i| {
                let row = &self.a[i * self.latent_dim..(i + 1) * self.latent_dim];
                (row.iter().zip(z).map(|(w, x)| w * x).sum::<f64>() + self.a_bias[i]).tanh()
            })
            .collect();
        (0..self.feature_dim)
            .map(|j| {
                let row = &self.b[j * self.hidden..(j + 1) * self.hidden];
                row.iter().zip(&h).map(|(w, x)| w * x).sum::<f64>() + self.b_bias[j]
            })
            .collect()
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn gaussian_centers(spec: &SyntheticSpec, half_width: f64, rng: &mut Rng) -> Result<Vec<Vec<f64>>> {
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(spec.num_classes);
    for k in 0..spec.num_classes {
        let mut placed = false;
        for _ in 0..MAX_CENTER_TRIES {
            let c: Vec<f64> = (0..spec.latent_dim).map(|_| rng.uniform(-half_width, half_width)).collect();
            if centers.iter().all(|o| dist(o, &c) >= spec.class_separation) {
                centers.push(c);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::Generation(format!(
                "could not place class {k} at separation {} after {MAX_CENTER_TRIES} tries",
                spec.class_separation
            )));
        }
    }
    Ok(centers)
}

/// Ring geometry: classes fill arcs of `ARCS_PER_RING` per radius.
const ARCS_PER_RING: usize = 4;

fn ring_arc(spec: &SyntheticSpec, k: usize) -> (f64, f64, f64) {
    let ring = k / ARCS_PER_RING;
    let slot = k % ARCS_PER_RING;
    let radius = spec.class_separation * (1.0 + ring as f64);
    // Each ring is rotated by half a slot relative to the previous one.
    let phase = TAU * (slot as f64 + 0.5 * (ring % 2) as f64) / ARCS_PER_RING as f64;
    let half_span = 0.35 * TAU / ARCS_PER_RING as f64;
    (radius, phase, half_span)
}

/// Generates a dataset according to `spec`; deterministic in `(spec, rng)`.
pub fn generate(spec: &SyntheticSpec, rng: &mut Rng) -> Result<Synthetic> {
    spec.validate()?;
    let (centers, scale) = match spec.kind {
        GeneratorKind::GaussianClusters => {
            // Box volume grows with the class count so rejection sampling stays cheap.
            let half_width =
                spec.class_separation * (spec.num_classes as f64).powf(1.0 / spec.latent_dim as f64).max(1.0);
            (gaussian_centers(spec, half_width, rng)?, half_width)
        }
        GeneratorKind::RotatedRings => {
            let centers = (0..spec.num_classes)
                .map(|k| {
                    let (r, phase, _) = ring_arc(spec, k);
                    vec![r * phase.cos(), r * phase.sin()]
                })
                .collect();
            let rings = spec.num_classes.div_ceil(ARCS_PER_RING);
            (centers, spec.class_separation * rings as f64)
        }
    };
    let mixing = Mixing::new(spec.latent_dim, spec.feature_dim, scale, spec.mixing_seed);

    let mut latent = Vec::with_capacity(spec.num_classes);
    let mut classes = Vec::with_capacity(spec.num_classes);
    for (k, center) in centers.iter().enumerate() {
        let points: Vec<Vec<f64>> = (0..spec.instances_per_class)
            .map(|_| match spec.kind {
                GeneratorKind::GaussianClusters => center.iter().map(|c| c + spec.noise_std * rng.normal()).collect(),
                GeneratorKind::RotatedRings => {
                    let (r, phase, half_span) = ring_arc(spec, k);
                    let angle = phase + rng.uniform(-half_span, half_span);
                    vec![
                        r * angle.cos() + spec.noise_std * rng.normal(),
                        r * angle.sin() + spec.noise_std * rng.normal(),
                    ]
                }
            })
            .collect();
        classes.push(ClassData {
            label: format!("class_{k:03}"),
            instances: points.iter().map(|z| mixing.apply(z)).collect(),
        });
        latent.push(points);
    }
    let dataset = Dataset::new(spec.feature_dim, classes)?;
    Ok(Synthetic { dataset, centers, latent })
}

/// Convenience wrapper returning only the dataset.
pub fn gen_synthetic(spec: &SyntheticSpec, rng: &mut Rng) -> Result<Dataset> {
    generate(spec, rng).map(|s| s.dataset)
}

/// Fraction of latent points whose nearest center is their own class center.
pub fn nearest_center_accuracy(synthetic: &Synthetic) -> f64 {
    let mut correct = 0usize;
    let mut total = 0usize;
    for (k, points) in synthetic.latent.iter().enumerate() {
        for z in points {
            let best = synthetic
                .centers
                .iter()
                .enumerate()
                .map(|(j, c)| (j, dist(c, z)))
                .fold((usize::MAX, f64::INFINITY), |acc, (j, d)| if d < acc.1 { (j, d) } else { acc });
            correct += usize::from(best.0 == k);
            total += 1;
        }
    }
    if total == 0 {
        return 0.0;
    }
    correct as f64 / total as f64
}
