//! Seeded 2-D point datasets with an analytic Bayes-posterior classifier.
//!
//! Classes are uniform rectangles or isotropic Gaussians. A class weight
//! scales its sample count (`base * weight / min_weight`) and, with it, its
//! prior. Logits are log posteriors, so the "classifier" is Bayes-optimal
//! for the generating distribution.
//!
//! Sampling uses ChaCha20 seeded with `seed`; each (partition, class) pair
//! draws from its own stream `partition_index << 32 | class`, with
//! partitions numbered train = 0, val = 1, test = 2. Output is identical
//! across platforms for a given spec.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::score_model::{Example, ScoreSet};

/// Logit assigned where a class has zero density.
pub const LOG_FLOOR: f64 = -1e9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    UniformRect { xmin: f64, xmax: f64, ymin: f64, ymax: f64 },
    IsotropicGaussian { mean: [f64; 2], sigma: f64 },
}

impl Shape {
    fn ln_density(&self, [x, y]: [f64; 2]) -> f64 {
        match *self {
            Shape::UniformRect { xmin, xmax, ymin, ymax } => {
                if (xmin..=xmax).contains(&x) && (ymin..=ymax).contains(&y) {
                    -((xmax - xmin) * (ymax - ymin)).ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
            Shape::IsotropicGaussian { mean, sigma } => {
                let d2 = (x - mean[0]).powi(2) + (y - mean[1]).powi(2);
                -d2 / (2.0 * sigma * sigma) - (2.0 * std::f64::consts::PI * sigma * sigma).ln()
            }
        }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> [f64; 2] {
        match *self {
            Shape::UniformRect { xmin, xmax, ymin, ymax } => {
                let u: f64 = rng.random();
                let v: f64 = rng.random();
                [xmin + (xmax - xmin) * u, ymin + (ymax - ymin) * v]
            }
            Shape::IsotropicGaussian { mean, sigma } => {
                let u: f64 = rng.sample(StandardNormal);
                let v: f64 = rng.sample(StandardNormal);
                [mean[0] + sigma * u, mean[1] + sigma * v]
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            Shape::UniformRect { xmin, xmax, ymin, ymax } => {
                if ![xmin, xmax, ymin, ymax].iter().all(|v| v.is_finite()) || xmin >= xmax || ymin >= ymax {
                    return Err(Error::domain(format!(
                        "rectangle bounds must be finite and ordered (x: {xmin}..{xmax}, y: {ymin}..{ymax})"
                    )));
                }
            }
            Shape::IsotropicGaussian { mean, sigma } => {
                if !(mean.iter().all(|v| v.is_finite()) && sigma.is_finite() && sigma > 0.0) {
                    return Err(Error::domain(format!(
                        "gaussian needs finite mean and sigma > 0 (sigma={sigma})"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassComponent {
    pub shape: Shape,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionCounts {
    pub train: u64,
    pub val: u64,
    pub test: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub classes: Vec<ClassComponent>,
    /// Base per-class counts, scaled by each class's relative weight.
    pub per_class_counts: PartitionCounts,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes.len() < 2 {
            return Err(Error::domain("a synthetic spec needs at least two classes"));
        }
        for (j, c) in self.classes.iter().enumerate() {
            c.shape
                .validate()
                .map_err(|e| Error::domain(format!("class {j}: {e}")))?;
            if !(c.weight.is_finite() && c.weight > 0.0) {
                return Err(Error::domain(format!("class {j}: weight must be positive")));
            }
        }
        let PartitionCounts { train, val, test } = self.per_class_counts;
        if train == 0 || val == 0 || test == 0 {
            return Err(Error::domain("per-class counts must be positive"));
        }
        Ok(())
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(s)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn class_count(&self) -> usize {
        self.classes.len()
    }

    /// Number of class-`j` examples in a partition with base count `base`.
    pub fn class_sample_count(&self, j: usize, base: u64) -> u64 {
        let min_w = self.classes.iter().map(|c| c.weight).fold(f64::INFINITY, f64::min);
        (base as f64 * self.classes[j].weight / min_w).round() as u64
    }

    /// True when every class is a uniform rectangle with the same weighted
    /// density, the setting in which an ideal reject region is defined.
    pub fn is_equal_density_uniform(&self) -> bool {
        let mut dens = Vec::with_capacity(self.classes.len());
        for c in &self.classes {
            match c.shape {
                Shape::UniformRect { xmin, xmax, ymin, ymax } => dens.push(c.weight / ((xmax - xmin) * (ymax - ymin))),
                Shape::IsotropicGaussian { .. } => return false,
            }
        }
        dens.iter().all(|d| (d - dens[0]).abs() <= 1e-12 * dens[0])
    }
}

fn weighted_ln_densities(point: [f64; 2], spec: &SyntheticSpec) -> Vec<f64> {
    spec.classes
        .iter()
        .map(|c| c.weight.ln() + c.shape.ln_density(point))
        .collect()
}

/// Log posterior of every class at `point`, with zero-density classes
/// floored at [`LOG_FLOOR`]. Points outside every support get a uniform
/// posterior.
pub fn bayes_logits(point: [f64; 2], spec: &SyntheticSpec) -> Vec<f64> {
    let lw = weighted_ln_densities(point, spec);
    let max = lw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return vec![0.0; lw.len()];
    }
    let lse = max + lw.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    lw.iter()
        .map(|v| if v.is_finite() { v - lse } else { LOG_FLOOR })
        .collect()
}

/// Whether the maximal weighted density at `point` is shared by two or more
/// classes.
pub fn in_ideal_reject_region(point: [f64; 2], spec: &SyntheticSpec) -> bool {
    let dens: Vec<f64> = weighted_ln_densities(point, spec).into_iter().map(f64::exp).collect();
    let max = dens.iter().copied().fold(0.0, f64::max);
    if max <= 0.0 {
        return false;
    }
    dens.iter().filter(|d| (max - **d) <= 1e-9 * max).count() >= 2
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Partition {
    Train,
    Val,
    Test,
}

impl Partition {
    pub const ALL: [Partition; 3] = [Partition::Train, Partition::Val, Partition::Test];

    pub fn name(&self) -> &'static str {
        match self {
            Partition::Train => "train",
            Partition::Val => "val",
            Partition::Test => "test",
        }
    }

    fn index(&self) -> u64 {
        match self {
            Partition::Train => 0,
            Partition::Val => 1,
            Partition::Test => 2,
        }
    }

    fn base_count(&self, counts: &PartitionCounts) -> u64 {
        match self {
            Partition::Train => counts.train,
            Partition::Val => counts.val,
            Partition::Test => counts.test,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GeneratedPartition {
    pub set: ScoreSet,
    /// Present only for equal-density uniform specs.
    pub ideal_mask: Option<Vec<bool>>,
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub train: GeneratedPartition,
    pub val: GeneratedPartition,
    pub test: GeneratedPartition,
}

impl SyntheticData {
    pub fn partition(&self, p: Partition) -> &GeneratedPartition {
        match p {
            Partition::Train => &self.train,
            Partition::Val => &self.val,
            Partition::Test => &self.test,
        }
    }
}

pub fn generate_partition(spec: &SyntheticSpec, partition: Partition) -> Result<GeneratedPartition> {
    spec.validate()?;
    let base = partition.base_count(&spec.per_class_counts);
    let with_mask = spec.is_equal_density_uniform();
    let mut examples = Vec::new();
    let mut mask = Vec::new();
    for (j, class) in spec.classes.iter().enumerate() {
        let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
        rng.set_stream(partition.index() << 32 | j as u64);
        for i in 0..spec.class_sample_count(j, base) {
            let point = class.shape.sample(&mut rng);
            if with_mask {
                mask.push(in_ideal_reject_region(point, spec));
            }
            examples.push(Example {
                id: format!("{}-c{j}-{i:06}", partition.name()),
                label: j,
                logits: bayes_logits(point, spec),
                coords: Some(point),
            });
        }
    }
    Ok(GeneratedPartition {
        set: ScoreSet::new(spec.class_count(), examples)?,
        ideal_mask: with_mask.then_some(mask),
    })
}

pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticData> {
    Ok(SyntheticData {
        train: generate_partition(spec, Partition::Train)?,
        val: generate_partition(spec, Partition::Val)?,
        test: generate_partition(spec, Partition::Test)?,
    })
}

/// Names accepted by [`preset`].
pub const PRESET_NAMES: [&str; 8] = [
    "synthetic1",
    "synthetic2",
    "synthetic3",
    "synthetic4",
    "synthetic5",
    "synthetic6",
    "synthetic7",
    "synthetic8",
];

fn rect(xmin: f64, xmax: f64, ymin: f64, ymax: f64) -> ClassComponent {
    ClassComponent {
        shape: Shape::UniformRect { xmin, xmax, ymin, ymax },
        weight: 1.0,
    }
}

fn gauss(x: f64, y: f64, sigma: f64, weight: f64) -> ClassComponent {
    ClassComponent {
        shape: Shape::IsotropicGaussian { mean: [x, y], sigma },
        weight,
    }
}

/// Built-in approximate layouts of the eight 2-D benchmark sets.
///
/// 1-4 are equal-density unit-weight rectangles of side 2 whose overlaps
/// are the ideal reject region; 5-8 are unit-sigma Gaussians with unequal
/// weights (2:1, 2:1, 4:2:1, 6:5:4:3). Counts default to 1000/1000/4000
/// per class before weight scaling.
pub fn preset(name: &str, seed: u64) -> Option<SyntheticSpec> {
    let classes = match name {
        // Two squares sharing a 0.5-wide strip.
        "synthetic1" => vec![rect(0.0, 2.0, 0.0, 2.0), rect(1.5, 3.5, 0.0, 2.0)],
        // Two coincident squares: everything is ideally rejected.
        "synthetic2" => vec![rect(0.0, 2.0, 0.0, 2.0), rect(0.0, 2.0, 0.0, 2.0)],
        // L-shaped arrangement with a small triple overlap.
        "synthetic3" => vec![
            rect(0.0, 2.0, 0.0, 2.0),
            rect(1.5, 3.5, 0.0, 2.0),
            rect(0.0, 2.0, 1.5, 3.5),
        ],
        // 2x2 arrangement; the central 0.5 x 0.5 square lies in all four.
        "synthetic4" => vec![
            rect(0.0, 2.0, 0.0, 2.0),
            rect(1.5, 3.5, 0.0, 2.0),
            rect(0.0, 2.0, 1.5, 3.5),
            rect(1.5, 3.5, 1.5, 3.5),
        ],
        "synthetic5" => vec![gauss(0.0, 0.0, 1.0, 2.0), gauss(2.3, 0.0, 1.0, 1.0)],
        "synthetic6" => vec![gauss(0.0, 0.0, 1.0, 2.0), gauss(0.4, 0.0, 1.0, 1.0)],
        "synthetic7" => vec![
            gauss(0.0, 0.0, 1.0, 4.0),
            gauss(2.35, 0.0, 1.0, 2.0),
            gauss(1.175, 2.05, 1.0, 1.0),
        ],
        "synthetic8" => vec![
            gauss(0.0, 0.0, 1.0, 6.0),
            gauss(2.0, 0.0, 1.0, 5.0),
            gauss(0.0, 2.0, 1.0, 4.0),
            gauss(2.0, 2.0, 1.0, 3.0),
        ],
        _ => return None,
    };
    Some(SyntheticSpec {
        classes,
        per_class_counts: PartitionCounts {
            train: 1000,
            val: 1000,
            test: 4000,
        },
        seed,
    })
}
