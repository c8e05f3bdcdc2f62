//! Procedural point-cloud classes, normalization, and dataset splits.
//!
//! Eight surface families with distinct salient structure (a cone apex, a
//! torus hole, a bump on a plane, ...) so that the quality of a learned
//! ordering is measurable at desk scale. Points are sampled uniformly from
//! each surface, displaced by a small jitter (uniform in a ball of radius
//! 0.01), and normalized to zero centroid and unit max radius before use.

use alloc::vec::Vec;
use core::f64::consts::PI;
use core::fmt;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[cfg(not(feature = "std"))]
use num_traits::Float as _;

use crate::tensor::Tensor2;

/// Magnitude of the surface jitter, relative to the unit-scale shapes.
pub const JITTER_SCALE: f64 = 0.01;

/// An unordered set of N points in 3-space.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Tensor2,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataError {
    /// Point matrices must be Nx3 with N >= 1 and finite entries.
    BadPoints(&'static str),
    UnknownClass(usize),
    /// Generation needs at least 8 points.
    TooFewPoints(usize),
    BadFraction(f64),
    /// A split left one side without any clouds.
    EmptySplit(&'static str),
}

impl fmt::Display for DataError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DataError::BadPoints(m) => write!(f, "point cloud: {m}"),
            DataError::UnknownClass(id) => write!(f, "unknown class id {id}"),
            DataError::TooFewPoints(n) => write!(f, "need at least 8 points, got {n}"),
            DataError::BadFraction(v) => {
                write!(f, "train fraction must be in (0, 1), got {v}")
            }
            DataError::EmptySplit(side) => write!(f, "split leaves no {side} clouds"),
        }
    }
}

impl core::error::Error for DataError {}

impl PointCloud {
    pub fn new(points: Tensor2) -> Result<Self, DataError> {
        if points.cols() != 3 {
            return Err(DataError::BadPoints("expected 3 columns"));
        }
        if points.rows() == 0 {
            return Err(DataError::BadPoints("at least one point required"));
        }
        if !points.is_finite() {
            return Err(DataError::BadPoints("coordinates must be finite"));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &Tensor2 {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.rows()
    }

    pub fn is_empty(&self) -> bool {
        false // invariant: N >= 1
    }

    pub fn point(&self, i: usize) -> [f64; 3] {
        [self.points.get(i, 0), self.points.get(i, 1), self.points.get(i, 2)]
    }
}

/// The procedural shape families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ShapeClass {
    Sphere,
    Cube,
    Cylinder,
    Torus,
    Cone,
    TwoSpheres,
    PlaneBump,
    Helix,
}

impl ShapeClass {
    pub const ALL: [ShapeClass; 8] = [
        ShapeClass::Sphere,
        ShapeClass::Cube,
        ShapeClass::Cylinder,
        ShapeClass::Torus,
        ShapeClass::Cone,
        ShapeClass::TwoSpheres,
        ShapeClass::PlaneBump,
        ShapeClass::Helix,
    ];

    pub fn id(self) -> usize {
        Self::ALL.iter().position(|&c| c == self).expect("listed")
    }

    pub fn from_id(id: usize) -> Result<Self, DataError> {
        Self::ALL.get(id).copied().ok_or(DataError::UnknownClass(id))
    }

    pub fn name(self) -> &'static str {
        match self {
            ShapeClass::Sphere => "sphere",
            ShapeClass::Cube => "cube",
            ShapeClass::Cylinder => "cylinder",
            ShapeClass::Torus => "torus",
            ShapeClass::Cone => "cone",
            ShapeClass::TwoSpheres => "two-spheres",
            ShapeClass::PlaneBump => "plane-with-bump",
            ShapeClass::Helix => "helix",
        }
    }
}

fn unit_sphere_point(rng: &mut ChaCha8Rng) -> [f64; 3] {
    let z: f64 = rng.gen_range(-1.0..1.0);
    let phi: f64 = rng.gen_range(0.0..2.0 * PI);
    let r = (1.0 - z * z).sqrt();
    [r * phi.cos(), r * phi.sin(), z]
}

/// Uniform point in the unit ball by rejection.
fn ball_point(rng: &mut ChaCha8Rng) -> [f64; 3] {
    loop {
        let p = [
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        ];
        if p[0] * p[0] + p[1] * p[1] + p[2] * p[2] <= 1.0 {
            return p;
        }
    }
}

fn surface_point(class: ShapeClass, rng: &mut ChaCha8Rng) -> [f64; 3] {
    match class {
        ShapeClass::Sphere => unit_sphere_point(rng),
        ShapeClass::Cube => {
            // half-extent 1; faces have equal area
            let axis = rng.gen_range(0usize..3);
            let side = if rng.gen_range(0.0..1.0) < 0.5 { -1.0 } else { 1.0 };
            let a = rng.gen_range(-1.0..1.0);
            let b = rng.gen_range(-1.0..1.0);
            match axis {
                0 => [side, a, b],
                1 => [a, side, b],
                _ => [a, b, side],
            }
        }
        ShapeClass::Cylinder => {
            let radius = 0.7;
            let half_height = 1.0;
            let lateral = 2.0 * PI * radius * 2.0 * half_height;
            let caps = 2.0 * PI * radius * radius;
            if rng.gen_range(0.0..lateral + caps) < lateral {
                let phi = rng.gen_range(0.0..2.0 * PI);
                let z = rng.gen_range(-half_height..half_height);
                [radius * phi.cos(), radius * phi.sin(), z]
            } else {
                let z = if rng.gen_range(0.0..1.0) < 0.5 { -half_height } else { half_height };
                let r = radius * rng.gen_range(0.0f64..1.0).sqrt();
                let phi = rng.gen_range(0.0..2.0 * PI);
                [r * phi.cos(), r * phi.sin(), z]
            }
        }
        ShapeClass::Torus => {
            let major = 0.7;
            let minor = 0.3;
            let theta = rng.gen_range(0.0..2.0 * PI);
            // area density along the tube angle is (R + r cos psi) / (R + r)
            let psi = loop {
                let candidate = rng.gen_range(0.0..2.0 * PI);
                let accept = (major + minor * candidate.cos()) / (major + minor);
                if rng.gen_range(0.0..1.0) < accept {
                    break candidate;
                }
            };
            let ring = major + minor * psi.cos();
            [ring * theta.cos(), ring * theta.sin(), minor * psi.sin()]
        }
        ShapeClass::Cone => {
            // apex at (0, 0, 1), base disc of radius 0.8 at z = -1
            let base_r: f64 = 0.8;
            let slant = (base_r * base_r + 4.0).sqrt();
            let lateral = PI * base_r * slant;
            let base = PI * base_r * base_r;
            let phi = rng.gen_range(0.0..2.0 * PI);
            if rng.gen_range(0.0..lateral + base) < lateral {
                // area density grows linearly from the apex
                let t = rng.gen_range(0.0f64..1.0).sqrt();
                let r = base_r * t;
                [r * phi.cos(), r * phi.sin(), 1.0 - 2.0 * t]
            } else {
                let r = base_r * rng.gen_range(0.0f64..1.0).sqrt();
                [r * phi.cos(), r * phi.sin(), -1.0]
            }
        }
        ShapeClass::TwoSpheres => {
            let center = if rng.gen_range(0.0..1.0) < 0.5 { -0.55 } else { 0.55 };
            let p = unit_sphere_point(rng);
            [p[0] * 0.45 + center, p[1] * 0.45, p[2] * 0.45]
        }
        ShapeClass::PlaneBump => {
            let x: f64 = rng.gen_range(-1.0..1.0);
            let y: f64 = rng.gen_range(-1.0..1.0);
            let z = 0.6 * (-(x * x + y * y) / (2.0 * 0.25 * 0.25)).exp();
            [x, y, z]
        }
        ShapeClass::Helix => {
            let turns = 3.0;
            let u = rng.gen_range(0.0..1.0);
            let t = u * turns * 2.0 * PI;
            [0.7 * t.cos(), 0.7 * t.sin(), -1.0 + 2.0 * u]
        }
    }
}

/// Sample `n_points` from the class surface with ball-uniform jitter of
/// radius [`JITTER_SCALE`]. Deterministic in (class, n_points, seed).
pub fn gen_synthetic(
    class: ShapeClass,
    n_points: usize,
    seed: u64,
) -> Result<PointCloud, DataError> {
    if n_points < 8 {
        return Err(DataError::TooFewPoints(n_points));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(n_points * 3);
    for _ in 0..n_points {
        let p = surface_point(class, &mut rng);
        let j = ball_point(&mut rng);
        data.push(p[0] + JITTER_SCALE * j[0]);
        data.push(p[1] + JITTER_SCALE * j[1]);
        data.push(p[2] + JITTER_SCALE * j[2]);
    }
    PointCloud::new(Tensor2::from_vec(n_points, 3, data).expect("n x 3"))
}

/// Mean-center and scale so the farthest point sits at radius 1. A cloud of
/// coincident points maps to the origin (no scale applied).
pub fn normalize_unit_sphere(cloud: &PointCloud) -> PointCloud {
    let pts = cloud.points();
    let n = pts.rows();
    let mut centroid = [0.0f64; 3];
    for i in 0..n {
        for (c, v) in centroid.iter_mut().zip(pts.row(i)) {
            *c += v;
        }
    }
    for c in &mut centroid {
        *c /= n as f64;
    }
    let mut centered = Tensor2::from_fn(n, 3, |i, j| pts.get(i, j) - centroid[j]);
    let max_norm = (0..n)
        .map(|i| centered.row(i).iter().map(|v| v * v).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    if max_norm > 1e-15 {
        for v in centered.data_mut() {
            *v /= max_norm;
        }
    }
    PointCloud::new(centered).expect("normalization preserves validity")
}

/// Clouds with class labels.
#[derive(Debug, Clone, Default)]
pub struct LabeledDataset {
    pub clouds: Vec<PointCloud>,
    pub labels: Vec<usize>,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.clouds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clouds.is_empty()
    }

    pub fn push(&mut self, cloud: PointCloud, label: usize) {
        self.clouds.push(cloud);
        self.labels.push(label);
    }

    fn take(&self, indices: &[usize]) -> LabeledDataset {
        LabeledDataset {
            clouds: indices.iter().map(|&i| self.clouds[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Distinct labels present, ascending.
    pub fn classes(&self) -> Vec<usize> {
        let mut cs = self.labels.clone();
        cs.sort_unstable();
        cs.dedup();
        cs
    }
}

/// Generate `clouds_per_class` normalized clouds for every class listed,
/// deterministically in `seed`.
pub fn make_dataset(
    classes: &[ShapeClass],
    clouds_per_class: usize,
    n_points: usize,
    seed: u64,
) -> Result<LabeledDataset, DataError> {
    let mut out = LabeledDataset::default();
    for &class in classes {
        for k in 0..clouds_per_class {
            let cloud_seed = crate::mix_seed(seed, (class.id() as u64) << 32 | k as u64);
            let raw = gen_synthetic(class, n_points, cloud_seed)?;
            out.push(normalize_unit_sphere(&raw), class.id());
        }
    }
    Ok(out)
}

/// Split into train and test.
///
/// Without `zero_shot_classes`: a seeded shuffle, with `round(fraction * n)`
/// clouds (clamped so neither side is empty) going to train. With
/// `zero_shot_classes`: those classes form the test set and every other
/// class the train set, regardless of `train_fraction`.
pub fn split_dataset(
    dataset: &LabeledDataset,
    train_fraction: f64,
    seed: u64,
    zero_shot_classes: Option<&[usize]>,
) -> Result<(LabeledDataset, LabeledDataset), DataError> {
    if let Some(held_out) = zero_shot_classes {
        let mut train_idx = Vec::new();
        let mut test_idx = Vec::new();
        for (i, &label) in dataset.labels.iter().enumerate() {
            if held_out.contains(&label) {
                test_idx.push(i);
            } else {
                train_idx.push(i);
            }
        }
        if train_idx.is_empty() {
            return Err(DataError::EmptySplit("train"));
        }
        if test_idx.is_empty() {
            return Err(DataError::EmptySplit("test"));
        }
        return Ok((dataset.take(&train_idx), dataset.take(&test_idx)));
    }

    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(DataError::BadFraction(train_fraction));
    }
    let n = dataset.len();
    if n < 2 {
        return Err(DataError::EmptySplit("test"));
    }
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Fisher-Yates, explicit so the order is pinned by the seed alone
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        indices.swap(i, j);
    }
    let ideal = train_fraction * n as f64;
    let train_count = (ideal + 0.5).floor() as usize;
    let train_count = train_count.clamp(1, n - 1);
    Ok((dataset.take(&indices[..train_count]), dataset.take(&indices[train_count..])))
}
