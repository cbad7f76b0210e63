use serde::{Deserialize, Serialize};

use super::{Dataset, Role};
use crate::error::{Error, Result};
use crate::numkit::{stream_key, Matrix, RngStream};

const TAG_MIXTURE: u64 = 0x6d69_7874;
const TAG_UNIFORM: u64 = 0x756e_6966;
const TAG_SHIFTED: u64 = 0x7368_6674;
const TAG_HELDOUT: u64 = 0x6865_6c64;
const TAG_MEANS: u64 = 0x6d65_616e;

/// A spherical Gaussian component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub mean: Vec<f64>,
    pub scale: f64,
}

/// Spherical Gaussian mixture with one component per class.
///
/// `heldout` clusters are never part of the in-distribution data; they back
/// the `HeldoutClasses` OOD pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureSpec {
    pub num_classes: usize,
    pub dim: usize,
    pub means: Vec<Vec<f64>>,
    pub scales: Vec<f64>,
    pub samples_per_class: usize,
    pub bounds: Vec<(f64, f64)>,
    #[serde(default)]
    pub heldout: Vec<Cluster>,
}

/// Kinds of out-of-distribution pools.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OodKind {
    /// Uniform over the data bounds.
    UniformCube,
    /// Every class mean moved by `offset` class standard deviations along
    /// each coordinate (the all-ones direction). Not clipped to bounds.
    ShiftedMeans { offset: f64 },
    /// Samples from the mixture's held-out clusters.
    HeldoutClasses,
}

impl MixtureSpec {
    /// Means drawn uniformly on a sphere of `radius`, shared `scale`, and
    /// symmetric per-coordinate bounds `[-half_width, half_width]`.
    pub fn on_sphere(
        num_classes: usize,
        dim: usize,
        radius: f64,
        scale: f64,
        samples_per_class: usize,
        half_width: f64,
        seed: u64,
    ) -> Self {
        let mut rng = RngStream::new(seed, stream_key(TAG_MEANS, &[num_classes as u64]));
        let means = (0..num_classes)
            .map(|_| rng.unit_vector(dim).into_iter().map(|v| v * radius).collect())
            .collect();
        Self {
            num_classes,
            dim,
            means,
            scales: vec![scale; num_classes],
            samples_per_class,
            bounds: vec![(-half_width, half_width); dim],
            heldout: Vec::new(),
        }
    }

    /// The desk-scale benchmark: 10 classes in 32 dimensions, means on a
    /// radius-5 sphere, unit scale, 700 samples per class (500 train and 200
    /// test after [`super::split`] with fraction 2/7).
    pub fn synth10(seed: u64) -> Self {
        Self::on_sphere(10, 32, 5.0, 1.0, 700, SYNTH10_HALF_WIDTH, seed)
    }

    /// A copy with `extra` additional classes whose means are drawn on the
    /// same sphere as the existing ones (radius taken from the first mean).
    pub fn broadened(&self, extra: usize, seed: u64) -> Self {
        let radius = self
            .means
            .first()
            .map_or(1.0, |m| m.iter().map(|v| v * v).sum::<f64>().sqrt());
        let scale = self.scales.first().copied().unwrap_or(1.0);
        let mut rng = RngStream::new(seed, stream_key(TAG_MEANS, &[u64::MAX, extra as u64]));
        let mut out = self.clone();
        for _ in 0..extra {
            out.means
                .push(rng.unit_vector(self.dim).into_iter().map(|v| v * radius).collect());
            out.scales.push(scale);
        }
        out.num_classes += extra;
        out
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidSpec(msg));
        if self.num_classes < 2 {
            return bad(format!("num_classes = {} (need >= 2)", self.num_classes));
        }
        if self.dim < 2 {
            return bad(format!("dim = {} (need >= 2)", self.dim));
        }
        if self.means.len() != self.num_classes || self.scales.len() != self.num_classes {
            return bad("means/scales must have one entry per class".into());
        }
        if self.bounds.len() != self.dim {
            return bad("bounds must have one entry per dimension".into());
        }
        if self.samples_per_class == 0 {
            return bad("samples_per_class must be positive".into());
        }
        for (j, &(lo, hi)) in self.bounds.iter().enumerate() {
            if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                return bad(format!("bounds[{j}] = ({lo}, {hi})"));
            }
        }
        let clusters = self
            .means
            .iter()
            .zip(&self.scales)
            .map(|(m, &s)| (m.as_slice(), s))
            .chain(self.heldout.iter().map(|c| (c.mean.as_slice(), c.scale)));
        for (c, (mean, scale)) in clusters.enumerate() {
            if !(scale > 0.0) || !scale.is_finite() {
                return bad(format!("cluster {c}: scale {scale}"));
            }
            if mean.len() != self.dim {
                return bad(format!("cluster {c}: mean has {} dims", mean.len()));
            }
            for (j, (&v, &(lo, hi))) in mean.iter().zip(&self.bounds).enumerate() {
                if !(lo..=hi).contains(&v) {
                    return bad(format!("cluster {c}: mean[{j}] = {v} outside bounds"));
                }
            }
        }
        Ok(())
    }

    fn clip(&self, x: &mut [f64]) {
        for (v, &(lo, hi)) in x.iter_mut().zip(&self.bounds) {
            *v = v.clamp(lo, hi);
        }
    }
}

/// Default half-width of the synth-10 data bounds.
pub const SYNTH10_HALF_WIDTH: f64 = 6.0;

fn draw_cluster(
    rng: &mut RngStream,
    mean: &[f64],
    scale: f64,
    offset: f64,
    n: usize,
    out: &mut Vec<f64>,
) {
    for _ in 0..n {
        out.extend(mean.iter().map(|m| m + offset + scale * rng.standard_gaussian()));
    }
}

/// Draws `samples_per_class` points per class, clipped to the bounds.
/// Samples are grouped by class in ascending class order.
pub fn make_mixture(spec: &MixtureSpec, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    let n = spec.samples_per_class * spec.num_classes;
    let mut data = Vec::with_capacity(n * spec.dim);
    let mut labels = Vec::with_capacity(n);
    for c in 0..spec.num_classes {
        let mut rng = RngStream::new(seed, stream_key(TAG_MIXTURE, &[c as u64]));
        let start = data.len();
        draw_cluster(&mut rng, &spec.means[c], spec.scales[c], 0.0, spec.samples_per_class, &mut data);
        for row in data[start..].chunks_exact_mut(spec.dim) {
            spec.clip(row);
        }
        labels.extend(std::iter::repeat(c).take(spec.samples_per_class));
    }
    Dataset::new(
        Matrix::new(n, spec.dim, data)?,
        labels,
        spec.num_classes,
        Role::IdTrain,
    )
}

/// Builds an out-of-distribution pool of `samples_per_class · C` points
/// (or `samples_per_class` per held-out cluster).
pub fn make_ood_pool(spec: &MixtureSpec, kind: OodKind, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    let d = spec.dim;
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let num_classes;
    match kind {
        OodKind::UniformCube => {
            let n = spec.samples_per_class * spec.num_classes;
            let mut rng = RngStream::new(seed, stream_key(TAG_UNIFORM, &[]));
            data.reserve(n * d);
            for _ in 0..n {
                for &(lo, hi) in &spec.bounds {
                    data.push(lo + (hi - lo) * rng.uniform01());
                }
            }
            labels = vec![0; n];
            num_classes = spec.num_classes;
        }
        OodKind::ShiftedMeans { offset } => {
            if !offset.is_finite() {
                return Err(Error::InvalidSpec(format!("offset {offset}")));
            }
            for c in 0..spec.num_classes {
                let mut rng = RngStream::new(seed, stream_key(TAG_SHIFTED, &[c as u64]));
                let scale = spec.scales[c];
                draw_cluster(&mut rng, &spec.means[c], scale, offset * scale, spec.samples_per_class, &mut data);
                labels.extend(std::iter::repeat(c).take(spec.samples_per_class));
            }
            num_classes = spec.num_classes;
        }
        OodKind::HeldoutClasses => {
            if spec.heldout.is_empty() {
                return Err(Error::InvalidSpec(
                    "heldout_classes pool needs at least one reserved cluster".into(),
                ));
            }
            for (h, cl) in spec.heldout.iter().enumerate() {
                let mut rng = RngStream::new(seed, stream_key(TAG_HELDOUT, &[h as u64]));
                let start = data.len();
                draw_cluster(&mut rng, &cl.mean, cl.scale, 0.0, spec.samples_per_class, &mut data);
                for row in data[start..].chunks_exact_mut(d) {
                    spec.clip(row);
                }
                labels.extend(std::iter::repeat(h).take(spec.samples_per_class));
            }
            num_classes = spec.heldout.len();
        }
    }
    let n = labels.len();
    Dataset::new(Matrix::new(n, d, data)?, labels, num_classes, Role::OodPool)
}
