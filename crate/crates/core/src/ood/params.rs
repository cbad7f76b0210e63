use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{cholesky, forward_substitute, gemm_tn, Matrix};

/// Default ridge, as a fraction of the mean per-dimension variance.
pub const DEFAULT_RIDGE: f64 = 1e-3;
/// Default calibration percentile.
pub const DEFAULT_PERCENTILE: f64 = 95.0;
/// Smallest calibration set accepted.
pub const MIN_CALIBRATION_SAMPLES: usize = 20;

/// Class-conditional Gaussian model of the in-distribution embeddings.
///
/// Each class keeps its mean and unbiased covariance, plus the Cholesky
/// factor of the ridge-regularized covariance
/// `Σ_c + ridge · (tr Σ_c / e) · I` used for scoring. Distances are squared
/// Mahalanobis distances, so `t_distance` is in squared units too.
#[derive(Debug, Clone, PartialEq)]
pub struct OodParams {
    num_classes: usize,
    dim: usize,
    mu: Vec<Vec<f64>>,
    sigma: Vec<Matrix>,
    factors: Vec<Matrix>,
    ridge: f64,
    t_distance: Option<f64>,
}

impl OodParams {
    /// Builds parameters from given moments and factors the regularized
    /// covariances.
    pub fn from_moments(mu: Vec<Vec<f64>>, sigma: Vec<Matrix>, ridge: f64) -> Result<Self> {
        if mu.is_empty() {
            return Err(Error::EmptyInput);
        }
        if mu.len() != sigma.len() {
            return Err(Error::DimensionMismatch {
                expected: mu.len(),
                got: sigma.len(),
            });
        }
        if !(ridge >= 0.0) || !ridge.is_finite() {
            return Err(Error::OutOfRange { name: "ridge", value: ridge });
        }
        let dim = mu[0].len();
        let mut factors = Vec::with_capacity(mu.len());
        for (c, (m, s)) in mu.iter().zip(&sigma).enumerate() {
            if m.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: m.len() });
            }
            if s.shape() != (dim, dim) {
                return Err(Error::DimensionMismatch { expected: dim, got: s.rows() });
            }
            let mut reg = s.clone();
            let bump = ridge * s.trace() / dim as f64;
            for i in 0..dim {
                reg.set(i, i, reg.get(i, i) + bump);
            }
            let l = cholesky(&reg).map_err(|e| match e {
                Error::NotPositiveDefinite { .. } => Error::SingularCovariance(c),
                other => other,
            })?;
            factors.push(l);
        }
        Ok(Self {
            num_classes: mu.len(),
            dim,
            mu,
            sigma,
            factors,
            ridge,
            t_distance: None,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.mu
    }

    pub fn covariances(&self) -> &[Matrix] {
        &self.sigma
    }

    pub fn factors(&self) -> &[Matrix] {
        &self.factors
    }

    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    pub fn t_distance(&self) -> Option<f64> {
        self.t_distance
    }

    /// Sets the threshold directly.
    pub fn with_threshold(mut self, t: f64) -> Result<Self> {
        if !(t >= 0.0) {
            return Err(Error::OutOfRange { name: "t_distance", value: t });
        }
        self.t_distance = Some(t);
        Ok(self)
    }

    /// Minimum over classes of the squared Mahalanobis distance, with the
    /// arg-min class (lowest index on ties).
    pub fn maha_score_with_class(&self, x: &[f64]) -> Result<(f64, usize)> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("embedding"));
        }
        let mut best = (f64::INFINITY, 0);
        let mut buf = vec![0.0; self.dim];
        for (c, (mu, l)) in self.mu.iter().zip(&self.factors).enumerate() {
            for ((b, xi), mi) in buf.iter_mut().zip(x).zip(mu) {
                *b = xi - mi;
            }
            // (x-μ)ᵀ (L Lᵀ)⁻¹ (x-μ) = ‖L⁻¹ (x-μ)‖²
            forward_substitute(l, &mut buf)?;
            let d: f64 = buf.iter().map(|v| v * v).sum();
            if d < best.0 {
                best = (d, c);
            }
        }
        Ok(best)
    }

    /// Squared Mahalanobis distance to the nearest class Gaussian.
    pub fn maha_score(&self, x: &[f64]) -> Result<f64> {
        Ok(self.maha_score_with_class(x)?.0)
    }

    pub fn scores(&self, embeddings: &Matrix) -> Result<Vec<f64>> {
        embeddings.row_iter().map(|r| self.maha_score(r)).collect()
    }

    /// Sets `t_distance` to the `q`-th percentile (linear interpolation) of
    /// the scores of `id_embeddings`.
    pub fn calibrate(&self, id_embeddings: &Matrix, q: f64) -> Result<Self> {
        if !(0.0..=100.0).contains(&q) {
            return Err(Error::OutOfRange { name: "percentile", value: q });
        }
        if id_embeddings.rows() < MIN_CALIBRATION_SAMPLES {
            return Err(Error::Config(format!(
                "calibration needs at least {MIN_CALIBRATION_SAMPLES} samples, got {}",
                id_embeddings.rows()
            )));
        }
        let mut s = self.scores(id_embeddings)?;
        s.sort_by(f64::total_cmp);
        let mut out = self.clone();
        out.t_distance = Some(percentile_sorted(&s, q));
        Ok(out)
    }

    /// True iff the score strictly exceeds `t_distance`.
    pub fn is_ood(&self, x: &[f64]) -> Result<bool> {
        let t = self.t_distance.ok_or(Error::NotCalibrated)?;
        Ok(self.maha_score(x)? > t)
    }
}

/// Linear-interpolation percentile of an ascending slice (`q` in `[0, 100]`).
pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q / 100.0 * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Fits per-class means and unbiased covariances of `embeddings`.
pub fn fit(embeddings: &Matrix, labels: &[usize], num_classes: usize, ridge: f64) -> Result<OodParams> {
    if embeddings.rows() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: embeddings.rows(),
            got: labels.len(),
        });
    }
    if num_classes == 0 {
        return Err(Error::EmptyInput);
    }
    let e = embeddings.cols();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, &l) in labels.iter().enumerate() {
        if l >= num_classes {
            return Err(Error::DimensionMismatch {
                expected: num_classes,
                got: l + 1,
            });
        }
        members[l].push(i);
    }
    let mut mu = Vec::with_capacity(num_classes);
    let mut sigma = Vec::with_capacity(num_classes);
    for (c, idx) in members.iter().enumerate() {
        let n_c = idx.len();
        if n_c < 2 {
            return Err(Error::ClassTooSmall(c));
        }
        let mut mean = vec![0.0; e];
        for &i in idx {
            for (m, v) in mean.iter_mut().zip(embeddings.row(i)) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n_c as f64;
        }
        let mut centered = Vec::with_capacity(n_c * e);
        for &i in idx {
            centered.extend(embeddings.row(i).iter().zip(&mean).map(|(v, m)| v - m));
        }
        let mut cov = vec![0.0; e * e];
        gemm_tn(e, n_c, e, &centered, &centered, &mut cov);
        let denom = (n_c - 1) as f64;
        for v in &mut cov {
            *v /= denom;
        }
        mu.push(mean);
        sigma.push(Matrix::from_raw(e, e, cov));
    }
    OodParams::from_moments(mu, sigma, ridge)
}

pub const OOD_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OodFile {
    format_version: u32,
    /// Always "squared_mahalanobis": thresholds are squared distances.
    distance: String,
    #[serde(rename = "C")]
    num_classes: usize,
    #[serde(rename = "e")]
    dim: usize,
    ridge: f64,
    t_distance: Option<f64>,
    mu: Vec<Vec<f64>>,
    /// Row-major `e × e` covariance per class (unregularized).
    sigma: Vec<Vec<f64>>,
}

const DISTANCE_UNITS: &str = "squared_mahalanobis";

impl OodParams {
    pub fn to_json(&self) -> Result<String> {
        let file = OodFile {
            format_version: OOD_FORMAT_VERSION,
            distance: DISTANCE_UNITS.into(),
            num_classes: self.num_classes,
            dim: self.dim,
            ridge: self.ridge,
            t_distance: self.t_distance,
            mu: self.mu.clone(),
            sigma: self.sigma.iter().map(|s| s.as_slice().to_vec()).collect(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    /// Parses a params document and refactors the covariances.
    pub fn from_json(s: &str) -> Result<Self> {
        let file: OodFile = serde_json::from_str(s)?;
        if file.format_version != OOD_FORMAT_VERSION {
            return Err(Error::FormatVersion(file.format_version));
        }
        if file.distance != DISTANCE_UNITS {
            return Err(Error::Config(format!("unknown distance units {:?}", file.distance)));
        }
        if file.mu.len() != file.num_classes || file.sigma.len() != file.num_classes {
            return Err(Error::DimensionMismatch {
                expected: file.num_classes,
                got: file.mu.len(),
            });
        }
        let sigma = file
            .sigma
            .into_iter()
            .map(|s| Matrix::new(file.dim, file.dim, s))
            .collect::<Result<Vec<_>>>()?;
        let params = Self::from_moments(file.mu, sigma, file.ridge)?;
        if params.dim != file.dim {
            return Err(Error::DimensionMismatch {
                expected: file.dim,
                got: params.dim,
            });
        }
        match file.t_distance {
            Some(t) => params.with_threshold(t),
            None => Ok(params),
        }
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        crate::io::write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
