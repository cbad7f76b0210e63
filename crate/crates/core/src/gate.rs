//! The defended prediction path: embed, OOD-check, and either pass the
//! victim's prediction through or, with probability `p`, answer an
//! OOD-flagged query with a random confident prediction.

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nets::{argmax, MlpModel};
use crate::numkit::{Matrix, RngStream};
use crate::ood::OodParams;

/// Anything that maps a batch of inputs to class logits.
pub trait Classifier: Send + Sync {
    fn logits(&self, batch: &Matrix) -> Result<Matrix>;
    fn input_dim(&self) -> usize;
    fn num_classes(&self) -> usize;
}

impl Classifier for MlpModel {
    fn logits(&self, batch: &Matrix) -> Result<Matrix> {
        self.forward(batch)
    }

    fn input_dim(&self) -> usize {
        MlpModel::input_dim(self)
    }

    fn num_classes(&self) -> usize {
        self.output_dim()
    }
}

/// Frozen map from inputs to the embedding space the OOD detector uses.
pub trait FeatureExtractor: Send + Sync {
    fn embed(&self, batch: &Matrix) -> Result<Matrix>;
    fn input_dim(&self) -> usize;
    fn embedding_dim(&self) -> usize;
}

/// Penultimate-layer activations of a trained network.
#[derive(Debug, Clone)]
pub struct PenultimateExtractor {
    model: MlpModel,
    dim: usize,
}

impl PenultimateExtractor {
    pub fn new(model: MlpModel) -> Result<Self> {
        let dim = model.embedding_dim().ok_or_else(|| {
            Error::InvalidSpec("extractor model needs at least one hidden layer".into())
        })?;
        Ok(Self { model, dim })
    }

    pub fn model(&self) -> &MlpModel {
        &self.model
    }
}

impl FeatureExtractor for PenultimateExtractor {
    fn embed(&self, batch: &Matrix) -> Result<Matrix> {
        self.model.penultimate(batch)
    }

    fn input_dim(&self) -> usize {
        self.model.input_dim()
    }

    fn embedding_dim(&self) -> usize {
        self.dim
    }
}

/// Treats inputs as already-computed embeddings (e.g. exported from an
/// external backbone).
#[derive(Debug, Clone, Copy)]
pub struct IdentityExtractor {
    pub dim: usize,
}

impl FeatureExtractor for IdentityExtractor {
    fn embed(&self, batch: &Matrix) -> Result<Matrix> {
        if batch.cols() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: batch.cols(),
            });
        }
        Ok(batch.clone())
    }

    fn input_dim(&self) -> usize {
        self.dim
    }

    fn embedding_dim(&self) -> usize {
        self.dim
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelMode {
    Soft,
    Hard,
}

impl fmt::Display for LabelMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LabelMode::Soft => "soft",
            LabelMode::Hard => "hard",
        })
    }
}

/// Defense knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DefenseConfig {
    /// Probability that an OOD-flagged query gets a random response.
    pub p: f64,
    pub label_mode: LabelMode,
    /// Key the per-query randomness on the input bytes so repeated
    /// identical queries always get identical answers.
    pub consistent_responses: bool,
    /// One-hot height `s` of random logits.
    pub random_logit_scale: f64,
    pub master_seed: u64,
}

impl Default for DefenseConfig {
    fn default() -> Self {
        Self {
            p: 0.7,
            label_mode: LabelMode::Soft,
            consistent_responses: true,
            random_logit_scale: 10.0,
            master_seed: 0,
        }
    }
}

impl DefenseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p) {
            return Err(Error::OutOfRange {
                name: "p",
                value: self.p,
            });
        }
        if !(self.random_logit_scale > 0.0) || !self.random_logit_scale.is_finite() {
            return Err(Error::OutOfRange {
                name: "random_logit_scale",
                value: self.random_logit_scale,
            });
        }
        Ok(())
    }
}

/// What the client gets back.
#[derive(Debug, Clone, PartialEq)]
pub enum Prediction {
    Logits(Vec<f64>),
    Label(usize),
}

impl Prediction {
    pub fn label(&self) -> usize {
        match self {
            Prediction::Logits(l) => argmax(l),
            Prediction::Label(k) => *k,
        }
    }
}

/// Server-side bookkeeping for one response. Never part of client output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ResponseTrace {
    pub was_ood: bool,
    pub was_randomized: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GateResponse {
    pub prediction: Prediction,
    trace: ResponseTrace,
}

impl GateResponse {
    /// Internal trace; exposing it to clients would hand them an OOD oracle.
    pub fn trace(&self) -> ResponseTrace {
        self.trace
    }
}

/// Snapshot of the gate counters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct GateStats {
    pub queries_total: u64,
    pub ood_flagged: u64,
    pub randomized: u64,
}

/// Victim, extractor and detector wired together with the live config.
pub struct GateState {
    victim: Arc<dyn Classifier>,
    extractor: Arc<dyn FeatureExtractor>,
    ood: Arc<OodParams>,
    cfg: RwLock<Arc<DefenseConfig>>,
    total: AtomicU64,
    flagged: AtomicU64,
    randomized: AtomicU64,
    next_index: AtomicU64,
}

impl fmt::Debug for GateState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GateState")
            .field("config", &*self.config())
            .field("stats", &self.stats())
            .finish_non_exhaustive()
    }
}

impl GateState {
    pub fn new(
        victim: Arc<dyn Classifier>,
        extractor: Arc<dyn FeatureExtractor>,
        ood: Arc<OodParams>,
        cfg: DefenseConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        if ood.t_distance().is_none() {
            return Err(Error::NotCalibrated);
        }
        if extractor.input_dim() != victim.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: victim.input_dim(),
                got: extractor.input_dim(),
            });
        }
        if extractor.embedding_dim() != ood.dim() {
            return Err(Error::DimensionMismatch {
                expected: ood.dim(),
                got: extractor.embedding_dim(),
            });
        }
        if victim.num_classes() < 2 {
            return Err(Error::InvalidSpec("victim must have at least 2 classes".into()));
        }
        Ok(Self {
            victim,
            extractor,
            ood,
            cfg: RwLock::new(Arc::new(cfg)),
            total: AtomicU64::new(0),
            flagged: AtomicU64::new(0),
            randomized: AtomicU64::new(0),
            next_index: AtomicU64::new(0),
        })
    }

    pub fn input_dim(&self) -> usize {
        self.victim.input_dim()
    }

    pub fn num_classes(&self) -> usize {
        self.victim.num_classes()
    }

    pub fn victim(&self) -> &Arc<dyn Classifier> {
        &self.victim
    }

    pub fn extractor(&self) -> &Arc<dyn FeatureExtractor> {
        &self.extractor
    }

    pub fn ood(&self) -> &OodParams {
        &self.ood
    }

    /// Current config snapshot.
    pub fn config(&self) -> Arc<DefenseConfig> {
        self.cfg.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    /// Publishes a new misguiding probability; calls already in flight keep
    /// the snapshot they started with.
    pub fn set_p(&self, p: f64) -> Result<DefenseConfig> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::OutOfRange { name: "p", value: p });
        }
        let mut guard = self.cfg.write().unwrap_or_else(|e| e.into_inner());
        let mut next = (**guard).clone();
        next.p = p;
        *guard = Arc::new(next.clone());
        Ok(next)
    }

    /// Counter snapshot; `randomized ≤ ood_flagged ≤ queries_total` holds
    /// for every snapshot because writers bump in the opposite order.
    pub fn stats(&self) -> GateStats {
        let randomized = self.randomized.load(Ordering::SeqCst);
        let ood_flagged = self.flagged.load(Ordering::SeqCst);
        let queries_total = self.total.load(Ordering::SeqCst);
        GateStats {
            queries_total,
            ood_flagged,
            randomized,
        }
    }

    pub fn respond(&self, x: &[f64]) -> Result<GateResponse> {
        let batch = Matrix::new(1, x.len(), x.to_vec())?;
        Ok(self.respond_batch(&batch)?.pop().expect("one row in, one response out"))
    }

    /// Answers every row of `batch`; output order matches input order.
    pub fn respond_batch(&self, batch: &Matrix) -> Result<Vec<GateResponse>> {
        if batch.cols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: batch.cols(),
            });
        }
        if !batch.is_finite() {
            return Err(Error::NonFinite("query"));
        }
        let cfg = self.config();
        let t = self.ood.t_distance().ok_or(Error::NotCalibrated)?;
        let n = batch.rows();
        let logits = self.victim.logits(batch)?;
        let emb = self.extractor.embed(batch)?;
        let base = self.next_index.fetch_add(n as u64, Ordering::SeqCst);
        let c = self.num_classes();

        let mut out = Vec::with_capacity(n);
        let (mut n_flagged, mut n_random) = (0u64, 0u64);
        for i in 0..n {
            let was_ood = self.ood.maha_score(emb.row(i))? > t;
            let mut selected: Option<Vec<f64>> = None;
            if was_ood {
                n_flagged += 1;
                let mut rng = derive_query_rng(&cfg, batch.row(i), base + i as u64);
                // u ∈ [0, 1): u < p never fires at p = 0 and always at p = 1
                if rng.uniform01() < cfg.p {
                    n_random += 1;
                    selected = Some(random_logits(c, &mut rng, cfg.random_logit_scale));
                }
            }
            let was_randomized = selected.is_some();
            let chosen = selected.unwrap_or_else(|| logits.row(i).to_vec());
            let prediction = match cfg.label_mode {
                LabelMode::Soft => Prediction::Logits(chosen),
                LabelMode::Hard => Prediction::Label(argmax(&chosen)),
            };
            out.push(GateResponse {
                prediction,
                trace: ResponseTrace {
                    was_ood,
                    was_randomized,
                },
            });
        }
        self.total.fetch_add(n as u64, Ordering::SeqCst);
        self.flagged.fetch_add(n_flagged, Ordering::SeqCst);
        self.randomized.fetch_add(n_random, Ordering::SeqCst);
        Ok(out)
    }
}

/// `s · one_hot(k) + N(0, I)` with `k` uniform over the classes.
pub fn random_logits(num_classes: usize, rng: &mut RngStream, scale: f64) -> Vec<f64> {
    let k = rng.choice(num_classes);
    let mut v = rng.gaussian_vec(num_classes);
    v[k] += scale;
    v
}

/// 64-bit digest of the little-endian bytes of `x` (with `-0.0` folded
/// into `0.0`).
pub fn content_hash(x: &[f64]) -> u64 {
    let mut h = Sha256::new();
    for v in x {
        let v = if *v == 0.0 { 0.0f64 } else { *v };
        h.update(v.to_le_bytes());
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 yields 32 bytes"))
}

/// Per-query random stream: keyed by the input content in consistent mode,
/// by the query index otherwise.
pub fn derive_query_rng(cfg: &DefenseConfig, x: &[f64], query_index: u64) -> RngStream {
    let stream = if cfg.consistent_responses {
        content_hash(x)
    } else {
        query_index
    };
    RngStream::new(cfg.master_seed, stream)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::{softmax, Dense};

    /// 2-d victim with logits (x0, x1, -x0) and identity embeddings; one
    /// class Gaussian at the origin with Σ = I and threshold 4.
    fn toy_gate(cfg: DefenseConfig) -> GateState {
        let victim = MlpModel::from_layers(vec![Dense {
            weights: Matrix::from_rows(&[[1.0, 0.0, -1.0], [0.0, 1.0, 0.0]]).unwrap(),
            bias: vec![0.0; 3],
        }])
        .unwrap();
        let ood = OodParams::from_moments(vec![vec![0.0, 0.0]], vec![Matrix::identity(2)], 0.0)
            .unwrap()
            .with_threshold(4.0)
            .unwrap();
        GateState::new(
            Arc::new(victim),
            Arc::new(IdentityExtractor { dim: 2 }),
            Arc::new(ood),
            cfg,
        )
        .unwrap()
    }

    fn far_points(n: usize) -> Matrix {
        let data = (0..n).flat_map(|i| [10.0 + i as f64 * 1e-3, -7.0]).collect();
        Matrix::new(n, 2, data).unwrap()
    }

    #[test]
    fn p_zero_is_passthrough() {
        let g = toy_gate(DefenseConfig { p: 0.0, ..Default::default() });
        let x = far_points(200);
        let victim = g.victim().logits(&x).unwrap();
        for (i, r) in g.respond_batch(&x).unwrap().iter().enumerate() {
            assert_eq!(r.prediction, Prediction::Logits(victim.row(i).to_vec()));
            assert!(r.trace().was_ood && !r.trace().was_randomized);
        }
    }

    #[test]
    fn in_distribution_ignores_p() {
        let g = toy_gate(DefenseConfig { p: 1.0, ..Default::default() });
        let r = g.respond(&[0.5, 0.5]).unwrap();
        assert_eq!(r.prediction, Prediction::Logits(vec![0.5, 0.5, -0.5]));
        assert!(!r.trace().was_ood);
        // score exactly at the threshold stays in-distribution
        let r = g.respond(&[2.0, 0.0]).unwrap();
        assert!(!r.trace().was_ood);
    }

    #[test]
    fn p_one_randomizes_every_ood_query() {
        let g = toy_gate(DefenseConfig { p: 1.0, ..Default::default() });
        g.respond_batch(&far_points(500)).unwrap();
        assert_eq!(
            g.stats(),
            GateStats { queries_total: 500, ood_flagged: 500, randomized: 500 }
        );
    }

    #[test]
    fn randomization_rate_matches_p() {
        let g = toy_gate(DefenseConfig { p: 0.7, ..Default::default() });
        g.respond_batch(&far_points(10_000)).unwrap();
        let rate = g.stats().randomized as f64 / 10_000.0;
        assert!((rate - 0.7).abs() <= 0.015, "{rate}");
    }

    #[test]
    fn hard_mode_is_argmax_of_soft_mode() {
        let x = far_points(300);
        for consistent in [true, false] {
            let base = DefenseConfig { p: 0.5, consistent_responses: consistent, ..Default::default() };
            let soft = toy_gate(base.clone()).respond_batch(&x).unwrap();
            let hard = toy_gate(DefenseConfig { label_mode: LabelMode::Hard, ..base })
                .respond_batch(&x)
                .unwrap();
            for (s, h) in soft.iter().zip(&hard) {
                assert_eq!(Prediction::Label(s.prediction.label()), h.prediction);
            }
        }
    }

    #[test]
    fn consistent_mode_repeats_answers() {
        let g = toy_gate(DefenseConfig { p: 0.5, ..Default::default() });
        let x = [9.0, 9.0];
        let first = g.respond(&x).unwrap();
        for _ in 0..20 {
            assert_eq!(g.respond(&x).unwrap(), first);
        }
    }

    #[test]
    fn inconsistent_mode_varies_answers() {
        let g = toy_gate(DefenseConfig { p: 0.5, consistent_responses: false, ..Default::default() });
        let x = [9.0, 9.0];
        let answers: Vec<_> = (0..50).map(|_| g.respond(&x).unwrap().prediction).collect();
        assert!(answers.iter().any(|a| *a != answers[0]));
    }

    #[test]
    fn distinct_inputs_get_distinct_streams() {
        let cfg = DefenseConfig::default();
        let mut a = derive_query_rng(&cfg, &[1.0, 2.0], 0);
        let mut b = derive_query_rng(&cfg, &[1.0, 2.0000000001], 0);
        assert_ne!(content_hash(&[1.0, 2.0]), content_hash(&[1.0, 2.0000000001]));
        assert_ne!(a.uniform01(), b.uniform01());
        assert_eq!(content_hash(&[0.0]), content_hash(&[-0.0]));
    }

    #[test]
    fn random_logits_are_uniform_and_confident() {
        let mut rng = RngStream::new(3, 3);
        let n = 10_000;
        let zeros = (0..n).filter(|_| argmax(&random_logits(2, &mut rng, 10.0)) == 0).count();
        assert!((zeros as f64 / n as f64 - 0.5).abs() <= 0.02);

        let confident = (0..n)
            .filter(|_| {
                let p = softmax(&random_logits(10, &mut rng, 10.0));
                p.iter().cloned().fold(0.0, f64::max) >= 0.99
            })
            .count();
        assert!(confident as f64 / n as f64 >= 0.99);

        let mut a = RngStream::new(1, 1);
        let mut b = a.clone();
        assert_eq!(random_logits(5, &mut a, 10.0), random_logits(5, &mut b, 10.0));
    }

    #[test]
    fn set_p_validates_and_applies() {
        let g = toy_gate(DefenseConfig { p: 0.0, ..Default::default() });
        assert!(matches!(g.set_p(1.5), Err(Error::OutOfRange { .. })));
        assert_eq!(g.set_p(1.0).unwrap().p, 1.0);
        assert!(g.respond(&[20.0, 20.0]).unwrap().trace().was_randomized);
        g.set_p(0.0).unwrap();
        assert!(!g.respond(&[20.0, 21.0]).unwrap().trace().was_randomized);
    }

    #[test]
    fn construction_checks() {
        let victim = Arc::new(MlpModel::zeros(&[2, 3]).unwrap());
        let uncal = OodParams::from_moments(vec![vec![0.0, 0.0]], vec![Matrix::identity(2)], 0.0).unwrap();
        let err = GateState::new(
            victim.clone(),
            Arc::new(IdentityExtractor { dim: 2 }),
            Arc::new(uncal.clone()),
            DefenseConfig::default(),
        );
        assert!(matches!(err, Err(Error::NotCalibrated)));
        let cal = Arc::new(uncal.with_threshold(1.0).unwrap());
        let bad_p = DefenseConfig { p: 2.0, ..Default::default() };
        assert!(GateState::new(victim.clone(), Arc::new(IdentityExtractor { dim: 2 }), cal.clone(), bad_p).is_err());
        let g = GateState::new(victim, Arc::new(IdentityExtractor { dim: 2 }), cal, DefenseConfig::default()).unwrap();
        assert!(matches!(g.respond(&[1.0]), Err(Error::DimensionMismatch { .. })));
    }
}
