//! Black-box extraction attackers. They only ever talk to an [`Oracle`].

mod dfme;
mod disguide;
mod knockoff;
mod oracle;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use dfme::run_dfme;
pub use disguide::run_disguide;
pub use knockoff::run_knockoff;
pub use oracle::{Oracle, Responses};

use crate::datagen::{Dataset, SYNTH10_HALF_WIDTH};
use crate::error::{Error, Result};
use crate::gate::LabelMode;
use crate::nets::{accuracy, loss, Adam, MlpModel, Optimizer};
use crate::numkit::{Matrix, RngStream};

pub const REPORT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackMethod {
    Dfme,
    Disguide,
    Knockoff,
}

impl fmt::Display for AttackMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttackMethod::Dfme => "dfme",
            AttackMethod::Disguide => "disguide",
            AttackMethod::Knockoff => "knockoff",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackConfig {
    pub method: AttackMethod,
    pub label_mode: LabelMode,
    /// Total query budget `Q`, gradient probes included.
    pub budget: u64,
    pub batch_size: usize,
    pub noise_dim: usize,
    pub generator_hidden: Vec<usize>,
    pub clone_hidden: Vec<usize>,
    /// Half-width of the box the generator draws queries from.
    pub input_half_width: f64,
    /// Weight `λ` of the class-diversity term.
    pub diversity_weight: f64,
    pub generator_steps: usize,
    pub clone_steps: usize,
    pub zo_dirs: usize,
    pub zo_step: f64,
    pub clone_lr: f64,
    pub generator_lr: f64,
    /// Passes over the transfer set (knockoff only).
    pub knockoff_epochs: usize,
    /// Number of evenly spaced accuracy checkpoints.
    pub checkpoints: usize,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            method: AttackMethod::Dfme,
            label_mode: LabelMode::Soft,
            budget: 200_000,
            batch_size: 256,
            noise_dim: 32,
            generator_hidden: vec![64],
            clone_hidden: vec![32, 32],
            input_half_width: SYNTH10_HALF_WIDTH,
            diversity_weight: 1.0,
            generator_steps: 1,
            clone_steps: 5,
            zo_dirs: 1,
            zo_step: 1e-3,
            clone_lr: 1e-3,
            generator_lr: 1e-3,
            knockoff_epochs: 20,
            checkpoints: 10,
            seed: 0,
        }
    }
}

impl AttackConfig {
    /// Every violation, not just the first.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        let mut bad = |ok: bool, msg: &str| {
            if !ok {
                v.push(msg.to_string());
            }
        };
        bad(self.budget > 0, "budget must be positive");
        bad(self.batch_size > 0, "batch_size must be positive");
        bad(self.noise_dim > 0, "noise_dim must be positive");
        bad(self.clone_hidden.iter().all(|&h| h > 0), "clone_hidden widths must be positive");
        bad(self.generator_hidden.iter().all(|&h| h > 0), "generator_hidden widths must be positive");
        bad(
            self.input_half_width > 0.0 && self.input_half_width.is_finite(),
            "input_half_width must be positive",
        );
        bad(
            self.diversity_weight >= 0.0 && self.diversity_weight.is_finite(),
            "diversity_weight must be non-negative",
        );
        bad(self.generator_steps > 0, "generator_steps must be positive");
        bad(self.clone_steps > 0, "clone_steps must be positive");
        bad(self.zo_dirs > 0, "zo_dirs must be positive");
        bad(self.zo_step > 0.0 && self.zo_step.is_finite(), "zo_step must be positive");
        bad(self.clone_lr > 0.0 && self.clone_lr.is_finite(), "clone_lr must be positive");
        bad(self.generator_lr > 0.0 && self.generator_lr.is_finite(), "generator_lr must be positive");
        bad(self.knockoff_epochs > 0, "knockoff_epochs must be positive");
        bad(
            !(self.method == AttackMethod::Dfme && self.label_mode == LabelMode::Hard),
            "dfme needs soft labels",
        );
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(v.join("; ")))
        }
    }

    fn clone_dims(&self, d: usize, c: usize) -> Vec<usize> {
        let mut dims = vec![d];
        dims.extend_from_slice(&self.clone_hidden);
        dims.push(c);
        dims
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub queries: u64,
    pub accuracy: f64,
}

/// Everything about a run except the clone weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CloneSummary {
    pub format_version: u32,
    pub config: AttackConfig,
    pub queries_used: u64,
    pub final_accuracy: f64,
    pub trajectory: Vec<TrajectoryPoint>,
    /// Entropy of the batch-mean clone prediction over the last generated
    /// batches (generator attacks only).
    #[serde(default)]
    pub final_batch_entropy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct CloneReport {
    pub clone: MlpModel,
    pub summary: CloneSummary,
}

impl CloneReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.summary)?)
    }
}

/// Dispatches on `cfg.method`. `transfer` is required for knockoff.
pub fn run_attack(
    oracle: &mut Oracle,
    cfg: &AttackConfig,
    transfer: Option<&Dataset>,
    eval: &Dataset,
) -> Result<CloneReport> {
    match cfg.method {
        AttackMethod::Dfme => run_dfme(oracle, cfg, eval),
        AttackMethod::Disguide => run_disguide(oracle, cfg, eval),
        AttackMethod::Knockoff => {
            let t = transfer.ok_or_else(|| Error::Config("knockoff needs a transfer set".into()))?;
            run_knockoff(oracle, t, cfg, eval)
        }
    }
}

fn check_setup(oracle: &Oracle, cfg: &AttackConfig, eval: &Dataset) -> Result<()> {
    cfg.validate()?;
    if cfg.label_mode != oracle.label_mode() {
        return Err(Error::Config(format!(
            "attack expects {} labels but the oracle answers with {}",
            cfg.label_mode,
            oracle.label_mode()
        )));
    }
    if eval.dim() != oracle.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: oracle.input_dim(),
            got: eval.dim(),
        });
    }
    if eval.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(())
}

/// Records clone accuracy each time the spent budget crosses the next
/// checkpoint.
struct Tracker<'a> {
    eval: &'a Dataset,
    step: u64,
    next: u64,
    points: Vec<TrajectoryPoint>,
}

impl<'a> Tracker<'a> {
    fn new(eval: &'a Dataset, budget: u64, checkpoints: usize) -> Self {
        let step = (budget / checkpoints.max(1) as u64).max(1);
        Self {
            eval,
            step,
            next: step,
            points: Vec::new(),
        }
    }

    fn observe(&mut self, used: u64, clone: &MlpModel) -> Result<()> {
        if used >= self.next {
            self.record(used, clone)?;
            while self.next <= used {
                self.next += self.step;
            }
        }
        Ok(())
    }

    fn record(&mut self, used: u64, clone: &MlpModel) -> Result<()> {
        if self.points.last().is_some_and(|p| p.queries == used) {
            return Ok(());
        }
        let accuracy = accuracy(clone, self.eval)?;
        self.points.push(TrajectoryPoint { queries: used, accuracy });
        Ok(())
    }

    fn finish(mut self, cfg: &AttackConfig, used: u64, clone: MlpModel, entropy: Option<f64>) -> Result<CloneReport> {
        self.record(used, &clone)?;
        let final_accuracy = self.points.last().map_or(0.0, |p| p.accuracy);
        Ok(CloneReport {
            clone,
            summary: CloneSummary {
                format_version: REPORT_FORMAT_VERSION,
                config: cfg.clone(),
                queries_used: used,
                final_accuracy,
                trajectory: self.points,
                final_batch_entropy: entropy,
            },
        })
    }
}

/// One clone update on oracle answers: L1 on logits or cross-entropy on
/// labels. Returns the loss.
fn clone_step(clone: &mut MlpModel, opt: &mut Adam, x: &Matrix, y: &Responses, round: usize) -> Result<f64> {
    let trace = clone.forward_trace(x)?;
    let (l, grad) = match y {
        Responses::Logits(t) => loss::l1(trace.output(), t)?,
        Responses::Labels(t) => loss::cross_entropy(trace.output(), t)?,
    };
    if !l.is_finite() {
        return Err(Error::Diverged { epoch: round, loss: l });
    }
    let g = clone.backward_from(&trace, &grad)?;
    opt.step(clone, &g);
    if !clone.is_finite() {
        return Err(Error::Diverged { epoch: round, loss: l });
    }
    Ok(l)
}

/// Entropy of the mean row of a probability matrix.
fn mean_entropy(probs: &Matrix) -> f64 {
    let n = probs.rows().max(1) as f64;
    let mut mean = vec![0.0; probs.cols()];
    for r in probs.row_iter() {
        for (m, p) in mean.iter_mut().zip(r) {
            *m += p / n;
        }
    }
    -mean.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>()
}

fn new_clone(cfg: &AttackConfig, d: usize, c: usize, rng: &mut RngStream) -> Result<MlpModel> {
    MlpModel::new(&cfg.clone_dims(d, c), rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gate::{DefenseConfig, GateState, IdentityExtractor};
    use crate::ood::OodParams;
    use std::sync::Arc;

    fn victim() -> Arc<MlpModel> {
        Arc::new(MlpModel::new(&[4, 8, 3], &mut RngStream::new(1, 1)).unwrap())
    }

    #[test]
    fn budget_accounting() {
        let mut o = Oracle::undefended(victim(), LabelMode::Soft, 10);
        o.query(&Matrix::zeros(10, 4)).unwrap();
        assert_eq!(o.used(), 10);
        assert!(matches!(
            o.query(&Matrix::zeros(1, 4)),
            Err(Error::BudgetExhausted { used: 10, budget: 10, requested: 1 })
        ));
        assert_eq!(o.used(), 10);
    }

    #[test]
    fn bare_oracle_returns_victim_logits() {
        let v = victim();
        let x = Matrix::new(2, 4, (0..8).map(f64::from).collect()).unwrap();
        let mut o = Oracle::undefended(v.clone(), LabelMode::Soft, 100);
        assert_eq!(o.query(&x).unwrap(), Responses::Logits(v.forward(&x).unwrap()));
        let mut h = Oracle::undefended(v.clone(), LabelMode::Hard, 100);
        assert_eq!(h.query(&x).unwrap(), Responses::Labels(v.predict_labels(&x).unwrap()));
    }

    #[test]
    fn defended_p0_matches_bare() {
        let v = victim();
        let ood = OodParams::from_moments(vec![vec![0.0; 4]], vec![Matrix::identity(4)], 0.0)
            .unwrap()
            .with_threshold(1.0)
            .unwrap();
        let gate = GateState::new(
            v.clone(),
            Arc::new(IdentityExtractor { dim: 4 }),
            Arc::new(ood),
            DefenseConfig { p: 0.0, ..Default::default() },
        )
        .unwrap();
        let x = Matrix::new(3, 4, (0..12).map(|i| i as f64 - 4.0).collect()).unwrap();
        let mut a = Oracle::defended(Arc::new(gate), 100);
        let mut b = Oracle::undefended(v, LabelMode::Soft, 100);
        assert_eq!(a.query(&x).unwrap(), b.query(&x).unwrap());
    }

    #[test]
    fn config_violations_are_all_listed() {
        let cfg = AttackConfig {
            budget: 0,
            zo_dirs: 0,
            zo_step: 0.0,
            diversity_weight: -1.0,
            ..Default::default()
        };
        let v = cfg.violations();
        assert_eq!(v.len(), 4, "{v:?}");
        let hard_dfme = AttackConfig { label_mode: LabelMode::Hard, ..Default::default() };
        assert!(hard_dfme.validate().is_err());
    }

    #[test]
    fn config_json_round_trip() {
        let cfg = AttackConfig { method: AttackMethod::Disguide, seed: 9, ..Default::default() };
        let s = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<AttackConfig>(&s).unwrap(), cfg);
        assert!(serde_json::from_str::<AttackConfig>(r#"{"bogus": 1}"#).is_err());
    }

    #[test]
    fn entropy_of_mean() {
        let uniform = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        assert!((mean_entropy(&uniform) - 2f64.ln()).abs() < 1e-15);
        let peaked = Matrix::from_rows(&[[1.0, 0.0], [1.0, 0.0]]).unwrap();
        assert_eq!(mean_entropy(&peaked), 0.0);
    }
}
