//! Transfer-set distillation: label surrogate samples through the oracle,
//! then fit a clone to the answers.

use super::{check_setup, new_clone, AttackConfig, CloneReport, Oracle, Responses, Tracker};
use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::nets::{loss, softmax_rows, Adam, Optimizer};
use crate::numkit::{stream_key, Matrix, RngStream};

const TAG_KNOCKOFF: u64 = 0x6b6e_6f63;

/// Queries each transfer sample at most once (in a seeded order) until the
/// budget or the set runs out, then trains for `knockoff_epochs` passes:
/// soft cross-entropy against the answered softmax, or cross-entropy
/// against answered labels. Transfer-set labels are never read.
pub fn run_knockoff(oracle: &mut Oracle, transfer: &Dataset, cfg: &AttackConfig, eval: &Dataset) -> Result<CloneReport> {
    check_setup(oracle, cfg, eval)?;
    if transfer.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if transfer.dim() != oracle.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: oracle.input_dim(),
            got: transfer.dim(),
        });
    }
    let (d, c) = (oracle.input_dim(), oracle.num_classes());
    let mut rng = RngStream::new(cfg.seed, stream_key(TAG_KNOCKOFF, &[0]));
    let mut clone = new_clone(cfg, d, c, &mut rng)?;
    let cap = cfg.budget.min(oracle.budget());

    let mut order: Vec<usize> = (0..transfer.len()).collect();
    rng.shuffle(&mut order);
    order.truncate(cap.saturating_sub(oracle.used()).min(order.len() as u64) as usize);
    let x = transfer.inputs.select_rows(&order);

    let n = order.len();
    let mut soft = Vec::new();
    let mut hard = Vec::new();
    for start in (0..n).step_by(cfg.batch_size) {
        let rows: Vec<usize> = (start..n.min(start + cfg.batch_size)).collect();
        match oracle.query(&x.select_rows(&rows))? {
            Responses::Logits(l) => soft.extend_from_slice(softmax_rows(&l).as_slice()),
            Responses::Labels(l) => hard.extend(l),
        }
    }
    let soft = (!soft.is_empty()).then(|| Matrix::new(n, c, soft)).transpose()?;

    let tracker = Tracker::new(eval, cap, cfg.checkpoints);
    let mut opt = Adam::new(cfg.clone_lr);
    let mut idx: Vec<usize> = (0..n).collect();
    for epoch in 0..cfg.knockoff_epochs {
        rng.shuffle(&mut idx);
        for b in idx.chunks(cfg.batch_size) {
            let xb = x.select_rows(b);
            let trace = clone.forward_trace(&xb)?;
            let (l, grad) = match &soft {
                Some(t) => loss::soft_cross_entropy(trace.output(), &t.select_rows(b))?,
                None => {
                    let yb: Vec<usize> = b.iter().map(|&i| hard[i]).collect();
                    loss::cross_entropy(trace.output(), &yb)?
                }
            };
            if !l.is_finite() {
                return Err(Error::Diverged { epoch, loss: l });
            }
            let g = clone.backward_from(&trace, &grad)?;
            opt.step(&mut clone, &g);
        }
        if !clone.is_finite() {
            return Err(Error::Diverged { epoch, loss: f64::NAN });
        }
    }
    let used = oracle.used();
    tracker.finish(cfg, used, clone, None)
}
