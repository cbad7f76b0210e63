//! Data-free extraction with a zeroth-order generator gradient.

use super::{check_setup, clone_step, new_clone, AttackConfig, CloneReport, Oracle, Responses, Tracker};
use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::gate::LabelMode;
use crate::nets::{loss, Adam, GeneratorModel, Optimizer};
use crate::numkit::{stream_key, Matrix, RngStream};

const TAG_DFME: u64 = 0x6466_6d65;

/// Alternates generator steps (maximize clone/oracle L1 disagreement, with
/// its input gradient estimated by forward differences that each cost a
/// query) and clone steps (minimize it). Stops when the budget runs out.
pub fn run_dfme(oracle: &mut Oracle, cfg: &AttackConfig, eval: &Dataset) -> Result<CloneReport> {
    check_setup(oracle, cfg, eval)?;
    if oracle.label_mode() != LabelMode::Soft {
        return Err(Error::Config("dfme needs soft labels".into()));
    }
    let (d, c) = (oracle.input_dim(), oracle.num_classes());
    let mut init = RngStream::new(cfg.seed, stream_key(TAG_DFME, &[0]));
    let mut clone = new_clone(cfg, d, c, &mut init)?;
    let bounds = vec![(-cfg.input_half_width, cfg.input_half_width); d];
    let mut gen = GeneratorModel::new(cfg.noise_dim, &cfg.generator_hidden, &bounds, &mut init)?;
    let mut noise = RngStream::new(cfg.seed, stream_key(TAG_DFME, &[1]));
    let mut probes = RngStream::new(cfg.seed, stream_key(TAG_DFME, &[2]));
    let mut clone_opt = Adam::new(cfg.clone_lr);
    let mut gen_opt = Adam::new(cfg.generator_lr);
    let mut tracker = Tracker::new(eval, cfg.budget.min(oracle.budget()), cfg.checkpoints);
    let cap = cfg.budget.min(oracle.budget());
    let per_sample = cfg.zo_dirs as u64 + 1;

    let mut round = 0;
    'rounds: loop {
        for _ in 0..cfg.generator_steps {
            let left = cap.saturating_sub(oracle.used());
            let n = (cfg.batch_size as u64).min(left / per_sample) as usize;
            if n == 0 {
                break 'rounds;
            }
            let z = gen.sample_noise(n, &mut noise);
            let trace = gen.generate_trace(&z)?;
            let x = &trace.output;
            let base = disagreement(oracle, &clone, x)?;
            let mut grad_x = Matrix::zeros(n, d);
            let scale = d as f64 / (cfg.zo_dirs as f64 * cfg.zo_step);
            for _ in 0..cfg.zo_dirs {
                let dirs: Vec<Vec<f64>> = (0..n).map(|_| probes.unit_vector(d)).collect();
                let mut xp = x.clone();
                for (i, u) in dirs.iter().enumerate() {
                    for (v, ui) in xp.row_mut(i).iter_mut().zip(u) {
                        *v += cfg.zo_step * ui;
                    }
                }
                let shifted = disagreement(oracle, &clone, &xp)?;
                for (i, u) in dirs.iter().enumerate() {
                    let coef = scale * (shifted[i] - base[i]);
                    for (g, ui) in grad_x.row_mut(i).iter_mut().zip(u) {
                        *g += coef * ui;
                    }
                }
            }
            // ascend the disagreement: descend its negation, averaged over the batch
            let up = grad_x.scaled(-1.0 / n as f64);
            if !up.is_finite() {
                return Err(Error::Diverged { epoch: round, loss: f64::NAN });
            }
            let g = gen.backward(&trace, &up)?;
            gen_opt.step(&mut gen.net, &g);
            if !gen.net.is_finite() {
                return Err(Error::Diverged { epoch: round, loss: f64::NAN });
            }
            tracker.observe(oracle.used(), &clone)?;
        }
        for _ in 0..cfg.clone_steps {
            let n = (cfg.batch_size as u64).min(cap.saturating_sub(oracle.used())) as usize;
            if n == 0 {
                break 'rounds;
            }
            let x = gen.generate(&gen.sample_noise(n, &mut noise))?;
            let y = oracle.query(&x)?;
            clone_step(&mut clone, &mut clone_opt, &x, &y, round)?;
            tracker.observe(oracle.used(), &clone)?;
        }
        round += 1;
    }
    let used = oracle.used();
    tracker.finish(cfg, used, clone, None)
}

/// Per-sample L1 distance between clone and oracle logits at `x`.
fn disagreement(oracle: &mut Oracle, clone: &crate::nets::MlpModel, x: &Matrix) -> Result<Vec<f64>> {
    let Responses::Logits(y) = oracle.query(x)? else {
        return Err(Error::Config("dfme needs soft labels".into()));
    };
    Ok(loss::l1_per_row(&clone.forward(x)?, &y))
}
