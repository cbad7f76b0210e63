//! Dual-clone data-free extraction: the generator hunts for inputs where
//! the two clones disagree, pushed toward class diversity.

use std::collections::VecDeque;

use super::{check_setup, clone_step, mean_entropy, new_clone, AttackConfig, CloneReport, Oracle, Tracker};
use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::nets::{softmax_rows, Adam, ForwardTrace, GeneratorModel, MlpModel, Optimizer};
use crate::numkit::{stream_key, Matrix, RngStream};

const TAG_DISGUIDE: u64 = 0x6467_6964;
const ENTROPY_WINDOW: usize = 10;

/// Generator objective, minimized: `-L_D + λ·L_div`, where `L_D` is the
/// mean absolute difference of the clones' softmax outputs and `L_div`
/// is the negative entropy of the batch-mean prediction (so lowering it
/// spreads the batch over more classes). Clones fit oracle answers with
/// L1 on logits (soft) or cross-entropy (hard). The report carries clone 1.
pub fn run_disguide(oracle: &mut Oracle, cfg: &AttackConfig, eval: &Dataset) -> Result<CloneReport> {
    check_setup(oracle, cfg, eval)?;
    let (d, c) = (oracle.input_dim(), oracle.num_classes());
    let mut init = RngStream::new(cfg.seed, stream_key(TAG_DISGUIDE, &[0]));
    let mut clones = [new_clone(cfg, d, c, &mut init)?, new_clone(cfg, d, c, &mut init)?];
    let bounds = vec![(-cfg.input_half_width, cfg.input_half_width); d];
    let mut gen = GeneratorModel::new(cfg.noise_dim, &cfg.generator_hidden, &bounds, &mut init)?;
    let mut noise = RngStream::new(cfg.seed, stream_key(TAG_DISGUIDE, &[1]));
    let mut clone_opts = [Adam::new(cfg.clone_lr), Adam::new(cfg.clone_lr)];
    let mut gen_opt = Adam::new(cfg.generator_lr);
    let cap = cfg.budget.min(oracle.budget());
    let mut tracker = Tracker::new(eval, cap, cfg.checkpoints);
    let mut entropies = VecDeque::with_capacity(ENTROPY_WINDOW);

    let mut round = 0;
    'rounds: loop {
        if oracle.used() >= cap {
            break;
        }
        for _ in 0..cfg.generator_steps {
            let z = gen.sample_noise(cfg.batch_size, &mut noise);
            let trace = gen.generate_trace(&z)?;
            let (grad_x, entropy) = generator_signal(&clones, &trace.output, cfg.diversity_weight)?;
            if entropies.len() == ENTROPY_WINDOW {
                entropies.pop_front();
            }
            entropies.push_back(entropy);
            let g = gen.backward(&trace, &grad_x)?;
            gen_opt.step(&mut gen.net, &g);
            if !gen.net.is_finite() {
                return Err(Error::Diverged { epoch: round, loss: f64::NAN });
            }
        }
        for _ in 0..cfg.clone_steps {
            let n = (cfg.batch_size as u64).min(cap.saturating_sub(oracle.used())) as usize;
            if n == 0 {
                break 'rounds;
            }
            let x = gen.generate(&gen.sample_noise(n, &mut noise))?;
            let y = oracle.query(&x)?;
            for (clone, opt) in clones.iter_mut().zip(&mut clone_opts) {
                clone_step(clone, opt, &x, &y, round)?;
            }
            tracker.observe(oracle.used(), &clones[0])?;
        }
        round += 1;
    }
    let entropy = (!entropies.is_empty()).then(|| entropies.iter().sum::<f64>() / entropies.len() as f64);
    let used = oracle.used();
    let [first, _] = clones;
    tracker.finish(cfg, used, first, entropy)
}

/// Gradient of the generator objective with respect to the generated
/// batch, and the entropy of the batch-mean prediction.
fn generator_signal(clones: &[MlpModel; 2], x: &Matrix, lambda: f64) -> Result<(Matrix, f64)> {
    let (n, c) = (x.rows(), clones[0].output_dim());
    let traces: Vec<ForwardTrace> = clones.iter().map(|m| m.forward_trace(x)).collect::<Result<_>>()?;
    let probs: Vec<Matrix> = traces.iter().map(|t| softmax_rows(t.output())).collect();

    let mut both = probs[0].clone();
    for (a, b) in both.as_mut_slice().iter_mut().zip(probs[1].as_slice()) {
        *a = 0.5 * (*a + b);
    }
    let entropy = mean_entropy(&both);
    // ∂L_div/∂p̄_k = ln p̄_k + 1 and p̄ = Σ_i (p1_i + p2_i) / 2n
    let mut mean = vec![0.0; c];
    for r in both.row_iter() {
        for (m, p) in mean.iter_mut().zip(r) {
            *m += p / n as f64;
        }
    }
    let div_grad: Vec<f64> = mean
        .iter()
        .map(|p| lambda * (p.max(1e-300).ln() + 1.0) / (2.0 * n as f64))
        .collect();

    let count = (n * c) as f64;
    let mut grad_x = Matrix::zeros(n, x.cols());
    for (which, (trace, p)) in traces.iter().zip(&probs).enumerate() {
        let other = &probs[1 - which];
        let mut up = Vec::with_capacity(n * c);
        for i in 0..n {
            let (pi, qi) = (p.row(i), other.row(i));
            // objective gradient with respect to this clone's probabilities
            let g: Vec<f64> = (0..c)
                .map(|k| -sign(pi[k] - qi[k]) / count + div_grad[k])
                .collect();
            let inner: f64 = g.iter().zip(pi).map(|(a, b)| a * b).sum();
            up.extend((0..c).map(|k| pi[k] * (g[k] - inner)));
        }
        let back = clones[which].backward_from(trace, &Matrix::new(n, c, up)?)?;
        for (a, b) in grad_x.as_mut_slice().iter_mut().zip(back.input.as_slice()) {
            *a += b;
        }
    }
    Ok((grad_x, entropy))
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attack::AttackMethod;
    use crate::datagen::{make_mixture, MixtureSpec, Role};
    use crate::gate::LabelMode;
    use std::sync::Arc;

    fn objective(clones: &[MlpModel; 2], x: &Matrix, lambda: f64) -> f64 {
        let p1 = softmax_rows(&clones[0].forward(x).unwrap());
        let p2 = softmax_rows(&clones[1].forward(x).unwrap());
        let ld = p1.as_slice().iter().zip(p2.as_slice()).map(|(a, b)| (a - b).abs()).sum::<f64>()
            / (x.rows() * p1.cols()) as f64;
        let mut both = p1.clone();
        for (a, b) in both.as_mut_slice().iter_mut().zip(p2.as_slice()) {
            *a = 0.5 * (*a + b);
        }
        -ld - lambda * mean_entropy(&both)
    }

    #[test]
    fn signal_matches_finite_differences() {
        let mut rng = RngStream::new(5, 5);
        let clones = [
            MlpModel::new(&[3, 6, 4], &mut rng).unwrap(),
            MlpModel::new(&[3, 6, 4], &mut rng).unwrap(),
        ];
        let x = Matrix::new(5, 3, rng.gaussian_vec(15)).unwrap();
        let (g, _) = generator_signal(&clones, &x, 0.7).unwrap();
        let h = 1e-6;
        for i in 0..x.as_slice().len() {
            let mut a = x.clone();
            let mut b = x.clone();
            a.as_mut_slice()[i] += h;
            b.as_mut_slice()[i] -= h;
            let num = (objective(&clones, &a, 0.7) - objective(&clones, &b, 0.7)) / (2.0 * h);
            let got = g.as_slice()[i];
            assert!((num - got).abs() <= 1e-6 * (1.0 + num.abs()), "{i}: {num} vs {got}");
        }
    }

    fn setup() -> (Arc<MlpModel>, Dataset) {
        let victim = Arc::new(MlpModel::new(&[6, 16, 3], &mut RngStream::new(2, 2)).unwrap());
        let spec = MixtureSpec::on_sphere(3, 6, 3.0, 1.0, 40, 6.0, 1);
        (victim, make_mixture(&spec, 1).unwrap().with_role(Role::IdTest))
    }

    fn cfg(budget: u64, mode: LabelMode) -> AttackConfig {
        AttackConfig {
            method: AttackMethod::Disguide,
            label_mode: mode,
            budget,
            batch_size: 32,
            noise_dim: 4,
            generator_hidden: vec![8],
            clone_hidden: vec![8],
            ..Default::default()
        }
    }

    #[test]
    fn hard_mode_spends_one_query_per_sample() {
        let (v, eval) = setup();
        for budget in [1, 31, 32, 33, 500, 1000] {
            let mut o = Oracle::undefended(v.clone(), LabelMode::Hard, budget);
            let r = run_disguide(&mut o, &cfg(budget, LabelMode::Hard), &eval).unwrap();
            // no probes, so the budget is spent exactly
            assert_eq!(r.summary.queries_used, budget);
            assert!(r.summary.final_batch_entropy.is_some());
        }
    }

    #[test]
    fn deterministic() {
        let (v, eval) = setup();
        let run = || {
            let mut o = Oracle::undefended(v.clone(), LabelMode::Soft, 1500);
            run_disguide(&mut o, &cfg(1500, LabelMode::Soft), &eval).unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.summary, b.summary);
        assert_eq!(a.clone, b.clone);
    }
}
