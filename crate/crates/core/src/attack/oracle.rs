use std::sync::Arc;

use crate::error::{Error, Result};
use crate::gate::{Classifier, GateState, LabelMode, Prediction};
use crate::nets::argmax;
use crate::numkit::Matrix;

enum Target {
    Gate(Arc<GateState>),
    Victim(Arc<dyn Classifier>),
}

/// Oracle answers as the attacker sees them.
#[derive(Debug, Clone, PartialEq)]
pub enum Responses {
    Logits(Matrix),
    Labels(Vec<usize>),
}

impl Responses {
    pub fn len(&self) -> usize {
        match self {
            Responses::Logits(m) => m.rows(),
            Responses::Labels(l) => l.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn labels(&self) -> Vec<usize> {
        match self {
            Responses::Logits(m) => m.row_iter().map(argmax).collect(),
            Responses::Labels(l) => l.clone(),
        }
    }
}

/// The only door the attackers get: a query budget in front of either the
/// defended gate or the bare victim.
pub struct Oracle {
    target: Target,
    label_mode: LabelMode,
    budget: u64,
    used: u64,
}

impl std::fmt::Debug for Oracle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Oracle")
            .field("defended", &matches!(self.target, Target::Gate(_)))
            .field("label_mode", &self.label_mode)
            .field("budget", &self.budget)
            .field("used", &self.used)
            .finish()
    }
}

impl Oracle {
    /// Answers through the gate; the label mode is the gate's.
    pub fn defended(gate: Arc<GateState>, budget: u64) -> Self {
        let label_mode = gate.config().label_mode;
        Self {
            target: Target::Gate(gate),
            label_mode,
            budget,
            used: 0,
        }
    }

    pub fn undefended(victim: Arc<dyn Classifier>, label_mode: LabelMode, budget: u64) -> Self {
        Self {
            target: Target::Victim(victim),
            label_mode,
            budget,
            used: 0,
        }
    }

    pub fn label_mode(&self) -> LabelMode {
        self.label_mode
    }

    pub fn budget(&self) -> u64 {
        self.budget
    }

    pub fn used(&self) -> u64 {
        self.used
    }

    pub fn remaining(&self) -> u64 {
        self.budget - self.used
    }

    pub fn input_dim(&self) -> usize {
        match &self.target {
            Target::Gate(g) => g.input_dim(),
            Target::Victim(v) => v.input_dim(),
        }
    }

    pub fn num_classes(&self) -> usize {
        match &self.target {
            Target::Gate(g) => g.num_classes(),
            Target::Victim(v) => v.num_classes(),
        }
    }

    /// Spends `batch.rows()` queries. Refuses, without spending anything,
    /// when the batch does not fit in the remaining budget.
    pub fn query(&mut self, batch: &Matrix) -> Result<Responses> {
        let n = batch.rows() as u64;
        if n > self.remaining() {
            return Err(Error::BudgetExhausted {
                used: self.used,
                budget: self.budget,
                requested: n,
            });
        }
        let out = match &self.target {
            Target::Gate(g) => {
                let rs = g.respond_batch(batch)?;
                match self.label_mode {
                    LabelMode::Hard => Responses::Labels(rs.iter().map(|r| r.prediction.label()).collect()),
                    LabelMode::Soft => {
                        let c = g.num_classes();
                        let mut data = Vec::with_capacity(rs.len() * c);
                        for r in rs {
                            match r.prediction {
                                Prediction::Logits(l) => data.extend(l),
                                Prediction::Label(_) => unreachable!("gate mode fixed at construction"),
                            }
                        }
                        Responses::Logits(Matrix::new(batch.rows(), c, data)?)
                    }
                }
            }
            Target::Victim(v) => {
                let logits = v.logits(batch)?;
                match self.label_mode {
                    LabelMode::Soft => Responses::Logits(logits),
                    LabelMode::Hard => Responses::Labels(logits.row_iter().map(argmax).collect()),
                }
            }
        };
        self.used += n;
        Ok(out)
    }
}
