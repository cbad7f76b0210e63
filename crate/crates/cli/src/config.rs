use std::net::SocketAddr;

use oodgate::attack::{AttackConfig, AttackMethod};
use oodgate::datagen::MixtureSpec;
use oodgate::evalkit::TestbedConfig;
use oodgate::gate::{DefenseConfig, LabelMode};
use oodgate::nets::TrainConfig;
use oodgate::ood::{DEFAULT_PERCENTILE, DEFAULT_RIDGE};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub mixture: MixtureSpec,
    pub test_fraction: f64,
    /// Knockoff transfer set: shifted-means mixture, `offset` class
    /// standard deviations along every coordinate.
    pub transfer_offset: f64,
    pub transfer_per_class: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            mixture: MixtureSpec::synth10(0),
            test_fraction: 2.0 / 7.0,
            transfer_offset: 2.0,
            transfer_per_class: 20_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub hidden: Vec<usize>,
    pub train: TrainConfig,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExtractorSection {
    pub hidden: Vec<usize>,
    pub extra_classes: usize,
    pub train: TrainConfig,
}

impl Default for ExtractorSection {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            extra_classes: 5,
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OodSection {
    pub ridge: f64,
    pub percentile: f64,
    pub calibration_fraction: f64,
}

impl Default for OodSection {
    fn default() -> Self {
        Self {
            ridge: DEFAULT_RIDGE,
            percentile: DEFAULT_PERCENTILE,
            calibration_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackerSpec {
    pub method: AttackMethod,
    pub label_mode: LabelMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub p_values: Vec<f64>,
    pub seeds: Vec<u64>,
    pub attackers: Vec<AttackerSpec>,
    /// Benign-accuracy floor `T` as a share of victim accuracy.
    pub benign_floor_ratio: f64,
}

impl Default for SweepSection {
    fn default() -> Self {
        let a = |method, label_mode| AttackerSpec { method, label_mode };
        Self {
            p_values: vec![0.0, 0.3, 0.5, 0.7, 1.0],
            seeds: vec![0, 1, 2],
            attackers: vec![
                a(AttackMethod::Dfme, LabelMode::Soft),
                a(AttackMethod::Disguide, LabelMode::Soft),
                a(AttackMethod::Disguide, LabelMode::Hard),
                a(AttackMethod::Knockoff, LabelMode::Soft),
            ],
            benign_floor_ratio: oodgate::evalkit::BENIGN_FLOOR_RATIO,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServeSection {
    pub bind: String,
    /// Admin endpoints answer 401 to everyone when unset.
    pub admin_token: Option<String>,
    pub single_worker: bool,
}

impl Default for ServeSection {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8080".into(),
            admin_token: None,
            single_worker: false,
        }
    }
}

/// The whole run, one JSON document.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataSection,
    pub victim: ModelSection,
    pub extractor: ExtractorSection,
    pub ood: OodSection,
    pub defense: DefenseConfig,
    pub attack: AttackConfig,
    pub sweep: SweepSection,
    pub serve: ServeSection,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| CliError::ConfigInvalid(vec![e.to_string()]))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config always serializes");
        s.push('\n');
        s
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(serde_json::to_vec(self).expect("config always serializes"));
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Every violation, each prefixed with its dotted path.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if let Err(e) = self.data.mixture.validate() {
            v.push(format!("data.mixture: {e}"));
        }
        if !(self.data.test_fraction > 0.0 && self.data.test_fraction < 1.0) {
            v.push(format!("data.test_fraction: {} not in (0, 1)", self.data.test_fraction));
        }
        if !(self.data.transfer_offset.is_finite()) {
            v.push("data.transfer_offset: must be finite".into());
        }
        if self.data.transfer_per_class == 0 {
            v.push("data.transfer_per_class: must be positive".into());
        }
        for (name, hidden, train) in [
            ("victim", &self.victim.hidden, &self.victim.train),
            ("extractor", &self.extractor.hidden, &self.extractor.train),
        ] {
            if let Err(e) = train.validate() {
                v.push(format!("{name}.train: {e}"));
            }
            if hidden.contains(&0) {
                v.push(format!("{name}.hidden: widths must be positive"));
            }
        }
        if self.extractor.hidden.is_empty() {
            v.push("extractor.hidden: needs at least one hidden layer".into());
        }
        if !(self.ood.ridge >= 0.0 && self.ood.ridge.is_finite()) {
            v.push(format!("ood.ridge: {} must be non-negative", self.ood.ridge));
        }
        if !(self.ood.percentile > 0.0 && self.ood.percentile <= 100.0) {
            v.push(format!("ood.percentile: {} not in (0, 100]", self.ood.percentile));
        }
        if !(self.ood.calibration_fraction >= 0.0 && self.ood.calibration_fraction < 1.0) {
            v.push(format!(
                "ood.calibration_fraction: {} not in [0, 1)",
                self.ood.calibration_fraction
            ));
        }
        if !(0.0..=1.0).contains(&self.defense.p) {
            v.push(format!("defense.p: {} not in [0, 1]", self.defense.p));
        }
        if !(self.defense.random_logit_scale > 0.0 && self.defense.random_logit_scale.is_finite()) {
            v.push(format!(
                "defense.random_logit_scale: {} must be positive",
                self.defense.random_logit_scale
            ));
        }
        v.extend(self.attack.violations().into_iter().map(|m| format!("attack: {m}")));
        if self.sweep.p_values.is_empty() {
            v.push("sweep.p_values: empty".into());
        }
        for p in &self.sweep.p_values {
            if !(0.0..=1.0).contains(p) {
                v.push(format!("sweep.p_values: {p} not in [0, 1]"));
            }
        }
        if self.sweep.seeds.is_empty() {
            v.push("sweep.seeds: empty".into());
        }
        if self.sweep.attackers.is_empty() {
            v.push("sweep.attackers: empty".into());
        }
        for a in &self.sweep.attackers {
            if a.method == AttackMethod::Dfme && a.label_mode == LabelMode::Hard {
                v.push("sweep.attackers: dfme needs soft labels".into());
            }
        }
        if !(self.sweep.benign_floor_ratio >= 0.0 && self.sweep.benign_floor_ratio <= 1.0) {
            v.push(format!(
                "sweep.benign_floor_ratio: {} not in [0, 1]",
                self.sweep.benign_floor_ratio
            ));
        }
        if self.serve.bind.parse::<SocketAddr>().is_err() {
            v.push(format!("serve.bind: {:?} is not a socket address", self.serve.bind));
        }
        v
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(CliError::ConfigInvalid(v))
        }
    }

    pub fn testbed(&self) -> TestbedConfig {
        TestbedConfig {
            seed: self.seed,
            data: self.data.mixture.clone(),
            test_fraction: self.data.test_fraction,
            victim_hidden: self.victim.hidden.clone(),
            victim_train: self.victim.train.clone(),
            extractor_hidden: self.extractor.hidden.clone(),
            extractor_extra_classes: self.extractor.extra_classes,
            extractor_train: self.extractor.train.clone(),
            ridge: self.ood.ridge,
            percentile: self.ood.percentile,
            calibration_fraction: self.ood.calibration_fraction,
        }
    }

    /// The attack section with one sweep attacker's method and mode.
    pub fn attack_for(&self, a: AttackerSpec) -> AttackConfig {
        AttackConfig {
            method: a.method,
            label_mode: a.label_mode,
            ..self.attack.clone()
        }
    }
}
