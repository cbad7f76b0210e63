//! The desk-scale benchmark wired end to end: data, victim, auxiliary
//! extractor and calibrated detector.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::datagen::{make_mixture, make_ood_pool, split, Dataset, MixtureSpec, OodKind, Role};
use crate::error::Result;
use crate::gate::{DefenseConfig, FeatureExtractor, GateState, PenultimateExtractor};
use crate::nets::{accuracy, softmax_rows, train_classifier, MlpModel, TrainConfig};
use crate::numkit::{stream_key, RngStream};
use crate::ood::{auroc, fit, msp_score, OodParams, DEFAULT_PERCENTILE, DEFAULT_RIDGE};

const TAG_INIT: u64 = 0x696e_6974;

/// Every knob of the benchmark. Defaults are synth-10.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TestbedConfig {
    pub seed: u64,
    pub data: MixtureSpec,
    /// Share of each class held out as the victim test set.
    pub test_fraction: f64,
    pub victim_hidden: Vec<usize>,
    pub victim_train: TrainConfig,
    pub extractor_hidden: Vec<usize>,
    /// Background clusters added to the extractor's training mixture.
    pub extractor_extra_classes: usize,
    pub extractor_train: TrainConfig,
    pub ridge: f64,
    pub percentile: f64,
    /// Share of the ID training set kept aside to calibrate the threshold.
    pub calibration_fraction: f64,
}

impl Default for TestbedConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data: MixtureSpec::synth10(0),
            test_fraction: 2.0 / 7.0,
            victim_hidden: vec![64, 64],
            victim_train: TrainConfig::default(),
            extractor_hidden: vec![64, 64],
            extractor_extra_classes: 5,
            extractor_train: TrainConfig::default(),
            ridge: DEFAULT_RIDGE,
            percentile: DEFAULT_PERCENTILE,
            calibration_fraction: 0.2,
        }
    }
}

pub fn layer_dims(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut v = vec![input];
    v.extend_from_slice(hidden);
    v.push(output);
    v
}

/// ID train/test split of the benchmark mixture.
pub fn make_splits(cfg: &TestbedConfig) -> Result<(Dataset, Dataset)> {
    let all = make_mixture(&cfg.data, cfg.seed)?;
    let (train, test) = split(&all, cfg.test_fraction, cfg.seed)?;
    Ok((train, test.with_role(Role::IdTest)))
}

pub fn train_victim(cfg: &TestbedConfig, train: &Dataset) -> Result<MlpModel> {
    let mut rng = RngStream::new(cfg.seed, stream_key(TAG_INIT, &[0]));
    let init = MlpModel::new(&layer_dims(train.dim(), &cfg.victim_hidden, train.num_classes), &mut rng)?;
    Ok(train_classifier(&init, train, &cfg.victim_train)?.model)
}

/// Trains the auxiliary network on the ID training data plus background
/// clusters; only its penultimate layer is used afterwards.
pub fn train_extractor(cfg: &TestbedConfig, train: &Dataset) -> Result<PenultimateExtractor> {
    let broad = cfg.data.broadened(cfg.extractor_extra_classes, cfg.seed);
    let mut extra = broad.clone();
    let c = cfg.data.num_classes;
    extra.means = broad.means[c..].to_vec();
    extra.scales = broad.scales[c..].to_vec();
    extra.num_classes = extra.means.len();
    extra.samples_per_class = train.len() / c.max(1);
    let mut data = train.clone();
    if extra.num_classes > 0 {
        let mut bg = make_mixture(&extra, stream_key(cfg.seed, &[1]))?;
        for l in &mut bg.labels {
            *l += c;
        }
        bg.num_classes += c;
        data = data.concat(&bg)?;
    }
    let mut rng = RngStream::new(cfg.seed, stream_key(TAG_INIT, &[1]));
    let init = MlpModel::new(&layer_dims(train.dim(), &cfg.extractor_hidden, data.num_classes), &mut rng)?;
    PenultimateExtractor::new(train_classifier(&init, &data, &cfg.extractor_train)?.model)
}

/// `(fit, calibration)` parts of the ID training set. With a zero
/// calibration fraction both parts are the whole set.
pub fn calibration_split(cfg: &TestbedConfig, train: &Dataset) -> Result<(Dataset, Dataset)> {
    if cfg.calibration_fraction > 0.0 {
        split(train, cfg.calibration_fraction, stream_key(cfg.seed, &[2]))
    } else {
        Ok((train.clone(), train.clone()))
    }
}

/// Class Gaussians of the fit part, without a threshold.
pub fn fit_detector(cfg: &TestbedConfig, extractor: &dyn FeatureExtractor, train: &Dataset) -> Result<OodParams> {
    let (fit_part, _) = calibration_split(cfg, train)?;
    fit(&extractor.embed(&fit_part.inputs)?, &fit_part.labels, train.num_classes, cfg.ridge)
}

/// Sets the threshold at the configured percentile of calibration-part
/// scores.
pub fn calibrate_detector(
    cfg: &TestbedConfig,
    extractor: &dyn FeatureExtractor,
    params: &OodParams,
    train: &Dataset,
) -> Result<OodParams> {
    let (_, cal_part) = calibration_split(cfg, train)?;
    params.calibrate(&extractor.embed(&cal_part.inputs)?, cfg.percentile)
}

/// Built benchmark.
#[derive(Debug, Clone)]
pub struct Testbed {
    pub config: TestbedConfig,
    pub train: Dataset,
    pub test: Dataset,
    pub victim: Arc<MlpModel>,
    pub extractor: Arc<PenultimateExtractor>,
    pub ood: Arc<OodParams>,
    pub victim_accuracy: f64,
}

impl Testbed {
    pub fn build(config: TestbedConfig) -> Result<Self> {
        let (train, test) = make_splits(&config)?;
        let victim = train_victim(&config, &train)?;
        let extractor = train_extractor(&config, &train)?;
        let ood = fit_detector(&config, &extractor, &train)?;
        let ood = calibrate_detector(&config, &extractor, &ood, &train)?;
        Self::from_parts(config, train, test, victim, extractor, ood)
    }

    /// Assembles a testbed from already-trained pieces.
    pub fn from_parts(
        config: TestbedConfig,
        train: Dataset,
        test: Dataset,
        victim: MlpModel,
        extractor: PenultimateExtractor,
        ood: OodParams,
    ) -> Result<Self> {
        let victim_accuracy = accuracy(&victim, &test)?;
        Ok(Self {
            config,
            train,
            test,
            victim: Arc::new(victim),
            extractor: Arc::new(extractor),
            ood: Arc::new(ood),
            victim_accuracy,
        })
    }

    pub fn gate(&self, defense: DefenseConfig) -> Result<GateState> {
        GateState::new(self.victim.clone(), self.extractor.clone(), self.ood.clone(), defense)
    }

    /// Fraction of `ds` the detector flags.
    pub fn flag_rate(&self, ds: &Dataset) -> Result<f64> {
        let t = self.ood.t_distance().unwrap_or(f64::INFINITY);
        let s = self.ood.scores(&self.extractor.embed(&ds.inputs)?)?;
        Ok(s.iter().filter(|&&v| v > t).count() as f64 / s.len().max(1) as f64)
    }

    /// AUROC of the Mahalanobis score and of the MSP baseline (scored as
    /// `1 - msp`, so larger means more anomalous) for `pool` against the ID
    /// test set.
    pub fn detector_auroc(&self, pool: &Dataset) -> Result<(f64, f64)> {
        let maha = |ds: &Dataset| -> Result<Vec<f64>> { self.ood.scores(&self.extractor.embed(&ds.inputs)?) };
        let msp = |ds: &Dataset| -> Result<Vec<f64>> {
            softmax_rows(&self.victim.forward(&ds.inputs)?)
                .row_iter()
                .map(|r| msp_score(r).map(|m| 1.0 - m))
                .collect()
        };
        Ok((
            auroc(&maha(pool)?, &maha(&self.test)?)?,
            auroc(&msp(pool)?, &msp(&self.test)?)?,
        ))
    }

    pub fn ood_pool(&self, kind: OodKind, seed: u64) -> Result<Dataset> {
        make_ood_pool(&self.config.data, kind, seed)
    }

    /// Distribution-shifted mixture used as a knockoff transfer set.
    pub fn transfer_set(&self, offset: f64, per_class: usize, seed: u64) -> Result<Dataset> {
        let mut spec = self.config.data.clone();
        spec.samples_per_class = per_class;
        make_ood_pool(&spec, OodKind::ShiftedMeans { offset }, seed)
    }
}
