//! Subcommand bodies. Each reads its inputs from the run directory, writes
//! its artifacts atomically and records them in the manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use oodgate::attack::{run_attack, Oracle};
use oodgate::datagen::{load_table, save_table, Dataset, Role};
use oodgate::evalkit::{
    benign_floor_violations, calibrate_detector, emit_report, fit_detector, make_splits, parse_report, spearman,
    sweep_p, train_extractor, train_victim, ReportFormat, SweepRow, Testbed,
};
use oodgate::gate::{DefenseConfig, FeatureExtractor, GateState, PenultimateExtractor};
use oodgate::io::write_atomic;
use oodgate::nets::{accuracy, MlpModel};
use oodgate::numkit::stream_key;
use oodgate::ood::OodParams;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::log;

pub const TRAIN: &str = "train.csv";
pub const TEST: &str = "test.csv";
pub const VICTIM: &str = "victim.json";
pub const EXTRACTOR: &str = "extractor.json";
pub const OOD_FIT: &str = "ood_fit.json";
pub const OOD: &str = "ood.json";
pub const ATTACK: &str = "attack.json";
pub const CLONE: &str = "clone.json";
pub const SWEEP_CSV: &str = "sweep.csv";
pub const SWEEP_JSON: &str = "sweep.json";
pub const REPORT: &str = "report.md";
pub const MANIFEST: &str = "manifest.json";
pub const CONFIG: &str = "config.json";

const TRANSFER_STREAM: u64 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub config_hash: String,
    pub artifacts: BTreeMap<String, ArtifactEntry>,
}

fn hex_sha256(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// One run directory plus the config that produced it.
#[derive(Debug, Clone)]
pub struct Run {
    pub dir: PathBuf,
    pub config: RunConfig,
}

impl Run {
    pub fn new(dir: impl Into<PathBuf>, config: RunConfig) -> Result<Self, CliError> {
        config.validate()?;
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self { dir, config })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn require(&self, name: &str) -> Result<PathBuf, CliError> {
        let p = self.path(name);
        if p.is_file() {
            Ok(p)
        } else {
            Err(CliError::MissingArtifact(p))
        }
    }

    /// Records `produced` (and the effective config) in the manifest. A
    /// manifest from a different config is started afresh.
    fn record(&self, produced: &[&str]) -> Result<(), CliError> {
        let hash = self.config.hash();
        let cfg_bytes = self.config.to_json();
        write_atomic(self.path(CONFIG), cfg_bytes.as_bytes())?;
        let mut manifest = fs::read(self.path(MANIFEST))
            .ok()
            .and_then(|b| serde_json::from_slice::<Manifest>(&b).ok())
            .filter(|m| m.config_hash == hash)
            .unwrap_or_else(|| Manifest {
                tool: "oodgate".into(),
                version: env!("CARGO_PKG_VERSION").into(),
                config_hash: hash,
                artifacts: BTreeMap::new(),
            });
        for name in produced.iter().copied().chain([CONFIG]) {
            let bytes = fs::read(self.path(name))?;
            manifest.artifacts.insert(
                name.to_string(),
                ArtifactEntry {
                    sha256: hex_sha256(&bytes),
                    bytes: bytes.len() as u64,
                },
            );
        }
        let mut out = serde_json::to_vec_pretty(&manifest).map_err(oodgate::Error::from)?;
        out.push(b'\n');
        write_atomic(self.path(MANIFEST), &out)?;
        Ok(())
    }

    fn load_dataset(&self, name: &str, role: Role) -> Result<Dataset, CliError> {
        let mut ds = load_table(self.require(name)?, role)?;
        // labels may not cover every class in a tiny table
        ds.num_classes = ds.num_classes.max(self.config.data.mixture.num_classes);
        Ok(ds)
    }

    fn load_extractor(&self) -> Result<PenultimateExtractor, CliError> {
        Ok(PenultimateExtractor::new(MlpModel::load(self.require(EXTRACTOR)?)?)?)
    }

    pub fn gen_data(&self) -> Result<(), CliError> {
        let (train, test) = make_splits(&self.config.testbed())?;
        save_table(&train, self.path(TRAIN))?;
        save_table(&test, self.path(TEST))?;
        log::info("gen_data", &[("train", &train.len()), ("test", &test.len()), ("dim", &train.dim())]);
        self.record(&[TRAIN, TEST])
    }

    pub fn train_victim(&self) -> Result<(), CliError> {
        let train = self.load_dataset(TRAIN, Role::IdTrain)?;
        let test = self.load_dataset(TEST, Role::IdTest)?;
        let victim = train_victim(&self.config.testbed(), &train)?;
        victim.save(self.path(VICTIM))?;
        log::info("train_victim", &[("test_accuracy", &accuracy(&victim, &test)?)]);
        self.record(&[VICTIM])
    }

    pub fn train_extractor(&self) -> Result<(), CliError> {
        let train = self.load_dataset(TRAIN, Role::IdTrain)?;
        let ex = train_extractor(&self.config.testbed(), &train)?;
        ex.model().save(self.path(EXTRACTOR))?;
        log::info("train_extractor", &[("embedding_dim", &ex.embedding_dim())]);
        self.record(&[EXTRACTOR])
    }

    pub fn fit_ood(&self) -> Result<(), CliError> {
        let ex = self.load_extractor()?;
        let train = self.load_dataset(TRAIN, Role::IdTrain)?;
        let params = fit_detector(&self.config.testbed(), &ex, &train)?;
        params.save(self.path(OOD_FIT))?;
        log::info("fit_ood", &[("classes", &params.num_classes()), ("embedding_dim", &params.dim())]);
        self.record(&[OOD_FIT])
    }

    pub fn calibrate(&self) -> Result<(), CliError> {
        let ex = self.load_extractor()?;
        let fitted = OodParams::load(self.require(OOD_FIT)?)?;
        let train = self.load_dataset(TRAIN, Role::IdTrain)?;
        let test = self.load_dataset(TEST, Role::IdTest)?;
        let params = calibrate_detector(&self.config.testbed(), &ex, &fitted, &train)?;
        params.save(self.path(OOD))?;
        let t = params.t_distance().unwrap_or(f64::NAN);
        let scores = params.scores(&ex.embed(&test.inputs)?)?;
        let fpr = scores.iter().filter(|&&s| s > t).count() as f64 / scores.len().max(1) as f64;
        log::info("calibrate", &[("t_distance", &t), ("test_fpr", &fpr)]);
        self.record(&[OOD])
    }

    pub fn testbed(&self) -> Result<Testbed, CliError> {
        Ok(Testbed::from_parts(
            self.config.testbed(),
            self.load_dataset(TRAIN, Role::IdTrain)?,
            self.load_dataset(TEST, Role::IdTest)?,
            MlpModel::load(self.require(VICTIM)?)?,
            self.load_extractor()?,
            OodParams::load(self.require(OOD)?)?,
        )?)
    }

    /// The defended gate alone (what the server needs).
    pub fn gate(&self, defense: DefenseConfig) -> Result<GateState, CliError> {
        Ok(GateState::new(
            Arc::new(MlpModel::load(self.require(VICTIM)?)?),
            Arc::new(self.load_extractor()?),
            Arc::new(OodParams::load(self.require(OOD)?)?),
            defense,
        )?)
    }

    /// The attacker's own transfer data, regenerated from the config.
    pub fn transfer_set(&self, bed: &Testbed) -> Result<Dataset, CliError> {
        Ok(bed.transfer_set(
            self.config.data.transfer_offset,
            self.config.data.transfer_per_class,
            stream_key(self.config.seed, &[TRANSFER_STREAM]),
        )?)
    }

    pub fn attack(&self) -> Result<(), CliError> {
        let bed = self.testbed()?;
        let cfg = &self.config.attack;
        let defense = DefenseConfig {
            label_mode: cfg.label_mode,
            ..self.config.defense.clone()
        };
        let transfer = self.transfer_set(&bed)?;
        let mut oracle = Oracle::defended(Arc::new(bed.gate(defense)?), cfg.budget);
        let report = run_attack(&mut oracle, cfg, Some(&transfer), &bed.test)?;
        write_atomic(self.path(ATTACK), format!("{}\n", report.to_json()?).as_bytes())?;
        report.clone.save(self.path(CLONE))?;
        log::info(
            "attack",
            &[
                ("method", &cfg.method),
                ("mode", &cfg.label_mode),
                ("p", &self.config.defense.p),
                ("queries", &report.summary.queries_used),
                ("clone_accuracy", &report.summary.final_accuracy),
                ("victim_accuracy", &bed.victim_accuracy),
            ],
        );
        self.record(&[ATTACK, CLONE])
    }

    pub fn sweep(&self) -> Result<Vec<SweepRow>, CliError> {
        let bed = self.testbed()?;
        let transfer = self.transfer_set(&bed)?;
        let mut rows = Vec::new();
        for &a in &self.config.sweep.attackers {
            let cfg = self.config.attack_for(a);
            let out = sweep_p(
                &bed,
                &self.config.sweep.p_values,
                &cfg,
                &self.config.defense,
                &self.config.sweep.seeds,
                Some(&transfer),
            )?;
            for w in &out.warnings {
                log::warn("sweep", &[("msg", w)]);
            }
            for r in &out.rows {
                log::info(
                    "sweep_row",
                    &[
                        ("method", &r.method),
                        ("mode", &r.mode),
                        ("p", &r.p),
                        ("clone_mean", &r.clone_mean),
                        ("benign_mean", &r.benign_mean),
                    ],
                );
            }
            rows.extend(out.rows);
        }
        for v in benign_floor_violations(&rows, bed.victim_accuracy, self.config.sweep.benign_floor_ratio) {
            log::warn("benign_floor", &[("msg", &v)]);
        }
        emit_report(&rows, self.path(SWEEP_CSV), ReportFormat::Csv)?;
        emit_report(&rows, self.path(SWEEP_JSON), ReportFormat::Json)?;
        self.record(&[SWEEP_CSV, SWEEP_JSON])?;
        Ok(rows)
    }

    /// Markdown summary of the sweep, also printed to stdout.
    pub fn report(&self) -> Result<String, CliError> {
        let rows = parse_report(&fs::read(self.require(SWEEP_JSON)?)?, ReportFormat::Json)?;
        let text = render_markdown(&rows);
        write_atomic(self.path(REPORT), text.as_bytes())?;
        self.record(&[REPORT])?;
        Ok(text)
    }
}

pub fn render_markdown(rows: &[SweepRow]) -> String {
    let mut s = String::from("| attacker | mode | p | clone acc | benign acc | queries |\n|---|---|---|---|---|---|\n");
    for r in rows {
        s.push_str(&format!(
            "| {} | {} | {} | {:.4} ± {:.4} | {:.4} ± {:.4} | {} |\n",
            r.method, r.mode, r.p, r.clone_mean, r.clone_std, r.benign_mean, r.benign_std, r.queries
        ));
    }
    s.push('\n');
    let mut keys: Vec<(String, String)> = rows.iter().map(|r| (r.method.to_string(), r.mode.to_string())).collect();
    keys.dedup();
    for (m, mode) in keys {
        let sel: Vec<&SweepRow> = rows
            .iter()
            .filter(|r| r.method.to_string() == m && r.mode.to_string() == mode)
            .collect();
        let ps: Vec<f64> = sel.iter().map(|r| r.p).collect();
        let cs: Vec<f64> = sel.iter().map(|r| r.clone_mean).collect();
        match spearman(&ps, &cs) {
            Some(rho) => s.push_str(&format!("- {m} {mode}: Spearman(p, clone) = {rho:.3}\n")),
            None => s.push_str(&format!("- {m} {mode}: Spearman(p, clone) undefined\n")),
        }
    }
    s
}

/// Runs every artifact-producing step in order.
pub fn run_all(run: &Run) -> Result<Vec<SweepRow>, CliError> {
    run.gen_data()?;
    run.train_victim()?;
    run.train_extractor()?;
    run.fit_ood()?;
    run.calibrate()?;
    run.sweep()
}

pub fn read_config(path: Option<&Path>) -> Result<RunConfig, CliError> {
    match path {
        None => Ok(RunConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|_| CliError::MissingArtifact(p.to_path_buf()))?;
            RunConfig::from_json(&text)
        }
    }
}
