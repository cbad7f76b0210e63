use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::metrics::{benign_accuracy, mean_std};
use super::testbed::Testbed;
use crate::attack::{run_attack, AttackConfig, AttackMethod, CloneSummary, Oracle};
use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::gate::{DefenseConfig, LabelMode};
use crate::io::write_atomic;
use crate::numkit::stream_key;

pub const SWEEP_FORMAT_VERSION: u32 = 1;

pub const CSV_HEADER: [&str; 9] = [
    "p",
    "method",
    "mode",
    "seeds",
    "clone_mean",
    "clone_std",
    "benign_mean",
    "benign_std",
    "queries",
];

/// One p value, aggregated over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub p: f64,
    pub method: AttackMethod,
    pub mode: LabelMode,
    pub seeds: Vec<u64>,
    pub clone_mean: f64,
    pub clone_std: f64,
    pub benign_mean: f64,
    pub benign_std: f64,
    /// Most queries any seed spent.
    pub queries: u64,
}

/// One (p, seed) run.
#[derive(Debug, Clone)]
pub struct SweepCell {
    pub p: f64,
    pub seed: u64,
    pub summary: CloneSummary,
    pub benign_accuracy: f64,
}

#[derive(Debug, Clone, Default)]
pub struct SweepOutcome {
    pub rows: Vec<SweepRow>,
    pub cells: Vec<SweepCell>,
    pub warnings: Vec<String>,
}

/// Sorted, deduplicated p values plus a warning per dropped duplicate.
pub fn normalize_p_values(p_values: &[f64]) -> Result<(Vec<f64>, Vec<String>)> {
    if p_values.is_empty() {
        return Err(Error::Config("no p values".into()));
    }
    for &p in p_values {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::OutOfRange { name: "p", value: p });
        }
    }
    let mut ps = p_values.to_vec();
    ps.sort_by(f64::total_cmp);
    let mut warnings = Vec::new();
    ps.dedup_by(|a, b| {
        let dup = a == b;
        if dup {
            warnings.push(format!("duplicate p value {a} ignored"));
        }
        dup
    });
    Ok((ps, warnings))
}

/// Gate config for one sweep cell: the given `p`, a per-seed master seed
/// and the attack's label mode.
pub fn cell_defense(defense: &DefenseConfig, attack: &AttackConfig, p: f64, seed: u64) -> DefenseConfig {
    DefenseConfig {
        p,
        label_mode: attack.label_mode,
        master_seed: stream_key(defense.master_seed, &[seed]),
        ..defense.clone()
    }
}

/// For every (p, seed): a fresh gate, a fresh attack run against it and
/// the benign accuracy of an identically configured gate.
pub fn sweep_p(
    bed: &Testbed,
    p_values: &[f64],
    attack: &AttackConfig,
    defense: &DefenseConfig,
    seeds: &[u64],
    transfer: Option<&Dataset>,
) -> Result<SweepOutcome> {
    if seeds.is_empty() {
        return Err(Error::Config("sweep needs at least one seed".into()));
    }
    attack.validate()?;
    let (ps, warnings) = normalize_p_values(p_values)?;
    let mut out = SweepOutcome {
        warnings,
        ..Default::default()
    };
    for &p in &ps {
        let mut clone_acc = Vec::with_capacity(seeds.len());
        let mut benign = Vec::with_capacity(seeds.len());
        let mut queries = 0;
        for &seed in seeds {
            let cell = run_cell(bed, p, seed, attack, defense, transfer)?;
            clone_acc.push(cell.summary.final_accuracy);
            benign.push(cell.benign_accuracy);
            queries = queries.max(cell.summary.queries_used);
            out.cells.push(cell);
        }
        let (clone_mean, clone_std) = mean_std(&clone_acc);
        let (benign_mean, benign_std) = mean_std(&benign);
        out.rows.push(SweepRow {
            p,
            method: attack.method,
            mode: attack.label_mode,
            seeds: seeds.to_vec(),
            clone_mean,
            clone_std,
            benign_mean,
            benign_std,
            queries,
        });
    }
    Ok(out)
}

pub fn run_cell(
    bed: &Testbed,
    p: f64,
    seed: u64,
    attack: &AttackConfig,
    defense: &DefenseConfig,
    transfer: Option<&Dataset>,
) -> Result<SweepCell> {
    let dcfg = cell_defense(defense, attack, p, seed);
    let gate = Arc::new(bed.gate(dcfg.clone())?);
    let acfg = AttackConfig {
        seed,
        ..attack.clone()
    };
    let mut oracle = Oracle::defended(gate, acfg.budget);
    let report = run_attack(&mut oracle, &acfg, transfer, &bed.test)?;
    if report.summary.queries_used > acfg.budget {
        return Err(Error::BudgetExhausted {
            used: report.summary.queries_used,
            budget: acfg.budget,
            requested: 0,
        });
    }
    let benign = benign_accuracy(&bed.gate(dcfg)?, &bed.test)?;
    Ok(SweepCell {
        p,
        seed,
        summary: report.summary,
        benign_accuracy: benign,
    })
}

/// Rows whose benign accuracy falls under `floor_ratio · victim_accuracy`.
pub fn benign_floor_violations(rows: &[SweepRow], victim_accuracy: f64, floor_ratio: f64) -> Vec<String> {
    let t = floor_ratio * victim_accuracy;
    rows.iter()
        .filter(|r| r.benign_mean < t)
        .map(|r| format!("p={} {} {}: benign {:.4} < T={:.4}", r.p, r.method, r.mode, r.benign_mean, t))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Csv,
    Json,
}

#[derive(Serialize, Deserialize)]
struct JsonReport {
    format_version: u32,
    rows: Vec<SweepRow>,
}

fn seeds_cell(seeds: &[u64]) -> String {
    seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(";")
}

/// Report bytes; identical rows give identical bytes.
pub fn render_report(rows: &[SweepRow], format: ReportFormat) -> Result<Vec<u8>> {
    if rows.is_empty() {
        return Err(Error::EmptyInput);
    }
    match format {
        ReportFormat::Json => {
            let mut s = serde_json::to_vec_pretty(&JsonReport {
                format_version: SWEEP_FORMAT_VERSION,
                rows: rows.to_vec(),
            })?;
            s.push(b'\n');
            Ok(s)
        }
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(CSV_HEADER).map_err(csv_err)?;
            for r in rows {
                w.write_record([
                    r.p.to_string(),
                    r.method.to_string(),
                    r.mode.to_string(),
                    seeds_cell(&r.seeds),
                    r.clone_mean.to_string(),
                    r.clone_std.to_string(),
                    r.benign_mean.to_string(),
                    r.benign_std.to_string(),
                    r.queries.to_string(),
                ])
                .map_err(csv_err)?;
            }
            w.into_inner().map_err(|e| Error::Io(e.into_error()))
        }
    }
}

pub fn emit_report(rows: &[SweepRow], path: impl AsRef<Path>, format: ReportFormat) -> Result<()> {
    write_atomic(path, &render_report(rows, format)?)
}

pub fn parse_report(bytes: &[u8], format: ReportFormat) -> Result<Vec<SweepRow>> {
    match format {
        ReportFormat::Json => {
            let r: JsonReport = serde_json::from_slice(bytes)?;
            if r.format_version != SWEEP_FORMAT_VERSION {
                return Err(Error::FormatVersion(r.format_version));
            }
            Ok(r.rows)
        }
        ReportFormat::Csv => {
            let mut rdr = csv::Reader::from_reader(bytes);
            let header: Vec<String> = rdr.headers().map_err(csv_err)?.iter().map(String::from).collect();
            if header != CSV_HEADER {
                return Err(Error::ParseError {
                    line: 1,
                    msg: format!("unexpected header {header:?}"),
                });
            }
            let mut rows = Vec::new();
            for rec in rdr.records() {
                let rec = rec.map_err(csv_err)?;
                let line = rec.position().map_or(0, |p| p.line() as usize);
                let bad = |msg: String| Error::ParseError { line, msg };
                let num = |i: usize| rec[i].parse::<f64>().map_err(|e| bad(format!("{}: {e}", CSV_HEADER[i])));
                let quoted = |i: usize| format!("\"{}\"", &rec[i]);
                rows.push(SweepRow {
                    p: num(0)?,
                    method: serde_json::from_str(&quoted(1))?,
                    mode: serde_json::from_str(&quoted(2))?,
                    seeds: if rec[3].is_empty() {
                        Vec::new()
                    } else {
                        rec[3]
                            .split(';')
                            .map(|s| s.parse().map_err(|e| bad(format!("seeds: {e}"))))
                            .collect::<Result<_>>()?
                    },
                    clone_mean: num(4)?,
                    clone_std: num(5)?,
                    benign_mean: num(6)?,
                    benign_std: num(7)?,
                    queries: rec[8].parse().map_err(|e| bad(format!("queries: {e}")))?,
                });
            }
            Ok(rows)
        }
    }
}

fn csv_err(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::ParseError {
            line,
            msg: format!("{other:?}"),
        },
    }
}
