//! Manifest runs: resumable JSONL records and CSV summaries.

use std::collections::{BTreeMap, HashSet};
use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::evalx::Verdict;
use crate::noise::NoiseSpec;
use crate::systems::{generate, lookup, Dataset, GenerateOptions};

use super::grid::{HyperGrid, Method};
use super::search::{grid_search, Budget, ConfigStatus, SearchOptions, SearchResult};
use super::BenchError;

pub const TOOLKIT_VERSION: &str = env!("CARGO_PKG_VERSION");

fn clean_only() -> Vec<Option<f64>> {
    vec![None]
}

fn first_seed() -> Vec<u64> {
    vec![0]
}

/// Cells are `systems × methods × snr_db × seeds`, in that nesting order.
/// Methods that cannot handle a system's kind are left out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub systems: Vec<String>,
    pub methods: Vec<Method>,
    /// `null` is clean data.
    #[serde(default = "clean_only")]
    pub snr_db: Vec<Option<f64>>,
    #[serde(default = "first_seed")]
    pub seeds: Vec<u64>,
    /// Spatial resolution factor per system name.
    #[serde(default)]
    pub grid_scale: BTreeMap<String, f64>,
    /// Grid overrides per method; the published grids are used otherwise.
    #[serde(default)]
    pub grids: BTreeMap<Method, HyperGrid>,
    #[serde(default)]
    pub budget: Budget,
}

impl Manifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Manifest, BenchError> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    pub fn cells(&self) -> Result<Vec<Cell>, BenchError> {
        let mut out = Vec::new();
        for system in &self.systems {
            let kind = lookup(system)?.kind;
            for &method in self.methods.iter().filter(|m| m.supports(kind)) {
                for &snr_db in &self.snr_db {
                    for &seed in &self.seeds {
                        out.push(Cell {
                            system: system.clone(),
                            method,
                            snr_db,
                            seed,
                        });
                    }
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub system: String,
    pub method: Method,
    pub snr_db: Option<f64>,
    pub seed: u64,
}

type CellKey = (String, String, Option<u64>, u64);

impl Cell {
    fn key(&self) -> CellKey {
        (self.system.clone(), self.method.as_str().to_string(), self.snr_db.map(f64::to_bits), self.seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRecord {
    pub dataset: String,
    pub method: String,
    pub snr_db: Option<f64>,
    pub seed: u64,
    pub status: String,
    pub hyperparameters: Map<String, Value>,
    pub nmse_test: Option<f64>,
    pub nmse_validation: Option<f64>,
    pub complexity: Option<usize>,
    pub fitness_validation: Option<f64>,
    pub fidelity: Option<Verdict>,
    pub max_relative_error: Option<f64>,
    pub missing_terms: Vec<String>,
    pub extra_terms: Vec<String>,
    pub equations: Vec<String>,
    pub configs_total: usize,
    pub configs_failed: usize,
    pub configs_skipped: usize,
    pub budget_exceeded: bool,
    pub error: Option<String>,
    pub notes: Vec<String>,
    pub runtime_seconds: f64,
    pub toolkit_version: String,
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

impl BenchmarkRecord {
    fn base(dataset: &str, method: Method, snr_db: Option<f64>, seed: u64) -> BenchmarkRecord {
        BenchmarkRecord {
            dataset: dataset.to_string(),
            method: method.as_str().to_string(),
            snr_db,
            seed,
            status: "failed".into(),
            hyperparameters: Map::new(),
            nmse_test: None,
            nmse_validation: None,
            complexity: None,
            fitness_validation: None,
            fidelity: None,
            max_relative_error: None,
            missing_terms: Vec::new(),
            extra_terms: Vec::new(),
            equations: Vec::new(),
            configs_total: 0,
            configs_failed: 0,
            configs_skipped: 0,
            budget_exceeded: false,
            error: None,
            notes: Vec::new(),
            runtime_seconds: 0.0,
            toolkit_version: TOOLKIT_VERSION.to_string(),
        }
    }

    pub fn failed(dataset: &str, method: Method, snr_db: Option<f64>, seed: u64, error: String) -> BenchmarkRecord {
        BenchmarkRecord {
            error: Some(error),
            ..BenchmarkRecord::base(dataset, method, snr_db, seed)
        }
    }

    pub fn from_search(ds: &Dataset, result: &SearchResult, seed: u64) -> BenchmarkRecord {
        let mut r = BenchmarkRecord::base(&ds.meta.system, result.method, ds.meta.snr_db, seed);
        let count = |s: ConfigStatus| result.outcomes.iter().filter(|o| o.status == s).count();
        r.configs_total = result.outcomes.len();
        r.configs_failed = count(ConfigStatus::Failed);
        r.configs_skipped = count(ConfigStatus::Skipped);
        r.budget_exceeded = result.budget_exceeded;
        r.notes = result.notes.clone();
        match (result.winning_config(), result.winning_outcome()) {
            (Some(config), Some(outcome)) => {
                r.status = "ok".into();
                r.hyperparameters = config.flat();
                r.nmse_validation = finite(outcome.validation_nmse);
                r.fitness_validation = finite(outcome.fitness);
            }
            _ => {
                r.error = Some(format!("all configurations failed: {}", result.failures().join("; ")));
            }
        }
        if let Some(test) = &result.test {
            r.nmse_test = finite(test.nmse);
            r.complexity = Some(test.complexity);
            if !test.finite {
                r.notes.push("test prediction is not finite".into());
            }
        }
        if let Some(f) = &result.fidelity {
            r.fidelity = Some(f.verdict);
            r.max_relative_error = finite(f.max_relative_error());
            r.missing_terms = f.missing.iter().map(|t| format!("{}:{}", t.equation, t.term)).collect();
            r.extra_terms = f.extra.iter().map(|t| format!("{}:{}", t.equation, t.term)).collect();
        }
        r.equations = result.equations.iter().map(|e| e.to_string()).collect();
        r
    }

    fn key(&self) -> CellKey {
        (self.dataset.clone(), self.method.clone(), self.snr_db.map(f64::to_bits), self.seed)
    }

    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

/// Reads every complete record; a torn final line is ignored.
pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<BenchmarkRecord>, BenchError> {
    let path = path.as_ref();
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = fs::read_to_string(path)?;
    let complete = match text.rfind('\n') {
        Some(i) => &text[..=i],
        None => "",
    };
    complete
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(BenchError::from))
        .collect()
}

/// Drops a torn final line left by an interrupted run.
fn trim_partial_line(path: &Path) -> Result<(), BenchError> {
    if !path.exists() {
        return Ok(());
    }
    let bytes = fs::read(path)?;
    let keep = bytes.iter().rposition(|b| *b == b'\n').map_or(0, |i| i + 1);
    if keep != bytes.len() {
        let f = OpenOptions::new().write(true).open(path)?;
        f.set_len(keep as u64)?;
    }
    Ok(())
}

/// Appends one record per line.
pub struct RecordWriter {
    file: fs::File,
}

impl RecordWriter {
    pub fn open(path: impl AsRef<Path>) -> Result<RecordWriter, BenchError> {
        let path = path.as_ref();
        trim_partial_line(path)?;
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(RecordWriter { file })
    }

    pub fn append(&mut self, record: &BenchmarkRecord) -> Result<(), BenchError> {
        let mut line = serde_json::to_vec(record)?;
        line.push(b'\n');
        self.file.write_all(&line)?;
        self.file.flush()?;
        Ok(())
    }
}

/// Generates a dataset for a system, with optional noise.
pub fn make_dataset(system: &str, seed: u64, grid_scale: f64, snr_db: Option<f64>) -> Result<Dataset, BenchError> {
    let spec = lookup(system)?;
    let spec = if grid_scale == 1.0 { spec } else { spec.with_grid_scale(grid_scale)? };
    let ds = generate(
        &spec,
        &GenerateOptions {
            seed,
            grid_scale: 1.0,
            substeps: None,
        },
    )?;
    match snr_db {
        None => Ok(ds),
        Some(db) => Ok(ds.corrupt(&NoiseSpec::snr(db, seed))?),
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunSummary {
    pub written: usize,
    pub resumed: usize,
    pub errors: usize,
}

impl RunSummary {
    pub fn success(&self) -> bool {
        self.errors == 0
    }
}

/// Worker threads: `MDBENCH_JOBS` when set, else all cores.
pub fn default_jobs() -> usize {
    std::env::var("MDBENCH_JOBS")
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|n| *n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool, BenchError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| BenchError::Config(format!("thread pool: {e}")))
}

/// Runs one discovery cell on an existing dataset.
pub fn run_cell(ds: &Dataset, method: Method, grid: &HyperGrid, budget: Budget, seed: u64) -> BenchmarkRecord {
    let started = Instant::now();
    let options = SearchOptions { budget, seed };
    let mut record = match grid_search(ds, method, grid, &options) {
        Ok(result) => BenchmarkRecord::from_search(ds, &result, seed),
        Err(e) => BenchmarkRecord::failed(&ds.meta.system, method, ds.meta.snr_db, seed, e.to_string()),
    };
    record.runtime_seconds = started.elapsed().as_secs_f64();
    record
}

/// Runs every cell of `manifest` not already present in `out`, appending
/// records in manifest order.
pub fn run_benchmark(manifest: &Manifest, out: impl AsRef<Path>, jobs: usize) -> Result<RunSummary, BenchError> {
    let out = out.as_ref();
    let cells = manifest.cells()?;
    trim_partial_line(out)?;
    let done: HashSet<CellKey> = read_records(out)?.iter().map(BenchmarkRecord::key).collect();
    let mut writer = RecordWriter::open(out)?;
    let pool = pool(jobs)?;
    let mut summary = RunSummary::default();
    let mut cache: BTreeMap<(String, u64, Option<u64>), Dataset> = BTreeMap::new();
    for cell in &cells {
        if done.contains(&cell.key()) {
            summary.resumed += 1;
            continue;
        }
        let scale = manifest.grid_scale.get(&cell.system).copied().unwrap_or(1.0);
        let dkey = (cell.system.clone(), cell.seed, cell.snr_db.map(f64::to_bits));
        if !cache.contains_key(&dkey) {
            cache.retain(|k, _| k.0 == cell.system);
            match pool.install(|| make_dataset(&cell.system, cell.seed, scale, cell.snr_db)) {
                Ok(ds) => {
                    cache.insert(dkey.clone(), ds);
                }
                Err(e) => {
                    let r = BenchmarkRecord::failed(&cell.system, cell.method, cell.snr_db, cell.seed, e.to_string());
                    writer.append(&r)?;
                    summary.written += 1;
                    summary.errors += 1;
                    continue;
                }
            }
        }
        let ds = &cache[&dkey];
        let grid = manifest
            .grids
            .get(&cell.method)
            .cloned()
            .unwrap_or_else(|| cell.method.default_grid(ds.kind()));
        let record = pool.install(|| run_cell(ds, cell.method, &grid, manifest.budget, cell.seed));
        if !record.is_ok() {
            summary.errors += 1;
        }
        writer.append(&record)?;
        summary.written += 1;
    }
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub snr_db: String,
    pub runs: usize,
    pub failed: usize,
    pub median_nmse_test: Option<f64>,
    pub median_complexity: Option<f64>,
    pub full_fidelity: usize,
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Per method and noise level: median test NMSE and complexity over successful runs.
pub fn summarize(records: &[BenchmarkRecord]) -> Vec<SummaryRow> {
    // clean first, then decreasing SNR
    let order = |s: Option<f64>| s.map_or(f64::NEG_INFINITY, |v| -v);
    let mut keys: Vec<(String, Option<f64>)> = records.iter().map(|r| (r.method.clone(), r.snr_db)).collect();
    keys.sort_by(|a, b| a.0.cmp(&b.0).then(order(a.1).total_cmp(&order(b.1))));
    keys.dedup();
    keys.into_iter()
        .map(|(method, snr)| {
            let rows: Vec<&BenchmarkRecord> = records.iter().filter(|r| r.method == method && r.snr_db == snr).collect();
            let ok: Vec<&&BenchmarkRecord> = rows.iter().filter(|r| r.is_ok()).collect();
            SummaryRow {
                method,
                snr_db: snr.map_or("clean".to_string(), |v| v.to_string()),
                runs: rows.len(),
                failed: rows.len() - ok.len(),
                median_nmse_test: median(ok.iter().filter_map(|r| r.nmse_test).collect()),
                median_complexity: median(ok.iter().filter_map(|r| r.complexity.map(|c| c as f64)).collect()),
                full_fidelity: ok.iter().filter(|r| r.fidelity == Some(Verdict::Full)).count(),
            }
        })
        .collect()
}

pub fn write_summary(rows: &[SummaryRow], path: impl AsRef<Path>) -> Result<(), BenchError> {
    // header written by hand so an empty summary still has one
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(["method", "snr_db", "runs", "failed", "median_nmse_test", "median_complexity", "full_fidelity"])?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Summarizes a JSONL file into a CSV table.
pub fn report(input: impl AsRef<Path>, output: impl AsRef<Path>) -> Result<Vec<SummaryRow>, BenchError> {
    let rows = summarize(&read_records(input)?);
    write_summary(&rows, output)?;
    Ok(rows)
}

/// Reads JSONL lines without interpreting them; used to compare runs.
pub fn read_lines(path: impl AsRef<Path>) -> Result<Vec<String>, BenchError> {
    let f = fs::File::open(path)?;
    BufReader::new(f).lines().map(|l| l.map_err(BenchError::from)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(method: &str, snr: Option<f64>, nmse: f64, complexity: usize, ok: bool) -> BenchmarkRecord {
        let mut r = BenchmarkRecord::base("burgers", method.parse().unwrap(), snr, 0);
        if ok {
            r.status = "ok".into();
            r.nmse_test = Some(nmse);
            r.complexity = Some(complexity);
            r.fidelity = Some(Verdict::Full);
        }
        r
    }

    #[test]
    fn summary_medians_and_order() {
        let rows = summarize(&[
            record("pdefind", Some(20.0), 0.3, 9, true),
            record("pdefind", None, 0.1, 9, true),
            record("pdefind", None, 0.2, 13, true),
            record("pdefind", None, 0.4, 5, true),
            record("pdefind", Some(40.0), 0.5, 9, false),
            record("wsindy", None, 0.01, 9, true),
        ]);
        assert_eq!(rows.len(), 4);
        assert_eq!((rows[0].snr_db.as_str(), rows[0].runs), ("clean", 3));
        assert_eq!(rows[0].median_nmse_test, Some(0.2));
        assert_eq!(rows[0].median_complexity, Some(9.0));
        assert_eq!(rows[1].snr_db, "40");
        assert_eq!((rows[1].failed, rows[1].median_nmse_test), (1, None));
        assert_eq!(rows[2].snr_db, "20");
        assert_eq!(rows[3].method, "wsindy");
    }

    #[test]
    fn empty_manifest_gives_empty_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("r.jsonl");
        let m: Manifest = serde_json::from_str(r#"{"systems": [], "methods": []}"#).unwrap();
        let s = run_benchmark(&m, &out, 1).unwrap();
        assert_eq!(s, RunSummary::default());
        assert_eq!(fs::read_to_string(&out).unwrap(), "");
        let csv_path = dir.path().join("s.csv");
        assert!(report(&out, &csv_path).unwrap().is_empty());
        let text = fs::read_to_string(&csv_path).unwrap();
        assert_eq!(text.lines().count(), 1);
    }

    #[test]
    fn torn_lines_are_discarded() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("r.jsonl");
        let r = record("pdefind", None, 0.1, 9, true);
        let mut text = serde_json::to_string(&r).unwrap();
        text.push('\n');
        text.push_str("{\"dataset\": \"bur");
        fs::write(&out, &text).unwrap();
        assert_eq!(read_records(&out).unwrap(), vec![r.clone()]);
        let mut w = RecordWriter::open(&out).unwrap();
        w.append(&r).unwrap();
        assert_eq!(read_records(&out).unwrap().len(), 2);
    }

    #[test]
    fn cells_skip_unsupported_methods() {
        let m: Manifest = serde_json::from_str(
            r#"{"systems": ["logistic", "burgers"], "methods": ["sindy", "pdefind", "esindy"], "snr_db": [null, 30], "seeds": [1, 2]}"#,
        )
        .unwrap();
        let cells = m.cells().unwrap();
        assert_eq!(cells.len(), (2 + 2) * 2 * 2);
        assert_eq!(cells[0].method, Method::Sindy);
        assert_eq!(cells[0].snr_db, None);
        assert_eq!(cells[1].seed, 2);
        assert!(serde_json::from_str::<Manifest>(r#"{"systems": [], "methods": [], "typo": 1}"#).is_err());
    }
}
