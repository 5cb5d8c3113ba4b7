//! Parameter-sweep harness: runs every grid cell under every seed and
//! reports stash ratio, amplification and timings per run plus per-cell means.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::compute_metrics;
use crate::datagen::{generate, SkewSpec};
use crate::engine::query;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::model::{Dataset, Params, Ratio};
use crate::pipeline::setup_with;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSource {
    /// Generated per skew value of the grid.
    Zipf {
        num_keys: usize,
        num_records: usize,
        value_width: usize,
        seed: u64,
    },
    /// A TSV dataset; the grid's skew values are ignored.
    File(PathBuf),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Grid {
    pub qa: Vec<Ratio>,
    pub sa: Vec<Ratio>,
    pub fanout: Vec<usize>,
    pub degree: Vec<usize>,
    pub desired_overlap: Vec<Option<usize>>,
    pub z: Vec<f64>,
}

impl Default for Grid {
    fn default() -> Self {
        Grid {
            qa: vec![Ratio::integer(1)],
            sa: vec![Ratio::new(6, 5)],
            fanout: vec![6],
            degree: vec![0],
            desired_overlap: vec![None],
            z: vec![0.4],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchPlan {
    pub dataset: DatasetSource,
    #[serde(default)]
    pub grid: Grid,
    pub seeds: Vec<u64>,
    /// Timed queries per run, drawn from present and absent keys.
    #[serde(default = "default_queries")]
    pub queries: usize,
}

fn default_queries() -> usize {
    100
}

/// One point of the grid.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Cell {
    pub z: f64,
    pub qa: Ratio,
    pub sa: Ratio,
    pub fanout: usize,
    pub degree: usize,
    pub desired_overlap: Option<usize>,
}

impl BenchPlan {
    /// Ready-made sweeps over the 100k-record skewed dataset.
    pub fn preset(name: &str) -> Option<BenchPlan> {
        let r = |s: &str| s.parse::<Ratio>().expect("literal ratio");
        let grid = match name {
            "fanout" => Grid {
                fanout: vec![2, 4, 6, 8, 10],
                ..Grid::default()
            },
            "storage" => Grid {
                sa: vec![r("1.0"), r("1.2"), r("1.4")],
                ..Grid::default()
            },
            "query" => Grid {
                qa: vec![r("1.0"), r("1.2"), r("1.4")],
                ..Grid::default()
            },
            "degree" => Grid {
                degree: vec![2, 4, 6],
                ..Grid::default()
            },
            "overlap" => Grid {
                degree: vec![2],
                desired_overlap: vec![Some(2), Some(4), Some(6)],
                ..Grid::default()
            },
            "skew" => Grid {
                z: vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0],
                ..Grid::default()
            },
            _ => return None,
        };
        Some(BenchPlan {
            dataset: DatasetSource::Zipf {
                num_keys: 5_000,
                num_records: 100_000,
                value_width: 16,
                seed: 0,
            },
            grid,
            seeds: (0..5).collect(),
            queries: default_queries(),
        })
    }

    pub const PRESETS: [&'static str; 6] = ["fanout", "storage", "query", "degree", "overlap", "skew"];

    pub fn cells(&self) -> Vec<Cell> {
        let g = &self.grid;
        let zs = match self.dataset {
            DatasetSource::File(_) => vec![f64::NAN],
            DatasetSource::Zipf { .. } => g.z.clone(),
        };
        let mut out = Vec::new();
        for &z in &zs {
            for &qa in &g.qa {
                for &sa in &g.sa {
                    for &fanout in &g.fanout {
                        for &degree in &g.degree {
                            for &desired_overlap in &g.desired_overlap {
                                out.push(Cell {
                                    z,
                                    qa,
                                    sa,
                                    fanout,
                                    degree,
                                    desired_overlap,
                                });
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchRow {
    pub cell: Cell,
    pub seed: u64,
    pub bucket_size: usize,
    pub bucket_count: usize,
    pub delta: usize,
    pub stash: usize,
    pub sr: f64,
    pub sa_actual: f64,
    pub qa_actual: f64,
    pub setup_ms: f64,
    pub mean_query_ms: f64,
    pub error: Option<String>,
}

/// Means over the successful runs of one cell.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CellMean {
    pub cell: Cell,
    pub runs: usize,
    pub failed: usize,
    pub delta: f64,
    pub sr: f64,
    pub sa_actual: f64,
    pub qa_actual: f64,
    pub setup_ms: f64,
    pub mean_query_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub means: Vec<CellMean>,
}

fn load_datasets(plan: &BenchPlan, cells: &[Cell]) -> Result<BTreeMap<u64, Dataset>> {
    let mut out = BTreeMap::new();
    for c in cells {
        let k = c.z.to_bits();
        if out.contains_key(&k) {
            continue;
        }
        let ds = match &plan.dataset {
            DatasetSource::File(p) => Dataset::read_tsv(std::io::BufReader::new(std::fs::File::open(p)?))?,
            DatasetSource::Zipf {
                num_keys,
                num_records,
                value_width,
                seed,
            } => generate(&SkewSpec {
                num_keys: *num_keys,
                num_records: *num_records,
                z: c.z,
                seed: *seed,
                value_width: *value_width,
            })?,
        };
        out.insert(k, ds);
    }
    Ok(out)
}

fn run_one(dataset: &Dataset, cell: &Cell, seed: u64, queries: usize) -> Result<BenchRow> {
    let params = Params {
        qa: cell.qa,
        sa: cell.sa,
        fanout: cell.fanout,
        degree: cell.degree,
        desired_overlap: cell.desired_overlap,
        seed,
        ..Params::default()
    };
    let t0 = Instant::now();
    // cells already run in parallel
    let s = setup_with(dataset, &params, Execution::Sequential)?;
    let setup_ms = t0.elapsed().as_secs_f64() * 1e3;

    let keys: Vec<&Vec<u8>> = dataset.counts().keys().collect();
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0x5eed);
    let t1 = Instant::now();
    for i in 0..queries {
        let key = if i % 2 == 0 {
            keys[rng.gen_range(0..keys.len())].clone()
        } else {
            format!("absent-{}", rng.gen::<u32>()).into_bytes()
        };
        query(&s.client, &s.bundle, &key)?;
    }
    let mean_query_ms = if queries == 0 {
        0.0
    } else {
        t1.elapsed().as_secs_f64() * 1e3 / queries as f64
    };

    let m = compute_metrics(dataset, &s.bundle, &s.client);
    Ok(BenchRow {
        cell: cell.clone(),
        seed,
        bucket_size: s.padded.layout.bucket_size,
        bucket_count: s.padded.layout.bucket_count,
        delta: s.padded.overlap_size(),
        stash: s.client.stash.len(),
        sr: m.sr,
        sa_actual: m.sa_actual,
        qa_actual: m.qa_actual,
        setup_ms,
        mean_query_ms,
        error: None,
    })
}

/// Runs the plan; failing runs are reported in their row's `error` column
/// and do not stop the sweep.
pub fn run_plan(plan: &BenchPlan, exec: Execution) -> Result<BenchReport> {
    if plan.seeds.is_empty() {
        return Err(Error::InvalidParams("bench plan needs at least one seed".into()));
    }
    let cells = plan.cells();
    let datasets = load_datasets(plan, &cells)?;
    let jobs: Vec<(&Cell, u64)> = cells
        .iter()
        .flat_map(|c| plan.seeds.iter().map(move |&s| (c, s)))
        .collect();
    let rows = exec.map(jobs.len(), |i| {
        let (cell, seed) = jobs[i];
        let ds = &datasets[&cell.z.to_bits()];
        run_one(ds, cell, seed, plan.queries).unwrap_or_else(|e| BenchRow {
            cell: cell.clone(),
            seed,
            bucket_size: 0,
            bucket_count: 0,
            delta: 0,
            stash: 0,
            sr: f64::NAN,
            sa_actual: f64::NAN,
            qa_actual: f64::NAN,
            setup_ms: 0.0,
            mean_query_ms: 0.0,
            error: Some(e.to_string()),
        })
    });

    let means = rows
        .chunks(plan.seeds.len())
        .map(|chunk| {
            let ok: Vec<&BenchRow> = chunk.iter().filter(|r| r.error.is_none()).collect();
            let mean = |f: fn(&BenchRow) -> f64| {
                if ok.is_empty() {
                    f64::NAN
                } else {
                    ok.iter().map(|r| f(r)).sum::<f64>() / ok.len() as f64
                }
            };
            CellMean {
                cell: chunk[0].cell.clone(),
                runs: ok.len(),
                failed: chunk.len() - ok.len(),
                delta: mean(|r| r.delta as f64),
                sr: mean(|r| r.sr),
                sa_actual: mean(|r| r.sa_actual),
                qa_actual: mean(|r| r.qa_actual),
                setup_ms: mean(|r| r.setup_ms),
                mean_query_ms: mean(|r| r.mean_query_ms),
            }
        })
        .collect();
    Ok(BenchReport { rows, means })
}

#[derive(Serialize)]
struct CsvRow {
    z: String,
    qa: String,
    sa: String,
    fanout: usize,
    degree: usize,
    desired_overlap: Option<usize>,
    seed: String,
    bucket_size: Option<usize>,
    bucket_count: Option<usize>,
    delta: String,
    stash: Option<usize>,
    sr: String,
    sa_actual: String,
    qa_actual: String,
    setup_ms: String,
    mean_query_ms: String,
    error: String,
}

fn fmt_f(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v:.6}")
    }
}

impl BenchReport {
    /// One row per run, then one `mean` row per cell.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let base = |c: &Cell| (fmt_f(c.z), c.qa.to_string(), c.sa.to_string());
        for r in &self.rows {
            let (z, qa, sa) = base(&r.cell);
            let ok = r.error.is_none();
            out.serialize(CsvRow {
                z,
                qa,
                sa,
                fanout: r.cell.fanout,
                degree: r.cell.degree,
                desired_overlap: r.cell.desired_overlap,
                seed: r.seed.to_string(),
                bucket_size: ok.then_some(r.bucket_size),
                bucket_count: ok.then_some(r.bucket_count),
                delta: if ok { r.delta.to_string() } else { String::new() },
                stash: ok.then_some(r.stash),
                sr: fmt_f(r.sr),
                sa_actual: fmt_f(r.sa_actual),
                qa_actual: fmt_f(r.qa_actual),
                setup_ms: format!("{:.3}", r.setup_ms),
                mean_query_ms: format!("{:.4}", r.mean_query_ms),
                error: r.error.clone().unwrap_or_default(),
            })
            .map_err(csv_err)?;
        }
        for m in &self.means {
            let (z, qa, sa) = base(&m.cell);
            out.serialize(CsvRow {
                z,
                qa,
                sa,
                fanout: m.cell.fanout,
                degree: m.cell.degree,
                desired_overlap: m.cell.desired_overlap,
                seed: "mean".into(),
                bucket_size: None,
                bucket_count: None,
                delta: fmt_f(m.delta),
                stash: None,
                sr: fmt_f(m.sr),
                sa_actual: fmt_f(m.sa_actual),
                qa_actual: fmt_f(m.qa_actual),
                setup_ms: format!("{:.3}", m.setup_ms),
                mean_query_ms: format!("{:.4}", m.mean_query_ms),
                error: if m.failed > 0 {
                    format!("{} of {} runs failed", m.failed, m.failed + m.runs)
                } else {
                    String::new()
                },
            })
            .map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::InvalidParams(format!("csv: {other:?}")),
    }
}
