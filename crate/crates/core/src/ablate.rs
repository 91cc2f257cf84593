//! Dataset-level evaluation of trained models and the ablation grid
//! runner.
//!
//! A grid file holds one base configuration plus `cell.<name>.<key>`
//! overrides. Every cell runs once per seed: train on the train split,
//! evaluate on the test split, and persist a one-row result file. A
//! rerun skips runs whose result file already exists, so a completed
//! grid is a no-op and an interrupted one resumes where it stopped. A
//! failed run is recorded in the results table and the grid continues.

use std::collections::VecDeque;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use ndarray::{s, Array3};

use crate::config::ForecastConfig;
use crate::error::{Error, Result};
use crate::eval::{evaluate_forecast, horizon_frames, HorizonMetrics};
use crate::geometry::distance_tensor_subset;
use crate::io::config_file::KvConfig;
use crate::io::formats::{window_split, Sequence};
use crate::nn::Params;
use crate::stages::{full_pipeline, ContactMode, ModelSpec};
use crate::train::{train, TrainingConfig};

/// Mean metrics over every evaluation window of a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateMetrics {
    pub windows: usize,
    pub path: HorizonMetrics,
    pub pose: HorizonMetrics,
    /// RMS error of the predicted distance field over future frames;
    /// absent when the conditioning mode bypasses the contact stage.
    pub contact_rms: Option<HorizonMetrics>,
    /// Mean per-frame pose MAE curve, `[future_frames]`.
    pub frame_mae: Vec<f64>,
}

/// Runs the full pipeline over every window of `dataset` and averages
/// the forecast metrics. `stride` spaces the evaluation windows.
pub fn evaluate_model(
    spec: &ModelSpec,
    params: &Params,
    dataset: &[Sequence],
    mode: ContactMode,
    stride: usize,
) -> Result<AggregateMetrics> {
    let cfg = &spec.config;
    let (t_obs, f_fut) = (cfg.observed_frames, cfg.future_frames);
    let mut paths = Vec::new();
    let mut poses = Vec::new();
    let mut contacts = Vec::new();
    let mut curve = vec![0.0; f_fut];
    for seq in dataset {
        let subset = spec.subset_joints(seq.motion.skeleton());
        for (_start, window) in window_split(&seq.motion, t_obs, f_fut, stride)? {
            let m_obs = window.window(0, t_obs)?;
            let reference = window.window(t_obs, f_fut)?;
            let out = full_pipeline(spec, params, &m_obs, &seq.scene, mode, Some(&window))?;
            let m = evaluate_forecast(&out.poses, &reference, cfg.fps)?;
            for (acc, v) in curve.iter_mut().zip(&m.frame_mae) {
                *acc += *v;
            }
            paths.push(m.path);
            poses.push(m.pose);
            if let Some(d_hat) = &out.distances {
                let d_ref = distance_tensor_subset(&window, &out.scene_sampled, &subset);
                contacts.push(distance_rms_horizons(
                    d_hat.values(),
                    d_ref.values(),
                    t_obs,
                    cfg.fps,
                ));
            }
        }
    }
    if paths.is_empty() {
        return Err(Error::EmptyInput("dataset yields no evaluation windows"));
    }
    let n = paths.len();
    for v in curve.iter_mut() {
        *v /= n as f64;
    }
    Ok(AggregateMetrics {
        windows: n,
        path: mean_horizons(&paths),
        pose: mean_horizons(&poses),
        contact_rms: if contacts.is_empty() {
            None
        } else {
            Some(mean_horizons(&contacts))
        },
        frame_mae: curve,
    })
}

/// Field-wise mean of horizon metrics.
pub fn mean_horizons(items: &[HorizonMetrics]) -> HorizonMetrics {
    let n = items.len() as f64;
    HorizonMetrics {
        half_second: items.iter().map(|m| m.half_second).sum::<f64>() / n,
        one_second: items.iter().map(|m| m.one_second).sum::<f64>() / n,
        two_seconds: items.iter().map(|m| m.two_seconds).sum::<f64>() / n,
        full: items.iter().map(|m| m.full).sum::<f64>() / n,
    }
}

/// RMS of the distance-field error over the first `h` future frames,
/// at each horizon. Both tensors span the full window.
fn distance_rms_horizons(
    predicted: &Array3<f64>,
    reference: &Array3<f64>,
    t_obs: usize,
    fps: f64,
) -> HorizonMetrics {
    let f_fut = predicted.shape()[0] - t_obs;
    let rms_at = |frames: usize| {
        let frames = frames.min(f_fut);
        let p = predicted.slice(s![t_obs..t_obs + frames, .., ..]);
        let r = reference.slice(s![t_obs..t_obs + frames, .., ..]);
        let d = &p - &r;
        d.mapv(|v| v * v).mean().unwrap_or(0.0).sqrt()
    };
    HorizonMetrics {
        half_second: rms_at(horizon_frames(fps, 0.5)),
        one_second: rms_at(horizon_frames(fps, 1.0)),
        two_seconds: rms_at(horizon_frames(fps, 2.0)),
        full: rms_at(f_fut),
    }
}

/// One cell of the grid: a name plus key overrides on the base config.
#[derive(Debug, Clone, PartialEq)]
pub struct GridCell {
    pub name: String,
    pub overrides: Vec<(String, String)>,
}

/// A parsed ablation grid: shared base keys, cells, and seeds.
#[derive(Debug, Clone)]
pub struct AblationGrid {
    pub base: KvConfig,
    pub cells: Vec<GridCell>,
    pub seeds: Vec<u64>,
    /// Evaluation window stride; defaults to the cell's training stride.
    pub eval_stride: Option<usize>,
}

impl AblationGrid {
    /// Splits a parsed grid file into base keys, cells, and seeds. The
    /// `seeds` key is a comma-separated list (default `0`); a grid
    /// without any `cell.<name>.<key>` lines runs one cell named
    /// `base`. Base-key typos surface later, when each run consumes
    /// the remaining keys.
    pub fn from_kv(mut kv: KvConfig) -> Result<Self> {
        let seeds = match kv.take("seeds") {
            Some(list) => list
                .split(',')
                .map(|p| {
                    p.trim().parse::<u64>().map_err(|_| {
                        Error::InvalidConfig(format!("bad entry '{p}' in seeds list"))
                    })
                })
                .collect::<Result<Vec<u64>>>()?,
            None => vec![0],
        };
        if seeds.is_empty() {
            return Err(Error::InvalidConfig("seeds list is empty".into()));
        }
        let mut sorted = seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != seeds.len() {
            return Err(Error::InvalidConfig("seeds list repeats a seed".into()));
        }
        let eval_stride = match kv.take("eval_stride") {
            Some(v) => Some(v.parse::<usize>().map_err(|_| {
                Error::InvalidConfig(format!("bad eval_stride '{v}'"))
            })?),
            None => None,
        };

        let mut cells: Vec<GridCell> = kv
            .take_cells()
            .into_iter()
            .map(|(name, overrides)| GridCell { name, overrides })
            .collect();
        for cell in &cells {
            let ok = !cell.name.is_empty()
                && cell
                    .name
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-');
            if !ok {
                return Err(Error::InvalidConfig(format!(
                    "cell name '{}' must use only letters, digits, '_' or '-'",
                    cell.name
                )));
            }
        }
        if cells.is_empty() {
            cells.push(GridCell {
                name: "base".into(),
                overrides: Vec::new(),
            });
        }
        Ok(Self {
            base: kv,
            cells,
            seeds,
            eval_stride,
        })
    }
}

/// Outcome of one cell-seed run. Metric fields are absent for failed
/// runs; `error` is absent for successful ones.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub cell: String,
    pub seed: u64,
    pub windows: usize,
    pub path: Option<HorizonMetrics>,
    pub pose: Option<HorizonMetrics>,
    pub contact_full: Option<f64>,
    pub error: Option<String>,
}

/// Everything a grid run leaves behind.
#[derive(Debug)]
pub struct AblationReport {
    /// All records, sorted by cell name then seed.
    pub records: Vec<RunRecord>,
    pub results_path: PathBuf,
    pub summary_path: PathBuf,
    /// Runs computed by this invocation.
    pub executed: usize,
    /// Runs whose persisted results were reused.
    pub reused: usize,
}

const RESULT_COLUMNS: &str = "cell,seed,status,windows,\
    path_half,path_one,path_two,path_full,\
    pose_half,pose_one,pose_two,pose_full,contact_full,message";

fn opt(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x}"),
        None => "-".into(),
    }
}

fn record_line(r: &RunRecord) -> String {
    let h = |m: Option<HorizonMetrics>, pick: fn(HorizonMetrics) -> f64| opt(m.map(pick));
    let message = r
        .error
        .as_deref()
        .unwrap_or("")
        .replace([',', '\n', '\r'], ";");
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        r.cell,
        r.seed,
        if r.error.is_some() { "error" } else { "ok" },
        r.windows,
        h(r.path, |m| m.half_second),
        h(r.path, |m| m.one_second),
        h(r.path, |m| m.two_seconds),
        h(r.path, |m| m.full),
        h(r.pose, |m| m.half_second),
        h(r.pose, |m| m.one_second),
        h(r.pose, |m| m.two_seconds),
        h(r.pose, |m| m.full),
        opt(r.contact_full),
        message
    )
}

fn parse_field(path: &Path, raw: &str) -> Result<Option<f64>> {
    if raw == "-" {
        return Ok(None);
    }
    raw.parse::<f64>().map(Some).map_err(|_| Error::Parse {
        path: path.display().to_string(),
        line: 2,
        msg: format!("bad metric value '{raw}'"),
    })
}

fn parse_record_line(path: &Path, line: &str) -> Result<RunRecord> {
    let bad = |msg: String| Error::Parse {
        path: path.display().to_string(),
        line: 2,
        msg,
    };
    let fields: Vec<&str> = line.splitn(14, ',').collect();
    if fields.len() != 14 {
        return Err(bad(format!("expected 14 fields, got {}", fields.len())));
    }
    let seed = fields[1]
        .parse::<u64>()
        .map_err(|_| bad(format!("bad seed '{}'", fields[1])))?;
    let windows = fields[3]
        .parse::<usize>()
        .map_err(|_| bad(format!("bad window count '{}'", fields[3])))?;
    let status = fields[2];
    let metric = |i: usize| parse_field(path, fields[i]);
    let quad = |a: usize| -> Result<Option<HorizonMetrics>> {
        Ok(
            match (metric(a)?, metric(a + 1)?, metric(a + 2)?, metric(a + 3)?) {
                (Some(h), Some(o), Some(t), Some(f)) => Some(HorizonMetrics {
                    half_second: h,
                    one_second: o,
                    two_seconds: t,
                    full: f,
                }),
                (None, None, None, None) => None,
                _ => return Err(bad("mixed present/absent horizon fields".into())),
            },
        )
    };
    let path_m = quad(4)?;
    let pose_m = quad(8)?;
    let contact_full = metric(12)?;
    let record = match status {
        "ok" => {
            if path_m.is_none() || pose_m.is_none() {
                return Err(bad("ok row is missing metrics".into()));
            }
            RunRecord {
                cell: fields[0].to_string(),
                seed,
                windows,
                path: path_m,
                pose: pose_m,
                contact_full,
                error: None,
            }
        }
        "error" => RunRecord {
            cell: fields[0].to_string(),
            seed,
            windows,
            path: None,
            pose: None,
            contact_full: None,
            error: Some(fields[13].to_string()),
        },
        other => return Err(bad(format!("unknown status '{other}'"))),
    };
    Ok(record)
}

fn run_file(out_dir: &Path, cell: &str, seed: u64) -> PathBuf {
    out_dir.join("runs").join(format!("{cell}_seed{seed}.csv"))
}

fn save_record(path: &Path, record: &RunRecord) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    // Write-then-rename so an interrupted run never leaves a file a
    // resume would mistake for a finished result.
    let tmp = path.with_extension("csv.tmp");
    fs::write(&tmp, format!("{RESULT_COLUMNS}\n{}\n", record_line(record)))?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn load_record(path: &Path, cell: &str, seed: u64) -> Result<RunRecord> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or("");
    if header != RESULT_COLUMNS {
        return Err(Error::Parse {
            path: path.display().to_string(),
            line: 1,
            msg: "unrecognized result header".into(),
        });
    }
    let row = lines.next().ok_or_else(|| Error::Parse {
        path: path.display().to_string(),
        line: 2,
        msg: "missing result row".into(),
    })?;
    let record = parse_record_line(path, row)?;
    if record.cell != cell || record.seed != seed {
        return Err(Error::Parse {
            path: path.display().to_string(),
            line: 2,
            msg: format!(
                "result belongs to {}/seed{}, expected {cell}/seed{seed}",
                record.cell, record.seed
            ),
        });
    }
    Ok(record)
}

/// Trains and evaluates one cell-seed combination.
fn run_one(
    grid: &AblationGrid,
    cell: &GridCell,
    seed: u64,
    train_set: &[Sequence],
    test_set: &[Sequence],
) -> Result<AggregateMetrics> {
    let mut kv = grid.base.clone();
    kv.apply_overrides(&cell.overrides);
    kv.apply_overrides(&[("seed".to_string(), seed.to_string())]);
    let config = ForecastConfig::from_kv(&mut kv)?;
    let tc = TrainingConfig::from_kv(&mut kv, config.seed)?;
    kv.finish()?;
    let outcome = train(&config, &tc, train_set, None, None, None)?;
    let spec = tc.model_spec(&config);
    evaluate_model(
        &spec,
        &outcome.params,
        test_set,
        tc.contact_source,
        grid.eval_stride.unwrap_or(tc.window_stride),
    )
}

/// Runs every cell-seed combination, resuming from persisted results,
/// and writes `results.csv` plus `summary.txt` under `out_dir`. Runs
/// are independent; `jobs` bounds how many execute concurrently.
pub fn run_ablation(
    grid: &AblationGrid,
    train_set: &[Sequence],
    test_set: &[Sequence],
    out_dir: &Path,
    jobs: usize,
) -> Result<AblationReport> {
    fs::create_dir_all(out_dir)?;
    let mut pending: Vec<(usize, u64)> = Vec::new();
    let mut records: Vec<RunRecord> = Vec::new();
    let mut reused = 0usize;
    for (ci, cell) in grid.cells.iter().enumerate() {
        for &seed in &grid.seeds {
            let path = run_file(out_dir, &cell.name, seed);
            if path.exists() {
                records.push(load_record(&path, &cell.name, seed)?);
                reused += 1;
            } else {
                pending.push((ci, seed));
            }
        }
    }

    let executed = pending.len();
    let queue = Mutex::new(pending.into_iter().collect::<VecDeque<_>>());
    let fresh = Mutex::new(Vec::<RunRecord>::new());
    let failure = Mutex::new(None::<Error>);
    let workers = jobs.max(1).min(grid.cells.len() * grid.seeds.len()).max(1);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let job = queue.lock().expect("queue lock").pop_front();
                let Some((ci, seed)) = job else { break };
                let cell = &grid.cells[ci];
                let record = match run_one(grid, cell, seed, train_set, test_set) {
                    Ok(m) => RunRecord {
                        cell: cell.name.clone(),
                        seed,
                        windows: m.windows,
                        path: Some(m.path),
                        pose: Some(m.pose),
                        contact_full: m.contact_rms.map(|c| c.full),
                        error: None,
                    },
                    Err(e) => RunRecord {
                        cell: cell.name.clone(),
                        seed,
                        windows: 0,
                        path: None,
                        pose: None,
                        contact_full: None,
                        error: Some(e.to_string()),
                    },
                };
                let saved = save_record(&run_file(out_dir, &cell.name, seed), &record);
                match saved {
                    Ok(()) => fresh.lock().expect("records lock").push(record),
                    Err(e) => {
                        *failure.lock().expect("failure lock") = Some(e);
                        queue.lock().expect("queue lock").clear();
                        break;
                    }
                }
            });
        }
    });
    if let Some(e) = failure.into_inner().expect("failure lock") {
        return Err(e);
    }
    records.extend(fresh.into_inner().expect("records lock"));
    records.sort_by(|a, b| a.cell.cmp(&b.cell).then(a.seed.cmp(&b.seed)));

    let results_path = out_dir.join("results.csv");
    let mut table = String::from(RESULT_COLUMNS);
    table.push('\n');
    for r in &records {
        table.push_str(&record_line(r));
        table.push('\n');
    }
    fs::write(&results_path, table)?;

    let summary_path = out_dir.join("summary.txt");
    fs::write(&summary_path, summarize(grid, &records))?;

    Ok(AblationReport {
        records,
        results_path,
        summary_path,
        executed,
        reused,
    })
}

/// Per-cell seed-averaged report, in cell file order.
fn summarize(grid: &AblationGrid, records: &[RunRecord]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "ablation over {} cells x {} seeds\n\n",
        grid.cells.len(),
        grid.seeds.len()
    ));
    let horizon_line = |label: &str, m: &HorizonMetrics| {
        format!(
            "  {label:<12} 0.5s {:<10.6} 1.0s {:<10.6} 2.0s {:<10.6} full {:<10.6}\n",
            m.half_second, m.one_second, m.two_seconds, m.full
        )
    };
    for cell in &grid.cells {
        let rows: Vec<&RunRecord> = records.iter().filter(|r| r.cell == cell.name).collect();
        let ok: Vec<&RunRecord> = rows.iter().copied().filter(|r| r.error.is_none()).collect();
        out.push_str(&format!(
            "cell {} ({} of {} seeds ok)\n",
            cell.name,
            ok.len(),
            rows.len()
        ));
        if !ok.is_empty() {
            let paths: Vec<HorizonMetrics> = ok.iter().map(|r| r.path.unwrap()).collect();
            let poses: Vec<HorizonMetrics> = ok.iter().map(|r| r.pose.unwrap()).collect();
            out.push_str(&horizon_line("path_error", &mean_horizons(&paths)));
            out.push_str(&horizon_line("pose_error", &mean_horizons(&poses)));
            let contact: Vec<f64> = ok.iter().filter_map(|r| r.contact_full).collect();
            if !contact.is_empty() {
                let mean = contact.iter().sum::<f64>() / contact.len() as f64;
                out.push_str(&format!("  contact_rms  full {mean:<10.6}\n"));
            }
        }
        for r in rows.iter().filter(|r| r.error.is_some()) {
            out.push_str(&format!(
                "  seed {} failed: {}\n",
                r.seed,
                r.error.as_deref().unwrap_or("")
            ));
        }
        out.push('\n');
    }
    out
}
