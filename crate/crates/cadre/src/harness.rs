//! Command implementations behind the CLI: dataset generation, training,
//! graph extraction, evaluation, multi-seed experiments, CSV ingestion, and
//! figure emission.

use ndarray::{Array1, Array2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::config::{EvalConfig, ExperimentConfig};
use crate::dgp::{make_dataset, Dataset, DgpSpec};
use crate::error::{CadreError, Result};
use crate::graphs::{extract_graphs, sar_mask, GraphEstimate, SpatialMask};
use crate::metrics::{
    f1_score, mcc, permute_adjacency, r2_kernel, shd, smcc, tpr_precision, wind_reference_graph,
    wshd_wtpr, MetricsReport,
};
use crate::model::{encode, ModelConfig, ModelParams};
use crate::objective::TrainConfig;
use crate::plot;
use crate::train::train;

/// Per-seed outcome inside a run record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedRecord {
    pub seed: u64,
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metrics: Option<MetricsReport>,
    pub dataset: PathBuf,
    pub checkpoint: PathBuf,
    pub loss_log: PathBuf,
    pub graphs_dir: PathBuf,
    pub wall_ms: f64,
}

/// Everything one `experiment` invocation produced.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub records: Vec<SeedRecord>,
    /// metric -> (mean, std, count) over successful seeds.
    pub aggregate: BTreeMap<String, (f64, f64, usize)>,
    /// Seed whose latent MCC is highest (the best-converged selection rule
    /// used for headline numbers).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub best_seed: Option<u64>,
}

fn ensure_target(path: &Path, overwrite: bool) -> Result<()> {
    if path.exists() && !overwrite {
        return Err(CadreError::InvalidConfig(format!(
            "{} exists; pass --overwrite to replace it",
            path.display()
        )));
    }
    Ok(())
}

/// Generates a dataset and writes `dataset.arz` (+ spec sidecar, optional
/// CSV export). Returns the archive path.
pub fn cmd_generate(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    seed_override: Option<u64>,
    overwrite: bool,
    export_csv: bool,
) -> Result<PathBuf> {
    cfg.validate()?;
    let mut dgp_cfg = cfg.dgp.clone();
    if let Some(s) = seed_override {
        dgp_cfg.seed = s;
    }
    let spec = DgpSpec::from_config(&dgp_cfg)?;
    let dataset = make_dataset(&spec)?;
    std::fs::create_dir_all(out_dir)?;
    let path = out_dir.join("dataset.arz");
    ensure_target(&path, overwrite)?;
    dataset.save(&path)?;
    if export_csv {
        dataset.export_csv(&out_dir.join("x.csv"))?;
    }
    Ok(path)
}

/// Trains a model against a dataset; returns the checkpoint path.
pub fn cmd_train(
    cfg: &ExperimentConfig,
    dataset_path: &Path,
    out_dir: &Path,
    seed_override: Option<u64>,
    resume: Option<&Path>,
    overwrite: bool,
) -> Result<PathBuf> {
    cfg.validate()?;
    let dataset = Dataset::load(dataset_path)?;
    let mut train_cfg = cfg.train.clone();
    if let Some(s) = seed_override {
        train_cfg.seed = s;
    }
    let d_x = dataset.d_x();
    let d_z = dataset.spec.as_ref().map_or(cfg.dgp.d_z, |s| s.d_z);
    let model_cfg = ModelConfig::new(d_x, d_z, train_cfg.seed);
    let ckpt = out_dir.join("checkpoint.arz");
    if resume.is_none() {
        ensure_target(&ckpt, overwrite)?;
        let log = out_dir.join("loss.csv");
        if log.exists() && overwrite {
            std::fs::remove_file(&log)?;
        } else {
            ensure_target(&log, overwrite)?;
        }
    }
    let mask = build_mask(&cfg.eval, &dataset)?;
    let outcome = train(
        &dataset.x,
        &model_cfg,
        &train_cfg,
        out_dir,
        resume,
        mask.as_ref().map(|m| m.jacobian_mask()).as_ref(),
    )?;
    Ok(outcome.checkpoint)
}

fn build_mask(eval: &EvalConfig, dataset: &Dataset) -> Result<Option<SpatialMask>> {
    if !eval.use_sar_mask {
        return Ok(None);
    }
    match &dataset.coords {
        Some(coords) => Ok(Some(sar_mask(coords, eval.sar_radius, &dataset.x)?)),
        None => Err(CadreError::InvalidConfig(
            "use_sar_mask requires dataset coordinates".into(),
        )),
    }
}

/// Extracts graphs from a checkpoint; returns the graphs directory.
pub fn cmd_extract(
    checkpoint: &Path,
    dataset_path: &Path,
    out_dir: &Path,
    tau_override: Option<f64>,
    eval: &EvalConfig,
    overwrite: bool,
) -> Result<PathBuf> {
    let dataset = Dataset::load(dataset_path)?;
    let (params, sidecar) = ModelParams::load(checkpoint)?;
    let mut train_cfg: TrainConfig = sidecar
        .get("train")
        .cloned()
        .map(serde_json::from_value)
        .transpose()?
        .unwrap_or_default();
    if let Some(tau) = tau_override.or(eval.tau) {
        if tau <= 0.0 {
            return Err(CadreError::InvalidConfig("tau must be positive".into()));
        }
        train_cfg.tau = tau;
    }
    let mask = build_mask(eval, &dataset)?;
    let (estimate, bundle) = extract_graphs(&params, &dataset, &train_cfg, mask.as_ref())?;
    let dir = out_dir.join("graphs");
    ensure_target(&dir.join("graphs.arz"), overwrite)?;
    estimate.save(&dir, &bundle)?;
    Ok(dir)
}

/// Computes every metric the available inputs allow; metrics whose ground
/// truth is missing are skipped with a notice.
pub fn cmd_evaluate(
    checkpoint: &Path,
    dataset_path: &Path,
    graphs_dir: Option<&Path>,
    eval: &EvalConfig,
    out_dir: Option<&Path>,
) -> Result<MetricsReport> {
    let dataset = Dataset::load(dataset_path)?;
    let (params, sidecar) = ModelParams::load(checkpoint)?;
    let train_cfg: TrainConfig = sidecar
        .get("train")
        .cloned()
        .map(serde_json::from_value)
        .transpose()?
        .unwrap_or_default();
    let estimate = match graphs_dir {
        Some(dir) => GraphEstimate::load(dir)?,
        None => {
            let mask = build_mask(eval, &dataset)?;
            let mut cfg = train_cfg.clone();
            if let Some(tau) = eval.tau {
                cfg.tau = tau;
            }
            extract_graphs(&params, &dataset, &cfg, mask.as_ref())?.0
        }
    };
    let mut report = MetricsReport::default();
    let post = encode(&dataset.x, &params, 0)?;

    if let (Some(z_true), true) = (&dataset.z, dataset.z.is_some()) {
        let (mcc_z, perm) = mcc(&post.z_mean, z_true, true)?;
        report.mcc_z = Some(mcc_z);
        report.permutation_used = perm.clone();
        let (r2, bw) = r2_kernel(&post.z_mean, z_true, eval.split_seed)?;
        report.r2 = Some(r2);
        report.r2_bandwidth = Some(bw);
        if let (Some(truth), Some(perm)) = (&dataset.truth, &perm) {
            let inst = permute_adjacency(&estimate.latent_inst, perm);
            let lag = permute_adjacency(&estimate.latent_lag, perm);
            report.shd_latent_inst = Some(shd(&inst, &truth.latent_inst, true)?);
            report.shd_latent_lag = Some(shd(&lag, &truth.latent_lag, true)?);
        }
    } else {
        eprintln!("notice: no ground-truth latents; skipping MCC(z) and R2");
    }

    if let Some(s_true) = &dataset.s {
        let (mcc_s, _) = mcc(&post.s_mean, s_true, false)?;
        report.mcc_s = Some(mcc_s);
    } else {
        eprintln!("notice: no ground-truth noises; skipping MCC(s)");
    }

    if let Some(truth) = &dataset.truth {
        report.shd_norm = Some(shd(&estimate.obs_graph, &truth.obs_graph, true)?);
        report.shd_raw = Some(shd(&estimate.obs_graph, &truth.obs_graph, false)?);
        let (tpr, precision) = tpr_precision(&estimate.obs_graph, &truth.obs_graph)?;
        report.tpr = Some(tpr);
        report.precision = Some(precision);
        report.f1 = Some(f1_score(tpr, precision));
    } else {
        eprintln!("notice: no ground-truth graphs; skipping SHD/TPR/precision");
    }

    if let Some(wind_path) = &eval.wind_file {
        let (coords, winds) = read_wind_file(wind_path)?;
        if coords.nrows() == dataset.d_x() {
            let reference = wind_reference_graph(&coords, &winds, eval.wind_step_scale)?;
            let (wshd_n, wtpr, raw) = wshd_wtpr(&estimate.obs_graph, &reference)?;
            report.wshd = Some(wshd_n);
            report.wtpr = Some(wtpr);
            report.wshd_raw = Some(raw);
        } else {
            eprintln!("notice: wind file row count differs from d_x; skipping WSHD/WTPR");
        }
    }

    if let Some(target_path) = &eval.target_file {
        let target = read_single_column(target_path)?;
        if target.len() == dataset.t_len() {
            report.smcc = Some(smcc(&post.z_mean, &target, eval.smcc_subset)?);
        } else {
            eprintln!("notice: target length differs from T; skipping SMCC");
        }
    }

    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        std::fs::write(
            dir.join("metrics.json"),
            serde_json::to_string_pretty(&report)?,
        )?;
        write_metrics_csv_row(&dir.join("metrics.csv"), &report)?;
    }
    Ok(report)
}

fn metric_fields(report: &MetricsReport) -> Vec<(&'static str, Option<f64>)> {
    vec![
        ("shd_norm", report.shd_norm),
        ("shd_raw", report.shd_raw),
        ("tpr", report.tpr),
        ("precision", report.precision),
        ("f1", report.f1),
        ("mcc_s", report.mcc_s),
        ("mcc_z", report.mcc_z),
        ("r2", report.r2),
        ("shd_latent_inst", report.shd_latent_inst),
        ("shd_latent_lag", report.shd_latent_lag),
        ("wshd", report.wshd),
        ("wtpr", report.wtpr),
        ("smcc", report.smcc),
    ]
}

fn write_metrics_csv_row(path: &Path, report: &MetricsReport) -> Result<()> {
    let fields = metric_fields(report);
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(fields.iter().map(|(n, _)| *n))?;
    w.write_record(
        fields
            .iter()
            .map(|(_, v)| v.map_or(String::new(), |x| format!("{x}"))),
    )?;
    w.flush()?;
    Ok(())
}

fn read_wind_file(path: &Path) -> Result<(Array2<f64>, Array2<f64>)> {
    let rows = read_numeric_csv(path)?;
    if rows.is_empty() {
        return Err(CadreError::EmptyData);
    }
    if rows[0].len() != 4 {
        return Err(CadreError::InvalidConfig(
            "wind file needs x,y,u,v columns".into(),
        ));
    }
    let d = rows.len();
    let mut coords = Array2::zeros((d, 2));
    let mut winds = Array2::zeros((d, 2));
    for (i, row) in rows.iter().enumerate() {
        coords[[i, 0]] = row[0];
        coords[[i, 1]] = row[1];
        winds[[i, 0]] = row[2];
        winds[[i, 1]] = row[3];
    }
    Ok((coords, winds))
}

fn read_single_column(path: &Path) -> Result<Array1<f64>> {
    let rows = read_numeric_csv(path)?;
    if rows.is_empty() {
        return Err(CadreError::EmptyData);
    }
    Ok(Array1::from_iter(rows.iter().map(|r| r[0])))
}

/// Reads a rectangular numeric CSV, skipping one header row when the first
/// row fails to parse as numbers.
fn read_numeric_csv(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)?;
    let mut out: Vec<Vec<f64>> = Vec::new();
    let mut width = None;
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let mut row = Vec::with_capacity(record.len());
        let mut ok = true;
        for (j, cell) in record.iter().enumerate() {
            match cell.trim().parse::<f64>() {
                Ok(v) => row.push(v),
                Err(_) => {
                    if i == 0 {
                        ok = false; // header row
                        break;
                    }
                    return Err(CadreError::NonNumericCell {
                        row: i,
                        col: j,
                        value: cell.to_string(),
                    });
                }
            }
        }
        if !ok {
            continue;
        }
        if let Some(w) = width {
            if row.len() != w {
                return Err(CadreError::RaggedRows {
                    row: i,
                    expected: w,
                    got: row.len(),
                });
            }
        } else {
            width = Some(row.len());
        }
        out.push(row);
    }
    Ok(out)
}

/// Ingests a numeric CSV (header row = variable names) into a dataset with
/// z-scored columns and no ground truth.
pub fn ingest_csv(path: &Path, coords_path: Option<&Path>) -> Result<Dataset> {
    let rows = read_numeric_csv(path)?;
    if rows.is_empty() {
        return Err(CadreError::EmptyData);
    }
    let t_len = rows.len();
    let d_x = rows[0].len();
    let mut x = Array2::zeros((t_len, d_x));
    for (t, row) in rows.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            x[[t, j]] = *v;
        }
    }
    // z-score columns
    for j in 0..d_x {
        let mean = x.column(j).sum() / t_len as f64;
        let var = x.column(j).mapv(|v| (v - mean) * (v - mean)).sum() / t_len as f64;
        let std = var.sqrt().max(1e-12);
        for t in 0..t_len {
            x[[t, j]] = (x[[t, j]] - mean) / std;
        }
    }
    let coords = match coords_path {
        Some(p) => {
            let rows = read_numeric_csv(p)?;
            if rows.len() != d_x || rows.first().map_or(true, |r| r.len() != 2) {
                return Err(CadreError::InvalidConfig(format!(
                    "coords file must have {d_x} rows of x,y"
                )));
            }
            let mut c = Array2::zeros((d_x, 2));
            for (i, row) in rows.iter().enumerate() {
                c[[i, 0]] = row[0];
                c[[i, 1]] = row[1];
            }
            Some(c)
        }
        None => None,
    };
    Ok(Dataset {
        x,
        z: None,
        s: None,
        eps_z: None,
        eps_x: None,
        truth: None,
        spec: None,
        coords,
    })
}

/// Runs generate -> train -> extract -> evaluate for every seed, in
/// parallel workers capped by `CADRE_THREADS`, then aggregates.
pub fn cmd_experiment(cfg: &ExperimentConfig, out_dir: &Path, overwrite: bool) -> Result<RunRecord> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)?;
    ensure_target(&out_dir.join("run_record.json"), overwrite)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_threads())
        .build()
        .map_err(|e| CadreError::InvalidConfig(format!("thread pool: {e}")))?;
    let records: Vec<SeedRecord> = pool.install(|| {
        cfg.seeds
            .par_iter()
            .map(|&seed| run_one_seed(cfg, out_dir, seed, overwrite))
            .collect()
    });
    let mut aggregate: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for rec in records.iter().filter(|r| r.status == "ok") {
        if let Some(m) = &rec.metrics {
            for (name, value) in metric_fields(m) {
                if let Some(v) = value {
                    aggregate.entry(name.to_string()).or_default().push(v);
                }
            }
        }
    }
    let aggregate: BTreeMap<String, (f64, f64, usize)> = aggregate
        .into_iter()
        .map(|(k, vs)| {
            let n = vs.len();
            let mean = vs.iter().sum::<f64>() / n as f64;
            let std = if n > 1 {
                (vs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
            } else {
                0.0
            };
            (k, (mean, std, n))
        })
        .collect();
    let best_seed = records
        .iter()
        .filter(|r| r.status == "ok")
        .filter_map(|r| r.metrics.as_ref().and_then(|m| m.mcc_z).map(|v| (r.seed, v)))
        .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
        .map(|(s, _)| s);
    let record = RunRecord {
        config_hash: cfg.hash(),
        config: cfg.clone(),
        records,
        aggregate,
        best_seed,
    };
    std::fs::write(
        out_dir.join("run_record.json"),
        serde_json::to_string_pretty(&record)?,
    )?;
    write_aggregate_table(out_dir, &record)?;
    Ok(record)
}

fn worker_threads() -> usize {
    std::env::var("CADRE_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

fn run_one_seed(cfg: &ExperimentConfig, out_dir: &Path, seed: u64, overwrite: bool) -> SeedRecord {
    let t0 = Instant::now();
    let seed_dir = out_dir.join(format!("seed_{seed}"));
    let mut record = SeedRecord {
        seed,
        status: "ok".into(),
        metrics: None,
        dataset: seed_dir.join("dataset.arz"),
        checkpoint: seed_dir.join("checkpoint.arz"),
        loss_log: seed_dir.join("loss.csv"),
        graphs_dir: seed_dir.join("graphs"),
        wall_ms: 0.0,
    };
    let run = || -> Result<MetricsReport> {
        let dataset_path = cmd_generate(cfg, &seed_dir, Some(seed), overwrite, false)?;
        let ckpt = cmd_train(cfg, &dataset_path, &seed_dir, Some(seed), None, overwrite)?;
        let graphs = cmd_extract(&ckpt, &dataset_path, &seed_dir, None, &cfg.eval, overwrite)?;
        cmd_evaluate(&ckpt, &dataset_path, Some(&graphs), &cfg.eval, Some(&seed_dir))
    };
    match run() {
        Ok(metrics) => record.metrics = Some(metrics),
        Err(e) => record.status = format!("failed: {e}"),
    }
    record.wall_ms = t0.elapsed().as_secs_f64() * 1e3;
    record
}

/// `aggregate.csv` (metric, mean, std, n) plus a readable `table.txt` with
/// rows per metric.
fn write_aggregate_table(out_dir: &Path, record: &RunRecord) -> Result<()> {
    let mut w = csv::Writer::from_path(out_dir.join("aggregate.csv"))?;
    w.write_record(["metric", "mean", "std", "n"])?;
    for (name, (mean, std, n)) in &record.aggregate {
        w.write_record([
            name.clone(),
            format!("{mean}"),
            format!("{std}"),
            format!("{n}"),
        ])?;
    }
    w.flush()?;
    let mut text = String::new();
    let ok = record.records.iter().filter(|r| r.status == "ok").count();
    text.push_str(&format!(
        "config {}  seeds ok {}/{}\n",
        record.config_hash,
        ok,
        record.records.len()
    ));
    text.push_str(&format!("{:<18} {:>10} {:>10} {:>4}\n", "metric", "mean", "std", "n"));
    for (name, (mean, std, n)) in &record.aggregate {
        text.push_str(&format!("{name:<18} {mean:>10.4} {std:>10.4} {n:>4}\n"));
    }
    for rec in &record.records {
        if rec.status != "ok" {
            text.push_str(&format!("seed {}: {}\n", rec.seed, rec.status));
        }
    }
    std::fs::write(out_dir.join("table.txt"), text)?;
    Ok(())
}

/// Renders figures for a finished run: loss curves, adjacency heatmaps, and
/// a spatial overlay when coordinates exist.
pub fn cmd_plot(run_dir: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let record_path = run_dir.join("run_record.json");
    let seed_dirs: Vec<PathBuf> = if record_path.exists() {
        let record: RunRecord = serde_json::from_str(&std::fs::read_to_string(&record_path)?)?;
        record
            .records
            .iter()
            .map(|r| run_dir.join(format!("seed_{}", r.seed)))
            .collect()
    } else {
        vec![run_dir.to_path_buf()]
    };
    std::fs::create_dir_all(out_dir)?;
    for dir in seed_dirs {
        let tag = dir
            .file_name()
            .map(|s| s.to_string_lossy().to_string())
            .unwrap_or_else(|| "run".into());
        let loss_csv = dir.join("loss.csv");
        if loss_csv.exists() {
            let series = read_loss_series(&loss_csv)?;
            let named: Vec<(&str, Vec<f64>)> = vec![
                ("total", series.0),
                ("recon", series.1),
            ];
            let p = out_dir.join(format!("{tag}_loss.png"));
            plot::line_plot(&named, &p)?;
            written.push(p);
        }
        let graphs_dir = dir.join("graphs");
        if graphs_dir.join("graphs.arz").exists() {
            let est = GraphEstimate::load(&graphs_dir)?;
            for (name, m) in [
                ("obs_graph", &est.obs_graph),
                ("latent_inst", &est.latent_inst),
                ("latent_lag", &est.latent_lag),
            ] {
                let p = out_dir.join(format!("{tag}_{name}.png"));
                plot::heatmap(m, &p)?;
                written.push(p);
            }
            let dataset_path = dir.join("dataset.arz");
            if dataset_path.exists() {
                let ds = Dataset::load(&dataset_path)?;
                if let Some(coords) = &ds.coords {
                    let p = out_dir.join(format!("{tag}_overlay.png"));
                    plot::graph_overlay(coords, &est.obs_graph, &p)?;
                    written.push(p);
                }
            }
        }
    }
    Ok(written)
}

/// Downsampled per-step series (total, recon) from a loss log, capped to
/// 2000 points for plotting.
fn read_loss_series(path: &Path) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut total = Vec::new();
    let mut recon = Vec::new();
    for record in rdr.records() {
        let record = record?;
        if record.len() >= 3 {
            if let (Ok(t), Ok(r)) = (record[1].parse::<f64>(), record[2].parse::<f64>()) {
                total.push(t);
                recon.push(r);
            }
        }
    }
    let stride = (total.len() / 2000).max(1);
    Ok((
        total.iter().step_by(stride).copied().collect(),
        recon.iter().step_by(stride).copied().collect(),
    ))
}
