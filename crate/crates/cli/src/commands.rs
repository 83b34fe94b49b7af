use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use subnetcl_core::analysis::{ablate_reused, lipschitz_probe, mask_correlation, ReuseCategory};
use subnetcl_core::codec::maskfile::{mask_file_name, mask_from_bytes, mask_to_bytes, read_mask_dir};
use subnetcl_core::codec::{decode_masks, encode_masks, EncodedTicketBundle};
use subnetcl_core::data::StreamDescriptor;
use subnetcl_core::fscil::run_fscil;
use subnetcl_core::mask::{mask_stats, Mask, TaskMask};
use subnetcl_core::til::{evaluate, run_sequence, RunResult, TaskTiming, TilMetrics, TilMode};

use crate::config::ConfigFile;
use crate::error::CliError;
use crate::experiment::{
    build_sessions, build_stream, fscil_experiment, til_experiment, AnalyzeSettings, FscilExperiment, Overrides,
    TilExperiment,
};
use crate::report::{
    accuracy_matrix_csv, capacity_curve_csv, check_fresh, fscil_metrics_csv, num, sessions_csv, til_metrics_csv,
    verify_manifest, write_atomic, OutputDir,
};

pub const SUMMARY: &str = "summary.json";

/// Everything needed to rebuild a run from its summary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Provenance {
    pub config_path: PathBuf,
    pub config_text: String,
    pub seed: Option<u64>,
    pub capacity: Option<f64>,
    pub mode: Option<TilMode>,
}

impl Provenance {
    fn new(cfg: &ConfigFile, ov: &Overrides) -> Self {
        Self {
            config_path: std::fs::canonicalize(cfg.path()).unwrap_or_else(|_| cfg.path().to_path_buf()),
            config_text: cfg.text().to_string(),
            seed: ov.seed,
            capacity: ov.capacity,
            mode: ov.mode,
        }
    }

    fn restore(&self) -> Result<(ConfigFile, Overrides), CliError> {
        let cfg = ConfigFile::parse(&self.config_path, &self.config_text)?;
        let ov = Overrides {
            seed: self.seed,
            capacity: self.capacity,
            mode: self.mode,
        };
        Ok((cfg, ov))
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
struct Threads {
    requested: usize,
    used: usize,
}

/// `SUBNETCL_THREADS` caps kernel parallelism; the kernels here are serial.
fn threads() -> Result<Threads, CliError> {
    let requested = match std::env::var("SUBNETCL_THREADS") {
        Err(_) => 1,
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n >= 1)
            .ok_or_else(|| CliError::config(format!("SUBNETCL_THREADS must be a positive integer, got `{v}`")))?,
    };
    Ok(Threads { requested, used: 1 })
}

#[derive(Serialize)]
struct TilSummary<'a> {
    command: &'static str,
    version: &'static str,
    status: &'static str,
    error: Option<String>,
    seed: u64,
    provenance: &'a Provenance,
    experiment: &'a TilExperiment,
    stream: &'a StreamDescriptor,
    threads: Threads,
    tasks_requested: usize,
    tasks_completed: usize,
    metrics: Option<&'a TilMetrics>,
    epoch_losses: &'a [Vec<f64>],
    timings: &'a [TaskTiming],
}

pub struct RunArgs<'a> {
    pub config: &'a Path,
    pub out: &'a Path,
    pub force: bool,
    pub overrides: Overrides,
}

fn write_masks(out: &mut OutputDir, masks: &[TaskMask]) -> Result<(), CliError> {
    for (t, m) in masks.iter().enumerate() {
        out.write(&format!("masks/{}", mask_file_name(t + 1)), &mask_to_bytes(m))?;
    }
    Ok(())
}

pub fn til(args: RunArgs<'_>) -> Result<(), CliError> {
    let threads = threads()?;
    let cfg = ConfigFile::read(args.config)?;
    let prov = Provenance::new(&cfg, &args.overrides);
    let (exp, _) = til_experiment(cfg, &args.overrides)?;
    let mut out = OutputDir::create(args.out, args.force)?;
    let stream = build_stream(&exp)?;
    let (run, error) = match run_sequence(&stream, &exp.run) {
        Ok(r) => (r, None),
        Err(p) => (*p.partial, Some(p.error)),
    };
    let summary = TilSummary {
        command: "til",
        version: env!("CARGO_PKG_VERSION"),
        status: if error.is_none() { "complete" } else { "partial" },
        error: error.as_ref().map(ToString::to_string),
        seed: exp.seed,
        provenance: &prov,
        experiment: &exp,
        stream: &stream.descriptor,
        threads,
        tasks_requested: run.tasks_requested,
        tasks_completed: run.masks.len(),
        metrics: run.metrics.as_ref(),
        epoch_losses: &run.epoch_losses,
        timings: &run.timings,
    };
    out.write_json(SUMMARY, &summary)?;
    write_til_tables(&mut out, &run)?;
    out.finish()?;
    match error {
        None => Ok(()),
        Some(e) => Err(CliError::runtime(format!(
            "{e}; partial results for {} of {} tasks in {}",
            run.masks.len(),
            run.tasks_requested,
            args.out.display()
        ))),
    }
}

fn write_til_tables(out: &mut OutputDir, run: &RunResult) -> Result<(), CliError> {
    let t = run.masks.len();
    out.write("accuracy_matrix.csv", accuracy_matrix_csv(&run.matrix, run.tasks_requested.max(t)).as_bytes())?;
    if let Some(m) = &run.metrics {
        out.write("metrics.csv", til_metrics_csv(m).as_bytes())?;
    }
    if t > 0 {
        out.write("capacity_curve.csv", capacity_curve_csv(&run.masks)?.as_bytes())?;
    }
    if let Some(b) = &run.bundle {
        out.write("masks.wsnt", &b.to_bytes()?)?;
    }
    write_masks(out, &run.masks)
}

#[derive(Serialize)]
struct FscilSummary<'a> {
    command: &'static str,
    version: &'static str,
    status: &'static str,
    seed: u64,
    provenance: &'a Provenance,
    experiment: &'a FscilExperiment,
    threads: Threads,
    sessions: &'a [subnetcl_core::fscil::SessionRow],
    gap_vs_reference: Option<f64>,
    base_epoch_losses: &'a [f64],
    incremental_losses: &'a [Vec<f64>],
}

pub fn fscil(args: RunArgs<'_>) -> Result<(), CliError> {
    let threads = threads()?;
    if args.overrides.mode.is_some() {
        return Err(CliError::config("--mode applies to til runs only"));
    }
    let cfg = ConfigFile::read(args.config)?;
    let prov = Provenance::new(&cfg, &args.overrides);
    let exp = fscil_experiment(cfg, &args.overrides)?;
    let mut out = OutputDir::create(args.out, args.force)?;
    let sessions = build_sessions(&exp)?;
    let run = run_fscil(&sessions, &exp.run)?;
    out.write_json(
        SUMMARY,
        &FscilSummary {
            command: "fscil",
            version: env!("CARGO_PKG_VERSION"),
            status: "complete",
            seed: exp.seed,
            provenance: &prov,
            experiment: &exp,
            threads,
            sessions: &run.rows,
            gap_vs_reference: run.gap_vs_reference,
            base_epoch_losses: &run.base.epoch_losses,
            incremental_losses: &run.incremental_losses,
        },
    )?;
    out.write("metrics.csv", fscil_metrics_csv(&run.rows).as_bytes())?;
    out.write(
        "sessions.csv",
        sessions_csv(&run.rows, exp.run.reference.as_deref(), run.gap_vs_reference).as_bytes(),
    )?;
    out.finish()?;
    Ok(())
}

pub fn encode(input: &Path, output: &Path, force: bool) -> Result<EncodedTicketBundle, CliError> {
    if !input.is_dir() {
        return Err(CliError::config(format!("mask directory {} does not exist", input.display())));
    }
    check_fresh(output, force)?;
    let masks = read_mask_dir(input)?;
    if masks.is_empty() {
        return Err(CliError::config(format!("no mask files in {}", input.display())));
    }
    let bundle = encode_masks(&masks)?;
    write_atomic(output, &bundle.to_bytes()?)?;
    Ok(bundle)
}

/// Decodes into `.wsnm` files. Shapes and capacities come from `like` when
/// given; otherwise layers are `1 x numel` and the capacity is the selected
/// percentage of the whole mask.
pub fn decode(input: &Path, output: &Path, like: Option<&Path>, force: bool) -> Result<usize, CliError> {
    if !input.is_file() {
        return Err(CliError::config(format!("bundle {} does not exist", input.display())));
    }
    let bundle = EncodedTicketBundle::read(input)?;
    let template = like.map(read_mask_dir).transpose()?;
    let shapes: Vec<(usize, usize)> = match &template {
        Some(t) if !t.is_empty() => t[0].layers.iter().map(|l| l.shape()).collect(),
        _ => bundle.layer_numels.iter().map(|&n| (1, n as usize)).collect(),
    };
    let decoded = decode_masks(&bundle, &shapes)?;
    let mut out = OutputDir::create(output, force)?;
    for (t, layers) in decoded.into_iter().enumerate() {
        let capacity = match template.as_ref().and_then(|m| m.get(t)) {
            Some(m) => m.capacity,
            None => {
                let ones: usize = layers.iter().map(|l| l.count_ones()).sum();
                let numel: usize = layers.iter().map(|l| l.len()).sum();
                100.0 * ones as f64 / numel.max(1) as f64
            }
        };
        out.write(&mask_file_name(t + 1), &mask_to_bytes(&TaskMask { capacity, layers }))?;
    }
    Ok(out.finish()?.len())
}

pub enum AnalyzeSource<'a> {
    Config { path: &'a Path, overrides: Overrides },
    Run(&'a Path),
}

#[derive(Deserialize)]
struct StoredSummary {
    provenance: Provenance,
}

fn read_summary(run: &Path) -> Result<Provenance, CliError> {
    let path = run.join(SUMMARY);
    let text = std::fs::read_to_string(&path)
        .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
    let s: StoredSummary = serde_json::from_str(&text)
        .map_err(|e| CliError::config(format!("{} is not a til run summary: {e}", path.display())))?;
    Ok(s.provenance)
}

pub fn analyze(source: AnalyzeSource<'_>, output: &Path, force: bool) -> Result<(), CliError> {
    let (cfg, ov, from_run) = match source {
        AnalyzeSource::Config { path, overrides } => (ConfigFile::read(path)?, overrides, None),
        AnalyzeSource::Run(dir) => {
            let (c, o) = read_summary(dir)?.restore()?;
            (c, o, Some(dir))
        }
    };
    let prov = Provenance::new(&cfg, &ov);
    let (exp, settings) = til_experiment(cfg, &ov)?;
    let settings = settings.unwrap_or(AnalyzeSettings {
        scales: vec![1e-3, 1e-2, 1e-1],
        pairs: 8,
        probe_samples: 256,
    });
    let mut out = OutputDir::create(output, force)?;
    let stream = build_stream(&exp)?;
    let run = run_sequence(&stream, &exp.run).map_err(|p| CliError::runtime(p.to_string()))?;
    if let Some(dir) = from_run {
        let stored = read_mask_dir(&dir.join("masks"))?;
        if stored != run.masks {
            return Err(CliError::runtime(format!(
                "masks regenerated from {} differ from the stored ones",
                dir.display()
            )));
        }
    }
    let masks = &run.masks;
    let t_last = masks.len();

    let corr = mask_correlation(masks)?;
    let mut text = String::from("task");
    for j in 1..=t_last {
        let _ = write!(text, ",task_{j}");
    }
    text.push('\n');
    for i in 0..t_last {
        text.push_str(&(i + 1).to_string());
        for j in 0..t_last {
            let _ = write!(text, ",{}", num(corr.values[[i, j]]));
        }
        text.push('\n');
    }
    out.write("correlation.csv", text.as_bytes())?;

    let mut text = String::from("task,layer,all_used,per_task,new_per_task,reused_per_task,reused_for_all,reused_share,new_share\n");
    for t in 1..=t_last {
        let r = mask_stats(masks, t)?;
        let rows = r.layers.iter().enumerate().map(|(l, f)| (l.to_string(), f)).chain([("all".to_string(), &r.total)]);
        for (layer, f) in rows {
            let _ = writeln!(
                text,
                "{t},{layer},{},{},{},{},{},{},{}",
                num(f.all_used),
                num(f.per_task),
                num(f.new_per_task),
                num(f.reused_per_task),
                num(f.reused_for_all),
                num(f.reused_share),
                num(f.new_share)
            );
        }
    }
    out.write("reuse.csv", text.as_bytes())?;

    let mut text = String::from("task,category,accuracy,unablated\n");
    for t in 1..=t_last {
        let test = &stream.tasks[t - 1].test;
        let full = evaluate(&run.store, Mask::task(&masks[t - 1]), t as u32, test)?;
        for cat in ["reused-per-task", "reused-for-all", "new-per-task"] {
            let category: ReuseCategory = cat.parse()?;
            let acc = ablate_reused(&run.store, masks, t, category, test, None)?;
            let _ = writeln!(text, "{t},{cat},{},{}", num(acc), num(full));
        }
    }
    out.write("ablation.csv", text.as_bytes())?;

    let test = &stream.tasks[t_last - 1].test;
    let n = settings.probe_samples.min(test.len()).max(1);
    let rows: Vec<usize> = (0..n).collect();
    let batch = test.subset(&rows);
    let probe = lipschitz_probe(
        &run.store,
        &masks[t_last - 1],
        t_last as u32,
        &batch.features,
        &batch.labels,
        &settings.scales,
        settings.pairs,
        exp.seed,
    )?;
    let mut text = String::from("scale,pair,dense_ratio,masked_ratio\n");
    for r in &probe.rows {
        let _ = writeln!(
            text,
            "{},{},{},{}",
            num(r.scale),
            r.pair,
            num(r.dense_ratio),
            r.masked_ratio.map(num).unwrap_or_default()
        );
    }
    out.write("smoothness.csv", text.as_bytes())?;

    #[derive(Serialize)]
    struct AnalyzeSummary<'a> {
        command: &'static str,
        version: &'static str,
        seed: u64,
        provenance: &'a Provenance,
        settings: &'a AnalyzeSettings,
        tasks: usize,
        probe_skipped: usize,
        metrics: Option<&'a TilMetrics>,
    }
    out.write_json(
        SUMMARY,
        &AnalyzeSummary {
            command: "analyze",
            version: env!("CARGO_PKG_VERSION"),
            seed: exp.seed,
            provenance: &prov,
            settings: &settings,
            tasks: t_last,
            probe_skipped: probe.skipped,
            metrics: run.metrics.as_ref(),
        },
    )?;
    out.finish()?;
    Ok(())
}

fn pct(v: &serde_json::Value) -> String {
    v.as_f64().map(|x| format!("{:.2}", 100.0 * x)).unwrap_or_else(|| "-".into())
}

/// Verifies a run directory and renders its headline numbers.
pub fn report(run: &Path) -> Result<String, CliError> {
    if !run.is_dir() {
        return Err(CliError::config(format!("run directory {} does not exist", run.display())));
    }
    let entries = verify_manifest(run)?;
    let path = run.join(SUMMARY);
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))?;
    let s: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))?;
    let mut out = format!("{}: {} files verified\n", run.display(), entries.len());
    match s["command"].as_str() {
        Some("til") | Some("analyze") => {
            let m = &s["metrics"];
            let run_cfg = &s["experiment"]["run"];
            let _ = writeln!(out, "mode     c      tasks  ACC     BWT     FWT     CAP");
            let _ = writeln!(
                out,
                "{:<8} {:<6} {:<6} {:<7} {:<7} {:<7} {}",
                run_cfg["mode"].as_str().unwrap_or("-"),
                run_cfg["capacity"].as_f64().map_or("-".into(), |c| c.to_string()),
                m["tasks"].as_u64().map_or("-".into(), |t| t.to_string()),
                pct(&m["acc"]),
                pct(&m["bwt"]),
                pct(&m["fwt"]),
                pct(&m["capacity"]["cap_formula"])
            );
            if s["status"].as_str() == Some("partial") {
                let _ = writeln!(out, "partial run: {}", s["error"].as_str().unwrap_or(""));
            }
        }
        Some("fscil") => {
            let rows = s["sessions"].as_array().cloned().unwrap_or_default();
            let header: Vec<String> = rows.iter().map(|r| format!("s{}", r["session"])).collect();
            let _ = writeln!(out, "{} gap", header.join(" "));
            let vals: Vec<String> = rows.iter().map(|r| pct(&r["accuracy"])).collect();
            let _ = writeln!(out, "{} {}", vals.join(" "), pct(&s["gap_vs_reference"]));
        }
        _ => return Err(CliError::runtime(format!("{} has no recognised command", path.display()))),
    }
    Ok(out)
}

/// Rebuilds a mask from bytes; used by tests comparing directories.
pub fn read_mask_file(path: &Path) -> Result<TaskMask, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))?;
    Ok(mask_from_bytes(&bytes)?)
}
