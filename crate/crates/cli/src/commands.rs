use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context};
use chrono::NaiveDate;
use log::warn;
use nutf::harness::{
    bench_point, certain_validation, generate, mask_validation, read_observations, score_topk,
    write_observations, BenchRow, SynthConfig,
};
use nutf::ingest::{
    build_candidate_sets, read_category_map, read_updates, read_venues, CategoryMap,
    PipelineConfig, SlotMode, SlotScheme, VenueIndex,
};
use nutf::io::{read_omega, write_omega, OmegaMeta};
use nutf::snapshot;
use nutf::solver::{fit, rank_categories, SolverConfig};
use nutf::{CandidateSets, LowRankModel};
use serde::Serialize;
use serde_json::json;
use thiserror::Error;

use crate::args::*;

pub const OMEGA_FILE: &str = "omega.jsonl";
pub const META_FILE: &str = "meta.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const MODEL_FILE: &str = "model.nutf";
pub const X_FILE: &str = "x.nutf";
pub const TRACE_FILE: &str = "trace.jsonl";

/// Doubling N must scale per-iteration time by a factor in this band.
pub const SCALING_BAND: (f64, f64) = (1.4, 2.6);

/// A check that ran to completion but did not pass.
#[derive(Debug, Error)]
#[error("{0}")]
pub struct CheckFailed(pub String);

/// Per-run bookkeeping: resolved configuration, timing, files produced.
pub struct Run<'a> {
    cli: &'a Cli,
    threads: usize,
    started: Instant,
    started_unix_s: u64,
    outputs: Vec<String>,
}

impl<'a> Run<'a> {
    pub fn new(cli: &'a Cli, threads: usize) -> Self {
        Run {
            cli,
            threads,
            started: Instant::now(),
            started_unix_s: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            outputs: Vec::new(),
        }
    }

    fn create(&mut self, dir: &Path, name: &str) -> anyhow::Result<BufWriter<File>> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join(name);
        let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        self.outputs.push(name.to_string());
        Ok(BufWriter::new(f))
    }

    fn write(&mut self, dir: &Path, name: &str, bytes: &[u8]) -> anyhow::Result<()> {
        let mut w = self.create(dir, name)?;
        w.write_all(bytes)?;
        w.flush()?;
        Ok(())
    }

    /// Writes manifest.json: resolved configuration, version, timings,
    /// result summary and the files produced.
    fn finish(self, dir: &Path, results: serde_json::Value) -> anyhow::Result<()> {
        #[derive(Serialize)]
        struct Manifest<'m> {
            tool: &'static str,
            version: &'static str,
            command: &'static str,
            config: &'m Cli,
            threads: usize,
            started_unix_s: u64,
            elapsed_s: f64,
            outputs: &'m [String],
            results: serde_json::Value,
        }
        let manifest = Manifest {
            tool: "nutf",
            version: env!("CARGO_PKG_VERSION"),
            command: self.cli.command.name(),
            config: self.cli,
            threads: self.threads,
            started_unix_s: self.started_unix_s,
            elapsed_s: self.started.elapsed().as_secs_f64(),
            outputs: &self.outputs,
            results,
        };
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)? + "\n")?;
        Ok(())
    }
}

fn open(path: &Path) -> anyhow::Result<BufReader<File>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(BufReader::new(f))
}

fn read_model(path: &Path) -> anyhow::Result<LowRankModel> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    snapshot::decode_model(&bytes).with_context(|| path.display().to_string())
}

fn read_meta(path: &Path) -> anyhow::Result<OmegaMeta> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    OmegaMeta::from_json(&text).with_context(|| path.display().to_string())
}

/// Loads omega.jsonl and meta.json from a directory.
pub fn load_omega(dir: &Path) -> anyhow::Result<(CandidateSets, OmegaMeta)> {
    let meta = read_meta(&dir.join(META_FILE))?;
    let path = dir.join(OMEGA_FILE);
    let omega = read_omega(open(&path)?, meta.dims).with_context(|| path.display().to_string())?;
    Ok((omega, meta))
}

fn save_omega(run: &mut Run<'_>, dir: &Path, omega: &CandidateSets, meta: &OmegaMeta) -> anyhow::Result<()> {
    let mut w = run.create(dir, OMEGA_FILE)?;
    write_omega(omega, &mut w)?;
    w.flush()?;
    run.write(dir, META_FILE, (meta.to_json() + "\n").as_bytes())
}

fn save_observations(
    run: &mut Run<'_>,
    dir: &Path,
    name: &str,
    obs: &[nutf::harness::Observation],
) -> anyhow::Result<()> {
    let mut w = run.create(dir, name)?;
    write_observations(obs, &mut w)?;
    w.flush()?;
    Ok(())
}

fn omega_stats(omega: &CandidateSets) -> serde_json::Value {
    let d = omega.dims();
    let mean = if omega.n_blocks() == 0 {
        0.0
    } else {
        omega.total_size() as f64 / omega.n_blocks() as f64
    };
    println!(
        "N={} T={} C={} pairs={} |Omega|={} mean|Omega_ij|={mean:.3}",
        d.n_users,
        d.n_slots,
        d.n_categories,
        omega.n_blocks(),
        omega.total_size()
    );
    json!({
        "n_users": d.n_users,
        "n_slots": d.n_slots,
        "n_categories": d.n_categories,
        "pairs": omega.n_blocks(),
        "omega_size": omega.total_size(),
        "mean_set_size": mean,
    })
}

pub fn synth(mut run: Run<'_>, a: &SynthArgs) -> anyhow::Result<()> {
    let cfg = SynthConfig {
        n_users: a.users,
        n_slots: a.slots,
        n_categories: a.categories,
        n_classes: a.classes,
        slot_density: a.density,
        candidates_per_update: a.cands,
        seed: a.seed,
    };
    let data = generate(&cfg)?;
    let omega = match a.mask {
        Some(fraction) => {
            let (masked, validation) = mask_validation(&data.omega, &data.truth, fraction, a.seed)?;
            save_observations(&mut run, &a.out, "validation.jsonl", &validation)?;
            masked
        }
        None => data.omega,
    };
    save_omega(&mut run, &a.out, &omega, &OmegaMeta::new(data.dims))?;
    save_observations(&mut run, &a.out, "truth.jsonl", &data.truth.observations)?;
    let classes = json!({ "classes": data.truth.classes, "schedule": data.schedule });
    run.write(&a.out, "classes.json", (classes.to_string() + "\n").as_bytes())?;
    let stats = omega_stats(&omega);
    run.finish(&a.out, stats)
}

fn parse_day(s: &str) -> anyhow::Result<i64> {
    let date = NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .map_err(|e| nutf::NutfError::InvalidInput(format!("--start-date {s:?}: {e}")))?;
    let epoch = NaiveDate::from_ymd_opt(1970, 1, 1).expect("valid date");
    Ok(date.signed_duration_since(epoch).num_days())
}

pub fn preprocess(mut run: Run<'_>, a: &PreprocessArgs) -> anyhow::Result<()> {
    let updates = read_updates(open(&a.updates)?).with_context(|| a.updates.display().to_string())?;
    let venues = read_venues(open(&a.venues)?, a.venue_radius_m)
        .with_context(|| a.venues.display().to_string())?;
    if venues.is_empty() {
        warn!("venue catalog {} is empty; no candidate sets will be produced", a.venues.display());
    }
    let categories = match &a.category_map {
        Some(path) => {
            let pairs = read_category_map(open(path)?).with_context(|| path.display().to_string())?;
            CategoryMap::from_pairs(pairs, a.other_category.as_deref())?
        }
        None => {
            let mut names: Vec<&str> = venues.iter().map(|v| v.category.as_str()).collect();
            names.sort_unstable();
            names.dedup();
            // An empty catalog still needs C >= 1.
            let other = a.other_category.as_deref().or(names.is_empty().then_some("other"));
            CategoryMap::from_pairs(names.iter().map(|n| (n.to_string(), n.to_string())), other)?
        }
    };
    let mode: SlotMode = a.slot_mode.into();
    let inferred = SlotScheme::covering(mode, &updates)
        .ok_or_else(|| nutf::NutfError::InvalidInput("no location updates".into()))?;
    let epoch_day = match &a.start_date {
        Some(s) => parse_day(s)?,
        None => inferred.epoch_day,
    };
    let n_days = match a.days {
        Some(d) => d,
        None => {
            let last = inferred.epoch_day + inferred.n_days as i64 - 1;
            usize::try_from(last - epoch_day + 1).unwrap_or(0).max(1)
        }
    };
    if n_days == 0 {
        bail!(nutf::NutfError::InvalidInput("--days must be at least 1".into()));
    }
    let scheme = SlotScheme { mode, epoch_day, n_days };
    if !(a.min_dwell_min.is_finite() && a.min_dwell_min >= 0.0) {
        bail!(nutf::NutfError::InvalidInput("--min-dwell-min must be >= 0".into()));
    }
    let cfg = PipelineConfig {
        scheme,
        min_dwell_s: (a.min_dwell_min * 60.0).round() as i64,
    };
    let index = VenueIndex::new(venues)?;
    let pre = build_candidate_sets(&updates, &index, &categories, &cfg)?;
    if pre.omega.is_empty() {
        warn!("no update intersected any venue; the candidate-set file is empty");
    }
    let mut omega = pre.omega;
    let mut results = json!({});
    if a.certain_holdout {
        let (replaced, validation) = certain_validation(&omega)?;
        save_observations(&mut run, &a.out, "validation.jsonl", &validation)?;
        results["validation_pairs"] = json!(validation.len());
        omega = replaced;
    }
    let meta = OmegaMeta {
        dims: *omega.dims(),
        users: pre.users,
        categories: pre.categories,
        slots: Some(scheme),
    };
    save_omega(&mut run, &a.out, &omega, &meta)?;
    results["omega"] = omega_stats(&omega);
    results["updates"] = json!(updates.len());
    run.finish(&a.out, results)
}

pub fn fit_cmd(mut run: Run<'_>, a: &FitArgs) -> anyhow::Result<()> {
    let (omega, _) = load_omega(&a.input)?;
    let cfg = SolverConfig {
        rank: a.rank,
        outer_iters: a.iters,
        power_iters: a.power_iters,
        tol: a.tol,
        seed: a.seed,
        deterministic: a.deterministic,
        orientation: a.orientation.into(),
    };
    let result = fit(Arc::new(omega), &cfg)?;
    run.write(&a.out, MODEL_FILE, &snapshot::encode_model(&result.model))?;
    if !a.no_x {
        run.write(&a.out, X_FILE, &snapshot::encode_x(&result.x))?;
    }
    let mut w = run.create(&a.out, TRACE_FILE)?;
    result.trace.write_jsonl(&mut w)?;
    w.flush()?;

    let iters = result.trace.records.len();
    let objective = result.trace.final_objective().unwrap_or(0.0);
    let seconds: f64 = result.trace.records.iter().map(|r| r.seconds).sum();
    println!(
        "iterations={iters} converged={} objective={objective:.6e} seconds={seconds:.3}",
        result.trace.converged
    );
    run.finish(
        &a.out,
        json!({
            "iterations": iters,
            "converged": result.trace.converged,
            "final_objective": objective,
            "fit_seconds": seconds,
            "max_block_sum_error": result.x.max_block_sum_error(),
        }),
    )
}

fn resolve_category(token: &str, meta: Option<&OmegaMeta>, n: usize) -> anyhow::Result<usize> {
    if let Ok(k) = token.trim().parse::<usize>() {
        if k < n {
            return Ok(k);
        }
        bail!(nutf::NutfError::IndexOutOfRange { what: "category", index: k, limit: n });
    }
    meta.and_then(|m| m.category_index(token.trim()))
        .ok_or_else(|| nutf::NutfError::UnknownCategory(token.to_string()).into())
}

pub fn predict(run: Run<'_>, a: &PredictArgs) -> anyhow::Result<()> {
    let model = read_model(&a.model)?;
    let dims = *model.dims();
    let meta = a.meta.as_deref().map(read_meta).transpose()?;
    if let Some(m) = &meta {
        if m.dims != dims {
            bail!(nutf::NutfError::DimensionMismatch(format!(
                "meta dims {:?} vs model dims {dims:?}",
                m.dims
            )));
        }
    }
    let user = match a.user.parse::<usize>() {
        Ok(u) => u,
        Err(_) => meta
            .as_ref()
            .and_then(|m| m.users.iter().position(|x| x == &a.user))
            .ok_or_else(|| nutf::NutfError::InvalidInput(format!("unknown user {:?}", a.user)))?,
    };
    let restrict = a
        .restrict
        .as_ref()
        .map(|toks| {
            toks.iter()
                .map(|t| resolve_category(t, meta.as_ref(), dims.n_categories))
                .collect::<anyhow::Result<Vec<_>>>()
        })
        .transpose()?;
    let ranked = rank_categories(&model, user, a.slot, restrict.as_deref())?;
    if a.k == 0 || a.k > ranked.len() {
        bail!(nutf::NutfError::InvalidInput(format!(
            "k = {} must be in [1, {}]",
            a.k,
            ranked.len()
        )));
    }
    let name = |k: usize| meta.as_ref().and_then(|m| m.categories.get(k).cloned());
    let ranking: Vec<_> = ranked[..a.k]
        .iter()
        .map(|&(k, score)| json!({ "category": k, "name": name(k), "score": score }))
        .collect();
    let out = json!({ "user": user, "slot": a.slot, "ranking": ranking });
    println!("{out}");
    match &a.out {
        Some(dir) => {
            let mut run = run;
            run.write(dir, "prediction.json", (out.to_string() + "\n").as_bytes())?;
            run.finish(dir, out)
        }
        None => Ok(()),
    }
}

pub fn eval(run: Run<'_>, a: &EvalArgs) -> anyhow::Result<()> {
    let model = read_model(&a.model)?;
    let validation = read_observations(open(&a.validation)?, Some(model.dims()))
        .with_context(|| a.validation.display().to_string())?;
    let restrict = match &a.restrict {
        Some(dir) => {
            let (omega, _) = load_omega(dir)?;
            if omega.dims() != model.dims() {
                bail!(nutf::NutfError::DimensionMismatch(format!(
                    "restrict set dims {:?} vs model dims {:?}",
                    omega.dims(),
                    model.dims()
                )));
            }
            Some(omega)
        }
        None => None,
    };
    let report = score_topk(&model, &validation, a.k, restrict.as_ref())?;
    print!("{}", report.to_table());
    match &a.out {
        Some(dir) => {
            let mut run = run;
            let text = serde_json::to_string_pretty(&report)? + "\n";
            run.write(dir, "eval.json", text.as_bytes())?;
            run.finish(dir, serde_json::to_value(&report)?)
        }
        None => Ok(()),
    }
}

#[derive(Debug, Serialize)]
struct BenchLine {
    #[serde(flatten)]
    row: BenchRow,
    /// Time ratio to the previous row when N exactly doubled.
    ratio: Option<f64>,
}

pub fn bench(run: Run<'_>, a: &BenchArgs) -> anyhow::Result<()> {
    if a.users.is_empty() {
        bail!(nutf::NutfError::InvalidInput("--users needs at least one value".into()));
    }
    let solver = SolverConfig {
        rank: a.rank,
        outer_iters: a.iters,
        power_iters: a.power_iters,
        tol: 0.0,
        seed: a.seed,
        deterministic: a.deterministic,
        ..SolverConfig::default()
    };
    println!(
        "{:>9} {:>11} {:>10} {:>7} {:>9} {:>9} {:>9} {:>9} {:>9}",
        "N", "|Omega|", "s/iter", "ratio", "spmm", "spmm_t", "qr", "materlz", "x_update"
    );
    let mut lines: Vec<BenchLine> = Vec::new();
    let mut failures = Vec::new();
    for &n in &a.users {
        let synth = SynthConfig {
            n_users: n,
            n_slots: a.slots,
            n_categories: a.categories,
            n_classes: a.classes,
            slot_density: a.density,
            candidates_per_update: a.cands,
            seed: a.seed,
        };
        let row = bench_point(&synth, &solver)?;
        let ratio = lines
            .last()
            .filter(|p| p.row.n_users * 2 == n)
            .map(|p| row.seconds_per_iter / p.row.seconds_per_iter);
        if let Some(r) = ratio {
            if !(SCALING_BAND.0..=SCALING_BAND.1).contains(&r) {
                failures.push(format!("N {} -> {n}: ratio {r:.3}", n / 2));
            }
        }
        let k = &row.kernels;
        println!(
            "{:>9} {:>11} {:>10.5} {:>7} {:>9.5} {:>9.5} {:>9.5} {:>9.5} {:>9.5}",
            n,
            row.omega_size,
            row.seconds_per_iter,
            ratio.map_or("-".to_string(), |r| format!("{r:.3}")),
            k.spmm,
            k.spmm_t,
            k.qr,
            k.materialize,
            row.x_update_seconds
        );
        lines.push(BenchLine { row, ratio });
    }
    if let Some(dir) = &a.out {
        let mut run = run;
        let text = serde_json::to_string_pretty(&lines)? + "\n";
        run.write(dir, "bench.json", text.as_bytes())?;
        run.finish(dir, json!({ "rows": lines, "band": SCALING_BAND, "violations": failures }))?;
    }
    if !failures.is_empty() {
        let msg = format!(
            "per-iteration time outside [{}, {}] on doubling: {}",
            SCALING_BAND.0,
            SCALING_BAND.1,
            failures.join("; ")
        );
        if a.strict {
            bail!(CheckFailed(msg));
        }
        warn!("{msg}");
    }
    Ok(())
}
