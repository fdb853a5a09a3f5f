//! Subcommands. Every command loops over the configured `(ε, Δx_b)` pairs,
//! writes its artifacts under the output directory and returns its rows.

use std::path::{Path, PathBuf};
use std::time::Instant;

use manifold_dd::dictionary::{
    build_all_timed, projection_errors, tangent_singular_values, Dictionary, DictionaryMeta, DictionarySet,
};
use manifold_dd::schwarz::{relative_difference, run_classical, run_online, ClassicalOpts, OnlineOpts, Outcome, Report};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::setup::{build_problem, build_reference_problem, coarsen};

/// Flags shared by the online commands.
#[derive(Debug, Clone, Default)]
pub struct RunFlags {
    /// Turn a non-converged iteration into exit code 4.
    pub strict: bool,
    /// Let the timing benchmark use the global thread pool.
    pub parallel: bool,
    /// Dictionary file overriding the default location; only valid when the
    /// configuration names a single `(ε, Δx_b)` pair.
    pub dict: Option<PathBuf>,
    /// Neighbor count for `online`; defaults to the first configured `k`.
    pub k: Option<usize>,
}

fn tag(x: f64) -> String {
    format!("{x}")
}

pub fn dictionary_path(cfg: &ExperimentConfig, eps: f64, buffer: f64) -> PathBuf {
    cfg.output.join(format!("dict_eps{}_buf{}.tsd", tag(eps), tag(buffer)))
}

pub fn offline_report_path(cfg: &ExperimentConfig, eps: f64, buffer: f64) -> PathBuf {
    cfg.output.join(format!("offline_eps{}_buf{}.json", tag(eps), tag(buffer)))
}

pub fn reference_path(cfg: &ExperimentConfig, eps: f64) -> PathBuf {
    cfg.output.join(format!("reference_eps{}.tsd", tag(eps)))
}

fn pairs(cfg: &ExperimentConfig) -> Vec<(f64, f64)> {
    cfg.eps
        .iter()
        .flat_map(|&e| cfg.layout.buffer.iter().map(move |&b| (e, b)))
        .collect()
}

fn ensure_output(cfg: &ExperimentConfig) -> Result<(), CliError> {
    std::fs::create_dir_all(&cfg.output)
        .map_err(|e| CliError::Config(format!("cannot create {}: {e}", cfg.output.display())))
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Config(e.to_string()))?;
    std::fs::write(path, text + "\n")?;
    log::info!("wrote {}", path.display());
    Ok(())
}

/// A global field stored in the dictionary format as one patch with an
/// empty trace.
fn field_file(meta: DictionaryMeta, values: Vec<f64>) -> DictionarySet {
    DictionarySet {
        meta,
        alias: vec![0],
        dictionaries: vec![Dictionary {
            patch: 0,
            trace_len: 0,
            field_len: values.len(),
            traces: Vec::new(),
            fields: values,
            retries: 0,
        }],
    }
}

fn read_field_file(path: &Path) -> Result<(DictionaryMeta, Vec<f64>), CliError> {
    let set = DictionarySet::load(path)
        .map_err(|e| CliError::Config(format!("cannot load {}: {e}", path.display())))?;
    if set.dictionaries.len() != 1 || set.dictionaries[0].len() != 1 {
        return Err(CliError::Config(format!("{} does not hold a single global field", path.display())));
    }
    let d = &set.dictionaries[0];
    Ok((set.meta.clone(), d.field(0).to_vec()))
}

fn load_dictionary(cfg: &ExperimentConfig, flags: &RunFlags, eps: f64, buffer: f64) -> Result<DictionarySet, CliError> {
    let path = match &flags.dict {
        Some(p) if pairs(cfg).len() == 1 => p.clone(),
        Some(_) => {
            return Err(CliError::Config(
                "--dict requires a configuration with a single (eps, buffer) pair".into(),
            ))
        }
        None => dictionary_path(cfg, eps, buffer),
    };
    let set = DictionarySet::load(&path)
        .map_err(|e| CliError::Config(format!("cannot load dictionary {}: {e}", path.display())))?;
    if set.meta.problem.eps != eps || set.meta.samples != cfg.sampler.samples {
        return Err(CliError::Config(format!(
            "{} was built for eps = {} with N = {}, configuration asks for eps = {eps} with N = {}",
            path.display(),
            set.meta.problem.eps,
            set.meta.samples,
            cfg.sampler.samples
        )));
    }
    Ok(set)
}

/// The reference on the run mesh; computed and saved when the file is missing.
pub fn load_reference(cfg: &ExperimentConfig, eps: f64) -> Result<Vec<f64>, CliError> {
    let path = reference_path(cfg, eps);
    let fine = if path.exists() {
        let (meta, values) = read_field_file(&path)?;
        if meta.problem.eps != eps {
            return Err(CliError::Config(format!("{} holds eps = {}", path.display(), meta.problem.eps)));
        }
        values
    } else {
        log::info!("no reference at {}, computing it", path.display());
        reference_one(cfg, eps)?.1
    };
    coarsen(cfg, &fine)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OfflineRow {
    pub eps: f64,
    pub buffer: f64,
    pub patch: usize,
    pub dictionary: usize,
    pub entries: usize,
    pub retries: usize,
    pub build_seconds: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OfflineReport {
    pub eps: f64,
    pub buffer: f64,
    pub samples: usize,
    pub dictionaries: usize,
    pub retries: usize,
    pub build_seconds: f64,
}

pub fn offline(cfg: &ExperimentConfig) -> Result<Vec<OfflineRow>, CliError> {
    ensure_output(cfg)?;
    let sampler = cfg.sampler_config();
    let mut rows = Vec::new();
    for (eps, buffer) in pairs(cfg) {
        let inst = build_problem(cfg, eps, buffer)?;
        let t0 = Instant::now();
        let (set, seconds) = build_all_timed(inst.problem(), cfg.sampler.samples, &sampler)?;
        let total = t0.elapsed().as_secs_f64();
        set.save(dictionary_path(cfg, eps, buffer))?;
        let mut seen = vec![false; set.dictionaries.len()];
        for (m, &a) in set.alias.iter().enumerate() {
            let d = &set.dictionaries[a];
            let first = !seen[a];
            seen[a] = true;
            let row = OfflineRow {
                eps,
                buffer,
                patch: m,
                dictionary: a,
                entries: d.len(),
                retries: if first { d.retries } else { 0 },
                build_seconds: if first { seconds[a] } else { 0.0 },
            };
            log::info!(
                "eps {eps} buffer {buffer} patch {m:>3} -> dictionary {a:>3}: {} entries, {} retries, {:.3}s",
                row.entries, row.retries, row.build_seconds
            );
            rows.push(row);
        }
        let report = OfflineReport {
            eps,
            buffer,
            samples: cfg.sampler.samples,
            dictionaries: set.dictionaries.len(),
            retries: set.dictionaries.iter().map(|d| d.retries).sum(),
            build_seconds: total,
        };
        write_json(&offline_report_path(cfg, eps, buffer), &report)?;
    }
    write_csv(&cfg.output.join("offline.csv"), &rows)?;
    Ok(rows)
}

fn reference_one(cfg: &ExperimentConfig, eps: f64) -> Result<(PathBuf, Vec<f64>), CliError> {
    ensure_output(cfg)?;
    let inst = build_reference_problem(cfg, eps)?;
    let values = inst.solve_global()?;
    let meta = DictionaryMeta {
        problem: inst.problem().describe(),
        sampler: cfg.sampler_config(),
        samples: 1,
        created: None,
    };
    let path = reference_path(cfg, eps);
    field_file(meta, values.clone()).save(&path)?;
    log::info!("wrote {}", path.display());
    Ok((path, values))
}

/// Monolithic solve on the reference mesh for every ε.
pub fn reference(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>, CliError> {
    cfg.eps.iter().map(|&e| reference_one(cfg, e).map(|(p, _)| p)).collect()
}

fn check_strict(flags: &RunFlags, report: &Report, what: &str) -> Result<(), CliError> {
    if flags.strict && !report.converged {
        return Err(CliError::NotConverged(format!(
            "{what} stopped after {} iterations above tol {}",
            report.iterations, report.tol
        )));
    }
    Ok(())
}

fn save_outcome(cfg: &ExperimentConfig, stem: &str, meta: DictionaryMeta, out: &Outcome) -> Result<(), CliError> {
    field_file(meta, out.global.clone()).save(cfg.output.join(format!("{stem}.tsd")))?;
    write_json(&cfg.output.join(format!("{stem}_report.json")), &out.report)
}

fn online_opts(cfg: &ExperimentConfig, k: usize) -> OnlineOpts {
    OnlineOpts {
        tol: cfg.tol(),
        max_iter: cfg.online.max_iter,
        ..OnlineOpts::for_kind(cfg.problem, k)
    }
}

fn classical_opts(cfg: &ExperimentConfig) -> ClassicalOpts {
    ClassicalOpts {
        tol: cfg.tol(),
        max_iter: cfg.online.max_iter,
    }
}

/// Reduced Schwarz runs, one per `(ε, Δx_b)`.
pub fn online(cfg: &ExperimentConfig, flags: &RunFlags) -> Result<Vec<Report>, CliError> {
    ensure_output(cfg)?;
    let k = flags.k.unwrap_or(cfg.online.k[0]);
    if k < 2 || k > cfg.sampler.samples {
        return Err(CliError::Config(format!("k = {k} must lie in 2..={}", cfg.sampler.samples)));
    }
    let mut reports = Vec::new();
    let mut unconverged = None;
    for (eps, buffer) in pairs(cfg) {
        let inst = build_problem(cfg, eps, buffer)?;
        let dict = load_dictionary(cfg, flags, eps, buffer)?;
        let out = run_online(inst.problem(), &dict, &online_opts(cfg, k))?;
        let stem = format!("online_eps{}_buf{}_k{k}", tag(eps), tag(buffer));
        save_outcome(cfg, &stem, dict.meta.clone(), &out)?;
        log::info!(
            "eps {eps} buffer {buffer} k {k}: {} iterations, converged {}, {:.4}s",
            out.report.iterations, out.report.converged, out.report.timings.total
        );
        if let Err(e) = check_strict(flags, &out.report, &stem) {
            unconverged.get_or_insert(e);
        }
        reports.push(out.report);
    }
    unconverged.map_or(Ok(reports), Err)
}

/// Classical Schwarz runs, one per ε.
pub fn classical(cfg: &ExperimentConfig, flags: &RunFlags) -> Result<Vec<Report>, CliError> {
    ensure_output(cfg)?;
    let mut reports = Vec::new();
    let mut unconverged = None;
    for &eps in &cfg.eps {
        let inst = build_problem(cfg, eps, 0.0)?;
        let out = run_classical(inst.problem(), &classical_opts(cfg))?;
        let meta = DictionaryMeta {
            problem: inst.problem().describe(),
            sampler: cfg.sampler_config(),
            samples: 1,
            created: None,
        };
        let stem = format!("classical_eps{}", tag(eps));
        save_outcome(cfg, &stem, meta, &out)?;
        log::info!(
            "eps {eps}: {} iterations, converged {}, {:.4}s",
            out.report.iterations, out.report.converged, out.report.timings.total
        );
        if let Err(e) = check_strict(flags, &out.report, &stem) {
            unconverged.get_or_insert(e);
        }
        reports.push(out.report);
    }
    unconverged.map_or(Ok(reports), Err)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvdRow {
    pub eps: f64,
    pub buffer: f64,
    pub patch: usize,
    pub index: usize,
    pub sigma: f64,
    pub ratio: f64,
}

/// Singular values of the analysed patch's dictionary fields centered at
/// the entry nearest the reference.
pub fn bench_svd(cfg: &ExperimentConfig, flags: &RunFlags) -> Result<Vec<SvdRow>, CliError> {
    ensure_output(cfg)?;
    let mut rows = Vec::new();
    for (eps, buffer) in pairs(cfg) {
        let inst = build_problem(cfg, eps, buffer)?;
        let m = inst.patch_index(&cfg.analysis_index());
        let dict = load_dictionary(cfg, flags, eps, buffer)?;
        let reference = load_reference(cfg, eps)?;
        let c = inst.problem().coupling();
        let target = c.localize(m, &reference);
        let sv = tangent_singular_values(dict.for_patch(m), &target, &c.field_weights[m]);
        let s1 = sv.first().copied().unwrap_or(0.0);
        for (j, &s) in sv.iter().enumerate() {
            rows.push(SvdRow {
                eps,
                buffer,
                patch: m,
                index: j + 1,
                sigma: s,
                ratio: if s1 > 0.0 { s / s1 } else { 0.0 },
            });
        }
    }
    write_csv(&cfg.output.join("bench_svd.csv"), &rows)?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionRow {
    pub eps: f64,
    pub buffer: f64,
    pub patch: usize,
    pub k: usize,
    pub error: f64,
}

/// Relative error of projecting the confined reference onto the affine span
/// of its `k` nearest dictionary fields, for `k = 2..=N`.
pub fn bench_projection(cfg: &ExperimentConfig, flags: &RunFlags) -> Result<Vec<ProjectionRow>, CliError> {
    ensure_output(cfg)?;
    let mut rows = Vec::new();
    for (eps, buffer) in pairs(cfg) {
        let inst = build_problem(cfg, eps, buffer)?;
        let m = inst.patch_index(&cfg.analysis_index());
        let dict = load_dictionary(cfg, flags, eps, buffer)?;
        let reference = load_reference(cfg, eps)?;
        let c = inst.problem().coupling();
        let target = c.localize(m, &reference);
        let ks: Vec<usize> = (2..=cfg.sampler.samples).collect();
        let errs = projection_errors(dict.for_patch(m), &target, &c.field_weights[m], &ks)?;
        for (&k, &error) in ks.iter().zip(&errs) {
            rows.push(ProjectionRow {
                eps,
                buffer,
                patch: m,
                k,
                error,
            });
        }
    }
    write_csv(&cfg.output.join("bench_projection.csv"), &rows)?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRow {
    pub eps: f64,
    pub buffer: f64,
    pub k: usize,
    pub error: f64,
    pub iterations: usize,
    pub converged: bool,
    pub degenerate_fits: usize,
    pub online_seconds: f64,
}

/// Global relative error of the reduced solution over the `(ε, Δx_b, k)` grid.
pub fn bench_error_vs_k(cfg: &ExperimentConfig, flags: &RunFlags) -> Result<Vec<ErrorRow>, CliError> {
    ensure_output(cfg)?;
    let mut rows = Vec::new();
    for (eps, buffer) in pairs(cfg) {
        let inst = build_problem(cfg, eps, buffer)?;
        let dict = load_dictionary(cfg, flags, eps, buffer)?;
        let reference = load_reference(cfg, eps)?;
        let weights = &inst.problem().coupling().global_weights;
        let part: Vec<ErrorRow> = cfg
            .online
            .k
            .par_iter()
            .map(|&k| {
                let out = run_online(inst.problem(), &dict, &online_opts(cfg, k))?;
                Ok(ErrorRow {
                    eps,
                    buffer,
                    k,
                    error: relative_difference(&reference, &out.global, weights),
                    iterations: out.report.iterations,
                    converged: out.report.converged,
                    degenerate_fits: out.report.degenerate_fits,
                    online_seconds: out.report.timings.total,
                })
            })
            .collect::<Result<_, CliError>>()?;
        for r in &part {
            log::info!(
                "eps {eps} buffer {buffer} k {:>3}: error {:.3e}, {} iterations, converged {}",
                r.k, r.error, r.iterations, r.converged
            );
        }
        rows.extend(part);
    }
    write_csv(&cfg.output.join("bench_error_vs_k.csv"), &rows)?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub eps: f64,
    pub buffer: f64,
    pub method: String,
    pub k: Option<usize>,
    pub iterations: usize,
    pub converged: bool,
    pub error: f64,
    pub offline_seconds: Option<f64>,
    pub online_seconds: f64,
    /// Classical online time over this row's online time.
    pub speedup: f64,
}

fn serial<T: Send>(flags: &RunFlags, f: impl FnOnce() -> T + Send) -> Result<T, CliError> {
    if flags.parallel {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| CliError::Config(e.to_string()))?;
    Ok(pool.install(f))
}

/// Reduced online time for every configured `k` against classical Schwarz
/// under the same stopping rule. Offline time is read from the report
/// written by `offline` and kept in its own column.
pub fn bench_timing(cfg: &ExperimentConfig, flags: &RunFlags) -> Result<Vec<TimingRow>, CliError> {
    ensure_output(cfg)?;
    let mut rows = Vec::new();
    for &eps in &cfg.eps {
        let reference = load_reference(cfg, eps)?;
        let base = build_problem(cfg, eps, 0.0)?;
        let classical = serial(flags, || run_classical(base.problem(), &classical_opts(cfg)))??;
        let t_classical = classical.report.timings.total;
        let weights = &base.problem().coupling().global_weights;
        let mut block = vec![TimingRow {
            eps,
            buffer: 0.0,
            method: "classical".into(),
            k: None,
            iterations: classical.report.iterations,
            converged: classical.report.converged,
            error: relative_difference(&reference, &classical.global, weights),
            offline_seconds: None,
            online_seconds: t_classical,
            speedup: 1.0,
        }];
        for &buffer in &cfg.layout.buffer {
            let inst = build_problem(cfg, eps, buffer)?;
            let dict = load_dictionary(cfg, flags, eps, buffer)?;
            let offline_seconds = std::fs::read_to_string(offline_report_path(cfg, eps, buffer))
                .ok()
                .and_then(|t| serde_json::from_str::<OfflineReport>(&t).ok())
                .map(|r| r.build_seconds);
            for &k in &cfg.online.k {
                let out = serial(flags, || run_online(inst.problem(), &dict, &online_opts(cfg, k)))??;
                let t = out.report.timings.total;
                block.push(TimingRow {
                    eps,
                    buffer,
                    method: "online".into(),
                    k: Some(k),
                    iterations: out.report.iterations,
                    converged: out.report.converged,
                    error: relative_difference(&reference, &out.global, weights),
                    offline_seconds,
                    online_seconds: t,
                    speedup: t_classical / t,
                });
            }
        }
        for r in &block {
            log::info!(
                "eps {eps} buffer {} {:>9} k {:>4}: {:>4} iterations, {:.4}s online, speedup {:.1}",
                r.buffer,
                r.method,
                r.k.map_or("-".into(), |k| k.to_string()),
                r.iterations,
                r.online_seconds,
                r.speedup
            );
        }
        rows.extend(block);
    }
    write_csv(&cfg.output.join("bench_timing.csv"), &rows)?;
    Ok(rows)
}

/// Columns that hold wall-clock measurements and therefore differ between
/// otherwise identical runs.
pub fn is_timing_column(name: &str) -> bool {
    name.ends_with("_seconds") || name == "speedup"
}
