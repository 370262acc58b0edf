//! The subcommands. Each writes its outputs and a `summary.json` into the run
//! directory and returns the exit status.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use calabi_core::energy::{check_monotone, EnergySample};
use calabi_core::flow::{checkpoint_load_on, checkpoint_save, run_from, FlowConfig, FlowState, FlowTrace};
use calabi_core::io::write_field;
use calabi_core::potential::{export_path, flow_curve_tail, geodesic_residual, solve_geodesic, Potential};
use calabi_core::spectral::{concentration_scan, kazdan_warner_residual_with, lambda_first_band, low_spectrum};
use calabi_core::{ConformalMetric, GeometryError, SurfaceRef, Topology};
use serde::Serialize;

use crate::config::{config_hash, load_config, ExperimentConfig, InitialSpec, LoadedConfig};
use crate::output::{
    preamble, read_summary, read_trace, write_json, write_text, write_trace, BandSummary, CheckResult, RunSummary,
    SUMMARY_FILE, TRACE_FILE,
};
use crate::plot::{log_plot, Series};
use crate::{ExitStatus, RunError, FORMAT_VERSION};

/// Flags shared by the config-driven commands.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub config: PathBuf,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub quiet: bool,
    /// Checkpoint to continue from (`flow` only).
    pub resume: Option<PathBuf>,
}

struct Prepared {
    config: ExperimentConfig,
    base_dir: PathBuf,
    out: PathBuf,
    hash: String,
    surface: SurfaceRef,
}

fn prepare(opts: &RunOptions) -> Result<Prepared, RunError> {
    let LoadedConfig { mut config, path } = load_config(&opts.config)?;
    if let Some(seed) = opts.seed {
        config.seed = seed;
    }
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
    let out = match (&opts.out, &config.output) {
        (Some(o), _) => o.clone(),
        (None, Some(o)) if o.is_absolute() => o.clone(),
        (None, Some(o)) => base_dir.join(o),
        (None, None) => PathBuf::from("runs").join(config.name.as_deref().unwrap_or("run")),
    };
    prepare_with(config, base_dir, out)
}

fn prepare_with(config: ExperimentConfig, base_dir: PathBuf, out: PathBuf) -> Result<Prepared, RunError> {
    let surface = config.surface.build().map_err(|e| RunError::Config(format!("surface: {e}")))?;
    std::fs::create_dir_all(&out).map_err(|e| RunError::Io(format!("cannot create {}: {e}", out.display())))?;
    let hash = config_hash(&config);
    Ok(Prepared { config, base_dir, out, hash, surface })
}

fn build_preset(p: &Prepared, preset: &str) -> Result<ConformalMetric, RunError> {
    let spec: InitialSpec = preset.parse().map_err(|e| RunError::Config(format!("{e}")))?;
    spec.build(&p.surface, p.config.seed, &p.base_dir)
}

fn finish(p: &Prepared, mut summary: RunSummary, status: ExitStatus, started: Instant) -> Result<ExitStatus, RunError> {
    summary.set_status(status);
    summary.wall_time_s = started.elapsed().as_secs_f64();
    write_json(&p.out.join(SUMMARY_FILE), &summary)?;
    Ok(status)
}

fn say(quiet: bool, msg: impl AsRef<str>) {
    if !quiet {
        eprintln!("{}", msg.as_ref());
    }
}

fn to_json<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).unwrap_or(serde_json::Value::Null)
}

pub fn cmd_flow(opts: &RunOptions) -> Result<ExitStatus, RunError> {
    let p = prepare(opts)?;
    flow_in(&p, opts.resume.as_deref(), opts.quiet)
}

fn flow_in(p: &Prepared, resume: Option<&Path>, quiet: bool) -> Result<ExitStatus, RunError> {
    let started = Instant::now();
    let flow: &FlowConfig = p.config.flow.as_ref().ok_or_else(|| RunError::Config("missing `flow` section".into()))?;
    let state = match resume {
        Some(ck) => checkpoint_load_on(ck, &p.surface).map_err(|e| RunError::Config(e.to_string()))?,
        None => FlowState::new(build_preset(p, &p.config.initial)?, flow.dt_init),
    };
    say(quiet, format!("flow: {} nodes, t = {} -> {}", p.surface.node_count(), state.t, flow.t_end));

    let ck_dir = p.out.join("checkpoints");
    if flow.checkpoint_interval.is_some() {
        std::fs::create_dir_all(&ck_dir)
            .map_err(|e| RunError::Io(format!("cannot create {}: {e}", ck_dir.display())))?;
    }
    let mut written = 0usize;
    let mut on_checkpoint = |s: &FlowState| {
        checkpoint_save(s, &ck_dir.join(format!("ckpt_{:010}.json", s.step_count)))?;
        written += 1;
        Ok(())
    };
    let trace = run_from(state, flow, &mut on_checkpoint).map_err(|e| match e {
        GeometryError::InvalidArgument(m) | GeometryError::Contract(m) => RunError::Config(m),
        other => RunError::Numerical(other.to_string()),
    })?;

    let mut summary = RunSummary::new("flow", &p.hash, p.config.seed);
    write_trace(&p.out.join(TRACE_FILE), &trace.ledger, &preamble(&p.hash, p.config.seed, flow.eps_step))?;
    write_field(&p.out.join("final_u.json"), "u", trace.final_state.metric.u())?;
    if p.config.plots {
        write_text(&p.out.join("energies.svg"), &energy_plot(trace.ledger.samples(), &stamp(&p.hash)))?;
    }

    summary.stats = Some(trace.stats);
    summary.final_energies = trace.ledger.last().copied();
    summary.last_good_t = trace.ledger.last().map(|s| s.t);
    summary.tail_length = Some(trace.ledger.samples().iter().map(|s| s.tail_increment).sum());
    summary.failure = trace.failure.clone();
    summary.details = serde_json::json!({ "checkpoints_written": written, "eps_step": flow.eps_step });

    if let Some(f) = &trace.failure {
        say(quiet, format!("flow failed at t = {:.6e}: {}", f.t, f.message));
        return finish(p, summary, ExitStatus::NumericalFailure, started);
    }

    let numerical = flow_checks(p, flow, &trace, &mut summary);
    for c in &summary.checks {
        say(quiet, format!("[{}] {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail));
    }
    let status = if numerical {
        ExitStatus::NumericalFailure
    } else if summary.checks.iter().all(|c| c.passed) {
        ExitStatus::Pass
    } else {
        ExitStatus::Violation
    };
    finish(p, summary, status, started)
}

/// Runs the enabled checks; returns true if a diagnostic could not be
/// computed.
fn flow_checks(p: &Prepared, flow: &FlowConfig, trace: &FlowTrace, summary: &mut RunSummary) -> bool {
    let checks = &p.config.checks;
    let samples = trace.ledger.samples();
    let metric = &trace.final_state.metric;
    let mut numerical = false;
    let mut out = Vec::new();

    if checks.monotonicity {
        out.extend(check_monotone(samples, 10.0 * flow.eps_step).iter().map(CheckResult::from_monotonicity));
    }
    let drift = trace.stats.max_area_drift;
    out.push(CheckResult::new(
        "area_drift",
        drift <= checks.area_drift_max,
        format!("max relative drift {drift:.3e} (bound {:.1e})", checks.area_drift_max),
    ));

    let window = checks.fit_window.map(|[a, b]| (a, b));
    match trace.ledger.fit_decay(window) {
        Ok(fit) => {
            summary.decay_fit = Some(fit);
            if let Some(expected) = checks.expected_alpha {
                let rel = (fit.alpha / expected - 1.0).abs();
                out.push(CheckResult::new(
                    "decay_rate",
                    rel <= checks.alpha_rel_tol,
                    format!("alpha {:.4} vs {expected:.4} (relative error {rel:.3e})", fit.alpha),
                ));
            }
            if let Some(max) = checks.max_fit_residual {
                out.push(CheckResult::new(
                    "fit_residual",
                    fit.residual <= max && fit.alpha > 0.0,
                    format!("residual {:.3e}, alpha {:.4}", fit.residual, fit.alpha),
                ));
            }
        }
        Err(e) => {
            if checks.expected_alpha.is_some() || checks.max_fit_residual.is_some() {
                out.push(CheckResult::new("decay_rate", false, e.to_string()));
            }
        }
    }

    let band_eps = flow.diagnostics.map(|d| d.band_eps).unwrap_or(0.1);
    if checks.final_band_dim.is_some() || checks.max_final_kw.is_some() {
        match lambda_first_band(metric, band_eps) {
            Ok(band) => {
                summary.band =
                    Some(BandSummary { eps: band.eps, dim: band.dim(), eigenvalues: band.eigenvalues.clone() });
                if let Some(dim) = checks.final_band_dim {
                    out.push(CheckResult::new(
                        "band_dimension",
                        band.dim() == dim,
                        format!("{} eigenvalues in (1-{band_eps}, 1+{band_eps}): {:?}", band.dim(), band.eigenvalues),
                    ));
                }
            }
            Err(e) => {
                numerical = true;
                out.push(CheckResult::new("band_dimension", false, e.to_string()));
            }
        }
    }
    if let Some(max) = checks.max_final_kw {
        match kazdan_warner_residual_with(metric, band_eps, 1e-10) {
            Ok(kw) => {
                summary.kw_residual = Some(kw.ratio);
                out.push(CheckResult::new(
                    "kazdan_warner",
                    kw.ratio <= max,
                    format!("ratio {:.3e} (bound {max:.1e}, defect norm {:.3e})", kw.ratio, kw.defect_norm),
                ));
            }
            Err(e) => {
                numerical = !matches!(e, GeometryError::Unsupported { .. });
                out.push(CheckResult::new("kazdan_warner", false, e.to_string()));
            }
        }
    }
    if let Some(eps) = checks.concentration_eps {
        match concentration_scan(metric, eps, None) {
            Ok(scan) => {
                summary.concentration_max = Some(scan.max_product);
                out.push(CheckResult::new(
                    "no_concentration",
                    scan.flagged.is_empty(),
                    format!(
                        "max E*A {:.4e}, threshold {:.4e}, flagged {:?}",
                        scan.max_product, scan.threshold, scan.flagged
                    ),
                ));
            }
            Err(e) => {
                numerical = true;
                out.push(CheckResult::new("no_concentration", false, e.to_string()));
            }
        }
    }
    summary.checks = out;
    numerical
}

fn stamp(hash: &str) -> String {
    format!("format_version={FORMAT_VERSION} config_hash={hash}")
}

fn energy_plot(samples: &[EnergySample], stamp: &str) -> String {
    let last = samples.last();
    let shifted = |get: fn(&EnergySample) -> f64| -> Vec<(f64, f64)> {
        let end = last.map(get).unwrap_or(0.0);
        samples.iter().map(|s| (s.t, get(s) - end)).collect()
    };
    let series = [
        Series::new("Ca", samples.iter().map(|s| (s.t, s.calabi)).collect()),
        Series::new("Ma - Ma(end)", shifted(|s| s.mabuchi_closed)),
        Series::new("F - F(end)", shifted(|s| s.liouville)),
    ];
    log_plot("Energies along the flow", "t", &series, stamp)
}

pub fn cmd_geodesic(opts: &RunOptions) -> Result<ExitStatus, RunError> {
    let started = Instant::now();
    let p = prepare(opts)?;
    let g = p.config.geodesic.as_ref().ok_or_else(|| RunError::Config("missing `geodesic` section".into()))?;
    let from = build_preset(&p, g.from.as_deref().unwrap_or(&p.config.initial))?;
    let to = build_preset(&p, &g.to)?;
    let a = Potential::from_metric(&from)?;
    let b = Potential::from_metric(&to)?;
    let b = {
        let off = b.offset() + g.to_offset;
        b.with_offset(off)
    };
    let opts_g = g.options.unwrap_or_default();
    say(opts.quiet, format!("geodesic: {} segments on {} nodes", g.segments, p.surface.node_count()));

    let mut summary = RunSummary::new("geodesic", &p.hash, p.config.seed);
    let path = match solve_geodesic(&a, &b, g.segments, &opts_g) {
        Ok(path) => path,
        Err(e) => {
            summary.details = serde_json::json!({ "error": e.to_string() });
            say(opts.quiet, format!("geodesic failed: {e}"));
            return finish(&p, summary, ExitStatus::NumericalFailure, started);
        }
    };
    let residual = if g.segments >= 2 { geodesic_residual(&path)? } else { 0.0 };
    let index = export_path(&path, &p.out.join("path"))?;
    summary.details = serde_json::json!({
        "segments": g.segments,
        "distance": path.distance(),
        "metric_distance": path.metric_distance(),
        "length": path.length(),
        "energy": path.energy(),
        "residual": residual,
        "iterations": path.iterations,
        "stop": to_json(&path.stop),
        "endpoint_hashes": index.endpoint_hashes,
    });
    let passed = residual <= g.residual_tol;
    summary.checks.push(CheckResult::new(
        "geodesic_residual",
        passed,
        format!("residual {residual:.3e} (tolerance {:.1e})", g.residual_tol),
    ));
    say(
        opts.quiet,
        format!("distance {:.9} (residual {residual:.3e}, {} iterations)", path.distance(), path.iterations),
    );
    let status = if passed { ExitStatus::Pass } else { ExitStatus::NumericalFailure };
    finish(&p, summary, status, started)
}

pub fn cmd_spectrum(opts: &RunOptions) -> Result<ExitStatus, RunError> {
    let started = Instant::now();
    let p = prepare(opts)?;
    let sc = p.config.spectrum.as_ref().ok_or_else(|| RunError::Config("missing `spectrum` section".into()))?;
    let metric = build_preset(&p, &p.config.initial)?;
    let mut summary = RunSummary::new("spectrum", &p.hash, p.config.seed);
    let report = match low_spectrum(&metric, sc.k) {
        Ok(r) => r,
        Err(e) => {
            summary.details = serde_json::json!({ "error": e.to_string() });
            return finish(&p, summary, ExitStatus::NumericalFailure, started);
        }
    };
    let markers = report.markers(sc.band_eps);
    summary.band = Some(BandSummary {
        eps: sc.band_eps,
        dim: markers.in_band,
        eigenvalues: report.eigenvalues.iter().copied().filter(|l| (l - 1.0).abs() < sc.band_eps).collect(),
    });
    let kw = if p.surface.topology() == Topology::Sphere {
        let kw = kazdan_warner_residual_with(&metric, sc.band_eps, 1e-10)?;
        summary.kw_residual = Some(kw.ratio);
        Some(kw)
    } else {
        None
    };
    if sc.dump_eigenfields {
        let dir = p.out.join("eigenfields");
        std::fs::create_dir_all(&dir).map_err(|e| RunError::Io(format!("cannot create {}: {e}", dir.display())))?;
        for i in 0..report.eigenfields.len() {
            write_field(&dir.join(format!("eigen_{i:03}.json")), "eigenfield", &report.eigenfield(&p.surface, i)?)?;
        }
    }
    for (i, (l, r)) in report.eigenvalues.iter().zip(&report.residuals).enumerate() {
        say(opts.quiet, format!("lambda[{}] = {l:.8} (residual {r:.1e})", i + 1));
    }
    summary.details = serde_json::json!({ "spectrum": to_json(&report), "markers": to_json(&markers), "kazdan_warner": to_json(&kw) });
    finish(&p, summary, ExitStatus::Pass, started)
}

pub fn cmd_scan(opts: &RunOptions) -> Result<ExitStatus, RunError> {
    let started = Instant::now();
    let p = prepare(opts)?;
    let sc = p.config.scan.as_ref().ok_or_else(|| RunError::Config("missing `scan` section".into()))?;
    let metric = build_preset(&p, &p.config.initial)?;
    let report = concentration_scan(&metric, sc.eps, sc.centers.as_deref()).map_err(|e| match e {
        GeometryError::InvalidArgument(m) => RunError::Config(m),
        other => RunError::Numerical(other.to_string()),
    })?;
    say(
        opts.quiet,
        format!(
            "max E*A = {:.6e} ({:.4} of threshold), {} flagged",
            report.max_product,
            report.max_product / report.threshold,
            report.flagged.len()
        ),
    );
    let mut summary = RunSummary::new("scan", &p.hash, p.config.seed);
    summary.concentration_max = Some(report.max_product);
    summary.details = to_json(&report);
    finish(&p, summary, ExitStatus::Pass, started)
}

/// Fractions of the final time at which the tail table starts.
const TAIL_FRACTIONS: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 0.875];

/// Renders `report.txt` and `report.svg` for a run directory.
pub fn cmd_report(run_dir: &Path, quiet: bool) -> Result<ExitStatus, RunError> {
    let trace_path = run_dir.join(TRACE_FILE);
    if !trace_path.is_file() {
        return Err(RunError::Config(format!("no trace at {}", trace_path.display())));
    }
    let trace = read_trace(&trace_path)?;
    let summary_path = run_dir.join(SUMMARY_FILE);
    let summary = if summary_path.is_file() { Some(read_summary(&summary_path)?) } else { None };
    let samples = &trace.samples;
    let mut text = String::new();
    let mut line = |s: String| {
        text.push_str(&s);
        text.push('\n');
    };

    line(format!("Run report: {}", run_dir.display()));
    for (k, v) in &trace.preamble {
        line(format!("  {k}: {v}"));
    }
    let (Some(first), Some(last)) = (samples.first(), samples.last()) else {
        return Err(RunError::Config(format!("{} has no samples", trace_path.display())));
    };
    line(format!("  samples: {} over t in [{:.6e}, {:.6e}]", samples.len(), first.t, last.t));

    let mut status = ExitStatus::Pass;
    if let Some(f) = summary.as_ref().and_then(|s| s.failure.as_ref()) {
        status = ExitStatus::NumericalFailure;
        line(String::new());
        line(format!("RUN FAILED ({:?}) at t = {:.6e}: {}", f.kind, f.t, f.message));
        line(format!("  last good sample: t = {:.6e}, Ca = {:.6e}, area = {:.12}", last.t, last.calabi, last.area));
    }

    line(String::new());
    line("Checks".into());
    let tol = 10.0 * trace.eps_step().unwrap_or(1e-12);
    let mut monotone = true;
    for m in check_monotone(samples, tol) {
        monotone &= m.passed;
        let c = CheckResult::from_monotonicity(&m);
        line(format!("  [{}] {}: {}", if c.passed { "PASS" } else { "FAIL" }, m.series, c.detail));
    }
    if !monotone {
        status = ExitStatus::Violation;
    }
    if let Some(s) = &summary {
        for c in s.checks.iter().filter(|c| !c.name.starts_with("monotone_")) {
            line(format!("  [{}] {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail));
        }
    }

    line(String::new());
    line("Decay fit (last half)".into());
    let times: Vec<f64> = samples.iter().map(|s| s.t).collect();
    let calabi: Vec<f64> = samples.iter().map(|s| s.calabi).collect();
    let fit = calabi_core::energy::fit_exponential_decay(&times, &calabi, None).ok();
    match &fit {
        Some(f) => line(format!(
            "  alpha = {:.6}, C = {:.6e}, residual = {:.3e} over [{:.4e}, {:.4e}]",
            f.alpha, f.prefactor, f.residual, f.t_start, f.t_end
        )),
        None => line("  not available".into()),
    }

    line(String::new());
    line("Spectral columns".into());
    match samples.iter().rev().find(|s| s.lambda1.is_some()) {
        Some(s) => {
            line(format!("  lambda1 = {:.6} at t = {:.6e}", s.lambda1.unwrap_or(f64::NAN), s.t));
            if let Some(kw) = s.kw_residual {
                line(format!("  Kazdan-Warner ratio = {kw:.3e}"));
            }
        }
        None => line("  no spectral samples".into()),
    }
    if let Some(b) = summary.as_ref().and_then(|s| s.band.as_ref()) {
        line(format!("  final band (eps {}): dimension {} {:?}", b.eps, b.dim, b.eigenvalues));
    }

    line(String::new());
    line(format!("Flow-curve tail to t = {:.6e}", last.t));
    line(format!("  {:>14} {:>14} {:>14}", "s", "length", "fit bound"));
    for frac in TAIL_FRACTIONS {
        let s = first.t + frac * (last.t - first.t);
        if let Ok(tail) = flow_curve_tail(samples, s, last.t, fit.as_ref()) {
            let bound = tail.sqrt_bound.map(|b| format!("{b:.6e}")).unwrap_or_else(|| "-".into());
            line(format!("  {s:>14.6e} {:>14.6e} {bound:>14}", tail.length));
        }
    }
    line(String::new());
    line(format!("Status: {}", status.label()));

    let hash = trace.preamble.get("config_hash").cloned().unwrap_or_default();
    write_text(&run_dir.join("report.txt"), &text)?;
    write_text(&run_dir.join("report.svg"), &energy_plot(samples, &stamp(&hash)))?;
    if !quiet {
        print!("{text}");
    }
    Ok(status)
}

#[derive(Debug, Clone, Serialize)]
struct SweepEntry {
    index: usize,
    initial: String,
    seed: u64,
    dir: String,
    exit_code: i32,
    error: Option<String>,
}

/// Runs every (initial, seed) combination of the `sweep` section as an
/// independent flow in `out/run_NNN`.
pub fn cmd_sweep(opts: &RunOptions) -> Result<ExitStatus, RunError> {
    let started = Instant::now();
    let p = prepare(opts)?;
    let sweep = p.config.sweep.clone().ok_or_else(|| RunError::Config("missing `sweep` section".into()))?;
    if p.config.flow.is_none() {
        return Err(RunError::Config("missing `flow` section".into()));
    }
    let initials = if sweep.initials.is_empty() { vec![p.config.initial.clone()] } else { sweep.initials.clone() };
    let jobs: Vec<(String, u64)> =
        initials.iter().flat_map(|i| sweep.seeds.iter().map(move |s| (i.clone(), *s))).collect();
    let threads = sweep
        .threads
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
        .clamp(1, jobs.len().max(1));
    say(opts.quiet, format!("sweep: {} runs on {threads} threads", jobs.len()));

    let next = AtomicUsize::new(0);
    let results = Mutex::new(Vec::with_capacity(jobs.len()));
    std::thread::scope(|scope| {
        for _ in 0..threads {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some((initial, seed)) = jobs.get(i) else { break };
                let dir = p.out.join(format!("run_{i:03}"));
                let mut config = p.config.clone();
                config.initial = initial.clone();
                config.seed = *seed;
                config.sweep = None;
                config.output = None;
                let outcome = (|| {
                    std::fs::create_dir_all(&dir)
                        .map_err(|e| RunError::Io(format!("cannot create {}: {e}", dir.display())))?;
                    write_json(&dir.join("config.json"), &config)?;
                    let run = prepare_with(config, p.base_dir.clone(), dir.clone())?;
                    flow_in(&run, None, true)
                })();
                let (status, error) = match outcome {
                    Ok(s) => (s, None),
                    Err(e) => (e.status(), Some(e.to_string())),
                };
                say(opts.quiet, format!("  run_{i:03} ({initial}, seed {seed}): {}", status.label()));
                let entry = SweepEntry {
                    index: i,
                    initial: initial.clone(),
                    seed: *seed,
                    dir: format!("run_{i:03}"),
                    exit_code: status.code(),
                    error,
                };
                results.lock().expect("sweep results").push((status, entry));
            });
        }
    });
    let mut results = results.into_inner().expect("sweep results");
    results.sort_by_key(|(_, e)| e.index);
    let status = results.iter().map(|(s, _)| *s).max().unwrap_or(ExitStatus::Pass);
    let mut summary = RunSummary::new("sweep", &p.hash, p.config.seed);
    summary.details = serde_json::json!({ "runs": results.iter().map(|(_, e)| to_json(e)).collect::<Vec<_>>() });
    finish(&p, summary, status, started)
}
