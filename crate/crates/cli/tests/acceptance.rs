//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::f64::consts::PI;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use calabi_core::energy::{check_monotone, EnergySample};
use calabi_core::flow::{run, FlowConfig, FlowTrace};
use calabi_core::io::read_field;
use calabi_core::potential::{
    distance, flow_curve_tail, sectional_curvature, solve_geodesic, verify_distance_decrease, GeodesicOptions,
    Potential,
};
use calabi_core::spectral::{
    concentration_scan, kazdan_warner_residual_with, lambda_first_band, low_spectrum, CONCENTRATION_THRESHOLD,
};
use calabi_core::surface::{
    gauss_curvature, grad_norm_sq, integrate, laplace_g, lichnerowicz, mobius_pullback, random_smooth, MobiusMap,
    Surface,
};
use calabi_core::{ConformalMetric, ScalarField, SurfaceRef};
use calabi_lab::commands::{cmd_flow, RunOptions};
use calabi_lab::ExitStatus;

type Outcome = Result<String, String>;
type Criterion = Box<dyn Fn(Option<&Runs>) -> Outcome>;

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn torus() -> SurfaceRef {
    Surface::torus(32, 32, 1.0, 1.0).unwrap()
}

fn flow_config(t_end: f64, dt_max: f64, eps_step: f64, area_drift_tol: f64, samples: usize) -> FlowConfig {
    FlowConfig {
        t_end,
        dt_init: 1e-6,
        dt_max,
        eps_step,
        area_drift_tol,
        sample_interval: t_end / samples as f64,
        checkpoint_interval: None,
        snapshot_interval: None,
        diagnostics: None,
    }
}

fn random_metric(s: &SurfaceRef, amplitude: f64, seed: u64) -> ConformalMetric {
    ConformalMetric::new(random_smooth(s, amplitude, seed).unwrap()).normalized()
}

fn max_node_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

struct Runs {
    /// `torus_mode 1 0.01` to `t = 5e-3`, snapshots at the half and the end.
    torus_mode: FlowTrace,
    /// Level-4 sphere, `u = 0.02(3z² - 1 + xy)` to `t = 1`.
    sphere: FlowTrace,
    random_torus: Vec<FlowTrace>,
    random_sphere: Vec<FlowTrace>,
}

fn compute_runs() -> Runs {
    let s = torus();
    let mode = ConformalMetric::new(s.sample_torus(|x, _| 0.01 * (2.0 * PI * x).cos()).unwrap()).normalized();
    let cfg = FlowConfig { snapshot_interval: Some(2.5e-3), ..flow_config(5e-3, 1e-4, 1e-8, 1e-4, 50) };
    let torus_mode = run(mode, &cfg).unwrap();

    let sph = Surface::sphere(4).unwrap();
    let zonal =
        ConformalMetric::new(sph.sample_sphere(|p| 0.02 * (3.0 * p.z * p.z - 1.0 + p.x * p.y)).unwrap()).normalized();
    let sphere = run(zonal, &flow_config(1.0, 0.05, 1e-6, 1e-6, 50)).unwrap();

    let random_torus = (0..10)
        .map(|seed| run(random_metric(&s, 0.02, seed), &flow_config(2e-3, 1e-4, 1e-8, 1e-4, 20)).unwrap())
        .collect();
    let s3 = Surface::sphere(3).unwrap();
    let random_sphere = (0..10)
        .map(|seed| run(random_metric(&s3, 0.02, seed), &flow_config(0.2, 0.05, 1e-6, 1e-6, 20)).unwrap())
        .collect();
    Runs { torus_mode, sphere, random_torus, random_sphere }
}

fn stationarity() -> Outcome {
    let mut worst: f64 = 0.0;
    for s in [Surface::sphere(4).unwrap(), torus()] {
        let trace = run(ConformalMetric::background(&s), &flow_config(1.0, 0.05, 1e-8, 1e-8, 10)).unwrap();
        if let Some(f) = trace.failure {
            return Err(format!("run failed: {}", f.message));
        }
        worst = worst.max(trace.final_state.metric.u().max_abs());
    }
    ensure(worst <= 1e-8, format!("max |u(1) - u(0)| = {worst:.2e} (bound 1e-8)"))
}

fn conservation(runs: &Runs) -> Outcome {
    let mut worst_drift: f64 = 0.0;
    let mut failures = Vec::new();
    let all = runs.random_torus.iter().map(|t| (t, 1e-8)).chain(runs.random_sphere.iter().map(|t| (t, 1e-6)));
    for (i, (trace, eps_step)) in all.enumerate() {
        if let Some(f) = &trace.failure {
            failures.push(format!("run {i} failed: {}", f.message));
            continue;
        }
        worst_drift = worst_drift.max(trace.stats.max_area_drift);
        for m in check_monotone(trace.ledger.samples(), 10.0 * eps_step).iter().filter(|m| !m.passed) {
            failures.push(format!("run {i}: {} rose by {:.2e}", m.series, m.max_increase));
        }
    }
    let detail =
        format!("20 runs, max area drift {worst_drift:.2e} (bound 1e-6), monotonicity violations: {}", failures.len());
    ensure(
        failures.is_empty() && worst_drift <= 1e-6,
        if failures.is_empty() { detail } else { format!("{detail}; {}", failures.join("; ")) },
    )
}

fn derivative_identities(runs: &Runs) -> Outcome {
    let s: &[EnergySample] = runs.torus_mode.ledger.samples();
    let (mut ma, mut f) = (0.0f64, 0.0f64);
    for w in s.windows(3) {
        let h = w[2].t - w[0].t;
        let dma = (w[2].mabuchi_closed - w[0].mabuchi_closed) / h;
        let df = (w[2].liouville - w[0].liouville) / h;
        ma = ma.max((dma + w[1].calabi).abs() / w[1].calabi);
        f = f.max((df + 0.5 * w[1].gradk).abs() / (0.5 * w[1].gradk));
    }
    ensure(
        ma <= 0.01 && f <= 0.01,
        format!("max relative error dMa/dt vs -Ca {ma:.2e}, dF/dt vs -1/2 int|grad K|^2 {f:.2e} (bound 1e-2)"),
    )
}

fn exponential_decay(runs: &Runs) -> Outcome {
    let expected = 0.5 * (2.0 * PI).powi(4);
    let torus = runs.torus_mode.ledger.fit_decay(None).map_err(|e| e.to_string())?;
    let rel = (torus.alpha / expected - 1.0).abs();
    let sphere = runs.sphere.ledger.fit_decay(None).map_err(|e| e.to_string())?;
    ensure(
        rel <= 0.05 && sphere.alpha > 0.0 && sphere.residual <= 0.02 && sphere.alpha >= 2.5,
        format!(
            "torus alpha {:.2} vs {expected:.2} (rel {rel:.2e}); sphere alpha {:.3} (floor 2.5), fit residual {:.2e} (bound 2e-2)",
            torus.alpha, sphere.alpha, sphere.residual
        ),
    )
}

fn spectrum(runs: &Runs) -> Outcome {
    let s = Surface::sphere(5).unwrap();
    let report = low_spectrum(&ConformalMetric::background(&s), 9).map_err(|e| e.to_string())?;
    let l = &report.eigenvalues;
    let first = l[..3].iter().all(|v| (v - 1.0).abs() <= 0.01);
    let second = l[3..8].iter().all(|v| (v - 3.0).abs() <= 0.03);
    let separated = l[8] > 3.3;
    let band = lambda_first_band(&runs.sphere.final_state.metric, 0.1).map_err(|e| e.to_string())?;
    ensure(
        first && second && separated && band.dim() == 3,
        format!(
            "level 5: lambda1 {:.5}..{:.5} (x3), lambda2 {:.5}..{:.5} (x5), next {:.4}; flow band dimension at t_end {}",
            l[0], l[2], l[3], l[7], l[8], band.dim()
        ),
    )
}

fn kazdan_warner(runs: &Runs) -> Outcome {
    let flow = kazdan_warner_residual_with(&runs.sphere.final_state.metric, 0.1, 1e-10).map_err(|e| e.to_string())?;
    let s = Surface::sphere(5).unwrap();
    let round = ConformalMetric::background(&s);
    let mut worst: f64 = 0.0;
    let mut ratios = Vec::new();
    for map in [MobiusMap::dilation(1.5), MobiusMap::dilation(2.0)] {
        let kw = kazdan_warner_residual_with(&mobius_pullback(&round, &map).unwrap(), 0.1, 1e-10)
            .map_err(|e| e.to_string())?;
        worst = worst.max(kw.projection_norm);
        ratios.push(format!("{:.2}", kw.ratio));
    }
    // interpolation tolerance of pulled-back curvature, L² norm
    let tol = 2e-2;
    ensure(
        flow.ratio <= 0.05 && worst <= tol,
        format!(
            "flow ratio {:.2e} (bound 5e-2); Mobius band projection {worst:.2e} (interpolation tolerance {tol:.0e}, ratios {})",
            flow.ratio,
            ratios.join(", ")
        ),
    )
}

fn concentration(runs: &Runs) -> Outcome {
    let s = Surface::sphere(6).unwrap();
    let bubble = mobius_pullback(&ConformalMetric::background(&s), &MobiusMap::dilation(50.0)).unwrap();
    let verts = s.sphere_mesh().unwrap().vertices();
    let centers: Vec<usize> = (0..verts.len()).filter(|&i| verts[i].z < -0.995).collect();
    let scan = concentration_scan(&bubble, 0.6, Some(&centers)).map_err(|e| e.to_string())?;
    let ratio = scan.max_product / CONCENTRATION_THRESHOLD;

    let mut flagged = 0;
    let mut healthy_max: f64 = 0.0;
    let torus_finals = runs.random_torus.iter().chain([&runs.torus_mode]).map(|t| (t, 0.2));
    let sphere_finals = runs.random_sphere.iter().chain([&runs.sphere]).map(|t| (t, 0.6));
    for (trace, eps) in torus_finals.chain(sphere_finals) {
        let r = concentration_scan(&trace.final_state.metric, eps, None).map_err(|e| e.to_string())?;
        flagged += r.flagged.len();
        healthy_max = healthy_max.max(r.max_product / CONCENTRATION_THRESHOLD);
    }
    ensure(
        (ratio - 1.0).abs() <= 0.05 && flagged == 0,
        format!(
            "bubble E*A / 16pi^2 = {ratio:.4}; 22 healthy runs: max {healthy_max:.2e} of threshold, {flagged} flagged"
        ),
    )
}

fn lichnerowicz_identity() -> Outcome {
    let s = torus();
    let mut worst: f64 = 0.0;
    for seed in 0..10 {
        let m = random_metric(&s, 0.1, 1000 + seed);
        let k = gauss_curvature(&m);
        let lhs = integrate(&m, &lichnerowicz(&m, &k).unwrap().norm_sq(&m).unwrap()).unwrap();
        let lk = laplace_g(&m, &k).unwrap();
        let t1 = integrate(&m, &lk.map(|v| v * v)).unwrap();
        let grad = grad_norm_sq(&m, &k).unwrap();
        let t2 = integrate(&m, &k.zip_map(&grad, |a, b| a * b).unwrap()).unwrap();
        worst = worst.max((lhs - (t1 - 0.5 * t2)).abs() / lhs.abs());
    }
    ensure(worst <= 1e-6, format!("max relative gap {worst:.2e} over 10 metrics (bound 1e-6)"))
}

fn potential_geometry(runs: &Runs) -> Outcome {
    let opts = GeodesicOptions::default();
    let mut parts = Vec::new();
    let mut ok = true;

    let sph = Surface::sphere(3).unwrap();
    let zero = Potential::zero(&sph);
    let shifted = solve_geodesic(&zero, &zero.clone().with_offset(2.0), 16, &opts).map_err(|e| e.to_string())?;
    let exact = 2.0 * (4.0 * PI).sqrt();
    let err = (shifted.distance() - exact).abs();
    ok &= err <= 1e-3;
    parts.push(format!("shift error {err:.1e}"));

    let s = torus();
    let tol = 1e-4;
    let mut slack = f64::INFINITY;
    for i in 0..20 {
        let (a, b, c) =
            (random_metric(&s, 0.02, 3 * i), random_metric(&s, 0.02, 3 * i + 1), random_metric(&s, 0.02, 3 * i + 2));
        let d = |x: &ConformalMetric, y: &ConformalMetric| distance(x, y, 16, &opts).unwrap();
        slack = slack.min(d(&a, &b) + d(&b, &c) - d(&a, &c));
    }
    ok &= slack >= -2.0 * tol;
    parts.push(format!("triangle min slack {slack:.2e}"));

    let flat = Potential::zero(&s);
    let d1 = s.sample_torus(|x, _| 2f64.sqrt() * (2.0 * PI * x).sin()).unwrap();
    let d2 = s.sample_torus(|_, y| 2f64.sqrt() * (2.0 * PI * y).sin()).unwrap();
    let closed = sectional_curvature(&flat, &d1, &d2).unwrap();
    let expected = -(2.0 * PI).powi(4) / 4.0;
    let rel = (closed / expected - 1.0).abs();
    let mut max_k = f64::NEG_INFINITY;
    for seed in 0..20 {
        let phi = Potential::new(random_smooth(&s, 1e-3, 2000 + seed).unwrap()).unwrap();
        let a: ScalarField = random_smooth(&s, 1.0, 3000 + seed).unwrap();
        let b: ScalarField = random_smooth(&s, 1.0, 4000 + seed).unwrap();
        max_k = max_k.max(sectional_curvature(&phi, &a, &b).unwrap());
    }
    ok &= rel <= 0.01 && max_k <= 0.0;
    parts.push(format!("curvature closed form rel {rel:.1e}, max sample {max_k:.2e}"));

    let trace = &runs.torus_mode;
    let (half, end) = (&trace.snapshots[1], &trace.snapshots[2]);
    let tail = flow_curve_tail(trace.ledger.samples(), half.t, end.t, None).map_err(|e| e.to_string())?;
    let g = |u: &[f64]| ConformalMetric::new(ScalarField::new(&s, u.to_vec()).unwrap());
    let d_tail = distance(&g(&half.u), &g(&end.u), 16, &opts).map_err(|e| e.to_string())?;
    ok &= tail.length >= d_tail;
    parts.push(format!("tail {:.4e} >= distance {d_tail:.4e}", tail.length));

    let cfg = flow_config(2e-3, 1e-4, 1e-8, 1e-4, 4);
    let mut worst_ratio: f64 = 0.0;
    for i in 0..5 {
        let r = verify_distance_decrease(
            &random_metric(&s, 0.02, 500 + i),
            &random_metric(&s, 0.02, 600 + i),
            &cfg,
            16,
            &opts,
            0.0,
        )
        .map_err(|e| e.to_string())?;
        worst_ratio = worst_ratio.max(r.ratio);
    }
    ok &= worst_ratio <= 1.0;
    parts.push(format!("distance decrease max ratio {worst_ratio:.3}"));
    ensure(ok, parts.join("; "))
}

fn write_config(dir: &Path, t_end: f64, checkpoint: Option<f64>) -> std::path::PathBuf {
    let config = serde_json::json!({
        "surface": {"topology": "torus", "nx": 32, "ny": 32, "lx": 1.0, "ly": 1.0},
        "initial": "random 0.02",
        "seed": 11,
        "flow": {
            "t_end": t_end, "dt_init": 1e-6, "dt_max": 1e-4, "eps_step": 1e-8,
            "area_drift_tol": 1e-4, "sample_interval": 1e-4, "checkpoint_interval": checkpoint
        },
        "plots": false
    });
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    path
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), 2e-3, Some(1e-3));
    let flow = |out: &str, resume: Option<std::path::PathBuf>| {
        let opts = RunOptions {
            config: config.clone(),
            out: Some(dir.path().join(out)),
            quiet: true,
            resume,
            ..Default::default()
        };
        cmd_flow(&opts).unwrap()
    };
    if flow("a", None) != ExitStatus::Pass || flow("b", None) != ExitStatus::Pass {
        return Err("flow run did not pass".into());
    }
    let identical =
        fs::read(dir.path().join("a/trace.csv")).unwrap() == fs::read(dir.path().join("b/trace.csv")).unwrap();

    let mut checkpoints: Vec<_> = fs::read_dir(dir.path().join("a/checkpoints"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    checkpoints.sort();
    let mid = checkpoints.first().cloned().ok_or("no checkpoint written")?;
    flow("resumed", Some(mid));
    let (_, full) = read_field(&dir.path().join("a/final_u.json")).unwrap();
    let (_, resumed) = read_field(&dir.path().join("resumed/final_u.json")).unwrap();
    let diff = max_node_diff(full.values(), resumed.values());
    ensure(
        identical && diff <= 1e-12,
        format!("traces byte-identical: {identical}; resume max node difference {diff:.1e} (bound 1e-12)"),
    )
}

fn main() {
    let started = Instant::now();
    let runs = catch_unwind(compute_runs);
    println!("shared flow runs computed in {:.1}s", started.elapsed().as_secs_f64());
    let criteria: Vec<(&str, Criterion)> = vec![
        ("stationarity", Box::new(|_| stationarity())),
        ("conservation and monotonicity", Box::new(|r| conservation(r.ok_or("flow runs failed")?))),
        ("derivative identities", Box::new(|r| derivative_identities(r.ok_or("flow runs failed")?))),
        ("exponential decay", Box::new(|r| exponential_decay(r.ok_or("flow runs failed")?))),
        ("spectrum", Box::new(|r| spectrum(r.ok_or("flow runs failed")?))),
        ("Kazdan-Warner residual", Box::new(|r| kazdan_warner(r.ok_or("flow runs failed")?))),
        ("concentration threshold", Box::new(|r| concentration(r.ok_or("flow runs failed")?))),
        ("Lichnerowicz identity", Box::new(|_| lichnerowicz_identity())),
        ("potential space geometry", Box::new(|r| potential_geometry(r.ok_or("flow runs failed")?))),
        ("determinism and round trip", Box::new(|_| determinism())),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(|| check(runs.as_ref().ok())))
            .unwrap_or_else(|e| Err(format!("panicked: {}", e.downcast_ref::<String>().cloned().unwrap_or_default())));
        let (tag, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        failed += outcome.is_err() as usize;
        println!("criterion {:>2} {tag} {name}: {detail} [{:.1}s]", i + 1, t.elapsed().as_secs_f64());
    }
    println!(
        "acceptance: {} of {} criteria passed in {:.1}s",
        criteria.len() - failed,
        criteria.len(),
        started.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
