//! Low spectrum of `-Δ_g`, the first band around 1, the Kazdan–Warner
//! residual and local area/energy concentration.
//!
//! The eigenproblem `-Δ₀x = λ e^{2u} x` is discretized as the generalized
//! symmetric problem `Kx = λWx` with `W = diag(w_i e^{2u_i})`, and solved in
//! the symmetric form `B = W^{-½} K W^{-½}` by block shift-invert Krylov
//! iteration at shift 0 with the constant mode deflated.

use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::energy::SpectralColumns;
use crate::error::{GeometryError, Result};
use crate::flow::Snapshot;
use crate::linalg::{axpy, conjugate_gradient, dot, norm, CgOptions};
use crate::surface::{gauss_curvature, ConformalMetric, ScalarField, SurfaceRef, Topology};

/// Threshold `16π²` for `E(p)·A(p)` at a concentration point.
pub const CONCENTRATION_THRESHOLD: f64 = 16.0 * PI * PI;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EigenOptions {
    /// Extra block vectors beyond the number requested.
    pub block_extra: usize,
    /// Krylov blocks per restart (including the start block).
    pub krylov_blocks: usize,
    pub max_restarts: usize,
    /// Bound on `‖Δ_g e + λe‖_g / λ`.
    pub tol: f64,
    pub inner_tol: f64,
    pub seed: u64,
}

impl Default for EigenOptions {
    fn default() -> Self {
        EigenOptions { block_extra: 4, krylov_blocks: 4, max_restarts: 40, tol: 1e-8, inner_tol: 1e-10, seed: 0x5eed }
    }
}

/// Lowest nonzero eigenvalues of `-Δ_g` with `g`-orthonormal eigenfields.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub eigenvalues: Vec<f64>,
    pub residuals: Vec<f64>,
    pub restarts: usize,
    /// Nodal values of the eigenfields (not serialized).
    #[serde(skip)]
    pub eigenfields: Vec<Vec<f64>>,
}

/// Counts of eigenvalues relative to the bands `(1-ε, 1+ε)` and `(2, ∞)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandMarkers {
    pub eps: f64,
    pub below_band: usize,
    pub in_band: usize,
    /// Eigenvalues in `[1+ε, 2]`, between the two bands.
    pub in_gap: usize,
    pub above_two: usize,
}

impl SpectrumReport {
    pub fn markers(&self, eps: f64) -> BandMarkers {
        let count = |f: &dyn Fn(f64) -> bool| self.eigenvalues.iter().filter(|&&l| f(l)).count();
        BandMarkers {
            eps,
            below_band: count(&|l| l <= 1.0 - eps),
            in_band: count(&|l| l > 1.0 - eps && l < 1.0 + eps),
            in_gap: count(&|l| (1.0 + eps..=2.0).contains(&l)),
            above_two: count(&|l| l > 2.0),
        }
    }

    pub fn eigenfield(&self, surface: &SurfaceRef, i: usize) -> Result<ScalarField> {
        ScalarField::new(surface, self.eigenfields[i].clone())
    }
}

struct Problem<'a> {
    metric: &'a ConformalMetric,
    w_sqrt: Vec<f64>,
    /// Unit null vector `W^{½}1` of `B`.
    null: Vec<f64>,
    b_diag: Vec<f64>,
}

impl<'a> Problem<'a> {
    fn new(metric: &'a ConformalMetric) -> Self {
        let w = metric.weights();
        let w_sqrt: Vec<f64> = w.iter().map(|w| w.sqrt()).collect();
        let nn = norm(&w_sqrt);
        let null = w_sqrt.iter().map(|v| v / nn).collect();
        let s = metric.surface();
        let k_diag: Vec<f64> = match (s.torus_grid(), s.sphere_mesh()) {
            (Some(g), _) => {
                let n = g.len();
                let mean = (0..n)
                    .map(|i| {
                        let (kx, ky) = g.wavenumber(i, false);
                        0.5 * (kx * kx + ky * ky)
                    })
                    .sum::<f64>()
                    / n as f64;
                vec![g.cell_area() * mean; n]
            }
            (_, Some(m)) => m.stiffness().diagonal().iter().map(|d| 0.5 * d).collect(),
            _ => unreachable!("surface has one discretization"),
        };
        let b_diag = k_diag.iter().zip(&w).map(|(k, w)| k / w).collect();
        Problem { metric, w_sqrt, null, b_diag }
    }

    fn apply_k(&self, x: &[f64]) -> Vec<f64> {
        let s = self.metric.surface();
        match (s.torus_grid(), s.sphere_mesh()) {
            (Some(g), _) => g.laplace0(x).iter().map(|v| -v * g.cell_area()).collect(),
            (_, Some(m)) => m.stiffness().mul_vec(x).iter().map(|v| 0.5 * v).collect(),
            _ => unreachable!("surface has one discretization"),
        }
    }

    fn apply_b(&self, y: &[f64]) -> Vec<f64> {
        let x: Vec<f64> = y.iter().zip(&self.w_sqrt).map(|(y, s)| y / s).collect();
        self.apply_k(&x).iter().zip(&self.w_sqrt).map(|(k, s)| k / s).collect()
    }

    fn deflate(&self, v: &mut [f64]) {
        let c = dot(&self.null, v);
        axpy(-c, &self.null, v);
    }

    fn solve_b(&self, rhs: &[f64], tol: f64) -> Result<Vec<f64>> {
        let project = |v: &mut [f64]| self.deflate(v);
        let (mut y, _) = conjugate_gradient(
            |x, out| out.copy_from_slice(&self.apply_b(x)),
            Some(&self.b_diag),
            rhs,
            None,
            Some(&project),
            CgOptions { rel_tol: tol, max_iter: 50_000 },
        )?;
        self.deflate(&mut y);
        Ok(y)
    }

    fn to_field(&self, y: &[f64]) -> Vec<f64> {
        y.iter().zip(&self.w_sqrt).map(|(y, s)| y / s).collect()
    }
}

/// Orthonormalizes `v` against `basis` (two Gram–Schmidt passes); returns
/// `None` if it is numerically dependent.
fn orthonormalize(mut v: Vec<f64>, basis: &[Vec<f64>], prob: &Problem) -> Option<Vec<f64>> {
    let n0 = norm(&v);
    for _ in 0..2 {
        prob.deflate(&mut v);
        for q in basis {
            let c = dot(q, &v);
            axpy(-c, q, &mut v);
        }
    }
    let n = norm(&v);
    if n <= 1e-10 * n0 || n == 0.0 {
        return None;
    }
    v.iter_mut().for_each(|x| *x /= n);
    Some(v)
}

/// The `k` smallest nonzero eigenvalues of `-Δ_g`.
pub fn low_spectrum(metric: &ConformalMetric, k: usize) -> Result<SpectrumReport> {
    low_spectrum_with(metric, k, &EigenOptions::default())
}

pub fn low_spectrum_with(metric: &ConformalMetric, k: usize, opts: &EigenOptions) -> Result<SpectrumReport> {
    if k == 0 {
        return Err(GeometryError::InvalidArgument("k must be at least 1".into()));
    }
    let n = metric.surface().node_count();
    if k + 1 >= n {
        return Err(GeometryError::InvalidArgument(format!("k = {k} too large for {n} nodes")));
    }
    let u = metric.u().values();
    if metric.surface().topology() == Topology::Torus && u.iter().all(|v| *v == u[0]) {
        return torus_listing(metric, k);
    }
    let prob = Problem::new(metric);
    let b = (k + opts.block_extra).min(n - 1);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut block: Vec<Vec<f64>> = (0..b).map(|_| (0..n).map(|_| rng.gen::<f64>() - 0.5).collect()).collect();
    let mut worst = f64::INFINITY;
    for restart in 0..opts.max_restarts {
        let mut basis: Vec<Vec<f64>> = Vec::new();
        let mut last: Vec<Vec<f64>> = Vec::new();
        for v in block.drain(..) {
            if let Some(q) = orthonormalize(v, &basis, &prob) {
                basis.push(q.clone());
                last.push(q);
            }
        }
        for _ in 1..opts.krylov_blocks {
            let mut next = Vec::new();
            for v in &last {
                let z = prob.solve_b(v, opts.inner_tol)?;
                if let Some(q) = orthonormalize(z, &basis, &prob) {
                    basis.push(q.clone());
                    next.push(q);
                }
            }
            if next.is_empty() || basis.len() + 1 >= n {
                break;
            }
            last = next;
        }
        let m = basis.len();
        let bv: Vec<Vec<f64>> = basis.iter().map(|q| prob.apply_b(q)).collect();
        let h = DMatrix::from_fn(m, m, |i, j| 0.5 * (dot(&basis[i], &bv[j]) + dot(&basis[j], &bv[i])));
        let eig = SymmetricEigen::new(h);
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let mut values = Vec::new();
        let mut vectors = Vec::new();
        let mut residuals = Vec::new();
        for &c in order.iter().take(b) {
            let theta = eig.eigenvalues[c];
            let coeff = eig.eigenvectors.column(c);
            let mut y = vec![0.0; n];
            let mut by = vec![0.0; n];
            for j in 0..m {
                axpy(coeff[j], &basis[j], &mut y);
                axpy(coeff[j], &bv[j], &mut by);
            }
            let r: Vec<f64> = by.iter().zip(&y).map(|(a, b)| a - theta * b).collect();
            residuals.push(norm(&r) / theta.abs().max(f64::MIN_POSITIVE));
            values.push(theta);
            vectors.push(y);
        }
        worst = residuals[..k].iter().cloned().fold(0.0, f64::max);
        if worst <= opts.tol {
            let eigenfields = vectors[..k].iter().map(|y| prob.to_field(y)).collect();
            return Ok(SpectrumReport {
                eigenvalues: values[..k].to_vec(),
                residuals: residuals[..k].to_vec(),
                restarts: restart + 1,
                eigenfields,
            });
        }
        block = vectors;
    }
    Err(GeometryError::EigenFailure { iterations: opts.max_restarts, residual: worst })
}

/// Direct listing of Fourier modes for a constant conformal factor.
fn torus_listing(metric: &ConformalMetric, k: usize) -> Result<SpectrumReport> {
    let s = metric.surface();
    let g = s.torus_grid().expect("torus");
    let scale = (-2.0 * metric.u().values()[0]).exp();
    let (nx, ny) = (g.nx() as i64, g.ny() as i64);
    let mut modes = Vec::new();
    for q in -ny / 2..=ny / 2 - 1 {
        for p in -nx / 2..=nx / 2 - 1 {
            if (p, q) == (0, 0) {
                continue;
            }
            // one representative per ± pair; self-conjugate modes carry only a cosine
            let (mp, mq) = (wrap(-p, nx), wrap(-q, ny));
            if (mq, mp) < (q, p) {
                continue;
            }
            let kx = 2.0 * PI * p as f64 / g.lx();
            let ky = 2.0 * PI * q as f64 / g.ly();
            let lambda = 0.5 * (kx * kx + ky * ky) * scale;
            modes.push((lambda, p, q, false));
            if (mp, mq) != (p, q) {
                modes.push((lambda, p, q, true));
            }
        }
    }
    modes.sort_by(|a, b| a.0.total_cmp(&b.0).then((a.1, a.2, a.3).cmp(&(b.1, b.2, b.3))));
    modes.truncate(k);
    let weights = metric.weights();
    let mut eigenvalues = Vec::new();
    let mut eigenfields = Vec::new();
    let mut residuals = Vec::new();
    for (lambda, p, q, sine) in modes {
        let mut f: Vec<f64> = (0..g.len())
            .map(|i| {
                let (x, y) = g.node_xy(i);
                let arg = 2.0 * PI * (p as f64 * x / g.lx() + q as f64 * y / g.ly());
                if sine {
                    arg.sin()
                } else {
                    arg.cos()
                }
            })
            .collect();
        let nrm = f.iter().zip(&weights).map(|(f, w)| f * f * w).sum::<f64>().sqrt();
        f.iter_mut().for_each(|v| *v /= nrm);
        let lf = s.laplace0_values(&f);
        let res =
            lf.iter().zip(&f).zip(&weights).map(|((l, f), w)| (l * scale + lambda * f).powi(2) * w).sum::<f64>().sqrt()
                / lambda;
        eigenvalues.push(lambda);
        residuals.push(res);
        eigenfields.push(f);
    }
    Ok(SpectrumReport { eigenvalues, residuals, restarts: 0, eigenfields })
}

fn wrap(p: i64, n: i64) -> i64 {
    (p + n / 2).rem_euclid(n) - n / 2
}

/// Eigenfields with eigenvalue in `(1-ε, 1+ε)`.
#[derive(Debug, Clone)]
pub struct FirstBand {
    pub eps: f64,
    pub eigenvalues: Vec<f64>,
    pub eigenfields: Vec<Vec<f64>>,
    pub spectrum: SpectrumReport,
}

impl FirstBand {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }
}

/// Computes enough of the spectrum to contain every eigenvalue below `1+ε`
/// and returns those inside the band.
pub fn lambda_first_band(metric: &ConformalMetric, eps: f64) -> Result<FirstBand> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(GeometryError::InvalidArgument(format!("band half-width must be in (0, 1), got {eps}")));
    }
    let n = metric.surface().node_count();
    let mut k = 4;
    loop {
        let spectrum = low_spectrum(metric, k)?;
        let top = *spectrum.eigenvalues.last().expect("k >= 1");
        if top >= 1.0 + eps || 2 * k + 2 >= n {
            let (eigenvalues, eigenfields) = spectrum
                .eigenvalues
                .iter()
                .zip(&spectrum.eigenfields)
                .filter(|(l, _)| **l > 1.0 - eps && **l < 1.0 + eps)
                .map(|(l, f)| (*l, f.clone()))
                .unzip();
            return Ok(FirstBand { eps, eigenvalues, eigenfields, spectrum });
        }
        k *= 2;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KazdanWarnerReport {
    /// `‖Proj(K - K̄)‖ / ‖K - K̄‖`, or 0 below the floor.
    pub ratio: f64,
    pub projection_norm: f64,
    pub defect_norm: f64,
    pub band_dim: usize,
    pub band_eps: f64,
}

/// Relative size of the projection of `K - K̄` onto the first band, with
/// `ε = 0.1` and floor `1e-10`.
pub fn kazdan_warner_residual(metric: &ConformalMetric) -> Result<KazdanWarnerReport> {
    kazdan_warner_residual_with(metric, 0.1, 1e-10)
}

pub fn kazdan_warner_residual_with(metric: &ConformalMetric, eps: f64, floor: f64) -> Result<KazdanWarnerReport> {
    if metric.surface().topology() != Topology::Sphere {
        return Err(GeometryError::Unsupported { op: "kazdan_warner_residual", topology: "torus" });
    }
    let band = lambda_first_band(metric, eps)?;
    Ok(kw_from_band(metric, &band, floor))
}

fn kw_from_band(metric: &ConformalMetric, band: &FirstBand, floor: f64) -> KazdanWarnerReport {
    let k = gauss_curvature(metric);
    let kbar = metric.mean_curvature_target();
    let w = metric.weights();
    let defect: Vec<f64> = k.values().iter().map(|k| k - kbar).collect();
    let defect_norm = defect.iter().zip(&w).map(|(d, w)| d * d * w).sum::<f64>().sqrt();
    let projection_norm = band
        .eigenfields
        .iter()
        .map(|e| e.iter().zip(&defect).zip(&w).map(|((e, d), w)| e * d * w).sum::<f64>().powi(2))
        .sum::<f64>()
        .sqrt();
    let ratio = if defect_norm < floor { 0.0 } else { projection_norm / defect_norm };
    KazdanWarnerReport { ratio, projection_norm, defect_norm, band_dim: band.dim(), band_eps: band.eps }
}

/// `λ₁` (both topologies) and the Kazdan–Warner ratio (sphere only) for the
/// energy ledger.
pub fn flow_diagnostics(metric: &ConformalMetric, band_eps: f64) -> Result<SpectralColumns> {
    match metric.surface().topology() {
        Topology::Torus => {
            let s = low_spectrum(metric, 1)?;
            Ok(SpectralColumns { lambda1: Some(s.eigenvalues[0]), kw_residual: None })
        }
        Topology::Sphere => {
            let band = lambda_first_band(metric, band_eps)?;
            let kw = kw_from_band(metric, &band, 1e-10);
            Ok(SpectralColumns { lambda1: Some(band.spectrum.eigenvalues[0]), kw_residual: Some(kw.ratio) })
        }
    }
}

/// C² cutoff: 1 on `[0, ½]`, 0 on `[1, ∞)`, quintic smoothstep between.
pub fn cutoff(s: f64) -> f64 {
    if s <= 0.5 {
        1.0
    } else if s >= 1.0 {
        0.0
    } else {
        let x = 2.0 * (s - 0.5);
        1.0 - x * x * x * (10.0 - 15.0 * x + 6.0 * x * x)
    }
}

/// `η_ε(· ; p)` at every node, profiled on background distance.
pub fn cutoff_field(surface: &SurfaceRef, center: usize, eps: f64) -> Vec<f64> {
    (0..surface.node_count()).map(|i| cutoff(surface.node_distance(center, i) / eps)).collect()
}

/// `A_ε(p) = ∫ η_ε dg`.
pub fn local_area(metric: &ConformalMetric, center: usize, eps: f64) -> f64 {
    let eta = cutoff_field(metric.surface(), center, eps);
    eta.iter().zip(metric.weights()).map(|(e, w)| e * w).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CenterSample {
    pub node: usize,
    pub area: f64,
    pub energy: f64,
    pub product: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationReport {
    pub eps: f64,
    pub threshold: f64,
    pub centers: Vec<CenterSample>,
    pub max_product: f64,
    /// Centers with `E·A` above 90% of the threshold.
    pub flagged: Vec<usize>,
}

/// Default scan centers: every vertex (sphere), every 4th node in each
/// direction (torus).
pub fn default_centers(surface: &SurfaceRef) -> Vec<usize> {
    match surface.torus_grid() {
        Some(g) => (0..g.ny()).step_by(4).flat_map(|j| (0..g.nx()).step_by(4).map(move |i| j * g.nx() + i)).collect(),
        None => (0..surface.node_count()).collect(),
    }
}

/// Local area `A_ε(p)` and local curvature energy `E_ε(p) = ∫_{B_ε(p)} K² dg`
/// at each center.
pub fn concentration_scan(
    metric: &ConformalMetric,
    eps: f64,
    centers: Option<&[usize]>,
) -> Result<ConcentrationReport> {
    let s = metric.surface();
    if !(eps > 0.0) {
        return Err(GeometryError::InvalidArgument(format!("scan radius must be positive, got {eps}")));
    }
    let injectivity = match s.torus_grid() {
        Some(g) => 0.5 * g.lx().min(g.ly()),
        None => PI,
    };
    if eps >= injectivity {
        return Err(GeometryError::InvalidArgument(format!(
            "scan radius {eps} exceeds the injectivity scale {injectivity}"
        )));
    }
    let owned;
    let centers = match centers {
        Some(c) => c,
        None => {
            owned = default_centers(s);
            &owned
        }
    };
    if let Some(&bad) = centers.iter().find(|&&c| c >= s.node_count()) {
        return Err(GeometryError::InvalidArgument(format!("center {bad} out of range")));
    }
    let k = gauss_curvature(metric);
    let w = metric.weights();
    let k2w: Vec<f64> = k.values().iter().zip(&w).map(|(k, w)| k * k * w).collect();
    let samples: Vec<CenterSample> = centers
        .iter()
        .map(|&c| {
            let mut area = 0.0;
            let mut energy = 0.0;
            for i in 0..s.node_count() {
                let d = s.node_distance(c, i);
                if d < eps {
                    area += cutoff(d / eps) * w[i];
                    energy += k2w[i];
                }
            }
            CenterSample { node: c, area, energy, product: area * energy }
        })
        .collect();
    let max_product = samples.iter().map(|c| c.product).fold(0.0, f64::max);
    let flagged = samples.iter().filter(|c| c.product >= 0.9 * CONCENTRATION_THRESHOLD).map(|c| c.node).collect();
    Ok(ConcentrationReport { eps, threshold: CONCENTRATION_THRESHOLD, centers: samples, max_product, flagged })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HolderReport {
    pub center: usize,
    pub eps: f64,
    /// Smallest `C₁` with `|A_ε(t₂) - A_ε(t₁)| ≤ C₁ √(t₂ - t₁)` over all
    /// snapshot pairs.
    pub c1: f64,
    /// `½ ‖∇η_ε‖_{L²} (∫∫ |∇K|² dg dt)^{½}`.
    pub bound: f64,
    pub pairs: usize,
    pub satisfied: bool,
}

/// Hölder-½ check of `t ↦ A_ε(p)` over stored snapshots. `gradk_integral` is
/// `∫∫ |∇K|²_g dg dt` over the snapshot time range.
pub fn area_holder_check(
    surface: &SurfaceRef,
    snapshots: &[Snapshot],
    center: usize,
    eps: f64,
    gradk_integral: f64,
) -> Result<HolderReport> {
    if snapshots.len() < 2 {
        return Err(GeometryError::InvalidArgument(format!("need at least 2 snapshots, got {}", snapshots.len())));
    }
    if center >= surface.node_count() {
        return Err(GeometryError::InvalidArgument(format!("center {center} out of range")));
    }
    let eta = cutoff_field(surface, center, eps);
    let areas: Vec<f64> = snapshots
        .iter()
        .map(|snap| {
            let u = ScalarField::new(surface, snap.u.clone())?;
            let m = ConformalMetric::new(u);
            Ok(eta.iter().zip(m.weights()).map(|(e, w)| e * w).sum())
        })
        .collect::<Result<_>>()?;
    let mut c1: f64 = 0.0;
    let mut pairs = 0;
    for i in 0..snapshots.len() {
        for j in i + 1..snapshots.len() {
            let dt = snapshots[j].t - snapshots[i].t;
            if dt > 0.0 {
                c1 = c1.max((areas[j] - areas[i]).abs() / dt.sqrt());
                pairs += 1;
            }
        }
    }
    let grad_eta = surface.background_integral(&surface.grad_inner0_values(&eta, &eta)).sqrt();
    let bound = 0.5 * grad_eta * gradk_integral.max(0.0).sqrt();
    Ok(HolderReport { center, eps, c1, bound, pairs, satisfied: c1 <= bound * (1.0 + 1e-9) + 1e-15 })
}

#[cfg(test)]
mod tests;
