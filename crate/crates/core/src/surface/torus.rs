//! Pseudospectral operators on a uniform periodic grid.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Uniform `nx × ny` periodic grid on `[0, lx) × [0, ly)` with node
/// `(i, j)` stored at index `j * nx + i`.
#[derive(Clone)]
pub struct TorusGrid {
    nx: usize,
    ny: usize,
    lx: f64,
    ly: f64,
    fwd_x: Arc<dyn Fft<f64>>,
    inv_x: Arc<dyn Fft<f64>>,
    fwd_y: Arc<dyn Fft<f64>>,
    inv_y: Arc<dyn Fft<f64>>,
    // full wavenumbers, used for even-order derivatives
    kx: Vec<f64>,
    ky: Vec<f64>,
    // Nyquist entry zeroed, used for odd-order derivatives
    kx_odd: Vec<f64>,
    ky_odd: Vec<f64>,
}

impl fmt::Debug for TorusGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TorusGrid")
            .field("nx", &self.nx)
            .field("ny", &self.ny)
            .field("lx", &self.lx)
            .field("ly", &self.ly)
            .finish()
    }
}

fn wavenumbers(n: usize, len: f64) -> (Vec<f64>, Vec<f64>) {
    let full: Vec<f64> = (0..n)
        .map(|i| {
            let m = if i <= n / 2 { i as f64 } else { i as f64 - n as f64 };
            2.0 * PI * m / len
        })
        .collect();
    let mut odd = full.clone();
    if n.is_multiple_of(2) {
        odd[n / 2] = 0.0;
    }
    (full, odd)
}

impl TorusGrid {
    pub(crate) fn new(nx: usize, ny: usize, lx: f64, ly: f64) -> Self {
        let mut planner = FftPlanner::new();
        let (kx, kx_odd) = wavenumbers(nx, lx);
        let (ky, ky_odd) = wavenumbers(ny, ly);
        TorusGrid {
            nx,
            ny,
            lx,
            ly,
            fwd_x: planner.plan_fft_forward(nx),
            inv_x: planner.plan_fft_inverse(nx),
            fwd_y: planner.plan_fft_forward(ny),
            inv_y: planner.plan_fft_inverse(ny),
            kx,
            ky,
            kx_odd,
            ky_odd,
        }
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn lx(&self) -> f64 {
        self.lx
    }

    pub fn ly(&self) -> f64 {
        self.ly
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell_area(&self) -> f64 {
        self.lx * self.ly / (self.nx * self.ny) as f64
    }

    pub fn node_xy(&self, idx: usize) -> (f64, f64) {
        let i = idx % self.nx;
        let j = idx / self.nx;
        (i as f64 * self.lx / self.nx as f64, j as f64 * self.ly / self.ny as f64)
    }

    /// Minimum-image distance between two nodes in the flat metric.
    pub fn node_distance(&self, a: usize, b: usize) -> f64 {
        let (xa, ya) = self.node_xy(a);
        let (xb, yb) = self.node_xy(b);
        let wrap = |d: f64, l: f64| {
            let d = d.rem_euclid(l);
            d.min(l - d)
        };
        wrap(xa - xb, self.lx).hypot(wrap(ya - yb, self.ly))
    }

    fn transform(&self, data: &mut [Complex64], forward: bool) {
        let (fx, fy) = if forward { (&self.fwd_x, &self.fwd_y) } else { (&self.inv_x, &self.inv_y) };
        let mut scratch =
            vec![Complex64::new(0.0, 0.0); fx.get_inplace_scratch_len().max(fy.get_inplace_scratch_len())];
        for row in data.chunks_exact_mut(self.nx) {
            fx.process_with_scratch(row, &mut scratch);
        }
        let mut col = vec![Complex64::new(0.0, 0.0); self.ny];
        for i in 0..self.nx {
            for (j, c) in col.iter_mut().enumerate() {
                *c = data[j * self.nx + i];
            }
            fy.process_with_scratch(&mut col, &mut scratch);
            for (j, c) in col.iter().enumerate() {
                data[j * self.nx + i] = *c;
            }
        }
    }

    /// Unnormalized forward transform of a real field.
    pub fn forward(&self, f: &[f64]) -> Vec<Complex64> {
        let mut data: Vec<Complex64> = f.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.transform(&mut data, true);
        data
    }

    /// Inverse transform (normalized) returning the complex field.
    pub fn inverse_complex(&self, mut spec: Vec<Complex64>) -> Vec<Complex64> {
        self.transform(&mut spec, false);
        let scale = 1.0 / self.len() as f64;
        spec.iter_mut().for_each(|c| *c *= scale);
        spec
    }

    pub fn inverse(&self, spec: Vec<Complex64>) -> Vec<f64> {
        self.inverse_complex(spec).into_iter().map(|c| c.re).collect()
    }

    /// Wavenumber pair `(kx, ky)` of spectral index `idx`; `odd` selects the
    /// Nyquist-zeroed variant.
    pub fn wavenumber(&self, idx: usize, odd: bool) -> (f64, f64) {
        let i = idx % self.nx;
        let j = idx / self.nx;
        if odd {
            (self.kx_odd[i], self.ky_odd[j])
        } else {
            (self.kx[i], self.ky[j])
        }
    }

    fn apply_symbol(&self, f: &[f64], symbol: impl Fn(f64, f64, f64, f64) -> Complex64) -> Vec<f64> {
        let mut spec = self.forward(f);
        for (idx, c) in spec.iter_mut().enumerate() {
            let (kx, ky) = self.wavenumber(idx, false);
            let (kxo, kyo) = self.wavenumber(idx, true);
            *c *= symbol(kx, ky, kxo, kyo);
        }
        self.inverse(spec)
    }

    pub fn dx(&self, f: &[f64]) -> Vec<f64> {
        self.apply_symbol(f, |_, _, kx, _| Complex64::new(0.0, kx))
    }

    pub fn dy(&self, f: &[f64]) -> Vec<f64> {
        self.apply_symbol(f, |_, _, _, ky| Complex64::new(0.0, ky))
    }

    pub fn dxx(&self, f: &[f64]) -> Vec<f64> {
        self.apply_symbol(f, |kx, _, _, _| Complex64::new(-kx * kx, 0.0))
    }

    pub fn dyy(&self, f: &[f64]) -> Vec<f64> {
        self.apply_symbol(f, |_, ky, _, _| Complex64::new(-ky * ky, 0.0))
    }

    pub fn dxy(&self, f: &[f64]) -> Vec<f64> {
        self.apply_symbol(f, |_, _, kx, ky| Complex64::new(-kx * ky, 0.0))
    }

    /// Half of the flat Laplacian, the operator convention used throughout.
    pub fn laplace0(&self, f: &[f64]) -> Vec<f64> {
        self.apply_symbol(f, |kx, ky, _, _| Complex64::new(-0.5 * (kx * kx + ky * ky), 0.0))
    }

    /// Zero-mean solution of `laplace0(phi) = rhs`; the mean of `rhs` is
    /// discarded.
    pub fn solve_poisson(&self, rhs: &[f64]) -> Vec<f64> {
        self.apply_symbol(rhs, |kx, ky, _, _| {
            let k2 = kx * kx + ky * ky;
            if k2 == 0.0 {
                Complex64::new(0.0, 0.0)
            } else {
                Complex64::new(-2.0 / k2, 0.0)
            }
        })
    }

    /// Solves `(I + coeff * laplace0^2) x = rhs`.
    pub fn solve_biharmonic_shifted(&self, rhs: &[f64], coeff: f64) -> Vec<f64> {
        self.apply_symbol(rhs, |kx, ky, _, _| {
            let k2 = kx * kx + ky * ky;
            Complex64::new(1.0 / (1.0 + coeff * 0.25 * k2 * k2), 0.0)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_transform() {
        let g = TorusGrid::new(16, 18, 1.0, 2.0);
        let f: Vec<f64> = (0..g.len()).map(|i| ((i * 7919) % 13) as f64 - 6.0).collect();
        let back = g.inverse(g.forward(&f));
        for (a, b) in f.iter().zip(&back) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn derivative_of_sine() {
        let g = TorusGrid::new(16, 16, 2.0, 1.0);
        let f: Vec<f64> = (0..g.len()).map(|i| (PI * g.node_xy(i).0).sin()).collect();
        let d = g.dx(&f);
        for i in 0..g.len() {
            let x = g.node_xy(i).0;
            assert!((d[i] - PI * (PI * x).cos()).abs() < 1e-11);
        }
    }

    #[test]
    fn distance_wraps() {
        let g = TorusGrid::new(16, 16, 1.0, 1.0);
        assert!((g.node_distance(0, 15) - 1.0 / 16.0).abs() < 1e-14);
        assert!((g.node_distance(0, 15 * 16) - 1.0 / 16.0).abs() < 1e-14);
    }
}
