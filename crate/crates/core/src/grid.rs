//! Uniform radial grids, FFT kinetic energy, and Fourier-grid eigenstates.
//!
//! Transforms are unnormalized forward and 1/N-scaled inverse. Momenta are
//! stored in FFT order `[0..N/2-1, -N/2..-1] * 2π/(N·spacing)`.

use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridRepr", into = "GridRepr")]
pub struct RadialGrid {
    n_points: usize,
    r_min: f64,
    r_max: f64,
    spacing: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridRepr {
    n_points: usize,
    r_min: f64,
    r_max: f64,
}

impl TryFrom<GridRepr> for RadialGrid {
    type Error = Error;
    fn try_from(g: GridRepr) -> Result<Self> {
        RadialGrid::new(g.n_points, g.r_min, g.r_max)
    }
}

impl From<RadialGrid> for GridRepr {
    fn from(g: RadialGrid) -> Self {
        GridRepr { n_points: g.n_points, r_min: g.r_min, r_max: g.r_max }
    }
}

impl RadialGrid {
    pub fn new(n_points: usize, r_min: f64, r_max: f64) -> Result<Self> {
        if n_points < 8 || !n_points.is_power_of_two() {
            return Err(Error::Grid(format!(
                "n_points = {n_points} is not a power of two >= 8"
            )));
        }
        if !(r_min.is_finite() && r_max.is_finite()) || r_max <= r_min {
            return Err(Error::Grid(format!(
                "r_max ({r_max}) must exceed r_min ({r_min})"
            )));
        }
        let spacing = (r_max - r_min) / (n_points - 1) as f64;
        Ok(Self { n_points, r_min, r_max, spacing })
    }

    pub fn len(&self) -> usize {
        self.n_points
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn r_min(&self) -> f64 {
        self.r_min
    }

    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn point(&self, i: usize) -> f64 {
        self.r_min + i as f64 * self.spacing
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.n_points).map(|i| self.point(i)).collect()
    }

    /// Angular wavenumbers in FFT order.
    pub fn momenta(&self) -> Vec<f64> {
        let n = self.n_points;
        let dk = 2.0 * std::f64::consts::PI / (n as f64 * self.spacing);
        (0..n)
            .map(|j| {
                let m = if j < n / 2 { j as i64 } else { j as i64 - n as i64 };
                m as f64 * dk
            })
            .collect()
    }

    /// Largest representable |k|.
    pub fn k_max(&self) -> f64 {
        std::f64::consts::PI / self.spacing
    }
}

pub fn build_grid(n_points: usize, r_min: f64, r_max: f64) -> Result<RadialGrid> {
    RadialGrid::new(n_points, r_min, r_max)
}

/// Complex amplitudes on a grid, normalized so that Σ|ψ|²·spacing is the norm.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexField {
    pub values: Vec<C64>,
}

impl ComplexField {
    pub fn zeros(n: usize) -> Self {
        Self { values: vec![C64::new(0.0, 0.0); n] }
    }

    pub fn from_real(values: &[f64]) -> Self {
        Self { values: values.iter().map(|&v| C64::new(v, 0.0)).collect() }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn norm_sqr(&self, grid: &RadialGrid) -> f64 {
        self.values.iter().map(|z| z.norm_sqr()).sum::<f64>() * grid.spacing()
    }

    /// ⟨self|other⟩ on the grid.
    pub fn inner(&self, other: &ComplexField, grid: &RadialGrid) -> C64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a.conj() * b)
            .sum::<C64>()
            * grid.spacing()
    }

    pub fn scale(&mut self, s: C64) {
        for z in &mut self.values {
            *z *= s;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

/// Forward/inverse transforms of one length, shared across threads.
#[derive(Clone)]
pub struct FftPair {
    pub forward: Arc<dyn Fft<f64>>,
    pub inverse: Arc<dyn Fft<f64>>,
}

impl FftPair {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self { forward: planner.plan_fft_forward(n), inverse: planner.plan_fft_inverse(n) }
    }

    pub fn scratch_len(&self) -> usize {
        self.forward
            .get_inplace_scratch_len()
            .max(self.inverse.get_inplace_scratch_len())
    }
}

/// `T = k²/2m` applied spectrally.
#[derive(Clone)]
pub struct KineticOperator {
    ffts: FftPair,
    /// k²/2m in FFT order.
    pub energies: Vec<f64>,
}

impl KineticOperator {
    pub fn new(grid: &RadialGrid, mass: f64) -> Result<Self> {
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(Error::Invalid(format!("mass must be positive, got {mass}")));
        }
        let energies = grid.momenta().iter().map(|k| k * k / (2.0 * mass)).collect();
        Ok(Self { ffts: FftPair::new(grid.len()), energies })
    }

    pub fn apply(&self, field: &ComplexField) -> Result<ComplexField> {
        let n = self.energies.len();
        if field.len() != n {
            return Err(Error::Invalid(format!(
                "field has {} points, grid has {n}",
                field.len()
            )));
        }
        let mut buf = field.values.clone();
        let mut scratch = vec![C64::new(0.0, 0.0); self.ffts.scratch_len()];
        self.ffts.forward.process_with_scratch(&mut buf, &mut scratch);
        let inv_n = 1.0 / n as f64;
        for (z, e) in buf.iter_mut().zip(&self.energies) {
            *z *= e * inv_n;
        }
        self.ffts.inverse.process_with_scratch(&mut buf, &mut scratch);
        Ok(ComplexField { values: buf })
    }
}

pub fn spectral_kinetic_apply(
    field: &ComplexField,
    grid: &RadialGrid,
    mass: f64,
) -> Result<ComplexField> {
    KineticOperator::new(grid, mass)?.apply(field)
}

/// First row of the circulant kinetic matrix: `t_j = IFFT(k²/2m)_j`.
pub fn kinetic_row(grid: &RadialGrid, mass: f64) -> Result<Vec<f64>> {
    let op = KineticOperator::new(grid, mass)?;
    let n = grid.len();
    let mut buf: Vec<C64> = op.energies.iter().map(|&e| C64::new(e / n as f64, 0.0)).collect();
    op.ffts.inverse.process(&mut buf);
    Ok(buf.iter().map(|z| z.re).collect())
}

#[derive(Clone, Debug)]
pub struct EigenSolution {
    /// Hartree, ascending.
    pub energies: Vec<f64>,
    pub states: Vec<ComplexField>,
}

/// Lowest `k` eigenpairs of the periodic Fourier-grid Hamiltonian.
pub fn fgh_eigensolve(
    grid: &RadialGrid,
    potential: &[f64],
    mass: f64,
    k: usize,
) -> Result<EigenSolution> {
    let n = grid.len();
    if potential.len() != n {
        return Err(Error::Invalid(format!(
            "potential has {} values, grid has {n}",
            potential.len()
        )));
    }
    if let Some(i) = potential.iter().position(|v| !v.is_finite()) {
        return Err(Error::Invalid(format!("potential value at index {i} is not finite")));
    }
    if k == 0 || k > n {
        return Err(Error::Invalid(format!("k = {k} outside 1..={n}")));
    }
    let t = kinetic_row(grid, mass)?;
    let h = DMatrix::from_fn(n, n, |i, j| {
        let d = (i + n - j) % n;
        let off = 0.5 * (t[d] + t[(n - d) % n]);
        if i == j {
            off + potential[i]
        } else {
            off
        }
    });
    let eig = SymmetricEigen::new(h);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let norm = 1.0 / grid.spacing().sqrt();
    let mut energies = Vec::with_capacity(k);
    let mut states = Vec::with_capacity(k);
    for &col in order.iter().take(k) {
        energies.push(eig.eigenvalues[col]);
        let v = eig.eigenvectors.column(col);
        let imax = (0..n).max_by(|&a, &b| v[a].abs().total_cmp(&v[b].abs())).unwrap_or(0);
        let sign = if v[imax] < 0.0 { -norm } else { norm };
        states.push(ComplexField {
            values: v.iter().map(|&x| C64::new(sign * x, 0.0)).collect(),
        });
    }
    Ok(EigenSolution { energies, states })
}

#[derive(Clone, Debug)]
pub struct GaussianPacket {
    pub field: ComplexField,
    /// Set when the amplitude at either grid edge exceeds 1e-8.
    pub edge_warning: bool,
}

/// Normalized Gaussian `exp(-(r-c)²/(4σ²) + i k r)`; `width` is σ of |ψ|².
pub fn gaussian_packet(
    grid: &RadialGrid,
    center: f64,
    width: f64,
    momentum: f64,
) -> Result<GaussianPacket> {
    if !(center > grid.r_min() && center < grid.r_max()) {
        return Err(Error::Invalid(format!(
            "center {center} outside ({}, {})",
            grid.r_min(),
            grid.r_max()
        )));
    }
    if !(width > 0.0 && width.is_finite()) {
        return Err(Error::Invalid(format!("width must be positive, got {width}")));
    }
    let mut field = ComplexField {
        values: grid
            .points()
            .iter()
            .map(|&r| {
                let x = r - center;
                C64::from_polar((-x * x / (4.0 * width * width)).exp(), momentum * x)
            })
            .collect(),
    };
    let nrm = field.norm_sqr(grid).sqrt();
    field.scale(C64::new(1.0 / nrm, 0.0));
    let n = grid.len();
    let edge_warning = field.values[0].norm() > 1e-8 || field.values[n - 1].norm() > 1e-8;
    Ok(GaussianPacket { field, edge_warning })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_examples() {
        let g = build_grid(8, 0.0, 7.0).unwrap();
        assert_eq!(g.spacing(), 1.0);
        assert_eq!(g.points(), vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]);
        let g = build_grid(512, 3.0, 13.0).unwrap();
        assert_eq!(g.spacing(), 10.0 / 511.0);
        assert!(matches!(build_grid(6, 0.0, 1.0), Err(Error::Grid(_))));
        assert!(build_grid(4, 0.0, 1.0).is_err());
        assert!(build_grid(16, 1.0, 1.0).is_err());
    }

    #[test]
    fn momentum_ordering() {
        let g = build_grid(8, 0.0, 7.0).unwrap();
        let dk = 2.0 * std::f64::consts::PI / 8.0;
        let want: Vec<f64> = [0, 1, 2, 3, -4, -3, -2, -1].iter().map(|&m| m as f64 * dk).collect();
        assert_eq!(g.momenta(), want);
    }

    #[test]
    fn plane_wave_is_kinetic_eigenvector() {
        let g = build_grid(64, 0.0, 10.0).unwrap();
        let k = g.momenta()[5];
        let m = 3.0;
        let psi = ComplexField {
            values: g.points().iter().map(|&r| C64::from_polar(1.0, k * (r - g.r_min()))).collect(),
        };
        let t = spectral_kinetic_apply(&psi, &g, m).unwrap();
        let e = k * k / (2.0 * m);
        for (a, b) in t.values.iter().zip(&psi.values) {
            assert!((a - b * e).norm() < 1e-10);
        }
    }

    #[test]
    fn constant_field_has_zero_kinetic_energy() {
        let g = build_grid(32, -1.0, 1.0).unwrap();
        let psi = ComplexField { values: vec![C64::new(0.3, -0.7); 32] };
        let t = spectral_kinetic_apply(&psi, &g, 1.0).unwrap();
        assert!(t.values.iter().all(|z| z.norm() < 1e-12));
    }

    #[test]
    fn kinetic_matches_finite_difference() {
        // -ψ''/2m on a smooth Gaussian; FD error is O(h²)
        let m = 2.0;
        let mut errs = vec![];
        for &n in &[256usize, 512] {
            let g = build_grid(n, -10.0, 10.0).unwrap();
            let psi = gaussian_packet(&g, 0.0, 1.0, 0.0).unwrap().field;
            let t = spectral_kinetic_apply(&psi, &g, m).unwrap();
            let h = g.spacing();
            let mut err: f64 = 0.0;
            for i in 1..n - 1 {
                let d2 = (psi.values[i + 1] - 2.0 * psi.values[i] + psi.values[i - 1]) / (h * h);
                err = err.max((t.values[i] + d2 / (2.0 * m)).norm());
            }
            errs.push(err);
        }
        assert!(errs[0] < 1e-3);
        let ratio = errs[0] / errs[1];
        assert!(ratio > 3.5 && ratio < 4.5, "ratio {ratio}");
    }

    #[test]
    fn kinetic_rejects_length_mismatch() {
        let g = build_grid(16, 0.0, 1.0).unwrap();
        assert!(spectral_kinetic_apply(&ComplexField::zeros(8), &g, 1.0).is_err());
    }

    #[test]
    fn harmonic_spectrum() {
        let m = 1.0;
        let w = 0.01;
        let g = build_grid(256, -60.0, 60.0).unwrap();
        let v: Vec<f64> = g.points().iter().map(|r| 0.5 * m * w * w * r * r).collect();
        let sol = fgh_eigensolve(&g, &v, m, 6).unwrap();
        for (n, e) in sol.energies.iter().enumerate() {
            let exact = w * (n as f64 + 0.5);
            assert!(((e - exact) / exact).abs() < 1e-8, "n={n} e={e}");
        }
    }

    #[test]
    fn free_box_spectrum_is_periodic_dispersion() {
        // V = 0: eigenvalues are k²/2m of the periodic grid, each k ≠ 0 doubly degenerate
        let g = build_grid(16, 0.0, 15.0).unwrap();
        let sol = fgh_eigensolve(&g, &[0.0; 16], 1.0, 16).unwrap();
        let mut want: Vec<f64> = g.momenta().iter().map(|k| k * k / 2.0).collect();
        want.sort_by(f64::total_cmp);
        for (a, b) in sol.energies.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
        let dk = 2.0 * std::f64::consts::PI / (16.0 * g.spacing());
        for n in 1..4 {
            let e = sol.energies[2 * n - 1];
            assert!((e / (dk * dk / 2.0) - (n * n) as f64).abs() < 1e-9);
        }
    }

    #[test]
    fn eigensolve_errors() {
        let g = build_grid(8, 0.0, 1.0).unwrap();
        let mut v = vec![0.0; 8];
        assert!(fgh_eigensolve(&g, &v, 1.0, 0).is_err());
        assert!(fgh_eigensolve(&g, &v, 1.0, 9).is_err());
        v[3] = f64::NAN;
        assert!(fgh_eigensolve(&g, &v, 1.0, 1).is_err());
    }

    #[test]
    fn gaussian_properties() {
        let g = build_grid(128, -10.0, 10.0).unwrap();
        let p = gaussian_packet(&g, 0.5, 1.0, 0.0).unwrap();
        assert!((p.field.norm_sqr(&g) - 1.0).abs() < 1e-10);
        assert!(p.field.values.iter().all(|z| z.im == 0.0));
        assert!(!p.edge_warning);
        let wide = gaussian_packet(&g, 0.5, 4.0, 1.0).unwrap();
        assert!(wide.edge_warning);
        assert!(gaussian_packet(&g, 11.0, 1.0, 0.0).is_err());
        assert!(gaussian_packet(&g, 0.0, 0.0, 0.0).is_err());
    }
}
