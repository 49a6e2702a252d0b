//! Periodic lattice, discrete Fourier transforms and the mass-weighted
//! multiplier `mu = (-Laplacian + m^2)^(1/2)`.
//!
//! Conventions:
//!
//! * lattice points `x_j = (j - n/2) * L/n` per axis, flat row-major storage
//!   with axis 0 slowest;
//! * the forward transform is `f^(k) = N^{-1/2} sum_j e^{-2 pi i k.j / n} f(x_j)`
//!   with `N = n^d`, so the pair is unitary on the lattice; relative to
//!   `sum_x e^{-i k.x} f(x)` it carries the phase `(-1)^{k_1 + ... + k_d}`;
//! * continuum integrals are lattice sums times the cell volume `(L/n)^d`;
//!   with the unitary pair this gives `int |f|^2 dx = (L/n)^d sum_k |f^(k)|^2`.
//!
//! Conversion to a continuum transform `(2 pi)^{-d/2} int e^{-ikx} f(x) dx`:
//! multiply the lattice coefficient by
//! `(-1)^{k_1 + ... + k_d} N^{1/2} (L/n)^d (2 pi)^{-d/2}`. The
//! continuum `(2 pi)^{-d/2}` convention is only used by the off-lattice
//! `asymptotics` module.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Real values on the lattice.
#[derive(Clone, Debug, PartialEq)]
pub struct RealField(pub Vec<f64>);

/// Complex values on the lattice.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexField(pub Vec<Complex64>);

/// Unitary-normalized lattice Fourier coefficients in FFT order.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum(pub Vec<Complex64>);

impl RealField {
    pub fn zeros(len: usize) -> Self {
        RealField(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    pub fn to_complex(&self) -> ComplexField {
        ComplexField(self.0.iter().map(|&v| Complex64::new(v, 0.0)).collect())
    }

    pub fn scaled(&self, factor: f64) -> Self {
        RealField(self.0.iter().map(|v| v * factor).collect())
    }
}

impl ComplexField {
    pub fn zeros(len: usize) -> Self {
        ComplexField(vec![Complex64::new(0.0, 0.0); len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }

    pub fn re(&self) -> RealField {
        RealField(self.0.iter().map(|v| v.re).collect())
    }

    pub fn im(&self) -> RealField {
        RealField(self.0.iter().map(|v| v.im).collect())
    }

    pub fn scaled(&self, factor: Complex64) -> Self {
        ComplexField(self.0.iter().map(|v| v * factor).collect())
    }

    pub fn max_abs_diff(&self, other: &ComplexField) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .fold(0.0, |acc, (a, b)| acc.max((a - b).norm()))
    }
}

struct Tables {
    len: usize,
    /// Integer wavenumber per index along one axis.
    k_int: Vec<i64>,
    /// `|k|^2` per flat index.
    k2: Vec<f64>,
    /// `mu(k)` per flat index.
    mu: Vec<f64>,
    /// Two-thirds rule mask per flat index.
    keep: Vec<bool>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    scratch_len: usize,
}

/// Lattice descriptor together with the physical constants `m` and `lambda`.
#[derive(Clone)]
pub struct Grid {
    dim: usize,
    n: usize,
    box_length: f64,
    mass: f64,
    coupling: f64,
    tables: Arc<Tables>,
}

impl fmt::Debug for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Grid")
            .field("dim", &self.dim)
            .field("n", &self.n)
            .field("box_length", &self.box_length)
            .field("mass", &self.mass)
            .field("coupling", &self.coupling)
            .finish()
    }
}

impl PartialEq for Grid {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim
            && self.n == other.n
            && self.box_length == other.box_length
            && self.mass == other.mass
            && self.coupling == other.coupling
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

impl Grid {
    /// Validates the lattice parameters and builds the wavenumber tables.
    pub fn new(dim: usize, n: usize, box_length: f64, mass: f64, coupling: f64) -> Result<Grid> {
        if !(1..=3).contains(&dim) {
            return Err(Error::InvalidGrid(format!("dimension {dim} not in 1..=3")));
        }
        if n < 8 || !n.is_power_of_two() {
            return Err(Error::InvalidGrid(format!(
                "n = {n} must be a power of two and at least 8"
            )));
        }
        if !(box_length > 0.0 && box_length.is_finite()) {
            return Err(Error::InvalidGrid(format!(
                "box length {box_length} must be > 0"
            )));
        }
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(Error::InvalidGrid(format!("mass {mass} must be > 0")));
        }
        if !(coupling >= 0.0 && coupling.is_finite()) {
            return Err(Error::InvalidGrid(format!(
                "coupling {coupling} must be >= 0"
            )));
        }

        let len = n.pow(dim as u32);
        let k_int: Vec<i64> = (0..n)
            .map(|j| {
                if j < n / 2 {
                    j as i64
                } else {
                    j as i64 - n as i64
                }
            })
            .collect();
        let dk = 2.0 * PI / box_length;
        let mut k2 = vec![0.0; len];
        let mut keep = vec![true; len];
        for (idx, (k2_slot, keep_slot)) in k2.iter_mut().zip(keep.iter_mut()).enumerate() {
            let mut rem = idx;
            let mut sum = 0.0;
            for _ in 0..dim {
                let j = rem % n;
                rem /= n;
                let k = k_int[j];
                sum += (dk * k as f64).powi(2);
                if 3 * k.unsigned_abs() as usize >= n {
                    *keep_slot = false;
                }
            }
            *k2_slot = sum;
        }
        let mu = k2.iter().map(|&q| (q + mass * mass).sqrt()).collect();

        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(n);
        let inverse = planner.plan_fft_inverse(n);
        let scratch_len = forward
            .get_inplace_scratch_len()
            .max(inverse.get_inplace_scratch_len());

        Ok(Grid {
            dim,
            n,
            box_length,
            mass,
            coupling,
            tables: Arc::new(Tables {
                len,
                k_int,
                k2,
                mu,
                keep,
                forward,
                inverse,
                scratch_len,
            }),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn box_length(&self) -> f64 {
        self.box_length
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn coupling(&self) -> f64 {
        self.coupling
    }

    /// Same lattice with a different coupling constant.
    pub fn with_coupling(&self, coupling: f64) -> Result<Grid> {
        Grid::new(self.dim, self.n, self.box_length, self.mass, coupling)
    }

    /// Total number of lattice points `n^d`.
    pub fn len(&self) -> usize {
        self.tables.len
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self) -> f64 {
        self.box_length / self.n as f64
    }

    pub fn wavenumber_spacing(&self) -> f64 {
        2.0 * PI / self.box_length
    }

    /// Quadrature weight `(L/n)^d` of one lattice cell.
    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    pub fn volume(&self) -> f64 {
        self.box_length.powi(self.dim as i32)
    }

    pub fn k2(&self) -> &[f64] {
        &self.tables.k2
    }

    pub fn mu(&self) -> &[f64] {
        &self.tables.mu
    }

    pub fn dealias_mask(&self) -> &[bool] {
        &self.tables.keep
    }

    /// Integer wavenumber components of flat index `idx` (axis 0 first).
    pub fn wavenumber_index(&self, idx: usize) -> [i64; 3] {
        let mut out = [0i64; 3];
        let mut rem = idx;
        for axis in (0..self.dim).rev() {
            out[axis] = self.tables.k_int[rem % self.n];
            rem /= self.n;
        }
        out
    }

    /// Flat index of an integer wavenumber, reduced modulo `n` per axis.
    pub fn flat_index(&self, k: [i64; 3]) -> usize {
        let n = self.n as i64;
        (0..self.dim).fold(0usize, |acc, axis| {
            acc * self.n + k[axis].rem_euclid(n) as usize
        })
    }

    /// Physical wavenumber vector of flat index `idx`.
    pub fn wavevector(&self, idx: usize) -> [f64; 3] {
        let k = self.wavenumber_index(idx);
        let dk = self.wavenumber_spacing();
        [dk * k[0] as f64, dk * k[1] as f64, dk * k[2] as f64]
    }

    /// Lattice position of flat index `idx`.
    pub fn position(&self, idx: usize) -> [f64; 3] {
        let mut out = [0.0; 3];
        let mut rem = idx;
        let h = self.spacing();
        for axis in (0..self.dim).rev() {
            let j = rem % self.n;
            rem /= self.n;
            out[axis] = (j as f64 - (self.n / 2) as f64) * h;
        }
        out
    }

    /// Samples `f(x)` at every lattice point.
    pub fn sample<F: Fn([f64; 3]) -> f64>(&self, f: F) -> RealField {
        RealField((0..self.len()).map(|i| f(self.position(i))).collect())
    }

    pub fn sample_complex<F: Fn([f64; 3]) -> Complex64>(&self, f: F) -> ComplexField {
        ComplexField((0..self.len()).map(|i| f(self.position(i))).collect())
    }

    pub(crate) fn check_len(&self, found: usize) -> Result<()> {
        if found != self.len() {
            return Err(Error::ShapeMismatch {
                expected: self.len(),
                found,
            });
        }
        Ok(())
    }

    /// Unnormalized multi-dimensional FFT in place.
    pub fn fft_in_place(&self, buf: &mut [Complex64], dir: Direction) {
        debug_assert_eq!(buf.len(), self.len());
        let t = &self.tables;
        let plan = match dir {
            Direction::Forward => &t.forward,
            Direction::Inverse => &t.inverse,
        };
        let mut scratch = vec![Complex64::new(0.0, 0.0); t.scratch_len];
        let n = self.n;
        // Last axis is contiguous.
        plan.process_with_scratch(buf, &mut scratch);
        if self.dim == 1 {
            return;
        }
        let mut lane = vec![Complex64::new(0.0, 0.0); n];
        for axis in 0..self.dim - 1 {
            let stride = n.pow((self.dim - 1 - axis) as u32);
            let block = stride * n;
            for base in (0..buf.len()).step_by(block) {
                for offset in 0..stride {
                    let start = base + offset;
                    for (j, slot) in lane.iter_mut().enumerate() {
                        *slot = buf[start + j * stride];
                    }
                    plan.process_with_scratch(&mut lane, &mut scratch);
                    for (j, v) in lane.iter().enumerate() {
                        buf[start + j * stride] = *v;
                    }
                }
            }
        }
    }

    /// Unitary forward transform.
    pub fn transform(&self, field: &ComplexField) -> Result<Spectrum> {
        self.check_len(field.len())?;
        let mut buf = field.0.clone();
        self.fft_in_place(&mut buf, Direction::Forward);
        let norm = 1.0 / (self.len() as f64).sqrt();
        buf.iter_mut().for_each(|v| *v *= norm);
        Ok(Spectrum(buf))
    }

    pub fn transform_real(&self, field: &RealField) -> Result<Spectrum> {
        self.transform(&field.to_complex())
    }

    /// Unitary inverse transform.
    pub fn inverse_transform(&self, spectrum: &Spectrum) -> Result<ComplexField> {
        self.check_len(spectrum.0.len())?;
        let mut buf = spectrum.0.clone();
        self.fft_in_place(&mut buf, Direction::Inverse);
        let norm = 1.0 / (self.len() as f64).sqrt();
        buf.iter_mut().for_each(|v| *v *= norm);
        Ok(ComplexField(buf))
    }

    /// Multiplies every coefficient by `g(mu(k))`.
    pub fn apply_multiplier<F: Fn(f64) -> Complex64>(
        &self,
        field: &ComplexField,
        g: F,
    ) -> Result<ComplexField> {
        let mut spec = self.transform(field)?;
        for (v, &mu) in spec.0.iter_mut().zip(self.mu()) {
            *v *= g(mu);
        }
        self.inverse_transform(&spec)
    }

    /// `mu^s` applied to a complex field.
    pub fn apply_mu_power_complex(&self, field: &ComplexField, s: f64) -> Result<ComplexField> {
        if s == 0.0 {
            self.check_len(field.len())?;
            return Ok(field.clone());
        }
        self.apply_multiplier(field, |mu| Complex64::new(mu.powf(s), 0.0))
    }

    /// `mu^s` applied to a real field; the multiplier is even in `k` so the
    /// result is real up to roundoff, which is discarded.
    pub fn apply_mu_power(&self, field: &RealField, s: f64) -> Result<RealField> {
        Ok(self.apply_mu_power_complex(&field.to_complex(), s)?.re())
    }

    /// `<z1, z2>_{H^s} = sum_k mu^{2s} conj(z1^) z2^ (L/n)^d`, antilinear in
    /// the first slot.
    pub fn sobolev_inner(&self, z1: &ComplexField, z2: &ComplexField, s: f64) -> Result<Complex64> {
        let a = self.transform(z1)?;
        let b = self.transform(z2)?;
        Ok(self.spectral_inner(&a, &b, s))
    }

    /// Same pairing evaluated directly on spectra.
    pub fn spectral_inner(&self, a: &Spectrum, b: &Spectrum, s: f64) -> Complex64 {
        let sum: Complex64 =
            a.0.iter()
                .zip(&b.0)
                .zip(self.mu())
                .map(|((x, y), &mu)| x.conj() * y * mu.powf(2.0 * s))
                .sum();
        sum * self.cell_volume()
    }

    pub fn sobolev_norm(&self, z: &ComplexField, s: f64) -> Result<f64> {
        Ok(self.sobolev_inner(z, z, s)?.re.max(0.0).sqrt())
    }

    /// Zeroes every coefficient removed by the two-thirds rule.
    pub fn dealias(&self, spectrum: &mut [Complex64]) {
        for (v, &keep) in spectrum.iter_mut().zip(self.dealias_mask()) {
            if !keep {
                *v = Complex64::new(0.0, 0.0);
            }
        }
    }

    /// Moves a spectrum onto a lattice with the same box but a different `n`
    /// by zero padding or truncation. Coefficients are rescaled so that the
    /// continuum function they represent is unchanged.
    pub fn resample(&self, spectrum: &Spectrum, target: &Grid) -> Result<Spectrum> {
        self.check_len(spectrum.0.len())?;
        if target.dim != self.dim || target.box_length != self.box_length {
            return Err(Error::GridMismatch);
        }
        let half = (self.n.min(target.n) / 2) as i64;
        let scale = (target.len() as f64 / self.len() as f64).sqrt();
        let mut out = vec![Complex64::new(0.0, 0.0); target.len()];
        for (idx, v) in spectrum.0.iter().enumerate() {
            let k = self.wavenumber_index(idx);
            if (0..self.dim).all(|a| k[a] > -half && k[a] < half) {
                out[target.flat_index(k)] = v * scale;
            }
        }
        Ok(Spectrum(out))
    }
}
