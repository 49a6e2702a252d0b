//! Cauchy data, the complex amplitude `z = phi + i mu^{-1} pi`, the complex
//! structure `J`, the symplectic and Hermitian forms, energies and the
//! mass-hyperboloid projection.
//!
//! The free amplitude flow is `z(t) = e^{-i mu t} z(0)`, equivalently
//! `u(t) = cos(mu t) phi + mu^{-1} sin(mu t) pi`.
//!
//! Mass-shell normalization: a `MassShellFunction` stores, per lattice mode,
//! `F(k) = sum_t w_t e^{i mu(k) t} f^(t, k)` with the unitary lattice
//! transform. The projected amplitude is `Pf = mu^{-1} F` (inverse
//! transformed), and the duality
//! `<v, Pf>_{H^{1/2}} = sum_t w_t <e^{-i mu t} v, f(t)>_{L_2}` holds with no
//! further constant.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::spectral::{ComplexField, Grid, RealField, Spectrum};

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// Field value and conjugate momentum at a fixed time.
#[derive(Clone, Debug, PartialEq)]
pub struct CauchyData {
    pub phi: RealField,
    pub pi: RealField,
    pub grid: Grid,
}

/// Complex amplitude `z = phi + i mu^{-1} pi`.
#[derive(Clone, Debug, PartialEq)]
pub struct Amplitude {
    pub z: ComplexField,
    pub grid: Grid,
}

/// A function on the lattice dual, stored in FFT order.
#[derive(Clone, Debug, PartialEq)]
pub struct MassShellFunction {
    pub values: Vec<Complex64>,
    pub grid: Grid,
}

/// Total and free (quadratic) energy.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Energy {
    pub total: f64,
    pub free: f64,
}

impl CauchyData {
    pub fn new(grid: &Grid, phi: RealField, pi: RealField) -> Result<CauchyData> {
        grid.check_len(phi.len())?;
        grid.check_len(pi.len())?;
        if !phi.is_finite() || !pi.is_finite() {
            return Err(Error::InvalidArgument("non-finite Cauchy data".into()));
        }
        Ok(CauchyData {
            phi,
            pi,
            grid: grid.clone(),
        })
    }

    pub fn zeros(grid: &Grid) -> CauchyData {
        CauchyData {
            phi: RealField::zeros(grid.len()),
            pi: RealField::zeros(grid.len()),
            grid: grid.clone(),
        }
    }

    pub fn scaled(&self, factor: f64) -> CauchyData {
        CauchyData {
            phi: self.phi.scaled(factor),
            pi: self.pi.scaled(factor),
            grid: self.grid.clone(),
        }
    }

    /// `self + factor * other`.
    pub fn axpy(&self, factor: f64, other: &CauchyData) -> Result<CauchyData> {
        same_grid(&self.grid, &other.grid)?;
        let add = |a: &RealField, b: &RealField| {
            RealField(a.0.iter().zip(&b.0).map(|(x, y)| x + factor * y).collect())
        };
        Ok(CauchyData {
            phi: add(&self.phi, &other.phi),
            pi: add(&self.pi, &other.pi),
            grid: self.grid.clone(),
        })
    }

    /// Largest absolute difference over both components.
    pub fn max_abs_diff(&self, other: &CauchyData) -> f64 {
        let d = |a: &RealField, b: &RealField| {
            a.0.iter()
                .zip(&b.0)
                .fold(0.0f64, |acc, (x, y)| acc.max((x - y).abs()))
        };
        d(&self.phi, &other.phi).max(d(&self.pi, &other.pi))
    }

    pub fn is_finite(&self) -> bool {
        self.phi.is_finite() && self.pi.is_finite()
    }

    pub fn to_amplitude(&self) -> Result<Amplitude> {
        to_amplitude(self)
    }
}

impl Amplitude {
    pub fn new(grid: &Grid, z: ComplexField) -> Result<Amplitude> {
        grid.check_len(z.len())?;
        if !z.is_finite() {
            return Err(Error::InvalidArgument("non-finite amplitude".into()));
        }
        Ok(Amplitude {
            z,
            grid: grid.clone(),
        })
    }

    pub fn zeros(grid: &Grid) -> Amplitude {
        Amplitude {
            z: ComplexField::zeros(grid.len()),
            grid: grid.clone(),
        }
    }

    pub fn scaled(&self, factor: Complex64) -> Amplitude {
        Amplitude {
            z: self.z.scaled(factor),
            grid: self.grid.clone(),
        }
    }

    /// `self + factor * other`.
    pub fn axpy(&self, factor: Complex64, other: &Amplitude) -> Result<Amplitude> {
        same_grid(&self.grid, &other.grid)?;
        Ok(Amplitude {
            z: ComplexField(
                self.z
                    .0
                    .iter()
                    .zip(&other.z.0)
                    .map(|(a, b)| a + factor * b)
                    .collect(),
            ),
            grid: self.grid.clone(),
        })
    }

    pub fn to_cauchy(&self) -> Result<CauchyData> {
        from_amplitude(self)
    }

    /// `||z||_{H^s}` with the mass-weighted multiplier.
    pub fn norm(&self, s: f64) -> Result<f64> {
        self.grid.sobolev_norm(&self.z, s)
    }
}

pub(crate) fn same_grid(a: &Grid, b: &Grid) -> Result<()> {
    if a != b {
        return Err(Error::GridMismatch);
    }
    Ok(())
}

/// `R(phi, pi) = phi + i mu^{-1} pi`.
pub fn to_amplitude(data: &CauchyData) -> Result<Amplitude> {
    let g = &data.grid;
    let pi_scaled = g.apply_mu_power(&data.pi, -1.0)?;
    let z = data
        .phi
        .0
        .iter()
        .zip(&pi_scaled.0)
        .map(|(&p, &q)| Complex64::new(p, q))
        .collect();
    Ok(Amplitude {
        z: ComplexField(z),
        grid: g.clone(),
    })
}

/// `R^{-1} z = (Re z, mu Im z)`.
pub fn from_amplitude(amp: &Amplitude) -> Result<CauchyData> {
    let g = &amp.grid;
    let pi = g.apply_mu_power(&amp.z.im(), 1.0)?;
    Ok(CauchyData {
        phi: amp.z.re(),
        pi,
        grid: g.clone(),
    })
}

/// `J(phi, pi) = (-mu^{-1} pi, mu phi)`.
pub fn apply_j(data: &CauchyData) -> Result<CauchyData> {
    let g = &data.grid;
    let phi = g.apply_mu_power(&data.pi, -1.0)?.scaled(-1.0);
    let pi = g.apply_mu_power(&data.phi, 1.0)?;
    Ok(CauchyData {
        phi,
        pi,
        grid: g.clone(),
    })
}

/// `omega(a, b) = int (phi_a pi_b - pi_a phi_b) dx`.
pub fn symplectic_form(a: &CauchyData, b: &CauchyData) -> Result<f64> {
    same_grid(&a.grid, &b.grid)?;
    let sum: f64 = a
        .phi
        .0
        .iter()
        .zip(&a.pi.0)
        .zip(b.phi.0.iter().zip(&b.pi.0))
        .map(|((pa, qa), (pb, qb))| pa * qb - qa * pb)
        .sum();
    Ok(sum * a.grid.cell_volume())
}

/// `omega(a, J b) + i omega(a, b)`; equals `<R a, R b>_{H^{1/2}}`.
pub fn hermitian_form(a: &CauchyData, b: &CauchyData) -> Result<Complex64> {
    let jb = apply_j(b)?;
    Ok(Complex64::new(
        symplectic_form(a, &jb)?,
        symplectic_form(a, b)?,
    ))
}

/// Hamiltonian with quartic weight `lambda / 4`; gradient by spectral
/// differentiation.
pub fn energy(data: &CauchyData) -> Result<Energy> {
    let g = &data.grid;
    let w = g.cell_volume();
    let phi_hat = g.transform_real(&data.phi)?;
    let kinetic: f64 = data.pi.0.iter().map(|p| p * p).sum::<f64>() * 0.5 * w;
    let potential: f64 = phi_hat
        .0
        .iter()
        .zip(g.mu())
        .map(|(v, mu)| mu * mu * v.norm_sqr())
        .sum::<f64>()
        * 0.5
        * w;
    let quartic: f64 = data.phi.0.iter().map(|p| p.powi(4)).sum::<f64>() * 0.25 * g.coupling() * w;
    let free = kinetic + potential;
    Ok(Energy {
        total: free + quartic,
        free,
    })
}

/// Samples of a space-time function `f(t, x)` on a uniform time grid.
#[derive(Clone, Debug)]
pub struct SpaceTimeSamples {
    pub grid: Grid,
    pub t0: f64,
    pub dt: f64,
    pub slices: Vec<ComplexField>,
}

impl SpaceTimeSamples {
    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.slices.len()).map(move |i| self.t0 + i as f64 * self.dt)
    }

    /// Trapezoid weights.
    pub fn weights(&self) -> Vec<f64> {
        let n = self.slices.len();
        (0..n)
            .map(|i| {
                if i == 0 || i + 1 == n {
                    0.5 * self.dt
                } else {
                    self.dt
                }
            })
            .collect()
    }
}

/// Goodman projection onto the mass shell: spatial transform of every slice
/// followed by trapezoid quadrature of `e^{i mu(k) t}` in time.
pub fn hyperboloid_project(f: &SpaceTimeSamples) -> Result<MassShellFunction> {
    if f.slices.len() < 2 {
        return Err(Error::InvalidArgument(
            "hyperboloid projection needs at least 2 time samples".into(),
        ));
    }
    if !(f.dt > 0.0) {
        return Err(Error::InvalidArgument("time step must be positive".into()));
    }
    let g = &f.grid;
    let mut acc = vec![Complex64::new(0.0, 0.0); g.len()];
    for ((slice, t), w) in f.slices.iter().zip(f.times()).zip(f.weights()) {
        let spec = g.transform(slice)?;
        for ((a, v), &mu) in acc.iter_mut().zip(&spec.0).zip(g.mu()) {
            *a += w * Complex64::from_polar(1.0, mu * t) * v;
        }
    }
    Ok(MassShellFunction {
        values: acc,
        grid: g.clone(),
    })
}

/// `e^{i mu t} (mu phi^ + i pi^)` for data `(phi, pi)` observed at time `t`.
pub fn mass_shell_representation(data: &CauchyData, t: f64) -> Result<MassShellFunction> {
    let g = &data.grid;
    let phi_hat = g.transform_real(&data.phi)?;
    let pi_hat = g.transform_real(&data.pi)?;
    let values = phi_hat
        .0
        .iter()
        .zip(&pi_hat.0)
        .zip(g.mu())
        .map(|((p, q), &mu)| Complex64::from_polar(1.0, mu * t) * (mu * p + I * q))
        .collect();
    Ok(MassShellFunction {
        values,
        grid: g.clone(),
    })
}

/// Both sides of `<v, P f>_{H^{1/2}} = sum_t w_t <v+(t), f(t)>_{L^2}`.
/// The left side goes through the projection and the Sobolev pairing; the
/// right side propagates `v` freely and pairs slice by slice in position
/// space.
pub fn hyperboloid_duality(v: &Amplitude, f: &SpaceTimeSamples) -> Result<(Complex64, Complex64)> {
    same_grid(&v.grid, &f.grid)?;
    let g = &v.grid;
    let pf = hyperboloid_project(f)?.to_amplitude()?;
    let lhs = g.sobolev_inner(&v.z, &pf.z, 0.5)?;
    let mut rhs = Complex64::new(0.0, 0.0);
    for ((slice, t), w) in f.slices.iter().zip(f.times()).zip(f.weights()) {
        let vt = g.apply_multiplier(&v.z, |mu| Complex64::from_polar(1.0, -mu * t))?;
        let pair: Complex64 = vt.0.iter().zip(&slice.0).map(|(a, b)| a.conj() * b).sum();
        rhs += pair * (w * g.cell_volume());
    }
    Ok((lhs, rhs))
}

impl MassShellFunction {
    /// The projected amplitude `mu^{-1} F` in position space.
    pub fn to_amplitude(&self) -> Result<Amplitude> {
        let g = &self.grid;
        let spec = Spectrum(
            self.values
                .iter()
                .zip(g.mu())
                .map(|(v, mu)| v / mu)
                .collect(),
        );
        Ok(Amplitude {
            z: g.inverse_transform(&spec)?,
            grid: g.clone(),
        })
    }

    pub fn max_abs_diff(&self, other: &MassShellFunction) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0, |acc, (a, b)| acc.max((a - b).norm()))
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |acc, v| acc.max(v.norm()))
    }
}
