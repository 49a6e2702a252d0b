//! Time evolution of `u_tt - Laplacian u + m^2 u + lambda u^3 = 0`.
//!
//! The integrator is a Strang splitting: half kick with the dealiased cubic
//! force, exact rotation of every Fourier mode under the linear flow, half
//! kick. Both substeps are symplectic and the scheme is symmetric, so it is
//! time reversible. The tangent integrator differentiates exactly this map.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::phase_space::{same_grid, to_amplitude, Amplitude, CauchyData};
use crate::quadrature::{bump, gauss_legendre, log_log_slope, trapezoid_weights};
use crate::report::ExperimentReport;
use crate::spectral::{ComplexField, Direction, Grid, RealField};

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };
const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// States of a solution on a uniform time grid.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<CauchyData>,
    pub grid: Grid,
    pub dt: f64,
}

/// Solutions of the linearized equation along a base trajectory.
#[derive(Clone, Debug)]
pub struct TangentTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<CauchyData>,
}

impl Trajectory {
    pub fn first(&self) -> &CauchyData {
        &self.states[0]
    }

    pub fn last(&self) -> &CauchyData {
        self.states
            .last()
            .expect("trajectory has at least one state")
    }

    /// Index of the stored state closest to `t`, if within half a step.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let (i, d) = self
            .times
            .iter()
            .enumerate()
            .map(|(i, &s)| (i, (s - t).abs()))
            .min_by(|a, b| a.1.total_cmp(&b.1))?;
        (d <= 0.5 * self.dt.abs()).then_some(i)
    }
}

/// `z^(k) -> e^{-i mu(k) t} z^(k)`, exact.
pub fn free_flow(z: &Amplitude, t: f64) -> Result<Amplitude> {
    let g = &z.grid;
    Ok(Amplitude {
        z: g.apply_multiplier(&z.z, |mu| Complex64::from_polar(1.0, -mu * t))?,
        grid: g.clone(),
    })
}

/// Number of steps and the signed step that lands exactly on `t_final`.
pub(crate) fn step_plan(t_final: f64, dt: f64) -> Result<(usize, f64)> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "time step {dt} must be > 0"
        )));
    }
    if !t_final.is_finite() {
        return Err(Error::InvalidArgument("non-finite final time".into()));
    }
    if t_final == 0.0 {
        return Ok((0, 0.0));
    }
    let ratio = t_final.abs() / dt;
    let steps = if (ratio - ratio.round()).abs() < 1e-9 * ratio.max(1.0) {
        ratio.round() as usize
    } else {
        ratio.ceil() as usize
    }
    .max(1);
    Ok((steps, t_final / steps as f64))
}

/// Strang splitting stepper holding the state in (unnormalized) Fourier
/// space.
pub(crate) struct SplitStepper {
    grid: Grid,
    coupling: f64,
    dt: f64,
    cos: Vec<f64>,
    sin: Vec<f64>,
    phi_hat: Vec<Complex64>,
    pi_hat: Vec<Complex64>,
    force_hat: Vec<Complex64>,
    /// Dealiased field `P phi` in position space at the current time.
    phi_dealiased: Vec<f64>,
    work: Vec<Complex64>,
    t: f64,
}

impl SplitStepper {
    pub(crate) fn new(data: &CauchyData, t0: f64, dt: f64) -> Result<Self> {
        let g = data.grid.clone();
        let len = g.len();
        let mut phi_hat: Vec<Complex64> =
            data.phi.0.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        let mut pi_hat: Vec<Complex64> =
            data.pi.0.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        g.fft_in_place(&mut phi_hat, Direction::Forward);
        g.fft_in_place(&mut pi_hat, Direction::Forward);
        let cos = g.mu().iter().map(|mu| (mu * dt).cos()).collect();
        let sin = g.mu().iter().map(|mu| (mu * dt).sin()).collect();
        let mut s = SplitStepper {
            coupling: g.coupling(),
            grid: g,
            dt,
            cos,
            sin,
            phi_hat,
            pi_hat,
            force_hat: vec![ZERO; len],
            phi_dealiased: vec![0.0; len],
            work: vec![ZERO; len],
            t: t0,
        };
        s.refresh()?;
        Ok(s)
    }

    pub(crate) fn phi_dealiased(&self) -> &[f64] {
        &self.phi_dealiased
    }

    /// Recomputes `P phi` and the force `lambda P[(P phi)^3]`.
    fn refresh(&mut self) -> Result<()> {
        let g = &self.grid;
        let norm = 1.0 / g.len() as f64;
        for ((w, p), &keep) in self
            .work
            .iter_mut()
            .zip(&self.phi_hat)
            .zip(g.dealias_mask())
        {
            *w = if keep { *p } else { ZERO };
        }
        g.fft_in_place(&mut self.work, Direction::Inverse);
        let mut finite = true;
        for (d, w) in self.phi_dealiased.iter_mut().zip(self.work.iter_mut()) {
            *d = w.re * norm;
            finite &= d.is_finite();
            *w = Complex64::new(self.coupling * *d * *d * *d, 0.0);
        }
        if !finite {
            return Err(Error::BlowUp { t: self.t });
        }
        if self.coupling == 0.0 {
            self.force_hat.iter_mut().for_each(|f| *f = ZERO);
            return Ok(());
        }
        g.fft_in_place(&mut self.work, Direction::Forward);
        for ((f, w), &keep) in self
            .force_hat
            .iter_mut()
            .zip(&self.work)
            .zip(g.dealias_mask())
        {
            *f = if keep { *w } else { ZERO };
        }
        Ok(())
    }

    fn kick(&mut self, h: f64) {
        if self.coupling == 0.0 {
            return;
        }
        for (p, f) in self.pi_hat.iter_mut().zip(&self.force_hat) {
            *p -= h * f;
        }
    }

    pub(crate) fn step(&mut self) -> Result<()> {
        let half = 0.5 * self.dt;
        self.kick(half);
        let mu = self.grid.mu();
        for i in 0..self.phi_hat.len() {
            let (c, s, w) = (self.cos[i], self.sin[i], mu[i]);
            let p = self.phi_hat[i];
            let q = self.pi_hat[i];
            self.phi_hat[i] = c * p + (s / w) * q;
            self.pi_hat[i] = -(w * s) * p + c * q;
        }
        self.refresh()?;
        self.kick(half);
        self.t += self.dt;
        Ok(())
    }

    pub(crate) fn state(&self) -> CauchyData {
        let g = &self.grid;
        let norm = 1.0 / g.len() as f64;
        let back = |spec: &[Complex64]| {
            let mut buf = spec.to_vec();
            g.fft_in_place(&mut buf, Direction::Inverse);
            RealField(buf.iter().map(|v| v.re * norm).collect())
        };
        CauchyData {
            phi: back(&self.phi_hat),
            pi: back(&self.pi_hat),
            grid: g.clone(),
        }
    }
}

/// Evolves `data` from `t0` to `t0 + t_final`, recording every `every`-th
/// step (and always the endpoints). `every = 0` keeps only the endpoints.
pub fn evolve_recorded(
    data: &CauchyData,
    t0: f64,
    t_final: f64,
    dt: f64,
    every: usize,
) -> Result<Trajectory> {
    let (steps, h) = step_plan(t_final, dt)?;
    let mut stepper = SplitStepper::new(data, t0, h)?;
    let mut times = vec![t0];
    let mut states = vec![data.clone()];
    for i in 1..=steps {
        stepper.step()?;
        if i == steps || (every > 0 && i % every == 0) {
            times.push(t0 + i as f64 * h);
            states.push(stepper.state());
        }
    }
    let step = if every > 0 { h * every as f64 } else { t_final };
    Ok(Trajectory {
        times,
        states,
        grid: data.grid.clone(),
        dt: if steps == 0 { dt } else { step },
    })
}

/// Evolves from time 0 to `t_final`, storing the state after every step.
/// Negative `t_final` integrates backwards.
pub fn evolve(data: &CauchyData, t_final: f64, dt: f64) -> Result<Trajectory> {
    evolve_recorded(data, 0.0, t_final, dt, 1)
}

/// Final state only; no storage.
pub fn evolve_final(data: &CauchyData, t_final: f64, dt: f64) -> Result<CauchyData> {
    let (steps, h) = step_plan(t_final, dt)?;
    let mut stepper = SplitStepper::new(data, 0.0, h)?;
    for _ in 0..steps {
        stepper.step()?;
    }
    Ok(stepper.state())
}

/// Trajectory through `data` at `t = 0` covering `[-half_width, half_width]`
/// with every step stored.
pub fn evolve_window(data: &CauchyData, half_width: f64, dt: f64) -> Result<Trajectory> {
    let back = evolve(data, -half_width, dt)?;
    let fwd = evolve(data, half_width, dt)?;
    let mut times: Vec<f64> = back.times.iter().rev().copied().collect();
    let mut states: Vec<CauchyData> = back.states.into_iter().rev().collect();
    times.pop();
    states.pop();
    times.extend(fwd.times);
    states.extend(fwd.states);
    Ok(Trajectory {
        times,
        states,
        grid: data.grid.clone(),
        dt: fwd.dt,
    })
}

/// `3 lambda (P phi)^2` for a stored base state.
fn tangent_potential(data: &CauchyData) -> Vec<f64> {
    let g = &data.grid;
    let mut buf: Vec<Complex64> = data.phi.0.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    g.fft_in_place(&mut buf, Direction::Forward);
    g.dealias(&mut buf);
    g.fft_in_place(&mut buf, Direction::Inverse);
    let norm = 1.0 / g.len() as f64;
    let c = 3.0 * g.coupling();
    buf.iter().map(|v| c * (v.re * norm).powi(2)).collect()
}

/// Integrates the exact Jacobian of the splitting map along `base`.
pub fn tangent_evolve(base: &Trajectory, v0: &CauchyData) -> Result<TangentTrajectory> {
    let g = &base.grid;
    same_grid(g, &v0.grid)?;
    if base.states.len() < 2 {
        return Ok(TangentTrajectory {
            times: base.times.clone(),
            states: vec![v0.clone()],
        });
    }
    let h = base.times[1] - base.times[0];
    for w in base.times.windows(2) {
        if ((w[1] - w[0]) - h).abs() > 1e-9 * h.abs() {
            return Err(Error::InvalidArgument(
                "tangent evolution needs a base trajectory with every step stored".into(),
            ));
        }
    }
    let len = g.len();
    let norm = 1.0 / len as f64;
    let cos: Vec<f64> = g.mu().iter().map(|mu| (mu * h).cos()).collect();
    let sin: Vec<f64> = g.mu().iter().map(|mu| (mu * h).sin()).collect();
    let to_hat = |f: &RealField| {
        let mut b: Vec<Complex64> = f.0.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        g.fft_in_place(&mut b, Direction::Forward);
        b
    };
    let from_hat = |b: &[Complex64]| {
        let mut c = b.to_vec();
        g.fft_in_place(&mut c, Direction::Inverse);
        RealField(c.iter().map(|v| v.re * norm).collect())
    };
    let mut vp = to_hat(&v0.phi);
    let mut vq = to_hat(&v0.pi);
    let mut force = vec![ZERO; len];
    let mut work = vec![ZERO; len];
    let compute_force =
        |pot: &[f64], vp: &[Complex64], work: &mut Vec<Complex64>, force: &mut Vec<Complex64>| {
            for ((w, v), &keep) in work.iter_mut().zip(vp).zip(g.dealias_mask()) {
                *w = if keep { *v } else { ZERO };
            }
            g.fft_in_place(work, Direction::Inverse);
            for (w, p) in work.iter_mut().zip(pot) {
                *w = Complex64::new(p * w.re * norm, 0.0);
            }
            g.fft_in_place(work, Direction::Forward);
            for ((f, w), &keep) in force.iter_mut().zip(work.iter()).zip(g.dealias_mask()) {
                *f = if keep { *w } else { ZERO };
            }
        };
    let active = g.coupling() != 0.0;
    let mut pot = tangent_potential(&base.states[0]);
    if active {
        compute_force(&pot, &vp, &mut work, &mut force);
    }
    let mut states = vec![v0.clone()];
    let mu = g.mu();
    for next in &base.states[1..] {
        if active {
            for (q, f) in vq.iter_mut().zip(&force) {
                *q -= 0.5 * h * f;
            }
        }
        for i in 0..len {
            let (c, s, w) = (cos[i], sin[i], mu[i]);
            let p = vp[i];
            let q = vq[i];
            vp[i] = c * p + (s / w) * q;
            vq[i] = -(w * s) * p + c * q;
        }
        if active {
            pot = tangent_potential(next);
            compute_force(&pot, &vp, &mut work, &mut force);
            for (q, f) in vq.iter_mut().zip(&force) {
                *q -= 0.5 * h * f;
            }
        }
        let state = CauchyData {
            phi: from_hat(&vp),
            pi: from_hat(&vq),
            grid: g.clone(),
        };
        if !state.is_finite() {
            return Err(Error::BlowUp {
                t: base.times[states.len()],
            });
        }
        states.push(state);
    }
    Ok(TangentTrajectory {
        times: base.times.clone(),
        states,
    })
}

/// Time derivative of `u^+ = u + i mu^{-1} u_t` along the flow:
/// `pi - i mu phi - i mu^{-1} lambda P[(P phi)^3]`.
pub fn positive_frequency_velocity(data: &CauchyData) -> Result<ComplexField> {
    let g = &data.grid;
    let mut phi_hat = g.transform_real(&data.phi)?;
    let mu_phi = g.apply_mu_power(&data.phi, 1.0)?;
    g.dealias(&mut phi_hat.0);
    let dealiased = g.inverse_transform(&phi_hat)?.re();
    let cube = RealField(
        dealiased
            .0
            .iter()
            .map(|v| g.coupling() * v * v * v)
            .collect(),
    );
    let mut cube_hat = g.transform_real(&cube)?;
    g.dealias(&mut cube_hat.0);
    let cube = g.inverse_transform(&cube_hat)?.re();
    let cube_scaled = g.apply_mu_power(&cube, -1.0)?;
    Ok(ComplexField(
        (0..g.len())
            .map(|i| Complex64::new(data.pi.0[i], 0.0) - I * (mu_phi.0[i] + cube_scaled.0[i]))
            .collect(),
    ))
}

/// Normalization `int exp(-1/(1-t^2)) dt` of the mollifier profile.
pub fn mollifier_norm() -> f64 {
    static NORM: std::sync::OnceLock<f64> = std::sync::OnceLock::new();
    *NORM.get_or_init(|| {
        let (x, w) = gauss_legendre(64);
        // Split at 0 so the panels resolve the flat edges.
        let half: f64 = x
            .iter()
            .zip(&w)
            .map(|(xi, wi)| 0.5 * wi * bump(0.5 * (xi + 1.0)))
            .sum();
        2.0 * half
    })
}

/// `chi_sigma(t) = sigma chi(sigma t)` with `chi` the normalized bump.
pub fn mollifier(sigma: f64, t: f64) -> f64 {
    sigma * bump(sigma * t) / mollifier_norm()
}

/// `E(sigma) = |int chi_sigma(t) <u^+(t), h> dt - <u^+(0), h>|` for each
/// `sigma`, with the fitted constant `C = max sigma E(sigma)`.
pub fn mollifier_errors(traj: &Trajectory, h: &ComplexField, sigmas: &[f64]) -> Result<Vec<f64>> {
    let g = &traj.grid;
    g.check_len(h.len())?;
    let s_min = sigmas.iter().copied().fold(f64::INFINITY, f64::min);
    if !(s_min > 0.0) {
        return Err(Error::InvalidArgument("sigmas must be positive".into()));
    }
    let t_lo = traj.times[0].min(*traj.times.last().unwrap());
    let t_hi = traj.times[0].max(*traj.times.last().unwrap());
    if t_lo > -1.0 / s_min || t_hi < 1.0 / s_min {
        return Err(Error::InvalidArgument(format!(
            "trajectory window [{t_lo}, {t_hi}] shorter than 2/min(sigma) = {}",
            2.0 / s_min
        )));
    }
    let zero = traj
        .index_of(0.0)
        .ok_or_else(|| Error::InvalidArgument("trajectory does not contain t = 0".into()))?;
    let h_hat = g.transform(h)?;
    let pairing: Vec<Complex64> = traj
        .states
        .iter()
        .map(|s| {
            let z = to_amplitude(s)?;
            Ok(g.spectral_inner(&g.transform(&z.z)?, &h_hat, 0.5))
        })
        .collect::<Result<_>>()?;
    let weights = trapezoid_weights(traj.times.len(), traj.dt.abs());
    Ok(sigmas
        .iter()
        .map(|&sigma| {
            let smoothed: Complex64 = traj
                .times
                .iter()
                .zip(&pairing)
                .zip(&weights)
                .map(|((&t, p), w)| p * (w * mollifier(sigma, t)))
                .sum();
            (smoothed - pairing[zero]).norm()
        })
        .collect())
}

/// Checks `E(sigma) <= C / sigma` and reports the fitted constant.
pub fn mollifier_limit_check(
    traj: &Trajectory,
    h: &ComplexField,
    sigmas: &[f64],
) -> Result<ExperimentReport> {
    let errors = mollifier_errors(traj, h, sigmas)?;
    let c = sigmas
        .iter()
        .zip(&errors)
        .fold(0.0f64, |acc, (s, e)| acc.max(s * e));
    let mut r = ExperimentReport::new("mollifier-limit");
    r.param("sigmas", sigmas);
    r.measure("errors", &errors);
    r.measure("fitted_c", c);
    if errors.iter().all(|&e| e > 0.0) && sigmas.len() > 1 {
        r.measure("slope", log_log_slope(sigmas, &errors));
    }
    r.pass = sigmas
        .iter()
        .zip(&errors)
        .all(|(s, e)| *e <= c / s * (1.0 + 1e-12) + 1e-300);
    Ok(r)
}

/// Trapezoid quadrature of `||u(t)||_inf^2` over the trajectory window;
/// passes when the integral is below `2 m`.
pub fn smallness_monitor(traj: &Trajectory) -> (f64, bool) {
    let weights = trapezoid_weights(traj.states.len(), traj.dt.abs());
    let integral: f64 = traj
        .states
        .iter()
        .zip(&weights)
        .map(|(s, w)| w * s.phi.max_abs().powi(2))
        .sum();
    (integral, integral < 2.0 * traj.grid.mass())
}
