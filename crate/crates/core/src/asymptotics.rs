//! Off-lattice free positive-frequency solutions
//! `u+(t, x) = (2pi)^{-d/2} int e^{ikx - i mu(k) t} z^(k) dk` for closed-form
//! spectra, their stationary-phase asymptotics along rays and the
//! large-time profile inside the light cone.
//!
//! Leading term along `x = lambda t / sqrt(lambda^2 + m^2)`:
//! `t^{d/2} e^{i alpha} u+ -> (m^2 + lambda^2)^{(d+2)/4} / m * z^(lambda)`
//! with `alpha = d pi / 4 + t m^2 / sqrt(m^2 + lambda^2)`.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::{gauss_legendre, log_log_slope};
use crate::report::ExperimentReport;

/// Gaussian spectrum `A exp(-(|k| - c)^2 / (2 w^2))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadialAmplitudeSpec {
    pub dim: usize,
    pub mass: f64,
    pub amplitude: f64,
    pub center: f64,
    pub width: f64,
}

impl RadialAmplitudeSpec {
    pub fn gaussian(
        dim: usize,
        mass: f64,
        amplitude: f64,
        center: f64,
        width: f64,
    ) -> Result<Self> {
        if dim != 1 && dim != 3 {
            return Err(Error::InvalidArgument(format!(
                "dimension {dim} must be 1 or 3"
            )));
        }
        if !(mass > 0.0 && width > 0.0) || !amplitude.is_finite() || !center.is_finite() {
            return Err(Error::InvalidArgument(
                "mass and width must be positive".into(),
            ));
        }
        if dim == 3 && center < 0.0 {
            return Err(Error::InvalidArgument("radial center must be >= 0".into()));
        }
        Ok(RadialAmplitudeSpec {
            dim,
            mass,
            amplitude,
            center,
            width,
        })
    }

    /// `z^(k)`; for `d = 3` the argument is `|k|`.
    pub fn spectrum(&self, k: f64) -> f64 {
        let k = if self.dim == 3 { k.abs() } else { k };
        self.amplitude * (-(k - self.center).powi(2) / (2.0 * self.width * self.width)).exp()
    }

    pub fn mu(&self, k: f64) -> f64 {
        (k * k + self.mass * self.mass).sqrt()
    }

    /// Interval outside which the spectrum is below `1e-30` of its peak.
    fn support(&self) -> (f64, f64) {
        let r = 12.0 * self.width;
        let lo = self.center - r;
        if self.dim == 3 {
            (lo.max(0.0), self.center + r)
        } else {
            (lo, self.center + r)
        }
    }
}

const MAX_PANELS: usize = 400_000;

/// Composite Gauss-Legendre with panels short enough that the phase turns
/// by at most about one radian per panel, checked against a finer rule.
fn oscillatory_integral<F: Fn(f64) -> Complex64>(
    a: f64,
    b: f64,
    frequency: f64,
    f: F,
) -> Result<Complex64> {
    let mut panels = (((b - a) * frequency.abs()).ceil() as usize).max(32);
    let (x16, w16) = gauss_legendre(16);
    let (x24, w24) = gauss_legendre(24);
    let rule = |panels: usize, x: &[f64], w: &[f64]| {
        let h = (b - a) / panels as f64;
        let mut acc = Complex64::new(0.0, 0.0);
        let mut mass = 0.0;
        for p in 0..panels {
            let lo = a + p as f64 * h;
            let mut part = Complex64::new(0.0, 0.0);
            for (xi, wi) in x.iter().zip(w) {
                let v = f(lo + 0.5 * h * (xi + 1.0));
                part += v * *wi;
                mass += v.norm() * wi;
            }
            acc += part * (0.5 * h);
        }
        (acc, 0.5 * h * mass)
    };
    loop {
        let (coarse, _) = rule(panels, &x16, &w16);
        let (fine, mass) = rule(panels, &x24, &w24);
        if (coarse - fine).norm() <= 1e-12 * mass {
            return Ok(fine);
        }
        panels *= 2;
        if panels > MAX_PANELS {
            return Err(Error::Quadrature(format!(
                "accuracy not reached within {MAX_PANELS} panels"
            )));
        }
    }
}

/// `u+(t, x)`; for `d = 3`, `x` is the radius.
pub fn free_amplitude_pointwise(spec: &RadialAmplitudeSpec, t: f64, x: f64) -> Result<Complex64> {
    let (a, b) = spec.support();
    match spec.dim {
        1 => {
            let v = oscillatory_integral(a, b, x.abs() + t.abs() + 1.0, |k| {
                Complex64::from_polar(spec.spectrum(k), k * x - spec.mu(k) * t)
            })?;
            Ok(v / (2.0 * PI).sqrt())
        }
        _ => {
            let r = x.abs();
            let c = (2.0 * PI).powf(-1.5) * 4.0 * PI;
            let v = if r < 1e-12 {
                oscillatory_integral(a, b, t.abs() + 1.0, |k| {
                    Complex64::from_polar(k * k * spec.spectrum(k), -spec.mu(k) * t)
                })?
            } else {
                oscillatory_integral(a, b, r + t.abs() + 1.0, |k| {
                    Complex64::from_polar(k * (k * r).sin() * spec.spectrum(k), -spec.mu(k) * t) / r
                })?
            };
            Ok(v * c)
        }
    }
}

/// Point on the ray with parameter `lambda` at time `t`.
pub fn ray_position(mass: f64, lambda: f64, t: f64) -> f64 {
    lambda * t / (lambda * lambda + mass * mass).sqrt()
}

/// `alpha(t, lambda) = d pi / 4 + t m^2 / sqrt(m^2 + lambda^2)`.
pub fn ray_phase(dim: usize, mass: f64, lambda: f64, t: f64) -> f64 {
    dim as f64 * PI / 4.0 + t * mass * mass / (mass * mass + lambda * lambda).sqrt()
}

/// `(m^2 + lambda^2)^{(d+2)/4} / m * z^(lambda)`.
pub fn nelson_target(spec: &RadialAmplitudeSpec, lambda: f64) -> f64 {
    let m = spec.mass;
    (m * m + lambda * lambda).powf((spec.dim as f64 + 2.0) / 4.0) / m * spec.spectrum(lambda)
}

/// `t^{d/2} e^{i alpha} u+(t, x_ray(t))`.
pub fn nelson_ratio(spec: &RadialAmplitudeSpec, lambda: f64, t: f64) -> Result<Complex64> {
    let x = ray_position(spec.mass, lambda, t);
    let u = free_amplitude_pointwise(spec, t, x)?;
    let alpha = ray_phase(spec.dim, spec.mass, lambda, t);
    Ok(u * Complex64::from_polar(t.powf(spec.dim as f64 / 2.0), alpha))
}

/// One ladder entry.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NelsonRow {
    pub t: f64,
    pub value: Complex64,
    pub residual: f64,
}

pub fn nelson_ladder(
    spec: &RadialAmplitudeSpec,
    lambda: f64,
    ladder: &[f64],
) -> Result<Vec<NelsonRow>> {
    if ladder.len() < 3 {
        return Err(Error::InvalidArgument(
            "ladder needs at least three times".into(),
        ));
    }
    if ladder.windows(2).any(|w| !(w[1] > w[0])) || !(ladder[0] > 0.0) {
        return Err(Error::InvalidArgument(
            "ladder must be positive and increasing".into(),
        ));
    }
    let target = nelson_target(spec, lambda);
    ladder
        .iter()
        .map(|&t| {
            let value = nelson_ratio(spec, lambda, t)?;
            Ok(NelsonRow {
                t,
                value,
                residual: (value - target).norm(),
            })
        })
        .collect()
}

/// CSV with columns `t, re, im, residual`.
pub fn ladder_csv(rows: &[NelsonRow]) -> String {
    let mut out = String::from("t,re_R,im_R,residual\n");
    for r in rows {
        out.push_str(&format!(
            "{},{:.17e},{:.17e},{:.17e}\n",
            r.t, r.value.re, r.value.im, r.residual
        ));
    }
    out
}

/// Index after which the residual decreases monotonically.
fn onset(rows: &[NelsonRow]) -> usize {
    let mut start = rows.len() - 1;
    while start > 0 && rows[start].residual < rows[start - 1].residual {
        start -= 1;
    }
    start
}

pub fn nelson_limit_check(
    spec: &RadialAmplitudeSpec,
    lambda: f64,
    ladder: &[f64],
) -> Result<ExperimentReport> {
    let rows = nelson_ladder(spec, lambda, ladder)?;
    let target = nelson_target(spec, lambda);
    let ts: Vec<f64> = rows.iter().map(|r| r.t).collect();
    let res: Vec<f64> = rows.iter().map(|r| r.residual).collect();
    let monotone = res.windows(2).all(|w| w[1] < w[0]);
    let slope = if res.iter().all(|&r| r > 0.0) {
        log_log_slope(&ts, &res)
    } else {
        f64::NAN
    };
    let mut r = ExperimentReport::new("nelson-ladder");
    r.param("dim", spec.dim)
        .param("mass", spec.mass)
        .param("lambda", lambda)
        .param("ladder", &ts)
        .param("spectrum", spec);
    r.measure("target", target)
        .measure("re", rows.iter().map(|r| r.value.re).collect::<Vec<_>>())
        .measure("im", rows.iter().map(|r| r.value.im).collect::<Vec<_>>())
        .measure("residuals", &res)
        .measure("monotone", monotone)
        .measure("onset_time", ts[onset(&rows)])
        .measure("slope", crate::report::finite_or_string(slope));
    r.tolerate(
        "slope",
        serde_json::json!({"center": -1.0, "halfwidth": 0.2}),
    );
    let all_zero = res.iter().all(|&v| v == 0.0) && target == 0.0;
    r.pass = all_zero || (monotone && (slope + 1.0).abs() <= 0.2);
    Ok(r)
}

/// Leading stationary-phase term at `(t, x)` with `|x| < t`:
/// `t^{-d/2} (m t / sqrt(t^2 - x^2))^{(d+2)/2} / m * z^(lambda)
/// e^{-i (d pi/4 + m sqrt(t^2 - x^2))}`, `lambda = m x / sqrt(t^2 - x^2)`.
pub fn asymptotic_profile(spec: &RadialAmplitudeSpec, t: f64, x: f64) -> Result<Complex64> {
    if !(t > 0.0) || x.abs() >= t {
        return Err(Error::InvalidArgument(format!(
            "({t}, {x}) is not inside the forward light cone"
        )));
    }
    let s = (t * t - x * x).sqrt();
    let m = spec.mass;
    let lambda = m * x / s;
    let d = spec.dim as f64;
    let amp = t.powf(-d / 2.0) * (m * t / s).powf((d + 2.0) / 2.0) / m * spec.spectrum(lambda);
    Ok(Complex64::from_polar(amp, -(d * PI / 4.0 + m * s)))
}
