//! Analytic structure of pairings with the wave and scattering operators:
//! Cauchy-Riemann residuals, circle extraction of Taylor coefficients and
//! the band-limited smoothing that truncates the Taylor series.
//!
//! The pairing is `G(alpha) = <Op z(alpha), h>_{H^{1/2}}` with the operator
//! output in the antilinear slot. For the free flow it is a function of
//! `conj(alpha)` alone.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::dynamics::free_flow;
use crate::error::{Error, Result};
use crate::phase_space::{same_grid, Amplitude};
use crate::quadrature::CompositeRule;
use crate::report::ExperimentReport;
use crate::scattering::{
    check_no_wrap, operator_amplitude, operator_amplitude_unchecked, support_width, OperatorKind,
};
use crate::spectral::ComplexField;

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// Which operator the pairing uses and how it is discretized.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairingSetup {
    pub kind: OperatorKind,
    pub horizon: f64,
    pub dt: f64,
}

/// `G = <Op z, h>_{H^{1/2}}`.
pub fn pairing(setup: &PairingSetup, z: &Amplitude, h: &ComplexField) -> Result<Complex64> {
    let out = operator_amplitude(setup.kind, z, setup.horizon, setup.dt)?;
    out.grid.sobolev_inner(&out.z, h, 0.5)
}

/// In-data family `z(alpha) = z_0 + sum_n alpha_n z_n` and probe `h`.
#[derive(Clone, Debug)]
pub struct DirectionSet {
    pub base: Amplitude,
    pub directions: Vec<Amplitude>,
    pub probe: ComplexField,
}

impl DirectionSet {
    pub fn new(base: Amplitude, directions: Vec<Amplitude>, probe: ComplexField) -> Result<Self> {
        let g = &base.grid;
        g.check_len(probe.len())?;
        for d in &directions {
            same_grid(g, &d.grid)?;
        }
        let n = directions.len();
        if n == 0 {
            return Err(Error::InvalidArgument(
                "at least one direction is required".into(),
            ));
        }
        let norms: Vec<f64> = directions
            .iter()
            .map(|d| d.norm(0.5))
            .collect::<Result<_>>()?;
        if norms.contains(&0.0) {
            return Err(Error::InvalidArgument("zero direction".into()));
        }
        let mut gram = DMatrix::<Complex64>::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                gram[(i, j)] = g.sobolev_inner(&directions[i].z, &directions[j].z, 0.5)?
                    / (norms[i] * norms[j]);
            }
        }
        let det = gram.determinant().norm();
        if det <= 1e-10 {
            return Err(Error::InvalidArgument(format!(
                "directions are linearly dependent (Gram determinant {det:e})"
            )));
        }
        Ok(DirectionSet {
            base,
            directions,
            probe,
        })
    }

    /// Single direction through the origin.
    pub fn line(direction: Amplitude, probe: ComplexField) -> Result<Self> {
        let base = Amplitude::zeros(&direction.grid);
        Self::new(base, vec![direction], probe)
    }

    pub fn point(&self, alpha: &[Complex64]) -> Result<Amplitude> {
        if alpha.len() != self.directions.len() {
            return Err(Error::ShapeMismatch {
                expected: self.directions.len(),
                found: alpha.len(),
            });
        }
        let mut z = self.base.clone();
        for (a, d) in alpha.iter().zip(&self.directions) {
            z = z.axpy(*a, d)?;
        }
        Ok(z)
    }

    pub fn evaluate(&self, setup: &PairingSetup, alpha: &[Complex64]) -> Result<Complex64> {
        pairing(setup, &self.point(alpha)?, &self.probe)
    }
}

/// `(anti, holo)` central-difference Wirtinger combinations in direction
/// `j`: `anti = D_re - i D_im`, `holo = D_re + i D_im`.
pub fn cr_residual(
    spec: &DirectionSet,
    setup: &PairingSetup,
    alpha0: &[Complex64],
    j: usize,
    delta: f64,
) -> Result<(Complex64, Complex64)> {
    if !(delta > 0.0) {
        return Err(Error::InvalidArgument(format!("step {delta} must be > 0")));
    }
    if j >= spec.directions.len() {
        return Err(Error::InvalidArgument(format!(
            "direction index {j} out of range"
        )));
    }
    let eval = |shift: Complex64| {
        let mut a = alpha0.to_vec();
        a[j] += shift;
        spec.evaluate(setup, &a)
    };
    let d_re =
        (eval(Complex64::new(delta, 0.0))? - eval(Complex64::new(-delta, 0.0))?) / (2.0 * delta);
    let d_im =
        (eval(Complex64::new(0.0, delta))? - eval(Complex64::new(0.0, -delta))?) / (2.0 * delta);
    Ok((d_re - I * d_im, d_re + I * d_im))
}

/// Richardson combination of the residuals at `delta` and `delta / 2`.
pub fn cr_residual_refined(
    spec: &DirectionSet,
    setup: &PairingSetup,
    alpha0: &[Complex64],
    j: usize,
    delta: f64,
) -> Result<(Complex64, Complex64)> {
    let (a1, h1) = cr_residual(spec, setup, alpha0, j, delta)?;
    let (a2, h2) = cr_residual(spec, setup, alpha0, j, 0.5 * delta)?;
    Ok(((4.0 * a2 - a1) / 3.0, (4.0 * h2 - h1) / 3.0))
}

/// One row of a step-size scan.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CrSample {
    pub delta: f64,
    pub anti: Complex64,
    pub holo: Complex64,
}

impl CrSample {
    pub fn ratio(&self) -> f64 {
        self.anti.norm() / self.holo.norm()
    }
}

/// Refined residuals along a decreasing step ladder, stopping once the
/// ratio no longer decreases.
pub fn cr_scan(
    spec: &DirectionSet,
    setup: &PairingSetup,
    alpha0: &[Complex64],
    j: usize,
    deltas: &[f64],
) -> Result<Vec<CrSample>> {
    let mut out: Vec<CrSample> = Vec::new();
    for &delta in deltas {
        let (anti, holo) = cr_residual_refined(spec, setup, alpha0, j, delta)?;
        let s = CrSample { delta, anti, holo };
        let stop = out.last().is_some_and(|p| s.ratio() >= p.ratio());
        out.push(s);
        if stop {
            break;
        }
    }
    Ok(out)
}

/// Circle samples `G(r e^{i theta_q})`, `q = 0..Q`. The second half of the
/// nodes is the exact negative of the first, so odd symmetry of the flow
/// carries over bitwise.
pub fn circle_samples(
    spec: &DirectionSet,
    setup: &PairingSetup,
    radius: f64,
    nodes: usize,
) -> Result<Vec<Complex64>> {
    if spec.directions.len() != 1 {
        return Err(Error::InvalidArgument(
            "circle extraction needs a single direction".into(),
        ));
    }
    if nodes < 2 || !nodes.is_multiple_of(2) {
        return Err(Error::InvalidArgument(
            "circle node count must be even".into(),
        ));
    }
    let half = nodes / 2;
    let alphas: Vec<Complex64> = (0..half)
        .map(|q| {
            Complex64::from_polar(radius, 2.0 * std::f64::consts::PI * q as f64 / nodes as f64)
        })
        .collect();
    let mut values = vec![Complex64::new(0.0, 0.0); nodes];
    for (q, a) in alphas.iter().enumerate() {
        values[q] = spec.evaluate(setup, &[*a])?;
        values[q + half] = spec.evaluate(setup, &[-*a])?;
    }
    Ok(values)
}

/// `(1/Q) sum_q G_q e^{i n theta_q}`, the coefficient of `conj(alpha)^n r^n`
/// (negative `n` picks `alpha^{|n|}`).
pub fn circle_harmonic(values: &[Complex64], n: i64) -> Complex64 {
    let q = values.len();
    let sum: Complex64 = values
        .iter()
        .enumerate()
        .map(|(j, v)| {
            let theta =
                2.0 * std::f64::consts::PI * (j as i64 * n).rem_euclid(q as i64) as f64 / q as f64;
            v * Complex64::from_polar(1.0, theta)
        })
        .sum();
    sum / q as f64
}

/// Circle-extracted coefficient of `conj(alpha)^n`.
#[derive(Clone, Debug, PartialEq)]
pub struct TaylorCoefficient {
    pub order: usize,
    pub radius: f64,
    pub nodes: usize,
    pub coefficient: Complex64,
    /// Energy in the other harmonics relative to the total.
    pub residual_mass: f64,
    /// Energy in even harmonics relative to the total.
    pub even_mass: f64,
    /// Harmonic index close to the node count.
    pub aliasing_warning: bool,
}

pub fn taylor_coefficient(
    spec: &DirectionSet,
    setup: &PairingSetup,
    order: usize,
    radius: f64,
    nodes: usize,
) -> Result<TaylorCoefficient> {
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "radius {radius} must be > 0"
        )));
    }
    if nodes <= order + 2 {
        return Err(Error::InvalidArgument(format!(
            "node count {nodes} must exceed order + 2 = {}",
            order + 2
        )));
    }
    let values = circle_samples(spec, setup, radius, nodes)?;
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "radius {radius} outside the stable regime"
        )));
    }
    Ok(coefficient_from_samples(&values, order, radius))
}

fn coefficient_from_samples(values: &[Complex64], order: usize, radius: f64) -> TaylorCoefficient {
    let q = values.len();
    let harmonics: Vec<Complex64> = (0..q as i64).map(|n| circle_harmonic(values, n)).collect();
    let total: f64 = harmonics.iter().map(|c| c.norm_sqr()).sum();
    let target = harmonics[order % q];
    let safe = |x: f64| if total > 0.0 { x / total } else { 0.0 };
    let even: f64 = harmonics.iter().step_by(2).map(|c| c.norm_sqr()).sum();
    TaylorCoefficient {
        order,
        radius,
        nodes: q,
        coefficient: target / radius.powi(order as i32),
        residual_mass: safe(total - target.norm_sqr()),
        even_mass: safe(even),
        aliasing_warning: 2 * order + 2 > q,
    }
}

/// Circle extraction at `r` and `r/2` combined to cancel the `r^2`
/// contamination from the next odd order.
pub fn taylor_coefficient_refined(
    spec: &DirectionSet,
    setup: &PairingSetup,
    order: usize,
    radius: f64,
    nodes: usize,
) -> Result<Complex64> {
    let c1 = taylor_coefficient(spec, setup, order, radius, nodes)?.coefficient;
    let c2 = taylor_coefficient(spec, setup, order, 0.5 * radius, nodes)?.coefficient;
    Ok((4.0 * c2 - c1) / 3.0)
}

/// Independent oracle for the `conj(alpha)^3` coefficient:
/// `(1/6) d^3 G / d conj(alpha)^3` at 0 with
/// `d/d conj(alpha) = (d_a + i d_b) / 2`, from central differences on the
/// `(a, b)` plane, Richardson-refined in the step.
pub fn cubic_coefficient_polarization(
    spec: &DirectionSet,
    setup: &PairingSetup,
    step: f64,
) -> Result<Complex64> {
    let at = |a: f64, b: f64| spec.evaluate(setup, &[Complex64::new(a, b)]);
    let estimate = |h: f64| -> Result<Complex64> {
        let g = |i: f64, j: f64| at(i * h, j * h);
        let h3 = 2.0 * h * h * h;
        let daaa = (g(2.0, 0.0)? - 2.0 * g(1.0, 0.0)? + 2.0 * g(-1.0, 0.0)? - g(-2.0, 0.0)?) / h3;
        let dbbb = (g(0.0, 2.0)? - 2.0 * g(0.0, 1.0)? + 2.0 * g(0.0, -1.0)? - g(0.0, -2.0)?) / h3;
        let daab = (g(1.0, 1.0)? - 2.0 * g(0.0, 1.0)? + g(-1.0, 1.0)? - g(1.0, -1.0)?
            + 2.0 * g(0.0, -1.0)?
            - g(-1.0, -1.0)?)
            / h3;
        let dabb = (g(1.0, 1.0)? - 2.0 * g(1.0, 0.0)? + g(1.0, -1.0)? - g(-1.0, 1.0)?
            + 2.0 * g(-1.0, 0.0)?
            - g(-1.0, -1.0)?)
            / h3;
        // (d_a + i d_b)^3 / 8 / 6
        Ok((daaa + 3.0 * I * daab - 3.0 * dabb - I * dbbb) / 48.0)
    };
    let c1 = estimate(step)?;
    let c2 = estimate(0.5 * step)?;
    Ok((4.0 * c2 - c1) / 3.0)
}

/// Smooth bump in frequency and its inverse Fourier transform in time,
/// `f~(p) = int f(t) e^{ipt} dt`, `f(t) = (1/2pi) int f~(p) e^{-ipt} dp`.
#[derive(Clone, Debug, PartialEq)]
pub struct BandLimitedSmoother {
    pub p_lo: f64,
    pub p_hi: f64,
    pub beta: f64,
    pub mass: f64,
    /// Frequency grid dual to the time window, restricted to the support.
    pub frequencies: Vec<f64>,
    pub spectrum: Vec<f64>,
    pub times: Vec<f64>,
    pub values: Vec<Complex64>,
    pub degree: usize,
}

/// Default sharpness of the frequency bump.
pub const DEFAULT_BETA: f64 = 10.0;

fn bump_profile(p: f64, p_lo: f64, p_hi: f64, beta: f64) -> f64 {
    let x = (2.0 * p - p_lo - p_hi) / (p_hi - p_lo);
    if x.abs() >= 1.0 {
        0.0
    } else {
        (beta - beta / (1.0 - x * x)).exp()
    }
}

/// `N(f) = floor(p_hi / m) + 1`.
pub fn smoother_degree(p_hi: f64, mass: f64) -> usize {
    (p_hi / mass).floor() as usize + 1
}

fn inverse_rule(p_lo: f64, p_hi: f64, t_max: f64) -> CompositeRule {
    let panels = (((p_hi - p_lo) * t_max / 4.0).ceil() as usize).max(16);
    CompositeRule::new(p_lo, p_hi, panels, 16)
}

/// Builds the smoother on `n_t` uniform times in `[-t_window, t_window]`.
pub fn make_smoother(
    p_lo: f64,
    p_hi: f64,
    mass: f64,
    beta: f64,
    t_window: f64,
    n_t: usize,
) -> Result<BandLimitedSmoother> {
    if !(p_lo >= 0.0 && p_hi > p_lo && p_hi.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "band [{p_lo}, {p_hi}] must satisfy 0 <= p_lo < p_hi"
        )));
    }
    if !(mass > 0.0 && beta > 0.0 && t_window > 0.0) || n_t < 3 {
        return Err(Error::InvalidArgument(
            "mass, beta and window must be positive, n_t >= 3".into(),
        ));
    }
    let ht = 2.0 * t_window / (n_t - 1) as f64;
    let dp = std::f64::consts::PI / t_window;
    let resolved = ((p_hi - p_lo) / dp).floor() as usize;
    if resolved < 16 {
        return Err(Error::InvalidArgument(format!(
            "unresolved bump: {resolved} frequency samples across the support, need 16"
        )));
    }
    if 2.0 * std::f64::consts::PI / ht <= 2.0 * p_hi {
        return Err(Error::InvalidArgument(format!(
            "time step {ht} aliases the band (need 2 pi / h_t > 2 p_hi)"
        )));
    }
    let rule = inverse_rule(p_lo, p_hi, t_window + 40.0);
    let f_of_t = |t: f64| -> Complex64 {
        rule.integrate(|p| Complex64::from_polar(bump_profile(p, p_lo, p_hi, beta), -p * t))
            / (2.0 * std::f64::consts::PI)
    };
    let times: Vec<f64> = (0..n_t).map(|i| -t_window + i as f64 * ht).collect();
    let values: Vec<Complex64> = times.iter().map(|&t| f_of_t(t)).collect();
    let peak = values.iter().fold(0.0f64, |m, v| m.max(v.norm()));
    let period = 2.0 * std::f64::consts::PI / (p_hi - p_lo);
    let tail = (0..64)
        .map(|i| t_window + 2.0 * period * i as f64 / 63.0)
        .flat_map(|t| [f_of_t(t).norm(), f_of_t(-t).norm()])
        .fold(0.0f64, f64::max);
    if tail > 1e-8 * peak {
        return Err(Error::InvalidArgument(format!(
            "time window {t_window} too short: tail {:.2e} of peak",
            tail / peak
        )));
    }
    let frequencies: Vec<f64> = (0..)
        .map(|i| (p_lo / dp).ceil() * dp + i as f64 * dp)
        .take_while(|&p| p <= p_hi)
        .collect();
    let spectrum = frequencies
        .iter()
        .map(|&p| bump_profile(p, p_lo, p_hi, beta))
        .collect();
    Ok(BandLimitedSmoother {
        p_lo,
        p_hi,
        beta,
        mass,
        frequencies,
        spectrum,
        times,
        values,
        degree: smoother_degree(p_hi, mass),
    })
}

impl BandLimitedSmoother {
    /// Exact `f~(p)`; vanishes outside the open band.
    pub fn profile(&self, p: f64) -> f64 {
        bump_profile(p, self.p_lo, self.p_hi, self.beta)
    }

    pub fn time_step(&self) -> f64 {
        self.times[1] - self.times[0]
    }

    pub fn half_window(&self) -> f64 {
        -self.times[0]
    }

    /// Trapezoid weights times `f(t)`.
    pub fn weighted_values(&self) -> Vec<Complex64> {
        let n = self.times.len();
        let h = self.time_step();
        self.values
            .iter()
            .enumerate()
            .map(|(i, v)| v * if i == 0 || i + 1 == n { 0.5 * h } else { h })
            .collect()
    }

    /// `int f(t) e^{ipt} dt` by the time-grid quadrature.
    pub fn forward_transform(&self, p: f64) -> Complex64 {
        self.weighted_values()
            .iter()
            .zip(&self.times)
            .map(|(w, t)| w * Complex64::from_polar(1.0, p * t))
            .sum()
    }
}

/// `int f(t) <Op U_0(t) z, h> dt` on the smoother's time grid.
pub fn smoothed_pairing(
    f: &BandLimitedSmoother,
    z: &Amplitude,
    h: &ComplexField,
    setup: &PairingSetup,
) -> Result<Complex64> {
    let g = &z.grid;
    g.check_len(h.len())?;
    let width = support_width(&crate::phase_space::from_amplitude(z)?);
    check_no_wrap(g, setup.horizon + f.half_window(), width)?;
    let mut acc = Complex64::new(0.0, 0.0);
    for (w, &t) in f.weighted_values().iter().zip(&f.times) {
        if *w == Complex64::new(0.0, 0.0) {
            continue;
        }
        let zt = free_flow(z, t)?;
        let out = operator_amplitude_unchecked(setup.kind, &zt, setup.horizon, setup.dt)?;
        acc += w * g.sobolev_inner(&out.z, h, 0.5)?;
    }
    Ok(acc)
}

/// Free-theory value `<f~(mu) z, h>_{H^{1/2}}`.
pub fn smoothed_pairing_free(
    f: &BandLimitedSmoother,
    z: &Amplitude,
    h: &ComplexField,
) -> Result<Complex64> {
    let g = &z.grid;
    let fz = g.apply_multiplier(&z.z, |mu| Complex64::new(f.profile(mu), 0.0))?;
    g.sobolev_inner(&fz, h, 0.5)
}

/// Forward differences of `values` of every order.
pub fn forward_differences(values: &[Complex64]) -> Vec<Vec<Complex64>> {
    let mut out = vec![values.to_vec()];
    while out.last().map_or(0, |v| v.len()) > 1 {
        let prev = out.last().expect("non-empty");
        out.push(prev.windows(2).map(|w| w[1] - w[0]).collect());
    }
    out
}

/// Samples `s -> smoothed_pairing(f, s z_1, h)` on
/// `s_0, s_0 + Delta, ..., s_0 + (N + 2) Delta` and compares the
/// differences of order `N + 1` and `N`.
pub fn polynomiality_test(
    f: &BandLimitedSmoother,
    spec: &DirectionSet,
    setup: &PairingSetup,
    s0: f64,
    step: f64,
) -> Result<ExperimentReport> {
    if spec.directions.len() != 1 {
        return Err(Error::InvalidArgument(
            "polynomiality test needs a single direction".into(),
        ));
    }
    let n = f.degree;
    let scales: Vec<f64> = (0..n + 3).map(|i| s0 + i as f64 * step).collect();
    let mut values = Vec::with_capacity(scales.len());
    for &s in &scales {
        let z = spec.point(&[Complex64::new(s, 0.0)])?;
        let v = smoothed_pairing(f, &z, &spec.probe, setup)?;
        if !v.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "scale {s} outside the stable regime"
            )));
        }
        values.push(v);
    }
    let diffs = forward_differences(&values);
    let max_abs = |v: &[Complex64]| v.iter().fold(0.0f64, |m, c| m.max(c.norm()));
    let top = max_abs(&diffs[n + 1]);
    let below = max_abs(&diffs[n]);
    let ratio = if below > 0.0 { top / below } else { 0.0 };
    let mut r = ExperimentReport::new("truncation-poly");
    r.param("degree", n)
        .param("p_lo", f.p_lo)
        .param("p_hi", f.p_hi)
        .param("s0", s0)
        .param("step", step)
        .param("kind", setup.kind.name());
    r.measure("scales", &scales)
        .measure("re", values.iter().map(|v| v.re).collect::<Vec<_>>())
        .measure("im", values.iter().map(|v| v.im).collect::<Vec<_>>())
        .measure("diff_top", top)
        .measure("diff_below", below)
        .measure("ratio", ratio);
    r.tolerate("ratio", 1e-3);
    r.pass = ratio < 1e-3;
    Ok(r)
}

/// Minimal reachable frequency `mu(k_1) + ... + mu(k_n) = n m` against the
/// band, with exact evaluation of `f~` on reachable sums.
pub fn multiplier_vanishing_check(
    f: &BandLimitedSmoother,
    grid: &crate::spectral::Grid,
    order: usize,
) -> ExperimentReport {
    let m = grid.mass();
    let mut mus: Vec<f64> = grid.mu().to_vec();
    mus.sort_by(f64::total_cmp);
    mus.dedup();
    let min_sum: f64 = mus[0] * order as f64;
    // Sums built from up to two distinct frequencies.
    let mut sums = Vec::new();
    let lowest: Vec<f64> = mus.iter().copied().take(64).collect();
    for &a in &lowest {
        for &b in &lowest {
            for split in 0..=order {
                sums.push(a * split as f64 + b * (order - split) as f64);
            }
        }
    }
    let values: Vec<f64> = sums.iter().map(|&p| f.profile(p)).collect();
    let max_value = values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let witness = sums
        .iter()
        .zip(&values)
        .find(|(_, v)| **v != 0.0)
        .map(|(p, v)| (*p, *v));
    let mut r = ExperimentReport::new("multiplier-vanish");
    r.param("order", order)
        .param("degree", f.degree)
        .param("p_hi", f.p_hi);
    r.measure("min_sum", min_sum)
        .measure("n_m", order as f64 * m)
        .measure("evaluations", sums.len())
        .measure("max_value", max_value);
    if let Some((p, v)) = witness {
        r.measure("witness_frequency", p)
            .measure("witness_value", v);
    }
    r.tolerate("max_value", 0.0);
    r.pass = if order >= f.degree {
        min_sum == order as f64 * m && min_sum >= f.p_hi && max_value == 0.0
    } else {
        min_sum == order as f64 * m && witness.is_some()
    };
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phase_space::{to_amplitude, CauchyData};
    use crate::spectral::Grid;

    fn direction(g: &Grid, amp: f64, shift: f64) -> Amplitude {
        let phi = g.sample(|x| amp * (-(x[0] - shift).powi(2) / 2.0).exp());
        let pi = g.sample(|x| 0.5 * amp * (x[0] - shift) * (-(x[0] - shift).powi(2) / 2.0).exp());
        to_amplitude(&CauchyData::new(g, phi, pi).unwrap()).unwrap()
    }

    fn probe(g: &Grid) -> ComplexField {
        g.sample_complex(|x| {
            Complex64::new((-(x[0] - 0.5).powi(2)).exp(), 0.3 * (-(x[0] * x[0])).exp())
        })
    }

    fn setup(kind: OperatorKind) -> PairingSetup {
        PairingSetup {
            kind,
            horizon: 4.0,
            dt: 0.02,
        }
    }

    #[test]
    fn free_pairing_and_cr() {
        let g = Grid::new(1, 256, 64.0, 1.0, 0.0).unwrap();
        let z1 = direction(&g, 1.0, 0.0);
        let h = probe(&g);
        let spec = DirectionSet::line(z1.clone(), h.clone()).unwrap();
        for kind in [OperatorKind::Wave, OperatorKind::Scattering] {
            let s = setup(kind);
            let a = Complex64::new(0.3, -0.2);
            let expect = g.sobolev_inner(&z1.z, &h, 0.5).unwrap() * a.conj();
            assert!((spec.evaluate(&s, &[a]).unwrap() - expect).norm() < 1e-10);
            let (anti, holo) = cr_residual(&spec, &s, &[a], 0, 1e-3).unwrap();
            let coef = g.sobolev_inner(&z1.z, &h, 0.5).unwrap();
            assert!(anti.norm() < 1e-9);
            assert!((holo - 2.0 * coef).norm() < 1e-9);
            let zero = pairing(&s, &z1, &ComplexField::zeros(g.len())).unwrap();
            assert_eq!(zero, Complex64::new(0.0, 0.0));
            let bound = z1.norm(0.5).unwrap() * g.sobolev_norm(&h, 0.5).unwrap();
            assert!(pairing(&s, &z1, &h).unwrap().norm() <= bound * (1.0 + 1e-12));
        }
        assert!(cr_residual(
            &spec,
            &setup(OperatorKind::Wave),
            &[Complex64::new(0.0, 0.0)],
            0,
            0.0
        )
        .is_err());
        let flat = DirectionSet::line(z1, ComplexField::zeros(g.len())).unwrap();
        let (anti, holo) = cr_residual(
            &flat,
            &setup(OperatorKind::Wave),
            &[Complex64::new(0.1, 0.0)],
            0,
            1e-2,
        )
        .unwrap();
        assert_eq!((anti.norm(), holo.norm()), (0.0, 0.0));
    }

    #[test]
    fn dependent_directions_rejected() {
        let g = Grid::new(1, 64, 32.0, 1.0, 0.0).unwrap();
        let z = direction(&g, 1.0, 0.0);
        let twice = z.scaled(Complex64::new(0.0, 2.0));
        assert!(
            DirectionSet::new(Amplitude::zeros(&g), vec![z.clone(), twice], probe(&g)).is_err()
        );
        let other = direction(&g, 1.0, 2.0);
        assert!(DirectionSet::new(Amplitude::zeros(&g), vec![z, other], probe(&g)).is_ok());
    }

    #[test]
    fn free_circle_has_only_first_harmonic() {
        let g = Grid::new(1, 256, 64.0, 1.0, 0.0).unwrap();
        let z1 = direction(&g, 1.0, 0.0);
        let h = probe(&g);
        let spec = DirectionSet::line(z1.clone(), h.clone()).unwrap();
        let s = setup(OperatorKind::Scattering);
        let c1 = taylor_coefficient(&spec, &s, 1, 0.5, 8).unwrap();
        let expect = g.sobolev_inner(&z1.z, &h, 0.5).unwrap();
        assert!((c1.coefficient - expect).norm() < 1e-10);
        assert!(c1.residual_mass < 1e-20);
        for n in [0, 2, 3] {
            let c = taylor_coefficient(&spec, &s, n, 0.5, 8).unwrap();
            assert!(c.coefficient.norm() < 1e-10, "n = {n}");
        }
        assert!(taylor_coefficient(&spec, &s, 6, 0.5, 8).is_err());
    }

    #[test]
    fn interacting_circle_is_odd_and_matches_polarization() {
        let g = Grid::new(1, 256, 64.0, 1.0, 1.0).unwrap();
        let z1 = direction(&g, 1.0, 0.0);
        let h = probe(&g);
        let spec = DirectionSet::line(z1, h).unwrap();
        let s = setup(OperatorKind::Wave);
        let c = taylor_coefficient(&spec, &s, 3, 0.3, 16).unwrap();
        assert!(c.even_mass < 1e-20, "even mass {}", c.even_mass);
        let even = taylor_coefficient(&spec, &s, 2, 0.3, 16).unwrap();
        assert!(even.coefficient.norm() < 1e-12 * c.coefficient.norm().max(1.0));
        let circle = taylor_coefficient_refined(&spec, &s, 3, 0.1, 16).unwrap();
        let polar = cubic_coefficient_polarization(&spec, &s, 0.05).unwrap();
        let rel = (circle - polar).norm() / polar.norm();
        assert!(polar.norm() > 1e-6);
        assert!(rel < 1e-4, "relative gap {rel}");
    }

    #[test]
    fn smoother_basics() {
        assert_eq!(smoother_degree(2.5, 1.0), 3);
        assert_eq!(smoother_degree(0.5, 1.0), 1);
        let f = make_smoother(0.0, 2.5, 1.0, DEFAULT_BETA, 50.0, 401).unwrap();
        assert_eq!(f.degree, 3);
        for p in [0.3, 1.0, 1.25, 2.2] {
            let err = (f.forward_transform(p) - f.profile(p)).norm();
            assert!(err < 1e-8, "p = {p}: {err}");
        }
        assert!(f.frequencies.len() >= 16);
        assert!(f.spectrum.iter().all(|v| *v >= 0.0));
        assert_eq!(f.profile(2.5), 0.0);
        assert_eq!(f.profile(3.0), 0.0);
        assert!(make_smoother(0.0, 2.5, 1.0, DEFAULT_BETA, 10.0, 101).is_err());
        assert!(make_smoother(2.0, 1.0, 1.0, DEFAULT_BETA, 50.0, 401).is_err());
        assert!(make_smoother(0.0, 2.5, 1.0, DEFAULT_BETA, 50.0, 41).is_err());
    }

    #[test]
    fn multiplier_check_cases() {
        let g = Grid::new(1, 64, 32.0, 1.0, 1.0).unwrap();
        let f = make_smoother(0.0, 2.5, 1.0, DEFAULT_BETA, 50.0, 401).unwrap();
        for n in 1..=5 {
            let r = multiplier_vanishing_check(&f, &g, n);
            assert!(r.pass, "order {n}");
            assert_eq!(r.scalar("min_sum"), Some(n as f64));
            if n >= 3 {
                assert_eq!(r.scalar("max_value"), Some(0.0));
            }
        }
        let r = multiplier_vanishing_check(&f, &g, 1);
        assert!(r.scalar("witness_value").unwrap() > 0.0);
    }

    #[test]
    fn smoothed_pairing_free_closed_form() {
        let g = Grid::new(1, 256, 160.0, 1.0, 0.0).unwrap();
        let z = direction(&g, 1.0, 0.0);
        let h = probe(&g);
        let f = make_smoother(0.0, 2.5, 1.0, DEFAULT_BETA, 50.0, 401).unwrap();
        let s = PairingSetup {
            kind: OperatorKind::Wave,
            horizon: 2.0,
            dt: 0.1,
        };
        let v = smoothed_pairing(&f, &z, &h, &s).unwrap();
        let closed = smoothed_pairing_free(&f, &z, &h).unwrap();
        assert!(
            (v - closed).norm() < 1e-8 * closed.norm(),
            "{v} vs {closed}"
        );
        let h2 = h.scaled(Complex64::new(0.0, 3.0));
        let v2 = smoothed_pairing(&f, &z, &h2, &s).unwrap();
        assert!((v2 - v * Complex64::new(0.0, 3.0)).norm() < 1e-13 * v.norm());
        let low = make_smoother(0.0, 0.5, 1.0, DEFAULT_BETA, 50.0, 401);
        // A band below the mass gap is too narrow for this window.
        assert!(low.is_err());
        let tight = PairingSetup { horizon: 40.0, ..s };
        assert!(matches!(
            smoothed_pairing(&f, &z, &h, &tight),
            Err(Error::NoWrap { .. })
        ));
    }

    #[test]
    fn finite_differences_annihilate_polynomials() {
        let vals: Vec<Complex64> = (0..6)
            .map(|i| {
                let s = 0.1 + 0.05 * i as f64;
                Complex64::new(2.0 * s - s * s * s, 0.5 * s)
            })
            .collect();
        let d = forward_differences(&vals);
        assert!(d[4].iter().all(|v| v.norm() < 1e-15));
        assert!(d[3]
            .iter()
            .all(|v| (v.re + 6.0 * 0.05f64.powi(3)).abs() < 1e-15));
    }
}
