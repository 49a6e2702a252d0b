//! Finite-horizon wave and scattering operators, their linearizations on a
//! truncated mode subspace, time-ordered exponentials and Cayley transforms.
//!
//! Mode coordinates: for real, `L_2`-orthonormal `mu`-eigenfunctions
//! `psi_j` the vectors `e_j = (mu_j^{-1/2} psi_j, 0)` and
//! `f_j = (0, mu_j^{1/2} psi_j)` satisfy `omega(e_i, f_j) = delta_ij`.
//! A vector is written `(x, y)` with `x, y` in `R^K`, so `omega(v, w) =
//! v^T Omega w` with `Omega = [[0, I], [-I, 0]]`, `J = [[0, -I], [I, 0]]`
//! and the free flow `U_0(t) = exp(-mu t J)`.

use nalgebra::{DMatrix, DVector, Schur, SymmetricEigen};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{evolve, free_flow, step_plan, tangent_evolve, SplitStepper, Trajectory};
use crate::error::{Error, Result};
use crate::phase_space::{from_amplitude, to_amplitude, Amplitude, CauchyData};
use crate::quadrature::simpson_weights;
use crate::report::{finite_or_string, ExperimentReport};
use crate::spectral::{Direction, Grid, RealField};

/// Which finite-horizon operator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum OperatorKind {
    Wave,
    Scattering,
}

impl OperatorKind {
    pub fn name(self) -> &'static str {
        match self {
            OperatorKind::Wave => "wave",
            OperatorKind::Scattering => "scattering",
        }
    }
}

impl std::str::FromStr for OperatorKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "W" | "w" | "wave" => Ok(OperatorKind::Wave),
            "S" | "s" | "scattering" => Ok(OperatorKind::Scattering),
            other => Err(Error::InvalidArgument(format!(
                "unknown operator kind `{other}`"
            ))),
        }
    }
}

/// Profile of a real basis function.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModeKind {
    Constant,
    Cos,
    Sin,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mode {
    pub k: [i64; 3],
    pub kind: ModeKind,
    pub mu: f64,
}

/// The `K` lowest real Fourier modes of a grid with their lattice samples.
#[derive(Clone, Debug)]
pub struct ModeBasis {
    pub modes: Vec<Mode>,
    pub grid: Grid,
    samples: Vec<RealField>,
}

impl PartialEq for ModeBasis {
    fn eq(&self, other: &Self) -> bool {
        self.modes == other.modes && self.grid == other.grid
    }
}

fn canonical(k: [i64; 3]) -> bool {
    for &c in &k {
        if c != 0 {
            return c > 0;
        }
    }
    true
}

impl ModeBasis {
    /// Constant mode first, then `cos`/`sin` pairs ordered by `|k|^2` and
    /// lexicographically by the representative with positive leading entry.
    pub fn lowest(grid: &Grid, count: usize) -> Result<ModeBasis> {
        if count == 0 {
            return Err(Error::InvalidArgument("mode count must be positive".into()));
        }
        let half = (grid.n() / 3) as i64;
        let mut reps: Vec<[i64; 3]> = Vec::new();
        let d = grid.dim();
        let mut k = [0i64; 3];
        let mut rec = |k: [i64; 3]| {
            if k != [0, 0, 0] && canonical(k) {
                reps.push(k);
            }
        };
        // Enumerate the dealiased cube; only a few shells are ever needed.
        let span = (-half..=half).collect::<Vec<_>>();
        for &a in &span {
            k[0] = a;
            if d == 1 {
                rec(k);
                continue;
            }
            for &b in &span {
                k[1] = b;
                if d == 2 {
                    rec(k);
                    continue;
                }
                for &c in &span {
                    k[2] = c;
                    rec(k);
                }
            }
        }
        reps.sort_by_key(|k| (k[0] * k[0] + k[1] * k[1] + k[2] * k[2], *k));
        let mut modes = vec![Mode {
            k: [0; 3],
            kind: ModeKind::Constant,
            mu: grid.mass(),
        }];
        for k in reps {
            if modes.len() >= count {
                break;
            }
            let mu = grid.mu()[grid.flat_index(k)];
            modes.push(Mode {
                k,
                kind: ModeKind::Cos,
                mu,
            });
            if modes.len() < count {
                modes.push(Mode {
                    k,
                    kind: ModeKind::Sin,
                    mu,
                });
            }
        }
        if modes.len() < count {
            return Err(Error::InvalidArgument(format!(
                "grid resolves only {} dealiased modes, {count} requested",
                modes.len()
            )));
        }
        Self::from_modes(grid, modes)
    }

    pub fn from_modes(grid: &Grid, modes: Vec<Mode>) -> Result<ModeBasis> {
        let vol = grid.volume();
        let dk = grid.wavenumber_spacing();
        let samples = modes
            .iter()
            .map(|m| {
                let kv = [dk * m.k[0] as f64, dk * m.k[1] as f64, dk * m.k[2] as f64];
                grid.sample(|x| {
                    let phase = kv[0] * x[0] + kv[1] * x[1] + kv[2] * x[2];
                    match m.kind {
                        ModeKind::Constant => 1.0 / vol.sqrt(),
                        ModeKind::Cos => (2.0 / vol).sqrt() * phase.cos(),
                        ModeKind::Sin => (2.0 / vol).sqrt() * phase.sin(),
                    }
                })
            })
            .collect();
        Ok(ModeBasis {
            modes,
            grid: grid.clone(),
            samples,
        })
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    /// Lattice samples of `psi_j`.
    pub fn profile(&self, j: usize) -> &RealField {
        &self.samples[j]
    }

    /// Canonical basis vector `j` in `0..2K` (`e_j`, then `f_j`).
    pub fn vector(&self, j: usize) -> CauchyData {
        let k = self.len();
        let zero = RealField::zeros(self.grid.len());
        if j < k {
            let s = self.modes[j].mu.powf(-0.5);
            CauchyData {
                phi: self.samples[j].scaled(s),
                pi: zero,
                grid: self.grid.clone(),
            }
        } else {
            let s = self.modes[j - k].mu.sqrt();
            CauchyData {
                phi: zero,
                pi: self.samples[j - k].scaled(s),
                grid: self.grid.clone(),
            }
        }
    }

    /// Canonical coordinates of the orthogonal projection of `data`.
    pub fn coordinates(&self, data: &CauchyData) -> Result<DVector<f64>> {
        crate::phase_space::same_grid(&self.grid, &data.grid)?;
        let k = self.len();
        let w = self.grid.cell_volume();
        let mut out = DVector::zeros(2 * k);
        for (j, (m, psi)) in self.modes.iter().zip(&self.samples).enumerate() {
            let a: f64 = psi.0.iter().zip(&data.phi.0).map(|(p, f)| p * f).sum();
            let b: f64 = psi.0.iter().zip(&data.pi.0).map(|(p, f)| p * f).sum();
            out[j] = m.mu.sqrt() * a * w;
            out[k + j] = m.mu.powf(-0.5) * b * w;
        }
        Ok(out)
    }

    /// Plane-wave expansion `psi_j = sum a e^{i k x}`.
    fn plane_waves(&self, j: usize) -> Vec<([i64; 3], Complex64)> {
        let m = &self.modes[j];
        let vol = self.grid.volume();
        let c = 1.0 / (2.0 * vol).sqrt();
        let neg = [-m.k[0], -m.k[1], -m.k[2]];
        match m.kind {
            ModeKind::Constant => vec![([0; 3], Complex64::new(1.0 / vol.sqrt(), 0.0))],
            ModeKind::Cos => vec![(m.k, Complex64::new(c, 0.0)), (neg, Complex64::new(c, 0.0))],
            ModeKind::Sin => vec![
                (m.k, Complex64::new(0.0, -c)),
                (neg, Complex64::new(0.0, c)),
            ],
        }
    }

    /// `G = D S D` with `S_ij = int 3 lambda (P phi)^2 psi_i psi_j` and
    /// `D = diag(mu^{-1/2})`, from the dealiased field on the lattice.
    pub fn potential_matrix(&self, phi_dealiased: &[f64]) -> DMatrix<f64> {
        let g = &self.grid;
        let k = self.len();
        let c3 = 3.0 * g.coupling();
        let mut q: Vec<Complex64> = phi_dealiased
            .iter()
            .map(|v| Complex64::new(c3 * v * v, 0.0))
            .collect();
        g.fft_in_place(&mut q, Direction::Forward);
        let w = g.cell_volume();
        // int q e^{i p x} dx on the lattice x_j = (j - n/2) h.
        let moment = |p: [i64; 3]| {
            let sign = if (p[0] + p[1] + p[2]).rem_euclid(2) == 0 {
                1.0
            } else {
                -1.0
            };
            q[g.flat_index(p)].conj() * (w * sign)
        };
        let waves: Vec<_> = (0..k).map(|j| self.plane_waves(j)).collect();
        let mut out = DMatrix::zeros(k, k);
        for i in 0..k {
            for j in i..k {
                let mut s = Complex64::new(0.0, 0.0);
                for (ki, ai) in &waves[i] {
                    for (kj, aj) in &waves[j] {
                        s += ai * aj * moment([ki[0] + kj[0], ki[1] + kj[1], ki[2] + kj[2]]);
                    }
                }
                let v = s.re / (self.modes[i].mu * self.modes[j].mu).sqrt();
                out[(i, j)] = v;
                out[(j, i)] = v;
            }
        }
        out
    }

    /// `exp(-mu t J)` applied to the rows of `m` in place.
    pub(crate) fn rotate_rows(&self, m: &mut DMatrix<f64>, t: f64) {
        let k = self.len();
        for (j, mode) in self.modes.iter().enumerate() {
            let (s, c) = (mode.mu * t).sin_cos();
            for col in 0..m.ncols() {
                let x = m[(j, col)];
                let y = m[(k + j, col)];
                m[(j, col)] = c * x + s * y;
                m[(k + j, col)] = -s * x + c * y;
            }
        }
    }

    /// Matrix of `U_0(t) = exp(-mu t J)`.
    pub fn free_rotation(&self, t: f64) -> DMatrix<f64> {
        let mut m = DMatrix::identity(2 * self.len(), 2 * self.len());
        self.rotate_rows(&mut m, t);
        m
    }
}

/// `Omega = [[0, I], [-I, 0]]`.
pub fn omega_matrix(k: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(2 * k, 2 * k);
    for i in 0..k {
        m[(i, k + i)] = 1.0;
        m[(k + i, i)] = -1.0;
    }
    m
}

/// `J = [[0, -I], [I, 0]]`.
pub fn j_matrix(k: usize) -> DMatrix<f64> {
    -omega_matrix(k)
}

/// Width of the region where `|phi|` or `|pi|` exceeds `1e-10` of its
/// maximum, measured as the shortest periodic arc per axis (largest over
/// axes).
pub fn support_width(data: &CauchyData) -> f64 {
    let g = &data.grid;
    let n = g.n();
    let (pm, qm) = (data.phi.max_abs(), data.pi.max_abs());
    if pm == 0.0 && qm == 0.0 {
        return 0.0;
    }
    let mut widest = 0.0f64;
    for axis in 0..g.dim() {
        let mut active = vec![false; n];
        let stride = n.pow((g.dim() - 1 - axis) as u32);
        for idx in 0..g.len() {
            if data.phi.0[idx].abs() > 1e-10 * pm || data.pi.0[idx].abs() > 1e-10 * qm {
                active[(idx / stride) % n] = true;
            }
        }
        let on: Vec<usize> = (0..n).filter(|&j| active[j]).collect();
        let mut gap = 0;
        for (i, &a) in on.iter().enumerate() {
            let b = if i + 1 < on.len() {
                on[i + 1]
            } else {
                on[0] + n
            };
            gap = gap.max(b - a);
        }
        let arc = if on.len() == 1 { 0 } else { n - gap };
        widest = widest.max(arc as f64 * g.spacing());
    }
    widest
}

/// Enforces `L >= 2T + w`.
pub fn check_no_wrap(grid: &Grid, horizon: f64, width: f64) -> Result<()> {
    if grid.box_length() < 2.0 * horizon.abs() + width {
        return Err(Error::NoWrap {
            box_length: grid.box_length(),
            horizon: horizon.abs(),
            support_width: width,
        });
    }
    Ok(())
}

fn in_data_at(z_in: &Amplitude, horizon: f64) -> Result<CauchyData> {
    let data = from_amplitude(z_in)?;
    check_no_wrap(&z_in.grid, horizon, support_width(&data))?;
    in_data_unchecked(z_in, horizon)
}

fn in_data_unchecked(z_in: &Amplitude, horizon: f64) -> Result<CauchyData> {
    if !(horizon >= 0.0 && horizon.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "horizon {horizon} must be >= 0"
        )));
    }
    from_amplitude(&free_flow(z_in, -horizon)?)
}

/// `W_T z` or `S_T z` in amplitude form.
pub fn operator_amplitude(
    kind: OperatorKind,
    z_in: &Amplitude,
    horizon: f64,
    dt: f64,
) -> Result<Amplitude> {
    from_amplitude(z_in).and_then(|d| check_no_wrap(&z_in.grid, horizon, support_width(&d)))?;
    operator_amplitude_unchecked(kind, z_in, horizon, dt)
}

/// As [`operator_amplitude`] without the no-wrap check; callers validate
/// the window themselves.
pub(crate) fn operator_amplitude_unchecked(
    kind: OperatorKind,
    z_in: &Amplitude,
    horizon: f64,
    dt: f64,
) -> Result<Amplitude> {
    let start = in_data_unchecked(z_in, horizon)?;
    match kind {
        OperatorKind::Wave => to_amplitude(&crate::dynamics::evolve_final(&start, horizon, dt)?),
        OperatorKind::Scattering => {
            let end = crate::dynamics::evolve_final(&start, 2.0 * horizon, dt)?;
            free_flow(&to_amplitude(&end)?, -horizon)
        }
    }
}

/// `W_T z = U(0 <- -T) U_0(-T) z`, returned as Cauchy data at `t = 0`.
pub fn wave_operator(z_in: &Amplitude, horizon: f64, dt: f64) -> Result<CauchyData> {
    let start = in_data_at(z_in, horizon)?;
    crate::dynamics::evolve_final(&start, horizon, dt)
}

/// `S_T z = U_0(-T) U(T <- -T) U_0(-T) z` in amplitude form.
pub fn scattering_operator(z_in: &Amplitude, horizon: f64, dt: f64) -> Result<Amplitude> {
    let start = in_data_at(z_in, horizon)?;
    let end = crate::dynamics::evolve_final(&start, 2.0 * horizon, dt)?;
    free_flow(&to_amplitude(&end)?, -horizon)
}

/// Interacting trajectory from `-T` to `0` (wave) or `T` (scattering),
/// storing every `every`-th step.
pub fn operator_trajectory(
    kind: OperatorKind,
    z_in: &Amplitude,
    horizon: f64,
    dt: f64,
    every: usize,
) -> Result<Trajectory> {
    let start = in_data_at(z_in, horizon)?;
    let span = match kind {
        OperatorKind::Wave => horizon,
        OperatorKind::Scattering => 2.0 * horizon,
    };
    crate::dynamics::evolve_recorded(&start, -horizon, span, dt, every)
}

/// Linearization of a finite-horizon operator in canonical mode
/// coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct TangentMatrix {
    pub entries: DMatrix<f64>,
    pub basis: ModeBasis,
    pub kind: OperatorKind,
    pub horizon: f64,
    pub dt: f64,
    pub base_point: Amplitude,
}

/// Options for [`tangent_matrix`].
#[derive(Clone, Copy, Debug)]
pub struct TangentOptions {
    pub modes: usize,
    pub horizon: f64,
    pub dt: f64,
    /// Upper bound on working memory, in bytes.
    pub memory_budget: usize,
}

impl Default for TangentOptions {
    fn default() -> Self {
        TangentOptions {
            modes: 16,
            horizon: 10.0,
            dt: 1e-3,
            memory_budget: 1 << 30,
        }
    }
}

fn kick(m: &mut DMatrix<f64>, g: &DMatrix<f64>, h: f64) {
    let k = g.nrows();
    let upper = m.rows(0, k).clone_owned();
    let delta = g * upper;
    let mut lower = m.rows_mut(k, k);
    lower -= delta * h;
}

/// Galerkin linearization of `W_T` or `S_T` at `u_in` on the `K` lowest
/// modes: the splitting scheme applied to the tangent equation projected on
/// the mode subspace, with the same free rotations as the parent operator.
/// Each kick is a symmetric shear and each rotation is exact, so the
/// result is symplectic to roundoff.
pub fn tangent_matrix(
    kind: OperatorKind,
    u_in: &Amplitude,
    opts: &TangentOptions,
) -> Result<TangentMatrix> {
    let g = &u_in.grid;
    let basis = ModeBasis::lowest(g, opts.modes)?;
    let k = basis.len();
    let required = 8 * (4 * k * k * 3 + k * k * 2) + 16 * g.len() * 6 + 8 * k * g.len();
    if required > opts.memory_budget {
        return Err(Error::MemoryBudget {
            required,
            budget: opts.memory_budget,
        });
    }
    let start = in_data_at(u_in, opts.horizon)?;
    let span = match kind {
        OperatorKind::Wave => opts.horizon,
        OperatorKind::Scattering => 2.0 * opts.horizon,
    };
    let (steps, h) = step_plan(span, opts.dt)?;
    // `pending` holds free-flow time not yet applied to `m`.
    let mut m = DMatrix::identity(2 * k, 2 * k);
    let mut pending = -opts.horizon;
    if g.coupling() == 0.0 {
        pending += steps as f64 * h;
    } else if steps > 0 {
        let mut stepper = SplitStepper::new(&start, -opts.horizon, h)?;
        let mut pot = basis.potential_matrix(stepper.phi_dealiased());
        for _ in 0..steps {
            basis.rotate_rows(&mut m, pending);
            kick(&mut m, &pot, 0.5 * h);
            stepper.step()?;
            pot = basis.potential_matrix(stepper.phi_dealiased());
            basis.rotate_rows(&mut m, h);
            kick(&mut m, &pot, 0.5 * h);
            pending = 0.0;
        }
    }
    if kind == OperatorKind::Scattering {
        pending -= opts.horizon;
    }
    basis.rotate_rows(&mut m, pending);
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::BlowUp { t: opts.horizon });
    }
    Ok(TangentMatrix {
        entries: m,
        basis,
        kind,
        horizon: opts.horizon,
        dt: opts.dt,
        base_point: u_in.clone(),
    })
}

/// The same linearization computed on the full lattice: every basis vector
/// is pushed through [`tangent_evolve`] and the end state is projected back
/// on the mode subspace. The projection discards coupling to the other
/// modes, so the result is symplectic only up to that leakage.
pub fn tangent_matrix_lattice(
    kind: OperatorKind,
    u_in: &Amplitude,
    opts: &TangentOptions,
) -> Result<DMatrix<f64>> {
    let g = &u_in.grid;
    let basis = ModeBasis::lowest(g, opts.modes)?;
    let k = basis.len();
    let span = match kind {
        OperatorKind::Wave => opts.horizon,
        OperatorKind::Scattering => 2.0 * opts.horizon,
    };
    let (steps, _) = step_plan(span, opts.dt)?;
    let required = (steps + 1) * g.len() * 16 + 2 * k * g.len() * 16;
    if required > opts.memory_budget {
        return Err(Error::MemoryBudget {
            required,
            budget: opts.memory_budget,
        });
    }
    let start = in_data_at(u_in, opts.horizon)?;
    let base = evolve(&start, span, opts.dt)?;
    let rotate = |v: &CauchyData| -> Result<CauchyData> {
        from_amplitude(&free_flow(&to_amplitude(v)?, -opts.horizon)?)
    };
    let mut m = DMatrix::zeros(2 * k, 2 * k);
    for j in 0..2 * k {
        let v = rotate(&basis.vector(j))?;
        let out = tangent_evolve(&base, &v)?;
        let mut end = out.states.last().expect("non-empty tangent").clone();
        if kind == OperatorKind::Scattering {
            end = rotate(&end)?;
        }
        m.set_column(j, &basis.coordinates(&end)?);
    }
    Ok(m)
}

/// Samples of a matrix-valued generator on a uniform time grid.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorSamples {
    pub times: Vec<f64>,
    pub matrices: Vec<DMatrix<f64>>,
    /// Spectral norm of each sample.
    pub norms: Vec<f64>,
    /// Trapezoid estimate of `N(A) = int ||A(t)|| dt`.
    pub norm_integral: f64,
}

fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().svd(false, false).singular_values.max()
}

fn trapezoid(times: &[f64], values: &[f64]) -> f64 {
    times
        .windows(2)
        .zip(values.windows(2))
        .map(|(t, v)| 0.5 * (t[1] - t[0]) * (v[0] + v[1]))
        .sum()
}

impl GeneratorSamples {
    pub fn new(times: Vec<f64>, matrices: Vec<DMatrix<f64>>) -> Result<Self> {
        let norms = matrices.iter().map(spectral_norm).collect();
        Self::with_norms(times, matrices, norms)
    }

    fn with_norms(times: Vec<f64>, matrices: Vec<DMatrix<f64>>, norms: Vec<f64>) -> Result<Self> {
        if times.len() != matrices.len() || times.len() < 2 {
            return Err(Error::InvalidArgument(
                "generator needs at least two samples, one matrix per time".into(),
            ));
        }
        let h = times[1] - times[0];
        if !(h > 0.0)
            || times
                .windows(2)
                .any(|w| ((w[1] - w[0]) - h).abs() > 1e-9 * h)
        {
            return Err(Error::InvalidArgument(
                "generator time grid must be uniform and increasing".into(),
            ));
        }
        let dim = matrices[0].nrows();
        if matrices
            .iter()
            .any(|m| m.nrows() != dim || m.ncols() != dim)
        {
            return Err(Error::InvalidArgument(
                "generator samples must share one square shape".into(),
            ));
        }
        let norm_integral = trapezoid(&times, &norms);
        Ok(GeneratorSamples {
            times,
            matrices,
            norms,
            norm_integral,
        })
    }

    /// Samples `a(t)` on `count` uniform points of `[t0, t1]`.
    pub fn from_fn<F: Fn(f64) -> DMatrix<f64>>(
        t0: f64,
        t1: f64,
        count: usize,
        a: F,
    ) -> Result<Self> {
        let h = (t1 - t0) / (count.max(2) - 1) as f64;
        let times: Vec<f64> = (0..count).map(|i| t0 + i as f64 * h).collect();
        let matrices = times.iter().map(|&t| a(t)).collect();
        Self::new(times, matrices)
    }

    pub fn dim(&self) -> usize {
        self.matrices[0].nrows()
    }

    pub fn step(&self) -> f64 {
        self.times[1] - self.times[0]
    }

    /// Index of the sample at `t`, if `t` lies on the grid.
    pub fn node(&self, t: f64) -> Option<usize> {
        let x = (t - self.times[0]) / self.step();
        let i = x.round();
        ((x - i).abs() < 1e-6 && i >= 0.0 && (i as usize) < self.times.len()).then_some(i as usize)
    }

    /// `int ||A|| dt` over the samples up to index `end`.
    pub fn partial_norm_integral(&self, end: usize) -> f64 {
        trapezoid(&self.times[..=end], &self.norms[..=end])
    }
}

/// `A(t) = U_0(-t) B(t) U_0(t)` with `B = [[0, 0], [-G(t), 0]]` sampled at
/// every stored state of `base`, in the canonical coordinates of the `K`
/// lowest modes. With this sign `omega(A v, v) = x^T G x >= 0`.
pub fn interaction_picture_generator(base: &Trajectory, modes: usize) -> Result<GeneratorSamples> {
    let g = &base.grid;
    let basis = ModeBasis::lowest(g, modes)?;
    let k = basis.len();
    let mut matrices = Vec::with_capacity(base.states.len());
    let mut norms = Vec::with_capacity(base.states.len());
    for (state, &t) in base.states.iter().zip(&base.times) {
        let mut buf: Vec<Complex64> = state
            .phi
            .0
            .iter()
            .map(|&v| Complex64::new(v, 0.0))
            .collect();
        g.fft_in_place(&mut buf, Direction::Forward);
        g.dealias(&mut buf);
        g.fft_in_place(&mut buf, Direction::Inverse);
        let norm = 1.0 / g.len() as f64;
        let phi: Vec<f64> = buf.iter().map(|v| v.re * norm).collect();
        let pot = basis.potential_matrix(&phi);
        let c = DVector::from_iterator(k, basis.modes.iter().map(|m| (m.mu * t).cos()));
        let s = DVector::from_iterator(k, basis.modes.iter().map(|m| (m.mu * t).sin()));
        let gc = DMatrix::from_fn(k, k, |i, j| pot[(i, j)] * c[j]);
        let gs = DMatrix::from_fn(k, k, |i, j| pot[(i, j)] * s[j]);
        let mut a = DMatrix::zeros(2 * k, 2 * k);
        for i in 0..k {
            for j in 0..k {
                a[(i, j)] = s[i] * gc[(i, j)];
                a[(i, k + j)] = s[i] * gs[(i, j)];
                a[(k + i, j)] = -c[i] * gc[(i, j)];
                a[(k + i, k + j)] = -c[i] * gs[(i, j)];
            }
        }
        // ||A(t)|| = ||G(t)|| since the rotations are orthogonal.
        let eig = SymmetricEigen::new(pot);
        norms.push(eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs())));
        matrices.push(a);
    }
    GeneratorSamples::with_norms(base.times.clone(), matrices, norms)
}

fn target_node(a: &GeneratorSamples, t: f64) -> Result<usize> {
    let i = a.node(t).ok_or_else(|| {
        Error::InvalidArgument(format!("t = {t} is not a sample time of the generator"))
    })?;
    if i % 2 != 0 {
        return Err(Error::InvalidArgument(format!(
            "t = {t} must sit an even number of samples after the window start"
        )));
    }
    Ok(i)
}

/// Solves `U' = lambda A(t) U`, `U(t_0) = I` by classical Runge-Kutta with
/// step `2h`, the odd samples serving as midpoints.
pub fn time_ordered_exponential(
    a: &GeneratorSamples,
    coupling: f64,
    t: f64,
) -> Result<DMatrix<f64>> {
    let end = target_node(a, t)?;
    let dim = a.dim();
    let mut u = DMatrix::identity(dim, dim);
    let h2 = 2.0 * a.step();
    let mut i = 0;
    while i < end {
        let (a0, a1, a2) = (&a.matrices[i], &a.matrices[i + 1], &a.matrices[i + 2]);
        let k1 = a0 * &u * coupling;
        let k2 = a1 * (&u + &k1 * (0.5 * h2)) * coupling;
        let k3 = a1 * (&u + &k2 * (0.5 * h2)) * coupling;
        let k4 = a2 * (&u + &k3 * h2) * coupling;
        u += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h2 / 6.0);
        i += 2;
    }
    if u.iter().any(|v| !v.is_finite()) {
        return Err(Error::Quadrature(
            "time-ordered exponential diverged".into(),
        ));
    }
    let bound = (coupling.abs() * a.partial_norm_integral(end)).exp();
    let norm = spectral_norm(&u);
    if norm > bound * (1.0 + 1e-6) {
        return Err(Error::Quadrature(format!(
            "bound violated: ||U|| = {norm} > exp(|lambda| N) = {bound}"
        )));
    }
    Ok(u)
}

/// `Y = (M - I)(M + I)^{-1}`.
pub fn cayley_transform(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let id = DMatrix::identity(m.nrows(), m.ncols());
    let inv = (m + &id).try_inverse().ok_or_else(|| {
        Error::Singular("M + I is not invertible; the hypothesis N(A) < 2 fails".into())
    })?;
    if inv.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular(
            "M + I is not invertible; the hypothesis N(A) < 2 fails".into(),
        ));
    }
    Ok((m - &id) * inv)
}

/// Inverse transform `M = (I + Y)(I - Y)^{-1}`.
pub fn inverse_cayley(y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let id = DMatrix::identity(y.nrows(), y.ncols());
    let inv = (&id - y)
        .try_inverse()
        .ok_or_else(|| Error::Singular("I - Y is not invertible".into()))?;
    Ok((&id + y) * inv)
}

/// `U(t*; rho)` together with `R = int U^{-1} A U ds` up to `t*`, by
/// Runge-Kutta on the augmented system `U' = rho A U`, `V' = -rho V A`,
/// `R' = V A U`.
fn augmented(a: &GeneratorSamples, rho: f64, end: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let dim = a.dim();
    let mut u = DMatrix::identity(dim, dim);
    let mut v = DMatrix::identity(dim, dim);
    let mut r = DMatrix::zeros(dim, dim);
    let h2 = 2.0 * a.step();
    let rhs = |m: &DMatrix<f64>, u: &DMatrix<f64>, v: &DMatrix<f64>| {
        let au = m * u;
        (&au * rho, -(v * m) * rho, v * au)
    };
    let mut i = 0;
    while i < end {
        let (a0, a1, a2) = (&a.matrices[i], &a.matrices[i + 1], &a.matrices[i + 2]);
        let (ku1, kv1, kr1) = rhs(a0, &u, &v);
        let (ku2, kv2, kr2) = rhs(a1, &(&u + &ku1 * (0.5 * h2)), &(&v + &kv1 * (0.5 * h2)));
        let (ku3, kv3, kr3) = rhs(a1, &(&u + &ku2 * (0.5 * h2)), &(&v + &kv2 * (0.5 * h2)));
        let (ku4, kv4, kr4) = rhs(a2, &(&u + &ku3 * h2), &(&v + &kv3 * h2));
        u += (ku1 + ku2 * 2.0 + ku3 * 2.0 + ku4) * (h2 / 6.0);
        v += (kv1 + kv2 * 2.0 + kv3 * 2.0 + kv4) * (h2 / 6.0);
        r += (kr1 + kr2 * 2.0 + kr3 * 2.0 + kr4) * (h2 / 6.0);
        i += 2;
    }
    (u, r)
}

/// Left and right sides of the Cayley integral identity
/// `Cayley(U(t*; lambda)) = 2 int_0^lambda (I + U^{-1})^{-1} R(rho) (I + U)^{-1} drho`
/// with `t* = 0` (wave) or the window end (scattering), the outer integral
/// by composite Simpson on `rho_intervals` intervals.
pub fn cayley_integral_sides(
    a: &GeneratorSamples,
    coupling: f64,
    kind: OperatorKind,
    rho_intervals: usize,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if rho_intervals < 2 || !rho_intervals.is_multiple_of(2) {
        return Err(Error::InvalidArgument(
            "rho quadrature needs an even interval count".into(),
        ));
    }
    let t_star = match kind {
        OperatorKind::Wave => 0.0,
        OperatorKind::Scattering => *a.times.last().expect("non-empty"),
    };
    let end = target_node(a, t_star)?;
    let n_eff = a.partial_norm_integral(end);
    if coupling.abs() * n_eff >= 2.0 {
        return Err(Error::Hypothesis(format!(
            "|lambda| N(A) = {} must be < 2",
            coupling.abs() * n_eff
        )));
    }
    let dim = a.dim();
    let id = DMatrix::<f64>::identity(dim, dim);
    let lhs = cayley_transform(&time_ordered_exponential(a, coupling, t_star)?)?;
    let weights = simpson_weights(0.0, coupling, rho_intervals);
    let mut rhs = DMatrix::zeros(dim, dim);
    for (i, w) in weights.iter().enumerate() {
        let rho = coupling * i as f64 / rho_intervals as f64;
        let (u, r) = augmented(a, rho, end);
        let inv = (&u + &id)
            .try_inverse()
            .ok_or_else(|| Error::Singular("I + U(rho) is not invertible".into()))?;
        rhs += (&inv * &u * r * &inv) * (2.0 * w);
    }
    Ok((lhs, rhs))
}

/// Frobenius discrepancy between the two sides of the Cayley identity.
pub fn verify_cayley_integral(
    a: &GeneratorSamples,
    coupling: f64,
    kind: OperatorKind,
    rho_intervals: usize,
) -> Result<ExperimentReport> {
    let (lhs, rhs) = cayley_integral_sides(a, coupling, kind, rho_intervals)?;
    let diff = (&lhs - &rhs).norm();
    let mut r = ExperimentReport::new("cayley-integral");
    r.param("kind", kind.name())
        .param("coupling", coupling)
        .param("rho_intervals", rho_intervals)
        .param("samples", a.times.len());
    r.measure("norm_integral", a.norm_integral)
        .measure("lhs_norm", lhs.norm())
        .measure("rhs_norm", rhs.norm())
        .measure("discrepancy", diff);
    r.pass = diff.is_finite();
    Ok(r)
}

/// Eigenvalues through a real Schur form with bounded iterations. Clustered
/// unit-modulus pairs can stall deflation at tight tolerances, so the
/// tolerance is relaxed step by step; the one used is returned.
fn eigenvalues(m: &DMatrix<f64>) -> Result<(Vec<Complex64>, f64)> {
    for eps in [1e-14, 1e-13, 1e-12, 1e-11, 1e-10, 1e-9, 1e-8] {
        if let Some(s) = Schur::try_new(m.clone(), eps, 20_000) {
            return Ok((s.complex_eigenvalues().iter().copied().collect(), eps));
        }
    }
    Err(Error::Singular(
        "real Schur iteration did not converge".into(),
    ))
}

/// Symplectic, complex-structure and positivity diagnostics of a tangent
/// map given in canonical coordinates.
pub fn unitarizability_diagnostics(
    m: &DMatrix<f64>,
    probes: usize,
    seed: u64,
) -> Result<ExperimentReport> {
    let n = m.nrows();
    if n != m.ncols() || !n.is_multiple_of(2) || n == 0 {
        return Err(Error::InvalidArgument(
            "expected a square 2K x 2K matrix".into(),
        ));
    }
    let k = n / 2;
    let om = omega_matrix(k);
    let jm = j_matrix(k);
    let symplectic = (m.transpose() * &om * m - &om).norm();
    let commutator = (m * &jm - &jm * m).norm();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let random_vec = |rng: &mut ChaCha8Rng| DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
    let herm = |a: &DVector<f64>, b: &DVector<f64>| Complex64::new(a.dot(b), a.dot(&(&om * b)));
    let mut isometry = 0.0f64;
    for _ in 0..probes {
        let v1 = random_vec(&mut rng);
        let v2 = random_vec(&mut rng);
        let lhs = herm(&(m * &v1), &(m * &v2));
        isometry = isometry.max((lhs - herm(&v1, &v2)).norm());
    }
    let (eig, schur_eps) = eigenvalues(m)?;
    let moduli: Vec<f64> = eig.iter().map(|z| z.norm()).collect();
    let modulus_defect = moduli.iter().fold(0.0f64, |a, v| a.max((v - 1.0).abs()));

    let mut r = ExperimentReport::new("unitarizability");
    r.param("dim", n)
        .param("probes", probes)
        .param("seed", seed);
    r.measure("symplectic_defect", symplectic)
        .measure("j_commutator", commutator)
        .measure("isometry_defect", isometry)
        .measure("eigen_modulus_defect", modulus_defect)
        .measure("schur_tolerance", schur_eps);
    let mut sorted = moduli.clone();
    sorted.sort_by(f64::total_cmp);
    r.measure("eigen_moduli", &sorted);
    match cayley_transform(m) {
        Ok(y) => {
            let ymag = y.norm();
            let form = |v: &DVector<f64>| (&y * v).dot(&(&om * v)) / v.norm_squared();
            let mut min_probe = f64::INFINITY;
            for _ in 0..probes {
                let v = random_vec(&mut rng);
                min_probe = min_probe.min(form(&v));
            }
            // Quadratic form v -> omega(Yv, v) has symmetric matrix
            // sym(Y^T Omega).
            let q = y.transpose() * &om;
            let sym = (&q + q.transpose()) * 0.5;
            let min_eig = SymmetricEigen::new(sym).eigenvalues.min();
            r.measure("cayley_norm", ymag)
                .measure("cone_min_probe", finite_or_string(min_probe))
                .measure("cone_min_eigenvalue", min_eig)
                .measure("cone_degenerate", ymag == 0.0);
        }
        Err(e) => {
            r.measure("cayley_error", e.to_string());
        }
    }
    r.pass = symplectic.is_finite() && commutator.is_finite();
    Ok(r)
}

impl TangentMatrix {
    pub fn modes(&self) -> usize {
        self.basis.len()
    }

    pub fn symplectic_defect(&self) -> f64 {
        let om = omega_matrix(self.modes());
        (self.entries.transpose() * &om * &self.entries - om).norm()
    }

    pub fn j_commutator(&self) -> f64 {
        let jm = j_matrix(self.modes());
        (&self.entries * &jm - &jm * &self.entries).norm()
    }

    pub fn diagnostics(&self, probes: usize, seed: u64) -> Result<ExperimentReport> {
        let mut r = unitarizability_diagnostics(&self.entries, probes, seed)?;
        r.param("kind", self.kind.name())
            .param("horizon", self.horizon)
            .param("dt", self.dt);
        Ok(r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gaussian(g: &Grid, amp: f64) -> Amplitude {
        let phi = g.sample(|x| amp * (-(x[0] * x[0] + x[1] * x[1] + x[2] * x[2]) / 2.0).exp());
        let pi = g.sample(|x| {
            0.5 * amp * x[0] * (-(x[0] * x[0] + x[1] * x[1] + x[2] * x[2]) / 2.0).exp()
        });
        to_amplitude(&CauchyData::new(g, phi, pi).unwrap()).unwrap()
    }

    fn opts(horizon: f64, dt: f64) -> TangentOptions {
        TangentOptions {
            modes: 8,
            horizon,
            dt,
            memory_budget: 1 << 30,
        }
    }

    #[test]
    fn basis_is_canonical() {
        for (d, n) in [(1, 64), (2, 16), (3, 16)] {
            let g = Grid::new(d, n, 20.0, 1.0, 1.0).unwrap();
            let b = ModeBasis::lowest(&g, 9).unwrap();
            assert_eq!(b.modes[0].kind, ModeKind::Constant);
            let om = omega_matrix(9);
            for i in 0..18 {
                let ci = b.coordinates(&b.vector(i)).unwrap();
                for j in 0..18 {
                    let w =
                        crate::phase_space::symplectic_form(&b.vector(i), &b.vector(j)).unwrap();
                    assert!((w - om[(i, j)]).abs() < 1e-12);
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert!((ci[j] - expect).abs() < 1e-12);
                }
            }
            assert!(b.modes.windows(2).all(|w| w[0].mu <= w[1].mu));
        }
        let g = Grid::new(1, 8, 20.0, 1.0, 1.0).unwrap();
        assert!(ModeBasis::lowest(&g, 16).is_err());
    }

    #[test]
    fn rotation_matches_free_flow_and_j() {
        let g = Grid::new(1, 64, 20.0, 1.0, 1.0).unwrap();
        let b = ModeBasis::lowest(&g, 5).unwrap();
        let t = 0.7;
        let rot = b.free_rotation(t);
        for j in 0..10 {
            let v = b.vector(j);
            let flowed =
                from_amplitude(&free_flow(&to_amplitude(&v).unwrap(), t).unwrap()).unwrap();
            let c = b.coordinates(&flowed).unwrap();
            assert!((c - rot.column(j)).norm() < 1e-12);
            let jv = crate::phase_space::apply_j(&v).unwrap();
            let c = b.coordinates(&jv).unwrap();
            assert!((c - j_matrix(5).column(j)).norm() < 1e-12);
        }
    }

    #[test]
    fn potential_matrix_matches_direct_quadrature() {
        let g = Grid::new(2, 16, 12.0, 1.0, 0.8).unwrap();
        let b = ModeBasis::lowest(&g, 7).unwrap();
        let phi = g.sample(|x| (-(x[0] - 0.5).powi(2) / 3.0 - x[1] * x[1] / 2.0).exp());
        let pot = b.potential_matrix(&phi.0);
        for i in 0..7 {
            for j in 0..7 {
                let direct: f64 = (0..g.len())
                    .map(|p| 3.0 * 0.8 * phi.0[p].powi(2) * b.profile(i).0[p] * b.profile(j).0[p])
                    .sum::<f64>()
                    * g.cell_volume()
                    / (b.modes[i].mu * b.modes[j].mu).sqrt();
                assert!((pot[(i, j)] - direct).abs() < 1e-12, "{i} {j}");
            }
        }
    }

    #[test]
    fn support_width_and_no_wrap() {
        let g = Grid::new(1, 128, 32.0, 1.0, 1.0).unwrap();
        let box_data = CauchyData::new(
            &g,
            g.sample(|x| if x[0].abs() <= 2.0 { 1.0 } else { 0.0 }),
            RealField::zeros(128),
        )
        .unwrap();
        assert!((support_width(&box_data) - 4.0).abs() < 1e-12);
        assert_eq!(support_width(&CauchyData::zeros(&g)), 0.0);
        let z = to_amplitude(&box_data).unwrap();
        match wave_operator(&z, 15.0, 0.1) {
            Err(Error::NoWrap { .. }) => {}
            other => panic!("expected no-wrap error, got {other:?}"),
        }
        assert!(wave_operator(&z, 14.0, 0.1).is_ok());
    }

    #[test]
    fn free_operators_are_identity() {
        let g = Grid::new(1, 128, 40.0, 1.0, 0.0).unwrap();
        let z = gaussian(&g, 0.3);
        let w = wave_operator(&z, 10.0, 0.05).unwrap();
        let s = scattering_operator(&z, 10.0, 0.05).unwrap();
        let wa = to_amplitude(&w).unwrap();
        assert!(
            wa.axpy(Complex64::new(-1.0, 0.0), &z)
                .unwrap()
                .norm(0.5)
                .unwrap()
                < 1e-10
        );
        assert!(
            s.axpy(Complex64::new(-1.0, 0.0), &z)
                .unwrap()
                .norm(0.5)
                .unwrap()
                < 1e-10
        );
        for kind in [OperatorKind::Wave, OperatorKind::Scattering] {
            let m = tangent_matrix(kind, &z, &opts(10.0, 0.05)).unwrap();
            assert!((&m.entries - DMatrix::identity(16, 16)).norm() < 1e-12);
        }
    }

    #[test]
    fn operators_are_odd_and_real() {
        let g = Grid::new(1, 128, 40.0, 1.0, 1.0).unwrap();
        let z = gaussian(&g, 0.5);
        let plus = scattering_operator(&z, 5.0, 0.02).unwrap();
        let minus = scattering_operator(&z.scaled(Complex64::new(-1.0, 0.0)), 5.0, 0.02).unwrap();
        assert!(
            plus.z
                .max_abs_diff(&minus.z.scaled(Complex64::new(-1.0, 0.0)))
                == 0.0
        );
        let back = from_amplitude(&plus).unwrap();
        assert!(back.is_finite());
    }

    #[test]
    fn nonlinear_defects() {
        let g = Grid::new(1, 128, 40.0, 1.0, 1.0).unwrap();
        let z = gaussian(&g, 0.2);
        let s = scattering_operator(&z, 10.0, 0.02).unwrap();
        let n0 = z.norm(0.5).unwrap();
        let rel = (s.norm(0.5).unwrap() - n0).abs() / n0;
        assert!(rel < 1e-2, "relative norm defect {rel}");
        let diff = |eps: f64| {
            let ze = z.scaled(Complex64::new(eps, 0.0));
            let w = to_amplitude(&wave_operator(&ze, 5.0, 0.02).unwrap()).unwrap();
            w.axpy(Complex64::new(-1.0, 0.0), &ze)
                .unwrap()
                .norm(0.5)
                .unwrap()
        };
        let eps = [0.4, 0.2, 0.1];
        let d: Vec<f64> = eps.iter().map(|&e| diff(e)).collect();
        let slope = crate::quadrature::log_log_slope(&eps, &d);
        assert!((slope - 3.0).abs() < 0.1, "slope {slope}");
    }

    #[test]
    fn tangent_matrix_is_symplectic_and_matches_lattice() {
        let g = Grid::new(1, 128, 40.0, 1.0, 1.0).unwrap();
        for (amp, dt) in [(1.0, 0.05), (0.3, 0.013)] {
            let z = gaussian(&g, amp);
            for kind in [OperatorKind::Wave, OperatorKind::Scattering] {
                let m = tangent_matrix(kind, &z, &opts(5.0, dt)).unwrap();
                assert!(m.symplectic_defect() < 1e-11, "{}", m.symplectic_defect());
            }
        }
        // Galerkin and full-lattice linearizations agree to second order in
        // the potential.
        let gap = |amp: f64| {
            let z = gaussian(&g, amp);
            let a = tangent_matrix(OperatorKind::Scattering, &z, &opts(5.0, 0.02)).unwrap();
            let b = tangent_matrix_lattice(OperatorKind::Scattering, &z, &opts(5.0, 0.02)).unwrap();
            (
                (&a.entries - &b).norm(),
                (&a.entries - DMatrix::identity(16, 16)).norm(),
            )
        };
        let (d1, m1) = gap(0.2);
        let (d2, _) = gap(0.1);
        assert!(d1 < 0.05 * m1, "{d1} vs {m1}");
        assert!(d1 / d2 > 12.0, "ratio {}", d1 / d2);
        let z = gaussian(&g, 0.2);
        let tight = TangentOptions {
            memory_budget: 1000,
            ..opts(5.0, 0.02)
        };
        assert!(matches!(
            tangent_matrix_lattice(OperatorKind::Wave, &z, &tight),
            Err(Error::MemoryBudget { .. })
        ));
    }

    #[test]
    fn generator_reproduces_tangent_matrices() {
        let g = Grid::new(1, 128, 40.0, 1.0, 1.0).unwrap();
        let z = gaussian(&g, 0.6);
        let (t, dt) = (4.0, 0.01);
        let base = operator_trajectory(OperatorKind::Scattering, &z, t, dt, 1).unwrap();
        let a = interaction_picture_generator(&base, 8).unwrap();
        let ds = tangent_matrix(OperatorKind::Scattering, &z, &opts(t, dt)).unwrap();
        let dw = tangent_matrix(OperatorKind::Wave, &z, &opts(t, dt)).unwrap();
        let xs = time_ordered_exponential(&a, 1.0, t).unwrap();
        let xw = time_ordered_exponential(&a, 1.0, 0.0).unwrap();
        let ds_dev = (&ds.entries - DMatrix::identity(16, 16)).norm();
        assert!((&xs - &ds.entries).norm() < 1e-3 * ds_dev);
        assert!((&xw - &dw.entries).norm() < 1e-3 * ds_dev);
        let om = omega_matrix(8);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for m in a.matrices.iter().step_by(37) {
            for _ in 0..50 {
                let v = DVector::from_fn(16, |_, _| rng.gen_range(-1.0..1.0));
                assert!((m * &v).dot(&(&om * &v)) >= -1e-14);
            }
        }
        let zero = operator_trajectory(
            OperatorKind::Scattering,
            &z.scaled(Complex64::new(0.0, 0.0)),
            1.0,
            0.1,
            1,
        )
        .unwrap();
        let a0 = interaction_picture_generator(&zero, 4).unwrap();
        assert_eq!(a0.norm_integral, 0.0);
        assert!(a0.matrices.iter().all(|m| m.norm() == 0.0));
    }

    #[test]
    fn generator_norm_scales_quadratically() {
        let g = Grid::new(1, 128, 40.0, 1.0, 1.0).unwrap();
        let n = |eps: f64| {
            let base =
                operator_trajectory(OperatorKind::Scattering, &gaussian(&g, eps), 3.0, 0.02, 1)
                    .unwrap();
            interaction_picture_generator(&base, 6)
                .unwrap()
                .norm_integral
        };
        let ratio = n(0.1) / n(0.05);
        assert!((ratio - 4.0).abs() < 0.05, "ratio {ratio}");
    }

    fn scalar(f: impl Fn(f64) -> f64, count: usize) -> GeneratorSamples {
        GeneratorSamples::from_fn(-1.0, 1.0, count, |t| DMatrix::from_element(1, 1, f(t))).unwrap()
    }

    #[test]
    fn time_ordered_exponential_closed_forms() {
        let a = scalar(|t| 1.0 + t * t, 401);
        assert!((time_ordered_exponential(&a, 0.0, 1.0).unwrap()[(0, 0)] - 1.0).abs() == 0.0);
        // int_{-1}^{1} (1 + t^2) dt = 8/3
        let u = time_ordered_exponential(&a, 0.3, 1.0).unwrap()[(0, 0)];
        assert!((u - (0.3 * 8.0 / 3.0f64).exp()).abs() < 1e-10);
        let u = time_ordered_exponential(&a, 0.3, 0.0).unwrap()[(0, 0)];
        assert!((u - (0.3 * 4.0 / 3.0f64).exp()).abs() < 1e-10);
        assert!(time_ordered_exponential(&a, 0.3, 0.005).is_err());
        // Commuting family a(t) A0.
        let a0 = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -2.0, 0.3]);
        let gen = GeneratorSamples::from_fn(0.0, 2.0, 801, |t| &a0 * t.sin()).unwrap();
        let u = time_ordered_exponential(&gen, 0.7, 2.0).unwrap();
        let expect = (&a0 * (0.7 * (1.0 - 2.0f64.cos()))).exp();
        assert!((u - expect).norm() < 1e-10);
    }

    #[test]
    fn cayley_basics() {
        let id = DMatrix::<f64>::identity(3, 3);
        assert_eq!(cayley_transform(&id).unwrap().norm(), 0.0);
        let nu = 0.8f64;
        let y = cayley_transform(&DMatrix::from_element(1, 1, nu.exp())).unwrap();
        assert!((y[(0, 0)] - (nu / 2.0).tanh()).abs() < 1e-15);
        let m = DMatrix::from_row_slice(2, 2, &[1.1, 0.3, -0.2, 0.9]);
        let back = inverse_cayley(&cayley_transform(&m).unwrap()).unwrap();
        assert!((back - m).norm() < 1e-12);
        let bad = -DMatrix::<f64>::identity(2, 2);
        let err = cayley_transform(&bad).unwrap_err().to_string();
        assert!(err.contains("N(A) < 2"));
    }

    #[test]
    fn cayley_integral_scalar() {
        let a = scalar(|t| (1.0 - t * t).powi(2), 1001);
        // nu = int_{-1}^{1} (1 - t^2)^2 = 16/15
        let nu = 16.0f64 / 15.0;
        for kind in [OperatorKind::Wave, OperatorKind::Scattering] {
            let total = if kind == OperatorKind::Wave {
                nu / 2.0
            } else {
                nu
            };
            let exact = (1.2 * total / 2.0).tanh();
            let err = |q: usize| {
                (cayley_integral_sides(&a, 1.2, kind, q).unwrap().1[(0, 0)] - exact).abs()
            };
            let ratio = err(16) / err(32);
            assert!(ratio > 14.0 && ratio < 18.0, "ratio {ratio}");
            let (lhs, rhs) = cayley_integral_sides(&a, 1.2, kind, 64).unwrap();
            assert!((lhs[(0, 0)] - exact).abs() < 1e-10);
            assert!((rhs[(0, 0)] - exact).abs() < 1e-8);
        }
        let (lhs, rhs) = cayley_integral_sides(&a, 0.0, OperatorKind::Scattering, 8).unwrap();
        assert_eq!((lhs.norm(), rhs.norm()), (0.0, 0.0));
        assert!(matches!(
            verify_cayley_integral(&a, 2.0, OperatorKind::Scattering, 8),
            Err(Error::Hypothesis(_))
        ));
    }

    #[test]
    fn diagnostics_on_unitary_maps() {
        let r = unitarizability_diagnostics(&DMatrix::identity(4, 4), 50, 1).unwrap();
        for key in [
            "symplectic_defect",
            "j_commutator",
            "isometry_defect",
            "eigen_modulus_defect",
        ] {
            assert_eq!(r.scalar(key), Some(0.0), "{key}");
        }
        assert_eq!(r.measured["cone_degenerate"], serde_json::Value::Bool(true));
        let theta = 0.4f64;
        let jm = j_matrix(2);
        let rot = DMatrix::identity(4, 4) * theta.cos() + &jm * theta.sin();
        let r = unitarizability_diagnostics(&rot, 50, 1).unwrap();
        for key in [
            "symplectic_defect",
            "j_commutator",
            "isometry_defect",
            "eigen_modulus_defect",
        ] {
            assert!(r.scalar(key).unwrap() < 1e-14, "{key}");
        }
        assert!(unitarizability_diagnostics(&DMatrix::identity(3, 3), 5, 1).is_err());
    }

    #[test]
    fn scattering_tangent_is_cone_positive() {
        let g = Grid::new(1, 128, 40.0, 1.0, 1.0).unwrap();
        let z = gaussian(&g, 0.3);
        let m = tangent_matrix(OperatorKind::Scattering, &z, &opts(5.0, 0.02)).unwrap();
        let r = m.diagnostics(1000, 7).unwrap();
        assert!(r.scalar("cone_min_probe").unwrap() > 0.0);
    }
}
