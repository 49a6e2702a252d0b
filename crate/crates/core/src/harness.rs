//! Configuration, check registry and report persistence.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::asymptotics::{ladder_csv, nelson_ladder, nelson_limit_check, RadialAmplitudeSpec};
use crate::dynamics::{evolve_recorded, evolve_window, mollifier_limit_check, smallness_monitor};
use crate::error::{Error, Result};
use crate::holomorphy::{
    circle_samples, cr_scan, cubic_coefficient_polarization, make_smoother,
    multiplier_vanishing_check, polynomiality_test, taylor_coefficient, taylor_coefficient_refined,
    BandLimitedSmoother, DirectionSet, PairingSetup,
};
use crate::io::{dump_field, Field};
use crate::phase_space::{
    energy, hyperboloid_duality, to_amplitude, Amplitude, CauchyData, SpaceTimeSamples,
};
use crate::report::{finite_or_string, ExperimentReport};
use crate::scattering::{
    cayley_integral_sides, interaction_picture_generator, omega_matrix, operator_trajectory,
    support_width, tangent_matrix, GeneratorSamples, OperatorKind, TangentOptions,
};
use crate::spectral::{ComplexField, Grid};

/// Every registered check, in reporting order.
pub const CHECKS: [&str; 13] = [
    "evolve-conservation",
    "tangent-symplectic",
    "j-commutator-scan",
    "cr-scan",
    "taylor-circle",
    "truncation-poly",
    "multiplier-vanish",
    "cayley-integral",
    "cone-positivity",
    "nelson-ladder",
    "mollifier-limit",
    "smallness",
    "hyperboloid-duality",
];

/// Checks that evolve in-data from `-T` and therefore need the no-wrap box.
const SCATTERING_CHECKS: [&str; 8] = [
    "tangent-symplectic",
    "j-commutator-scan",
    "cr-scan",
    "taylor-circle",
    "truncation-poly",
    "cayley-integral",
    "cone-positivity",
    "smallness",
];

const KEYS: [&str; 38] = [
    "dim",
    "n",
    "box_length",
    "mass",
    "coupling",
    "horizon",
    "dt",
    "modes",
    "memory_budget",
    "data_width",
    "amplitude",
    "amplitude_ladder",
    "operator",
    "small_norm",
    "delta_ladder",
    "circle_radius",
    "circle_nodes",
    "p_lo",
    "p_hi",
    "smoother_beta",
    "smoother_window",
    "smoother_samples",
    "scale_start",
    "scale_step",
    "rho_intervals",
    "probes",
    "sigma_ladder",
    "nelson_dim",
    "nelson_lambda",
    "nelson_center",
    "nelson_width",
    "nelson_amplitude",
    "nelson_ladder",
    "seed",
    "out",
    "record_step",
    "cone_tolerance",
    "duality_slices",
];

const DESK: &str = include_str!("../../../configs/desk.cfg");

/// Raw `key = value` entries, possibly prefixed by a check name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConfigSource {
    entries: BTreeMap<String, String>,
}

fn split_key(key: &str) -> (Option<&str>, &str) {
    match key.split_once('.') {
        Some((check, k)) => (Some(check), k),
        None => (None, key),
    }
}

fn validate_key(key: &str) -> Result<()> {
    let (check, k) = split_key(key);
    if let Some(c) = check {
        if !CHECKS.contains(&c) {
            return Err(Error::Config(format!(
                "unknown check prefix `{c}` in key `{key}`"
            )));
        }
    }
    if !KEYS.contains(&k) {
        return Err(Error::Config(format!("unknown key `{key}`")));
    }
    Ok(())
}

impl ConfigSource {
    /// The built-in desk configuration.
    pub fn desk() -> Self {
        let mut s = ConfigSource::default();
        s.merge_text(DESK).expect("built-in configuration parses");
        s
    }

    /// Desk defaults overlaid with `text`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut s = ConfigSource::desk();
        s.merge_text(text)?;
        Ok(s)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.as_ref().display())))?;
        ConfigSource::parse(&text)
    }

    fn merge_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key = value, got `{raw}`", i + 1))
            })?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        validate_key(key)?;
        self.entries.insert(key.to_string(), value.to_string());
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn set_pair(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{pair}` is not key=value")))?;
        self.set(k.trim(), v.trim())
    }

    /// Effective value of `key` for `check`.
    pub fn get(&self, check: &str, key: &str) -> Option<&str> {
        self.entries
            .get(&format!("{check}.{key}"))
            .or_else(|| self.entries.get(key))
            .map(String::as_str)
    }

    /// Typed configuration for one check, with invariants enforced.
    pub fn resolve(&self, check: &str) -> Result<ExperimentConfig> {
        if !CHECKS.contains(&check) {
            return Err(Error::UnknownCheck(check.to_string()));
        }
        let mut snapshot = BTreeMap::new();
        for key in KEYS {
            if let Some(v) = self.get(check, key) {
                snapshot.insert(key.to_string(), v.to_string());
            }
        }
        let cfg = ExperimentConfig::from_map(check, snapshot)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Resolved settings for one check.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub check: String,
    pub dim: usize,
    pub n: usize,
    pub box_length: f64,
    pub mass: f64,
    pub coupling: f64,
    pub horizon: f64,
    pub dt: f64,
    pub modes: usize,
    pub memory_budget: usize,
    pub data_width: f64,
    pub amplitude: f64,
    pub amplitude_ladder: Vec<f64>,
    pub kinds: Vec<OperatorKind>,
    pub small_norm: f64,
    pub delta_ladder: Vec<f64>,
    pub circle_radius: f64,
    pub circle_nodes: usize,
    pub p_lo: f64,
    pub p_hi: f64,
    pub smoother_beta: f64,
    pub smoother_window: f64,
    pub smoother_samples: usize,
    pub scale_start: f64,
    pub scale_step: f64,
    pub rho_intervals: usize,
    pub probes: usize,
    pub sigma_ladder: Vec<f64>,
    pub nelson_dim: usize,
    pub nelson_lambda: f64,
    pub nelson_center: f64,
    pub nelson_width: f64,
    pub nelson_amplitude: f64,
    pub nelson_ladder: Vec<f64>,
    pub seed: u64,
    pub out: PathBuf,
    /// Time between stored trajectory samples.
    pub record_step: f64,
    pub cone_tolerance: f64,
    pub duality_slices: usize,
    snapshot: BTreeMap<String, String>,
}

fn required<'a>(map: &'a BTreeMap<String, String>, key: &str) -> Result<&'a str> {
    map.get(key)
        .map(String::as_str)
        .ok_or_else(|| Error::Config(format!("missing key `{key}`")))
}

fn scalar<T: FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<T> {
    let raw = required(map, key)?;
    raw.parse()
        .map_err(|_| Error::Config(format!("key `{key}`: cannot parse `{raw}`")))
}

fn scalar_or<T: FromStr>(map: &BTreeMap<String, String>, key: &str, default: T) -> Result<T> {
    if map.contains_key(key) {
        scalar(map, key)
    } else {
        Ok(default)
    }
}

fn list(map: &BTreeMap<String, String>, key: &str) -> Result<Vec<f64>> {
    let raw = required(map, key)?;
    let v: Vec<f64> = raw
        .split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| Error::Config(format!("key `{key}`: cannot parse `{s}`")))
        })
        .collect::<Result<_>>()?;
    if v.is_empty() {
        return Err(Error::Config(format!("key `{key}` is empty")));
    }
    Ok(v)
}

impl ExperimentConfig {
    fn from_map(check: &str, map: BTreeMap<String, String>) -> Result<Self> {
        let kinds = match required(&map, "operator")? {
            "both" => vec![OperatorKind::Wave, OperatorKind::Scattering],
            other => vec![OperatorKind::from_str(other).map_err(|e| Error::Config(e.to_string()))?],
        };
        let dt: f64 = scalar(&map, "dt")?;
        Ok(ExperimentConfig {
            check: check.to_string(),
            dim: scalar(&map, "dim")?,
            n: scalar(&map, "n")?,
            box_length: scalar(&map, "box_length")?,
            mass: scalar(&map, "mass")?,
            coupling: scalar(&map, "coupling")?,
            horizon: scalar(&map, "horizon")?,
            dt,
            modes: scalar(&map, "modes")?,
            memory_budget: scalar(&map, "memory_budget")?,
            data_width: scalar(&map, "data_width")?,
            amplitude: scalar(&map, "amplitude")?,
            amplitude_ladder: list(&map, "amplitude_ladder")?,
            kinds,
            small_norm: scalar(&map, "small_norm")?,
            delta_ladder: list(&map, "delta_ladder")?,
            circle_radius: scalar(&map, "circle_radius")?,
            circle_nodes: scalar(&map, "circle_nodes")?,
            p_lo: scalar(&map, "p_lo")?,
            p_hi: scalar(&map, "p_hi")?,
            smoother_beta: scalar(&map, "smoother_beta")?,
            smoother_window: scalar(&map, "smoother_window")?,
            smoother_samples: scalar(&map, "smoother_samples")?,
            scale_start: scalar(&map, "scale_start")?,
            scale_step: scalar(&map, "scale_step")?,
            rho_intervals: scalar(&map, "rho_intervals")?,
            probes: scalar(&map, "probes")?,
            sigma_ladder: list(&map, "sigma_ladder")?,
            nelson_dim: scalar(&map, "nelson_dim")?,
            nelson_lambda: scalar(&map, "nelson_lambda")?,
            nelson_center: scalar(&map, "nelson_center")?,
            nelson_width: scalar(&map, "nelson_width")?,
            nelson_amplitude: scalar(&map, "nelson_amplitude")?,
            nelson_ladder: list(&map, "nelson_ladder")?,
            seed: scalar(&map, "seed")?,
            out: PathBuf::from(required(&map, "out")?),
            record_step: scalar_or(&map, "record_step", dt.max(0.01))?,
            cone_tolerance: scalar_or(&map, "cone_tolerance", 1e-12)?,
            duality_slices: scalar_or(&map, "duality_slices", 41)?,
            snapshot: map,
        })
    }

    fn validate(&self) -> Result<()> {
        let positive = [
            ("box_length", self.box_length),
            ("mass", self.mass),
            ("dt", self.dt),
            ("data_width", self.data_width),
            ("record_step", self.record_step),
        ];
        for (k, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("`{k}` must be positive, got {v}")));
            }
        }
        if !(self.horizon >= 0.0) {
            return Err(Error::Config(format!(
                "`horizon` must be >= 0, got {}",
                self.horizon
            )));
        }
        if self.coupling < 0.0 {
            return Err(Error::Config("`coupling` must be >= 0 (defocusing)".into()));
        }
        self.grid().map_err(|e| Error::Config(e.to_string()))?;
        if SCATTERING_CHECKS.contains(&self.check.as_str()) {
            let w = self.ladder_support_width()?;
            if self.box_length < 2.0 * self.horizon + w {
                return Err(Error::Config(format!(
                    "no-wrap rule L >= 2T + w violated: L = {}, T = {}, w = {w:.3}",
                    self.box_length, self.horizon
                )));
            }
        }
        Ok(())
    }

    fn ladder_support_width(&self) -> Result<f64> {
        let g = self.grid()?;
        let amp = self
            .amplitude_ladder
            .iter()
            .copied()
            .fold(self.amplitude.abs(), |a, b| a.max(b.abs()));
        Ok(support_width(&base_cauchy(
            &g,
            self.data_width,
            amp.max(1.0),
        )))
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.dim, self.n, self.box_length, self.mass, self.coupling)
    }

    /// Resolved `key = value` pairs.
    pub fn snapshot(&self) -> &BTreeMap<String, String> {
        &self.snapshot
    }

    /// Stored-sample stride for trajectories.
    pub fn record_every(&self) -> usize {
        ((self.record_step / self.dt).round() as usize).max(1)
    }

    fn tangent_options(&self, dt: f64) -> TangentOptions {
        TangentOptions {
            modes: self.modes,
            horizon: self.horizon,
            dt,
            memory_budget: self.memory_budget,
        }
    }

    fn setup(&self, kind: OperatorKind) -> PairingSetup {
        PairingSetup {
            kind,
            horizon: self.horizon,
            dt: self.dt,
        }
    }

    fn smoother(&self) -> Result<BandLimitedSmoother> {
        make_smoother(
            self.p_lo,
            self.p_hi,
            self.mass,
            self.smoother_beta,
            self.smoother_window,
            self.smoother_samples,
        )
    }
}

/// Counter-based generator keyed by `(seed, check, index)`.
pub fn probe_rng(seed: u64, check: &str, index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&fnv1a(check.as_bytes()).to_le_bytes());
    key[16..24].copy_from_slice(&index.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

fn gaussian(x: [f64; 3], width: f64) -> f64 {
    (-(x[0] * x[0] + x[1] * x[1] + x[2] * x[2]) / (2.0 * width * width)).exp()
}

/// `phi = a g`, `pi = a x_1 g / 2` with `g` a Gaussian of the given width.
pub fn base_cauchy(g: &Grid, width: f64, amp: f64) -> CauchyData {
    let phi = g.sample(|x| amp * gaussian(x, width));
    let pi = g.sample(|x| 0.5 * amp * x[0] * gaussian(x, width));
    CauchyData::new(g, phi, pi).expect("sampled on the same grid")
}

pub fn base_amplitude(g: &Grid, width: f64, amp: f64) -> Result<Amplitude> {
    to_amplitude(&base_cauchy(g, width, amp))
}

/// Base profile rescaled to `H^1` norm `norm`.
pub fn direction_with_norm(g: &Grid, width: f64, norm: f64) -> Result<Amplitude> {
    let z = base_amplitude(g, width, 1.0)?;
    let n = z.norm(1.0)?;
    Ok(z.scaled(Complex64::new(norm / n, 0.0)))
}

/// Fixed complex test function used by every pairing.
pub fn probe_field(g: &Grid) -> ComplexField {
    g.sample_complex(|x| {
        let shifted = [x[0] - 0.5, x[1], x[2]];
        Complex64::new(
            gaussian(shifted, 0.5f64.sqrt()),
            0.3 * gaussian(x, 0.5f64.sqrt()),
        )
    })
}

/// Extra outputs of a check.
#[derive(Clone, Debug)]
pub enum Artifact {
    Csv(String, String),
    Field(String, Field),
}

fn csv(header: &str, rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut s = format!("{header}\n");
    for r in rows {
        s.push_str(&r.join(","));
        s.push('\n');
    }
    s
}

fn e(x: f64) -> String {
    format!("{x:.17e}")
}

fn check_evolve_conservation(cfg: &ExperimentConfig) -> Result<(ExperimentReport, Vec<Artifact>)> {
    let g = cfg.grid()?;
    let data = base_cauchy(&g, cfg.data_width, cfg.amplitude);
    let e0 = energy(&data)?.total;
    let drift = |dt: f64| -> Result<(f64, Vec<(f64, f64)>)> {
        let every = ((cfg.record_step / dt).round() as usize).max(1);
        let traj = evolve_recorded(&data, 0.0, cfg.horizon, dt, every)?;
        let mut worst = 0.0f64;
        let mut series = Vec::with_capacity(traj.times.len());
        for (t, s) in traj.times.iter().zip(&traj.states) {
            let rel = (energy(s)?.total - e0).abs() / e0.abs();
            worst = worst.max(rel);
            series.push((*t, rel));
        }
        Ok((worst, series))
    };
    let (d1, series) = drift(cfg.dt)?;
    let (d2, _) = drift(0.5 * cfg.dt)?;
    let ratio = d1 / d2;
    let mut r = ExperimentReport::new("evolve-conservation");
    r.measure("energy", e0)
        .measure("drift", d1)
        .measure("drift_half_dt", d2)
        .measure("halving_ratio", finite_or_string(ratio));
    r.tolerate("drift", 1e-8)
        .tolerate("halving_ratio", [3.0, 5.0]);
    r.pass = d1 < 1e-8 && (3.0..=5.0).contains(&ratio);
    let table = csv(
        "t,relative_drift",
        series.iter().map(|(t, d)| vec![e(*t), e(*d)]),
    );
    Ok((
        r,
        vec![Artifact::Csv("evolve-conservation.csv".into(), table)],
    ))
}

fn check_tangent_symplectic(cfg: &ExperimentConfig) -> Result<(ExperimentReport, Vec<Artifact>)> {
    let g = cfg.grid()?;
    let mut rows = Vec::new();
    let mut artifacts = Vec::new();
    let mut worst = 0.0f64;
    for (ia, &amp) in cfg.amplitude_ladder.iter().enumerate() {
        let z = base_amplitude(&g, cfg.data_width, amp)?;
        for dt in [cfg.dt, 2.0 * cfg.dt] {
            for &kind in &cfg.kinds {
                let m = tangent_matrix(kind, &z, &cfg.tangent_options(dt))?;
                let defect = m.symplectic_defect();
                worst = worst.max(defect);
                rows.push(vec![kind.name().to_string(), e(amp), e(dt), e(defect)]);
                if ia == 0 && dt == cfg.dt {
                    artifacts.push(Artifact::Field(
                        format!("tangent-{}.fld", kind.name()),
                        Field::Tangent(m),
                    ));
                }
            }
        }
    }
    let mut r = ExperimentReport::new("tangent-symplectic");
    r.measure("max_symplectic_defect", worst)
        .measure("runs", rows.len());
    r.tolerate("max_symplectic_defect", 1e-9);
    r.pass = worst < 1e-9;
    artifacts.push(Artifact::Csv(
        "tangent-symplectic.csv".into(),
        csv("kind,amplitude,dt,defect", rows),
    ));
    Ok((r, artifacts))
}

fn check_j_commutator(cfg: &ExperimentConfig) -> Result<(ExperimentReport, Vec<Artifact>)> {
    let g = cfg.grid()?;
    let free = g.with_coupling(0.0)?;
    let mut r = ExperimentReport::new("j-commutator-scan");
    let mut rows = Vec::new();
    let mut pass = true;
    let mut worst_free = 0.0f64;
    for &kind in &cfg.kinds {
        let opts = cfg.tangent_options(cfg.dt);
        let mut values = Vec::new();
        for &amp in &cfg.amplitude_ladder {
            let m = tangent_matrix(kind, &base_amplitude(&g, cfg.data_width, amp)?, &opts)?;
            values.push(m.j_commutator());
            rows.push(vec![
                kind.name().to_string(),
                e(amp),
                e(*values.last().unwrap()),
            ]);
        }
        let m0 = tangent_matrix(
            kind,
            &base_amplitude(&free, cfg.data_width, cfg.amplitude_ladder[0])?,
            &opts,
        )?;
        let c0 = m0.j_commutator();
        worst_free = worst_free.max(c0);
        let ok = if cfg.coupling == 0.0 {
            values.iter().all(|&c| c < 1e-10)
        } else {
            values.windows(2).all(|w| w[1] < w[0])
        };
        pass &= ok;
        r.measure(&format!("{}.commutators", kind.name()), &values)
            .measure(&format!("{}.monotone", kind.name()), ok);
    }
    r.param("amplitude_ladder", &cfg.amplitude_ladder);
    r.measure("free_commutator", worst_free);
    r.tolerate("free_commutator", 1e-10);
    r.pass = pass && worst_free < 1e-10;
    Ok((
        r,
        vec![Artifact::Csv(
            "j-commutator-scan.csv".into(),
            csv("kind,amplitude,commutator", rows),
        )],
    ))
}

fn check_cr_scan(cfg: &ExperimentConfig) -> Result<(ExperimentReport, Vec<Artifact>)> {
    let g = cfg.grid()?;
    let spec = DirectionSet::line(
        direction_with_norm(&g, cfg.data_width, 1.0)?,
        probe_field(&g),
    )?;
    let alpha0 = [Complex64::new(cfg.small_norm, 0.0)];
    let mut r = ExperimentReport::new("cr-scan");
    r.param("alpha0", cfg.small_norm)
        .param("deltas", &cfg.delta_ladder);
    let mut rows = Vec::new();
    let mut pass = true;
    for &kind in &cfg.kinds {
        let samples = cr_scan(&spec, &cfg.setup(kind), &alpha0, 0, &cfg.delta_ladder)?;
        let ratios: Vec<f64> = samples.iter().map(|s| s.ratio()).collect();
        let best = ratios.iter().copied().fold(f64::INFINITY, f64::min);
        for s in &samples {
            rows.push(vec![
                kind.name().to_string(),
                e(s.delta),
                e(s.anti.re),
                e(s.anti.im),
                e(s.holo.re),
                e(s.holo.im),
                e(s.ratio()),
            ]);
        }
        r.measure(&format!("{}.ratios", kind.name()), &ratios)
            .measure(&format!("{}.ratio", kind.name()), finite_or_string(best));
        pass &= best < 1e-3;
    }
    r.tolerate("ratio", 1e-3);
    r.pass = pass;
    let table = csv("kind,delta,re_anti,im_anti,re_holo,im_holo,ratio", rows);
    Ok((r, vec![Artifact::Csv("cr-scan.csv".into(), table)]))
}

fn check_taylor_circle(cfg: &ExperimentConfig) -> Result<(ExperimentReport, Vec<Artifact>)> {
    let g = cfg.grid()?;
    let spec = DirectionSet::line(
        direction_with_norm(&g, cfg.data_width, 1.0)?,
        probe_field(&g),
    )?;
    let (radius, nodes) = (cfg.circle_radius, cfg.circle_nodes);
    let mut r = ExperimentReport::new("taylor-circle");
    r.param("radius", radius).param("nodes", nodes);
    let mut rows = Vec::new();
    let mut pass = true;
    for &kind in &cfg.kinds {
        let setup = cfg.setup(kind);
        let values = circle_samples(&spec, &setup, radius, nodes)?;
        for (q, v) in values.iter().enumerate() {
            let a =
                Complex64::from_polar(radius, 2.0 * std::f64::consts::PI * q as f64 / nodes as f64);
            rows.push(vec![
                kind.name().to_string(),
                e(a.re),
                e(a.im),
                e(v.re),
                e(v.im),
            ]);
        }
        let c = taylor_coefficient(&spec, &setup, 3, radius, nodes)?;
        let refined = taylor_coefficient_refined(&spec, &setup, 3, radius, nodes)?;
        let polar = cubic_coefficient_polarization(&spec, &setup, 0.5 * radius)?;
        let gap = (refined - polar).norm() / polar.norm().max(1e-300);
        let name = kind.name();
        r.measure(&format!("{name}.even_mass"), c.even_mass)
            .measure(&format!("{name}.residual_mass"), c.residual_mass)
            .measure(&format!("{name}.c3"), [refined.re, refined.im])
            .measure(&format!("{name}.c3_polarization"), [polar.re, polar.im])
            .measure(&format!("{name}.c3_gap"), gap);
        pass &= c.even_mass < 1e-8 && gap < 1e-3;
    }
    r.tolerate("even_mass", 1e-8).tolerate("c3_gap", 1e-3);
    r.pass = pass;
    let table = csv("kind,re_alpha,im_alpha,re_G,im_G", rows);
    Ok((r, vec![Artifact::Csv("taylor-circle.csv".into(), table)]))
}

fn check_truncation_poly(cfg: &ExperimentConfig) -> Result<(ExperimentReport, Vec<Artifact>)> {
    let g = cfg.grid()?;
    let f = cfg.smoother()?;
    let top = cfg.scale_start + (f.degree + 2) as f64 * cfg.scale_step;
    let spec = DirectionSet::line(
        direction_with_norm(&g, cfg.data_width, cfg.small_norm / top)?,
        probe_field(&g),
    )?;
    let mut r = ExperimentReport::new("truncation-poly");
    r.param("top_norm", cfg.small_norm);
    let mut rows = Vec::new();
    let mut pass = true;
    for &kind in &cfg.kinds {
        let sub = polynomiality_test(&f, &spec, &cfg.setup(kind), cfg.scale_start, cfg.scale_step)?;
        pass &= sub.pass;
        if let (Some(s), Some(re), Some(im)) = (
            sub.measured.get("scales").and_then(|v| v.as_array()),
            sub.measured.get("re").and_then(|v| v.as_array()),
            sub.measured.get("im").and_then(|v| v.as_array()),
        ) {
            for ((s, a), b) in s.iter().zip(re).zip(im) {
                rows.push(vec![
                    kind.name().to_string(),
                    s.to_string(),
                    a.to_string(),
                    b.to_string(),
                ]);
            }
        }
        r.merge(kind.name(), &sub);
    }
    r.tolerate("ratio", 1e-3);
    r.pass = pass;
    Ok((
        r,
        vec![Artifact::Csv(
            "truncation-poly.csv".into(),
            csv("kind,scale,re_G,im_G", rows),
        )],
    ))
}

fn check_multiplier(cfg: &ExperimentConfig) -> Result<(ExperimentReport, Vec<Artifact>)> {
    let g = cfg.grid()?;
    let f = cfg.smoother()?;
    let mut r = ExperimentReport::new("multiplier-vanish");
    let at = multiplier_vanishing_check(&f, &g, f.degree);
    r.merge("order_n", &at);
    r.pass = at.pass;
    if f.degree > 1 {
        let below = multiplier_vanishing_check(&f, &g, f.degree - 1);
        r.merge("order_n_minus_1", &below);
        r.pass &= below.pass;
    }
    r.tolerate("max_value", 0.0);
    Ok((r, Vec::new()))
}

/// `U0(-t) [[0, 0], [-g, 0]] U0(t)` for a single mode of frequency `mu`.
fn single_mode_generator(mu: f64, gt: f64, t: f64) -> DMatrix<f64> {
    let (s, c) = (mu * t).sin_cos();
    let u = |sgn: f64| DMatrix::from_row_slice(2, 2, &[c, sgn * s, -sgn * s, c]);
    let kick = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, -gt, 0.0]);
    u(-1.0) * kick * u(1.0)
}

fn check_cayley(cfg: &ExperimentConfig) -> Result<(ExperimentReport, Vec<Artifact>)> {
    let lambda = cfg.coupling;
    let q = cfg.rho_intervals;
    let mut r = ExperimentReport::new("cayley-integral");
    r.param("rho_intervals", q).param("coupling", lambda);
    let mut pass = true;

    // Scalar generator (1 - t^2)^2 on [-1, 1]: nu = 16/15.
    let scalar = GeneratorSamples::from_fn(-1.0, 1.0, 1001, |t| {
        DMatrix::from_element(1, 1, (1.0 - t * t).powi(2))
    })?;
    let nu = 16.0 / 15.0;
    for kind in [OperatorKind::Wave, OperatorKind::Scattering] {
        let total = if kind == OperatorKind::Wave {
            0.5 * nu
        } else {
            nu
        };
        let exact = (lambda * total / 2.0).tanh();
        let (lhs, rhs) = cayley_integral_sides(&scalar, lambda, kind, q)?;
        let err = (rhs[(0, 0)] - exact).abs();
        r.measure(&format!("scalar.{}.error", kind.name()), err)
            .measure(
                &format!("scalar.{}.lhs_error", kind.name()),
                (lhs[(0, 0)] - exact).abs(),
            );
        pass &= err < 1e-8;
    }

    // Random single-mode cone generator scaled to N(A) = 1 / (|lambda| + 1).
    let mut rng = probe_rng(cfg.seed, "cayley-integral", 0);
    let mu = rng.gen_range(1.0..2.0);
    let bumps: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.gen_range(0.2..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(0.3..0.8),
            )
        })
        .collect();
    let profile = |t: f64| -> f64 {
        bumps
            .iter()
            .map(|(a, c, s)| a * (-((t - c) / s).powi(2)).exp())
            .sum()
    };
    let raw = GeneratorSamples::from_fn(-2.0, 2.0, 2001, |t| {
        single_mode_generator(mu, profile(t), t)
    })?;
    let scale = 1.0 / ((lambda.abs() + 1.0) * raw.norm_integral.max(1e-300));
    let random = GeneratorSamples::from_fn(-2.0, 2.0, 2001, |t| {
        single_mode_generator(mu, scale * profile(t), t)
    })?;
    let residual = |kind: OperatorKind, q: usize| -> Result<f64> {
        let (lhs, rhs) = cayley_integral_sides(&random, lambda, kind, q)?;
        Ok((lhs - rhs).norm())
    };
    for kind in [OperatorKind::Wave, OperatorKind::Scattering] {
        let res = residual(kind, q)?;
        let (r16, r32) = (residual(kind, 16)?, residual(kind, 32)?);
        let order = r16 / r32;
        let name = kind.name();
        r.measure(&format!("random.{name}.residual"), res).measure(
            &format!("random.{name}.refinement_ratio"),
            finite_or_string(order),
        );
        // Simpson: ratio 16 under halving, or both residuals at roundoff.
        let converging = (12.0..=20.0).contains(&order) || r32 < 1e-13;
        pass &= res < 1e-6 && converging;
    }
    r.measure("random.mu", mu)
        .measure("random.norm_integral", random.norm_integral);

    // Interaction-picture generator of a small lattice solution.
    let g = cfg.grid()?;
    let z = base_amplitude(&g, cfg.data_width, cfg.amplitude)?;
    let base = operator_trajectory(OperatorKind::Scattering, &z, cfg.horizon, cfg.dt, 1)?;
    let a = interaction_picture_generator(&base, cfg.modes)?;
    r.measure("lattice.norm_integral", a.norm_integral);
    if lambda * a.norm_integral < 2.0 {
        for kind in [OperatorKind::Wave, OperatorKind::Scattering] {
            let (lhs, rhs) = cayley_integral_sides(&a, lambda, kind, q)?;
            let d = (&lhs - &rhs).norm();
            r.measure(&format!("lattice.{}.residual", kind.name()), d);
            pass &= d < 1e-6;
        }
    } else {
        r.measure("lattice.skipped", "lambda N(A) >= 2");
    }
    r.tolerate("scalar.error", 1e-8)
        .tolerate("random.residual", 1e-6)
        .tolerate("random.refinement_ratio", [12.0, 20.0]);
    r.pass = pass;
    Ok((r, Vec::new()))
}

fn check_cone(cfg: &ExperimentConfig) -> Result<(ExperimentReport, Vec<Artifact>)> {
    let g = cfg.grid()?;
    let z = base_amplitude(&g, cfg.data_width, cfg.amplitude)?;
    let ds = tangent_matrix(OperatorKind::Scattering, &z, &cfg.tangent_options(cfg.dt))?;
    let seed = probe_rng(cfg.seed, "cone-positivity", 0).next_u64();
    let diag = ds.diagnostics(cfg.probes, seed)?;
    let min_probe = diag.scalar("cone_min_probe").unwrap_or(f64::NAN);

    let base = operator_trajectory(
        OperatorKind::Scattering,
        &z,
        cfg.horizon,
        cfg.dt,
        cfg.record_every(),
    )?;
    let a = interaction_picture_generator(&base, cfg.modes)?;
    let om = omega_matrix(cfg.modes);
    let mut worst = f64::INFINITY;
    let mut worst_scaled = f64::INFINITY;
    for m in &a.matrices {
        let q = m.transpose() * &om;
        let sym = (&q + q.transpose()) * 0.5;
        let min = SymmetricEigen::new(sym).eigenvalues.min();
        worst = worst.min(min);
        let scale = m.norm().max(1e-300);
        worst_scaled = worst_scaled.min(min / scale);
    }
    let mut r = ExperimentReport::new("cone-positivity");
    r.param("amplitude", cfg.amplitude)
        .param("probes", cfg.probes);
    r.merge("ds", &diag);
    r.measure("cone_min_probe", finite_or_string(min_probe))
        .measure("generator_min_eigenvalue", worst)
        .measure("generator_min_relative", worst_scaled)
        .measure("generator_samples", a.matrices.len());
    r.tolerate("cone_min_probe", "> 0")
        .tolerate("generator_min_relative", -cfg.cone_tolerance);
    r.pass = min_probe > 0.0 && worst_scaled >= -cfg.cone_tolerance;
    Ok((r, Vec::new()))
}

fn check_nelson(cfg: &ExperimentConfig) -> Result<(ExperimentReport, Vec<Artifact>)> {
    let spec = RadialAmplitudeSpec::gaussian(
        cfg.nelson_dim,
        cfg.mass,
        cfg.nelson_amplitude,
        cfg.nelson_center,
        cfg.nelson_width,
    )?;
    let r = nelson_limit_check(&spec, cfg.nelson_lambda, &cfg.nelson_ladder)?;
    let rows = nelson_ladder(&spec, cfg.nelson_lambda, &cfg.nelson_ladder)?;
    Ok((
        r,
        vec![Artifact::Csv("nelson-ladder.csv".into(), ladder_csv(&rows))],
    ))
}

fn check_mollifier(cfg: &ExperimentConfig) -> Result<(ExperimentReport, Vec<Artifact>)> {
    let g = cfg.grid()?;
    let data = base_cauchy(&g, cfg.data_width, cfg.amplitude);
    let mut extended = cfg.sigma_ladder.clone();
    extended.push(2.0 * extended.last().copied().unwrap_or(1.0));
    let s_min = cfg
        .sigma_ladder
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    let traj = evolve_window(&data, 1.0 / s_min + 10.0 * cfg.dt, cfg.dt)?;
    let h = probe_field(&g);
    let base = mollifier_limit_check(&traj, &h, &cfg.sigma_ladder)?;
    let ext = mollifier_limit_check(&traj, &h, &extended)?;
    let c = base.scalar("fitted_c").unwrap_or(f64::NAN);
    let c_ext = ext.scalar("fitted_c").unwrap_or(f64::NAN);
    let drift = (c_ext - c).abs() / c.abs().max(1e-300);
    let mut r = ExperimentReport::new("mollifier-limit");
    r.merge("ladder", &base);
    r.merge("extended", &ext);
    r.measure("c_drift", drift);
    r.tolerate("c_drift", 0.1);
    r.pass = base.pass && ext.pass && drift <= 0.1;
    Ok((r, Vec::new()))
}

fn check_smallness(cfg: &ExperimentConfig) -> Result<(ExperimentReport, Vec<Artifact>)> {
    let g = cfg.grid()?;
    let z = base_amplitude(&g, cfg.data_width, cfg.amplitude)?;
    let traj = operator_trajectory(
        OperatorKind::Scattering,
        &z,
        cfg.horizon,
        cfg.dt,
        cfg.record_every(),
    )?;
    let (integral, ok) = smallness_monitor(&traj);
    let mut r = ExperimentReport::new("smallness");
    r.param("amplitude", cfg.amplitude);
    r.measure("sup_norm_square_integral", integral)
        .measure("threshold", 2.0 * cfg.mass);
    r.tolerate(
        "sup_norm_square_integral",
        format!("< 2m = {}", 2.0 * cfg.mass),
    );
    r.pass = ok;
    Ok((r, Vec::new()))
}

fn check_duality(cfg: &ExperimentConfig) -> Result<(ExperimentReport, Vec<Artifact>)> {
    let g = cfg.grid()?;
    let mut rng = probe_rng(cfg.seed, "hyperboloid-duality", 0);
    let noise = |rng: &mut ChaCha8Rng| {
        ComplexField(
            (0..g.len())
                .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                .collect(),
        )
    };
    let v = Amplitude::new(&g, noise(&mut rng))?;
    let slices = (0..cfg.duality_slices).map(|_| noise(&mut rng)).collect();
    let f = SpaceTimeSamples {
        grid: g.clone(),
        t0: -1.0,
        dt: 2.0 / (cfg.duality_slices.max(2) - 1) as f64,
        slices,
    };
    let (lhs, rhs) = hyperboloid_duality(&v, &f)?;
    let rel = (lhs - rhs).norm() / rhs.norm().max(1e-300);
    let mut r = ExperimentReport::new("hyperboloid-duality");
    r.param("slices", cfg.duality_slices);
    r.measure("lhs", [lhs.re, lhs.im])
        .measure("rhs", [rhs.re, rhs.im])
        .measure("relative_error", rel);
    r.tolerate("relative_error", 1e-8);
    r.pass = rel < 1e-8;
    Ok((r, Vec::new()))
}

/// Runs `cfg.check` without touching the file system.
pub fn execute(cfg: &ExperimentConfig) -> Result<(ExperimentReport, Vec<Artifact>)> {
    let start = Instant::now();
    let (mut r, artifacts) = match cfg.check.as_str() {
        "evolve-conservation" => check_evolve_conservation(cfg),
        "tangent-symplectic" => check_tangent_symplectic(cfg),
        "j-commutator-scan" => check_j_commutator(cfg),
        "cr-scan" => check_cr_scan(cfg),
        "taylor-circle" => check_taylor_circle(cfg),
        "truncation-poly" => check_truncation_poly(cfg),
        "multiplier-vanish" => check_multiplier(cfg),
        "cayley-integral" => check_cayley(cfg),
        "cone-positivity" => check_cone(cfg),
        "nelson-ladder" => check_nelson(cfg),
        "mollifier-limit" => check_mollifier(cfg),
        "smallness" => check_smallness(cfg),
        "hyperboloid-duality" => check_duality(cfg),
        other => Err(Error::UnknownCheck(other.to_string())),
    }?;
    r.param("config", cfg.snapshot());
    r.wall_time = Some(start.elapsed().as_secs_f64());
    Ok((r, artifacts))
}

/// Writes `<check>.json` and the artifacts into `dir`.
pub fn write_outputs(dir: &Path, report: &ExperimentReport, artifacts: &[Artifact]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(
        dir.join(format!("{}.json", report.check)),
        report.to_json()? + "\n",
    )?;
    for a in artifacts {
        match a {
            Artifact::Csv(name, text) => std::fs::write(dir.join(name), text)?,
            Artifact::Field(name, field) => dump_field(dir.join(name), field)?,
        }
    }
    Ok(())
}

/// Resolves, executes and persists one check.
pub fn run(source: &ConfigSource, check: &str) -> Result<ExperimentReport> {
    let cfg = source.resolve(check)?;
    let (report, artifacts) = execute(&cfg)?;
    write_outputs(&cfg.out, &report, &artifacts)?;
    Ok(report)
}

/// Runs several checks on `workers` threads; results keep the input order.
pub fn run_many(
    source: &ConfigSource,
    checks: &[&str],
    workers: usize,
) -> Vec<Result<ExperimentReport>> {
    let workers = workers.clamp(1, checks.len().max(1));
    let next = std::sync::atomic::AtomicUsize::new(0);
    let slots: Vec<std::sync::Mutex<Option<Result<ExperimentReport>>>> =
        checks.iter().map(|_| std::sync::Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                if i >= checks.len() {
                    break;
                }
                let out = run(source, checks[i]);
                *slots[i].lock().expect("slot lock") = Some(out);
            });
        }
    });
    slots
        .into_iter()
        .map(|s| {
            s.into_inner()
                .expect("slot lock")
                .expect("every slot filled")
        })
        .collect()
}
