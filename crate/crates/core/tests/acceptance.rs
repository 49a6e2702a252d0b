//! Desk-scale acceptance run. One PASS/FAIL line per criterion.
//!
//! Criteria listed in `REPORTED_ONLY` are printed but do not fail the
//! target; every other criterion is asserted.

use std::time::Instant;

use kgscatter::harness::{base_amplitude, execute, ConfigSource};
use kgscatter::phase_space::to_amplitude;
use kgscatter::scattering::{
    operator_amplitude, tangent_matrix, wave_operator, OperatorKind, TangentOptions,
};
use kgscatter::{ExperimentReport, Grid, Result};
use nalgebra::DMatrix;
use num_complex::Complex64;

const REPORTED_ONLY: [usize; 3] = [2, 5, 6];

type Criterion<'a> = (usize, &'static str, Box<dyn Fn() -> Result<Outcome> + 'a>);

struct Outcome {
    pass: bool,
    detail: String,
}

fn run_check(source: &ConfigSource, check: &str) -> Result<ExperimentReport> {
    let cfg = source.resolve(check)?;
    Ok(execute(&cfg)?.0)
}

fn num(r: &ExperimentReport, key: &str) -> String {
    match r.measured.get(key) {
        Some(v) => match v.as_f64() {
            Some(x) => format!("{key}={x:.3e}"),
            None => format!("{key}={v}"),
        },
        None => format!("{key}=?"),
    }
}

fn from_checks(source: &ConfigSource, checks: &[(&str, &[&str])]) -> Result<Outcome> {
    let mut pass = true;
    let mut parts = Vec::new();
    for (check, keys) in checks {
        let r = run_check(source, check)?;
        pass &= r.pass;
        let shown: Vec<String> = keys.iter().map(|k| num(&r, k)).collect();
        parts.push(format!(
            "{check}[{}] {}",
            if r.pass { "ok" } else { "fail" },
            shown.join(" ")
        ));
    }
    Ok(Outcome {
        pass,
        detail: parts.join("; "),
    })
}

fn free_identity() -> Result<Outcome> {
    let g = Grid::new(1, 2048, 128.0, 1.0, 0.0)?;
    let z = base_amplitude(&g, 1.0, 0.5)?;
    let (horizon, dt) = (10.0, 1e-3);
    let w = to_amplitude(&wave_operator(&z, horizon, dt)?)?;
    let s = operator_amplitude(OperatorKind::Scattering, &z, horizon, dt)?;
    let err_w = w.axpy(Complex64::new(-1.0, 0.0), &z)?.norm(0.5)?;
    let err_s = s.axpy(Complex64::new(-1.0, 0.0), &z)?.norm(0.5)?;
    let opts = TangentOptions {
        horizon,
        dt,
        ..TangentOptions::default()
    };
    let mut tangent = 0.0f64;
    for kind in [OperatorKind::Wave, OperatorKind::Scattering] {
        let m = tangent_matrix(kind, &z, &opts)?;
        let id = DMatrix::<f64>::identity(m.entries.nrows(), m.entries.ncols());
        tangent = tangent.max((&m.entries - id).amax());
    }
    Ok(Outcome {
        pass: err_w < 1e-10 && err_s < 1e-10 && tangent < 1e-12,
        detail: format!("W_err={err_w:.3e} S_err={err_s:.3e} tangent_max={tangent:.3e}"),
    })
}

fn timed(limit: f64, f: impl FnOnce() -> Result<Outcome>) -> Result<Outcome> {
    let start = Instant::now();
    let mut o = f()?;
    let secs = start.elapsed().as_secs_f64();
    o.detail.push_str(&format!(" runtime={secs:.1}s"));
    o.pass &= secs < limit;
    Ok(o)
}

fn main() {
    let source = ConfigSource::desk();
    let criteria: Vec<Criterion> = vec![
        (
            1,
            "free-theory identity",
            Box::new(|| timed(60.0, free_identity)),
        ),
        (
            2,
            "energy conservation",
            Box::new(|| {
                from_checks(
                    &source,
                    &[("evolve-conservation", &["drift", "halving_ratio"])],
                )
            }),
        ),
        (
            3,
            "symplectic isometry",
            Box::new(|| {
                from_checks(
                    &source,
                    &[("tangent-symplectic", &["max_symplectic_defect"])],
                )
            }),
        ),
        (
            4,
            "J-commutation trend",
            Box::new(|| {
                from_checks(
                    &source,
                    &[(
                        "j-commutator-scan",
                        &["wave.monotone", "scattering.monotone", "free_commutator"],
                    )],
                )
            }),
        ),
        (
            5,
            "antiholomorphy",
            Box::new(|| {
                from_checks(
                    &source,
                    &[
                        ("cr-scan", &["wave.ratio", "scattering.ratio"]),
                        ("taylor-circle", &["wave.even_mass", "scattering.even_mass"]),
                    ],
                )
            }),
        ),
        (
            6,
            "polynomial truncation",
            Box::new(|| {
                from_checks(
                    &source,
                    &[
                        ("truncation-poly", &["wave.ratio", "scattering.ratio"]),
                        ("multiplier-vanish", &["order_n.max_value"]),
                    ],
                )
            }),
        ),
        (
            7,
            "Cayley integral identities",
            Box::new(|| {
                from_checks(
                    &source,
                    &[(
                        "cayley-integral",
                        &[
                            "scalar.scattering.error",
                            "random.scattering.residual",
                            "random.scattering.refinement_ratio",
                        ],
                    )],
                )
            }),
        ),
        (
            8,
            "cone positivity",
            Box::new(|| {
                from_checks(
                    &source,
                    &[(
                        "cone-positivity",
                        &["cone_min_probe", "generator_min_relative"],
                    )],
                )
            }),
        ),
        (
            9,
            "Nelson law",
            Box::new(|| {
                timed(300.0, || {
                    from_checks(&source, &[("nelson-ladder", &["slope", "monotone"])])
                })
            }),
        ),
        (
            10,
            "mollifier limit and duality",
            Box::new(|| {
                from_checks(
                    &source,
                    &[
                        (
                            "mollifier-limit",
                            &["ladder.slope", "ladder.fitted_c", "c_drift"],
                        ),
                        ("hyperboloid-duality", &["relative_error"]),
                    ],
                )
            }),
        ),
    ];

    let mut asserted_failures = Vec::new();
    for (id, name, run) in &criteria {
        let (pass, detail) = match run() {
            Ok(o) => (o.pass, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        let note = if REPORTED_ONLY.contains(id) && !pass {
            " (reported only)"
        } else {
            ""
        };
        println!(
            "{} criterion {id:>2} {name}: {detail}{note}",
            if pass { "PASS" } else { "FAIL" }
        );
        if !pass && !REPORTED_ONLY.contains(id) {
            asserted_failures.push(*id);
        }
    }
    if !asserted_failures.is_empty() {
        eprintln!("asserted criteria failed: {asserted_failures:?}");
        std::process::exit(1);
    }
}
