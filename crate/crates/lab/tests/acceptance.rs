//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

use std::f64::consts::TAU;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use korteweg_core::dynamics::{ek_rhs, ek_rhs_conservative};
use korteweg_core::{
    set2_check, BumpSpec, CapillarityLaw, EnergyLaw, FluidState, Material, ScalarField, Set2Failure, TorusGrid,
    VectorField,
};
use korteweg_lab::{config, parallel, run_study, Check, OutputDir, Study};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

struct Outcome {
    passed: bool,
    detail: String,
}

impl Outcome {
    fn from_checks(checks: &[Check]) -> Self {
        let failed: Vec<_> = checks.iter().filter(|c| !c.passed).collect();
        let shown = if failed.is_empty() { checks.iter().collect() } else { failed };
        Self {
            passed: checks.iter().all(|c| c.passed) && !checks.is_empty(),
            detail: shown.iter().map(|c| format!("{}: {}", c.name, c.detail)).collect::<Vec<_>>().join("; "),
        }
    }

    fn error(e: impl std::fmt::Display) -> Self {
        Self {
            passed: false,
            detail: format!("error: {e}"),
        }
    }
}

fn study_checks(study: Study, file: &str, scratch: &Path) -> Result<Vec<Check>, String> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(file);
    let cfg = config::load(&path, &[]).map_err(|e| e.to_string())?;
    let out = OutputDir::prepare(scratch.join(file.trim_end_matches(".toml")), false).map_err(|e| e.to_string())?;
    let report = run_study(study, &cfg, &out, parallel::resolve_jobs(None)).map_err(|e| e.to_string())?;
    Ok(report.checks())
}

fn study(study: Study, file: &str, scratch: &Path, keep: impl Fn(&Check) -> bool) -> Outcome {
    match study_checks(study, file, scratch) {
        Ok(checks) => Outcome::from_checks(&checks.into_iter().filter(|c| keep(c)).collect::<Vec<_>>()),
        Err(e) => Outcome::error(e),
    }
}

fn within(mut outcome: Outcome, elapsed: Duration, limit: Duration) -> Outcome {
    if elapsed > limit {
        outcome.passed = false;
        outcome.detail = format!("{}; took {:.1} s > {} s", outcome.detail, elapsed.as_secs_f64(), limit.as_secs());
    }
    outcome
}

fn random_field(grid: &TorusGrid, rng: &mut StdRng, mean: f64, amp: f64) -> ScalarField {
    let modes: Vec<(f64, f64, f64)> = (0..rng.gen_range(1..4))
        .map(|_| (rng.gen_range(-amp..amp), rng.gen_range(0.0..TAU), rng.gen_range(0.0..TAU)))
        .collect();
    ScalarField::from_fn(grid, |x| {
        mean + modes
            .iter()
            .enumerate()
            .map(|(k, &(a, ph, py))| {
                let envelope = x.get(1).map_or(1.0, |y| 1.0 + 0.5 * (TAU * y + py).cos());
                a * (TAU * (k + 1) as f64 * x[0] + ph).sin() * envelope
            })
            .sum::<f64>()
    })
}

fn materials() -> Vec<Material> {
    let eps = 0.1;
    let bumped = EnergyLaw::new(1.0, 2.0, Some(BumpSpec::new(0.2, 0.5, 1.5).unwrap())).unwrap();
    vec![
        Material::new(bumped, CapillarityLaw::Constant(0.5), eps).unwrap(),
        Material::new(EnergyLaw::gamma_law(2.0, 1.4).unwrap(), CapillarityLaw::Qhd, eps).unwrap(),
        Material::new(
            EnergyLaw::gamma_law(1.0, 3.0).unwrap(),
            CapillarityLaw::Power {
                coefficient: 0.3,
                exponent: 0.5,
            },
            eps,
        )
        .unwrap(),
    ]
}

/// Conservative and primitive momentum equations on 100 random states, and
/// the chemical potential against a Gateaux difference of the energy.
fn forms_and_gateaux() -> Result<Outcome, korteweg_core::Error> {
    let mut rng = StdRng::seed_from_u64(0x5eed);
    let materials = materials();
    let mut worst_form = 0.0f64;
    for i in 0..100 {
        let dim = 1 + i % 2;
        let grid = TorusGrid::unit(dim, 128)?;
        let rho = random_field(&grid, &mut rng, 1.0, 0.08);
        let m1 = random_field(&grid, &mut rng, 0.1, 0.3);
        let m = if dim == 1 {
            VectorField::from_scalars(vec![m1])?
        } else {
            VectorField::from_scalars(vec![m1.clone(), m1.shifted(&[3, 5])])?
        };
        let state = FluidState::new(rho, m)?;
        let material = &materials[i % materials.len()];
        let a = ek_rhs(&state, material)?;
        let b = ek_rhs_conservative(&state, material)?;
        worst_form = worst_form.max((&a.m - &b.m).max_abs());
    }

    let grid = TorusGrid::unit(1, 32)?;
    let mut worst_gateaux = 0.0f64;
    for i in 0..100 {
        let material = &materials[i % materials.len()];
        let rho = random_field(&grid, &mut rng, 1.0, 0.08);
        let phi = random_field(&grid, &mut rng, 0.0, 1.0);
        let delta = 1e-5;
        let plus = material.potential_energy(&(&rho + &(&phi * delta)))?;
        let minus = material.potential_energy(&(&rho - &(&phi * delta)))?;
        let fd = (plus - minus) / (2.0 * delta);
        let exact = (&material.variational_derivative(&rho)? * &phi).integrate()?;
        let scale = exact.abs().max(phi.l2_norm() * 1e-3);
        worst_gateaux = worst_gateaux.max((fd - exact).abs() / scale);
    }
    Ok(Outcome {
        passed: worst_form <= 1e-8 && worst_gateaux <= 1e-6,
        detail: format!("max form difference {worst_form:.3e} <= 1e-8; max Gateaux relative error {worst_gateaux:.3e} <= 1e-6"),
    })
}

fn set2_validator() -> Result<Outcome, korteweg_core::Error> {
    let law = EnergyLaw::gamma_law(1.0, 2.0)?;
    let range = (0.1, 10.0);
    let qhd = set2_check(&CapillarityLaw::Qhd, &law, range, 2001)?;
    let qhd_ok = qhd.passed && qhd.hessian_margin.abs() <= 1e-12 * qhd.hessian_scale;
    let inverse_square = CapillarityLaw::Power {
        coefficient: 1.0,
        exponent: -2.0,
    };
    let inv = set2_check(&inverse_square, &law, range, 2001)?;
    let inv_ok = !inv.passed && matches!(inv.failure, Some(Set2Failure::Hessian { .. }));
    // rho^2 C / (h + rho) only grows without bound when gamma < 2.
    let soft = EnergyLaw::gamma_law(1.0, 1.5)?;
    let constant = CapillarityLaw::Constant(0.5);
    let bounded = set2_check(&constant, &soft, range, 2001)?;
    let open = set2_check(&constant, &soft, (0.1, f64::INFINITY), 2001)?;
    let constant_ok = bounded.passed && !open.passed && open.unbounded;
    Ok(Outcome {
        passed: qhd_ok && inv_ok && constant_ok,
        detail: format!(
            "qhd margin {:.1e} (pass {}); rho^-2 failure {:?}; constant at gamma 1.5 on [0.1, 10] pass {}, on [0.1, inf) unbounded {}",
            qhd.hessian_margin, qhd.passed, inv.failure, bounded.passed, open.unbounded
        ),
    })
}

fn main() -> ExitCode {
    // The cargo test runner passes its own flags; nothing here takes options.
    let scratch = tempfile::tempdir().expect("temporary directory");
    let dir = scratch.path();
    let minute = Duration::from_secs(60);

    type Criterion<'a> = (&'a str, Box<dyn Fn() -> Outcome + 'a>);
    let criteria: Vec<Criterion> = vec![
        (
            "conservation and energy-drift order",
            Box::new(|| {
                let start = Instant::now();
                let o = study(Study::EnergyBalance, "energy_balance.toml", dir, |_| true);
                within(o, start.elapsed(), minute)
            }),
        ),
        (
            "conservative vs primitive forms and Gateaux derivative",
            Box::new(|| forms_and_gateaux().unwrap_or_else(Outcome::error)),
        ),
        (
            "relative energy identity and bump identity",
            Box::new(|| study(Study::WeakStrong, "weak_strong.toml", &dir.join("identity"), |c| c.name.contains("identity"))),
        ),
        (
            "space-time mollifier",
            Box::new(|| study(Study::MollifyCheck, "mollify.toml", dir, |_| true)),
        ),
        (
            "weak-strong stability",
            Box::new(|| {
                let start = Instant::now();
                let o = study(Study::WeakStrong, "weak_strong.toml", dir, |c| !c.name.contains("identity"));
                within(o, start.elapsed(), 5 * minute)
            }),
        ),
        (
            "vanishing capillarity Set1",
            Box::new(|| study(Study::Capillarity, "set1.toml", dir, |_| true)),
        ),
        (
            "vanishing capillarity Set2 (qhd)",
            Box::new(|| study(Study::Capillarity, "set2_qhd.toml", dir, |_| true)),
        ),
        (
            "large friction against the Cahn-Hilliard lift",
            Box::new(|| study(Study::Friction, "friction.toml", dir, |_| true)),
        ),
        (
            "Cahn-Hilliard spinodal growth and free-energy decay",
            Box::new(|| study(Study::Spinodal, "spinodal.toml", dir, |_| true)),
        ),
        (
            "Set2 admissibility validator",
            Box::new(|| set2_validator().unwrap_or_else(Outcome::error)),
        ),
    ];

    std::fs::create_dir_all(dir.join("identity")).expect("scratch subdirectory");
    let mut failures = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = run();
        let secs = start.elapsed().as_secs_f64();
        if !outcome.passed {
            failures += 1;
        }
        println!(
            "{} criterion {:>2} {name} ({secs:.1} s): {}",
            if outcome.passed { "PASS" } else { "FAIL" },
            i + 1,
            outcome.detail
        );
    }
    println!("{} of {} criteria passed", criteria.len() - failures, criteria.len());
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
