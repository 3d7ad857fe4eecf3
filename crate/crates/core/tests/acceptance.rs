//! Acceptance run: one PASS/FAIL line per criterion. Tolerances and sizes are
//! pinned here; the process exits non-zero if a required criterion fails.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::Rng;

use mrm::chaos2d::{
    ball_mass_scaling_check, green_disk, green_harmonicity_residual, kpz_solve_2d, kpz_verify_2d,
    make_cantor_dust, sandwich_check, zeta2d, BallScalingSetup, Kpz2dSetup, Model2D,
};
use mrm::cli::selftest_configs;
use mrm::cone::{cone_overlap, overlap_by_quadrature, ConeParams};
use mrm::dimension::{
    default_kpz_scales, kpz_verify_1d, make_cantor, predicted_dimension, Kpz1dSetup,
};
use mrm::levy::{
    normalize, psi, Atom, DensityJumps, ExponentTable, JumpMeasure, LevyTriple, PowerLawSide,
};
use mrm::measure::{build_measure, estimate_zeta_many, MomentSetup};
use mrm::seed::{derive_seed, rng_from_seed};
use mrm::stats::Estimate;
use mrm::synthesis::{scale_invariance_check, FieldSampler, Grid1D};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn within_time(pass: bool, elapsed: Duration, limit: Duration) -> bool {
    pass && elapsed <= limit
}

// ---------------------------------------------------------------------------

const CONE_CONFIGS: usize = 50;
const CONE_QUAD_TOL: f64 = 1e-8;
const CONE_SEAM_TOL: f64 = 1e-12;
const CONE_TIME: Duration = Duration::from_secs(10);

fn cone() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut worst_seam = 0.0f64;
    for (l, t, tau) in selftest_configs(2024, CONE_CONFIGS) {
        let p = ConeParams::new(l, t).unwrap();
        worst = worst
            .max((cone_overlap(&p, tau).unwrap() - overlap_by_quadrature(&p, tau).unwrap()).abs());
        let below = cone_overlap(&p, l * (1.0 - 1e-15)).unwrap();
        let at = cone_overlap(&p, l).unwrap();
        let above = cone_overlap(&p, l * (1.0 + 1e-15)).unwrap();
        worst_seam = worst_seam.max((below - at).abs()).max((above - at).abs());
    }
    let elapsed = start.elapsed();
    let pass = worst <= CONE_QUAD_TOL && worst_seam <= CONE_SEAM_TOL;
    outcome(
        within_time(pass, elapsed, CONE_TIME),
        format!(
            "max |analytic − quadrature| = {worst:.2e}, seam jump = {worst_seam:.2e}, {:.2} s",
            elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------------------

const EXPONENTS_TRIPLES: usize = 20;
const EXPONENTS_NORMALIZE_TOL: f64 = 1e-12;
const EXPONENTS_CONCAVITY_TOL: f64 = 1e-9;
const EXPONENTS_GAUSSIAN_TOL: f64 = 1e-14;

fn random_triple<R: Rng>(rng: &mut R) -> LevyTriple {
    let sigma2 = rng.gen_range(0.0..1.0);
    let nu = match rng.gen_range(0..3) {
        0 => JumpMeasure::None,
        1 => JumpMeasure::Atomic(
            (0..rng.gen_range(1..4))
                .map(|_| Atom {
                    x: rng.gen_range(-1.0..1.0),
                    w: rng.gen_range(0.1..2.0),
                })
                .collect(),
        ),
        _ => {
            let side = |rng: &mut R| PowerLawSide {
                c: rng.gen_range(0.1..1.0),
                alpha: rng.gen_range(-0.5..1.5),
                lambda: rng.gen_range(2.5..6.0),
                upper: None,
            };
            JumpMeasure::Density(DensityJumps {
                positive: Some(side(rng)),
                negative: Some(side(rng)),
                eps: 1e-3,
                x_max: 30.0,
            })
        }
    };
    normalize(sigma2, nu).unwrap()
}

fn exponents() -> Outcome {
    let mut rng = rng_from_seed(derive_seed(7, "exponents", 0));
    let qs: Vec<f64> = (0..=40).map(|k| -1.0 + 0.075 * k as f64).collect();
    let (mut worst_norm, mut worst_curv) = (0.0f64, f64::NEG_INFINITY);
    for _ in 0..EXPONENTS_TRIPLES {
        let t = random_triple(&mut rng);
        worst_norm = worst_norm.max(psi(&t, 1.0).unwrap().abs());
        worst_curv = worst_curv.max(
            ExponentTable::build(&t, &qs)
                .unwrap()
                .max_second_difference(),
        );
    }
    let mut worst_gauss = 0.0f64;
    for _ in 0..100 {
        let (m, s, q) = (
            rng.gen_range(-2.0..2.0),
            rng.gen_range(0.0..3.0),
            rng.gen_range(-3.0..3.0),
        );
        let t = LevyTriple::new(m, s, JumpMeasure::None).unwrap();
        let exact = m * q + 0.5 * s * q * q;
        worst_gauss = worst_gauss.max((psi(&t, q).unwrap() - exact).abs() / exact.abs().max(1.0));
    }
    outcome(
        worst_norm <= EXPONENTS_NORMALIZE_TOL && worst_curv <= EXPONENTS_CONCAVITY_TOL && worst_gauss <= EXPONENTS_GAUSSIAN_TOL,
        format!("max |ψ(1)| = {worst_norm:.2e}, max second difference of ζ = {worst_curv:.2e}, Gaussian ψ error = {worst_gauss:.2e}"),
    )
}

// ---------------------------------------------------------------------------

const NORMALIZATION_REPLICAS: usize = 10_000;
const NORMALIZATION_Z: f64 = 4.0;
const NORMALIZATION_TIME: Duration = Duration::from_secs(300);

fn normalization() -> Outcome {
    let start = Instant::now();
    let t = 1.0;
    let cone = ConeParams::new(t / 1024.0, t).unwrap();
    let sampler = FieldSampler::new(
        Grid1D::cells(t, 4096).unwrap(),
        cone,
        &LevyTriple::lognormal(0.5).unwrap(),
    )
    .unwrap();
    let mut masses = Vec::with_capacity(NORMALIZATION_REPLICAS);
    for chunk in (0..NORMALIZATION_REPLICAS as u64)
        .collect::<Vec<_>>()
        .chunks(256)
    {
        let seeds: Vec<u64> = chunk
            .iter()
            .map(|&r| derive_seed(3, "normalization", r))
            .collect();
        for f in sampler.sample_batch(&seeds).unwrap() {
            masses.push(build_measure(&f).unwrap().total_mass());
        }
    }
    let e = Estimate::of_mean(&masses);
    let z = e.z_score(t);
    let elapsed = start.elapsed();
    outcome(
        within_time(z.abs() <= NORMALIZATION_Z, elapsed, NORMALIZATION_TIME),
        format!(
            "mean M([0,T]) = {:.5} ± {:.5} (z = {z:.2}), {:.1} s",
            e.value,
            e.stderr,
            elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------------------

const MOMENT_SCALING_QS: [f64; 3] = [0.5, 1.0, 1.5];
const MOMENT_SCALING_TOL_LOGNORMAL: f64 = 0.05;
const MOMENT_SCALING_TOL_POISSON: f64 = 0.07;
const MOMENT_SCALING_REPLICAS: usize = 400;
/// Absolute floor on `2 SE` for the `q = 1` slope; see the windowed estimator.
const MOMENT_SCALING_SE_FLOOR: f64 = 1e-9;
const MOMENT_SCALING_TIME: Duration = Duration::from_secs(900);

fn moment_scaling() -> Outcome {
    let start = Instant::now();
    let t = 1.0;
    let cone = ConeParams::new(t / 4096.0, t).unwrap();
    let scales: Vec<f64> = (3..=7).rev().map(|k| t * 2f64.powi(-k)).collect();
    let cases = [
        (
            "log-normal σ²=0.4",
            LevyTriple::lognormal(0.4).unwrap(),
            MOMENT_SCALING_TOL_LOGNORMAL,
        ),
        (
            "compound Poisson (−0.3, w=2)",
            normalize(0.0, JumpMeasure::Atomic(vec![Atom { x: -0.3, w: 2.0 }])).unwrap(),
            MOMENT_SCALING_TOL_POISSON,
        ),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, triple, tol) in cases {
        let setup = MomentSetup {
            triple,
            cone,
            domain: t / 8.0,
            replicas: MOMENT_SCALING_REPLICAS,
            seed: 4,
            average_windows: true,
        };
        let fits = estimate_zeta_many(&setup, &MOMENT_SCALING_QS, &scales).unwrap();
        let mut bits = Vec::new();
        for f in &fits {
            let ok = (f.slope - f.analytic_zeta).abs() <= tol;
            pass &= ok;
            bits.push(format!(
                "ζ̂({}) = {:.4} vs {:.4}",
                f.q, f.slope, f.analytic_zeta
            ));
        }
        let one = fits.iter().find(|f| f.q == 1.0).unwrap();
        pass &= (one.slope - 1.0).abs() <= (2.0 * one.slope_stderr).max(MOMENT_SCALING_SE_FLOOR);
        parts.push(format!("{name}: {}", bits.join(", ")));
    }
    let elapsed = start.elapsed();
    outcome(
        within_time(pass, elapsed, MOMENT_SCALING_TIME),
        format!("{}; {:.1} s", parts.join("; "), elapsed.as_secs_f64()),
    )
}

// ---------------------------------------------------------------------------

const SCALE_INVARIANCE_TOL: f64 = 1e-12;

fn scale_invariance() -> Outcome {
    let cone = ConeParams::new(1.0 / 1024.0, 1.0).unwrap();
    let mut worst = 0.0f64;
    for sigma2 in [0.1, 0.5, 1.0] {
        for lambda in [0.5, 0.25] {
            let r = scale_invariance_check(
                &cone,
                &LevyTriple::lognormal(sigma2).unwrap(),
                lambda,
                0,
                0,
            )
            .unwrap();
            worst = worst
                .max((r.variance_gap - sigma2 * (1.0 / lambda).ln()).abs())
                .max(r.max_gap_error);
        }
    }
    outcome(
        worst <= SCALE_INVARIANCE_TOL,
        format!("max |gap − σ² ln(1/λ)| = {worst:.2e}"),
    )
}

// ---------------------------------------------------------------------------

const KPZ_1D_TOL: f64 = 0.08;
const KPZ_1D_REPLICAS: usize = 50;
const KPZ_1D_MAX_DISCARDED: f64 = 0.05;
const KPZ_1D_TIME: Duration = Duration::from_secs(1800);

fn kpz_1d() -> Outcome {
    let start = Instant::now();
    let set = make_cantor(1.0 / 3.0, 12, 1.0).unwrap();
    let setup = |triple: LevyTriple| Kpz1dSetup {
        triple,
        cone: ConeParams::new(1.0 / 2048.0, 1.0).unwrap(),
        cells: 8192,
        replicas: KPZ_1D_REPLICAS,
        seed: 1,
        scales: default_kpz_scales(),
        tolerance: KPZ_1D_TOL,
    };
    let triple = LevyTriple::lognormal(0.3).unwrap();
    let pred = predicted_dimension(&triple, set.delta0).unwrap();
    let r = kpz_verify_1d(&set, &setup(triple)).unwrap();
    let control = kpz_verify_1d(
        &set,
        &Kpz1dSetup {
            replicas: 4,
            ..setup(LevyTriple::lebesgue())
        },
    )
    .unwrap();
    let control_ok = (control.mean - set.delta0).abs() <= (3.0 * control.stderr).max(1e-9);
    let discard_ok = r.discarded as f64 <= KPZ_1D_MAX_DISCARDED * KPZ_1D_REPLICAS as f64;
    let elapsed = start.elapsed();
    let pass = (r.mean - pred).abs() <= KPZ_1D_TOL && control_ok && discard_ok;
    outcome(
        within_time(pass, elapsed, KPZ_1D_TIME),
        format!(
            "mean dim = {:.4} ± {:.4} vs root {pred:.4}; Lebesgue control {:.6} vs δ₀ {:.6}; {} discarded; {:.1} s",
            r.mean,
            r.stderr,
            control.mean,
            set.delta0,
            r.discarded,
            elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------------------

const BALL_SCALING_Z: f64 = 5.0;
const BALL_SCALING_IDENTITY_TOL: f64 = 1e-12;

fn ball_scaling() -> (Outcome, bool) {
    let r = ball_mass_scaling_check(&BallScalingSetup {
        gamma2: 0.5,
        radius: 1.0,
        n: 64,
        lambda: 0.5,
        q: 0.5,
        replicas: 500,
        seed: 1,
    })
    .unwrap();
    let identity = (0..=400)
        .map(|k| (zeta2d(4.0 * k as f64 / 401.0, 2.0) - 4.0).abs())
        .fold(0.0, f64::max);
    let identity_ok = identity <= BALL_SCALING_IDENTITY_TOL;
    let o = outcome(
        r.z.abs() <= BALL_SCALING_Z && identity_ok,
        format!(
            "ratio {:.4} ± {:.4} vs 2^−ζ(0.5) = {:.4} (z = {:.2}); mass-conserving exponent gives {:.4} (z = {:.2}); max |ζ(2) − 4| = {identity:.1e}",
            r.ratio, r.ratio_stderr, r.predicted, r.z, r.predicted_mass_conserving, r.z_mass_conserving
        ),
    );
    (o, identity_ok)
}

// ---------------------------------------------------------------------------

const GFF_KERNEL_HARMONIC_TOL: f64 = 1e-4;
const GFF_KERNEL_BOUNDARY_TOL: f64 = 1e-5;

fn gff_kernel() -> Outcome {
    let radius = 1.0;
    let mut rng = rng_from_seed(derive_seed(8, "gff-kernel", 0));
    let mut point = |max_r: f64| {
        let (r, a): (f64, f64) = (
            max_r * rng.gen::<f64>().sqrt(),
            rng.gen_range(0.0..std::f64::consts::TAU),
        );
        [r * a.cos(), r * a.sin()]
    };
    let mut worst_harm = 0.0f64;
    let mut probes = 0;
    while probes < 50 {
        let y = point(0.5 * radius);
        let x = point(0.9 * radius);
        if (x[0] - y[0]).hypot(x[1] - y[1]) < 0.1 * radius {
            continue;
        }
        worst_harm = worst_harm.max(green_harmonicity_residual(x, y, radius).unwrap().abs());
        probes += 1;
    }
    let mut worst_boundary = 0.0f64;
    for k in 0..50 {
        let a = std::f64::consts::TAU * k as f64 / 50.0;
        let x = [
            (radius - 1e-6 * radius) * a.cos(),
            (radius - 1e-6 * radius) * a.sin(),
        ];
        worst_boundary =
            worst_boundary.max(green_disk(x, point(0.8 * radius), radius).unwrap().abs());
    }
    let s = sandwich_check(0.5, radius, 0.75 * radius, 0.05 * radius, 24).unwrap();
    outcome(
        worst_harm <= GFF_KERNEL_HARMONIC_TOL && worst_boundary <= GFF_KERNEL_BOUNDARY_TOL && s.bounded,
        format!(
            "max harmonicity residual {worst_harm:.2e}; max boundary value {worst_boundary:.2e}; sandwich in [{:.4}, {:.4}], Cauchy gap {:.2e}",
            s.min, s.max, s.cauchy_gap
        ),
    )
}

// ---------------------------------------------------------------------------

const KPZ_2D_TOL: f64 = 0.1;

fn kpz_2d() -> Outcome {
    let set = make_cantor_dust(1.0 / 3.0, 6, [0.0, 0.0], 1.0).unwrap();
    let setup = |gamma2: f64| Kpz2dSetup {
        model: Model2D::Lognormal { gamma2 },
        n: 64,
        replicas: 30,
        seed: 1,
        levels: Kpz2dSetup::default_levels(64, 3),
        base: 3,
        tolerance: KPZ_2D_TOL,
    };
    let r = kpz_verify_2d(&set, &setup(0.5)).unwrap();
    let control = kpz_verify_2d(
        &set,
        &Kpz2dSetup {
            replicas: 3,
            ..setup(0.0)
        },
    )
    .unwrap();
    let half = set.delta0 / 2.0;
    let root_ok = (kpz_solve_2d(0.0, set.delta0).unwrap().delta - half).abs() <= 1e-12;
    let control_ok = root_ok && (control.mean - half).abs() <= KPZ_2D_TOL;
    outcome(
        (r.mean - r.delta_pred).abs() <= KPZ_2D_TOL && control_ok,
        format!(
            "critical s = {:.4} ± {:.4} vs root {:.4}; γ²=0 control {:.4} vs δ₀/2 = {half:.4}",
            r.mean, r.stderr, r.delta_pred, control.mean
        ),
    )
}

// ---------------------------------------------------------------------------

const REPRODUCIBILITY_CONFIGS: [(&str, &str); 5] = [
    ("zeta-table", "[model]\nkind = \"lognormal\"\nsigma2 = 0.4\n"),
    (
        "simulate-1d",
        "[model]\nkind = \"atomic\"\nsigma2 = 0.1\natom_x = [-0.3]\natom_w = [2.0]\n[grid]\nn = 512\nlength = 0.125\nresolution = 0.0009765625\n[run]\nreplicas = 8\nseed = 4\n",
    ),
    (
        "kpz-1d",
        "[model]\nkind = \"lognormal\"\nsigma2 = 0.3\n[grid]\nn = 2048\nresolution = 0.001953125\n[set]\nkind = \"cantor\"\ndepth = 10\n[run]\nreplicas = 4\nseed = 2\n",
    ),
    (
        "kpz-2d",
        "[model]\nkind = \"lognormal-2d\"\ngamma2 = 0.5\n[grid]\nn = 27\n[set]\nkind = \"cantor-dust\"\ndepth = 4\n[run]\nreplicas = 3\nseed = 2\n",
    ),
    ("geometry-selftest", "[run]\nseed = 9\n"),
];

fn csv_bodies(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect();
    v.sort();
    v
}

fn reproducibility() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut files = 0;
    let mut differing = Vec::new();
    for (command, text) in REPRODUCIBILITY_CONFIGS {
        let cfg = dir.path().join(format!("{command}.toml"));
        fs::write(&cfg, text).unwrap();
        let mut runs = Vec::new();
        for (k, threads) in ["1", "2"].iter().enumerate() {
            let out = dir.path().join(format!("{command}-{k}"));
            let status = Command::new(env!("CARGO_BIN_EXE_mrm"))
                .args([
                    command,
                    "--config",
                    cfg.to_str().unwrap(),
                    "--out",
                    out.to_str().unwrap(),
                    "--threads",
                    threads,
                ])
                .output()
                .unwrap();
            assert!(
                status.status.success(),
                "{command}: {}",
                String::from_utf8_lossy(&status.stderr)
            );
            runs.push(csv_bodies(&out));
        }
        files += runs[0].len();
        if runs[0] != runs[1] || runs[0].is_empty() {
            differing.push(command);
        }
    }
    outcome(
        differing.is_empty(),
        format!(
            "{files} CSV files over {} commands; differing: {differing:?}",
            REPRODUCIBILITY_CONFIGS.len()
        ),
    )
}

// ---------------------------------------------------------------------------

fn report(name: &str, o: &Outcome) {
    println!(
        "{} {name}: {}",
        if o.pass { "PASS" } else { "FAIL" },
        o.detail
    );
}

fn main() {
    let mut required_failures = Vec::new();
    let mut check = |name: &'static str, o: Outcome| {
        report(name, &o);
        if !o.pass {
            required_failures.push(name);
        }
    };
    check("cone calculus", cone());
    check("exponent calculus", exponents());
    check("martingale normalization", normalization());
    check("scaling-exponent recovery", moment_scaling());
    check("Gaussian scale invariance", scale_invariance());
    check("KPZ 1D", kpz_1d());
    let (o7, identity_ok) = ball_scaling();
    report("2D ball-moment scaling", &o7);
    if !o7.pass {
        println!("     known failure: the stated 2D exponent does not conserve mass; see README");
    }
    check("GFF kernel validity", gff_kernel());
    check("KPZ 2D", kpz_2d());
    check("reproducibility", reproducibility());
    if !identity_ok {
        required_failures.push("ζ(2) = 4 identity");
    }
    if !required_failures.is_empty() {
        eprintln!("required criteria failed: {required_failures:?}");
        std::process::exit(1);
    }
}
