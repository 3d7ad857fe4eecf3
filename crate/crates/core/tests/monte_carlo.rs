//! Statistical checks against closed-form moments. Seeds are fixed, so each
//! outcome is deterministic; bands are 4 standard errors unless noted.

use mrm::chaos2d::{
    ball_mass_scaling_check, mean_cell_mass, BallScalingSetup, Field2DSampler, Grid2D, Kernel2D,
};
use mrm::cone::ConeParams;
use mrm::dimension::{default_kpz_scales, full_interval, kpz_verify_1d, Kpz1dSetup};
use mrm::levy::{normalize, Atom, DensityJumps, JumpMeasure, LevyTriple, PowerLawSide};
use mrm::measure::{
    build_measure, estimate_zeta_many, global_scaling_check, CoupledRefinements, MomentSetup,
};
use mrm::seed::derive_seed;
use mrm::stats::{ks_p_value, ks_statistic, Estimate};
use mrm::synthesis::{
    assemble_omega, sample_gaussian_field, sample_poisson_points, CompoundModel, FieldSampler,
    FiniteJumps, Grid1D, SynthesisMethod,
};

fn atomic() -> LevyTriple {
    normalize(0.2, JumpMeasure::Atomic(vec![Atom { x: -0.3, w: 2.0 }])).unwrap()
}

fn density() -> LevyTriple {
    let side = PowerLawSide {
        c: 0.5,
        alpha: 0.5,
        lambda: 3.0,
        upper: None,
    };
    let nu = JumpMeasure::Density(DensityJumps {
        positive: None,
        negative: Some(side),
        eps: 1e-2,
        x_max: 20.0,
    });
    normalize(0.1, nu).unwrap()
}

fn seeds(label: &str, n: usize) -> Vec<u64> {
    (0..n as u64).map(|r| derive_seed(17, label, r)).collect()
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    sab / (saa * sbb).sqrt()
}

#[test]
fn exp_omega_has_unit_mean_for_every_method() {
    let cone = ConeParams::new(1.0 / 64.0, 1.0).unwrap();
    let grid = Grid1D::cells(0.25, 64).unwrap();
    let cases = [
        (
            LevyTriple::lognormal(0.5).unwrap(),
            SynthesisMethod::GaussianExact,
        ),
        (atomic(), SynthesisMethod::PoissonExact),
        (density(), SynthesisMethod::TruncatedGeneral),
    ];
    for (triple, method) in cases {
        let sampler = FieldSampler::new(grid, cone, &triple).unwrap();
        assert_eq!(sampler.method(), method);
        // one value per replica, at the first grid point
        let draws: Vec<f64> = sampler
            .sample_batch(&seeds("unit-mean", 20_000))
            .unwrap()
            .iter()
            .map(|f| f.values[0].exp())
            .collect();
        let e = Estimate::of_mean(&draws);
        assert!(
            e.z_score(1.0).abs() <= 4.0,
            "{method}: E[e^ω] = {} ± {}",
            e.value,
            e.stderr
        );
    }
}

#[test]
fn values_at_distance_t_are_uncorrelated() {
    let cone = ConeParams::new(0.25, 1.0).unwrap();
    // spacing 1/16; points 0 and 16 are exactly T apart
    let grid = Grid1D::cells(1.5, 24).unwrap();
    let n = 100_000;
    let bound = 4.0 / (n as f64).sqrt();
    for triple in [LevyTriple::lognormal(0.6).unwrap(), atomic()] {
        let fields = FieldSampler::new(grid, cone, &triple)
            .unwrap()
            .sample_batch(&seeds("independence", n))
            .unwrap();
        let a: Vec<f64> = fields.iter().map(|f| f.values[0]).collect();
        let b: Vec<f64> = fields.iter().map(|f| f.values[16]).collect();
        let near: Vec<f64> = fields.iter().map(|f| f.values[4]).collect();
        let r = correlation(&a, &b);
        assert!(r.abs() <= bound, "correlation {r} at distance T");
        assert!(
            correlation(&a, &near) > 0.3,
            "nearby values should be correlated"
        );
    }
}

#[test]
fn poisson_counts_and_heights_follow_their_laws() {
    let cone = ConeParams::new(0.01, 1.0).unwrap();
    let jumps = FiniteJumps::from_atoms(vec![Atom { x: -0.3, w: 2.0 }, Atom { x: 0.5, w: 0.5 }]);
    let window = (-0.5, 1.5);
    let expected = 2.0 * 2.5 / 0.01;
    let counts: Vec<f64> = seeds("poisson", 10_000)
        .iter()
        .map(|&s| {
            sample_poisson_points(window, &cone, &jumps, s)
                .unwrap()
                .points
                .len() as f64
        })
        .collect();
    let e = Estimate::of_mean(&counts);
    assert!(
        e.z_score(expected).abs() <= 4.0,
        "mean count {} vs {expected}",
        e.value
    );

    let cloud = sample_poisson_points(window, &cone, &jumps, 5).unwrap();
    assert_eq!(cloud.expected_count, expected);
    let ys: Vec<f64> = cloud.points.iter().map(|p| p.y).collect();
    assert!(ys.iter().all(|&y| y >= cone.resolution));
    let d = ks_statistic(&ys, |y| 1.0 - cone.resolution / y);
    assert!(ks_p_value(d, ys.len()) > 0.01, "KS statistic {d}");
    let ss: Vec<f64> = cloud.points.iter().map(|p| p.s).collect();
    let d = ks_statistic(&ss, |s| {
        ((s - window.0) / (window.1 - window.0)).clamp(0.0, 1.0)
    });
    assert!(
        ks_p_value(d, ss.len()) > 0.01,
        "KS statistic {d} for positions"
    );
}

#[test]
fn general_path_reduces_to_gaussian_path() {
    let cone = ConeParams::new(1.0 / 32.0, 1.0).unwrap();
    let grid = Grid1D::cells(0.5, 256).unwrap();
    let triple = LevyTriple::lognormal(0.4).unwrap();
    let model = CompoundModel::from_triple(&triple).unwrap();
    for seed in [1, 2, 3] {
        let direct = sample_gaussian_field(&grid, &cone, &triple, seed).unwrap();
        let cloud = sample_poisson_points(
            grid.covering_window(&cone),
            &cone,
            &FiniteJumps::empty(),
            seed,
        )
        .unwrap();
        assert!(cloud.points.is_empty());
        let general = assemble_omega(&grid, &cloud, &cone, &model, seed).unwrap();
        for (a, b) in direct.values.iter().zip(&general) {
            assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
        }
    }
}

#[test]
fn field_is_stationary() {
    let cone = ConeParams::new(1.0 / 16.0, 1.0).unwrap();
    let grid = Grid1D::cells(1.0, 64).unwrap();
    let fields = FieldSampler::new(grid, cone, &atomic())
        .unwrap()
        .sample_batch(&seeds("stationary", 20_000))
        .unwrap();
    let at = |i: usize| -> Vec<f64> { fields.iter().map(|f| f.values[i]).collect() };
    let (a, b) = (at(3), at(50));
    let (ea, eb) = (Estimate::of_mean(&a), Estimate::of_mean(&b));
    let se = ea.stderr.hypot(eb.stderr);
    assert!((ea.value - eb.value).abs() <= 4.0 * se);
    let sq = |v: &[f64]| Estimate::of_mean(&v.iter().map(|x| x * x).collect::<Vec<_>>());
    let (sa, sb) = (sq(&a), sq(&b));
    assert!((sa.value - sb.value).abs() <= 4.0 * sa.stderr.hypot(sb.stderr));
}

#[test]
fn measure_of_an_interval_has_mean_its_length() {
    let cone = ConeParams::new(1.0 / 64.0, 1.0).unwrap();
    let sampler = FieldSampler::new(
        Grid1D::cells(0.5, 256).unwrap(),
        cone,
        &LevyTriple::lognormal(0.3).unwrap(),
    )
    .unwrap();
    let measures: Vec<_> = sampler
        .sample_batch(&seeds("mean-mass", 4000))
        .unwrap()
        .iter()
        .map(|f| build_measure(f).unwrap())
        .collect();
    for t in [0.1, 0.25, 0.5] {
        let xs: Vec<f64> = measures
            .iter()
            .map(|m| m.cumulative_at(t).unwrap())
            .collect();
        let e = Estimate::of_mean(&xs);
        assert!(
            e.z_score(t).abs() <= 4.0,
            "E[M([0, {t}])] = {} ± {}",
            e.value,
            e.stderr
        );
    }
    // power means increase with the order
    let xs: Vec<f64> = measures.iter().map(|m| m.total_mass()).collect();
    let norms: Vec<f64> = [0.25, 0.5, 1.0, 1.5, 2.0]
        .iter()
        .map(|&q| (xs.iter().map(|x| x.powf(q)).sum::<f64>() / xs.len() as f64).powf(1.0 / q))
        .collect();
    assert!(norms.windows(2).all(|w| w[0] <= w[1]), "{norms:?}");
}

#[test]
fn first_moment_scales_linearly() {
    let cone = ConeParams::new(1.0 / 4096.0, 1.0).unwrap();
    let scales: Vec<f64> = (3..=7).rev().map(|k| 2f64.powi(-k)).collect();
    for triple in [LevyTriple::lognormal(0.4).unwrap(), atomic()] {
        let setup = MomentSetup {
            triple,
            cone,
            domain: 0.125,
            replicas: 400,
            seed: 8,
            average_windows: false,
        };
        let fits = estimate_zeta_many(&setup, &[0.0, 1.0], &scales).unwrap();
        assert!(fits[0].slope.abs() <= 1e-12);
        let f = &fits[1];
        assert!(
            (f.slope - 1.0).abs() <= 2.0 * f.slope_stderr.max(1e-9),
            "slope {} ± {}",
            f.slope,
            f.slope_stderr
        );
    }
}

#[test]
fn global_scaling_trivial_cases() {
    let cone = ConeParams::new(1.0 / 64.0, 1.0).unwrap();
    let triple = LevyTriple::lognormal(0.3).unwrap();
    let r = global_scaling_check(&triple, &cone, 1.0, 1.7, 50, 3).unwrap();
    assert!((r.ratio - 1.0).abs() <= 1e-12 && r.pass);
    let r = global_scaling_check(&triple, &cone, 0.25, 1.0, 2000, 3).unwrap();
    assert!((r.predicted - 0.25).abs() <= 1e-15);
    assert!(r.z.abs() <= 4.0, "ratio {} ± {}", r.ratio, r.ratio_stderr);
}

#[test]
fn ball_scaling_trivial_cases() {
    let base = BallScalingSetup {
        gamma2: 0.5,
        radius: 1.0,
        n: 32,
        lambda: 1.0,
        q: 0.5,
        replicas: 20,
        seed: 2,
    };
    let r = ball_mass_scaling_check(&base).unwrap();
    assert!((r.ratio - 1.0).abs() <= 1e-12 && r.pass);
    let r = ball_mass_scaling_check(&BallScalingSetup { q: 0.0, ..base }).unwrap();
    assert!((r.ratio - 1.0).abs() <= 1e-12 && r.pass);
}

#[test]
fn planar_values_beyond_r_are_uncorrelated() {
    let grid = Grid2D::centred(1.0, 16).unwrap();
    let kernel = Kernel2D::lognormal(0.8, 0.5, grid.spacing).unwrap();
    let sampler = Field2DSampler::new(grid, kernel).unwrap();
    let n = 40_000;
    let fields = sampler.sample_batch(&seeds("planar-independence", n));
    // columns 2 and 10 of row 8 are 8 cells = 1.0 apart
    let (i, j, k) = (8 * 16 + 2, 8 * 16 + 10, 8 * 16 + 3);
    let a: Vec<f64> = fields.iter().map(|f| f.values[i]).collect();
    let b: Vec<f64> = fields.iter().map(|f| f.values[j]).collect();
    let c: Vec<f64> = fields.iter().map(|f| f.values[k]).collect();
    assert!(correlation(&a, &b).abs() <= 4.0 / (n as f64).sqrt());
    assert!(correlation(&a, &c) > 0.3);
}

#[test]
fn planar_cell_masses_have_mean_cell_area() {
    let grid = Grid2D::centred(1.0, 24).unwrap();
    let s =
        Field2DSampler::new(grid, Kernel2D::lognormal(0.5, 2.0, grid.spacing).unwrap()).unwrap();
    let e = mean_cell_mass(&s, 4000, 1);
    assert!(
        e.z_score(grid.cell_area()).abs() <= 4.0,
        "{} ± {} vs {}",
        e.value,
        e.stderr,
        grid.cell_area()
    );

    let r = 0.8 / 2f64.sqrt();
    let grid = Grid2D::new([-r, -r], 2.0 * r, 24).unwrap();
    let s = Field2DSampler::new(grid, Kernel2D::gff_disk(0.5, 1.0).unwrap()).unwrap();
    let e = mean_cell_mass(&s, 4000, 1);
    assert!(
        e.z_score(grid.cell_area()).abs() <= 4.0,
        "{} ± {} vs {}",
        e.value,
        e.stderr,
        grid.cell_area()
    );
}

#[test]
fn largest_cell_mass_shrinks_under_refinement() {
    let probe =
        CoupledRefinements::new(&LevyTriple::lognormal(0.3).unwrap(), 1.0, 0.25, 16, 3).unwrap();
    let fraction = probe.decreasing_fraction(100, 4).unwrap();
    assert!(
        fraction >= 0.95,
        "only {fraction} of realizations refine monotonically"
    );
}

#[test]
fn full_interval_keeps_dimension_one() {
    let setup = Kpz1dSetup {
        triple: LevyTriple::lognormal(0.3).unwrap(),
        cone: ConeParams::new(1.0 / 1024.0, 1.0).unwrap(),
        cells: 4096,
        replicas: 10,
        seed: 6,
        scales: default_kpz_scales(),
        tolerance: 0.05,
    };
    let report = kpz_verify_1d(&full_interval(1.0).unwrap(), &setup).unwrap();
    assert_eq!(report.delta_pred, 1.0);
    assert!(report.pass, "mean {} ± {}", report.mean, report.stderr);
}
