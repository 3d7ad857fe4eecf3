//! The `mrm` experiment runner.
//!
//! Each command writes into one output directory: CSV tables, optional binary
//! dumps, and a key=value `manifest.txt`. CSV bodies depend only on the
//! configuration and the seed, so two runs with the same inputs produce
//! identical files regardless of thread count. Only the manifest records
//! timing.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::Parser;
use rand::Rng;

use crate::chaos2d::{
    ball_mass_scaling_check, full_square, kpz_verify_2d, make_cantor_dust, zeta2d,
    zeta2d_mass_conserving, BallScalingSetup, Kpz2dSetup, Model2D, PlanarSet,
};
use crate::cone::{cone_overlap, overlap_by_quadrature, ConeParams};
use crate::config::{natural_base, Command, ExperimentConfig, ModelSpec, SetSpec};
use crate::dimension::{
    default_kpz_scales, full_interval, kpz_verify_1d, make_cantor, point_set, summary_text,
    write_kpz_csv, write_kpz_summary_csv, FractalSet, Kpz1dSetup, KpzReport,
};
use crate::error::{MrmError, Result};
use crate::io::{write_dump, GridDump};
use crate::levy::{ExponentTable, LevyTriple};
use crate::measure::{
    build_measure, estimate_zeta_many, global_scaling_check, write_fit_csv, write_moments_csv,
    MomentSetup,
};
use crate::seed::{derive_seed, rng_from_seed};
use crate::synthesis::{scale_invariance_check, FieldSampler, Grid1D};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;

pub const DEFAULT_KPZ_1D_TOLERANCE: f64 = 0.08;
pub const DEFAULT_KPZ_2D_TOLERANCE: f64 = 0.1;
/// Configurations checked by `geometry-selftest`.
pub const SELFTEST_CONFIGS: usize = 50;
pub const SELFTEST_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Parser)]
#[command(
    name = "mrm",
    version,
    about = "Multifractal random measure experiments"
)]
pub struct Args {
    #[arg(value_enum)]
    pub command: Command,
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides `run.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for replica parallelism (default: all cores).
    #[arg(long)]
    pub threads: Option<usize>,
    /// Overrides `output.dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Files and seeds produced by a command.
#[derive(Debug, Default)]
pub struct Artifacts {
    pub files: Vec<PathBuf>,
    pub seeds: Vec<(String, u64)>,
    /// `key=value` lines appended to the manifest.
    pub results: Vec<(String, String)>,
}

struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    dir: &'a Path,
    seed: u64,
    art: Artifacts,
}

impl Ctx<'_> {
    fn create(&mut self, name: &str) -> Result<BufWriter<File>> {
        let path = self.dir.join(name);
        let f = File::create(&path)?;
        self.art.files.push(PathBuf::from(name));
        Ok(BufWriter::new(f))
    }

    fn write_text(&mut self, name: &str, text: &str) -> Result<()> {
        let mut w = self.create(name)?;
        w.write_all(text.as_bytes())?;
        w.flush()?;
        Ok(())
    }

    fn result(&mut self, key: &str, value: impl ToString) {
        self.art.results.push((key.into(), value.to_string()));
    }

    fn triple(&self) -> &LevyTriple {
        self.cfg.triple().expect("validated 1D model")
    }

    fn cone(&self) -> Result<ConeParams> {
        let g = self.cfg.grid.expect("validated grid");
        ConeParams::new(
            g.resolution.expect("validated resolution"),
            g.integral_scale,
        )
    }
}

/// Parses `argv`, runs the command, and returns the process exit code.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let args = match Args::try_parse_from(argv) {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                EXIT_VALIDATION
            } else {
                EXIT_OK
            };
        }
    };
    match run(&args) {
        Ok(_) => EXIT_OK,
        Err(e) => {
            report_error(&e);
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &MrmError) -> i32 {
    if e.is_validation() {
        EXIT_VALIDATION
    } else {
        EXIT_NUMERICAL
    }
}

/// One tab-separated `error<TAB>key<TAB>message` line per problem on stderr.
fn report_error(e: &MrmError) {
    let mut err = std::io::stderr().lock();
    match e {
        MrmError::Config(issues) => {
            for i in issues {
                let _ = writeln!(err, "error\t{}\t{}", i.key, i.message);
            }
        }
        other => {
            let key = if other.is_validation() {
                "input"
            } else {
                "numerical"
            };
            let _ = writeln!(err, "error\t{key}\t{other}");
        }
    }
}

/// Loads and validates the configuration, then runs the command inside a
/// thread pool of the requested size.
pub fn run(args: &Args) -> Result<Artifacts> {
    let text = fs::read_to_string(&args.config).map_err(|e| {
        MrmError::Validation(format!("cannot read config {}: {e}", args.config.display()))
    })?;
    let cfg = ExperimentConfig::parse(&text, args.command)?;
    if args.threads == Some(0) {
        return Err(MrmError::Validation("--threads must be ≥ 1".into()));
    }
    let dir = args.out.clone().unwrap_or_else(|| cfg.output.dir.clone());
    fs::create_dir_all(&dir)?;
    let seed = args.seed.unwrap_or(cfg.run.seed);
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(k) = args.threads {
        builder = builder.num_threads(k);
    }
    let pool = builder
        .build()
        .map_err(|e| MrmError::Validation(format!("thread pool: {e}")))?;
    let threads = pool.current_num_threads();
    let started = Instant::now();
    let mut ctx = Ctx {
        cfg: &cfg,
        dir: &dir,
        seed,
        art: Artifacts::default(),
    };
    let outcome = pool.install(|| dispatch(&mut ctx));
    let manifest = Manifest {
        command: cfg.command.as_str(),
        config: &args.config,
        config_hash: &cfg.hash,
        seed,
        threads,
        elapsed: started.elapsed().as_secs_f64(),
        error: outcome.as_ref().err().map(|e| e.to_string()),
    };
    write_manifest(&dir, &manifest, &ctx.art)?;
    outcome.map(|_| ctx.art)
}

fn dispatch(ctx: &mut Ctx) -> Result<()> {
    match ctx.cfg.command {
        Command::ZetaTable => zeta_table(ctx),
        Command::Simulate1d => simulate_1d(ctx),
        Command::Kpz1d => kpz_1d(ctx),
        Command::ScalingCheck => scaling_check(ctx),
        Command::Kpz2d | Command::GffKpz => kpz_2d(ctx),
        Command::GeometrySelftest => geometry_selftest(ctx),
    }
}

struct Manifest<'a> {
    command: &'a str,
    config: &'a Path,
    config_hash: &'a str,
    seed: u64,
    threads: usize,
    elapsed: f64,
    error: Option<String>,
}

pub const MANIFEST_NAME: &str = "manifest.txt";

fn write_manifest(dir: &Path, m: &Manifest, art: &Artifacts) -> Result<()> {
    let mut s = String::new();
    let now = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs());
    let _ = writeln!(s, "command={}", m.command);
    let _ = writeln!(s, "version={}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(s, "config={}", m.config.display());
    let _ = writeln!(s, "config_sha256={}", m.config_hash);
    let _ = writeln!(s, "seed={}", m.seed);
    for (label, v) in &art.seeds {
        let _ = writeln!(s, "seed.{label}={v}");
    }
    let _ = writeln!(s, "threads={}", m.threads);
    let _ = writeln!(s, "finished_unix={now}");
    let _ = writeln!(s, "wall_clock_seconds={:.3}", m.elapsed);
    match &m.error {
        None => {
            let _ = writeln!(s, "status=ok");
        }
        Some(e) => {
            let _ = writeln!(s, "status=failed");
            let _ = writeln!(s, "error={}", e.replace('\n', " "));
            let _ = writeln!(s, "partial=true");
        }
    }
    for (k, v) in &art.results {
        let _ = writeln!(s, "result.{k}={v}");
    }
    for f in &art.files {
        let _ = writeln!(s, "file={}", f.display());
    }
    fs::write(dir.join(MANIFEST_NAME), s)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Commands

fn zeta_table(ctx: &mut Ctx) -> Result<()> {
    let qs = ctx.cfg.run.qs.clone();
    let mut w = csv::Writer::from_writer(ctx.create("zeta.csv")?);
    match ctx.cfg.model.as_ref().expect("validated model") {
        ModelSpec::OneD(triple) => {
            let table = ExponentTable::build(triple, &qs)?;
            w.write_record(["q", "psi", "zeta"])?;
            for ((q, p), z) in qs.iter().zip(&table.psi_vals).zip(&table.zeta_vals) {
                w.write_record([q.to_string(), p.to_string(), z.to_string()])?;
            }
            ctx.result("critical_moment", table.q_c);
        }
        ModelSpec::Lognormal2d { gamma2, .. } | ModelSpec::Gff { gamma2, .. } => {
            let gamma2 = *gamma2;
            w.write_record(["q", "zeta", "zeta_mass_conserving"])?;
            for &q in &qs {
                w.write_record([
                    q.to_string(),
                    zeta2d(gamma2, q).to_string(),
                    zeta2d_mass_conserving(gamma2, q).to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn simulate_1d(ctx: &mut Ctx) -> Result<()> {
    let cfg = ctx.cfg;
    let grid_spec = cfg.grid.expect("validated grid");
    let triple = ctx.triple().clone();
    let cone = ctx.cone()?;
    let grid = Grid1D::cells(grid_spec.length, grid_spec.n)?;
    let sampler = FieldSampler::new(grid, cone, &triple)?;
    let replicas = cfg.run.replicas;
    let seeds: Vec<u64> = (0..replicas as u64)
        .map(|r| derive_seed(ctx.seed, "simulate-1d", r))
        .collect();
    ctx.art.seeds.push(("simulate-1d".into(), ctx.seed));
    let fields = sampler.sample_batch(&seeds)?;
    let mut summary = csv::Writer::from_writer(ctx.create("realizations.csv")?);
    summary.write_record([
        "replica",
        "seed",
        "method",
        "total_mass",
        "max_cell_mass",
        "mean_omega",
    ])?;
    for (r, field) in fields.iter().enumerate() {
        let m = build_measure(field)?;
        let mean_omega = field.values.iter().sum::<f64>() / field.values.len() as f64;
        summary.write_record([
            r.to_string(),
            field.seed.to_string(),
            field.method.as_str().to_string(),
            m.total_mass().to_string(),
            m.max_cell_mass().to_string(),
            mean_omega.to_string(),
        ])?;
        if cfg.output.dumps && r < cfg.output.max_dumps {
            let mut w = ctx.create(&format!("field_{r:04}.bin"))?;
            write_dump(&mut w, &GridDump::field1d(field))?;
            let mut w = ctx.create(&format!("measure_{r:04}.bin"))?;
            write_dump(&mut w, &GridDump::measure1d(field, &m))?;
        }
    }
    summary.flush()?;
    drop(summary);
    if let Some(scales) = &cfg.run.scales {
        moment_fit(ctx, &triple, cone, grid_spec.length, scales)?;
    }
    Ok(())
}

fn moment_fit(
    ctx: &mut Ctx,
    triple: &LevyTriple,
    cone: ConeParams,
    domain: f64,
    scales: &[f64],
) -> Result<()> {
    let setup = MomentSetup {
        triple: triple.clone(),
        cone,
        domain,
        replicas: ctx.cfg.run.replicas,
        seed: ctx.seed,
        average_windows: true,
    };
    ctx.art.seeds.push(("moment-replica".into(), ctx.seed));
    let mut qs = ctx.cfg.run.qs.clone();
    qs.sort_by(f64::total_cmp);
    qs.dedup();
    let fits = estimate_zeta_many(&setup, &qs, scales)?;
    write_moments_csv(ctx.create("moments.csv")?, &fits)?;
    write_fit_csv(ctx.create("zeta_fit.csv")?, &fits)?;
    for f in &fits {
        ctx.result(
            &format!("zeta_hat[q={}]", f.q),
            format!("{} +- {}", f.slope, f.slope_stderr),
        );
    }
    Ok(())
}

fn fractal_set(spec: &SetSpec, length: f64) -> Result<FractalSet> {
    match spec {
        SetSpec::Cantor { ratio, depth } => make_cantor(*ratio, *depth, length),
        SetSpec::FullInterval => full_interval(length),
        SetSpec::Points(p) => point_set(p, length),
        _ => Err(MrmError::Validation("1D command needs a 1D set".into())),
    }
}

fn write_kpz(ctx: &mut Ctx, report: &KpzReport) -> Result<()> {
    write_kpz_csv(ctx.create("kpz_replicas.csv")?, report)?;
    write_kpz_summary_csv(ctx.create("kpz_summary.csv")?, report)?;
    ctx.write_text("summary.txt", &summary_text(report))?;
    ctx.result("delta0", report.delta0);
    ctx.result("delta_pred", report.delta_pred);
    ctx.result("mean", report.mean);
    ctx.result("stderr", report.stderr);
    ctx.result("pass", report.pass);
    Ok(())
}

fn kpz_1d(ctx: &mut Ctx) -> Result<()> {
    let cfg = ctx.cfg;
    let grid = cfg.grid.expect("validated grid");
    let set = fractal_set(cfg.set.as_ref().expect("validated set"), grid.length)?;
    let setup = Kpz1dSetup {
        triple: ctx.triple().clone(),
        cone: ctx.cone()?,
        cells: grid.n,
        replicas: cfg.run.replicas,
        seed: ctx.seed,
        scales: cfg.run.scales.clone().unwrap_or_else(default_kpz_scales),
        tolerance: cfg.run.tolerance.unwrap_or(DEFAULT_KPZ_1D_TOLERANCE),
    };
    ctx.art.seeds.push(("kpz-1d".into(), ctx.seed));
    let report = kpz_verify_1d(&set, &setup)?;
    write_kpz(ctx, &report)
}

fn planar_set(spec: &SetSpec, origin: [f64; 2], side: f64) -> Result<PlanarSet> {
    match spec {
        SetSpec::CantorDust { ratio, depth } => make_cantor_dust(*ratio, *depth, origin, side),
        SetSpec::FullSquare => full_square(origin, side),
        _ => Err(MrmError::Validation("2D command needs a planar set".into())),
    }
}

fn kpz_2d(ctx: &mut Ctx) -> Result<()> {
    let cfg = ctx.cfg;
    let spec = cfg.set.as_ref().expect("validated set");
    let (model, set) = match *cfg.model.as_ref().expect("validated model") {
        ModelSpec::Lognormal2d { gamma2, radius } => (
            Model2D::Lognormal { gamma2 },
            planar_set(spec, [0.0, 0.0], radius)?,
        ),
        ModelSpec::Gff { gamma2, radius } => {
            // the square inscribed in B(0, r)
            let r = cfg.run.inner_radius.expect("validated inner radius");
            let half = r / std::f64::consts::SQRT_2;
            (
                Model2D::Gff { gamma2, radius },
                planar_set(spec, [-half, -half], 2.0 * half)?,
            )
        }
        ModelSpec::OneD(_) => unreachable!("rejected by config validation"),
    };
    let n = cfg.grid.expect("validated grid").n;
    let base = cfg.run.base.unwrap_or_else(|| natural_base(spec));
    let setup = Kpz2dSetup {
        model,
        n,
        replicas: cfg.run.replicas,
        seed: ctx.seed,
        levels: cfg
            .run
            .levels
            .clone()
            .unwrap_or_else(|| Kpz2dSetup::default_levels(n, base)),
        base,
        tolerance: cfg.run.tolerance.unwrap_or(DEFAULT_KPZ_2D_TOLERANCE),
    };
    ctx.art.seeds.push(("kpz-2d".into(), ctx.seed));
    let report = kpz_verify_2d(&set, &setup)?;
    write_kpz(ctx, &report)
}

fn scaling_check(ctx: &mut Ctx) -> Result<()> {
    match *ctx.cfg.model.as_ref().expect("validated model") {
        ModelSpec::Lognormal2d { gamma2, radius } => ball_scaling(ctx, gamma2, radius),
        ModelSpec::OneD(_) => scaling_1d(ctx),
        ModelSpec::Gff { .. } => unreachable!("rejected by config validation"),
    }
}

fn ball_scaling(ctx: &mut Ctx, gamma2: f64, radius: f64) -> Result<()> {
    let cfg = ctx.cfg;
    let n = cfg.grid.expect("validated grid").n;
    let mut w = csv::Writer::from_writer(ctx.create("ball_scaling.csv")?);
    w.write_record([
        "lambda",
        "q",
        "ratio",
        "ratio_stderr",
        "predicted",
        "z",
        "pass",
        "predicted_mass_conserving",
        "z_mass_conserving",
    ])?;
    ctx.art.seeds.push(("ball-scaling".into(), ctx.seed));
    for &lambda in &cfg.run.lambdas {
        for &q in &cfg.run.qs {
            let setup = BallScalingSetup {
                gamma2,
                radius,
                n,
                lambda,
                q,
                replicas: cfg.run.replicas,
                seed: ctx.seed,
            };
            let r = ball_mass_scaling_check(&setup)?;
            w.write_record([
                r.lambda.to_string(),
                r.q.to_string(),
                r.ratio.to_string(),
                r.ratio_stderr.to_string(),
                r.predicted.to_string(),
                r.z.to_string(),
                r.pass.to_string(),
                r.predicted_mass_conserving.to_string(),
                r.z_mass_conserving.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn scaling_1d(ctx: &mut Ctx) -> Result<()> {
    let cfg = ctx.cfg;
    let triple = ctx.triple().clone();
    let cone = ctx.cone()?;
    let replicas = cfg.run.replicas;
    ctx.art.seeds.push(("scale-invariance".into(), ctx.seed));
    ctx.art.seeds.push(("global-scaling".into(), ctx.seed));
    let mut inv = csv::Writer::from_writer(ctx.create("scale_invariance.csv")?);
    let mut cmp = csv::Writer::from_writer(ctx.create("scale_invariance_moments.csv")?);
    let mut glob = csv::Writer::from_writer(ctx.create("global_scaling.csv")?);
    inv.write_record([
        "lambda",
        "expected_gap",
        "variance_gap",
        "max_gap_error",
        "pass",
    ])?;
    cmp.write_record(["lambda", "statistic", "rescaled", "shifted", "z"])?;
    glob.write_record([
        "lambda",
        "q",
        "ratio",
        "ratio_stderr",
        "predicted",
        "z",
        "pass",
    ])?;
    for &lambda in &cfg.run.lambdas {
        let r = scale_invariance_check(&cone, &triple, lambda, replicas, ctx.seed)?;
        inv.write_record([
            lambda.to_string(),
            r.expected_gap.to_string(),
            r.variance_gap.to_string(),
            r.max_gap_error.to_string(),
            r.pass.to_string(),
        ])?;
        for m in &r.moments {
            cmp.write_record([
                lambda.to_string(),
                m.name.to_string(),
                m.rescaled.to_string(),
                m.shifted.to_string(),
                m.z.to_string(),
            ])?;
        }
        for &q in &cfg.run.qs {
            let g = global_scaling_check(&triple, &cone, lambda, q, replicas, ctx.seed)?;
            glob.write_record([
                g.lambda.to_string(),
                g.q.to_string(),
                g.ratio.to_string(),
                g.ratio_stderr.to_string(),
                g.predicted.to_string(),
                g.z.to_string(),
                g.pass.to_string(),
            ])?;
        }
    }
    inv.flush()?;
    cmp.flush()?;
    glob.flush()?;
    drop((inv, cmp, glob));
    if let Some(scales) = &cfg.run.scales {
        let length = cfg.grid.expect("validated grid").length;
        moment_fit(ctx, &triple, cone, length, scales)?;
    }
    Ok(())
}

/// Random `(l, T, τ)` with `l ≤ T` and `τ` spread over both overlap branches
/// and the disjoint range.
pub fn selftest_configs(seed: u64, count: usize) -> Vec<(f64, f64, f64)> {
    let mut rng = rng_from_seed(derive_seed(seed, "geometry-selftest", 0));
    (0..count)
        .map(|_| {
            let t = 10f64.powf(rng.gen_range(-1.0..1.0));
            let l = t * 10f64.powf(rng.gen_range(-3.0..0.0));
            let tau = match rng.gen_range(0..3) {
                0 => rng.gen_range(0.0..l),
                1 => rng.gen_range(l..=t),
                _ => rng.gen_range(0.0..1.5 * t),
            };
            (l, t, tau)
        })
        .collect()
}

fn geometry_selftest(ctx: &mut Ctx) -> Result<()> {
    ctx.art.seeds.push(("geometry-selftest".into(), ctx.seed));
    let configs = selftest_configs(ctx.seed, SELFTEST_CONFIGS);
    let mut w = csv::Writer::from_writer(ctx.create("geometry_selftest.csv")?);
    w.write_record(["l", "T", "tau", "analytic", "quadrature", "abs_diff"])?;
    let mut worst = 0.0f64;
    for (l, t, tau) in configs {
        let p = ConeParams::new(l, t)?;
        let a = cone_overlap(&p, tau)?;
        let q = overlap_by_quadrature(&p, tau)?;
        let d = (a - q).abs();
        worst = worst.max(d);
        w.write_record([l, t, tau, a, q, d].map(|v| v.to_string()))?;
    }
    w.flush()?;
    drop(w);
    ctx.result("max_abs_diff", worst);
    ctx.result("pass", worst <= SELFTEST_TOLERANCE);
    if worst > SELFTEST_TOLERANCE {
        return Err(MrmError::numerical(
            "geometry-selftest",
            format!("analytic and quadrature overlaps differ by {worst:e}"),
        ));
    }
    Ok(())
}
