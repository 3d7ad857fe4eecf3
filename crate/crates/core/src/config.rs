//! Experiment configuration: TOML with one level of sections
//! (`model`, `grid`, `set`, `run`, `output`).
//!
//! Parsing validates every constraint the downstream modules would check, so
//! an accepted configuration never fails validation inside a sampler. All
//! problems are collected and reported together.
//!
//! ```toml
//! [model]
//! kind = "lognormal"
//! sigma2 = 0.3
//!
//! [grid]
//! n = 8192
//! length = 1.0
//! resolution = 0.00048828125
//! integral_scale = 1.0
//!
//! [set]
//! kind = "cantor"
//! ratio = 0.3333333333333333
//! depth = 12
//!
//! [run]
//! replicas = 50
//! seed = 1
//! ```

use std::path::PathBuf;

use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::chaos2d::{Kpz2dSetup, MAX_GRID_POINTS_2D};
use crate::error::{ConfigIssue, MrmError, Result};
use crate::levy::{
    check_nondegenerate, critical_moment, normalize, Atom, DensityJumps, JumpMeasure, LevyTriple,
    PowerLawSide,
};
use crate::measure::MIN_SCALE_OVER_L;
use crate::synthesis::{DEFAULT_POINTS_PER_L, MAX_GRID_POINTS};

/// Experiment commands of the `mrm` runner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    ZetaTable,
    #[value(name = "simulate-1d")]
    Simulate1d,
    #[value(name = "kpz-1d")]
    Kpz1d,
    ScalingCheck,
    #[value(name = "kpz-2d")]
    Kpz2d,
    GffKpz,
    GeometrySelftest,
}

impl Command {
    pub fn as_str(&self) -> &'static str {
        match self {
            Command::ZetaTable => "zeta-table",
            Command::Simulate1d => "simulate-1d",
            Command::Kpz1d => "kpz-1d",
            Command::ScalingCheck => "scaling-check",
            Command::Kpz2d => "kpz-2d",
            Command::GffKpz => "gff-kpz",
            Command::GeometrySelftest => "geometry-selftest",
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    model: Option<RawModel>,
    grid: Option<RawGrid>,
    set: Option<RawSet>,
    run: Option<RawRun>,
    output: Option<RawOutput>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    kind: Option<String>,
    sigma2: Option<f64>,
    drift: Option<f64>,
    atom_x: Option<Vec<f64>>,
    atom_w: Option<Vec<f64>>,
    pos_c: Option<f64>,
    pos_alpha: Option<f64>,
    pos_lambda: Option<f64>,
    pos_upper: Option<f64>,
    neg_c: Option<f64>,
    neg_alpha: Option<f64>,
    neg_lambda: Option<f64>,
    neg_upper: Option<f64>,
    eps: Option<f64>,
    x_max: Option<f64>,
    gamma2: Option<f64>,
    radius: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGrid {
    n: Option<i64>,
    length: Option<f64>,
    resolution: Option<f64>,
    integral_scale: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSet {
    kind: Option<String>,
    ratio: Option<f64>,
    depth: Option<i64>,
    points: Option<Vec<f64>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRun {
    replicas: Option<i64>,
    seed: Option<i64>,
    qs: Option<Vec<f64>>,
    scales: Option<Vec<f64>>,
    lambdas: Option<Vec<f64>>,
    tolerance: Option<f64>,
    levels: Option<Vec<i64>>,
    base: Option<i64>,
    inner_radius: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    dir: Option<String>,
    dumps: Option<bool>,
    max_dumps: Option<i64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelSpec {
    OneD(LevyTriple),
    Lognormal2d { gamma2: f64, radius: f64 },
    Gff { gamma2: f64, radius: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub n: usize,
    pub length: f64,
    pub resolution: Option<f64>,
    pub integral_scale: f64,
    integral_scale_given: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SetSpec {
    Cantor { ratio: f64, depth: u32 },
    FullInterval,
    Points(Vec<f64>),
    CantorDust { ratio: f64, depth: u32 },
    FullSquare,
}

impl SetSpec {
    pub fn is_planar(&self) -> bool {
        matches!(self, SetSpec::CantorDust { .. } | SetSpec::FullSquare)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub replicas: usize,
    pub seed: u64,
    pub qs: Vec<f64>,
    pub scales: Option<Vec<f64>>,
    pub lambdas: Vec<f64>,
    pub tolerance: Option<f64>,
    pub levels: Option<Vec<u32>>,
    pub base: Option<u32>,
    pub inner_radius: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputSpec {
    pub dir: PathBuf,
    pub dumps: bool,
    /// Realizations written as binary dumps by `simulate-1d`.
    pub max_dumps: usize,
}

/// A validated configuration for one command.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub command: Command,
    pub model: Option<ModelSpec>,
    pub grid: Option<GridSpec>,
    pub set: Option<SetSpec>,
    pub run: RunSpec,
    pub output: OutputSpec,
    /// SHA-256 of the configuration text.
    pub hash: String,
}

pub const DEFAULT_OUTPUT_DIR: &str = "mrm-out";
pub const DEFAULT_MAX_DUMPS: usize = 4;
pub const DEFAULT_EPS: f64 = 1e-3;
pub const DEFAULT_X_MAX: f64 = 20.0;

struct Issues(Vec<ConfigIssue>);

/// Sections that appeared in the text, parsed or not.
#[derive(Clone, Copy)]
struct Present {
    model: bool,
    grid: bool,
    set: bool,
}

impl Issues {
    fn push(&mut self, key: &str, message: impl Into<String>) {
        self.0.push(ConfigIssue {
            key: key.into(),
            message: message.into(),
        });
    }

    fn check(&mut self, ok: bool, key: &str, message: impl FnOnce() -> String) {
        if !ok {
            self.push(key, message());
        }
    }
}

fn positive(x: f64) -> bool {
    x.is_finite() && x > 0.0
}

fn to_usize(v: Option<i64>, key: &str, min: i64, issues: &mut Issues) -> Option<usize> {
    match v {
        Some(n) if n >= min => Some(n as usize),
        Some(n) => {
            issues.push(key, format!("must be ≥ {min}, got {n}"));
            None
        }
        None => None,
    }
}

fn strictly_increasing(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[0] < w[1])
}

pub fn config_hash(text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

impl ExperimentConfig {
    /// Parses and validates `text` for `command`.
    pub fn parse(text: &str, command: Command) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| {
            let key = e.span().map_or_else(
                || "config".to_string(),
                |s| format!("config@{}..{}", s.start, s.end),
            );
            MrmError::Config(vec![ConfigIssue {
                key,
                message: e.message().trim().to_string(),
            }])
        })?;
        let mut issues = Issues(Vec::new());
        let model = raw.model.as_ref().and_then(|m| parse_model(m, &mut issues));
        let grid = raw.grid.as_ref().map(|g| parse_grid(g, &mut issues));
        let set = raw.set.as_ref().and_then(|s| parse_set(s, &mut issues));
        let run = parse_run(raw.run.as_ref().unwrap_or(&RawRun::default()), &mut issues);
        let out = raw.output.unwrap_or_default();
        let output = OutputSpec {
            dir: PathBuf::from(out.dir.unwrap_or_else(|| DEFAULT_OUTPUT_DIR.into())),
            dumps: out.dumps.unwrap_or(true),
            max_dumps: to_usize(out.max_dumps, "output.max_dumps", 0, &mut issues)
                .unwrap_or(DEFAULT_MAX_DUMPS),
        };
        if output.dir.as_os_str().is_empty() {
            issues.push("output.dir", "must not be empty");
        }
        let cfg = ExperimentConfig {
            command,
            model,
            grid: grid.flatten(),
            set,
            run,
            output,
            hash: config_hash(text),
        };
        let present = Present {
            model: raw.model.is_some(),
            grid: raw.grid.is_some(),
            set: raw.set.is_some(),
        };
        cfg.check_command(&mut issues, present);
        if issues.0.is_empty() {
            Ok(cfg)
        } else {
            Err(MrmError::Config(issues.0))
        }
    }

    pub fn triple(&self) -> Option<&LevyTriple> {
        match &self.model {
            Some(ModelSpec::OneD(t)) => Some(t),
            _ => None,
        }
    }

    fn check_command(&self, issues: &mut Issues, present: Present) {
        let cmd = self.command;
        let before = issues.0.len();
        let needs_1d = matches!(cmd, Command::Simulate1d | Command::Kpz1d);
        match (&self.model, cmd) {
            (_, Command::GeometrySelftest) => {}
            (None, _) if !present.model => {
                issues.push("model", format!("{} needs a [model] section", cmd.as_str()))
            }
            (Some(ModelSpec::OneD(_)), Command::Kpz2d | Command::GffKpz) => {
                issues.push("model.kind", format!("{} needs a 2D model", cmd.as_str()))
            }
            (Some(ModelSpec::Lognormal2d { .. } | ModelSpec::Gff { .. }), _) if needs_1d => {
                issues.push("model.kind", format!("{} needs a 1D model", cmd.as_str()))
            }
            (Some(ModelSpec::Gff { .. }), Command::Kpz2d | Command::ScalingCheck) => issues.push(
                "model.kind",
                format!("{} needs kind = \"lognormal-2d\"", cmd.as_str()),
            ),
            (Some(ModelSpec::Lognormal2d { .. }), Command::GffKpz) => {
                issues.push("model.kind", "gff-kpz needs kind = \"gff\"")
            }
            _ => {}
        }
        if issues.0.len() > before || (self.model.is_none() && cmd != Command::GeometrySelftest) {
            return;
        }
        let run = &self.run;
        if let (Some(ModelSpec::Lognormal2d { .. } | ModelSpec::Gff { .. }), Some(g)) =
            (&self.model, &self.grid)
        {
            issues.check(
                g.resolution.is_none() && g.integral_scale_given.is_none(),
                "grid",
                || {
                    "2D grids take only n; l is the cell spacing and the scale is model.radius"
                        .into()
                },
            );
        }
        if cmd == Command::ZetaTable {
            issues.check(!run.qs.is_empty(), "run.qs", || {
                "zeta-table needs at least one q".into()
            });
            issues.check(strictly_increasing(&run.qs), "run.qs", || {
                "must be strictly increasing".into()
            });
            return;
        }
        if cmd == Command::GeometrySelftest {
            return;
        }
        let simulates_1d = matches!(self.model, Some(ModelSpec::OneD(_)));
        if simulates_1d {
            let t = self.triple().expect("1D model");
            match critical_moment(t) {
                Ok(qc) => issues.check(qc > 1.0, "model", || {
                    format!("critical moment q_c = {qc} must exceed 1")
                }),
                Err(e) => issues.push("model", e.to_string()),
            }
        }
        let Some(grid) = self.grid else {
            if !present.grid {
                issues.push("grid", format!("{} needs a [grid] section", cmd.as_str()));
            }
            return;
        };
        if simulates_1d {
            check_grid_1d(&grid, issues);
        } else {
            issues.check(
                grid.n
                    .checked_mul(grid.n)
                    .is_some_and(|p| p <= MAX_GRID_POINTS_2D),
                "grid.n",
                || {
                    format!(
                        "{0}×{0} exceeds the dense 2D limit of {MAX_GRID_POINTS_2D} points",
                        grid.n
                    )
                },
            );
        }
        match cmd {
            Command::Simulate1d => {
                if let Some(scales) = &run.scales {
                    issues.check(run.replicas >= 100, "run.replicas", || {
                        "moment estimation needs at least 100 replicas".into()
                    });
                    check_moment_scales(scales, &grid, issues);
                    self.check_moment_orders(issues);
                }
            }
            Command::Kpz1d => self.check_kpz_1d(&grid, issues, present),
            Command::ScalingCheck => {
                issues.check(run.replicas >= 2, "run.replicas", || {
                    "scaling checks need at least 2 replicas".into()
                });
                issues.check(!run.lambdas.is_empty(), "run.lambdas", || {
                    "need at least one λ".into()
                });
                if let Some(ModelSpec::Lognormal2d { radius, .. }) = self.model {
                    issues.check(
                        run.qs.iter().all(|q| (0.0..=1.0).contains(q)),
                        "run.qs",
                        || "2D ball moments need q in [0, 1]".into(),
                    );
                    let spacing = 2.0 * radius / grid.n as f64;
                    for &l in &run.lambdas {
                        issues.check(
                            l * radius >= 16.0 * spacing * (1.0 - 1e-12),
                            "run.lambdas",
                            || format!("ball radius λR = {} is below 16 grid spacings", l * radius),
                        );
                    }
                } else {
                    self.check_moment_orders(issues);
                    let l = grid.resolution.unwrap_or(grid.integral_scale);
                    let points = DEFAULT_POINTS_PER_L * grid.integral_scale / l;
                    issues.check(points.round() as usize <= MAX_GRID_POINTS, "grid.resolution", || {
                        format!("global scaling simulates [0, T] with {points} points, above {MAX_GRID_POINTS}")
                    });
                    if let Some(scales) = &run.scales {
                        issues.check(run.replicas >= 100, "run.replicas", || {
                            "moment estimation needs at least 100 replicas".into()
                        });
                        check_moment_scales(scales, &grid, issues);
                    }
                }
            }
            Command::Kpz2d | Command::GffKpz => self.check_kpz_2d(&grid, issues, present),
            _ => {}
        }
    }

    fn check_moment_orders(&self, issues: &mut Issues) {
        let t = self.triple().expect("1D model");
        for &q in &self.run.qs {
            let finite = q >= 0.0 && t.zeta(q).is_ok_and(|z| z.is_finite());
            issues.check(finite, "run.qs", || {
                format!("moment order {q} must be ≥ 0 with ζ(q) finite")
            });
        }
    }

    fn check_kpz_1d(&self, grid: &GridSpec, issues: &mut Issues, present: Present) {
        match &self.set {
            None if present.set => {}
            None => issues.push("set", "kpz-1d needs a [set] section"),
            Some(s) if s.is_planar() => issues.push("set.kind", "kpz-1d needs a 1D set"),
            Some(SetSpec::Points(p)) => issues.check(
                p.iter().all(|x| (0.0..=grid.length).contains(x)),
                "set.points",
                || format!("points must lie in [0, {}]", grid.length),
            ),
            _ => {}
        }
        if let Some(t) = self.triple() {
            let lebesgue = t.m == 0.0 && t.sigma2 == 0.0 && matches!(t.nu, JumpMeasure::None);
            if !lebesgue {
                match check_nondegenerate(t) {
                    Ok(nd) => issues.check(nd.nondegenerate, "model", || {
                        "the triple is degenerate".into()
                    }),
                    Err(e) => issues.push("model", e.to_string()),
                }
            }
        }
        if let Some(scales) = &self.run.scales {
            issues.check(scales.len() >= 4, "run.scales", || {
                "box counting needs at least 4 scales".into()
            });
            issues.check(
                scales.iter().all(|s| positive(*s) && *s <= 1.0),
                "run.scales",
                || "box sizes are fractions of the total mass in (0, 1]".into(),
            );
            let (lo, hi) = scales
                .iter()
                .fold((f64::INFINITY, 0.0f64), |(a, b), &s| (a.min(s), b.max(s)));
            issues.check(hi / lo >= 8.0 * (1.0 - 1e-12), "run.scales", || {
                "scales must span a factor of at least 8".into()
            });
        }
    }

    fn check_kpz_2d(&self, grid: &GridSpec, issues: &mut Issues, present: Present) {
        match &self.set {
            None if present.set => {}
            None => issues.push(
                "set",
                format!("{} needs a [set] section", self.command.as_str()),
            ),
            Some(s) if !s.is_planar() => {
                issues.push("set.kind", "2D commands need cantor-dust or full-square")
            }
            _ => {}
        }
        let base = self
            .run
            .base
            .unwrap_or_else(|| self.set.as_ref().map_or(2, natural_base));
        if let Some(levels) = &self.run.levels {
            issues.check(levels.len() >= 3, "run.levels", || {
                "need at least 3 levels".into()
            });
            issues.check(levels.windows(2).all(|w| w[0] < w[1]), "run.levels", || {
                "must be strictly increasing".into()
            });
            let finest = levels.iter().copied().max().unwrap_or(0);
            issues.check(
                (base as f64).powi(finest as i32) <= grid.n as f64,
                "run.levels",
                || format!("level {finest} squares are smaller than a grid cell"),
            );
        } else {
            let count = Kpz2dSetup::default_levels(grid.n, base).len();
            issues.check(count >= 3, "grid.n", || {
                format!(
                    "{} cells per side leave only {count} covering levels in base {base}; need 3",
                    grid.n
                )
            });
        }
        if let Some(ModelSpec::Gff { radius, .. }) = self.model {
            match self.run.inner_radius {
                None => issues.push(
                    "run.inner_radius",
                    "gff-kpz needs the radius r < R containing the set",
                ),
                Some(r) => issues.check(positive(r) && r < radius, "run.inner_radius", || {
                    format!("need 0 < r < R = {radius}, got {r}")
                }),
            }
        }
    }
}

/// Subdivision base of the covering squares when `run.base` is not given.
pub fn natural_base(set: &SetSpec) -> u32 {
    match *set {
        SetSpec::CantorDust { ratio, .. } => {
            let inverse = 1.0 / ratio;
            if (inverse - inverse.round()).abs() < 1e-9 {
                inverse.round() as u32
            } else {
                2
            }
        }
        _ => 2,
    }
}

fn check_grid_1d(grid: &GridSpec, issues: &mut Issues) {
    issues.check(grid.n <= MAX_GRID_POINTS, "grid.n", || {
        format!(
            "1D grids are capped at {MAX_GRID_POINTS} points, got {}",
            grid.n
        )
    });
    match grid.resolution {
        None => issues.push(
            "grid.resolution",
            "1D simulations need the resolution scale l",
        ),
        Some(l) => {
            issues.check(l <= grid.integral_scale, "grid.resolution", || {
                format!("l = {l} exceeds T = {}", grid.integral_scale)
            });
            let spacing = grid.length / grid.n as f64;
            issues.check(spacing <= l / 4.0 * (1.0 + 1e-12), "grid.n", || {
                format!("grid spacing {spacing} is coarser than l/4 = {}", l / 4.0)
            });
        }
    }
}

fn check_moment_scales(scales: &[f64], grid: &GridSpec, issues: &mut Issues) {
    issues.check(scales.len() >= 4, "run.scales", || {
        "moment fit needs at least 4 scales".into()
    });
    issues.check(strictly_increasing(scales), "run.scales", || {
        "must be strictly increasing".into()
    });
    let l = grid.resolution.unwrap_or(0.0);
    for &s in scales {
        issues.check(
            positive(s) && s <= grid.integral_scale && s <= grid.length,
            "run.scales",
            || format!("scale {s} must be in (0, min(T, length)]"),
        );
        issues.check(
            s >= MIN_SCALE_OVER_L * l * (1.0 - 1e-12),
            "run.scales",
            || format!("scale {s} is below {MIN_SCALE_OVER_L}·l"),
        );
    }
}

fn parse_model(m: &RawModel, issues: &mut Issues) -> Option<ModelSpec> {
    let Some(kind) = m.kind.as_deref() else {
        issues.push("model.kind", "missing");
        return None;
    };
    let jump_keys = [
        ("atom_x", m.atom_x.is_some()),
        ("atom_w", m.atom_w.is_some()),
        ("pos_c", m.pos_c.is_some()),
        ("pos_alpha", m.pos_alpha.is_some()),
        ("pos_lambda", m.pos_lambda.is_some()),
        ("pos_upper", m.pos_upper.is_some()),
        ("neg_c", m.neg_c.is_some()),
        ("neg_alpha", m.neg_alpha.is_some()),
        ("neg_lambda", m.neg_lambda.is_some()),
        ("neg_upper", m.neg_upper.is_some()),
        ("eps", m.eps.is_some()),
        ("x_max", m.x_max.is_some()),
    ];
    let one_d_keys = [("sigma2", m.sigma2.is_some()), ("drift", m.drift.is_some())];
    let two_d_keys = [
        ("gamma2", m.gamma2.is_some()),
        ("radius", m.radius.is_some()),
    ];
    let reject = |issues: &mut Issues, keys: &[(&str, bool)]| {
        for (k, present) in keys {
            if *present {
                issues.push(
                    &format!("model.{k}"),
                    format!("not used by kind = \"{kind}\""),
                );
            }
        }
    };
    let sigma2 = m.sigma2.unwrap_or(0.0);
    issues.check(sigma2.is_finite() && sigma2 >= 0.0, "model.sigma2", || {
        format!("must be ≥ 0, got {sigma2}")
    });
    let nu = match kind {
        "lebesgue" => {
            reject(issues, &one_d_keys);
            reject(issues, &jump_keys);
            reject(issues, &two_d_keys);
            return Some(ModelSpec::OneD(LevyTriple::lebesgue()));
        }
        "lognormal" => {
            reject(issues, &jump_keys);
            reject(issues, &two_d_keys);
            issues.check(m.sigma2.is_some(), "model.sigma2", || {
                "required for kind = \"lognormal\"".into()
            });
            JumpMeasure::None
        }
        "atomic" => {
            reject(issues, &jump_keys[2..]);
            reject(issues, &two_d_keys);
            let (xs, ws) = (
                m.atom_x.clone().unwrap_or_default(),
                m.atom_w.clone().unwrap_or_default(),
            );
            issues.check(!xs.is_empty(), "model.atom_x", || {
                "need at least one atom".into()
            });
            issues.check(xs.len() == ws.len(), "model.atom_w", || {
                format!("{} weights for {} atoms", ws.len(), xs.len())
            });
            JumpMeasure::Atomic(xs.iter().zip(&ws).map(|(&x, &w)| Atom { x, w }).collect())
        }
        "density" => {
            reject(issues, &jump_keys[..2]);
            reject(issues, &two_d_keys);
            let side = |c: Option<f64>,
                        alpha: Option<f64>,
                        lambda: Option<f64>,
                        upper: Option<f64>,
                        name: &str,
                        issues: &mut Issues| {
                match (c, alpha) {
                    (None, None) if lambda.is_none() && upper.is_none() => None,
                    (Some(c), Some(alpha)) => Some(PowerLawSide {
                        c,
                        alpha,
                        lambda: lambda.unwrap_or(0.0),
                        upper,
                    }),
                    _ => {
                        issues.push(
                            &format!("model.{name}_c"),
                            format!("{name}_c and {name}_alpha must be given together"),
                        );
                        None
                    }
                }
            };
            let positive_side = side(
                m.pos_c,
                m.pos_alpha,
                m.pos_lambda,
                m.pos_upper,
                "pos",
                issues,
            );
            let negative_side = side(
                m.neg_c,
                m.neg_alpha,
                m.neg_lambda,
                m.neg_upper,
                "neg",
                issues,
            );
            issues.check(
                positive_side.is_some() || negative_side.is_some(),
                "model",
                || "density model needs pos_* or neg_* parameters".into(),
            );
            JumpMeasure::Density(DensityJumps {
                positive: positive_side,
                negative: negative_side,
                eps: m.eps.unwrap_or(DEFAULT_EPS),
                x_max: m.x_max.unwrap_or(DEFAULT_X_MAX),
            })
        }
        "lognormal-2d" | "gff" => {
            reject(issues, &one_d_keys);
            reject(issues, &jump_keys);
            let gamma2 = m.gamma2.unwrap_or(f64::NAN);
            issues.check(
                gamma2.is_finite() && (0.0..4.0).contains(&gamma2),
                "model.gamma2",
                || format!("required, must be in [0, 4), got {:?}", m.gamma2),
            );
            let radius = m.radius.unwrap_or(1.0);
            issues.check(positive(radius), "model.radius", || {
                format!("must be > 0, got {radius}")
            });
            return Some(if kind == "gff" {
                ModelSpec::Gff { gamma2, radius }
            } else {
                ModelSpec::Lognormal2d { gamma2, radius }
            });
        }
        other => {
            issues.push(
                "model.kind",
                format!("unknown kind \"{other}\" (expected lebesgue, lognormal, atomic, density, lognormal-2d, gff)"),
            );
            return None;
        }
    };
    let before = issues.0.len();
    if let Err(e) = nu.validate() {
        issues.push("model", e.to_string());
    }
    if issues.0.len() > before {
        return None;
    }
    let triple = match m.drift {
        Some(drift) => LevyTriple::new(drift, sigma2, nu),
        None => normalize(sigma2, nu),
    };
    match triple {
        Ok(t) => Some(ModelSpec::OneD(t)),
        Err(e) => {
            issues.push("model", e.to_string());
            None
        }
    }
}

fn parse_grid(g: &RawGrid, issues: &mut Issues) -> Option<GridSpec> {
    let n = to_usize(g.n, "grid.n", 1, issues);
    if g.n.is_none() {
        issues.push("grid.n", "missing");
    }
    let length = g.length.unwrap_or(1.0);
    issues.check(positive(length), "grid.length", || {
        format!("must be > 0, got {length}")
    });
    let integral_scale = g.integral_scale.unwrap_or(length);
    issues.check(positive(integral_scale), "grid.integral_scale", || {
        format!("must be > 0, got {integral_scale}")
    });
    if let Some(l) = g.resolution {
        issues.check(positive(l), "grid.resolution", || {
            format!("must be > 0, got {l}")
        });
    }
    Some(GridSpec {
        n: n?,
        length,
        resolution: g.resolution,
        integral_scale,
        integral_scale_given: g.integral_scale,
    })
}

fn parse_set(s: &RawSet, issues: &mut Issues) -> Option<SetSpec> {
    let kind = s.kind.as_deref().unwrap_or("");
    let unused = |issues: &mut Issues, keys: &[(&str, bool)]| {
        for (k, present) in keys {
            if *present {
                issues.push(
                    &format!("set.{k}"),
                    format!("not used by kind = \"{kind}\""),
                );
            }
        }
    };
    let cantor_params = |issues: &mut Issues| {
        let ratio = s.ratio.unwrap_or(1.0 / 3.0);
        issues.check(ratio > 0.0 && ratio <= 0.5, "set.ratio", || {
            format!("must be in (0, 1/2], got {ratio}")
        });
        let depth = s.depth.unwrap_or(12);
        issues.check((1..=24).contains(&depth), "set.depth", || {
            format!("must be in 1..=24, got {depth}")
        });
        (ratio, depth.clamp(1, 24) as u32)
    };
    match kind {
        "cantor" => {
            unused(issues, &[("points", s.points.is_some())]);
            let (ratio, depth) = cantor_params(issues);
            Some(SetSpec::Cantor { ratio, depth })
        }
        "cantor-dust" => {
            unused(issues, &[("points", s.points.is_some())]);
            let (ratio, depth) = cantor_params(issues);
            issues.check(depth <= 11, "set.depth", || {
                "dust depth must be ≤ 11".into()
            });
            Some(SetSpec::CantorDust { ratio, depth })
        }
        "full-interval" | "full-square" => {
            unused(
                issues,
                &[
                    ("ratio", s.ratio.is_some()),
                    ("depth", s.depth.is_some()),
                    ("points", s.points.is_some()),
                ],
            );
            Some(if kind == "full-square" {
                SetSpec::FullSquare
            } else {
                SetSpec::FullInterval
            })
        }
        "points" => {
            unused(
                issues,
                &[("ratio", s.ratio.is_some()), ("depth", s.depth.is_some())],
            );
            let p = s.points.clone().unwrap_or_default();
            issues.check(!p.is_empty(), "set.points", || {
                "need at least one point".into()
            });
            issues.check(p.iter().all(|x| x.is_finite()), "set.points", || {
                "points must be finite".into()
            });
            Some(SetSpec::Points(p))
        }
        "" => {
            issues.push("set.kind", "missing");
            None
        }
        other => {
            issues.push(
                "set.kind",
                format!("unknown kind \"{other}\" (expected cantor, full-interval, points, cantor-dust, full-square)"),
            );
            None
        }
    }
}

fn parse_run(r: &RawRun, issues: &mut Issues) -> RunSpec {
    let replicas = to_usize(r.replicas, "run.replicas", 1, issues).unwrap_or(1);
    let seed = match r.seed {
        Some(s) if s >= 0 => s as u64,
        Some(s) => {
            issues.push("run.seed", format!("must be ≥ 0, got {s}"));
            0
        }
        None => 0,
    };
    let qs =
        r.qs.clone()
            .unwrap_or_else(|| vec![0.0, 0.5, 1.0, 1.5, 2.0]);
    issues.check(qs.iter().all(|q| q.is_finite()), "run.qs", || {
        "moment orders must be finite".into()
    });
    if let Some(scales) = &r.scales {
        issues.check(scales.iter().all(|s| positive(*s)), "run.scales", || {
            "scales must be > 0".into()
        });
    }
    let lambdas = r.lambdas.clone().unwrap_or_else(|| vec![0.5, 0.25]);
    issues.check(
        lambdas.iter().all(|l| *l > 0.0 && *l <= 1.0),
        "run.lambdas",
        || "λ must be in (0, 1]".into(),
    );
    if let Some(t) = r.tolerance {
        issues.check(positive(t), "run.tolerance", || {
            format!("must be > 0, got {t}")
        });
    }
    let levels = r.levels.as_ref().map(|ls| {
        issues.check(
            ls.iter().all(|l| (0..=10).contains(l)),
            "run.levels",
            || "levels must be in 0..=10".into(),
        );
        ls.iter().map(|&l| l.clamp(0, 10) as u32).collect()
    });
    let base = r.base.map(|b| {
        issues.check((2..=5).contains(&b), "run.base", || {
            format!("must be in 2..=5, got {b}")
        });
        b.clamp(2, 5) as u32
    });
    RunSpec {
        replicas,
        seed,
        qs,
        scales: r.scales.clone(),
        lambdas,
        tolerance: r.tolerance,
        levels,
        base,
        inner_radius: r.inner_radius,
    }
}
