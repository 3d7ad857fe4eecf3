//! Samplers for the log-field `ω_l(t) = μ(A_l(t))` on uniform grids.
//!
//! Three routes, picked from the jump measure of the triple:
//!
//! * `gaussian-exact` (`ν = 0`): multivariate normal with the cone-overlap
//!   covariance. The covariance is Toeplitz on a uniform grid, so the factor
//!   comes from the `O(n²)` Schur algorithm.
//! * `poisson-exact` (finitely many atoms): a marked Poisson process with
//!   intensity `θ ⊗ ν` on the half-plane, summed over each cone, plus the
//!   Gaussian part when `σ² > 0`.
//! * `truncated-general` (density jumps): jumps below `ε` are replaced by a
//!   Gaussian with the same variance and the remaining finite-mass part is
//!   sampled as in the Poisson route.
//!
//! Every sample is a deterministic function of its seed. The Gaussian and
//! jump components draw from separate derived streams.

use rand::Rng;
use rand_distr::{Distribution, Exp, Poisson, StandardNormal};

use crate::cone::{cone_mass, overlap_covariance_column, point_in_cone, ConeParams};
use crate::error::{ensure, MrmError, Result};
use crate::levy::{small_jump_moments, Atom, DensityJumps, JumpMeasure, LevyTriple, PowerLawSide};
use crate::linalg::{toeplitz_cholesky, CholeskyFactor};
use crate::seed::{derive_seed, rng_from_seed};
use crate::stats;

/// Largest grid accepted by the exact Gaussian paths.
pub const MAX_GRID_POINTS: usize = 8192;
/// Default number of grid points per resolution scale `l`.
pub const DEFAULT_POINTS_PER_L: f64 = 4.0;

/// Uniform grid of `n` cells of width `spacing` starting at `start`. Field
/// values live at the cell midpoints `start + (i + ½)·spacing`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid1D {
    pub start: f64,
    pub spacing: f64,
    pub n: usize,
}

impl Grid1D {
    pub fn new(start: f64, spacing: f64, n: usize) -> Result<Self> {
        ensure!(start.is_finite(), "grid start must be finite");
        ensure!(
            spacing.is_finite() && spacing > 0.0,
            "grid spacing must be > 0, got {spacing}"
        );
        ensure!(n >= 1, "grid needs at least one cell");
        Ok(Grid1D { start, spacing, n })
    }

    /// `n` equal cells covering `[0, length]`.
    pub fn cells(length: f64, n: usize) -> Result<Self> {
        ensure!(
            length.is_finite() && length > 0.0,
            "domain length must be > 0, got {length}"
        );
        ensure!(n >= 1, "grid needs at least one cell");
        Grid1D::new(0.0, length / n as f64, n)
    }

    pub fn point(&self, i: usize) -> f64 {
        self.start + (i as f64 + 0.5) * self.spacing
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.point(i)).collect()
    }

    pub fn end(&self) -> f64 {
        self.start + self.n as f64 * self.spacing
    }

    pub fn length(&self) -> f64 {
        self.n as f64 * self.spacing
    }

    /// Window of cone apexes that can reach the grid: `[start − T/2, end + T/2]`.
    pub fn covering_window(&self, cone: &ConeParams) -> (f64, f64) {
        let half = 0.5 * cone.integral_scale;
        (self.start - half, self.end() + half)
    }
}

/// Refuses grids coarser than `l / points_per_l`; `points_per_l` must lie in
/// `[4, 16]`.
pub fn check_resolution(grid: &Grid1D, cone: &ConeParams, points_per_l: f64) -> Result<()> {
    ensure!(
        (4.0..=16.0).contains(&points_per_l),
        "points per resolution scale must be in [4, 16], got {points_per_l}"
    );
    let limit = cone.resolution / points_per_l;
    ensure!(
        grid.spacing <= limit * (1.0 + 1e-12),
        "grid spacing {} is coarser than l/{points_per_l} = {limit}",
        grid.spacing
    );
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SynthesisMethod {
    GaussianExact,
    PoissonExact,
    TruncatedGeneral,
}

impl SynthesisMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            SynthesisMethod::GaussianExact => "gaussian-exact",
            SynthesisMethod::PoissonExact => "poisson-exact",
            SynthesisMethod::TruncatedGeneral => "truncated-general",
        }
    }

    pub fn code(&self) -> u32 {
        match self {
            SynthesisMethod::GaussianExact => 0,
            SynthesisMethod::PoissonExact => 1,
            SynthesisMethod::TruncatedGeneral => 2,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(SynthesisMethod::GaussianExact),
            1 => Some(SynthesisMethod::PoissonExact),
            2 => Some(SynthesisMethod::TruncatedGeneral),
            _ => None,
        }
    }

    pub fn for_measure(nu: &JumpMeasure) -> Self {
        match nu {
            JumpMeasure::None => SynthesisMethod::GaussianExact,
            JumpMeasure::Atomic(_) => SynthesisMethod::PoissonExact,
            JumpMeasure::Density(_) => SynthesisMethod::TruncatedGeneral,
        }
    }
}

impl std::fmt::Display for SynthesisMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A sampled log-field with the parameters that produced it.
#[derive(Debug, Clone)]
pub struct Field1D {
    pub grid: Grid1D,
    pub values: Vec<f64>,
    pub cone: ConeParams,
    pub triple: LevyTriple,
    pub seed: u64,
    pub method: SynthesisMethod,
}

// ---------------------------------------------------------------------------
// Finite jump measures and their samplers

#[derive(Debug, Clone, Copy)]
enum PanelShape {
    /// Rejection from the uniform law under `max_density`.
    Bounded { max_density: f64 },
    /// `[a, ∞)` with an exponential proposal of the given rate.
    ExpTail { rate: f64, envelope: f64 },
    /// `[a, ∞)` of an untempered power law, sampled exactly.
    Pareto,
}

#[derive(Debug, Clone, Copy)]
struct Panel {
    sign: f64,
    side: PowerLawSide,
    a: f64,
    b: f64,
    shape: PanelShape,
}

fn raw_density(side: &PowerLawSide, u: f64) -> f64 {
    (side.c.ln() - (1.0 + side.alpha) * u.ln() - side.lambda * u).exp()
}

fn uniform_open<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    // (0, 1]
    1.0 - rng.gen::<f64>()
}

impl Panel {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let s = &self.side;
        let u = match self.shape {
            PanelShape::Bounded { max_density } => loop {
                let u = self.a + (self.b - self.a) * rng.gen::<f64>();
                if u <= self.a || u >= self.b {
                    continue;
                }
                if rng.gen::<f64>() * max_density <= raw_density(s, u) {
                    break u;
                }
            },
            PanelShape::ExpTail { rate, envelope } => {
                let proposal = Exp::new(rate).expect("positive rate");
                loop {
                    let u = self.a + proposal.sample(rng);
                    let g = (-(1.0 + s.alpha) * u.ln() - (s.lambda - rate) * u).exp();
                    if rng.gen::<f64>() * envelope <= g {
                        break u;
                    }
                }
            }
            PanelShape::Pareto => self.a * uniform_open(rng).powf(-1.0 / s.alpha),
        };
        self.sign * u
    }
}

/// Density jumps restricted to `|x| ≥ cut`, prepared for exact sampling.
#[derive(Debug, Clone)]
pub struct TruncatedDensity {
    density: DensityJumps,
    cut: f64,
    panels: Vec<Panel>,
    cumulative: Vec<f64>,
    total: f64,
    sin_integral: f64,
}

const MAX_PANELS: usize = 20_000;

impl TruncatedDensity {
    pub fn new(density: &DensityJumps, cut: f64) -> Result<Self> {
        ensure!(
            cut.is_finite() && cut > 0.0,
            "truncation level must be > 0, got {cut}"
        );
        let mut panels = Vec::new();
        let mut masses = Vec::new();
        let mut sin_integral = 0.0;
        for (sign, side) in density.sides() {
            if side.c == 0.0 {
                continue;
            }
            let end = side.support_end();
            if end <= cut {
                continue;
            }
            sin_integral +=
                sign * crate::levy::side_integral(side, cut, end, density.x_max, f64::sin)?;
            let bounded_end = if end.is_finite() {
                end
            } else {
                density.x_max.max(cut)
            };
            let max_width = if side.lambda > 0.0 {
                1.0 / side.lambda
            } else {
                f64::INFINITY
            };
            let mut a = cut;
            while a < bounded_end {
                let b = (2.0 * a).min(a + max_width).min(bounded_end);
                let mass = crate::levy::side_integral(side, a, b, density.x_max, |_| 1.0)?;
                let mut max_density = raw_density(side, a).max(raw_density(side, b));
                if side.alpha < -1.0 && side.lambda > 0.0 {
                    let mode = -(1.0 + side.alpha) / side.lambda;
                    if mode > a && mode < b {
                        max_density = max_density.max(raw_density(side, mode));
                    }
                }
                if mass > 0.0 {
                    panels.push(Panel {
                        sign,
                        side: *side,
                        a,
                        b,
                        shape: PanelShape::Bounded { max_density },
                    });
                    masses.push(mass);
                }
                a = b;
                if panels.len() > MAX_PANELS {
                    return Err(MrmError::numerical(
                        "jump sampler",
                        format!("more than {MAX_PANELS} panels needed on [{cut}, {bounded_end}]"),
                    ));
                }
            }
            if !end.is_finite() {
                let a = bounded_end;
                let mass =
                    crate::levy::side_integral(side, a, f64::INFINITY, density.x_max, |_| 1.0)?;
                if mass > 0.0 {
                    let shape = if side.lambda > 0.0 {
                        let rate = 0.5 * side.lambda;
                        let log_g =
                            |u: f64| -(1.0 + side.alpha) * u.ln() - (side.lambda - rate) * u;
                        let mut peak = a;
                        if side.alpha < -1.0 {
                            peak = peak.max(-(1.0 + side.alpha) / (side.lambda - rate));
                        }
                        PanelShape::ExpTail {
                            rate,
                            envelope: log_g(peak).exp() * (1.0 + 1e-12),
                        }
                    } else {
                        PanelShape::Pareto
                    };
                    panels.push(Panel {
                        sign,
                        side: *side,
                        a,
                        b: f64::INFINITY,
                        shape,
                    });
                    masses.push(mass);
                }
            }
        }
        let mut cumulative = Vec::with_capacity(masses.len());
        let mut total = 0.0;
        for m in &masses {
            total += m;
            cumulative.push(total);
        }
        Ok(TruncatedDensity {
            density: *density,
            cut,
            panels,
            cumulative,
            total,
            sin_integral,
        })
    }

    pub fn cut(&self) -> f64 {
        self.cut
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let target = rng.gen::<f64>() * self.total;
        let k = self
            .cumulative
            .partition_point(|&c| c <= target)
            .min(self.panels.len() - 1);
        self.panels[k].sample(rng)
    }

    fn jump_exponent(&self, q: f64) -> Result<f64> {
        let mut total = 0.0;
        for (sign, side) in self.density.sides() {
            let end = side.support_end();
            if end <= self.cut || side.c == 0.0 {
                continue;
            }
            let qs = sign * q;
            total += crate::levy::side_integral(side, self.cut, end, self.density.x_max, |u| {
                (qs * u).exp_m1() - qs * u.sin()
            })?;
        }
        Ok(total)
    }
}

/// A finite jump measure ready to be sampled.
#[derive(Debug, Clone)]
pub enum FiniteJumps {
    Atoms {
        atoms: Vec<Atom>,
        cumulative: Vec<f64>,
    },
    Truncated(TruncatedDensity),
}

impl FiniteJumps {
    pub fn empty() -> Self {
        FiniteJumps::from_atoms(Vec::new())
    }

    pub fn from_atoms(atoms: Vec<Atom>) -> Self {
        let mut acc = 0.0;
        let cumulative = atoms
            .iter()
            .map(|a| {
                acc += a.w;
                acc
            })
            .collect();
        FiniteJumps::Atoms { atoms, cumulative }
    }

    /// `Λ = ν(ℝ*)`.
    pub fn total_mass(&self) -> f64 {
        match self {
            FiniteJumps::Atoms { cumulative, .. } => cumulative.last().copied().unwrap_or(0.0),
            FiniteJumps::Truncated(t) => t.total,
        }
    }

    /// `∫ sin x ν(dx)`.
    pub fn sin_integral(&self) -> f64 {
        match self {
            FiniteJumps::Atoms { atoms, .. } => atoms.iter().map(|a| a.w * a.x.sin()).sum(),
            FiniteJumps::Truncated(t) => t.sin_integral,
        }
    }

    /// `∫ (e^{qx} − 1 − q sin x) ν(dx)`.
    pub fn jump_exponent(&self, q: f64) -> Result<f64> {
        match self {
            FiniteJumps::Atoms { atoms, .. } => Ok(atoms
                .iter()
                .map(|a| a.w * ((q * a.x).exp_m1() - q * a.x.sin()))
                .sum()),
            FiniteJumps::Truncated(t) => t.jump_exponent(q),
        }
    }

    /// One jump size drawn from `ν / Λ`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            FiniteJumps::Atoms { atoms, cumulative } => {
                let target = rng.gen::<f64>() * cumulative[cumulative.len() - 1];
                let k = cumulative
                    .partition_point(|&c| c <= target)
                    .min(atoms.len() - 1);
                atoms[k].x
            }
            FiniteJumps::Truncated(t) => t.sample(rng),
        }
    }
}

/// Result of [`small_jump_split`].
#[derive(Debug, Clone)]
pub struct SmallJumpSplit {
    pub finite: FiniteJumps,
    /// `∫_{|x|<ε} x² ν(dx)`.
    pub compensating_sigma2: f64,
    /// Drift to add to `m` so that the approximating triple keeps `ψ(1) = 0`:
    /// `∫_{|x|<ε} (e^x − 1 − sin x) ν(dx) − compensating_sigma2 / 2`.
    pub drift_correction: f64,
}

/// Replaces the jumps below `eps` by a Gaussian of the same variance.
pub fn small_jump_split(nu: &JumpMeasure, eps: f64) -> Result<SmallJumpSplit> {
    ensure!(
        eps.is_finite() && eps > 0.0,
        "small-jump cutoff must be > 0, got {eps}"
    );
    nu.validate()?;
    match nu {
        JumpMeasure::None => Ok(SmallJumpSplit {
            finite: FiniteJumps::empty(),
            compensating_sigma2: 0.0,
            drift_correction: 0.0,
        }),
        JumpMeasure::Atomic(atoms) => {
            let (small, large): (Vec<Atom>, Vec<Atom>) =
                atoms.iter().partition(|a| a.x.abs() < eps);
            let sigma2: f64 = small.iter().map(|a| a.w * a.x * a.x).sum();
            let exponent: f64 = small.iter().map(|a| a.w * (a.x.exp_m1() - a.x.sin())).sum();
            Ok(SmallJumpSplit {
                finite: FiniteJumps::from_atoms(large),
                compensating_sigma2: sigma2,
                drift_correction: exponent - 0.5 * sigma2,
            })
        }
        JumpMeasure::Density(d) => {
            let (sigma2, exponent) = small_jump_moments(d, eps)?;
            ensure!(sigma2.is_finite(), "∫ x² ν(dx) diverges near 0");
            Ok(SmallJumpSplit {
                finite: FiniteJumps::Truncated(TruncatedDensity::new(d, eps)?),
                compensating_sigma2: sigma2,
                drift_correction: exponent - 0.5 * sigma2,
            })
        }
    }
}

/// Triple with a finite jump part, as used by the samplers.
#[derive(Debug, Clone)]
pub struct CompoundModel {
    pub m: f64,
    pub sigma2: f64,
    pub jumps: FiniteJumps,
}

impl CompoundModel {
    /// Exact for `ν = 0` and atomic `ν`; density jumps are split at their
    /// own cutoff `ε`.
    pub fn from_triple(triple: &LevyTriple) -> Result<Self> {
        triple.validate()?;
        match &triple.nu {
            JumpMeasure::None => Ok(CompoundModel {
                m: triple.m,
                sigma2: triple.sigma2,
                jumps: FiniteJumps::empty(),
            }),
            JumpMeasure::Atomic(atoms) => Ok(CompoundModel {
                m: triple.m,
                sigma2: triple.sigma2,
                jumps: FiniteJumps::from_atoms(atoms.clone()),
            }),
            JumpMeasure::Density(d) => {
                let split = small_jump_split(&triple.nu, d.eps)?;
                Ok(CompoundModel {
                    m: triple.m + split.drift_correction,
                    sigma2: triple.sigma2 + split.compensating_sigma2,
                    jumps: split.finite,
                })
            }
        }
    }

    pub fn psi(&self, q: f64) -> Result<f64> {
        Ok(self.m * q + 0.5 * self.sigma2 * q * q + self.jumps.jump_exponent(q)?)
    }

    /// Deterministic part of `ω_l` per unit θ-mass: `m − ∫ sin x ν(dx)`.
    fn drift_rate(&self) -> f64 {
        self.m - self.jumps.sin_integral()
    }

    /// A draw of `μ(A)` for a set of θ-mass `mass`.
    pub fn sample_region<R: Rng + ?Sized>(&self, mass: f64, rng: &mut R) -> Result<f64> {
        ensure!(mass.is_finite() && mass >= 0.0, "θ-mass must be ≥ 0");
        let mut value = mass * self.drift_rate();
        if self.sigma2 > 0.0 {
            let z: f64 = rng.sample(StandardNormal);
            value += (self.sigma2 * mass).sqrt() * z;
        }
        let rate = self.jumps.total_mass() * mass;
        if rate > 0.0 {
            let count = Poisson::new(rate)
                .map_err(|e| MrmError::numerical("poisson", e.to_string()))?
                .sample(rng);
            for _ in 0..count as u64 {
                value += self.jumps.sample(rng);
            }
        }
        Ok(value)
    }
}

// ---------------------------------------------------------------------------
// Point process

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JumpPoint {
    pub s: f64,
    pub y: f64,
    pub x: f64,
}

/// Marked Poisson points on `window × [l, ∞)`.
#[derive(Debug, Clone)]
pub struct PointCloud {
    pub points: Vec<JumpPoint>,
    pub window: (f64, f64),
    pub expected_count: f64,
}

/// Poisson points with intensity `ds · y⁻² dy · ν(dx)` on `window × [l, ∞)`.
pub fn sample_poisson_points_with<R: Rng + ?Sized>(
    window: (f64, f64),
    cone: &ConeParams,
    jumps: &FiniteJumps,
    rng: &mut R,
) -> Result<PointCloud> {
    let (lo, hi) = window;
    ensure!(
        lo.is_finite() && hi.is_finite() && hi >= lo,
        "point window must be a finite interval"
    );
    let expected_count = (hi - lo) * jumps.total_mass() / cone.resolution;
    let mut points = Vec::new();
    if expected_count > 0.0 {
        let count = Poisson::new(expected_count)
            .map_err(|e| MrmError::numerical("poisson", e.to_string()))?
            .sample(rng) as usize;
        points.reserve(count);
        for _ in 0..count {
            let s = lo + (hi - lo) * rng.gen::<f64>();
            let y = cone.resolution / uniform_open(rng);
            let x = jumps.sample(rng);
            points.push(JumpPoint { s, y, x });
        }
    }
    Ok(PointCloud {
        points,
        window,
        expected_count,
    })
}

pub fn sample_poisson_points(
    window: (f64, f64),
    cone: &ConeParams,
    jumps: &FiniteJumps,
    seed: u64,
) -> Result<PointCloud> {
    sample_poisson_points_with(window, cone, jumps, &mut rng_from_seed(seed))
}

/// Adds `Σ_{points ∈ A_l(t_i)} x` to `values`.
fn add_cone_sums(grid: &Grid1D, cloud: &PointCloud, cone: &ConeParams, values: &mut [f64]) {
    let n = grid.n;
    let mut diff = vec![0.0; n + 1];
    let inside = |i: usize, p: &JumpPoint| point_in_cone(p.s, p.y, grid.point(i), cone);
    for p in &cloud.points {
        let half = 0.5 * cone.width_at(p.y);
        let lo = ((p.s - half - grid.start) / grid.spacing - 0.5).ceil();
        let hi = ((p.s + half - grid.start) / grid.spacing - 0.5).floor();
        if hi < 0.0 || lo > (n - 1) as f64 {
            continue;
        }
        let mut lo = lo.max(0.0) as usize;
        let mut hi = hi.min((n - 1) as f64) as usize;
        // settle rounding at the cone boundary with the exact membership test
        while lo > 0 && inside(lo - 1, p) {
            lo -= 1;
        }
        while lo <= hi && !inside(lo, p) {
            lo += 1;
        }
        while hi + 1 < n && inside(hi + 1, p) {
            hi += 1;
        }
        while hi >= lo && hi > 0 && !inside(hi, p) {
            hi -= 1;
        }
        if lo > hi || !inside(lo, p) {
            continue;
        }
        diff[lo] += p.x;
        diff[hi + 1] -= p.x;
    }
    let mut acc = 0.0;
    for (v, d) in values.iter_mut().zip(&diff) {
        acc += d;
        *v += acc;
    }
}

fn gaussian_stream(seed: u64) -> crate::seed::Rng {
    rng_from_seed(derive_seed(seed, "gaussian", 0))
}

fn jump_stream(seed: u64) -> crate::seed::Rng {
    rng_from_seed(derive_seed(seed, "jumps", 0))
}

fn gaussian_factor(
    grid: &Grid1D,
    cone: &ConeParams,
    sigma2: f64,
) -> Result<Option<CholeskyFactor>> {
    if sigma2 == 0.0 {
        return Ok(None);
    }
    if grid.n > MAX_GRID_POINTS {
        return Err(MrmError::Range(format!(
            "exact Gaussian synthesis is capped at {MAX_GRID_POINTS} grid points, got {}",
            grid.n
        )));
    }
    let column = overlap_covariance_column(grid.n, grid.spacing, cone, sigma2)?;
    Ok(Some(toeplitz_cholesky(&column)?))
}

/// `ω_l = m θ + G + Σ x − θ ∫ sin x ν(dx)` from a given point cloud, with the
/// Gaussian part `G` drawn from `seed`.
pub fn assemble_omega(
    grid: &Grid1D,
    cloud: &PointCloud,
    cone: &ConeParams,
    model: &CompoundModel,
    seed: u64,
) -> Result<Vec<f64>> {
    cone.require_fine()?;
    let (need_lo, need_hi) = grid.covering_window(cone);
    if cloud.window.0 > need_lo || cloud.window.1 < need_hi {
        return Err(MrmError::Validation(format!(
            "point window [{}, {}] does not cover the cones of the grid, which need [{need_lo}, {need_hi}]",
            cloud.window.0, cloud.window.1
        )));
    }
    let mut values = match gaussian_factor(grid, cone, model.sigma2)? {
        Some(f) => f.sample(&mut gaussian_stream(seed)),
        None => vec![0.0; grid.n],
    };
    let offset = cone_mass(cone) * model.drift_rate();
    for v in values.iter_mut() {
        *v += offset;
    }
    add_cone_sums(grid, cloud, cone, &mut values);
    Ok(values)
}

/// Reusable sampler for one `(grid, cone, triple)` combination; the
/// covariance factor is computed once.
#[derive(Debug, Clone)]
pub struct FieldSampler {
    grid: Grid1D,
    cone: ConeParams,
    triple: LevyTriple,
    model: CompoundModel,
    method: SynthesisMethod,
    factor: Option<CholeskyFactor>,
    offset: f64,
}

impl FieldSampler {
    pub fn new(grid: Grid1D, cone: ConeParams, triple: &LevyTriple) -> Result<Self> {
        FieldSampler::with_resolution(grid, cone, triple, DEFAULT_POINTS_PER_L)
    }

    pub fn with_resolution(
        grid: Grid1D,
        cone: ConeParams,
        triple: &LevyTriple,
        points_per_l: f64,
    ) -> Result<Self> {
        cone.require_fine()?;
        check_resolution(&grid, &cone, points_per_l)?;
        let model = CompoundModel::from_triple(triple)?;
        let factor = gaussian_factor(&grid, &cone, model.sigma2)?;
        let offset = cone_mass(&cone) * model.drift_rate();
        Ok(FieldSampler {
            grid,
            cone,
            triple: triple.clone(),
            method: SynthesisMethod::for_measure(&triple.nu),
            model,
            factor,
            offset,
        })
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    pub fn cone(&self) -> &ConeParams {
        &self.cone
    }

    pub fn method(&self) -> SynthesisMethod {
        self.method
    }

    pub fn model(&self) -> &CompoundModel {
        &self.model
    }

    /// Diagonal jitter used by the Gaussian factor, if any.
    pub fn jitter(&self) -> f64 {
        self.factor.as_ref().map_or(0.0, |f| f.jitter())
    }

    fn finish(&self, seed: u64, mut values: Vec<f64>) -> Result<Field1D> {
        for v in values.iter_mut() {
            *v += self.offset;
        }
        if self.model.jumps.total_mass() > 0.0 {
            let cloud = sample_poisson_points_with(
                self.grid.covering_window(&self.cone),
                &self.cone,
                &self.model.jumps,
                &mut jump_stream(seed),
            )?;
            add_cone_sums(&self.grid, &cloud, &self.cone, &mut values);
        }
        Ok(Field1D {
            grid: self.grid,
            values,
            cone: self.cone,
            triple: self.triple.clone(),
            seed,
            method: self.method,
        })
    }

    pub fn sample(&self, seed: u64) -> Result<Field1D> {
        let values = match &self.factor {
            Some(f) => f.sample(&mut gaussian_stream(seed)),
            None => vec![0.0; self.grid.n],
        };
        self.finish(seed, values)
    }

    /// Several fields at once; the Gaussian parts share one matrix product.
    pub fn sample_batch(&self, seeds: &[u64]) -> Result<Vec<Field1D>> {
        let gaussian: Vec<Vec<f64>> = match &self.factor {
            Some(f) => {
                let mut rngs: Vec<_> = seeds.iter().map(|&s| gaussian_stream(s)).collect();
                f.sample_batch(&mut rngs)
            }
            None => vec![vec![0.0; self.grid.n]; seeds.len()],
        };
        seeds
            .iter()
            .zip(gaussian)
            .map(|(&s, g)| self.finish(s, g))
            .collect()
    }
}

/// Mean-zero-free Gaussian field: `N(m θ, σ² · overlap)` per coordinate.
pub fn sample_gaussian_field(
    grid: &Grid1D,
    cone: &ConeParams,
    triple: &LevyTriple,
    seed: u64,
) -> Result<Field1D> {
    ensure!(
        triple.is_gaussian(),
        "the Gaussian sampler needs a triple without jumps"
    );
    FieldSampler::new(*grid, *cone, triple)?.sample(seed)
}

// ---------------------------------------------------------------------------
// Nested-cone coupling across resolutions (Gaussian case)

/// Gaussian fields at several resolutions `l_0 > l_1 > …` built from one
/// realization of `μ`: level `k` adds the contribution of the slab
/// `l_k ≤ y < l_{k−1}` to level `k − 1`.
#[derive(Debug, Clone)]
pub struct CoupledGaussian {
    grid: Grid1D,
    cones: Vec<ConeParams>,
    triple: LevyTriple,
    bands: Vec<CholeskyFactor>,
}

impl CoupledGaussian {
    pub fn new(
        grid: Grid1D,
        integral_scale: f64,
        resolutions: &[f64],
        triple: &LevyTriple,
    ) -> Result<Self> {
        ensure!(
            triple.is_gaussian(),
            "nested coupling is only implemented for Gaussian triples"
        );
        ensure!(!resolutions.is_empty(), "need at least one resolution");
        ensure!(
            resolutions.windows(2).all(|w| w[1] < w[0]),
            "resolutions must be strictly decreasing"
        );
        ensure!(triple.sigma2 > 0.0, "nested coupling needs σ² > 0");
        let cones = resolutions
            .iter()
            .map(|&l| ConeParams::new(l, integral_scale))
            .collect::<Result<Vec<_>>>()?;
        check_resolution(
            &grid,
            cones.last().expect("non-empty"),
            DEFAULT_POINTS_PER_L,
        )?;
        ensure!(
            grid.n <= MAX_GRID_POINTS,
            "grid exceeds {MAX_GRID_POINTS} points"
        );
        let mut bands = Vec::with_capacity(cones.len());
        let mut previous: Option<Vec<f64>> = None;
        for cone in &cones {
            let column = overlap_covariance_column(grid.n, grid.spacing, cone, triple.sigma2)?;
            let band: Vec<f64> = match &previous {
                Some(p) => column.iter().zip(p).map(|(c, q)| c - q).collect(),
                None => column.clone(),
            };
            bands.push(toeplitz_cholesky(&band)?);
            previous = Some(column);
        }
        Ok(CoupledGaussian {
            grid,
            cones,
            triple: triple.clone(),
            bands,
        })
    }

    /// One field per resolution, coarsest first.
    pub fn sample(&self, seed: u64) -> Result<Vec<Field1D>> {
        let mut acc = vec![0.0; self.grid.n];
        let mut out = Vec::with_capacity(self.cones.len());
        for (k, (cone, band)) in self.cones.iter().zip(&self.bands).enumerate() {
            let draw = band.sample(&mut rng_from_seed(derive_seed(seed, "band", k as u64)));
            for (a, d) in acc.iter_mut().zip(draw) {
                *a += d;
            }
            let drift = self.triple.m * cone_mass(cone);
            out.push(Field1D {
                grid: self.grid,
                values: acc.iter().map(|a| a + drift).collect(),
                cone: *cone,
                triple: self.triple.clone(),
                seed,
                method: SynthesisMethod::GaussianExact,
            });
        }
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// Scale invariance

/// Two-sample comparison of one statistic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentComparison {
    pub name: &'static str,
    pub rescaled: f64,
    pub shifted: f64,
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScaleInvarianceReport {
    pub lambda: f64,
    /// `σ² ln(1/λ)`.
    pub expected_gap: f64,
    /// `Var ω_{λl}(λt) − Var ω_l(t)` from the analytic covariance.
    pub variance_gap: f64,
    /// Largest deviation of the covariance gap from `σ² ln(1/λ)` over lags
    /// in `[0, T]`.
    pub max_gap_error: f64,
    /// Monte Carlo comparisons of `ω_{λl}(λt)` with `Ω_λ + ω_l(t)`; empty for
    /// Gaussian triples.
    pub moments: Vec<MomentComparison>,
    pub pass: bool,
}

const SCALE_TOLERANCE: f64 = 1e-12;
const MOMENT_Z_LIMIT: f64 = 5.0;

/// Checks that `ω_{λl}(λ·)` and `Ω_λ + ω_l(·)` agree, where `Ω_λ` is
/// infinitely divisible with exponent `ψ · ln(1/λ)`.
pub fn scale_invariance_check(
    cone: &ConeParams,
    triple: &LevyTriple,
    lambda: f64,
    replicas: usize,
    seed: u64,
) -> Result<ScaleInvarianceReport> {
    ensure!(
        lambda > 0.0 && lambda <= 1.0,
        "λ must be in (0, 1], got {lambda}"
    );
    cone.require_fine()?;
    let fine = cone.rescaled(lambda)?;
    let log_inv = (1.0 / lambda).ln();
    let model = CompoundModel::from_triple(triple)?;
    let sigma2 = model.sigma2;
    let expected_gap = sigma2 * log_inv;
    let variance_gap = sigma2 * (cone_mass(&fine) - cone_mass(cone));
    let (l, t) = (cone.resolution, cone.integral_scale);
    let mut lags: Vec<f64> = (0..=16).map(|k| l * k as f64 / 16.0).collect();
    lags.extend((1..=32).map(|k| l + (t - l) * k as f64 / 32.0));
    let mut max_gap_error = (variance_gap - expected_gap).abs();
    for &tau in &lags {
        let gap = sigma2
            * (crate::cone::overlap_unchecked(lambda * l, t, lambda * tau)
                - crate::cone::overlap_unchecked(l, t, tau));
        max_gap_error = max_gap_error.max((gap - expected_gap).abs());
    }
    let mut pass = max_gap_error <= SCALE_TOLERANCE * (1.0 + expected_gap.abs());
    let mut moments = Vec::new();
    if !triple.is_gaussian() && replicas > 0 {
        ensure!(
            replicas >= 10,
            "moment comparison needs at least 10 replicas"
        );
        let t0 = 0.5 * t;
        let single = |c: &ConeParams, at: f64| -> Result<FieldSampler> {
            let spacing = c.resolution / DEFAULT_POINTS_PER_L;
            FieldSampler::new(Grid1D::new(at - 0.5 * spacing, spacing, 1)?, *c, triple)
        };
        let rescaled_sampler = single(&fine, lambda * t0)?;
        let base_sampler = single(cone, t0)?;
        let mut rescaled = Vec::with_capacity(replicas);
        let mut shifted = Vec::with_capacity(replicas);
        for r in 0..replicas as u64 {
            rescaled.push(
                rescaled_sampler
                    .sample(derive_seed(seed, "rescaled", r))?
                    .values[0],
            );
            let omega = base_sampler.sample(derive_seed(seed, "base", r))?.values[0];
            let mut rng = rng_from_seed(derive_seed(seed, "omega-lambda", r));
            shifted.push(model.sample_region(log_inv, &mut rng)? + omega);
        }
        let mut boot = rng_from_seed(derive_seed(seed, "bootstrap", 0));
        type Stat = fn(&[f64]) -> f64;
        let stats_list: [(&'static str, Stat); 3] = [
            ("mean", stats::mean),
            ("variance", stats::variance),
            ("third_cumulant", stats::third_cumulant),
        ];
        for (name, stat) in stats_list {
            let a = stat(&rescaled);
            let b = stat(&shifted);
            let se = |xs: &[f64], rng: &mut crate::seed::Rng| {
                stats::bootstrap_stderr(xs.len(), 200, rng, |idx| {
                    let sample: Vec<f64> = idx.iter().map(|&i| xs[i]).collect();
                    stat(&sample)
                })
            };
            let se_a = se(&rescaled, &mut boot);
            let se_b = se(&shifted, &mut boot);
            let denom = (se_a * se_a + se_b * se_b).sqrt();
            let z = if denom > 0.0 { (a - b) / denom } else { 0.0 };
            pass &= z.abs() <= MOMENT_Z_LIMIT;
            moments.push(MomentComparison {
                name,
                rescaled: a,
                shifted: b,
                z,
            });
        }
    }
    Ok(ScaleInvarianceReport {
        lambda,
        expected_gap,
        variance_gap,
        max_gap_error,
        moments,
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::levy::normalize;

    fn lognormal(s2: f64) -> LevyTriple {
        LevyTriple::lognormal(s2).unwrap()
    }

    #[test]
    fn single_point_variance_is_cone_mass() {
        let cone = ConeParams::new(0.25, 1.0).unwrap();
        let grid = Grid1D::new(0.0, 0.0625, 1).unwrap();
        let s = FieldSampler::new(grid, cone, &lognormal(0.7)).unwrap();
        let l = s.factor.as_ref().unwrap().lower();
        assert!((l[(0, 0)].powi(2) - 0.7 * cone_mass(&cone)).abs() < 1e-14);
    }

    #[test]
    fn coarse_grid_is_rejected() {
        let cone = ConeParams::new(0.01, 1.0).unwrap();
        let grid = Grid1D::cells(1.0, 100).unwrap();
        assert!(FieldSampler::new(grid, cone, &lognormal(0.3)).is_err());
        assert!(FieldSampler::with_resolution(
            Grid1D::cells(1.0, 400).unwrap(),
            cone,
            &lognormal(0.3),
            16.0
        )
        .is_err());
        assert!(FieldSampler::with_resolution(
            Grid1D::cells(1.0, 400).unwrap(),
            cone,
            &lognormal(0.3),
            3.0
        )
        .is_err());
    }

    #[test]
    fn pure_drift_is_constant() {
        let cone = ConeParams::new(0.1, 1.0).unwrap();
        let triple = LevyTriple::new(-0.2, 0.0, JumpMeasure::None).unwrap();
        let f = sample_gaussian_field(&Grid1D::cells(1.0, 40).unwrap(), &cone, &triple, 1).unwrap();
        let expect = -0.2 * cone_mass(&cone);
        assert!(f.values.iter().all(|v| (v - expect).abs() < 1e-15));
    }

    #[test]
    fn injected_point_shifts_every_value() {
        let cone = ConeParams::new(0.1, 1.0).unwrap();
        let grid = Grid1D::cells(0.5, 20).unwrap();
        let model = CompoundModel {
            m: 0.0,
            sigma2: 0.0,
            jumps: FiniteJumps::from_atoms(vec![Atom { x: 0.3, w: 1.0 }]),
        };
        // a high point above the middle of the grid lies in every cone
        let cloud = PointCloud {
            points: vec![JumpPoint {
                s: 0.25,
                y: 5.0,
                x: 0.3,
            }],
            window: grid.covering_window(&cone),
            expected_count: 0.0,
        };
        let v = assemble_omega(&grid, &cloud, &cone, &model, 3).unwrap();
        let correction = cone_mass(&cone) * 0.3f64.sin();
        for x in v {
            assert!((x - (0.3 - correction)).abs() < 1e-14);
        }
    }

    #[test]
    fn cone_sums_match_brute_force() {
        let cone = ConeParams::new(0.05, 1.0).unwrap();
        let grid = Grid1D::cells(1.0, 80).unwrap();
        let jumps =
            FiniteJumps::from_atoms(vec![Atom { x: 1.0, w: 1.0 }, Atom { x: -0.5, w: 2.0 }]);
        let cloud = sample_poisson_points(grid.covering_window(&cone), &cone, &jumps, 11).unwrap();
        let mut fast = vec![0.0; grid.n];
        add_cone_sums(&grid, &cloud, &cone, &mut fast);
        for (i, f) in fast.iter().enumerate() {
            let t = grid.point(i);
            let brute: f64 = cloud
                .points
                .iter()
                .filter(|p| point_in_cone(p.s, p.y, t, &cone))
                .map(|p| p.x)
                .sum();
            assert!((f - brute).abs() < 1e-9, "{i}: {f} vs {brute}");
        }
    }

    #[test]
    fn narrow_window_is_rejected() {
        let cone = ConeParams::new(0.1, 1.0).unwrap();
        let grid = Grid1D::cells(1.0, 40).unwrap();
        let model = CompoundModel::from_triple(&lognormal(0.2)).unwrap();
        let cloud = PointCloud {
            points: vec![],
            window: (0.0, 1.0),
            expected_count: 0.0,
        };
        assert!(assemble_omega(&grid, &cloud, &cone, &model, 0).is_err());
    }

    #[test]
    fn split_of_atoms_and_large_cutoff() {
        let atoms = vec![Atom { x: 0.5, w: 1.0 }, Atom { x: -0.2, w: 0.5 }];
        let s = small_jump_split(&JumpMeasure::Atomic(atoms.clone()), 0.1).unwrap();
        assert_eq!(s.compensating_sigma2, 0.0);
        assert_eq!(s.finite.total_mass(), 1.5);
        let s = small_jump_split(&JumpMeasure::Atomic(atoms), 10.0).unwrap();
        assert_eq!(s.finite.total_mass(), 0.0);
        assert!((s.compensating_sigma2 - (0.25 + 0.5 * 0.04)).abs() < 1e-15);
    }

    #[test]
    fn split_keeps_normalization() {
        let d = DensityJumps {
            positive: Some(PowerLawSide {
                c: 0.3,
                alpha: 0.5,
                lambda: 3.0,
                upper: None,
            }),
            negative: Some(PowerLawSide {
                c: 0.2,
                alpha: 1.2,
                lambda: 1.0,
                upper: None,
            }),
            eps: 0.05,
            x_max: 30.0,
        };
        let triple = normalize(0.1, JumpMeasure::Density(d)).unwrap();
        let model = CompoundModel::from_triple(&triple).unwrap();
        assert!(model.psi(1.0).unwrap().abs() < 1e-10);
        assert!(model.jumps.total_mass() > 0.0);
    }

    #[test]
    fn truncated_sampler_matches_its_law() {
        let side = PowerLawSide {
            c: 1.0,
            alpha: 0.5,
            lambda: 1.0,
            upper: None,
        };
        let d = DensityJumps {
            positive: Some(side),
            negative: None,
            eps: 0.01,
            x_max: 20.0,
        };
        let t = TruncatedDensity::new(&d, 0.1).unwrap();
        let mut rng = rng_from_seed(5);
        let xs: Vec<f64> = (0..20_000).map(|_| t.sample(&mut rng)).collect();
        assert!(xs.iter().all(|&x| x >= 0.1));
        let tail =
            |a: f64| crate::levy::side_integral(&side, a, f64::INFINITY, 20.0, |_| 1.0).unwrap();
        let total = tail(0.1);
        for &a in &[0.2, 0.5, 1.0, 3.0] {
            let expected = tail(a) / total;
            let observed = xs.iter().filter(|&&x| x > a).count() as f64 / xs.len() as f64;
            let se = (expected * (1.0 - expected) / xs.len() as f64).sqrt();
            assert!(
                (observed - expected).abs() < 5.0 * se,
                "{a}: {observed} vs {expected}"
            );
        }
    }

    #[test]
    fn gaussian_scale_gap() {
        let cone = ConeParams::new(0.01, 1.0).unwrap();
        for &lambda in &[1.0, 0.5, 0.25] {
            let r = scale_invariance_check(&cone, &lognormal(1.0), lambda, 0, 0).unwrap();
            assert!(r.pass);
            assert!((r.variance_gap - (1.0 / lambda).ln()).abs() < 1e-12);
        }
    }
}
