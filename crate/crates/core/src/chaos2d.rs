//! Two-dimensional log-normal chaos and the exponential of the Gaussian free
//! field on a disk: kernels, exact Gaussian synthesis on small grids, cell
//! and ball masses, measure-weighted covering sums and the 2D dimension
//! check.

use std::sync::OnceLock;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::dimension::{kpz_solve_on, report_from_estimates, KpzReport, ReplicaEstimate};
use crate::error::{ensure, MrmError, Result};
use crate::linalg::{dense_cholesky, CholeskyFactor};
use crate::parallel::map_chunks;
use crate::quad::{integrate_with_breaks, QuadOptions};
use crate::seed::{derive_seed, rng_from_seed};
use crate::stats::{self, bootstrap_stderr, line_fit};

pub type Point = [f64; 2];

/// Largest grid for the dense Gaussian path (a 4096² Gram matrix).
pub const MAX_GRID_POINTS_2D: usize = 4096;

fn dist(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

fn norm(a: Point) -> f64 {
    a[0].hypot(a[1])
}

/// Regularized covariance of the 2D log-normal field:
/// `γ² ln(R/l) + 2γ²(1 − √(d/l))` for `d ≤ l`, `γ² ln⁺(R/d)` beyond.
pub fn lognormal_kernel(x: Point, y: Point, l: f64, gamma2: f64, radius: f64) -> f64 {
    let d = dist(x, y);
    if d <= l {
        gamma2 * (radius / l).ln() + 2.0 * gamma2 * (1.0 - (d / l).sqrt())
    } else {
        gamma2 * (radius / d).ln().max(0.0)
    }
}

/// `ζ(q) = (2 + γ²) q − γ² q² / 2`.
pub fn zeta2d(gamma2: f64, q: f64) -> f64 {
    (2.0 + gamma2) * q - 0.5 * gamma2 * q * q
}

/// `(2 + γ²/2) q − γ² q² / 2`: the exponent obtained by taking `q`-th
/// moments in the scale-invariance identity of the measure. Unlike
/// [`zeta2d`] it satisfies `ζ(1) = 2`, i.e. `E[M(λA)] = λ² E[M(A)]`.
pub fn zeta2d_mass_conserving(gamma2: f64, q: f64) -> f64 {
    (2.0 + 0.5 * gamma2) * q - 0.5 * gamma2 * q * q
}

/// Root of `ζ(δ) = δ₀` on the increasing branch `[0, min(1, argmax ζ)]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kpz2dSolution {
    pub delta: f64,
    /// `δ₀ > ζ(upper)`: no root on the increasing branch; `delta` is clamped.
    pub beyond_branch: bool,
}

pub fn kpz_solve_2d(gamma2: f64, delta0: f64) -> Result<Kpz2dSolution> {
    kpz_solve_2d_with(gamma2, delta0, zeta2d)
}

/// Same as [`kpz_solve_2d`] for another quadratic exponent `zeta(γ², q)`.
pub fn kpz_solve_2d_with(
    gamma2: f64,
    delta0: f64,
    zeta: fn(f64, f64) -> f64,
) -> Result<Kpz2dSolution> {
    check_gamma2(gamma2)?;
    ensure!(
        (0.0..=2.0).contains(&delta0),
        "δ₀ must be in [0, 2], got {delta0}"
    );
    // ζ(q) = αq − βq², recovered from ζ(1) = α − β and ζ(2) = 2α − 4β
    let argmax = {
        let (a, b) = (zeta(gamma2, 1.0), zeta(gamma2, 2.0));
        let beta = (2.0 * a - b) / 2.0;
        let alpha = a + beta;
        if beta > 0.0 {
            alpha / (2.0 * beta)
        } else {
            f64::INFINITY
        }
    };
    let upper = argmax.min(1.0);
    if delta0 > zeta(gamma2, upper) {
        return Ok(Kpz2dSolution {
            delta: upper,
            beyond_branch: true,
        });
    }
    let delta = kpz_solve_on(|q| zeta(gamma2, q), delta0, upper)?;
    Ok(Kpz2dSolution {
        delta,
        beyond_branch: false,
    })
}

fn check_gamma2(gamma2: f64) -> Result<()> {
    ensure!(
        gamma2.is_finite() && (0.0..4.0).contains(&gamma2),
        "γ² must be in [0, 4), got {gamma2}"
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// Green function of the disk

fn check_in_disk(x: Point, radius: f64) -> Result<()> {
    if !(norm(x) < radius) {
        return Err(MrmError::Range(format!(
            "point ({}, {}) is outside the open disk of radius {radius}",
            x[0], x[1]
        )));
    }
    Ok(())
}

/// `ln(|x − y*| |y| / R)` with `y* = R² y / |y|²`, written to stay finite at `y = 0`.
fn green_regular(x: Point, y: Point, radius: f64) -> f64 {
    let ny = norm(y);
    let r2 = radius * radius;
    let w = if ny > 0.0 {
        [x[0] * ny - r2 * y[0] / ny, x[1] * ny - r2 * y[1] / ny]
    } else {
        [r2, 0.0]
    };
    (norm(w) / radius).ln()
}

/// Dirichlet Green function of `B(0, R)`, normalized so that
/// `G(x, y) = ln(1/|x − y|) + O(1)`.
pub fn green_disk(x: Point, y: Point, radius: f64) -> Result<f64> {
    ensure!(
        radius.is_finite() && radius > 0.0,
        "disk radius must be > 0"
    );
    check_in_disk(x, radius)?;
    check_in_disk(y, radius)?;
    let d = dist(x, y);
    if d == 0.0 {
        return Err(MrmError::Singular(format!(
            "Green function at coincident points ({}, {})",
            x[0], x[1]
        )));
    }
    Ok(green_regular(x, y, radius) - d.ln())
}

/// Five-point Laplacian of `G(·, y)` at `x` with step `10⁻³ R`, multiplied by
/// `|x − y|²` so that it is dimensionless.
pub fn green_harmonicity_residual(x: Point, y: Point, radius: f64) -> Result<f64> {
    let h = 1e-3 * radius;
    let g = |p: Point| green_disk(p, y, radius);
    let centre = g(x)?;
    let sum =
        g([x[0] + h, x[1]])? + g([x[0] - h, x[1]])? + g([x[0], x[1] + h])? + g([x[0], x[1] - h])?;
    let d = dist(x, y);
    Ok((sum - 4.0 * centre) / (h * h) * d * d)
}

/// `E ln|X − Y|` for `X` uniform on the unit square and `Y` uniform on the
/// unit square shifted by `offset`.
pub fn cell_average_log_distance(offset: (u32, u32)) -> Result<f64> {
    let (ox, oy) = (offset.0 as f64, offset.1 as f64);
    let opts = QuadOptions {
        rel_tol: 1e-11,
        abs_tol: 1e-13,
        max_panels: 4000,
    };
    let breaks = |o: f64| {
        let mut b = vec![-1.0, 0.0, 1.0];
        if o > 0.0 && o < 1.0 + 1e-12 {
            b.push(-o);
        }
        b.sort_by(f64::total_cmp);
        b.dedup();
        b
    };
    let (bu, bv) = (breaks(ox), breaks(oy));
    let mut failure = None;
    // D = X − Y has density (1 − |u|)(1 − |v|) on [−1, 1]²
    let outer = integrate_with_breaks(
        |u| {
            let inner = integrate_with_breaks(
                |v| {
                    let r2 = (u + ox).powi(2) + (v + oy).powi(2);
                    if r2 == 0.0 {
                        0.0
                    } else {
                        (1.0 - v.abs()) * 0.5 * r2.ln()
                    }
                },
                &bv,
                opts,
            );
            match inner {
                Ok(q) => (1.0 - u.abs()) * q.value,
                Err(e) => {
                    failure = Some(e);
                    0.0
                }
            }
        },
        &bu,
        opts,
    )?;
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(outer.value)
}

/// Cell offsets up to this distance use cell-averaged logarithms.
const NEAR_CELLS: u32 = 2;

fn near_log_table() -> &'static [[f64; NEAR_CELLS as usize + 1]; NEAR_CELLS as usize + 1] {
    static TABLE: OnceLock<[[f64; 3]; 3]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut t = [[0.0; 3]; 3];
        for (i, row) in t.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = cell_average_log_distance((i as u32, j as u32)).expect("smooth integrand");
            }
        }
        t
    })
}

// ---------------------------------------------------------------------------
// Grids and kernels

/// `n × n` square cells with lower-left corner `origin`; values live at cell
/// centres, indexed `k = j n + i` for column `i` and row `j`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid2D {
    pub origin: Point,
    pub spacing: f64,
    pub n: usize,
}

impl Grid2D {
    pub fn new(origin: Point, side: f64, n: usize) -> Result<Self> {
        ensure!(n >= 1, "grid needs at least one cell per side");
        ensure!(side.is_finite() && side > 0.0, "grid side must be > 0");
        ensure!(
            origin.iter().all(|c| c.is_finite()),
            "grid origin must be finite"
        );
        Ok(Grid2D {
            origin,
            spacing: side / n as f64,
            n,
        })
    }

    /// Grid covering `[−R, R]²`.
    pub fn centred(radius: f64, n: usize) -> Result<Self> {
        Grid2D::new([-radius, -radius], 2.0 * radius, n)
    }

    pub fn len(&self) -> usize {
        self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn side(&self) -> f64 {
        self.spacing * self.n as f64
    }

    pub fn cell_area(&self) -> f64 {
        self.spacing * self.spacing
    }

    pub fn point(&self, k: usize) -> Point {
        let (i, j) = (k % self.n, k / self.n);
        [
            self.origin[0] + (i as f64 + 0.5) * self.spacing,
            self.origin[1] + (j as f64 + 0.5) * self.spacing,
        ]
    }
}

/// Covariance kernel of a 2D field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Kernel2D {
    Lognormal {
        gamma2: f64,
        radius: f64,
        resolution: f64,
    },
    /// `γ² G_R`; Gram matrices use cell-averaged logarithms for nearby cells.
    GffDisk { gamma2: f64, radius: f64 },
}

impl Kernel2D {
    pub fn lognormal(gamma2: f64, radius: f64, resolution: f64) -> Result<Self> {
        check_gamma2(gamma2)?;
        ensure!(radius.is_finite() && radius > 0.0, "R must be > 0");
        ensure!(
            resolution > 0.0 && resolution <= radius,
            "need 0 < l ≤ R, got l = {resolution}, R = {radius}"
        );
        Ok(Kernel2D::Lognormal {
            gamma2,
            radius,
            resolution,
        })
    }

    pub fn gff_disk(gamma2: f64, radius: f64) -> Result<Self> {
        check_gamma2(gamma2)?;
        ensure!(radius.is_finite() && radius > 0.0, "R must be > 0");
        Ok(Kernel2D::GffDisk { gamma2, radius })
    }

    pub fn gamma2(&self) -> f64 {
        match *self {
            Kernel2D::Lognormal { gamma2, .. } | Kernel2D::GffDisk { gamma2, .. } => gamma2,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Kernel2D::Lognormal { .. } => "lognormal",
            Kernel2D::GffDisk { .. } => "gff-disk",
        }
    }

    /// Point evaluation; the GFF kernel is singular on the diagonal.
    pub fn eval(&self, x: Point, y: Point) -> Result<f64> {
        match *self {
            Kernel2D::Lognormal {
                gamma2,
                radius,
                resolution,
            } => Ok(lognormal_kernel(x, y, resolution, gamma2, radius)),
            Kernel2D::GffDisk { gamma2, radius } => Ok(gamma2 * green_disk(x, y, radius)?),
        }
    }

    /// Cells on which the field lives: all of them for the log-normal kernel,
    /// those centred inside the disk for the GFF.
    pub fn active_cells(&self, grid: &Grid2D) -> Vec<usize> {
        match *self {
            Kernel2D::Lognormal { .. } => (0..grid.len()).collect(),
            Kernel2D::GffDisk { radius, .. } => (0..grid.len())
                .filter(|&k| norm(grid.point(k)) < radius)
                .collect(),
        }
    }

    fn gram_entry(&self, grid: &Grid2D, a: usize, b: usize) -> f64 {
        match *self {
            Kernel2D::Lognormal {
                gamma2,
                radius,
                resolution,
            } => lognormal_kernel(grid.point(a), grid.point(b), resolution, gamma2, radius),
            Kernel2D::GffDisk { gamma2, radius } => {
                let (x, y) = (grid.point(a), grid.point(b));
                let di = (a % grid.n).abs_diff(b % grid.n) as u32;
                let dj = (a / grid.n).abs_diff(b / grid.n) as u32;
                let log_dist = if di <= NEAR_CELLS && dj <= NEAR_CELLS {
                    grid.spacing.ln() + near_log_table()[di as usize][dj as usize]
                } else {
                    dist(x, y).ln()
                };
                gamma2 * (green_regular(x, y, radius) - log_dist)
            }
        }
    }

    /// Gram matrix over the given cells, assembled row-parallel.
    pub fn gram(&self, grid: &Grid2D, cells: &[usize]) -> Result<DMatrix<f64>> {
        let m = cells.len();
        ensure!(
            m <= MAX_GRID_POINTS_2D,
            "{m} grid points exceed the dense limit {MAX_GRID_POINTS_2D}"
        );
        let columns: Vec<Vec<f64>> = cells
            .par_iter()
            .map(|&a| cells.iter().map(|&b| self.gram_entry(grid, a, b)).collect())
            .collect();
        Ok(DMatrix::from_fn(m, m, |i, j| columns[j][i]))
    }
}

// ---------------------------------------------------------------------------
// Fields and measures

#[derive(Debug, Clone)]
pub struct Field2D {
    pub grid: Grid2D,
    /// One value per cell; zero outside the active cells.
    pub values: Vec<f64>,
    /// Pointwise variance per cell; zero outside the active cells.
    pub variances: Vec<f64>,
    pub active: Vec<bool>,
    pub kernel: Kernel2D,
    pub seed: u64,
}

/// Factored Gram matrix reused across seeds.
#[derive(Debug, Clone)]
pub struct Field2DSampler {
    grid: Grid2D,
    kernel: Kernel2D,
    cells: Vec<usize>,
    variances: Vec<f64>,
    factor: CholeskyFactor,
}

impl Field2DSampler {
    pub fn new(grid: Grid2D, kernel: Kernel2D) -> Result<Self> {
        ensure!(
            grid.len() <= MAX_GRID_POINTS_2D,
            "{0}×{0} grid exceeds the dense limit of {MAX_GRID_POINTS_2D} points",
            grid.n
        );
        let cells = kernel.active_cells(&grid);
        let gram = kernel.gram(&grid, &cells)?;
        let factor = dense_cholesky(&gram)?;
        let mut variances = vec![0.0; grid.len()];
        for (i, &k) in cells.iter().enumerate() {
            variances[k] = gram[(i, i)];
        }
        Ok(Field2DSampler {
            grid,
            kernel,
            cells,
            variances,
            factor,
        })
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    pub fn jitter(&self) -> f64 {
        self.factor.jitter()
    }

    fn assemble(&self, draw: &[f64], seed: u64) -> Field2D {
        let mut values = vec![0.0; self.grid.len()];
        let mut active = vec![false; self.grid.len()];
        for (&k, v) in self.cells.iter().zip(draw) {
            values[k] = *v;
            active[k] = true;
        }
        Field2D {
            grid: self.grid,
            values,
            variances: self.variances.clone(),
            active,
            kernel: self.kernel,
            seed,
        }
    }

    pub fn sample(&self, seed: u64) -> Field2D {
        let mut rng = rng_from_seed(derive_seed(seed, "field2d", 0));
        self.assemble(&self.factor.sample(&mut rng), seed)
    }

    /// Same draws as [`sample`](Self::sample), via one matrix product.
    pub fn sample_batch(&self, seeds: &[u64]) -> Vec<Field2D> {
        let mut rngs: Vec<_> = seeds
            .iter()
            .map(|&s| rng_from_seed(derive_seed(s, "field2d", 0)))
            .collect();
        let draws = self.factor.sample_batch(&mut rngs);
        draws
            .iter()
            .zip(seeds)
            .map(|(d, &s)| self.assemble(d, s))
            .collect()
    }
}

pub fn sample_field2d(grid: Grid2D, kernel: Kernel2D, seed: u64) -> Result<Field2D> {
    Ok(Field2DSampler::new(grid, kernel)?.sample(seed))
}

/// Piecewise-constant measure with cell masses
/// `e^{X − ½ Var X} Δ²`; inactive cells carry no mass.
#[derive(Debug, Clone, PartialEq)]
pub struct Measure2D {
    grid: Grid2D,
    masses: Vec<f64>,
}

/// Sub-samples per axis for the fraction of a cell inside a disk.
const DISK_SUBSAMPLES: usize = 16;

impl Measure2D {
    pub fn from_field(field: &Field2D) -> Self {
        let area = field.grid.cell_area();
        let masses = field
            .values
            .iter()
            .zip(&field.variances)
            .zip(&field.active)
            .map(|((x, v), &a)| if a { (x - 0.5 * v).exp() * area } else { 0.0 })
            .collect();
        Measure2D {
            grid: field.grid,
            masses,
        }
    }

    /// Uniform measure on the whole grid.
    pub fn lebesgue(grid: Grid2D) -> Self {
        Measure2D {
            grid,
            masses: vec![grid.cell_area(); grid.len()],
        }
    }

    pub fn from_masses(grid: Grid2D, masses: Vec<f64>) -> Result<Self> {
        ensure!(
            masses.len() == grid.len(),
            "expected {} masses, got {}",
            grid.len(),
            masses.len()
        );
        ensure!(
            masses.iter().all(|m| m.is_finite() && *m >= 0.0),
            "masses must be finite and ≥ 0"
        );
        Ok(Measure2D { grid, masses })
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum()
    }

    /// Mass of the axis-aligned square `[x0, x0 + side] × [y0, y0 + side]`,
    /// splitting cells by area.
    pub fn square_mass(&self, x0: f64, y0: f64, side: f64) -> f64 {
        let g = &self.grid;
        let h = g.spacing;
        let range = |lo: f64, origin: f64| {
            let a = ((lo - origin) / h).floor().max(0.0) as usize;
            let b = (((lo + side - origin) / h).ceil().max(0.0) as usize).min(g.n);
            (a.min(g.n), b)
        };
        let overlap = |idx: usize, lo: f64, origin: f64| {
            let c0 = origin + idx as f64 * h;
            ((c0 + h).min(lo + side) - c0.max(lo)).max(0.0) / h
        };
        let (i0, i1) = range(x0, g.origin[0]);
        let (j0, j1) = range(y0, g.origin[1]);
        let mut total = 0.0;
        for j in j0..j1 {
            let wy = overlap(j, y0, g.origin[1]);
            if wy == 0.0 {
                continue;
            }
            for i in i0..i1 {
                let wx = overlap(i, x0, g.origin[0]);
                total += self.masses[j * g.n + i] * wx * wy;
            }
        }
        total
    }

    /// Mass of the disk `B(centre, r)`, splitting boundary cells by the
    /// fraction of sub-cell midpoints inside.
    pub fn disk_mass(&self, centre: Point, r: f64) -> f64 {
        let g = &self.grid;
        let h = g.spacing;
        let half_diag = h * std::f64::consts::FRAC_1_SQRT_2;
        let mut total = 0.0;
        for k in 0..g.len() {
            if self.masses[k] == 0.0 {
                continue;
            }
            let c = g.point(k);
            let d = dist(c, centre);
            let fraction = if d + half_diag <= r {
                1.0
            } else if d - half_diag >= r {
                0.0
            } else {
                let s = DISK_SUBSAMPLES;
                let mut inside = 0usize;
                for a in 0..s {
                    for b in 0..s {
                        let p = [
                            c[0] - 0.5 * h + (a as f64 + 0.5) * h / s as f64,
                            c[1] - 0.5 * h + (b as f64 + 0.5) * h / s as f64,
                        ];
                        if dist(p, centre) <= r {
                            inside += 1;
                        }
                    }
                }
                inside as f64 / (s * s) as f64
            };
            total += fraction * self.masses[k];
        }
        total
    }
}

// ---------------------------------------------------------------------------
// Ball-mass moment scaling

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BallScalingReport {
    pub lambda: f64,
    pub q: f64,
    /// `E[M(B(0, λR))^q] / E[M(B(0, R))^q]`.
    pub ratio: f64,
    pub ratio_stderr: f64,
    /// `λ^{ζ(q)}` with [`zeta2d`].
    pub predicted: f64,
    pub z: f64,
    pub pass: bool,
    /// `λ^{ζ(q)}` with [`zeta2d_mass_conserving`], and its z-score.
    pub predicted_mass_conserving: f64,
    pub z_mass_conserving: f64,
}

/// Setup for [`ball_mass_scaling_check`]: the field lives on an `n × n` grid
/// over `[−R, R]²` with `l` equal to the grid spacing.
#[derive(Debug, Clone, Copy)]
pub struct BallScalingSetup {
    pub gamma2: f64,
    pub radius: f64,
    pub n: usize,
    pub lambda: f64,
    pub q: f64,
    pub replicas: usize,
    pub seed: u64,
}

/// Smallest ball radius in grid cells.
pub const MIN_BALL_CELLS: f64 = 16.0;

pub fn ball_mass_scaling_check(setup: &BallScalingSetup) -> Result<BallScalingReport> {
    let BallScalingSetup {
        gamma2,
        radius,
        n,
        lambda,
        q,
        replicas,
        seed,
    } = *setup;
    ensure!(
        lambda > 0.0 && lambda <= 1.0,
        "λ must be in (0, 1], got {lambda}"
    );
    ensure!((0.0..=1.0).contains(&q), "q must be in [0, 1], got {q}");
    ensure!(replicas >= 2, "need at least two replicas");
    let grid = Grid2D::centred(radius, n)?;
    ensure!(
        lambda * radius >= MIN_BALL_CELLS * grid.spacing * (1.0 - 1e-12),
        "ball of radius λR = {} is under-resolved: needs at least {MIN_BALL_CELLS} grid spacings ({})",
        lambda * radius,
        MIN_BALL_CELLS * grid.spacing
    );
    let kernel = Kernel2D::lognormal(gamma2, radius, grid.spacing)?;
    let sampler = Field2DSampler::new(grid, kernel)?;
    let pairs: Vec<(f64, f64)> = map_chunks(replicas, |range| {
        let seeds: Vec<u64> = range
            .map(|r| derive_seed(seed, "ball-scaling", r as u64))
            .collect();
        Ok(sampler
            .sample_batch(&seeds)
            .iter()
            .map(|f| {
                let m = Measure2D::from_field(f);
                (
                    m.disk_mass([0.0, 0.0], lambda * radius).powf(q),
                    m.disk_mass([0.0, 0.0], radius).powf(q),
                )
            })
            .collect())
    })?;
    let ratio_of = |idx: &mut dyn Iterator<Item = usize>| {
        let (mut a, mut b) = (0.0, 0.0);
        for i in idx {
            a += pairs[i].0;
            b += pairs[i].1;
        }
        a / b
    };
    let ratio = ratio_of(&mut (0..pairs.len()));
    let mut rng = rng_from_seed(derive_seed(seed, "ball-bootstrap", 0));
    let ratio_stderr = bootstrap_stderr(pairs.len(), 400, &mut rng, |idx| {
        ratio_of(&mut idx.iter().copied())
    });
    let z_of = |predicted: f64| {
        let gap = ratio - predicted;
        if ratio_stderr > 0.0 {
            gap / ratio_stderr
        } else if gap.abs() <= 1e-12 {
            0.0
        } else {
            f64::INFINITY
        }
    };
    let predicted = lambda.powf(zeta2d(gamma2, q));
    let predicted_mass_conserving = lambda.powf(zeta2d_mass_conserving(gamma2, q));
    let z = z_of(predicted);
    Ok(BallScalingReport {
        lambda,
        q,
        ratio,
        ratio_stderr,
        predicted,
        z,
        pass: z.abs() <= 5.0,
        predicted_mass_conserving,
        z_mass_conserving: z_of(predicted_mass_conserving),
    })
}

// ---------------------------------------------------------------------------
// Comparison of the GFF and log-normal kernels

#[derive(Debug, Clone, PartialEq)]
pub struct SandwichReport {
    /// Range of `γ² G_R − γ² ln⁺(R/d)` over pairs in `B(0, r + δ)`.
    pub min: f64,
    pub max: f64,
    /// `(d, difference)` along a pair shrinking onto one point.
    pub sequence: Vec<(f64, f64)>,
    /// Last increment of the sequence.
    pub cauchy_gap: f64,
    pub bounded: bool,
}

pub const SANDWICH_CAUCHY_TOL: f64 = 1e-3;

/// Samples `γ² G_R(x, y) − γ² ln⁺(R/|x − y|)` on pairs of an `m × m` lattice
/// inside `B(0, r + δ)`, and along `d = 2^{−k} R`, `k = 4..14`.
pub fn sandwich_check(
    gamma2: f64,
    radius: f64,
    r: f64,
    delta: f64,
    m: usize,
) -> Result<SandwichReport> {
    check_gamma2(gamma2)?;
    ensure!(
        r > 0.0 && delta > 0.0 && r + delta < radius,
        "need r + δ < R, got r = {r}, δ = {delta}, R = {radius}"
    );
    ensure!(m >= 2, "lattice needs at least 2 points per side");
    let outer = r + delta;
    let diff = |x: Point, y: Point| -> Result<f64> {
        let d = dist(x, y);
        Ok(gamma2 * (green_disk(x, y, radius)? - (radius / d).ln().max(0.0)))
    };
    let step = 2.0 * outer / m as f64;
    let lattice: Vec<Point> = (0..m * m)
        .map(|k| {
            [
                -outer + ((k % m) as f64 + 0.5) * step,
                -outer + ((k / m) as f64 + 0.5) * step,
            ]
        })
        .filter(|p| norm(*p) < outer)
        .collect();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (i, &x) in lattice.iter().enumerate() {
        for &y in &lattice[i + 1..] {
            let v = diff(x, y)?;
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    let centre = [0.3 * r, -0.2 * r];
    let sequence = (4..=14)
        .map(|k| {
            let d = radius * 2f64.powi(-k);
            let x = [centre[0] + 0.5 * d, centre[1]];
            let y = [centre[0] - 0.5 * d, centre[1]];
            Ok((d, diff(x, y)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = sequence.len();
    let cauchy_gap = (sequence[n - 1].1 - sequence[n - 2].1).abs();
    let bounded = lo.is_finite() && hi.is_finite() && cauchy_gap <= SANDWICH_CAUCHY_TOL;
    Ok(SandwichReport {
        min: lo,
        max: hi,
        sequence,
        cauchy_gap,
        bounded,
    })
}

// ---------------------------------------------------------------------------
// Planar sets and measure-weighted covering sums

/// A planar set given by closed axis-aligned rectangles `[x0, y0, x1, y1]`
/// inside the bounding square `[origin, origin + side]²`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanarSet {
    pub label: String,
    pub cover: Vec<[f64; 4]>,
    pub delta0: f64,
    pub origin: Point,
    pub side: f64,
    /// Natural subdivision base of the set (3 for triadic dust).
    pub base: u32,
}

/// Product of two copies of a two-branch Cantor set.
pub fn make_cantor_dust(ratio: f64, depth: u32, origin: Point, side: f64) -> Result<PlanarSet> {
    let line = crate::dimension::make_cantor(ratio, depth, side)?;
    ensure!(
        line.cover.len() * line.cover.len() <= 1 << 22,
        "dust depth {depth} is too large"
    );
    let mut cover = Vec::with_capacity(line.cover.len() * line.cover.len());
    for &(y0, y1) in &line.cover {
        for &(x0, x1) in &line.cover {
            cover.push([
                origin[0] + x0,
                origin[1] + y0,
                origin[0] + x1,
                origin[1] + y1,
            ]);
        }
    }
    let inverse = 1.0 / ratio;
    let base = if (inverse - inverse.round()).abs() < 1e-9 {
        inverse.round() as u32
    } else {
        2
    };
    Ok(PlanarSet {
        label: format!("cantor-dust(ratio={ratio},depth={depth})"),
        cover,
        delta0: 2.0 * line.delta0,
        origin,
        side,
        base,
    })
}

pub fn full_square(origin: Point, side: f64) -> Result<PlanarSet> {
    ensure!(side.is_finite() && side > 0.0, "square side must be > 0");
    Ok(PlanarSet {
        label: "full-square".into(),
        cover: vec![[origin[0], origin[1], origin[0] + side, origin[1] + side]],
        delta0: 2.0,
        origin,
        side,
        base: 2,
    })
}

const EDGE_TOL: f64 = 1e-9;

/// Level-`n` squares (side `side / base^n`) meeting the set, as flat indices.
fn squares_meeting(set: &PlanarSet, base: u32, level: u32) -> Vec<usize> {
    let k = (base as usize).pow(level);
    let w = set.side / k as f64;
    let mut hit = vec![false; k * k];
    let span = |a: f64, b: f64, o: f64| {
        let lo = (((a - o) / w + EDGE_TOL).floor().max(0.0) as usize).min(k - 1);
        let hi = ((((b - o) / w - EDGE_TOL).ceil() as i64 - 1).max(lo as i64) as usize).min(k - 1);
        (lo, hi)
    };
    for r in &set.cover {
        let (i0, i1) = span(r[0], r[2], set.origin[0]);
        let (j0, j1) = span(r[1], r[3], set.origin[1]);
        for j in j0..=j1 {
            for i in i0..=i1 {
                hit[j * k + i] = true;
            }
        }
    }
    hit.iter()
        .enumerate()
        .filter(|(_, h)| **h)
        .map(|(i, _)| i)
        .collect()
}

/// Masses of the level-`n` squares meeting the set, for each level.
#[derive(Debug, Clone, PartialEq)]
pub struct ContentProfile {
    pub base: u32,
    pub levels: Vec<u32>,
    pub masses: Vec<Vec<f64>>,
}

impl ContentProfile {
    pub fn new(set: &PlanarSet, measure: &Measure2D, levels: &[u32], base: u32) -> Result<Self> {
        ensure!(base >= 2, "subdivision base must be ≥ 2");
        ensure!(!levels.is_empty(), "need at least one level");
        ensure!(
            levels
                .iter()
                .all(|&l| (base as f64).powi(l as i32) <= 1024.0),
            "level too fine"
        );
        let masses = levels
            .iter()
            .map(|&level| {
                let k = (base as usize).pow(level);
                let w = set.side / k as f64;
                squares_meeting(set, base, level)
                    .into_iter()
                    .map(|idx| {
                        let (i, j) = (idx % k, idx / k);
                        measure.square_mass(
                            set.origin[0] + i as f64 * w,
                            set.origin[1] + j as f64 * w,
                            w,
                        )
                    })
                    .collect()
            })
            .collect();
        Ok(ContentProfile {
            base,
            levels: levels.to_vec(),
            masses,
        })
    }

    /// `S_n(s) = Σ M(square)^s` per level.
    pub fn sums(&self, s: f64) -> Vec<f64> {
        self.masses
            .iter()
            .map(|ms| ms.iter().map(|m| m.powf(s)).sum())
            .collect()
    }

    /// Least-squares slope of `ln S_n(s)` against `n ln base`, with its
    /// standard error.
    pub fn slope(&self, s: f64) -> (f64, f64) {
        let xs: Vec<f64> = self
            .levels
            .iter()
            .map(|&l| l as f64 * (self.base as f64).ln())
            .collect();
        let ys: Vec<f64> = self.sums(s).iter().map(|v| v.ln()).collect();
        let fit = line_fit(&xs, &ys);
        (fit.slope, fit.slope_stderr)
    }
}

/// `S_n(s)` per level for the squares of the given base meeting `K`.
pub fn measure_hausdorff_content(
    set: &PlanarSet,
    measure: &Measure2D,
    s: f64,
    levels: &[u32],
    base: u32,
) -> Result<Vec<f64>> {
    ensure!(s.is_finite() && s >= 0.0, "exponent must be ≥ 0");
    Ok(ContentProfile::new(set, measure, levels, base)?.sums(s))
}

/// Resolution of the critical-exponent bisection.
pub const CRITICAL_S_RESOLUTION: f64 = 1e-3;

/// Exponent where the slope of `ln S_n(s)` changes sign, found on `[0, 2]`,
/// with a standard error propagated from the slope fit.
pub fn critical_exponent(profile: &ContentProfile) -> Result<(f64, f64)> {
    ensure!(
        profile.levels.len() >= 3,
        "critical exponent needs at least 3 levels"
    );
    let (mut lo, mut hi) = (0.0, 2.0);
    let (at_lo, _) = profile.slope(lo);
    let (at_hi, _) = profile.slope(hi);
    if !(at_lo > 0.0 && at_hi < 0.0) {
        return Err(MrmError::numerical(
            "critical exponent",
            format!("estimator degenerate: slope does not change sign on [0, 2] ({at_lo:.4} at 0, {at_hi:.4} at 2)"),
        ));
    }
    while hi - lo > CRITICAL_S_RESOLUTION {
        let mid = 0.5 * (lo + hi);
        if profile.slope(mid).0 > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let s = 0.5 * (lo + hi);
    let (_, se) = profile.slope(s);
    let h = CRITICAL_S_RESOLUTION;
    let derivative = (profile.slope(s + h).0 - profile.slope(s - h).0) / (2.0 * h);
    let stderr = if derivative != 0.0 {
        se / derivative.abs()
    } else {
        f64::INFINITY
    };
    Ok((s, stderr))
}

// ---------------------------------------------------------------------------
// 2D dimension check

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Model2D {
    /// Log-normal chaos with `R` equal to the side of the set's square.
    Lognormal { gamma2: f64 },
    /// GFF chaos on `B(0, radius)`; the set's square must lie inside it.
    Gff { gamma2: f64, radius: f64 },
}

impl Model2D {
    pub fn gamma2(&self) -> f64 {
        match *self {
            Model2D::Lognormal { gamma2 } | Model2D::Gff { gamma2, .. } => gamma2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Kpz2dSetup {
    pub model: Model2D,
    /// Cells per side of the grid over the set's bounding square.
    pub n: usize,
    pub replicas: usize,
    pub seed: u64,
    pub levels: Vec<u32>,
    /// Subdivision base of the covering squares.
    pub base: u32,
    pub tolerance: f64,
}

impl Kpz2dSetup {
    /// Levels whose squares stay at least two cells wide.
    pub fn default_levels(n: usize, base: u32) -> Vec<u32> {
        (0..)
            .take_while(|&k| (base as f64).powi(k as i32) * 2.0 <= n as f64)
            .collect()
    }
}

pub fn kpz_verify_2d(set: &PlanarSet, setup: &Kpz2dSetup) -> Result<KpzReport> {
    let gamma2 = setup.model.gamma2();
    check_gamma2(gamma2)?;
    ensure!(setup.replicas >= 1, "need at least one replica");
    ensure!(setup.tolerance > 0.0, "tolerance must be > 0");
    let grid = Grid2D::new(set.origin, set.side, setup.n)?;
    let kernel = match setup.model {
        Model2D::Lognormal { gamma2 } => Kernel2D::lognormal(gamma2, set.side, grid.spacing)?,
        Model2D::Gff { gamma2, radius } => {
            let corners = [
                set.origin,
                [set.origin[0] + set.side, set.origin[1]],
                [set.origin[0], set.origin[1] + set.side],
                [set.origin[0] + set.side, set.origin[1] + set.side],
            ];
            let r = corners.iter().map(|&c| norm(c)).fold(0.0, f64::max);
            ensure!(r < radius, "the set's square reaches radius {r}; it must lie inside B(0, r) with r < R = {radius}");
            Kernel2D::gff_disk(gamma2, radius)?
        }
    };
    let solution = kpz_solve_2d(gamma2, set.delta0)?;
    let mut notes = Vec::new();
    if solution.beyond_branch {
        notes.push(format!(
            "δ₀ = {} exceeds ζ(1); no root on the increasing branch",
            set.delta0
        ));
    }
    let conserving = kpz_solve_2d_with(gamma2, set.delta0, zeta2d_mass_conserving)?;
    notes.push(format!(
        "root for the mass-conserving exponent: {}",
        conserving.delta
    ));
    let estimate = |measure: &Measure2D, replica: usize| -> Result<ReplicaEstimate> {
        let profile = ContentProfile::new(set, measure, &setup.levels, setup.base)?;
        let (s, stderr) = critical_exponent(&profile)?;
        Ok(ReplicaEstimate {
            replica,
            dim_rho_est: s,
            stderr,
            discarded: false,
        })
    };
    let estimates = if gamma2 == 0.0 {
        let m = Measure2D::lebesgue(grid);
        (0..setup.replicas)
            .map(|r| estimate(&m, r))
            .collect::<Result<Vec<_>>>()?
    } else {
        let sampler = Field2DSampler::new(grid, kernel)?;
        map_chunks(setup.replicas, |range| {
            let first = range.start;
            let seeds: Vec<u64> = range
                .map(|r| derive_seed(setup.seed, "kpz-2d", r as u64))
                .collect();
            sampler
                .sample_batch(&seeds)
                .iter()
                .enumerate()
                .map(|(k, f)| {
                    let m = Measure2D::from_field(f);
                    if !(m.total_mass() > 0.0) {
                        return Ok(ReplicaEstimate {
                            replica: first + k,
                            dim_rho_est: f64::NAN,
                            stderr: f64::NAN,
                            discarded: true,
                        });
                    }
                    estimate(&m, first + k)
                })
                .collect()
        })?
    };
    Ok(report_from_estimates(
        format!("{} [{}]", set.label, kernel.kind()),
        set.delta0,
        solution.delta,
        estimates,
        setup.tolerance,
        solution.beyond_branch,
        notes,
    ))
}

/// Mean cell mass over replicas with its standard error, for the
/// normalization check `E[cell mass] = Δ²`.
pub fn mean_cell_mass(sampler: &Field2DSampler, replicas: usize, seed: u64) -> stats::Estimate {
    let seeds: Vec<u64> = (0..replicas as u64)
        .map(|r| derive_seed(seed, "cell-mass", r))
        .collect();
    let per_replica: Vec<f64> = sampler
        .sample_batch(&seeds)
        .iter()
        .map(|f| {
            let m = Measure2D::from_field(f);
            let active = f.active.iter().filter(|a| **a).count();
            m.total_mass() / active as f64
        })
        .collect();
    stats::Estimate::of_mean(&per_replica)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_seam_and_diagonal() {
        let (l, g, r) = (0.1, 0.7, 2.0);
        let x = [0.3, 0.4];
        let at_seam = lognormal_kernel(x, [0.3 + l, 0.4], l, g, r);
        assert!((at_seam - g * (r / l).ln()).abs() < 1e-12);
        assert!((lognormal_kernel(x, x, l, g, r) - g * ((r / l).ln() + 2.0)).abs() < 1e-14);
        assert_eq!(lognormal_kernel(x, [x[0] + 1.01 * r, x[1]], l, g, r), 0.0);
    }

    #[test]
    fn zeta_identities() {
        assert_eq!(zeta2d(0.5, 0.0), 0.0);
        assert!((zeta2d(1.0, 1.0) - 2.5).abs() < 1e-15);
        assert!((zeta2d(0.5, 0.5) - 1.1875).abs() < 1e-15);
        for k in 0..40 {
            let g = k as f64 * 0.1;
            assert!((zeta2d(g, 2.0) - 4.0).abs() < 1e-12);
        }
    }

    #[test]
    fn solver_2d() {
        let d0 = 2.0 * 2f64.ln() / 3f64.ln();
        let s = kpz_solve_2d(0.5, d0).unwrap();
        let root = (2.5 - (6.25 - d0).sqrt()) / 0.5;
        assert!((s.delta - root).abs() < 1e-12);
        assert!(!s.beyond_branch);
        assert!((kpz_solve_2d(0.0, d0).unwrap().delta - d0 / 2.0).abs() < 1e-12);
        assert!(kpz_solve_2d(4.0, 1.0).is_err());
        let c = kpz_solve_2d_with(0.5, d0, zeta2d_mass_conserving).unwrap();
        let root = (2.25 - (2.25f64 * 2.25 - d0).sqrt()) / 0.5;
        assert!((c.delta - root).abs() < 1e-12);
        assert_eq!(
            kpz_solve_2d_with(1.0, 2.0, zeta2d_mass_conserving)
                .unwrap()
                .delta,
            1.0
        );
        assert!((zeta2d_mass_conserving(1.7, 1.0) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn green_function_basics() {
        let r = 1.5;
        let x = [0.4, -0.3];
        assert!((green_disk(x, [0.0, 0.0], r).unwrap() - (r / 0.5).ln()).abs() < 1e-14);
        let y = [-0.2, 0.7];
        assert!((green_disk(x, y, r).unwrap() - green_disk(y, x, r).unwrap()).abs() < 1e-12);
        let edge = [r * (1.0 - 1e-6), 0.0];
        assert!(green_disk(edge, y, r).unwrap().abs() < 1e-5);
        assert!(matches!(green_disk(x, x, r), Err(MrmError::Singular(_))));
        assert!(matches!(
            green_disk([2.0, 0.0], y, r),
            Err(MrmError::Range(_))
        ));
        assert!(green_harmonicity_residual([0.5, 0.5], y, r).unwrap().abs() < 1e-4);
    }

    #[test]
    fn cell_average_of_log() {
        // polar form: 8 ∫_0^{π/4} ∫_0^{sec θ} (1 − r c)(1 − r s) r ln r dr dθ,
        // radial part in closed form, angle by Gauss–Legendre
        let moment = |k: i32, a: f64| {
            a.powi(k + 1) * (a.ln() / (k + 1) as f64 - 1.0 / ((k + 1) * (k + 1)) as f64)
        };
        let (nodes, weights) = crate::quad::gauss_legendre(40);
        let quarter = std::f64::consts::FRAC_PI_4;
        let exact: f64 = nodes
            .iter()
            .zip(&weights)
            .map(|(x, w)| {
                let t = 0.5 * quarter * (x + 1.0);
                let (c, s) = (t.cos(), t.sin());
                let a = 1.0 / c;
                let radial = moment(1, a) - (c + s) * moment(2, a) + c * s * moment(3, a);
                0.5 * quarter * w * 8.0 * radial
            })
            .sum();
        assert!((exact + 0.805_086_721_9).abs() < 1e-9, "{exact}");
        let v = cell_average_log_distance((0, 0)).unwrap();
        assert!((v - exact).abs() < 1e-8, "{v} vs {exact}");
        // far cells: average ≈ log of the centre distance
        let far = cell_average_log_distance((2, 2)).unwrap();
        assert!((far - 8f64.sqrt().ln()).abs() < 0.01);
        let near = cell_average_log_distance((1, 0)).unwrap();
        assert!(near > v && near < far);
    }

    #[test]
    fn square_and_disk_masses_of_lebesgue() {
        let grid = Grid2D::centred(1.0, 16).unwrap();
        let m = Measure2D::lebesgue(grid);
        assert!((m.total_mass() - 4.0).abs() < 1e-12);
        assert!((m.square_mass(-0.33, 0.1, 0.5) - 0.25).abs() < 1e-12);
        assert!((m.disk_mass([0.0, 0.0], 1.0) - std::f64::consts::PI).abs() < 0.01);
    }

    #[test]
    fn one_cell_grid_is_scalar_normal() {
        let grid = Grid2D::new([0.0, 0.0], 1.0, 1).unwrap();
        let k = Kernel2D::lognormal(0.5, 2.0, 1.0).unwrap();
        let f = sample_field2d(grid, k, 3).unwrap();
        assert_eq!(f.values.len(), 1);
        assert!((f.variances[0] - 0.5 * (2f64.ln() + 2.0)).abs() < 1e-15);
    }

    #[test]
    fn lebesgue_content_sums() {
        let set = full_square([0.0, 0.0], 1.0).unwrap();
        let m = Measure2D::lebesgue(Grid2D::new([0.0, 0.0], 1.0, 16).unwrap());
        let s = measure_hausdorff_content(&set, &m, 0.7, &[0, 1, 2, 3], 2).unwrap();
        for (n, v) in s.iter().enumerate() {
            let exact = 4f64.powi(n as i32) * 4f64.powi(-(n as i32)).powf(0.7);
            assert!((v - exact).abs() < 1e-10 * exact);
        }
        let total = measure_hausdorff_content(&set, &m, 1.0, &[0, 1, 2, 3], 2).unwrap();
        assert!(total.iter().all(|t| (t - 1.0).abs() < 1e-12));
        let counts = measure_hausdorff_content(&set, &m, 0.0, &[2], 2).unwrap();
        assert_eq!(counts[0], 16.0);
    }

    #[test]
    fn dust_critical_exponent_for_lebesgue() {
        let set = make_cantor_dust(1.0 / 3.0, 5, [0.0, 0.0], 1.0).unwrap();
        assert_eq!(set.base, 3);
        let m = Measure2D::lebesgue(Grid2D::new([0.0, 0.0], 1.0, 54).unwrap());
        let p = ContentProfile::new(&set, &m, &[0, 1, 2, 3], 3).unwrap();
        let (s, _) = critical_exponent(&p).unwrap();
        assert!((s - set.delta0 / 2.0).abs() < 2e-3, "{s}");
    }
}
