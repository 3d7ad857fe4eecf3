//! The measure `M_l(dt) = e^{ω_l(t)} dt`, the random metric
//! `ρ(x, y) = M([x, y])`, and Monte Carlo checks of its scaling laws.

use std::io::Write;

use crate::cone::ConeParams;
use crate::error::{ensure, MrmError, Result};
use crate::levy::LevyTriple;
use crate::parallel::map_chunks;
use crate::seed::{derive_seed, rng_from_seed};
use crate::stats::{self, weighted_line_fit};
use crate::synthesis::{CoupledGaussian, Field1D, FieldSampler, Grid1D};

/// Cell masses of `M_l` on a uniform grid with the cumulative table
/// `R(x) = ρ(start, x)` at the cell edges.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasureGrid {
    start: f64,
    spacing: f64,
    masses: Vec<f64>,
    cumulative: Vec<f64>,
}

impl MeasureGrid {
    pub fn from_masses(start: f64, spacing: f64, masses: Vec<f64>) -> Result<Self> {
        ensure!(
            spacing.is_finite() && spacing > 0.0,
            "cell width must be > 0"
        );
        ensure!(!masses.is_empty(), "measure needs at least one cell");
        if let Some(i) = masses.iter().position(|m| !m.is_finite() || *m < 0.0) {
            return Err(MrmError::numerical(
                "measure",
                format!("cell {i} has mass {}", masses[i]),
            ));
        }
        let mut cumulative = Vec::with_capacity(masses.len() + 1);
        let mut acc = 0.0;
        cumulative.push(0.0);
        for m in &masses {
            acc += m;
            cumulative.push(acc);
        }
        Ok(MeasureGrid {
            start,
            spacing,
            masses,
            cumulative,
        })
    }

    /// Lebesgue measure on `n` cells of `[0, length]`.
    pub fn lebesgue(length: f64, n: usize) -> Result<Self> {
        let g = Grid1D::cells(length, n)?;
        MeasureGrid::from_masses(0.0, g.spacing, vec![g.spacing; n])
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn end(&self) -> f64 {
        self.start + self.masses.len() as f64 * self.spacing
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    /// `R` at the `n + 1` cell edges.
    pub fn cumulative(&self) -> &[f64] {
        &self.cumulative
    }

    pub fn total_mass(&self) -> f64 {
        self.cumulative[self.masses.len()]
    }

    pub fn max_cell_mass(&self) -> f64 {
        self.masses.iter().copied().fold(0.0, f64::max)
    }

    /// `R(x)`, linear between edges.
    pub fn cumulative_at(&self, x: f64) -> Result<f64> {
        let (a, b) = (self.start, self.end());
        let tol = 1e-12 * (b - a);
        if !(x >= a - tol && x <= b + tol) {
            return Err(MrmError::Range(format!(
                "{x} is outside the measure domain [{a}, {b}]"
            )));
        }
        let pos = ((x - a) / self.spacing).clamp(0.0, self.masses.len() as f64);
        let k = (pos.floor() as usize).min(self.masses.len() - 1);
        let frac = pos - k as f64;
        Ok(self.cumulative[k] + frac * self.masses[k])
    }

    /// Merges every `factor` consecutive cells.
    pub fn coarsen(&self, factor: usize) -> Result<MeasureGrid> {
        ensure!(factor >= 1, "coarsening factor must be ≥ 1");
        ensure!(
            self.masses.len().is_multiple_of(factor),
            "{} cells cannot be merged in groups of {factor}",
            self.masses.len()
        );
        let masses = self.masses.chunks(factor).map(|c| c.iter().sum()).collect();
        MeasureGrid::from_masses(self.start, self.spacing * factor as f64, masses)
    }
}

/// Midpoint rule: cell `i` gets `e^{ω_l(t_i)} Δ`, with `t_i` the midpoint.
pub fn build_measure(field: &Field1D) -> Result<MeasureGrid> {
    if let Some(i) = field.values.iter().position(|v| !v.is_finite()) {
        return Err(MrmError::numerical(
            "measure",
            format!("field value {i} is {}", field.values[i]),
        ));
    }
    let d = field.grid.spacing;
    MeasureGrid::from_masses(
        field.grid.start,
        d,
        field.values.iter().map(|v| v.exp() * d).collect(),
    )
}

/// `ρ(x, y) = M([x, y])` for `x ≤ y` inside the domain.
pub fn rho(measure: &MeasureGrid, x: f64, y: f64) -> Result<f64> {
    if x > y {
        return Err(MrmError::Range(format!("ρ needs x ≤ y, got {x} > {y}")));
    }
    Ok(measure.cumulative_at(y)? - measure.cumulative_at(x)?)
}

// ---------------------------------------------------------------------------
// Moment scaling

/// Simulation setup shared by the moment estimators.
#[derive(Debug, Clone)]
pub struct MomentSetup {
    pub triple: LevyTriple,
    pub cone: ConeParams,
    /// Simulated stretch `[0, domain]`; each scale averages over the disjoint
    /// windows that fit inside it.
    pub domain: f64,
    pub replicas: usize,
    pub seed: u64,
    /// Average each replica over all disjoint windows `[kt, (k+1)t]` instead
    /// of using `[0, t]` only. Lowers the variance but makes the `q = 1`
    /// moment exactly proportional to `t`.
    pub average_windows: bool,
}

/// Smallest usable ratio `t / l` between a scale and the resolution.
pub const MIN_SCALE_OVER_L: f64 = 32.0;
pub const BOOTSTRAP_RESAMPLES: usize = 200;

/// Fitted moment scaling for one `q`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentScalingFit {
    pub q: f64,
    pub scales: Vec<f64>,
    /// `ln` of the Monte Carlo estimate of `E[M([0, t])^q]`.
    pub log_means: Vec<f64>,
    /// Bootstrap standard errors of `log_means`.
    pub stderrs: Vec<f64>,
    pub n_rep: usize,
    /// Fitted `ζ̂(q)`.
    pub slope: f64,
    pub slope_stderr: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub analytic_zeta: f64,
    /// False when `q > 1` and `ζ(q) ≤ 1`: the moment may be infinite and the
    /// fit is meaningless.
    pub reliable: bool,
}

/// Window masses `[replica][scale][window]`.
fn window_masses(setup: &MomentSetup, scales: &[f64]) -> Result<Vec<Vec<Vec<f64>>>> {
    let l = setup.cone.resolution;
    let n = (setup.domain / (l / crate::synthesis::DEFAULT_POINTS_PER_L)).round() as usize;
    let grid = Grid1D::cells(setup.domain, n)?;
    let sampler = FieldSampler::new(grid, setup.cone, &setup.triple)?;
    map_chunks(setup.replicas, |range| {
        let seeds: Vec<u64> = range
            .map(|r| derive_seed(setup.seed, "moment-replica", r as u64))
            .collect();
        sampler
            .sample_batch(&seeds)?
            .iter()
            .map(|field| {
                let m = build_measure(field)?;
                scales
                    .iter()
                    .map(|&t| {
                        let count = if setup.average_windows {
                            ((setup.domain / t) * (1.0 + 1e-9)).floor() as usize
                        } else {
                            1
                        };
                        (0..count)
                            .map(|k| rho(&m, k as f64 * t, (k + 1) as f64 * t))
                            .collect()
                    })
                    .collect()
            })
            .collect()
    })
}

fn validate_scales(setup: &MomentSetup, scales: &[f64]) -> Result<()> {
    ensure!(
        setup.replicas >= 100,
        "moment estimation needs at least 100 replicas"
    );
    ensure!(scales.len() >= 4, "moment fit needs at least 4 scales");
    ensure!(
        scales.windows(2).all(|w| w[0] < w[1]),
        "scales must be strictly increasing"
    );
    let (l, t) = (setup.cone.resolution, setup.cone.integral_scale);
    for &s in scales {
        ensure!(s > 0.0 && s <= t, "scale {s} is outside (0, T]");
        ensure!(
            s <= setup.domain * (1.0 + 1e-12),
            "scale {s} exceeds the simulated domain {}",
            setup.domain
        );
        ensure!(
            s >= MIN_SCALE_OVER_L * l * (1.0 - 1e-12),
            "scale {s} is below {MIN_SCALE_OVER_L}·l = {}",
            MIN_SCALE_OVER_L * l
        );
    }
    Ok(())
}

/// Per-replica `q`-th window moments averaged within each replica.
fn replica_moments(masses: &[Vec<Vec<f64>>], q: f64) -> Vec<Vec<f64>> {
    masses
        .iter()
        .map(|per_scale| {
            per_scale
                .iter()
                .map(|w| w.iter().map(|m| m.powf(q)).sum::<f64>() / w.len() as f64)
                .collect()
        })
        .collect()
}

fn fit_q(
    setup: &MomentSetup,
    scales: &[f64],
    masses: &[Vec<Vec<f64>>],
    q: f64,
) -> Result<MomentScalingFit> {
    let analytic_zeta = setup.triple.zeta(q)?;
    let reliable = analytic_zeta.is_finite() && (q <= 1.0 || analytic_zeta > 1.0);
    let per_replica = replica_moments(masses, q);
    let n_rep = per_replica.len();
    let t_ref = setup.cone.integral_scale;
    let xs: Vec<f64> = scales.iter().map(|t| (t / t_ref).ln()).collect();
    let log_means_of = |idx: &mut dyn Iterator<Item = usize>| -> Vec<f64> {
        let mut sums = vec![0.0; scales.len()];
        let mut count = 0usize;
        for r in idx {
            for (s, v) in sums.iter_mut().zip(&per_replica[r]) {
                *s += v;
            }
            count += 1;
        }
        sums.iter().map(|s| (s / count as f64).ln()).collect()
    };
    let log_means = log_means_of(&mut (0..n_rep));
    let mut rng = rng_from_seed(derive_seed(setup.seed, "moment-bootstrap", q.to_bits()));
    let mut boot: Vec<Vec<f64>> = Vec::with_capacity(BOOTSTRAP_RESAMPLES);
    for _ in 0..BOOTSTRAP_RESAMPLES {
        let picks: Vec<usize> = (0..n_rep)
            .map(|_| rand::Rng::gen_range(&mut rng, 0..n_rep))
            .collect();
        boot.push(log_means_of(&mut picks.into_iter()));
    }
    let stderrs: Vec<f64> = (0..scales.len())
        .map(|k| {
            let col: Vec<f64> = boot.iter().map(|b| b[k]).collect();
            stats::variance(&col).sqrt().max(1e-300)
        })
        .collect();
    let weights: Vec<f64> = if stderrs.iter().all(|s| *s > 1e-150) {
        stderrs.iter().map(|s| 1.0 / (s * s)).collect()
    } else {
        vec![1.0; scales.len()]
    };
    let fit = weighted_line_fit(&xs, &log_means, &weights);
    // correlated scales: the slope error comes from refitting each resample
    let boot_slopes: Vec<f64> = boot
        .iter()
        .map(|b| weighted_line_fit(&xs, b, &weights).slope)
        .collect();
    let slope_stderr = stats::variance(&boot_slopes).sqrt();
    Ok(MomentScalingFit {
        q,
        scales: scales.to_vec(),
        log_means,
        stderrs,
        n_rep,
        slope: fit.slope,
        slope_stderr,
        intercept: fit.intercept,
        r_squared: fit.r_squared,
        analytic_zeta,
        reliable,
    })
}

/// `ζ̂(q)` for several `q` from one set of replicas.
pub fn estimate_zeta_many(
    setup: &MomentSetup,
    qs: &[f64],
    scales: &[f64],
) -> Result<Vec<MomentScalingFit>> {
    validate_scales(setup, scales)?;
    for &q in qs {
        ensure!(
            q.is_finite() && q >= 0.0,
            "moment order must be ≥ 0, got {q}"
        );
        ensure!(setup.triple.zeta(q)?.is_finite(), "ζ({q}) is infinite");
    }
    let masses = window_masses(setup, scales)?;
    qs.iter()
        .map(|&q| fit_q(setup, scales, &masses, q))
        .collect()
}

/// Weighted least-squares fit of `ln E[M([0, t])^q]` against `ln(t/T)`.
pub fn estimate_zeta(
    triple: &LevyTriple,
    cone: &ConeParams,
    q: f64,
    scales: &[f64],
    replicas: usize,
    seed: u64,
) -> Result<MomentScalingFit> {
    let domain = scales.iter().copied().fold(0.0, f64::max);
    let setup = MomentSetup {
        triple: triple.clone(),
        cone: *cone,
        domain,
        replicas,
        seed,
        average_windows: true,
    };
    Ok(estimate_zeta_many(&setup, &[q], scales)?.remove(0))
}

/// `E[M([0, λT])^q]` against `λ^{ζ(q)} E[M([0, T])^q]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlobalScalingReport {
    pub lambda: f64,
    pub q: f64,
    pub ratio: f64,
    pub ratio_stderr: f64,
    pub predicted: f64,
    pub z: f64,
    pub pass: bool,
}

pub fn global_scaling_check(
    triple: &LevyTriple,
    cone: &ConeParams,
    lambda: f64,
    q: f64,
    replicas: usize,
    seed: u64,
) -> Result<GlobalScalingReport> {
    ensure!(
        lambda > 0.0 && lambda <= 1.0,
        "λ must be in (0, 1], got {lambda}"
    );
    ensure!(replicas >= 2, "need at least two replicas");
    let zeta = triple.zeta(q)?;
    ensure!(zeta.is_finite(), "ζ({q}) is infinite");
    let t = cone.integral_scale;
    let n = (t / (cone.resolution / crate::synthesis::DEFAULT_POINTS_PER_L)).round() as usize;
    let sampler = FieldSampler::new(Grid1D::cells(t, n)?, *cone, triple)?;
    let pairs: Vec<(f64, f64)> = map_chunks(replicas, |range| {
        let seeds: Vec<u64> = range
            .map(|r| derive_seed(seed, "global-scaling", r as u64))
            .collect();
        sampler
            .sample_batch(&seeds)?
            .iter()
            .map(|f| {
                let m = build_measure(f)?;
                Ok((rho(&m, 0.0, lambda * t)?.powf(q), m.total_mass().powf(q)))
            })
            .collect()
    })?;
    let small: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let full: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let ratio = stats::mean(&small) / stats::mean(&full);
    let mut rng = rng_from_seed(derive_seed(seed, "global-bootstrap", 0));
    let ratio_stderr = stats::bootstrap_stderr(pairs.len(), BOOTSTRAP_RESAMPLES, &mut rng, |idx| {
        let (a, b) = idx
            .iter()
            .fold((0.0, 0.0), |acc, &i| (acc.0 + small[i], acc.1 + full[i]));
        a / b
    });
    let predicted = lambda.powf(zeta);
    let z = if ratio_stderr > 0.0 {
        (ratio - predicted) / ratio_stderr
    } else if (ratio - predicted).abs() <= 1e-12 {
        0.0
    } else {
        f64::INFINITY
    };
    Ok(GlobalScalingReport {
        lambda,
        q,
        ratio,
        ratio_stderr,
        predicted,
        z,
        pass: z.abs() <= 5.0,
    })
}

// ---------------------------------------------------------------------------
// Atomlessness

#[derive(Debug, Clone, PartialEq)]
pub struct AtomlessnessReport {
    pub max_masses: Vec<f64>,
    /// Each refinement strictly lowers the largest cell mass.
    pub decreasing: bool,
}

/// Largest cell mass along a sequence of refinements of one realization.
pub fn atomlessness_probe(levels: &[MeasureGrid]) -> Result<AtomlessnessReport> {
    ensure!(
        levels.len() >= 3,
        "atomlessness probe needs at least 3 refinement levels, got {}",
        levels.len()
    );
    let max_masses: Vec<f64> = levels.iter().map(MeasureGrid::max_cell_mass).collect();
    let decreasing = max_masses.windows(2).all(|w| w[1] < w[0]);
    Ok(AtomlessnessReport {
        max_masses,
        decreasing,
    })
}

/// Refinement sequences of coupled Gaussian realizations: level `k` is
/// `M_{l_k}` on cells of width `l_k / 4`, with `l_k = l_0 / factor^k`, all
/// built from the same realization of `μ`.
#[derive(Debug, Clone)]
pub struct CoupledRefinements {
    coupled: CoupledGaussian,
    factor: usize,
    levels: usize,
}

impl CoupledRefinements {
    pub fn new(
        triple: &LevyTriple,
        integral_scale: f64,
        coarsest: f64,
        factor: usize,
        levels: usize,
    ) -> Result<Self> {
        ensure!(levels >= 1, "need at least one level");
        ensure!(factor >= 2, "refinement factor must be ≥ 2");
        let resolutions: Vec<f64> = (0..levels)
            .map(|k| coarsest / (factor as f64).powi(k as i32))
            .collect();
        let fine_cell = resolutions[levels - 1] / crate::synthesis::DEFAULT_POINTS_PER_L;
        let n = (integral_scale / fine_cell).round() as usize;
        let grid = Grid1D::cells(integral_scale, n)?;
        let coupled = CoupledGaussian::new(grid, integral_scale, &resolutions, triple)?;
        Ok(CoupledRefinements {
            coupled,
            factor,
            levels,
        })
    }

    pub fn sample(&self, seed: u64) -> Result<Vec<MeasureGrid>> {
        self.coupled
            .sample(seed)?
            .iter()
            .enumerate()
            .map(|(k, f)| build_measure(f)?.coarsen(self.factor.pow((self.levels - 1 - k) as u32)))
            .collect()
    }

    /// Fraction of `replicas` realizations whose largest cell mass strictly
    /// decreases along the refinements.
    pub fn decreasing_fraction(&self, replicas: usize, seed: u64) -> Result<f64> {
        ensure!(replicas >= 1, "need at least one replica");
        let flags = map_chunks(replicas, |range| {
            range
                .map(|r| {
                    let levels = self.sample(derive_seed(seed, "atomlessness", r as u64))?;
                    Ok(atomlessness_probe(&levels)?.decreasing)
                })
                .collect()
        })?;
        Ok(flags.iter().filter(|&&d| d).count() as f64 / replicas as f64)
    }
}

// ---------------------------------------------------------------------------
// CSV

/// Rows `q, t, log_mean, stderr, n_rep`.
pub fn write_moments_csv<W: Write>(out: W, fits: &[MomentScalingFit]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["q", "t", "log_mean", "stderr", "n_rep"])?;
    for f in fits {
        for k in 0..f.scales.len() {
            w.write_record([
                f.q.to_string(),
                f.scales[k].to_string(),
                f.log_means[k].to_string(),
                f.stderrs[k].to_string(),
                f.n_rep.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// One summary row per `q`.
pub fn write_fit_csv<W: Write>(out: W, fits: &[MomentScalingFit]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "q",
        "slope",
        "slope_stderr",
        "intercept",
        "r_squared",
        "zeta_analytic",
        "reliable",
    ])?;
    for f in fits {
        w.write_record([
            f.q.to_string(),
            f.slope.to_string(),
            f.slope_stderr.to_string(),
            f.intercept.to_string(),
            f.r_squared.to_string(),
            f.analytic_zeta.to_string(),
            f.reliable.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
