//! Fractal test sets, box-counting dimension, the random-metric image of a
//! set, the dimension relation solver, and the 1D verification pipeline.
//!
//! Hausdorff dimension is estimated by box counting. For the self-similar
//! sets generated here the two dimensions coincide; for arbitrary sets the
//! estimate is a box dimension only.

use std::io::Write;

use rand::Rng;

use crate::cone::ConeParams;
use crate::error::{ensure, MrmError, Result};
use crate::levy::{check_nondegenerate, JumpMeasure, LevyTriple};
use crate::measure::{build_measure, MeasureGrid};
use crate::parallel::map_chunks;
use crate::seed::{derive_seed, rng_from_seed};
use crate::stats::{self, line_fit};
use crate::synthesis::{FieldSampler, Grid1D};

#[derive(Debug, Clone, PartialEq)]
pub enum SetDescriptor {
    Cantor {
        ratio: f64,
        depth: u32,
    },
    FullInterval,
    Points(Vec<f64>),
    /// Image of another set under a map.
    Image(Box<SetDescriptor>),
}

impl SetDescriptor {
    pub fn label(&self) -> String {
        match self {
            SetDescriptor::Cantor { ratio, depth } => {
                format!("cantor(ratio={ratio},depth={depth})")
            }
            SetDescriptor::FullInterval => "full-interval".into(),
            SetDescriptor::Points(p) => format!("points(n={})", p.len()),
            SetDescriptor::Image(inner) => format!("image({})", inner.label()),
        }
    }

    /// Whether box and Hausdorff dimension are known to agree.
    pub fn is_self_similar(&self) -> bool {
        match self {
            SetDescriptor::Image(inner) => inner.is_self_similar(),
            _ => true,
        }
    }
}

/// A set given by a finite cover of closed intervals at its finest depth.
#[derive(Debug, Clone, PartialEq)]
pub struct FractalSet {
    pub descriptor: SetDescriptor,
    /// Sorted, pairwise disjoint or touching closed intervals.
    pub cover: Vec<(f64, f64)>,
    /// Nominal dimension of the set (of the source set for images).
    pub delta0: f64,
    /// Length of the ambient interval `[0, domain]`.
    pub domain: f64,
    /// Scales below this are not resolved by the cover.
    pub finest_scale: f64,
}

/// Two-branch self-similar Cantor set on `[0, length]`.
pub fn make_cantor(ratio: f64, depth: u32, length: f64) -> Result<FractalSet> {
    ensure!(
        ratio > 0.0 && ratio <= 0.5,
        "Cantor ratio must be in (0, 1/2], got {ratio}"
    );
    ensure!(depth >= 1, "Cantor depth must be ≥ 1");
    ensure!(
        depth <= 24,
        "Cantor depth {depth} would need more than 2^24 intervals"
    );
    ensure!(
        length.is_finite() && length > 0.0,
        "domain length must be > 0"
    );
    let mut left = vec![0.0f64];
    let mut size = length;
    for _ in 0..depth {
        let child = size * ratio;
        let offset = size - child;
        left = left.iter().flat_map(|&a| [a, a + offset]).collect();
        size = child;
    }
    let cover = left.into_iter().map(|a| (a, a + size)).collect();
    Ok(FractalSet {
        descriptor: SetDescriptor::Cantor { ratio, depth },
        cover,
        delta0: 2f64.ln() / (1.0 / ratio).ln(),
        domain: length,
        finest_scale: size,
    })
}

pub fn full_interval(length: f64) -> Result<FractalSet> {
    ensure!(
        length.is_finite() && length > 0.0,
        "domain length must be > 0"
    );
    Ok(FractalSet {
        descriptor: SetDescriptor::FullInterval,
        cover: vec![(0.0, length)],
        delta0: 1.0,
        domain: length,
        finest_scale: 0.0,
    })
}

pub fn point_set(points: &[f64], length: f64) -> Result<FractalSet> {
    ensure!(!points.is_empty(), "point set must not be empty");
    ensure!(
        points.iter().all(|p| (0.0..=length).contains(p)),
        "points must lie in [0, {length}]"
    );
    let mut pts = points.to_vec();
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    Ok(FractalSet {
        descriptor: SetDescriptor::Points(pts.clone()),
        cover: pts.iter().map(|&p| (p, p)).collect(),
        delta0: 0.0,
        domain: length,
        finest_scale: 0.0,
    })
}

/// Estimated dimension from a log–log regression.
#[derive(Debug, Clone, PartialEq)]
pub struct DimensionEstimate {
    pub method: &'static str,
    pub scales: Vec<f64>,
    pub counts: Vec<f64>,
    pub slope: f64,
    pub stderr: f64,
    pub r_squared: f64,
}

const EDGE_TOL: f64 = 1e-9;

/// Number of mesh boxes `[kε, (k+1)ε)` met by the cover. An interval that
/// only touches a box at its edge does not count for that box.
pub fn box_count(cover: &[(f64, f64)], eps: f64) -> u64 {
    let mut total = 0u64;
    let mut last: Option<i64> = None;
    for &(a, b) in cover {
        let lo = (a / eps + EDGE_TOL).floor() as i64;
        let hi = ((b / eps - EDGE_TOL).ceil() as i64 - 1).max(lo);
        let from = match last {
            Some(l) if l >= lo => l + 1,
            _ => lo,
        };
        if hi >= from {
            total += (hi - from + 1) as u64;
        }
        last = Some(last.map_or(hi, |l| l.max(hi)));
    }
    total
}

/// Smallest number of closed intervals of length `ε` covering the cover.
/// Greedy left-to-right placement is optimal on the line.
pub fn cover_count(cover: &[(f64, f64)], eps: f64) -> u64 {
    let mut n = 0u64;
    let mut reach = f64::NEG_INFINITY;
    let step = eps * (1.0 + EDGE_TOL);
    for &(a, b) in cover {
        if b <= reach {
            continue;
        }
        let start = a.max(reach);
        let boxes = (((b - start) / step).ceil() as u64).max(1);
        n += boxes;
        reach = start + boxes as f64 * step;
    }
    n
}

/// How `N(ε)` is counted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CountRule {
    /// Boxes of the fixed mesh `εℤ` met by the set.
    Mesh,
    /// Minimal number of `ε`-intervals covering the set. Insensitive to where
    /// the set sits relative to a mesh, which matters for random images.
    MinimalCover,
}

/// Slope of `ln N(ε)` against `ln(1/ε)` with mesh counts.
pub fn box_dimension(set: &FractalSet, scales: &[f64]) -> Result<DimensionEstimate> {
    box_dimension_with(set, scales, CountRule::Mesh)
}

pub fn box_dimension_with(
    set: &FractalSet,
    scales: &[f64],
    rule: CountRule,
) -> Result<DimensionEstimate> {
    ensure!(
        scales.len() >= 4,
        "box counting needs at least 4 scales, got {}",
        scales.len()
    );
    ensure!(
        scales.iter().all(|s| s.is_finite() && *s > 0.0),
        "scales must be positive"
    );
    let (lo, hi) = scales
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(a, b), &s| (a.min(s), b.max(s)));
    ensure!(
        hi / lo >= 8.0 * (1.0 - 1e-12),
        "scales must span at least 3 octaves, got ratio {}",
        hi / lo
    );
    ensure!(
        lo >= set.finest_scale * (1.0 - 1e-9),
        "scale {lo} is finer than the construction scale {}",
        set.finest_scale
    );
    let counts: Vec<f64> = scales
        .iter()
        .map(|&e| match rule {
            CountRule::Mesh => box_count(&set.cover, e),
            CountRule::MinimalCover => cover_count(&set.cover, e),
        } as f64)
        .collect();
    let xs: Vec<f64> = scales.iter().map(|e| (1.0 / e).ln()).collect();
    let ys: Vec<f64> = counts.iter().map(|c| c.ln()).collect();
    let fit = line_fit(&xs, &ys);
    Ok(DimensionEstimate {
        method: match rule {
            CountRule::Mesh => "euclidean-box",
            CountRule::MinimalCover => "minimal-cover",
        },
        scales: scales.to_vec(),
        counts,
        slope: fit.slope,
        stderr: fit.slope_stderr,
        r_squared: fit.r_squared,
    })
}

/// Image of the set under `x ↦ ρ(0, x)`.
pub fn rho_image(set: &FractalSet, measure: &MeasureGrid) -> Result<FractalSet> {
    let cover = set
        .cover
        .iter()
        .map(|&(a, b)| Ok((measure.cumulative_at(a)?, measure.cumulative_at(b)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(FractalSet {
        descriptor: SetDescriptor::Image(Box::new(set.descriptor.clone())),
        cover,
        delta0: set.delta0,
        domain: measure.total_mass(),
        finest_scale: 0.0,
    })
}

// ---------------------------------------------------------------------------
// Dimension relation

/// Solves `ζ(δ) = δ₀` on `[0, 1]` by bisection.
pub fn kpz_solve<F: Fn(f64) -> f64>(zeta: F, delta0: f64) -> Result<f64> {
    let z0 = zeta(0.0);
    let z1 = zeta(1.0);
    if z0.abs() > 1e-9 || (z1 - 1.0).abs() > 1e-9 {
        return Err(MrmError::Validation(format!(
            "invalid exponent: need ζ(0) = 0 and ζ(1) = 1, got {z0} and {z1}"
        )));
    }
    kpz_solve_on(zeta, delta0, 1.0)
}

/// Solves `ζ(δ) = δ₀` on `[0, upper]` where `ζ` is increasing with `ζ(0) = 0`.
pub fn kpz_solve_on<F: Fn(f64) -> f64>(zeta: F, delta0: f64, upper: f64) -> Result<f64> {
    ensure!(
        upper > 0.0 && upper.is_finite(),
        "solver interval must be non-degenerate"
    );
    const SAMPLES: usize = 64;
    let values: Vec<f64> = (0..=SAMPLES)
        .map(|k| zeta(upper * k as f64 / SAMPLES as f64))
        .collect();
    if values.iter().any(|v| !v.is_finite()) || values.windows(2).any(|w| w[1] <= w[0]) {
        return Err(MrmError::Validation(
            "invalid exponent: ζ is not strictly increasing on the solver interval".into(),
        ));
    }
    let top = values[SAMPLES];
    ensure!(
        delta0 >= values[0] - 1e-12 && delta0 <= top + 1e-12,
        "δ₀ = {delta0} is outside the range [{}, {top}] of ζ on [0, {upper}]",
        values[0]
    );
    let (mut lo, mut hi) = (0.0, upper);
    if delta0 <= values[0] {
        return Ok(0.0);
    }
    if delta0 >= top {
        return Ok(upper);
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        let z = zeta(mid);
        if z == delta0 {
            return Ok(mid);
        }
        if z < delta0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Dimension predicted by `ζ(δ) = δ₀` for a 1D triple; exact for the
/// Lebesgue triple, whose `ζ` is the identity.
pub fn predicted_dimension(triple: &LevyTriple, delta0: f64) -> Result<f64> {
    if is_lebesgue(triple) {
        return Ok(delta0);
    }
    let z = |q: f64| triple.zeta(q).unwrap_or(f64::NAN);
    kpz_solve(z, delta0)
}

fn is_lebesgue(t: &LevyTriple) -> bool {
    t.m == 0.0 && t.sigma2 == 0.0 && matches!(t.nu, JumpMeasure::None)
}

// ---------------------------------------------------------------------------
// 1D pipeline

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReplicaEstimate {
    pub replica: usize,
    pub dim_rho_est: f64,
    pub stderr: f64,
    pub discarded: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KpzReport {
    pub set: String,
    pub delta0: f64,
    pub delta_pred: f64,
    pub replicas: Vec<ReplicaEstimate>,
    pub mean: f64,
    pub stderr: f64,
    pub discarded: usize,
    pub tolerance: f64,
    pub pass: bool,
    /// The model violates a hypothesis of the dimension relation.
    pub outside_hypotheses: bool,
    pub notes: Vec<String>,
}

/// Largest tolerated fraction of discarded replicas.
pub const MAX_DISCARD_FRACTION: f64 = 0.05;

/// Setup for [`kpz_verify_1d`].
#[derive(Debug, Clone)]
pub struct Kpz1dSetup {
    pub triple: LevyTriple,
    pub cone: ConeParams,
    /// Cells of the simulation grid on `[0, set.domain]`.
    pub cells: usize,
    pub replicas: usize,
    pub seed: u64,
    /// Box sizes as fractions of the total mass of the image.
    pub scales: Vec<f64>,
    pub tolerance: f64,
}

/// `3^{-2}, …, 3^{-5}`: coarse enough to stay above `l` at the default
/// resolution, fine enough to leave the single-box regime.
pub fn default_kpz_scales() -> Vec<f64> {
    (2..=5).map(|k| 3f64.powi(-k)).collect()
}

impl KpzReport {
    fn aggregate(
        set: String,
        delta0: f64,
        delta_pred: f64,
        replicas: Vec<ReplicaEstimate>,
        tolerance: f64,
        outside_hypotheses: bool,
        mut notes: Vec<String>,
    ) -> Self {
        let kept: Vec<f64> = replicas
            .iter()
            .filter(|r| !r.discarded)
            .map(|r| r.dim_rho_est)
            .collect();
        let discarded = replicas.len() - kept.len();
        let (mean, stderr) = if kept.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            (stats::mean(&kept), stats::std_error(&kept))
        };
        let allowed = tolerance.max(3.0 * stderr);
        let too_many_discarded = discarded as f64 > MAX_DISCARD_FRACTION * replicas.len() as f64;
        if too_many_discarded {
            notes.push(format!(
                "{discarded} of {} replicas discarded",
                replicas.len()
            ));
        }
        let pass = !kept.is_empty() && (mean - delta_pred).abs() <= allowed && !too_many_discarded;
        KpzReport {
            set,
            delta0,
            delta_pred,
            replicas,
            mean,
            stderr,
            discarded,
            tolerance,
            pass,
            outside_hypotheses,
            notes,
        }
    }
}

/// For each replica: sample the field, build `ρ`, and box-count `ρ(K)`.
pub fn kpz_verify_1d(set: &FractalSet, setup: &Kpz1dSetup) -> Result<KpzReport> {
    ensure!(setup.replicas >= 1, "need at least one replica");
    ensure!(setup.tolerance > 0.0, "tolerance must be > 0");
    let mut notes = Vec::new();
    let lebesgue = is_lebesgue(&setup.triple);
    let mut outside = false;
    if !lebesgue {
        let nd = check_nondegenerate(&setup.triple)?;
        ensure!(
            nd.nondegenerate,
            "the triple is degenerate: ζ(1 + ε) ≤ 1 on the scanned range"
        );
        if !nd.negative_moments_finite {
            outside = true;
            notes.push("outside theorem hypotheses: ψ(−q) is infinite for some q in [0, 1]".into());
        }
    }
    if !set.descriptor.is_self_similar() {
        notes.push("box-dimension only: the set is not self-similar".into());
    }
    let delta_pred = predicted_dimension(&setup.triple, set.delta0)?;
    let grid = Grid1D::cells(set.domain, setup.cells)?;
    let sampler = FieldSampler::new(grid, setup.cone, &setup.triple)?;
    let estimates = map_chunks(setup.replicas, |range| {
        let first = range.start;
        let seeds: Vec<u64> = range
            .map(|r| derive_seed(setup.seed, "kpz-1d", r as u64))
            .collect();
        sampler
            .sample_batch(&seeds)?
            .iter()
            .enumerate()
            .map(|(k, field)| {
                let replica = first + k;
                let m = build_measure(field)?;
                let total = m.total_mass();
                if !(total > 1e-12 * set.domain) || !total.is_finite() {
                    return Ok(ReplicaEstimate {
                        replica,
                        dim_rho_est: f64::NAN,
                        stderr: f64::NAN,
                        discarded: true,
                    });
                }
                let image = rho_image(set, &m)?;
                let scales: Vec<f64> = setup.scales.iter().map(|s| s * total).collect();
                let est = box_dimension_with(&image, &scales, CountRule::MinimalCover)?;
                Ok(ReplicaEstimate {
                    replica,
                    dim_rho_est: est.slope,
                    stderr: est.stderr,
                    discarded: false,
                })
            })
            .collect()
    })?;
    Ok(KpzReport::aggregate(
        set.descriptor.label(),
        set.delta0,
        delta_pred,
        estimates,
        setup.tolerance,
        outside,
        notes,
    ))
}

pub(crate) fn report_from_estimates(
    set: String,
    delta0: f64,
    delta_pred: f64,
    estimates: Vec<ReplicaEstimate>,
    tolerance: f64,
    outside_hypotheses: bool,
    notes: Vec<String>,
) -> KpzReport {
    KpzReport::aggregate(
        set,
        delta0,
        delta_pred,
        estimates,
        tolerance,
        outside_hypotheses,
        notes,
    )
}

/// Rows `replica, dim_rho_est, stderr, discarded`.
pub fn write_kpz_csv<W: Write>(out: W, report: &KpzReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["replica", "dim_rho_est", "stderr", "discarded"])?;
    for r in &report.replicas {
        w.write_record([
            r.replica.to_string(),
            r.dim_rho_est.to_string(),
            r.stderr.to_string(),
            r.discarded.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Single-row summary of a report.
pub fn write_kpz_summary_csv<W: Write>(out: W, report: &KpzReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "set",
        "delta0",
        "delta_pred",
        "mean",
        "stderr",
        "n_used",
        "n_discarded",
        "tolerance",
        "pass",
        "outside_hypotheses",
    ])?;
    w.write_record([
        report.set.clone(),
        report.delta0.to_string(),
        report.delta_pred.to_string(),
        report.mean.to_string(),
        report.stderr.to_string(),
        (report.replicas.len() - report.discarded).to_string(),
        report.discarded.to_string(),
        report.tolerance.to_string(),
        report.pass.to_string(),
        report.outside_hypotheses.to_string(),
    ])?;
    w.flush()?;
    Ok(())
}

/// Human-readable summary block.
pub fn summary_text(report: &KpzReport) -> String {
    let mut s = String::new();
    s.push_str(&format!("set: {}\n", report.set));
    s.push_str(&format!("delta0: {}\n", report.delta0));
    s.push_str(&format!("delta_pred: {}\n", report.delta_pred));
    s.push_str(&format!("mean: {} +- {}\n", report.mean, report.stderr));
    s.push_str(&format!(
        "replicas: {} used, {} discarded\n",
        report.replicas.len() - report.discarded,
        report.discarded
    ));
    s.push_str(&format!("tolerance: {}\n", report.tolerance));
    s.push_str(&format!(
        "result: {}\n",
        if report.pass { "PASS" } else { "FAIL" }
    ));
    for n in &report.notes {
        s.push_str(&format!("note: {n}\n"));
    }
    s
}

// ---------------------------------------------------------------------------
// Frostman energy

fn sample_point<R: Rng + ?Sized>(set: &FractalSet, rng: &mut R) -> f64 {
    match &set.descriptor {
        SetDescriptor::Cantor { ratio, depth } => {
            // uniform branch choice down to the finest depth, then uniform
            // within the final interval
            let mut a = 0.0;
            let mut size = set.domain;
            for _ in 0..*depth {
                let child = size * ratio;
                if rng.gen::<bool>() {
                    a += size - child;
                }
                size = child;
            }
            a + size * rng.gen::<f64>()
        }
        SetDescriptor::Points(p) => p[rng.gen_range(0..p.len())],
        _ => {
            // length-weighted choice of a cover interval
            let total: f64 = set.cover.iter().map(|(a, b)| b - a).sum();
            let mut target = rng.gen::<f64>() * total;
            for &(a, b) in &set.cover {
                if target <= b - a {
                    return a + target;
                }
                target -= b - a;
            }
            set.cover[set.cover.len() - 1].1
        }
    }
}

/// Monte Carlo estimate of `∫∫ |x − y|^{−s} γ(dx) γ(dy)` for the natural
/// measure `γ` of the set.
pub fn capacity_probe(set: &FractalSet, s: f64, n_samples: usize, seed: u64) -> Result<f64> {
    ensure!(s.is_finite() && s >= 0.0, "energy exponent must be ≥ 0");
    ensure!(n_samples >= 1, "need at least one sample");
    let mut rng = rng_from_seed(derive_seed(seed, "capacity", 0));
    if s == 0.0 {
        return Ok(1.0);
    }
    let mut sum = 0.0;
    for _ in 0..n_samples {
        let mut attempts = 0;
        let d = loop {
            let d = (sample_point(set, &mut rng) - sample_point(set, &mut rng)).abs();
            if d > 0.0 {
                break d;
            }
            attempts += 1;
            if attempts > 1000 {
                return Err(MrmError::numerical(
                    "capacity probe",
                    "sample pairs keep coinciding",
                ));
            }
        };
        sum += d.powf(-s);
    }
    Ok(sum / n_samples as f64)
}
