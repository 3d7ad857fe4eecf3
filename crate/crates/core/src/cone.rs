//! Geometry of the cone-like sets `A_l(t)` on the upper half-plane and their
//! masses under `θ(ds, dy) = y⁻² ds dy`.
//!
//! `A_l(t) = {(s, y) : y ≥ l, |s − t| ≤ f(y)/2}` with `f(y) = min(y, T)`.
//! The θ-mass of a cone and of the intersection of two cones at lag `τ`
//! determine the covariance of the log-field.

use nalgebra::DMatrix;

use crate::error::{ensure, MrmError, Result};
use crate::quad::{integrate_with_breaks, QuadOptions};

/// Resolution scale `l` and integral scale `T`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConeParams {
    pub resolution: f64,
    pub integral_scale: f64,
}

impl ConeParams {
    pub fn new(resolution: f64, integral_scale: f64) -> Result<Self> {
        ensure!(
            resolution.is_finite() && resolution > 0.0,
            "resolution scale l must be > 0, got {resolution}"
        );
        ensure!(
            integral_scale.is_finite() && integral_scale > 0.0,
            "integral scale T must be > 0, got {integral_scale}"
        );
        Ok(ConeParams {
            resolution,
            integral_scale,
        })
    }

    /// `f(y) = min(y, T)`, the full width of a cone at height `y`.
    pub fn width_at(&self, y: f64) -> f64 {
        y.min(self.integral_scale)
    }

    /// Same cone family at resolution `λ l`.
    pub fn rescaled(&self, lambda: f64) -> Result<Self> {
        ConeParams::new(lambda * self.resolution, self.integral_scale)
    }

    pub(crate) fn require_fine(&self) -> Result<()> {
        if self.resolution > self.integral_scale {
            return Err(MrmError::Unsupported(format!(
                "l = {} exceeds T = {}; overlap formulas are only defined for l ≤ T",
                self.resolution, self.integral_scale
            )));
        }
        Ok(())
    }
}

/// `θ(A_l(t))`: `ln(T/l) + 1` for `l ≤ T`, `T/l` otherwise.
pub fn cone_mass(p: &ConeParams) -> f64 {
    let (l, t) = (p.resolution, p.integral_scale);
    if l <= t {
        (t / l).ln() + 1.0
    } else {
        t / l
    }
}

/// `θ(A_l(0) ∩ A_l(τ))` for `l ≤ T`:
///
/// * `τ < l`: `ln(T/l) + 1 − τ/l`
/// * `l ≤ τ ≤ T`: `ln(T/τ)`
/// * `τ > T`: `0`
pub fn cone_overlap(p: &ConeParams, tau: f64) -> Result<f64> {
    p.require_fine()?;
    ensure!(tau.is_finite() && tau >= 0.0, "lag must be ≥ 0, got {tau}");
    Ok(overlap_unchecked(p.resolution, p.integral_scale, tau))
}

#[inline]
pub(crate) fn overlap_unchecked(l: f64, t: f64, tau: f64) -> f64 {
    if tau < l {
        (t / l).ln() + 1.0 - tau / l
    } else if tau <= t {
        (t / tau).ln()
    } else {
        0.0
    }
}

/// Membership of `(s, y)` in `A_l(t)`; the boundary belongs to the cone.
pub fn point_in_cone(s: f64, y: f64, t: f64, p: &ConeParams) -> bool {
    y >= p.resolution && (s - t).abs() <= 0.5 * p.width_at(y)
}

/// `C[i][j] = σ² θ(A_l(t_i) ∩ A_l(t_j))` on a sorted grid.
pub fn overlap_covariance_matrix(
    grid: &[f64],
    p: &ConeParams,
    sigma2: f64,
) -> Result<DMatrix<f64>> {
    p.require_fine()?;
    ensure!(sigma2.is_finite() && sigma2 >= 0.0, "σ² must be ≥ 0");
    ensure!(grid.windows(2).all(|w| w[0] <= w[1]), "grid must be sorted");
    let n = grid.len();
    let (l, t) = (p.resolution, p.integral_scale);
    Ok(DMatrix::from_fn(n, n, |i, j| {
        sigma2 * overlap_unchecked(l, t, (grid[i] - grid[j]).abs())
    }))
}

/// First column of the (Toeplitz) covariance on a uniform grid with `n`
/// points and the given spacing.
pub fn overlap_covariance_column(
    n: usize,
    spacing: f64,
    p: &ConeParams,
    sigma2: f64,
) -> Result<Vec<f64>> {
    p.require_fine()?;
    let (l, t) = (p.resolution, p.integral_scale);
    Ok((0..n)
        .map(|k| sigma2 * overlap_unchecked(l, t, k as f64 * spacing))
        .collect())
}

/// Reference value of `θ(A_l(0) ∩ A_l(τ))` by direct integration.
///
/// In the coordinates `(s, u = 1/y)` the measure θ becomes Lebesgue measure,
/// so the θ-mass of the intersection is `∫_0^{1/l} w(u) du`, where `w(u)` is
/// the length of the overlap of the two horizontal cone sections at height
/// `1/u`. The integral is evaluated adaptively and does not use the
/// closed-form branches above.
pub fn overlap_by_quadrature(p: &ConeParams, tau: f64) -> Result<f64> {
    let p = *p;
    let width = move |u: f64| {
        if u <= 0.0 {
            return (p.integral_scale - tau).max(0.0);
        }
        let half = 0.5 * p.width_at(1.0 / u);
        let lo = (-half).max(tau - half);
        let hi = half.min(tau + half);
        (hi - lo).max(0.0)
    };
    let opts = QuadOptions {
        rel_tol: 1e-14,
        abs_tol: 1e-15,
        max_panels: 20_000,
    };
    // split at the kinks u = 1/T and u = 1/τ; otherwise a narrow support near
    // u = 0 can fall between the nodes of the first panel
    let top = 1.0 / p.resolution;
    let mut cuts = vec![0.0, (1.0 / p.integral_scale).min(top)];
    if tau > 0.0 && 1.0 / tau < top {
        cuts.push(1.0 / tau);
    }
    cuts.push(top);
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    Ok(integrate_with_breaks(width, &cuts, opts)?.value)
}
