//! Laplace-exponent calculus for infinitely divisible laws.
//!
//! A [`LevyTriple`] `(m, σ², ν)` fixes the exponent
//!
//! ```text
//! ψ(q) = m q + σ² q² / 2 + ∫ (e^{qx} − 1 − q sin x) ν(dx)
//! ```
//!
//! and the structure function `ζ(q) = q − ψ(q)`. The jump measure comes in
//! three computable kinds: none, finitely many atoms, or a two-sided tempered
//! power-law density. Density integrals are evaluated as a Taylor series on
//! the small-jump region `|x| < ε` (no cancellation in `e^{qx} − 1 − q sin x`)
//! plus adaptive Gauss–Kronrod quadrature on `ε ≤ |x|`. Divergence of
//! `∫ e^{qx} ν(dx)` is decided by an explicit tail test, never by watching
//! the quadrature blow up.

use crate::error::{ensure, MrmError, Result};
use crate::quad::{integrate, integrate_to_infinity, QuadOptions};

/// A point mass `w · δ_x` of the jump measure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Atom {
    pub x: f64,
    pub w: f64,
}

/// One side of a tempered power-law jump density, written in terms of the
/// jump magnitude `u = |x| > 0`:
///
/// ```text
/// c · u^{-1-α} · e^{-λ u},   0 < u < upper
/// ```
///
/// `upper = None` means unbounded support.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerLawSide {
    pub c: f64,
    pub alpha: f64,
    pub lambda: f64,
    pub upper: Option<f64>,
}

impl PowerLawSide {
    pub fn density(&self, u: f64) -> f64 {
        if u <= 0.0 || self.upper.is_some_and(|b| u >= b) {
            return 0.0;
        }
        (self.c.ln() - (1.0 + self.alpha) * u.ln() - self.lambda * u).exp()
    }

    pub(crate) fn support_end(&self) -> f64 {
        self.upper.unwrap_or(f64::INFINITY)
    }

    /// Whether `∫^∞ e^{r u} c u^{-1-α} e^{-λu} du` converges at the upper end.
    fn tail_converges(&self, rate: f64) -> bool {
        if self.upper.is_some() || self.c == 0.0 {
            return true;
        }
        let decay = self.lambda - rate;
        decay > 0.0 || (decay == 0.0 && self.alpha > 0.0)
    }

    fn validate(&self, name: &str) -> Result<()> {
        ensure!(
            self.c.is_finite() && self.c >= 0.0,
            "{name}: density scale c must be ≥ 0, got {}",
            self.c
        );
        ensure!(
            self.alpha.is_finite() && self.alpha < 2.0,
            "{name}: alpha must be < 2 for ∫ x² ν(dx) to converge near 0, got {}",
            self.alpha
        );
        ensure!(
            self.lambda.is_finite() && self.lambda >= 0.0,
            "{name}: tempering rate must be ≥ 0"
        );
        if let Some(b) = self.upper {
            ensure!(
                b.is_finite() && b > 0.0,
                "{name}: support bound must be positive"
            );
        } else {
            ensure!(
                self.lambda > 0.0 || self.alpha > 0.0 || self.c == 0.0,
                "{name}: unbounded untempered density needs alpha > 0 for ∫ min(1, x²) ν(dx) < ∞"
            );
        }
        Ok(())
    }
}

/// Two-sided density jump measure with its small-jump cutoff `eps` and the
/// quadrature split point `x_max`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityJumps {
    pub positive: Option<PowerLawSide>,
    pub negative: Option<PowerLawSide>,
    pub eps: f64,
    pub x_max: f64,
}

impl DensityJumps {
    /// Density at a signed jump size.
    pub fn density(&self, x: f64) -> f64 {
        let side = if x > 0.0 {
            self.positive
        } else {
            self.negative
        };
        side.map_or(0.0, |s| s.density(x.abs()))
    }

    pub(crate) fn sides(&self) -> impl Iterator<Item = (f64, &PowerLawSide)> {
        self.positive
            .iter()
            .map(|s| (1.0, s))
            .chain(self.negative.iter().map(|s| (-1.0, s)))
    }
}

/// Jump (Lévy) measure `ν`.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum JumpMeasure {
    #[default]
    None,
    Atomic(Vec<Atom>),
    Density(DensityJumps),
}

impl JumpMeasure {
    pub fn validate(&self) -> Result<()> {
        match self {
            JumpMeasure::None => Ok(()),
            JumpMeasure::Atomic(atoms) => {
                for (i, a) in atoms.iter().enumerate() {
                    ensure!(
                        a.w.is_finite() && a.w > 0.0,
                        "atom {i}: weight must be > 0, got {}",
                        a.w
                    );
                    ensure!(
                        a.x.is_finite() && a.x != 0.0,
                        "atom {i}: jump size must be finite and non-zero"
                    );
                }
                Ok(())
            }
            JumpMeasure::Density(d) => {
                ensure!(
                    d.eps.is_finite() && d.eps > 0.0,
                    "density: small-jump cutoff eps must be > 0"
                );
                ensure!(
                    d.x_max.is_finite() && d.x_max > 0.0,
                    "density: x_max must be > 0"
                );
                if let Some(s) = &d.positive {
                    s.validate("density.positive")?;
                }
                if let Some(s) = &d.negative {
                    s.validate("density.negative")?;
                }
                let m = levy_integrability(d)?;
                ensure!(m.is_finite(), "density: ∫ min(1, x²) ν(dx) diverges");
                Ok(())
            }
        }
    }

    /// Total mass `ν(ℝ*)`; `None` when infinite.
    pub fn total_mass(&self) -> Result<Option<f64>> {
        Ok(match self {
            JumpMeasure::None => Some(0.0),
            JumpMeasure::Atomic(atoms) => Some(atoms.iter().map(|a| a.w).sum()),
            JumpMeasure::Density(d) => {
                if d.sides().any(|(_, s)| s.c > 0.0 && s.alpha >= 0.0) {
                    None
                } else {
                    let mut total = 0.0;
                    for (_, s) in d.sides() {
                        total += side_mass(s, d.eps, d.x_max)?;
                    }
                    Some(total)
                }
            }
        })
    }
}

/// `(m, σ², ν)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LevyTriple {
    pub m: f64,
    pub sigma2: f64,
    pub nu: JumpMeasure,
}

impl LevyTriple {
    pub fn new(m: f64, sigma2: f64, nu: JumpMeasure) -> Result<Self> {
        let t = LevyTriple { m, sigma2, nu };
        t.validate()?;
        Ok(t)
    }

    /// Normalized log-normal triple `(−σ²/2, σ², 0)`.
    pub fn lognormal(sigma2: f64) -> Result<Self> {
        normalize(sigma2, JumpMeasure::None)
    }

    /// The degenerate triple whose measure is Lebesgue.
    pub fn lebesgue() -> Self {
        LevyTriple {
            m: 0.0,
            sigma2: 0.0,
            nu: JumpMeasure::None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.m.is_finite(), "drift m must be finite");
        ensure!(
            self.sigma2.is_finite() && self.sigma2 >= 0.0,
            "Gaussian variance must be ≥ 0, got {}",
            self.sigma2
        );
        self.nu.validate()
    }

    pub fn is_gaussian(&self) -> bool {
        matches!(self.nu, JumpMeasure::None)
    }

    /// `ψ(q)`; see [`psi`].
    pub fn psi(&self, q: f64) -> Result<f64> {
        psi(self, q)
    }

    /// `ζ(q)`; see [`zeta`].
    pub fn zeta(&self, q: f64) -> Result<f64> {
        zeta(self, q)
    }
}

const SERIES_TERMS: usize = 80;

/// Taylor coefficients of `e^{qu} − 1 − q sin u` (index = power of `u`).
fn exponent_series(q: f64) -> Vec<f64> {
    let mut coeffs = vec![0.0; SERIES_TERMS];
    let mut qk_fact = 1.0; // q^k / k!
    let mut inv_fact = 1.0; // 1 / k!
    for (k, c) in coeffs.iter_mut().enumerate().skip(1) {
        qk_fact *= q / k as f64;
        inv_fact /= k as f64;
        let sin_k = match k % 4 {
            1 => inv_fact,
            3 => -inv_fact,
            _ => 0.0,
        };
        *c = qk_fact - q * sin_k;
    }
    coeffs
}

/// `∫_0^a h(u) c u^{-1-α} e^{-λu} du` for `h` given by its Taylor
/// coefficients, integrated term by term.
fn small_jump_series(h: &[f64], side: &PowerLawSide, a: f64) -> Result<f64> {
    if a <= 0.0 || side.c == 0.0 {
        return Ok(0.0);
    }
    // g = h · e^{-λu}
    let mut decay = vec![0.0; h.len()];
    decay[0] = 1.0;
    for j in 1..h.len() {
        decay[j] = decay[j - 1] * (-side.lambda) / j as f64;
    }
    let mut total = 0.0;
    let mut last_term = 0.0f64;
    let mut converged = false;
    for k in 0..h.len() {
        let g_k: f64 = (0..=k).map(|i| h[i] * decay[k - i]).sum();
        if g_k == 0.0 {
            last_term = 0.0;
            continue;
        }
        let p = k as f64 - side.alpha;
        if p <= 0.0 {
            return Err(MrmError::numerical(
                "small-jump series",
                format!("u^{} term is not integrable at 0 (alpha {})", k, side.alpha),
            ));
        }
        let term = side.c * g_k * (p * a.ln()).exp() / p;
        total += term;
        last_term = term;
        if k > 6 && term.abs() <= 1e-17 * total.abs().max(1e-300) {
            converged = true;
            break;
        }
    }
    if !converged && last_term.abs() > 1e-14 * total.abs() {
        return Err(MrmError::numerical(
            "small-jump series",
            format!(
                "no convergence on (0, {a}) with alpha {} and lambda {}",
                side.alpha, side.lambda
            ),
        ));
    }
    Ok(total)
}

fn quad_opts() -> QuadOptions {
    QuadOptions {
        rel_tol: 1e-12,
        abs_tol: 1e-300,
        max_panels: 5000,
    }
}

/// `∫_ε^{upper} h(u) ρ(u) du` for one side, with the segment beyond `x_max`
/// handled by a mapped semi-infinite rule.
fn side_large_jumps<H: Fn(f64) -> f64>(
    side: &PowerLawSide,
    from: f64,
    to: f64,
    x_max: f64,
    h: H,
) -> Result<f64> {
    if side.c == 0.0 || from >= to {
        return Ok(0.0);
    }
    let weighted = |u: f64| {
        let v = h(u) * side.density(u);
        if v.is_finite() {
            v
        } else {
            0.0
        }
    };
    let split = x_max.clamp(from, to);
    let mut value = 0.0;
    if split > from {
        let mut points = vec![from];
        // geometric breakpoints keep the power-law factor well resolved
        let mut p = from * 8.0;
        while p < split {
            points.push(p);
            p *= 8.0;
        }
        points.push(split);
        value += crate::quad::integrate_with_breaks(weighted, &points, quad_opts())?.value;
    }
    if to > split {
        value += if to.is_finite() {
            integrate(weighted, split, to, quad_opts())?.value
        } else {
            integrate_to_infinity(weighted, split, quad_opts())?.value
        };
    }
    Ok(value)
}

/// Mass of one side on `(0, end)`; only finite when `alpha < 0`.
fn side_mass(side: &PowerLawSide, eps: f64, x_max: f64) -> Result<f64> {
    let end = side.support_end();
    let cut = eps.min(end);
    let mut unit = vec![0.0; SERIES_TERMS];
    unit[0] = 1.0;
    let mut mass = small_jump_series(&unit, side, cut)?;
    if end > cut {
        mass += side_large_jumps(side, cut, end, x_max, |_| 1.0)?;
    }
    Ok(mass)
}

/// `∫_{|x|<cut} x² ν(dx)` and `∫_{|x|<cut} (e^x − 1 − sin x) ν(dx)`: the
/// variance and exponent carried by the jumps below `cut`.
pub(crate) fn small_jump_moments(d: &DensityJumps, cut: f64) -> Result<(f64, f64)> {
    let mut square = vec![0.0; SERIES_TERMS];
    square[2] = 1.0;
    let mut variance = 0.0;
    let mut exponent = 0.0;
    for (sign, s) in d.sides() {
        let end = s.support_end().min(cut);
        let series_end = d.eps.min(end);
        variance += small_jump_series(&square, s, series_end)?;
        exponent += small_jump_series(&exponent_series(sign), s, series_end)?;
        if end > series_end {
            variance += side_large_jumps(s, series_end, end, d.x_max, |u| u * u)?;
            exponent += side_large_jumps(s, series_end, end, d.x_max, |u| {
                (sign * u).exp_m1() - sign * u.sin()
            })?;
        }
    }
    Ok((variance, exponent))
}

/// `∫ h(|x|) ν(dx)` restricted to `a ≤ |x| < b` on one side.
pub(crate) fn side_integral<H: Fn(f64) -> f64>(
    side: &PowerLawSide,
    a: f64,
    b: f64,
    x_max: f64,
    h: H,
) -> Result<f64> {
    side_large_jumps(side, a, b.min(side.support_end()), x_max, h)
}

/// `∫_{-x_max}^{x_max} min(1, x²) ν(dx)`.
fn levy_integrability(d: &DensityJumps) -> Result<f64> {
    let mut total = 0.0;
    let cut = d.eps.min(1.0);
    for (_, s) in d.sides() {
        let end = s.support_end();
        let mut series = vec![0.0; SERIES_TERMS];
        series[2] = 1.0;
        total += small_jump_series(&series, s, cut.min(end))?;
        if end > cut {
            total += side_large_jumps(s, cut, end.min(d.x_max), d.x_max, |u| (u * u).min(1.0))?;
        }
    }
    Ok(total)
}

/// Density contribution to `ψ(q)`: `∫ (e^{qx} − 1 − q sin x) ν(dx)`, or
/// `+∞` if the exponential tail is not integrable.
fn density_exponent(d: &DensityJumps, q: f64) -> Result<f64> {
    let mut total = 0.0;
    for (sign, s) in d.sides() {
        // on the negative side substitute x = −u, i.e. evaluate at −q
        let qs = sign * q;
        if !s.tail_converges(qs.max(0.0)) {
            return Ok(f64::INFINITY);
        }
        let end = s.support_end();
        let cut = d.eps.min(end);
        total += small_jump_series(&exponent_series(qs), s, cut)?;
        if end > cut {
            total += side_large_jumps(s, cut, end, d.x_max, |u| (qs * u).exp_m1() - qs * u.sin())?;
        }
    }
    Ok(total)
}

/// `∫ (e^{qx} − 1 − q sin x) ν(dx)`.
pub fn jump_exponent(nu: &JumpMeasure, q: f64) -> Result<f64> {
    match nu {
        JumpMeasure::None => Ok(0.0),
        JumpMeasure::Atomic(atoms) => {
            let v: f64 = atoms
                .iter()
                .map(|a| a.w * ((q * a.x).exp_m1() - q * a.x.sin()))
                .sum();
            if v.is_finite() {
                Ok(v)
            } else {
                Err(MrmError::numerical(
                    "atomic exponent",
                    format!("overflow at q = {q}"),
                ))
            }
        }
        JumpMeasure::Density(d) => density_exponent(d, q),
    }
}

/// `ψ(q) = m q + σ² q²/2 + ∫ (e^{qx} − 1 − q sin x) ν(dx)`; `+∞` when the
/// exponential moment of order `q` does not exist. Negative `q` is allowed.
pub fn psi(triple: &LevyTriple, q: f64) -> Result<f64> {
    ensure!(q.is_finite(), "q must be finite");
    ensure!(triple.sigma2 >= 0.0, "Gaussian variance must be ≥ 0");
    let gaussian = triple.m * q + 0.5 * triple.sigma2 * q * q;
    if triple.is_gaussian() {
        return Ok(gaussian);
    }
    let jumps = jump_exponent(&triple.nu, q)?;
    Ok(gaussian + jumps)
}

/// `ζ(q) = q − ψ(q)`; `−∞` where `ψ(q) = +∞`.
pub fn zeta(triple: &LevyTriple, q: f64) -> Result<f64> {
    Ok(q - psi(triple, q)?)
}

/// Builds the triple with the drift that enforces `ψ(1) = 0`.
pub fn normalize(sigma2: f64, nu: JumpMeasure) -> Result<LevyTriple> {
    ensure!(
        sigma2.is_finite() && sigma2 >= 0.0,
        "Gaussian variance must be ≥ 0, got {sigma2}"
    );
    nu.validate()?;
    let j1 = jump_exponent(&nu, 1.0)?;
    if !j1.is_finite() {
        return Err(MrmError::CannotNormalize("∫ e^x ν(dx) diverges".into()));
    }
    Ok(LevyTriple {
        m: -0.5 * sigma2 - j1,
        sigma2,
        nu,
    })
}

/// Finiteness of `ψ(q)` from the tail test alone.
pub fn psi_is_finite(triple: &LevyTriple, q: f64) -> bool {
    match &triple.nu {
        JumpMeasure::None | JumpMeasure::Atomic(_) => true,
        JumpMeasure::Density(d) => d
            .sides()
            .all(|(sign, s)| s.tail_converges((sign * q).max(0.0))),
    }
}

/// `q_c = sup { q ≥ 0 : ψ(q) < ∞ }`, located by bisection on the finiteness
/// of `ψ` to within `1e-6`.
pub fn critical_moment(triple: &LevyTriple) -> Result<f64> {
    triple.validate()?;
    if !matches!(triple.nu, JumpMeasure::Density(_)) {
        return Ok(f64::INFINITY);
    }
    if !psi_is_finite(triple, 0.0) {
        return Ok(0.0);
    }
    let mut hi = 1.0;
    while psi_is_finite(triple, hi) {
        hi *= 2.0;
        if hi > 1e12 {
            return Ok(f64::INFINITY);
        }
    }
    let mut lo = hi / 2.0;
    if !psi_is_finite(triple, lo) {
        lo = 0.0;
    }
    while hi - lo > 1e-7 {
        let mid = 0.5 * (lo + hi);
        if psi_is_finite(triple, mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Outcome of [`check_nondegenerate`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Nondegeneracy {
    /// Some `ε > 0` with `ζ(1 + ε) > 1` was found.
    pub nondegenerate: bool,
    /// The `ε` achieving the largest excess `ζ(1 + ε) − 1` on the scan.
    pub witness: Option<f64>,
    /// `ψ(−q) < ∞` for every `q ∈ [0, 1]`, required by the 1D dimension
    /// relation.
    pub negative_moments_finite: bool,
    pub critical_moment: f64,
}

/// Scans `ζ` on `(1, min(q_c, 3)]` for a point above 1.
pub fn check_nondegenerate(triple: &LevyTriple) -> Result<Nondegeneracy> {
    let q_c = critical_moment(triple)?;
    // ψ is convex with ψ(0) = 0, so finiteness at −1 covers all of [−1, 0].
    let negative_moments_finite = psi_is_finite(triple, -1.0) && psi(triple, -1.0)?.is_finite();
    let top = q_c.min(3.0);
    let mut best: Option<(f64, f64)> = None;
    if top > 1.0 {
        const STEPS: usize = 400;
        for k in 1..=STEPS {
            let q = 1.0 + (top - 1.0) * k as f64 / STEPS as f64;
            if !psi_is_finite(triple, q) {
                continue;
            }
            let excess = zeta(triple, q)? - 1.0;
            if excess > 0.0 && best.is_none_or(|(_, e)| excess > e) {
                best = Some((q - 1.0, excess));
            }
        }
    }
    Ok(Nondegeneracy {
        nondegenerate: best.is_some(),
        witness: best.map(|(eps, _)| eps),
        negative_moments_finite,
        critical_moment: q_c,
    })
}

/// `ψ` and `ζ` tabulated on a sorted list of moments.
#[derive(Debug, Clone, PartialEq)]
pub struct ExponentTable {
    pub qs: Vec<f64>,
    pub psi_vals: Vec<f64>,
    pub zeta_vals: Vec<f64>,
    pub q_c: f64,
}

impl ExponentTable {
    pub fn build(triple: &LevyTriple, qs: &[f64]) -> Result<Self> {
        ensure!(
            qs.windows(2).all(|w| w[0] < w[1]),
            "moment list must be strictly increasing"
        );
        let psi_vals = qs
            .iter()
            .map(|&q| psi(triple, q))
            .collect::<Result<Vec<_>>>()?;
        let zeta_vals = qs.iter().zip(&psi_vals).map(|(q, p)| q - p).collect();
        Ok(ExponentTable {
            qs: qs.to_vec(),
            psi_vals,
            zeta_vals,
            q_c: critical_moment(triple)?,
        })
    }

    /// Largest normalized second difference of `ζ` over the finite part of
    /// the table; concavity means this is ≤ 0 up to rounding.
    pub fn max_second_difference(&self) -> f64 {
        let mut worst = f64::NEG_INFINITY;
        for i in 1..self.qs.len().saturating_sub(1) {
            let (q0, q1, q2) = (self.qs[i - 1], self.qs[i], self.qs[i + 1]);
            let (z0, z1, z2) = (
                self.zeta_vals[i - 1],
                self.zeta_vals[i],
                self.zeta_vals[i + 1],
            );
            if !(z0.is_finite() && z1.is_finite() && z2.is_finite()) {
                continue;
            }
            // divided difference: ζ(q1) minus the chord value at q1
            let chord = z0 + (z2 - z0) * (q1 - q0) / (q2 - q0);
            worst = worst.max(chord - z1);
        }
        worst
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exp_tail(rate: f64) -> LevyTriple {
        // ν(dx) = e^{-rate x} dx on (0, ∞): alpha = −1
        let d = DensityJumps {
            positive: Some(PowerLawSide {
                c: 1.0,
                alpha: -1.0,
                lambda: rate,
                upper: None,
            }),
            negative: None,
            eps: 1e-3,
            x_max: 20.0,
        };
        normalize(0.0, JumpMeasure::Density(d)).unwrap()
    }

    #[test]
    fn lognormal_psi_values() {
        let t = LevyTriple::new(-0.5, 1.0, JumpMeasure::None).unwrap();
        assert_eq!(psi(&t, 1.0).unwrap(), 0.0);
        assert_eq!(psi(&t, 2.0).unwrap(), 1.0);
        assert_eq!(zeta(&t, 2.0).unwrap(), 1.0);
    }

    #[test]
    fn psi_at_zero_vanishes_for_atoms() {
        let t =
            LevyTriple::new(0.0, 0.0, JumpMeasure::Atomic(vec![Atom { x: 0.1, w: 1.0 }])).unwrap();
        assert_eq!(psi(&t, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize(1.0, JumpMeasure::None).unwrap().m, -0.5);
        assert_eq!(normalize(0.0, JumpMeasure::None).unwrap().m, 0.0);
        let t = normalize(
            0.0,
            JumpMeasure::Atomic(vec![Atom {
                x: 2f64.ln(),
                w: 1.0,
            }]),
        )
        .unwrap();
        // −(e^{ln 2} − 1 − sin(ln 2)) = −(1 − 0.638961...) = −0.361038...
        let expected = -(2.0 - 1.0 - 2f64.ln().sin());
        assert!((t.m - expected).abs() < 1e-15);
        assert!((t.m + 0.361_038_6).abs() < 1e-6);
    }

    #[test]
    fn density_exponent_matches_closed_form() {
        // ν = e^{-2x} dx on (0, ∞): ∫ (e^{qx} − 1 − q sin x) e^{-2x} dx
        //   = 1/(2−q) − 1/2 − q/5   (∫ sin x e^{-2x} dx = 1/5)
        let nu = JumpMeasure::Density(DensityJumps {
            positive: Some(PowerLawSide {
                c: 1.0,
                alpha: -1.0,
                lambda: 2.0,
                upper: None,
            }),
            negative: None,
            eps: 1e-3,
            x_max: 20.0,
        });
        for q in [-1.0, -0.3, 0.5, 1.0, 1.5] {
            let exact = 1.0 / (2.0 - q) - 0.5 - q / 5.0;
            let got = jump_exponent(&nu, q).unwrap();
            assert!(
                (got - exact).abs() < 1e-10 * exact.abs().max(1.0),
                "q={q}: {got} vs {exact}"
            );
        }
        assert!(jump_exponent(&nu, 2.0).unwrap().is_infinite());
        assert!(jump_exponent(&nu, 2.5).unwrap().is_infinite());
    }

    #[test]
    fn stable_like_small_jumps() {
        // ν = x^{-3/2} on (0, 1): ∫_0^1 x² x^{-3/2} dx = 2/3
        let d = DensityJumps {
            positive: Some(PowerLawSide {
                c: 1.0,
                alpha: 0.5,
                lambda: 0.0,
                upper: Some(1.0),
            }),
            negative: None,
            eps: 0.01,
            x_max: 1.0,
        };
        let nu = JumpMeasure::Density(d);
        nu.validate().unwrap();
        // second derivative of the exponent at 0 is ∫ x² ν(dx)
        let h = 1e-3;
        let j = |q| jump_exponent(&nu, q).unwrap();
        let second = (j(h) - 2.0 * j(0.0) + j(-h)) / (h * h);
        assert!((second - 2.0 / 3.0).abs() < 1e-5, "{second}");
        assert_eq!(
            critical_moment(&normalize(0.0, nu).unwrap()).unwrap(),
            f64::INFINITY
        );
    }

    #[test]
    fn critical_moment_examples() {
        assert_eq!(
            critical_moment(&LevyTriple::lognormal(1.0).unwrap()).unwrap(),
            f64::INFINITY
        );
        let atoms = normalize(0.0, JumpMeasure::Atomic(vec![Atom { x: -0.3, w: 2.0 }])).unwrap();
        assert_eq!(critical_moment(&atoms).unwrap(), f64::INFINITY);
        let qc = critical_moment(&exp_tail(2.0)).unwrap();
        assert!((qc - 2.0).abs() < 1e-6, "{qc}");
        // heavier tail ⇒ smaller q_c
        let qc_heavy = critical_moment(&exp_tail(1.5)).unwrap();
        assert!(qc_heavy < qc);
    }

    #[test]
    fn nondegeneracy_examples() {
        let t = LevyTriple::lognormal(0.5).unwrap();
        // ζ(1.5) = 1.5 − (−0.25·1.5 + 0.25·2.25) = 1.3125
        assert!((zeta(&t, 1.5).unwrap() - 1.3125).abs() < 1e-15);
        let r = check_nondegenerate(&t).unwrap();
        assert!(r.nondegenerate && r.negative_moments_finite);
        assert!(r.witness.unwrap() > 0.0);

        let r = check_nondegenerate(&LevyTriple::lebesgue()).unwrap();
        assert!(r.nondegenerate);

        let r = check_nondegenerate(&LevyTriple::lognormal(8.0).unwrap()).unwrap();
        assert!(!r.nondegenerate);
        assert!(r.witness.is_none());
    }

    #[test]
    fn invalid_triples_are_rejected() {
        assert!(LevyTriple::new(0.0, -1.0, JumpMeasure::None).is_err());
        assert!(LevyTriple::new(
            0.0,
            0.0,
            JumpMeasure::Atomic(vec![Atom { x: 0.5, w: -1.0 }])
        )
        .is_err());
        let bad = DensityJumps {
            positive: Some(PowerLawSide {
                c: 1.0,
                alpha: 2.5,
                lambda: 1.0,
                upper: None,
            }),
            negative: None,
            eps: 0.01,
            x_max: 10.0,
        };
        assert!(LevyTriple::new(0.0, 0.0, JumpMeasure::Density(bad)).is_err());
        let no_eps = DensityJumps { eps: 0.0, ..bad };
        assert!(JumpMeasure::Density(no_eps).validate().is_err());
    }

    #[test]
    fn divergent_exponential_moment_cannot_normalize() {
        let nu = JumpMeasure::Density(DensityJumps {
            positive: Some(PowerLawSide {
                c: 1.0,
                alpha: -1.0,
                lambda: 0.5,
                upper: None,
            }),
            negative: None,
            eps: 1e-3,
            x_max: 20.0,
        });
        assert!(matches!(
            normalize(0.0, nu),
            Err(MrmError::CannotNormalize(_))
        ));
    }

    #[test]
    fn table_is_consistent_and_concave() {
        let t = exp_tail(3.0);
        let qs: Vec<f64> = (0..40).map(|i| -0.9 + 0.07 * i as f64).collect();
        let table = ExponentTable::build(&t, &qs).unwrap();
        for ((q, p), z) in qs.iter().zip(&table.psi_vals).zip(&table.zeta_vals) {
            assert_eq!(*z, q - p);
        }
        assert!(table.max_second_difference() <= 1e-9);
    }
}
