//! The change of variable `G` that removes the drift discontinuities.
//!
//! ```text
//! G(x) = x + Σ_k α_k φ((x - ξ_k)/c) (x - ξ_k)|x - ξ_k|,   φ(u) = (1+u)³(1-u)³ on |u| ≤ 1
//! ```
//!
//! With `α_k = (b(ξ_k⁻) - b(ξ_k⁺)) / (2σ²)` the process `Y = G(X)` solves an SDE
//! whose drift `G'b + ½σ²G''` is continuous, hence globally Lipschitz.
//! For `σ = 1` this is the textbook choice `α_k = (b(ξ_k⁻) - b(ξ_k⁺))/2`.

use crate::error::{SimError, TransformError};
use crate::model::{ControlPolicy, DriftDecomposition, JumpModel};
use crate::sim::{assemble_path, JumpEvent, SamplePath, Skeleton};

const SAFETY: f64 = 0.9;
const MAX_HALVINGS: usize = 20;
const VERIFY_POINTS: usize = 4001;
const INVERSE_MAX_ITER: usize = 200;

/// `(1+u)³(1-u)³` on `[-1, 1]`, zero outside. C² everywhere.
pub fn phi_bump(u: f64) -> f64 {
    if u.abs() > 1.0 {
        0.0
    } else {
        let w = 1.0 - u * u;
        w * w * w
    }
}

fn phi_d1(u: f64) -> f64 {
    if u.abs() > 1.0 {
        0.0
    } else {
        let w = 1.0 - u * u;
        -6.0 * u * w * w
    }
}

fn phi_d2(u: f64) -> f64 {
    if u.abs() > 1.0 {
        0.0
    } else {
        let w = 1.0 - u * u;
        -6.0 * w * w + 24.0 * u * u * w
    }
}

/// `(ξ_k, α_k)` with `α_k = (b(ξ_k⁻) - b(ξ_k⁺))/2`, read from the one-sided
/// limits of `b2` (the other drift parts are continuous).
pub fn discontinuity_coefficients(drift: &DriftDecomposition) -> Result<Vec<(f64, f64)>, TransformError> {
    let b2 = &drift.b2;
    b2.breakpoints()
        .iter()
        .enumerate()
        .map(|(k, &xi)| {
            let alpha = 0.5 * (b2.left_limit(k) - b2.right_limit(k));
            if alpha == 0.0 {
                Err(TransformError::ZeroJump { xi })
            } else {
                Ok((xi, alpha))
            }
        })
        .collect()
}

fn nonremovable_coefficients(drift: &DriftDecomposition) -> Vec<(f64, f64)> {
    let b2 = &drift.b2;
    (0..b2.breakpoints().len()).map(|k| (b2.breakpoints()[k], 0.5 * (b2.left_limit(k) - b2.right_limit(k)))).filter(|&(_, a)| a != 0.0).collect()
}

fn c_upper_bound(coeffs: &[(f64, f64)]) -> f64 {
    let by_alpha = coeffs.iter().map(|&(_, a)| 1.0 / (6.0 * a.abs())).fold(f64::INFINITY, f64::min);
    let by_gap = coeffs.windows(2).map(|w| 0.5 * (w[1].0 - w[0].0)).fold(f64::INFINITY, f64::min);
    by_alpha.min(by_gap)
}

/// Bump radius: `0.9 · min(min_k 1/(6|α_k|), min gap / 2)`, halved until
/// `G' > 0` holds on a fine grid over every bump.
pub fn select_c(coeffs: &[(f64, f64)]) -> Result<f64, TransformError> {
    if coeffs.is_empty() {
        return Err(TransformError::NoBreakpoints);
    }
    if let Some(&(xi, _)) = coeffs.iter().find(|&&(_, a)| a == 0.0) {
        return Err(TransformError::ZeroJump { xi });
    }
    let mut c = SAFETY * c_upper_bound(coeffs);
    for _ in 0..=MAX_HALVINGS {
        let (lo, _) = prime_range(coeffs, c);
        if lo > 0.0 && c.is_finite() {
            return Ok(c);
        }
        c *= 0.5;
    }
    Err(TransformError::NoValidC)
}

fn prime_range(coeffs: &[(f64, f64)], c: f64) -> (f64, f64) {
    let mut lo: f64 = 1.0;
    let mut hi: f64 = 1.0;
    for &(_, alpha) in coeffs {
        for i in 0..VERIFY_POINTS {
            let u = -1.0 + 2.0 * i as f64 / (VERIFY_POINTS - 1) as f64;
            let v = 1.0 + alpha * c * (phi_d1(u) * u * u.abs() + 2.0 * phi_bump(u) * u.abs());
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    (lo, hi)
}

/// The transform `G` with its derivatives and inverse.
#[derive(Clone, Debug, PartialEq)]
pub struct TransformG {
    xi: Vec<f64>,
    alpha: Vec<f64>,
    c: f64,
    g_lower: f64,
    g_upper: f64,
}

impl TransformG {
    pub fn identity() -> Self {
        Self { xi: Vec::new(), alpha: Vec::new(), c: 1.0, g_lower: 1.0, g_upper: 1.0 }
    }

    /// Builds `G` for the given coefficients and radius, checking the radius
    /// constraint and `G' > 0`.
    pub fn new(coeffs: &[(f64, f64)], c: f64) -> Result<Self, TransformError> {
        if coeffs.is_empty() {
            return Ok(Self::identity());
        }
        if let Some(&(xi, _)) = coeffs.iter().find(|&&(_, a)| a == 0.0) {
            return Err(TransformError::ZeroJump { xi });
        }
        if !(c > 0.0 && c < c_upper_bound(coeffs)) {
            return Err(TransformError::NoValidC);
        }
        let (g_lower, g_upper) = prime_range(coeffs, c);
        if g_lower <= 0.0 {
            return Err(TransformError::NoValidC);
        }
        Ok(Self { xi: coeffs.iter().map(|p| p.0).collect(), alpha: coeffs.iter().map(|p| p.1).collect(), c, g_lower, g_upper })
    }

    /// `G` with the radius picked by [`select_c`]; identity when there are no breakpoints.
    pub fn from_coefficients(coeffs: &[(f64, f64)]) -> Result<Self, TransformError> {
        if coeffs.is_empty() {
            return Ok(Self::identity());
        }
        Self::new(coeffs, select_c(coeffs)?)
    }

    /// `G` for the SDE with diffusion `sigma`: `α_k = (b(ξ_k⁻) - b(ξ_k⁺)) / (2σ²)`.
    /// Removable breakpoints are dropped.
    pub fn for_diffusion(drift: &DriftDecomposition, sigma: f64) -> Result<Self, TransformError> {
        if !(sigma > 0.0) {
            return Err(TransformError::DegenerateDiffusion);
        }
        let s2 = sigma * sigma;
        let coeffs: Vec<(f64, f64)> = nonremovable_coefficients(drift).into_iter().map(|(xi, a)| (xi, a / s2)).collect();
        Self::from_coefficients(&coeffs)
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.xi
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alpha
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    /// Lower bound of `G'` (grid verified).
    pub fn g_lower(&self) -> f64 {
        self.g_lower
    }

    /// Upper bound of `G'` (grid verified).
    pub fn g_upper(&self) -> f64 {
        self.g_upper
    }

    pub fn is_identity(&self) -> bool {
        self.xi.is_empty()
    }

    /// The bump whose support `(ξ_k - c, ξ_k + c)` contains `x`, if any.
    fn active(&self, x: f64) -> Option<(f64, f64)> {
        if self.xi.is_empty() {
            return None;
        }
        let i = self.xi.partition_point(|&b| b <= x);
        [i.checked_sub(1), Some(i)]
            .into_iter()
            .flatten()
            .filter(|&k| k < self.xi.len())
            .find(|&k| (x - self.xi[k]).abs() < self.c)
            .map(|k| (self.xi[k], self.alpha[k]))
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self.active(x) {
            None => x,
            Some((xi, alpha)) => {
                let d = x - xi;
                x + alpha * phi_bump(d / self.c) * d * d.abs()
            }
        }
    }

    pub fn prime(&self, x: f64) -> f64 {
        match self.active(x) {
            None => 1.0,
            Some((xi, alpha)) => {
                let d = x - xi;
                let u = d / self.c;
                1.0 + alpha * (phi_d1(u) / self.c * d * d.abs() + 2.0 * phi_bump(u) * d.abs())
            }
        }
    }

    /// `G''`, taking the right-hand value at the breakpoints themselves.
    pub fn second(&self, x: f64) -> f64 {
        match self.active(x) {
            None => 0.0,
            Some((xi, alpha)) => {
                let d = x - xi;
                let u = d / self.c;
                let s = if d < 0.0 { -1.0 } else { 1.0 };
                alpha * (phi_d2(u) / (self.c * self.c) * d * d.abs() + 4.0 * phi_d1(u) / self.c * d.abs() + 2.0 * s * phi_bump(u))
            }
        }
    }

    /// `G⁻¹(y)` by safeguarded Newton iteration, `|G(x) - y| ≤ 1e-12 · max(1, |y|)`.
    pub fn inverse(&self, y: f64) -> Result<f64, TransformError> {
        // G maps each bump support onto itself and is the identity elsewhere.
        let Some((xi, _)) = self.active(y) else {
            return Ok(y);
        };
        let max_shift = self.alpha.iter().map(|a| a.abs()).fold(0.0, f64::max) * self.c * self.c + 1.0;
        let mut lo = (xi - self.c).max(y - max_shift);
        let mut hi = (xi + self.c).min(y + max_shift);
        let tol = 1e-12 * y.abs().max(1.0);
        let mut x = y;
        for _ in 0..INVERSE_MAX_ITER {
            let fx = self.eval(x) - y;
            if fx.abs() <= tol {
                return Ok(x);
            }
            if fx > 0.0 {
                hi = x;
            } else {
                lo = x;
            }
            let newton = x - fx / self.prime(x);
            x = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
            if hi - lo <= 4.0 * f64::EPSILON * x.abs().max(1.0) {
                return Ok(x);
            }
        }
        Err(TransformError::NoConvergence { y })
    }

    /// `min G'` over a uniform grid of `n` points on `[lo, hi]`.
    pub fn min_prime_on(&self, lo: f64, hi: f64, n: usize) -> f64 {
        (0..n).map(|i| self.prime(lo + (hi - lo) * i as f64 / (n - 1).max(1) as f64)).fold(f64::INFINITY, f64::min)
    }

    /// `max |G⁻¹(G(x)) - x|` over a uniform grid.
    pub fn round_trip_error_on(&self, lo: f64, hi: f64, n: usize) -> Result<f64, TransformError> {
        let mut worst: f64 = 0.0;
        for i in 0..n {
            let x = lo + (hi - lo) * i as f64 / (n - 1).max(1) as f64;
            worst = worst.max((self.inverse(self.eval(x))? - x).abs());
        }
        Ok(worst)
    }
}

/// Coefficients of the SDE solved by `Y = G(X)`.
#[derive(Clone, Debug)]
pub struct TransformedCoefficients {
    g: TransformG,
    drift: DriftDecomposition,
    drift_n: Option<DriftDecomposition>,
    sigma: f64,
    jumps: JumpModel,
}

pub fn transformed_coefficients(g: &TransformG, drift: &DriftDecomposition, sigma: f64, jumps: &JumpModel) -> TransformedCoefficients {
    TransformedCoefficients { g: g.clone(), drift: drift.clone(), drift_n: None, sigma, jumps: jumps.clone() }
}

impl TransformedCoefficients {
    /// Attaches the approximating drift used by [`Self::bar_b_n`].
    pub fn with_approximation(mut self, drift_n: DriftDecomposition) -> Self {
        self.drift_n = Some(drift_n);
        self
    }

    fn transformed_drift(&self, drift: &DriftDecomposition, y: f64, a: f64) -> Result<f64, TransformError> {
        let x = self.g.inverse(y)?;
        Ok(self.g.prime(x) * drift.value(x, a) + 0.5 * self.sigma * self.sigma * self.g.second(x))
    }

    /// `b̄(y) = G'(x) b(x, a) + ½σ² G''(x)` with `x = G⁻¹(y)`.
    pub fn bar_b(&self, y: f64, a: f64) -> Result<f64, TransformError> {
        self.transformed_drift(&self.drift, y, a)
    }

    /// `b̄_n`, the same map for the approximating drift.
    pub fn bar_b_n(&self, y: f64, a: f64) -> Option<Result<f64, TransformError>> {
        self.drift_n.as_ref().map(|d| self.transformed_drift(d, y, a))
    }

    /// `σ G'(G⁻¹(y))`.
    pub fn bar_sigma(&self, y: f64) -> Result<f64, TransformError> {
        Ok(self.sigma * self.g.prime(self.g.inverse(y)?))
    }

    /// `G(G⁻¹(y) + γ(z)) - y`.
    pub fn bar_gamma(&self, y: f64, z: f64) -> Result<f64, TransformError> {
        Ok(self.g.eval(self.g.inverse(y)? + self.jumps.gamma(z)) - y)
    }

    /// Largest difference quotient of `b̄(·, a)` over a uniform grid on `[lo, hi]`.
    pub fn max_difference_quotient(&self, lo: f64, hi: f64, n: usize, a: f64) -> Result<f64, TransformError> {
        let h = (hi - lo) / (n - 1) as f64;
        let mut prev = self.bar_b(lo, a)?;
        let mut worst: f64 = 0.0;
        for i in 1..n {
            let v = self.bar_b(lo + i as f64 * h, a)?;
            worst = worst.max((v - prev).abs() / h);
            prev = v;
        }
        Ok(worst)
    }
}

/// Euler scheme for `Y = G(X)`, mapped back through `G⁻¹` at every node.
pub(crate) fn integrate_transformed(
    g: &TransformG,
    drift: &DriftDecomposition,
    jumps: &JumpModel,
    sigma: f64,
    skel: &Skeleton,
    x0: f64,
    policy: &ControlPolicy,
) -> Result<SamplePath, SimError> {
    let steps = skel.times.len() - 1;
    let mut states = Vec::with_capacity(steps + 1);
    let mut controls = Vec::with_capacity(steps);
    let mut events = Vec::with_capacity(skel.jumps.len());
    let mut pending = skel.jumps.iter().peekable();
    let mut x = x0;
    let mut y = g.eval(x0);
    states.push(x);
    let half_var = 0.5 * sigma * sigma;
    for k in 0..steps {
        let t = skel.times[k];
        let dt = skel.times[k + 1] - t;
        let a = policy.eval(t, x);
        controls.push(a);
        let gp = g.prime(x);
        y += (gp * drift.value(x, a) + half_var * g.second(x)) * dt + sigma * gp * skel.db[k];
        if !y.is_finite() {
            return Err(SimError::NonFiniteState { t: skel.times[k + 1] });
        }
        x = g.inverse(y)?;
        while let Some(&&(node, z)) = pending.peek() {
            if node != k + 1 {
                break;
            }
            let increment = jumps.gamma(z);
            let pre = x;
            x = pre + increment;
            y = g.eval(x);
            events.push(JumpEvent { node, time: skel.times[node], z, increment, pre, post: x });
            pending.next();
        }
        if !x.is_finite() {
            return Err(SimError::NonFiniteState { t: skel.times[k + 1] });
        }
        states.push(x);
    }
    Ok(assemble_path(skel, states, controls, events))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ControlledDrift, StateDrift};
    use crate::piecewise::PiecewiseLipschitzFn;

    fn drift_with(b2: PiecewiseLipschitzFn) -> DriftDecomposition {
        DriftDecomposition::new(ControlledDrift::zero(), b2, StateDrift::zero())
    }

    #[test]
    fn bump_values() {
        assert_eq!(phi_bump(0.0), 1.0);
        assert_eq!(phi_bump(1.0), 0.0);
        assert_eq!(phi_bump(-1.0), 0.0);
        assert_eq!(phi_bump(0.5), 0.421875);
        assert_eq!(phi_bump(1.5), 0.0);
    }

    #[test]
    fn bump_is_c2_at_the_edges() {
        for edge in [-1.0, 1.0] {
            assert!(phi_d1(edge).abs() < 1e-15);
            assert!(phi_d2(edge).abs() < 1e-15);
        }
        // finite differences of the closed-form derivatives
        for u in [-0.7, -0.2, 0.1, 0.55] {
            let h = 1e-6;
            assert!(((phi_bump(u + h) - phi_bump(u - h)) / (2.0 * h) - phi_d1(u)).abs() < 1e-8);
            assert!(((phi_d1(u + h) - phi_d1(u - h)) / (2.0 * h) - phi_d2(u)).abs() < 1e-8);
        }
    }

    #[test]
    fn continuous_b2_is_removable_everywhere() {
        let b2 = PiecewiseLipschitzFn::step(0.0, 1.0, 1.0).unwrap();
        assert_eq!(discontinuity_coefficients(&drift_with(b2)), Err(TransformError::ZeroJump { xi: 0.0 }));
    }

    #[test]
    fn surplus_coefficients() {
        let b2 = PiecewiseLipschitzFn::symmetric_threshold(1.0, 1.0).unwrap();
        let coeffs = discontinuity_coefficients(&drift_with(b2)).unwrap();
        assert_eq!(coeffs, vec![(-1.0, -0.5), (1.0, -0.5)]);
        assert!((select_c(&coeffs).unwrap() - 0.3).abs() < 1e-15);
    }

    #[test]
    fn downward_step_has_alpha_one() {
        let b2 = PiecewiseLipschitzFn::step(0.0, 1.0, -1.0).unwrap();
        let coeffs = discontinuity_coefficients(&drift_with(b2)).unwrap();
        assert_eq!(coeffs, vec![(0.0, 1.0)]);
        assert!((select_c(&coeffs).unwrap() - 0.15).abs() < 1e-15);
    }

    #[test]
    fn no_breakpoints_is_rejected_by_select_c() {
        assert_eq!(select_c(&[]), Err(TransformError::NoBreakpoints));
        let g = TransformG::from_coefficients(&[]).unwrap();
        assert!(g.is_identity());
        for x in [-2.0, 0.0, 3.5] {
            assert_eq!((g.eval(x), g.prime(x), g.second(x), g.inverse(x).unwrap()), (x, 1.0, 0.0, x));
        }
    }

    #[test]
    fn radius_above_bound_is_rejected() {
        assert_eq!(TransformG::new(&[(0.0, 1.0)], 0.2), Err(TransformError::NoValidC));
    }

    #[test]
    fn fixed_points_and_unit_slope_at_breakpoints() {
        let g = TransformG::from_coefficients(&[(-1.0, -0.5), (1.0, -0.5)]).unwrap();
        for xi in [-1.0, 1.0] {
            assert_eq!(g.eval(xi), xi);
            assert_eq!(g.prime(xi), 1.0);
            assert_eq!(g.inverse(xi).unwrap(), xi);
        }
        assert_eq!(g.eval(1.31), 1.31);
        assert_eq!(g.eval(0.0), 0.0);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let g = TransformG::from_coefficients(&[(0.0, 1.0)]).unwrap();
        let h = 1e-6;
        for x in [-0.14, -0.07, -0.01, 0.02, 0.09, 0.149] {
            assert!(((g.eval(x + h) - g.eval(x - h)) / (2.0 * h) - g.prime(x)).abs() < 1e-7, "G' at {x}");
            assert!(((g.prime(x + h) - g.prime(x - h)) / (2.0 * h) - g.second(x)).abs() < 1e-5, "G'' at {x}");
        }
    }

    #[test]
    fn sigma_scaled_transform_makes_drift_continuous() {
        let b2 = PiecewiseLipschitzFn::symmetric_threshold(1.0, 1.0).unwrap();
        let drift = drift_with(b2);
        for sigma in [0.5, 1.0, 1.7] {
            let g = TransformG::for_diffusion(&drift, sigma).unwrap();
            let coeffs = transformed_coefficients(&g, &drift, sigma, &JumpModel::none());
            for xi in [-1.0, 1.0] {
                let left = coeffs.bar_b(xi - 1e-9, 0.0).unwrap();
                let right = coeffs.bar_b(xi + 1e-9, 0.0).unwrap();
                assert!((left - right).abs() < 1e-6, "sigma {sigma}: jump {left} vs {right}");
            }
        }
    }

    #[test]
    fn identity_transform_leaves_coefficients_unchanged() {
        let drift = DriftDecomposition::new(ControlledDrift::linear_in_control(-1.0), PiecewiseLipschitzFn::zero(), StateDrift::linear(-0.3));
        let jumps = JumpModel::new(1.0, crate::model::JumpSize::Fixed(0.4), crate::model::JumpMap::Identity).unwrap();
        let c = transformed_coefficients(&TransformG::identity(), &drift, 0.7, &jumps);
        for y in [-2.0, 0.3, 4.0] {
            assert_eq!(c.bar_b(y, 0.5).unwrap(), drift.value(y, 0.5));
            assert_eq!(c.bar_sigma(y).unwrap(), 0.7);
            assert!((c.bar_gamma(y, 0.4).unwrap() - 0.4).abs() < 1e-15);
        }
    }
}
