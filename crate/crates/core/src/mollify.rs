//! Smooth approximations `b_{2,n} = b2 * K_{1/n}` of the discontinuous drift part.
//!
//! `K(u) ∝ exp(-1/(1-u²))` on `(-1, 1)`. Convolutions against constant and
//! affine pieces use tabulated kernel moments
//! `F(u) = ∫_{-1}^u K`, `M1(u) = ∫_{-1}^u vK`, `M2(u) = ∫_{-1}^u v²K`;
//! a smooth piece that covers the whole kernel window uses a Gauss rule with
//! the kernel as weight, and partial windows fall back to adaptive quadrature.

use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;

use crate::error::SimError;
use crate::model::ControlPolicy;
use crate::piecewise::{Piece, PiecewiseLipschitzFn, SmoothPiece};
use crate::quad;
use crate::rng::substream;
use crate::sim::{ControlledSystem, PathBundle, SimConfig, Simulator, Skeleton};
use crate::stats::MonteCarloEstimate;

const TABLE_NODES: usize = 4096;
const QUAD_TOL: f64 = 1e-9;
const GAUSS_NODES: usize = 24;

fn raw_kernel(u: f64) -> f64 {
    if u.abs() >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - u * u)).exp()
    }
}

struct KernelTables {
    z: f64,
    // Values of ∫_0^u v^j K(v) dv at u = i / (TABLE_NODES - 1), j = 0, 1, 2.
    a: [Vec<f64>; 3],
}

fn tables() -> &'static KernelTables {
    static TABLES: OnceLock<KernelTables> = OnceLock::new();
    TABLES.get_or_init(|| {
        let n = TABLE_NODES;
        let step = 1.0 / (n - 1) as f64;
        let mut a = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
        for (j, col) in a.iter_mut().enumerate() {
            for i in 1..n {
                let lo = (i - 1) as f64 * step;
                let hi = i as f64 * step;
                col[i] = col[i - 1] + quad::integrate(|v| v.powi(j as i32) * raw_kernel(v), lo, hi, 1e-15);
            }
        }
        let z = 2.0 * a[0][n - 1];
        for col in a.iter_mut() {
            for v in col.iter_mut() {
                *v /= z;
            }
        }
        // Exact normalisation of the half mass.
        a[0][n - 1] = 0.5;
        KernelTables { z, a }
    })
}

/// Gauss rules for `∫ f(u) K(u) du` with `GAUSS_NODES / 2` and `GAUSS_NODES`
/// nodes, from the discretised Stieltjes procedure and the Golub–Welsch eigenproblem.
fn kernel_gauss_rules() -> &'static [Vec<(f64, f64)>; 2] {
    static RULES: OnceLock<[Vec<(f64, f64)>; 2]> = OnceLock::new();
    RULES.get_or_init(|| {
        let z = tables().z;
        let grid: Vec<(f64, f64)> = quad::composite_kronrod_nodes(-1.0, 1.0, 400).into_iter().map(|(u, w)| (u, w * raw_kernel(u) / z)).collect();
        // K is even, so every recurrence coefficient a_k vanishes.
        let mut b = Vec::with_capacity(GAUSS_NODES);
        let mut prev = vec![0.0; grid.len()];
        let mut cur = vec![1.0; grid.len()];
        let mut norm_prev = 1.0;
        for k in 0..GAUSS_NODES {
            let norm: f64 = grid.iter().zip(&cur).map(|((_, w), p)| w * p * p).sum();
            let bk = if k > 0 { norm / norm_prev } else { 0.0 };
            b.push(bk);
            let next: Vec<f64> = grid.iter().zip(cur.iter().zip(&prev)).map(|((u, _), (p, q))| u * p - bk * q).collect();
            prev = std::mem::replace(&mut cur, next);
            norm_prev = norm;
        }
        let rule = |n: usize| {
            let jacobi = DMatrix::from_fn(n, n, |i, j| if i.abs_diff(j) == 1 { b[i.max(j)].sqrt() } else { 0.0 });
            let eig = SymmetricEigen::new(jacobi);
            let mut r: Vec<(f64, f64)> = (0..n).map(|i| (eig.eigenvalues[i], eig.eigenvectors[(0, i)].powi(2))).collect();
            r.sort_by(|x, y| x.0.total_cmp(&y.0));
            r
        };
        [rule(GAUSS_NODES / 2), rule(GAUSS_NODES)]
    })
}

/// `∫_{-1}^{1} f(u) K(u) du` for `f` smooth on the whole window. Falls back
/// to adaptive quadrature when the two Gauss rules disagree.
fn kernel_gauss<F: Fn(f64) -> f64>(f: F) -> f64 {
    let [coarse, fine] = kernel_gauss_rules();
    let apply = |rule: &[(f64, f64)]| rule.iter().map(|&(u, w)| w * f(u)).sum::<f64>();
    let (lo, hi) = (apply(coarse), apply(fine));
    if (hi - lo).abs() <= QUAD_TOL * (1.0 + hi.abs()) {
        hi
    } else {
        quad::integrate(|u| f(u) * kernel(u), -1.0, 1.0, QUAD_TOL)
    }
}

impl KernelTables {
    /// Cubic Hermite interpolation of `∫_0^u v^j K` for `u ∈ [0, 1]`.
    fn half(&self, j: usize, u: f64) -> f64 {
        let n = TABLE_NODES;
        let col = &self.a[j];
        if u >= 1.0 {
            return col[n - 1];
        }
        let pos = u * (n - 1) as f64;
        let i = (pos as usize).min(n - 2);
        let h = 1.0 / (n - 1) as f64;
        let s = pos - i as f64;
        let (u0, u1) = (i as f64 * h, (i + 1) as f64 * h);
        let d0 = u0.powi(j as i32) * raw_kernel(u0) / self.z;
        let d1 = u1.powi(j as i32) * raw_kernel(u1) / self.z;
        let s2 = s * s;
        let s3 = s2 * s;
        (2.0 * s3 - 3.0 * s2 + 1.0) * col[i] + (s3 - 2.0 * s2 + s) * h * d0 + (-2.0 * s3 + 3.0 * s2) * col[i + 1] + (s3 - s2) * h * d1
    }

    fn cdf(&self, u: f64) -> f64 {
        let u = u.clamp(-1.0, 1.0);
        if u >= 0.0 {
            0.5 + self.half(0, u)
        } else {
            0.5 - self.half(0, -u)
        }
    }

    fn m1(&self, u: f64) -> f64 {
        let u = u.clamp(-1.0, 1.0);
        self.half(1, u.abs()) - self.half(1, 1.0)
    }

    fn m2(&self, u: f64) -> f64 {
        let u = u.clamp(-1.0, 1.0);
        let total = self.half(2, 1.0);
        if u >= 0.0 {
            total + self.half(2, u)
        } else {
            total - self.half(2, -u)
        }
    }
}

/// Normalised bump kernel `K(u) = exp(-1/(1-u²)) / Z` on `(-1, 1)`.
pub fn kernel(u: f64) -> f64 {
    raw_kernel(u) / tables().z
}

/// Normalising constant `Z = ∫_{-1}^{1} exp(-1/(1-u²)) du`.
pub fn kernel_normaliser() -> f64 {
    tables().z
}

/// Kernel of width `h = 1/n`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mollifier {
    n: u32,
    h: f64,
}

impl Mollifier {
    pub fn new(n: u32) -> Result<Self, SimError> {
        if n == 0 {
            return Err(SimError::InvalidConfig("n >= 1".into()));
        }
        Ok(Self { n, h: 1.0 / n as f64 })
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn width(&self) -> f64 {
        self.h
    }

    /// `K_h(v) = K(v/h)/h`.
    pub fn eval(&self, v: f64) -> f64 {
        kernel(v / self.h) / self.h
    }
}

/// `b_{2,n}` together with its derivative and antiderivative.
#[derive(Clone, Debug)]
pub struct MollifiedDrift {
    b2: PiecewiseLipschitzFn,
    mollifier: Mollifier,
    base: f64,
}

pub fn mollify(b2: &PiecewiseLipschitzFn, n: u32) -> Result<MollifiedDrift, SimError> {
    let mollifier = Mollifier::new(n)?;
    let mut m = MollifiedDrift { b2: b2.clone(), mollifier, base: 0.0 };
    m.base = m.smoothed_primitive(0.0);
    Ok(m)
}

impl MollifiedDrift {
    pub fn mollifier(&self) -> Mollifier {
        self.mollifier
    }

    pub fn source(&self) -> &PiecewiseLipschitzFn {
        &self.b2
    }

    /// `‖b_{2,n}‖∞ ≤ ‖b2‖∞` since the kernel is a probability density.
    pub fn sup_bound(&self) -> f64 {
        self.b2.global_bound()
    }

    /// Lipschitz bound: piece slopes plus the jumps spread over the kernel.
    pub fn lipschitz(&self) -> f64 {
        let bp = self.b2.breakpoints();
        let jumps: f64 = (0..bp.len()).map(|k| (self.b2.right_limit(k) - self.b2.left_limit(k)).abs()).sum();
        self.b2.lipschitz() + jumps * kernel(0.0) / self.mollifier.h
    }

    /// Pieces overlapping `[x - h, x + h]` as `(piece, u_lo, u_hi)` in kernel
    /// coordinates `u = (x - y)/h`, so `y ∈ piece ∩ window ⇔ u ∈ [u_lo, u_hi]`.
    fn overlaps(&self, x: f64) -> impl Iterator<Item = (&Piece, f64, f64)> + '_ {
        let h = self.mollifier.h;
        let first = self.b2.piece_index(x - h);
        let last = self.b2.piece_index(x + h);
        (first..=last).map(move |i| {
            let (lo, hi) = self.b2.interval(i);
            let y_lo = lo.max(x - h);
            let y_hi = hi.min(x + h);
            (&self.b2.pieces()[i], (x - y_hi) / h, (x - y_lo) / h)
        })
    }

    fn is_local_polynomial(&self, x: f64) -> Option<&Piece> {
        let h = self.mollifier.h;
        let i = self.b2.piece_index(x - h);
        if i == self.b2.piece_index(x + h) {
            let p = &self.b2.pieces()[i];
            if p.linear_coefficients().is_some() {
                return Some(p);
            }
        }
        None
    }

    pub fn value(&self, x: f64) -> f64 {
        if let Some(p) = self.is_local_polynomial(x) {
            return p.value(x);
        }
        let t = tables();
        let h = self.mollifier.h;
        self.overlaps(x)
            .map(|(piece, ua, ub)| match piece.linear_coefficients() {
                Some([c0, c1]) => (c0 + c1 * x) * (t.cdf(ub) - t.cdf(ua)) - c1 * h * (t.m1(ub) - t.m1(ua)),
                None if ua <= -1.0 && ub >= 1.0 => kernel_gauss(|u| piece.value(x - h * u)),
                None => quad::integrate(|u| piece.value(x - h * u) * kernel(u), ua, ub, QUAD_TOL),
            })
            .sum()
    }

    /// `Σ_k [b2]_k K_h(x - ξ_k) + ∫ b2'(y) K_h(x - y) dy`.
    pub fn derivative(&self, x: f64) -> f64 {
        if let Some(p) = self.is_local_polynomial(x) {
            return p.derivative(x);
        }
        let t = tables();
        let h = self.mollifier.h;
        let bp = self.b2.breakpoints();
        let jumps: f64 = bp
            .iter()
            .enumerate()
            .filter(|(_, &xi)| (x - xi).abs() < h)
            .map(|(k, &xi)| (self.b2.right_limit(k) - self.b2.left_limit(k)) * self.mollifier.eval(x - xi))
            .sum();
        let smooth: f64 = self
            .overlaps(x)
            .map(|(piece, ua, ub)| match piece.linear_coefficients() {
                Some([_, c1]) => c1 * (t.cdf(ub) - t.cdf(ua)),
                None if ua <= -1.0 && ub >= 1.0 => kernel_gauss(|u| piece.derivative(x - h * u)),
                None => quad::integrate(|u| piece.derivative(x - h * u) * kernel(u), ua, ub, QUAD_TOL),
            })
            .sum();
        jumps + smooth
    }

    /// `(B * K_h)(x)` with `B = ∫₀ b2`, whose derivative is `b_{2,n}`.
    fn smoothed_primitive(&self, x: f64) -> f64 {
        let t = tables();
        let h = self.mollifier.h;
        self.overlaps(x)
            .map(|(piece, ua, ub)| match piece.linear_coefficients() {
                Some([c0, c1]) => {
                    // On this piece B(y) = k0 + c0 y + c1 y²/2 with k0 fixed by continuity.
                    let y_ref = x - h * 0.5 * (ua + ub);
                    let k0 = self.b2.antiderivative(y_ref) - c0 * y_ref - 0.5 * c1 * y_ref * y_ref;
                    let df = t.cdf(ub) - t.cdf(ua);
                    let d1 = t.m1(ub) - t.m1(ua);
                    let d2 = t.m2(ub) - t.m2(ua);
                    // y = x - h u
                    (k0 + c0 * x + 0.5 * c1 * x * x) * df - (c0 + c1 * x) * h * d1 + 0.5 * c1 * h * h * d2
                }
                None if ua <= -1.0 && ub >= 1.0 => kernel_gauss(|u| self.b2.antiderivative(x - h * u)),
                None => quad::integrate(|u| self.b2.antiderivative(x - h * u) * kernel(u), ua, ub, QUAD_TOL),
            })
            .sum()
    }

    /// `∫₀ˣ b_{2,n}(y) dy`.
    pub fn antiderivative(&self, x: f64) -> f64 {
        self.smoothed_primitive(x) - self.base
    }

    /// The mollified drift as a single smooth piece, for use in a [`DriftDecomposition`].
    pub fn as_piecewise(&self) -> PiecewiseLipschitzFn {
        let (v, d, a) = (Arc::new(self.clone()), Arc::new(self.clone()), Arc::new(self.clone()));
        let piece = SmoothPiece::new(move |x| v.value(x), move |x| d.derivative(x), self.lipschitz(), self.sup_bound())
            .with_antiderivative(move |x| a.antiderivative(x));
        PiecewiseLipschitzFn::smooth(piece)
    }
}

/// `E[sup_t |X_t - Xⁿ_t|²]` with `Xⁿ` driven by `b_{2,n}` on the same noise.
pub fn coupling_error(system: &ControlledSystem, n: u32, policy: &ControlPolicy, cfg: &SimConfig, x0: f64) -> Result<MonteCarloEstimate, SimError> {
    let smooth = ControlledSystem::new(system.drift.with_b2(mollify(&system.drift.b2, n)?.as_piecewise()), system.jumps.clone());
    let exact_sim = Simulator::new(system, policy, *cfg)?;
    let smooth_sim = Simulator::new(&smooth, policy, *cfg)?;
    let errors: Result<Vec<f64>, SimError> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(cfg.seed, i as u64);
            let skel = Skeleton::sample(&system.jumps, 0.0, cfg.horizon, cfg.dt, &mut rng);
            let fail = |e| SimError::PathFailed { index: i, source: Box::new(e) };
            let a = exact_sim.integrate(&skel, x0).map_err(fail)?;
            let b = smooth_sim.integrate(&skel, x0).map_err(fail)?;
            Ok(a.states().iter().zip(b.states()).map(|(p, q)| (p - q) * (p - q)).fold(0.0, f64::max))
        })
        .collect();
    MonteCarloEstimate::from_samples(&errors?)
}

/// `∫₀ᵀ E|b_{2,n}(X_s) - b2(X_s)|⁴ ds`, left-Riemann in time along each path.
pub fn drift_error_integral(b2: &PiecewiseLipschitzFn, smooth: &MollifiedDrift, bundle: &PathBundle) -> Result<MonteCarloEstimate, SimError> {
    let per_path: Vec<f64> = bundle
        .paths
        .par_iter()
        .map(|p| {
            let (t, x) = (p.times(), p.states());
            (0..p.steps()).map(|k| (smooth.value(x[k]) - b2.value(x[k])).powi(4) * (t[k + 1] - t[k])).sum()
        })
        .collect();
    MonteCarloEstimate::from_samples(&per_path)
}
