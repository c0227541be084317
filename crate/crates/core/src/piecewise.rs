//! Bounded, piecewise Lipschitz scalar functions.
//!
//! A [`PiecewiseLipschitzFn`] is defined by breakpoints `ξ_1 < … < ξ_m` and
//! `m + 1` pieces. Piece `0` lives on `(-∞, ξ_1)`, piece `i` on `[ξ_i, ξ_{i+1})`
//! and piece `m` on `[ξ_m, ∞)`, so evaluation at a breakpoint returns the
//! right limit.

use std::fmt;
use std::sync::Arc;

use crate::error::ModelError;
use crate::quad;

pub type RealFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A smooth piece given by closures.
#[derive(Clone)]
pub struct SmoothPiece {
    value: RealFn,
    derivative: RealFn,
    antiderivative: Option<RealFn>,
    lipschitz: f64,
    bound: f64,
}

impl SmoothPiece {
    /// `lipschitz` bounds `|derivative|` and `bound` bounds `|value|` on the
    /// interval the piece is attached to.
    pub fn new(
        value: impl Fn(f64) -> f64 + Send + Sync + 'static,
        derivative: impl Fn(f64) -> f64 + Send + Sync + 'static,
        lipschitz: f64,
        bound: f64,
    ) -> Self {
        Self { value: Arc::new(value), derivative: Arc::new(derivative), antiderivative: None, lipschitz, bound }
    }

    /// Attaches a closed-form antiderivative (any base point).
    pub fn with_antiderivative(mut self, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        self.antiderivative = Some(Arc::new(f));
        self
    }
}

#[derive(Clone)]
pub enum Piece {
    Constant(f64),
    Affine { slope: f64, intercept: f64 },
    Smooth(SmoothPiece),
}

impl fmt::Debug for Piece {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Piece::Constant(c) => write!(f, "Constant({c})"),
            Piece::Affine { slope, intercept } => write!(f, "Affine({slope} x + {intercept})"),
            Piece::Smooth(s) => write!(f, "Smooth(lip={}, bound={})", s.lipschitz, s.bound),
        }
    }
}

impl Piece {
    pub fn value(&self, x: f64) -> f64 {
        match self {
            Piece::Constant(c) => *c,
            Piece::Affine { slope, intercept } => slope * x + intercept,
            Piece::Smooth(s) => (s.value)(x),
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        match self {
            Piece::Constant(_) => 0.0,
            Piece::Affine { slope, .. } => *slope,
            Piece::Smooth(s) => (s.derivative)(x),
        }
    }

    pub fn lipschitz(&self) -> f64 {
        match self {
            Piece::Constant(_) => 0.0,
            Piece::Affine { slope, .. } => slope.abs(),
            Piece::Smooth(s) => s.lipschitz,
        }
    }

    /// `∫_a^b piece(y) dy`.
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        match self {
            Piece::Constant(c) => c * (b - a),
            Piece::Affine { slope, intercept } => 0.5 * slope * (b * b - a * a) + intercept * (b - a),
            Piece::Smooth(s) => match &s.antiderivative {
                Some(big_f) => big_f(b) - big_f(a),
                None => quad::integrate(|y| (s.value)(y), a, b, 1e-12),
            },
        }
    }

    /// Coefficients `[c0, c1]` when the piece is a polynomial of degree ≤ 1.
    pub fn linear_coefficients(&self) -> Option<[f64; 2]> {
        match self {
            Piece::Constant(c) => Some([*c, 0.0]),
            Piece::Affine { slope, intercept } => Some([*intercept, *slope]),
            Piece::Smooth(_) => None,
        }
    }

    fn is_zero(&self) -> bool {
        matches!(self.linear_coefficients(), Some([c0, c1]) if c0 == 0.0 && c1 == 0.0)
    }
}

/// Bounded function, Lipschitz between finitely many jump points.
#[derive(Clone, Debug)]
pub struct PiecewiseLipschitzFn {
    breakpoints: Vec<f64>,
    pieces: Vec<Piece>,
    global_bound: f64,
    // Per piece: a reference point inside the piece and ∫₀ of the function up to it.
    anchors: Vec<(f64, f64)>,
}

impl PiecewiseLipschitzFn {
    pub fn new(breakpoints: Vec<f64>, pieces: Vec<Piece>) -> Result<Self, ModelError> {
        if breakpoints.iter().any(|b| !b.is_finite()) || breakpoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(ModelError::UnsortedBreakpoints);
        }
        if pieces.len() != breakpoints.len() + 1 {
            return Err(ModelError::PieceCount { expected: breakpoints.len() + 1, got: pieces.len() });
        }
        let mut global_bound: f64 = 0.0;
        for (i, piece) in pieces.iter().enumerate() {
            let (lo, hi) = interval_of(&breakpoints, i);
            let bound = match piece {
                Piece::Constant(c) => c.abs(),
                Piece::Affine { slope, intercept } => {
                    if *slope == 0.0 {
                        intercept.abs()
                    } else if lo.is_infinite() || hi.is_infinite() {
                        return Err(ModelError::Unbounded { piece: i });
                    } else {
                        piece.value(lo).abs().max(piece.value(hi).abs())
                    }
                }
                Piece::Smooth(s) => s.bound,
            };
            global_bound = global_bound.max(bound);
        }
        let anchors = compute_anchors(&breakpoints, &pieces);
        Ok(Self { breakpoints, pieces, global_bound, anchors })
    }

    pub fn zero() -> Self {
        Self::constant(0.0)
    }

    pub fn constant(c: f64) -> Self {
        Self::new(Vec::new(), vec![Piece::Constant(c)]).expect("constant function is valid")
    }

    /// `left` on `(-∞, xi)`, `right` on `[xi, ∞)`.
    pub fn step(xi: f64, left: f64, right: f64) -> Result<Self, ModelError> {
        Self::new(vec![xi], vec![Piece::Constant(left), Piece::Constant(right)])
    }

    /// `beta · sgn(x) · 1{|x| > h}`, the surplus drain/injection term.
    pub fn symmetric_threshold(beta: f64, h: f64) -> Result<Self, ModelError> {
        if !(h > 0.0) {
            return Err(ModelError::InvalidParameter { name: "H", reason: "threshold must be positive".into() });
        }
        Self::new(vec![-h, h], vec![Piece::Constant(-beta), Piece::Constant(0.0), Piece::Constant(beta)])
    }

    /// A single smooth piece on the whole line.
    pub fn smooth(piece: SmoothPiece) -> Self {
        Self::new(Vec::new(), vec![Piece::Smooth(piece)]).expect("single piece is valid")
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn pieces(&self) -> &[Piece] {
        &self.pieces
    }

    /// `(lo, hi)` of piece `i`, with infinite ends for the outer pieces.
    pub fn interval(&self, i: usize) -> (f64, f64) {
        interval_of(&self.breakpoints, i)
    }

    pub fn piece_index(&self, x: f64) -> usize {
        self.breakpoints.partition_point(|&b| b <= x)
    }

    pub fn value(&self, x: f64) -> f64 {
        match self.pieces.as_slice() {
            [only] => only.value(x),
            pieces => pieces[self.piece_index(x)].value(x),
        }
    }

    /// Derivative of the piece containing `x`; the jumps are not included.
    pub fn derivative(&self, x: f64) -> f64 {
        self.pieces[self.piece_index(x)].derivative(x)
    }

    pub fn left_limit(&self, k: usize) -> f64 {
        self.pieces[k].value(self.breakpoints[k])
    }

    pub fn right_limit(&self, k: usize) -> f64 {
        self.pieces[k + 1].value(self.breakpoints[k])
    }

    pub fn global_bound(&self) -> f64 {
        self.global_bound
    }

    pub fn lipschitz(&self) -> f64 {
        self.pieces.iter().map(Piece::lipschitz).fold(0.0, f64::max)
    }

    pub fn is_zero(&self) -> bool {
        self.pieces.iter().all(Piece::is_zero)
    }

    /// `∫₀ˣ f(y) dy`, exact on constant and affine pieces.
    pub fn antiderivative(&self, x: f64) -> f64 {
        let i = self.piece_index(x);
        let (anchor, value) = self.anchors[i];
        value + self.pieces[i].integral(anchor, x)
    }

    /// `∫_a^b f(y) dy`.
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        self.antiderivative(b) - self.antiderivative(a)
    }
}

fn interval_of(breakpoints: &[f64], i: usize) -> (f64, f64) {
    let lo = if i == 0 { f64::NEG_INFINITY } else { breakpoints[i - 1] };
    let hi = breakpoints.get(i).copied().unwrap_or(f64::INFINITY);
    (lo, hi)
}

fn compute_anchors(breakpoints: &[f64], pieces: &[Piece]) -> Vec<(f64, f64)> {
    let home = breakpoints.partition_point(|&b| b <= 0.0);
    let mut anchors = vec![(0.0, 0.0); pieces.len()];
    for i in home + 1..pieces.len() {
        let (prev_anchor, prev_value) = anchors[i - 1];
        let xi = breakpoints[i - 1];
        anchors[i] = (xi, prev_value + pieces[i - 1].integral(prev_anchor, xi));
    }
    for i in (0..home).rev() {
        let (next_anchor, next_value) = anchors[i + 1];
        let xi = breakpoints[i];
        anchors[i] = (xi, next_value + pieces[i + 1].integral(next_anchor, xi));
    }
    anchors
}

#[cfg(test)]
mod tests {
    use super::*;

    fn surplus_integrand() -> PiecewiseLipschitzFn {
        // sgn(y)(2 - 1{|y|>1})
        PiecewiseLipschitzFn::new(vec![-1.0, 0.0, 1.0], vec![Piece::Constant(-1.0), Piece::Constant(-2.0), Piece::Constant(2.0), Piece::Constant(1.0)]).unwrap()
    }

    #[test]
    fn rejects_unsorted_breakpoints() {
        let r = PiecewiseLipschitzFn::new(vec![1.0, 1.0], vec![Piece::Constant(0.0); 3]);
        assert_eq!(r.unwrap_err(), ModelError::UnsortedBreakpoints);
    }

    #[test]
    fn rejects_unbounded_affine_tail() {
        let r = PiecewiseLipschitzFn::new(vec![0.0], vec![Piece::Constant(0.0), Piece::Affine { slope: 1.0, intercept: 0.0 }]);
        assert_eq!(r.unwrap_err(), ModelError::Unbounded { piece: 1 });
    }

    #[test]
    fn breakpoint_takes_right_limit() {
        let f = PiecewiseLipschitzFn::symmetric_threshold(1.0, 1.0).unwrap();
        assert_eq!(f.value(1.0), 1.0);
        assert_eq!(f.value(-1.0), 0.0);
        assert_eq!(f.value(0.999), 0.0);
        assert_eq!(f.value(-1.001), -1.0);
        assert_eq!((f.left_limit(0), f.right_limit(0)), (-1.0, 0.0));
        assert_eq!((f.left_limit(1), f.right_limit(1)), (0.0, 1.0));
        assert_eq!(f.global_bound(), 1.0);
    }

    #[test]
    fn antiderivative_of_surplus_integrand() {
        let f = surplus_integrand();
        assert_eq!(f.antiderivative(0.0), 0.0);
        assert!((f.antiderivative(1.0) - 2.0).abs() < 1e-15);
        assert!((f.antiderivative(2.0) - 3.0).abs() < 1e-15);
        assert!((f.antiderivative(-2.0) - 3.0).abs() < 1e-15);
        assert!((f.antiderivative(-0.5) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn antiderivative_of_zero_is_zero() {
        let f = PiecewiseLipschitzFn::zero();
        for x in [-3.0, 0.0, 7.5] {
            assert_eq!(f.antiderivative(x), 0.0);
        }
    }

    #[test]
    fn smooth_piece_without_closed_form_uses_quadrature() {
        let f = PiecewiseLipschitzFn::smooth(SmoothPiece::new(|x: f64| (5.0 * x).tanh(), |x: f64| 5.0 / (5.0 * x).cosh().powi(2), 5.0, 1.0));
        let exact = |x: f64| (5.0 * x).cosh().ln() / 5.0;
        for x in [-1.3, 0.2, 2.0] {
            assert!((f.antiderivative(x) - exact(x)).abs() < 1e-10);
        }
    }

    #[test]
    fn affine_piece_antiderivative() {
        let f =
            PiecewiseLipschitzFn::new(vec![0.0, 2.0], vec![Piece::Constant(0.0), Piece::Affine { slope: 0.5, intercept: 0.0 }, Piece::Constant(1.0)]).unwrap();
        assert!((f.antiderivative(2.0) - 1.0).abs() < 1e-15);
        assert!((f.antiderivative(3.0) - 2.0).abs() < 1e-15);
        assert_eq!(f.global_bound(), 1.0);
    }
}
