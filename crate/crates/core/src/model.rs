//! Drift decomposition, jump model, control policies and cost functionals.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};

use crate::error::ModelError;
use crate::piecewise::{PiecewiseLipschitzFn, RealFn};
use crate::quad;

pub type ControlFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
pub type TimeStateControlFn = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;

/// `sgn` with `sgn(0) = 0`.
pub fn sgn(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// The control-dependent part `b1(x, a)` with its partial derivatives.
#[derive(Clone)]
pub struct ControlledDrift {
    value: ControlFn,
    dx: ControlFn,
    da: ControlFn,
}

impl ControlledDrift {
    pub fn new(
        value: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        dx: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        da: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self { value: Arc::new(value), dx: Arc::new(dx), da: Arc::new(da) }
    }

    pub fn zero() -> Self {
        Self::new(|_, _| 0.0, |_, _| 0.0, |_, _| 0.0)
    }

    /// `b1(x, a) = k · a`.
    pub fn linear_in_control(k: f64) -> Self {
        Self::new(move |_, a| k * a, |_, _| 0.0, move |_, _| k)
    }

    /// `b1(x, a) = c · x`.
    pub fn linear_in_state(c: f64) -> Self {
        Self::new(move |x, _| c * x, move |_, _| c, |_, _| 0.0)
    }

    pub fn value(&self, x: f64, a: f64) -> f64 {
        (self.value)(x, a)
    }

    pub fn dx(&self, x: f64, a: f64) -> f64 {
        (self.dx)(x, a)
    }

    pub fn da(&self, x: f64, a: f64) -> f64 {
        (self.da)(x, a)
    }
}

/// The smooth, control-free part `b3(x)` with linear growth.
#[derive(Clone)]
pub struct StateDrift {
    value: RealFn,
    dx: RealFn,
    growth: f64,
}

impl StateDrift {
    /// `growth` is a constant `K` with `|b3(x)| ≤ K(1 + |x|)`.
    pub fn new(value: impl Fn(f64) -> f64 + Send + Sync + 'static, dx: impl Fn(f64) -> f64 + Send + Sync + 'static, growth: f64) -> Self {
        Self { value: Arc::new(value), dx: Arc::new(dx), growth }
    }

    pub fn zero() -> Self {
        Self::new(|_| 0.0, |_| 0.0, 0.0)
    }

    /// `b3(x) = k · x`.
    pub fn linear(k: f64) -> Self {
        Self::new(move |x| k * x, move |_| k, k.abs())
    }

    pub fn value(&self, x: f64) -> f64 {
        (self.value)(x)
    }

    pub fn dx(&self, x: f64) -> f64 {
        (self.dx)(x)
    }

    pub fn growth(&self) -> f64 {
        self.growth
    }
}

/// `b(x, a) = b1(x, a) + b2(x) + b3(x)`.
#[derive(Clone)]
pub struct DriftDecomposition {
    pub b1: ControlledDrift,
    pub b2: PiecewiseLipschitzFn,
    pub b3: StateDrift,
}

impl fmt::Debug for DriftDecomposition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DriftDecomposition").field("b2", &self.b2).finish_non_exhaustive()
    }
}

impl DriftDecomposition {
    pub fn new(b1: ControlledDrift, b2: PiecewiseLipschitzFn, b3: StateDrift) -> Self {
        Self { b1, b2, b3 }
    }

    pub fn zero() -> Self {
        Self::new(ControlledDrift::zero(), PiecewiseLipschitzFn::zero(), StateDrift::zero())
    }

    pub fn value(&self, x: f64, a: f64) -> f64 {
        self.b1.value(x, a) + self.b2.value(x) + self.b3.value(x)
    }

    /// `∂ₓb1 + ∂ₓb3`, the derivative of the continuous part.
    pub fn smooth_dx(&self, x: f64, a: f64) -> f64 {
        self.b1.dx(x, a) + self.b3.dx(x)
    }

    /// Same `b1`, `b3` with `b2` replaced.
    pub fn with_b2(&self, b2: PiecewiseLipschitzFn) -> Self {
        Self { b1: self.b1.clone(), b2, b3: self.b3.clone() }
    }

    /// Spot-checks the growth and finiteness assumptions on `[lo, hi] × [a_lo, a_hi]`.
    pub fn validate_on(&self, lo: f64, hi: f64, controls: (f64, f64), samples: usize) -> Result<(), ModelError> {
        let n = samples.max(2);
        for i in 0..n {
            let x = lo + (hi - lo) * i as f64 / (n - 1) as f64;
            let b3 = self.b3.value(x);
            if !b3.is_finite() || b3.abs() > self.b3.growth * (1.0 + x.abs()) * (1.0 + 1e-12) + 1e-12 {
                return Err(ModelError::InvalidParameter { name: "b3", reason: format!("linear growth violated at x = {x}") });
            }
            for a in [controls.0, 0.5 * (controls.0 + controls.1), controls.1] {
                let v = self.b1.value(x, a);
                if !v.is_finite() || !self.b1.dx(x, a).is_finite() || !self.b1.da(x, a).is_finite() {
                    return Err(ModelError::InvalidParameter { name: "b1", reason: format!("non-finite at ({x}, {a})") });
                }
            }
            if self.b2.value(x).abs() > self.b2.global_bound() + 1e-12 {
                return Err(ModelError::InvalidParameter { name: "b2", reason: format!("exceeds its bound at x = {x}") });
            }
        }
        Ok(())
    }
}

/// Law of a single jump size.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum JumpSize {
    Fixed(f64),
    Normal { mean: f64, sd: f64 },
}

impl JumpSize {
    pub fn mean(&self) -> f64 {
        match *self {
            JumpSize::Fixed(z) => z,
            JumpSize::Normal { mean, .. } => mean,
        }
    }

    pub fn sd(&self) -> f64 {
        match *self {
            JumpSize::Fixed(_) => 0.0,
            JumpSize::Normal { sd, .. } => sd,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            JumpSize::Fixed(z) => z,
            JumpSize::Normal { mean, sd } => {
                if sd == 0.0 {
                    mean
                } else {
                    Normal::new(mean, sd).expect("sd is validated").sample(rng)
                }
            }
        }
    }

    /// `E[h(Z)]` by quadrature against the jump-size law.
    pub fn expect(&self, h: impl Fn(f64) -> f64) -> f64 {
        match *self {
            JumpSize::Fixed(z) => h(z),
            JumpSize::Normal { mean, sd: 0.0 } => h(mean),
            JumpSize::Normal { mean, sd } => {
                let norm = 1.0 / (sd * (2.0 * std::f64::consts::PI).sqrt());
                quad::integrate(|z| h(z) * norm * (-0.5 * ((z - mean) / sd).powi(2)).exp(), mean - 12.0 * sd, mean + 12.0 * sd, 1e-12)
            }
        }
    }
}

/// The jump map `γ(z)`.
#[derive(Clone)]
pub enum JumpMap {
    Identity,
    Negate,
    Custom(RealFn),
}

impl JumpMap {
    pub fn apply(&self, z: f64) -> f64 {
        match self {
            JumpMap::Identity => z,
            JumpMap::Negate => -z,
            JumpMap::Custom(f) => f(z),
        }
    }
}

/// A jump epoch and size drawn from a compound Poisson process.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JumpDraw {
    pub time: f64,
    pub z: f64,
}

/// Compound Poisson jumps: intensity, size law and jump map.
#[derive(Clone)]
pub struct JumpModel {
    intensity: f64,
    size: JumpSize,
    map: JumpMap,
}

impl fmt::Debug for JumpModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("JumpModel").field("intensity", &self.intensity).field("size", &self.size).finish_non_exhaustive()
    }
}

impl JumpModel {
    pub fn new(intensity: f64, size: JumpSize, map: JumpMap) -> Result<Self, ModelError> {
        if !(intensity >= 0.0 && intensity.is_finite()) {
            return Err(ModelError::InvalidParameter { name: "lambda", reason: "intensity must be finite and >= 0".into() });
        }
        if let JumpSize::Normal { sd, mean } = size {
            if !(sd >= 0.0 && sd.is_finite() && mean.is_finite()) {
                return Err(ModelError::InvalidParameter { name: "tau", reason: "jump-size sd must be finite and >= 0".into() });
            }
        }
        Ok(Self { intensity, size, map })
    }

    pub fn none() -> Self {
        Self { intensity: 0.0, size: JumpSize::Fixed(0.0), map: JumpMap::Identity }
    }

    pub fn intensity(&self) -> f64 {
        self.intensity
    }

    pub fn size(&self) -> JumpSize {
        self.size
    }

    pub fn gamma(&self, z: f64) -> f64 {
        self.map.apply(z)
    }

    /// `∫|γ(z)|^p ν(dz) = λ E|γ(Z)|^p`.
    pub fn moment_gamma(&self, p: f64) -> f64 {
        if self.intensity == 0.0 {
            return 0.0;
        }
        self.intensity * self.size.expect(|z| self.gamma(z).abs().powf(p))
    }

    /// `∫γ(z) ν(dz) = λ E[γ(Z)]`.
    pub fn compensator(&self) -> f64 {
        if self.intensity == 0.0 {
            return 0.0;
        }
        self.intensity * self.size.expect(|z| self.gamma(z))
    }

    /// Jumps on `(t0, t1)`: Poisson count, sorted uniform epochs, i.i.d. sizes.
    pub fn sample_on<R: Rng + ?Sized>(&self, t0: f64, t1: f64, rng: &mut R) -> Vec<JumpDraw> {
        let mean = self.intensity * (t1 - t0);
        if mean <= 0.0 {
            return Vec::new();
        }
        let count: f64 = Poisson::new(mean).expect("mean is positive and finite").sample(rng);
        let mut epochs: Vec<f64> = (0..count as usize).map(|_| t0 + (t1 - t0) * rng.random::<f64>()).collect();
        epochs.sort_by(f64::total_cmp);
        epochs.into_iter().map(|time| JumpDraw { time, z: self.size.sample(rng) }).collect()
    }
}

/// Jump epochs, sizes and increments on `[0, T]`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct JumpRecord {
    pub epochs: Vec<f64>,
    pub sizes: Vec<f64>,
    pub increments: Vec<f64>,
}

impl JumpRecord {
    pub fn count(&self) -> usize {
        self.epochs.len()
    }
}

pub fn sample_jumps<R: Rng + ?Sized>(jumps: &JumpModel, horizon: f64, rng: &mut R) -> JumpRecord {
    let draws = jumps.sample_on(0.0, horizon, rng);
    JumpRecord {
        epochs: draws.iter().map(|d| d.time).collect(),
        sizes: draws.iter().map(|d| d.z).collect(),
        increments: draws.iter().map(|d| jumps.gamma(d.z)).collect(),
    }
}

/// Closed control set `[lo, hi]`.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ControlSet {
    pub lo: f64,
    pub hi: f64,
}

impl ControlSet {
    pub fn new(lo: f64, hi: f64) -> Result<Self, ModelError> {
        if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(ModelError::InvalidParameter { name: "A", reason: "need finite lo <= hi".into() });
        }
        Ok(Self { lo, hi })
    }

    pub fn symmetric(a: f64) -> Result<Self, ModelError> {
        Self::new(-a, a)
    }

    pub fn clip(&self, a: f64) -> f64 {
        a.clamp(self.lo, self.hi)
    }

    pub fn max_abs(&self) -> f64 {
        self.lo.abs().max(self.hi.abs())
    }

    /// `n` equally spaced controls from `lo` to `hi`.
    pub fn grid(&self, n: usize) -> Vec<f64> {
        if n <= 1 {
            return vec![self.lo];
        }
        (0..n).map(|i| self.lo + (self.hi - self.lo) * i as f64 / (n - 1) as f64).collect()
    }
}

#[derive(Clone)]
pub enum PolicyKind {
    Constant(f64),
    /// `gain · x + offset`.
    LinearFeedback {
        gain: f64,
        offset: f64,
    },
    /// `value · 1{x > level}`.
    Threshold {
        level: f64,
        value: f64,
    },
    /// `magnitude · sgn(x)`.
    Sign {
        magnitude: f64,
    },
    Custom(ControlFn),
}

/// Markov feedback control `α(t, x)`, always clipped into its control set.
#[derive(Clone)]
pub struct ControlPolicy {
    name: String,
    kind: PolicyKind,
    bounds: ControlSet,
}

impl fmt::Debug for ControlPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ControlPolicy").field("name", &self.name).field("bounds", &self.bounds).finish_non_exhaustive()
    }
}

impl ControlPolicy {
    pub fn new(name: impl Into<String>, kind: PolicyKind, bounds: ControlSet) -> Self {
        Self { name: name.into(), kind, bounds }
    }

    pub fn constant(a: f64) -> Self {
        Self::new("constant", PolicyKind::Constant(a), ControlSet { lo: a.min(0.0), hi: a.max(0.0) })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> &PolicyKind {
        &self.kind
    }

    pub fn bounds(&self) -> ControlSet {
        self.bounds
    }

    pub fn eval(&self, t: f64, x: f64) -> f64 {
        let raw = match &self.kind {
            PolicyKind::Constant(a) => *a,
            PolicyKind::LinearFeedback { gain, offset } => gain * x + offset,
            PolicyKind::Threshold { level, value } => {
                if x > *level {
                    *value
                } else {
                    0.0
                }
            }
            PolicyKind::Sign { magnitude } => magnitude * sgn(x),
            PolicyKind::Custom(f) => f(t, x),
        };
        self.bounds.clip(raw)
    }
}

/// Running cost `f(t, x, a)` with its partial derivatives in `x` and `a`.
#[derive(Clone)]
pub struct RunningCost {
    value: TimeStateControlFn,
    dx: TimeStateControlFn,
    da: TimeStateControlFn,
}

impl RunningCost {
    pub fn new(
        value: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static,
        dx: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static,
        da: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self { value: Arc::new(value), dx: Arc::new(dx), da: Arc::new(da) }
    }

    pub fn zero() -> Self {
        Self::new(|_, _, _| 0.0, |_, _, _| 0.0, |_, _, _| 0.0)
    }

    pub fn constant(c: f64) -> Self {
        Self::new(move |_, _, _| c, |_, _, _| 0.0, |_, _, _| 0.0)
    }

    pub fn value(&self, t: f64, x: f64, a: f64) -> f64 {
        (self.value)(t, x, a)
    }

    pub fn dx(&self, t: f64, x: f64, a: f64) -> f64 {
        (self.dx)(t, x, a)
    }

    pub fn da(&self, t: f64, x: f64, a: f64) -> f64 {
        (self.da)(t, x, a)
    }
}

impl fmt::Debug for RunningCost {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("RunningCost")
    }
}

/// Terminal cost `g(x)` with its derivative.
#[derive(Clone)]
pub struct TerminalCost {
    value: RealFn,
    dx: RealFn,
}

impl TerminalCost {
    pub fn new(value: impl Fn(f64) -> f64 + Send + Sync + 'static, dx: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self { value: Arc::new(value), dx: Arc::new(dx) }
    }

    pub fn zero() -> Self {
        Self::new(|_| 0.0, |_| 0.0)
    }

    /// `g(x) = x²`.
    pub fn square() -> Self {
        Self::new(|x| x * x, |x| 2.0 * x)
    }

    /// `g(x) = -x²`, the minimisation of `E[X_T²]` written as a maximisation.
    pub fn neg_square() -> Self {
        Self::new(|x| -x * x, |x| -2.0 * x)
    }

    pub fn value(&self, x: f64) -> f64 {
        (self.value)(x)
    }

    pub fn dx(&self, x: f64) -> f64 {
        (self.dx)(x)
    }
}
