//! Service-time distributions and the tail properties that decide when
//! replication pays off.
//!
//! Every distribution is described by its tail `Pr(X > x)`. The parametric
//! kinds (exponential, shifted exponential, two-phase hyper-exponential) carry
//! closed forms for the moments of the minimum of `r` i.i.d. copies; a
//! [`GenericTail`] falls back to adaptive quadrature.

mod quadrature;

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize, Serializer};
use statrs::function::factorial::ln_binomial;
use thiserror::Error;

/// Absolute tolerance of the quadrature used for tail-defined distributions.
pub const QUADRATURE_TOL: f64 = 1e-9;
const QUADRATURE_MAX_SEGMENTS: usize = 4000;
const TRUNCATION_TAIL: f64 = 1e-12;
const MAX_SUPPORT: f64 = 1e15;

const CLASSIFY_POINTS: usize = 200;
const CLASSIFY_EPS: f64 = 1e-9;
const CLASSIFY_TAIL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DistError {
    #[error("invalid parameter {name} = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error("E[X_1:{r}^{k}] is not finite (quadrature did not converge)")]
    NonFiniteMoment { r: u32, k: u32 },
    #[error("moment order must be 1 or 2, got {0}")]
    UnsupportedMomentOrder(u32),
    #[error("replica count must be at least 1")]
    ZeroReplicas,
    #[error("tail-defined distributions have no literal form")]
    NoLiteral,
}

/// A service-time law given only by its tail function.
#[derive(Clone)]
pub struct GenericTail {
    tail: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    support_hint: f64,
}

impl GenericTail {
    /// `support_hint` is a scale at which the tail is already small; it seeds
    /// the search for integration and sampling bounds.
    pub fn new<F>(tail: F, support_hint: f64) -> Result<Self, DistError>
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        if !(support_hint.is_finite() && support_hint > 0.0) {
            return Err(DistError::InvalidParameter {
                name: "support_hint",
                value: support_hint,
                reason: "must be finite and positive",
            });
        }
        Ok(Self {
            tail: Arc::new(tail),
            support_hint,
        })
    }

    pub fn support_hint(&self) -> f64 {
        self.support_hint
    }
}

impl fmt::Debug for GenericTail {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GenericTail")
            .field("support_hint", &self.support_hint)
            .finish_non_exhaustive()
    }
}

/// Law of the service time `X` of a single task.
///
/// Hyper-exponential parameters are always ordered `(p, mu1, mu2)`: with
/// probability `p` the task is `Exp(mu1)`, otherwise `Exp(mu2)`.
#[derive(Debug, Clone)]
pub enum ServiceDistribution {
    Exponential { mu: f64 },
    ShiftedExp { delta: f64, mu: f64 },
    HyperExp { p: f64, mu1: f64, mu2: f64 },
    GenericTail(GenericTail),
}

/// Log-curvature of the tail `x -> log Pr(X > x)` on `[0, inf)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConcavityClass {
    LogConcave,
    LogConvex,
    /// Log-linear tail, i.e. exponential.
    Both,
    Neither,
}

impl fmt::Display for ConcavityClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ConcavityClass::LogConcave => "log-concave",
            ConcavityClass::LogConvex => "log-convex",
            ConcavityClass::Both => "log-linear (exponential)",
            ConcavityClass::Neither => "neither log-concave nor log-convex",
        };
        f.write_str(s)
    }
}

fn positive(name: &'static str, value: f64) -> Result<(), DistError> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(DistError::InvalidParameter {
            name,
            value,
            reason: "must be finite and > 0",
        })
    }
}

impl ServiceDistribution {
    pub fn exponential(mu: f64) -> Result<Self, DistError> {
        positive("mu", mu)?;
        Ok(Self::Exponential { mu })
    }

    pub fn shifted_exp(delta: f64, mu: f64) -> Result<Self, DistError> {
        if !(delta.is_finite() && delta >= 0.0) {
            return Err(DistError::InvalidParameter {
                name: "delta",
                value: delta,
                reason: "must be finite and >= 0",
            });
        }
        positive("mu", mu)?;
        Ok(Self::ShiftedExp { delta, mu })
    }

    pub fn hyper_exp(p: f64, mu1: f64, mu2: f64) -> Result<Self, DistError> {
        if !(0.0..=1.0).contains(&p) {
            return Err(DistError::InvalidParameter {
                name: "p",
                value: p,
                reason: "must lie in [0, 1]",
            });
        }
        positive("mu1", mu1)?;
        positive("mu2", mu2)?;
        Ok(Self::HyperExp { p, mu1, mu2 })
    }

    pub fn generic<F>(tail: F, support_hint: f64) -> Result<Self, DistError>
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        GenericTail::new(tail, support_hint).map(Self::GenericTail)
    }

    /// Wraps this distribution's tail as a [`GenericTail`], dropping the
    /// closed forms. Useful for cross-checking the numeric paths.
    pub fn as_generic(&self) -> Self {
        let inner = self.clone();
        let hint = match self {
            Self::Exponential { mu } => 1.0 / mu,
            Self::ShiftedExp { delta, mu } => delta + 1.0 / mu,
            Self::HyperExp { p, mu1, mu2 } => p / mu1 + (1.0 - p) / mu2,
            Self::GenericTail(g) => g.support_hint,
        };
        Self::GenericTail(GenericTail {
            tail: Arc::new(move |x| inner.tail(x)),
            support_hint: hint,
        })
    }

    /// Re-checks the parameter constraints; needed for values built directly
    /// from the enum variants.
    pub fn validate(&self) -> Result<(), DistError> {
        match *self {
            Self::Exponential { mu } => Self::exponential(mu).map(drop),
            Self::ShiftedExp { delta, mu } => Self::shifted_exp(delta, mu).map(drop),
            Self::HyperExp { p, mu1, mu2 } => Self::hyper_exp(p, mu1, mu2).map(drop),
            Self::GenericTail(ref g) => positive("support_hint", g.support_hint),
        }
    }

    /// `Pr(X > x)`. Equal to 1 for every `x <= 0`.
    pub fn tail(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 1.0;
        }
        match *self {
            Self::Exponential { mu } => (-mu * x).exp(),
            Self::ShiftedExp { delta, mu } => {
                if x <= delta {
                    1.0
                } else {
                    (-mu * (x - delta)).exp()
                }
            }
            Self::HyperExp { p, mu1, mu2 } => p * (-mu1 * x).exp() + (1.0 - p) * (-mu2 * x).exp(),
            Self::GenericTail(ref g) => (g.tail)(x).clamp(0.0, 1.0),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Self::Exponential { mu } => rng.sample::<f64, _>(Exp1) / mu,
            Self::ShiftedExp { delta, mu } => delta + rng.sample::<f64, _>(Exp1) / mu,
            Self::HyperExp { p, mu1, mu2 } => {
                let rate = if rng.random::<f64>() < p { mu1 } else { mu2 };
                rng.sample::<f64, _>(Exp1) / rate
            }
            Self::GenericTail(_) => {
                // Inverse transform: smallest x with tail(x) <= u.
                let u: f64 = rng.random();
                self.upper_quantile(u)
            }
        }
    }

    /// Smallest `x >= 0` with `tail(x) <= q`, found by doubling and bisection.
    pub fn upper_quantile(&self, q: f64) -> f64 {
        if q >= 1.0 {
            return 0.0;
        }
        let mut hi = self.scale_hint();
        while self.tail(hi) > q {
            hi *= 2.0;
            if hi > MAX_SUPPORT {
                return f64::INFINITY;
            }
        }
        let mut lo = 0.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.tail(mid) > q {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        hi
    }

    fn scale_hint(&self) -> f64 {
        match *self {
            Self::Exponential { mu } => 1.0 / mu,
            Self::ShiftedExp { delta, mu } => delta + 1.0 / mu,
            Self::HyperExp { mu1, mu2, .. } => 1.0 / mu1.min(mu2),
            Self::GenericTail(ref g) => g.support_hint,
        }
    }

    pub fn mean(&self) -> Result<f64, DistError> {
        self.min_moment(1, 1)
    }

    pub fn second_moment(&self) -> Result<f64, DistError> {
        self.min_moment(1, 2)
    }

    /// `E[X_{1:r}^k]` for the minimum of `r` i.i.d. copies, `k` in `{1, 2}`.
    pub fn min_moment(&self, r: u32, k: u32) -> Result<f64, DistError> {
        if r == 0 {
            return Err(DistError::ZeroReplicas);
        }
        if k != 1 && k != 2 {
            return Err(DistError::UnsupportedMomentOrder(k));
        }
        let rf = f64::from(r);
        match *self {
            Self::Exponential { mu } => {
                let m = 1.0 / (rf * mu);
                Ok(if k == 1 { m } else { 2.0 * m * m })
            }
            Self::ShiftedExp { delta, mu } => {
                // X_{1:r} = delta + Exp(r mu)
                let m = 1.0 / (rf * mu);
                Ok(if k == 1 {
                    delta + m
                } else {
                    delta * delta + 2.0 * delta * m + 2.0 * m * m
                })
            }
            Self::HyperExp { p, mu1, mu2 } => Ok(hyper_exp_min_moment(p, mu1, mu2, r, k)),
            Self::GenericTail(_) => self.min_moment_numeric(r, k),
        }
    }

    /// `E[X_{1:r}^k] = k * integral_0^inf x^(k-1) tail(x)^r dx` by adaptive
    /// quadrature, for any kind. Parametric kinds normally use closed forms.
    pub fn min_moment_numeric(&self, r: u32, k: u32) -> Result<f64, DistError> {
        if r == 0 {
            return Err(DistError::ZeroReplicas);
        }
        if k != 1 && k != 2 {
            return Err(DistError::UnsupportedMomentOrder(k));
        }
        let power = r as i32;
        let order = k as i32;
        let mut hi = self.scale_hint().max(1.0);
        loop {
            let t = self.tail(hi).powi(power);
            if t * hi.powi(order).max(1.0) < TRUNCATION_TAIL {
                break;
            }
            hi *= 2.0;
            if hi > MAX_SUPPORT {
                return Err(DistError::NonFiniteMoment { r, k });
            }
        }
        let kf = f64::from(k);
        let integrand = |x: f64| kf * x.powi(order - 1) * self.tail(x).powi(power);
        // A kink at the shift confuses the error estimate; split there.
        let breaks = match *self {
            Self::ShiftedExp { delta, .. } if delta > 0.0 && delta < hi => vec![0.0, delta, hi],
            _ => vec![0.0, hi],
        };
        let mut total = 0.0;
        let pieces = (breaks.len() - 1) as f64;
        for w in breaks.windows(2) {
            total += quadrature::integrate(
                integrand,
                w[0],
                w[1],
                QUADRATURE_TOL / pieces,
                QUADRATURE_MAX_SEGMENTS,
            )
            .map_err(|_| DistError::NonFiniteMoment { r, k })?;
        }
        if total.is_finite() {
            Ok(total)
        } else {
            Err(DistError::NonFiniteMoment { r, k })
        }
    }

    /// Log-curvature class of the tail. Parametric kinds are classified
    /// analytically; a [`GenericTail`] is probed on a geometric grid.
    pub fn classify(&self) -> ConcavityClass {
        match *self {
            Self::Exponential { .. } => ConcavityClass::Both,
            Self::ShiftedExp { delta, .. } => {
                if delta > 0.0 {
                    ConcavityClass::LogConcave
                } else {
                    ConcavityClass::Both
                }
            }
            Self::HyperExp { p, mu1, mu2 } => {
                if p > 0.0 && p < 1.0 && mu1 != mu2 {
                    ConcavityClass::LogConvex
                } else {
                    ConcavityClass::Both
                }
            }
            Self::GenericTail(_) => self.classify_numeric(),
        }
    }

    /// Grid-based classification, usable on any kind.
    pub fn classify_numeric(&self) -> ConcavityClass {
        let Ok(mean) = self.mean() else {
            return ConcavityClass::Neither;
        };
        let lo = 1e-4 * mean;
        let hi = self.upper_quantile(CLASSIFY_TAIL_FLOOR);
        if !(lo > 0.0 && hi.is_finite() && hi > lo) {
            return ConcavityClass::Neither;
        }
        let ratio = (hi / lo).powf(1.0 / (CLASSIFY_POINTS - 1) as f64);
        let points: Vec<(f64, f64)> = (0..CLASSIFY_POINTS)
            .map(|i| lo * ratio.powi(i as i32))
            .filter_map(|x| {
                let t = self.tail(x);
                (t > 0.0).then(|| (x, t.ln()))
            })
            .collect();
        let mut concave = true;
        let mut convex = true;
        for w in points.windows(3) {
            let s1 = (w[1].1 - w[0].1) / (w[1].0 - w[0].0);
            let s2 = (w[2].1 - w[1].1) / (w[2].0 - w[1].0);
            let d = s2 - s1;
            let tol = CLASSIFY_EPS * (s1.abs() + s2.abs());
            if d > tol {
                concave = false;
            }
            if d < -tol {
                convex = false;
            }
        }
        match (concave, convex) {
            (true, true) => ConcavityClass::Both,
            (true, false) => ConcavityClass::LogConcave,
            (false, true) => ConcavityClass::LogConvex,
            (false, false) => ConcavityClass::Neither,
        }
    }

    /// Compares the residual tail `tail(x + t) / tail(t)` with the fresh tail
    /// `tail(x)` at every `(x, t)` grid point.
    pub fn nbu_check(&self, grid: &[(f64, f64)]) -> NbuReport {
        let mut report = NbuReport {
            nbu_holds: true,
            nwu_holds: true,
            checked: 0,
            skipped: 0,
        };
        for &(x, t) in grid {
            let used = self.tail(t);
            if used <= 0.0 {
                report.skipped += 1;
                continue;
            }
            let residual = self.tail(x + t) / used;
            let fresh = self.tail(x);
            let slack = 1e-12 * fresh.max(residual);
            if residual > fresh + slack {
                report.nbu_holds = false;
            }
            if residual < fresh - slack {
                report.nwu_holds = false;
            }
            report.checked += 1;
        }
        report
    }

    /// Literal form used in config files, or `None` for tail-defined laws.
    pub fn literal(&self) -> Option<DistLiteral> {
        match *self {
            Self::Exponential { mu } => Some(DistLiteral::Exp { mu }),
            Self::ShiftedExp { delta, mu } => Some(DistLiteral::ShiftedExp { delta, mu }),
            Self::HyperExp { p, mu1, mu2 } => Some(DistLiteral::HyperExp { p, mu1, mu2 }),
            Self::GenericTail(_) => None,
        }
    }

    /// Parses an inline literal such as `{kind = "exp", mu = 1.0}` (TOML) or
    /// `{"kind": "exp", "mu": 1.0}` (JSON).
    pub fn parse_literal(text: &str) -> Result<Self, String> {
        let text = text.trim();
        let literal: DistLiteral = match serde_json::from_str(text) {
            Ok(l) => l,
            Err(_) => {
                #[derive(Deserialize)]
                struct Wrapper {
                    d: DistLiteral,
                }
                toml::from_str::<Wrapper>(&format!("d = {text}"))
                    .map_err(|e| format!("invalid distribution literal `{text}`: {e}"))?
                    .d
            }
        };
        Self::try_from(literal).map_err(|e| e.to_string())
    }
}

impl fmt::Display for ServiceDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Self::Exponential { mu } => write!(f, "Exp({mu})"),
            Self::ShiftedExp { delta, mu } => write!(f, "ShiftedExp({delta}, {mu})"),
            Self::HyperExp { p, mu1, mu2 } => write!(f, "HyperExp({p}, {mu1}, {mu2})"),
            Self::GenericTail(ref g) => write!(f, "GenericTail(hint={})", g.support_hint),
        }
    }
}

fn hyper_exp_min_moment(p: f64, mu1: f64, mu2: f64, r: u32, k: u32) -> f64 {
    // The minimum of r copies conditioned on j fast phases is Exp(j mu1 + (r-j) mu2).
    let mut acc = 0.0;
    for j in 0..=r {
        let weight = if p == 0.0 {
            if j == 0 {
                1.0
            } else {
                0.0
            }
        } else if p == 1.0 {
            if j == r {
                1.0
            } else {
                0.0
            }
        } else {
            let (jf, rest) = (f64::from(j), f64::from(r - j));
            (ln_binomial(u64::from(r), u64::from(j)) + jf * p.ln() + rest * (1.0 - p).ln()).exp()
        };
        if weight == 0.0 {
            continue;
        }
        let rate = f64::from(j) * mu1 + f64::from(r - j) * mu2;
        acc += if k == 1 {
            weight / rate
        } else {
            2.0 * weight / (rate * rate)
        };
    }
    acc
}

/// Result of comparing residual and fresh tails over a grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct NbuReport {
    /// `tail(x+t)/tail(t) <= tail(x)` held at every checked point.
    pub nbu_holds: bool,
    /// The reversed inequality held at every checked point.
    pub nwu_holds: bool,
    pub checked: usize,
    /// Points skipped because `tail(t) == 0`.
    pub skipped: usize,
}

/// Config-file form of a parametric distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DistLiteral {
    Exp { mu: f64 },
    #[serde(rename = "shiftedexp")]
    ShiftedExp { delta: f64, mu: f64 },
    #[serde(rename = "hyperexp")]
    HyperExp { p: f64, mu1: f64, mu2: f64 },
}

impl TryFrom<DistLiteral> for ServiceDistribution {
    type Error = DistError;

    fn try_from(lit: DistLiteral) -> Result<Self, DistError> {
        match lit {
            DistLiteral::Exp { mu } => Self::exponential(mu),
            DistLiteral::ShiftedExp { delta, mu } => Self::shifted_exp(delta, mu),
            DistLiteral::HyperExp { p, mu1, mu2 } => Self::hyper_exp(p, mu1, mu2),
        }
    }
}

impl Serialize for ServiceDistribution {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self.literal() {
            Some(lit) => lit.serialize(serializer),
            None => Err(serde::ser::Error::custom(DistError::NoLiteral)),
        }
    }
}

impl<'de> Deserialize<'de> for ServiceDistribution {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let lit = DistLiteral::deserialize(deserializer)?;
        Self::try_from(lit).map_err(serde::de::Error::custom)
    }
}
