use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::intensity::measure::EmpiricalMeasure;
use crate::state::{JumpType, State};

/// Built-in intensity kernels `λ±(t, X, Y)`.
///
/// Every catalog kernel is affine in a small vector of features of the
/// interacting state `Y`, and those features depend on `Y` through `k(Y)`
/// only. Mean-field averages therefore reduce to averaging the features
/// (see [`IntensityKernel::summarize`]), and the features are invariant
/// under drift.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "id", rename_all = "kebab-case")]
pub enum KernelSpec {
    /// `λ⁺ = a`, `λ⁻ = b`.
    Const { a: f64, b: f64 },
    /// `λ⁺ = a0 + a1·m(Y)`, `λ⁻ = b0 + b1·m(Y)` with `m(Y) = min(k(Y), k_max)/k_max`.
    MeanfieldQueue { a0: f64, a1: f64, b0: f64, b1: f64, k_max: u32 },
    /// `λ⁺ = a`, `λ⁻ = b0 + b1·(1 − exp(−y(X)))`: service hazard grows with
    /// the elapsed service time.
    AgeService { a: f64, b0: f64, b1: f64 },
    /// Pointwise sum of the terms.
    Sum { terms: Vec<KernelSpec> },
}

/// Per-side range of a kernel term on states with `k(X) > 0` (service side)
/// or any state (arrival side).
#[derive(Debug, Clone, Copy)]
struct SideRange {
    plus_lo: f64,
    plus_hi: f64,
    minus_lo: f64,
    minus_hi: f64,
}

impl KernelSpec {
    /// Catalog ids accepted by [`KernelSpec::from_params`].
    pub const CATALOG: [&'static str; 3] = ["const", "meanfield-queue", "age-service"];

    /// Builds a catalog kernel from its id and named parameters. Ids joined
    /// with `+` are not handled here; see [`KernelSpec::sum`].
    pub fn from_params(id: &str, params: &BTreeMap<String, f64>) -> Result<Self> {
        let get = |name: &str| -> Result<f64> {
            params
                .get(name)
                .copied()
                .ok_or_else(|| Error::InvalidKernel(format!("kernel {id}: missing parameter {name}")))
        };
        let allowed: &[&str] = match id {
            "const" => &["a", "b"],
            "meanfield-queue" => &["a0", "a1", "b0", "b1", "k_max"],
            "age-service" => &["a", "b0", "b1"],
            other => return Err(Error::InvalidKernel(format!("unknown kernel id {other:?}"))),
        };
        if let Some(extra) = params.keys().find(|key| !allowed.contains(&key.as_str())) {
            return Err(Error::InvalidKernel(format!("kernel {id}: unknown parameter {extra}")));
        }
        let spec = match id {
            "const" => KernelSpec::Const { a: get("a")?, b: get("b")? },
            "meanfield-queue" => {
                let k_max = get("k_max")?;
                if !(k_max >= 1.0 && k_max.fract() == 0.0 && k_max <= u32::MAX as f64) {
                    return Err(Error::InvalidKernel(format!("k_max = {k_max} must be a positive integer")));
                }
                KernelSpec::MeanfieldQueue {
                    a0: get("a0")?,
                    a1: get("a1")?,
                    b0: get("b0")?,
                    b1: get("b1")?,
                    k_max: k_max as u32,
                }
            }
            _ => KernelSpec::AgeService { a: get("a")?, b0: get("b0")?, b1: get("b1")? },
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn sum(terms: Vec<KernelSpec>) -> Self {
        KernelSpec::Sum { terms }
    }

    /// Catalog id; sums render as `id1+id2+…`.
    pub fn id(&self) -> String {
        match self {
            KernelSpec::Const { .. } => "const".into(),
            KernelSpec::MeanfieldQueue { .. } => "meanfield-queue".into(),
            KernelSpec::AgeService { .. } => "age-service".into(),
            KernelSpec::Sum { terms } => terms.iter().map(KernelSpec::id).collect::<Vec<_>>().join("+"),
        }
    }

    /// Named parameters of a non-sum kernel.
    pub fn params(&self) -> BTreeMap<String, f64> {
        let pairs: Vec<(&str, f64)> = match *self {
            KernelSpec::Const { a, b } => vec![("a", a), ("b", b)],
            KernelSpec::MeanfieldQueue { a0, a1, b0, b1, k_max } => {
                vec![("a0", a0), ("a1", a1), ("b0", b0), ("b1", b1), ("k_max", k_max as f64)]
            }
            KernelSpec::AgeService { a, b0, b1 } => vec![("a", a), ("b0", b0), ("b1", b1)],
            KernelSpec::Sum { .. } => vec![],
        };
        pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    /// Checks that every parameter is finite and nonnegative.
    pub fn validate(&self) -> Result<()> {
        let check = |name: &str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidKernel(format!("{}: parameter {name} = {v} must be finite and >= 0", self.id())))
            }
        };
        match self {
            KernelSpec::Sum { terms } => {
                if terms.is_empty() {
                    return Err(Error::InvalidKernel("sum kernel needs at least one term".into()));
                }
                terms.iter().try_for_each(KernelSpec::validate)
            }
            KernelSpec::MeanfieldQueue { k_max, .. } if *k_max == 0 => {
                Err(Error::InvalidKernel("meanfield-queue: k_max must be >= 1".into()))
            }
            other => other.params().iter().try_for_each(|(name, v)| check(name, *v)),
        }
    }

    fn feature_dim(&self) -> usize {
        match self {
            KernelSpec::MeanfieldQueue { .. } => 1,
            KernelSpec::Sum { terms } => terms.iter().map(KernelSpec::feature_dim).sum(),
            _ => 0,
        }
    }

    fn write_features(&self, y: &State, out: &mut [f64]) {
        match self {
            KernelSpec::MeanfieldQueue { k_max, .. } => out[0] = queue_load(y.k(), *k_max),
            KernelSpec::Sum { terms } => {
                let mut offset = 0;
                for term in terms {
                    let d = term.feature_dim();
                    term.write_features(y, &mut out[offset..offset + d]);
                    offset += d;
                }
            }
            _ => {}
        }
    }

    /// Unwrapped rate, i.e. without the empty-queue indicator on services.
    fn raw_rate(&self, side: JumpType, x: &State, features: &[f64]) -> f64 {
        match (self, side) {
            (KernelSpec::Const { a, .. }, JumpType::Arrival) => *a,
            (KernelSpec::Const { b, .. }, JumpType::Service) => *b,
            (KernelSpec::MeanfieldQueue { a0, a1, .. }, JumpType::Arrival) => a0 + a1 * features[0],
            (KernelSpec::MeanfieldQueue { b0, b1, .. }, JumpType::Service) => b0 + b1 * features[0],
            (KernelSpec::AgeService { a, .. }, JumpType::Arrival) => *a,
            (KernelSpec::AgeService { b0, b1, .. }, JumpType::Service) => b0 + b1 * (-(-x.y()).exp_m1()),
            (KernelSpec::Sum { terms }, side) => {
                let mut offset = 0;
                let mut total = 0.0;
                for term in terms {
                    let d = term.feature_dim();
                    total += term.raw_rate(side, x, &features[offset..offset + d]);
                    offset += d;
                }
                total
            }
        }
    }

    fn range(&self) -> SideRange {
        match *self {
            KernelSpec::Const { a, b } => SideRange { plus_lo: a, plus_hi: a, minus_lo: b, minus_hi: b },
            KernelSpec::MeanfieldQueue { a0, a1, b0, b1, .. } => {
                SideRange { plus_lo: a0, plus_hi: a0 + a1, minus_lo: b0, minus_hi: b0 + b1 }
            }
            KernelSpec::AgeService { a, b0, b1 } => SideRange { plus_lo: a, plus_hi: a, minus_lo: b0, minus_hi: b0 + b1 },
            KernelSpec::Sum { ref terms } => terms.iter().map(KernelSpec::range).fold(
                SideRange { plus_lo: 0.0, plus_hi: 0.0, minus_lo: 0.0, minus_hi: 0.0 },
                |acc, r| SideRange {
                    plus_lo: acc.plus_lo + r.plus_lo,
                    plus_hi: acc.plus_hi + r.plus_hi,
                    minus_lo: acc.minus_lo + r.minus_lo,
                    minus_hi: acc.minus_hi + r.minus_hi,
                },
            ),
        }
    }
}

fn queue_load(k: u32, k_max: u32) -> f64 {
    k.min(k_max) as f64 / k_max as f64
}

/// Sup/inf bounds of a kernel.
///
/// `lambda_bar` bounds each side separately, `total_bar` bounds
/// `Λ⁺ + Λ⁻` and is the dominating rate used for thinning.
/// `lambda_underbar` is the infimum over both sides, excluding the service
/// side at `k(X) = 0`; it is zero when the kernel may vanish.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KernelBounds {
    pub lambda_bar: f64,
    pub lambda_underbar: f64,
    pub total_bar: f64,
    /// Lipschitz constant of `ln` on `[lambda_underbar, lambda_bar]`,
    /// i.e. `1 / lambda_underbar`; infinite when `lambda_underbar = 0`.
    pub log_lipschitz: f64,
}

impl KernelBounds {
    pub fn new(lambda_bar: f64, lambda_underbar: f64, total_bar: f64) -> Result<Self> {
        if !(lambda_underbar >= 0.0 && lambda_underbar <= lambda_bar && lambda_bar.is_finite()) {
            return Err(Error::InvalidKernel(format!(
                "bounds need 0 <= lambda_underbar ({lambda_underbar}) <= lambda_bar ({lambda_bar}) < inf"
            )));
        }
        if !(total_bar.is_finite() && total_bar >= 0.0) {
            return Err(Error::InvalidKernel(format!("total_bar = {total_bar} must be finite and >= 0")));
        }
        let log_lipschitz = if lambda_underbar > 0.0 { 1.0 / lambda_underbar } else { f64::INFINITY };
        Ok(KernelBounds { lambda_bar, lambda_underbar, total_bar, log_lipschitz })
    }

    /// Whether the rates are bounded away from zero (uniqueness regime).
    pub fn bounded_below(&self) -> bool {
        self.lambda_underbar > 0.0
    }
}

/// Feature averages `E_μ[features(Y)]` of a measure for a given kernel.
pub type MeasureSummary = Vec<f64>;

/// A catalog kernel together with its declared bounds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntensityKernel {
    spec: KernelSpec,
    bounds: KernelBounds,
}

impl IntensityKernel {
    /// Validates `spec` and derives its bounds.
    pub fn new(spec: KernelSpec) -> Result<Self> {
        spec.validate()?;
        let r = spec.range();
        let bounds = KernelBounds::new(
            r.plus_hi.max(r.minus_hi),
            r.plus_lo.min(r.minus_lo),
            r.plus_hi + r.minus_hi,
        )?;
        Ok(IntensityKernel { spec, bounds })
    }

    pub fn constant(a: f64, b: f64) -> Result<Self> {
        IntensityKernel::new(KernelSpec::Const { a, b })
    }

    pub fn meanfield_queue(a0: f64, a1: f64, b0: f64, b1: f64, k_max: u32) -> Result<Self> {
        IntensityKernel::new(KernelSpec::MeanfieldQueue { a0, a1, b0, b1, k_max })
    }

    pub fn age_service(a: f64, b0: f64, b1: f64) -> Result<Self> {
        IntensityKernel::new(KernelSpec::AgeService { a, b0, b1 })
    }

    /// Replaces the derived bounds with user-declared ones. The simulator
    /// treats the declared `total_bar` as the dominating rate and fails hard
    /// when the kernel exceeds it.
    pub fn with_declared_bounds(mut self, bounds: KernelBounds) -> Self {
        self.bounds = bounds;
        self
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn bounds(&self) -> &KernelBounds {
        &self.bounds
    }

    pub fn feature_dim(&self) -> usize {
        self.spec.feature_dim()
    }

    /// Pointwise `λ±(t, X, Y)`, zero on the service side when `k(X) = 0`.
    pub fn lambda(&self, side: JumpType, _t: f64, x: &State, y: &State) -> f64 {
        if side == JumpType::Service && x.is_empty() {
            return 0.0;
        }
        let mut features = vec![0.0; self.feature_dim()];
        self.spec.write_features(y, &mut features);
        self.spec.raw_rate(side, x, &features)
    }

    /// `Λ±[t, X, μ] = Σ_j w_j λ±(t, X, Y_j)`, summed atom by atom.
    pub fn mean_field_rate(&self, side: JumpType, t: f64, x: &State, mu: &EmpiricalMeasure) -> f64 {
        mu.atoms().iter().map(|(y, w)| w * self.lambda(side, t, x, y)).sum()
    }

    /// `Λ⁺ + Λ⁻`.
    pub fn total_rate(&self, t: f64, x: &State, mu: &EmpiricalMeasure) -> f64 {
        self.mean_field_rate(JumpType::Arrival, t, x, mu) + self.mean_field_rate(JumpType::Service, t, x, mu)
    }

    /// Feature vector of a single interacting state.
    pub fn features(&self, y: &State) -> Vec<f64> {
        let mut out = vec![0.0; self.feature_dim()];
        self.spec.write_features(y, &mut out);
        out
    }

    pub(crate) fn write_features(&self, y: &State, out: &mut [f64]) {
        self.spec.write_features(y, out)
    }

    /// Feature averages of `mu`; with them `Λ±` costs O(1) per evaluation.
    pub fn summarize(&self, mu: &EmpiricalMeasure) -> MeasureSummary {
        let d = self.feature_dim();
        let mut acc = vec![0.0; d];
        let mut buf = vec![0.0; d];
        for (y, w) in mu.atoms() {
            self.spec.write_features(y, &mut buf);
            for (a, f) in acc.iter_mut().zip(&buf) {
                *a += w * f;
            }
        }
        acc
    }

    /// Feature averages of a uniform ensemble of states.
    pub fn summarize_states<'a>(&self, states: impl IntoIterator<Item = &'a State>) -> MeasureSummary {
        let d = self.feature_dim();
        let mut acc = vec![0.0; d];
        let mut buf = vec![0.0; d];
        let mut n = 0usize;
        for y in states {
            self.spec.write_features(y, &mut buf);
            for (a, f) in acc.iter_mut().zip(&buf) {
                *a += f;
            }
            n += 1;
        }
        if n > 0 {
            acc.iter_mut().for_each(|a| *a /= n as f64);
        }
        acc
    }

    /// `Λ±[t, X, μ]` from a precomputed summary of `μ`.
    #[inline]
    pub fn rate(&self, side: JumpType, _t: f64, x: &State, summary: &[f64]) -> f64 {
        if side == JumpType::Service && x.is_empty() {
            return 0.0;
        }
        self.spec.raw_rate(side, x, summary)
    }

    /// `(Λ⁺, Λ⁻)` from a summary.
    #[inline]
    pub fn rates(&self, t: f64, x: &State, summary: &[f64]) -> (f64, f64) {
        (self.rate(JumpType::Arrival, t, x, summary), self.rate(JumpType::Service, t, x, summary))
    }
}
