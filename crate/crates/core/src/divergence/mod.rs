//! f-divergence generators.
//!
//! A [`DivergenceGenerator`] carries a convex `f` with `f(1) = 0` together with
//! its dual `f*(t) = t f(1/t)`. Both sides are stored as [`ScalarMap`]s so the
//! estimators can evaluate either one in log-ratio space and invert it on its
//! monotone branches.

mod checks;
mod lambert;
mod registry;
mod spec;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use checks::{
    check_generator, check_homogeneity, check_surrogate_identity, classify_homogeneity,
    homogeneity_pairs, log_grid, SurrogateReport,
};
pub use lambert::{lambert_w, xlogx_inverse};
pub use registry::{
    chi_n, custom_c1, custom_c2, hellinger_alpha, kl_forward, kl_reverse, registry_lookup,
    registry_names, renyi_alpha, total_variation,
};
pub use spec::DivergenceSpec;

#[derive(Debug, Error)]
pub enum DivergenceError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("unknown divergence `{0}`")]
    Unknown(String),
    #[error("cannot form dual of `{name}`: validity domain {domain} is not closed under t -> 1/t")]
    NotReciprocalClosed { name: String, domain: String },
    #[error("homogeneity check failed for `{name}`: {detail}")]
    Homogeneity { name: String, detail: String },
    #[error("quadrature failed: {0}")]
    Quadrature(String),
}

/// Which side of the generator a bound uses.
///
/// `Reverse` bounds average `f*(p/q)` under `q`; `Forward` bounds average `f(p/q)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Reverse,
    Forward,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Reverse => "reverse",
            Direction::Forward => "forward",
        }
    }
}

impl std::str::FromStr for Direction {
    type Err = DivergenceError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "reverse" => Ok(Direction::Reverse),
            "forward" => Ok(Direction::Forward),
            other => Err(DivergenceError::InvalidParameter(format!(
                "direction must be `reverse` or `forward`, got `{other}`"
            ))),
        }
    }
}

pub type Scalar = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

pub fn scalar(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Scalar {
    Arc::new(f)
}

/// Closed forms that let estimators work with `log E[h(r)]`-style objectives.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LogForm {
    /// `coef * t^power + offset`
    Power { coef: f64, power: f64, offset: f64 },
    /// `coef * ln t + offset`
    Log { coef: f64, offset: f64 },
}

impl LogForm {
    pub fn eval(&self, t: f64) -> f64 {
        match *self {
            LogForm::Power {
                coef,
                power,
                offset,
            } => coef * t.powf(power) + offset,
            LogForm::Log { coef, offset } => coef * t.ln() + offset,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Monotone {
    Increasing,
    Decreasing,
}

/// One monotone piece `[lo, hi]` of a scalar map, with an optional closed-form inverse.
#[derive(Clone)]
pub struct Branch {
    pub lo: f64,
    pub hi: f64,
    pub direction: Monotone,
    inverse: Option<Scalar>,
}

impl Branch {
    pub fn new(lo: f64, hi: f64, direction: Monotone) -> Self {
        Branch {
            lo,
            hi,
            direction,
            inverse: None,
        }
    }

    pub fn with_inverse(mut self, inverse: Scalar) -> Self {
        self.inverse = Some(inverse);
        self
    }

    pub fn has_closed_inverse(&self) -> bool {
        self.inverse.is_some()
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.lo && t <= self.hi
    }
}

impl fmt::Debug for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Branch")
            .field("lo", &self.lo)
            .field("hi", &self.hi)
            .field("direction", &self.direction)
            .field("closed_inverse", &self.inverse.is_some())
            .finish()
    }
}

/// Ordered monotone pieces covering `(0, inf)`.
#[derive(Clone, Debug)]
pub struct MonotonicityMap {
    branches: Vec<Branch>,
}

impl MonotonicityMap {
    pub fn new(branches: Vec<Branch>) -> Self {
        debug_assert!(!branches.is_empty());
        MonotonicityMap { branches }
    }

    pub fn single(direction: Monotone, inverse: Option<Scalar>) -> Self {
        let mut b = Branch::new(0.0, f64::INFINITY, direction);
        b.inverse = inverse;
        MonotonicityMap { branches: vec![b] }
    }

    /// Builds the map from sign changes of `derivative`, scanned on a log grid.
    pub fn from_derivative(derivative: &Scalar) -> Self {
        let n = 4001;
        let (s_lo, s_hi) = (-40.0_f64, 40.0_f64);
        let sign = |s: f64| {
            let d = derivative(s.exp());
            if d > 0.0 {
                1
            } else if d < 0.0 {
                -1
            } else {
                0
            }
        };
        let mut cuts = Vec::new();
        let mut dirs = Vec::new();
        let mut prev_s = s_lo;
        let mut prev = sign(s_lo);
        for i in 1..n {
            let s = s_lo + (s_hi - s_lo) * i as f64 / (n - 1) as f64;
            let cur = sign(s);
            if cur == 0 {
                continue;
            }
            if prev == 0 {
                prev = cur;
                prev_s = s;
                continue;
            }
            if cur != prev {
                let (mut a, mut b) = (prev_s, s);
                for _ in 0..200 {
                    let m = 0.5 * (a + b);
                    if sign(m) == prev {
                        a = m;
                    } else {
                        b = m;
                    }
                    if b - a < 1e-14 {
                        break;
                    }
                }
                dirs.push(prev);
                cuts.push((0.5 * (a + b)).exp());
                prev = cur;
            }
            prev_s = s;
        }
        dirs.push(if prev == 0 { 1 } else { prev });

        let mut branches = Vec::with_capacity(dirs.len());
        let mut lo = 0.0;
        for (i, d) in dirs.iter().enumerate() {
            let hi = cuts.get(i).copied().unwrap_or(f64::INFINITY);
            let direction = if *d > 0 {
                Monotone::Increasing
            } else {
                Monotone::Decreasing
            };
            branches.push(Branch::new(lo, hi, direction));
            lo = hi;
        }
        MonotonicityMap { branches }
    }

    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }

    pub fn len(&self) -> usize {
        self.branches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.branches.is_empty()
    }

    /// Direction when the map is a single branch.
    pub fn global_direction(&self) -> Option<Monotone> {
        match self.branches.as_slice() {
            [b] => Some(b.direction),
            _ => None,
        }
    }

    pub fn branch_index(&self, t: f64) -> Option<usize> {
        self.branches.iter().position(|b| b.contains(t))
    }

    /// The point where a decreasing branch meets an increasing one, if any.
    pub fn minimizer(&self) -> Option<f64> {
        self.branches.windows(2).find_map(|w| {
            (w[0].direction == Monotone::Decreasing && w[1].direction == Monotone::Increasing)
                .then_some(w[0].hi)
        })
    }

    pub fn summary(&self) -> Vec<(f64, f64, Monotone)> {
        self.branches
            .iter()
            .map(|b| (b.lo, b.hi, b.direction))
            .collect()
    }
}

/// A scalar map `h: (0, inf) -> R` with its derivative, log-argument forms
/// and limits at the ends of the domain.
#[derive(Clone)]
pub struct ScalarMap {
    value: Scalar,
    derivative: Scalar,
    log_value: Scalar,
    log_slope: Scalar,
    at_zero: f64,
    at_infinity: f64,
    monotonicity: MonotonicityMap,
    log_form: Option<LogForm>,
}

impl ScalarMap {
    /// Map with numerically derived defaults for everything but value and derivative.
    pub fn new(value: Scalar, derivative: Scalar) -> Self {
        let v = value.clone();
        let d = derivative.clone();
        let log_value = scalar(move |s: f64| v(s.exp()));
        let log_slope = scalar(move |s: f64| {
            let t = s.exp();
            t * d(t)
        });
        let at_zero = value(f64::MIN_POSITIVE);
        let at_infinity = value(1e300);
        let monotonicity = MonotonicityMap::from_derivative(&derivative);
        ScalarMap {
            value,
            derivative,
            log_value,
            log_slope,
            at_zero,
            at_infinity,
            monotonicity,
            log_form: None,
        }
    }

    /// Map with every piece supplied.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        value: Scalar,
        derivative: Scalar,
        log_value: Scalar,
        log_slope: Scalar,
        at_zero: f64,
        at_infinity: f64,
        monotonicity: MonotonicityMap,
        log_form: Option<LogForm>,
    ) -> Self {
        ScalarMap {
            value,
            derivative,
            log_value,
            log_slope,
            at_zero,
            at_infinity,
            monotonicity,
            log_form,
        }
    }

    pub fn with_monotonicity(mut self, m: MonotonicityMap) -> Self {
        self.monotonicity = m;
        self
    }

    pub fn eval(&self, t: f64) -> f64 {
        if t == 0.0 {
            self.at_zero
        } else if t == f64::INFINITY {
            self.at_infinity
        } else {
            (self.value)(t)
        }
    }

    pub fn deriv(&self, t: f64) -> f64 {
        (self.derivative)(t)
    }

    /// `h(exp(s))`; `s = -inf` gives the limit at zero.
    pub fn eval_log(&self, s: f64) -> f64 {
        if s == f64::NEG_INFINITY {
            self.at_zero
        } else if s == f64::INFINITY {
            self.at_infinity
        } else {
            (self.log_value)(s)
        }
    }

    /// `d/ds h(exp(s)) = t h'(t)` at `t = exp(s)`. Zero at `s = -inf`.
    pub fn slope_log(&self, s: f64) -> f64 {
        if s == f64::NEG_INFINITY {
            0.0
        } else {
            (self.log_slope)(s)
        }
    }

    pub fn at_zero(&self) -> f64 {
        self.at_zero
    }

    pub fn at_infinity(&self) -> f64 {
        self.at_infinity
    }

    pub fn monotonicity(&self) -> &MonotonicityMap {
        &self.monotonicity
    }

    pub fn log_form(&self) -> Option<LogForm> {
        self.log_form
    }

    /// Values of the map at the two ends of branch `idx`.
    pub fn branch_range(&self, idx: usize) -> (f64, f64) {
        let b = &self.monotonicity.branches[idx];
        (self.eval(b.lo), self.eval(b.hi))
    }

    /// Inverse of the map restricted to branch `idx`. `None` when `y` lies
    /// outside the branch's range.
    pub fn inverse(&self, idx: usize, y: f64) -> Option<f64> {
        let b = self.monotonicity.branches.get(idx)?;
        if y.is_nan() {
            return None;
        }
        let (ya, yb) = self.branch_range(idx);
        let (ymin, ymax) = if ya <= yb { (ya, yb) } else { (yb, ya) };
        let slack = 1e-12 * (1.0 + y.abs());
        if y < ymin - slack || y > ymax + slack {
            return None;
        }
        if let Some(inv) = &b.inverse {
            let t = inv(y);
            if t.is_nan() {
                return None;
            }
            return Some(t.clamp(b.lo, b.hi));
        }
        if y == ya {
            return Some(b.lo);
        }
        if y == yb {
            return Some(b.hi);
        }
        Some(self.bisect(b, y))
    }

    fn bisect(&self, b: &Branch, y: f64) -> f64 {
        let mut a = if b.lo > 0.0 { b.lo.ln() } else { -745.0 };
        let mut c = if b.hi.is_finite() { b.hi.ln() } else { 709.0 };
        let increasing = b.direction == Monotone::Increasing;
        for _ in 0..400 {
            if c - a < 1e-12 {
                break;
            }
            let m = 0.5 * (a + c);
            let v = self.eval_log(m);
            if (v < y) == increasing {
                a = m;
            } else {
                c = m;
            }
        }
        (0.5 * (a + c)).exp()
    }
}

impl fmt::Debug for ScalarMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScalarMap")
            .field("at_zero", &self.at_zero)
            .field("at_infinity", &self.at_infinity)
            .field("monotonicity", &self.monotonicity)
            .field("log_form", &self.log_form)
            .finish()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum HomogeneityTag {
    F0,
    F1,
    Unclassified,
}

/// Shifted homogeneity: `f(t s) = t^gamma f(s) + f(t) s^eta` with `eta` 0 (F0) or 1 (F1).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HomogeneityClass {
    pub tag: HomogeneityTag,
    pub gamma: Option<f64>,
}

impl HomogeneityClass {
    pub fn f0(gamma: f64) -> Self {
        HomogeneityClass {
            tag: HomogeneityTag::F0,
            gamma: Some(gamma),
        }
    }

    pub fn f1(gamma: f64) -> Self {
        HomogeneityClass {
            tag: HomogeneityTag::F1,
            gamma: Some(gamma),
        }
    }

    pub fn unclassified() -> Self {
        HomogeneityClass {
            tag: HomogeneityTag::Unclassified,
            gamma: None,
        }
    }

    /// Class of the dual generator: F0 and F1 swap and `gamma -> 1 - gamma`.
    pub fn dual(self) -> Self {
        match (self.tag, self.gamma) {
            (HomogeneityTag::F0, Some(g)) => Self::f1(1.0 - g),
            (HomogeneityTag::F1, Some(g)) => Self::f0(1.0 - g),
            _ => Self::unclassified(),
        }
    }

    pub fn is_classified(&self) -> bool {
        self.tag != HomogeneityTag::Unclassified
    }
}

/// Open interval of admissible generator arguments.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const POSITIVE: Interval = Interval {
        lo: 0.0,
        hi: f64::INFINITY,
    };

    pub fn contains(&self, t: f64) -> bool {
        t > self.lo && t < self.hi
    }

    pub fn reciprocal(&self) -> Interval {
        let inv = |x: f64| {
            if x == 0.0 {
                f64::INFINITY
            } else if x.is_infinite() {
                0.0
            } else {
                1.0 / x
            }
        };
        Interval {
            lo: inv(self.hi),
            hi: inv(self.lo),
        }
    }

    pub fn is_full(&self) -> bool {
        *self == Interval::POSITIVE
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.lo, self.hi)
    }
}

/// Transform applied to a divergence value after integration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PostTransform {
    /// `D = ln(1 + (alpha - 1) H) / (alpha - 1)` from the Hellinger core `H`.
    Renyi { alpha: f64 },
}

impl PostTransform {
    pub fn apply(&self, value: f64) -> f64 {
        match *self {
            PostTransform::Renyi { alpha } => (1.0 + (alpha - 1.0) * value).ln() / (alpha - 1.0),
        }
    }
}

#[derive(Clone)]
pub struct DivergenceGenerator {
    name: String,
    params: BTreeMap<String, f64>,
    primal: ScalarMap,
    dual: ScalarMap,
    homogeneity: HomogeneityClass,
    validity: Interval,
    domain_note: Option<String>,
    post_transform: Option<PostTransform>,
}

impl fmt::Debug for DivergenceGenerator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DivergenceGenerator")
            .field("name", &self.name)
            .field("params", &self.params)
            .field("homogeneity", &self.homogeneity)
            .field("validity", &self.validity)
            .field("domain_note", &self.domain_note)
            .finish()
    }
}

impl DivergenceGenerator {
    pub fn from_maps(
        name: impl Into<String>,
        primal: ScalarMap,
        dual: ScalarMap,
        homogeneity: HomogeneityClass,
    ) -> Self {
        DivergenceGenerator {
            name: name.into(),
            params: BTreeMap::new(),
            primal,
            dual,
            homogeneity,
            validity: Interval::POSITIVE,
            domain_note: None,
            post_transform: None,
        }
    }

    /// Generator from a user-supplied `f` and `f'`. The dual side is derived
    /// through `t f(1/t)`; limits and monotone branches are found numerically.
    pub fn custom(
        name: impl Into<String>,
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        f_prime: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        let f: Scalar = Arc::new(f);
        let fp: Scalar = Arc::new(f_prime);
        let (f1, f2, fp2) = (f.clone(), f.clone(), fp.clone());
        let dual_value = scalar(move |t: f64| t * f1(1.0 / t));
        let dual_deriv = scalar(move |t: f64| f2(1.0 / t) - fp2(1.0 / t) / t);
        Self::from_maps(
            name,
            ScalarMap::new(f, fp),
            ScalarMap::new(dual_value, dual_deriv),
            HomogeneityClass::unclassified(),
        )
    }

    pub fn with_params(mut self, params: BTreeMap<String, f64>) -> Self {
        self.params = params;
        self
    }

    pub fn with_validity(mut self, validity: Interval, note: impl Into<String>) -> Self {
        self.validity = validity;
        self.domain_note = Some(note.into());
        self
    }

    pub fn with_post_transform(mut self, t: PostTransform) -> Self {
        self.post_transform = Some(t);
        self
    }

    pub fn with_homogeneity(mut self, h: HomogeneityClass) -> Self {
        self.homogeneity = h;
        self
    }

    pub fn renamed(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn params(&self) -> &BTreeMap<String, f64> {
        &self.params
    }

    pub fn f(&self, t: f64) -> f64 {
        self.primal.eval(t)
    }

    pub fn f_dual(&self, t: f64) -> f64 {
        self.dual.eval(t)
    }

    /// `f'(t)`. Kinks return a subgradient (total variation gives 0 at `t = 1`).
    pub fn f_prime(&self, t: f64) -> f64 {
        self.primal.deriv(t)
    }

    pub fn f_dual_prime(&self, t: f64) -> f64 {
        self.dual.deriv(t)
    }

    /// Inverse of `f*` on its monotone branch `branch`.
    pub fn f_dual_inverse(&self, branch: usize, y: f64) -> Option<f64> {
        self.dual.inverse(branch, y)
    }

    pub fn dual_monotonicity(&self) -> &MonotonicityMap {
        self.dual.monotonicity()
    }

    pub fn primal(&self) -> &ScalarMap {
        &self.primal
    }

    pub fn dual(&self) -> &ScalarMap {
        &self.dual
    }

    /// The map averaged by a bound in `direction`: `f*` for reverse, `f` for forward.
    pub fn bound_map(&self, direction: Direction) -> &ScalarMap {
        match direction {
            Direction::Reverse => &self.dual,
            Direction::Forward => &self.primal,
        }
    }

    pub fn homogeneity(&self) -> HomogeneityClass {
        self.homogeneity
    }

    /// Admissible arguments of `f`. The dual is admissible on the reciprocal interval.
    pub fn validity(&self) -> Interval {
        self.validity
    }

    pub fn bound_validity(&self, direction: Direction) -> Interval {
        match direction {
            Direction::Reverse => self.validity.reciprocal(),
            Direction::Forward => self.validity,
        }
    }

    pub fn domain_note(&self) -> Option<&str> {
        self.domain_note.as_deref()
    }

    pub fn post_transform(&self) -> Option<PostTransform> {
        self.post_transform
    }
}

/// The dual generator: `f` and `f*` swap and the homogeneity class transforms.
pub fn make_dual(g: &DivergenceGenerator) -> Result<DivergenceGenerator, DivergenceError> {
    if g.validity != g.validity.reciprocal() {
        return Err(DivergenceError::NotReciprocalClosed {
            name: g.name.clone(),
            domain: g.validity.to_string(),
        });
    }
    let name = match g
        .name
        .strip_prefix("dual(")
        .and_then(|s| s.strip_suffix(')'))
    {
        Some(inner) => inner.to_string(),
        None => format!("dual({})", g.name),
    };
    Ok(DivergenceGenerator {
        name,
        params: g.params.clone(),
        primal: g.dual.clone(),
        dual: g.primal.clone(),
        homogeneity: g.homogeneity.dual(),
        validity: g.validity,
        domain_note: g.domain_note.clone(),
        post_transform: g.post_transform,
    })
}

/// Surrogate generator `f_lambda(t) = f(lambda t) - f(lambda)`.
///
/// F0 generators stay in F0 with the same exponent. F1 generators pick up a
/// linear term `f(lambda) (t - 1)` and are reported as Unclassified unless
/// `f(lambda) = 0`. Post-transforms are dropped; the surrogate acts on the core.
pub fn make_surrogate(
    g: &DivergenceGenerator,
    lambda: f64,
) -> Result<DivergenceGenerator, DivergenceError> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(DivergenceError::InvalidParameter(format!(
            "surrogate scale must be positive and finite, got {lambda}"
        )));
    }
    if !g.validity.contains(lambda) {
        return Err(DivergenceError::Domain(format!(
            "surrogate scale {lambda} lies outside the validity domain {} of `{}`",
            g.validity, g.name
        )));
    }
    let f_lam = g.f(lambda);
    if !f_lam.is_finite() {
        return Err(DivergenceError::Domain(format!(
            "f({lambda}) is not finite for `{}`",
            g.name
        )));
    }
    let ln_lam = lambda.ln();

    let p = &g.primal;
    let primal = {
        let (v, d, lv, ls) = (
            p.value.clone(),
            p.derivative.clone(),
            p.log_value.clone(),
            p.log_slope.clone(),
        );
        let branches = p
            .monotonicity
            .branches
            .iter()
            .map(|b| {
                let mut nb = Branch::new(b.lo / lambda, b.hi / lambda, b.direction);
                if let Some(inv) = b.inverse.clone() {
                    nb.inverse = Some(scalar(move |y: f64| inv(y + f_lam) / lambda));
                }
                nb
            })
            .collect();
        let log_form = p.log_form.map(|lf| match lf {
            LogForm::Power { coef, power, .. } => {
                let c = coef * lambda.powf(power);
                LogForm::Power {
                    coef: c,
                    power,
                    offset: -c,
                }
            }
            LogForm::Log { coef, .. } => LogForm::Log { coef, offset: 0.0 },
        });
        ScalarMap {
            value: scalar(move |t: f64| v(lambda * t) - f_lam),
            derivative: scalar(move |t: f64| lambda * d(lambda * t)),
            log_value: scalar(move |s: f64| lv(s + ln_lam) - f_lam),
            log_slope: scalar(move |s: f64| ls(s + ln_lam)),
            at_zero: p.at_zero - f_lam,
            at_infinity: p.at_infinity - f_lam,
            monotonicity: MonotonicityMap { branches },
            log_form,
        }
    };

    let q = &g.dual;
    let dual = {
        let (v, d, lv, ls) = (
            q.value.clone(),
            q.derivative.clone(),
            q.log_value.clone(),
            q.log_slope.clone(),
        );
        let derivative = scalar(move |t: f64| d(t / lambda) - f_lam);
        let log_form = if f_lam == 0.0 {
            q.log_form.map(|lf| match lf {
                LogForm::Power {
                    coef,
                    power,
                    offset,
                } => LogForm::Power {
                    coef: coef * lambda.powf(1.0 - power),
                    power,
                    offset: lambda * offset,
                },
                LogForm::Log { coef, offset } => LogForm::Log {
                    coef: lambda * coef,
                    offset: lambda * (offset - coef * ln_lam),
                },
            })
        } else {
            None
        };
        // f_lambda*(t) / t -> f(0+) - f(lambda) as t -> inf
        let slope_at_inf = p.at_zero - f_lam;
        let at_infinity = if slope_at_inf > 0.0 {
            f64::INFINITY
        } else if slope_at_inf < 0.0 {
            f64::NEG_INFINITY
        } else {
            // linear parts cancel; take the value far out
            let far = 1e15;
            lambda * v(far / lambda) - far * f_lam
        };
        let monotonicity = MonotonicityMap::from_derivative(&derivative);
        ScalarMap {
            value: scalar(move |t: f64| lambda * v(t / lambda) - t * f_lam),
            derivative,
            log_value: scalar(move |s: f64| lambda * lv(s - ln_lam) - s.exp() * f_lam),
            log_slope: scalar(move |s: f64| lambda * ls(s - ln_lam) - s.exp() * f_lam),
            at_zero: lambda * q.at_zero,
            at_infinity,
            monotonicity,
            log_form,
        }
    };

    let homogeneity = match g.homogeneity.tag {
        HomogeneityTag::F0 => g.homogeneity,
        HomogeneityTag::F1 if f_lam == 0.0 => g.homogeneity,
        _ => HomogeneityClass::unclassified(),
    };
    let validity = Interval {
        lo: g.validity.lo / lambda,
        hi: g.validity.hi / lambda,
    };
    let mut params = g.params.clone();
    params.insert("lambda".into(), lambda);
    Ok(DivergenceGenerator {
        name: format!("surrogate({}, {lambda})", g.name),
        params,
        primal,
        dual,
        homogeneity,
        validity,
        domain_note: g.domain_note.clone(),
        post_transform: None,
    })
}
