//! Numerical certificates for generator identities.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{
    make_surrogate, DivergenceError, DivergenceGenerator, HomogeneityClass, HomogeneityTag,
    Interval, Monotone, ScalarMap,
};
use crate::oracle::{divergence_quadrature, Density1D};
use crate::stats::stream_rng;

fn clip_grid_bounds(v: Interval) -> (f64, f64) {
    let lo = if v.lo > 1e-3 {
        v.lo * (1.0 + 1e-6)
    } else {
        1e-3
    };
    let hi = if v.hi < 1e3 { v.hi * (1.0 - 1e-6) } else { 1e3 };
    (lo, hi)
}

/// `n` log-spaced points covering the validity interval, clipped to `[1e-3, 1e3]`.
pub fn log_grid(validity: Interval, n: usize) -> Vec<f64> {
    let (lo, hi) = clip_grid_bounds(validity);
    crate::stats::linspace(lo.ln(), hi.ln(), n)
        .into_iter()
        .map(f64::exp)
        .collect()
}

/// Seeded pairs `(t, s)` with `t`, `s` and `t s` inside `validity`.
pub fn homogeneity_pairs(n: usize, validity: Interval, seed: u64) -> Vec<(f64, f64)> {
    let (lo, hi) = clip_grid_bounds(validity);
    let (lo, hi) = (lo.max(0.1).min(hi), hi.min(10.0).max(lo));
    let mut rng = stream_rng(seed, 0);
    let mut out = Vec::with_capacity(n);
    let mut tries = 0;
    while out.len() < n && tries < 100 * n {
        tries += 1;
        let t = (lo.ln() + (hi.ln() - lo.ln()) * rng.random::<f64>()).exp();
        let s = (lo.ln() + (hi.ln() - lo.ln()) * rng.random::<f64>()).exp();
        if validity.contains(t * s) {
            out.push((t, s));
        }
    }
    out
}

fn homogeneity_residual(h: &ScalarMap, gamma: f64, eta: f64, t: f64, s: f64) -> (f64, f64) {
    let lhs = h.eval(t * s);
    let rhs = t.powf(gamma) * h.eval(s) + h.eval(t) * s.powf(eta);
    (lhs - rhs, 1.0 + lhs.abs() + rhs.abs())
}

/// Verifies `h(t s) = t^gamma h(s) + h(t) s^eta` on `pairs` within `1e-9` (scaled).
/// Returns the largest scaled residual.
pub fn check_homogeneity(
    h: &ScalarMap,
    class: HomogeneityClass,
    pairs: &[(f64, f64)],
) -> Result<f64, String> {
    let (eta, gamma) = match (class.tag, class.gamma) {
        (HomogeneityTag::F0, Some(g)) => (0.0, g),
        (HomogeneityTag::F1, Some(g)) => (1.0, g),
        _ => return Err("generator is unclassified".into()),
    };
    let mut worst = 0.0_f64;
    for &(t, s) in pairs {
        let (r, scale) = homogeneity_residual(h, gamma, eta, t, s);
        let rel = r.abs() / scale;
        if !(rel <= 1e-9) {
            return Err(format!(
                "decomposition residual {r:e} at (t, s) = ({t}, {s}) for {:?} gamma={gamma}",
                class.tag
            ));
        }
        worst = worst.max(rel);
    }
    Ok(worst)
}

/// Fits `gamma` for both `eta` cases by least squares on
/// `ln|h(t s) - h(t) s^eta| - ln|h(s)| = gamma ln t` and keeps the first fit
/// that passes [`check_homogeneity`].
pub fn classify_homogeneity(h: &ScalarMap, pairs: &[(f64, f64)]) -> HomogeneityClass {
    for (eta, make) in [
        (0.0, HomogeneityClass::f0 as fn(f64) -> HomogeneityClass),
        (1.0, HomogeneityClass::f1 as fn(f64) -> HomogeneityClass),
    ] {
        let (mut sxy, mut sxx) = (0.0, 0.0);
        for &(t, s) in pairs {
            let rem = h.eval(t * s) - h.eval(t) * f64::powf(s, eta);
            let hs = h.eval(s);
            let lt = t.ln();
            if hs.abs() < 1e-8
                || rem.abs() < 1e-12
                || lt.abs() < 1e-3
                || rem.signum() != hs.signum()
            {
                continue;
            }
            sxy += lt * (rem.abs().ln() - hs.abs().ln());
            sxx += lt * lt;
        }
        if sxx == 0.0 {
            continue;
        }
        let gamma = sxy / sxx;
        let rounded = (gamma * 1e6).round() / 1e6;
        for g in [rounded, gamma] {
            let c = make(g);
            if check_homogeneity(h, c, pairs).is_ok() {
                return c;
            }
        }
    }
    HomogeneityClass::unclassified()
}

fn check_convex(h: &ScalarMap, grid: &[f64], label: &str, out: &mut Vec<String>) {
    for w in grid.windows(3) {
        let (t1, t2, t3) = (w[0], w[1], w[2]);
        let (f1, f2, f3) = (h.eval(t1), h.eval(t2), h.eval(t3));
        let interp = ((t3 - t2) * f1 + (t2 - t1) * f3) / (t3 - t1);
        if f2 > interp + 1e-9 * (1.0 + f2.abs()) {
            out.push(format!(
                "{label} violates convexity at t = {t2}: {f2} > {interp}"
            ));
            return;
        }
    }
}

fn check_derivative(h: &ScalarMap, grid: &[f64], label: &str, out: &mut Vec<String>) {
    for &t in grid {
        let step = 1e-4 * t;
        let fd = (h.eval(t + step) - h.eval(t - step)) / (2.0 * step);
        let d = h.deriv(t);
        // relative 1e-6 plus the rounding floor of the difference quotient
        let floor = 8.0 * f64::EPSILON * (1.0 + h.eval(t).abs()) / step;
        if !((fd - d).abs() <= 1e-6 * d.abs() + floor) {
            out.push(format!(
                "{label} derivative {d} disagrees with finite difference {fd} at t = {t}"
            ));
            return;
        }
    }
}

fn check_monotonicity(h: &ScalarMap, grid: &[f64], label: &str, out: &mut Vec<String>) {
    let m = h.monotonicity();
    let b = m.branches();
    if b.is_empty() || b[0].lo != 0.0 || b[b.len() - 1].hi != f64::INFINITY {
        out.push(format!("{label} monotonicity map does not cover (0, inf)"));
        return;
    }
    if b.windows(2)
        .any(|w| w[0].hi != w[1].lo || w[0].hi <= w[0].lo)
    {
        out.push(format!(
            "{label} monotonicity intervals are not ordered and adjacent"
        ));
        return;
    }
    for (idx, br) in b.iter().enumerate() {
        for &t in grid
            .iter()
            .filter(|&&t| t > br.lo * (1.0 + 1e-6) && t < br.hi * (1.0 - 1e-6))
        {
            let step = 1e-6 * t;
            let fd = (h.eval(t + step) - h.eval(t - step)) / (2.0 * step);
            let ok = match br.direction {
                Monotone::Increasing => fd >= -1e-9,
                Monotone::Decreasing => fd <= 1e-9,
            };
            if !ok {
                out.push(format!(
                    "{label} branch {idx} direction {:?} contradicts slope {fd} at t = {t}",
                    br.direction
                ));
                return;
            }
            let y = h.eval(t);
            // skip points where rounding in y alone moves t by more than 1e-10 relative
            if f64::EPSILON * (1.0 + y.abs()) > 1e-10 * t * h.deriv(t).abs() {
                continue;
            }
            match h.inverse(idx, y) {
                Some(back) if (back - t).abs() <= 1e-8 * t => {}
                other => {
                    out.push(format!(
                        "{label} branch {idx} inverse of {y} gave {other:?}, expected {t}"
                    ));
                    return;
                }
            }
        }
    }
}

/// Runs the generator invariant suite on a 200-point log grid and returns
/// one message per violated invariant.
pub fn check_generator(g: &DivergenceGenerator) -> Vec<String> {
    let mut out = Vec::new();
    let grid = log_grid(g.validity(), 200);
    let dual_grid = log_grid(g.validity().reciprocal(), 200);

    if !(g.f(1.0).abs() <= 1e-12) {
        out.push(format!("f(1) = {} is not 0", g.f(1.0)));
    }
    if !(g.f_dual(1.0).abs() <= 1e-12) {
        out.push(format!("f*(1) = {} is not 0", g.f_dual(1.0)));
    }
    check_convex(g.primal(), &grid, "f", &mut out);
    check_convex(g.dual(), &dual_grid, "f*", &mut out);

    for &t in &dual_grid {
        let want = t * g.f(1.0 / t);
        let got = g.f_dual(t);
        if !((got - want).abs() <= 1e-10 * (1.0 + want.abs())) {
            out.push(format!(
                "duality fails at t = {t}: f*(t) = {got}, t f(1/t) = {want}"
            ));
            break;
        }
    }
    for &t in &grid {
        let back = t * g.f_dual(1.0 / t);
        if !((back - g.f(t)).abs() <= 1e-10 * (1.0 + back.abs())) {
            out.push(format!("involution fails at t = {t}: {back} vs {}", g.f(t)));
            break;
        }
    }
    for (map, grid, label) in [(g.primal(), &grid, "f"), (g.dual(), &dual_grid, "f*")] {
        for &t in grid.iter() {
            let s = t.ln();
            let (a, b) = (map.eval_log(s), map.eval(t));
            let slope = t * map.deriv(t);
            if !((a - b).abs() <= 1e-10 * (1.0 + b.abs()))
                || !((map.slope_log(s) - slope).abs() <= 1e-9 * (1.0 + slope.abs()))
            {
                out.push(format!(
                    "{label} log-argument form disagrees with direct evaluation at t = {t}"
                ));
                break;
            }
            if let Some(lf) = map.log_form() {
                if !((lf.eval(t) - b).abs() <= 1e-10 * (1.0 + b.abs())) {
                    out.push(format!("{label} closed form disagrees at t = {t}"));
                    break;
                }
            }
        }
    }
    check_derivative(g.primal(), &grid, "f", &mut out);
    check_derivative(g.dual(), &dual_grid, "f*", &mut out);
    check_monotonicity(g.dual(), &dual_grid, "f*", &mut out);
    check_monotonicity(g.primal(), &grid, "f", &mut out);

    let h = g.homogeneity();
    if h.is_classified() {
        let pairs = homogeneity_pairs(100, g.validity(), 0xfeed);
        if let Err(e) = check_homogeneity(g.primal(), h, &pairs) {
            out.push(e);
        }
    }
    out
}

/// Result of comparing `D_{f_lambda}` with `lambda^gamma D_f`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurrogateReport {
    pub divergence: f64,
    pub surrogate_divergence: f64,
    /// `|D_{f_lambda} - lambda^gamma D_f|`; absent for unclassified generators.
    pub discrepancy: Option<f64>,
    /// `(lambda_n, |D_{f_lambda_n} - D_f|)` for `lambda_n = 1 + 2^-n`, `n = 1..=10`.
    pub trace: Vec<(f64, f64)>,
}

/// Quadrature check of `D_{f_lambda}(q||p) = lambda^gamma D_f(q||p)` plus the
/// convergence trace of `D_{f_lambda_n}` toward `D_f`.
pub fn check_surrogate_identity(
    g: &DivergenceGenerator,
    lambda: f64,
    p: &Density1D,
    q: &Density1D,
) -> Result<SurrogateReport, DivergenceError> {
    use super::Direction::Reverse;
    let quad = |gen: &DivergenceGenerator| {
        divergence_quadrature(gen, q, p, Reverse)
            .map(|r| r.value)
            .map_err(|e| DivergenceError::Quadrature(e.to_string()))
    };
    let d = quad(g)?;
    let ds = quad(&make_surrogate(g, lambda)?)?;
    let discrepancy = g
        .homogeneity()
        .gamma
        .filter(|_| g.homogeneity().is_classified())
        .map(|gamma| (ds - lambda.powf(gamma) * d).abs());
    let mut trace = Vec::with_capacity(10);
    for n in 1..=10 {
        let ln = 1.0 + 0.5f64.powi(n);
        trace.push((ln, (quad(&make_surrogate(g, ln)?)? - d).abs()));
    }
    Ok(SurrogateReport {
        divergence: d,
        surrogate_divergence: ds,
        discrepancy,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::super::*;
    use super::*;

    fn all_entries() -> Vec<DivergenceGenerator> {
        vec![
            kl_reverse(),
            kl_forward(),
            chi_n(2.0).unwrap(),
            chi_n(3.0).unwrap(),
            chi_n(-1.0).unwrap(),
            hellinger_alpha(0.5).unwrap(),
            hellinger_alpha(3.0).unwrap(),
            renyi_alpha(2.0).unwrap(),
            total_variation(),
            custom_c1(0.0).unwrap(),
            custom_c1(0.7).unwrap(),
            custom_c2(),
        ]
    }

    #[test]
    fn registry_passes_invariant_suite() {
        for g in all_entries() {
            let v = check_generator(&g);
            assert!(v.is_empty(), "{}: {v:?}", g.name());
        }
    }

    #[test]
    fn duals_pass_invariant_suite_and_class_checks() {
        for g in all_entries().into_iter().filter(|g| g.validity().is_full()) {
            let d = make_dual(&g).unwrap();
            let v = check_generator(&d);
            assert!(v.is_empty(), "{}: {v:?}", d.name());
            if d.homogeneity().is_classified() {
                let pairs = homogeneity_pairs(100, d.validity(), 5);
                check_homogeneity(d.primal(), d.homogeneity(), &pairs).unwrap();
            }
        }
    }

    #[test]
    fn surrogates_pass_invariant_suite() {
        for g in [
            kl_reverse(),
            chi_n(2.0).unwrap(),
            hellinger_alpha(3.0).unwrap(),
            total_variation(),
        ] {
            for lambda in [0.5, 2.0] {
                let s = make_surrogate(&g, lambda).unwrap();
                let v = check_generator(&s);
                assert!(v.is_empty(), "{}: {v:?}", s.name());
            }
        }
    }

    #[test]
    fn classifier_recovers_table_classes() {
        let pairs = homogeneity_pairs(60, Interval::POSITIVE, 9);
        let kl = kl_reverse();
        assert_eq!(
            classify_homogeneity(kl.primal(), &pairs),
            HomogeneityClass::f1(1.0)
        );
        let chi = chi_n(2.0).unwrap();
        assert_eq!(
            classify_homogeneity(chi.primal(), &pairs),
            HomogeneityClass::f0(2.0)
        );
        let h = hellinger_alpha(0.5).unwrap();
        assert_eq!(
            classify_homogeneity(h.primal(), &pairs),
            HomogeneityClass::f0(0.5)
        );
        let tv = total_variation();
        assert_eq!(
            classify_homogeneity(tv.primal(), &pairs).tag,
            HomogeneityTag::Unclassified
        );
        let custom =
            DivergenceGenerator::custom("sq", |t| (t - 1.0) * (t - 1.0), |t| 2.0 * (t - 1.0));
        assert_eq!(
            classify_homogeneity(custom.primal(), &pairs).tag,
            HomogeneityTag::Unclassified
        );
    }

    #[test]
    fn custom_generator_derives_dual() {
        let g = DivergenceGenerator::custom("sq", |t| (t - 1.0) * (t - 1.0), |t| 2.0 * (t - 1.0));
        assert!(check_generator(&g).is_empty());
        assert!((g.f_dual(2.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn surrogate_identity_at_unit_scale() {
        let p = Density1D::gaussian(0.0, 1.0);
        let q = Density1D::gaussian(0.3, 1.0);
        let r = check_surrogate_identity(&chi_n(2.0).unwrap(), 1.0, &p, &q).unwrap();
        assert!(r.discrepancy.unwrap() < 1e-12);
        let tv = check_surrogate_identity(&total_variation(), 2.0, &p, &q).unwrap();
        assert!(tv.discrepancy.is_none());
        assert_eq!(tv.trace.len(), 10);
    }
}
