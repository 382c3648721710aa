//! Named generators.

use std::collections::BTreeMap;
use std::f64::consts::E;

use super::checks::{check_homogeneity, homogeneity_pairs};
use super::lambert::xlogx_inverse;
use super::{
    make_dual, scalar, Branch, DivergenceError, DivergenceGenerator, HomogeneityClass, Interval,
    LogForm, Monotone, MonotonicityMap, PostTransform, ScalarMap,
};

const NAMES: &[&str] = &[
    "kl_reverse",
    "kl_forward",
    "chi_n",
    "hellinger_alpha",
    "renyi_alpha",
    "total_variation",
    "custom_c1",
    "custom_c2",
];

pub fn registry_names() -> &'static [&'static str] {
    NAMES
}

/// Looks up a generator by name. Short aliases: `kl`, `tv`, `chi2`, `hellinger`, `renyi`.
pub fn registry_lookup(
    name: &str,
    params: &BTreeMap<String, f64>,
) -> Result<DivergenceGenerator, DivergenceError> {
    let (canonical, defaults): (&str, &[(&str, f64)]) = match name {
        "kl" | "kl_reverse" => ("kl_reverse", &[]),
        "kl_forward" => ("kl_forward", &[]),
        "chi2" => ("chi_n", &[("n", 2.0)]),
        "chi_n" => ("chi_n", &[]),
        "hellinger" | "hellinger_alpha" => ("hellinger_alpha", &[]),
        "renyi" | "renyi_alpha" => ("renyi_alpha", &[]),
        "tv" | "total_variation" => ("total_variation", &[]),
        "custom_c1" | "c1" => ("custom_c1", &[("t0", 0.0)]),
        "custom_c2" | "c2" => ("custom_c2", &[]),
        other => return Err(DivergenceError::Unknown(other.to_string())),
    };
    let mut p: BTreeMap<String, f64> = defaults.iter().map(|(k, v)| (k.to_string(), *v)).collect();
    p.extend(params.iter().map(|(k, v)| (k.clone(), *v)));

    let expected: &[&str] = match canonical {
        "chi_n" => &["n"],
        "hellinger_alpha" | "renyi_alpha" => &["alpha"],
        "custom_c1" => &["t0"],
        _ => &[],
    };
    if let Some(extra) = p.keys().find(|k| !expected.contains(&k.as_str())) {
        return Err(DivergenceError::InvalidParameter(format!(
            "`{canonical}` takes no parameter `{extra}`"
        )));
    }
    let need = |k: &str| {
        p.get(k).copied().ok_or_else(|| {
            DivergenceError::InvalidParameter(format!("`{canonical}` requires parameter `{k}`"))
        })
    };

    match canonical {
        "kl_reverse" => Ok(kl_reverse()),
        "kl_forward" => Ok(kl_forward()),
        "chi_n" => chi_n(need("n")?),
        "hellinger_alpha" => hellinger_alpha(need("alpha")?),
        "renyi_alpha" => renyi_alpha(need("alpha")?),
        "total_variation" => Ok(total_variation()),
        "custom_c1" => custom_c1(need("t0")?),
        _ => Ok(custom_c2()),
    }
}

fn params(entries: &[(&str, f64)]) -> BTreeMap<String, f64> {
    entries.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

/// Confirms the hard-coded homogeneity class on sampled pairs.
fn verified(g: DivergenceGenerator) -> Result<DivergenceGenerator, DivergenceError> {
    let h = g.homogeneity();
    if h.is_classified() {
        let pairs = homogeneity_pairs(64, g.validity(), 0x5eed);
        check_homogeneity(g.primal(), h, &pairs).map_err(|detail| {
            DivergenceError::Homogeneity {
                name: g.name().to_string(),
                detail,
            }
        })?;
    }
    Ok(g)
}

/// `f(t) = t ln t`. The reverse bound is the negative ELBO.
pub fn kl_reverse() -> DivergenceGenerator {
    let primal = ScalarMap::from_parts(
        scalar(|t: f64| t * t.ln()),
        scalar(|t: f64| t.ln() + 1.0),
        scalar(|s: f64| s.exp() * s),
        scalar(|s: f64| s.exp() * (s + 1.0)),
        0.0,
        f64::INFINITY,
        MonotonicityMap::new(vec![
            Branch::new(0.0, 1.0 / E, Monotone::Decreasing),
            Branch::new(1.0 / E, f64::INFINITY, Monotone::Increasing)
                .with_inverse(scalar(|y| xlogx_inverse(y).unwrap_or(f64::NAN))),
        ]),
        None,
    );
    let dual = ScalarMap::from_parts(
        scalar(|t: f64| -t.ln()),
        scalar(|t: f64| -1.0 / t),
        scalar(|s: f64| -s),
        scalar(|_| -1.0),
        f64::INFINITY,
        f64::NEG_INFINITY,
        MonotonicityMap::single(Monotone::Decreasing, Some(scalar(|y: f64| (-y).exp()))),
        Some(LogForm::Log {
            coef: -1.0,
            offset: 0.0,
        }),
    );
    DivergenceGenerator::from_maps("kl_reverse", primal, dual, HomogeneityClass::f1(1.0))
}

/// `f(t) = -ln t`. The forward bound is the EUBO.
pub fn kl_forward() -> DivergenceGenerator {
    make_dual(&kl_reverse())
        .expect("kl_reverse is defined on all of (0, inf)")
        .renamed("kl_forward")
}

/// `f(t) = t^n - 1` for `n` outside `[0, 1)`.
pub fn chi_n(n: f64) -> Result<DivergenceGenerator, DivergenceError> {
    if !n.is_finite() || (0.0..1.0).contains(&n) {
        return Err(DivergenceError::InvalidParameter(format!(
            "chi_n requires n outside [0, 1), got {n}"
        )));
    }
    let inv = scalar(move |y: f64| (1.0 + y).powf(1.0 / n));
    let primal = ScalarMap::from_parts(
        scalar(move |t: f64| t.powf(n) - 1.0),
        scalar(move |t: f64| n * t.powf(n - 1.0)),
        scalar(move |s: f64| (n * s).exp_m1()),
        scalar(move |s: f64| n * (n * s).exp()),
        if n > 0.0 { -1.0 } else { f64::INFINITY },
        if n > 0.0 { f64::INFINITY } else { -1.0 },
        MonotonicityMap::single(
            if n > 0.0 {
                Monotone::Increasing
            } else {
                Monotone::Decreasing
            },
            Some(inv),
        ),
        Some(LogForm::Power {
            coef: 1.0,
            power: n,
            offset: -1.0,
        }),
    );
    let m = 1.0 - n;
    let dual_deriv = scalar(move |t: f64| m * t.powf(-n) - 1.0);
    let dual_mono = if n >= 1.0 {
        MonotonicityMap::single(Monotone::Decreasing, None)
    } else {
        MonotonicityMap::from_derivative(&dual_deriv)
    };
    let dual = ScalarMap::from_parts(
        scalar(move |t: f64| t.powf(m) - t),
        dual_deriv,
        scalar(move |s: f64| (m * s).exp() - s.exp()),
        scalar(move |s: f64| m * (m * s).exp() - s.exp()),
        if n > 1.0 {
            f64::INFINITY
        } else if n == 1.0 {
            1.0
        } else {
            0.0
        },
        if n >= 1.0 {
            f64::NEG_INFINITY
        } else {
            f64::INFINITY
        },
        dual_mono,
        None,
    );
    verified(
        DivergenceGenerator::from_maps("chi_n", primal, dual, HomogeneityClass::f0(n))
            .with_params(params(&[("n", n)])),
    )
}

/// `f(t) = (t^alpha - 1) / (alpha - 1)` for `alpha > 0`, `alpha != 1`.
pub fn hellinger_alpha(alpha: f64) -> Result<DivergenceGenerator, DivergenceError> {
    if !(alpha > 0.0 && alpha.is_finite()) || alpha == 1.0 {
        return Err(DivergenceError::InvalidParameter(format!(
            "alpha must be positive and different from 1, got {alpha}"
        )));
    }
    let a = alpha;
    let c = 1.0 / (a - 1.0);
    let primal = ScalarMap::from_parts(
        scalar(move |t: f64| c * (t.powf(a) - 1.0)),
        scalar(move |t: f64| c * a * t.powf(a - 1.0)),
        scalar(move |s: f64| c * (a * s).exp_m1()),
        scalar(move |s: f64| c * a * (a * s).exp()),
        -c,
        if a > 1.0 {
            f64::INFINITY
        } else {
            f64::NEG_INFINITY
        },
        MonotonicityMap::single(
            if a > 1.0 {
                Monotone::Increasing
            } else {
                Monotone::Decreasing
            },
            Some(scalar(move |y: f64| (1.0 + (a - 1.0) * y).powf(1.0 / a))),
        ),
        Some(LogForm::Power {
            coef: c,
            power: a,
            offset: -c,
        }),
    );
    let m = 1.0 - a;
    let dual_deriv = scalar(move |t: f64| c * (m * t.powf(-a) - 1.0));
    let dual_mono = if a > 1.0 {
        MonotonicityMap::single(Monotone::Decreasing, None)
    } else {
        MonotonicityMap::from_derivative(&dual_deriv)
    };
    let dual = ScalarMap::from_parts(
        scalar(move |t: f64| c * (t.powf(m) - t)),
        dual_deriv,
        scalar(move |s: f64| c * ((m * s).exp() - s.exp())),
        scalar(move |s: f64| c * (m * (m * s).exp() - s.exp())),
        if a > 1.0 { f64::INFINITY } else { 0.0 },
        if a > 1.0 {
            f64::NEG_INFINITY
        } else {
            f64::INFINITY
        },
        dual_mono,
        None,
    );
    verified(
        DivergenceGenerator::from_maps("hellinger_alpha", primal, dual, HomogeneityClass::f0(a))
            .with_params(params(&[("alpha", a)])),
    )
}

/// Hellinger core with the Renyi transform `ln(1 + (alpha - 1) H) / (alpha - 1)`
/// applied to integrated values.
pub fn renyi_alpha(alpha: f64) -> Result<DivergenceGenerator, DivergenceError> {
    Ok(hellinger_alpha(alpha)?
        .renamed("renyi_alpha")
        .with_post_transform(PostTransform::Renyi { alpha }))
}

/// `f(t) = |t - 1|`, self-dual. The derivative at `t = 1` is the subgradient 0.
pub fn total_variation() -> DivergenceGenerator {
    let map = || {
        ScalarMap::from_parts(
            scalar(|t: f64| (t - 1.0).abs()),
            scalar(|t: f64| {
                if t > 1.0 {
                    1.0
                } else if t < 1.0 {
                    -1.0
                } else {
                    0.0
                }
            }),
            scalar(|s: f64| s.exp_m1().abs()),
            scalar(|s: f64| {
                let t = s.exp();
                if s > 0.0 {
                    t
                } else if s < 0.0 {
                    -t
                } else {
                    0.0
                }
            }),
            1.0,
            f64::INFINITY,
            MonotonicityMap::new(vec![
                Branch::new(0.0, 1.0, Monotone::Decreasing).with_inverse(scalar(|y| 1.0 - y)),
                Branch::new(1.0, f64::INFINITY, Monotone::Increasing)
                    .with_inverse(scalar(|y| 1.0 + y)),
            ]),
            None,
        )
    };
    DivergenceGenerator::from_maps(
        "total_variation",
        map(),
        map(),
        HomogeneityClass::unclassified(),
    )
}

fn c1_poly(u: f64) -> f64 {
    -u * u * u / 6.0 - u * u / 2.0 - u - 1.0
}

fn c1_poly_prime(u: f64) -> f64 {
    -(u * u / 2.0 + u + 1.0)
}

/// Generator whose dual is `g(ln t + t0) - g(t0)` with
/// `g(u) = -u^3/6 - u^2/2 - u - 1`. The dual is decreasing and convex.
pub fn custom_c1(t0: f64) -> Result<DivergenceGenerator, DivergenceError> {
    if !t0.is_finite() {
        return Err(DivergenceError::InvalidParameter(format!(
            "t0 must be finite, got {t0}"
        )));
    }
    let g0 = c1_poly(t0);
    let dual = ScalarMap::from_parts(
        scalar(move |t: f64| c1_poly(t.ln() + t0) - g0),
        scalar(move |t: f64| c1_poly_prime(t.ln() + t0) / t),
        scalar(move |s: f64| c1_poly(s + t0) - g0),
        scalar(move |s: f64| c1_poly_prime(s + t0)),
        f64::INFINITY,
        f64::NEG_INFINITY,
        MonotonicityMap::single(Monotone::Decreasing, None),
        None,
    );
    // f(t) = t f*(1/t), f'(t) = f*(1/t) - g'(t0 - ln t)
    let primal_deriv = scalar(move |t: f64| {
        let u = t0 - t.ln();
        c1_poly(u) - g0 - c1_poly_prime(u)
    });
    let primal_mono = MonotonicityMap::from_derivative(&primal_deriv);
    let primal = ScalarMap::from_parts(
        scalar(move |t: f64| t * (c1_poly(t0 - t.ln()) - g0)),
        primal_deriv,
        scalar(move |s: f64| s.exp() * (c1_poly(t0 - s) - g0)),
        scalar(move |s: f64| s.exp() * (c1_poly(t0 - s) - g0 - c1_poly_prime(t0 - s))),
        0.0,
        f64::INFINITY,
        primal_mono,
        None,
    );
    Ok(
        DivergenceGenerator::from_maps("custom_c1", primal, dual, HomogeneityClass::unclassified())
            .with_params(params(&[("t0", t0)])),
    )
}

/// Generator whose dual is `ln^2 t + ln t`. That dual is only used on `(0, 1)`,
/// so the primal validity domain is `(1, inf)`.
pub fn custom_c2() -> DivergenceGenerator {
    let turn = (-0.5f64).exp();
    let root =
        |sign: f64| scalar(move |y: f64| ((-1.0 + sign * (1.0 + 4.0 * y).sqrt()) / 2.0).exp());
    let dual = ScalarMap::from_parts(
        scalar(|t: f64| {
            let l = t.ln();
            l * l + l
        }),
        scalar(|t: f64| (2.0 * t.ln() + 1.0) / t),
        scalar(|s: f64| s * s + s),
        scalar(|s: f64| 2.0 * s + 1.0),
        f64::INFINITY,
        f64::INFINITY,
        MonotonicityMap::new(vec![
            Branch::new(0.0, turn, Monotone::Decreasing).with_inverse(root(-1.0)),
            Branch::new(turn, f64::INFINITY, Monotone::Increasing).with_inverse(root(1.0)),
        ]),
        None,
    );
    let primal_deriv = scalar(|t: f64| {
        let l = t.ln();
        l * l + l - 1.0
    });
    let primal_mono = MonotonicityMap::from_derivative(&primal_deriv);
    let primal = ScalarMap::from_parts(
        scalar(|t: f64| {
            let l = t.ln();
            t * (l * l - l)
        }),
        primal_deriv,
        scalar(|s: f64| s.exp() * (s * s - s)),
        scalar(|s: f64| s.exp() * (s * s + s - 1.0)),
        0.0,
        f64::INFINITY,
        primal_mono,
        None,
    );
    DivergenceGenerator::from_maps("custom_c2", primal, dual, HomogeneityClass::unclassified())
        .with_validity(
            Interval {
                lo: 1.0,
                hi: f64::INFINITY,
            },
            "dual is convex only on (0, 1)",
        )
}
