use std::f64::consts::E;

use super::DivergenceError;

/// Principal branch of the Lambert W function: the `w >= -1` solving
/// `w * exp(w) = t`, defined for `t >= -1/e`.
pub fn lambert_w(t: f64) -> Result<f64, DivergenceError> {
    let branch_point = -1.0 / E;
    if t.is_nan() || t < branch_point - 1e-15 {
        return Err(DivergenceError::Domain(format!(
            "lambert_w requires t >= -1/e, got {t}"
        )));
    }
    if t == 0.0 {
        return Ok(0.0);
    }
    if t == f64::INFINITY {
        return Ok(f64::INFINITY);
    }
    if t <= branch_point {
        return Ok(-1.0);
    }

    let mut w = if t < -0.25 {
        // series about the branch point
        let p = (2.0 * (E * t + 1.0)).sqrt();
        -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p * p * p
    } else if t < 3.0 {
        let l = t.ln_1p();
        l * (1.0 - l.ln_1p() / (2.0 + l))
    } else {
        let l = t.ln();
        l - l.ln()
    };

    // Halley iteration
    for _ in 0..64 {
        let ew = w.exp();
        let resid = w * ew - t;
        let wp1 = w + 1.0;
        if wp1.abs() < 1e-300 {
            break;
        }
        let denom = ew * wp1 - (w + 2.0) * resid / (2.0 * wp1);
        let step = resid / denom;
        w -= step;
        if step.abs() <= 1e-16 * (1.0 + w.abs()) {
            break;
        }
    }
    Ok(w)
}

/// Inverse of `t ln t` on its increasing branch `[1/e, inf)`: `t = exp(W(y))`,
/// which equals `y / W(y)` for `y != 0`.
pub fn xlogx_inverse(y: f64) -> Option<f64> {
    lambert_w(y).ok().map(f64::exp)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent oracle: fixed-point iteration w = ln(t) - ln(w) for t > e.
    fn fixed_point_w(t: f64) -> f64 {
        let mut w = 1.0;
        for _ in 0..10_000 {
            let next = t.ln() - f64::ln(w);
            if (next - w).abs() < 1e-15 {
                return next;
            }
            w = next;
        }
        w
    }

    #[test]
    fn known_values() {
        assert_eq!(lambert_w(0.0).unwrap(), 0.0);
        assert!((lambert_w(E).unwrap() - 1.0).abs() < 1e-14);
        assert!((lambert_w(-1.0 / E).unwrap() + 1.0).abs() < 1e-7);
        let w10 = fixed_point_w(10.0);
        assert!((w10 - 1.745_528_002_740_699).abs() < 1e-12);
        assert!((lambert_w(10.0).unwrap() - w10).abs() < 1e-12);
    }

    #[test]
    fn rejects_below_branch_point() {
        assert!(lambert_w(-0.5).is_err());
        assert!(lambert_w(f64::NAN).is_err());
    }

    #[test]
    fn satisfies_defining_equation() {
        for &t in &[
            -0.36, -0.3, -0.1, -1e-6, 1e-8, 0.5, 1.0, 7.0, 1e3, 1e10, 1e200,
        ] {
            let w = lambert_w(t).unwrap();
            let back = w * w.exp();
            assert!(
                (back - t).abs() <= 1e-12 * t.abs().max(1e-300) + 1e-15,
                "t={t} w={w}"
            );
        }
    }

    #[test]
    fn xlogx_inverse_round_trip() {
        for &t in &[0.4, 1.0, 2.0, 10.0, 123.4] {
            let y = t * f64::ln(t);
            let back = xlogx_inverse(y).unwrap();
            assert!((back - t).abs() < 1e-12 * t, "{t} -> {back}");
        }
    }
}
