//! Uniform cubic B-spline basis on integer knots, centered at 0 with support (-2, 2).

/// Value of the trivariate basis at its own root, `b(0)^3 = 8/27`.
pub const B_ZERO: f64 = 8.0 / 27.0;

/// `b(t)`: `t^3/2 - t^2 + 2/3` on `|t| <= 1`, `(2 - |t|)^3 / 6` on `1 <= |t| < 2`, else 0.
#[inline]
pub fn bspline_b(t: f64) -> f64 {
    let u = t.abs();
    if u < 1.0 {
        (0.5 * u - 1.0) * u * u + 2.0 / 3.0
    } else if u < 2.0 {
        let v = 2.0 - u;
        v * v * v / 6.0
    } else {
        0.0
    }
}

/// `b'(t)`, odd and C¹.
#[inline]
pub fn bspline_b_d1(t: f64) -> f64 {
    let u = t.abs();
    let d = if u < 1.0 {
        (1.5 * u - 2.0) * u
    } else if u < 2.0 {
        let v = 2.0 - u;
        -0.5 * v * v
    } else {
        0.0
    };
    if t < 0.0 {
        -d
    } else {
        d
    }
}

/// `b''(t)`, even and C⁰.
#[inline]
pub fn bspline_b_d2(t: f64) -> f64 {
    let u = t.abs();
    if u < 1.0 {
        3.0 * u - 2.0
    } else if u < 2.0 {
        2.0 - u
    } else {
        0.0
    }
}

/// Trivariate basis `B(q) = b(x) b(y) b(z)` in local (grid-unit) coordinates.
#[inline]
pub fn tensor_b(local: [f64; 3]) -> f64 {
    bspline_b(local[0]) * bspline_b(local[1]) * bspline_b(local[2])
}

/// Value, gradient and Hessian (upper triangle, row major: xx, xy, xz, yy, yz, zz)
/// of `B` in local coordinates.
#[inline]
pub fn tensor_b_full(local: [f64; 3]) -> (f64, [f64; 3], [f64; 6]) {
    let v = local.map(bspline_b);
    let d = local.map(bspline_b_d1);
    let s = local.map(bspline_b_d2);
    let value = v[0] * v[1] * v[2];
    let grad = [d[0] * v[1] * v[2], v[0] * d[1] * v[2], v[0] * v[1] * d[2]];
    let hess = [
        s[0] * v[1] * v[2],
        d[0] * d[1] * v[2],
        d[0] * v[1] * d[2],
        v[0] * s[1] * v[2],
        v[0] * d[1] * d[2],
        v[0] * v[1] * s[2],
    ];
    (value, grad, hess)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// The four cubic pieces written out literally.
    fn piecewise(t: f64) -> f64 {
        if (1.0..=2.0).contains(&t) {
            -t.powi(3) / 6.0 + t * t - 2.0 * t + 4.0 / 3.0
        } else if (0.0..=1.0).contains(&t) {
            0.5 * t.powi(3) - t * t + 2.0 / 3.0
        } else if (-1.0..=0.0).contains(&t) {
            -0.5 * t.powi(3) - t * t + 2.0 / 3.0
        } else if (-2.0..=-1.0).contains(&t) {
            t.powi(3) / 6.0 + t * t + 2.0 * t + 4.0 / 3.0
        } else {
            0.0
        }
    }

    #[test]
    fn reference_values() {
        assert!((bspline_b(0.0) - 2.0 / 3.0).abs() < 1e-15);
        assert!((bspline_b(1.0) - 1.0 / 6.0).abs() < 1e-15);
        assert!((bspline_b(-1.0) - 1.0 / 6.0).abs() < 1e-15);
        assert_eq!(bspline_b(2.0), 0.0);
        assert_eq!(bspline_b(-2.0), 0.0);
        assert!((bspline_b(0.5) - 23.0 / 48.0).abs() < 1e-15);
        assert!((tensor_b([0.0; 3]) - B_ZERO).abs() < 1e-15);
        assert!((tensor_b([1.0, 0.0, 0.0]) - 2.0 / 27.0).abs() < 1e-15);
        assert_eq!(tensor_b([2.0, 0.0, 0.0]), 0.0);
    }

    #[test]
    fn matches_literal_pieces() {
        for i in -2500..=2500 {
            let t = i as f64 * 1e-3;
            assert!((bspline_b(t) - piecewise(t)).abs() < 1e-14, "t = {t}");
        }
    }

    #[test]
    fn derivative_values() {
        assert_eq!(bspline_b_d1(0.0), 0.0);
        assert!((bspline_b_d1(1.0) + 0.5).abs() < 1e-15);
        assert!((bspline_b_d1(-1.0) - 0.5).abs() < 1e-15);
        assert_eq!(bspline_b_d2(0.0), -2.0);
        assert!((bspline_b_d2(1.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let h = 1e-6;
        for i in -199..200 {
            let t = i as f64 * 0.01 + 0.0037;
            let fd1 = (bspline_b(t + h) - bspline_b(t - h)) / (2.0 * h);
            let fd2 = (bspline_b_d1(t + h) - bspline_b_d1(t - h)) / (2.0 * h);
            assert!((fd1 - bspline_b_d1(t)).abs() < 1e-8, "d1 at {t}");
            assert!((fd2 - bspline_b_d2(t)).abs() < 1e-8, "d2 at {t}");
        }
    }

    #[test]
    fn continuity_at_knots() {
        let e = 1e-12;
        for knot in [-2.0, -1.0, 0.0, 1.0, 2.0] {
            assert!((bspline_b(knot - e) - bspline_b(knot + e)).abs() < 1e-11);
            assert!((bspline_b_d1(knot - e) - bspline_b_d1(knot + e)).abs() < 1e-11);
            assert!((bspline_b_d2(knot - e) - bspline_b_d2(knot + e)).abs() < 1e-11);
        }
    }

    #[test]
    fn integer_shifts_sum_to_one() {
        for i in 0..100 {
            let t = i as f64 / 100.0;
            let sum: f64 = (-3..=3).map(|k| bspline_b(t - k as f64)).sum();
            assert!((sum - 1.0).abs() < 1e-15);
        }
    }
}
