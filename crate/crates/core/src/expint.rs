//! Exponential integrals against piecewise-linear data.
//!
//! With `z = h * lambda >= 0`,
//! `int_0^h exp(-lambda (h - s)) f(s) ds = h * (w_left * f(0) + w_right * f(h))`
//! holds exactly for linear `f`. The weights are the usual phi-functions of
//! exponential integrators evaluated at `-z`.

const SERIES_CUTOFF: f64 = 0.5;
const SERIES_TERMS: usize = 24;

/// `phi_1(-z) = (1 - e^{-z}) / z`.
pub fn phi1(z: f64) -> f64 {
    if z < SERIES_CUTOFF {
        series(z, 1)
    } else {
        -(-z).exp_m1() / z
    }
}

/// `phi_2(-z) = (e^{-z} - 1 + z) / z^2`.
pub fn phi2(z: f64) -> f64 {
    if z < SERIES_CUTOFF {
        series(z, 2)
    } else {
        ((-z).exp_m1() + z) / (z * z)
    }
}

/// `sum_k (-z)^k / (k + shift)!`
fn series(z: f64, shift: u32) -> f64 {
    let mut fact: f64 = (1..=shift).map(f64::from).product();
    let mut pow = 1.0;
    let mut sum = 1.0 / fact;
    for k in 1..SERIES_TERMS as u32 {
        fact *= f64::from(k + shift);
        pow *= -z;
        sum += pow / fact;
    }
    sum
}

/// Weights `(w_left, w_right)` of the exact exponential trapezoid.
pub fn linear_weights(z: f64) -> (f64, f64) {
    let p1 = phi1(z);
    let p2 = phi2(z);
    (p1 - p2, p2)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad(z: f64) -> (f64, f64) {
        // composite Simpson on int_0^1 e^{-z(1-s)} (1-s) ds and ... s ds
        let n = 20_000;
        let h = 1.0 / n as f64;
        let mut a = 0.0;
        let mut b = 0.0;
        for i in 0..=n {
            let s = i as f64 * h;
            let w = if i == 0 || i == n {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            let e = (-z * (1.0 - s)).exp();
            a += w * e * (1.0 - s);
            b += w * e * s;
        }
        (a * h / 3.0, b * h / 3.0)
    }

    #[test]
    fn weights_match_quadrature() {
        for z in [0.0, 1e-8, 1e-3, 0.2, 0.49, 0.5, 0.51, 1.0, 7.0, 60.0] {
            let (l, r) = linear_weights(z);
            let (ql, qr) = quad(z);
            assert!((l - ql).abs() < 1e-12, "z={z}: {l} vs {ql}");
            assert!((r - qr).abs() < 1e-12, "z={z}: {r} vs {qr}");
        }
    }

    #[test]
    fn limits() {
        assert_eq!(phi1(0.0), 1.0);
        assert_eq!(phi2(0.0), 0.5);
        // large z: phi1 ~ 1/z, phi2 ~ 1/z
        let z = 1e6;
        assert!((phi1(z) * z - 1.0).abs() < 1e-12);
        assert!((phi2(z) * z - 1.0).abs() < 1e-5);
    }
}
