//! Chebyshev expansion of `exp(−iHt)` and the Bessel coefficients it needs.

use num_complex::Complex64;

use super::HermitianOperator;
use crate::error::{Error, Result};

/// `J_0(z) … J_kmax(z)` for `z ≥ 0` by Miller's backward recurrence,
/// normalized with `J_0 + 2 Σ J_{2m} = 1`.
pub fn bessel_j_sequence(z: f64, kmax: usize) -> Vec<f64> {
    let mut out = vec![0.0; kmax + 1];
    if z == 0.0 {
        out[0] = 1.0;
        return out;
    }
    let start = kmax.max(z.ceil() as usize) + 20 + (z.sqrt() * 10.0) as usize;
    let mut next = 0.0f64;
    let mut cur = 1e-300f64;
    let mut sum = 0.0f64;
    let mut vals = vec![0.0f64; start + 1];
    vals[start] = cur;
    for k in (1..=start).rev() {
        let prev = 2.0 * k as f64 / z * cur - next;
        next = cur;
        cur = prev;
        vals[k - 1] = cur;
        if cur.abs() > 1e250 {
            for v in vals[k - 1..].iter_mut() {
                *v *= 1e-250;
            }
            cur *= 1e-250;
            next *= 1e-250;
        }
    }
    for (k, v) in vals.iter().enumerate() {
        if k == 0 {
            sum += v;
        } else if k % 2 == 0 {
            sum += 2.0 * v;
        }
    }
    for k in 0..=kmax {
        out[k] = vals[k] / sum;
    }
    out
}

/// Number of Chebyshev terms for argument `z` at double precision.
fn term_count(z: f64) -> usize {
    (z + 10.0 * z.cbrt() + 25.0).ceil() as usize
}

/// Applies `exp(−iH dt)` to `psi` in place.
pub fn chebyshev_step<H: HermitianOperator + ?Sized>(
    h: &H,
    bounds: (f64, f64),
    psi: &mut [Complex64],
    dt: f64,
) {
    let n = h.dim();
    let (lo, hi) = bounds;
    let centre = 0.5 * (hi + lo);
    // A small margin keeps the scaled spectrum strictly inside [−1, 1].
    let half = (0.5 * (hi - lo)).max(1e-12) * 1.01;
    let z = half * dt.abs();
    let kmax = term_count(z);
    let jk = bessel_j_sequence(z, kmax);
    let sign = dt.signum();

    let scaled = |x: &[Complex64], y: &mut [Complex64]| {
        h.apply(x, y);
        for (yi, xi) in y.iter_mut().zip(x) {
            *yi = (*yi - xi * centre) / half;
        }
    };

    let mut acc: Vec<Complex64> = psi.iter().map(|v| v * jk[0]).collect();
    let mut t_prev = psi.to_vec();
    let mut t_cur = vec![Complex64::new(0.0, 0.0); n];
    scaled(psi, &mut t_cur);
    // (−i)^k, with the sign of dt folded in.
    let minus_i = Complex64::new(0.0, -sign);
    let mut phase = minus_i;
    let mut scratch = vec![Complex64::new(0.0, 0.0); n];
    for k in 1..=kmax {
        let c = phase * (2.0 * jk[k]);
        for (a, t) in acc.iter_mut().zip(&t_cur) {
            *a += t * c;
        }
        if k == kmax || (k as f64 > z && jk[k].abs() < 1e-17) {
            break;
        }
        scaled(&t_cur, &mut scratch);
        for i in 0..n {
            let next = scratch[i] * 2.0 - t_prev[i];
            t_prev[i] = t_cur[i];
            t_cur[i] = next;
        }
        phase *= minus_i;
    }
    let global = Complex64::from_polar(1.0, -centre * dt);
    for (p, a) in psi.iter_mut().zip(acc) {
        *p = a * global;
    }
}

pub fn norm(psi: &[Complex64]) -> f64 {
    psi.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
}

/// Propagates over `t_total` in steps no longer than `max_dt`, checking the
/// norm after every step against `norm_tol`.
pub fn propagate<H: HermitianOperator + ?Sized>(
    h: &H,
    psi: &mut [Complex64],
    t_total: f64,
    max_dt: f64,
    norm_tol: f64,
) -> Result<()> {
    if t_total == 0.0 {
        return Ok(());
    }
    let bounds = h.spectral_bounds();
    let steps = (t_total.abs() / max_dt).ceil().max(1.0) as usize;
    let dt = t_total / steps as f64;
    let n0 = norm(psi);
    for _ in 0..steps {
        chebyshev_step(h, bounds, psi, dt);
    }
    let drift = (norm(psi) - n0).abs();
    if drift > norm_tol * n0.max(1.0) {
        return Err(Error::StepFailure(format!(
            "norm drift {drift:.3e} exceeds {norm_tol:.1e}"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::CsrMatrix;

    #[test]
    fn bessel_values() {
        // Abramowitz & Stegun table values.
        let j = bessel_j_sequence(1.0, 3);
        assert!((j[0] - 0.765_197_686_557_966_6).abs() < 1e-14);
        assert!((j[1] - 0.440_050_585_744_933_5).abs() < 1e-14);
        assert!((j[2] - 0.114_903_484_931_900_5).abs() < 1e-14);
        let j = bessel_j_sequence(10.0, 12);
        assert!((j[0] + 0.245_935_764_451_348_3).abs() < 1e-13);
        assert!((j[10] - 0.207_486_106_633_358_9).abs() < 1e-13);
        let j = bessel_j_sequence(300.0, 400);
        let s: f64 = j[0] + 2.0 * j.iter().skip(2).step_by(2).sum::<f64>();
        assert!((s - 1.0).abs() < 1e-12);
        assert!(j[400].abs() < 1e-20);
    }

    #[test]
    fn two_level_rabi() {
        // H = σx, exp(−iσx t)|0⟩ = cos t |0⟩ − i sin t |1⟩.
        let h = CsrMatrix::from_triplets(2, vec![(0, 1, 1.0), (1, 0, 1.0)]);
        for t in [0.3, 2.0, 57.0] {
            let mut psi = vec![Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)];
            propagate(&h, &mut psi, t, 10.0, 1e-12).unwrap();
            assert!((psi[0] - Complex64::new(t.cos(), 0.0)).norm() < 1e-12);
            assert!((psi[1] - Complex64::new(0.0, -t.sin())).norm() < 1e-12);
        }
    }

    #[test]
    fn backwards_in_time_undoes_forwards() {
        let h = CsrMatrix::from_triplets(
            3,
            vec![
                (0, 0, 1.0),
                (0, 1, 0.5),
                (1, 0, 0.5),
                (1, 2, -2.0),
                (2, 1, -2.0),
                (2, 2, 3.0),
            ],
        );
        let start = vec![
            Complex64::new(0.6, 0.0),
            Complex64::new(0.0, 0.8),
            Complex64::new(0.0, 0.0),
        ];
        let mut psi = start.clone();
        propagate(&h, &mut psi, 13.7, 2.0, 1e-12).unwrap();
        propagate(&h, &mut psi, -13.7, 2.0, 1e-12).unwrap();
        for (a, b) in psi.iter().zip(&start) {
            assert!((a - b).norm() < 1e-12);
        }
    }
}
