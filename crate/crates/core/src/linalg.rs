//! Small dense-vector helpers. All sums run left to right.

use std::f64::consts::PI;

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm_sq(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    norm_sq(a).sqrt()
}

#[inline]
pub fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Bitwise equality of two vectors.
#[inline]
pub fn bits_eq(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

/// ln of the volume of the d-dimensional unit ball, `π^{d/2} / Γ(d/2 + 1)`.
pub fn ln_unit_ball_volume(d: usize) -> f64 {
    0.5 * d as f64 * PI.ln() - ln_gamma_half_integer_plus_one(d)
}

/// ln Γ(d/2 + 1) for a nonnegative integer d, by the recursion Γ(z+1) = zΓ(z).
fn ln_gamma_half_integer_plus_one(d: usize) -> f64 {
    let mut acc = if d.is_multiple_of(2) { 0.0 } else { 0.5 * PI.ln() };
    let mut z = if d.is_multiple_of(2) { 1.0 } else { 0.5 };
    let target = d as f64 / 2.0 + 1.0;
    while z + 1.0 <= target {
        acc += z.ln();
        z += 1.0;
    }
    acc
}

/// ln of the density at `u` of a Gaussian with mean `m` and covariance `2η·I`.
#[inline]
pub fn ln_step_density(u: &[f64], m: &[f64], eta: f64) -> f64 {
    let d = u.len() as f64;
    -0.5 * d * (4.0 * PI * eta).ln() - dist_sq(u, m) / (4.0 * eta)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_ball_volumes() {
        let known = [
            (1, 2.0),
            (2, PI),
            (3, 4.0 * PI / 3.0),
            (4, PI * PI / 2.0),
            (5, 8.0 * PI * PI / 15.0),
        ];
        for (d, v) in known {
            let got = ln_unit_ball_volume(d).exp();
            assert!((got - v).abs() < 1e-12 * v, "d={d}: {got} vs {v}");
        }
    }

    #[test]
    fn density_normalizes_in_one_dimension() {
        let eta = 0.3;
        let h = 1e-3;
        let total: f64 = (-10_000..=10_000)
            .map(|i| ln_step_density(&[i as f64 * h], &[0.2], eta).exp() * h)
            .sum();
        assert!((total - 1.0).abs() < 1e-9, "{total}");
    }
}
