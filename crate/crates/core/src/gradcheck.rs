//! Finite-difference helpers for verifying hand-written backward passes.

/// Central differences `(f(x + h e_i) - f(x - h e_i)) / 2h` for every
/// coordinate of `x`.
pub fn central_difference<T, F>(x: &[T], h: f64, mut f: F) -> Vec<f64>
where
    T: crate::tensor::Real,
    F: FnMut(&[T]) -> f64,
{
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = T::of(orig.as_f64() + h);
            let up = f(&probe);
            probe[i] = T::of(orig.as_f64() - h);
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Largest `|analytic - numeric| / max(|numeric|, 1e-8)` over all entries.
pub fn max_relative_error<T: crate::tensor::Real>(analytic: &[T], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "gradient lengths differ");
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a.as_f64() - n).abs() / n.abs().max(1e-8))
        .fold(0.0, f64::max)
}
