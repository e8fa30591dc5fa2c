//! Finite-difference gradients.

/// Central difference `(f(x + h e_i) - f(x - h e_i)) / 2h` for every
/// coordinate.
pub fn central_gradient(f: &mut impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut xs = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = xs[i];
            xs[i] = orig + h;
            let fp = f(&xs);
            xs[i] = orig - h;
            let fm = f(&xs);
            xs[i] = orig;
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

/// One Richardson step on central differences: `(4 g(h/2) - g(h)) / 3`,
/// which cancels the `h²` error term.
pub fn richardson_gradient(f: &mut impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let coarse = central_gradient(f, x, h);
    let fine = central_gradient(f, x, h / 2.0);
    fine.iter()
        .zip(&coarse)
        .map(|(a, b)| (4.0 * a - b) / 3.0)
        .collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}
