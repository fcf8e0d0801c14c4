//! Central finite differences used to cross-check analytic derivatives and
//! to back Lyapunov functions given only as expressions.

/// Central-difference gradient of `f` at `x`, step 1e-5 * (1 + |x_i|) per
/// coordinate.
pub fn gradient(f: &dyn Fn(&[f64]) -> f64, x: &[f64], out: &mut [f64]) {
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        let h = 1e-5 * (1.0 + x[i].abs());
        probe[i] = x[i] + h;
        let up = f(&probe);
        probe[i] = x[i] - h;
        let down = f(&probe);
        probe[i] = x[i];
        out[i] = (up - down) / (2.0 * h);
    }
}

/// Symmetric central-difference Hessian, step 1e-4 * (1 + |x_i|); entries
/// with i <= j are computed and mirrored so the result is exactly symmetric.
pub fn hessian(f: &dyn Fn(&[f64]) -> f64, x: &[f64], out: &mut [f64]) {
    let m = x.len();
    let mut probe = x.to_vec();
    let center = f(x);
    for i in 0..m {
        let hi = 1e-4 * (1.0 + x[i].abs());
        for j in i..m {
            let hj = 1e-4 * (1.0 + x[j].abs());
            let val = if i == j {
                probe[i] = x[i] + hi;
                let up = f(&probe);
                probe[i] = x[i] - hi;
                let down = f(&probe);
                probe[i] = x[i];
                (up - 2.0 * center + down) / (hi * hi)
            } else {
                probe[i] = x[i] + hi;
                probe[j] = x[j] + hj;
                let pp = f(&probe);
                probe[j] = x[j] - hj;
                let pm = f(&probe);
                probe[i] = x[i] - hi;
                let mm = f(&probe);
                probe[j] = x[j] + hj;
                let mp = f(&probe);
                probe[i] = x[i];
                probe[j] = x[j];
                (pp - pm - mp + mm) / (4.0 * hi * hj)
            };
            out[i * m + j] = val;
            out[j * m + i] = val;
        }
    }
}

/// Largest relative mismatch `|a-b| / max(1, |a|, |b|)` over two slices.
pub fn max_rel_mismatch(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y).abs() / x.abs().max(y.abs()).max(1.0))
        .fold(0.0, f64::max)
}
