//! One-dimensional minimizers shared by the design optimizers.

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Golden-section search for a minimum of `f` on `[a, b]`, evaluating only
/// interior points. Non-finite values count as `+∞`.
pub fn golden_section<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, tol: f64) -> (f64, f64) {
    let mut g = |x: f64| {
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };
    let (mut a, mut b) = (a, b);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = g(c);
    let mut fd = g(d);
    while (b - a).abs() > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = g(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = g(d);
        }
    }
    if fc <= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Indices of finite grid points no larger than their neighbours;
/// non-finite neighbours count as `+∞`.
pub fn local_minima(values: &[f64]) -> Vec<usize> {
    let n = values.len();
    let below = |v: f64, k: usize| !values[k].is_finite() || v <= values[k];
    (0..n)
        .filter(|&i| {
            let v = values[i];
            v.is_finite() && (i == 0 || below(v, i - 1)) && (i + 1 == n || below(v, i + 1))
        })
        .collect()
}
