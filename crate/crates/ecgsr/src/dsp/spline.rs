//! Natural cubic spline interpolation on uniformly spaced knots.

/// Second derivatives of the natural cubic spline through `y` at integer
/// knots (M[0] = M[n-1] = 0), via the Thomas tridiagonal solve.
fn second_derivatives(y: &[f64]) -> Vec<f64> {
    let n = y.len();
    let mut m = vec![0.0; n];
    if n < 3 {
        return m;
    }
    let interior = n - 2;
    let mut diag = vec![4.0; interior];
    let mut rhs: Vec<f64> = (1..n - 1).map(|i| 6.0 * (y[i + 1] - 2.0 * y[i] + y[i - 1])).collect();
    for i in 1..interior {
        let w = 1.0 / diag[i - 1];
        diag[i] -= w;
        rhs[i] -= w * rhs[i - 1];
    }
    m[interior] = rhs[interior - 1] / diag[interior - 1];
    for i in (1..interior).rev() {
        m[i] = (rhs[i - 1] - m[i + 1]) / diag[i - 1];
    }
    m
}

/// Evaluates the spline at `u` in knot units. Points beyond the knot range
/// extrapolate with the nearest segment's cubic.
fn eval(y: &[f64], m: &[f64], u: f64) -> f64 {
    let n = y.len();
    let i = (u.floor() as isize).clamp(0, n as isize - 2) as usize;
    let s = u - i as f64;
    let a = 1.0 - s;
    let b = s;
    a * y[i] + b * y[i + 1] + ((a * a * a - a) * m[i] + (b * b * b - b) * m[i + 1]) / 6.0
}

/// Natural cubic spline through the samples of `x`, evaluated at
/// `x.len() * factor` uniformly spaced points covering the same time span
/// (output point `j` sits at input coordinate `j / factor`).
pub fn upsample(x: &[f64], factor: usize) -> Vec<f64> {
    let m = second_derivatives(x);
    let out_len = x.len() * factor;
    (0..out_len).map(|j| eval(x, &m, j as f64 / factor as f64)).collect()
}
