//! Dense matrix kernels shared by the forward and backward passes.

/// `c = a · b` for `a: [n, k]`, `b: [k, m]`.
pub fn matmul(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut c = vec![0.0; n * m];
    gemm(a, false, b, false, &mut c, n, k, m, 0.0);
    c
}

/// `c += op(a) · op(b)` where `op` optionally transposes. Shapes are given
/// after transposition: `op(a): [n, k]`, `op(b): [k, m]`, `c: [n, m]`.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    c: &mut [f64],
    n: usize,
    k: usize,
    m: usize,
    beta: f64,
) {
    debug_assert_eq!(a.len(), n * k);
    debug_assert_eq!(b.len(), k * m);
    debug_assert_eq!(c.len(), n * m);
    if n == 0 || m == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    let (rsa, csa) = if a_t { (1, n as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (m as isize, 1) };
    // SAFETY: slice lengths are checked above and the strides describe
    // row-major layouts of exactly those lengths.
    unsafe {
        matrixmultiply::dgemm(
            n,
            k,
            m,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            m as isize,
            1,
        );
    }
}
