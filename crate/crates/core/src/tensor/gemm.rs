use super::Float;

/// How a contiguous row-major buffer is read as a matrix operand.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum MatLayout {
    /// Stored as `rows x cols`.
    Normal,
    /// Stored as `cols x rows`; read transposed.
    Transposed,
}

/// `c (+)= a * b` for contiguous operands, `a` read as `m x k`, `b` as
/// `k x n`, `c` written as row-major `m x n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<T: Float>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    la: MatLayout,
    b: &[T],
    lb: MatLayout,
    c: &mut [T],
    accumulate: bool,
) {
    assert_eq!(a.len(), m * k, "gemm: lhs length");
    assert_eq!(b.len(), k * n, "gemm: rhs length");
    assert_eq!(c.len(), m * n, "gemm: output length");
    if m == 0 || n == 0 {
        return;
    }
    let beta = if accumulate { T::one() } else { T::zero() };
    if k == 0 {
        if !accumulate {
            c.fill(T::zero());
        }
        return;
    }
    let (rsa, csa) = match la {
        MatLayout::Normal => (k as isize, 1),
        MatLayout::Transposed => (1, m as isize),
    };
    let (rsb, csb) = match lb {
        MatLayout::Normal => (n as isize, 1),
        MatLayout::Transposed => (1, k as isize),
    };
    // SAFETY: lengths are asserted above and `c` is a distinct &mut borrow.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
