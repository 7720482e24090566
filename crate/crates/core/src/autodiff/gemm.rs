//! Strided matrix product used by the dense and convolution kernels.

/// Strided view of a matrix inside a flat slice.
#[derive(Clone, Copy, Debug)]
pub(crate) struct MatRef<'a> {
    pub data: &'a [f64],
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
    pub row_stride: usize,
    pub col_stride: usize,
}

impl<'a> MatRef<'a> {
    /// Contiguous row-major matrix.
    pub fn dense(data: &'a [f64], rows: usize, cols: usize) -> Self {
        Self { data, offset: 0, rows, cols, row_stride: cols, col_stride: 1 }
    }

    pub fn t(self) -> Self {
        Self {
            rows: self.cols,
            cols: self.rows,
            row_stride: self.col_stride,
            col_stride: self.row_stride,
            ..self
        }
    }

    fn last_index(&self) -> usize {
        if self.rows == 0 || self.cols == 0 {
            return self.offset;
        }
        self.offset + (self.rows - 1) * self.row_stride + (self.cols - 1) * self.col_stride
    }
}

/// `c[offset..] += a · b`, where `c` is viewed with the given strides.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm_acc(
    a: MatRef<'_>,
    b: MatRef<'_>,
    c: &mut [f64],
    c_offset: usize,
    c_row_stride: usize,
    c_col_stride: usize,
) {
    assert_eq!(a.cols, b.rows, "gemm inner dimensions");
    let (m, k, n) = (a.rows, a.cols, b.cols);
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    assert!(a.last_index() < a.data.len(), "gemm: lhs view out of bounds");
    assert!(b.last_index() < b.data.len(), "gemm: rhs view out of bounds");
    let c_last = c_offset + (m - 1) * c_row_stride + (n - 1) * c_col_stride;
    assert!(c_last < c.len(), "gemm: output view out of bounds");
    // SAFETY: every index touched by dgemm lies within the bounds asserted above,
    // and `c` is exclusively borrowed so it cannot alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr().add(a.offset),
            a.row_stride as isize,
            a.col_stride as isize,
            b.data.as_ptr().add(b.offset),
            b.row_stride as isize,
            b.col_stride as isize,
            1.0,
            c.as_mut_ptr().add(c_offset),
            c_row_stride as isize,
            c_col_stride as isize,
        );
    }
}
