//! Safe wrapper over `matrixmultiply::dgemm` for strided row-major views.

/// A strided matrix view: `rows × cols` with element `(i, j)` at
/// `offset + i * row_stride + j * col_stride`.
#[derive(Debug, Clone, Copy)]
pub struct Layout {
    pub rows: usize,
    pub cols: usize,
    pub row_stride: usize,
    pub col_stride: usize,
}

impl Layout {
    pub fn row_major(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            row_stride: cols,
            col_stride: 1,
        }
    }

    pub fn transposed(self) -> Self {
        Self {
            rows: self.cols,
            cols: self.rows,
            row_stride: self.col_stride,
            col_stride: self.row_stride,
        }
    }

    fn max_index(&self) -> usize {
        if self.rows == 0 || self.cols == 0 {
            0
        } else {
            (self.rows - 1) * self.row_stride + (self.cols - 1) * self.col_stride + 1
        }
    }
}

/// `c = alpha * a · b + beta * c`.
///
/// Panics if the views are inconsistent or out of bounds.
pub fn gemm(
    alpha: f64,
    a: &[f64],
    la: Layout,
    b: &[f64],
    lb: Layout,
    beta: f64,
    c: &mut [f64],
    lc: Layout,
) {
    assert_eq!(la.cols, lb.rows, "inner dimensions differ");
    assert_eq!(la.rows, lc.rows, "row counts differ");
    assert_eq!(lb.cols, lc.cols, "column counts differ");
    assert!(la.max_index() <= a.len(), "a view out of bounds");
    assert!(lb.max_index() <= b.len(), "b view out of bounds");
    assert!(lc.max_index() <= c.len(), "c view out of bounds");
    if lc.rows == 0 || lc.cols == 0 {
        return;
    }
    if la.cols == 0 {
        for i in 0..lc.rows {
            for j in 0..lc.cols {
                let v = &mut c[i * lc.row_stride + j * lc.col_stride];
                *v *= beta;
            }
        }
        return;
    }
    // SAFETY: every view was bounds-checked above; `c` is exclusively
    // borrowed and cannot alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            la.rows,
            la.cols,
            lb.cols,
            alpha,
            a.as_ptr(),
            la.row_stride as isize,
            la.col_stride as isize,
            b.as_ptr(),
            lb.row_stride as isize,
            lb.col_stride as isize,
            beta,
            c.as_mut_ptr(),
            lc.row_stride as isize,
            lc.col_stride as isize,
        );
    }
}
