//! Strided matrix views over slices and a checked GEMM wrapper.

/// Read-only strided matrix view.
#[derive(Clone, Copy)]
pub(crate) struct View<'a> {
    data: &'a [f64],
    off: usize,
    rows: usize,
    cols: usize,
    rs: usize,
    cs: usize,
}

impl<'a> View<'a> {
    pub fn rm(data: &'a [f64], rows: usize, cols: usize) -> Self {
        View {
            data,
            off: 0,
            rows,
            cols,
            rs: cols,
            cs: 1,
        }
    }

    pub fn strided(data: &'a [f64], off: usize, rows: usize, cols: usize, rs: usize) -> Self {
        View {
            data,
            off,
            rows,
            cols,
            rs,
            cs: 1,
        }
    }

    pub fn t(self) -> Self {
        View {
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
            ..self
        }
    }

    fn check(&self, len: usize) {
        if self.rows > 0 && self.cols > 0 {
            let last = self.off + (self.rows - 1) * self.rs + (self.cols - 1) * self.cs;
            assert!(last < len, "matrix view out of bounds");
        }
    }
}

/// Output location: `rows × cols` block of `data` starting at `off` with
/// row stride `rs` and unit column stride.
pub(crate) struct Out<'a> {
    pub data: &'a mut [f64],
    pub off: usize,
    pub rs: usize,
}

impl<'a> Out<'a> {
    pub fn rm(data: &'a mut [f64], cols: usize) -> Self {
        Out { data, off: 0, rs: cols }
    }
}

/// `C = A·B + beta·C`. With `beta == 0` the previous contents of C are
/// ignored.
pub(crate) fn gemm(a: View<'_>, b: View<'_>, beta: f64, c: Out<'_>) {
    assert_eq!(a.cols, b.rows, "inner dimensions differ");
    let (m, k, n) = (a.rows, a.cols, b.cols);
    if m == 0 || n == 0 {
        return;
    }
    a.check(a.data.len());
    b.check(b.data.len());
    let last = c.off + (m - 1) * c.rs + (n - 1);
    assert!(last < c.data.len(), "output view out of bounds");
    if k == 0 {
        for i in 0..m {
            for v in &mut c.data[c.off + i * c.rs..c.off + i * c.rs + n] {
                *v *= beta;
            }
        }
        return;
    }
    // SAFETY: all three views were bounds-checked above and `c` is borrowed
    // mutably, so it cannot alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr().add(a.off),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr().add(b.off),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.data.as_mut_ptr().add(c.off),
            c.rs as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_with_transposes() {
        // A 2x3, B 3x2
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [7.0, 8.0, 9.0, 10.0, 11.0, 12.0];
        let mut c = [0.0; 4];
        gemm(View::rm(&a, 2, 3), View::rm(&b, 3, 2), 0.0, Out::rm(&mut c, 2));
        assert_eq!(c, [58.0, 64.0, 139.0, 154.0]);
        // Aᵀ·A is 3x3
        let mut d = [0.0; 9];
        gemm(View::rm(&a, 2, 3).t(), View::rm(&a, 2, 3), 0.0, Out::rm(&mut d, 3));
        assert_eq!(d, [17.0, 22.0, 27.0, 22.0, 29.0, 36.0, 27.0, 36.0, 45.0]);
        // accumulate
        gemm(View::rm(&a, 2, 3), View::rm(&b, 3, 2), 1.0, Out::rm(&mut c, 2));
        assert_eq!(c, [116.0, 128.0, 278.0, 308.0]);
    }
}
