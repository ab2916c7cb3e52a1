//! Row-major matrix views and the three accumulate-into products the
//! transformer needs: `C += A B`, `C += A Bᵀ`, and `C += Aᵀ B`.
//!
//! Accumulation (rather than overwrite) lets the backward pass sum
//! gradient contributions from residual branches without temporaries.

use super::Real;

/// Borrowed row-major matrix.
#[derive(Debug, Clone, Copy)]
pub struct MatRef<'a, T> {
    pub data: &'a [T],
    pub rows: usize,
    pub cols: usize,
}

impl<'a, T: Real> MatRef<'a, T> {
    pub fn new(data: &'a [T], rows: usize, cols: usize) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        MatRef { data, rows, cols }
    }

    #[inline(always)]
    pub fn row(&self, r: usize) -> &'a [T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}

/// `c += a b` where `a` is m-by-k and `b` is k-by-n, all row-major.
///
/// i-k-j loop order keeps the inner loop streaming over contiguous rows
/// of `b` and `c`.
pub fn mul_into<T: Real>(c: &mut [T], a: MatRef<T>, b: MatRef<T>) {
    let (m, k, n) = (a.rows, a.cols, b.cols);
    debug_assert_eq!(b.rows, k);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let a_row = a.row(i);
        let c_row = &mut c[i * n..(i + 1) * n];
        for (p, &a_ip) in a_row.iter().enumerate().take(k) {
            let b_row = b.row(p);
            for j in 0..n {
                c_row[j] = c_row[j].add(a_ip.mul(b_row[j]));
            }
        }
    }
}

/// `c += a bᵀ` where `a` is m-by-k and `b` is n-by-k.
///
/// Both operands are walked along rows, so each output element is a dot
/// product of two contiguous slices.
pub fn mul_abt_into<T: Real>(c: &mut [T], a: MatRef<T>, b: MatRef<T>) {
    let (m, k, n) = (a.rows, a.cols, b.rows);
    debug_assert_eq!(b.cols, k);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let a_row = a.row(i);
        let c_row = &mut c[i * n..(i + 1) * n];
        for (j, c_ij) in c_row.iter_mut().enumerate().take(n) {
            let b_row = b.row(j);
            let mut acc = T::zero();
            for p in 0..k {
                acc = acc.add(a_row[p].mul(b_row[p]));
            }
            *c_ij = c_ij.add(acc);
        }
    }
}

/// `c += aᵀ b` where `a` is k-by-m and `b` is k-by-n.
///
/// This is the weight-gradient shape: activations transposed against
/// upstream gradients. The p-i-j order again streams rows of `b` and `c`.
pub fn mul_atb_into<T: Real>(c: &mut [T], a: MatRef<T>, b: MatRef<T>) {
    let (k, m, n) = (a.rows, a.cols, b.cols);
    debug_assert_eq!(b.rows, k);
    debug_assert_eq!(c.len(), m * n);
    for p in 0..k {
        let a_row = a.row(p);
        let b_row = b.row(p);
        for (i, &a_pi) in a_row.iter().enumerate().take(m) {
            let c_row = &mut c[i * n..(i + 1) * n];
            for j in 0..n {
                c_row[j] = c_row[j].add(a_pi.mul(b_row[j]));
            }
        }
    }
}

/// Adds a bias row to every row of a row-major matrix.
pub fn add_bias_rows<T: Real>(out: &mut [T], bias: &[T]) {
    let n = bias.len();
    debug_assert_eq!(out.len() % n, 0);
    for row in out.chunks_exact_mut(n) {
        for (o, &b) in row.iter_mut().zip(bias) {
            *o = o.add(b);
        }
    }
}

/// Sums the rows of `src` into `acc`; the bias-gradient reduction.
pub fn sum_rows_into<T: Real>(acc: &mut [T], src: &[T]) {
    let n = acc.len();
    debug_assert_eq!(src.len() % n, 0);
    for row in src.chunks_exact(n) {
        for (a, &s) in acc.iter_mut().zip(row) {
            *a = a.add(s);
        }
    }
}
