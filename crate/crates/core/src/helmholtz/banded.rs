//! Banded LU factorization with partial pivoting for complex matrices.
//!
//! Row-major band storage: row `i` keeps columns `i - kl ..= i + kl + ku`,
//! the extra `kl` super-diagonals hold the fill produced by row swaps.

use num_complex::Complex64;

use crate::error::{FwiError, Result};

#[derive(Debug, Clone)]
pub struct BandedLu {
    n: usize,
    kl: usize,
    ku: usize,
    ld: usize,
    data: Vec<Complex64>,
    pivots: Vec<usize>,
    /// `position[node]` is the row of `node` in the reordered system.
    position: Vec<usize>,
}

impl BandedLu {
    /// Factors the matrix given by `(row, col, value)` triplets after
    /// renumbering unknowns with `order` (`order[k]` = original index of the
    /// k-th unknown). Duplicate triplets are summed.
    pub fn factor(n: usize, entries: &[(usize, usize, Complex64)], order: &[usize]) -> Result<Self> {
        if order.len() != n {
            return Err(FwiError::ShapeMismatch {
                expected: n,
                got: order.len(),
            });
        }
        let mut position = vec![usize::MAX; n];
        for (k, &i) in order.iter().enumerate() {
            position[i] = k;
        }
        let mut kl = 0;
        let mut ku = 0;
        let mut max_abs = 0.0f64;
        for &(r, c, v) in entries {
            let (pr, pc) = (position[r], position[c]);
            if pr > pc {
                kl = kl.max(pr - pc);
            } else {
                ku = ku.max(pc - pr);
            }
            max_abs = max_abs.max(v.norm());
        }
        let ld = 2 * kl + ku + 1;
        let mut lu = BandedLu {
            n,
            kl,
            ku,
            ld,
            data: vec![Complex64::new(0.0, 0.0); n * ld],
            pivots: vec![0; n],
            position,
        };
        for &(r, c, v) in entries {
            let (pr, pc) = (lu.position[r], lu.position[c]);
            let at = lu.offset(pr, pc);
            lu.data[at] += v;
        }
        lu.eliminate(1e-14 * max_abs.max(f64::MIN_POSITIVE))?;
        Ok(lu)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Lower and upper bandwidths of the reordered matrix.
    pub fn bandwidths(&self) -> (usize, usize) {
        (self.kl, self.ku)
    }

    #[inline]
    fn offset(&self, row: usize, col: usize) -> usize {
        row * self.ld + (col + self.kl - row)
    }

    fn eliminate(&mut self, tiny: f64) -> Result<()> {
        let (n, kl, ku, ld) = (self.n, self.kl, self.ku, self.ld);
        for j in 0..n {
            let last_row = (j + kl).min(n - 1);
            let last_col = (j + kl + ku).min(n - 1);
            let mut p = j;
            let mut best = self.data[self.offset(j, j)].norm();
            for i in j + 1..=last_row {
                let v = self.data[self.offset(i, j)].norm();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if !(best > tiny) {
                return Err(FwiError::SolverBreakdown {
                    pivot: j,
                    magnitude: best,
                });
            }
            self.pivots[j] = p;
            let width = last_col - j + 1;
            if p != j {
                let a = self.offset(j, j);
                let b = self.offset(p, j);
                let (head, tail) = self.data.split_at_mut(b);
                head[a..a + width].swap_with_slice(&mut tail[..width]);
            }
            let pivot_start = self.offset(j, j);
            let inv = 1.0 / self.data[pivot_start];
            for i in j + 1..=last_row {
                let at = self.offset(i, j);
                let l = self.data[at] * inv;
                self.data[at] = l;
                if l.re == 0.0 && l.im == 0.0 {
                    continue;
                }
                // rows j < i never overlap in storage
                let (head, tail) = self.data.split_at_mut(i * ld);
                let src = &head[pivot_start + 1..pivot_start + width];
                let dst_start = at - i * ld + 1;
                let dst = &mut tail[dst_start..dst_start + width - 1];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d -= l * s;
                }
            }
        }
        Ok(())
    }

    /// Solves `A x = b` in the original numbering.
    pub fn solve(&self, b: &[Complex64]) -> Vec<Complex64> {
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        let mut y = vec![Complex64::new(0.0, 0.0); n];
        for (i, &v) in b.iter().enumerate() {
            y[self.position[i]] = v;
        }
        for j in 0..n {
            let p = self.pivots[j];
            if p != j {
                y.swap(j, p);
            }
            let yj = y[j];
            if yj.re == 0.0 && yj.im == 0.0 {
                continue;
            }
            for i in j + 1..=(j + kl).min(n - 1) {
                y[i] -= self.data[self.offset(i, j)] * yj;
            }
        }
        for i in (0..n).rev() {
            let last = (i + kl + ku).min(n - 1);
            let start = self.offset(i, i);
            let row = &self.data[start..start + (last - i) + 1];
            let mut s = y[i];
            for (u, yc) in row[1..].iter().zip(&y[i + 1..=last]) {
                s -= u * yc;
            }
            y[i] = s / row[0];
        }
        let mut x = vec![Complex64::new(0.0, 0.0); n];
        for (i, xi) in x.iter_mut().enumerate() {
            *xi = y[self.position[i]];
        }
        x
    }
}
