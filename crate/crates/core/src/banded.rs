//! Banded matrices and LU factorization without pivoting.
//!
//! Only used for column diagonally dominant M-matrices, for which the
//! factorization is stable without row exchanges.

use crate::error::{Error, Result};

/// Square matrix with `bandwidth` sub- and super-diagonals.
#[derive(Debug, Clone, PartialEq)]
pub struct BandedMatrix {
    n: usize,
    bandwidth: usize,
    data: Vec<f64>,
}

impl BandedMatrix {
    pub fn zeros(n: usize, bandwidth: usize) -> Self {
        Self { n, bandwidth, data: vec![0.0; n * (2 * bandwidth + 1)] }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    fn index(&self, i: usize, j: usize) -> usize {
        debug_assert!(i.abs_diff(j) <= self.bandwidth, "({i}, {j}) outside the band");
        i * (2 * self.bandwidth + 1) + (j + self.bandwidth - i)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i.abs_diff(j) > self.bandwidth {
            0.0
        } else {
            self.data[self.index(i, j)]
        }
    }

    pub fn add(&mut self, i: usize, j: usize, value: f64) {
        let k = self.index(i, j);
        self.data[k] += value;
    }

    fn columns(&self, i: usize) -> std::ops::Range<usize> {
        i.saturating_sub(self.bandwidth)..(i + self.bandwidth + 1).min(self.n)
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.columns(i).map(|j| self.get(i, j) * x[j]).sum())
            .collect()
    }

    /// In-place Doolittle factorization.
    pub fn factor(mut self) -> Result<BandedLu> {
        let (n, b) = (self.n, self.bandwidth);
        for k in 0..n {
            let pivot = self.data[self.index(k, k)];
            if !(pivot.abs() > f64::MIN_POSITIVE) || !pivot.is_finite() {
                return Err(Error::LinearSolve(k));
            }
            let last = (k + b).min(n - 1);
            for i in k + 1..=last {
                let ik = self.index(i, k);
                let l = self.data[ik] / pivot;
                self.data[ik] = l;
                if l == 0.0 {
                    continue;
                }
                for j in k + 1..=last {
                    let kj = self.data[self.index(k, j)];
                    let ij = self.index(i, j);
                    self.data[ij] -= l * kj;
                }
            }
        }
        Ok(BandedLu { factors: self })
    }
}

#[derive(Debug, Clone)]
pub struct BandedLu {
    factors: BandedMatrix,
}

impl BandedLu {
    /// Solves `A x = rhs`, overwriting `rhs` with `x`.
    pub fn solve_in_place(&self, rhs: &mut [f64]) {
        let a = &self.factors;
        let n = a.n;
        for i in 0..n {
            let start = i.saturating_sub(a.bandwidth);
            let s: f64 = (start..i).map(|j| a.get(i, j) * rhs[j]).sum();
            rhs[i] -= s;
        }
        for i in (0..n).rev() {
            let end = (i + a.bandwidth + 1).min(n);
            let s: f64 = (i + 1..end).map(|j| a.get(i, j) * rhs[j]).sum();
            rhs[i] = (rhs[i] - s) / a.get(i, i);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_tridiagonal_system() {
        let n = 50;
        let mut a = BandedMatrix::zeros(n, 1);
        for i in 0..n {
            a.add(i, i, 4.0);
            if i > 0 {
                a.add(i, i - 1, -1.0);
            }
            if i + 1 < n {
                a.add(i, i + 1, -1.5);
            }
        }
        let x: Vec<f64> = (0..n).map(|i| (i as f64 * 0.3).sin()).collect();
        let mut b = a.mul_vec(&x);
        a.factor().unwrap().solve_in_place(&mut b);
        for (u, v) in b.iter().zip(&x) {
            assert!((u - v).abs() < 1e-13);
        }
    }

    #[test]
    fn solves_wide_band_system() {
        let (n, bw) = (40, 6);
        let mut a = BandedMatrix::zeros(n, bw);
        for i in 0..n {
            a.add(i, i, 20.0);
            for j in i.saturating_sub(bw)..(i + bw + 1).min(n) {
                if j != i {
                    a.add(i, j, -1.0 / (1.0 + (i + 2 * j) as f64 % 5.0));
                }
            }
        }
        let x: Vec<f64> = (0..n).map(|i| 1.0 + i as f64).collect();
        let mut b = a.mul_vec(&x);
        a.factor().unwrap().solve_in_place(&mut b);
        for (u, v) in b.iter().zip(&x) {
            assert!((u - v).abs() < 1e-12 * v);
        }
    }

    #[test]
    fn zero_pivot_is_reported() {
        let a = BandedMatrix::zeros(3, 1);
        assert!(matches!(a.factor(), Err(Error::LinearSolve(0))));
    }
}
