//! Dense exact-rational matrices: just enough linear algebra for the
//! propagators, induction data and Padé tables used elsewhere.

use crate::num::Rat;
use num_traits::{One, Zero};

/// Dense matrix of exact rationals, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<Rat>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat { rows, cols, data: vec![Rat::zero(); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = Rat::one();
        }
        m
    }

    pub fn from_rows(rows: Vec<Vec<Rat>>) -> Self {
        let r = rows.len();
        let c = if r == 0 { 0 } else { rows[0].len() };
        assert!(rows.iter().all(|row| row.len() == c), "ragged rows");
        Mat { rows: r, cols: c, data: rows.into_iter().flatten().collect() }
    }

    pub fn transpose(&self) -> Mat {
        let mut t = Mat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)].clone();
            }
        }
        t
    }

    pub fn mul(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.rows, "dimension mismatch in mul");
        let mut out = Mat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = &self[(i, k)];
                if a.is_zero() {
                    continue;
                }
                for j in 0..other.cols {
                    let b = &other[(k, j)];
                    if !b.is_zero() {
                        let prod = a.clone() * b.clone();
                        out[(i, j)] += prod;
                    }
                }
            }
        }
        out
    }

    pub fn add(&self, other: &Mat) -> Mat {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let mut out = self.clone();
        for (x, y) in out.data.iter_mut().zip(other.data.iter()) {
            *x += y.clone();
        }
        out
    }

    pub fn sub(&self, other: &Mat) -> Mat {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let mut out = self.clone();
        for (x, y) in out.data.iter_mut().zip(other.data.iter()) {
            *x -= y.clone();
        }
        out
    }

    pub fn scale(&self, s: &Rat) -> Mat {
        let mut out = self.clone();
        for x in out.data.iter_mut() {
            *x *= s.clone();
        }
        out
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|x| x.is_zero())
    }

    /// Gauss-Jordan inverse; `None` when singular.
    pub fn inverse(&self) -> Option<Mat> {
        assert_eq!(self.rows, self.cols);
        let n = self.rows;
        let mut a = self.clone();
        let mut inv = Mat::identity(n);
        for col in 0..n {
            let pivot = (col..n).find(|&r| !a[(r, col)].is_zero())?;
            if pivot != col {
                a.swap_rows(pivot, col);
                inv.swap_rows(pivot, col);
            }
            let p = a[(col, col)].clone();
            for j in 0..n {
                a[(col, j)] /= p.clone();
                inv[(col, j)] /= p.clone();
            }
            for r in 0..n {
                if r != col && !a[(r, col)].is_zero() {
                    let f = a[(r, col)].clone();
                    for j in 0..n {
                        let x = a[(col, j)].clone() * f.clone();
                        a[(r, j)] -= x;
                        let y = inv[(col, j)].clone() * f.clone();
                        inv[(r, j)] -= y;
                    }
                }
            }
        }
        Some(inv)
    }

    /// Fraction-free-ish determinant by elimination.
    pub fn det(&self) -> Rat {
        assert_eq!(self.rows, self.cols);
        let n = self.rows;
        let mut a = self.clone();
        let mut sign = Rat::one();
        let mut det = Rat::one();
        for col in 0..n {
            let pivot = match (col..n).find(|&r| !a[(r, col)].is_zero()) {
                Some(p) => p,
                None => return Rat::zero(),
            };
            if pivot != col {
                a.swap_rows(pivot, col);
                sign = -sign;
            }
            let p = a[(col, col)].clone();
            det *= p.clone();
            for r in col + 1..n {
                if !a[(r, col)].is_zero() {
                    let f = a[(r, col)].clone() / p.clone();
                    for j in col..n {
                        let x = a[(col, j)].clone() * f.clone();
                        a[(r, j)] -= x;
                    }
                }
            }
        }
        det * sign
    }

    /// Solves `A x = b` for a single right-hand side; `None` if no unique solution.
    pub fn solve(&self, b: &[Rat]) -> Option<Vec<Rat>> {
        assert_eq!(self.rows, b.len());
        let inv = self.inverse()?;
        Some(inv.apply(b))
    }

    /// Matrix-vector product.
    pub fn apply(&self, v: &[Rat]) -> Vec<Rat> {
        assert_eq!(self.cols, v.len());
        (0..self.rows)
            .map(|i| {
                let mut acc = Rat::zero();
                for j in 0..self.cols {
                    if !self[(i, j)].is_zero() && !v[j].is_zero() {
                        acc += self[(i, j)].clone() * v[j].clone();
                    }
                }
                acc
            })
            .collect()
    }

    /// Row-reduces in place, returning the rank and pivot columns.
    pub fn row_reduce(&mut self) -> (usize, Vec<usize>) {
        let mut rank = 0;
        let mut pivots = Vec::new();
        for col in 0..self.cols {
            if rank == self.rows {
                break;
            }
            let pivot = match (rank..self.rows).find(|&r| !self[(r, col)].is_zero()) {
                Some(p) => p,
                None => continue,
            };
            self.swap_rows(pivot, rank);
            let p = self[(rank, col)].clone();
            for j in 0..self.cols {
                self[(rank, j)] /= p.clone();
            }
            for r in 0..self.rows {
                if r != rank && !self[(r, col)].is_zero() {
                    let f = self[(r, col)].clone();
                    for j in 0..self.cols {
                        let x = self[(rank, j)].clone() * f.clone();
                        self[(r, j)] -= x;
                    }
                }
            }
            pivots.push(col);
            rank += 1;
        }
        (rank, pivots)
    }

    fn swap_rows(&mut self, a: usize, b: usize) {
        if a == b {
            return;
        }
        for j in 0..self.cols {
            self.data.swap(a * self.cols + j, b * self.cols + j);
        }
    }
}

impl std::ops::Index<(usize, usize)> for Mat {
    type Output = Rat;
    fn index(&self, (i, j): (usize, usize)) -> &Rat {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Mat {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut Rat {
        &mut self.data[i * self.cols + j]
    }
}

/// Solves a (possibly rectangular) linear system `A x = b` exactly.
/// Returns `None` when inconsistent; free variables are set to zero.
pub fn solve_least_constrained(a: &Mat, b: &[Rat]) -> Option<Vec<Rat>> {
    assert_eq!(a.rows, b.len());
    let mut aug = Mat::zeros(a.rows, a.cols + 1);
    for i in 0..a.rows {
        for j in 0..a.cols {
            aug[(i, j)] = a[(i, j)].clone();
        }
        aug[(i, a.cols)] = b[i].clone();
    }
    let (rank, pivots) = aug.row_reduce();
    // inconsistent iff a pivot lands in the augmented column
    if pivots.contains(&a.cols) {
        return None;
    }
    let mut x = vec![Rat::zero(); a.cols];
    for (r, &pc) in pivots.iter().enumerate().take(rank) {
        x[pc] = aug[(r, a.cols)].clone();
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::num::{int, rat};

    #[test]
    fn inverse_and_det() {
        let m = Mat::from_rows(vec![
            vec![int(2), int(1)],
            vec![int(1), int(1)],
        ]);
        assert_eq!(m.det(), int(1));
        let inv = m.inverse().unwrap();
        assert_eq!(m.mul(&inv), Mat::identity(2));
    }

    #[test]
    fn singular_matrix() {
        let m = Mat::from_rows(vec![
            vec![int(1), int(2)],
            vec![int(2), int(4)],
        ]);
        assert_eq!(m.det(), int(0));
        assert!(m.inverse().is_none());
    }

    #[test]
    fn rectangular_solve() {
        let a = Mat::from_rows(vec![vec![int(1), int(1), int(0)]]);
        let x = solve_least_constrained(&a, &[rat(3, 2)]).unwrap();
        assert_eq!(a.apply(&x), vec![rat(3, 2)]);
    }
}
