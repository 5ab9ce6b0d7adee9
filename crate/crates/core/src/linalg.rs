//! Small dense linear algebra: a row-major matrix and a rank-revealing
//! least-squares solver built on column-pivoted Householder QR.

use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Result};
use crate::scalar::Real;

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mat<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Mat<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Builds a matrix from row-major data.
    pub fn from_row_major(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        check_dim(rows * cols, data.len(), "row-major buffer length")?;
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from a list of equally long rows.
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            check_dim(cols, r.len(), "matrix row length")?;
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn col(&self, j: usize) -> Vec<T> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn to_rows(&self) -> Vec<Vec<T>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn matmul(&self, rhs: &Self) -> Result<Self> {
        check_dim(self.cols, rhs.rows, "matmul inner dimension")?;
        let mut out = Self::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == T::zero() {
                    continue;
                }
                let src = rhs.row(k);
                let dst = out.row_mut(i);
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d += a * s;
                }
            }
        }
        Ok(out)
    }

    pub fn matvec(&self, x: &[T]) -> Result<Vec<T>> {
        check_dim(self.cols, x.len(), "matvec")?;
        Ok((0..self.rows).map(|i| dot(self.row(i), x)).collect())
    }

    pub fn scaled(&self, s: T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| v * s).collect(),
        }
    }

    pub fn sub(&self, rhs: &Self) -> Result<Self> {
        check_dim(self.rows, rhs.rows, "matrix rows")?;
        check_dim(self.cols, rhs.cols, "matrix cols")?;
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(&a, &b)| a - b).collect(),
        })
    }

    pub fn add(&self, rhs: &Self) -> Result<Self> {
        check_dim(self.rows, rhs.rows, "matrix rows")?;
        check_dim(self.cols, rhs.cols, "matrix cols")?;
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(&a, &b)| a + b).collect(),
        })
    }

    pub fn frobenius_norm(&self) -> T {
        norm2(&self.data)
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Euclidean norm of every column.
    pub fn column_norms(&self) -> Vec<T> {
        let mut acc = vec![T::zero(); self.cols];
        for i in 0..self.rows {
            for (a, &v) in acc.iter_mut().zip(self.row(i)) {
                *a += v * v;
            }
        }
        acc.into_iter().map(Float::sqrt).collect()
    }
}

use num_traits::Float;

impl<T> Index<(usize, usize)> for Mat<T> {
    type Output = T;
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for Mat<T> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

/// Euclidean norm with scaling to avoid overflow.
pub fn norm2<T: Real>(v: &[T]) -> T {
    let scale = v.iter().fold(T::zero(), |m, x| m.max(x.abs()));
    if scale == T::zero() || !scale.is_finite() {
        return scale;
    }
    let s: T = v.iter().map(|&x| (x / scale) * (x / scale)).sum();
    scale * s.sqrt()
}

/// Householder reflector `I - tau v v^T` with `v[0] = 1` implied.
///
/// On return `x[0]` holds the image `beta` and `x[1..]` the tail of `v`.
fn householder<T: Real>(x: &mut [T]) -> T {
    let norm = norm2(x);
    if norm == T::zero() {
        return T::zero();
    }
    let x0 = x[0];
    let beta = if x0 >= T::zero() { -norm } else { norm };
    let tau = (beta - x0) / beta;
    let denom = x0 - beta;
    for v in x.iter_mut().skip(1) {
        *v /= denom;
    }
    x[0] = beta;
    tau
}

/// Column-pivoted Householder QR of a tall or wide matrix, kept in compact
/// form, with a complete orthogonal decomposition for rank-deficient solves.
#[derive(Clone, Debug)]
pub struct LeastSquares<T> {
    qr: Mat<T>,
    tau: Vec<T>,
    perm: Vec<usize>,
    rank: usize,
    /// QR of `[R11 R12]^T` (cols x rank) when the factorization is rank deficient.
    cod: Option<(Mat<T>, Vec<T>)>,
    data_rows: usize,
    ridge: T,
}

impl<T: Real> LeastSquares<T> {
    /// Factorizes `a`. With `ridge > 0` the system is augmented with
    /// `sqrt(ridge) * I` so solves minimize `|a x - b|^2 + ridge |x|^2`.
    pub fn new(a: &Mat<T>, ridge: T) -> Result<Self> {
        if ridge < T::zero() || !ridge.is_finite() {
            return Err(crate::Error::Contract(format!(
                "ridge must be finite and nonnegative, got {ridge}"
            )));
        }
        if !a.is_finite() {
            return Err(crate::Error::NonFinite("least-squares design matrix"));
        }
        let n = a.ncols();
        let work = if ridge > T::zero() {
            let s = ridge.sqrt();
            let mut aug = Mat::zeros(a.nrows() + n, n);
            for i in 0..a.nrows() {
                aug.row_mut(i).copy_from_slice(a.row(i));
            }
            for j in 0..n {
                aug[(a.nrows() + j, j)] = s;
            }
            aug
        } else {
            a.clone()
        };
        let mut ls = Self::factor(work);
        ls.data_rows = a.nrows();
        ls.ridge = ridge;
        Ok(ls)
    }

    fn factor(mut qr: Mat<T>) -> Self {
        let (m, n) = (qr.nrows(), qr.ncols());
        let steps = m.min(n);
        let mut perm: Vec<usize> = (0..n).collect();
        let mut tau = vec![T::zero(); steps];
        let mut col = vec![T::zero(); m];
        for k in 0..steps {
            // pivot: largest remaining column norm
            let mut best = k;
            let mut best_norm = -T::one();
            for j in k..n {
                let s: T = (k..m).map(|i| qr[(i, j)] * qr[(i, j)]).sum();
                if s > best_norm {
                    best_norm = s;
                    best = j;
                }
            }
            if best != k {
                for i in 0..m {
                    let tmp = qr[(i, k)];
                    qr[(i, k)] = qr[(i, best)];
                    qr[(i, best)] = tmp;
                }
                perm.swap(k, best);
            }
            let len = m - k;
            for (t, i) in (k..m).enumerate() {
                col[t] = qr[(i, k)];
            }
            let t_k = householder(&mut col[..len]);
            tau[k] = t_k;
            for (t, i) in (k..m).enumerate() {
                qr[(i, k)] = col[t];
            }
            if t_k == T::zero() {
                continue;
            }
            for j in (k + 1)..n {
                let mut s = qr[(k, j)];
                for i in (k + 1)..m {
                    s += qr[(i, k)] * qr[(i, j)];
                }
                s *= t_k;
                qr[(k, j)] -= s;
                for i in (k + 1)..m {
                    let v = qr[(i, k)];
                    qr[(i, j)] -= s * v;
                }
            }
        }

        let r00 = if steps > 0 { qr[(0, 0)].abs() } else { T::zero() };
        let tol = T::from_count(m.max(n)) * T::epsilon() * r00;
        let rank = (0..steps)
            .take_while(|&k| r00 > T::zero() && qr[(k, k)].abs() > tol)
            .count();

        let cod = (rank < n).then(|| {
            // [R11 R12]^T, n x rank, factored without pivoting
            let mut z = Mat::from_fn(n, rank, |i, j| if i >= j { qr[(j, i)] } else { T::zero() });
            let mut ztau = vec![T::zero(); rank];
            let mut buf = vec![T::zero(); n];
            for k in 0..rank {
                let len = n - k;
                for (t, i) in (k..n).enumerate() {
                    buf[t] = z[(i, k)];
                }
                let t_k = householder(&mut buf[..len]);
                ztau[k] = t_k;
                for (t, i) in (k..n).enumerate() {
                    z[(i, k)] = buf[t];
                }
                if t_k == T::zero() {
                    continue;
                }
                for j in (k + 1)..rank {
                    let mut s = z[(k, j)];
                    for i in (k + 1)..n {
                        s += z[(i, k)] * z[(i, j)];
                    }
                    s *= t_k;
                    z[(k, j)] -= s;
                    for i in (k + 1)..n {
                        let v = z[(i, k)];
                        z[(i, j)] -= s * v;
                    }
                }
            }
            (z, ztau)
        });

        Self {
            data_rows: m,
            qr,
            tau,
            perm,
            rank,
            cod,
            ridge: T::zero(),
        }
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn ncols(&self) -> usize {
        self.qr.ncols()
    }

    pub fn is_rank_deficient(&self) -> bool {
        self.rank < self.qr.ncols()
    }

    pub fn ridge(&self) -> T {
        self.ridge
    }

    /// Minimum-norm least-squares solution for a single right-hand side.
    pub fn solve_vec(&self, b: &[T]) -> Result<Vec<T>> {
        check_dim(self.data_rows, b.len(), "least-squares right-hand side")?;
        let (m, n) = (self.qr.nrows(), self.qr.ncols());
        let mut c = vec![T::zero(); m];
        c[..b.len()].copy_from_slice(b);

        // c <- Q^T c
        for k in 0..self.tau.len() {
            let t_k = self.tau[k];
            if t_k == T::zero() {
                continue;
            }
            let mut s = c[k];
            for i in (k + 1)..m {
                s += self.qr[(i, k)] * c[i];
            }
            s *= t_k;
            c[k] -= s;
            for i in (k + 1)..m {
                c[i] -= s * self.qr[(i, k)];
            }
        }

        let r = self.rank;
        let mut y = vec![T::zero(); n];
        match &self.cod {
            None => {
                for i in (0..r).rev() {
                    let mut s = c[i];
                    for j in (i + 1)..r {
                        s -= self.qr[(i, j)] * y[j];
                    }
                    y[i] = s / self.qr[(i, i)];
                }
            }
            Some((z, ztau)) => {
                // [R11 R12] = T^T Z^T; solve T^T u = c, then y = Z [u; 0]
                for i in 0..r {
                    let mut s = c[i];
                    for j in 0..i {
                        s -= z[(j, i)] * y[j];
                    }
                    y[i] = s / z[(i, i)];
                }
                for k in (0..r).rev() {
                    let t_k = ztau[k];
                    if t_k == T::zero() {
                        continue;
                    }
                    let mut s = y[k];
                    for i in (k + 1)..n {
                        s += z[(i, k)] * y[i];
                    }
                    s *= t_k;
                    y[k] -= s;
                    for i in (k + 1)..n {
                        y[i] -= s * z[(i, k)];
                    }
                }
            }
        }

        let mut x = vec![T::zero(); n];
        for (j, &p) in self.perm.iter().enumerate() {
            x[p] = y[j];
        }
        Ok(x)
    }

    /// Solves for every column of `b`; returns an `ncols x b.ncols()` matrix.
    pub fn solve(&self, b: &Mat<T>) -> Result<Mat<T>> {
        check_dim(self.data_rows, b.nrows(), "least-squares right-hand side rows")?;
        let n = self.ncols();
        let mut out = Mat::zeros(n, b.ncols());
        for j in 0..b.ncols() {
            let x = self.solve_vec(&b.col(j))?;
            for i in 0..n {
                out[(i, j)] = x[i];
            }
        }
        Ok(out)
    }
}

/// Largest eigenvalue of a symmetric positive semidefinite matrix by power
/// iteration from a deterministic start vector.
pub fn largest_eigenvalue_psd<T: Real>(a: &Mat<T>, max_iter: usize, tol: T) -> Result<T> {
    check_dim(a.nrows(), a.ncols(), "power iteration needs a square matrix")?;
    let n = a.nrows();
    if n == 0 {
        return Ok(T::zero());
    }
    let mut v: Vec<T> = (0..n)
        .map(|i| T::one() + T::lit(0.01) * T::from_count(i % 7))
        .collect();
    let nv = norm2(&v);
    v.iter_mut().for_each(|x| *x /= nv);
    let mut lambda = T::zero();
    for _ in 0..max_iter {
        let w = a.matvec(&v)?;
        let nw = norm2(&w);
        if nw == T::zero() {
            return Ok(T::zero());
        }
        let next = dot(&v, &w);
        v = w.into_iter().map(|x| x / nw).collect();
        if (next - lambda).abs() <= tol * next.abs() {
            lambda = next;
            break;
        }
        lambda = next;
    }
    Ok(lambda)
}
