//! Coefficient sequences of lower-triangular Toeplitz operators.
//!
//! A sequence `c_0, …, c_{n-1}` stands for the `n × n` matrix with `c_{i-j}`
//! at position `(i, j)` for `i ≥ j`, and equivalently for the truncated power
//! series `Σ c_k x^k`. Products of such matrices are Cauchy products of their
//! sequences, which is what makes the series view convenient.
//!
//! The dense routines here cost `O(n²)` and serve as ground truth in tests.

use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};

/// Largest row count accepted by the dense oracles.
pub const DENSE_CAP: usize = 1 << 16;

/// First `n` coefficients of a lower-triangular Toeplitz operator.
#[derive(Clone, Debug, PartialEq)]
pub struct ToeplitzSeq {
    coeffs: Vec<f64>,
}

impl ToeplitzSeq {
    /// Wraps a coefficient vector, rejecting empty or non-finite input.
    pub fn new(coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.is_empty() {
            return Err(Error::Empty { what: "sequence" });
        }
        if let Some(index) = coeffs.iter().position(|c| !c.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { coeffs })
    }

    /// The sequence `1, 0, …, 0` of length `n`.
    pub fn unit(n: usize) -> Result<Self> {
        let mut coeffs = vec![0.0; n];
        if let Some(c) = coeffs.first_mut() {
            *c = 1.0;
        }
        Self::new(coeffs)
    }

    /// Number of coefficients.
    pub fn n(&self) -> usize {
        self.coeffs.len()
    }

    /// Coefficient slice.
    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// Consumes the sequence and returns its coefficients.
    pub fn into_vec(self) -> Vec<f64> {
        self.coeffs
    }

    /// Sum of squared coefficients, the squared column norm of the matrix.
    pub fn sum_squares(&self) -> f64 {
        self.coeffs.iter().map(|c| c * c).sum()
    }

    /// Running sums `c_0, c_0 + c_1, …`, i.e. multiplication by `1/(1-x)`.
    pub fn prefix_sums(&self) -> ToeplitzSeq {
        let mut acc = 0.0;
        let coeffs = self
            .coeffs
            .iter()
            .map(|c| {
                acc += c;
                acc
            })
            .collect();
        ToeplitzSeq { coeffs }
    }

    /// Materializes the `n × n` lower-triangular Toeplitz matrix.
    pub fn to_dense(&self) -> Result<Matrix> {
        let n = self.n();
        check_cap(n)?;
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                m[(i, j)] = self.coeffs[i - j];
            }
        }
        Ok(m)
    }
}

impl Index<usize> for ToeplitzSeq {
    type Output = f64;

    fn index(&self, k: usize) -> &f64 {
        &self.coeffs[k]
    }
}

/// Row-major dense real matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// All-zero matrix.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Identity of size `n`.
    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// The all-ones lower-triangular matrix, whose product with a vector gives its prefix sums.
    pub fn all_ones_lower(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                m[(i, j)] = 1.0;
            }
        }
        m
    }

    /// Builds a matrix from row-major data.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch {
                expected: format!("{} values", rows * cols),
                got: format!("{} values", data.len()),
            });
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from a list of equally long rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::LengthMismatch {
                    left: cols,
                    right: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    /// Row count.
    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Column count.
    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Row-major storage.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Borrow of row `i`.
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Mutable borrow of row `i`.
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Matrix product `self · other`.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::ShapeMismatch {
                expected: format!("{} rows", self.cols),
                got: format!("{} rows", other.rows),
            });
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                let src = other.row(k);
                for (o, b) in out.row_mut(i).iter_mut().zip(src) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// Transpose.
    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[(j, i)] = self[(i, j)];
            }
        }
        out
    }

    /// Largest row 2-norm.
    pub fn max_row_norm(&self) -> f64 {
        (0..self.rows)
            .map(|i| self.row(i).iter().map(|x| x * x).sum::<f64>())
            .fold(0.0, f64::max)
            .sqrt()
    }

    /// Largest column 2-norm.
    pub fn max_col_norm(&self) -> f64 {
        let mut sums = vec![0.0; self.cols];
        for i in 0..self.rows {
            for (s, x) in sums.iter_mut().zip(self.row(i)) {
                *s += x * x;
            }
        }
        sums.into_iter().fold(0.0, f64::max).sqrt()
    }

    /// Largest absolute entrywise difference; infinite when shapes differ.
    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        if self.rows != other.rows || self.cols != other.cols {
            return f64::INFINITY;
        }
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Coefficients of `1/√(1-x)`: `f_0 = 1`, `f_k = f_{k-1}(1 - 1/(2k))`.
///
/// The recurrence avoids the overflow of `binom(2k, k)` at large `k`.
pub fn optimal_coeffs(n: usize) -> Result<ToeplitzSeq> {
    if n == 0 {
        return Err(Error::Empty { what: "n" });
    }
    let mut coeffs = Vec::with_capacity(n);
    let mut f = 1.0;
    coeffs.push(f);
    for k in 1..n {
        f *= 1.0 - 0.5 / k as f64;
        coeffs.push(f);
    }
    ToeplitzSeq::new(coeffs)
}

/// Truncated product `h_k = Σ_{i≤k} a_i b_{k-i}` of two series.
pub fn cauchy_product(a: &ToeplitzSeq, b: &ToeplitzSeq) -> Result<ToeplitzSeq> {
    if a.n() != b.n() {
        return Err(Error::LengthMismatch {
            left: a.n(),
            right: b.n(),
        });
    }
    let n = a.n();
    let mut h = vec![0.0; n];
    for (i, &ai) in a.coeffs.iter().enumerate() {
        if ai == 0.0 {
            continue;
        }
        for (hk, &bj) in h[i..].iter_mut().zip(&b.coeffs) {
            *hk += ai * bj;
        }
    }
    ToeplitzSeq::new(h)
}

/// Truncated reciprocal `1/a(x)` by long division.
pub fn series_reciprocal(a: &ToeplitzSeq) -> Result<ToeplitzSeq> {
    let a0 = a.coeffs[0];
    if a0 == 0.0 {
        return Err(Error::ZeroConstantTerm);
    }
    let n = a.n();
    let mut r = Vec::with_capacity(n);
    r.push(1.0 / a0);
    for k in 1..n {
        let acc: f64 = (1..=k).map(|j| a.coeffs[j] * r[k - j]).sum();
        r.push(-acc / a0);
    }
    ToeplitzSeq::new(r)
}

/// Dense product of the Toeplitz matrix of `a` with `z` (rows are time steps).
pub fn ltt_apply_dense(a: &ToeplitzSeq, z: &Matrix) -> Result<Matrix> {
    if z.rows() != a.n() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} rows", a.n()),
            got: format!("{} rows", z.rows()),
        });
    }
    check_cap(z.rows())?;
    let mut out = Matrix::zeros(z.rows(), z.cols());
    for k in 0..z.rows() {
        for j in 0..=k {
            let c = a.coeffs[k - j];
            if c == 0.0 {
                continue;
            }
            let src = z.row(j).to_vec();
            for (o, x) in out.row_mut(k).iter_mut().zip(&src) {
                *o += c * x;
            }
        }
    }
    Ok(out)
}

fn check_cap(n: usize) -> Result<()> {
    if n > DENSE_CAP {
        return Err(Error::TooLarge {
            size: n,
            cap: DENSE_CAP,
        });
    }
    Ok(())
}
