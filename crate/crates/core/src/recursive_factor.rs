//! Kronecker-style recursive factorizations and their streaming algorithm.
//!
//! From a base factorization `B₁C₁ = A^{(n₁)}` with `B₁ ∈ ℝ^{n₁×n₁'}` the
//! recursion `B_ℓ = comb(B₁, B_{ℓ-1})`, `C_ℓ = comc(C₁, C_{ℓ-1})` factors
//! `A^{(n₁^ℓ)}` with `‖C_ℓ‖₁→₂ = √ℓ‖C₁‖₁→₂` and `‖B_ℓ‖₂→∞ ≤ √ℓ‖B₁‖₂→∞`.
//!
//! [`RecursiveStream`] emits the rows of `B_ℓ Z` while holding one base
//! state and one carried row per level. Noise rows are addressed by their
//! logical index in `Z`, so any consumption order yields the same product.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::blt_params::BltFactorization;
use crate::error::{Error, Result};
use crate::error_eval::factorization_sensitivity;
use crate::error_eval::rownorm_closed;
use crate::rational_approx::ra_blt_build;
use crate::seq_core::Matrix;
use crate::streaming::{stream_init, StreamState};

/// Row cap for dense recursive constructions.
pub const RECURSIVE_DENSE_CAP: usize = 1 << 12;

fn check_cap(rows: usize, cols: usize) -> Result<()> {
    if rows > RECURSIVE_DENSE_CAP || cols > 4 * RECURSIVE_DENSE_CAP {
        return Err(Error::TooLarge {
            size: rows.max(cols),
            cap: RECURSIVE_DENSE_CAP,
        });
    }
    Ok(())
}

/// `(I^{(n₁)} ⊗ B₂ | S^{(n₁)} B₁ ⊗ 𝟏^{(n₂)})`.
pub fn comb_dense(b1: &Matrix, b2: &Matrix) -> Result<Matrix> {
    let (n1, n1p) = (b1.rows(), b1.cols());
    let (n2, n2p) = (b2.rows(), b2.cols());
    let rows = n1 * n2;
    let cols = n1 * n2p + n1p;
    check_cap(rows, cols)?;
    let mut out = Matrix::zeros(rows, cols);
    for i in 0..n1 {
        for r in 0..n2 {
            let row = i * n2 + r;
            for c in 0..n2p {
                out[(row, i * n2p + c)] = b2[(r, c)];
            }
            if i > 0 {
                for c in 0..n1p {
                    out[(row, n1 * n2p + c)] = b1[(i - 1, c)];
                }
            }
        }
    }
    Ok(out)
}

/// `(I^{(n₁)} ⊗ C₂ ; C₁ ⊗ 𝟏ᵀ^{(n₂)})`.
pub fn comc_dense(c1: &Matrix, c2: &Matrix) -> Result<Matrix> {
    let (n1p, n1) = (c1.rows(), c1.cols());
    let (n2p, n2) = (c2.rows(), c2.cols());
    let rows = n1 * n2p + n1p;
    let cols = n1 * n2;
    check_cap(cols, rows)?;
    let mut out = Matrix::zeros(rows, cols);
    for i in 0..n1 {
        for r in 0..n2p {
            for c in 0..n2 {
                out[(i * n2p + r, i * n2 + c)] = c2[(r, c)];
            }
        }
    }
    for r in 0..n1p {
        for j in 0..n1 {
            for c in 0..n2 {
                out[(n1 * n2p + r, j * n2 + c)] = c1[(r, j)];
            }
        }
    }
    Ok(out)
}

/// `(√ℓ·sens, √ℓ·rownorm)`; the second entry is an upper bound.
pub fn recursive_norms(base_sens: f64, base_rownorm: f64, levels: usize) -> Result<(f64, f64)> {
    if levels == 0 {
        return Err(Error::invalid("levels", "must be at least 1"));
    }
    let s = (levels as f64).sqrt();
    Ok((s * base_sens, s * base_rownorm))
}

/// A base factor pair and a recursion depth.
#[derive(Clone, Debug, PartialEq)]
pub struct RecursiveFactorization {
    b1: Matrix,
    c1: Matrix,
    levels: usize,
}

impl RecursiveFactorization {
    /// Checks that `B₁` is `n₁×n₁'` and `C₁` is `n₁'×n₁`.
    pub fn new(b1: Matrix, c1: Matrix, levels: usize) -> Result<Self> {
        if levels == 0 {
            return Err(Error::invalid("levels", "must be at least 1"));
        }
        if b1.rows() != c1.cols() || b1.cols() != c1.rows() {
            return Err(Error::ShapeMismatch {
                expected: format!("C1 of shape {}x{}", b1.cols(), b1.rows()),
                got: format!("{}x{}", c1.rows(), c1.cols()),
            });
        }
        if b1.rows() < 2 {
            return Err(Error::invalid("b1", "base size must be at least 2"));
        }
        Ok(Self { b1, c1, levels })
    }

    /// Dense base factors of a Toeplitz factorization truncated to `n₁`.
    pub fn from_blt(base: &BltFactorization, n1: usize, levels: usize) -> Result<Self> {
        let b = base.b_coeffs(n1)?.to_dense()?;
        let c = base.c_coeffs(n1)?.to_dense()?;
        Self::new(b, c, levels)
    }

    /// Base size `n₁`.
    pub fn n1(&self) -> usize {
        self.b1.rows()
    }

    /// Base inner size `n₁'`.
    pub fn n1_prime(&self) -> usize {
        self.b1.cols()
    }

    /// Depth `ℓ`.
    pub fn levels(&self) -> usize {
        self.levels
    }

    /// `n_ℓ = n₁^ℓ`.
    pub fn n(&self) -> usize {
        self.n1().pow(self.levels as u32)
    }

    /// `n_ℓ' = n₁'(n₁^ℓ - 1)/(n₁ - 1)`.
    pub fn n_prime(&self) -> usize {
        self.n1_prime() * (self.n() - 1) / (self.n1() - 1)
    }

    /// Dense `B_ℓ` (test scale).
    pub fn dense_b(&self) -> Result<Matrix> {
        let mut b = self.b1.clone();
        for _ in 1..self.levels {
            b = comb_dense(&self.b1, &b)?;
        }
        Ok(b)
    }

    /// Dense `C_ℓ` (test scale).
    pub fn dense_c(&self) -> Result<Matrix> {
        let mut c = self.c1.clone();
        for _ in 1..self.levels {
            c = comc_dense(&self.c1, &c)?;
        }
        Ok(c)
    }

    /// `(‖C_ℓ‖₁→₂, bound on ‖B_ℓ‖₂→∞)` from the base norms.
    pub fn norms(&self) -> Result<(f64, f64)> {
        recursive_norms(self.c1.max_col_norm(), self.b1.max_row_norm(), self.levels)
    }
}

/// Dense binary tree factors of `A^{(2^ℓ)}`, built from `[B 0 0; 0 B 𝟏]` and `[C 0; 0 C; 𝟏ᵀ 0]`.
pub fn binary_tree_dense(levels: usize) -> Result<(Matrix, Matrix)> {
    let n = 1usize << levels;
    check_cap(n, 2 * n)?;
    let mut b = Matrix::identity(1);
    let mut c = Matrix::identity(1);
    for _ in 0..levels {
        let (h, hp) = (b.rows(), b.cols());
        let mut b2 = Matrix::zeros(2 * h, 2 * hp + 1);
        let mut c2 = Matrix::zeros(2 * hp + 1, 2 * h);
        for r in 0..h {
            for k in 0..hp {
                b2[(r, k)] = b[(r, k)];
                b2[(h + r, hp + k)] = b[(r, k)];
                c2[(k, r)] = c[(k, r)];
                c2[(hp + k, h + r)] = c[(k, r)];
            }
            b2[(h + r, 2 * hp)] = 1.0;
            c2[(2 * hp, r)] = 1.0;
        }
        b = b2;
        c = c2;
    }
    Ok((b, c))
}

/// Recursion parameters for horizon `n`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Theorem2Params {
    /// Base size.
    pub n1: usize,
    /// Degree of the base rational approximation.
    pub d: usize,
    /// Depth, the least `ℓ` with `n₁^ℓ ≥ n`.
    pub levels: usize,
}

/// `n₁ = max(5, ⌈ln n⌉)`, `d` large enough for both base accuracy conditions,
/// and `ℓ = ⌈ln n / ln n₁⌉`.
pub fn theorem2_params(n: usize) -> Result<Theorem2Params> {
    if n < 25 {
        return Err(Error::invalid("n", "must be at least 25"));
    }
    let n1 = ((n as f64).ln().ceil() as usize).max(5);
    let pi = std::f64::consts::PI;
    let ln1 = (n1 as f64).ln();
    let first = 2.0 + ((12.0 + 4.0 * ln1) / pi).powi(2);
    let second = 2.0 + ((2.0 * 16f64.ln() + 3.0 * ln1) / pi).powi(2);
    let d = first.max(second).ceil() as usize;
    let mut levels = 1;
    let mut size = n1;
    while size < n {
        size = size.saturating_mul(n1);
        levels += 1;
    }
    Ok(Theorem2Params { n1, d, levels })
}

/// The base factorization and the norms of the assembled mechanism.
#[derive(Clone, Debug)]
pub struct RecursiveMechanism {
    /// Parameters used.
    pub params: Theorem2Params,
    /// Base factorization of size `n₁`.
    pub base: BltFactorization,
    /// `‖C_ℓ‖₁→₂`.
    pub sensitivity: f64,
    /// Upper bound on `‖B_ℓ‖₂→∞`.
    pub row_norm_bound: f64,
}

impl RecursiveMechanism {
    /// Upper bound on MaxErr.
    pub fn max_err_bound(&self) -> f64 {
        self.sensitivity * self.row_norm_bound
    }
}

/// Builds the recursive mechanism for `n` with a rational-approximation base.
pub fn recursive_mechanism(n: usize) -> Result<RecursiveMechanism> {
    let params = theorem2_params(n)?;
    let base = ra_blt_build(params.d, params.n1)?;
    let s1 = factorization_sensitivity(&base, params.n1)?;
    let b1 = rownorm_closed(base.omega(), base.theta(), params.n1)?;
    let (sensitivity, row_norm_bound) = recursive_norms(s1, b1, params.levels)?;
    Ok(RecursiveMechanism {
        params,
        base,
        sensitivity,
        row_norm_bound,
    })
}

/// Noise rows addressed by logical index.
pub trait NoiseSource {
    /// Row width.
    fn m(&self) -> usize;
    /// Writes row `index` into `out`.
    fn row(&mut self, index: usize, out: &mut [f64]) -> Result<()>;
}

/// Gaussian rows where row `i` comes from ChaCha20 stream `i` under one seed.
#[derive(Clone, Debug)]
pub struct KeyedGaussian {
    seed: u64,
    m: usize,
    sigma: f64,
    rows: usize,
    reads: Vec<u32>,
}

impl KeyedGaussian {
    /// A source of `rows` rows of width `m` with standard deviation `sigma`.
    pub fn new(seed: u64, rows: usize, m: usize, sigma: f64) -> Self {
        Self {
            seed,
            m,
            sigma,
            rows,
            reads: vec![0; rows],
        }
    }

    /// Value of row `index` without recording a read.
    pub fn peek(&self, index: usize) -> Vec<f64> {
        let mut rng = ChaCha20Rng::seed_from_u64(self.seed);
        rng.set_stream(index as u64);
        (0..self.m)
            .map(|_| {
                let g: f64 = StandardNormal.sample(&mut rng);
                self.sigma * g
            })
            .collect()
    }

    /// All rows as a dense matrix.
    pub fn dense(&self) -> Matrix {
        let data = (0..self.rows).flat_map(|i| self.peek(i)).collect();
        Matrix::from_vec(self.rows, self.m, data).expect("shape is consistent")
    }

    /// How often each row has been read.
    pub fn read_counts(&self) -> &[u32] {
        &self.reads
    }
}

impl NoiseSource for KeyedGaussian {
    fn m(&self) -> usize {
        self.m
    }

    fn row(&mut self, index: usize, out: &mut [f64]) -> Result<()> {
        if index >= self.rows {
            return Err(Error::Exhausted { rows: self.rows });
        }
        out.copy_from_slice(&self.peek(index));
        self.reads[index] += 1;
        Ok(())
    }
}

/// A running multiplication by `B₁` that reads noise rows `offset..offset + n₁'`.
pub trait BaseStream {
    /// Next output row.
    fn next_row(&mut self, noise: &mut dyn NoiseSource) -> Result<Vec<f64>>;
    /// Bytes of state held.
    fn state_bytes(&self) -> usize;
}

/// Creates fresh base streams.
pub trait BaseFactory {
    /// Base size `n₁`.
    fn n1(&self) -> usize;
    /// Base inner size `n₁'`.
    fn n1_prime(&self) -> usize;
    /// A stream reading noise rows starting at `offset`.
    fn start(&self, offset: usize, m: usize) -> Result<Box<dyn BaseStream>>;
}

/// Base streams running the buffered recurrence for a Toeplitz `B₁`.
#[derive(Clone, Debug)]
pub struct BltBase {
    fact: BltFactorization,
    n1: usize,
}

impl BltBase {
    /// `B₁` is the leading `n₁ × n₁` block of `fact`'s `B`.
    pub fn new(fact: BltFactorization, n1: usize) -> Result<Self> {
        if n1 < 2 {
            return Err(Error::invalid("n1", "must be at least 2"));
        }
        Ok(Self { fact, n1 })
    }
}

struct BltBaseStream {
    state: StreamState,
    acc: Vec<f64>,
    z: Vec<f64>,
    out: Vec<f64>,
    next: usize,
}

impl BaseStream for BltBaseStream {
    fn next_row(&mut self, noise: &mut dyn NoiseSource) -> Result<Vec<f64>> {
        noise.row(self.next, &mut self.z)?;
        self.next += 1;
        self.state.step_into(&self.z, &mut self.out)?;
        for (a, o) in self.acc.iter_mut().zip(&self.out) {
            *a += o;
        }
        Ok(self.acc.clone())
    }

    fn state_bytes(&self) -> usize {
        self.state.state_bytes() + self.acc.len() * 8
    }
}

impl BaseFactory for BltBase {
    fn n1(&self) -> usize {
        self.n1
    }

    fn n1_prime(&self) -> usize {
        self.n1
    }

    fn start(&self, offset: usize, m: usize) -> Result<Box<dyn BaseStream>> {
        let form = self.fact.inverse_generator().matrix_form()?;
        Ok(Box::new(BltBaseStream {
            state: stream_init(form, m)?.with_limit(self.n1),
            acc: vec![0.0; m],
            z: vec![0.0; m],
            out: vec![0.0; m],
            next: offset,
        }))
    }
}

/// Base streams for an arbitrary dense `B₁`, reading all inputs up front (test scale).
#[derive(Clone, Debug)]
pub struct DenseBase {
    b1: Matrix,
}

impl DenseBase {
    /// Wraps `B₁`.
    pub fn new(b1: Matrix) -> Self {
        Self { b1 }
    }
}

struct DenseBaseStream {
    b1: Matrix,
    offset: usize,
    z: Option<Matrix>,
    k: usize,
    m: usize,
}

impl BaseStream for DenseBaseStream {
    fn next_row(&mut self, noise: &mut dyn NoiseSource) -> Result<Vec<f64>> {
        if self.z.is_none() {
            let mut z = Matrix::zeros(self.b1.cols(), self.m);
            for r in 0..self.b1.cols() {
                noise.row(self.offset + r, z.row_mut(r))?;
            }
            self.z = Some(z);
        }
        let z = self.z.as_ref().expect("filled above");
        if self.k >= self.b1.rows() {
            return Err(Error::Exhausted { rows: self.b1.rows() });
        }
        let mut out = vec![0.0; self.m];
        for (c, &bkc) in self.b1.row(self.k).iter().enumerate() {
            for (o, &zc) in out.iter_mut().zip(z.row(c)) {
                *o += bkc * zc;
            }
        }
        self.k += 1;
        Ok(out)
    }

    fn state_bytes(&self) -> usize {
        self.z.as_ref().map_or(0, |z| z.as_slice().len() * 8)
    }
}

impl BaseFactory for DenseBase {
    fn n1(&self) -> usize {
        self.b1.rows()
    }

    fn n1_prime(&self) -> usize {
        self.b1.cols()
    }

    fn start(&self, offset: usize, m: usize) -> Result<Box<dyn BaseStream>> {
        Ok(Box::new(DenseBaseStream {
            b1: self.b1.clone(),
            offset,
            z: None,
            k: 0,
            m,
        }))
    }
}

enum Level {
    Base(Box<dyn BaseStream>),
    Nested {
        copy_one: Box<dyn BaseStream>,
        child: Option<Box<RecursiveStream>>,
        carry: Vec<f64>,
        i: usize,
        j: usize,
    },
}

/// Streaming multiplication by `B_ℓ`.
pub struct RecursiveStream {
    factory: Arc<dyn BaseFactory>,
    levels: usize,
    offset: usize,
    m: usize,
    emitted: usize,
    level: Level,
}

fn n_of(factory: &dyn BaseFactory, levels: usize) -> usize {
    factory.n1().pow(levels as u32)
}

fn n_prime_of(factory: &dyn BaseFactory, levels: usize) -> usize {
    let n1 = factory.n1();
    factory.n1_prime() * (n1.pow(levels as u32) - 1) / (n1 - 1)
}

impl RecursiveStream {
    /// A depth-`levels` stream over noise rows `0..n_ℓ'`.
    pub fn new(factory: Arc<dyn BaseFactory>, levels: usize, m: usize) -> Result<Self> {
        if levels == 0 {
            return Err(Error::invalid("levels", "must be at least 1"));
        }
        if factory.n1() < 2 {
            return Err(Error::invalid("n1", "must be at least 2"));
        }
        if m == 0 {
            return Err(Error::Empty { what: "m" });
        }
        Self::at(factory, levels, 0, m)
    }

    fn at(factory: Arc<dyn BaseFactory>, levels: usize, offset: usize, m: usize) -> Result<Self> {
        let level = if levels == 1 {
            Level::Base(factory.start(offset, m)?)
        } else {
            let copy_offset = offset + factory.n1() * n_prime_of(factory.as_ref(), levels - 1);
            Level::Nested {
                copy_one: factory.start(copy_offset, m)?,
                child: None,
                carry: vec![0.0; m],
                i: 0,
                j: 0,
            }
        };
        Ok(Self {
            factory,
            levels,
            offset,
            m,
            emitted: 0,
            level,
        })
    }

    /// Rows this stream emits, `n₁^ℓ`.
    pub fn n(&self) -> usize {
        n_of(self.factory.as_ref(), self.levels)
    }

    /// Noise rows this stream covers, `n_ℓ'`.
    pub fn n_prime(&self) -> usize {
        n_prime_of(self.factory.as_ref(), self.levels)
    }

    /// Bytes of live state across all levels.
    pub fn state_bytes(&self) -> usize {
        match &self.level {
            Level::Base(b) => b.state_bytes(),
            Level::Nested {
                copy_one, child, carry, ..
            } => copy_one.state_bytes() + carry.len() * 8 + child.as_ref().map_or(0, |c| c.state_bytes()),
        }
    }

    /// Next output row, or `None` after `n₁^ℓ` rows.
    pub fn next_row(&mut self, noise: &mut dyn NoiseSource) -> Result<Option<Vec<f64>>> {
        if self.emitted == self.n() {
            return Ok(None);
        }
        let n1 = self.factory.n1();
        let child_n = n_of(self.factory.as_ref(), self.levels - 1);
        let child_np = n_prime_of(self.factory.as_ref(), self.levels - 1);
        let row = match &mut self.level {
            Level::Base(b) => b.next_row(noise)?,
            Level::Nested {
                copy_one,
                child,
                carry,
                i,
                j,
            } => {
                if child.is_none() {
                    let sub = RecursiveStream::at(self.factory.clone(), self.levels - 1, self.offset + *i * child_np, self.m)?;
                    *child = Some(Box::new(sub));
                }
                let inner = child
                    .as_mut()
                    .expect("created above")
                    .next_row(noise)?
                    .ok_or(Error::Exhausted { rows: child_n })?;
                let out: Vec<f64> = carry.iter().zip(&inner).map(|(a, b)| a + b).collect();
                *j += 1;
                if *j == child_n {
                    *child = None;
                    *j = 0;
                    *i += 1;
                    if *i < n1 {
                        *carry = copy_one.next_row(noise)?;
                    }
                }
                out
            }
        };
        self.emitted += 1;
        Ok(Some(row))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seq_core::{optimal_coeffs, ToeplitzSeq};

    fn optimal_pair(n: usize) -> (Matrix, Matrix) {
        let f = optimal_coeffs(n).unwrap().to_dense().unwrap();
        (f.clone(), f)
    }

    #[test]
    fn comb_comc_reproduce_worked_identity() {
        let (b1, c1) = optimal_pair(2);
        let (b2, c2) = optimal_pair(3);
        let b = comb_dense(&b1, &b2).unwrap();
        let c = comc_dense(&c1, &c2).unwrap();
        assert_eq!((b.rows(), b.cols()), (6, 8));
        assert!(b.matmul(&c).unwrap().max_abs_diff(&Matrix::all_ones_lower(6)) < 1e-12);
        let lhs = c.max_col_norm().powi(2);
        assert!((lhs - (c1.max_col_norm().powi(2) + c2.max_col_norm().powi(2))).abs() < 1e-12);
    }

    #[test]
    fn trivial_comc() {
        let one = Matrix::identity(1);
        let c = comc_dense(&one, &one).unwrap();
        assert_eq!(c.as_slice(), &[1.0, 1.0]);
        assert!((c.max_col_norm() - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn norms_examples() {
        assert_eq!(recursive_norms(1.3, 2.0, 1).unwrap(), (1.3, 2.0));
        let s = 1.25f64.sqrt();
        let (a, b) = recursive_norms(s, s, 2).unwrap();
        assert!((a * b - 2.5).abs() < 1e-14);
        assert!((recursive_norms(1.2, 1.0, 4).unwrap().0 - 2.4).abs() < 1e-15);
        assert!(recursive_norms(1.0, 1.0, 0).is_err());
    }

    #[test]
    fn dense_recursion_is_valid() {
        for n1 in [2usize, 3, 4] {
            let (b1, c1) = optimal_pair(n1);
            for levels in 1..=3 {
                let rf = RecursiveFactorization::new(b1.clone(), c1.clone(), levels).unwrap();
                if rf.n() > 64 {
                    continue;
                }
                let b = rf.dense_b().unwrap();
                let c = rf.dense_c().unwrap();
                assert_eq!((b.rows(), b.cols()), (rf.n(), rf.n_prime()));
                assert!(b.matmul(&c).unwrap().max_abs_diff(&Matrix::all_ones_lower(rf.n())) <= 1e-8);
                let (s, rb) = rf.norms().unwrap();
                assert!((c.max_col_norm() - s).abs() <= 1e-10 * s);
                assert!(b.max_row_norm() <= rb * (1.0 + 1e-10));
            }
        }
    }

    #[test]
    fn binary_tree_max_err() {
        for levels in 0..=6 {
            let (b, c) = binary_tree_dense(levels).unwrap();
            let n = 1usize << levels;
            assert!(b.matmul(&c).unwrap().max_abs_diff(&Matrix::all_ones_lower(n)) < 1e-12);
            let me = b.max_row_norm() * c.max_col_norm();
            assert!((me - crate::error_eval::bintree(n)).abs() < 1e-12);
        }
    }

    #[test]
    fn params_examples() {
        let p = theorem2_params(1_000_000).unwrap();
        assert_eq!((p.n1, p.levels), (14, 6));
        let p = theorem2_params(25).unwrap();
        assert_eq!((p.n1, p.levels), (5, 2));
        let pi = std::f64::consts::PI;
        let want = (2.0 + ((12.0 + 4.0 * 5f64.ln()) / pi).powi(2)).ceil() as usize;
        assert_eq!(p.d, want);
        assert!(theorem2_params(24).is_err());
    }

    fn stream_all(factory: Arc<dyn BaseFactory>, levels: usize, m: usize, seed: u64) -> (Matrix, KeyedGaussian, usize) {
        let mut s = RecursiveStream::new(factory, levels, m).unwrap();
        let mut noise = KeyedGaussian::new(seed, s.n_prime(), m, 1.0);
        let mut rows = Vec::new();
        let mut peak = 0;
        while let Some(r) = s.next_row(&mut noise).unwrap() {
            peak = peak.max(s.state_bytes());
            rows.extend(r);
        }
        (Matrix::from_vec(s.n(), m, rows).unwrap(), noise, peak)
    }

    #[test]
    fn stream_matches_dense_for_optimal_base() {
        for n1 in [2usize, 3, 4] {
            for levels in 1..=3 {
                for m in [1usize, 4] {
                    let (b1, c1) = optimal_pair(n1);
                    let rf = RecursiveFactorization::new(b1.clone(), c1, levels).unwrap();
                    if rf.n() > 64 {
                        continue;
                    }
                    let (got, noise, _) = stream_all(Arc::new(DenseBase::new(b1)), levels, m, 5);
                    let want = rf.dense_b().unwrap().matmul(&noise.dense()).unwrap();
                    assert!(got.max_abs_diff(&want) <= 1e-10, "n1={n1} l={levels} m={m}");
                    assert!(noise.read_counts().iter().all(|&c| c <= 1));
                }
            }
        }
    }

    #[test]
    fn stream_matches_dense_for_blt_base() {
        let base = ra_blt_build(3, 3).unwrap();
        let rf = RecursiveFactorization::from_blt(&base, 3, 2).unwrap();
        let factory = Arc::new(BltBase::new(base, 3).unwrap());
        let (got, noise, peak) = stream_all(factory, 2, 2, 9);
        let want = rf.dense_b().unwrap().matmul(&noise.dense()).unwrap();
        assert_eq!(got.rows(), 9);
        assert!(got.max_abs_diff(&want) <= 1e-9);
        // Two base states of 3 buffers plus running sums, and one carried row.
        assert!(peak <= 2 * (3 + 1) * 2 * 8 + 2 * 8);
    }

    #[test]
    fn single_level_equals_base() {
        let base = ra_blt_build(5, 6).unwrap();
        let factory: Arc<dyn BaseFactory> = Arc::new(BltBase::new(base.clone(), 6).unwrap());
        let (got, noise, _) = stream_all(factory, 1, 3, 2);
        let b = base.b_coeffs(6).unwrap();
        let want = crate::seq_core::ltt_apply_dense(&b, &noise.dense()).unwrap();
        assert!(got.max_abs_diff(&want) < 1e-12);
    }

    #[test]
    fn exhausted_noise_is_reported() {
        let (b1, _) = optimal_pair(2);
        let mut s = RecursiveStream::new(Arc::new(DenseBase::new(b1)), 2, 1).unwrap();
        let mut noise = KeyedGaussian::new(0, 2, 1, 1.0);
        assert!(s.next_row(&mut noise).unwrap().is_some());
        assert!(matches!(s.next_row(&mut noise), Err(Error::Exhausted { rows: 2 })));
    }

    #[test]
    fn mechanism_bound_at_ten_thousand() {
        let mech = recursive_mechanism(10_000).unwrap();
        let p = mech.params;
        assert_eq!((p.n1, p.levels), (10, 4));
        let ln1 = (p.n1 as f64).ln();
        let lb = crate::error_eval::matousek_lb(10_000);
        let rhs = lb * (1.0 + 3.0 * std::f64::consts::PI / ln1) + 4.0 + 3.0 / ln1 + ln1 / std::f64::consts::PI;
        assert!(mech.max_err_bound() <= rhs);
        let opt1 = crate::error_eval::opt_lt_toe(p.n1).unwrap();
        let slack = 16.0 * (p.n1 as f64).sqrt() * (-(std::f64::consts::PI / 2.0) * ((p.d - 2) as f64).sqrt()).exp();
        assert!(mech.max_err_bound() <= p.levels as f64 * (opt1.sqrt() + slack).powi(2));
    }

    #[test]
    fn toeplitz_base_dimensions() {
        let t = ToeplitzSeq::new(vec![1.0, 0.5]).unwrap();
        let rf = RecursiveFactorization::new(t.to_dense().unwrap(), t.to_dense().unwrap(), 3).unwrap();
        assert_eq!((rf.n(), rf.n_prime()), (8, 14));
        assert!(RecursiveFactorization::new(Matrix::identity(2), Matrix::identity(3), 1).is_err());
    }
}
