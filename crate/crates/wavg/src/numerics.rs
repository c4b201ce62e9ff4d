//! Shared numerical plumbing: reproducible RNG streams, a small dense
//! matrix type with SPD inversion, and a couple of statistics helpers.
//!
//! Everything here is sized for the workloads upstream modules actually
//! produce: model dimension stays at or below [`MAX_MODEL_DIM`], and the
//! iterate-covariance matrices built by the weight solver stay at or
//! below a few hundred rows, so a textbook Cholesky with explicit pivot
//! tracking beats pulling in a full linear-algebra stack.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Ridge added to a nearly singular matrix before inversion when the
/// caller does not specify one.
pub const DEFAULT_RIDGE: f64 = 1e-8;

/// Largest supported model dimension. Covariance matrices over iterates
/// (n-by-n, n up to a few hundred) are exempt; the cap applies to the
/// parameter dimension of the optimization problem.
pub const MAX_MODEL_DIM: usize = 64;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Counter-based random stream: a (seed, stream id) pair fully determines
/// the draw sequence, so replications can run in parallel and still match
/// a serial run bit for bit. Replication r conventionally uses stream id r.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        RngStream {
            seed,
            stream,
            inner,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// A fresh stream derived from this one's identity (not its position).
    /// Derived ids live in the upper half of the id space so they cannot
    /// collide with low-numbered replication streams.
    pub fn derive(&self, tag: u64) -> RngStream {
        let id = splitmix64(splitmix64(self.stream) ^ tag) | (1 << 63);
        RngStream::new(self.seed, id)
    }

    /// One standard normal draw (ziggurat, deterministic per stream).
    pub fn standard_normal(&mut self) -> f64 {
        use rand_distr::Distribution;
        rand_distr::StandardNormal.sample(&mut self.inner)
    }

    /// Uniform draw on [0, 1).
    pub fn uniform(&mut self) -> f64 {
        use rand::Rng;
        self.inner.gen::<f64>()
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.inner.fill_bytes(dest)
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> std::result::Result<(), rand::Error> {
        self.inner.try_fill_bytes(dest)
    }
}

/// d independent standard normal draws.
pub fn gaussian_vector(rng: &mut RngStream, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.standard_normal()).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Row-major dense matrix. Small and boring on purpose.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix {
    nrows: usize,
    ncols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        DenseMatrix {
            nrows,
            ncols,
            data: vec![0.0; nrows * ncols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = DenseMatrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_diag(d: &[f64]) -> Self {
        let mut m = DenseMatrix::zeros(d.len(), d.len());
        for (i, &v) in d.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn is_square(&self) -> bool {
        self.nrows == self.ncols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.ncols..(i + 1) * self.ncols]
    }

    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.ncols, v.len());
        (0..self.nrows).map(|i| dot(self.row(i), v)).collect()
    }

    pub fn matmul(&self, other: &DenseMatrix) -> DenseMatrix {
        assert_eq!(self.ncols, other.nrows);
        let mut out = DenseMatrix::zeros(self.nrows, other.ncols);
        for i in 0..self.nrows {
            for k in 0..self.ncols {
                let aik = self[(i, k)];
                if aik == 0.0 {
                    continue;
                }
                for j in 0..other.ncols {
                    out[(i, j)] += aik * other[(k, j)];
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.ncols, self.nrows);
        for i in 0..self.nrows {
            for j in 0..self.ncols {
                out[(j, i)] = self[(i, j)];
            }
        }
        out
    }

    /// Replace self by (self + self^T)/2.
    pub fn symmetrize(&mut self) {
        assert!(self.is_square());
        for i in 0..self.nrows {
            for j in (i + 1)..self.ncols {
                let v = 0.5 * (self[(i, j)] + self[(j, i)]);
                self[(i, j)] = v;
                self[(j, i)] = v;
            }
        }
    }

    /// Rank-one update: self += scale * v v^T.
    pub fn add_outer(&mut self, v: &[f64], scale: f64) {
        debug_assert_eq!(self.nrows, v.len());
        debug_assert_eq!(self.ncols, v.len());
        for i in 0..v.len() {
            let s = scale * v[i];
            let row = &mut self.data[i * self.ncols..(i + 1) * self.ncols];
            for j in 0..v.len() {
                row[j] += s * v[j];
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    pub fn add_assign(&mut self, other: &DenseMatrix) {
        assert_eq!(self.nrows, other.nrows);
        assert_eq!(self.ncols, other.ncols);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs_offdiag(&self) -> f64 {
        assert!(self.is_square());
        let mut m = 0.0f64;
        for i in 0..self.nrows {
            for j in 0..self.ncols {
                if i != j {
                    m = m.max(self[(i, j)].abs());
                }
            }
        }
        m
    }

    pub fn min_diag(&self) -> f64 {
        assert!(self.is_square());
        (0..self.nrows)
            .map(|i| self[(i, i)])
            .fold(f64::INFINITY, f64::min)
    }
}

impl std::ops::Index<(usize, usize)> for DenseMatrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.ncols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for DenseMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.ncols + j]
    }
}

/// Lower Cholesky factor plus the smallest pivot seen. Returns None for
/// the factor when a pivot is non-positive or non-finite; the offending
/// pivot is still reported.
fn cholesky_lower(m: &DenseMatrix) -> (Option<DenseMatrix>, f64) {
    let n = m.nrows();
    let mut l = DenseMatrix::zeros(n, n);
    let mut min_pivot = f64::INFINITY;
    for j in 0..n {
        let mut d = m[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        min_pivot = min_pivot.min(d);
        if !(d > 0.0) || !d.is_finite() {
            return (None, min_pivot);
        }
        let root = d.sqrt();
        l[(j, j)] = root;
        for i in (j + 1)..n {
            let mut s = m[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / root;
        }
    }
    (Some(l), min_pivot)
}

/// Inverse of a lower-triangular matrix by forward substitution.
fn invert_lower(l: &DenseMatrix) -> DenseMatrix {
    let n = l.nrows();
    let mut y = DenseMatrix::zeros(n, n);
    for j in 0..n {
        y[(j, j)] = 1.0 / l[(j, j)];
        for i in (j + 1)..n {
            let mut s = 0.0;
            for k in j..i {
                s += l[(i, k)] * y[(k, j)];
            }
            y[(i, j)] = -s / l[(i, i)];
        }
    }
    y
}

/// Inverse of a symmetric positive definite matrix via Cholesky.
///
/// The input is symmetrized first. A ridge of `ridge * I` is added only
/// when the plain factorization produces a pivot below `ridge`; if the
/// ridged matrix still fails to factor, the error reports the smallest
/// pivot encountered so the caller can see how indefinite the input was.
pub fn invert_spd(m: &DenseMatrix, ridge: f64) -> Result<DenseMatrix> {
    assert!(m.is_square(), "invert_spd needs a square matrix");
    let mut sym = m.clone();
    sym.symmetrize();

    let (mut factor, mut min_pivot) = cholesky_lower(&sym);
    if factor.is_none() || min_pivot < ridge {
        if ridge > 0.0 {
            for i in 0..sym.nrows() {
                sym[(i, i)] += ridge;
            }
            let (f, p) = cholesky_lower(&sym);
            factor = f;
            min_pivot = p;
        } else if factor.is_some() {
            // ridge == 0 and all pivots positive: keep the plain factor.
        } else {
            return Err(Error::NotSpd { min_pivot });
        }
    }
    let l = factor.ok_or(Error::NotSpd { min_pivot })?;

    let y = invert_lower(&l);
    // A^{-1} = Y^T Y with Y = L^{-1}; accumulate the upper triangle only.
    let n = y.nrows();
    let mut inv = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let mut s = 0.0;
            for k in j..n {
                s += y[(k, i)] * y[(k, j)];
            }
            inv[(i, j)] = s;
            inv[(j, i)] = s;
        }
    }
    Ok(inv)
}

/// Kolmogorov-Smirnov distance between the empirical distribution of a
/// sorted sample and the standard normal.
pub fn ks_distance(sorted_sample: &[f64]) -> f64 {
    assert!(!sorted_sample.is_empty(), "ks_distance needs a sample");
    debug_assert!(
        sorted_sample.windows(2).all(|w| w[0] <= w[1]),
        "ks_distance expects a sorted sample"
    );
    let n = sorted_sample.len() as f64;
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut d = 0.0f64;
    for (i, &x) in sorted_sample.iter().enumerate() {
        let phi = normal.cdf(x);
        let hi = (i as f64 + 1.0) / n - phi;
        let lo = phi - i as f64 / n;
        d = d.max(hi).max(lo);
    }
    d
}

/// Standard normal CDF.
pub fn std_normal_cdf(x: f64) -> f64 {
    Normal::new(0.0, 1.0).unwrap().cdf(x)
}

/// Standard normal quantile function.
pub fn std_normal_quantile(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "quantile needs p in (0,1)");
    Normal::new(0.0, 1.0).unwrap().inverse_cdf(p)
}

/// Standard normal density.
pub fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}
