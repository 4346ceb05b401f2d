//! Small dense complex linear algebra and reproducible random streams.
//!
//! Everything here is sized for the matrices this simulator actually touches
//! (N <= ~50): plain row-major storage, Cholesky solves, and a Jacobi
//! eigensolver used as the fallback square root for semidefinite correlation
//! matrices. No BLAS, no allocator tricks.

use crate::error::{Error, Result};
pub use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);

/// Dense complex matrix, row-major. Dimensions are fixed at construction.
#[derive(Clone, Debug, PartialEq)]
pub struct CMat {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
}

impl CMat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        CMat { rows, cols, data: vec![ZERO; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = CMat::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = ONE;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut m = CMat::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                m[(r, c)] = f(r, c);
            }
        }
        m
    }

    /// Column vector from a slice.
    pub fn col_vec(v: &[C64]) -> Self {
        CMat { rows: v.len(), cols: 1, data: v.to_vec() }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[C64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    /// Conjugate transpose.
    pub fn herm(&self) -> CMat {
        CMat::from_fn(self.cols, self.rows, |r, c| self[(c, r)].conj())
    }

    pub fn matmul(&self, b: &CMat) -> CMat {
        assert_eq!(self.cols, b.rows, "matmul shape {}x{} * {}x{}", self.rows, self.cols, b.rows, b.cols);
        let mut out = CMat::zeros(self.rows, b.cols);
        for r in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(r, k)];
                if a == ZERO {
                    continue;
                }
                let brow = b.row(k);
                let orow = &mut out.data[r * b.cols..(r + 1) * b.cols];
                for c in 0..b.cols {
                    orow[c] += a * brow[c];
                }
            }
        }
        out
    }

    pub fn add(&self, b: &CMat) -> CMat {
        assert_eq!((self.rows, self.cols), (b.rows, b.cols));
        let mut out = self.clone();
        for (x, y) in out.data.iter_mut().zip(&b.data) {
            *x += *y;
        }
        out
    }

    pub fn sub(&self, b: &CMat) -> CMat {
        assert_eq!((self.rows, self.cols), (b.rows, b.cols));
        let mut out = self.clone();
        for (x, y) in out.data.iter_mut().zip(&b.data) {
            *x -= *y;
        }
        out
    }

    pub fn scale(&self, s: C64) -> CMat {
        let mut out = self.clone();
        for x in out.data.iter_mut() {
            *x *= s;
        }
        out
    }

    pub fn trace(&self) -> C64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn frob_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Largest |A[r][c] - conj(A[c][r])| over all pairs.
    pub fn herm_asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for r in 0..self.rows {
            for c in 0..self.cols {
                worst = worst.max((self[(r, c)] - self[(c, r)].conj()).norm());
            }
        }
        worst
    }

    fn require_hermitian(&self) -> Result<()> {
        if self.rows != self.cols {
            return Err(Error::DimensionMismatch(format!(
                "hermitian op on {}x{} matrix",
                self.rows, self.cols
            )));
        }
        let asym = self.herm_asymmetry();
        let scale = 1.0 + self.frob_norm();
        if asym > 1e-10 * scale {
            return Err(Error::NotHermitian(asym / scale));
        }
        Ok(())
    }

    /// Lower Cholesky factor L with A = L*L^H. Fails on non-Hermitian input or
    /// a nonpositive pivot.
    pub fn cholesky(&self) -> Result<CMat> {
        self.require_hermitian()?;
        let n = self.rows;
        let mut l = CMat::zeros(n, n);
        for j in 0..n {
            let mut d = self[(j, j)].re;
            for k in 0..j {
                d -= l[(j, k)].norm_sqr();
            }
            if d <= 0.0 || !d.is_finite() {
                return Err(Error::NotPositiveDefinite(d, j));
            }
            let dj = d.sqrt();
            l[(j, j)] = C64::new(dj, 0.0);
            for i in (j + 1)..n {
                let mut s = self[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)].conj();
                }
                l[(i, j)] = s / dj;
            }
        }
        Ok(l)
    }

    /// Solves A*X = B for Hermitian positive-definite A via Cholesky.
    pub fn hermitian_solve(&self, b: &CMat) -> Result<CMat> {
        if self.rows != b.rows {
            return Err(Error::DimensionMismatch(format!(
                "solve: A is {}x{}, B is {}x{}",
                self.rows, self.cols, b.rows, b.cols
            )));
        }
        let l = self.cholesky()?;
        let n = self.rows;
        let mut x = b.clone();
        // forward: L*Y = B
        for c in 0..x.cols {
            for i in 0..n {
                let mut s = x[(i, c)];
                for k in 0..i {
                    s -= l[(i, k)] * x[(k, c)];
                }
                x[(i, c)] = s / l[(i, i)].re;
            }
        }
        // backward: L^H*X = Y
        for c in 0..x.cols {
            for i in (0..n).rev() {
                let mut s = x[(i, c)];
                for k in (i + 1)..n {
                    s -= l[(k, i)].conj() * x[(k, c)];
                }
                x[(i, c)] = s / l[(i, i)].re;
            }
        }
        Ok(x)
    }

    /// Eigendecomposition of a Hermitian matrix by cyclic Jacobi rotations.
    /// Returns (eigenvalues, V) with A = V * diag(vals) * V^H.
    pub fn hermitian_eigen(&self) -> Result<(Vec<f64>, CMat)> {
        self.require_hermitian()?;
        let n = self.rows;
        let mut a = self.clone();
        // symmetrize so rotation arithmetic sees an exactly Hermitian matrix
        for r in 0..n {
            a[(r, r)] = C64::new(a[(r, r)].re, 0.0);
            for c in (r + 1)..n {
                let avg = (a[(r, c)] + a[(c, r)].conj()) * 0.5;
                a[(r, c)] = avg;
                a[(c, r)] = avg.conj();
            }
        }
        let mut v = CMat::identity(n);
        let tol = 1e-14 * (1.0 + a.frob_norm());
        for _sweep in 0..60 {
            let mut off = 0.0f64;
            for p in 0..n {
                for q in (p + 1)..n {
                    off += a[(p, q)].norm_sqr();
                }
            }
            if off.sqrt() <= tol {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    let g = a[(p, q)];
                    let gn = g.norm();
                    if gn <= tol * 1e-2 {
                        continue;
                    }
                    let phase = g / gn;
                    let alpha = a[(p, p)].re;
                    let beta = a[(q, q)].re;
                    let tau = (beta - alpha) / (2.0 * gn);
                    let t = if tau >= 0.0 {
                        1.0 / (tau + (1.0 + tau * tau).sqrt())
                    } else {
                        -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                    };
                    let c = 1.0 / (1.0 + t * t).sqrt();
                    let s = t * c;
                    let jpq = phase * s; // J[p][q]
                    let jqp = -phase.conj() * s; // J[q][p]
                    // A <- A*J on columns p,q
                    for i in 0..n {
                        let aip = a[(i, p)];
                        let aiq = a[(i, q)];
                        a[(i, p)] = aip * c + aiq * jqp;
                        a[(i, q)] = aip * jpq + aiq * c;
                    }
                    // A <- J^H*A on rows p,q
                    for j in 0..n {
                        let apj = a[(p, j)];
                        let aqj = a[(q, j)];
                        a[(p, j)] = apj * c + aqj * jqp.conj();
                        a[(q, j)] = apj * jpq.conj() + aqj * c;
                    }
                    // V <- V*J
                    for i in 0..n {
                        let vip = v[(i, p)];
                        let viq = v[(i, q)];
                        v[(i, p)] = vip * c + viq * jqp;
                        v[(i, q)] = vip * jpq + viq * c;
                    }
                }
            }
        }
        let vals = (0..n).map(|i| a[(i, i)].re).collect();
        Ok((vals, v))
    }

    /// Hermitian square root S with S*S^H = A, for positive semidefinite A.
    /// Tries Cholesky first; rank-deficient inputs fall back to the
    /// eigendecomposition with small negatives clamped to zero.
    pub fn psd_sqrt(&self) -> Result<CMat> {
        if let Ok(l) = self.cholesky() {
            return Ok(l);
        }
        let (vals, v) = self.hermitian_eigen()?;
        let tr: f64 = vals.iter().sum();
        let floor = 1e-12 * tr.abs().max(f64::MIN_POSITIVE);
        let mut clamped = Vec::with_capacity(vals.len());
        for &lam in &vals {
            if lam < -1e-10 * (1.0 + tr.abs()) {
                return Err(Error::NotPsd(lam));
            }
            clamped.push(if lam <= floor { 0.0 } else { lam });
        }
        let n = self.rows;
        let mut s = CMat::zeros(n, n);
        for c in 0..n {
            let sq = clamped[c].sqrt();
            for r in 0..n {
                s[(r, c)] = v[(r, c)] * sq;
            }
        }
        Ok(s)
    }
}

impl std::ops::Index<(usize, usize)> for CMat {
    type Output = C64;
    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &C64 {
        &self.data[r * self.cols + c]
    }
}

impl std::ops::IndexMut<(usize, usize)> for CMat {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut C64 {
        &mut self.data[r * self.cols + c]
    }
}

/// Identifies one independent substream of the campaign RNG. Streams with
/// distinct ids never share state, and scheduling order cannot leak between
/// them, so results are reproducible under any worker count.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StreamId {
    pub setup: u32,
    pub block: u32,
    /// role of the stream within a (setup, block) cell: payload bits, channel
    /// draws, noise, phases, ... (see `simulator::streams`)
    pub sub: u32,
}

/// ChaCha12-backed generator keyed by (seed, stream id).
pub struct RandomStream {
    rng: ChaCha12Rng,
}

impl RandomStream {
    pub fn new(seed: u64, id: StreamId) -> Self {
        let mut key = [0u8; 32];
        key[0..8].copy_from_slice(&seed.to_le_bytes());
        key[8..12].copy_from_slice(&id.setup.to_le_bytes());
        key[12..16].copy_from_slice(&id.block.to_le_bytes());
        key[16..20].copy_from_slice(&id.sub.to_le_bytes());
        key[20..32].copy_from_slice(b"cfdiff.rng.1");
        RandomStream { rng: ChaCha12Rng::from_seed(key) }
    }

    /// Uniform in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn std_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Circularly symmetric complex Gaussian with E|z|^2 = variance.
    pub fn complex_gaussian(&mut self, variance: f64) -> C64 {
        let s = (variance * 0.5).sqrt();
        C64::new(s * self.std_normal(), s * self.std_normal())
    }

    /// Uniform integer in [0, n).
    pub fn index(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    /// One uniformly random bit.
    pub fn bit(&mut self) -> u8 {
        (self.rng.next_u32() & 1) as u8
    }
}

use rand::RngCore;

/// Draws h = S*z with z standard circular complex Gaussian and S a square
/// root of R, so that E{h h^H} = R.
pub fn sample_complex_gaussian(r: &CMat, rng: &mut RandomStream) -> Result<CMat> {
    let s = r.psd_sqrt()?;
    Ok(sample_with_sqrt(&s, rng))
}

/// Same as `sample_complex_gaussian` but with the square root precomputed;
/// the hot path for per-block channel draws.
pub fn sample_with_sqrt(s: &CMat, rng: &mut RandomStream) -> CMat {
    let n = s.rows();
    let z: Vec<C64> = (0..n).map(|_| rng.complex_gaussian(1.0)).collect();
    let mut h = vec![ZERO; n];
    for r in 0..n {
        let row = s.row(r);
        let mut acc = ZERO;
        for c in 0..n {
            acc += row[c] * z[c];
        }
        h[r] = acc;
    }
    CMat::col_vec(&h)
}
