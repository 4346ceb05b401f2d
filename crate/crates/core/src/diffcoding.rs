//! Differential transmission over unitary space-time codewords and scalar
//! DPSK, plus the coherent PSK detector used as the baseline.
//!
//! The differential chain C^t = C^{t-1} X^t starts at the identity and stays
//! unitary as long as every codeword X^t is unitary, so a receiver can decode
//! X^t from two consecutive observation windows without knowing the channel
//! or any common phase rotating it. That is the property that makes these
//! schemes immune to per-transmitter oscillator drift.

use crate::error::{Error, Result};
use crate::math::{CMat, C64, ZERO};

/// M-ary PSK with a bit label per point. `points[i]` sits at angle
/// 2*pi*i/M; default labels are the reflected binary (Gray) code, so
/// neighbouring points differ in exactly one bit.
#[derive(Clone, Debug)]
pub struct PskConstellation {
    pub points: Vec<C64>,
    pub labels: Vec<u32>,
}

impl PskConstellation {
    /// Gray-labelled M-PSK. M must be a power of two (bit labels would make
    /// no sense otherwise).
    pub fn new(m: usize) -> PskConstellation {
        assert!(m >= 2 && m.is_power_of_two(), "PSK order must be a power of two");
        PskConstellation {
            points: (0..m)
                .map(|i| C64::from_polar(1.0, std::f64::consts::TAU * i as f64 / m as f64))
                .collect(),
            labels: (0..m as u32).map(|i| i ^ (i >> 1)).collect(),
        }
    }

    /// Same points, custom labels. The labels must be a permutation of
    /// 0..M or bit counting would be ill-defined.
    pub fn with_labels(m: usize, labels: Vec<u32>) -> Result<PskConstellation> {
        let mut seen = vec![false; m];
        if labels.len() != m {
            return Err(Error::MappingNotBijective);
        }
        for &g in &labels {
            if g as usize >= m || seen[g as usize] {
                return Err(Error::MappingNotBijective);
            }
            seen[g as usize] = true;
        }
        let mut c = PskConstellation::new(m);
        c.labels = labels;
        Ok(c)
    }

    pub fn order(&self) -> usize {
        self.points.len()
    }

    pub fn bits_per_symbol(&self) -> u32 {
        self.points.len().trailing_zeros()
    }

    /// Hamming distance between the labels of two point indices.
    pub fn bit_errors(&self, a: usize, b: usize) -> u32 {
        (self.labels[a] ^ self.labels[b]).count_ones()
    }
}

/// One cell of a linear space-time design:
/// codeword[row][col] = sign * s[sym], conjugated when `conj` is set.
#[derive(Clone, Copy, Debug)]
pub struct DesignEntry {
    pub row: usize,
    pub col: usize,
    pub sym: usize,
    pub conj: bool,
    pub sign: f64,
}

/// A P x P unitary design carrying `ns` symbols per codeword, stored as the
/// list of its nonzero cells. Row r is what the transmitter mapped to row r
/// sends over the P uses of the codeword.
#[derive(Clone, Debug)]
pub struct StbcDesign {
    pub p: usize,
    pub ns: usize,
    pub entries: Vec<DesignEntry>,
}

impl StbcDesign {
    /// The classic 2x2 full-rate orthogonal design,
    /// X = [[s1, s2*], [s2, -s1*]] / sqrt(2).
    pub fn alamouti() -> StbcDesign {
        StbcDesign::from_table(
            2,
            2,
            &[
                (0, 0, 0, false, 1.0),
                (1, 1, 0, true, -1.0),
                (1, 0, 1, false, 1.0),
                (0, 1, 1, true, 1.0),
            ],
        )
    }

    /// 4x4 orthogonal design carrying three symbols (rate 3/4):
    ///
    /// ```text
    /// [  s1    0    s2  -s3* ]
    /// [  0     s1   s3   s2* ]   / sqrt(3)
    /// [ -s2*  -s3*  s1*  0   ]
    /// [  s3   -s2   0    s1* ]
    /// ```
    pub fn rate34() -> StbcDesign {
        StbcDesign::from_table(
            4,
            3,
            &[
                (0, 0, 0, false, 1.0),
                (1, 1, 0, false, 1.0),
                (2, 2, 0, true, 1.0),
                (3, 3, 0, true, 1.0),
                (0, 2, 1, false, 1.0),
                (1, 3, 1, true, 1.0),
                (2, 0, 1, true, -1.0),
                (3, 1, 1, false, -1.0),
                (0, 3, 2, true, -1.0),
                (1, 2, 2, false, 1.0),
                (2, 1, 2, true, -1.0),
                (3, 0, 2, false, 1.0),
            ],
        )
    }

    fn from_table(p: usize, ns: usize, t: &[(usize, usize, usize, bool, f64)]) -> StbcDesign {
        StbcDesign {
            p,
            ns,
            entries: t
                .iter()
                .map(|&(row, col, sym, conj, sign)| DesignEntry { row, col, sym, conj, sign })
                .collect(),
        }
    }

    /// Symbols carried per channel use.
    pub fn rate(&self) -> f64 {
        self.ns as f64 / self.p as f64
    }

    /// Structural checks for hand-built tables: indices in range, no cell
    /// written twice, every symbol used somewhere.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::UnsupportedDesign(msg));
        if self.p == 0 || self.ns == 0 {
            return bad("empty design".into());
        }
        let mut cell = vec![false; self.p * self.p];
        let mut used = vec![false; self.ns];
        for e in &self.entries {
            if e.row >= self.p || e.col >= self.p {
                return bad(format!("cell ({}, {}) outside a {0}x{0} codeword", e.row, e.col));
            }
            if e.sym >= self.ns {
                return bad(format!("symbol index {} out of range", e.sym));
            }
            if cell[e.row * self.p + e.col] {
                return bad(format!("cell ({}, {}) written twice", e.row, e.col));
            }
            cell[e.row * self.p + e.col] = true;
            used[e.sym] = true;
        }
        if let Some(j) = used.iter().position(|u| !u) {
            return bad(format!("symbol {j} never placed"));
        }
        Ok(())
    }
}

/// Fills a design with concrete unit-modulus symbols and scales by
/// 1/sqrt(ns) so the codeword is exactly unitary.
pub fn stbc_map(design: &StbcDesign, s: &[C64]) -> Result<CMat> {
    design.validate()?;
    if s.len() != design.ns {
        return Err(Error::WrongSymbolCount { got: s.len(), need: design.ns });
    }
    for z in s {
        if (z.norm() - 1.0).abs() > 1e-8 {
            return Err(Error::NonUnitModulus(z.norm()));
        }
    }
    let mut x = CMat::zeros(design.p, design.p);
    for e in &design.entries {
        let v = if e.conj { s[e.sym].conj() } else { s[e.sym] };
        x[(e.row, e.col)] = v * e.sign;
    }
    Ok(x.scale(C64::new(1.0 / (design.ns as f64).sqrt(), 0.0)))
}

/// One differential step, C^t = C^{t-1} * X^t. The previous state must still
/// be unitary; anything else means the chain was corrupted upstream.
pub fn diff_encode_step(c_prev: &CMat, x: &CMat) -> Result<CMat> {
    let p = c_prev.rows();
    if c_prev.cols() != p || x.rows() != p || x.cols() != p {
        return Err(Error::DimensionMismatch(format!(
            "differential step wants square {p}x{p} factors"
        )));
    }
    let dev = c_prev.herm().matmul(c_prev).sub(&CMat::identity(p)).frob_norm();
    if dev > 1e-8 {
        return Err(Error::NonUnitaryInput(dev));
    }
    Ok(c_prev.matmul(x))
}

fn argmax_re(cons: &PskConstellation, g: C64) -> usize {
    let mut best = 0usize;
    let mut bv = (cons.points[0] * g).re;
    for (m, &pt) in cons.points.iter().enumerate().skip(1) {
        let v = (pt * g).re;
        if v > bv {
            best = m;
            bv = v;
        }
    }
    best
}

/// ML detection of the symbols inside one differential codeword, done per
/// symbol. The correlation matrix D[r][c] = y_prev[r] * conj(y_cur[c]) is
/// linear in the codeword cells, so the decoding metric splits into one
/// independent term per symbol:
///
///   gamma_j = sum over j's plain cells of sign * D[row][col]
///           + conj(sum over j's conjugated cells of sign * D[row][col]),
///
/// and the ML choice is argmax_s Re{ s * gamma_j }, scanned exhaustively with
/// ties to the lowest index. Needs no channel knowledge at all.
pub fn dstbc_ml_decode_fast(
    y_prev: &[C64],
    y_cur: &[C64],
    design: &StbcDesign,
    cons: &PskConstellation,
) -> Result<Vec<usize>> {
    design.validate()?;
    if cons.points.is_empty() {
        return Err(Error::EmptyCodebook);
    }
    if y_prev.len() != design.p || y_cur.len() != design.p {
        return Err(Error::DimensionMismatch(format!(
            "observation windows must have {} samples",
            design.p
        )));
    }
    let mut gamma = vec![ZERO; design.ns];
    for e in &design.entries {
        let d = y_prev[e.row] * y_cur[e.col].conj() * e.sign;
        gamma[e.sym] += if e.conj { d.conj() } else { d };
    }
    Ok(gamma.iter().map(|&g| argmax_re(cons, g)).collect())
}

/// Reference decoder: walk the whole M^ns codebook in lexicographic order
/// (first symbol most significant) and keep the codeword maximising
/// Re sum_{r,c} y_prev[r] * X[r][c] * conj(y_cur[c]). Strict improvement
/// keeps the earliest maximiser, matching the fast decoder's tie rule.
pub fn dstbc_ml_decode_bruteforce(
    y_prev: &[C64],
    y_cur: &[C64],
    design: &StbcDesign,
    cons: &PskConstellation,
) -> Result<Vec<usize>> {
    design.validate()?;
    let m = cons.points.len();
    if m == 0 {
        return Err(Error::EmptyCodebook);
    }
    if y_prev.len() != design.p || y_cur.len() != design.p {
        return Err(Error::DimensionMismatch(format!(
            "observation windows must have {} samples",
            design.p
        )));
    }
    let total = m.pow(design.ns as u32);
    let mut idx = vec![0usize; design.ns];
    let mut best_idx = vec![0usize; design.ns];
    let mut best = f64::NEG_INFINITY;
    let mut syms = vec![ZERO; design.ns];
    for code in 0..total {
        let mut rem = code;
        for j in (0..design.ns).rev() {
            idx[j] = rem % m;
            rem /= m;
        }
        for j in 0..design.ns {
            syms[j] = cons.points[idx[j]];
        }
        let x = stbc_map(design, &syms)?;
        let mut metric = 0.0;
        for r in 0..design.p {
            for c in 0..design.p {
                metric += (y_prev[r] * x[(r, c)] * y_cur[c].conj()).re;
            }
        }
        if metric > best {
            best = metric;
            best_idx.copy_from_slice(&idx);
        }
    }
    Ok(best_idx)
}

/// Scalar differential step: the transmitted point is the previous one times
/// the data symbol, so information rides on phase increments.
pub fn dpsk_encode_step(c_prev: C64, s: C64) -> C64 {
    c_prev * s
}

/// ML differential detection from two consecutive scalar observations,
/// argmax_s Re{ s * conj(y_cur) * y_prev }, ties to the lowest index.
pub fn dpsk_ml_decode(y_prev: C64, y_cur: C64, cons: &PskConstellation) -> Result<usize> {
    if cons.points.is_empty() {
        return Err(Error::EmptyCodebook);
    }
    Ok(argmax_re(cons, y_cur.conj() * y_prev))
}

/// Coherent PSK detection by rounding the received phase to the nearest
/// sector. Half-sector boundaries round away from zero: +pi/M detects as
/// index 1, -pi/M as index M-1.
pub fn coherent_psk_detect(y: C64, m: usize) -> usize {
    let sector = y.arg() * m as f64 / std::f64::consts::TAU;
    (sector.round() as i64).rem_euclid(m as i64) as usize
}

/// Noiseless decodability identity. With row observations y^t = v C^t,
/// unitary state C and unitary codeword X, the decoding metric evaluated at
/// the true codeword collapses to the total effective gain:
///
///   sum_{r,c} y_prev[r] X[r][c] conj(y_cur[c]) = sum_r |v_r|^2,
///
/// with no dependence on the accumulated state or any common phase. Returns
/// the relative gap between the two sides.
pub fn appendix_identity_check(v: &[C64], c_prev: &CMat, x: &CMat) -> Result<f64> {
    let p = c_prev.rows();
    if v.len() != p || c_prev.cols() != p || x.rows() != p || x.cols() != p {
        return Err(Error::DimensionMismatch(
            "effective gains, state and codeword must share one dimension".into(),
        ));
    }
    let vm = CMat::from_fn(1, p, |_, c| v[c]);
    let y_prev = vm.matmul(c_prev);
    let y_cur = y_prev.matmul(x);
    let mut lhs = ZERO;
    for r in 0..p {
        for c in 0..p {
            lhs += y_prev[(0, r)] * x[(r, c)] * y_cur[(0, c)].conj();
        }
    }
    let rhs: f64 = v.iter().map(|z| z.norm_sqr()).sum();
    Ok((lhs - C64::new(rhs, 0.0)).norm() / rhs.max(f64::MIN_POSITIVE))
}
