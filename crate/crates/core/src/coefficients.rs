//! Coefficient fields `a_ij(x)`, `b_i(x)`: ellipticity, Hölder metadata,
//! the perturbation size `eta`, and the hypothesis checker.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::{self, domain, par_chunks, Rng, CHUNK};
use crate::spectrum::{check_beta, power_tail, Spectrum, State, Tail};

/// What a field looks like past its truncation level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum FieldTail {
    /// Every entry involving an index past the truncation is constant.
    Constant,
    /// A banded family that continues indefinitely with uniform bounds.
    Banded {
        band_m: usize,
        /// Nonconstant entries `a_ij` with `i <= j` per column.
        entries_per_column: usize,
        /// Number of nonconstant entries whose window contains a given coordinate.
        entries_per_coordinate: usize,
        window_len: usize,
        holder_sup: f64,
        lipschitz_sup: Option<f64>,
        b_holder_sup: f64,
    },
    Unknown,
}

/// Pointwise evaluators plus whatever regularity the model can declare.
///
/// Indices are zero-based. Coordinates past the end of `x` are zero.
pub trait FieldModel: Send + Sync + fmt::Debug {
    fn a(&self, x: &[f64], i: usize, j: usize) -> f64;
    fn b(&self, x: &[f64], i: usize) -> f64;

    /// Fills the leading `n x n` block of `a(x)` (row-major).
    fn a_block(&self, x: &[f64], n: usize, out: &mut [f64]) {
        for i in 0..n {
            for j in i..n {
                let v = self.a(x, i, j);
                out[i * n + j] = v;
                out[j * n + i] = v;
            }
        }
    }

    /// True if neither `a` nor `b` depends on `x`.
    fn is_constant(&self) -> bool {
        false
    }

    /// True if every `b_i` is constant in `x`.
    fn b_is_constant(&self) -> bool {
        self.is_constant()
    }

    /// Coordinates `a_ij` depends on; `Some(vec![])` means constant.
    fn window(&self, _i: usize, _j: usize) -> Option<Vec<usize>> {
        None
    }

    /// Declared `|a_ij|_{C^alpha}` relative to the Euclidean norm of the window.
    fn a_holder_bound(&self, _i: usize, _j: usize, _alpha: f64) -> Option<f64> {
        None
    }

    /// Declared Lipschitz constant of `a_ij`.
    fn a_lipschitz_bound(&self, _i: usize, _j: usize) -> Option<f64> {
        None
    }

    fn b_holder_bound(&self, _i: usize, _alpha: f64) -> Option<f64> {
        None
    }

    fn tail(&self, _alpha: f64) -> FieldTail {
        FieldTail::Unknown
    }

    /// Set for fields produced by the localization maps; gives the
    /// centre and cutoff radius.
    fn localization(&self) -> Option<(&State, f64)> {
        None
    }
}

#[derive(Clone)]
pub struct CoefficientField {
    dim: usize,
    model: Arc<dyn FieldModel>,
    gamma: f64,
    band_m: Option<usize>,
    holder_alpha: f64,
    id: String,
}

impl fmt::Debug for CoefficientField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CoefficientField")
            .field("id", &self.id)
            .field("dim", &self.dim)
            .field("gamma", &self.gamma)
            .field("band_m", &self.band_m)
            .field("holder_alpha", &self.holder_alpha)
            .finish()
    }
}

impl CoefficientField {
    /// Wraps a user-supplied model without validation.
    pub fn from_model(
        dim: usize,
        model: Arc<dyn FieldModel>,
        gamma: f64,
        holder_alpha: f64,
        band_m: Option<usize>,
        id: impl Into<String>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("dim", "must be at least 1"));
        }
        check_gamma(gamma)?;
        if !(holder_alpha > 0.0 && holder_alpha < 1.0) {
            return Err(invalid("alpha", format!("must lie in (0, 1), got {holder_alpha}")));
        }
        Ok(CoefficientField { dim, model, gamma, band_m, holder_alpha, id: id.into() })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn gamma(&self) -> f64 {
        self.gamma
    }
    pub fn band_m(&self) -> Option<usize> {
        self.band_m
    }
    pub fn holder_alpha(&self) -> f64 {
        self.holder_alpha
    }
    pub fn id(&self) -> &str {
        &self.id
    }
    pub fn model(&self) -> &Arc<dyn FieldModel> {
        &self.model
    }
    pub fn is_constant(&self) -> bool {
        self.model.is_constant()
    }

    pub fn a(&self, x: &[f64], i: usize, j: usize) -> f64 {
        self.model.a(x, i, j)
    }
    pub fn b(&self, x: &[f64], i: usize) -> f64 {
        self.model.b(x, i)
    }

    /// `a(x)` on the leading `n x n` block.
    pub fn a_matrix(&self, x: &[f64], n: usize) -> DMatrix<f64> {
        let mut buf = vec![0.0; n * n];
        self.model.a_block(x, n, &mut buf);
        DMatrix::from_row_slice(n, n, &buf)
    }

    /// Same field at a different truncation level.
    pub fn with_dim(&self, dim: usize) -> CoefficientField {
        CoefficientField { dim, ..self.clone() }
    }

    pub(crate) fn with_model(&self, model: Arc<dyn FieldModel>, id: String) -> CoefficientField {
        CoefficientField { model, id, ..self.clone() }
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(invalid("gamma", format!("must lie in (0, 1], got {gamma}")));
    }
    Ok(())
}

/// Tolerance for eigenvalues sitting on the ellipticity boundary.
const BOUNDARY_TOL: f64 = 1e-12;

fn check_range(quantity: String, value: f64, gamma: f64, witness: &[f64]) -> Result<()> {
    let (lo, hi) = (gamma, 1.0 / gamma);
    if value < lo - BOUNDARY_TOL || value > hi + BOUNDARY_TOL {
        return Err(Error::Ellipticity { quantity, value, lower: lo, upper: hi, witness: witness.to_vec() });
    }
    if value < lo || value > hi || (value - lo).abs() <= BOUNDARY_TOL || (value - hi).abs() <= BOUNDARY_TOL {
        log::warn!("{quantity} = {value} sits on the ellipticity boundary [{lo}, {hi}]");
    }
    Ok(())
}

fn symmetric_check(a: &DMatrix<f64>) -> Result<()> {
    if !a.is_square() {
        return Err(invalid("matrix", format!("must be square, got {}x{}", a.nrows(), a.ncols())));
    }
    let scale = a.amax().max(1.0);
    for i in 0..a.nrows() {
        for j in i + 1..a.ncols() {
            let gap = (a[(i, j)] - a[(j, i)]).abs();
            if gap > 1e-12 * scale || !gap.is_finite() {
                return Err(Error::NotSymmetric { i, j, gap });
            }
        }
    }
    Ok(())
}

fn eigen_extremes(a: &DMatrix<f64>) -> (f64, f64) {
    let e = SymmetricEigen::new(a.clone()).eigenvalues;
    (e.min(), e.max())
}

#[derive(Debug)]
struct ConstantModel {
    a0: DMatrix<f64>,
    b0: Vec<f64>,
}

impl FieldModel for ConstantModel {
    fn a(&self, _x: &[f64], i: usize, j: usize) -> f64 {
        if i < self.a0.nrows() && j < self.a0.ncols() {
            self.a0[(i, j)]
        } else {
            f64::from(u8::from(i == j))
        }
    }
    fn b(&self, _x: &[f64], i: usize) -> f64 {
        self.b0.get(i).copied().unwrap_or(1.0)
    }
    fn is_constant(&self) -> bool {
        true
    }
    fn window(&self, _i: usize, _j: usize) -> Option<Vec<usize>> {
        Some(Vec::new())
    }
    fn a_holder_bound(&self, _i: usize, _j: usize, _alpha: f64) -> Option<f64> {
        Some(0.0)
    }
    fn a_lipschitz_bound(&self, _i: usize, _j: usize) -> Option<f64> {
        Some(0.0)
    }
    fn b_holder_bound(&self, _i: usize, _alpha: f64) -> Option<f64> {
        Some(0.0)
    }
    fn tail(&self, _alpha: f64) -> FieldTail {
        FieldTail::Constant
    }
}

/// An `x`-independent field. Past its dimension it continues as the identity.
pub fn constant_field(a0: DMatrix<f64>, b0: Vec<f64>, gamma: f64) -> Result<CoefficientField> {
    check_gamma(gamma)?;
    symmetric_check(&a0)?;
    if b0.len() != a0.nrows() {
        return Err(invalid("b0", format!("length {} does not match a0 dimension {}", b0.len(), a0.nrows())));
    }
    let (lo, hi) = eigen_extremes(&a0);
    check_range("eigenvalue of a0".into(), lo, gamma, &[])?;
    check_range("eigenvalue of a0".into(), hi, gamma, &[])?;
    for (i, &b) in b0.iter().enumerate() {
        check_range(format!("b0[{i}]"), b, gamma, &[])?;
    }
    let n = a0.nrows();
    let model = Arc::new(ConstantModel { a0, b0 });
    CoefficientField::from_model(n, model, gamma, 0.5, None, format!("constant-{n}"))
}

/// Shape of the scalar driving a standard block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BlockKind {
    Constant,
    SinSum,
    TanhSum,
}

/// A map from the block window `u in R^{2L+N}` to a symmetric `N x N` matrix.
pub trait BlockGenerator: Send + Sync + fmt::Debug {
    /// Block for one-based index `k`; `out` is `N x N` row-major.
    fn block(&self, k: usize, u: &[f64], out: &mut [f64]);
    /// Declared `C^alpha` bound of local entry `(i, j)` when the window
    /// coordinates enter with multiplicities of Euclidean norm `mult`.
    fn entry_holder_bound(&self, i: usize, j: usize, mult: f64, alpha: f64) -> Option<f64>;
    fn entry_lipschitz_bound(&self, i: usize, j: usize, mult: f64) -> Option<f64>;
    /// Exact eigenvalue range over all inputs, when known.
    fn eigen_range(&self, n_block: usize) -> Option<(f64, f64)>;
    fn is_constant(&self) -> bool;
}

/// `(base + amplitude * s(sum u)) I + offdiag (J - I)` with `s` one of
/// `0`, `sin`, `tanh`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StandardBlock {
    pub kind: BlockKind,
    pub amplitude: f64,
    #[serde(default)]
    pub offdiag: f64,
    #[serde(default = "one")]
    pub base: f64,
}

fn one() -> f64 {
    1.0
}

impl StandardBlock {
    pub fn new(kind: BlockKind, amplitude: f64) -> Self {
        StandardBlock { kind, amplitude, offdiag: 0.0, base: 1.0 }
    }

    fn profile(&self, s: f64) -> f64 {
        match self.kind {
            BlockKind::Constant => 0.0,
            BlockKind::SinSum => s.sin(),
            BlockKind::TanhSum => s.tanh(),
        }
    }
}

impl BlockGenerator for StandardBlock {
    fn block(&self, _k: usize, u: &[f64], out: &mut [f64]) {
        let n = (out.len() as f64).sqrt().round() as usize;
        let d = self.base + self.amplitude * self.profile(u.iter().sum());
        for i in 0..n {
            for j in 0..n {
                out[i * n + j] = if i == j { d } else { self.offdiag };
            }
        }
    }

    fn entry_holder_bound(&self, i: usize, j: usize, mult: f64, alpha: f64) -> Option<f64> {
        // |s(a) - s(b)| <= min(2, |a - b|) <= 2^{1-alpha} |a - b|^alpha for sin
        // and tanh, and |sum u - sum v| <= |c| |u - v| by Cauchy-Schwarz.
        if i != j || self.kind == BlockKind::Constant {
            return Some(0.0);
        }
        Some(self.amplitude.abs() * 2f64.powf(1.0 - alpha) * mult.powf(alpha))
    }

    fn entry_lipschitz_bound(&self, i: usize, j: usize, mult: f64) -> Option<f64> {
        if i != j || self.kind == BlockKind::Constant {
            return Some(0.0);
        }
        Some(self.amplitude.abs() * mult)
    }

    fn eigen_range(&self, n_block: usize) -> Option<(f64, f64)> {
        let amp = match self.kind {
            BlockKind::Constant => 0.0,
            _ => self.amplitude.abs(),
        };
        let (dlo, dhi) = (self.base - amp, self.base + amp);
        if n_block == 1 {
            return Some((dlo, dhi));
        }
        // Eigenvalues d + (N-1) c and d - c.
        let c = self.offdiag;
        let shifts = [(n_block - 1) as f64 * c, -c];
        let lo = shifts.iter().map(|s| dlo + s).fold(f64::INFINITY, f64::min);
        let hi = shifts.iter().map(|s| dhi + s).fold(f64::NEG_INFINITY, f64::max);
        Some((lo, hi))
    }

    fn is_constant(&self) -> bool {
        self.kind == BlockKind::Constant || self.amplitude == 0.0
    }
}

/// Block-diagonal field over index blocks `I_k = {(k-1)N+1, ..., kN}` whose
/// `k`-th block reads the window `u_l = x_{max((k-1)N - L + l, 1)}`,
/// `l = 1..2L+N`; `b == 1`.
#[derive(Debug)]
pub struct BandedModel {
    n_block: usize,
    overlap: usize,
    gen: Arc<dyn BlockGenerator>,
}

impl BandedModel {
    pub fn new(n_block: usize, overlap: usize, gen: Arc<dyn BlockGenerator>) -> Result<Self> {
        if n_block == 0 {
            return Err(invalid("block_n", "must be positive"));
        }
        if overlap == 0 {
            return Err(invalid("overlap_l", "must be positive"));
        }
        Ok(BandedModel { n_block, overlap, gen })
    }

    pub fn band_m(&self) -> usize {
        self.overlap + self.n_block
    }

    fn window_len(&self) -> usize {
        2 * self.overlap + self.n_block
    }

    /// Zero-based coordinate indices read by one-based block `k`, with repeats.
    pub fn window_indices(&self, k: usize) -> impl Iterator<Item = usize> + '_ {
        let start = (k as i64 - 1) * self.n_block as i64 - self.overlap as i64;
        (1..=self.window_len() as i64).map(move |l| ((start + l).max(1) - 1) as usize)
    }

    fn multiplicity_norm(&self, k: usize) -> f64 {
        let idx: Vec<usize> = self.window_indices(k).collect();
        let mut counts = std::collections::BTreeMap::new();
        for i in idx {
            *counts.entry(i).or_insert(0usize) += 1;
        }
        counts.values().map(|&c| (c * c) as f64).sum::<f64>().sqrt()
    }

    fn fill_block(&self, x: &[f64], k: usize, u: &mut Vec<f64>, out: &mut [f64]) {
        u.clear();
        u.extend(self.window_indices(k).map(|i| x.get(i).copied().unwrap_or(0.0)));
        self.gen.block(k, u, out);
    }
}

impl FieldModel for BandedModel {
    fn a(&self, x: &[f64], i: usize, j: usize) -> f64 {
        let (bi, bj) = (i / self.n_block, j / self.n_block);
        if bi != bj {
            return 0.0;
        }
        let nb = self.n_block;
        let mut blk = vec![0.0; nb * nb];
        let mut u = Vec::with_capacity(self.window_len());
        self.fill_block(x, bi + 1, &mut u, &mut blk);
        blk[(i % nb) * nb + j % nb]
    }

    fn b(&self, _x: &[f64], _i: usize) -> f64 {
        1.0
    }

    fn a_block(&self, x: &[f64], n: usize, out: &mut [f64]) {
        out[..n * n].iter_mut().for_each(|v| *v = 0.0);
        let nb = self.n_block;
        let mut blk = vec![0.0; nb * nb];
        let mut u = Vec::with_capacity(self.window_len());
        for k in 1..=n.div_ceil(nb) {
            self.fill_block(x, k, &mut u, &mut blk);
            let off = (k - 1) * nb;
            for r in 0..nb {
                for c in 0..nb {
                    let (i, j) = (off + r, off + c);
                    if i < n && j < n {
                        out[i * n + j] = blk[r * nb + c];
                    }
                }
            }
        }
    }

    fn is_constant(&self) -> bool {
        self.gen.is_constant()
    }

    fn b_is_constant(&self) -> bool {
        true
    }

    fn window(&self, i: usize, j: usize) -> Option<Vec<usize>> {
        if i / self.n_block != j / self.n_block || self.gen.is_constant() {
            return Some(Vec::new());
        }
        let mut w: Vec<usize> = self.window_indices(i / self.n_block + 1).collect();
        w.sort_unstable();
        w.dedup();
        Some(w)
    }

    fn a_holder_bound(&self, i: usize, j: usize, alpha: f64) -> Option<f64> {
        if i / self.n_block != j / self.n_block {
            return Some(0.0);
        }
        let k = i / self.n_block + 1;
        self.gen.entry_holder_bound(i % self.n_block, j % self.n_block, self.multiplicity_norm(k), alpha)
    }

    fn a_lipschitz_bound(&self, i: usize, j: usize) -> Option<f64> {
        if i / self.n_block != j / self.n_block {
            return Some(0.0);
        }
        let k = i / self.n_block + 1;
        self.gen.entry_lipschitz_bound(i % self.n_block, j % self.n_block, self.multiplicity_norm(k))
    }

    fn b_holder_bound(&self, _i: usize, _alpha: f64) -> Option<f64> {
        Some(0.0)
    }

    fn tail(&self, alpha: f64) -> FieldTail {
        let nb = self.n_block;
        // Past the first few blocks the window has no repeats.
        let mult = (self.window_len() as f64).sqrt();
        let mut holder_sup: f64 = 0.0;
        let mut lip_sup: Option<f64> = Some(0.0);
        let mut nonconst = 0usize;
        for r in 0..nb {
            for c in 0..nb {
                let h = self.gen.entry_holder_bound(r, c, mult, alpha);
                let l = self.gen.entry_lipschitz_bound(r, c, mult);
                match h {
                    Some(v) => holder_sup = holder_sup.max(v),
                    None => return FieldTail::Unknown,
                }
                lip_sup = match (lip_sup, l) {
                    (Some(a), Some(b)) => Some(a.max(b)),
                    _ => None,
                };
                if h.unwrap_or(0.0) > 0.0 {
                    nonconst += 1;
                }
            }
        }
        let blocks_per_coord = self.window_len().div_ceil(nb) + 1;
        FieldTail::Banded {
            band_m: self.band_m(),
            entries_per_column: nb,
            entries_per_coordinate: blocks_per_coord * nonconst,
            window_len: self.window_len(),
            holder_sup,
            lipschitz_sup: lip_sup,
            b_holder_sup: 0.0,
        }
    }
}

/// Banded field built from `gen`, validated for ellipticity on sampled
/// states (and on the generator's exact eigenvalue range when it has one).
pub fn banded_field(
    block_n: usize,
    overlap_l: usize,
    gen: Arc<dyn BlockGenerator>,
    gamma: f64,
    alpha: f64,
    s: &Spectrum,
) -> Result<CoefficientField> {
    let field = banded_field_unchecked(block_n, overlap_l, gen.clone(), gamma, alpha, s.len())?;
    let report = ellipticity_scan(&field, field.dim(), 1024, 0x00e1_1197);
    if let Some(err) = report.violation {
        return Err(err);
    }
    if let Some((lo, hi)) = gen.eigen_range(block_n) {
        let witness = report.argmin.clone();
        check_range("block eigenvalue (exact range)".into(), lo, gamma, &witness)?;
        check_range("block eigenvalue (exact range)".into(), hi, gamma, &report.argmax)?;
    }
    Ok(field)
}

/// As [`banded_field`] but without ellipticity validation; the hypothesis
/// checker then reports any violation.
pub fn banded_field_unchecked(
    block_n: usize,
    overlap_l: usize,
    gen: Arc<dyn BlockGenerator>,
    gamma: f64,
    alpha: f64,
    dim: usize,
) -> Result<CoefficientField> {
    let model = BandedModel::new(block_n, overlap_l, gen)?;
    let m = model.band_m();
    let id = format!("banded-N{block_n}-L{overlap_l}");
    CoefficientField::from_model(dim, Arc::new(model), gamma, alpha, Some(m), id)
}

struct EllipticityScan {
    min_eig: f64,
    max_eig: f64,
    min_b: f64,
    max_b: f64,
    argmin: Vec<f64>,
    argmax: Vec<f64>,
    violation: Option<Error>,
    points: usize,
}

fn ellipticity_scan(field: &CoefficientField, n: usize, points: usize, seed: u64) -> EllipticityScan {
    struct Part {
        min_eig: (f64, Vec<f64>),
        max_eig: (f64, Vec<f64>),
        min_b: (f64, Vec<f64>),
        max_b: (f64, Vec<f64>),
    }
    let parts = par_chunks(points, 256, |c, range| {
        let mut rng = rng::substream(seed, domain::VALIDATION, c as u64);
        let mut p = Part {
            min_eig: (f64::INFINITY, vec![]),
            max_eig: (f64::NEG_INFINITY, vec![]),
            min_b: (f64::INFINITY, vec![]),
            max_b: (f64::NEG_INFINITY, vec![]),
        };
        let mut buf = vec![0.0; n * n];
        for idx in range {
            let x: Vec<f64> = if idx == 0 {
                vec![0.0; n]
            } else {
                (0..n).map(|_| rng.random_range(-std::f64::consts::PI..std::f64::consts::PI)).collect()
            };
            field.model.a_block(&x, n, &mut buf);
            let (lo, hi) = eigen_extremes(&DMatrix::from_row_slice(n, n, &buf));
            if lo < p.min_eig.0 {
                p.min_eig = (lo, x.clone());
            }
            if hi > p.max_eig.0 {
                p.max_eig = (hi, x.clone());
            }
            for i in 0..n {
                let b = field.b(&x, i);
                if b < p.min_b.0 {
                    p.min_b = (b, x.clone());
                }
                if b > p.max_b.0 {
                    p.max_b = (b, x.clone());
                }
            }
        }
        p
    });
    let mut all = Part {
        min_eig: (f64::INFINITY, vec![]),
        max_eig: (f64::NEG_INFINITY, vec![]),
        min_b: (f64::INFINITY, vec![]),
        max_b: (f64::NEG_INFINITY, vec![]),
    };
    for p in parts {
        if p.min_eig.0 < all.min_eig.0 {
            all.min_eig = p.min_eig;
        }
        if p.max_eig.0 > all.max_eig.0 {
            all.max_eig = p.max_eig;
        }
        if p.min_b.0 < all.min_b.0 {
            all.min_b = p.min_b;
        }
        if p.max_b.0 > all.max_b.0 {
            all.max_b = p.max_b;
        }
    }
    let g = field.gamma;
    let violation = check_range("eigenvalue of a(x)".into(), all.min_eig.0, g, &all.min_eig.1)
        .and_then(|_| check_range("eigenvalue of a(x)".into(), all.max_eig.0, g, &all.max_eig.1))
        .and_then(|_| check_range("b_i(x)".into(), all.min_b.0, g, &all.min_b.1))
        .and_then(|_| check_range("b_i(x)".into(), all.max_b.0, g, &all.max_b.1))
        .err();
    EllipticityScan {
        min_eig: all.min_eig.0,
        max_eig: all.max_eig.0,
        min_b: all.min_b.0,
        max_b: all.max_b.0,
        argmin: all.min_eig.1,
        argmax: all.max_eig.1,
        violation,
        points,
    }
}

/// Symmetric positive semidefinite square root via eigendecomposition.
pub fn psd_sqrt(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    symmetric_check(a)?;
    let n = a.nrows();
    let scale = a.amax().max(1.0);
    if is_diagonal(a) {
        let mut s = DMatrix::zeros(n, n);
        for i in 0..n {
            let d = a[(i, i)];
            if d < -1e-12 * scale {
                return Err(Error::Indefinite { eigenvalue: d });
            }
            s[(i, i)] = d.max(0.0).sqrt();
        }
        return Ok(s);
    }
    let eig = SymmetricEigen::new(a.clone());
    let mut vals = eig.eigenvalues.clone();
    for v in vals.iter_mut() {
        if *v < -1e-12 * scale {
            return Err(Error::Indefinite { eigenvalue: *v });
        }
        *v = v.max(0.0).sqrt();
    }
    let q = &eig.eigenvectors;
    let s = q * DMatrix::from_diagonal(&vals) * q.transpose();
    Ok((&s + s.transpose()) * 0.5)
}

fn is_diagonal(a: &DMatrix<f64>) -> bool {
    let n = a.nrows();
    (0..n).all(|i| (0..n).all(|j| i == j || a[(i, j)] == 0.0))
}

/// Draws states for sup-type estimates.
pub trait PointSampler: Sync {
    fn sample(&self, rng: &mut Rng) -> Vec<f64>;

    /// Upper bound on `|P_W(x - z0)|` over all points the sampler can
    /// produce, `W` a set of coordinates.
    fn window_radius(&self, _z0: &[f64], _window: &[usize]) -> Option<f64> {
        None
    }
}

/// Uniform points in a coordinate box.
#[derive(Clone, Debug)]
pub struct BoxSampler {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoxSampler {
    pub fn cube(n: usize, half_width: f64) -> Self {
        BoxSampler { lo: vec![-half_width; n], hi: vec![half_width; n] }
    }
}

impl PointSampler for BoxSampler {
    fn sample(&self, rng: &mut Rng) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(&l, &h)| if h > l { rng.random_range(l..h) } else { l }).collect()
    }

    fn window_radius(&self, z0: &[f64], window: &[usize]) -> Option<f64> {
        let mut r2 = 0.0;
        // Coordinates past the sampler's dimension are never moved.
        for &k in window.iter().filter(|&&k| k < self.lo.len()) {
            let z = z0.get(k).copied().unwrap_or(0.0);
            r2 += (self.hi[k] - z).abs().max((self.lo[k] - z).abs()).powi(2);
        }
        Some(r2.sqrt())
    }
}

/// Uniformly chosen members of a fixed set.
#[derive(Clone, Debug)]
pub struct PointSet(pub Vec<State>);

impl PointSampler for PointSet {
    fn sample(&self, rng: &mut Rng) -> Vec<f64> {
        self.0[rng.random_range(0..self.0.len())].coords().to_vec()
    }

    fn window_radius(&self, z0: &[f64], window: &[usize]) -> Option<f64> {
        let r = self
            .0
            .iter()
            .map(|x| window.iter().map(|&k| (x.get(k) - z0.get(k).copied().unwrap_or(0.0)).powi(2)).sum::<f64>())
            .fold(0.0, f64::max);
        Some(r.sqrt())
    }
}

/// Points of `Q_{beta,N} = {|x_k| <= N lambda_k^{-beta/2}}` within distance
/// `radius` of `center`, drawn by sampling the ball and clipping into the box.
/// Clipping moves every coordinate towards the centre, so the result stays
/// in the ball when the centre lies in `Q_{beta,N}`.
#[derive(Clone, Debug)]
pub struct QBallSampler {
    pub center: Vec<f64>,
    pub radius: f64,
    pub half_widths: Vec<f64>,
}

impl QBallSampler {
    pub fn new(center: &State, radius: f64, n_box: f64, beta: f64, s: &Spectrum) -> Result<Self> {
        check_beta(beta)?;
        let n = center.dim();
        s.check_dim("center", n)?;
        let half_widths: Vec<f64> = s.lambdas()[..n].iter().map(|l| n_box * l.powf(-0.5 * beta)).collect();
        Ok(QBallSampler { center: center.coords().to_vec(), radius, half_widths })
    }

    /// The whole of `Q_{beta,N}` at the truncation.
    pub fn whole(n: usize, n_box: f64, beta: f64, s: &Spectrum) -> Result<Self> {
        let mut q = QBallSampler::new(&State::zeros(n), f64::INFINITY, n_box, beta, s)?;
        q.radius = f64::INFINITY;
        Ok(q)
    }
}

impl PointSampler for QBallSampler {
    fn sample(&self, rng: &mut Rng) -> Vec<f64> {
        let n = self.center.len();
        if self.radius.is_infinite() {
            return self.half_widths.iter().map(|&w| rng.random_range(-w..=w)).collect();
        }
        let dir: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
        // Half the draws sit on the sphere, where sup-type quantities peak.
        let u: f64 = rng.random();
        let r = if u < 0.5 { self.radius } else { self.radius * rng.random::<f64>().powf(1.0 / n as f64) };
        (0..n)
            .map(|k| (self.center[k] + r * dir[k] / norm).clamp(-self.half_widths[k], self.half_widths[k]))
            .collect()
    }

    fn window_radius(&self, z0: &[f64], window: &[usize]) -> Option<f64> {
        let mut r2 = 0.0;
        for &k in window.iter().filter(|&&k| k < self.half_widths.len()) {
            let w = self.half_widths[k];
            let z = z0.get(k).copied().unwrap_or(0.0);
            r2 += (w - z).abs().max((w + z).abs()).powi(2);
        }
        Some(r2.sqrt().min(self.radius))
    }
}

/// Sampled value of `sum_{i,j} |a_ij(x) - a_ij(z0)|` with an optional
/// analytic upper bound.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EtaCertificate {
    /// Sampled maximum: a lower bound for the true sup.
    pub sampled: f64,
    pub argmax: Vec<f64>,
    /// Upper bound from declared Hölder/Lipschitz bounds and the sampler's
    /// window radii.
    pub analytic_upper: Option<f64>,
    pub points: usize,
    pub seed: u64,
}

pub fn coefficient_difference(field: &CoefficientField, x: &[f64], a0: &[f64]) -> f64 {
    let n = field.dim();
    let mut buf = vec![0.0; n * n];
    field.model.a_block(x, n, &mut buf);
    buf.iter().zip(a0).map(|(a, b)| (a - b).abs()).sum()
}

pub fn eta(
    field: &CoefficientField,
    z0: &State,
    sampler: &dyn PointSampler,
    points: usize,
    seed: u64,
) -> EtaCertificate {
    let n = field.dim();
    let z = z0.resized(n);
    let mut a0 = vec![0.0; n * n];
    field.model.a_block(z.coords(), n, &mut a0);
    let (sampled, argmax) = if field.is_constant() {
        (0.0, z.coords().to_vec())
    } else {
        let parts = par_chunks(points, CHUNK, |c, range| {
            let mut rng = rng::substream(seed, domain::SAMPLER, c as u64);
            let mut best = (0.0, z.coords().to_vec());
            for _ in range {
                let mut x = sampler.sample(&mut rng);
                x.resize(n, 0.0);
                let d = coefficient_difference(field, &x, &a0);
                if d > best.0 {
                    best = (d, x);
                }
            }
            best
        });
        parts.into_iter().fold((0.0, z.coords().to_vec()), |acc, p| if p.0 > acc.0 { p } else { acc })
    };
    EtaCertificate { sampled, argmax, analytic_upper: eta_upper(field, z.coords(), sampler), points, seed }
}

fn eta_upper(field: &CoefficientField, z0: &[f64], sampler: &dyn PointSampler) -> Option<f64> {
    if field.is_constant() {
        return Some(0.0);
    }
    let n = field.dim();
    let alpha = field.holder_alpha;
    let m = &field.model;
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            let w = m.window(i, j)?;
            if w.is_empty() {
                continue;
            }
            let r = sampler.window_radius(z0, &w)?;
            let mut best = f64::INFINITY;
            if let Some(h) = m.a_holder_bound(i, j, alpha) {
                best = best.min(h * r.powf(alpha));
            }
            if let Some(l) = m.a_lipschitz_bound(i, j) {
                best = best.min(l * r);
            }
            if best.is_infinite() {
                return None;
            }
            total += best;
        }
    }
    Some(total)
}

/// Draws pairs `(x, x + h)` for Hölder quotients.
pub trait PairSampler: Sync {
    fn sample(&self, rng: &mut Rng) -> (Vec<f64>, Vec<f64>);
}

/// `x` uniform in a box, `h` in a uniform direction with log-uniform length
/// in `[r_min, r_max]`.
#[derive(Clone, Debug)]
pub struct BoxPairSampler {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub r_min: f64,
    pub r_max: f64,
}

impl BoxPairSampler {
    pub fn cube(n: usize, half_width: f64, r_min: f64, r_max: f64) -> Self {
        BoxPairSampler { lo: vec![-half_width; n], hi: vec![half_width; n], r_min, r_max }
    }
}

impl PairSampler for BoxPairSampler {
    fn sample(&self, rng: &mut Rng) -> (Vec<f64>, Vec<f64>) {
        let x: Vec<f64> = self.lo.iter().zip(&self.hi).map(|(&l, &h)| if h > l { rng.random_range(l..h) } else { l }).collect();
        let dir: Vec<f64> = (0..x.len()).map(|_| StandardNormal.sample(rng)).collect();
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
        let r = if self.r_max > self.r_min {
            (self.r_min.ln() + rng.random::<f64>() * (self.r_max / self.r_min).ln()).exp()
        } else {
            self.r_min
        };
        let y = x.iter().zip(&dir).map(|(a, d)| a + r * d / norm).collect();
        (x, y)
    }
}

/// Largest sampled Hölder quotient; a lower bound for `|f|_{C^alpha}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HolderEstimate {
    pub value: f64,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub pairs: usize,
    pub seed: u64,
}

pub fn holder_quotient(f: &(dyn Fn(&[f64]) -> f64 + Sync), x: &[f64], y: &[f64], alpha: f64) -> f64 {
    let d = x.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    if d == 0.0 {
        return 0.0;
    }
    (f(x) - f(y)).abs() / d.powf(alpha)
}

pub fn holder_seminorm_estimate(
    f: &(dyn Fn(&[f64]) -> f64 + Sync),
    alpha: f64,
    sampler: &dyn PairSampler,
    pairs: usize,
    seed: u64,
) -> HolderEstimate {
    let parts = par_chunks(pairs, CHUNK, |c, range| {
        let mut rng = rng::substream(seed, domain::HOLDER, c as u64);
        let mut best = (0.0, vec![], vec![]);
        for _ in range {
            let (x, y) = sampler.sample(&mut rng);
            let q = holder_quotient(f, &x, &y, alpha);
            if q > best.0 {
                best = (q, x, y);
            }
        }
        best
    });
    let (value, x, y) = parts.into_iter().fold((0.0, vec![], vec![]), |acc, p| if p.0 > acc.0 { p } else { acc });
    HolderEstimate { value, x, y, pairs, seed }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConditionResult {
    pub name: String,
    pub verdict: Verdict,
    pub value: f64,
    pub threshold: f64,
    pub detail: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HypothesisReport {
    pub conditions: Vec<ConditionResult>,
    pub points_used: usize,
    pub seed: u64,
}

impl HypothesisReport {
    pub fn get(&self, name: &str) -> Option<&ConditionResult> {
        self.conditions.iter().find(|c| c.name == name)
    }

    pub fn verdict(&self, name: &str) -> Option<Verdict> {
        self.get(name).map(|c| c.verdict)
    }
}

/// Sampling budgets for [`check_hypotheses`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HypothesisBudget {
    pub points: usize,
    pub seed: u64,
    /// `N` in `Q_{beta,N}` for the continuity condition.
    pub q_bound: f64,
    /// Radius at which the continuity modulus is reported.
    pub delta: f64,
}

impl Default for HypothesisBudget {
    fn default() -> Self {
        HypothesisBudget { points: 2000, seed: 0, q_bound: 1.0, delta: 1e-2 }
    }
}

fn result(name: &str, verdict: Verdict, value: f64, threshold: f64, detail: String) -> ConditionResult {
    ConditionResult { name: name.into(), verdict, value, threshold, detail, witness: None }
}

/// Effective growth exponent of the stored eigenvalues: least-squares slope
/// of `log lambda_k` against `log k` over the upper half of the indices.
pub fn fitted_growth_exponent(s: &Spectrum) -> f64 {
    let n = s.len();
    if n < 4 {
        return f64::NAN;
    }
    let xs: Vec<f64> = (n / 2..n).map(|k| ((k + 1) as f64).ln()).collect();
    let ys: Vec<f64> = (n / 2..n).map(|k| s.lambdas()[k].ln()).collect();
    crate::stats::regression_slope(&xs, &ys, &vec![0.0; xs.len()]).0
}

/// Upper bound on `sup |a_ij(x) - a_ij(x0)|` summed over all `i, j`, for
/// `x, x0 in Q_{beta,N}` with `|x - x0| <= delta`, from declared bounds.
/// Includes the analytic tail past the truncation. `None` if the declared
/// information is insufficient or the tail diverges.
pub fn continuity_modulus(field: &CoefficientField, s: &Spectrum, beta: f64, q_bound: f64, delta: f64) -> Option<f64> {
    let n = field.dim();
    let alpha = field.holder_alpha;
    let m = &field.model;
    let half: Vec<f64> = s.lambdas().iter().map(|l| q_bound * l.powf(-0.5 * beta)).collect();
    // Past the stored eigenvalues fall back on the growth law.
    let half_at = |k: usize| -> f64 {
        match (half.get(k), s.growth()) {
            (Some(&h), _) => h,
            (None, Some((p, c1))) => q_bound * (c1 * ((k + 1) as f64).powf(p)).powf(-0.5 * beta),
            (None, None) => 0.0,
        }
    };
    let window_radius = |w: &[usize]| -> f64 { w.iter().map(|&k| (2.0 * half_at(k)).powi(2)).sum::<f64>().sqrt() };

    // Hölder chain: sum_ij H_ij min(delta, R_ij)^alpha plus the banded tail.
    let holder = (|| {
        let mut total = 0.0;
        for i in 0..n {
            for j in 0..n {
                let w = m.window(i, j)?;
                if w.is_empty() {
                    continue;
                }
                total += m.a_holder_bound(i, j, alpha)? * delta.min(window_radius(&w)).powf(alpha);
            }
        }
        match m.tail(alpha) {
            FieldTail::Constant => Some(total),
            FieldTail::Unknown => None,
            FieldTail::Banded { holder_sup, entries_per_column, window_len, .. } => {
                if holder_sup == 0.0 {
                    return Some(total);
                }
                // R_ij <= 2N sqrt(window_len) lambda_{i-M}^{-beta/2}; index shift
                // absorbed by the growth lower bound from index n - window_len.
                let (p, c1) = s.growth()?;
                let q = p * beta * alpha / 2.0;
                let from = n.saturating_sub(window_len).max(1);
                let t = power_tail(q, from)?;
                let r0 = 2.0 * q_bound * (window_len as f64).sqrt() * c1.powf(-beta / 2.0);
                Some(total + (entries_per_column * entries_per_column) as f64 * holder_sup * r0.powf(alpha) * t)
            }
        }
    })();

    // Lipschitz chain: |a_ij(x) - a_ij(x0)| <= L_ij sum_{k in W_ij} |d_k|,
    // then sum_k |d_k| <= sqrt(K) delta + sum_{k > K} 2N lambda_k^{-beta/2}.
    let lipschitz = (|| {
        let tail = m.tail(alpha);
        let (tail_weight, infinite) = match tail {
            FieldTail::Constant => (0.0, false),
            FieldTail::Unknown => return None,
            FieldTail::Banded { lipschitz_sup, entries_per_coordinate, .. } => {
                (lipschitz_sup? * entries_per_coordinate as f64, true)
            }
        };
        // Per-coordinate weight c_k = sum_{ij : k in W_ij} L_ij over the truncation.
        let mut weight = vec![0.0; n];
        for i in 0..n {
            for j in 0..n {
                let w = m.window(i, j)?;
                if w.is_empty() {
                    continue;
                }
                let l = m.a_lipschitz_bound(i, j)?;
                for k in w.into_iter().filter(|&k| k < n) {
                    weight[k] += l;
                }
            }
        }
        let c = weight.iter().copied().fold(tail_weight, f64::max);
        if c == 0.0 {
            return Some(0.0);
        }
        let mut best = f64::INFINITY;
        for k0 in 0..=n {
            let head = (k0 as f64).sqrt() * delta;
            let rest = if infinite {
                2.0 * q_bound * s.inverse_power_tail(beta / 2.0, k0)?
            } else {
                half[k0..n].iter().map(|h| 2.0 * h).sum()
            };
            best = best.min(head + rest);
        }
        Some(c * best)
    })();

    match (holder, lipschitz) {
        (Some(a), Some(b)) => Some(a.min(b)),
        (a, b) => a.or(b),
    }
}

/// Evaluates the sufficient conditions for well-posedness at the truncation,
/// with analytic tails from the spectrum's growth law.
///
/// Conditions: `ellipticity`, `(a)` growth, `(b)` Hölder sum (also reported
/// as `holder-sum`), `(c)`, `(d)` continuity, `(e)` drift regularity, and
/// `drift-sup` / `drift-holder` for the localized drift perturbation
/// `B_i(x) = x_i (b_i(x)/b_i(z0) - 1)`: `sum lambda_i^{1/2} ||B_i||` and
/// `sum lambda_i^{(1-alpha)/2} |B_i|_{C^alpha}`.
pub fn check_hypotheses(
    field: &CoefficientField,
    s: &Spectrum,
    alpha: f64,
    beta: f64,
    budget: &HypothesisBudget,
) -> Result<HypothesisReport> {
    check_beta(beta)?;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(invalid("alpha", format!("must lie in (0, 1), got {alpha}")));
    }
    let n = field.dim();
    s.check_dim("field", n)?;
    let m = &field.model;
    let lam = &s.lambdas()[..n];
    let tail_info = m.tail(alpha);
    let mut out = Vec::new();

    // Ellipticity on sampled states.
    let scan = ellipticity_scan(field, n, budget.points, budget.seed);
    let mut ell = result(
        "ellipticity",
        if scan.violation.is_some() { Verdict::Fail } else { Verdict::Pass },
        scan.min_eig.min(scan.min_b),
        field.gamma,
        format!(
            "a(x) eigenvalues in [{:.6}, {:.6}], b in [{:.6}, {:.6}] over {} states; required [{}, {}]",
            scan.min_eig, scan.max_eig, scan.min_b, scan.max_b, scan.points, field.gamma, 1.0 / field.gamma
        ),
    );
    if let Some(Error::Ellipticity { witness, quantity, value, .. }) = &scan.violation {
        ell.witness = Some(witness.clone());
        ell.detail = format!("{quantity} = {value} at witness; {}", ell.detail);
    }
    out.push(ell);

    // (a) eigenvalue growth.
    let fitted = fitted_growth_exponent(s);
    out.push(match s.tail() {
        Tail::PowerLaw { p, c1 } => result(
            "(a)",
            if *p > 1.0 { Verdict::Pass } else { Verdict::Fail },
            *p,
            1.0,
            format!("lambda_k >= {c1} k^{p} verified on stored values and declared for the tail"),
        ),
        Tail::Finite => result("(a)", Verdict::Pass, f64::INFINITY, 1.0, "finite system".into()),
        Tail::Unknown => result(
            "(a)",
            if fitted > 1.0 { Verdict::Inconclusive } else { Verdict::Fail },
            fitted,
            1.0,
            format!("no growth law declared; fitted exponent {fitted:.4} over stored values"),
        ),
    });

    // (b): sum_{i<=j} |a_ij|_{C^alpha} lambda_j^{-alpha/2}.
    let head: Option<f64> = (|| {
        let mut t = 0.0;
        for j in 0..n {
            for i in 0..=j {
                t += m.a_holder_bound(i, j, alpha)? * lam[j].powf(-alpha / 2.0);
            }
        }
        Some(t)
    })();
    let holder_tail = match &tail_info {
        FieldTail::Constant => Some(0.0),
        FieldTail::Unknown => None,
        FieldTail::Banded { holder_sup, entries_per_column, .. } => {
            if *holder_sup == 0.0 {
                Some(0.0)
            } else {
                s.inverse_power_tail(alpha / 2.0, n).map(|t| *entries_per_column as f64 * holder_sup * t)
            }
        }
    };
    let b_sum = match (head, holder_tail) {
        (Some(h), Some(t)) => result(
            "(b)",
            Verdict::Pass,
            h + t,
            f64::INFINITY,
            format!("declared bounds: truncation {h:.6}, analytic tail {t:.6}"),
        ),
        (Some(h), None) if matches!(tail_info, FieldTail::Banded { .. }) => result(
            "(b)",
            Verdict::Fail,
            f64::INFINITY,
            f64::INFINITY,
            format!(
                "truncation {h:.6}; tail sum of lambda_j^(-{}) diverges against a positive uniform Hölder bound",
                alpha / 2.0
            ),
        ),
        _ => {
            let est = sampled_holder_sum(field, s, alpha, budget);
            result("(b)", Verdict::Inconclusive, est, f64::INFINITY, "no declared bounds; sampled lower bound only".into())
        }
    };
    let mut holder_sum = b_sum.clone();
    holder_sum.name = "holder-sum".into();
    out.push(b_sum);

    // (c) sum lambda^{-beta}.
    let c_sum = s.inverse_power_sum(beta);
    out.push(match (c_sum, s.tail()) {
        (Some(v), _) => result("(c)", Verdict::Pass, v, f64::INFINITY, "stored sum plus analytic tail".into()),
        (None, Tail::PowerLaw { p, .. }) => result(
            "(c)",
            Verdict::Fail,
            f64::INFINITY,
            f64::INFINITY,
            format!("p*beta = {} <= 1: tail diverges", p * beta),
        ),
        (None, _) => result(
            "(c)",
            if fitted * beta > 1.0 { Verdict::Inconclusive } else { Verdict::Fail },
            f64::INFINITY,
            f64::INFINITY,
            format!("no growth law; fitted p*beta = {:.4}", fitted * beta),
        ),
    });

    // (d) local uniform continuity on Q_{beta,N}.
    out.push(condition_d(field, s, beta, budget));

    // (e) sum lambda_i^{1/2} |b_i|_{C^alpha}.
    let e_head: Option<f64> = (0..n).map(|i| m.b_holder_bound(i, alpha).map(|b| lam[i].sqrt() * b)).sum();
    let e_tail = match &tail_info {
        FieldTail::Constant => Some(0.0),
        FieldTail::Banded { b_holder_sup, .. } if *b_holder_sup == 0.0 => Some(0.0),
        _ => None,
    };
    out.push(match (e_head, e_tail) {
        (Some(h), Some(t)) => result("(e)", Verdict::Pass, h + t, f64::INFINITY, "declared bounds".into()),
        _ => result("(e)", Verdict::Inconclusive, f64::NAN, f64::INFINITY, "b has no declared Hölder bounds".into()),
    });

    out.push(holder_sum);
    let (c54, c55) = conditions_b(field, s, alpha, e_head.zip(e_tail).map(|(h, t)| h + t));
    out.push(c54);
    out.push(c55);

    Ok(HypothesisReport { conditions: out, points_used: budget.points, seed: budget.seed })
}

fn sampled_holder_sum(field: &CoefficientField, s: &Spectrum, alpha: f64, budget: &HypothesisBudget) -> f64 {
    let n = field.dim();
    let sampler = BoxPairSampler::cube(n, std::f64::consts::PI, 1e-3, 1.0);
    let mut total = 0.0;
    for j in 0..n {
        for i in 0..=j {
            let f = |x: &[f64]| field.a(x, i, j);
            let est = holder_seminorm_estimate(&f, alpha, &sampler, budget.points / n.max(1), budget.seed ^ (i * n + j) as u64);
            total += est.value * s.lambdas()[j].powf(-alpha / 2.0);
        }
    }
    total
}

fn condition_d(field: &CoefficientField, s: &Spectrum, beta: f64, budget: &HypothesisBudget) -> ConditionResult {
    let n = field.dim();
    let delta = budget.delta;
    let analytic = continuity_modulus(field, s, beta, budget.q_bound, delta);
    // Sampled scan: random x0 in Q, x in Q within delta of x0.
    let whole = match QBallSampler::whole(n, budget.q_bound, beta, s) {
        Ok(q) => q,
        Err(e) => return result("(d)", Verdict::Inconclusive, f64::NAN, f64::NAN, e.to_string()),
    };
    let centers = 16.min(budget.points.max(1));
    let per = (budget.points / centers).max(1);
    let mut sampled: f64 = 0.0;
    let mut witness = None;
    let mut rng = rng::substream(budget.seed, domain::SAMPLER, 0xd);
    for c in 0..centers {
        let x0 = State::from(whole.sample(&mut rng));
        let Ok(ball) = QBallSampler::new(&x0, delta, budget.q_bound, beta, s) else { continue };
        let cert = eta(field, &x0, &ball, per, budget.seed.wrapping_add(c as u64));
        if cert.sampled > sampled {
            sampled = cert.sampled;
            witness = Some(cert.argmax);
        }
    }
    let mut r = match analytic {
        Some(w) if sampled <= w * (1.0 + 1e-9) + 1e-12 => result(
            "(d)",
            Verdict::Pass,
            w,
            f64::INFINITY,
            format!(
                "analytic modulus {w:.6e} at delta = {delta} (tends to 0 with delta); sampled scan {sampled:.6e} over {} points",
                centers * per
            ),
        ),
        Some(w) => result(
            "(d)",
            Verdict::Fail,
            sampled,
            w,
            format!("sampled modulus {sampled:.6e} exceeds the declared-bound modulus {w:.6e}: declared bounds are wrong"),
        ),
        None => result(
            "(d)",
            Verdict::Inconclusive,
            sampled,
            f64::INFINITY,
            format!("no certifiable modulus; sampled scan only (inconclusive evidence) at delta = {delta}"),
        ),
    };
    r.witness = witness.filter(|_| r.verdict == Verdict::Fail);
    r
}

/// `drift-sup` and `drift-holder` for `B_i(x) = x_i (b_i(x)/b_i(z0) - 1)`.
fn conditions_b(field: &CoefficientField, s: &Spectrum, alpha: f64, e_sum: Option<f64>) -> (ConditionResult, ConditionResult) {
    let m = &field.model;
    if m.b_is_constant() {
        let a = result("drift-sup", Verdict::Pass, 0.0, f64::INFINITY, "b constant: B_i vanishes".into());
        let b = result("drift-holder", Verdict::Pass, 0.0, f64::INFINITY, "b constant: B_i vanishes".into());
        return (a, b);
    }
    let Some((x0, r)) = m.localization() else {
        let detail = "B_i(x) = x_i(b_i(x)-1) is unbounded for non-localized, non-constant b".to_string();
        return (
            result("drift-sup", Verdict::Inconclusive, f64::NAN, f64::INFINITY, detail.clone()),
            result("drift-holder", Verdict::Inconclusive, f64::NAN, f64::INFINITY, detail),
        );
    };
    // On the support |x - x0| < 2r: |B_i| <= (|x0_i| + 2r) |b_i|_{C^alpha} (2r)^alpha,
    // and |B_i|_{C^alpha} <= ((|x0_i| + 2r) 2^alpha + (2r)^alpha (4r)^{1-alpha}) |b_i|_{C^alpha}.
    let n = field.dim();
    let lam = s.lambdas();
    let mut sum_sup = Some(0.0);
    let mut sum_holder = Some(0.0);
    let mut c_sup: f64 = 0.0;
    for i in 0..n {
        let bi = m.b_holder_bound(i, alpha);
        let xi = x0.get(i).abs();
        let c_norm = (xi + 2.0 * r) * (2.0 * r).powf(alpha);
        let c_holder = (xi + 2.0 * r) * 2f64.powf(alpha) + (2.0 * r).powf(alpha) * (4.0 * r).powf(1.0 - alpha);
        c_sup = c_sup.max(c_norm).max(c_holder);
        sum_sup = sum_sup.zip(bi).map(|(acc, b)| acc + lam[i].sqrt() * c_norm * b);
        sum_holder = sum_holder.zip(bi).map(|(acc, b)| acc + lam[i].powf((1.0 - alpha) / 2.0) * c_holder * b);
    }
    let tails_ok = matches!(m.tail(alpha), FieldTail::Constant) || matches!(m.tail(alpha), FieldTail::Banded { b_holder_sup, .. } if b_holder_sup == 0.0);
    let mk = |name: &str, v: Option<f64>| match (v, tails_ok, e_sum) {
        (Some(v), true, Some(_)) => result(name, Verdict::Pass, v, f64::INFINITY, format!("localized: geometric constant {c_sup:.4} times declared |b_i|")),
        _ => result(name, Verdict::Inconclusive, v.unwrap_or(f64::NAN), f64::INFINITY, "localized but b bounds incomplete".into()),
    };
    (mk("drift-sup", sum_sup), mk("drift-holder", sum_holder))
}
