//! Localization of the coefficients around a point of `Q_{beta,N}`:
//! coordinate clipping `psi`, radial cutoff `rho` and the localized field
//! `a~ = a o psi`, `b~ = b(x0 + rho(. - x0))`.

use std::sync::Arc;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::coefficients::{holder_quotient, CoefficientField, FieldModel, FieldTail, PairSampler, PointSampler};
use crate::error::{invalid, Error, Result};
use crate::rng::{self, domain, par_chunks, CHUNK};
use crate::spectrum::{check_beta, Spectrum, State, Tail};

/// Smallest `K0 >= 1` with `4 N^2 sum_{k > K0} lambda_k^{-beta} < delta^2 / 2`
/// and `delta1 = min(1, delta / sqrt(2 K0))`. Then `|x - x0|_inf <= delta1`
/// and `x in Q_{beta,N}` give `|x - x0| < delta`.
pub fn delta1_from_delta(delta: f64, n_box: f64, beta: f64, s: &Spectrum) -> Result<(usize, f64)> {
    check_beta(beta)?;
    if !(delta > 0.0) || !(n_box > 0.0) {
        return Err(invalid("delta", format!("delta and N must be positive, got {delta}, {n_box}")));
    }
    let p = match s.tail() {
        Tail::PowerLaw { p, .. } => *p,
        _ => f64::NAN,
    };
    let target = delta * delta / 2.0;
    let tail = |k: usize| s.inverse_power_tail(beta, k).ok_or(Error::DivergentTail { exponent: beta, p });
    let mut k0 = 1usize;
    // Grow geometrically, then bisect down to the smallest admissible K0.
    while 4.0 * n_box * n_box * tail(k0)? >= target {
        if k0 > 1 << 40 {
            return Err(Error::DivergentTail { exponent: beta, p });
        }
        k0 *= 2;
    }
    let (mut lo, mut hi) = (k0 / 2, k0);
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if 4.0 * n_box * n_box * tail(mid)? < target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let k0 = if lo >= 1 && 4.0 * n_box * n_box * tail(lo)? < target { lo } else { hi };
    Ok((k0, (delta / (2.0 * k0 as f64).sqrt()).min(1.0)))
}

/// `[p_j, q_j] = [x0_j - delta1, x0_j + delta1] ∩ [-N lambda_j^{-beta/2}, N lambda_j^{-beta/2}]`
/// over the stored spectrum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalizationBox {
    pub x0: State,
    pub delta1: f64,
    pub n_box: f64,
    pub beta: f64,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl LocalizationBox {
    pub fn new(x0: &State, delta1: f64, n_box: f64, beta: f64, s: &Spectrum) -> Result<Self> {
        check_beta(beta)?;
        if !(delta1 > 0.0 && delta1 <= 1.0) {
            return Err(invalid("delta1", format!("must lie in (0, 1], got {delta1}")));
        }
        let n = s.len();
        s.check_dim("x0", x0.dim())?;
        let mut lo = Vec::with_capacity(n);
        let mut hi = Vec::with_capacity(n);
        for (j, l) in s.lambdas().iter().enumerate() {
            let w = n_box * l.powf(-0.5 * beta);
            let c = x0.get(j);
            if c.abs() > w {
                return Err(Error::OutsideRegion { index: j, value: c, n_bound: w });
            }
            lo.push((c - delta1).max(-w));
            hi.push((c + delta1).min(w));
        }
        Ok(LocalizationBox { x0: x0.resized(n), delta1, n_box, beta, lo, hi })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        (0..self.dim()).all(|j| {
            let v = x.get(j).copied().unwrap_or(0.0);
            v >= self.lo[j] && v <= self.hi[j]
        })
    }
}

fn clip_into(x: &[f64], b: &LocalizationBox) -> Vec<f64> {
    (0..b.dim()).map(|j| x.get(j).copied().unwrap_or(0.0).clamp(b.lo[j], b.hi[j])).collect()
}

/// `psi`: clips each coordinate into `[p_j, q_j]`. Coordinates past the box
/// are dropped (they read as zero, where `x0` is zero).
pub fn clip_psi(x: &State, b: &LocalizationBox) -> State {
    State::from(clip_into(x.coords(), b))
}

fn rho_factor(norm: f64, r: f64) -> f64 {
    if norm < r {
        1.0
    } else if norm < 2.0 * r {
        (2.0 * r - norm) / r
    } else {
        0.0
    }
}

/// `rho(u) = u` for `|u| < r`, `(2r - |u|) u / r` for `r <= |u| < 2r`, else 0.
pub fn cutoff_rho(u: &State, r: f64) -> State {
    u.scale(rho_factor(u.norm(), r))
}

/// `a~ = a o psi`, `b~(x) = b(x0 + rho(x - x0))`.
#[derive(Debug)]
pub struct LocalizedModel {
    inner: Arc<dyn FieldModel>,
    bx: LocalizationBox,
    r: f64,
}

impl LocalizedModel {
    fn rho_point(&self, x: &[f64]) -> Vec<f64> {
        let x0 = self.bx.x0.coords();
        let n = x.len().max(x0.len());
        let d: Vec<f64> = (0..n).map(|k| x.get(k).copied().unwrap_or(0.0) - x0.get(k).copied().unwrap_or(0.0)).collect();
        let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
        let f = rho_factor(norm, self.r);
        (0..n).map(|k| x0.get(k).copied().unwrap_or(0.0) + f * d[k]).collect()
    }
}

/// Lipschitz constant of `rho`: `|D rho| <= 1 + |u| / r <= 3`.
const RHO_LIPSCHITZ: f64 = 3.0;

impl FieldModel for LocalizedModel {
    fn a(&self, x: &[f64], i: usize, j: usize) -> f64 {
        self.inner.a(&clip_into(x, &self.bx), i, j)
    }
    fn b(&self, x: &[f64], i: usize) -> f64 {
        if self.inner.b_is_constant() {
            return self.inner.b(x, i);
        }
        self.inner.b(&self.rho_point(x), i)
    }
    fn a_block(&self, x: &[f64], n: usize, out: &mut [f64]) {
        self.inner.a_block(&clip_into(x, &self.bx), n, out);
    }
    fn is_constant(&self) -> bool {
        self.inner.is_constant()
    }
    fn b_is_constant(&self) -> bool {
        self.inner.b_is_constant()
    }
    fn window(&self, i: usize, j: usize) -> Option<Vec<usize>> {
        self.inner.window(i, j)
    }
    // psi is 1-Lipschitz, so Hölder and Lipschitz constants carry over.
    fn a_holder_bound(&self, i: usize, j: usize, alpha: f64) -> Option<f64> {
        self.inner.a_holder_bound(i, j, alpha)
    }
    fn a_lipschitz_bound(&self, i: usize, j: usize) -> Option<f64> {
        self.inner.a_lipschitz_bound(i, j)
    }
    fn b_holder_bound(&self, i: usize, alpha: f64) -> Option<f64> {
        self.inner.b_holder_bound(i, alpha).map(|b| RHO_LIPSCHITZ.powf(alpha) * b)
    }
    fn tail(&self, alpha: f64) -> FieldTail {
        match self.inner.tail(alpha) {
            FieldTail::Banded { band_m, entries_per_column, entries_per_coordinate, window_len, holder_sup, lipschitz_sup, b_holder_sup } => {
                FieldTail::Banded {
                    band_m,
                    entries_per_column,
                    entries_per_coordinate,
                    window_len,
                    holder_sup,
                    lipschitz_sup,
                    b_holder_sup: RHO_LIPSCHITZ.powf(alpha) * b_holder_sup,
                }
            }
            other => other,
        }
    }
    fn localization(&self) -> Option<(&State, f64)> {
        Some((&self.bx.x0, self.r))
    }
}

/// Localized coefficients with cutoff radius `r` (the construction uses
/// `r = delta1`). Constant fields are returned unchanged.
pub fn localized_field(field: &CoefficientField, r: f64, bx: &LocalizationBox) -> Result<CoefficientField> {
    if !(r > 0.0) {
        return Err(invalid("r", format!("must be positive, got {r}")));
    }
    if field.is_constant() {
        return Ok(field.clone());
    }
    let model = LocalizedModel { inner: field.model().clone(), bx: bx.clone(), r };
    Ok(field.with_model(Arc::new(model), format!("{}-localized", field.id())))
}

/// Largest `|a~_ij - a_ij| + |b~_i - b_i|` over sampled points of the
/// agreement region `Q_N ∩ {|x - x0| < r}`.
pub fn agreement_gap(
    field: &CoefficientField,
    localized: &CoefficientField,
    sampler: &dyn PointSampler,
    points: usize,
    seed: u64,
) -> f64 {
    let n = field.dim();
    let parts = par_chunks(points, CHUNK, |c, range| {
        let mut rng = rng::substream(seed, domain::VALIDATION, c as u64);
        let (mut a, mut b) = (vec![0.0; n * n], vec![0.0; n * n]);
        let mut worst: f64 = 0.0;
        for _ in range {
            let x = sampler.sample(&mut rng);
            field.model().a_block(&x, n, &mut a);
            localized.model().a_block(&x, n, &mut b);
            let da = a.iter().zip(&b).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max);
            let db = (0..n).map(|i| (field.b(&x, i) - localized.b(&x, i)).abs()).fold(0.0, f64::max);
            worst = worst.max(da).max(db);
        }
        worst
    });
    parts.into_iter().fold(0.0, f64::max)
}

/// Pairwise Hölder domination of `a~_ij` by `a_ij`: for each sampled pair,
/// the quotient of `a~` at `(x, y)` against that of `a` at `(psi x, psi y)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HolderDomination {
    /// Largest sampled quotient of `a~_ij`.
    pub localized: f64,
    /// Largest sampled quotient of `a_ij` over the clipped pairs.
    pub original: f64,
    /// Largest pairwise excess `q~(x, y) - q(psi x, psi y)`.
    pub max_excess: f64,
    pub pairs: usize,
}

#[allow(clippy::too_many_arguments)]
pub fn holder_domination(
    field: &CoefficientField,
    localized: &CoefficientField,
    bx: &LocalizationBox,
    i: usize,
    j: usize,
    alpha: f64,
    sampler: &dyn PairSampler,
    pairs: usize,
    seed: u64,
) -> HolderDomination {
    let fa = |x: &[f64]| field.a(x, i, j);
    let fl = |x: &[f64]| localized.a(x, i, j);
    let parts = par_chunks(pairs, CHUNK, |c, range| {
        let mut rng = rng::substream(seed, domain::HOLDER, c as u64);
        let (mut ql, mut qa, mut ex) = (0.0f64, 0.0f64, f64::NEG_INFINITY);
        for _ in range {
            let (x, y) = sampler.sample(&mut rng);
            let l = holder_quotient(&fl, &x, &y, alpha);
            let (px, py) = (clip_into(&x, bx), clip_into(&y, bx));
            let a = if px == py { 0.0 } else { holder_quotient(&fa, &px, &py, alpha) };
            ql = ql.max(l);
            qa = qa.max(a);
            ex = ex.max(l - a);
        }
        (ql, qa, ex)
    });
    let (mut localized_q, mut original_q, mut max_excess) = (0.0f64, 0.0f64, f64::NEG_INFINITY);
    for (l, a, e) in parts {
        localized_q = localized_q.max(l);
        original_q = original_q.max(a);
        max_excess = max_excess.max(e);
    }
    HolderDomination { localized: localized_q, original: original_q, max_excess, pairs }
}

/// Empirical constant `c2` in `||B_i|| <= c2 |b_i|_{C^alpha}` and
/// `|B_i|_{C^alpha} <= c2 |b_i|_{C^alpha}` for
/// `B_i(x) = x_i (b~_i(x) - b~_i(x0))`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct C2Report {
    /// Per coordinate: sampled `sup |B_i|`.
    pub sup: Vec<f64>,
    /// Per coordinate: sampled Hölder quotient of `B_i`.
    pub holder: Vec<f64>,
    /// Per coordinate: declared `|b_i|_{C^alpha}` (NaN if undeclared).
    pub b_holder: Vec<f64>,
    /// `max_i max(sup_i, holder_i) / |b_i|_{C^alpha}` over coordinates with
    /// nonzero declared bound.
    pub c2: f64,
    /// Largest sampled `|B_i(x)|` with `|x - x0| >= 2r` (zero by construction).
    pub far_field: f64,
}

pub fn measure_c2(
    localized: &CoefficientField,
    coords: usize,
    alpha: f64,
    sampler: &dyn PairSampler,
    pairs: usize,
    seed: u64,
) -> Result<C2Report> {
    let (x0, r) = localized
        .model()
        .localization()
        .map(|(x, r)| (x.clone(), r))
        .ok_or_else(|| invalid("field", "c2 is measured on localized fields"))?;
    let bi = |x: &[f64], i: usize| {
        x.get(i).copied().unwrap_or(0.0) * (localized.b(x, i) - localized.b(x0.coords(), i))
    };
    let mut sup = Vec::new();
    let mut holder = Vec::new();
    let mut b_holder = Vec::new();
    let mut far_field: f64 = 0.0;
    for i in 0..coords {
        let parts = par_chunks(pairs, CHUNK, |c, range| {
            let mut rng = rng::substream(seed.wrapping_add(i as u64), domain::HOLDER, c as u64);
            let (mut s, mut h, mut far) = (0.0f64, 0.0f64, 0.0f64);
            for _ in range {
                let (x, y) = sampler.sample(&mut rng);
                let (bx, by) = (bi(&x, i), bi(&y, i));
                s = s.max(bx.abs()).max(by.abs());
                let d = x.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                if d > 0.0 {
                    h = h.max((bx - by).abs() / d.powf(alpha));
                }
                let dist = x.iter().enumerate().map(|(k, v)| (v - x0.get(k)).powi(2)).sum::<f64>().sqrt();
                if dist >= 2.0 * r {
                    far = far.max(bx.abs());
                }
                // Points spread around x0 so the taper annulus is covered.
                let u: f64 = rng.random();
                let scale = 2.5 * r * u;
                let z: Vec<f64> = x0.coords().iter().zip(&x).map(|(c, v)| c + scale * (v - c).signum() / (x.len() as f64).sqrt()).collect();
                s = s.max(bi(&z, i).abs());
            }
            (s, h, far)
        });
        let (s, h, far) = parts.into_iter().fold((0.0f64, 0.0f64, 0.0f64), |a, p| (a.0.max(p.0), a.1.max(p.1), a.2.max(p.2)));
        sup.push(s);
        holder.push(h);
        far_field = far_field.max(far);
        b_holder.push(localized.model().b_holder_bound(i, alpha).unwrap_or(f64::NAN));
    }
    let c2 = (0..coords)
        .filter(|&i| b_holder[i] > 0.0)
        .map(|i| sup[i].max(holder[i]) / b_holder[i])
        .fold(0.0, f64::max);
    Ok(C2Report { sup, holder, b_holder, c2, far_field })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{
        banded_field, check_hypotheses, constant_field, continuity_modulus, eta, BlockKind, BoxPairSampler, BoxSampler,
        HypothesisBudget, QBallSampler, StandardBlock, Verdict,
    };
    use crate::spectrum::{make_spectrum, weighted_norm, EigenRule};
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    fn spectrum(n: usize) -> Spectrum {
        make_spectrum(2.5, 1.0, n, &EigenRule::Power).unwrap()
    }

    #[test]
    fn delta1_examples() {
        let s = Spectrum::finite(vec![1.0, 4.0, 9.0]).unwrap();
        let (k0, d1) = delta1_from_delta(1.0, 1.0, 0.9, &s).unwrap();
        assert_eq!(k0, 3);
        assert!((d1 - 1.0 / 6f64.sqrt()).abs() < 1e-15);
        let (k, a) = delta1_from_delta(0.5, 1.0, 0.9, &spectrum(20)).unwrap();
        assert!(a <= 1.0);
        assert!(4.0 * spectrum(20).inverse_power_tail(0.9, k).unwrap() < 0.125);
        if k > 1 {
            assert!(4.0 * spectrum(20).inverse_power_tail(0.9, k - 1).unwrap() >= 0.125);
        }
        assert!(delta1_from_delta(10.0, 1.0, 0.9, &s).unwrap().1 <= 1.0);
        let div = make_spectrum(1.5, 1.0, 10, &EigenRule::Power).unwrap();
        assert!(matches!(delta1_from_delta(1.0, 1.0, 0.5, &div), Err(Error::DivergentTail { .. })));
    }

    #[test]
    fn halving_delta_halves_delta1() {
        let s = Spectrum::finite(vec![1.0, 4.0, 9.0]).unwrap();
        let (k, a) = delta1_from_delta(0.2, 0.01, 0.9, &s).unwrap();
        let (k2, b) = delta1_from_delta(0.1, 0.005, 0.9, &s).unwrap();
        assert_eq!(k, k2);
        assert!((a / b - 2.0).abs() < 1e-12);
    }

    #[test]
    fn rho_examples() {
        let u = State::new(vec![0.3, 0.4]).unwrap();
        assert_eq!(cutoff_rho(&u, 1.0), u);
        assert_eq!(cutoff_rho(&u, 0.25), State::zeros(2));
        let r = u.norm() / 1.5;
        let v = cutoff_rho(&u, r);
        assert!(v.sub(&u.scale(0.5)).norm() < 1e-15);
    }

    #[test]
    fn psi_examples() {
        let s = spectrum(4);
        let x0 = State::new(vec![0.2, 0.1, 0.0, 0.0]).unwrap();
        let bx = LocalizationBox::new(&x0, 0.3, 1.0, 0.9, &s).unwrap();
        let inside = State::new(vec![0.25, 0.05, 0.01, -0.01]).unwrap();
        assert_eq!(clip_psi(&inside, &bx), inside);
        let above = State::new(vec![5.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(clip_psi(&above, &bx).get(0), bx.hi[0]);
        let far = State::new(vec![3.0]).unwrap();
        assert!(LocalizationBox::new(&far, 0.3, 1.0, 0.9, &s).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]
        #[test]
        fn psi_properties(x in proptest::collection::vec(-3.0f64..3.0, 5), h in proptest::collection::vec(-1.0f64..1.0, 5)) {
            let s = spectrum(5);
            let x0 = State::new(vec![0.3, -0.2, 0.1, 0.0, 0.05]).unwrap();
            let bx = LocalizationBox::new(&x0, 0.4, 1.0, 0.9, &s).unwrap();
            let x = State::new(x).unwrap();
            let h = State::new(h).unwrap();
            let px = clip_psi(&x, &bx);
            prop_assert_eq!(clip_psi(&px, &bx), px.clone());
            prop_assert!(clip_psi(&x.add(&h), &bx).sub(&px).norm() <= h.norm() + 1e-15);
            prop_assert!(weighted_norm(&px, 0.9, &s).unwrap() <= 1.0 + 1e-12);
            prop_assert!(px.sub(&x0).coords().iter().all(|v| v.abs() <= 0.4 + 1e-12));
        }

        #[test]
        fn rho_is_a_contraction_towards_zero(u in proptest::collection::vec(-2.0f64..2.0, 3), r in 0.1f64..1.0) {
            let u = State::new(u).unwrap();
            let v = cutoff_rho(&u, r);
            prop_assert!(v.norm() <= u.norm().min(r) + 1e-12);
        }
    }

    /// Identity diffusion plus a sin-varying first entry, `b_1 = 1 + 0.3 sin(x_1)`.
    #[derive(Debug)]
    struct Varying;
    impl FieldModel for Varying {
        fn a(&self, x: &[f64], i: usize, j: usize) -> f64 {
            match (i, j) {
                (0, 0) => 1.0 + 0.2 * x.get(1).copied().unwrap_or(0.0).sin(),
                _ if i == j => 1.0,
                _ => 0.0,
            }
        }
        fn b(&self, x: &[f64], i: usize) -> f64 {
            if i == 0 {
                1.0 + 0.3 * x[0].sin()
            } else {
                1.0
            }
        }
        fn b_holder_bound(&self, i: usize, alpha: f64) -> Option<f64> {
            // sin is 1-Lipschitz with oscillation 2: |sin|_alpha <= 2^{1-alpha}.
            Some(if i == 0 { 0.3 * 2f64.powf(1.0 - alpha) } else { 0.0 })
        }
        fn tail(&self, _alpha: f64) -> FieldTail {
            FieldTail::Constant
        }
    }

    #[test]
    fn localized_field_examples() {
        let s = spectrum(3);
        let field = CoefficientField::from_model(3, Arc::new(Varying), 0.5, 0.5, None, "varying").unwrap();
        let x0 = State::new(vec![0.2, 0.1, 0.0]).unwrap();
        let (_, d1) = delta1_from_delta(0.5, 1.0, 0.9, &s).unwrap();
        let bx = LocalizationBox::new(&x0, d1, 1.0, 0.9, &s).unwrap();
        let loc = localized_field(&field, d1, &bx).unwrap();
        assert!(loc.model().localization().is_some());
        let near = QBallSampler::new(&x0, d1 * 0.999, 1.0, 0.9, &s).unwrap();
        assert_eq!(agreement_gap(&field, &loc, &near, 1000, 3), 0.0);
        // Far field: b~ = b(x0).
        let far = [x0.get(0) + 3.0 * d1, 0.0, 0.0];
        assert_eq!(loc.b(&far, 0), field.b(x0.coords(), 0));

        let pairs = BoxPairSampler::cube(3, 2.0, 1e-3, 1.0);
        let dom = holder_domination(&field, &loc, &bx, 0, 0, 0.5, &pairs, 4000, 1);
        assert!(dom.max_excess <= 1e-12 && dom.localized <= dom.original + 1e-12, "{dom:?}");

        let c2 = measure_c2(&loc, 3, 0.5, &BoxPairSampler::cube(3, 1.0, 1e-3, 1.0), 4000, 2).unwrap();
        assert_eq!(c2.far_field, 0.0);
        assert!(c2.c2.is_finite() && c2.c2 > 0.0);
        // The analytic geometry constant bounds the measured one.
        let xi = x0.get(0).abs();
        let analytic = ((xi + 2.0 * d1) * 2f64.powf(0.5) + (2.0 * d1).powf(0.5) * (4.0 * d1).powf(0.5)) * RHO_LIPSCHITZ.powf(0.5);
        assert!(c2.c2 <= analytic, "{} vs {analytic}", c2.c2);

        let rep = check_hypotheses(&loc, &s, 0.5, 0.9, &HypothesisBudget::default()).unwrap();
        assert_eq!(rep.verdict("drift-sup"), Some(Verdict::Pass));
        assert_eq!(rep.verdict("drift-holder"), Some(Verdict::Pass));
    }

    #[test]
    fn constant_field_is_unchanged() {
        let s = spectrum(2);
        let f = constant_field(DMatrix::identity(2, 2), vec![1.0, 1.0], 1.0).unwrap();
        let bx = LocalizationBox::new(&State::zeros(2), 0.5, 1.0, 0.9, &s).unwrap();
        let loc = localized_field(&f, 0.5, &bx).unwrap();
        assert_eq!(loc.id(), f.id());
        assert!(loc.model().localization().is_none());
    }

    #[test]
    fn localized_eta_below_modulus() {
        let n = 8;
        let s = spectrum(n);
        let field = banded_field(1, 1, Arc::new(StandardBlock::new(BlockKind::SinSum, 0.1)), 0.5, 0.5, &s).unwrap();
        let x0 = State::from_fn(n, |k| 0.3 * s.lambdas()[k].powf(-0.45));
        let delta = 0.5;
        let (_, d1) = delta1_from_delta(delta, 1.0, 0.9, &s).unwrap();
        let bx = LocalizationBox::new(&x0, d1, 1.0, 0.9, &s).unwrap();
        let loc = localized_field(&field, d1, &bx).unwrap();
        let cert = eta(&loc, &x0, &BoxSampler::cube(n, 3.0), 2000, 4);
        let modulus = continuity_modulus(&field, &s, 0.9, 1.0, delta).unwrap();
        assert!(cert.sampled <= modulus, "{} vs {modulus}", cert.sampled);
        assert!(cert.sampled > 0.0);
    }
}
