//! Test functions depending on finitely many coordinates, with closed-form
//! gradients and Hessians.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Anything that can be evaluated at a state. Closures qualify.
pub trait ScalarFn: Sync {
    fn eval(&self, x: &[f64]) -> f64;
}

impl<F: Fn(&[f64]) -> f64 + Sync> ScalarFn for F {
    fn eval(&self, x: &[f64]) -> f64 {
        self(x)
    }
}

/// Serializable description: `kind`, number of coordinates `n`, `params`.
///
/// | kind | params |
/// |---|---|
/// | `constant` | `[value]` |
/// | `sine` | `c_1..c_n [, phase]` for `sin(c.x + phase)` |
/// | `product-sine` | `c_1..c_n [, phi_1..phi_n]` for `prod sin(c_i x_i + phi_i)` |
/// | `gaussian-bump` | `[m_1..m_n [, s]]` for `exp(-s |x - m|^2)` |
/// | `compact-bump` | `[m_1..m_n, r]` for `exp(1 - 1/(1 - |x - m|^2/r^2))` |
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestFunctionSpec {
    pub kind: String,
    pub n: usize,
    #[serde(default)]
    pub params: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
enum Kind {
    Constant(f64),
    Sine { c: Vec<f64>, phase: f64 },
    ProductSine { c: Vec<f64>, phase: Vec<f64> },
    GaussianBump { m: Vec<f64>, s: f64 },
    CompactBump { m: Vec<f64>, r: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct TestFunction {
    kind: Kind,
    n: usize,
    sup: f64,
    osc: f64,
    lipschitz: f64,
    spec: TestFunctionSpec,
}

pub fn make_test_function(kind: &str, n: usize, params: &[f64]) -> Result<TestFunction> {
    let spec = TestFunctionSpec { kind: kind.to_string(), n, params: params.to_vec() };
    let bad = |what: &str| invalid("params", format!("{kind} with n = {n}: {what}"));
    if n == 0 && kind != "constant" {
        return Err(invalid("n", "test functions must depend on at least one coordinate"));
    }
    let norm = |v: &[f64]| v.iter().map(|c| c * c).sum::<f64>().sqrt();
    let (k, sup, osc, lip) = match kind {
        "constant" => {
            let v = match params {
                [] => 1.0,
                [v] => *v,
                _ => return Err(bad("expected [value]")),
            };
            (Kind::Constant(v), v.abs(), 0.0, 0.0)
        }
        "sine" => {
            let (c, phase) = match params.len() {
                l if l == n => (params.to_vec(), 0.0),
                l if l == n + 1 => (params[..n].to_vec(), params[n]),
                _ => return Err(bad("expected n coefficients and an optional phase")),
            };
            let l = norm(&c);
            (Kind::Sine { c, phase }, 1.0, 2.0, l)
        }
        "product-sine" => {
            let (c, phase) = match params.len() {
                l if l == n => (params.to_vec(), vec![0.0; n]),
                l if l == 2 * n => (params[..n].to_vec(), params[n..].to_vec()),
                _ => return Err(bad("expected n coefficients and optionally n phases")),
            };
            // Each partial derivative is bounded by |c_i|.
            let l = norm(&c);
            (Kind::ProductSine { c, phase }, 1.0, 2.0, l)
        }
        "gaussian-bump" => {
            let (m, s) = match params.len() {
                0 => (vec![0.0; n], 1.0),
                l if l == n => (params.to_vec(), 1.0),
                l if l == n + 1 => (params[..n].to_vec(), params[n]),
                _ => return Err(bad("expected [m_1..m_n [, s]]")),
            };
            if !(s > 0.0) {
                return Err(bad("scale must be positive"));
            }
            // max_r 2 s r exp(-s r^2) = sqrt(2 s) e^{-1/2}
            (Kind::GaussianBump { m, s }, 1.0, 1.0, (2.0 * s).sqrt() * (-0.5f64).exp())
        }
        "compact-bump" => {
            let (m, r) = match params.len() {
                0 => (vec![0.0; n], 1.0),
                l if l == n + 1 => (params[..n].to_vec(), params[n]),
                _ => return Err(bad("expected [m_1..m_n, r]")),
            };
            if !(r > 0.0) {
                return Err(bad("radius must be positive"));
            }
            (Kind::CompactBump { m, r }, 1.0, 1.0, compact_bump_slope() / r)
        }
        other => return Err(Error::UnknownKind(other.to_string())),
    };
    Ok(TestFunction { kind: k, n, sup, osc, lipschitz: lip, spec })
}

/// `max_rho |d/d rho exp(1 - 1/(1 - rho^2))|`, by a fine scan with a small
/// safety margin (the maximiser is smooth and interior).
fn compact_bump_slope() -> f64 {
    let steps = 100_000;
    let mut best: f64 = 0.0;
    for i in 1..steps {
        let rho = i as f64 / steps as f64;
        let q = rho * rho;
        let g = (1.0 - 1.0 / (1.0 - q)).exp();
        best = best.max(g / (1.0 - q).powi(2) * 2.0 * rho);
    }
    best * 1.001
}

impl TestFunction {
    pub fn from_spec(spec: &TestFunctionSpec) -> Result<Self> {
        make_test_function(&spec.kind, spec.n, &spec.params)
    }

    pub fn spec(&self) -> &TestFunctionSpec {
        &self.spec
    }

    /// Number of leading coordinates `f` depends on.
    pub fn depends_on(&self) -> usize {
        self.n
    }

    pub fn sup_norm(&self) -> f64 {
        self.sup
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    /// Declared `|f|_{C^alpha} <= osc^{1-alpha} Lip^alpha`.
    pub fn holder_bound(&self, alpha: f64) -> f64 {
        if self.lipschitz == 0.0 {
            return 0.0;
        }
        self.osc.powf(1.0 - alpha) * self.lipschitz.powf(alpha)
    }

    pub fn is_constant(&self) -> bool {
        matches!(self.kind, Kind::Constant(_))
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let xi = |i: usize| x.get(i).copied().unwrap_or(0.0);
        match &self.kind {
            Kind::Constant(v) => *v,
            Kind::Sine { c, phase } => (c.iter().enumerate().map(|(i, ci)| ci * xi(i)).sum::<f64>() + phase).sin(),
            Kind::ProductSine { c, phase } => (0..self.n).map(|i| (c[i] * xi(i) + phase[i]).sin()).product(),
            Kind::GaussianBump { m, s } => (-s * dist2(x, m)).exp(),
            Kind::CompactBump { m, r } => {
                let q = dist2(x, m) / (r * r);
                if q < 1.0 {
                    (1.0 - 1.0 / (1.0 - q)).exp()
                } else {
                    0.0
                }
            }
        }
    }

    /// Gradient over the first [`depends_on`](Self::depends_on) coordinates.
    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let n = self.n;
        let xi = |i: usize| x.get(i).copied().unwrap_or(0.0);
        match &self.kind {
            Kind::Constant(_) => vec![0.0; n],
            Kind::Sine { c, phase } => {
                let cs = (c.iter().enumerate().map(|(i, ci)| ci * xi(i)).sum::<f64>() + phase).cos();
                c.iter().map(|ci| ci * cs).collect()
            }
            Kind::ProductSine { c, phase } => {
                let th: Vec<f64> = (0..n).map(|i| c[i] * xi(i) + phase[i]).collect();
                (0..n)
                    .map(|i| {
                        c[i] * th[i].cos() * (0..n).filter(|&j| j != i).map(|j| th[j].sin()).product::<f64>()
                    })
                    .collect()
            }
            Kind::GaussianBump { m, s } => {
                let f = (-s * dist2(x, m)).exp();
                (0..n).map(|i| -2.0 * s * (xi(i) - m[i]) * f).collect()
            }
            Kind::CompactBump { m, r } => {
                let q = dist2(x, m) / (r * r);
                if q >= 1.0 {
                    return vec![0.0; n];
                }
                let g = (1.0 - 1.0 / (1.0 - q)).exp();
                let g1 = -g / (1.0 - q).powi(2);
                (0..n).map(|i| g1 * 2.0 * (xi(i) - m[i]) / (r * r)).collect()
            }
        }
    }

    /// Hessian over the first `depends_on` coordinates, row-major.
    pub fn hessian(&self, x: &[f64]) -> Vec<f64> {
        let n = self.n;
        let xi = |i: usize| x.get(i).copied().unwrap_or(0.0);
        let mut h = vec![0.0; n * n];
        match &self.kind {
            Kind::Constant(_) => {}
            Kind::Sine { c, phase } => {
                let sn = (c.iter().enumerate().map(|(i, ci)| ci * xi(i)).sum::<f64>() + phase).sin();
                for i in 0..n {
                    for j in 0..n {
                        h[i * n + j] = -c[i] * c[j] * sn;
                    }
                }
            }
            Kind::ProductSine { c, phase } => {
                let th: Vec<f64> = (0..n).map(|i| c[i] * xi(i) + phase[i]).collect();
                for i in 0..n {
                    for j in 0..n {
                        h[i * n + j] = if i == j {
                            -c[i] * c[i] * (0..n).map(|k| th[k].sin()).product::<f64>()
                        } else {
                            c[i] * c[j]
                                * th[i].cos()
                                * th[j].cos()
                                * (0..n).filter(|&k| k != i && k != j).map(|k| th[k].sin()).product::<f64>()
                        };
                    }
                }
            }
            Kind::GaussianBump { m, s } => {
                let f = (-s * dist2(x, m)).exp();
                for i in 0..n {
                    for j in 0..n {
                        let d = 4.0 * s * s * (xi(i) - m[i]) * (xi(j) - m[j]);
                        h[i * n + j] = (d - if i == j { 2.0 * s } else { 0.0 }) * f;
                    }
                }
            }
            Kind::CompactBump { m, r } => {
                let r2 = r * r;
                let q = dist2(x, m) / r2;
                if q < 1.0 {
                    let g = (1.0 - 1.0 / (1.0 - q)).exp();
                    let g1 = -g / (1.0 - q).powi(2);
                    let g2 = g * (2.0 * q - 1.0) / (1.0 - q).powi(4);
                    for i in 0..n {
                        for j in 0..n {
                            let di = xi(i) - m[i];
                            let dj = xi(j) - m[j];
                            h[i * n + j] = g2 * 4.0 * di * dj / (r2 * r2) + if i == j { 2.0 * g1 / r2 } else { 0.0 };
                        }
                    }
                }
            }
        }
        h
    }
}

impl ScalarFn for TestFunction {
    fn eval(&self, x: &[f64]) -> f64 {
        self.value(x)
    }
}

fn dist2(x: &[f64], m: &[f64]) -> f64 {
    m.iter().enumerate().map(|(i, mi)| (x.get(i).copied().unwrap_or(0.0) - mi).powi(2)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn family() -> Vec<TestFunction> {
        vec![
            make_test_function("constant", 2, &[1.0]).unwrap(),
            make_test_function("sine", 3, &[1.0, -0.5, 0.3, 0.2]).unwrap(),
            make_test_function("product-sine", 2, &[1.0, 2.0, 0.4, 1.1]).unwrap(),
            make_test_function("gaussian-bump", 2, &[0.2, -0.1, 0.7]).unwrap(),
            make_test_function("compact-bump", 2, &[0.1, 0.0, 1.5]).unwrap(),
        ]
    }

    #[test]
    fn examples() {
        let c = make_test_function("constant", 3, &[1.0]).unwrap();
        assert_eq!(c.gradient(&[0.3, 1.0, 2.0]), vec![0.0; 3]);
        assert_eq!(c.hessian(&[0.3, 1.0, 2.0]), vec![0.0; 9]);
        let s = make_test_function("sine", 1, &[1.0]).unwrap();
        assert_eq!(s.gradient(&[0.7]), vec![0.7f64.cos()]);
        assert_eq!(s.hessian(&[0.7]), vec![-(0.7f64.sin())]);
        let g = make_test_function("gaussian-bump", 2, &[]).unwrap();
        assert_eq!(g.value(&[0.0, 0.0, 5.0]), 1.0);
        assert_eq!(g.sup_norm(), 1.0);
        assert!(matches!(make_test_function("wavelet", 2, &[]), Err(Error::UnknownKind(_))));
        assert!(make_test_function("sine", 2, &[1.0]).is_err());
    }

    #[test]
    fn declared_lipschitz_dominates_gradients() {
        let mut rng = crate::rng::substream(1, 0, 0);
        use rand::Rng;
        for f in family() {
            for _ in 0..2000 {
                let x: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
                let g = f.gradient(&x);
                let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
                assert!(norm <= f.lipschitz() + 1e-12, "{:?}", f.spec());
                assert!(f.value(&x).abs() <= f.sup_norm() + 1e-12);
            }
        }
    }

    proptest! {
        #[test]
        fn derivatives_match_finite_differences(x in proptest::collection::vec(-1.5f64..1.5, 3), which in 0usize..5) {
            let f = &family()[which];
            let n = f.depends_on();
            let h = 1e-5;
            let g = f.gradient(&x);
            let hs = f.hessian(&x);
            for i in 0..n {
                let mut p = x.clone();
                let mut m = x.clone();
                p[i] += h;
                m[i] -= h;
                let fd = (f.value(&p) - f.value(&m)) / (2.0 * h);
                prop_assert!((fd - g[i]).abs() <= 1e-6 * (1.0 + g[i].abs()));
                let gp = f.gradient(&p);
                let gm = f.gradient(&m);
                for j in 0..n {
                    let fd2 = (gp[j] - gm[j]) / (2.0 * h);
                    prop_assert!((fd2 - hs[i * n + j]).abs() <= 1e-5 * (1.0 + hs[i * n + j].abs()));
                    prop_assert!((hs[i * n + j] - hs[j * n + i]).abs() < 1e-12);
                }
            }
        }
    }
}
