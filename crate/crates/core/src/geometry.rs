//! Curvature data at a point, normal-coordinate expansions and the model manifolds.
//!
//! Sign convention: `R_{ikjl}` is normalised so that the normal-coordinate metric reads
//!
//! ```text
//! g_ij = δ_ij + 1/3 R_{ikjl} x^k x^l + 1/6 R_{ikjl,m} x^k x^l x^m + O(|x|⁴),
//! ```
//!
//! which forces `R_{ikik} = -K(e_i, e_k)`. Traces are `R_{kl} = Σ_i R_{ikil}` and
//! `Scal = Σ_k R_{kk}`, so the unit round sphere has `R_{kl} = -(n-1)δ_{kl}` and
//! `Scal = -n(n-1)`. This is the only choice under which the Green expansion and the
//! `log|g|` expansion are consistent with the metric above.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::spherical::sphere_volume;
use crate::{Error, Real, Result};

/// Curvature tensors at a point, with all traces recomputed from `R` and `∇R`.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvatureData<T: Real> {
    n: usize,
    r: Vec<T>,
    dr: Vec<T>,
    ric: Vec<T>,
    dric: Vec<T>,
    scal: T,
    dscal: Vec<T>,
}

impl<T: Real> CurvatureData<T> {
    /// Builds the data from `R_{ikjl}` (`n⁴` entries) and `R_{ikjl,m}` (`n⁵` entries),
    /// row-major in the written index order. Traces are derived, never supplied.
    pub fn from_tensors(n: usize, r: Vec<T>, dr: Vec<T>) -> Result<Self> {
        if r.len() != n.pow(4) {
            return Err(Error::Dimension { expected: n.pow(4), got: r.len() });
        }
        if dr.len() != n.pow(5) {
            return Err(Error::Dimension { expected: n.pow(5), got: dr.len() });
        }
        let mut c = Self {
            n,
            r,
            dr,
            ric: vec![T::zero(); n * n],
            dric: vec![T::zero(); n * n * n],
            scal: T::zero(),
            dscal: vec![T::zero(); n],
        };
        c.recompute_traces();
        Ok(c)
    }

    pub fn flat(n: usize) -> Self {
        Self::from_tensors(n, vec![T::zero(); n.pow(4)], vec![T::zero(); n.pow(5)]).expect("shapes")
    }

    /// Constant sectional curvature `k`: `R_{ikjl} = k(δ_il δ_kj - δ_ij δ_kl)`.
    pub fn constant_curvature(n: usize, k: T) -> Self {
        let mut r = vec![T::zero(); n.pow(4)];
        for i in 0..n {
            for kk in 0..n {
                for j in 0..n {
                    for l in 0..n {
                        let v: T = delta::<T>(i, l) * delta::<T>(kk, j) - delta::<T>(i, j) * delta::<T>(kk, l);
                        r[idx4(n, i, kk, j, l)] = k * v;
                    }
                }
            }
        }
        Self::from_tensors(n, r, vec![T::zero(); n.pow(5)]).expect("shapes")
    }

    fn recompute_traces(&mut self) {
        let n = self.n;
        for k in 0..n {
            for l in 0..n {
                self.ric[k * n + l] = (0..n).map(|i| self.r(i, k, i, l)).sum();
                for m in 0..n {
                    self.dric[(k * n + l) * n + m] = (0..n).map(|i| self.dr(i, k, i, l, m)).sum();
                }
            }
        }
        self.scal = (0..n).map(|k| self.ric(k, k)).sum();
        for t in 0..n {
            self.dscal[t] = (0..n).map(|k| self.dric(k, k, t)).sum();
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn r(&self, i: usize, k: usize, j: usize, l: usize) -> T {
        self.r[idx4(self.n, i, k, j, l)]
    }

    #[inline]
    pub fn dr(&self, i: usize, k: usize, j: usize, l: usize, m: usize) -> T {
        self.dr[idx4(self.n, i, k, j, l) * self.n + m]
    }

    #[inline]
    pub fn ric(&self, k: usize, l: usize) -> T {
        self.ric[k * self.n + l]
    }

    /// `R_{kl,m}`.
    #[inline]
    pub fn dric(&self, k: usize, l: usize, m: usize) -> T {
        self.dric[(k * self.n + l) * self.n + m]
    }

    /// `R_{·kjl,·} = Σ_i R_{ikjl,i}` (first and last slots contracted).
    pub fn dr_contracted(&self, k: usize, j: usize, l: usize) -> T {
        (0..self.n).map(|i| self.dr(i, k, j, l, i)).sum()
    }

    pub fn scal(&self) -> T {
        self.scal
    }

    /// `Scal_{,t}`.
    pub fn dscal(&self) -> &[T] {
        &self.dscal
    }

    pub fn r_tensor(&self) -> &[T] {
        &self.r
    }

    pub fn dr_tensor(&self) -> &[T] {
        &self.dr
    }

    pub fn cast<U: Real>(&self) -> CurvatureData<U> {
        let c = |v: &Vec<T>| v.iter().map(|x| U::lit(x.to_f64_lossy())).collect::<Vec<U>>();
        CurvatureData::from_tensors(self.n, c(&self.r), c(&self.dr)).expect("same shapes")
    }

    /// Largest violation of each identity the data must satisfy.
    pub fn symmetry_residuals(&self) -> Vec<(&'static str, T)> {
        let n = self.n;
        let mut anti = T::zero();
        let mut pair = T::zero();
        let mut bianchi = T::zero();
        let mut d_anti = T::zero();
        let mut d_pair = T::zero();
        let mut d_bianchi = T::zero();
        for i in 0..n {
            for k in 0..n {
                for j in 0..n {
                    for l in 0..n {
                        let v = self.r(i, k, j, l);
                        anti = anti.max((v + self.r(k, i, j, l)).abs()).max((v + self.r(i, k, l, j)).abs());
                        pair = pair.max((v - self.r(j, l, i, k)).abs());
                        bianchi = bianchi.max((v + self.r(i, j, l, k) + self.r(i, l, k, j)).abs());
                        for m in 0..n {
                            let d = self.dr(i, k, j, l, m);
                            d_anti = d_anti
                                .max((d + self.dr(k, i, j, l, m)).abs())
                                .max((d + self.dr(i, k, l, j, m)).abs());
                            d_pair = d_pair.max((d - self.dr(j, l, i, k, m)).abs());
                            d_bianchi =
                                d_bianchi.max((d + self.dr(i, j, l, k, m) + self.dr(i, l, k, j, m)).abs());
                        }
                    }
                }
            }
        }
        let mut second = T::zero();
        for t in 0..n {
            let s: T = (0..n).map(|j| self.dric(t, j, j)).sum();
            second = second.max((s - self.dscal[t] / T::lit(2.0)).abs());
        }
        vec![
            ("antisymmetry of R", anti),
            ("pair symmetry of R", pair),
            ("first Bianchi identity of R", bianchi),
            ("antisymmetry of dR", d_anti),
            ("pair symmetry of dR", d_pair),
            ("first Bianchi identity of dR", d_bianchi),
            ("second Bianchi trace sum_j R_tj,j = Scal_,t / 2", second),
        ]
    }

    /// Checks every identity against `tol` scaled by the tensor magnitude.
    pub fn check_symmetries(&self, tol: T) -> Result<()> {
        let scale = self.r.iter().chain(&self.dr).fold(T::one(), |m, x| m.max(x.abs()));
        for (name, res) in self.symmetry_residuals() {
            if res > tol * scale {
                return Err(Error::Symmetry { identity: name, residual: res.to_f64_lossy() });
            }
        }
        Ok(())
    }

    /// `Σ R_{ikjl} x^i x^k` for fixed `(j, l)`, maximised over `(j, l)`; zero for genuine data.
    pub fn rxx_residual(&self, x: &[T]) -> T {
        let n = self.n;
        let mut worst = T::zero();
        for j in 0..n {
            for l in 0..n {
                let mut s = T::zero();
                for i in 0..n {
                    for k in 0..n {
                        s = s + self.r(i, k, j, l) * x[i] * x[k];
                    }
                }
                worst = worst.max(s.abs());
            }
        }
        worst
    }
}

#[inline]
fn idx4(n: usize, i: usize, k: usize, j: usize, l: usize) -> usize {
    ((i * n + k) * n + j) * n + l
}

fn delta<T: Real>(a: usize, b: usize) -> T {
    if a == b {
        T::one()
    } else {
        T::zero()
    }
}

/// Kulkarni–Nomizu product `(h ∧ k)_{ikjl} = h_ij k_kl + h_kl k_ij - h_il k_kj - h_kj k_il`.
pub fn kulkarni_nomizu<T: Real>(n: usize, h: &[T], k: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); n.pow(4)];
    for i in 0..n {
        for kk in 0..n {
            for j in 0..n {
                for l in 0..n {
                    out[idx4(n, i, kk, j, l)] = h[i * n + j] * k[kk * n + l] + h[kk * n + l] * k[i * n + j]
                        - h[i * n + l] * k[kk * n + j]
                        - h[kk * n + j] * k[i * n + l];
                }
            }
        }
    }
    out
}

/// Orthogonal projection of a 4-tensor onto algebraic curvature tensors: antisymmetrise both
/// pairs, symmetrise under pair exchange, then remove the totally antisymmetric part.
pub fn project_algebraic(n: usize, t: &[f64]) -> Vec<f64> {
    let mut a = vec![0.0; n.pow(4)];
    for i in 0..n {
        for k in 0..n {
            for j in 0..n {
                for l in 0..n {
                    a[idx4(n, i, k, j, l)] = 0.25
                        * (t[idx4(n, i, k, j, l)] - t[idx4(n, k, i, j, l)] - t[idx4(n, i, k, l, j)]
                            + t[idx4(n, k, i, l, j)]);
                }
            }
        }
    }
    let mut s = vec![0.0; n.pow(4)];
    for i in 0..n {
        for k in 0..n {
            for j in 0..n {
                for l in 0..n {
                    s[idx4(n, i, k, j, l)] = 0.5 * (a[idx4(n, i, k, j, l)] + a[idx4(n, j, l, i, k)]);
                }
            }
        }
    }
    let mut r = vec![0.0; n.pow(4)];
    for i in 0..n {
        for k in 0..n {
            for j in 0..n {
                for l in 0..n {
                    let cyc = s[idx4(n, i, k, j, l)] + s[idx4(n, i, j, l, k)] + s[idx4(n, i, l, k, j)];
                    r[idx4(n, i, k, j, l)] = s[idx4(n, i, k, j, l)] - cyc / 3.0;
                }
            }
        }
    }
    r
}

fn project_slices(n: usize, d: &[f64]) -> Vec<f64> {
    let n4 = n.pow(4);
    let mut out = vec![0.0; n4 * n];
    let mut slice = vec![0.0; n4];
    for m in 0..n {
        for (q, s) in slice.iter_mut().enumerate() {
            *s = d[q * n + m];
        }
        let p = project_algebraic(n, &slice);
        for (q, v) in p.iter().enumerate() {
            out[q * n + m] = *v;
        }
    }
    out
}

/// Cached data of the `∇R` projector for one dimension: the representers `g_t` of the
/// second-Bianchi trace functionals inside the per-slice algebraic subspace, and the
/// inverse of their Gram matrix.
struct DerivativeProjector {
    reps: Vec<Vec<f64>>,
    gram_inv: Vec<f64>,
}

fn derivative_projector(n: usize) -> Arc<DerivativeProjector> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<DerivativeProjector>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(p) = cache.lock().expect("projector cache").get(&n) {
        return Arc::clone(p);
    }
    let n5 = n.pow(5);
    let at = |i: usize, k: usize, j: usize, l: usize, m: usize| idx4(n, i, k, j, l) * n + m;
    let mut reps = Vec::with_capacity(n);
    for t in 0..n {
        // c_t(D) = Σ_{i,j} D_{itij,j} - ½ Σ_{i,k} D_{ikik,t}
        let mut g = vec![0.0; n5];
        for i in 0..n {
            for j in 0..n {
                g[at(i, t, i, j, j)] += 1.0;
                g[at(i, j, i, j, t)] -= 0.5;
            }
        }
        reps.push(project_slices(n, &g));
    }
    let mut gram = vec![0.0; n * n];
    for s in 0..n {
        for t in 0..n {
            gram[s * n + t] = reps[s].iter().zip(&reps[t]).map(|(a, b)| a * b).sum();
        }
    }
    let gram_inv = invert_dense(n, &gram).expect("trace functionals are independent");
    let p = Arc::new(DerivativeProjector { reps, gram_inv });
    cache.lock().expect("projector cache").insert(n, Arc::clone(&p));
    p
}

/// Orthogonal projection of a 5-tensor onto `{per-slice algebraic symmetries} ∩ {Σ_j R_{tj,j} = ½ Scal_{,t}}`.
pub fn project_derivative(n: usize, d: &[f64]) -> Vec<f64> {
    let mut p = project_slices(n, d);
    let proj = derivative_projector(n);
    let c: Vec<f64> = proj.reps.iter().map(|g| g.iter().zip(&p).map(|(a, b)| a * b).sum()).collect();
    for s in 0..n {
        let lam: f64 = (0..n).map(|t| proj.gram_inv[s * n + t] * c[t]).sum();
        for (x, g) in p.iter_mut().zip(&proj.reps[s]) {
            *x -= lam * g;
        }
    }
    p
}

/// Gauss–Jordan inverse of a small dense matrix.
pub(crate) fn invert_dense(n: usize, a: &[f64]) -> Option<Vec<f64>> {
    let mut m = a.to_vec();
    let mut inv = vec![0.0; n * n];
    for i in 0..n {
        inv[i * n + i] = 1.0;
    }
    for col in 0..n {
        let piv = (col..n).max_by(|&x, &y| m[x * n + col].abs().total_cmp(&m[y * n + col].abs()))?;
        if m[piv * n + col].abs() < 1e-300 {
            return None;
        }
        for k in 0..n {
            m.swap(col * n + k, piv * n + k);
            inv.swap(col * n + k, piv * n + k);
        }
        let d = m[col * n + col];
        for k in 0..n {
            m[col * n + k] /= d;
            inv[col * n + k] /= d;
        }
        for r in 0..n {
            if r != col {
                let f = m[r * n + col];
                if f != 0.0 {
                    for k in 0..n {
                        m[r * n + k] -= f * m[col * n + k];
                        inv[r * n + k] -= f * inv[col * n + k];
                    }
                }
            }
        }
    }
    Some(inv)
}

/// Seeded synthetic curvature data: Gaussian tensors projected onto the symmetry subspace,
/// traces recomputed from the projections. Supports `3 ≤ n ≤ 8`.
pub fn random_curvature<T: Real>(n: usize, seed: u64) -> Result<CurvatureData<T>> {
    if !(3..=8).contains(&n) {
        return Err(Error::Unsupported(format!("random curvature needs 3 <= n <= 8, got {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((n as u64) << 56));
    let mut gauss = |len: usize| -> Vec<f64> { (0..len).map(|_| StandardNormal.sample(&mut rng)).collect() };
    let r = project_algebraic(n, &gauss(n.pow(4)));
    let dr = project_derivative(n, &gauss(n.pow(5)));
    let c = CurvatureData::<f64>::from_tensors(n, r, dr)?;
    Ok(c.cast())
}

/// `g_ij(x)` from the cubic normal-coordinate expansion, row-major `n×n`.
pub fn metric_expansion<T: Real>(curv: &CurvatureData<T>, x: &[T]) -> Vec<T> {
    let n = curv.dim();
    let third = T::one() / T::lit(3.0);
    let sixth = T::one() / T::lit(6.0);
    let mut g = vec![T::zero(); n * n];
    for i in 0..n {
        for j in 0..n {
            let mut s = delta::<T>(i, j);
            for k in 0..n {
                for l in 0..n {
                    let xx = x[k] * x[l];
                    s = s + third * curv.r(i, k, j, l) * xx;
                    for m in 0..n {
                        s = s + sixth * curv.dr(i, k, j, l, m) * xx * x[m];
                    }
                }
            }
            g[i * n + j] = s;
        }
    }
    g
}

/// `(g^{ij}(x), log|g|(x))` from the cubic expansions
/// `g^{ij} = δ - 1/3 R_{ikjl}x^k x^l - 1/6 R_{ikjl,m}x^k x^l x^m` and
/// `log|g| = 1/3 R_{kl}x^k x^l + 1/6 R_{kl,m}x^k x^l x^m`.
pub fn inverse_logdet_expansion<T: Real>(curv: &CurvatureData<T>, x: &[T]) -> (Vec<T>, T) {
    let n = curv.dim();
    let mut g = metric_expansion(curv, x);
    for i in 0..n {
        for j in 0..n {
            let d = g[i * n + j] - delta::<T>(i, j);
            g[i * n + j] = delta::<T>(i, j) - d;
        }
    }
    let third = T::one() / T::lit(3.0);
    let sixth = T::one() / T::lit(6.0);
    let mut ld = T::zero();
    for k in 0..n {
        for l in 0..n {
            let xx = x[k] * x[l];
            ld = ld + third * curv.ric(k, l) * xx;
            for m in 0..n {
                ld = ld + sixth * curv.dric(k, l, m) * xx * x[m];
            }
        }
    }
    (g, ld)
}

/// Gradients of the expanded coefficients: `∂_p g^{ij}` (`[p][i][j]`) and `∂_p log|g|`.
pub fn inverse_logdet_gradients<T: Real>(curv: &CurvatureData<T>, x: &[T]) -> (Vec<T>, Vec<T>) {
    let n = curv.dim();
    let third = T::one() / T::lit(3.0);
    let sixth = T::one() / T::lit(6.0);
    let mut dg = vec![T::zero(); n * n * n];
    let mut dld = vec![T::zero(); n];
    for p in 0..n {
        for i in 0..n {
            for j in 0..n {
                let mut s = T::zero();
                for a in 0..n {
                    s = s + third * (curv.r(i, p, j, a) + curv.r(i, a, j, p)) * x[a];
                    for b in 0..n {
                        let xx = x[a] * x[b];
                        s = s + sixth * (curv.dr(i, p, j, a, b) + curv.dr(i, a, j, p, b) + curv.dr(i, a, j, b, p)) * xx;
                    }
                }
                dg[(p * n + i) * n + j] = -s;
            }
        }
        let mut s = T::zero();
        for a in 0..n {
            s = s + third * (curv.ric(p, a) + curv.ric(a, p)) * x[a];
            for b in 0..n {
                let xx = x[a] * x[b];
                s = s + sixth * (curv.dric(p, a, b) + curv.dric(a, p, b) + curv.dric(a, b, p)) * xx;
            }
        }
        dld[p] = s;
    }
    (dg, dld)
}

/// `Δ_g u = Σ g^{ij}∂_i∂_j u + Σ ∂_i g^{ij} ∂_j u + ½ Σ g^{ij} ∂_i log|g| ∂_j u` for the
/// expanded metric, given the Euclidean gradient and Hessian of `u` at `x`.
pub fn expanded_laplacian<T: Real>(curv: &CurvatureData<T>, x: &[T], grad: &[T], hess: &[T]) -> T {
    let n = curv.dim();
    let (ginv, _) = inverse_logdet_expansion(curv, x);
    let (dg, dld) = inverse_logdet_gradients(curv, x);
    let half = T::lit(0.5);
    let mut s = T::zero();
    for i in 0..n {
        for j in 0..n {
            s = s + ginv[i * n + j] * hess[i * n + j];
            s = s + dg[(i * n + i) * n + j] * grad[j];
            s = s + half * ginv[i * n + j] * dld[i] * grad[j];
        }
    }
    s
}

/// Boundary condition class of a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum BoundaryCase {
    /// Dirichlet outer boundary: `φ₀` is not constant.
    Dirichlet,
    /// Closed manifold or Neumann boundary: `φ₀` is constant.
    Closed,
}

/// Model manifolds with closed-form first eigendata.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum ModelManifold {
    /// `ℝⁿ / Π periods_i ℤ`.
    FlatTorus { periods: Vec<f64> },
    /// `Π [0, L_i]` with Dirichlet conditions.
    DirichletBox { sides: Vec<f64> },
    /// `Π [0, L_i]` with Neumann conditions.
    NeumannBox { sides: Vec<f64> },
    /// Round sphere `S^n` of the given radius, in normal coordinates at any point.
    RoundSphere { n: usize, radius: f64 },
}

/// `(φ₀(p), ∇φ₀(p), λ₀, curvature at p)`.
#[derive(Debug, Clone)]
pub struct ModelData {
    pub phi0: f64,
    pub grad_phi0: Vec<f64>,
    pub lambda0: f64,
    pub curvature: CurvatureData<f64>,
}

impl ModelManifold {
    pub fn unit_torus(n: usize) -> Self {
        Self::FlatTorus { periods: vec![1.0; n] }
    }

    pub fn unit_box(n: usize) -> Self {
        Self::DirichletBox { sides: vec![1.0; n] }
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::FlatTorus { periods } => periods.len(),
            Self::DirichletBox { sides } | Self::NeumannBox { sides } => sides.len(),
            Self::RoundSphere { n, .. } => *n,
        }
    }

    pub fn volume(&self) -> f64 {
        match self {
            Self::FlatTorus { periods } => periods.iter().product(),
            Self::DirichletBox { sides } | Self::NeumannBox { sides } => sides.iter().product(),
            Self::RoundSphere { n, radius } => sphere_volume::<f64>(n + 1) * radius.powi(*n as i32),
        }
    }

    pub fn case(&self) -> BoundaryCase {
        match self {
            Self::DirichletBox { .. } => BoundaryCase::Dirichlet,
            _ => BoundaryCase::Closed,
        }
    }

    pub fn is_flat(&self) -> bool {
        !matches!(self, Self::RoundSphere { .. })
    }

    pub fn lambda0(&self) -> f64 {
        match self {
            Self::DirichletBox { sides } => sides.iter().map(|l| (std::f64::consts::PI / l).powi(2)).sum(),
            _ => 0.0,
        }
    }

    /// First eigenfunction, unit `L²` norm.
    pub fn phi0(&self, p: &[f64]) -> f64 {
        match self {
            Self::DirichletBox { sides } => sides
                .iter()
                .zip(p)
                .map(|(l, x)| (2.0 / l).sqrt() * (std::f64::consts::PI * x / l).sin())
                .product(),
            _ => 1.0 / self.volume().sqrt(),
        }
    }

    pub fn grad_phi0(&self, p: &[f64]) -> Vec<f64> {
        match self {
            Self::DirichletBox { sides } => {
                let pi = std::f64::consts::PI;
                (0..sides.len())
                    .map(|d| {
                        sides
                            .iter()
                            .zip(p)
                            .enumerate()
                            .map(|(e, (l, x))| {
                                let a = (2.0 / l).sqrt();
                                if e == d {
                                    a * pi / l * (pi * x / l).cos()
                                } else {
                                    a * (pi * x / l).sin()
                                }
                            })
                            .product()
                    })
                    .collect()
            }
            _ => vec![0.0; self.dim()],
        }
    }

    /// Default validity radius of the local expansions: a tenth of the injectivity proxy.
    pub fn validity_radius(&self) -> f64 {
        let proxy = match self {
            Self::FlatTorus { periods } => periods.iter().cloned().fold(f64::INFINITY, f64::min) / 2.0,
            Self::DirichletBox { sides } | Self::NeumannBox { sides } => {
                sides.iter().cloned().fold(f64::INFINITY, f64::min) / 2.0
            }
            Self::RoundSphere { radius, .. } => std::f64::consts::PI * radius,
        };
        0.1 * proxy
    }

    /// Distance from `p` to the outer boundary (infinite without boundary).
    pub fn boundary_distance(&self, p: &[f64]) -> f64 {
        match self {
            Self::DirichletBox { sides } | Self::NeumannBox { sides } => sides
                .iter()
                .zip(p)
                .map(|(l, x)| x.min(l - x))
                .fold(f64::INFINITY, f64::min),
            _ => f64::INFINITY,
        }
    }

    pub fn curvature(&self) -> CurvatureData<f64> {
        match self {
            Self::RoundSphere { n, radius } => CurvatureData::constant_curvature(*n, 1.0 / (radius * radius)),
            _ => CurvatureData::flat(self.dim()),
        }
    }
}

/// Closed-form eigendata and curvature at an interior point.
pub fn model_data(m: &ModelManifold, p: &[f64]) -> Result<ModelData> {
    if p.len() != m.dim() {
        return Err(Error::Dimension { expected: m.dim(), got: p.len() });
    }
    if m.boundary_distance(p) <= 0.0 {
        return Err(Error::Invalid(format!("point {p:?} is on or outside the boundary")));
    }
    Ok(ModelData { phi0: m.phi0(p), grad_phi0: m.grad_phi0(p), lambda0: m.lambda0(), curvature: m.curvature() })
}

/// Exact metric of the round sphere of radius `a` in normal coordinates at `x`.
pub fn sphere_normal_metric(n: usize, radius: f64, x: &[f64]) -> Vec<f64> {
    let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut g = vec![0.0; n * n];
    let f = if r == 0.0 { 1.0 } else { (radius * (r / radius).sin() / r).powi(2) };
    for i in 0..n {
        for j in 0..n {
            let (xi, xj) = if r == 0.0 { (0.0, 0.0) } else { (x[i] / r, x[j] / r) };
            g[i * n + j] = xi * xj + f * (if i == j { 1.0 } else { 0.0 } - xi * xj);
        }
    }
    g
}
