//! Harmonic analysis on the unit sphere `S^{n-1} ⊂ ℝⁿ`.
//!
//! Eigenvalues of `-Δ_{S^{n-1}}` are `j(n-2+j)`. Integrals of monomials are exact:
//!
//! ```text
//! ∫ x^α dvol = 2 ∏ Γ((α_i+1)/2) / Γ(Σ(α_i+1)/2)      (all α_i even), 0 otherwise.
//! ```
//!
//! Node sets exist for `n = 2` (equispaced angles) and `n = 3` (Gauss–Legendre in `cos θ`
//! times equispaced longitude). Higher dimensions only use the monomial formula.

use std::any::{Any, TypeId};
use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::geometry::CurvatureData;
use crate::{Error, Real, Result};

/// Default degree cutoff.
pub const DEFAULT_CUTOFF: usize = 16;

/// `j(n-2+j)`.
pub fn harmonic_eigenvalue<T: Real>(n: usize, j: usize) -> T {
    assert!(n >= 2, "sphere S^{{n-1}} needs n >= 2");
    T::of(j) * (T::of(n + j) - T::of(2))
}

/// Dimension of the degree-`j` harmonic space `V_j` on `S^{n-1}`.
pub fn harmonic_dimension(n: usize, j: usize) -> usize {
    let homog = |d: usize| binomial(n + d - 1, d);
    if j < 2 {
        homog(j)
    } else {
        homog(j) - homog(j - 2)
    }
}

fn binomial(a: usize, b: usize) -> usize {
    if b > a {
        return 0;
    }
    let b = b.min(a - b);
    (0..b).fold(1usize, |acc, i| acc * (a - i) / (i + 1))
}

/// `Γ(m/2)` for a positive integer `m`, by the half-integer recursion.
pub fn gamma_half<T: Real>(m: u32) -> T {
    assert!(m > 0, "Γ(0) is undefined");
    let (mut g, mut k) = if m % 2 == 0 { (T::one(), 2u32) } else { (T::PI().sqrt(), 1u32) };
    while k < m {
        g = g * T::of(k as usize) / T::lit(2.0);
        k += 2;
    }
    g
}

/// `Vol(S^{n-1}) = 2π^{n/2}/Γ(n/2)`.
pub fn sphere_volume<T: Real>(n: usize) -> T {
    let alpha = vec![0u32; n];
    monomial_integral(&alpha)
}

/// `Vol(B₁) = Vol(S^{n-1})/n`.
pub fn ball_volume<T: Real>(n: usize) -> T {
    sphere_volume::<T>(n) / T::of(n)
}

/// Exponent vector of a monomial `x^α`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MultiIndex(Vec<u32>);

impl MultiIndex {
    pub fn new(alpha: Vec<u32>) -> Self {
        Self(alpha)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn degree(&self) -> u32 {
        self.0.iter().sum()
    }

    pub fn exponents(&self) -> &[u32] {
        &self.0
    }

    /// Multi-index counting how often each coordinate occurs in an index tuple.
    pub fn from_indices(n: usize, idx: &[usize]) -> Self {
        let mut a = vec![0u32; n];
        for &i in idx {
            a[i] += 1;
        }
        Self(a)
    }
}

/// Exact `∫_{S^{n-1}} x^α dvol` with `n = α.len()`.
pub fn monomial_integral<T: Real>(alpha: &[u32]) -> T {
    if alpha.iter().any(|a| a % 2 == 1) {
        return T::zero();
    }
    let mut num = T::lit(2.0);
    let mut total = 0u32;
    for &a in alpha {
        num = num * gamma_half::<T>(a + 1);
        total += a + 1;
    }
    num / gamma_half::<T>(total)
}

/// [`monomial_integral`] for a [`MultiIndex`].
pub fn monomial_integral_mi<T: Real>(alpha: &MultiIndex) -> T {
    monomial_integral(alpha.exponents())
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre<T: Real>(m: usize) -> (Vec<T>, Vec<T>) {
    let mut x = vec![T::zero(); m];
    let mut w = vec![T::zero(); m];
    let mf = m as f64;
    for i in 0..m.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (mf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(m, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(m, z);
        dp = if d != 0.0 { d } else { dp };
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        x[i] = T::lit(-z);
        x[m - 1 - i] = T::lit(z);
        w[i] = T::lit(wi);
        w[m - 1 - i] = T::lit(wi);
    }
    (x, w)
}

fn legendre_with_derivative(m: usize, z: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, z);
    if m == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=m {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = m as f64 * (z * p1 - p0) / (z * z - 1.0);
    (p1, d)
}

/// Zonal reproducing kernel `Z_j(t)` of `V_j`: `f_j(x) = ∫ f(y) Z_j(⟨x,y⟩) dvol(y)`.
pub fn zonal_kernel<T: Real>(n: usize, j: usize, t: T) -> T {
    let t = t.max(-T::one()).min(T::one());
    match n {
        2 => {
            if j == 0 {
                T::one() / (T::lit(2.0) * T::PI())
            } else {
                chebyshev(j, t) / T::PI()
            }
        }
        3 => T::of(2 * j + 1) / (T::lit(4.0) * T::PI()) * legendre(j, t),
        _ => {
            // Gegenbauer C_j^{(n-2)/2}, normalised by C_j(1) and dim V_j / Vol.
            let lam = T::of(n - 2) / T::lit(2.0);
            let c = gegenbauer(j, lam, t) / gegenbauer(j, lam, T::one());
            T::of(harmonic_dimension(n, j)) / sphere_volume::<T>(n) * c
        }
    }
}

fn chebyshev<T: Real>(j: usize, t: T) -> T {
    let (mut a, mut b) = (T::one(), t);
    if j == 0 {
        return a;
    }
    for _ in 1..j {
        let c = T::lit(2.0) * t * b - a;
        a = b;
        b = c;
    }
    b
}

fn legendre<T: Real>(j: usize, t: T) -> T {
    let (mut a, mut b) = (T::one(), t);
    if j == 0 {
        return a;
    }
    for k in 2..=j {
        let kf = T::of(k);
        let c = ((T::lit(2.0) * kf - T::one()) * t * b - (kf - T::one()) * a) / kf;
        a = b;
        b = c;
    }
    b
}

fn gegenbauer<T: Real>(j: usize, lam: T, t: T) -> T {
    let two = T::lit(2.0);
    let (mut a, mut b) = (T::one(), two * lam * t);
    if j == 0 {
        return a;
    }
    for k in 2..=j {
        let kf = T::of(k);
        let c = (two * t * (kf + lam - T::one()) * b - (kf + two * lam - two) * a) / kf;
        a = b;
        b = c;
    }
    b
}

/// Quadrature node set on `S^{n-1}` together with an orthonormal harmonic basis sampled at
/// the nodes, resolving every degree `≤ lmax` (products up to degree `2·lmax` are exact).
#[derive(Debug)]
pub struct SphereGrid<T: Real> {
    n: usize,
    lmax: usize,
    points: Vec<T>,
    weights: Vec<T>,
    /// `basis[j][m][k]`: basis function `m` of degree `j` at node `k`.
    basis: Vec<Vec<Vec<T>>>,
}

type GridCache = Mutex<HashMap<(TypeId, usize, usize), Arc<dyn Any + Send + Sync>>>;

fn grid_cache() -> &'static GridCache {
    static CACHE: OnceLock<GridCache> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

impl<T: Real> SphereGrid<T> {
    /// Shared grid for `(n, lmax)`; built once per scalar type.
    pub fn shared(n: usize, lmax: usize) -> Result<Arc<Self>> {
        let key = (TypeId::of::<T>(), n, lmax);
        if let Some(g) = grid_cache().lock().expect("grid cache").get(&key) {
            return Ok(Arc::clone(g).downcast::<Self>().expect("cached grid type"));
        }
        let grid = Arc::new(Self::build(n, lmax)?);
        grid_cache()
            .lock()
            .expect("grid cache")
            .insert(key, Arc::clone(&grid) as Arc<dyn Any + Send + Sync>);
        Ok(grid)
    }

    /// Builds a fresh grid (see [`SphereGrid::shared`] for the cached variant).
    pub fn build(n: usize, lmax: usize) -> Result<Self> {
        match n {
            2 => Ok(Self::circle(lmax)),
            3 => Ok(Self::sphere2(lmax)),
            _ => Err(Error::Unsupported(format!(
                "no quadrature node set for n = {n}; use monomial_integral"
            ))),
        }
    }

    fn circle(lmax: usize) -> Self {
        let m = 2 * lmax + 2;
        let two_pi = T::lit(2.0) * T::PI();
        let mut points = Vec::with_capacity(2 * m);
        let angles: Vec<T> = (0..m).map(|k| two_pi * T::of(k) / T::of(m)).collect();
        for &th in &angles {
            points.push(th.cos());
            points.push(th.sin());
        }
        let weights = vec![two_pi / T::of(m); m];
        // Gram–Schmidt on {x^j, x^{j-1}y} lands on cos jθ, sin jθ; use the closed form,
        // since monomials of high degree are numerically dependent on the circle.
        let mut basis = Vec::with_capacity(lmax + 1);
        basis.push(vec![vec![T::one() / two_pi.sqrt(); m]]);
        let s = T::one() / T::PI().sqrt();
        for j in 1..=lmax {
            let jt = T::of(j);
            let c = angles.iter().map(|&a| (jt * a).cos() * s).collect();
            let si = angles.iter().map(|&a| (jt * a).sin() * s).collect();
            basis.push(vec![c, si]);
        }
        Self { n: 2, lmax, points, weights, basis }
    }

    fn sphere2(lmax: usize) -> Self {
        let nt = lmax + 1;
        let np = 2 * lmax + 2;
        let (z, wz) = gauss_legendre::<T>(nt);
        let two_pi = T::lit(2.0) * T::PI();
        let mut points = Vec::with_capacity(3 * nt * np);
        let mut weights = Vec::with_capacity(nt * np);
        for (zi, wi) in z.iter().zip(&wz) {
            let rho = (T::one() - *zi * *zi).max(T::zero()).sqrt();
            for k in 0..np {
                let ph = two_pi * T::of(k) / T::of(np);
                points.extend_from_slice(&[rho * ph.cos(), rho * ph.sin(), *zi]);
                weights.push(*wi * two_pi / T::of(np));
            }
        }
        let mut grid = Self { n: 3, lmax, points, weights, basis: Vec::new() };
        grid.basis = grid.gram_schmidt_basis();
        grid
    }

    /// Orthonormal harmonics by Gram–Schmidt on monomials restricted to the sphere. For
    /// degree `j` the candidates are `x^α` with `|α| = j` and `α_n ≤ 1`, a complement of
    /// `|x|² P_{j-2}`; each is orthogonalised against every earlier basis function.
    fn gram_schmidt_basis(&self) -> Vec<Vec<Vec<T>>> {
        let n = self.n;
        let nodes = self.weights.len();
        let mut basis: Vec<Vec<Vec<T>>> = Vec::with_capacity(self.lmax + 1);
        for j in 0..=self.lmax {
            let mut deg: Vec<Vec<T>> = Vec::new();
            for alpha in homogeneous_exponents(n, j as u32).into_iter().filter(|a| a[n - 1] <= 1) {
                let mut v: Vec<T> = (0..nodes)
                    .map(|k| {
                        let x = self.point(k);
                        alpha.iter().zip(x).fold(T::one(), |acc, (&e, &xi)| acc * xi.powi(e as i32))
                    })
                    .collect();
                for _pass in 0..2 {
                    for b in basis.iter().flatten().chain(deg.iter()) {
                        let c = self.dot(&v, b);
                        for (vk, bk) in v.iter_mut().zip(b) {
                            *vk = *vk - c * *bk;
                        }
                    }
                }
                let norm = self.dot(&v, &v).sqrt();
                for vk in v.iter_mut() {
                    *vk = *vk / norm;
                }
                deg.push(v);
            }
            debug_assert_eq!(deg.len(), harmonic_dimension(n, j));
            basis.push(deg);
        }
        basis
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Largest resolvable degree.
    pub fn lmax(&self) -> usize {
        self.lmax
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn point(&self, k: usize) -> &[T] {
        &self.points[k * self.n..(k + 1) * self.n]
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    /// Sampled orthonormal basis of `V_j`.
    pub fn basis(&self, j: usize) -> &[Vec<T>] {
        &self.basis[j]
    }

    /// Weighted discrete inner product of sample vectors.
    pub fn dot(&self, a: &[T], b: &[T]) -> T {
        a.iter().zip(b).zip(&self.weights).map(|((x, y), w)| *x * *y * *w).sum()
    }

    /// Quadrature of `f` over the nodes.
    pub fn integrate(&self, f: impl Fn(&[T]) -> T) -> T {
        (0..self.len()).map(|k| f(self.point(k)) * self.weights[k]).sum()
    }
}

/// All exponent vectors of total degree `d` in `n` variables, lexicographic.
pub fn homogeneous_exponents(n: usize, d: u32) -> Vec<Vec<u32>> {
    fn rec(n: usize, d: u32, prefix: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if prefix.len() == n - 1 {
            prefix.push(d);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for a in (0..=d).rev() {
            prefix.push(a);
            rec(n, d - a, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    rec(n, d, &mut Vec::with_capacity(n), &mut out);
    out
}

/// Antipodally symmetric random directions (pairs `±x`), for spot checks in any dimension.
pub fn random_directions(n: usize, pairs: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(2 * pairs);
    for _ in 0..pairs {
        let v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let r = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let u: Vec<f64> = v.iter().map(|x| x / r).collect();
        out.push(u.iter().map(|x| -x).collect());
        out.push(u);
    }
    out
}

/// Seeded Gaussian coefficients on degrees `min_degree..=lmax` (lower degrees zero).
pub fn random_band_limited<T: Real>(
    grid: Arc<SphereGrid<T>>,
    lmax: usize,
    min_degree: usize,
    seed: u64,
) -> Result<SphereFn<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coeffs = (0..=lmax)
        .map(|j| {
            (0..harmonic_dimension(grid.dim(), j))
                .map(|_| {
                    let v: f64 = StandardNormal.sample(&mut rng);
                    if j < min_degree {
                        T::zero()
                    } else {
                        T::lit(v)
                    }
                })
                .collect()
        })
        .collect();
    SphereFn::from_coeffs(grid, coeffs)
}

/// A function on `S^{n-1}`: samples on a [`SphereGrid`] plus optional per-degree coefficients
/// in the grid's orthonormal basis.
#[derive(Debug, Clone)]
pub struct SphereFn<T: Real> {
    grid: Arc<SphereGrid<T>>,
    samples: Vec<T>,
    coeffs: Option<Vec<Vec<T>>>,
    /// Per-degree component samples, present together with `coeffs`.
    parts: Option<Vec<Vec<T>>>,
}

impl<T: Real> SphereFn<T> {
    pub fn from_samples(grid: Arc<SphereGrid<T>>, samples: Vec<T>) -> Result<Self> {
        if samples.len() != grid.len() {
            return Err(Error::Dimension { expected: grid.len(), got: samples.len() });
        }
        Ok(Self { grid, samples, coeffs: None, parts: None })
    }

    pub fn from_fn(grid: Arc<SphereGrid<T>>, f: impl Fn(&[T]) -> T) -> Self {
        let samples = (0..grid.len()).map(|k| f(grid.point(k))).collect();
        Self { grid, samples, coeffs: None, parts: None }
    }

    pub fn zero(grid: Arc<SphereGrid<T>>, cutoff: usize) -> Self {
        let coeffs = (0..=cutoff).map(|j| vec![T::zero(); harmonic_dimension(grid.dim(), j)]).collect();
        Self::from_coeffs(grid, coeffs).expect("cutoff within band")
    }

    /// Band-limited function from coefficients `coeffs[j][m]`, `j = 0..=L`.
    pub fn from_coeffs(grid: Arc<SphereGrid<T>>, coeffs: Vec<Vec<T>>) -> Result<Self> {
        let l = coeffs.len().saturating_sub(1);
        if l > grid.lmax() {
            return Err(Error::BandExceeded { requested: l, max: grid.lmax() });
        }
        for (j, c) in coeffs.iter().enumerate() {
            let d = harmonic_dimension(grid.dim(), j);
            if c.len() != d {
                return Err(Error::Dimension { expected: d, got: c.len() });
            }
        }
        let mut samples = vec![T::zero(); grid.len()];
        let mut parts = Vec::with_capacity(coeffs.len());
        for (j, cj) in coeffs.iter().enumerate() {
            let mut part = vec![T::zero(); grid.len()];
            for (c, b) in cj.iter().zip(grid.basis(j)) {
                if c.is_zero() {
                    continue;
                }
                for (s, bk) in part.iter_mut().zip(b) {
                    *s = *s + *c * *bk;
                }
            }
            for (s, p) in samples.iter_mut().zip(&part) {
                *s = *s + *p;
            }
            parts.push(part);
        }
        Ok(Self { grid, samples, coeffs: Some(coeffs), parts: Some(parts) })
    }

    pub fn grid(&self) -> &Arc<SphereGrid<T>> {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    pub fn samples(&self) -> &[T] {
        &self.samples
    }

    pub fn coeffs(&self) -> Option<&[Vec<T>]> {
        self.coeffs.as_deref()
    }

    /// Degree cutoff of the stored coefficients.
    pub fn cutoff(&self) -> Option<usize> {
        self.coeffs.as_ref().map(|c| c.len() - 1)
    }

    /// L²-orthogonal projection onto degrees `0..=l`; the result carries coefficients and
    /// samples of the projection.
    pub fn decompose(&self, l: usize) -> Result<Self> {
        if l > self.grid.lmax() {
            return Err(Error::BandExceeded { requested: l, max: self.grid.lmax() });
        }
        let coeffs = (0..=l)
            .map(|j| self.grid.basis(j).iter().map(|b| self.grid.dot(&self.samples, b)).collect())
            .collect();
        Self::from_coeffs(Arc::clone(&self.grid), coeffs)
    }

    /// [`decompose`](Self::decompose) with the degree-0 part dropped.
    pub fn decompose_mean_zero(&self, l: usize) -> Result<Self> {
        let mut d = self.decompose(l)?;
        d.set_degree(0, |_| T::zero());
        Ok(d)
    }

    /// Samples recomputed from the coefficients.
    pub fn reconstruct(&self) -> Result<Self> {
        let c = self.coeffs.clone().ok_or(Error::Undecomposed)?;
        Self::from_coeffs(Arc::clone(&self.grid), c)
    }

    /// Returns a copy whose degree-`j` coefficients are replaced by `f(old)`, samples rebuilt.
    pub fn map_degrees(&self, f: impl Fn(usize, T) -> T) -> Result<Self> {
        let c = self.coeffs.as_ref().ok_or(Error::Undecomposed)?;
        let coeffs = c
            .iter()
            .enumerate()
            .map(|(j, cj)| cj.iter().map(|&x| f(j, x)).collect())
            .collect();
        Self::from_coeffs(Arc::clone(&self.grid), coeffs)
    }

    fn set_degree(&mut self, j: usize, f: impl Fn(T) -> T) {
        if let Some(c) = self.coeffs.as_mut() {
            if let Some(cj) = c.get_mut(j) {
                for x in cj.iter_mut() {
                    *x = f(*x);
                }
            }
        }
        if let Some(c) = self.coeffs.clone() {
            *self = Self::from_coeffs(Arc::clone(&self.grid), c).expect("same shape");
        }
    }

    /// `∫ f dvol` by quadrature.
    pub fn integral(&self) -> T {
        self.samples.iter().zip(self.grid.weights()).map(|(s, w)| *s * *w).sum()
    }

    pub fn mean(&self) -> T {
        self.integral() / sphere_volume::<T>(self.dim())
    }

    pub fn inner(&self, other: &Self) -> T {
        self.grid.dot(&self.samples, &other.samples)
    }

    pub fn l2_norm(&self) -> T {
        self.inner(self).sqrt()
    }

    pub fn max_abs(&self) -> T {
        self.samples.iter().fold(T::zero(), |m, s| m.max(s.abs()))
    }

    /// `‖f_j‖` for each stored degree.
    pub fn degree_norms(&self) -> Result<Vec<T>> {
        let c = self.coeffs.as_ref().ok_or(Error::Undecomposed)?;
        Ok(c.iter().map(|cj| cj.iter().map(|x| *x * *x).sum::<T>().sqrt()).collect())
    }

    /// Samples of the degree-`j` component.
    pub fn degree_component(&self, j: usize) -> Result<Vec<T>> {
        let parts = self.parts.as_ref().ok_or(Error::Undecomposed)?;
        Ok(parts.get(j).cloned().unwrap_or_else(|| vec![T::zero(); self.grid.len()]))
    }

    /// Values `f_j(x)` of every stored degree at an arbitrary unit vector, through the zonal
    /// kernels `f_j(x) = Σ_k w_k f_j(x_k) Z_j(⟨x, x_k⟩)`.
    pub fn eval_by_degree(&self, x: &[T]) -> Result<Vec<T>> {
        let parts = self.parts.as_ref().ok_or(Error::Undecomposed)?;
        let n = self.dim();
        let g = &self.grid;
        let mut out = vec![T::zero(); parts.len()];
        let active: Vec<bool> = parts.iter().map(|p| p.iter().any(|v| !v.is_zero())).collect();
        for k in 0..g.len() {
            let t: T = g.point(k).iter().zip(x).map(|(a, b)| *a * *b).sum();
            let w = g.weights()[k];
            for (j, o) in out.iter_mut().enumerate() {
                if active[j] {
                    *o = *o + w * parts[j][k] * zonal_kernel(n, j, t);
                }
            }
        }
        Ok(out)
    }

    /// Evaluation at an arbitrary unit vector (band-limited reconstruction).
    pub fn eval(&self, x: &[T]) -> Result<T> {
        Ok(self.eval_by_degree(x)?.into_iter().sum())
    }

    pub fn scale(&self, s: T) -> Self {
        Self {
            grid: Arc::clone(&self.grid),
            samples: self.samples.iter().map(|x| *x * s).collect(),
            coeffs: self.coeffs.as_ref().map(|c| c.iter().map(|cj| cj.iter().map(|x| *x * s).collect()).collect()),
            parts: self.parts.as_ref().map(|c| c.iter().map(|cj| cj.iter().map(|x| *x * s).collect()).collect()),
        }
    }

    /// `self + s·other`; coefficients are kept when both operands carry the same cutoff.
    pub fn axpy(&self, s: T, other: &Self) -> Self {
        let samples = self.samples.iter().zip(&other.samples).map(|(a, b)| *a + s * *b).collect();
        let comb = |a: &Vec<Vec<T>>, b: &Vec<Vec<T>>| -> Vec<Vec<T>> {
            a.iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(p, q)| *p + s * *q).collect()).collect()
        };
        let (coeffs, parts) = match (&self.coeffs, &other.coeffs, &self.parts, &other.parts) {
            (Some(a), Some(b), Some(pa), Some(pb)) if a.len() == b.len() => (Some(comb(a, b)), Some(comb(pa, pb))),
            _ => (None, None),
        };
        Self { grid: Arc::clone(&self.grid), samples, coeffs, parts }
    }

    /// Pointwise map of the samples (drops coefficients).
    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            grid: Arc::clone(&self.grid),
            samples: self.samples.iter().map(|x| f(*x)).collect(),
            coeffs: None,
            parts: None,
        }
    }
}

/// One appendix row: the lemma number, `σ`, the exact left side and the closed form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AppendixRow<T> {
    pub lemma: u8,
    pub n: usize,
    pub sigma: usize,
    pub computed: T,
    pub claimed: T,
}

impl<T: Real> AppendixRow<T> {
    pub fn residual(&self) -> T {
        (self.computed - self.claimed).abs()
    }
}

/// `Σ_idx coef(idx) ∫ Π x^{idx}` over all index tuples of length `order`.
fn tensor_moment<T: Real>(n: usize, order: usize, coef: impl Fn(&[usize]) -> T) -> T {
    let mut idx = vec![0usize; order];
    let mut counts = vec![0u32; n];
    let mut total = T::zero();
    loop {
        counts.iter_mut().for_each(|c| *c = 0);
        for &i in &idx {
            counts[i] += 1;
        }
        if counts.iter().all(|c| c % 2 == 0) {
            let c = coef(&idx);
            if !c.is_zero() {
                total = total + c * monomial_integral::<T>(&counts);
            }
        }
        let mut p = 0;
        loop {
            if p == order {
                return total;
            }
            idx[p] += 1;
            if idx[p] < n {
                break;
            }
            idx[p] = 0;
            p += 1;
        }
    }
}

/// Evaluates the four appendix integrals exactly for every `σ`, by expanding each integrand
/// into monomials and applying [`monomial_integral`]. The claimed closed forms are
/// `0`, `0`, `2/(n(n+2))·Vol·Scal_{,σ}` and `Vol/n·Scal_{,σ}` (Euclidean `Vol(S^{n-1})`).
pub fn verify_appendix<T: Real>(n: usize, curv: &CurvatureData<T>) -> Result<Vec<AppendixRow<T>>> {
    if curv.dim() != n {
        return Err(Error::Dimension { expected: n, got: curv.dim() });
    }
    curv.check_symmetries(T::lit(1e-10))?;
    let vol = sphere_volume::<T>(n);
    let nf = T::of(n);
    let mut rows = Vec::with_capacity(4 * n);
    for s in 0..n {
        // R_{ikjl,m} x^i x^k x^j x^l x^m x^σ.
        let l1 = fix_sigma(n, 5, s, |ix| curv.dr(ix[0], ix[1], ix[2], ix[3], ix[4]));
        rows.push(AppendixRow { lemma: 1, n, sigma: s, computed: l1, claimed: T::zero() });

        let l2 = fix_sigma(n, 3, s, |ix| curv.dr_contracted(ix[0], ix[1], ix[2]));
        rows.push(AppendixRow { lemma: 2, n, sigma: s, computed: l2, claimed: T::zero() });

        let l3 = fix_sigma(n, 3, s, |ix| curv.dric(ix[0], ix[1], ix[2]));
        let c3 = T::lit(2.0) / (nf * (nf + T::lit(2.0))) * vol * curv.dscal()[s];
        rows.push(AppendixRow { lemma: 3, n, sigma: s, computed: l3, claimed: c3 });

        let l4 = fix_sigma(n, 1, s, |ix| curv.dscal()[ix[0]]);
        let c4 = vol / nf * curv.dscal()[s];
        rows.push(AppendixRow { lemma: 4, n, sigma: s, computed: l4, claimed: c4 });
    }
    Ok(rows)
}

/// `Σ_idx coef(idx) ∫ x^{idx} x^σ` with `σ` appended to every tuple.
fn fix_sigma<T: Real>(n: usize, order: usize, sigma: usize, coef: impl Fn(&[usize]) -> T) -> T {
    tensor_moment(n, order + 1, |ix| if ix[order] == sigma { coef(&ix[..order]) } else { T::zero() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{random_curvature, CurvatureData};
    use std::f64::consts::PI;

    fn grid(n: usize, l: usize) -> Arc<SphereGrid<f64>> {
        SphereGrid::shared(n, l).unwrap()
    }

    #[test]
    fn eigenvalues() {
        assert_eq!(harmonic_eigenvalue::<f64>(3, 1), 2.0);
        assert_eq!(harmonic_eigenvalue::<f64>(2, 0), 0.0);
        assert_eq!(harmonic_eigenvalue::<f64>(2, 3), 9.0);
    }

    #[test]
    fn monomial_examples() {
        assert!((monomial_integral::<f64>(&[2, 0, 0]) - 4.0 * PI / 3.0).abs() < 1e-14);
        assert_eq!(monomial_integral::<f64>(&[1, 0, 0, 0]), 0.0);
        assert!((monomial_integral::<f64>(&[0, 0]) - 2.0 * PI).abs() < 1e-14);
        assert!((sphere_volume::<f64>(4) - 2.0 * PI * PI).abs() < 1e-13);
        assert!((sphere_volume::<f64>(6) - PI.powi(3)).abs() < 1e-12);
    }

    #[test]
    fn monomial_matches_monte_carlo() {
        let dirs = random_directions(3, 500_000, 7);
        let mc: f64 = dirs.iter().map(|x| x[0] * x[0]).sum::<f64>() / dirs.len() as f64 * 4.0 * PI;
        assert!((mc - 4.0 * PI / 3.0).abs() < 2.2e-2, "{mc}");
    }

    #[test]
    fn quadrature_is_exact_up_to_twice_the_band() {
        for n in [2usize, 3] {
            let l = 8;
            let g = grid(n, l);
            assert!((g.weights().iter().sum::<f64>() - sphere_volume::<f64>(n)).abs() < 1e-12);
            for d in 0..=(2 * l as u32) {
                for a in homogeneous_exponents(n, d) {
                    let q = g.integrate(|x| a.iter().zip(x).map(|(&e, &v)| v.powi(e as i32)).product());
                    let e: f64 = monomial_integral(&a);
                    assert!((q - e).abs() < 1e-10, "n={n} a={a:?} {q} {e}");
                }
            }
        }
    }

    #[test]
    fn basis_is_orthonormal_and_harmonic() {
        let g = grid(3, 16);
        for j in 0..=16 {
            for (a, ya) in g.basis(j).iter().enumerate() {
                for k in 0..=16 {
                    for (b, yb) in g.basis(k).iter().enumerate() {
                        let d = g.dot(ya, yb);
                        let want = if j == k && a == b { 1.0 } else { 0.0 };
                        assert!((d - want).abs() < 1e-11, "j={j} k={k} {d}");
                    }
                }
            }
        }
        // Addition theorem: Σ_m Y_jm(x)² = (2j+1)/(4π) at every node.
        for j in [5usize, 11, 16] {
            for k in (0..g.len()).step_by(37) {
                let s: f64 = g.basis(j).iter().map(|y| y[k] * y[k]).sum();
                let want = (2 * j + 1) as f64 / (4.0 * PI);
                assert!((s - want).abs() < 1e-9 * want, "j={j} {s} {want}");
            }
        }
    }

    #[test]
    fn decompose_examples() {
        let g = grid(3, 16);
        let f = SphereFn::from_fn(Arc::clone(&g), |x| x[0]).decompose(4).unwrap();
        let norms = f.degree_norms().unwrap();
        assert!(norms[1] > 0.1);
        for (j, v) in norms.iter().enumerate() {
            if j != 1 {
                assert!(*v < 1e-12, "{j} {v}");
            }
        }
        let one = SphereFn::from_fn(Arc::clone(&g), |_| 1.0).decompose(4).unwrap();
        assert!(one.degree_norms().unwrap()[1..].iter().all(|v| *v < 1e-12));
        let sq = SphereFn::from_fn(Arc::clone(&g), |x| x[0] * x[0]).decompose(6).unwrap();
        let n = sq.degree_norms().unwrap();
        assert!(n[1] < 1e-12 && n[3] < 1e-12 && n[4] < 1e-12 && n[2] > 0.1);
        let mean = sq.coeffs().unwrap()[0][0] * g.basis(0)[0][0];
        assert!((mean - 1.0 / 3.0).abs() < 1e-12);
        assert!(matches!(sq.decompose(17), Err(Error::BandExceeded { .. })));
    }

    #[test]
    fn eval_off_grid_matches_closed_form() {
        let g = grid(3, 10);
        let f = SphereFn::from_fn(Arc::clone(&g), |x| x[0] * x[1] * x[2] + x[2].powi(4)).decompose(10).unwrap();
        let x = [0.3, -0.5, (1.0f64 - 0.34).sqrt()];
        let v = f.eval(&x).unwrap();
        assert!((v - (x[0] * x[1] * x[2] + x[2].powi(4))).abs() < 1e-12);
        let c = grid(2, 12);
        let h = SphereFn::from_fn(Arc::clone(&c), |x| (3.0 * x[1].atan2(x[0])).cos()).decompose(12).unwrap();
        let t: f64 = 0.4;
        assert!((h.eval(&[t.cos(), t.sin()]).unwrap() - (3.0 * t).cos()).abs() < 1e-12);
    }

    #[test]
    fn appendix_flat_and_gradient_only() {
        let flat = CurvatureData::<f64>::flat(3);
        for row in verify_appendix(3, &flat).unwrap() {
            assert_eq!(row.computed, 0.0);
            assert_eq!(row.claimed, 0.0);
        }
    }

    #[test]
    fn appendix_random() {
        for n in 3..=5 {
            for seed in 0..3 {
                let c = random_curvature::<f64>(n, seed).unwrap();
                for row in verify_appendix(n, &c).unwrap() {
                    let scale = 1.0 + row.claimed.abs();
                    assert!(row.residual() < 1e-10 * scale, "{row:?}");
                }
            }
        }
    }
}
