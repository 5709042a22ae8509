//! The approximate eigenfunction on `M ∖ B_ε(p)`, its boundary mismatch `N`, the fit of
//! `(Λ_ε, φ_ε)` and the eigenvalue coefficient `μ`.
//!
//! For `n ≥ 3` the field is `φ₀ - ε^{n-2}(φ₀(p) + Λ)Γ_p + χH̃_{φ,ε}`; for `n = 2` it is
//! `φ₀ - (log ε)^{-1}(φ₀(p) + Λ)(Γ_p - aχ) + χH̃_{φ,ε}`, where `a` is the constant in
//! `Γ_p = log|x| + a + O(|x|)`. The correction `w_ε` is not assembled.
//!
//! `Γ_p` solves `-(Δ + λ₀)Γ_p = c_n(δ_p - φ₀(p)φ₀)` with `∫Γ_pφ₀ = 0`. On flat tori it is
//! `c_n` times the Ewald-summed periodic Green function. On boxes it is built from signed
//! images in the doubled torus; for Dirichlet boxes a rapidly converging mode series moves
//! the operator from `-Δ` to `-(Δ + λ₀)`.

use std::f64::consts::PI;
use std::sync::Arc;

use crate::exterior::{extend, ExteriorHarmonic};
use crate::geometry::ModelManifold;
use crate::green::normalization_constant;
use crate::spherical::{SphereFn, SphereGrid};
use crate::{Error, Result};

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Exponential integral `E₁(x)`, `x > 0`.
pub fn exp_integral_e1(x: f64) -> f64 {
    assert!(x > 0.0, "E1 needs x > 0");
    if x <= 1.0 {
        let mut sum = 0.0;
        let mut term = 1.0;
        for k in 1..200 {
            term *= -x / k as f64;
            let add = -term / k as f64;
            sum += add;
            if add.abs() < 1e-17 * sum.abs().max(1e-300) {
                break;
            }
        }
        -EULER_GAMMA - x.ln() + sum
    } else {
        // modified Lentz on the continued fraction
        let tiny = 1e-300;
        let mut b = x + 1.0;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..500 {
            let an = -((i * i) as f64);
            b += 2.0;
            d = 1.0 / (an * d + b);
            c = b + an / c;
            let del = c * d;
            h *= del;
            if (del - 1.0).abs() < 1e-16 {
                break;
            }
        }
        h * (-x).exp()
    }
}

/// Mean-zero periodic Green function: `-ΔG = δ - 1/V` on `ℝⁿ / Π L_iℤ`, `n ∈ {2, 3}`,
/// by Ewald summation.
#[derive(Debug, Clone)]
pub struct PeriodicGreen {
    periods: Vec<f64>,
    alpha: f64,
    volume: f64,
    images: Vec<Vec<f64>>,
    /// `(2πk, e^{-π²|k|²/α²}/(4π²|k|²V))`.
    recip: Vec<(Vec<f64>, f64)>,
}

impl PeriodicGreen {
    pub fn new(periods: &[f64]) -> Result<Self> {
        let n = periods.len();
        if !(2..=3).contains(&n) {
            return Err(Error::Unsupported(format!("periodic Green function needs n in {{2, 3}}, got {n}")));
        }
        let lmin = periods.iter().cloned().fold(f64::INFINITY, f64::min);
        let lmax = periods.iter().cloned().fold(0.0, f64::max);
        // excluded real-space images sit at distance ≥ 1.5 L_min from the minimal image
        let alpha = 6.2 / (1.5 * lmin);
        let volume: f64 = periods.iter().product();
        let shells = 1i64;
        let mut images = Vec::new();
        for_each_int(n, shells, |m| images.push(m.iter().zip(periods).map(|(&k, l)| k as f64 * l).collect()));
        let kmax = (6.2 * alpha * lmax / PI).ceil() as i64;
        let mut recip = Vec::new();
        for_each_int(n, kmax, |m| {
            if m.iter().all(|&k| k == 0) {
                return;
            }
            let k: Vec<f64> = m.iter().zip(periods).map(|(&k, l)| k as f64 / l).collect();
            let k2: f64 = k.iter().map(|v| v * v).sum();
            let w = (-PI * PI * k2 / (alpha * alpha)).exp() / (4.0 * PI * PI * k2 * volume);
            if w > 1e-18 / volume {
                recip.push((k.iter().map(|v| 2.0 * PI * v).collect(), w));
            }
        });
        Ok(Self { periods: periods.to_vec(), alpha, volume, images, recip })
    }

    pub fn dim(&self) -> usize {
        self.periods.len()
    }

    fn minimal_image(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.periods).map(|(v, l)| v - l * (v / l).round()).collect()
    }

    fn real_kernel(&self, r: f64) -> f64 {
        let a = self.alpha;
        if self.dim() == 2 {
            exp_integral_e1(a * a * r * r) / (4.0 * PI)
        } else {
            libm::erfc(a * r) / (4.0 * PI * r)
        }
    }

    /// Free-space fundamental solution.
    fn lead(&self, r: f64) -> f64 {
        if self.dim() == 2 {
            -r.ln() / (2.0 * PI)
        } else {
            1.0 / (4.0 * PI * r)
        }
    }

    fn smooth(&self, x: &[f64], skip_origin_image: bool) -> f64 {
        let mut s = -1.0 / (4.0 * self.alpha * self.alpha * self.volume);
        for img in &self.images {
            if skip_origin_image && img.iter().all(|v| *v == 0.0) {
                continue;
            }
            let d: Vec<f64> = x.iter().zip(img).map(|(a, b)| a + b).collect();
            s += self.real_kernel(norm(&d));
        }
        for (k, w) in &self.recip {
            let ph: f64 = k.iter().zip(x).map(|(a, b)| a * b).sum();
            s += w * ph.cos();
        }
        s
    }

    /// `G(x)`; singular at lattice points.
    pub fn eval(&self, x: &[f64]) -> f64 {
        let y = self.minimal_image(x);
        self.smooth(&y, false)
    }

    /// `lim_{x→0} G(x) - G_free(|x|)`.
    pub fn regular_at_origin(&self) -> f64 {
        let a = self.alpha;
        let zero = vec![0.0; self.dim()];
        let self_term = if self.dim() == 2 {
            // E₁(α²r²)/(4π) + log r/(2π) → (-γ - 2 log α)/(4π)
            (-EULER_GAMMA - 2.0 * a.ln()) / (4.0 * PI)
        } else {
            // (erfc(αr) - 1)/(4πr) → -α/(2π^{3/2})
            -a / (2.0 * PI.powf(1.5))
        };
        self.smooth(&zero, true) + self_term
    }

    /// `G(x) - G_free(|x|)` near the origin (minimal image).
    pub fn regular(&self, x: &[f64]) -> f64 {
        let y = self.minimal_image(x);
        let r = norm(&y);
        if r < 1e-8 {
            return self.regular_at_origin();
        }
        self.smooth(&y, false) - self.lead(r)
    }
}

fn for_each_int(n: usize, m: i64, mut f: impl FnMut(&[i64])) {
    let mut c = vec![-m; n];
    loop {
        f(&c);
        let mut a = 0;
        loop {
            if a == n {
                return;
            }
            c[a] += 1;
            if c[a] <= m {
                break;
            }
            c[a] = -m;
            a += 1;
        }
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[derive(Debug, Clone)]
enum GreenKind {
    Torus(PeriodicGreen),
    Box {
        doubled: PeriodicGreen,
        /// `(image point, sign)`.
        images: Vec<(Vec<f64>, f64)>,
        /// Dirichlet correction modes `(k, weight)` with
        /// `weight = φ_k(p)λ₀/(λ_k(λ_k - λ₀))`; empty for Neumann.
        modes: Vec<(Vec<usize>, f64)>,
        dirichlet: bool,
    },
}

/// `Γ_p` on a flat model, normalised by `∫Γ_pφ₀ = 0`.
#[derive(Debug, Clone)]
pub struct ModelGreen {
    model: ModelManifold,
    p: Vec<f64>,
    cn: f64,
    kind: GreenKind,
}

/// Modes per axis in the Dirichlet correction series.
const BOX_MODES: [usize; 4] = [0, 0, 96, 24];

impl ModelGreen {
    pub fn new(model: &ModelManifold, p: &[f64]) -> Result<Self> {
        let n = model.dim();
        if p.len() != n {
            return Err(Error::Dimension { expected: n, got: p.len() });
        }
        let cn = normalization_constant::<f64>(n);
        let kind = match model {
            ModelManifold::FlatTorus { periods } => GreenKind::Torus(PeriodicGreen::new(periods)?),
            ModelManifold::DirichletBox { sides } | ModelManifold::NeumannBox { sides } => {
                let dirichlet = matches!(model, ModelManifold::DirichletBox { .. });
                if model.boundary_distance(p) <= 0.0 {
                    return Err(Error::Invalid(format!("point {p:?} is not inside the box")));
                }
                let doubled = PeriodicGreen::new(&sides.iter().map(|l| 2.0 * l).collect::<Vec<_>>())?;
                let mut images = Vec::new();
                for mask in 0..(1usize << n) {
                    let mut q = p.to_vec();
                    let mut sign = 1.0;
                    for a in 0..n {
                        if mask & (1 << a) != 0 {
                            q[a] = -p[a];
                            if dirichlet {
                                sign = -sign;
                            }
                        }
                    }
                    images.push((q, sign));
                }
                let mut modes = Vec::new();
                if dirichlet {
                    let lam0 = model.lambda0();
                    let kmax = BOX_MODES[n];
                    let mut k = vec![1usize; n];
                    loop {
                        if k.iter().any(|&v| v != 1) {
                            let lk: f64 = k.iter().zip(sides).map(|(&m, l)| (m as f64 * PI / l).powi(2)).sum();
                            let phik = mode(sides, &k, p);
                            modes.push((k.clone(), phik * lam0 / (lk * (lk - lam0))));
                        }
                        let mut a = 0;
                        loop {
                            if a == n {
                                break;
                            }
                            k[a] += 1;
                            if k[a] <= kmax {
                                break;
                            }
                            k[a] = 1;
                            a += 1;
                        }
                        if a == n {
                            break;
                        }
                    }
                }
                GreenKind::Box { doubled, images, modes, dirichlet }
            }
            ModelManifold::RoundSphere { n, .. } => {
                return Err(if *n <= 3 {
                    Error::Unsupported(format!(
                        "n = {n} on a curved closed model is outside the constructed cases"
                    ))
                } else {
                    Error::Unsupported(format!("no quadrature grid for the n = {n} boundary data"))
                })
            }
        };
        Ok(Self { model: model.clone(), p: p.to_vec(), cn, kind })
    }

    /// `Γ_p(x)` at the model point `x`.
    pub fn eval(&self, x: &[f64]) -> f64 {
        match &self.kind {
            GreenKind::Torus(g) => {
                let d: Vec<f64> = x.iter().zip(&self.p).map(|(a, b)| a - b).collect();
                self.cn * g.eval(&d)
            }
            GreenKind::Box { doubled, images, modes, dirichlet } => {
                let mut s = 0.0;
                for (q, sign) in images {
                    let d: Vec<f64> = x.iter().zip(q).map(|(a, b)| a - b).collect();
                    s += sign * doubled.eval(&d);
                }
                if *dirichlet {
                    s += self.dirichlet_smooth(x, modes);
                }
                self.cn * s
            }
        }
    }

    fn dirichlet_smooth(&self, x: &[f64], modes: &[(Vec<usize>, f64)]) -> f64 {
        let sides = match &self.model {
            ModelManifold::DirichletBox { sides } => sides,
            _ => unreachable!("dirichlet kind"),
        };
        let lam0 = self.model.lambda0();
        let mut s = -self.model.phi0(x) * self.model.phi0(&self.p) / lam0;
        // sines per axis and mode number, reused across the product
        let n = x.len();
        let kmax = BOX_MODES[n];
        let table: Vec<Vec<f64>> = (0..n)
            .map(|a| (0..=kmax).map(|m| (2.0 / sides[a]).sqrt() * (m as f64 * PI * x[a] / sides[a]).sin()).collect())
            .collect();
        for (k, w) in modes {
            let mut v = *w;
            for a in 0..n {
                v *= table[a][k[a]];
            }
            s += v;
        }
        s
    }

    /// The constant `a` (`n = 2`) or `a'` (`n = 3`) in the local expansion of `Γ_p`.
    pub fn regular_constant(&self) -> f64 {
        let n = self.model.dim();
        let h = 1e-6;
        match &self.kind {
            GreenKind::Torus(g) => self.cn * g.regular_at_origin(),
            GreenKind::Box { .. } => {
                // average over a small symmetric stencil to cancel the linear part
                let lead = |r: f64| if n == 2 { r.ln() } else { 1.0 / r };
                let mut s = 0.0;
                for a in 0..n {
                    for sgn in [-1.0, 1.0] {
                        let mut x = self.p.clone();
                        x[a] += sgn * h;
                        s += self.eval(&x) - lead(h);
                    }
                }
                s / (2 * n) as f64
            }
        }
    }
}

fn mode(sides: &[f64], k: &[usize], x: &[f64]) -> f64 {
    sides
        .iter()
        .zip(k)
        .zip(x)
        .map(|((l, &m), xi)| (2.0 / l).sqrt() * (m as f64 * PI * xi / l).sin())
        .product()
}

/// Quintic smoothstep cutoff: 1 on `[0, R₀]`, 0 beyond `2R₀`.
pub fn cutoff(r: f64, r0: f64) -> f64 {
    if r <= r0 {
        1.0
    } else if r >= 2.0 * r0 {
        0.0
    } else {
        let t = (r - r0) / r0;
        1.0 - t * t * t * (10.0 - 15.0 * t + 6.0 * t * t)
    }
}

/// Knobs of the ansatz.
#[derive(Debug, Clone, PartialEq)]
pub struct AnsatzConfig {
    /// Degree cutoff of `φ`; `None` picks 16 (`n = 2`) or 8 (`n = 3`).
    pub lmax: Option<usize>,
    /// Cutoff radius `R₀`; `None` is half the validity radius.
    pub r0: Option<f64>,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for AnsatzConfig {
    fn default() -> Self {
        Self { lmax: None, r0: None, tol: 1e-10, max_iter: 200 }
    }
}

impl AnsatzConfig {
    fn lmax(&self, n: usize) -> usize {
        self.lmax.unwrap_or(if n == 2 { 16 } else { 8 })
    }
}

/// Assembled approximate eigenfunction.
#[derive(Debug, Clone)]
pub struct AnsatzState {
    pub model: ModelManifold,
    pub p: Vec<f64>,
    pub eps: f64,
    pub lambda: f64,
    pub phi: SphereFn<f64>,
    pub mu: f64,
    r0: f64,
    phi0p: f64,
    green: Arc<ModelGreen>,
    ext: ExteriorHarmonic<f64>,
    /// `a` subtracted inside the cutoff for `n = 2`.
    shift: f64,
}

/// Assembles the field for `(Λ, φ)`.
pub fn assemble(model: &ModelManifold, p: &[f64], eps: f64, lambda: f64, phi: &SphereFn<f64>) -> Result<AnsatzState> {
    let green = Arc::new(ModelGreen::new(model, p)?);
    assemble_with(model, p, eps, lambda, phi, &green, &AnsatzConfig::default())
}

/// [`assemble`] reusing a prepared Green function.
pub fn assemble_with(
    model: &ModelManifold,
    p: &[f64],
    eps: f64,
    lambda: f64,
    phi: &SphereFn<f64>,
    green: &Arc<ModelGreen>,
    cfg: &AnsatzConfig,
) -> Result<AnsatzState> {
    let n = model.dim();
    if phi.dim() != n {
        return Err(Error::Dimension { expected: n, got: phi.dim() });
    }
    let r0 = cfg.r0.unwrap_or(model.validity_radius() / 2.0);
    if !(eps > 0.0) || eps >= r0 {
        return Err(Error::Invalid(format!("ε = {eps} must lie in (0, R₀ = {r0})")));
    }
    if model.boundary_distance(p) <= 2.0 * r0 {
        return Err(Error::Invalid("cutoff region reaches the outer boundary".into()));
    }
    let phi = match phi.coeffs() {
        Some(_) => phi.clone(),
        None => phi.decompose_mean_zero(cfg.lmax(n))?,
    };
    let ext = extend(&phi)?;
    let phi0p = model.phi0(p);
    let shift = if n == 2 { green.regular_constant() } else { 0.0 };
    let mu = mu(model, p, lambda, &phi, eps);
    Ok(AnsatzState {
        model: model.clone(),
        p: p.to_vec(),
        eps,
        lambda,
        phi,
        mu,
        r0,
        phi0p,
        green: Arc::clone(green),
        ext,
        shift,
    })
}

impl AnsatzState {
    pub fn dim(&self) -> usize {
        self.p.len()
    }

    fn weight(&self) -> f64 {
        if self.dim() == 2 {
            1.0 / self.eps.ln()
        } else {
            self.eps.powi(self.dim() as i32 - 2)
        }
    }

    /// `H̃_φ(y)`: zero for `|y| ≤ ½`, linear ramp of `φ(y/|y|)` up to `|y| = 1`, `H_φ` beyond.
    fn h_tilde(&self, y: &[f64]) -> Result<f64> {
        let r = norm(y);
        if r <= 0.5 {
            return Ok(0.0);
        }
        if r < 1.0 {
            let th: Vec<f64> = y.iter().map(|v| v / r).collect();
            return Ok((2.0 * r - 1.0) * self.phi.eval(&th)?);
        }
        self.ext.eval(y)
    }

    /// Field at the model point `x` (displacements taken from `p`, minimal image on tori).
    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        let d = self.displacement(x);
        self.eval_offset(&d)
    }

    fn displacement(&self, x: &[f64]) -> Vec<f64> {
        match &self.model {
            ModelManifold::FlatTorus { periods } => x
                .iter()
                .zip(&self.p)
                .zip(periods)
                .map(|((a, b), l)| {
                    let v = a - b;
                    v - l * (v / l).round()
                })
                .collect(),
            _ => x.iter().zip(&self.p).map(|(a, b)| a - b).collect(),
        }
    }

    /// Field at `p + d`.
    pub fn eval_offset(&self, d: &[f64]) -> Result<f64> {
        let x: Vec<f64> = self.p.iter().zip(d).map(|(a, b)| a + b).collect();
        let r = norm(d);
        let chi = cutoff(r, self.r0);
        let gamma = self.green.eval(&x) - self.shift * chi;
        let mut v = self.model.phi0(&x) - self.weight() * (self.phi0p + self.lambda) * gamma;
        if chi > 0.0 {
            let y: Vec<f64> = d.iter().map(|v| v / self.eps).collect();
            v += chi * self.h_tilde(&y)?;
        }
        Ok(v)
    }

    /// Field at `p + εy`.
    pub fn eval_rescaled(&self, y: &[f64]) -> Result<f64> {
        let d: Vec<f64> = y.iter().map(|v| v * self.eps).collect();
        self.eval_offset(&d)
    }

    /// `N(ε, Λ, φ)`: the trace of the field on `|x| = ε`, on the nodes of `φ`'s grid.
    pub fn boundary_mismatch(&self) -> Result<SphereFn<f64>> {
        let g = Arc::clone(self.phi.grid());
        let vals: Vec<f64> = (0..g.len()).map(|k| self.eval_rescaled(g.point(k))).collect::<Result<_>>()?;
        SphereFn::from_samples(g, vals)
    }

    /// `sup_{1 ≤ |y| ≤ 2} |field(εy) - φ₁(y)|` over the given radii and the grid directions.
    /// For `n = 2` the field is multiplied by `log ε` and compared with `-φ₀(p) log|y|`.
    pub fn rescaled_deviation(&self, radii: &[f64]) -> Result<f64> {
        let n = self.dim();
        let g = self.phi.grid();
        let mut worst = 0.0f64;
        for &r in radii {
            for k in 0..g.len() {
                let y: Vec<f64> = g.point(k).iter().map(|v| v * r).collect();
                let f = self.eval_rescaled(&y)?;
                let (val, target) = if n == 2 {
                    (self.eps.ln() * f, -self.phi0p * r.ln())
                } else {
                    (f, self.phi0p * (1.0 - r.powi(2 - n as i32)))
                };
                worst = worst.max((val - target).abs());
            }
        }
        Ok(worst)
    }
}

/// Leading eigenvalue coefficient `μ = c_nφ₀(p)(φ₀(p) + Λ)`. The `O(ε)‖φ‖` remainder of the
/// full quotient is not evaluated.
pub fn mu(model: &ModelManifold, p: &[f64], lambda: f64, _phi: &SphereFn<f64>, _eps: f64) -> f64 {
    let n = model.dim();
    let phi0p = model.phi0(p);
    normalization_constant::<f64>(n) * phi0p * (phi0p + lambda)
}

/// Converged fit of `N(ε, Λ, φ) = 0`.
#[derive(Debug, Clone)]
pub struct AnsatzFit {
    pub lambda: f64,
    pub phi: SphereFn<f64>,
    pub iterations: usize,
    /// `sup |N|` at the final iterate.
    pub residual: f64,
    pub state: Option<AnsatzState>,
}

impl AnsatzFit {
    /// `|Λ| + ‖φ‖_∞`.
    pub fn size(&self) -> f64 {
        self.lambda.abs() + self.phi.max_abs()
    }
}

/// Fixed-point iteration `Λ ← Λ + mean N`, `φ ← φ - (N - mean N)` to `sup|N| ≤ tol`.
pub fn fit(model: &ModelManifold, p: &[f64], eps: f64) -> Result<AnsatzFit> {
    fit_with(model, p, eps, &AnsatzConfig::default())
}

pub fn fit_with(model: &ModelManifold, p: &[f64], eps: f64, cfg: &AnsatzConfig) -> Result<AnsatzFit> {
    let n = model.dim();
    let lmax = cfg.lmax(n);
    let grid = SphereGrid::<f64>::shared(n, lmax)?;
    let zero = SphereFn::zero(Arc::clone(&grid), lmax);
    if eps == 0.0 {
        return Ok(AnsatzFit { lambda: 0.0, phi: zero, iterations: 0, residual: 0.0, state: None });
    }
    let green = Arc::new(ModelGreen::new(model, p)?);
    let mut lambda = 0.0;
    let mut phi = zero;
    let mut residual = f64::INFINITY;
    for it in 0..=cfg.max_iter {
        let state = assemble_with(model, p, eps, lambda, &phi, &green, cfg)?;
        let nres = state.boundary_mismatch()?;
        residual = nres.max_abs();
        if residual <= cfg.tol {
            return Ok(AnsatzFit { lambda, phi, iterations: it, residual, state: Some(state) });
        }
        let m = nres.mean();
        lambda += m;
        let corr = nres.decompose_mean_zero(lmax)?;
        phi = phi.axpy(-1.0, &corr);
    }
    Err(Error::NotConverged { what: "ansatz fit", iterations: cfg.max_iter, residual })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spherical::random_band_limited;

    fn laplacian(f: &dyn Fn(&[f64]) -> f64, x: &[f64], h: f64) -> f64 {
        let mut s = 0.0;
        for a in 0..x.len() {
            let mut p = x.to_vec();
            let mut m = x.to_vec();
            p[a] += h;
            m[a] -= h;
            s += f(&p) - 2.0 * f(x) + f(&m);
        }
        s / (h * h)
    }

    #[test]
    fn e1_values() {
        assert!((exp_integral_e1(1.0) - 0.219_383_934_395_520_3).abs() < 1e-15);
        assert!((exp_integral_e1(0.1) - 1.822_923_958_419_390_7).abs() < 1e-14);
        assert!((exp_integral_e1(5.0) - 0.001_148_295_591_275_325_9).abs() < 1e-17);
    }

    #[test]
    fn periodic_green_solves_poisson() {
        for periods in [vec![1.0, 1.0], vec![1.0, 1.7], vec![1.0, 1.0, 1.0], vec![1.0, 0.8, 1.3]] {
            let g = PeriodicGreen::new(&periods).unwrap();
            let v: f64 = periods.iter().product();
            let x: Vec<f64> = periods.iter().enumerate().map(|(i, l)| l * (0.31 + 0.11 * i as f64)).collect();
            let lap = laplacian(&|y| g.eval(y), &x, 1e-3);
            assert!((lap - 1.0 / v).abs() < 1e-5, "{periods:?}: {lap}");
            let mut shifted = x.clone();
            shifted[0] += periods[0];
            assert!((g.eval(&shifted) - g.eval(&x)).abs() < 1e-13);
        }
    }

    #[test]
    fn periodic_green_constants() {
        // simple cubic lattice: lim 4πG - 1/r = -2.8372974794806...
        let g = PeriodicGreen::new(&[1.0, 1.0, 1.0]).unwrap();
        assert!((4.0 * PI * g.regular_at_origin() + 2.837_297_479_480_6).abs() < 1e-10);
        // square lattice: lim G + log r/(2π) = -log(2π|η(i)|²)/(2π), η(i) = Γ(¼)/(2π^{3/4})
        let g = PeriodicGreen::new(&[1.0, 1.0]).unwrap();
        let eta = 3.625_609_908_221_908_3 / (2.0 * PI.powf(0.75));
        let expect = -(2.0 * PI * eta * eta).ln() / (2.0 * PI);
        assert!((g.regular_at_origin() - expect).abs() < 1e-12, "{}", g.regular_at_origin());
        assert!((g.regular(&[1e-4, 0.0]) - expect).abs() < 1e-7);
    }

    #[test]
    fn periodic_green_has_zero_mean() {
        let g = PeriodicGreen::new(&[1.0, 1.0]).unwrap();
        let m = 64;
        let mut s = 0.0;
        for i in 0..m {
            for j in 0..m {
                s += g.eval(&[(i as f64 + 0.5) / m as f64, (j as f64 + 0.5) / m as f64]);
            }
        }
        assert!((s / (m * m) as f64).abs() < 1e-4, "{}", s / (m * m) as f64);
    }

    #[test]
    fn box_green_boundary_values_and_equation() {
        let p = [0.4, 0.55];
        for model in [ModelManifold::unit_box(2), ModelManifold::NeumannBox { sides: vec![1.0, 1.0] }] {
            let g = ModelGreen::new(&model, &p).unwrap();
            let lam0 = model.lambda0();
            let x = [0.8, 0.3];
            let lap = laplacian(&|y| g.eval(y), &x, 1e-3);
            let rhs = -2.0 * PI * model.phi0(&p) * model.phi0(&x);
            // -(Δ + λ₀)Γ = c₂(δ - φ₀(p)φ₀) with c₂ = -2π
            assert!((-(lap + lam0 * g.eval(&x)) + rhs).abs() < 2e-3, "{model:?}: {lap}");
            if matches!(model, ModelManifold::DirichletBox { .. }) {
                assert!(g.eval(&[0.0, 0.3]).abs() < 1e-10 && g.eval(&[0.7, 1.0]).abs() < 1e-10);
            } else {
                let h = 1e-5;
                let dn = (g.eval(&[h, 0.3]) - g.eval(&[0.0, 0.3])) / h;
                assert!(dn.abs() < 1e-3, "{dn}");
            }
            // Γ ≈ log|x| + a near p
            let a = g.regular_constant();
            let q = [p[0] + 1e-3, p[1]];
            assert!((g.eval(&q) - (1e-3f64).ln() - a).abs() < 5e-3);
        }
    }

    #[test]
    fn box_green_is_orthogonal_to_phi0() {
        let model = ModelManifold::unit_box(2);
        let g = ModelGreen::new(&model, &[0.5, 0.5]).unwrap();
        let m = 80;
        let mut s = 0.0;
        for i in 0..m {
            for j in 0..m {
                let x = [(i as f64 + 0.5) / m as f64, (j as f64 + 0.5) / m as f64];
                s += g.eval(&x) * model.phi0(&x);
            }
        }
        assert!((s / (m * m) as f64).abs() < 5e-3, "{}", s / (m * m) as f64);
    }

    #[test]
    fn assemble_examples() {
        let model = ModelManifold::unit_torus(3);
        let g = SphereGrid::<f64>::shared(3, 8).unwrap();
        let zero = SphereFn::zero(Arc::clone(&g), 8);
        let eps = 0.01;
        let st = assemble(&model, &[0.5, 0.5, 0.5], eps, 0.0, &zero).unwrap();
        let green = ModelGreen::new(&model, &[0.5, 0.5, 0.5]).unwrap();
        let v = st.eval_rescaled(&[1.0, 0.0, 0.0]).unwrap();
        // 1 - ε(1/ε + a' + (2π/3)ε²)
        let expect = -eps * green.regular_constant() - 2.0 * PI / 3.0 * eps.powi(3);
        assert!((v - expect).abs() < 1e-8, "{v} vs {expect}");
        // far from p: φ₀ + O(ε)
        let far = st.eval(&[0.0, 0.0, 0.0]).unwrap();
        assert!((far - 1.0).abs() < 2.0 * eps);
        assert!(assemble(&model, &[0.5, 0.5, 0.5], 0.5, 0.0, &zero).is_err());
        assert!(assemble(&ModelManifold::RoundSphere { n: 3, radius: 1.0 }, &[0.0; 3], eps, 0.0, &zero).is_err());
    }

    #[test]
    fn mismatch_derivatives() {
        let model = ModelManifold::unit_box(2);
        let p = [0.5, 0.5];
        let g = SphereGrid::<f64>::shared(2, 16).unwrap();
        let zero = SphereFn::zero(Arc::clone(&g), 16);
        let eps = 1e-3;
        let base = assemble(&model, &p, eps, 0.0, &zero).unwrap().boundary_mismatch().unwrap();
        let d = 1e-4;
        let nl = assemble(&model, &p, eps, d, &zero).unwrap().boundary_mismatch().unwrap();
        let dl = nl.axpy(-1.0, &base).scale(1.0 / d);
        assert!(dl.samples().iter().all(|v| (v + 1.0).abs() < 1e-2), "{:?}", &dl.samples()[..3]);
        let t = random_band_limited(Arc::clone(&g), 6, 1, 3).unwrap();
        let np = assemble(&model, &p, eps, 0.0, &t.scale(d)).unwrap().boundary_mismatch().unwrap();
        let dp = np.axpy(-1.0, &base).scale(1.0 / d);
        let err = dp.axpy(-1.0, &t).max_abs();
        assert!(err < 1e-8 * t.max_abs().max(1.0), "{err}");
    }

    fn slope(pts: &[(f64, f64)]) -> f64 {
        let m = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
        sxy / sxx
    }

    #[test]
    fn fit_rates() {
        let torus = ModelManifold::unit_torus(3);
        let pts: Vec<(f64, f64)> = [0.02, 0.01, 0.005, 0.0025]
            .iter()
            .map(|&e: &f64| {
                let f = fit(&torus, &[0.5, 0.5, 0.5], e).unwrap();
                assert!(f.residual <= 1e-10);
                (e.ln(), f.size().ln())
            })
            .collect();
        assert!(slope(&pts) >= 0.9, "{}", slope(&pts));
        let bx = ModelManifold::unit_box(2);
        let pts: Vec<(f64, f64)> = [0.02, 0.01, 0.005, 0.0025]
            .iter()
            .map(|&e: &f64| (e.ln(), fit(&bx, &[0.5, 0.5], e).unwrap().size().ln()))
            .collect();
        assert!(slope(&pts) >= 0.9, "{}", slope(&pts));
        let z = fit(&bx, &[0.5, 0.5], 0.0).unwrap();
        assert_eq!(z.size(), 0.0);
    }

    #[test]
    fn mu_examples() {
        let g = SphereGrid::<f64>::shared(3, 4).unwrap();
        let zero = SphereFn::zero(g, 4);
        let t3 = ModelManifold::unit_torus(3);
        assert!((mu(&t3, &[0.1, 0.2, 0.3], 0.0, &zero, 0.01) - 4.0 * PI).abs() < 1e-12);
        let bx = ModelManifold::unit_box(2);
        let g2 = SphereGrid::<f64>::shared(2, 4).unwrap();
        let z2 = SphereFn::zero(g2, 4);
        assert!((mu(&bx, &[0.5, 0.5], 0.0, &z2, 0.01) + 8.0 * PI).abs() < 1e-12);
        assert_eq!(mu(&bx, &[0.0, 0.5], 0.0, &z2, 0.01), 0.0);
    }

    #[test]
    fn rescaled_convergence_and_positivity() {
        for (model, p) in [
            (ModelManifold::unit_torus(3), vec![0.5, 0.5, 0.5]),
            (ModelManifold::unit_torus(2), vec![0.5, 0.5]),
            (ModelManifold::unit_box(2), vec![0.5, 0.5]),
        ] {
            let radii = [1.0, 1.25, 1.5, 2.0];
            let devs: Vec<f64> = [0.02, 0.005]
                .iter()
                .map(|&e| fit(&model, &p, e).unwrap().state.unwrap().rescaled_deviation(&radii).unwrap())
                .collect();
            assert!(devs[1] < devs[0], "{model:?}: {devs:?}");
            let st = fit(&model, &p, 0.005).unwrap().state.unwrap();
            let m = 12;
            for i in 0..m {
                for j in 0..m {
                    let mut x = vec![(i as f64 + 0.5) / m as f64, (j as f64 + 0.5) / m as f64];
                    if p.len() == 3 {
                        x.push(0.37);
                    }
                    assert!(st.eval(&x).unwrap() > 0.0);
                }
            }
        }
    }
}
