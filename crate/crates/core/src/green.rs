//! Local expansions of the Green function `Γ_p` in normal coordinates and the flux constants.
//!
//! `Γ_p` solves `-(Δ_g + λ₀)Γ_p = c_n(δ_p - φ₀(p)φ₀)`. Near `p` it is a finite sum of terms
//! `P(x)|x|^s (log|x|)^q` with `P` a homogeneous polynomial built from the curvature data, plus
//! the free constant (`a` or `a′`) and, for `n = 2, 4`, a free linear part `b·x`.
//!
//! The flux constants enter the projection of `F` on `V₁` in the closed case:
//!
//! ```text
//! C⁽¹⁾ = (5-n)/(4n) Vol(S^{n-1}) B φ₀(p),  C⁽²⁾ = 1/(4n) Vol(S^{n-1}) B φ₀(p),
//! C    = (6-2n)/n   Vol(S^{n-1}) B φ₀(p),  B = -1/(3(n+2)) + 3/(16(4-n)),
//! ```
//!
//! and for `n = 4` (coefficients of `ε³ log ε`) `C⁽¹⁾ = C⁽²⁾ = 3/256 Vol(S³)`,
//! `C = -3/128 Vol(S³) φ₀(p)`. [`flux_integral`] and [`h_hat_pairing`] recompute the first two
//! by exact sphere integration; [`combination`] reports how the printed `C` relates to them.

use crate::exterior::ls_slope;
use crate::geometry::{expanded_laplacian, CurvatureData};
use crate::poly::Poly;
use crate::spherical::{random_directions, sphere_volume};
use crate::{Error, Real, Result};

/// `c₂ = -2π`, `c_n = (n-2)Vol(S^{n-1})` for `n ≥ 3`.
pub fn normalization_constant<T: Real>(n: usize) -> T {
    if n == 2 {
        -T::lit(2.0) * T::PI()
    } else {
        (T::of(n) - T::lit(2.0)) * sphere_volume::<T>(n)
    }
}

/// One term `coef · P(x)|x|^power (log|x|)^q` of the expansion.
#[derive(Debug, Clone)]
pub struct GreenTerm<T: Real> {
    pub label: &'static str,
    pub poly: Poly<T>,
    /// Degree of the homogeneous polynomial.
    pub degree: u32,
    pub power: i32,
    pub log: bool,
    grad: Vec<Poly<T>>,
    hess: Vec<Poly<T>>,
}

impl<T: Real> GreenTerm<T> {
    fn new(label: &'static str, poly: Poly<T>, degree: u32, power: i32, log: bool) -> Self {
        let n = poly.dim();
        let grad: Vec<Poly<T>> = (0..n).map(|i| poly.derivative(i)).collect();
        let hess = (0..n * n).map(|k| grad[k / n].derivative(k % n)).collect();
        Self { label, poly, degree, power, log, grad, hess }
    }

    /// Radial factor `s(r) = r^power (log r)^q` and its first two derivatives.
    fn radial(&self, r: T) -> (T, T, T) {
        let p = T::from_i32(self.power).expect("small");
        let rp = r.powi(self.power);
        if self.log {
            let l = r.ln();
            (
                rp * l,
                r.powi(self.power - 1) * (p * l + T::one()),
                r.powi(self.power - 2) * (p * (p - T::one()) * l + T::lit(2.0) * p - T::one()),
            )
        } else {
            (rp, p * r.powi(self.power - 1), p * (p - T::one()) * r.powi(self.power - 2))
        }
    }

    /// Value, gradient and row-major Hessian at `x ≠ 0`.
    pub fn derivatives(&self, x: &[T]) -> (T, Vec<T>, Vec<T>) {
        let n = x.len();
        let r = x.iter().map(|v| *v * *v).sum::<T>().sqrt();
        let (s, s1, s2) = self.radial(r);
        let pv = self.poly.eval(x);
        let pg: Vec<T> = self.grad.iter().map(|q| q.eval(x)).collect();
        let ds: Vec<T> = x.iter().map(|xi| s1 * *xi / r).collect();
        let mut grad = vec![T::zero(); n];
        let mut hess = vec![T::zero(); n * n];
        for i in 0..n {
            grad[i] = pg[i] * s + pv * ds[i];
            for j in 0..n {
                let dij = if i == j { T::one() } else { T::zero() };
                let sij = s2 * x[i] * x[j] / (r * r) + s1 * (dij / r - x[i] * x[j] / (r * r * r));
                hess[i * n + j] = self.hess[i * n + j].eval(x) * s + pg[i] * ds[j] + pg[j] * ds[i] + pv * sij;
            }
        }
        (pv * s, grad, hess)
    }
}

/// Truncated local expansion of `Γ_p`.
#[derive(Debug, Clone)]
pub struct GreenExpansion<T: Real> {
    n: usize,
    lambda0: T,
    curv: CurvatureData<T>,
    terms: Vec<GreenTerm<T>>,
    constant: T,
    linear: Vec<T>,
}

/// Which coefficient to use for the `Scal_{,t} x^t` term.
///
/// The printed value `3/(64(4-n))` (`3/64` for `n = 4`) leaves a residual of order
/// `|x|^{3-n}` in `(Δ_g + λ₀)Γ`; cancelling the third-order part of the Laplacian of the
/// `R_{jl,t}` term requires `1/(24(4-n))` (`1/24` for `n = 4`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Coefficients {
    #[default]
    Printed,
    Derived,
}

impl Coefficients {
    fn dscal<T: Real>(self, n: usize) -> T {
        let d = if n == 4 { T::one() } else { T::lit(4.0) - T::of(n) };
        match self {
            Self::Printed => T::lit(3.0) / (T::lit(64.0) * d),
            Self::Derived => T::one() / (T::lit(24.0) * d),
        }
    }
}

/// Assembles the printed expansion: `log|x| + a + b·x` (`n = 2`), `|x|^{-1} + a′` (`n = 3`),
/// the log-corrected series (`n = 4`) and the `|x|^{6-n}`-accurate series (`n ≥ 5`).
pub fn local_expansion<T: Real>(curv: &CurvatureData<T>, lambda0: T, n: usize) -> Result<GreenExpansion<T>> {
    local_expansion_with(curv, lambda0, n, Coefficients::Printed)
}

pub fn local_expansion_with<T: Real>(
    curv: &CurvatureData<T>,
    lambda0: T,
    n: usize,
    coefficients: Coefficients,
) -> Result<GreenExpansion<T>> {
    if n < 2 {
        return Err(Error::Invalid(format!("Green expansion needs n >= 2, got {n}")));
    }
    if curv.dim() != n {
        return Err(Error::Dimension { expected: n, got: curv.dim() });
    }
    let c = |v: f64| T::lit(v);
    let nn = T::of(n);
    let two_n = c(2.0) - nn;
    let mut terms = vec![];
    let lead = Poly::constant(n, T::one());
    match n {
        2 => terms.push(GreenTerm::new("log|x|", lead, 0, 0, true)),
        3 => terms.push(GreenTerm::new("|x|^-1", lead, 0, -1, false)),
        _ => {
            let ni = n as i32;
            let four = n == 4;
            let (s_pow, s_log) = if four { (0, true) } else { (4 - ni, false) };
            let rrrr = Poly::from_contraction(n, 4, |ix| curv.r(ix[0], ix[1], ix[2], ix[3]));
            let ric = Poly::from_contraction(n, 2, |ix| curv.ric(ix[0], ix[1]));
            let scal_coef = if four {
                (curv.scal() - c(6.0) * lambda0) / c(12.0)
            } else {
                (curv.scal() - c(6.0) * lambda0) / (c(12.0) * (c(4.0) - nn))
            };
            let drrrr = Poly::from_contraction(n, 5, |ix| curv.dr(ix[0], ix[1], ix[2], ix[3], ix[4]));
            let drc = Poly::from_contraction(n, 3, |ix| curv.dr_contracted(ix[0], ix[1], ix[2]));
            let dric = Poly::from_contraction(n, 3, |ix| curv.dric(ix[0], ix[1], ix[2]));
            let dscal_coef = coefficients.dscal::<T>(n);
            let dscal = Poly::from_contraction(n, 1, |ix| curv.dscal()[ix[0]] * dscal_coef);
            let (r4, dr5) = if four { (-c(1.0) / c(9.0), -c(1.0) / c(24.0)) } else { (two_n / c(18.0), two_n / c(48.0)) };
            terms.push(GreenTerm::new("|x|^(2-n)", lead, 0, 2 - ni, false));
            terms.push(GreenTerm::new("R xxxx |x|^-n", rrrr.scale(r4), 4, -ni, false));
            terms.push(GreenTerm::new("Ric xx |x|^(2-n)", ric.scale(-c(1.0) / c(12.0)), 2, 2 - ni, false));
            terms.push(GreenTerm::new("(Scal - 6 lambda0) term", Poly::constant(n, scal_coef), 0, s_pow, s_log));
            terms.push(GreenTerm::new("dR xxxxx |x|^-n", drrrr.scale(dr5), 5, -ni, false));
            terms.push(GreenTerm::new("contracted dR xxx |x|^(2-n)", drc.scale(c(1.0) / c(36.0)), 3, 2 - ni, false));
            terms.push(GreenTerm::new("dRic xxx |x|^(2-n)", dric.scale(-c(1.0) / c(24.0)), 3, 2 - ni, false));
            terms.push(GreenTerm::new("dScal x term", dscal, 1, s_pow, s_log));
        }
    }
    Ok(GreenExpansion { n, lambda0, curv: curv.clone(), terms, constant: T::zero(), linear: vec![T::zero(); n] })
}

impl<T: Real> GreenExpansion<T> {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn lambda0(&self) -> T {
        self.lambda0
    }

    pub fn curvature(&self) -> &CurvatureData<T> {
        &self.curv
    }

    pub fn terms(&self) -> &[GreenTerm<T>] {
        &self.terms
    }

    /// The free constant (`a` or `a′`).
    pub fn constant(&self) -> T {
        self.constant
    }

    /// The free linear coefficient `b` (always zero for `n = 3` and `n ≥ 5`).
    pub fn linear(&self) -> &[T] {
        &self.linear
    }

    pub fn with_constant(mut self, a: T) -> Self {
        self.constant = a;
        self
    }

    pub fn with_linear(mut self, b: Vec<T>) -> Result<Self> {
        if self.n == 3 || self.n >= 5 {
            return Err(Error::Unsupported(format!("no free linear term for n = {}", self.n)));
        }
        if b.len() != self.n {
            return Err(Error::Dimension { expected: self.n, got: b.len() });
        }
        self.linear = b;
        Ok(self)
    }

    fn check(&self, x: &[T]) -> Result<T> {
        if x.len() != self.n {
            return Err(Error::Dimension { expected: self.n, got: x.len() });
        }
        let r = x.iter().map(|v| *v * *v).sum::<T>().sqrt();
        if r.is_zero() {
            return Err(Error::Invalid("Green expansion is singular at x = 0".into()));
        }
        Ok(r)
    }

    /// Value, gradient and Hessian of the truncated series.
    pub fn derivatives(&self, x: &[T]) -> Result<(T, Vec<T>, Vec<T>)> {
        self.check(x)?;
        let n = self.n;
        let mut v = self.constant + x.iter().zip(&self.linear).map(|(a, b)| *a * *b).sum::<T>();
        let mut g = self.linear.clone();
        let mut h = vec![T::zero(); n * n];
        for t in &self.terms {
            let (tv, tg, th) = t.derivatives(x);
            v = v + tv;
            g.iter_mut().zip(&tg).for_each(|(a, b)| *a = *a + *b);
            h.iter_mut().zip(&th).for_each(|(a, b)| *a = *a + *b);
        }
        Ok((v, g, h))
    }

    pub fn eval(&self, x: &[T]) -> Result<T> {
        Ok(self.derivatives(x)?.0)
    }

    /// `∂_r Γ_p(x)` of the truncated series.
    pub fn radial_derivative(&self, x: &[T]) -> Result<T> {
        let r = self.check(x)?;
        let (_, g, _) = self.derivatives(x)?;
        Ok(g.iter().zip(x).map(|(a, b)| *a * *b).sum::<T>() / r)
    }

    /// `(Δ_g + λ₀)Γ` with the expanded metric at `x`.
    pub fn residual(&self, x: &[T]) -> Result<T> {
        let (v, g, h) = self.derivatives(x)?;
        Ok(expanded_laplacian(&self.curv, x, &g, &h) + self.lambda0 * v)
    }
}

/// `(r, max |(Δ_g + λ₀)Γ|)` over `dirs` at each radius.
pub fn residual_profile<T: Real>(exp: &GreenExpansion<T>, radii: &[T], dirs: &[Vec<f64>]) -> Result<Vec<(T, T)>> {
    let mut out = Vec::with_capacity(radii.len());
    for &r in radii {
        let mut worst = T::zero();
        for d in dirs {
            let x: Vec<T> = d.iter().map(|v| T::lit(*v) * r).collect();
            worst = worst.max(exp.residual(&x)?.abs());
        }
        out.push((r, worst));
    }
    Ok(out)
}

/// Default shells: `r = 0.2·2^{-k}`, `k = 0..6`.
pub fn default_shells<T: Real>() -> Vec<T> {
    (0..6).map(|k| T::lit(0.2) / T::lit(2.0).powi(k)).collect()
}

/// Log-log slope of the residual over `shells`; for `n = 4` the residual is divided by
/// `1 + |log r|` first. The truncation predicts a slope of at least `4 - n`.
pub fn residual_order<T: Real>(exp: &GreenExpansion<T>, shells: &[T], validity: T) -> Result<T> {
    if exp.dim() < 4 {
        return Err(Error::Unsupported("residual order needs n >= 4".into()));
    }
    if let Some(r) = shells.iter().find(|r| **r > validity) {
        return Err(Error::Invalid(format!("shell radius {r} exceeds the validity radius {validity}")));
    }
    let dirs = random_directions(exp.dim(), 8, 0x5eed);
    let prof = residual_profile(exp, shells, &dirs)?;
    let pts: Vec<(T, T)> = prof
        .iter()
        .map(|(r, e)| {
            let e = if exp.dim() == 4 { *e / (T::one() + r.ln().abs()) } else { *e };
            (r.ln(), e.max(T::min_positive_value()).ln())
        })
        .collect();
    Ok(ls_slope(&pts))
}

/// `C⁽¹⁾`, `C⁽²⁾` and the printed `C` for `n ≥ 4`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FluxConstants<T> {
    pub c1: T,
    pub c2: T,
    pub cn: T,
}

/// `B = -1/(3(n+2)) + 4κ`, with `κ` the `Scal_{,t} x^t` coefficient.
fn bracket_with<T: Real>(n: usize, coefficients: Coefficients) -> T {
    let nn = T::of(n);
    -T::one() / (T::lit(3.0) * (nn + T::lit(2.0))) + T::lit(4.0) * coefficients.dscal::<T>(n)
}

/// The printed constants.
pub fn flux_constants<T: Real>(n: usize, phi0p: T) -> Result<FluxConstants<T>> {
    flux_constants_with(n, phi0p, Coefficients::Printed)
}

/// The constants' formulas evaluated with either choice of the `Scal_{,t} x^t` coefficient
/// `κ`. For `n = 4` they are `C⁽¹⁾ = C⁽²⁾ = κ Vol(S³)/4 · φ₀(p)` and `C = -2C⁽¹⁾`.
pub fn flux_constants_with<T: Real>(n: usize, phi0p: T, coefficients: Coefficients) -> Result<FluxConstants<T>> {
    if n <= 3 {
        return Err(Error::Unsupported(format!("flux constants are defined for n >= 4, got {n}")));
    }
    let vol = sphere_volume::<T>(n);
    if n == 4 {
        let c = coefficients.dscal::<T>(4) * vol / T::lit(4.0) * phi0p;
        return Ok(FluxConstants { c1: c, c2: c, cn: -T::lit(2.0) * c });
    }
    let nn = T::of(n);
    let b = bracket_with::<T>(n, coefficients) * vol * phi0p;
    Ok(FluxConstants {
        c1: (T::lit(5.0) - nn) / (T::lit(4.0) * nn) * b,
        c2: b / (T::lit(4.0) * nn),
        cn: (T::lit(6.0) - T::lit(2.0) * nn) / nn * b,
    })
}

/// Contribution of one expansion term to a boundary integral, split as
/// `coeff·ε^e + log_coeff·ε^e log ε`.
#[derive(Debug, Clone, PartialEq)]
pub struct TermContribution<T> {
    pub label: &'static str,
    pub exponent: i32,
    pub coeff: T,
    pub log_coeff: T,
}

impl<T: Real> TermContribution<T> {
    pub fn value(&self, eps: T) -> T {
        eps.powi(self.exponent) * (self.coeff + self.log_coeff * eps.ln())
    }
}

fn linear_poly<T: Real>(a: &[T]) -> Poly<T> {
    Poly::from_contraction(a.len(), 1, |ix| a[ix[0]])
}

/// Per-term contributions to `ε^{n-2} φ₀(p) ∫ ⟨y,a⟩ ∂_rΓ̂(y) dvol` with `Γ̂(y) = Γ_p(εy)`,
/// integrated exactly. Terms whose polynomial has even degree vanish identically.
pub fn flux_terms<T: Real>(exp: &GreenExpansion<T>, a: &[T], phi0p: T) -> Result<Vec<TermContribution<T>>> {
    let n = exp.dim();
    if a.len() != n {
        return Err(Error::Dimension { expected: n, got: a.len() });
    }
    let ya = linear_poly(a);
    let mut out = Vec::new();
    for t in exp.terms() {
        let homog = t.degree as i32 + t.power;
        let integral = t.poly.mul(&ya).sphere_integral() * phi0p;
        let k = T::from_i32(homog).expect("small");
        let (coeff, log_coeff) = if t.log { (integral, k * integral) } else { (k * integral, T::zero()) };
        out.push(TermContribution { label: t.label, exponent: n as i32 - 2 + homog, coeff, log_coeff });
    }
    let lin = linear_poly(exp.linear()).mul(&ya).sphere_integral() * phi0p;
    out.push(TermContribution { label: "b.x", exponent: n as i32 - 1, coeff: lin, log_coeff: T::zero() });
    Ok(out)
}

/// `ε^{n-2} φ₀(p) ∫_{S^{n-1}} ⟨y,a⟩ ∂_rΓ̂(y) dvol`, the exact oracle for `C⁽¹⁾`.
pub fn flux_integral<T: Real>(curv: &CurvatureData<T>, n: usize, eps: T, a: &[T], phi0p: T) -> Result<T> {
    let exp = local_expansion(curv, T::zero(), n)?;
    Ok(flux_terms(&exp, a, phi0p)?.iter().map(|t| t.value(eps)).sum())
}

/// Boundary values of `Ĥ` on `|y| = 1` (with `Λ = 0`, `v₀ = 0`) from its displayed expansion,
/// as a polynomial in `y` for the given `ε`.
pub fn h_hat_boundary<T: Real>(curv: &CurvatureData<T>, n: usize, eps: T, lambda0: T, phi0p: T) -> Result<Poly<T>> {
    if n < 4 {
        return Err(Error::Unsupported(format!("Ĥ expansion is displayed for n >= 4, got {n}")));
    }
    if curv.dim() != n {
        return Err(Error::Dimension { expected: n, got: curv.dim() });
    }
    let c = |v: f64| T::lit(v);
    let nn = T::of(n);
    let (e2, e3, le) = (eps * eps, eps * eps * eps, eps.ln());
    let rrrr = Poly::from_contraction(n, 4, |ix| curv.r(ix[0], ix[1], ix[2], ix[3]));
    let ric = Poly::from_contraction(n, 2, |ix| curv.ric(ix[0], ix[1]));
    let scal = curv.scal() - c(6.0) * lambda0;
    let dscal = Poly::from_contraction(n, 1, |ix| curv.dscal()[ix[0]]);
    let mut bracket = Poly::zero(n);
    if n == 4 {
        bracket = bracket
            .add(&Poly::constant(n, e2 * le * scal / c(12.0)))
            .add(&rrrr.scale(-e2 / c(9.0)))
            .add(&ric.scale(-e2 / c(12.0)))
            .add(&dscal.scale(e3 * le * c(3.0) / c(64.0)));
    } else {
        let dr5 = Poly::from_contraction(n, 5, |ix| curv.dr(ix[0], ix[1], ix[2], ix[3], ix[4]));
        let drc = Poly::from_contraction(n, 3, |ix| curv.dr_contracted(ix[0], ix[1], ix[2]));
        let dric = Poly::from_contraction(n, 3, |ix| curv.dric(ix[0], ix[1], ix[2]));
        let two_n = c(2.0) - nn;
        bracket = bracket
            .add(&rrrr.scale(e2 * two_n / c(18.0)))
            .add(&ric.scale(-e2 / c(12.0)))
            .add(&Poly::constant(n, e2 * scal / (c(12.0) * (c(4.0) - nn))))
            .add(&dr5.scale(e3 * two_n / c(48.0)))
            .add(&drc.scale(e3 / c(36.0)))
            .add(&dric.scale(-e3 / c(24.0)))
            .add(&dscal.scale(e3 * c(3.0) / (c(64.0) * (c(4.0) - nn))));
    }
    Ok(Poly::constant(n, -phi0p).add(&bracket.scale(phi0p)))
}

/// `∫_{S^{n-1}} ⟨y,a⟩ Ĥ dvol` from [`h_hat_boundary`]; the radial-derivative pairing is
/// `(1-n)` times this value.
pub fn h_hat_pairing<T: Real>(curv: &CurvatureData<T>, n: usize, eps: T, a: &[T], phi0p: T) -> Result<T> {
    if a.len() != n {
        return Err(Error::Dimension { expected: n, got: a.len() });
    }
    Ok(h_hat_boundary(curv, n, eps, T::zero(), phi0p)?.mul(&linear_poly(a)).sphere_integral())
}

/// The same pairing with `Ĥ` rebuilt from the boundary condition: on `|y| = 1`,
/// `Ĥ = -φ₀(p) + ε^{n-2}φ₀(p)Γ_p(εy)` up to constants, using the Green expansion terms.
pub fn h_hat_pairing_from_green<T: Real>(exp: &GreenExpansion<T>, eps: T, a: &[T], phi0p: T) -> Result<T> {
    let n = exp.dim();
    if a.len() != n {
        return Err(Error::Dimension { expected: n, got: a.len() });
    }
    let ya = linear_poly(a);
    let mut s = T::zero();
    for t in exp.terms() {
        let e = n as i32 - 2 + t.degree as i32 + t.power;
        let f = if t.log { eps.powi(e) * eps.ln() } else { eps.powi(e) };
        s = s + f * t.poly.mul(&ya).sphere_integral();
    }
    Ok(s * phi0p)
}

/// How the printed `C` compares with combinations of `C⁽¹⁾` and `C⁽²⁾`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CombinationReport<T> {
    pub n: usize,
    pub c1: T,
    pub c2: T,
    pub printed: T,
    /// `-C⁽¹⁾ + (1-n)C⁽²⁾`: the `V₁` projection of the flux of
    /// `φ₀ - ε^{n-2}φ₀(p)Γ_p + H` with the boundary values of `Ĥ` as displayed.
    pub consistent: T,
    /// `C⁽¹⁾ + (1-n)C⁽²⁾`: the same with the opposite sign on the `Γ_p` term.
    pub mixed_sign: T,
}

impl<T: Real> CombinationReport<T> {
    pub fn printed_over_consistent(&self) -> T {
        self.printed / self.consistent
    }

    pub fn printed_over_mixed(&self) -> T {
        self.printed / self.mixed_sign
    }
}

pub fn combination<T: Real>(n: usize, phi0p: T) -> Result<CombinationReport<T>> {
    let k = flux_constants::<T>(n, phi0p)?;
    let m = T::one() - T::of(n);
    Ok(CombinationReport { n, c1: k.c1, c2: k.c2, printed: k.cn, consistent: -k.c1 + m * k.c2, mixed_sign: k.c1 + m * k.c2 })
}

/// Coefficients `(A, B)` of `A ε³ log ε + B ε³` in a sum of contributions, keeping only
/// exponent-3 terms.
pub fn cubic_coefficients<T: Real>(terms: &[TermContribution<T>]) -> (T, T) {
    terms
        .iter()
        .filter(|t| t.exponent == 3)
        .fold((T::zero(), T::zero()), |(a, b), t| (a + t.log_coeff, b + t.coeff))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::random_curvature;
    use std::f64::consts::PI;

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn normalization_examples() {
        assert!((normalization_constant::<f64>(3) - 4.0 * PI).abs() < 1e-13);
        assert!((normalization_constant::<f64>(2) + 2.0 * PI).abs() < 1e-15);
        assert!((normalization_constant::<f64>(4) - 4.0 * PI * PI).abs() < 1e-12);
    }

    #[test]
    fn flat_five_dimensional_series_is_the_fundamental_solution() {
        let e = local_expansion(&CurvatureData::<f64>::flat(5), 0.0, 5).unwrap();
        let x = [0.1, -0.2, 0.05, 0.3, 0.0];
        let r = dot(&x, &x).sqrt();
        assert!((e.eval(&x).unwrap() - r.powi(-3)).abs() < 1e-12 * r.powi(-3));
        assert!((e.radial_derivative(&x).unwrap() + 3.0 * r.powi(-4)).abs() < 1e-10);
        assert!(e.eval(&[0.0; 5]).is_err());
        let prof = residual_profile(&e, &[0.5, 0.25], &random_directions(5, 4, 1)).unwrap();
        assert!(prof.iter().all(|(_, v)| *v <= 1e-10), "{prof:?}");
    }

    #[test]
    fn printed_coefficients() {
        let c = CurvatureData::<f64>::constant_curvature(5, -1.0);
        assert_eq!(c.scal(), 20.0);
        let e = local_expansion(&c, 0.0, 5).unwrap();
        let t = e.terms().iter().find(|t| t.label == "(Scal - 6 lambda0) term").unwrap();
        assert_eq!(t.power, -1);
        assert!((t.poly.eval(&[0.0; 5]) - 20.0 / (12.0 * -1.0)).abs() < 1e-14);
        let c4 = random_curvature::<f64>(4, 2).unwrap();
        let e4 = local_expansion(&c4, 1.5, 4).unwrap();
        let t4 = e4.terms().iter().find(|t| t.label == "(Scal - 6 lambda0) term").unwrap();
        assert!(t4.log);
        assert!((t4.poly.eval(&[0.0; 4]) - (c4.scal() - 9.0) / 12.0).abs() < 1e-13);
        assert_eq!(local_expansion(&CurvatureData::<f64>::flat(3), 0.0, 3).unwrap().terms().len(), 1);
    }

    #[test]
    fn term_derivatives_match_finite_differences() {
        let c = random_curvature::<f64>(4, 6).unwrap();
        let e = local_expansion(&c, 0.3, 4).unwrap().with_constant(0.7).with_linear(vec![0.1, 0.2, -0.3, 0.4]).unwrap();
        let x = [0.11, -0.07, 0.05, 0.09];
        let (_, g, h) = e.derivatives(&x).unwrap();
        let d = 1e-6;
        for i in 0..4 {
            let mut xp = x;
            let mut xm = x;
            xp[i] += d;
            xm[i] -= d;
            let fd = (e.eval(&xp).unwrap() - e.eval(&xm).unwrap()) / (2.0 * d);
            assert!((fd - g[i]).abs() < 1e-5 * g[i].abs().max(1.0), "{i} {fd} {}", g[i]);
            let (_, gp, _) = e.derivatives(&xp).unwrap();
            let (_, gm, _) = e.derivatives(&xm).unwrap();
            for j in 0..4 {
                let fd2 = (gp[j] - gm[j]) / (2.0 * d);
                assert!((fd2 - h[i * 4 + j]).abs() < 1e-5 * h[i * 4 + j].abs().max(1.0));
            }
        }
    }

    #[test]
    fn residual_slopes() {
        for (n, seed) in [(5usize, 1u64), (6, 2), (7, 3)] {
            let c = random_curvature::<f64>(n, seed).unwrap();
            let e = local_expansion_with(&c, 0.4, n, Coefficients::Derived).unwrap();
            let s = residual_order(&e, &default_shells(), 1.0).unwrap();
            assert!(s >= (4.0 - n as f64) - 0.1, "n={n} slope {s}");
            // The printed coefficient leaves an |x|^{3-n} residual.
            let p = residual_order(&local_expansion(&c, 0.4, n).unwrap(), &default_shells(), 1.0).unwrap();
            assert!((p - (3.0 - n as f64)).abs() < 0.2, "n={n} printed slope {p}");
        }
        let c = random_curvature::<f64>(4, 2).unwrap();
        let e4 = local_expansion_with(&c, 0.0, 4, Coefficients::Derived).unwrap();
        let s = residual_order(&e4, &default_shells(), 1.0).unwrap();
        assert!(s >= -0.1, "n=4 slope {s}");
        assert!(residual_order(&e4, &[0.5], 0.1).is_err());
    }

    #[test]
    fn derived_constants_match_their_oracle() {
        let eps = 1e-3f64;
        for n in 4..=7 {
            let c = random_curvature::<f64>(n, 40 + n as u64).unwrap();
            let a: Vec<f64> = (0..n).map(|k| 0.5 - 0.2 * k as f64).collect();
            let e = local_expansion_with(&c, 0.0, n, Coefficients::Derived).unwrap();
            let k = flux_constants_with::<f64>(n, 1.0, Coefficients::Derived).unwrap();
            let g = dot(c.dscal(), &a);
            let terms = flux_terms(&e, &a, 1.0).unwrap();
            let (lg, plain) = cubic_coefficients(&terms);
            let got = if n == 4 { lg } else { plain };
            assert!((got - k.c1 * g).abs() <= 1e-12 * g.abs().max(1.0), "n={n}");
            let _ = eps;
        }
    }

    #[test]
    fn flux_constant_examples() {
        assert_eq!(flux_constants::<f64>(5, 1.0).unwrap().c1, 0.0);
        let c4 = flux_constants::<f64>(4, 1.0).unwrap();
        assert!((c4.cn + 3.0 / 128.0 * 2.0 * PI * PI).abs() < 1e-14);
        assert!((c4.cn + 0.46252).abs() < 2e-4);
        let c6 = flux_constants::<f64>(6, 1.0).unwrap().cn;
        assert!((c6 - (1.0 / 24.0 + 3.0 / 32.0) * PI.powi(3)).abs() < 1e-12);
        assert!((c6 - 4.1985).abs() < 5e-4);
        assert!(flux_constants::<f64>(3, 1.0).is_err());
    }

    #[test]
    fn flux_oracle_matches_first_constant() {
        let eps: f64 = 1e-3;
        for n in 5..=7 {
            for seed in 0..3 {
                let c = random_curvature::<f64>(n, seed).unwrap();
                let a: Vec<f64> = (0..n).map(|k| (k as f64 * 0.7).sin() + 0.2).collect();
                let phi0p = 0.8;
                let oracle = flux_integral(&c, n, eps, &a, phi0p).unwrap();
                let k = flux_constants::<f64>(n, phi0p).unwrap();
                let want = k.c1 * eps.powi(3) * dot(c.dscal(), &a);
                let scale = (k.c1.abs().max(1e-3)) * eps.powi(3) * dot(c.dscal(), &a).abs();
                assert!((oracle - want).abs() <= 1e-3 * scale, "n={n} {oracle} {want}");
            }
        }
        let flat = CurvatureData::<f64>::flat(6);
        assert_eq!(flux_integral(&flat, 6, 1e-3, &[1.0; 6], 1.0).unwrap(), 0.0);
    }

    #[test]
    fn even_terms_drop_out() {
        let c = random_curvature::<f64>(6, 4).unwrap();
        let e = local_expansion(&c, 0.2, 6).unwrap().with_constant(3.0);
        let a = [0.3, -0.4, 1.0, 0.2, 0.0, -0.8];
        for t in flux_terms(&e, &a, 1.0).unwrap() {
            let term = e.terms().iter().find(|x| x.label == t.label);
            if term.is_some_and(|x| x.degree % 2 == 0) {
                assert!(t.coeff.abs() < 1e-14 && t.log_coeff.abs() < 1e-14, "{t:?}");
            }
        }
    }

    #[test]
    fn h_hat_pairing_matches_second_constant() {
        let eps: f64 = 1e-3;
        for n in 5..=7 {
            let c = random_curvature::<f64>(n, 10 + n as u64).unwrap();
            let a: Vec<f64> = (0..n).map(|k| 1.0 - 0.3 * k as f64).collect();
            let k = flux_constants::<f64>(n, 1.3).unwrap();
            let want = k.c2 * eps.powi(3) * dot(c.dscal(), &a);
            let got = h_hat_pairing(&c, n, eps, &a, 1.3).unwrap();
            assert!((got - want).abs() <= 1e-3 * want.abs(), "n={n} {got} {want}");
            let e = local_expansion(&c, 0.0, n).unwrap();
            let alt = h_hat_pairing_from_green(&e, eps, &a, 1.3).unwrap();
            assert!((alt - got).abs() <= 1e-10 * want.abs());
        }
    }

    #[test]
    fn four_dimensional_log_coefficients() {
        let c = random_curvature::<f64>(4, 8).unwrap();
        let a = [0.5, -1.0, 0.25, 0.75];
        let e = local_expansion(&c, 0.0, 4).unwrap();
        let (log1, _) = cubic_coefficients(&flux_terms(&e, &a, 1.0).unwrap());
        let k = flux_constants::<f64>(4, 1.0).unwrap();
        let g = dot(c.dscal(), &a);
        assert!((log1 - k.c1 * g).abs() < 1e-12 * g.abs());
        let eps = [1e-3f64, 2e-3];
        let p: Vec<f64> = eps.iter().map(|e| h_hat_pairing(&c, 4, *e, &a, 1.0).unwrap() / e.powi(3)).collect();
        let log2 = (p[0] - p[1]) / (eps[0].ln() - eps[1].ln());
        assert!((log2 - k.c2 * g).abs() < 1e-9 * g.abs());
    }

    #[test]
    fn combination_discrepancy() {
        for n in 5..=8 {
            let r = combination::<f64>(n, 1.0).unwrap();
            let vol = sphere_volume::<f64>(n);
            assert!((r.consistent + vol * bracket_with::<f64>(n, Coefficients::Printed) / n as f64).abs() < 1e-12 * vol);
            assert!((r.printed_over_mixed() - 4.0).abs() < 1e-12);
        }
        let r4 = combination::<f64>(4, 1.0).unwrap();
        assert!((r4.printed_over_mixed() - 1.0).abs() < 1e-14);
        assert!((r4.printed_over_consistent() - 0.5).abs() < 1e-14);
    }
}
