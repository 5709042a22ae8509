//! Bounded harmonic extensions to `{|x| ≥ 1}`.
//!
//! For boundary data `φ = Σ_j φ_j` the extension is `H_φ(x) = Σ_j |x|^{2-n-j} φ_j(x/|x|)`
//! (for `n = 2` the factor is `|x|^{-j}`). The dual extension of a linear function is
//! `G_a(y) = |y|^{-n} ⟨y, a⟩`.

use crate::spherical::SphereFn;
use crate::{Error, Real, Result};

#[derive(Debug, Clone)]
enum Repr<T: Real> {
    Series(SphereFn<T>),
    Dual(Vec<T>),
}

/// Harmonic function on `|x| ≥ 1`, bounded at infinity.
#[derive(Debug, Clone)]
pub struct ExteriorHarmonic<T: Real> {
    n: usize,
    repr: Repr<T>,
}

/// Extension of decomposed boundary data; degrees beyond the stored cutoff are dropped.
pub fn extend<T: Real>(phi: &SphereFn<T>) -> Result<ExteriorHarmonic<T>> {
    if phi.coeffs().is_none() {
        return Err(Error::Undecomposed);
    }
    Ok(ExteriorHarmonic { n: phi.dim(), repr: Repr::Series(phi.clone()) })
}

/// `G_a(y) = |y|^{-n}⟨y, a⟩`, the extension of `⟨·, a⟩` from the unit sphere.
pub fn dual_extension<T: Real>(a: &[T]) -> ExteriorHarmonic<T> {
    ExteriorHarmonic { n: a.len(), repr: Repr::Dual(a.to_vec()) }
}

fn radial_factor<T: Real>(n: usize, j: usize, r: T) -> T {
    r.powi(2 - n as i32 - j as i32)
}

fn norm<T: Real>(x: &[T]) -> T {
    x.iter().map(|v| *v * *v).sum::<T>().sqrt()
}

impl<T: Real> ExteriorHarmonic<T> {
    pub fn dim(&self) -> usize {
        self.n
    }

    /// Boundary data, when the extension was built from a [`SphereFn`].
    pub fn boundary(&self) -> Option<&SphereFn<T>> {
        match &self.repr {
            Repr::Series(f) => Some(f),
            Repr::Dual(_) => None,
        }
    }

    fn check_radius(r: T) -> Result<()> {
        if r < T::one() - T::lit(1e-12) {
            return Err(Error::Invalid(format!("exterior evaluation needs |x| >= 1, got {r}")));
        }
        Ok(())
    }

    /// `H(x)` for `|x| ≥ 1`.
    pub fn eval(&self, x: &[T]) -> Result<T> {
        let r = norm(x);
        Self::check_radius(r)?;
        match &self.repr {
            Repr::Dual(a) => Ok(x.iter().zip(a).map(|(p, q)| *p * *q).sum::<T>() / r.powi(self.n as i32)),
            Repr::Series(f) => {
                let theta: Vec<T> = x.iter().map(|v| *v / r).collect();
                let parts = degree_values(f, &theta)?;
                Ok(parts.iter().enumerate().map(|(j, v)| radial_factor(self.n, j, r) * *v).sum())
            }
        }
    }

    /// `∂_r H(x)` for `|x| ≥ 1`.
    pub fn radial_derivative(&self, x: &[T]) -> Result<T> {
        let r = norm(x);
        Self::check_radius(r)?;
        let n = self.n as i32;
        match &self.repr {
            Repr::Dual(a) => {
                let dot: T = x.iter().zip(a).map(|(p, q)| *p * *q).sum::<T>() / r;
                Ok(T::from_i32(1 - n).expect("small") * dot * r.powi(-n))
            }
            Repr::Series(f) => {
                let theta: Vec<T> = x.iter().map(|v| *v / r).collect();
                let parts = degree_values(f, &theta)?;
                Ok(parts
                    .iter()
                    .enumerate()
                    .map(|(j, v)| {
                        let e = 2 - n - j as i32;
                        T::from_i32(e).expect("small") * r.powi(e - 1) * *v
                    })
                    .sum())
            }
        }
    }

    /// Samples of `H` on the sphere of radius `r`, at the nodes of the boundary grid.
    pub fn trace_at_radius(&self, r: T) -> Result<SphereFn<T>> {
        Self::check_radius(r)?;
        match &self.repr {
            Repr::Series(f) => f.map_degrees(|j, c| c * radial_factor(self.n, j, r)),
            Repr::Dual(_) => Err(Error::Unsupported("dual extension carries no node set".into())),
        }
    }

    /// `∂_r H` on `|x| = 1`, per degree `(2-n-j) φ_j`.
    pub fn radial_derivative_trace(&self) -> Result<SphereFn<T>> {
        match &self.repr {
            Repr::Series(f) => {
                let n = self.n as i32;
                f.map_degrees(|j, c| T::from_i32(2 - n - j as i32).expect("small") * c)
            }
            Repr::Dual(_) => Err(Error::Unsupported("dual extension carries no node set".into())),
        }
    }

    /// `sup |H|` on the sphere of radius `r`.
    pub fn sup_at_radius(&self, r: T) -> Result<T> {
        match &self.repr {
            Repr::Dual(a) => Ok(norm(a) * r.powi(1 - self.n as i32)),
            Repr::Series(_) => Ok(self.trace_at_radius(r)?.max_abs()),
        }
    }
}

fn degree_values<T: Real>(f: &SphereFn<T>, theta: &[T]) -> Result<Vec<T>> {
    f.eval_by_degree(theta)
}

/// Ramp shape of the inward blend.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlendConfig<T: Real> {
    /// Radius (in units of `ε`) inside which the blend vanishes.
    pub inner: T,
}

impl<T: Real> Default for BlendConfig<T> {
    fn default() -> Self {
        Self { inner: T::lit(0.5) }
    }
}

/// Continuous extension of `H_φ(·/ε)` to all of `ℝⁿ`: zero for `|x| ≤ ε/2`, the linear ramp
/// `(2|x|/ε - 1) φ(x/|x|)` for `ε/2 ≤ |x| ≤ ε`, and `H_φ(x/ε)` beyond.
#[derive(Debug, Clone)]
pub struct Blend<T: Real> {
    h: ExteriorHarmonic<T>,
    eps: T,
    cfg: BlendConfig<T>,
}

pub fn blend_inward<T: Real>(h: &ExteriorHarmonic<T>, eps: T) -> Blend<T> {
    Blend { h: h.clone(), eps, cfg: BlendConfig::default() }
}

impl<T: Real> Blend<T> {
    pub fn eval(&self, x: &[T]) -> Result<T> {
        let r = norm(x);
        let inner = self.cfg.inner * self.eps;
        if r <= inner {
            return Ok(T::zero());
        }
        if r <= self.eps {
            let theta: Vec<T> = x.iter().map(|v| *v / r).collect();
            let ramp = (r - inner) / (self.eps - inner);
            return Ok(ramp * self.h.eval(&theta)?);
        }
        let y: Vec<T> = x.iter().map(|v| *v / self.eps).collect();
        self.h.eval(&y)
    }
}

/// Least-squares slope of `log sup_{|x|=r} |H|` against `log r` over `r ∈ [4, 64]`.
pub fn decay_slope<T: Real>(h: &ExteriorHarmonic<T>) -> Result<T> {
    if let Some(f) = h.boundary() {
        let norms = f.degree_norms()?;
        let total = norms.iter().map(|x| *x * *x).sum::<T>().sqrt();
        if total <= T::min_positive_value().sqrt() {
            return Err(Error::ZeroField);
        }
        if norms[0] > T::lit(1e-10).max(T::epsilon() * T::lit(100.0)) * total {
            return Err(Error::NonzeroMean { mean: norms[0].to_f64_lossy() });
        }
    }
    let radii: Vec<T> = (0..=8).map(|k| T::lit(4.0) * T::lit(2.0).powf(T::of(k) / T::lit(2.0))).collect();
    let mut pts = Vec::with_capacity(radii.len());
    for r in radii {
        let s = h.sup_at_radius(r)?;
        if s <= T::zero() {
            return Err(Error::ZeroField);
        }
        pts.push((r.ln(), s.ln()));
    }
    Ok(ls_slope(&pts))
}

pub(crate) fn ls_slope<T: Real>(pts: &[(T, T)]) -> T {
    let m = T::of(pts.len());
    let mx = pts.iter().map(|p| p.0).sum::<T>() / m;
    let my = pts.iter().map(|p| p.1).sum::<T>() / m;
    let sxy: T = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: T = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spherical::{random_band_limited, SphereGrid};
    use std::sync::Arc;

    fn grid(n: usize, l: usize) -> Arc<SphereGrid<f64>> {
        SphereGrid::<f64>::shared(n, l).unwrap()
    }

    #[test]
    fn degree_one_examples() {
        let g = grid(3, 8);
        let phi = SphereFn::from_fn(Arc::clone(&g), |x| x[0]).decompose(8).unwrap();
        let h = extend(&phi).unwrap();
        assert!((h.eval(&[2.0, 0.0, 0.0]).unwrap() - 0.25).abs() < 1e-14);
        let d = dual_extension(&[1.0f64, 0.0, 0.0]);
        assert!((d.eval(&[2.0, 0.0, 0.0]).unwrap() - 0.25).abs() < 1e-15);
        let d4 = dual_extension(&[0.0f64, 1.0, 0.0, 0.0]);
        assert!((d4.eval(&[0.0, 2.0, 0.0, 0.0]).unwrap() - 0.125).abs() < 1e-15);
        let c = grid(2, 8);
        let cos2 = SphereFn::from_fn(Arc::clone(&c), |x| 2.0 * x[0] * x[0] - 1.0).decompose(8).unwrap();
        let t: f64 = 0.7;
        let v = extend(&cos2).unwrap().eval(&[3.0 * t.cos(), 3.0 * t.sin()]).unwrap();
        assert!((v - (2.0 * t).cos() / 9.0).abs() < 1e-14);
    }

    #[test]
    fn boundary_trace_is_reproduced() {
        let g = grid(3, 10);
        let phi = random_band_limited(Arc::clone(&g), 10, 0, 3).unwrap();
        let h = extend(&phi).unwrap();
        let tr = h.trace_at_radius(1.0).unwrap();
        for (a, b) in tr.samples().iter().zip(phi.samples()) {
            assert!((a - b).abs() < 1e-12);
        }
        for k in (0..g.len()).step_by(29) {
            assert!((h.eval(g.point(k)).unwrap() - phi.samples()[k]).abs() < 1e-11);
        }
        assert!(h.eval(&[0.5, 0.0, 0.0]).is_err());
        assert!(matches!(extend(&SphereFn::from_fn(g, |x| x[0])), Err(Error::Undecomposed)));
    }

    #[test]
    fn dual_matches_series() {
        let a = [0.3, -1.2, 0.5];
        let g = grid(3, 4);
        let phi = SphereFn::from_fn(Arc::clone(&g), |x| x[0] * a[0] + x[1] * a[1] + x[2] * a[2]).decompose(4).unwrap();
        let h = extend(&phi).unwrap();
        let d = dual_extension(&a);
        for y in [[1.5, 0.2, -0.3], [0.0, 3.0, 1.0], [-2.0, -2.0, 5.0]] {
            assert!((h.eval(&y).unwrap() - d.eval(&y).unwrap()).abs() < 1e-12);
            assert!((h.radial_derivative(&y).unwrap() - d.radial_derivative(&y).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn blend_examples() {
        let g = grid(3, 6);
        let phi = SphereFn::from_fn(Arc::clone(&g), |x| x[2]).decompose(6).unwrap();
        let b = blend_inward(&extend(&phi).unwrap(), 0.1);
        let dir = [0.6, 0.0, 0.8];
        let at = |r: f64| b.eval(&dir.map(|v| v * r)).unwrap();
        assert_eq!(at(0.05), 0.0);
        assert!((at(0.1) - 0.8).abs() < 1e-12);
        assert!((at(0.075) - 0.4).abs() < 1e-12);
        assert!((at(0.2) - 0.8 / 4.0).abs() < 1e-12);
        assert!((at(0.1 - 1e-12) - at(0.1 + 1e-12)).abs() < 1e-9);
    }

    #[test]
    fn decay_slopes() {
        let g = grid(3, 6);
        let y1 = SphereFn::from_fn(Arc::clone(&g), |x| x[1]).decompose(6).unwrap();
        assert!((decay_slope(&extend(&y1).unwrap()).unwrap() + 2.0).abs() < 0.01);
        let c = grid(2, 6);
        let cos = SphereFn::from_fn(Arc::clone(&c), |x| x[0]).decompose(6).unwrap();
        assert!((decay_slope(&extend(&cos).unwrap()).unwrap() + 1.0).abs() < 0.01);
        let mixed = random_band_limited(Arc::clone(&g), 6, 1, 4).unwrap();
        assert!(decay_slope(&extend(&mixed).unwrap()).unwrap() <= -2.0 + 0.05);
        let zero = SphereFn::zero(Arc::clone(&g), 6);
        assert!(matches!(decay_slope(&extend(&zero).unwrap()), Err(Error::ZeroField)));
        let one = SphereFn::from_fn(g, |_| 1.0).decompose(6).unwrap();
        assert!(matches!(decay_slope(&extend(&one).unwrap()), Err(Error::NonzeroMean { .. })));
    }

    #[test]
    fn discrete_harmonicity_is_second_order() {
        // Single-degree data: Δ = ∂_rr + (n-1)/r ∂_r - j(n-2+j)/r², with radial differences.
        let g = grid(3, 6);
        let j = 3usize;
        let phi = SphereFn::from_fn(Arc::clone(&g), |x| x[0] * x[1] * x[2]).decompose(6).unwrap();
        let h = extend(&phi).unwrap();
        let dir = {
            let v = [0.4f64, 0.5, 0.7];
            let r = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            v.map(|c| c / r)
        };
        let u = |r: f64| h.eval(&dir.map(|c| c * r)).unwrap();
        let res = |dr: f64| {
            let r = 2.0;
            let urr = (u(r + dr) - 2.0 * u(r) + u(r - dr)) / (dr * dr);
            let ur = (u(r + dr) - u(r - dr)) / (2.0 * dr);
            (urr + 2.0 / r * ur - (j * (j + 1)) as f64 / (r * r) * u(r)).abs()
        };
        let (a, b) = (res(0.02), res(0.01));
        assert!((a / b).log2() > 1.8, "{a} {b}");
    }

    #[test]
    fn maximum_principle_single_degree() {
        let g = grid(3, 8);
        let phi = SphereFn::from_fn(Arc::clone(&g), |x| x[0] * x[0] - x[1] * x[1]).decompose(8).unwrap();
        let h = extend(&phi).unwrap();
        let s1 = h.sup_at_radius(1.0).unwrap();
        for r in [1.5, 2.0, 8.0] {
            assert!(h.sup_at_radius(r).unwrap() <= s1);
        }
    }
}
