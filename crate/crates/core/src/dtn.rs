//! The radial profile `φ₁` and the linearised boundary operator `H`.
//!
//! `φ₁(y) = φ₀(p)(1 - |y|^{2-n})` for `n ≥ 3` and `φ₀(p) log|y|` for `n = 2`. For mean-zero
//! `v̄`, `H(v̄) = ∂_r ψ + ∂_r²φ₁ v̄` where `ψ` is the bounded harmonic extension of
//! `-∂_rφ₁ v̄`. In the harmonic basis `H` is diagonal with multipliers
//! `m_j = (n-2)(j-1)φ₀(p)` (`n ≥ 3`) and `m_j = (j-1)φ₀(p)` (`n = 2`); its kernel on mean-zero
//! functions is `V₁`.

use crate::exterior::extend;
use crate::spherical::SphereFn;
use crate::{Error, Real, Result};

/// Kernel and mean detection tolerance, relative to the input norm.
pub const KERNEL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadialProfile<T: Real> {
    pub n: usize,
    pub phi0p: T,
}

impl<T: Real> RadialProfile<T> {
    pub fn new(n: usize, phi0p: T) -> Self {
        assert!(n >= 2, "profile needs n >= 2");
        Self { n, phi0p }
    }

    pub fn value(&self, r: T) -> T {
        if self.n == 2 {
            self.phi0p * r.ln()
        } else {
            self.phi0p * (T::one() - r.powi(2 - self.n as i32))
        }
    }

    pub fn dr(&self, r: T) -> T {
        if self.n == 2 {
            self.phi0p / r
        } else {
            let n = T::of(self.n);
            self.phi0p * (n - T::lit(2.0)) * r.powi(1 - self.n as i32)
        }
    }

    pub fn drr(&self, r: T) -> T {
        if self.n == 2 {
            -self.phi0p / (r * r)
        } else {
            let n = T::of(self.n);
            -self.phi0p * (n - T::lit(2.0)) * (n - T::one()) * r.powi(-(self.n as i32))
        }
    }

    /// Diagonal entry of `H` on `V_j`.
    pub fn multiplier(&self, j: usize) -> T {
        let jm1 = T::of(j) - T::one();
        if self.n == 2 {
            jm1 * self.phi0p
        } else {
            (T::of(self.n) - T::lit(2.0)) * jm1 * self.phi0p
        }
    }
}

/// `(∂_rφ₁(1), ∂_r²φ₁(1))`.
pub fn profile_derivatives<T: Real>(n: usize, phi0p: T) -> (T, T) {
    let p = RadialProfile::new(n, phi0p);
    (p.dr(T::one()), p.drr(T::one()))
}

/// `(j, m_j)` for `j = 0..=lmax`.
pub fn spectrum<T: Real>(n: usize, phi0p: T, lmax: usize) -> Vec<(usize, T)> {
    let p = RadialProfile::new(n, phi0p);
    (0..=lmax).map(|j| (j, p.multiplier(j))).collect()
}

fn tol<T: Real>() -> T {
    T::lit(KERNEL_TOL).max(T::epsilon() * T::lit(1e3))
}

fn require_mean_zero<T: Real>(v: &SphereFn<T>) -> Result<()> {
    let norms = v.degree_norms()?;
    let total = norms.iter().map(|x| *x * *x).sum::<T>().sqrt();
    if norms[0] > tol::<T>() * total.max(T::min_positive_value()) && !norms[0].is_zero() {
        return Err(Error::NonzeroMean { mean: norms[0].to_f64_lossy() });
    }
    Ok(())
}

/// `H(v̄)` through the exterior extension: `ψ = extend(-∂_rφ₁ v̄)`, then `∂_rψ + ∂_r²φ₁ v̄`
/// at `r = 1`.
pub fn apply_h_definitional<T: Real>(profile: &RadialProfile<T>, vbar: &SphereFn<T>) -> Result<SphereFn<T>> {
    require_mean_zero(vbar)?;
    let (d1, d2) = profile_derivatives(profile.n, profile.phi0p);
    let boundary = vbar.scale(-d1);
    let psi = extend(&boundary)?;
    let dpsi = psi.radial_derivative_trace()?;
    Ok(dpsi.axpy(d2, vbar))
}

/// `H(v̄)` through the diagonal multipliers.
pub fn apply_h_multiplier<T: Real>(profile: &RadialProfile<T>, vbar: &SphereFn<T>) -> Result<SphereFn<T>> {
    require_mean_zero(vbar)?;
    vbar.map_degrees(|j, c| profile.multiplier(j) * c)
}

/// The unique preimage orthogonal to `V₀ ⊕ V₁` of `f ⊥ V₀ ⊕ V₁`.
pub fn invert_h<T: Real>(profile: &RadialProfile<T>, f: &SphereFn<T>) -> Result<SphereFn<T>> {
    if profile.phi0p.is_zero() {
        return Err(Error::ZeroAmplitude);
    }
    let norms = f.degree_norms()?;
    let total = norms.iter().map(|x| *x * *x).sum::<T>().sqrt();
    if !total.is_zero() {
        let v0 = norms[0] / total;
        let v1 = norms.get(1).copied().unwrap_or_else(T::zero) / total;
        if v0 > tol::<T>() || v1 > tol::<T>() {
            return Err(Error::KernelObstruction { v0: v0.to_f64_lossy(), v1: v1.to_f64_lossy() });
        }
    }
    f.map_degrees(|j, c| if j < 2 { T::zero() } else { c / profile.multiplier(j) })
}

/// Splits a decomposed function into its `V₁` coefficients and the part orthogonal to
/// `V₀ ⊕ V₁`.
pub fn split_kernel<T: Real>(f: &SphereFn<T>) -> Result<(Vec<T>, SphereFn<T>)> {
    let c = f.coeffs().ok_or(Error::Undecomposed)?;
    let v1 = c.get(1).cloned().unwrap_or_default();
    let rest = f.map_degrees(|j, x| if j < 2 { T::zero() } else { x })?;
    Ok((v1, rest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spherical::{random_band_limited, SphereGrid};
    use proptest::prelude::*;
    use std::sync::Arc;

    #[test]
    fn profile_examples() {
        assert_eq!(profile_derivatives(3, 1.0), (1.0, -2.0));
        assert_eq!(profile_derivatives(2, 1.0), (1.0, -1.0));
        assert_eq!(profile_derivatives(5, 2.0), (6.0, -24.0));
        let p = RadialProfile::new(4, 1.5f64);
        assert_eq!(p.value(1.0), 0.0);
        assert!((p.value(1e4) - 1.5).abs() < 1e-7);
    }

    #[test]
    fn multiplier_examples() {
        assert_eq!(RadialProfile::new(4, 2.0).multiplier(3), 8.0);
        assert_eq!(RadialProfile::new(2, 1.0).multiplier(4), 3.0);
        assert_eq!(RadialProfile::new(7, 1.0).multiplier(1), 0.0);
        let s = spectrum(5, 1.0f64, 40);
        assert!((s[40].1 / 40.0 - 3.0).abs() < 0.1);
    }

    #[test]
    fn degree_two_is_fixed_in_three_dimensions() {
        let g = SphereGrid::<f64>::shared(3, 8).unwrap();
        let y = SphereFn::from_fn(Arc::clone(&g), |x| x[0] * x[1]).decompose(8).unwrap();
        let p = RadialProfile::new(3, 1.0);
        let hy = apply_h_definitional(&p, &y).unwrap();
        for (a, b) in hy.samples().iter().zip(y.samples()) {
            assert!((a - b).abs() < 1e-12);
        }
        let back = invert_h(&p, &y).unwrap();
        for (a, b) in back.samples().iter().zip(y.samples()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn kernel_and_errors() {
        let g = SphereGrid::<f64>::shared(3, 8).unwrap();
        let p = RadialProfile::new(3, 1.0);
        let lin = SphereFn::from_fn(Arc::clone(&g), |x| x[2] - 0.5 * x[0]).decompose(8).unwrap();
        assert!(apply_h_definitional(&p, &lin).unwrap().max_abs() < 1e-12);
        let mixed = SphereFn::from_fn(Arc::clone(&g), |x| x[0] * x[1] + 0.1 * x[2]).decompose(8).unwrap();
        let err = invert_h(&p, &mixed).unwrap_err();
        assert!(err.to_string().contains("kernel obstruction"));
        let withmean = SphereFn::from_fn(Arc::clone(&g), |x| 1.0 + x[0]).decompose(8).unwrap();
        assert!(matches!(apply_h_multiplier(&p, &withmean), Err(Error::NonzeroMean { .. })));
        let y = SphereFn::from_fn(g, |x| x[0] * x[1]).decompose(8).unwrap();
        assert!(matches!(invert_h(&RadialProfile::new(3, 0.0), &y), Err(Error::ZeroAmplitude)));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn two_paths_agree_and_are_self_adjoint(seed in any::<u64>(), n in 2usize..=3, amp in 0.2f64..3.0) {
            let l = if n == 2 { 64 } else { 16 };
            let g = SphereGrid::<f64>::shared(n, l).unwrap();
            let p = RadialProfile::new(n, amp);
            let w1 = random_band_limited(Arc::clone(&g), l, 1, seed).unwrap();
            let w2 = random_band_limited(Arc::clone(&g), l, 1, seed ^ 1).unwrap();
            let a = apply_h_definitional(&p, &w1).unwrap();
            let b = apply_h_multiplier(&p, &w1).unwrap();
            let scale = b.max_abs();
            for (x, y) in a.samples().iter().zip(b.samples()) {
                prop_assert!((x - y).abs() <= 1e-10 * scale);
            }
            let h2 = apply_h_multiplier(&p, &w2).unwrap();
            let lhs = b.inner(&w2);
            let rhs = w1.inner(&h2);
            prop_assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0));
            // Coercivity on the complement of V0 + V1.
            let w = random_band_limited(Arc::clone(&g), l, 2, seed ^ 2).unwrap();
            let hw = apply_h_multiplier(&p, &w).unwrap();
            prop_assert!(w.l2_norm() <= hw.l2_norm() / p.multiplier(2) * (1.0 + 1e-12));
            let back = apply_h_multiplier(&p, &invert_h(&p, &hw).unwrap()).unwrap();
            for (x, y) in back.samples().iter().zip(hw.samples()) {
                prop_assert!((x - y).abs() <= 1e-10 * hw.max_abs());
            }
        }
    }
}
