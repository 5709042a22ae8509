//! Sparse multivariate polynomials with exact sphere integration.

use std::collections::BTreeMap;

use crate::spherical::monomial_integral;
use crate::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct Poly<T: Real> {
    n: usize,
    terms: BTreeMap<Vec<u32>, T>,
}

impl<T: Real> Poly<T> {
    pub fn zero(n: usize) -> Self {
        Self { n, terms: BTreeMap::new() }
    }

    pub fn constant(n: usize, c: T) -> Self {
        let mut p = Self::zero(n);
        p.add_term(vec![0; n], c);
        p
    }

    /// The coordinate function `x^i`.
    pub fn coordinate(n: usize, i: usize) -> Self {
        let mut e = vec![0; n];
        e[i] = 1;
        let mut p = Self::zero(n);
        p.add_term(e, T::one());
        p
    }

    /// `Σ_idx coef(idx) x^{idx_1} ⋯ x^{idx_d}` over all index tuples of length `d`.
    pub fn from_contraction(n: usize, d: usize, coef: impl Fn(&[usize]) -> T) -> Self {
        let mut p = Self::zero(n);
        let mut idx = vec![0usize; d];
        loop {
            let c = coef(&idx);
            if !c.is_zero() {
                let mut e = vec![0u32; n];
                for &i in &idx {
                    e[i] += 1;
                }
                p.add_term(e, c);
            }
            let mut k = 0;
            loop {
                if k == d {
                    return p;
                }
                idx[k] += 1;
                if idx[k] < n {
                    break;
                }
                idx[k] = 0;
                k += 1;
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn add_term(&mut self, e: Vec<u32>, c: T) {
        let v = self.terms.entry(e).or_insert_with(T::zero);
        *v = *v + c;
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Vec<u32>, &T)> {
        self.terms.iter()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.values().all(|c| c.is_zero())
    }

    pub fn scale(&self, s: T) -> Self {
        Self { n: self.n, terms: self.terms.iter().map(|(e, c)| (e.clone(), *c * s)).collect() }
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut p = self.clone();
        for (e, c) in &other.terms {
            p.add_term(e.clone(), *c);
        }
        p
    }

    pub fn mul(&self, other: &Self) -> Self {
        let mut p = Self::zero(self.n);
        for (a, ca) in &self.terms {
            for (b, cb) in &other.terms {
                let e = a.iter().zip(b).map(|(x, y)| x + y).collect();
                p.add_term(e, *ca * *cb);
            }
        }
        p
    }

    pub fn eval(&self, x: &[T]) -> T {
        self.terms.iter().map(|(e, c)| *c * monomial(e, x)).sum()
    }

    pub fn derivative(&self, i: usize) -> Self {
        let mut p = Self::zero(self.n);
        for (e, c) in &self.terms {
            if e[i] > 0 {
                let mut f = e.clone();
                f[i] -= 1;
                p.add_term(f, *c * T::of(e[i] as usize));
            }
        }
        p
    }

    /// Keeps only the monomials with an odd total degree.
    pub fn odd_part(&self) -> Self {
        Self {
            n: self.n,
            terms: self
                .terms
                .iter()
                .filter(|(e, _)| e.iter().sum::<u32>() % 2 == 1)
                .map(|(e, c)| (e.clone(), *c))
                .collect(),
        }
    }

    /// Exact `∫_{S^{n-1}} p dvol`.
    pub fn sphere_integral(&self) -> T {
        self.terms.iter().map(|(e, c)| *c * monomial_integral::<T>(e)).sum()
    }
}

fn monomial<T: Real>(e: &[u32], x: &[T]) -> T {
    e.iter().zip(x).fold(T::one(), |acc, (&k, &xi)| if k == 0 { acc } else { acc * xi.powi(k as i32) })
}
