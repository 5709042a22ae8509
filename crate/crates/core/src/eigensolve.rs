//! First Dirichlet eigenpair of `M ∖ Ω` on Cartesian grids (flat 2D and 3D models), flux
//! traces, the Hadamard shape derivative, volume normalisation and asymptotic-law fits.
//!
//! The hole enters through Shortley–Weller rows: an arm from an active node to a node inside
//! the hole is cut at fraction `s` of the spacing, and the ghost value is the linear
//! extrapolation through the zero boundary value. The resulting matrix is a symmetric
//! M-matrix. The lowest eigenpair comes from shifted inverse iteration whose inner solves
//! are conjugate gradients preconditioned by the fast Poisson solver of the hole-free grid.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::geometry::{inverse_logdet_expansion, ModelManifold};
use crate::spherical::{ball_volume, gauss_legendre, homogeneous_exponents, SphereFn, SphereGrid};
use crate::{Error, Result};

/// Solver knobs. The defaults are the production settings.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    /// Relative eigenvalue tolerance between consecutive outer iterations.
    pub tol: f64,
    pub max_outer: usize,
    /// Relative residual of the inner CG solves.
    pub cg_tol: f64,
    pub max_cg: usize,
    /// Minimum number of grid spacings across the hole diameter `2ε`.
    pub min_nodes_across: f64,
    /// Lower clamp on the cut fraction of Shortley–Weller arms.
    pub s_min: f64,
    /// Shift as a fraction of the current Rayleigh quotient.
    pub shift: f64,
    /// Width of the flux-fit annulus in grid spacings.
    pub annulus: f64,
    /// Degree cutoff of the flux trace (and of the angular fit).
    pub flux_lmax: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_outer: 200,
            cg_tol: 1e-10,
            max_cg: 5000,
            min_nodes_across: 16.0,
            s_min: 1e-3,
            shift: 0.9,
            annulus: 4.0,
            flux_lmax: 16,
        }
    }
}

impl SolverConfig {
    /// Same settings with the resolution check relaxed to `nodes` spacings across `2ε`.
    pub fn with_min_nodes(mut self, nodes: f64) -> Self {
        self.min_nodes_across = nodes;
        self
    }
}

/// Hole `{exp_p((1 + v₀ + v̄(θ))εθ)}` in model coordinates.
#[derive(Debug, Clone)]
pub struct HoleShape {
    pub center: Vec<f64>,
    pub eps: f64,
    pub v0: f64,
    /// Mean-zero boundary perturbation; `None` is the round hole.
    pub vbar: Option<SphereFn<f64>>,
}

impl HoleShape {
    pub fn round(center: &[f64], eps: f64) -> Self {
        Self { center: center.to_vec(), eps, v0: 0.0, vbar: None }
    }

    pub fn new(center: &[f64], eps: f64, v0: f64, vbar: SphereFn<f64>) -> Result<Self> {
        if vbar.dim() != center.len() {
            return Err(Error::Dimension { expected: center.len(), got: vbar.dim() });
        }
        let vbar = match vbar.coeffs() {
            Some(_) => vbar,
            None => vbar.decompose_mean_zero(vbar.grid().lmax())?,
        };
        let mean = vbar.mean();
        if mean.abs() > 1e-10 * (1.0 + vbar.max_abs()) {
            return Err(Error::NonzeroMean { mean });
        }
        let hole = Self { center: center.to_vec(), eps, v0, vbar: Some(vbar) };
        if hole.profile()?.min_radius() <= 0.0 {
            return Err(Error::Invalid("1 + v0 + vbar must stay positive".into()));
        }
        Ok(hole)
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    /// Fast evaluator of the boundary radius.
    pub fn profile(&self) -> Result<HoleProfile> {
        let n = self.dim();
        if !(2..=3).contains(&n) {
            return Err(Error::Unsupported(format!("hole shapes need n in {{2, 3}}, got {n}")));
        }
        let base = self.eps * (1.0 + self.v0);
        let kind = match &self.vbar {
            None => ProfileKind::Round,
            Some(v) if v.max_abs() == 0.0 => ProfileKind::Round,
            Some(v) if n == 2 => {
                let c = v.coeffs().ok_or(Error::Undecomposed)?;
                let c0 = c[0][0] / (2.0 * PI).sqrt();
                let s = 1.0 / PI.sqrt();
                let modes = c.iter().skip(1).map(|cj| (cj[0] * s, cj[1] * s)).collect();
                ProfileKind::Fourier { c0, modes }
            }
            Some(v) => ProfileKind::Zonal(v.clone()),
        };
        let mut p = HoleProfile { eps: self.eps, base, kind, rmin: base, rmax: base };
        if !matches!(p.kind, ProfileKind::Round) {
            let probe = SphereGrid::<f64>::shared(n, if n == 2 { 64 } else { 16 })?;
            let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
            for k in 0..probe.len() {
                let r = p.radius(probe.point(k));
                lo = lo.min(r);
                hi = hi.max(r);
            }
            // pad for values between probe nodes
            let pad = 0.05 * (hi - lo);
            p.rmin = lo - pad;
            p.rmax = hi + pad;
        }
        Ok(p)
    }

    /// `v = v₀ + v̄` sampled on `grid`.
    pub fn v_samples(&self, grid: &Arc<SphereGrid<f64>>) -> Result<Vec<f64>> {
        let p = self.profile()?;
        Ok((0..grid.len()).map(|k| p.radius(grid.point(k)) / self.eps - 1.0).collect())
    }
}

#[derive(Debug, Clone)]
enum ProfileKind {
    Round,
    /// `v̄(φ) = c0 + Σ_j a_j cos jφ + b_j sin jφ`.
    Fourier { c0: f64, modes: Vec<(f64, f64)> },
    Zonal(SphereFn<f64>),
}

/// Radius function `R(θ) = ε(1 + v₀ + v̄(θ))` of a hole.
#[derive(Debug, Clone)]
pub struct HoleProfile {
    eps: f64,
    base: f64,
    kind: ProfileKind,
    rmin: f64,
    rmax: f64,
}

impl HoleProfile {
    /// `R` in the direction of the unit vector `theta`.
    pub fn radius(&self, theta: &[f64]) -> f64 {
        match &self.kind {
            ProfileKind::Round => self.base,
            ProfileKind::Fourier { c0, modes } => {
                let phi = theta[1].atan2(theta[0]);
                let mut v = *c0;
                for (j, (a, b)) in modes.iter().enumerate() {
                    let (s, c) = ((j + 1) as f64 * phi).sin_cos();
                    v += a * c + b * s;
                }
                self.base + self.eps * v
            }
            ProfileKind::Zonal(f) => self.base + self.eps * f.eval(theta).expect("decomposed profile"),
        }
    }

    /// `|∇ρ|` on the boundary for `ρ = r - R(θ)`: `sqrt(1 + |∇_S R|²/R²)`.
    pub fn slope_factor(&self, theta: &[f64]) -> f64 {
        match &self.kind {
            ProfileKind::Round => 1.0,
            ProfileKind::Fourier { modes, .. } => {
                let phi = theta[1].atan2(theta[0]);
                let mut dv = 0.0;
                for (j, (a, b)) in modes.iter().enumerate() {
                    let jf = (j + 1) as f64;
                    let (s, c) = (jf * phi).sin_cos();
                    dv += jf * (b * c - a * s);
                }
                let r = self.radius(theta);
                (1.0 + (self.eps * dv / r).powi(2)).sqrt()
            }
            ProfileKind::Zonal(_) => {
                let (t1, t2) = tangent_frame(theta);
                let d: f64 = 1e-5;
                let mut g2 = 0.0;
                for t in [t1, t2] {
                    let plus: Vec<f64> = theta.iter().zip(&t).map(|(x, y)| x * d.cos() + y * d.sin()).collect();
                    let minus: Vec<f64> = theta.iter().zip(&t).map(|(x, y)| x * d.cos() - y * d.sin()).collect();
                    g2 += ((self.radius(&plus) - self.radius(&minus)) / (2.0 * d)).powi(2);
                }
                let r = self.radius(theta);
                (1.0 + g2 / (r * r)).sqrt()
            }
        }
    }

    pub fn min_radius(&self) -> f64 {
        self.rmin
    }

    pub fn max_radius(&self) -> f64 {
        self.rmax
    }

    fn is_round(&self) -> bool {
        matches!(self.kind, ProfileKind::Round)
    }

    /// `|d| - R(d/|d|)`.
    fn level(&self, d: &[f64]) -> f64 {
        let r = norm(d);
        if r > self.rmax {
            return r - self.rmax;
        }
        if r == 0.0 {
            return -self.base;
        }
        let theta: Vec<f64> = d.iter().map(|x| x / r).collect();
        r - self.radius(&theta)
    }
}

fn tangent_frame(theta: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let a = if theta[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    let dot: f64 = a.iter().zip(theta).map(|(x, y)| x * y).sum();
    let mut t1: Vec<f64> = a.iter().zip(theta).map(|(x, y)| x - dot * y).collect();
    let m = norm(&t1);
    t1.iter_mut().for_each(|x| *x /= m);
    let t2 = vec![
        theta[1] * t1[2] - theta[2] * t1[1],
        theta[2] * t1[0] - theta[0] * t1[2],
        theta[0] * t1[1] - theta[1] * t1[0],
    ];
    (t1, t2)
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Outer closure of the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Closure {
    /// Nodes `i·h`, `i = 0..N`, wrapped.
    Periodic,
    /// Nodes `i·h`, `i = 1..N-1`; boundary values zero.
    Dirichlet,
    /// Cell centres `(i + ½)h`, `i = 0..N`; mirrored ghosts.
    Neumann,
}

/// Tensor grid covering the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub closure: Closure,
    /// Node count per axis.
    pub dims: Vec<usize>,
    /// Spacing per axis.
    pub h: Vec<f64>,
    pub sides: Vec<f64>,
    strides: Vec<usize>,
}

impl Grid {
    pub fn new(model: &ModelManifold, h: f64) -> Result<Self> {
        let (closure, sides) = match model {
            ModelManifold::FlatTorus { periods } => (Closure::Periodic, periods.clone()),
            ModelManifold::DirichletBox { sides } => (Closure::Dirichlet, sides.clone()),
            ModelManifold::NeumannBox { sides } => (Closure::Neumann, sides.clone()),
            ModelManifold::RoundSphere { .. } => {
                return Err(Error::Unsupported("grid solves run on flat models only".into()))
            }
        };
        if !(2..=3).contains(&sides.len()) {
            return Err(Error::Unsupported(format!("grid solves need n in {{2, 3}}, got {}", sides.len())));
        }
        if !(h > 0.0) {
            return Err(Error::Invalid(format!("grid spacing must be positive, got {h}")));
        }
        let mut dims = Vec::new();
        let mut hs = Vec::new();
        for &l in &sides {
            let m = (l / h).round() as usize;
            if m < 4 || ((m as f64) * h - l).abs() > 1e-6 * l {
                return Err(Error::Invalid(format!("spacing {h} does not divide side {l}")));
            }
            hs.push(l / m as f64);
            dims.push(if closure == Closure::Dirichlet { m - 1 } else { m });
        }
        let mut strides = vec![1; dims.len()];
        for a in 1..dims.len() {
            strides[a] = strides[a - 1] * dims[a - 1];
        }
        Ok(Self { closure, dims, h: hs, sides, strides })
    }

    pub fn dim(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Cell measure `Π h_a`.
    pub fn cell(&self) -> f64 {
        self.h.iter().product()
    }

    pub fn coord(&self, axis: usize, i: usize) -> f64 {
        let h = self.h[axis];
        match self.closure {
            Closure::Periodic => i as f64 * h,
            Closure::Dirichlet => (i + 1) as f64 * h,
            Closure::Neumann => (i as f64 + 0.5) * h,
        }
    }

    pub fn index(&self, c: &[usize]) -> usize {
        c.iter().zip(&self.strides).map(|(a, b)| a * b).sum()
    }

    pub fn multi(&self, mut i: usize) -> Vec<usize> {
        self.dims
            .iter()
            .map(|&d| {
                let c = i % d;
                i /= d;
                c
            })
            .collect()
    }

    pub fn point(&self, i: usize) -> Vec<f64> {
        self.multi(i).iter().enumerate().map(|(a, &c)| self.coord(a, c)).collect()
    }

    /// `x - p`, minimal image on tori.
    pub fn displacement(&self, x: &[f64], p: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(p)
            .zip(&self.sides)
            .map(|((a, b), l)| {
                let d = a - b;
                if self.closure == Closure::Periodic {
                    d - l * (d / l).round()
                } else {
                    d
                }
            })
            .collect()
    }

    fn up(&self, i: usize, a: usize, c: usize) -> usize {
        if c + 1 < self.dims[a] {
            i + self.strides[a]
        } else {
            i + self.strides[a] - self.dims[a] * self.strides[a]
        }
    }

    fn down(&self, i: usize, a: usize, c: usize) -> usize {
        if c > 0 {
            i - self.strides[a]
        } else {
            i + (self.dims[a] - 1) * self.strides[a]
        }
    }

    /// Integer index window covering `[p_a - r, p_a + r]` on axis `a` (may leave the
    /// range on tori; wrap with `rem_euclid`).
    fn window(&self, a: usize, p: f64, r: f64) -> (i64, i64) {
        let h = self.h[a];
        let off = match self.closure {
            Closure::Periodic => 0.0,
            Closure::Dirichlet => 1.0,
            Closure::Neumann => 0.5,
        };
        let lo = ((p - r) / h - off).floor() as i64 - 1;
        let hi = ((p + r) / h - off).ceil() as i64 + 1;
        (lo, hi)
    }

    /// Calls `f(index)` for every node inside the box of half-width `r` around `p`.
    fn for_each_near(&self, p: &[f64], r: f64, mut f: impl FnMut(usize)) {
        let d = self.dim();
        let wins: Vec<(i64, i64)> = (0..d).map(|a| self.window(a, p[a], r)).collect();
        let mut c: Vec<i64> = wins.iter().map(|w| w.0).collect();
        loop {
            let mut ok = true;
            let mut idx = 0;
            for a in 0..d {
                let m = self.dims[a] as i64;
                let ca = if self.closure == Closure::Periodic { c[a].rem_euclid(m) } else { c[a] };
                if ca < 0 || ca >= m {
                    ok = false;
                    break;
                }
                idx += ca as usize * self.strides[a];
            }
            if ok {
                f(idx);
            }
            let mut a = 0;
            loop {
                if a == d {
                    return;
                }
                c[a] += 1;
                if c[a] <= wins[a].1 {
                    break;
                }
                c[a] = wins[a].0;
                a += 1;
            }
        }
    }
}

/// Sparse symmetric operator `-Δ_h` on the perforated grid. Hole nodes carry a decoupled
/// diagonal row.
#[derive(Debug, Clone)]
struct Operator {
    grid: Grid,
    active: Vec<bool>,
    diag: Vec<f64>,
    /// Bit `2a` links the `+a` neighbour, bit `2a+1` the `-a` neighbour.
    links: Vec<u8>,
    ih2: Vec<f64>,
}

impl Operator {
    fn new(grid: Grid) -> Self {
        let d = grid.dim();
        let ih2: Vec<f64> = grid.h.iter().map(|h| 1.0 / (h * h)).collect();
        let len = grid.len();
        let mut diag = vec![0.0; len];
        let mut links = vec![0u8; len];
        let mut c = vec![0usize; d];
        for i in 0..len {
            for a in 0..d {
                for (bit, has) in [(2 * a, c[a] + 1 < grid.dims[a]), (2 * a + 1, c[a] > 0)] {
                    if has || grid.closure == Closure::Periodic {
                        links[i] |= 1 << bit;
                        diag[i] += ih2[a];
                    } else if grid.closure == Closure::Dirichlet {
                        diag[i] += ih2[a];
                    }
                }
            }
            increment(&mut c, &grid.dims);
        }
        Self { active: vec![true; len], grid, diag, links, ih2 }
    }

    /// Cuts the hole out of the operator.
    fn perforate(&mut self, hole: &HoleProfile, center: &[f64], s_min: f64) {
        let g = self.grid.clone();
        let d = g.dim();
        let reach = hole.max_radius() + 2.0 * g.h.iter().cloned().fold(0.0, f64::max);
        let mut near = Vec::new();
        g.for_each_near(center, reach, |i| near.push(i));
        let mut level = std::collections::HashMap::with_capacity(near.len());
        for &i in &near {
            let dvec = g.displacement(&g.point(i), center);
            let lv = hole.level(&dvec);
            level.insert(i, lv);
            if lv <= 0.0 {
                self.active[i] = false;
            }
        }
        let full: f64 = self.ih2.iter().map(|x| 2.0 * x).sum();
        for &i in &near {
            if !self.active[i] {
                self.diag[i] = full;
                self.links[i] = 0;
                continue;
            }
            let c = g.multi(i);
            let x = g.displacement(&g.point(i), center);
            for a in 0..d {
                for (bit, sign) in [(2 * a, 1.0), (2 * a + 1, -1.0)] {
                    if self.links[i] & (1 << bit) == 0 {
                        continue;
                    }
                    let j = if sign > 0.0 { g.up(i, a, c[a]) } else { g.down(i, a, c[a]) };
                    if self.active[j] {
                        continue;
                    }
                    let s = cut_fraction(hole, &x, a, sign * g.h[a], level[&i]).max(s_min);
                    self.links[i] &= !(1 << bit);
                    self.diag[i] += self.ih2[a] * (1.0 / s - 1.0);
                }
            }
        }
    }

    fn apply(&self, x: &[f64], sigma: f64, y: &mut [f64]) {
        let g = &self.grid;
        let d = g.dim();
        let mut c = vec![0usize; d];
        for i in 0..x.len() {
            let mut acc = (self.diag[i] - sigma) * x[i];
            let m = self.links[i];
            if m != 0 {
                for a in 0..d {
                    if m & (1 << (2 * a)) != 0 {
                        acc -= self.ih2[a] * x[g.up(i, a, c[a])];
                    }
                    if m & (2 << (2 * a)) != 0 {
                        acc -= self.ih2[a] * x[g.down(i, a, c[a])];
                    }
                }
            }
            y[i] = acc;
            increment(&mut c, &g.dims);
        }
    }
}

fn increment(c: &mut [usize], dims: &[usize]) {
    for a in 0..c.len() {
        c[a] += 1;
        if c[a] < dims[a] {
            return;
        }
        c[a] = 0;
    }
}

/// Fraction `s ∈ (0, 1]` of the arm `x → x + step·e_a` at which it meets the boundary.
fn cut_fraction(hole: &HoleProfile, x: &[f64], a: usize, step: f64, f0: f64) -> f64 {
    if hole.is_round() {
        // |x + s·step·e_a|² = R²
        let r = hole.base;
        let qa = step * step;
        let qb = 2.0 * x[a] * step;
        let qc = dot(x, x) - r * r;
        let disc = (qb * qb - 4.0 * qa * qc).max(0.0);
        // qc > 0 (outside) and the far end is inside, so the smaller root lies in (0, 1]
        let s = (2.0 * qc) / (-qb + disc.sqrt());
        return s.clamp(0.0, 1.0);
    }
    let at = |s: f64| {
        let mut y = x.to_vec();
        y[a] += s * step;
        hole.level(&y)
    };
    // Illinois regula falsi on [0, 1]
    let (mut lo, mut hi) = (0.0, 1.0);
    let (mut flo, mut fhi) = (f0, at(1.0));
    if fhi > 0.0 {
        return 1.0;
    }
    let mut side = 0;
    for _ in 0..100 {
        let s = (lo * fhi - hi * flo) / (fhi - flo);
        let fs = at(s);
        if fs.abs() < 1e-15 * step.abs() || hi - lo < 1e-14 {
            return s;
        }
        if fs > 0.0 {
            lo = s;
            flo = fs;
            if side == 1 {
                fhi *= 0.5;
            }
            side = 1;
        } else {
            hi = s;
            fhi = fs;
            if side == -1 {
                flo *= 0.5;
            }
            side = -1;
        }
    }
    0.5 * (lo + hi)
}

/// `(M + τ)^{-1}` for the hole-free operator `M`, diagonalised by FFT, DST-I or DCT-II per
/// axis.
struct FastPoisson {
    grid: Grid,
    tau: f64,
    eig: Vec<Vec<f64>>,
    plans: Vec<(Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>)>,
}

impl FastPoisson {
    fn new(grid: &Grid, tau: f64) -> Self {
        let mut planner = FftPlanner::new();
        let mut eig = Vec::new();
        let mut plans = Vec::new();
        for a in 0..grid.dim() {
            let h2 = grid.h[a] * grid.h[a];
            let m = grid.dims[a];
            let (len, e): (usize, Vec<f64>) = match grid.closure {
                Closure::Periodic => (m, (0..m).map(|k| 4.0 / h2 * (PI * k as f64 / m as f64).sin().powi(2)).collect()),
                Closure::Dirichlet => {
                    let nn = m + 1;
                    (2 * nn, (1..nn).map(|k| 4.0 / h2 * (PI * k as f64 / (2 * nn) as f64).sin().powi(2)).collect())
                }
                Closure::Neumann => {
                    (2 * m, (0..m).map(|k| 4.0 / h2 * (PI * k as f64 / (2 * m) as f64).sin().powi(2)).collect())
                }
            };
            eig.push(e);
            plans.push((planner.plan_fft_forward(len), planner.plan_fft_inverse(len)));
        }
        Self { grid: grid.clone(), tau, eig, plans }
    }

    fn apply(&self, r: &[f64], z: &mut [f64]) {
        let g = &self.grid;
        match g.closure {
            Closure::Periodic => {
                let mut buf: Vec<Complex64> = r.iter().map(|&x| Complex64::new(x, 0.0)).collect();
                for a in 0..g.dim() {
                    self.lines(a, |line: &mut [Complex64]| self.plans[a].0.process(line), &mut buf);
                }
                self.divide(&mut buf);
                for a in 0..g.dim() {
                    self.lines(a, |line: &mut [Complex64]| self.plans[a].1.process(line), &mut buf);
                }
                let scale = 1.0 / g.len() as f64;
                for (zi, b) in z.iter_mut().zip(&buf) {
                    *zi = b.re * scale;
                }
            }
            Closure::Dirichlet | Closure::Neumann => {
                let mut buf: Vec<Complex64> = r.iter().map(|&x| Complex64::new(x, 0.0)).collect();
                for a in 0..g.dim() {
                    let plan = &self.plans[a].0;
                    let closure = g.closure;
                    self.lines(a, |line: &mut [Complex64]| real_transform(closure, plan, line, true), &mut buf);
                }
                self.divide(&mut buf);
                for a in 0..g.dim() {
                    let plan = if g.closure == Closure::Dirichlet { &self.plans[a].0 } else { &self.plans[a].1 };
                    let closure = g.closure;
                    self.lines(a, |line: &mut [Complex64]| real_transform(closure, plan, line, false), &mut buf);
                }
                for (zi, b) in z.iter_mut().zip(&buf) {
                    *zi = b.re;
                }
            }
        }
    }

    fn divide(&self, buf: &mut [Complex64]) {
        let g = &self.grid;
        let mut c = vec![0usize; g.dim()];
        for b in buf.iter_mut() {
            let lam: f64 = c.iter().enumerate().map(|(a, &k)| self.eig[a][k]).sum::<f64>() + self.tau;
            *b = if lam > 0.0 { *b / lam } else { Complex64::new(0.0, 0.0) };
            increment(&mut c, &g.dims);
        }
    }

    fn lines(&self, a: usize, mut f: impl FnMut(&mut [Complex64]), buf: &mut [Complex64]) {
        let g = &self.grid;
        let m = g.dims[a];
        let s = g.strides[a];
        let mut line = vec![Complex64::new(0.0, 0.0); m];
        let blocks = g.len() / (m * s);
        for o in 0..blocks {
            for i in 0..s {
                let base = o * m * s + i;
                for (k, l) in line.iter_mut().enumerate() {
                    *l = buf[base + k * s];
                }
                f(&mut line);
                for (k, l) in line.iter().enumerate() {
                    buf[base + k * s] = *l;
                }
            }
        }
    }
}

/// Real-to-real transforms on the real parts of `line`, through a complex FFT of twice the
/// length. Dirichlet: DST-I (forward and inverse differ by `2/N`). Neumann: DCT-II forward,
/// scaled DCT-III inverse.
fn real_transform(closure: Closure, plan: &Arc<dyn Fft<f64>>, line: &mut [Complex64], forward: bool) {
    let m = line.len();
    let zero = Complex64::new(0.0, 0.0);
    match closure {
        Closure::Dirichlet => {
            let nn = m + 1;
            let mut y = vec![zero; 2 * nn];
            for j in 0..m {
                y[j + 1] = Complex64::new(line[j].re, 0.0);
                y[2 * nn - 1 - j] = Complex64::new(-line[j].re, 0.0);
            }
            plan.process(&mut y);
            let scale = if forward { 1.0 } else { 2.0 / nn as f64 };
            for k in 0..m {
                line[k] = Complex64::new(-y[k + 1].im * 0.5 * scale, 0.0);
            }
        }
        Closure::Neumann => {
            let mut y = vec![zero; 2 * m];
            if forward {
                for j in 0..m {
                    y[j] = Complex64::new(line[j].re, 0.0);
                    y[2 * m - 1 - j] = Complex64::new(line[j].re, 0.0);
                }
                plan.process(&mut y);
                for k in 0..m {
                    let w = Complex64::from_polar(1.0, -PI * k as f64 / (2 * m) as f64);
                    line[k] = Complex64::new((y[k] * w).re * 0.5, 0.0);
                }
            } else {
                for k in 0..m {
                    let wk = if k == 0 { 1.0 } else { 2.0 } / m as f64;
                    y[k] = Complex64::from_polar(line[k].re * wk, PI * k as f64 / (2 * m) as f64);
                }
                plan.process(&mut y);
                for j in 0..m {
                    line[j] = Complex64::new(y[j].re, 0.0);
                }
            }
        }
        Closure::Periodic => unreachable!("periodic lines use the complex FFT directly"),
    }
}

#[derive(Debug)]
struct CgIndefinite;

/// Preconditioned CG for `(A - σ)x = b`, warm-started from `x`.
fn pcg(
    op: &Operator,
    pre: &FastPoisson,
    sigma: f64,
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    maxit: usize,
) -> std::result::Result<(usize, f64), CgIndefinite> {
    let len = b.len();
    let mut r = vec![0.0; len];
    op.apply(x, sigma, &mut r);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
    let bn = norm(b).max(f64::MIN_POSITIVE);
    let mut z = vec![0.0; len];
    pre.apply(&r, &mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; len];
    let mut rel = norm(&r) / bn;
    for it in 0..maxit {
        if rel <= tol {
            return Ok((it, rel));
        }
        op.apply(&p, sigma, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            return Err(CgIndefinite);
        }
        let alpha = rz / pap;
        for i in 0..len {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        rel = norm(&r) / bn;
        pre.apply(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..len {
            p[i] = z[i] + beta * p[i];
        }
    }
    Ok((maxit, rel))
}

/// First eigenpair on the perforated grid.
#[derive(Debug, Clone)]
pub struct EigenResult {
    pub lambda: f64,
    /// Grid function (hole nodes zero), `Σ u² h^n = 1`, positive on active nodes.
    pub u: Vec<f64>,
    pub grid: Grid,
    pub active: Vec<bool>,
    /// Grid spacing (first axis).
    pub h: f64,
    /// `‖(-Δ_h - λ)u‖ / (λ‖u‖)`; absolute when `λ = 0`.
    pub residual: f64,
    pub outer_iterations: usize,
    pub cg_iterations: usize,
    /// Flux trace `∂_ν u` on the hole boundary, `None` without a hole or when the fit failed.
    pub flux: Option<SphereFn<f64>>,
}

impl EigenResult {
    /// `Σ u² h^n`.
    pub fn norm2(&self) -> f64 {
        self.u.iter().map(|x| x * x).sum::<f64>() * self.grid.cell()
    }
}

fn check_hole(model: &ModelManifold, grid: &Grid, hole: &HoleShape, prof: &HoleProfile, cfg: &SolverConfig) -> Result<()> {
    if hole.dim() != grid.dim() {
        return Err(Error::Dimension { expected: grid.dim(), got: hole.dim() });
    }
    if !(hole.eps > 0.0) {
        return Err(Error::Invalid(format!("hole radius must be positive, got {}", hole.eps)));
    }
    let hmax = grid.h.iter().cloned().fold(0.0, f64::max);
    if 2.0 * hole.eps / hmax < cfg.min_nodes_across {
        return Err(Error::Invalid(format!(
            "grid does not resolve the hole: 2ε/h = {:.3} < {}",
            2.0 * hole.eps / hmax,
            cfg.min_nodes_across
        )));
    }
    if prof.min_radius() <= 0.0 {
        return Err(Error::Invalid("hole radius function is not positive".into()));
    }
    if model.boundary_distance(&hole.center) <= prof.max_radius() + hmax {
        return Err(Error::Invalid("hole touches the outer boundary".into()));
    }
    let half_min = grid.sides.iter().cloned().fold(f64::INFINITY, f64::min) / 2.0;
    if prof.max_radius() + 2.0 * hmax >= half_min {
        return Err(Error::Invalid("hole does not fit in the fundamental domain".into()));
    }
    Ok(())
}

/// Lowest eigenpair of `-Δ` on `M ∖ hole` with grid spacing `h`.
pub fn first_eigen(model: &ModelManifold, hole: Option<&HoleShape>, h: f64, cfg: &SolverConfig) -> Result<EigenResult> {
    first_eigen_from(model, hole, h, cfg, None)
}

/// [`first_eigen`] started from a previous eigenvector on the same grid (for a nearby hole).
pub fn first_eigen_from(
    model: &ModelManifold,
    hole: Option<&HoleShape>,
    h: f64,
    cfg: &SolverConfig,
    start: Option<&EigenResult>,
) -> Result<EigenResult> {
    let grid = Grid::new(model, h)?;
    let mut op = Operator::new(grid.clone());
    let prof = match hole {
        Some(hl) => {
            let prof = hl.profile()?;
            check_hole(model, &grid, hl, &prof, cfg)?;
            op.perforate(&prof, &hl.center, cfg.s_min);
            Some(prof)
        }
        None => None,
    };
    let len = grid.len();
    if hole.is_none() && grid.closure != Closure::Dirichlet {
        let c = 1.0 / (len as f64 * grid.cell()).sqrt();
        return Ok(EigenResult {
            lambda: 0.0,
            u: vec![c; len],
            h: grid.h[0],
            active: op.active.clone(),
            grid,
            residual: 0.0,
            outer_iterations: 0,
            cg_iterations: 0,
            flux: None,
        });
    }
    let tau = if grid.closure == Closure::Dirichlet { 0.0 } else { 1.0 / grid.sides.iter().map(|l| l * l).sum::<f64>() };
    let pre = FastPoisson::new(&grid, tau);

    let warm = start.filter(|s| s.grid.dims == grid.dims && s.u.len() == len && s.lambda > 0.0);
    let mut x: Vec<f64> = match warm {
        Some(s) => op.active.iter().zip(&s.u).map(|(&a, &v)| if a { v } else { 0.0 }).collect(),
        None => op.active.iter().map(|&a| if a { 1.0 } else { 0.0 }).collect(),
    };
    let xn = norm(&x);
    x.iter_mut().for_each(|v| *v /= xn);
    let mut ax = vec![0.0; len];
    op.apply(&x, 0.0, &mut ax);
    let mut theta = dot(&x, &ax);
    let mut sigma = match warm {
        Some(s) => cfg.shift * s.lambda.min(theta),
        None => 0.0,
    };
    let mut cg_total = 0;
    let mut settled = 0;
    let mut outer = 0;
    let mut y = vec![0.0; len];
    while outer < cfg.max_outer {
        outer += 1;
        for (yi, xi) in y.iter_mut().zip(&x) {
            *yi = xi / (theta - sigma);
        }
        match pcg(&op, &pre, sigma, &x, &mut y, cfg.cg_tol, cfg.max_cg) {
            Ok((its, _)) => cg_total += its,
            Err(CgIndefinite) => {
                sigma = 0.0;
                continue;
            }
        }
        let yn = norm(&y);
        for (xi, yi) in x.iter_mut().zip(&y) {
            *xi = yi / yn;
        }
        op.apply(&x, 0.0, &mut ax);
        let theta_new = dot(&x, &ax);
        let change = (theta_new - theta).abs() / theta_new.abs().max(f64::MIN_POSITIVE);
        theta = theta_new;
        if change <= cfg.tol {
            settled += 1;
            if settled >= 2 {
                break;
            }
        } else {
            settled = 0;
        }
        if change < 0.05 && cfg.shift * theta > sigma {
            sigma = cfg.shift * theta;
        }
    }
    let res_vec: Vec<f64> = ax.iter().zip(&x).map(|(a, b)| a - theta * b).collect();
    let residual = norm(&res_vec) / theta.abs().max(f64::MIN_POSITIVE);
    if settled < 2 {
        return Err(Error::NotConverged { what: "inverse iteration", iterations: outer, residual });
    }
    let sgn = if x.iter().sum::<f64>() < 0.0 { -1.0 } else { 1.0 };
    let scale = sgn / grid.cell().sqrt();
    let u: Vec<f64> = x.iter().map(|v| v * scale).collect();
    if u.iter().zip(&op.active).any(|(v, &a)| a && *v <= 0.0) {
        return Err(Error::NotConverged { what: "eigenvector positivity", iterations: outer, residual });
    }
    let mut res = EigenResult {
        lambda: theta,
        u,
        h: grid.h[0],
        active: op.active.clone(),
        grid,
        residual,
        outer_iterations: outer,
        cg_iterations: cg_total,
        flux: None,
    };
    if let (Some(hl), Some(_)) = (hole, prof) {
        res.flux = flux_trace_with(&res, hl, cfg).ok();
    }
    Ok(res)
}

/// `fine + (fine - coarse)/(2^order - 1)` for spacings `h` and `2h`.
pub fn richardson(fine: f64, coarse: f64, order: f64) -> f64 {
    fine + (fine - coarse) / (2f64.powf(order) - 1.0)
}

/// Angular basis used by the flux fit: Fourier modes for `n = 2`, restricted monomials
/// `x^α` (`|α| ≤ J`, `α_3 ≤ 1`, spanning the harmonics of degree `≤ J`) for `n = 3`.
fn angular_basis(n: usize, jmax: usize, theta: &[f64]) -> Vec<f64> {
    if n == 2 {
        let phi = theta[1].atan2(theta[0]);
        let mut out = vec![1.0];
        for j in 1..=jmax {
            let (s, c) = (j as f64 * phi).sin_cos();
            out.push(c);
            out.push(s);
        }
        out
    } else {
        let mut out = Vec::new();
        for d in 0..=jmax as u32 {
            for alpha in homogeneous_exponents(n, d).into_iter().filter(|a| a[n - 1] <= 1) {
                out.push(alpha.iter().zip(theta).fold(1.0, |acc, (&e, &x)| acc * x.powi(e as i32)));
            }
        }
        out
    }
}

/// Least-squares model `u ≈ Σ_b B_b(θ)(a_b ρ + c_b ρ² + d_b ρ³)` of the discrete
/// eigenfunction near the hole, `ρ = r - R(θ)`.
#[derive(Debug, Clone)]
pub struct FluxFit {
    n: usize,
    jmax: usize,
    slope: Vec<f64>,
    profile: HoleProfile,
}

impl FluxFit {
    /// `∂_ν u` in direction `θ`.
    pub fn eval(&self, theta: &[f64]) -> f64 {
        let b = angular_basis(self.n, self.jmax, theta);
        dot(&b, &self.slope) * self.profile.slope_factor(theta)
    }

    pub fn degree(&self) -> usize {
        self.jmax
    }

    pub fn profile(&self) -> &HoleProfile {
        &self.profile
    }
}

/// Fits the near-boundary behaviour of `res.u`.
pub fn flux_fit(res: &EigenResult, hole: &HoleShape, cfg: &SolverConfig) -> Result<FluxFit> {
    let g = &res.grid;
    let n = g.dim();
    let prof = hole.profile()?;
    let h = g.h.iter().cloned().fold(0.0, f64::max);
    let width = cfg.annulus * h;
    let resolvable = (PI * prof.min_radius() / (3.0 * h)).floor() as usize;
    let cap = if n == 2 { cfg.flux_lmax } else { cfg.flux_lmax.min(8) };
    let mut jmax = cap.min(resolvable);
    let mut rows: Vec<(Vec<f64>, f64, f64)> = Vec::new();
    g.for_each_near(&hole.center, prof.max_radius() + width + h, |i| {
        if !res.active[i] {
            return;
        }
        let d = g.displacement(&g.point(i), &hole.center);
        let r = norm(&d);
        let theta: Vec<f64> = d.iter().map(|x| x / r).collect();
        let rho = r - prof.radius(&theta);
        if rho > 0.0 && rho <= width {
            rows.push((theta, rho, res.u[i]));
        }
    });
    let cols = |j: usize| 3 * angular_basis(n, j, &vec![1.0; n]).len();
    while jmax > 0 && rows.len() < 2 * cols(jmax) {
        jmax -= 1;
    }
    if jmax == 0 || rows.len() < 2 * cols(jmax) {
        return Err(Error::Invalid(format!(
            "insufficient grid resolution near the hole: {} samples in the fit annulus",
            rows.len()
        )));
    }
    let nb = cols(jmax) / 3;
    let mut a = DMatrix::<f64>::zeros(rows.len(), 3 * nb);
    let mut b = DVector::<f64>::zeros(rows.len());
    let hs = width;
    for (k, (theta, rho, u)) in rows.iter().enumerate() {
        let basis = angular_basis(n, jmax, theta);
        let t = rho / hs;
        for (m, bm) in basis.iter().enumerate() {
            a[(k, m)] = bm * t;
            a[(k, nb + m)] = bm * t * t;
            a[(k, 2 * nb + m)] = bm * t * t * t;
        }
        b[k] = *u;
    }
    let sol = a
        .svd(true, true)
        .solve(&b, 1e-12)
        .map_err(|e| Error::Invalid(format!("flux least squares failed: {e}")))?;
    let slope = (0..nb).map(|m| sol[m] / hs).collect();
    Ok(FluxFit { n, jmax, slope, profile: prof })
}

/// Flux trace `g(∇u, ν)` (normal pointing away from the hole) sampled on the degree-`L`
/// node set, `L = cfg.flux_lmax`.
pub fn flux_trace_with(res: &EigenResult, hole: &HoleShape, cfg: &SolverConfig) -> Result<SphereFn<f64>> {
    let fit = flux_fit(res, hole, cfg)?;
    let n = res.grid.dim();
    let grid = SphereGrid::<f64>::shared(n, cfg.flux_lmax.max(fit.jmax))?;
    Ok(SphereFn::from_fn(grid, |x| fit.eval(x)))
}

/// [`flux_trace_with`] under the default configuration.
pub fn flux_trace(res: &EigenResult, hole: &HoleShape) -> Result<SphereFn<f64>> {
    flux_trace_with(res, hole, &SolverConfig::default())
}

fn eval_any(f: &SphereFn<f64>, x: &[f64]) -> Result<f64> {
    match f.coeffs() {
        Some(_) => f.eval(x),
        None => f.decompose(f.grid().lmax())?.eval(x),
    }
}

/// `∫ (∂_ν u)² ξ dσ` over the hole boundary, where `ξ` is the normal speed pointing away
/// from the hole.
pub fn hadamard_integral(fit: &FluxFit, xi: &SphereFn<f64>) -> Result<f64> {
    let n = fit.n;
    let xi = match xi.coeffs() {
        Some(_) => xi.clone(),
        None => xi.decompose(xi.grid().lmax())?,
    };
    let lq = if n == 2 { 4 * fit.jmax.max(xi.cutoff().unwrap_or(0)) + 8 } else { 24 };
    let q = SphereGrid::<f64>::shared(n, lq)?;
    let mut s = 0.0;
    for k in 0..q.len() {
        let th = q.point(k);
        let f = fit.eval(th);
        let r = fit.profile.radius(th);
        s += q.weights()[k] * f * f * xi.eval(th)? * r.powi(n as i32 - 1) * fit.profile.slope_factor(th);
    }
    Ok(s)
}

/// Hadamard shape derivative and the eigenpair it was computed from.
#[derive(Debug, Clone)]
pub struct ShapeDerivative {
    pub derivative: f64,
    pub lambda: f64,
    pub result: EigenResult,
}

/// `dλ/dt` for the boundary moving with normal speed `xi` (positive away from the hole).
pub fn shape_derivative(
    model: &ModelManifold,
    hole: &HoleShape,
    xi: &SphereFn<f64>,
    h: f64,
    cfg: &SolverConfig,
) -> Result<ShapeDerivative> {
    let res = first_eigen(model, Some(hole), h, cfg)?;
    let fit = flux_fit(&res, hole, cfg)?;
    let derivative = hadamard_integral(&fit, xi)?;
    Ok(ShapeDerivative { derivative, lambda: res.lambda, result: res })
}

/// Hole whose radius function is `R + t·ξ·|∇ρ|`: the boundary moved a normal distance `tξ`.
pub fn displace_normal(hole: &HoleShape, xi: &SphereFn<f64>, t: f64) -> Result<HoleShape> {
    let prof = hole.profile()?;
    let grid = match &hole.vbar {
        Some(v) if v.grid().lmax() >= xi.grid().lmax() => Arc::clone(v.grid()),
        _ => Arc::clone(xi.grid()),
    };
    let samples: Vec<f64> = (0..grid.len())
        .map(|k| {
            let th = grid.point(k);
            let r = prof.radius(th) + t * eval_any(xi, th).unwrap_or(0.0) * prof.slope_factor(th);
            r / hole.eps - 1.0
        })
        .collect();
    from_v_samples(hole, grid, samples)
}

fn from_v_samples(hole: &HoleShape, grid: Arc<SphereGrid<f64>>, samples: Vec<f64>) -> Result<HoleShape> {
    let v = SphereFn::from_samples(Arc::clone(&grid), samples)?.decompose(grid.lmax())?;
    let c0 = v.coeffs().expect("decomposed")[0][0];
    let v0 = c0 * grid.basis(0)[0][0];
    let vbar = v.decompose_mean_zero(grid.lmax())?;
    HoleShape::new(&hole.center, hole.eps, v0, vbar)
}

/// Hole obtained by moving every boundary point `x` to `x + t·V(x)` (`V` in model
/// coordinates relative to the centre) and refitting the radial graph.
pub fn deform_hole(hole: &HoleShape, velocity: &dyn Fn(&[f64]) -> Vec<f64>, t: f64, lmax: usize) -> Result<HoleShape> {
    let n = hole.dim();
    let prof = hole.profile()?;
    let dense = SphereGrid::<f64>::shared(n, 2 * lmax + 2)?;
    let mut pts = Vec::with_capacity(dense.len());
    for k in 0..dense.len() {
        let th = dense.point(k);
        let r = prof.radius(th);
        let x: Vec<f64> = th.iter().map(|c| c * r).collect();
        let v = velocity(&x);
        let y: Vec<f64> = x.iter().zip(&v).map(|(a, b)| a + t * b).collect();
        let ry = norm(&y);
        pts.push((y.iter().map(|c| c / ry).collect::<Vec<f64>>(), ry));
    }
    let nb = angular_basis(n, lmax, &vec![1.0; n]).len();
    let mut a = DMatrix::<f64>::zeros(pts.len(), nb);
    let mut b = DVector::<f64>::zeros(pts.len());
    for (k, (th, r)) in pts.iter().enumerate() {
        for (m, bm) in angular_basis(n, lmax, th).into_iter().enumerate() {
            a[(k, m)] = bm;
        }
        b[k] = *r;
    }
    let sol = a.svd(true, true).solve(&b, 1e-13).map_err(|e| Error::Invalid(format!("graph refit failed: {e}")))?;
    let grid = SphereGrid::<f64>::shared(n, lmax)?;
    let samples = (0..grid.len())
        .map(|k| dot(&angular_basis(n, lmax, grid.point(k)), sol.as_slice()) / hole.eps - 1.0)
        .collect();
    from_v_samples(hole, grid, samples)
}

/// Central difference `(λ(t) - λ(-t)) / 2t` under the normal displacement `tξ`.
pub fn fd_shape_derivative(
    model: &ModelManifold,
    hole: &HoleShape,
    xi: &SphereFn<f64>,
    h: f64,
    t: f64,
    cfg: &SolverConfig,
) -> Result<f64> {
    let plus = first_eigen(model, Some(&displace_normal(hole, xi, t)?), h, cfg)?;
    let minus = first_eigen(model, Some(&displace_normal(hole, xi, -t)?), h, cfg)?;
    Ok((plus.lambda - minus.lambda) / (2.0 * t))
}

/// `v₀` such that the geodesic graph `{exp_p(ε(1 + v₀ + v̄(θ))θ)}` encloses `ε^n Vol(B̊₁)`.
pub fn volume_normalize(model: &ModelManifold, p: &[f64], eps: f64, vbar: Option<&SphereFn<f64>>) -> Result<f64> {
    let n = model.dim();
    if p.len() != n {
        return Err(Error::Dimension { expected: n, got: p.len() });
    }
    if !(2..=3).contains(&n) {
        return Err(Error::Unsupported(format!("volume quadrature needs n in {{2, 3}}, got {n}")));
    }
    let curv = model.curvature();
    let flat = model.is_flat();
    let cut = vbar.and_then(|v| v.cutoff()).unwrap_or(0);
    let lq = if n == 2 { (3 * cut + 8).max(16) } else { (2 * cut + 6).max(10) };
    let q = SphereGrid::<f64>::shared(n, lq)?;
    let vb: Vec<f64> = match vbar {
        None => vec![0.0; q.len()],
        Some(v) => (0..q.len()).map(|k| eval_any(v, q.point(k))).collect::<Result<_>>()?,
    };
    let (tq, wq) = gauss_legendre::<f64>(12);
    let sqrt_g = |x: &[f64]| -> f64 {
        if flat {
            1.0
        } else {
            (0.5 * inverse_logdet_expansion(&curv, x).1).exp()
        }
    };
    let volume = |v0: f64| -> (f64, f64) {
        let (mut vol, mut dvol) = (0.0, 0.0);
        for k in 0..q.len() {
            let th = q.point(k);
            let r = eps * (1.0 + v0 + vb[k]);
            let mut radial = 0.0;
            for (t, w) in tq.iter().zip(&wq) {
                let s = 0.5 * (t + 1.0) * r;
                let x: Vec<f64> = th.iter().map(|c| c * s).collect();
                radial += 0.5 * r * w * sqrt_g(&x) * s.powi(n as i32 - 1);
            }
            let xb: Vec<f64> = th.iter().map(|c| c * r).collect();
            vol += q.weights()[k] * radial;
            dvol += q.weights()[k] * eps * sqrt_g(&xb) * r.powi(n as i32 - 1);
        }
        (vol, dvol)
    };
    let target = eps.powi(n as i32) * ball_volume::<f64>(n);
    let tol = 1e-12 * eps.powi(n as i32);
    let mut v0 = 0.0;
    let (mut vol, mut dvol) = volume(v0);
    let mut it = 0;
    while (vol - target).abs() > tol {
        if it == 50 || !(dvol > 0.0) {
            return Err(Error::NotConverged {
                what: "volume normalisation",
                iterations: it,
                residual: (vol - target).abs() / eps.powi(n as i32),
            });
        }
        v0 -= (vol - target) / dvol;
        (vol, dvol) = volume(v0);
        it += 1;
    }
    Ok(v0)
}

/// Fitted small-hole law.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct AsymptoticLaw {
    pub n: usize,
    /// `μ̂`.
    pub mu_hat: f64,
    /// `n = 2`: the constant `C₀` in `λ - λ₀ = μ̂/(log ε - C₀)`.
    pub c0: Option<f64>,
    /// `n ≥ 3`: the next-order coefficient `k` in `(λ - λ₀)/ε^{n-2} = μ̂ + kε`.
    pub next: Option<f64>,
    /// Fitted intercept replacing `λ₀` in [`fit_law_with_intercept`].
    pub intercept: Option<f64>,
    /// RMS residual of `λ`.
    pub rms: f64,
}

/// Fits `λ - λ₀ = μ̂/(log ε - C₀)` (`n = 2`) or `(λ - λ₀)/ε^{n-2} = μ̂ + kε` (`n ≥ 3`)
/// to `(ε, λ)` samples.
pub fn fit_law(n: usize, lambda0: f64, samples: &[(f64, f64)]) -> Result<AsymptoticLaw> {
    if samples.len() < 4 {
        return Err(Error::TooFewSamples { need: 4, got: samples.len() });
    }
    if n == 2 {
        let pts: Vec<(f64, f64)> = samples.iter().map(|(e, l)| (e.ln(), 1.0 / (l - lambda0))).collect();
        let (s, c) = line_fit(&pts);
        let (mut mu, mut c0) = (1.0 / s, -c / s);
        // Gauss–Newton on the λ residuals
        for _ in 0..50 {
            let mut jtj = [[0.0; 2]; 2];
            let mut jtr = [0.0; 2];
            for (e, l) in samples {
                let den = e.ln() - c0;
                let r = l - lambda0 - mu / den;
                let j = [1.0 / den, mu / (den * den)];
                for a in 0..2 {
                    jtr[a] += j[a] * r;
                    for b in 0..2 {
                        jtj[a][b] += j[a] * j[b];
                    }
                }
            }
            let det = jtj[0][0] * jtj[1][1] - jtj[0][1] * jtj[1][0];
            if det.abs() < 1e-300 {
                break;
            }
            let dmu = (jtj[1][1] * jtr[0] - jtj[0][1] * jtr[1]) / det;
            let dc = (jtj[0][0] * jtr[1] - jtj[1][0] * jtr[0]) / det;
            mu += dmu;
            c0 += dc;
            if dmu.abs() < 1e-14 * mu.abs() && dc.abs() < 1e-14 * (1.0 + c0.abs()) {
                break;
            }
        }
        let rms = rms(samples.iter().map(|(e, l)| l - lambda0 - mu / (e.ln() - c0)));
        Ok(AsymptoticLaw { n, mu_hat: mu, c0: Some(c0), next: None, intercept: None, rms })
    } else {
        let k = n as i32 - 2;
        let pts: Vec<(f64, f64)> = samples.iter().map(|(e, l)| (*e, (l - lambda0) / e.powi(k))).collect();
        let (s, c) = line_fit(&pts);
        let rms = rms(samples.iter().map(|(e, l)| l - lambda0 - e.powi(k) * (c + s * e)));
        Ok(AsymptoticLaw { n, mu_hat: c, c0: None, next: Some(s), intercept: None, rms })
    }
}

/// `n ≥ 3`: fits `λ = c + μ̂ε^{n-2} + kε^{n-1}` with a free intercept `c` absorbing the grid
/// offset of `λ₀`. Three samples determine the law exactly.
pub fn fit_law_with_intercept(n: usize, samples: &[(f64, f64)]) -> Result<AsymptoticLaw> {
    if n < 3 {
        return Err(Error::Unsupported("the intercept law is for n >= 3".into()));
    }
    if samples.len() < 3 {
        return Err(Error::TooFewSamples { need: 3, got: samples.len() });
    }
    let k = n as i32 - 2;
    let mut a = DMatrix::<f64>::zeros(samples.len(), 3);
    let mut b = DVector::<f64>::zeros(samples.len());
    for (i, (e, l)) in samples.iter().enumerate() {
        a[(i, 0)] = 1.0;
        a[(i, 1)] = e.powi(k);
        a[(i, 2)] = e.powi(k + 1);
        b[i] = *l;
    }
    let sol = a.svd(true, true).solve(&b, 1e-14).map_err(|e| Error::Invalid(format!("law fit failed: {e}")))?;
    let rms = rms(samples.iter().map(|(e, l)| l - sol[0] - sol[1] * e.powi(k) - sol[2] * e.powi(k + 1)));
    Ok(AsymptoticLaw { n, mu_hat: sol[1], c0: None, next: Some(sol[2]), intercept: Some(sol[0]), rms })
}

fn line_fit(pts: &[(f64, f64)]) -> (f64, f64) {
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let s = sxy / sxx;
    (s, my - s * mx)
}

fn rms(it: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = it.collect();
    (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt()
}

/// One row of an ε sweep.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct SweepRow {
    pub eps: f64,
    pub h: f64,
    pub lambda: f64,
    pub residual: f64,
}

/// Solves round holes of radius `ε` at `p` for every `ε`, then fits the law. With
/// `richardson_grids`, each `λ` is extrapolated from spacings `h` and `2h`.
pub fn asymptotic_fit(
    model: &ModelManifold,
    p: &[f64],
    eps: &[f64],
    h: f64,
    richardson_grids: bool,
    cfg: &SolverConfig,
) -> Result<(Vec<SweepRow>, AsymptoticLaw)> {
    if eps.len() < 4 {
        return Err(Error::TooFewSamples { need: 4, got: eps.len() });
    }
    let rows = sweep(model, p, eps, h, richardson_grids, cfg)?;
    let samples: Vec<(f64, f64)> = rows.iter().map(|r| (r.eps, r.lambda)).collect();
    let law = fit_law(model.dim(), model.lambda0(), &samples)?;
    Ok((rows, law))
}

/// `λ(ε)` for round holes at `p`.
pub fn sweep(
    model: &ModelManifold,
    p: &[f64],
    eps: &[f64],
    h: f64,
    richardson_grids: bool,
    cfg: &SolverConfig,
) -> Result<Vec<SweepRow>> {
    eps.iter()
        .map(|&e| {
            let hole = HoleShape::round(p, e);
            let fine = first_eigen(model, Some(&hole), h, cfg)?;
            let lambda = if richardson_grids {
                let coarse = first_eigen(model, Some(&hole), 2.0 * h, &cfg.clone().with_min_nodes(cfg.min_nodes_across / 2.0))?;
                richardson(fine.lambda, coarse.lambda, 2.0)
            } else {
                fine.lambda
            };
            Ok(SweepRow { eps: e, h, lambda, residual: fine.residual })
        })
        .collect()
}
