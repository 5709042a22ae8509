//! The flux operator `F`, the modified problem `F(p, ε, v̄) + ġ(a, ·) = 0`, relocation of the
//! hole centre, the linearisation gap `L_ε - H` and the extremality certificate.
//!
//! `F` is built from the discrete eigenfunction: the flux trace on the hole boundary is
//! divided by its surface mean and multiplied by `∂_rφ₁(1)`, so that it is expressed in the
//! units in which the linearisation at `ε = 0` is the diagonal operator `H`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::dtn::{apply_h_multiplier, invert_h, RadialProfile};
use crate::eigensolve::{
    first_eigen, first_eigen_from, flux_fit, hadamard_integral, volume_normalize, EigenResult, HoleShape, SolverConfig,
};
use crate::geometry::ModelManifold;
use crate::spherical::{random_band_limited, sphere_volume, SphereFn, SphereGrid};
use crate::{Error, Result};

/// Knobs of the extremal solver.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtremalConfig {
    pub solver: SolverConfig,
    /// Target for `sup |F + ġ(a, ·)|`.
    pub tol: f64,
    pub max_iter: usize,
    /// Step halvings allowed per Newton step.
    pub max_halvings: usize,
    /// Degree of `v̄` and `F`; `None` is 16 for `n = 2` and 8 for `n = 3`.
    pub lmax: Option<usize>,
    /// Target for `|a|` in [`relocate`].
    pub relocate_tol: f64,
    pub relocate_max: usize,
    /// The Newton loop stops once an accepted step reduces the residual by less than this
    /// fraction (the discretisation floor has been reached).
    pub stall: f64,
}

impl Default for ExtremalConfig {
    fn default() -> Self {
        Self {
            solver: SolverConfig::default(),
            tol: 1e-8,
            max_iter: 20,
            max_halvings: 8,
            lmax: None,
            relocate_tol: 1e-8,
            relocate_max: 10,
            stall: 0.01,
        }
    }
}

impl ExtremalConfig {
    fn lmax(&self, n: usize) -> usize {
        self.lmax.unwrap_or(if n == 2 { 16 } else { 8 })
    }
}

/// One evaluation of `F`.
#[derive(Debug, Clone)]
pub struct FluxResidual {
    /// `F` sampled and decomposed on the degree-`L` grid.
    pub f: SphereFn<f64>,
    /// Raw flux trace `g(∇u, ν)` on the same nodes.
    pub flux: SphereFn<f64>,
    /// Surface mean of the flux.
    pub mean: f64,
    /// Surface standard deviation of the flux divided by `|mean|`.
    pub relative_std: f64,
    pub v0: f64,
    pub hole: HoleShape,
    pub eigen: EigenResult,
}

impl FluxResidual {
    pub fn lambda(&self) -> f64 {
        self.eigen.lambda
    }
}

/// `ġ(a, θ) = ⟨a, θ⟩` on `grid`.
pub fn g_dot(a: &[f64], grid: &Arc<SphereGrid<f64>>) -> SphereFn<f64> {
    SphereFn::from_fn(Arc::clone(grid), |th| th.iter().zip(a).map(|(x, y)| x * y).sum())
}

/// The vector `a` with `Π_{V₁} f = ġ(a, ·)`.
pub fn v1_vector(f: &SphereFn<f64>) -> Vec<f64> {
    let g = f.grid();
    let n = g.dim();
    let scale = n as f64 / sphere_volume::<f64>(n);
    let mut a = vec![0.0; n];
    for k in 0..g.len() {
        let w = g.weights()[k] * f.samples()[k];
        for (ai, th) in a.iter_mut().zip(g.point(k)) {
            *ai += scale * w * th;
        }
    }
    a
}

fn profile_for(model: &ModelManifold, p: &[f64]) -> RadialProfile<f64> {
    RadialProfile::new(model.dim(), model.phi0(p))
}

fn hole_for(p: &[f64], eps: f64, v0: f64, vbar: Option<&SphereFn<f64>>) -> Result<HoleShape> {
    match vbar {
        Some(v) if v.max_abs() > 0.0 => HoleShape::new(p, eps, v0, v.clone()),
        _ => Ok(HoleShape { center: p.to_vec(), eps, v0, vbar: None }),
    }
}

/// `F(p, ε, v̄)`: the normalised flux trace minus its surface mean, on the degree-`L` grid.
pub fn f_op(
    model: &ModelManifold,
    p: &[f64],
    eps: f64,
    vbar: Option<&SphereFn<f64>>,
    h: f64,
    cfg: &ExtremalConfig,
) -> Result<FluxResidual> {
    f_op_from(model, p, eps, vbar, h, cfg, None)
}

/// [`f_op`] with the eigensolver started from a previous eigenvector on the same grid.
pub fn f_op_from(
    model: &ModelManifold,
    p: &[f64],
    eps: f64,
    vbar: Option<&SphereFn<f64>>,
    h: f64,
    cfg: &ExtremalConfig,
    start: Option<&EigenResult>,
) -> Result<FluxResidual> {
    let n = model.dim();
    let v0 = volume_normalize(model, p, eps, vbar)?;
    let hole = hole_for(p, eps, v0, vbar)?;
    let eigen = first_eigen_from(model, Some(&hole), h, &cfg.solver, start)?;
    let fit = flux_fit(&eigen, &hole, &cfg.solver)?;
    let l = cfg.lmax(n);
    let grid = SphereGrid::<f64>::shared(n, l)?;
    let prof = fit.profile();
    let mut flux = Vec::with_capacity(grid.len());
    let mut area = Vec::with_capacity(grid.len());
    for k in 0..grid.len() {
        let th = grid.point(k);
        flux.push(fit.eval(th));
        area.push(grid.weights()[k] * prof.radius(th).powi(n as i32 - 1) * prof.slope_factor(th));
    }
    let total: f64 = area.iter().sum();
    let mean = flux.iter().zip(&area).map(|(f, w)| f * w).sum::<f64>() / total;
    let var = flux.iter().zip(&area).map(|(f, w)| w * (f - mean).powi(2)).sum::<f64>() / total;
    let scale = profile_for(model, p).dr(1.0);
    let f = SphereFn::from_samples(Arc::clone(&grid), flux.iter().map(|v| scale * (v / mean - 1.0)).collect())?
        .decompose(l)?;
    let flux = SphereFn::from_samples(grid, flux)?;
    Ok(FluxResidual { f, flux, mean, relative_std: var.sqrt() / mean.abs(), v0, hole, eigen })
}

/// Result of the modified Newton iteration at a fixed centre.
#[derive(Debug, Clone)]
pub struct ModifiedSolution {
    pub vbar: SphereFn<f64>,
    pub a: Vec<f64>,
    /// `sup |F + ġ(a, ·)|` after every accepted step, starting with the initial state.
    pub history: Vec<f64>,
    pub converged: bool,
    /// `F` at the final state.
    pub state: FluxResidual,
}

impl ModifiedSolution {
    pub fn residual(&self) -> f64 {
        *self.history.last().expect("history starts with the initial residual")
    }
}

fn combined(fr: &FluxResidual, a: &[f64]) -> Result<SphereFn<f64>> {
    let l = fr.f.cutoff().unwrap_or(fr.f.grid().lmax());
    fr.f.axpy(1.0, &g_dot(a, fr.f.grid())).decompose(l)
}

/// Solves `F(p, ε, v̄) + ġ(a, ·) = 0` with the linearisation frozen at `H`, starting from `v̄ = 0`,
/// `a = 0`.
pub fn solve_modified(model: &ModelManifold, p: &[f64], eps: f64, h: f64, cfg: &ExtremalConfig) -> Result<ModifiedSolution> {
    solve_modified_from(model, p, eps, h, cfg, None)
}

/// [`solve_modified`] from the `(v̄, a)` and eigenvector of a previous solve (possibly at
/// another centre).
pub fn solve_modified_from(
    model: &ModelManifold,
    p: &[f64],
    eps: f64,
    h: f64,
    cfg: &ExtremalConfig,
    start: Option<&ModifiedSolution>,
) -> Result<ModifiedSolution> {
    let n = model.dim();
    let l = cfg.lmax(n);
    let grid = SphereGrid::<f64>::shared(n, l)?;
    let profile = profile_for(model, p);
    let (mut vbar, mut a) = match start {
        Some(s) => (s.vbar.clone(), s.a.clone()),
        None => (SphereFn::zero(Arc::clone(&grid), l), vec![0.0; n]),
    };
    let mut state = f_op_from(model, p, eps, Some(&vbar), h, cfg, start.map(|s| &s.state.eigen))?;
    let mut res = combined(&state, &a)?;
    let mut history = vec![res.max_abs()];
    let mut converged = false;
    for _ in 0..cfg.max_iter {
        if *history.last().unwrap() <= cfg.tol {
            converged = true;
            break;
        }
        let da = v1_vector(&res);
        let rest = res.map_degrees(|j, c| if j < 2 { 0.0 } else { c })?;
        let dv = invert_h(&profile, &rest)?;
        let current = *history.last().unwrap();
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..=cfg.max_halvings {
            let v_try = vbar.axpy(-t, &dv);
            let a_try: Vec<f64> = a.iter().zip(&da).map(|(x, d)| x - t * d).collect();
            match f_op_from(model, p, eps, Some(&v_try), h, cfg, Some(&state.eigen)) {
                Ok(st) => {
                    let r = combined(&st, &a_try)?;
                    if r.max_abs() < current {
                        accepted = Some((v_try, a_try, st, r));
                        break;
                    }
                }
                Err(Error::Invalid(_)) => {}
                Err(e) => return Err(e),
            }
            t *= 0.5;
        }
        match accepted {
            Some((v, an, st, r)) => {
                vbar = v;
                a = an;
                state = st;
                history.push(r.max_abs());
                res = r;
                if history[history.len() - 1] > (1.0 - cfg.stall) * current {
                    break;
                }
            }
            // no halving reduced the residual: the iteration has reached its discretisation floor
            None => break,
        }
    }
    if *history.last().unwrap() <= cfg.tol {
        converged = true;
    }
    Ok(ModifiedSolution { vbar, a, history, converged, state })
}

/// Outcome of [`relocate`].
#[derive(Debug, Clone)]
pub struct ExtremalSolution {
    pub p: Vec<f64>,
    pub eps: f64,
    pub vbar: SphereFn<f64>,
    pub v0: f64,
    pub a: Vec<f64>,
    /// `|a|` after each relocation step.
    pub a_history: Vec<f64>,
    /// Newton residual history of the final modified solve.
    pub residual_history: Vec<f64>,
    /// Surface standard deviation of the flux over `|mean|`.
    pub extremality_residual: f64,
    pub lambda: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Set on flat tori, where every centre gives the same solution up to translation.
    pub translation_invariant: bool,
    pub hole: HoleShape,
}

impl ExtremalSolution {
    fn from_modified(p: &[f64], eps: f64, sol: ModifiedSolution, a_history: Vec<f64>, iterations: usize) -> Self {
        let a_norm = norm(&sol.a);
        Self {
            p: p.to_vec(),
            eps,
            v0: sol.state.v0,
            a: sol.a.clone(),
            a_history,
            residual_history: sol.history.clone(),
            extremality_residual: sol.state.relative_std,
            lambda: sol.state.lambda(),
            iterations,
            converged: sol.converged || a_norm == 0.0,
            translation_invariant: false,
            hole: sol.state.hole.clone(),
            vbar: sol.vbar,
        }
    }

    /// Wraps a modified solve at a fixed centre `p`.
    pub fn fixed_centre(p: &[f64], eps: f64, sol: ModifiedSolution) -> Self {
        let hist = vec![norm(&sol.a)];
        Self::from_modified(p, eps, sol, hist, 1)
    }

    /// JSON summary.
    pub fn summary(&self) -> ExtremalSummary {
        ExtremalSummary {
            p_eps: self.p.clone(),
            eps: self.eps,
            a: self.a.clone(),
            a_norm_history: self.a_history.clone(),
            vbar_norm: self.vbar.max_abs(),
            v0: self.v0,
            lambda: self.lambda,
            extremality_residual: self.extremality_residual,
            residual_history: self.residual_history.clone(),
            iterations: self.iterations,
            converged: self.converged,
            translation_invariant: self.translation_invariant,
        }
    }
}

/// Serializable view of an [`ExtremalSolution`].
#[derive(Debug, Clone, Serialize)]
pub struct ExtremalSummary {
    pub p_eps: Vec<f64>,
    pub eps: f64,
    pub a: Vec<f64>,
    pub a_norm_history: Vec<f64>,
    pub vbar_norm: f64,
    pub v0: f64,
    pub lambda: f64,
    pub extremality_residual: f64,
    pub residual_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub translation_invariant: bool,
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Moves the centre until `a(p, ε) = 0`: Newton on `p ↦ a(p, ε)` with a finite-difference
/// Jacobian and Broyden updates. On flat tori the modified problem is solved at `p_init` and
/// the result is flagged as a translation-invariant family.
pub fn relocate(model: &ModelManifold, eps: f64, p_init: &[f64], h: f64, cfg: &ExtremalConfig) -> Result<ExtremalSolution> {
    let n = model.dim();
    if p_init.len() != n {
        return Err(Error::Dimension { expected: n, got: p_init.len() });
    }
    if let ModelManifold::FlatTorus { .. } = model {
        let sol = solve_modified(model, p_init, eps, h, cfg)?;
        let hist = vec![norm(&sol.a)];
        let mut out = ExtremalSolution::from_modified(p_init, eps, sol, hist, 1);
        out.translation_invariant = true;
        return Ok(out);
    }
    // Jacobian of the V₁ part of -F(p, ε, 0), which carries the p-dependence of a at leading order
    let step = eps;
    let a_lead = |q: &[f64]| -> Result<Vec<f64>> {
        let fr = f_op(model, q, eps, None, h, cfg)?;
        Ok(v1_vector(&fr.f).iter().map(|v| -v).collect())
    };
    let base = a_lead(p_init)?;
    let mut jac = DMatrix::<f64>::zeros(n, n);
    for c in 0..n {
        let mut q = p_init.to_vec();
        q[c] += step;
        let ac = a_lead(&q)?;
        for r in 0..n {
            jac[(r, c)] = (ac[r] - base[r]) / step;
        }
    }
    let mut p = p_init.to_vec();
    let mut sol = solve_modified(model, &p, eps, h, cfg)?;
    let mut a_history = vec![norm(&sol.a)];
    let mut iterations = 1;
    while iterations < cfg.relocate_max && norm(&sol.a) > cfg.relocate_tol {
        let svd = jac.clone().svd(true, true);
        let sv = &svd.singular_values;
        let cond = sv.max() / sv.min();
        if !cond.is_finite() || cond > 1e10 {
            return Err(Error::Invalid(format!("degenerate relocation Jacobian (condition {cond:.3e})")));
        }
        let rhs = DVector::from_column_slice(&sol.a);
        let dp = svd.solve(&rhs, 0.0).map_err(|e| Error::Invalid(e.to_string()))?;
        let p_new: Vec<f64> = p.iter().zip(dp.iter()).map(|(x, d)| x - d).collect();
        if model.boundary_distance(&p_new) <= 2.0 * eps {
            return Err(Error::NotConverged { what: "relocation", iterations, residual: norm(&sol.a) });
        }
        let next = solve_modified_from(model, &p_new, eps, h, cfg, Some(&sol))?;
        iterations += 1;
        let s = DVector::from_iterator(n, p_new.iter().zip(&p).map(|(x, y)| x - y));
        let y = DVector::from_iterator(n, next.a.iter().zip(&sol.a).map(|(x, y)| x - y));
        let ss = s.dot(&s);
        if ss > 0.0 {
            jac += (&y - &jac * &s) * s.transpose() / ss;
        }
        p = p_new;
        sol = next;
        a_history.push(norm(&sol.a));
        // steps below a thousandth of the mesh width no longer change the discrete problem
        if norm(dp.as_slice()) < 1e-3 * h {
            break;
        }
    }
    let converged = norm(&sol.a) <= cfg.relocate_tol;
    let mut out = ExtremalSolution::from_modified(&p, eps, sol, a_history, iterations);
    out.converged = converged;
    Ok(out)
}

/// Measured `L_ε - H` on single-degree probes.
#[derive(Debug, Clone, Serialize)]
pub struct LinearizationGap {
    /// `max_j ‖(L_ε - H)v̄_j‖ / ‖Hv̄_j‖`.
    pub gap: f64,
    /// `(j, relative gap)`.
    pub per_degree: Vec<(usize, f64)>,
    /// Same quantity from the grid `2h`, when requested.
    pub coarse_gap: Option<f64>,
}

/// `L_ε v̄` by central differences of `F` in `v̄`, compared with `Hv̄` for one probe per degree
/// `2..=jmax`. With `richardson` the measurement is repeated on `2h` and extrapolated at
/// first order.
pub fn linearization_gap(
    model: &ModelManifold,
    p: &[f64],
    eps: f64,
    h: f64,
    jmax: usize,
    amplitude: f64,
    richardson: bool,
    cfg: &ExtremalConfig,
) -> Result<LinearizationGap> {
    let fine = gap_on_grid(model, p, eps, h, jmax, amplitude, cfg)?;
    if !richardson {
        let gap = fine.iter().map(|(_, g, _)| *g).fold(0.0, f64::max);
        return Ok(LinearizationGap { gap, per_degree: fine.iter().map(|(j, g, _)| (*j, *g)).collect(), coarse_gap: None });
    }
    let coarse = gap_on_grid(model, p, eps, 2.0 * h, jmax, amplitude, cfg)?;
    let mut per_degree = Vec::new();
    for ((j, _, df), (_, _, dc)) in fine.iter().zip(&coarse) {
        // first-order extrapolation of the difference vector L_ε v̄ - H v̄
        let ex: Vec<f64> = df.0.iter().zip(&dc.0).map(|(a, b)| 2.0 * a - b).collect();
        let m = ex.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        per_degree.push((*j, m / df.1));
    }
    let gap = per_degree.iter().map(|(_, g)| *g).fold(0.0, f64::max);
    let coarse_gap = coarse.iter().map(|(_, g, _)| *g).fold(0.0, f64::max);
    if coarse_gap.is_finite() && (gap - fine.iter().map(|(_, g, _)| *g).fold(0.0, f64::max)).abs() > gap {
        return Err(Error::Invalid(format!(
            "grid error dominates the linearisation gap (extrapolated {gap:.3e}, coarse {coarse_gap:.3e})"
        )));
    }
    Ok(LinearizationGap { gap, per_degree, coarse_gap: Some(coarse_gap) })
}

type GapSample = (usize, f64, (Vec<f64>, f64));

fn gap_on_grid(
    model: &ModelManifold,
    p: &[f64],
    eps: f64,
    h: f64,
    jmax: usize,
    amplitude: f64,
    cfg: &ExtremalConfig,
) -> Result<Vec<GapSample>> {
    let n = model.dim();
    let l = cfg.lmax(n);
    if jmax > l {
        return Err(Error::BandExceeded { requested: jmax, max: l });
    }
    let grid = SphereGrid::<f64>::shared(n, l)?;
    let profile = profile_for(model, p);
    let mut out = Vec::new();
    for j in 2..=jmax {
        let coeffs: Vec<Vec<f64>> = (0..=l)
            .map(|d| {
                let m = grid.basis(d).len();
                (0..m).map(|i| if d == j && i == 0 { 1.0 } else { 0.0 }).collect()
            })
            .collect();
        let probe = SphereFn::from_coeffs(Arc::clone(&grid), coeffs)?;
        let probe = probe.map_degrees(|_, c| c / probe.max_abs())?;
        let plus = f_op(model, p, eps, Some(&probe.map_degrees(|_, c| amplitude * c)?), h, cfg)?;
        let minus = f_op(model, p, eps, Some(&probe.map_degrees(|_, c| -amplitude * c)?), h, cfg)?;
        let lv = plus.f.axpy(-1.0, &minus.f).scale(0.5 / amplitude);
        let hv = apply_h_multiplier(&profile, &probe)?;
        let diff: Vec<f64> = lv.samples().iter().zip(hv.samples()).map(|(a, b)| a - b).collect();
        let hn = hv.max_abs();
        let gap = diff.iter().fold(0.0f64, |acc, v| acc.max(v.abs())) / hn;
        out.push((j, gap, (diff, hn)));
    }
    Ok(out)
}

/// Extremality certificate of a solution.
#[derive(Debug, Clone, Serialize)]
pub struct ExtremalityReport {
    /// Surface standard deviation of the flux over `|mean|`.
    pub flux_residual: f64,
    /// `(dλ/dt on h, |dλ/dt on h - dλ/dt on 2h|)` for each random volume-preserving field.
    pub shape_derivatives: Vec<(f64, f64)>,
    /// Every `|dλ/dt| ≤ 10 ×` its grid-error estimate.
    pub stationary: bool,
}

/// Flux constancy plus Hadamard derivatives under `fields` seeded volume-preserving normal
/// speeds of degree `1..=6`; the grid error of each derivative is estimated from the `2h` grid.
pub fn extremality_residual(
    model: &ModelManifold,
    sol: &ExtremalSolution,
    h: f64,
    fields: usize,
    seed: u64,
    cfg: &ExtremalConfig,
) -> Result<ExtremalityReport> {
    let n = model.dim();
    let hole = &sol.hole;
    let fine = first_eigen(model, Some(hole), h, &cfg.solver)?;
    let coarse_cfg = cfg.solver.clone().with_min_nodes(cfg.solver.min_nodes_across / 2.0);
    let coarse = first_eigen(model, Some(hole), 2.0 * h, &coarse_cfg)?;
    let fit_f = flux_fit(&fine, hole, &cfg.solver)?;
    let fit_c = flux_fit(&coarse, hole, &coarse_cfg)?;
    let grid = SphereGrid::<f64>::shared(n, cfg.lmax(n))?;
    let prof = hole.profile()?;
    let area: Vec<f64> = (0..grid.len())
        .map(|k| {
            let th = grid.point(k);
            grid.weights()[k] * prof.radius(th).powi(n as i32 - 1) * prof.slope_factor(th)
        })
        .collect();
    let total: f64 = area.iter().sum();
    let flux: Vec<f64> = (0..grid.len()).map(|k| fit_f.eval(grid.point(k))).collect();
    let mean = flux.iter().zip(&area).map(|(f, w)| f * w).sum::<f64>() / total;
    let var = flux.iter().zip(&area).map(|(f, w)| w * (f - mean).powi(2)).sum::<f64>() / total;
    let mut shape_derivatives = Vec::new();
    for i in 0..fields {
        let xi = random_band_limited(Arc::clone(&grid), 6.min(cfg.lmax(n)), 1, seed.wrapping_add(i as u64))?;
        // remove the surface mean so the first-order volume change vanishes
        let m = xi.samples().iter().zip(&area).map(|(f, w)| f * w).sum::<f64>() / total;
        let xi = SphereFn::from_samples(Arc::clone(&grid), xi.samples().iter().map(|v| v - m).collect())?
            .decompose(cfg.lmax(n))?;
        let df = hadamard_integral(&fit_f, &xi)?;
        let dc = hadamard_integral(&fit_c, &xi)?;
        shape_derivatives.push((df, (df - dc).abs()));
    }
    let stationary = shape_derivatives.iter().all(|(d, e)| d.abs() <= 10.0 * e);
    Ok(ExtremalityReport { flux_residual: var.sqrt() / mean.abs(), shape_derivatives, stationary })
}

/// `∫ ġ(a, ·)ġ(b, ·)` by exact monomial integration.
pub fn projection_pairing(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            let mut alpha = vec![0u32; n];
            alpha[i] += 1;
            alpha[j] += 1;
            s += a[i] * b[j] * crate::spherical::monomial_integral::<f64>(&alpha);
        }
    }
    s
}

/// `ε log(1/ε)` for `n = 2`, `ε` otherwise: the scale of `a(p, ε)` in CASE 1.
pub fn a_scale(n: usize, eps: f64) -> f64 {
    if n == 2 {
        -eps * eps.ln()
    } else {
        eps
    }
}
