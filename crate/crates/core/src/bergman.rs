//! Quadrature grids, Gram matrices and Bergman kernels of explicit section
//! bases.
//!
//! Kernels are reported in the unit-frame trivialization along the chart of
//! each evaluation point: `P_p(x, y) = sum_i e_i(x) conj(e_i(y))` where `e_i`
//! are the unit-frame values of an orthonormal basis.

use crate::error::{BergmanError, Result};
use crate::geometry::{Chart, ChartPoint, KaehlerModel, ModelKind};
use crate::quadrature::{pairwise_sum, GaussLegendre};
use crate::sections::{basis_cp1, SectionBasis};
use nalgebra::{Cholesky, DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use std::f64::consts::PI;

/// Grid points handled by one task during Gram assembly.
const CHUNK: usize = 256;
/// Chunks summed sequentially inside one task.
const CHUNKS_PER_TASK: usize = 8;

#[derive(Debug, Clone)]
pub struct QuadratureGrid {
    pub nodes: Vec<ChartPoint>,
    pub weights: Vec<f64>,
    order: usize,
    model: KaehlerModel,
}

impl QuadratureGrid {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn model(&self) -> &KaehlerModel {
        &self.model
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        pairwise_sum(&self.weights)
    }

    /// Quadrature of a real function of the grid node.
    pub fn integrate<F>(&self, f: F) -> f64
    where
        F: Fn(ChartPoint) -> f64 + Sync,
    {
        let terms: Vec<f64> = self
            .nodes
            .par_iter()
            .zip(self.weights.par_iter())
            .map(|(&x, &w)| w * f(x))
            .collect();
        pairwise_sum(&terms)
    }
}

/// Smallest order accepted by [`gram`] for a basis of the given degree.
pub fn min_order(degree: usize) -> usize {
    degree + 2
}

/// The default order for a basis of the given degree.
pub fn default_order(degree: usize) -> usize {
    2 * degree + 4
}

/// Builds the product grid of the model.
///
/// Spheres use Gauss–Legendre in `s = |z|^2 / (1 + |z|^2)` and the trapezoid
/// rule in the angle, with nodes of `s > 1/2` stored in the inverted chart.
/// The torus uses the product trapezoid rule in the lattice coordinates.
pub fn build_grid(model: &KaehlerModel, order: usize) -> Result<QuadratureGrid> {
    if order < 2 {
        return Err(BergmanError::OrderTooSmall { order, degree: 0 });
    }
    match model.kind() {
        ModelKind::FubiniStudyCP1 | ModelKind::PerturbedCP1 | ModelKind::CyclicQuotientCP1 => {
            Ok(sphere_grid(model, order))
        }
        ModelKind::FlatTorus => Ok(torus_grid(model, order)),
        ModelKind::BargmannFock => Err(BergmanError::WrongModel {
            op: "build_grid",
            model: model.to_string(),
        }),
    }
}

/// [`build_grid`] at [`default_order`] for the basis degree.
pub fn grid_for(basis: &SectionBasis) -> Result<QuadratureGrid> {
    build_grid(basis.model(), default_order(basis.degree()))
}

fn sphere_grid(model: &KaehlerModel, order: usize) -> QuadratureGrid {
    let pot = model.sphere_potential();
    let (s_nodes, s_weights) = GaussLegendre::new(order).on_interval(0.0, 1.0);
    let m = order;
    let scale = model.volume() / m as f64;
    let mut nodes = Vec::with_capacity(order * m);
    let mut weights = Vec::with_capacity(order * m);
    for (&s, &ws) in s_nodes.iter().zip(&s_weights) {
        let w = ws * scale * pot.q2_f1_at_s(s);
        for k in 0..m {
            let theta = 2.0 * PI * k as f64 / m as f64;
            let pt = if s <= 0.5 {
                ChartPoint::affine(Complex64::from_polar((s / (1.0 - s)).sqrt(), theta))
            } else {
                ChartPoint::inverted(Complex64::from_polar(((1.0 - s) / s).sqrt(), -theta))
            };
            nodes.push(pt);
            weights.push(w);
        }
    }
    QuadratureGrid {
        nodes,
        weights,
        order,
        model: *model,
    }
}

fn torus_grid(model: &KaehlerModel, order: usize) -> QuadratureGrid {
    let tau = model.tau();
    let w = 1.0 / (order * order) as f64;
    let mut nodes = Vec::with_capacity(order * order);
    for i in 0..order {
        let u = i as f64 / order as f64;
        for j in 0..order {
            let v = j as f64 / order as f64;
            nodes.push(ChartPoint::affine(Complex64::new(u, 0.0) + tau * v));
        }
    }
    QuadratureGrid {
        weights: vec![w; nodes.len()],
        nodes,
        order,
        model: *model,
    }
}

/// `s = |z|^2 / (1 + |z|^2)` of a sphere node.
fn compact_radius(pt: &ChartPoint) -> f64 {
    let t = pt.coord.norm_sqr();
    match pt.chart {
        Chart::Affine => t / (1.0 + t),
        Chart::Inverted => 1.0 / (1.0 + t),
    }
}

/// Checks the grid against `int |z|^{2j} (1 + |z|^2)^{-q-2} dx dy / pi =
/// j! (q - j)! / (q + 1)!` for all `j <= q <= q_max`, to 1e-10 relative.
pub fn beta_check(grid: &QuadratureGrid, q_max: usize) -> Result<()> {
    let model = grid.model();
    if !model.is_sphere() {
        return Err(BergmanError::WrongModel {
            op: "beta_check",
            model: model.to_string(),
        });
    }
    let pot = model.sphere_potential();
    let k = model.quotient_order() as f64;
    for q in 0..=q_max {
        for j in 0..=q {
            let terms: Vec<f64> = grid
                .nodes
                .iter()
                .zip(&grid.weights)
                .map(|(pt, w)| {
                    let s = compact_radius(pt);
                    k * w * s.powi(j as i32) * (1.0 - s).powi((q - j) as i32) / pot.q2_f1_at_s(s)
                })
                .collect();
            let got = pairwise_sum(&terms);
            let want = beta_oracle(j, q);
            if ((got - want) / want).abs() > 1e-10 {
                return Err(BergmanError::OrderTooSmall {
                    order: grid.order(),
                    degree: q,
                });
            }
        }
    }
    Ok(())
}

/// `j! (q - j)! / (q + 1)!`, by the product formula.
pub fn beta_oracle(j: usize, q: usize) -> f64 {
    // 1 / ((q + 1) * binom(q, j))
    let mut binom = 1.0;
    for i in 0..j {
        binom *= (q - i) as f64 / (i + 1) as f64;
    }
    1.0 / ((q + 1) as f64 * binom)
}

/// Gram matrix of a basis with the triangular transform to an orthonormal
/// basis.
///
/// With `G = L L*` the transform is `T = L^{-1}` (lower triangular), so that
/// `T G T* = I` and the orthonormal sections are `T S`.
#[derive(Debug, Clone)]
pub struct GramFactorization {
    pub gram: DMatrix<Complex64>,
    pub transform: DMatrix<Complex64>,
    /// Ratio of extreme squared pivots of the factorization.
    pub condition: f64,
    /// Whether the diagonal pre-scaling retry was needed.
    pub rescaled: bool,
}

impl GramFactorization {
    /// Frobenius norm of `T G T* - I`.
    pub fn residual(&self) -> f64 {
        let d = self.gram.nrows();
        let r = &self.transform * &self.gram * self.transform.adjoint() - DMatrix::identity(d, d);
        r.norm()
    }
}

/// Unit-frame section values at every grid node, in grid order.
fn unit_frames(basis: &SectionBasis, nodes: &[ChartPoint]) -> Result<Vec<DVector<Complex64>>> {
    nodes.par_iter().map(|&x| basis.unit_frame(x)).collect()
}

/// Assembles `G_jk = int S_j conj(S_k) dv` and factors it.
pub fn gram(basis: &SectionBasis, grid: &QuadratureGrid) -> Result<GramFactorization> {
    if grid.model() != basis.model() {
        return Err(BergmanError::InvalidParameter(format!(
            "grid built for {} but basis lives on {}",
            grid.model(),
            basis.model()
        )));
    }
    if grid.order() < min_order(basis.degree()) {
        return Err(BergmanError::OrderTooSmall {
            order: grid.order(),
            degree: basis.degree(),
        });
    }
    let d = basis.dim();
    let n = grid.len();
    let task_len = CHUNK * CHUNKS_PER_TASK;
    let tasks: Vec<DMatrix<Complex64>> = (0..n.div_ceil(task_len))
        .into_par_iter()
        .map(|t| -> Result<DMatrix<Complex64>> {
            let mut acc = DMatrix::<Complex64>::zeros(d, d);
            let lo = t * task_len;
            let hi = (lo + task_len).min(n);
            for start in (lo..hi).step_by(CHUNK) {
                let end = (start + CHUNK).min(hi);
                let rows = end - start;
                let mut c = DMatrix::<Complex64>::zeros(rows, d);
                for (r, i) in (start..end).enumerate() {
                    let u = basis.unit_frame(grid.nodes[i])?;
                    let sw = grid.weights[i].sqrt();
                    for j in 0..d {
                        c[(r, j)] = u[j] * sw;
                    }
                }
                acc += c.adjoint() * &c;
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    // (C* C)_jk = sum conj(S_j) S_k; the Gram is its transpose
    let g = pairwise_sum_matrices(&tasks).transpose();
    let g = (&g + g.adjoint()) * Complex64::new(0.5, 0.0);
    factor(g)
}

fn pairwise_sum_matrices(ms: &[DMatrix<Complex64>]) -> DMatrix<Complex64> {
    match ms.len() {
        0 => unreachable!("grid is never empty"),
        1 => ms[0].clone(),
        n => pairwise_sum_matrices(&ms[..n / 2]) + pairwise_sum_matrices(&ms[n / 2..]),
    }
}

/// Cholesky factorization, retried once after normalizing each section.
pub fn factor(g: DMatrix<Complex64>) -> Result<GramFactorization> {
    let d = g.nrows();
    if let Some(l) = cholesky_lower(&g) {
        return Ok(GramFactorization {
            transform: lower_inverse(&l),
            condition: pivot_ratio(&l),
            gram: g,
            rescaled: false,
        });
    }
    let scale: Vec<f64> = (0..d).map(|i| 1.0 / g[(i, i)].re.abs().sqrt()).collect();
    if scale.iter().any(|s| !s.is_finite()) {
        return Err(BergmanError::IndefiniteGram { dim: d });
    }
    let dm = DMatrix::from_diagonal(&DVector::from_iterator(
        d,
        scale.iter().map(|&s| Complex64::new(s, 0.0)),
    ));
    let scaled = &dm * &g * &dm;
    let l = cholesky_lower(&scaled).ok_or(BergmanError::IndefiniteGram { dim: d })?;
    Ok(GramFactorization {
        transform: lower_inverse(&l) * dm,
        condition: pivot_ratio(&l),
        gram: g,
        rescaled: true,
    })
}

/// Lower Cholesky factor, rejecting non-real or non-positive pivots (the
/// complex square root never fails on its own).
fn cholesky_lower(g: &DMatrix<Complex64>) -> Option<DMatrix<Complex64>> {
    if g.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return None;
    }
    let l = Cholesky::new(g.clone())?.l();
    let ok = (0..l.nrows()).all(|i| {
        let p = l[(i, i)];
        p.re > 0.0 && p.im.abs() <= 1e-8 * p.re
    });
    ok.then_some(l)
}

fn lower_inverse(l: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    let d = l.nrows();
    l.solve_lower_triangular(&DMatrix::identity(d, d))
        .expect("Cholesky factor has a nonzero diagonal")
}

fn pivot_ratio(l: &DMatrix<Complex64>) -> f64 {
    let diag: Vec<f64> = (0..l.nrows()).map(|i| l[(i, i)].norm()).collect();
    let max = diag.iter().cloned().fold(0.0, f64::max);
    let min = diag.iter().cloned().fold(f64::INFINITY, f64::min);
    (max / min).powi(2)
}

/// Orthonormal unit-frame values `T u(x)`.
pub fn orthonormal_frame(
    basis: &SectionBasis,
    fact: &GramFactorization,
    x: impl Into<ChartPoint>,
) -> Result<DVector<Complex64>> {
    Ok(&fact.transform * basis.unit_frame(x)?)
}

pub fn bergman_diagonal(
    basis: &SectionBasis,
    fact: &GramFactorization,
    z: impl Into<ChartPoint>,
) -> Result<f64> {
    let e = orthonormal_frame(basis, fact, z)?;
    let terms: Vec<f64> = e.iter().map(|v| v.norm_sqr()).collect();
    Ok(pairwise_sum(&terms))
}

pub fn bergman_offdiag(
    basis: &SectionBasis,
    fact: &GramFactorization,
    x: impl Into<ChartPoint>,
    y: impl Into<ChartPoint>,
) -> Result<Complex64> {
    let ex = orthonormal_frame(basis, fact, x)?;
    let ey = orthonormal_frame(basis, fact, y)?;
    Ok(pair(&ex, &ey))
}

fn pair(ex: &DVector<Complex64>, ey: &DVector<Complex64>) -> Complex64 {
    ex.iter().zip(ey.iter()).map(|(a, b)| a * b.conj()).sum()
}

/// Quadrature of `B_p` over the grid; equals the dimension of the space of
/// sections.
pub fn trace(basis: &SectionBasis, fact: &GramFactorization, grid: &QuadratureGrid) -> Result<f64> {
    let frames = unit_frames(basis, &grid.nodes)?;
    let terms: Vec<f64> = frames
        .iter()
        .zip(&grid.weights)
        .map(|(u, w)| w * (&fact.transform * u).norm_squared())
        .collect();
    Ok(pairwise_sum(&terms))
}

/// Kernel of the invariant basis on the cyclic quotient.
pub fn orbifold_kernel(
    basis: &SectionBasis,
    fact: &GramFactorization,
    x: impl Into<ChartPoint>,
    y: impl Into<ChartPoint>,
) -> Result<Complex64> {
    if basis.model().kind() != ModelKind::CyclicQuotientCP1 {
        return Err(BergmanError::WrongModel {
            op: "orbifold_kernel",
            model: basis.model().to_string(),
        });
    }
    bergman_offdiag(basis, fact, x, y)
}

/// Rotation `z -> exp(2 pi i l / k) z`, expressed in the chart of `x`.
pub fn rotate(x: ChartPoint, l: u32, k: u32) -> ChartPoint {
    let g = Complex64::from_polar(1.0, 2.0 * PI * l as f64 / k as f64);
    match x.chart {
        Chart::Affine => ChartPoint::affine(g * x.coord),
        Chart::Inverted => ChartPoint::inverted(x.coord / g),
    }
}

/// `sum_l P(g^l x, y)` for the rotation group of order `k`, from a kernel on
/// the covering sphere.
pub fn group_averaged_kernel(
    upstairs: &SectionBasis,
    fact: &GramFactorization,
    k: u32,
    x: ChartPoint,
    y: ChartPoint,
) -> Result<Complex64> {
    let ey = orthonormal_frame(upstairs, fact, y)?;
    let mut acc = Complex64::new(0.0, 0.0);
    for l in 0..k {
        let ex = orthonormal_frame(upstairs, fact, rotate(x, l, k))?;
        acc += pair(&ex, &ey);
    }
    Ok(acc)
}

/// Orthonormalized kernel data of one `(model, p)` pair.
#[derive(Debug, Clone)]
pub struct KernelData {
    pub basis: SectionBasis,
    pub grid: QuadratureGrid,
    pub fact: GramFactorization,
}

impl KernelData {
    /// Builds the natural basis at the default grid order.
    pub fn new(basis: SectionBasis) -> Result<Self> {
        let grid = grid_for(&basis)?;
        let fact = gram(&basis, &grid)?;
        Ok(Self { basis, grid, fact })
    }

    pub fn diagonal(&self, z: impl Into<ChartPoint>) -> Result<f64> {
        bergman_diagonal(&self.basis, &self.fact, z)
    }

    pub fn offdiag(&self, x: impl Into<ChartPoint>, y: impl Into<ChartPoint>) -> Result<Complex64> {
        bergman_offdiag(&self.basis, &self.fact, x, y)
    }

    /// Kernel of the covering sphere for a quotient model, with the same twist.
    pub fn covering(&self) -> Result<Self> {
        let m = self.basis.model();
        if m.kind() != ModelKind::CyclicQuotientCP1 {
            return Err(BergmanError::WrongModel {
                op: "covering",
                model: m.to_string(),
            });
        }
        Self::new(basis_cp1(&KaehlerModel::fubini_study(m.twist()), self.basis.p())?)
    }
}

/// Kernel values at sample points, in the unit-frame gauge.
#[derive(Debug, Clone)]
pub struct KernelSample {
    pub p: u32,
    pub model: String,
    pub points: Vec<(ChartPoint, ChartPoint)>,
    pub values: Vec<Complex64>,
    pub gauge: &'static str,
}

pub const UNIT_FRAME_GAUGE: &str = "unit frame along the chart of each point";

pub fn sample_kernel(
    basis: &SectionBasis,
    fact: &GramFactorization,
    pairs: &[(ChartPoint, ChartPoint)],
) -> Result<KernelSample> {
    let values = pairs
        .par_iter()
        .map(|&(x, y)| bergman_offdiag(basis, fact, x, y))
        .collect::<Result<Vec<_>>>()?;
    Ok(KernelSample {
        p: basis.p(),
        model: basis.model().to_string(),
        points: pairs.to_vec(),
        values,
        gauge: UNIT_FRAME_GAUGE,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sections::{basis_quotient, basis_torus};
    use approx::assert_relative_eq;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn grids_have_unit_volume() {
        let fs = build_grid(&KaehlerModel::fubini_study(0), 64).unwrap();
        assert!((fs.total_weight() - 1.0).abs() < 1e-12);
        let pz = build_grid(&KaehlerModel::perturbed(0.25, 0).unwrap(), 64).unwrap();
        assert!((pz.total_weight() - 1.0).abs() < 1e-12);
        let t = build_grid(&KaehlerModel::flat_torus(c(0.3, 0.8)).unwrap(), 64).unwrap();
        assert!((t.total_weight() - 1.0).abs() < 1e-12);
        let q = build_grid(&KaehlerModel::cyclic_quotient(3, 0).unwrap(), 16).unwrap();
        assert!((q.total_weight() - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn beta_oracle_values() {
        assert_relative_eq!(beta_oracle(1, 2), 1.0 / 6.0, max_relative = 1e-15);
        assert_relative_eq!(beta_oracle(0, 0), 1.0, max_relative = 1e-15);
        let g = build_grid(&KaehlerModel::fubini_study(0), 64).unwrap();
        beta_check(&g, 20).unwrap();
        let g = build_grid(&KaehlerModel::perturbed(-0.2, 0).unwrap(), 12).unwrap();
        beta_check(&g, 20).unwrap();
        assert!(matches!(
            beta_check(&g, 40),
            Err(BergmanError::OrderTooSmall { .. })
        ));
    }

    #[test]
    fn fs_gram_is_beta_diagonal() {
        let b = basis_cp1(&KaehlerModel::fubini_study(0), 2).unwrap();
        let g = grid_for(&b).unwrap();
        let f = gram(&b, &g).unwrap();
        let want = [1.0 / 3.0, 1.0 / 6.0, 1.0 / 3.0];
        for (i, w) in want.iter().enumerate() {
            for j in 0..3 {
                let v = f.gram[(i, j)];
                if i == j {
                    assert!((v.re - w).abs() < 1e-14 && v.im.abs() < 1e-14);
                } else {
                    assert!(v.norm() < 1e-14);
                }
            }
        }
        assert!(f.residual() < 1e-12);
    }

    #[test]
    fn too_coarse_grid_is_rejected() {
        let b = basis_cp1(&KaehlerModel::fubini_study(0), 10).unwrap();
        let g = build_grid(b.model(), 8).unwrap();
        assert!(matches!(gram(&b, &g), Err(BergmanError::OrderTooSmall { .. })));
    }

    #[test]
    fn fs_diagonal_is_constant() {
        for (m, want) in [(0, 4.0), (2, 6.0)] {
            let b = basis_cp1(&KaehlerModel::fubini_study(m), 3).unwrap();
            let k = KernelData::new(b).unwrap();
            for z in [c(0.0, 0.0), c(0.3, -0.7), c(5.0, 2.0)] {
                assert!((k.diagonal(z).unwrap() - want).abs() < 1e-10);
            }
            assert!((k.diagonal(ChartPoint::infinity()).unwrap() - want).abs() < 1e-10);
        }
    }

    /// `p sum_{lambda != 0} exp(-pi p |lambda|^2 / (2 Im tau))`: the lattice
    /// images of the plane kernel bound `|B_p - p|`.
    fn torus_image_bound(p: u32, tau: Complex64) -> f64 {
        let mut s = 0.0;
        for a in -8i32..=8 {
            for b in -8i32..=8 {
                if (a, b) != (0, 0) {
                    let l = tau * b as f64 + a as f64;
                    s += (-PI * p as f64 * l.norm_sqr() / (2.0 * tau.im)).exp();
                }
            }
        }
        p as f64 * s
    }

    #[test]
    fn torus_diagonal_is_nearly_constant() {
        let tau = c(0.0, 1.0);
        let t = KaehlerModel::flat_torus(tau).unwrap();
        for p in [4, 16] {
            let k = KernelData::new(basis_torus(&t, p, None).unwrap()).unwrap();
            let g00 = k.fact.gram[(0, 0)].re;
            for j in 0..p as usize {
                assert!((k.fact.gram[(j, j)].re - g00).abs() < 1e-13);
            }
            let bound = torus_image_bound(p, tau) + 1e-10;
            for z in [c(0.0, 0.0), c(0.37, 0.81), c(-2.1, 3.3)] {
                let b = k.diagonal(z).unwrap();
                assert!((b - p as f64).abs() <= bound, "p={p} z={z}: {b}");
            }
            let tr = trace(&k.basis, &k.fact, &k.grid).unwrap();
            assert!((tr - p as f64).abs() < 1e-10);
        }
        // the images are visible at small p
        let k = KernelData::new(basis_torus(&t, 4, None).unwrap()).unwrap();
        assert!((k.diagonal(c(0.0, 0.0)).unwrap() - 4.0).abs() > 1e-3);
    }

    #[test]
    fn fs_offdiag_closed_form() {
        let p = 6;
        let k = KernelData::new(basis_cp1(&KaehlerModel::fubini_study(0), p).unwrap()).unwrap();
        for z in [c(0.5, 0.5), c(2.0, -1.0)] {
            let v = k.offdiag(c(0.0, 0.0), z).unwrap();
            let want = (p + 1) as f64 * (1.0 + z.norm_sqr()).powf(-(p as f64) / 2.0);
            assert!((v.norm() - want).abs() < 1e-10);
        }
    }

    #[test]
    fn scaling_the_basis() {
        let b = basis_cp1(&KaehlerModel::perturbed(0.1, 0).unwrap(), 4).unwrap();
        let g = grid_for(&b).unwrap();
        let f = gram(&b, &g).unwrap();
        let b2 = b.mixed(DMatrix::identity(5, 5) * c(2.0, 0.0)).unwrap();
        let f2 = gram(&b2, &g).unwrap();
        assert!((&f2.transform * c(2.0, 0.0) - &f.transform).norm() < 1e-12);
        let z = c(0.4, 0.9);
        assert_relative_eq!(
            bergman_diagonal(&b, &f, z).unwrap(),
            bergman_diagonal(&b2, &f2, z).unwrap(),
            max_relative = 1e-12
        );
    }

    #[test]
    fn prescaling_rescues_badly_scaled_gram() {
        let mut g = DMatrix::<Complex64>::identity(3, 3);
        g[(0, 0)] = c(1e-300, 0.0);
        g[(1, 1)] = c(1e300, 0.0);
        let f = factor(g).unwrap();
        assert!(f.residual() < 1e-10);
        assert!(factor(DMatrix::from_element(2, 2, c(1.0, 0.0)) * c(-1.0, 0.0)).is_err());
    }

    #[test]
    fn orbifold_fixed_point() {
        for (k, p) in [(2, 4), (3, 6)] {
            let q = KaehlerModel::cyclic_quotient(k, 0).unwrap();
            let down = KernelData::new(basis_quotient(&q, p).unwrap()).unwrap();
            let up = down.covering().unwrap();
            let o = c(0.0, 0.0);
            let b = orbifold_kernel(&down.basis, &down.fact, o, o).unwrap();
            assert!((b.re - k as f64 * up.diagonal(o).unwrap()).abs() < 1e-9);
        }
    }

    #[test]
    fn orbifold_matches_group_average() {
        let q = KaehlerModel::cyclic_quotient(3, 0).unwrap();
        let down = KernelData::new(basis_quotient(&q, 9).unwrap()).unwrap();
        let up = down.covering().unwrap();
        let pts = [
            ChartPoint::affine(c(0.3, 0.2)),
            ChartPoint::inverted(c(0.1, -0.6)),
            ChartPoint::affine(c(-1.4, 0.9)),
        ];
        for x in pts {
            for y in pts {
                let a = orbifold_kernel(&down.basis, &down.fact, x, y).unwrap();
                let b = group_averaged_kernel(&up.basis, &up.fact, 3, x, y).unwrap();
                assert!((a - b).norm() < 1e-9, "{x} {y}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn orbifold_kernel_needs_quotient() {
        let k = KernelData::new(basis_cp1(&KaehlerModel::fubini_study(0), 2).unwrap()).unwrap();
        assert!(matches!(
            orbifold_kernel(&k.basis, &k.fact, c(0.0, 0.0), c(0.0, 0.0)),
            Err(BergmanError::WrongModel { .. })
        ));
    }
}
