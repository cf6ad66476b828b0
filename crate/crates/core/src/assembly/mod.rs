//! Finite-element assembly of mass and anisotropic stiffness matrices, load
//! and Neumann vectors, and Dirichlet elimination.

mod sparse;

use std::sync::Arc;

use rayon::prelude::*;

pub use sparse::{SparseMatrix, SparsityPattern};

use crate::error::{Error, Result};
use crate::fem_basis::{lagrange_1d, RefElement, NODES, QUAD_POINTS};
use crate::field::{eval_field, DiffusionCoeffs, FieldSpec, Projectors};
use crate::grid::{BoundaryTagging, Element, Grid, SpaceTimeFn};
use crate::linsolve::BlockSystem;

type Local = [[f64; NODES]; NODES];

/// Which anisotropic part of the diffusion operator to assemble.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StiffnessPart {
    Parallel,
    Perpendicular,
}

/// The three bilinear forms of the problem at one field time.
#[derive(Debug, Clone)]
pub struct AssembledForms {
    pub mass: SparseMatrix,
    pub k_par: SparseMatrix,
    pub k_perp: SparseMatrix,
    pub t_assembled: f64,
}

/// Holds the grid, tabulated reference element, the shared sparsity pattern,
/// and per-element scatter maps into it.
#[derive(Debug, Clone)]
pub struct Assembler {
    grid: Grid,
    re: RefElement,
    elements: Vec<Element>,
    pattern: Arc<SparsityPattern>,
    scatter: Vec<[usize; NODES * NODES]>,
}

impl Assembler {
    pub fn new(grid: &Grid) -> Self {
        Self::with_ref(grid, RefElement::new())
    }

    pub fn with_ref(grid: &Grid, re: RefElement) -> Self {
        let elements: Vec<Element> = grid.elements().collect();
        let mut rows = vec![Vec::with_capacity(25); grid.n_dofs()];
        for el in &elements {
            for &r in &el.dofs {
                rows[r].extend_from_slice(&el.dofs);
            }
        }
        let pattern = Arc::new(SparsityPattern::from_rows(grid.n_dofs(), rows).expect("element dofs are in range"));
        let scatter = elements
            .iter()
            .map(|el| {
                std::array::from_fn(|k| {
                    pattern
                        .position(el.dofs[k / NODES], el.dofs[k % NODES])
                        .expect("element couplings are in the pattern")
                })
            })
            .collect();
        Self { grid: grid.clone(), re, elements, pattern, scatter }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn reference(&self) -> &RefElement {
        &self.re
    }

    pub fn pattern(&self) -> &Arc<SparsityPattern> {
        &self.pattern
    }

    pub fn n_dofs(&self) -> usize {
        self.grid.n_dofs()
    }

    /// Physical coordinates and weight of quadrature point `q` in `el`.
    #[inline]
    fn quad_point(&self, el: &Element, q: usize) -> ([f64; 2], f64) {
        let (hx, hy) = (self.grid.hx(), self.grid.hy());
        let [xi, eta] = self.re.point(q);
        ([el.origin[0] + hx * (1.0 + xi), el.origin[1] + hy * (1.0 + eta)], self.re.weight(q) * hx * hy)
    }

    #[inline]
    fn physical_grads(&self, q: usize) -> [[f64; 2]; NODES] {
        let (hx, hy) = (self.grid.hx(), self.grid.hy());
        self.re.grads(q).map(|g| [g[0] / hx, g[1] / hy])
    }

    /// Scatter per-element matrices, in element order, into a new matrix.
    fn scatter_all(&self, locals: &[Local]) -> SparseMatrix {
        let mut m = SparseMatrix::zeros(self.pattern.clone());
        let vals = m.values_mut();
        for (local, map) in locals.iter().zip(&self.scatter) {
            for (k, &pos) in map.iter().enumerate() {
                vals[pos] += local[k / NODES][k % NODES];
            }
        }
        m
    }

    pub fn element_mass(&self, el: &Element) -> Local {
        let mut k = [[0.0; NODES]; NODES];
        for q in 0..QUAD_POINTS {
            let (_, w) = self.quad_point(el, q);
            let v = self.re.values(q);
            for i in 0..NODES {
                for j in 0..NODES {
                    k[i][j] += w * v[i] * v[j];
                }
            }
        }
        k
    }

    /// Parallel and perpendicular element stiffness matrices of one element.
    pub fn element_stiffness(
        &self,
        el: &Element,
        spec: &FieldSpec,
        coeffs: &DiffusionCoeffs,
        t: f64,
    ) -> (Local, Local) {
        let mut kp = [[0.0; NODES]; NODES];
        let mut kt = [[0.0; NODES]; NODES];
        for q in 0..QUAD_POINTS {
            let (x, w) = self.quad_point(el, q);
            let g = self.physical_grads(q);
            let sample = eval_field(spec, x, t);
            let b = sample.b;
            let proj = Projectors::from_direction(b).perp;
            let a_par = coeffs.a_par(x);
            let a_perp = coeffs.a_perp(x);
            let d = mat_mul(&mat_mul(&proj, &a_perp), &proj);
            let s: [f64; NODES] = std::array::from_fn(|i| b[0] * g[i][0] + b[1] * g[i][1]);
            let dg: [[f64; 2]; NODES] =
                std::array::from_fn(|i| [d[0][0] * g[i][0] + d[0][1] * g[i][1], d[1][0] * g[i][0] + d[1][1] * g[i][1]]);
            for i in 0..NODES {
                for j in 0..NODES {
                    kp[i][j] += w * a_par * s[i] * s[j];
                    kt[i][j] += w * (g[i][0] * dg[j][0] + g[i][1] * dg[j][1]);
                }
            }
        }
        (kp, kt)
    }

    pub fn mass(&self) -> SparseMatrix {
        let locals: Vec<Local> = self.elements.par_iter().map(|el| self.element_mass(el)).collect();
        self.scatter_all(&locals)
    }

    /// `(K_par, K_perp)` with the field sampled at time `t`.
    pub fn stiffness_pair(&self, spec: &FieldSpec, coeffs: &DiffusionCoeffs, t: f64) -> (SparseMatrix, SparseMatrix) {
        let locals: Vec<(Local, Local)> =
            self.elements.par_iter().map(|el| self.element_stiffness(el, spec, coeffs, t)).collect();
        let (par, perp): (Vec<Local>, Vec<Local>) = locals.into_iter().unzip();
        (self.scatter_all(&par), self.scatter_all(&perp))
    }

    pub fn stiffness(&self, spec: &FieldSpec, coeffs: &DiffusionCoeffs, t: f64, part: StiffnessPart) -> SparseMatrix {
        let (par, perp) = self.stiffness_pair(spec, coeffs, t);
        match part {
            StiffnessPart::Parallel => par,
            StiffnessPart::Perpendicular => perp,
        }
    }

    /// Standard Laplace stiffness `int grad(theta_i) . grad(theta_j)`.
    pub fn isotropic_stiffness(&self) -> SparseMatrix {
        let locals: Vec<Local> = self
            .elements
            .par_iter()
            .map(|el| {
                let mut k = [[0.0; NODES]; NODES];
                for q in 0..QUAD_POINTS {
                    let (_, w) = self.quad_point(el, q);
                    let g = self.physical_grads(q);
                    for i in 0..NODES {
                        for j in 0..NODES {
                            k[i][j] += w * (g[i][0] * g[j][0] + g[i][1] * g[j][1]);
                        }
                    }
                }
                k
            })
            .collect();
        self.scatter_all(&locals)
    }

    /// Mass (cloned from `mass`) and both stiffness matrices at time `t`.
    pub fn forms(&self, mass: &SparseMatrix, spec: &FieldSpec, coeffs: &DiffusionCoeffs, t: f64) -> AssembledForms {
        let (k_par, k_perp) = self.stiffness_pair(spec, coeffs, t);
        AssembledForms { mass: mass.clone(), k_par, k_perp, t_assembled: t }
    }

    /// `int f(., t) theta_i`.
    pub fn load(&self, f: &SpaceTimeFn, t: f64) -> Vec<f64> {
        let locals: Vec<[f64; NODES]> = self
            .elements
            .par_iter()
            .map(|el| {
                let mut r = [0.0; NODES];
                for q in 0..QUAD_POINTS {
                    let (x, w) = self.quad_point(el, q);
                    let fx = w * f.eval(x[0], x[1], t);
                    for (ri, v) in r.iter_mut().zip(self.re.values(q)) {
                        *ri += fx * v;
                    }
                }
                r
            })
            .collect();
        let mut out = vec![0.0; self.n_dofs()];
        for (el, r) in self.elements.iter().zip(&locals) {
            for (&d, v) in el.dofs.iter().zip(r) {
                out[d] += v;
            }
        }
        out
    }

    /// `int_{Gamma_N} g_N(., t) theta_i ds`.
    pub fn neumann(&self, tagging: &BoundaryTagging, t: f64) -> Vec<f64> {
        let rule = self.re.rule();
        let mut out = vec![0.0; self.n_dofs()];
        for seg in tagging.neumann_segments() {
            let Some(g) = tagging.neumann_data(seg.edge) else {
                continue;
            };
            let half = [0.5 * (seg.end[0] - seg.start[0]), 0.5 * (seg.end[1] - seg.start[1])];
            let jac = half[0].hypot(half[1]);
            for (&s, &w) in rule.points.iter().zip(&rule.weights) {
                let x = seg.start[0] + half[0] * (1.0 + s);
                let y = seg.start[1] + half[1] * (1.0 + s);
                let gw = w * jac * g.eval(x, y, t);
                for (&d, v) in seg.dofs.iter().zip(lagrange_1d(s)) {
                    out[d] += gw * v;
                }
            }
        }
        out
    }
}

fn mat_mul(a: &[[f64; 2]; 2], b: &[[f64; 2]; 2]) -> [[f64; 2]; 2] {
    std::array::from_fn(|i| std::array::from_fn(|j| a[i][0] * b[0][j] + a[i][1] * b[1][j]))
}

pub fn assemble_mass(grid: &Grid, re: &RefElement) -> SparseMatrix {
    Assembler::with_ref(grid, re.clone()).mass()
}

pub fn assemble_stiffness(
    grid: &Grid,
    re: &RefElement,
    spec: &FieldSpec,
    coeffs: &DiffusionCoeffs,
    t: f64,
    part: StiffnessPart,
) -> SparseMatrix {
    Assembler::with_ref(grid, re.clone()).stiffness(spec, coeffs, t, part)
}

pub fn assemble_neumann(grid: &Grid, tagging: &BoundaryTagging, t: f64) -> Vec<f64> {
    Assembler::new(grid).neumann(tagging, t)
}

pub fn assemble_load(grid: &Grid, re: &RefElement, f: &SpaceTimeFn, t: f64) -> Vec<f64> {
    Assembler::with_ref(grid, re.clone()).load(f, t)
}

/// Unknowns of a linear system fixed to prescribed values.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Constraints {
    fixed: Vec<(usize, f64)>,
}

impl Constraints {
    /// Sorts the entries; the same index listed twice must carry the same value.
    pub fn new(mut fixed: Vec<(usize, f64)>) -> Result<Self> {
        fixed.sort_by_key(|&(i, _)| i);
        let mut out: Vec<(usize, f64)> = Vec::with_capacity(fixed.len());
        for (i, v) in fixed {
            match out.last() {
                Some(&(j, w)) if j == i => {
                    if w != v {
                        return Err(Error::config(format!("unknown {i} constrained to both {w} and {v}")));
                    }
                }
                _ => out.push((i, v)),
            }
        }
        Ok(Self { fixed: out })
    }

    /// Dirichlet values of `u` at time `t`, plus `q = 0` on `q_fixed` (dofs
    /// numbered within the q block, which follows the `n_u` u-dofs).
    pub fn for_block_system(grid: &Grid, tagging: &BoundaryTagging, t: f64, q_fixed: &[usize]) -> Result<Self> {
        let n_u = grid.n_dofs();
        let mut fixed = tagging.dirichlet_values(grid, t);
        for &d in q_fixed {
            if d >= n_u {
                return Err(Error::Index { index: d, limit: n_u });
            }
            fixed.push((n_u + d, 0.0));
        }
        Self::new(fixed)
    }

    pub fn fixed(&self) -> &[(usize, f64)] {
        &self.fixed
    }

    pub fn len(&self) -> usize {
        self.fixed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fixed.is_empty()
    }

    fn check(&self, n: usize) -> Result<()> {
        match self.fixed.last() {
            Some(&(i, _)) if i >= n => Err(Error::Index { index: i, limit: n }),
            _ => Ok(()),
        }
    }

    /// Zero the constrained rows and columns and put 1 on their diagonal.
    pub fn apply_matrix(&self, a: &SparseMatrix) -> Result<SparseMatrix> {
        self.check(a.nrows())?;
        let mut mask = vec![false; a.ncols().max(a.nrows())];
        for &(i, _) in &self.fixed {
            mask[i] = true;
        }
        let mut out = a.clone();
        let pattern = out.pattern().clone();
        let rp = pattern.row_ptr();
        let ci = pattern.col_idx();
        let vals = out.values_mut();
        for i in 0..pattern.nrows() {
            for k in rp[i]..rp[i + 1] {
                let j = ci[k];
                if mask[i] || mask[j] {
                    vals[k] = if i == j { 1.0 } else { 0.0 };
                }
            }
        }
        for &(i, _) in &self.fixed {
            if pattern.position(i, i).is_none() {
                return Err(Error::Dimension(format!("no diagonal entry in row {i}")));
            }
        }
        Ok(out)
    }

    /// Move the known values to the right-hand side using the unconstrained
    /// matrix, then set the constrained entries to their values.
    pub fn apply_rhs(&self, raw: &SparseMatrix, rhs: &[f64]) -> Result<Vec<f64>> {
        self.check(raw.nrows())?;
        if rhs.len() != raw.nrows() {
            return Err(Error::Dimension(format!("rhs length {} for a {}-row matrix", rhs.len(), raw.nrows())));
        }
        let mut g = vec![0.0; raw.ncols()];
        for &(i, v) in &self.fixed {
            g[i] = v;
        }
        let shift = raw.matvec(&g);
        let mut out: Vec<f64> = rhs.iter().zip(&shift).map(|(r, s)| r - s).collect();
        for &(i, v) in &self.fixed {
            out[i] = v;
        }
        Ok(out)
    }
}

/// A monolithic system ready for factorization; unknowns are all u-dofs
/// followed by all q-dofs.
#[derive(Debug, Clone)]
pub struct ConstrainedSystem {
    pub matrix: SparseMatrix,
    pub rhs: Vec<f64>,
    pub n_u: usize,
}

/// Symmetric Dirichlet elimination on the u-block and, for the AP variant,
/// `q = 0` on the given inflow dofs. Periodicity is already built into the
/// dof numbering.
pub fn apply_constraints(
    system: &BlockSystem,
    grid: &Grid,
    tagging: &BoundaryTagging,
    t: f64,
    q_fixed: &[usize],
) -> Result<ConstrainedSystem> {
    let raw = system.monolithic()?;
    let rhs = system.monolithic_rhs();
    let c = Constraints::for_block_system(grid, tagging, t, q_fixed)?;
    Ok(ConstrainedSystem { matrix: c.apply_matrix(&raw)?, rhs: c.apply_rhs(&raw, &rhs)?, n_u: system.n_u() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, classify_boundary, BoundarySpec, EdgeCondition, Rect};

    fn unit_grid(n: usize) -> Grid {
        build_grid(n, n, Rect::unit(), false).unwrap()
    }

    #[test]
    fn pattern_row_widths() {
        let a = Assembler::new(&unit_grid(4));
        let p = a.pattern();
        assert_eq!(p.row(0).len(), 9);
        // element-corner node in the middle couples to the full 5x5 patch
        let g = a.grid();
        assert_eq!(p.row(g.dof(2, 2)).len(), 25);
        // edge-midpoint node couples to two elements: 3x5
        assert_eq!(p.row(g.dof(1, 2)).len(), 15);
    }

    #[test]
    fn mass_sum_is_area() {
        let g = build_grid(6, 4, Rect::centered_unit(), false).unwrap();
        let m = Assembler::new(&g).mass();
        let s: f64 = m.values().iter().sum();
        assert!((s - 1.0).abs() < 1e-14);
    }

    #[test]
    fn periodic_mass_sum_is_area() {
        let g = build_grid(4, 4, Rect::centered_unit(), true).unwrap();
        let m = Assembler::new(&g).mass();
        let one = vec![1.0; g.n_dofs()];
        assert!((m.quadratic_form(&one) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn load_examples() {
        let g = unit_grid(4);
        let a = Assembler::new(&g);
        let s1: f64 = a.load(&SpaceTimeFn::constant(1.0), 0.0).iter().sum();
        assert!((s1 - 1.0).abs() < 1e-14);
        let sx: f64 = a.load(&SpaceTimeFn::new(|x, _, _| x), 0.0).iter().sum();
        assert!((sx - 0.5).abs() < 1e-14);
        assert!(a.load(&SpaceTimeFn::zero(), 0.0).iter().all(|&v| v == 0.0));
    }

    fn left_neumann(g: SpaceTimeFn) -> BoundarySpec {
        BoundarySpec {
            left: EdgeCondition::Neumann(g),
            right: EdgeCondition::Dirichlet(SpaceTimeFn::zero()),
            bottom: EdgeCondition::Periodic,
            top: EdgeCondition::Periodic,
        }
    }

    #[test]
    fn neumann_examples() {
        let g = build_grid(4, 6, Rect::centered_unit(), true).unwrap();
        let a = Assembler::new(&g);
        let tag = classify_boundary(&g, &left_neumann(SpaceTimeFn::constant(1.0))).unwrap();
        let s: f64 = a.neumann(&tag, 0.0).iter().sum();
        assert!((s - 1.0).abs() < 1e-14);
        let tag0 = classify_boundary(&g, &left_neumann(SpaceTimeFn::zero())).unwrap();
        assert!(a.neumann(&tag0, 0.0).iter().all(|&v| v == 0.0));

        let gu = unit_grid(4);
        let spec = BoundarySpec {
            left: EdgeCondition::Neumann(SpaceTimeFn::new(|_, y, _| y)),
            right: EdgeCondition::Dirichlet(SpaceTimeFn::zero()),
            bottom: EdgeCondition::Dirichlet(SpaceTimeFn::zero()),
            top: EdgeCondition::Dirichlet(SpaceTimeFn::zero()),
        };
        let tag = classify_boundary(&gu, &spec).unwrap();
        let s: f64 = Assembler::new(&gu).neumann(&tag, 0.0).iter().sum();
        assert!((s - 0.5).abs() < 1e-14);
    }

    #[test]
    fn constraints_reject_conflicts() {
        assert!(Constraints::new(vec![(1, 0.0), (1, 1.0)]).is_err());
        assert_eq!(Constraints::new(vec![(3, 2.0), (1, 0.0), (3, 2.0)]).unwrap().len(), 2);
    }

    #[test]
    fn homogeneous_constraints_only_zero_rows() {
        let a = SparseMatrix::from_dense(&[vec![2.0, -1.0, 0.0], vec![-1.0, 2.0, -1.0], vec![0.0, -1.0, 2.0]]);
        let c = Constraints::new(vec![(0, 0.0)]).unwrap();
        let rhs = c.apply_rhs(&a, &[5.0, 6.0, 7.0]).unwrap();
        assert_eq!(rhs, vec![0.0, 6.0, 7.0]);
        let m = c.apply_matrix(&a).unwrap();
        assert_eq!(m.get(0, 0), 1.0);
        assert_eq!(m.get(1, 0), 0.0);
        assert_eq!(m.get(0, 1), 0.0);
        assert_eq!(m.asymmetry(), 0.0);
    }
}
