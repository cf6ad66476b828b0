//! Reference Q2 element on `[-1, 1]^2` and the 3-point Gauss rule.
//!
//! The 1D shape functions are the quadratic Lagrange polynomials on the nodes
//! `{-1, 0, 1}`. Mapped affinely onto a `2h`-wide element they coincide with
//! the lattice hat functions: the end nodes carry the even-index quadratics and
//! the middle node the odd-index bubble.

use crate::error::{Error, Result};
use crate::grid::Grid;

/// Tensor 3-point Gauss-Legendre rule, exact for polynomials of degree 5 in
/// each variable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussRule {
    pub points: [f64; 3],
    pub weights: [f64; 3],
}

pub fn gauss_rule() -> GaussRule {
    let p = (3.0f64 / 5.0).sqrt();
    GaussRule { points: [-p, 0.0, p], weights: [5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0] }
}

impl GaussRule {
    pub fn integrate_1d(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.points.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }

    pub fn integrate_2d(&self, f: impl Fn(f64, f64) -> f64) -> f64 {
        let mut acc = 0.0;
        for (&eta, &wy) in self.points.iter().zip(&self.weights) {
            for (&xi, &wx) in self.points.iter().zip(&self.weights) {
                acc += wx * wy * f(xi, eta);
            }
        }
        acc
    }
}

/// Quadratic Lagrange basis on `{-1, 0, 1}` at `s`.
#[inline]
pub fn lagrange_1d(s: f64) -> [f64; 3] {
    [0.5 * s * (s - 1.0), 1.0 - s * s, 0.5 * s * (s + 1.0)]
}

#[inline]
pub fn lagrange_1d_deriv(s: f64) -> [f64; 3] {
    [s - 0.5, -2.0 * s, s + 0.5]
}

/// Number of local nodes and of quadrature points per element.
pub const NODES: usize = 9;
pub const QUAD_POINTS: usize = 9;

/// The reference Q2 element with values and reference gradients tabulated at
/// the 9 Gauss points. Quadrature point `q = 3*j + i` sits at
/// `(points[i], points[j])`; local node `p = 3*b + a` sits at lattice offset
/// `(a, b)` from the element's lower-left node.
#[derive(Debug, Clone)]
pub struct RefElement {
    rule: GaussRule,
    values: [[f64; NODES]; QUAD_POINTS],
    grads: [[[f64; 2]; NODES]; QUAD_POINTS],
    weights: [f64; QUAD_POINTS],
    points: [[f64; 2]; QUAD_POINTS],
}

impl Default for RefElement {
    fn default() -> Self {
        Self::new()
    }
}

impl RefElement {
    pub fn new() -> Self {
        let rule = gauss_rule();
        let mut values = [[0.0; NODES]; QUAD_POINTS];
        let mut grads = [[[0.0; 2]; NODES]; QUAD_POINTS];
        let mut weights = [0.0; QUAD_POINTS];
        let mut points = [[0.0; 2]; QUAD_POINTS];
        for j in 0..3 {
            for i in 0..3 {
                let q = 3 * j + i;
                let (xi, eta) = (rule.points[i], rule.points[j]);
                points[q] = [xi, eta];
                weights[q] = rule.weights[i] * rule.weights[j];
                values[q] = shape_values(xi, eta);
                grads[q] = shape_grads(xi, eta);
            }
        }
        Self { rule, values, grads, weights, points }
    }

    pub fn rule(&self) -> &GaussRule {
        &self.rule
    }

    /// Shape values at quadrature point `q`.
    #[inline]
    pub fn values(&self, q: usize) -> &[f64; NODES] {
        &self.values[q]
    }

    /// Reference-coordinate gradients at quadrature point `q`.
    #[inline]
    pub fn grads(&self, q: usize) -> &[[f64; 2]; NODES] {
        &self.grads[q]
    }

    /// Product weight of quadrature point `q` on the reference square.
    #[inline]
    pub fn weight(&self, q: usize) -> f64 {
        self.weights[q]
    }

    #[inline]
    pub fn point(&self, q: usize) -> [f64; 2] {
        self.points[q]
    }

    /// Lattice offset `(a, b)` of a local node.
    pub fn lattice_offset(local: usize) -> (usize, usize) {
        (local % 3, local / 3)
    }

    /// Value and reference gradient of local shape `local` at `(xi, eta)`.
    pub fn shape_eval(&self, local: usize, point: [f64; 2]) -> Result<(f64, [f64; 2])> {
        if local >= NODES {
            return Err(Error::Index { index: local, limit: NODES });
        }
        let (a, b) = Self::lattice_offset(local);
        let (lx, ly) = (lagrange_1d(point[0]), lagrange_1d(point[1]));
        let (dx, dy) = (lagrange_1d_deriv(point[0]), lagrange_1d_deriv(point[1]));
        Ok((lx[a] * ly[b], [dx[a] * ly[b], lx[a] * dy[b]]))
    }

    /// Same as [`shape_eval`](Self::shape_eval) with the gradient mapped to
    /// physical coordinates for an element of node spacing `(hx, hy)`.
    pub fn shape_eval_physical(&self, local: usize, point: [f64; 2], hx: f64, hy: f64) -> Result<(f64, [f64; 2])> {
        let (v, g) = self.shape_eval(local, point)?;
        Ok((v, [g[0] / hx, g[1] / hy]))
    }
}

/// All nine shape values at a reference point.
pub fn shape_values(xi: f64, eta: f64) -> [f64; NODES] {
    let (lx, ly) = (lagrange_1d(xi), lagrange_1d(eta));
    std::array::from_fn(|p| lx[p % 3] * ly[p / 3])
}

/// All nine reference gradients at a reference point.
pub fn shape_grads(xi: f64, eta: f64) -> [[f64; 2]; NODES] {
    let (lx, ly) = (lagrange_1d(xi), lagrange_1d(eta));
    let (dx, dy) = (lagrange_1d_deriv(xi), lagrange_1d_deriv(eta));
    std::array::from_fn(|p| {
        let (a, b) = (p % 3, p / 3);
        [dx[a] * ly[b], lx[a] * dy[b]]
    })
}

/// Value and physical gradient at `p` of the Q2 function with nodal values
/// `u` on `grid`.
pub fn evaluate(grid: &Grid, u: &[f64], p: [f64; 2]) -> Result<(f64, [f64; 2])> {
    if u.len() != grid.n_dofs() {
        return Err(Error::Dimension(format!("{} nodal values for {} dofs", u.len(), grid.n_dofs())));
    }
    let (el, [xi, eta]) = grid.locate(p).ok_or_else(|| Error::Domain(format!("point {p:?} outside the domain")))?;
    let v = shape_values(xi, eta);
    let g = shape_grads(xi, eta);
    let mut val = 0.0;
    let mut grad = [0.0; 2];
    for k in 0..NODES {
        let c = u[el.dofs[k]];
        val += c * v[k];
        grad[0] += c * g[k][0] / grid.hx();
        grad[1] += c * g[k][1] / grid.hy();
    }
    Ok((val, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rule_constants() {
        let r = gauss_rule();
        assert_eq!(r.points[1], 0.0);
        assert!((r.points[2] - 0.6f64.sqrt()).abs() < 1e-16);
        assert_eq!(r.points[0], -r.points[2]);
        assert!((r.weights.iter().sum::<f64>() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn rule_examples() {
        let r = gauss_rule();
        assert!(r.integrate_2d(|x, y| x.powi(5) * y.powi(4)).abs() < 1e-15);
        assert!((r.integrate_1d(|x| x.powi(4)) - 0.4).abs() < 1e-15);
        assert!((r.integrate_2d(|_, _| 1.0) - 4.0).abs() < 1e-15);
    }

    #[test]
    fn lagrange_midpoint_values() {
        // nodes {0, h, 2h} at x = h/2 is s = -1/2 on the reference interval
        let v = lagrange_1d(-0.5);
        assert!((v[0] - 3.0 / 8.0).abs() < 1e-15);
        assert!((v[1] - 3.0 / 4.0).abs() < 1e-15);
        assert!((v[2] + 1.0 / 8.0).abs() < 1e-15);
    }

    #[test]
    fn lagrange_property_at_nodes() {
        let re = RefElement::new();
        for node in 0..NODES {
            let (a, b) = RefElement::lattice_offset(node);
            let p = [a as f64 - 1.0, b as f64 - 1.0];
            for shape in 0..NODES {
                let (v, _) = re.shape_eval(shape, p).unwrap();
                let expect = if shape == node { 1.0 } else { 0.0 };
                assert!((v - expect).abs() < 1e-15, "shape {shape} at node {node}");
            }
        }
    }

    #[test]
    fn tabulated_partition_of_unity() {
        let re = RefElement::new();
        for q in 0..QUAD_POINTS {
            let s: f64 = re.values(q).iter().sum();
            assert!((s - 1.0).abs() < 1e-13);
            let g = re.grads(q).iter().fold([0.0, 0.0], |acc, g| [acc[0] + g[0], acc[1] + g[1]]);
            assert!(g[0].abs() < 1e-12 && g[1].abs() < 1e-12);
        }
    }

    #[test]
    fn out_of_range_local_node() {
        let re = RefElement::new();
        assert!(matches!(re.shape_eval(9, [0.0, 0.0]), Err(Error::Index { index: 9, .. })));
    }

    #[test]
    fn physical_gradient_scaling() {
        let re = RefElement::new();
        let (_, g) = re.shape_eval(4, [0.3, -0.2]).unwrap();
        let (_, gp) = re.shape_eval_physical(4, [0.3, -0.2], 0.1, 0.05).unwrap();
        assert!((gp[0] - g[0] / 0.1).abs() < 1e-14);
        assert!((gp[1] - g[1] / 0.05).abs() < 1e-14);
    }
}
