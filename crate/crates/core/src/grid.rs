//! Cartesian Q2 lattice, degree-of-freedom numbering, and boundary tagging.
//!
//! Nodes sit on the lattice `x_i = x0 + i*hx`, `y_j = y0 + j*hy` with
//! `0 <= i <= nx`, `0 <= j <= ny`. Each Q2 element spans two node intervals in
//! each direction, so element `(m, n)` covers `[x_{2m}, x_{2m+2}] x
//! [y_{2n}, y_{2n+2}]`. Degrees of freedom are numbered row-major with `i`
//! fastest; with periodicity in `y` the row `j = ny` is identified with `j = 0`.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Axis-aligned rectangle `[x0, x1] x [y0, y1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Rect {
    pub fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Result<Self> {
        let finite = [x0, x1, y0, y1].iter().all(|v| v.is_finite());
        if !finite || x1 <= x0 || y1 <= y0 {
            return Err(Error::config(format!("degenerate domain [{x0}, {x1}] x [{y0}, {y1}]")));
        }
        Ok(Self { x0, x1, y0, y1 })
    }

    /// `[0, 1]^2`
    pub fn unit() -> Self {
        Self { x0: 0.0, x1: 1.0, y0: 0.0, y1: 1.0 }
    }

    /// `[-0.5, 0.5]^2`
    pub fn centered_unit() -> Self {
        Self { x0: -0.5, x1: 0.5, y0: -0.5, y1: 0.5 }
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        p[0] >= self.x0 && p[0] <= self.x1 && p[1] >= self.y0 && p[1] <= self.y1
    }
}

/// One Q2 element: its lattice position, lower-left corner, and the global
/// dofs of its nine nodes in local order `p = 3*b + a` (lattice offset `(a, b)`).
#[derive(Debug, Clone, Copy)]
pub struct Element {
    pub m: usize,
    pub n: usize,
    pub origin: [f64; 2],
    pub dofs: [usize; 9],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    nx: usize,
    ny: usize,
    domain: Rect,
    periodic_y: bool,
    hx: f64,
    hy: f64,
}

/// Build the Q2 lattice. `nx` and `ny` are node-interval counts and must be
/// even and at least 2.
pub fn build_grid(nx: usize, ny: usize, domain: Rect, periodic_y: bool) -> Result<Grid> {
    Grid::new(nx, ny, domain, periodic_y)
}

impl Grid {
    pub fn new(nx: usize, ny: usize, domain: Rect, periodic_y: bool) -> Result<Self> {
        for (name, count) in [("nx", nx), ("ny", ny)] {
            if count < 2 || count % 2 != 0 {
                return Err(Error::config(format!("{name} = {count}: interval counts must be even and >= 2")));
            }
        }
        let domain = Rect::new(domain.x0, domain.x1, domain.y0, domain.y1)?;
        Ok(Self { nx, ny, domain, periodic_y, hx: domain.width() / nx as f64, hy: domain.height() / ny as f64 })
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn domain(&self) -> Rect {
        self.domain
    }

    pub fn periodic_y(&self) -> bool {
        self.periodic_y
    }

    pub fn hx(&self) -> f64 {
        self.hx
    }

    pub fn hy(&self) -> f64 {
        self.hy
    }

    /// Mesh size used by the penalty term: `min(hx, hy)`.
    pub fn h(&self) -> f64 {
        self.hx.min(self.hy)
    }

    pub fn n_elements(&self) -> usize {
        (self.nx / 2) * (self.ny / 2)
    }

    pub fn n_lattice_nodes(&self) -> usize {
        (self.nx + 1) * (self.ny + 1)
    }

    /// Number of distinct nodes after periodic identification.
    pub fn n_dofs(&self) -> usize {
        (self.nx + 1) * self.distinct_rows()
    }

    fn distinct_rows(&self) -> usize {
        if self.periodic_y {
            self.ny
        } else {
            self.ny + 1
        }
    }

    pub fn x(&self, i: usize) -> f64 {
        if i == self.nx {
            self.domain.x1
        } else {
            self.domain.x0 + i as f64 * self.hx
        }
    }

    pub fn y(&self, j: usize) -> f64 {
        if j == self.ny {
            self.domain.y1
        } else {
            self.domain.y0 + j as f64 * self.hy
        }
    }

    /// Lattice node after periodic identification. Idempotent.
    pub fn periodic_image(&self, i: usize, j: usize) -> (usize, usize) {
        if self.periodic_y && j == self.ny {
            (i, 0)
        } else {
            (i, j)
        }
    }

    /// Global dof of lattice node `(i, j)`.
    pub fn dof(&self, i: usize, j: usize) -> usize {
        debug_assert!(i <= self.nx && j <= self.ny);
        let (i, j) = self.periodic_image(i, j);
        j * (self.nx + 1) + i
    }

    /// Canonical lattice position of a dof.
    pub fn lattice_of(&self, dof: usize) -> (usize, usize) {
        (dof % (self.nx + 1), dof / (self.nx + 1))
    }

    pub fn node_coords(&self, dof: usize) -> [f64; 2] {
        let (i, j) = self.lattice_of(dof);
        [self.x(i), self.y(j)]
    }

    pub fn element(&self, m: usize, n: usize) -> Element {
        let mut dofs = [0; 9];
        for b in 0..3 {
            for a in 0..3 {
                dofs[3 * b + a] = self.dof(2 * m + a, 2 * n + b);
            }
        }
        Element { m, n, origin: [self.x(2 * m), self.y(2 * n)], dofs }
    }

    /// Elements in row-major order (`m` fastest).
    pub fn elements(&self) -> impl Iterator<Item = Element> + '_ {
        let ex = self.nx / 2;
        (0..self.n_elements()).map(move |k| self.element(k % ex, k / ex))
    }

    /// Element containing `p` and the reference coordinates of `p` in it.
    pub fn locate(&self, p: [f64; 2]) -> Option<(Element, [f64; 2])> {
        let eps = 1e-12 * (self.domain.width() + self.domain.height());
        let d = self.domain;
        if p[0] < d.x0 - eps || p[0] > d.x1 + eps || p[1] < d.y0 - eps || p[1] > d.y1 + eps {
            return None;
        }
        let ex = self.nx / 2;
        let ey = self.ny / 2;
        let sx = (p[0] - d.x0) / (2.0 * self.hx);
        let sy = (p[1] - d.y0) / (2.0 * self.hy);
        let m = (sx.floor().max(0.0) as usize).min(ex - 1);
        let n = (sy.floor().max(0.0) as usize).min(ey - 1);
        let el = self.element(m, n);
        let xi = (p[0] - el.origin[0]) / self.hx - 1.0;
        let eta = (p[1] - el.origin[1]) / self.hy - 1.0;
        Some((el, [xi.clamp(-1.0, 1.0), eta.clamp(-1.0, 1.0)]))
    }

    /// Nodal interpolant of `f`.
    pub fn interpolate(&self, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        (0..self.n_dofs())
            .map(|d| {
                let [x, y] = self.node_coords(d);
                f(x, y)
            })
            .collect()
    }
}

/// A scalar function of `(x, y, t)` used for boundary data and forcing.
#[derive(Clone)]
pub struct SpaceTimeFn(Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>);

impl SpaceTimeFn {
    pub fn new(f: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        Self(Arc::new(f))
    }

    pub fn constant(c: f64) -> Self {
        Self::new(move |_, _, _| c)
    }

    pub fn zero() -> Self {
        Self::constant(0.0)
    }

    #[inline]
    pub fn eval(&self, x: f64, y: f64, t: f64) -> f64 {
        (self.0)(x, y, t)
    }
}

impl fmt::Debug for SpaceTimeFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SpaceTimeFn(..)")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Edge {
    Left,
    Right,
    Bottom,
    Top,
}

impl Edge {
    pub const ALL: [Edge; 4] = [Edge::Left, Edge::Right, Edge::Bottom, Edge::Top];

    pub fn outward_normal(self) -> [f64; 2] {
        match self {
            Edge::Left => [-1.0, 0.0],
            Edge::Right => [1.0, 0.0],
            Edge::Bottom => [0.0, -1.0],
            Edge::Top => [0.0, 1.0],
        }
    }

    pub fn is_x_edge(self) -> bool {
        matches!(self, Edge::Left | Edge::Right)
    }
}

#[derive(Debug, Clone)]
pub enum EdgeCondition {
    Dirichlet(SpaceTimeFn),
    Neumann(SpaceTimeFn),
    Periodic,
}

impl EdgeCondition {
    fn is_dirichlet(&self) -> bool {
        matches!(self, EdgeCondition::Dirichlet(_))
    }
}

/// Boundary condition per edge of the rectangle.
#[derive(Debug, Clone)]
pub struct BoundarySpec {
    pub left: EdgeCondition,
    pub right: EdgeCondition,
    pub bottom: EdgeCondition,
    pub top: EdgeCondition,
}

impl BoundarySpec {
    pub fn on(&self, edge: Edge) -> &EdgeCondition {
        match edge {
            Edge::Left => &self.left,
            Edge::Right => &self.right,
            Edge::Bottom => &self.bottom,
            Edge::Top => &self.top,
        }
    }

    /// Homogeneous Dirichlet on the y-edges, homogeneous Neumann on the x-edges.
    pub fn analytic_test() -> Self {
        Self {
            left: EdgeCondition::Neumann(SpaceTimeFn::zero()),
            right: EdgeCondition::Neumann(SpaceTimeFn::zero()),
            bottom: EdgeCondition::Dirichlet(SpaceTimeFn::zero()),
            top: EdgeCondition::Dirichlet(SpaceTimeFn::zero()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    Interior,
    Dirichlet(Edge),
    Neumann(Edge),
}

/// One element edge lying on a Neumann boundary: its three collinear nodes
/// ordered by increasing coordinate along the edge, and the end points.
#[derive(Debug, Clone, Copy)]
pub struct NeumannSegment {
    pub edge: Edge,
    pub dofs: [usize; 3],
    pub start: [f64; 2],
    pub end: [f64; 2],
}

/// Result of [`classify_boundary`]: every dof is exactly one of interior,
/// Dirichlet, or Neumann.
#[derive(Debug, Clone)]
pub struct BoundaryTagging {
    spec: BoundarySpec,
    kinds: Vec<NodeKind>,
    dirichlet: Vec<usize>,
    neumann_segments: Vec<NeumannSegment>,
}

/// Tag boundary nodes and Neumann segments. Corners shared by a Dirichlet and
/// a Neumann edge are Dirichlet.
pub fn classify_boundary(grid: &Grid, spec: &BoundarySpec) -> Result<BoundaryTagging> {
    for edge in [Edge::Left, Edge::Right] {
        if matches!(spec.on(edge), EdgeCondition::Periodic) {
            return Err(Error::config(format!("periodic condition on x-edge {edge:?}; only y-edges may be periodic")));
        }
    }
    let bottom_p = matches!(spec.bottom, EdgeCondition::Periodic);
    let top_p = matches!(spec.top, EdgeCondition::Periodic);
    if bottom_p != top_p {
        return Err(Error::config("periodic condition must be set on both y-edges or neither"));
    }
    if bottom_p != grid.periodic_y() {
        return Err(Error::config(format!(
            "boundary periodicity ({bottom_p}) does not match grid periodicity ({})",
            grid.periodic_y()
        )));
    }

    let (nx, ny) = (grid.nx(), grid.ny());
    let mut kinds = vec![NodeKind::Interior; grid.n_dofs()];

    let edge_nodes = |edge: Edge| -> Vec<(usize, usize)> {
        match edge {
            Edge::Left => (0..=ny).map(|j| (0, j)).collect(),
            Edge::Right => (0..=ny).map(|j| (nx, j)).collect(),
            Edge::Bottom => (0..=nx).map(|i| (i, 0)).collect(),
            Edge::Top => (0..=nx).map(|i| (i, ny)).collect(),
        }
    };

    // Neumann first so Dirichlet overwrites at shared corners.
    for edge in Edge::ALL {
        if let EdgeCondition::Neumann(_) = spec.on(edge) {
            for (i, j) in edge_nodes(edge) {
                let d = grid.dof(i, j);
                if kinds[d] == NodeKind::Interior {
                    kinds[d] = NodeKind::Neumann(edge);
                }
            }
        }
    }
    for edge in Edge::ALL {
        if spec.on(edge).is_dirichlet() {
            for (i, j) in edge_nodes(edge) {
                let d = grid.dof(i, j);
                if !matches!(kinds[d], NodeKind::Dirichlet(_)) {
                    kinds[d] = NodeKind::Dirichlet(edge);
                }
            }
        }
    }

    let dirichlet =
        kinds.iter().enumerate().filter_map(|(d, k)| matches!(k, NodeKind::Dirichlet(_)).then_some(d)).collect();

    let mut neumann_segments = Vec::new();
    for edge in Edge::ALL {
        if !matches!(spec.on(edge), EdgeCondition::Neumann(_)) {
            continue;
        }
        let count = if edge.is_x_edge() { ny / 2 } else { nx / 2 };
        for s in 0..count {
            let lattice: [(usize, usize); 3] = match edge {
                Edge::Left => [(0, 2 * s), (0, 2 * s + 1), (0, 2 * s + 2)],
                Edge::Right => [(nx, 2 * s), (nx, 2 * s + 1), (nx, 2 * s + 2)],
                Edge::Bottom => [(2 * s, 0), (2 * s + 1, 0), (2 * s + 2, 0)],
                Edge::Top => [(2 * s, ny), (2 * s + 1, ny), (2 * s + 2, ny)],
            };
            let (i0, j0) = lattice[0];
            let (i2, j2) = lattice[2];
            neumann_segments.push(NeumannSegment {
                edge,
                dofs: lattice.map(|(i, j)| grid.dof(i, j)),
                start: [grid.x(i0), grid.y(j0)],
                end: [grid.x(i2), grid.y(j2)],
            });
        }
    }

    Ok(BoundaryTagging { spec: spec.clone(), kinds, dirichlet, neumann_segments })
}

impl BoundaryTagging {
    pub fn spec(&self) -> &BoundarySpec {
        &self.spec
    }

    pub fn kind(&self, dof: usize) -> NodeKind {
        self.kinds[dof]
    }

    pub fn kinds(&self) -> &[NodeKind] {
        &self.kinds
    }

    /// Sorted Dirichlet dofs.
    pub fn dirichlet_dofs(&self) -> &[usize] {
        &self.dirichlet
    }

    pub fn neumann_dofs(&self) -> Vec<usize> {
        self.kinds.iter().enumerate().filter_map(|(d, k)| matches!(k, NodeKind::Neumann(_)).then_some(d)).collect()
    }

    pub fn neumann_segments(&self) -> &[NeumannSegment] {
        &self.neumann_segments
    }

    /// `g_D` evaluated at every Dirichlet dof at time `t`.
    pub fn dirichlet_values(&self, grid: &Grid, t: f64) -> Vec<(usize, f64)> {
        self.dirichlet
            .iter()
            .map(|&d| {
                let NodeKind::Dirichlet(edge) = self.kinds[d] else {
                    unreachable!("dirichlet list only holds dirichlet nodes")
                };
                let EdgeCondition::Dirichlet(g) = self.spec.on(edge) else {
                    unreachable!("dirichlet node tagged from a dirichlet edge")
                };
                let [x, y] = grid.node_coords(d);
                (d, g.eval(x, y, t))
            })
            .collect()
    }

    pub fn neumann_data(&self, edge: Edge) -> Option<&SpaceTimeFn> {
        match self.spec.on(edge) {
            EdgeCondition::Neumann(g) => Some(g),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_grid_counts() {
        let g = build_grid(4, 4, Rect::unit(), false).unwrap();
        assert_eq!(g.n_dofs(), 25);
        assert_eq!(g.n_elements(), 4);
        assert_eq!(g.hx(), 0.25);
        assert_eq!(g.hy(), 0.25);
    }

    #[test]
    fn full_resolution_grid() {
        let g = build_grid(200, 200, Rect::unit(), false).unwrap();
        assert!((g.h() - 0.005).abs() < 1e-15);
        assert_eq!(g.n_elements(), 100 * 100);
    }

    #[test]
    fn periodic_rows_share_dofs() {
        let g = build_grid(4, 4, Rect::centered_unit(), true).unwrap();
        assert_eq!(g.n_dofs(), 5 * 4);
        for i in 0..=4 {
            assert_eq!(g.dof(i, 4), g.dof(i, 0));
        }
        let (i, j) = g.periodic_image(3, 4);
        assert_eq!(g.periodic_image(i, j), (i, j));
    }

    #[test]
    fn rejects_odd_or_zero_counts() {
        assert!(matches!(build_grid(3, 4, Rect::unit(), false), Err(Error::Config(_))));
        assert!(matches!(build_grid(4, 0, Rect::unit(), false), Err(Error::Config(_))));
        assert!(Rect::new(0.0, 0.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn element_corners_and_shared_nodes() {
        let g = build_grid(4, 6, Rect::unit(), false).unwrap();
        let e = g.element(1, 2);
        assert_eq!(e.dofs[0], g.dof(2, 4));
        assert_eq!(e.dofs[8], g.dof(4, 6));
        let left = g.element(0, 2);
        // right column of the left neighbour is the left column of `e`
        assert_eq!(left.dofs[2], e.dofs[0]);
        assert_eq!(left.dofs[5], e.dofs[3]);
        assert_eq!(left.dofs[8], e.dofs[6]);
    }

    #[test]
    fn element_areas_sum_to_domain() {
        let d = Rect::new(-0.125, 0.125, -0.5, 0.5).unwrap();
        let g = build_grid(12, 10, d, true).unwrap();
        let total: f64 = g.elements().map(|_| 4.0 * g.hx() * g.hy()).sum();
        assert!((total - d.area()).abs() <= 1e-14 * d.area());
    }

    #[test]
    fn analytic_test_tagging() {
        let g = build_grid(4, 4, Rect::unit(), false).unwrap();
        let t = classify_boundary(&g, &BoundarySpec::analytic_test()).unwrap();
        for i in 0..=4 {
            assert!(matches!(t.kind(g.dof(i, 0)), NodeKind::Dirichlet(Edge::Bottom)));
            assert!(matches!(t.kind(g.dof(i, 4)), NodeKind::Dirichlet(Edge::Top)));
        }
        for j in 1..4 {
            assert!(matches!(t.kind(g.dof(0, j)), NodeKind::Neumann(Edge::Left)));
            assert!(matches!(t.kind(g.dof(4, j)), NodeKind::Neumann(Edge::Right)));
        }
        assert_eq!(t.dirichlet_dofs().len(), 10);
        assert_eq!(t.neumann_dofs().len(), 6);
        assert_eq!(t.neumann_segments().len(), 4);
        assert!(t.dirichlet_values(&g, 0.3).iter().all(|&(_, v)| v == 0.0));
    }

    #[test]
    fn island_dirichlet_values() {
        let g = build_grid(4, 4, Rect::centered_unit(), true).unwrap();
        let spec = BoundarySpec {
            left: EdgeCondition::Dirichlet(SpaceTimeFn::constant(1.0)),
            right: EdgeCondition::Dirichlet(SpaceTimeFn::constant(0.0)),
            bottom: EdgeCondition::Periodic,
            top: EdgeCondition::Periodic,
        };
        let t = classify_boundary(&g, &spec).unwrap();
        assert_eq!(t.dirichlet_dofs().len(), 8);
        for (d, v) in t.dirichlet_values(&g, 0.0) {
            let x = g.node_coords(d)[0];
            assert_eq!(v, if x < 0.0 { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn island_neumann_case() {
        let g = build_grid(4, 4, Rect::centered_unit(), true).unwrap();
        let spec = BoundarySpec {
            left: EdgeCondition::Neumann(SpaceTimeFn::constant(1.0)),
            right: EdgeCondition::Dirichlet(SpaceTimeFn::zero()),
            bottom: EdgeCondition::Periodic,
            top: EdgeCondition::Periodic,
        };
        let t = classify_boundary(&g, &spec).unwrap();
        assert_eq!(t.neumann_dofs().len(), 4);
        assert_eq!(t.dirichlet_dofs().len(), 4);
        assert_eq!(t.neumann_segments().len(), 2);
        // the wrapped segment ends on the identified bottom node
        assert_eq!(t.neumann_segments()[1].dofs[2], g.dof(0, 0));
    }

    #[test]
    fn periodic_misuse_rejected() {
        let g = build_grid(4, 4, Rect::unit(), false).unwrap();
        let mut spec = BoundarySpec::analytic_test();
        spec.left = EdgeCondition::Periodic;
        assert!(matches!(classify_boundary(&g, &spec), Err(Error::Config(_))));

        let mut spec = BoundarySpec::analytic_test();
        spec.top = EdgeCondition::Periodic;
        assert!(classify_boundary(&g, &spec).is_err());

        let mut spec = BoundarySpec::analytic_test();
        spec.top = EdgeCondition::Periodic;
        spec.bottom = EdgeCondition::Periodic;
        assert!(classify_boundary(&g, &spec).is_err(), "grid is not periodic");
    }

    #[test]
    fn locate_points() {
        let g = build_grid(4, 4, Rect::unit(), false).unwrap();
        let (e, r) = g.locate([0.75, 0.25]).unwrap();
        assert_eq!((e.m, e.n), (1, 0));
        assert!((r[0] - 0.0).abs() < 1e-14 && (r[1] - 0.0).abs() < 1e-14);
        let (e, r) = g.locate([1.0, 1.0]).unwrap();
        assert_eq!((e.m, e.n), (1, 1));
        assert_eq!(r, [1.0, 1.0]);
        assert!(g.locate([1.5, 0.0]).is_none());
    }
}
