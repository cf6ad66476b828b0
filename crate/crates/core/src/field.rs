//! Anisotropy direction fields `b = B / |B|`.
//!
//! Every field variant is given in closed form together with the spatial
//! Jacobian of `B`; the Jacobian of `b` follows from the quotient rule
//! `db = (I - b b^T) dB / |B|`.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::{Edge, Grid};

/// `|B|` below this value is treated as a null point of the field.
pub const NULL_THRESHOLD: f64 = 1e-13 * PI;

/// Direction used at null points of `B`.
pub const NULL_FALLBACK: [f64; 2] = [0.0, 1.0];

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FieldSpec {
    /// Constant direction.
    Uniform { direction: [f64; 2] },
    /// Field whose lines are the level sets of the manufactured limit
    /// solution: `B = (a(2y-1)cos(pi x) + pi, pi a (y^2-y) sin(pi x))`.
    AnalyticTest { amplitude: f64 },
    /// Magnetic island of perturbation amplitude `A` drifting in `y` at
    /// frequency `omega`: `B = (-2 pi A sin(2 pi (y - omega t)), pi sin(pi x))`.
    Island { amplitude: f64, omega: f64 },
}

impl FieldSpec {
    pub fn uniform(direction: [f64; 2]) -> Result<Self> {
        let n = direction[0].hypot(direction[1]);
        if !(n > 0.0 && n.is_finite()) {
            return Err(Error::config("uniform field direction must be nonzero"));
        }
        Ok(FieldSpec::Uniform { direction: [direction[0] / n, direction[1] / n] })
    }

    pub fn analytic_test(amplitude: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&amplitude) {
            return Err(Error::config(format!("analytic test amplitude {amplitude} outside [0, 1]; B may vanish")));
        }
        Ok(FieldSpec::AnalyticTest { amplitude })
    }

    pub fn island(amplitude: f64, omega: f64) -> Result<Self> {
        if !(amplitude >= 0.0 && amplitude.is_finite()) || !omega.is_finite() {
            return Err(Error::config(format!("island parameters A = {amplitude}, omega = {omega} are invalid")));
        }
        Ok(FieldSpec::Island { amplitude, omega })
    }

    /// True when the field does not depend on time.
    pub fn is_static(&self) -> bool {
        match *self {
            FieldSpec::Island { amplitude, omega } => omega == 0.0 || amplitude == 0.0,
            _ => true,
        }
    }

    /// `(speed, period)` when the field at time `t` is the field at time 0
    /// translated by `speed * t` in `y`, and is `period`-periodic in `y`.
    pub fn y_translation(&self) -> Option<(f64, f64)> {
        match *self {
            FieldSpec::Island { omega, .. } if !self.is_static() => Some((omega, 1.0)),
            _ => None,
        }
    }

    /// `B` and its Jacobian `dB[i][j] = d B_i / d x_j`.
    pub fn raw(&self, p: [f64; 2], t: f64) -> ([f64; 2], [[f64; 2]; 2]) {
        let [x, y] = p;
        match *self {
            FieldSpec::Uniform { direction } => (direction, [[0.0; 2]; 2]),
            FieldSpec::AnalyticTest { amplitude: a } => {
                let (sx, cx) = (PI * x).sin_cos();
                let b = [a * (2.0 * y - 1.0) * cx + PI, PI * a * (y * y - y) * sx];
                let db = [
                    [-a * PI * (2.0 * y - 1.0) * sx, 2.0 * a * cx],
                    [PI * PI * a * (y * y - y) * cx, PI * a * (2.0 * y - 1.0) * sx],
                ];
                (b, db)
            }
            FieldSpec::Island { amplitude: a, omega } => {
                let (sy, cy) = (2.0 * PI * (y - omega * t)).sin_cos();
                let (sx, cx) = (PI * x).sin_cos();
                let b = [-2.0 * PI * a * sy, PI * sx];
                let db = [[0.0, -4.0 * PI * PI * a * cy], [PI * PI * cx, 0.0]];
                (b, db)
            }
        }
    }
}

/// `b` and its Jacobian at one point. `jac_b[i][j] = d b_i / d x_j`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldSample {
    pub b: [f64; 2],
    pub jac_b: [[f64; 2]; 2],
    pub valid: bool,
}

pub fn eval_field(spec: &FieldSpec, p: [f64; 2], t: f64) -> FieldSample {
    let (bv, db) = spec.raw(p, t);
    let norm = bv[0].hypot(bv[1]);
    if norm < NULL_THRESHOLD {
        return FieldSample { b: NULL_FALLBACK, jac_b: [[0.0; 2]; 2], valid: false };
    }
    let b = [bv[0] / norm, bv[1] / norm];
    let mut jac_b = [[0.0; 2]; 2];
    for j in 0..2 {
        let bdb = b[0] * db[0][j] + b[1] * db[1][j];
        for i in 0..2 {
            jac_b[i][j] = (db[i][j] - b[i] * bdb) / norm;
        }
    }
    FieldSample { b, jac_b, valid: true }
}

/// Parallel and perpendicular projectors `b b^T` and `I - b b^T`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projectors {
    pub par: [[f64; 2]; 2],
    pub perp: [[f64; 2]; 2],
}

impl Projectors {
    pub fn from_direction(b: [f64; 2]) -> Self {
        let par = [[b[0] * b[0], b[0] * b[1]], [b[1] * b[0], b[1] * b[1]]];
        let perp = [[1.0 - par[0][0], -par[0][1]], [-par[1][0], 1.0 - par[1][1]]];
        Self { par, perp }
    }
}

/// Projectors of a valid sample; invalid (null-point) samples are rejected so
/// the caller applies the fallback direction explicitly.
pub fn projectors(sample: &FieldSample) -> Result<Projectors> {
    if !sample.valid {
        return Err(Error::Domain("projectors requested at a null point of B".into()));
    }
    Ok(Projectors::from_direction(sample.b))
}

type ScalarCoeff = Arc<dyn Fn([f64; 2]) -> f64 + Send + Sync>;
type TensorCoeff = Arc<dyn Fn([f64; 2]) -> [[f64; 2]; 2] + Send + Sync>;

/// Diffusion coefficients `A_par` (scalar) and `A_perp` (symmetric tensor).
#[derive(Clone)]
pub struct DiffusionCoeffs {
    a_par: ScalarCoeff,
    a_perp: TensorCoeff,
    uniform: bool,
}

impl Default for DiffusionCoeffs {
    fn default() -> Self {
        Self::constant(1.0, [[1.0, 0.0], [0.0, 1.0]])
    }
}

impl fmt::Debug for DiffusionCoeffs {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DiffusionCoeffs").finish_non_exhaustive()
    }
}

impl DiffusionCoeffs {
    pub fn constant(a_par: f64, a_perp: [[f64; 2]; 2]) -> Self {
        Self { uniform: true, ..Self::new(move |_| a_par, move |_| a_perp) }
    }

    pub fn new(
        a_par: impl Fn([f64; 2]) -> f64 + Send + Sync + 'static,
        a_perp: impl Fn([f64; 2]) -> [[f64; 2]; 2] + Send + Sync + 'static,
    ) -> Self {
        Self { a_par: Arc::new(a_par), a_perp: Arc::new(a_perp), uniform: false }
    }

    /// Built by [`DiffusionCoeffs::constant`].
    pub fn is_uniform(&self) -> bool {
        self.uniform
    }

    #[inline]
    pub fn a_par(&self, p: [f64; 2]) -> f64 {
        (self.a_par)(p)
    }

    #[inline]
    pub fn a_perp(&self, p: [f64; 2]) -> [[f64; 2]; 2] {
        (self.a_perp)(p)
    }

    /// Check `0 < a0 <= A_par <= a1` and `a0 |v|^2 <= v^T A_perp v <= a1 |v|^2`
    /// at the given points.
    pub fn check_bounds(&self, points: &[[f64; 2]], a0: f64, a1: f64) -> Result<()> {
        if !(a0 > 0.0 && a1 >= a0) {
            return Err(Error::config("coefficient bounds need 0 < a0 <= a1"));
        }
        for &p in points {
            let ap = self.a_par(p);
            if !(a0..=a1).contains(&ap) {
                return Err(Error::config(format!("A_par = {ap} at {p:?} outside [{a0}, {a1}]")));
            }
            let m = self.a_perp(p);
            if (m[0][1] - m[1][0]).abs() > 1e-12 * (m[0][1].abs() + 1.0) {
                return Err(Error::config(format!("A_perp not symmetric at {p:?}")));
            }
            let half_tr = 0.5 * (m[0][0] + m[1][1]);
            let disc = (0.25 * (m[0][0] - m[1][1]).powi(2) + m[0][1] * m[0][1]).sqrt();
            let (lo, hi) = (half_tr - disc, half_tr + disc);
            if lo < a0 || hi > a1 {
                return Err(Error::config(format!("A_perp eigenvalues [{lo}, {hi}] at {p:?} outside [{a0}, {a1}]")));
            }
        }
        Ok(())
    }
}

/// Boundary dofs where field lines enter the domain (`b . n < 0`). Periodic
/// edges are skipped; a corner is inflow if it is inflow for either of its
/// non-periodic edges. Null points of `B` are never inflow.
pub fn inflow_nodes(spec: &FieldSpec, grid: &Grid, t: f64) -> Vec<usize> {
    let (nx, ny) = (grid.nx(), grid.ny());
    let mut out = Vec::new();
    for edge in Edge::ALL {
        if grid.periodic_y() && !edge.is_x_edge() {
            continue;
        }
        let nodes: Vec<(usize, usize)> = match edge {
            Edge::Left => (0..=ny).map(|j| (0, j)).collect(),
            Edge::Right => (0..=ny).map(|j| (nx, j)).collect(),
            Edge::Bottom => (0..=nx).map(|i| (i, 0)).collect(),
            Edge::Top => (0..=nx).map(|i| (i, ny)).collect(),
        };
        let n = edge.outward_normal();
        for (i, j) in nodes {
            let s = eval_field(spec, [grid.x(i), grid.y(j)], t);
            if s.valid && s.b[0] * n[0] + s.b[1] * n[1] < 0.0 {
                out.push(grid.dof(i, j));
            }
        }
    }
    out.sort_unstable();
    out.dedup();
    out
}

/// Island width `w = 4 sqrt(A) / pi`.
pub fn island_width(amplitude: f64) -> Result<f64> {
    if amplitude < 0.0 || !amplitude.is_finite() {
        return Err(Error::Domain(format!("island amplitude {amplitude} must be >= 0")));
    }
    Ok(4.0 * amplitude.sqrt() / PI)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, Rect};

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn uniform_sample() {
        let s = eval_field(&FieldSpec::uniform([1.0, 0.0]).unwrap(), [0.3, 0.9], 2.0);
        assert_eq!(s.b, [1.0, 0.0]);
        assert_eq!(s.jac_b, [[0.0; 2]; 2]);
        assert!(s.valid);
        assert!(FieldSpec::uniform([0.0, 0.0]).is_err());
    }

    #[test]
    fn analytic_field_center() {
        let s = eval_field(&FieldSpec::analytic_test(1.0).unwrap(), [0.5, 0.5], 0.7);
        let r = 17f64.sqrt();
        assert!(close(s.b[0], 4.0 / r, 1e-14) && close(s.b[1], -1.0 / r, 1e-14));
    }

    #[test]
    fn island_field_sample() {
        let spec = FieldSpec::island(0.01, 0.0).unwrap();
        let (bv, _) = spec.raw([0.25, 0.25], 0.0);
        assert!(close(bv[0], -0.02 * PI, 1e-15));
        assert!(close(bv[1], PI * 2f64.sqrt() / 2.0, 1e-15));
        let s = eval_field(&spec, [0.25, 0.25], 0.0);
        let n = bv[0].hypot(bv[1]);
        assert!(close(s.b[0], bv[0] / n, 1e-15) && close(s.b[1], bv[1] / n, 1e-15));
    }

    #[test]
    fn null_point_fallback() {
        let spec = FieldSpec::island(0.01, 0.0).unwrap();
        let s = eval_field(&spec, [0.0, 0.0], 0.0);
        assert!(!s.valid);
        assert_eq!(s.b, NULL_FALLBACK);
        assert!(projectors(&s).is_err());
    }

    #[test]
    fn projector_examples() {
        let p = Projectors::from_direction([1.0, 0.0]);
        assert_eq!(p.par, [[1.0, 0.0], [0.0, 0.0]]);
        assert_eq!(p.perp, [[0.0, 0.0], [0.0, 1.0]]);

        let r = 17f64.sqrt();
        let p = Projectors::from_direction([4.0 / r, -1.0 / r]);
        let expect = [[16.0, -4.0], [-4.0, 1.0]];
        for i in 0..2 {
            for j in 0..2 {
                assert!(close(p.par[i][j], expect[i][j] / 17.0, 1e-15));
            }
        }
    }

    #[test]
    fn inflow_examples() {
        let g = build_grid(4, 4, Rect::unit(), false).unwrap();
        let left: Vec<usize> = (0..=4).map(|j| g.dof(0, j)).collect();

        let nodes = inflow_nodes(&FieldSpec::uniform([1.0, 0.0]).unwrap(), &g, 0.0);
        assert_eq!(nodes, left);

        let nodes = inflow_nodes(&FieldSpec::analytic_test(1.0).unwrap(), &g, 0.0);
        assert_eq!(nodes, left);

        let gp = build_grid(4, 4, Rect::unit(), true).unwrap();
        assert!(inflow_nodes(&FieldSpec::uniform([0.0, 1.0]).unwrap(), &gp, 0.0).is_empty());
    }

    #[test]
    fn island_width_examples() {
        assert!(close(island_width(0.01).unwrap(), 0.4 / PI, 1e-15));
        assert!(close(island_width(0.01).unwrap(), 0.1273, 1e-4));
        assert_eq!(island_width(0.0).unwrap(), 0.0);
        assert!(close(island_width(0.000625).unwrap(), 0.1 / PI, 1e-15));
        assert!(island_width(-1.0).is_err());
    }

    #[test]
    fn coefficient_bounds() {
        let c = DiffusionCoeffs::default();
        assert!(c.check_bounds(&[[0.0, 0.0], [0.5, 0.2]], 0.5, 2.0).is_ok());
        let c = DiffusionCoeffs::constant(1.0, [[3.0, 0.0], [0.0, 1.0]]);
        assert!(c.check_bounds(&[[0.0, 0.0]], 0.5, 2.0).is_err());
    }

    #[test]
    fn static_detection() {
        assert!(FieldSpec::island(0.01, 0.0).unwrap().is_static());
        assert!(!FieldSpec::island(0.01, 10.0).unwrap().is_static());
        assert!(FieldSpec::analytic_test(1.0).unwrap().is_static());
    }
}
