//! Manufactured-solution verification on the unit square.
//!
//! The exact solution is
//! `u = sin(phi) e^-t + eps cos(2 pi x) sin(pi y) e^-t` with
//! `phi = pi y + a (y^2 - y) cos(pi x)`; the first term is constant along the
//! field lines of `B = (phi_y, -phi_x)`.

use std::f64::consts::PI;
use std::io::Write;

use rayon::prelude::*;

use crate::assembly::{Assembler, SparseMatrix};
use crate::error::{Error, Result};
use crate::fem_basis::{RefElement, NODES, QUAD_POINTS};
use crate::field::{eval_field, DiffusionCoeffs, FieldSpec};
use crate::grid::{build_grid, BoundarySpec, Grid, Rect, SpaceTimeFn};
use crate::linsolve::estimate_condition;
use crate::schemes::{run, Problem, QBoundary, SchemeConfig, State, Stepper, Variant};

/// The manufactured test case for a given field amplitude and `eps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ManufacturedCase {
    pub alpha: f64,
    pub epsilon: f64,
}

type Hessian = [[f64; 2]; 2];

impl ManufacturedCase {
    pub fn new(alpha: f64, epsilon: f64) -> Result<Self> {
        FieldSpec::analytic_test(alpha)?;
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(Error::config(format!("epsilon {epsilon} must lie in [0, 1]")));
        }
        Ok(Self { alpha, epsilon })
    }

    pub fn field(&self) -> FieldSpec {
        FieldSpec::AnalyticTest { amplitude: self.alpha }
    }

    /// `phi`, its gradient, and its Hessian.
    fn phi(&self, x: f64, y: f64) -> (f64, [f64; 2], Hessian) {
        let a = self.alpha;
        let (sx, cx) = (PI * x).sin_cos();
        let s = y * y - y;
        let phi = PI * y + a * s * cx;
        let grad = [-a * PI * s * sx, PI + a * (2.0 * y - 1.0) * cx];
        let hxy = -a * PI * (2.0 * y - 1.0) * sx;
        let hess = [[-a * PI * PI * s * cx, hxy], [hxy, 2.0 * a * cx]];
        (phi, grad, hess)
    }

    /// Spatial part of the perturbation, `cos(2 pi x) sin(pi y)`, with
    /// gradient and Hessian.
    fn perturbation(x: f64, y: f64) -> (f64, [f64; 2], Hessian) {
        let (s2x, c2x) = (2.0 * PI * x).sin_cos();
        let (sy, cy) = (PI * y).sin_cos();
        let w = c2x * sy;
        let grad = [-2.0 * PI * s2x * sy, PI * c2x * cy];
        let hxy = -2.0 * PI * PI * s2x * cy;
        (w, grad, [[-4.0 * PI * PI * w, hxy], [hxy, -PI * PI * w]])
    }

    /// Field-aligned part `sin(phi) e^-t` with gradient and Hessian.
    fn limit_parts(&self, x: f64, y: f64, t: f64) -> (f64, [f64; 2], Hessian) {
        let (phi, g, h) = self.phi(x, y);
        let (s, c) = phi.sin_cos();
        let e = (-t).exp();
        let grad = [c * g[0] * e, c * g[1] * e];
        let hess = std::array::from_fn(|i| std::array::from_fn(|j| (-s * g[i] * g[j] + c * h[i][j]) * e));
        (s * e, grad, hess)
    }

    pub fn exact_u(&self, x: f64, y: f64, t: f64) -> f64 {
        let e = (-t).exp();
        (self.phi(x, y).0.sin() + self.epsilon * Self::perturbation(x, y).0) * e
    }

    /// The `eps -> 0` limit `u_0 = sin(phi) e^-t`.
    pub fn limit_u(&self, x: f64, y: f64, t: f64) -> f64 {
        self.phi(x, y).0.sin() * (-t).exp()
    }

    pub fn gradient(&self, x: f64, y: f64, t: f64) -> [f64; 2] {
        let (_, g0, _) = self.limit_parts(x, y, t);
        let (_, gw, _) = Self::perturbation(x, y);
        let c = self.epsilon * (-t).exp();
        [g0[0] + c * gw[0], g0[1] + c * gw[1]]
    }

    pub fn hessian(&self, x: f64, y: f64, t: f64) -> Hessian {
        let (_, _, h0) = self.limit_parts(x, y, t);
        let (_, _, hw) = Self::perturbation(x, y);
        let c = self.epsilon * (-t).exp();
        std::array::from_fn(|i| std::array::from_fn(|j| h0[i][j] + c * hw[i][j]))
    }

    /// Source term for `A_par = 1`, `A_perp = I`:
    /// `f = u_t - lap(u) - (1 - eps) div(b (b . grad w))`, where `w` is the
    /// time-dependent perturbation. The field-aligned part carries no
    /// parallel flux, so `1/eps` never appears explicitly.
    pub fn force(&self, x: f64, y: f64, t: f64) -> f64 {
        let e = (-t).exp();
        let u = self.exact_u(x, y, t);
        let h = self.hessian(x, y, t);
        let lap = h[0][0] + h[1][1];
        let (_, gw, hw) = Self::perturbation(x, y);
        let gw = [gw[0] * e, gw[1] * e];
        let hw: Hessian = std::array::from_fn(|i| std::array::from_fn(|j| hw[i][j] * e));
        let s = eval_field(&self.field(), [x, y], t);
        let (b, jac) = (s.b, s.jac_b);
        let b_dot_gw = b[0] * gw[0] + b[1] * gw[1];
        let div_b = jac[0][0] + jac[1][1];
        let jb = [jac[0][0] * b[0] + jac[0][1] * b[1], jac[1][0] * b[0] + jac[1][1] * b[1]];
        let bhb = b[0] * (hw[0][0] * b[0] + hw[0][1] * b[1]) + b[1] * (hw[1][0] * b[0] + hw[1][1] * b[1]);
        let par_div = div_b * b_dot_gw + jb[0] * gw[0] + jb[1] * gw[1] + bhb;
        -u - lap - (1.0 - self.epsilon) * par_div
    }

    pub fn force_fn(&self) -> SpaceTimeFn {
        let c = *self;
        SpaceTimeFn::new(move |x, y, t| c.force(x, y, t))
    }

    /// The problem on an `n x n`-interval grid of the unit square.
    pub fn problem(&self, n: usize) -> Result<Problem> {
        Ok(Problem {
            grid: build_grid(n, n, Rect::unit(), false)?,
            field: self.field(),
            coeffs: DiffusionCoeffs::default(),
            boundary: BoundarySpec::analytic_test(),
            force: Some(self.force_fn()),
        })
    }

    /// Nodal interpolant of the exact solution at time `t`.
    pub fn interpolant(&self, grid: &Grid, t: f64) -> Vec<f64> {
        grid.interpolate(|x, y| self.exact_u(x, y, t))
    }
}

/// `sqrt(int (u_h - u)^2)` by 3x3 Gauss quadrature on every element.
pub fn l2_error_fn(grid: &Grid, re: &RefElement, u_h: &[f64], exact: impl Fn(f64, f64) -> f64) -> Result<f64> {
    if u_h.len() != grid.n_dofs() {
        return Err(Error::Dimension(format!("{} nodal values for {} dofs", u_h.len(), grid.n_dofs())));
    }
    let (hx, hy) = (grid.hx(), grid.hy());
    let mut acc = 0.0;
    for el in grid.elements() {
        for q in 0..QUAD_POINTS {
            let [xi, eta] = re.point(q);
            let x = el.origin[0] + hx * (1.0 + xi);
            let y = el.origin[1] + hy * (1.0 + eta);
            let v = re.values(q);
            let uh: f64 = (0..NODES).map(|k| u_h[el.dofs[k]] * v[k]).sum();
            let d = uh - exact(x, y);
            acc += re.weight(q) * hx * hy * d * d;
        }
    }
    Ok(acc.sqrt())
}

/// L2 error of `u_h` against the manufactured solution at time `t`.
pub fn l2_error(u_h: &[f64], case: &ManufacturedCase, t: f64, grid: &Grid, re: &RefElement) -> Result<f64> {
    l2_error_fn(grid, re, u_h, |x, y| case.exact_u(x, y, t))
}

/// L2 norm of the difference of two finite-element functions, `|a - b|_M`.
pub fn l2_distance(mass: &SparseMatrix, a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    mass.quadratic_form(&d).max(0.0).sqrt()
}

/// Refinement axis of a convergence study.
#[derive(Debug, Clone, PartialEq)]
pub enum Axis {
    /// Mesh sizes `h` (unit square, `1/h` intervals per side) at fixed step.
    Space { levels: Vec<f64>, tau: f64, steps: usize },
    /// Time steps reaching `t_final` on a fixed `n x n` grid.
    Time { taus: Vec<f64>, n: usize, t_final: f64 },
}

impl Axis {
    fn schedule(&self) -> &[f64] {
        match self {
            Axis::Space { levels, .. } => levels,
            Axis::Time { taus, .. } => taus,
        }
    }
}

/// How errors are measured.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ErrorMeasure {
    /// Against the manufactured solution.
    Exact,
    /// Against a same-grid solution with time step `tau_min / factor`
    /// (Richardson-extrapolated for Euler variants), which isolates the
    /// temporal error.
    TemporalReference { factor: usize },
}

#[derive(Debug, Clone)]
pub struct StudySpec {
    pub axis: Axis,
    pub variants: Vec<Variant>,
    pub epsilon: f64,
    pub alpha: f64,
    pub measure: ErrorMeasure,
    pub q_boundary: QBoundary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRow {
    pub variant: Variant,
    pub epsilon: f64,
    pub h: f64,
    pub tau: f64,
    pub steps: usize,
    pub t_final: f64,
    pub l2_error: f64,
    /// `log(e_prev / e) / log(s_prev / s)`; absent on the first level.
    pub observed_order: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConvergenceReport {
    pub rows: Vec<ConvergenceRow>,
}

impl ConvergenceReport {
    pub fn for_variant(&self, v: Variant) -> Vec<&ConvergenceRow> {
        self.rows.iter().filter(|r| r.variant == v).collect()
    }

    pub fn errors(&self, v: Variant) -> Vec<f64> {
        self.for_variant(v).iter().map(|r| r.l2_error).collect()
    }

    pub fn orders(&self, v: Variant) -> Vec<f64> {
        self.for_variant(v).iter().filter_map(|r| r.observed_order).collect()
    }

    /// CSV with the given leading comment line (if any) and a header row.
    pub fn write_csv<W: Write>(&self, mut out: W, comment: Option<&str>) -> Result<()> {
        if let Some(c) = comment {
            writeln!(out, "# {c}")?;
        }
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["variant", "epsilon", "h", "tau", "steps", "t_final", "l2_error", "observed_order"])?;
        for r in &self.rows {
            w.write_record([
                r.variant.name().to_string(),
                format!("{:.6e}", r.epsilon),
                format!("{:.6e}", r.h),
                format!("{:.6e}", r.tau),
                r.steps.to_string(),
                format!("{:.6e}", r.t_final),
                format!("{:.6e}", r.l2_error),
                r.observed_order.map(|o| format!("{o:.6e}")).unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn validate_schedule(s: &[f64]) -> Result<()> {
    if s.is_empty() {
        return Err(Error::config("empty refinement schedule"));
    }
    if s.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(Error::config("schedule entries must be positive"));
    }
    for w in s.windows(2) {
        if w[0] == w[1] {
            return Err(Error::config(format!("schedule repeats the entry {}", w[0])));
        }
        if w[1] > w[0] {
            return Err(Error::config("schedule entries must decrease"));
        }
    }
    Ok(())
}

/// Intervals per side for mesh size `h` on the unit square.
pub fn intervals_for(h: f64) -> Result<usize> {
    let n = (1.0 / h).round();
    if (n * h - 1.0).abs() > 1e-9 || n < 2.0 || !(n as usize).is_multiple_of(2) {
        return Err(Error::config(format!("mesh size {h} does not give an even interval count")));
    }
    Ok(n as usize)
}

/// Steps of size `tau` reaching `t_final`.
pub fn steps_for(tau: f64, t_final: f64) -> Result<usize> {
    let k = (t_final / tau).round();
    if k < 1.0 || (k * tau - t_final).abs() > 1e-9 * t_final {
        return Err(Error::config(format!("time step {tau} does not divide the final time {t_final}")));
    }
    Ok(k as usize)
}

/// Advance the manufactured problem from its exact initial state.
pub fn solve_case(
    case: &ManufacturedCase,
    variant: Variant,
    q_boundary: QBoundary,
    n: usize,
    tau: f64,
    steps: usize,
) -> Result<(Grid, State)> {
    let problem = case.problem(n)?;
    let grid = problem.grid.clone();
    let cfg = SchemeConfig { q_boundary, ..SchemeConfig::new(variant, case.epsilon, tau)? };
    let mut stepper = Stepper::new(cfg, problem)?;
    let init = State::new(0.0, case.interpolant(&grid, 0.0));
    let out = run(&mut stepper, init, steps, |_, _| Ok(()))?;
    Ok((grid, out.state))
}

fn temporal_reference(
    case: &ManufacturedCase,
    variant: Variant,
    qb: QBoundary,
    n: usize,
    tau: f64,
    t_final: f64,
) -> Result<Vec<f64>> {
    let steps = steps_for(tau, t_final)?;
    if variant.is_dirk() {
        return Ok(solve_case(case, variant, qb, n, tau, steps)?.1.u);
    }
    let (_, coarse) = solve_case(case, variant, qb, n, tau, steps)?;
    let (_, fine) = solve_case(case, variant, qb, n, tau / 2.0, 2 * steps)?;
    Ok(fine.u.iter().zip(&coarse.u).map(|(f, c)| 2.0 * f - c).collect())
}

/// Run every (variant, level) pair, concurrently, and tabulate errors with
/// observed orders. Rows are ordered by variant, then by schedule index.
pub fn convergence_study(spec: &StudySpec) -> Result<ConvergenceReport> {
    let schedule = spec.axis.schedule();
    validate_schedule(schedule)?;
    if spec.variants.is_empty() {
        return Err(Error::config("no variants requested"));
    }
    let case = ManufacturedCase::new(spec.alpha, spec.epsilon)?;
    let re = RefElement::new();

    let references: Vec<Option<Vec<f64>>> = match (&spec.axis, spec.measure) {
        (Axis::Time { taus, n, t_final }, ErrorMeasure::TemporalReference { factor }) => {
            let tau_ref = taus[taus.len() - 1] / factor.max(1) as f64;
            spec.variants
                .par_iter()
                .map(|&v| temporal_reference(&case, v, spec.q_boundary, *n, tau_ref, *t_final).map(Some))
                .collect::<Result<_>>()?
        }
        (Axis::Space { .. }, ErrorMeasure::TemporalReference { .. }) => {
            return Err(Error::config("a temporal reference only applies to time studies"));
        }
        _ => vec![None; spec.variants.len()],
    };

    let jobs: Vec<(usize, usize)> =
        (0..spec.variants.len()).flat_map(|vi| (0..schedule.len()).map(move |li| (vi, li))).collect();
    let results: Vec<ConvergenceRow> = jobs
        .par_iter()
        .map(|&(vi, li)| {
            let variant = spec.variants[vi];
            let (n, tau, steps) = match &spec.axis {
                Axis::Space { levels, tau, steps } => (intervals_for(levels[li])?, *tau, *steps),
                Axis::Time { taus, n, t_final } => (*n, taus[li], steps_for(taus[li], *t_final)?),
            };
            let (grid, state) = solve_case(&case, variant, spec.q_boundary, n, tau, steps)?;
            let err = match &references[vi] {
                Some(r) => l2_distance(&Assembler::new(&grid).mass(), &state.u, r),
                None => l2_error(&state.u, &case, state.t, &grid, &re)?,
            };
            Ok(ConvergenceRow {
                variant,
                epsilon: spec.epsilon,
                h: grid.h(),
                tau,
                steps,
                t_final: state.t,
                l2_error: err,
                observed_order: None,
            })
        })
        .collect::<Result<_>>()?;

    let mut rows = results;
    for vi in 0..spec.variants.len() {
        for li in 1..schedule.len() {
            let (prev, cur) = (vi * schedule.len() + li - 1, vi * schedule.len() + li);
            let ratio = schedule[li - 1] / schedule[li];
            rows[cur].observed_order = Some((rows[prev].l2_error / rows[cur].l2_error).ln() / ratio.ln());
        }
    }
    Ok(ConvergenceReport { rows })
}

/// Condition estimate of one stage operator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionRow {
    pub variant: Variant,
    pub epsilon: f64,
    pub condition: f64,
}

/// 2-norm condition estimates of the constrained implicit-Euler operator of
/// the manufactured problem on an `n x n` grid, at each `eps`.
pub fn condition_study(
    variants: &[Variant],
    epsilons: &[f64],
    n: usize,
    tau: f64,
    alpha: f64,
    q_boundary: QBoundary,
) -> Result<Vec<ConditionRow>> {
    let jobs: Vec<(Variant, f64)> = variants.iter().flat_map(|&v| epsilons.iter().map(move |&e| (v, e))).collect();
    jobs.par_iter()
        .map(|&(variant, epsilon)| {
            let case = ManufacturedCase::new(alpha, epsilon)?;
            let cfg = SchemeConfig { q_boundary, ..SchemeConfig::new(variant, epsilon, tau)? };
            let mut stepper = Stepper::new(cfg, case.problem(n)?)?;
            let a = stepper.constrained_stage_matrix(tau, 0.0)?;
            Ok(ConditionRow { variant, epsilon, condition: estimate_condition(&a)? })
        })
        .collect()
}

/// CSV with columns `variant,epsilon,condition`.
pub fn write_condition_csv<W: Write>(rows: &[ConditionRow], mut out: W, comment: Option<&str>) -> Result<()> {
    if let Some(c) = comment {
        writeln!(out, "# {c}")?;
    }
    writeln!(out, "variant,epsilon,condition")?;
    for r in rows {
        writeln!(out, "{},{:.6e},{:.6e}", r.variant.name(), r.epsilon, r.condition)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_solution_examples() {
        for alpha in [0.0, 0.5, 1.0] {
            for eps in [0.0, 0.3, 1.0] {
                let c = ManufacturedCase::new(alpha, eps).unwrap();
                assert!((c.exact_u(0.5, 0.5, 0.0) - (1.0 - eps)).abs() < 1e-14);
                assert!(c.exact_u(0.3, 0.0, 0.7).abs() < 1e-14);
                assert!(c.exact_u(0.3, 1.0, 0.7).abs() < 1e-14);
            }
        }
        let c = ManufacturedCase::new(1.0, 0.0).unwrap();
        assert_eq!(c.exact_u(0.21, 0.37, 0.4), c.limit_u(0.21, 0.37, 0.4));
    }

    #[test]
    fn force_examples_without_field_variation() {
        let c = ManufacturedCase::new(0.0, 1.0).unwrap();
        assert!((c.force(0.25, 0.5, 0.0) - (PI * PI - 1.0)).abs() < 1e-12);
        let c = ManufacturedCase::new(0.0, 0.5).unwrap();
        assert!((c.force(0.0, 0.5, 0.0) - (5.5 * PI * PI - 1.5)).abs() < 1e-12);
    }

    #[test]
    fn force_is_uniform_in_epsilon() {
        let a = ManufacturedCase::new(1.0, 1e-10).unwrap();
        let b = ManufacturedCase::new(1.0, 1e-20).unwrap();
        for &(x, y) in &[(0.1, 0.2), (0.5, 0.5), (0.9, 0.7)] {
            assert!((a.force(x, y, 0.3) - b.force(x, y, 0.3)).abs() <= 1e-9);
        }
    }

    #[test]
    fn schedule_validation() {
        assert!(validate_schedule(&[0.1, 0.1]).is_err());
        assert!(validate_schedule(&[0.05, 0.1]).is_err());
        assert!(validate_schedule(&[0.1, 0.05, 0.025]).is_ok());
        assert_eq!(intervals_for(0.0125).unwrap(), 80);
        assert!(intervals_for(0.3).is_err());
        assert_eq!(steps_for(0.025, 0.1).unwrap(), 4);
    }

    #[test]
    fn q2_reproduces_quadratics_in_l2() {
        let g = build_grid(4, 6, Rect::unit(), false).unwrap();
        let f = |x: f64, y: f64| 1.0 + x * y - 2.0 * x * x * y * y + y * y;
        let u = g.interpolate(f);
        let e = l2_error_fn(&g, &RefElement::new(), &u, f).unwrap();
        assert!(e < 1e-13, "{e}");
    }
}
