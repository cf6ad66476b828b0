//! Implicit time stepping: the standard one-field scheme and the (u, q)
//! schemes with inflow-constrained or penalty-stabilized auxiliary variable,
//! each with implicit Euler or a two-stage L-stable DIRK method.

use std::fmt;
use std::str::FromStr;

use crate::assembly::{AssembledForms, Assembler, Constraints, SparseMatrix};
use crate::error::{Error, Result};
use crate::field::{inflow_nodes, DiffusionCoeffs, FieldSpec};
use crate::grid::{classify_boundary, BoundarySpec, BoundaryTagging, Grid, SpaceTimeFn};
use crate::linsolve::{build_block_system, Factorization, SingularPolicy};

/// DIRK diagonal coefficient `1 - 1/sqrt(2)`.
pub const DIRK_LAMBDA: f64 = 1.0 - std::f64::consts::FRAC_1_SQRT_2;

pub const DEFAULT_PENALTY_EXPONENT: i32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    /// One-field scheme with the `1/eps` parallel term.
    P,
    EulerAp,
    EulerAps,
    RkAp,
    RkAps,
}

impl Variant {
    pub const ALL: [Variant; 5] = [Variant::P, Variant::EulerAp, Variant::EulerAps, Variant::RkAp, Variant::RkAps];

    pub fn name(self) -> &'static str {
        match self {
            Variant::P => "p",
            Variant::EulerAp => "e_ap",
            Variant::EulerAps => "e_aps",
            Variant::RkAp => "rk_ap",
            Variant::RkAps => "rk_aps",
        }
    }

    pub fn is_dirk(self) -> bool {
        matches!(self, Variant::RkAp | Variant::RkAps)
    }

    /// Solves for the auxiliary variable `q`.
    pub fn has_q(self) -> bool {
        self != Variant::P
    }

    /// Pins `q = 0` on the inflow boundary.
    pub fn constrains_q(self) -> bool {
        matches!(self, Variant::EulerAp | Variant::RkAp)
    }

    /// Adds the `h^(k+1) M` penalty to the q-equation.
    pub fn is_stabilized(self) -> bool {
        matches!(self, Variant::EulerAps | Variant::RkAps)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == key)
            .ok_or_else(|| Error::config(format!("unknown variant '{s}' (expected p, e_ap, e_aps, rk_ap, rk_aps)")))
    }
}

/// Where `q = 0` is pinned beyond the variant's own rule (inflow nodes for
/// AP, nothing for APS).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum QBoundary {
    /// The variant's own rule only. With Dirichlet edges that are not inflow,
    /// the AP q-equation then carries more rows than free u-dofs and the
    /// small-`eps` system locks; APS keeps third order only on coarse grids.
    Natural,
    /// Also pin the Dirichlet nodes of `u`, so q test functions vanish
    /// wherever u test functions do.
    #[default]
    Dirichlet,
}

impl QBoundary {
    pub fn name(self) -> &'static str {
        match self {
            Self::Natural => "natural",
            Self::Dirichlet => "dirichlet",
        }
    }
}

impl FromStr for QBoundary {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "natural" => Ok(Self::Natural),
            "dirichlet" => Ok(Self::Dirichlet),
            _ => Err(Error::config(format!("unknown q boundary '{s}' (expected natural or dirichlet)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchemeConfig {
    pub variant: Variant,
    pub epsilon: f64,
    pub tau: f64,
    pub penalty_exponent: i32,
    pub lambda: f64,
    pub q_boundary: QBoundary,
}

impl SchemeConfig {
    /// Validated configuration with the default penalty exponent and DIRK
    /// coefficient. `epsilon = 0` is accepted for the stabilized variants only.
    pub fn new(variant: Variant, epsilon: f64, tau: f64) -> Result<Self> {
        let cfg = Self {
            variant,
            epsilon,
            tau,
            penalty_exponent: DEFAULT_PENALTY_EXPONENT,
            lambda: DIRK_LAMBDA,
            q_boundary: QBoundary::default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::config(format!("time step {} must be positive", self.tau)));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::config(format!("epsilon {} must lie in (0, 1]", self.epsilon)));
        }
        if self.epsilon == 0.0 && !self.variant.is_stabilized() {
            return Err(Error::config(format!(
                "the limit epsilon = 0 is only defined for the stabilized variants, not {}",
                self.variant
            )));
        }
        if self.penalty_exponent < 0 {
            return Err(Error::config("penalty exponent must be non-negative"));
        }
        if self.variant.is_dirk() && (self.lambda - DIRK_LAMBDA).abs() > 1e-15 {
            return Err(Error::config("the DIRK coefficient is fixed at 1 - 1/sqrt(2)"));
        }
        Ok(())
    }

    /// `h^(k+1)` for stabilized variants, 0 otherwise.
    pub fn penalty_coefficient(&self, h: f64) -> f64 {
        if self.variant.is_stabilized() {
            h.powi(self.penalty_exponent)
        } else {
            0.0
        }
    }
}

/// Grid, field, coefficients, boundary conditions and source of one problem.
#[derive(Debug, Clone)]
pub struct Problem {
    pub grid: Grid,
    pub field: FieldSpec,
    pub coeffs: DiffusionCoeffs,
    pub boundary: BoundarySpec,
    pub force: Option<SpaceTimeFn>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub t: f64,
    pub u: Vec<f64>,
    pub q: Option<Vec<f64>>,
}

impl State {
    pub fn new(t: f64, u: Vec<f64>) -> Self {
        Self { t, u, q: None }
    }
}

/// Per-step record returned by [`run`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    pub step: usize,
    pub t: f64,
    /// Numeric factorizations performed during this step.
    pub factorizations: usize,
    /// Some stage matrix was flagged numerically singular.
    pub ill_conditioned: bool,
}

/// Cached stage operators per stepper.
const OPERATOR_CACHE: usize = 4;

/// Tolerance, in element rows, when matching the phase of a translated field.
const PHASE_TOL: f64 = 1e-7;

struct Operator {
    tau_eff: f64,
    field_time: f64,
    /// Fractional element-row phase, for translated fields.
    phase: Option<f64>,
    raw: SparseMatrix,
    constraints: Constraints,
    q_fixed: Vec<usize>,
    fact: Factorization,
}

/// A field that moves rigidly in `y` on a periodic grid: its stage operator
/// at any time is a row/column permutation of the operator at the same
/// fractional phase of one element row.
#[derive(Debug, Clone, Copy)]
struct Drift {
    speed: f64,
    row_height: f64,
}

/// Advances states of one problem with one scheme. Stage operators are cached
/// by step coefficient and field time; for rigidly translating fields the key
/// is the phase within one element row, and hits are used through the
/// corresponding periodic shift of the unknowns.
pub struct Stepper {
    cfg: SchemeConfig,
    problem: Problem,
    assembler: Assembler,
    tagging: BoundaryTagging,
    mass: SparseMatrix,
    static_forms: Option<AssembledForms>,
    ops: Vec<Operator>,
    drift: Option<Drift>,
    reuse: bool,
    factorizations: usize,
    ill_conditioned: bool,
}

impl fmt::Debug for Stepper {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Stepper")
            .field("cfg", &self.cfg)
            .field("factorizations", &self.factorizations)
            .finish_non_exhaustive()
    }
}

impl Stepper {
    pub fn new(cfg: SchemeConfig, problem: Problem) -> Result<Self> {
        cfg.validate()?;
        let tagging = classify_boundary(&problem.grid, &problem.boundary)?;
        let assembler = Assembler::new(&problem.grid);
        let mass = assembler.mass();
        let drift = match problem.field.y_translation() {
            Some((speed, period)) if problem.grid.periodic_y() && problem.coeffs.is_uniform() => {
                let cycles = problem.grid.domain().height() / period;
                ((cycles - cycles.round()).abs() < 1e-12 && cycles.round() >= 1.0)
                    .then(|| Drift { speed, row_height: 2.0 * problem.grid.hy() })
            }
            _ => None,
        };
        Ok(Self {
            cfg,
            problem,
            assembler,
            tagging,
            mass,
            static_forms: None,
            ops: Vec::new(),
            drift,
            reuse: true,
            factorizations: 0,
            ill_conditioned: false,
        })
    }

    /// Disable operator caching (every stage refactorizes).
    pub fn without_reuse(mut self) -> Self {
        self.reuse = false;
        self
    }

    pub fn config(&self) -> &SchemeConfig {
        &self.cfg
    }

    pub fn problem(&self) -> &Problem {
        &self.problem
    }

    pub fn assembler(&self) -> &Assembler {
        &self.assembler
    }

    pub fn tagging(&self) -> &BoundaryTagging {
        &self.tagging
    }

    pub fn mass(&self) -> &SparseMatrix {
        &self.mass
    }

    /// Total numeric factorizations so far.
    pub fn factorizations(&self) -> usize {
        self.factorizations
    }

    pub fn n_unknowns(&self) -> usize {
        let n = self.problem.grid.n_dofs();
        if self.cfg.variant.has_q() {
            2 * n
        } else {
            n
        }
    }

    fn forms_at(&mut self, t: f64) -> AssembledForms {
        let p = &self.problem;
        if p.field.is_static() {
            if let Some(f) = &self.static_forms {
                return f.clone();
            }
            let f = self.assembler.forms(&self.mass, &p.field, &p.coeffs, t);
            self.static_forms = Some(f.clone());
            return f;
        }
        self.assembler.forms(&self.mass, &p.field, &p.coeffs, t)
    }

    /// Unconstrained stage matrix with step coefficient `tau_eff` and the
    /// field at time `t`.
    pub fn stage_matrix(&mut self, tau_eff: f64, t: f64) -> Result<SparseMatrix> {
        let forms = self.forms_at(t);
        if self.cfg.variant.has_q() {
            let n = self.problem.grid.n_dofs();
            let sys = build_block_system(&forms, &self.cfg, tau_eff, self.problem.grid.h(), vec![0.0; n])?;
            sys.monolithic()
        } else {
            SparseMatrix::linear_combination(&[
                (1.0, &forms.mass),
                (tau_eff, &forms.k_perp),
                (tau_eff / self.cfg.epsilon, &forms.k_par),
            ])
        }
    }

    fn q_fixed_at(&self, t: f64) -> Vec<usize> {
        if !self.cfg.variant.has_q() {
            return Vec::new();
        }
        let mut v = if self.cfg.variant.constrains_q() {
            inflow_nodes(&self.problem.field, &self.problem.grid, t)
        } else {
            Vec::new()
        };
        if self.cfg.q_boundary == QBoundary::Dirichlet {
            v.extend_from_slice(self.tagging.dirichlet_dofs());
            v.sort_unstable();
            v.dedup();
        }
        v
    }

    fn homogeneous_constraints(&self, q_fixed: &[usize]) -> Result<Constraints> {
        let mut fixed: Vec<(usize, f64)> = self.tagging.dirichlet_dofs().iter().map(|&d| (d, 0.0)).collect();
        let n = self.problem.grid.n_dofs();
        fixed.extend(q_fixed.iter().map(|&d| (n + d, 0.0)));
        Constraints::new(fixed)
    }

    /// Stage matrix after elimination of the Dirichlet (and pinned `q`)
    /// unknowns: the operator that is actually factorized.
    pub fn constrained_stage_matrix(&mut self, tau_eff: f64, t: f64) -> Result<SparseMatrix> {
        let raw = self.stage_matrix(tau_eff, t)?;
        let q_fixed = self.q_fixed_at(t);
        self.homogeneous_constraints(&q_fixed)?.apply_matrix(&raw)
    }

    /// Whole element rows the field at `t` is shifted by relative to the
    /// base time with the same phase, the phase, and the base time.
    fn drift_split(&self, d: Drift, t: f64) -> (usize, f64, f64) {
        let sigma = d.speed * t / d.row_height;
        let mut k = sigma.floor();
        let mut frac = sigma - k;
        if frac > 1.0 - PHASE_TOL {
            k += 1.0;
            frac = 0.0;
        }
        let rows = (self.problem.grid.ny() / 2) as i64;
        let shift = (k as i64).rem_euclid(rows) as usize;
        (shift, frac, t - k * d.row_height / d.speed)
    }

    /// `perm[d]` is the dof that `d` maps to when the grid is moved down by
    /// `shift` element rows.
    fn row_shift(&self, shift: usize) -> Vec<usize> {
        let g = &self.problem.grid;
        let ny = g.ny();
        let back = ny - (2 * shift) % ny;
        (0..g.n_dofs())
            .map(|d| {
                let (i, j) = g.lattice_of(d);
                g.dof(i, (j + back) % ny)
            })
            .collect()
    }

    /// Index of a ready operator for a stage at `t`, and the element-row
    /// shift between `t` and that operator's field.
    fn prepare_operator(&mut self, tau_eff: f64, t: f64) -> Result<(usize, usize)> {
        let drift = if self.reuse { self.drift } else { None };
        let (shift, phase, base_t) = match drift {
            Some(d) => {
                let (s, f, bt) = self.drift_split(d, t);
                (s, Some(f), bt)
            }
            None => (0, None, t),
        };
        let field_time = if self.problem.field.is_static() { 0.0 } else { base_t };
        let mut q_fixed = self.q_fixed_at(t);
        if shift != 0 {
            let perm = self.row_shift(shift);
            q_fixed.iter_mut().for_each(|d| *d = perm[*d]);
            q_fixed.sort_unstable();
        }
        if self.reuse {
            let hit = self.ops.iter().position(|op| {
                op.tau_eff == tau_eff
                    && op.q_fixed == q_fixed
                    && match (op.phase, phase) {
                        (Some(a), Some(b)) => (a - b).abs() < PHASE_TOL,
                        _ => op.field_time == field_time,
                    }
            });
            if let Some(i) = hit {
                return Ok((i, shift));
            }
        }
        let raw = self.stage_matrix(tau_eff, base_t)?;
        let pattern_constraints = self.homogeneous_constraints(&q_fixed)?;
        let constrained = pattern_constraints.apply_matrix(&raw)?;
        let policy = if self.cfg.variant.has_q() { SingularPolicy::Reject } else { SingularPolicy::Flag };
        let capacity = if self.reuse { OPERATOR_CACHE } else { 1 };
        let fact = if self.ops.len() >= capacity {
            let mut fact = self.ops.remove(0).fact;
            fact.refactor(&constrained)?;
            fact
        } else {
            Factorization::new(&constrained, policy)?
        };
        self.factorizations += 1;
        self.ill_conditioned |= fact.is_ill_conditioned();
        self.ops.push(Operator { tau_eff, field_time, phase, raw, constraints: pattern_constraints, q_fixed, fact });
        Ok((self.ops.len() - 1, shift))
    }

    /// Load plus Neumann vector at time `t`.
    pub fn source(&self, t: f64) -> Vec<f64> {
        let mut r = self.assembler.neumann(&self.tagging, t);
        if let Some(f) = &self.problem.force {
            for (ri, li) in r.iter_mut().zip(self.assembler.load(f, t)) {
                *ri += li;
            }
        }
        r
    }

    /// One implicit stage: solve with coefficient `tau_eff`, data at `t`, and
    /// u-row right-hand side `base + tau_eff * source(t)`.
    fn solve_stage(&mut self, tau_eff: f64, t: f64, base: Vec<f64>) -> Result<(Vec<f64>, Option<Vec<f64>>)> {
        let (idx, shift) = self.prepare_operator(tau_eff, t)?;
        let n = self.problem.grid.n_dofs();
        let mut rhs = base;
        for (r, s) in rhs.iter_mut().zip(self.source(t)) {
            *r += tau_eff * s;
        }
        if self.cfg.variant.has_q() {
            rhs.resize(2 * n, 0.0);
        }
        let g = self.tagging.dirichlet_values(&self.problem.grid, t);
        let perm = (shift != 0).then(|| self.row_shift(shift));
        let to_base = |k: usize| match &perm {
            Some(p) if k < n => p[k],
            Some(p) => n + p[k - n],
            None => k,
        };
        let op = &self.ops[idx];
        let mut rhs_base = vec![0.0; rhs.len()];
        for (k, v) in rhs.iter().enumerate() {
            rhs_base[to_base(k)] = *v;
        }
        let mut values: Vec<(usize, f64)> = g.iter().map(|&(d, v)| (to_base(d), v)).collect();
        values.extend(op.q_fixed.iter().map(|&d| (n + d, 0.0)));
        let c = Constraints::new(values)?;
        debug_assert_eq!(c.len(), op.constraints.len());
        let rhs_base = c.apply_rhs(&op.raw, &rhs_base)?;
        let y = op.fact.solve(&rhs_base)?;
        let mut x: Vec<f64> = (0..y.len()).map(|k| y[to_base(k)]).collect();
        for &(d, v) in &g {
            x[d] = v;
        }
        if self.cfg.variant.has_q() {
            let q = x.split_off(n);
            Ok((x, Some(q)))
        } else {
            Ok((x, None))
        }
    }

    fn check_state(&self, state: &State) -> Result<()> {
        let n = self.problem.grid.n_dofs();
        if state.u.len() != n {
            return Err(Error::Dimension(format!("state has {} dofs, grid has {n}", state.u.len())));
        }
        Ok(())
    }

    /// One implicit Euler step (variants P, E_AP, E_APS).
    pub fn step_euler(&mut self, state: &State) -> Result<State> {
        if self.cfg.variant.is_dirk() {
            return Err(Error::config(format!("{} is not an Euler variant", self.cfg.variant)));
        }
        self.check_state(state)?;
        let t1 = state.t + self.cfg.tau;
        let base = self.mass.matvec(&state.u);
        let (u, q) = self.solve_stage(self.cfg.tau, t1, base)?;
        Ok(State { t: t1, u, q })
    }

    /// One two-stage DIRK step (variants RK_AP, RK_APS).
    pub fn step_dirk(&mut self, state: &State) -> Result<State> {
        if !self.cfg.variant.is_dirk() {
            return Err(Error::config(format!("{} is not a DIRK variant", self.cfg.variant)));
        }
        self.check_state(state)?;
        let (tau, lambda) = (self.cfg.tau, self.cfg.lambda);
        let m_un = self.mass.matvec(&state.u);
        let (u1, _) = self.solve_stage(lambda * tau, state.t + lambda * tau, m_un.clone())?;
        let m_u1 = self.mass.matvec(&u1);
        let base = dirk_second_stage_base(&m_un, &m_u1, lambda);
        let t1 = state.t + tau;
        let (u, q) = self.solve_stage(lambda * tau, t1, base)?;
        Ok(State { t: t1, u, q })
    }

    pub fn step(&mut self, state: &State) -> Result<State> {
        if self.cfg.variant.is_dirk() {
            self.step_dirk(state)
        } else {
            self.step_euler(state)
        }
    }
}

/// Mass-weighted base of the second DIRK stage:
/// `M u^n + ((1 - lambda) / lambda) (M u_1 - M u^n)`.
pub fn dirk_second_stage_base(m_un: &[f64], m_u1: &[f64], lambda: f64) -> Vec<f64> {
    let c = (1.0 - lambda) / lambda;
    m_un.iter().zip(m_u1).map(|(a, b)| a + c * (b - a)).collect()
}

/// Amplification factor of the DIRK step on `u' = z u`, built from the same
/// stage recurrences as [`Stepper::step_dirk`] with `M = 1`, `tau = 1`.
pub fn dirk_amplification(z: f64, lambda: f64) -> f64 {
    let stage = |base: f64| base / (1.0 - lambda * z);
    let u1 = stage(1.0);
    stage(dirk_second_stage_base(&[1.0], &[u1], lambda)[0])
}

/// Output of [`run`].
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub state: State,
    pub steps: Vec<StepInfo>,
}

/// Advance `n_steps` steps from `initial`, calling `on_step` after each.
pub fn run(
    stepper: &mut Stepper,
    initial: State,
    n_steps: usize,
    mut on_step: impl FnMut(usize, &State) -> Result<()>,
) -> Result<RunOutput> {
    if n_steps == 0 {
        return Err(Error::config("number of steps must be at least 1"));
    }
    let mut state = initial;
    let mut steps = Vec::with_capacity(n_steps);
    for k in 1..=n_steps {
        let before = stepper.factorizations;
        stepper.ill_conditioned = false;
        state = stepper.step(&state)?;
        steps.push(StepInfo {
            step: k,
            t: state.t,
            factorizations: stepper.factorizations - before,
            ill_conditioned: stepper.ill_conditioned,
        });
        on_step(k, &state)?;
    }
    Ok(RunOutput { state, steps })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, EdgeCondition, Rect};

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert_eq!("RK-APS".parse::<Variant>().unwrap(), Variant::RkAps);
        assert!("crank".parse::<Variant>().is_err());
    }

    #[test]
    fn config_validation() {
        assert!(SchemeConfig::new(Variant::EulerAps, 0.0, 0.1).is_ok());
        assert!(SchemeConfig::new(Variant::P, 0.0, 0.1).is_err());
        assert!(SchemeConfig::new(Variant::EulerAp, 0.0, 0.1).is_err());
        assert!(SchemeConfig::new(Variant::EulerAps, 1.5, 0.1).is_err());
        assert!(SchemeConfig::new(Variant::EulerAps, 1.0, 0.0).is_err());
        let c = SchemeConfig::new(Variant::RkAps, 1e-20, 0.1).unwrap();
        assert!((c.lambda - 0.29289321881).abs() < 1e-11);
        assert!((c.penalty_coefficient(0.1) - 1e-3).abs() < 1e-18);
        assert_eq!(SchemeConfig::new(Variant::RkAp, 1.0, 0.1).unwrap().penalty_coefficient(0.1), 0.0);
    }

    #[test]
    fn dirk_is_l_stable() {
        assert!((dirk_amplification(0.0, DIRK_LAMBDA) - 1.0).abs() < 1e-15);
        assert!(dirk_amplification(-1e6, DIRK_LAMBDA).abs() < 1e-5);
        // second-order agreement with exp(z) for small z
        let z = 1e-2;
        assert!((dirk_amplification(z, DIRK_LAMBDA) - z.exp()).abs() < 1e-6);
    }

    fn insulated_problem() -> Problem {
        let grid = build_grid(4, 4, Rect::unit(), false).unwrap();
        let n = EdgeCondition::Neumann(SpaceTimeFn::zero());
        Problem {
            grid,
            field: FieldSpec::analytic_test(1.0).unwrap(),
            coeffs: DiffusionCoeffs::default(),
            boundary: BoundarySpec { left: n.clone(), right: n.clone(), bottom: n.clone(), top: n },
            force: None,
        }
    }

    #[test]
    fn constants_are_steady() {
        for v in [Variant::P, Variant::EulerAps, Variant::RkAps] {
            let p = insulated_problem();
            let n = p.grid.n_dofs();
            let mut s = Stepper::new(SchemeConfig::new(v, 1e-3, 0.1).unwrap(), p).unwrap();
            let state = State::new(0.0, vec![0.7; n]);
            let next = s.step(&state).unwrap();
            for u in &next.u {
                assert!((u - 0.7).abs() < 1e-12, "{v}: {u}");
            }
        }
    }

    #[test]
    fn zero_steps_rejected() {
        let p = insulated_problem();
        let n = p.grid.n_dofs();
        let mut s = Stepper::new(SchemeConfig::new(Variant::EulerAps, 1.0, 0.1).unwrap(), p).unwrap();
        assert!(run(&mut s, State::new(0.0, vec![0.0; n]), 0, |_, _| Ok(())).is_err());
    }

    #[test]
    fn wrong_step_kind_rejected() {
        let p = insulated_problem();
        let n = p.grid.n_dofs();
        let mut s = Stepper::new(SchemeConfig::new(Variant::RkAps, 1.0, 0.1).unwrap(), p).unwrap();
        assert!(s.step_euler(&State::new(0.0, vec![0.0; n])).is_err());
    }

    fn moving_island(omega: f64) -> Problem {
        let grid = build_grid(8, 8, Rect::centered_unit(), true).unwrap();
        Problem {
            grid,
            field: FieldSpec::island(0.05, omega).unwrap(),
            coeffs: DiffusionCoeffs::default(),
            boundary: BoundarySpec {
                left: EdgeCondition::Dirichlet(SpaceTimeFn::constant(1.0)),
                right: EdgeCondition::Neumann(SpaceTimeFn::new(|_, y, t| y * (1.0 + t))),
                bottom: EdgeCondition::Periodic,
                top: EdgeCondition::Periodic,
            },
            force: Some(SpaceTimeFn::new(|x, y, _| x * y)),
        }
    }

    #[test]
    fn translated_operators_match_refactorization() {
        // element rows are 0.25 high; omega * tau = 1 row, then 0.37 rows
        for (omega, tau, max_facts) in [(25.0, 0.01, 2), (9.25, 0.01, 12)] {
            for v in [Variant::EulerAps, Variant::RkAps] {
                let cfg = SchemeConfig::new(v, 1e-3, tau).unwrap();
                let p = moving_island(omega);
                let u0 = p.grid.interpolate(|x, y| 0.5 - x + 0.1 * (6.0 * y).sin());
                let mut fast = Stepper::new(cfg, p.clone()).unwrap();
                let mut slow = Stepper::new(cfg, p).unwrap().without_reuse();
                let a = run(&mut fast, State::new(0.0, u0.clone()), 6, |_, _| Ok(())).unwrap();
                let b = run(&mut slow, State::new(0.0, u0), 6, |_, _| Ok(())).unwrap();
                let diff = a.state.u.iter().zip(&b.state.u).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
                assert!(diff < 1e-10, "{v} omega={omega}: {diff}");
                let stages = if v.is_dirk() { 12 } else { 6 };
                assert_eq!(slow.factorizations(), stages);
                assert!(fast.factorizations() <= max_facts.min(stages), "{v}: {}", fast.factorizations());
            }
        }
    }

    #[test]
    fn static_reuse_matches_refactorization() {
        let p = moving_island(0.0);
        let u0 = p.grid.interpolate(|x, _| 0.5 - x);
        let cfg = SchemeConfig::new(Variant::EulerAps, 1e-6, 0.05).unwrap();
        let mut fast = Stepper::new(cfg, p.clone()).unwrap();
        let mut slow = Stepper::new(cfg, p).unwrap().without_reuse();
        let a = run(&mut fast, State::new(0.0, u0.clone()), 4, |_, _| Ok(())).unwrap();
        let b = run(&mut slow, State::new(0.0, u0), 4, |_, _| Ok(())).unwrap();
        assert_eq!(fast.factorizations(), 1);
        for (x, y) in a.state.u.iter().zip(&b.state.u) {
            assert!((x - y).abs() <= 1e-14, "{x} {y}");
        }
    }
}
