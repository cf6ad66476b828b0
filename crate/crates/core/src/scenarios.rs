//! Magnetic-island transport runs and their diagnostics.
//!
//! The island field `B = (-2 pi A sin 2 pi (y - omega t), pi sin pi x)` has
//! flux function `cos pi x + A cos 2 pi (y - omega t)`, so the O-point sits at
//! `x = 0, y = omega t` and the X-point half a period away in `y`.

use std::io::Write;

use crate::error::{Error, Result};
use crate::fem_basis::{evaluate, RefElement, QUAD_POINTS};
use crate::field::{eval_field, island_width, DiffusionCoeffs, FieldSpec};
use crate::grid::{build_grid, BoundarySpec, EdgeCondition, Grid, Rect, SpaceTimeFn};
use crate::schemes::{run, Problem, QBoundary, SchemeConfig, State, Stepper, Variant};

/// Boundary data on the x-edges; the y-edges are always periodic.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BcCase {
    /// `u = 1` on the left edge, `u = 0` on the right edge.
    DirichletLeft,
    /// Unit inward heat flux on the left edge, `u = 0` on the right edge.
    NeumannLeft,
}

impl BcCase {
    pub fn name(self) -> &'static str {
        match self {
            BcCase::DirichletLeft => "dirichlet",
            BcCase::NeumannLeft => "neumann",
        }
    }
}

impl std::str::FromStr for BcCase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dirichlet" | "dirichlet_left" => Ok(BcCase::DirichletLeft),
            "neumann" | "neumann_left" => Ok(BcCase::NeumannLeft),
            _ => Err(Error::config(format!("unknown boundary case '{s}' (dirichlet, neumann)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IslandConfig {
    pub domain: Rect,
    pub amplitude: f64,
    pub omega: f64,
    pub epsilon: f64,
    pub nx: usize,
    pub ny: usize,
    pub tau: f64,
    pub n_steps: usize,
    pub bc_case: BcCase,
    pub variant: Variant,
    pub q_boundary: QBoundary,
    /// Profiles are recorded every this many steps, and at the last step.
    pub profile_every: usize,
    pub profile_samples: usize,
}

impl IslandConfig {
    /// Stationary island of amplitude 0.01 on `[-0.5, 0.5]^2`, 200x200,
    /// `eps = 1e-10`, 100 steps of 2.5e-3. Profiles are sampled at the grid
    /// nodes.
    pub fn standard(bc_case: BcCase) -> Self {
        Self {
            domain: Rect::centered_unit(),
            amplitude: 0.01,
            omega: 0.0,
            epsilon: 1e-10,
            nx: 200,
            ny: 200,
            tau: 2.5e-3,
            n_steps: 100,
            bc_case,
            variant: Variant::RkAps,
            q_boundary: QBoundary::default(),
            profile_every: 10,
            profile_samples: 201,
        }
    }

    /// Narrow island on `[-0.125, 0.125] x [-0.5, 0.5]` with `eps = 1e-3`.
    /// The grid, step and step count are left to the caller.
    pub fn fast_rotation(omega: f64, n: usize, tau: f64, n_steps: usize) -> Self {
        Self {
            domain: Rect::new(-0.125, 0.125, -0.5, 0.5).expect("valid rectangle"),
            amplitude: 0.000625,
            omega,
            epsilon: 1e-3,
            nx: n,
            ny: n,
            tau,
            n_steps,
            bc_case: BcCase::DirichletLeft,
            variant: Variant::RkAps,
            q_boundary: QBoundary::default(),
            profile_every: n_steps.max(1),
            profile_samples: n + 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        island_width(self.amplitude)?;
        if !self.omega.is_finite() {
            return Err(Error::config("rotation frequency must be finite"));
        }
        if self.amplitude > 0.0 && !self.variant.is_stabilized() && self.variant.has_q() {
            return Err(Error::config(format!(
                "{} cannot be used with an island (A > 0): closed field lines never reach \
                 the inflow boundary, so q is not determined there; use e_aps or rk_aps",
                self.variant
            )));
        }
        if self.n_steps == 0 {
            return Err(Error::config("number of steps must be at least 1"));
        }
        if self.profile_every == 0 || self.profile_samples < 2 {
            return Err(Error::config("profile cadence and sample count must be positive"));
        }
        SchemeConfig::new(self.variant, self.epsilon, self.tau)?;
        Ok(())
    }

    pub fn field(&self) -> Result<FieldSpec> {
        FieldSpec::island(self.amplitude, self.omega)
    }

    pub fn boundary(&self) -> BoundarySpec {
        let left = match self.bc_case {
            BcCase::DirichletLeft => EdgeCondition::Dirichlet(SpaceTimeFn::constant(1.0)),
            BcCase::NeumannLeft => EdgeCondition::Neumann(SpaceTimeFn::constant(1.0)),
        };
        BoundarySpec {
            left,
            right: EdgeCondition::Dirichlet(SpaceTimeFn::zero()),
            bottom: EdgeCondition::Periodic,
            top: EdgeCondition::Periodic,
        }
    }

    pub fn grid(&self) -> Result<Grid> {
        build_grid(self.nx, self.ny, self.domain, true)
    }

    /// `u0 = (x1 - x) / (x1 - x0)`, i.e. `-x + 1/2` on `[-0.5, 0.5]^2`.
    pub fn initial_state(&self, grid: &Grid) -> State {
        let d = self.domain;
        State::new(0.0, grid.interpolate(|x, _| (d.x1 - x) / d.width()))
    }

    /// O-point ordinate at time `t`, wrapped into the domain.
    pub fn o_point(&self, t: f64) -> f64 {
        let d = self.domain;
        d.y0 + (self.omega * t - d.y0).rem_euclid(d.height())
    }

    /// The line half a field period away from the O-point.
    pub fn offset_line(&self, t: f64) -> f64 {
        let yc = self.o_point(t);
        let mid = 0.5 * (self.domain.y0 + self.domain.y1);
        if yc < mid {
            yc + 0.5
        } else {
            yc - 0.5
        }
    }
}

/// Samples of `u` and `du/dx` along a horizontal line.
#[derive(Debug, Clone, PartialEq)]
pub struct Profile {
    pub y: f64,
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub du_dx: Vec<f64>,
}

/// Q2 values of `u` and `du/dx` at `n_samples` equispaced points from the
/// left to the right edge along `y = y_line`.
pub fn profile_x(state: &State, grid: &Grid, y_line: f64, n_samples: usize) -> Result<Profile> {
    let d = grid.domain();
    if !(y_line >= d.y0 && y_line <= d.y1) {
        return Err(Error::Domain(format!("profile line y = {y_line} outside [{}, {}]", d.y0, d.y1)));
    }
    if n_samples < 2 {
        return Err(Error::config("a profile needs at least two samples"));
    }
    let mut p = Profile { y: y_line, x: Vec::new(), u: Vec::new(), du_dx: Vec::new() };
    for k in 0..n_samples {
        let x = d.x0 + d.width() * k as f64 / (n_samples - 1) as f64;
        let (v, g) = evaluate(grid, &state.u, [x, y_line])?;
        p.x.push(x);
        p.u.push(v);
        p.du_dx.push(g[0]);
    }
    Ok(p)
}

/// `int u dx` by element quadrature (equal to `1^T M u`).
pub fn total_energy(state: &State, grid: &Grid, re: &RefElement) -> Result<f64> {
    if state.u.len() != grid.n_dofs() {
        return Err(Error::Dimension(format!("state has {} dofs, grid has {}", state.u.len(), grid.n_dofs())));
    }
    let jac = grid.hx() * grid.hy();
    let mut e = 0.0;
    for el in grid.elements() {
        for q in 0..QUAD_POINTS {
            let v: f64 = re.values(q).iter().zip(&el.dofs).map(|(s, &d)| s * state.u[d]).sum();
            e += re.weight(q) * jac * v;
        }
    }
    Ok(e)
}

/// Normalized distance between two profiles on the same sampling:
/// `|u_c - u_o| / (|u_c - l| + |u_o - l|)`, where `l` is the straight line
/// through the common end values. 0 means the profiles coincide; 1 means
/// they deviate from the line in opposite, equal ways or one of them is the
/// line and the other is not.
pub fn flattening_metric(center: &Profile, offset: &Profile) -> Result<f64> {
    let n = center.x.len();
    if n < 2 || offset.x.len() != n || center.u.len() != n || offset.u.len() != n {
        return Err(Error::Dimension("profiles have different sample counts".into()));
    }
    let tol = 1e-12 * (center.x[n - 1] - center.x[0]).abs().max(1.0);
    if center.x.iter().zip(&offset.x).any(|(a, b)| (a - b).abs() > tol) {
        return Err(Error::Dimension("profiles are sampled at different positions".into()));
    }
    let (x0, x1) = (center.x[0], center.x[n - 1]);
    let (u0, u1) = (0.5 * (center.u[0] + offset.u[0]), 0.5 * (center.u[n - 1] + offset.u[n - 1]));
    let line = |x: f64| u0 + (u1 - u0) * (x - x0) / (x1 - x0);
    let norm = |f: &dyn Fn(usize) -> f64| (0..n).map(|i| f(i).powi(2)).sum::<f64>().sqrt();
    let num = norm(&|i| center.u[i] - offset.u[i]);
    let den = norm(&|i| center.u[i] - line(center.x[i])) + norm(&|i| offset.u[i] - line(offset.x[i]));
    if den <= 1e-14 * n as f64 {
        return Ok(0.0);
    }
    Ok((num / den).min(1.0))
}

/// Length of the longest run of consecutive samples with
/// `|du/dx| < threshold`.
pub fn flat_width(profile: &Profile, threshold: f64) -> f64 {
    let n = profile.x.len();
    let mut best = 0.0f64;
    let mut start: Option<usize> = None;
    for i in 0..=n {
        let flat = i < n && profile.du_dx[i].abs() < threshold;
        match (flat, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                best = best.max(profile.x[i - 1] - profile.x[s]);
                start = None;
            }
            _ => {}
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergySample {
    pub step: usize,
    pub t: f64,
    pub energy: f64,
    pub max_u: f64,
}

/// Profiles at one time: along the X axis `y = 0` (or the domain's mid
/// line), across the O-point, and half a period away from it.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileSnapshot {
    pub step: usize,
    pub t: f64,
    pub axis: Profile,
    pub center: Profile,
    pub offset: Profile,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Diagnostics {
    /// One entry per step, plus the initial state as step 0.
    pub energy: Vec<EnergySample>,
    pub profiles: Vec<ProfileSnapshot>,
    pub factorizations: usize,
    pub ill_conditioned_steps: usize,
}

impl Diagnostics {
    /// Flat-region width along the X axis at each snapshot.
    pub fn flat_widths(&self, threshold: f64) -> Vec<f64> {
        self.profiles.iter().map(|s| flat_width(&s.axis, threshold)).collect()
    }

    pub fn final_flattening(&self) -> Result<f64> {
        let s = self.profiles.last().ok_or_else(|| Error::config("no profiles recorded"))?;
        flattening_metric(&s.center, &s.offset)
    }

    /// `step,t,energy,max_u`.
    pub fn write_energy_csv<W: Write>(&self, mut out: W, comment: Option<&str>) -> Result<()> {
        if let Some(c) = comment {
            writeln!(out, "# {c}")?;
        }
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["step", "t", "energy", "max_u"])?;
        for e in &self.energy {
            w.write_record([
                e.step.to_string(),
                format!("{:.9e}", e.t),
                format!("{:.9e}", e.energy),
                format!("{:.9e}", e.max_u),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `x,u,du_dx` for one profile.
pub fn write_profile_csv<W: Write>(profile: &Profile, mut out: W, comment: Option<&str>) -> Result<()> {
    if let Some(c) = comment {
        writeln!(out, "# {c}")?;
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["x", "u", "du_dx"])?;
    for i in 0..profile.x.len() {
        w.write_record([
            format!("{:.9e}", profile.x[i]),
            format!("{:.9e}", profile.u[i]),
            format!("{:.9e}", profile.du_dx[i]),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Legacy VTK structured-points file with the nodal field `u` and the unit
/// direction `b` of `field` at time `t`.
pub fn write_vtk<W: Write>(mut out: W, grid: &Grid, u: &[f64], field: &FieldSpec, t: f64, title: &str) -> Result<()> {
    if u.len() != grid.n_dofs() {
        return Err(Error::Dimension(format!("{} values for {} dofs", u.len(), grid.n_dofs())));
    }
    let (nx, ny) = (grid.nx() + 1, grid.ny() + 1);
    let d = grid.domain();
    writeln!(out, "# vtk DataFile Version 3.0")?;
    writeln!(out, "{}", title.replace('\n', " "))?;
    writeln!(out, "ASCII")?;
    writeln!(out, "DATASET STRUCTURED_POINTS")?;
    writeln!(out, "DIMENSIONS {nx} {ny} 1")?;
    writeln!(out, "ORIGIN {:e} {:e} 0", d.x0, d.y0)?;
    writeln!(out, "SPACING {:e} {:e} 1", grid.hx(), grid.hy())?;
    writeln!(out, "POINT_DATA {}", nx * ny)?;
    writeln!(out, "SCALARS u double 1")?;
    writeln!(out, "LOOKUP_TABLE default")?;
    for j in 0..ny {
        for i in 0..nx {
            writeln!(out, "{:.9e}", u[grid.dof(i, j)])?;
        }
    }
    writeln!(out, "VECTORS b double")?;
    for j in 0..ny {
        for i in 0..nx {
            let s = eval_field(field, [grid.x(i), grid.y(j)], t);
            writeln!(out, "{:.9e} {:.9e} 0", s.b[0], s.b[1])?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct IslandRun {
    pub config: IslandConfig,
    pub grid: Grid,
    pub state: State,
    pub diagnostics: Diagnostics,
}

fn snapshot(cfg: &IslandConfig, grid: &Grid, state: &State, step: usize) -> Result<ProfileSnapshot> {
    let d = cfg.domain;
    let axis_y = if d.y0 <= 0.0 && d.y1 >= 0.0 { 0.0 } else { 0.5 * (d.y0 + d.y1) };
    let n = cfg.profile_samples;
    Ok(ProfileSnapshot {
        step,
        t: state.t,
        axis: profile_x(state, grid, axis_y, n)?,
        center: profile_x(state, grid, cfg.o_point(state.t), n)?,
        offset: profile_x(state, grid, cfg.offset_line(state.t), n)?,
    })
}

fn energy_sample(grid: &Grid, re: &RefElement, state: &State, step: usize) -> Result<EnergySample> {
    Ok(EnergySample {
        step,
        t: state.t,
        energy: total_energy(state, grid, re)?,
        max_u: state.u.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    })
}

/// Run the island experiment from `u0`, recording energy every step and
/// profiles at the configured cadence.
pub fn run_island(cfg: &IslandConfig) -> Result<IslandRun> {
    cfg.validate()?;
    let grid = cfg.grid()?;
    let scheme = SchemeConfig { q_boundary: cfg.q_boundary, ..SchemeConfig::new(cfg.variant, cfg.epsilon, cfg.tau)? };
    let problem = Problem {
        grid: grid.clone(),
        field: cfg.field()?,
        coeffs: DiffusionCoeffs::default(),
        boundary: cfg.boundary(),
        force: None,
    };
    let mut stepper = Stepper::new(scheme, problem)?;
    let re = RefElement::new();
    let initial = cfg.initial_state(&grid);
    let mut diag = Diagnostics {
        energy: vec![energy_sample(&grid, &re, &initial, 0)?],
        profiles: vec![snapshot(cfg, &grid, &initial, 0)?],
        ..Default::default()
    };
    let out = run(&mut stepper, initial, cfg.n_steps, |k, s| {
        diag.energy.push(energy_sample(&grid, &re, s, k)?);
        if k % cfg.profile_every == 0 || k == cfg.n_steps {
            diag.profiles.push(snapshot(cfg, &grid, s, k)?);
        }
        Ok(())
    })?;
    diag.factorizations = stepper.factorizations();
    diag.ill_conditioned_steps = out.steps.iter().filter(|s| s.ill_conditioned).count();
    Ok(IslandRun { config: cfg.clone(), grid, state: out.state, diagnostics: diag })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(x: &[f64], f: impl Fn(f64) -> f64) -> Profile {
        Profile { y: 0.0, x: x.to_vec(), u: x.iter().map(|&v| f(v)).collect(), du_dx: vec![0.0; x.len()] }
    }

    #[test]
    fn bc_case_parsing() {
        assert_eq!("Neumann".parse::<BcCase>().unwrap(), BcCase::NeumannLeft);
        assert_eq!("dirichlet".parse::<BcCase>().unwrap(), BcCase::DirichletLeft);
        assert!("robin".parse::<BcCase>().is_err());
    }

    #[test]
    fn initial_profile_is_the_unit_ramp() {
        let cfg = IslandConfig { nx: 8, ny: 8, ..IslandConfig::standard(BcCase::DirichletLeft) };
        let g = cfg.grid().unwrap();
        let s = cfg.initial_state(&g);
        let p = profile_x(&s, &g, 0.0, 11).unwrap();
        for i in 0..11 {
            assert!((p.u[i] - (0.5 - p.x[i])).abs() < 1e-13);
            assert!((p.du_dx[i] + 1.0).abs() < 1e-12);
        }
        assert!((total_energy(&s, &g, &RefElement::new()).unwrap() - 0.5).abs() < 1e-14);
        assert!(profile_x(&s, &g, 0.6, 11).is_err());
    }

    #[test]
    fn profile_reproduces_quadratics() {
        let g = build_grid(6, 4, Rect::centered_unit(), true).unwrap();
        let s = State::new(0.0, g.interpolate(|x, _| x * x));
        let p = profile_x(&s, &g, 0.13, 17).unwrap();
        for i in 0..17 {
            assert!((p.u[i] - p.x[i].powi(2)).abs() < 1e-13);
            assert!((p.du_dx[i] - 2.0 * p.x[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn energy_of_constant() {
        let g = build_grid(4, 6, Rect::new(0.0, 2.0, 0.0, 1.5).unwrap(), false).unwrap();
        let s = State::new(0.0, vec![0.7; g.n_dofs()]);
        assert!((total_energy(&s, &g, &RefElement::new()).unwrap() - 0.7 * 3.0).abs() < 1e-13);
    }

    #[test]
    fn flattening_examples() {
        let x: Vec<f64> = (0..21).map(|i| -0.5 + i as f64 / 20.0).collect();
        let ramp = line(&x, |v| 0.5 - v);
        assert_eq!(flattening_metric(&ramp, &ramp).unwrap(), 0.0);
        let flat = line(&x, |v| if v.abs() < 0.1 { 0.5 } else { 0.5 - v });
        let m = flattening_metric(&flat, &ramp).unwrap();
        assert!((m - 1.0).abs() < 1e-12);
        assert!(flattening_metric(&flat, &line(&x[..20], |v| v)).is_err());
    }

    #[test]
    fn flat_width_counts_longest_run() {
        let x: Vec<f64> = (0..11).map(|i| i as f64 / 10.0).collect();
        let mut p = line(&x, |v| v);
        p.du_dx = vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0];
        assert!((flat_width(&p, 0.05) - 0.3).abs() < 1e-12);
    }

    #[test]
    fn o_point_wraps() {
        let cfg = IslandConfig { omega: 10.0, ..IslandConfig::standard(BcCase::DirichletLeft) };
        assert!((cfg.o_point(0.0) - 0.0).abs() < 1e-15);
        assert!((cfg.o_point(0.07) - (-0.3)).abs() < 1e-12);
        assert!((cfg.offset_line(0.07) - 0.2).abs() < 1e-12);
        assert!((cfg.offset_line(0.02) - (-0.3)).abs() < 1e-12);
    }

    #[test]
    fn ap_refused_with_island() {
        let cfg = IslandConfig { variant: Variant::EulerAp, ..IslandConfig::standard(BcCase::DirichletLeft) };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let cfg = IslandConfig { amplitude: 0.0, ..cfg };
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn unperturbed_island_is_stationary() {
        for bc in [BcCase::DirichletLeft, BcCase::NeumannLeft] {
            let cfg = IslandConfig {
                amplitude: 0.0,
                nx: 8,
                ny: 8,
                n_steps: 3,
                profile_every: 1,
                ..IslandConfig::standard(bc)
            };
            let r = run_island(&cfg).unwrap();
            for e in &r.diagnostics.energy {
                assert!((e.energy - 0.5).abs() < 1e-10, "{bc:?} {e:?}");
            }
            assert_eq!(r.diagnostics.profiles.len(), 4);
        }
    }

    #[test]
    fn vtk_header() {
        let g = build_grid(2, 2, Rect::unit(), false).unwrap();
        let mut buf = Vec::new();
        write_vtk(&mut buf, &g, &[0.0; 9], &FieldSpec::island(0.01, 0.0).unwrap(), 0.0, "t").unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("# vtk DataFile Version 3.0\n"));
        assert!(s.contains("DIMENSIONS 3 3 1"));
        assert_eq!(s.lines().count(), 10 + 9 + 1 + 9);
    }
}
