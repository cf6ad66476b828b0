use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use apheat::grid::Rect;
use apheat::scenarios::{run_island, write_profile_csv, write_vtk, IslandConfig};
use apheat::verification::{condition_study, convergence_study, write_condition_csv, Axis, ErrorMeasure, StudySpec};

use crate::config::{Command, Resolved, UsageError};

/// Failure of a run: bad input (exit 2) or a solver/IO error (exit 1).
#[derive(Debug)]
pub enum RunError {
    Usage(String),
    Solver(apheat::Error),
}

impl From<UsageError> for RunError {
    fn from(e: UsageError) -> Self {
        RunError::Usage(e.0)
    }
}

impl From<apheat::Error> for RunError {
    fn from(e: apheat::Error) -> Self {
        match e {
            apheat::Error::Config(m) => RunError::Usage(m),
            e => RunError::Solver(e),
        }
    }
}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        RunError::Solver(e.into())
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, RunError> {
    Ok(BufWriter::new(File::create(path)?))
}

/// Write `resolved.cfg` into `out` and run the command there.
pub fn execute(cfg: &Resolved, out: &Path) -> Result<(), RunError> {
    fs::create_dir_all(out)?;
    fs::write(out.join("resolved.cfg"), cfg.text())?;
    let tag = format!("config_sha256={}", cfg.sha256());
    match cfg.command {
        Command::ConvergeSpace | Command::ConvergeTime => converge(cfg, out, &tag),
        Command::Island => island(cfg, out, &tag),
        Command::Condition => condition(cfg, out, &tag),
    }
}

fn converge(cfg: &Resolved, out: &Path, tag: &str) -> Result<(), RunError> {
    let (axis, measure) = match cfg.command {
        Command::ConvergeSpace => (
            Axis::Space { levels: cfg.f64_list("levels")?, tau: cfg.f64("tau")?, steps: cfg.usize("steps")? },
            ErrorMeasure::Exact,
        ),
        _ => {
            let measure = match cfg.get("measure") {
                "exact" => ErrorMeasure::Exact,
                _ => ErrorMeasure::TemporalReference { factor: cfg.usize("reference_factor")? },
            };
            (Axis::Time { taus: cfg.f64_list("taus")?, n: cfg.usize("grid")?, t_final: cfg.f64("t_final")? }, measure)
        }
    };
    let variants = cfg.variants()?;
    let mut rows = Vec::new();
    for epsilon in cfg.epsilons()? {
        let spec = StudySpec {
            axis: axis.clone(),
            variants: variants.clone(),
            epsilon,
            alpha: cfg.f64("alpha")?,
            measure,
            q_boundary: cfg.q_boundary()?,
        };
        let report = convergence_study(&spec)?;
        for r in &report.rows {
            let order = r.observed_order.map(|o| format!("{o:.2}")).unwrap_or_else(|| "-".into());
            eprintln!(
                "{:>6} eps={:.1e} h={:.4e} tau={:.4e} error={:.4e} order={order}",
                r.variant.name(),
                r.epsilon,
                r.h,
                r.tau,
                r.l2_error
            );
        }
        rows.extend(report.rows);
    }
    let report = apheat::verification::ConvergenceReport { rows };
    let mut w = create(&out.join("convergence.csv"))?;
    report.write_csv(&mut w, Some(tag))?;
    w.flush()?;
    Ok(())
}

fn island(cfg: &Resolved, out: &Path, tag: &str) -> Result<(), RunError> {
    let d = cfg.f64_list("domain")?;
    let n = cfg.usize("grid")?;
    let eps = cfg.epsilons()?;
    if eps.len() != 1 {
        return Err(RunError::Usage("island takes a single epsilon".into()));
    }
    let variants = cfg.variants()?;
    if variants.len() != 1 {
        return Err(RunError::Usage("island takes a single variant".into()));
    }
    let ic = IslandConfig {
        domain: Rect::new(d[0], d[1], d[2], d[3])?,
        amplitude: cfg.f64("amplitude")?,
        omega: cfg.f64("omega")?,
        epsilon: eps[0],
        nx: n,
        ny: n,
        tau: cfg.f64("tau")?,
        n_steps: cfg.usize("steps")?,
        bc_case: cfg.get("bc").parse()?,
        variant: variants[0],
        q_boundary: cfg.q_boundary()?,
        profile_every: cfg.usize("profile_every")?,
        profile_samples: cfg.usize("profile_samples")?,
    };
    let run = run_island(&ic)?;
    let diag = &run.diagnostics;

    let mut w = create(&out.join("energy.csv"))?;
    diag.write_energy_csv(&mut w, Some(tag))?;
    w.flush()?;

    let pdir = out.join("profiles");
    fs::create_dir_all(&pdir)?;
    for s in &diag.profiles {
        for (name, p) in [("axis", &s.axis), ("center", &s.center), ("offset", &s.offset)] {
            let mut w = create(&pdir.join(format!("step{:06}_{name}.csv", s.step)))?;
            write_profile_csv(p, &mut w, Some(tag))?;
            w.flush()?;
        }
    }

    let last = diag.energy.last().expect("initial sample is always recorded");
    let flat = diag.flat_widths(0.05).last().copied().unwrap_or(0.0);
    let flattening = diag.final_flattening()?;
    let mut w = create(&out.join("summary.csv"))?;
    writeln!(w, "# {tag}")?;
    writeln!(w, "quantity,value")?;
    writeln!(w, "t_final,{:.6e}", last.t)?;
    writeln!(w, "final_energy,{:.6e}", last.energy)?;
    writeln!(w, "final_max_u,{:.6e}", last.max_u)?;
    writeln!(w, "final_flat_width,{flat:.6e}")?;
    writeln!(w, "final_flattening,{flattening:.6e}")?;
    writeln!(w, "factorizations,{}", diag.factorizations)?;
    writeln!(w, "ill_conditioned_steps,{}", diag.ill_conditioned_steps)?;
    w.flush()?;
    eprintln!(
        "t={:.4e} energy={:.6} max_u={:.6} flattening={flattening:.4e} factorizations={}",
        last.t, last.energy, last.max_u, diag.factorizations
    );
    if diag.ill_conditioned_steps > 0 {
        eprintln!("warning: {} steps flagged ill-conditioned", diag.ill_conditioned_steps);
    }

    if cfg.get("vtk") == "true" {
        let mut w = create(&out.join("final.vtk"))?;
        write_vtk(&mut w, &run.grid, &run.state.u, &ic.field()?, run.state.t, tag)?;
        w.flush()?;
    }
    Ok(())
}

fn condition(cfg: &Resolved, out: &Path, tag: &str) -> Result<(), RunError> {
    let rows = condition_study(
        &cfg.variants()?,
        &cfg.epsilons()?,
        cfg.usize("grid")?,
        cfg.f64("tau")?,
        cfg.f64("alpha")?,
        cfg.q_boundary()?,
    )?;
    for r in &rows {
        eprintln!("{:>6} eps={:.1e} cond={:.4e}", r.variant.name(), r.epsilon, r.condition);
    }
    let mut w = create(&out.join("condition.csv"))?;
    write_condition_csv(&rows, &mut w, Some(tag))?;
    w.flush()?;
    Ok(())
}
