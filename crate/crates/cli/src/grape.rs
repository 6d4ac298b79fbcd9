use crate::scenario::{GrapeMethod, GrapeModel, Scenario};
use crate::{output_dir, write_text, CliError, RunOptions, Summary};
use blockade_core::grape::{
    bandlimit_with_report, forbidden_population, open_fidelity, optimize_pulse, Forbidden, Method, Objective,
    OptimizerConfig,
};
use blockade_core::hamiltonian::{build_blockade_hamiltonian, reduced_blockade_hamiltonian, StarkOrder};
use blockade_core::io::write_pulse_csv;
use blockade_core::lindblad::{dressed_qudit_channels, level_projector, standard_channels};
use blockade_core::ops::{fock_state, SystemLayout};
use blockade_core::{BlockadeSpec, CMatrix, CVector, ControlProblem, TWO_PI};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

fn shift_gate(n: usize) -> CMatrix {
    let mut g = DMatrix::zeros(n, n);
    for k in 0..n {
        g[((k + 1) % n, k)] = Complex::new(1.0, 0.0);
    }
    g
}

pub fn command(s: &Scenario, opts: &RunOptions) -> Result<PathBuf, CliError> {
    let start = Instant::now();
    let g = s.file.grape.as_ref().ok_or_else(|| CliError::Parse("missing table [grape]".into()))?;
    let b = s.file.blockade.as_ref().ok_or_else(|| CliError::Parse("missing table [blockade]".into()))?;
    let lc = s.layout()?;
    if lc.modes.len() != 1 {
        return Err(CliError::Parse("grape scenarios drive exactly one mode".into()));
    }
    let device = s.device()?;
    let m = device
        .mode_names
        .iter()
        .position(|n| *n == lc.modes[0])
        .ok_or_else(|| CliError::Parse(format!("layout.modes: unknown mode {:?}", lc.modes[0])))?;
    let params = device.select_modes(&[m])?;
    let mut spec = BlockadeSpec::single(0, b.n0, TWO_PI * b.omega_hz, params.chi_m[0]);
    if let Some(hz) = b.detuning_hz {
        spec.delta_nu_b = TWO_PI * hz;
    }
    let seed = s.seed(opts.seed)?;
    let steps = opts.steps.unwrap_or(g.steps);
    if steps == 0 {
        return Err(CliError::Parse("grape.steps must be positive".into()));
    }
    let ket = |d: usize, i: usize| -> CVector {
        let mut v = DVector::zeros(d);
        v[i] = Complex::new(1.0, 0.0);
        v
    };
    let (drift, controls, dim, layout, basis_of): (CMatrix, Vec<CMatrix>, usize, Option<SystemLayout>, Box<dyn Fn(usize) -> Result<CVector, CliError>>) =
        match g.model {
            GrapeModel::Reduced => {
                let order = if g.exact_stark { StarkOrder::Exact } else { StarkOrder::Leading };
                let r = reduced_blockade_hamiltonian(&params, &spec, 0, order, g.kerr)?;
                let n0 = r.n0;
                (r.drift, r.controls, n0, None, Box::new(move |k| Ok(ket(n0, k))))
            }
            GrapeModel::Full => {
                let layout = SystemLayout::new(lc.transmon_levels, lc.truncation.clone())?;
                let model = build_blockade_hamiltonian(&params, &layout, &spec, 0)?;
                let l2 = layout.clone();
                (model.drift, model.controls, b.n0, Some(layout), Box::new(move |k| Ok(fock_state::<f64>(&l2, 0, &[k])?.amplitudes)))
            }
        };
    let objective = match (g.target_fock, g.gate.as_deref()) {
        (Some(k), None) => {
            if k >= dim {
                return Err(CliError::Parse(format!("grape.target_fock = {k} is not below n0 = {dim}")));
            }
            Objective::State { initial: basis_of(0)?, target: basis_of(k)? }
        }
        (None, Some("shift")) => Objective::Gate { basis: (0..dim).map(&basis_of).collect::<Result<_, _>>()?, target: shift_gate(dim) },
        (None, Some(other)) => return Err(CliError::Parse(format!("grape.gate: unknown gate {other:?}"))),
        _ => return Err(CliError::Parse("set exactly one of grape.target_fock and grape.gate".into())),
    };
    let mut problem = ControlProblem::new(drift, controls, objective, g.duration_us * 1e-6, steps, TWO_PI * g.cap_hz)?
        .with_channel_names(vec![params.mode_names[0].clone()])?;
    if let (Some(w), Some(layout)) = (g.forbid_weight, &layout) {
        let mut proj = DMatrix::zeros(layout.total_dim(), layout.total_dim());
        for level in b.n0..layout.mode_dims()[0] {
            proj += level_projector::<f64>(layout, Some(0), level)?;
        }
        problem = problem.forbid(proj, w)?;
    }
    let config = OptimizerConfig {
        method: match g.method {
            GrapeMethod::ProjectedGradient => Method::ProjectedGradient,
            GrapeMethod::Lbfgs => Method::Lbfgs,
        },
        max_iterations: g.max_iterations,
        target_fidelity: g.target_fidelity,
        seed,
        restarts: g.restarts.max(1),
        jobs: opts.jobs.max(1),
        ..Default::default()
    };
    let result = optimize_pulse(&problem, &config)?;
    let dir = output_dir(opts, &s.file.name)?;
    write_text(&dir.join("pulse.csv"), &write_pulse_csv(&result.pulse)?)?;
    let mut log = String::from("iteration,cost,fidelity,gradient_norm\n");
    for r in &result.history {
        let _ = writeln!(log, "{},{:.16e},{:.16e},{:.16e}", r.iteration, r.cost, r.fidelity, r.gradient_norm);
    }
    write_text(&dir.join("cost_history.csv"), &log)?;

    let mut sum = Summary::default();
    sum.put("scenario", &s.file.name);
    sum.put("command", "grape");
    sum.put("model", format!("{:?}", g.model).to_lowercase());
    sum.put("steps", steps);
    sum.put("seed", seed);
    sum.put("iterations", result.iterations);
    sum.put("converged", result.converged);
    sum.num("closed_fidelity", result.closed_fidelity);
    sum.num("max_quadrature_hz", result.pulse.max_quadrature() / TWO_PI);
    if !problem.forbidden.is_empty() {
        let unit = ControlProblem {
            forbidden: problem.forbidden.iter().map(|f| Forbidden { projector: f.projector.clone(), weight: 1.0 }).collect(),
            ..problem.clone()
        };
        sum.num("forbidden_population", forbidden_population(&unit, &result.pulse)?);
    }
    if g.open {
        let channels = match &layout {
            None => dressed_qudit_channels(&params, &spec, 0)?,
            Some(l) => standard_channels(&params, l)?,
        };
        sum.num("open_fidelity", open_fidelity(&problem, &result.pulse, &channels)?);
    }
    if g.bandlimit {
        let halfwidth = params.chi_m[0].abs() / 2.0;
        let nyquist = std::f64::consts::PI / problem.dt();
        if halfwidth < nyquist {
            let (filtered, delta) = bandlimit_with_report(&problem, &result.pulse, 0.0, halfwidth)?;
            write_text(&dir.join("pulse_bandlimited.csv"), &write_pulse_csv(&filtered)?)?;
            sum.num("bandlimit_halfwidth_hz", halfwidth / TWO_PI);
            sum.num("bandlimit_fidelity_change", delta);
        } else {
            sum.put("bandlimit", "skipped: slot rate below the filter band");
        }
    }
    let path = dir.join("summary.txt");
    sum.write(&path)?;
    eprintln!("grape {}: {:.2?}", s.file.name, start.elapsed());
    if opts.strict && result.closed_fidelity < g.threshold {
        return Err(CliError::NotConverged(format!(
            "closed fidelity {:.5} below threshold {}",
            result.closed_fidelity, g.threshold
        )));
    }
    Ok(path)
}
