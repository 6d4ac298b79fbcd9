use crate::scenario::{Scenario, StateCfg, TomoCfg};
use crate::{output_dir, simulate, write_text, CliError, RunOptions, Summary, TomoStep};
use blockade_core::analysis::{entanglement_witness, uhlmann_fidelity};
use blockade_core::io::{read_matrix, write_matrix};
use blockade_core::ops::{fock_state, SystemLayout};
use blockade_core::tomography::{
    optimize_point_set, reconstruct, simulate_measurements, trace_distance, DesignOptions, MeasurementRecord, WignerForm,
};
use blockade_core::{CMatrix, DensityMatrix, WignerPointSet};
use nalgebra::DMatrix;
use std::path::{Path, PathBuf};
use std::time::Instant;

fn cfg(s: &Scenario) -> Result<&TomoCfg, CliError> {
    let t = s.file.tomography.as_ref().ok_or_else(|| CliError::Parse("missing table [tomography]".into()))?;
    if t.dims.is_empty() || t.dims.contains(&0) {
        return Err(CliError::Parse("tomography.dims must list positive truncations".into()));
    }
    Ok(t)
}

fn form(t: &TomoCfg) -> Result<WignerForm, CliError> {
    match &t.form {
        Some(f) => WignerForm::parse(f).map_err(|e| CliError::Parse(format!("tomography.form: {e}"))),
        None => Ok(WignerForm::default()),
    }
}

fn file_or_default(s: &Scenario, key: &Option<String>, dir: &Path, default: &str) -> PathBuf {
    match key {
        Some(rel) => s.resolve(rel),
        None => dir.join(default),
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))
}

/// Point set for `dims`: a direct search for one mode, otherwise one search
/// per mode at that mode's angle combined into a product set.
pub fn design(t: &TomoCfg, seed: u64, jobs: usize) -> Result<(WignerPointSet, Vec<f64>), CliError> {
    let form = form(t)?;
    let opts = |m: usize| {
        let mut o = DesignOptions { seed: seed + m as u64, ..Default::default() };
        if let Some(p) = t.proposals {
            o.proposals = p;
        }
        o
    };
    if t.dims.len() == 1 {
        let set = optimize_point_set(t.dims[0], t.points, &t.angles_rad, form, &opts(0))?;
        let k = set.condition_number;
        return Ok((set, vec![k]));
    }
    if t.angles_rad.len() != t.dims.len() {
        return Err(CliError::Parse("multimode tomography needs one angle per mode".into()));
    }
    let n = t.dims.len();
    let mut per: Vec<Option<blockade_core::Result<WignerPointSet>>> = (0..n).map(|_| None).collect();
    let jobs = jobs.clamp(1, n);
    for chunk in (0..n).collect::<Vec<_>>().chunks(jobs) {
        std::thread::scope(|sc| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|&m| {
                    let o = opts(m);
                    let angle = t.angles_rad[m];
                    (m, sc.spawn(move || optimize_point_set(t.dims[m], t.points, &[angle], form, &o)))
                })
                .collect();
            for (m, h) in handles {
                per[m] = Some(h.join().expect("design thread"));
            }
        });
    }
    let mut points = Vec::with_capacity(n);
    let mut kappas = Vec::with_capacity(n);
    for r in per {
        let set = r.expect("every mode designed")?;
        kappas.push(set.condition_number);
        points.push(set.mode_points(0));
    }
    let set = WignerPointSet::product(t.dims.clone(), &points, &[t.angles_rad.clone()], form)?;
    Ok((set, kappas))
}

/// Cavity density matrix described by `cfg`, on truncations `dims`.
pub fn load_state(s: &Scenario, cfg: &StateCfg, dims: &[usize]) -> Result<DensityMatrix, CliError> {
    match cfg {
        StateCfg::Vacuum => Ok(fock_state::<f64>(&SystemLayout::cavity(dims.to_vec())?, 0, &vec![0; dims.len()])?.to_density()),
        StateCfg::Fock { occupations } => {
            Ok(fock_state::<f64>(&SystemLayout::cavity(dims.to_vec())?, 0, occupations)?.to_density())
        }
        StateCfg::File { path, dims } => {
            let p = s.resolve(path);
            let m: CMatrix = read_matrix(&read(&p)?).map_err(|e| CliError::Parse(format!("{}: {e}", p.display())))?;
            Ok(DensityMatrix::new(SystemLayout::cavity(dims.clone())?, m)?)
        }
        StateCfg::Scenario { path } => {
            let inner = Scenario::load(&s.resolve(path))?;
            simulate::run(&inner)?.final_cavity()
        }
    }
}

/// Block of `rho` with every occupation below `dims`, renormalized.
pub fn truncate(rho: &DensityMatrix, dims: &[usize]) -> Result<DensityMatrix, CliError> {
    let from = rho.layout.mode_dims();
    if from.len() != dims.len() || from.iter().zip(dims).any(|(a, b)| a < b) {
        return Err(CliError::Failure(format!("cannot truncate a {from:?} state to {dims:?}")));
    }
    let layout = SystemLayout::cavity(dims.to_vec())?;
    let idx: Vec<usize> = (0..layout.total_dim())
        .map(|i| rho.layout.index_of(&layout.occupations_of(i)?))
        .collect::<blockade_core::Result<_>>()?;
    let m = DMatrix::from_fn(idx.len(), idx.len(), |a, b| rho.matrix[(idx[a], idx[b])]);
    Ok(DensityMatrix::new(layout, m)?)
}

pub fn command(step: TomoStep, s: &Scenario, opts: &RunOptions) -> Result<PathBuf, CliError> {
    let start = Instant::now();
    let t = cfg(s)?;
    let dir = output_dir(opts, &s.file.name)?;
    let set_path = file_or_default(s, &t.point_set, &dir, "point_set.csv");
    let record_path = file_or_default(s, &t.record, &dir, "record.csv");
    let mut sum = Summary::default();
    sum.put("scenario", &s.file.name);
    let path = match step {
        TomoStep::Design => {
            let seed = s.seed(opts.seed)?;
            let (set, kappas) = design(t, seed, opts.jobs)?;
            write_text(&set_path, &set.to_csv()?)?;
            sum.put("command", "tomo design");
            sum.put("seed", seed);
            sum.put("settings", set.len());
            sum.num("condition_number", set.condition_number);
            for (m, k) in kappas.iter().enumerate() {
                sum.num(format!("condition_number_mode{m}"), *k);
            }
            dir.join("tomo_design.txt")
        }
        TomoStep::Simulate => {
            let set = WignerPointSet::from_csv(&read(&set_path)?).map_err(|e| match e {
                blockade_core::Error::Uninvertible(_) => CliError::from(e),
                other => CliError::Parse(format!("{}: {other}", set_path.display())),
            })?;
            let state_cfg = t.state.as_ref().ok_or_else(|| CliError::Parse("missing table [tomography.state]".into()))?;
            let rho = load_state(s, state_cfg, &t.dims)?;
            let seed = if t.noise_sigma > 0.0 { s.seed(opts.seed)? } else { opts.seed.or(s.file.seed).unwrap_or(0) };
            let record = simulate_measurements(&rho, &set, t.noise_sigma, seed)?;
            write_text(&record_path, &record.to_csv()?)?;
            write_text(&dir.join("input_state.txt"), &write_matrix(&rho.matrix))?;
            sum.put("command", "tomo simulate");
            sum.put("settings", record.values.len());
            sum.num("noise_sigma", t.noise_sigma);
            sum.put("seed", seed);
            dir.join("tomo_simulate.txt")
        }
        TomoStep::Reconstruct => {
            let set = WignerPointSet::from_csv(&read(&set_path)?).map_err(|e| match e {
                blockade_core::Error::Uninvertible(_) => CliError::from(e),
                other => CliError::Parse(format!("{}: {other}", set_path.display())),
            })?;
            let record = MeasurementRecord::<f64>::from_csv(&read(&record_path)?)
                .map_err(|e| CliError::Parse(format!("{}: {e}", record_path.display())))?;
            let r = reconstruct(&set, &record)?;
            write_text(&dir.join("rho.txt"), &write_matrix(&r.rho.matrix))?;
            sum.put("command", "tomo reconstruct");
            sum.num("condition_number", r.condition_number);
            sum.num("residual", r.residual);
            sum.num("psd_adjustment", r.psd_adjustment);
            if set.n_modes() > 1 && set.d.iter().all(|&d| d > 1) {
                let (w, phases) = entanglement_witness(&r.rho)?;
                sum.num("witness", w);
                sum.put("witness_phases", phases.iter().map(|p| format!("{p:.6}")).collect::<Vec<_>>().join(","));
            }
            if let Some(cfg) = t.target.as_ref().or(t.state.as_ref()) {
                let reference = truncate(&load_state(s, cfg, &t.dims)?, &set.d)?;
                sum.num("fidelity", uhlmann_fidelity(&r.rho.matrix, &reference.matrix)?);
                sum.num("trace_distance", trace_distance(&r.rho.matrix, &reference.matrix)?);
            }
            dir.join("tomo_report.txt")
        }
    };
    sum.write(&path)?;
    eprintln!("tomo {:?} {}: {:.2?}", step, s.file.name, start.elapsed());
    Ok(path)
}
