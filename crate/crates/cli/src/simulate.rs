use crate::scenario::{Frame, Scenario, TargetCfg};
use crate::{output_dir, write_text, CliError, RunOptions, Summary};
use blockade_core::analysis::{entanglement_witness, ground_conditioned_cavity};
use blockade_core::hamiltonian::{blockade_detuning, build_multimode_blockade_hamiltonian, BlockadeModel, CavityFrame};
use blockade_core::io::{read_pulse_csv, write_matrix, write_trajectory_csv};
use blockade_core::lindblad::{expectations, level_projector, standard_channels, evolve_master, Series, States};
use blockade_core::ops::{fock_state, SystemLayout};
use blockade_core::{BlockadeSpec, CMatrix, CollapseChannel, DensityMatrix, DeviceParams, PulseSequence, TWO_PI};
use num_complex::Complex;
use std::path::PathBuf;
use std::time::Instant;

/// Everything needed to propagate a `simulate` scenario.
pub struct Setup {
    pub params: DeviceParams,
    pub layout: SystemLayout,
    pub spec: BlockadeSpec,
    pub model: BlockadeModel<f64>,
    pub channels: Vec<CollapseChannel>,
    pub pulse: PulseSequence,
}

fn mode_indices(names: &[String], within: &[String], what: &str) -> Result<Vec<usize>, CliError> {
    names
        .iter()
        .map(|n| within.iter().position(|m| m == n).ok_or_else(|| CliError::Parse(format!("{what}: unknown mode {n:?}"))))
        .collect()
}

pub fn setup(s: &Scenario) -> Result<Setup, CliError> {
    let device = s.device()?;
    let lc = s.layout()?;
    let picked = mode_indices(&lc.modes, &device.mode_names, "layout.modes")?;
    let params = device.select_modes(&picked)?;
    let layout = SystemLayout::new(lc.transmon_levels, lc.truncation.clone())?;
    let spec = match &s.file.blockade {
        Some(b) => {
            let targets = match &b.modes {
                Some(names) => mode_indices(names, &lc.modes, "blockade.modes")?,
                None => (0..lc.modes.len()).collect(),
            };
            let detuning = match b.detuning_hz {
                Some(hz) => TWO_PI * hz,
                None => blockade_detuning(&params.chi_m, b.n0, &targets)?,
            };
            BlockadeSpec {
                target_modes: targets,
                n0: b.n0,
                omega: TWO_PI * b.omega_hz,
                delta_nu_b: detuning,
                cavity_frame: match b.frame {
                    Frame::Bare => CavityFrame::Bare,
                    Frame::Dressed => CavityFrame::Dressed,
                },
            }
        }
        None => BlockadeSpec {
            target_modes: (0..lc.modes.len()).collect(),
            n0: 0,
            omega: 0.0,
            delta_nu_b: 0.0,
            cavity_frame: CavityFrame::Bare,
        },
    };
    let model = build_multimode_blockade_hamiltonian(&params, &layout, &spec)?;
    let channels = if s.file.channels.enabled { standard_channels(&params, &layout)? } else { Vec::new() };
    let drive = s.file.drive.as_ref().ok_or_else(|| CliError::Parse("missing table [drive]".into()))?;
    let names: Vec<String> = spec.target_modes.iter().map(|&m| params.mode_names[m].clone()).collect();
    let duration = drive.duration_us * 1e-6;
    if !(duration > 0.0) {
        return Err(CliError::Parse("drive.duration_us must be positive".into()));
    }
    let pulse = match &drive.pulse_file {
        Some(rel) => {
            let path = s.resolve(rel);
            let text = std::fs::read_to_string(&path)?;
            let p: PulseSequence = read_pulse_csv(&text).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))?;
            if p.n_channels() != names.len() {
                return Err(CliError::Parse(format!(
                    "{}: {} channels for {} driven modes",
                    path.display(),
                    p.n_channels(),
                    names.len()
                )));
            }
            if (p.duration() - duration).abs() > 1e-6 * duration {
                return Err(CliError::Parse(format!(
                    "drive.duration_us = {} but the pulse file lasts {} us",
                    drive.duration_us,
                    p.duration() * 1e6
                )));
            }
            PulseSequence::new(p.dt(), names, (0..p.n_channels()).map(|c| p.channel(c).to_vec()).collect())?
        }
        None => {
            let amps = drive.amplitude_hz.clone().unwrap_or_else(|| vec![0.0; names.len()]);
            let phases = drive.phase_rad.clone().unwrap_or_else(|| vec![0.0; names.len()]);
            if amps.len() != names.len() || phases.len() != names.len() {
                return Err(CliError::Parse(format!("drive needs one amplitude and phase per driven mode ({})", names.len())));
            }
            if drive.steps == 0 {
                return Err(CliError::Parse("drive.steps must be positive".into()));
            }
            let values: Vec<Complex<f64>> =
                amps.iter().zip(&phases).map(|(&a, &p)| Complex::from_polar(TWO_PI * a, p)).collect();
            PulseSequence::constant(duration / drive.steps as f64, drive.steps, names, &values)?
        }
    };
    Ok(Setup { params, layout, spec, model, channels, pulse })
}

/// Fidelity of one state with the scenario target; the transmon is taken in
/// `|g>`.
pub fn target_fidelity(target: &TargetCfg, layout: &SystemLayout, rho: &CMatrix) -> Result<f64, CliError> {
    match target {
        TargetCfg::Fock { occupations } => {
            let psi = fock_state::<f64>(layout, 0, occupations)?.amplitudes;
            Ok(psi.dotc(&(rho * &psi)).re)
        }
        TargetCfg::W => {
            let n = layout.n_modes() as f64;
            let dm = DensityMatrix::new(layout.clone(), rho.clone())?;
            let (w, _) = entanglement_witness(&dm)?;
            Ok((n - 1.0) / n - w)
        }
    }
}

pub struct Outcome {
    pub setup: Setup,
    pub times: Vec<f64>,
    pub states: Vec<CMatrix>,
    pub series: Vec<Series<f64>>,
}

impl Outcome {
    /// Cavity state left after the transmon is found in `|g>`.
    pub fn final_cavity(&self) -> Result<DensityMatrix, CliError> {
        let last = self.states.last().expect("at least one sample").clone();
        Ok(ground_conditioned_cavity(&DensityMatrix::new(self.setup.layout.clone(), last)?)?)
    }
}

pub fn run(s: &Scenario) -> Result<Outcome, CliError> {
    let setup = setup(s)?;
    let samples = s.file.output.samples.max(2);
    let end = setup.pulse.duration();
    let times: Vec<f64> = (0..samples).map(|k| end * k as f64 / (samples - 1) as f64).collect();
    let rho0 = fock_state::<f64>(&setup.layout, 0, &vec![0; setup.layout.n_modes()])?.to_density().matrix;
    let tr = evolve_master(&setup.model.drift, &setup.model.controls, &setup.pulse, &setup.channels, &rho0, &times)?;
    let mut observables = Vec::new();
    for (m, name) in setup.params.mode_names.iter().enumerate() {
        for n in 0..setup.layout.mode_dims()[m] {
            observables.push((format!("P{n}_{name}"), level_projector::<f64>(&setup.layout, Some(m), n)?));
        }
    }
    if setup.layout.transmon_levels() > 1 {
        observables.push(("Pe".to_string(), level_projector::<f64>(&setup.layout, None, 1)?));
    }
    let mut series = expectations(&tr, &observables)?;
    let states = match tr.states {
        States::Density(v) => v,
        States::Pure(v) => v.iter().map(|psi| psi * psi.adjoint()).collect(),
    };
    if let Some(target) = &s.file.target {
        let values = states.iter().map(|r| target_fidelity(target, &setup.layout, r)).collect::<Result<Vec<_>, _>>()?;
        series.push(Series { name: "fidelity".into(), values, non_hermitian: false, max_imag: 0.0 });
    }
    Ok(Outcome { setup, times: tr.times, states, series })
}

pub fn command(s: &Scenario, opts: &RunOptions) -> Result<PathBuf, CliError> {
    let start = Instant::now();
    let out = run(s)?;
    let dir = output_dir(opts, &s.file.name)?;
    write_text(&dir.join("trajectory.csv"), &write_trajectory_csv(&out.times, &out.series)?)?;
    let cavity = out.final_cavity()?;
    write_text(&dir.join("cavity_state.txt"), &write_matrix(&cavity.matrix))?;
    let mut sum = Summary::default();
    sum.put("scenario", &s.file.name);
    sum.put("command", "simulate");
    sum.put("dims", format!("{:?}", out.setup.layout.dims()));
    sum.num("duration_us", out.setup.pulse.duration() * 1e6);
    sum.put("channels", out.setup.channels.len());
    sum.num("blockade_detuning_hz", out.setup.spec.delta_nu_b / TWO_PI);
    for series in &out.series {
        sum.num(format!("final_{}", series.name), *series.values.last().expect("samples"));
    }
    for series in out.series.iter().filter(|x| x.name.starts_with('P')) {
        let (k, v) = series.values.iter().enumerate().fold((0, f64::MIN), |b, (k, &v)| if v > b.1 { (k, v) } else { b });
        sum.num(format!("max_{}", series.name), v);
        sum.num(format!("argmax_us_{}", series.name), out.times[k] * 1e6);
    }
    if let Some(target) = &s.file.target {
        let f = *out.series.last().expect("fidelity series").values.last().expect("samples");
        sum.num("fidelity", f);
        if let crate::scenario::TargetCfg::W = target {
            let n = out.setup.layout.n_modes() as f64;
            sum.num("witness", (n - 1.0) / n - f);
        }
    }
    let path = dir.join("summary.txt");
    sum.write(&path)?;
    eprintln!("simulate {}: {:.2?}", s.file.name, start.elapsed());
    Ok(path)
}
