use blockade_core::analysis::{entanglement_witness, ground_conditioned_cavity};
use blockade_core::hamiltonian::{blockade_detuning, build_multimode_blockade_hamiltonian, CavityFrame};
use blockade_core::lindblad::{evolve_master, evolve_schrodinger, level_projector, standard_channels};
use blockade_core::ops::{fock_state, SystemLayout};
use blockade_core::{BlockadeSpec, DensityMatrix, DeviceParams, PulseSequence, TWO_PI};
use num_complex::Complex;

fn device() -> DeviceParams {
    let mut p = DeviceParams::uniform(
        TWO_PI * 4.99e9,
        vec![TWO_PI * 6.223e9, TWO_PI * 6.36e9],
        vec![TWO_PI * -1.136e6, TWO_PI * -0.9546e6],
        vec![TWO_PI * -9e3, TWO_PI * -4e3],
    );
    p.t1_q = 86e-6;
    p.t2_q = 58e-6;
    p.nth_q = 0.012;
    p.t1_m = vec![2e-3, 2e-3];
    p.t2_m = vec![4e-3, 4e-3];
    p
}

fn w2_setup(omega_hz: f64) -> (SystemLayout, blockade_core::hamiltonian::BlockadeModel<f64>, PulseSequence) {
    let p = device();
    let layout = SystemLayout::new(2, vec![3, 3]).unwrap();
    let spec = BlockadeSpec {
        target_modes: vec![0, 1],
        n0: 2,
        omega: TWO_PI * omega_hz,
        delta_nu_b: blockade_detuning(&p.chi_m, 2, &[0, 1]).unwrap(),
        cavity_frame: CavityFrame::Dressed,
    };
    let model = build_multimode_blockade_hamiltonian(&p, &layout, &spec).unwrap();
    let eps = Complex::new(TWO_PI * 10e3, 0.0);
    let pulse = PulseSequence::constant(18.7e-6, 1, vec!["a".into(), "b".into()], &[eps, eps]).unwrap();
    (layout, model, pulse)
}

#[test]
fn two_mode_w_state_with_loss() {
    let (layout, model, pulse) = w2_setup(207e3);
    let channels = standard_channels(&device(), &layout).unwrap();
    let rho0 = fock_state::<f64>(&layout, 0, &[0, 0]).unwrap().to_density().matrix;
    let tr = evolve_master(&model.drift, &model.controls, &pulse, &channels, &rho0, &[pulse.duration()]).unwrap();
    let rho = DensityMatrix::new(layout, tr.final_density()).unwrap();
    let (w, _) = entanglement_witness(&rho).unwrap();
    let fidelity = 0.5 - w;
    assert!((0.90..=0.94).contains(&fidelity), "{fidelity}");
    let cavity = ground_conditioned_cavity(&rho).unwrap();
    assert!((cavity.trace() - 1.0).abs() < 1e-9);
    assert!(cavity.is_physical(1e-9));
}

#[test]
fn lossless_master_equation_matches_schrodinger() {
    let (layout, model, pulse) = w2_setup(207e3);
    let psi0 = fock_state::<f64>(&layout, 0, &[0, 0]).unwrap();
    let times: Vec<f64> = (0..=4).map(|k| pulse.duration() * k as f64 / 4.0).collect();
    let pure = evolve_schrodinger(&model.drift, &model.controls, &pulse, &psi0.amplitudes, &times).unwrap();
    let mixed = evolve_master(&model.drift, &model.controls, &pulse, &[], &psi0.to_density().matrix, &times).unwrap();
    assert!((pure.final_density() - mixed.final_density()).norm() < 1e-6);
}

#[test]
fn open_evolution_preserves_trace_and_positivity() {
    let (layout, model, pulse) = w2_setup(207e3);
    let channels = standard_channels(&device(), &layout).unwrap();
    let rho0 = fock_state::<f64>(&layout, 1, &[1, 0]).unwrap().to_density().matrix;
    let times: Vec<f64> = (0..=6).map(|k| pulse.duration() * k as f64 / 6.0).collect();
    let tr = evolve_master(&model.drift, &model.controls, &pulse, &channels, &rho0, &times).unwrap();
    let pe = level_projector::<f64>(&layout, None, 1).unwrap();
    let mut last_pe = 1.0;
    for rho in match &tr.states {
        blockade_core::lindblad::States::Density(v) => v.clone(),
        blockade_core::lindblad::States::Pure(_) => unreachable!(),
    } {
        let d = DensityMatrix::new(layout.clone(), rho.clone()).unwrap();
        assert!((d.trace() - 1.0).abs() < 1e-9);
        assert!(d.is_physical(1e-8));
        last_pe = (&pe * &rho).trace().re;
    }
    assert!(last_pe < 1.0);
}
