//! Dispersive multimode Hamiltonian, blockade-frame Hamiltonians and the
//! dressed-ground-state qudit model.
//!
//! All frequencies are angular (rad/s). Cross-Kerr terms count each unordered
//! pair once: `k_mn N_m N_n` with `m < n`.

use crate::ops::{
    annihilation_op, embed_mode, embed_operator, identity, number_op, SystemLayout,
};
use crate::{cr, ComplexMatrix, Error, Real, Result};
use nalgebra::DMatrix;
use num_complex::Complex;

#[derive(Debug, Clone, PartialEq)]
pub struct DeviceParams<T: Real> {
    pub omega_q: T,
    pub omega_m: Vec<T>,
    pub chi_m: Vec<T>,
    pub kerr_m: Vec<T>,
    /// Symmetric, zero diagonal.
    pub cross_kerr: DMatrix<T>,
    pub t1_q: T,
    pub t2_q: T,
    pub nth_q: T,
    pub t1_m: Vec<T>,
    pub t2_m: Vec<T>,
    pub mode_names: Vec<String>,
}

impl<T: Real> DeviceParams<T> {
    /// Device with no cross-Kerr and identical coherence for every mode.
    pub fn uniform(omega_q: T, omega_m: Vec<T>, chi_m: Vec<T>, kerr_m: Vec<T>) -> Self {
        let n = chi_m.len();
        Self {
            omega_q,
            omega_m,
            chi_m,
            kerr_m,
            cross_kerr: DMatrix::zeros(n, n),
            t1_q: T::lit(86e-6),
            t2_q: T::lit(58e-6),
            nth_q: T::lit(0.012),
            t1_m: vec![T::lit(2e-3); n],
            t2_m: vec![T::lit(2.5e-3); n],
            mode_names: (0..n).map(|m| format!("mode{m}")).collect(),
        }
    }

    pub fn n_modes(&self) -> usize {
        self.chi_m.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_modes();
        let lens = [
            self.omega_m.len(),
            self.kerr_m.len(),
            self.t1_m.len(),
            self.t2_m.len(),
            self.mode_names.len(),
        ];
        if lens.iter().any(|&l| l != n) || self.cross_kerr.shape() != (n, n) {
            return Err(Error::Shape(format!("per-mode parameter lists must all have {n} entries")));
        }
        if self.t1_q <= T::zero() || self.t2_q <= T::zero() {
            return Err(Error::Physicality("transmon coherence times must be positive".into()));
        }
        if self.t2_q > self.t1_q * T::lit(2.0) {
            return Err(Error::Physicality(format!(
                "T2_q = {} exceeds 2 T1_q = {}",
                self.t2_q,
                self.t1_q * T::lit(2.0)
            )));
        }
        if self.nth_q < T::zero() || self.nth_q >= T::one() {
            return Err(Error::Physicality(format!("thermal occupation {} outside [0, 1)", self.nth_q)));
        }
        if self.t1_m.iter().any(|&t| t <= T::zero()) {
            return Err(Error::Physicality("mode T1 must be positive".into()));
        }
        for m in 0..n {
            if self.cross_kerr[(m, m)] != T::zero() {
                return Err(Error::InvalidArgument("cross-Kerr diagonal must be zero".into()));
            }
            for k in 0..m {
                if self.cross_kerr[(m, k)] != self.cross_kerr[(k, m)] {
                    return Err(Error::InvalidArgument(format!("cross-Kerr ({k},{m}) not symmetric")));
                }
            }
        }
        Ok(())
    }

    pub fn set_cross_kerr(&mut self, m: usize, n: usize, k: T) {
        self.cross_kerr[(m, n)] = k;
        self.cross_kerr[(n, m)] = k;
    }

    /// Sub-device with the listed modes, in that order.
    pub fn select_modes(&self, modes: &[usize]) -> Result<Self> {
        if let Some(&m) = modes.iter().find(|&&m| m >= self.n_modes()) {
            return Err(Error::OutOfRange(format!("mode {m} not in device")));
        }
        let pick = |v: &[T]| modes.iter().map(|&m| v[m]).collect::<Vec<T>>();
        Ok(Self {
            omega_q: self.omega_q,
            omega_m: pick(&self.omega_m),
            chi_m: pick(&self.chi_m),
            kerr_m: pick(&self.kerr_m),
            cross_kerr: DMatrix::from_fn(modes.len(), modes.len(), |i, j| self.cross_kerr[(modes[i], modes[j])]),
            t1_q: self.t1_q,
            t2_q: self.t2_q,
            nth_q: self.nth_q,
            t1_m: pick(&self.t1_m),
            t2_m: pick(&self.t2_m),
            mode_names: modes.iter().map(|&m| self.mode_names[m].clone()).collect(),
        })
    }
}

/// Which cavity frame the drives are written in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CavityFrame {
    /// Rotating at the bare mode frequency.
    #[default]
    Bare,
    /// Rotating at the Stark-shifted `|0> <-> |1>` line of each driven mode.
    Dressed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockadeSpec<T: Real> {
    pub target_modes: Vec<usize>,
    pub n0: usize,
    pub omega: T,
    pub delta_nu_b: T,
    pub cavity_frame: CavityFrame,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ValidityReport {
    /// `eps * sqrt(n0) < Omega`.
    pub drive_below_rabi: bool,
    /// `Omega < min |chi_m|` over the target modes.
    pub rabi_below_chi: bool,
}

impl ValidityReport {
    pub fn holds(&self) -> bool {
        self.drive_below_rabi && self.rabi_below_chi
    }
}

impl<T: Real> BlockadeSpec<T> {
    /// Single-mode blockade at `n0` with the drive resonant on `|g,n0> <-> |e,n0>`.
    pub fn single(mode: usize, n0: usize, omega: T, chi: T) -> Self {
        Self {
            target_modes: vec![mode],
            n0,
            omega,
            delta_nu_b: chi * T::lit(n0 as f64),
            cavity_frame: CavityFrame::Bare,
        }
    }

    pub fn with_frame(mut self, frame: CavityFrame) -> Self {
        self.cavity_frame = frame;
        self
    }

    pub fn validity(&self, params: &DeviceParams<T>, eps: T) -> ValidityReport {
        let min_chi = self
            .target_modes
            .iter()
            .map(|&m| params.chi_m[m].abs())
            .fold(T::max_value().unwrap_or(T::lit(f64::MAX)), |a, b| a.min(b));
        ValidityReport {
            drive_below_rabi: eps.abs() * T::lit(self.n0 as f64).sqrt() < self.omega,
            rabi_below_chi: self.omega < min_chi,
        }
    }
}

/// Drift plus control generators, one `(x, y)` quadrature pair per driven mode.
#[derive(Debug, Clone)]
pub struct BlockadeModel<T: Real> {
    pub drift: ComplexMatrix<T>,
    pub controls: Vec<ComplexMatrix<T>>,
    pub driven_modes: Vec<usize>,
}

fn check_modes<T: Real>(params: &DeviceParams<T>, layout: &SystemLayout) -> Result<()> {
    if params.n_modes() != layout.n_modes() {
        return Err(Error::Shape(format!(
            "device has {} modes, layout has {}",
            params.n_modes(),
            layout.n_modes()
        )));
    }
    if layout.transmon_levels() < 2 {
        return Err(Error::Shape("layout needs at least two transmon levels".into()));
    }
    Ok(())
}

fn excited_projector<T: Real>(layout: &SystemLayout) -> Result<ComplexMatrix<T>> {
    let mut e = DMatrix::zeros(layout.transmon_levels(), layout.transmon_levels());
    e[(1, 1)] = cr(1.0);
    embed_operator(layout, 0, &e)
}

fn sigma_x<T: Real>(layout: &SystemLayout) -> Result<ComplexMatrix<T>> {
    let mut s = DMatrix::zeros(layout.transmon_levels(), layout.transmon_levels());
    s[(0, 1)] = cr(1.0);
    s[(1, 0)] = cr(1.0);
    embed_operator(layout, 0, &s)
}

/// `x = a + a^dag` and `y = -i (a - a^dag)` for one mode of `layout`.
pub fn quadratures<T: Real>(
    layout: &SystemLayout,
    mode: usize,
) -> Result<(ComplexMatrix<T>, ComplexMatrix<T>)> {
    let a = annihilation_op::<T>(layout.mode_dims()[mode])?;
    let x = &a + a.adjoint();
    let y = (&a - a.adjoint()) * Complex::new(T::zero(), -T::one());
    Ok((embed_mode(layout, mode, &x)?, embed_mode(layout, mode, &y)?))
}

fn kerr_terms<T: Real>(
    params: &DeviceParams<T>,
    layout: &SystemLayout,
    numbers: &[ComplexMatrix<T>],
) -> ComplexMatrix<T> {
    let d = layout.total_dim();
    let id = identity::<T>(d);
    let mut h = DMatrix::zeros(d, d);
    for (m, n) in numbers.iter().enumerate() {
        let k = params.kerr_m[m] * T::lit(0.5);
        h += n * (n - &id) * Complex::new(k, T::zero());
    }
    for m in 0..numbers.len() {
        for k in m + 1..numbers.len() {
            let kmn = params.cross_kerr[(m, k)];
            if kmn != T::zero() {
                h += &numbers[m] * &numbers[k] * Complex::new(kmn, T::zero());
            }
        }
    }
    h
}

fn mode_numbers<T: Real>(layout: &SystemLayout) -> Result<Vec<ComplexMatrix<T>>> {
    (0..layout.n_modes())
        .map(|m| embed_mode(layout, m, &number_op::<T>(layout.mode_dims()[m])?))
        .collect()
}

pub fn build_dispersive_hamiltonian<T: Real>(
    params: &DeviceParams<T>,
    layout: &SystemLayout,
) -> Result<ComplexMatrix<T>> {
    check_modes(params, layout)?;
    let e = excited_projector::<T>(layout)?;
    let numbers = mode_numbers::<T>(layout)?;
    let mut h = &e * Complex::new(params.omega_q, T::zero());
    for (m, n) in numbers.iter().enumerate() {
        h += n * Complex::new(params.omega_m[m], T::zero());
        h += n * &e * Complex::new(params.chi_m[m], T::zero());
    }
    Ok(h + kerr_terms(params, layout, &numbers))
}

/// Ground-like eigenvalue of `[[0, omega], [omega, delta]]`.
pub fn dressed_ground_energy<T: Real>(delta: T, omega: T) -> T {
    let half = delta * T::lit(0.5);
    let root = (half * half + omega * omega).sqrt();
    if delta >= T::zero() {
        half - root
    } else {
        half + root
    }
}

/// Frequency of the dressed `|0> <-> |1>` line of `mode` relative to the bare
/// line, for a blockade drive detuned by `delta_nu_b` from the transmon.
pub fn dressed_line_shift<T: Real>(chi: T, delta_nu_b: T, omega: T) -> T {
    dressed_ground_energy(chi - delta_nu_b, omega) - dressed_ground_energy(-delta_nu_b, omega)
}

fn frame_correction<T: Real>(
    params: &DeviceParams<T>,
    layout: &SystemLayout,
    spec: &BlockadeSpec<T>,
    numbers: &[ComplexMatrix<T>],
) -> ComplexMatrix<T> {
    let d = layout.total_dim();
    let mut h = DMatrix::zeros(d, d);
    if spec.cavity_frame == CavityFrame::Dressed {
        for &m in &spec.target_modes {
            let s = dressed_line_shift(params.chi_m[m], spec.delta_nu_b, spec.omega);
            h -= &numbers[m] * Complex::new(s, T::zero());
        }
    }
    h
}

/// Single-mode blockade Hamiltonian in the frame co-rotating with the blockade
/// drive: `chi (N - n0)|e><e| + (k/2) N (N - 1) + Omega (|g><e| + |e><g|)`.
pub fn build_blockade_hamiltonian<T: Real>(
    params: &DeviceParams<T>,
    layout: &SystemLayout,
    spec: &BlockadeSpec<T>,
    mode: usize,
) -> Result<BlockadeModel<T>> {
    check_modes(params, layout)?;
    if layout.transmon_levels() != 2 {
        return Err(Error::Shape("blockade model needs a two-level transmon".into()));
    }
    if mode >= layout.n_modes() {
        return Err(Error::OutOfRange(format!("mode {mode} not in layout")));
    }
    if spec.n0 >= layout.mode_dims()[mode] {
        return Err(Error::OutOfRange(format!(
            "blockade level {} not below truncation {}",
            spec.n0,
            layout.mode_dims()[mode]
        )));
    }
    let d = layout.total_dim();
    let e = excited_projector::<T>(layout)?;
    let numbers = mode_numbers::<T>(layout)?;
    let shifted = &numbers[mode] - identity::<T>(d) * cr::<T>(spec.n0 as f64);
    let mut single = params.clone();
    for m in 0..single.n_modes() {
        if m != mode {
            single.kerr_m[m] = T::zero();
        }
    }
    single.cross_kerr.fill(T::zero());
    let mut drift = shifted * &e * Complex::new(params.chi_m[mode], T::zero());
    drift += kerr_terms(&single, layout, &numbers);
    drift += sigma_x::<T>(layout)? * Complex::new(spec.omega, T::zero());
    let mut frame_spec = spec.clone();
    frame_spec.target_modes = vec![mode];
    frame_spec.delta_nu_b = params.chi_m[mode] * T::lit(spec.n0 as f64);
    drift += frame_correction(params, layout, &frame_spec, &numbers);
    let (x, y) = quadratures::<T>(layout, mode)?;
    Ok(BlockadeModel { drift, controls: vec![x, y], driven_modes: vec![mode] })
}

/// Multimode blockade Hamiltonian co-rotating with a blockade drive at
/// `omega_q + delta_nu_b`.
pub fn build_multimode_blockade_hamiltonian<T: Real>(
    params: &DeviceParams<T>,
    layout: &SystemLayout,
    spec: &BlockadeSpec<T>,
) -> Result<BlockadeModel<T>> {
    check_modes(params, layout)?;
    if spec.target_modes.is_empty() {
        return Err(Error::InvalidArgument("blockade needs at least one target mode".into()));
    }
    if let Some(&m) = spec.target_modes.iter().find(|&&m| m >= layout.n_modes()) {
        return Err(Error::OutOfRange(format!("target mode {m} not in layout")));
    }
    let d = layout.total_dim();
    let e = excited_projector::<T>(layout)?;
    let numbers = mode_numbers::<T>(layout)?;
    let mut shift = identity::<T>(d) * Complex::new(-spec.delta_nu_b, T::zero());
    for (m, n) in numbers.iter().enumerate() {
        shift += n * Complex::new(params.chi_m[m], T::zero());
    }
    let mut drift = shift * &e;
    drift += kerr_terms(params, layout, &numbers);
    drift += sigma_x::<T>(layout)? * Complex::new(spec.omega, T::zero());
    drift += frame_correction(params, layout, spec, &numbers);
    let mut controls = Vec::new();
    for &m in &spec.target_modes {
        let (x, y) = quadratures::<T>(layout, m)?;
        controls.push(x);
        controls.push(y);
    }
    Ok(BlockadeModel { drift, controls, driven_modes: spec.target_modes.clone() })
}

/// Mean of `sum_m n_m chi_m` over every distinct way of placing `total_photons`
/// photons in `mode_subset`.
pub fn blockade_detuning<T: Real>(chis: &[T], total_photons: usize, mode_subset: &[usize]) -> Result<T> {
    if total_photons == 0 || mode_subset.is_empty() {
        return Err(Error::InvalidArgument("need at least one photon and one mode".into()));
    }
    if let Some(&m) = mode_subset.iter().find(|&&m| m >= chis.len()) {
        return Err(Error::OutOfRange(format!("mode {m} has no dispersive shift")));
    }
    let mut patterns = Vec::new();
    compositions(total_photons, mode_subset.len(), &mut Vec::new(), &mut patterns);
    let sum = patterns.iter().fold(T::zero(), |acc, occ| {
        acc + occ
            .iter()
            .zip(mode_subset)
            .fold(T::zero(), |s, (&n, &m)| s + chis[m] * T::lit(n as f64))
    });
    Ok(sum / T::lit(patterns.len() as f64))
}

fn compositions(n: usize, parts: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    if parts == 1 {
        let mut p = prefix.clone();
        p.push(n);
        out.push(p);
        return;
    }
    for k in 0..=n {
        prefix.push(k);
        compositions(n - k, parts - 1, prefix, out);
        prefix.pop();
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StarkOrder {
    #[default]
    Leading,
    Exact,
}

/// Stark shift of the dressed-ground level `|g,n>` under a blockade at `n0`.
pub fn stark_shift<T: Real>(n: usize, n0: usize, chi: T, omega: T, order: StarkOrder) -> Result<T> {
    let dn = T::lit(n as f64 - n0 as f64);
    match order {
        StarkOrder::Leading => {
            if n == n0 {
                return Err(Error::Singular(
                    "the blockaded level is split by +-Omega, not Stark shifted".into(),
                ));
            }
            Ok(-omega * omega / (T::lit(4.0) * chi * dn))
        }
        StarkOrder::Exact => Ok(dressed_ground_energy(chi * dn, omega)),
    }
}

/// Dressed-ground qudit `{|0>, ..., |n0 - 1>}` with Stark-shifted levels.
#[derive(Debug, Clone)]
pub struct ReducedModel<T: Real> {
    pub drift: ComplexMatrix<T>,
    /// `x = a + a^dag`, `y = -i (a - a^dag)` on the qudit.
    pub controls: Vec<ComplexMatrix<T>>,
    pub n0: usize,
    pub order: StarkOrder,
}

/// Qudit truncated below the blockaded level. `include_kerr` adds the self-Kerr
/// `(k/2) n (n - 1)` of `mode`.
pub fn reduced_blockade_hamiltonian<T: Real>(
    params: &DeviceParams<T>,
    spec: &BlockadeSpec<T>,
    mode: usize,
    order: StarkOrder,
    include_kerr: bool,
) -> Result<ReducedModel<T>> {
    if spec.n0 < 2 {
        return Err(Error::DegenerateQudit(format!("n0 = {} leaves fewer than two levels", spec.n0)));
    }
    if mode >= params.n_modes() {
        return Err(Error::OutOfRange(format!("mode {mode} not in device")));
    }
    let n0 = spec.n0;
    let chi = params.chi_m[mode];
    let mut drift = DMatrix::zeros(n0, n0);
    for n in 0..n0 {
        let mut e = stark_shift(n, n0, chi, spec.omega, order)?;
        if include_kerr {
            e += params.kerr_m[mode] * T::lit(0.5 * (n * n.saturating_sub(1)) as f64);
        }
        drift[(n, n)] = Complex::new(e, T::zero());
    }
    let a = annihilation_op::<T>(n0)?;
    let x = &a + a.transpose();
    let y = (&a - a.transpose()) * Complex::new(T::zero(), -T::one());
    Ok(ReducedModel { drift, controls: vec![x, y], n0, order })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::{is_hermitian, max_abs};
    use crate::TWO_PI;
    use proptest::prelude::*;

    fn c(x: f64) -> Complex<f64> {
        Complex::new(x, 0.0)
    }

    fn one_mode() -> DeviceParams<f64> {
        DeviceParams::uniform(
            TWO_PI * 4.99e9,
            vec![TWO_PI * 6.223e9],
            vec![TWO_PI * -1.136e6],
            vec![TWO_PI * -9e3],
        )
    }

    fn elem(h: &ComplexMatrix<f64>, l: &SystemLayout, a: &[usize], b: &[usize]) -> Complex<f64> {
        h[(l.index_of(a).unwrap(), l.index_of(b).unwrap())]
    }

    #[test]
    fn dispersive_matrix_elements() {
        let p = one_mode();
        let l = SystemLayout::new(2, vec![4]).unwrap();
        let h = build_dispersive_hamiltonian(&p, &l).unwrap();
        assert!(is_hermitian(&h, 1e-12));
        let diff = elem(&h, &l, &[1, 1], &[1, 1]) - elem(&h, &l, &[0, 1], &[0, 1]);
        assert!((diff.re - (p.omega_q + p.chi_m[0])).abs() < 1e-3);
        let g2 = elem(&h, &l, &[0, 2], &[0, 2]).re;
        assert!((g2 - (2.0 * p.omega_m[0] + p.kerr_m[0])).abs() < 1e-3);
        let offdiag: f64 = (0..8).flat_map(|i| (0..8).map(move |j| (i, j))).filter(|(i, j)| i != j).map(|(i, j)| h[(i, j)].norm()).sum();
        assert_eq!(offdiag, 0.0);
    }

    #[test]
    fn cross_kerr_counted_once() {
        let mut p = DeviceParams::uniform(0.0, vec![3.0, 5.0], vec![-1.0, -2.0], vec![0.0, 0.0]);
        p.set_cross_kerr(0, 1, 0.25);
        let l = SystemLayout::new(2, vec![3, 3]).unwrap();
        let h = build_dispersive_hamiltonian(&p, &l).unwrap();
        assert!((elem(&h, &l, &[0, 1, 1], &[0, 1, 1]).re - (3.0 + 5.0 + 0.25)).abs() < 1e-14);
        assert!(build_dispersive_hamiltonian(&p, &SystemLayout::new(2, vec![3]).unwrap()).is_err());
    }

    #[test]
    fn blockade_drift_structure() {
        let p = one_mode();
        let l = SystemLayout::new(2, vec![6]).unwrap();
        let omega = TWO_PI * 107e3;
        let spec = BlockadeSpec::single(0, 2, omega, p.chi_m[0]);
        let m = build_blockade_hamiltonian(&p, &l, &spec, 0).unwrap();
        assert!((elem(&m.drift, &l, &[0, 2], &[1, 2]) - c(omega)).norm() < 1e-9);
        let i = l.index_of(&[0, 2]).unwrap();
        let j = l.index_of(&[1, 2]).unwrap();
        let block = DMatrix::from_fn(2, 2, |a, b| m.drift[([i, j][a], [i, j][b])]);
        let ev = crate::ops::hermitian_eigenvalues(&block);
        let kerr = p.kerr_m[0];
        assert!((ev[0] - (kerr - omega)).abs() < 1e-6 * omega);
        assert!((ev[1] - (kerr + omega)).abs() < 1e-6 * omega);
        let bad = BlockadeSpec::single(0, 6, omega, p.chi_m[0]);
        assert!(build_blockade_hamiltonian(&p, &l, &bad, 0).is_err());
    }

    #[test]
    fn blockade_frame_without_drive_is_dispersive() {
        let p = one_mode();
        let l = SystemLayout::new(2, vec![5]).unwrap();
        let spec = BlockadeSpec::single(0, 0, 0.0, p.chi_m[0]);
        let m = build_blockade_hamiltonian(&p, &l, &spec, 0).unwrap();
        let mut rot = p.clone();
        rot.omega_q = 0.0;
        rot.omega_m = vec![0.0];
        let h = build_dispersive_hamiltonian(&rot, &l).unwrap();
        assert!(max_abs(&(m.drift - h)) < 1e-9);
    }

    #[test]
    fn multimode_single_mode_matches() {
        let p = one_mode();
        let l = SystemLayout::new(2, vec![5]).unwrap();
        let omega = TWO_PI * 107e3;
        let spec = BlockadeSpec::single(0, 2, omega, p.chi_m[0]);
        let single = build_blockade_hamiltonian(&p, &l, &spec, 0).unwrap();
        let multi = build_multimode_blockade_hamiltonian(&p, &l, &spec).unwrap();
        assert!(max_abs(&(single.drift - multi.drift)) < 1e-6);
    }

    #[test]
    fn multimode_pair_entry() {
        let mut p = DeviceParams::uniform(0.0, vec![0.0; 2], vec![-1.3, -0.9], vec![-0.01, -0.02]);
        p.set_cross_kerr(0, 1, 0.05);
        let l = SystemLayout::new(2, vec![3, 3]).unwrap();
        let delta = blockade_detuning(&p.chi_m, 2, &[0, 1]).unwrap();
        let spec = BlockadeSpec { target_modes: vec![0, 1], n0: 2, omega: 0.2, delta_nu_b: delta, cavity_frame: CavityFrame::Bare };
        let m = build_multimode_blockade_hamiltonian(&p, &l, &spec).unwrap();
        assert!(is_hermitian(&m.drift, 1e-12));
        assert_eq!(m.controls.len(), 4);
        let e11 = elem(&m.drift, &l, &[1, 1, 1], &[1, 1, 1]).re;
        assert!((e11 - (-1.3 - 0.9 - delta + 0.05)).abs() < 1e-14);
        let empty = BlockadeSpec { target_modes: vec![], ..spec };
        assert!(build_multimode_blockade_hamiltonian(&p, &l, &empty).is_err());
    }

    #[test]
    fn detuning_patterns() {
        let chis: [f64; 3] = [-1.3, -1.136, -0.95];
        let two = blockade_detuning(&chis, 2, &[1, 2]).unwrap();
        assert!((two - (chis[1] + chis[2])).abs() < 1e-14);
        let three = blockade_detuning(&chis, 2, &[0, 1, 2]).unwrap();
        assert!((three - 2.0 * (chis[0] + chis[1] + chis[2]) / 3.0).abs() < 1e-14);
        assert!((blockade_detuning(&chis, 3, &[1]).unwrap() - 3.0 * chis[1]).abs() < 1e-14);
    }

    #[test]
    fn stark_shift_values() {
        let chi = TWO_PI * -1.136e6;
        let omega = TWO_PI * 107e3;
        let lead = stark_shift(0, 2, chi, omega, StarkOrder::Leading).unwrap();
        assert!((lead / TWO_PI - -1259.793134).abs() < 1e-3);
        assert_eq!(stark_shift(3, 1, chi, 0.0, StarkOrder::Exact).unwrap(), 0.0);
        assert_eq!(stark_shift(3, 1, chi, 0.0, StarkOrder::Leading).unwrap(), 0.0);
        assert!(stark_shift(2, 2, chi, omega, StarkOrder::Leading).is_err());
        // exact 2x2 value, frozen from an independent numpy eigvalsh
        let exact = stark_shift(0, 2, chi, omega, StarkOrder::Exact).unwrap();
        assert!((exact / TWO_PI - -5028.045229).abs() < 1e-3);
    }

    #[test]
    fn dressed_energy_matches_diagonalization() {
        for &(delta, omega) in &[(3.0, 0.4), (-2.0, 0.7), (0.5, 1.5), (-0.1, 0.02)] {
            let m = DMatrix::from_row_slice(2, 2, &[c(0.0), c(omega), c(omega), c(delta)]);
            let ev = crate::ops::hermitian_eigenvalues(&m);
            let want = if delta > 0.0 { ev[0] } else { ev[1] };
            assert!((dressed_ground_energy(delta, omega) - want).abs() < 1e-12);
        }
    }

    #[test]
    fn reduced_model() {
        let p = one_mode();
        let omega = TWO_PI * 150e3;
        let spec = BlockadeSpec::single(0, 3, omega, p.chi_m[0]);
        let r = reduced_blockade_hamiltonian(&p, &spec, 0, StarkOrder::Leading, false).unwrap();
        assert_eq!(r.drift.nrows(), 3);
        let chi = p.chi_m[0];
        assert!((r.drift[(2, 2)].re - omega * omega / (4.0 * chi)).abs() < 1e-9);
        let a = annihilation_op::<f64>(3).unwrap();
        assert_eq!(r.controls[0], &a + a.transpose());
        let exact = reduced_blockade_hamiltonian(&p, &spec, 0, StarkOrder::Exact, false).unwrap();
        let d2 = exact.drift[(2, 2)].re;
        let want = stark_shift(2, 3, chi, omega, StarkOrder::Exact).unwrap();
        assert_eq!(d2, want);
        // nearest-level repulsion: |g,n0-1> is pushed away from the blockade
        assert!(d2 < 0.0);
        let bad = BlockadeSpec::single(0, 1, omega, chi);
        assert!(reduced_blockade_hamiltonian(&p, &bad, 0, StarkOrder::Leading, false).is_err());
    }

    #[test]
    fn validity_regime() {
        let p = one_mode();
        let spec = BlockadeSpec::single(0, 2, TWO_PI * 107e3, p.chi_m[0]);
        assert!(spec.validity(&p, TWO_PI * 10e3).holds());
        assert!(!spec.validity(&p, TWO_PI * 90e3).drive_below_rabi);
        let strong = BlockadeSpec::single(0, 2, TWO_PI * 2e6, p.chi_m[0]);
        assert!(!strong.validity(&p, TWO_PI * 10e3).rabi_below_chi);
    }

    #[test]
    fn params_validation() {
        let mut p = one_mode();
        assert!(p.validate().is_ok());
        p.t2_q = 3.0 * p.t1_q;
        assert!(matches!(p.validate(), Err(Error::Physicality(_))));
        let mut q = one_mode();
        q.nth_q = 1.0;
        assert!(q.validate().is_err());
    }

    #[test]
    fn dressed_frame_removes_line_shift() {
        let p = one_mode();
        let l = SystemLayout::new(2, vec![5]).unwrap();
        let omega = TWO_PI * 107e3;
        let spec = BlockadeSpec::single(0, 2, omega, p.chi_m[0]).with_frame(CavityFrame::Dressed);
        let m = build_blockade_hamiltonian(&p, &l, &spec, 0).unwrap();
        let ground = |n: usize| {
            let i = l.index_of(&[0, n]).unwrap();
            let j = l.index_of(&[1, n]).unwrap();
            let block = DMatrix::from_fn(2, 2, |a, b| m.drift[([i, j][a], [i, j][b])]);
            crate::ops::hermitian_eigenvalues(&block)
        };
        let g0 = ground(0)[0];
        let g1 = ground(1)[0];
        assert!((g1 - g0).abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn random_drifts_hermitian(
            chis in proptest::collection::vec(-3.0f64..-0.3, 3),
            kerrs in proptest::collection::vec(-0.05f64..0.0, 3),
            ck in -0.02f64..0.02,
            omega in 0.0f64..0.5,
        ) {
            let mut p = DeviceParams::uniform(1.0, vec![2.0, 3.0, 4.0], chis.clone(), kerrs);
            p.set_cross_kerr(0, 2, ck);
            let l = SystemLayout::new(2, vec![3, 2, 3]).unwrap();
            let delta = blockade_detuning(&chis, 2, &[0, 1, 2]).unwrap();
            let spec = BlockadeSpec { target_modes: vec![0, 2], n0: 2, omega, delta_nu_b: delta, cavity_frame: CavityFrame::Dressed };
            let m = build_multimode_blockade_hamiltonian(&p, &l, &spec).unwrap();
            prop_assert!(is_hermitian(&m.drift, 1e-12));
            prop_assert!(m.controls.iter().all(|c| is_hermitian(c, 1e-12)));
            prop_assert!(is_hermitian(&build_dispersive_hamiltonian(&p, &l).unwrap(), 1e-12));
        }

        #[test]
        fn leading_stark_is_odd(n in 0usize..8, n0 in 0usize..8, chi in -3.0f64..-0.2, omega in 0.0f64..0.3) {
            prop_assume!(n != n0);
            let mirrored = 2 * n0 as i64 - n as i64;
            prop_assume!(mirrored >= 0);
            let a = stark_shift(n, n0, chi, omega, StarkOrder::Leading).unwrap();
            let b = stark_shift(mirrored as usize, n0, chi, omega, StarkOrder::Leading).unwrap();
            prop_assert!((a + b).abs() <= 1e-12 * (1.0 + a.abs()));
        }
    }
}
