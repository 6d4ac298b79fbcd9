//! Calibration fits, W-state fidelity and witness, transfer functions and
//! pulse spectra.
//!
//! Fits run in `f64`; the remaining helpers are generic.

use crate::lindblad::PulseSequence;
use crate::ops::{project_site, DensityMatrix, StateVector, SystemLayout};
use crate::{cis, ComplexMatrix, ComplexVector, Error, Real, Result};
use argmin::core::{CostFunction, Executor};
use argmin::solver::neldermead::NelderMead;
use levenberg_marquardt::{LeastSquaresProblem, LevenbergMarquardt};
use nalgebra::{DMatrix, DVector, Dyn, Owned, SymmetricEigen};
use num_complex::Complex;
use rustfft::FftPlanner;

/// `P0(t) = |exp(-alpha^2) sum_n alpha^(2n)/n! exp(-i t n (omega + kerr n/2))|^2`.
pub fn cavity_ramsey_signal<T: Real>(t: T, alpha: T, omega: T, kerr: T) -> T {
    let a2 = alpha * alpha;
    let mut sum = Complex::new(T::zero(), T::zero());
    let mut weight = (-a2).exp();
    let mut n = 0usize;
    loop {
        let nf = T::lit(n as f64);
        sum += cis(-t * nf * (omega + kerr * nf * T::lit(0.5))) * weight;
        n += 1;
        weight = weight * a2 / T::lit(n as f64);
        if (weight < T::lit(1e-16) && T::lit(n as f64) > a2) || n > 10_000 {
            break;
        }
    }
    sum.norm_sqr().min(T::one())
}

#[derive(Debug, Clone, PartialEq)]
pub enum FitModel {
    /// `a exp(-gamma t) cos(2 pi f t + phi) + c`; parameters
    /// `[amplitude, frequency_hz, phase, offset, decay_rate]`.
    Ramsey,
    /// [`cavity_ramsey_signal`] with one displacement per sample; parameters
    /// `[omega, kerr]` in rad/s. The Kerr starting value is scanned over
    /// `|kerr| <= kerr_range` (rad/s); when unset the range is the
    /// oscillation frequency found in the data.
    CavityRamsey { alphas: Vec<f64>, kerr_range: Option<f64> },
}

#[derive(Debug, Clone)]
pub struct FitReport {
    pub names: Vec<&'static str>,
    pub values: Vec<f64>,
    /// One-sigma errors from the covariance diagonal.
    pub sigmas: Vec<f64>,
    /// `None` when the normal matrix is singular.
    pub covariance: Option<DMatrix<f64>>,
    pub residual_rms: f64,
    pub converged: bool,
    pub degenerate: bool,
    pub termination: String,
}

impl FitReport {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| *n == name).map(|i| self.values[i])
    }

    /// `parameter value sigma` lines followed by the residual.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (i, n) in self.names.iter().enumerate() {
            s.push_str(&format!("{n} {:.10e} {:.3e}\n", self.values[i], self.sigmas[i]));
        }
        s.push_str(&format!("residual_rms {:.3e}\nconverged {}\ndegenerate {}\n", self.residual_rms, self.converged, self.degenerate));
        s
    }
}

trait Model {
    fn eval(&self, p: &[f64], i: usize) -> (f64, Vec<f64>);
}

struct RamseyModel<'a> {
    t: &'a [f64],
}

impl Model for RamseyModel<'_> {
    fn eval(&self, p: &[f64], i: usize) -> (f64, Vec<f64>) {
        let t = self.t[i];
        let (a, f, phi, c, g) = (p[0], p[1], p[2], p[3], p[4]);
        let env = (-g * t).exp();
        let arg = std::f64::consts::TAU * f * t + phi;
        let (s, co) = arg.sin_cos();
        let v = a * env * co + c;
        (v, vec![env * co, -a * env * s * std::f64::consts::TAU * t, -a * env * s, 1.0, -t * a * env * co])
    }
}

struct CavityModel<'a> {
    t: &'a [f64],
    alphas: &'a [f64],
}

impl Model for CavityModel<'_> {
    fn eval(&self, p: &[f64], i: usize) -> (f64, Vec<f64>) {
        let (t, a2) = (self.t[i], self.alphas[i] * self.alphas[i]);
        let (omega, kerr) = (p[0], p[1]);
        let mut s = Complex::new(0.0, 0.0);
        let mut ds_dw = s;
        let mut ds_dk = s;
        let mut weight = (-a2).exp();
        let mut n = 0usize;
        loop {
            let nf = n as f64;
            let term = Complex::from_polar(weight, -t * nf * (omega + 0.5 * kerr * nf));
            s += term;
            ds_dw += term * Complex::new(0.0, -t * nf);
            ds_dk += term * Complex::new(0.0, -0.5 * t * nf * nf);
            n += 1;
            weight *= a2 / n as f64;
            if (weight < 1e-16 && n as f64 > a2) || n > 10_000 {
                break;
            }
        }
        let v = s.norm_sqr();
        (v, vec![2.0 * (s.conj() * ds_dw).re, 2.0 * (s.conj() * ds_dk).re])
    }
}

struct Lsq<'a, M: Model> {
    model: &'a M,
    y: &'a [f64],
    p: DVector<f64>,
}

impl<M: Model> LeastSquaresProblem<f64, Dyn, Dyn> for Lsq<'_, M> {
    type ResidualStorage = Owned<f64, Dyn>;
    type JacobianStorage = Owned<f64, Dyn, Dyn>;
    type ParameterStorage = Owned<f64, Dyn>;

    fn set_params(&mut self, x: &DVector<f64>) {
        self.p.copy_from(x);
    }

    fn params(&self) -> DVector<f64> {
        self.p.clone()
    }

    fn residuals(&self) -> Option<DVector<f64>> {
        let p = self.p.as_slice();
        Some(DVector::from_iterator(self.y.len(), (0..self.y.len()).map(|i| self.model.eval(p, i).0 - self.y[i])))
    }

    fn jacobian(&self) -> Option<DMatrix<f64>> {
        let p = self.p.as_slice();
        let mut j = DMatrix::zeros(self.y.len(), p.len());
        for i in 0..self.y.len() {
            for (k, d) in self.model.eval(p, i).1.into_iter().enumerate() {
                j[(i, k)] = d;
            }
        }
        Some(j)
    }
}

fn rss<M: Model>(model: &M, y: &[f64], p: &[f64]) -> f64 {
    y.iter().enumerate().map(|(i, &v)| (model.eval(p, i).0 - v).powi(2)).sum()
}

fn run_lm<M: Model>(model: &M, y: &[f64], p0: Vec<f64>, names: Vec<&'static str>) -> FitReport {
    let problem = Lsq { model, y, p: DVector::from_vec(p0) };
    let (problem, report) = LevenbergMarquardt::new().with_patience(400).minimize(problem);
    let p: Vec<f64> = problem.p.iter().copied().collect();
    let n = y.len();
    let k = p.len();
    let r = rss(model, y, &p);
    let jac = problem.jacobian().expect("jacobian");
    let jtj = jac.transpose() * &jac;
    let s2 = if n > k { r / (n - k) as f64 } else { 0.0 };
    let scale = DVector::from_iterator(k, (0..k).map(|i| 1.0 / jtj[(i, i)].max(1e-300).sqrt()));
    let normalized = DMatrix::from_fn(k, k, |i, j| jtj[(i, j)] * scale[i] * scale[j]);
    let sv = normalized.singular_values();
    let well_posed = jtj.diagonal().iter().all(|&v| v > 0.0) && sv.min() > 1e-12 * sv.max();
    let covariance = if well_posed { jtj.try_inverse().map(|inv| inv * s2) } else { None };
    let sigmas = match &covariance {
        Some(c) => (0..k).map(|i| c[(i, i)].max(0.0).sqrt()).collect(),
        None => vec![f64::NAN; k],
    };
    FitReport {
        names,
        values: p,
        sigmas,
        degenerate: covariance.is_none(),
        covariance,
        residual_rms: (r / n as f64).sqrt(),
        converged: report.termination.was_successful(),
        termination: format!("{:?}", report.termination),
    }
}

/// Strongest angular frequency of `y - mean(y)` on a grid up to the Nyquist
/// rate of the smallest sample spacing, refined by a parabola through the
/// peak. Returns the angular frequency and the complex amplitude
/// `sum (y - mean) exp(-i w t)`.
fn periodogram_peak(t: &[f64], y: &[f64]) -> (f64, Complex<f64>) {
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let span = t.iter().copied().fold(f64::MIN, f64::max) - t.iter().copied().fold(f64::MAX, f64::min);
    let mut sorted = t.to_vec();
    sorted.sort_by(f64::total_cmp);
    let dt_min = sorted.windows(2).map(|w| w[1] - w[0]).filter(|&d| d > 0.0).fold(f64::MAX, f64::min);
    if !(span > 0.0) || dt_min == f64::MAX {
        return (0.0, Complex::new(0.0, 0.0));
    }
    let dw = std::f64::consts::TAU / (8.0 * span);
    let nmax = ((std::f64::consts::PI / dt_min) / dw).ceil() as usize;
    let amp = |w: f64| -> Complex<f64> { t.iter().zip(y).map(|(&ti, &yi)| Complex::from_polar(yi - mean, -w * ti)).sum() };
    let power: Vec<f64> = (0..=nmax).map(|j| amp(j as f64 * dw).norm_sqr()).collect();
    let best = (1..power.len()).max_by(|&a, &b| power[a].total_cmp(&power[b])).unwrap_or(0);
    let mut w = best as f64 * dw;
    if best >= 1 && best + 1 < power.len() {
        let (a, b, c) = (power[best - 1].sqrt(), power[best].sqrt(), power[best + 1].sqrt());
        let denom = a - 2.0 * b + c;
        if denom.abs() > 0.0 {
            w += 0.5 * (a - c) / denom * dw;
        }
    }
    (w, amp(w))
}

/// Least-squares fit of an oscillation model. Starting values come from a
/// periodogram (and a Kerr scan for the cavity model); the result is
/// deterministic.
pub fn fit_oscillation(t: &[f64], y: &[f64], model: &FitModel) -> Result<FitReport> {
    if t.len() != y.len() {
        return Err(Error::Shape(format!("{} times for {} values", t.len(), y.len())));
    }
    if t.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("fit data must be finite".into()));
    }
    let n_params = match model {
        FitModel::Ramsey => 5,
        FitModel::CavityRamsey { .. } => 2,
    };
    if t.len() < 4 * n_params {
        return Err(Error::InvalidArgument(format!("{} samples for {n_params} parameters; need at least {}", t.len(), 4 * n_params)));
    }
    match model {
        FitModel::Ramsey => Ok(fit_ramsey(t, y)),
        FitModel::CavityRamsey { alphas, kerr_range } => {
            if alphas.len() != t.len() {
                return Err(Error::Shape("need one displacement per sample".into()));
            }
            Ok(fit_cavity_ramsey(t, y, alphas, *kerr_range))
        }
    }
}

fn fit_ramsey(t: &[f64], y: &[f64]) -> FitReport {
    let names = vec!["amplitude", "frequency_hz", "phase", "offset", "decay_rate"];
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let spread = y.iter().map(|v| (v - mean).abs()).fold(0.0, f64::max);
    if spread <= 1e-12 * (1.0 + mean.abs()) {
        return FitReport {
            names,
            values: vec![0.0, 0.0, 0.0, mean, 0.0],
            sigmas: vec![f64::NAN; 5],
            covariance: None,
            residual_rms: 0.0,
            converged: true,
            degenerate: true,
            termination: "constant series".into(),
        };
    }
    let (w, z) = periodogram_peak(t, y);
    let p0 = vec![2.0 * z.norm() / t.len() as f64, w / std::f64::consts::TAU, z.arg(), mean, 0.0];
    let model = RamseyModel { t };
    let mut rep = run_lm(&model, y, p0, names);
    if rep.values[0] < 0.0 {
        rep.values[0] = -rep.values[0];
        rep.values[2] += std::f64::consts::PI;
    }
    if rep.values[1] < 0.0 {
        rep.values[1] = -rep.values[1];
        rep.values[2] = -rep.values[2];
    }
    rep.values[2] = rep.values[2].rem_euclid(std::f64::consts::TAU);
    rep
}

fn fit_cavity_ramsey(t: &[f64], y: &[f64], alphas: &[f64], kerr_range: Option<f64>) -> FitReport {
    let names = vec!["omega", "kerr"];
    let amin = alphas.iter().copied().fold(f64::MAX, f64::min);
    let (ts, ys): (Vec<f64>, Vec<f64>) =
        t.iter().zip(y).zip(alphas).filter(|(_, &a)| a == amin).map(|((&ti, &yi), _)| (ti, yi)).unzip();
    let (w_guess, _) = if ts.len() >= 4 { periodogram_peak(&ts, &ys) } else { periodogram_peak(t, y) };
    let model = CavityModel { t, alphas };
    let range = kerr_range.unwrap_or(w_guess.abs()).abs();
    let steps = 400;
    let mut best = (f64::MAX, vec![w_guess, 0.0]);
    for s in 0..=steps {
        let k = -range + 2.0 * range * s as f64 / steps as f64;
        let p = vec![w_guess - 0.5 * k, k];
        let r = rss(&model, y, &p);
        if r < best.0 {
            best = (r, p);
        }
    }
    run_lm(&model, y, best.1, names)
}

/// Single-excitation W state `(|10..0> + e^{i phi_1}|010..> + ...)/sqrt N`.
#[derive(Debug, Clone)]
pub struct WState<T: Real> {
    pub phases: Vec<T>,
    /// Amplitude of one photon in mode `j`.
    pub amplitudes: ComplexVector<T>,
}

impl<T: Real> WState<T> {
    pub fn n_modes(&self) -> usize {
        self.amplitudes.len()
    }

    /// The state on `layout`, with the transmon (if any) in its ground state.
    pub fn embed(&self, layout: &SystemLayout) -> Result<StateVector<T>> {
        if layout.n_modes() != self.n_modes() {
            return Err(Error::Shape(format!("layout has {} modes, W state {}", layout.n_modes(), self.n_modes())));
        }
        if layout.mode_dims().iter().any(|&d| d < 2) {
            return Err(Error::Shape("every mode needs at least two Fock levels".into()));
        }
        let mut v = DVector::zeros(layout.total_dim());
        for j in 0..self.n_modes() {
            let mut occ = vec![0; layout.dims().len()];
            occ[SystemLayout::mode_site(j)] = 1;
            let idx = layout.index_of(&occ)?;
            v[idx] = self.amplitudes[j];
        }
        StateVector::new(layout.clone(), v)
    }

    pub fn projector(&self, layout: &SystemLayout) -> Result<ComplexMatrix<T>> {
        let v = self.embed(layout)?.amplitudes;
        Ok(&v * v.adjoint())
    }
}

pub fn w_state<T: Real>(n_modes: usize, phases: &[T]) -> Result<WState<T>> {
    if n_modes < 2 {
        return Err(Error::InvalidArgument("a W state needs at least two modes".into()));
    }
    if phases.len() != n_modes - 1 {
        return Err(Error::Shape(format!("{n_modes} modes need {} phases, got {}", n_modes - 1, phases.len())));
    }
    let norm = T::one() / T::lit(n_modes as f64).sqrt();
    let amplitudes = DVector::from_fn(n_modes, |j, _| if j == 0 { Complex::new(norm, T::zero()) } else { cis(phases[j - 1]) * norm });
    Ok(WState { phases: phases.to_vec(), amplitudes })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fidelity<T> {
    /// `Tr[rho sigma]`.
    pub value: T,
    /// Both inputs are mixed, so `value` is the overlap, not the Uhlmann
    /// fidelity.
    pub mixed_inputs: bool,
}

/// `Tr[rho sigma]`; equals `<psi|rho|psi>` when `sigma = |psi><psi|`.
pub fn state_fidelity<T: Real>(rho: &ComplexMatrix<T>, sigma: &ComplexMatrix<T>) -> Result<Fidelity<T>> {
    if rho.shape() != sigma.shape() || !rho.is_square() {
        return Err(Error::Shape(format!("fidelity of {:?} and {:?} matrices", rho.shape(), sigma.shape())));
    }
    let purity = |m: &ComplexMatrix<T>| (m * m).trace().re;
    let pure = |m: &ComplexMatrix<T>| (purity(m) - T::one()).abs() < T::lit(1e-9);
    let value = (rho * sigma).trace().re.max(T::zero()).min(T::one());
    Ok(Fidelity { value, mixed_inputs: !pure(rho) && !pure(sigma) })
}

/// Uhlmann fidelity `(Tr sqrt(sqrt(rho) sigma sqrt(rho)))^2`.
pub fn uhlmann_fidelity<T: Real>(rho: &ComplexMatrix<T>, sigma: &ComplexMatrix<T>) -> Result<T> {
    if rho.shape() != sigma.shape() || !rho.is_square() {
        return Err(Error::Shape(format!("fidelity of {:?} and {:?} matrices", rho.shape(), sigma.shape())));
    }
    let eig = SymmetricEigen::new((rho + rho.adjoint()) * Complex::new(T::lit(0.5), T::zero()));
    let roots = eig.eigenvalues.map(|l| Complex::new(l.max(T::zero()).sqrt(), T::zero()));
    let sqrt_rho = &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.adjoint();
    let inner = &sqrt_rho * sigma * &sqrt_rho;
    let inner = (&inner + inner.adjoint()) * Complex::new(T::lit(0.5), T::zero());
    let sum = SymmetricEigen::new(inner).eigenvalues.iter().fold(T::zero(), |acc, &l| acc + l.max(T::zero()).sqrt());
    Ok((sum * sum).min(T::one()))
}

/// `<g|rho|g>`-style overlap with a pure state.
pub fn pure_fidelity<T: Real>(rho: &ComplexMatrix<T>, psi: &ComplexVector<T>) -> Result<T> {
    if rho.nrows() != psi.len() || !rho.is_square() {
        return Err(Error::Shape(format!("state of length {} against {:?} matrix", psi.len(), rho.shape())));
    }
    Ok(psi.dotc(&(rho * psi)).re)
}

/// Single-excitation block `R_jk = <1_j|rho|1_k>` of a cavity (or
/// transmon-ground) density matrix.
fn excitation_block<T: Real>(rho: &DensityMatrix<T>) -> Result<ComplexMatrix<T>> {
    let layout = &rho.layout;
    let n = layout.n_modes();
    let mut idx = Vec::with_capacity(n);
    for j in 0..n {
        let mut occ = vec![0; layout.dims().len()];
        occ[SystemLayout::mode_site(j)] = 1;
        idx.push(layout.index_of(&occ)?);
    }
    Ok(DMatrix::from_fn(n, n, |a, b| rho.matrix[(idx[a], idx[b])]))
}

fn w_overlap<T: Real>(block: &ComplexMatrix<T>, phases: &[f64]) -> f64 {
    let n = block.nrows();
    let amp = |j: usize| if j == 0 { Complex::new(1.0, 0.0) } else { Complex::from_polar(1.0, phases[j - 1]) };
    let mut s = Complex::new(0.0, 0.0);
    for a in 0..n {
        for b in 0..n {
            let r = block[(a, b)];
            s += amp(a).conj() * Complex::new(r.re.as_f64(), r.im.as_f64()) * amp(b);
        }
    }
    s.re / n as f64
}

struct NegOverlap<'a, T: Real> {
    block: &'a ComplexMatrix<T>,
}

impl<T: Real> CostFunction for NegOverlap<'_, T> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, p: &Vec<f64>) -> std::result::Result<f64, argmin::core::Error> {
        Ok(-w_overlap(self.block, p))
    }
}

/// `(N-1)/N - max_phi <W_phi|rho|W_phi>` and the maximizing phases in
/// `[0, 2 pi)`. The phases are scanned on a 64-point grid each, then polished
/// with Nelder-Mead.
pub fn entanglement_witness<T: Real>(rho: &DensityMatrix<T>) -> Result<(T, Vec<T>)> {
    let n = rho.layout.n_modes();
    if n < 2 {
        return Err(Error::InvalidArgument("the witness needs at least two modes".into()));
    }
    if rho.layout.mode_dims().iter().any(|&d| d < 2) {
        return Err(Error::Shape("every mode needs at least two Fock levels".into()));
    }
    let block = excitation_block(rho)?;
    let grid = 64usize;
    let step = std::f64::consts::TAU / grid as f64;
    let free = n - 1;
    let mut best = (f64::MIN, vec![0.0; free]);
    let total = grid.pow(free as u32);
    let mut phases = vec![0.0; free];
    for code in 0..total {
        let mut c = code;
        for p in phases.iter_mut() {
            *p = (c % grid) as f64 * step;
            c /= grid;
        }
        let f = w_overlap(&block, &phases);
        if f > best.0 {
            best = (f, phases.clone());
        }
    }
    let mut simplex = vec![best.1.clone()];
    for k in 0..free {
        let mut v = best.1.clone();
        v[k] += 0.5 * step;
        simplex.push(v);
    }
    let solver = NelderMead::new(simplex).with_sd_tolerance(1e-12).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    if let Ok(res) = Executor::new(NegOverlap { block: &block }, solver).configure(|s| s.max_iters(500)).run() {
        if let Some(p) = res.state.best_param {
            let f = w_overlap(&block, &p);
            if f > best.0 {
                best = (f, p);
            }
        }
    }
    let witness = (n as f64 - 1.0) / n as f64 - best.0;
    Ok((T::lit(witness), best.1.iter().map(|p| T::lit(p.rem_euclid(std::f64::consts::TAU))).collect()))
}

/// Cavity state after the transmon is found in `|g>`: the `<g|rho|g>` block,
/// with the weight of the other transmon levels moved onto the cavity vacuum so
/// the trace stays one. Overlaps with states orthogonal to the vacuum equal
/// those of the unnormalized ground block.
pub fn ground_conditioned_cavity<T: Real>(rho: &DensityMatrix<T>) -> Result<DensityMatrix<T>> {
    let layout = &rho.layout;
    let mut block = project_site(&layout.dims(), &rho.matrix, 0, 0)?;
    let lost = rho.trace() - block.trace().re;
    block[(0, 0)] += Complex::new(lost, T::zero());
    DensityMatrix::new(SystemLayout::cavity(layout.mode_dims().to_vec())?, block)
}

/// `U rho U^dag` with `U = exp(-i sum_m phi_m N_m)`.
pub fn gauge_transform<T: Real>(rho: &DensityMatrix<T>, phases: &[T]) -> Result<DensityMatrix<T>> {
    let layout = &rho.layout;
    if phases.len() != layout.n_modes() {
        return Err(Error::Shape(format!("{} phases for {} modes", phases.len(), layout.n_modes())));
    }
    let d = layout.total_dim();
    let ph: Vec<Complex<T>> = (0..d)
        .map(|i| {
            let occ = layout.occupations_of(i).expect("index in range");
            let angle = phases.iter().enumerate().fold(T::zero(), |acc, (m, &p)| acc + p * T::lit(occ[m + 1] as f64));
            cis(-angle)
        })
        .collect();
    let m = DMatrix::from_fn(d, d, |i, j| ph[i] * rho.matrix[(i, j)] * ph[j].conj());
    Ok(DensityMatrix { layout: layout.clone(), matrix: m })
}

/// Phases that make `<1_0|rho|1_j>` real and non-negative under
/// [`gauge_transform`].
pub fn w_gauge_phases<T: Real>(rho: &DensityMatrix<T>) -> Result<Vec<T>> {
    let block = excitation_block(rho)?;
    Ok((0..rho.layout.n_modes()).map(|j| if j == 0 { T::zero() } else { -block[(0, j)].im.atan2(block[(0, j)].re) }).collect())
}

/// Calibration table of drive strength against AWG amplitude. Tables are
/// given for non-negative amplitudes and extended as an odd function.
#[derive(Debug, Clone)]
pub struct TransferFunction<T: Real> {
    amplitudes: Vec<T>,
    strengths: Vec<T>,
}

impl<T: Real> TransferFunction<T> {
    pub fn new(points: &[(T, T)]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Calibration("empty transfer table".into()));
        }
        let mut amplitudes = Vec::with_capacity(points.len() + 1);
        let mut strengths = Vec::with_capacity(points.len() + 1);
        if points[0].0 > T::zero() {
            amplitudes.push(T::zero());
            strengths.push(T::zero());
        }
        for &(a, s) in points {
            amplitudes.push(a);
            strengths.push(s);
        }
        if amplitudes[0] != T::zero() || strengths[0] != T::zero() {
            return Err(Error::Calibration("table must start at the origin or at a positive amplitude".into()));
        }
        if amplitudes.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Calibration("amplitudes must be strictly increasing".into()));
        }
        if strengths.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Calibration("strength must not decrease with amplitude".into()));
        }
        Ok(Self { amplitudes, strengths })
    }

    pub fn max_strength(&self) -> T {
        *self.strengths.last().expect("non-empty")
    }

    pub fn max_amplitude(&self) -> T {
        *self.amplitudes.last().expect("non-empty")
    }

    /// AWG amplitude for a requested drive strength.
    pub fn lookup(&self, strength: T) -> Result<T> {
        let mag = strength.abs();
        if mag > self.max_strength() {
            return Err(Error::Extrapolation(format!("strength {strength} beyond calibrated {}", self.max_strength())));
        }
        Ok(interp(&self.strengths, &self.amplitudes, mag).copysign_of(strength))
    }

    /// Drive strength produced by an AWG amplitude.
    pub fn strength(&self, amplitude: T) -> Result<T> {
        let mag = amplitude.abs();
        if mag > self.max_amplitude() {
            return Err(Error::Extrapolation(format!("amplitude {amplitude} beyond calibrated {}", self.max_amplitude())));
        }
        Ok(interp(&self.amplitudes, &self.strengths, mag).copysign_of(amplitude))
    }

    /// Reads `amplitude,strength` columns.
    pub fn from_csv(text: &str) -> Result<Self> {
        let (header, cols) = crate::io::read_numeric_csv(text)?;
        let col = |name: &str| {
            header.iter().position(|h| h == name).ok_or_else(|| Error::Parse(format!("transfer table lacks column {name:?}")))
        };
        let (a, s) = (col("amplitude")?, col("strength")?);
        let pts: Vec<(T, T)> = cols[a].iter().zip(&cols[s]).map(|(&x, &y)| (T::lit(x), T::lit(y))).collect();
        Self::new(&pts)
    }
}

trait CopySign {
    fn copysign_of(self, sign: Self) -> Self;
}

impl<T: Real> CopySign for T {
    fn copysign_of(self, sign: T) -> T {
        if sign < T::zero() {
            -self
        } else {
            self
        }
    }
}

/// Linear interpolation of `ys` at `x` on non-decreasing `xs`; flat segments
/// resolve to their left end.
fn interp<T: Real>(xs: &[T], ys: &[T], x: T) -> T {
    let i = xs.partition_point(|&v| v < x);
    if i == 0 {
        return ys[0];
    }
    if i >= xs.len() {
        return *ys.last().expect("non-empty");
    }
    let (x0, x1) = (xs[i - 1], xs[i]);
    if x1 == x0 {
        return ys[i - 1];
    }
    ys[i - 1] + (ys[i] - ys[i - 1]) * (x - x0) / (x1 - x0)
}

/// `dt |sum_k eps_k exp(i w t_k)|` on the DFT grid of channel `c`, ordered by
/// angular frequency from `-pi/dt` upward.
pub fn pulse_spectrum<T: Real>(pulse: &PulseSequence<T>, c: usize) -> Result<Vec<(T, T)>> {
    if c >= pulse.n_channels() {
        return Err(Error::OutOfRange(format!("channel {c} of {}", pulse.n_channels())));
    }
    let n = pulse.steps();
    let mut buf = pulse.channel(c).to_vec();
    FftPlanner::<T>::new().plan_fft_inverse(n).process(&mut buf);
    let dt = pulse.dt();
    let bin = T::two_pi() / (T::lit(n as f64) * dt);
    let mut out: Vec<(T, T)> = (0..n)
        .map(|j| {
            let signed = if j < n.div_ceil(2) { j as f64 } else { j as f64 - n as f64 };
            (bin * T::lit(signed), buf[j].norm_sqr().sqrt() * dt)
        })
        .collect();
    out.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));
    Ok(out)
}

/// Coherent amplitude left in a lossless linear cavity detuned by `delta`
/// from the drive frame, `|alpha| = |int eps(t) exp(i delta t) dt| / 2`,
/// integrating each piecewise-constant slot exactly. The factor 1/2 matches
/// the slope convention `|eps| = 2 |alpha| / tau` for a square pulse.
pub fn coherent_response<T: Real>(pulse: &PulseSequence<T>, c: usize, delta: T) -> Result<T> {
    if c >= pulse.n_channels() {
        return Err(Error::OutOfRange(format!("channel {c} of {}", pulse.n_channels())));
    }
    let dt = pulse.dt();
    let slot = if delta.abs() * dt < T::lit(1e-9) {
        Complex::new(dt, T::zero())
    } else {
        (cis(delta * dt) - Complex::new(T::one(), T::zero())) / Complex::new(T::zero(), delta)
    };
    let mut s = Complex::new(T::zero(), T::zero());
    for (k, &e) in pulse.channel(c).iter().enumerate() {
        s += e * cis(delta * dt * T::lit(k as f64));
    }
    Ok((s * slot).norm_sqr().sqrt() * T::lit(0.5))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::TWO_PI;
    use proptest::prelude::*;

    #[test]
    fn ramsey_signal_examples() {
        for a in [0.0, 0.5, 1.7] {
            assert!((cavity_ramsey_signal(0.0f64, a, 3.0, -0.2) - 1.0).abs() < 1e-12);
        }
        for t in [0.0, 0.3, 2.0] {
            assert!((cavity_ramsey_signal(t, 0.0f64, 3.0, -0.2) - 1.0).abs() < 1e-15);
        }
        for (t, a, w) in [(0.37, 1.2, 5.0), (1.1, 0.4, -2.0), (2.5, 2.0, 0.7)] {
            let closed = (-2.0 * a * a + 2.0 * a * a * (w * t as f64).cos()).exp();
            assert!((cavity_ramsey_signal(t, a, w, 0.0) - closed).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn ramsey_signal_is_probability(t in 0.0..1e-4f64, a in 0.0..3.0f64, w in -1e6..1e6f64, k in -1e5..1e5f64) {
            let p = cavity_ramsey_signal(t, a, w, k);
            prop_assert!((0.0..=1.0).contains(&p));
        }
    }

    fn ramsey_data(f: f64, a: f64, phi: f64, c: f64, g: f64, n: usize, span: f64) -> (Vec<f64>, Vec<f64>) {
        let t: Vec<f64> = (0..n).map(|i| span * i as f64 / n as f64).collect();
        let y = t.iter().map(|&t| a * (-g * t).exp() * (TWO_PI * f * t + phi).cos() + c).collect();
        (t, y)
    }

    #[test]
    fn fits_ramsey_frequency() {
        let (t, y) = ramsey_data(1.136e6, 0.45, 0.3, 0.5, 2e4, 200, 10e-6);
        let r = fit_oscillation(&t, &y, &FitModel::Ramsey).unwrap();
        assert!(r.converged, "{}", r.termination);
        assert!((r.get("frequency_hz").unwrap() / 1.136e6 - 1.0).abs() < 1e-4);
        assert!(!r.degenerate);
    }

    #[test]
    fn ramsey_self_inverse_random_draws() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let f = rng.random_range(0.2e6..2.0e6);
            let a = rng.random_range(0.2..0.5);
            let phi = rng.random_range(0.0..TWO_PI);
            let c = rng.random_range(0.3..0.7);
            let g = rng.random_range(0.0..1e5);
            let (t, y) = ramsey_data(f, a, phi, c, g, 200, 10e-6);
            let r = fit_oscillation(&t, &y, &FitModel::Ramsey).unwrap();
            assert!((r.get("frequency_hz").unwrap() / f - 1.0).abs() < 1e-3, "f {f}: {:?}", r.values);
        }
    }

    #[test]
    fn constant_series_is_degenerate() {
        let t: Vec<f64> = (0..40).map(|i| i as f64 * 1e-7).collect();
        let y = vec![0.42; 40];
        let r = fit_oscillation(&t, &y, &FitModel::Ramsey).unwrap();
        assert_eq!(r.get("frequency_hz"), Some(0.0));
        assert!(r.degenerate && r.covariance.is_none());
        assert!(fit_oscillation(&t[..10], &y[..10], &FitModel::Ramsey).is_err());
    }

    #[test]
    fn fits_cavity_kerr() {
        let omega = TWO_PI * 100e3;
        let kerr = TWO_PI * -9e3;
        let mut t = Vec::new();
        let mut alphas = Vec::new();
        let mut y = Vec::new();
        for a in [0.3, 0.6, 0.9, 1.2, 1.5] {
            for i in 0..120 {
                let ti = 60e-6 * i as f64 / 120.0;
                t.push(ti);
                alphas.push(a);
                y.push(cavity_ramsey_signal(ti, a, omega, kerr));
            }
        }
        let r = fit_oscillation(&t, &y, &FitModel::CavityRamsey { alphas, kerr_range: None }).unwrap();
        assert!((r.get("kerr").unwrap() / kerr - 1.0).abs() < 0.01, "{:?}", r.values);
        assert!((r.get("omega").unwrap() / omega - 1.0).abs() < 1e-3);
    }

    #[test]
    fn w_state_fidelities() {
        let l = SystemLayout::cavity(vec![2, 2, 2]).unwrap();
        let w = w_state(3, &[0.0f64, 0.0]).unwrap();
        let proj: crate::CMatrix = w.projector(&l).unwrap();
        assert!((state_fidelity(&proj, &proj).unwrap().value - 1.0).abs() < 1e-12);
        let e100 = crate::ops::fock_state::<f64>(&l, 0, &[1, 0, 0]).unwrap().to_density();
        assert!((state_fidelity(&e100.matrix, &proj).unwrap().value - 1.0 / 3.0).abs() < 1e-12);
        let rotated = WState { amplitudes: w.amplitudes.map(|z| z * cis(0.77)), ..w.clone() };
        assert!((state_fidelity(&rotated.projector(&l).unwrap(), &proj).unwrap().value - 1.0).abs() < 1e-12);
        let mixed = DensityMatrix::<f64>::maximally_mixed(l.clone());
        assert!(state_fidelity(&mixed.matrix, &mixed.matrix).unwrap().mixed_inputs);
        assert!(w_state::<f64>(3, &[0.1]).is_err());
    }

    #[test]
    fn witness_examples() {
        for (n, phases) in [(2usize, vec![1.3]), (3, vec![-0.403, -0.866])] {
            let l = SystemLayout::cavity(vec![2; n]).unwrap();
            let w = w_state(n, &phases).unwrap();
            let rho = DensityMatrix::new(l, w.projector(&SystemLayout::cavity(vec![2; n]).unwrap()).unwrap()).unwrap();
            let (val, ph) = entanglement_witness(&rho).unwrap();
            assert!((val + 1.0 / n as f64).abs() < 1e-9, "{val}");
            for (a, b) in ph.iter().zip(&phases) {
                let d = (a - b).rem_euclid(TWO_PI);
                assert!(d.min(TWO_PI - d) < 1e-4, "{a} vs {b}");
            }
        }
        let l = SystemLayout::cavity(vec![2, 2]).unwrap();
        let mut m = DMatrix::zeros(4, 4);
        m[(1, 1)] = Complex::new(0.5, 0.0);
        m[(2, 2)] = Complex::new(0.5, 0.0);
        let (val, _): (f64, _) = entanglement_witness(&DensityMatrix::new(l, m).unwrap()).unwrap();
        assert!(val.abs() < 1e-12);
    }

    #[test]
    fn witness_with_transmon_site() {
        let l = SystemLayout::new(2, vec![2, 2, 2]).unwrap();
        let w = w_state(3, &[0.4, 2.0]).unwrap();
        let rho = DensityMatrix::new(l.clone(), w.projector(&l).unwrap() * Complex::new(0.864, 0.0)
            + DensityMatrix::<f64>::maximally_mixed(l.clone()).matrix * Complex::new(0.136, 0.0)).unwrap();
        let (val, _) = entanglement_witness(&rho).unwrap();
        let expect = 2.0 / 3.0 - (0.864 + 0.136 / 16.0);
        assert!((val - expect).abs() < 1e-9, "{val} vs {expect}");
        let cav = ground_conditioned_cavity(&rho).unwrap();
        assert_eq!(cav.layout.dims(), vec![1, 2, 2, 2]);
        assert!((cav.trace() - 1.0).abs() < 1e-12);
        assert!((cav.matrix[(0, 0)].re - (0.136 / 16.0 + 0.136 / 2.0)).abs() < 1e-12);
        let (same, _) = entanglement_witness(&cav).unwrap();
        let f = uhlmann_fidelity(&cav.matrix, &cav.matrix).unwrap();
        assert!((f - 1.0).abs() < 1e-9, "{f}");
        assert!((same - val).abs() < 1e-9);
    }

    #[test]
    fn uhlmann_special_cases() {
        let diag = |v: &[f64]| DMatrix::from_fn(v.len(), v.len(), |i, j| Complex::new(if i == j { v[i] } else { 0.0 }, 0.0));
        let (p, q) = ([0.7, 0.2, 0.1], [0.2, 0.5, 0.3]);
        let expect = p.iter().zip(&q).map(|(a, b): (&f64, &f64)| (a * b).sqrt()).sum::<f64>().powi(2);
        assert!((uhlmann_fidelity(&diag(&p), &diag(&q)).unwrap() - expect).abs() < 1e-12);
        let psi = DVector::from_vec(vec![Complex::new(0.6, 0.0), Complex::new(0.0, 0.8), Complex::new(0.0, 0.0)]);
        let pure = &psi * psi.adjoint();
        let f = uhlmann_fidelity(&pure, &diag(&q)).unwrap();
        let g = pure_fidelity(&diag(&q), &psi).unwrap();
        assert!((f - g).abs() < 1e-7, "{f} vs {g}");
    }

    #[test]
    fn gauge_makes_coherences_real() {
        let l = SystemLayout::cavity(vec![2, 2, 2]).unwrap();
        let w = w_state(3, &[0.9f64, -2.1]).unwrap();
        let rho = DensityMatrix::new(l.clone(), w.projector(&l).unwrap()).unwrap();
        let phases = w_gauge_phases(&rho).unwrap();
        let g = gauge_transform(&rho, &phases).unwrap();
        let block = excitation_block(&g).unwrap();
        for j in 1..3 {
            assert!(block[(0, j)].im.abs() < 1e-12 && block[(0, j)].re > 0.0);
        }
        assert!((g.purity() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn transfer_examples() {
        let tf = TransferFunction::<f64>::new(&[(0.25, 1.0), (0.5, 2.0), (1.0, 4.0)]).unwrap();
        assert_eq!(tf.lookup(0.0).unwrap(), 0.0);
        assert!((tf.lookup(3.0).unwrap() - 0.75).abs() < 1e-15);
        assert!((tf.lookup(-3.0).unwrap() + 0.75).abs() < 1e-15);
        assert!(matches!(tf.lookup(4.5), Err(Error::Extrapolation(_))));
        let bent = TransferFunction::<f64>::new(&[(0.2, 1.0), (0.5, 1.5), (1.0, 3.9)]).unwrap();
        for v in [0.05, 0.3, 0.77, -0.6] {
            let back = bent.lookup(bent.strength(v).unwrap()).unwrap();
            assert!((back - v).abs() < 1e-12);
        }
        assert!(TransferFunction::new(&[(0.5, 2.0), (0.25, 3.0)]).is_err());
        assert!(TransferFunction::new(&[(0.25, 2.0), (0.5, 1.0)]).is_err());
    }

    #[test]
    fn response_of_square_pulse() {
        let steps = 250;
        let eps = Complex::new(TWO_PI * 1e4, 0.0);
        let p = PulseSequence::constant(25e-6 / steps as f64, steps, vec!["m".into()], &[eps]).unwrap();
        let a = coherent_response(&p, 0, 0.0).unwrap();
        assert!((a - TWO_PI * 1e4 * 25e-6 / 2.0).abs() < 1e-9);
        let spec = pulse_spectrum(&p, 0).unwrap();
        let peak = spec.iter().max_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
        assert!(peak.0.abs() < 1e-9);
        for &(w, m) in spec.iter().filter(|(w, _)| w.abs() < TWO_PI * 2e5) {
            let r = coherent_response(&p, 0, w).unwrap();
            assert!((2.0 * r - m).abs() <= 0.01 * peak.1, "w {w}: {r} vs {m}");
        }
    }

    #[test]
    fn tone_response_peaks_at_tone() {
        let steps = 400;
        let dt = 1e-7;
        let tone = TWO_PI * 150e3;
        let amps: Vec<Complex<f64>> = (0..steps).map(|k| Complex::from_polar(1e4, -tone * dt * k as f64)).collect();
        let p = PulseSequence::new(dt, vec!["m".into()], vec![amps]).unwrap();
        let on = coherent_response(&p, 0, tone).unwrap();
        for off in [tone - TWO_PI * 50e3, tone + TWO_PI * 80e3, 0.0] {
            assert!(coherent_response(&p, 0, off).unwrap() < 0.3 * on);
        }
    }
}
