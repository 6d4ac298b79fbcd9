//! Gradient pulse engineering for piecewise-constant cavity drives.
//!
//! Controls are stored normalized to the amplitude cap, so every real
//! quadrature `x` of the optimizer lives in `[-1, 1]` and the physical
//! amplitude is `cap * x`. The cost is
//!
//! `J = 1 - F + sum_f w_f / (K m) sum_i sum_k <psi_i(k)| P_f |psi_i(k)>`
//!
//! where `F = |sum_i <t_i|psi_i(T)>|^2 / m^2` over the `m` transferred states
//! (one for state preparation, the qudit basis for gates) and `K` is the step
//! count. The penalty is thus the time-averaged forbidden population.
//!
//! Propagator derivatives are exact: the upper-right block of
//! `exp([[A, B], [0, A]])` with `A = -i H dt` and `B = -i X dt` is the
//! derivative of `exp(A)` along `X`, so the gradient carries no `dt` error.

use crate::lindblad::{evolve_master, evolve_schrodinger, with_sink, CollapseChannel, PulseSequence, States};
use crate::ops::{is_hermitian, is_unitary};
use crate::{ComplexMatrix, ComplexVector, Error, Real, Result};
use argmin::core::observers::{Observe, ObserverMode};
use argmin::core::{CostFunction, Executor, Gradient, IterState, State, KV};
use argmin::solver::linesearch::MoreThuenteLineSearch;
use argmin::solver::quasinewton::LBFGS;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::FftPlanner;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

pub const DEFAULT_FORBIDDEN_WEIGHT: f64 = 10.0;

#[derive(Debug, Clone)]
pub enum Objective<T: Real> {
    /// Maximize `|<target|psi(T)>|^2`.
    State { initial: ComplexVector<T>, target: ComplexVector<T> },
    /// Maximize `|Tr(U_t^dag U) / d|^2` restricted to the span of `basis`;
    /// `target` is the `d x d` matrix of the gate in that basis.
    Gate { basis: Vec<ComplexVector<T>>, target: ComplexMatrix<T> },
}

impl<T: Real> Objective<T> {
    /// `(initial, target)` state pairs whose overlaps are summed.
    fn pairs(&self) -> Vec<(ComplexVector<T>, ComplexVector<T>)> {
        match self {
            Objective::State { initial, target } => vec![(initial.clone(), target.clone())],
            Objective::Gate { basis, target } => (0..basis.len())
                .map(|i| {
                    let mut t = DVector::zeros(basis[i].len());
                    for (j, b) in basis.iter().enumerate() {
                        t += b * target[(j, i)];
                    }
                    (basis[i].clone(), t)
                })
                .collect(),
        }
    }

    fn pad(&self) -> Self {
        let grow = |v: &ComplexVector<T>| v.clone().insert_row(v.len(), Complex::new(T::zero(), T::zero()));
        match self {
            Objective::State { initial, target } => Objective::State { initial: grow(initial), target: grow(target) },
            Objective::Gate { basis, target } => {
                Objective::Gate { basis: basis.iter().map(grow).collect(), target: target.clone() }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct Forbidden<T: Real> {
    pub projector: ComplexMatrix<T>,
    pub weight: T,
}

#[derive(Debug, Clone)]
pub struct ControlProblem<T: Real> {
    pub drift: ComplexMatrix<T>,
    /// Quadrature generators; channel `c` drives `controls[2c]` with the real
    /// part and `controls[2c + 1]` with the imaginary part of its amplitude.
    pub controls: Vec<ComplexMatrix<T>>,
    pub channel_names: Vec<String>,
    pub objective: Objective<T>,
    pub horizon: T,
    pub steps: usize,
    /// Bound on every real control entry, i.e. on each quadrature of every
    /// sample.
    pub amplitude_cap: T,
    pub forbidden: Vec<Forbidden<T>>,
}

impl<T: Real> ControlProblem<T> {
    pub fn new(
        drift: ComplexMatrix<T>,
        controls: Vec<ComplexMatrix<T>>,
        objective: Objective<T>,
        horizon: T,
        steps: usize,
        amplitude_cap: T,
    ) -> Result<Self> {
        let channel_names = (0..controls.len() / 2).map(|c| format!("ch{c}")).collect();
        let p = Self {
            drift,
            controls,
            channel_names,
            objective,
            horizon,
            steps,
            amplitude_cap,
            forbidden: Vec::new(),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_channel_names(mut self, names: Vec<String>) -> Result<Self> {
        self.channel_names = names;
        self.validate()?;
        Ok(self)
    }

    pub fn forbid(mut self, projector: ComplexMatrix<T>, weight: T) -> Result<Self> {
        self.forbidden.push(Forbidden { projector, weight });
        self.validate()?;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.drift.nrows()
    }

    pub fn dt(&self) -> T {
        self.horizon / T::lit(self.steps as f64)
    }

    pub fn n_channels(&self) -> usize {
        self.controls.len() / 2
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.drift.nrows();
        let tol = T::lit(1e-8);
        if self.steps < 2 {
            return Err(Error::InvalidArgument("need at least two steps".into()));
        }
        if !(self.amplitude_cap > T::zero()) || !(self.horizon > T::zero()) {
            return Err(Error::InvalidArgument("cap and horizon must be positive".into()));
        }
        if self.controls.is_empty() || self.controls.len() % 2 != 0 {
            return Err(Error::InvalidArgument("controls come in (x, y) pairs".into()));
        }
        if self.channel_names.len() != self.n_channels() {
            return Err(Error::InvalidArgument("one name per control channel".into()));
        }
        for m in std::iter::once(&self.drift).chain(&self.controls) {
            if m.shape() != (d, d) {
                return Err(Error::Shape("drift and controls must share one square shape".into()));
            }
            if !is_hermitian(m, tol) {
                return Err(Error::InvalidArgument("drift and controls must be Hermitian".into()));
            }
        }
        for f in &self.forbidden {
            if f.projector.shape() != (d, d) || f.weight < T::zero() {
                return Err(Error::InvalidArgument("forbidden projector of wrong shape or negative weight".into()));
            }
        }
        let unit = |v: &ComplexVector<T>| v.len() == d && (v.norm() - T::one()).abs() < tol;
        match &self.objective {
            Objective::State { initial, target } => {
                if !unit(initial) || !unit(target) {
                    return Err(Error::InvalidArgument("initial and target must be unit vectors".into()));
                }
            }
            Objective::Gate { basis, target } => {
                let n = basis.len();
                if n == 0 || target.shape() != (n, n) || !is_unitary(target, tol) {
                    return Err(Error::InvalidArgument("gate target must be a unitary on the basis span".into()));
                }
                for i in 0..n {
                    for j in 0..n {
                        let want = if i == j { T::one() } else { T::zero() };
                        if basis[i].len() != d || (basis[i].dotc(&basis[j]).norm_sqr() - want).abs() > tol {
                            return Err(Error::InvalidArgument("gate basis must be orthonormal".into()));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Copy acting on one extra, uncoupled level (see
    /// [`crate::lindblad::dressed_qudit_channels`]).
    pub fn with_sink(&self) -> Self {
        Self {
            drift: with_sink(&self.drift),
            controls: self.controls.iter().map(with_sink).collect(),
            channel_names: self.channel_names.clone(),
            objective: self.objective.pad(),
            horizon: self.horizon,
            steps: self.steps,
            amplitude_cap: self.amplitude_cap,
            forbidden: self
                .forbidden
                .iter()
                .map(|f| Forbidden { projector: with_sink(&f.projector), weight: f.weight })
                .collect(),
        }
    }

    fn to_normalized(&self, pulse: &PulseSequence<T>) -> Result<Vec<T>> {
        if pulse.steps() != self.steps || pulse.n_channels() != self.n_channels() {
            return Err(Error::Shape(format!(
                "pulse is {}x{}, problem wants {}x{}",
                pulse.steps(),
                pulse.n_channels(),
                self.steps,
                self.n_channels()
            )));
        }
        let g = self.controls.len();
        let mut x = vec![T::zero(); self.steps * g];
        for k in 0..self.steps {
            for c in 0..self.n_channels() {
                let u = pulse.amplitude(c, k);
                x[k * g + 2 * c] = u.re / self.amplitude_cap;
                x[k * g + 2 * c + 1] = u.im / self.amplitude_cap;
            }
        }
        Ok(x)
    }

    fn to_pulse(&self, x: &[T]) -> PulseSequence<T> {
        let g = self.controls.len();
        let amps = (0..self.n_channels())
            .map(|c| {
                (0..self.steps)
                    .map(|k| Complex::new(x[k * g + 2 * c], x[k * g + 2 * c + 1]) * self.amplitude_cap)
                    .collect()
            })
            .collect();
        PulseSequence::new(self.dt(), self.channel_names.clone(), amps).expect("consistent pulse shape")
    }
}

struct Evaluation<T: Real> {
    cost: T,
    fidelity: T,
    penalty: T,
    /// Gradient with respect to the normalized controls.
    gradient: Option<Vec<T>>,
}

fn evaluate<T: Real>(p: &ControlProblem<T>, x: &[T], with_gradient: bool) -> Evaluation<T> {
    let d = p.dim();
    let g = p.controls.len();
    let k_total = p.steps;
    let dt = p.dt();
    let minus_i_dt = Complex::new(T::zero(), -dt);
    let cap = Complex::new(p.amplitude_cap, T::zero());

    let mut props = Vec::with_capacity(k_total);
    let mut derivs: Vec<Vec<ComplexMatrix<T>>> = Vec::new();
    for k in 0..k_total {
        let mut h = p.drift.clone();
        for (j, xj) in p.controls.iter().enumerate() {
            let v = x[k * g + j] * p.amplitude_cap;
            if v != T::zero() {
                h += xj * Complex::new(v, T::zero());
            }
        }
        let a = h * minus_i_dt;
        if with_gradient {
            let mut dk = Vec::with_capacity(g);
            let mut u = None;
            for xj in &p.controls {
                let mut m = DMatrix::zeros(2 * d, 2 * d);
                m.view_mut((0, 0), (d, d)).copy_from(&a);
                m.view_mut((d, d), (d, d)).copy_from(&a);
                m.view_mut((0, d), (d, d)).copy_from(&(xj * minus_i_dt));
                let e = m.exp();
                if u.is_none() {
                    u = Some(e.view((0, 0), (d, d)).into_owned());
                }
                dk.push(e.view((0, d), (d, d)) * cap);
            }
            props.push(u.expect("at least one control"));
            derivs.push(dk);
        } else {
            props.push(a.exp());
        }
    }

    let mut penalty_op: Option<ComplexMatrix<T>> = None;
    for f in &p.forbidden {
        let term = &f.projector * Complex::new(f.weight, T::zero());
        penalty_op = Some(match penalty_op {
            Some(acc) => acc + term,
            None => term,
        });
    }

    let pairs = p.objective.pairs();
    let m = T::lit(pairs.len() as f64);
    let norm_pen = T::one() / (T::lit(k_total as f64) * m);
    let mut paths = Vec::with_capacity(pairs.len());
    let mut overlap_sum = Complex::new(T::zero(), T::zero());
    let mut penalty = T::zero();
    for (init, target) in &pairs {
        let mut path = Vec::with_capacity(k_total + 1);
        path.push(init.clone());
        for u in &props {
            let next = u * path.last().unwrap();
            if let Some(w) = &penalty_op {
                penalty += next.dotc(&(w * &next)).re * norm_pen;
            }
            path.push(next);
        }
        overlap_sum += target.dotc(path.last().unwrap());
        paths.push(path);
    }
    let fidelity = overlap_sum.norm_sqr() / (m * m);
    let cost = T::one() - fidelity + penalty;
    if !with_gradient {
        return Evaluation { cost, fidelity, penalty, gradient: None };
    }

    let mut grad = vec![T::zero(); k_total * g];
    let scale = -overlap_sum / (m * m);
    for ((_, target), path) in pairs.iter().zip(&paths) {
        let mut chi = target * scale;
        if let Some(w) = &penalty_op {
            chi += w * &path[k_total] * Complex::new(norm_pen, T::zero());
        }
        for k in (0..k_total).rev() {
            let prev = &path[k];
            for j in 0..g {
                let v = chi.dotc(&(&derivs[k][j] * prev));
                grad[k * g + j] += T::lit(2.0) * v.re;
            }
            if k > 0 {
                chi = props[k].adjoint() * chi;
                if let Some(w) = &penalty_op {
                    chi += w * prev * Complex::new(norm_pen, T::zero());
                }
            }
        }
    }
    Evaluation { cost, fidelity, penalty, gradient: Some(grad) }
}

/// Gradient of the cost with respect to the real quadrature amplitudes,
/// one row per step and one column per generator.
pub fn pulse_gradient<T: Real>(problem: &ControlProblem<T>, pulse: &PulseSequence<T>) -> Result<DMatrix<T>> {
    problem.validate()?;
    let x = problem.to_normalized(pulse)?;
    let g = problem.controls.len();
    let grad = evaluate(problem, &x, true).gradient.expect("requested gradient");
    Ok(DMatrix::from_fn(problem.steps, g, |k, j| grad[k * g + j] / problem.amplitude_cap))
}

/// Cost `1 - F + penalty` of a pulse.
pub fn pulse_cost<T: Real>(problem: &ControlProblem<T>, pulse: &PulseSequence<T>) -> Result<T> {
    problem.validate()?;
    Ok(evaluate(problem, &problem.to_normalized(pulse)?, false).cost)
}

/// Time-averaged weighted forbidden population of a pulse.
pub fn forbidden_population<T: Real>(problem: &ControlProblem<T>, pulse: &PulseSequence<T>) -> Result<T> {
    problem.validate()?;
    Ok(evaluate(problem, &problem.to_normalized(pulse)?, false).penalty)
}

fn final_states<T: Real>(problem: &ControlProblem<T>, pulse: &PulseSequence<T>) -> Result<Vec<(ComplexVector<T>, ComplexVector<T>)>> {
    let end = [pulse.duration()];
    problem
        .objective
        .pairs()
        .into_iter()
        .map(|(init, target)| {
            let tr = evolve_schrodinger(&problem.drift, &problem.controls, pulse, &init, &end)?;
            match tr.states {
                States::Pure(mut v) => Ok((v.pop().expect("one sample"), target)),
                States::Density(_) => unreachable!("closed evolution returns kets"),
            }
        })
        .collect()
}

/// Fidelity from a forward propagation through `evolve_schrodinger`.
pub fn closed_fidelity<T: Real>(problem: &ControlProblem<T>, pulse: &PulseSequence<T>) -> Result<T> {
    problem.validate()?;
    problem.to_normalized(pulse)?;
    let ends = final_states(problem, pulse)?;
    let m = T::lit(ends.len() as f64);
    let mut sum = Complex::new(T::zero(), T::zero());
    for (psi, target) in &ends {
        sum += target.dotc(psi);
    }
    Ok(sum.norm_sqr() / (m * m))
}

/// Master-equation transfer fidelity, averaged over the transferred states.
/// Channels acting on one more level than the problem (the sink of
/// `dressed_qudit_channels`) make the problem padded first.
pub fn open_fidelity<T: Real>(
    problem: &ControlProblem<T>,
    pulse: &PulseSequence<T>,
    channels: &[CollapseChannel<T>],
) -> Result<T> {
    problem.validate()?;
    let padded;
    let p = match channels.first().map(|c| c.operator.nrows()) {
        Some(n) if n == problem.dim() + 1 => {
            padded = problem.with_sink();
            &padded
        }
        _ => problem,
    };
    let pairs = p.objective.pairs();
    let mut total = T::zero();
    for (init, target) in &pairs {
        let rho0 = init * init.adjoint();
        let tr = evolve_master(&p.drift, &p.controls, pulse, channels, &rho0, &[pulse.duration()])?;
        total += target.dotc(&(tr.final_density() * target)).re;
    }
    Ok(total / T::lit(pairs.len() as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Method {
    /// Projected gradient descent with backtracking; clamps after each step.
    #[default]
    ProjectedGradient,
    /// L-BFGS on `x = tanh(z)`, which keeps every quadrature inside the cap.
    Lbfgs,
}

#[derive(Debug, Clone, Copy)]
pub struct OptimizerConfig {
    pub method: Method,
    pub max_iterations: usize,
    /// Stop once the optimizer's fidelity reaches this value.
    pub target_fidelity: f64,
    /// Stop once the (projected) gradient norm falls below this value.
    pub gradient_tolerance: f64,
    pub seed: u64,
    pub lbfgs_memory: usize,
    /// Independent starts from seeds `seed, seed + 1, ...`; the first run in
    /// seed order that reaches `target_fidelity` wins, otherwise the best.
    pub restarts: usize,
    /// Worker threads for restarts.
    pub jobs: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            method: Method::ProjectedGradient,
            max_iterations: 3000,
            target_fidelity: 0.999,
            gradient_tolerance: 1e-9,
            seed: 0,
            lbfgs_memory: 10,
            restarts: 1,
            jobs: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord<T: Real> {
    pub iteration: usize,
    pub cost: T,
    pub fidelity: T,
    pub gradient_norm: T,
}

#[derive(Debug, Clone)]
pub struct PulseResult<T: Real> {
    pub pulse: PulseSequence<T>,
    /// From an independent forward propagation of `pulse`.
    pub closed_fidelity: T,
    pub history: Vec<IterationRecord<T>>,
    pub gradient_norm_final: T,
    pub iterations: usize,
    pub converged: bool,
}

impl<T: Real> PulseResult<T> {
    pub fn cost_history(&self) -> Vec<T> {
        self.history.iter().map(|r| r.cost).collect()
    }
}

/// Starting point: quadratures uniform in `[-cap/10, cap/10]`.
pub fn initial_pulse<T: Real>(problem: &ControlProblem<T>, seed: u64) -> PulseSequence<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<T> = (0..problem.steps * problem.controls.len())
        .map(|_| T::lit(rng.random_range(-0.1..0.1)))
        .collect();
    problem.to_pulse(&x)
}

pub fn optimize_pulse<T: Real>(problem: &ControlProblem<T>, config: &OptimizerConfig) -> Result<PulseResult<T>> {
    problem.validate()?;
    let seeds: Vec<u64> = (0..config.restarts.max(1) as u64).map(|i| config.seed.wrapping_add(i)).collect();
    let target = T::lit(config.target_fidelity);
    let mut best: Option<PulseResult<T>> = None;
    for batch in seeds.chunks(config.jobs.max(1)) {
        let results: Vec<Result<PulseResult<T>>> = std::thread::scope(|s| {
            let handles: Vec<_> = batch
                .iter()
                .map(|&seed| s.spawn(move || optimize_pulse_from(problem, config, &initial_pulse(problem, seed))))
                .collect();
            handles.into_iter().map(|h| h.join().expect("optimizer thread panicked")).collect()
        });
        for r in results {
            let r = r?;
            if best.as_ref().is_none_or(|b| b.closed_fidelity < target && r.closed_fidelity > b.closed_fidelity) {
                best = Some(r);
            }
        }
        if best.as_ref().is_some_and(|b| b.closed_fidelity >= target) {
            break;
        }
    }
    Ok(best.expect("at least one start"))
}

pub fn optimize_pulse_from<T: Real>(
    problem: &ControlProblem<T>,
    config: &OptimizerConfig,
    start: &PulseSequence<T>,
) -> Result<PulseResult<T>> {
    problem.validate()?;
    let mut x = problem.to_normalized(start)?;
    project_box(&mut x);
    let (x, history, converged) = match config.method {
        Method::ProjectedGradient => projected_gradient(problem, config, x),
        Method::Lbfgs => lbfgs(problem, config, x)?,
    };
    let pulse = problem.to_pulse(&x);
    let closed = closed_fidelity(problem, &pulse)?;
    Ok(PulseResult {
        gradient_norm_final: history.last().map_or(T::zero(), |r| r.gradient_norm),
        iterations: history.len().saturating_sub(1),
        pulse,
        closed_fidelity: closed,
        history,
        converged,
    })
}

fn project_box<T: Real>(x: &mut [T]) {
    for v in x {
        *v = v.max(-T::one()).min(T::one());
    }
}

fn projected_gradient<T: Real>(
    p: &ControlProblem<T>,
    config: &OptimizerConfig,
    mut x: Vec<T>,
) -> (Vec<T>, Vec<IterationRecord<T>>, bool) {
    let target = T::lit(config.target_fidelity);
    let tol = T::lit(config.gradient_tolerance);
    let mut eval = evaluate(p, &x, true);
    let mut history = Vec::new();
    let mut step = T::zero();
    let mut converged = false;
    for iteration in 0..=config.max_iterations {
        let grad = eval.gradient.as_ref().expect("gradient");
        let trial = |s: T| -> Vec<T> {
            let mut v: Vec<T> = x.iter().zip(grad).map(|(&xi, &gi)| xi - s * gi).collect();
            project_box(&mut v);
            v
        };
        let pg = x.iter().zip(trial(T::one())).map(|(&a, b)| (a - b) * (a - b)).fold(T::zero(), |s, v| s + v).sqrt();
        history.push(IterationRecord { iteration, cost: eval.cost, fidelity: eval.fidelity, gradient_norm: pg });
        if eval.fidelity >= target || pg < tol {
            converged = true;
            break;
        }
        if iteration == config.max_iterations {
            break;
        }
        if step == T::zero() {
            let gmax = grad.iter().fold(T::zero(), |m, g| m.max(g.abs()));
            step = T::lit(0.1) / gmax;
        } else {
            step *= T::lit(2.0);
        }
        let mut accepted = None;
        while step > T::lit(1e-14) {
            let cand = trial(step);
            let decrease = x.iter().zip(&cand).zip(grad).fold(T::zero(), |s, ((&a, &b), &g)| s + g * (a - b));
            let next = evaluate(p, &cand, false);
            if next.cost <= eval.cost - T::lit(1e-4) * decrease && next.cost < eval.cost {
                accepted = Some(cand);
                break;
            }
            step *= T::lit(0.5);
        }
        match accepted {
            Some(cand) => {
                x = cand;
                eval = evaluate(p, &x, true);
            }
            None => break,
        }
    }
    (x, history, converged)
}

struct TanhCost<T: Real> {
    problem: ControlProblem<T>,
    /// Evaluation budget; the line search can otherwise cycle forever once
    /// `tanh` saturates.
    budget: usize,
    evals: AtomicUsize,
}

impl<T: Real> TanhCost<T> {
    fn new(problem: ControlProblem<T>, budget: usize) -> Self {
        Self { problem, budget, evals: AtomicUsize::new(0) }
    }

    fn spend(&self) -> std::result::Result<(), argmin::core::Error> {
        if self.evals.fetch_add(1, Ordering::Relaxed) >= self.budget {
            return Err(argmin::core::Error::msg("evaluation budget exhausted"));
        }
        Ok(())
    }

    fn unwrap_params(z: &[f64]) -> Vec<T> {
        z.iter().map(|&v| T::lit(v.tanh())).collect()
    }

    fn wrap_params(x: &[T]) -> Vec<f64> {
        x.iter().map(|v| v.as_f64().clamp(-1.0 + 1e-9, 1.0 - 1e-9).atanh()).collect()
    }

    fn chain(z: &[f64], g: &[T]) -> Vec<f64> {
        z.iter().zip(g).map(|(&zi, gi)| gi.as_f64() * (1.0 - zi.tanh().powi(2))).collect()
    }
}

impl<T: Real> CostFunction for TanhCost<T> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, z: &Vec<f64>) -> std::result::Result<f64, argmin::core::Error> {
        self.spend()?;
        Ok(evaluate(&self.problem, &Self::unwrap_params(z), false).cost.as_f64())
    }
}

impl<T: Real> Gradient for TanhCost<T> {
    type Param = Vec<f64>;
    type Gradient = Vec<f64>;

    fn gradient(&self, z: &Vec<f64>) -> std::result::Result<Vec<f64>, argmin::core::Error> {
        self.spend()?;
        let e = evaluate(&self.problem, &Self::unwrap_params(z), true);
        Ok(Self::chain(z, &e.gradient.expect("gradient")))
    }
}

type LbfgsState = IterState<Vec<f64>, Vec<f64>, (), (), (), f64>;

#[derive(Default)]
struct Recorder {
    points: Vec<(Vec<f64>, f64)>,
}

struct SharedRecorder(Arc<Mutex<Recorder>>);

impl Observe<LbfgsState> for SharedRecorder {
    fn observe_iter(&mut self, state: &LbfgsState, _kv: &KV) -> std::result::Result<(), argmin::core::Error> {
        let z = state.get_param().cloned().unwrap_or_default();
        let gnorm = state.get_gradient().map_or(0.0, |g| g.iter().map(|v| v * v).sum::<f64>().sqrt());
        self.0.lock().expect("recorder lock").points.push((z, gnorm));
        Ok(())
    }
}

fn lbfgs<T: Real>(
    p: &ControlProblem<T>,
    config: &OptimizerConfig,
    x0: Vec<T>,
) -> Result<(Vec<T>, Vec<IterationRecord<T>>, bool)> {
    let z0 = TanhCost::wrap_params(&x0);
    let cost = TanhCost::new(p.clone(), 50 * config.max_iterations.max(1));
    let first = evaluate(p, &TanhCost::<T>::unwrap_params(&z0), true);
    let g0 = first.gradient.as_ref().expect("gradient");
    let g0_norm = TanhCost::<T>::chain(&z0, g0).iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut history = vec![IterationRecord { iteration: 0, cost: first.cost, fidelity: first.fidelity, gradient_norm: T::lit(g0_norm) }];
    if first.fidelity.as_f64() >= config.target_fidelity {
        return Ok((x0, history, true));
    }

    let recorder = Arc::new(Mutex::new(Recorder::default()));
    let linesearch = MoreThuenteLineSearch::new();
    let solver = LBFGS::new(linesearch, config.lbfgs_memory.max(1))
        .with_tolerance_grad(config.gradient_tolerance)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?
        .with_tolerance_cost(0.0)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let target_cost = 1.0 - config.target_fidelity;
    let run = Executor::new(cost, solver)
        .configure(|s| s.param(z0.clone()).max_iters(config.max_iterations as u64).target_cost(target_cost))
        .add_observer(SharedRecorder(recorder.clone()), ObserverMode::Always)
        .run();
    let points = std::mem::take(&mut recorder.lock().expect("recorder lock").points);
    let mut best_z = z0;
    let mut best_cost = first.cost;
    for (i, (z, gnorm)) in points.into_iter().enumerate() {
        if z.is_empty() {
            continue;
        }
        let e = evaluate(p, &TanhCost::<T>::unwrap_params(&z), false);
        if e.cost <= best_cost {
            best_cost = e.cost;
            best_z = z;
        }
        history.push(IterationRecord { iteration: i + 1, cost: e.cost, fidelity: e.fidelity, gradient_norm: T::lit(gnorm) });
    }
    if let Err(e) = run {
        if history.len() == 1 {
            return Err(Error::Integration { time: 0.0, reason: format!("optimizer failed: {e}") });
        }
    }
    let x = TanhCost::<T>::unwrap_params(&best_z);
    let last = history.last().expect("initial record");
    let converged = last.fidelity.as_f64() >= config.target_fidelity || last.gradient_norm.as_f64() < config.gradient_tolerance;
    Ok((x, history, converged))
}

/// Hard spectral mask on each channel's complex envelope: keeps the DFT bins
/// with `|omega - center| <= halfwidth` (angular frequencies) and re-clamps
/// each quadrature to `cap`.
pub fn bandlimit_pulse<T: Real>(pulse: &PulseSequence<T>, center: T, halfwidth: T, cap: T) -> Result<PulseSequence<T>> {
    let n = pulse.steps();
    let nyquist = T::pi() / pulse.dt();
    if !(halfwidth >= T::zero()) || halfwidth >= nyquist {
        return Err(Error::InvalidArgument(format!("halfwidth {halfwidth} must lie in [0, {nyquist})")));
    }
    let mut planner = FftPlanner::<T>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let bin = T::two_pi() / (T::lit(n as f64) * pulse.dt());
    let mut out = pulse.clone();
    for c in 0..pulse.n_channels() {
        let mut buf: Vec<Complex<T>> = pulse.channel(c).to_vec();
        fwd.process(&mut buf);
        for (k, z) in buf.iter_mut().enumerate() {
            let idx = if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
            let w = bin * T::lit(idx);
            if (w - center).abs() > halfwidth {
                *z = Complex::new(T::zero(), T::zero());
            }
        }
        inv.process(&mut buf);
        let scale = T::one() / T::lit(n as f64);
        for (dst, z) in out.channel_mut(c).iter_mut().zip(buf) {
            *dst = Complex::new((z.re * scale).max(-cap).min(cap), (z.im * scale).max(-cap).min(cap));
        }
    }
    Ok(out)
}

/// Band-limited pulse together with the change in closed-system fidelity.
pub fn bandlimit_with_report<T: Real>(
    problem: &ControlProblem<T>,
    pulse: &PulseSequence<T>,
    center: T,
    halfwidth: T,
) -> Result<(PulseSequence<T>, T)> {
    let filtered = bandlimit_pulse(pulse, center, halfwidth, problem.amplitude_cap)?;
    let delta = closed_fidelity(problem, &filtered)? - closed_fidelity(problem, pulse)?;
    Ok((filtered, delta))
}
