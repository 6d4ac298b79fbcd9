//! Lindblad and Schrödinger propagation under piecewise-constant drives.
//!
//! `H(t) = drift + sum_c Re(u_c(t)) X_c + Im(u_c(t)) Y_c`, where channel `c`
//! of the pulse drives control generators `2c` (`X_c`) and `2c + 1` (`Y_c`).
//! Amplitude `u_k` holds on `[k dt, (k + 1) dt)`.

use crate::hamiltonian::{dressed_ground_energy, BlockadeSpec, DeviceParams};
use crate::ops::{annihilation_op, embed_mode, embed_operator, is_hermitian, SystemLayout};
use crate::sparse::{zeros_like, Csr};
use crate::{cr, ComplexMatrix, ComplexVector, Error, Real, Result};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex;

#[derive(Debug, Clone)]
pub struct CollapseChannel<T: Real> {
    pub name: String,
    pub operator: ComplexMatrix<T>,
    pub rate: T,
}

impl<T: Real> CollapseChannel<T> {
    pub fn new(name: impl Into<String>, operator: ComplexMatrix<T>, rate: T) -> Result<Self> {
        if !(rate >= T::zero()) || !rate.is_finite() {
            return Err(Error::InvalidArgument(format!("collapse rate {rate} must be non-negative")));
        }
        Ok(Self { name: name.into(), operator, rate })
    }

    /// `sqrt(rate) * operator`.
    pub fn jump(&self) -> ComplexMatrix<T> {
        &self.operator * Complex::new(self.rate.sqrt(), T::zero())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PulseSequence<T: Real> {
    dt: T,
    names: Vec<String>,
    amps: Vec<Vec<Complex<T>>>,
    steps: usize,
}

impl<T: Real> PulseSequence<T> {
    pub fn new(dt: T, names: Vec<String>, amps: Vec<Vec<Complex<T>>>) -> Result<Self> {
        if !(dt > T::zero()) {
            return Err(Error::InvalidArgument("pulse time step must be positive".into()));
        }
        if names.len() != amps.len() {
            return Err(Error::Shape(format!("{} names for {} channels", names.len(), amps.len())));
        }
        if amps.windows(2).any(|w| w[0].len() != w[1].len()) {
            return Err(Error::Shape("pulse channels differ in length".into()));
        }
        let steps = amps.first().map_or(0, Vec::len);
        Ok(Self { dt, names, amps, steps })
    }

    /// Drift-only sequence: no channels, `steps` slots of `dt`.
    pub fn idle(dt: T, steps: usize) -> Self {
        Self { dt, names: Vec::new(), amps: Vec::new(), steps }
    }

    pub fn constant(dt: T, steps: usize, names: Vec<String>, values: &[Complex<T>]) -> Result<Self> {
        let amps = values.iter().map(|&v| vec![v; steps]).collect();
        Self::new(dt, names, amps)
    }

    pub fn dt(&self) -> T {
        self.dt
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn duration(&self) -> T {
        self.dt * T::lit(self.steps() as f64)
    }

    pub fn n_channels(&self) -> usize {
        self.amps.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn channel(&self, c: usize) -> &[Complex<T>] {
        &self.amps[c]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [Complex<T>] {
        &mut self.amps[c]
    }

    pub fn amplitude(&self, c: usize, k: usize) -> Complex<T> {
        self.amps[c][k]
    }

    pub fn max_amplitude(&self) -> T {
        self.amps
            .iter()
            .flatten()
            .fold(T::zero(), |m, z| m.max(z.norm_sqr().sqrt()))
    }

    /// Largest single-quadrature magnitude.
    pub fn max_quadrature(&self) -> T {
        self.amps
            .iter()
            .flatten()
            .fold(T::zero(), |m, z| m.max(z.re.abs()).max(z.im.abs()))
    }
}

#[derive(Debug, Clone)]
pub enum States<T: Real> {
    Density(Vec<ComplexMatrix<T>>),
    Pure(Vec<ComplexVector<T>>),
}

#[derive(Debug, Clone)]
pub struct Series<T: Real> {
    pub name: String,
    pub values: Vec<T>,
    pub non_hermitian: bool,
    pub max_imag: T,
}

#[derive(Debug, Clone)]
pub struct TrajectoryResult<T: Real> {
    pub times: Vec<T>,
    pub states: States<T>,
    pub observables: Vec<Series<T>>,
}

impl<T: Real> TrajectoryResult<T> {
    pub fn final_density(&self) -> ComplexMatrix<T> {
        match &self.states {
            States::Density(v) => v.last().cloned().expect("non-empty trajectory"),
            States::Pure(v) => {
                let psi = v.last().expect("non-empty trajectory");
                psi * psi.adjoint()
            }
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn observable(&self, name: &str) -> Option<&Series<T>> {
        self.observables.iter().find(|s| s.name == name)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct IntegratorOptions<T: Real> {
    /// Step bound `1 / (divisor * ||H||_inf)`.
    pub step_divisor: T,
    pub max_step: Option<T>,
    pub trace_tolerance: T,
}

impl<T: Real> Default for IntegratorOptions<T> {
    fn default() -> Self {
        Self { step_divisor: T::lit(50.0), max_step: None, trace_tolerance: T::lit(1e-6) }
    }
}

/// Collapse operators of the transmon and the cavity modes. Cavity thermal
/// excitation is left out; zero-rate channels are dropped.
pub fn standard_channels<T: Real>(
    params: &DeviceParams<T>,
    layout: &SystemLayout,
) -> Result<Vec<CollapseChannel<T>>> {
    params.validate()?;
    if params.n_modes() != layout.n_modes() {
        return Err(Error::Shape("layout and device mode counts differ".into()));
    }
    let gamma = T::one() / params.t1_q;
    let gamma_phi = T::one() / params.t2_q - T::one() / (T::lit(2.0) * params.t1_q);
    let mut out = Vec::new();
    for m in 0..layout.n_modes() {
        let a = embed_mode(layout, m, &annihilation_op::<T>(layout.mode_dims()[m])?)?;
        out.push(CollapseChannel::new(
            format!("decay_{}", params.mode_names[m]),
            a,
            T::one() / params.t1_m[m],
        )?);
    }
    let tl = layout.transmon_levels();
    let unit = |i: usize, j: usize| {
        let mut m = DMatrix::zeros(tl, tl);
        m[(i, j)] = cr::<T>(1.0);
        m
    };
    let candidates = [
        ("transmon_decay", unit(0, 1), gamma * (T::one() + params.nth_q)),
        ("transmon_heating", unit(1, 0), gamma * params.nth_q),
        ("transmon_dephasing", unit(1, 1), gamma_phi),
    ];
    for (name, op, rate) in candidates {
        if rate > T::zero() {
            out.push(CollapseChannel::new(name, embed_operator(layout, 0, &op)?, rate)?);
        }
    }
    Ok(out)
}

pub fn hamiltonian_at<T: Real>(
    drift: &ComplexMatrix<T>,
    controls: &[ComplexMatrix<T>],
    pulse: &PulseSequence<T>,
    k: usize,
) -> ComplexMatrix<T> {
    let mut h = drift.clone();
    for c in 0..pulse.n_channels() {
        let u = pulse.amplitude(c, k);
        if u.re != T::zero() {
            h += &controls[2 * c] * Complex::new(u.re, T::zero());
        }
        if u.im != T::zero() {
            h += &controls[2 * c + 1] * Complex::new(u.im, T::zero());
        }
    }
    h
}

fn check_inputs<T: Real>(
    drift: &ComplexMatrix<T>,
    controls: &[ComplexMatrix<T>],
    pulse: &PulseSequence<T>,
    sample_times: &[T],
) -> Result<()> {
    let d = drift.nrows();
    if !drift.is_square() || controls.iter().any(|c| c.shape() != (d, d)) {
        return Err(Error::Shape("drift and controls must be square and equal-sized".into()));
    }
    if controls.len() != 2 * pulse.n_channels() {
        return Err(Error::Shape(format!(
            "{} control generators for {} pulse channels",
            controls.len(),
            pulse.n_channels()
        )));
    }
    if sample_times.is_empty() {
        return Err(Error::InvalidArgument("no sample times".into()));
    }
    if sample_times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidArgument("sample times must be ascending".into()));
    }
    let end = pulse.duration() * T::lit(1.0 + 1e-9);
    if sample_times[0] < T::zero() || *sample_times.last().unwrap() > end {
        return Err(Error::OutOfRange("sample times outside the pulse duration".into()));
    }
    Ok(())
}

fn inf_norm<T: Real>(m: &ComplexMatrix<T>) -> T {
    (0..m.nrows())
        .map(|i| m.row(i).iter().fold(T::zero(), |s, z| s + z.norm_sqr().sqrt()))
        .fold(T::zero(), |a, b| a.max(b))
}

/// Breakpoints of pulse slot `k` clipped to `[.., t_end]`, merged with the
/// sample times that fall inside it.
fn slot_segments<T: Real>(k: usize, dt: T, samples: &[T], t_end: T) -> (T, Vec<T>) {
    let start = dt * T::lit(k as f64);
    let stop = (dt * T::lit((k + 1) as f64)).min(t_end);
    let mut pts: Vec<T> = samples.iter().copied().filter(|&s| s > start && s < stop).collect();
    pts.push(stop);
    pts.dedup();
    (start, pts)
}

struct Rk4Work<T: Real> {
    k: [ComplexMatrix<T>; 4],
    tmp: ComplexMatrix<T>,
    stage: ComplexMatrix<T>,
}

fn lindblad_rhs<T: Real>(
    a: &Csr<T>,
    jumps: &[Csr<T>],
    rho: &ComplexMatrix<T>,
    out: &mut ComplexMatrix<T>,
    tmp: &mut ComplexMatrix<T>,
) {
    a.mul_into(rho, tmp);
    let d = rho.nrows();
    for j in 0..d {
        for i in 0..d {
            out[(i, j)] = tmp[(i, j)] + tmp[(j, i)].conj();
        }
    }
    for l in jumps {
        l.mul_into(rho, tmp);
        l.mul_adjoint_add(tmp, out);
    }
}

fn add_scaled<T: Real>(y: &mut ComplexMatrix<T>, a: Complex<T>, x: &ComplexMatrix<T>) {
    for (yi, xi) in y.iter_mut().zip(x.iter()) {
        *yi += a * *xi;
    }
}

fn rk4_step<T: Real>(
    a: &Csr<T>,
    jumps: &[Csr<T>],
    rho: &mut ComplexMatrix<T>,
    h: T,
    w: &mut Rk4Work<T>,
) {
    let half = Complex::new(h * T::lit(0.5), T::zero());
    let full = Complex::new(h, T::zero());
    let Rk4Work { k, tmp, stage } = w;
    let [k1, k2, k3, k4] = k;
    lindblad_rhs(a, jumps, rho, k1, tmp);
    stage.copy_from(rho);
    add_scaled(stage, half, k1);
    lindblad_rhs(a, jumps, stage, k2, tmp);
    stage.copy_from(rho);
    add_scaled(stage, half, k2);
    lindblad_rhs(a, jumps, stage, k3, tmp);
    stage.copy_from(rho);
    add_scaled(stage, full, k3);
    lindblad_rhs(a, jumps, stage, k4, tmp);
    let sixth = Complex::new(h / T::lit(6.0), T::zero());
    let third = Complex::new(h / T::lit(3.0), T::zero());
    add_scaled(rho, sixth, k1);
    add_scaled(rho, third, k2);
    add_scaled(rho, third, k3);
    add_scaled(rho, sixth, k4);
    let d = rho.nrows();
    for j in 0..d {
        for i in 0..j {
            let avg = (rho[(i, j)] + rho[(j, i)].conj()) * Complex::new(T::lit(0.5), T::zero());
            rho[(i, j)] = avg;
            rho[(j, i)] = avg.conj();
        }
        rho[(j, j)].im = T::zero();
    }
}

pub fn evolve_master<T: Real>(
    drift: &ComplexMatrix<T>,
    controls: &[ComplexMatrix<T>],
    pulse: &PulseSequence<T>,
    channels: &[CollapseChannel<T>],
    rho0: &ComplexMatrix<T>,
    sample_times: &[T],
) -> Result<TrajectoryResult<T>> {
    evolve_master_with(drift, controls, pulse, channels, rho0, sample_times, &IntegratorOptions::default())
}

/// Fixed-step RK4 on `rho`. The step inside pulse slot `k` is the largest
/// value not exceeding `min(dt, 1 / (divisor ||H_k||))` that tiles the slot.
pub fn evolve_master_with<T: Real>(
    drift: &ComplexMatrix<T>,
    controls: &[ComplexMatrix<T>],
    pulse: &PulseSequence<T>,
    channels: &[CollapseChannel<T>],
    rho0: &ComplexMatrix<T>,
    sample_times: &[T],
    opts: &IntegratorOptions<T>,
) -> Result<TrajectoryResult<T>> {
    check_inputs(drift, controls, pulse, sample_times)?;
    let d = drift.nrows();
    if rho0.shape() != (d, d) || channels.iter().any(|c| c.operator.shape() != (d, d)) {
        return Err(Error::Shape("initial state or channel dims differ from the drift".into()));
    }
    let jumps_dense: Vec<ComplexMatrix<T>> = channels.iter().map(CollapseChannel::jump).collect();
    let jumps: Vec<Csr<T>> = jumps_dense.iter().map(Csr::from_dense).collect();
    let mut decay = DMatrix::zeros(d, d);
    for l in &jumps_dense {
        decay += l.adjoint() * l;
    }
    decay *= cr::<T>(-0.5);

    let t_end = *sample_times.last().unwrap();
    let mut rho = rho0.clone();
    let mut out = Vec::with_capacity(sample_times.len());
    let mut next = 0;
    while next < sample_times.len() && sample_times[next] <= T::zero() {
        out.push(rho.clone());
        next += 1;
    }
    let mut w = Rk4Work {
        k: [zeros_like(&rho), zeros_like(&rho), zeros_like(&rho), zeros_like(&rho)],
        tmp: zeros_like(&rho),
        stage: zeros_like(&rho),
    };
    let dt = pulse.dt();
    let minus_i = Complex::new(T::zero(), -T::one());
    let mut k = 0;
    while next < sample_times.len() && k < pulse.steps() {
        let h_k = hamiltonian_at(drift, controls, pulse, k);
        let a = Csr::from_dense(&(&h_k * minus_i + &decay));
        let norm = inf_norm(&h_k);
        let mut h_max = dt;
        if norm > T::zero() {
            h_max = h_max.min(T::one() / (opts.step_divisor * norm));
        }
        if let Some(m) = opts.max_step {
            h_max = h_max.min(m);
        }
        let (mut t, pts) = slot_segments(k, dt, &sample_times[next..], t_end);
        for stop in pts {
            let span = stop - t;
            if span > T::zero() {
                let n = (span / h_max).ceil().to_usize().unwrap_or(1).max(1);
                let h = span / T::lit(n as f64);
                for _ in 0..n {
                    rk4_step(&a, &jumps, &mut rho, h, &mut w);
                }
                let tr = rho.trace().re;
                if !tr.is_finite() || (tr - rho0.trace().re).abs() > opts.trace_tolerance {
                    return Err(Error::Integration {
                        time: stop.as_f64(),
                        reason: format!("trace drifted to {tr}"),
                    });
                }
            }
            t = stop;
            while next < sample_times.len() && sample_times[next] <= t * T::lit(1.0 + 1e-12) {
                out.push(rho.clone());
                next += 1;
            }
        }
        k += 1;
    }
    while out.len() < sample_times.len() {
        out.push(rho.clone());
    }
    Ok(TrajectoryResult {
        times: sample_times.to_vec(),
        states: States::Density(out),
        observables: Vec::new(),
    })
}

/// Closed-system propagation with exact exponentials per pulse slot.
pub fn evolve_schrodinger<T: Real>(
    drift: &ComplexMatrix<T>,
    controls: &[ComplexMatrix<T>],
    pulse: &PulseSequence<T>,
    psi0: &ComplexVector<T>,
    sample_times: &[T],
) -> Result<TrajectoryResult<T>> {
    check_inputs(drift, controls, pulse, sample_times)?;
    if psi0.len() != drift.nrows() {
        return Err(Error::Shape("initial state dim differs from the drift".into()));
    }
    let t_end = *sample_times.last().unwrap();
    let mut psi = psi0.clone();
    let mut out = Vec::with_capacity(sample_times.len());
    let mut next = 0;
    while next < sample_times.len() && sample_times[next] <= T::zero() {
        out.push(psi.clone());
        next += 1;
    }
    let minus_i = Complex::new(T::zero(), -T::one());
    let mut k = 0;
    while next < sample_times.len() && k < pulse.steps() {
        let h_k = hamiltonian_at(drift, controls, pulse, k) * minus_i;
        let (mut t, pts) = slot_segments(k, pulse.dt(), &sample_times[next..], t_end);
        for stop in pts {
            let span = stop - t;
            if span > T::zero() {
                psi = (&h_k * Complex::new(span, T::zero())).exp() * psi;
            }
            if psi.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
                return Err(Error::Integration { time: stop.as_f64(), reason: "non-finite amplitude".into() });
            }
            t = stop;
            while next < sample_times.len() && sample_times[next] <= t * T::lit(1.0 + 1e-12) {
                out.push(psi.clone());
                next += 1;
            }
        }
        k += 1;
    }
    while out.len() < sample_times.len() {
        out.push(psi.clone());
    }
    Ok(TrajectoryResult {
        times: sample_times.to_vec(),
        states: States::Pure(out),
        observables: Vec::new(),
    })
}

/// `Tr[O rho(t)]` for each named observable; the real part is kept.
pub fn expectations<T: Real>(
    trajectory: &TrajectoryResult<T>,
    observables: &[(String, ComplexMatrix<T>)],
) -> Result<Vec<Series<T>>> {
    let mut out = Vec::with_capacity(observables.len());
    for (name, op) in observables {
        let mut values = Vec::with_capacity(trajectory.len());
        let mut max_imag = T::zero();
        let mut eval = |z: Complex<T>| {
            max_imag = max_imag.max(z.im.abs());
            values.push(z.re);
        };
        match &trajectory.states {
            States::Density(v) => {
                for rho in v {
                    if rho.shape() != op.shape() {
                        return Err(Error::Shape(format!("observable {name} has the wrong dims")));
                    }
                    eval((op * rho).trace());
                }
            }
            States::Pure(v) => {
                for psi in v {
                    if psi.len() != op.nrows() {
                        return Err(Error::Shape(format!("observable {name} has the wrong dims")));
                    }
                    eval(psi.dotc(&(op * psi)));
                }
            }
        }
        let non_hermitian = !is_hermitian(op, T::lit(1e-12));
        out.push(Series { name: name.clone(), values, non_hermitian, max_imag });
    }
    Ok(out)
}

/// Projector onto `|n>` of one mode, or onto the transmon level when `mode` is
/// `None`.
pub fn level_projector<T: Real>(
    layout: &SystemLayout,
    mode: Option<usize>,
    level: usize,
) -> Result<ComplexMatrix<T>> {
    let (site, d) = match mode {
        Some(m) => (SystemLayout::mode_site(m), layout.mode_dims()[m]),
        None => (0, layout.transmon_levels()),
    };
    if level >= d {
        return Err(Error::OutOfRange(format!("level {level} >= {d}")));
    }
    let mut p = DMatrix::zeros(d, d);
    p[(level, level)] = cr::<T>(1.0);
    embed_operator(layout, site, &p)
}

/// Zero-padded copy with one extra "sink" level appended.
pub fn with_sink<T: Real>(m: &ComplexMatrix<T>) -> ComplexMatrix<T> {
    let d = m.nrows();
    let mut out = DMatrix::zeros(d + 1, d + 1);
    out.view_mut((0, 0), (d, d)).copy_from(m);
    out
}

/// Transmon and cavity channels seen by the dressed-ground qudit of
/// `reduced_blockade_hamiltonian`, acting on the qudit plus one absorbing sink
/// level (index `n0`).
///
/// Each channel `L` of `standard_channels` is written in the dressed basis of
/// the `(|g,n>, |e,n>)` blocks. Its part that stays inside the dressed-ground
/// manifold acts on the qudit; every component that lands on a dressed-excited
/// state `|e~,m>` becomes a separate jump into the sink, so the total decay
/// rate out of each qudit level is exact.
pub fn dressed_qudit_channels<T: Real>(
    params: &DeviceParams<T>,
    spec: &BlockadeSpec<T>,
    mode: usize,
) -> Result<Vec<CollapseChannel<T>>> {
    params.validate()?;
    let n0 = spec.n0;
    if n0 < 2 || mode >= params.n_modes() {
        return Err(Error::InvalidArgument("need n0 >= 2 and a device mode".into()));
    }
    let chi = params.chi_m[mode];
    let omega = spec.omega;
    let layout = SystemLayout::new(2, vec![n0])?;
    let dim = 2 * n0;
    let mut ground = Vec::with_capacity(n0);
    let mut excited = Vec::with_capacity(n0);
    for n in 0..n0 {
        let delta = chi * T::lit(n as f64 - n0 as f64);
        let e = dressed_ground_energy(delta, omega);
        let (mut cg, mut ce) = (omega, e);
        let norm = (cg * cg + ce * ce).sqrt();
        if norm > T::zero() {
            cg /= norm;
            ce /= norm;
        } else {
            cg = T::one();
            ce = T::zero();
        }
        let mut g = DVector::zeros(dim);
        g[n] = Complex::new(cg, T::zero());
        g[n0 + n] = Complex::new(ce, T::zero());
        let mut x = DVector::zeros(dim);
        x[n] = Complex::new(-ce, T::zero());
        x[n0 + n] = Complex::new(cg, T::zero());
        ground.push(g);
        excited.push(x);
    }
    let mut reduced = params.clone();
    reduced.chi_m = vec![chi];
    reduced.omega_m = vec![params.omega_m[mode]];
    reduced.kerr_m = vec![params.kerr_m[mode]];
    reduced.t1_m = vec![params.t1_m[mode]];
    reduced.t2_m = vec![params.t2_m[mode]];
    reduced.mode_names = vec![params.mode_names[mode].clone()];
    reduced.cross_kerr = DMatrix::zeros(1, 1);
    let full = standard_channels(&reduced, &layout)?;
    let mut out = Vec::new();
    for ch in full {
        let l = &ch.operator;
        let inside = DMatrix::from_fn(n0 + 1, n0 + 1, |m, n| {
            if m < n0 && n < n0 {
                ground[m].dotc(&(l * &ground[n]))
            } else {
                cr::<T>(0.0)
            }
        });
        if inside.iter().any(|z| z.norm_sqr() > T::zero()) {
            out.push(CollapseChannel::new(ch.name.clone(), inside, ch.rate)?);
        }
        for (m, x) in excited.iter().enumerate() {
            let mut leak = DMatrix::zeros(n0 + 1, n0 + 1);
            for n in 0..n0 {
                leak[(n0, n)] = x.dotc(&(l * &ground[n]));
            }
            if leak.iter().any(|z| z.norm_sqr() > T::lit(1e-30)) {
                out.push(CollapseChannel::new(format!("{}_leak{m}", ch.name), leak, ch.rate)?);
            }
        }
    }
    Ok(out)
}
