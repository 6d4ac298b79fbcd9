//! Generalized Wigner tomography.
//!
//! A setting displaces every mode by `alpha_m`, lets the transmon accrue the
//! phase `theta_m` per photon in each mode and reads out the Ramsey contrast,
//! i.e. measures
//!
//! ```text
//! W = D(alpha) cos(sum_m theta_m N_m) D(alpha)^dag
//! ```
//!
//! with `D(alpha)` the tensor product of single-mode displacements. The
//! [`WignerForm::Product`] variant replaces the joint cosine by
//! `prod_m cos(theta_m N_m)`.
//!
//! Reconstruction works in the orthonormal Hermitian basis
//! `E_ii`, `(E_ij + E_ji)/sqrt2` (i < j), `i(E_ji - E_ij)/sqrt2` (i > j), so the
//! measurement matrix and the trace-constrained normal equations are real.

use crate::analysis::state_fidelity;
use crate::io::fmt_num;
use crate::ops::{annihilation_op, kron_all, DensityMatrix, SystemLayout};
use crate::{cis, ComplexMatrix, Error, Real, Result};
use argmin::core::{CostFunction, Executor, Gradient};
use argmin::solver::linesearch::MoreThuenteLineSearch;
use argmin::solver::quasinewton::LBFGS;
use nalgebra::{DMatrix, DVector, SymmetricEigen, SVD};
use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::collections::{BTreeMap, HashMap};
use std::sync::Mutex;

type C64 = Complex<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WignerForm {
    /// `cos(sum_m theta_m N_m)`: a single Ramsey sequence on the transmon.
    #[default]
    Joint,
    /// `prod_m cos(theta_m N_m)`.
    Product,
}

impl WignerForm {
    pub fn name(self) -> &'static str {
        match self {
            WignerForm::Joint => "joint",
            WignerForm::Product => "product",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "joint" => Ok(WignerForm::Joint),
            "product" => Ok(WignerForm::Product),
            other => Err(Error::Parse(format!("unknown Wigner form {other:?}"))),
        }
    }
}

/// One measurement: a displacement and a Ramsey angle per mode.
#[derive(Debug, Clone, PartialEq)]
pub struct Setting<T: Real> {
    pub alphas: Vec<Complex<T>>,
    pub thetas: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct WignerPointSet<T: Real> {
    /// Reconstruction truncation per mode.
    pub d: Vec<usize>,
    pub settings: Vec<Setting<T>>,
    pub form: WignerForm,
    pub condition_number: T,
}

impl<T: Real> WignerPointSet<T> {
    /// Validates the settings and computes the condition number.
    pub fn new(d: Vec<usize>, settings: Vec<Setting<T>>, form: WignerForm) -> Result<Self> {
        if d.is_empty() || d.contains(&0) {
            return Err(Error::InvalidDimension(format!("bad reconstruction truncation {d:?}")));
        }
        for (i, s) in settings.iter().enumerate() {
            if s.alphas.len() != d.len() || s.thetas.len() != d.len() {
                return Err(Error::Shape(format!("setting {i} does not have one entry per mode ({})", d.len())));
            }
            if s.alphas.iter().any(|a| !(a.re.is_finite() && a.im.is_finite())) {
                return Err(Error::InvalidArgument(format!("setting {i} has a non-finite displacement")));
            }
            if s.thetas.iter().any(|&t| !(t > T::zero() && t < T::two_pi())) {
                return Err(Error::InvalidArgument(format!("setting {i} has an angle outside (0, 2pi)")));
            }
        }
        let mut set = Self { d, settings, form, condition_number: T::one() };
        set.condition_number = build_measurement_matrix(&set)?.1;
        Ok(set)
    }

    /// Every displacement of a single-mode list measured at each angle.
    pub fn single_mode(d: usize, points: &[Complex<T>], thetas: &[T], form: WignerForm) -> Result<Self> {
        let settings = points
            .iter()
            .flat_map(|&a| thetas.iter().map(move |&t| Setting { alphas: vec![a], thetas: vec![t] }))
            .collect();
        Self::new(vec![d], settings, form)
    }

    /// Cartesian product of per-mode displacement lists, each combination
    /// measured with every angle tuple.
    pub fn product(
        d: Vec<usize>,
        per_mode: &[Vec<Complex<T>>],
        angle_tuples: &[Vec<T>],
        form: WignerForm,
    ) -> Result<Self> {
        if per_mode.len() != d.len() || per_mode.iter().any(Vec::is_empty) {
            return Err(Error::Shape("need a non-empty displacement list per mode".into()));
        }
        let mut combos: Vec<Vec<Complex<T>>> = vec![Vec::new()];
        for list in per_mode {
            combos = combos
                .into_iter()
                .flat_map(|c| {
                    list.iter().map(move |&a| {
                        let mut next = c.clone();
                        next.push(a);
                        next
                    })
                })
                .collect();
        }
        let settings = combos
            .into_iter()
            .flat_map(|alphas| angle_tuples.iter().map(move |t| Setting { alphas: alphas.clone(), thetas: t.clone() }))
            .collect();
        Self::new(d, settings, form)
    }

    pub fn n_modes(&self) -> usize {
        self.d.len()
    }

    /// Dimension of the reconstruction space.
    pub fn dim(&self) -> usize {
        self.d.iter().product()
    }

    pub fn len(&self) -> usize {
        self.settings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.settings.is_empty()
    }

    /// Distinct displacements of mode `m`, in order of first appearance.
    pub fn mode_points(&self, m: usize) -> Vec<Complex<T>> {
        let mut out: Vec<Complex<T>> = Vec::new();
        for s in &self.settings {
            if !out.contains(&s.alphas[m]) {
                out.push(s.alphas[m]);
            }
        }
        out
    }

    pub fn layout(&self) -> SystemLayout {
        SystemLayout::cavity(self.d.clone()).expect("validated truncation")
    }

    /// `mode,re_alpha,im_alpha,setting_id,theta`, one row per setting and mode.
    pub fn to_csv(&self) -> Result<String> {
        let mut head = format!("# kappa={}\n# d={}\n# form={}\n", fmt_num(self.condition_number.as_f64()), join(&self.d), self.form.name());
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["mode", "re_alpha", "im_alpha", "setting_id", "theta"]).map_err(csv_err)?;
        for (i, s) in self.settings.iter().enumerate() {
            for m in 0..self.n_modes() {
                w.write_record([
                    m.to_string(),
                    fmt_num(s.alphas[m].re.as_f64()),
                    fmt_num(s.alphas[m].im.as_f64()),
                    i.to_string(),
                    fmt_num(s.thetas[m].as_f64()),
                ])
                .map_err(csv_err)?;
            }
        }
        let body = String::from_utf8(w.into_inner().map_err(|e| Error::Parse(e.to_string()))?)
            .map_err(|e| Error::Parse(e.to_string()))?;
        head.push_str(&body);
        Ok(head)
    }

    /// Reads [`to_csv`](Self::to_csv) output. `d` comes from the `# d=` line;
    /// the condition number is recomputed.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut d = None;
        let mut form = WignerForm::Joint;
        for line in text.lines().filter_map(|l| l.trim().strip_prefix('#')) {
            if let Some((k, v)) = line.split_once('=') {
                match k.trim() {
                    "d" => {
                        let dims = v
                            .split(',')
                            .map(|x| x.trim().parse::<usize>().map_err(|e| Error::Parse(format!("bad d {v:?}: {e}"))))
                            .collect::<Result<Vec<_>>>()?;
                        d = Some(dims);
                    }
                    "form" => form = WignerForm::parse(v)?,
                    _ => {}
                }
            }
        }
        let d = d.ok_or_else(|| Error::Parse("point-set file lacks a '# d=' line".into()))?;
        let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(text.as_bytes());
        let mut rows: BTreeMap<usize, Vec<(usize, Complex<T>, T)>> = BTreeMap::new();
        for rec in r.records() {
            let rec = rec.map_err(csv_err)?;
            if rec.len() != 5 {
                return Err(Error::Parse("point-set rows need 5 columns".into()));
            }
            let f = |i: usize| rec[i].parse::<f64>().map_err(|e| Error::Parse(format!("bad number {:?}: {e}", &rec[i])));
            let u = |i: usize| rec[i].parse::<usize>().map_err(|e| Error::Parse(format!("bad index {:?}: {e}", &rec[i])));
            rows.entry(u(3)?).or_default().push((u(0)?, Complex::new(T::lit(f(1)?), T::lit(f(2)?)), T::lit(f(4)?)));
        }
        let mut settings = Vec::with_capacity(rows.len());
        for (id, mut entries) in rows {
            entries.sort_by_key(|e| e.0);
            if entries.iter().enumerate().any(|(m, e)| e.0 != m) || entries.len() != d.len() {
                return Err(Error::Parse(format!("setting {id} does not list modes 0..{}", d.len())));
            }
            settings.push(Setting { alphas: entries.iter().map(|e| e.1).collect(), thetas: entries.iter().map(|e| e.2).collect() });
        }
        Self::new(d, settings, form)
    }
}

fn join(d: &[usize]) -> String {
    d.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

fn csv_err(e: csv::Error) -> Error {
    Error::Parse(format!("csv: {e}"))
}

#[derive(Debug, Clone)]
pub struct MeasurementRecord<T: Real> {
    pub values: Vec<T>,
    pub sigma: Option<Vec<T>>,
}

impl<T: Real> MeasurementRecord<T> {
    /// `setting_id,value,sigma`; sigma is written as 0 when absent.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["setting_id", "value", "sigma"]).map_err(csv_err)?;
        for (i, v) in self.values.iter().enumerate() {
            let s = self.sigma.as_ref().map_or(0.0, |s| s[i].as_f64());
            w.write_record([i.to_string(), fmt_num(v.as_f64()), fmt_num(s)]).map_err(csv_err)?;
        }
        String::from_utf8(w.into_inner().map_err(|e| Error::Parse(e.to_string()))?).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let (header, cols) = crate::io::read_numeric_csv(text)?;
        let col = |name: &str| {
            header
                .iter()
                .position(|h| h == name)
                .map(|i| cols[i].clone())
                .ok_or_else(|| Error::Parse(format!("record file lacks column {name:?}")))
        };
        let ids = col("setting_id")?;
        let values = col("value")?;
        let sigma = header.iter().any(|h| h == "sigma").then(|| col("sigma")).transpose()?;
        let mut order: Vec<usize> = (0..ids.len()).collect();
        order.sort_by(|&a, &b| ids[a].total_cmp(&ids[b]));
        if order.iter().enumerate().any(|(k, &i)| ids[i] != k as f64) {
            return Err(Error::Parse("setting ids must be 0..n without gaps".into()));
        }
        let values = order.iter().map(|&i| T::lit(values[i])).collect();
        let sigma = sigma.filter(|s| s.iter().any(|&v| v != 0.0)).map(|s| order.iter().map(|&i| T::lit(s[i])).collect());
        Ok(Self { values, sigma })
    }
}

#[derive(Debug, Clone)]
pub struct ReconstructionResult<T: Real> {
    pub rho: DensityMatrix<T>,
    /// Solution of the trace-constrained least-squares problem, before the
    /// positivity projection.
    pub rho_unprojected: ComplexMatrix<T>,
    pub condition_number: T,
    /// `|M r - x|` for the unprojected solution.
    pub residual: T,
    /// Negative eigenvalue mass moved by [`smolin_project`].
    pub psd_adjustment: T,
}

impl<T: Real> ReconstructionResult<T> {
    pub fn fidelity(&self, target: &ComplexMatrix<T>) -> Result<T> {
        Ok(state_fidelity(&self.rho.matrix, target)?.value)
    }
}

/// Working Fock dimension that keeps `D(alpha)` accurate on the first `d`
/// levels.
fn working_dim(d: usize, amax: f64) -> usize {
    let s = amax + (d as f64).sqrt();
    ((s * s + 6.0 * s + 8.0).ceil() as usize).max(d + 8)
}

/// `c_i(k) = <k|D(beta)|i>` for `i < n`, `k < dim`, from the coherent state
/// `D(beta)|0>` and `D(beta)|i> = (a^dag - beta^*) D(beta)|i-1> / sqrt(i)`.
/// Entries are those of the untruncated displacement.
fn displaced_fock<T: Real>(beta: Complex<T>, n: usize, dim: usize) -> Vec<Vec<Complex<T>>> {
    let mut cols = Vec::with_capacity(n);
    let mut c0 = Vec::with_capacity(dim);
    c0.push(Complex::new((-beta.norm_sqr() * T::lit(0.5)).exp(), T::zero()));
    for k in 1..dim {
        let prev = c0[k - 1];
        c0.push(prev * beta / T::lit(k as f64).sqrt());
    }
    cols.push(c0);
    for i in 1..n {
        let prev = &cols[i - 1];
        let inv = T::one() / T::lit(i as f64).sqrt();
        let col: Vec<Complex<T>> = (0..dim)
            .map(|k| {
                let up = if k > 0 { prev[k - 1] * T::lit(k as f64).sqrt() } else { Complex::new(T::zero(), T::zero()) };
                (up - prev[k] * beta.conj()) * inv
            })
            .collect();
        cols.push(col);
    }
    cols
}

/// `D(alpha) exp(i theta N) D(alpha)^dag` on the first `n` levels.
fn phase_block<T: Real>(alpha: Complex<T>, theta: T, n: usize) -> ComplexMatrix<T> {
    let dim = working_dim(n, alpha.norm_sqr().sqrt().as_f64());
    let c = displaced_fock(-alpha, n, dim);
    let ph: Vec<Complex<T>> = (0..dim).map(|k| cis(theta * T::lit(k as f64))).collect();
    DMatrix::from_fn(n, n, |i, j| {
        (0..dim).fold(Complex::new(T::zero(), T::zero()), |acc, k| acc + c[i][k].conj() * ph[k] * c[j][k])
    })
}

fn herm<T: Real>(m: &ComplexMatrix<T>) -> ComplexMatrix<T> {
    (m + m.adjoint()) * Complex::new(T::lit(0.5), T::zero())
}

fn combine<T: Real>(blocks: &[ComplexMatrix<T>], form: WignerForm) -> ComplexMatrix<T> {
    match form {
        WignerForm::Joint => herm(&kron_all(blocks)),
        WignerForm::Product => kron_all(&blocks.iter().map(herm).collect::<Vec<_>>()),
    }
}

fn cavity_dims(layout: &SystemLayout) -> Result<Vec<usize>> {
    if layout.transmon_levels() != 1 {
        return Err(Error::Shape("Wigner operators act on a cavity-only layout (transmon_levels = 1)".into()));
    }
    Ok(layout.mode_dims().to_vec())
}

/// The measured operator for one setting on a cavity-only layout.
pub fn generalized_wigner_operator<T: Real>(
    layout: &SystemLayout,
    alphas: &[Complex<T>],
    thetas: &[T],
    form: WignerForm,
) -> Result<ComplexMatrix<T>> {
    let dims = cavity_dims(layout)?;
    if alphas.len() != dims.len() || thetas.len() != dims.len() {
        return Err(Error::Shape(format!("need {} displacements and angles", dims.len())));
    }
    let mut blocks = Vec::with_capacity(dims.len());
    for (m, &n) in dims.iter().enumerate() {
        blocks.push(phase_block(alphas[m], thetas[m], n));
    }
    Ok(combine(&blocks, form))
}

/// Operators of every setting, on per-mode dimensions `dims`.
fn setting_operators<T: Real>(set: &WignerPointSet<T>, dims: &[usize]) -> Result<Vec<ComplexMatrix<T>>> {
    let mut cache: HashMap<(usize, u64, u64, u64), ComplexMatrix<T>> = HashMap::new();
    let mut out = Vec::with_capacity(set.len());
    for s in &set.settings {
        let blocks: Vec<ComplexMatrix<T>> = (0..dims.len())
            .map(|m| {
                let key = (m, s.alphas[m].re.as_f64().to_bits(), s.alphas[m].im.as_f64().to_bits(), s.thetas[m].as_f64().to_bits());
                cache.entry(key).or_insert_with(|| phase_block(s.alphas[m], s.thetas[m], dims[m])).clone()
            })
            .collect();
        out.push(combine(&blocks, set.form));
    }
    Ok(out)
}

/// Coordinates of a Hermitian matrix in the orthonormal Hermitian basis.
pub fn hermitian_coords<T: Real>(m: &ComplexMatrix<T>) -> Vec<T> {
    let n = m.nrows();
    let s2 = T::lit(std::f64::consts::SQRT_2);
    let mut out = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            out.push(match i.cmp(&j) {
                std::cmp::Ordering::Equal => m[(i, i)].re,
                std::cmp::Ordering::Less => s2 * m[(i, j)].re,
                std::cmp::Ordering::Greater => -s2 * m[(i, j)].im,
            });
        }
    }
    out
}

/// Inverse of [`hermitian_coords`].
pub fn from_hermitian_coords<T: Real>(r: &[T], n: usize) -> Result<ComplexMatrix<T>> {
    if r.len() != n * n {
        return Err(Error::Shape(format!("{} coordinates for dimension {n}", r.len())));
    }
    let h = T::lit(std::f64::consts::FRAC_1_SQRT_2);
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let v = r[i * n + j];
            match i.cmp(&j) {
                std::cmp::Ordering::Equal => m[(i, i)] += Complex::new(v, T::zero()),
                std::cmp::Ordering::Less => {
                    m[(i, j)] += Complex::new(v * h, T::zero());
                    m[(j, i)] += Complex::new(v * h, T::zero());
                }
                std::cmp::Ordering::Greater => {
                    m[(i, j)] += Complex::new(T::zero(), -v * h);
                    m[(j, i)] += Complex::new(T::zero(), v * h);
                }
            }
        }
    }
    Ok(m)
}

fn condition_of<T: Real>(m: DMatrix<T>) -> Result<T> {
    let sv = SVD::new(m, false, false).singular_values;
    let smax = sv.iter().copied().fold(T::zero(), T::max);
    let smin = sv.iter().copied().fold(smax, T::min);
    if smin < T::lit(1e-12) {
        return Err(Error::Uninvertible(format!("smallest singular value {smin:e}")));
    }
    Ok(smax / smin)
}

/// Measurement matrix (one row per setting, columns in the Hermitian basis of
/// the reconstruction space) and its condition number.
pub fn build_measurement_matrix<T: Real>(set: &WignerPointSet<T>) -> Result<(DMatrix<T>, T)> {
    let n = set.dim();
    if set.len() < n * n {
        return Err(Error::Uninvertible(format!("{} settings cannot determine {} unknowns", set.len(), n * n)));
    }
    let ops = setting_operators(set, &set.d)?;
    let m = DMatrix::from_fn(ops.len(), n * n, |_, _| T::zero());
    let mut m = m;
    for (i, w) in ops.iter().enumerate() {
        for (b, v) in hermitian_coords(w).into_iter().enumerate() {
            m[(i, b)] = v;
        }
    }
    let kappa = condition_of(m.clone())?;
    Ok((m, kappa))
}

/// `Tr[W_i rho] + N(0, sigma)` per setting. `rho` lives on a cavity-only
/// layout with one mode per point-set mode; its truncation may exceed the
/// reconstruction truncation.
pub fn simulate_measurements<T: Real>(
    rho: &DensityMatrix<T>,
    set: &WignerPointSet<T>,
    noise_sigma: T,
    seed: u64,
) -> Result<MeasurementRecord<T>> {
    let dims = cavity_dims(&rho.layout)?;
    if dims.len() != set.n_modes() {
        return Err(Error::Shape(format!("state has {} modes, point set {}", dims.len(), set.n_modes())));
    }
    if !(noise_sigma >= T::zero()) {
        return Err(Error::InvalidArgument("noise sigma must be non-negative".into()));
    }
    let ops = setting_operators(set, &dims)?;
    let mut values: Vec<T> = ops.iter().map(|w| (w * &rho.matrix).trace().re).collect();
    if noise_sigma > T::zero() {
        let normal = Normal::new(0.0, noise_sigma.as_f64()).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in &mut values {
            *v += T::lit(normal.sample(&mut rng));
        }
        Ok(MeasurementRecord { sigma: Some(vec![noise_sigma; values.len()]), values })
    } else {
        Ok(MeasurementRecord { values, sigma: None })
    }
}

/// Least squares with the trace fixed by a Lagrange multiplier, followed by
/// the positivity projection.
pub fn reconstruct<T: Real>(set: &WignerPointSet<T>, record: &MeasurementRecord<T>) -> Result<ReconstructionResult<T>> {
    let (m, kappa) = build_measurement_matrix(set)?;
    if record.values.len() != m.nrows() {
        return Err(Error::Shape(format!("{} values for {} settings", record.values.len(), m.nrows())));
    }
    let n = set.dim();
    let k = n * n;
    let x = DVector::from_column_slice(&record.values);
    let mtm = m.transpose() * &m;
    let mtx = m.transpose() * &x;
    let mut a = DMatrix::zeros(k + 1, k + 1);
    a.view_mut((0, 0), (k, k)).copy_from(&mtm);
    let mut rhs = DVector::zeros(k + 1);
    rhs.rows_mut(0, k).copy_from(&mtx);
    rhs[k] = T::one();
    for i in 0..n {
        a[(i * n + i, k)] = T::one();
        a[(k, i * n + i)] = T::one();
    }
    let sol = a.lu().solve(&rhs).ok_or_else(|| Error::Uninvertible("bordered system is singular".into()))?;
    let r: Vec<T> = sol.rows(0, k).iter().copied().collect();
    let residual = (&m * DVector::from_column_slice(&r) - &x).norm();
    let raw = herm(&from_hermitian_coords(&r, n)?);
    let (projected, adjustment) = smolin_project(&raw)?;
    Ok(ReconstructionResult {
        rho: DensityMatrix { layout: set.layout(), matrix: projected },
        rho_unprojected: raw,
        condition_number: kappa,
        residual,
        psd_adjustment: adjustment,
    })
}

/// Zeroes negative eigenvalues and spreads their mass equally over the
/// remaining positive ones until none is negative. Returns the projected
/// matrix and the total negative mass removed.
pub fn smolin_project<T: Real>(rho: &ComplexMatrix<T>) -> Result<(ComplexMatrix<T>, T)> {
    if !rho.is_square() {
        return Err(Error::Shape("density matrix must be square".into()));
    }
    let eig = SymmetricEigen::new(herm(rho));
    let mut lambda: Vec<T> = eig.eigenvalues.iter().copied().collect();
    if lambda.iter().all(|&l| l <= T::zero()) {
        return Err(Error::Degenerate("no positive eigenvalue to redistribute onto".into()));
    }
    let mut active: Vec<bool> = lambda.iter().map(|&l| l > T::zero()).collect();
    let mut moved = T::zero();
    let mut pending: T = lambda.iter().copied().filter(|&l| l < T::zero()).fold(T::zero(), |a, l| a + l);
    for l in lambda.iter_mut().filter(|l| **l < T::zero()) {
        *l = T::zero();
    }
    moved -= pending;
    while pending < T::zero() {
        let count = active.iter().filter(|&&a| a).count();
        if count == 0 {
            return Err(Error::Degenerate("negative mass exceeds positive spectrum".into()));
        }
        let share = pending / T::lit(count as f64);
        pending = T::zero();
        for (l, a) in lambda.iter_mut().zip(active.iter_mut()) {
            if *a {
                *l += share;
                if *l < T::zero() {
                    pending += *l;
                    *l = T::zero();
                    *a = false;
                }
            }
        }
    }
    let v = &eig.eigenvectors;
    let diag = DMatrix::from_diagonal(&DVector::from_iterator(lambda.len(), lambda.iter().map(|&l| Complex::new(l, T::zero()))));
    Ok((herm(&(v * diag * v.adjoint())), moved))
}

/// `(x - c2) / (c1 - c2)` per value, with per-value calibration points.
pub fn contrast_correction<T: Real>(values: &[T], c1: &[T], c2: &[T]) -> Result<Vec<T>> {
    if c1.len() != values.len() || c2.len() != values.len() {
        return Err(Error::Shape("need one (c1, c2) pair per value".into()));
    }
    values
        .iter()
        .zip(c1.iter().zip(c2))
        .map(|(&x, (&hi, &lo))| {
            if hi > lo {
                Ok((x - lo) / (hi - lo))
            } else {
                Err(Error::Calibration(format!("upper contrast {hi} not above lower {lo}")))
            }
        })
        .collect()
}

/// `sum |eig(a - b)| / 2`.
pub fn trace_distance<T: Real>(a: &ComplexMatrix<T>, b: &ComplexMatrix<T>) -> Result<T> {
    if a.shape() != b.shape() {
        return Err(Error::Shape("trace distance needs matrices of equal shape".into()));
    }
    let ev = SymmetricEigen::new(herm(&(a - b))).eigenvalues;
    Ok(ev.iter().fold(T::zero(), |acc, &e| acc + e.abs()) * T::lit(0.5))
}

#[derive(Debug, Clone)]
pub struct DesignOptions {
    pub seed: u64,
    /// Gradient descent on a smoothed log condition number before the random
    /// search. Without it only the random search runs.
    pub gradient: bool,
    pub smoothing_powers: Vec<f64>,
    pub iterations_per_power: u64,
    /// Random single-point perturbations, kept when they lower the condition
    /// number.
    pub proposals: usize,
    pub step: f64,
    /// Radius of the random initial points; `0.7 sqrt(d)` when unset.
    pub radius: Option<f64>,
    /// Soft limit on `|alpha|` during the search; `1.2 sqrt(d)` when unset.
    pub max_radius: Option<f64>,
}

impl Default for DesignOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            gradient: true,
            smoothing_powers: vec![4.0, 8.0, 16.0, 32.0],
            iterations_per_power: 300,
            proposals: 2000,
            step: 0.1,
            radius: None,
            max_radius: None,
        }
    }
}

/// Single-mode design problem in `f64`.
struct Design {
    d: usize,
    thetas: Vec<f64>,
    gen_re: ComplexMatrix<f64>,
    gen_im: ComplexMatrix<f64>,
    /// Displacements beyond this radius are pulled back by a quadratic
    /// penalty.
    bound: f64,
}

impl Design {
    fn new(d: usize, thetas: Vec<f64>, bound: f64) -> Result<Self> {
        let a = annihilation_op::<f64>(d + 1)?;
        let gen_re = a.adjoint() - &a;
        let gen_im = (a.adjoint() + &a) * C64::new(0.0, 1.0);
        Ok(Self { d, thetas, gen_re, gen_im, bound })
    }

    fn rows_per_point(&self) -> usize {
        self.thetas.len()
    }

    fn point_rows(&self, alpha: C64) -> Vec<Vec<f64>> {
        self.thetas.iter().map(|&t| hermitian_coords(&herm(&phase_block(alpha, t, self.d)))).collect()
    }

    /// Rows and their derivatives along Re and Im alpha.
    fn point_rows_grad(&self, alpha: C64) -> Vec<[Vec<f64>; 3]> {
        let n = self.d;
        self.thetas
            .iter()
            .map(|&t| {
                let w = herm(&phase_block(alpha, t, n + 1));
                let dr = &self.gen_re * &w - &w * &self.gen_re;
                let di = &self.gen_im * &w - &w * &self.gen_im;
                let cut = |m: &ComplexMatrix<f64>| hermitian_coords(&m.view((0, 0), (n, n)).into_owned());
                [cut(&w), cut(&dr), cut(&di)]
            })
            .collect()
    }

    fn matrix(&self, points: &[C64]) -> DMatrix<f64> {
        let k = self.d * self.d;
        let mut m = DMatrix::zeros(points.len() * self.rows_per_point(), k);
        for (p, &a) in points.iter().enumerate() {
            self.fill(&mut m, p, &self.point_rows(a));
        }
        m
    }

    fn fill(&self, m: &mut DMatrix<f64>, point: usize, rows: &[Vec<f64>]) {
        for (t, row) in rows.iter().enumerate() {
            for (b, &v) in row.iter().enumerate() {
                m[(point * self.rows_per_point() + t, b)] = v;
            }
        }
    }

    /// Smoothed log condition number
    /// `(1/p) ln sum s^p + (1/p) ln sum s^-p` and its gradient in
    /// `(re_0, im_0, re_1, ...)`.
    fn soft_cost(&self, x: &[f64], p: f64) -> (f64, Vec<f64>) {
        let points = unpack(x);
        let k = self.d * self.d;
        let r = self.rows_per_point();
        let mut m = DMatrix::zeros(points.len() * r, k);
        let mut dre = m.clone();
        let mut dim = m.clone();
        for (i, &a) in points.iter().enumerate() {
            for (t, [w, gr, gi]) in self.point_rows_grad(a).into_iter().enumerate() {
                for b in 0..k {
                    m[(i * r + t, b)] = w[b];
                    dre[(i * r + t, b)] = gr[b];
                    dim[(i * r + t, b)] = gi[b];
                }
            }
        }
        let svd = SVD::new(m, true, true);
        let s = &svd.singular_values;
        let smax = s.max();
        let smin = s.min().max(1e-300);
        let a: f64 = s.iter().map(|v| (v / smax).powf(p)).sum();
        let b: f64 = s.iter().map(|v| (smin / v).powf(p)).sum();
        let cost = smax.ln() + a.ln() / p - smin.ln() + b.ln() / p;
        let gs = DVector::from_iterator(
            s.len(),
            s.iter().map(|&v| (v / smax).powf(p - 1.0) / (smax * a) - (smin / v).powf(p + 1.0) / (smin * b)),
        );
        let u = svd.u.as_ref().expect("u");
        let vt = svd.v_t.as_ref().expect("v_t");
        let g = u * DMatrix::from_diagonal(&gs) * vt;
        let mut grad = vec![0.0; x.len()];
        for i in 0..points.len() {
            for t in 0..r {
                let row = i * r + t;
                for b in 0..k {
                    grad[2 * i] += g[(row, b)] * dre[(row, b)];
                    grad[2 * i + 1] += g[(row, b)] * dim[(row, b)];
                }
            }
        }
        let mut cost = cost;
        for (i, a) in points.iter().enumerate() {
            let r = a.norm();
            if r > self.bound {
                let excess = r - self.bound;
                cost += excess * excess;
                grad[2 * i] += 2.0 * excess * a.re / r;
                grad[2 * i + 1] += 2.0 * excess * a.im / r;
            }
        }
        (cost, grad)
    }
}

fn unpack(x: &[f64]) -> Vec<C64> {
    x.chunks(2).map(|c| C64::new(c[0], c[1])).collect()
}

fn pack(points: &[C64]) -> Vec<f64> {
    points.iter().flat_map(|a| [a.re, a.im]).collect()
}

fn kappa_or_inf(m: DMatrix<f64>) -> f64 {
    condition_of(m).unwrap_or(f64::INFINITY)
}

struct SoftCond<'a> {
    design: &'a Design,
    power: f64,
    cache: Mutex<Option<(Vec<f64>, f64, Vec<f64>)>>,
}

impl SoftCond<'_> {
    fn eval(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let mut cache = self.cache.lock().expect("cache lock");
        if let Some((cx, c, g)) = cache.as_ref() {
            if cx.as_slice() == x {
                return (*c, g.clone());
            }
        }
        let (c, g) = self.design.soft_cost(x, self.power);
        *cache = Some((x.to_vec(), c, g.clone()));
        (c, g)
    }
}

impl CostFunction for SoftCond<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, x: &Vec<f64>) -> std::result::Result<f64, argmin::core::Error> {
        Ok(self.eval(x).0)
    }
}

impl Gradient for SoftCond<'_> {
    type Param = Vec<f64>;
    type Gradient = Vec<f64>;

    fn gradient(&self, x: &Vec<f64>) -> std::result::Result<Vec<f64>, argmin::core::Error> {
        Ok(self.eval(x).1)
    }
}

/// Searches for `n_points` single-mode displacements that minimize the
/// condition number of the measurement matrix. Each point is measured at every
/// angle in `thetas`. Deterministic for a given seed.
pub fn optimize_point_set<T: Real>(
    d: usize,
    n_points: usize,
    thetas: &[T],
    form: WignerForm,
    options: &DesignOptions,
) -> Result<WignerPointSet<T>> {
    if d == 0 || thetas.is_empty() {
        return Err(Error::InvalidArgument("need d >= 1 and at least one angle".into()));
    }
    if n_points * thetas.len() < d * d {
        return Err(Error::InvalidArgument(format!(
            "{n_points} points x {} angles cannot determine {} unknowns",
            thetas.len(),
            d * d
        )));
    }
    let radius = options.radius.unwrap_or(0.7 * (d as f64).sqrt());
    let bound = options.max_radius.unwrap_or(1.2 * (d as f64).sqrt()).max(radius);
    let design = Design::new(d, thetas.iter().map(|t| t.as_f64()).collect(), bound)?;
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut points: Vec<C64> = (0..n_points)
        .map(|_| C64::from_polar(radius * rng.random::<f64>().sqrt(), std::f64::consts::TAU * rng.random::<f64>()))
        .collect();

    if options.gradient {
        for &p in &options.smoothing_powers {
            let problem = SoftCond { design: &design, power: p, cache: Mutex::new(None) };
            let solver = LBFGS::new(MoreThuenteLineSearch::new(), 10)
                .with_tolerance_grad(1e-10)
                .map_err(|e| Error::InvalidArgument(e.to_string()))?
                .with_tolerance_cost(1e-13)
                .map_err(|e| Error::InvalidArgument(e.to_string()))?;
            let x0 = pack(&points);
            if let Ok(res) = Executor::new(problem, solver).configure(|s| s.param(x0).max_iters(options.iterations_per_power)).run() {
                if let Some(best) = res.state.best_param {
                    let cand = unpack(&best);
                    if kappa_or_inf(design.matrix(&cand)).is_finite() {
                        points = cand;
                    }
                }
            }
        }
    }

    let mut m = design.matrix(&points);
    let mut kappa = kappa_or_inf(m.clone());
    for _ in 0..options.proposals {
        let i = rng.random_range(0..n_points);
        let old = points[i];
        let step = C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5) * (2.0 * options.step);
        let cand = old + step;
        if cand.norm() > bound {
            continue;
        }
        let old_rows: Vec<Vec<f64>> = (0..design.rows_per_point())
            .map(|t| m.row(i * design.rows_per_point() + t).iter().copied().collect())
            .collect();
        design.fill(&mut m, i, &design.point_rows(cand));
        let k = kappa_or_inf(m.clone());
        if k < kappa {
            kappa = k;
            points[i] = cand;
        } else {
            design.fill(&mut m, i, &old_rows);
        }
    }

    let points: Vec<Complex<T>> = points.iter().map(|a| Complex::new(T::lit(a.re), T::lit(a.im))).collect();
    WignerPointSet::single_mode(d, &points, thetas, form)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::{displacement_op, fock_state, number_op};
    use std::f64::consts::PI;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn vacuum(dim: usize) -> DensityMatrix<f64> {
        fock_state::<f64>(&SystemLayout::cavity(vec![dim]).unwrap(), 0, &[0]).unwrap().to_density()
    }

    #[test]
    fn operator_values() {
        let l = SystemLayout::cavity(vec![20]).unwrap();
        let w = generalized_wigner_operator(&l, &[c(0.0, 0.0)], &[PI], WignerForm::Joint).unwrap();
        assert!((w[(0, 0)].re - 1.0).abs() < 1e-12);
        let w = generalized_wigner_operator(&l, &[c(1.0, 0.0)], &[PI], WignerForm::Joint).unwrap();
        assert!((w[(0, 0)].re - (-2.0f64).exp()).abs() < 1e-3);
        let w = generalized_wigner_operator(&l, &[c(0.0, 0.0)], &[1.234], WignerForm::Joint).unwrap();
        assert!((w[(1, 1)].re - 1.234f64.cos()).abs() < 1e-12);
    }

    #[test]
    fn recurrence_matches_expm() {
        let a = c(0.7, -1.1);
        let exact = displacement_op::<f64>(60, a).unwrap();
        let cols = displaced_fock(-a, 6, 60);
        for i in 0..6 {
            for k in 0..20 {
                assert!((cols[i][k].conj() - exact[(i, k)]).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn operator_is_hermitian_and_bounded() {
        let l = SystemLayout::cavity(vec![3, 3]).unwrap();
        for form in [WignerForm::Joint, WignerForm::Product] {
            let w = generalized_wigner_operator(&l, &[c(0.4, -0.3), c(-0.8, 0.2)], &[2.0, 3.5], form).unwrap();
            assert!(crate::ops::is_hermitian(&w, 1e-12));
            let ev = crate::ops::hermitian_eigenvalues(&w);
            assert!(ev[0] >= -1.0 - 1e-9 && *ev.last().unwrap() <= 1.0 + 1e-9);
        }
    }

    #[test]
    fn parity_at_pi() {
        let l = SystemLayout::cavity(vec![3, 2, 2]).unwrap();
        let w = generalized_wigner_operator(&l, &[c(0.0, 0.0); 3], &[PI; 3], WignerForm::Joint).unwrap();
        for i in 0..l.total_dim() {
            let sign = if l.photons_of(i) % 2 == 0 { 1.0 } else { -1.0 };
            for j in 0..l.total_dim() {
                let expect = if i == j { sign } else { 0.0 };
                assert!((w[(i, j)] - c(expect, 0.0)).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn forms_differ_on_multiphoton_states() {
        let l = SystemLayout::cavity(vec![2, 2]).unwrap();
        let zero = [c(0.0, 0.0); 2];
        let th = [1.0, 2.0];
        let joint = generalized_wigner_operator(&l, &zero, &th, WignerForm::Joint).unwrap();
        let prod = generalized_wigner_operator(&l, &zero, &th, WignerForm::Product).unwrap();
        assert!((joint[(1, 1)] - prod[(1, 1)]).norm() < 1e-12);
        assert!((joint[(3, 3)].re - 3f64.cos()).abs() < 1e-12);
        assert!((prod[(3, 3)].re - 1f64.cos() * 2f64.cos()).abs() < 1e-12);
    }

    #[test]
    fn coords_round_trip() {
        let m = DMatrix::from_fn(3, 3, |i, j| c((i + j) as f64 * 0.3, i as f64 - j as f64));
        let h = herm(&m);
        let back = from_hermitian_coords(&hermitian_coords(&h), 3).unwrap();
        assert!((back - &h).norm() < 1e-12);
        let ip: f64 = hermitian_coords(&h).iter().zip(hermitian_coords(&h)).map(|(a, b)| a * b).sum();
        assert!((ip - (&h * &h).trace().re).abs() < 1e-12);
    }

    #[test]
    fn small_set_is_full_rank() {
        let pts = [c(0.0, 0.0), c(0.9, 0.0), c(0.0, 0.9), c(-0.6, 0.0)];
        let set = WignerPointSet::single_mode(2, &pts, &[PI], WignerForm::Joint).unwrap();
        let (m, k) = build_measurement_matrix(&set).unwrap();
        assert_eq!(m.shape(), (4, 4));
        assert!(k >= 1.0 && k.is_finite());
        let dup: Vec<C64> = pts.iter().copied().chain([pts[1]]).collect();
        let set2 = WignerPointSet::single_mode(2, &dup, &[PI], WignerForm::Joint).unwrap();
        assert!(set2.condition_number <= k * 2f64.sqrt() + 1e-9);
        assert!(WignerPointSet::single_mode(2, &pts[..3], &[PI], WignerForm::Joint).is_err());
        let same = [c(0.3, 0.0); 4];
        assert!(matches!(WignerPointSet::single_mode(2, &same, &[PI], WignerForm::Joint), Err(Error::Uninvertible(_))));
    }

    #[test]
    fn rejects_bad_angles() {
        let pts = [c(0.0, 0.0), c(0.9, 0.0), c(0.0, 0.9), c(-0.6, 0.0)];
        assert!(WignerPointSet::single_mode(2, &pts, &[0.0], WignerForm::Joint).is_err());
        assert!(WignerPointSet::single_mode(2, &pts, &[7.0], WignerForm::Joint).is_err());
    }

    #[test]
    fn smolin_examples() {
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![c(0.5, 0.0), c(0.6, 0.0), c(-0.1, 0.0)]));
        let (p, moved) = smolin_project(&d).unwrap();
        let ev = crate::ops::hermitian_eigenvalues(&p);
        assert!((ev[0]).abs() < 1e-12 && (ev[1] - 0.45).abs() < 1e-12 && (ev[2] - 0.55).abs() < 1e-12);
        assert!((moved - 0.1).abs() < 1e-12);
        let mixed = DMatrix::from_diagonal(&DVector::from_element(4, c(0.25, 0.0)));
        assert!((smolin_project(&mixed).unwrap().0 - &mixed).norm() < 1e-12);
        let again = smolin_project(&p).unwrap();
        assert!((again.0 - &p).norm() < 1e-12 && again.1 == 0.0);
        let neg = DMatrix::from_diagonal(&DVector::from_element(2, c(-0.5, 0.0)));
        assert!(matches!(smolin_project(&neg), Err(Error::Degenerate(_))));
        let cascade = DMatrix::from_diagonal(&DVector::from_vec(vec![c(1.3, 0.0), c(0.05, 0.0), c(-0.35, 0.0)]));
        let ev = crate::ops::hermitian_eigenvalues(&smolin_project(&cascade).unwrap().0);
        assert!(ev[0].abs() < 1e-12 && ev[1].abs() < 1e-12 && (ev[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn contrast_examples() {
        assert_eq!(contrast_correction(&[0.3], &[1.0], &[0.0]).unwrap(), vec![0.3]);
        assert!((contrast_correction(&[0.5f64], &[0.9], &[0.1]).unwrap()[0] - 0.5).abs() < 1e-15);
        let v = contrast_correction(&[0.9, 0.1], &[0.9, 0.9], &[0.1, 0.1]).unwrap();
        assert_eq!(v, vec![1.0, 0.0]);
        assert!(matches!(contrast_correction(&[0.5], &[0.1], &[0.1]), Err(Error::Calibration(_))));
    }

    #[test]
    fn vacuum_round_trip() {
        let pts = [c(0.0, 0.0), c(0.9, 0.0), c(0.0, 0.9), c(-0.6, 0.0), c(0.5, -0.5)];
        let set = WignerPointSet::single_mode(2, &pts, &[PI], WignerForm::Joint).unwrap();
        let rec = simulate_measurements(&vacuum(2), &set, 0.0, 0).unwrap();
        let res = reconstruct(&set, &rec).unwrap();
        assert!(res.rho.overlap_pure(&fock_state::<f64>(&set.layout(), 0, &[0]).unwrap().amplitudes) > 0.9999);
        assert!((res.rho_unprojected.trace().re - 1.0).abs() < 1e-10);
        assert!(res.residual < 1e-10);
    }

    #[test]
    fn noiseless_record_is_m_times_rho() {
        let pts = [c(0.0, 0.0), c(0.9, 0.0), c(0.0, 0.9), c(-0.6, 0.0), c(0.5, 0.5), c(-0.2, -0.7), c(1.1, 0.3), c(0.4, 0.0), c(-1.0, 0.4), c(0.0, -1.2)];
        let set = WignerPointSet::single_mode(3, &pts, &[PI], WignerForm::Joint).unwrap();
        let l = set.layout();
        let psi = crate::ComplexVector::from_vec(vec![c(0.6, 0.0), c(0.0, 0.48), c(0.64, 0.0)]);
        let rho = DensityMatrix::new(l, &psi * psi.adjoint()).unwrap();
        let rec = simulate_measurements(&rho, &set, 0.0, 0).unwrap();
        let (m, _) = build_measurement_matrix(&set).unwrap();
        let mx = m * DVector::from_vec(hermitian_coords(&rho.matrix));
        for (a, b) in rec.values.iter().zip(mx.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn noise_statistics() {
        let set = WignerPointSet::single_mode(1, &[c(0.0, 0.0)], &[PI], WignerForm::Joint).unwrap();
        let rho = vacuum(1);
        let sigma = 0.05;
        let xs: Vec<f64> = (0..1000).map(|s| simulate_measurements(&rho, &set, sigma, s).unwrap().values[0]).collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt();
        assert!((sd - sigma).abs() < 0.1 * sigma, "{sd}");
        let a = simulate_measurements(&rho, &set, sigma, 7).unwrap();
        let b = simulate_measurements(&rho, &set, sigma, 7).unwrap();
        assert_eq!(a.values, b.values);
    }

    #[test]
    fn soft_cost_gradient() {
        let design = Design::new(3, vec![PI, 2.0], 0.8).unwrap();
        let x: Vec<f64> = (0..10).map(|i| ((i * 7 % 11) as f64 / 11.0 - 0.5) * 2.0).collect();
        for p in [4.0, 16.0] {
            let (_, g) = design.soft_cost(&x, p);
            for i in 0..x.len() {
                let h = 1e-6;
                let mut xp = x.clone();
                xp[i] += h;
                let mut xm = x.clone();
                xm[i] -= h;
                let fd = (design.soft_cost(&xp, p).0 - design.soft_cost(&xm, p).0) / (2.0 * h);
                assert!((fd - g[i]).abs() < 1e-5 * (1.0 + fd.abs()), "p {p} i {i}: {fd} vs {}", g[i]);
            }
        }
    }

    #[test]
    fn small_design() {
        let set = optimize_point_set(2, 4, &[PI], WignerForm::Joint, &DesignOptions { seed: 3, ..Default::default() }).unwrap();
        assert!(set.condition_number <= 2.0, "{}", set.condition_number);
        let again = optimize_point_set(2, 4, &[PI], WignerForm::Joint, &DesignOptions { seed: 3, ..Default::default() }).unwrap();
        assert_eq!(set.settings, again.settings);
    }

    #[test]
    fn csv_round_trip() {
        let pts = [c(0.0, 0.0), c(0.9, 0.0), c(0.0, 0.9), c(-0.6, 0.0)];
        let set = WignerPointSet::product(vec![2, 2], &[pts.to_vec(), pts.to_vec()], &[vec![PI, 2.5]], WignerForm::Product).unwrap();
        let back = WignerPointSet::<f64>::from_csv(&set.to_csv().unwrap()).unwrap();
        assert_eq!(back.settings, set.settings);
        assert_eq!(back.d, vec![2, 2]);
        assert_eq!(back.form, WignerForm::Product);
        let rec = MeasurementRecord { values: vec![0.5, -0.25], sigma: Some(vec![0.01, 0.01]) };
        let r2 = MeasurementRecord::<f64>::from_csv(&rec.to_csv().unwrap()).unwrap();
        assert_eq!(r2.values, rec.values);
        assert_eq!(r2.sigma, rec.sigma);
    }

    #[test]
    fn number_op_sanity() {
        let n = number_op::<f64>(3).unwrap();
        let l = SystemLayout::cavity(vec![3]).unwrap();
        let w = generalized_wigner_operator(&l, &[c(0.0, 0.0)], &[0.5], WignerForm::Joint).unwrap();
        let expect = DMatrix::from_fn(3, 3, |i, j| if i == j { c((0.5 * n[(i, i)].re).cos(), 0.0) } else { c(0.0, 0.0) });
        assert!((w - expect).norm() < 1e-12);
    }
}
