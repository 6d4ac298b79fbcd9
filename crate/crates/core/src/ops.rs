//! Truncated Fock-space operators and the tensor layout they live in.
//!
//! Subsystem order is `(transmon, mode 0, mode 1, ...)` and the last subsystem
//! varies fastest in the flattened index. A layout with `transmon_levels == 1`
//! describes the cavity alone.

use crate::{cr, ComplexMatrix, ComplexVector, Error, Real, Result};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SystemLayout {
    transmon_levels: usize,
    mode_dims: Vec<usize>,
}

impl SystemLayout {
    pub fn new(transmon_levels: usize, mode_dims: Vec<usize>) -> Result<Self> {
        if transmon_levels == 0 || mode_dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidDimension(format!(
                "layout ({transmon_levels}; {mode_dims:?}) has a zero-sized subsystem"
            )));
        }
        Ok(Self { transmon_levels, mode_dims })
    }

    /// Cavity modes only, no transmon.
    pub fn cavity(mode_dims: Vec<usize>) -> Result<Self> {
        Self::new(1, mode_dims)
    }

    pub fn transmon_levels(&self) -> usize {
        self.transmon_levels
    }

    pub fn mode_dims(&self) -> &[usize] {
        &self.mode_dims
    }

    pub fn n_modes(&self) -> usize {
        self.mode_dims.len()
    }

    /// Subsystem dims with the transmon first.
    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.transmon_levels)
            .chain(self.mode_dims.iter().copied())
            .collect()
    }

    pub fn total_dim(&self) -> usize {
        self.transmon_levels * self.mode_dims.iter().product::<usize>()
    }

    pub fn mode_space_dim(&self) -> usize {
        self.mode_dims.iter().product()
    }

    /// Site index of cavity mode `m` (site 0 is the transmon).
    pub fn mode_site(m: usize) -> usize {
        m + 1
    }

    /// Flattened index of `[transmon, n_0, n_1, ...]`.
    pub fn index_of(&self, occupations: &[usize]) -> Result<usize> {
        let dims = self.dims();
        if occupations.len() != dims.len() {
            return Err(Error::Shape(format!(
                "expected {} occupations, got {}",
                dims.len(),
                occupations.len()
            )));
        }
        let mut idx = 0;
        for (&o, &d) in occupations.iter().zip(&dims) {
            if o >= d {
                return Err(Error::OutOfRange(format!("occupation {o} >= truncation {d}")));
            }
            idx = idx * d + o;
        }
        Ok(idx)
    }

    pub fn occupations_of(&self, index: usize) -> Result<Vec<usize>> {
        if index >= self.total_dim() {
            return Err(Error::OutOfRange(format!(
                "index {index} >= total dim {}",
                self.total_dim()
            )));
        }
        let dims = self.dims();
        let mut occ = vec![0; dims.len()];
        let mut rest = index;
        for (o, &d) in occ.iter_mut().zip(&dims).rev() {
            *o = rest % d;
            rest /= d;
        }
        Ok(occ)
    }

    /// Total photon number of the basis state at `index`.
    pub fn photons_of(&self, index: usize) -> usize {
        self.occupations_of(index).map(|o| o[1..].iter().sum()).unwrap_or(0)
    }
}

fn check_dim(dim: usize) -> Result<()> {
    if dim == 0 {
        Err(Error::InvalidDimension("dimension must be at least 1".into()))
    } else {
        Ok(())
    }
}

pub fn identity<T: Real>(dim: usize) -> ComplexMatrix<T> {
    DMatrix::identity(dim, dim)
}

pub fn annihilation_op<T: Real>(dim: usize) -> Result<ComplexMatrix<T>> {
    check_dim(dim)?;
    let mut a = DMatrix::zeros(dim, dim);
    for n in 1..dim {
        a[(n - 1, n)] = cr(f64::sqrt(n as f64));
    }
    Ok(a)
}

pub fn creation_op<T: Real>(dim: usize) -> Result<ComplexMatrix<T>> {
    Ok(annihilation_op::<T>(dim)?.adjoint())
}

pub fn number_op<T: Real>(dim: usize) -> Result<ComplexMatrix<T>> {
    check_dim(dim)?;
    Ok(DMatrix::from_diagonal(&DVector::from_fn(dim, |n, _| cr(n as f64))))
}

/// `exp(alpha a^dag - alpha^* a)` on the truncated space.
///
/// Accurate while `|alpha|^2` stays well below `dim / 4`; beyond that the
/// truncated generator no longer generates a good displacement. This is not
/// enforced.
pub fn displacement_op<T: Real>(dim: usize, alpha: Complex<T>) -> Result<ComplexMatrix<T>> {
    check_dim(dim)?;
    if !(alpha.re.is_finite() && alpha.im.is_finite()) {
        return Err(Error::InvalidArgument("displacement must be finite".into()));
    }
    let a = annihilation_op::<T>(dim)?;
    let gen = a.adjoint() * alpha - a * alpha.conj();
    Ok(gen.exp())
}

/// Operator on `site` lifted to the full layout.
pub fn embed_operator<T: Real>(
    layout: &SystemLayout,
    site: usize,
    op: &ComplexMatrix<T>,
) -> Result<ComplexMatrix<T>> {
    let dims = layout.dims();
    let Some(&d) = dims.get(site) else {
        return Err(Error::Shape(format!("site {site} not in layout with {} sites", dims.len())));
    };
    if op.nrows() != d || op.ncols() != d {
        return Err(Error::Shape(format!(
            "operator is {}x{}, site {site} has dim {d}",
            op.nrows(),
            op.ncols()
        )));
    }
    let left: usize = dims[..site].iter().product();
    let right: usize = dims[site + 1..].iter().product();
    Ok(identity::<T>(left).kronecker(op).kronecker(&identity::<T>(right)))
}

pub fn embed_mode<T: Real>(
    layout: &SystemLayout,
    mode: usize,
    op: &ComplexMatrix<T>,
) -> Result<ComplexMatrix<T>> {
    embed_operator(layout, SystemLayout::mode_site(mode), op)
}

/// Kronecker product of a list, leftmost factor slowest.
pub fn kron_all<T: Real>(ops: &[ComplexMatrix<T>]) -> ComplexMatrix<T> {
    ops.iter().fold(identity::<T>(1), |acc, m| acc.kronecker(m))
}

pub fn commutator<T: Real>(a: &ComplexMatrix<T>, b: &ComplexMatrix<T>) -> ComplexMatrix<T> {
    a * b - b * a
}

pub fn max_abs<T: Real>(m: &ComplexMatrix<T>) -> T {
    m.iter().fold(T::zero(), |acc, z| acc.max(z.norm_sqr().sqrt()))
}

pub fn is_hermitian<T: Real>(m: &ComplexMatrix<T>, tol: T) -> bool {
    m.is_square() && max_abs(&(m - m.adjoint())) < tol
}

pub fn is_unitary<T: Real>(m: &ComplexMatrix<T>, tol: T) -> bool {
    m.is_square() && max_abs(&(m.adjoint() * m - identity::<T>(m.nrows()))) < tol
}

/// Real eigenvalues of a Hermitian matrix, ascending.
pub fn hermitian_eigenvalues<T: Real>(m: &ComplexMatrix<T>) -> Vec<T> {
    let mut ev: Vec<T> = SymmetricEigen::new(m.clone()).eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    ev
}

#[derive(Debug, Clone)]
pub struct StateVector<T: Real> {
    pub layout: SystemLayout,
    pub amplitudes: ComplexVector<T>,
}

impl<T: Real> StateVector<T> {
    /// Normalizes `amplitudes`; fails on a zero vector.
    pub fn new(layout: SystemLayout, amplitudes: ComplexVector<T>) -> Result<Self> {
        if amplitudes.len() != layout.total_dim() {
            return Err(Error::Shape(format!(
                "{} amplitudes for total dim {}",
                amplitudes.len(),
                layout.total_dim()
            )));
        }
        let norm = amplitudes.norm();
        if norm <= T::zero() || !norm.is_finite() {
            return Err(Error::InvalidArgument("state vector has zero norm".into()));
        }
        Ok(Self { layout, amplitudes: amplitudes / Complex::new(norm, T::zero()) })
    }

    pub fn norm(&self) -> T {
        self.amplitudes.norm()
    }

    pub fn overlap(&self, other: &Self) -> Complex<T> {
        self.amplitudes.dotc(&other.amplitudes)
    }

    pub fn to_density(&self) -> DensityMatrix<T> {
        DensityMatrix {
            layout: self.layout.clone(),
            matrix: &self.amplitudes * self.amplitudes.adjoint(),
        }
    }
}

pub fn fock_state<T: Real>(
    layout: &SystemLayout,
    transmon_level: usize,
    occupations: &[usize],
) -> Result<StateVector<T>> {
    let mut occ = Vec::with_capacity(occupations.len() + 1);
    occ.push(transmon_level);
    occ.extend_from_slice(occupations);
    let idx = layout.index_of(&occ)?;
    let mut v = DVector::zeros(layout.total_dim());
    v[idx] = cr(1.0);
    Ok(StateVector { layout: layout.clone(), amplitudes: v })
}

#[derive(Debug, Clone)]
pub struct DensityMatrix<T: Real> {
    pub layout: SystemLayout,
    pub matrix: ComplexMatrix<T>,
}

impl<T: Real> DensityMatrix<T> {
    /// Hermitizes and normalizes to unit trace. Inputs that are far from
    /// Hermitian or have vanishing trace are rejected.
    pub fn new(layout: SystemLayout, matrix: ComplexMatrix<T>) -> Result<Self> {
        let d = layout.total_dim();
        if matrix.nrows() != d || matrix.ncols() != d {
            return Err(Error::Shape(format!(
                "density matrix {}x{} for total dim {d}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        let scale = max_abs(&matrix).max(T::lit(1e-300));
        if max_abs(&(&matrix - matrix.adjoint())) > T::lit(1e-6) * scale {
            return Err(Error::InvalidArgument("density matrix is not Hermitian".into()));
        }
        let h = (&matrix + matrix.adjoint()) * cr::<T>(0.5);
        let tr = h.trace().re;
        if tr.abs() < T::lit(1e-12) {
            return Err(Error::Degenerate("density matrix has zero trace".into()));
        }
        Ok(Self { layout, matrix: h / Complex::new(tr, T::zero()) })
    }

    pub fn maximally_mixed(layout: SystemLayout) -> Self {
        let d = layout.total_dim();
        let matrix = identity::<T>(d) * cr::<T>(1.0 / d as f64);
        Self { layout, matrix }
    }

    pub fn trace(&self) -> T {
        self.matrix.trace().re
    }

    pub fn eigenvalues(&self) -> Vec<T> {
        hermitian_eigenvalues(&self.matrix)
    }

    pub fn is_physical(&self, tol: T) -> bool {
        is_hermitian(&self.matrix, tol)
            && (self.trace() - T::one()).abs() < tol
            && self.eigenvalues().first().map_or(true, |&e| e >= -tol)
    }

    pub fn purity(&self) -> T {
        (&self.matrix * &self.matrix).trace().re
    }

    /// `<psi|rho|psi>`.
    pub fn overlap_pure(&self, psi: &ComplexVector<T>) -> T {
        psi.dotc(&(&self.matrix * psi)).re
    }

    pub fn expectation(&self, op: &ComplexMatrix<T>) -> Complex<T> {
        (op * &self.matrix).trace()
    }
}

/// Partial trace keeping `keep` (site indices, ascending) of a matrix laid out
/// over `dims`.
pub fn partial_trace<T: Real>(
    dims: &[usize],
    rho: &ComplexMatrix<T>,
    keep: &[usize],
) -> Result<ComplexMatrix<T>> {
    let total: usize = dims.iter().product();
    if rho.nrows() != total || rho.ncols() != total {
        return Err(Error::Shape(format!("matrix {}x{} for dims {dims:?}", rho.nrows(), rho.ncols())));
    }
    if keep.iter().any(|&k| k >= dims.len()) || keep.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument(format!("bad kept sites {keep:?}")));
    }
    let kdims: Vec<usize> = keep.iter().map(|&k| dims[k]).collect();
    let kd: usize = kdims.iter().product();
    let mut out = DMatrix::zeros(kd, kd);
    let split = |mut i: usize| {
        let mut occ = vec![0; dims.len()];
        for s in (0..dims.len()).rev() {
            occ[s] = i % dims[s];
            i /= dims[s];
        }
        occ
    };
    let kept_index = |occ: &[usize]| keep.iter().fold(0, |acc, &k| acc * dims[k] + occ[k]);
    for i in 0..total {
        let oi = split(i);
        for j in 0..total {
            let oj = split(j);
            let traced_match = (0..dims.len()).filter(|s| !keep.contains(s)).all(|s| oi[s] == oj[s]);
            if traced_match {
                out[(kept_index(&oi), kept_index(&oj))] += rho[(i, j)];
            }
        }
    }
    Ok(out)
}

/// Block `<level|rho|level>` of `site`, leaving the other sites.
pub fn project_site<T: Real>(
    dims: &[usize],
    rho: &ComplexMatrix<T>,
    site: usize,
    level: usize,
) -> Result<ComplexMatrix<T>> {
    if site >= dims.len() || level >= dims[site] {
        return Err(Error::OutOfRange(format!("site {site} level {level} for dims {dims:?}")));
    }
    let left: usize = dims[..site].iter().product();
    let right: usize = dims[site + 1..].iter().product();
    let d = dims[site];
    let n = left * right;
    let full = |l: usize, r: usize| (l * d + level) * right + r;
    Ok(DMatrix::from_fn(n, n, |i, j| rho[(full(i / right, i % right), full(j / right, j % right))]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(re: f64) -> Complex<f64> {
        Complex::new(re, 0.0)
    }

    #[test]
    fn annihilation_entries() {
        let a = annihilation_op::<f64>(3).unwrap();
        assert_eq!(a[(0, 1)], c(1.0));
        assert!((a[(1, 2)].re - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(a.iter().filter(|z| z.norm() > 0.0).count(), 2);
        let a1 = annihilation_op::<f64>(1).unwrap();
        assert_eq!(a1, DMatrix::zeros(1, 1));
        assert!(annihilation_op::<f64>(0).is_err());
    }

    #[test]
    fn truncated_commutator() {
        let a = annihilation_op::<f64>(10).unwrap();
        let comm = commutator(&a, &a.adjoint());
        for i in 0..9 {
            assert!((comm[(i, i)] - c(1.0)).norm() < 1e-12);
        }
        assert!((comm[(9, 9)] - c(-9.0)).norm() < 1e-12);
        let off: f64 = (0..10)
            .flat_map(|i| (0..10).map(move |j| (i, j)))
            .filter(|(i, j)| i != j)
            .map(|(i, j)| comm[(i, j)].norm())
            .sum();
        assert!(off < 1e-12);
    }

    #[test]
    fn number_matches_adag_a() {
        assert_eq!(
            number_op::<f64>(4).unwrap().diagonal(),
            DVector::from_vec(vec![c(0.0), c(1.0), c(2.0), c(3.0)])
        );
        let a = annihilation_op::<f64>(6).unwrap();
        assert!(max_abs(&(a.adjoint() * &a - number_op::<f64>(6).unwrap())) < 1e-14);
    }

    #[test]
    fn displacement_vacuum_overlap() {
        assert!(max_abs(&(displacement_op::<f64>(5, c(0.0)).unwrap() - identity(5))) < 1e-15);
        let d = displacement_op::<f64>(30, c(1.0)).unwrap();
        assert!((d[(0, 0)].norm() - (-0.5f64).exp()).abs() < 1e-4);
        let alpha = Complex::new(1.2, -0.7);
        let prod = displacement_op::<f64>(40, alpha).unwrap() * displacement_op::<f64>(40, -alpha).unwrap();
        assert!(max_abs(&(prod - identity(40))) < 1e-8);
        assert!(displacement_op::<f64>(4, Complex::new(f64::NAN, 0.0)).is_err());
    }

    #[test]
    fn displacement_unitarity_degrades_with_alpha() {
        let dim = 16;
        let mut last = 0.0;
        for k in 1..=8 {
            let alpha = c(0.5 * k as f64);
            let d = displacement_op::<f64>(dim, alpha).unwrap();
            let dev = max_abs(&(d.adjoint() * &d - identity::<f64>(dim)));
            if alpha.norm_sqr() <= dim as f64 / 4.0 {
                assert!(dev < 1e-8);
            }
            assert!(dev >= last - 1e-12);
            last = dev;
        }
    }

    #[test]
    fn embed_number_reads_occupation() {
        let layout = SystemLayout::new(2, vec![4, 4]).unwrap();
        let n0 = embed_mode(&layout, 0, &number_op::<f64>(4).unwrap()).unwrap();
        let psi = fock_state::<f64>(&layout, 0, &[1, 0]).unwrap();
        let v = psi.amplitudes.dotc(&(&n0 * &psi.amplitudes));
        assert!((v - c(1.0)).norm() < 1e-15);
        let id = embed_operator(&layout, 0, &identity::<f64>(2)).unwrap();
        assert_eq!(id, identity(32));
        assert!(embed_operator(&layout, 1, &identity::<f64>(3)).is_err());
    }

    #[test]
    fn fock_state_checks() {
        let layout = SystemLayout::new(2, vec![3, 2]).unwrap();
        let s = fock_state::<f64>(&layout, 0, &[0, 0]).unwrap();
        assert_eq!(s.amplitudes[0], c(1.0));
        assert!((s.norm() - 1.0).abs() < 1e-12);
        assert!(fock_state::<f64>(&layout, 0, &[3, 0]).is_err());
        assert!(fock_state::<f64>(&layout, 2, &[0, 0]).is_err());
        // last subsystem fastest
        assert_eq!(layout.index_of(&[0, 0, 1]).unwrap(), 1);
        assert_eq!(layout.index_of(&[0, 1, 0]).unwrap(), 2);
        assert_eq!(layout.index_of(&[1, 0, 0]).unwrap(), 6);
    }

    #[test]
    fn index_round_trip_exhaustive() {
        let layout = SystemLayout::new(2, vec![8, 8, 4, 8]).unwrap();
        assert_eq!(layout.total_dim(), 4096);
        for i in 0..layout.total_dim() {
            let occ = layout.occupations_of(i).unwrap();
            assert_eq!(layout.index_of(&occ).unwrap(), i);
        }
        assert!(layout.occupations_of(4096).is_err());
    }

    #[test]
    fn partial_trace_of_product() {
        let a = DMatrix::from_row_slice(2, 2, &[c(0.25), Complex::new(0.1, 0.2), Complex::new(0.1, -0.2), c(0.75)]);
        let b = DMatrix::from_diagonal(&DVector::from_vec(vec![c(0.5), c(0.3), c(0.2)]));
        let ab = a.kronecker(&b);
        assert!(max_abs(&(partial_trace(&[2, 3], &ab, &[0]).unwrap() - &a)) < 1e-15);
        assert!(max_abs(&(partial_trace(&[2, 3], &ab, &[1]).unwrap() - &b)) < 1e-15);
        let p = project_site(&[2, 3], &ab, 0, 1).unwrap();
        assert!(max_abs(&(p - &b * c(0.75))) < 1e-15);
    }

    #[test]
    fn f32_operators() {
        let a = annihilation_op::<f32>(5).unwrap();
        assert!(max_abs(&(a.adjoint() * &a - number_op::<f32>(5).unwrap())) < 1e-6);
        let d = displacement_op::<f32>(20, Complex::new(0.5f32, 0.2)).unwrap();
        assert!(is_unitary(&d, 1e-4));
    }

    proptest! {
        #[test]
        fn ladder_elements_exact(dim in 1usize..=64) {
            let a = annihilation_op::<f64>(dim).unwrap();
            for m in 0..dim {
                for n in 0..dim {
                    let want = if m + 1 == n { (n as f64).sqrt() } else { 0.0 };
                    prop_assert_eq!(a[(m, n)], c(want));
                }
            }
        }

        #[test]
        fn embedding_preserves_structure(re in -1.0f64..1.0, im in -1.0f64..1.0, site in 0usize..3) {
            let layout = SystemLayout::new(2, vec![3, 4]).unwrap();
            let d = layout.dims()[site];
            let herm = {
                let a = annihilation_op::<f64>(d).unwrap() * Complex::new(re, im);
                &a + a.adjoint()
            };
            let e = embed_operator(&layout, site, &herm).unwrap();
            prop_assert!(is_hermitian(&e, 1e-12));
            let u = displacement_op::<f64>(d, Complex::new(re, im) * 0.1).unwrap();
            let eu = embed_operator(&layout, site, &u).unwrap();
            let tol = if is_unitary(&u, 1e-10) { 1e-10 } else { 1.0 };
            prop_assert!(is_unitary(&eu, tol));
        }

        #[test]
        fn disjoint_embeddings_commute(x in -1.0f64..1.0, y in -1.0f64..1.0) {
            let layout = SystemLayout::new(2, vec![3, 3]).unwrap();
            let a = embed_mode(&layout, 0, &(annihilation_op::<f64>(3).unwrap() * c(x))).unwrap();
            let b = embed_mode(&layout, 1, &(creation_op::<f64>(3).unwrap() * c(y))).unwrap();
            prop_assert!(max_abs(&commutator(&a, &b)) < 1e-12);
        }
    }
}
