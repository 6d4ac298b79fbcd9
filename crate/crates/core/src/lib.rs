//! Photon blockade in a transmon coupled to a multimode cavity: Hamiltonians,
//! master-equation propagation, constrained GRAPE, generalized Wigner
//! tomography and the calibration/analysis helpers that go with them.
//!
//! Everything numeric is generic over [`Real`] (`f32` or `f64`). The aliases at
//! the bottom of this file fix the scalar to `f64`, which is what the CLI uses.

pub mod analysis;
pub mod config;
pub mod error;
pub mod grape;
pub mod hamiltonian;
pub mod io;
pub mod lindblad;
pub mod ops;
mod sparse;
pub mod tomography;

use nalgebra::{DMatrix, DVector, RealField};
use num_complex::Complex;
use num_traits::{FromPrimitive, ToPrimitive};
use std::fmt;

pub use error::{Error, Result};

/// Scalar type for all numerics.
pub trait Real:
    RealField
    + Copy
    + FromPrimitive
    + ToPrimitive
    + rustfft::FftNum
    + fmt::Display
    + fmt::LowerExp
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal.
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite scalar")
    }
}

impl Real for f32 {}
impl Real for f64 {}

pub type ComplexMatrix<T> = DMatrix<Complex<T>>;
pub type ComplexVector<T> = DVector<Complex<T>>;

pub(crate) fn cr<T: Real>(re: f64) -> Complex<T> {
    Complex::new(T::lit(re), T::zero())
}

pub(crate) fn cis<T: Real>(theta: T) -> Complex<T> {
    Complex::new(theta.cos(), theta.sin())
}

pub const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

pub type CMatrix = ComplexMatrix<f64>;
pub type CVector = ComplexVector<f64>;
pub type C64 = Complex<f64>;
pub type StateVector = ops::StateVector<f64>;
pub type DensityMatrix = ops::DensityMatrix<f64>;
pub type DeviceParams = hamiltonian::DeviceParams<f64>;
pub type BlockadeSpec = hamiltonian::BlockadeSpec<f64>;
pub type PulseSequence = lindblad::PulseSequence<f64>;
pub type CollapseChannel = lindblad::CollapseChannel<f64>;
pub type TrajectoryResult = lindblad::TrajectoryResult<f64>;
pub type ControlProblem = grape::ControlProblem<f64>;
pub type PulseResult = grape::PulseResult<f64>;
pub type WignerPointSet = tomography::WignerPointSet<f64>;
pub type ReconstructionResult = tomography::ReconstructionResult<f64>;
