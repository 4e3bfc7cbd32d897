//! Dense light field reconstruction from sparsely sampled views by sparse
//! regularization of epipolar-plane images in a shearlet frame, with an
//! iterative solver and a learned single-pass variant.

pub mod drst;
pub mod error;
pub mod fft;
pub mod geometry;
pub mod interp;
pub mod io;
pub mod lightfield;
pub mod nn;
pub mod pipeline;
pub mod plane;
pub mod shearlet;
pub mod solver;
pub mod trainer;

pub use error::{Error, Result};
pub use lightfield::{DisparityConfig, Epi, Image, LightField3D};
pub use plane::Plane;
pub use shearlet::{CoefficientStack, ShearletSystem};
