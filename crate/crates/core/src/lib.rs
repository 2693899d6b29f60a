//! Compile LOOP programs into a threshold-affine normal form and from there
//! into four dynamical systems: a recurrent ReLU block, a ν-coded
//! bounded-activation network, a polynomial ODE and its Euler discretization.
//! Every backend is run and checked against the reference interpreter.

pub mod arith;
pub mod corpus;
pub mod error;
pub mod euler;
pub mod integrate;
pub mod loop_lang;
pub mod normal_form;
pub mod num;
pub mod ode;
pub mod poly;
pub mod relu;
pub mod rho;
pub mod trace;
pub mod verify;

pub use error::{Error, Result};
