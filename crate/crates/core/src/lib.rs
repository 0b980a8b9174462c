//! Strictly convex quadratic programs solved on Paillier-encrypted data.

pub mod dgk;
pub mod math;
pub mod paillier;
pub mod fixed_point;
pub mod harness;
pub mod qp;
pub mod protocols;
pub mod privacy;
