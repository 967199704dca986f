pub mod exprlang;
pub mod geometry;
pub mod harness;
pub mod jets;
pub mod polyharmonic;
pub mod pullback;
pub mod quadrature;
pub mod stress;
pub mod variation;
