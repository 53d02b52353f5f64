pub mod numerics;
pub mod geometry;
pub mod collision;
pub mod exec;
pub mod feasibility;
pub mod qp;
pub mod conformal;
pub mod sim;
pub mod config;
pub mod gradcheck;
