//! Learned crowd interaction model: per-goal velocity GPs over occupancy
//! grids, goal inference from partial tracks, and joint Monte Carlo
//! trajectory prediction for every agent in a scene.

pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod geom;
pub mod goals;
pub mod gp;
pub mod grid;
pub mod model;
pub mod predict;
pub mod rng;

pub use error::{Error, Result};
pub use geom::{Position2, Vec2, Velocity2};
