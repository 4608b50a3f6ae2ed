//! Program induction from a single simulated demonstration: a switching
//! proportional-controller model is inferred with a particle filter guided by
//! a visuomotor network's saliency, the resulting symbol trace is compressed
//! into loops and palindromes, and the controllers are grounded in images so
//! the program runs in rearranged scenes.

pub mod config;
pub mod control;
pub mod error;
pub mod grounding;
pub mod image;
pub mod induce;
pub mod net;
pub mod pipeline;
pub mod program;
pub mod saliency;
pub mod seed;
pub mod smc;
pub mod stats;
pub mod symbolize;
pub mod world;

pub use config::Config;
pub use error::{Error, Result};
pub use program::{ControllerLibrary, ControllerParams, ProgramAst, SymbolId};
pub use world::{ArmModel, CameraModel, JointState, Point2, Scene, SceneObject};
