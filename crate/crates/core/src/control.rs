//! Proportional control, demonstration recording and program execution.

use std::ops::Deref;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::image::Image;
use crate::program::{ControllerLibrary, ControllerParams, ProgramAst, SymbolId};
use crate::world::{CameraModel, JointState, Scene};

/// Joint velocity command (rad/s).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ControlSignal(pub Vec<f64>);

impl Deref for ControlSignal {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// `u = K_p (θ_d − θ)`: attractive for positive gains.
pub fn control_step(theta: &JointState, c: &ControllerParams) -> Result<ControlSignal> {
    check_dim(c.goal.len(), theta.len())?;
    Ok(ControlSignal(
        theta
            .iter()
            .zip(c.goal.iter())
            .map(|(q, g)| c.gain * (g - q))
            .collect(),
    ))
}

fn check_stable(c: &ControllerParams, dt: f64) -> Result<()> {
    let k = dt * c.gain;
    if !(dt > 0.0) || !(k > 0.0 && k < 2.0) {
        return Err(Error::Unstable(k));
    }
    Ok(())
}

fn euler(theta: &mut JointState, u: &ControlSignal, dt: f64) {
    for (q, v) in theta.iter_mut().zip(u.iter()) {
        *q += dt * v;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// `steps + 1` states, starting with the initial state.
    pub states: Vec<JointState>,
    pub controls: Vec<ControlSignal>,
}

/// Forward-Euler rollout of a single controller.
pub fn rollout(theta0: &JointState, c: &ControllerParams, dt: f64, steps: usize) -> Result<Trajectory> {
    check_stable(c, dt)?;
    check_dim(c.goal.len(), theta0.len())?;
    let mut theta = theta0.clone();
    let mut states = Vec::with_capacity(steps + 1);
    let mut controls = Vec::with_capacity(steps);
    states.push(theta.clone());
    for _ in 0..steps {
        let u = control_step(&theta, c)?;
        euler(&mut theta, &u, dt);
        controls.push(u);
        states.push(theta.clone());
    }
    Ok(Trajectory { states, controls })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DemoConfig {
    pub dt: f64,
    pub convergence_eps: f64,
    /// Safety bound on the length of a single controller segment.
    pub max_segment_steps: usize,
}

impl Default for DemoConfig {
    fn default() -> Self {
        DemoConfig {
            dt: 0.05,
            convergence_eps: 0.01,
            max_segment_steps: 10_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Frame {
    pub theta: JointState,
    pub control: ControlSignal,
    pub image: Arc<Image>,
}

/// Ground truth for one executed symbol: frames `start..start + len`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub symbol: SymbolId,
    pub start: usize,
    pub len: usize,
}

#[derive(Debug, Clone)]
pub struct Demonstration {
    pub dt: f64,
    pub frames: Vec<Frame>,
    /// Generator ground truth; empty for demonstrations loaded from disk
    /// without a segment file.
    pub segments: Vec<Segment>,
}

impl Demonstration {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn joint_count(&self) -> usize {
        self.frames.first().map_or(0, |f| f.theta.len())
    }

    /// Frame indices at which a new controller takes over (excluding 0).
    pub fn switch_times(&self) -> Vec<usize> {
        self.segments.iter().skip(1).map(|s| s.start).collect()
    }

    pub fn symbol_trace(&self) -> Vec<SymbolId> {
        self.segments.iter().map(|s| s.symbol).collect()
    }
}

/// Runs one controller until the goal error drops below `eps`, calling
/// `record` with the state and command at every step. At least one step is
/// always recorded.
fn run_segment(
    theta: &mut JointState,
    c: &ControllerParams,
    cfg: &DemoConfig,
    mut record: impl FnMut(&JointState, ControlSignal),
) -> Result<usize> {
    check_stable(c, cfg.dt)?;
    let mut steps = 0;
    loop {
        let u = control_step(theta, c)?;
        let converged = theta.distance(&c.goal) < cfg.convergence_eps;
        if !converged || steps == 0 {
            record(theta, u.clone());
            steps += 1;
        }
        if converged {
            return Ok(steps);
        }
        euler(theta, &u, cfg.dt);
        if steps >= cfg.max_segment_steps {
            return Err(Error::invalid(format!(
                "controller did not converge within {} steps",
                cfg.max_segment_steps
            )));
        }
    }
}

/// Executes `program` from `theta0`, recording joint states, commands and the
/// rendered scene at every step.
pub fn generate_demonstration(
    program: &ProgramAst,
    library: &ControllerLibrary,
    theta0: &JointState,
    scene: &Scene,
    camera: &CameraModel,
    cfg: &DemoConfig,
) -> Result<Demonstration> {
    // the scene is static, so every frame shares one rendering
    let image = Arc::new(scene.render(camera));
    let mut theta = theta0.clone();
    let mut frames = Vec::new();
    let mut segments = Vec::new();
    for symbol in program.expand() {
        let c = library.require(symbol)?;
        check_dim(theta.len(), c.goal.len())?;
        let start = frames.len();
        let len = run_segment(&mut theta, c, cfg, |q, u| {
            frames.push(Frame {
                theta: q.clone(),
                control: u,
                image: Arc::clone(&image),
            })
        })?;
        segments.push(Segment { symbol, start, len });
    }
    Ok(Demonstration {
        dt: cfg.dt,
        frames,
        segments,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Execution {
    pub states: Vec<JointState>,
    /// Symbols in the order they were executed.
    pub visits: Vec<SymbolId>,
    /// Converged state at the end of each visit.
    pub visit_end_states: Vec<JointState>,
}

/// Runs an induced program against a (possibly regrounded) library.
pub fn execute_program(
    program: &ProgramAst,
    library: &ControllerLibrary,
    theta0: &JointState,
    cfg: &DemoConfig,
) -> Result<Execution> {
    let mut theta = theta0.clone();
    let mut exec = Execution {
        states: Vec::new(),
        visits: Vec::new(),
        visit_end_states: Vec::new(),
    };
    for symbol in program.expand() {
        let c = library.require(symbol)?;
        check_dim(theta.len(), c.goal.len())?;
        run_segment(&mut theta, c, cfg, |q, _| exec.states.push(q.clone()))?;
        exec.visits.push(symbol);
        exec.visit_end_states.push(theta.clone());
    }
    Ok(exec)
}
