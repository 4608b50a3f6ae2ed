//! Pipeline configuration: one JSON document with a section per stage.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::control::DemoConfig;
use crate::error::{Error, Result};
use crate::grounding::GroundingConfig;
use crate::net::{NetConfig, TrainConfig};
use crate::program::{ControllerLibrary, ControllerParams, ProgramAst, SymbolId};
use crate::smc::SmcConfig;
use crate::symbolize::SymbolizerConfig;
use crate::world::{ArmModel, CameraModel, JointState, Point2, Scene, SceneObject};

pub const DEFAULT_COLORS: [[f64; 3]; 5] = [
    [1.0, 0.0, 0.0],
    [0.0, 1.0, 0.0],
    [0.0, 0.0, 1.0],
    [1.0, 1.0, 0.0],
    [1.0, 0.0, 1.0],
];

/// Five blocks on a ring. Ids are placed in the order 3, 2, 1, 4, 0 around
/// it so the default patrol only ever moves between neighbours.
pub fn default_scene() -> Scene {
    let ring = [3u32, 2, 1, 4, 0];
    let center = Point2::new(0.0, 1.7);
    let radius = 0.9;
    let mut objects: Vec<SceneObject> = ring
        .iter()
        .enumerate()
        .map(|(k, &id)| {
            let a = std::f64::consts::FRAC_PI_2 - k as f64 * 2.0 * std::f64::consts::PI / 5.0;
            SceneObject {
                id,
                color: DEFAULT_COLORS[id as usize],
                center: Point2::new(center.x + radius * a.cos(), center.y + radius * a.sin()),
                half_extent: 0.25,
            }
        })
        .collect();
    objects.sort_by_key(|o| o.id);
    Scene { objects }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TaskConfig {
    /// Patrol explanation; the first entry is the start block.
    pub explanation: Vec<SymbolId>,
    pub steps: usize,
    /// Overrides the patrol with an explicit program in the text DSL.
    pub program: Option<String>,
    pub gain: f64,
    /// Shared IK seed for all block goals.
    pub ik_seed: Vec<f64>,
}

impl Default for TaskConfig {
    fn default() -> Self {
        TaskConfig {
            explanation: vec![3, 2, 1, 4, 0, 3],
            steps: 65,
            program: None,
            gain: 2.0,
            ik_seed: vec![0.6, 0.6, 0.6],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PriorKind {
    #[default]
    Attribution,
    Baseline,
}

impl PriorKind {
    pub fn name(self) -> &'static str {
        match self {
            PriorKind::Attribution => "attribution",
            PriorKind::Baseline => "baseline",
        }
    }
}

impl std::str::FromStr for PriorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "attribution" => Ok(PriorKind::Attribution),
            "baseline" => Ok(PriorKind::Baseline),
            other => Err(Error::Config(format!("unknown prior {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PriorConfig {
    pub kind: PriorKind,
    /// Candidates drawn before saliency resampling.
    pub pool: usize,
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig {
            kind: PriorKind::Attribution,
            pool: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    /// Rearranged scene; when absent the blocks are shuffled at random.
    pub scene: Option<Scene>,
    /// Minimum distance between block centers in random scenes.
    pub min_separation: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            scene: None,
            min_separation: 1.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub seeds: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { seeds: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub arm: ArmModel,
    pub camera: CameraModel,
    pub scene: Scene,
    pub task: TaskConfig,
    pub demo: DemoConfig,
    pub net: NetConfig,
    pub train: TrainConfig,
    pub smc: SmcConfig,
    pub prior: PriorConfig,
    pub symbolizer: SymbolizerConfig,
    pub grounding: GroundingConfig,
    pub synth: SynthConfig,
    pub eval: EvalConfig,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            seed: 0,
            arm: ArmModel::default(),
            camera: CameraModel::default(),
            scene: default_scene(),
            task: TaskConfig::default(),
            demo: DemoConfig::default(),
            net: NetConfig::default(),
            train: TrainConfig::default(),
            smc: SmcConfig::default(),
            prior: PriorConfig::default(),
            symbolizer: SymbolizerConfig::default(),
            grounding: GroundingConfig::default(),
            synth: SynthConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl Config {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Config = serde_json::from_str(text).map_err(|e| {
            Error::Config(format!("line {}, column {}: {e}", e.line(), e.column()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingInput(path.to_path_buf()));
        }
        Config::from_json(&std::fs::read_to_string(path)?)
            .map_err(|e| Error::Config(format!("{}: {}", path.display(), e.to_string().trim_start_matches("config error: "))))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |e: Error| Error::Config(e.to_string());
        self.arm.validate().map_err(cfg_err)?;
        self.camera.validate().map_err(cfg_err)?;
        self.scene.validate(&self.camera).map_err(cfg_err)?;
        self.smc.validate()?;
        self.symbolizer.peaks.validate()?;
        if self.task.ik_seed.len() != self.arm.joint_count() {
            return Err(Error::Config(format!(
                "task.ik_seed has {} entries for a {}-joint arm",
                self.task.ik_seed.len(),
                self.arm.joint_count()
            )));
        }
        if !(self.demo.dt > 0.0) || !(self.demo.convergence_eps > 0.0) {
            return Err(Error::Config("demo.dt and demo.convergence_eps must be positive".into()));
        }
        let dk = self.demo.dt * self.task.gain;
        if !(dk > 0.0 && dk < 2.0) {
            return Err(Error::Config(format!("demo.dt * task.gain = {dk} must lie in (0, 2)")));
        }
        if self.prior.pool == 0 {
            return Err(Error::Config("prior.pool must be positive".into()));
        }
        Ok(())
    }

    /// Ground-truth controllers: one per scene object, aimed at its center,
    /// indexed by object id.
    pub fn task_library(&self) -> Result<ControllerLibrary> {
        let seed = JointState(self.task.ik_seed.clone());
        let mut objects: Vec<&SceneObject> = self.scene.objects.iter().collect();
        objects.sort_by_key(|o| o.id);
        let mut controllers = Vec::with_capacity(objects.len());
        for (i, o) in objects.iter().enumerate() {
            if o.id as usize != i {
                return Err(Error::Config("scene object ids must be 0..n for the task library".into()));
            }
            let goal = self.arm.inverse_kinematics(o.center, &seed)?;
            controllers.push(ControllerParams::new(goal, self.task.gain)?);
        }
        Ok(ControllerLibrary::new(controllers))
    }

    pub fn task_program(&self) -> Result<ProgramAst> {
        match &self.task.program {
            Some(text) => ProgramAst::parse(text),
            None => Ok(ProgramAst::sequence(&crate::program::patrol_trace(
                &self.task.explanation,
                self.task.steps,
            ))),
        }
    }

    /// The arm starts converged on the first entry of the explanation (or
    /// on the IK seed when there is none).
    pub fn start_pose(&self, library: &ControllerLibrary) -> JointState {
        self.task
            .explanation
            .first()
            .and_then(|&s| library.get(s))
            .map(|c| c.goal.clone())
            .unwrap_or_else(|| JointState(self.task.ik_seed.clone()))
    }
}
