//! Stage functions shared by the command-line tool and the tests, plus the
//! on-disk formats that connect the stages.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{Config, PriorKind};
use crate::control::{execute_program, generate_demonstration, ControlSignal, Demonstration, Execution, Frame, Segment};
use crate::error::{Error, Result};
use crate::grounding::{extract_templates, reground_library, GroundedSymbol};
use crate::image::Image;
use crate::net::{train, LossCurve, MicroNet, Sample};
use crate::program::{ControllerLibrary, ProgramAst, SymbolId};
use crate::saliency::{PrecomputedSaliency, SaliencyProvider};
use crate::seed;
use crate::smc::{run_inference, AttributionPrior, BaselinePrior, GoalPrior, InferenceTrace};
use crate::stats::SummaryStats;
use crate::symbolize::{symbolize, SymbolTrace};
use crate::world::{JointState, Point2, Scene};

pub const DEMO_CSV: &str = "demo.csv";
pub const SEGMENTS_CSV: &str = "segments.csv";
pub const WEIGHTS: &str = "net.weights";
pub const LOSS_CSV: &str = "loss.csv";
pub const SYMBOLS_CSV: &str = "symbols.csv";
pub const LIBRARY_CSV: &str = "library.csv";
pub const PROGRAM_TXT: &str = "program.txt";
pub const TEMPLATES_DIR: &str = "templates";
pub const VISITS_CSV: &str = "visits.csv";
pub const TABLE1_CSV: &str = "table1.csv";

pub fn require(path: PathBuf) -> Result<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(Error::MissingInput(path))
    }
}

/// Ground-truth demonstration of the configured task.
pub fn generate(cfg: &Config) -> Result<(Demonstration, ControllerLibrary, ProgramAst)> {
    let library = cfg.task_library()?;
    let program = cfg.task_program()?;
    let theta0 = cfg.start_pose(&library);
    let demo = generate_demonstration(&program, &library, &theta0, &cfg.scene, &cfg.camera, &cfg.demo)?;
    Ok((demo, library, program))
}

/// Writes `demo.csv` (one row per frame), `segments.csv` and one PPM per
/// distinct frame image.
pub fn save_demo(demo: &Demonstration, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let joints = demo.joint_count();
    let mut csv = String::from("t");
    for j in 0..joints {
        csv.push_str(&format!(",theta_{j}"));
    }
    for j in 0..joints {
        csv.push_str(&format!(",u_{j}"));
    }
    csv.push_str(",image\n");
    let mut names: Vec<(*const Image, String)> = Vec::new();
    for (t, f) in demo.frames.iter().enumerate() {
        let ptr = Arc::as_ptr(&f.image);
        let name = match names.iter().find(|(p, _)| *p == ptr) {
            Some((_, n)) => n.clone(),
            None => {
                let n = format!("frame_{t:05}.ppm");
                f.image.save_ppm(&dir.join(&n))?;
                names.push((ptr, n.clone()));
                n
            }
        };
        csv.push_str(&t.to_string());
        for v in f.theta.iter().chain(f.control.iter()) {
            csv.push_str(&format!(",{v}"));
        }
        csv.push_str(&format!(",{name}\n"));
    }
    std::fs::write(dir.join(DEMO_CSV), csv)?;
    let mut seg = String::from("symbol,start,len\n");
    for s in &demo.segments {
        seg.push_str(&format!("{},{},{}\n", s.symbol, s.start, s.len));
    }
    std::fs::write(dir.join(SEGMENTS_CSV), seg)?;
    std::fs::write(dir.join("dt.txt"), format!("{}\n", demo.dt))?;
    Ok(())
}

pub fn load_demo(dir: &Path) -> Result<Demonstration> {
    let path = require(dir.join(DEMO_CSV))?;
    let text = std::fs::read_to_string(&path)?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::format(&path, "empty file"))?;
    let cols = header.split(',').count();
    if cols < 4 || (cols - 2) % 2 != 0 {
        return Err(Error::format(&path, "header must be t,theta_*,u_*,image"));
    }
    let joints = (cols - 2) / 2;
    let mut images: HashMap<String, Arc<Image>> = HashMap::new();
    let mut frames = Vec::new();
    for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let bad = |m: String| Error::format(&path, format!("line {}: {m}", i + 2));
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != cols {
            return Err(bad(format!("expected {cols} fields")));
        }
        let nums = fields[1..cols - 1]
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| bad(e.to_string()))?;
        let name = fields[cols - 1];
        let image = match images.get(name) {
            Some(img) => Arc::clone(img),
            None => {
                let img = Arc::new(Image::load_ppm(&require(dir.join(name))?)?);
                images.insert(name.to_string(), Arc::clone(&img));
                img
            }
        };
        frames.push(Frame {
            theta: JointState(nums[..joints].to_vec()),
            control: ControlSignal(nums[joints..].to_vec()),
            image,
        });
    }
    let mut segments = Vec::new();
    let seg_path = dir.join(SEGMENTS_CSV);
    if seg_path.exists() {
        for (i, line) in std::fs::read_to_string(&seg_path)?.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let v: Vec<usize> = line
                .split(',')
                .map(|f| f.trim().parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::format(&seg_path, format!("line {}: {e}", i + 1)))?;
            if v.len() != 3 {
                return Err(Error::format(&seg_path, format!("line {}: expected symbol,start,len", i + 1)));
            }
            segments.push(Segment {
                symbol: v[0] as SymbolId,
                start: v[1],
                len: v[2],
            });
        }
    }
    let dt_path = dir.join("dt.txt");
    let dt = if dt_path.exists() {
        std::fs::read_to_string(&dt_path)?
            .trim()
            .parse()
            .map_err(|_| Error::format(&dt_path, "expected a number"))?
    } else {
        crate::control::DemoConfig::default().dt
    };
    Ok(Demonstration { dt, frames, segments })
}

/// `(image, θ) → u` pairs from every frame.
pub fn training_samples(net: &MicroNet, demo: &Demonstration) -> Result<Vec<Sample>> {
    let mut cache: Vec<(*const Image, Vec<f64>)> = Vec::new();
    let mut out = Vec::with_capacity(demo.len());
    for f in &demo.frames {
        let ptr = Arc::as_ptr(&f.image);
        let pixels = match cache.iter().find(|(p, _)| *p == ptr) {
            Some((_, px)) => px.clone(),
            None => {
                let mut x = net.encode_input(&f.image, &f.theta)?;
                x.truncate(x.len() - f.theta.len());
                cache.push((ptr, x.clone()));
                x
            }
        };
        let mut input = pixels;
        input.extend_from_slice(&f.theta);
        out.push(Sample {
            input,
            target: f.control.0.clone(),
        });
    }
    Ok(out)
}

/// Trains the visuomotor network on a demonstration. Image weights start at
/// zero so only pixels that differ from the background ever acquire
/// sensitivity.
pub fn train_network(cfg: &Config, demo: &Demonstration) -> Result<(MicroNet, LossCurve)> {
    let mut net = MicroNet::new(&cfg.net, demo.joint_count(), seed::stage_seed(cfg.seed, "net-init"))?;
    net.zero_image_weights();
    let data = training_samples(&net, demo)?;
    let curve = train(&mut net, &data, &cfg.train, seed::stage_seed(cfg.seed, "train"))?;
    Ok((net, curve))
}

/// Runs the particle filter with the chosen prior.
pub fn infer(
    cfg: &Config,
    demo: &Demonstration,
    saliency: Option<&dyn SaliencyProvider>,
    kind: PriorKind,
    seed: u64,
) -> Result<InferenceTrace> {
    let attribution;
    let baseline;
    let prior: &dyn GoalPrior = match kind {
        PriorKind::Attribution => {
            let saliency =
                saliency.ok_or_else(|| Error::invalid("the attribution prior needs a saliency provider"))?;
            attribution = AttributionPrior {
                saliency,
                arm: &cfg.arm,
                camera: &cfg.camera,
                window: cfg.smc.window,
                pool: cfg.prior.pool,
                jitter: cfg.smc.goal_jitter,
            };
            &attribution
        }
        PriorKind::Baseline => {
            baseline = BaselinePrior {
                window: cfg.smc.window,
                jitter: cfg.smc.goal_jitter,
            };
            &baseline
        }
    };
    run_inference(demo, &cfg.smc, prior, seed)
}

/// Inference seed for repetition `rep` of the evaluation.
pub fn inference_seed(cfg: &Config, rep: u64) -> u64 {
    seed::combine(seed::stage_seed(cfg.seed, "infer"), rep)
}

#[derive(Debug, Clone)]
pub struct Induction {
    pub trace: InferenceTrace,
    pub library: ControllerLibrary,
    pub symbols: SymbolTrace,
    pub program: ProgramAst,
}

/// Inference, symbolization and program induction in one go.
pub fn demo_to_program(
    cfg: &Config,
    demo: &Demonstration,
    saliency: Option<&dyn SaliencyProvider>,
    kind: PriorKind,
) -> Result<Induction> {
    let trace = infer(cfg, demo, saliency, kind, inference_seed(cfg, 0))?;
    let (library, symbols) = symbolize(&trace, cfg.smc.particles, &cfg.symbolizer)?;
    let program = crate::induce::induce_program(&symbols.symbols);
    Ok(Induction {
        trace,
        library,
        symbols,
        program,
    })
}

/// Block each controller aims at: the object nearest its goal's end-effector
/// position.
pub fn controller_targets(library: &ControllerLibrary, cfg: &Config, scene: &Scene) -> Result<Vec<u32>> {
    library
        .controllers()
        .iter()
        .map(|c| {
            let p = cfg.arm.forward_kinematics(&c.goal)?;
            scene
                .nearest_object(p)
                .map(|o| o.id)
                .ok_or_else(|| Error::invalid("scene has no objects"))
        })
        .collect()
}

/// Moves every block of `base` to a random position that the arm can reach,
/// that keeps a full template patch inside the image, and that is at least
/// `min_separation` from every other block.
pub fn random_scene(cfg: &Config, base: &Scene, rng: &mut ChaCha8Rng) -> Result<Scene> {
    let cam = &cfg.camera;
    let margin_px = cfg.grounding.patch_size as f64 / 2.0 + 1.0;
    let (w, h) = cam.image_size;
    let lo = cam.unproject(Point2::new(margin_px, h as f64 - margin_px));
    let hi = cam.unproject(Point2::new(w as f64 - margin_px, margin_px));
    let base_pos = cfg.arm.base_position;
    let max_r = cfg.arm.reach() * 0.9;
    let min_r = (cfg.arm.min_reach() + 0.3).max(0.8);
    for _attempt in 0..1000 {
        let mut placed: Vec<Point2> = Vec::new();
        for _ in &base.objects {
            let mut found = None;
            for _ in 0..1000 {
                let p = Point2::new(rng.gen_range(lo.x..hi.x), rng.gen_range(lo.y.max(base_pos.y + 0.2)..hi.y));
                let r = p.distance(base_pos);
                if r < min_r || r > max_r {
                    continue;
                }
                if placed.iter().all(|q| q.distance(p) >= cfg.synth.min_separation) {
                    found = Some(p);
                    break;
                }
            }
            match found {
                Some(p) => placed.push(p),
                None => break,
            }
        }
        if placed.len() == base.objects.len() {
            let mut scene = base.clone();
            for (o, p) in scene.objects.iter_mut().zip(placed) {
                o.center = p;
            }
            return Ok(scene);
        }
    }
    Err(Error::invalid("could not place blocks with the requested separation"))
}

#[derive(Debug, Clone, Serialize)]
pub struct Visit {
    pub symbol: SymbolId,
    pub end_effector: Point2,
    pub object: u32,
}

#[derive(Debug, Clone)]
pub struct Synthesis {
    pub library: ControllerLibrary,
    pub execution: Execution,
    pub visits: Vec<Visit>,
}

/// Regrounds `library` in `scene` and executes `program` there.
pub fn synthesize(
    cfg: &Config,
    program: &ProgramAst,
    library: &ControllerLibrary,
    templates: &[GroundedSymbol],
    scene: &Scene,
) -> Result<Synthesis> {
    let image = scene.render(&cfg.camera);
    let regrounded = reground_library(templates, library, &image, &cfg.camera, &cfg.arm, &cfg.grounding)?;
    let first = program
        .expand()
        .first()
        .and_then(|&s| regrounded.get(s))
        .map(|c| c.goal.clone())
        .unwrap_or_else(|| JointState(cfg.task.ik_seed.clone()));
    let execution = execute_program(program, &regrounded, &first, &cfg.demo)?;
    let visits = execution
        .visits
        .iter()
        .zip(&execution.visit_end_states)
        .map(|(&symbol, theta)| {
            let p = cfg.arm.forward_kinematics(theta)?;
            let object = scene.nearest_object(p).map_or(u32::MAX, |o| o.id);
            Ok(Visit {
                symbol,
                end_effector: p,
                object,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Synthesis {
        library: regrounded,
        execution,
        visits,
    })
}

pub fn visits_to_csv(visits: &[Visit]) -> String {
    let mut s = String::from("step,symbol,x,y,object\n");
    for (i, v) in visits.iter().enumerate() {
        s.push_str(&format!(
            "{i},{},{},{},{}\n",
            v.symbol, v.end_effector.x, v.end_effector.y, v.object
        ));
    }
    s
}

pub fn templates_for(cfg: &Config, demo: &Demonstration, library: &ControllerLibrary) -> Result<Vec<GroundedSymbol>> {
    extract_templates(demo, library, &cfg.camera, &cfg.arm, &cfg.grounding)
}

#[derive(Debug, Clone, Serialize)]
pub struct Table1 {
    pub attribution: SummaryStats,
    pub baseline: SummaryStats,
    pub per_seed: Vec<(u64, SummaryStats, SummaryStats)>,
    pub particles: usize,
}

impl Table1 {
    /// Seeds on which the attribution prior beats the baseline on both the
    /// mean and the interquartile range of N_eff.
    pub fn directional_wins(&self) -> usize {
        self.per_seed
            .iter()
            .filter(|(_, a, b)| a.mean > b.mean && a.iqr > b.iqr)
            .count()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("statistic,mean,max,min,iqr\n");
        for (name, st) in [("attribution", &self.attribution), ("baseline", &self.baseline)] {
            s.push_str(&format!(
                "{name} (N={}),{:.4},{:.4},{:.4},{:.4}\n",
                self.particles, st.mean, st.max, st.min, st.iqr
            ));
        }
        s
    }

    pub fn per_seed_csv(&self) -> String {
        let mut s = String::from("seed,prior,mean,max,min,iqr\n");
        for (seed, a, b) in &self.per_seed {
            for (name, st) in [("attribution", a), ("baseline", b)] {
                s.push_str(&format!("{seed},{name},{},{},{},{}\n", st.mean, st.max, st.min, st.iqr));
            }
        }
        s
    }
}

/// N_eff statistics of both priors over `seeds` inference seeds on one
/// demonstration.
pub fn eval_table1(cfg: &Config, demo: &Demonstration, saliency: &dyn SaliencyProvider, seeds: usize) -> Result<Table1> {
    if seeds < 2 {
        return Err(Error::Statistics(format!("need at least 2 seeds, got {seeds}")));
    }
    let mut per_seed = Vec::with_capacity(seeds);
    for rep in 0..seeds as u64 {
        let s = inference_seed(cfg, rep);
        let a = infer(cfg, demo, Some(saliency), PriorKind::Attribution, s)?.stats()?;
        let b = infer(cfg, demo, None, PriorKind::Baseline, s)?.stats()?;
        per_seed.push((rep, a, b));
    }
    let attribution = SummaryStats::average(&per_seed.iter().map(|p| p.1).collect::<Vec<_>>())?;
    let baseline = SummaryStats::average(&per_seed.iter().map(|p| p.2).collect::<Vec<_>>())?;
    Ok(Table1 {
        attribution,
        baseline,
        per_seed,
        particles: cfg.smc.particles,
    })
}

/// Saliency of a trained network over the demonstration.
pub fn network_saliency(net: &MicroNet, demo: &Demonstration) -> Result<PrecomputedSaliency> {
    PrecomputedSaliency::from_network(net, demo)
}
