//! Sequential importance sampling with resampling under the switching
//! proportional-controller model.
//!
//! Each particle carries a controller hypothesis `(θ_d, K_p)`. At every
//! demonstration step a fixed share of particles continues (Gaussian jitter on
//! goal and gain) while the rest switch to a goal drawn from a goal prior.
//! Particles are weighted by the likelihood of the observed joint velocity,
//! summarised by their effective sample size, and resampled systematically.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::control::{ControlSignal, Demonstration};
use crate::error::{check_dim, Error, Result};
use crate::program::ControllerParams;
use crate::saliency::{SaliencyMap, SaliencyProvider};
use crate::seed;
use crate::stats::SummaryStats;
use crate::world::{ArmModel, CameraModel, JointState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SmcConfig {
    /// Probability of a controller switch per step.
    pub p_switch: f64,
    /// Goal jitter std per joint (rad).
    pub goal_jitter: f64,
    /// Gain jitter std (1/s).
    pub gain_jitter: f64,
    /// Control noise std per joint (rad/s).
    pub control_noise: f64,
    pub particles: usize,
    /// Number of future demonstration states the goal prior draws from.
    pub window: usize,
    pub gain_floor: f64,
    /// Initial gains are uniform on this interval.
    pub initial_gain: [f64; 2],
    /// Draw the switch decision per particle instead of the fixed split.
    pub stochastic_switch: bool,
}

impl Default for SmcConfig {
    fn default() -> Self {
        SmcConfig {
            p_switch: 0.1,
            goal_jitter: 0.003,
            gain_jitter: 0.02,
            control_noise: 0.05,
            particles: 50,
            window: 100,
            gain_floor: 0.05,
            initial_gain: [0.5, 4.0],
            stochastic_switch: false,
        }
    }
}

impl SmcConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("goal_jitter", self.goal_jitter),
            ("gain_jitter", self.gain_jitter),
            ("control_noise", self.control_noise),
            ("gain_floor", self.gain_floor),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("smc.{name} must be positive")));
            }
        }
        if !(self.p_switch > 0.0 && self.p_switch < 1.0) {
            return Err(Error::Config("smc.p_switch must lie in (0, 1)".into()));
        }
        if self.particles < 2 {
            return Err(Error::Config("smc.particles must be at least 2".into()));
        }
        if self.window < 1 {
            return Err(Error::Config("smc.window must be at least 1".into()));
        }
        let [lo, hi] = self.initial_gain;
        if !(lo > 0.0 && hi >= lo) {
            return Err(Error::Config("smc.initial_gain must be a positive interval".into()));
        }
        Ok(())
    }

    /// Particles that continue their controller under the fixed split.
    pub fn continuing(&self) -> usize {
        ((1.0 - self.p_switch) * self.particles as f64).ceil() as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Particle {
    pub params: ControllerParams,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSet {
    pub particles: Vec<Particle>,
    pub normalized: bool,
}

impl ParticleSet {
    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.particles.iter().map(|p| p.weight).collect()
    }

    /// Highest-weight particle; ties go to the lowest index.
    pub fn map_params(&self) -> &ControllerParams {
        let mut best = 0;
        for (i, p) in self.particles.iter().enumerate() {
            if p.weight > self.particles[best].weight {
                best = i;
            }
        }
        &self.particles[best].params
    }
}

/// Log density of `u_obs` under an isotropic Gaussian with mean
/// `K_p (θ_d − θ)` and per-joint std `r`.
pub fn control_log_likelihood(
    u_obs: &ControlSignal,
    theta: &JointState,
    params: &ControllerParams,
    r: f64,
) -> Result<f64> {
    check_dim(theta.len(), u_obs.len())?;
    check_dim(theta.len(), params.goal.len())?;
    let j = theta.len() as f64;
    let mut sq = 0.0;
    for ((u, q), g) in u_obs.iter().zip(theta.iter()).zip(params.goal.iter()) {
        let resid = u - params.gain * (g - q);
        sq += resid * resid;
    }
    Ok(-0.5 * j * (2.0 * std::f64::consts::PI * r * r).ln() - sq / (2.0 * r * r))
}

pub fn control_likelihood(
    u_obs: &ControlSignal,
    theta: &JointState,
    params: &ControllerParams,
    r: f64,
) -> Result<f64> {
    Ok(control_log_likelihood(u_obs, theta, params, r)?.exp())
}

/// `1 / Σ w²` for normalised weights, evaluated as `N / (1 + N·Σ(w − 1/N)²)`
/// so that uniform weights give exactly `N`. The result is clamped to
/// `[1, N]` against rounding.
pub fn effective_sample_size(weights: &[f64]) -> Result<f64> {
    if weights.is_empty() {
        return Err(Error::invalid("no weights"));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::Unnormalized(f64::NAN));
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Unnormalized(sum));
    }
    let n = weights.len() as f64;
    if weights.iter().filter(|&&w| w > 0.0).count() == 1 {
        return Ok(1.0);
    }
    let mean = 1.0 / n;
    let spread: f64 = weights.iter().map(|w| (w - mean) * (w - mean)).sum();
    Ok((n / (1.0 + n * spread)).clamp(1.0, n))
}

/// Goals proposed by a switching prior.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorDraw {
    pub goals: Vec<JointState>,
    /// Demonstration frames the goals were taken from (before jitter).
    pub sources: Vec<usize>,
    /// Saliency was zero over the whole window; goals were drawn uniformly.
    pub fallback: bool,
}

/// Source of switching goals.
pub trait GoalPrior: Sync {
    fn sample(&self, demo: &Demonstration, t: usize, count: usize, rng: &mut ChaCha8Rng) -> Result<PriorDraw>;
}

fn window_range(demo: &Demonstration, t: usize, window: usize) -> Result<(usize, usize)> {
    if t >= demo.len() {
        return Err(Error::invalid(format!("timestep {t} outside demonstration of length {}", demo.len())));
    }
    Ok((t, (t + window).min(demo.len() - 1)))
}

fn jittered(theta: &JointState, std: f64, rng: &mut ChaCha8Rng) -> JointState {
    let normal = Normal::new(0.0, std).expect("positive std");
    JointState(theta.iter().map(|q| q + normal.sample(rng)).collect())
}

/// Draws `pool` frames uniformly from `θ(t) … θ(t+window)`, weights each by
/// the saliency at its projected end-effector pixel, resamples `count` of
/// them in proportion and jitters the result.
#[allow(clippy::too_many_arguments)]
pub fn attribution_prior_sample(
    demo: &Demonstration,
    t: usize,
    saliency: &SaliencyMap,
    arm: &ArmModel,
    camera: &CameraModel,
    window: usize,
    pool: usize,
    count: usize,
    jitter: f64,
    rng: &mut ChaCha8Rng,
) -> Result<PriorDraw> {
    let (lo, hi) = window_range(demo, t, window)?;
    let (w, h) = camera.image_size;
    let candidates: Vec<usize> = (0..pool.max(1)).map(|_| rng.gen_range(lo..=hi)).collect();
    let mut weights = Vec::with_capacity(candidates.len());
    for &i in &candidates {
        let p = arm.forward_kinematics(&demo.frames[i].theta)?;
        let px = camera.clamp(camera.project(p));
        weights.push(saliency.sample_image_pixel(px, w, h));
    }
    let total: f64 = weights.iter().sum();
    let (sources, fallback) = if total > 0.0 {
        let mut cumulative = Vec::with_capacity(weights.len());
        let mut acc = 0.0;
        for wgt in &weights {
            acc += wgt / total;
            cumulative.push(acc);
        }
        let sources: Vec<usize> = (0..count)
            .map(|_| {
                let u: f64 = rng.gen();
                let k = cumulative.partition_point(|&c| c <= u).min(candidates.len() - 1);
                candidates[k]
            })
            .collect();
        (sources, false)
    } else {
        ((0..count).map(|_| rng.gen_range(lo..=hi)).collect(), true)
    };
    let goals = sources
        .iter()
        .map(|&i| jittered(&demo.frames[i].theta, jitter, rng))
        .collect();
    Ok(PriorDraw {
        goals,
        sources,
        fallback,
    })
}

/// Saliency-weighted goal prior.
pub struct AttributionPrior<'a> {
    pub saliency: &'a dyn SaliencyProvider,
    pub arm: &'a ArmModel,
    pub camera: &'a CameraModel,
    pub window: usize,
    /// Candidates drawn from the window before saliency resampling.
    pub pool: usize,
    pub jitter: f64,
}

impl GoalPrior for AttributionPrior<'_> {
    fn sample(&self, demo: &Demonstration, t: usize, count: usize, rng: &mut ChaCha8Rng) -> Result<PriorDraw> {
        let map = self.saliency.saliency_at(t);
        attribution_prior_sample(
            demo,
            t,
            &map,
            self.arm,
            self.camera,
            self.window,
            self.pool,
            count,
            self.jitter,
            rng,
        )
    }
}

/// Direct uniform draw from the future window.
pub struct BaselinePrior {
    pub window: usize,
    pub jitter: f64,
}

impl GoalPrior for BaselinePrior {
    fn sample(&self, demo: &Demonstration, t: usize, count: usize, rng: &mut ChaCha8Rng) -> Result<PriorDraw> {
        let (lo, hi) = window_range(demo, t, self.window)?;
        let sources: Vec<usize> = (0..count).map(|_| rng.gen_range(lo..=hi)).collect();
        let goals = sources
            .iter()
            .map(|&i| jittered(&demo.frames[i].theta, self.jitter, rng))
            .collect();
        Ok(PriorDraw {
            goals,
            sources,
            fallback: false,
        })
    }
}

/// Output of one filter step.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    /// Weighted particles before resampling.
    pub weighted: ParticleSet,
    /// Equally weighted particles after systematic resampling.
    pub resampled: ParticleSet,
    pub n_eff: f64,
    pub map: ControllerParams,
    pub prior_fallback: bool,
}

fn is_switching(k: usize, n: usize, switching: usize) -> bool {
    // stratified: switchers are spread evenly over the particle indices
    (k + 1) * switching / n > k * switching / n
}

/// One propagate–weight–resample step at demonstration time `t`.
pub fn sis_step(
    prev: &ParticleSet,
    demo: &Demonstration,
    t: usize,
    cfg: &SmcConfig,
    prior: &dyn GoalPrior,
    step_seed: u64,
) -> Result<StepOutcome> {
    let n = cfg.particles;
    check_dim(n, prev.len())?;
    let frame = demo
        .frames
        .get(t)
        .ok_or_else(|| Error::invalid(format!("timestep {t} outside demonstration")))?;
    let mut step_rng = seed::rng(step_seed);

    let switching: Vec<bool> = if cfg.stochastic_switch {
        (0..n)
            .map(|k| seed::rng(seed::combine(step_seed, k as u64 ^ 0x5157)).gen::<f64>() < cfg.p_switch)
            .collect()
    } else {
        let s = n - cfg.continuing().min(n);
        (0..n).map(|k| is_switching(k, n, s)).collect()
    };
    let n_switch = switching.iter().filter(|&&s| s).count();
    let draw = prior.sample(demo, t, n_switch, &mut step_rng)?;
    let mut new_goals = draw.goals.into_iter();
    let assigned: Vec<Option<JointState>> = switching
        .iter()
        .map(|&s| if s { new_goals.next() } else { None })
        .collect();

    let goal_noise = Normal::new(0.0, cfg.goal_jitter).expect("validated");
    let gain_noise = Normal::new(0.0, cfg.gain_jitter).expect("validated");
    let proposals: Vec<Result<(ControllerParams, f64)>> = prev
        .particles
        .par_iter()
        .zip(assigned.into_par_iter())
        .enumerate()
        .map(|(k, (parent, switch_goal))| {
            let mut rng = seed::rng(seed::combine(step_seed, k as u64));
            let goal = match switch_goal {
                Some(g) => g,
                None => JointState(
                    parent
                        .params
                        .goal
                        .iter()
                        .map(|q| q + goal_noise.sample(&mut rng))
                        .collect(),
                ),
            };
            let gain = (parent.params.gain + gain_noise.sample(&mut rng)).max(cfg.gain_floor);
            let params = ControllerParams { goal, gain };
            let ll = control_log_likelihood(&frame.control, &frame.theta, &params, cfg.control_noise)?;
            Ok((params, ll))
        })
        .collect();
    let proposals = proposals.into_iter().collect::<Result<Vec<_>>>()?;

    // normalise in the log domain
    let max_ll = proposals
        .iter()
        .map(|(_, ll)| *ll)
        .filter(|ll| !ll.is_nan())
        .fold(f64::NEG_INFINITY, f64::max);
    if !max_ll.is_finite() {
        return Err(Error::DegenerateWeights { timestep: t });
    }
    let raw: Vec<f64> = proposals
        .iter()
        .map(|(_, ll)| if ll.is_nan() { 0.0 } else { (ll - max_ll).exp() })
        .collect();
    let total: f64 = raw.iter().sum();
    let particles: Vec<Particle> = proposals
        .into_iter()
        .zip(&raw)
        .map(|((params, _), w)| Particle {
            params,
            weight: w / total,
        })
        .collect();
    let weighted = ParticleSet {
        particles,
        normalized: true,
    };
    let n_eff = effective_sample_size(&weighted.weights())?;
    let map = weighted.map_params().clone();
    let resampled = systematic_resample(&weighted, step_rng.gen::<f64>());
    Ok(StepOutcome {
        weighted,
        resampled,
        n_eff,
        map,
        prior_fallback: draw.fallback,
    })
}

/// Low-variance resampling with a single offset `u ∈ [0, 1)`.
pub fn systematic_resample(set: &ParticleSet, u: f64) -> ParticleSet {
    let n = set.len();
    let step = 1.0 / n as f64;
    let mut out = Vec::with_capacity(n);
    let mut i = 0;
    let mut cumulative = set.particles[0].weight;
    for m in 0..n {
        let target = (u + m as f64) * step;
        while cumulative < target && i + 1 < n {
            i += 1;
            cumulative += set.particles[i].weight;
        }
        out.push(Particle {
            params: set.particles[i].params.clone(),
            weight: step,
        });
    }
    ParticleSet {
        particles: out,
        normalized: true,
    }
}

#[derive(Debug, Clone)]
pub struct InferenceStep {
    /// Weighted particles before resampling; absent when loaded from CSV.
    pub snapshot: Option<ParticleSet>,
    pub n_eff: f64,
    pub map: ControllerParams,
    pub prior_fallback: bool,
}

#[derive(Debug, Clone, Default)]
pub struct InferenceTrace {
    pub steps: Vec<InferenceStep>,
}

impl InferenceTrace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn n_eff(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.n_eff).collect()
    }

    pub fn stats(&self) -> Result<SummaryStats> {
        SummaryStats::of(&self.n_eff())
    }

    /// `t,n_eff,goal_0..goal_{J-1},gain`
    pub fn to_csv(&self) -> String {
        let joints = self.steps.first().map_or(0, |s| s.map.goal.len());
        let mut s = String::from("t,n_eff");
        for j in 0..joints {
            s.push_str(&format!(",goal_{j}"));
        }
        s.push_str(",gain\n");
        for (t, step) in self.steps.iter().enumerate() {
            s.push_str(&format!("{t},{}", step.n_eff));
            for g in step.map.goal.iter() {
                s.push_str(&format!(",{g}"));
            }
            s.push_str(&format!(",{}\n", step.map.gain));
        }
        s
    }

    pub fn from_csv(text: &str, origin: &std::path::Path) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::format(origin, "empty trace file"))?;
        let cols = header.split(',').count();
        if cols < 4 {
            return Err(Error::format(origin, "trace header has too few columns"));
        }
        let mut steps = Vec::new();
        for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let vals = line
                .split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::format(origin, format!("line {}: {e}", i + 2)))?;
            if vals.len() != cols {
                return Err(Error::format(origin, format!("line {}: expected {cols} fields", i + 2)));
            }
            steps.push(InferenceStep {
                snapshot: None,
                n_eff: vals[1],
                map: ControllerParams {
                    goal: JointState(vals[2..cols - 1].to_vec()),
                    gain: vals[cols - 1],
                },
                prior_fallback: false,
            });
        }
        Ok(InferenceTrace { steps })
    }
}

/// Filters the whole demonstration. Bit-reproducible for a given `seed`
/// regardless of the rayon pool size.
pub fn run_inference(
    demo: &Demonstration,
    cfg: &SmcConfig,
    prior: &dyn GoalPrior,
    seed: u64,
) -> Result<InferenceTrace> {
    cfg.validate()?;
    if demo.is_empty() {
        return Err(Error::invalid("cannot run inference on an empty demonstration"));
    }
    let mut init_rng = seed::rng(seed::combine(seed, u64::MAX));
    let init = prior.sample(demo, 0, cfg.particles, &mut init_rng)?;
    let [lo, hi] = cfg.initial_gain;
    let mut set = ParticleSet {
        particles: init
            .goals
            .into_iter()
            .map(|goal| Particle {
                params: ControllerParams {
                    goal,
                    gain: if hi > lo { init_rng.gen_range(lo..hi) } else { lo },
                },
                weight: 1.0 / cfg.particles as f64,
            })
            .collect(),
        normalized: true,
    };
    let mut steps = Vec::with_capacity(demo.len());
    for t in 0..demo.len() {
        let out = sis_step(&set, demo, t, cfg, prior, seed::combine(seed, t as u64))?;
        steps.push(InferenceStep {
            snapshot: Some(out.weighted),
            n_eff: out.n_eff,
            map: out.map,
            prior_fallback: out.prior_fallback,
        });
        set = out.resampled;
    }
    Ok(InferenceTrace { steps })
}
