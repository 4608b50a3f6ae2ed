//! Symbol grounding by template matching: each controller is bound to the
//! image patch around its goal, and goals in a new scene are recovered by
//! normalized cross-correlation followed by inverse kinematics.

use std::path::Path;

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::control::Demonstration;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::program::{ControllerLibrary, SymbolId};
use crate::world::{ArmModel, CameraModel, JointState, Point2};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GroundingConfig {
    pub patch_size: usize,
    pub match_threshold: f64,
    /// Minimum pixel standard deviation of a usable template.
    pub min_template_std: f64,
}

impl Default for GroundingConfig {
    fn default() -> Self {
        GroundingConfig {
            patch_size: 32,
            match_threshold: 0.7,
            min_template_std: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundedSymbol {
    pub symbol: SymbolId,
    pub template: Image,
    pub demo_goal: JointState,
    /// Top-left corner of the crop in the source frame.
    pub crop_origin: (usize, usize),
    /// Projected goal relative to `crop_origin`.
    pub goal_offset: Point2,
}

fn crop_start(center: f64, size: usize, limit: usize) -> usize {
    let start = center.round() as i64 - (size / 2) as i64;
    start.clamp(0, (limit - size) as i64) as usize
}

/// Crops a template around every controller goal from the frame in which the
/// arm is closest to that goal.
pub fn extract_templates(
    demo: &Demonstration,
    library: &ControllerLibrary,
    camera: &CameraModel,
    arm: &ArmModel,
    cfg: &GroundingConfig,
) -> Result<Vec<GroundedSymbol>> {
    if library.is_empty() {
        return Err(Error::invalid("cannot ground an empty library"));
    }
    if demo.is_empty() {
        return Err(Error::invalid("cannot ground from an empty demonstration"));
    }
    let (w, h) = camera.image_size;
    let size = cfg.patch_size;
    if size == 0 || size > w || size > h {
        return Err(Error::Config(format!("patch size {size} does not fit a {w}x{h} image")));
    }
    library
        .iter()
        .map(|(symbol, c)| {
            let fail = |reason: String| Error::GroundingFailure { symbol, reason };
            let px = camera.project(arm.forward_kinematics(&c.goal)?);
            if !camera.in_bounds(px) {
                return Err(fail(format!("goal projects to ({:.1}, {:.1}), outside the image", px.x, px.y)));
            }
            let frame = demo
                .frames
                .iter()
                .min_by(|a, b| a.theta.distance(&c.goal).total_cmp(&b.theta.distance(&c.goal)))
                .expect("non-empty demonstration");
            let x0 = crop_start(px.x, size, w);
            let y0 = crop_start(px.y, size, h);
            let template = frame.image.crop(x0, y0, size, size)?;
            if template.std_dev() <= cfg.min_template_std {
                return Err(fail("template is uniform".into()));
            }
            Ok(GroundedSymbol {
                symbol,
                template,
                demo_goal: c.goal.clone(),
                crop_origin: (x0, y0),
                goal_offset: Point2::new(px.x - x0 as f64, px.y - y0 as f64),
            })
        })
        .collect()
}

fn fft2(data: &mut [Complex<f64>], w: usize, h: usize, planner: &mut FftPlanner<f64>, inverse: bool) {
    let row = if inverse { planner.plan_fft_inverse(w) } else { planner.plan_fft_forward(w) };
    row.process(data);
    let col = if inverse { planner.plan_fft_inverse(h) } else { planner.plan_fft_forward(h) };
    let mut column = vec![Complex::new(0.0, 0.0); h];
    for x in 0..w {
        for y in 0..h {
            column[y] = data[y * w + x];
        }
        col.process(&mut column);
        for y in 0..h {
            data[y * w + x] = column[y];
        }
    }
}

/// Summed-area table with a zero first row and column.
fn integral(values: impl Iterator<Item = f64>, w: usize, h: usize) -> Vec<f64> {
    let mut s = vec![0.0; (w + 1) * (h + 1)];
    let mut it = values;
    for y in 0..h {
        let mut row = 0.0;
        for x in 0..w {
            row += it.next().expect("value per pixel");
            s[(y + 1) * (w + 1) + x + 1] = s[y * (w + 1) + x + 1] + row;
        }
    }
    s
}

fn box_sum(s: &[f64], w: usize, x: usize, y: usize, bw: usize, bh: usize) -> f64 {
    let stride = w + 1;
    s[(y + bh) * stride + x + bw] - s[y * stride + x + bw] - s[(y + bh) * stride + x] + s[y * stride + x]
}

/// Normalized cross-correlation over all placements of `template` fully
/// inside `image`, pooling the three channels. Returns a row-major map of
/// `(W - w + 1) × (H - h + 1)` scores; windows with no variance score 0.
pub fn ncc_map(image: &Image, template: &Image) -> Result<(usize, usize, Vec<f64>)> {
    let (w, h) = (image.width(), image.height());
    let (tw, th) = (template.width(), template.height());
    if tw == 0 || th == 0 || tw > w || th > h {
        return Err(Error::invalid(format!("template {tw}x{th} does not fit image {w}x{h}")));
    }
    let n = (tw * th * 3) as f64;
    let t_mean = template.data().iter().sum::<f64>() / n;
    let t_norm = template.data().iter().map(|v| (v - t_mean).powi(2)).sum::<f64>().sqrt();

    let mut planner = FftPlanner::new();
    let mut numer = vec![Complex::new(0.0, 0.0); w * h];
    for c in 0..3 {
        let mut img: Vec<Complex<f64>> = (0..w * h)
            .map(|i| Complex::new(image.data()[i * 3 + c], 0.0))
            .collect();
        let mut tpl = vec![Complex::new(0.0, 0.0); w * h];
        for y in 0..th {
            for x in 0..tw {
                tpl[y * w + x] = Complex::new(template.data()[(y * tw + x) * 3 + c] - t_mean, 0.0);
            }
        }
        fft2(&mut img, w, h, &mut planner, false);
        fft2(&mut tpl, w, h, &mut planner, false);
        for ((acc, a), b) in numer.iter_mut().zip(&img).zip(&tpl) {
            *acc += a * b.conj();
        }
    }
    fft2(&mut numer, w, h, &mut planner, true);
    let scale = 1.0 / (w * h) as f64;

    let pixel_sum = |i: usize| image.data()[i * 3..i * 3 + 3].iter().sum::<f64>();
    let pixel_sq = |i: usize| image.data()[i * 3..i * 3 + 3].iter().map(|v| v * v).sum::<f64>();
    let s1 = integral((0..w * h).map(pixel_sum), w, h);
    let s2 = integral((0..w * h).map(pixel_sq), w, h);

    let (ow, oh) = (w - tw + 1, h - th + 1);
    let mut scores = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            let sum = box_sum(&s1, w, x, y, tw, th);
            let sq = box_sum(&s2, w, x, y, tw, th);
            let var = (sq - sum * sum / n).max(0.0);
            let denom = var.sqrt() * t_norm;
            // relative floor so rounding noise on flat windows reads as flat
            if denom > 1e-9 * n {
                scores[y * ow + x] = (numer[y * w + x].re * scale / denom).clamp(-1.0, 1.0);
            }
        }
    }
    Ok((ow, oh, scores))
}

/// Best placement `(x, y, score)`; ties go to the first in row-major order.
pub fn best_match(image: &Image, template: &Image) -> Result<(usize, usize, f64)> {
    let (ow, _, scores) = ncc_map(image, template)?;
    let (i, s) = scores
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, &s)| if s > acc.1 { (i, s) } else { acc });
    Ok((i % ow, i / ow, s))
}

/// Locates the symbol's template in `image` and solves for the joint angles
/// reaching the matched goal point, seeded from `seed`.
pub fn predict_goal(
    symbol: &GroundedSymbol,
    image: &Image,
    camera: &CameraModel,
    arm: &ArmModel,
    seed: &JointState,
    cfg: &GroundingConfig,
) -> Result<JointState> {
    let (x, y, score) = best_match(image, &symbol.template)?;
    if !(score >= cfg.match_threshold) {
        return Err(Error::MatchNotFound {
            symbol: symbol.symbol,
            score,
        });
    }
    let px = Point2::new(x as f64 + symbol.goal_offset.x, y as f64 + symbol.goal_offset.y);
    arm.inverse_kinematics(camera.unproject(px), seed)
}

/// Replaces every goal of `library` by its prediction in `image`, keeping
/// gains and ids. Fails with the full list of symbols that could not be
/// grounded.
pub fn reground_library(
    symbols: &[GroundedSymbol],
    library: &ControllerLibrary,
    image: &Image,
    camera: &CameraModel,
    arm: &ArmModel,
    cfg: &GroundingConfig,
) -> Result<ControllerLibrary> {
    let predictions: Vec<(SymbolId, Result<JointState>)> = symbols
        .par_iter()
        .map(|s| (s.symbol, predict_goal(s, image, camera, arm, &s.demo_goal, cfg)))
        .collect();
    let mut out = library.clone();
    let mut failed = Vec::new();
    for (id, prediction) in predictions {
        match (prediction, out.controllers_mut().get_mut(id as usize)) {
            (Ok(goal), Some(c)) => c.goal = goal,
            _ => failed.push(id),
        }
    }
    let grounded: Vec<SymbolId> = symbols.iter().map(|s| s.symbol).collect();
    failed.extend((0..library.len() as SymbolId).filter(|id| !grounded.contains(id)));
    failed.sort_unstable();
    failed.dedup();
    if failed.is_empty() {
        Ok(out)
    } else {
        Err(Error::PartialGrounding(failed))
    }
}

/// Writes `template_<id>.ppm` files and a `templates.csv` manifest.
pub fn save_templates(symbols: &[GroundedSymbol], dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let joints = symbols.first().map_or(0, |s| s.demo_goal.len());
    let mut manifest = String::from("symbol");
    for j in 0..joints {
        manifest.push_str(&format!(",goal_{j}"));
    }
    manifest.push_str(",crop_x,crop_y,offset_x,offset_y\n");
    for s in symbols {
        s.template.save_ppm(&dir.join(format!("template_{}.ppm", s.symbol)))?;
        manifest.push_str(&s.symbol.to_string());
        for g in s.demo_goal.iter() {
            manifest.push_str(&format!(",{g}"));
        }
        manifest.push_str(&format!(
            ",{},{},{},{}\n",
            s.crop_origin.0, s.crop_origin.1, s.goal_offset.x, s.goal_offset.y
        ));
    }
    std::fs::write(dir.join("templates.csv"), manifest)?;
    Ok(())
}

pub fn load_templates(dir: &Path) -> Result<Vec<GroundedSymbol>> {
    let path = dir.join("templates.csv");
    if !path.exists() {
        return Err(Error::MissingInput(path));
    }
    let text = std::fs::read_to_string(&path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |m: String| Error::format(&path, format!("line {}: {m}", i + 1));
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() < 6 {
            return Err(bad("too few fields".into()));
        }
        let symbol: SymbolId = fields[0].parse().map_err(|_| bad("bad symbol id".into()))?;
        let nums = fields[1..]
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| bad(e.to_string()))?;
        let k = nums.len() - 4;
        let template_path = dir.join(format!("template_{symbol}.ppm"));
        if !template_path.exists() {
            return Err(Error::MissingInput(template_path));
        }
        out.push(GroundedSymbol {
            symbol,
            template: Image::load_ppm(&template_path)?,
            demo_goal: JointState(nums[..k].to_vec()),
            crop_origin: (nums[k] as usize, nums[k + 1] as usize),
            goal_offset: Point2::new(nums[k + 2], nums[k + 3]),
        });
    }
    Ok(out)
}
