//! Planar arm kinematics, affine camera and synthetic scene rendering.

use std::ops::{Deref, DerefMut};

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::image::{Image, BACKGROUND_GRAY};

/// Joint angles in radians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct JointState(pub Vec<f64>);

impl JointState {
    pub fn zeros(n: usize) -> Self {
        JointState(vec![0.0; n])
    }

    pub fn distance(&self, other: &JointState) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl Deref for JointState {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for JointState {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for JointState {
    fn from(v: Vec<f64>) -> Self {
        JointState(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Point2 { x, y }
    }

    pub fn distance(self, other: Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }
}

impl From<[f64; 2]> for Point2 {
    fn from([x, y]: [f64; 2]) -> Self {
        Point2 { x, y }
    }
}

impl From<Point2> for [f64; 2] {
    fn from(p: Point2) -> Self {
        [p.x, p.y]
    }
}

impl std::ops::Sub for Point2 {
    type Output = Point2;
    fn sub(self, o: Point2) -> Point2 {
        Point2::new(self.x - o.x, self.y - o.y)
    }
}

impl std::ops::Add for Point2 {
    type Output = Point2;
    fn add(self, o: Point2) -> Point2 {
        Point2::new(self.x + o.x, self.y + o.y)
    }
}

const IK_DAMPING: f64 = 0.1;
const IK_MAX_ITERATIONS: usize = 200;
const IK_STEP_TOLERANCE: f64 = 1e-6;
/// Required FK residual for an IK solution, in workspace units.
pub const IK_TOLERANCE: f64 = 1e-3;

/// Serial planar arm with revolute joints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmModel {
    pub link_lengths: Vec<f64>,
    #[serde(default)]
    pub base_position: Point2,
}

impl Default for ArmModel {
    fn default() -> Self {
        ArmModel {
            link_lengths: vec![1.0; 3],
            base_position: Point2::default(),
        }
    }
}

impl ArmModel {
    pub fn new(link_lengths: Vec<f64>, base_position: Point2) -> Result<Self> {
        let arm = ArmModel {
            link_lengths,
            base_position,
        };
        arm.validate()?;
        Ok(arm)
    }

    pub fn validate(&self) -> Result<()> {
        if self.link_lengths.is_empty() {
            return Err(Error::invalid("arm needs at least one link"));
        }
        if self
            .link_lengths
            .iter()
            .any(|l| !l.is_finite() || *l <= 0.0)
        {
            return Err(Error::invalid("link lengths must be positive"));
        }
        Ok(())
    }

    pub fn joint_count(&self) -> usize {
        self.link_lengths.len()
    }

    pub fn reach(&self) -> f64 {
        self.link_lengths.iter().sum()
    }

    /// Radius of the hole around the base that the arm cannot reach.
    pub fn min_reach(&self) -> f64 {
        let longest = self.link_lengths.iter().cloned().fold(0.0, f64::max);
        (2.0 * longest - self.reach()).max(0.0)
    }

    pub fn forward_kinematics(&self, theta: &JointState) -> Result<Point2> {
        check_dim(self.joint_count(), theta.len())?;
        Ok(self.fk_unchecked(theta))
    }

    fn fk_unchecked(&self, theta: &[f64]) -> Point2 {
        let mut p = self.base_position;
        let mut angle = 0.0;
        for (len, q) in self.link_lengths.iter().zip(theta) {
            angle += q;
            p.x += len * angle.cos();
            p.y += len * angle.sin();
        }
        p
    }

    /// 2×J positional Jacobian, row-major.
    fn jacobian(&self, theta: &[f64]) -> Vec<[f64; 2]> {
        let n = theta.len();
        let mut cumulative = Vec::with_capacity(n);
        let mut angle = 0.0;
        for q in theta {
            angle += q;
            cumulative.push(angle);
        }
        // column j sums the contributions of links j..n
        let mut cols = vec![[0.0; 2]; n];
        let mut acc = [0.0; 2];
        for j in (0..n).rev() {
            let l = self.link_lengths[j];
            acc[0] -= l * cumulative[j].sin();
            acc[1] += l * cumulative[j].cos();
            cols[j] = acc;
        }
        cols
    }

    /// Damped least squares from `seed`; redundancy resolves toward the seed.
    pub fn inverse_kinematics(&self, target: Point2, seed: &JointState) -> Result<JointState> {
        check_dim(self.joint_count(), seed.len())?;
        let dist = (target - self.base_position).norm();
        if !dist.is_finite() || dist > self.reach() + 1e-9 || dist < self.min_reach() - 1e-9 {
            return Err(Error::UnreachableTarget {
                x: target.x,
                y: target.y,
            });
        }
        let mut theta = seed.0.clone();
        let lambda2 = IK_DAMPING * IK_DAMPING;
        let mut residual = f64::INFINITY;
        for _ in 0..IK_MAX_ITERATIONS {
            let p = self.fk_unchecked(&theta);
            let e = [target.x - p.x, target.y - p.y];
            residual = e[0].hypot(e[1]);
            if residual < 1e-10 {
                break;
            }
            let cols = self.jacobian(&theta);
            // A = J Jᵀ + λ² I (2×2)
            let mut a = [[lambda2, 0.0], [0.0, lambda2]];
            for c in &cols {
                a[0][0] += c[0] * c[0];
                a[0][1] += c[0] * c[1];
                a[1][1] += c[1] * c[1];
            }
            a[1][0] = a[0][1];
            let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
            let y = [
                (a[1][1] * e[0] - a[0][1] * e[1]) / det,
                (a[0][0] * e[1] - a[1][0] * e[0]) / det,
            ];
            let mut step_norm2 = 0.0;
            for (q, c) in theta.iter_mut().zip(&cols) {
                let dq = c[0] * y[0] + c[1] * y[1];
                *q += dq;
                step_norm2 += dq * dq;
            }
            if step_norm2.sqrt() < IK_STEP_TOLERANCE {
                let p = self.fk_unchecked(&theta);
                residual = p.distance(target);
                break;
            }
        }
        let p = self.fk_unchecked(&theta);
        residual = residual.min(p.distance(target));
        if residual >= IK_TOLERANCE {
            return Err(Error::Convergence {
                residual,
                iterations: IK_MAX_ITERATIONS,
            });
        }
        Ok(JointState(theta))
    }
}

/// Affine camera: workspace units to pixels with a y-down raster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub pixels_per_unit: f64,
    pub principal_point: Point2,
    pub image_size: (usize, usize),
}

impl Default for CameraModel {
    fn default() -> Self {
        CameraModel {
            pixels_per_unit: 32.0,
            principal_point: Point2::new(160.0, 120.0),
            image_size: (320, 240),
        }
    }
}

impl CameraModel {
    pub fn validate(&self) -> Result<()> {
        let (w, h) = self.image_size;
        if !(self.pixels_per_unit > 0.0) {
            return Err(Error::invalid("pixels_per_unit must be positive"));
        }
        if w == 0 || h == 0 {
            return Err(Error::invalid("image size must be non-zero"));
        }
        let pp = self.principal_point;
        if !(0.0..=w as f64).contains(&pp.x) || !(0.0..=h as f64).contains(&pp.y) {
            return Err(Error::invalid("principal point outside image"));
        }
        Ok(())
    }

    pub fn project(&self, p: Point2) -> Point2 {
        Point2::new(
            self.principal_point.x + self.pixels_per_unit * p.x,
            self.principal_point.y - self.pixels_per_unit * p.y,
        )
    }

    pub fn unproject(&self, px: Point2) -> Point2 {
        Point2::new(
            (px.x - self.principal_point.x) / self.pixels_per_unit,
            (self.principal_point.y - px.y) / self.pixels_per_unit,
        )
    }

    pub fn in_bounds(&self, px: Point2) -> bool {
        let (w, h) = self.image_size;
        px.x >= 0.0 && px.y >= 0.0 && px.x <= (w - 1) as f64 && px.y <= (h - 1) as f64
    }

    pub fn clamp(&self, px: Point2) -> Point2 {
        let (w, h) = self.image_size;
        Point2::new(
            px.x.clamp(0.0, (w - 1) as f64),
            px.y.clamp(0.0, (h - 1) as f64),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub id: u32,
    pub color: [f64; 3],
    pub center: Point2,
    pub half_extent: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Scene {
    pub objects: Vec<SceneObject>,
}

impl Scene {
    pub fn validate(&self, camera: &CameraModel) -> Result<()> {
        let mut ids: Vec<u32> = self.objects.iter().map(|o| o.id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid("scene object ids must be unique"));
        }
        for o in &self.objects {
            if !(o.half_extent > 0.0) {
                return Err(Error::invalid(format!("object {} has no extent", o.id)));
            }
            if o.color.iter().any(|c| !(0.0..=1.0).contains(c)) {
                return Err(Error::invalid(format!("object {} color outside [0,1]", o.id)));
            }
            if !camera.in_bounds(camera.project(o.center)) {
                return Err(Error::invalid(format!("object {} outside camera view", o.id)));
            }
        }
        Ok(())
    }

    pub fn object(&self, id: u32) -> Option<&SceneObject> {
        self.objects.iter().find(|o| o.id == id)
    }

    /// Object whose center is closest to `p`.
    pub fn nearest_object(&self, p: Point2) -> Option<&SceneObject> {
        self.objects
            .iter()
            .min_by(|a, b| a.center.distance(p).total_cmp(&b.center.distance(p)))
    }

    pub fn render(&self, camera: &CameraModel) -> Image {
        let (w, h) = camera.image_size;
        let mut img = Image::filled(w, h, [BACKGROUND_GRAY; 3]);
        for o in &self.objects {
            let (x0, y0, x1, y1) = object_pixel_rect(o, camera);
            for y in y0..y1 {
                for x in x0..x1 {
                    img.set_pixel(x, y, o.color);
                }
            }
        }
        img
    }
}

/// Pixel rectangle `[x0, x1) × [y0, y1)` covered by an object, clipped to the
/// image. A pixel is covered when its center lies within the half extent.
pub fn object_pixel_rect(o: &SceneObject, camera: &CameraModel) -> (usize, usize, usize, usize) {
    let (w, h) = camera.image_size;
    let c = camera.project(o.center);
    let he = o.half_extent * camera.pixels_per_unit;
    let lo = |v: f64| (v - he).ceil().max(0.0);
    let hi = |v: f64, lim: usize| ((v + he).floor() + 1.0).clamp(0.0, lim as f64);
    let x0 = lo(c.x).min(w as f64) as usize;
    let y0 = lo(c.y).min(h as f64) as usize;
    let x1 = hi(c.x, w) as usize;
    let y1 = hi(c.y, h) as usize;
    (x0, y0, x1.max(x0), y1.max(y0))
}

#[cfg(test)]
mod tests {
    use std::f64::consts::FRAC_PI_2;

    use super::*;

    fn close(a: Point2, b: Point2, tol: f64) -> bool {
        a.distance(b) < tol
    }

    #[test]
    fn fk_examples() {
        let arm = ArmModel::default();
        let p = arm.forward_kinematics(&vec![0.0; 3].into()).unwrap();
        assert!(close(p, Point2::new(3.0, 0.0), 1e-12));
        let p = arm
            .forward_kinematics(&vec![FRAC_PI_2, 0.0, 0.0].into())
            .unwrap();
        assert!(close(p, Point2::new(0.0, 3.0), 1e-12));
        let p = arm
            .forward_kinematics(&vec![FRAC_PI_2, -FRAC_PI_2, 0.0].into())
            .unwrap();
        assert!(close(p, Point2::new(2.0, 1.0), 1e-12));
    }

    #[test]
    fn fk_dimension_mismatch() {
        let arm = ArmModel::default();
        let err = arm.forward_kinematics(&vec![0.0; 2].into()).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { expected: 3, actual: 2 }));
    }

    #[test]
    fn projection_examples() {
        let cam = CameraModel::default();
        assert_eq!(cam.project(Point2::new(0.0, 0.0)), Point2::new(160.0, 120.0));
        assert_eq!(cam.project(Point2::new(1.0, 0.5)), Point2::new(192.0, 104.0));
        assert_eq!(cam.project(Point2::new(-1.0, 0.0)), Point2::new(128.0, 120.0));
        let p = Point2::new(0.37, -1.2);
        assert!(close(cam.unproject(cam.project(p)), p, 1e-12));
    }

    #[test]
    fn render_examples() {
        let cam = CameraModel::default();
        let empty = Scene::default().render(&cam);
        assert!(empty.data().iter().all(|&v| v == BACKGROUND_GRAY));

        let red = SceneObject {
            id: 0,
            color: [1.0, 0.0, 0.0],
            center: Point2::new(1.0, 1.0),
            half_extent: 1.0,
        };
        let img = Scene {
            objects: vec![red.clone()],
        }
        .render(&cam);
        assert_eq!(img.pixel(192, 88), [1.0, 0.0, 0.0]);
        // square spans 192±32 horizontally and 88±32 vertically
        assert_eq!(img.pixel(160, 56), [1.0, 0.0, 0.0]);
        assert_eq!(img.pixel(224, 120), [1.0, 0.0, 0.0]);
        assert_eq!(img.pixel(159, 88), [BACKGROUND_GRAY; 3]);
        assert_eq!(img.pixel(192, 121), [BACKGROUND_GRAY; 3]);

        let blue = SceneObject {
            id: 1,
            color: [0.0, 0.0, 1.0],
            center: Point2::new(1.5, 1.0),
            ..red.clone()
        };
        let img = Scene {
            objects: vec![red, blue],
        }
        .render(&cam);
        assert_eq!(img.pixel(200, 88), [0.0, 0.0, 1.0]);
        assert_eq!(img.pixel(170, 88), [1.0, 0.0, 0.0]);
    }

    #[test]
    fn ik_examples() {
        let arm = ArmModel::default();
        let theta0: JointState = vec![0.3, 0.7, -0.4].into();
        let target = arm.forward_kinematics(&theta0).unwrap();
        let sol = arm.inverse_kinematics(target, &theta0).unwrap();
        assert!(sol.distance(&theta0) < 1e-6);

        let sol = arm
            .inverse_kinematics(Point2::new(2.0, 1.0), &JointState::zeros(3))
            .unwrap();
        let p = arm.forward_kinematics(&sol).unwrap();
        assert!(close(p, Point2::new(2.0, 1.0), IK_TOLERANCE));

        let err = arm
            .inverse_kinematics(Point2::new(10.0, 0.0), &JointState::zeros(3))
            .unwrap_err();
        assert!(matches!(err, Error::UnreachableTarget { .. }));
    }

    #[test]
    fn scene_validation() {
        let cam = CameraModel::default();
        let obj = |id, x| SceneObject {
            id,
            color: [0.0, 1.0, 0.0],
            center: Point2::new(x, 0.0),
            half_extent: 0.2,
        };
        assert!(Scene { objects: vec![obj(0, 0.0), obj(0, 1.0)] }
            .validate(&cam)
            .is_err());
        assert!(Scene { objects: vec![obj(0, 0.0), obj(1, 100.0)] }
            .validate(&cam)
            .is_err());
        assert!(Scene { objects: vec![obj(0, 0.0), obj(1, 1.0)] }
            .validate(&cam)
            .is_ok());
    }
}
