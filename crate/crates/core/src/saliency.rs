//! Saliency maps and the providers the attribution prior draws from.

use std::sync::Arc;

use crate::control::Demonstration;
use crate::error::{Error, Result};
use crate::net::MicroNet;
use crate::world::{CameraModel, Point2, Scene};

/// Non-negative attribution field, max-normalised to 1 unless all zero.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl SaliencyMap {
    /// Scales `values` so the maximum is 1. Negative or non-finite values are
    /// rejected.
    pub fn normalized(width: usize, height: usize, mut values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::DimensionMismatch {
                expected: width * height,
                actual: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid("saliency values must be finite and non-negative"));
        }
        let max = values.iter().cloned().fold(0.0, f64::max);
        if max > 0.0 {
            values.iter_mut().for_each(|v| *v /= max);
        }
        Ok(SaliencyMap {
            width,
            height,
            values,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Bilinear lookup at a pixel of a `image_w × image_h` image. Pixel
    /// centers map onto cell centers; coordinates outside the map clamp to
    /// its border.
    pub fn sample_image_pixel(&self, px: Point2, image_w: usize, image_h: usize) -> f64 {
        let sx = self.width as f64 / image_w as f64;
        let sy = self.height as f64 / image_h as f64;
        let mx = ((px.x + 0.5) * sx - 0.5).clamp(0.0, (self.width - 1) as f64);
        let my = ((px.y + 0.5) * sy - 0.5).clamp(0.0, (self.height - 1) as f64);
        let x0 = mx.floor() as usize;
        let y0 = my.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = mx - x0 as f64;
        let fy = my - y0 as f64;
        let top = self.at(x0, y0) * (1.0 - fx) + self.at(x1, y0) * fx;
        let bottom = self.at(x0, y1) * (1.0 - fx) + self.at(x1, y1) * fx;
        top * (1.0 - fy) + bottom * fy
    }

    /// Grayscale rendering for inspection.
    pub fn to_image(&self) -> crate::image::Image {
        let data = self.values.iter().flat_map(|&v| [v, v, v]).collect();
        crate::image::Image::from_raw(self.width, self.height, data).expect("normalised values")
    }
}

/// Sum of isotropic Gaussians (std `sigma_px`) at every projected object
/// center, at full camera resolution.
pub fn oracle_saliency(scene: &Scene, camera: &CameraModel, sigma_px: f64) -> Result<SaliencyMap> {
    if !(sigma_px > 0.0) {
        return Err(Error::invalid("saliency sigma must be positive"));
    }
    let (w, h) = camera.image_size;
    let centers: Vec<Point2> = scene.objects.iter().map(|o| camera.project(o.center)).collect();
    let inv = 1.0 / (2.0 * sigma_px * sigma_px);
    let mut values = vec![0.0; w * h];
    for (i, v) in values.iter_mut().enumerate() {
        let (x, y) = ((i % w) as f64, (i / w) as f64);
        *v = centers
            .iter()
            .map(|c| (-((x - c.x).powi(2) + (y - c.y).powi(2)) * inv).exp())
            .sum();
    }
    SaliencyMap::normalized(w, h, values)
}

/// Saliency evaluated for each demonstration timestep.
pub trait SaliencyProvider: Sync {
    fn saliency_at(&self, t: usize) -> Arc<SaliencyMap>;
}

/// The same map at every timestep.
pub struct FixedSaliency(pub Arc<SaliencyMap>);

impl SaliencyProvider for FixedSaliency {
    fn saliency_at(&self, _t: usize) -> Arc<SaliencyMap> {
        Arc::clone(&self.0)
    }
}

/// Input-gradient saliency of a trained network at every frame `(I_t, θ_t)`,
/// computed up front.
pub struct PrecomputedSaliency {
    maps: Vec<Arc<SaliencyMap>>,
}

impl PrecomputedSaliency {
    pub fn from_network(net: &MicroNet, demo: &Demonstration) -> Result<Self> {
        use rayon::prelude::*;
        let maps = demo
            .frames
            .par_iter()
            .map(|f| net.input_gradient_saliency(&f.image, &f.theta).map(Arc::new))
            .collect::<Result<Vec<_>>>()?;
        Ok(PrecomputedSaliency { maps })
    }

    pub fn maps(&self) -> &[Arc<SaliencyMap>] {
        &self.maps
    }
}

impl SaliencyProvider for PrecomputedSaliency {
    fn saliency_at(&self, t: usize) -> Arc<SaliencyMap> {
        Arc::clone(&self.maps[t.min(self.maps.len() - 1)])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::SceneObject;

    fn object(id: u32, x: f64, y: f64) -> SceneObject {
        SceneObject {
            id,
            color: [1.0, 0.0, 0.0],
            center: Point2::new(x, y),
            half_extent: 0.25,
        }
    }

    #[test]
    fn empty_scene_gives_zero_map() {
        let m = oracle_saliency(&Scene::default(), &CameraModel::default(), 8.0).unwrap();
        assert!(m.is_zero());
    }

    #[test]
    fn single_object_peaks_at_its_center() {
        let cam = CameraModel::default();
        let scene = Scene {
            objects: vec![object(0, 1.0, 0.5)],
        };
        let m = oracle_saliency(&scene, &cam, 8.0).unwrap();
        let (argmax, _) = m
            .values()
            .iter()
            .enumerate()
            .fold((0, f64::MIN), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
        assert_eq!((argmax % 320, argmax / 320), (192, 104));
        assert_eq!(m.at(192, 104), 1.0);
    }

    #[test]
    fn distant_objects_leave_a_gap() {
        let cam = CameraModel::default();
        // 100 px apart horizontally: pixels (110,120) and (210,120)
        let scene = Scene {
            objects: vec![object(0, -50.0 / 32.0, 0.0), object(1, 50.0 / 32.0, 0.0)],
        };
        let m = oracle_saliency(&scene, &cam, 8.0).unwrap();
        assert!(m.at(160, 120) < 1e-4);
        // both centers are local maxima
        for x in [110, 210] {
            let v = m.at(x, 120);
            assert!(v > m.at(x - 1, 120) && v > m.at(x + 1, 120));
            assert!(v > m.at(x, 119) && v > m.at(x, 121));
        }
    }

    #[test]
    fn bilinear_lookup_at_lower_resolution() {
        let m = SaliencyMap::normalized(2, 1, vec![0.0, 1.0]).unwrap();
        // image 4 px wide: pixel centers 0.5..3.5 -> cells -0.25..1.25
        assert_eq!(m.sample_image_pixel(Point2::new(0.0, 0.0), 4, 2), 0.0);
        assert_eq!(m.sample_image_pixel(Point2::new(3.0, 0.0), 4, 2), 1.0);
        assert!((m.sample_image_pixel(Point2::new(1.5, 0.0), 4, 2) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn normalisation_rejects_negative_values() {
        assert!(SaliencyMap::normalized(1, 2, vec![0.5, -0.1]).is_err());
        let m = SaliencyMap::normalized(1, 2, vec![0.5, 2.0]).unwrap();
        assert_eq!(m.values(), &[0.25, 1.0]);
    }
}
