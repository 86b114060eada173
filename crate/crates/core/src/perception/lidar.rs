use nalgebra::Vector2;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{LidarSpec, Pose2, Scan, Scene};
use crate::constraints::{CircleObstacle, LineSegment};

/// Shortest positive ranges below this are treated as self-hits.
const MIN_RANGE: f64 = 1e-3;
/// Range noise is truncated at this many standard deviations.
const NOISE_CLIP: f64 = 4.0;

fn cross(a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
    a.x * b.y - a.y * b.x
}

fn ray_circle(o: &Vector2<f64>, d: &Vector2<f64>, c: &CircleObstacle) -> Option<f64> {
    let f = o - c.center;
    let b = f.dot(d);
    let disc = b * b - (f.norm_squared() - c.radius * c.radius);
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    [-b - sq, -b + sq].into_iter().find(|t| *t > 0.0)
}

fn ray_segment(o: &Vector2<f64>, d: &Vector2<f64>, seg: &LineSegment) -> Option<f64> {
    let e = seg.p2 - seg.p1;
    let denom = cross(d, &e);
    if denom.abs() < 1e-12 {
        return None;
    }
    let w = seg.p1 - o;
    let t = cross(&w, &e) / denom;
    let s = cross(&w, d) / denom;
    (t > 0.0 && (0.0..=1.0).contains(&s)).then_some(t)
}

/// Distance along the ray from `o` in direction `d` (unit) to the first surface.
pub(crate) fn trace(scene: &Scene, o: &Vector2<f64>, d: &Vector2<f64>) -> Option<f64> {
    let circles = scene.circles.iter().filter_map(|c| ray_circle(o, d, c));
    let segments = scene.segments.iter().filter_map(|s| ray_segment(o, d, s));
    let walls = scene
        .bounds
        .iter()
        .flat_map(|b| b.walls())
        .filter_map(|s| ray_segment(o, d, &s));
    circles.chain(segments).chain(walls).reduce(f64::min)
}

/// Simulates one scan; `rng` drives the Gaussian range noise.
///
/// Exactly one normal sample is drawn per beam whenever `noise_sigma > 0`,
/// so the random stream does not depend on the scene. Samples are clipped to
/// ±4σ.
pub fn raycast<R: Rng + ?Sized>(scene: &Scene, pose: &Pose2, spec: &LidarSpec, rng: &mut R) -> Scan {
    let o = pose.position();
    let noise = (spec.noise_sigma > 0.0).then(|| Normal::new(0.0, spec.noise_sigma).expect("sigma > 0"));
    let ranges = (0..spec.n_beams)
        .map(|i| {
            let a = pose.yaw + spec.bearing(i);
            let d = Vector2::new(a.cos(), a.sin());
            let clip = NOISE_CLIP * spec.noise_sigma;
            let eps = noise.as_ref().map_or(0.0, |n| n.sample(rng).clamp(-clip, clip));
            match trace(scene, &o, &d) {
                Some(r) if r < spec.max_range => (r + eps).clamp(MIN_RANGE, spec.max_range),
                _ => spec.max_range,
            }
        })
        .collect();
    Scan {
        pose: *pose,
        ranges,
        spec: *spec,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanPoint {
    pub beam: usize,
    pub bearing: f64,
    pub range: f64,
    /// Sensor-frame position.
    pub point: Vector2<f64>,
}

/// Polar to Cartesian in the sensor frame, dropping no-return beams.
pub fn to_pointcloud(scan: &Scan) -> Vec<ScanPoint> {
    scan.ranges
        .iter()
        .enumerate()
        .filter(|(_, r)| **r < scan.spec.max_range)
        .map(|(beam, &range)| {
            let bearing = scan.spec.bearing(beam);
            ScanPoint {
                beam,
                bearing,
                range,
                point: Vector2::new(range * bearing.cos(), range * bearing.sin()),
            }
        })
        .collect()
}
