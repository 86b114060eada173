//! Simulated planar LiDAR and the scan-to-obstacle detector.

mod detector;
mod lidar;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::constraints::{CircleObstacle, LineSegment};
use crate::error::{Error, Result};

pub use detector::{detect, fit_cluster, segment_cloud, split_cluster, DetectorConfig, Fitted};
pub use lidar::{raycast, to_pointcloud, ScanPoint};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LidarSpec {
    pub n_beams: usize,
    /// Angular span centred on the sensor x axis, rad.
    pub fov: f64,
    pub max_range: f64,
    pub noise_sigma: f64,
    pub rate: f64,
}

impl Default for LidarSpec {
    fn default() -> Self {
        Self {
            n_beams: 720,
            fov: std::f64::consts::TAU,
            max_range: 25.0,
            noise_sigma: 0.01,
            rate: 20.0,
        }
    }
}

impl LidarSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_beams < 8 {
            return Err(Error::InvalidConfig(format!("n_beams = {} < 8", self.n_beams)));
        }
        if !(self.max_range > 0.0) || !(self.fov > 0.0) || !(self.fov <= std::f64::consts::TAU) {
            return Err(Error::InvalidConfig(
                "lidar needs max_range > 0 and 0 < fov <= 2π".into(),
            ));
        }
        if !(self.noise_sigma >= 0.0) || !(self.rate > 0.0) {
            return Err(Error::InvalidConfig("lidar noise must be >= 0 and rate > 0".into()));
        }
        Ok(())
    }

    pub fn angle_increment(&self) -> f64 {
        self.fov / self.n_beams as f64
    }

    pub fn bearing(&self, beam: usize) -> f64 {
        -0.5 * self.fov + beam as f64 * self.angle_increment()
    }

    /// Whether the first and last beams are angular neighbours.
    pub fn wraps(&self) -> bool {
        (self.fov - std::f64::consts::TAU).abs() < 1e-9
    }
}

/// Planar sensor pose in the world frame.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

impl Pose2 {
    pub fn new(x: f64, y: f64, yaw: f64) -> Self {
        Self { x, y, yaw }
    }

    pub fn position(&self) -> Vector2<f64> {
        Vector2::new(self.x, self.y)
    }

    /// Sensor frame to world frame.
    pub fn transform(&self, v: &Vector2<f64>) -> Vector2<f64> {
        let (s, c) = self.yaw.sin_cos();
        Vector2::new(self.x + c * v.x - s * v.y, self.y + s * v.x + c * v.y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scan {
    pub pose: Pose2,
    /// One value per beam; `spec.max_range` marks a missing return.
    pub ranges: Vec<f64>,
    pub spec: LidarSpec,
}

impl Scan {
    pub fn min_range(&self) -> f64 {
        self.ranges.iter().copied().fold(self.spec.max_range, f64::min)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Arena {
    pub min: Vector2<f64>,
    pub max: Vector2<f64>,
}

impl Arena {
    pub fn contains(&self, p: &Vector2<f64>) -> bool {
        p.x > self.min.x && p.x < self.max.x && p.y > self.min.y && p.y < self.max.y
    }

    pub fn walls(&self) -> [LineSegment; 4] {
        let a = self.min;
        let b = Vector2::new(self.max.x, self.min.y);
        let c = self.max;
        let d = Vector2::new(self.min.x, self.max.y);
        [
            LineSegment::new(a, b),
            LineSegment::new(b, c),
            LineSegment::new(c, d),
            LineSegment::new(d, a),
        ]
    }
}

/// Ground-truth geometry. Circle radii here are physical, not inflated.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Scene {
    pub circles: Vec<CircleObstacle>,
    pub segments: Vec<LineSegment>,
    pub bounds: Option<Arena>,
}

impl Scene {
    pub fn validate(&self) -> Result<()> {
        for c in &self.circles {
            if !(c.radius > 0.0) {
                return Err(Error::InvalidConfig(format!("circle radius must be positive: {c:?}")));
            }
        }
        if let Some(b) = &self.bounds {
            if !(b.min.x < b.max.x && b.min.y < b.max.y) {
                return Err(Error::InvalidConfig(format!("empty arena {b:?}")));
            }
            let inside = |p: &Vector2<f64>| {
                p.x >= b.min.x && p.x <= b.max.x && p.y >= b.min.y && p.y <= b.max.y
            };
            let circles_ok = self.circles.iter().all(|c| {
                inside(&(c.center - Vector2::repeat(c.radius)))
                    && inside(&(c.center + Vector2::repeat(c.radius)))
            });
            let segments_ok = self.segments.iter().all(|s| inside(&s.p1) && inside(&s.p2));
            if !circles_ok || !segments_ok {
                return Err(Error::InvalidConfig("obstacle outside arena bounds".into()));
            }
        }
        Ok(())
    }

    /// Distance from `p` to the nearest obstacle surface, arena walls excluded.
    pub fn clearance(&self, p: &Vector2<f64>) -> f64 {
        let circles = self.circles.iter().map(|c| c.clearance(p));
        let segments = self.segments.iter().map(|s| s.distance_to(p));
        circles.chain(segments).fold(f64::INFINITY, f64::min)
    }
}

/// Inflated obstacle estimates in the world frame.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Detections {
    pub circles: Vec<CircleObstacle>,
    pub segments: Vec<LineSegment>,
}

impl Detections {
    pub fn is_empty(&self) -> bool {
        self.circles.is_empty() && self.segments.is_empty()
    }
}
