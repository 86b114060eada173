use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::{Detections, Scan, ScanPoint};
use crate::constraints::{CircleObstacle, LineSegment};
use crate::error::{Error, Result};
use crate::perception::to_pointcloud;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorConfig {
    /// Split threshold is `gap_base + gap_ratio * range`, m.
    pub gap_base: f64,
    pub gap_ratio: f64,
    pub min_points: usize,
    /// A line is chosen when its RMS is within this factor of the circle RMS.
    pub line_preference: f64,
    /// Larger fitted circles are reported as lines, m.
    pub max_circle_radius: f64,
    /// Clusters that neither model fits to this RMS are split, m.
    pub split_rms: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            gap_base: 0.1,
            gap_ratio: 0.05,
            min_points: 4,
            line_preference: 1.2,
            max_circle_radius: 2.0,
            split_rms: 0.03,
        }
    }
}

/// Residual level treated as an exact fit.
const EXACT_RMS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Fitted {
    /// Radius already inflated.
    Circle(CircleObstacle),
    Segment(LineSegment),
}

fn splits(a: &ScanPoint, b: &ScanPoint, cfg: &DetectorConfig) -> bool {
    let threshold = cfg.gap_base + cfg.gap_ratio * 0.5 * (a.range + b.range);
    (b.point - a.point).norm() > threshold
}

/// Splits a bearing-ordered cloud into clusters of neighbouring returns.
///
/// Clusters break at missing beams and at jumps larger than the adaptive
/// threshold. For a full-circle scan of `wrap_beams` beams, the clusters at
/// either end of the bearing range are joined when they touch.
pub fn segment_cloud(
    points: &[ScanPoint],
    wrap_beams: Option<usize>,
    cfg: &DetectorConfig,
) -> Vec<Vec<ScanPoint>> {
    let mut clusters: Vec<Vec<ScanPoint>> = Vec::new();
    for p in points {
        match clusters.last_mut() {
            Some(c) => {
                let last = c.last().expect("clusters are non-empty");
                if p.beam == last.beam + 1 && !splits(last, p, cfg) {
                    c.push(*p);
                } else {
                    clusters.push(vec![*p]);
                }
            }
            None => clusters.push(vec![*p]),
        }
    }
    if let Some(n) = wrap_beams {
        if clusters.len() > 1 {
            let head = &clusters[0][0];
            let tail = clusters.last().unwrap().last().unwrap();
            if head.beam == 0 && tail.beam + 1 == n && !splits(tail, head, cfg) {
                let mut joined = clusters.pop().unwrap();
                joined.append(&mut clusters[0]);
                clusters[0] = joined;
            }
        }
    }
    clusters.retain(|c| c.len() >= cfg.min_points);
    clusters
}

struct LineFit {
    segment: LineSegment,
    rms: f64,
}

struct CircleFit {
    center: Vector2<f64>,
    radius: f64,
    rms: f64,
}

fn centroid(pts: &[Vector2<f64>]) -> Vector2<f64> {
    pts.iter().sum::<Vector2<f64>>() / pts.len() as f64
}

fn fit_line(pts: &[Vector2<f64>], m: &Vector2<f64>) -> LineFit {
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for p in pts {
        let q = p - m;
        sxx += q.x * q.x;
        sxy += q.x * q.y;
        syy += q.y * q.y;
    }
    let angle = 0.5 * (2.0 * sxy).atan2(sxx - syy);
    let t = Vector2::new(angle.cos(), angle.sin());
    let n = Vector2::new(-t.y, t.x);
    let (mut lo, mut hi, mut ss) = (f64::INFINITY, f64::NEG_INFINITY, 0.0);
    for p in pts {
        let q = p - m;
        let s = t.dot(&q);
        lo = lo.min(s);
        hi = hi.max(s);
        ss += n.dot(&q).powi(2);
    }
    LineFit {
        segment: LineSegment::new(m + lo * t, m + hi * t),
        rms: (ss / pts.len() as f64).sqrt(),
    }
}

/// Algebraic circle fit on centred coordinates; `None` for (near) collinear input.
fn fit_circle(pts: &[Vector2<f64>], m: &Vector2<f64>) -> Option<CircleFit> {
    let mut a = Matrix3::zeros();
    let mut b = Vector3::zeros();
    for p in pts {
        let q = p - m;
        let row = Vector3::new(q.x, q.y, 1.0);
        a += row * row.transpose();
        b -= q.norm_squared() * row;
    }
    let sol = a.lu().solve(&b)?;
    let c = Vector2::new(-0.5 * sol.x, -0.5 * sol.y);
    let r2 = c.norm_squared() - sol.z;
    if !(r2 > 0.0) || !r2.is_finite() {
        return None;
    }
    let radius = r2.sqrt();
    let ss: f64 = pts.iter().map(|p| ((p - m - c).norm() - radius).powi(2)).sum();
    Some(CircleFit {
        center: m + c,
        radius,
        rms: (ss / pts.len() as f64).sqrt(),
    })
}

fn explained(pts: &[Vector2<f64>], cfg: &DetectorConfig) -> bool {
    let m = centroid(pts);
    fit_line(pts, &m).rms <= cfg.split_rms
        || fit_circle(pts, &m).is_some_and(|c| c.radius <= cfg.max_circle_radius && c.rms <= cfg.split_rms)
}

/// Recursively splits a cluster at the point farthest from its end-to-end
/// chord until each piece is fitted by a line or a circle within
/// `split_rms`. Pieces never drop below `min_points`.
pub fn split_cluster(pts: &[Vector2<f64>], cfg: &DetectorConfig) -> Vec<Vec<Vector2<f64>>> {
    let min = cfg.min_points.max(2);
    if pts.len() < 2 * min || explained(pts, cfg) {
        return vec![pts.to_vec()];
    }
    let a = pts[0];
    let d = pts[pts.len() - 1] - a;
    let len = d.norm();
    let off = |p: &Vector2<f64>| {
        let q = p - a;
        if len > 1e-9 {
            (q.x * d.y - q.y * d.x).abs() / len
        } else {
            q.norm()
        }
    };
    let (k, _) = pts[min..pts.len() - min]
        .iter()
        .enumerate()
        .map(|(i, p)| (i + min, off(p)))
        .fold((min, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best });
    let mut out = split_cluster(&pts[..k], cfg);
    out.extend(split_cluster(&pts[k..], cfg));
    out
}

/// Fits a line and a circle to `cluster` and keeps the better one.
///
/// Circle radii are inflated by `d_s`; segments span the cluster extent.
pub fn fit_cluster(cluster: &[Vector2<f64>], d_s: f64, cfg: &DetectorConfig) -> Result<Fitted> {
    if cluster.len() < 2 {
        return Err(Error::DegenerateFit(format!("{} points", cluster.len())));
    }
    let m = centroid(cluster);
    let spread = cluster.iter().map(|p| (p - m).norm()).fold(0.0, f64::max);
    if !(spread > 1e-9) {
        return Err(Error::DegenerateFit("cluster is a single point".into()));
    }
    let line = fit_line(cluster, &m);
    let circle = fit_circle(cluster, &m)
        .filter(|c| c.radius <= cfg.max_circle_radius)
        .filter(|c| line.rms > (cfg.line_preference * c.rms).max(EXACT_RMS));
    Ok(match circle {
        Some(c) => Fitted::Circle(CircleObstacle::new(c.center, c.radius + d_s)),
        None => Fitted::Segment(line.segment),
    })
}

/// Full pipeline from a scan to world-frame inflated obstacles: gap
/// segmentation, corner splitting, then one fit per piece.
pub fn detect(scan: &Scan, d_s: f64, cfg: &DetectorConfig) -> Detections {
    let cloud = to_pointcloud(scan);
    let wrap = scan.spec.wraps().then_some(scan.spec.n_beams);
    let mut out = Detections::default();
    for cluster in segment_cloud(&cloud, wrap, cfg) {
        let pts: Vec<Vector2<f64>> = cluster.iter().map(|p| scan.pose.transform(&p.point)).collect();
        for piece in split_cluster(&pts, cfg) {
            match fit_cluster(&piece, d_s, cfg) {
                Ok(Fitted::Circle(c)) => out.circles.push(c),
                Ok(Fitted::Segment(s)) => out.segments.push(s),
                Err(_) => {}
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perception::{raycast, LidarSpec, Pose2, Scene};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};
    use std::f64::consts::{PI, TAU};

    fn noiseless() -> LidarSpec {
        LidarSpec {
            noise_sigma: 0.0,
            ..LidarSpec::default()
        }
    }

    fn cloud_from(pts: &[Vector2<f64>]) -> Vec<ScanPoint> {
        pts.iter()
            .enumerate()
            .map(|(beam, p)| ScanPoint {
                beam,
                bearing: p.y.atan2(p.x),
                range: p.norm(),
                point: *p,
            })
            .collect()
    }

    fn same_segment(a: &LineSegment, b: &LineSegment, tol: f64) -> bool {
        let direct = (a.p1 - b.p1).norm().max((a.p2 - b.p2).norm());
        let swapped = (a.p1 - b.p2).norm().max((a.p2 - b.p1).norm());
        direct.min(swapped) <= tol
    }

    #[test]
    fn dense_arc_is_one_cluster() {
        let pts: Vec<_> = (0..30)
            .map(|i| {
                let a = -0.3 + 0.02 * i as f64;
                Vector2::new(2.0 * a.cos(), 2.0 * a.sin())
            })
            .collect();
        assert_eq!(segment_cloud(&cloud_from(&pts), None, &DetectorConfig::default()).len(), 1);
    }

    #[test]
    fn gap_splits_objects() {
        let mut pts: Vec<_> = (0..10).map(|i| Vector2::new(1.0, 0.02 * i as f64)).collect();
        pts.extend((0..10).map(|i| Vector2::new(1.0, 1.2 + 0.02 * i as f64)));
        assert_eq!(segment_cloud(&cloud_from(&pts), None, &DetectorConfig::default()).len(), 2);
    }

    #[test]
    fn small_clusters_are_dropped() {
        let pts = [Vector2::new(1.0, 0.0), Vector2::new(1.0, 0.01), Vector2::new(1.0, 0.02)];
        assert!(segment_cloud(&cloud_from(&pts), None, &DetectorConfig::default()).is_empty());
    }

    #[test]
    fn circle_and_wall_give_two_clusters() {
        let scene = Scene {
            circles: vec![CircleObstacle::new(Vector2::new(2.0, 1.0), 0.3)],
            segments: vec![LineSegment::new(Vector2::new(3.0, -2.0), Vector2::new(3.0, -0.5))],
            bounds: None,
        };
        let spec = noiseless();
        let scan = raycast(&scene, &Pose2::default(), &spec, &mut ChaCha8Rng::seed_from_u64(1));
        let clusters = segment_cloud(&to_pointcloud(&scan), Some(spec.n_beams), &DetectorConfig::default());
        assert_eq!(clusters.len(), 2);
    }

    #[test]
    fn wrap_around_joins_cluster_behind_sensor() {
        let scene = Scene {
            circles: vec![CircleObstacle::new(Vector2::new(-2.0, 0.0), 0.3)],
            ..Scene::default()
        };
        let spec = noiseless();
        let scan = raycast(&scene, &Pose2::default(), &spec, &mut ChaCha8Rng::seed_from_u64(1));
        let det = detect(&scan, 0.4, &DetectorConfig::default());
        assert_eq!(det.circles.len(), 1);
        assert_abs_diff_eq!(det.circles[0].center, Vector2::new(-2.0, 0.0), epsilon = 1e-6);
        assert_abs_diff_eq!(det.circles[0].radius, 0.7, epsilon = 1e-6);
    }

    #[test]
    fn exact_circle_fit() {
        let pts: Vec<_> = (0..20)
            .map(|i| {
                let a = TAU * i as f64 / 20.0;
                Vector2::new(1.0 + a.cos(), 1.0 + a.sin())
            })
            .collect();
        match fit_cluster(&pts, 0.4, &DetectorConfig::default()).unwrap() {
            Fitted::Circle(c) => {
                assert_abs_diff_eq!(c.center, Vector2::new(1.0, 1.0), epsilon = 1e-6);
                assert_abs_diff_eq!(c.radius, 1.4, epsilon = 1e-6);
            }
            other => panic!("expected circle, got {other:?}"),
        }
    }

    #[test]
    fn exact_line_fit() {
        let pts: Vec<_> = (0..20).map(|i| Vector2::new(2.0 * i as f64 / 19.0, 0.0)).collect();
        match fit_cluster(&pts, 0.4, &DetectorConfig::default()).unwrap() {
            Fitted::Segment(s) => {
                let expected = LineSegment::new(Vector2::zeros(), Vector2::new(2.0, 0.0));
                assert!(same_segment(&s, &expected, 1e-6), "{s:?}");
            }
            other => panic!("expected segment, got {other:?}"),
        }
    }

    #[test]
    fn repeated_point_is_degenerate() {
        let pts = vec![Vector2::new(1.0, 2.0); 6];
        assert!(matches!(
            fit_cluster(&pts, 0.4, &DetectorConfig::default()),
            Err(Error::DegenerateFit(_))
        ));
    }

    #[test]
    fn noisy_half_circle_stays_circle() {
        let noise = Normal::new(0.0, 0.01).unwrap();
        for seed in 0..100 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts: Vec<_> = (0..40)
                .map(|i| {
                    let a = PI * i as f64 / 39.0;
                    let r = 0.3 + noise.sample(&mut rng);
                    Vector2::new(r * a.cos(), r * a.sin())
                })
                .collect();
            match fit_cluster(&pts, 0.0, &DetectorConfig::default()).unwrap() {
                Fitted::Circle(c) => assert!((c.radius - 0.3).abs() <= 0.05, "seed {seed}: {}", c.radius),
                other => panic!("seed {seed}: {other:?}"),
            }
        }
    }

    #[test]
    fn empty_scan_detects_nothing() {
        let spec = LidarSpec::default();
        let scan = raycast(&Scene::default(), &Pose2::default(), &spec, &mut ChaCha8Rng::seed_from_u64(0));
        assert!(detect(&scan, 0.4, &DetectorConfig::default()).is_empty());
    }

    fn cylinder_and_wall() -> Scene {
        Scene {
            circles: vec![CircleObstacle::new(Vector2::new(2.5, 0.0), 0.3)],
            segments: vec![LineSegment::new(Vector2::new(4.0, 1.0), Vector2::new(4.0, 3.0))],
            bounds: None,
        }
    }

    #[test]
    fn cylinder_and_wall_detection() {
        let scene = cylinder_and_wall();
        let pose = Pose2::new(0.2, 0.1, 0.0);
        let scan = raycast(&scene, &pose, &noiseless(), &mut ChaCha8Rng::seed_from_u64(0));
        let det = detect(&scan, 0.4, &DetectorConfig::default());
        assert_eq!(det.circles.len(), 1);
        assert!(!det.segments.is_empty());
        assert_abs_diff_eq!(det.circles[0].center, scene.circles[0].center, epsilon = 1e-3);
        assert_abs_diff_eq!(det.circles[0].radius, 0.7, epsilon = 1e-3);
        assert!(same_segment(&det.segments[0], &scene.segments[0], 0.05));
    }

    #[test]
    fn repeated_scans_are_statistically_stable() {
        let scene = cylinder_and_wall();
        let pose = Pose2::default();
        let spec = LidarSpec::default();
        let cfg = DetectorConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let radii: Vec<f64> = (0..200)
            .map(|_| detect(&raycast(&scene, &pose, &spec, &mut rng), 0.4, &cfg).circles[0].radius)
            .collect();
        let mean = radii.iter().sum::<f64>() / radii.len() as f64;
        let sd = (radii.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (radii.len() - 1) as f64).sqrt();
        // the difference of two independent estimates has sd √2·sd
        let bound = 3.0 * 2f64.sqrt() * sd;
        let within = radii.windows(2).filter(|w| (w[0] - w[1]).abs() <= bound).count();
        assert!(within as f64 >= 0.98 * (radii.len() - 1) as f64, "{within}");
        assert!(sd < 0.02, "sd {sd}");
    }

    #[test]
    fn arena_corners_are_split() {
        let scene = Scene {
            bounds: Some(crate::perception::Arena {
                min: Vector2::new(-4.0, -3.0),
                max: Vector2::new(6.0, 3.0),
            }),
            ..Scene::default()
        };
        let scan = raycast(&scene, &Pose2::new(0.5, 0.2, 0.0), &LidarSpec::default(), &mut ChaCha8Rng::seed_from_u64(3));
        let det = detect(&scan, 0.4, &DetectorConfig::default());
        assert!(det.circles.is_empty(), "{:?}", det.circles);
        let walls = scene.bounds.unwrap().walls();
        for s in &det.segments {
            // every detected segment hugs one arena wall
            let on_wall = walls.iter().any(|w| w.distance_to(&s.p1) < 0.05 && w.distance_to(&s.p2) < 0.05);
            assert!(on_wall, "{s:?}");
        }
        let covered: f64 = det.segments.iter().map(|s| s.length()).sum();
        assert!(covered > 0.9 * 32.0, "{covered}");
    }

    #[test]
    fn occluded_obstacles_are_not_reported() {
        let scene = Scene {
            circles: vec![CircleObstacle::new(Vector2::new(4.0, 0.0), 0.3)],
            segments: vec![LineSegment::new(Vector2::new(2.0, -1.5), Vector2::new(2.0, 1.5))],
            bounds: None,
        };
        let scan = raycast(&scene, &Pose2::default(), &noiseless(), &mut ChaCha8Rng::seed_from_u64(0));
        let det = detect(&scan, 0.4, &DetectorConfig::default());
        assert!(det.circles.is_empty());
        assert_eq!(det.segments.len(), 1);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn ranges_bounded_by_truth_plus_noise(
            cx in 1.0f64..6.0, cy in -3.0f64..3.0, r in 0.1f64..0.8, seed in any::<u64>()
        ) {
            let scene = Scene {
                circles: vec![CircleObstacle::new(Vector2::new(cx, cy), r)],
                ..Scene::default()
            };
            let spec = LidarSpec::default();
            let scan = raycast(&scene, &Pose2::default(), &spec, &mut ChaCha8Rng::seed_from_u64(seed));
            for (i, range) in scan.ranges.iter().enumerate() {
                let a = spec.bearing(i);
                let d = Vector2::new(a.cos(), a.sin());
                let truth = super::super::lidar::trace(&scene, &Vector2::zeros(), &d).unwrap_or(spec.max_range);
                prop_assert!(*range > 0.0 && *range <= spec.max_range);
                prop_assert!(*range <= truth + 4.0 * spec.noise_sigma + 1e-12);
            }
        }

        #[test]
        fn noiseless_detection_recovers_geometry(
            cx in 1.5f64..5.0, cy in -2.0f64..2.0, r in 0.15f64..0.8, d_s in 0.0f64..0.6
        ) {
            let scene = Scene {
                circles: vec![CircleObstacle::new(Vector2::new(cx, cy), r)],
                ..Scene::default()
            };
            let scan = raycast(&scene, &Pose2::default(), &noiseless(), &mut ChaCha8Rng::seed_from_u64(0));
            let det = detect(&scan, d_s, &DetectorConfig::default());
            prop_assert_eq!(det.circles.len(), 1);
            prop_assert!((det.circles[0].center - scene.circles[0].center).norm() <= 1e-3);
            prop_assert!((det.circles[0].radius - d_s - r).abs() <= 1e-3);
        }

        #[test]
        fn inflation_is_exact(d_s in 0.0f64..1.0) {
            let pts: Vec<_> = (0..12)
                .map(|i| {
                    let a = 0.3 * i as f64;
                    Vector2::new(0.5 * a.cos(), 0.5 * a.sin())
                })
                .collect();
            let Fitted::Circle(bare) = fit_cluster(&pts, 0.0, &DetectorConfig::default()).unwrap() else {
                panic!("expected circle")
            };
            let Fitted::Circle(c) = fit_cluster(&pts, d_s, &DetectorConfig::default()).unwrap() else {
                panic!("expected circle")
            };
            prop_assert_eq!(c.radius, bare.radius + d_s);
        }
    }
}
