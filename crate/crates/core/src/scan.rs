//! Scan container, LiDAR-to-IMU transformation and curvature-based feature
//! extraction.

use log::warn;

use crate::geometry::{RigidTransform, Vec3};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FeatureLabel {
    Edge,
    Planar,
}

impl FeatureLabel {
    /// Scan CSV code: `0` edge, `1` planar.
    pub fn code(self) -> i32 {
        match self {
            FeatureLabel::Edge => 0,
            FeatureLabel::Planar => 1,
        }
    }

    pub fn from_code(code: i32) -> Option<Self> {
        match code {
            0 => Some(FeatureLabel::Edge),
            1 => Some(FeatureLabel::Planar),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScanPoint {
    pub t: f64,
    pub p: Vec3,
    pub ring: u32,
    pub label: Option<FeatureLabel>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RawScan {
    pub points: Vec<ScanPoint>,
    pub t_start: f64,
    pub t_end: f64,
}

impl RawScan {
    /// Builds a scan whose time bounds are the extreme point timestamps.
    pub fn from_points(points: Vec<ScanPoint>) -> Option<Self> {
        let t_start = points.iter().map(|p| p.t).fold(f64::INFINITY, f64::min);
        let t_end = points.iter().map(|p| p.t).fold(f64::NEG_INFINITY, f64::max);
        if !(t_end > t_start) {
            return None;
        }
        Some(Self {
            points,
            t_start,
            t_end,
        })
    }

    pub fn is_labeled(&self) -> bool {
        self.points.iter().any(|p| p.label.is_some())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FeaturePoint {
    pub t: f64,
    /// Position in the body (IMU) frame at time `t`.
    pub p: Vec3,
    pub label: FeatureLabel,
    pub curvature: f64,
    /// Index of the originating point in the raw scan.
    pub source_index: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FeatureCloud {
    pub edges: Vec<FeaturePoint>,
    pub planars: Vec<FeaturePoint>,
    pub t_start: f64,
    pub t_end: f64,
}

impl FeatureCloud {
    pub fn len(&self) -> usize {
        self.edges.len() + self.planars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = &FeaturePoint> {
        self.edges.iter().chain(self.planars.iter())
    }

    /// Uses the labels already carried by the scan; unlabeled points and
    /// points outside the range gate are dropped.
    pub fn from_labels(scan: &RawScan, min_range: f64, max_range: f64) -> Self {
        let mut cloud = FeatureCloud {
            t_start: scan.t_start,
            t_end: scan.t_end,
            ..Default::default()
        };
        for (i, pt) in scan.points.iter().enumerate() {
            let r = pt.p.norm();
            if r < min_range || r > max_range {
                continue;
            }
            let Some(label) = pt.label else { continue };
            let fp = FeaturePoint {
                t: pt.t,
                p: pt.p,
                label,
                curvature: 0.0,
                source_index: i,
            };
            match label {
                FeatureLabel::Edge => cloud.edges.push(fp),
                FeatureLabel::Planar => cloud.planars.push(fp),
            }
        }
        cloud
    }
}

/// Maps every point through the LiDAR-to-IMU extrinsic `R p + t`.
pub fn scan_transform(scan: &RawScan, extrinsic: &RigidTransform) -> RawScan {
    RawScan {
        points: scan
            .points
            .iter()
            .map(|pt| ScanPoint {
                p: extrinsic.transform_point(&pt.p),
                ..*pt
            })
            .collect(),
        t_start: scan.t_start,
        t_end: scan.t_end,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExtractionParams {
    /// Neighbors on each side used for curvature.
    pub window: usize,
    pub sectors: usize,
    pub max_edges_per_sector: usize,
    pub max_planars_per_sector: usize,
    pub edge_threshold: f64,
    pub planar_threshold: f64,
    pub min_range: f64,
    pub max_range: f64,
}

impl Default for ExtractionParams {
    fn default() -> Self {
        Self {
            window: 5,
            sectors: 6,
            max_edges_per_sector: 2,
            max_planars_per_sector: 4,
            edge_threshold: 0.05,
            planar_threshold: 0.01,
            min_range: 0.5,
            max_range: 100.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExtractionStatus {
    Ok,
    /// At least one ring had fewer than `2·window + 1` points.
    InsufficientPoints,
}

/// `‖Σ_{i∈window}(p_i − p_j)‖ / (|window| · ‖p_j‖)` for every point with a
/// full symmetric window; `None` elsewhere.
pub fn curvatures(points: &[Vec3], window: usize) -> Vec<Option<f64>> {
    let n = points.len();
    let mut out = vec![None; n];
    if n < 2 * window + 1 {
        return out;
    }
    for j in window..n - window {
        let pj = points[j];
        let mut sum = Vec3::zeros();
        for i in (j - window)..=(j + window) {
            if i != j {
                sum += points[i] - pj;
            }
        }
        let denom = (2 * window) as f64 * pj.norm();
        out[j] = Some(if denom > 0.0 { sum.norm() / denom } else { 0.0 });
    }
    out
}

/// Simplified LOAM-style selection: per ring and per angular sector, the
/// sharpest points become edges and the flattest become planars, with
/// non-maximum suppression over the curvature window.
pub fn extract_features(scan: &RawScan, params: &ExtractionParams) -> (FeatureCloud, ExtractionStatus) {
    let mut cloud = FeatureCloud {
        t_start: scan.t_start,
        t_end: scan.t_end,
        ..Default::default()
    };
    let mut status = ExtractionStatus::Ok;

    let mut rings: Vec<u32> = scan.points.iter().map(|p| p.ring).collect();
    rings.sort_unstable();
    rings.dedup();

    for ring in rings {
        let mut idx: Vec<usize> = (0..scan.points.len())
            .filter(|&i| {
                let pt = &scan.points[i];
                let r = pt.p.norm();
                pt.ring == ring && r >= params.min_range && r <= params.max_range
            })
            .collect();
        idx.sort_by(|&a, &b| scan.points[a].t.total_cmp(&scan.points[b].t).then(a.cmp(&b)));
        let pts: Vec<Vec3> = idx.iter().map(|&i| scan.points[i].p).collect();
        if pts.len() < 2 * params.window + 1 {
            warn!(
                "ring {ring}: {} points, need {} for curvature",
                pts.len(),
                2 * params.window + 1
            );
            status = ExtractionStatus::InsufficientPoints;
            continue;
        }
        let curv = curvatures(&pts, params.window);
        let lo = params.window;
        let hi = pts.len() - params.window;
        let sectors = params.sectors.max(1);
        let mut picked = vec![false; pts.len()];
        let mut suppressed = vec![false; pts.len()];

        let suppress = |suppressed: &mut [bool], k: usize| {
            let a = k.saturating_sub(params.window);
            let b = (k + params.window).min(pts.len() - 1);
            for s in suppressed.iter_mut().take(b + 1).skip(a) {
                *s = true;
            }
        };

        for s in 0..sectors {
            let start = lo + (hi - lo) * s / sectors;
            let end = lo + (hi - lo) * (s + 1) / sectors;
            if start >= end {
                continue;
            }
            let mut order: Vec<usize> = (start..end).collect();
            // Quantized so round-off does not reorder geometrically equal curvatures.
            let key = |k: usize| (curv[k].unwrap_or(0.0) * 1e9).round() as i64;
            order.sort_by(|&a, &b| key(b).cmp(&key(a)).then(a.cmp(&b)));

            let mut edges = 0;
            for &k in &order {
                if edges >= params.max_edges_per_sector {
                    break;
                }
                let c = curv[k].unwrap_or(0.0);
                if c <= params.edge_threshold {
                    break;
                }
                if suppressed[k] {
                    continue;
                }
                picked[k] = true;
                suppress(&mut suppressed, k);
                edges += 1;
                cloud.edges.push(feature(scan, idx[k], FeatureLabel::Edge, c));
            }

            let mut planars = 0;
            for &k in order.iter().rev() {
                if planars >= params.max_planars_per_sector {
                    break;
                }
                let c = curv[k].unwrap_or(0.0);
                if c >= params.planar_threshold {
                    break;
                }
                if suppressed[k] || picked[k] {
                    continue;
                }
                picked[k] = true;
                suppress(&mut suppressed, k);
                planars += 1;
                cloud.planars.push(feature(scan, idx[k], FeatureLabel::Planar, c));
            }
        }
    }
    (cloud, status)
}

fn feature(scan: &RawScan, i: usize, label: FeatureLabel, curvature: f64) -> FeaturePoint {
    let pt = &scan.points[i];
    FeaturePoint {
        t: pt.t,
        p: pt.p,
        label,
        curvature,
        source_index: i,
    }
}
