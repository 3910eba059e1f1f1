//! Trajectory association and error metrics in a shared world frame.

use crate::error::{Error, Result};
use crate::geometry::RigidTransform;
use crate::io::StampedPose;

pub const ASSOCIATION_TOLERANCE: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrajectoryMetrics {
    pub pairs: usize,
    /// Root-mean-square position error, no alignment.
    pub ate_rmse: f64,
    /// Root-mean-square translation error of consecutive relative motions.
    pub rpe_translation: f64,
    /// Root-mean-square rotation error of consecutive relative motions, rad.
    pub rpe_rotation: f64,
}

fn pose(p: &StampedPose) -> RigidTransform {
    RigidTransform::new(p.rotation, p.position)
}

/// Pairs every estimate with the nearest ground-truth pose within `tolerance`
/// seconds. Both inputs are sorted by time before matching.
pub fn associate<'a>(
    gt: &'a [StampedPose],
    est: &'a [StampedPose],
    tolerance: f64,
) -> Vec<(&'a StampedPose, &'a StampedPose)> {
    let mut gt_sorted: Vec<&StampedPose> = gt.iter().collect();
    gt_sorted.sort_by(|a, b| a.t.total_cmp(&b.t));
    let mut est_sorted: Vec<&StampedPose> = est.iter().collect();
    est_sorted.sort_by(|a, b| a.t.total_cmp(&b.t));
    let mut pairs = Vec::new();
    for e in est_sorted {
        let i = gt_sorted.partition_point(|g| g.t < e.t);
        let best = [i.checked_sub(1), Some(i)]
            .into_iter()
            .flatten()
            .filter_map(|j| gt_sorted.get(j))
            .min_by(|a, b| (a.t - e.t).abs().total_cmp(&(b.t - e.t).abs()));
        if let Some(g) = best.filter(|g| (g.t - e.t).abs() <= tolerance) {
            pairs.push((*g, e));
        }
    }
    pairs
}

pub fn evaluate(gt: &[StampedPose], est: &[StampedPose]) -> Result<TrajectoryMetrics> {
    let pairs = associate(gt, est, ASSOCIATION_TOLERANCE);
    if pairs.is_empty() {
        return Err(Error::NoAssociation);
    }
    let n = pairs.len() as f64;
    let ate = (pairs
        .iter()
        .map(|(g, e)| (g.position - e.position).norm_squared())
        .sum::<f64>()
        / n)
        .sqrt();
    let (mut trans, mut rot, mut count) = (0.0, 0.0, 0usize);
    for w in pairs.windows(2) {
        let (g0, e0) = w[0];
        let (g1, e1) = w[1];
        let dg = pose(g0).inverse().compose(&pose(g1));
        let de = pose(e0).inverse().compose(&pose(e1));
        let err = dg.inverse().compose(&de);
        trans += err.translation.norm_squared();
        rot += err.rotation.angle().powi(2);
        count += 1;
    }
    let rms = |s: f64| if count == 0 { 0.0 } else { (s / count as f64).sqrt() };
    Ok(TrajectoryMetrics {
        pairs: pairs.len(),
        ate_rmse: ate,
        rpe_translation: rms(trans),
        rpe_rotation: rms(rot),
    })
}
