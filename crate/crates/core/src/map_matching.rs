//! Global feature map and scan-to-map correspondence search.
//!
//! Neighbor search is exact: a uniform hash grid is scanned cell by cell and
//! candidates are ordered by `(distance, insertion index)`, so results do not
//! depend on hash iteration order.

use std::collections::HashMap;

use nalgebra::SymmetricEigen;

use crate::geometry::{Mat3, Vec3};
use crate::scan::FeatureLabel;

type Cell = (i64, i64, i64);

fn cell_of(p: &Vec3, size: f64) -> Cell {
    (
        (p.x / size).floor() as i64,
        (p.y / size).floor() as i64,
        (p.z / size).floor() as i64,
    )
}

/// Point set with a minimum-spacing insertion rule and exact radius search.
#[derive(Clone, Debug)]
pub struct PointIndex {
    points: Vec<Vec3>,
    cell_size: f64,
    grid: HashMap<Cell, Vec<usize>>,
}

impl PointIndex {
    pub fn new(cell_size: f64) -> Self {
        Self {
            points: Vec::new(),
            cell_size,
            grid: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    fn insert_unchecked(&mut self, p: Vec3) {
        let idx = self.points.len();
        self.points.push(p);
        self.grid
            .entry(cell_of(&p, self.cell_size))
            .or_default()
            .push(idx);
    }

    /// Inserts `p` unless a stored point lies closer than `min_spacing`.
    pub fn insert_spaced(&mut self, p: Vec3, min_spacing: f64) -> bool {
        if min_spacing > 0.0 && self.any_within(&p, min_spacing) {
            return false;
        }
        self.insert_unchecked(p);
        true
    }

    fn cells_around(&self, p: &Vec3, radius: f64) -> impl Iterator<Item = Cell> {
        let reach = (radius / self.cell_size).ceil() as i64;
        let (cx, cy, cz) = cell_of(p, self.cell_size);
        (-reach..=reach).flat_map(move |dx| {
            (-reach..=reach)
                .flat_map(move |dy| (-reach..=reach).map(move |dz| (cx + dx, cy + dy, cz + dz)))
        })
    }

    fn any_within(&self, p: &Vec3, radius: f64) -> bool {
        let r2 = radius * radius;
        self.cells_around(p, radius).any(|c| {
            self.grid
                .get(&c)
                .is_some_and(|ids| ids.iter().any(|&i| (self.points[i] - p).norm_squared() < r2))
        })
    }

    /// Up to `k` nearest points within `radius`, nearest first; ties broken
    /// by insertion order.
    pub fn nearest_within(&self, p: &Vec3, k: usize, radius: f64) -> Vec<(usize, f64)> {
        let r2 = radius * radius;
        let mut found: Vec<(usize, f64)> = Vec::new();
        for c in self.cells_around(p, radius) {
            if let Some(ids) = self.grid.get(&c) {
                for &i in ids {
                    let d2 = (self.points[i] - p).norm_squared();
                    if d2 <= r2 {
                        found.push((i, d2));
                    }
                }
            }
        }
        found.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        found.truncate(k);
        found.into_iter().map(|(i, d2)| (i, d2.sqrt())).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MapParams {
    pub voxel_edge: f64,
    pub voxel_planar: f64,
    pub knn: usize,
    pub max_dist: f64,
    /// Line accepted iff `λ_max > ratio · λ_mid`.
    pub line_eigen_ratio: f64,
    /// Plane accepted iff every neighbor lies closer than this to the fit.
    pub plane_max_residual: f64,
}

impl Default for MapParams {
    fn default() -> Self {
        Self {
            voxel_edge: 0.2,
            voxel_planar: 0.4,
            knn: 5,
            max_dist: 1.0,
            line_eigen_ratio: 3.0,
            plane_max_residual: 0.1,
        }
    }
}

/// World-frame edge and planar feature map.
#[derive(Clone, Debug)]
pub struct GlobalMap {
    pub edges: PointIndex,
    pub planars: PointIndex,
    pub params: MapParams,
}

impl GlobalMap {
    pub fn new(params: MapParams) -> Self {
        let cell = params.max_dist.max(1e-3);
        Self {
            edges: PointIndex::new(cell),
            planars: PointIndex::new(cell),
            params,
        }
    }

    pub fn len(&self) -> usize {
        self.edges.len() + self.planars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Inserts world-frame points; each is dropped when a stored point of the
    /// same kind lies within half a voxel.
    pub fn insert_points<I>(&mut self, points: I) -> usize
    where
        I: IntoIterator<Item = (FeatureLabel, Vec3)>,
    {
        let mut added = 0;
        for (label, p) in points {
            let ok = match label {
                FeatureLabel::Edge => self.edges.insert_spaced(p, 0.5 * self.params.voxel_edge),
                FeatureLabel::Planar => {
                    self.planars.insert_spaced(p, 0.5 * self.params.voxel_planar)
                }
            };
            added += ok as usize;
        }
        added
    }

    /// `x,y,z,kind` rows for external plotting, kind `0` edge / `1` planar.
    pub fn dump_csv(&self) -> String {
        let mut out = String::from("x,y,z,kind\n");
        for (label, set) in [(FeatureLabel::Edge, &self.edges), (FeatureLabel::Planar, &self.planars)] {
            for p in set.points() {
                out.push_str(&format!("{:.6},{:.6},{:.6},{}\n", p.x, p.y, p.z, label.code()));
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PrimitiveKind {
    Line,
    Plane,
}

/// A matched map primitive: line `(direction n, point p0)` or plane
/// `(normal n, point p0)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Correspondence {
    pub kind: PrimitiveKind,
    pub normal: Vec3,
    pub point: Vec3,
    /// Index of the feature point this correspondence was found for.
    pub point_index: usize,
    pub weight: f64,
}

fn centroid_and_scatter(points: &[Vec3]) -> (Vec3, Mat3) {
    let n = points.len() as f64;
    let c = points.iter().fold(Vec3::zeros(), |a, p| a + p) / n;
    let mut m = Mat3::zeros();
    for p in points {
        let d = p - c;
        m += d * d.transpose();
    }
    (c, m / n)
}

/// Eigenpairs sorted ascending by eigenvalue.
fn sorted_eigen(m: Mat3) -> [(f64, Vec3); 3] {
    let eig = SymmetricEigen::new(m);
    let mut pairs: Vec<(f64, Vec3)> = (0..3)
        .map(|i| (eig.eigenvalues[i], eig.eigenvectors.column(i).into_owned()))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    [pairs[0], pairs[1], pairs[2]]
}

fn neighbors(set: &PointIndex, query: &Vec3, k: usize, max_dist: f64) -> Option<Vec<Vec3>> {
    if k < 2 {
        return None;
    }
    let nn = set.nearest_within(query, k, max_dist);
    if nn.len() < k {
        return None;
    }
    Some(nn.iter().map(|&(i, _)| set.points()[i]).collect())
}

/// Fits a line to the `k` nearest edge points. Returns `None` when fewer than
/// `k` points lie within `max_dist` or the neighborhood is not elongated.
pub fn find_line(map: &GlobalMap, query: &Vec3, k: usize, max_dist: f64) -> Option<Correspondence> {
    let pts = neighbors(&map.edges, query, k, max_dist)?;
    let (c, scatter) = centroid_and_scatter(&pts);
    let [_, mid, max] = sorted_eigen(scatter);
    if !(max.0 > map.params.line_eigen_ratio * mid.0) {
        return None;
    }
    Some(Correspondence {
        kind: PrimitiveKind::Line,
        normal: max.1.normalize(),
        point: c,
        point_index: 0,
        weight: 1.0,
    })
}

/// Fits a plane to the `k` nearest planar points. Returns `None` when fewer
/// than `k` points lie within `max_dist`, the points are (near) collinear, or
/// any point lies farther than the residual gate from the fit.
pub fn find_plane(map: &GlobalMap, query: &Vec3, k: usize, max_dist: f64) -> Option<Correspondence> {
    let pts = neighbors(&map.planars, query, k, max_dist)?;
    let (c, scatter) = centroid_and_scatter(&pts);
    let [min, mid, _] = sorted_eigen(scatter);
    if !(mid.0 > 1e-10 && mid.0 > 3.0 * min.0) {
        return None;
    }
    let n = min.1.normalize();
    if pts
        .iter()
        .any(|p| n.dot(&(p - c)).abs() >= map.params.plane_max_residual)
    {
        return None;
    }
    Some(Correspondence {
        kind: PrimitiveKind::Plane,
        normal: n,
        point: c,
        point_index: 0,
        weight: 1.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn map_with(edges: &[Vec3], planars: &[Vec3]) -> GlobalMap {
        let mut map = GlobalMap::new(MapParams {
            voxel_edge: 0.0,
            voxel_planar: 0.0,
            ..Default::default()
        });
        map.insert_points(edges.iter().map(|p| (FeatureLabel::Edge, *p)));
        map.insert_points(planars.iter().map(|p| (FeatureLabel::Planar, *p)));
        map
    }

    #[test]
    fn exact_line() {
        let pts: Vec<Vec3> = (0..5).map(|i| Vec3::new(1.0, 2.0, 0.1 * i as f64)).collect();
        let map = map_with(&pts, &[]);
        let c = find_line(&map, &Vec3::new(1.05, 2.0, 0.2), 5, 1.0).unwrap();
        assert!((c.normal.z.abs() - 1.0).abs() < 1e-12);
        assert!((c.point - Vec3::new(1.0, 2.0, 0.2)).norm() < 1e-12);
        assert!((c.normal.norm() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn sphere_patch_is_not_a_line() {
        // Five points spread isotropically over a sphere cap.
        let dirs = [
            Vec3::new(0.0, 0.0, 1.0),
            Vec3::new(0.3, 0.0, 0.954),
            Vec3::new(-0.3, 0.0, 0.954),
            Vec3::new(0.0, 0.3, 0.954),
            Vec3::new(0.0, -0.3, 0.954),
        ];
        let pts: Vec<Vec3> = dirs.iter().map(|d| d.normalize() * 0.5).collect();
        let map = map_with(&pts, &[]);
        assert!(find_line(&map, &Vec3::new(0.0, 0.0, 0.45), 5, 1.0).is_none());
    }

    #[test]
    fn noisy_line_direction_within_three_degrees() {
        let truth = Vec3::new(1.0, 1.0, 0.5).normalize();
        let noise = Normal::new(0.0, 0.01).unwrap();
        for seed in 0..50 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts: Vec<Vec3> = (0..5)
                .map(|i| {
                    let s = -0.5 + 0.25 * i as f64;
                    truth * s
                        + Vec3::new(noise.sample(&mut rng), noise.sample(&mut rng), noise.sample(&mut rng))
                })
                .collect();
            let map = map_with(&pts, &[]);
            let c = find_line(&map, &Vec3::zeros(), 5, 1.0).unwrap();
            let angle = c.normal.dot(&truth).abs().min(1.0).acos();
            assert!(angle < 3f64.to_radians(), "seed {seed}: {angle}");
        }
    }

    #[test]
    fn exact_plane_and_thick_slab() {
        let pts = [
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(0.3, 0.0, 0.0),
            Vec3::new(0.0, 0.3, 0.0),
            Vec3::new(-0.3, 0.1, 0.0),
            Vec3::new(0.1, -0.3, 0.0),
        ];
        let map = map_with(&[], &pts);
        let c = find_plane(&map, &Vec3::new(0.0, 0.0, 0.05), 5, 1.0).unwrap();
        assert!((c.normal.z.abs() - 1.0).abs() < 1e-12);
        assert!(pts.iter().all(|p| c.normal.dot(&(p - c.point)).abs() < 1e-12));

        let slab = [
            Vec3::new(0.0, 0.0, 0.15),
            Vec3::new(0.3, 0.0, -0.15),
            Vec3::new(0.0, 0.3, 0.1),
            Vec3::new(-0.3, 0.1, -0.15),
            Vec3::new(0.1, -0.3, 0.15),
        ];
        let map = map_with(&[], &slab);
        assert!(find_plane(&map, &Vec3::zeros(), 5, 1.0).is_none());
    }

    #[test]
    fn collinear_points_are_not_a_plane() {
        let pts: Vec<Vec3> = (0..5).map(|i| Vec3::new(0.1 * i as f64, 0.0, 0.0)).collect();
        let map = map_with(&[], &pts);
        assert!(find_plane(&map, &Vec3::zeros(), 5, 1.0).is_none());
    }

    #[test]
    fn noisy_plane_normal_within_three_degrees() {
        let truth = Vec3::new(0.2, -0.1, 1.0).normalize();
        let u = truth.cross(&Vec3::x()).normalize();
        let v = truth.cross(&u);
        let noise = Normal::new(0.0, 0.01).unwrap();
        for seed in 0..50 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let offsets = [(0.0, 0.0), (0.8, 0.0), (0.0, 0.8), (-0.8, 0.4), (0.4, -0.8)];
            let pts: Vec<Vec3> = offsets
                .iter()
                .map(|(a, b)| u * *a + v * *b + truth * noise.sample(&mut rng))
                .collect();
            let map = map_with(&[], &pts);
            let c = find_plane(&map, &Vec3::zeros(), 5, 1.0).unwrap();
            let angle = c.normal.dot(&truth).abs().min(1.0).acos();
            assert!(angle < 3f64.to_radians(), "seed {seed}: {angle}");
        }
    }

    #[test]
    fn too_few_neighbors() {
        let map = map_with(&[Vec3::zeros(), Vec3::x() * 0.1], &[]);
        assert!(find_line(&map, &Vec3::zeros(), 5, 1.0).is_none());
        let far: Vec<Vec3> = (0..5).map(|i| Vec3::new(5.0, 0.0, i as f64 * 0.1)).collect();
        let map = map_with(&far, &[]);
        assert!(find_line(&map, &Vec3::zeros(), 5, 1.0).is_none());
    }

    #[test]
    fn voxel_downsampling() {
        let mut map = GlobalMap::new(MapParams::default());
        let p = Vec3::new(1.0, 1.0, 1.0);
        assert_eq!(map.insert_points([(FeatureLabel::Edge, p)]), 1);
        assert_eq!(map.insert_points([(FeatureLabel::Edge, p)]), 0);
        assert_eq!(map.edges.len(), 1);
        map.insert_points([(FeatureLabel::Edge, p + Vec3::new(0.05, 0.0, 0.0))]);
        assert_eq!(map.edges.len(), 1);

        let mut map = GlobalMap::new(MapParams::default());
        let far: Vec<_> = (0..20)
            .map(|i| (FeatureLabel::Planar, Vec3::new(i as f64 * 3.0, 0.0, 0.0)))
            .collect();
        assert_eq!(map.insert_points(far), 20);
        assert_eq!(map.planars.len(), 20);
    }

    #[test]
    fn spacing_invariant_holds() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut map = GlobalMap::new(MapParams::default());
        let pts: Vec<_> = (0..2000)
            .map(|_| {
                (
                    FeatureLabel::Planar,
                    Vec3::new(rng.random_range(0.0..3.0), rng.random_range(0.0..3.0), 0.0),
                )
            })
            .collect();
        map.insert_points(pts);
        let stored = map.planars.points();
        for i in 0..stored.len() {
            for j in 0..i {
                assert!((stored[i] - stored[j]).norm() >= 0.2);
            }
        }
    }

    #[test]
    fn nearest_is_exact_and_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut idx = PointIndex::new(0.7);
        let pts: Vec<Vec3> = (0..500)
            .map(|_| Vec3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)))
            .collect();
        for p in &pts {
            idx.insert_spaced(*p, 0.0);
        }
        let q = Vec3::new(0.1, -0.2, 0.3);
        let got = idx.nearest_within(&q, 7, 1.5);
        let mut brute: Vec<(usize, f64)> = pts
            .iter()
            .enumerate()
            .map(|(i, p)| (i, (p - q).norm()))
            .filter(|(_, d)| *d <= 1.5)
            .collect();
        brute.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        brute.truncate(7);
        assert_eq!(got.iter().map(|g| g.0).collect::<Vec<_>>(), brute.iter().map(|b| b.0).collect::<Vec<_>>());
        assert_eq!(got, idx.nearest_within(&q, 7, 1.5));
    }
}
