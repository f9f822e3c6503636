//! Bounded Voronoi diagram of a cloud, clipped to the unit square.
//!
//! Each cell starts as the square and is cut by the perpendicular bisector
//! of every nearby point, nearest first. Edges remember which bisector (or
//! the square's border) produced them, so faces fall out of the clipping.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{GfdmError, Result};
use crate::pointcloud::PointCloud;
use crate::spatial::{dist, dist2, GridIndex, Point};

/// Edges and faces shorter than this are treated as degenerate.
pub const MIN_EDGE: f64 = 1e-12;

/// Vertex plus the label of the edge leaving it: `Some(j)` for the bisector
/// with point `j`, `None` for the square's border.
type Polygon = Vec<(Point, Option<usize>)>;

#[derive(Debug, Clone, PartialEq)]
pub struct Face {
    pub i: usize,
    pub j: usize,
    pub measure: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoronoiDiagram {
    volumes: Vec<f64>,
    faces: Vec<Face>,
    adjacency: Vec<Vec<(usize, f64)>>,
}

impl VoronoiDiagram {
    pub fn len(&self) -> usize {
        self.volumes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.volumes.is_empty()
    }

    pub fn volumes(&self) -> &[f64] {
        &self.volumes
    }

    /// Each unordered pair once, with `i < j`, sorted.
    pub fn faces(&self) -> &[Face] {
        &self.faces
    }

    /// Face-sharing neighbors of `i` with face measures, sorted by index.
    pub fn neighbors(&self, i: usize) -> &[(usize, f64)] {
        &self.adjacency[i]
    }

    pub fn face_measure(&self, i: usize, j: usize) -> Option<f64> {
        self.adjacency[i]
            .binary_search_by_key(&j, |&(k, _)| k)
            .ok()
            .map(|k| self.adjacency[i][k].1)
    }

    pub fn total_volume(&self) -> f64 {
        self.volumes.iter().sum()
    }

    pub fn write_volumes_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = String::from("i,volume\n");
        for (i, v) in self.volumes.iter().enumerate() {
            let _ = writeln!(out, "{i},{v:.16e}");
        }
        fs::write(path, out)?;
        Ok(())
    }

    pub fn write_faces_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = String::from("i,j,face_measure\n");
        for f in &self.faces {
            let _ = writeln!(out, "{},{},{:.16e}", f.i, f.j, f.measure);
        }
        fs::write(path, out)?;
        Ok(())
    }
}

/// Norm weights for the discrete L2 norm: the cell volumes.
pub fn norm_weights(diagram: &VoronoiDiagram) -> Vec<f64> {
    diagram.volumes.clone()
}

fn unit_square() -> Polygon {
    vec![
        ([0.0, 0.0], None),
        ([1.0, 0.0], None),
        ([1.0, 1.0], None),
        ([0.0, 1.0], None),
    ]
}

/// Keep the part of `poly` closer to `xi` than to `xj`.
fn clip(poly: &Polygon, xi: Point, xj: Point, j: usize) -> Polygon {
    let n = [xj[0] - xi[0], xj[1] - xi[1]];
    let m = [0.5 * (xi[0] + xj[0]), 0.5 * (xi[1] + xj[1])];
    let side = |p: Point| (p[0] - m[0]) * n[0] + (p[1] - m[1]) * n[1];
    let mut out = Vec::with_capacity(poly.len() + 1);
    for k in 0..poly.len() {
        let (cur, label) = poly[k];
        let next = poly[(k + 1) % poly.len()].0;
        let (sc, sn) = (side(cur), side(next));
        let cross = |t: f64| [cur[0] + t * (next[0] - cur[0]), cur[1] + t * (next[1] - cur[1])];
        match (sc <= 0.0, sn <= 0.0) {
            (true, true) => out.push((cur, label)),
            (true, false) => {
                out.push((cur, label));
                out.push((cross(sc / (sc - sn)), Some(j)));
            }
            (false, true) => out.push((cross(sc / (sc - sn)), label)),
            (false, false) => {}
        }
    }
    out
}

/// Drop vertices whose outgoing edge is shorter than [`MIN_EDGE`].
fn prune(poly: &mut Polygon) {
    let mut k = 0;
    while poly.len() > 2 && k < poly.len() {
        let next = poly[(k + 1) % poly.len()].0;
        if dist(poly[k].0, next) < MIN_EDGE {
            poly.remove(k);
        } else {
            k += 1;
        }
    }
}

fn shoelace(poly: &Polygon) -> f64 {
    let n = poly.len();
    let mut twice = 0.0;
    for k in 0..n {
        let a = poly[k].0;
        let b = poly[(k + 1) % n].0;
        twice += a[0] * b[1] - a[1] * b[0];
    }
    0.5 * twice
}

fn circumradius(poly: &Polygon, center: Point) -> f64 {
    poly.iter().map(|(p, _)| dist(*p, center)).fold(0.0, f64::max)
}

fn cell(cloud: &PointCloud, grid: &GridIndex, i: usize) -> Result<Polygon> {
    let points = cloud.points();
    let xi = points[i];
    // beyond this every point of the square is a candidate
    let everything = 2.0 * std::f64::consts::SQRT_2;
    let mut radius = 2.0 * cloud.h()[i];
    let mut found = Vec::new();
    loop {
        grid.within(points, xi, radius, &mut found);
        let mut candidates: Vec<(f64, usize)> = Vec::with_capacity(found.len());
        for &j in &found {
            if j == i {
                continue;
            }
            let d2 = dist2(points[j], xi);
            if d2 == 0.0 {
                return Err(GfdmError::DuplicatePoints {
                    first: i.min(j),
                    second: i.max(j),
                });
            }
            candidates.push((d2, j));
        }
        candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

        let mut poly = unit_square();
        let mut reach = circumradius(&poly, xi);
        let mut settled = false;
        for &(d2, j) in &candidates {
            if 0.25 * d2 >= reach * reach {
                settled = true;
                break;
            }
            poly = clip(&poly, xi, points[j], j);
            reach = circumradius(&poly, xi);
        }
        if settled || reach <= 0.5 * radius || radius >= everything {
            prune(&mut poly);
            return Ok(poly);
        }
        radius *= 2.0;
    }
}

pub fn compute_voronoi(cloud: &PointCloud) -> Result<VoronoiDiagram> {
    let n = cloud.len();
    if n == 0 {
        return Err(GfdmError::Parameter("cannot build a Voronoi diagram of an empty cloud".into()));
    }
    let mut hs: Vec<f64> = cloud.h().to_vec();
    hs.sort_by(f64::total_cmp);
    let grid = GridIndex::from_points(cloud.points(), hs[n / 2]);

    let mut volumes = Vec::with_capacity(n);
    // (min, max) -> (summed edge lengths, bitmask of the cells that saw it)
    let mut shared: BTreeMap<(usize, usize), (f64, u32)> = BTreeMap::new();
    for i in 0..n {
        let poly = cell(cloud, &grid, i)?;
        volumes.push(shoelace(&poly));
        for k in 0..poly.len() {
            if let (p, Some(j)) = poly[k] {
                let len = dist(p, poly[(k + 1) % poly.len()].0);
                let e = shared.entry((i.min(j), i.max(j))).or_insert((0.0, 0));
                e.0 += len;
                e.1 |= if i < j { 1 } else { 2 };
            }
        }
    }

    let mut faces = Vec::with_capacity(shared.len());
    let mut adjacency = vec![Vec::new(); n];
    for ((i, j), (sum, sides)) in shared {
        let measure = sum / sides.count_ones() as f64;
        if measure > MIN_EDGE {
            faces.push(Face { i, j, measure });
            adjacency[i].push((j, measure));
            adjacency[j].push((i, measure));
        }
    }
    for list in &mut adjacency {
        list.sort_by_key(|&(j, _)| j);
    }
    Ok(VoronoiDiagram {
        volumes,
        faces,
        adjacency,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cloud(points: Vec<Point>) -> PointCloud {
        let n = points.len();
        let flags = points
            .iter()
            .map(|&p| crate::pointcloud::on_unit_square_boundary(p))
            .collect();
        PointCloud::new(points, vec![0.1; n], flags).unwrap()
    }

    #[test]
    fn single_point_owns_the_square() {
        let d = compute_voronoi(&cloud(vec![[0.3, 0.6]])).unwrap();
        assert_eq!(d.volumes(), &[1.0]);
        assert!(d.faces().is_empty());
        assert_eq!(norm_weights(&d), vec![1.0]);
    }

    #[test]
    fn two_points_split_in_half() {
        let d = compute_voronoi(&cloud(vec![[0.25, 0.5], [0.75, 0.5]])).unwrap();
        assert!((d.volumes()[0] - 0.5).abs() < 1e-15);
        assert!((d.volumes()[1] - 0.5).abs() < 1e-15);
        assert_eq!(d.faces().len(), 1);
        assert!((d.faces()[0].measure - 1.0).abs() < 1e-15);
        assert_eq!(d.face_measure(1, 0), d.face_measure(0, 1));
    }

    #[test]
    fn grid_cells_match_closed_form() {
        let pts: Vec<Point> = (0..16)
            .map(|k| [(k % 4) as f64 / 3.0, (k / 4) as f64 / 3.0])
            .collect();
        let d = compute_voronoi(&cloud(pts)).unwrap();
        for k in 0..16 {
            let edge = |c: usize| c == 0 || c == 3;
            let expect = match (edge(k % 4), edge(k / 4)) {
                (true, true) => 1.0 / 36.0,
                (false, false) => 1.0 / 9.0,
                _ => 1.0 / 18.0,
            };
            assert!((d.volumes()[k] - expect).abs() < 1e-12, "cell {k}");
        }
        assert!((d.total_volume() - 1.0).abs() < 1e-12);
        // interior cell 5 touches its four axis neighbors with faces 1/3
        let nb: Vec<usize> = d.neighbors(5).iter().map(|&(j, _)| j).collect();
        assert_eq!(nb, vec![1, 4, 6, 9]);
        for &(_, m) in d.neighbors(5) {
            assert!((m - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn duplicates_name_both_points() {
        let err = compute_voronoi(&cloud(vec![[0.1, 0.1], [0.5, 0.5], [0.5, 0.5]])).unwrap_err();
        assert!(matches!(err, GfdmError::DuplicatePoints { first: 1, second: 2 }));
    }

    #[test]
    fn far_apart_points_need_radius_doubling() {
        // h is tiny compared to the spacing, so the first query finds nothing
        let pts = vec![[0.1, 0.1], [0.9, 0.9], [0.1, 0.9]];
        let c = PointCloud::new(pts, vec![0.01; 3], vec![false; 3]).unwrap();
        let d = compute_voronoi(&c).unwrap();
        assert!((d.total_volume() - 1.0).abs() < 1e-12);
        assert!(d.volumes().iter().all(|&v| v > 0.0));
    }

    #[test]
    fn dumps() {
        let d = compute_voronoi(&cloud(vec![[0.25, 0.5], [0.75, 0.5]])).unwrap();
        let dir = tempfile::tempdir().unwrap();
        d.write_volumes_csv(dir.path().join("v.csv")).unwrap();
        d.write_faces_csv(dir.path().join("f.csv")).unwrap();
        let v = std::fs::read_to_string(dir.path().join("v.csv")).unwrap();
        let f = std::fs::read_to_string(dir.path().join("f.csv")).unwrap();
        assert!(v.starts_with("i,volume\n0,5.0000000000000000e-1"));
        assert!(f.starts_with("i,j,face_measure\n0,1,1.0000000000000000e0"));
    }
}
