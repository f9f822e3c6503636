//! Point clouds on the unit square, their generation, file format and
//! radius-based stencils.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{GfdmError, Result};
use crate::spatial::{bounding_box, dist, dist2, GridIndex, Point};

/// Absolute tolerance for "lies on the boundary of the unit square".
pub const BOUNDARY_TOL: f64 = 1e-12;

/// Interior separation radius and boundary spacing, as a fraction of `h`.
pub const SEPARATION_RATIO: f64 = 0.25;

/// Dart throwing stops after this many consecutive rejections per `1/r^2`.
pub const REJECTION_FACTOR: f64 = 200.0;

/// Radius growth factor for stencils that fall short of the minimum size.
pub const STENCIL_GROWTH: f64 = 1.3;

pub const CLOUD_HEADER: &str = "id,x,y,h,is_boundary";

pub fn on_unit_square_boundary(p: Point) -> bool {
    p.iter()
        .any(|&c| c.abs() <= BOUNDARY_TOL || (c - 1.0).abs() <= BOUNDARY_TOL)
}

/// A discretization of the closed unit square by scattered points, each
/// carrying a smoothing length.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Point>,
    h: Vec<f64>,
    is_boundary: Vec<bool>,
}

impl PointCloud {
    pub fn new(points: Vec<Point>, h: Vec<f64>, is_boundary: Vec<bool>) -> Result<Self> {
        if points.len() != h.len() || points.len() != is_boundary.len() {
            return Err(GfdmError::Parameter(format!(
                "field lengths differ: {} points, {} smoothing lengths, {} flags",
                points.len(),
                h.len(),
                is_boundary.len()
            )));
        }
        for (i, ((p, &hi), &b)) in points.iter().zip(&h).zip(&is_boundary).enumerate() {
            check_point(*p, hi, b).map_err(|reason| {
                GfdmError::Parameter(format!("point {i}: {reason}"))
            })?;
        }
        Ok(Self {
            points,
            h,
            is_boundary,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn point(&self, i: usize) -> Point {
        self.points[i]
    }

    pub fn h(&self) -> &[f64] {
        &self.h
    }

    pub fn is_boundary(&self) -> &[bool] {
        &self.is_boundary
    }

    pub fn boundary_count(&self) -> usize {
        self.is_boundary.iter().filter(|&&b| b).count()
    }

    pub fn interior_indices(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(|&i| !self.is_boundary[i])
    }
}

fn check_point(p: Point, h: f64, boundary: bool) -> std::result::Result<(), String> {
    if !p.iter().all(|c| c.is_finite() && (0.0..=1.0).contains(c)) {
        return Err(format!("coordinates ({}, {}) outside the unit square", p[0], p[1]));
    }
    if !(h.is_finite() && h > 0.0) {
        return Err(format!("smoothing length {h} is not positive"));
    }
    if boundary && !on_unit_square_boundary(p) {
        return Err(format!(
            "point ({}, {}) is flagged boundary but lies inside the square",
            p[0], p[1]
        ));
    }
    Ok(())
}

/// Seeded Poisson-disk cloud on the unit square with constant smoothing
/// length `h_target`. The boundary carries equispaced points (corners
/// included) at spacing at most `h_target / 4`; the interior is filled by dart
/// throwing with the same separation radius.
pub fn generate_cloud(h_target: f64, seed: u64) -> Result<PointCloud> {
    if !(h_target > 0.0 && h_target <= 0.5) {
        return Err(GfdmError::Parameter(format!(
            "h_target must lie in (0, 0.5], got {h_target}"
        )));
    }
    let r = SEPARATION_RATIO * h_target;
    let per_side = (1.0 / r - 1e-9).ceil() as usize;

    let mut points: Vec<Point> = Vec::with_capacity((0.75 / (r * r)) as usize + 4 * per_side);
    let n = per_side as f64;
    for k in 0..per_side {
        points.push([k as f64 / n, 0.0]);
    }
    for k in 0..per_side {
        points.push([1.0, k as f64 / n]);
    }
    for k in 0..per_side {
        points.push([1.0 - k as f64 / n, 1.0]);
    }
    for k in 0..per_side {
        points.push([0.0, 1.0 - k as f64 / n]);
    }
    let boundary_len = points.len();

    let mut grid = GridIndex::new([0.0, 0.0], [1.0, 1.0], r / std::f64::consts::SQRT_2);
    for (i, &p) in points.iter().enumerate() {
        grid.insert(i, p);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let limit = (REJECTION_FACTOR / (r * r)).ceil() as u64;
    let mut rejected = 0u64;
    while rejected < limit {
        let p = [rng.gen::<f64>(), rng.gen::<f64>()];
        if grid.any_closer(&points, p, r) {
            rejected += 1;
        } else {
            grid.insert(points.len(), p);
            points.push(p);
            rejected = 0;
        }
    }

    let total = points.len();
    let is_boundary = (0..total).map(|i| i < boundary_len).collect();
    PointCloud::new(points, vec![h_target; total], is_boundary)
}

/// Per-point neighbor lists `S_i` (sorted by index, `i` included) together
/// with the effective radius used to collect them.
#[derive(Debug, Clone, PartialEq)]
pub struct StencilSet {
    offsets: Vec<usize>,
    indices: Vec<usize>,
    distances: Vec<f64>,
    radius: Vec<f64>,
    grown: Vec<bool>,
}

impl StencilSet {
    pub fn len(&self) -> usize {
        self.radius.len()
    }

    pub fn is_empty(&self) -> bool {
        self.radius.is_empty()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.indices[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn distances(&self, i: usize) -> &[f64] {
        &self.distances[self.offsets[i]..self.offsets[i + 1]]
    }

    /// Effective smoothing length of point `i` after any radius growth.
    pub fn radius(&self, i: usize) -> f64 {
        self.radius[i]
    }

    pub fn radii(&self) -> &[f64] {
        &self.radius
    }

    pub fn was_grown(&self, i: usize) -> bool {
        self.grown[i]
    }

    pub fn min_size(&self) -> usize {
        (0..self.len()).map(|i| self.neighbors(i).len()).min().unwrap_or(0)
    }
}

pub fn build_stencils(cloud: &PointCloud, min_neighbors: usize) -> Result<StencilSet> {
    if cloud.is_empty() {
        return Err(GfdmError::Parameter("cannot build stencils on an empty cloud".into()));
    }
    if min_neighbors == 0 {
        return Err(GfdmError::Parameter("min_neighbors must be at least 1".into()));
    }
    let points = cloud.points();
    let (lo, hi) = bounding_box(points);
    let diameter = dist(lo, hi).max(f64::MIN_POSITIVE);
    let mut hs: Vec<f64> = cloud.h().to_vec();
    hs.sort_by(f64::total_cmp);
    let grid = GridIndex::from_points(points, hs[hs.len() / 2]);

    let mut offsets = Vec::with_capacity(cloud.len() + 1);
    let mut indices = Vec::new();
    let mut distances = Vec::new();
    let mut radius = Vec::with_capacity(cloud.len());
    let mut grown = Vec::with_capacity(cloud.len());
    let mut found = Vec::new();
    offsets.push(0);

    for (i, &p) in points.iter().enumerate() {
        let mut r = cloud.h()[i];
        loop {
            grid.within(points, p, r, &mut found);
            if found.len() >= min_neighbors {
                break;
            }
            if r > diameter {
                return Err(GfdmError::DegenerateCloud {
                    point: i,
                    reason: format!(
                        "only {} points within the domain diameter, {} required",
                        found.len(),
                        min_neighbors
                    ),
                });
            }
            r *= STENCIL_GROWTH;
        }
        found.sort_unstable();
        for &j in &found {
            indices.push(j);
            distances.push(dist2(points[j], p).sqrt());
        }
        offsets.push(indices.len());
        grown.push(r > cloud.h()[i]);
        radius.push(r);
    }

    Ok(StencilSet {
        offsets,
        indices,
        distances,
        radius,
        grown,
    })
}

/// Smallest distance between two distinct points of the cloud.
pub fn min_point_distance(cloud: &PointCloud) -> Result<f64> {
    let points = cloud.points();
    if points.len() < 2 {
        return Err(GfdmError::Parameter(
            "minimum point distance needs at least two points".into(),
        ));
    }
    let (lo, hi) = bounding_box(points);
    let area = ((hi[0] - lo[0]) * (hi[1] - lo[1])).max(f64::MIN_POSITIVE);
    let mut cell = (area / points.len() as f64).sqrt().max(dist(lo, hi) * 1e-6);
    loop {
        let grid = GridIndex::from_points(points, cell);
        let mut best = f64::INFINITY;
        for (i, &p) in points.iter().enumerate() {
            grid.for_each_candidate(p, cell, |j| {
                if j != i {
                    best = best.min(dist2(points[j], p));
                }
            });
        }
        let best = best.sqrt();
        // every pair closer than `cell` shares or touches a cell
        if best <= cell {
            return Ok(best);
        }
        cell *= 2.0;
    }
}

pub fn save_cloud(cloud: &PointCloud, path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::with_capacity(cloud.len() * 80);
    out.push_str(CLOUD_HEADER);
    out.push('\n');
    for i in 0..cloud.len() {
        let p = cloud.point(i);
        let _ = writeln!(
            out,
            "{},{:.16e},{:.16e},{:.16e},{}",
            i,
            p[0],
            p[1],
            cloud.h()[i],
            u8::from(cloud.is_boundary()[i])
        );
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn load_cloud(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let fail = |line: usize, reason: String| GfdmError::Format {
        path: path.to_path_buf(),
        line,
        reason,
    };

    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == CLOUD_HEADER => {}
        Some((_, header)) => {
            return Err(fail(1, format!("expected header `{CLOUD_HEADER}`, found `{header}`")))
        }
        None => return Err(fail(1, "empty file".into())),
    }

    let mut points = Vec::new();
    let mut h = Vec::new();
    let mut is_boundary = Vec::new();
    for (k, raw) in lines {
        let line = k + 1;
        let raw = raw.trim();
        if raw.is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split(',').map(str::trim).collect();
        if fields.len() != 5 {
            return Err(fail(line, format!("expected 5 fields, found {}", fields.len())));
        }
        let id: usize = fields[0]
            .parse()
            .map_err(|_| fail(line, format!("invalid id `{}`", fields[0])))?;
        if id != points.len() {
            return Err(fail(line, format!("expected id {}, found {id}", points.len())));
        }
        let num = |s: &str, name: &str| {
            s.parse::<f64>()
                .map_err(|_| fail(line, format!("invalid {name} `{s}`")))
        };
        let p = [num(fields[1], "x")?, num(fields[2], "y")?];
        let hi = num(fields[3], "h")?;
        let b = match fields[4] {
            "0" => false,
            "1" => true,
            other => return Err(fail(line, format!("is_boundary must be 0 or 1, found `{other}`"))),
        };
        check_point(p, hi, b).map_err(|reason| fail(line, reason))?;
        points.push(p);
        h.push(hi);
        is_boundary.push(b);
    }
    PointCloud::new(points, h, is_boundary)
}
