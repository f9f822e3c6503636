//! Uniform-grid cell lists for fixed-radius neighbor queries in 2D.

pub type Point = [f64; 2];

#[inline]
pub fn dist2(a: Point, b: Point) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    dx * dx + dy * dy
}

#[inline]
pub fn dist(a: Point, b: Point) -> f64 {
    dist2(a, b).sqrt()
}

/// Bucket grid over an axis-aligned box. Points outside the box are clamped
/// into the border cells, so queries stay correct for any input.
#[derive(Debug, Clone)]
pub struct GridIndex {
    origin: Point,
    cell: f64,
    nx: usize,
    ny: usize,
    cells: Vec<Vec<u32>>,
}

impl GridIndex {
    pub fn new(lo: Point, hi: Point, cell: f64) -> Self {
        assert!(cell > 0.0 && cell.is_finite(), "grid cell size must be positive");
        let span_x = (hi[0] - lo[0]).max(0.0);
        let span_y = (hi[1] - lo[1]).max(0.0);
        // cap the cell count; tiny cells on a huge box are never useful
        let cell = cell.max(span_x.max(span_y) / 4096.0);
        let nx = ((span_x / cell).floor() as usize + 1).max(1);
        let ny = ((span_y / cell).floor() as usize + 1).max(1);
        Self {
            origin: lo,
            cell,
            nx,
            ny,
            cells: vec![Vec::new(); nx * ny],
        }
    }

    /// Index every point of `points` (ids are positions in the slice).
    pub fn from_points(points: &[Point], cell: f64) -> Self {
        let (lo, hi) = bounding_box(points);
        let mut grid = Self::new(lo, hi, cell);
        for (i, &p) in points.iter().enumerate() {
            grid.insert(i, p);
        }
        grid
    }

    pub fn cell_size(&self) -> f64 {
        self.cell
    }

    #[inline]
    fn coords(&self, p: Point) -> (usize, usize) {
        let cx = ((p[0] - self.origin[0]) / self.cell).floor();
        let cy = ((p[1] - self.origin[1]) / self.cell).floor();
        let cx = if cx.is_nan() || cx < 0.0 { 0 } else { (cx as usize).min(self.nx - 1) };
        let cy = if cy.is_nan() || cy < 0.0 { 0 } else { (cy as usize).min(self.ny - 1) };
        (cx, cy)
    }

    pub fn insert(&mut self, id: usize, p: Point) {
        let (cx, cy) = self.coords(p);
        self.cells[cy * self.nx + cx].push(id as u32);
    }

    /// Visit every stored id whose cell intersects the query disk. The
    /// callback receives candidate ids only; callers filter by distance.
    #[inline]
    pub fn for_each_candidate(&self, p: Point, radius: f64, mut f: impl FnMut(usize)) {
        let reach = (radius / self.cell).ceil() as isize;
        let (cx, cy) = self.coords(p);
        let (cx, cy) = (cx as isize, cy as isize);
        let y0 = (cy - reach).max(0) as usize;
        let y1 = ((cy + reach) as usize).min(self.ny - 1);
        let x0 = (cx - reach).max(0) as usize;
        let x1 = ((cx + reach) as usize).min(self.nx - 1);
        for y in y0..=y1 {
            let row = y * self.nx;
            for x in x0..=x1 {
                for &id in &self.cells[row + x] {
                    f(id as usize);
                }
            }
        }
    }

    /// True if some stored point lies strictly closer than `radius` to `p`.
    pub fn any_closer(&self, points: &[Point], p: Point, radius: f64) -> bool {
        let r2 = radius * radius;
        let reach = (radius / self.cell).ceil() as isize;
        let (cx, cy) = self.coords(p);
        let (cx, cy) = (cx as isize, cy as isize);
        let y0 = (cy - reach).max(0) as usize;
        let y1 = ((cy + reach) as usize).min(self.ny - 1);
        let x0 = (cx - reach).max(0) as usize;
        let x1 = ((cx + reach) as usize).min(self.nx - 1);
        for y in y0..=y1 {
            let row = y * self.nx;
            for x in x0..=x1 {
                if self.cells[row + x].iter().any(|&id| dist2(points[id as usize], p) < r2) {
                    return true;
                }
            }
        }
        false
    }

    /// Ids of `points` within `radius` of `p` (inclusive), unsorted.
    pub fn within(&self, points: &[Point], p: Point, radius: f64, out: &mut Vec<usize>) {
        out.clear();
        let r2 = radius * radius;
        self.for_each_candidate(p, radius, |j| {
            if dist2(points[j], p) <= r2 {
                out.push(j);
            }
        });
    }
}

pub fn bounding_box(points: &[Point]) -> (Point, Point) {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for p in points {
        for k in 0..2 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    if points.is_empty() {
        ([0.0, 0.0], [1.0, 1.0])
    } else {
        (lo, hi)
    }
}
