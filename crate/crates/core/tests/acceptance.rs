//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion:
//!
//! ```text
//! cargo test --release --test acceptance -- --nocapture
//! ```

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use gfdm::benchmark::{estimate_record_order, run_on, Discretization, Method, RunOptions, RunRecord, TestCase};
use gfdm::diffusion::ReconstructionScheme;
use gfdm::mls::dominance_alpha;
use gfdm::pointcloud::{on_unit_square_boundary, PointCloud};
use gfdm::solver::{solve_sparse, LinearSystem};
use gfdm::sparse::CsrMatrix;
use gfdm::spatial::Point;
use gfdm::verification::{reconstruction_error, run_suite, Report, Suite, PAIR_SEPARATIONS};
use gfdm::voronoi::compute_voronoi;

const ELLIPTIC_H: [f64; 4] = [0.16, 0.08, 0.04, 0.02];
const PARABOLIC_H: [f64; 3] = [0.16, 0.08, 0.04];
const IDENTITY_H: f64 = 0.08;
const IDENTITY_SEEDS: u64 = 10;
/// Exact-identity report lines per seed.
const IDENTITY_ENTRIES: usize = 19;

const SECOND_ORDER: (f64, f64) = (1.6, 2.6);
const FOURTH_ORDER_MIN: f64 = 3.5;
const PARABOLIC_FOURTH_MIN: f64 = 3.0;
const RECON_ERROR_FACTOR: f64 = 3.0;
const BELOW_FOURTH: f64 = 3.0;
const MLS_INTERFACE_MAX: f64 = 0.5;
const INTERFACE_MIN: f64 = 0.5;
const TC5_AVERAGE_MIN: f64 = 0.5;
const TC5_GROWTH_MAX: f64 = 2.0;

const ALPHA_ROWS: usize = 1000;
const ALPHA_TOL: f64 = 1e-6;
const VORONOI_POINTS: usize = 16;
const VORONOI_SCANLINES: usize = 4000;
const VORONOI_TOL: f64 = 1e-4;
const DENSE_SIZE: usize = 50;
const DENSE_SYSTEMS: usize = 20;
const DENSE_TOL: f64 = 1e-8;
const VOLUME_TOL: f64 = 1e-9;

const MEAN_ORDER_MIN: f64 = 2.0;
const HERMITE_ORDER_MIN: f64 = 3.0;
/// The means are exactly second order, so a fitted slope lands on either
/// side of 2 by the finite-separation bias.
const SLOPE_TOL: f64 = 0.05;

use Method::{Ddo2, Ddo4, Fvm, Mls2, Mls4};
use ReconstructionScheme::{Arithmetic as Am, Geometric as Gm, Harmonic as Hm, Hermite as Gr};

struct Outcome {
    lines: Vec<String>,
    failed: Vec<usize>,
}

impl Outcome {
    fn record(&mut self, id: usize, pass: bool, detail: String) {
        let status = if pass { "PASS" } else { "FAIL" };
        let line = format!("criterion {id}: {status}  {detail}");
        println!("{line}");
        self.lines.push(line);
        if !pass {
            self.failed.push(id);
        }
    }
}

fn sweep(discs: &mut [Discretization], case: u8, method: Method, scheme: ReconstructionScheme) -> Vec<RunRecord> {
    let case = TestCase::new(case).unwrap();
    let options = RunOptions::default();
    discs.iter_mut().map(|d| run_on(d, case, method, scheme, &options)).collect()
}

fn order(records: &[RunRecord]) -> f64 {
    estimate_record_order(records).slope.unwrap_or(f64::NAN)
}

fn finest(records: &[RunRecord]) -> f64 {
    records.last().and_then(|r| r.error_value()).unwrap_or(f64::INFINITY)
}

fn within(x: f64, (lo, hi): (f64, f64)) -> bool {
    x >= lo && x <= hi
}

fn tc1(discs: &mut [Discretization], out: &mut Outcome) {
    let mut orders = Vec::new();
    let mut errors = Vec::new();
    for m in [Fvm, Mls2, Mls4, Ddo2, Ddo4] {
        let rec = sweep(discs, 1, m, Am);
        orders.push((m, order(&rec)));
        errors.push((m, finest(&rec)));
    }
    let second_ok = orders[..4].iter().all(|&(_, o)| within(o, SECOND_ORDER));
    let fourth_ok = orders[4].1 >= FOURTH_ORDER_MIN;
    let smallest = errors.iter().all(|&(m, e)| m == Ddo4 || errors[4].1 < e);
    let detail = orders
        .iter()
        .zip(&errors)
        .map(|(&(m, o), &(_, e))| format!("{m}={o:.2} ({e:.2e})"))
        .collect::<Vec<_>>()
        .join(" ");
    out.record(1, second_ok && fourth_ok && smallest, format!("TC1 orders {detail}"));
}

fn tc1_reconstructions(discs: &mut [Discretization], out: &mut Outcome) {
    let mut results = Vec::new();
    for scheme in [Am, Hm, Gm, Gr] {
        let rec = sweep(discs, 1, Ddo4, scheme);
        results.push((scheme, order(&rec), finest(&rec)));
    }
    let orders_ok = results.iter().all(|r| r.1 >= FOURTH_ORDER_MIN);
    let lo = results.iter().map(|r| r.2).fold(f64::INFINITY, f64::min);
    let hi = results.iter().map(|r| r.2).fold(0.0, f64::max);
    let detail = results
        .iter()
        .map(|(s, o, e)| format!("{s}={o:.2} ({e:.2e})"))
        .collect::<Vec<_>>()
        .join(" ");
    out.record(
        2,
        orders_ok && hi <= RECON_ERROR_FACTOR * lo,
        format!("TC1 ddo4 per reconstruction {detail}, spread {:.2}", hi / lo),
    );
}

fn tc2(discs: &mut [Discretization], out: &mut Outcome) {
    let mut orders = Vec::new();
    for m in [Fvm, Mls2, Mls4, Ddo2, Ddo4] {
        orders.push((m, order(&sweep(discs, 2, m, Am))));
    }
    let ok = orders
        .iter()
        .all(|&(m, o)| if m == Ddo4 { o >= FOURTH_ORDER_MIN } else { o < BELOW_FOURTH });
    let detail = orders.iter().map(|(m, o)| format!("{m}={o:.2}")).collect::<Vec<_>>().join(" ");
    out.record(3, ok, format!("TC2 orders {detail}"));
}

fn tc3(discs: &mut [Discretization], out: &mut Outcome) {
    let mls = order(&sweep(discs, 3, Mls2, Hm));
    let mut others = Vec::new();
    let mut ddo2_hm = f64::INFINITY;
    for m in [Fvm, Ddo2, Ddo4] {
        let rec = sweep(discs, 3, m, Hm);
        if m == Ddo2 {
            ddo2_hm = finest(&rec);
        }
        others.push((m, order(&rec)));
    }
    let ddo2_am = finest(&sweep(discs, 3, Ddo2, Am));
    let ok = mls <= MLS_INTERFACE_MAX && others.iter().all(|&(_, o)| o >= INTERFACE_MIN) && ddo2_hm < ddo2_am;
    let detail = others.iter().map(|(m, o)| format!("{m}={o:.2}")).collect::<Vec<_>>().join(" ");
    out.record(
        4,
        ok,
        format!("TC3 mls2={mls:.2} {detail}, ddo2 finest hm {ddo2_hm:.2e} vs am {ddo2_am:.2e}"),
    );
}

fn tc4(discs: &mut [Discretization], out: &mut Outcome) {
    let mut orders = Vec::new();
    for m in [Fvm, Ddo2, Ddo4] {
        orders.push((m, order(&sweep(discs, 4, m, Am))));
    }
    let ok = orders.iter().all(|&(m, o)| {
        if m == Ddo4 {
            o >= PARABOLIC_FOURTH_MIN
        } else {
            within(o, SECOND_ORDER)
        }
    });
    let detail = orders.iter().map(|(m, o)| format!("{m}={o:.2}")).collect::<Vec<_>>().join(" ");
    out.record(5, ok, format!("TC4 orders {detail} (ddo4 threshold {PARABOLIC_FOURTH_MIN})"));
}

fn tc5(discs: &mut [Discretization], out: &mut Outcome) {
    let rec = sweep(discs, 5, Ddo2, Hm);
    // running orders between consecutive levels
    let errors: Vec<f64> = rec.iter().map(|r| r.error_value().unwrap_or(f64::INFINITY)).collect();
    let mut running = Vec::new();
    for w in rec.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        if let (Some(e0), Some(e1)) = (a.error_value(), b.error_value()) {
            running.push((e1 / e0).ln() / ((b.n as f64).powf(-0.5) / (a.n as f64).powf(-0.5)).ln());
        }
    }
    let average = if running.len() + 1 == rec.len() {
        running.iter().sum::<f64>() / running.len() as f64
    } else {
        f64::NAN
    };
    let bounded = errors.iter().all(|&e| e <= TC5_GROWTH_MAX * errors[0]);
    out.record(
        6,
        average >= TC5_AVERAGE_MIN && bounded,
        format!(
            "TC5 ddo2-hm average order {average:.2}, errors {}",
            errors.iter().map(|e| format!("{e:.2e}")).collect::<Vec<_>>().join(" ")
        ),
    );
}

/// Summary entries of the report that are exact identities.
fn identity_entries(report: &Report) -> Vec<(String, bool, f64)> {
    report
        .entries
        .iter()
        .filter(|e| e.h.is_none())
        .filter(|e| {
            matches!(
                e.check.as_str(),
                "reproduction" | "unit_reduction" | "product_rule" | "sign_inheritance" | "mean_ordering"
            ) || (e.check == "ddo_consistency" && e.param.ends_with("a=00"))
                || (e.check == "enrichment_reconstruction" && e.param.ends_with("|a|>=1"))
        })
        .map(|e| (format!("{} {}", e.check, e.param), e.pass == Some(true), e.residual))
        .collect()
}

fn identities(out: &mut Outcome, volume_errors: &mut Vec<f64>) {
    let mut failures = Vec::new();
    let mut checked = 0;
    for seed in 1..=IDENTITY_SEEDS {
        let report = run_suite(Suite::All, &[IDENTITY_H], seed).unwrap();
        let entries = identity_entries(&report);
        checked += entries.len();
        for (name, pass, residual) in entries {
            if !pass {
                failures.push(format!("seed {seed} {name} {residual:.2e}"));
            }
        }
        let d = Discretization::new(IDENTITY_H, seed).unwrap();
        volume_errors.push((d.diagram.total_volume() - 1.0).abs());
    }
    let expected = IDENTITY_SEEDS as usize * IDENTITY_ENTRIES;
    let ok = failures.is_empty() && checked == expected;
    let detail = if failures.is_empty() {
        String::new()
    } else {
        format!(": {}", failures.join("; "))
    };
    out.record(7, ok, format!("{checked} identity checks over {IDENTITY_SEEDS} seeds{detail}"));
}

fn objective(off: &[f64], zero_off: &[f64], diag: f64, t: f64) -> f64 {
    off.iter().zip(zero_off).map(|(a, b)| (a + t * b).powi(2)).sum::<f64>() / (diag + t).powi(2)
}

fn golden_section(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - ratio * (hi - lo);
    let mut x2 = lo + ratio * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..400 {
        if f1 < f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - ratio * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + ratio * (hi - lo);
            f2 = f(x2);
        }
    }
    0.5 * (lo + hi)
}

/// Minimizer by scanning both sides of the pole at `t = -diag`.
fn scanned_alpha(off: &[f64], zero_off: &[f64], diag: f64) -> f64 {
    let f = |t| objective(off, zero_off, diag, t);
    let gap = 1e-9 * (1.0 + diag.abs());
    let left = golden_section(f, -1e6, -diag - gap);
    let right = golden_section(f, -diag + gap, 1e6);
    if f(left) < f(right) {
        left
    } else {
        right
    }
}

fn alpha_mismatch() -> (f64, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    let mut tested = 0;
    while tested < ALPHA_ROWS {
        let k = rng.gen_range(4..16);
        let off: Vec<f64> = (0..k).map(|_| rng.gen_range(-0.5..2.0)).collect();
        let zero_off: Vec<f64> = (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let diag = -off.iter().sum::<f64>() * rng.gen_range(0.5..1.5);
        let closed = dominance_alpha(&off, &zero_off, diag);
        // a minimizer far outside the scanned window cannot be bracketed
        if closed.abs() > 1e5 {
            continue;
        }
        let scanned = scanned_alpha(&off, &zero_off, diag);
        worst = worst.max((closed - scanned).abs() / closed.abs().max(1.0));
        tested += 1;
    }
    (worst, tested)
}

fn jittered_cloud(seed: u64) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let side = (VORONOI_POINTS as f64).sqrt() as usize;
    let points: Vec<Point> = (0..VORONOI_POINTS)
        .map(|k| {
            let (cx, cy) = ((k % side) as f64, (k / side) as f64);
            [
                (cx + 0.5 + rng.gen_range(-0.4..0.4)) / side as f64,
                (cy + 0.5 + rng.gen_range(-0.4..0.4)) / side as f64,
            ]
        })
        .collect();
    let flags = points.iter().map(|&p| on_unit_square_boundary(p)).collect();
    PointCloud::new(points, vec![1.0 / side as f64; VORONOI_POINTS], flags).unwrap()
}

/// Cell areas by the midpoint rule over horizontal scanlines; on each line
/// a cell is the interval where every bisector inequality holds.
fn scanline_volumes(points: &[Point], lines: usize) -> Vec<f64> {
    let mut volumes = vec![0.0; points.len()];
    let dy = 1.0 / lines as f64;
    for k in 0..lines {
        let y = (k as f64 + 0.5) * dy;
        for (i, &xi) in points.iter().enumerate() {
            let (mut lo, mut hi) = (0.0f64, 1.0f64);
            for (j, &xj) in points.iter().enumerate() {
                if j == i {
                    continue;
                }
                // |p - xi|^2 <= |p - xj|^2  <=>  a x <= b
                let a = 2.0 * (xj[0] - xi[0]);
                let b = (xj[0] * xj[0] + xj[1] * xj[1]) - (xi[0] * xi[0] + xi[1] * xi[1]) - 2.0 * y * (xj[1] - xi[1]);
                if a > 0.0 {
                    hi = hi.min(b / a);
                } else if a < 0.0 {
                    lo = lo.max(b / a);
                } else if b < 0.0 {
                    hi = lo;
                }
            }
            volumes[i] += (hi - lo).max(0.0) * dy;
        }
    }
    volumes
}

fn voronoi_mismatch() -> f64 {
    let cloud = jittered_cloud(11);
    let diagram = compute_voronoi(&cloud).unwrap();
    let oracle = scanline_volumes(cloud.points(), VORONOI_SCANLINES);
    diagram
        .volumes()
        .iter()
        .zip(&oracle)
        .map(|(v, o)| (v - o).abs() / o)
        .fold(0.0, f64::max)
}

fn dense_mismatch() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = DENSE_SIZE;
    let mut worst = 0.0f64;
    for _ in 0..DENSE_SYSTEMS {
        let mut rows = Vec::with_capacity(n);
        let mut dense = DMatrix::zeros(n, n);
        for i in 0..n {
            let mut cols = Vec::new();
            let mut vals = Vec::new();
            let mut off_sum = 0.0;
            for j in 0..n {
                if j != i && rng.gen_bool(0.2) {
                    let v: f64 = rng.gen_range(-1.0..1.0);
                    off_sum += v.abs();
                    cols.push(j);
                    vals.push(v);
                }
            }
            cols.push(i);
            vals.push(off_sum + rng.gen_range(0.1..1.0));
            let mut order: Vec<usize> = (0..cols.len()).collect();
            order.sort_by_key(|&k| cols[k]);
            let cols: Vec<usize> = order.iter().map(|&k| cols[k]).collect();
            let vals: Vec<f64> = order.iter().map(|&k| vals[k]).collect();
            for (&j, &v) in cols.iter().zip(&vals) {
                dense[(i, j)] = v;
            }
            rows.push((cols, vals));
        }
        let rhs: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let system = LinearSystem::new(CsrMatrix::from_rows(n, rows), rhs.clone()).unwrap();
        let sparse = solve_sparse(&system, 1e-13).unwrap();
        let exact = dense.lu().solve(&DVector::from_vec(rhs)).unwrap();
        let diff = sparse.iter().zip(exact.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        worst = worst.max(diff / exact.norm());
    }
    worst
}

fn oracles(out: &mut Outcome, volume_errors: &[f64]) {
    let (alpha, rows) = alpha_mismatch();
    let voronoi = voronoi_mismatch();
    let dense = dense_mismatch();
    let volume = volume_errors.iter().copied().fold(0.0, f64::max);
    let ok = alpha <= ALPHA_TOL && voronoi <= VORONOI_TOL && dense <= DENSE_TOL && volume <= VOLUME_TOL;
    out.record(
        8,
        ok,
        format!(
            "alpha vs scan {alpha:.1e} over {rows} rows, voronoi vs scanlines {voronoi:.1e}, \
             sparse vs dense {dense:.1e}, volume sum {volume:.1e} over {} clouds",
            volume_errors.len()
        ),
    );
}

fn midpoint_orders(out: &mut Outcome) {
    let hs = PAIR_SEPARATIONS;
    let mut results = Vec::new();
    for scheme in [Am, Hm, Gm, Gr] {
        let errors: Vec<f64> = hs.iter().map(|&s| reconstruction_error(scheme, s, 3).unwrap()).collect();
        let slope = gfdm::benchmark::fit_slope(&hs, &errors).slope.unwrap_or(f64::NAN);
        let min = if scheme == Gr { HERMITE_ORDER_MIN } else { MEAN_ORDER_MIN };
        results.push((scheme, slope, slope >= min - SLOPE_TOL));
    }
    let detail = results.iter().map(|(s, o, _)| format!("{s}={o:.3}")).collect::<Vec<_>>().join(" ");
    out.record(9, results.iter().all(|r| r.2), format!("midpoint reconstruction orders {detail}"));
}

#[test]
fn acceptance() {
    let mut out = Outcome {
        lines: Vec::new(),
        failed: Vec::new(),
    };
    let mut volume_errors = Vec::new();

    let mut elliptic: Vec<Discretization> = ELLIPTIC_H.iter().map(|&h| Discretization::new(h, 1).unwrap()).collect();
    volume_errors.extend(elliptic.iter().map(|d| (d.diagram.total_volume() - 1.0).abs()));
    tc1(&mut elliptic, &mut out);
    tc1_reconstructions(&mut elliptic, &mut out);
    tc2(&mut elliptic, &mut out);
    tc3(&mut elliptic, &mut out);

    let mut parabolic: Vec<Discretization> = elliptic.into_iter().take(PARABOLIC_H.len()).collect();
    assert!(parabolic.iter().zip(PARABOLIC_H).all(|(d, h)| d.h == h));
    tc4(&mut parabolic, &mut out);
    tc5(&mut parabolic, &mut out);
    drop(parabolic);

    identities(&mut out, &mut volume_errors);
    oracles(&mut out, &volume_errors);
    midpoint_orders(&mut out);

    assert_eq!(out.lines.len(), 9);
    assert!(out.failed.is_empty(), "failed criteria {:?}", out.failed);
}
