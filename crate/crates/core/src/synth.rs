//! Synthetic label grids with known constraint status, and the scaling
//! benchmark built on them.

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::constraints::{reduce, Connectivity, Constraint, ConstraintSet};
use crate::detect::{detect_tasks, Algorithm};
use crate::error::{Error, Result};
use crate::grid::{LabelGrid, Shape};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scenario {
    /// Background, an inner class 1, and a wall of class 2 around it.
    NestedRings,
    /// One box per non-background class, pairwise mutually exclusive.
    ExclusionBlobs,
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::NestedRings => "nested_rings",
            Self::ExclusionBlobs => "exclusion_blobs",
        })
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nested_rings" => Ok(Self::NestedRings),
            "exclusion_blobs" => Ok(Self::ExclusionBlobs),
            other => Err(Error::Geometry(format!("unknown scenario {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthSpec {
    pub dims: Vec<usize>,
    pub num_classes: u16,
    pub scenario: Scenario,
    /// Number of planted breaches; 0 yields a constraint-satisfying grid.
    pub violation_count: usize,
    /// Wall thickness (nested rings) or minimum gap (blobs); also the width
    /// `d` of the emitted constraints.
    pub wall_thickness: usize,
    pub seed: u64,
}

impl SynthSpec {
    pub fn new(dims: &[usize], scenario: Scenario) -> Self {
        Self {
            dims: dims.to_vec(),
            num_classes: 3,
            scenario,
            violation_count: 0,
            wall_thickness: 1,
            seed: 0,
        }
    }

    pub fn ndim(&self) -> usize {
        self.dims.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Synthesized {
    pub grid: LabelGrid,
    pub constraints: ConstraintSet,
    /// One coordinate per planted breach; each is a critical site.
    pub planted: Vec<Vec<usize>>,
}

/// Axis-aligned box `[lo, hi)` in padded `[z, y, x]` coordinates.
#[derive(Debug, Clone, Copy)]
struct Block {
    lo: [usize; 3],
    hi: [usize; 3],
}

impl Block {
    fn fill(&self, shape: Shape, labels: &mut [u8], label: u8) {
        for z in self.lo[0]..self.hi[0] {
            for y in self.lo[1]..self.hi[1] {
                for x in self.lo[2]..self.hi[2] {
                    labels[shape.index3([z, y, x])] = label;
                }
            }
        }
    }
}

fn spatial_axes(shape: Shape) -> std::ops::Range<usize> {
    3 - shape.ndim()..3
}

pub fn generate(spec: &SynthSpec) -> Result<Synthesized> {
    let shape = Shape::new(&spec.dims).map_err(|e| Error::Geometry(e.to_string()))?;
    if spec.wall_thickness == 0 {
        return Err(Error::Geometry("wall thickness must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    match spec.scenario {
        Scenario::NestedRings => nested_rings(spec, shape, &mut rng),
        Scenario::ExclusionBlobs => exclusion_blobs(spec, shape, &mut rng),
    }
}

fn nested_rings(spec: &SynthSpec, shape: Shape, rng: &mut ChaCha8Rng) -> Result<Synthesized> {
    const INNER: u8 = 1;
    const WALL: u8 = 2;
    if spec.num_classes < 3 {
        return Err(Error::Geometry(
            "nested_rings needs at least 3 classes".into(),
        ));
    }
    let t = spec.wall_thickness;
    let ext = shape.extents();
    let mut inner = Block {
        lo: [0; 3],
        hi: [1; 3],
    };
    for axis in spatial_axes(shape) {
        let n = ext[axis];
        if n < 2 * t + 1 {
            return Err(Error::Geometry(format!(
                "extent {n} cannot hold a wall of thickness {t} on both sides of the inner class"
            )));
        }
        let room = n - 2 * t;
        let len = rng.gen_range(room.div_ceil(2)..=room);
        let start = t + rng.gen_range(0..=room - len);
        inner.lo[axis] = start;
        inner.hi[axis] = start + len;
    }
    let mut outer = inner;
    for axis in spatial_axes(shape) {
        outer.lo[axis] -= t;
        outer.hi[axis] += t;
    }

    let mut labels = vec![0u8; shape.len()];
    outer.fill(shape, &mut labels, WALL);
    inner.fill(shape, &mut labels, INNER);

    // Candidate breaches: an inner site on a face, with a straight channel
    // of background cut outward through the wall.
    let mut candidates = Vec::new();
    for z in inner.lo[0]..inner.hi[0] {
        for y in inner.lo[1]..inner.hi[1] {
            for x in inner.lo[2]..inner.hi[2] {
                let site = [z, y, x];
                for axis in spatial_axes(shape) {
                    if site[axis] == inner.lo[axis] {
                        candidates.push((site, axis, -1isize));
                    }
                    if site[axis] + 1 == inner.hi[axis] {
                        candidates.push((site, axis, 1isize));
                    }
                }
            }
        }
    }
    candidates.shuffle(rng);
    let mut planted_sites = Vec::new();
    for (site, axis, dir) in candidates {
        if planted_sites.len() == spec.violation_count {
            break;
        }
        if planted_sites.contains(&site) {
            continue;
        }
        for step in 1..=t {
            let mut p = site;
            p[axis] = (site[axis] as isize + dir * step as isize) as usize;
            labels[shape.index3(p)] = 0;
        }
        planted_sites.push(site);
    }
    if planted_sites.len() < spec.violation_count {
        return Err(Error::Geometry(format!(
            "only {} breach sites available, {} requested",
            planted_sites.len(),
            spec.violation_count
        )));
    }

    let grid = LabelGrid::new(&spec.dims, labels, spec.num_classes)?;
    let constraints = ConstraintSet::new(
        spec.num_classes,
        vec![Constraint::contain(INNER, WALL).with_width(t)],
    )?;
    let planted = planted_sites
        .into_iter()
        .map(|s| s[3 - shape.ndim()..].to_vec())
        .collect();
    Ok(Synthesized {
        grid,
        constraints,
        planted,
    })
}

fn exclusion_blobs(spec: &SynthSpec, shape: Shape, rng: &mut ChaCha8Rng) -> Result<Synthesized> {
    if spec.num_classes < 3 {
        return Err(Error::Geometry(
            "exclusion_blobs needs at least 3 classes".into(),
        ));
    }
    let blobs = usize::from(spec.num_classes) - 1;
    let gap = spec.wall_thickness;
    let ext = shape.extents();
    let w = ext[2];
    let needed = blobs + (blobs - 1) * gap;
    if w < needed {
        return Err(Error::Geometry(format!(
            "last extent {w} cannot hold {blobs} blobs separated by {gap}"
        )));
    }
    let available = w - (blobs - 1) * gap;
    let width = available / blobs;
    let slack = available - width * blobs;
    let shift = rng.gen_range(0..=slack);

    let mut labels = vec![0u8; shape.len()];
    let mut placed = Vec::with_capacity(blobs);
    for b in 0..blobs {
        let mut block = Block {
            lo: [0; 3],
            hi: [1; 3],
        };
        let x0 = shift + b * (width + gap);
        block.lo[2] = x0;
        block.hi[2] = x0 + width;
        for axis in spatial_axes(shape).filter(|&a| a != 2) {
            let n = ext[axis];
            let len = rng.gen_range(n.div_ceil(2)..=n);
            let start = rng.gen_range(0..=n - len);
            block.lo[axis] = start;
            block.hi[axis] = start + len;
        }
        block.fill(shape, &mut labels, (b + 1) as u8);
        placed.push(block);
    }

    // Candidate breaches: a stray site of the neighboring blob's class just
    // outside a blob face that looks at that neighbor.
    let mut candidates = Vec::new();
    for (b, block) in placed.iter().enumerate() {
        let faces = [
            (b + 1 < blobs).then(|| (block.hi[2], b + 2)),
            (b > 0).then(|| (block.lo[2] - 1, b)),
        ];
        for (x, neighbor) in faces.into_iter().flatten() {
            for z in block.lo[0]..block.hi[0] {
                for y in block.lo[1]..block.hi[1] {
                    candidates.push(([z, y, x], neighbor as u8));
                }
            }
        }
    }
    candidates.shuffle(rng);
    let mut planted_sites: Vec<[usize; 3]> = Vec::new();
    for (site, label) in candidates {
        if planted_sites.len() == spec.violation_count {
            break;
        }
        if planted_sites.contains(&site) {
            continue;
        }
        labels[shape.index3(site)] = label;
        planted_sites.push(site);
    }
    if planted_sites.len() < spec.violation_count {
        return Err(Error::Geometry(format!(
            "only {} breach sites available, {} requested",
            planted_sites.len(),
            spec.violation_count
        )));
    }

    let mut constraints = Vec::new();
    for a in 1..=blobs {
        for b in a + 1..=blobs {
            constraints.push(Constraint::exclude(a as u8, b as u8).with_width(gap));
        }
    }
    Ok(Synthesized {
        grid: LabelGrid::new(&spec.dims, labels, spec.num_classes)?,
        constraints: ConstraintSet::new(spec.num_classes, constraints)?,
        planted: planted_sites
            .into_iter()
            .map(|s| s[3 - shape.ndim()..].to_vec())
            .collect(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub algorithms: Vec<Algorithm>,
    /// Per-axis sizes `N`.
    pub sizes: Vec<usize>,
    /// Odd kernel extents `k = 2d + 1`.
    pub extents: Vec<usize>,
    pub repeats: usize,
    pub ndim: usize,
    pub seed: u64,
    /// Worker threads for detection; 1 keeps the complexity fits clean.
    pub threads: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            algorithms: Algorithm::CONCRETE.to_vec(),
            sizes: vec![256],
            extents: vec![3, 5, 9, 17],
            repeats: 5,
            ndim: 2,
            seed: 0,
            threads: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub algorithm: Algorithm,
    pub ndim: usize,
    pub n: usize,
    pub k: usize,
    pub repeat: usize,
    pub seconds: f64,
    pub violations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchCell {
    pub algorithm: Algorithm,
    pub n: usize,
    pub k: usize,
    pub median_seconds: f64,
    pub violations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingFit {
    pub algorithm: Algorithm,
    pub n: usize,
    /// Least-squares slope of `ln(time)` against `ln(k)`.
    pub slope: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub cells: Vec<BenchCell>,
    pub fits: Vec<ScalingFit>,
}

pub const CSV_HEADER: &str = "algorithm,ndim,N,k,repeat,seconds,violations";

impl BenchReport {
    pub fn median(&self, algorithm: Algorithm, n: usize, k: usize) -> Option<f64> {
        self.cells
            .iter()
            .find(|c| c.algorithm == algorithm && c.n == n && c.k == k)
            .map(|c| c.median_seconds)
    }

    pub fn slope(&self, algorithm: Algorithm, n: usize) -> Option<f64> {
        self.fits
            .iter()
            .find(|f| f.algorithm == algorithm && f.n == n)
            .map(|f| f.slope)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{:.9},{}",
                r.algorithm, r.ndim, r.n, r.k, r.repeat, r.seconds, r.violations
            );
        }
        out
    }

    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:<12} {:>6} {:>4} {:>14} {:>11}\n",
            "algorithm", "N", "k", "median (ms)", "violations"
        );
        for c in &self.cells {
            let _ = writeln!(
                out,
                "{:<12} {:>6} {:>4} {:>14.3} {:>11}",
                c.algorithm.name(),
                c.n,
                c.k,
                c.median_seconds * 1e3,
                c.violations
            );
        }
        if !self.fits.is_empty() {
            out.push_str("\nlog-log slope of time vs k:\n");
            for f in &self.fits {
                let _ = writeln!(
                    out,
                    "  {:<12} N={:<6} slope={:.3}",
                    f.algorithm.name(),
                    f.n,
                    f.slope
                );
            }
        }
        out
    }
}

/// Least-squares slope of `y` against `x`.
pub fn fit_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    Some(sxy / sxx)
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Benchmark input for one cell: nested rings of side `n` with a wall as
/// thick as the constraint width, a few planted breaches, and a box kernel
/// of extent `k`.
pub fn bench_input(ndim: usize, n: usize, k: usize, seed: u64) -> Result<Synthesized> {
    let d = (k - 1) / 2;
    let mut spec = SynthSpec::new(&vec![n; ndim], Scenario::NestedRings);
    spec.wall_thickness = d;
    spec.violation_count = 4;
    spec.seed = seed;
    generate(&spec)
}

struct Cell {
    algorithm: Algorithm,
    n: usize,
    k: usize,
    input: usize,
    violations: usize,
    times: Vec<f64>,
}

fn run_bench(cfg: &BenchConfig) -> Result<BenchReport> {
    let mut inputs = Vec::new();
    let mut cells = Vec::new();
    for &n in &cfg.sizes {
        for &k in &cfg.extents {
            let synth = bench_input(cfg.ndim, n, k, cfg.seed)?;
            let tasks = reduce(&synth.constraints, Connectivity::Box, cfg.ndim)?;
            let mut reference: Option<(Algorithm, usize)> = None;
            for &algorithm in &cfg.algorithms {
                // Warm-up, discarded.
                let violations = detect_tasks(&synth.grid, &tasks, algorithm)?.violation_count;
                match reference {
                    Some((first, v)) if v != violations => {
                        return Err(Error::Bench(format!(
                            "violation counts disagree at N={n}, k={k}: {first} found {v}, {algorithm} found {violations}"
                        )))
                    }
                    None => reference = Some((algorithm, violations)),
                    _ => {}
                }
                cells.push(Cell {
                    algorithm,
                    n,
                    k,
                    input: inputs.len(),
                    violations,
                    times: Vec::with_capacity(cfg.repeats),
                });
            }
            inputs.push((synth.grid, tasks));
        }
    }

    // Round-robin over cells so slow phases of a noisy machine spread
    // across all cells instead of skewing one.
    for _ in 0..cfg.repeats {
        for cell in &mut cells {
            let (grid, tasks) = &inputs[cell.input];
            let start = Instant::now();
            let r = detect_tasks(grid, tasks, cell.algorithm)?;
            let seconds = start.elapsed().as_secs_f64();
            if seconds <= 0.0 {
                return Err(Error::Bench(format!(
                    "{} at N={}, k={} ran below clock resolution; increase N",
                    cell.algorithm, cell.n, cell.k
                )));
            }
            debug_assert_eq!(r.violation_count, cell.violations);
            cell.times.push(seconds);
        }
    }

    let mut report = BenchReport::default();
    for mut cell in cells {
        for (repeat, &seconds) in cell.times.iter().enumerate() {
            report.rows.push(BenchRow {
                algorithm: cell.algorithm,
                ndim: cfg.ndim,
                n: cell.n,
                k: cell.k,
                repeat,
                seconds,
                violations: cell.violations,
            });
        }
        report.cells.push(BenchCell {
            algorithm: cell.algorithm,
            n: cell.n,
            k: cell.k,
            median_seconds: median(&mut cell.times),
            violations: cell.violations,
        });
    }
    for &algorithm in &cfg.algorithms {
        for &n in &cfg.sizes {
            let points: Vec<(f64, f64)> = report
                .cells
                .iter()
                .filter(|c| c.algorithm == algorithm && c.n == n)
                .map(|c| ((c.k as f64).ln(), c.median_seconds.ln()))
                .collect();
            if let Some(slope) = fit_slope(&points) {
                report.fits.push(ScalingFit {
                    algorithm,
                    n,
                    slope,
                });
            }
        }
    }
    Ok(report)
}

/// Times every algorithm on every `(N, k)` cell: one discarded warm-up, then
/// `repeats` timed runs interleaved across cells, reporting the median and
/// the log-log slope of time against `k` per algorithm and size.
pub fn bench(cfg: &BenchConfig) -> Result<BenchReport> {
    if cfg.algorithms.is_empty() || cfg.sizes.is_empty() || cfg.extents.is_empty() {
        return Err(Error::Bench(
            "algorithm, size and extent lists must be non-empty".into(),
        ));
    }
    if cfg.repeats == 0 {
        return Err(Error::Bench("repeats must be >= 1".into()));
    }
    if !(2..=3).contains(&cfg.ndim) {
        return Err(Error::Bench(format!(
            "ndim must be 2 or 3, got {}",
            cfg.ndim
        )));
    }
    if let Some(k) = cfg.extents.iter().find(|&&k| k < 3 || k % 2 == 0) {
        return Err(Error::Bench(format!(
            "kernel extent must be odd and >= 3, got {k}"
        )));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads.max(1))
        .build()
        .map_err(|e| Error::Bench(e.to_string()))?;
    pool.install(|| run_bench(cfg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detect::detect;

    #[test]
    fn clean_grids_have_no_violations() {
        for scenario in [Scenario::NestedRings, Scenario::ExclusionBlobs] {
            for seed in 0..20 {
                let mut spec = SynthSpec::new(&[24, 20], scenario);
                spec.num_classes = 4;
                spec.wall_thickness = 1 + (seed as usize % 3);
                spec.seed = seed;
                let s = generate(&spec).unwrap();
                let conn = Connectivity::Eight;
                let r = detect(&s.grid, &s.constraints, conn, Algorithm::ConvDirect).unwrap();
                assert!(!r.mask.any(), "{scenario} seed {seed}");
            }
        }
    }

    #[test]
    fn planted_breaches_are_flagged() {
        for scenario in [Scenario::NestedRings, Scenario::ExclusionBlobs] {
            let mut spec = SynthSpec::new(&[12, 14, 16], scenario);
            spec.violation_count = 3;
            spec.wall_thickness = 2;
            spec.seed = 7;
            let s = generate(&spec).unwrap();
            assert_eq!(s.planted.len(), 3);
            let r = detect(&s.grid, &s.constraints, Connectivity::Six, Algorithm::Naive).unwrap();
            assert!(r.violation_count >= 3);
            for p in &s.planted {
                assert_eq!(r.mask.get(p), Some(true), "{scenario} {p:?}");
            }
        }
    }

    #[test]
    fn deterministic_in_seed() {
        let mut spec = SynthSpec::new(&[30, 30], Scenario::NestedRings);
        spec.violation_count = 2;
        spec.seed = 99;
        assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
        let mut other = spec.clone();
        other.seed = 100;
        assert_ne!(
            generate(&spec).unwrap().grid,
            generate(&other).unwrap().grid
        );
    }

    #[test]
    fn infeasible_geometry() {
        let mut spec = SynthSpec::new(&[4, 4], Scenario::NestedRings);
        spec.wall_thickness = 2;
        assert!(matches!(generate(&spec), Err(Error::Geometry(_))));

        let mut spec = SynthSpec::new(&[3, 3], Scenario::NestedRings);
        spec.violation_count = 2;
        assert!(matches!(generate(&spec), Err(Error::Geometry(_))));

        let mut spec = SynthSpec::new(&[8, 4], Scenario::ExclusionBlobs);
        spec.num_classes = 4;
        spec.wall_thickness = 2;
        assert!(generate(&spec).is_err());
    }

    #[test]
    fn slope_fit() {
        let pts: Vec<(f64, f64)> = [3.0f64, 5.0, 9.0]
            .iter()
            .map(|k| (k.ln(), (2.0 * k * k).ln()))
            .collect();
        assert!((fit_slope(&pts).unwrap() - 2.0).abs() < 1e-12);
        assert!(fit_slope(&pts[..1]).is_none());
    }

    #[test]
    fn small_bench_schema() {
        let cfg = BenchConfig {
            algorithms: vec![Algorithm::Naive, Algorithm::ConvFft],
            sizes: vec![24],
            extents: vec![3, 5],
            repeats: 2,
            ..BenchConfig::default()
        };
        let report = bench(&cfg).unwrap();
        assert_eq!(report.rows.len(), 2 * 2 * 2);
        let csv = report.to_csv();
        assert_eq!(csv.lines().next(), Some(CSV_HEADER));
        assert_eq!(csv.lines().count(), 1 + 8);
        assert_eq!(report.fits.len(), 2);
        assert!(report.rows.iter().all(|r| r.seconds > 0.0));
        assert!(bench(&BenchConfig {
            extents: vec![4],
            ..cfg
        })
        .is_err());
    }
}
