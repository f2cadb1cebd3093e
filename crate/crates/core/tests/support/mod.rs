//! Test helpers: random instances and independent scalar-loop oracles.
#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use topo_interaction::{Connectivity, Constraint, ConstraintSet, LabelGrid, Shape};

pub fn random_dims(rng: &mut ChaCha8Rng, max2: usize, max3: usize) -> Vec<usize> {
    if rng.gen_bool(0.5) {
        vec![rng.gen_range(1..=max2), rng.gen_range(1..=max2)]
    } else {
        (0..3).map(|_| rng.gen_range(1..=max3)).collect()
    }
}

/// Labels drawn from a few random boxes over a random background, so grids
/// have both uniform regions and interfaces.
pub fn random_grid(rng: &mut ChaCha8Rng, dims: &[usize], c: u16) -> LabelGrid {
    let shape = Shape::new(dims).unwrap();
    let mut labels: Vec<u8> = if rng.gen_bool(0.3) {
        (0..shape.len())
            .map(|_| rng.gen_range(0..c) as u8)
            .collect()
    } else {
        vec![0; shape.len()]
    };
    for _ in 0..rng.gen_range(0..6) {
        let label = rng.gen_range(0..c) as u8;
        let lo: Vec<usize> = dims.iter().map(|&n| rng.gen_range(0..n)).collect();
        let hi: Vec<usize> = dims
            .iter()
            .zip(&lo)
            .map(|(&n, &l)| rng.gen_range(l + 1..=n))
            .collect();
        for (i, l) in labels.iter_mut().enumerate() {
            let p = shape.coord_of(i);
            if p.iter()
                .zip(lo.iter().zip(&hi))
                .all(|(&x, (&a, &b))| a <= x && x < b)
            {
                *l = label;
            }
        }
    }
    LabelGrid::new(dims, labels, c).unwrap()
}

/// A random consistent constraint set with widths up to `max_d`.
pub fn random_constraints(rng: &mut ChaCha8Rng, c: u16, max_d: usize) -> ConstraintSet {
    let mut chosen = Vec::new();
    for _ in 0..rng.gen_range(1..=3) {
        let a = rng.gen_range(0..c) as u8;
        let b = rng.gen_range(0..c) as u8;
        if a == b {
            continue;
        }
        let d = rng.gen_range(1..=max_d);
        let k = if rng.gen_bool(0.5) {
            Constraint::contain(a, b)
        } else {
            Constraint::exclude(a, b)
        }
        .with_width(d);
        let mut trial = chosen.clone();
        trial.push(k);
        if ConstraintSet::new(c, trial.clone()).is_ok() {
            chosen = trial;
        }
    }
    ConstraintSet::new(c, chosen).unwrap()
}

pub fn random_connectivity(rng: &mut ChaCha8Rng, ndim: usize) -> Connectivity {
    let options: &[Connectivity] = if ndim == 2 {
        &[Connectivity::Four, Connectivity::Eight, Connectivity::Box]
    } else {
        &[
            Connectivity::Six,
            Connectivity::TwentySix,
            Connectivity::Box,
        ]
    };
    options[rng.gen_range(0..options.len())]
}

/// Whether `q` is in the width-`d` neighborhood of `p` (excluding `p`).
pub fn neighbors(p: &[usize], q: &[usize], conn: Connectivity, d: usize) -> bool {
    let diffs: Vec<usize> = p.iter().zip(q).map(|(&a, &b)| a.abs_diff(b)).collect();
    let linf = diffs.iter().copied().max().unwrap_or(0);
    let l1: usize = diffs.iter().sum();
    if linf == 0 {
        return false;
    }
    match conn {
        _ if d > 1 => linf <= d,
        Connectivity::Four | Connectivity::Six => l1 <= 1,
        _ => linf <= 1,
    }
}

/// Whether labels `a` and `b` may not be neighbors under `k`.
fn forbidden(k: &Constraint, a: u8, b: u8) -> bool {
    match *k {
        Constraint::Containment { inner, outer, .. } => {
            (a == inner && b != inner && b != outer) || (b == inner && a != inner && a != outer)
        }
        Constraint::Exclusion { first, second, .. } => {
            (a == first && b == second) || (a == second && b == first)
        }
    }
}

/// Literal pairwise definition: flag both sites of every forbidden pair
/// within the constraint's neighborhood.
pub fn oracle_violations(g: &LabelGrid, cs: &ConstraintSet, conn: Connectivity) -> Vec<bool> {
    let shape = g.shape();
    let n = shape.len();
    let coords: Vec<Vec<usize>> = (0..n).map(|i| shape.coord_of(i)).collect();
    let labels = g.labels();
    let mut v = vec![false; n];
    for k in cs.constraints() {
        let d = k.width();
        for p in 0..n {
            for q in p + 1..n {
                if forbidden(k, labels[p], labels[q]) && neighbors(&coords[p], &coords[q], conn, d)
                {
                    v[p] = true;
                    v[q] = true;
                }
            }
        }
    }
    v
}

pub fn oracle_dice(p: &[bool], g: &[bool]) -> f64 {
    let mut inter = 0usize;
    let mut sp = 0usize;
    let mut sg = 0usize;
    for i in 0..p.len() {
        inter += usize::from(p[i] && g[i]);
        sp += usize::from(p[i]);
        sg += usize::from(g[i]);
    }
    if sp + sg == 0 {
        1.0
    } else {
        2.0 * inter as f64 / (sp + sg) as f64
    }
}

/// Foreground sites with a face neighbor that is background or outside.
pub fn oracle_surface(shape: Shape, m: &[bool]) -> Vec<Vec<usize>> {
    let dims = shape.dims().to_vec();
    let mut out = Vec::new();
    for i in 0..shape.len() {
        if !m[i] {
            continue;
        }
        let p = shape.coord_of(i);
        let mut edge = false;
        for axis in 0..dims.len() {
            for step in [-1isize, 1] {
                let v = p[axis] as isize + step;
                if v < 0 || v >= dims[axis] as isize {
                    edge = true;
                } else {
                    let mut q = p.clone();
                    q[axis] = v as usize;
                    if !m[shape.index_of(&q).unwrap()] {
                        edge = true;
                    }
                }
            }
        }
        if edge {
            out.push(p);
        }
    }
    out
}

fn dist(a: &[usize], b: &[usize], spacing: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .zip(spacing)
        .map(|((&x, &y), &s)| {
            let d = (x as f64 - y as f64) * f64::from(s);
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

fn nearest(p: &[usize], set: &[Vec<usize>], spacing: &[f32]) -> f64 {
    set.iter()
        .map(|q| dist(p, q, spacing))
        .fold(f64::INFINITY, f64::min)
}

/// `(hd, assd)` by all-pairs search, or `None` when either surface is empty.
pub fn oracle_distances(
    shape: Shape,
    p: &[bool],
    g: &[bool],
    spacing: &[f32],
) -> Option<(f64, f64)> {
    let sp = oracle_surface(shape, p);
    let sg = oracle_surface(shape, g);
    if sp.is_empty() || sg.is_empty() {
        return None;
    }
    let dp: Vec<f64> = sp.iter().map(|a| nearest(a, &sg, spacing)).collect();
    let dg: Vec<f64> = sg.iter().map(|b| nearest(b, &sp, spacing)).collect();
    let hd = dp.iter().chain(&dg).copied().fold(0.0, f64::max);
    let assd = (dp.iter().sum::<f64>() + dg.iter().sum::<f64>()) / (dp.len() + dg.len()) as f64;
    Some((hd, assd))
}

/// Independent loss oracle over raw class-major values `f[k * n + i]`.
pub struct LossOracle<'a> {
    pub labels: &'a [u8],
    pub classes: usize,
    pub mask: &'a [bool],
    pub eps: f64,
    pub lambda_dice: f64,
    pub lambda_ti: f64,
    pub surrogate: &'a str,
}

impl LossOracle<'_> {
    fn ce(&self, f: &[f64], sel: &dyn Fn(usize) -> bool) -> f64 {
        let n = self.labels.len();
        let mut total = 0.0;
        let mut count = 0;
        for i in 0..n {
            if sel(i) {
                let p = f[usize::from(self.labels[i]) * n + i].max(1e-12);
                total += -p.ln();
                count += 1;
            }
        }
        if count == 0 {
            0.0
        } else {
            total / count as f64
        }
    }

    fn mse(&self, f: &[f64], sel: &dyn Fn(usize) -> bool) -> f64 {
        let n = self.labels.len();
        let mut total = 0.0;
        let mut count = 0;
        for i in 0..n {
            if !sel(i) {
                continue;
            }
            count += 1;
            for k in 0..self.classes {
                let y = if usize::from(self.labels[i]) == k {
                    1.0
                } else {
                    0.0
                };
                total += (f[k * n + i] - y).powi(2);
            }
        }
        if count == 0 {
            0.0
        } else {
            total / (count * self.classes) as f64
        }
    }

    fn dice(&self, f: &[f64], sel: &dyn Fn(usize) -> bool) -> f64 {
        let n = self.labels.len();
        if !(0..n).any(sel) {
            return 0.0;
        }
        let mut sum = 0.0;
        for k in 0..self.classes {
            let mut num = 0.0;
            let mut den = 0.0;
            for i in 0..n {
                if !sel(i) {
                    continue;
                }
                let p = f[k * n + i];
                let y = if usize::from(self.labels[i]) == k {
                    1.0
                } else {
                    0.0
                };
                num += 2.0 * p * y;
                den += p * p + y;
            }
            sum += (num + self.eps) / (den + self.eps);
        }
        1.0 - sum / self.classes as f64
    }

    /// `(l_ce, l_dice, l_ti, l_total)`.
    pub fn terms(&self, f: &[f64]) -> (f64, f64, f64, f64) {
        let all = |_: usize| true;
        let masked = |i: usize| self.mask[i];
        let l_ce = self.ce(f, &all);
        let l_dice = self.dice(f, &all);
        let l_ti = match self.surrogate {
            "CE" => self.ce(f, &masked),
            "MSE" => self.mse(f, &masked),
            _ => self.dice(f, &masked),
        };
        (
            l_ce,
            l_dice,
            l_ti,
            l_ce + self.lambda_dice * l_dice + self.lambda_ti * l_ti,
        )
    }

    pub fn total(&self, f: &[f64]) -> f64 {
        self.terms(f).3
    }
}
