//! Segmentation quality: Dice, Hausdorff distance, average symmetric surface
//! distance, and the share of foreground sites violating constraints.
//!
//! Surface sites are foreground sites with a background (or out-of-grid)
//! face neighbor. Distances are Euclidean in physical units (voxel spacing).

use std::collections::BTreeMap;

use serde_json::{Map, Value};

use crate::constraints::{build_kernel, Connectivity, ConstraintSet};
use crate::detect::{detect, Algorithm};
use crate::error::{Error, Result};
use crate::grid::{class_mask, BinaryMask, LabelGrid, Shape};

/// `2|P ∩ G| / (|P| + |G|)`, and 1 when both masks are empty.
pub fn dice(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    pred.check_same_shape(gt)?;
    let (mut inter, mut p, mut g) = (0usize, 0usize, 0usize);
    for (&a, &b) in pred.bits().iter().zip(gt.bits()) {
        p += usize::from(a);
        g += usize::from(b);
        inter += usize::from(a & b);
    }
    if p + g == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (p + g) as f64)
}

fn surface_indices(m: &BinaryMask, conn: Connectivity) -> Result<Vec<usize>> {
    let shape = m.shape();
    let offsets = build_kernel(shape.ndim(), conn, 1)?.offsets();
    let bits = m.bits();
    Ok((0..shape.len())
        .filter(|&i| bits[i])
        .filter(|&i| {
            let site = shape.coord3(i);
            offsets
                .iter()
                .any(|&o| shape.offset_index(site, o).is_none_or(|j| !bits[j]))
        })
        .collect())
}

/// Foreground sites with at least one background or out-of-grid neighbor
/// under `conn`.
pub fn surface_sites(m: &BinaryMask, conn: Connectivity) -> Result<Vec<Vec<usize>>> {
    let shape = m.shape();
    Ok(surface_indices(m, conn)?
        .into_iter()
        .map(|i| shape.coord_of(i))
        .collect())
}

/// Squared Euclidean distance transform to the nearest seed, with per-axis
/// physical spacing. Separable lower-envelope method, one axis at a time.
fn squared_edt(shape: Shape, seeds: &[usize], spacing: [f64; 3]) -> Vec<f64> {
    let [_, h, w] = shape.extents();
    let mut dist = vec![f64::INFINITY; shape.len()];
    for &s in seeds {
        dist[s] = 0.0;
    }
    let mut line = Vec::new();
    let mut out = Vec::new();
    let mut env = Envelope::default();
    let strides = [h * w, w, 1];
    for axis in 0..3 {
        let n = shape.extents()[axis];
        if n == 1 {
            continue;
        }
        let weight = spacing[axis] * spacing[axis];
        let stride = strides[axis];
        for base in 0..shape.len() {
            // Visit each line once, from its first site.
            let first = match axis {
                0 => base < h * w,
                1 => (base / w) % h == 0,
                _ => base % w == 0,
            };
            if !first {
                continue;
            }
            line.clear();
            line.extend((0..n).map(|t| dist[base + t * stride]));
            env.transform(&line, weight, &mut out);
            for (t, &v) in out.iter().enumerate() {
                dist[base + t * stride] = v;
            }
        }
    }
    dist
}

#[derive(Default)]
struct Envelope {
    sites: Vec<usize>,
    bounds: Vec<f64>,
}

impl Envelope {
    /// `out[q] = min_p f[p] + weight·(q − p)²` over finite `f[p]`.
    fn transform(&mut self, f: &[f64], weight: f64, out: &mut Vec<f64>) {
        out.clear();
        self.sites.clear();
        self.bounds.clear();
        let meet = |f: &[f64], p: usize, q: usize| {
            let (pf, qf) = (p as f64, q as f64);
            ((f[q] + weight * qf * qf) - (f[p] + weight * pf * pf)) / (2.0 * weight * (qf - pf))
        };
        for q in (0..f.len()).filter(|&q| f[q].is_finite()) {
            while let Some(&p) = self.sites.last() {
                let s = meet(f, p, q);
                if s <= *self.bounds.last().expect("bounds track sites") {
                    self.sites.pop();
                    self.bounds.pop();
                } else {
                    self.sites.push(q);
                    self.bounds.push(s);
                    break;
                }
            }
            if self.sites.is_empty() {
                self.sites.push(q);
                self.bounds.push(f64::NEG_INFINITY);
            }
        }
        if self.sites.is_empty() {
            out.resize(f.len(), f64::INFINITY);
            return;
        }
        let mut k = 0;
        for q in 0..f.len() {
            let qf = q as f64;
            while k + 1 < self.sites.len() && self.bounds[k + 1] < qf {
                k += 1;
            }
            let p = self.sites[k];
            let dq = qf - p as f64;
            out.push(f[p] + weight * dq * dq);
        }
    }
}

fn spacing3(shape: Shape, spacing: &[f32]) -> Result<[f64; 3]> {
    if spacing.len() != shape.ndim() {
        return Err(Error::ShapeMismatch(format!(
            "{} spacing entries for a {}D grid",
            spacing.len(),
            shape.ndim()
        )));
    }
    let mut out = [1.0; 3];
    for (o, &s) in out[3 - shape.ndim()..].iter_mut().zip(spacing) {
        *o = f64::from(s);
    }
    Ok(out)
}

/// Directed surface distances from every surface site of `from` to the
/// surface of `to`.
fn directed(from: &[usize], to: &[usize], shape: Shape, spacing: [f64; 3]) -> Vec<f64> {
    let sq = squared_edt(shape, to, spacing);
    from.iter().map(|&i| sq[i].sqrt()).collect()
}

fn surface_pair(
    pred: &BinaryMask,
    gt: &BinaryMask,
    spacing: &[f32],
) -> Result<(Vec<f64>, Vec<f64>)> {
    pred.check_same_shape(gt)?;
    let shape = pred.shape();
    let sp = spacing3(shape, spacing)?;
    let conn = Connectivity::face(shape.ndim());
    let ps = surface_indices(pred, conn)?;
    let gs = surface_indices(gt, conn)?;
    match (ps.is_empty(), gs.is_empty()) {
        (true, true) => return Err(Error::EmptySurface("both masks are empty".into())),
        (true, false) => return Err(Error::EmptySurface("prediction mask is empty".into())),
        (false, true) => return Err(Error::EmptySurface("reference mask is empty".into())),
        _ => {}
    }
    Ok((directed(&ps, &gs, shape, sp), directed(&gs, &ps, shape, sp)))
}

/// Symmetric Hausdorff distance between the two mask surfaces.
pub fn hausdorff(pred: &BinaryMask, gt: &BinaryMask, spacing: &[f32]) -> Result<f64> {
    let (a, b) = surface_pair(pred, gt, spacing)?;
    Ok(a.iter().chain(&b).copied().fold(0.0, f64::max))
}

/// Average symmetric surface distance.
pub fn assd(pred: &BinaryMask, gt: &BinaryMask, spacing: &[f32]) -> Result<f64> {
    let (a, b) = surface_pair(pred, gt, spacing)?;
    let total: f64 = a.iter().sum::<f64>() + b.iter().sum::<f64>();
    Ok(total / (a.len() + b.len()) as f64)
}

/// `100 · |V| / |foreground|` for the critical mask of `g`; 0 without
/// foreground.
pub fn violations_percent(g: &LabelGrid, cs: &ConstraintSet, conn: Connectivity) -> Result<f64> {
    Ok(detect(g, cs, conn, Algorithm::Auto)?.violations_percent())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassMetrics {
    pub dice: f64,
    pub hd: Option<f64>,
    pub assd: Option<f64>,
    /// Why `hd`/`assd` are undefined, when they are.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub per_class: BTreeMap<u8, ClassMetrics>,
    pub violations_percent: f64,
}

impl MetricsReport {
    /// Flat object with keys `dice.<id>`, `hd.<id>`, `assd.<id>` and
    /// `violations_percent`; undefined distances are `null`.
    pub fn to_json(&self) -> Value {
        let mut obj = Map::new();
        for (id, m) in &self.per_class {
            obj.insert(format!("dice.{id}"), Value::from(m.dice));
            obj.insert(format!("hd.{id}"), m.hd.map_or(Value::Null, Value::from));
            obj.insert(
                format!("assd.{id}"),
                m.assd.map_or(Value::Null, Value::from),
            );
        }
        obj.insert(
            "violations_percent".into(),
            Value::from(self.violations_percent),
        );
        Value::Object(obj)
    }
}

/// Per-class metrics for every non-background class, plus the violation
/// share of `pred`. Empty-class distance errors are recorded, not raised.
pub fn evaluate(
    pred: &LabelGrid,
    gt: &LabelGrid,
    cs: &ConstraintSet,
    conn: Connectivity,
) -> Result<MetricsReport> {
    if pred.shape() != gt.shape() {
        return Err(Error::ShapeMismatch(format!(
            "{:?} vs {:?}",
            pred.dims(),
            gt.dims()
        )));
    }
    if pred.num_classes() != gt.num_classes() {
        return Err(Error::ShapeMismatch(format!(
            "{} vs {} classes",
            pred.num_classes(),
            gt.num_classes()
        )));
    }
    if pred.spacing() != gt.spacing() {
        return Err(Error::ShapeMismatch(format!(
            "spacing {:?} vs {:?}",
            pred.spacing(),
            gt.spacing()
        )));
    }
    let mut per_class = BTreeMap::new();
    for id in 1..pred.num_classes() {
        let id = id as u8;
        let p = class_mask(pred, &[id])?;
        let g = class_mask(gt, &[id])?;
        let dice = dice(&p, &g)?;
        let entry = match surface_pair(&p, &g, gt.spacing()) {
            Ok((a, b)) => {
                let hd = a.iter().chain(&b).copied().fold(0.0, f64::max);
                let assd =
                    (a.iter().sum::<f64>() + b.iter().sum::<f64>()) / (a.len() + b.len()) as f64;
                ClassMetrics {
                    dice,
                    hd: Some(hd),
                    assd: Some(assd),
                    error: None,
                }
            }
            Err(Error::EmptySurface(why)) => ClassMetrics {
                dice,
                hd: None,
                assd: None,
                error: Some(format!("undefined metric for empty class {id}: {why}")),
            },
            Err(e) => return Err(e),
        };
        per_class.insert(id, entry);
    }
    Ok(MetricsReport {
        per_class,
        violations_percent: violations_percent(pred, cs, conn)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask_with(dims: &[usize], coords: &[&[usize]]) -> BinaryMask {
        let shape = Shape::new(dims).unwrap();
        let mut bits = vec![false; shape.len()];
        for c in coords {
            bits[shape.index_of(c).unwrap()] = true;
        }
        BinaryMask::from_shape(shape, bits).unwrap()
    }

    #[test]
    fn dice_cases() {
        let a = mask_with(&[3, 3], &[&[0, 0], &[0, 1], &[1, 0], &[1, 1]]);
        let b = mask_with(&[3, 3], &[&[0, 0], &[0, 1], &[2, 0], &[2, 1]]);
        let c = mask_with(&[3, 3], &[&[2, 2]]);
        assert_eq!(dice(&a, &a).unwrap(), 1.0);
        assert_eq!(dice(&a, &c).unwrap(), 0.0);
        assert_eq!(dice(&a, &b).unwrap(), 0.5);
        let empty = BinaryMask::empty(a.shape());
        assert_eq!(dice(&empty, &empty).unwrap(), 1.0);
        assert!(dice(&a, &mask_with(&[3, 4], &[])).is_err());
    }

    #[test]
    fn surface_of_block() {
        let coords: Vec<Vec<usize>> = (1..4)
            .flat_map(|y| (1..4).map(move |x| vec![y, x]))
            .collect();
        let refs: Vec<&[usize]> = coords.iter().map(|c| c.as_slice()).collect();
        let m = mask_with(&[5, 5], &refs);
        let s = surface_sites(&m, Connectivity::Four).unwrap();
        assert_eq!(s.len(), 8);
        assert!(!s.contains(&vec![2, 2]));

        let single = mask_with(&[5, 5], &[&[4, 4]]);
        assert_eq!(
            surface_sites(&single, Connectivity::Four).unwrap(),
            vec![vec![4, 4]]
        );
        assert!(
            surface_sites(&BinaryMask::empty(m.shape()), Connectivity::Four)
                .unwrap()
                .is_empty()
        );
    }

    #[test]
    fn distances_between_points() {
        let p = mask_with(&[4, 5], &[&[0, 0]]);
        let g = mask_with(&[4, 5], &[&[3, 4]]);
        assert_eq!(hausdorff(&p, &g, &[1.0, 1.0]).unwrap(), 5.0);
        assert_eq!(assd(&p, &g, &[1.0, 1.0]).unwrap(), 5.0);

        let p = mask_with(&[1, 4], &[&[0, 0]]);
        let g = mask_with(&[1, 4], &[&[0, 3]]);
        assert_eq!(hausdorff(&p, &g, &[2.0, 1.0]).unwrap(), 3.0);
        assert_eq!(hausdorff(&p, &g, &[1.0, 2.0]).unwrap(), 6.0);
    }

    #[test]
    fn identical_masks_have_zero_distance() {
        let m = mask_with(&[3, 3, 3], &[&[0, 1, 1], &[1, 1, 1], &[2, 2, 0]]);
        assert_eq!(hausdorff(&m, &m, &[1.0, 0.5, 2.0]).unwrap(), 0.0);
        assert_eq!(assd(&m, &m, &[1.0, 0.5, 2.0]).unwrap(), 0.0);
    }

    #[test]
    fn empty_masks_are_errors() {
        let m = mask_with(&[3, 3], &[&[1, 1]]);
        let e = BinaryMask::empty(m.shape());
        let err = hausdorff(&m, &e, &[1.0, 1.0]).unwrap_err();
        assert!(err
            .to_string()
            .starts_with("undefined metric for empty class"));
        assert!(assd(&e, &m, &[1.0, 1.0]).is_err());
    }

    #[test]
    fn envelope_handles_unreachable_lines() {
        let mut env = Envelope::default();
        let mut out = Vec::new();
        env.transform(&[f64::INFINITY; 4], 1.0, &mut out);
        assert!(out.iter().all(|v| v.is_infinite()));
        env.transform(&[f64::INFINITY, 0.0, f64::INFINITY, 4.0], 1.0, &mut out);
        assert_eq!(out, vec![1.0, 0.0, 1.0, 4.0]);
    }
}
