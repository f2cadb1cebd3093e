//! Lattice-shaped data: label grids, likelihood grids, binary masks and
//! neighbor counts, plus their on-disk formats.
//!
//! All grids are row-major with the last axis fastest. A 2D grid of dims
//! `(H, W)` is stored internally as the 3D lattice `(1, H, W)`, so every
//! algorithm can walk `[z, y, x]` coordinates without special-casing 2D.

mod pgm;
mod segv;

pub use pgm::{decode_pgm, encode_pgm, read_pgm, write_pgm};
pub use segv::{
    decode_label_grid, decode_likelihood_grid, decode_mask, encode_label_grid,
    encode_likelihood_grid, encode_mask, read_label_grid, read_likelihood_grid, read_mask,
    write_label_grid, write_likelihood_grid, write_mask, SegvKind,
};

use crate::error::{Error, Result};

/// Tolerance on per-site channel sums for a likelihood grid flagged as normalized.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-5;

/// Extents of a 2D or 3D lattice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    ndim: usize,
    /// `[z, y, x]`; 2D shapes carry a leading 1.
    extents: [usize; 3],
}

impl Shape {
    pub fn new(dims: &[usize]) -> Result<Self> {
        let extents = match *dims {
            [h, w] => [1, h, w],
            [d, h, w] => [d, h, w],
            _ => {
                return Err(Error::InvalidGrid(format!(
                    "expected 2 or 3 dims, got {}",
                    dims.len()
                )))
            }
        };
        if dims.contains(&0) {
            return Err(Error::InvalidGrid(format!("zero extent in dims {dims:?}")));
        }
        extents
            .iter()
            .try_fold(1usize, |acc, &n| acc.checked_mul(n))
            .ok_or_else(|| Error::InvalidGrid(format!("dims {dims:?} overflow")))?;
        Ok(Self {
            ndim: dims.len(),
            extents,
        })
    }

    pub fn ndim(&self) -> usize {
        self.ndim
    }

    /// Extents as given at construction (2 or 3 entries).
    pub fn dims(&self) -> &[usize] {
        &self.extents[3 - self.ndim..]
    }

    /// Extents padded to `[z, y, x]`.
    pub fn extents(&self) -> [usize; 3] {
        self.extents
    }

    pub fn len(&self) -> usize {
        self.extents.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Linear index of a padded `[z, y, x]` coordinate.
    #[inline]
    pub fn index3(&self, [z, y, x]: [usize; 3]) -> usize {
        (z * self.extents[1] + y) * self.extents[2] + x
    }

    #[inline]
    pub fn coord3(&self, index: usize) -> [usize; 3] {
        let [_, h, w] = self.extents;
        [index / (h * w), (index / w) % h, index % w]
    }

    /// Linear index of a natural coordinate (`ndim` entries).
    pub fn index_of(&self, coord: &[usize]) -> Option<usize> {
        if coord.len() != self.ndim {
            return None;
        }
        let mut padded = [0usize; 3];
        padded[3 - self.ndim..].copy_from_slice(coord);
        if padded.iter().zip(self.extents).any(|(&c, n)| c >= n) {
            return None;
        }
        Some(self.index3(padded))
    }

    /// Natural coordinate (`ndim` entries) of a linear index.
    pub fn coord_of(&self, index: usize) -> Vec<usize> {
        self.coord3(index)[3 - self.ndim..].to_vec()
    }

    /// Neighbor of `site` displaced by `offset` (padded `[dz, dy, dx]`), or
    /// `None` when it falls outside the lattice.
    #[inline]
    pub fn offset_index(&self, site: [usize; 3], offset: [isize; 3]) -> Option<usize> {
        let mut out = [0usize; 3];
        for axis in 0..3 {
            let v = site[axis] as isize + offset[axis];
            if v < 0 || v >= self.extents[axis] as isize {
                return None;
            }
            out[axis] = v as usize;
        }
        Some(self.index3(out))
    }
}

/// Discrete multi-class segmentation map.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelGrid {
    shape: Shape,
    labels: Vec<u8>,
    num_classes: u16,
    spacing: Vec<f32>,
}

impl LabelGrid {
    /// Builds a grid with unit spacing.
    pub fn new(dims: &[usize], labels: Vec<u8>, num_classes: u16) -> Result<Self> {
        let shape = Shape::new(dims)?;
        if !(1..=256).contains(&num_classes) {
            return Err(Error::InvalidGrid(format!(
                "num_classes must be in 1..=256, got {num_classes}"
            )));
        }
        if labels.len() != shape.len() {
            return Err(Error::InvalidGrid(format!(
                "dims {dims:?} need {} labels, got {}",
                shape.len(),
                labels.len()
            )));
        }
        if let Some((i, &l)) = labels
            .iter()
            .enumerate()
            .find(|&(_, &l)| u16::from(l) >= num_classes)
        {
            return Err(Error::InvalidGrid(format!(
                "label {l} at site {i} is >= num_classes {num_classes}"
            )));
        }
        Ok(Self {
            shape,
            labels,
            num_classes,
            spacing: vec![1.0; shape.ndim()],
        })
    }

    /// Uniform grid filled with `label`.
    pub fn filled(dims: &[usize], label: u8, num_classes: u16) -> Result<Self> {
        let n = Shape::new(dims)?.len();
        Self::new(dims, vec![label; n], num_classes)
    }

    pub fn with_spacing(mut self, spacing: &[f32]) -> Result<Self> {
        if spacing.len() != self.shape.ndim() {
            return Err(Error::InvalidGrid(format!(
                "spacing has {} entries for a {}D grid",
                spacing.len(),
                self.shape.ndim()
            )));
        }
        if spacing.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::InvalidGrid(format!(
                "spacing entries must be positive, got {spacing:?}"
            )));
        }
        self.spacing = spacing.to_vec();
        Ok(self)
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn dims(&self) -> &[usize] {
        self.shape.dims()
    }

    pub fn ndim(&self) -> usize {
        self.shape.ndim()
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn num_classes(&self) -> u16 {
        self.num_classes
    }

    pub fn spacing(&self) -> &[f32] {
        &self.spacing
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn get(&self, coord: &[usize]) -> Option<u8> {
        self.shape.index_of(coord).map(|i| self.labels[i])
    }

    /// Sets the label at `coord`. Panics on an out-of-range coordinate or label.
    pub fn set(&mut self, coord: &[usize], label: u8) {
        assert!(
            u16::from(label) < self.num_classes,
            "label {label} out of range"
        );
        let i = self
            .shape
            .index_of(coord)
            .unwrap_or_else(|| panic!("coordinate {coord:?} outside {:?}", self.dims()));
        self.labels[i] = label;
    }

    /// Number of sites whose label is not background (0).
    pub fn foreground_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l != 0).count()
    }
}

/// Binary mask over a lattice.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    shape: Shape,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(dims: &[usize], bits: Vec<bool>) -> Result<Self> {
        let shape = Shape::new(dims)?;
        Self::from_shape(shape, bits)
    }

    pub fn from_shape(shape: Shape, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != shape.len() {
            return Err(Error::InvalidGrid(format!(
                "dims {:?} need {} bits, got {}",
                shape.dims(),
                shape.len(),
                bits.len()
            )));
        }
        Ok(Self { shape, bits })
    }

    pub fn empty(shape: Shape) -> Self {
        Self {
            shape,
            bits: vec![false; shape.len()],
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn dims(&self) -> &[usize] {
        self.shape.dims()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, coord: &[usize]) -> Option<bool> {
        self.shape.index_of(coord).map(|i| self.bits[i])
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn any(&self) -> bool {
        self.bits.iter().any(|&b| b)
    }

    /// Site-wise OR; shapes must agree.
    pub fn union(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.check_same_shape(other)?;
        let bits = self
            .bits
            .iter()
            .zip(&other.bits)
            .map(|(&a, &b)| a | b)
            .collect();
        Ok(BinaryMask {
            shape: self.shape,
            bits,
        })
    }

    /// Site-wise AND; shapes must agree.
    pub fn intersection(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.check_same_shape(other)?;
        let bits = self
            .bits
            .iter()
            .zip(&other.bits)
            .map(|(&a, &b)| a & b)
            .collect();
        Ok(BinaryMask {
            shape: self.shape,
            bits,
        })
    }

    /// True when every set bit of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.shape == other.shape && self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    /// Natural coordinates of the set bits, in index order.
    pub fn set_coords(&self) -> Vec<Vec<usize>> {
        self.bits
            .iter()
            .enumerate()
            .filter(|&(_, &b)| b)
            .map(|(i, _)| self.shape.coord_of(i))
            .collect()
    }

    pub(crate) fn check_same_shape(&self, other: &BinaryMask) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch(format!(
                "{:?} vs {:?}",
                self.dims(),
                other.dims()
            )));
        }
        Ok(())
    }
}

/// Per-site neighbor counts produced by convolving a mask with a kernel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountGrid {
    shape: Shape,
    counts: Vec<u32>,
}

impl CountGrid {
    pub fn new(shape: Shape, counts: Vec<u32>) -> Result<Self> {
        if counts.len() != shape.len() {
            return Err(Error::InvalidGrid(format!(
                "dims {:?} need {} counts, got {}",
                shape.dims(),
                shape.len(),
                counts.len()
            )));
        }
        Ok(Self { shape, counts })
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn max(&self) -> u32 {
        self.counts.iter().copied().max().unwrap_or(0)
    }

    /// Sites with a positive count.
    pub fn positive(&self) -> BinaryMask {
        BinaryMask {
            shape: self.shape,
            bits: self.counts.iter().map(|&n| n > 0).collect(),
        }
    }
}

/// Per-class real-valued prediction map, stored class-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LikelihoodGrid {
    shape: Shape,
    num_classes: u16,
    values: Vec<f64>,
    normalized: bool,
}

impl LikelihoodGrid {
    /// `values[k * sites + i]` is class `k` at site `i`. When `normalized` is
    /// claimed, every site's channel sum must be 1 within
    /// [`NORMALIZATION_TOLERANCE`].
    pub fn new(
        dims: &[usize],
        num_classes: u16,
        values: Vec<f64>,
        normalized: bool,
    ) -> Result<Self> {
        let shape = Shape::new(dims)?;
        Self::from_shape(shape, num_classes, values, normalized)
    }

    pub fn from_shape(
        shape: Shape,
        num_classes: u16,
        values: Vec<f64>,
        normalized: bool,
    ) -> Result<Self> {
        if !(1..=256).contains(&num_classes) {
            return Err(Error::InvalidGrid(format!(
                "num_classes must be in 1..=256, got {num_classes}"
            )));
        }
        let expected = shape.len() * usize::from(num_classes);
        if values.len() != expected {
            return Err(Error::InvalidGrid(format!(
                "{} classes over dims {:?} need {expected} values, got {}",
                num_classes,
                shape.dims(),
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidGrid(format!(
                "non-finite likelihood at value {i}"
            )));
        }
        let grid = Self {
            shape,
            num_classes,
            values,
            normalized: false,
        };
        if normalized {
            if let Some((site, sum)) = grid.first_unnormalized_site() {
                return Err(Error::NotNormalized(format!(
                    "channel sum {sum} at site {site} differs from 1"
                )));
            }
        }
        Ok(Self { normalized, ..grid })
    }

    /// Builds a grid and flags it normalized iff every channel sum is 1
    /// within tolerance.
    pub fn detect_normalized(shape: Shape, num_classes: u16, values: Vec<f64>) -> Result<Self> {
        let mut grid = Self::from_shape(shape, num_classes, values, false)?;
        grid.normalized = grid.first_unnormalized_site().is_none();
        Ok(grid)
    }

    /// One-hot encoding of a label grid.
    pub fn one_hot(g: &LabelGrid) -> Self {
        let n = g.len();
        let c = usize::from(g.num_classes());
        let mut values = vec![0.0; n * c];
        for (i, &l) in g.labels().iter().enumerate() {
            values[usize::from(l) * n + i] = 1.0;
        }
        Self {
            shape: g.shape(),
            num_classes: g.num_classes(),
            values,
            normalized: true,
        }
    }

    /// Per-site softmax over channels of a class-major logit array.
    pub fn softmax(shape: Shape, num_classes: u16, logits: &[f64]) -> Result<Self> {
        let n = shape.len();
        let c = usize::from(num_classes);
        if logits.len() != n * c {
            return Err(Error::InvalidGrid(format!(
                "expected {} logits, got {}",
                n * c,
                logits.len()
            )));
        }
        let mut values = vec![0.0; n * c];
        for i in 0..n {
            let max = (0..c)
                .map(|k| logits[k * n + i])
                .fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for k in 0..c {
                let e = (logits[k * n + i] - max).exp();
                values[k * n + i] = e;
                sum += e;
            }
            for k in 0..c {
                values[k * n + i] /= sum;
            }
        }
        Self::from_shape(shape, num_classes, values, true)
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn dims(&self) -> &[usize] {
        self.shape.dims()
    }

    pub fn num_classes(&self) -> u16 {
        self.num_classes
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn sites(&self) -> usize {
        self.shape.len()
    }

    /// Likelihood of `class` at linear site `index`.
    #[inline]
    pub fn at(&self, class: usize, index: usize) -> f64 {
        self.values[class * self.shape.len() + index]
    }

    pub fn channel(&self, class: usize) -> &[f64] {
        let n = self.shape.len();
        &self.values[class * n..(class + 1) * n]
    }

    fn first_unnormalized_site(&self) -> Option<(usize, f64)> {
        let n = self.shape.len();
        let c = usize::from(self.num_classes);
        (0..n).find_map(|i| {
            let sum: f64 = (0..c).map(|k| self.values[k * n + i]).sum();
            ((sum - 1.0).abs() > NORMALIZATION_TOLERANCE).then_some((i, sum))
        })
    }
}

/// Mask of sites whose label is in `ids`.
pub fn class_mask(g: &LabelGrid, ids: &[u8]) -> Result<BinaryMask> {
    let mut member = [false; 256];
    for &id in ids {
        if u16::from(id) >= g.num_classes() {
            return Err(Error::InvalidGrid(format!(
                "class id {id} >= num_classes {}",
                g.num_classes()
            )));
        }
        member[usize::from(id)] = true;
    }
    Ok(BinaryMask {
        shape: g.shape(),
        bits: g.labels().iter().map(|&l| member[usize::from(l)]).collect(),
    })
}

/// Per-site channel of maximum likelihood; ties go to the smallest class index.
pub fn argmax_labels(f: &LikelihoodGrid) -> LabelGrid {
    let n = f.sites();
    let c = usize::from(f.num_classes());
    let mut labels = vec![0u8; n];
    let mut best = f.channel(0).to_vec();
    for k in 1..c {
        for (i, &v) in f.channel(k).iter().enumerate() {
            if v > best[i] {
                best[i] = v;
                labels[i] = k as u8;
            }
        }
    }
    LabelGrid {
        shape: f.shape(),
        labels,
        num_classes: f.num_classes(),
        spacing: vec![1.0; f.shape().ndim()],
    }
}
