use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::constraints::{ConnectivityKernel, PairTask};
use crate::error::{Error, Result};
use crate::grid::{BinaryMask, CountGrid, LabelGrid, Shape};

use super::{fft, task_masks};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ConvBackend {
    Direct,
    Fft,
}

impl fmt::Display for ConvBackend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Direct => "direct",
            Self::Fft => "fft",
        })
    }
}

impl FromStr for ConvBackend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "direct" => Ok(Self::Direct),
            "fft" => Ok(Self::Fft),
            other => Err(Error::Constraint(format!(
                "unknown convolution backend {other:?}"
            ))),
        }
    }
}

/// Zero-padded convolution `mask ⊛ kernel`: the number of set sites in each
/// site's kernel neighborhood.
pub fn neighbor_counts(
    mask: &BinaryMask,
    kernel: &ConnectivityKernel,
    backend: ConvBackend,
) -> Result<CountGrid> {
    let shape = mask.shape();
    if kernel.ndim() != shape.ndim() {
        return Err(Error::ShapeMismatch(format!(
            "{}D kernel applied to a {}D mask",
            kernel.ndim(),
            shape.ndim()
        )));
    }
    let m: Vec<u8> = mask.bits().iter().map(|&b| u8::from(b)).collect();
    let counts = match backend {
        ConvBackend::Direct => direct_counts(shape, &m, kernel),
        ConvBackend::Fft => fft::convolve_pair(shape, &m, &m, kernel).0,
    };
    CountGrid::new(shape, counts)
}

/// Row-parallel direct convolution. The kernel is symmetric, but the sum is
/// written in convolution order `N[p] = Σ_o K[o]·M[p − o]` anyway.
pub(super) fn direct_counts(shape: Shape, m: &[u8], kernel: &ConnectivityKernel) -> Vec<u32> {
    let [d, h, w] = shape.extents();
    let support = kernel.support();
    let mut counts = vec![0u32; m.len()];
    counts.par_chunks_mut(w).enumerate().for_each(|(row, out)| {
        let (z, y) = (row / h, row % h);
        for &[dz, dy, dx] in &support {
            let sz = z as isize - dz;
            let sy = y as isize - dy;
            if sz < 0 || sz >= d as isize || sy < 0 || sy >= h as isize {
                continue;
            }
            if dx.unsigned_abs() >= w {
                continue;
            }
            let src = &m[(sz as usize * h + sy as usize) * w..][..w];
            // out[x] += src[x - dx] for in-bounds x - dx.
            let x0 = dx.max(0) as usize;
            let x1 = (w as isize + dx).min(w as isize) as usize;
            let s0 = (x0 as isize - dx) as usize;
            for (o, &s) in out[x0..x1].iter_mut().zip(&src[s0..]) {
                *o += u32::from(s);
            }
        }
    });
    counts
}

pub(super) fn detect_task(
    g: &LabelGrid,
    task: &PairTask,
    backend: ConvBackend,
) -> (Vec<u8>, Vec<u8>) {
    let shape = g.shape();
    let (ma, mc) = task_masks(g, task);
    let (na, nc) = match backend {
        ConvBackend::Direct => (
            direct_counts(shape, &ma, &task.kernel),
            direct_counts(shape, &mc, &task.kernel),
        ),
        ConvBackend::Fft => fft::convolve_pair(shape, &ma, &mc, &task.kernel),
    };
    let va = ma
        .iter()
        .zip(&nc)
        .map(|(&a, &n)| a & u8::from(n > 0))
        .collect();
    let vc = mc
        .iter()
        .zip(&na)
        .map(|(&c, &n)| c & u8::from(n > 0))
        .collect();
    (va, vc)
}
