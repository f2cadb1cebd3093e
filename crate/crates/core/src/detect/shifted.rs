use crate::constraints::PairTask;
use crate::grid::{LabelGrid, Shape};

use super::task_masks;

/// Writes `dst[p] = src[p + offset]`, zero where `p + offset` leaves the grid.
pub(super) fn shift_into(shape: Shape, src: &[u8], offset: [isize; 3], dst: &mut [u8]) {
    let [d, h, w] = shape.extents();
    let [dz, dy, dx] = offset;
    dst.fill(0);
    if dx.unsigned_abs() >= w {
        return;
    }
    // Destination x range whose source x = x + dx is in bounds.
    let x0 = (-dx).max(0) as usize;
    let x1 = (w as isize - dx).min(w as isize) as usize;
    let sx0 = (x0 as isize + dx) as usize;
    let run = x1 - x0;
    for z in 0..d {
        let sz = z as isize + dz;
        if sz < 0 || sz >= d as isize {
            continue;
        }
        for y in 0..h {
            let sy = y as isize + dy;
            if sy < 0 || sy >= h as isize {
                continue;
            }
            let src_row = (sz as usize * h + sy as usize) * w;
            let dst_row = (z * h + y) * w;
            dst[dst_row + x0..dst_row + x0 + run]
                .copy_from_slice(&src[src_row + sx0..src_row + sx0 + run]);
        }
    }
}

pub(super) fn detect_task(g: &LabelGrid, task: &PairTask) -> (Vec<u8>, Vec<u8>) {
    let shape = g.shape();
    let (ma, mc) = task_masks(g, task);
    let n = ma.len();
    let mut va = vec![0u8; n];
    let mut vc = vec![0u8; n];
    let mut ma_w = vec![0u8; n];
    let mut mc_w = vec![0u8; n];

    for off in task.kernel.offsets() {
        shift_into(shape, &ma, off, &mut ma_w);
        shift_into(shape, &mc, off, &mut mc_w);
        for i in 0..n {
            va[i] |= ma[i] & mc_w[i];
            vc[i] |= mc[i] & ma_w[i];
        }
    }
    (va, vc)
}
