use crate::constraints::PairTask;
use crate::grid::LabelGrid;

/// Per-site neighborhood scan. Every site visits every kernel offset, so the
/// cost is `sites × kernel support` regardless of the labels.
pub(super) fn detect_task(g: &LabelGrid, task: &PairTask) -> (Vec<u8>, Vec<u8>) {
    let shape = g.shape();
    let labels = g.labels();
    let ta = task.table_a();
    let tc = task.table_c();
    let support = task.kernel.support();
    let mut va = vec![0u8; labels.len()];
    let mut vc = vec![0u8; labels.len()];

    for (i, &l) in labels.iter().enumerate() {
        let site = shape.coord3(i);
        for &off in &support {
            let Some(j) = shape.offset_index(site, off) else {
                continue;
            };
            let m = labels[j];
            if ta[usize::from(l)] && tc[usize::from(m)] {
                va[i] = 1;
                vc[j] = 1;
            } else if tc[usize::from(l)] && ta[usize::from(m)] {
                vc[i] = 1;
                va[j] = 1;
            }
        }
    }
    (va, vc)
}
