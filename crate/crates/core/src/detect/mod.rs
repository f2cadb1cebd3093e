//! Critical-pixel detection.
//!
//! For every forbidden pair task `(A, C)` a site is critical when it carries
//! an `A` label and some site in its kernel neighborhood carries a `C` label,
//! or vice versa. Four interchangeable algorithms compute the same masks:
//!
//! * [`detect_naive`] scans every site's neighborhood.
//! * [`detect_shifted`] materializes one shifted class mask per kernel offset.
//! * [`detect_conv`] convolves the class masks with the kernel (directly or by
//!   FFT) and intersects the dilations with the opposite class mask.
//!
//! Out-of-grid space carries no label, so it never forms a forbidden pair.
//! Only `A` and `C` sites are ever flagged, for any width.

mod conv;
mod fft;
mod naive;
mod shifted;

use std::fmt;
use std::str::FromStr;

pub use conv::{neighbor_counts, ConvBackend};

use crate::constraints::{reduce, Connectivity, ConstraintSet, PairTask};
use crate::error::{Error, Result};
use crate::grid::{class_mask, BinaryMask, LabelGrid};

/// Kernel extent from which [`Algorithm::Auto`] switches to the FFT backend.
pub const AUTO_FFT_MIN_EXTENT: usize = 7;
/// Site count from which [`Algorithm::Auto`] switches to the FFT backend.
pub const AUTO_FFT_MIN_SITES: usize = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Algorithm {
    Auto,
    Naive,
    Shifted,
    ConvDirect,
    ConvFft,
}

impl Algorithm {
    pub const CONCRETE: [Algorithm; 4] = [
        Algorithm::Naive,
        Algorithm::Shifted,
        Algorithm::ConvDirect,
        Algorithm::ConvFft,
    ];

    /// Resolves `Auto` for a grid of `sites` sites and a largest kernel extent
    /// of `max_extent`; concrete choices are returned unchanged.
    pub fn resolve(self, sites: usize, max_extent: usize) -> Algorithm {
        match self {
            Algorithm::Auto if max_extent >= AUTO_FFT_MIN_EXTENT || sites >= AUTO_FFT_MIN_SITES => {
                Algorithm::ConvFft
            }
            Algorithm::Auto => Algorithm::ConvDirect,
            other => other,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Auto => "auto",
            Algorithm::Naive => "naive",
            Algorithm::Shifted => "shifted",
            Algorithm::ConvDirect => "conv_direct",
            Algorithm::ConvFft => "conv_fft",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(Algorithm::Auto),
            "naive" => Ok(Algorithm::Naive),
            "shifted" => Ok(Algorithm::Shifted),
            "conv_direct" | "direct" => Ok(Algorithm::ConvDirect),
            "conv_fft" | "fft" => Ok(Algorithm::ConvFft),
            other => Err(Error::Constraint(format!(
                "unknown algorithm {other:?} (expected auto, naive, shifted, conv_direct or conv_fft)"
            ))),
        }
    }
}

/// Critical masks of one task.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskMasks {
    pub task: PairTask,
    /// `A` sites with a `C` site in their neighborhood.
    pub v_a: BinaryMask,
    /// `C` sites with an `A` site in their neighborhood.
    pub v_c: BinaryMask,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DetectionResult {
    /// Union of every task's `v_a` and `v_c`.
    pub mask: BinaryMask,
    pub per_task: Vec<TaskMasks>,
    pub violation_count: usize,
    /// Sites whose label is not background.
    pub foreground_count: usize,
}

impl DetectionResult {
    /// `100 · violations / foreground`, or 0 when there is no foreground.
    pub fn violations_percent(&self) -> f64 {
        if self.foreground_count == 0 {
            0.0
        } else {
            100.0 * self.violation_count as f64 / self.foreground_count as f64
        }
    }
}

/// Class masks `(M_A, M_C)` of a task as byte arrays.
pub(crate) fn task_masks(g: &LabelGrid, task: &PairTask) -> (Vec<u8>, Vec<u8>) {
    let ta = task.table_a();
    let tc = task.table_c();
    let ma = g
        .labels()
        .iter()
        .map(|&l| u8::from(ta[usize::from(l)]))
        .collect();
    let mc = g
        .labels()
        .iter()
        .map(|&l| u8::from(tc[usize::from(l)]))
        .collect();
    (ma, mc)
}

fn validate(g: &LabelGrid, tasks: &[PairTask]) -> Result<()> {
    for t in tasks {
        if t.kernel.ndim() != g.ndim() {
            return Err(Error::ShapeMismatch(format!(
                "{}D kernel applied to a {}D grid",
                t.kernel.ndim(),
                g.ndim()
            )));
        }
        if let Some(&id) = t
            .ids_a
            .iter()
            .chain(&t.ids_c)
            .find(|&&id| u16::from(id) >= g.num_classes())
        {
            return Err(Error::Constraint(format!(
                "task references class {id} but the grid has {} classes",
                g.num_classes()
            )));
        }
        // Same check as the mask builder, surfaced with a clearer message.
        class_mask(g, &t.ids_a)?;
    }
    Ok(())
}

fn assemble(
    g: &LabelGrid,
    tasks: &[PairTask],
    per_task: Vec<(Vec<u8>, Vec<u8>)>,
) -> Result<DetectionResult> {
    let shape = g.shape();
    let mut union = vec![false; shape.len()];
    let mut out = Vec::with_capacity(tasks.len());
    for (task, (va, vc)) in tasks.iter().zip(per_task) {
        for (u, (&a, &c)) in union.iter_mut().zip(va.iter().zip(&vc)) {
            *u |= a != 0 || c != 0;
        }
        out.push(TaskMasks {
            task: task.clone(),
            v_a: BinaryMask::from_shape(shape, va.into_iter().map(|b| b != 0).collect())?,
            v_c: BinaryMask::from_shape(shape, vc.into_iter().map(|b| b != 0).collect())?,
        });
    }
    let mask = BinaryMask::from_shape(shape, union)?;
    Ok(DetectionResult {
        violation_count: mask.count(),
        foreground_count: g.foreground_count(),
        mask,
        per_task: out,
    })
}

/// Scans every site's kernel neighborhood and flags both members of each
/// forbidden pair found.
pub fn detect_naive(g: &LabelGrid, tasks: &[PairTask]) -> Result<DetectionResult> {
    validate(g, tasks)?;
    let per_task = tasks.iter().map(|t| naive::detect_task(g, t)).collect();
    assemble(g, tasks, per_task)
}

/// Accumulates `(M_A ∧ shift_w M_C) ∨ (M_C ∧ shift_w M_A)` over every
/// off-center kernel offset `w`.
pub fn detect_shifted(g: &LabelGrid, tasks: &[PairTask]) -> Result<DetectionResult> {
    validate(g, tasks)?;
    let per_task = tasks.iter().map(|t| shifted::detect_task(g, t)).collect();
    assemble(g, tasks, per_task)
}

/// `V_A = M_A ∧ (M_C ⊛ K > 0)`, `V_C = M_C ∧ (M_A ⊛ K > 0)` with zero-padded
/// convolution computed by `backend`.
pub fn detect_conv(
    g: &LabelGrid,
    tasks: &[PairTask],
    backend: ConvBackend,
) -> Result<DetectionResult> {
    validate(g, tasks)?;
    let per_task = tasks
        .iter()
        .map(|t| conv::detect_task(g, t, backend))
        .collect();
    assemble(g, tasks, per_task)
}

/// Runs already-reduced tasks with the chosen algorithm.
pub fn detect_tasks(
    g: &LabelGrid,
    tasks: &[PairTask],
    algorithm: Algorithm,
) -> Result<DetectionResult> {
    let max_extent = tasks.iter().map(|t| t.kernel.extent()).max().unwrap_or(0);
    match algorithm.resolve(g.len(), max_extent) {
        Algorithm::Naive => detect_naive(g, tasks),
        Algorithm::Shifted => detect_shifted(g, tasks),
        Algorithm::ConvDirect => detect_conv(g, tasks, ConvBackend::Direct),
        Algorithm::ConvFft => detect_conv(g, tasks, ConvBackend::Fft),
        Algorithm::Auto => unreachable!("resolve never returns Auto"),
    }
}

/// Reduces `cs` under `conn` and detects critical sites in `g`.
pub fn detect(
    g: &LabelGrid,
    cs: &ConstraintSet,
    conn: Connectivity,
    algorithm: Algorithm,
) -> Result<DetectionResult> {
    if cs.num_classes() != g.num_classes() {
        return Err(Error::Constraint(format!(
            "constraint set declares {} classes, grid has {}",
            cs.num_classes(),
            g.num_classes()
        )));
    }
    let tasks = reduce(cs, conn, g.ndim())?;
    detect_tasks(g, &tasks, algorithm)
}
