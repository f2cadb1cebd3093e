//! Zero-padded linear convolution through separable FFTs.
//!
//! Two real masks are packed into one complex field (`a + i·c`). The kernel
//! is real, so the real and imaginary parts of the result are the two
//! convolutions.
//!
//! Each axis is padded to a 5-smooth size `m >= n + r` (kernel radius `r`),
//! where the circular result equals the zero-padded one.

use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::num_traits::Zero;
use rustfft::{FftNum, FftPlanner};

use crate::constraints::ConnectivityKernel;
use crate::grid::Shape;

/// Kernels with at most this many taps run in single precision. Binary
/// inputs keep the rounding error orders of magnitude below one half there.
const SINGLE_PRECISION_MAX_TAPS: u32 = 4096;

const SPECTRUM_CACHE_LIMIT: usize = 16;

/// Smallest n' >= n whose prime factors are all in {2, 3, 5}.
pub(super) fn smooth_size(n: usize) -> usize {
    (n.max(1)..)
        .find(|&m| {
            let mut m = m;
            for p in [2, 3, 5] {
                while m % p == 0 {
                    m /= p;
                }
            }
            m == 1
        })
        .expect("smooth sizes are unbounded")
}

/// Rounded integer count, with anything below one half treated as zero.
#[inline]
fn to_count(v: f64) -> u32 {
    // Float-to-int casts saturate, so everything below one half maps to 0.
    (v + 0.5) as u32
}

type SpectrumKey = (Vec<usize>, usize, Vec<u8>);

trait Sample: FftNum + Into<f64> {
    fn with_planner<R>(f: impl FnOnce(&mut FftPlanner<Self>) -> R) -> R;
    fn with_spectra<R>(
        f: impl FnOnce(&mut HashMap<SpectrumKey, Arc<Vec<Complex<Self>>>>) -> R,
    ) -> R;
    /// Per-thread field and transpose buffers, reused across calls.
    fn take_buffers() -> (Vec<Complex<Self>>, Vec<Complex<Self>>);
    fn return_buffers(buffers: (Vec<Complex<Self>>, Vec<Complex<Self>>));
}

macro_rules! sample {
    ($t:ty, $planner:ident, $spectra:ident, $buffers:ident) => {
        thread_local! {
            static $planner: RefCell<FftPlanner<$t>> = RefCell::new(FftPlanner::new());
            static $spectra: RefCell<HashMap<SpectrumKey, Arc<Vec<Complex<$t>>>>> = RefCell::new(HashMap::new());
            static $buffers: RefCell<(Vec<Complex<$t>>, Vec<Complex<$t>>)> = RefCell::new((Vec::new(), Vec::new()));
        }

        impl Sample for $t {
            fn with_planner<R>(f: impl FnOnce(&mut FftPlanner<Self>) -> R) -> R {
                $planner.with(|p| f(&mut p.borrow_mut()))
            }

            fn with_spectra<R>(f: impl FnOnce(&mut HashMap<SpectrumKey, Arc<Vec<Complex<Self>>>>) -> R) -> R {
                $spectra.with(|c| f(&mut c.borrow_mut()))
            }

            fn take_buffers() -> (Vec<Complex<Self>>, Vec<Complex<Self>>) {
                $buffers.with(|b| std::mem::take(&mut *b.borrow_mut()))
            }

            fn return_buffers(buffers: (Vec<Complex<Self>>, Vec<Complex<Self>>)) {
                $buffers.with(|b| *b.borrow_mut() = buffers);
            }
        }
    };
}

sample!(f32, PLANNER_F32, SPECTRA_F32, BUFFERS_F32);
sample!(f64, PLANNER_F64, SPECTRA_F64, BUFFERS_F64);

/// Cache-blocked transpose of a `rows × cols` matrix into `dst`.
fn transpose<T: Copy>(src: &[T], dst: &mut [T], rows: usize, cols: usize) {
    const B: usize = 16;
    for r0 in (0..rows).step_by(B) {
        for c0 in (0..cols).step_by(B) {
            for r in r0..(r0 + B).min(rows) {
                for c in c0..(c0 + B).min(cols) {
                    dst[c * rows + r] = src[r * cols + c];
                }
            }
        }
    }
}

/// Padding plan over the spatial axes, outermost first.
#[derive(Debug, Clone, PartialEq, Eq)]
struct Layout {
    extents: Vec<usize>,
    padded: Vec<usize>,
}

impl Layout {
    fn new(shape: Shape, kernel: &ConnectivityKernel) -> Self {
        let extents: Vec<usize> = shape.extents()[3 - shape.ndim()..].to_vec();
        // Offsets reach at most `r` past either end, so `n + r` samples keep
        // the wrapped-around part of the circular result in the zero padding.
        let padded = extents
            .iter()
            .map(|&n| smooth_size(n + kernel.radius()))
            .collect();
        Self { extents, padded }
    }

    fn len(&self) -> usize {
        self.padded.iter().product()
    }

    fn ndim(&self) -> usize {
        self.extents.len()
    }

    /// Padded index of a site given in unpadded coordinates.
    fn padded_index(&self, coord: &[usize]) -> usize {
        coord
            .iter()
            .zip(&self.padded)
            .fold(0, |acc, (&c, &m)| acc * m + c)
    }
}

/// Runs `fft` over the rows of `buf` (in the original axis order) that hold
/// grid sites; the rest stay untouched.
fn process_live_rows<T: FftNum>(
    buf: &mut [Complex<T>],
    layout: &Layout,
    fft: &dyn rustfft::Fft<T>,
    scratch: &mut [Complex<T>],
) {
    let row = layout.padded[layout.ndim() - 1];
    let live_rows = layout.extents[layout.ndim() - 2];
    let plane = layout.padded[layout.ndim() - 2] * row;
    let planes = if layout.ndim() == 3 {
        layout.extents[0]
    } else {
        1
    };
    for z in 0..planes {
        fft.process_with_scratch(&mut buf[z * plane..][..live_rows * row], scratch);
    }
}

/// Forward transform along every axis. The result is left in rotated axis
/// order (x outermost in 2D, `[y][x][z]` in 3D); kernel spectra share it.
fn forward<T: Sample>(
    buf: &mut Vec<Complex<T>>,
    tmp: &mut Vec<Complex<T>>,
    layout: &Layout,
    sparse_input: bool,
) {
    let mut dims = layout.padded.clone();
    let n = dims.len();
    let total = layout.len();
    let mut scratch = Vec::new();
    for pass in 0..n {
        let len = dims[n - 1];
        let fft = T::with_planner(|p| p.plan_fft_forward(len));
        scratch.resize(fft.get_inplace_scratch_len(), Complex::zero());
        if pass == 0 && sparse_input {
            process_live_rows(buf, layout, fft.as_ref(), &mut scratch);
        } else {
            fft.process_with_scratch(buf, &mut scratch);
        }
        if pass + 1 < n {
            transpose(buf, tmp, total / len, len);
            std::mem::swap(buf, tmp);
            dims.rotate_right(1);
        }
    }
}

/// Inverse of [`forward`], back to the original axis order. The final pass
/// only touches rows that hold grid sites.
fn inverse<T: Sample>(buf: &mut Vec<Complex<T>>, tmp: &mut Vec<Complex<T>>, layout: &Layout) {
    let n = layout.ndim();
    let mut dims = layout.padded.clone();
    dims.rotate_right(n - 1);
    let total = layout.len();
    let mut scratch = Vec::new();
    for pass in 0..n {
        let len = dims[n - 1];
        let fft = T::with_planner(|p| p.plan_fft_inverse(len));
        scratch.resize(fft.get_inplace_scratch_len(), Complex::zero());
        if pass + 1 == n {
            process_live_rows(buf, layout, fft.as_ref(), &mut scratch);
        } else {
            fft.process_with_scratch(buf, &mut scratch);
            transpose(buf, tmp, dims[0], total / dims[0]);
            std::mem::swap(buf, tmp);
            dims.rotate_left(1);
        }
    }
}

fn kernel_spectrum<T: Sample>(
    layout: &Layout,
    kernel: &ConnectivityKernel,
) -> Arc<Vec<Complex<T>>> {
    let key = (
        layout.padded.clone(),
        kernel.radius(),
        kernel.weights().to_vec(),
    );
    if let Some(hit) = T::with_spectra(|c| c.get(&key).cloned()) {
        return hit;
    }
    let n = layout.ndim();
    let mut buf = vec![Complex::<T>::zero(); layout.len()];
    let one = T::one();
    for offset in kernel.support() {
        // Offset `o` sits at `o mod m` so the circular result is read
        // without a shift.
        let coord: Vec<usize> = offset[3 - n..]
            .iter()
            .zip(&layout.padded)
            .map(|(&o, &m)| o.rem_euclid(m as isize) as usize)
            .collect();
        buf[layout.padded_index(&coord)].re = buf[layout.padded_index(&coord)].re + one;
    }
    let mut tmp = vec![Complex::<T>::zero(); layout.len()];
    forward(&mut buf, &mut tmp, layout, false);
    let spectrum = Arc::new(buf);
    T::with_spectra(|c| {
        if c.len() >= SPECTRUM_CACHE_LIMIT {
            c.clear();
        }
        c.insert(key, Arc::clone(&spectrum));
    });
    spectrum
}

fn convolve_with<T: Sample>(
    shape: Shape,
    layout: &Layout,
    a: &[u8],
    c: &[u8],
    kernel: &ConnectivityKernel,
) -> (Vec<u32>, Vec<u32>) {
    let [d, h, w] = shape.extents();
    let row = *layout.padded.last().expect("at least two axes");
    let py = layout.padded[layout.ndim() - 2];
    let to_t = |v: u8| T::from_u8(v).expect("u8 fits any float");

    let (mut field, mut tmp) = T::take_buffers();
    field.clear();
    field.resize(layout.len(), Complex::zero());
    tmp.resize(layout.len(), Complex::zero());
    for z in 0..d {
        for y in 0..h {
            let src = (z * h + y) * w;
            let dst = (z * py + y) * row;
            for x in 0..w {
                field[dst + x] = Complex::new(to_t(a[src + x]), to_t(c[src + x]));
            }
        }
    }
    let spectrum = kernel_spectrum::<T>(layout, kernel);
    forward(&mut field, &mut tmp, layout, true);
    for (f, s) in field.iter_mut().zip(spectrum.iter()) {
        *f = *f * *s;
    }
    inverse(&mut field, &mut tmp, layout);

    let scale = 1.0 / layout.len() as f64;
    let mut na = vec![0u32; shape.len()];
    let mut nc = vec![0u32; shape.len()];
    let rows = na.chunks_exact_mut(w).zip(nc.chunks_exact_mut(w));
    for (i, (ra, rc)) in rows.enumerate() {
        let (z, y) = (i / h, i % h);
        let src = &field[(z * py + y) * row..][..w];
        for ((a, c), v) in ra.iter_mut().zip(rc.iter_mut()).zip(src) {
            *a = to_count(v.re.into() * scale);
            *c = to_count(v.im.into() * scale);
        }
    }
    T::return_buffers((field, tmp));
    (na, nc)
}

/// Returns `(a ⊛ K, c ⊛ K)` as counts over `shape`.
pub(super) fn convolve_pair(
    shape: Shape,
    a: &[u8],
    c: &[u8],
    kernel: &ConnectivityKernel,
) -> (Vec<u32>, Vec<u32>) {
    let layout = Layout::new(shape, kernel);
    if kernel.popcount() <= SINGLE_PRECISION_MAX_TAPS {
        convolve_with::<f32>(shape, &layout, a, c, kernel)
    } else {
        convolve_with::<f64>(shape, &layout, a, c, kernel)
    }
}
