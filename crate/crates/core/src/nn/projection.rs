//! Box projection used as the final policy layer, so every policy output lies in the
//! input set by construction.
use alloc::vec::Vec;

/// Clamps `u` into `[lo, hi]` in place and writes the pass-through mask: 1 where the raw
/// value was inside the box (boundary included), 0 where it was clipped.
#[inline]
pub fn project_in_place(u: &mut [f64], mask: &mut [f64], lo: &[f64], hi: &[f64]) {
    for (((v, m), l), h) in u.iter_mut().zip(mask.iter_mut()).zip(lo).zip(hi) {
        if *v < *l {
            *v = *l;
            *m = 0.0;
        } else if *v > *h {
            *v = *h;
            *m = 0.0;
        } else {
            *m = 1.0;
        }
    }
}

/// Projected input and subgradient mask.
pub fn project_input(u_raw: &[f64], lo: &[f64], hi: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut u = u_raw.to_vec();
    let mut mask = alloc::vec![0.0; u.len()];
    project_in_place(&mut u, &mut mask, lo, hi);
    (u, mask)
}
