//! Dense matrix kernels over row-major slices.
//!
//! Rows of the output are independent, so the row-parallel path computes
//! exactly the same values as the sequential one; every output element is
//! accumulated in a fixed order either way.

use std::sync::atomic::{AtomicBool, Ordering};

use rayon::prelude::*;

use super::tensor::Element;

static STRICT: AtomicBool = AtomicBool::new(false);

/// Below this many multiply-adds the thread pool costs more than it saves.
const PAR_THRESHOLD: usize = 1 << 18;

/// Forces single-threaded kernels with a fixed reduction order.
pub fn set_strict_deterministic(on: bool) {
    STRICT.store(on, Ordering::SeqCst);
}

pub fn strict_deterministic() -> bool {
    STRICT.load(Ordering::SeqCst)
}

fn parallel(work: usize) -> bool {
    work >= PAR_THRESHOLD && !strict_deterministic() && rayon::current_num_threads() > 1
}

/// `out[m×n] = a[m×k] · b[k×n]`
pub fn matmul_nn<T: Element>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    let row = |i: usize, o: &mut [T]| {
        o.iter_mut().for_each(|v| *v = T::zero());
        let ar = &a[i * k..(i + 1) * k];
        for (p, &av) in ar.iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            let br = &b[p * n..(p + 1) * n];
            for (ov, &bv) in o.iter_mut().zip(br) {
                *ov += av * bv;
            }
        }
    };
    if n == 0 {
        return;
    }
    if parallel(m * k * n) {
        out.par_chunks_mut(n).enumerate().for_each(|(i, o)| row(i, o));
    } else {
        out.chunks_mut(n).enumerate().for_each(|(i, o)| row(i, o));
    }
}

/// `out[m×n] = a[m×k] · b[n×k]ᵀ`
pub fn matmul_nt<T: Element>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    if n == 0 {
        return;
    }
    let mut bt = vec![T::zero(); k * n];
    for j in 0..n {
        for p in 0..k {
            bt[p * n + j] = b[j * k + p];
        }
    }
    matmul_nn(a, &bt, out, m, k, n);
}

/// `out[k×n] += a[m×k]ᵀ · b[m×n]`
pub fn matmul_tn_acc<T: Element>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    if n == 0 {
        return;
    }
    let row = |p: usize, o: &mut [T]| {
        for i in 0..m {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let br = &b[i * n..(i + 1) * n];
            for (ov, &bv) in o.iter_mut().zip(br) {
                *ov += av * bv;
            }
        }
    };
    if parallel(m * k * n) {
        out.par_chunks_mut(n).enumerate().for_each(|(p, o)| row(p, o));
    } else {
        out.chunks_mut(n).enumerate().for_each(|(p, o)| row(p, o));
    }
}
