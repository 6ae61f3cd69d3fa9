//! Band-limited differential forms on the flat torus and on Tⁿ × B(0,2r).
//!
//! Forms are stored as sparse coefficient tables over (frequency, multi-index)
//! keys, so that exterior derivative, Hodge star, codifferential and wedge are
//! exact operations on the representation. Nonlinear operations (pullback to a
//! graph, pointwise products) go through an alias-free collocation grid.

mod ambient;
mod grid;
mod norms;
mod pullback;
mod torus;

pub use ambient::{AmbientForm, AmbientGridEval, AmbientKey};
pub(crate) use ambient::frequency_map as ambient_frequency_map;
pub use grid::FourierGrid;
pub use norms::{c0_alpha_norm, surrogate_norms, NormParams, NormReport};
pub use pullback::{GraphContext, PreparedForm};
pub use torus::{TorusForm, TorusKey};

/// Insert axis `j` into a strictly increasing tuple. Returns the new tuple
/// and the sign (−1)^{#axes before j}, or None when the axis is already
/// present (the wedge vanishes).
pub(crate) fn insert_axis(axes: &[u8], j: u8) -> Option<(Vec<u8>, f64)> {
    match axes.binary_search(&j) {
        Ok(_) => None,
        Err(pos) => {
            let mut out = Vec::with_capacity(axes.len() + 1);
            out.extend_from_slice(&axes[..pos]);
            out.push(j);
            out.extend_from_slice(&axes[pos..]);
            let sign = if pos % 2 == 0 { 1.0 } else { -1.0 };
            Some((out, sign))
        }
    }
}

/// Merge two strictly increasing tuples, with the sign of the permutation
/// sorting their concatenation. None when they overlap.
pub(crate) fn merge_axes(a: &[u8], b: &[u8]) -> Option<(Vec<u8>, f64)> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let mut sign = 1.0;
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        if a[i] == b[j] {
            return None;
        }
        if a[i] < b[j] {
            out.push(a[i]);
            i += 1;
        } else {
            // b[j] jumps over the remaining a[i..] entries
            if (a.len() - i) % 2 == 1 {
                sign = -sign;
            }
            out.push(b[j]);
            j += 1;
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
    Some((out, sign))
}

/// Complement of a strictly increasing tuple inside 0..n.
pub(crate) fn complement(axes: &[u8], n: usize) -> Vec<u8> {
    (0..n as u8).filter(|j| !axes.contains(j)).collect()
}

/// Enumerate all strictly increasing tuples of length `p` over 0..n.
pub(crate) fn increasing_tuples(n: usize, p: usize) -> Vec<Vec<u8>> {
    if p > n {
        return Vec::new();
    }
    let mut out = Vec::new();
    let mut current = Vec::with_capacity(p);
    fn rec(n: u8, p: usize, start: u8, current: &mut Vec<u8>, out: &mut Vec<Vec<u8>>) {
        if current.len() == p {
            out.push(current.clone());
            return;
        }
        for j in start..n {
            current.push(j);
            rec(n, p, j + 1, current, out);
            current.pop();
        }
    }
    rec(n as u8, p, 0, &mut current, &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn merge_signs_match_sorting() {
        // dx2 ^ dx0dx1 = + dx0dx1dx2 needs two transpositions
        let (axes, sign) = merge_axes(&[2], &[0, 1]).unwrap();
        assert_eq!(axes, vec![0, 1, 2]);
        assert_eq!(sign, 1.0);
        let (_, sign) = merge_axes(&[1], &[0]).unwrap();
        assert_eq!(sign, -1.0);
        assert!(merge_axes(&[0, 1], &[1]).is_none());
    }

    #[test]
    fn insertion_signs() {
        let (axes, sign) = insert_axis(&[0, 2], 1).unwrap();
        assert_eq!(axes, vec![0, 1, 2]);
        assert_eq!(sign, -1.0);
        assert!(insert_axis(&[0, 2], 2).is_none());
    }

    #[test]
    fn tuple_enumeration_counts() {
        assert_eq!(increasing_tuples(4, 2).len(), 6);
        assert_eq!(increasing_tuples(3, 0), vec![Vec::<u8>::new()]);
        assert!(increasing_tuples(2, 3).is_empty());
    }
}
