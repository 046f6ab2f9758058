use dualcodec_autodiff::{NdArray, Scalar};

/// Additive mask over `[left | right]` positions: every query sees the left
/// chunk, only right-chunk queries see the right chunk.
pub fn chunked_causal_mask<T: Scalar>(t_left: usize, t_right: usize) -> NdArray<T> {
    let n = t_left + t_right;
    let mut data = vec![T::zero(); n * n];
    for row in 0..t_left {
        for col in t_left..n {
            data[row * n + col] = T::neg_infinity();
        }
    }
    NdArray::from_vec(&[n, n], data).expect("square mask")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two() {
        let m = chunked_causal_mask::<f32>(2, 2);
        for r in 0..4 {
            for c in 0..4 {
                let blocked = r < 2 && c >= 2;
                assert_eq!(m.data()[r * 4 + c] == f32::NEG_INFINITY, blocked, "({r},{c})");
                if !blocked {
                    assert_eq!(m.data()[r * 4 + c], 0.0);
                }
            }
        }
    }

    #[test]
    fn no_right_chunk_is_full_attention() {
        assert!(chunked_causal_mask::<f64>(3, 0).data().iter().all(|&v| v == 0.0));
    }
}
