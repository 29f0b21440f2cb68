//! Deterministic offline embedder: signed feature hashing over lowercase
//! whitespace tokens.

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
const SIGN_SALT: &[u8] = b"sign\0";

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

/// Bucket index for a token: `fnv1a64(token) mod dim`.
pub fn bucket(token: &str, dim: usize) -> usize {
    (fnv1a64(token.as_bytes()) % dim as u64) as usize
}

/// `+1` or `-1`, from the low bit of the FNV-1a hash of `"sign\0" ++ token`.
pub fn sign(token: &str) -> f64 {
    let mut salted = Vec::with_capacity(SIGN_SALT.len() + token.len());
    salted.extend_from_slice(SIGN_SALT);
    salted.extend_from_slice(token.as_bytes());
    if fnv1a64(&salted) & 1 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Feature-hashed bag of words, L2-normalized. Inputs that hash to the zero
/// vector (including empty input) map to the first basis vector.
///
/// # Panics
/// If `dim == 0`.
pub fn test_embedder(input: &str, dim: usize) -> Vec<f64> {
    assert!(dim > 0, "embedding dimension must be positive");
    let mut v = vec![0.0; dim];
    for token in input.split_whitespace() {
        let token = token.to_lowercase();
        v[bucket(&token, dim)] += sign(&token);
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        v[0] = 1.0;
    } else {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_reference_vectors() {
        // Published FNV-1a 64-bit test vectors.
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn repeated_token_hits_one_coordinate() {
        // Hand-computed: fnv1a64("aa") = 0x089c4307b54596b7, so the bucket
        // for d = 8 is 7; fnv1a64("sign\0aa") = 0x4ec7c5cef971b102 is even,
        // so the sign is +1.
        assert_eq!(fnv1a64(b"aa"), 0x089c_4307_b545_96b7);
        assert_eq!(fnv1a64(b"sign\0aa"), 0x4ec7_c5ce_f971_b102);
        let v = test_embedder("aa aa", 8);
        let mut expected = vec![0.0; 8];
        expected[7] = 1.0;
        assert_eq!(v, expected);
    }

    #[test]
    fn order_and_case_invariant() {
        assert_eq!(test_embedder("a b", 16), test_embedder("b a", 16));
        assert_eq!(test_embedder("The Troops", 16), test_embedder("the troops", 16));
    }

    #[test]
    fn unit_norm_and_degenerate_input() {
        for text in ["one", "several words in a phrase", "x y x y z"] {
            let n: f64 = test_embedder(text, 32).iter().map(|x| x * x).sum();
            assert!((n - 1.0).abs() < 1e-12, "{text}: {n}");
        }
        let mut first = vec![0.0; 4];
        first[0] = 1.0;
        assert_eq!(test_embedder("", 4), first);
        assert_eq!(test_embedder("   ", 4), first);
    }
}
