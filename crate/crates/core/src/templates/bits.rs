//! Packed bit-plane helpers. Bit `i` lives in word `i / 64` at position
//! `i % 64`; bits past the logical length are always zero.

#[inline]
pub(crate) fn words_for(len: usize) -> usize {
    len.div_ceil(64)
}

#[inline]
pub(crate) fn get(words: &[u64], i: usize) -> bool {
    (words[i / 64] >> (i % 64)) & 1 == 1
}

#[inline]
pub(crate) fn set(words: &mut [u64], i: usize, value: bool) {
    let bit = 1u64 << (i % 64);
    if value {
        words[i / 64] |= bit;
    } else {
        words[i / 64] &= !bit;
    }
}

pub(crate) fn from_bools(bits: &[bool]) -> Vec<u64> {
    let mut words = vec![0u64; words_for(bits.len())];
    for (i, &b) in bits.iter().enumerate() {
        if b {
            words[i / 64] |= 1 << (i % 64);
        }
    }
    words
}

/// True when every bit at or past `len` is zero.
pub(crate) fn padding_clear(words: &[u64], len: usize) -> bool {
    let tail = len % 64;
    if tail == 0 {
        return true;
    }
    words.last().is_none_or(|w| w >> tail == 0)
}

pub(crate) fn popcount(words: &[u64]) -> u32 {
    words.iter().map(|w| w.count_ones()).sum()
}

/// Reads `n <= 64` bits starting at `start` without wrapping. Bits past the
/// end of the slice read as zero.
#[inline]
fn read_linear(src: &[u64], start: usize, n: usize) -> u64 {
    let word = start / 64;
    let off = start % 64;
    let mut v = src[word] >> off;
    if off != 0 && off + n > 64 {
        if let Some(next) = src.get(word + 1) {
            v |= next << (64 - off);
        }
    }
    if n < 64 {
        v &= (1u64 << n) - 1;
    }
    v
}

/// Reads `want <= 64` bits starting at `start`, wrapping around a plane of
/// `len` bits.
#[inline]
fn read_circular(src: &[u64], len: usize, mut start: usize, want: usize) -> u64 {
    let mut out = 0u64;
    let mut filled = 0;
    while filled < want {
        let n = (len - start).min(want - filled);
        out |= read_linear(src, start, n) << filled;
        filled += n;
        start += n;
        if start == len {
            start = 0;
        }
    }
    out
}

/// Circular rotation of a `len`-bit plane: output bit `(i + k) mod len` is
/// input bit `i`. `k` must be below `len`.
pub(crate) fn rotate(src: &[u64], len: usize, k: usize) -> Vec<u64> {
    debug_assert!(k < len);
    let n_words = words_for(len);
    let mut out = vec![0u64; n_words];
    if k == 0 {
        out.copy_from_slice(&src[..n_words]);
        return out;
    }
    for (w, slot) in out.iter_mut().enumerate() {
        let first = w * 64;
        let want = (len - first).min(64);
        let start = (first + len - k) % len;
        *slot = read_circular(src, len, start, want);
    }
    out
}

/// Disagreeing and jointly valid bit counts for two masked planes.
#[inline]
pub(crate) fn masked_counts(code_a: &[u64], mask_a: &[u64], code_b: &[u64], mask_b: &[u64]) -> (u32, u32) {
    let mut disagree = 0u32;
    let mut valid = 0u32;
    for (((ca, ma), cb), mb) in code_a.iter().zip(mask_a).zip(code_b).zip(mask_b) {
        let joint = ma & mb;
        // Cannot overflow for any real plane; wrapping keeps the loop
        // vectorized when overflow checks are on.
        disagree = disagree.wrapping_add(((ca ^ cb) & joint).count_ones());
        valid = valid.wrapping_add(joint.count_ones());
    }
    (disagree, valid)
}
