// SPDX-License-Identifier: Apache-2.0

//! Stable least-significant-digit radix sort over 128-bit keys.

const RADIX: usize = 256;

/// Returns the permutation that stably sorts `keys` ascending.
///
/// Only the low `key_bits` bits take part, processed one byte per pass from
/// the least significant byte up. Passes in which every key shares the same
/// byte are skipped.
pub fn radix_argsort(keys: &[u128], key_bits: u32) -> Vec<usize> {
    let n = keys.len();
    let mut order: Vec<usize> = (0..n).collect();
    if n < 2 || key_bits == 0 {
        return order;
    }
    let passes = key_bits.div_ceil(8).min(16) as usize;
    let mut scratch = vec![0usize; n];

    for pass in 0..passes {
        let shift = 8 * pass;
        let byte = |i: usize| ((keys[i] >> shift) & 0xff) as usize;

        let mut counts = [0usize; RADIX];
        for &i in &order {
            counts[byte(i)] += 1;
        }
        if counts.contains(&n) {
            continue;
        }
        let mut offsets = [0usize; RADIX];
        let mut acc = 0;
        for (slot, &c) in offsets.iter_mut().zip(counts.iter()) {
            *slot = acc;
            acc += c;
        }
        for &i in &order {
            let b = byte(i);
            scratch[offsets[b]] = i;
            offsets[b] += 1;
        }
        std::mem::swap(&mut order, &mut scratch);
    }
    order
}
