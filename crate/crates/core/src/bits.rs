//! Bit-string helpers shared by every layer.
//!
//! Configurations, stored patterns and channel payloads are all canonical
//! bit strings. They are represented as [`Bits`], a most-significant-first
//! `BitVec`, so that the textual form reads like the binary encoding.

use bitvec::prelude::*;

/// Storage word. 32 bits so the same code builds for wasm32.
pub type Word = u32;

/// Canonical bit string.
pub type Bits = BitVec<Word, Msb0>;

/// Borrowed view of a [`Bits`].
pub type BitStr = BitSlice<Word, Msb0>;

/// Number of bits needed to distinguish `n` alternatives, `ceil(log2(n))`.
///
/// `ceil_log2(0)` and `ceil_log2(1)` are both 0.
pub fn ceil_log2(n: u64) -> u32 {
    if n <= 1 {
        0
    } else {
        64 - (n - 1).leading_zeros()
    }
}

/// Hamming distance between two equal-length bit strings.
pub fn hamming(a: &BitStr, b: &BitStr) -> u32 {
    debug_assert_eq!(a.len(), b.len());
    let mut diff = a.to_bitvec();
    diff ^= b;
    diff.count_ones() as u32
}

/// Renders bits as a `0`/`1` string.
pub fn to_string(bits: &BitStr) -> String {
    bits.iter().map(|b| if *b { '1' } else { '0' }).collect()
}

/// Renders bits as lowercase hex, padding the tail with zero bits.
pub fn to_hex(bits: &BitStr) -> String {
    let mut out = String::with_capacity(bits.len().div_ceil(4));
    for chunk in bits.chunks(4) {
        let mut nibble = 0u8;
        for (i, b) in chunk.iter().enumerate() {
            if *b {
                nibble |= 1 << (3 - i);
            }
        }
        out.push(char::from_digit(nibble as u32, 16).unwrap());
    }
    out
}

/// Parses a `0`/`1` string. Underscores are accepted as separators.
pub fn parse_binary(s: &str) -> Option<Bits> {
    let mut out = Bits::new();
    for c in s.chars() {
        match c {
            '0' => out.push(false),
            '1' => out.push(true),
            '_' => {}
            _ => return None,
        }
    }
    Some(out)
}

/// Parses hex digits into a bit string of exactly `len` bits (or `4 * digits`
/// when `len` is `None`).
pub fn parse_hex(s: &str, len: Option<usize>) -> Option<Bits> {
    let mut out = Bits::new();
    for c in s.chars() {
        if c == '_' {
            continue;
        }
        let v = c.to_digit(16)?;
        for i in (0..4).rev() {
            out.push(v & (1 << i) != 0);
        }
    }
    if let Some(len) = len {
        if len > out.len() || out[len..].any() {
            return None;
        }
        out.truncate(len);
    }
    Some(out)
}

/// Writes `value` into `width` bits, most significant first.
pub fn push_uint(out: &mut Bits, value: u64, width: u32) {
    for i in (0..width).rev() {
        out.push(value >> i & 1 == 1);
    }
}

/// Reads `width` bits starting at `offset` as an unsigned integer.
pub fn read_uint(bits: &BitStr, offset: usize, width: u32) -> u64 {
    let mut v = 0u64;
    for i in 0..width as usize {
        v = (v << 1) | bits[offset + i] as u64;
    }
    v
}

/// Stable 64-bit FNV-1a digest. Used for fingerprints that end up in traces,
/// so it must not depend on the std hasher.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Digest of a bit string including its length.
pub fn digest(bits: &BitStr) -> u64 {
    let mut bytes = (bits.len() as u64).to_le_bytes().to_vec();
    bytes.extend(to_hex(bits).bytes());
    fnv1a(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ceil_log2_matches_definition() {
        assert_eq!(ceil_log2(0), 0);
        assert_eq!(ceil_log2(1), 0);
        assert_eq!(ceil_log2(2), 1);
        assert_eq!(ceil_log2(3), 2);
        assert_eq!(ceil_log2(8), 3);
        assert_eq!(ceil_log2(1024), 10);
        assert_eq!(ceil_log2(1025), 11);
    }

    #[test]
    fn hex_and_binary_forms() {
        let b = parse_binary("1010_0001").unwrap();
        assert_eq!(to_hex(&b), "a1");
        assert_eq!(parse_hex("a1", Some(8)).unwrap(), b);
        assert_eq!(
            parse_hex("a8", Some(5)).unwrap(),
            parse_binary("10101").unwrap()
        );
        assert!(parse_hex("a9", Some(5)).is_none());
        assert!(parse_binary("012").is_none());
    }

    #[test]
    fn uint_round_trip() {
        let mut b = Bits::new();
        push_uint(&mut b, 5, 3);
        push_uint(&mut b, 1023, 10);
        assert_eq!(to_string(&b[..3]), "101");
        assert_eq!(read_uint(&b, 3, 10), 1023);
    }
}
