//! CRC-8 with generator x^8 + x^2 + x + 1 (0x07), zero init, no reflection,
//! no final XOR. Bits are processed MSB-first.

pub const CRC_POLY: u8 = 0x07;
pub const CRC_LEN: usize = 8;

/// CRC-8 over a bit sequence (one bit per byte, values 0/1).
pub fn crc8(bits: &[u8]) -> u8 {
    let mut reg: u8 = 0;
    for &b in bits {
        let feedback = ((reg >> 7) ^ (b & 1)) & 1;
        reg <<= 1;
        if feedback == 1 {
            reg ^= CRC_POLY;
        }
    }
    reg
}

/// The CRC as 8 bits, MSB first.
pub fn crc8_bits(bits: &[u8]) -> [u8; CRC_LEN] {
    let c = crc8(bits);
    std::array::from_fn(|i| (c >> (7 - i)) & 1)
}

/// Appends the CRC bits to `message`.
pub fn append_crc(message: &[u8]) -> Vec<u8> {
    let mut out = message.to_vec();
    out.extend_from_slice(&crc8_bits(message));
    out
}

/// True when `block` (message followed by its CRC) is divisible by the generator.
pub fn check_crc(block: &[u8]) -> bool {
    block.len() >= CRC_LEN && crc8(block) == 0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modem::bytes_to_bits;

    /// Polynomial long division over GF(2), written independently of the
    /// shift-register form above.
    fn long_division_remainder(bits: &[u8]) -> u8 {
        let generator = [1u8, 0, 0, 0, 0, 0, 1, 1, 1];
        let mut work: Vec<u8> = bits.to_vec();
        work.extend_from_slice(&[0; 8]);
        for i in 0..bits.len() {
            if work[i] == 1 {
                for (j, g) in generator.iter().enumerate() {
                    work[i + j] ^= g;
                }
            }
        }
        work[bits.len()..].iter().fold(0u8, |acc, &b| (acc << 1) | b)
    }

    #[test]
    fn empty_message_is_zero() {
        assert_eq!(crc8(&[]), 0x00);
    }

    #[test]
    fn check_string_matches_long_division() {
        let bits = bytes_to_bits(b"123456789");
        let oracle = long_division_remainder(&bits);
        assert_eq!(oracle, 0xF4);
        assert_eq!(crc8(&bits), oracle);
    }

    #[test]
    fn appended_crc_passes() {
        for msg in [&b"a"[..], b"hello world", b"\x00\xff\x10"] {
            let bits = bytes_to_bits(msg);
            assert_eq!(crc8(&bits), long_division_remainder(&bits));
            let block = append_crc(&bits);
            assert!(check_crc(&block));
            let mut bad = block.clone();
            bad[3] ^= 1;
            assert!(!check_crc(&bad));
        }
    }
}
