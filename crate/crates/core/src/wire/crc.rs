const POLY: u16 = 0x1021;

const TABLE: [u16; 256] = build_table();

const fn build_table() -> [u16; 256] {
    let mut table = [0u16; 256];
    let mut i = 0;
    while i < 256 {
        let mut crc = (i as u16) << 8;
        let mut bit = 0;
        while bit < 8 {
            crc = if crc & 0x8000 != 0 { (crc << 1) ^ POLY } else { crc << 1 };
            bit += 1;
        }
        table[i] = crc;
        i += 1;
    }
    table
}

/// CRC-16/XMODEM: polynomial 0x1021, init 0, no reflection, no final XOR.
pub fn crc16(data: &[u8]) -> u16 {
    data.iter().fold(0u16, |crc, &b| (crc << 8) ^ TABLE[((crc >> 8) as u8 ^ b) as usize])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    // Shift-register reference, one bit at a time.
    fn crc16_bitwise(data: &[u8]) -> u16 {
        let mut crc: u16 = 0;
        for &byte in data {
            for i in (0..8).rev() {
                let in_bit = (byte >> i) & 1 == 1;
                let top = crc & 0x8000 != 0;
                crc <<= 1;
                if in_bit ^ top {
                    crc ^= 0x1021;
                }
            }
        }
        crc
    }

    #[test]
    fn empty_input_is_initial_value() {
        assert_eq!(crc16(&[]), 0x0000);
        assert_eq!(crc16_bitwise(&[]), 0x0000);
    }

    #[test]
    fn xmodem_check_value() {
        assert_eq!(crc16_bitwise(b"123456789"), 0x31C3);
        assert_eq!(crc16(b"123456789"), 0x31C3);
    }

    proptest! {
        #[test]
        fn table_matches_bitwise_reference(data in proptest::collection::vec(any::<u8>(), 0..128)) {
            prop_assert_eq!(crc16(&data), crc16_bitwise(&data));
        }

        #[test]
        fn appending_big_endian_crc_leaves_zero_residue(data in proptest::collection::vec(any::<u8>(), 0..128)) {
            let mut with_crc = data.clone();
            with_crc.extend_from_slice(&crc16(&data).to_be_bytes());
            prop_assert_eq!(crc16_bitwise(&with_crc), 0);
        }
    }
}
