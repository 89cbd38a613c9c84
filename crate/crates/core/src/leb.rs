//! LEB128 variable-length integers as used by the wasm binary format.
//!
//! Readers accept any encoding the format allows (including padded forms up to
//! the maximum byte count for the width). Writers always emit the minimal form.

use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LebError {
    /// Input ended before the terminating byte.
    Truncated,
    /// Too many bytes for the target width, or unused high bits set.
    Overflow,
}

impl fmt::Display for LebError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LebError::Truncated => f.write_str("truncated LEB128"),
            LebError::Overflow => f.write_str("LEB128 overflows target width"),
        }
    }
}

/// Reads an unsigned LEB128 of at most `bits` significant bits.
/// Returns the value and the number of bytes consumed.
pub fn read_unsigned(input: &[u8], bits: u32) -> Result<(u64, usize), LebError> {
    debug_assert!(bits <= 64);
    let max_bytes = bits.div_ceil(7) as usize;
    let mut result: u64 = 0;
    let mut shift = 0u32;
    for (i, &byte) in input.iter().enumerate() {
        if i >= max_bytes {
            return Err(LebError::Overflow);
        }
        let low = u64::from(byte & 0x7f);
        if i == max_bytes - 1 {
            // last permitted byte: bits above the width must be clear
            let remaining = bits - shift;
            if remaining < 7 && (low >> remaining) != 0 {
                return Err(LebError::Overflow);
            }
        }
        result |= low << shift;
        if byte & 0x80 == 0 {
            return Ok((result, i + 1));
        }
        shift += 7;
    }
    Err(LebError::Truncated)
}

/// Reads a signed LEB128 of `bits` width (32, 33 or 64 in practice).
pub fn read_signed(input: &[u8], bits: u32) -> Result<(i64, usize), LebError> {
    debug_assert!(bits <= 64);
    let max_bytes = bits.div_ceil(7) as usize;
    let mut result: i64 = 0;
    let mut shift = 0u32;
    for (i, &byte) in input.iter().enumerate() {
        if i >= max_bytes {
            return Err(LebError::Overflow);
        }
        let low = i64::from(byte & 0x7f);
        let last = byte & 0x80 == 0;
        if i == max_bytes - 1 {
            if !last {
                return Err(LebError::Overflow);
            }
            // unused bits must be a sign extension of the top used bit
            let remaining = bits - shift;
            if remaining < 7 {
                let sign_and_unused = (byte & 0x7f) >> (remaining - 1);
                let all_ones = 0x7f >> (remaining - 1);
                if sign_and_unused != 0 && sign_and_unused != all_ones {
                    return Err(LebError::Overflow);
                }
            }
        }
        if shift < 64 {
            result |= low << shift;
        }
        shift += 7;
        if last {
            if shift < 64 && byte & 0x40 != 0 {
                result |= -1i64 << shift;
            }
            return Ok((result, i + 1));
        }
    }
    Err(LebError::Truncated)
}

pub fn write_unsigned(out: &mut Vec<u8>, mut value: u64) {
    loop {
        let byte = (value & 0x7f) as u8;
        value >>= 7;
        if value == 0 {
            out.push(byte);
            return;
        }
        out.push(byte | 0x80);
    }
}

pub fn write_signed(out: &mut Vec<u8>, mut value: i64) {
    loop {
        let byte = (value & 0x7f) as u8;
        value >>= 7;
        let done = (value == 0 && byte & 0x40 == 0) || (value == -1 && byte & 0x40 != 0);
        if done {
            out.push(byte);
            return;
        }
        out.push(byte | 0x80);
    }
}
