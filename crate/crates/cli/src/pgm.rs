//! Binary PGM (P5) image writing with per-map min-max normalization.

/// Encodes a row-major map as an 8-bit P5 PGM, stretching the value range
/// to 0..255. A constant map encodes as all zeros.
pub fn encode(width: usize, height: usize, values: &[f64]) -> Vec<u8> {
    assert_eq!(values.len(), width * height);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let span = hi - lo;
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    for &v in values {
        let byte = if span > 0.0 {
            ((v - lo) / span * 255.0).round() as u8
        } else {
            0
        };
        out.push(byte);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_and_range() {
        let bytes = encode(2, 2, &[0.0, 1.0, 0.5, 0.25]);
        assert!(bytes.starts_with(b"P5\n2 2\n255\n"));
        let px = &bytes[bytes.len() - 4..];
        assert_eq!(px[0], 0);
        assert_eq!(px[1], 255);
    }

    #[test]
    fn constant_map_is_zero() {
        let bytes = encode(3, 1, &[7.0, 7.0, 7.0]);
        assert_eq!(&bytes[bytes.len() - 3..], &[0, 0, 0]);
    }
}
