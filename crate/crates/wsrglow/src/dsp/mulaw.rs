//! mu-law companding and 256-level uniform quantization of companded values.

use crate::error::{Error, Result};

pub const MU: f64 = 255.0;

/// sign(x) * ln(1 + mu*|x|) / ln(1 + mu), defined on [-1, 1].
pub fn mulaw_encode(x: f64) -> Result<f64> {
    if !(x.abs() <= 1.0) {
        return Err(Error::Dsp(format!("mulaw_encode input {x} outside [-1, 1]")));
    }
    Ok(x.signum() * (1.0 + MU * x.abs()).ln() / (1.0 + MU).ln())
}

/// Exact inverse of [`mulaw_encode`].
pub fn mulaw_decode(y: f64) -> Result<f64> {
    if !(y.abs() <= 1.0) {
        return Err(Error::Dsp(format!("mulaw_decode input {y} outside [-1, 1]")));
    }
    Ok(y.signum() * ((1.0 + MU).powf(y.abs()) - 1.0) / MU)
}

/// code = min(floor((y + 1)/2 * 256), 255) for y in [-1, 1].
pub fn quantize_256(y: f64) -> Result<u8> {
    if !(y.abs() <= 1.0) {
        return Err(Error::Dsp(format!("quantize_256 input {y} outside [-1, 1]")));
    }
    Ok((((y + 1.0) / 2.0 * 256.0).floor() as i64).min(255) as u8)
}

/// Center of the code's bin, the inverse convention for [`quantize_256`].
pub fn dequantize_256(code: u8) -> f64 {
    (code as f64 + 0.5) / 256.0 * 2.0 - 1.0
}

/// Full companded code for one sample: encode then quantize.
pub fn sample_to_code(x: f64) -> Result<u8> {
    quantize_256(mulaw_encode(x)?)
}

/// Codes for a whole sample buffer.
pub fn codes_for(samples: &[f32]) -> Result<Vec<u8>> {
    samples.iter().map(|&s| sample_to_code(s as f64)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn encode_fixed_points() {
        assert_eq!(mulaw_encode(0.0).unwrap(), 0.0);
        assert_eq!(mulaw_encode(1.0).unwrap(), 1.0);
        assert_eq!(mulaw_encode(-1.0).unwrap(), -1.0);
    }

    #[test]
    fn encode_matches_direct_formula() {
        let got = mulaw_encode(0.1).unwrap();
        let expect = (26.5f64).ln() / (256f64).ln();
        assert_relative_eq!(got, expect, epsilon = 1e-15);
    }

    #[test]
    fn decode_fixed_points_and_inverse() {
        assert_eq!(mulaw_decode(0.0).unwrap(), 0.0);
        assert_relative_eq!(mulaw_decode(1.0).unwrap(), 1.0, epsilon = 1e-12);
        let y = mulaw_encode(0.3).unwrap();
        assert_relative_eq!(mulaw_decode(y).unwrap(), 0.3, epsilon = 1e-6);
    }

    #[test]
    fn out_of_range_is_an_error() {
        assert!(mulaw_encode(1.0001).is_err());
        assert!(mulaw_decode(-1.5).is_err());
        assert!(quantize_256(2.0).is_err());
        assert!(mulaw_encode(f64::NAN).is_err());
    }

    #[test]
    fn quantize_boundaries() {
        assert_eq!(quantize_256(-1.0).unwrap(), 0);
        assert_eq!(quantize_256(1.0).unwrap(), 255);
        assert_eq!(quantize_256(0.0).unwrap(), 128);
    }

    proptest! {
        #[test]
        fn encode_decode_is_identity(x in -1.0f64..=1.0) {
            let y = mulaw_encode(x).unwrap();
            prop_assert!((mulaw_decode(y).unwrap() - x).abs() < 1e-6);
        }

        #[test]
        fn full_chain_error_is_bounded(x in -1.0f64..=1.0) {
            let code = sample_to_code(x).unwrap();
            let back = mulaw_decode(dequantize_256(code)).unwrap();
            prop_assert!((back - x).abs() <= 0.04, "x={x} back={back}");
        }
    }
}
