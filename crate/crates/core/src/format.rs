//! Stable numeric formatting for externally visible reports.

use serde::Serializer;

/// Significant digits kept when scores are written out.
pub const SIGNIFICANT_DIGITS: usize = 9;

/// Rounds `x` to [`SIGNIFICANT_DIGITS`] significant digits. Non-finite
/// values pass through unchanged.
pub fn round_sig(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{:.*e}", SIGNIFICANT_DIGITS - 1, x)
        .parse()
        .unwrap_or(x)
}

pub fn sig9<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_f64(round_sig(*x))
}

pub fn sig9_opt<S: Serializer>(x: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
    match x {
        Some(v) => s.serialize_some(&round_sig(*v)),
        None => s.serialize_none(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounds_to_nine_digits() {
        assert_eq!(round_sig(0.7000000000000001), 0.7);
        assert_eq!(round_sig(2.0 / 3.0), 0.666666667);
        assert_eq!(round_sig(-123456.78912), -123456.789);
        assert_eq!(round_sig(1e-20 / 3.0), 3.33333333e-21);
        assert_eq!(round_sig(0.0), 0.0);
        assert!(round_sig(f64::NAN).is_nan());
    }

    #[test]
    fn serialized_text_is_short() {
        #[derive(serde::Serialize)]
        struct W(#[serde(serialize_with = "sig9")] f64);
        assert_eq!(serde_json::to_string(&W(1.0 / 3.0)).unwrap(), "0.333333333");
    }
}
