//! Fixed-precision number formatting for CSV outputs.
//!
//! Every numeric CSV field is written with 12 significant digits in the
//! style of C's `%.12g`: plain decimal notation for moderate magnitudes,
//! exponent notation outside `[1e-5, 1e12)`, trailing zeros trimmed.

pub const SIG_DIGITS: usize = 12;

pub fn fmt_sig(x: f64) -> String {
    fmt_sig_digits(x, SIG_DIGITS)
}

pub fn fmt_sig_digits(x: f64, digits: usize) -> String {
    if x.is_nan() {
        return "nan".to_string();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf" } else { "-inf" }.to_string();
    }
    if x == 0.0 {
        return "0".to_string();
    }
    let digits = digits.max(1);
    // Round first, then read the decimal exponent off the rounded value.
    let sci = format!("{:.*e}", digits - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent marker");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -5 || exp >= digits as i32 {
        let m = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        trim_zeros(&format!("{:.*}", decimals, x)).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Parses a field written by [`fmt_sig`], accepting the `inf` literals.
pub fn parse_f64(field: &str) -> Option<f64> {
    match field.trim() {
        "inf" | "+inf" | "Infinity" => Some(f64::INFINITY),
        "-inf" | "-Infinity" => Some(f64::NEG_INFINITY),
        s => s.parse().ok(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn matches_printf_g() {
        assert_eq!(fmt_sig(0.5), "0.5");
        assert_eq!(fmt_sig(1.0), "1");
        assert_eq!(fmt_sig(-0.797884560802865), "-0.797884560803");
        assert_eq!(fmt_sig(123456789012.0), "123456789012");
        assert_eq!(fmt_sig(1234567890123.0), "1.23456789012e+12");
        assert_eq!(fmt_sig(1.5e-7), "1.5e-07");
        assert_eq!(fmt_sig(0.0001), "0.0001");
        assert_eq!(fmt_sig(f64::INFINITY), "inf");
        // rounding that bumps the exponent
        assert_eq!(fmt_sig(9.9999999999999), "10");
    }

    proptest! {
        #[test]
        fn emitted_precision_round_trips(x in -1e15f64..1e15, scale in -30i32..30) {
            let v = x * 10f64.powi(scale);
            let s = fmt_sig(v);
            let back = parse_f64(&s).unwrap();
            prop_assert_eq!(fmt_sig(back), s);
        }
    }
}
