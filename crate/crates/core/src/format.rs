//! Deterministic text output: `%.12g` floats, CSV rows and JSON documents.

use std::io;

use serde::Serialize;
use serde_json::ser::Formatter;

/// Significant digits used for every float written to an artifact.
pub const SIG_DIGITS: usize = 12;

/// C-style `%.12g` rendering.
pub fn fmt_g(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let sci = format!("{:.*e}", SIG_DIGITS - 1, x);
    let (mant, exp) = sci.split_once('e').expect("exponent marker");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -4 || exp >= SIG_DIGITS as i32 {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{}{:02}", trim_fraction(mant), sign, exp.abs())
    } else {
        let decimals = (SIG_DIGITS as i32 - 1 - exp) as usize;
        trim_fraction(&format!("{:.*}", decimals, x)).to_string()
    }
}

fn trim_fraction(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// JSON formatter writing floats with [`fmt_g`]; non-finite values become `null`.
#[derive(Clone, Copy, Debug, Default)]
pub struct Sig12Formatter;

impl Formatter for Sig12Formatter {
    fn write_f64<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        if value.is_finite() {
            writer.write_all(fmt_g(value).as_bytes())
        } else {
            writer.write_all(b"null")
        }
    }

    fn write_f32<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, value as f64)
    }
}

/// Serializes `value` as compact JSON with 12-significant-digit floats.
pub fn to_json<S: Serialize + ?Sized>(value: &S) -> String {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, Sig12Formatter);
    value.serialize(&mut ser).expect("artifact serializes");
    String::from_utf8(buf).expect("serde_json emits utf-8")
}

/// Builds CSV text from a header and pre-rendered rows.
pub fn csv(header: &str, rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut out = String::from(header);
    out.push('\n');
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_printf_g() {
        assert_eq!(fmt_g(0.556032649876389), "0.556032649876");
        assert_eq!(fmt_g(1.0), "1");
        assert_eq!(fmt_g(-2.5), "-2.5");
        assert_eq!(fmt_g(1e-5), "1e-05");
        assert_eq!(fmt_g(0.0001234), "0.0001234");
        assert_eq!(fmt_g(123456789012.0), "123456789012");
        assert_eq!(fmt_g(1234567890123.0), "1.23456789012e+12");
        assert_eq!(fmt_g(1.0 / 3.0), "0.333333333333");
        assert_eq!(fmt_g(0.0), "0");
        assert_eq!(fmt_g(2e-300), "2e-300");
    }

    #[test]
    fn json_floats_rounded() {
        #[derive(Serialize)]
        struct Row {
            x: f64,
            n: u128,
            y: f64,
        }
        let s = to_json(&Row {
            x: 1.0 / 3.0,
            n: 1u128 << 80,
            y: f64::NAN,
        });
        assert_eq!(s, r#"{"x":0.333333333333,"n":1208925819614629174706176,"y":null}"#);
    }

    mod properties {
        use proptest::prelude::*;

        use super::*;

        proptest! {
            #[test]
            fn twelve_digits_round_trip(x in proptest::num::f64::NORMAL) {
                let text = fmt_g(x);
                let back: f64 = text.parse().unwrap();
                prop_assert!(((back - x) / x).abs() <= 5e-12, "{x} -> {text}");
                prop_assert_eq!(fmt_g(back), text.clone());
                let mantissa: String = text.split('e').next().unwrap().chars().filter(char::is_ascii_digit).collect();
                let digits = mantissa.trim_start_matches('0').len();
                prop_assert!(digits <= SIG_DIGITS, "{}", text);
            }
        }
    }
}
