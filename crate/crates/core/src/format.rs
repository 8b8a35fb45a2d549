//! Numeric text output: C-style `%.17g` floats and the CSV writer.
//!
//! 17 significant digits round-trip every f64, and the `%g` trimming
//! keeps simple values readable (0.5 stays "0.5"). All report and CSV
//! output goes through here so files are byte-stable across runs.

use std::io::{self, Write};

/// Formats like C's `printf("%.17g", x)`.
pub fn g17(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x < 0.0 { "-inf".into() } else { "inf".into() };
    }
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    // Exponent after rounding to 17 significant digits, per %g semantics.
    let sci = format!("{:.16e}", x);
    let epos = sci.rfind('e').unwrap();
    let exp: i32 = sci[epos + 1..].parse().unwrap();
    if (-4..17).contains(&exp) {
        let prec = (16 - exp).max(0) as usize;
        let fixed = format!("{:.*}", prec, x);
        trim_g(&fixed)
    } else {
        let mantissa = trim_g(&sci[..epos]);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mantissa}e{sign}{:02}", exp.abs())
    }
}

/// Strips a trailing fractional zero run and a bare decimal point.
fn trim_g(s: &str) -> String {
    if !s.contains('.') {
        return s.to_string();
    }
    let t = s.trim_end_matches('0');
    t.trim_end_matches('.').to_string()
}

/// Writes one CSV row of `%.17g` numbers after optional string cells.
pub fn write_csv_row<W: Write>(w: &mut W, strings: &[&str], nums: &[f64]) -> io::Result<()> {
    let mut first = true;
    for s in strings {
        if !first {
            write!(w, ",")?;
        }
        write!(w, "{s}")?;
        first = false;
    }
    for v in nums {
        if !first {
            write!(w, ",")?;
        }
        write!(w, "{}", g17(*v))?;
        first = false;
    }
    writeln!(w)
}

/// Writes a header line.
pub fn write_csv_header<W: Write>(w: &mut W, cols: &[&str]) -> io::Result<()> {
    writeln!(w, "{}", cols.join(","))
}
