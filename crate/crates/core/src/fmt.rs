//! Number formatting for reports.

/// Formats `v` with six significant digits, like C's `%.6g`.
pub fn sig6(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return if v == 0.0 { "0".into() } else { v.to_string() };
    }
    let exp = v.abs().log10().floor() as i32;
    // Rounding can carry into the next decade (999999.5 -> 1e6).
    let s = format!("{:.5e}", v);
    let (mantissa, e) = s.split_once('e').expect("exponent form");
    let e: i32 = e.parse().expect("integer exponent");
    let exp = if e != exp { e } else { exp };
    if (-5..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        trim(&format!("{v:.decimals$}"))
    } else {
        format!("{}e{}{:02}", trim(mantissa), if e < 0 { '-' } else { '+' }, e.abs())
    }
}

fn trim(s: &str) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s.to_string()
    }
}

/// Rounds `v` to six significant digits.
pub fn round6(v: f64) -> f64 {
    sig6(v).parse().unwrap_or(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_significant_digits() {
        assert_eq!(sig6(0.0), "0");
        assert_eq!(sig6(1.0), "1");
        assert_eq!(sig6(4.190912345), "4.19091");
        assert_eq!(sig6(20.5078125), "20.5078");
        assert_eq!(sig6(-0.0026041666), "-0.00260417");
        assert_eq!(sig6(123456789.0), "1.23457e+08");
        assert_eq!(sig6(1.5e-7), "1.5e-07");
        assert_eq!(sig6(999999.6), "1e+06");
        assert_eq!(sig6(0.000123), "0.000123");
        assert_eq!(round6(1.0 / 3.0), 0.333333);
    }
}
