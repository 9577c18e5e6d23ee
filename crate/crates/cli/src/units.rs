/// Parses a capacitance such as `0.5mF`, `470uF`, `2e-3` (farads).
pub fn parse_capacitance(raw: &str) -> Result<f64, String> {
    let s = raw.trim();
    let (num, scale) = if let Some(n) = s.strip_suffix("mF") {
        (n, 1e-3)
    } else if let Some(n) = s.strip_suffix("uF").or_else(|| s.strip_suffix("µF")) {
        (n, 1e-6)
    } else if let Some(n) = s.strip_suffix("nF") {
        (n, 1e-9)
    } else if let Some(n) = s.strip_suffix('F') {
        (n, 1.0)
    } else {
        (s, 1.0)
    };
    let v: f64 = num
        .trim()
        .parse()
        .map_err(|_| format!("invalid capacitance `{raw}`"))?;
    if !(v.is_finite() && v > 0.0) {
        return Err(format!("capacitance `{raw}` must be > 0"));
    }
    Ok(v * scale)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suffixes() {
        assert_eq!(parse_capacitance("0.5mF").unwrap(), 0.5e-3);
        assert_eq!(parse_capacitance("2mF").unwrap(), 2e-3);
        assert_eq!(parse_capacitance("470uF").unwrap(), 470e-6);
        assert_eq!(parse_capacitance("1F").unwrap(), 1.0);
        assert_eq!(parse_capacitance("3e-3").unwrap(), 3e-3);
        assert!(parse_capacitance("-1mF").is_err());
        assert!(parse_capacitance("mF").is_err());
    }
}
