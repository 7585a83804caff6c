//! Quantities with unit suffixes, e.g. `"30 um"` or `"46.23 MHz"`.

use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dim {
    Length,
    Frequency,
    Voltage,
    Current,
    Inductance,
    Capacitance,
    Resistance,
    Time,
    Angle,
    Rate,
    Mass,
    Charge,
    Attenuation,
    Area,
    Temperature,
}

impl Dim {
    /// `(unit, factor)`; negative factors divide, so `um` is exactly `/1e6`.
    fn units(self) -> &'static [(&'static str, f64)] {
        match self {
            Dim::Length => &[("m", 1.0), ("mm", -1e3), ("um", -1e6), ("µm", -1e6), ("nm", -1e9), ("pm", -1e12)],
            Dim::Frequency => &[("Hz", 1.0), ("kHz", 1e3), ("MHz", 1e6), ("GHz", 1e9)],
            Dim::Voltage => &[("V", 1.0), ("mV", -1e3), ("kV", 1e3)],
            Dim::Current => &[("A", 1.0), ("mA", -1e3), ("uA", -1e6), ("µA", -1e6), ("nA", -1e9), ("pA", -1e12)],
            Dim::Inductance => &[("H", 1.0), ("mH", -1e3), ("uH", -1e6), ("nH", -1e9), ("pH", -1e12)],
            Dim::Capacitance => &[("F", 1.0), ("nF", -1e9), ("pF", -1e12), ("fF", -1e15), ("aF", -1e18)],
            Dim::Resistance => &[("ohm", 1.0), ("Ω", 1.0), ("kohm", 1e3)],
            Dim::Time => &[("s", 1.0), ("ms", -1e3), ("us", -1e6), ("µs", -1e6), ("ns", -1e9)],
            Dim::Angle => &[("rad", 1.0), ("deg", std::f64::consts::PI / 180.0)],
            Dim::Rate => &[("cps", 1.0), ("1/s", 1.0), ("kcps", 1e3)],
            Dim::Mass => &[("kg", 1.0), ("amu", trapdet_core::constants::ATOMIC_MASS_UNIT)],
            Dim::Charge => &[("e", trapdet_core::constants::ELEMENTARY_CHARGE), ("C", 1.0)],
            Dim::Attenuation => &[("dB", 1.0)],
            Dim::Area => &[("m2", 1.0), ("mm2", -1e6), ("um2", -1e12)],
            Dim::Temperature => &[("K", 1.0), ("mK", -1e3)],
        }
    }

    /// Converts an SI value back into `unit`.
    pub fn from_si(self, si: f64, unit: &str) -> Option<f64> {
        let f = self.units().iter().find(|u| u.0 == unit)?.1;
        Some(if f < 0.0 { si * -f } else { si / f })
    }

    pub fn unit_list(self) -> String {
        self.units().iter().map(|u| u.0).collect::<Vec<_>>().join(", ")
    }
}

impl fmt::Display for Dim {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = format!("{self:?}").to_lowercase();
        f.write_str(&name)
    }
}

/// Parses `"<number> <unit>"` into SI. The space is optional.
pub fn parse(text: &str, dim: Dim) -> Result<f64, String> {
    let t = text.trim();
    let split = t
        .char_indices()
        .find(|&(i, c)| {
            !(c.is_ascii_digit() || c == '.' || c == '+' || c == '-' || ((c == 'e' || c == 'E') && i > 0 && is_exponent(t, i)))
        })
        .map(|(i, _)| i)
        .ok_or_else(|| format!("`{text}` has no unit; expected one of: {}", dim.unit_list()))?;
    let (num, unit) = (t[..split].trim(), t[split..].trim());
    let value: f64 = num.parse().map_err(|_| format!("`{text}` does not start with a number"))?;
    let f = dim
        .units()
        .iter()
        .find(|u| u.0 == unit)
        .map(|u| u.1)
        .ok_or_else(|| format!("unknown {dim} unit `{unit}`; expected one of: {}", dim.unit_list()))?;
    if !value.is_finite() {
        return Err(format!("`{text}` is not finite"));
    }
    Ok(if f < 0.0 { value / -f } else { value * f })
}

// `e` is an exponent marker when a digit or sign follows it
fn is_exponent(t: &str, i: usize) -> bool {
    t[i + 1..].chars().next().is_some_and(|c| c.is_ascii_digit() || c == '-' || c == '+')
}

/// Splits a quantity into its number and unit text.
pub fn split(text: &str) -> Option<(f64, String)> {
    let t = text.trim();
    let split = t.char_indices().find(|&(i, c)| {
        !(c.is_ascii_digit() || c == '.' || c == '+' || c == '-' || ((c == 'e' || c == 'E') && i > 0 && is_exponent(t, i)))
    })?;
    let value = t[..split.0].trim().parse().ok()?;
    Some((value, t[split.0..].trim().to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_common_forms() {
        assert_eq!(parse("30 um", Dim::Length).unwrap(), 30e-6);
        assert_eq!(parse("46.23MHz", Dim::Frequency).unwrap(), 46.23e6);
        assert_eq!(parse("-1.5e-2 V", Dim::Voltage).unwrap(), -1.5e-2);
        assert!((parse("550 nH", Dim::Inductance).unwrap() - 550e-9).abs() < 1e-21);
        assert!((parse("180 deg", Dim::Angle).unwrap() - std::f64::consts::PI).abs() < 1e-15);
        assert_eq!(parse("1e-3 cps", Dim::Rate).unwrap(), 1e-3);
    }

    #[test]
    fn rejects_bad_units() {
        assert!(parse("30", Dim::Length).unwrap_err().contains("no unit"));
        assert!(parse("30 MHz", Dim::Length).unwrap_err().contains("unknown length unit"));
        assert!(parse("abc um", Dim::Length).is_err());
    }

    #[test]
    fn split_keeps_unit() {
        assert_eq!(split("2.5e1 uA"), Some((25.0, "uA".into())));
        assert_eq!(Dim::Current.from_si(7.6e-6, "uA"), Some(7.6));
    }
}
