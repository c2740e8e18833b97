//! Exact rational quantities for weight accounting.

use num_rational::Ratio;
use num_traits::{ToPrimitive, Zero};

/// Weight units (or bytes) as an exact fraction.
pub type Units = Ratio<i128>;

pub fn units(n: i128) -> Units {
    Units::from_integer(n)
}

pub fn frac(num: i128, den: i128) -> Units {
    Units::new(num, den)
}

pub fn to_f64(u: &Units) -> f64 {
    u.to_f64().unwrap_or(f64::NAN)
}

/// Renders `n` for integers and `n/d` otherwise.
pub fn render(u: &Units) -> String {
    if u.is_integer() {
        u.numer().to_string()
    } else {
        format!("{}/{}", u.numer(), u.denom())
    }
}

/// Parses `"7"`, `"7/8"` or a plain decimal such as `"0.875"`.
pub fn parse(s: &str) -> Option<Units> {
    let s = s.trim();
    if let Some((n, d)) = s.split_once('/') {
        let n: i128 = n.trim().parse().ok()?;
        let d: i128 = d.trim().parse().ok()?;
        if d.is_zero() {
            return None;
        }
        return Some(Units::new(n, d));
    }
    if let Some((int, dec)) = s.split_once('.') {
        if dec.is_empty() || !dec.chars().all(|c| c.is_ascii_digit()) || dec.len() > 30 {
            return None;
        }
        let neg = int.starts_with('-');
        let int: i128 = if int.is_empty() || int == "-" { 0 } else { int.parse().ok()? };
        let scale = 10i128.checked_pow(dec.len() as u32)?;
        let frac_part: i128 = dec.parse().ok()?;
        let mag = int.abs().checked_mul(scale)?.checked_add(frac_part)?;
        return Some(Units::new(if neg { -mag } else { mag }, scale));
    }
    s.parse::<i128>().ok().map(Units::from_integer)
}

/// Serde adapter writing units as canonical strings.
pub mod serde_units {
    use super::*;
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(u: &Units, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&render(u))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Units, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(i64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Int(i) => Ok(Units::from_integer(i as i128)),
            Raw::Str(s) => parse(&s).ok_or_else(|| de::Error::custom(format!("invalid rational `{s}`"))),
        }
    }
}

/// Serializes a list of units as canonical strings.
pub fn serialize_units_vec<S: serde::Serializer>(v: &[Units], s: S) -> Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = s.serialize_seq(Some(v.len()))?;
    for u in v {
        seq.serialize_element(&render(u))?;
    }
    seq.end()
}
