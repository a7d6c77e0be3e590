//! Quantities written with explicit unit suffixes in scenario files, e.g.
//! `"233kbps"`, `"85km"`, `"40Mb"` or `"500B"`. Prefixes are decimal
//! (`Mb` = 10^6 bits, `kbps` = 10^3 bit/s).

use std::fmt;

use serde::{de, Deserialize, Deserializer};

#[derive(Debug, Clone, PartialEq)]
pub struct UnitError(pub String);

impl fmt::Display for UnitError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UnitError {}

fn split_number(text: &str) -> Result<(f64, &str), UnitError> {
    let text = text.trim();
    let end = text
        .find(|c: char| !(c.is_ascii_digit() || matches!(c, '.' | '-' | '+' | 'e' | 'E')))
        .unwrap_or(text.len());
    let (num, unit) = text.split_at(end);
    let value: f64 = num
        .parse()
        .map_err(|_| UnitError(format!("`{text}` does not start with a number")))?;
    Ok((value, unit.trim()))
}

fn scaled(text: &str, table: &[(&str, f64)], what: &str) -> Result<f64, UnitError> {
    let (value, unit) = split_number(text)?;
    table
        .iter()
        .find(|(suffix, _)| *suffix == unit)
        .map(|(_, factor)| value * factor)
        .ok_or_else(|| {
            let known: Vec<_> = table.iter().map(|(s, _)| *s).filter(|s| !s.is_empty()).collect();
            UnitError(format!("`{text}`: unknown {what} unit `{unit}` (expected one of {known:?})"))
        })
}

/// Bits: `b`, `kb`, `Kb`, `Mb`, `Gb`, or bytes `B`, `kB`, `KB`, `MB`.
pub fn parse_bits(text: &str) -> Result<f64, UnitError> {
    scaled(
        text,
        &[
            ("", 1.0),
            ("b", 1.0),
            ("bit", 1.0),
            ("bits", 1.0),
            ("kb", 1e3),
            ("Kb", 1e3),
            ("Mb", 1e6),
            ("Gb", 1e9),
            ("B", 8.0),
            ("kB", 8e3),
            ("KB", 8e3),
            ("MB", 8e6),
        ],
        "size",
    )
}

/// Bit rates: `bps`, `kbps`, `Kbps`, `Mbps`, `Gbps`.
pub fn parse_bit_rate(text: &str) -> Result<f64, UnitError> {
    scaled(
        text,
        &[
            ("", 1.0),
            ("bps", 1.0),
            ("kbps", 1e3),
            ("Kbps", 1e3),
            ("Mbps", 1e6),
            ("Gbps", 1e9),
        ],
        "rate",
    )
}

pub fn parse_length_km(text: &str) -> Result<f64, UnitError> {
    scaled(text, &[("", 1.0), ("km", 1.0), ("m", 1e-3)], "length")
}

/// Durations in seconds: `s`, `ms`, `us`.
pub fn parse_seconds(text: &str) -> Result<f64, UnitError> {
    scaled(text, &[("", 1.0), ("s", 1.0), ("ms", 1e-3), ("us", 1e-6)], "time")
}

/// Packets per second: `/s`, `pps`, `Hz`.
pub fn parse_per_second(text: &str) -> Result<f64, UnitError> {
    scaled(text, &[("", 1.0), ("/s", 1.0), ("pps", 1.0), ("Hz", 1.0)], "frequency")
}

macro_rules! quantity {
    ($(#[$doc:meta])* $name:ident, $parse:path) => {
        $(#[$doc])*
        #[derive(Debug, Clone, Copy, PartialEq, PartialOrd, serde::Serialize)]
        #[serde(transparent)]
        pub struct $name(pub f64);

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                #[derive(Deserialize)]
                #[serde(untagged)]
                enum Raw {
                    Number(f64),
                    Text(String),
                }
                match Raw::deserialize(d)? {
                    Raw::Number(v) => Ok($name(v)),
                    Raw::Text(s) => $parse(&s).map($name).map_err(de::Error::custom),
                }
            }
        }

        impl std::str::FromStr for $name {
            type Err = UnitError;
            fn from_str(s: &str) -> Result<Self, UnitError> {
                $parse(s).map($name)
            }
        }
    };
}

quantity!(
    /// A number of bits.
    Bits, parse_bits
);
quantity!(
    /// Bits per second.
    BitRate, parse_bit_rate
);
quantity!(Kilometers, parse_length_km);
quantity!(Seconds, parse_seconds);
quantity!(PerSecond, parse_per_second);

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_unit_suffixed_quantities() {
        assert_eq!(parse_bit_rate("233kbps").unwrap(), 233_000.0);
        assert_eq!(parse_bit_rate("233 Kbps").unwrap(), 233_000.0);
        assert_eq!(parse_bits("40Mb").unwrap(), 40e6);
        assert_eq!(parse_bits("500B").unwrap(), 4000.0);
        assert_eq!(parse_length_km("85km").unwrap(), 85.0);
        assert_eq!(parse_seconds("100ms").unwrap(), 0.1);
        assert_eq!(parse_bit_rate("1e3bps").unwrap(), 1000.0);
        assert_eq!(parse_bit_rate("0.5kbps").unwrap(), 500.0);
    }

    #[test]
    fn rejects_unknown_units() {
        assert!(parse_bits("40 furlongs").is_err());
        assert!(parse_bit_rate("kbps").is_err());
    }

    #[test]
    fn deserializes_numbers_and_strings() {
        let v: Vec<Bits> = serde_json::from_str(r#"[4000, "2Mb"]"#).unwrap();
        assert_eq!(v, vec![Bits(4000.0), Bits(2e6)]);
    }
}
