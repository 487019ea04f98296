//! Unit-bearing scalars for scenario files.
//!
//! Every quantity may be written either as a bare number, taken to be in the
//! canonical unit, or as a string `"<value> <unit>"`. Parsing converts to the
//! canonical unit and serialization always writes the bare canonical number.

use std::fmt;

use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dim {
    /// Spectroscopic frequency, MHz.
    Frequency,
    /// Rates and noise frequencies, 1/s (= Hz).
    Rate,
    /// Magnetic field, G.
    Field,
    Length,
    /// Sensor-array coordinates, μm.
    Position,
    Time,
    Stark,
    Gyro,
    Angle,
    /// One-sided PSD of a frequency, MHz²/Hz.
    FrequencyPsd,
    /// Angular PSD, rad²/s.
    AngularPsd,
    CountRate,
    Density,
}

impl Dim {
    pub fn canonical(self) -> &'static str {
        match self {
            Dim::Frequency => "MHz",
            Dim::Rate => "1/s",
            Dim::Field => "G",
            Dim::Length => "nm",
            Dim::Position => "um",
            Dim::Time => "s",
            Dim::Stark => "Hz*cm/V",
            Dim::Gyro => "MHz/G",
            Dim::Angle => "rad",
            Dim::FrequencyPsd => "MHz^2/Hz",
            Dim::AngularPsd => "rad^2/s",
            Dim::CountRate => "counts/s",
            Dim::Density => "nm^-3",
        }
    }

    fn units(self) -> &'static [(&'static str, f64)] {
        match self {
            Dim::Frequency => &[("Hz", 1e-6), ("kHz", 1e-3), ("MHz", 1.0), ("GHz", 1e3)],
            Dim::Rate => &[
                ("1/s", 1.0),
                ("/s", 1.0),
                ("s^-1", 1.0),
                ("Hz", 1.0),
                ("kHz", 1e3),
                ("MHz", 1e6),
                ("GHz", 1e9),
                ("1/ms", 1e3),
                ("1/us", 1e6),
            ],
            Dim::Field => &[("G", 1.0), ("mG", 1e-3), ("mT", 10.0), ("T", 1e4)],
            Dim::Length => &[("pm", 1e-3), ("A", 0.1), ("nm", 1.0), ("um", 1e3)],
            Dim::Position => &[("nm", 1e-3), ("um", 1.0), ("mm", 1e3)],
            Dim::Time => &[
                ("ps", 1e-12),
                ("ns", 1e-9),
                ("us", 1e-6),
                ("ms", 1e-3),
                ("s", 1.0),
                ("min", 60.0),
                ("h", 3600.0),
            ],
            Dim::Stark => &[("Hz*cm/V", 1.0), ("Hz cm/V", 1.0), ("kHz*cm/V", 1e3), ("Hz*m/V", 1e2)],
            Dim::Gyro => &[("MHz/G", 1.0), ("kHz/G", 1e-3), ("MHz/mT", 0.1), ("GHz/T", 0.1)],
            Dim::Angle => &[("rad", 1.0), ("deg", std::f64::consts::PI / 180.0)],
            Dim::FrequencyPsd => &[("MHz^2/Hz", 1.0), ("kHz^2/Hz", 1e-6), ("Hz^2/Hz", 1e-12), ("Hz", 1e-12)],
            Dim::AngularPsd => &[("rad^2/s", 1.0), ("rad^2*s^-1", 1.0), ("1/s", 1.0)],
            Dim::CountRate => &[("counts/s", 1.0), ("cps", 1.0), ("kcps", 1e3), ("Mcps", 1e6)],
            Dim::Density => &[("nm^-3", 1.0), ("1/nm^3", 1.0), ("cm^-3", 1e-21), ("1/cm^3", 1e-21)],
        }
    }
}

/// Parse `"<value> <unit>"` (or a bare number) into the canonical unit of `dim`.
pub fn parse_quantity(text: &str, dim: Dim) -> Result<f64, String> {
    let text = text.trim();
    let split = text
        .char_indices()
        .find(|&(i, c)| c.is_whitespace() || (c.is_alphabetic() && !is_exponent(text, i)) || c == '/' || c == '*')
        .map_or(text.len(), |(i, _)| i);
    let (num, unit) = text.split_at(split);
    let value: f64 = num
        .trim()
        .parse()
        .map_err(|_| format!("cannot read a number from {text:?}"))?;
    let unit = unit.trim().replace(['µ', 'μ'], "u");
    if unit.is_empty() {
        return Ok(value);
    }
    dim.units()
        .iter()
        .find(|(u, _)| *u == unit)
        .map(|(_, f)| value * f)
        .ok_or_else(|| {
            let known: Vec<&str> = dim.units().iter().map(|u| u.0).collect();
            format!(
                "unit {unit:?} does not measure {} (accepted: {})",
                dim.canonical(),
                known.join(", ")
            )
        })
}

/// `e`/`E` followed by a digit or sign, after a digit, belongs to the number.
fn is_exponent(text: &str, i: usize) -> bool {
    let b = text.as_bytes();
    matches!(b[i], b'e' | b'E')
        && i > 0
        && (b[i - 1].is_ascii_digit() || b[i - 1] == b'.')
        && b.get(i + 1)
            .is_some_and(|c| c.is_ascii_digit() || *c == b'-' || *c == b'+')
}

struct QuantityVisitor(Dim);

impl Visitor<'_> for QuantityVisitor {
    type Value = f64;

    fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
        write!(f, "a number in {} or a string \"<value> <unit>\"", self.0.canonical())
    }

    fn visit_i64<E: de::Error>(self, v: i64) -> Result<f64, E> {
        Ok(v as f64)
    }

    fn visit_u64<E: de::Error>(self, v: u64) -> Result<f64, E> {
        Ok(v as f64)
    }

    fn visit_f64<E: de::Error>(self, v: f64) -> Result<f64, E> {
        Ok(v)
    }

    fn visit_str<E: de::Error>(self, v: &str) -> Result<f64, E> {
        parse_quantity(v, self.0).map_err(E::custom)
    }
}

macro_rules! quantity {
    ($($(#[$doc:meta])* $name:ident => $dim:ident;)*) => {$(
        $(#[$doc])*
        #[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default)]
        pub struct $name(pub f64);

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.serialize_f64(self.0)
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                d.deserialize_any(QuantityVisitor(Dim::$dim)).map($name)
            }
        }
    )*};
}

quantity! {
    /// MHz.
    Mhz => Frequency;
    /// 1/s.
    PerSecond => Rate;
    /// G.
    Gauss => Field;
    /// nm.
    Nm => Length;
    /// μm.
    Um => Position;
    /// s.
    Seconds => Time;
    /// Hz·cm/V.
    StarkCoef => Stark;
    /// MHz/G.
    MhzPerGauss => Gyro;
    /// rad.
    Radians => Angle;
    /// MHz²/Hz.
    MhzSqPerHz => FrequencyPsd;
    /// rad²/s.
    RadSqPerS => AngularPsd;
    /// counts/s.
    CountsPerS => CountRate;
    /// nm⁻³.
    PerNm3 => Density;
}

/// Master seed: a non-negative TOML integer, or a decimal / `0x` hex string
/// for values beyond the signed 64-bit range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Seed(pub u64);

impl Serialize for Seed {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match i64::try_from(self.0) {
            Ok(v) => s.serialize_i64(v),
            Err(_) => s.serialize_str(&self.0.to_string()),
        }
    }
}

struct SeedVisitor;

impl Visitor<'_> for SeedVisitor {
    type Value = u64;

    fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
        f.write_str("a non-negative 64-bit integer")
    }

    fn visit_i64<E: de::Error>(self, v: i64) -> Result<u64, E> {
        u64::try_from(v).map_err(|_| E::custom(format!("seed must be >= 0, got {v}")))
    }

    fn visit_u64<E: de::Error>(self, v: u64) -> Result<u64, E> {
        Ok(v)
    }

    fn visit_str<E: de::Error>(self, v: &str) -> Result<u64, E> {
        let v = v.trim();
        let parsed = match v.strip_prefix("0x").or_else(|| v.strip_prefix("0X")) {
            Some(hex) => u64::from_str_radix(hex, 16),
            None => v.parse(),
        };
        parsed.map_err(|_| E::custom(format!("cannot read a 64-bit seed from {v:?}")))
    }
}

impl<'de> Deserialize<'de> for Seed {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        d.deserialize_any(SeedVisitor).map(Seed)
    }
}
