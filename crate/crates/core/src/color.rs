//! RGB triples in normalized `[0,1]` units, plus hex parsing.

use crate::error::{Error, Result};
use crate::real::{r, Real};

/// A color in normalized RGB.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rgb<R: Real> {
    pub r: R,
    pub g: R,
    pub b: R,
}

impl<R: Real> Rgb<R> {
    pub const fn new(red: R, green: R, blue: R) -> Self {
        Rgb {
            r: red,
            g: green,
            b: blue,
        }
    }

    /// Exact `k/255` color from 8-bit components.
    pub fn from_u8(red: u8, green: u8, blue: u8) -> Self {
        Rgb {
            r: r::<R>(red as f64 / 255.0),
            g: r::<R>(green as f64 / 255.0),
            b: r::<R>(blue as f64 / 255.0),
        }
    }

    pub fn channels(&self) -> [R; 3] {
        [self.r, self.g, self.b]
    }

    pub fn from_channels(ch: [R; 3]) -> Self {
        Rgb {
            r: ch[0],
            g: ch[1],
            b: ch[2],
        }
    }

    pub fn in_unit_range(&self) -> bool {
        self.channels()
            .iter()
            .all(|&c| c >= R::zero() && c <= R::one())
    }

    /// Euclidean distance to another color.
    pub fn distance(&self, other: &Rgb<R>) -> R {
        let dr = self.r - other.r;
        let dg = self.g - other.g;
        let db = self.b - other.b;
        (dr * dr + dg * dg + db * db).sqrt()
    }

    /// Parse `#RRGGBB`.
    pub fn parse_hex(s: &str) -> Result<Self> {
        let t = s.trim();
        let hex = t
            .strip_prefix('#')
            .ok_or_else(|| Error::Format(format!("color {t:?} must start with '#'")))?;
        if hex.len() != 6 || !hex.chars().all(|c| c.is_ascii_hexdigit()) {
            return Err(Error::Format(format!("color {t:?} is not #RRGGBB")));
        }
        let byte = |i: usize| u8::from_str_radix(&hex[i..i + 2], 16).expect("validated hex");
        Ok(Rgb::from_u8(byte(0), byte(2), byte(4)))
    }

    /// Format as `#RRGGBB` (rounding each channel to 8 bits).
    pub fn to_hex(&self) -> String {
        let q = |c: R| -> u8 {
            let v = (c.to_f64_lossy().clamp(0.0, 1.0) * 255.0).round();
            v as u8
        };
        format!("#{:02X}{:02X}{:02X}", q(self.r), q(self.g), q(self.b))
    }

    pub fn to_f64(&self) -> [f64; 3] {
        [
            self.r.to_f64_lossy(),
            self.g.to_f64_lossy(),
            self.b.to_f64_lossy(),
        ]
    }

    pub fn from_f64(ch: [f64; 3]) -> Self {
        Rgb {
            r: r::<R>(ch[0]),
            g: r::<R>(ch[1]),
            b: r::<R>(ch[2]),
        }
    }
}
