//! Exact sample rates.
//!
//! Rates are kept as reduced fractions of Hz so that a 25 Hz tier and a 40 ms
//! frame grid line up without floating point drift.

use std::fmt;
use std::str::FromStr;

use num_integer::Integer;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::ModelError;

/// A positive rational sample rate in Hz.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SampleRate {
    num: u64,
    den: u64,
}

impl SampleRate {
    pub fn new(num: u64, den: u64) -> Result<Self, ModelError> {
        if num == 0 || den == 0 {
            return Err(ModelError::InvalidRate(format!("{num}/{den}")));
        }
        let g = num.gcd(&den);
        Ok(Self {
            num: num / g,
            den: den / g,
        })
    }

    pub fn hz(hz: u64) -> Result<Self, ModelError> {
        Self::new(hz, 1)
    }

    /// The rate whose sample period is exactly `frame_ms`.
    pub fn from_frame_ms(frame_ms: u64) -> Result<Self, ModelError> {
        Self::new(1000, frame_ms)
    }

    pub fn numer(&self) -> u64 {
        self.num
    }

    pub fn denom(&self) -> u64 {
        self.den
    }

    pub fn as_f64(&self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// Sample period in ms, when it is a whole number of milliseconds.
    pub fn period_ms(&self) -> Option<u64> {
        let (q, r) = (self.den * 1000).div_rem(&self.num);
        (r == 0).then_some(q)
    }

    /// Number of whole samples that fit in `duration_ms`.
    pub fn samples_in(&self, duration_ms: u64) -> u64 {
        ((duration_ms as u128 * self.num as u128) / (1000 * self.den as u128)) as u64
    }

    /// Index of the sample whose timestamp is nearest to `t_ms`, rounding
    /// half up. Sample `j` is stamped at `j / rate` seconds.
    pub fn nearest_index(&self, t_ms: u64) -> u64 {
        let num = 2 * t_ms as u128 * self.num as u128 + 1000 * self.den as u128;
        (num / (2000 * self.den as u128)) as u64
    }

    /// Timestamp of sample `index`, in ms, rounded down.
    pub fn sample_time_ms(&self, index: u64) -> u64 {
        ((index as u128 * 1000 * self.den as u128) / self.num as u128) as u64
    }

    /// First sample index whose timestamp is `>= t_ms`.
    pub fn first_index_at_or_after(&self, t_ms: u64) -> u64 {
        let num = t_ms as u128 * self.num as u128;
        let den = 1000 * self.den as u128;
        num.div_ceil(den) as u64
    }
}

impl fmt::Display for SampleRate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

impl FromStr for SampleRate {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ModelError::InvalidRate(s.to_string());
        match s.split_once('/') {
            Some((n, d)) => Self::new(n.parse().map_err(|_| bad())?, d.parse().map_err(|_| bad())?),
            None => Self::new(s.parse().map_err(|_| bad())?, 1),
        }
    }
}

// Integral rates serialize as JSON integers, fractional ones as "num/den".
impl Serialize for SampleRate {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        if self.den == 1 {
            serializer.serialize_u64(self.num)
        } else {
            serializer.serialize_str(&self.to_string())
        }
    }
}

impl<'de> Deserialize<'de> for SampleRate {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Int(u64),
            Text(String),
        }
        match Repr::deserialize(deserializer)? {
            Repr::Int(n) => SampleRate::hz(n).map_err(serde::de::Error::custom),
            Repr::Text(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}
