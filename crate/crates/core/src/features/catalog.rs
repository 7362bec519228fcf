use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Channel {
    Red,
    Ir,
    AccelMag,
    GyroMag,
}

impl Channel {
    pub const ALL: [Channel; 4] = [
        Channel::Red,
        Channel::Ir,
        Channel::AccelMag,
        Channel::GyroMag,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Channel::Red => "red",
            Channel::Ir => "ir",
            Channel::AccelMag => "accel_mag",
            Channel::GyroMag => "gyro_mag",
        }
    }
}

impl FromStr for Channel {
    type Err = ParseSpecError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Channel::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| ParseSpecError(format!("unknown channel `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FftAttr {
    Real,
    Imag,
    Abs,
    /// Phase in degrees.
    Angle,
}

impl FftAttr {
    fn as_str(self) -> &'static str {
        match self {
            FftAttr::Real => "real",
            FftAttr::Imag => "imag",
            FftAttr::Abs => "abs",
            FftAttr::Angle => "angle",
        }
    }
}

/// One feature definition; parameters are part of the variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FeatureKind {
    Mean,
    Sum,
    /// Population standard deviation.
    Std,
    Min,
    Max,
    AbsEnergy,
    LongestStrikeBelowMean,
    Autocorrelation {
        lag: usize,
    },
    CidCe {
        normalize: bool,
    },
    ArCoefficient {
        coeff: usize,
        k: usize,
    },
    SpktWelchDensity {
        coeff: usize,
    },
    FftCoefficient {
        coeff: usize,
        attr: FftAttr,
    },
}

impl FeatureKind {
    pub fn name(&self) -> &'static str {
        match self {
            FeatureKind::Mean => "mean",
            FeatureKind::Sum => "sum_values",
            FeatureKind::Std => "standard_deviation",
            FeatureKind::Min => "minimum",
            FeatureKind::Max => "maximum",
            FeatureKind::AbsEnergy => "abs_energy",
            FeatureKind::LongestStrikeBelowMean => "longest_strike_below_mean",
            FeatureKind::Autocorrelation { .. } => "autocorrelation",
            FeatureKind::CidCe { .. } => "cid_ce",
            FeatureKind::ArCoefficient { .. } => "ar_coefficient",
            FeatureKind::SpktWelchDensity { .. } => "spkt_welch_density",
            FeatureKind::FftCoefficient { .. } => "fft_coefficient",
        }
    }

    /// Parameters as `(key, value)` pairs in alphabetical key order.
    pub fn params(&self) -> Vec<(&'static str, String)> {
        match *self {
            FeatureKind::Autocorrelation { lag } => vec![("lag", lag.to_string())],
            FeatureKind::CidCe { normalize } => vec![("normalize", normalize.to_string())],
            FeatureKind::ArCoefficient { coeff, k } => {
                vec![("coeff", coeff.to_string()), ("k", k.to_string())]
            }
            FeatureKind::SpktWelchDensity { coeff } => vec![("coeff", coeff.to_string())],
            FeatureKind::FftCoefficient { coeff, attr } => {
                vec![
                    ("attr", attr.as_str().to_string()),
                    ("coeff", coeff.to_string()),
                ]
            }
            _ => Vec::new(),
        }
    }
}

/// A feature bound to a channel. The string id is
/// `<channel>__<name>[__<key>_<value>...]`, e.g. `ir__autocorrelation__lag_6`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FeatureSpec {
    pub channel: Channel,
    pub kind: FeatureKind,
}

impl FeatureSpec {
    pub const fn new(channel: Channel, kind: FeatureKind) -> Self {
        Self { channel, kind }
    }

    pub fn id(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for FeatureSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}__{}", self.channel.as_str(), self.kind.name())?;
        for (k, v) in self.kind.params() {
            write!(f, "__{k}_{v}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid feature id: {0}")]
pub struct ParseSpecError(String);

impl FromStr for FeatureSpec {
    type Err = ParseSpecError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut parts = s.split("__");
        let channel: Channel = parts
            .next()
            .ok_or_else(|| ParseSpecError(s.to_string()))?
            .parse()?;
        let name = parts.next().ok_or_else(|| ParseSpecError(s.to_string()))?;
        let params: Vec<(&str, &str)> = parts
            .map(|p| {
                // Keys never contain digits, so split on the first underscore
                // that follows a key from the known set.
                ["normalize", "coeff", "attr", "lag", "k"]
                    .iter()
                    .find_map(|key| {
                        p.strip_prefix(key)
                            .and_then(|rest| rest.strip_prefix('_'))
                            .map(|v| (*key, v))
                    })
                    .ok_or_else(|| ParseSpecError(s.to_string()))
            })
            .collect::<Result<_, _>>()?;
        let get = |key: &str| -> Result<&str, ParseSpecError> {
            params
                .iter()
                .find(|(k, _)| *k == key)
                .map(|(_, v)| *v)
                .ok_or_else(|| ParseSpecError(s.to_string()))
        };
        let num = |key: &str| -> Result<usize, ParseSpecError> {
            get(key)?.parse().map_err(|_| ParseSpecError(s.to_string()))
        };
        let kind = match name {
            "mean" => FeatureKind::Mean,
            "sum_values" => FeatureKind::Sum,
            "standard_deviation" => FeatureKind::Std,
            "minimum" => FeatureKind::Min,
            "maximum" => FeatureKind::Max,
            "abs_energy" => FeatureKind::AbsEnergy,
            "longest_strike_below_mean" => FeatureKind::LongestStrikeBelowMean,
            "autocorrelation" => FeatureKind::Autocorrelation { lag: num("lag")? },
            "cid_ce" => FeatureKind::CidCe {
                normalize: get("normalize")?
                    .parse()
                    .map_err(|_| ParseSpecError(s.to_string()))?,
            },
            "ar_coefficient" => FeatureKind::ArCoefficient {
                coeff: num("coeff")?,
                k: num("k")?,
            },
            "spkt_welch_density" => FeatureKind::SpktWelchDensity {
                coeff: num("coeff")?,
            },
            "fft_coefficient" => FeatureKind::FftCoefficient {
                coeff: num("coeff")?,
                attr: match get("attr")? {
                    "real" => FftAttr::Real,
                    "imag" => FftAttr::Imag,
                    "abs" => FftAttr::Abs,
                    "angle" => FftAttr::Angle,
                    _ => return Err(ParseSpecError(s.to_string())),
                },
            },
            _ => return Err(ParseSpecError(s.to_string())),
        };
        let spec = FeatureSpec { channel, kind };
        if spec.to_string() != s {
            return Err(ParseSpecError(s.to_string()));
        }
        Ok(spec)
    }
}

impl Serialize for FeatureSpec {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for FeatureSpec {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// The fifteen top-ranked definitions, each on its original channel.
pub fn table_one_catalog() -> Vec<FeatureSpec> {
    use Channel::*;
    use FeatureKind::*;
    vec![
        FeatureSpec::new(Ir, LongestStrikeBelowMean),
        FeatureSpec::new(Ir, Autocorrelation { lag: 6 }),
        FeatureSpec::new(Ir, Autocorrelation { lag: 5 }),
        FeatureSpec::new(Ir, Autocorrelation { lag: 7 }),
        FeatureSpec::new(Ir, Autocorrelation { lag: 8 }),
        FeatureSpec::new(Ir, Autocorrelation { lag: 9 }),
        FeatureSpec::new(Ir, CidCe { normalize: true }),
        FeatureSpec::new(Ir, Autocorrelation { lag: 4 }),
        FeatureSpec::new(Red, ArCoefficient { coeff: 0, k: 10 }),
        FeatureSpec::new(Red, SpktWelchDensity { coeff: 2 }),
        FeatureSpec::new(Ir, ArCoefficient { coeff: 0, k: 10 }),
        FeatureSpec::new(GyroMag, Mean),
        FeatureSpec::new(GyroMag, Sum),
        FeatureSpec::new(
            GyroMag,
            FftCoefficient {
                coeff: 0,
                attr: FftAttr::Abs,
            },
        ),
        FeatureSpec::new(
            GyroMag,
            FftCoefficient {
                coeff: 0,
                attr: FftAttr::Real,
            },
        ),
    ]
}

/// The distinct definitions from [`table_one_catalog`] plus standard
/// deviation, minimum, maximum and absolute energy, on all four channels.
pub fn default_catalog() -> Vec<FeatureSpec> {
    use FeatureKind::*;
    let mut kinds: Vec<FeatureKind> = Vec::new();
    for spec in table_one_catalog() {
        if !kinds.contains(&spec.kind) {
            kinds.push(spec.kind);
        }
    }
    kinds.extend([Std, Min, Max, AbsEnergy]);
    Channel::ALL
        .into_iter()
        .flat_map(|c| kinds.iter().map(move |&k| FeatureSpec::new(c, k)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn ids_round_trip() {
        for spec in default_catalog() {
            let id = spec.to_string();
            assert_eq!(id.parse::<FeatureSpec>().unwrap(), spec, "{id}");
        }
        assert_eq!(
            table_one_catalog()[8].to_string(),
            "red__ar_coefficient__coeff_0__k_10"
        );
        assert_eq!(
            table_one_catalog()[13].to_string(),
            "gyro_mag__fft_coefficient__attr_abs__coeff_0"
        );
        assert!("ir__nope".parse::<FeatureSpec>().is_err());
        assert!("ir__autocorrelation".parse::<FeatureSpec>().is_err());
        assert!("ir__autocorrelation__lag_x".parse::<FeatureSpec>().is_err());
    }

    #[test]
    fn catalog_shapes() {
        assert_eq!(table_one_catalog().len(), 15);
        let cat = default_catalog();
        assert_eq!(cat.len(), 4 * 18);
        let unique: HashSet<_> = cat.iter().collect();
        assert_eq!(unique.len(), cat.len());
        for spec in table_one_catalog() {
            assert!(cat.contains(&spec));
        }
    }
}
