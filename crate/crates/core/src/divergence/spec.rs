//! Textual generator selection: `name[:key=value,...][/direction]`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::registry::registry_lookup;
use super::{Direction, DivergenceError, DivergenceGenerator};

/// A registry name, its parameters and the bound direction. Direction defaults to reverse.
///
/// ```
/// use fvi_core::divergence::DivergenceSpec;
/// let s: DivergenceSpec = "chi_n:n=2/forward".parse().unwrap();
/// assert_eq!(s.to_string(), "chi_n:n=2/forward");
/// assert_eq!(s.build().unwrap().name(), "chi_n");
/// ```
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct DivergenceSpec {
    pub name: String,
    pub params: BTreeMap<String, f64>,
    pub direction: Direction,
}

impl DivergenceSpec {
    pub fn new(name: &str, params: &[(&str, f64)], direction: Direction) -> Self {
        DivergenceSpec {
            name: name.to_string(),
            params: params.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            direction,
        }
    }

    pub fn build(&self) -> Result<DivergenceGenerator, DivergenceError> {
        registry_lookup(&self.name, &self.params)
    }
}

impl FromStr for DivergenceSpec {
    type Err = DivergenceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (body, direction) = match s.rsplit_once('/') {
            Some((b, d)) => (b, d.trim().parse()?),
            None => (s, Direction::Reverse),
        };
        let (name, rest) = body.split_once(':').unwrap_or((body, ""));
        let name = name.trim();
        if name.is_empty() {
            return Err(DivergenceError::InvalidParameter(format!(
                "empty divergence name in `{s}`"
            )));
        }
        let mut params = BTreeMap::new();
        for kv in rest.split(',').map(str::trim).filter(|kv| !kv.is_empty()) {
            let (k, v) = kv.split_once('=').ok_or_else(|| {
                DivergenceError::InvalidParameter(format!("expected key=value, got `{kv}`"))
            })?;
            let v: f64 = v.trim().parse().map_err(|_| {
                DivergenceError::InvalidParameter(format!("parameter `{k}` is not a number: `{v}`"))
            })?;
            params.insert(k.trim().to_string(), v);
        }
        Ok(DivergenceSpec {
            name: name.to_string(),
            params,
            direction,
        })
    }
}

impl fmt::Display for DivergenceSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.name)?;
        for (i, (k, v)) in self.params.iter().enumerate() {
            write!(f, "{}{k}={v}", if i == 0 { ':' } else { ',' })?;
        }
        write!(f, "/{}", self.direction.as_str())
    }
}

impl TryFrom<String> for DivergenceSpec {
    type Error = DivergenceError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<DivergenceSpec> for String {
    fn from(s: DivergenceSpec) -> String {
        s.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_prints() {
        let s: DivergenceSpec = "hellinger:alpha=0.5".parse().unwrap();
        assert_eq!(s.direction, Direction::Reverse);
        assert_eq!(s.params["alpha"], 0.5);
        assert_eq!(s.to_string(), "hellinger:alpha=0.5/reverse");
        let back: DivergenceSpec = s.to_string().parse().unwrap();
        assert_eq!(back, s);
        assert!("kl/sideways".parse::<DivergenceSpec>().is_err());
        assert!("chi_n:n".parse::<DivergenceSpec>().is_err());
        assert!(":n=2".parse::<DivergenceSpec>().is_err());
        assert!("nope".parse::<DivergenceSpec>().unwrap().build().is_err());
    }
}
