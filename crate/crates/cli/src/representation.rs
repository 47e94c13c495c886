//! Names of everything that can be stored, indexed and evaluated: the
//! fourteen whole-image approaches plus concept-occurrence vectors.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use scenecbir_core::bow::Approach;
use scenecbir_core::concepts::RegionApproach;
use scenecbir_core::evaluation::file_token;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Representation {
    Approach(Approach),
    /// COVs from ground truth (`None`) or from a region annotator.
    Cov(Option<RegionApproach>),
}

impl Representation {
    pub fn all_approaches() -> Vec<Representation> {
        Approach::ALL.iter().map(|&a| Representation::Approach(a)).collect()
    }

    pub fn store_path(&self, out: &Path) -> PathBuf {
        let name = match self {
            Representation::Approach(a) => file_token(a.name()),
            Representation::Cov(None) => "cov".to_string(),
            Representation::Cov(Some(r)) => format!("cov-{}", file_token(r.name())),
        };
        out.join("features").join(format!("{name}.fstr"))
    }
}

impl fmt::Display for Representation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Representation::Approach(a) => write!(f, "{a}"),
            Representation::Cov(None) => f.write_str("COV"),
            Representation::Cov(Some(r)) => write!(f, "COV:{r}"),
        }
    }
}

impl FromStr for Representation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let lower = s.trim().to_ascii_lowercase();
        if lower == "cov" {
            return Ok(Representation::Cov(None));
        }
        if let Some(region) = lower.strip_prefix("cov:") {
            return region
                .parse::<RegionApproach>()
                .map(|r| Representation::Cov(Some(r)))
                .map_err(|e| e.to_string());
        }
        s.parse::<Approach>()
            .map(Representation::Approach)
            .map_err(|e| format!("{e}; or COV, COV:<region approach>"))
    }
}
