//! The counter and brake-assistant demos.

pub mod brake;
pub mod counter;
pub mod naive;

use std::fmt;
use std::str::FromStr;

/// Whether a demo runs on plain middleware or through transactors.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum Mode {
    Naive,
    #[default]
    Reactor,
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "naive" => Ok(Mode::Naive),
            "reactor" => Ok(Mode::Reactor),
            other => Err(format!(
                "unknown mode `{other}` (expected naive or reactor)"
            )),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Naive => "naive",
            Mode::Reactor => "reactor",
        })
    }
}
