//! The 23-word command vocabulary.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// One of the 23 recognizable keywords.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Keyword {
    Blue,
    Cyan,
    Green,
    Led,
    Magenta,
    Off,
    On,
    Red,
    WakeUp,
    White,
    Yellow,
    And,
    Blink,
    Cancel,
    Fast,
    Flash,
    Noise,
    Noise2,
    Plus,
    Quick,
    Slow,
    Toggle,
    Unknown,
}

impl Keyword {
    /// All keywords in evaluation-table order.
    pub const ALL: [Keyword; 23] = [
        Keyword::Blue,
        Keyword::Cyan,
        Keyword::Green,
        Keyword::Led,
        Keyword::Magenta,
        Keyword::Off,
        Keyword::On,
        Keyword::Red,
        Keyword::WakeUp,
        Keyword::White,
        Keyword::Yellow,
        Keyword::And,
        Keyword::Blink,
        Keyword::Cancel,
        Keyword::Fast,
        Keyword::Flash,
        Keyword::Noise,
        Keyword::Noise2,
        Keyword::Plus,
        Keyword::Quick,
        Keyword::Slow,
        Keyword::Toggle,
        Keyword::Unknown,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Keyword::Blue => "BLUE",
            Keyword::Cyan => "CYAN",
            Keyword::Green => "GREEN",
            Keyword::Led => "LED",
            Keyword::Magenta => "MAGENTA",
            Keyword::Off => "OFF",
            Keyword::On => "ON",
            Keyword::Red => "RED",
            Keyword::WakeUp => "WAKE UP",
            Keyword::White => "WHITE",
            Keyword::Yellow => "YELLOW",
            Keyword::And => "AND",
            Keyword::Blink => "BLINK",
            Keyword::Cancel => "CANCEL",
            Keyword::Fast => "FAST",
            Keyword::Flash => "FLASH",
            Keyword::Noise => "NOISE",
            Keyword::Noise2 => "NOISE2",
            Keyword::Plus => "PLUS",
            Keyword::Quick => "QUICK",
            Keyword::Slow => "SLOW",
            Keyword::Toggle => "TOGGLE",
            Keyword::Unknown => "UNKNOWN",
        }
    }

    /// Parses a label leniently: case-insensitive, `_` and `-` read as spaces.
    pub fn parse(label: &str) -> Option<Keyword> {
        let norm: String = label
            .trim()
            .chars()
            .map(|c| match c {
                '_' | '-' => ' ',
                c => c.to_ascii_uppercase(),
            })
            .collect();
        let norm = norm.split_whitespace().collect::<Vec<_>>().join(" ");
        Keyword::ALL.iter().copied().find(|k| k.label() == norm)
    }

    /// Color code 1..=7 for color keywords.
    pub fn color_code(self) -> Option<u8> {
        match self {
            Keyword::Blue => Some(1),
            Keyword::Green => Some(2),
            Keyword::Cyan => Some(3),
            Keyword::Red => Some(4),
            Keyword::Magenta => Some(5),
            Keyword::Yellow => Some(6),
            Keyword::White => Some(7),
            _ => None,
        }
    }

    /// Classes that carry no command.
    pub fn is_non_command(self) -> bool {
        matches!(self, Keyword::Noise | Keyword::Noise2 | Keyword::Unknown)
    }
}

impl fmt::Display for Keyword {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown keyword {0:?}")]
pub struct ParseKeywordError(pub String);

impl FromStr for Keyword {
    type Err = ParseKeywordError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Keyword::parse(s).ok_or_else(|| ParseKeywordError(s.to_string()))
    }
}

/// Canonical label for a dataset directory name: keyword spelling when it is
/// one, otherwise the name unchanged.
pub fn canonical_label(name: &str) -> String {
    Keyword::parse(name)
        .map(|k| k.label().to_string())
        .unwrap_or_else(|| name.to_string())
}
