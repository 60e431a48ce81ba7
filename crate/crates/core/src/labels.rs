//! The five filtering classes and per-clip label vectors.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Output classes in the fixed head order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Class {
    Multispeaker,
    Music,
    Foreign,
    Noise,
    Synthetic,
}

pub const NUM_CLASSES: usize = 5;

impl Class {
    pub const ALL: [Class; NUM_CLASSES] = [Class::Multispeaker, Class::Music, Class::Foreign, Class::Noise, Class::Synthetic];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Class::Multispeaker => "multispeaker",
            Class::Music => "music",
            Class::Foreign => "foreign",
            Class::Noise => "noise",
            Class::Synthetic => "synthetic",
        }
    }
}

impl fmt::Display for Class {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Class {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Class::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| format!("unknown class {s:?}"))
    }
}

/// Ground-truth labels for one clip.
///
/// When `num_speakers` is present, `multispeaker` must equal `num_speakers > 1`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelVector {
    pub multispeaker: bool,
    pub music: bool,
    pub foreign: bool,
    pub noise: bool,
    pub synthetic: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_speakers: Option<u32>,
}

impl LabelVector {
    pub fn from_flags(flags: [bool; NUM_CLASSES]) -> Self {
        Self {
            multispeaker: flags[0],
            music: flags[1],
            foreign: flags[2],
            noise: flags[3],
            synthetic: flags[4],
            num_speakers: None,
        }
    }

    pub fn with_speakers(mut self, n: u32) -> Self {
        self.num_speakers = Some(n);
        self.multispeaker = n > 1;
        self
    }

    pub fn get(&self, c: Class) -> bool {
        self.flags()[c.index()]
    }

    pub fn set(&mut self, c: Class, v: bool) {
        match c {
            Class::Multispeaker => self.multispeaker = v,
            Class::Music => self.music = v,
            Class::Foreign => self.foreign = v,
            Class::Noise => self.noise = v,
            Class::Synthetic => self.synthetic = v,
        }
    }

    pub fn flags(&self) -> [bool; NUM_CLASSES] {
        [self.multispeaker, self.music, self.foreign, self.noise, self.synthetic]
    }

    pub fn targets(&self) -> [f32; NUM_CLASSES] {
        self.flags().map(|b| if b { 1.0 } else { 0.0 })
    }

    pub fn is_consistent(&self) -> bool {
        self.num_speakers.is_none_or(|n| self.multispeaker == (n > 1))
    }

    /// Speaker count, inferred as 2 or 1 from the multispeaker flag when absent.
    pub fn speaker_count(&self) -> u32 {
        self.num_speakers.unwrap_or(if self.multispeaker { 2 } else { 1 })
    }

    pub fn is_classless(&self) -> bool {
        !self.flags().iter().any(|&b| b)
    }

    /// Labels of a mixture: flags OR-ed, speaker counts summed.
    ///
    /// `extra_speakers` is the interferer's speaker count, which callers set
    /// to 0 for non-speech sources.
    pub fn compose(&self, other: &LabelVector, extra_speakers: u32) -> LabelVector {
        let a = self.flags();
        let b = other.flags();
        LabelVector::from_flags(std::array::from_fn(|i| a[i] || b[i])).with_speakers(self.speaker_count() + extra_speakers)
    }
}
