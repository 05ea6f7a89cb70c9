use core::fmt;
use core::str::FromStr;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

/// Diagnostic class of a chest radiograph.
///
/// The discriminant order (COVID-19, normal, viral pneumonia) is the row
/// order used by every confusion matrix in the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub enum ClassLabel {
    #[cfg_attr(feature = "serde", serde(rename = "COVID19"))]
    Covid19,
    #[cfg_attr(feature = "serde", serde(rename = "NORMAL"))]
    Normal,
    #[cfg_attr(feature = "serde", serde(rename = "VIRAL_PNEUMONIA"))]
    ViralPneumonia,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; 3] = [
        ClassLabel::Covid19,
        ClassLabel::Normal,
        ClassLabel::ViralPneumonia,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ClassLabel::Covid19 => "COVID19",
            ClassLabel::Normal => "NORMAL",
            ClassLabel::ViralPneumonia => "VIRAL_PNEUMONIA",
        }
    }

    /// Short human-readable name used in rendered tables.
    pub fn display_name(self) -> &'static str {
        match self {
            ClassLabel::Covid19 => "COVID-19",
            ClassLabel::Normal => "Normal",
            ClassLabel::ViralPneumonia => "Viral Pneumonia",
        }
    }

    /// Stable index into [`ClassLabel::ALL`].
    pub fn ordinal(self) -> usize {
        self as usize
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown class label `{0}`")]
pub struct UnknownLabel(pub alloc::string::String);

impl FromStr for ClassLabel {
    type Err = UnknownLabel;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "COVID19" => Ok(ClassLabel::Covid19),
            "NORMAL" => Ok(ClassLabel::Normal),
            "VIRAL_PNEUMONIA" => Ok(ClassLabel::ViralPneumonia),
            other => Err(UnknownLabel(other.into())),
        }
    }
}

/// Classification scheme: which labels take part in an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "SCREAMING_SNAKE_CASE"))]
pub enum Scheme {
    /// Normal vs. COVID-19.
    TwoClass,
    /// Normal vs. viral pneumonia vs. COVID-19.
    ThreeClass,
}

impl Scheme {
    pub fn classes(self) -> &'static [ClassLabel] {
        match self {
            Scheme::TwoClass => &ClassLabel::ALL[..2],
            Scheme::ThreeClass => &ClassLabel::ALL,
        }
    }

    pub fn num_classes(self) -> usize {
        self.classes().len()
    }

    /// Position of `label` in this scheme's class order, if it takes part.
    pub fn class_index(self, label: ClassLabel) -> Option<usize> {
        self.classes().iter().position(|&c| c == label)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::TwoClass => "TWO_CLASS",
            Scheme::ThreeClass => "THREE_CLASS",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scheme {
    type Err = UnknownLabel;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().replace('-', "_").as_str() {
            "TWO_CLASS" | "2" => Ok(Scheme::TwoClass),
            "THREE_CLASS" | "3" => Ok(Scheme::ThreeClass),
            _ => Err(UnknownLabel(s.into())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_round_trips_through_text() {
        for label in ClassLabel::ALL {
            assert_eq!(label.as_str().parse::<ClassLabel>().unwrap(), label);
        }
        assert!("PNEUMONIA".parse::<ClassLabel>().is_err());
    }

    #[test]
    fn two_class_scheme_excludes_viral() {
        assert_eq!(
            Scheme::TwoClass.class_index(ClassLabel::ViralPneumonia),
            None
        );
        assert_eq!(
            Scheme::ThreeClass.class_index(ClassLabel::ViralPneumonia),
            Some(2)
        );
        assert_eq!("two_class".parse::<Scheme>().unwrap(), Scheme::TwoClass);
    }
}
