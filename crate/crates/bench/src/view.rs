//! View labels, their fixed azimuths, and closest-view reference matching.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI, TAU};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{BenchError, Result};

/// Declaration order is the tie-break order. It restricts to F < S < B on
/// body labels and F < L < R < U < D on face labels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ViewLabel {
    Front,
    Side,
    Back,
    Left,
    Right,
    Up,
    Down,
}

impl ViewLabel {
    /// Azimuth in radians. Up and Down carry no azimuth of their own and sit
    /// at the front; they are reached by exact label match first.
    pub fn angle(self) -> f64 {
        match self {
            ViewLabel::Front | ViewLabel::Up | ViewLabel::Down => 0.0,
            ViewLabel::Side => FRAC_PI_2,
            ViewLabel::Back => PI,
            ViewLabel::Left => -FRAC_PI_4,
            ViewLabel::Right => FRAC_PI_4,
        }
    }

    pub fn short(self) -> &'static str {
        match self {
            ViewLabel::Front => "F",
            ViewLabel::Side => "S",
            ViewLabel::Back => "B",
            ViewLabel::Left => "L",
            ViewLabel::Right => "R",
            ViewLabel::Up => "U",
            ViewLabel::Down => "D",
        }
    }
}

impl FromStr for ViewLabel {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "f" | "front" => ViewLabel::Front,
            "s" | "side" => ViewLabel::Side,
            "b" | "back" => ViewLabel::Back,
            "l" | "left" => ViewLabel::Left,
            "r" | "right" => ViewLabel::Right,
            "u" | "up" => ViewLabel::Up,
            "d" | "down" => ViewLabel::Down,
            _ => return Err(BenchError::Invalid(format!("unknown view label {s:?}"))),
        })
    }
}

impl TryFrom<String> for ViewLabel {
    type Error = BenchError;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ViewLabel> for String {
    fn from(v: ViewLabel) -> String {
        v.to_string()
    }
}

impl fmt::Display for ViewLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ViewLabel::Front => "front",
            ViewLabel::Side => "side",
            ViewLabel::Back => "back",
            ViewLabel::Left => "left",
            ViewLabel::Right => "right",
            ViewLabel::Up => "up",
            ViewLabel::Down => "down",
        })
    }
}

/// Distance on the circle, in [0, π].
pub fn circular_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(TAU);
    d.min(TAU - d)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    pub view: ViewLabel,
    /// Identity embedding, for face references.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f64>>,
    /// Opaque handle the judge resolves to an image.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<String>,
}

/// Ground-truth references of one region for one subject.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReferenceSet {
    refs: Vec<Reference>,
}

impl ReferenceSet {
    pub fn new(refs: Vec<Reference>) -> Result<Self> {
        if refs.is_empty() {
            return Err(BenchError::Invalid(
                "a reference set needs at least one reference".into(),
            ));
        }
        Ok(ReferenceSet { refs })
    }

    pub fn refs(&self) -> &[Reference] {
        &self.refs
    }

    /// Exact label if present, else the closest azimuth, ties to the
    /// earlier label.
    pub fn match_reference(&self, view: ViewLabel) -> &Reference {
        if let Some(r) = self.refs.iter().find(|r| r.view == view) {
            return r;
        }
        let target = view.angle();
        self.refs
            .iter()
            .min_by(|a, b| {
                let da = circular_distance(a.view.angle(), target);
                let db = circular_distance(b.view.angle(), target);
                da.total_cmp(&db).then(a.view.cmp(&b.view))
            })
            .expect("reference set is nonempty")
    }
}

impl<'de> Deserialize<'de> for ReferenceSet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let refs = Vec::<Reference>::deserialize(d)?;
        ReferenceSet::new(refs).map_err(serde::de::Error::custom)
    }
}

/// Body and face references for one subject.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceBank {
    pub body: ReferenceSet,
    pub face: ReferenceSet,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(views: &[ViewLabel]) -> ReferenceSet {
        ReferenceSet::new(
            views
                .iter()
                .map(|&view| Reference {
                    view,
                    embedding: None,
                    image: None,
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn exact_label_wins() {
        use ViewLabel::*;
        assert_eq!(set(&[Front, Side, Back]).match_reference(Back).view, Back);
    }

    #[test]
    fn single_reference_is_always_chosen() {
        use ViewLabel::*;
        assert_eq!(set(&[Front]).match_reference(Back).view, Front);
    }

    #[test]
    fn equidistant_side_ties_to_front() {
        use ViewLabel::*;
        let bank = set(&[Back, Front]);
        assert_eq!(
            circular_distance(Side.angle(), Front.angle()),
            circular_distance(Side.angle(), Back.angle())
        );
        assert_eq!(bank.match_reference(Side).view, Front);
    }

    #[test]
    fn up_and_down_fall_back_to_front_azimuth() {
        use ViewLabel::*;
        assert_eq!(set(&[Right, Left, Front]).match_reference(Up).view, Front);
        assert_eq!(set(&[Right, Left]).match_reference(Down).view, Left);
        assert_eq!(set(&[Right, Left, Up]).match_reference(Up).view, Up);
    }

    #[test]
    fn labels_parse_both_spellings() {
        assert_eq!("back".parse::<ViewLabel>().unwrap(), ViewLabel::Back);
        assert_eq!("S".parse::<ViewLabel>().unwrap(), ViewLabel::Side);
        assert!("diagonal".parse::<ViewLabel>().is_err());
        assert!(ReferenceSet::new(vec![]).is_err());
    }
}
