use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassPosition {
    Front,
    Middle,
    #[default]
    End,
}

/// Arrangement of hard attribute words relative to their soft blocks.
///
/// With attributes `A`, `B` and the class unit `[T][CLS]` at the end:
///
/// | style           | sequence                          |
/// |-----------------|-----------------------------------|
/// | interval        | `[Ta][A][Tb][B][T][CLS]`          |
/// | separate        | `[A][Ta][B][Tb][T][CLS]`          |
/// | adjacent_front  | `[A][B][Ta][Tb][T][CLS]`          |
/// | adjacent_middle | `[Ta][A][B][Tb][T][CLS]`          |
/// | adjacent_end    | `[Ta][Tb][A][B][T][CLS]`          |
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttributePosition {
    #[default]
    Interval,
    AdjacentFront,
    AdjacentMiddle,
    AdjacentEnd,
    Separate,
}

/// Which positions the deep variant replaces between transformer blocks.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropPolicy {
    /// Only the class soft block is replaced.
    #[default]
    RetainAll,
    /// Class and attribute soft blocks are replaced; hard attribute words are kept.
    PartialDrop,
    /// Soft blocks are replaced and hard attribute words are re-embedded.
    FullDrop,
}

macro_rules! str_enum {
    ($ty:ty { $($variant:ident => $name:literal),+ $(,)? }) => {
        impl $ty {
            pub const ALL: &'static [$ty] = &[$(<$ty>::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self { $(<$ty>::$variant => $name),+ }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $ty {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($name => Ok(<$ty>::$variant),)+
                    other => Err(Error::Validation(format!(
                        "unknown {} `{other}`", stringify!($ty)
                    ))),
                }
            }
        }
    };
}

str_enum!(ClassPosition { Front => "front", Middle => "middle", End => "end" });
str_enum!(AttributePosition {
    Interval => "interval",
    AdjacentFront => "adjacent_front",
    AdjacentMiddle => "adjacent_middle",
    AdjacentEnd => "adjacent_end",
    Separate => "separate",
});
str_enum!(DropPolicy { RetainAll => "retain_all", PartialDrop => "partial_drop", FullDrop => "full_drop" });

/// Declarative description of a composed text input.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptLayout {
    pub attribute_names: Vec<String>,
    pub class_token_position: ClassPosition,
    pub attribute_position_style: AttributePosition,
    pub drop_policy: DropPolicy,
    /// 1 for the shallow variant; `k > 1` refreshes blocks before blocks `2..=k`.
    pub depth: usize,
}

impl Default for PromptLayout {
    fn default() -> Self {
        Self {
            attribute_names: Vec::new(),
            class_token_position: ClassPosition::End,
            attribute_position_style: AttributePosition::Interval,
            drop_policy: DropPolicy::RetainAll,
            depth: 1,
        }
    }
}

impl PromptLayout {
    pub fn classic() -> Self {
        Self::default()
    }

    pub fn with_attributes<S: AsRef<str>>(names: &[S]) -> Self {
        Self {
            attribute_names: names.iter().map(|s| s.as_ref().to_string()).collect(),
            ..Self::default()
        }
    }

    pub fn is_deep(&self) -> bool {
        self.depth > 1
    }

    pub fn validate(&self, num_layers: usize) -> Result<()> {
        if self.depth == 0 {
            return Err(Error::Configuration("prompt depth must be at least 1".into()));
        }
        if self.depth > num_layers {
            return Err(Error::Configuration(format!(
                "prompt depth {} exceeds the encoder's {num_layers} layers",
                self.depth
            )));
        }
        Ok(())
    }
}

/// Role of a contiguous run of positions in a composed sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Segment {
    Prefix,
    AttributeSoft(usize),
    AttributeHard(usize),
    ClassSoft,
    ClassHard,
    Suffix,
}

/// Ordered, gap-free assignment of sequence positions to segments.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PositionMap {
    entries: Vec<(Segment, Range<usize>)>,
}

impl PositionMap {
    pub fn from_lengths(segments: &[(Segment, usize)]) -> Self {
        let mut start = 0;
        let entries = segments
            .iter()
            .map(|&(seg, len)| {
                let r = start..start + len;
                start += len;
                (seg, r)
            })
            .collect();
        Self { entries }
    }

    pub fn entries(&self) -> &[(Segment, Range<usize>)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.last().map_or(0, |(_, r)| r.end)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self, seg: Segment) -> Option<Range<usize>> {
        self.entries.iter().find(|(s, _)| *s == seg).map(|(_, r)| r.clone())
    }

    pub fn count(&self, seg: Segment) -> usize {
        self.entries.iter().filter(|(s, _)| *s == seg).count()
    }

    /// True when the ranges tile `0..len` with no gaps or overlaps.
    pub fn is_partition(&self) -> bool {
        let mut next = 0;
        for (_, r) in &self.entries {
            if r.start != next || r.end < r.start {
                return false;
            }
            next = r.end;
        }
        true
    }

    pub fn segments(&self) -> impl Iterator<Item = Segment> + '_ {
        self.entries.iter().map(|(s, _)| *s)
    }
}

/// The interior segment order (sentinels excluded) for `layout` with
/// `num_attributes` attributes. Zero-length soft blocks are still listed;
/// the composer drops them.
pub fn interior_order(layout: &PromptLayout, num_attributes: usize) -> Vec<Segment> {
    let class_unit = [Segment::ClassSoft, Segment::ClassHard];
    let (region, unit_len): (Vec<Segment>, usize) = match layout.attribute_position_style {
        AttributePosition::Interval => (
            (0..num_attributes)
                .flat_map(|k| [Segment::AttributeSoft(k), Segment::AttributeHard(k)])
                .collect(),
            2,
        ),
        AttributePosition::Separate => (
            (0..num_attributes)
                .flat_map(|k| [Segment::AttributeHard(k), Segment::AttributeSoft(k)])
                .collect(),
            2,
        ),
        style => {
            let softs: Vec<Segment> = (0..num_attributes).map(Segment::AttributeSoft).collect();
            let hards: Vec<Segment> = (0..num_attributes).map(Segment::AttributeHard).collect();
            let split = match style {
                AttributePosition::AdjacentFront => 0,
                AttributePosition::AdjacentMiddle => num_attributes.div_ceil(2),
                _ => num_attributes,
            };
            let mut region = softs[..split].to_vec();
            region.extend(hards);
            region.extend_from_slice(&softs[split..]);
            (region, 1)
        }
    };
    let insert_at = match layout.class_token_position {
        ClassPosition::Front => 0,
        ClassPosition::End => region.len(),
        ClassPosition::Middle if unit_len == 2 => 2 * num_attributes.div_ceil(2),
        ClassPosition::Middle => region.len().div_ceil(2),
    };
    let mut order = region;
    order.splice(insert_at..insert_at, class_unit);
    order
}

#[cfg(test)]
mod tests {
    use super::*;
    use Segment::*;

    fn layout(style: AttributePosition, class: ClassPosition) -> PromptLayout {
        PromptLayout {
            attribute_names: vec!["color".into(), "shape".into()],
            class_token_position: class,
            attribute_position_style: style,
            ..PromptLayout::default()
        }
    }

    #[test]
    fn default_layout_is_interval_with_class_at_end() {
        let order = interior_order(&layout(AttributePosition::Interval, ClassPosition::End), 2);
        assert_eq!(
            order,
            vec![
                AttributeSoft(0),
                AttributeHard(0),
                AttributeSoft(1),
                AttributeHard(1),
                ClassSoft,
                ClassHard
            ]
        );
    }

    #[test]
    fn class_positions() {
        let front = interior_order(&layout(AttributePosition::Interval, ClassPosition::Front), 2);
        assert_eq!(&front[..2], &[ClassSoft, ClassHard]);
        let middle = interior_order(&layout(AttributePosition::Interval, ClassPosition::Middle), 2);
        assert_eq!(
            middle,
            vec![
                AttributeSoft(0),
                AttributeHard(0),
                ClassSoft,
                ClassHard,
                AttributeSoft(1),
                AttributeHard(1)
            ]
        );
    }

    #[test]
    fn attribute_position_styles() {
        use AttributePosition::*;
        let get = |s| interior_order(&layout(s, ClassPosition::End), 2);
        assert_eq!(get(Separate)[..2], [AttributeHard(0), AttributeSoft(0)]);
        assert_eq!(
            get(AdjacentFront),
            vec![
                AttributeHard(0),
                AttributeHard(1),
                AttributeSoft(0),
                AttributeSoft(1),
                ClassSoft,
                ClassHard
            ]
        );
        assert_eq!(
            get(AdjacentMiddle),
            vec![
                AttributeSoft(0),
                AttributeHard(0),
                AttributeHard(1),
                AttributeSoft(1),
                ClassSoft,
                ClassHard
            ]
        );
        assert_eq!(
            get(AdjacentEnd),
            vec![
                AttributeSoft(0),
                AttributeSoft(1),
                AttributeHard(0),
                AttributeHard(1),
                ClassSoft,
                ClassHard
            ]
        );
    }

    #[test]
    fn every_style_is_a_permutation_of_the_same_blocks() {
        for &style in AttributePosition::ALL {
            for &class in ClassPosition::ALL {
                for k in 0..4 {
                    let mut order = interior_order(&layout(style, class), k);
                    order.sort_by_key(|s| format!("{s:?}"));
                    let mut reference = interior_order(&PromptLayout::default(), k);
                    reference.sort_by_key(|s| format!("{s:?}"));
                    assert_eq!(order, reference, "{style} {class} k={k}");
                }
            }
        }
    }

    #[test]
    fn zero_attributes_is_the_classic_order() {
        for &style in AttributePosition::ALL {
            for &class in ClassPosition::ALL {
                assert_eq!(interior_order(&layout(style, class), 0), vec![ClassSoft, ClassHard]);
            }
        }
    }

    #[test]
    fn position_map_partitions() {
        let map = PositionMap::from_lengths(&[(Prefix, 1), (ClassSoft, 0), (ClassHard, 2), (Suffix, 1)]);
        assert!(map.is_partition());
        assert_eq!(map.len(), 4);
        assert_eq!(map.range(ClassHard), Some(1..3));
    }

    #[test]
    fn depth_is_validated() {
        let mut l = PromptLayout::default();
        l.depth = 5;
        assert!(matches!(l.validate(4), Err(Error::Configuration(_))));
        l.depth = 0;
        assert!(l.validate(4).is_err());
        l.depth = 4;
        l.validate(4).unwrap();
    }

    #[test]
    fn enums_parse_from_their_names() {
        for &p in DropPolicy::ALL {
            assert_eq!(p.as_str().parse::<DropPolicy>().unwrap(), p);
        }
        assert!("sideways".parse::<ClassPosition>().is_err());
    }
}
