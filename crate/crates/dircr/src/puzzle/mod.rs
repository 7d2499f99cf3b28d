//! Procedural generation of RAVEN-style 3x3 matrix puzzles.
//!
//! A puzzle is a 3x3 grid of grayscale panels whose rows obey shared
//! attribute-level rules. The bottom-right panel is missing and must be picked
//! from 8 candidates. Everything here is deterministic given a seed: the same
//! `(seed, config)` pair produces byte-identical datasets on every platform.

mod dataset;
mod generate;
pub mod pgm;
mod render;
mod rules;

pub use dataset::{load_dataset, write_dataset, DatasetManifest, Split, FORMAT_VERSION};
pub use generate::{generate_dataset, generate_puzzle, PuzzleConfig};
pub use render::{render_panel, RenderCache};
pub use rules::{apply_rule, sample_rule_specs, sample_rule_specs_filtered};

use serde::{Deserialize, Serialize};

/// The five renderable shape kinds, ordered; the ordinal index is what rules
/// operate on when `Attribute::ShapeType` is governed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ShapeType {
    Triangle,
    Square,
    Pentagon,
    Hexagon,
    Circle,
}

impl ShapeType {
    pub const ALL: [ShapeType; 5] = [
        ShapeType::Triangle,
        ShapeType::Square,
        ShapeType::Pentagon,
        ShapeType::Hexagon,
        ShapeType::Circle,
    ];

    pub fn index(self) -> u8 {
        ShapeType::ALL.iter().position(|&s| s == self).unwrap() as u8
    }

    pub fn from_index(i: u8) -> Option<ShapeType> {
        ShapeType::ALL.get(i as usize).copied()
    }

    /// Number of polygon sides; `None` for the circle.
    pub fn sides(self) -> Option<u32> {
        match self {
            ShapeType::Triangle => Some(3),
            ShapeType::Square => Some(4),
            ShapeType::Pentagon => Some(5),
            ShapeType::Hexagon => Some(6),
            ShapeType::Circle => None,
        }
    }
}

/// The four rule-bearing attributes. `rotation` is deliberately absent: it is
/// per-panel noise and never governed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attribute {
    ShapeType,
    Size,
    Shade,
    Count,
}

impl Attribute {
    pub const ALL: [Attribute; 4] = [
        Attribute::ShapeType,
        Attribute::Size,
        Attribute::Shade,
        Attribute::Count,
    ];

    /// Inclusive ordinal domain `(lo, hi)` of the attribute.
    pub fn domain(self) -> (i16, i16) {
        match self {
            Attribute::ShapeType => (0, 4),
            Attribute::Size => (1, 5),
            Attribute::Shade => (0, 4),
            Attribute::Count => (1, 4),
        }
    }

    pub fn in_domain(self, v: i16) -> bool {
        let (lo, hi) = self.domain();
        (lo..=hi).contains(&v)
    }
}

/// Visual description of one panel.
///
/// Invariants: `size` in 1..=5, `shade` in 0..=4 (0 = lightest), `count` in
/// 1..=4 (copies on a fixed 2x2 layout grid), `rotation` in 0..=7 (multiples
/// of 45 degrees, pure noise).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PanelAttributes {
    pub shape_type: ShapeType,
    pub size: u8,
    pub shade: u8,
    pub count: u8,
    pub rotation: u8,
}

impl PanelAttributes {
    /// Ordinal value of a rule-bearing attribute.
    pub fn get(&self, attr: Attribute) -> i16 {
        match attr {
            Attribute::ShapeType => self.shape_type.index() as i16,
            Attribute::Size => self.size as i16,
            Attribute::Shade => self.shade as i16,
            Attribute::Count => self.count as i16,
        }
    }

    /// Sets a rule-bearing attribute from its ordinal value.
    ///
    /// Panics if `v` is outside the attribute's domain; generation only ever
    /// produces in-range values.
    pub fn set(&mut self, attr: Attribute, v: i16) {
        assert!(attr.in_domain(v), "{attr:?} value {v} out of domain");
        match attr {
            Attribute::ShapeType => self.shape_type = ShapeType::from_index(v as u8).unwrap(),
            Attribute::Size => self.size = v as u8,
            Attribute::Shade => self.shade = v as u8,
            Attribute::Count => self.count = v as u8,
        }
    }

    pub fn is_valid(&self) -> bool {
        (1..=5).contains(&self.size)
            && self.shade <= 4
            && (1..=4).contains(&self.count)
            && self.rotation <= 7
    }
}

/// Row rule over one attribute, applied identically to all three rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RuleKind {
    /// All three values in a row are equal.
    Constant,
    /// `v2 = v1 + step`, `v3 = v2 + step`; step in {-2,-1,+1,+2}.
    Progression { step: i8 },
    /// `v3 = v1 + sign * v2` on the ordinal scale; sign in {+1,-1}.
    /// Only valid for ordinal attributes (never `shape_type`).
    Arithmetic { sign: i8 },
    /// Each row contains the triple's three values, once each, in any order.
    DistributeThree { triple: [u8; 3] },
}

impl RuleKind {
    /// Stable name used in manifests and CLI filters.
    pub fn name(&self) -> &'static str {
        match self {
            RuleKind::Constant => "constant",
            RuleKind::Progression { .. } => "progression",
            RuleKind::Arithmetic { .. } => "arithmetic",
            RuleKind::DistributeThree { .. } => "distribute_three",
        }
    }
}

/// One per-attribute row rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleSpec {
    pub attribute: Attribute,
    #[serde(flatten)]
    pub kind: RuleKind,
}

/// A complete puzzle: 8 context panels (row-major Q1..Q8), 8 candidates
/// (A1..A8), the answer index, and the attribute-level ground truth needed by
/// the brute-force oracle.
///
/// Attributes not named in `rules` are still constrained: they are held
/// constant within each row (an implicit Constant rule per row), which is what
/// lets every single-attribute perturbation of the answer act as a distractor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Puzzle {
    pub image_size: u32,
    pub context: Vec<Vec<u8>>,
    pub candidates: Vec<Vec<u8>>,
    pub answer_index: u8,
    pub rules: Vec<RuleSpec>,
    pub seed: u64,
    pub context_attrs: [PanelAttributes; 8],
    pub candidate_attrs: [PanelAttributes; 8],
}

/// Checks a full row (including the implicit constancy of ungoverned
/// attributes) against the rule list.
fn row_satisfies(rules: &[RuleSpec], a: &PanelAttributes, b: &PanelAttributes, c: &PanelAttributes) -> bool {
    for attr in Attribute::ALL {
        let (v1, v2, v3) = (a.get(attr), b.get(attr), c.get(attr));
        match rules.iter().find(|r| r.attribute == attr) {
            Some(rule) => {
                if !rules::triple_satisfies(rule.kind, v1, v2, v3) {
                    return false;
                }
            }
            // Ungoverned attributes must be constant within the row.
            None => {
                if v1 != v2 || v2 != v3 {
                    return false;
                }
            }
        }
    }
    true
}

/// Brute-force oracle: re-derives everything from the stored attribute
/// metadata and returns `true` iff rows 1-2 satisfy all rules and exactly one
/// candidate completes row 3 — the one at `answer_index`.
pub fn validate_puzzle(p: &Puzzle) -> bool {
    let n = (p.image_size * p.image_size) as usize;
    if p.context.len() != 8 || p.candidates.len() != 8 || p.answer_index > 7 {
        return false;
    }
    if p.context.iter().chain(p.candidates.iter()).any(|img| img.len() != n) {
        return false;
    }
    if p.context_attrs.iter().chain(p.candidate_attrs.iter()).any(|a| !a.is_valid()) {
        return false;
    }
    let ctx = &p.context_attrs;
    if !row_satisfies(&p.rules, &ctx[0], &ctx[1], &ctx[2]) {
        return false;
    }
    if !row_satisfies(&p.rules, &ctx[3], &ctx[4], &ctx[5]) {
        return false;
    }
    let satisfying: Vec<usize> = (0..8)
        .filter(|&j| row_satisfies(&p.rules, &ctx[6], &ctx[7], &p.candidate_attrs[j]))
        .collect();
    satisfying == [p.answer_index as usize]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_attrs() -> PanelAttributes {
        PanelAttributes {
            shape_type: ShapeType::Square,
            size: 3,
            shade: 2,
            count: 1,
            rotation: 0,
        }
    }

    #[test]
    fn attribute_get_set_roundtrip() {
        let mut a = base_attrs();
        for attr in Attribute::ALL {
            let (lo, hi) = attr.domain();
            for v in lo..=hi {
                a.set(attr, v);
                assert_eq!(a.get(attr), v);
                assert!(a.is_valid());
            }
        }
    }

    #[test]
    #[should_panic]
    fn attribute_set_rejects_out_of_domain() {
        base_attrs().set(Attribute::Count, 5);
    }

    #[test]
    fn rule_spec_serde_roundtrip() {
        let specs = vec![
            RuleSpec { attribute: Attribute::Size, kind: RuleKind::Constant },
            RuleSpec { attribute: Attribute::Shade, kind: RuleKind::Progression { step: -2 } },
            RuleSpec { attribute: Attribute::Count, kind: RuleKind::Arithmetic { sign: 1 } },
            RuleSpec {
                attribute: Attribute::ShapeType,
                kind: RuleKind::DistributeThree { triple: [0, 2, 4] },
            },
        ];
        let json = serde_json::to_string(&specs).unwrap();
        let back: Vec<RuleSpec> = serde_json::from_str(&json).unwrap();
        assert_eq!(specs, back);
    }

    #[test]
    fn row_satisfies_enforces_implicit_constancy() {
        let rules = [RuleSpec { attribute: Attribute::Size, kind: RuleKind::Constant }];
        let a = base_attrs();
        let b = a;
        let mut c = a;
        assert!(row_satisfies(&rules, &a, &b, &c));
        // Shade is ungoverned, so varying it inside the row must fail.
        c.shade = 3;
        assert!(!row_satisfies(&rules, &a, &b, &c));
    }
}
