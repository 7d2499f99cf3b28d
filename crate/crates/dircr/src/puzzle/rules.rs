//! The rule oracle: applying rules, checking rows, and sampling realizable
//! rule specifications.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{DircrError, Result};

use super::{Attribute, RuleKind, RuleSpec};

pub(crate) const ALL_KIND_NAMES: [&str; 4] =
    ["constant", "progression", "arithmetic", "distribute_three"];

/// Computes the unique third value making `(v1, v2, out)` satisfy `rule`.
///
/// Errors with `InconsistentPrefix` when no third value can work for the given
/// pair, and `RangeViolation` when the forced value falls outside the
/// attribute's domain.
pub fn apply_rule(rule: &RuleSpec, v1: i16, v2: i16) -> Result<i16> {
    let attr = rule.attribute;
    if !attr.in_domain(v1) || !attr.in_domain(v2) {
        return Err(DircrError::InconsistentPrefix {
            rule: format!("{rule:?}"),
            v1: v1 as i64,
            v2: v2 as i64,
        });
    }
    let forced = match rule.kind {
        RuleKind::Constant => {
            if v1 != v2 {
                return Err(inconsistent(rule, v1, v2));
            }
            v1
        }
        RuleKind::Progression { step } => {
            let s = step as i16;
            if v2 != v1 + s {
                return Err(inconsistent(rule, v1, v2));
            }
            v2 + s
        }
        RuleKind::Arithmetic { sign } => v1 + sign as i16 * v2,
        RuleKind::DistributeThree { triple } => {
            let t: Vec<i16> = triple.iter().map(|&x| x as i16).collect();
            if v1 == v2 || !t.contains(&v1) || !t.contains(&v2) {
                return Err(inconsistent(rule, v1, v2));
            }
            *t.iter().find(|&&x| x != v1 && x != v2).unwrap()
        }
    };
    let (lo, hi) = attr.domain();
    if !attr.in_domain(forced) {
        return Err(DircrError::RangeViolation {
            rule: format!("{rule:?}"),
            forced: forced as i64,
            lo: lo as i64,
            hi: hi as i64,
        });
    }
    Ok(forced)
}

fn inconsistent(rule: &RuleSpec, v1: i16, v2: i16) -> DircrError {
    DircrError::InconsistentPrefix {
        rule: format!("{rule:?}"),
        v1: v1 as i64,
        v2: v2 as i64,
    }
}

/// True iff the full triple satisfies the rule kind. Used by the validation
/// oracle, so it must not share logic with the generator's forward sampling.
pub(crate) fn triple_satisfies(kind: RuleKind, v1: i16, v2: i16, v3: i16) -> bool {
    match kind {
        RuleKind::Constant => v1 == v2 && v2 == v3,
        RuleKind::Progression { step } => {
            let s = step as i16;
            v2 == v1 + s && v3 == v2 + s
        }
        RuleKind::Arithmetic { sign } => v3 == v1 + sign as i16 * v2,
        RuleKind::DistributeThree { triple } => {
            let mut row = [v1, v2, v3];
            let mut t = [triple[0] as i16, triple[1] as i16, triple[2] as i16];
            row.sort_unstable();
            t.sort_unstable();
            row == t
        }
    }
}

/// Progression starts `v1` for which the whole triple stays in domain.
pub(crate) fn progression_starts(attr: Attribute, step: i16) -> Vec<i16> {
    let (lo, hi) = attr.domain();
    (lo..=hi)
        .filter(|&v| attr.in_domain(v + step) && attr.in_domain(v + 2 * step))
        .collect()
}

/// All `(v1, v2)` pairs for which `v1 + sign*v2` stays in domain.
pub(crate) fn arithmetic_pairs(attr: Attribute, sign: i16) -> Vec<(i16, i16)> {
    let (lo, hi) = attr.domain();
    let mut out = Vec::new();
    for v1 in lo..=hi {
        for v2 in lo..=hi {
            if attr.in_domain(v1 + sign * v2) {
                out.push((v1, v2));
            }
        }
    }
    out
}

/// Kinds (with realizable parameter choices) available for `attr`, restricted
/// to the caller's allow-list of kind names.
fn eligible_kinds(attr: Attribute, allowed: &[String]) -> Vec<&'static str> {
    ALL_KIND_NAMES
        .iter()
        .copied()
        .filter(|name| allowed.iter().any(|a| a == name))
        .filter(|&name| match name {
            "arithmetic" => attr != Attribute::ShapeType,
            "progression" => [-2, -1, 1, 2]
                .iter()
                .any(|&s| !progression_starts(attr, s).is_empty()),
            _ => true,
        })
        .collect()
}

fn sample_kind(rng: &mut ChaCha8Rng, attr: Attribute, name: &str) -> RuleKind {
    match name {
        "constant" => RuleKind::Constant,
        "progression" => {
            // Keep only steps with at least one valid starting value; count has
            // domain width 3, so |step| = 2 is unrealizable there.
            let steps: Vec<i16> = [-2i16, -1, 1, 2]
                .into_iter()
                .filter(|&s| !progression_starts(attr, s).is_empty())
                .collect();
            let s = steps[rng.gen_range(0..steps.len())];
            RuleKind::Progression { step: s as i8 }
        }
        "arithmetic" => {
            let sign = if rng.gen_range(0..2) == 0 { 1 } else { -1 };
            RuleKind::Arithmetic { sign }
        }
        "distribute_three" => {
            let (lo, hi) = attr.domain();
            let mut values: Vec<u8> = (lo..=hi).map(|v| v as u8).collect();
            values.shuffle(rng);
            RuleKind::DistributeThree { triple: [values[0], values[1], values[2]] }
        }
        other => unreachable!("unknown rule kind {other}"),
    }
}

/// Samples `n_rules` rule specs over pairwise-distinct attributes, each
/// realizable for at least one starting pair. All four kinds are allowed.
pub fn sample_rule_specs(rng: &mut ChaCha8Rng, n_rules: usize) -> Vec<RuleSpec> {
    let all: Vec<String> = ALL_KIND_NAMES.iter().map(|s| s.to_string()).collect();
    sample_rule_specs_filtered(rng, n_rules, &all).expect("unfiltered sampling cannot fail")
}

/// Like [`sample_rule_specs`] but restricted to an allow-list of kind names.
/// Errors if fewer than `n_rules` attributes admit any allowed kind — that is
/// an over-constrained configuration, not a transient sampling failure.
pub fn sample_rule_specs_filtered(
    rng: &mut ChaCha8Rng,
    n_rules: usize,
    allowed: &[String],
) -> Result<Vec<RuleSpec>> {
    assert!((1..=3).contains(&n_rules), "n_rules must be in 1..=3");
    for name in allowed {
        if !ALL_KIND_NAMES.contains(&name.as_str()) {
            return Err(DircrError::Config(format!(
                "unknown rule kind {name:?} (expected one of {ALL_KIND_NAMES:?})"
            )));
        }
    }
    let mut eligible: Vec<Attribute> = Attribute::ALL
        .into_iter()
        .filter(|&a| !eligible_kinds(a, allowed).is_empty())
        .collect();
    if eligible.len() < n_rules {
        return Err(DircrError::Config(format!(
            "only {} attribute(s) admit the allowed rule kinds {allowed:?}, need {n_rules}",
            eligible.len()
        )));
    }
    eligible.shuffle(rng);
    let mut specs: Vec<RuleSpec> = eligible[..n_rules]
        .iter()
        .map(|&attribute| {
            let kinds = eligible_kinds(attribute, allowed);
            let name = kinds[rng.gen_range(0..kinds.len())];
            RuleSpec { attribute, kind: sample_kind(rng, attribute, name) }
        })
        .collect();
    specs.sort_by_key(|s| s.attribute);
    Ok(specs)
}
