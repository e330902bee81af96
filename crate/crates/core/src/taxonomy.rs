//! The hierarchical abuse taxonomy.
//!
//! A taxonomy is loaded from a JSON array of `{name, parent, definition}`
//! entries. The root node is implicit: level-1 types name `"ROOT"` as their
//! parent and the root itself can never be listed or returned as a label.
//! Entry order is preserved because it fixes the class order in prompts.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Parent marker for level-1 types.
pub const ROOT: &str = "ROOT";

/// The level-1 type for reports that do not describe abuse.
pub const NOT_ABUSE: &str = "notabuse";

const DEFAULT_CONFIG: &str = include_str!("../../../taxonomy/default.json");

/// One line of the taxonomy config file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaxonomyEntry {
    pub name: String,
    pub parent: String,
    pub definition: String,
    /// Optional declared level, checked against the derived one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level: Option<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AbuseType {
    pub name: String,
    pub level: u8,
    /// `None` for level-1 types (parent is the implicit root).
    pub parent: Option<String>,
    pub definition: String,
}

/// A structural problem found by [`validate_entries`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    DuplicateName(String),
    InvalidName(String),
    ReservedName(String),
    Orphan { name: String, parent: String },
    Cycle(Vec<String>),
    LevelGap { name: String, level: u8, parent_level: u8 },
    EmptyDefinition(String),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DuplicateName(n) => write!(f, "duplicate name `{n}`"),
            Violation::InvalidName(n) => {
                write!(f, "invalid name `{n}`: must be lowercase without whitespace")
            }
            Violation::ReservedName(n) => write!(f, "reserved name `{n}`"),
            Violation::Orphan { name, parent } => {
                write!(f, "orphan `{name}`: unknown parent `{parent}`")
            }
            Violation::Cycle(names) => write!(f, "cycle through {}", names.join(" -> ")),
            Violation::LevelGap {
                name,
                level,
                parent_level,
            } => write!(
                f,
                "level gap at `{name}`: level {level} under a level-{parent_level} parent"
            ),
            Violation::EmptyDefinition(n) => write!(f, "empty definition for `{n}`"),
        }
    }
}

#[derive(Debug, Error)]
pub enum TaxonomyError {
    #[error("cannot read taxonomy file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse taxonomy config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid taxonomy: {}", join_violations(.0))]
    Invalid(Vec<Violation>),
    #[error("unknown abuse type `{0}`")]
    UnknownType(String),
    #[error("taxonomy has no level {0}")]
    UnknownLevel(u8),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

/// Selects an ordered class list out of a taxonomy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Selector<'a> {
    Level(u8),
    ChildrenOf(&'a str),
}

/// A validated, immutable abuse taxonomy.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Taxonomy {
    types: Vec<AbuseType>,
    index: HashMap<String, usize>,
}

fn name_is_valid(name: &str) -> bool {
    !name.is_empty()
        && !name.chars().any(char::is_whitespace)
        && name.chars().all(|c| !c.is_uppercase())
}

/// Checks every structural invariant of a list of config entries and returns
/// all violations found (empty when the entries form a valid tree).
pub fn validate_entries(entries: &[TaxonomyEntry]) -> Vec<Violation> {
    let mut violations = Vec::new();
    let mut seen: HashMap<&str, usize> = HashMap::new();
    for (i, e) in entries.iter().enumerate() {
        if e.name == ROOT || e.name == "⊤" {
            violations.push(Violation::ReservedName(e.name.clone()));
        } else if !name_is_valid(&e.name) {
            violations.push(Violation::InvalidName(e.name.clone()));
        }
        if e.definition.trim().is_empty() {
            violations.push(Violation::EmptyDefinition(e.name.clone()));
        }
        if seen.insert(e.name.as_str(), i).is_some() {
            violations.push(Violation::DuplicateName(e.name.clone()));
        }
    }

    for e in entries {
        if e.parent != ROOT && !seen.contains_key(e.parent.as_str()) {
            violations.push(Violation::Orphan {
                name: e.name.clone(),
                parent: e.parent.clone(),
            });
        }
    }

    // Walk each parent chain; a chain that revisits a node without reaching
    // ROOT is a cycle. Each cycle is reported once, keyed by its member set.
    let mut reported: HashSet<Vec<String>> = HashSet::new();
    for start in entries {
        let mut chain: Vec<&str> = vec![start.name.as_str()];
        let mut current = start.parent.as_str();
        while current != ROOT {
            if let Some(pos) = chain.iter().position(|n| *n == current) {
                let mut members: Vec<String> = chain[pos..].iter().map(|s| s.to_string()).collect();
                let mut key = members.clone();
                key.sort();
                if reported.insert(key) {
                    members.push(current.to_string());
                    violations.push(Violation::Cycle(members));
                }
                break;
            }
            let Some(&idx) = seen.get(current) else { break };
            chain.push(current);
            current = entries[idx].parent.as_str();
        }
    }

    if violations.iter().any(|v| matches!(v, Violation::Cycle(_))) {
        return violations;
    }

    let levels = derive_levels(entries, &seen);
    for e in entries {
        let Some(declared) = e.level else { continue };
        let parent_level = if e.parent == ROOT {
            0
        } else {
            match levels.get(e.parent.as_str()) {
                Some(l) => *l,
                None => continue,
            }
        };
        if declared != parent_level + 1 {
            violations.push(Violation::LevelGap {
                name: e.name.clone(),
                level: declared,
                parent_level,
            });
        }
    }
    violations
}

/// Levels derived from parent chains; only defined for acyclic input. Names
/// whose chain hits an orphan are absent.
fn derive_levels<'a>(
    entries: &'a [TaxonomyEntry],
    index: &HashMap<&str, usize>,
) -> HashMap<&'a str, u8> {
    let mut levels = HashMap::new();
    for e in entries {
        let mut depth = 1u8;
        let mut current = e.parent.as_str();
        let mut ok = true;
        while current != ROOT {
            match index.get(current) {
                Some(&i) => {
                    depth = depth.saturating_add(1);
                    current = entries[i].parent.as_str();
                }
                None => {
                    ok = false;
                    break;
                }
            }
        }
        if ok {
            levels.insert(e.name.as_str(), depth);
        }
    }
    levels
}

impl Taxonomy {
    /// Builds a taxonomy from config entries, rejecting any structural
    /// violation.
    pub fn from_entries(entries: Vec<TaxonomyEntry>) -> Result<Self, TaxonomyError> {
        let violations = validate_entries(&entries);
        if !violations.is_empty() {
            return Err(TaxonomyError::Invalid(violations));
        }
        let index_ref: HashMap<&str, usize> = entries
            .iter()
            .enumerate()
            .map(|(i, e)| (e.name.as_str(), i))
            .collect();
        let levels = derive_levels(&entries, &index_ref);
        let types: Vec<AbuseType> = entries
            .iter()
            .map(|e| AbuseType {
                name: e.name.clone(),
                level: levels[e.name.as_str()],
                parent: (e.parent != ROOT).then(|| e.parent.clone()),
                definition: e.definition.clone(),
            })
            .collect();
        let index = types
            .iter()
            .enumerate()
            .map(|(i, t)| (t.name.clone(), i))
            .collect();
        Ok(Taxonomy { types, index })
    }

    pub fn from_json(json: &str) -> Result<Self, TaxonomyError> {
        let entries: Vec<TaxonomyEntry> = serde_json::from_str(json)?;
        Self::from_entries(entries)
    }

    /// The shipped 19-type taxonomy.
    pub fn shipped() -> Self {
        Self::from_json(DEFAULT_CONFIG).expect("shipped taxonomy is valid")
    }

    pub fn to_entries(&self) -> Vec<TaxonomyEntry> {
        self.types
            .iter()
            .map(|t| TaxonomyEntry {
                name: t.name.clone(),
                parent: t.parent.clone().unwrap_or_else(|| ROOT.to_string()),
                definition: t.definition.clone(),
                level: None,
            })
            .collect()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.to_entries()).expect("entries serialize");
        s.push('\n');
        s
    }

    /// Re-checks the structural invariants of this taxonomy.
    pub fn validate(&self) -> Result<(), Vec<Violation>> {
        let mut entries = self.to_entries();
        for (e, t) in entries.iter_mut().zip(&self.types) {
            e.level = Some(t.level);
        }
        let v = validate_entries(&entries);
        if v.is_empty() {
            Ok(())
        } else {
            Err(v)
        }
    }

    /// All types in config order.
    pub fn types(&self) -> &[AbuseType] {
        &self.types
    }

    pub fn len(&self) -> usize {
        self.types.len()
    }

    pub fn is_empty(&self) -> bool {
        self.types.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&AbuseType> {
        self.index.get(name).map(|&i| &self.types[i])
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    fn require(&self, name: &str) -> Result<&AbuseType, TaxonomyError> {
        self.get(name)
            .ok_or_else(|| TaxonomyError::UnknownType(name.to_string()))
    }

    /// Position of a type in config order.
    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn depth(&self) -> u8 {
        self.types.iter().map(|t| t.level).max().unwrap_or(0)
    }

    /// Ordered class list for a level or for the children of a type.
    pub fn classes_at(&self, selector: Selector<'_>) -> Result<Vec<&AbuseType>, TaxonomyError> {
        match selector {
            Selector::Level(level) => {
                if level == 0 || level > self.depth() {
                    return Err(TaxonomyError::UnknownLevel(level));
                }
                Ok(self.types.iter().filter(|t| t.level == level).collect())
            }
            Selector::ChildrenOf(name) => {
                self.require(name)?;
                Ok(self
                    .types
                    .iter()
                    .filter(|t| t.parent.as_deref() == Some(name))
                    .collect())
            }
        }
    }

    /// Level-1 types, i.e. the children of the implicit root.
    pub fn top_level(&self) -> Vec<&AbuseType> {
        self.types.iter().filter(|t| t.parent.is_none()).collect()
    }

    /// True iff `a` lies strictly above `b` on `b`'s parent chain.
    pub fn is_ancestor(&self, a: &str, b: &str) -> Result<bool, TaxonomyError> {
        self.require(a)?;
        let mut current = self.require(b)?.parent.as_deref();
        while let Some(p) = current {
            if p == a {
                return Ok(true);
            }
            current = self.get(p).and_then(|t| t.parent.as_deref());
        }
        Ok(false)
    }
}

pub fn load_taxonomy(path: impl AsRef<Path>) -> Result<Taxonomy, TaxonomyError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| TaxonomyError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Taxonomy::from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(name: &str, parent: &str) -> TaxonomyEntry {
        TaxonomyEntry {
            name: name.into(),
            parent: parent.into(),
            definition: format!("{name} definition"),
            level: None,
        }
    }

    fn names(v: &[&AbuseType]) -> Vec<String> {
        v.iter().map(|t| t.name.clone()).collect()
    }

    #[test]
    fn shipped_counts_per_level() {
        let t = Taxonomy::shipped();
        assert_eq!(t.len(), 19);
        assert_eq!(t.classes_at(Selector::Level(1)).unwrap().len(), 2);
        assert_eq!(t.classes_at(Selector::Level(2)).unwrap().len(), 4);
        assert_eq!(t.classes_at(Selector::Level(3)).unwrap().len(), 13);
        assert!(t.validate().is_ok());
    }

    #[test]
    fn shipped_children_in_config_order() {
        let t = Taxonomy::shipped();
        assert_eq!(
            names(&t.classes_at(Selector::ChildrenOf("scam")).unwrap()),
            ["advancefee", "eshop", "fundsrecovery", "giveaway", "investment", "romance"]
        );
        assert_eq!(
            names(&t.classes_at(Selector::Level(1)).unwrap()),
            ["abuse", "notabuse"]
        );
        assert!(t
            .classes_at(Selector::ChildrenOf("clipper"))
            .unwrap()
            .is_empty());
        assert!(matches!(
            t.classes_at(Selector::ChildrenOf("phishing")),
            Err(TaxonomyError::UnknownType(_))
        ));
        assert!(matches!(
            t.classes_at(Selector::Level(4)),
            Err(TaxonomyError::UnknownLevel(4))
        ));
    }

    #[test]
    fn shipped_every_l2_has_children() {
        let t = Taxonomy::shipped();
        for l2 in t.classes_at(Selector::Level(2)).unwrap() {
            assert!(!t
                .classes_at(Selector::ChildrenOf(&l2.name))
                .unwrap()
                .is_empty());
        }
    }

    #[test]
    fn definitions_are_verbatim() {
        let t = Taxonomy::shipped();
        // Original spelling is kept as-is.
        assert!(t
            .get("abuse")
            .unwrap()
            .definition
            .contains("how the abuse happend by providing"));
        assert!(t
            .get("sextortion")
            .unwrap()
            .definition
            .ends_with("if it does not clearly mention sex-related material."));
    }

    #[test]
    fn minimal_tree() {
        let t = Taxonomy::from_entries(vec![entry("abuse", ROOT)]).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.get("abuse").unwrap().level, 1);
    }

    #[test]
    fn cycle_is_rejected() {
        let v = validate_entries(&[
            entry("abuse", ROOT),
            entry("clipper", "scam"),
            entry("scam", "clipper"),
        ]);
        assert_eq!(v.len(), 1, "{v:?}");
        assert!(matches!(v[0], Violation::Cycle(_)));
        assert!(Taxonomy::from_entries(vec![entry("clipper", "scam"), entry("scam", "clipper")])
            .is_err());
    }

    #[test]
    fn duplicate_name() {
        let v = validate_entries(&[entry("abuse", ROOT), entry("scam", "abuse"), entry("scam", "abuse")]);
        assert_eq!(v, vec![Violation::DuplicateName("scam".into())]);
        assert_eq!(v[0].to_string(), "duplicate name `scam`");
    }

    #[test]
    fn level_gap() {
        let mut leaf = entry("sextortion", "abuse");
        leaf.level = Some(3);
        let v = validate_entries(&[entry("abuse", ROOT), leaf]);
        assert_eq!(
            v,
            vec![Violation::LevelGap {
                name: "sextortion".into(),
                level: 3,
                parent_level: 1
            }]
        );
        assert!(v[0].to_string().starts_with("level gap"));
    }

    #[test]
    fn orphan_empty_definition_and_bad_names() {
        let mut empty = entry("scam", "abuse");
        empty.definition = "  ".into();
        let v = validate_entries(&[
            entry("abuse", ROOT),
            empty,
            entry("clipper", "unauthwithdrawal"),
            entry("Bad Name", ROOT),
            entry(ROOT, ROOT),
        ]);
        assert!(v.contains(&Violation::EmptyDefinition("scam".into())));
        assert!(v.contains(&Violation::Orphan {
            name: "clipper".into(),
            parent: "unauthwithdrawal".into()
        }));
        assert!(v.contains(&Violation::InvalidName("Bad Name".into())));
        assert!(v.contains(&Violation::ReservedName(ROOT.into())));
    }

    #[test]
    fn ancestry() {
        let t = Taxonomy::shipped();
        assert!(t.is_ancestor("extortion", "sextortion").unwrap());
        assert!(t.is_ancestor("abuse", "sextortion").unwrap());
        assert!(!t.is_ancestor("sextortion", "sextortion").unwrap());
        assert!(!t.is_ancestor("scam", "sextortion").unwrap());
        assert!(!t.is_ancestor("sextortion", "extortion").unwrap());
        assert!(t.is_ancestor("nope", "scam").is_err());
    }

    #[test]
    fn round_trip() {
        let t = Taxonomy::shipped();
        let again = Taxonomy::from_json(&t.to_json()).unwrap();
        assert_eq!(t, again);
        assert_eq!(t.to_json(), DEFAULT_CONFIG);
    }

    #[test]
    fn level_invariant_and_partition() {
        let t = Taxonomy::shipped();
        for ty in t.types() {
            let parent_level = ty
                .parent
                .as_deref()
                .map(|p| t.get(p).unwrap().level)
                .unwrap_or(0);
            assert_eq!(ty.level, parent_level + 1);
        }
        let total: usize = (1..=t.depth())
            .map(|l| t.classes_at(Selector::Level(l)).unwrap().len())
            .sum();
        assert_eq!(total, t.len());
    }
}
