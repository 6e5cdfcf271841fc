use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{EnsembleError, Result};

const BUILTIN: &str = include_str!(concat!(env!("CARGO_MANIFEST_DIR"), "/data/taxonomy.json"));

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MetaCategory {
    Adjacency,
    Directional,
    Orientation,
    Projective,
    Proximity,
    Topological,
    Unallocated,
}

impl MetaCategory {
    pub const ALL: [MetaCategory; 7] = [
        MetaCategory::Adjacency,
        MetaCategory::Directional,
        MetaCategory::Orientation,
        MetaCategory::Projective,
        MetaCategory::Proximity,
        MetaCategory::Topological,
        MetaCategory::Unallocated,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MetaCategory::Adjacency => "Adjacency",
            MetaCategory::Directional => "Directional",
            MetaCategory::Orientation => "Orientation",
            MetaCategory::Projective => "Projective",
            MetaCategory::Proximity => "Proximity",
            MetaCategory::Topological => "Topological",
            MetaCategory::Unallocated => "Unallocated",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for MetaCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MetaCategory {
    type Err = EnsembleError;

    fn from_str(s: &str) -> Result<Self> {
        MetaCategory::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| EnsembleError::UnknownMetaCategory(s.to_string()))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CategoryEntry {
    name: MetaCategory,
    relations: Vec<String>,
    #[serde(default)]
    features: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TaxonomyFile {
    meta_categories: Vec<CategoryEntry>,
}

/// Total map from relation phrase to its meta-category.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationTaxonomy {
    relations: BTreeMap<String, MetaCategory>,
    features: BTreeMap<MetaCategory, Vec<String>>,
}

impl RelationTaxonomy {
    /// The bundled relation listing.
    pub fn builtin() -> Self {
        Self::from_json(BUILTIN).expect("bundled taxonomy is valid")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: TaxonomyFile = serde_json::from_str(text).map_err(|e| EnsembleError::Schema(e.to_string()))?;
        let mut relations = BTreeMap::new();
        let mut features = BTreeMap::new();
        for entry in file.meta_categories {
            if features.insert(entry.name, entry.features).is_some() {
                return Err(EnsembleError::Schema(format!("meta-category {} listed twice", entry.name)));
            }
            for r in entry.relations {
                if let Some(prev) = relations.insert(r.clone(), entry.name) {
                    return Err(EnsembleError::Schema(format!(
                        "relation {r:?} listed under both {prev} and {}",
                        entry.name
                    )));
                }
            }
        }
        if features.len() != MetaCategory::ALL.len() {
            return Err(EnsembleError::Schema(format!(
                "expected {} meta-categories, found {}",
                MetaCategory::ALL.len(),
                features.len()
            )));
        }
        Ok(Self { relations, features })
    }

    pub fn meta_category(&self, relation: &str) -> Result<MetaCategory> {
        self.relations
            .get(relation)
            .copied()
            .ok_or_else(|| EnsembleError::UnknownRelation(relation.to_string()))
    }

    pub fn contains(&self, relation: &str) -> bool {
        self.relations.contains_key(relation)
    }

    pub fn relations_of(&self, meta: MetaCategory) -> Vec<&str> {
        self.relations
            .iter()
            .filter(|(_, &m)| m == meta)
            .map(|(r, _)| r.as_str())
            .collect()
    }

    pub fn features_of(&self, meta: MetaCategory) -> &[String] {
        self.features.get(&meta).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn len(&self) -> usize {
        self.relations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.relations.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, MetaCategory)> {
        self.relations.iter().map(|(r, &m)| (r.as_str(), m))
    }
}
