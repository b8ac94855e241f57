use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::record::{CategoricalField, TransactionRecord};
use crate::Result;

/// Frequency-ordered ordinal encoding of one categorical field.
///
/// The most frequent category gets ordinal 1; ordinal 0 is reserved for
/// values never seen at fit time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "CategoryIndexRepr", into = "CategoryIndexRepr")]
pub struct CategoryIndex {
    field: CategoricalField,
    categories: Vec<String>,
    lookup: HashMap<String, u32>,
}

#[derive(Serialize, Deserialize)]
struct CategoryIndexRepr {
    field: CategoricalField,
    categories: Vec<String>,
}

impl From<CategoryIndexRepr> for CategoryIndex {
    fn from(r: CategoryIndexRepr) -> Self {
        CategoryIndex::from_ordered(r.field, r.categories)
    }
}

impl From<CategoryIndex> for CategoryIndexRepr {
    fn from(c: CategoryIndex) -> Self {
        CategoryIndexRepr {
            field: c.field,
            categories: c.categories,
        }
    }
}

impl CategoryIndex {
    /// `categories[k]` receives ordinal `k + 1`.
    pub fn from_ordered(field: CategoricalField, categories: Vec<String>) -> Self {
        let lookup = categories
            .iter()
            .enumerate()
            .map(|(k, c)| (c.clone(), k as u32 + 1))
            .collect();
        Self {
            field,
            categories,
            lookup,
        }
    }

    pub fn field(&self) -> CategoricalField {
        self.field
    }

    pub fn categories(&self) -> &[String] {
        &self.categories
    }

    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }

    pub fn ordinal(&self, value: &str) -> u32 {
        self.lookup.get(value).copied().unwrap_or(0)
    }

    pub fn as_map(&self) -> BTreeMap<String, u32> {
        self.lookup.iter().map(|(k, &v)| (k.clone(), v)).collect()
    }
}

/// Orders values by descending frequency, ties broken lexicographically.
pub fn index_values<'a, I>(field: CategoricalField, values: I) -> CategoryIndex
where
    I: IntoIterator<Item = &'a str>,
{
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for v in values {
        *counts.entry(v).or_default() += 1;
    }
    let mut ordered: Vec<(&str, usize)> = counts.into_iter().collect();
    ordered.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    CategoryIndex::from_ordered(field, ordered.into_iter().map(|(v, _)| v.to_string()).collect())
}

/// Fits the ordinal index for `field`, given by name.
pub fn fit_categorical_index(records: &[TransactionRecord], field: &str) -> Result<CategoryIndex> {
    let field: CategoricalField = field.parse()?;
    Ok(index_values(field, records.iter().map(|r| r.categorical(field))))
}
