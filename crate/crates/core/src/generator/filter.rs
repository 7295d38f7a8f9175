use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::GeneratedQuery;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterScope {
    #[default]
    PerLanguage,
    Global,
}

/// Accepts the top `ceil(n/2)` candidates by confidence within each group,
/// ties going to the lower query id. Order of `cands` is preserved.
pub fn confidence_filter(mut cands: Vec<GeneratedQuery>, scope: FilterScope) -> Vec<GeneratedQuery> {
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, c) in cands.iter().enumerate() {
        let key = match scope {
            FilterScope::PerLanguage => c.query.language,
            FilterScope::Global => 0,
        };
        groups.entry(key).or_default().push(i);
    }
    for idx in groups.values_mut() {
        idx.sort_by(|&a, &b| {
            cands[b]
                .confidence
                .total_cmp(&cands[a].confidence)
                .then(cands[a].query.id.cmp(&cands[b].query.id))
        });
        let keep = idx.len().div_ceil(2);
        for (rank, &i) in idx.iter().enumerate() {
            cands[i].accepted = rank < keep;
        }
    }
    cands
}
