use std::collections::BTreeSet;

use rayon::prelude::*;

use super::QueryGenerator;
use crate::corpus::{TokenId, PIVOT};
use crate::error::{arg_err, Result};

/// Translation rows `T_l[x]` for the pivot words that were requested.
#[derive(Clone, Debug)]
pub struct TranslationTable {
    rows: Vec<Option<Vec<f64>>>,
}

impl TranslationTable {
    pub fn row(&self, x: usize) -> Result<&[f64]> {
        self.rows
            .get(x)
            .and_then(|r| r.as_deref())
            .ok_or_else(|| arg_err!("translation row {x} was not prepared"))
    }
}

/// Translation tables for a fixed parameter snapshot, one per language.
#[derive(Clone, Debug)]
pub struct TableSet {
    tables: Vec<Option<TranslationTable>>,
}

impl TableSet {
    pub(crate) fn build<'a>(
        model: &QueryGenerator,
        items: impl IntoIterator<Item = (usize, &'a [TokenId])>,
    ) -> Self {
        let n_lang = model.languages().len();
        let pivot = &model.languages()[PIVOT];
        let mut wanted: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n_lang];
        for (lang, tokens) in items {
            if lang >= n_lang {
                continue;
            }
            for &x in tokens {
                if pivot.contains(x) {
                    wanted[lang].insert((x - pivot.vocab_offset) as usize);
                }
            }
        }
        Self::from_wanted(model, wanted)
    }

    /// Every pivot row for each listed language.
    pub fn full(model: &QueryGenerator, languages: &[usize]) -> Self {
        let n_lang = model.languages().len();
        let size = model.languages()[PIVOT].vocab_size as usize;
        let mut wanted: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n_lang];
        for &l in languages.iter().filter(|&&l| l < n_lang) {
            wanted[l] = (0..size).collect();
        }
        Self::from_wanted(model, wanted)
    }

    fn from_wanted(model: &QueryGenerator, wanted: Vec<BTreeSet<usize>>) -> Self {
        let size = model.languages()[PIVOT].vocab_size as usize;
        let tables = wanted
            .into_iter()
            .enumerate()
            .map(|(lang, xs)| {
                if xs.is_empty() {
                    return None;
                }
                let xs: Vec<usize> = xs.into_iter().collect();
                let computed: Vec<Vec<f64>> = xs
                    .par_iter()
                    .map(|&x| model.translation_row(lang, x))
                    .collect();
                let mut rows = vec![None; size];
                for (x, row) in xs.into_iter().zip(computed) {
                    rows[x] = Some(row);
                }
                Some(TranslationTable { rows })
            })
            .collect();
        Self { tables }
    }

    pub fn get(&self, lang: usize) -> Result<&TranslationTable> {
        self.tables
            .get(lang)
            .and_then(|t| t.as_ref())
            .ok_or_else(|| arg_err!("no translation table prepared for language {lang}"))
    }
}
