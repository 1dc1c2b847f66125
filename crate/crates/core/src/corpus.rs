//! Call-log ingestion, cleaning, crop detection and query preprocessing.

use std::collections::{BTreeSet, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::{self, PorterStemmer};

/// One cleaned corpus row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallRecord {
    pub index: usize,
    pub crop: String,
    pub query_raw: String,
    pub answer_raw: String,
}

/// Names of the crop, query and answer columns in the input CSV.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CsvColumns {
    pub crop: String,
    pub query: String,
    pub answer: String,
}

impl Default for CsvColumns {
    fn default() -> Self {
        CsvColumns {
            crop: "Crop".into(),
            query: "QueryText".into(),
            answer: "KccAns".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub stopwords: BTreeSet<String>,
    pub realtime_keywords: BTreeSet<String>,
    pub csv_columns: CsvColumns,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            stopwords: text::default_stopwords(),
            realtime_keywords: text::default_realtime_keywords(),
            csv_columns: CsvColumns::default(),
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        let c = &self.csv_columns;
        if c.crop == c.query || c.crop == c.answer || c.query == c.answer {
            return Err(Error::Config(format!(
                "csv column names must be distinct, got crop={:?} query={:?} answer={:?}",
                c.crop, c.query, c.answer
            )));
        }
        if let Some(k) = self
            .realtime_keywords
            .iter()
            .find(|k| **k != text::normalize_phrase(k))
        {
            return Err(Error::Config(format!(
                "realtime keyword {k:?} is not lowercased and single-spaced"
            )));
        }
        Ok(())
    }
}

/// Set of known crop names, possibly multi-word.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropLexicon {
    crops: BTreeSet<String>,
    max_ngram: usize,
}

impl CropLexicon {
    pub fn new<I, S>(names: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let crops: BTreeSet<String> = names
            .into_iter()
            .map(|n| text::normalize_phrase(n.as_ref()))
            .filter(|n| !n.is_empty())
            .collect();
        let max_ngram = crops
            .iter()
            .map(|c| c.split(' ').count())
            .max()
            .unwrap_or(1);
        CropLexicon { crops, max_ngram }
    }

    /// One crop name per line.
    pub fn from_file(path: &Path) -> Result<Self> {
        Ok(Self::new(text::read_word_list(path)?))
    }

    /// Lexicon built from the crop column of the records.
    pub fn from_records(records: &[CallRecord]) -> Self {
        Self::new(records.iter().map(|r| r.crop.as_str()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.crops.contains(name)
    }

    pub fn crops(&self) -> &BTreeSet<String> {
        &self.crops
    }

    pub fn max_ngram(&self) -> usize {
        self.max_ngram
    }

    pub fn is_empty(&self) -> bool {
        self.crops.is_empty()
    }
}

/// Dual-view preprocessed query.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreprocessedQuery {
    pub record_index: usize,
    /// Lowercased, stopword-free, stemmed tokens (lexical view).
    pub tokens_lexical: Vec<String>,
    /// Crop-stripped text with full context retained (embedding view).
    pub text_contextual: String,
    pub detected_crop: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    Empty,
    Duplicate,
    Realtime,
    EmptyAfterPreprocess,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DroppedRow {
    /// CSV line for ingestion drops; record index for preprocessing drops.
    pub position: u64,
    pub reason: DropReason,
}

#[derive(Debug, Clone)]
pub struct LoadedCorpus {
    pub records: Vec<CallRecord>,
    pub dropped: Vec<DroppedRow>,
    pub rows_read: usize,
}

/// Cleans one (crop, query, answer) triple. `None` when query or answer is
/// empty after cleaning.
pub fn clean_row(crop: &str, query: &str, answer: &str) -> Option<(String, String, String)> {
    let query = text::clean_query_text(query);
    let answer = text::collapse_whitespace(answer);
    if query.is_empty() || answer.is_empty() {
        return None;
    }
    Some((text::collapse_whitespace(crop), query, answer))
}

/// Loads and cleans a call-log CSV. See [`load_corpus_with_report`] for drop
/// accounting.
pub fn load_corpus(path: &Path, config: &CorpusConfig) -> Result<Vec<CallRecord>> {
    Ok(load_corpus_with_report(path, config)?.records)
}

pub fn load_corpus_with_report(path: &Path, config: &CorpusConfig) -> Result<LoadedCorpus> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    load_corpus_from_reader(file, config)
}

pub fn load_corpus_from_reader<R: std::io::Read>(
    reader: R,
    config: &CorpusConfig,
) -> Result<LoadedCorpus> {
    config.validate()?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let headers = rdr.headers().map_err(csv_error)?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Config(format!("missing column {name:?} in CSV header")))
    };
    let cols = &config.csv_columns;
    let (crop_at, query_at, answer_at) =
        (column(&cols.crop)?, column(&cols.query)?, column(&cols.answer)?);

    let mut seen: HashSet<(String, String, String)> = HashSet::new();
    let mut records = Vec::new();
    let mut dropped = Vec::new();
    let mut rows_read = 0;
    for row in rdr.records() {
        let row = row.map_err(csv_error)?;
        rows_read += 1;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let field = |i: usize| row.get(i).unwrap_or("");
        let Some(triple) = clean_row(field(crop_at), field(query_at), field(answer_at)) else {
            dropped.push(DroppedRow {
                position: line,
                reason: DropReason::Empty,
            });
            continue;
        };
        if seen.contains(&triple) {
            dropped.push(DroppedRow {
                position: line,
                reason: DropReason::Duplicate,
            });
            continue;
        }
        seen.insert(triple.clone());
        let (crop, query_raw, answer_raw) = triple;
        records.push(CallRecord {
            index: records.len(),
            crop,
            query_raw,
            answer_raw,
        });
    }
    Ok(LoadedCorpus {
        records,
        dropped,
        rows_read,
    })
}

fn csv_error(err: csv::Error) -> Error {
    let line = err.position().map(|p| p.line()).unwrap_or(0);
    Error::Ingest {
        line,
        message: err.to_string(),
    }
}

/// Finds the first crop in `text` (longest n-gram first, left to right) and
/// removes every occurrence of that crop's tokens.
pub fn detect_and_strip_crop(text: &str, lexicon: &CropLexicon) -> (String, Option<String>) {
    let words: Vec<&str> = text.split_whitespace().collect();
    let lowered: Vec<String> = words.iter().map(|w| text::normalize_phrase(w)).collect();
    let mut found = None;
    'scan: for n in (1..=lexicon.max_ngram().min(words.len())).rev() {
        for start in 0..=words.len() - n {
            let candidate = lowered[start..start + n].join(" ");
            if lexicon.contains(&candidate) {
                found = Some(candidate);
                break 'scan;
            }
        }
    }
    let Some(crop) = found else {
        return (text.to_owned(), None);
    };
    let crop_tokens: HashSet<&str> = crop.split(' ').collect();
    let kept: Vec<&str> = words
        .iter()
        .zip(&lowered)
        .filter(|(_, low)| !crop_tokens.contains(low.as_str()))
        .map(|(w, _)| *w)
        .collect();
    (kept.join(" "), Some(crop))
}

/// True iff any configured realtime phrase occurs on token boundaries.
pub fn is_realtime_query(text: &str, config: &CorpusConfig) -> bool {
    let tokens = text::tokenize(text);
    config.realtime_keywords.iter().any(|k| {
        let phrase: Vec<String> = k.split(' ').map(str::to_owned).collect();
        text::contains_phrase(&tokens, &phrase)
    })
}

/// Builds the lexical and contextual views of one query text.
///
/// The first detected crop is reported; any further lexicon crops are also
/// stripped so the contextual view never contains a crop n-gram.
pub struct QueryPreprocessor<'a> {
    lexicon: &'a CropLexicon,
    config: &'a CorpusConfig,
    stemmer: PorterStemmer,
}

impl<'a> QueryPreprocessor<'a> {
    pub fn new(lexicon: &'a CropLexicon, config: &'a CorpusConfig) -> Self {
        QueryPreprocessor {
            lexicon,
            config,
            stemmer: PorterStemmer::new(),
        }
    }

    /// `None` for realtime queries and queries with no lexical tokens left.
    pub fn process(&self, record_index: usize, query: &str) -> Option<PreprocessedQuery> {
        self.process_checked(record_index, query).ok()
    }

    pub(crate) fn process_checked(
        &self,
        record_index: usize,
        query: &str,
    ) -> std::result::Result<PreprocessedQuery, DropReason> {
        let cleaned = text::clean_query_text(query);
        if is_realtime_query(&cleaned, self.config) {
            return Err(DropReason::Realtime);
        }
        let (mut contextual, detected_crop) = detect_and_strip_crop(&cleaned, self.lexicon);
        if detected_crop.is_some() {
            loop {
                let (next, more) = detect_and_strip_crop(&contextual, self.lexicon);
                contextual = next;
                if more.is_none() {
                    break;
                }
            }
        }
        let tokens_lexical: Vec<String> = text::tokenize(&contextual)
            .into_iter()
            .filter(|t| !self.config.stopwords.contains(t))
            .map(|t| self.stemmer.stem(&t))
            .filter(|s| !self.lexicon.contains(s) && !self.config.stopwords.contains(s))
            .collect();
        if tokens_lexical.is_empty() {
            return Err(DropReason::EmptyAfterPreprocess);
        }
        Ok(PreprocessedQuery {
            record_index,
            tokens_lexical,
            text_contextual: contextual,
            detected_crop,
        })
    }
}

pub fn preprocess_query(
    record: &CallRecord,
    lexicon: &CropLexicon,
    config: &CorpusConfig,
) -> Option<PreprocessedQuery> {
    QueryPreprocessor::new(lexicon, config).process(record.index, &record.query_raw)
}

/// Preprocesses every record, attributing a reason to each drop.
pub fn preprocess_corpus(
    records: &[CallRecord],
    lexicon: &CropLexicon,
    config: &CorpusConfig,
) -> (Vec<PreprocessedQuery>, Vec<DroppedRow>) {
    let pre = QueryPreprocessor::new(lexicon, config);
    let mut kept = Vec::with_capacity(records.len());
    let mut dropped = Vec::new();
    for r in records {
        match pre.process_checked(r.index, &r.query_raw) {
            Ok(q) => kept.push(q),
            Err(reason) => dropped.push(DroppedRow {
                position: r.index as u64,
                reason,
            }),
        }
    }
    (kept, dropped)
}
