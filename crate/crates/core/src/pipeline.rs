//! End-to-end fit and the persisted artifact.
//!
//! An artifact is a directory holding `manifest.json`, `records.jsonl`,
//! `clusters.json` and `weights.bin` (little-endian f32, row-major, indexed
//! by the manifest's tensor table).

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{self, CallRecord, CorpusConfig, CropLexicon, DropReason, PreprocessedQuery, QueryPreprocessor};
use crate::embed::{Embedder, EmbedderSpec, EmbeddingVector};
use crate::error::{Error, Result};
use crate::mapper::{
    evaluate_mapper, predict_cluster, split_dataset, train_mapper, EvalReport, LabeledExample, MapperKind, MapperModel,
    Param, TrainConfig,
};
use crate::par::Execution;
use crate::retrieval::RetrievalParams;
use crate::simcluster::{query_similarity_matrix_with, threshold_cluster, ClusterParams, ClusterSet};

pub const FORMAT_VERSION: u32 = 1;

/// Every knob that influences a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub cluster: ClusterParams,
    pub embedder: EmbedderSpec,
    pub mapper_kind: MapperKind,
    pub train: TrainConfig,
    pub retrieval: RetrievalParams,
    pub corpus: CorpusConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            cluster: ClusterParams::default(),
            embedder: EmbedderSpec::default(),
            mapper_kind: MapperKind::Lstm,
            train: TrainConfig::default(),
            retrieval: RetrievalParams::default(),
            corpus: CorpusConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.cluster.validate()?;
        self.embedder.validate()?;
        self.train.validate()?;
        self.retrieval.validate()?;
        self.corpus.validate()
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

/// Counts logged during a fit and kept in the manifest.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitStats {
    pub rows_read: usize,
    pub records: usize,
    pub dropped_at_ingest: usize,
    pub dropped_at_preprocess: usize,
    pub clusters: usize,
    pub dropped_by_min_size: usize,
    pub training_examples: usize,
    pub epoch_loss: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct MapperEntry {
    kind: MapperKind,
    input_dim: usize,
    hidden1: usize,
    hidden2: usize,
    classes: usize,
    dropout: f64,
    label_map: Vec<usize>,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    crate_version: String,
    corpus_sha256: String,
    config: PipelineConfig,
    crops: Vec<String>,
    stats: FitStats,
    mapper: MapperEntry,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct StoredRecord {
    #[serde(flatten)]
    record: CallRecord,
    tokens_lexical: Vec<String>,
    text_contextual: String,
    detected_crop: Option<String>,
}

/// Fitted state: preprocessed records, the query clusters, the mapper and the
/// configuration that produced them.
#[derive(Debug)]
pub struct FittedPipeline {
    pub config: PipelineConfig,
    pub lexicon: CropLexicon,
    /// Records that survived preprocessing, with their preprocessed view.
    pub records: Vec<(CallRecord, PreprocessedQuery)>,
    /// Cluster id → positions in `records`.
    pub clusters: ClusterSet,
    pub mapper: MapperModel,
    pub stats: FitStats,
    pub corpus_sha256: String,
    embedder: Embedder,
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// One example per clustered item, labeled with its cluster id.
fn labeled_examples(clusters: &ClusterSet, vectors: &[EmbeddingVector]) -> Vec<LabeledExample> {
    clusters
        .clusters
        .iter()
        .enumerate()
        .flat_map(|(c, members)| members.iter().map(move |&m| (c, m)))
        .map(|(c, m)| LabeledExample {
            embedding: vectors[m].clone(),
            label: c,
        })
        .collect()
}

fn embed_normalized(embedder: &Embedder, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
    Ok(embedder.embed_batch(texts)?.iter().map(EmbeddingVector::normalized).collect())
}

impl FittedPipeline {
    /// Reads the corpus CSV (and crop list, if given; otherwise the crop column
    /// is the lexicon) and fits.
    pub fn fit(corpus_path: &Path, lexicon_path: Option<&Path>, config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        let bytes = std::fs::read(corpus_path).map_err(|e| Error::io(corpus_path, e))?;
        let loaded = corpus::load_corpus_from_reader(bytes.as_slice(), &config.corpus)?;
        let lexicon = match lexicon_path {
            Some(p) => CropLexicon::from_file(p)?,
            None => CropLexicon::from_records(&loaded.records),
        };
        let mut stats = FitStats {
            rows_read: loaded.rows_read,
            dropped_at_ingest: loaded.dropped.len(),
            ..Default::default()
        };
        log::info!(
            "read {} rows, kept {}, dropped {}",
            loaded.rows_read,
            loaded.records.len(),
            loaded.dropped.len()
        );
        Self::fit_records_with_stats(loaded.records, lexicon, config, sha256_hex(&bytes), &mut stats)
            .map(|mut p| {
                p.stats.rows_read = stats.rows_read;
                p.stats.dropped_at_ingest = stats.dropped_at_ingest;
                p
            })
    }

    /// Fits on records already in memory.
    pub fn fit_records(records: Vec<CallRecord>, lexicon: CropLexicon, config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        let digest = {
            let mut h = Sha256::new();
            for r in &records {
                h.update(serde_json::to_vec(r).map_err(|e| Error::Artifact(e.to_string()))?);
                h.update(b"\n");
            }
            h.finalize().iter().map(|b| format!("{b:02x}")).collect()
        };
        let mut stats = FitStats {
            rows_read: records.len(),
            ..Default::default()
        };
        Self::fit_records_with_stats(records, lexicon, config, digest, &mut stats)
    }

    fn fit_records_with_stats(
        records: Vec<CallRecord>,
        lexicon: CropLexicon,
        config: PipelineConfig,
        corpus_sha256: String,
        stats: &mut FitStats,
    ) -> Result<Self> {
        let (queries, dropped) = corpus::preprocess_corpus(&records, &lexicon, &config.corpus);
        stats.records = queries.len();
        stats.dropped_at_preprocess = dropped.len();
        log::info!("preprocessed {} queries, dropped {}", queries.len(), dropped.len());

        let embedder = Embedder::from_spec(&config.embedder.clone().with_env_override())?;
        let texts: Vec<String> = queries.iter().map(|q| q.text_contextual.clone()).collect();
        let vectors = embed_normalized(&embedder, &texts)?;

        let sim = query_similarity_matrix_with(&queries, &vectors, &config.cluster, Execution::default())?;
        let clusters = threshold_cluster(&sim, config.cluster.thresh, config.cluster.min_size);
        drop(sim);
        stats.clusters = clusters.len();
        stats.dropped_by_min_size = clusters.dropped.len();
        log::info!(
            "formed {} clusters, {} queries below min_size {}",
            clusters.len(),
            clusters.dropped.len(),
            config.cluster.min_size
        );
        if clusters.len() < 2 {
            return Err(Error::Fit(format!(
                "only {} query cluster(s) formed; lower thresh ({}) or min_size ({})",
                clusters.len(),
                config.cluster.thresh,
                config.cluster.min_size
            )));
        }

        let examples = labeled_examples(&clusters, &vectors);
        stats.training_examples = examples.len();
        let trained = train_mapper(&examples, &config.train, config.mapper_kind)?;
        let mut mapper = trained.model;
        mapper.round_to_f32();
        stats.epoch_loss = trained.epoch_loss;
        log::info!(
            "trained {:?} mapper on {} examples, final loss {:.5}",
            config.mapper_kind,
            examples.len(),
            stats.epoch_loss.last().copied().unwrap_or(f64::NAN)
        );

        let by_index: HashMap<usize, CallRecord> = records.into_iter().map(|r| (r.index, r)).collect();
        let records = queries
            .into_iter()
            .map(|q| (by_index[&q.record_index].clone(), q))
            .collect();
        Ok(FittedPipeline {
            config,
            lexicon,
            records,
            clusters,
            mapper,
            stats: stats.clone(),
            corpus_sha256,
            embedder,
        })
    }

    pub fn cluster_count(&self) -> usize {
        self.clusters.len()
    }

    /// Preprocesses a user query with the fitted lexicon and settings.
    pub fn preprocess(&self, query: &str) -> std::result::Result<PreprocessedQuery, DropReason> {
        QueryPreprocessor::new(&self.lexicon, &self.config.corpus).process_checked(usize::MAX, query)
    }

    /// Cluster id predicted for a contextual query text.
    pub fn map_query(&self, text_contextual: &str) -> Result<usize> {
        let v = self.embedder.embed(text_contextual)?.normalized();
        let (class, _) = predict_cluster(&self.mapper, &v)?;
        Ok(self.mapper.label_map[class])
    }

    pub fn cluster_records(&self, cluster_id: usize) -> Vec<&CallRecord> {
        self.clusters
            .clusters
            .get(cluster_id)
            .map(|m| m.iter().map(|&i| &self.records[i].0).collect())
            .unwrap_or_default()
    }

    /// Normalized embeddings of the stored queries, in record order.
    pub fn embeddings(&self) -> Result<Vec<EmbeddingVector>> {
        let texts: Vec<String> = self.records.iter().map(|(_, q)| q.text_contextual.clone()).collect();
        embed_normalized(&self.embedder, &texts)
    }

    /// Retrains a fresh mapper on a stratified split of the clustered records
    /// and scores it on the held-out part.
    pub fn holdout_report(&self) -> Result<EvalReport> {
        let examples = labeled_examples(&self.clusters, &self.embeddings()?);
        let train = &self.config.train;
        let (fit_part, held_out) = split_dataset(&examples, train.train_fraction, train.seed)?;
        let trained = train_mapper(&fit_part, train, self.config.mapper_kind)?;
        evaluate_mapper(&trained.model, &held_out)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut blob = Vec::with_capacity(self.mapper.param_count() * 4);
        let mut tensors = Vec::new();
        for p in &self.mapper.params {
            tensors.push(TensorEntry {
                name: p.name.clone(),
                shape: p.shape(),
                offset: blob.len(),
                len: p.value.len(),
            });
            for x in p.value.iter() {
                blob.extend_from_slice(&(*x as f32).to_le_bytes());
            }
        }
        let m = &self.mapper;
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
            corpus_sha256: self.corpus_sha256.clone(),
            config: self.config.clone(),
            crops: self.lexicon.crops().iter().cloned().collect(),
            stats: self.stats.clone(),
            mapper: MapperEntry {
                kind: m.kind,
                input_dim: m.input_dim,
                hidden1: m.hidden1,
                hidden2: m.hidden2,
                classes: m.classes,
                dropout: m.dropout,
                label_map: m.label_map.clone(),
                tensors,
            },
        };
        let write = |name: &str, bytes: &[u8]| {
            let path = dir.join(name);
            std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))
        };
        write("manifest.json", pretty_json(&manifest)?.as_bytes())?;
        write("clusters.json", pretty_json(&self.clusters)?.as_bytes())?;
        let mut lines = Vec::new();
        for (r, q) in &self.records {
            let stored = StoredRecord {
                record: r.clone(),
                tokens_lexical: q.tokens_lexical.clone(),
                text_contextual: q.text_contextual.clone(),
                detected_crop: q.detected_crop.clone(),
            };
            serde_json::to_writer(&mut lines, &stored).map_err(|e| Error::Artifact(e.to_string()))?;
            lines.write_all(b"\n").map_err(|e| Error::Artifact(e.to_string()))?;
        }
        write("records.jsonl", &lines)?;
        write("weights.bin", &blob)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let read = |name: &str| {
            let path = dir.join(name);
            std::fs::read(&path).map_err(|e| Error::io(&path, e))
        };
        let artifact = |what: &str, e: &dyn std::fmt::Display| Error::Artifact(format!("{what}: {e}"));
        let manifest: Manifest =
            serde_json::from_slice(&read("manifest.json")?).map_err(|e| artifact("manifest.json", &e))?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(Error::Artifact(format!(
                "unsupported artifact format {}",
                manifest.format_version
            )));
        }
        let clusters: ClusterSet =
            serde_json::from_slice(&read("clusters.json")?).map_err(|e| artifact("clusters.json", &e))?;
        let mut records = Vec::new();
        for (n, line) in read("records.jsonl")?.lines().enumerate() {
            let line = line.map_err(|e| artifact("records.jsonl", &e))?;
            let s: StoredRecord = serde_json::from_str(&line)
                .map_err(|e| artifact(&format!("records.jsonl line {}", n + 1), &e))?;
            let q = PreprocessedQuery {
                record_index: s.record.index,
                tokens_lexical: s.tokens_lexical,
                text_contextual: s.text_contextual,
                detected_crop: s.detected_crop,
            };
            records.push((s.record, q));
        }
        if !clusters.is_partition_of(records.len()) {
            return Err(Error::Artifact("cluster table does not partition the records".into()));
        }

        let blob = read("weights.bin")?;
        let me = &manifest.mapper;
        let mut params = Vec::new();
        for t in &me.tensors {
            let end = t.offset + 4 * t.len;
            let bytes = blob
                .get(t.offset..end)
                .ok_or_else(|| Error::Artifact(format!("tensor {} outside weights.bin", t.name)))?;
            let values: Vec<f64> = bytes
                .chunks_exact(4)
                .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
                .collect();
            let (rows, cols) = match t.shape.as_slice() {
                [n] => (1, *n),
                [r, c] => (*r, *c),
                _ => return Err(Error::Artifact(format!("tensor {} has rank {}", t.name, t.shape.len()))),
            };
            let value = Array2::from_shape_vec((rows, cols), values)
                .map_err(|e| artifact(&t.name, &e))?;
            params.push(Param {
                name: t.name.clone(),
                value,
            });
        }
        let mapper = MapperModel {
            kind: me.kind,
            input_dim: me.input_dim,
            hidden1: me.hidden1,
            hidden2: me.hidden2,
            classes: me.classes,
            dropout: me.dropout,
            params,
            label_map: me.label_map.clone(),
        };
        mapper.validate().map_err(|e| Error::Artifact(e.to_string()))?;
        if mapper.label_map.iter().any(|&c| c >= clusters.len()) {
            return Err(Error::Artifact("mapper label outside the cluster table".into()));
        }
        let config = manifest.config;
        let embedder = Embedder::from_spec(&config.embedder.clone().with_env_override())?;
        if embedder.dimension() != mapper.input_dim {
            return Err(Error::Artifact(format!(
                "embedder dimension {} does not match mapper input {}",
                embedder.dimension(),
                mapper.input_dim
            )));
        }
        Ok(FittedPipeline {
            lexicon: CropLexicon::new(manifest.crops),
            config,
            records,
            clusters,
            mapper,
            stats: manifest.stats,
            corpus_sha256: manifest.corpus_sha256,
            embedder,
        })
    }
}

fn pretty_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Artifact(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_config_json_fills_defaults() {
        let c: PipelineConfig = serde_json::from_str(
            r#"{"cluster": {"thresh": 0.9}, "embedder": {"kind": "hashed", "dimension": 64, "seed": 3}}"#,
        )
        .unwrap();
        assert_eq!(c.cluster.thresh, 0.9);
        assert_eq!(c.cluster.lambda, 0.8);
        assert_eq!(c.embedder.dimension(), 64);
        assert_eq!(c.train, TrainConfig::default());
        let round: PipelineConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(round, c);
    }

    #[test]
    fn bad_config_rejected() {
        let mut c = PipelineConfig::default();
        c.cluster.lambda = 2.0;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }
}
