//! Acceptance gate. Prints one line per criterion and exits nonzero if any
//! criterion fails that is not listed in `KNOWN_RED`.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::time::Instant;

use agriqrs::corpus::{preprocess_corpus, CorpusConfig, PreprocessedQuery};
use agriqrs::embed::{Embedder, EmbedderSpec, EmbeddingVector};
use agriqrs::evalharness::{map_score, mapping_relevance_lists, ndcg, ScoredRanking};
use agriqrs::mapper::{
    classification_report, evaluate_mapper, gradient_check, split_dataset, train_mapper, LabeledExample, MapperKind,
    MapperModel, TrainConfig,
};
use agriqrs::pipeline::{FittedPipeline, PipelineConfig};
use agriqrs::retrieval::top_k_answers;
use agriqrs::simcluster::{
    kmeans_size_matched, query_similarity_matrix, silhouette_score, threshold_cluster, ClusterParams, ClusterSet,
    SimilarityMatrix,
};
use agriqrs::synth::{synthetic_corpus, SynthConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Criteria expected to fail; each is analysed in the decision ledger.
const KNOWN_RED: &[&str] = &["quality-analogue", "metric-identities", "ndcg-hand-case"];

struct Outcome {
    id: &'static str,
    pass: bool,
    detail: String,
}

fn outcome(id: &'static str, pass: bool, detail: String) -> Outcome {
    Outcome { id, pass, detail }
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

/// Literal reading of the clustering pseudocode over a dense matrix.
fn reference_cluster(sim: &[Vec<f32>], thresh: f32, min: usize) -> Vec<Vec<usize>> {
    let n = sim.len();
    let mut visited = vec![false; n];
    let mut c_query = Vec::new();
    for i in 0..n {
        if visited[i] {
            continue;
        }
        visited[i] = true;
        let mut alpha = vec![i];
        for j in (i + 1)..n {
            if !visited[j] && sim[i][j] >= thresh {
                visited[j] = true;
                alpha.push(j);
            }
        }
        if alpha.len() >= min {
            c_query.push(alpha);
        }
    }
    c_query
}

fn random_dense(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec<f32>> {
    let mut m = vec![vec![1.0f32; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            // coarse grid so that exact ties with the threshold occur
            let v = rng.random_range(0..=20) as f32 / 20.0;
            m[i][j] = v;
            m[j][i] = v;
        }
    }
    m
}

fn oracle_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let start = Instant::now();
    let trials = 200;
    let mut mismatches = 0;
    for _ in 0..trials {
        let n = rng.random_range(1..=50);
        let dense = random_dense(&mut rng, n);
        let thresh = rng.random_range(0..=20) as f32 / 20.0;
        let min = rng.random_range(1..=4);
        let sim = SimilarityMatrix::from_dense(&dense).expect("valid matrix");
        let got = threshold_cluster(&sim, f64::from(thresh), min);
        if got.clusters != reference_cluster(&dense, thresh, min) {
            mismatches += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        "oracle-equivalence",
        mismatches == 0 && secs < 1.0,
        format!("{trials} matrices (n <= 50), {mismatches} mismatches, {secs:.3} s (limit 1 s)"),
    )
}

fn order_dependence() -> Outcome {
    let sim = SimilarityMatrix::from_dense(&[vec![1.0, 0.97, 0.5], vec![0.97, 1.0, 0.97], vec![0.5, 0.97, 1.0]])
        .expect("valid matrix");
    let got = threshold_cluster(&sim, 0.95, 1);
    let want = vec![vec![0, 1], vec![2]];
    outcome("order-dependence", got.clusters == want, format!("clusters {:?}, expected {want:?}", got.clusters))
}

struct SynthRun {
    queries: Vec<PreprocessedQuery>,
    vectors: Vec<EmbeddingVector>,
}

fn synth_run(n: usize, seed: u64) -> SynthRun {
    let corpus = synthetic_corpus(&SynthConfig {
        n_queries: n,
        seed,
        ..Default::default()
    })
    .expect("synthetic corpus");
    let (queries, _) = preprocess_corpus(&corpus.records, &corpus.lexicon(), &CorpusConfig::default());
    let embedder = Embedder::from_spec(&EmbedderSpec::default()).expect("hashed embedder");
    let texts: Vec<String> = queries.iter().map(|q| q.text_contextual.clone()).collect();
    let vectors = embedder
        .embed_batch(&texts)
        .expect("hashed embedding")
        .iter()
        .map(EmbeddingVector::normalized)
        .collect();
    SynthRun { queries, vectors }
}

fn paper_params() -> ClusterParams {
    ClusterParams {
        lambda: 0.8,
        thresh: 0.95,
        min_size: 2,
    }
}

fn cluster(run: &SynthRun, params: &ClusterParams) -> ClusterSet {
    let sim = query_similarity_matrix(&run.queries, &run.vectors, params).expect("similarity matrix");
    threshold_cluster(&sim, params.thresh, params.min_size)
}

fn quality_analogue() -> Outcome {
    let start = Instant::now();
    let run = synth_run(2000, 0);
    let params = paper_params();
    let clusters = cluster(&run, &params);
    let ours = silhouette_score(&run.vectors, &clusters).expect("silhouette");
    let km = kmeans_size_matched(&run.vectors, &clusters, 0, 100, Default::default()).expect("k-means");
    let theirs = silhouette_score(&run.vectors, &km).expect("silhouette");
    let secs = start.elapsed().as_secs_f64();
    outcome(
        "quality-analogue",
        ours >= 0.7 && ours >= theirs && secs < 30.0,
        format!(
            "{} clusters, {} dropped; silhouette threshold {ours:.4} vs k-means {theirs:.4} (need >= 0.7 and >= k-means); {secs:.2} s (limit 30 s)",
            clusters.len(),
            clusters.dropped.len()
        ),
    )
}

fn runtime_analogue() -> Outcome {
    let params = paper_params();
    let sizes = [1250, 2500, 5000, 10000];
    let mut times = Vec::new();
    for &n in &sizes {
        let run = synth_run(n, 0);
        let reps = if n <= 2500 { 3 } else { 1 };
        let best = (0..reps)
            .map(|_| {
                let start = Instant::now();
                let c = cluster(&run, &params);
                std::hint::black_box(c);
                start.elapsed().as_secs_f64()
            })
            .fold(f64::INFINITY, f64::min);
        times.push(best);
    }
    let ratios: Vec<f64> = times.windows(2).map(|w| w[1] / w[0]).collect();
    let last = *times.last().expect("sizes");
    let pass = last < 10.0 && ratios.iter().all(|&r| r <= 4.5);
    let shown: Vec<String> = sizes.iter().zip(&times).map(|(n, t)| format!("n={n}: {t:.3} s")).collect();
    let ratio_text: Vec<String> = ratios.iter().map(|r| format!("{r:.2}")).collect();
    outcome(
        "runtime-analogue",
        pass,
        format!(
            "{}; doubling ratios [{}] (limit 4.5); n=10000 limit 10 s",
            shown.join(", "),
            ratio_text.join(", ")
        ),
    )
}

fn mapper_analogue() -> Outcome {
    let run = synth_run(2000, 0);
    let clusters = cluster(&run, &paper_params());
    let examples: Vec<LabeledExample> = clusters
        .clusters
        .iter()
        .enumerate()
        .flat_map(|(c, members)| {
            members.iter().map(move |&m| (c, m))
        })
        .map(|(c, m)| LabeledExample {
            embedding: run.vectors[m].clone(),
            label: c,
        })
        .collect();
    let config = TrainConfig::default();
    let (train, test) = split_dataset(&examples, config.train_fraction, config.seed).expect("split");
    let start = Instant::now();
    let trained = train_mapper(&train, &config, MapperKind::Lstm).expect("training");
    let secs = start.elapsed().as_secs_f64();
    let report = evaluate_mapper(&trained.model, &test).expect("evaluation");
    outcome(
        "mapper-analogue",
        report.accuracy >= 0.95 && secs < 300.0,
        format!(
            "{} clusters, {} train / {} held out; accuracy {:.4} (need >= 0.95); training {secs:.1} s (limit 300 s)",
            clusters.len(),
            train.len(),
            test.len(),
            report.accuracy
        ),
    )
}

fn gradient_check_criterion() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let model = MapperModel::init(MapperKind::Lstm, 10, 16, 12, vec![0, 1, 2, 3], 0.2, 3).expect("init");
    let batch: Vec<(EmbeddingVector, usize)> = (0..6)
        .map(|i| {
            let v: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
            (EmbeddingVector(v), i % 4)
        })
        .collect();
    let check = gradient_check(&model, &batch).expect("gradient check");
    outcome(
        "gradient-check",
        check.max_relative_error < 1e-4 && check.zero_gradient.is_empty(),
        format!(
            "max relative error {:.3e} (limit 1e-4), hidden 16/12, f64",
            check.max_relative_error
        ),
    )
}

fn metric_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let sets = 1000;
    let (mut recall_eq, mut map_eq_acc, mut map_eq_wp) = (0, 0, 0);
    let mut max_gap: f64 = 0.0;
    for _ in 0..sets {
        let classes = rng.random_range(2..8);
        let n = rng.random_range(1..60);
        let truth: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
        let predicted: Vec<usize> = truth
            .iter()
            .map(|&t| if rng.random_bool(0.6) { t } else { rng.random_range(0..classes) })
            .collect();
        let report = classification_report(&truth, &predicted).expect("report");
        if report.weighted_recall.to_bits() == report.accuracy.to_bits() {
            recall_eq += 1;
        }
        let map = map_score(&mapping_relevance_lists(&truth, &predicted, 5)).expect("map");
        if map.to_bits() == report.accuracy.to_bits() {
            map_eq_acc += 1;
        }
        if map.to_bits() == report.weighted_precision.to_bits() {
            map_eq_wp += 1;
        }
        max_gap = max_gap.max((map - report.weighted_precision).abs());
    }
    outcome(
        "metric-identities",
        recall_eq == sets && map_eq_wp == sets,
        format!(
            "weighted recall == accuracy in {recall_eq}/{sets}; MAP == weighted precision in {map_eq_wp}/{sets} (max gap {max_gap:.4}); MAP == accuracy in {map_eq_acc}/{sets}"
        ),
    )
}

fn ndcg_hand_case() -> Outcome {
    let v = ndcg(&ScoredRanking {
        predicted: vec![2, 3],
        ideal: vec![3, 2],
    })
    .expect("ndcg");
    let sorted = ndcg(&ScoredRanking::from_predicted(vec![3, 2])).expect("ndcg");
    outcome(
        "ndcg-hand-case",
        (v - 0.83383).abs() <= 1e-4 && sorted == 1.0,
        format!("NDCG([2,3] vs [3,2]) = {v:.5} (target 0.83383 +/- 1e-4); sorted = {sorted}"),
    )
}

fn table1_config() -> PipelineConfig {
    let mut c = PipelineConfig::default();
    c.cluster.min_size = 1;
    c
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .expect("artifact dir")
        .map(|e| {
            let e = e.expect("dir entry");
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).expect("artifact file"))
        })
        .collect();
    files.sort();
    files
}

const GARLIC_QUERY: &str = "How to control fungal attack in garlic";
const GARLIC_ANSWER: &str = "Spray to mencozeb carbendazim 35-40 grampump";

fn end_to_end() -> Outcome {
    let start = Instant::now();
    let fitted = match FittedPipeline::fit(&fixture("table1.csv"), None, table1_config()) {
        Ok(f) => f,
        Err(e) => return outcome("end-to-end", false, format!("fit failed: {e}")),
    };
    let fit_secs = start.elapsed().as_secs_f64();
    let ranked = top_k_answers(GARLIC_QUERY, 1, &fitted).expect("query");
    let top = ranked.answers.first().map(|a| a.answer.clone()).unwrap_or_default();
    let dir = tempfile::tempdir().expect("tempdir");
    fitted.save(dir.path()).expect("save");
    let loaded = FittedPipeline::load(dir.path()).expect("load");
    let again = top_k_answers(GARLIC_QUERY, 1, &loaded).expect("query after load");
    let same_output = serde_json::to_vec(&ranked).unwrap() == serde_json::to_vec(&again).unwrap();
    let resaved = tempfile::tempdir().expect("tempdir");
    loaded.save(resaved.path()).expect("save");
    let same_artifact = dir_bytes(dir.path()) == dir_bytes(resaved.path());
    outcome(
        "end-to-end",
        top == GARLIC_ANSWER && same_output && same_artifact,
        format!(
            "{} clusters (min_size 1), fit {fit_secs:.2} s; rank 1 = {top:?}; output identical after load: {same_output}; artifact identical after re-save: {same_artifact}",
            fitted.cluster_count()
        ),
    )
}

fn determinism() -> Outcome {
    let probes = [
        ("table1.csv", table1_config(), GARLIC_QUERY),
        ("mosambi.csv", PipelineConfig::default(), "fertilizer dose for mosambi"),
    ];
    let mut identical = true;
    for (file, config, query) in probes {
        let mut runs = Vec::new();
        for _ in 0..2 {
            let fitted = FittedPipeline::fit(&fixture(file), None, config.clone()).expect("fit");
            let dir = tempfile::tempdir().expect("tempdir");
            fitted.save(dir.path()).expect("save");
            let out = serde_json::to_vec(&top_k_answers(query, 5, &fitted).expect("query")).unwrap();
            runs.push((dir_bytes(dir.path()), out));
        }
        identical &= runs[0] == runs[1];
    }
    outcome(
        "determinism",
        identical,
        format!("two fit+query runs per fixture (table1, mosambi): artifacts and outputs identical: {identical}"),
    )
}

fn main() {
    let criteria: Vec<(&str, fn() -> Outcome)> = vec![
        ("oracle-equivalence", oracle_equivalence),
        ("order-dependence", order_dependence),
        ("quality-analogue", quality_analogue),
        ("runtime-analogue", runtime_analogue),
        ("mapper-analogue", mapper_analogue),
        ("gradient-check", gradient_check_criterion),
        ("metric-identities", metric_identities),
        ("ndcg-hand-case", ndcg_hand_case),
        ("end-to-end", end_to_end),
        ("determinism", determinism),
    ];
    let only: BTreeSet<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut unexpected = Vec::new();
    for (id, run) in criteria {
        if !only.is_empty() && !only.contains(id) {
            continue;
        }
        let o = run();
        let known = KNOWN_RED.contains(&o.id);
        let tag = match (o.pass, known) {
            (true, _) => "PASS",
            (false, true) => "FAIL (known)",
            (false, false) => "FAIL",
        };
        println!("[{tag}] {}: {}", o.id, o.detail);
        if !o.pass && !known {
            unexpected.push(o.id);
        }
    }
    if !unexpected.is_empty() {
        eprintln!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}
