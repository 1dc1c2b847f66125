//! Command-line and HTTP front end.

pub mod args;
pub mod render;
pub mod server;

use std::io::{BufRead, IsTerminal, Write};
use std::path::Path;

use agriqrs::embed::EmbedderSpec;
use agriqrs::evalharness::{evaluate_retrieval, read_scored_set, write_retrieval_csv};
use agriqrs::mapper::MapperKind;
use agriqrs::par::Execution;
use agriqrs::pipeline::{FittedPipeline, PipelineConfig};
use agriqrs::retrieval::top_k_answers;
use agriqrs::simcluster::{benchmark_clustering, cluster_quality, kmeans_size_matched, write_bench_csv, BenchOptions, ClusterParams};
use agriqrs::synth::{synthetic_corpus, SynthConfig};
use anyhow::Context;

use args::{Cli, Command, ConfigArgs, EmbedderKind, Format, MapperChoice};

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_RUNTIME: i32 = 4;

/// Bad flag combinations that clap cannot express.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

/// Exit status for a failed command.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    if err.downcast_ref::<UsageError>().is_some() {
        return EXIT_USAGE;
    }
    match err.downcast_ref::<agriqrs::Error>() {
        Some(e) if e.is_data_error() => EXIT_DATA,
        _ => EXIT_RUNTIME,
    }
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Fit(a) => {
            let config = build_config(&a.config)?;
            let fitted = FittedPipeline::fit(&a.corpus, a.lexicon.as_deref(), config)?;
            fitted.save(&a.out)?;
            log::info!("wrote artifact to {}", a.out.display());
            Ok(())
        }
        Command::Query(a) => {
            let pipeline = FittedPipeline::load(&a.answer.artifact)?;
            let ranked = top_k_answers(&a.text, a.answer.k, &pipeline)?;
            print!("{}", render::render(&ranked, a.answer.format)?);
            Ok(())
        }
        Command::Repl(a) => {
            let pipeline = FittedPipeline::load(&a.answer.artifact)?;
            repl(&pipeline, a.answer.k, a.answer.format, std::io::stdin().lock(), std::io::stdout().lock())
        }
        Command::Serve(a) => {
            let pipeline = FittedPipeline::load(&a.artifact)?;
            let runtime = tokio::runtime::Runtime::new().context("starting async runtime")?;
            runtime.block_on(server::serve(pipeline, &a.bind))
        }
        Command::EvalCluster(a) => {
            let pipeline = FittedPipeline::load(&a.artifact)?;
            let vectors = pipeline.embeddings()?;
            let exec = Execution::default();
            let km = kmeans_size_matched(&vectors, &pipeline.clusters, a.seed, a.max_iter, exec)?;
            let mut rows = Vec::new();
            for (method, clusters) in [("threshold", &pipeline.clusters), ("kmeans", &km)] {
                let q = cluster_quality(&vectors, clusters, exec)?;
                rows.push(render::QualityRow {
                    method,
                    clusters: clusters.len(),
                    silhouette: q.silhouette,
                    ch_index: q.calinski_harabasz.value,
                    db_index: q.davies_bouldin.value,
                });
            }
            with_output(a.out.as_deref(), |w| render::write_quality_csv(&rows, w))
        }
        Command::EvalMapper(a) => {
            let pipeline = FittedPipeline::load(&a.artifact)?;
            let report = pipeline.holdout_report()?;
            with_output(a.out.as_deref(), |mut w| {
                serde_json::to_writer_pretty(&mut w, &report)?;
                writeln!(w)?;
                Ok(())
            })
        }
        Command::EvalRetrieval(a) => {
            let pipeline = FittedPipeline::load(&a.artifact)?;
            let scored = read_scored_set(&a.scored)?;
            let rows = evaluate_retrieval(&pipeline, &scored, &a.k)?;
            with_output(a.out.as_deref(), |w| Ok(write_retrieval_csv(&rows, w)?))
        }
        Command::Bench(a) => {
            let mut params = ClusterParams::default();
            if let Some(t) = a.thresh {
                params.thresh = t;
            }
            if let Some(l) = a.lambda {
                params.lambda = l;
            }
            if let Some(m) = a.min_size {
                params.min_size = m;
            }
            let opts = BenchOptions {
                repetitions: a.repetitions.max(1),
                with_metrics: !a.no_metrics,
                dimension: a.dim,
                exec: if a.sequential { Execution::Sequential } else { Execution::default() },
                ..Default::default()
            };
            let rows = benchmark_clustering(&a.sizes, &params, a.seed, &opts)?;
            with_output(a.out.as_deref(), |w| Ok(write_bench_csv(&rows, w)?))
        }
        Command::Synth(a) => {
            let corpus = synthetic_corpus(&SynthConfig {
                n_queries: a.n,
                n_templates: a.templates,
                noise: a.noise,
                seed: a.seed,
            })?;
            corpus.write_csv(&a.out)?;
            if let Some(p) = &a.lexicon_out {
                corpus.write_lexicon(p)?;
            }
            Ok(())
        }
    }
}

fn with_output(
    path: Option<&Path>,
    write: impl FnOnce(&mut dyn Write) -> anyhow::Result<()>,
) -> anyhow::Result<()> {
    match path {
        Some(p) => {
            let mut file = std::io::BufWriter::new(
                std::fs::File::create(p).with_context(|| format!("creating {}", p.display()))?,
            );
            write(&mut file)?;
            file.flush()?;
        }
        None => write(&mut std::io::stdout().lock())?,
    }
    Ok(())
}

/// `--config` (or defaults) with the per-flag overrides applied.
pub fn build_config(a: &ConfigArgs) -> anyhow::Result<PipelineConfig> {
    let mut c = match &a.config {
        Some(p) => PipelineConfig::from_json_file(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(t) = a.thresh {
        c.cluster.thresh = t;
    }
    if let Some(l) = a.lambda {
        c.cluster.lambda = l;
    }
    if let Some(m) = a.min_size {
        c.cluster.min_size = m;
    }
    if let Some(seed) = a.seed {
        c.train.seed = seed;
        if let EmbedderSpec::Hashed { seed: s, .. } = &mut c.embedder {
            *s = seed;
        }
    }
    if let Some(e) = a.epochs {
        c.train.epochs = e;
    }
    if let Some(m) = a.mapper {
        c.mapper_kind = match m {
            MapperChoice::Lstm => MapperKind::Lstm,
            MapperChoice::Linear => MapperKind::Linear,
        };
    }
    let dimension = a.dim.unwrap_or_else(|| c.embedder.dimension());
    let kind = a.embedder.unwrap_or(match c.embedder {
        EmbedderSpec::Hashed { .. } => EmbedderKind::Hashed,
        EmbedderSpec::File { .. } => EmbedderKind::File,
        EmbedderSpec::Service { .. } => EmbedderKind::Service,
    });
    c.embedder = match (kind, &c.embedder) {
        (EmbedderKind::Hashed, EmbedderSpec::Hashed { seed, .. }) => EmbedderSpec::Hashed { dimension, seed: *seed },
        (EmbedderKind::Hashed, _) => EmbedderSpec::Hashed {
            dimension,
            seed: a.seed.unwrap_or(0),
        },
        (EmbedderKind::File, current) => {
            let path = match (&a.embeddings, current) {
                (Some(p), _) => p.clone(),
                (None, EmbedderSpec::File { path, .. }) => path.clone(),
                _ => return Err(UsageError("--embedder file needs --embeddings <path>".into()).into()),
            };
            EmbedderSpec::File { dimension, path }
        }
        (EmbedderKind::Service, current) => {
            let endpoint = match (&a.endpoint, current) {
                (Some(e), _) => e.clone(),
                (None, EmbedderSpec::Service { endpoint, .. }) => endpoint.clone(),
                _ => std::env::var(agriqrs::embed::ENDPOINT_ENV).map_err(|_| {
                    UsageError(format!(
                        "--embedder service needs --endpoint or {}",
                        agriqrs::embed::ENDPOINT_ENV
                    ))
                })?,
            };
            EmbedderSpec::Service { dimension, endpoint }
        }
    };
    c.validate()?;
    Ok(c)
}

/// One query per input line; blank lines are skipped and errors are reported
/// without ending the loop.
pub fn repl<R: BufRead, W: Write>(
    pipeline: &FittedPipeline,
    k: usize,
    format: Format,
    input: R,
    mut output: W,
) -> anyhow::Result<()> {
    let interactive = std::io::stdin().is_terminal();
    let prompt = || {
        if interactive {
            eprint!("> ");
        }
    };
    prompt();
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            prompt();
            continue;
        }
        match top_k_answers(&line, k, pipeline) {
            Ok(ranked) => {
                output.write_all(render::render(&ranked, format)?.as_bytes())?;
                output.flush()?;
            }
            Err(e) => eprintln!("error: {e}"),
        }
        prompt();
    }
    Ok(())
}
