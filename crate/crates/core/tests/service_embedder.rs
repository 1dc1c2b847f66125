//! Service embedder against a local stub of the `/embed` endpoint.

mod common;

use std::net::TcpListener;
use std::path::Path;

use agriqrs::embed::{hashed_embedding, Embedder, EmbedderSpec};
use agriqrs::pipeline::{FittedPipeline, PipelineConfig};
use agriqrs::retrieval::top_k_answers;
use agriqrs::Error;
use common::{stub, Mode};

fn service(dimension: usize, endpoint: &str) -> Embedder {
    Embedder::from_spec(&EmbedderSpec::Service {
        dimension,
        endpoint: endpoint.to_string(),
    })
    .unwrap()
}

#[test]
fn batches_preserve_order_and_chunk() {
    let s = stub(32, Mode::Normal);
    let texts: Vec<String> = (0..150).map(|i| format!("query number {i}")).collect();
    let got = service(32, &format!("{}/", s.url)).embed_batch(&texts).unwrap();
    assert_eq!(got.len(), 150);
    for (t, v) in texts.iter().zip(&got) {
        assert_eq!(v, &hashed_embedding(t, 32, 7));
    }
    assert_eq!(s.requests(), 3);
}

#[test]
fn contract_violations_are_provider_errors() {
    let texts = vec!["a".to_string(), "b".to_string()];
    for mode in [Mode::WrongDim, Mode::DropOne, Mode::Fail] {
        let s = stub(16, mode);
        let err = service(16, &s.url).embed_batch(&texts).unwrap_err();
        assert!(matches!(err, Error::Provider(_)), "{err:?}");
        assert!(!err.is_data_error());
    }
    let closed = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", closed.local_addr().unwrap());
    drop(closed);
    assert!(matches!(service(16, &url).embed("x"), Err(Error::Provider(_))));
}

#[test]
fn table_one_fit_and_query_through_service() {
    let s = stub(64, Mode::Normal);
    let mut config = PipelineConfig::default();
    config.cluster.min_size = 1;
    config.embedder = EmbedderSpec::Service {
        dimension: 64,
        endpoint: s.url.clone(),
    };
    let corpus = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/table1.csv");
    let fitted = FittedPipeline::fit(&corpus, None, config).unwrap();
    let ranked = top_k_answers("How to control fungal attack in garlic", 1, &fitted).unwrap();
    assert_eq!(ranked.answers[0].answer, "Spray to mencozeb carbendazim 35-40 grampump");
    assert!(s.requests() >= 2);
}
