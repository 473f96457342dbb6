use std::sync::Arc;

use dataportrait::ingest::build_from_documents;
use dataportrait::report::{CheckResponse, PortraitInfo};
use dataportrait::{BloomFilter, FilterParams};
use dataportrait_service::{serve, Registry, DEFAULT_MAX_DOC_BYTES};
use serde_json::json;
use tokio::sync::oneshot;

const MEMBER: &str = "It was a bright cold day in April, and the clocks were striking thirteen. \
Winston Smith, his chin nuzzled into his breast in an effort to escape the vile wind, slipped quickly \
through the glass doors of Victory Mansions, though not quickly enough to prevent a swirl of gritty \
dust from entering along with him. The hallway smelt of boiled cabbage and old rag mats.";

fn fixture(width: usize, seed: u64) -> BloomFilter {
    let params = FilterParams::new(1 << 16, 7, width, width, seed).unwrap();
    build_from_documents([MEMBER, "an unrelated second document with its own words in it"], &params, 1).unwrap().0
}

struct Server {
    base: String,
    stop: Option<oneshot::Sender<()>>,
    handle: tokio::task::JoinHandle<std::io::Result<()>>,
}

impl Server {
    async fn start(registry: Arc<Registry>) -> Server {
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let base = format!("http://{}", listener.local_addr().unwrap());
        let (tx, rx) = oneshot::channel();
        let handle = tokio::spawn(serve(listener, registry, async move {
            let _ = rx.await;
        }));
        Server { base, stop: Some(tx), handle }
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.base, path)
    }

    async fn shutdown(mut self) {
        self.stop.take().unwrap().send(()).unwrap();
        self.handle.await.unwrap().unwrap();
    }
}

fn single(width: usize) -> Arc<Registry> {
    Arc::new(Registry::with_portraits(vec![("pile-fixture".into(), fixture(width, 1))], DEFAULT_MAX_DOC_BYTES).unwrap())
}

#[tokio::test]
async fn member_and_novel_documents() {
    let server = Server::start(single(20)).await;
    let client = reqwest::Client::new();

    let resp = client.post(server.url("/v1/check")).json(&json!({ "document": MEMBER })).send().await.unwrap();
    assert_eq!(resp.status(), 200);
    assert!(resp.headers()["content-type"].to_str().unwrap().starts_with("application/json"));
    let body: CheckResponse = resp.json().await.unwrap();
    assert!(body.is_member);
    assert_eq!(body.portrait, "pile-fixture");
    assert_eq!(body.ngram_width, 20);
    let longest = body.longest_chain.unwrap();
    assert!(longest.count >= 2);
    assert!(body.flags.is_none());
    assert!(body.chains.windows(2).all(|w| w[0].char_length >= w[1].char_length));
    let doc_chars = MEMBER.chars().count();
    assert!(body.chains.iter().all(|c| c.start_orig < c.end_orig && c.end_orig <= doc_chars));

    let novel = "Completely fresh prose about quantum gardening and the migratory habits of teapots, never ingested.";
    let body: CheckResponse = client
        .post(server.url("/v1/check"))
        .json(&json!({ "document": novel, "include_flags": true }))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert!(!body.is_member);
    assert!(body.chains.iter().all(|c| c.count == 1));
    assert_eq!(body.flags.unwrap().len(), body.doc_norm_length - 20 + 1);
    server.shutdown().await;
}

#[tokio::test]
async fn request_errors() {
    let server = Server::start(Arc::new(
        Registry::with_portraits(vec![("a".into(), fixture(8, 1)), ("b".into(), fixture(8, 2))], 1000).unwrap(),
    ))
    .await;
    let client = reqwest::Client::new();
    let post = |body: String| client.post(server.url("/v1/check")).body(body).send();

    assert_eq!(post("{not json".into()).await.unwrap().status(), 400);
    assert_eq!(post(json!({ "text": "x" }).to_string()).await.unwrap().status(), 400);
    assert_eq!(post(json!({ "document": "x", "portrait": "a" }).to_string()).await.unwrap().status(), 200);
    // two portraits mounted, no name
    assert_eq!(post(json!({ "document": "x" }).to_string()).await.unwrap().status(), 400);
    let resp = post(json!({ "document": "x", "portrait": "missing" }).to_string()).await.unwrap();
    assert_eq!(resp.status(), 404);
    let err: serde_json::Value = resp.json().await.unwrap();
    assert!(err["error"].as_str().unwrap().contains("missing"));
    let big = "y".repeat(1001);
    assert_eq!(post(json!({ "document": big, "portrait": "a" }).to_string()).await.unwrap().status(), 400);
    server.shutdown().await;
}

#[tokio::test]
async fn portraits_listing_and_names() {
    let registry = Arc::new(
        Registry::with_portraits(vec![("pile-fixture".into(), fixture(50, 1)), ("stack-fixture".into(), fixture(10, 3))], 1 << 20)
            .unwrap(),
    );
    let server = Server::start(registry).await;
    let client = reqwest::Client::new();
    let list: Vec<PortraitInfo> = client.get(server.url("/v1/portraits")).send().await.unwrap().json().await.unwrap();
    assert_eq!(list.len(), 2);
    assert_eq!(list[0].name, "pile-fixture");
    assert_eq!(list[0].ngram_width, 50);
    assert_eq!(list[0].stride, 50);
    assert_eq!(list[0].m_bits, 1 << 16);
    assert_eq!(list[0].k_hashes, 7);
    assert!(list[0].inserted > 0 && list[0].saturation > 0.0);
    assert_eq!(list[1].ngram_width, 10);

    for (name, width) in [("pile-fixture", 50), ("stack-fixture", 10)] {
        let body: CheckResponse = client
            .post(server.url("/v1/check"))
            .json(&json!({ "document": MEMBER, "portrait": name }))
            .send()
            .await
            .unwrap()
            .json()
            .await
            .unwrap();
        assert_eq!(body.portrait, name);
        assert_eq!(body.ngram_width, width);
    }
    server.shutdown().await;
}

#[tokio::test]
async fn zero_portraits() {
    let server = Server::start(Arc::new(Registry::new(vec![], 1 << 20).unwrap())).await;
    let client = reqwest::Client::new();
    let list: Vec<PortraitInfo> = client.get(server.url("/v1/portraits")).send().await.unwrap().json().await.unwrap();
    assert!(list.is_empty());
    let resp = client.post(server.url("/v1/check")).json(&json!({ "document": MEMBER })).send().await.unwrap();
    assert_eq!(resp.status(), 404);
    server.shutdown().await;
}

#[tokio::test]
async fn health_follows_loading() {
    let registry = Arc::new(Registry::new(vec!["late".into()], 1 << 20).unwrap());
    let server = Server::start(registry.clone()).await;
    let client = reqwest::Client::new();
    assert_eq!(client.get(server.url("/healthz")).send().await.unwrap().status(), 503);
    let resp = client.post(server.url("/v1/check")).json(&json!({ "document": MEMBER })).send().await.unwrap();
    assert_eq!(resp.status(), 503);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("late.dpbf");
    fixture(20, 5).save(&path).unwrap();
    registry.load("late", &path).unwrap();
    assert_eq!(client.get(server.url("/healthz")).send().await.unwrap().status(), 200);
    let resp = client.post(server.url("/v1/check")).json(&json!({ "document": MEMBER })).send().await.unwrap();
    assert_eq!(resp.status(), 200);
    server.shutdown().await;
}

#[tokio::test]
async fn corrupted_portrait_refused() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.dpbf");
    let mut bytes = fixture(20, 5).to_bytes();
    let n = bytes.len();
    bytes[n - 20] ^= 0xff;
    std::fs::write(&path, bytes).unwrap();
    let registry = Registry::new(vec!["bad".into()], 1 << 20).unwrap();
    let err = registry.load("bad", &path).unwrap_err();
    assert!(err.to_string().contains("checksum"), "{err}");
    assert!(!registry.all_ready());
}

#[tokio::test]
async fn stateless_and_concurrent() {
    let server = Server::start(single(20)).await;
    let client = reqwest::Client::new();
    let strip = |s: String| -> serde_json::Value {
        let mut v: serde_json::Value = serde_json::from_str(&s).unwrap();
        v.as_object_mut().unwrap().remove("elapsed_ms");
        v
    };
    let one = strip(
        client.post(server.url("/v1/check")).json(&json!({ "document": MEMBER })).send().await.unwrap().text().await.unwrap(),
    );
    let tasks: Vec<_> = (0..64)
        .map(|_| {
            let client = client.clone();
            let url = server.url("/v1/check");
            tokio::spawn(async move {
                client.post(url).json(&json!({ "document": MEMBER })).send().await.unwrap().text().await.unwrap()
            })
        })
        .collect();
    for t in tasks {
        assert_eq!(strip(t.await.unwrap()), one);
    }
    server.shutdown().await;
}

#[tokio::test]
async fn cors_is_permissive() {
    let server = Server::start(single(20)).await;
    let client = reqwest::Client::new();
    let resp = client
        .get(server.url("/v1/portraits"))
        .header("Origin", "http://ui.example")
        .send()
        .await
        .unwrap();
    assert_eq!(resp.headers()["access-control-allow-origin"], "*");
    server.shutdown().await;
}

#[tokio::test]
async fn one_kib_query_is_fast() {
    let server = Server::start(single(50)).await;
    let client = reqwest::Client::new();
    let doc: String = MEMBER.chars().cycle().take(1024).collect();
    let mut elapsed = Vec::new();
    for _ in 0..20 {
        let body: CheckResponse =
            client.post(server.url("/v1/check")).json(&json!({ "document": doc })).send().await.unwrap().json().await.unwrap();
        elapsed.push(body.elapsed_ms);
    }
    elapsed.sort_by(f64::total_cmp);
    assert!(elapsed[10] < 10.0, "median {} ms", elapsed[10]);
    server.shutdown().await;
}
