mod common;

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use base64::Engine;
use common::server::FakeServer;
use compbench::fixtures::png_bytes;
use compbench::forge::{
    build_synthetic_bank, load_bank, BankStore, ChatTextGen, Clock, DemoSource, ForgeError, ForgeOptions,
    HttpImageGen, ScriptedImageGen, ScriptedTextGen, BANK_MANIFEST,
};
use compbench::http::{JsonClient, RetryPolicy, ServiceError};
use serde_json::json;

fn lists() -> Vec<Vec<String>> {
    [
        ["dog", "umbrella", "bench", "lamp"],
        ["cat", "vase", "table", "window"],
        ["horse", "fence", "tree", "cloud"],
        ["cup", "spoon", "plate", "book"],
        ["kite", "boat", "rock", "bird"],
    ]
    .iter()
    .map(|l| l.iter().map(|s| s.to_string()).collect())
    .collect()
}

fn opts() -> ForgeOptions {
    ForgeOptions { clock: Clock::Fixed("2024-05-01T00:00:00Z".into()), ..ForgeOptions::default() }
}

/// Positive caption names every object; the counter caption swaps the first
/// two.
fn scripted_text(fail_on: Option<&'static str>, armed: Arc<AtomicBool>) -> ScriptedTextGen {
    ScriptedTextGen::new("text-model", move |prompt, _| {
        if let Some(obj) = fail_on {
            if prompt.contains(obj) && armed.load(Ordering::SeqCst) {
                return Err(ServiceError::Status { status: 500, body: "unavailable".into() });
            }
        }
        if let Some(rest) = prompt.strip_prefix("Generate a caption for an image which is made of 4 objects: ") {
            let objs: Vec<&str> = rest.split(". Can you").next().unwrap().split(", ").collect();
            return Ok(format!("a {} beside a {} with a {} and a {}", objs[0], objs[1], objs[2], objs[3]));
        }
        let caption = prompt.rsplit_once(": '").unwrap().1.trim_end_matches("'.");
        let words: Vec<&str> = caption.split(' ').collect();
        Ok(format!("a {} beside a {}{}", words[4], words[1], &caption[caption.find(" with").unwrap()..]))
    })
}

#[test]
fn replays_scripted_services_into_bank() {
    let dir = tempfile::tempdir().unwrap();
    let store = BankStore::new(dir.path().join("syn-a")).unwrap();
    let text = scripted_text(None, Arc::new(AtomicBool::new(false)));
    let images = ScriptedImageGen::constant("image-model", png_bytes(4, 4));
    let bank = build_synthetic_bank(&lists(), &text, &images, 21, &store, &opts()).unwrap();

    assert_eq!((bank.bank_id.as_str(), bank.seed, bank.demos.len()), ("syn-a", 21, 5));
    let d = &bank.demos[0];
    assert_eq!(d.caption_correct, "a dog beside a umbrella with a bench and a lamp");
    assert_eq!(d.caption_wrong, "a umbrella beside a dog with a bench and a lamp");
    assert_eq!(d.source, DemoSource::Synthetic);
    assert!(d.image.locator.ends_with("syn-a_0.png"));

    let steps: Vec<&str> = d.provenance.calls.iter().map(|c| c.step.as_str()).collect();
    assert_eq!(steps, ["positive_caption", "image", "negative_caption"]);
    assert_eq!(
        d.provenance.calls[0].prompt,
        "Generate a caption for an image which is made of 4 objects: dog, umbrella, bench, lamp. \
         Can you combine them into a compositionally aware caption?"
    );
    assert_eq!(d.provenance.calls[1].prompt, d.caption_correct);
    assert_eq!(
        d.provenance.calls[2].prompt,
        "Generate counter caption to this one, with the same objects in a different position/attribute: \
         'a dog beside a umbrella with a bench and a lamp'."
    );
    assert!(d.provenance.calls.iter().all(|c| c.timestamp == "2024-05-01T00:00:00Z"));
    assert_eq!(images.requests(), bank.demos.iter().map(|d| d.caption_correct.clone()).collect::<Vec<_>>());

    assert_eq!(load_bank(store.dir()).unwrap(), bank);
    assert!(!store.dir().join("progress.jsonl").exists());
}

#[test]
fn resumes_after_failure_without_redoing_finished_lists() {
    let dir = tempfile::tempdir().unwrap();
    let store = BankStore::new(dir.path().join("syn-b")).unwrap();
    let armed = Arc::new(AtomicBool::new(true));
    let text = scripted_text(Some("horse"), armed.clone());
    let images = ScriptedImageGen::constant("image-model", png_bytes(2, 2));

    let err = build_synthetic_bank(&lists(), &text, &images, 5, &store, &opts()).unwrap_err();
    match &err {
        ForgeError::AtList { position, source } => {
            assert_eq!(*position, 3);
            assert!(matches!(**source, ForgeError::Service(ServiceError::Status { status: 500, .. })));
        }
        other => panic!("unexpected {other:?}"),
    }
    assert!(!store.dir().join(BANK_MANIFEST).exists());
    let before = images.requests().len();
    assert_eq!(before, 2);

    armed.store(false, Ordering::SeqCst);
    let bank = build_synthetic_bank(&lists(), &text, &images, 5, &store, &opts()).unwrap();
    assert_eq!(bank.demos.len(), 5);
    let redone = &images.requests()[before..];
    assert_eq!(redone.len(), 3);
    assert!(redone[0].contains("horse"));
    assert_eq!(bank.demos.iter().map(|d| d.objects.clone()).collect::<Vec<_>>(), lists());
    assert_eq!(load_bank(store.dir()).unwrap(), bank);
}

#[test]
fn http_clients_against_local_server() {
    let png = png_bytes(3, 3);
    let b64 = base64::engine::general_purpose::STANDARD.encode(&png);
    let failures = Arc::new(std::sync::atomic::AtomicUsize::new(1));
    let f = failures.clone();
    let server = FakeServer::start(move |req| match req.path.as_str() {
        "/v1/chat/completions" => {
            let prompt = req.json()["messages"][0]["content"].as_str().unwrap().to_string();
            let reply = if prompt.starts_with("Generate a caption") {
                "\"A dog under an umbrella by a bench and a lamp.\""
            } else {
                "A bench under a dog by an umbrella and a lamp."
            };
            (200, json!({"model": "text-model-0613", "choices": [{"message": {"content": reply}}]}).to_string())
        }
        "/v1/images/generations" => {
            if f.fetch_sub(1, Ordering::SeqCst) > 0 {
                return (503, "{}".into());
            }
            (200, json!({"data": [{"b64_json": b64}]}).to_string())
        }
        _ => (404, "{}".into()),
    });
    let retry = RetryPolicy { max_attempts: 5, base_delay: std::time::Duration::ZERO };
    let client = JsonClient::new(format!("{}/v1", server.base), Some("sk-test".into())).with_retry(retry);
    let text = ChatTextGen::new(client.clone(), "text-model");
    let images = HttpImageGen::new(client, "image-model");
    let dir = tempfile::tempdir().unwrap();
    let store = BankStore::new(dir.path().join("live")).unwrap();
    let bank = build_synthetic_bank(&lists()[..1], &text, &images, 0, &store, &opts()).unwrap();

    let d = &bank.demos[0];
    assert_eq!(d.caption_correct, "A dog under an umbrella by a bench and a lamp.");
    assert_eq!(std::fs::read(&d.image.locator).unwrap(), png);
    assert_eq!(d.provenance.calls[0].model, "text-model-0613");
    let reqs = server.requests();
    assert_eq!(reqs.len(), 4);
    assert!(reqs.iter().all(|r| r.header("authorization") == Some("Bearer sk-test")));
    assert_eq!(reqs[1].json()["prompt"], d.caption_correct.as_str());
    assert_eq!(reqs[1].json()["model"], "image-model");
}
