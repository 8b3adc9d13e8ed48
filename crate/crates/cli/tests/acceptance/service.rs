//! One toy checkpoint behind a real listener: a schema-valid 200 within five
//! seconds, documented 400/404/503 bodies, and 16 concurrent seeded requests
//! identical to their serial replays.

use std::path::Path;
use std::time::{Duration, Instant};

use recipegen::corpus::{serialize, synthetic};
use recipegen::nn::{Checkpoint, LstmConfig, Model, ModelConfig};
use recipegen::tokenizer::{Mode, Vocabulary};
use recipegen_service::{router, serve, AppState, ServiceConfig};
use reqwest::StatusCode;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::{ensure, fail, Outcome};

const SCHEMA: &str = include_str!("../../../service/schema/api.json");

fn check_schema(def: &str, body: &Value) -> Result<(), String> {
    let doc: Value = serde_json::from_str(SCHEMA).map_err(fail("schema"))?;
    let schema = json!({ "definitions": doc["definitions"], "$ref": format!("#/definitions/{def}") });
    let v = jsonschema::JSONSchema::options()
        .with_draft(jsonschema::Draft::Draft7)
        .compile(&schema)
        .map_err(fail("schema"))?;
    let msgs: Vec<String> = match v.validate(body) {
        Ok(()) => return Ok(()),
        Err(errors) => errors.map(|e| e.to_string()).collect(),
    };
    Err(format!("{def} body invalid: {msgs:?}: {body}"))
}

fn toy_checkpoint(path: &Path) -> Result<(), String> {
    let docs: Vec<_> = synthetic::toy(4, 3).iter().map(|r| serialize(r).unwrap()).collect();
    let vocab = Vocabulary::build(&docs, Mode::Char, 1).map_err(fail("vocab"))?;
    let config = ModelConfig::Lstm(LstmConfig {
        vocab_size: vocab.size(),
        embed_dim: 8,
        hidden_dim: 16,
        num_layers: 1,
        context_len: 64,
    });
    Checkpoint::new(Model::init(config, 11).map_err(fail("init"))?, vocab)
        .and_then(|c| c.save(path))
        .map_err(fail("save"))
}

async fn start(ckpts: &[&Path]) -> Result<String, String> {
    let paths: Vec<_> = ckpts.iter().map(|p| p.to_path_buf()).collect();
    let state = AppState::load(&paths, None).map_err(fail("load"))?;
    let app = router(state, &ServiceConfig::default()).map_err(fail("router"))?;
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.map_err(fail("bind"))?;
    let base = format!("http://{}", listener.local_addr().map_err(fail("addr"))?);
    tokio::spawn(serve(listener, app));
    Ok(base)
}

async fn post(client: &reqwest::Client, base: &str, body: &Value) -> Result<(StatusCode, Value), String> {
    let r = client
        .post(format!("{base}/generate"))
        .json(body)
        .send()
        .await
        .map_err(fail("request"))?;
    Ok((r.status(), r.json().await.map_err(fail("body"))?))
}

fn expect_error(got: (StatusCode, Value), status: StatusCode, code: &str, field: Option<&str>) -> Result<(), String> {
    let (s, body) = got;
    ensure!(s == status, "expected {status}, got {s}: {body}");
    check_schema("Error", &body)?;
    ensure!(body["error"]["code"] == code, "expected code {code}: {body}");
    if let Some(f) = field {
        ensure!(body["error"]["field"] == f, "expected field {f}: {body}");
    }
    Ok(())
}

fn untimed(mut v: Value) -> Value {
    if let Some(o) = v.as_object_mut() {
        o.remove("elapsed_ms");
    }
    v
}

async fn scenario() -> Outcome {
    let dir = tempfile::tempdir().map_err(fail("tempdir"))?;
    let ckpt = dir.path().join("toy.ckpt");
    toy_checkpoint(&ckpt)?;
    let digest = |p: &Path| std::fs::read(p).map(|b| Sha256::digest(b).to_vec()).map_err(fail("read"));
    let before = digest(&ckpt)?;
    let base = start(&[&ckpt]).await?;
    let client = reqwest::Client::new();

    let t = Instant::now();
    let (status, body) = post(&client, &base, &json!({"ingredients": ["salt", "1/2 cup flour"]})).await?;
    let latency = t.elapsed();
    ensure!(status == StatusCode::OK, "happy path returned {status}: {body}");
    ensure!(latency < Duration::from_secs(5), "happy path took {latency:?}");
    check_schema("GenerateResponse", &body)?;

    expect_error(
        post(&client, &base, &json!({"ingredients": []})).await?,
        StatusCode::BAD_REQUEST,
        "invalid_request",
        Some("ingredients"),
    )?;
    expect_error(
        post(&client, &base, &json!({"ingredients": ["salt"], "temperature": -1})).await?,
        StatusCode::BAD_REQUEST,
        "invalid_request",
        Some("temperature"),
    )?;
    expect_error(
        post(&client, &base, &json!({"ingredients": ["salt"], "model": "nope"})).await?,
        StatusCode::NOT_FOUND,
        "model_not_found",
        Some("model"),
    )?;

    let empty = start(&[]).await?;
    expect_error(
        post(&client, &empty, &json!({"ingredients": ["salt"]})).await?,
        StatusCode::SERVICE_UNAVAILABLE,
        "model_unavailable",
        None,
    )?;

    let requests: Vec<Value> = (0..16u64)
        .map(|i| json!({"ingredients": ["salt", "rice"], "seed": 1000 + i, "temperature": 1.0, "max_new_tokens": 120}))
        .collect();
    let concurrent = futures_join(&client, &base, &requests).await?;
    for (i, req) in requests.iter().enumerate() {
        let (s, serial) = post(&client, &base, req).await?;
        ensure!(s == StatusCode::OK, "replay {i} returned {s}");
        ensure!(untimed(serial) == untimed(concurrent[i].clone()), "request {i} differs from its serial replay");
    }
    let distinct: std::collections::BTreeSet<String> =
        concurrent.iter().map(|v| v["raw_text"].to_string()).collect();
    ensure!(digest(&ckpt)? == before, "checkpoint file changed while serving");
    Ok(format!(
        "200 in {} ms, 400/404/503 bodies valid, 16 concurrent = serial ({} distinct outputs)",
        latency.as_millis(),
        distinct.len()
    ))
}

async fn futures_join(client: &reqwest::Client, base: &str, requests: &[Value]) -> Result<Vec<Value>, String> {
    let handles: Vec<_> = requests
        .iter()
        .cloned()
        .map(|req| {
            let (client, base) = (client.clone(), base.to_string());
            tokio::spawn(async move { post(&client, &base, &req).await })
        })
        .collect();
    let mut out = Vec::with_capacity(handles.len());
    for (i, h) in handles.into_iter().enumerate() {
        let (s, body) = h.await.map_err(fail("join"))??;
        ensure!(s == StatusCode::OK, "concurrent request {i} returned {s}");
        out.push(body);
    }
    Ok(out)
}

pub fn run() -> Outcome {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(fail("runtime"))?
        .block_on(scenario())
}
