//! The curation HTTP interface driven in-process: list the pending queue,
//! record verdicts, read the curation rate.

use std::sync::{Arc, RwLock};

use axum::body::{to_bytes, Body};
use axum::http::{Request, StatusCode};
use chrono::Utc;
use petgan::engagement::{router, SharedStore, Store};
use petgan::train::SampleProvenance;
use tower::ServiceExt;

async fn call(store: &SharedStore, req: Request<Body>) -> anyhow::Result<(StatusCode, serde_json::Value)> {
    let resp = router(store.clone(), None).oneshot(req).await?;
    let status = resp.status();
    let bytes = to_bytes(resp.into_body(), usize::MAX).await?;
    Ok((status, serde_json::from_slice(&bytes)?))
}

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    let dir = tempfile::tempdir()?;
    let mut store = Store::open(dir.path())?;
    for i in 0..6u8 {
        let prov = SampleProvenance {
            index: i as usize,
            checkpoint_id: "example".into(),
            tau: None,
            seed: 1,
        };
        store.register_sample(&[i; 8], &prov, Utc::now())?;
    }
    let store: SharedStore = Arc::new(RwLock::new(store));

    let (_, queue) = call(&store, Request::get("/samples?status=pending").body(Body::empty())?).await?;
    let ids: Vec<String> = queue
        .as_array()
        .into_iter()
        .flatten()
        .filter_map(|s| s["id"].as_str().map(str::to_string))
        .collect();
    println!("{} pending samples", ids.len());

    for (i, id) in ids.iter().enumerate() {
        let verdict = if i % 3 == 0 { "fit" } else { "unfit" };
        let body = serde_json::json!({ "verdict": verdict, "note": "" }).to_string();
        let req = Request::post(format!("/samples/{id}/verdict"))
            .header("content-type", "application/json")
            .body(Body::from(body))?;
        let (status, _) = call(&store, req).await?;
        println!("  {} → {verdict} ({status})", &id[..12]);
    }

    let bad = Request::post(format!("/samples/{}/verdict", ids[0])).body(Body::from("{\"verdict\":\"maybe\"}"))?;
    let (status, err) = call(&store, bad).await?;
    println!("malformed verdict → {status}: {err}");

    let (_, rate) = call(&store, Request::get("/metrics/curation-rate").body(Body::empty())?).await?;
    println!("curation rate: {rate}");
    Ok(())
}
