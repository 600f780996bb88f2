//! Chat through the API: deterministic stub, transcript context, failures.

use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::State;
use axum::http::StatusCode;
use axum::routing::post;
use axum::{Json, Router};
use discover_core::model::{Annotation, AnnotationBody, AnnotationKey, DiscreteSegment, Scheme, Session, TranscriptSegment};
use discover_server::assistant::{Assistant, AssistantConfig, Message, ProviderConfig, ProviderReply, ProviderRequest, Role};
use discover_server::{build_state, serve_on, ServerConfig};
use serde_json::{json, Value};

use crate::{ensure, OrFail, Outcome};

type Seen = Arc<Mutex<Vec<ProviderRequest>>>;

const WORDS: [(&str, u64, u64, &str); 6] = [
    ("teacher", 0, 900, "Good morning."),
    ("parent", 400, 1200, "Morning!"),
    ("teacher", 1500, 2400, "Shall we read?"),
    ("parent", 1500, 2000, "Yes, the blue book."),
    ("child", 1500, 1800, "Blue!"),
    ("child", 3000, 3500, "Again, again."),
];

/// The lines a context block must hold: every segment, ordered by start
/// time and then role name.
fn expected_lines() -> Vec<String> {
    let mut rows: Vec<(u64, &str, String)> = WORDS
        .iter()
        .map(|(role, s, e, text)| (*s, *role, format!("{role} [{s}-{e}]: {text}")))
        .collect();
    rows.sort();
    rows.into_iter().map(|r| r.2).collect()
}

async fn capture(State(seen): State<Seen>, Json(req): Json<ProviderRequest>) -> Json<ProviderReply> {
    seen.lock().unwrap().push(req);
    Json(ProviderReply { text: "noted".into() })
}

async fn slow(Json(_): Json<ProviderRequest>) -> Json<ProviderReply> {
    tokio::time::sleep(Duration::from_secs(2)).await;
    Json(ProviderReply { text: "late".into() })
}

async fn broken() -> StatusCode {
    StatusCode::INTERNAL_SERVER_ERROR
}

async fn providers() -> Result<(String, String, Seen), String> {
    let seen: Seen = Arc::default();
    let app = Router::new()
        .route("/capture", post(capture))
        .route("/slow", post(slow))
        .route("/broken", post(broken))
        .with_state(seen.clone());
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.or_fail()?;
    let base = format!("http://{}", listener.local_addr().or_fail()?);
    tokio::spawn(async move { axum::serve(listener, app).await });
    let closed = tokio::net::TcpListener::bind("127.0.0.1:0").await.or_fail()?;
    let down = format!("http://{}/chat", closed.local_addr().or_fail()?);
    drop(closed);
    Ok((base, down, seen))
}

async fn stub_is_deterministic() -> Result<(), String> {
    let script = [("a", "hello"), ("b", "What is KAPPA?"), ("a", "ünïcode ß"), ("a", "again"), ("b", "")];
    let mut runs = Vec::new();
    for _ in 0..2 {
        let assistant = Assistant::new(AssistantConfig {
            providers: vec![ProviderConfig::stub("stub")],
        })
        .or_fail()?;
        let mut replies = Vec::new();
        for (session, text) in script {
            let r = assistant.chat(session, "stub", text, Some("ctx")).await.or_fail()?;
            ensure(r.reply == format!("ECHO: {}", text.to_uppercase()), || format!("stub replied {:?}", r.reply))?;
            replies.push(r);
        }
        runs.push((replies, assistant.history("a").await, assistant.history("b").await));
    }
    ensure(runs[0] == runs[1], || "two identical stub conversations differ".into())?;
    ensure(runs[0].1.len() == 6 && runs[0].2.len() == 4, || "history lengths".into())
}

async fn through_api() -> Result<usize, String> {
    let (base, down, seen) = providers().await?;
    let dir = tempfile::tempdir().or_fail()?;
    let config_path = dir.path().join("assistant.toml");
    let toml = format!(
        r#"
[[provider]]
name = "capture"
kind = "http-generic"
endpoint = "{base}/capture"
model = "m"

[[provider]]
name = "slow"
kind = "http-generic"
endpoint = "{base}/slow"
model = "m"
timeout_ms = 100

[[provider]]
name = "broken"
kind = "http-generic"
endpoint = "{base}/broken"
model = "m"

[[provider]]
name = "down"
kind = "http-generic"
endpoint = "{down}"
model = "m"
"#
    );
    std::fs::write(&config_path, toml).or_fail()?;
    let data = dir.path().join("data");
    let mut config = ServerConfig::new(&data);
    config.assistant_config = Some(config_path);
    config.builtin_worker = false;
    let state = build_state(&config).or_fail()?;
    let store = state.store.clone();
    let assistant = state.assistant.clone();

    store.create_dataset("ds").or_fail()?;
    store
        .add_session(&Session {
            dataset: "ds".into(),
            name: "s1".into(),
            duration_ms: 5_000,
            roles: vec!["teacher".into(), "parent".into(), "child".into()],
            media: vec![],
        })
        .or_fail()?;
    store.add_scheme("ds", &Scheme::free("words").or_fail()?).or_fail()?;
    store.add_scheme("ds", &Scheme::discrete("smile", [(1, "smile")]).or_fail()?).or_fail()?;
    for role in ["teacher", "parent", "child"] {
        let segments = WORDS
            .iter()
            .filter(|w| w.0 == role)
            .map(|&(_, start_ms, end_ms, text)| TranscriptSegment {
                start_ms,
                end_ms,
                text: text.into(),
                speaker_confidence: 1.0,
            })
            .collect();
        store
            .save_annotation(&Annotation {
                key: AnnotationKey::new("ds", "s1", role, "words", "asr"),
                body: AnnotationBody::Transcript { segments },
            })
            .or_fail()?;
    }
    store
        .save_annotation(&Annotation {
            key: AnnotationKey::new("ds", "s1", "child", "smile", "gold"),
            body: AnnotationBody::Segments {
                segments: vec![DiscreteSegment::new(0, 100, 1)],
            },
        })
        .or_fail()?;

    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.or_fail()?;
    let api = format!("http://{}", listener.local_addr().or_fail()?);
    let (stop, stopped) = tokio::sync::oneshot::channel::<()>();
    tokio::spawn(serve_on(listener, state, false, async {
        let _ = stopped.await;
    }));
    let client = reqwest::Client::new();
    let chat = |provider: &str, message: &str, context_aware: bool| {
        client.post(format!("{api}/assistant/chat")).json(&json!({
            "session": "review",
            "provider": provider,
            "message": message,
            "context_aware": context_aware,
            "session_ref": {"dataset": "ds", "session": "s1"},
        }))
    };

    let resp = chat("capture", "Who spoke first?", true).send().await.or_fail()?;
    ensure(resp.status() == 200, || format!("chat status {}", resp.status()))?;
    let body: Value = resp.json().await.or_fail()?;
    ensure(body["reply"] == "noted", || format!("reply {body}"))?;
    let request = seen.lock().unwrap().last().cloned().ok_or("provider saw nothing")?;
    let system: Vec<&Message> = request.messages.iter().filter(|m| m.role == Role::System).collect();
    ensure(system.len() == 1, || format!("{} system messages", system.len()))?;
    let mut lines = system[0].text.lines();
    ensure(lines.next() == Some(discover_server::assistant::CONTEXT_HEADER), || "context header missing".into())?;
    let got: Vec<String> = lines.map(str::to_string).collect();
    ensure(got == expected_lines(), || format!("context lines {got:?}"))?;
    ensure(
        request.messages.last() == Some(&Message::new(Role::User, "Who spoke first?")),
        || "user message is not last".into(),
    )?;

    let before = assistant.history("review").await;
    ensure(before.len() == 2, || format!("history has {} messages", before.len()))?;
    for (provider, status) in [("slow", 504), ("broken", 502), ("down", 502), ("missing", 404)] {
        let resp = chat(provider, "Anything else?", true).send().await.or_fail()?;
        ensure(resp.status().as_u16() == status, || format!("{provider}: status {}", resp.status()))?;
        let after = assistant.history("review").await;
        ensure(after == before, || format!("{provider} failure changed the history"))?;
    }
    let _ = stop.send(());
    Ok(got.len())
}

pub fn run() -> Outcome {
    let rt = tokio::runtime::Runtime::new().or_fail()?;
    rt.block_on(async {
        stub_is_deterministic().await?;
        let lines = through_api().await?;
        Ok(format!(
            "stub replays identically, {lines} transcript lines in merge order, timeout/500/refused/unknown leave history unchanged"
        ))
    })
}
