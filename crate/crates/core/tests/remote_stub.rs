//! Integration tests for the streaming remote backend against a local stub
//! server speaking the OpenAI-compatible SSE protocol. Every stub response
//! closes its connection, so one accepted connection equals one request.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::mpsc;
use std::thread::JoinHandle;

use serde_json::Value;

use tomlab_core::backends::{RemoteBackend, RemoteEndpoint};
use tomlab_core::benchmarks::{PromptSpec, PromptVariant};
use tomlab_core::decode::{
    run_with_policy, Backend, BackendError, ChatPrompt, GenContext, SamplingParams, ThinkMarkers,
};
use tomlab_core::policies::{S2fConfig, S2fPolicy, VanillaPolicy};

enum StubResponse {
    /// Stream these content deltas, then `[DONE]`.
    Sse(Vec<&'static str>),
    Status(u16, &'static str),
}

struct Stub {
    base_url: String,
    requests: mpsc::Receiver<Value>,
    handle: JoinHandle<()>,
}

/// Serve `responses.len()` requests, one connection each, recording every
/// request body.
fn stub_server(responses: Vec<StubResponse>) -> Stub {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let base_url = format!("http://{}", listener.local_addr().unwrap());
    let (tx, rx) = mpsc::channel();
    let handle = std::thread::spawn(move || {
        for response in responses {
            let (stream, _) = listener.accept().unwrap();
            serve_one(stream, response, &tx);
        }
    });
    Stub {
        base_url,
        requests: rx,
        handle,
    }
}

fn serve_one(mut stream: TcpStream, response: StubResponse, tx: &mpsc::Sender<Value>) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut line = String::new();
    let mut content_length = 0usize;
    let mut saw_auth = false;
    loop {
        line.clear();
        if reader.read_line(&mut line).unwrap() == 0 {
            return;
        }
        let trimmed = line.trim_end();
        if trimmed.is_empty() {
            break;
        }
        let lower = trimmed.to_ascii_lowercase();
        if let Some(v) = lower.strip_prefix("content-length:") {
            content_length = v.trim().parse().unwrap();
        }
        if lower.starts_with("authorization: bearer ") {
            saw_auth = true;
        }
    }
    assert!(saw_auth, "client must send a bearer token");
    let mut body = vec![0u8; content_length];
    reader.read_exact(&mut body).unwrap();
    tx.send(serde_json::from_slice(&body).unwrap()).ok();

    match response {
        StubResponse::Sse(deltas) => {
            let mut payload = String::new();
            for delta in deltas {
                let chunk = serde_json::json!({
                    "choices": [{"delta": {"content": delta}, "finish_reason": null}]
                });
                payload.push_str(&format!("data: {chunk}\n\n"));
            }
            payload.push_str("data: [DONE]\n\n");
            let head =
                "HTTP/1.1 200 OK\r\ncontent-type: text/event-stream\r\nconnection: close\r\n\r\n"
                    .to_string();
            // the client may hang up mid-stream after a cancel
            let _ = stream.write_all(head.as_bytes());
            let _ = stream.write_all(payload.as_bytes());
        }
        StubResponse::Status(code, body) => {
            let head = format!(
                "HTTP/1.1 {code} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n",
                body.len()
            );
            let _ = stream.write_all(head.as_bytes());
            let _ = stream.write_all(body.as_bytes());
        }
    }
    let _ = stream.flush();
}

fn endpoint(base_url: &str, key_env: &'static str, max_retries: u32) -> RemoteEndpoint {
    std::env::set_var(key_env, "stub-key");
    RemoteEndpoint {
        base_url: base_url.to_string(),
        model_name: "stub-model".into(),
        api_key_env: key_env.into(),
        request_timeout_secs: 10,
        max_retries,
        retry_backoff_ms: 5,
    }
}

fn prompt() -> PromptSpec {
    PromptSpec {
        system: String::new(),
        user: "where is the ball?".into(),
        options_block: String::new(),
        variant: PromptVariant::WithOptions,
    }
}

#[test]
fn cancel_and_resume_continues_with_injection() {
    let stub = stub_server(vec![
        StubResponse::Sse(vec![" think", " think", " wait", " never-delivered"]),
        StubResponse::Sse(vec![" final", " answer"]),
    ]);
    let backend = RemoteBackend::new(
        endpoint(&stub.base_url, "TOMLAB_STUB_KEY_A", 0),
        SamplingParams::default(),
    );
    let cfg = S2fConfig {
        tau: 1,
        preset_sentence: " [time to answer]".into(),
        ..S2fConfig::default()
    };
    let mut policy = S2fPolicy::new(&cfg);
    let mut backend = backend;
    let gen = run_with_policy(
        &mut backend,
        &prompt(),
        &mut policy,
        &SamplingParams::default(),
        &ThinkMarkers::default(),
    )
    .unwrap();

    // tokens 0..k-1, the injection, then the fresh continuation
    assert_eq!(gen.transcript, " think think [time to answer] final answer");
    assert_eq!(gen.injections.len(), 1);
    assert_eq!(gen.injections[0].position, 2);
    assert_eq!(gen.n_tokens, 4); // the peeked " wait" was never emitted

    let first = stub.requests.recv().unwrap();
    assert_eq!(first["messages"].as_array().unwrap().len(), 1);
    assert_eq!(first["stream"], true);
    let second = stub.requests.recv().unwrap();
    let messages = second["messages"].as_array().unwrap();
    assert_eq!(messages.len(), 2);
    assert_eq!(messages[1]["role"], "assistant");
    assert_eq!(messages[1]["content"], " think think [time to answer]");
    stub.handle.join().unwrap();
}

#[test]
fn transient_failures_retry_with_backoff() {
    let stub = stub_server(vec![
        StubResponse::Status(500, "{\"error\":\"boom\"}"),
        StubResponse::Status(503, "{\"error\":\"busy\"}"),
        StubResponse::Sse(vec![" ok"]),
    ]);
    let mut backend = RemoteBackend::new(
        endpoint(&stub.base_url, "TOMLAB_STUB_KEY_B", 3),
        SamplingParams::default(),
    );
    let mut policy = VanillaPolicy;
    let gen = run_with_policy(
        &mut backend,
        &prompt(),
        &mut policy,
        &SamplingParams::default(),
        &ThinkMarkers::default(),
    )
    .unwrap();
    assert_eq!(gen.transcript, " ok");
    assert_eq!(stub.requests.try_iter().count(), 3);
    stub.handle.join().unwrap();
}

#[test]
fn retries_exhaust_to_backend_unavailable() {
    let stub = stub_server(vec![
        StubResponse::Status(500, "{}"),
        StubResponse::Status(500, "{}"),
    ]);
    let mut backend = RemoteBackend::new(
        endpoint(&stub.base_url, "TOMLAB_STUB_KEY_C", 1),
        SamplingParams::default(),
    );
    let ctx = GenContext::new(ChatPrompt {
        system: String::new(),
        user: "q".into(),
    });
    match backend.peek(&ctx) {
        Err(BackendError::Unavailable(msg)) => assert!(msg.contains("500"), "{msg}"),
        other => panic!("expected unavailable, got {other:?}"),
    }
    stub.handle.join().unwrap();
}

#[test]
fn status_401_is_auth_failure_without_retry() {
    let stub = stub_server(vec![StubResponse::Status(401, "{}")]);
    let mut backend = RemoteBackend::new(
        endpoint(&stub.base_url, "TOMLAB_STUB_KEY_D", 5),
        SamplingParams::default(),
    );
    let ctx = GenContext::new(ChatPrompt {
        system: String::new(),
        user: "q".into(),
    });
    match backend.peek(&ctx) {
        Err(BackendError::AuthFailure(_)) => {}
        other => panic!("expected auth failure, got {other:?}"),
    }
    assert_eq!(stub.requests.try_iter().count(), 1);
    stub.handle.join().unwrap();
}

#[test]
fn context_length_400_maps_to_context_too_long() {
    let stub = stub_server(vec![StubResponse::Status(
        400,
        "{\"error\":{\"message\":\"This model's maximum context length is exceeded\"}}",
    )]);
    let mut backend = RemoteBackend::new(
        endpoint(&stub.base_url, "TOMLAB_STUB_KEY_E", 2),
        SamplingParams::default(),
    );
    let ctx = GenContext::new(ChatPrompt {
        system: String::new(),
        user: "q".into(),
    });
    match backend.peek(&ctx) {
        Err(BackendError::ContextTooLong(_)) => {}
        other => panic!("expected context-too-long, got {other:?}"),
    }
    stub.handle.join().unwrap();
}

#[test]
fn zero_length_completion_is_empty_not_an_error() {
    let stub = stub_server(vec![StubResponse::Sse(vec![])]);
    let mut backend = RemoteBackend::new(
        endpoint(&stub.base_url, "TOMLAB_STUB_KEY_F", 0),
        SamplingParams::default(),
    );
    let mut policy = VanillaPolicy;
    let gen = run_with_policy(
        &mut backend,
        &prompt(),
        &mut policy,
        &SamplingParams::default(),
        &ThinkMarkers::default(),
    )
    .unwrap();
    assert_eq!(gen.transcript, "");
    assert_eq!(gen.n_tokens, 0);
    assert!(!gen.truncated);
    stub.handle.join().unwrap();
}

#[test]
fn greedy_peek_matches_following_sample() {
    let stub = stub_server(vec![StubResponse::Sse(vec![" a", " b"])]);
    let mut backend = RemoteBackend::new(
        endpoint(&stub.base_url, "TOMLAB_STUB_KEY_G", 0),
        SamplingParams::default(),
    );
    let ctx = GenContext::new(ChatPrompt {
        system: String::new(),
        user: "q".into(),
    });
    let peek = backend.peek(&ctx).unwrap();
    assert_eq!(peek.argmax_text, " a");
    let tok = backend.sample(&ctx).unwrap();
    assert_eq!(tok.text, " a");
    assert_eq!(backend.peek(&ctx).unwrap().argmax_text, " b");
    assert_eq!(backend.sample(&ctx).unwrap().text, " b");
    assert!(backend.sample(&ctx).unwrap().is_eos);
    stub.handle.join().unwrap();
}
