//! Chat client contract tests: caching, retries, batch dedup, ordering, and
//! bounded concurrency.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Barrier;

use skill_loom_core::chat::{
    ChatClient, ChatMessage, ChatRequest, ChatResponse, FinishReason, FnTransport, ResponseCache,
    RetryPolicy, TokenUsage, TransportError,
};

fn request(text: &str, sample_index: u32) -> ChatRequest {
    ChatRequest {
        model: "m".into(),
        messages: vec![ChatMessage::user(text)],
        temperature: 0.0,
        top_p: 1.0,
        max_tokens: 64,
        sample_index,
    }
}

fn echo_response(text: String) -> ChatResponse {
    ChatResponse {
        content: text,
        finish_reason: FinishReason::Stop,
        usage: TokenUsage::default(),
    }
}

#[test]
fn request_key_is_stable_and_distinguishes_samples() {
    let a = request("hello", 0);
    let b = request("hello", 0);
    assert_eq!(a.request_key(), b.request_key());
    let c = request("hello", 1);
    assert_ne!(a.request_key(), c.request_key());
    let d = request("other", 0);
    assert_ne!(a.request_key(), d.request_key());
}

#[test]
fn second_identical_call_is_a_cache_hit() {
    let client = ChatClient::new(
        Box::new(FnTransport(|req: &ChatRequest| {
            Ok(echo_response(format!(
                "echo:{}",
                req.last_user_content().unwrap()
            )))
        })),
        ResponseCache::in_memory(),
        RetryPolicy::immediate(3),
    );
    let req = request("hello", 0);
    let first = client.complete(&req).unwrap();
    assert_eq!(client.network_calls(), 1);
    let second = client.complete(&req).unwrap();
    assert_eq!(client.network_calls(), 1);
    assert_eq!(first, second);
    assert_eq!(client.cache_hits(), 1);
}

#[test]
fn retryable_failure_then_success() {
    let calls = AtomicU64::new(0);
    let client = ChatClient::new(
        Box::new(FnTransport(move |_req: &ChatRequest| {
            if calls.fetch_add(1, Ordering::SeqCst) == 0 {
                Err(TransportError::retryable("status 429: slow down"))
            } else {
                Ok(echo_response("ok".into()))
            }
        })),
        ResponseCache::in_memory(),
        RetryPolicy::immediate(3),
    );
    let out = client.complete(&request("q", 0)).unwrap();
    assert_eq!(out.content, "ok");
    assert_eq!(client.network_calls(), 2);
}

#[test]
fn fatal_failure_does_not_retry() {
    let client = ChatClient::new(
        Box::new(FnTransport(|_req: &ChatRequest| {
            Err(TransportError::fatal("status 400: bad request"))
        })),
        ResponseCache::in_memory(),
        RetryPolicy::immediate(3),
    );
    assert!(client.complete(&request("q", 0)).is_err());
    assert_eq!(client.network_calls(), 1);
}

#[test]
fn retries_exhaust_then_error() {
    let client = ChatClient::new(
        Box::new(FnTransport(|_req: &ChatRequest| {
            Err(TransportError::retryable("status 503"))
        })),
        ResponseCache::in_memory(),
        RetryPolicy::immediate(3),
    );
    let err = client.complete(&request("q", 0)).unwrap_err();
    assert!(err.to_string().contains("after 3 attempt(s)"));
    assert_eq!(client.network_calls(), 3);
}

#[test]
fn length_finish_reason_is_returned_not_errored() {
    let client = ChatClient::new(
        Box::new(FnTransport(|_req: &ChatRequest| {
            Ok(ChatResponse {
                content: "truncat".into(),
                finish_reason: FinishReason::Length,
                usage: TokenUsage::default(),
            })
        })),
        ResponseCache::in_memory(),
        RetryPolicy::immediate(3),
    );
    let out = client.complete(&request("q", 0)).unwrap();
    assert_eq!(out.finish_reason, FinishReason::Length);
}

#[test]
fn batch_returns_request_order() {
    let client = ChatClient::new(
        Box::new(FnTransport(|req: &ChatRequest| {
            Ok(echo_response(format!(
                "echo:{}",
                req.last_user_content().unwrap()
            )))
        })),
        ResponseCache::in_memory(),
        RetryPolicy::immediate(3),
    );
    let reqs: Vec<ChatRequest> = (0..10).map(|i| request(&format!("q{i}"), 0)).collect();
    let out = client.complete_many(&reqs, 3).unwrap();
    assert_eq!(out.len(), 10);
    for (i, response) in out.iter().enumerate() {
        assert_eq!(response.content, format!("echo:q{i}"));
    }
}

#[test]
fn batch_empty_is_empty() {
    let client = ChatClient::new(
        Box::new(FnTransport(|_req: &ChatRequest| {
            Ok(echo_response("x".into()))
        })),
        ResponseCache::in_memory(),
        RetryPolicy::immediate(3),
    );
    assert!(client.complete_many(&[], 4).unwrap().is_empty());
}

#[test]
fn batch_dedups_identical_requests() {
    let client = ChatClient::new(
        Box::new(FnTransport(|req: &ChatRequest| {
            Ok(echo_response(format!(
                "echo:{}",
                req.last_user_content().unwrap()
            )))
        })),
        ResponseCache::in_memory(),
        RetryPolicy::immediate(3),
    );
    let reqs = vec![request("same", 0), request("same", 0)];
    let out = client.complete_many(&reqs, 2).unwrap();
    assert_eq!(client.network_calls(), 1);
    assert_eq!(out[0], out[1]);
}

#[test]
fn batch_peak_concurrency_equals_limit() {
    // Six distinct jobs over three workers; the barrier releases only when
    // three sends are simultaneously in flight.
    let barrier = Barrier::new(3);
    let client = ChatClient::new(
        Box::new(FnTransport(move |req: &ChatRequest| {
            barrier.wait();
            Ok(echo_response(format!(
                "echo:{}",
                req.last_user_content().unwrap()
            )))
        })),
        ResponseCache::in_memory(),
        RetryPolicy::immediate(1),
    );
    let reqs: Vec<ChatRequest> = (0..6).map(|i| request(&format!("q{i}"), 0)).collect();
    let out = client.complete_many(&reqs, 3).unwrap();
    assert_eq!(out.len(), 6);
    assert_eq!(client.peak_in_flight(), 3);
}

#[test]
fn batch_failure_keeps_partial_results_cached() {
    let client = ChatClient::new(
        Box::new(FnTransport(|req: &ChatRequest| {
            let text = req.last_user_content().unwrap();
            if text == "poison" {
                Err(TransportError::fatal("status 400"))
            } else {
                Ok(echo_response(format!("echo:{text}")))
            }
        })),
        ResponseCache::in_memory(),
        RetryPolicy::immediate(1),
    );
    // Sequential workers (limit 1) guarantee q0 completes before the poison.
    let reqs = vec![request("q0", 0), request("poison", 0), request("q2", 0)];
    assert!(client.complete_many(&reqs, 1).is_err());
    assert!(client.cache().get(&reqs[0].request_key()).is_some());
}

#[test]
fn persistent_cache_makes_rerun_network_free() {
    let dir = tempfile::tempdir().unwrap();
    let cache_path = dir.path().join("cache.jsonl");
    let reqs: Vec<ChatRequest> = (0..4).map(|i| request(&format!("q{i}"), 0)).collect();

    let first = {
        let client = ChatClient::new(
            Box::new(FnTransport(|req: &ChatRequest| {
                Ok(echo_response(format!(
                    "echo:{}",
                    req.last_user_content().unwrap()
                )))
            })),
            ResponseCache::open(&cache_path).unwrap(),
            RetryPolicy::immediate(3),
        );
        let out = client.complete_many(&reqs, 2).unwrap();
        assert_eq!(client.network_calls(), 4);
        out
    };

    // Fresh process simulation: new client over the same cache file with a
    // transport that must never be reached.
    let client = ChatClient::new(
        Box::new(FnTransport(|_req: &ChatRequest| {
            panic!("warm-cache rerun must not touch the transport")
        })),
        ResponseCache::open(&cache_path).unwrap(),
        RetryPolicy::immediate(3),
    );
    let second = client.complete_many(&reqs, 2).unwrap();
    assert_eq!(client.network_calls(), 0);
    assert_eq!(first, second);
}

#[test]
fn zero_max_in_flight_is_rejected() {
    let client = ChatClient::new(
        Box::new(FnTransport(|_req: &ChatRequest| {
            Ok(echo_response("x".into()))
        })),
        ResponseCache::in_memory(),
        RetryPolicy::immediate(1),
    );
    assert!(client.complete_many(&[request("q", 0)], 0).is_err());
}
