//! HTTP surface of the mock endpoint: OpenAI-compatible bodies, stop and
//! max_tokens semantics, usage accounting, admin reconfiguration, and
//! determinism across restarts.

mod common;

use std::collections::BTreeMap;

use metaladder::client::{LlmClient, StopSignal};
use metaladder::corpus::Split;
use metaladder::mockllm::{self, MockBehavior, MockServerConfig, TraceStyle};
use proptest::prelude::*;

fn fixture_server(map: BTreeMap<String, String>) -> mockllm::MockServerHandle {
    mockllm::spawn(
        MockServerConfig::new(MockBehavior::FixtureReplay { fixture_map: map }),
        0,
    )
    .unwrap()
}

#[test]
fn chat_and_completions_round_trip_with_usage() {
    let problems = common::synth_problems(2, Split::Train);
    let cfg = common::scripted_student_config(
        &problems,
        problems.iter().map(|p| p.id.clone()),
        TraceStyle::Cot,
    );
    let server = mockllm::spawn(cfg, 0).unwrap();
    let client = LlmClient::new(&server.base_url, None, 0, None).unwrap();

    let prompt = metaladder::prompts::render_instruction(&problems[0].question);
    let chat = client.chat("any-model", &prompt, 0.0, 2048, Vec::new()).unwrap();
    let comp = client
        .complete("any-model", &prompt, 0.0, 2048, Vec::new())
        .unwrap();
    assert_eq!(chat.text, comp.text);
    let usage = comp.usage.unwrap();
    assert_eq!(
        usage.completion_tokens,
        metaladder::client::whitespace_tokens(&comp.text)
    );
    assert!(usage.prompt_tokens > 0);
    assert_eq!(usage.total_tokens, usage.prompt_tokens + usage.completion_tokens);
}

#[test]
fn unknown_model_is_404_and_malformed_is_400() {
    let mut cfg = common::teacher_config(7);
    cfg.served_models = Some(["mock-teacher".to_string()].into_iter().collect());
    let server = mockllm::spawn(cfg, 0).unwrap();

    let http = reqwest::blocking::Client::new();
    let resp = http
        .post(format!("{}/v1/completions", server.base_url))
        .json(&serde_json::json!({"model": "nope", "prompt": "hi"}))
        .send()
        .unwrap();
    assert_eq!(resp.status().as_u16(), 404);
    let body: serde_json::Value = resp.json().unwrap();
    assert!(body["error"]["message"].as_str().unwrap().contains("nope"));

    let resp = http
        .post(format!("{}/v1/completions", server.base_url))
        .json(&serde_json::json!({"model": "mock-teacher"}))
        .send()
        .unwrap();
    assert_eq!(resp.status().as_u16(), 400);

    let resp = http
        .post(format!("{}/v1/chat/completions", server.base_url))
        .json(&serde_json::json!({"model": "mock-teacher", "prompt": "wrong shape"}))
        .send()
        .unwrap();
    assert_eq!(resp.status().as_u16(), 400);
}

#[test]
fn admin_configure_switches_behavior_without_residue() {
    let problems = common::synth_problems(1, Split::Train);
    let server = mockllm::spawn(common::teacher_config(7), 0).unwrap();
    let client = LlmClient::new(&server.base_url, None, 0, None).unwrap();

    let annotation_prompt =
        metaladder::annotator::render_annotation_prompt(&problems[0]);
    let teacher_reply = client
        .chat("m", &annotation_prompt, 0.7, 2048, Vec::new())
        .unwrap();
    assert!(teacher_reply.text.contains("### Similar Problem:"));

    let student_cfg = common::scripted_student_config(
        &problems,
        problems.iter().map(|p| p.id.clone()),
        TraceStyle::Metaladder,
    );
    let http = reqwest::blocking::Client::new();
    let resp = http
        .post(format!("{}/admin/configure", server.base_url))
        .json(&serde_json::to_value(&student_cfg.behavior).unwrap())
        .send()
        .unwrap();
    assert!(resp.status().is_success());

    let student_prompt = metaladder::prompts::render_instruction(&problems[0].question);
    let student_reply = client
        .complete("m", &student_prompt, 0.0, 2048, Vec::new())
        .unwrap();
    assert!(student_reply.text.contains("Solution to the Original Problem:"));
    assert!(metaladder::grader::grade(
        &student_reply.text,
        &problems[0].gold_answer_raw
    ));

    let bad = http
        .post(format!("{}/admin/configure", server.base_url))
        .json(&serde_json::json!({"kind": "fixture_replay", "fixture_map": {}}))
        .send()
        .unwrap();
    assert_eq!(bad.status().as_u16(), 400);
}

#[test]
fn fixture_replay_and_fallback() {
    let mut map = BTreeMap::new();
    map.insert(
        mockllm::prompt_hash("known prompt"),
        "known reply".to_string(),
    );
    let server = fixture_server(map);
    let client = LlmClient::new(&server.base_url, None, 0, None).unwrap();

    let known = client
        .complete("m", "known prompt", 0.0, 2048, Vec::new())
        .unwrap();
    assert_eq!(known.text, "known reply");

    let unknown = client
        .complete("m", "never seen", 0.0, 2048, Vec::new())
        .unwrap();
    assert_eq!(unknown.text, "UNKNOWN PROMPT");
}

#[test]
fn identical_requests_are_byte_identical_across_restarts() {
    let prompt = "restate this";
    let mut map = BTreeMap::new();
    map.insert(
        mockllm::prompt_hash(prompt),
        "alpha beta gamma delta".to_string(),
    );

    let run = |map: BTreeMap<String, String>| -> (String, String) {
        let server = fixture_server(map);
        let http = reqwest::blocking::Client::new();
        let body = http
            .post(format!("{}/v1/completions", server.base_url))
            .json(&serde_json::json!({
                "model": "m", "prompt": prompt, "max_tokens": 3
            }))
            .send()
            .unwrap()
            .text()
            .unwrap();
        let parsed: serde_json::Value = serde_json::from_str(&body).unwrap();
        (body, parsed["choices"][0]["text"].as_str().unwrap().to_string())
    };

    let (body_a, text_a) = run(map.clone());
    let (body_b, text_b) = run(map);
    assert_eq!(body_a, body_b);
    assert_eq!(text_a, "alpha beta gamma");
    assert_eq!(text_b, "alpha beta gamma");
}

#[test]
fn stop_signal_reported_both_ways() {
    let problems = common::synth_problems(1, Split::Train);
    let cfg = common::scripted_student_config(
        &problems,
        problems.iter().map(|p| p.id.clone()),
        TraceStyle::Metaladder,
    );
    let server = mockllm::spawn(cfg, 0).unwrap();
    let client = LlmClient::new(&server.base_url, None, 0, None).unwrap();
    let prompt = metaladder::prompts::render_instruction(&problems[0].question);

    let stopped = client
        .complete(
            "m",
            &prompt,
            0.0,
            4096,
            vec!["Similar Problem:".to_string()],
        )
        .unwrap();
    assert_eq!(
        stopped.stop_signal,
        StopSignal::Matched("Similar Problem:".to_string())
    );
    assert!(!stopped.text.contains("Similar Problem:"));

    let unstopped = client.complete("m", &prompt, 0.0, 4096, Vec::new()).unwrap();
    assert_eq!(unstopped.stop_signal, StopSignal::NotMatched);
    assert!(unstopped.text.contains("Similar Problem:"));
}

proptest! {
    /// For any fixture containing marker M, requesting with stop=[M]
    /// yields a prefix that does not contain M.
    #[test]
    fn stop_yields_marker_free_prefix(
        head in "[a-z ]{0,40}",
        tail in "[a-z ]{0,40}",
        marker in prop::sample::select(vec![
            "Similar Problem:",
            "Original Problem:",
            "Reflection:",
        ]),
    ) {
        let fixture = format!("{head}{marker}{tail}");
        let (text, _, matched) = mockllm::apply_stops_and_cap(
            &fixture,
            &[marker.to_string()],
            u64::MAX,
        );
        prop_assert!(!text.contains(marker));
        prop_assert_eq!(matched.as_deref(), Some(marker));
        prop_assert!(fixture.starts_with(text));
    }

    /// Completion usage always equals the whitespace-token count of the
    /// returned text, under any cap.
    #[test]
    fn usage_matches_token_rule(raw in "[a-z \n]{0,80}", cap in 0u64..20) {
        let (text, _, _) = mockllm::apply_stops_and_cap(&raw, &[], cap);
        prop_assert!(metaladder::client::whitespace_tokens(text) <= cap);
        prop_assert!(raw.starts_with(text));
    }
}
