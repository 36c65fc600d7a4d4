#![allow(dead_code)]

use std::path::Path;
use std::time::Duration;

use spanconf::client::mock::greedy_answer;
use spanconf::client::{ClientConfig, QuestionItem, DEFAULT_PROMPT_TEMPLATE};

pub const SECRET: &str = "sk-test-7f3a91c2";

/// Questions whose reference matches the mock's greedy answer for even
/// indices and is unrelated for odd ones, so both label classes occur.
pub fn questions(n: usize) -> Vec<QuestionItem> {
    (0..n)
        .map(|i| {
            let question = format!("What is fact number {i}?");
            let prompt = DEFAULT_PROMPT_TEMPLATE.replace("{question}", &question);
            let reference = if i % 2 == 0 {
                greedy_answer(&prompt)
            } else {
                "an entirely unrelated reference sentence".to_string()
            };
            QuestionItem {
                id: format!("q{i:03}"),
                question,
                references: vec![reference],
            }
        })
        .collect()
}

pub fn write_questions(path: &Path, items: &[QuestionItem]) {
    let text: String = items.iter().map(|q| serde_json::to_string(q).unwrap() + "\n").collect();
    std::fs::write(path, text).unwrap();
}

pub fn fast_config(base_url: &str) -> ClientConfig {
    let mut cfg = ClientConfig::new(base_url, "mock-model");
    cfg.backoff = Duration::from_millis(1);
    cfg.timeout = Duration::from_secs(10);
    cfg
}
