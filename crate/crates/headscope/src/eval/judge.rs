//! Client for an external yes/no answer judge.
//!
//! The judge is advisory: its verdicts are reported beside the metric-based
//! accuracy, never folded into it. Failures therefore become explicit
//! abstentions — a judged batch always returns one outcome per input, in
//! input order, no matter how the service behaves.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::http::{post_json, Endpoint};

/// Prompt template version; bump when the wording changes so stored
/// verdicts are comparable.
pub const JUDGE_PROMPT_VERSION: u32 = 1;

/// Default wording sent alongside each triplet. `{question}`, `{gold}` and
/// `{answer}` are substituted.
pub const DEFAULT_JUDGE_PROMPT: &str = "Question: {question}\nReference answer: {gold}\n\
     Candidate answer: {answer}\nDoes the candidate answer convey the same meaning as the \
     reference? Reply with exactly 'yes' or 'no'.";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JudgeConfig {
    pub endpoint: Endpoint,
    /// Additional attempts after the first failure.
    pub max_retries: usize,
    /// Base of the exponential backoff between attempts.
    pub backoff_ms: u64,
    /// Upper bound on concurrent requests.
    pub max_in_flight: usize,
    pub prompt_template: String,
}

impl JudgeConfig {
    pub fn new(endpoint: Endpoint) -> JudgeConfig {
        JudgeConfig {
            endpoint,
            max_retries: 2,
            backoff_ms: 100,
            max_in_flight: 4,
            prompt_template: DEFAULT_JUDGE_PROMPT.to_string(),
        }
    }
}

/// One answer triplet to be judged.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JudgeRequest {
    pub question: String,
    pub gold_answer: String,
    pub model_answer: String,
}

/// Verdict or explicit abstention for one request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum JudgeOutcome {
    Verdict { correct: bool },
    Abstained { reason: String },
}

impl JudgeOutcome {
    pub fn verdict(&self) -> Option<bool> {
        match self {
            JudgeOutcome::Verdict { correct } => Some(*correct),
            JudgeOutcome::Abstained { .. } => None,
        }
    }
}

#[derive(Serialize)]
struct JudgeWireRequest<'a> {
    prompt: &'a str,
    question: &'a str,
    gold_answer: &'a str,
    model_answer: &'a str,
}

#[derive(Deserialize)]
struct JudgeWireResponse {
    verdict: String,
}

fn render_prompt(template: &str, request: &JudgeRequest) -> String {
    template
        .replace("{question}", &request.question)
        .replace("{gold}", &request.gold_answer)
        .replace("{answer}", &request.model_answer)
}

fn parse_verdict(raw: &str) -> Result<bool> {
    match raw.trim().to_lowercase().as_str() {
        "yes" => Ok(true),
        "no" => Ok(false),
        other => Err(Error::Evaluation(format!(
            "judge returned {other:?}, expected 'yes' or 'no'"
        ))),
    }
}

/// Judge one request, retrying transient failures with exponential backoff.
pub fn judge_one(config: &JudgeConfig, request: &JudgeRequest) -> JudgeOutcome {
    let prompt = render_prompt(&config.prompt_template, request);
    let wire = JudgeWireRequest {
        prompt: &prompt,
        question: &request.question,
        gold_answer: &request.gold_answer,
        model_answer: &request.model_answer,
    };
    let mut last_error = String::new();
    for attempt in 0..=config.max_retries {
        if attempt > 0 {
            let delay = config.backoff_ms.saturating_mul(1 << (attempt - 1).min(16));
            std::thread::sleep(std::time::Duration::from_millis(delay));
        }
        match post_json::<_, JudgeWireResponse>(&config.endpoint, &wire) {
            Ok(response) => match parse_verdict(&response.verdict) {
                Ok(correct) => return JudgeOutcome::Verdict { correct },
                Err(e) => last_error = e.to_string(),
            },
            Err(e) => last_error = e.to_string(),
        }
    }
    JudgeOutcome::Abstained { reason: last_error }
}

/// Judge a batch with at most `max_in_flight` concurrent requests.
/// Outcomes are returned in input order regardless of completion order.
pub fn judge_batch(config: &JudgeConfig, requests: &[JudgeRequest]) -> Vec<JudgeOutcome> {
    if requests.is_empty() {
        return Vec::new();
    }
    let workers = config.max_in_flight.max(1).min(requests.len());
    if workers == 1 {
        return requests.iter().map(|r| judge_one(config, r)).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<JudgeOutcome>>> =
        requests.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let index = next.fetch_add(1, Ordering::Relaxed);
                if index >= requests.len() {
                    break;
                }
                let outcome = judge_one(config, &requests[index]);
                *slots[index].lock().unwrap() = Some(outcome);
            });
        }
    });
    slots.into_iter().map(|slot| slot.into_inner().unwrap().unwrap()).collect()
}

/// Count verdicts vs abstentions: (n_correct, n_judged, n_abstained).
pub fn tally_outcomes(outcomes: &[JudgeOutcome]) -> (usize, usize, usize) {
    let mut correct = 0;
    let mut judged = 0;
    let mut abstained = 0;
    for outcome in outcomes {
        match outcome.verdict() {
            Some(true) => {
                correct += 1;
                judged += 1;
            }
            Some(false) => judged += 1,
            None => abstained += 1,
        }
    }
    (correct, judged, abstained)
}
