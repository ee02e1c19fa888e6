//! Client for external label predictors.
//!
//! Wire protocol: `POST {endpoint}/predict` with a JSON body
//! `{"task", "system", "user", "case_id"}`; the reply is `{"label", "raw"}`
//! where `label` must be one of the task's label tokens.

use std::collections::{HashMap, VecDeque};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::Task;
use crate::textualize::PromptBundle;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum LlmError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("request timed out")]
    Timeout,
    #[error("server returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("response is not a valid predict reply: {0}")]
    Protocol(String),
    #[error("label {0:?} is not a token of the task")]
    InvalidLabel(String),
    #[error("no transcript entry for case {0:?}")]
    NotFound(String),
}

impl LlmError {
    /// Transport failures, timeouts, 429 and 5xx are worth another try.
    pub fn is_retryable(&self) -> bool {
        match self {
            LlmError::Transport(_) | LlmError::Timeout => true,
            LlmError::Http { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictRequest {
    pub task: Task,
    pub system: String,
    pub user: String,
    pub case_id: String,
}

impl From<&PromptBundle> for PredictRequest {
    fn from(b: &PromptBundle) -> Self {
        PredictRequest {
            task: b.task,
            system: b.system_text.clone(),
            user: b.user_text.clone(),
            case_id: b.case_id.clone(),
        }
    }
}

impl PredictRequest {
    pub fn body(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("request serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictResponse {
    pub label: String,
    #[serde(default)]
    pub raw: serde_json::Value,
}

pub trait Predictor: Send + Sync {
    fn call(&self, request: &PredictRequest) -> Result<PredictResponse, LlmError>;
}

pub struct HttpPredictor {
    url: String,
    client: reqwest::blocking::Client,
    token: Option<String>,
}

impl HttpPredictor {
    pub fn new(endpoint: &str, timeout: Duration) -> Result<Self, LlmError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        Ok(HttpPredictor {
            url: format!("{}/predict", endpoint.trim_end_matches('/')),
            client,
            token: None,
        })
    }

    /// Send `Authorization: Bearer <token>` with every request.
    pub fn with_token(mut self, token: Option<String>) -> Self {
        self.token = token;
        self
    }
}

impl Predictor for HttpPredictor {
    fn call(&self, request: &PredictRequest) -> Result<PredictResponse, LlmError> {
        let classify = |e: reqwest::Error| {
            if e.is_timeout() {
                LlmError::Timeout
            } else {
                LlmError::Transport(e.to_string())
            }
        };
        let mut builder = self
            .client
            .post(&self.url)
            .header(reqwest::header::CONTENT_TYPE, "application/json")
            .body(request.body());
        if let Some(t) = &self.token {
            builder = builder.bearer_auth(t);
        }
        let resp = builder.send().map_err(classify)?;
        let status = resp.status();
        let body = resp.text().map_err(classify)?;
        if !status.is_success() {
            return Err(LlmError::Http {
                status: status.as_u16(),
                body,
            });
        }
        serde_json::from_str(&body).map_err(|e| LlmError::Protocol(e.to_string()))
    }
}

/// Answers from a `case_id → label` transcript (one JSON object per line).
pub struct MockPredictor {
    labels: HashMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub case_id: String,
    pub label: String,
}

impl MockPredictor {
    pub fn new(entries: impl IntoIterator<Item = (String, String)>) -> Self {
        MockPredictor {
            labels: entries.into_iter().collect(),
        }
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut labels = HashMap::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let e: TranscriptEntry = serde_json::from_str(line).map_err(|err| {
                std::io::Error::new(std::io::ErrorKind::InvalidData, format!("{}:{}: {err}", path.display(), i + 1))
            })?;
            labels.insert(e.case_id, e.label);
        }
        Ok(MockPredictor { labels })
    }
}

impl Predictor for MockPredictor {
    fn call(&self, request: &PredictRequest) -> Result<PredictResponse, LlmError> {
        let label = self
            .labels
            .get(&request.case_id)
            .ok_or_else(|| LlmError::NotFound(request.case_id.clone()))?;
        Ok(PredictResponse {
            label: label.clone(),
            raw: serde_json::Value::Null,
        })
    }
}

/// Replays a fixed sequence of outcomes, one per call.
pub struct ScriptedPredictor {
    script: Mutex<VecDeque<Result<PredictResponse, LlmError>>>,
    calls: AtomicUsize,
}

impl ScriptedPredictor {
    pub fn new(script: Vec<Result<PredictResponse, LlmError>>) -> Self {
        ScriptedPredictor {
            script: Mutex::new(script.into()),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl Predictor for ScriptedPredictor {
    fn call(&self, _request: &PredictRequest) -> Result<PredictResponse, LlmError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.script
            .lock()
            .expect("script lock")
            .pop_front()
            .unwrap_or_else(|| Err(LlmError::Transport("script exhausted".into())))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
    /// Upper bound on the summed backoff waits for one request.
    pub ceiling: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 3,
            base_delay: Duration::from_millis(200),
            max_delay: Duration::from_secs(5),
            ceiling: Duration::from_secs(15),
        }
    }
}

impl RetryPolicy {
    /// Backoff before retry `attempt` (0-based): `base * 2^attempt`, capped.
    pub fn delay(&self, attempt: u32) -> Duration {
        let factor = 2u32.saturating_pow(attempt);
        self.base_delay.saturating_mul(factor).min(self.max_delay)
    }

    /// The waits actually taken when every attempt fails.
    pub fn schedule(&self) -> Vec<Duration> {
        let mut total = Duration::ZERO;
        let mut out = Vec::new();
        for a in 0..self.max_retries {
            let d = self.delay(a);
            if total + d > self.ceiling {
                break;
            }
            total += d;
            out.push(d);
        }
        out
    }
}

/// Match a returned label against the task's tokens. Strict mode requires the
/// whole (trimmed) label to be a token; lenient mode takes the earliest token
/// found anywhere in the text.
pub fn parse_label(task: Task, label: &str, lenient: bool) -> Result<usize, LlmError> {
    let t = label.trim();
    if let Some(i) = task.index_of_token(t) {
        return Ok(i);
    }
    if lenient {
        let hit = task
            .tokens()
            .iter()
            .enumerate()
            .filter_map(|(i, tok)| t.find(tok).map(|pos| (pos, i)))
            .min();
        if let Some((_, i)) = hit {
            return Ok(i);
        }
    }
    Err(LlmError::InvalidLabel(label.to_string()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub case_id: String,
    pub label: usize,
    pub token: String,
    pub retries: u32,
    pub raw: serde_json::Value,
}

type Sleeper = Box<dyn Fn(Duration) + Send + Sync>;

pub struct LlmClient<P> {
    predictor: P,
    pub retry: RetryPolicy,
    pub lenient: bool,
    sleeper: Sleeper,
}

impl<P: Predictor> LlmClient<P> {
    pub fn new(predictor: P, retry: RetryPolicy) -> Self {
        LlmClient {
            predictor,
            retry,
            lenient: false,
            sleeper: Box::new(std::thread::sleep),
        }
    }

    /// Replace the backoff sleep (tests record waits instead of sleeping).
    pub fn with_sleeper(mut self, sleeper: impl Fn(Duration) + Send + Sync + 'static) -> Self {
        self.sleeper = Box::new(sleeper);
        self
    }

    pub fn predictor(&self) -> &P {
        &self.predictor
    }

    pub fn predict_one(&self, request: &PredictRequest) -> Result<Prediction, LlmError> {
        let schedule = self.retry.schedule();
        let mut retries = 0u32;
        loop {
            match self.predictor.call(request) {
                Ok(resp) => {
                    let label = parse_label(request.task, &resp.label, self.lenient)?;
                    return Ok(Prediction {
                        case_id: request.case_id.clone(),
                        label,
                        token: request.task.tokens()[label].to_string(),
                        retries,
                        raw: resp.raw,
                    });
                }
                Err(e) if e.is_retryable() && (retries as usize) < schedule.len() => {
                    log::debug!("case {}: {e}; retrying", request.case_id);
                    (self.sleeper)(schedule[retries as usize]);
                    retries += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }

    /// Run requests with at most `max_in_flight` outstanding. Results come
    /// back in input order; failures are reported per case.
    pub fn predict_batch(&self, requests: &[PredictRequest], max_in_flight: usize) -> BatchResult {
        let workers = max_in_flight.max(1).min(requests.len().max(1));
        let next = AtomicUsize::new(0);
        let slots: Mutex<Vec<Option<Result<Prediction, LlmError>>>> = Mutex::new(vec![None; requests.len()]);
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(req) = requests.get(i) else { break };
                    let out = self.predict_one(req);
                    slots.lock().expect("result lock")[i] = Some(out);
                });
            }
        });
        let mut result = BatchResult::default();
        for (req, slot) in requests.iter().zip(slots.into_inner().expect("result lock")) {
            match slot.expect("every request ran") {
                Ok(p) => {
                    result.retries += p.retries as usize;
                    result.labels.push(Some(p.label));
                }
                Err(e) => {
                    result.labels.push(None);
                    result.errors.push(CaseError {
                        case_id: req.case_id.clone(),
                        error: e.to_string(),
                    });
                }
            }
        }
        result
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseError {
    pub case_id: String,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchResult {
    /// One entry per request, in input order; `None` where the case failed.
    pub labels: Vec<Option<usize>>,
    pub errors: Vec<CaseError>,
    pub retries: usize,
}

/// One line of a predictions file: a label token, or the error that
/// prevented one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub case_id: String,
    pub task: Task,
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl BatchResult {
    pub fn records(&self, requests: &[PredictRequest]) -> Vec<PredictionRecord> {
        let mut errors = self.errors.iter().map(|e| (e.case_id.as_str(), e.error.as_str())).collect::<HashMap<_, _>>();
        requests
            .iter()
            .zip(&self.labels)
            .map(|(r, l)| PredictionRecord {
                case_id: r.case_id.clone(),
                task: r.task,
                label: l.map(|i| r.task.tokens()[i].to_string()),
                error: if l.is_none() { errors.remove(r.case_id.as_str()).map(str::to_string) } else { None },
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    fn req(case_id: &str, task: Task) -> PredictRequest {
        PredictRequest {
            task,
            system: "s".into(),
            user: "u".into(),
            case_id: case_id.into(),
        }
    }

    fn ok(label: &str) -> Result<PredictResponse, LlmError> {
        Ok(PredictResponse {
            label: label.into(),
            raw: serde_json::Value::Null,
        })
    }

    #[test]
    fn strict_and_lenient_parsing() {
        assert_eq!(parse_label(Task::Injury, "<TWO>", false), Ok(2));
        assert_eq!(parse_label(Task::Injury, " <TWO>\n", false), Ok(2));
        assert_eq!(
            parse_label(Task::Injury, "<MAYBE>", false),
            Err(LlmError::InvalidLabel("<MAYBE>".into()))
        );
        assert!(parse_label(Task::Injury, "The answer is: <ONE>", false).is_err());
        assert_eq!(parse_label(Task::Injury, "The answer is: <ONE>", true), Ok(1));
        assert_eq!(parse_label(Task::Severity, "<FATAL> or <MINOR INJURY>", true), Ok(4));
    }

    #[test]
    fn mock_answers_from_transcript() {
        let client = LlmClient::new(MockPredictor::new([("a".to_string(), "<TWO>".to_string())]), RetryPolicy::default());
        assert_eq!(client.predict_one(&req("a", Task::Injury)).unwrap().label, 2);
        assert_eq!(client.predict_one(&req("b", Task::Injury)), Err(LlmError::NotFound("b".into())));
    }

    #[test]
    fn flaky_then_success_records_retries() {
        let script = vec![Err(LlmError::Transport("reset".into())), Err(LlmError::Timeout), ok("<ONE>")];
        let waits = Arc::new(Mutex::new(Vec::new()));
        let w = waits.clone();
        let client = LlmClient::new(ScriptedPredictor::new(script), RetryPolicy::default())
            .with_sleeper(move |d| w.lock().unwrap().push(d));
        let p = client.predict_one(&req("x", Task::Injury)).unwrap();
        assert_eq!((p.label, p.retries), (1, 2));
        assert_eq!(client.predictor().calls(), 3);
        assert_eq!(*waits.lock().unwrap(), [Duration::from_millis(200), Duration::from_millis(400)]);
    }

    #[test]
    fn invalid_label_is_not_retried() {
        let client = LlmClient::new(ScriptedPredictor::new(vec![ok("<MAYBE>"), ok("<ONE>")]), RetryPolicy::default())
            .with_sleeper(|_| {});
        assert!(matches!(client.predict_one(&req("x", Task::Injury)), Err(LlmError::InvalidLabel(_))));
        assert_eq!(client.predictor().calls(), 1);
    }

    #[test]
    fn retries_give_up_after_limit() {
        let script = (0..10).map(|_| Err(LlmError::Http { status: 503, body: String::new() })).collect();
        let client = LlmClient::new(ScriptedPredictor::new(script), RetryPolicy::default()).with_sleeper(|_| {});
        assert!(matches!(client.predict_one(&req("x", Task::Injury)), Err(LlmError::Http { status: 503, .. })));
        assert_eq!(client.predictor().calls(), 4);
    }

    #[test]
    fn backoff_respects_ceiling() {
        let p = RetryPolicy {
            max_retries: 10,
            base_delay: Duration::from_millis(100),
            max_delay: Duration::from_secs(1),
            ceiling: Duration::from_millis(2000),
        };
        let s = p.schedule();
        assert!(s.iter().sum::<Duration>() <= p.ceiling);
        assert_eq!(s[..4], [100, 200, 400, 800].map(Duration::from_millis));
    }

    #[test]
    fn batch_preserves_order_and_isolates_failures() {
        let mut entries: Vec<(String, String)> = (0..10).map(|i| (format!("c{i}"), "<ZERO>".to_string())).collect();
        entries[3].1 = "<ONE>".into();
        entries[7].1 = "<POISON>".into();
        let client = LlmClient::new(MockPredictor::new(entries), RetryPolicy::default());
        let reqs: Vec<PredictRequest> = (0..10).map(|i| req(&format!("c{i}"), Task::Injury)).collect();
        let r = client.predict_batch(&reqs, 3);
        assert_eq!(r.labels.len(), 10);
        assert_eq!(r.labels[3], Some(1));
        assert_eq!(r.labels[7], None);
        assert_eq!(r.errors.len(), 1);
        assert_eq!(r.errors[0].case_id, "c7");
        assert_eq!(client.predict_batch(&reqs, 1), r);
    }
}
