use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use crashkit::llm::{HttpPredictor, LlmClient, LlmError, PredictRequest, Predictor, RetryPolicy};
use crashkit::model::{CrashRecord, Task};
use crashkit::textualize::{build_prompt, TemplateSet};
use crashkit::FeatureDictionary;

type Handler = Box<dyn Fn(usize, &serde_json::Value) -> (u16, String, Duration) + Send + Sync>;

struct Server {
    url: String,
    bodies: Arc<Mutex<Vec<Vec<u8>>>>,
    paths: Arc<Mutex<Vec<String>>>,
}

/// Local server; `handler(call_index, body)` returns status, body and delay.
fn serve(handler: Handler) -> Server {
    let server = tiny_http::Server::http("127.0.0.1:0").unwrap();
    let url = format!("http://{}", server.server_addr().to_ip().unwrap());
    let bodies = Arc::new(Mutex::new(Vec::new()));
    let paths = Arc::new(Mutex::new(Vec::new()));
    let (b, p) = (bodies.clone(), paths.clone());
    let calls = AtomicUsize::new(0);
    std::thread::spawn(move || {
        for mut req in server.incoming_requests() {
            let mut body = Vec::new();
            req.as_reader().read_to_end(&mut body).unwrap();
            p.lock().unwrap().push(format!("{} {}", req.method(), req.url()));
            b.lock().unwrap().push(body.clone());
            let value: serde_json::Value = serde_json::from_slice(&body).unwrap_or_default();
            let (status, text, delay) = handler(calls.fetch_add(1, Ordering::SeqCst), &value);
            std::thread::sleep(delay);
            let resp = tiny_http::Response::from_string(text).with_status_code(status);
            let _ = req.respond(resp);
        }
    });
    Server { url, bodies, paths }
}

fn reply(label: &str) -> String {
    serde_json::json!({ "label": label, "raw": format!("The answer is: {label}") }).to_string()
}

fn bundle_request() -> PredictRequest {
    let d = FeatureDictionary::default();
    let t = TemplateSet::bundled(&d).unwrap();
    let r: CrashRecord = serde_json::from_str(include_str!("fixtures/record.json")).unwrap();
    PredictRequest::from(&build_prompt(&r, Task::Severity, &t, &d).unwrap())
}

#[test]
fn request_bytes_match_prompt_fields() {
    let s = serve(Box::new(|_, _| (200, reply("<POSSIBLE INJURY>"), Duration::ZERO)));
    let p = HttpPredictor::new(&s.url, Duration::from_secs(5)).unwrap();
    let req = bundle_request();
    let client = LlmClient::new(p, RetryPolicy::default());
    let out = client.predict_one(&req).unwrap();
    assert_eq!(out.token, "<POSSIBLE INJURY>");
    assert_eq!(out.retries, 0);

    let bodies = s.bodies.lock().unwrap();
    assert_eq!(bodies.len(), 1);
    assert_eq!(bodies[0], req.body());
    assert_eq!(s.paths.lock().unwrap()[0], "POST /predict");
    let sent: serde_json::Value = serde_json::from_slice(&bodies[0]).unwrap();
    assert_eq!(sent["task"], "severity");
    assert_eq!(sent["case_id"], req.case_id.as_str());
    assert_eq!(sent["system"], req.system.as_str());
    assert_eq!(sent["user"], req.user.as_str());
}

#[test]
fn server_errors_are_retried() {
    let s = serve(Box::new(|i, _| {
        if i < 2 {
            (503, "busy".into(), Duration::ZERO)
        } else {
            (200, reply("<ONE>"), Duration::ZERO)
        }
    }));
    let p = HttpPredictor::new(&s.url, Duration::from_secs(5)).unwrap();
    let client = LlmClient::new(p, RetryPolicy::default()).with_sleeper(|_| {});
    let mut req = bundle_request();
    req.task = Task::Injury;
    let out = client.predict_one(&req).unwrap();
    assert_eq!((out.label, out.retries), (1, 2));
    // Retries resend the identical body.
    let bodies = s.bodies.lock().unwrap();
    assert!(bodies.iter().all(|b| *b == req.body()));
}

#[test]
fn client_errors_and_bad_labels_fail_fast() {
    let s = serve(Box::new(|_, _| (400, "bad".into(), Duration::ZERO)));
    let p = HttpPredictor::new(&s.url, Duration::from_secs(5)).unwrap();
    let client = LlmClient::new(p, RetryPolicy::default()).with_sleeper(|_| {});
    assert!(matches!(client.predict_one(&bundle_request()), Err(LlmError::Http { status: 400, .. })));
    assert_eq!(s.bodies.lock().unwrap().len(), 1);

    let s = serve(Box::new(|_, _| (200, reply("<SOMETHING>"), Duration::ZERO)));
    let p = HttpPredictor::new(&s.url, Duration::from_secs(5)).unwrap();
    let client = LlmClient::new(p, RetryPolicy::default()).with_sleeper(|_| {});
    assert_eq!(
        client.predict_one(&bundle_request()),
        Err(LlmError::InvalidLabel("<SOMETHING>".into()))
    );

    let s = serve(Box::new(|_, _| (200, "not json".into(), Duration::ZERO)));
    let p = HttpPredictor::new(&s.url, Duration::from_secs(5)).unwrap();
    assert!(matches!(p.call(&bundle_request()), Err(LlmError::Protocol(_))));
}

#[test]
fn slow_server_times_out() {
    let s = serve(Box::new(|_, _| (200, reply("<ONE>"), Duration::from_millis(800))));
    let p = HttpPredictor::new(&s.url, Duration::from_millis(100)).unwrap();
    assert_eq!(p.call(&bundle_request()), Err(LlmError::Timeout));
}

#[test]
fn unreachable_endpoint_is_transport_error() {
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let p = HttpPredictor::new(&format!("http://127.0.0.1:{port}"), Duration::from_secs(2)).unwrap();
    let err = p.call(&bundle_request()).unwrap_err();
    assert!(err.is_retryable(), "{err:?}");
}

#[test]
fn batch_over_http_keeps_order() {
    // Answer by case id so order mistakes would show.
    let s = serve(Box::new(|_, v| {
        let id = v["case_id"].as_str().unwrap_or("");
        let n: usize = id.trim_start_matches('c').parse().unwrap_or(0);
        let label = ["<ZERO>", "<ONE>", "<TWO>", "<THREE OR MORE>"][n % 4];
        let delay = Duration::from_millis(((n * 7) % 5) as u64 * 5);
        (200, reply(label), delay)
    }));
    let p = HttpPredictor::new(&s.url, Duration::from_secs(5)).unwrap();
    let client = LlmClient::new(p, RetryPolicy::default());
    let reqs: Vec<PredictRequest> = (0..24)
        .map(|i| PredictRequest {
            task: Task::Injury,
            system: "s".into(),
            user: "u".into(),
            case_id: format!("c{i}"),
        })
        .collect();
    let r = client.predict_batch(&reqs, 4);
    assert!(r.errors.is_empty());
    assert_eq!(r.labels, (0..24).map(|i| Some(i % 4)).collect::<Vec<_>>());
}
