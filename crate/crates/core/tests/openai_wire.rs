//! The OpenAI-compatible backend against a scripted local HTTP server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use agescope_core::corpus::CorpusItem;
use agescope_core::{
    build_request, encode_image, parse_reply, BackendConfig, ClassificationRequest, Gateway, GatewayError,
    OpenAiBackend, Outcome, Pricing, PromptTemplate, TokenUsage,
};
use image::{Rgb, RgbImage};
use serde_json::{json, Value};

#[derive(Debug, Clone)]
struct Recorded {
    request_line: String,
    headers: Vec<(String, String)>,
    body: Value,
}

impl Recorded {
    fn header(&self, name: &str) -> Option<&str> {
        self.headers
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }
}

type Script = Vec<(u16, Vec<(&'static str, &'static str)>, String)>;

struct Scripted {
    url: String,
    seen: Arc<Mutex<Vec<Recorded>>>,
}

/// Serves the given (status, extra headers, body) responses in order, one per
/// connection.
fn serve(responses: Script) -> Scripted {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    thread::spawn(move || {
        for (status, headers, body) in responses {
            let Ok((stream, _)) = listener.accept() else { return };
            let recorded = read_request(&stream);
            log.lock().unwrap().push(recorded);
            respond(stream, status, &headers, &body);
        }
    });
    Scripted { url, seen }
}

fn read_request(stream: &TcpStream) -> Recorded {
    let mut reader = BufReader::new(stream);
    let mut request_line = String::new();
    reader.read_line(&mut request_line).unwrap();
    let mut headers = Vec::new();
    loop {
        let mut line = String::new();
        reader.read_line(&mut line).unwrap();
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        let (k, v) = line.split_once(':').unwrap();
        headers.push((k.trim().to_string(), v.trim().to_string()));
    }
    let length: usize = headers
        .iter()
        .find(|(k, _)| k.eq_ignore_ascii_case("content-length"))
        .map_or(0, |(_, v)| v.parse().unwrap());
    let mut body = vec![0; length];
    reader.read_exact(&mut body).unwrap();
    Recorded {
        request_line: request_line.trim_end().to_string(),
        headers,
        body: serde_json::from_slice(&body).unwrap_or(Value::Null),
    }
}

fn respond(mut stream: TcpStream, status: u16, headers: &[(&str, &str)], body: &str) {
    let mut head = format!(
        "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n",
        body.len()
    );
    for (k, v) in headers {
        head.push_str(&format!("{k}: {v}\r\n"));
    }
    head.push_str("\r\n");
    stream.write_all(head.as_bytes()).unwrap();
    stream.write_all(body.as_bytes()).unwrap();
}

fn completion(content: &str) -> String {
    json!({
        "id": "chatcmpl-1",
        "choices": [{"index": 0, "message": {"role": "assistant", "content": content}, "finish_reason": "stop"}],
        "usage": {"prompt_tokens": 1000, "completion_tokens": 50, "total_tokens": 1050}
    })
    .to_string()
}

fn request(dir: &tempfile::TempDir) -> ClassificationRequest {
    let path = dir.path().join("facade.png");
    RgbImage::from_pixel(6, 4, Rgb([120, 80, 40])).save(&path).unwrap();
    let item = CorpusItem {
        id: 55,
        image_path: path,
        ground_truth: "1940-1959".parse().unwrap(),
        location_hint: "London".into(),
    };
    let image = encode_image(&item, Some(2048)).unwrap();
    build_request(&item, image, &PromptTemplate::default()).unwrap()
}

fn config(url: &str) -> BackendConfig {
    BackendConfig {
        endpoint_url: url.into(),
        model_name: "vision-test".into(),
        retry_base_delay: Duration::from_millis(5),
        request_timeout: Duration::from_secs(10),
        pricing: Pricing {
            input_per_1k: 0.01,
            output_per_1k: 0.03,
        },
        ..BackendConfig::default()
    }
}

fn gateway(url: &str) -> Gateway {
    let config = config(url);
    let backend = OpenAiBackend::new(&config, "sk-test").unwrap();
    Gateway::new(Arc::new(backend), config).unwrap()
}

#[test]
fn sends_text_then_image_with_bearer_auth() {
    let server = serve(vec![(
        200,
        vec![],
        completion("{\"age\": \"1940-1959\", \"reason\": \"post-war\"}"),
    )]);
    let dir = tempfile::tempdir().unwrap();
    let req = request(&dir);
    let reply = gateway(&server.url).classify(&req).unwrap();

    assert_eq!(
        reply.token_usage,
        Some(TokenUsage {
            input: 1000,
            output: 50
        })
    );
    assert!((reply.cost_estimate - 0.0115).abs() < 1e-12);
    assert_eq!(reply.backend_id, "openai-compatible");
    assert_eq!(parse_reply(&reply).outcome(), Outcome::Valid);

    let seen = server.seen.lock().unwrap();
    let r = &seen[0];
    assert_eq!(r.request_line, "POST /v1/chat/completions HTTP/1.1");
    assert_eq!(r.header("authorization"), Some("Bearer sk-test"));
    assert_eq!(r.body["model"], "vision-test");
    assert_eq!(r.body["temperature"], 0.0);
    assert_eq!(r.body["max_tokens"], 500);
    let messages = r.body["messages"].as_array().unwrap();
    assert_eq!(messages.len(), 1);
    assert_eq!(messages[0]["role"], "user");
    let parts = messages[0]["content"].as_array().unwrap();
    assert_eq!(parts[0]["type"], "text");
    assert_eq!(parts[0]["text"], req.instruction_text.as_str());
    assert_eq!(parts[1]["type"], "image_url");
    let url = parts[1]["image_url"]["url"].as_str().unwrap();
    assert!(url.starts_with("data:image/png;base64,"));
    assert_eq!(url, req.image.data_url());
}

#[test]
fn retries_rate_limits_then_succeeds() {
    let server = serve(vec![
        (429, vec![("Retry-After", "0")], "{\"error\": \"slow down\"}".into()),
        (503, vec![], "upstream".into()),
        (200, vec![], completion("{\"age\": \"<1700\"}")),
    ]);
    let dir = tempfile::tempdir().unwrap();
    let gw = gateway(&server.url);
    let reply = gw.classify(&request(&dir)).unwrap();
    assert_eq!(reply.text, "{\"age\": \"<1700\"}");
    assert_eq!(gw.dispatch_count(), 3);
    assert_eq!(server.seen.lock().unwrap().len(), 3);
}

#[test]
fn auth_failures_are_not_retried() {
    let server = serve(vec![
        (401, vec![], "{\"error\": \"bad key\"}".into()),
        (200, vec![], completion("unused")),
    ]);
    let dir = tempfile::tempdir().unwrap();
    let gw = gateway(&server.url);
    let err = gw.classify(&request(&dir)).unwrap_err();
    assert!(matches!(err, GatewayError::Auth(_)), "{err:?}");
    assert_eq!(gw.dispatch_count(), 1);
}

#[test]
fn client_errors_surface_status_and_body() {
    let server = serve(vec![(400, vec![], "{\"error\": \"image too large\"}".into())]);
    let dir = tempfile::tempdir().unwrap();
    let err = gateway(&server.url).classify(&request(&dir)).unwrap_err();
    match err {
        GatewayError::Http { status, body } => {
            assert_eq!(status, 400);
            assert!(body.contains("image too large"));
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn content_filter_is_a_refusal() {
    let body = json!({"choices": [{"message": {"content": null}, "finish_reason": "content_filter"}]}).to_string();
    let server = serve(vec![(200, vec![], body)]);
    let dir = tempfile::tempdir().unwrap();
    match gateway(&server.url).classify(&request(&dir)) {
        Err(GatewayError::BackendRefusal(reply)) => {
            assert!(reply.refused);
            assert_eq!(parse_reply(&reply).outcome(), Outcome::Refused);
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn exhausted_retries_report_the_last_error() {
    let server = serve(vec![
        (500, vec![], "a".into()),
        (500, vec![], "b".into()),
        (500, vec![], "c".into()),
        (500, vec![], "d".into()),
    ]);
    let dir = tempfile::tempdir().unwrap();
    let gw = gateway(&server.url);
    let err = gw.classify(&request(&dir)).unwrap_err();
    assert!(
        matches!(&err, GatewayError::Transport(m) if m.contains("500")),
        "{err:?}"
    );
    assert_eq!(gw.dispatch_count(), 4);
}
