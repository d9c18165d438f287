use std::time::{Duration, Instant};

use serde_json::{json, Value};
use ureq::Agent;

use super::{Backend, BackendConfig, BackendError, BackendKind, CallKey, CompletionRecord, PromptBundle};

/// Environment variable holding the bearer token for the live endpoint.
pub const API_KEY_ENV: &str = "TABLETOP_API_KEY";

/// Chat-completions client for an OpenAI-compatible endpoint.
pub struct LiveBackend {
    agent: Agent,
    endpoint: String,
    model: String,
    temperature: f64,
    max_retries: u32,
    api_key: Option<String>,
    backoff: Duration,
}

enum Attempt {
    Retry(String),
    Fatal(String),
}

impl LiveBackend {
    pub fn from_config(cfg: &BackendConfig) -> Result<Self, BackendError> {
        cfg.validate()?;
        let agent: Agent = Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(cfg.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(LiveBackend {
            agent,
            endpoint: cfg.endpoint.clone().unwrap_or_default(),
            model: cfg.model_name.clone().unwrap_or_default(),
            temperature: cfg.temperature,
            max_retries: cfg.max_retries,
            api_key: std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
            backoff: Duration::from_millis(500),
        })
    }

    pub fn with_backoff(mut self, base: Duration) -> Self {
        self.backoff = base;
        self
    }

    pub fn with_api_key(mut self, key: Option<String>) -> Self {
        self.api_key = key;
        self
    }

    fn request_body(&self, prompt: &PromptBundle) -> Value {
        json!({
            "model": self.model,
            "temperature": self.temperature,
            "messages": [
                {"role": "system", "content": prompt.system_message()},
                {"role": "user", "content": prompt.user_text},
            ],
        })
    }

    fn attempt(&self, body: &Value) -> Result<String, Attempt> {
        let mut req = self.agent.post(&self.endpoint).header("Content-Type", "application/json");
        if let Some(k) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {k}"));
        }
        let mut resp = req.send_json(body).map_err(|e| Attempt::Retry(e.to_string()))?;
        let status = resp.status().as_u16();
        if status == 429 || status >= 500 {
            return Err(Attempt::Retry(format!("HTTP {status}")));
        }
        if status >= 400 {
            let text = resp.body_mut().read_to_string().unwrap_or_default();
            return Err(Attempt::Fatal(format!("HTTP {status}: {}", text.chars().take(200).collect::<String>())));
        }
        let v: Value = resp.body_mut().read_json().map_err(|e| Attempt::Retry(format!("bad response body: {e}")))?;
        v.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| Attempt::Fatal("response has no choices[0].message.content".into()))
    }
}

impl Backend for LiveBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Live
    }

    fn complete(&mut self, _key: &CallKey, prompt: &PromptBundle) -> Result<CompletionRecord, BackendError> {
        let body = self.request_body(prompt);
        let start = Instant::now();
        let attempts = self.max_retries + 1;
        let mut last = String::new();
        for i in 0..attempts {
            if i > 0 {
                std::thread::sleep(self.backoff * 2u32.pow(i - 1));
            }
            match self.attempt(&body) {
                Ok(text) => {
                    return Ok(CompletionRecord {
                        prompt_digest: prompt.digest(),
                        response_text: text,
                        latency_secs: start.elapsed().as_secs_f64(),
                        backend: BackendKind::Live,
                    })
                }
                Err(Attempt::Retry(m)) => last = m,
                Err(Attempt::Fatal(m)) => return Err(BackendError::Transport { attempts: i + 1, message: m }),
            }
        }
        Err(BackendError::Transport { attempts, message: last })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::mpsc;
    use std::thread;

    /// Serves the given (status, body) pairs one connection each and sends back
    /// each request body.
    fn serve(responses: Vec<(u16, String)>) -> (String, mpsc::Receiver<String>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for (status, body) in responses {
                let (stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0usize;
                let mut auth = String::new();
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    let l = line.trim_end();
                    if l.is_empty() {
                        break;
                    }
                    let lower = l.to_ascii_lowercase();
                    if let Some(v) = lower.strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                    if lower.starts_with("authorization:") {
                        auth = l.to_string();
                    }
                }
                let mut buf = vec![0u8; len];
                reader.read_exact(&mut buf).unwrap();
                tx.send(format!("{auth}\n{}", String::from_utf8(buf).unwrap())).unwrap();
                let mut s = stream;
                write!(
                    s,
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                )
                .unwrap();
            }
        });
        (format!("http://{addr}/v1/chat/completions"), rx)
    }

    fn backend(url: &str, retries: u32) -> LiveBackend {
        let cfg = BackendConfig {
            kind: BackendKind::Live,
            endpoint: Some(url.into()),
            model_name: Some("test-model".into()),
            timeout_secs: 5.0,
            max_retries: retries,
            ..BackendConfig::default()
        };
        LiveBackend::from_config(&cfg).unwrap().with_backoff(Duration::from_millis(1)).with_api_key(Some("k1".into()))
    }

    fn key() -> CallKey {
        CallKey { task: "A".into(), loop_index: 0, role: "planner".into() }
    }

    #[test]
    fn retries_then_succeeds() {
        let ok = json!({"choices": [{"message": {"role": "assistant", "content": "```\npass\n```"}}]}).to_string();
        let (url, rx) = serve(vec![(503, "{}".into()), (200, ok)]);
        let mut b = backend(&url, 2);
        let p = PromptBundle::simple("sys text", "user text");
        let rec = b.complete(&key(), &p).unwrap();
        assert_eq!(rec.response_text, "```\npass\n```");
        assert_eq!(rec.backend, BackendKind::Live);
        assert_eq!(rec.prompt_digest, p.digest());
        let first = rx.recv().unwrap();
        assert!(first.contains("Bearer k1"));
        let body: Value = serde_json::from_str(first.split_once('\n').unwrap().1).unwrap();
        assert_eq!(body["model"], "test-model");
        assert_eq!(body["messages"][0]["content"], "sys text");
        assert_eq!(body["messages"][1]["content"], "user text");
    }

    #[test]
    fn gives_up_after_retries() {
        let (url, _rx) = serve(vec![(500, "{}".into()), (429, "{}".into())]);
        let mut b = backend(&url, 1);
        let err = b.complete(&key(), &PromptBundle::simple("a", "b")).unwrap_err();
        assert!(matches!(err, BackendError::Transport { attempts: 2, .. }));
    }

    #[test]
    fn client_error_is_not_retried() {
        let (url, _rx) = serve(vec![(401, "{\"error\":\"nope\"}".into())]);
        let mut b = backend(&url, 3);
        let err = b.complete(&key(), &PromptBundle::simple("a", "b")).unwrap_err();
        assert!(matches!(err, BackendError::Transport { attempts: 1, ref message } if message.contains("401")));
    }

    #[test]
    fn unreachable_endpoint() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/x", listener.local_addr().unwrap());
        drop(listener);
        let mut b = backend(&url, 1);
        assert!(matches!(b.complete(&key(), &PromptBundle::simple("a", "b")), Err(BackendError::Transport { attempts: 2, .. })));
    }
}
