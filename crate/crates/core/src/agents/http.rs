//! Adapter for OpenAI-compatible text completion endpoints
//! (`POST {base_url}/completions`).

use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use super::{CompletionRequest, FinishReason, Transport, TransportError, TransportReply};

#[derive(Debug, Clone)]
pub struct HttpTransport {
    base_url: String,
    model: String,
    token: Option<String>,
    agent: ureq::Agent,
}

#[derive(Deserialize)]
struct CompletionsResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    text: String,
    #[serde(default)]
    finish_reason: Option<String>,
}

impl HttpTransport {
    /// `token_env` names the environment variable holding the bearer token.
    /// Tokens are never read from config files.
    pub fn new(base_url: &str, model: &str, token_env: Option<&str>, timeout: Duration) -> Self {
        let token = token_env.and_then(|name| std::env::var(name).ok());
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        Self {
            base_url: base_url.trim_end_matches('/').to_string(),
            model: model.to_string(),
            token,
            agent,
        }
    }
}

impl Transport for HttpTransport {
    fn send(&self, request: &CompletionRequest) -> Result<TransportReply, TransportError> {
        let mut body = json!({
            "model": self.model,
            "prompt": request.prompt,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        if let Some(seed) = request.seed {
            body["seed"] = json!(seed);
        }
        if let Some(stop) = &request.stop {
            body["stop"] = json!(stop);
        }
        let mut call = self
            .agent
            .post(format!("{}/completions", self.base_url))
            .header("Content-Type", "application/json");
        if let Some(token) = &self.token {
            call = call.header("Authorization", format!("Bearer {token}"));
        }
        let mut response = call
            .send_json(&body)
            .map_err(|e| TransportError::new(format!("request failed: {e}")))?;
        let parsed: CompletionsResponse = response
            .body_mut()
            .read_json()
            .map_err(|e| TransportError::new(format!("bad response body: {e}")))?;
        let choice = parsed
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| TransportError::new("response has no choices"))?;
        let finish_reason = match choice.finish_reason.as_deref() {
            Some("length") => FinishReason::Length,
            _ => FinishReason::Stop,
        };
        Ok(TransportReply {
            text: choice.text,
            finish_reason,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::AgentRole;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;

    /// Serves one canned HTTP response and returns the raw request body.
    fn serve_once(status: &str, body: &str) -> (String, std::thread::JoinHandle<(String, String)>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let response = format!(
            "HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
            body.len()
        );
        let handle = std::thread::spawn(move || {
            let (mut stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut content_length = 0usize;
            let mut headers = String::new();
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line == "\r\n" || line.is_empty() {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    content_length = v.trim().parse().unwrap();
                }
                headers.push_str(&line);
            }
            let mut body = vec![0u8; content_length];
            reader.read_exact(&mut body).unwrap();
            stream.write_all(response.as_bytes()).unwrap();
            (headers, String::from_utf8(body).unwrap())
        });
        (format!("http://{addr}/v1"), handle)
    }

    #[test]
    fn posts_completion_and_parses_choice() {
        let (url, server) = serve_once(
            "200 OK",
            r#"{"choices":[{"text":"42","finish_reason":"length"}]}"#,
        );
        std::env::set_var("SEQFORGE_TEST_TOKEN", "sekrit");
        let t = HttpTransport::new(&url, "m1", Some("SEQFORGE_TEST_TOKEN"), Duration::from_secs(5));
        let req = CompletionRequest::new(AgentRole::Guiding, "hello")
            .with_seed(9)
            .with_temperature(0.25);
        let reply = t.send(&req).unwrap();
        assert_eq!(reply.text, "42");
        assert_eq!(reply.finish_reason, FinishReason::Length);
        let (headers, body) = server.join().unwrap();
        assert!(headers.starts_with("POST /v1/completions"), "{headers}");
        assert!(headers.to_lowercase().contains("authorization: bearer sekrit"));
        let body: serde_json::Value = serde_json::from_str(&body).unwrap_or_else(|e| panic!("{e}: {body:?}"));
        assert_eq!(body["model"], "m1");
        assert_eq!(body["prompt"], "hello");
        assert_eq!(body["seed"], 9);
    }

    #[test]
    fn server_error_is_transport_failure() {
        let (url, server) = serve_once("500 Internal Server Error", "{}");
        let t = HttpTransport::new(&url, "m1", None, Duration::from_secs(5));
        assert!(t.send(&CompletionRequest::new(AgentRole::Working, "x")).is_err());
        server.join().unwrap();
    }
}
