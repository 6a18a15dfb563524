//! HTTP judge client.
//!
//! Every call is a JSON POST to the configured endpoint:
//!
//! | task     | request fields                                          | response        |
//! |----------|---------------------------------------------------------|-----------------|
//! | `view`   | `video_id`, `frame_index`                               | `{"view": ..}`  |
//! | `body`   | `video_id`, `frame_index`, `reference_view`, `reference_image` | `{"verdict": 0/1}` |
//! | `prompt` | `video_id`, `prompt`                                    | `{"verdict": 0/1}` |
//!
//! Transport errors, 429 and 5xx are retried with exponential backoff.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde_json::{json, Value};

use crate::error::{BenchError, Result};
use crate::judge::{Judge, JudgeError, VideoHandle};
use crate::view::{Reference, ViewLabel};

pub const URL_VAR: &str = "WA_JUDGE_URL";
pub const TOKEN_VAR: &str = "WA_JUDGE_TOKEN";

#[derive(Clone, Debug, PartialEq)]
pub struct RemoteJudgeConfig {
    pub url: String,
    pub token: Option<String>,
    pub timeout: Duration,
    /// Attempts after the first.
    pub retries: u32,
    /// Delay before the first retry; doubles on each further retry.
    pub backoff: Duration,
    /// Upper bound on concurrent requests from this client.
    pub max_in_flight: usize,
}

impl RemoteJudgeConfig {
    pub fn new(url: impl Into<String>) -> Self {
        RemoteJudgeConfig {
            url: url.into(),
            token: None,
            timeout: Duration::from_secs(30),
            retries: 3,
            backoff: Duration::from_millis(250),
            max_in_flight: 4,
        }
    }

    /// None when no endpoint is configured.
    pub fn from_env() -> Option<Self> {
        let url = std::env::var(URL_VAR).ok().filter(|u| !u.is_empty())?;
        let mut cfg = Self::new(url);
        cfg.token = std::env::var(TOKEN_VAR).ok().filter(|t| !t.is_empty());
        Some(cfg)
    }
}

struct Semaphore {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore {
    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().expect("semaphore poisoned");
        while *free == 0 {
            free = self.cv.wait(free).expect("semaphore poisoned");
        }
        *free -= 1;
        Permit(self)
    }
}

struct Permit<'a>(&'a Semaphore);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("semaphore poisoned") += 1;
        self.0.cv.notify_one();
    }
}

pub struct RemoteJudge {
    cfg: RemoteJudgeConfig,
    agent: ureq::Agent,
    slots: Semaphore,
}

impl RemoteJudge {
    pub fn new(cfg: RemoteJudgeConfig) -> Result<Self> {
        if cfg.max_in_flight == 0 {
            return Err(BenchError::Config(
                "max_in_flight must be at least 1".into(),
            ));
        }
        if !(cfg.url.starts_with("http://") || cfg.url.starts_with("https://")) {
            return Err(BenchError::Config(format!(
                "judge url must be http(s), got {:?}",
                cfg.url
            )));
        }
        let agent = ureq::AgentBuilder::new().timeout(cfg.timeout).build();
        let slots = Semaphore {
            free: Mutex::new(cfg.max_in_flight),
            cv: Condvar::new(),
        };
        Ok(RemoteJudge { cfg, agent, slots })
    }

    fn call(&self, body: Value) -> std::result::Result<Value, JudgeError> {
        let _permit = self.slots.acquire();
        let mut delay = self.cfg.backoff;
        let mut last = JudgeError::Transport("no attempt made".into());
        for attempt in 0..=self.cfg.retries {
            if attempt > 0 {
                std::thread::sleep(delay);
                delay *= 2;
            }
            let mut req = self.agent.post(&self.cfg.url);
            if let Some(token) = &self.cfg.token {
                req = req.set("Authorization", &format!("Bearer {token}"));
            }
            match req.send_json(body.clone()) {
                Ok(resp) => {
                    return resp
                        .into_json()
                        .map_err(|e| JudgeError::Protocol(e.to_string()))
                }
                Err(ureq::Error::Status(code, _)) if code == 429 || code >= 500 => {
                    last = JudgeError::Transport(format!("HTTP {code}"));
                }
                Err(ureq::Error::Status(code, _)) => {
                    return Err(JudgeError::Protocol(format!("HTTP {code}")))
                }
                Err(ureq::Error::Transport(t)) => last = JudgeError::Transport(t.to_string()),
            }
        }
        Err(last)
    }

    fn verdict(&self, body: Value) -> std::result::Result<bool, JudgeError> {
        match self.call(body)?.get("verdict").and_then(Value::as_u64) {
            Some(0) => Ok(false),
            Some(1) => Ok(true),
            other => Err(JudgeError::Protocol(format!(
                "expected verdict 0 or 1, got {other:?}"
            ))),
        }
    }
}

impl Judge for RemoteJudge {
    fn estimate_view(
        &self,
        video: &VideoHandle,
        frame: usize,
    ) -> std::result::Result<ViewLabel, JudgeError> {
        let resp =
            self.call(json!({"task": "view", "video_id": video.video_id, "frame_index": frame}))?;
        resp.get("view")
            .and_then(Value::as_str)
            .ok_or_else(|| JudgeError::Protocol("response has no view".into()))?
            .parse()
            .map_err(|e: BenchError| JudgeError::Protocol(e.to_string()))
    }

    fn body_verdict(
        &self,
        video: &VideoHandle,
        frame: usize,
        reference: &Reference,
    ) -> std::result::Result<bool, JudgeError> {
        self.verdict(json!({
            "task": "body",
            "video_id": video.video_id,
            "frame_index": frame,
            "reference_view": reference.view,
            "reference_image": reference.image,
        }))
    }

    fn prompt_verdict(&self, video: &VideoHandle) -> std::result::Result<bool, JudgeError> {
        self.verdict(json!({"task": "prompt", "video_id": video.video_id, "prompt": video.prompt}))
    }
}
