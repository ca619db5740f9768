//! Chat-completions client. The credential is read from the environment
//! variable named in the configuration and never written anywhere.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{BackendKind, GateBackend, GateError, GateRequest};

/// The `"gate"` section of the configuration file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GateConfig {
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub timeout_secs: u64,
    pub retries: u32,
}

impl Default for GateConfig {
    fn default() -> Self {
        Self {
            base_url: "https://api.openai.com/v1".into(),
            model: "gpt-4o".into(),
            api_key_env: "NETMOE_LLM_API_KEY".into(),
            timeout_secs: 30,
            retries: 2,
        }
    }
}

impl GateConfig {
    /// Reads the `"gate"` section of a configuration document; defaults
    /// when absent.
    pub fn from_json_str(text: &str) -> Result<Self, GateError> {
        let v: Value =
            serde_json::from_str(text).map_err(|e| GateError::Malformed(e.to_string()))?;
        match v.get("gate") {
            Some(g) => serde_json::from_value(g.clone())
                .map_err(|e| GateError::Malformed(format!("gate config: {e}"))),
            None => Ok(Self::default()),
        }
    }
}

pub struct HttpBackend {
    config: GateConfig,
    api_key: String,
    agent: ureq::Agent,
}

impl std::fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpBackend")
            .field("config", &self.config)
            .finish_non_exhaustive()
    }
}

impl HttpBackend {
    /// Fails with [`GateError::MissingCredential`] when the configured
    /// variable is unset or empty.
    pub fn from_env(config: GateConfig) -> Result<Self, GateError> {
        let key = std::env::var(&config.api_key_env)
            .ok()
            .filter(|k| !k.trim().is_empty())
            .ok_or_else(|| GateError::MissingCredential(config.api_key_env.clone()))?;
        Ok(Self::with_key(config, key))
    }

    pub fn with_key(config: GateConfig, api_key: String) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            config,
            api_key,
            agent,
        }
    }

    fn body(&self, request: &GateRequest) -> Value {
        json!({
            "model": self.config.model,
            "temperature": 0,
            "messages": [
                {"role": "system", "content": request.system_prompt},
                {"role": "user", "content": request.query},
            ],
            "tools": request.tools,
            "tool_choice": "required",
        })
    }

    fn attempt(&self, url: &str, body: &Value) -> Result<String, (bool, String)> {
        let mut resp = self
            .agent
            .post(url)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(body)
            .map_err(|e| (true, e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| (true, e.to_string()))?;
        match status {
            200..=299 => Ok(text),
            429 | 500..=599 => Err((true, format!("HTTP {status}"))),
            _ => Err((
                false,
                format!(
                    "HTTP {status}: {}",
                    text.chars().take(200).collect::<String>()
                ),
            )),
        }
    }
}

impl GateBackend for HttpBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Http
    }

    fn respond(&self, request: &GateRequest) -> Result<String, GateError> {
        let url = format!(
            "{}/chat/completions",
            self.config.base_url.trim_end_matches('/')
        );
        let body = self.body(request);
        let mut last = String::new();
        for _ in 0..=self.config.retries {
            match self.attempt(&url, &body) {
                Ok(text) => return Ok(text),
                Err((retry, msg)) => {
                    last = msg;
                    if !retry {
                        break;
                    }
                }
            }
        }
        Err(GateError::Unavailable(last))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_config_names_only_the_variable() {
        let cfg = GateConfig::from_json_str(crate::config::DEFAULT_CONFIG_JSON).unwrap();
        assert_eq!(cfg.api_key_env, "NETMOE_LLM_API_KEY");
        assert_eq!(cfg.timeout_secs, 30);
        assert_eq!(cfg.retries, 2);
    }

    #[test]
    fn missing_credential() {
        let cfg = GateConfig {
            api_key_env: "NETMOE_TEST_SURELY_UNSET_VARIABLE".into(),
            ..GateConfig::default()
        };
        assert!(matches!(
            HttpBackend::from_env(cfg),
            Err(GateError::MissingCredential(_))
        ));
    }

    #[test]
    fn debug_output_hides_key() {
        let b = HttpBackend::with_key(GateConfig::default(), "sk-secret".into());
        assert!(!format!("{b:?}").contains("sk-secret"));
    }
}
