use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{complete, CompletionRequest, CompletionResponse, LlmError, LlmProvider};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    #[serde(with = "ms")]
    pub initial_backoff: Duration,
    pub multiplier: f64,
    #[serde(with = "ms")]
    pub max_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            initial_backoff: Duration::from_millis(500),
            multiplier: 2.0,
            max_backoff: Duration::from_secs(20),
        }
    }
}

impl RetryPolicy {
    /// No sleeping between attempts.
    pub fn immediate(max_attempts: u32) -> Self {
        Self {
            max_attempts,
            initial_backoff: Duration::ZERO,
            multiplier: 1.0,
            max_backoff: Duration::ZERO,
        }
    }

    /// Delay before attempt `n + 1`, given `n` failed attempts so far.
    pub fn backoff(&self, failed: u32) -> Duration {
        let factor = self.multiplier.max(1.0).powi(failed.saturating_sub(1) as i32);
        self.initial_backoff.mul_f64(factor).min(self.max_backoff)
    }
}

mod ms {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Retried {
    pub response: CompletionResponse,
    pub attempts: u32,
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{error} (after {attempts} attempt(s))")]
pub struct RetryError {
    pub error: LlmError,
    pub attempts: u32,
}

/// Returns the first successful completion. Only `Retryable` errors trigger
/// another attempt; the last error surfaces once `max_attempts` is spent.
pub fn complete_with_retry(
    provider: &dyn LlmProvider,
    req: &CompletionRequest,
    policy: &RetryPolicy,
) -> Result<Retried, RetryError> {
    if policy.max_attempts == 0 {
        return Err(RetryError {
            error: LlmError::Fatal("max_attempts must be at least 1".into()),
            attempts: 0,
        });
    }
    let mut attempts = 0;
    loop {
        attempts += 1;
        match complete(provider, req) {
            Ok(response) => return Ok(Retried { response, attempts }),
            Err(error) if error.is_retryable() && attempts < policy.max_attempts => {
                log::warn!(
                    "{} attempt {attempts}/{} failed: {error}",
                    provider.id(),
                    policy.max_attempts
                );
                let wait = policy.backoff(attempts);
                if !wait.is_zero() {
                    std::thread::sleep(wait);
                }
            }
            Err(error) => return Err(RetryError { error, attempts }),
        }
    }
}
