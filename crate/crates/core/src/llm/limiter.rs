use std::sync::{Condvar, Mutex};

use super::{CompletionRequest, CompletionResponse, LlmError, LlmProvider};

/// Default number of concurrent requests per provider.
pub const DEFAULT_IN_FLIGHT: usize = 4;

/// Caps the number of concurrent `complete` calls on the wrapped provider.
pub struct Limited<P> {
    inner: P,
    max: usize,
    in_flight: Mutex<usize>,
    freed: Condvar,
}

impl<P> Limited<P> {
    pub fn new(inner: P, max_in_flight: usize) -> Self {
        Self {
            inner,
            max: max_in_flight.max(1),
            in_flight: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    pub fn max_in_flight(&self) -> usize {
        self.max
    }

    pub fn inner(&self) -> &P {
        &self.inner
    }

    fn acquire(&self) -> Permit<'_, P> {
        let mut n = self.in_flight.lock().unwrap();
        while *n >= self.max {
            n = self.freed.wait(n).unwrap();
        }
        *n += 1;
        Permit { owner: self }
    }
}

struct Permit<'a, P> {
    owner: &'a Limited<P>,
}

impl<P> Drop for Permit<'_, P> {
    fn drop(&mut self) {
        let mut n = self.owner.in_flight.lock().unwrap();
        *n -= 1;
        self.owner.freed.notify_one();
    }
}

impl<P: LlmProvider> LlmProvider for Limited<P> {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, LlmError> {
        let _permit = self.acquire();
        self.inner.complete(req)
    }
}
