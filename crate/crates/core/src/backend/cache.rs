use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use once_cell::sync::OnceCell;

use super::{request_digest, ModelBackend, ModelRequest, ModelResponse};
use crate::error::Result;

/// Memoizes responses by full request digest.
///
/// Each digest owns a once-cell, so concurrent identical requests block on a
/// single underlying call. Failed calls are not cached.
pub struct CachingBackend<B> {
    inner: B,
    slots: Mutex<HashMap<String, Arc<OnceCell<ModelResponse>>>>,
    misses: AtomicUsize,
}

impl<B: ModelBackend> CachingBackend<B> {
    pub fn new(inner: B) -> Self {
        Self {
            inner,
            slots: Mutex::new(HashMap::new()),
            misses: AtomicUsize::new(0),
        }
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }

    /// Calls forwarded to the wrapped backend.
    pub fn misses(&self) -> usize {
        self.misses.load(Ordering::SeqCst)
    }

    pub fn len(&self) -> usize {
        self.slots
            .lock()
            .expect("cache poisoned")
            .values()
            .filter(|s| s.get().is_some())
            .count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl<B: ModelBackend> ModelBackend for CachingBackend<B> {
    fn complete(&self, request: &ModelRequest) -> Result<ModelResponse> {
        let key = request_digest(request);
        let slot = {
            let mut slots = self.slots.lock().expect("cache poisoned");
            slots.entry(key).or_default().clone()
        };
        let mut fresh = false;
        let resp = slot.get_or_try_init(|| {
            fresh = true;
            self.misses.fetch_add(1, Ordering::SeqCst);
            self.inner.complete(request)
        })?;
        let mut out = resp.clone();
        if !fresh {
            out.cached = true;
            out.latency_ms = 0;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{Message, ScriptRule, ScriptedBackend};

    fn backend() -> CachingBackend<ScriptedBackend> {
        CachingBackend::new(
            ScriptedBackend::new(
                vec![],
                vec![ScriptRule {
                    role: "*".into(),
                    input_pattern: "(?s)### user\n(.*)\n$".into(),
                    response: "echo:$1".into(),
                }],
            )
            .unwrap(),
        )
    }

    #[test]
    fn second_identical_request_is_cached() {
        let b = backend();
        let req = ModelRequest::new("m", vec![Message::user("x")], 0);
        let first = b.complete(&req).unwrap();
        let second = b.complete(&req).unwrap();
        assert!(!first.cached);
        assert!(second.cached);
        assert_eq!(first.text, second.text);
        assert_eq!(b.inner().calls(), 1);
    }

    #[test]
    fn failures_are_not_cached() {
        let b = CachingBackend::new(ScriptedBackend::new(vec![], vec![]).unwrap());
        let req = ModelRequest::new("m", vec![Message::user("x")], 0);
        assert!(b.complete(&req).is_err());
        assert!(b.complete(&req).is_err());
        assert_eq!(b.inner().calls(), 2);
        assert!(b.is_empty());
    }

    #[test]
    fn concurrent_identical_requests_hit_backend_once() {
        let b = Arc::new(backend());
        let req = ModelRequest::new("m", vec![Message::user("same")], 3);
        std::thread::scope(|s| {
            for _ in 0..8 {
                let b = b.clone();
                let req = req.clone();
                s.spawn(move || b.complete(&req).unwrap());
            }
        });
        assert_eq!(b.inner().calls(), 1);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn backend_calls_equal_distinct_digests(seq in proptest::collection::vec((0u8..4, 0u64..3), 0..40)) {
                let b = backend();
                let mut distinct = std::collections::HashSet::new();
                for (msg, seed) in &seq {
                    let req = ModelRequest::new("m", vec![Message::user(format!("m{msg}"))], *seed);
                    distinct.insert(request_digest(&req));
                    b.complete(&req).unwrap();
                }
                prop_assert_eq!(b.inner().calls(), distinct.len());
                prop_assert_eq!(b.misses(), distinct.len());
            }
        }
    }
}
