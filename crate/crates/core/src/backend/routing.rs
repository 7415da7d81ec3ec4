use std::collections::BTreeMap;
use std::sync::Arc;

use super::{ModelBackend, ModelRequest, ModelResponse};
use crate::error::Result;

/// Dispatches each request by `model_ref`, falling back to a default backend.
#[derive(Clone)]
pub struct RoutingBackend {
    routes: BTreeMap<String, Arc<dyn ModelBackend>>,
    fallback: Arc<dyn ModelBackend>,
}

impl RoutingBackend {
    pub fn new(fallback: Arc<dyn ModelBackend>) -> Self {
        Self {
            routes: BTreeMap::new(),
            fallback,
        }
    }

    pub fn route(mut self, model_ref: impl Into<String>, backend: Arc<dyn ModelBackend>) -> Self {
        self.routes.insert(model_ref.into(), backend);
        self
    }

    pub fn routes(&self) -> impl Iterator<Item = &str> {
        self.routes.keys().map(String::as_str)
    }
}

impl ModelBackend for RoutingBackend {
    fn complete(&self, request: &ModelRequest) -> Result<ModelResponse> {
        self.routes
            .get(&request.model_ref)
            .unwrap_or(&self.fallback)
            .complete(request)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{Message, ScriptRule, ScriptedBackend};

    fn constant(text: &str) -> Arc<dyn ModelBackend> {
        Arc::new(
            ScriptedBackend::new(
                vec![],
                vec![ScriptRule {
                    role: "*".into(),
                    input_pattern: "".into(),
                    response: text.into(),
                }],
            )
            .unwrap(),
        )
    }

    #[test]
    fn routes_by_model_ref() {
        let b = RoutingBackend::new(constant("default")).route("e3", constant("loss"));
        let req = |m: &str| ModelRequest::new(m, vec![Message::user("x")], 0);
        assert_eq!(b.complete(&req("e3")).unwrap().text, "loss");
        assert_eq!(b.complete(&req("answer")).unwrap().text, "default");
        assert_eq!(b.routes().collect::<Vec<_>>(), vec!["e3"]);
    }
}
