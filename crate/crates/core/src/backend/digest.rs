use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::ModelRequest;

/// Hex SHA-256 of the request's canonical JSON form.
///
/// Object keys are emitted in sorted order (serde_json's default map), so the
/// digest does not depend on how a caller happened to order fields. The seed
/// is part of the identity.
pub fn request_digest(request: &ModelRequest) -> String {
    let messages: Vec<Value> = request
        .messages
        .iter()
        .map(|m| json!({ "role": m.role.to_string(), "content": m.content }))
        .collect();
    let canonical = json!({
        "model_ref": request.model_ref,
        "messages": messages,
        "temperature": request.temperature,
        "top_p": request.top_p,
        "seed": request.seed,
    });
    let bytes = serde_json::to_vec(&canonical).expect("json values always serialize");
    hex::encode(Sha256::digest(&bytes))
}
