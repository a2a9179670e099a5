use serde_json::{json, Map, Value};

/// Every route as `(method, path, summary)`.
pub const ROUTES: &[(&str, &str, &str)] = &[
    (
        "get",
        "/healthz",
        "Liveness probe with the active model and prompt-set version",
    ),
    ("get", "/openapi.json", "This document"),
    ("post", "/v1/characters", "Register a corpus directory"),
    ("get", "/v1/characters", "List registered characters"),
    (
        "get",
        "/v1/characters/{id}",
        "Character descriptor with current head epoch",
    ),
    (
        "post",
        "/v1/characters/{id}/initialize",
        "Build and store the epoch-0 snapshot",
    ),
    (
        "post",
        "/v1/characters/{id}/train",
        "Start an asynchronous training run",
    ),
    ("get", "/v1/characters/{id}/epochs", "List stored epochs"),
    (
        "get",
        "/v1/characters/{id}/persona",
        "Assembled persona at ?epoch=k with section token totals",
    ),
    (
        "get",
        "/v1/characters/{id}/stats",
        "Corpus and persona token statistics",
    ),
    ("get", "/v1/characters/{id}/stories", "List stored story ids"),
    ("get", "/v1/characters/{id}/stories/{story_id}", "Fetch a stored story"),
    ("get", "/v1/runs", "List training runs"),
    ("get", "/v1/runs/{id}", "Poll a training run"),
    ("post", "/v1/sessions", "Open a chat session pinned to an epoch"),
    ("get", "/v1/sessions/{id}", "Session transcript"),
    ("delete", "/v1/sessions/{id}", "Close a session"),
    (
        "post",
        "/v1/sessions/{id}/messages",
        "Send a message and receive the in-character reply",
    ),
    ("post", "/v1/eval/bfi", "Administer the question bank and score facets"),
    (
        "post",
        "/v1/eval/compare",
        "Compare model facet scores against a human reference",
    ),
    ("post", "/v1/eval/stories", "Generate and store stories"),
    ("post", "/v1/eval/ratings", "Aggregate a Likert rating CSV (text body)"),
];

fn request_body(method: &str, path: &str) -> Option<Value> {
    let schema = match (method, path) {
        ("post", "/v1/characters") => json!({"type": "object", "required": ["corpus_path"],
            "properties": {"corpus_path": {"type": "string"}}}),
        ("post", "/v1/characters/{id}/train") => json!({"type": "object",
            "properties": {"resume_from": {"type": "integer", "minimum": 1}}}),
        ("post", "/v1/sessions") => json!({"type": "object", "required": ["character_id", "epoch"],
            "properties": {"character_id": {"type": "string"}, "epoch": {"type": "integer"}}}),
        ("post", "/v1/sessions/{id}/messages") => json!({"type": "object", "required": ["text"],
            "properties": {"text": {"type": "string"}}}),
        ("post", "/v1/eval/bfi") => json!({"type": "object", "required": ["character_id", "epoch"],
            "properties": {"character_id": {"type": "string"}, "epoch": {"type": "integer"},
                           "runs": {"type": "integer", "minimum": 1, "default": 1}}}),
        ("post", "/v1/eval/compare") => json!({"type": "object", "required": ["human", "models"],
            "properties": {"human": {"type": "object"}, "models": {"type": "array",
                "items": {"type": "object", "properties": {"name": {"type": "string"}, "scores": {"type": "object"}}}},
                "reported": {"type": "object"}, "title": {"type": "string"}}}),
        ("post", "/v1/eval/stories") => json!({"type": "object", "required": ["character_id", "epoch"],
            "properties": {"character_id": {"type": "string"}, "epoch": {"type": "integer"},
                           "n": {"type": "integer", "minimum": 1, "default": 4}}}),
        ("post", "/v1/eval/ratings") => {
            return Some(json!({"required": true, "content": {"text/csv": {"schema": {"type": "string"}}}}))
        }
        _ => return None,
    };
    Some(json!({"required": true, "content": {"application/json": {"schema": schema}}}))
}

fn parameters(path: &str) -> Vec<Value> {
    let mut params: Vec<Value> = path
        .split('/')
        .filter_map(|seg| seg.strip_prefix('{')?.strip_suffix('}'))
        .map(|name| json!({"name": name, "in": "path", "required": true, "schema": {"type": "string"}}))
        .collect();
    if path == "/v1/characters/{id}/persona" {
        params.push(json!({"name": "epoch", "in": "query", "required": false, "schema": {"type": "integer"}}));
    }
    if path == "/v1/eval/ratings" {
        params.push(json!({"name": "grouping", "in": "query", "required": false,
            "schema": {"type": "string", "enum": ["group", "story", "all"]}}));
    }
    params
}

pub fn openapi_document() -> Value {
    let mut paths = Map::new();
    for (method, path, summary) in ROUTES {
        let mut op = json!({
            "summary": summary,
            "parameters": parameters(path),
            "responses": {
                "2XX": {"description": "Success", "content": {"application/json": {}}},
                "default": {"description": "Error envelope",
                    "content": {"application/json": {"schema": {"$ref": "#/components/schemas/Error"}}}},
            },
        });
        if let Some(body) = request_body(method, path) {
            op["requestBody"] = body;
        }
        paths
            .entry(path.to_string())
            .or_insert_with(|| json!({}))
            .as_object_mut()
            .expect("path item is an object")
            .insert(method.to_string(), op);
    }
    json!({
        "openapi": "3.0.3",
        "info": {"title": "persona service", "version": env!("CARGO_PKG_VERSION")},
        "paths": paths,
        "components": {"schemas": {"Error": {
            "type": "object",
            "required": ["code", "message"],
            "properties": {"code": {"type": "string"}, "message": {"type": "string"}, "details": {}},
        }}},
    })
}
