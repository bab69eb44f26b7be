use serde::{Deserialize, Serialize};

/// Pointer from a model file to a companion artifact it depends on.
///
/// `path` is relative to the model file's directory; `sha256` is the lowercase
/// hex digest of the artifact's bytes, checked by callers before use.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactRef {
    pub path: String,
    pub sha256: String,
}
