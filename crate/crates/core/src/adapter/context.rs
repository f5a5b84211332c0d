use serde::{Deserialize, Serialize};

use super::{AdapterBundle, AdapterError, AdapterFile, Role};

/// One document in an agent's starting context.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ContextDoc {
    /// Stable identifier, e.g. `adapter:domain_knowledge` or `playbook:v3`.
    pub id: String,
    pub title: String,
    pub body: String,
}

impl ContextDoc {
    pub fn new(id: impl Into<String>, title: impl Into<String>, body: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            title: title.into(),
            body: body.into(),
        }
    }

    fn from_adapter(bundle: &AdapterBundle, file: AdapterFile) -> Self {
        Self::new(
            format!("adapter:{}", file.canonical()),
            file.canonical(),
            bundle.file(file),
        )
    }
}

/// Orders an agent's context: domain knowledge, then the role prompt, then
/// `extras` as given.
pub fn assemble_context(
    bundle: &AdapterBundle,
    role: &str,
    extras: Vec<ContextDoc>,
) -> Result<Vec<ContextDoc>, AdapterError> {
    let role: Role = role.parse()?;
    Ok(context_for(bundle, role, extras))
}

pub fn context_for(bundle: &AdapterBundle, role: Role, extras: Vec<ContextDoc>) -> Vec<ContextDoc> {
    let mut docs = Vec::with_capacity(extras.len() + 2);
    docs.push(ContextDoc::from_adapter(bundle, AdapterFile::DomainKnowledge));
    docs.push(ContextDoc::from_adapter(bundle, role.prompt_file()));
    docs.extend(extras);
    docs
}
