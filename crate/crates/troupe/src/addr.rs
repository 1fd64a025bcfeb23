use crate::error::{EngineError, Result};
use std::fmt;

/// The sole identity of a logical actor: (type name, actor name).
/// Actor names are opaque application-defined strings.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
pub struct ActorAddress {
    pub type_name: String,
    pub actor_name: String,
}

impl ActorAddress {
    pub fn new(type_name: impl Into<String>, actor_name: impl Into<String>) -> Result<ActorAddress> {
        let type_name = type_name.into();
        let actor_name = actor_name.into();
        if type_name.is_empty() || actor_name.is_empty() {
            return Err(EngineError::InvalidSchema(
                "actor address fields must be non-empty".into(),
            ));
        }
        Ok(ActorAddress {
            type_name,
            actor_name,
        })
    }
}

/// Infallible constructor for literal addresses in application code and tests.
pub fn addr(type_name: &str, actor_name: &str) -> ActorAddress {
    ActorAddress::new(type_name, actor_name).expect("non-empty address parts")
}

impl fmt::Display for ActorAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.type_name, self.actor_name)
    }
}
