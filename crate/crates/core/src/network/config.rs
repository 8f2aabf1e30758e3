//! TOML network documents.
//!
//! ```toml
//! name = "sir"                 # optional
//! species = ["S", "I"]
//!
//! [[reaction]]
//! consumed = [0, 0]            # one non-negative integer per species
//! produced = [1, 0]
//! rate = 7.0                   # κ > 0
//! ```
//!
//! Unknown keys are rejected, as are reactions with `produced == consumed`
//! and non-positive rates.

use serde::{Deserialize, Serialize};

use super::{Reaction, ReactionNetwork};
use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    species: Vec<String>,
    #[serde(rename = "reaction")]
    reactions: Vec<ReactionDoc>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ReactionDoc {
    consumed: Vec<u32>,
    produced: Vec<u32>,
    rate: f64,
}

/// Parse and validate a network document.
pub fn load_network(text: &str) -> Result<ReactionNetwork> {
    let doc: NetworkDoc = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    let d = doc.species.len();
    let mut reactions = Vec::with_capacity(doc.reactions.len());
    for (k, r) in doc.reactions.into_iter().enumerate() {
        if r.consumed.len() != d || r.produced.len() != d {
            return Err(Error::Parse(format!(
                "reaction[{k}]: `consumed` and `produced` need {d} entries (one per species)"
            )));
        }
        let reaction =
            Reaction::new(r.consumed, r.produced, r.rate).map_err(|e| Error::Parse(format!("reaction[{k}]: {e}")))?;
        reactions.push(reaction);
    }
    ReactionNetwork::new(doc.name.unwrap_or_else(|| "custom".into()), doc.species, reactions)
}

/// Serialize a network into the document format accepted by [`load_network`].
pub fn network_to_config(net: &ReactionNetwork) -> String {
    let doc = NetworkDoc {
        name: Some(net.name().to_string()),
        species: net.species().to_vec(),
        reactions: net
            .reactions()
            .iter()
            .map(|r| ReactionDoc {
                consumed: r.consumed().to_vec(),
                produced: r.produced().to_vec(),
                rate: r.rate(),
            })
            .collect(),
    };
    toml::to_string(&doc).expect("network document serializes")
}
