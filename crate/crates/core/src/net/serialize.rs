use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::network::Network;

pub const NETWORK_FORMAT: &str = "sharpcomp-network";
pub const NETWORK_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Envelope {
    format: String,
    version: u32,
    network: Network,
}

/// Pretty JSON; floats use shortest round-trip formatting, so identical
/// parameters always produce identical bytes.
pub fn network_to_json(net: &Network) -> Result<String> {
    Ok(serde_json::to_string_pretty(&Envelope {
        format: NETWORK_FORMAT.into(),
        version: NETWORK_VERSION,
        network: net.clone(),
    })?)
}

pub fn network_from_json(text: &str) -> Result<Network> {
    let env: Envelope = serde_json::from_str(text)?;
    if env.format != NETWORK_FORMAT || env.version != NETWORK_VERSION {
        return Err(Error::Contract(format!(
            "unsupported network file {} v{}",
            env.format, env.version
        )));
    }
    Ok(env.network)
}

pub fn save_network(net: &Network, path: &Path) -> Result<()> {
    std::fs::write(path, network_to_json(net)?).map_err(|e| Error::io(path, e))
}

pub fn load_network(path: &Path) -> Result<Network> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    network_from_json(&text)
}
