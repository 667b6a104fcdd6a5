//! Shared CLI plumbing: client construction, manifests, small file helpers.

use std::path::{Path, PathBuf};

use calkit_core::client::{replay::ReplayClient, ClientRegistry, ModelClient};
use calkit_core::report::RunManifest;
use calkit_core::{Error, Result};

pub struct RunContext {
    pub seed: u64,
    pub replay: Option<PathBuf>,
    pub argv: Vec<String>,
}

impl RunContext {
    /// Build the backend: the global --replay log wins over --client.
    pub fn client(&self, spec: Option<&str>) -> Result<Box<dyn ModelClient>> {
        if let Some(log) = &self.replay {
            return Ok(Box::new(ReplayClient::from_log(log)?));
        }
        let spec = spec.ok_or_else(|| {
            Error::validation("client", "a --client spec (or global --replay log) is required")
        })?;
        Ok(ClientRegistry::builtin().build(spec)?)
    }

    /// Manifest seeded with this run's command line.
    pub fn manifest(&self, command: &str) -> RunManifest {
        RunManifest::new(command, &self.argv, self.seed)
    }
}

/// Write a manifest next to the primary output, recording inputs by hash.
pub fn write_manifest(
    ctx: &RunContext,
    command: &str,
    inputs: &[&Path],
    outputs: &[&Path],
) -> Result<()> {
    let Some(primary) = outputs.first() else {
        return Ok(());
    };
    let mut manifest = ctx.manifest(command);
    for input in inputs {
        manifest.add_input(input)?;
    }
    for output in outputs {
        manifest.add_output(output);
    }
    manifest.write_beside(primary)?;
    Ok(())
}

pub fn write_text(path: &Path, body: &str) -> Result<()> {
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}

pub fn read_lines(path: &Path) -> Result<Vec<String>> {
    let body = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(body
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect())
}
