//! Run manifests: a TOML record written when a command starts and
//! rewritten with its status and artifacts when it ends.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::args::{Resolved, Setting};
use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// `running`, `ok`, `check-failed` or `error`.
    pub status: String,
    pub out: String,
    /// Arguments after the subcommand that reproduce the run.
    pub args: Vec<String>,
    pub seeds: Vec<u64>,
    pub variants: Vec<String>,
    /// Files written into `out`, relative to it.
    pub artifacts: Vec<String>,
    #[serde(default)]
    pub summary: BTreeMap<String, String>,
    pub config: BTreeMap<String, toml::Value>,
}

impl RunManifest {
    pub fn new(command: &str, out: &Path, resolved: &Resolved, seeds: Vec<u64>, variants: Vec<String>) -> Self {
        let config = resolved
            .0
            .iter()
            .map(|(k, v)| {
                let v = match v {
                    Setting::Value(s) => toml::Value::String(s.clone()),
                    Setting::Flag(b) => toml::Value::Boolean(*b),
                };
                (k.clone(), v)
            })
            .collect();
        Self {
            tool: "spikegrad".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            status: "running".into(),
            out: out.display().to_string(),
            args: resolved.to_args(),
            seeds,
            variants,
            artifacts: Vec::new(),
            summary: BTreeMap::new(),
            config,
        }
    }

    pub fn file_name(command: &str) -> String {
        format!("{command}.manifest.toml")
    }

    pub fn path_in(&self, dir: &Path) -> PathBuf {
        dir.join(Self::file_name(&self.command))
    }

    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        let text = toml::to_string(self).map_err(|e| CliError::Io(format!("manifest: {e}")))?;
        let path = self.path_in(dir);
        fs::write(&path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::args::{Cli, Command};
    use clap::Parser;

    #[test]
    fn toml_round_trip() {
        let cli = Cli::try_parse_from(["spikegrad", "toy", "--seeds", "2", "--phases"]).unwrap();
        let Command::Toy(t) = cli.command else { panic!() };
        let mut m = RunManifest::new("toy", Path::new("out"), &t.resolved(), t.seed_list(), vec!["reset_on".into()]);
        m.artifacts.push("toy.csv".into());
        m.summary.insert("converged".into(), "1/2".into());
        let dir = tempfile::tempdir().unwrap();
        m.write(dir.path()).unwrap();
        let back = RunManifest::load(&dir.path().join("toy.manifest.toml")).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.config["phases"], toml::Value::Boolean(true));
        assert!(back.args.contains(&"--phases".to_string()));
        assert!(!back.args.contains(&"--svg".to_string()));
    }
}
