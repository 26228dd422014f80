//! Flat `key=value` run manifests.
//!
//! A manifest records the subcommand, the tool version, the seed and every
//! resolved option as `arg.<flag>=<value>`. Replaying turns the `arg.` lines
//! back into a command line.

use std::path::Path;

use crate::output::{read_text, write_atomic};
use crate::{CliResult, Failure};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub subcommand: String,
    pub seed: Option<u64>,
    /// Flag name (without dashes) and value, in command-line order.
    pub args: Vec<(String, String)>,
}

impl Manifest {
    pub fn new(subcommand: &str, seed: Option<u64>) -> Self {
        Self {
            subcommand: subcommand.to_string(),
            seed,
            args: Vec::new(),
        }
    }

    pub fn arg(mut self, flag: &str, value: impl ToString) -> Self {
        self.args.push((flag.to_string(), value.to_string()));
        self
    }

    pub fn opt_arg(self, flag: &str, value: Option<impl ToString>) -> Self {
        match value {
            Some(v) => self.arg(flag, v),
            None => self,
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("subcommand={}\nversion={VERSION}\n", self.subcommand);
        if let Some(seed) = self.seed {
            out.push_str(&format!("seed={seed}\n"));
        }
        for (k, v) in &self.args {
            out.push_str(&format!("arg.{k}={v}\n"));
        }
        out
    }

    pub fn parse(text: &str) -> CliResult<Self> {
        let mut subcommand = None;
        let mut seed = None;
        let mut args = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Failure::usage(format!("manifest line {}: expected key=value", i + 1)))?;
            match k {
                "subcommand" => subcommand = Some(v.to_string()),
                "version" => {}
                "seed" => {
                    seed = Some(
                        v.parse()
                            .map_err(|_| Failure::usage(format!("manifest line {}: bad seed {v:?}", i + 1)))?,
                    )
                }
                _ => match k.strip_prefix("arg.") {
                    Some(flag) if !flag.is_empty() => args.push((flag.to_string(), v.to_string())),
                    _ => return Err(Failure::usage(format!("manifest line {}: unknown key {k:?}", i + 1))),
                },
            }
        }
        Ok(Self {
            subcommand: subcommand.ok_or_else(|| Failure::usage("manifest has no subcommand"))?,
            seed,
            args,
        })
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        write_atomic(path, self.to_text().as_bytes())
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        Self::parse(&read_text(path)?)
    }

    /// Command-line words equivalent to this manifest, without the program
    /// name.
    pub fn argv(&self) -> Vec<String> {
        let mut argv = vec![self.subcommand.clone()];
        for (k, v) in &self.args {
            argv.push(format!("--{k}"));
            argv.push(v.clone());
        }
        argv
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let m = Manifest::new("train", Some(3))
            .arg("corpus", "data/x y")
            .arg("c", 16.0)
            .opt_arg("bridge-cmd", None::<String>);
        let text = m.to_text();
        assert!(text.starts_with("subcommand=train\nversion="));
        assert!(text.contains("\narg.c=16\n"));
        assert_eq!(Manifest::parse(&text).unwrap(), m);
        assert_eq!(m.argv(), ["train", "--corpus", "data/x y", "--c", "16"]);
    }

    #[test]
    fn rejects_garbage() {
        assert!(Manifest::parse("nonsense").is_err());
        assert!(Manifest::parse("arg.x=1\n").is_err());
        assert!(Manifest::parse("subcommand=train\nfoo=1\n").is_err());
    }
}
