//! Config-file values merged with command-line flags (flags win).

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rcnkit::config::KeyValues;

use crate::error::{CliError, CliResult};

/// Keys every subcommand accepts.
pub const COMMON_KEYS: &[&str] = &["seed", "threads", "out"];

#[derive(Clone, Debug, Default)]
pub struct Settings {
    kv: KeyValues,
}

impl Settings {
    /// Reads `path` (if any) and rejects keys outside `known` and
    /// [`COMMON_KEYS`].
    pub fn load(path: Option<&Path>, known: &[&str]) -> CliResult<Self> {
        let kv = match path {
            Some(p) => KeyValues::load(p)?,
            None => KeyValues::default(),
        };
        let all: Vec<&str> = COMMON_KEYS.iter().chain(known).copied().collect();
        kv.check_known(&all)?;
        Ok(Settings { kv })
    }

    /// Applies a command-line value over the file value.
    pub fn flag(&mut self, key: &str, value: Option<impl Display>) {
        if let Some(v) = value {
            self.kv.set(key, v);
        }
    }

    pub fn switch(&mut self, key: &str, on: bool) {
        if on {
            self.kv.set(key, true);
        }
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.kv.get(key)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> CliResult<Option<T>>
    where
        T::Err: Display,
    {
        Ok(self.kv.value(key)?)
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> CliResult<T>
    where
        T::Err: Display,
    {
        Ok(self.kv.value_or(key, default)?)
    }

    pub fn require<T: FromStr>(&self, key: &str) -> CliResult<T>
    where
        T::Err: Display,
    {
        self.get(key)?.ok_or_else(|| CliError::config(format!("missing `--{}`", key.replace('_', "-"))))
    }

    pub fn list<T: FromStr>(&self, key: &str) -> CliResult<Option<Vec<T>>>
    where
        T::Err: Display,
    {
        Ok(self.kv.list(key)?)
    }

    pub fn path(&self, key: &str) -> Option<PathBuf> {
        self.raw(key).map(PathBuf::from)
    }

    pub fn seed(&self) -> CliResult<u64> {
        self.get_or("seed", 0)
    }

    pub fn out(&self) -> CliResult<PathBuf> {
        self.path("out").ok_or_else(|| CliError::config("missing `--out`"))
    }
}

/// Parses `lo-hi` (or a single `n` for `n-n`).
pub fn parse_range(s: &str) -> CliResult<(usize, usize)> {
    let bad = || CliError::config(format!("range `{s}` is not of the form LO-HI"));
    let (lo, hi) = s.split_once('-').unwrap_or((s, s));
    Ok((lo.trim().parse().map_err(|_| bad())?, hi.trim().parse().map_err(|_| bad())?))
}

/// Parses `name=count,name=count`.
pub fn parse_split(s: &str) -> CliResult<Vec<(String, usize)>> {
    s.split(',')
        .map(|part| {
            let (name, n) = part
                .split_once('=')
                .ok_or_else(|| CliError::config(format!("split `{part}` is not of the form NAME=COUNT")))?;
            let n = n.trim().parse().map_err(|_| CliError::config(format!("split `{part}`: bad count")))?;
            let name = name.trim();
            if name.is_empty() || name.contains(char::is_whitespace) {
                return Err(CliError::config(format!("split `{part}`: bad name")));
            }
            Ok((name.to_string(), n))
        })
        .collect()
}
