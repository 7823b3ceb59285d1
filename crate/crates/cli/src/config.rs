//! Config files, flag overlay and seed splitting.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::parser::ValueSource;
use clap::ArgMatches;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

/// Resolves a command config: defaults, then the JSON file, then flags
/// given explicitly on the command line. Arg ids must equal field names.
pub fn resolve<T>(parsed: &T, file: Option<&Path>, matches: &ArgMatches) -> Result<T>
where
    T: Serialize + DeserializeOwned,
{
    let mut merged = match file {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            match serde_json::from_str(&text)
                .with_context(|| format!("parsing config {}", path.display()))?
            {
                Value::Object(map) => map,
                _ => bail!("config {} must be a JSON object", path.display()),
            }
        }
        None => Map::new(),
    };
    let Value::Object(flags) = serde_json::to_value(parsed)? else {
        bail!("command arguments must serialize to an object");
    };
    for (key, value) in flags {
        if matches.try_contains_id(&key).unwrap_or(false)
            && matches.value_source(&key) == Some(ValueSource::CommandLine)
        {
            merged.insert(key, value);
        }
    }
    serde_json::from_value(Value::Object(merged)).context("invalid configuration")
}

pub fn echo<T: Serialize>(command: &str, config: &T) -> String {
    format!(
        "{command} config: {}",
        serde_json::to_string(config).expect("config serializes")
    )
}

pub fn require<'a>(value: &'a Option<PathBuf>, name: &str) -> Result<&'a Path> {
    value.as_deref().with_context(|| {
        format!(
            "missing `{name}` (pass --{} or set it in the config file)",
            name.replace('_', "-")
        )
    })
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Seed for `component` number `index` of a run: SplitMix64 over the run
/// seed, an FNV-1a hash of the component name and the index.
pub fn component_seed(run_seed: u64, component: &str, index: u64) -> u64 {
    let name = component.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    });
    splitmix64(splitmix64(splitmix64(run_seed) ^ name) ^ index)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds_are_stable_and_distinct() {
        let a: Vec<u64> = (0..7).map(|i| component_seed(0, "parser", i)).collect();
        let b: Vec<u64> = (0..7).map(|i| component_seed(0, "parser", i)).collect();
        assert_eq!(a, b);
        let mut sorted = a.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), 7);
        assert_ne!(
            component_seed(0, "parser", 0),
            component_seed(0, "ranker", 0)
        );
        assert_ne!(
            component_seed(0, "parser", 0),
            component_seed(1, "parser", 0)
        );
    }
}
