//! Optional JSON config files, merged under command-line flags.
//!
//! A config file holds top-level `seed` and `threads` plus one object per
//! subcommand, keyed by the subcommand name:
//!
//! ```json
//! { "seed": 3, "train": { "epochs": 5, "lr": 0.001 } }
//! ```

use std::path::Path;

use nucdenoise::io::read_json;
use nucdenoise::{Error, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

#[derive(Debug, Default)]
pub struct ConfigFile {
    root: Map<String, Value>,
}

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        match read_json::<Value>(path)? {
            Value::Object(root) => Ok(Self { root }),
            _ => Err(Error::Config(format!("{}: config must be a JSON object", path.display()))),
        }
    }

    pub fn global<T: DeserializeOwned>(&self, key: &str) -> Result<Option<T>> {
        match self.root.get(key) {
            None | Some(Value::Null) => Ok(None),
            Some(v) => serde_json::from_value(v.clone())
                .map(Some)
                .map_err(|e| Error::Config(format!("config key `{key}`: {e}"))),
        }
    }

    /// Fills every flag left unset with the value from the command's
    /// section. Keys that name no flag are rejected.
    pub fn merge<A: Serialize + DeserializeOwned>(&self, command: &str, flags: A) -> Result<A> {
        let Some(section) = self.root.get(command) else {
            return Ok(flags);
        };
        let Value::Object(section) = section else {
            return Err(Error::Config(format!("config section `{command}` must be an object")));
        };
        let mut merged = match serde_json::to_value(&flags) {
            Ok(Value::Object(m)) => m,
            _ => unreachable!("argument structs serialize to objects"),
        };
        for (key, value) in section {
            match merged.get_mut(key) {
                None => return Err(Error::Config(format!("config section `{command}` has unknown key `{key}`"))),
                Some(slot) if slot.is_null() => *slot = value.clone(),
                Some(_) => {}
            }
        }
        serde_json::from_value(Value::Object(merged)).map_err(|e| Error::Config(format!("config section `{command}`: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, Default, PartialEq, Serialize, Deserialize)]
    #[serde(default)]
    struct Args {
        epochs: Option<usize>,
        lr: Option<f64>,
    }

    fn file(v: Value) -> ConfigFile {
        ConfigFile { root: v.as_object().unwrap().clone() }
    }

    #[test]
    fn flags_win() {
        let f = file(serde_json::json!({ "seed": 4, "train": { "epochs": 9, "lr": 0.5 } }));
        let got = f.merge("train", Args { epochs: Some(2), lr: None }).unwrap();
        assert_eq!(got, Args { epochs: Some(2), lr: Some(0.5) });
        assert_eq!(f.global::<u64>("seed").unwrap(), Some(4));
        assert_eq!(f.global::<usize>("threads").unwrap(), None);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let f = file(serde_json::json!({ "train": { "epoch": 9 } }));
        assert_eq!(f.merge("train", Args::default()).unwrap_err().kind(), "config");
        let f = file(serde_json::json!({ "train": { "lr": "fast" } }));
        assert_eq!(f.merge("train", Args::default()).unwrap_err().kind(), "config");
    }
}
