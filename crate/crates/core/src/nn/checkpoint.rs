//! Plain-text network checkpoints.
//!
//! ```text
//! mlpnet 1
//! sizes 4 32 64 32 2
//! hidden tanh
//! output tanh
//! params 4610
//! <one parameter per line, layer order, weights then biases>
//! ```
//!
//! Parameters are written with Rust's shortest round-trip float formatting,
//! so `load(save(net)) == net` bit for bit.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{Architecture, MlpNet};
use crate::error::{Error, Result};

const MAGIC: &str = "mlpnet 1";

impl MlpNet {
    pub fn to_checkpoint_string(&self) -> String {
        let mut out = String::with_capacity(self.params().len() * 24 + 64);
        let sizes: Vec<String> = self.sizes().iter().map(|s| s.to_string()).collect();
        let _ = writeln!(out, "{MAGIC}");
        let _ = writeln!(out, "sizes {}", sizes.join(" "));
        let _ = writeln!(out, "hidden {}", self.architecture().hidden);
        let _ = writeln!(out, "output {}", self.architecture().output);
        let _ = writeln!(out, "params {}", self.params().len());
        for p in self.params() {
            let _ = writeln!(out, "{p:?}");
        }
        out
    }

    pub fn from_checkpoint_str(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
        let mut next = |what: &str| {
            lines
                .next()
                .ok_or_else(|| Error::parse(0, format!("missing {what}")))
        };

        let (n, magic) = next("header")?;
        if magic != MAGIC {
            return Err(Error::parse(n, format!("expected `{MAGIC}`, got `{magic}`")));
        }
        let (n, sizes) = next("sizes")?;
        let sizes = field(n, sizes, "sizes")?
            .split_whitespace()
            .map(|s| s.parse::<usize>().map_err(|e| Error::parse(n, e.to_string())))
            .collect::<Result<Vec<_>>>()?;
        let (n, hidden) = next("hidden")?;
        let hidden = field(n, hidden, "hidden")?.parse()?;
        let (n, output) = next("output")?;
        let output = field(n, output, "output")?.parse()?;
        let (n, count) = next("params")?;
        let count: usize = field(n, count, "params")?
            .parse()
            .map_err(|e: std::num::ParseIntError| Error::parse(n, e.to_string()))?;

        let mut params = Vec::with_capacity(count);
        for _ in 0..count {
            let (n, v) = next("parameter")?;
            params.push(
                v.parse::<f64>()
                    .map_err(|e| Error::parse(n, e.to_string()))?,
            );
        }
        MlpNet::from_parts(Architecture::new(sizes, hidden, output), params)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_checkpoint_string()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint_str(&text)
    }
}

fn field<'a>(line: usize, text: &'a str, key: &str) -> Result<&'a str> {
    text.strip_prefix(key)
        .map(str::trim)
        .ok_or_else(|| Error::parse(line, format!("expected `{key} ...`")))
}
