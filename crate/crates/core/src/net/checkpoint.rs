//! Plain-text checkpoints.
//!
//! ```text
//! mixedlane-checkpoint 1
//! meta <key> <value...>
//! shape <hidden> <features>
//! online <count>
//! <one value per line>
//! target <count>
//! <one value per line>
//! end
//! ```
//!
//! Values use the shortest representation that parses back to the same
//! number, so save/load round-trips exactly.

use std::fmt::Write as _;
use std::io;
use std::path::Path;

use super::{NetError, NetworkParams, NetworkShape};
use crate::scalar::Real;

const MAGIC: &str = "mixedlane-checkpoint";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub params: NetworkParams<T>,
    /// Free-form provenance (config hash, code version, frames, ...).
    pub meta: Vec<(String, String)>,
}

impl<T: Real> Checkpoint<T> {
    pub fn new(params: NetworkParams<T>) -> Self {
        Self { params, meta: Vec::new() }
    }

    pub fn with_meta(mut self, key: &str, value: impl ToString) -> Self {
        self.meta.push((key.to_string(), value.to_string()));
        self
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let shape = self.params.shape();
        writeln!(s, "{MAGIC} {VERSION}").unwrap();
        for (k, v) in &self.meta {
            writeln!(s, "meta {k} {v}").unwrap();
        }
        writeln!(s, "shape {} {}", shape.hidden, shape.features).unwrap();
        for (name, values) in [("online", &self.params.online), ("target", &self.params.target)] {
            writeln!(s, "{name} {}", values.len()).unwrap();
            for v in values.iter() {
                writeln!(s, "{v}").unwrap();
            }
        }
        s.push_str("end\n");
        s
    }

    /// Parses a checkpoint; if `expected` is given, a different network
    /// shape is rejected.
    pub fn from_text(text: &str, expected: Option<NetworkShape>) -> Result<Self, NetError> {
        let err = |line: usize, m: &str| NetError::Checkpoint(format!("line {}: {m}", line + 1));
        let mut lines = text.lines().enumerate().peekable();
        match lines.next() {
            Some((_, l)) if l.trim() == format!("{MAGIC} {VERSION}") => {}
            Some((i, _)) => return Err(err(i, &format!("expected header `{MAGIC} {VERSION}`"))),
            None => return Err(NetError::Checkpoint("empty file".into())),
        }
        let mut meta = Vec::new();
        while let Some((_, l)) = lines.peek() {
            let Some(rest) = l.strip_prefix("meta ") else { break };
            let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
            meta.push((k.to_string(), v.to_string()));
            lines.next();
        }
        let (i, l) = lines.next().ok_or_else(|| NetError::Checkpoint("missing shape".into()))?;
        let dims: Vec<usize> = match l.strip_prefix("shape ") {
            Some(rest) => rest.split_whitespace().map(str::parse).collect::<Result<_, _>>().map_err(|_| err(i, "bad shape"))?,
            None => return Err(err(i, "expected `shape`")),
        };
        let [hidden, features] = dims[..] else { return Err(err(i, "shape needs two numbers")) };
        let shape = NetworkShape { hidden, features };
        if let Some(want) = expected {
            if want != shape {
                return Err(err(i, &format!("shape {hidden}x{features} does not match expected {}x{}", want.hidden, want.features)));
            }
        }
        let mut block = |name: &str| -> Result<Vec<T>, NetError> {
            let (i, l) = lines.next().ok_or_else(|| NetError::Checkpoint(format!("missing `{name}` block")))?;
            let n: usize = l
                .strip_prefix(name)
                .and_then(|r| r.trim().parse().ok())
                .ok_or_else(|| err(i, &format!("expected `{name} <count>`")))?;
            let mut out = Vec::with_capacity(n);
            for _ in 0..n {
                let (i, l) = lines.next().ok_or_else(|| NetError::Checkpoint(format!("`{name}` block truncated")))?;
                let v: f64 = l.trim().parse().map_err(|_| err(i, "bad number"))?;
                if !v.is_finite() {
                    return Err(err(i, "non-finite value"));
                }
                out.push(T::lit(v));
            }
            Ok(out)
        };
        let online = block("online")?;
        let target = block("target")?;
        match lines.next() {
            Some((_, "end")) => {}
            Some((i, _)) => return Err(err(i, "expected `end`")),
            None => return Err(NetError::Checkpoint("missing `end`".into())),
        }
        let params = NetworkParams::from_parts(shape, online, target)?;
        Ok(Self { params, meta })
    }
}

pub fn save_checkpoint<T: Real>(path: &Path, ckpt: &Checkpoint<T>) -> io::Result<()> {
    std::fs::write(path, ckpt.to_text())
}

pub fn load_checkpoint<T: Real>(path: &Path, expected: Option<NetworkShape>) -> Result<Checkpoint<T>, NetError> {
    let text = std::fs::read_to_string(path).map_err(|e| NetError::Checkpoint(format!("{}: {e}", path.display())))?;
    Checkpoint::from_text(&text, expected)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_is_exact() {
        let shape = NetworkShape { hidden: 8, features: 3 };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = NetworkParams::<f64>::init(shape, &mut rng).unwrap();
        p.target[0] = 1.0 / 3.0;
        let c = Checkpoint::new(p).with_meta("config_hash", "abc").with_meta("note", "two words");
        let back = Checkpoint::<f64>::from_text(&c.to_text(), Some(shape)).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.meta("note"), Some("two words"));
    }

    #[test]
    fn rejects_mismatches() {
        let shape = NetworkShape { hidden: 4, features: 2 };
        let c = Checkpoint::new(NetworkParams::<f64>::zeros(shape).unwrap());
        let text = c.to_text();
        assert!(Checkpoint::<f64>::from_text(&text, Some(NetworkShape { hidden: 8, features: 2 })).is_err());
        let dropped: String = text.lines().filter(|l| *l != "0").skip(1).collect::<Vec<_>>().join("\n");
        assert!(Checkpoint::<f64>::from_text(&dropped, None).is_err());
        let short = text.replacen("online ", "online 1", 1);
        assert!(Checkpoint::<f64>::from_text(&short, None).is_err());
    }
}
