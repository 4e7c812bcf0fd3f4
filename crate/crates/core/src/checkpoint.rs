//! Parameter checkpoint container.
//!
//! A checkpoint is one file: a UTF-8 text manifest followed by a binary
//! payload of little-endian IEEE-754 `f64` values.
//!
//! ```text
//! MVPCKPT 1
//! meta <key> <value>                  (zero or more; value runs to end of line)
//! array <name> <d0>x<d1>x... <offset> <count>
//! ...
//! end
//! <payload>
//! ```
//!
//! `offset` is the byte offset of the array inside the payload (the first
//! byte after the `end\n` line) and `count` the number of `f64` values.
//! Arrays are stored back to back in manifest order; names contain no
//! whitespace. Meta values store `\` as `\\` and newline as `\n`.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::optim::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const MAGIC: &str = "MVPCKPT 1";

/// A named `f64` array.
#[derive(Clone, Debug, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    pub arrays: Vec<NamedArray>,
}

impl Checkpoint {
    pub fn push(&mut self, name: impl Into<String>, shape: &[usize], data: Vec<f64>) {
        self.arrays.push(NamedArray { name: name.into(), shape: shape.to_vec(), data });
    }

    pub fn push_params<T: Scalar>(&mut self, prefix: &str, params: &ParamStore<T>) {
        for (name, t) in params.iter() {
            self.push(format!("{prefix}{name}"), t.shape(), t.to_f64_vec());
        }
    }

    pub fn array(&self, name: &str) -> Option<&NamedArray> {
        self.arrays.iter().find(|a| a.name == name)
    }

    /// Overwrites every parameter of `params` with the array `prefix + name`.
    pub fn load_params<T: Scalar>(&self, prefix: &str, params: &mut ParamStore<T>) -> Result<()> {
        for i in 0..params.len() {
            let id = crate::optim::ParamId(i);
            let key = format!("{prefix}{}", params.name(id));
            let arr = self.array(&key).ok_or_else(|| Error::Validation(format!("checkpoint lacks array {key}")))?;
            if arr.shape != params.get(id).shape() {
                return Err(Error::dim("checkpoint", &arr.shape, params.get(id).shape()));
            }
            *params.get_mut(id) = Tensor::from_f64(&arr.shape, &arr.data)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut header = String::new();
        header.push_str(MAGIC);
        header.push('\n');
        for (k, v) in &self.meta {
            if k.is_empty() || k.contains(char::is_whitespace) {
                return Err(Error::Validation(format!("checkpoint meta key/value not storable: {k:?}")));
            }
            header.push_str(&format!("meta {k} {}\n", v.replace('\\', "\\\\").replace('\n', "\\n")));
        }
        let mut offset = 0usize;
        for a in &self.arrays {
            if a.name.is_empty() || a.name.contains(char::is_whitespace) {
                return Err(Error::Validation(format!("checkpoint array name not storable: {:?}", a.name)));
            }
            if a.shape.iter().product::<usize>() != a.data.len() {
                return Err(Error::Validation(format!("array {} shape disagrees with data", a.name)));
            }
            let dims: Vec<String> = a.shape.iter().map(usize::to_string).collect();
            header.push_str(&format!("array {} {} {} {}\n", a.name, dims.join("x"), offset, a.data.len()));
            offset += a.data.len() * 8;
        }
        header.push_str("end\n");
        let mut out = header.into_bytes();
        out.reserve(offset);
        for a in &self.arrays {
            for x in &a.data {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: &str| Error::Validation(format!("malformed checkpoint: {msg}"));
        let mut pos = 0;
        let mut next_line = || -> Result<&str> {
            let rest = &bytes[pos..];
            let nl = rest.iter().position(|&b| b == b'\n').ok_or_else(|| bad("unterminated header"))?;
            pos += nl + 1;
            std::str::from_utf8(&rest[..nl]).map_err(|_| bad("header is not UTF-8"))
        };
        if next_line()? != MAGIC {
            return Err(bad("missing magic line"));
        }
        let mut ck = Checkpoint::default();
        let mut layout = Vec::new();
        loop {
            let line = next_line()?;
            if line == "end" {
                break;
            }
            if let Some(rest) = line.strip_prefix("meta ") {
                let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
                ck.meta.insert(k.to_string(), unescape(v).ok_or_else(|| bad(line))?);
            } else if let Some(rest) = line.strip_prefix("array ") {
                let f: Vec<&str> = rest.split(' ').collect();
                if f.len() != 4 {
                    return Err(bad(line));
                }
                let shape = f[1].split('x').map(|d| d.parse::<usize>()).collect::<Result<Vec<_>, _>>().map_err(|_| bad(line))?;
                let offset: usize = f[2].parse().map_err(|_| bad(line))?;
                let count: usize = f[3].parse().map_err(|_| bad(line))?;
                layout.push((f[0].to_string(), shape, offset, count));
            } else {
                return Err(bad(line));
            }
        }
        let payload = &bytes[pos..];
        for (name, shape, offset, count) in layout {
            let end = offset + count * 8;
            if end > payload.len() || shape.iter().product::<usize>() != count {
                return Err(bad(&format!("array {name} out of bounds")));
            }
            let data = payload[offset..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            ck.arrays.push(NamedArray { name, shape, data });
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn unescape(v: &str) -> Option<String> {
    let mut out = String::with_capacity(v.len());
    let mut chars = v.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next()? {
            '\\' => out.push('\\'),
            'n' => out.push('\n'),
            _ => return None,
        }
    }
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn layout_is_documented_format() {
        let mut ck = Checkpoint::default();
        ck.meta.insert("model.n_heads".into(), "8".into());
        ck.push("a", &[2], vec![1.0, 2.0]);
        ck.push("b.w", &[1, 1], vec![-0.5]);
        let bytes = ck.to_bytes().unwrap();
        let header = "MVPCKPT 1\nmeta model.n_heads 8\narray a 2 0 2\narray b.w 1x1 16 1\nend\n";
        assert!(bytes.starts_with(header.as_bytes()));
        assert_eq!(bytes.len(), header.len() + 24);
        assert_eq!(&bytes[header.len()..header.len() + 8], &1.0f64.to_le_bytes());
    }

    #[test]
    fn rejects_garbage() {
        assert!(Checkpoint::from_bytes(b"nope\n").is_err());
        assert!(Checkpoint::from_bytes(b"MVPCKPT 1\narray a 2 0 2\nend\n").is_err());
    }

    proptest! {
        #[test]
        fn bytes_round_trip(values in proptest::collection::vec(any::<f64>(), 1..40), split in 0usize..40, note in "(?s).{0,40}") {
            let split = split.min(values.len());
            let mut ck = Checkpoint::default();
            ck.meta.insert("seed".into(), "7".into());
            ck.meta.insert("note".into(), note);
            ck.push("first", &[values.len()], values.clone());
            if split > 0 {
                ck.push("second", &[split, 1], values[..split].to_vec());
            }
            let back = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
            let bits = |c: &Checkpoint| c.arrays.iter().flat_map(|a| a.data.iter().map(|x| x.to_bits())).collect::<Vec<_>>();
            prop_assert_eq!(bits(&back), bits(&ck));
            prop_assert_eq!(back.meta, ck.meta);
        }
    }
}
