//! Checkpoint files.
//!
//! A text manifest terminated by a `data` line, followed by every tensor as
//! little-endian `f64` values in manifest order:
//!
//! ```text
//! shiftpair-checkpoint 1
//! dims token=64 action=32 distance=16 hidden=64 sentiment_hidden=64 max_distance=10
//! vocab size=1234 hash=0123456789abcdef
//! seed 7
//! embeddings lookup
//! tensor token_embeddings 1234 64
//! ...
//! words
//! <unk>
//! ...
//! data
//! <binary>
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scorer::{Dims, Model, ScorerParams, TokenSource, Vocab};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "shiftpair-checkpoint";

fn bad(message: impl Into<String>) -> Error {
    Error::Checkpoint(message.into())
}

pub fn to_bytes(model: &Model, seed: u64) -> Vec<u8> {
    let d = &model.dims;
    let mut head = format!(
        "{MAGIC} {FORMAT_VERSION}\ndims token={} action={} distance={} hidden={} sentiment_hidden={} max_distance={}\n",
        d.token, d.action, d.distance, d.hidden, d.sentiment_hidden, d.max_distance
    );
    head.push_str(&format!("vocab size={} hash={}\n", model.vocab.len(), model.vocab.hash()));
    head.push_str(&format!("seed {seed}\n"));
    let source = match model.source {
        TokenSource::Lookup => "lookup",
        TokenSource::External(_) => "external",
    };
    head.push_str(&format!("embeddings {source}\n"));
    for shape in model.params.shapes() {
        head.push_str(&format!("tensor {} {} {}\n", shape.name, shape.rows, shape.cols));
    }
    head.push_str("words\n");
    for w in model.vocab.words() {
        head.push_str(w);
        head.push('\n');
    }
    head.push_str("data\n");
    let mut bytes = head.into_bytes();
    for (_, values) in model.params.tensors() {
        for v in values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    bytes
}

/// What a checkpoint holds besides the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Loaded {
    pub model: Model,
    pub seed: u64,
    /// The model was trained on external vectors, which are not stored.
    pub external: bool,
}

fn key_values(line: &str, prefix: &str) -> Result<Vec<(String, usize)>> {
    let rest = line
        .strip_prefix(prefix)
        .ok_or_else(|| bad(format!("expected `{prefix}` line, found {line:?}")))?;
    rest.split_whitespace()
        .map(|kv| {
            let (k, v) = kv.split_once('=').ok_or_else(|| bad(format!("bad field {kv:?}")))?;
            let v = v.parse().map_err(|_| bad(format!("bad number in {kv:?}")))?;
            Ok((k.to_string(), v))
        })
        .collect()
}

fn field(fields: &[(String, usize)], name: &str) -> Result<usize> {
    fields
        .iter()
        .find(|(k, _)| k == name)
        .map(|(_, v)| *v)
        .ok_or_else(|| bad(format!("missing field {name}")))
}

/// Parses a checkpoint. When `expected` is given, its dims must match.
pub fn from_bytes(bytes: &[u8], expected: Option<&Dims>) -> Result<Loaded> {
    let mut pos = 0;
    let mut next_line = || -> Result<&str> {
        let end = bytes[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| bad("truncated manifest"))?;
        let line = std::str::from_utf8(&bytes[pos..pos + end]).map_err(|_| bad("manifest is not UTF-8"))?;
        pos += end + 1;
        Ok(line)
    };

    let header = next_line()?;
    if header != format!("{MAGIC} {FORMAT_VERSION}") {
        return Err(bad(format!("unsupported header {header:?}")));
    }
    let dims_fields = key_values(next_line()?, "dims")?;
    let dims = Dims {
        token: field(&dims_fields, "token")?,
        action: field(&dims_fields, "action")?,
        distance: field(&dims_fields, "distance")?,
        hidden: field(&dims_fields, "hidden")?,
        sentiment_hidden: field(&dims_fields, "sentiment_hidden")?,
        max_distance: field(&dims_fields, "max_distance")?,
    };
    dims.validate()?;
    if let Some(e) = expected {
        let pairs = [
            (e.token, dims.token),
            (e.action, dims.action),
            (e.distance, dims.distance),
            (e.hidden, dims.hidden),
            (e.sentiment_hidden, dims.sentiment_hidden),
            (e.max_distance, dims.max_distance),
        ];
        if let Some(&(expected, found)) = pairs.iter().find(|(a, b)| a != b) {
            return Err(Error::DimMismatch { expected, found });
        }
    }
    let vocab_line = next_line()?;
    let vocab_size = field(&key_values(vocab_line.split(" hash=").next().unwrap(), "vocab")?, "size")?;
    let hash = vocab_line
        .split(" hash=")
        .nth(1)
        .ok_or_else(|| bad("missing vocab hash"))?
        .to_string();
    let seed: u64 = next_line()?
        .strip_prefix("seed ")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| bad("bad seed line"))?;
    let external = match next_line()? {
        "embeddings lookup" => false,
        "embeddings external" => true,
        other => return Err(bad(format!("bad embeddings line {other:?}"))),
    };

    let mut params = ScorerParams::zeros(&dims, vocab_size);
    for shape in params.shapes() {
        let line = next_line()?;
        let want = format!("tensor {} {} {}", shape.name, shape.rows, shape.cols);
        if line != want {
            let found = line.split_whitespace().nth(3).and_then(|c| c.parse().ok()).unwrap_or(0);
            return Err(match line.split_whitespace().nth(1) {
                Some(name) if name == shape.name => Error::DimMismatch { expected: shape.rows * shape.cols, found },
                _ => bad(format!("expected {want:?}, found {line:?}")),
            });
        }
    }
    if next_line()? != "words" {
        return Err(bad("missing words section"));
    }
    let mut words = Vec::with_capacity(vocab_size);
    for _ in 0..vocab_size {
        words.push(next_line()?.to_string());
    }
    if next_line()? != "data" {
        return Err(bad("missing data marker"));
    }
    let vocab = Vocab::from_words(words.into_iter().skip(1));
    if vocab.len() != vocab_size || vocab.hash() != hash {
        return Err(bad("vocabulary does not match its hash"));
    }

    let data = &bytes[pos..];
    let needed = params.parameter_count() * 8;
    if data.len() != needed {
        return Err(bad(format!("expected {needed} data bytes, found {}", data.len())));
    }
    let mut chunks = data.chunks_exact(8);
    for (_, values) in params.tensors_mut() {
        for v in values.iter_mut() {
            *v = f64::from_le_bytes(chunks.next().unwrap().try_into().unwrap());
        }
    }
    Ok(Loaded {
        model: Model {
            dims,
            params,
            vocab,
            source: TokenSource::Lookup,
        },
        seed,
        external,
    })
}

pub fn save(path: &Path, model: &Model, seed: u64) -> Result<()> {
    fs::write(path, to_bytes(model, seed))?;
    Ok(())
}

pub fn load(path: &Path, expected: Option<&Dims>) -> Result<Loaded> {
    from_bytes(&fs::read(path)?, expected)
}
