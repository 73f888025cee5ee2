//! Weight file encoding.
//!
//! ```text
//! SPMSEG-UNET v1
//! depth: 3
//! base_channels: 8
//! input_size: 128
//! optimizer: adam lr=0.001 ...
//! params: 38
//! param: enc0.conv1.weight 8x1x3x3 offset=0 count=72
//! ...
//! end_header
//! <little-endian f32 payload, tensors in the order listed>
//! ```
//!
//! Offsets are byte offsets into the payload.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write;

use super::model::{ModelWeights, Param, UNetSpec};
use super::tensor::Tensor4;
use crate::{Error, Result};

const MAGIC: &str = "SPMSEG-UNET v1";
const END: &str = "end_header";

/// Encodes weights. Values are stored as `f32`; weights produced by
/// [`super::build_unet`] and [`super::train`] are already `f32`-exact.
pub fn to_bytes(w: &ModelWeights, optimizer: &str) -> Vec<u8> {
    let mut head = String::new();
    let _ = writeln!(head, "{MAGIC}");
    let _ = writeln!(head, "depth: {}", w.spec.depth);
    let _ = writeln!(head, "base_channels: {}", w.spec.base_channels);
    let _ = writeln!(head, "input_size: {}", w.spec.input_size);
    let _ = writeln!(head, "optimizer: {}", optimizer.replace('\n', " "));
    let _ = writeln!(head, "params: {}", w.params.len());
    let mut offset = 0;
    for p in &w.params {
        let [a, b, c, d] = p.tensor.shape();
        let count = p.tensor.len();
        let _ = writeln!(head, "param: {} {a}x{b}x{c}x{d} offset={offset} count={count}", p.name);
        offset += 4 * count;
    }
    let _ = writeln!(head, "{END}");
    let mut out = head.into_bytes();
    out.reserve(offset);
    for p in &w.params {
        for &v in p.tensor.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodedWeights {
    pub weights: ModelWeights,
    pub optimizer: String,
}

fn fmt_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

fn field<'a>(line: Option<&'a str>, key: &str) -> Result<&'a str> {
    let line = line.ok_or_else(|| fmt_err(format!("header ends before `{key}`")))?;
    line.strip_prefix(key)
        .and_then(|r| r.strip_prefix(": "))
        .ok_or_else(|| fmt_err(format!("expected `{key}: ...`, found `{line}`")))
}

fn number(s: &str, what: &str) -> Result<usize> {
    s.trim().parse().map_err(|_| fmt_err(format!("bad {what} `{s}`")))
}

pub fn from_bytes(bytes: &[u8]) -> Result<DecodedWeights> {
    let end_marker = format!("\n{END}\n");
    let split = bytes
        .windows(end_marker.len())
        .position(|w| w == end_marker.as_bytes())
        .ok_or_else(|| fmt_err("missing end_header line"))?;
    let header = core::str::from_utf8(&bytes[..split]).map_err(|_| fmt_err("header is not UTF-8"))?;
    let payload = &bytes[split + end_marker.len()..];

    let mut lines = header.lines();
    if lines.next() != Some(MAGIC) {
        return Err(fmt_err("not a weight file (bad magic line)"));
    }
    let spec = UNetSpec {
        depth: number(field(lines.next(), "depth")?, "depth")?,
        base_channels: number(field(lines.next(), "base_channels")?, "base_channels")?,
        input_size: number(field(lines.next(), "input_size")?, "input_size")?,
    };
    let optimizer = field(lines.next(), "optimizer")?.to_string();
    let count = number(field(lines.next(), "params")?, "params")?;

    let mut params = Vec::with_capacity(count);
    let mut expected_offset = 0usize;
    for _ in 0..count {
        let rest = field(lines.next(), "param")?;
        let parts: Vec<&str> = rest.split(' ').collect();
        if parts.len() != 4 {
            return Err(fmt_err(format!("malformed param line `{rest}`")));
        }
        let dims: Vec<usize> = parts[1].split('x').map(|d| number(d, "dimension")).collect::<Result<_>>()?;
        let shape: [usize; 4] = dims
            .try_into()
            .map_err(|_| fmt_err(format!("`{}` needs four dimensions", parts[0])))?;
        let offset = number(parts[2].strip_prefix("offset=").unwrap_or("?"), "offset")?;
        let n = number(parts[3].strip_prefix("count=").unwrap_or("?"), "count")?;
        if n != shape.iter().product::<usize>() || offset != expected_offset {
            return Err(fmt_err(format!("inconsistent manifest entry for `{}`", parts[0])));
        }
        let end = offset + 4 * n;
        let chunk = payload.get(offset..end).ok_or_else(|| {
            fmt_err(format!(
                "payload truncated: `{}` needs bytes {offset}..{end}, file has {}",
                parts[0],
                payload.len()
            ))
        })?;
        let data = chunk
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        params.push(Param {
            name: parts[0].to_string(),
            tensor: Tensor4::new(shape, data)?,
        });
        expected_offset = end;
    }
    if lines.next().is_some() {
        return Err(fmt_err("unexpected lines after the parameter manifest"));
    }
    if payload.len() != expected_offset {
        return Err(fmt_err(format!(
            "payload has {} bytes, manifest describes {expected_offset}",
            payload.len()
        )));
    }
    let weights = ModelWeights { spec, params };
    weights.check_spec(&spec)?;
    Ok(DecodedWeights { weights, optimizer })
}

/// Decodes and checks against an expected architecture.
pub fn from_bytes_for(bytes: &[u8], spec: &UNetSpec) -> Result<DecodedWeights> {
    let decoded = from_bytes(bytes)?;
    decoded.weights.check_spec(spec)?;
    Ok(decoded)
}
