//! Binary artifact framing: `magic (4) | header_len u32 LE | JSON header | payload`.
//! The header carries `version`, `payload_len` and a CRC-32 `checksum` of the payload.

use serde_json::Value;

#[derive(Debug, thiserror::Error)]
pub enum ArtifactError {
    #[error("corrupt artifact: {0}")]
    CorruptArtifact(String),
    #[error("artifact version {found} not supported (expected {expected})")]
    VersionMismatch { found: u64, expected: u64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn corrupt(msg: impl Into<String>) -> ArtifactError {
    ArtifactError::CorruptArtifact(msg.into())
}

pub(crate) fn encode(magic: &[u8; 4], version: u64, mut header: Value, payload: &[u8]) -> Vec<u8> {
    let obj = header.as_object_mut().expect("artifact header is a JSON object");
    obj.insert("version".into(), version.into());
    obj.insert("payload_len".into(), (payload.len() as u64).into());
    obj.insert("checksum".into(), crc32fast::hash(payload).into());
    let header_bytes = serde_json::to_vec(&header).expect("header serializes");

    let mut out = Vec::with_capacity(8 + header_bytes.len() + payload.len());
    out.extend_from_slice(magic);
    out.extend_from_slice(&(header_bytes.len() as u32).to_le_bytes());
    out.extend_from_slice(&header_bytes);
    out.extend_from_slice(payload);
    out
}

/// Splits and verifies a framed artifact. Version is checked before the
/// checksum so that a newer format is reported as such.
pub(crate) fn decode<'a>(bytes: &'a [u8], magic: &[u8; 4], version: u64) -> Result<(Value, &'a [u8]), ArtifactError> {
    if bytes.len() < 8 {
        return Err(corrupt("file shorter than frame header"));
    }
    if &bytes[..4] != magic {
        return Err(corrupt("bad magic"));
    }
    let header_len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let header_end = 8usize
        .checked_add(header_len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| corrupt("header extends past end of file"))?;
    let header: Value = serde_json::from_slice(&bytes[8..header_end]).map_err(|e| corrupt(format!("header: {e}")))?;

    let found = header
        .get("version")
        .and_then(Value::as_u64)
        .ok_or_else(|| corrupt("missing version"))?;
    if found != version {
        return Err(ArtifactError::VersionMismatch {
            found,
            expected: version,
        });
    }
    let payload = &bytes[header_end..];
    let payload_len = header
        .get("payload_len")
        .and_then(Value::as_u64)
        .ok_or_else(|| corrupt("missing payload_len"))?;
    if payload.len() as u64 != payload_len {
        return Err(corrupt(format!(
            "payload is {} bytes, header says {payload_len}",
            payload.len()
        )));
    }
    let checksum = header
        .get("checksum")
        .and_then(Value::as_u64)
        .ok_or_else(|| corrupt("missing checksum"))?;
    if crc32fast::hash(payload) as u64 != checksum {
        return Err(corrupt("checksum mismatch"));
    }
    Ok((header, payload))
}

/// Little-endian cursor over a payload.
pub(crate) struct PayloadReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> PayloadReader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], ArtifactError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| corrupt("payload too short for declared layers"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub(crate) fn f32s(&mut self, n: usize) -> Result<Vec<f32>, ArtifactError> {
        Ok(self
            .take(n * 4)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub(crate) fn i8s(&mut self, n: usize) -> Result<Vec<i8>, ArtifactError> {
        Ok(self.take(n)?.iter().map(|&b| b as i8).collect())
    }

    pub(crate) fn i32s(&mut self, n: usize) -> Result<Vec<i32>, ArtifactError> {
        Ok(self
            .take(n * 4)?
            .chunks_exact(4)
            .map(|c| i32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub(crate) fn finish(self) -> Result<(), ArtifactError> {
        if self.pos != self.bytes.len() {
            return Err(corrupt("trailing bytes after payload"));
        }
        Ok(())
    }
}
