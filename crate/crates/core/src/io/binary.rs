//! Framing shared by the binary formats: 4-byte magic, u16 version,
//! u32-length-prefixed JSON header, then a little-endian payload.

use std::io::{Read, Write};

use crate::error::{Error, Result};

pub fn write_header(w: &mut impl Write, magic: &[u8; 4], version: u16, header: &serde_json::Value) -> Result<()> {
    let json = serde_json::to_vec(header)?;
    w.write_all(magic)?;
    w.write_all(&version.to_le_bytes())?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    Ok(())
}

pub fn read_header(r: &mut impl Read, magic: &[u8; 4], supported: u16) -> Result<serde_json::Value> {
    let what = String::from_utf8_lossy(magic).into_owned();
    let mut m = [0u8; 4];
    r.read_exact(&mut m).map_err(|_| Error::Format(format!("not a {what} file: too short")))?;
    if &m != magic {
        return Err(Error::Format(format!("not a {what} file: bad magic {m:?}")));
    }
    let mut v = [0u8; 2];
    r.read_exact(&mut v).map_err(|_| Error::Format(format!("{what} header truncated")))?;
    let version = u16::from_le_bytes(v);
    if version != supported {
        return Err(Error::Format(format!(
            "unsupported {what} version {version} (this build reads version {supported})"
        )));
    }
    let len = read_u32(r)? as usize;
    let mut json = vec![0u8; len];
    r.read_exact(&mut json)
        .map_err(|_| Error::Format(format!("{what} header truncated")))?;
    Ok(serde_json::from_slice(&json)?)
}

pub fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|_| Error::Format("unexpected end of file".into()))?;
    Ok(u32::from_le_bytes(b))
}

pub fn write_f32s(w: &mut impl Write, values: &[f32]) -> Result<()> {
    let mut buf = Vec::with_capacity(values.len() * 4);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_f32s(r: &mut impl Read, n: usize) -> Result<Vec<f32>> {
    let mut buf = vec![0u8; n * 4];
    r.read_exact(&mut buf)
        .map_err(|_| Error::Format(format!("payload truncated: expected {n} values")))?;
    Ok(buf
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

pub fn expect_eof(r: &mut impl Read) -> Result<()> {
    let mut b = [0u8; 1];
    match r.read(&mut b)? {
        0 => Ok(()),
        _ => Err(Error::Format("trailing bytes after payload".into())),
    }
}
