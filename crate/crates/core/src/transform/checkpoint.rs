//! Binary parameter checkpoints.
//!
//! Layout: 8-byte magic, little-endian `u64` header length, JSON header,
//! little-endian `u64` parameter count, then the parameters as `f64` LE.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::net::{Architecture, TransformNet};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"DCCAPRM1";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    architecture: Architecture,
}

pub fn write_checkpoint<W: Write>(mut out: W, net: &TransformNet) -> Result<()> {
    let header = serde_json::to_vec(&Header { version: VERSION, architecture: *net.architecture() })?;
    out.write_all(MAGIC)?;
    out.write_all(&(header.len() as u64).to_le_bytes())?;
    out.write_all(&header)?;
    out.write_all(&(net.params().len() as u64).to_le_bytes())?;
    for p in net.params() {
        out.write_all(&p.to_le_bytes())?;
    }
    Ok(())
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<TransformNet> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a parameter checkpoint (bad magic)".into()));
    }
    let len = read_u64(&mut r)? as usize;
    if len > 1 << 20 {
        return Err(Error::Format(format!("checkpoint header too large ({len} bytes)")));
    }
    let mut header = vec![0u8; len];
    r.read_exact(&mut header)?;
    let header: Header = serde_json::from_slice(&header)?;
    if header.version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {}", header.version)));
    }
    let count = read_u64(&mut r)? as usize;
    if count != header.architecture.param_count() {
        return Err(Error::ArchitectureMismatch(format!(
            "checkpoint stores {count} parameters, architecture needs {}",
            header.architecture.param_count()
        )));
    }
    let mut params = Vec::with_capacity(count);
    let mut b = [0u8; 8];
    for _ in 0..count {
        r.read_exact(&mut b)?;
        params.push(f64::from_le_bytes(b));
    }
    TransformNet::from_params(header.architecture, params)
}

pub fn save_checkpoint(path: &Path, net: &TransformNet) -> Result<()> {
    let f = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(f);
    write_checkpoint(&mut w, net)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<TransformNet> {
    read_checkpoint(std::io::BufReader::new(std::fs::File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bitwise() {
        let arch = Architecture { channels: 2, hidden: 3, kernel: 5, blocks: 1, head_layers: 2 };
        let params: Vec<f64> = (0..arch.param_count()).map(|i| (i as f64 * 0.37).sin() / 3.0).collect();
        let net = TransformNet::from_params(arch, params).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &net).unwrap();
        let back = read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(back.architecture(), net.architecture());
        let a: Vec<u64> = net.params().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = back.params().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn bad_magic_is_rejected() {
        assert!(matches!(read_checkpoint(&b"NOTMAGIC\0\0\0\0\0\0\0\0"[..]), Err(Error::Format(_))));
    }
}
