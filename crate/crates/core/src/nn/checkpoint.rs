//! Binary network container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes   "VCNET\0\0\x01"   (last byte: format version)
//! kind     u8        0 = RNN, 1 = LSTM, 2 = BiLSTM
//! hidden   u64
//! layers   u64
//! input    u64
//! output   u64
//! count    u32       number of tensors that follow
//! tensor   name_len u16, name (UTF-8), rows u64, cols u64, rows*cols f64
//! ```
//!
//! Tensors appear in [`StackedNet::named_tensors`] order and are checked by
//! name and shape on load. Values are stored as raw IEEE-754 bits, so a save
//! and load round trip is bit-exact.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::ndcore::Rng;
use crate::nn::net::{init_net, StackedNet};

pub const NET_MAGIC: [u8; 8] = *b"VCNET\0\0\x01";

pub(crate) fn io_err(e: std::io::Error) -> Error {
    Error::Format(format!("checkpoint I/O: {e}"))
}

pub(crate) fn write_u64(w: &mut impl Write, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes()).map_err(io_err)
}

pub(crate) fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(io_err)?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) fn read_usize(r: &mut impl Read, what: &str) -> Result<usize> {
    let v = read_u64(r)?;
    usize::try_from(v)
        .ok()
        .filter(|&v| v <= 1 << 32)
        .ok_or_else(|| Error::Format(format!("implausible {what} in checkpoint: {v}")))
}

pub(crate) fn write_str(w: &mut impl Write, s: &str) -> Result<()> {
    let len = u16::try_from(s.len()).map_err(|_| Error::param("string too long for checkpoint"))?;
    w.write_all(&len.to_le_bytes()).map_err(io_err)?;
    w.write_all(s.as_bytes()).map_err(io_err)
}

pub(crate) fn read_str(r: &mut impl Read) -> Result<String> {
    let mut b = [0u8; 2];
    r.read_exact(&mut b).map_err(io_err)?;
    let mut buf = vec![0u8; u16::from_le_bytes(b) as usize];
    r.read_exact(&mut buf).map_err(io_err)?;
    String::from_utf8(buf).map_err(|_| Error::Format("checkpoint string is not UTF-8".into()))
}

pub(crate) fn write_f64s(w: &mut impl Write, data: &[f64]) -> Result<()> {
    let mut buf = Vec::with_capacity(data.len() * 8);
    for v in data {
        buf.extend_from_slice(&v.to_bits().to_le_bytes());
    }
    w.write_all(&buf).map_err(io_err)
}

pub(crate) fn read_f64s(r: &mut impl Read, out: &mut [f64]) -> Result<()> {
    let mut buf = vec![0u8; out.len() * 8];
    r.read_exact(&mut buf).map_err(io_err)?;
    for (v, chunk) in out.iter_mut().zip(buf.chunks_exact(8)) {
        *v = f64::from_bits(u64::from_le_bytes(chunk.try_into().expect("8-byte chunk")));
    }
    Ok(())
}

pub fn write_net(w: &mut impl Write, net: &StackedNet) -> Result<()> {
    net.validate()?;
    w.write_all(&NET_MAGIC).map_err(io_err)?;
    w.write_all(&[net.kind_tag()]).map_err(io_err)?;
    for v in [net.hidden, net.layer_count(), net.input_dim, net.output_dim] {
        write_u64(w, v as u64)?;
    }
    let tensors = net.named_tensors();
    w.write_all(&(tensors.len() as u32).to_le_bytes()).map_err(io_err)?;
    for (name, t) in tensors {
        write_str(w, &name)?;
        write_u64(w, t.rows as u64)?;
        write_u64(w, t.cols as u64)?;
        write_f64s(w, t.data)?;
    }
    Ok(())
}

pub fn read_net(r: &mut impl Read) -> Result<StackedNet> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(io_err)?;
    if magic[..7] != NET_MAGIC[..7] {
        return Err(Error::Format("not a network checkpoint (bad magic)".into()));
    }
    if magic[7] != NET_MAGIC[7] {
        return Err(Error::Format(format!(
            "unsupported network checkpoint version {}",
            magic[7]
        )));
    }
    let mut tag = [0u8; 1];
    r.read_exact(&mut tag).map_err(io_err)?;
    let kind = StackedNet::kind_from_tag(tag[0])
        .ok_or_else(|| Error::Format(format!("unknown model kind tag {}", tag[0])))?;
    let hidden = read_usize(r, "hidden size")?;
    let layers = read_usize(r, "layer count")?;
    let input = read_usize(r, "input dim")?;
    let output = read_usize(r, "output dim")?;
    let mut net = init_net(kind, input, output, hidden, layers, &mut Rng::new(0))
        .map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;

    let mut count = [0u8; 4];
    r.read_exact(&mut count).map_err(io_err)?;
    let expected = net.named_tensors();
    if u32::from_le_bytes(count) as usize != expected.len() {
        return Err(Error::Format(format!(
            "checkpoint holds {} tensors, architecture needs {}",
            u32::from_le_bytes(count),
            expected.len()
        )));
    }
    let meta: Vec<(String, usize, usize)> = expected
        .into_iter()
        .map(|(n, t)| (n, t.rows, t.cols))
        .collect();
    for ((name, rows, cols), slot) in meta.into_iter().zip(net.tensors_mut()) {
        let got = read_str(r)?;
        let (gr, gc) = (read_usize(r, "rows")?, read_usize(r, "cols")?);
        if got != name || gr != rows || gc != cols {
            return Err(Error::Format(format!(
                "expected tensor {name} ({rows}x{cols}), found {got} ({gr}x{gc})"
            )));
        }
        read_f64s(r, slot)?;
    }
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ModelKind;

    #[test]
    fn round_trip_is_bit_exact() {
        for kind in ModelKind::ALL {
            let mut net = init_net(kind, 3, 2, 4, 2, &mut Rng::new(17)).unwrap();
            net.head_b[0] = f64::MIN_POSITIVE / 3.0;
            net.head_b[1] = -0.0;
            let mut buf = Vec::new();
            write_net(&mut buf, &net).unwrap();
            let back = read_net(&mut buf.as_slice()).unwrap();
            let bits = |n: &StackedNet| -> Vec<u64> {
                n.tensors().iter().flat_map(|t| t.iter().map(|v| v.to_bits())).collect()
            };
            assert_eq!(bits(&net), bits(&back));
            assert_eq!(back.kind, kind);
        }
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let net = init_net(ModelKind::Lstm, 1, 1, 2, 1, &mut Rng::new(1)).unwrap();
        let mut buf = Vec::new();
        write_net(&mut buf, &net).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_net(&mut bad.as_slice()), Err(Error::Format(_))));
        let short = &buf[..buf.len() - 3];
        assert!(read_net(&mut &short[..]).is_err());
    }
}
