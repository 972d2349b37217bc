//! Binary checkpoint of [`MixParams`].
//!
//! Layout, little-endian: magic `HCKP`, u32 version, u32 dim, u32 tensor count,
//! u32 total value count, then per tensor a u8 tag, u32 rows, u32 cols and
//! `rows × cols` f64 values. Tensors appear in the order `W_q, v, u, W_c`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::embed::read_u32;
use crate::error::{Error, Result};
use crate::hop::{MixParams, NUM_CLASSES};

const MAGIC: &[u8; 4] = b"HCKP";
const VERSION: u32 = 1;
const N_TENSORS: u32 = 4;

fn shapes(dim: usize) -> [(usize, usize); 4] {
    [(2 * dim, dim), (dim, 1), (dim, 1), (dim, NUM_CLASSES)]
}

pub fn write_checkpoint<W: Write>(params: &MixParams, mut w: W) -> Result<()> {
    params.validate()?;
    let dim = params.dim;
    let total: usize = shapes(dim).iter().map(|(r, c)| r * c).sum();
    w.write_all(MAGIC)?;
    for v in [VERSION, dim as u32, N_TENSORS, total as u32] {
        w.write_all(&v.to_le_bytes())?;
    }
    let tensors: [&[f64]; 4] = [&params.w_q.data, &params.v, &params.u, &params.w_c.data];
    for (tag, (values, (rows, cols))) in tensors.iter().zip(shapes(dim)).enumerate() {
        w.write_all(&[tag as u8])?;
        w.write_all(&(rows as u32).to_le_bytes())?;
        w.write_all(&(cols as u32).to_le_bytes())?;
        for x in values.iter() {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<MixParams> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("bad checkpoint magic {magic:?}")));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let dim = read_u32(&mut r)? as usize;
    if dim == 0 {
        return Err(Error::Format("checkpoint dimension is zero".into()));
    }
    let n_tensors = read_u32(&mut r)?;
    if n_tensors != N_TENSORS {
        return Err(Error::Format(format!("expected {N_TENSORS} tensors, header says {n_tensors}")));
    }
    let total = read_u32(&mut r)? as usize;
    let expected: usize = shapes(dim).iter().map(|(a, b)| a * b).sum();
    if total != expected {
        return Err(Error::Format(format!("header counts {total} values, dim {dim} needs {expected}")));
    }
    let mut flat = Vec::with_capacity(expected);
    for (tag, (rows, cols)) in shapes(dim).into_iter().enumerate() {
        let mut t = [0u8; 1];
        r.read_exact(&mut t)?;
        if t[0] as usize != tag {
            return Err(Error::Format(format!("tensor {tag} has tag {}", t[0])));
        }
        let (rr, cc) = (read_u32(&mut r)? as usize, read_u32(&mut r)? as usize);
        if (rr, cc) != (rows, cols) {
            return Err(Error::Format(format!("tensor {tag} is {rr}×{cc}, expected {rows}×{cols}")));
        }
        let mut buf = vec![0u8; rows * cols * 8];
        r.read_exact(&mut buf)?;
        flat.extend(buf.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))));
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Format("trailing bytes after checkpoint".into()));
    }
    let params = MixParams::from_flat(dim, &flat)?;
    if !params.is_finite() {
        return Err(Error::Format("checkpoint holds non-finite values".into()));
    }
    Ok(params)
}

pub fn save_checkpoint(params: &MixParams, path: &Path) -> Result<()> {
    write_checkpoint(params, BufWriter::new(File::create(path)?))
}

pub fn load_checkpoint(path: &Path) -> Result<MixParams> {
    read_checkpoint(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bytes(p: &MixParams) -> Vec<u8> {
        let mut out = Vec::new();
        write_checkpoint(p, &mut out).unwrap();
        out
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let p = MixParams::random(5, 3);
        let b = bytes(&p);
        assert_eq!(b.len(), 20 + 4 * 9 + 8 * p.n_params());
        let back = read_checkpoint(&b[..]).unwrap();
        assert_eq!(back.to_flat().iter().map(|x| x.to_bits()).collect::<Vec<_>>(), p.to_flat().iter().map(|x| x.to_bits()).collect::<Vec<_>>());
        assert_eq!(bytes(&back), b);
    }

    #[test]
    fn corruption_is_rejected() {
        let b = bytes(&MixParams::random(3, 1));
        let mut bad = b.clone();
        bad[0] = b'X';
        assert!(matches!(read_checkpoint(&bad[..]), Err(Error::Format(_))));
        let mut bad = b.clone();
        bad[4] = 2;
        assert!(matches!(read_checkpoint(&bad[..]), Err(Error::Format(_))));
        let mut bad = b.clone();
        bad[8] = 4;
        assert!(matches!(read_checkpoint(&bad[..]), Err(Error::Format(_))));
        let mut bad = b.clone();
        bad[12] = 3;
        assert!(matches!(read_checkpoint(&bad[..]), Err(Error::Format(_))));
        let mut bad = b.clone();
        bad[20] = 7;
        assert!(matches!(read_checkpoint(&bad[..]), Err(Error::Format(_))));
        assert!(matches!(read_checkpoint(&b[..b.len() - 3]), Err(Error::Io(_))));
        let mut long = b.clone();
        long.push(0);
        assert!(matches!(read_checkpoint(&long[..]), Err(Error::Format(_))));
        let mut nan = b;
        let at = 20 + 9;
        nan[at..at + 8].copy_from_slice(&f64::NAN.to_le_bytes());
        assert!(matches!(read_checkpoint(&nan[..]), Err(Error::Format(_))));
    }
}
