//! Frame trace export and import.
//!
//! Binary layout (all integers and floats little-endian, columns stored
//! back to back):
//!
//! ```text
//! offset  size          field
//! 0       8             magic "COCATRC1"
//! 8       4   u32       format version (1)
//! 12      4   u32       flags; bit 0 set when vectors are present
//! 16      8   u64       record count n
//! 24      4   u32       slots per record s (0 without vectors)
//! 28      4   u32       vector dimension d (0 without vectors)
//! 32      8n  u64[n]    frame_index
//!         4n  u32[n]    client_id
//!         4n  u32[n]    true_label
//!         4nsd f32[n][s][d]  slot vectors, only when flag bit 0 is set
//! ```
//!
//! The CSV variant carries labels only: `frame_index,client_id,true_label`.

use std::io::{Read, Write};

use crate::cachemath::SemanticVector;
use crate::error::{CocaError, Result};

pub const TRACE_MAGIC: &[u8; 8] = b"COCATRC1";
pub const TRACE_VERSION: u32 = 1;
const FLAG_VECTORS: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub frame_index: u64,
    pub client_id: u32,
    pub true_label: u32,
    pub vectors: Option<Vec<SemanticVector>>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    pub records: Vec<TraceRecord>,
}

impl Trace {
    pub fn push(&mut self, record: TraceRecord) {
        self.records.push(record);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Label sequence of one client in frame order.
    pub fn labels_for(&self, client_id: u32) -> Vec<usize> {
        let mut recs: Vec<&TraceRecord> = self.records.iter().filter(|r| r.client_id == client_id).collect();
        recs.sort_by_key(|r| r.frame_index);
        recs.into_iter().map(|r| r.true_label as usize).collect()
    }

    fn vector_shape(&self) -> Result<Option<(usize, usize)>> {
        let mut shape = None;
        for r in &self.records {
            let this = r.vectors.as_ref().map(|v| (v.len(), v.first().map_or(0, |x| x.dim())));
            match (shape, this) {
                (None, s) => shape = Some(s),
                (Some(a), b) if a == b => {}
                _ => return Err(CocaError::format("trace", "records mix vector shapes or vector presence")),
            }
        }
        Ok(shape.flatten())
    }

    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        let shape = self.vector_shape()?;
        let (slots, dim) = shape.unwrap_or((0, 0));
        w.write_all(TRACE_MAGIC)?;
        w.write_all(&TRACE_VERSION.to_le_bytes())?;
        w.write_all(&(if shape.is_some() { FLAG_VECTORS } else { 0 }).to_le_bytes())?;
        w.write_all(&(self.records.len() as u64).to_le_bytes())?;
        w.write_all(&(slots as u32).to_le_bytes())?;
        w.write_all(&(dim as u32).to_le_bytes())?;
        for r in &self.records {
            w.write_all(&r.frame_index.to_le_bytes())?;
        }
        for r in &self.records {
            w.write_all(&r.client_id.to_le_bytes())?;
        }
        for r in &self.records {
            w.write_all(&r.true_label.to_le_bytes())?;
        }
        if shape.is_some() {
            for r in &self.records {
                for v in r.vectors.iter().flatten() {
                    for c in v.as_slice() {
                        w.write_all(&(*c as f32).to_le_bytes())?;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != TRACE_MAGIC {
            return Err(CocaError::format("trace", "bad magic"));
        }
        let version = read_u32(&mut r)?;
        if version != TRACE_VERSION {
            return Err(CocaError::format("trace", format!("unsupported version {version}")));
        }
        let flags = read_u32(&mut r)?;
        let n = read_u64(&mut r)? as usize;
        let slots = read_u32(&mut r)? as usize;
        let dim = read_u32(&mut r)? as usize;
        let frames = (0..n).map(|_| read_u64(&mut r)).collect::<Result<Vec<_>>>()?;
        let clients = (0..n).map(|_| read_u32(&mut r)).collect::<Result<Vec<_>>>()?;
        let labels = (0..n).map(|_| read_u32(&mut r)).collect::<Result<Vec<_>>>()?;
        let mut records = Vec::with_capacity(n);
        for i in 0..n {
            let vectors = if flags & FLAG_VECTORS != 0 {
                let mut vs = Vec::with_capacity(slots);
                for _ in 0..slots {
                    let comps = (0..dim).map(|_| read_f32(&mut r).map(f64::from)).collect::<Result<Vec<_>>>()?;
                    let v = SemanticVector::normalized(comps)
                        .ok_or_else(|| CocaError::format("trace", "zero vector in trace"))?;
                    vs.push(v);
                }
                Some(vs)
            } else {
                None
            };
            records.push(TraceRecord { frame_index: frames[i], client_id: clients[i], true_label: labels[i], vectors });
        }
        Ok(Trace { records })
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "frame_index,client_id,true_label")?;
        for r in &self.records {
            writeln!(w, "{},{},{}", r.frame_index, r.client_id, r.true_label)?;
        }
        Ok(())
    }

    pub fn read_csv<R: Read>(mut r: R) -> Result<Self> {
        let mut text = String::new();
        r.read_to_string(&mut text)?;
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h.trim() == "frame_index,client_id,true_label" => {}
            _ => return Err(CocaError::format("trace csv", "missing header")),
        }
        let mut records = Vec::new();
        for (n, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let bad = || CocaError::format("trace csv", format!("line {}: {line:?}", n + 2));
            if fields.len() != 3 {
                return Err(bad());
            }
            records.push(TraceRecord {
                frame_index: fields[0].parse().map_err(|_| bad())?,
                client_id: fields[1].parse().map_err(|_| bad())?,
                true_label: fields[2].parse().map_err(|_| bad())?,
                vectors: None,
            });
        }
        Ok(Trace { records })
    }
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) fn read_f32<R: Read>(r: &mut R) -> Result<f32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(f32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn labels_only(n: usize) -> Trace {
        Trace {
            records: (0..n)
                .map(|i| TraceRecord {
                    frame_index: i as u64,
                    client_id: (i % 3) as u32,
                    true_label: (i * 7 % 11) as u32,
                    vectors: None,
                })
                .collect(),
        }
    }

    #[test]
    fn binary_header_layout() {
        let mut buf = Vec::new();
        labels_only(2).write_binary(&mut buf).unwrap();
        assert_eq!(&buf[..8], TRACE_MAGIC);
        assert_eq!(u64::from_le_bytes(buf[16..24].try_into().unwrap()), 2);
        assert_eq!(buf.len(), 32 + 2 * 8 + 2 * 4 + 2 * 4);
    }

    #[test]
    fn vectors_survive_binary_roundtrip_to_f32_precision() {
        let v = SemanticVector::normalized(vec![0.1, -0.7, 0.3]).unwrap();
        let trace = Trace {
            records: vec![TraceRecord {
                frame_index: 5,
                client_id: 1,
                true_label: 2,
                vectors: Some(vec![v.clone(), v.clone()]),
            }],
        };
        let mut buf = Vec::new();
        trace.write_binary(&mut buf).unwrap();
        let back = Trace::read_binary(buf.as_slice()).unwrap();
        let got = back.records[0].vectors.as_ref().unwrap();
        for (a, b) in got[1].as_slice().iter().zip(v.as_slice()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn mixed_vector_presence_is_rejected() {
        let mut t = labels_only(1);
        t.push(TraceRecord {
            frame_index: 9,
            client_id: 0,
            true_label: 0,
            vectors: Some(vec![SemanticVector::basis(2, 0)]),
        });
        assert!(t.write_binary(Vec::new()).is_err());
    }

    #[test]
    fn bad_inputs_are_rejected() {
        assert!(Trace::read_binary(&b"NOTATRACE_______________________"[..]).is_err());
        assert!(Trace::read_csv(&b"a,b\n1,2\n"[..]).is_err());
        assert!(Trace::read_csv(&b"frame_index,client_id,true_label\n1,x,2\n"[..]).is_err());
    }

    #[test]
    fn labels_for_orders_by_frame() {
        let mut t = Trace::default();
        for (f, l) in [(2u64, 9u32), (0, 4), (1, 6)] {
            t.push(TraceRecord { frame_index: f, client_id: 3, true_label: l, vectors: None });
        }
        assert_eq!(t.labels_for(3), vec![4, 6, 9]);
    }

    proptest! {
        #[test]
        fn label_traces_roundtrip(n in 0usize..200) {
            let t = labels_only(n);
            let mut bin = Vec::new();
            t.write_binary(&mut bin).unwrap();
            prop_assert_eq!(&Trace::read_binary(bin.as_slice()).unwrap(), &t);
            let mut csv = Vec::new();
            t.write_csv(&mut csv).unwrap();
            prop_assert_eq!(&Trace::read_csv(csv.as_slice()).unwrap(), &t);
        }
    }
}
