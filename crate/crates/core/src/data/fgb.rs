//! FGB v1 binary graph container (all integers little-endian):
//!
//! ```text
//! "FGB1" | u32 version | u64 n | u64 undirected edges | u32 d | u32 c
//! row_ptr u64×(n+1) | col_idx u64×2m | features f32×n·d | labels u32×n
//! train, val, test masks: ⌈n/8⌉ bytes each, LSB-first
//! ```

use std::path::Path;

use super::DataError;
use crate::graph::{Graph, GraphError, GraphParts, Split};

pub const FGB_MAGIC: [u8; 4] = *b"FGB1";
pub const FGB_VERSION: u32 = 1;
const HEADER: usize = 4 + 4 + 8 + 8 + 4 + 4;

fn fmt_err(offset: usize, reason: impl Into<String>) -> DataError {
    DataError::Format { offset, reason: reason.into() }
}

pub fn encode_fgb(graph: &Graph) -> Vec<u8> {
    let n = graph.num_nodes();
    let mut out = Vec::new();
    out.extend_from_slice(&FGB_MAGIC);
    out.extend_from_slice(&FGB_VERSION.to_le_bytes());
    out.extend_from_slice(&(n as u64).to_le_bytes());
    out.extend_from_slice(&(graph.num_edges() as u64).to_le_bytes());
    out.extend_from_slice(&(graph.feature_dim() as u32).to_le_bytes());
    out.extend_from_slice(&graph.num_classes().to_le_bytes());
    for &p in graph.row_ptr() {
        out.extend_from_slice(&(p as u64).to_le_bytes());
    }
    for &c in graph.col_idx() {
        out.extend_from_slice(&(c as u64).to_le_bytes());
    }
    for &x in graph.features() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    for &y in graph.labels() {
        out.extend_from_slice(&y.to_le_bytes());
    }
    for split in [Split::Train, Split::Val, Split::Test] {
        let mut bits = vec![0u8; n.div_ceil(8)];
        for (i, _) in graph.mask(split).iter().enumerate().filter(|(_, &b)| b) {
            bits[i / 8] |= 1 << (i % 8);
        }
        out.extend_from_slice(&bits);
    }
    out
}

pub fn write_fgb(graph: &Graph, path: &Path) -> Result<(), DataError> {
    std::fs::write(path, encode_fgb(graph))?;
    Ok(())
}

pub fn load_fgb(path: &Path) -> Result<Graph, DataError> {
    decode_fgb(&std::fs::read(path)?)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], DataError> {
        if self.buf.len() - self.pos < n {
            return Err(fmt_err(self.pos, format!("truncated {what}")));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self, what: &str) -> Result<u32, DataError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
    fn u64(&mut self, what: &str) -> Result<u64, DataError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

/// Byte offsets of each section, derived from the header.
struct Layout {
    row_ptr: usize,
    col_idx: usize,
    features: usize,
    labels: usize,
    masks: usize,
    mask_len: usize,
    end: usize,
}

fn layout(n: u64, m: u64, d: u32) -> Option<Layout> {
    let n = usize::try_from(n).ok()?;
    let nnz = usize::try_from(m).ok()?.checked_mul(2)?;
    let row_ptr = HEADER;
    let col_idx = row_ptr.checked_add(n.checked_add(1)?.checked_mul(8)?)?;
    let features = col_idx.checked_add(nnz.checked_mul(8)?)?;
    let labels = features.checked_add(n.checked_mul(d as usize)?.checked_mul(4)?)?;
    let masks = labels.checked_add(n.checked_mul(4)?)?;
    let mask_len = n.div_ceil(8);
    let end = masks.checked_add(mask_len.checked_mul(3)?)?;
    Some(Layout { row_ptr, col_idx, features, labels, masks, mask_len, end })
}

pub fn decode_fgb(bytes: &[u8]) -> Result<Graph, DataError> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    if c.take(4, "magic")? != FGB_MAGIC {
        return Err(fmt_err(0, "bad magic"));
    }
    let version = c.u32("version")?;
    if version != FGB_VERSION {
        return Err(fmt_err(4, format!("unsupported version {version}")));
    }
    let n = c.u64("node count")?;
    let m = c.u64("edge count")?;
    let d = c.u32("feature dim")?;
    let classes = c.u32("class count")?;
    if n == 0 {
        return Err(fmt_err(8, "graph has no nodes"));
    }
    let lay = layout(n, m, d).ok_or_else(|| fmt_err(8, "header sizes overflow"))?;
    if bytes.len() < lay.end {
        return Err(fmt_err(bytes.len(), format!("truncated: header implies {} bytes, file has {}", lay.end, bytes.len())));
    }
    if bytes.len() > lay.end {
        return Err(fmt_err(lay.end, format!("{} trailing bytes", bytes.len() - lay.end)));
    }
    let n = n as usize;
    let nnz = 2 * m as usize;

    let mut row_ptr = Vec::with_capacity(n + 1);
    for i in 0..=n {
        let off = c.pos;
        let v = c.u64("row_ptr")?;
        row_ptr.push(usize::try_from(v).map_err(|_| fmt_err(off, format!("row_ptr[{i}] too large")))?);
    }
    if row_ptr[n] != nnz {
        return Err(fmt_err(lay.row_ptr + 8 * n, format!("row_ptr[n] = {} but header implies {nnz}", row_ptr[n])));
    }
    let mut col_idx = Vec::with_capacity(nnz);
    for _ in 0..nnz {
        let v = c.u64("col_idx")?;
        col_idx.push(usize::try_from(v).unwrap_or(usize::MAX));
    }
    let features: Vec<f32> =
        c.take(n * d as usize * 4, "features")?.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
    let labels: Vec<u32> =
        c.take(n * 4, "labels")?.chunks_exact(4).map(|b| u32::from_le_bytes(b.try_into().unwrap())).collect();
    let mut masks = Vec::with_capacity(3);
    for k in 0..3 {
        let bits = c.take(lay.mask_len, "mask")?;
        if n % 8 != 0 && bits[lay.mask_len - 1] >> (n % 8) != 0 {
            return Err(fmt_err(lay.masks + (k + 1) * lay.mask_len - 1, "mask padding bits set"));
        }
        masks.push((0..n).map(|i| bits[i / 8] >> (i % 8) & 1 == 1).collect::<Vec<bool>>());
    }
    let test_mask = masks.pop().unwrap();
    let val_mask = masks.pop().unwrap();
    let train_mask = masks.pop().unwrap();

    let row_start = row_ptr.clone();
    let parts = GraphParts {
        row_ptr,
        col_idx,
        features,
        feature_dim: d as usize,
        num_classes: classes,
        labels,
        train_mask,
        val_mask,
        test_mask,
    };
    Graph::from_parts(parts).map_err(|e| {
        let edge_off = |u: usize| lay.col_idx + 8 * row_start.get(u).copied().unwrap_or(0);
        let offset = match &e {
            GraphError::Empty | GraphError::RowPtr(_) => lay.row_ptr,
            GraphError::ColumnOutOfRange { pos, .. } => lay.col_idx + 8 * pos,
            GraphError::SelfLoop(u) | GraphError::DuplicateEdge(u, _) | GraphError::Asymmetric(u, _) => edge_off(*u),
            GraphError::FeatureShape { .. } => lay.features,
            GraphError::NonFiniteFeature(u) => lay.features + 4 * d as usize * u,
            GraphError::LabelOutOfRange { node, .. } => lay.labels + 4 * node,
            GraphError::Length(..) => lay.labels,
            GraphError::OverlappingMasks(u) => lay.masks + u / 8,
        };
        fmt_err(offset, e.to_string())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{sbm_generate, SbmParams};

    fn small() -> Graph {
        sbm_generate(&SbmParams { blocks: 3, nodes_per_block: 7, p_in: 0.5, p_out: 0.05, feature_dim: 3, seed: 4 }).unwrap()
    }

    #[test]
    fn roundtrip_is_bit_identical() {
        let g = small();
        let bytes = encode_fgb(&g);
        let back = decode_fgb(&bytes).unwrap();
        assert_eq!(back, g);
        assert_eq!(encode_fgb(&back), bytes);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.fgb");
        write_fgb(&g, &path).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), bytes);
        assert_eq!(load_fgb(&path).unwrap(), g);
    }

    #[test]
    fn every_truncation_is_a_format_error() {
        let bytes = encode_fgb(&small());
        for cut in 0..bytes.len() {
            assert!(matches!(decode_fgb(&bytes[..cut]), Err(DataError::Format { .. })), "cut {cut}");
        }
    }

    #[test]
    fn empty_graph_rejected() {
        let mut bytes = encode_fgb(&small());
        bytes[8..16].copy_from_slice(&0u64.to_le_bytes());
        assert!(matches!(decode_fgb(&bytes), Err(DataError::Format { offset: 8, .. })));
    }

    #[test]
    fn asymmetric_rejected_with_offset() {
        // path 0-1-2; rewrite the 1->2 entry as 1->0 duplicate-free asymmetry
        let g = Graph::from_edges(3, &[(0, 1), (1, 2)], vec![0.0; 3], 1, 1, vec![0; 3], [vec![true; 3], vec![false; 3], vec![false; 3]])
            .unwrap();
        let mut bytes = encode_fgb(&g);
        let col = HEADER + 8 * 4;
        // col_idx = [1, 0, 2, 1]; make node 2's neighbor 0 instead of 1
        bytes[col + 24..col + 32].copy_from_slice(&0u64.to_le_bytes());
        match decode_fgb(&bytes) {
            Err(DataError::Format { offset, reason }) => {
                assert!(reason.contains("reverse"), "{reason}");
                assert!(offset >= col);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn header_lies_do_not_allocate() {
        let mut bytes = encode_fgb(&small());
        bytes[8..16].copy_from_slice(&u64::MAX.to_le_bytes());
        assert!(decode_fgb(&bytes).is_err());
        let mut bytes = encode_fgb(&small());
        bytes[24..28].copy_from_slice(&u32::MAX.to_le_bytes());
        assert!(decode_fgb(&bytes).is_err());
    }

    proptest::proptest! {
        #[test]
        fn arbitrary_bytes_never_panic(bytes in proptest::collection::vec(proptest::prelude::any::<u8>(), 0..200)) {
            let _ = decode_fgb(&bytes);
        }

        #[test]
        fn corrupted_files_never_panic(pos in 0usize..400, byte in proptest::prelude::any::<u8>()) {
            let mut bytes = encode_fgb(&small());
            let i = pos % bytes.len();
            bytes[i] = byte;
            let _ = decode_fgb(&bytes);
        }
    }
}
