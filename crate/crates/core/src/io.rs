//! Embedding sets and their on-disk formats.
//!
//! Two formats are supported:
//!
//! * CSV: a header line `# ood-protect v1 dim=<d> k=<K> labels=<0|1> pred=<0|1>`
//!   followed by one row per vector: `d` comma-separated floats, then the
//!   optional label, then the optional prediction.
//! * Packed binary, little-endian: magic `OODP`, version `u16 = 1`, `d: u32`,
//!   `N: u64`, `K: u32`, `flags: u8` (bit 0 labels, bit 1 predictions), then
//!   `N * d` row-major `f32`, then `N` `u32` labels and `N` `u32` predictions
//!   when flagged.
//!
//! Vectors are stored as `f32`. Everything downstream widens to `f64`.

use std::fmt::Write as _;
use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::Rng;

pub const CSV_MAGIC: &str = "# ood-protect v1";
pub const BINARY_MAGIC: &[u8; 4] = b"OODP";
pub const BINARY_VERSION: u16 = 1;

const FLAG_LABELS: u8 = 0b01;
const FLAG_PRED: u8 = 0b10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Binary,
}

impl Format {
    /// Guess from the extension: `.csv` is CSV, anything else binary.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => Format::Csv,
            _ => Format::Binary,
        }
    }
}

/// Feature vectors in a model's penultimate-layer space, with optional true
/// labels and upstream predictions.
///
/// Immutable once built; all invariants are checked by [`EmbeddingSet::new`].
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    name: String,
    dim: usize,
    num_classes: usize,
    data: Vec<f32>,
    labels: Option<Vec<u32>>,
    predicted: Option<Vec<u32>>,
}

impl EmbeddingSet {
    /// Builds a set from row-major data of `data.len() / dim` rows.
    pub fn new(
        name: impl Into<String>,
        dim: usize,
        num_classes: usize,
        data: Vec<f32>,
        labels: Option<Vec<u32>>,
        predicted: Option<Vec<u32>>,
    ) -> Result<Self> {
        let name = name.into();
        if name.is_empty() {
            return Err(Error::invalid("name must be nonempty"));
        }
        if dim == 0 {
            return Err(Error::invalid("dimension must be at least 1"));
        }
        if num_classes == 0 {
            return Err(Error::invalid("number of classes must be at least 1"));
        }
        if !data.len().is_multiple_of(dim) {
            return Err(Error::invalid(format!(
                "data length {} is not a multiple of dimension {dim}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite feature in row {}", pos / dim)));
        }
        let n = data.len() / dim;
        for (what, ids) in [("labels", &labels), ("predictions", &predicted)] {
            if let Some(ids) = ids {
                if ids.len() != n {
                    return Err(Error::invalid(format!(
                        "{what} length {} does not match {n} rows",
                        ids.len()
                    )));
                }
                if let Some(row) = ids.iter().position(|&c| c as usize >= num_classes) {
                    return Err(Error::invalid(format!(
                        "row {row}: {what} id {} is not below K = {num_classes}",
                        ids[row]
                    )));
                }
            }
        }
        Ok(Self {
            name,
            dim,
            num_classes,
            data,
            labels,
            predicted,
        })
    }

    /// Convenience constructor from `f64` rows, narrowing to `f32`.
    pub fn from_rows(
        name: impl Into<String>,
        num_classes: usize,
        rows: &[Vec<f64>],
        labels: Option<Vec<u32>>,
        predicted: Option<Vec<u32>>,
    ) -> Result<Self> {
        let dim = rows.first().map(Vec::len).ok_or(Error::NoRows)?;
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != dim {
                return Err(Error::Format {
                    row: i,
                    msg: format!("dimension mismatch: expected {dim} features, found {}", r.len()),
                });
            }
            data.extend(r.iter().map(|&v| v as f32));
        }
        Self::new(name, dim, num_classes, data, labels, predicted)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Result<Self> {
        let name = name.into();
        if name.is_empty() {
            return Err(Error::invalid("name must be nonempty"));
        }
        self.name = name;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    /// Row-major feature data.
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn labels(&self) -> Option<&[u32]> {
        self.labels.as_deref()
    }

    pub fn predicted(&self) -> Option<&[u32]> {
        self.predicted.as_deref()
    }

    /// Rows at `indices`, in the given order, with labels and predictions.
    pub fn select(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        let pick = |ids: &Option<Vec<u32>>| ids.as_ref().map(|v| indices.iter().map(|&i| v[i]).collect());
        Self {
            name: self.name.clone(),
            dim: self.dim,
            num_classes: self.num_classes,
            data,
            labels: pick(&self.labels),
            predicted: pick(&self.predicted),
        }
    }

    // ---- CSV ----

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{CSV_MAGIC} dim={} k={} labels={} pred={}",
            self.dim,
            self.num_classes,
            self.labels.is_some() as u8,
            self.predicted.is_some() as u8
        );
        for (i, row) in self.rows().enumerate() {
            for (c, v) in row.iter().enumerate() {
                if c > 0 {
                    out.push(',');
                }
                // f32 Display is the shortest string that parses back to the same bits.
                let _ = write!(out, "{v}");
            }
            if let Some(l) = &self.labels {
                let _ = write!(out, ",{}", l[i]);
            }
            if let Some(p) = &self.predicted {
                let _ = write!(out, ",{}", p[i]);
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(name: impl Into<String>, text: &str) -> Result<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        let header = lines.next().ok_or(Error::NoRows)?;
        let header = CsvHeader::parse(header)?;

        let mut data = Vec::new();
        let mut labels = header.labels.then(Vec::new);
        let mut predicted = header.pred.then(Vec::new);
        let expected = header.dim + header.labels as usize + header.pred as usize;

        let mut row = 0usize;
        for line in lines {
            if line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != expected {
                return Err(Error::Format {
                    row,
                    msg: format!(
                        "dimension mismatch: expected {expected} fields ({} features), found {}",
                        header.dim,
                        fields.len()
                    ),
                });
            }
            for f in &fields[..header.dim] {
                let v: f32 = f.parse().map_err(|_| Error::Format {
                    row,
                    msg: format!("cannot parse feature {f:?}"),
                })?;
                data.push(v);
            }
            let mut rest = fields[header.dim..].iter();
            if let Some(labels) = labels.as_mut() {
                labels.push(parse_class(rest.next().unwrap(), "label=", row)?);
            }
            if let Some(predicted) = predicted.as_mut() {
                predicted.push(parse_class(rest.next().unwrap(), "pred=", row)?);
            }
            row += 1;
        }
        if row == 0 {
            return Err(Error::NoRows);
        }
        Self::new(name, header.dim, header.k, data, labels, predicted)
    }

    // ---- binary ----

    pub fn to_binary(&self) -> Vec<u8> {
        let n = self.len();
        let mut out = Vec::with_capacity(23 + self.data.len() * 4 + n * 8);
        out.extend_from_slice(BINARY_MAGIC);
        out.extend_from_slice(&BINARY_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(n as u64).to_le_bytes());
        out.extend_from_slice(&(self.num_classes as u32).to_le_bytes());
        let mut flags = 0u8;
        if self.labels.is_some() {
            flags |= FLAG_LABELS;
        }
        if self.predicted.is_some() {
            flags |= FLAG_PRED;
        }
        out.push(flags);
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for ids in [&self.labels, &self.predicted].into_iter().flatten() {
            for c in ids {
                out.extend_from_slice(&c.to_le_bytes());
            }
        }
        out
    }

    pub fn from_binary(name: impl Into<String>, mut bytes: &[u8]) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_exact(&mut bytes, &mut magic, "magic")?;
        if &magic != BINARY_MAGIC {
            return Err(Error::invalid("bad magic, expected OODP"));
        }
        let version = u16::from_le_bytes(take(&mut bytes, "version")?);
        if version != BINARY_VERSION {
            return Err(Error::invalid(format!("unsupported version {version}")));
        }
        let dim = u32::from_le_bytes(take(&mut bytes, "dim")?) as usize;
        let n = u64::from_le_bytes(take(&mut bytes, "row count")?) as usize;
        let k = u32::from_le_bytes(take(&mut bytes, "class count")?) as usize;
        let [flags] = take::<1>(&mut bytes, "flags")?;
        if n == 0 {
            return Err(Error::NoRows);
        }
        let mut data = Vec::with_capacity(n.saturating_mul(dim).min(1 << 28));
        for row in 0..n {
            for _ in 0..dim {
                let v = take(&mut bytes, "features").map_err(|_| Error::Format {
                    row,
                    msg: "truncated feature payload".into(),
                })?;
                data.push(f32::from_le_bytes(v));
            }
        }
        let mut read_ids = |what: &str| -> Result<Vec<u32>> {
            (0..n)
                .map(|row| {
                    take(&mut bytes, what)
                        .map(u32::from_le_bytes)
                        .map_err(|_| Error::Format {
                            row,
                            msg: format!("truncated {what}"),
                        })
                })
                .collect()
        };
        let labels = (flags & FLAG_LABELS != 0).then(|| read_ids("labels")).transpose()?;
        let predicted = (flags & FLAG_PRED != 0).then(|| read_ids("predictions")).transpose()?;
        if !bytes.is_empty() {
            return Err(Error::invalid(format!("{} trailing bytes", bytes.len())));
        }
        Self::new(name, dim, k, data, labels, predicted)
    }
}

struct CsvHeader {
    dim: usize,
    k: usize,
    labels: bool,
    pred: bool,
}

impl CsvHeader {
    fn parse(line: &str) -> Result<Self> {
        let rest = line
            .strip_prefix(CSV_MAGIC)
            .ok_or_else(|| Error::invalid(format!("missing header, expected `{CSV_MAGIC} dim=..`")))?;
        let (mut dim, mut k, mut labels, mut pred) = (None, None, false, false);
        for tok in rest
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|t| !t.is_empty())
        {
            let (key, val) = tok
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("bad header token {tok:?}")))?;
            let num: usize = val
                .parse()
                .map_err(|_| Error::invalid(format!("bad header value {tok:?}")))?;
            match key {
                "dim" => dim = Some(num),
                "k" => k = Some(num),
                "labels" => labels = num != 0,
                "pred" => pred = num != 0,
                _ => return Err(Error::invalid(format!("unknown header key {key:?}"))),
            }
        }
        Ok(Self {
            dim: dim.ok_or_else(|| Error::invalid("header lacks dim="))?,
            k: k.ok_or_else(|| Error::invalid("header lacks k="))?,
            labels,
            pred,
        })
    }
}

fn parse_class(field: &str, prefix: &str, row: usize) -> Result<u32> {
    let f = field.strip_prefix(prefix).unwrap_or(field);
    f.parse().map_err(|_| Error::Format {
        row,
        msg: format!("cannot parse class id {field:?}"),
    })
}

fn read_exact(bytes: &mut &[u8], buf: &mut [u8], what: &str) -> Result<()> {
    bytes
        .read_exact(buf)
        .map_err(|_| Error::invalid(format!("truncated header: {what}")))
}

fn take<const N: usize>(bytes: &mut &[u8], what: &str) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    read_exact(bytes, &mut buf, what)?;
    Ok(buf)
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .and_then(|s| s.to_str())
        .filter(|s| !s.is_empty())
        .unwrap_or("unnamed")
        .to_string()
}

/// Loads a set; its name is the file stem.
pub fn load_embedding_set(path: &Path, format: Format) -> Result<EmbeddingSet> {
    let name = stem(path);
    match format {
        Format::Csv => EmbeddingSet::from_csv(name, &fs::read_to_string(path)?),
        Format::Binary => EmbeddingSet::from_binary(name, &fs::read(path)?),
    }
}

pub fn save_embedding_set(set: &EmbeddingSet, path: &Path, format: Format) -> Result<()> {
    let bytes = match format {
        Format::Csv => set.to_csv().into_bytes(),
        Format::Binary => set.to_binary(),
    };
    write_atomic(path, &bytes)?;
    Ok(())
}

/// Writes through a sibling temporary file so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = std::path::PathBuf::from(tmp);
    let res = fs::File::create(&tmp).and_then(|mut f| {
        f.write_all(bytes)?;
        f.sync_all()
    });
    match res.and_then(|_| fs::rename(&tmp, path)) {
        Ok(()) => Ok(()),
        Err(e) => {
            let _ = fs::remove_file(&tmp);
            Err(e)
        }
    }
}

/// Indices of `n` rows drawn uniformly without replacement from `len`, in
/// ascending order. Uses a partial forward Fisher-Yates pass.
pub fn subsample_indices(len: usize, n: usize, seed: u64) -> Vec<usize> {
    if n >= len {
        return (0..len).collect();
    }
    let mut rng = Rng::new(seed);
    let mut idx: Vec<usize> = (0..len).collect();
    for i in 0..n {
        let j = i + rng.below((len - i) as u64) as usize;
        idx.swap(i, j);
    }
    idx.truncate(n);
    idx.sort_unstable();
    idx
}

/// At most `n` rows of `set`, chosen uniformly and deterministically from
/// `seed`. Sets no larger than `n` come back unchanged.
pub fn subsample(set: &EmbeddingSet, n: usize, seed: u64) -> Result<EmbeddingSet> {
    if n == 0 {
        return Err(Error::arg("subsample size must be at least 1"));
    }
    if n >= set.len() {
        return Ok(set.clone());
    }
    Ok(set.select(&subsample_indices(set.len(), n, seed)))
}

/// Subsamples every candidate to the smallest candidate's size. Candidate `i`
/// draws with seed `seed + i`.
pub fn equalize_sizes(candidates: &[EmbeddingSet], seed: u64) -> Result<Vec<EmbeddingSet>> {
    let min = candidates
        .iter()
        .map(EmbeddingSet::len)
        .min()
        .ok_or_else(|| Error::arg("no candidate sets to equalize"))?;
    candidates
        .iter()
        .enumerate()
        .map(|(i, s)| subsample(s, min.max(1), seed.wrapping_add(i as u64)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(n: usize) -> EmbeddingSet {
        let data: Vec<f32> = (0..n * 2).map(|v| v as f32 * 0.5).collect();
        let labels = (0..n as u32).map(|i| i % 3).collect();
        EmbeddingSet::new("toy", 2, 3, data, Some(labels), None).unwrap()
    }

    #[test]
    fn single_row_csv() {
        let text = "# ood-protect v1 dim=2 k=3 labels=1 pred=1\n0.0,0.0,1,1\n";
        let s = EmbeddingSet::from_csv("a", text).unwrap();
        assert_eq!((s.dim(), s.len()), (2, 1));
        assert_eq!(s.labels(), Some(&[1u32][..]));
        assert_eq!(s.predicted(), Some(&[1u32][..]));
        assert_eq!(EmbeddingSet::from_csv("a", &s.to_csv()).unwrap(), s);
    }

    #[test]
    fn keyed_class_fields_are_accepted() {
        let text = "# ood-protect v1 dim=2,k=3,labels=1,pred=1\n0.0,0.0,label=1,pred=2\n";
        let s = EmbeddingSet::from_csv("a", text).unwrap();
        assert_eq!(s.predicted(), Some(&[2u32][..]));
    }

    #[test]
    fn empty_inputs_have_no_rows() {
        assert!(matches!(EmbeddingSet::from_csv("a", ""), Err(Error::NoRows)));
        let header_only = "# ood-protect v1 dim=2 k=3 labels=0 pred=0\n";
        assert!(matches!(EmbeddingSet::from_csv("a", header_only), Err(Error::NoRows)));
    }

    #[test]
    fn dimension_mismatch_names_row() {
        let text = "# ood-protect v1 dim=2 k=3 labels=0 pred=0\n1,2\n1,2,3\n";
        let err = EmbeddingSet::from_csv("a", text).unwrap_err();
        match &err {
            Error::Format { row, .. } => assert_eq!(*row, 1),
            e => panic!("unexpected {e:?}"),
        }
        assert!(err.to_string().contains("row 1"));
    }

    #[test]
    fn label_out_of_range_is_rejected() {
        let text = "# ood-protect v1 dim=1 k=2 labels=1 pred=0\n0.5,2\n";
        assert!(matches!(EmbeddingSet::from_csv("a", text), Err(Error::Validation(_))));
    }

    #[test]
    fn bad_binary_is_rejected() {
        let bytes = toy(4).to_binary();
        assert!(EmbeddingSet::from_binary("t", &bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(EmbeddingSet::from_binary("t", &bad).is_err());
        assert_eq!(EmbeddingSet::from_binary("toy", &bytes).unwrap(), toy(4));
    }

    #[test]
    fn subsample_small_set_is_unchanged() {
        let s = toy(5);
        assert_eq!(subsample(&s, 10, 3).unwrap(), s);
        assert!(subsample(&s, 0, 3).is_err());
    }

    #[test]
    fn subsample_is_deterministic() {
        let s = toy(50);
        assert_eq!(subsample(&s, 7, 11).unwrap(), subsample(&s, 7, 11).unwrap());
        assert_eq!(subsample(&s, 7, 11).unwrap().len(), 7);
    }

    #[test]
    fn subsample_matches_fisher_yates_reference() {
        // Independent reference: a full shuffle with the same draws in the
        // same order, truncated afterwards.
        fn reference(len: usize, n: usize, seed: u64) -> Vec<usize> {
            let mut rng = Rng::new(seed);
            let mut perm: Vec<usize> = (0..len).collect();
            let mut pos = 0;
            while pos < n {
                let remaining = len - pos;
                let pick = pos + rng.below(remaining as u64) as usize;
                perm.swap(pos, pick);
                pos += 1;
            }
            let mut out = perm[..n].to_vec();
            out.sort();
            out
        }
        let got = subsample_indices(10_000, 100, 2024);
        assert_eq!(got, reference(10_000, 100, 2024));
        let mut dedup = got.clone();
        dedup.dedup();
        assert_eq!(dedup.len(), 100);
        assert!(got.iter().all(|&i| i < 10_000));
    }

    #[test]
    fn subsample_carries_labels() {
        let s = toy(30);
        let sub = subsample(&s, 10, 5).unwrap();
        let idx = subsample_indices(30, 10, 5);
        for (r, &i) in idx.iter().enumerate() {
            assert_eq!(sub.row(r), s.row(i));
            assert_eq!(sub.labels().unwrap()[r], s.labels().unwrap()[i]);
        }
    }

    #[test]
    fn equalize_takes_minimum() {
        let sets = [toy(100), toy(80), toy(120)];
        let out = equalize_sizes(&sets, 1).unwrap();
        assert!(out.iter().all(|s| s.len() == 80));
        assert_eq!(out[1], sets[1]);
        assert!(equalize_sizes(&[], 1).is_err());
        let single = equalize_sizes(&[toy(7)], 1).unwrap();
        assert_eq!(single[0], toy(7));
    }
}
