use std::cmp::Ordering;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::classify::Embedder;
use super::AssessError;
use crate::corpus::{CodeSnippet, Facet};
use crate::scalar::Scalar;

pub const INDEX_MAGIC: &[u8; 8] = b"P2CINDEX";
pub const INDEX_FORMAT: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedResult {
    pub snippet_id: String,
    pub distance: f64,
    /// 1-based.
    pub rank: usize,
}

/// Snippet embeddings of one model, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingIndex<T> {
    ids: Vec<String>,
    dim: usize,
    data: Vec<T>,
    model_hash: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct IndexHeader {
    format: u32,
    d: usize,
    count: usize,
    model_hash: String,
}

pub(crate) fn sq_term<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    let mut s = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        let d = x - y;
        s += d * d;
    }
    s.as_f64()
}

fn by_distance_then_id(a: &(f64, &str), b: &(f64, &str)) -> Ordering {
    a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1))
}

fn rank(mut scored: Vec<(f64, &str)>, k: usize) -> Vec<RankedResult> {
    if k < scored.len() {
        scored.select_nth_unstable_by(k - 1, by_distance_then_id);
        scored.truncate(k);
    }
    scored.sort_by(by_distance_then_id);
    scored
        .into_iter()
        .enumerate()
        .map(|(i, (distance, id))| RankedResult { snippet_id: id.to_string(), distance, rank: i + 1 })
        .collect()
}

impl<T: Scalar> EmbeddingIndex<T> {
    pub fn from_rows(ids: Vec<String>, rows: Vec<Vec<T>>, model_hash: impl Into<String>) -> Result<Self, AssessError> {
        if ids.is_empty() {
            return Err(AssessError::EmptyIndex);
        }
        if ids.len() != rows.len() {
            return Err(AssessError::Format(format!("{} ids for {} rows", ids.len(), rows.len())));
        }
        let dim = rows[0].len();
        if rows.iter().any(|r| r.len() != dim) {
            return Err(AssessError::Format("rows differ in dimension".into()));
        }
        Ok(Self { ids, dim, data: rows.into_iter().flatten().collect(), model_hash: model_hash.into() })
    }

    /// Encodes every snippet with `embedder`.
    pub fn build(snippets: &[CodeSnippet], embedder: &Embedder<T>) -> Result<Self, AssessError> {
        if snippets.is_empty() {
            return Err(AssessError::EmptyIndex);
        }
        let mut rows = Vec::with_capacity(snippets.len());
        for s in snippets {
            let e = embedder.code(&s.code).map_err(|source| AssessError::Encoding { id: s.id.clone(), source })?;
            rows.push(e);
        }
        Self::from_rows(snippets.iter().map(|s| s.id.clone()).collect(), rows, embedder.model_hash())
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn model_hash(&self) -> &str {
        &self.model_hash
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|x| x == id)
    }

    pub fn check_model(&self, model_hash: &str) -> Result<(), AssessError> {
        if self.model_hash != model_hash {
            return Err(AssessError::StaleIndex { index: self.model_hash.clone(), model: model_hash.to_string() });
        }
        Ok(())
    }

    /// Exact top-`k` scan, ordered by `(distance, snippet_id)`.
    pub fn search_embedding(&self, query: &[T], k: usize) -> Result<Vec<RankedResult>, AssessError> {
        if k == 0 {
            return Err(AssessError::InvalidK);
        }
        if query.len() != self.dim {
            return Err(AssessError::Format(format!("query has {} dims, index {}", query.len(), self.dim)));
        }
        let scored = (0..self.len()).map(|i| (sq_term(query, self.row(i)), self.ids[i].as_str())).collect();
        Ok(rank(scored, k))
    }

    /// Encodes the policy under `facet` and scans the index.
    pub fn search(&self, embedder: &Embedder<T>, policy_text: &str, facet: Facet, k: usize) -> Result<Vec<RankedResult>, AssessError> {
        self.check_model(embedder.model_hash())?;
        let q = embedder.policy_facet(policy_text, facet)?;
        self.search_embedding(&q, k)
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<(), AssessError> {
        let header = IndexHeader { format: INDEX_FORMAT, d: self.dim, count: self.len(), model_hash: self.model_hash.clone() };
        let header = serde_json::to_vec(&header).expect("header serializes");
        w.write_all(INDEX_MAGIC)?;
        w.write_all(&(header.len() as u32).to_le_bytes())?;
        w.write_all(&header)?;
        for id in &self.ids {
            w.write_all(&(id.len() as u32).to_le_bytes())?;
            w.write_all(id.as_bytes())?;
        }
        for &x in &self.data {
            w.write_all(&x.as_f64().to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self, AssessError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != INDEX_MAGIC {
            return Err(AssessError::Format("not an index file".into()));
        }
        let header_len = read_u32(&mut r)? as usize;
        let mut header = vec![0u8; header_len];
        r.read_exact(&mut header)?;
        let header: IndexHeader = serde_json::from_slice(&header).map_err(|e| AssessError::Format(e.to_string()))?;
        if header.format != INDEX_FORMAT {
            return Err(AssessError::Format(format!("unsupported index format {}", header.format)));
        }
        let mut ids = Vec::with_capacity(header.count);
        for _ in 0..header.count {
            let len = read_u32(&mut r)? as usize;
            let mut buf = vec![0u8; len];
            r.read_exact(&mut buf)?;
            ids.push(String::from_utf8(buf).map_err(|e| AssessError::Format(e.to_string()))?);
        }
        let mut data = Vec::with_capacity(header.count * header.d);
        let mut buf = [0u8; 8];
        for _ in 0..header.count * header.d {
            r.read_exact(&mut buf)?;
            data.push(T::lit(f64::from_le_bytes(buf)));
        }
        if ids.is_empty() {
            return Err(AssessError::EmptyIndex);
        }
        Ok(Self { ids, dim: header.d, data, model_hash: header.model_hash })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), AssessError> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, AssessError> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32, AssessError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Inverted-file approximate search: rows are bucketed by their nearest
/// k-means centroid and a query scans only the `nprobe` nearest buckets.
#[derive(Debug, Clone)]
pub struct IvfIndex {
    dim: usize,
    centroids: Vec<f64>,
    lists: Vec<Vec<usize>>,
    pub nprobe: usize,
}

impl IvfIndex {
    /// `nlist` defaults to `sqrt(n)`; `nprobe` to an eighth of the lists.
    pub fn build<T: Scalar>(index: &EmbeddingIndex<T>, nlist: Option<usize>, seed: u64) -> Self {
        let n = index.len();
        let dim = index.dim();
        let nlist = nlist.unwrap_or_else(|| (n as f64).sqrt().round() as usize).clamp(1, n);
        let rows: Vec<Vec<f64>> = (0..n).map(|i| index.row(i).iter().map(|x| x.as_f64()).collect()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut centroids: Vec<f64> = sample(&mut rng, n, nlist).into_iter().flat_map(|i| rows[i].clone()).collect();
        let mut assign = vec![0usize; n];
        for _ in 0..10 {
            for (i, row) in rows.iter().enumerate() {
                assign[i] = nearest(&centroids, dim, row);
            }
            let mut sums = vec![0.0; nlist * dim];
            let mut counts = vec![0usize; nlist];
            for (i, row) in rows.iter().enumerate() {
                counts[assign[i]] += 1;
                for (s, &x) in sums[assign[i] * dim..(assign[i] + 1) * dim].iter_mut().zip(row) {
                    *s += x;
                }
            }
            for c in 0..nlist {
                let target = &mut centroids[c * dim..(c + 1) * dim];
                if counts[c] == 0 {
                    target.copy_from_slice(&rows[rng.gen_range(0..n)]);
                } else {
                    for (t, &s) in target.iter_mut().zip(&sums[c * dim..(c + 1) * dim]) {
                        *t = s / counts[c] as f64;
                    }
                }
            }
        }
        let mut lists = vec![Vec::new(); nlist];
        for (i, row) in rows.iter().enumerate() {
            lists[nearest(&centroids, dim, row)].push(i);
        }
        Self { dim, centroids, lists, nprobe: nlist.div_ceil(8) }
    }

    pub fn nlist(&self) -> usize {
        self.lists.len()
    }

    pub fn search<T: Scalar>(&self, index: &EmbeddingIndex<T>, query: &[T], k: usize) -> Result<Vec<RankedResult>, AssessError> {
        if k == 0 {
            return Err(AssessError::InvalidK);
        }
        let q: Vec<f64> = query.iter().map(|x| x.as_f64()).collect();
        let mut order: Vec<(f64, usize)> =
            (0..self.nlist()).map(|c| (sq_term(&q, &self.centroids[c * self.dim..(c + 1) * self.dim]), c)).collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut scored = Vec::new();
        for &(_, c) in order.iter().take(self.nprobe.max(1)) {
            for &i in &self.lists[c] {
                scored.push((sq_term(query, index.row(i)), index.ids()[i].as_str()));
            }
        }
        Ok(rank(scored, k))
    }
}

fn nearest(centroids: &[f64], dim: usize, row: &[f64]) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (c, centroid) in centroids.chunks_exact(dim).enumerate() {
        let d = sq_term(row, centroid);
        if d < best.0 {
            best = (d, c);
        }
    }
    best.1
}
