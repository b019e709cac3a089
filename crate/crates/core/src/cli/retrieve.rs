use std::path::Path;

use crate::error::{Error, Result};

/// One row of an embedding file.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub id: String,
    pub vector: Vec<f64>,
}

pub fn embeddings_csv(rows: &[Embedding]) -> Result<String> {
    let d = rows.first().map_or(0, |r| r.vector.len());
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(std::iter::once("id".to_string()).chain((0..d).map(|i| format!("e{i}"))))?;
    for r in rows {
        w.write_record(std::iter::once(r.id.clone()).chain(r.vector.iter().map(|v| v.to_string())))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
}

pub fn read_embeddings(path: impl AsRef<Path>) -> Result<Vec<Embedding>> {
    let mut reader = csv::Reader::from_path(path)?;
    let width = reader.headers()?.len();
    if width < 2 || &reader.headers()?[0] != "id" {
        return Err(Error::Format("embedding file must start with an id column and at least one value column".into()));
    }
    let mut rows = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let vector = record
            .iter()
            .skip(1)
            .map(|v| v.parse::<f64>().map_err(|e| Error::Parse { line: line + 2, msg: format!("{v:?}: {e}") }))
            .collect::<Result<Vec<_>>>()?;
        rows.push(Embedding { id: record[0].to_string(), vector });
    }
    Ok(rows)
}

/// Cosine similarity; 0 when either vector is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (crate::linalg::norm2(a), crate::linalg::norm2(b));
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    crate::linalg::dot(a, b) / (na * nb)
}

/// The `k` most similar other entries, most similar first, ties by id.
pub fn retrieve(rows: &[Embedding], query: &str, k: usize) -> Result<Vec<(String, f64)>> {
    let q = rows
        .iter()
        .find(|r| r.id == query)
        .ok_or_else(|| Error::Data(format!("query id {query:?} is not in the embedding file")))?;
    let mut scored: Vec<(String, f64)> =
        rows.iter().filter(|r| r.id != query).map(|r| (r.id.clone(), cosine(&q.vector, &r.vector))).collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    scored.truncate(k);
    Ok(scored)
}
