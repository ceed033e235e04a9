//! File formats: data batches and estimate sequences as CSV with a JSON
//! sidecar manifest, plus content digests.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linalg::Vector;
use crate::types::{BatchMeta, DataBatch, EstimateSequence, EstimatorKind, Truth};

/// Hex SHA-256 of the canonical JSON form of `value` (object keys sorted).
pub fn digest<T: Serialize + ?Sized>(value: &T) -> String {
    let canonical = serde_json::to_value(value).map(|v| v.to_string()).unwrap_or_default();
    let hash = Sha256::digest(canonical.as_bytes());
    hash.iter().map(|b| format!("{b:02x}")).collect()
}

/// Digest of the full numeric content of a batch.
pub fn batch_digest(batch: &DataBatch) -> String {
    let vecs = |v: &[Vector]| v.iter().map(|x| x.as_slice().to_vec()).collect::<Vec<_>>();
    let truth = batch.truth.as_ref().map(|t| json!([vecs(&t.states), vecs(&t.disturbances), vecs(&t.noise)]));
    digest(&json!({
        "t0": batch.t0,
        "inputs": vecs(&batch.inputs),
        "outputs": vecs(&batch.outputs),
        "truth": truth,
        "meta": batch.meta,
    }))
}

/// Sidecar manifest path: same stem with a `.json` extension.
pub fn manifest_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchDims {
    pub n: Option<usize>,
    pub m: usize,
    pub q: Option<usize>,
    pub p: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchManifest {
    pub model: String,
    pub seed: Option<u64>,
    pub t0: i64,
    pub len: usize,
    pub dims: BatchDims,
    pub has_truth: bool,
    pub generation: Value,
    pub digest: String,
}

fn names(prefix: &str, count: usize) -> impl Iterator<Item = String> + '_ {
    (1..=count).map(move |i| format!("{prefix}{i}"))
}

fn push_all(row: &mut Vec<String>, v: &Vector) {
    row.extend(v.iter().map(|x| x.to_string()));
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

pub fn write_batch(path: &Path, batch: &DataBatch) -> Result<BatchManifest> {
    let m = batch.inputs.first().map_or(0, |u| u.len());
    let p = batch.outputs.first().map_or(0, |y| y.len());
    let (n, q) = match &batch.truth {
        Some(t) => (
            Some(t.states.first().map_or(0, |x| x.len())),
            Some(t.disturbances.first().map_or(t.states.first().map_or(0, |x| x.len()), |w| w.len())),
        ),
        None => (None, None),
    };
    let mut header = vec!["t".to_string()];
    header.extend(names("u", m));
    header.extend(names("y", p));
    if let (Some(n), Some(q)) = (n, q) {
        header.extend(names("x", n));
        header.extend(names("w", q));
        header.extend(names("v", p));
    }
    let mut wtr = csv::Writer::from_path(path)?;
    wtr.write_record(&header)?;
    for k in 0..batch.len() {
        let mut row = vec![(batch.t0 + k as i64).to_string()];
        push_all(&mut row, &batch.inputs[k]);
        push_all(&mut row, &batch.outputs[k]);
        if let Some(t) = &batch.truth {
            push_all(&mut row, &t.states[k]);
            match t.disturbances.get(k) {
                Some(w) => push_all(&mut row, w),
                None => row.extend(std::iter::repeat_n(String::new(), q.unwrap_or(0))),
            }
            push_all(&mut row, &t.noise[k]);
        }
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    let manifest = BatchManifest {
        model: batch.meta.model.clone(),
        seed: batch.meta.seed,
        t0: batch.t0,
        len: batch.len(),
        dims: BatchDims { n, m, q, p },
        has_truth: batch.truth.is_some(),
        generation: batch.meta.generation.clone(),
        digest: batch_digest(batch),
    };
    write_json(&manifest_path(path), &manifest)?;
    Ok(manifest)
}

fn parse(field: &str, row: usize) -> Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|_| Error::Format(format!("row {row}: cannot parse `{field}` as a number")))
}

fn take(record: &csv::StringRecord, at: &mut usize, count: usize, row: usize) -> Result<Vector> {
    let mut v = Vec::with_capacity(count);
    for _ in 0..count {
        let field = record.get(*at).ok_or_else(|| Error::Format(format!("row {row}: too few columns")))?;
        v.push(parse(field, row)?);
        *at += 1;
    }
    Ok(Vector::from_vec(v))
}

pub fn read_manifest(path: &Path) -> Result<BatchManifest> {
    let text = fs::read_to_string(manifest_path(path))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn read_batch(path: &Path) -> Result<DataBatch> {
    let manifest = read_manifest(path)?;
    let dims = &manifest.dims;
    let mut rdr = csv::Reader::from_path(path)?;
    let mut inputs = Vec::new();
    let mut outputs = Vec::new();
    let (mut xs, mut ws, mut vs) = (Vec::new(), Vec::new(), Vec::new());
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let t = parse(rec.get(0).unwrap_or(""), row)? as i64;
        if t != manifest.t0 + row as i64 {
            return Err(Error::Format(format!("row {row}: expected t = {}, found {t}", manifest.t0 + row as i64)));
        }
        let mut at = 1;
        inputs.push(take(&rec, &mut at, dims.m, row)?);
        outputs.push(take(&rec, &mut at, dims.p, row)?);
        if manifest.has_truth {
            let (n, q) = (dims.n.unwrap_or(0), dims.q.unwrap_or(0));
            xs.push(take(&rec, &mut at, n, row)?);
            if rec.get(at).is_some_and(|f| !f.is_empty()) {
                ws.push(take(&rec, &mut at, q, row)?);
            } else {
                at += q;
            }
            vs.push(take(&rec, &mut at, dims.p, row)?);
        }
    }
    if outputs.len() != manifest.len {
        return Err(Error::Format(format!("expected {} rows, found {}", manifest.len, outputs.len())));
    }
    let truth = manifest.has_truth.then_some(Truth { states: xs, disturbances: ws, noise: vs });
    let batch = DataBatch {
        t0: manifest.t0,
        inputs,
        outputs,
        truth,
        meta: BatchMeta { model: manifest.model.clone(), seed: manifest.seed, generation: manifest.generation.clone() },
    };
    if batch_digest(&batch) != manifest.digest {
        return Err(Error::DigestMismatch(format!("{} does not match its manifest", path.display())));
    }
    Ok(batch)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateManifest {
    pub kind: EstimatorKind,
    pub delay: usize,
    pub start: i64,
    pub len: usize,
    pub n: usize,
    pub q: Option<usize>,
    pub config_digest: String,
    pub label: String,
    /// Free-form run information (solver diagnostics, truth digest).
    #[serde(default)]
    pub info: Value,
}

pub fn write_estimates(path: &Path, seq: &EstimateSequence, info: Value) -> Result<EstimateManifest> {
    let n = seq.states.first().map_or(0, |x| x.len());
    let q = seq.disturbances.as_ref().map(|ws| ws.first().map_or(n, |w| w.len()));
    let mut header = vec!["t".to_string()];
    header.extend(names("x", n));
    if let Some(q) = q {
        header.extend(names("w", q));
    }
    let mut wtr = csv::Writer::from_path(path)?;
    wtr.write_record(&header)?;
    for (k, x) in seq.states.iter().enumerate() {
        let mut row = vec![(seq.start + k as i64).to_string()];
        push_all(&mut row, x);
        if let (Some(ws), Some(q)) = (&seq.disturbances, q) {
            match ws.get(k) {
                Some(w) => push_all(&mut row, w),
                None => row.extend(std::iter::repeat_n(String::new(), q)),
            }
        }
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    let manifest = EstimateManifest {
        kind: seq.kind,
        delay: seq.delay,
        start: seq.start,
        len: seq.states.len(),
        n,
        q,
        config_digest: seq.config_digest.clone(),
        label: seq.label.clone(),
        info,
    };
    write_json(&manifest_path(path), &manifest)?;
    Ok(manifest)
}

pub fn read_estimates(path: &Path) -> Result<(EstimateSequence, EstimateManifest)> {
    let manifest: EstimateManifest = serde_json::from_str(&fs::read_to_string(manifest_path(path))?)?;
    let mut rdr = csv::Reader::from_path(path)?;
    let mut states = Vec::new();
    let mut ws = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let mut at = 1;
        states.push(take(&rec, &mut at, manifest.n, row)?);
        if let Some(q) = manifest.q {
            if rec.get(at).is_some_and(|f| !f.is_empty()) {
                ws.push(take(&rec, &mut at, q, row)?);
            }
        }
    }
    if states.len() != manifest.len {
        return Err(Error::Format(format!("expected {} rows, found {}", manifest.len, states.len())));
    }
    let seq = EstimateSequence {
        kind: manifest.kind,
        delay: manifest.delay,
        start: manifest.start,
        states,
        disturbances: manifest.q.map(|_| ws),
        config_digest: manifest.config_digest.clone(),
        label: manifest.label.clone(),
    };
    Ok((seq, manifest))
}
