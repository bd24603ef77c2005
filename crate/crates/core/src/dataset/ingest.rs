//! Feature file readers and writers.
//!
//! CSV: header `id,f0,...,f{d-1}` with an optional trailing `label` column.
//!
//! Binary (little-endian): magic `CVIL`, version byte, `u32 n`, `u32 d`,
//! `n*d` `f32` values row-major, then an optional label block of `n` `u32`
//! class ids. Binary rows carry no ids; row `i` gets id `"i"`.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{ClassId, ClassSchema, DatasetError, EmbeddingDataset, Result};

pub const BINARY_MAGIC: &[u8; 4] = b"CVIL";
pub const BINARY_VERSION: u8 = 1;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Reads a feature file (CSV or binary, sniffed by magic), optionally
/// replacing ground truth from a `id,class_id` labels file and attaching
/// images from a directory.
pub fn ingest(
    features_file: &Path,
    schema: ClassSchema,
    labels_file: Option<&Path>,
    images_dir: Option<&Path>,
) -> Result<EmbeddingDataset> {
    let mut bytes = Vec::new();
    File::open(features_file)
        .and_then(|f| BufReader::new(f).read_to_end(&mut bytes))
        .map_err(io_err(features_file))?;

    let (ids, features, d, labels) = if bytes.starts_with(BINARY_MAGIC) {
        parse_binary(&bytes)?
    } else {
        parse_csv(&bytes)?
    };

    let ground_truth = match labels_file {
        Some(path) => Some(resolve_labels(&ids, &read_labels_file(path)?, &schema)?),
        None => match labels {
            Some(raw) => Some(check_classes(&ids, &raw, &schema)?),
            None => None,
        },
    };

    let dataset = EmbeddingDataset::new(schema, ids, features, d, ground_truth)?;
    match images_dir {
        Some(dir) => dataset.with_images(dir),
        None => Ok(dataset),
    }
}

type Parsed = (Vec<String>, Vec<f32>, usize, Option<Vec<i64>>);

fn parse_csv(bytes: &[u8]) -> Result<Parsed> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(bytes);
    let header = reader
        .headers()
        .map_err(|e| DatasetError::MalformedHeader(e.to_string()))?
        .clone();
    if header.get(0) != Some("id") {
        return Err(DatasetError::MalformedHeader(
            "first column must be `id`".into(),
        ));
    }
    let has_label = header.iter().next_back() == Some("label");
    let d = header.len() - 1 - usize::from(has_label);
    if d == 0 {
        return Err(DatasetError::MalformedHeader("no feature columns".into()));
    }
    for (j, name) in header.iter().skip(1).take(d).enumerate() {
        if name != format!("f{j}") {
            return Err(DatasetError::MalformedHeader(format!(
                "column {} should be `f{j}`, found `{name}`",
                j + 1
            )));
        }
    }

    let mut ids = Vec::new();
    let mut features = Vec::new();
    let mut labels = has_label.then(Vec::new);
    for record in reader.records() {
        let record = record.map_err(|e| DatasetError::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != header.len() {
            return Err(DatasetError::RowLength {
                line,
                expected: header.len(),
                found: record.len(),
            });
        }
        ids.push(record[0].to_string());
        for field in record.iter().skip(1).take(d) {
            let v: f32 = field.parse().map_err(|_| DatasetError::Parse {
                line,
                message: format!("not a number: {field:?}"),
            })?;
            features.push(v);
        }
        if let Some(labels) = labels.as_mut() {
            let field = &record[d + 1];
            let c: i64 = field.parse().map_err(|_| DatasetError::Parse {
                line,
                message: format!("not a class id: {field:?}"),
            })?;
            labels.push(c);
        }
    }
    if ids.is_empty() {
        return Err(DatasetError::Empty);
    }
    Ok((ids, features, d, labels))
}

fn parse_binary(bytes: &[u8]) -> Result<Parsed> {
    let header_len = 4 + 1 + 4 + 4;
    if bytes.len() < header_len {
        return Err(DatasetError::Binary("truncated header".into()));
    }
    let version = bytes[4];
    if version != BINARY_VERSION {
        return Err(DatasetError::Binary(format!("unsupported version {version}")));
    }
    let n = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(bytes[9..13].try_into().unwrap()) as usize;
    if n == 0 || d == 0 {
        return Err(DatasetError::Empty);
    }
    let body = &bytes[header_len..];
    let feature_bytes = n
        .checked_mul(d)
        .and_then(|v| v.checked_mul(4))
        .ok_or_else(|| DatasetError::Binary("shape overflows".into()))?;
    if body.len() < feature_bytes {
        return Err(DatasetError::Binary(format!(
            "expected {feature_bytes} feature bytes, found {}",
            body.len()
        )));
    }
    let features: Vec<f32> = body[..feature_bytes]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let rest = &body[feature_bytes..];
    let labels = match rest.len() {
        0 => None,
        len if len == 4 * n => Some(
            rest.chunks_exact(4)
                .map(|c| i64::from(u32::from_le_bytes(c.try_into().unwrap())))
                .collect(),
        ),
        len => {
            return Err(DatasetError::Binary(format!(
                "trailing block of {len} bytes is not a label block of {n} u32"
            )))
        }
    };
    let ids = (0..n).map(|i| i.to_string()).collect();
    Ok((ids, features, d, labels))
}

fn check_classes(ids: &[String], raw: &[i64], schema: &ClassSchema) -> Result<Vec<ClassId>> {
    raw.iter()
        .zip(ids)
        .map(|(&c, id)| {
            if c >= 0 && (c as usize) < schema.len() {
                Ok(ClassId(c as u32))
            } else {
                Err(DatasetError::UnknownClass {
                    id: id.clone(),
                    class: c,
                })
            }
        })
        .collect()
}

fn resolve_labels(
    ids: &[String],
    labels: &[(String, i64)],
    schema: &ClassSchema,
) -> Result<Vec<ClassId>> {
    let mut by_id: HashMap<&str, i64> = HashMap::with_capacity(labels.len());
    let known: std::collections::HashSet<&str> = ids.iter().map(String::as_str).collect();
    for (id, class) in labels {
        if !known.contains(id.as_str()) {
            return Err(DatasetError::UnknownId(id.clone()));
        }
        if *class < 0 || *class as usize >= schema.len() {
            return Err(DatasetError::UnknownClass {
                id: id.clone(),
                class: *class,
            });
        }
        by_id.insert(id.as_str(), *class);
    }
    ids.iter()
        .map(|id| {
            by_id
                .get(id.as_str())
                .map(|&c| ClassId(c as u32))
                .ok_or_else(|| DatasetError::MissingLabel(id.clone()))
        })
        .collect()
}

/// Reads a `id,class_id` CSV.
pub fn read_labels_file(path: &Path) -> Result<Vec<(String, i64)>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(source) => DatasetError::Io {
                path: path.to_path_buf(),
                source,
            },
            other => DatasetError::Parse {
                line: 0,
                message: format!("{other:?}"),
            },
        })?;
    let header = reader
        .headers()
        .map_err(|e| DatasetError::MalformedHeader(e.to_string()))?;
    if header.iter().collect::<Vec<_>>() != ["id", "class_id"] {
        return Err(DatasetError::MalformedHeader(
            "labels file header must be `id,class_id`".into(),
        ));
    }
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| DatasetError::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != 2 {
            return Err(DatasetError::RowLength {
                line,
                expected: 2,
                found: record.len(),
            });
        }
        let class: i64 = record[1].parse().map_err(|_| DatasetError::Parse {
            line,
            message: format!("not a class id: {:?}", &record[1]),
        })?;
        out.push((record[0].to_string(), class));
    }
    Ok(out)
}

/// Writes the binary format, including the label block when ground truth exists.
pub fn write_binary<W: Write>(dataset: &EmbeddingDataset, writer: W) -> std::io::Result<()> {
    let mut w = BufWriter::new(writer);
    w.write_all(BINARY_MAGIC)?;
    w.write_all(&[BINARY_VERSION])?;
    w.write_all(&(dataset.len() as u32).to_le_bytes())?;
    w.write_all(&(dataset.dim() as u32).to_le_bytes())?;
    for v in dataset.features() {
        w.write_all(&v.to_le_bytes())?;
    }
    if let Some(gt) = dataset.ground_truth() {
        for c in gt {
            w.write_all(&c.0.to_le_bytes())?;
        }
    }
    w.flush()
}

/// Writes the CSV format, with a `label` column when ground truth exists.
pub fn write_csv<W: Write>(dataset: &EmbeddingDataset, writer: W) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let gt = dataset.ground_truth();
    let mut header = vec!["id".to_string()];
    header.extend((0..dataset.dim()).map(|j| format!("f{j}")));
    if gt.is_some() {
        header.push("label".into());
    }
    w.write_record(&header)?;
    let mut record = Vec::with_capacity(header.len());
    for i in 0..dataset.len() {
        record.clear();
        record.push(dataset.id(i).to_string());
        record.extend(dataset.row(i).iter().map(|v| v.to_string()));
        if let Some(gt) = gt {
            record.push(gt[i].to_string());
        }
        w.write_record(&record)?;
    }
    w.flush()
}
