use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub label: usize,
    pub text: String,
}

/// Labelled texts plus the source line of each row (for error messages).
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Dataset {
    pub examples: Vec<Example>,
    lines: Vec<u64>,
}

impl Dataset {
    /// Line numbers are assigned as if the rows were written to a file with a
    /// header on line 1 and one row per line.
    pub fn from_examples(examples: Vec<Example>) -> Self {
        let lines = (0..examples.len() as u64).map(|i| i + 2).collect();
        Self { examples, lines }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn line(&self, i: usize) -> u64 {
        self.lines[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Example> {
        self.examples.iter()
    }

    /// Fails with a data error naming the first row whose label is `>= n_classes`.
    pub fn check_labels(&self, n_classes: usize) -> Result<()> {
        for (i, ex) in self.examples.iter().enumerate() {
            if ex.label >= n_classes {
                return Err(Error::Data {
                    line: self.lines[i],
                    reason: format!("label {} outside 0..{n_classes}", ex.label),
                });
            }
        }
        Ok(())
    }

    pub fn n_classes(&self) -> usize {
        self.examples.iter().map(|e| e.label + 1).max().unwrap_or(0)
    }

    /// Keeps at most `cap` rows, taking classes in turn from per-class
    /// shuffles so label proportions are preserved as far as possible.
    pub fn stratified_cap(&self, cap: usize, seed: u64) -> Dataset {
        if self.len() <= cap {
            return self.clone();
        }
        let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); self.n_classes()];
        for (i, ex) in self.examples.iter().enumerate() {
            by_class[ex.label].push(i);
        }
        for (c, rows) in by_class.iter_mut().enumerate() {
            rows.shuffle(&mut rng::stream(seed, &[rng::label("cap"), c as u64]));
        }
        let mut picked = Vec::with_capacity(cap);
        let mut round = 0;
        while picked.len() < cap {
            for rows in &by_class {
                if picked.len() < cap {
                    if let Some(&i) = rows.get(round) {
                        picked.push(i);
                    }
                }
            }
            round += 1;
        }
        picked.sort_unstable();
        Dataset {
            examples: picked.iter().map(|&i| self.examples[i].clone()).collect(),
            lines: picked.iter().map(|&i| self.lines[i]).collect(),
        }
    }
}

/// Parses `label,text` CSV (RFC 4180 quoting). Labels must be integers ≥ 0.
pub fn parse_dataset(bytes: &[u8]) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(bytes);
    let header = reader.headers().map_err(|e| csv_error(&e, 1))?.clone();
    if header.iter().collect::<Vec<_>>() != ["label", "text"] {
        return Err(Error::Data {
            line: 1,
            reason: format!("expected header \"label,text\", found {:?}", header.iter().collect::<Vec<_>>().join(",")),
        });
    }
    let mut examples = Vec::new();
    let mut lines = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(&e, 0))?;
        let line = record.position().map_or(0, |p| p.line());
        let raw = &record[0];
        let label: i64 = raw.trim().parse().map_err(|_| Error::Data {
            line,
            reason: format!("label {raw:?} is not an integer"),
        })?;
        if label < 0 {
            return Err(Error::Data {
                line,
                reason: format!("label {label} is negative"),
            });
        }
        examples.push(Example {
            label: label as usize,
            text: record[1].to_string(),
        });
        lines.push(line);
    }
    Ok(Dataset { examples, lines })
}

fn csv_error(e: &csv::Error, fallback_line: u64) -> Error {
    Error::Data {
        line: e.position().map_or(fallback_line, |p| p.line()),
        reason: e.to_string(),
    }
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&bytes)
}

pub fn dataset_to_csv(ds: &Dataset) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["label", "text"]).expect("in-memory write");
    for ex in &ds.examples {
        w.write_record([ex.label.to_string().as_str(), ex.text.as_str()])
            .expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

pub fn write_dataset(path: &Path, ds: &Dataset) -> Result<()> {
    fs::write(path, dataset_to_csv(ds)).map_err(|e| Error::io(path, e))
}
