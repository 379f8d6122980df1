//! Labeled cascade records and their JSON Lines encoding.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{induce_cascade, CascadeGraph, GlobalGraph, NodeId};

/// `log2(Δs + 1)`, the regression target.
pub fn scale_label(growth: u64) -> f64 {
    ((growth + 1) as f64).log2()
}

/// One labeled example: the adopters observed by time `t` and the size
/// increment at each prediction horizon.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CascadeRecord {
    pub id: String,
    pub roots: Vec<NodeId>,
    /// Adoption order; generated records start with their roots.
    pub adopters: Vec<NodeId>,
    pub growth: BTreeMap<u32, u64>,
    pub y: BTreeMap<u32, f64>,
}

impl CascadeRecord {
    pub fn new(id: String, roots: Vec<NodeId>, adopters: Vec<NodeId>, growth: BTreeMap<u32, u64>) -> Self {
        let y = growth.iter().map(|(&h, &g)| (h, scale_label(g))).collect();
        CascadeRecord { id, roots, adopters, growth, y }
    }

    pub fn label(&self, horizon: u32) -> Result<f64> {
        self.y
            .get(&horizon)
            .copied()
            .ok_or_else(|| Error::domain(format!("cascade {} has no label for horizon {horizon}", self.id)))
    }

    pub fn growth_at(&self, horizon: u32) -> Result<u64> {
        self.growth
            .get(&horizon)
            .copied()
            .ok_or_else(|| Error::domain(format!("cascade {} has no growth for horizon {horizon}", self.id)))
    }

    pub fn graph(&self, g: &GlobalGraph) -> Result<CascadeGraph> {
        induce_cascade(g, &self.adopters, &self.roots)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::with_capacity(self.adopters.len());
        if self.adopters.is_empty() {
            return Err(Error::domain(format!("cascade {}: no adopters", self.id)));
        }
        for v in &self.adopters {
            if !seen.insert(*v) {
                return Err(Error::domain(format!("cascade {}: adopter {v} repeated", self.id)));
            }
        }
        if self.roots.is_empty() || self.roots.iter().any(|r| !seen.contains(r)) {
            return Err(Error::domain(format!("cascade {}: roots must be non-empty adopters", self.id)));
        }
        if self.growth.keys().ne(self.y.keys()) {
            return Err(Error::domain(format!("cascade {}: growth and y horizons differ", self.id)));
        }
        for (h, &g) in &self.growth {
            let y = self.y[h];
            if (y - scale_label(g)).abs() > 1e-9 {
                return Err(Error::domain(format!(
                    "cascade {}: y[{h}]={y} inconsistent with growth {g}",
                    self.id
                )));
            }
        }
        Ok(())
    }
}

pub fn write_jsonl<W: Write>(records: &[CascadeRecord], w: W) -> Result<()> {
    let mut w = BufWriter::new(w);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_jsonl(records: &[CascadeRecord], path: impl AsRef<Path>) -> Result<()> {
    write_jsonl(records, File::create(path)?)
}

pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Vec<CascadeRecord>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: CascadeRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Parse { line: i + 1, msg: e.to_string() })?;
        rec.validate().map_err(|e| Error::Parse { line: i + 1, msg: e.to_string() })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Vec<CascadeRecord>> {
    read_jsonl(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(growth: u64) -> CascadeRecord {
        CascadeRecord::new(
            "c1".into(),
            vec![NodeId(3)],
            vec![NodeId(3), NodeId(1)],
            BTreeMap::from([(2, growth)]),
        )
    }

    #[test]
    fn label_formula() {
        assert_eq!(scale_label(7), 3.0);
        assert_eq!(scale_label(1), 1.0);
        assert_eq!(scale_label(0), 0.0);
    }

    #[test]
    fn jsonl_layout_and_roundtrip() {
        let r = rec(7);
        let mut buf = Vec::new();
        write_jsonl(std::slice::from_ref(&r), &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(
            text,
            "{\"id\":\"c1\",\"roots\":[3],\"adopters\":[3,1],\"growth\":{\"2\":7},\"y\":{\"2\":3.0}}\n"
        );
        assert_eq!(read_jsonl(buf.as_slice()).unwrap(), vec![r]);
    }

    #[test]
    fn rejects_inconsistent_records() {
        let mut r = rec(7);
        r.y.insert(2, 2.0);
        assert!(r.validate().is_err());
        let mut r = rec(1);
        r.adopters.push(NodeId(3));
        assert!(r.validate().is_err());
        let mut r = rec(1);
        r.roots = vec![NodeId(9)];
        assert!(r.validate().is_err());
        let line = "{\"id\":\"c\",\"roots\":[9],\"adopters\":[1],\"growth\":{},\"y\":{}}\n";
        assert!(matches!(read_jsonl(line.as_bytes()), Err(Error::Parse { line: 1, .. })));
    }
}
