//! Batch datasets and their JSONL / CSV file formats.
//!
//! Line 1 of a dataset file is a header object
//! `{schema, schema_digest, seed, provenance, hidden_columns}`; every further
//! line is one trajectory `{"static": [...], "obs": [[...], ...], "act": [...]}`.
//! Observations in the file already exclude the hidden columns.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::digest::{digest_of, sha256_hex};
use crate::error::{Error, Result};
use crate::schema::{validate_trajectory, DomainSchema, Trajectory, Violation};

#[derive(Debug, Clone, PartialEq)]
pub struct BatchDataset {
    /// Full domain schema, before any confounding projection.
    pub schema: DomainSchema,
    pub trajectories: Vec<Trajectory>,
    pub seed: u64,
    /// Digest of the scenario configuration that produced the data.
    pub provenance: String,
    /// Temporal features removed from every observation.
    pub hidden_columns: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    schema: DomainSchema,
    schema_digest: String,
    seed: u64,
    provenance: String,
    hidden_columns: Vec<String>,
}

impl BatchDataset {
    pub fn new(schema: DomainSchema, seed: u64, provenance: impl Into<String>) -> Self {
        BatchDataset {
            schema,
            trajectories: Vec::new(),
            seed,
            provenance: provenance.into(),
            hidden_columns: Vec::new(),
        }
    }

    /// Schema the stored observations conform to.
    pub fn visible_schema(&self) -> Result<DomainSchema> {
        if self.hidden_columns.is_empty() {
            Ok(self.schema.clone())
        } else {
            self.schema.without_temporal(&self.hidden_columns)
        }
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn total_steps(&self) -> usize {
        self.trajectories.iter().map(|t| t.len()).sum()
    }

    /// `(index, violations)` for every non-conforming trajectory.
    pub fn violations(&self) -> Result<Vec<(usize, Vec<Violation>)>> {
        let schema = self.visible_schema()?;
        Ok(self
            .trajectories
            .iter()
            .enumerate()
            .map(|(i, t)| (i, validate_trajectory(t, &schema)))
            .filter(|(_, v)| !v.is_empty())
            .collect())
    }

    pub fn validate(&self) -> Result<()> {
        if let Some((i, v)) = self.violations()?.into_iter().next() {
            return Err(Error::config(format!("trajectory {i}: {}", v[0])));
        }
        Ok(())
    }

    fn header(&self) -> Result<Header> {
        Ok(Header {
            schema: self.schema.clone(),
            schema_digest: digest_of(&self.schema)?,
            seed: self.seed,
            provenance: self.provenance.clone(),
            hidden_columns: self.hidden_columns.clone(),
        })
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        serde_json::to_writer(&mut w, &self.header()?)?;
        w.write_all(b"\n")?;
        for t in &self.trajectories {
            serde_json::to_writer(&mut w, t)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf)?;
        Ok(buf)
    }

    /// SHA-256 of the serialized file contents.
    pub fn digest(&self) -> Result<String> {
        Ok(sha256_hex(&self.to_jsonl_bytes()?))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = fs::File::create(path)?;
        let mut w = BufWriter::new(f);
        self.write_jsonl(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = fs::File::open(path)?;
        Self::read_jsonl(BufReader::new(f), path)
    }

    pub fn read_jsonl<R: BufRead>(r: R, path: &Path) -> Result<Self> {
        let parse_err = |line: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut lines = r.lines();
        let first = lines
            .next()
            .ok_or_else(|| parse_err(1, "missing header line".into()))??;
        let header: Header =
            serde_json::from_str(&first).map_err(|e| parse_err(1, e.to_string()))?;
        let actual = digest_of(&header.schema)?;
        if actual != header.schema_digest {
            return Err(Error::Integrity(format!(
                "schema digest {} does not match recorded {}",
                actual, header.schema_digest
            )));
        }
        let mut trajectories = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let t: Trajectory =
                serde_json::from_str(&line).map_err(|e| parse_err(i + 2, e.to_string()))?;
            trajectories.push(t);
        }
        Ok(BatchDataset {
            schema: header.schema,
            trajectories,
            seed: header.seed,
            provenance: header.provenance,
            hidden_columns: header.hidden_columns,
        })
    }

    /// Wide CSV: one row per timestep with `traj`, `t`, static features,
    /// visible temporal features and the action.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let schema = self.visible_schema()?;
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["traj".to_string(), "t".to_string()];
        header.extend(schema.static_space.names.iter().cloned());
        header.extend(schema.temporal_space.names.iter().cloned());
        header.push("action".into());
        out.write_record(&header)?;
        for (i, traj) in self.trajectories.iter().enumerate() {
            for (t, (x, a)) in traj.observations.iter().zip(&traj.actions).enumerate() {
                let mut row = vec![i.to_string(), (t + 1).to_string()];
                row.extend(traj.static_features.iter().map(|v| v.to_string()));
                row.extend(x.iter().map(|v| v.to_string()));
                row.push(a.to_string());
                out.write_record(&row)?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(BufWriter::new(fs::File::create(path)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::FeatureSpace;

    fn tiny_schema() -> DomainSchema {
        DomainSchema::new(
            "tiny",
            FeatureSpace::new(&["s0"], &["s1"]).unwrap(),
            FeatureSpace::new(&["f0", "f1", "f2", "f3"], &["f4"]).unwrap(),
            crate::schema::ActionSpace::new(2).unwrap(),
            10,
        )
        .unwrap()
    }

    #[test]
    fn empty_dataset_round_trips() {
        let d = BatchDataset::new(tiny_schema(), 3, "abc");
        let bytes = d.to_jsonl_bytes().unwrap();
        let back = BatchDataset::read_jsonl(&bytes[..], Path::new("mem")).unwrap();
        assert_eq!(d, back);
    }

    #[test]
    fn hidden_column_rows_are_narrower() {
        let mut d = BatchDataset::new(tiny_schema(), 3, "abc");
        d.hidden_columns = vec!["f3".into()];
        d.trajectories.push(Trajectory {
            static_features: vec![0.5, 1.0],
            observations: vec![vec![0.1, 0.2, 0.3, 1.0]],
            actions: vec![1],
        });
        d.validate().unwrap();
        let text = String::from_utf8(d.to_jsonl_bytes().unwrap()).unwrap();
        let row: serde_json::Value = serde_json::from_str(text.lines().nth(1).unwrap()).unwrap();
        assert_eq!(row["obs"][0].as_array().unwrap().len(), 5 - 1);
        let mut csv = Vec::new();
        d.write_csv(&mut csv).unwrap();
        let csv = String::from_utf8(csv).unwrap();
        assert_eq!(csv.lines().next().unwrap(), "traj,t,s0,s1,f0,f1,f2,f4,action");
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let d = BatchDataset::new(tiny_schema(), 3, "abc");
        let mut bytes = d.to_jsonl_bytes().unwrap();
        bytes.extend_from_slice(b"{\"static\": [1, 0], \"obs\": [], \"act\": []}\n{oops\n");
        match BatchDataset::read_jsonl(&bytes[..], Path::new("d.jsonl")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn tampered_schema_is_integrity_error() {
        let d = BatchDataset::new(tiny_schema(), 3, "abc");
        let text = String::from_utf8(d.to_jsonl_bytes().unwrap()).unwrap();
        let text = text.replace("\"max_length\":10", "\"max_length\":11");
        assert!(matches!(
            BatchDataset::read_jsonl(text.as_bytes(), Path::new("d")),
            Err(Error::Integrity(_))
        ));
    }
}
