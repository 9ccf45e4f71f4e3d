//! JSON-lines mirror of topic traffic: one file per topic, one record per
//! line.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Record<T> {
    pub seq: u64,
    pub t_ms: u64,
    pub payload: T,
}

pub struct TopicRecorder {
    dir: PathBuf,
    files: BTreeMap<String, (BufWriter<File>, u64)>,
}

impl TopicRecorder {
    pub fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(Self {
            dir: dir.to_owned(),
            files: BTreeMap::new(),
        })
    }

    pub fn path_of(dir: &Path, topic: &str) -> PathBuf {
        dir.join(format!("{topic}.jsonl"))
    }

    pub fn record<T: Serialize>(&mut self, topic: &str, t_ms: u64, payload: &T) -> Result<()> {
        if !self.files.contains_key(topic) {
            let path = Self::path_of(&self.dir, topic);
            let f = File::create(&path).map_err(|e| Error::io(&path, e))?;
            self.files.insert(topic.to_owned(), (BufWriter::new(f), 0));
        }
        let (w, seq) = self.files.get_mut(topic).expect("inserted above");
        let rec = Record {
            seq: *seq,
            t_ms,
            payload,
        };
        let line = serde_json::to_string(&rec).map_err(|e| Error::Codec(e.to_string()))?;
        *seq += 1;
        writeln!(w, "{line}").map_err(|e| Error::io(Self::path_of(&self.dir, topic), e))
    }

    /// Flushes everything; returns records written per topic.
    pub fn finish(mut self) -> Result<BTreeMap<String, u64>> {
        let mut counts = BTreeMap::new();
        for (topic, (w, n)) in std::mem::take(&mut self.files) {
            let path = Self::path_of(&self.dir, &topic);
            w.into_inner()
                .map_err(|e| Error::io(&path, e.into_error()))?
                .sync_all()
                .map_err(|e| Error::io(&path, e))?;
            counts.insert(topic, n);
        }
        Ok(counts)
    }
}

/// Reads a topic file back. Sequence numbers must count up from 0; any bad
/// line is reported with its file and 1-based line number.
pub fn read_topic<T: DeserializeOwned>(path: &Path) -> Result<Vec<Record<T>>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let rec: Record<T> =
            serde_json::from_str(&line).map_err(|e| Error::schema(path, i + 1, e.to_string()))?;
        if rec.seq != i as u64 {
            return Err(Error::schema(
                path,
                i + 1,
                format!("sequence {} where {} was expected", rec.seq, i),
            ));
        }
        out.push(rec);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_error_location() {
        let dir = tempfile::tempdir().unwrap();
        let mut r = TopicRecorder::create(dir.path()).unwrap();
        for i in 0..3u32 {
            r.record("commands", 100 * i as u64, &[i, i + 1]).unwrap();
        }
        r.record("other", 0, &"x").unwrap();
        let counts = r.finish().unwrap();
        assert_eq!(counts["commands"], 3);

        let path = TopicRecorder::path_of(dir.path(), "commands");
        let back: Vec<Record<[u32; 2]>> = read_topic(&path).unwrap();
        assert_eq!(back[2].payload, [2, 3]);
        assert_eq!(back[1].t_ms, 100);

        let text = fs::read_to_string(&path).unwrap();
        fs::write(&path, &text[..text.len() - 5]).unwrap();
        let err = read_topic::<[u32; 2]>(&path).unwrap_err();
        match err {
            Error::Schema { file, line, .. } => {
                assert_eq!(file, path);
                assert_eq!(line, 3);
            }
            other => panic!("{other}"),
        }
    }
}
