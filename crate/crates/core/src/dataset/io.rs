//! `.egd` corpus files: a JSON header line followed by one JSON record per
//! demonstration, all numeric fields stored as flat arrays.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::hand::UnifiedAction;
use crate::triangulation::ObjectState;

use super::{DatasetError, DemoMeta, DemoSource, Demonstration, Step};

pub const FORMAT_VERSION: u32 = 1;
const FORMAT_TAG: &str = "egd";

/// A set of demonstrations of one task with a fixed number of object points.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub task: String,
    pub num_points: usize,
    pub demos: Vec<Demonstration>,
}

impl Corpus {
    pub fn new(task: impl Into<String>, demos: Vec<Demonstration>) -> Self {
        let num_points = demos.first().map_or(0, |d| d.object_state.len());
        Self { task: task.into(), num_points, demos }
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    task: String,
    num_points: usize,
    num_demos: usize,
    units: String,
}

#[derive(Serialize, Deserialize)]
struct Record {
    task_name: String,
    seed: u64,
    frame_rate: f64,
    source: DemoSource,
    object_points: Vec<f64>,
    proprio: Vec<f64>,
    actions: Vec<f64>,
}

impl Record {
    fn from_demo(d: &Demonstration) -> Self {
        Self {
            task_name: d.task_name.clone(),
            seed: d.meta.seed,
            frame_rate: d.meta.frame_rate,
            source: d.meta.source,
            object_points: d.object_state.flat(),
            proprio: d.steps.iter().flat_map(|s| s.proprio.to_array()).collect(),
            actions: d.steps.iter().flat_map(|s| s.action.to_array()).collect(),
        }
    }

    fn into_demo(self, num_points: usize) -> Result<Demonstration, String> {
        if self.object_points.len() != 3 * num_points {
            return Err(format!("expected {} object coordinates, found {}", 3 * num_points, self.object_points.len()));
        }
        if !self.actions.len().is_multiple_of(UnifiedAction::DIM) || self.proprio.len() != self.actions.len() {
            return Err(format!(
                "action/proprio arrays must be equal multiples of {} (found {} and {})",
                UnifiedAction::DIM,
                self.actions.len(),
                self.proprio.len()
            ));
        }
        let steps = self
            .proprio
            .chunks_exact(UnifiedAction::DIM)
            .zip(self.actions.chunks_exact(UnifiedAction::DIM))
            .map(|(p, a)| Step { proprio: UnifiedAction::from_slice(p), action: UnifiedAction::from_slice(a) })
            .collect();
        Ok(Demonstration {
            task_name: self.task_name,
            object_state: ObjectState::from_flat(&self.object_points).expect("length checked"),
            steps,
            meta: DemoMeta { seed: self.seed, frame_rate: self.frame_rate, source: self.source },
        })
    }
}

/// Writes `corpus` in `.egd` format. `name` is used in error messages.
pub fn write_demos(mut w: impl Write, corpus: &Corpus, name: &str) -> Result<(), DatasetError> {
    let io_err = |source| DatasetError::Io { path: name.to_string(), source };
    let header = Header {
        format: FORMAT_TAG.into(),
        version: FORMAT_VERSION,
        task: corpus.task.clone(),
        num_points: corpus.num_points,
        num_demos: corpus.demos.len(),
        units: "meters".into(),
    };
    serde_json::to_writer(&mut w, &header).map_err(|e| io_err(e.into()))?;
    w.write_all(b"\n").map_err(io_err)?;
    for d in &corpus.demos {
        serde_json::to_writer(&mut w, &Record::from_demo(d)).map_err(|e| io_err(e.into()))?;
        w.write_all(b"\n").map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

pub fn read_demos(r: impl Read, name: &str) -> Result<Corpus, DatasetError> {
    let malformed = |line: usize, message: String| DatasetError::Malformed { path: name.to_string(), line, message };
    let mut lines = BufReader::new(r).lines();
    let header_line = match lines.next() {
        Some(l) => l.map_err(|source| DatasetError::Io { path: name.to_string(), source })?,
        None => return Err(malformed(1, "missing header".into())),
    };
    let header: Header = serde_json::from_str(&header_line).map_err(|e| malformed(1, format!("bad header: {e}")))?;
    if header.format != FORMAT_TAG {
        return Err(malformed(1, format!("not an egd file (format tag {:?})", header.format)));
    }
    if header.version != FORMAT_VERSION {
        return Err(DatasetError::VersionMismatch { path: name.to_string(), found: header.version, expected: FORMAT_VERSION });
    }
    let mut demos = Vec::with_capacity(header.num_demos);
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        let line = line.map_err(|source| DatasetError::Io { path: name.to_string(), source })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line).map_err(|e| malformed(lineno, format!("bad record: {e}")))?;
        demos.push(rec.into_demo(header.num_points).map_err(|m| malformed(lineno, m))?);
    }
    if demos.len() != header.num_demos {
        return Err(malformed(
            demos.len() + 2,
            format!("header announces {} demos but {} were read", header.num_demos, demos.len()),
        ));
    }
    Ok(Corpus { task: header.task, num_points: header.num_points, demos })
}

pub fn save_demos(path: impl AsRef<Path>, corpus: &Corpus) -> Result<(), DatasetError> {
    let path = path.as_ref();
    let name = path.display().to_string();
    let f = File::create(path).map_err(|source| DatasetError::Io { path: name.clone(), source })?;
    write_demos(BufWriter::new(f), corpus, &name)
}

pub fn load_demos(path: impl AsRef<Path>) -> Result<Corpus, DatasetError> {
    let path = path.as_ref();
    let name = path.display().to_string();
    let f = File::open(path).map_err(|source| DatasetError::Io { path: name.clone(), source })?;
    read_demos(f, &name)
}

#[cfg(test)]
mod tests {
    use super::super::testutil::*;
    use super::*;
    use crate::geometry::Vec3;
    use proptest::prelude::*;

    fn corpus(n: usize) -> Corpus {
        let demos = (0..n)
            .map(|i| {
                let mut d = line_demo(5 + i % 7, 0.013 * (i as f64 + 1.0) / 3.0, Some(2 + i % 3));
                d.object_state.points[0] += Vec3::new(1.0 / 3.0, -2.0 / 7.0, 0.1 * i as f64);
                d.meta.seed = i as u64 * 7919;
                d
            })
            .collect();
        Corpus::new("pick", demos)
    }

    #[test]
    fn hundred_demo_round_trip() {
        let c = corpus(100);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.egd");
        save_demos(&path, &c).unwrap();
        assert_eq!(load_demos(&path).unwrap(), c);
    }

    #[test]
    fn truncated_file_is_malformed() {
        let c = corpus(4);
        let mut buf = Vec::new();
        write_demos(&mut buf, &c, "mem").unwrap();
        let cut = &buf[..buf.len() - 40];
        assert!(matches!(read_demos(cut, "mem"), Err(DatasetError::Malformed { line: 5, .. })));
        // Dropping whole records is caught by the header count.
        let text = String::from_utf8(buf).unwrap();
        let first_three: String = text.lines().take(3).map(|l| format!("{l}\n")).collect();
        assert!(matches!(read_demos(first_three.as_bytes(), "mem"), Err(DatasetError::Malformed { .. })));
    }

    #[test]
    fn version_zero_is_rejected() {
        let c = corpus(2);
        let mut buf = Vec::new();
        write_demos(&mut buf, &c, "mem").unwrap();
        let text = String::from_utf8(buf).unwrap().replacen("\"version\":1", "\"version\":0", 1);
        assert!(matches!(
            read_demos(text.as_bytes(), "mem"),
            Err(DatasetError::VersionMismatch { found: 0, expected: 1, .. })
        ));
    }

    #[test]
    fn wrong_point_count_is_malformed() {
        let mut c = corpus(2);
        c.num_points = 3;
        let mut buf = Vec::new();
        write_demos(&mut buf, &c, "mem").unwrap();
        assert!(matches!(read_demos(buf.as_slice(), "mem"), Err(DatasetError::Malformed { line: 2, .. })));
    }

    proptest! {
        #[test]
        fn floats_survive_bitwise(vals in prop::collection::vec(-1e3f64..1e3, 7..70)) {
            let n = vals.len() / 7 * 7;
            let actions: Vec<_> = vals[..n].chunks(7).map(UnifiedAction::from_slice).collect();
            let d = Demonstration::from_actions("p", ObjectState::new(vec![Vec3::new(vals[0], vals[1] * 1e-7, vals[2] / 3.0)]), &actions, DemoMeta::default());
            let c = Corpus::new("p", vec![d]);
            let mut buf = Vec::new();
            write_demos(&mut buf, &c, "mem").unwrap();
            let back = read_demos(buf.as_slice(), "mem").unwrap();
            let bits = |c: &Corpus| c.demos[0].steps.iter().flat_map(|s| s.action.to_array()).map(f64::to_bits).collect::<Vec<_>>();
            prop_assert_eq!(bits(&back), bits(&c));
            prop_assert_eq!(back, c);
        }
    }
}
