//! Parameter snapshots keyed by step, held in memory or written to a
//! directory as `step_{t}.bin` (little-endian f64) beside `layout.json`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::model::{Layout, ParamVector};

pub const LAYOUT_FILE: &str = "layout.json";

#[derive(Clone, Debug)]
enum Backing {
    Memory(BTreeMap<usize, Arc<Vec<f64>>>),
    Dir { path: PathBuf, steps: Vec<usize> },
}

#[derive(Clone, Debug)]
pub struct CheckpointStore {
    layout: Arc<Layout>,
    backing: Backing,
}

pub fn step_file_name(step: usize) -> String {
    format!("step_{step}.bin")
}

fn parse_step(name: &str) -> Option<usize> {
    name.strip_prefix("step_")?.strip_suffix(".bin")?.parse().ok()
}

impl CheckpointStore {
    pub fn in_memory(layout: Arc<Layout>) -> Self {
        Self {
            layout,
            backing: Backing::Memory(BTreeMap::new()),
        }
    }

    /// Creates `dir` if needed and writes the layout manifest.
    pub fn create_dir(dir: impl AsRef<Path>, layout: Arc<Layout>) -> Result<Self> {
        let path = dir.as_ref().to_path_buf();
        fs::create_dir_all(&path)?;
        fs::write(path.join(LAYOUT_FILE), serde_json::to_vec_pretty(&*layout)?)?;
        Ok(Self {
            layout,
            backing: Backing::Dir {
                path,
                steps: Vec::new(),
            },
        })
    }

    /// Opens an existing checkpoint directory.
    pub fn open_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let path = dir.as_ref().to_path_buf();
        let manifest = path.join(LAYOUT_FILE);
        if !manifest.exists() {
            return Err(Error::MissingCheckpoint(manifest.display().to_string()));
        }
        let layout: Layout = serde_json::from_slice(&fs::read(&manifest)?)?;
        layout.validate()?;
        let mut steps: Vec<usize> = fs::read_dir(&path)?
            .filter_map(|e| e.ok())
            .filter_map(|e| parse_step(&e.file_name().to_string_lossy()))
            .collect();
        steps.sort_unstable();
        Ok(Self {
            layout: Arc::new(layout),
            backing: Backing::Dir { path, steps },
        })
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn dir(&self) -> Option<&Path> {
        match &self.backing {
            Backing::Dir { path, .. } => Some(path),
            Backing::Memory(_) => None,
        }
    }

    pub fn save(&mut self, step: usize, values: &[f64]) -> Result<()> {
        if values.len() != self.layout.total() {
            return Err(Error::Shape(format!(
                "checkpoint of {} values for a layout of {}",
                values.len(),
                self.layout.total()
            )));
        }
        match &mut self.backing {
            Backing::Memory(map) => {
                map.insert(step, Arc::new(values.to_vec()));
            }
            Backing::Dir { path, steps } => {
                let mut bytes = Vec::with_capacity(values.len() * 8);
                for v in values {
                    bytes.extend_from_slice(&v.to_le_bytes());
                }
                fs::write(path.join(step_file_name(step)), bytes)?;
                if let Err(i) = steps.binary_search(&step) {
                    steps.insert(i, step);
                }
            }
        }
        Ok(())
    }

    pub fn contains(&self, step: usize) -> bool {
        match &self.backing {
            Backing::Memory(map) => map.contains_key(&step),
            Backing::Dir { steps, .. } => steps.binary_search(&step).is_ok(),
        }
    }

    /// Sorted checkpointed steps.
    pub fn steps(&self) -> Vec<usize> {
        match &self.backing {
            Backing::Memory(map) => map.keys().copied().collect(),
            Backing::Dir { steps, .. } => steps.clone(),
        }
    }

    pub fn last_step(&self) -> Option<usize> {
        self.steps().last().copied()
    }

    pub fn load(&self, step: usize) -> Result<ParamVector> {
        let values = match &self.backing {
            Backing::Memory(map) => map
                .get(&step)
                .map(|v| v.as_ref().clone())
                .ok_or_else(|| Error::MissingCheckpoint(format!("step {step}")))?,
            Backing::Dir { path, .. } => {
                let file = path.join(step_file_name(step));
                if !file.exists() {
                    return Err(Error::MissingCheckpoint(file.display().to_string()));
                }
                let bytes = fs::read(&file)?;
                if bytes.len() != self.layout.total() * 8 {
                    return Err(Error::Shape(format!(
                        "{} holds {} bytes, expected {}",
                        file.display(),
                        bytes.len(),
                        self.layout.total() * 8
                    )));
                }
                bytes
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                    .collect()
            }
        };
        ParamVector::new(values, self.layout.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Model, ModelConfig};

    fn layout() -> Arc<Layout> {
        Model::new(ModelConfig::mlp(4, 6, 9, 5)).unwrap().layout().clone()
    }

    #[test]
    fn memory_round_trip() {
        let l = layout();
        let mut s = CheckpointStore::in_memory(l.clone());
        let v: Vec<f64> = (0..l.total()).map(|i| i as f64 * 0.5 - 3.0).collect();
        s.save(20, &v).unwrap();
        s.save(10, &v).unwrap();
        assert_eq!(s.steps(), vec![10, 20]);
        assert_eq!(s.load(20).unwrap().values, v);
        assert!(matches!(s.load(30), Err(Error::MissingCheckpoint(_))));
        assert!(s.save(1, &v[1..]).is_err());
    }

    #[test]
    fn dir_round_trip_is_bit_exact() {
        let l = layout();
        let tmp = tempfile::tempdir().unwrap();
        let mut s = CheckpointStore::create_dir(tmp.path(), l.clone()).unwrap();
        let v: Vec<f64> = (0..l.total()).map(|i| (i as f64).sin() * 1e-7 + f64::EPSILON).collect();
        s.save(0, &v).unwrap();
        s.save(15, &v).unwrap();
        let r = CheckpointStore::open_dir(tmp.path()).unwrap();
        assert_eq!(r.steps(), vec![0, 15]);
        assert_eq!(*r.layout(), l);
        let back = r.load(15).unwrap();
        assert!(back.values.iter().zip(&v).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert!(r.load(7).is_err());
    }
}
