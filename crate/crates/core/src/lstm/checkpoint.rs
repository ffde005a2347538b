use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::{LstmParams, LstmShape};
use super::{LstmConfig, LstmEnsemble, LstmMember};
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;
const FORMAT: &str = "volform-lstm";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedBlock {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMember {
    pub seed: u64,
    pub blocks: Vec<NamedBlock>,
}

/// On-disk form of an ensemble. Floats are written with shortest
/// round-trip formatting, so loading restores every bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: LstmConfig,
    pub members: Vec<CheckpointMember>,
}

impl From<&LstmEnsemble> for Checkpoint {
    fn from(ens: &LstmEnsemble) -> Self {
        let members = ens
            .members
            .iter()
            .map(|m| CheckpointMember {
                seed: m.seed,
                blocks: m
                    .params
                    .shape
                    .blocks()
                    .into_iter()
                    .map(|(name, off, rows, cols)| NamedBlock {
                        name,
                        rows,
                        cols,
                        values: m.params.values[off..off + rows * cols].to_vec(),
                    })
                    .collect(),
            })
            .collect();
        Checkpoint {
            format: FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config: ens.config.clone(),
            members,
        }
    }
}

impl Checkpoint {
    pub fn into_ensemble(self) -> Result<LstmEnsemble> {
        if self.format != FORMAT || self.version != CHECKPOINT_VERSION {
            return Err(Error::InvalidInput(format!(
                "unsupported checkpoint {} v{}",
                self.format, self.version
            )));
        }
        let shape: LstmShape = self.config.shape();
        let layout = shape.blocks();
        let mut members = Vec::with_capacity(self.members.len());
        for m in self.members {
            if m.blocks.len() != layout.len() {
                return Err(Error::InvalidInput(format!(
                    "member {} has {} blocks, expected {}",
                    m.seed,
                    m.blocks.len(),
                    layout.len()
                )));
            }
            let mut params = LstmParams::zeros(shape);
            for (b, (name, off, rows, cols)) in m.blocks.iter().zip(&layout) {
                if &b.name != name || b.rows != *rows || b.cols != *cols || b.values.len() != rows * cols {
                    return Err(Error::InvalidInput(format!(
                        "member {}: block {} ({}x{}) does not match expected {name} ({rows}x{cols})",
                        m.seed, b.name, b.rows, b.cols
                    )));
                }
                params.values[*off..off + rows * cols].copy_from_slice(&b.values);
            }
            members.push(LstmMember { seed: m.seed, params });
        }
        let ens = LstmEnsemble {
            config: self.config,
            members,
        };
        ens.validate()?;
        Ok(ens)
    }
}

pub fn write_checkpoint<W: Write>(ensemble: &LstmEnsemble, writer: W) -> Result<()> {
    serde_json::to_writer_pretty(writer, &Checkpoint::from(ensemble))?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(reader: R) -> Result<LstmEnsemble> {
    let ck: Checkpoint = serde_json::from_reader(reader)?;
    ck.into_ensemble()
}

pub fn save_checkpoint(ensemble: &LstmEnsemble, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_checkpoint(ensemble, &mut w)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<LstmEnsemble> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn awkward_ensemble() -> LstmEnsemble {
        let config = LstmConfig {
            seeds: vec![5, 6],
            ..LstmConfig::default()
        };
        let mut rng = crate::simulate::rng_from_seed(11);
        let members = config
            .seeds
            .iter()
            .map(|&seed| {
                let mut params = LstmParams::zeros(config.shape());
                params
                    .values
                    .iter_mut()
                    .for_each(|v| *v = rng.random::<f64>() * 10f64.powi(rng.random_range(-300..300)));
                LstmMember { seed, params }
            })
            .collect();
        LstmEnsemble { config, members }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ens = awkward_ensemble();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        save_checkpoint(&ens, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        for (a, b) in ens.members.iter().zip(&back.members) {
            let bits = |p: &LstmParams| p.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.params), bits(&b.params));
        }
        assert_eq!(back, ens);
        let mut again = Vec::new();
        write_checkpoint(&back, &mut again).unwrap();
        assert_eq!(again, std::fs::read(&path).unwrap());
    }

    #[test]
    fn rejects_mismatched_blocks() {
        let mut ck = Checkpoint::from(&awkward_ensemble());
        ck.members[0].blocks[3].name = "layer0.W_xx".into();
        assert!(ck.clone().into_ensemble().is_err());
        let mut ck2 = Checkpoint::from(&awkward_ensemble());
        ck2.version = 99;
        assert!(ck2.into_ensemble().is_err());
        assert!(load_checkpoint("/nonexistent/ck.json").unwrap_err().to_string().contains("/nonexistent/ck.json"));
    }
}
