//! Checkpoints: one `VMTENSOR` file per parameter plus a tab-separated
//! `manifest.txt` with `name`, `shape` (`AxBxC`, `scalar` for rank 0), and
//! `role` columns.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use super::ParamRole;
use crate::error::{Error, Result};
use crate::tensor::{read_tensor, write_tensor, Tensor};

pub const MANIFEST_FILE: &str = "manifest.txt";
const MANIFEST_HEADER: &str = "# vmapconv checkpoint v1: name\tshape\trole";

#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointEntry {
    pub name: String,
    pub role: ParamRole,
    pub value: Tensor,
}

fn shape_string(t: &Tensor) -> String {
    if t.dims().is_empty() {
        "scalar".to_string()
    } else {
        t.dims().iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x")
    }
}

fn valid_name(name: &str) -> bool {
    !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-'))
}

pub fn save_checkpoint(dir: &Path, entries: &[CheckpointEntry]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest_path = dir.join(MANIFEST_FILE);
    let mut manifest = String::from(MANIFEST_HEADER);
    manifest.push('\n');
    for e in entries {
        if !valid_name(&e.name) {
            return Err(Error::InvalidArgument(format!("invalid parameter name {:?}", e.name)));
        }
        let path = dir.join(format!("{}.vmt", e.name));
        let file = File::create(&path).map_err(|err| Error::io(&path, err))?;
        let mut w = BufWriter::new(file);
        write_tensor(&mut w, &e.value).and_then(|_| w.flush()).map_err(|err| Error::io(&path, err))?;
        manifest.push_str(&format!("{}\t{}\t{}\n", e.name, shape_string(&e.value), e.role.name()));
    }
    fs::write(&manifest_path, manifest).map_err(|e| Error::io(&manifest_path, e))
}

pub fn load_checkpoint(dir: &Path) -> Result<Vec<CheckpointEntry>> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let mut entries = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let [name, shape, role] = fields[..] else {
            return Err(Error::format(&manifest_path, format!("line {}: expected 3 fields", lineno + 1)));
        };
        let role = ParamRole::parse(role)
            .ok_or_else(|| Error::format(&manifest_path, format!("line {}: unknown role {role:?}", lineno + 1)))?;
        if !valid_name(name) {
            return Err(Error::format(&manifest_path, format!("line {}: invalid name {name:?}", lineno + 1)));
        }
        let path = dir.join(format!("{name}.vmt"));
        let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
        let value = read_tensor(&mut BufReader::new(file), &path)?;
        if shape_string(&value) != shape {
            return Err(Error::format(
                &manifest_path,
                format!("{name}: manifest shape {shape} but file holds {}", shape_string(&value)),
            ));
        }
        entries.push(CheckpointEntry {
            name: name.to_string(),
            role,
            value,
        });
    }
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bit_exact_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let entries = vec![
            CheckpointEntry {
                name: "conv1.shared".into(),
                role: ParamRole::Shared,
                value: Tensor::from_vec([1, 1, 2, 1, 1], vec![0.1, -f64::MIN_POSITIVE]).unwrap(),
            },
            CheckpointEntry {
                name: "conv1.l".into(),
                role: ParamRole::LMatrix,
                value: Tensor::from_vec([2, 2], vec![1.0, -1.0, 1.0, 1.0 + f64::EPSILON]).unwrap(),
            },
        ];
        save_checkpoint(dir.path(), &entries).unwrap();
        let back = load_checkpoint(dir.path()).unwrap();
        assert_eq!(back, entries);
        let manifest = fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap();
        assert!(manifest.contains("conv1.shared\t1x1x2x1x1\tshared\n"));
        assert!(manifest.contains("conv1.l\t2x2\tl\n"));
    }

    #[test]
    fn shape_disagreement_detected() {
        let dir = tempfile::tempdir().unwrap();
        let entries = vec![CheckpointEntry {
            name: "w".into(),
            role: ParamRole::Weight,
            value: Tensor::zeros([2, 3]),
        }];
        save_checkpoint(dir.path(), &entries).unwrap();
        let mpath = dir.path().join(MANIFEST_FILE);
        let m = fs::read_to_string(&mpath).unwrap().replace("2x3", "3x2");
        fs::write(&mpath, m).unwrap();
        assert!(load_checkpoint(dir.path()).is_err());
    }
}
