//! Checkpoints: one FTNS file per parameter plus a text manifest holding the
//! step counter, the role and the full training configuration.

use std::fs;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use super::config::TrainConfig;
use crate::error::{bail, Result};
use crate::teacher_student::{ParameterStore, Role};
use crate::tensorkit::interchange::{read_tensor, write_tensor, DType};

const MANIFEST: &str = "manifest.txt";

pub fn save_checkpoint(dir: &Path, store: &ParameterStore, config: &TrainConfig, step: usize) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (name, t) in store.iter() {
        let f = fs::File::create(dir.join(format!("{name}.ftns")))?;
        write_tensor(BufWriter::new(f), t, DType::F64)?;
    }
    let text = format!("step = {step}\nrole = {}\n{}", store.role(), config.to_text());
    fs::write(dir.join(MANIFEST), text)?;
    Ok(())
}

/// Returns the store, its configuration and the step counter.
pub fn load_checkpoint(dir: &Path) -> Result<(ParameterStore, TrainConfig, usize)> {
    let text = fs::read_to_string(dir.join(MANIFEST))?;
    let (mut step, mut role) = (None, None);
    let mut rest = String::new();
    for line in text.lines() {
        match line.split_once('=').map(|(k, v)| (k.trim(), v.trim())) {
            Some(("step", v)) => step = v.parse::<usize>().ok(),
            Some(("role", "student")) => role = Some(Role::Student),
            Some(("role", "teacher")) => role = Some(Role::Teacher),
            _ => {
                rest.push_str(line);
                rest.push('\n');
            }
        }
    }
    let (Some(step), Some(role)) = (step, role) else {
        bail!(Format, "checkpoint manifest lacks a step or role");
    };
    let config = TrainConfig::parse_str(&rest)?;
    let mut store = ParameterStore::new(role);
    for (name, shape, _) in config.model().layout() {
        let f = fs::File::open(dir.join(format!("{name}.ftns")))?;
        let t = read_tensor(BufReader::new(f))?;
        if t.shape() != shape.as_slice() {
            bail!(Format, "checkpoint entry {name} has shape {:?}, expected {:?}", t.shape(), shape);
        }
        store.insert(name, t);
    }
    Ok((store, config, step))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_params;

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = TrainConfig {
            base_width: 4,
            embed_dim: 4,
            seed: 12,
            ..TrainConfig::default()
        };
        let store = init_params(&cfg.model(), 3).unwrap().clone_as(Role::Teacher);
        save_checkpoint(dir.path(), &store, &cfg, 77).unwrap();
        let (back, cfg2, step) = load_checkpoint(dir.path()).unwrap();
        assert_eq!(back, store);
        assert_eq!(cfg2, cfg);
        assert_eq!(step, 77);
        fs::remove_file(dir.path().join("cls.bias.ftns")).unwrap();
        assert!(load_checkpoint(dir.path()).is_err());
    }
}
