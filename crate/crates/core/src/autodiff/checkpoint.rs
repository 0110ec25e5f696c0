use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::tensor::{ParamStore, Tensor};
use super::{AutodiffError, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorRecord {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Versioned parameter snapshot: name -> `{shape, data}` with row-major data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub version: u32,
    pub params: BTreeMap<String, TensorRecord>,
}

impl Checkpoint {
    pub fn from_store(store: &ParamStore) -> Self {
        let params = store
            .iter()
            .map(|(_, p)| {
                (
                    p.name.clone(),
                    TensorRecord {
                        shape: p.value.shape().to_vec(),
                        data: p.value.data().to_vec(),
                    },
                )
            })
            .collect();
        Self {
            version: CHECKPOINT_VERSION,
            params,
        }
    }

    /// Copies every tensor into `store`, which must hold exactly the same
    /// names with exactly the same shapes.
    pub fn restore_into(&self, store: &mut ParamStore) -> Result<()> {
        if self.version != CHECKPOINT_VERSION {
            return Err(AutodiffError::Checkpoint(format!(
                "unsupported version {} (expected {CHECKPOINT_VERSION})",
                self.version
            )));
        }
        if let Some(extra) = self.params.keys().find(|n| store.id(n).is_none()) {
            return Err(AutodiffError::Checkpoint(format!(
                "parameter `{extra}` is not part of this model"
            )));
        }
        let mut staged = Vec::with_capacity(store.len());
        for (id, p) in store.iter() {
            let rec = self.params.get(&p.name).ok_or_else(|| {
                AutodiffError::Checkpoint(format!("missing parameter `{}`", p.name))
            })?;
            if rec.shape != p.value.shape() {
                return Err(AutodiffError::Checkpoint(format!(
                    "parameter `{}` has shape {:?}, model expects {:?}",
                    p.name,
                    rec.shape,
                    p.value.shape()
                )));
            }
            staged.push((id, Tensor::new(rec.shape.clone(), rec.data.clone())?));
        }
        for (id, t) in staged {
            *store.value_mut(id) = t;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParamStore {
        let mut s = ParamStore::new();
        s.insert(
            "w",
            Tensor::matrix(2, 2, vec![0.1, -0.2, 1e-17, 3.0]).unwrap(),
        )
        .unwrap();
        s.insert("b", Tensor::row(vec![0.5, 0.25])).unwrap();
        s
    }

    #[test]
    fn save_load_restores_values_exactly() {
        let src = store();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        Checkpoint::from_store(&src).save(&path).unwrap();
        let mut dst = store();
        for (_, p) in dst.clone().iter() {
            let id = dst.id(&p.name).unwrap();
            dst.value_mut(id)
                .data_mut()
                .iter_mut()
                .for_each(|v| *v = 0.0);
        }
        Checkpoint::load(&path)
            .unwrap()
            .restore_into(&mut dst)
            .unwrap();
        for ((_, a), (_, b)) in src.iter().zip(dst.iter()) {
            assert_eq!(a.value, b.value);
        }
    }

    #[test]
    fn shape_and_name_mismatches_rejected() {
        let mut ck = Checkpoint::from_store(&store());
        ck.params.get_mut("b").unwrap().shape = vec![2, 1];
        assert!(ck.restore_into(&mut store()).is_err());

        let mut ck = Checkpoint::from_store(&store());
        ck.params.remove("w");
        assert!(ck
            .restore_into(&mut store())
            .unwrap_err()
            .to_string()
            .contains("missing"));

        let mut ck = Checkpoint::from_store(&store());
        ck.version = 9;
        assert!(ck.restore_into(&mut store()).is_err());
    }
}
