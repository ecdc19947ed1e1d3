//! Self-describing checkpoint container.
//!
//! Layout: 8-byte magic, little-endian u64 header length, JSON header
//! (architecture, specs, domain names, epoch, seed, dtype and a tensor
//! index), then the raw little-endian tensor payload. Loading rebuilds the
//! model bundle from the stored spec and refuses anything that does not
//! match bit-for-bit expectations (dtype, tensor count, shapes).

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use super::{Architecture, DiscriminatorSpec, GeneratorSpec, ModelBundle};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const MAGIC: &[u8; 8] = b"BTCKPT01";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub architecture: Architecture,
    pub domain_names: Vec<String>,
    pub gen_spec: GeneratorSpec,
    pub disc_spec: DiscriminatorSpec,
    pub epoch: usize,
    pub seed: u64,
    pub dtype: String,
}

impl CheckpointMeta {
    /// Refuses checkpoints built for a different model configuration.
    pub fn ensure_matches(
        &self,
        architecture: Architecture,
        gen_spec: &GeneratorSpec,
        disc_spec: &DiscriminatorSpec,
    ) -> Result<()> {
        if self.architecture != architecture {
            return Err(Error::SpecMismatch(format!(
                "checkpoint is {} but {} was requested",
                self.architecture, architecture
            )));
        }
        if &self.gen_spec != gen_spec {
            return Err(Error::SpecMismatch("generator spec differs from checkpoint".into()));
        }
        if &self.disc_spec != disc_spec {
            return Err(Error::SpecMismatch("discriminator spec differs from checkpoint".into()));
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    #[serde(flatten)]
    meta: CheckpointMeta,
    tensors: Vec<TensorEntry>,
}

fn named_tensors<F: Scalar>(bundle: &ModelBundle<F>) -> Vec<(String, crate::autodiff::Var<F>)> {
    let mut out = Vec::new();
    for (gi, g) in bundle.generators.iter().enumerate() {
        for (pi, p) in g.parameters().into_iter().enumerate() {
            out.push((format!("gen{gi}.p{pi:03}"), p));
        }
    }
    for (di, d) in bundle.discriminators.iter().enumerate() {
        for (pi, p) in d.parameters().into_iter().enumerate() {
            out.push((format!("disc{di}.p{pi:03}"), p));
        }
    }
    out
}

/// Writes the bundle with its provenance to one file.
pub fn save_checkpoint<F: Scalar, P: AsRef<Path>>(
    path: P,
    bundle: &ModelBundle<F>,
    epoch: usize,
    seed: u64,
) -> Result<()> {
    let tensors = named_tensors(bundle);
    let header = Header {
        meta: CheckpointMeta {
            architecture: bundle.architecture,
            domain_names: bundle.domain_names.clone(),
            gen_spec: bundle.gen_spec().clone(),
            disc_spec: bundle.disc_spec().clone(),
            epoch,
            seed,
            dtype: F::DTYPE.to_string(),
        },
        tensors: tensors
            .iter()
            .map(|(name, p)| TensorEntry { name: name.clone(), shape: p.shape() })
            .collect(),
    };
    let header_json = serde_json::to_vec(&header)?;
    if let Some(parent) = path.as_ref().parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut file = std::io::BufWriter::new(std::fs::File::create(path.as_ref())?);
    file.write_all(MAGIC)?;
    file.write_all(&(header_json.len() as u64).to_le_bytes())?;
    file.write_all(&header_json)?;
    for (_, p) in &tensors {
        let value = p.value();
        for v in value.iter() {
            file.write_all(&v.as_f64().to_le_bytes())?;
        }
    }
    file.flush()?;
    Ok(())
}

/// Reads a checkpoint, rebuilding the bundle described by its header.
pub fn load_checkpoint<F: Scalar, P: AsRef<Path>>(path: P) -> Result<(ModelBundle<F>, CheckpointMeta)> {
    let mut file = std::io::BufReader::new(std::fs::File::open(path.as_ref())?);
    let mut magic = [0u8; 8];
    file.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::SpecMismatch("not a checkpoint file (bad magic)".into()));
    }
    let mut len_bytes = [0u8; 8];
    file.read_exact(&mut len_bytes)?;
    let header_len = u64::from_le_bytes(len_bytes) as usize;
    let mut header_json = vec![0u8; header_len];
    file.read_exact(&mut header_json)?;
    let header: Header = serde_json::from_slice(&header_json)?;
    if header.meta.dtype != F::DTYPE {
        return Err(Error::SpecMismatch(format!(
            "checkpoint dtype {} does not match requested {}",
            header.meta.dtype,
            F::DTYPE
        )));
    }

    let bundle = ModelBundle::<F>::new(
        header.meta.architecture,
        &header.meta.domain_names,
        &header.meta.gen_spec,
        &header.meta.disc_spec,
        header.meta.seed,
    )?;
    let tensors = named_tensors(&bundle);
    if tensors.len() != header.tensors.len() {
        return Err(Error::SpecMismatch(format!(
            "checkpoint holds {} tensors, model needs {}",
            header.tensors.len(),
            tensors.len()
        )));
    }
    for ((name, param), entry) in tensors.iter().zip(header.tensors.iter()) {
        if name != &entry.name || param.shape() != entry.shape {
            return Err(Error::SpecMismatch(format!(
                "tensor {} does not match checkpoint entry {} {:?}",
                name, entry.name, entry.shape
            )));
        }
        let n: usize = entry.shape.iter().product();
        let mut bytes = vec![0u8; n * 8];
        file.read_exact(&mut bytes)?;
        let mut values = Vec::with_capacity(n);
        for chunk in bytes.chunks_exact(8) {
            values.push(F::of_f64(f64::from_le_bytes(chunk.try_into().unwrap())));
        }
        param.assign(&ArrayD::from_shape_vec(IxDyn(&entry.shape), values).unwrap());
    }
    Ok((bundle, header.meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::networks::{DiscriminatorSpec, GeneratorSpec};

    fn small_bundle(seed: u64) -> ModelBundle<f32> {
        let names: Vec<String> = vec!["TAR".into(), "NEW".into()];
        ModelBundle::new(
            Architecture::Cyclegan,
            &names,
            &GeneratorSpec::resnet(64, 8, 1),
            &DiscriminatorSpec::patch(64, 8),
            seed,
        )
        .unwrap()
    }

    #[test]
    fn round_trip_preserves_weights_and_meta() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let bundle = small_bundle(11);
        // Perturb one weight so the file is not just the seeded init.
        bundle.generators[0].parameters()[0].update_value(|v| v[[0, 0, 0, 0]] = 0.25);
        save_checkpoint(&path, &bundle, 7, 11).unwrap();

        let (loaded, meta) = load_checkpoint::<f32, _>(&path).unwrap();
        assert_eq!(meta.epoch, 7);
        assert_eq!(meta.seed, 11);
        assert_eq!(meta.architecture, Architecture::Cyclegan);
        for (a, b) in bundle
            .all_parameters()
            .iter()
            .zip(loaded.all_parameters().iter())
        {
            assert_eq!(a.value(), b.value());
        }
    }

    #[test]
    fn load_rejects_wrong_dtype_and_spec() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let bundle = small_bundle(3);
        save_checkpoint(&path, &bundle, 1, 3).unwrap();

        assert!(matches!(
            load_checkpoint::<f64, _>(&path),
            Err(Error::SpecMismatch(_))
        ));

        let (_, meta) = load_checkpoint::<f32, _>(&path).unwrap();
        let other_gen = GeneratorSpec::resnet(64, 16, 1);
        assert!(meta
            .ensure_matches(Architecture::Cyclegan, &other_gen, &DiscriminatorSpec::patch(64, 8))
            .is_err());
        assert!(meta
            .ensure_matches(
                Architecture::Cyclegan,
                &GeneratorSpec::resnet(64, 8, 1),
                &DiscriminatorSpec::patch(64, 8)
            )
            .is_ok());
    }

    #[test]
    fn load_rejects_truncated_payload() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let bundle = small_bundle(5);
        save_checkpoint(&path, &bundle, 1, 5).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 64]).unwrap();
        assert!(load_checkpoint::<f32, _>(&path).is_err());
    }
}
