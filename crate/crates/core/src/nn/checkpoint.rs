//! Binary model checkpoint: a format-tagged JSON header (layer shapes,
//! scaler, channel contract, seed, wavelet config) followed by the flat
//! little-endian f64 parameter payload. Writing is deterministic byte for
//! byte for identical inputs.

use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

use super::layers::{Activation, ConvParams, DenseParams, Layer};
use super::model::Model;
use crate::cwt::WaveletFamily;
use crate::error::{Error, Result};
use crate::features::Scaler;

const MAGIC: &[u8; 4] = b"SCLC";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv { cin: usize, cout: usize },
    MaxPool,
    Flatten,
    Dense { din: usize, dout: usize, activation: Activation },
    Dropout { p: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CheckpointHeader {
    pub format: String,
    pub input_shape: (usize, usize, usize),
    pub layers: Vec<LayerSpec>,
    pub seed: u64,
    pub wavelet_family: WaveletFamily,
    pub wavelet_scales: Vec<f64>,
    pub channel_names: Vec<String>,
    pub scaler: Scaler,
}

/// A trained model bundled with everything needed to reproduce its inputs.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Model,
    pub seed: u64,
    pub wavelet_family: WaveletFamily,
    pub wavelet_scales: Vec<f64>,
    pub scaler: Scaler,
}

fn layer_specs(model: &Model) -> Vec<LayerSpec> {
    model
        .layers
        .iter()
        .map(|l| match l {
            Layer::Conv(p) => LayerSpec::Conv {
                cin: p.cin,
                cout: p.cout,
            },
            Layer::MaxPool => LayerSpec::MaxPool,
            Layer::Flatten => LayerSpec::Flatten,
            Layer::Dense(p) => LayerSpec::Dense {
                din: p.din,
                dout: p.dout,
                activation: p.activation,
            },
            Layer::Dropout(p) => LayerSpec::Dropout { p: *p },
        })
        .collect()
}

fn layers_from_specs(specs: &[LayerSpec]) -> Vec<Layer> {
    specs
        .iter()
        .map(|s| match s {
            LayerSpec::Conv { cin, cout } => Layer::Conv(ConvParams::zeros(*cin, *cout)),
            LayerSpec::MaxPool => Layer::MaxPool,
            LayerSpec::Flatten => Layer::Flatten,
            LayerSpec::Dense { din, dout, activation } => {
                Layer::Dense(DenseParams::zeros(*din, *dout, *activation))
            }
            LayerSpec::Dropout { p } => Layer::Dropout(*p),
        })
        .collect()
}

pub fn save(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let header = CheckpointHeader {
        format: format!("scalocast-checkpoint-v{VERSION}"),
        input_shape: ckpt.model.input_shape,
        layers: layer_specs(&ckpt.model),
        seed: ckpt.seed,
        wavelet_family: ckpt.wavelet_family,
        wavelet_scales: ckpt.wavelet_scales.clone(),
        channel_names: ckpt.scaler.channel_names.clone(),
        scaler: ckpt.scaler.clone(),
    };
    let header_json = serde_json::to_vec(&header)
        .map_err(|e| Error::numeric(format!("checkpoint header: {e}")))?;
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(MAGIC)?;
    f.write_all(&VERSION.to_le_bytes())?;
    f.write_all(&(header_json.len() as u64).to_le_bytes())?;
    f.write_all(&header_json)?;
    let flat = ckpt.model.flat_params();
    f.write_all(&(flat.len() as u64).to_le_bytes())?;
    for v in flat {
        f.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    f.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::data(format!(
            "{}: not a scalocast checkpoint",
            path.display()
        )));
    }
    let mut u32buf = [0u8; 4];
    f.read_exact(&mut u32buf)?;
    let version = u32::from_le_bytes(u32buf);
    if version != VERSION {
        return Err(Error::data(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let mut u64buf = [0u8; 8];
    f.read_exact(&mut u64buf)?;
    let header_len = u64::from_le_bytes(u64buf) as usize;
    let mut header_json = vec![0u8; header_len];
    f.read_exact(&mut header_json)?;
    let header: CheckpointHeader = serde_json::from_slice(&header_json)
        .map_err(|e| Error::data(format!("corrupt checkpoint header: {e}")))?;
    f.read_exact(&mut u64buf)?;
    let count = u64::from_le_bytes(u64buf) as usize;
    let mut flat = vec![0.0f64; count];
    let mut b8 = [0u8; 8];
    for v in flat.iter_mut() {
        f.read_exact(&mut b8)?;
        *v = f64::from_le_bytes(b8);
    }
    let mut model = Model::new(header.input_shape, layers_from_specs(&header.layers))?;
    model.set_flat_params(&flat)?;
    Ok(Checkpoint {
        model,
        seed: header.seed,
        wavelet_family: header.wavelet_family,
        wavelet_scales: header.wavelet_scales,
        scaler: header.scaler,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn checkpoint_round_trip_is_exact_and_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let model = Model::new(
            (4, 4, 2),
            vec![
                Layer::Conv(ConvParams::kaiming(2, 3, &mut rng)),
                Layer::MaxPool,
                Layer::Flatten,
                Layer::Dense(DenseParams::kaiming(12, 6, Activation::LeakyRelu, &mut rng)),
                Layer::Dropout(0.1),
                Layer::Dense(DenseParams::kaiming(6, 4, Activation::Identity, &mut rng)),
            ],
        )
        .unwrap();
        let scaler = Scaler {
            channel_names: vec!["c24".into(), "t_amb".into()],
            means: vec![1.0, -3.0],
            stds: vec![0.5, 2.0],
            target_mean: 1.25,
            target_std: 0.75,
        };
        let ckpt = Checkpoint {
            model: model.clone(),
            seed: 42,
            wavelet_family: WaveletFamily::Morl,
            wavelet_scales: (1..=24).map(|a| a as f64).collect(),
            scaler,
        };
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.ckpt");
        let p2 = dir.path().join("b.ckpt");
        save(&p1, &ckpt).unwrap();
        save(&p2, &ckpt).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());

        let loaded = load(&p1).unwrap();
        assert_eq!(loaded.model.flat_params(), model.flat_params());
        assert_eq!(loaded.model.layers, model.layers);
        assert_eq!(loaded.seed, 42);
        assert_eq!(loaded.wavelet_family, WaveletFamily::Morl);
        assert_eq!(loaded.scaler.channel_names, vec!["c24", "t_amb"]);

        // loaded model predicts bit-identically
        let x = super::super::tensor::Tensor3::from_data(
            4,
            4,
            2,
            (0..32).map(|i| i as f64 * 0.1).collect(),
        )
        .unwrap();
        assert_eq!(
            model.predict_one(&x).unwrap(),
            loaded.model.predict_one(&x).unwrap()
        );
    }

    #[test]
    fn rejects_foreign_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.ckpt");
        std::fs::write(&p, b"not a checkpoint").unwrap();
        assert!(load(&p).is_err());
    }
}
