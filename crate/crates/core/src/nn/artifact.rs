//! Persisted model: weights, configuration and the scaler they were trained with.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::ModelParams;
use crate::error::{Error, Result};
use crate::preprocess::ScalerParams;

pub const FORMAT: &str = "arbocast-model";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub format: String,
    pub version: u32,
    pub config_hash: String,
    pub params: ModelParams,
    pub scaler: ScalerParams,
}

impl ModelArtifact {
    pub fn new(params: ModelParams, scaler: ScalerParams, config_hash: impl Into<String>) -> Self {
        Self {
            format: FORMAT.into(),
            version: FORMAT_VERSION,
            config_hash: config_hash.into(),
            params,
            scaler,
        }
    }

    pub fn write<W: Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer(out, self)?;
        Ok(())
    }

    pub fn read<R: Read>(input: R) -> Result<Self> {
        let art: ModelArtifact = serde_json::from_reader(input)?;
        if art.format != FORMAT {
            return Err(Error::Data(format!("not a model artifact (format {:?})", art.format)));
        }
        if art.version != FORMAT_VERSION {
            return Err(Error::Data(format!(
                "unsupported model artifact version {} (expected {FORMAT_VERSION})",
                art.version
            )));
        }
        art.params.validate()?;
        Ok(art)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read(BufReader::new(File::open(path)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{init_params, Architecture, ModelConfig, Parameters};
    use crate::preprocess::fit_scaler;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn roundtrip_is_bit_exact(seed in any::<u64>(), bidi in any::<bool>()) {
            let (arch, units): (_, &[usize]) = if bidi {
                (Architecture::Bidirectional, &[3, 2, 5])
            } else {
                (Architecture::Simple, &[6, 3])
            };
            let cfg = ModelConfig::new(arch, 7, units, 0.2).unwrap();
            let mut params = init_params(&cfg, seed).unwrap();
            // push a few awkward values through the text encoding
            params.head_reg.b = 0.1 + 0.2;
            params.head_clf.b = -1e-300;
            let art = ModelArtifact::new(params, fit_scaler(&[1.5, 1234.25]).unwrap(), "abc");
            let mut buf = Vec::new();
            art.write(&mut buf).unwrap();
            let back = ModelArtifact::read(buf.as_slice()).unwrap();
            for ((_, a), (_, b)) in art.params.tensors().iter().zip(back.params.tensors().iter()) {
                prop_assert!(a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
            }
            prop_assert_eq!(back, art);
        }
    }

    #[test]
    fn rejects_foreign_json() {
        assert!(ModelArtifact::read(r#"{"format":"x"}"#.as_bytes()).is_err());
    }
}
