//! Network checkpoints as versioned JSON.
//!
//! ```json
//! {
//!   "format": "noisecar-checkpoint",
//!   "version": 1,
//!   "dims": { "input": 2, "hidden": [64], "classes": 3, "indicator": true },
//!   "stop_indicator_grad": false,
//!   "layers": [
//!     { "name": "backbone.0", "rows": 64, "cols": 2, "weight": [...], "bias": [...] },
//!     { "name": "pred_head", ... },
//!     { "name": "ind_head", ... }
//!   ]
//! }
//! ```
//!
//! Weights are row-major `out x in`. Floats are written in shortest
//! round-trip form, so decoding restores parameters bit for bit.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dense, Layers, NetDims, TwoBranchNet};
use crate::numerics::Matrix;

pub const CHECKPOINT_FORMAT: &str = "noisecar-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerRecord {
    name: String,
    rows: usize,
    cols: usize,
    weight: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointFile {
    format: String,
    version: u32,
    dims: NetDims,
    stop_indicator_grad: bool,
    layers: Vec<LayerRecord>,
}

fn layer_names(dims: &NetDims) -> Vec<String> {
    let mut names: Vec<String> = (0..dims.hidden.len()).map(|i| format!("backbone.{i}")).collect();
    names.push("pred_head".into());
    if dims.indicator {
        names.push("ind_head".into());
    }
    names
}

fn record(name: String, d: &Dense) -> LayerRecord {
    LayerRecord {
        name,
        rows: d.out_dim(),
        cols: d.in_dim(),
        weight: d.weight.as_slice().to_vec(),
        bias: d.bias.clone(),
    }
}

pub fn encode(net: &TwoBranchNet) -> String {
    let l = &net.layers;
    let dense: Vec<&Dense> = l.backbone.iter().chain([&l.pred_head]).chain(&l.ind_head).collect();
    let file = CheckpointFile {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        dims: net.dims().clone(),
        stop_indicator_grad: net.stop_indicator_grad,
        layers: layer_names(net.dims())
            .into_iter()
            .zip(dense)
            .map(|(n, d)| record(n, d))
            .collect(),
    };
    serde_json::to_string_pretty(&file).expect("checkpoint serializes")
}

/// Parses and fully validates a checkpoint.
pub fn decode(bytes: &[u8]) -> Result<TwoBranchNet> {
    let file: CheckpointFile = serde_json::from_slice(bytes)?;
    if file.format != CHECKPOINT_FORMAT {
        return Err(Error::invalid(format!("not a checkpoint: format '{}'", file.format)));
    }
    if file.version != CHECKPOINT_VERSION {
        return Err(Error::invalid(format!(
            "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
            file.version
        )));
    }
    file.dims.validate()?;
    let names = layer_names(&file.dims);
    if file.layers.len() != names.len() {
        return Err(Error::shape("checkpoint layers", names.len(), file.layers.len()));
    }
    let mut dense = Vec::with_capacity(names.len());
    for (rec, expected) in file.layers.into_iter().zip(&names) {
        if &rec.name != expected {
            return Err(Error::invalid(format!(
                "expected layer '{expected}', found '{}'",
                rec.name
            )));
        }
        if rec.bias.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("checkpoint bias"));
        }
        dense.push(Dense {
            weight: Matrix::from_vec(rec.rows, rec.cols, rec.weight)?,
            bias: rec.bias,
        });
    }
    let ind_head = file.dims.indicator.then(|| dense.pop()).flatten();
    let pred_head = dense.pop().expect("prediction head is always present");
    let layers = Layers {
        backbone: dense,
        pred_head,
        ind_head,
    };
    let mut net = TwoBranchNet::from_layers(file.dims, layers)?;
    net.stop_indicator_grad = file.stop_indicator_grad;
    Ok(net)
}

pub fn save(path: &Path, net: &TwoBranchNet) -> Result<()> {
    std::fs::write(path, encode(net)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<TwoBranchNet> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn net(hidden: Vec<usize>, indicator: bool, seed: u64) -> TwoBranchNet {
        TwoBranchNet::init(
            NetDims {
                input: 3,
                hidden,
                classes: 4,
                indicator,
            },
            seed,
        )
        .unwrap()
    }

    #[test]
    fn roundtrip_is_exact() {
        for (hidden, ind) in [(vec![5, 4], true), (vec![], true), (vec![6], false)] {
            let mut n = net(hidden, ind, 3);
            n.stop_indicator_grad = true;
            assert_eq!(decode(encode(&n).as_bytes()).unwrap(), n);
        }
    }

    #[test]
    fn rejects_tampering() {
        let text = encode(&net(vec![5], true, 1));
        let bad_version = text.replace("\"version\": 1", "\"version\": 2");
        assert!(decode(bad_version.as_bytes()).is_err());
        let bad_name = text.replace("pred_head", "head");
        assert!(decode(bad_name.as_bytes()).is_err());
        let bad_shape = text.replacen("\"rows\": 5", "\"rows\": 6", 1);
        assert!(decode(bad_shape.as_bytes()).is_err());
        let no_indicator = text.replace("\"indicator\": true", "\"indicator\": false");
        assert!(decode(no_indicator.as_bytes()).is_err());
        let extra = text.replacen('{', "{\"extra\": 1,", 1);
        assert!(decode(extra.as_bytes()).is_err());
        assert!(decode(b"").is_err());
        assert!(decode(b"[]").is_err());
    }

    #[test]
    fn huge_declared_shape_is_rejected() {
        let text = encode(&net(vec![], false, 0)).replacen("\"rows\": 4", "\"rows\": 18446744073709551615", 1);
        assert!(decode(text.as_bytes()).is_err());
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.json");
        let n = net(vec![2], true, 8);
        save(&path, &n).unwrap();
        assert_eq!(load(&path).unwrap(), n);
    }

    proptest! {
        #[test]
        fn decode_never_panics(bytes in prop::collection::vec(any::<u8>(), 0..200)) {
            let _ = decode(&bytes);
        }

        #[test]
        fn roundtrip_any_seed(seed in any::<u64>(), width in 1usize..6) {
            let n = net(vec![width], seed % 2 == 0, seed);
            prop_assert_eq!(decode(encode(&n).as_bytes()).unwrap(), n);
        }
    }
}
