//! Model bundle file format.
//!
//! Layout: magic "CWMD", version, a JSON configuration section, a parameter
//! manifest (name, shape, byte offset, value count per array), one f32
//! little-endian value blob, and a 16-byte truncated SHA-256 digest over
//! everything before it.  Loading verifies the digest first, then rebuilds
//! the networks from the configuration and requires the manifest to list
//! exactly the arrays that architecture consumes, in order.

use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autoenc::{ModelBundle, NetworkConfig};
use crate::entropy::{TcaeConfig, TcaeModel};
use crate::importance::ImportanceConfig;
use crate::quant::QuantizerParams;
use crate::tensor::ConvLayerParams;
use crate::{Error, Result};

pub const MODEL_MAGIC: [u8; 4] = *b"CWMD";
pub const MODEL_VERSION: u32 = 1;
pub const DIGEST_LEN: usize = 16;

/// Everything needed to rebuild the architecture before filling weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFileConfig {
    pub network: NetworkConfig,
    pub importance: ImportanceConfig,
    pub quant_levels: usize,
    pub code_entropy: TcaeConfig,
    pub importance_entropy: TcaeConfig,
}

/// The full trained artifact: autoencoder bundle plus the two context
/// models driving the arithmetic coder.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub bundle: ModelBundle,
    /// Models the masked quantizer-level stream (alphabet T+1, symbol 0
    /// reserved for masked-out positions).
    pub code_entropy: TcaeModel,
    /// Models the importance-level stream (alphabet L, single channel).
    pub importance_entropy: TcaeModel,
}

impl TrainedModel {
    pub fn new(
        bundle: ModelBundle,
        code_entropy: TcaeModel,
        importance_entropy: TcaeModel,
    ) -> Result<Self> {
        let model = TrainedModel { bundle, code_entropy, importance_entropy };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        self.bundle.validate()?;
        let code_cfg = self.code_entropy.config();
        if code_cfg.channels != self.bundle.network.code_channels {
            return Err(Error::config(format!(
                "code context model covers {} channels, bundle has {}",
                code_cfg.channels, self.bundle.network.code_channels
            )));
        }
        if code_cfg.alphabet != self.bundle.quant_levels + 1 {
            return Err(Error::config(format!(
                "code context model alphabet {} must be quantizer levels + 1 = {}",
                code_cfg.alphabet,
                self.bundle.quant_levels + 1
            )));
        }
        let imp_cfg = self.importance_entropy.config();
        if imp_cfg.channels != 1 {
            return Err(Error::config("importance context model must be single-channel"));
        }
        if imp_cfg.alphabet != self.bundle.importance.levels {
            return Err(Error::config(format!(
                "importance context model alphabet {} must equal the level count {}",
                imp_cfg.alphabet, self.bundle.importance.levels
            )));
        }
        Ok(())
    }

    pub fn config(&self) -> ModelFileConfig {
        ModelFileConfig {
            network: self.bundle.network.clone(),
            importance: self.bundle.importance,
            quant_levels: self.bundle.quant_levels,
            code_entropy: self.code_entropy.config().clone(),
            importance_entropy: self.importance_entropy.config().clone(),
        }
    }

    /// Identifier embedded in every bitstream this model produces.
    pub fn digest(&self) -> Result<[u8; DIGEST_LEN]> {
        Ok(body_digest(&body_bytes(self)?))
    }
}

struct ParamEntry<'a> {
    name: String,
    shape: Vec<u32>,
    values: &'a [f64],
}

fn conv_entries<'a>(prefix: &str, layers: &[&'a ConvLayerParams], out: &mut Vec<ParamEntry<'a>>) {
    for (i, l) in layers.iter().enumerate() {
        out.push(ParamEntry {
            name: format!("{prefix}.{i}.kernel"),
            shape: vec![l.out_channels as u32, l.in_channels as u32, l.kh as u32, l.kw as u32],
            values: &l.kernel,
        });
        out.push(ParamEntry {
            name: format!("{prefix}.{i}.bias"),
            shape: vec![l.out_channels as u32],
            values: &l.bias,
        });
    }
}

/// Every parameter array the forward passes consume, in file order.
fn parameter_arrays(model: &TrainedModel) -> Vec<ParamEntry<'_>> {
    let mut out = Vec::new();
    conv_entries("encoder", &model.bundle.encoder.layers(), &mut out);
    conv_entries("importance", &model.bundle.importance_net.layers(), &mut out);
    conv_entries("decoder", &model.bundle.decoder.layers(), &mut out);
    out.push(ParamEntry {
        name: "quantizer.weights".into(),
        shape: vec![
            model.bundle.quantizer.num_channels() as u32,
            model.bundle.quantizer.num_levels() as u32,
        ],
        values: model.bundle.quantizer.weights(),
    });
    conv_entries("code_entropy", &model.code_entropy.layers().iter().collect::<Vec<_>>(), &mut out);
    conv_entries(
        "importance_entropy",
        &model.importance_entropy.layers().iter().collect::<Vec<_>>(),
        &mut out,
    );
    out
}

fn push_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn body_bytes(model: &TrainedModel) -> Result<Vec<u8>> {
    model.validate()?;
    let config = serde_json::to_vec(&model.config())
        .map_err(|e| Error::config(format!("model config serialization failed: {e}")))?;
    let entries = parameter_arrays(model);

    let mut blob: Vec<u8> = Vec::new();
    let mut manifest: Vec<u8> = Vec::new();
    push_u32(&mut manifest, entries.len() as u32);
    for e in &entries {
        push_u32(&mut manifest, e.name.len() as u32);
        manifest.extend_from_slice(e.name.as_bytes());
        push_u32(&mut manifest, e.shape.len() as u32);
        for &d in &e.shape {
            push_u32(&mut manifest, d);
        }
        push_u32(&mut manifest, blob.len() as u32);
        push_u32(&mut manifest, e.values.len() as u32);
        for &v in e.values {
            blob.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }

    let mut out = Vec::with_capacity(12 + config.len() + manifest.len() + blob.len());
    out.extend_from_slice(&MODEL_MAGIC);
    push_u32(&mut out, MODEL_VERSION);
    push_u32(&mut out, config.len() as u32);
    out.extend_from_slice(&config);
    out.extend_from_slice(&manifest);
    push_u32(&mut out, blob.len() as u32);
    out.extend_from_slice(&blob);
    Ok(out)
}

fn body_digest(body: &[u8]) -> [u8; DIGEST_LEN] {
    let full = Sha256::digest(body);
    full[..DIGEST_LEN].try_into().expect("digest prefix")
}

pub fn save_model(model: &TrainedModel) -> Result<Vec<u8>> {
    let mut out = body_bytes(model)?;
    let digest = body_digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::CorruptModel("model file truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4-byte slice")))
    }
}

pub fn load_model(bytes: &[u8]) -> Result<TrainedModel> {
    if bytes.len() < 4 || bytes[..4] != MODEL_MAGIC {
        return Err(Error::CorruptModel("not a model file".into()));
    }
    if bytes.len() < 8 + DIGEST_LEN {
        return Err(Error::CorruptModel("model file truncated".into()));
    }
    let body_end = bytes.len() - DIGEST_LEN;
    if body_digest(&bytes[..body_end]) != bytes[body_end..] {
        return Err(Error::CorruptModel("digest mismatch; the file is damaged".into()));
    }
    let mut r = Reader { bytes: &bytes[..body_end], pos: 4 };
    let version = r.u32()?;
    if version != MODEL_VERSION {
        return Err(Error::CorruptModel(format!(
            "unsupported model version {version}, expected {MODEL_VERSION}"
        )));
    }
    let config_len = r.u32()? as usize;
    let config: ModelFileConfig = serde_json::from_slice(r.take(config_len)?)
        .map_err(|e| Error::CorruptModel(format!("unreadable model config: {e}")))?;

    // Rebuild the architecture the config describes; the file must supply
    // exactly its parameter arrays.
    let mut skeleton = skeleton_model(&config).map_err(|e| match e {
        Error::Config(msg) => Error::CorruptModel(format!("inconsistent model config: {msg}")),
        other => other,
    })?;
    let expected: Vec<(String, Vec<u32>, usize)> = parameter_arrays(&skeleton)
        .iter()
        .map(|e| (e.name.clone(), e.shape.clone(), e.values.len()))
        .collect();

    let entry_count = r.u32()? as usize;
    if entry_count != expected.len() {
        return Err(Error::CorruptModel(format!(
            "manifest lists {entry_count} arrays, architecture needs {}",
            expected.len()
        )));
    }
    let mut locations = Vec::with_capacity(entry_count);
    let mut running_offset = 0u64;
    for (name, shape, count) in &expected {
        let name_len = r.u32()? as usize;
        let file_name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::CorruptModel("manifest name is not UTF-8".into()))?;
        if file_name != name {
            return Err(Error::CorruptModel(format!(
                "manifest entry {file_name:?} does not match expected {name:?}"
            )));
        }
        let ndims = r.u32()? as usize;
        let mut dims = Vec::with_capacity(ndims);
        for _ in 0..ndims {
            dims.push(r.u32()?);
        }
        if dims != *shape {
            return Err(Error::CorruptModel(format!("array {name} has shape {dims:?}")));
        }
        let offset = r.u32()? as u64;
        let file_count = r.u32()? as usize;
        if file_count != *count {
            return Err(Error::CorruptModel(format!(
                "array {name} declares {file_count} values, architecture needs {count}"
            )));
        }
        // Arrays are packed back to back; overlap or gaps mean damage.
        if offset != running_offset {
            return Err(Error::CorruptModel(format!("array {name} is misplaced in the blob")));
        }
        running_offset += 4 * *count as u64;
        locations.push(offset as usize);
    }
    let blob_len = r.u32()? as usize;
    if blob_len as u64 != running_offset {
        return Err(Error::CorruptModel("value blob length does not match the manifest".into()));
    }
    let blob = r.take(blob_len)?;
    if r.pos != body_end {
        return Err(Error::CorruptModel("trailing bytes after the value blob".into()));
    }

    let mut arrays = Vec::with_capacity(entry_count);
    for ((_, _, count), offset) in expected.iter().zip(&locations) {
        let mut values = Vec::with_capacity(*count);
        for i in 0..*count {
            let at = offset + 4 * i;
            let v = f32::from_le_bytes(blob[at..at + 4].try_into().expect("4-byte slice"));
            if !v.is_finite() {
                return Err(Error::CorruptModel("non-finite parameter value".into()));
            }
            values.push(v as f64);
        }
        arrays.push(values);
    }

    fill_model(&mut skeleton, &config, arrays)
        .map_err(|e| Error::CorruptModel(format!("parameters do not fit the architecture: {e}")))?;
    Ok(skeleton)
}

/// Zero-weight model with the architecture the config describes.
fn skeleton_model(config: &ModelFileConfig) -> Result<TrainedModel> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let bundle = ModelBundle::init(
        config.network.clone(),
        config.importance,
        config.quant_levels,
        0,
    )?;
    let code_entropy = TcaeModel::init(config.code_entropy.clone(), &mut rng)?;
    let importance_entropy = TcaeModel::init(config.importance_entropy.clone(), &mut rng)?;
    TrainedModel::new(bundle, code_entropy, importance_entropy)
}

fn fill_conv_layers(
    layers: Vec<&mut ConvLayerParams>,
    arrays: &mut std::vec::IntoIter<Vec<f64>>,
) -> Result<()> {
    for layer in layers {
        layer.kernel = arrays.next().ok_or_else(|| Error::config("missing kernel array"))?;
        layer.bias = arrays.next().ok_or_else(|| Error::config("missing bias array"))?;
    }
    Ok(())
}

fn fill_model(
    model: &mut TrainedModel,
    config: &ModelFileConfig,
    arrays: Vec<Vec<f64>>,
) -> Result<()> {
    let mut it = arrays.into_iter();
    fill_conv_layers(model.bundle.encoder.layers_mut(), &mut it)?;
    fill_conv_layers(model.bundle.importance_net.layers_mut(), &mut it)?;
    fill_conv_layers(model.bundle.decoder.layers_mut(), &mut it)?;
    let weights = it.next().ok_or_else(|| Error::config("missing quantizer array"))?;
    model.bundle.quantizer = QuantizerParams::from_weights(
        config.network.code_channels,
        config.quant_levels,
        weights,
    )?;
    let mut rebuild = |template: &TcaeModel| -> Result<TcaeModel> {
        let mut layers = template.layers().to_vec();
        fill_conv_layers(layers.iter_mut().collect(), &mut it)?;
        TcaeModel::from_layers(template.config().clone(), layers)
    };
    model.code_entropy = rebuild(&model.code_entropy.clone())?;
    model.importance_entropy = rebuild(&model.importance_entropy.clone())?;
    if it.next().is_some() {
        return Err(Error::config("more arrays than the architecture consumes"));
    }
    model.validate()
}

pub fn save_model_file(path: impl AsRef<std::path::Path>, model: &TrainedModel) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, save_model(model)?).map_err(|e| Error::io(path, e))
}

pub fn load_model_file(path: impl AsRef<std::path::Path>) -> Result<TrainedModel> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    load_model(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::entropy::OrderKind;
    use rand_chacha::ChaCha8Rng;

    fn tiny_model(seed: u64) -> TrainedModel {
        let network = NetworkConfig {
            stage_channels: [2, 3, 4],
            code_channels: 4,
            sub_blocks: 1,
            importance_blocks: 2,
        };
        let importance = ImportanceConfig::new(2, 4, 0.5, 1e-3).expect("importance config");
        let bundle = ModelBundle::init(network, importance, 4, seed).expect("bundle");
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(77));
        let mut code_cfg = TcaeConfig::new(4, 5, OrderKind::Inclined);
        code_cfg.groups = 2;
        code_cfg.residual_blocks = 1;
        code_cfg.kernel = 3;
        let mut imp_cfg = TcaeConfig::new(1, 2, OrderKind::Inclined);
        imp_cfg.groups = 2;
        imp_cfg.residual_blocks = 1;
        imp_cfg.kernel = 3;
        let code_entropy = TcaeModel::init(code_cfg, &mut rng).expect("code model");
        let importance_entropy = TcaeModel::init(imp_cfg, &mut rng).expect("importance model");
        TrainedModel::new(bundle, code_entropy, importance_entropy).expect("model")
    }

    #[test]
    fn save_load_save_is_bitwise_identity() {
        let model = tiny_model(1);
        let first = save_model(&model).expect("save");
        let loaded = load_model(&first).expect("load");
        let second = save_model(&loaded).expect("save again");
        assert_eq!(first, second);
        assert_eq!(model.digest().unwrap(), loaded.digest().unwrap());
    }

    #[test]
    fn loaded_parameters_equal_the_narrowed_originals() {
        let model = tiny_model(2);
        let loaded = load_model(&save_model(&model).expect("save")).expect("load");
        let orig = parameter_arrays(&model);
        let back = parameter_arrays(&loaded);
        assert_eq!(orig.len(), back.len());
        for (a, b) in orig.iter().zip(&back) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.shape, b.shape);
            let narrowed: Vec<f64> = a.values.iter().map(|&v| v as f32 as f64).collect();
            assert_eq!(narrowed, b.values, "array {}", a.name);
        }
    }

    #[test]
    fn manifest_names_cover_every_consumed_array() {
        let model = tiny_model(3);
        let names: Vec<String> = parameter_arrays(&model).iter().map(|e| e.name.clone()).collect();
        // One kernel and one bias per convolution, one quantizer table.
        let enc = model.bundle.encoder.layers().len();
        let imp = model.bundle.importance_net.layers().len();
        let dec = model.bundle.decoder.layers().len();
        let ce = model.code_entropy.layers().len();
        let ie = model.importance_entropy.layers().len();
        assert_eq!(names.len(), 2 * (enc + imp + dec + ce + ie) + 1);
        assert!(names.contains(&"encoder.0.kernel".to_string()));
        assert!(names.contains(&"quantizer.weights".to_string()));
        assert!(names.contains(&format!("code_entropy.{}.bias", ce - 1)));
        let unique: std::collections::BTreeSet<_> = names.iter().collect();
        assert_eq!(unique.len(), names.len());
    }

    #[test]
    fn any_flipped_payload_byte_is_detected() {
        let model = tiny_model(4);
        let bytes = save_model(&model).expect("save");
        let mut rng = ChaCha8Rng::seed_from_u64(90);
        use rand::Rng;
        for _ in 0..200 {
            let mut corrupted = bytes.clone();
            // Skip the magic so the error is specifically a digest failure.
            let at = rng.random_range(8..corrupted.len());
            let bit = 1u8 << rng.random_range(0..8);
            corrupted[at] ^= bit;
            match load_model(&corrupted) {
                Err(Error::CorruptModel(msg)) => {
                    assert!(msg.contains("digest"), "FAIL: unexpected message {msg}")
                }
                other => panic!("FAIL: corruption at byte {at} gave {other:?}"),
            }
        }
    }

    #[test]
    fn truncation_never_panics() {
        let model = tiny_model(5);
        let bytes = save_model(&model).expect("save");
        let mut rng = ChaCha8Rng::seed_from_u64(91);
        use rand::Rng;
        let mut cuts: Vec<usize> = (0..64).map(|_| rng.random_range(0..bytes.len())).collect();
        cuts.extend([0, 1, 4, 8, 12, bytes.len() - 17, bytes.len() - 16, bytes.len() - 1]);
        for cut in cuts {
            assert!(load_model(&bytes[..cut]).is_err(), "FAIL: truncation to {cut} accepted");
        }
    }

    #[test]
    fn wrong_magic_is_reported() {
        let model = tiny_model(6);
        let mut bytes = save_model(&model).expect("save");
        bytes[0] = b'X';
        match load_model(&bytes) {
            Err(Error::CorruptModel(msg)) => assert!(msg.contains("not a model file")),
            other => panic!("FAIL: wrong magic gave {other:?}"),
        }
    }

    #[test]
    fn mismatched_entropy_shapes_are_rejected() {
        let model = tiny_model(7);
        let mut rng = ChaCha8Rng::seed_from_u64(92);
        let mut bad_cfg = TcaeConfig::new(4, 9, OrderKind::Inclined);
        bad_cfg.groups = 2;
        bad_cfg.residual_blocks = 1;
        bad_cfg.kernel = 3;
        let bad = TcaeModel::init(bad_cfg, &mut rng).expect("model");
        let err = TrainedModel::new(model.bundle.clone(), bad, model.importance_entropy.clone());
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn digest_distinguishes_models() {
        let a = tiny_model(8);
        let b = tiny_model(9);
        assert_ne!(a.digest().unwrap(), b.digest().unwrap());
    }

    #[test]
    fn file_helpers_round_trip_through_disk() {
        let model = tiny_model(10);
        let dir = std::env::temp_dir().join("cwic-model-file-test");
        std::fs::create_dir_all(&dir).expect("mkdir");
        let path = dir.join("tiny.cwm");
        save_model_file(&path, &model).expect("write");
        let loaded = load_model_file(&path).expect("read");
        assert_eq!(model.digest().unwrap(), loaded.digest().unwrap());
        std::fs::remove_dir_all(&dir).ok();
    }
}
