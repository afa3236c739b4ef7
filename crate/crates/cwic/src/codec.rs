//! End-to-end compression: packs the quantized code cuboid and its
//! importance map into one self-describing byte stream and recovers them
//! bit-exactly.
//!
//! The importance map is coded first because the decoder needs the channel
//! mask before it can walk the code stream.  Masked code positions consume
//! no bits but still sit in the context cuboid as the reserved symbol 0,
//! so both sides condition on identical neighborhoods.

use crate::autoenc::SPATIAL_RATIO;
use crate::coder::{quantize_pmf, ArithmeticDecoder, ArithmeticEncoder};
use crate::container::{read_bitstream, write_bitstream, BitstreamHeader, TrainedModel};
use crate::entropy::{
    inclined_planes, raster_order, remap_codes, restore_codes, CodeCuboid, OrderKind, TcaeModel,
};
use crate::importance::{build_mask, ImportanceMask, QuantizedImportanceMap};
use crate::tensor::FeatureCuboid;
use crate::{Error, Result};

/// How the decoder schedules context-model evaluations.  Both modes consume
/// the identical bit sequence and produce identical symbols; plane batching
/// just amortizes one model pass over every position of an inclined plane.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeMode {
    PlaneBatched,
    PerPosition,
}

/// Coding order as a list of batches.  Positions within a batch depend only
/// on earlier batches, never on each other.
fn coding_batches(model: &TcaeModel, h: usize, w: usize) -> Vec<Vec<(usize, usize, usize)>> {
    let c = model.config().channels;
    match model.config().order {
        OrderKind::Inclined => inclined_planes(c, h, w),
        OrderKind::Raster => raster_order(c, h, w).into_iter().map(|p| vec![p]).collect(),
    }
}

fn is_coded(keep: Option<&ImportanceMask>, k: usize, i: usize, j: usize) -> bool {
    keep.map_or(true, |m| m.get(k, i, j))
}

/// One-pass encoding: the context model sees the complete cuboid, which by
/// causality gives each position the same distribution the decoder will
/// reconstruct from its partial view.
fn encode_stream(
    model: &TcaeModel,
    codes: &CodeCuboid,
    keep: Option<&ImportanceMask>,
    parallel: bool,
) -> Result<Vec<u8>> {
    let (_, h, w) = codes.shape();
    let pmfs = model.predict_pmfs(codes, parallel)?;
    let mut enc = ArithmeticEncoder::new();
    for batch in coding_batches(model, h, w) {
        for (k, i, j) in batch {
            if is_coded(keep, k, i, j) {
                let table = quantize_pmf(pmfs.pmf(k, i, j))?;
                enc.encode(codes.get(k, i, j) as usize, &table)?;
            }
        }
    }
    Ok(enc.finish())
}

fn decode_stream(
    model: &TcaeModel,
    payload: &[u8],
    h: usize,
    w: usize,
    keep: Option<&ImportanceMask>,
    mode: DecodeMode,
    parallel: bool,
) -> Result<CodeCuboid> {
    let cfg = model.config();
    let mut codes = CodeCuboid::zeros(cfg.channels, h, w, cfg.alphabet)?;
    let mut dec = ArithmeticDecoder::new(payload);
    for batch in coding_batches(model, h, w) {
        match mode {
            DecodeMode::PlaneBatched => {
                if !batch.iter().any(|&(k, i, j)| is_coded(keep, k, i, j)) {
                    continue;
                }
                let pmfs = model.predict_pmfs(&codes, parallel)?;
                for (k, i, j) in batch {
                    if is_coded(keep, k, i, j) {
                        let table = quantize_pmf(pmfs.pmf(k, i, j))?;
                        codes.set(k, i, j, dec.decode(&table)? as u16);
                    }
                }
            }
            DecodeMode::PerPosition => {
                for (k, i, j) in batch {
                    if is_coded(keep, k, i, j) {
                        let pmfs = model.predict_pmfs(&codes, parallel)?;
                        let table = quantize_pmf(pmfs.pmf(k, i, j))?;
                        codes.set(k, i, j, dec.decode(&table)? as u16);
                    }
                }
            }
        }
    }
    Ok(codes)
}

/// Serializes quantizer levels plus their importance map for an image whose
/// original pixel dimensions were `orig` before padding.
pub fn encode_cuboid(
    model: &TrainedModel,
    levels: &CodeCuboid,
    qi: &QuantizedImportanceMap,
    orig: (usize, usize),
    parallel: bool,
) -> Result<Vec<u8>> {
    model.validate()?;
    let (n, h8, w8) = levels.shape();
    if n != model.bundle.network.code_channels {
        return Err(Error::config(format!(
            "code cuboid has {n} channels, model expects {}",
            model.bundle.network.code_channels
        )));
    }
    if levels.alphabet() != model.bundle.quant_levels {
        return Err(Error::config("code alphabet does not match the quantizer level count"));
    }
    if (qi.height(), qi.width()) != (h8, w8) {
        return Err(Error::config("importance map and code cuboid cover different grids"));
    }
    if qi.num_levels() != model.bundle.importance.levels {
        return Err(Error::config("importance map level count does not match the model"));
    }
    let mask = build_mask(qi, n)?;
    let importance_payload =
        encode_stream(&model.importance_entropy, &qi.to_code_cuboid(), None, parallel)?;
    let remapped = remap_codes(levels, &mask)?;
    let code_payload = encode_stream(&model.code_entropy, &remapped, Some(&mask), parallel)?;
    let header = BitstreamHeader {
        coded_height: (h8 * SPATIAL_RATIO) as u32,
        coded_width: (w8 * SPATIAL_RATIO) as u32,
        orig_height: orig.0 as u32,
        orig_width: orig.1 as u32,
        code_channels: n as u32,
        importance_levels: model.bundle.importance.levels as u32,
        quant_levels: model.bundle.quant_levels as u32,
        model_digest: model.digest()?,
        importance_len: importance_payload.len() as u32,
        code_len: code_payload.len() as u32,
    };
    write_bitstream(&header, &importance_payload, &code_payload)
}

/// Recovers levels, importance map and mask from a byte stream produced by
/// [`encode_cuboid`] with the same model.
pub fn decode_cuboid(
    model: &TrainedModel,
    bytes: &[u8],
    mode: DecodeMode,
    parallel: bool,
) -> Result<(CodeCuboid, QuantizedImportanceMap, ImportanceMask, BitstreamHeader)> {
    model.validate()?;
    let (header, importance_payload, code_payload) = read_bitstream(bytes)?;
    if header.model_digest != model.digest()? {
        return Err(Error::config(
            "stream was encoded with a different model; load the matching model file",
        ));
    }
    let n = model.bundle.network.code_channels;
    if header.code_channels as usize != n
        || header.importance_levels as usize != model.bundle.importance.levels
        || header.quant_levels as usize != model.bundle.quant_levels
    {
        return Err(Error::corrupt("header geometry contradicts the identified model"));
    }
    let h8 = header.coded_height as usize / SPATIAL_RATIO;
    let w8 = header.coded_width as usize / SPATIAL_RATIO;
    let qi_codes = decode_stream(
        &model.importance_entropy,
        &importance_payload,
        h8,
        w8,
        None,
        mode,
        parallel,
    )?;
    let qi = QuantizedImportanceMap::from_levels(
        h8,
        w8,
        model.bundle.importance.levels,
        qi_codes.as_slice().to_vec(),
    )?;
    let mask = build_mask(&qi, n)?;
    let remapped =
        decode_stream(&model.code_entropy, &code_payload, h8, w8, Some(&mask), mode, parallel)?;
    let levels = restore_codes(&remapped, &mask)?;
    Ok((levels, qi, mask, header))
}

/// Replicate-edge padding up to the next multiple of the stem stride.
pub fn pad_image(x: &FeatureCuboid) -> Result<FeatureCuboid> {
    let (c, h, w) = x.shape();
    if h == 0 || w == 0 {
        return Err(Error::input("cannot pad an empty image"));
    }
    let hp = h.div_ceil(SPATIAL_RATIO) * SPATIAL_RATIO;
    let wp = w.div_ceil(SPATIAL_RATIO) * SPATIAL_RATIO;
    if (hp, wp) == (h, w) {
        return Ok(x.clone());
    }
    let mut out = FeatureCuboid::zeros(c, hp, wp);
    for ch in 0..c {
        for y in 0..hp {
            for xc in 0..wp {
                out.set(ch, y, xc, x.get(ch, y.min(h - 1), xc.min(w - 1)));
            }
        }
    }
    Ok(out)
}

/// Drops the padding rows and columns again.
pub fn crop_image(x: &FeatureCuboid, h: usize, w: usize) -> Result<FeatureCuboid> {
    let (c, hp, wp) = x.shape();
    if h == 0 || w == 0 || h > hp || w > wp {
        return Err(Error::input(format!("cannot crop {hp}x{wp} to {h}x{w}")));
    }
    if (h, w) == (hp, wp) {
        return Ok(x.clone());
    }
    let mut out = FeatureCuboid::zeros(c, h, w);
    for ch in 0..c {
        for y in 0..h {
            for xc in 0..w {
                out.set(ch, y, xc, x.get(ch, y, xc));
            }
        }
    }
    Ok(out)
}

/// Compresses an RGB image of any size; dimensions that are not multiples
/// of the stem stride are padded before analysis and recorded in the header.
pub fn encode_image(model: &TrainedModel, image: &FeatureCuboid, parallel: bool) -> Result<Vec<u8>> {
    let (c, h, w) = image.shape();
    if c != 3 {
        return Err(Error::input(format!("expected a 3-channel image, got {c} channels")));
    }
    let padded = pad_image(image)?;
    let (levels, qi, _) = model.bundle.analyze(&padded)?;
    encode_cuboid(model, &levels, &qi, (h, w), parallel)
}

/// Decompresses a stream back to an RGB image at its original dimensions.
pub fn decode_image(
    model: &TrainedModel,
    bytes: &[u8],
    mode: DecodeMode,
    parallel: bool,
) -> Result<FeatureCuboid> {
    let (levels, _, mask, header) = decode_cuboid(model, bytes, mode, parallel)?;
    let xhat = model.bundle.synthesize(&levels, &mask)?;
    crop_image(&xhat, header.orig_height as usize, header.orig_width as usize)
}

/// Rate of a finished stream against the pre-padding pixel count.
pub fn bits_per_pixel(stream_bytes: usize, orig_h: usize, orig_w: usize) -> f64 {
    (stream_bytes * 8) as f64 / (orig_h * orig_w) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autoenc::{ModelBundle, NetworkConfig};
    use crate::entropy::TcaeConfig;
    use crate::importance::ImportanceConfig;
    use rand::{Rng, SeedableRng};
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
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(500));
        let mut code_cfg = TcaeConfig::new(4, 5, OrderKind::Inclined);
        code_cfg.groups = 2;
        code_cfg.residual_blocks = 1;
        code_cfg.kernel = 3;
        let mut imp_cfg = TcaeConfig::new(1, 2, OrderKind::Inclined);
        imp_cfg.groups = 2;
        imp_cfg.residual_blocks = 1;
        imp_cfg.kernel = 3;
        let code_entropy = crate::entropy::TcaeModel::init(code_cfg, &mut rng).expect("code model");
        let importance_entropy =
            crate::entropy::TcaeModel::init(imp_cfg, &mut rng).expect("importance model");
        TrainedModel::new(bundle, code_entropy, importance_entropy).expect("model")
    }

    fn random_inputs(
        rng: &mut ChaCha8Rng,
        n: usize,
        h8: usize,
        w8: usize,
        levels_t: usize,
        levels_l: usize,
    ) -> (CodeCuboid, QuantizedImportanceMap) {
        let symbols: Vec<u16> =
            (0..n * h8 * w8).map(|_| rng.random_range(0..levels_t as u16)).collect();
        let levels = CodeCuboid::from_symbols(n, h8, w8, levels_t, symbols).expect("levels");
        let qi_levels: Vec<u16> =
            (0..h8 * w8).map(|_| rng.random_range(0..levels_l as u16)).collect();
        let qi =
            QuantizedImportanceMap::from_levels(h8, w8, levels_l, qi_levels).expect("importance");
        (levels, qi)
    }

    #[test]
    fn transport_round_trip_is_bitwise() {
        let model = tiny_model(1);
        let mut rng = ChaCha8Rng::seed_from_u64(100);
        for (h8, w8) in [(2, 2), (3, 4)] {
            let (levels, qi) = random_inputs(&mut rng, 4, h8, w8, 4, 2);
            let bytes =
                encode_cuboid(&model, &levels, &qi, (h8 * 8, w8 * 8), false).expect("encode");
            let (levels2, qi2, mask2, header) =
                decode_cuboid(&model, &bytes, DecodeMode::PlaneBatched, false).expect("decode");
            assert_eq!(qi.levels(), qi2.levels());
            let mask = build_mask(&qi, 4).unwrap();
            assert_eq!(mask.to_code_cuboid().as_slice(), mask2.to_code_cuboid().as_slice());
            // Masked positions carry no information; compare kept ones.
            let (n, h, w) = levels.shape();
            for k in 0..n {
                for i in 0..h {
                    for j in 0..w {
                        if mask.get(k, i, j) {
                            assert_eq!(levels.get(k, i, j), levels2.get(k, i, j));
                        } else {
                            assert_eq!(levels2.get(k, i, j), 0);
                        }
                    }
                }
            }
            assert_eq!(header.orig_height as usize, h8 * 8);
        }
    }

    #[test]
    fn plane_batched_and_per_position_decodes_are_bitwise_equal() {
        let model = tiny_model(2);
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        let (levels, qi) = random_inputs(&mut rng, 4, 3, 3, 4, 2);
        let bytes = encode_cuboid(&model, &levels, &qi, (24, 24), false).expect("encode");
        let mut outputs = Vec::new();
        for mode in [DecodeMode::PlaneBatched, DecodeMode::PerPosition] {
            for parallel in [false, true] {
                let (l, q, m, _) = decode_cuboid(&model, &bytes, mode, parallel).expect("decode");
                outputs.push((
                    l.as_slice().to_vec(),
                    q.levels().to_vec(),
                    m.to_code_cuboid().as_slice().to_vec(),
                ));
            }
        }
        for other in &outputs[1..] {
            assert_eq!(&outputs[0], other);
        }
    }

    #[test]
    fn stream_from_a_different_model_is_refused() {
        let model_a = tiny_model(3);
        let model_b = tiny_model(4);
        let mut rng = ChaCha8Rng::seed_from_u64(102);
        let (levels, qi) = random_inputs(&mut rng, 4, 2, 2, 4, 2);
        let bytes = encode_cuboid(&model_a, &levels, &qi, (16, 16), false).expect("encode");
        match decode_cuboid(&model_b, &bytes, DecodeMode::PlaneBatched, false) {
            Err(Error::Config(msg)) => assert!(msg.contains("model"), "FAIL: message {msg}"),
            other => panic!("FAIL: mismatched model gave {other:?}"),
        }
    }

    #[test]
    fn damaged_streams_error_without_panicking() {
        let model = tiny_model(5);
        let mut rng = ChaCha8Rng::seed_from_u64(103);
        let (levels, qi) = random_inputs(&mut rng, 4, 2, 3, 4, 2);
        let bytes = encode_cuboid(&model, &levels, &qi, (16, 24), false).expect("encode");
        for cut in [0, 7, 30, 59, bytes.len() - 1] {
            let r = decode_cuboid(&model, &bytes[..cut], DecodeMode::PlaneBatched, false);
            assert!(r.is_err(), "FAIL: truncation to {cut} accepted");
        }
        for _ in 0..50 {
            let mut corrupted = bytes.clone();
            let at = rng.random_range(0..corrupted.len());
            corrupted[at] ^= 1 << rng.random_range(0..8);
            // A flip may land in coded payload and still decode to some
            // symbol string; the only requirement is no panic.
            let _ = decode_cuboid(&model, &corrupted, DecodeMode::PlaneBatched, false);
        }
    }

    #[test]
    fn image_round_trip_restores_original_dimensions() {
        let model = tiny_model(6);
        let mut rng = ChaCha8Rng::seed_from_u64(104);
        let mut image = FeatureCuboid::zeros(3, 19, 13);
        for v in image.as_mut_slice() {
            *v = rng.random_range(0.0..1.0);
        }
        let bytes = encode_image(&model, &image, false).expect("encode");
        let restored =
            decode_image(&model, &bytes, DecodeMode::PlaneBatched, false).expect("decode");
        assert_eq!(restored.shape(), (3, 19, 13));
        let (header, _, _) = read_bitstream(&bytes).expect("header");
        assert_eq!((header.coded_height, header.coded_width), (24, 16));
        assert!(bits_per_pixel(bytes.len(), 19, 13) > 0.0);
    }

    #[test]
    fn padding_replicates_the_last_row_and_column() {
        let mut x = FeatureCuboid::zeros(1, 3, 3);
        for y in 0..3 {
            for xc in 0..3 {
                x.set(0, y, xc, (y * 3 + xc) as f64);
            }
        }
        let padded = pad_image(&x).expect("pad");
        assert_eq!(padded.shape(), (1, 8, 8));
        assert_eq!(padded.get(0, 7, 7), 8.0);
        assert_eq!(padded.get(0, 0, 7), 2.0);
        assert_eq!(padded.get(0, 7, 0), 6.0);
        let cropped = crop_image(&padded, 3, 3).expect("crop");
        assert_eq!(cropped.as_slice(), x.as_slice());
    }

    #[test]
    fn fully_unimportant_map_still_round_trips() {
        let model = tiny_model(7);
        let levels = CodeCuboid::from_symbols(4, 2, 2, 4, vec![1; 16]).expect("levels");
        let qi = QuantizedImportanceMap::from_levels(2, 2, 2, vec![0; 4]).expect("importance");
        let bytes = encode_cuboid(&model, &levels, &qi, (16, 16), false).expect("encode");
        let (levels2, qi2, mask2, _) =
            decode_cuboid(&model, &bytes, DecodeMode::PerPosition, false).expect("decode");
        assert_eq!(qi2.levels(), qi.levels());
        assert_eq!(mask2.count(), 0);
        assert!(levels2.as_slice().iter().all(|&s| s == 0));
    }
}
