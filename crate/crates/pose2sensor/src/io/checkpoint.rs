//! Trained-model container: the 8-byte magic `P2SCKPT1`, a 4-byte
//! little-endian manifest length, a UTF-8 manifest, then one contiguous
//! payload of little-endian IEEE-754 32-bit values in row-major order.
//!
//! The manifest has two record kinds, one per line:
//!
//! ```text
//! meta <key> <value>      # architecture + method, enough to rebuild the model
//! param <name> f32 <shape-csv> <byte-offset>
//! ```
//!
//! `param` records appear in registration order and must tile the payload
//! exactly — every offset in bounds, no overlap, no gap. The reader validates
//! the whole file before touching any parameter, so a tampered manifest can
//! never produce a partially loaded model. Writing is deterministic: the same
//! model always serializes to the same bytes, and a write→read round trip
//! reproduces every parameter bit for bit.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::models::{
    init_models, register_classifier, register_feature, FeatureExtractorSpec, ModelBundle,
    RegressorSpec, RegressorVariant, TCNBlockSpec,
};
use crate::rng::StreamRng;
use crate::tensor::ParamSet;
use crate::training::{Method, TrainedModel};

const MAGIC: &[u8; 8] = b"P2SCKPT1";

pub fn write_checkpoint(path: &Path, model: &TrainedModel, method: Method) -> Result<()> {
    std::fs::write(path, build_checkpoint(model, method)?)?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<(TrainedModel, Method)> {
    let bytes = std::fs::read(path)
        .map_err(|e| Error::Format(format!("cannot read checkpoint {}: {e}", path.display())))?;
    parse_checkpoint(&bytes).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Serialize to bytes. Split from the file wrapper for in-memory tests.
pub fn build_checkpoint(model: &TrainedModel, method: Method) -> Result<Vec<u8>> {
    let mut manifest = String::new();
    render_meta(&mut manifest, &model.bundle, method);
    let mut offset = 0usize;
    for (_, p) in model.params.iter() {
        let shape = p.tensor().shape();
        let shape_txt = if shape.is_empty() {
            "-".to_string()
        } else {
            shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(",")
        };
        manifest.push_str(&format!("param {} f32 {shape_txt} {offset}\n", p.name()));
        offset += p.tensor().numel() * 4;
    }

    let mut bytes = Vec::with_capacity(12 + manifest.len() + offset);
    bytes.extend_from_slice(MAGIC);
    let mlen = u32::try_from(manifest.len())
        .map_err(|_| Error::Format("checkpoint manifest exceeds 4 GiB".into()))?;
    bytes.extend_from_slice(&mlen.to_le_bytes());
    bytes.extend_from_slice(manifest.as_bytes());
    for (_, p) in model.params.iter() {
        for v in p.tensor().data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(bytes)
}

pub fn parse_checkpoint(bytes: &[u8]) -> Result<(TrainedModel, Method)> {
    if bytes.len() < 12 {
        return Err(Error::Format(format!(
            "checkpoint of {} bytes is shorter than the 12-byte preamble",
            bytes.len()
        )));
    }
    if &bytes[..8] != MAGIC {
        return Err(Error::Format(format!(
            "bad checkpoint magic {:?} (expected {:?})",
            &bytes[..8],
            MAGIC
        )));
    }
    let mlen = u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]) as usize;
    if bytes.len() - 12 < mlen {
        return Err(Error::Format(format!(
            "manifest truncated: declared {mlen} bytes, file holds {}",
            bytes.len() - 12
        )));
    }
    let manifest = std::str::from_utf8(&bytes[12..12 + mlen])
        .map_err(|_| Error::Format("checkpoint manifest is not valid UTF-8".into()))?;
    let payload = &bytes[12 + mlen..];

    // Parse the manifest into meta entries and parameter records.
    let mut meta: BTreeMap<&str, &str> = BTreeMap::new();
    let mut records: Vec<(&str, Vec<usize>, usize)> = Vec::new();
    for (lineno, line) in manifest.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("meta") => {
                let key = tok
                    .next()
                    .ok_or_else(|| bad_line(lineno, "meta record without a key"))?;
                let value = tok
                    .next()
                    .ok_or_else(|| bad_line(lineno, "meta record without a value"))?;
                if tok.next().is_some() {
                    return Err(bad_line(lineno, "meta record with trailing tokens"));
                }
                if meta.insert(key, value).is_some() {
                    return Err(bad_line(lineno, &format!("duplicate meta key {key:?}")));
                }
            }
            Some("param") => {
                let name = tok
                    .next()
                    .ok_or_else(|| bad_line(lineno, "param record without a name"))?;
                let dtype = tok
                    .next()
                    .ok_or_else(|| bad_line(lineno, "param record without a dtype"))?;
                if dtype != "f32" {
                    return Err(bad_line(
                        lineno,
                        &format!("unsupported parameter dtype {dtype:?} (only f32)"),
                    ));
                }
                let shape_txt = tok
                    .next()
                    .ok_or_else(|| bad_line(lineno, "param record without a shape"))?;
                let offset_txt = tok
                    .next()
                    .ok_or_else(|| bad_line(lineno, "param record without an offset"))?;
                if tok.next().is_some() {
                    return Err(bad_line(lineno, "param record with trailing tokens"));
                }
                let shape = if shape_txt == "-" {
                    Vec::new()
                } else {
                    shape_txt
                        .split(',')
                        .map(|d| {
                            d.parse::<usize>().map_err(|_| {
                                bad_line(lineno, &format!("bad shape dimension {d:?}"))
                            })
                        })
                        .collect::<Result<Vec<_>>>()?
                };
                let offset = offset_txt
                    .parse::<usize>()
                    .map_err(|_| bad_line(lineno, &format!("bad byte offset {offset_txt:?}")))?;
                if records.iter().any(|(n, _, _)| *n == name) {
                    return Err(bad_line(lineno, &format!("duplicate parameter {name:?}")));
                }
                records.push((name, shape, offset));
            }
            Some(other) => {
                return Err(bad_line(lineno, &format!("unknown record kind {other:?}")));
            }
            None => unreachable!("blank lines were skipped"),
        }
    }

    let (bundle, method) = bundle_from_meta(&mut meta)?;
    if let Some((key, _)) = meta.iter().next() {
        return Err(Error::Format(format!("unknown meta key {key:?} in checkpoint manifest")));
    }

    // Rebuild the parameter set exactly as the training path registers it;
    // the initialization draws are discarded when the payload is copied in.
    let mut params: ParamSet<f32> = ParamSet::new();
    let mut rng = StreamRng::new(0, "init");
    let (regressor, feature, classifier) = match method {
        Method::Joint | Method::RegressionFirst => {
            let h = init_models(&bundle, &mut params, &mut rng)?;
            (Some(h.regressor), h.feature, h.classifier)
        }
        Method::BaselineReal => {
            let feature =
                register_feature(&bundle.feature, bundle.regressor.window, &mut params, &mut rng)?;
            let classifier = register_classifier(
                bundle.feature.feature_width,
                bundle.n_classes,
                bundle.feature.leaky_slope,
                &mut params,
                &mut rng,
            )?;
            (None, feature, classifier)
        }
    };

    // Validate every record against the rebuilt model before loading anything.
    if records.len() != params.len() {
        return Err(Error::Format(format!(
            "manifest lists {} parameters, the described model has {}",
            records.len(),
            params.len()
        )));
    }
    let mut total = 0usize;
    for ((name, shape, _), (_, p)) in records.iter().zip(params.iter()) {
        if name != &p.name() {
            return Err(Error::Format(format!(
                "manifest parameter {name:?} does not match the model's {:?} at the same position",
                p.name()
            )));
        }
        if shape.as_slice() != p.tensor().shape() {
            return Err(Error::Format(format!(
                "parameter {name:?} has shape {shape:?} in the manifest but {:?} in the model",
                p.tensor().shape()
            )));
        }
        total += p.tensor().numel() * 4;
    }
    if total != payload.len() {
        return Err(Error::Format(format!(
            "payload holds {} bytes but the manifest accounts for {total}",
            payload.len()
        )));
    }
    let mut intervals: Vec<(usize, usize, &str)> = records
        .iter()
        .map(|(name, shape, offset)| {
            (*offset, shape.iter().product::<usize>() * 4, *name)
        })
        .collect();
    intervals.sort_unstable();
    let mut end = 0usize;
    for &(offset, len, name) in &intervals {
        if offset != end {
            return Err(Error::Format(format!(
                "parameter {name:?} at byte offset {offset} {} byte {end}",
                if offset < end { "overlaps the data ending at" } else { "leaves a gap after" }
            )));
        }
        end = offset + len;
    }

    // Everything checked out; copy the payload into the tensors.
    let ids: Vec<_> = params.iter().map(|(id, _)| id).collect();
    for ((_, _, offset), id) in records.iter().zip(ids) {
        let t = params.tensor_mut(id);
        let n = t.numel();
        let src = &payload[*offset..*offset + n * 4];
        for (dst, chunk) in t.data_mut().iter_mut().zip(src.chunks_exact(4)) {
            *dst = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
        }
    }

    Ok((
        TrainedModel {
            bundle,
            params,
            regressor,
            feature,
            classifier,
        },
        method,
    ))
}

fn bad_line(lineno: usize, msg: &str) -> Error {
    Error::Format(format!("checkpoint manifest line {}: {msg}", lineno + 1))
}

fn render_meta(out: &mut String, bundle: &ModelBundle, method: Method) {
    use std::fmt::Write;
    let r = &bundle.regressor;
    let f = &bundle.feature;
    let mut w = |k: &str, v: String| writeln!(out, "meta {k} {v}").expect("string write");
    w("method", method.as_str().into());
    w("n_classes", bundle.n_classes.to_string());
    w("regressor.window", r.window.to_string());
    w("regressor.joints", r.joints.to_string());
    w("regressor.coords", r.coords.to_string());
    w("regressor.residual", r.residual.to_string());
    w("regressor.variant", r.variant.as_str().into());
    w("regressor.leaky_slope", r.leaky_slope.to_string());
    for (i, b) in r.blocks.iter().enumerate() {
        w(
            &format!("regressor.block{}", i + 1),
            format!("{},{},{},{},{}", b.in_ch, b.out_ch, b.kernel, b.dilation, b.dropout),
        );
    }
    w(
        "regressor.inter_widths",
        r.inter_widths.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(","),
    );
    w("feature.in_ch", f.in_ch.to_string());
    w("feature.conv_ch", f.conv_ch.to_string());
    w("feature.kernel", f.kernel.to_string());
    w("feature.stride", f.stride.to_string());
    w("feature.n_convs", f.n_convs.to_string());
    w("feature.pool_kernel", f.pool_kernel.to_string());
    w("feature.pool_stride", f.pool_stride.to_string());
    w("feature.feature_width", f.feature_width.to_string());
    w("feature.dropout", f.dropout.to_string());
    w("feature.leaky_slope", f.leaky_slope.to_string());
    w("feature.bn_momentum", f.bn_momentum.to_string());
    w("feature.bn_eps", f.bn_eps.to_string());
}

fn bundle_from_meta<'a>(meta: &mut BTreeMap<&'a str, &'a str>) -> Result<(ModelBundle, Method)> {
    fn take<'a>(meta: &mut BTreeMap<&'a str, &'a str>, key: &str) -> Result<&'a str> {
        meta.remove(key)
            .ok_or_else(|| Error::Format(format!("checkpoint manifest lacks meta key {key:?}")))
    }
    fn num<'a, T: std::str::FromStr>(
        meta: &mut BTreeMap<&'a str, &'a str>,
        key: &str,
    ) -> Result<T> {
        let v = take(meta, key)?;
        v.parse().map_err(|_| {
            Error::Format(format!("checkpoint meta key {key:?} has unparsable value {v:?}"))
        })
    }
    fn csv<'a, T: std::str::FromStr + std::fmt::Debug, const N: usize>(
        meta: &mut BTreeMap<&'a str, &'a str>,
        key: &str,
    ) -> Result<[T; N]> {
        let v = take(meta, key)?;
        let items = v
            .split(',')
            .map(|p| {
                p.parse::<T>().map_err(|_| {
                    Error::Format(format!("checkpoint meta key {key:?} has unparsable value {v:?}"))
                })
            })
            .collect::<Result<Vec<T>>>()?;
        <[T; N]>::try_from(items).map_err(|_| {
            Error::Format(format!("checkpoint meta key {key:?} must list {N} values, got {v:?}"))
        })
    }

    fn block<'a>(meta: &mut BTreeMap<&'a str, &'a str>, key: &str) -> Result<TCNBlockSpec> {
        let v = take(meta, key)?;
        let parts: Vec<&str> = v.split(',').collect();
        let bad = || {
            Error::Format(format!(
                "checkpoint meta key {key:?} must be in,out,kernel,dilation,dropout, got {v:?}"
            ))
        };
        if parts.len() != 5 {
            return Err(bad());
        }
        Ok(TCNBlockSpec::new(
            parts[0].parse().map_err(|_| bad())?,
            parts[1].parse().map_err(|_| bad())?,
            parts[2].parse().map_err(|_| bad())?,
            parts[3].parse().map_err(|_| bad())?,
            parts[4].parse().map_err(|_| bad())?,
        ))
    }

    let method = Method::parse(take(meta, "method")?)
        .map_err(|e| Error::Format(format!("checkpoint manifest: {e}")))?;
    let n_classes = num(meta, "n_classes")?;
    let regressor = RegressorSpec {
        blocks: [
            block(meta, "regressor.block1")?,
            block(meta, "regressor.block2")?,
            block(meta, "regressor.block3")?,
            block(meta, "regressor.block4")?,
            block(meta, "regressor.block5")?,
        ],
        inter_widths: csv(meta, "regressor.inter_widths")?,
        window: num(meta, "regressor.window")?,
        joints: num(meta, "regressor.joints")?,
        coords: num(meta, "regressor.coords")?,
        residual: num(meta, "regressor.residual")?,
        variant: RegressorVariant::parse(take(meta, "regressor.variant")?)
            .map_err(|e| Error::Format(format!("checkpoint manifest: {e}")))?,
        leaky_slope: num(meta, "regressor.leaky_slope")?,
    };
    let feature = FeatureExtractorSpec {
        in_ch: num(meta, "feature.in_ch")?,
        conv_ch: num(meta, "feature.conv_ch")?,
        kernel: num(meta, "feature.kernel")?,
        stride: num(meta, "feature.stride")?,
        n_convs: num(meta, "feature.n_convs")?,
        pool_kernel: num(meta, "feature.pool_kernel")?,
        pool_stride: num(meta, "feature.pool_stride")?,
        feature_width: num(meta, "feature.feature_width")?,
        dropout: num(meta, "feature.dropout")?,
        leaky_slope: num(meta, "feature.leaky_slope")?,
        bn_momentum: num(meta, "feature.bn_momentum")?,
        bn_eps: num(meta, "feature.bn_eps")?,
    };
    Ok((ModelBundle::new(regressor, feature, n_classes), method))
}
