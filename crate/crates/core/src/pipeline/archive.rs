//! Single-file model archive.
//!
//! ```text
//! WBW-ARCHIVE 1
//! section manifest <bytes> <sha256>
//! <manifest JSON>
//! section features <bytes> <sha256>
//! <feature pipeline JSON>
//! section gbdt <bytes> <sha256>
//! <little-endian f64 payload>
//! ...
//! end
//! ```
//!
//! Each payload is followed by a newline. Numeric sections (`gbdt`,
//! `inner_rf`, `scaler`, `gru.<bucket>`, `rf`) hold IEEE-754 doubles; counts
//! and indices are stored as exactly representable doubles.

use std::path::Path;

use sha2::{Digest, Sha256};

use super::model::{InputScaler, Manifest, WbwModel};
use super::Structure;
use crate::codec::{Decoder, Encoder};
use crate::feature_engineering::FeaturePipeline;
use crate::gbdt::GbdtModel;
use crate::gru::GruNetwork;
use crate::random_forest::RfModel;
use crate::{Error, Result, Stage, StageContext};

pub const ARCHIVE_MAGIC: &str = "WBW-ARCHIVE";
pub const ARCHIVE_VERSION: u32 = 1;

fn push_section(out: &mut Vec<u8>, name: &str, payload: &[u8]) {
    let sum = hex::encode(Sha256::digest(payload));
    out.extend_from_slice(format!("section {name} {} {sum}\n", payload.len()).as_bytes());
    out.extend_from_slice(payload);
    out.push(b'\n');
}

fn encoded(f: impl FnOnce(&mut Encoder)) -> Vec<u8> {
    let mut e = Encoder::new();
    f(&mut e);
    e.into_bytes()
}

impl WbwModel {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = format!("{ARCHIVE_MAGIC} {ARCHIVE_VERSION}\n").into_bytes();
        push_section(&mut out, "manifest", &serde_json::to_vec_pretty(&self.manifest)?);
        push_section(&mut out, "features", &serde_json::to_vec(&self.features)?);
        if let Some(g) = &self.gbdt {
            push_section(&mut out, "gbdt", &encoded(|e| g.encode(e)));
        }
        if let Some(rf) = &self.inner_rf {
            push_section(&mut out, "inner_rf", &encoded(|e| rf.encode(e)));
        }
        if let Some(s) = &self.scaler {
            push_section(&mut out, "scaler", &encoded(|e| s.encode(e)));
        }
        for (i, net) in self.grus.iter().enumerate() {
            push_section(&mut out, &format!("gru.{i}"), &encoded(|e| net.encode(e)));
        }
        if let Some(rf) = &self.rf {
            push_section(&mut out, "rf", &encoded(|e| rf.encode(e)));
        }
        out.extend_from_slice(b"end\n");
        Ok(out)
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self> {
        let mut r = Reader { data, pos: 0 };
        let header = r.line("header")?;
        let version = header
            .strip_prefix(ARCHIVE_MAGIC)
            .map(str::trim)
            .ok_or_else(|| Error::archive("header", "not a model archive"))?;
        if version != ARCHIVE_VERSION.to_string() {
            return Err(Error::archive(
                "header",
                format!("unsupported format version {version} (this build reads {ARCHIVE_VERSION})"),
            ));
        }
        let manifest: Manifest =
            serde_json::from_slice(r.section("manifest")?).map_err(|e| Error::archive("manifest", e.to_string()))?;
        if manifest.format_version != ARCHIVE_VERSION {
            return Err(Error::archive(
                "manifest",
                format!("format_version {}", manifest.format_version),
            ));
        }
        if manifest.config.hash() != manifest.config_hash {
            return Err(Error::archive(
                "manifest",
                "config hash does not match the stored config",
            ));
        }
        let features: FeaturePipeline =
            serde_json::from_slice(r.section("features")?).map_err(|e| Error::archive("features", e.to_string()))?;
        if features.columns() != manifest.feature_columns.as_slice() {
            return Err(Error::archive("features", "columns differ from the manifest"));
        }
        let s = manifest.structure;
        let gbdt = if s.leading_gbdt() || s == Structure::Bww {
            Some(r.decode("gbdt", GbdtModel::decode)?)
        } else {
            None
        };
        let inner_rf = if s == Structure::Wwb {
            Some(r.decode("inner_rf", RfModel::decode)?)
        } else {
            None
        };
        let (scaler, grus) = if s.uses_gru() {
            let scaler = r.decode("scaler", InputScaler::decode)?;
            let grus = (0..manifest.config.buckets.len())
                .map(|i| r.decode(&format!("gru.{i}"), GruNetwork::decode))
                .collect::<Result<Vec<_>>>()?;
            (Some(scaler), grus)
        } else {
            (None, Vec::new())
        };
        let rf = if s.top() == super::Top::Forest {
            Some(r.decode("rf", RfModel::decode)?)
        } else {
            None
        };
        if r.line("end")? != "end" {
            return Err(Error::archive("end", "unexpected data after the last section"));
        }
        if r.pos != data.len() {
            return Err(Error::archive("end", "trailing bytes after end marker"));
        }
        let model = WbwModel {
            buckets: manifest.config.buckets.clone(),
            manifest,
            features,
            gbdt,
            inner_rf,
            scaler,
            grus,
            rf,
        };
        model.check_dims()?;
        Ok(model)
    }
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn line(&mut self, section: &str) -> Result<&'a str> {
        let rest = &self.data[self.pos..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::archive(section, "file ends before this section"))?;
        self.pos += end + 1;
        std::str::from_utf8(&rest[..end]).map_err(|_| Error::archive(section, "header line is not UTF-8"))
    }

    /// Payload of the next section, which must be `name`.
    fn section(&mut self, name: &str) -> Result<&'a [u8]> {
        let line = self.line(name)?;
        let parts: Vec<&str> = line.split(' ').collect();
        match parts.as_slice() {
            ["section", got, len, sum] => {
                if *got != name {
                    return Err(Error::archive(name, format!("missing (found section `{got}`)")));
                }
                let len: usize = len.parse().map_err(|_| Error::archive(name, "bad length"))?;
                let available = self.data.len() - self.pos;
                if available < len + 1 {
                    return Err(Error::archive(
                        name,
                        format!(
                            "truncated: {len} payload bytes declared, {} present",
                            available.min(len)
                        ),
                    ));
                }
                let payload = &self.data[self.pos..self.pos + len];
                if hex::encode(Sha256::digest(payload)) != *sum {
                    return Err(Error::archive(name, "checksum mismatch"));
                }
                if self.data[self.pos + len] != b'\n' {
                    return Err(Error::archive(name, "payload not terminated"));
                }
                self.pos += len + 1;
                Ok(payload)
            }
            _ => Err(Error::archive(name, format!("missing (found `{line}`)"))),
        }
    }

    fn decode<T>(&mut self, name: &str, f: impl FnOnce(&mut Decoder<'_>) -> Result<T>) -> Result<T> {
        let payload = self.section(name)?;
        let mut d = Decoder::new(name, payload);
        let v = f(&mut d)?;
        d.finish()?;
        Ok(v)
    }
}

pub fn save_model(model: &WbwModel, path: &Path) -> Result<()> {
    std::fs::write(path, model.to_bytes()?)
        .map_err(Error::from)
        .stage(Stage::Archive)
}

pub fn load_model(path: &Path) -> Result<WbwModel> {
    let data = std::fs::read(path).map_err(Error::from).stage(Stage::Archive)?;
    WbwModel::from_bytes(&data).stage(Stage::Archive)
}

/// Reads and verifies only the manifest section.
pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let data = std::fs::read(path).map_err(Error::from).stage(Stage::Archive)?;
    let mut r = Reader { data: &data, pos: 0 };
    let header = r.line("header")?;
    if !header.starts_with(ARCHIVE_MAGIC) {
        return Err(Error::archive("header", "not a model archive")).stage(Stage::Archive);
    }
    serde_json::from_slice(r.section("manifest").stage(Stage::Archive)?)
        .map_err(|e| Error::archive("manifest", e.to_string()))
        .stage(Stage::Archive)
}
