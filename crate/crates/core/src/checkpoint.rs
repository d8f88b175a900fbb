//! Versioned binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "SWRN" | u32 version | u32 len + model config JSON
//! | u64 len + f32 parameter payload (per layer: weights, then bias)
//! | u8 quant flag [ | u64 len + quant section ]
//! | u32 CRC-32 of every preceding byte
//! ```
//!
//! The quant section holds, per layer, `f32 weight_scale, f32 input_scale,
//! i8 weights, i32 bias`, followed by the activation-site table
//! `u32 count, (u16 len + name, f32 scale)*`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{ModelConfig, Parameters};
use crate::ops::ConvKernel;
use crate::quant::{QuantLayer, QuantModel};

pub const MAGIC: &[u8; 4] = b"SWRN";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: Parameters<f32>,
    pub quant: Option<QuantModel>,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| corrupt(format!("truncated while reading {what}")))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        Ok(self.take(N, what)?.try_into().expect("length checked"))
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.array::<1>(what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array(what)?))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array(what)?))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array(what)?))
    }

    fn f32(&mut self, what: &str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.array(what)?))
    }

    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let raw = self.take(n * 4, what)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")))
            .collect())
    }

    fn done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

fn encode_quant(q: &QuantModel) -> Vec<u8> {
    let mut out = Vec::new();
    for l in &q.layers {
        out.extend_from_slice(&l.weight_scale.to_le_bytes());
        out.extend_from_slice(&l.input_scale.to_le_bytes());
        out.extend(l.weights.iter().map(|&v| v as u8));
        for b in &l.bias {
            out.extend_from_slice(&b.to_le_bytes());
        }
    }
    out.extend_from_slice(&(q.sites.len() as u32).to_le_bytes());
    for (name, scale) in &q.sites {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&scale.to_le_bytes());
    }
    out
}

fn decode_quant(config: &ModelConfig, buf: &[u8]) -> Result<QuantModel> {
    let mut r = Reader { buf, pos: 0 };
    let mut layers = Vec::new();
    for spec in config.layer_specs() {
        let weight_scale = r.f32("weight scale")?;
        let input_scale = r.f32("input scale")?;
        let n = spec.out_channels * spec.in_channels * 9;
        let weights: Vec<i8> = r.take(n, "int8 weights")?.iter().map(|&b| b as i8).collect();
        if weights.contains(&i8::MIN) {
            return Err(corrupt(format!("layer {} holds -128", spec.name())));
        }
        let bias = (0..spec.out_channels)
            .map(|_| r.array::<4>("int32 bias").map(i32::from_le_bytes))
            .collect::<Result<Vec<_>>>()?;
        if !(weight_scale > 0.0 && input_scale > 0.0) {
            return Err(corrupt(format!("layer {} has a non-positive scale", spec.name())));
        }
        layers.push(QuantLayer {
            spec,
            weights,
            weight_scale,
            bias,
            input_scale,
        });
    }
    let count = r.u32("site count")?;
    let mut sites = BTreeMap::new();
    for _ in 0..count {
        let len = r.u16("site name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "site name")?)
            .map_err(|_| corrupt("site name is not UTF-8"))?
            .to_string();
        let scale = r.f32("site scale")?;
        if !(scale > 0.0) {
            return Err(corrupt(format!("site {name} has a non-positive scale")));
        }
        sites.insert(name, scale);
    }
    if !r.done() {
        return Err(corrupt("trailing bytes in quant section"));
    }
    Ok(QuantModel {
        config: config.clone(),
        layers,
        sites,
    })
}

impl Checkpoint {
    pub fn new(params: Parameters<f32>) -> Self {
        Checkpoint { params, quant: None }
    }

    pub fn with_quant(params: Parameters<f32>, quant: QuantModel) -> Result<Self> {
        if &quant.config != params.config() {
            return Err(Error::Config("quantized model config differs from parameters".into()));
        }
        Ok(Checkpoint {
            params,
            quant: Some(quant),
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let json = serde_json::to_vec(self.params.config())?;
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        let payload_len = self.params.param_count() * 4;
        out.extend_from_slice(&(payload_len as u64).to_le_bytes());
        for s in self.params.slices() {
            for v in s {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        match &self.quant {
            None => out.push(0),
            Some(q) => {
                out.push(1);
                let section = encode_quant(q);
                out.extend_from_slice(&(section.len() as u64).to_le_bytes());
                out.extend_from_slice(&section);
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 8 {
            return Err(corrupt("file too short"));
        }
        if &bytes[..4] != MAGIC {
            return Err(corrupt("bad magic, not a checkpoint"));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        let actual = crc32fast::hash(body);
        if stored != actual {
            return Err(corrupt(format!("CRC mismatch: stored {stored:08x}, computed {actual:08x}")));
        }
        let mut r = Reader { buf: body, pos: 4 };
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(corrupt(format!("unsupported version {version}")));
        }
        let json_len = r.u32("config length")? as usize;
        let config: ModelConfig = serde_json::from_slice(r.take(json_len, "config")?)?;
        config.validate()?;
        let payload_len = r.u64("payload length")?;
        let expected = config.param_count() as u64 * 4;
        if payload_len != expected {
            return Err(corrupt(format!(
                "payload is {payload_len} bytes but the config implies {expected}"
            )));
        }
        let mut layers = Vec::new();
        for spec in config.layer_specs() {
            let w = r.f32s(spec.out_channels * spec.in_channels * 9, "weights")?;
            let b = r.f32s(spec.out_channels, "bias")?;
            layers.push(ConvKernel::from_parts(spec.out_channels, spec.in_channels, w, b)?);
        }
        let params = Parameters::from_layers(&config, layers)?;
        let quant = match r.u8("quant flag")? {
            0 => None,
            1 => {
                let len = r.u64("quant section length")? as usize;
                Some(decode_quant(&config, r.take(len, "quant section")?)?)
            }
            f => return Err(corrupt(format!("bad quant flag {f}"))),
        };
        if !r.done() {
            return Err(corrupt("trailing bytes before CRC"));
        }
        Ok(Checkpoint { params, quant })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Checkpoint::from_bytes(&fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_clip, ClipPair, SynthKind};
    use crate::model::{init_params, Variant};
    use crate::quant::{calibrate, quantize_model};

    fn quantized(cfg: &ModelConfig) -> Checkpoint {
        let p = init_params(cfg, 7).unwrap();
        let hr = synth_clip(SynthKind::ScrollingText, 2, 16, 1).unwrap();
        let lr = ClipPair::from_hr(hr).unwrap().lr;
        let q = quantize_model(&p, &calibrate(&p, &[lr]).unwrap()).unwrap();
        Checkpoint::with_quant(p, q).unwrap()
    }

    #[test]
    fn roundtrip_float_and_quant() {
        for v in Variant::ALL {
            let cfg = ModelConfig::with_channels(3).with_variant(v);
            let plain = Checkpoint::new(init_params(&cfg, 1).unwrap());
            let bytes = plain.to_bytes().unwrap();
            assert_eq!(Checkpoint::from_bytes(&bytes).unwrap(), plain);
            let q = quantized(&cfg);
            let bytes = q.to_bytes().unwrap();
            let back = Checkpoint::from_bytes(&bytes).unwrap();
            assert_eq!(back, q);
            assert_eq!(back.to_bytes().unwrap(), bytes);
        }
    }

    #[test]
    fn header_layout() {
        let cfg = ModelConfig::with_channels(2);
        let ck = Checkpoint::new(Parameters::zeros(&cfg).unwrap());
        let b = ck.to_bytes().unwrap();
        assert_eq!(&b[..4], b"SWRN");
        assert_eq!(u32::from_le_bytes(b[4..8].try_into().unwrap()), 1);
        let json_len = u32::from_le_bytes(b[8..12].try_into().unwrap()) as usize;
        let cfg_back: ModelConfig = serde_json::from_slice(&b[12..12 + json_len]).unwrap();
        assert_eq!(cfg_back, cfg);
        let p = 12 + json_len;
        let payload = u64::from_le_bytes(b[p..p + 8].try_into().unwrap());
        assert_eq!(payload, cfg.param_count() as u64 * 4);
        assert_eq!(b.len(), p + 8 + payload as usize + 1 + 4);
    }

    #[test]
    fn every_flipped_byte_is_detected() {
        let cfg = ModelConfig::with_channels(1);
        let bytes = quantized(&cfg).to_bytes().unwrap();
        for i in 0..bytes.len() {
            let mut bad = bytes.clone();
            bad[i] ^= 0x10;
            assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Checkpoint(_))), "byte {i}");
        }
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn payload_length_must_match_config() {
        let cfg = ModelConfig::with_channels(2);
        let mut b = Checkpoint::new(Parameters::zeros(&cfg).unwrap()).to_bytes().unwrap();
        b.truncate(b.len() - 4);
        let json_len = u32::from_le_bytes(b[8..12].try_into().unwrap()) as usize;
        let p = 12 + json_len;
        b[p..p + 8].copy_from_slice(&8u64.to_le_bytes());
        let crc = crc32fast::hash(&b);
        b.extend_from_slice(&crc.to_le_bytes());
        match Checkpoint::from_bytes(&b) {
            Err(Error::Checkpoint(m)) => assert!(m.contains("implies"), "{m}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn file_roundtrip_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let ck = quantized(&ModelConfig::with_channels(2));
        let (a, b) = (dir.path().join("a.swrn"), dir.path().join("b.swrn"));
        ck.save(&a).unwrap();
        Checkpoint::load(&a).unwrap().save(&b).unwrap();
        assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    }
}
