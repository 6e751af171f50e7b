//! File formats: RTF tensor containers, 16-bit PGM images, CSV tables and
//! JSON run configs.
//!
//! RTF layout (all integers little-endian):
//!
//! ```text
//! "RTEN" | version u16 = 1 | count u32
//! per entry: name_len u16 | name utf-8 | dtype u8 (1 = f64) | ndim u8 | dims u32 * ndim | data
//! ```

use crate::error::{Error, Result};
use crate::image::Spacing;
use crate::model::{ModelConfig, ResolutionInvariantAe};
use crate::pipeline::{ClassifierConfig, TrainConfig};
use crate::data::SyntheticConfig;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::uncertainty::{GammaTable, DEFAULT_GAMMA_FACTORS, DEFAULT_GAMMA_SAMPLES, DEFAULT_MC_DRAWS};
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::path::Path;

pub const RTF_MAGIC: &[u8; 4] = b"RTEN";
pub const RTF_VERSION: u16 = 1;
const DTYPE_F64: u8 = 1;
pub const PGM_MAXVAL: u32 = 65535;

fn format_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Format {
        offset: offset as u64,
        message: message.into(),
    }
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    write_bytes(path, text.as_bytes())
}

pub fn read_text(path: &Path) -> Result<String> {
    String::from_utf8(read_bytes(path)?).map_err(|e| format_err(e.utf8_error().valid_up_to(), "invalid UTF-8"))
}

pub fn encode_rtf(entries: &[(String, Tensor<f64>)]) -> Result<Vec<u8>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    out.extend_from_slice(RTF_MAGIC);
    out.extend_from_slice(&RTF_VERSION.to_le_bytes());
    let count = u32::try_from(entries.len()).map_err(|_| Error::Contract("too many RTF entries".into()))?;
    out.extend_from_slice(&count.to_le_bytes());
    for (name, t) in entries {
        if !seen.insert(name.as_str()) {
            return Err(Error::Contract(format!("duplicate RTF entry name {name:?}")));
        }
        let name_len = u16::try_from(name.len()).map_err(|_| Error::Contract(format!("RTF name too long: {name:?}")))?;
        let ndim = u8::try_from(t.shape().len()).map_err(|_| Error::Contract("RTF tensors have at most 255 dims".into()))?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(DTYPE_F64);
        out.push(ndim);
        for &d in t.shape() {
            let d = u32::try_from(d).map_err(|_| Error::Contract(format!("dimension {d} exceeds u32")))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| format_err(self.pos, format!("truncated {what}: need {n} bytes")))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn decode_rtf(bytes: &[u8]) -> Result<Vec<(String, Tensor<f64>)>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != RTF_MAGIC {
        return Err(format_err(0, "bad magic, expected RTEN"));
    }
    let version = r.u16("version")?;
    if version != RTF_VERSION {
        return Err(format_err(4, format!("unsupported version {version}")));
    }
    let count = r.u32("entry count")?;
    let mut names = HashSet::new();
    let mut out = Vec::new();
    for _ in 0..count {
        let at = r.pos;
        let len = r.u16("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| format_err(at + 2, "entry name is not UTF-8"))?
            .to_string();
        if !names.insert(name.clone()) {
            return Err(format_err(at, format!("duplicate entry {name:?}")));
        }
        let dtype_at = r.pos;
        let dtype = r.u8("dtype")?;
        if dtype != DTYPE_F64 {
            return Err(format_err(dtype_at, format!("unknown dtype code {dtype}")));
        }
        let ndim = r.u8("ndim")? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u32("dims")? as usize);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .filter(|n| n.checked_mul(8).is_some())
            .ok_or_else(|| format_err(dtype_at, "tensor size overflows"))?;
        let data_at = r.pos;
        let raw = r.take(numel * 8, "tensor data")?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| format_err(data_at, e.to_string()))?;
        out.push((name, t));
    }
    if r.pos != bytes.len() {
        return Err(format_err(r.pos, format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(out)
}

pub fn write_rtf(path: &Path, entries: &[(String, Tensor<f64>)]) -> Result<()> {
    write_bytes(path, &encode_rtf(entries)?)
}

pub fn read_rtf(path: &Path) -> Result<Vec<(String, Tensor<f64>)>> {
    decode_rtf(&read_bytes(path)?)
}

/// `[H, W]` or `[1, 1, H, W]` image as a 16-bit binary PGM, mapping
/// `range.0..=range.1` linearly onto `0..=65535` (values outside are clipped).
pub fn encode_pgm<T: Scalar>(image: &Tensor<T>, range: (f64, f64)) -> Result<Vec<u8>> {
    let (h, w) = match *image.shape() {
        [h, w] | [1, 1, h, w] => (h, w),
        ref s => return Err(Error::Contract(format!("PGM needs an [H, W] or [1, 1, H, W] image, got {s:?}"))),
    };
    let (lo, hi) = range;
    if !(hi > lo && lo.is_finite() && hi.is_finite()) {
        return Err(Error::Contract(format!("PGM range must be increasing, got {range:?}")));
    }
    image.check_finite("PGM image")?;
    let mut out = format!("P5\n{w} {h}\n{PGM_MAXVAL}\n").into_bytes();
    let scale = PGM_MAXVAL as f64 / (hi - lo);
    for &v in image.data() {
        let q = ((v.as_f64() - lo) * scale).round().clamp(0.0, PGM_MAXVAL as f64) as u16;
        out.extend_from_slice(&q.to_be_bytes());
    }
    Ok(out)
}

/// Inverse of [`encode_pgm`]; returns an `[H, W]` tensor. Accepts any maxval
/// and `#` comments in the header.
pub fn decode_pgm(bytes: &[u8], range: (f64, f64)) -> Result<Tensor<f64>> {
    let mut pos = 0;
    let mut token = |what: &str| -> Result<(usize, String)> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() && bytes[pos] != b'#' {
            pos += 1;
        }
        if start == pos {
            return Err(format_err(start, format!("missing {what}")));
        }
        Ok((start, String::from_utf8_lossy(&bytes[start..pos]).into_owned()))
    };
    let (_, magic) = token("magic")?;
    if magic != "P5" {
        return Err(format_err(0, format!("expected P5, got {magic:?}")));
    }
    let mut number = |what: &str| -> Result<usize> {
        let (at, t) = token(what)?;
        t.parse::<usize>()
            .ok()
            .filter(|&v| v > 0)
            .ok_or_else(|| format_err(at, format!("bad {what} {t:?}")))
    };
    let w = number("width")?;
    let h = number("height")?;
    let maxval = number("maxval")?;
    if maxval > 65535 {
        return Err(format_err(0, format!("maxval {maxval} exceeds 65535")));
    }
    // exactly one whitespace byte separates the header from the raster
    let body = pos + 1;
    let bpp = if maxval > 255 { 2 } else { 1 };
    let need = w * h * bpp;
    if bytes.len() < body + need {
        return Err(format_err(bytes.len(), format!("raster truncated: need {need} bytes")));
    }
    let (lo, hi) = range;
    let step = (hi - lo) / maxval as f64;
    let data = bytes[body..body + need]
        .chunks_exact(bpp)
        .map(|c| {
            let q = if bpp == 2 { u16::from_be_bytes([c[0], c[1]]) } else { c[0] as u16 };
            lo + q as f64 * step
        })
        .collect();
    Tensor::new(vec![h, w], data)
}

pub fn write_pgm<T: Scalar>(path: &Path, image: &Tensor<T>, range: (f64, f64)) -> Result<()> {
    write_bytes(path, &encode_pgm(image, range)?)
}

pub fn read_pgm(path: &Path, range: (f64, f64)) -> Result<Tensor<f64>> {
    decode_pgm(&read_bytes(path)?, range)
}

/// Reads a `factor,gamma` table written by [`GammaTable::to_csv`].
pub fn parse_gamma_csv(text: &str, reference_res: Spacing, n_samples_used: usize) -> Result<GammaTable> {
    let mut lines = text.lines();
    let mut offset = 0;
    match lines.next() {
        Some(h) if h.trim() == "factor,gamma" => offset += h.len() + 1,
        _ => return Err(format_err(0, "expected header factor,gamma")),
    }
    let mut entries = Vec::new();
    for line in lines {
        if !line.trim().is_empty() {
            let parsed = line
                .split_once(',')
                .and_then(|(f, g)| Some((f.trim().parse::<f64>().ok()?, g.trim().parse::<f64>().ok()?)));
            entries.push(parsed.ok_or_else(|| format_err(offset, format!("bad row {line:?}")))?);
        }
        offset += line.len() + 1;
    }
    GammaTable::new(entries, n_samples_used, reference_res)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GammaConfig {
    pub factors: Vec<f64>,
    pub samples: usize,
}

impl Default for GammaConfig {
    fn default() -> Self {
        Self {
            factors: DEFAULT_GAMMA_FACTORS.to_vec(),
            samples: DEFAULT_GAMMA_SAMPLES,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub factors: Vec<f64>,
    pub draws: usize,
    pub n_test: usize,
    /// Generator seed of the held-out split.
    pub test_seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            factors: vec![1.0, 1.5, 2.0, 3.0, 4.0],
            draws: DEFAULT_MC_DRAWS,
            n_test: 20,
            test_seed: 1,
        }
    }
}

/// Everything a command needs besides its explicit flags.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: SyntheticConfig,
    /// Images in the training corpus.
    pub n_train: usize,
    pub gamma: GammaConfig,
    pub eval: EvalConfig,
    pub classifier: ClassifierConfig,
    /// Factor between the two classifier resolutions.
    pub classifier_lr_factor: f64,
    pub checkpoint: Option<String>,
    pub gamma_table: Option<String>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&read_text(path)?).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    pub fn validate(&self) -> Result<()> {
        let wrap = |e: Error| Error::Config(e.to_string());
        self.model.validate().map_err(wrap)?;
        self.train.validate().map_err(wrap)?;
        if self.n_train == 0 || self.eval.n_test == 0 || self.gamma.samples == 0 {
            return Err(Error::Config("n_train, eval.n_test and gamma.samples must be positive".into()));
        }
        if self.eval.draws < 2 {
            return Err(Error::Config("eval.draws must be at least 2".into()));
        }
        let reference = self.model.reference_size();
        if (self.data.size, self.data.size) != reference {
            return Err(Error::Config(format!(
                "data.size {} does not match the model reference grid {reference:?}",
                self.data.size
            )));
        }
        if !(self.classifier_lr_factor >= 1.0) {
            return Err(Error::Config("classifier_lr_factor must be >= 1".into()));
        }
        Ok(())
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::desk(),
            train: TrainConfig {
                lr: 3e-3,
                ..TrainConfig::default()
            },
            data: SyntheticConfig::default(),
            n_train: 200,
            gamma: GammaConfig::default(),
            eval: EvalConfig::default(),
            classifier: ClassifierConfig::default(),
            classifier_lr_factor: 2.0,
            checkpoint: None,
            gamma_table: None,
        }
    }
}

pub fn checkpoint_entries<T: Scalar>(model: &ResolutionInvariantAe<T>) -> Vec<(String, Tensor<f64>)> {
    model
        .params
        .iter()
        .map(|(n, t)| (n.to_string(), t.cast()))
        .collect()
}

pub fn save_checkpoint<T: Scalar>(path: &Path, model: &ResolutionInvariantAe<T>) -> Result<()> {
    write_rtf(path, &checkpoint_entries(model))
}

/// Builds a model for `config` and overwrites every parameter from `path`.
pub fn load_checkpoint<T: Scalar>(path: &Path, config: ModelConfig) -> Result<ResolutionInvariantAe<T>> {
    let entries = read_rtf(path)?;
    let mut model = ResolutionInvariantAe::new(config, 0)?;
    model
        .params
        .load(entries.iter().map(|(n, t)| (n.as_str(), t.cast())))?;
    Ok(model)
}
