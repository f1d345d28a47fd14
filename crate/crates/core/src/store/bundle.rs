//! Binary model bundle.
//!
//! Layout (little-endian): the 8-byte magic, a `u32` format version, the
//! payload, and a trailing CRC32 over everything before it. The payload holds
//! the scheme, windowing, channel wiring, optional FRF model, optional LSTM
//! network with its standardization statistics, and provenance.

use std::path::Path;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::lstm::LstmNetwork;
use crate::pipeline::{HybridPredictor, Scheme, WindowingConfig};
use crate::signal::StandardizationStats;
use crate::spectral::FrfModel;

pub const BUNDLE_MAGIC: &[u8; 8] = b"HSYSIDB\x01";
pub const BUNDLE_VERSION: u32 = 1;

/// Where a model came from.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Provenance {
    pub seed: u64,
    /// SHA-256 of the run configuration text.
    pub config_hash: String,
    /// SHA-256 of the training manifest text.
    pub manifest_hash: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub predictor: HybridPredictor,
    pub provenance: Provenance,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn usize(&mut self, v: usize) {
        self.u64(v as u64);
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, v: &[f64]) {
        self.usize(v.len());
        v.iter().for_each(|x| self.f64(*x));
    }
    fn str(&mut self, s: &str) {
        self.usize(s.len());
        self.0.extend_from_slice(s.as_bytes());
    }
    fn strs(&mut self, v: &[String]) {
        self.usize(v.len());
        v.iter().for_each(|s| self.str(s));
    }
    fn stats(&mut self, s: &StandardizationStats) {
        self.strs(s.names());
        self.f64s(s.mean());
        self.f64s(s.std());
    }
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Corrupt(msg.into())
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.data.len())
            .ok_or_else(|| corrupt("unexpected end of payload"))?;
        let s = &self.data[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    /// A length field whose elements take at least `elem` bytes each.
    fn len(&mut self, elem: usize) -> Result<usize> {
        let n = self.u64()?;
        let remaining = (self.data.len() - self.pos) as u64;
        if n.checked_mul(elem.max(1) as u64).map_or(true, |b| b > remaining) {
            return Err(corrupt(format!("length field {n} exceeds the payload")));
        }
        Ok(n as usize)
    }
    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| corrupt("size field out of range"))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.len(8)?;
        (0..n).map(|_| self.f64()).collect()
    }
    fn str(&mut self) -> Result<String> {
        let n = self.len(1)?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| corrupt("invalid UTF-8 string"))
    }
    fn strs(&mut self) -> Result<Vec<String>> {
        let n = self.len(8)?;
        (0..n).map(|_| self.str()).collect()
    }
    fn stats(&mut self) -> Result<StandardizationStats> {
        let names = self.strs()?;
        let mean = self.f64s()?;
        let std = self.f64s()?;
        StandardizationStats::new(names, mean, std).map_err(|e| corrupt(e.to_string()))
    }
}

fn scheme_tag(s: Scheme) -> u8 {
    match s {
        Scheme::Frf => 0,
        Scheme::Pure => 1,
        Scheme::Hybrid1 => 2,
        Scheme::Hybrid2 => 3,
    }
}

/// Serializes a bundle to bytes.
pub fn encode_bundle(bundle: &ModelBundle) -> Vec<u8> {
    let p = &bundle.predictor;
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(BUNDLE_MAGIC);
    w.u32(BUNDLE_VERSION);
    w.u8(scheme_tag(p.scheme));
    w.usize(p.windowing.length);
    w.f64(p.windowing.overlap);
    w.u32(p.windowing.window_power);
    w.strs(&p.input_names);
    w.strs(&p.output_names);
    match &p.frf {
        None => w.u8(0),
        Some(f) => {
            w.u8(1);
            w.f64(f.sample_rate);
            w.f64(f.band_limit());
            w.usize(f.segment_length);
            w.usize(f.segment_count);
            w.strs(f.input_names());
            w.strs(f.output_names());
            w.f64s(f.frequencies());
            w.usize(f.response().len());
            for h in f.response() {
                w.f64(h.re);
                w.f64(h.im);
            }
        }
    }
    match &p.lstm {
        None => w.u8(0),
        Some(net) => {
            w.u8(1);
            w.usize(net.n_inputs());
            w.usize(net.n_outputs());
            w.usize(net.architecture().len());
            net.architecture().iter().for_each(|&c| w.usize(c));
            w.f64s(net.params());
            w.stats(net.input_stats());
            w.stats(net.output_stats());
        }
    }
    w.u64(bundle.provenance.seed);
    w.str(&bundle.provenance.config_hash);
    w.str(&bundle.provenance.manifest_hash);
    let crc = crc32fast::hash(&w.0);
    w.u32(crc);
    w.0
}

/// Parses and validates bundle bytes. Never returns a partial bundle.
pub fn decode_bundle(bytes: &[u8]) -> Result<ModelBundle> {
    if bytes.len() < BUNDLE_MAGIC.len() + 8 {
        return Err(corrupt(format!("{} bytes is too short for a bundle", bytes.len())));
    }
    if &bytes[..8] != BUNDLE_MAGIC {
        return Err(corrupt("not a model bundle (bad magic)"));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }
    let mut r = Reader { data: body, pos: 8 };
    let version = r.u32()?;
    if version != BUNDLE_VERSION {
        return Err(Error::Version(version));
    }
    let scheme = match r.u8()? {
        0 => Scheme::Frf,
        1 => Scheme::Pure,
        2 => Scheme::Hybrid1,
        3 => Scheme::Hybrid2,
        t => return Err(corrupt(format!("unknown scheme tag {t}"))),
    };
    let length = r.usize()?;
    let overlap = r.f64()?;
    let window_power = r.u32()?;
    let windowing = WindowingConfig::new(length, overlap, window_power).map_err(|e| corrupt(e.to_string()))?;
    let input_names = r.strs()?;
    let output_names = r.strs()?;
    let frf = match r.u8()? {
        0 => None,
        1 => {
            let sample_rate = r.f64()?;
            let band_limit = r.f64()?;
            let segment_length = r.usize()?;
            let segment_count = r.usize()?;
            let ins = r.strs()?;
            let outs = r.strs()?;
            let freqs = r.f64s()?;
            let n = r.len(16)?;
            let response = (0..n)
                .map(|_| Ok(Complex64::new(r.f64()?, r.f64()?)))
                .collect::<Result<Vec<_>>>()?;
            let mut model = FrfModel::new(freqs, response, ins, outs, band_limit, sample_rate)
                .map_err(|e| corrupt(e.to_string()))?;
            model.segment_length = segment_length;
            model.segment_count = segment_count;
            Some(model)
        }
        t => return Err(corrupt(format!("bad FRF flag {t}"))),
    };
    let lstm = match r.u8()? {
        0 => None,
        1 => {
            let n_in = r.usize()?;
            let n_out = r.usize()?;
            let blocks = r.len(8)?;
            let cells = (0..blocks).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
            let params = r.f64s()?;
            let in_stats = r.stats()?;
            let out_stats = r.stats()?;
            // Cheap plausibility check before allocating the network.
            let expected = cells
                .iter()
                .try_fold((n_in, 0usize), |(width, total), &h| {
                    let block = width.checked_add(h)?.checked_mul(h)?.checked_add(h)?.checked_mul(4)?;
                    Some((h, total.checked_add(block)?))
                })
                .and_then(|(last, total)| total.checked_add(n_out.checked_mul(last)?.checked_add(n_out)?));
            if expected != Some(params.len()) {
                return Err(corrupt(format!(
                    "{} parameters stored for architecture {cells:?}",
                    params.len()
                )));
            }
            Some(
                LstmNetwork::from_parts(n_in, n_out, &cells, params, in_stats, out_stats)
                    .map_err(|e| corrupt(e.to_string()))?,
            )
        }
        t => return Err(corrupt(format!("bad LSTM flag {t}"))),
    };
    let provenance = Provenance {
        seed: r.u64()?,
        config_hash: r.str()?,
        manifest_hash: r.str()?,
    };
    if r.pos != body.len() {
        return Err(corrupt(format!("{} trailing bytes", body.len() - r.pos)));
    }
    let predictor = HybridPredictor::new(scheme, frf, lstm, windowing, input_names, output_names)
        .map_err(|e| corrupt(e.to_string()))?;
    Ok(ModelBundle { predictor, provenance })
}

pub fn save_bundle(bundle: &ModelBundle, path: impl AsRef<Path>) -> Result<()> {
    super::write_atomic(path, &encode_bundle(bundle))
}

pub fn load_bundle(path: impl AsRef<Path>) -> Result<ModelBundle> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::from(e).in_file(path))?;
    decode_bundle(&bytes).map_err(|e| e.in_file(path))
}
