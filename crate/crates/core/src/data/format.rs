//! Binary sample files.
//!
//! Little-endian layout:
//!
//! | bytes | field                                            |
//! |-------|--------------------------------------------------|
//! | 8     | magic `QWDPROF1`                                 |
//! | 4     | u32 version (1)                                  |
//! | 12    | u32 width, height, channels                      |
//! | 1     | u8 domain (0 momentum, 1 position)               |
//! | 1     | u8 dtype (0 = f32)                               |
//! | 2     | u16 reserved (0)                                 |
//! | 4     | i32 Chern label                                  |
//! | 56    | f64 m, t1x, t1y, t2, t3, eta, time               |
//! | 8     | u64 seed                                         |
//! | ...   | f32 payload, channel-planar, row-major           |

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::CouplingParams;
use crate::walk::{DensityProfile, Domain, ProfileMeta};

pub const SAMPLE_MAGIC: &[u8; 8] = b"QWDPROF1";
pub const SAMPLE_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 96;

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub profile: DensityProfile,
    pub chern: i32,
    pub params: CouplingParams,
    pub time: f64,
    pub seed: u64,
}

impl Sample {
    pub fn new(mut profile: DensityProfile, chern: i32, seed: u64) -> Self {
        profile.label = Some(chern);
        profile.meta.seed = seed;
        let (params, time) = (profile.meta.params, profile.meta.time);
        Sample {
            profile,
            chern,
            params,
            time,
            seed,
        }
    }
}

pub fn encode_sample(s: &Sample) -> Vec<u8> {
    let prof = &s.profile;
    let mut buf = Vec::with_capacity(HEADER_LEN + 4 * prof.data.len());
    buf.extend_from_slice(SAMPLE_MAGIC);
    buf.extend_from_slice(&SAMPLE_VERSION.to_le_bytes());
    for v in [prof.width, prof.height, prof.channels] {
        buf.extend_from_slice(&(v as u32).to_le_bytes());
    }
    buf.push(prof.domain.code());
    buf.push(0);
    buf.extend_from_slice(&0u16.to_le_bytes());
    buf.extend_from_slice(&s.chern.to_le_bytes());
    let p = &s.params;
    for v in [p.m, p.t1x, p.t1y, p.t2, p.t3, p.eta, s.time] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.extend_from_slice(&s.seed.to_le_bytes());
    debug_assert_eq!(buf.len(), HEADER_LEN);
    for v in &prof.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take<const N: usize>(&mut self) -> [u8; N] {
        let out: [u8; N] = self.bytes[self.pos..self.pos + N].try_into().unwrap();
        self.pos += N;
        out
    }
    fn u32(&mut self) -> u32 {
        u32::from_le_bytes(self.take())
    }
    fn f64(&mut self) -> f64 {
        f64::from_le_bytes(self.take())
    }
}

pub fn decode_sample(bytes: &[u8], context: &str) -> Result<Sample> {
    if bytes.len() < SAMPLE_MAGIC.len() || &bytes[..8] != SAMPLE_MAGIC {
        return Err(Error::BadMagic {
            context: context.to_string(),
        });
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::TruncatedFile {
            context: format!("{context}: {} bytes, header needs {HEADER_LEN}", bytes.len()),
        });
    }
    let mut r = Reader { bytes, pos: 8 };
    let version = r.u32();
    if version != SAMPLE_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: SAMPLE_VERSION,
        });
    }
    let width = r.u32() as usize;
    let height = r.u32() as usize;
    let channels = r.u32() as usize;
    let [domain_code] = r.take::<1>();
    let [dtype] = r.take::<1>();
    let _reserved = r.take::<2>();
    let domain = Domain::from_code(domain_code)
        .ok_or_else(|| Error::InvalidParameter(format!("{context}: unknown domain code {domain_code}")))?;
    if dtype != 0 {
        return Err(Error::InvalidParameter(format!("{context}: unknown dtype {dtype}")));
    }
    let chern = i32::from_le_bytes(r.take());
    let (m, t1x, t1y, t2, t3, eta, time) = (r.f64(), r.f64(), r.f64(), r.f64(), r.f64(), r.f64(), r.f64());
    let seed = u64::from_le_bytes(r.take());

    let count = width
        .checked_mul(height)
        .and_then(|v| v.checked_mul(channels))
        .ok_or_else(|| Error::TruncatedFile {
            context: format!("{context}: payload size overflows"),
        })?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() < 4 * count {
        return Err(Error::TruncatedFile {
            context: format!(
                "{context}: payload {} bytes, header declares {}",
                payload.len(),
                4 * count
            ),
        });
    }
    let data = payload[..4 * count]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let params = CouplingParams {
        m,
        t1x,
        t1y,
        t2,
        t3,
        eta,
    };
    Ok(Sample {
        profile: DensityProfile {
            domain,
            width,
            height,
            channels,
            data,
            label: Some(chern),
            meta: ProfileMeta { params, time, seed },
        },
        chern,
        params,
        time,
        seed,
    })
}

pub fn write_sample(s: &Sample, path: &Path) -> Result<()> {
    fs::write(path, encode_sample(s)).map_err(|e| Error::io(path, e))
}

pub fn read_sample(path: &Path) -> Result<Sample> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_sample(&bytes, &path.display().to_string())
}
