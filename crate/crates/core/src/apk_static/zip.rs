//! Minimal ZIP reader for APK containers: central directory walk, stored and
//! deflated entries, CRC-32 verification. No ZIP64, no encryption.

use std::collections::BTreeSet;
use std::io::Read;

use flate2::read::DeflateDecoder;
use serde::{Deserialize, Serialize};

use super::StaticError;

const EOCD_SIG: u32 = 0x0605_4b50;
const CDH_SIG: u32 = 0x0201_4b50;
const LFH_SIG: u32 = 0x0403_4b50;
const EOCD_LEN: usize = 22;
const CDH_LEN: usize = 46;
const LFH_LEN: usize = 30;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApkEntry {
    pub path: String,
    /// Uncompressed size in bytes.
    pub size: u64,
    pub crc32: u32,
    pub data: Vec<u8>,
}

/// Presence of the standard APK partitions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WellKnown {
    pub android_manifest: bool,
    pub classes_dex: bool,
    pub resources_arsc: bool,
    pub res_dir: bool,
    pub assets_dir: bool,
    pub lib_dir: bool,
    pub meta_inf_dir: bool,
}

impl WellKnown {
    fn observe(&mut self, path: &str) {
        match path {
            "AndroidManifest.xml" => self.android_manifest = true,
            "classes.dex" => self.classes_dex = true,
            "resources.arsc" => self.resources_arsc = true,
            _ => {}
        }
        self.res_dir |= path.starts_with("res/");
        self.assets_dir |= path.starts_with("assets/");
        self.lib_dir |= path.starts_with("lib/");
        self.meta_inf_dir |= path.starts_with("META-INF/");
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApkContainer {
    pub entries: Vec<ApkEntry>,
    pub well_known: WellKnown,
}

impl ApkContainer {
    pub fn get(&self, path: &str) -> Option<&ApkEntry> {
        self.entries.iter().find(|e| e.path == path)
    }

    /// `classes.dex`, `classes2.dex`, `classes3.dex`, ... in load order.
    pub fn dex_entries(&self) -> Vec<&ApkEntry> {
        let mut dex: Vec<(u32, &ApkEntry)> = self
            .entries
            .iter()
            .filter_map(|e| {
                let middle = e.path.strip_prefix("classes")?.strip_suffix(".dex")?;
                if middle.is_empty() {
                    Some((1, e))
                } else {
                    middle
                        .parse::<u32>()
                        .ok()
                        .filter(|n| *n >= 2 && !middle.starts_with('0'))
                        .map(|n| (n, e))
                }
            })
            .collect();
        dex.sort_by_key(|(n, _)| *n);
        dex.into_iter().map(|(_, e)| e).collect()
    }
}

fn u16_at(data: &[u8], off: usize) -> Option<u16> {
    data.get(off..off.checked_add(2)?)
        .map(|b| u16::from_le_bytes([b[0], b[1]]))
}

fn u32_at(data: &[u8], off: usize) -> Option<u32> {
    data.get(off..off.checked_add(4)?)
        .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
}

fn malformed(msg: impl Into<String>) -> StaticError {
    StaticError::MalformedZip(msg.into())
}

fn find_eocd(data: &[u8]) -> Option<usize> {
    if data.len() < EOCD_LEN {
        return None;
    }
    let last = data.len() - EOCD_LEN;
    let first = last.saturating_sub(u16::MAX as usize);
    (first..=last).rev().find(|&pos| {
        u32_at(data, pos) == Some(EOCD_SIG)
            && u16_at(data, pos + 20).is_some_and(|c| pos + EOCD_LEN + c as usize <= data.len())
    })
}

/// Reads every central-directory entry and decompresses it.
pub fn open_apk(data: &[u8]) -> Result<ApkContainer, StaticError> {
    let eocd = find_eocd(data).ok_or(StaticError::NotAZip)?;
    let total = u16_at(data, eocd + 10).ok_or(StaticError::NotAZip)? as usize;
    let cd_size = u32_at(data, eocd + 12).ok_or(StaticError::NotAZip)?;
    let cd_offset = u32_at(data, eocd + 16).ok_or(StaticError::NotAZip)?;
    if cd_size == u32::MAX || cd_offset == u32::MAX || total == u16::MAX as usize {
        return Err(malformed("ZIP64 archives are not supported"));
    }
    let cd_start = cd_offset as usize;
    let cd_end = cd_start
        .checked_add(cd_size as usize)
        .filter(|&end| end <= eocd)
        .ok_or(StaticError::NotAZip)?;

    let mut entries = Vec::with_capacity(total.min(4096));
    let mut well_known = WellKnown::default();
    let mut seen = BTreeSet::new();
    let mut pos = cd_start;
    for _ in 0..total {
        if pos + CDH_LEN > cd_end || u32_at(data, pos) != Some(CDH_SIG) {
            return Err(malformed(format!("bad central directory header at {pos}")));
        }
        let flags = u16_at(data, pos + 8).unwrap_or_default();
        let method = u16_at(data, pos + 10).unwrap_or_default();
        let crc32 = u32_at(data, pos + 16).unwrap_or_default();
        let csize = u32_at(data, pos + 20).unwrap_or_default() as usize;
        let usize_ = u32_at(data, pos + 24).unwrap_or_default() as usize;
        let name_len = u16_at(data, pos + 28).unwrap_or_default() as usize;
        let extra_len = u16_at(data, pos + 30).unwrap_or_default() as usize;
        let comment_len = u16_at(data, pos + 32).unwrap_or_default() as usize;
        let local_off = u32_at(data, pos + 42).unwrap_or_default() as usize;
        let name_end = pos + CDH_LEN + name_len;
        if name_end > cd_end {
            return Err(malformed(format!("entry name overruns central directory at {pos}")));
        }
        let path = String::from_utf8_lossy(&data[pos + CDH_LEN..name_end]).into_owned();
        pos = name_end + extra_len + comment_len;

        if !seen.insert(path.clone()) {
            return Err(malformed(format!("duplicate entry {path:?}")));
        }
        if flags & 1 != 0 {
            return Err(malformed(format!("encrypted entry {path:?}")));
        }
        if method != 0 && method != 8 {
            return Err(StaticError::UnsupportedCompression(method));
        }

        if u32_at(data, local_off) != Some(LFH_SIG) {
            return Err(malformed(format!("bad local header for {path:?}")));
        }
        let lname = u16_at(data, local_off + 26).unwrap_or_default() as usize;
        let lextra = u16_at(data, local_off + 28).unwrap_or_default() as usize;
        let body_start = local_off + LFH_LEN + lname + lextra;
        let raw = body_start
            .checked_add(csize)
            .and_then(|end| data.get(body_start..end))
            .ok_or_else(|| malformed(format!("entry data for {path:?} is truncated")))?;

        let contents = match method {
            0 => raw.to_vec(),
            _ => inflate(raw, usize_).map_err(|m| malformed(format!("{path:?}: {m}")))?,
        };
        if contents.len() != usize_ {
            return Err(malformed(format!(
                "{path:?}: expected {usize_} bytes, got {}",
                contents.len()
            )));
        }
        if crc32fast::hash(&contents) != crc32 {
            return Err(StaticError::CrcMismatch(path));
        }
        well_known.observe(&path);
        entries.push(ApkEntry {
            path,
            size: usize_ as u64,
            crc32,
            data: contents,
        });
    }
    Ok(ApkContainer {
        entries,
        well_known,
    })
}

fn inflate(raw: &[u8], expected: usize) -> Result<Vec<u8>, String> {
    // Cap output one byte past the declared size so oversize streams are
    // detected without unbounded allocation.
    let mut out = Vec::with_capacity(expected.min(1 << 20));
    DeflateDecoder::new(raw)
        .take(expected as u64 + 1)
        .read_to_end(&mut out)
        .map_err(|e| e.to_string())?;
    Ok(out)
}
