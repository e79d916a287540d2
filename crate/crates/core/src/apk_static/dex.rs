//! DEX container parsing: string, type, proto and method tables, and the
//! class-data walk that locates every method's code item.

use std::collections::HashMap;
use std::sync::Arc;

use thiserror::Error;

pub const HEADER_SIZE: usize = 0x70;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DexError {
    #[error("bad DEX magic")]
    BadMagic,
    #[error("truncated DEX file in {0}")]
    TruncatedFile(&'static str),
    #[error("{table} index {index} out of range")]
    IndexOutOfRange { table: &'static str, index: u64 },
    #[error("truncated ULEB128 at offset {0}")]
    TruncatedVarint(usize),
    #[error("ULEB128 longer than 5 bytes at offset {0}")]
    OverlongVarint(usize),
}

/// Decodes an unsigned LEB128 value (at most 5 bytes, 32-bit result).
pub fn read_uleb128(data: &[u8], offset: usize) -> Result<(u32, usize), DexError> {
    let mut value: u32 = 0;
    for i in 0..5 {
        let byte = *data
            .get(offset + i)
            .ok_or(DexError::TruncatedVarint(offset))?;
        if i == 4 && byte > 0x0f {
            // Continuation bit or bits beyond 32.
            return Err(DexError::OverlongVarint(offset));
        }
        value |= u32::from(byte & 0x7f) << (7 * i);
        if byte & 0x80 == 0 {
            return Ok((value, offset + i + 1));
        }
    }
    unreachable!("the fifth byte either terminates or is rejected")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MethodRef {
    /// Type descriptor, e.g. `Landroid/telephony/TelephonyManager;`.
    pub class: String,
    pub name: String,
    pub shorty: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeItem {
    pub method_index: u32,
    pub insns: Arc<[u16]>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DexFile {
    pub string_table: Vec<String>,
    pub method_refs: Vec<MethodRef>,
    /// In class-definition order, direct methods before virtual ones.
    pub code_items: Vec<CodeItem>,
}

struct Cursor<'a> {
    data: &'a [u8],
}

impl Cursor<'_> {
    fn u16(&self, off: usize, section: &'static str) -> Result<u16, DexError> {
        off.checked_add(2)
            .and_then(|e| self.data.get(off..e))
            .map(|b| u16::from_le_bytes([b[0], b[1]]))
            .ok_or(DexError::TruncatedFile(section))
    }

    fn u32(&self, off: usize, section: &'static str) -> Result<u32, DexError> {
        off.checked_add(4)
            .and_then(|e| self.data.get(off..e))
            .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .ok_or(DexError::TruncatedFile(section))
    }

    /// Checks that `count` records of `width` bytes fit at `off`.
    fn table(&self, off: u32, count: u32, width: usize, section: &'static str) -> Result<usize, DexError> {
        let start = off as usize;
        (count as usize)
            .checked_mul(width)
            .and_then(|n| n.checked_add(start))
            .filter(|&end| end <= self.data.len())
            .map(|_| start)
            .ok_or(DexError::TruncatedFile(section))
    }
}

fn check_index(index: u64, len: usize, table: &'static str) -> Result<usize, DexError> {
    if index < len as u64 {
        Ok(index as usize)
    } else {
        Err(DexError::IndexOutOfRange { table, index })
    }
}

pub fn is_dex_magic(data: &[u8]) -> bool {
    data.len() >= 8
        && &data[..4] == b"dex\n"
        && data[4..7].iter().all(u8::is_ascii_digit)
        && data[7] == 0
        && matches!(&data[4..7], b"035" | b"037" | b"038" | b"039")
}

pub fn parse_dex(data: &[u8]) -> Result<DexFile, DexError> {
    if data.len() < HEADER_SIZE {
        return Err(DexError::TruncatedFile("header"));
    }
    if !is_dex_magic(data) {
        return Err(DexError::BadMagic);
    }
    let c = Cursor { data };
    let h = |off| c.u32(off, "header");
    let (string_ids_size, string_ids_off) = (h(56)?, h(60)?);
    let (type_ids_size, type_ids_off) = (h(64)?, h(68)?);
    let (proto_ids_size, proto_ids_off) = (h(72)?, h(76)?);
    let (method_ids_size, method_ids_off) = (h(88)?, h(92)?);
    let (class_defs_size, class_defs_off) = (h(96)?, h(100)?);

    let base = c.table(string_ids_off, string_ids_size, 4, "string_ids")?;
    let mut string_table = Vec::with_capacity(string_ids_size as usize);
    for i in 0..string_ids_size as usize {
        let data_off = c.u32(base + i * 4, "string_ids")? as usize;
        string_table.push(read_string(data, data_off)?);
    }

    let base = c.table(type_ids_off, type_ids_size, 4, "type_ids")?;
    let mut types = Vec::with_capacity(type_ids_size as usize);
    for i in 0..type_ids_size as usize {
        let idx = c.u32(base + i * 4, "type_ids")?;
        types.push(check_index(idx.into(), string_table.len(), "string_ids")?);
    }

    let base = c.table(proto_ids_off, proto_ids_size, 12, "proto_ids")?;
    let mut shorties = Vec::with_capacity(proto_ids_size as usize);
    for i in 0..proto_ids_size as usize {
        let idx = c.u32(base + i * 12, "proto_ids")?;
        shorties.push(check_index(idx.into(), string_table.len(), "string_ids")?);
    }

    let base = c.table(method_ids_off, method_ids_size, 8, "method_ids")?;
    let mut method_refs = Vec::with_capacity(method_ids_size as usize);
    for i in 0..method_ids_size as usize {
        let at = base + i * 8;
        let class_idx = check_index(c.u16(at, "method_ids")?.into(), types.len(), "type_ids")?;
        let proto_idx = check_index(c.u16(at + 2, "method_ids")?.into(), shorties.len(), "proto_ids")?;
        let name_idx = check_index(c.u32(at + 4, "method_ids")?.into(), string_table.len(), "string_ids")?;
        method_refs.push(MethodRef {
            class: string_table[types[class_idx]].clone(),
            name: string_table[name_idx].clone(),
            shorty: string_table[shorties[proto_idx]].clone(),
        });
    }

    let base = c.table(class_defs_off, class_defs_size, 32, "class_defs")?;
    let mut code_items = Vec::new();
    let mut by_offset: HashMap<usize, Arc<[u16]>> = HashMap::new();
    for i in 0..class_defs_size as usize {
        let class_data_off = c.u32(base + i * 32 + 24, "class_defs")? as usize;
        if class_data_off == 0 {
            continue;
        }
        walk_class_data(&c, class_data_off, method_refs.len(), &mut by_offset, &mut code_items)?;
    }

    Ok(DexFile {
        string_table,
        method_refs,
        code_items,
    })
}

/// MUTF-8 string data item; decoded as UTF-8 (lossy).
fn read_string(data: &[u8], offset: usize) -> Result<String, DexError> {
    if offset >= data.len() {
        return Err(DexError::TruncatedFile("string_data"));
    }
    let (_utf16_len, start) = read_uleb128(data, offset)?;
    let len = data[start..]
        .iter()
        .position(|&b| b == 0)
        .ok_or(DexError::TruncatedFile("string_data"))?;
    Ok(String::from_utf8_lossy(&data[start..start + len]).into_owned())
}

fn walk_class_data(
    c: &Cursor<'_>,
    offset: usize,
    method_count: usize,
    by_offset: &mut HashMap<usize, Arc<[u16]>>,
    out: &mut Vec<CodeItem>,
) -> Result<(), DexError> {
    let data = c.data;
    let (static_fields, pos) = read_uleb128(data, offset)?;
    let (instance_fields, pos) = read_uleb128(data, pos)?;
    let (direct_methods, pos) = read_uleb128(data, pos)?;
    let (virtual_methods, mut pos) = read_uleb128(data, pos)?;

    for _ in 0..u64::from(static_fields) + u64::from(instance_fields) {
        let (_, p) = read_uleb128(data, pos)?;
        let (_, p) = read_uleb128(data, p)?;
        pos = p;
    }
    for count in [direct_methods, virtual_methods] {
        // Method indices are delta-encoded, restarting for each list.
        let mut method_idx: u64 = 0;
        for _ in 0..count {
            let (diff, p) = read_uleb128(data, pos)?;
            let (_access, p) = read_uleb128(data, p)?;
            let (code_off, p) = read_uleb128(data, p)?;
            pos = p;
            method_idx += u64::from(diff);
            let method_index = check_index(method_idx, method_count, "method_ids")? as u32;
            if code_off == 0 {
                continue;
            }
            let insns = match by_offset.get(&(code_off as usize)) {
                Some(shared) => shared.clone(),
                None => {
                    let insns = read_code_item(c, code_off as usize)?;
                    by_offset.insert(code_off as usize, insns.clone());
                    insns
                }
            };
            out.push(CodeItem { method_index, insns });
        }
    }
    Ok(())
}

fn read_code_item(c: &Cursor<'_>, offset: usize) -> Result<Arc<[u16]>, DexError> {
    let insns_size = c.u32(offset + 12, "code_item")? as usize;
    let start = offset + 16;
    let bytes = insns_size
        .checked_mul(2)
        .and_then(|n| n.checked_add(start))
        .and_then(|end| c.data.get(start..end))
        .ok_or(DexError::TruncatedFile("code_item"))?;
    Ok(bytes
        .chunks_exact(2)
        .map(|b| u16::from_le_bytes([b[0], b[1]]))
        .collect())
}
