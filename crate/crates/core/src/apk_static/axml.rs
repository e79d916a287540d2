//! Android binary XML (AXML) chunk decoder.
//!
//! Decodes just enough of the chunk stream to rebuild the element tree: the
//! string pool, the resource map (to name attributes whose pool string was
//! stripped), and start/end element chunks with typed attribute values.

use super::manifest::XmlEvent;
use super::StaticError;

pub const RES_XML_TYPE: u16 = 0x0003;
pub const RES_STRING_POOL_TYPE: u16 = 0x0001;
pub const RES_XML_RESOURCE_MAP_TYPE: u16 = 0x0180;
pub const RES_XML_START_NAMESPACE_TYPE: u16 = 0x0100;
pub const RES_XML_END_NAMESPACE_TYPE: u16 = 0x0101;
pub const RES_XML_START_ELEMENT_TYPE: u16 = 0x0102;
pub const RES_XML_END_ELEMENT_TYPE: u16 = 0x0103;

const UTF8_FLAG: u32 = 1 << 8;
const NO_INDEX: u32 = u32::MAX;

const TYPE_REFERENCE: u8 = 0x01;
const TYPE_STRING: u8 = 0x03;
const TYPE_FLOAT: u8 = 0x04;
const TYPE_INT_DEC: u8 = 0x10;
const TYPE_INT_HEX: u8 = 0x11;
const TYPE_INT_BOOLEAN: u8 = 0x12;

/// Framework attribute ids we need when the pool name is missing.
fn framework_attr_name(id: u32) -> Option<&'static str> {
    match id {
        0x0101_0003 => Some("name"),
        0x0101_021b => Some("versionCode"),
        0x0101_021c => Some("versionName"),
        _ => None,
    }
}

fn err(offset: usize, reason: impl Into<String>) -> StaticError {
    StaticError::MalformedAxml {
        offset,
        reason: reason.into(),
    }
}

struct Reader<'a> {
    data: &'a [u8],
}

impl Reader<'_> {
    fn u8(&self, off: usize) -> Result<u8, StaticError> {
        self.data.get(off).copied().ok_or_else(|| err(off, "unexpected end of data"))
    }

    fn u16(&self, off: usize) -> Result<u16, StaticError> {
        off.checked_add(2)
            .and_then(|end| self.data.get(off..end))
            .map(|b| u16::from_le_bytes([b[0], b[1]]))
            .ok_or_else(|| err(off, "unexpected end of data"))
    }

    fn u32(&self, off: usize) -> Result<u32, StaticError> {
        off.checked_add(4)
            .and_then(|end| self.data.get(off..end))
            .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .ok_or_else(|| err(off, "unexpected end of data"))
    }
}

struct StringPool {
    /// Absolute offset of each string.
    offsets: Vec<usize>,
    utf8: bool,
    /// Absolute end of the pool chunk; strings may not cross it.
    end: usize,
}

impl StringPool {
    fn parse(r: &Reader<'_>, pos: usize, header_size: usize, size: usize) -> Result<Self, StaticError> {
        if header_size < 28 {
            return Err(err(pos, "string pool header too small"));
        }
        let count = r.u32(pos + 8)? as usize;
        let flags = r.u32(pos + 16)?;
        let strings_start = r.u32(pos + 20)? as usize;
        let end = pos + size;
        let index_end = count
            .checked_mul(4)
            .and_then(|n| n.checked_add(pos + header_size))
            .filter(|&e| e <= end)
            .ok_or_else(|| err(pos, "string index overruns pool"))?;
        let base = pos
            .checked_add(strings_start)
            .filter(|&b| b <= end)
            .ok_or_else(|| err(pos, "string data offset overruns pool"))?;
        let mut offsets = Vec::with_capacity(count);
        for slot in (pos + header_size..index_end).step_by(4) {
            let rel = r.u32(slot)? as usize;
            let at = base
                .checked_add(rel)
                .filter(|&a| a < end)
                .ok_or_else(|| err(slot, "string offset overruns pool"))?;
            offsets.push(at);
        }
        Ok(StringPool {
            offsets,
            utf8: flags & UTF8_FLAG != 0,
            end,
        })
    }

    fn get(&self, r: &Reader<'_>, index: u32) -> Result<String, StaticError> {
        let at = *self
            .offsets
            .get(index as usize)
            .ok_or_else(|| err(0, format!("string index {index} out of range")))?;
        if self.utf8 {
            // UTF-16 length (skipped), then UTF-8 byte length.
            let (_, at) = self.len8(r, at)?;
            let (len, at) = self.len8(r, at)?;
            let bytes = self.slice(r, at, len)?;
            Ok(String::from_utf8_lossy(bytes).into_owned())
        } else {
            let first = r.u16(at)? as usize;
            let (len, at) = if first & 0x8000 != 0 {
                (((first & 0x7fff) << 16) | r.u16(at + 2)? as usize, at + 4)
            } else {
                (first, at + 2)
            };
            let bytes = self.slice(r, at, len.checked_mul(2).ok_or_else(|| err(at, "bad length"))?)?;
            let units: Vec<u16> = bytes
                .chunks_exact(2)
                .map(|c| u16::from_le_bytes([c[0], c[1]]))
                .collect();
            Ok(String::from_utf16_lossy(&units))
        }
    }

    fn len8(&self, r: &Reader<'_>, at: usize) -> Result<(usize, usize), StaticError> {
        let first = r.u8(at)? as usize;
        if first & 0x80 != 0 {
            Ok((((first & 0x7f) << 8) | r.u8(at + 1)? as usize, at + 2))
        } else {
            Ok((first, at + 1))
        }
    }

    fn slice<'a>(&self, r: &Reader<'a>, at: usize, len: usize) -> Result<&'a [u8], StaticError> {
        at.checked_add(len)
            .filter(|&e| e <= self.end)
            .and_then(|e| r.data.get(at..e))
            .ok_or_else(|| err(at, "string overruns pool"))
    }
}

pub fn is_axml(data: &[u8]) -> bool {
    data.len() >= 2 && u16::from_le_bytes([data[0], data[1]]) == RES_XML_TYPE
}

/// Decodes an AXML document into a flat start/end element stream.
pub fn decode(data: &[u8]) -> Result<Vec<XmlEvent>, StaticError> {
    let r = Reader { data };
    let doc_type = r.u16(0)?;
    if doc_type != RES_XML_TYPE {
        return Err(err(0, format!("not an XML chunk (type {doc_type:#06x})")));
    }
    let doc_header = r.u16(2)? as usize;
    let doc_size = r.u32(4)? as usize;
    if doc_header < 8 || doc_size > data.len() || doc_size < doc_header {
        return Err(err(0, "bad document chunk header"));
    }
    let end = doc_size;
    let mut pos = doc_header;
    let mut pool: Option<StringPool> = None;
    let mut resource_ids: Vec<u32> = Vec::new();
    let mut events = Vec::new();

    while pos < end {
        let ctype = r.u16(pos)?;
        let header_size = r.u16(pos + 2)? as usize;
        let size = r.u32(pos + 4)? as usize;
        if header_size < 8 || size < header_size || pos.checked_add(size).is_none_or(|e| e > end) {
            return Err(err(pos, "bad chunk header"));
        }
        match ctype {
            RES_STRING_POOL_TYPE => {
                pool = Some(StringPool::parse(&r, pos, header_size, size)?);
            }
            RES_XML_RESOURCE_MAP_TYPE => {
                resource_ids = (pos + header_size..pos + size - 3)
                    .step_by(4)
                    .map(|o| r.u32(o))
                    .collect::<Result<_, _>>()?;
            }
            RES_XML_START_ELEMENT_TYPE => {
                let pool = pool.as_ref().ok_or_else(|| err(pos, "element before string pool"))?;
                events.push(start_element(&r, pool, &resource_ids, pos, header_size, size)?);
            }
            RES_XML_END_ELEMENT_TYPE => {
                let pool = pool.as_ref().ok_or_else(|| err(pos, "element before string pool"))?;
                let name_idx = r.u32(pos + header_size + 4)?;
                let name = pool.get(&r, name_idx).map_err(|e| relocate(e, pos))?;
                events.push(XmlEvent::End { name });
            }
            // Namespaces, CDATA and unknown chunks carry nothing we extract.
            _ => {}
        }
        pos += size;
    }
    Ok(events)
}

fn relocate(e: StaticError, pos: usize) -> StaticError {
    match e {
        StaticError::MalformedAxml { offset: 0, reason } => StaticError::MalformedAxml { offset: pos, reason },
        other => other,
    }
}

fn start_element(
    r: &Reader<'_>,
    pool: &StringPool,
    resource_ids: &[u32],
    pos: usize,
    header_size: usize,
    size: usize,
) -> Result<XmlEvent, StaticError> {
    let chunk_end = pos + size;
    let line = r.u32(pos + 8)?;
    let ext = pos + header_size;
    let name_idx = r.u32(ext + 4)?;
    let attr_start = r.u16(ext + 8)? as usize;
    let attr_size = r.u16(ext + 10)? as usize;
    let attr_count = r.u16(ext + 12)? as usize;
    if attr_count > 0 && attr_size < 20 {
        return Err(err(pos, "attribute record too small"));
    }
    let attrs_end = attr_count
        .checked_mul(attr_size)
        .and_then(|n| n.checked_add(ext + attr_start))
        .filter(|&e| e <= chunk_end)
        .ok_or_else(|| err(pos, "attributes overrun element chunk"))?;
    let name = pool.get(r, name_idx).map_err(|e| relocate(e, pos))?;

    let mut attributes = Vec::with_capacity(attr_count);
    if attr_count > 0 {
        for at in (ext + attr_start..attrs_end).step_by(attr_size) {
            let attr_name_idx = r.u32(at + 4)?;
            let raw_value = r.u32(at + 8)?;
            let data_type = r.u8(at + 15)?;
            let data = r.u32(at + 16)?;
            let mut attr_name = pool.get(r, attr_name_idx).map_err(|e| relocate(e, at))?;
            if attr_name.is_empty() {
                if let Some(known) = resource_ids
                    .get(attr_name_idx as usize)
                    .and_then(|id| framework_attr_name(*id))
                {
                    attr_name = known.to_string();
                }
            }
            let value = if raw_value != NO_INDEX {
                pool.get(r, raw_value).map_err(|e| relocate(e, at))?
            } else {
                typed_value(r, pool, data_type, data).map_err(|e| relocate(e, at))?
            };
            attributes.push((attr_name, value));
        }
    }
    Ok(XmlEvent::Start {
        name,
        attributes,
        line,
    })
}

fn typed_value(r: &Reader<'_>, pool: &StringPool, data_type: u8, data: u32) -> Result<String, StaticError> {
    Ok(match data_type {
        TYPE_STRING => pool.get(r, data)?,
        TYPE_INT_DEC => (data as i32).to_string(),
        TYPE_INT_HEX => format!("0x{data:x}"),
        TYPE_INT_BOOLEAN => (data != 0).to_string(),
        TYPE_REFERENCE => format!("@0x{data:08x}"),
        TYPE_FLOAT => f32::from_bits(data).to_string(),
        _ => format!("0x{data:08x}"),
    })
}
