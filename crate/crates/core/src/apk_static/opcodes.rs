//! Width-only Dalvik instruction decoding.

use thiserror::Error;

use super::dex::DexFile;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum OpcodeError {
    #[error("unknown opcode {value:#04x} at code unit {offset} of method {method_index}")]
    UnknownOpcode {
        value: u8,
        offset: usize,
        method_index: u32,
    },
    #[error("instruction at code unit {offset} of method {method_index} overruns insns_size")]
    TruncatedInstruction { offset: usize, method_index: u32 },
}

const PACKED_SWITCH_PAYLOAD: u16 = 0x0100;
const SPARSE_SWITCH_PAYLOAD: u16 = 0x0200;
const FILL_ARRAY_DATA_PAYLOAD: u16 = 0x0300;

/// Instruction width in code units; 0 marks an unassigned opcode.
const fn build_widths() -> [u8; 256] {
    let mut w = [0u8; 256];
    let mut op = 0;
    while op < 256 {
        w[op] = match op as u8 {
            0x00 => 1,
            0x01 => 1,
            0x02 => 2,
            0x03 => 3,
            0x04 => 1,
            0x05 => 2,
            0x06 => 3,
            0x07 => 1,
            0x08 => 2,
            0x09 => 3,
            0x0a..=0x12 => 1,
            0x13 => 2,
            0x14 => 3,
            0x15 | 0x16 => 2,
            0x17 => 3,
            0x18 => 5,
            0x19 | 0x1a => 2,
            0x1b => 3,
            0x1c => 2,
            0x1d | 0x1e => 1,
            0x1f | 0x20 => 2,
            0x21 => 1,
            0x22 | 0x23 => 2,
            0x24..=0x26 => 3,
            0x27 | 0x28 => 1,
            0x29 => 2,
            0x2a..=0x2c => 3,
            0x2d..=0x3d => 2,
            0x3e..=0x43 => 0,
            0x44..=0x6d => 2,
            0x6e..=0x72 => 3,
            0x73 => 0,
            0x74..=0x78 => 3,
            0x79 | 0x7a => 0,
            0x7b..=0x8f => 1,
            0x90..=0xaf => 2,
            0xb0..=0xcf => 1,
            0xd0..=0xe2 => 2,
            0xe3..=0xf9 => 0,
            0xfa | 0xfb => 4,
            0xfc | 0xfd => 3,
            0xfe | 0xff => 2,
        };
        op += 1;
    }
    w
}

pub const OPCODE_WIDTHS: [u8; 256] = build_widths();

/// Opcode stream of one DEX file plus its 256-bin histogram.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OpcodeTrace {
    pub opcodes: Vec<u8>,
    pub histogram: Vec<u64>,
}

impl Default for OpcodeTrace {
    fn default() -> Self {
        OpcodeTrace {
            opcodes: Vec::new(),
            histogram: vec![0; 256],
        }
    }
}

impl OpcodeTrace {
    pub fn extend(&mut self, other: &OpcodeTrace) {
        self.opcodes.extend_from_slice(&other.opcodes);
        for (a, b) in self.histogram.iter_mut().zip(&other.histogram) {
            *a += b;
        }
    }
}

/// Size in code units of the payload pseudo-instruction starting at `pc`,
/// or `None` if `insns[pc]` is not a payload identifier.
fn payload_units(insns: &[u16], pc: usize) -> Option<Option<u64>> {
    let at = |i: usize| insns.get(pc + i).copied().map(u64::from);
    match insns[pc] {
        PACKED_SWITCH_PAYLOAD => Some(at(1).map(|size| size * 2 + 4)),
        SPARSE_SWITCH_PAYLOAD => Some(at(1).map(|size| size * 4 + 2)),
        FILL_ARRAY_DATA_PAYLOAD => Some(at(1).zip(at(2)).zip(at(3)).map(|((width, lo), hi)| {
            let count = lo | (hi << 16);
            (width * count).div_ceil(2) + 4
        })),
        _ => None,
    }
}

/// Decodes one method body and returns the code units consumed, which on
/// success always equals `insns.len()`.
pub fn decode_method(insns: &[u16], method_index: u32, out: &mut OpcodeTrace) -> Result<usize, OpcodeError> {
    let mut pc = 0usize;
    while pc < insns.len() {
        let truncated = OpcodeError::TruncatedInstruction {
            offset: pc,
            method_index,
        };
        let width = match payload_units(insns, pc) {
            Some(size) => size.ok_or(truncated.clone())?,
            None => {
                let op = (insns[pc] & 0xff) as u8;
                let width = OPCODE_WIDTHS[op as usize];
                if width == 0 {
                    return Err(OpcodeError::UnknownOpcode {
                        value: op,
                        offset: pc,
                        method_index,
                    });
                }
                out.opcodes.push(op);
                out.histogram[op as usize] += 1;
                u64::from(width)
            }
        };
        let remaining = (insns.len() - pc) as u64;
        if width > remaining {
            return Err(truncated);
        }
        pc += width as usize;
    }
    Ok(pc)
}

/// Concatenates every method's opcodes in code-item order.
pub fn opcode_trace(dex: &DexFile) -> Result<OpcodeTrace, OpcodeError> {
    let mut trace = OpcodeTrace::default();
    for item in &dex.code_items {
        decode_method(&item.insns, item.method_index, &mut trace)?;
    }
    Ok(trace)
}
