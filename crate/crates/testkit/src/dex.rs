//! Minimal DEX assembler: string, type, proto and method tables plus class
//! definitions whose methods carry raw instruction arrays.
//!
//! The checksum and signature header fields are left zero.

use std::collections::HashMap;

const HEADER_SIZE: usize = 0x70;
const ENDIAN_CONSTANT: u32 = 0x1234_5678;
const NO_INDEX: u32 = u32::MAX;

pub fn uleb128(out: &mut Vec<u8>, mut v: u32) {
    loop {
        let byte = (v & 0x7f) as u8;
        v >>= 7;
        if v == 0 {
            out.push(byte);
            return;
        }
        out.push(byte | 0x80);
    }
}

#[derive(Debug, Clone)]
struct MethodDef {
    method_index: u32,
    access: u32,
    insns: Option<Vec<u16>>,
}

#[derive(Debug, Clone)]
struct ClassDef {
    type_index: u32,
    direct: Vec<MethodDef>,
    virtuals: Vec<MethodDef>,
    static_fields: u32,
}

#[derive(Debug, Clone)]
pub struct DexBuilder {
    version: [u8; 3],
    strings: Vec<String>,
    string_index: HashMap<String, u32>,
    types: Vec<u32>,
    type_index: HashMap<String, u32>,
    protos: Vec<(u32, u32)>,
    proto_index: HashMap<String, u32>,
    methods: Vec<(u16, u16, u32)>,
    classes: Vec<ClassDef>,
}

impl Default for DexBuilder {
    fn default() -> Self {
        DexBuilder::new(*b"035")
    }
}

impl DexBuilder {
    pub fn new(version: [u8; 3]) -> DexBuilder {
        DexBuilder {
            version,
            strings: Vec::new(),
            string_index: HashMap::new(),
            types: Vec::new(),
            type_index: HashMap::new(),
            protos: Vec::new(),
            proto_index: HashMap::new(),
            methods: Vec::new(),
            classes: Vec::new(),
        }
    }

    pub fn string(&mut self, s: &str) -> u32 {
        if let Some(&i) = self.string_index.get(s) {
            return i;
        }
        let i = self.strings.len() as u32;
        self.strings.push(s.to_string());
        self.string_index.insert(s.to_string(), i);
        i
    }

    pub fn type_id(&mut self, descriptor: &str) -> u32 {
        if let Some(&i) = self.type_index.get(descriptor) {
            return i;
        }
        let s = self.string(descriptor);
        let i = self.types.len() as u32;
        self.types.push(s);
        self.type_index.insert(descriptor.to_string(), i);
        i
    }

    /// Prototype keyed by its shorty; the return type is derived from the
    /// first shorty character.
    pub fn proto(&mut self, shorty: &str) -> u32 {
        if let Some(&i) = self.proto_index.get(shorty) {
            return i;
        }
        let ret = match shorty.as_bytes().first() {
            Some(b'V') | None => "V",
            Some(b'Z') => "Z",
            Some(b'I') => "I",
            Some(b'J') => "J",
            _ => "Ljava/lang/Object;",
        };
        let shorty_idx = self.string(shorty);
        let ret_idx = self.type_id(ret);
        let i = self.protos.len() as u32;
        self.protos.push((shorty_idx, ret_idx));
        self.proto_index.insert(shorty.to_string(), i);
        i
    }

    /// Adds a method reference and returns its index.
    pub fn method(&mut self, class: &str, name: &str, shorty: &str) -> u32 {
        let c = self.type_id(class) as u16;
        let p = self.proto(shorty) as u16;
        let n = self.string(name);
        if let Some(i) = self.methods.iter().position(|m| *m == (c, p, n)) {
            return i as u32;
        }
        self.methods.push((c, p, n));
        (self.methods.len() - 1) as u32
    }

    /// Starts a class definition; methods are added through the returned
    /// handle in ascending method-index order.
    pub fn class(&mut self, descriptor: &str) -> ClassHandle<'_> {
        let type_index = self.type_id(descriptor);
        self.classes.push(ClassDef {
            type_index,
            direct: Vec::new(),
            virtuals: Vec::new(),
            static_fields: 0,
        });
        let at = self.classes.len() - 1;
        ClassHandle { dex: self, at }
    }

    pub fn build(&self) -> Vec<u8> {
        let string_ids_off = HEADER_SIZE;
        let type_ids_off = string_ids_off + 4 * self.strings.len();
        let proto_ids_off = type_ids_off + 4 * self.types.len();
        let method_ids_off = proto_ids_off + 12 * self.protos.len();
        let class_defs_off = method_ids_off + 8 * self.methods.len();
        let data_off = class_defs_off + 32 * self.classes.len();

        let mut data = Vec::new();
        let mut string_offsets = Vec::new();
        for s in &self.strings {
            string_offsets.push((data_off + data.len()) as u32);
            uleb128(&mut data, s.encode_utf16().count() as u32);
            data.extend_from_slice(s.as_bytes());
            data.push(0);
        }

        let mut code_offsets: HashMap<(usize, bool, usize), u32> = HashMap::new();
        for (ci, class) in self.classes.iter().enumerate() {
            for (virt, list) in [(false, &class.direct), (true, &class.virtuals)] {
                for (mi, m) in list.iter().enumerate() {
                    let Some(insns) = &m.insns else { continue };
                    while (data_off + data.len()) % 4 != 0 {
                        data.push(0);
                    }
                    code_offsets.insert((ci, virt, mi), (data_off + data.len()) as u32);
                    data.extend_from_slice(&1u16.to_le_bytes());
                    data.extend_from_slice(&0u16.to_le_bytes());
                    data.extend_from_slice(&0u16.to_le_bytes());
                    data.extend_from_slice(&0u16.to_le_bytes());
                    data.extend_from_slice(&0u32.to_le_bytes());
                    data.extend_from_slice(&(insns.len() as u32).to_le_bytes());
                    for u in insns {
                        data.extend_from_slice(&u.to_le_bytes());
                    }
                }
            }
        }

        let mut class_data_offsets = Vec::new();
        for (ci, class) in self.classes.iter().enumerate() {
            if class.direct.is_empty() && class.virtuals.is_empty() && class.static_fields == 0 {
                class_data_offsets.push(0);
                continue;
            }
            class_data_offsets.push((data_off + data.len()) as u32);
            uleb128(&mut data, class.static_fields);
            uleb128(&mut data, 0);
            uleb128(&mut data, class.direct.len() as u32);
            uleb128(&mut data, class.virtuals.len() as u32);
            for i in 0..class.static_fields {
                uleb128(&mut data, u32::from(i > 0));
                uleb128(&mut data, 0x8);
            }
            for (virt, list) in [(false, &class.direct), (true, &class.virtuals)] {
                let mut prev = 0;
                for (mi, m) in list.iter().enumerate() {
                    uleb128(&mut data, m.method_index - prev);
                    prev = m.method_index;
                    uleb128(&mut data, m.access);
                    uleb128(&mut data, code_offsets.get(&(ci, virt, mi)).copied().unwrap_or(0));
                }
            }
        }

        let mut out = Vec::with_capacity(data_off + data.len());
        out.extend_from_slice(b"dex\n");
        out.extend_from_slice(&self.version);
        out.push(0);
        out.resize(32, 0);
        let file_size = (data_off + data.len()) as u32;
        let header_fields = [
            file_size,
            HEADER_SIZE as u32,
            ENDIAN_CONSTANT,
            0,
            0,
            0,
            self.strings.len() as u32,
            string_ids_off as u32,
            self.types.len() as u32,
            type_ids_off as u32,
            self.protos.len() as u32,
            proto_ids_off as u32,
            0,
            0,
            self.methods.len() as u32,
            method_ids_off as u32,
            self.classes.len() as u32,
            class_defs_off as u32,
            data.len() as u32,
            data_off as u32,
        ];
        for f in header_fields {
            out.extend_from_slice(&f.to_le_bytes());
        }
        debug_assert_eq!(out.len(), HEADER_SIZE);
        for o in string_offsets {
            out.extend_from_slice(&o.to_le_bytes());
        }
        for t in &self.types {
            out.extend_from_slice(&t.to_le_bytes());
        }
        for (shorty, ret) in &self.protos {
            out.extend_from_slice(&shorty.to_le_bytes());
            out.extend_from_slice(&ret.to_le_bytes());
            out.extend_from_slice(&0u32.to_le_bytes());
        }
        for (c, p, n) in &self.methods {
            out.extend_from_slice(&c.to_le_bytes());
            out.extend_from_slice(&p.to_le_bytes());
            out.extend_from_slice(&n.to_le_bytes());
        }
        for (class, cd_off) in self.classes.iter().zip(class_data_offsets) {
            for f in [class.type_index, 1, NO_INDEX, 0, NO_INDEX, 0, cd_off, 0] {
                out.extend_from_slice(&f.to_le_bytes());
            }
        }
        out.extend(data);
        out
    }
}

pub struct ClassHandle<'a> {
    dex: &'a mut DexBuilder,
    at: usize,
}

impl ClassHandle<'_> {
    fn push(&mut self, virtual_: bool, method_index: u32, insns: Option<Vec<u16>>) -> &mut Self {
        let class = &mut self.dex.classes[self.at];
        let list = if virtual_ { &mut class.virtuals } else { &mut class.direct };
        assert!(
            list.last().is_none_or(|m| m.method_index < method_index),
            "methods must be added in ascending index order"
        );
        list.push(MethodDef {
            method_index,
            access: if virtual_ { 0x1 } else { 0x9 },
            insns,
        });
        self
    }

    pub fn direct(&mut self, method_index: u32, insns: &[u16]) -> &mut Self {
        self.push(false, method_index, Some(insns.to_vec()))
    }

    pub fn virtual_method(&mut self, method_index: u32, insns: &[u16]) -> &mut Self {
        self.push(true, method_index, Some(insns.to_vec()))
    }

    /// Abstract or native method: no code item.
    pub fn abstract_method(&mut self, method_index: u32) -> &mut Self {
        self.push(true, method_index, None)
    }

    pub fn static_fields(&mut self, count: u32) -> &mut Self {
        self.dex.classes[self.at].static_fields = count;
        self
    }
}
