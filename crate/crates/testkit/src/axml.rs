//! Element trees that render both as Android binary XML and as plain text
//! XML, so the two decoders can be checked against each other.

use std::collections::HashMap;

pub const ANDROID_NS: &str = "http://schemas.android.com/apk/res/android";

const NO_INDEX: u32 = u32::MAX;
const UTF8_FLAG: u32 = 1 << 8;

const TYPE_REFERENCE: u8 = 0x01;
const TYPE_STRING: u8 = 0x03;
const TYPE_INT_DEC: u8 = 0x10;
const TYPE_INT_HEX: u8 = 0x11;
const TYPE_INT_BOOLEAN: u8 = 0x12;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AttrValue {
    Str(String),
    Int(i32),
    Hex(u32),
    Bool(bool),
    /// Resource reference `@0x........`; text form is the same literal.
    Ref(u32),
}

impl AttrValue {
    fn text(&self) -> String {
        match self {
            AttrValue::Str(s) => s.clone(),
            AttrValue::Int(i) => i.to_string(),
            AttrValue::Hex(h) => format!("0x{h:x}"),
            AttrValue::Bool(b) => b.to_string(),
            AttrValue::Ref(r) => format!("@0x{r:08x}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct XmlAttr {
    /// In the `android:` namespace.
    pub android: bool,
    pub name: String,
    pub value: AttrValue,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct XmlElement {
    pub name: String,
    pub attrs: Vec<XmlAttr>,
    pub children: Vec<XmlElement>,
}

impl XmlElement {
    pub fn new(name: impl Into<String>) -> XmlElement {
        XmlElement {
            name: name.into(),
            ..XmlElement::default()
        }
    }

    pub fn attr(mut self, name: &str, value: AttrValue) -> XmlElement {
        self.attrs.push(XmlAttr {
            android: false,
            name: name.into(),
            value,
        });
        self
    }

    pub fn android(mut self, name: &str, value: AttrValue) -> XmlElement {
        self.attrs.push(XmlAttr {
            android: true,
            name: name.into(),
            value,
        });
        self
    }

    pub fn android_str(self, name: &str, value: &str) -> XmlElement {
        self.android(name, AttrValue::Str(value.into()))
    }

    pub fn child(mut self, child: XmlElement) -> XmlElement {
        self.children.push(child);
        self
    }

    /// Plain text rendering with an `android` namespace declaration on the
    /// root element.
    pub fn to_text(&self) -> String {
        let mut out = String::from("<?xml version=\"1.0\" encoding=\"utf-8\"?>\n");
        self.write_text(&mut out, 0, true);
        out
    }

    fn write_text(&self, out: &mut String, depth: usize, root: bool) {
        let indent = "    ".repeat(depth);
        out.push_str(&format!("{indent}<{}", self.name));
        if root {
            out.push_str(&format!(" xmlns:android=\"{ANDROID_NS}\""));
        }
        for a in &self.attrs {
            let prefix = if a.android { "android:" } else { "" };
            out.push_str(&format!(" {prefix}{}=\"{}\"", a.name, escape(&a.value.text())));
        }
        if self.children.is_empty() {
            out.push_str(" />\n");
        } else {
            out.push_str(">\n");
            for c in &self.children {
                c.write_text(out, depth + 1, false);
            }
            out.push_str(&format!("{indent}</{}>\n", self.name));
        }
    }

    /// Binary rendering.
    pub fn to_axml(&self, opts: AxmlOptions) -> Vec<u8> {
        AxmlWriter::new(opts).document(self)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AxmlOptions {
    /// UTF-8 string pool instead of UTF-16.
    pub utf8: bool,
    /// Blank the pool names of framework attributes, leaving only the
    /// resource map to identify them.
    pub strip_attr_names: bool,
}

/// Framework attribute resource ids.
pub fn framework_attr_id(name: &str) -> Option<u32> {
    Some(match name {
        "name" => 0x0101_0003,
        "exported" => 0x0101_0010,
        "minSdkVersion" => 0x0101_020c,
        "targetSdkVersion" => 0x0101_0270,
        "versionCode" => 0x0101_021b,
        "versionName" => 0x0101_021c,
        "required" => 0x0101_028e,
        "label" => 0x0101_0001,
        "icon" => 0x0101_0002,
        _ => return None,
    })
}

struct AxmlWriter {
    opts: AxmlOptions,
    strings: Vec<String>,
    index: HashMap<String, u32>,
    resource_ids: Vec<u32>,
    /// Pool slot for each framework attribute, keyed by its name.
    attr_slots: HashMap<String, u32>,
}

fn put_u16(out: &mut Vec<u8>, v: u16) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn chunk(ctype: u16, header_size: u16, header_ext: &[u8], body: &[u8]) -> Vec<u8> {
    let mut out = Vec::new();
    put_u16(&mut out, ctype);
    put_u16(&mut out, header_size);
    put_u32(&mut out, (8 + header_ext.len() + body.len()) as u32);
    out.extend_from_slice(header_ext);
    out.extend_from_slice(body);
    out
}

impl AxmlWriter {
    fn new(opts: AxmlOptions) -> AxmlWriter {
        AxmlWriter {
            opts,
            strings: Vec::new(),
            index: HashMap::new(),
            resource_ids: Vec::new(),
            attr_slots: HashMap::new(),
        }
    }

    fn intern(&mut self, s: &str) -> u32 {
        if let Some(&i) = self.index.get(s) {
            return i;
        }
        let i = self.strings.len() as u32;
        self.strings.push(s.to_string());
        self.index.insert(s.to_string(), i);
        i
    }

    fn collect_framework_attrs(&mut self, e: &XmlElement) {
        for a in &e.attrs {
            if !a.android || self.attr_slots.contains_key(&a.name) {
                continue;
            }
            if let Some(id) = framework_attr_id(&a.name) {
                // Resource-mapped names occupy the first pool slots.
                let slot = self.strings.len() as u32;
                let pooled = if self.opts.strip_attr_names {
                    String::new()
                } else {
                    a.name.clone()
                };
                self.strings.push(pooled);
                self.resource_ids.push(id);
                self.attr_slots.insert(a.name.clone(), slot);
            }
        }
        for c in &e.children {
            self.collect_framework_attrs(c);
        }
    }

    fn attr_name_index(&mut self, a: &XmlAttr) -> u32 {
        if a.android {
            if let Some(&slot) = self.attr_slots.get(&a.name) {
                return slot;
            }
        }
        self.intern(&a.name)
    }

    fn document(mut self, root: &XmlElement) -> Vec<u8> {
        self.collect_framework_attrs(root);
        if !self.opts.strip_attr_names {
            for (i, s) in self.strings.clone().into_iter().enumerate() {
                self.index.entry(s).or_insert(i as u32);
            }
        }
        let prefix = self.intern("android");
        let uri = self.intern(ANDROID_NS);
        let mut line = 1;
        let mut elements = Vec::new();
        self.element(root, uri, &mut line, &mut elements);

        let mut ns = Vec::new();
        put_u32(&mut ns, 1);
        put_u32(&mut ns, NO_INDEX);
        let mut ns_body = Vec::new();
        put_u32(&mut ns_body, prefix);
        put_u32(&mut ns_body, uri);

        let mut body = self.string_pool();
        let mut map = Vec::new();
        for id in &self.resource_ids {
            put_u32(&mut map, *id);
        }
        body.extend(chunk(0x0180, 8, &[], &map));
        body.extend(chunk(0x0100, 16, &ns, &ns_body));
        body.extend(elements);
        body.extend(chunk(0x0101, 16, &ns, &ns_body));
        chunk(0x0003, 8, &[], &body)
    }

    fn element(&mut self, e: &XmlElement, uri: u32, line: &mut u32, out: &mut Vec<u8>) {
        let name = self.intern(&e.name);
        let mut attrs = Vec::new();
        for a in &e.attrs {
            let ns = if a.android { uri } else { NO_INDEX };
            let name_idx = self.attr_name_index(a);
            let (raw, dtype, data) = match &a.value {
                AttrValue::Str(s) => {
                    let i = self.intern(s);
                    (i, TYPE_STRING, i)
                }
                AttrValue::Int(v) => (NO_INDEX, TYPE_INT_DEC, *v as u32),
                AttrValue::Hex(v) => (NO_INDEX, TYPE_INT_HEX, *v),
                AttrValue::Bool(b) => (NO_INDEX, TYPE_INT_BOOLEAN, if *b { u32::MAX } else { 0 }),
                AttrValue::Ref(r) => (NO_INDEX, TYPE_REFERENCE, *r),
            };
            put_u32(&mut attrs, ns);
            put_u32(&mut attrs, name_idx);
            put_u32(&mut attrs, raw);
            put_u16(&mut attrs, 8);
            attrs.push(0);
            attrs.push(dtype);
            put_u32(&mut attrs, data);
        }
        let mut header = Vec::new();
        put_u32(&mut header, *line);
        put_u32(&mut header, NO_INDEX);
        let mut start = Vec::new();
        put_u32(&mut start, NO_INDEX);
        put_u32(&mut start, name);
        put_u16(&mut start, 20);
        put_u16(&mut start, 20);
        put_u16(&mut start, e.attrs.len() as u16);
        put_u16(&mut start, 0);
        put_u16(&mut start, 0);
        put_u16(&mut start, 0);
        start.extend(attrs);
        out.extend(chunk(0x0102, 16, &header, &start));
        *line += 1;

        for c in &e.children {
            self.element(c, uri, line, out);
        }

        let mut header = Vec::new();
        put_u32(&mut header, *line);
        put_u32(&mut header, NO_INDEX);
        let mut end = Vec::new();
        put_u32(&mut end, NO_INDEX);
        put_u32(&mut end, name);
        out.extend(chunk(0x0103, 16, &header, &end));
    }

    fn string_pool(&self) -> Vec<u8> {
        let mut offsets = Vec::new();
        let mut data = Vec::new();
        for s in &self.strings {
            offsets.push(data.len() as u32);
            if self.opts.utf8 {
                let units = s.encode_utf16().count();
                put_len8(&mut data, units);
                put_len8(&mut data, s.len());
                data.extend_from_slice(s.as_bytes());
                data.push(0);
            } else {
                let units: Vec<u16> = s.encode_utf16().collect();
                if units.len() > 0x7fff {
                    put_u16(&mut data, 0x8000 | (units.len() >> 16) as u16);
                }
                put_u16(&mut data, units.len() as u16);
                for u in units {
                    put_u16(&mut data, u);
                }
                put_u16(&mut data, 0);
            }
        }
        while data.len() % 4 != 0 {
            data.push(0);
        }
        let strings_start = 28 + 4 * self.strings.len() as u32;
        let mut ext = Vec::new();
        put_u32(&mut ext, self.strings.len() as u32);
        put_u32(&mut ext, 0);
        put_u32(&mut ext, if self.opts.utf8 { UTF8_FLAG } else { 0 });
        put_u32(&mut ext, strings_start);
        put_u32(&mut ext, 0);
        let mut body = Vec::new();
        for o in offsets {
            put_u32(&mut body, o);
        }
        body.extend(data);
        chunk(0x0001, 28, &ext, &body)
    }
}

fn put_len8(out: &mut Vec<u8>, len: usize) {
    assert!(len <= 0x7fff, "string too long for a UTF-8 pool");
    if len > 0x7f {
        out.push(0x80 | (len >> 8) as u8);
    }
    out.push(len as u8);
}
