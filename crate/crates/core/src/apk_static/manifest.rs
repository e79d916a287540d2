use serde::{Deserialize, Serialize};

use super::{axml, StaticError};

/// Element stream shared by the binary and text decoders. Attribute names
/// are local names (namespace prefixes dropped).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum XmlEvent {
    Start {
        name: String,
        attributes: Vec<(String, String)>,
        line: u32,
    },
    End {
        name: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ComponentKind {
    Activity,
    Service,
    Receiver,
    Provider,
}

impl ComponentKind {
    fn from_tag(tag: &str) -> Option<ComponentKind> {
        match tag {
            "activity" => Some(ComponentKind::Activity),
            "service" => Some(ComponentKind::Service),
            "receiver" => Some(ComponentKind::Receiver),
            "provider" => Some(ComponentKind::Provider),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Component {
    pub kind: ComponentKind,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestInfo {
    pub package_name: String,
    pub version_code: u64,
    pub version_name: String,
    /// `uses-permission` names, deduplicated in first-appearance order.
    pub permissions: Vec<String>,
    pub components: Vec<Component>,
    /// Intent-filter actions, deduplicated in first-appearance order.
    pub intent_filters: Vec<String>,
    pub features: Vec<String>,
}

/// Parses `AndroidManifest.xml`, binary or textual.
pub fn parse_manifest(data: &[u8]) -> Result<ManifestInfo, StaticError> {
    let events = if axml::is_axml(data) {
        axml::decode(data)?
    } else {
        text_events(data)?
    };
    manifest_from_events(&events)
}

fn text_events(data: &[u8]) -> Result<Vec<XmlEvent>, StaticError> {
    let text = std::str::from_utf8(data).map_err(|e| {
        let line = data[..e.valid_up_to()].iter().filter(|&&b| b == b'\n').count() + 1;
        StaticError::MalformedXml { line: line as u32 }
    })?;
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);
    let doc = roxmltree::Document::parse(text).map_err(|e| StaticError::MalformedXml { line: e.pos().row })?;
    let mut events = Vec::new();
    walk(doc.root_element(), &doc, &mut events);
    Ok(events)
}

fn walk(node: roxmltree::Node<'_, '_>, doc: &roxmltree::Document<'_>, out: &mut Vec<XmlEvent>) {
    let name = node.tag_name().name().to_string();
    out.push(XmlEvent::Start {
        name: name.clone(),
        attributes: node
            .attributes()
            .map(|a| (a.name().to_string(), a.value().to_string()))
            .collect(),
        line: doc.text_pos_at(node.range().start).row,
    });
    for child in node.children().filter(roxmltree::Node::is_element) {
        walk(child, doc, out);
    }
    out.push(XmlEvent::End { name });
}

fn attr<'a>(attributes: &'a [(String, String)], name: &str) -> Option<&'a str> {
    attributes
        .iter()
        .find(|(k, _)| k == name)
        .map(|(_, v)| v.as_str())
}

fn push_unique(list: &mut Vec<String>, value: &str) {
    if !list.iter().any(|v| v == value) {
        list.push(value.to_string());
    }
}

fn parse_version_code(raw: &str, line: u32) -> Result<u64, StaticError> {
    let parsed = match raw.strip_prefix("0x") {
        Some(hex) => u64::from_str_radix(hex, 16).ok(),
        None => raw.parse::<u64>().ok(),
    };
    parsed.ok_or(StaticError::MalformedXml { line })
}

/// Shared field extraction over either decoder's element stream.
pub fn manifest_from_events(events: &[XmlEvent]) -> Result<ManifestInfo, StaticError> {
    let mut stack: Vec<&str> = Vec::new();
    let mut info: Option<ManifestInfo> = None;

    for event in events {
        match event {
            XmlEvent::Start {
                name,
                attributes,
                line,
            } => {
                if stack.is_empty() {
                    let package = attr(attributes, "package").filter(|p| !p.is_empty());
                    let (true, Some(package)) = (name == "manifest", package) else {
                        return Err(StaticError::MissingPackage);
                    };
                    info = Some(ManifestInfo {
                        package_name: package.to_string(),
                        version_code: attr(attributes, "versionCode")
                            .map(|v| parse_version_code(v, *line))
                            .transpose()?
                            .unwrap_or(0),
                        version_name: attr(attributes, "versionName").unwrap_or_default().to_string(),
                        permissions: Vec::new(),
                        components: Vec::new(),
                        intent_filters: Vec::new(),
                        features: Vec::new(),
                    });
                } else if let Some(info) = info.as_mut() {
                    let element_name = attr(attributes, "name");
                    match (name.as_str(), element_name) {
                        ("uses-permission" | "uses-permission-sdk-23", Some(p)) => {
                            push_unique(&mut info.permissions, p)
                        }
                        ("uses-feature", Some(f)) => push_unique(&mut info.features, f),
                        ("action", Some(a)) if stack.last() == Some(&"intent-filter") => {
                            push_unique(&mut info.intent_filters, a)
                        }
                        (tag, Some(n)) => {
                            if let Some(kind) = ComponentKind::from_tag(tag) {
                                info.components.push(Component {
                                    kind,
                                    name: n.to_string(),
                                });
                            }
                        }
                        _ => {}
                    }
                }
                stack.push(name);
            }
            XmlEvent::End { .. } => {
                stack.pop();
            }
        }
    }
    info.ok_or(StaticError::MissingPackage)
}
