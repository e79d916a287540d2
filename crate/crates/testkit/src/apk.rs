//! APK packing through the `zip` crate, with fixed timestamps so identical
//! inputs give identical archives.

use std::io::{Cursor, Write};

use zip::write::SimpleFileOptions;
use zip::{CompressionMethod, DateTime, ZipWriter};

#[derive(Debug, Clone, Default)]
pub struct ApkBuilder {
    entries: Vec<(String, Vec<u8>, bool)>,
}

impl ApkBuilder {
    pub fn new() -> ApkBuilder {
        ApkBuilder::default()
    }

    /// Deflated entry.
    pub fn entry(mut self, path: &str, data: impl Into<Vec<u8>>) -> ApkBuilder {
        self.entries.push((path.to_string(), data.into(), true));
        self
    }

    /// Stored (uncompressed) entry.
    pub fn stored(mut self, path: &str, data: impl Into<Vec<u8>>) -> ApkBuilder {
        self.entries.push((path.to_string(), data.into(), false));
        self
    }

    pub fn build(&self) -> Vec<u8> {
        let mut zip = ZipWriter::new(Cursor::new(Vec::new()));
        for (path, data, deflate) in &self.entries {
            let method = if *deflate {
                CompressionMethod::Deflated
            } else {
                CompressionMethod::Stored
            };
            let opts = SimpleFileOptions::default()
                .compression_method(method)
                .last_modified_time(DateTime::default())
                .unix_permissions(0o644);
            zip.start_file(path.as_str(), opts).expect("start entry");
            zip.write_all(data).expect("write entry");
        }
        zip.finish().expect("finish archive").into_inner()
    }
}
