//! Local file-based signature registry.
//!
//! A registry bundle is newline-delimited: each record is
//! `sha512-hex SPACE base64(document)`. The digest covers the exact document
//! bytes carried in the record, so any corruption — even one that breaks the
//! JSON — surfaces as a digest mismatch before parsing is attempted.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use base64::Engine as _;
use base64::engine::general_purpose::STANDARD as BASE64;
use thiserror::Error;

use super::{NetworkSignature, ParseError, Version, canonical_document, parse_signature, sha512};

#[derive(Debug, Clone)]
pub struct RegistryEntry {
    pub signature: NetworkSignature,
    /// Document bytes exactly as imported; export reproduces them verbatim.
    pub document: Vec<u8>,
    pub digest: [u8; 64],
}

/// Why a bundle record was rejected. Other records still import.
#[derive(Debug, Error)]
pub enum ImportError {
    #[error("digest mismatch")]
    DigestMismatch,
    #[error("registry already holds {network_id} {version}")]
    DuplicateNetworkIdSameVersion {
        network_id: String,
        version: Version,
    },
    #[error("malformed bundle record: {0}")]
    MalformedEntry(String),
    #[error(transparent)]
    Parse(#[from] ParseError),
}

#[derive(Debug, Default)]
pub struct ImportReport {
    pub added: usize,
    pub issues: Vec<(usize, ImportError)>,
}

impl fmt::Display for ImportReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} added", self.added)?;
        for (line, issue) in &self.issues {
            write!(f, "\nrecord {line}: {issue}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("unknown network_id `{0}`")]
    UnknownNetworkId(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("registry file is not clean: record {0}: {1}")]
    Dirty(usize, ImportError),
}

/// Passive store of parsed signatures keyed by (network_id, version).
/// Multiple versions of one network may coexist. Reads are freely
/// concurrent; callers serialize imports. Entries never mutate once added.
#[derive(Debug, Default)]
pub struct SignatureRegistry {
    entries: BTreeMap<(String, Version), RegistryEntry>,
}

impl SignatureRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, network_id: &str, version: Version) -> Option<&RegistryEntry> {
        self.entries.get(&(network_id.to_string(), version))
    }

    /// Highest version held for a network id.
    pub fn latest(&self, network_id: &str) -> Option<&RegistryEntry> {
        self.entries
            .iter()
            .filter(|((id, _), _)| id == network_id)
            .map(|(_, e)| e)
            .next_back()
    }

    pub fn iter(&self) -> impl Iterator<Item = &RegistryEntry> {
        self.entries.values()
    }

    /// Inserts a signature, storing its canonical document form.
    pub fn add(&mut self, sig: &NetworkSignature) -> Result<(), ImportError> {
        let doc = canonical_document(sig);
        self.add_document(&doc)
    }

    fn add_document(&mut self, document: &[u8]) -> Result<(), ImportError> {
        let text = std::str::from_utf8(document)
            .map_err(|_| ImportError::MalformedEntry("document is not UTF-8".into()))?;
        let sig = parse_signature(text)?;
        let key = (sig.network_id.clone(), sig.version);
        if self.entries.contains_key(&key) {
            return Err(ImportError::DuplicateNetworkIdSameVersion {
                network_id: key.0,
                version: key.1,
            });
        }
        let digest = sha512(document);
        self.entries.insert(
            key,
            RegistryEntry {
                signature: sig,
                document: document.to_vec(),
                digest,
            },
        );
        Ok(())
    }

    /// Imports a bundle. Records whose embedded digest does not match a
    /// recomputation over the carried bytes are skipped and reported.
    pub fn import_bundle(&mut self, bundle: &[u8]) -> ImportReport {
        let mut report = ImportReport::default();
        let text = String::from_utf8_lossy(bundle);
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            match self.import_record(line) {
                Ok(()) => report.added += 1,
                Err(e) => report.issues.push((idx + 1, e)),
            }
        }
        report
    }

    fn import_record(&mut self, line: &str) -> Result<(), ImportError> {
        let (digest_hex, payload) = line
            .split_once(' ')
            .ok_or_else(|| ImportError::MalformedEntry("missing space separator".into()))?;
        let claimed = hex::decode(digest_hex)
            .ok()
            .and_then(|d| <[u8; 64]>::try_from(d).ok())
            .ok_or_else(|| ImportError::MalformedEntry("digest is not 128 hex chars".into()))?;
        let document = BASE64
            .decode(payload.trim_end())
            .map_err(|e| ImportError::MalformedEntry(format!("base64: {e}")))?;
        if sha512(&document) != claimed {
            return Err(ImportError::DigestMismatch);
        }
        self.add_document(&document)
    }

    /// Exports the named networks (every held version of each) as a bundle.
    pub fn export_bundle(&self, network_ids: &[&str]) -> Result<Vec<u8>, RegistryError> {
        let mut out = Vec::new();
        for id in network_ids {
            let mut found = false;
            for ((entry_id, _), entry) in &self.entries {
                if entry_id == id {
                    found = true;
                    push_record(&mut out, entry);
                }
            }
            if !found {
                return Err(RegistryError::UnknownNetworkId(id.to_string()));
            }
        }
        Ok(out)
    }

    pub fn export_all(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for entry in self.entries.values() {
            push_record(&mut out, entry);
        }
        out
    }

    pub fn load(path: &Path) -> Result<Self, RegistryError> {
        let mut reg = Self::new();
        if path.exists() {
            let bytes = std::fs::read(path)?;
            let report = reg.import_bundle(&bytes);
            if let Some((line, issue)) = report.issues.into_iter().next() {
                return Err(RegistryError::Dirty(line, issue));
            }
        }
        Ok(reg)
    }

    pub fn save(&self, path: &Path) -> Result<(), RegistryError> {
        std::fs::write(path, self.export_all())?;
        Ok(())
    }
}

fn push_record(out: &mut Vec<u8>, entry: &RegistryEntry) {
    out.extend_from_slice(hex::encode(entry.digest).as_bytes());
    out.push(b' ');
    out.extend_from_slice(BASE64.encode(&entry.document).as_bytes());
    out.push(b'\n');
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;

    fn three_sig_registry() -> SignatureRegistry {
        let mut reg = SignatureRegistry::new();
        for (i, name) in ["alpha", "beta", "gamma"].iter().enumerate() {
            let mut sig = presets::push_signature();
            sig.network_id = name.to_string();
            sig.version = Version(1, i as u32, 0);
            reg.add(&sig).unwrap();
        }
        reg
    }

    #[test]
    fn export_import_roundtrip_is_byte_identical() {
        let reg = three_sig_registry();
        let bundle = reg.export_all();

        let mut other = SignatureRegistry::new();
        let report = other.import_bundle(&bundle);
        assert_eq!(report.added, 3);
        assert!(report.issues.is_empty());
        assert_eq!(other.export_all(), bundle);
    }

    #[test]
    fn corrupted_record_reports_digest_mismatch_others_import() {
        let reg = three_sig_registry();
        let bundle = String::from_utf8(reg.export_all()).unwrap();
        let mut lines: Vec<String> = bundle.lines().map(String::from).collect();
        // Corrupt the base64 payload of the middle record.
        let bytes = unsafe { lines[1].as_bytes_mut() };
        let pos = bytes.len() - 3;
        bytes[pos] = if bytes[pos] == b'A' { b'B' } else { b'A' };
        let tampered = lines.join("\n");

        let mut other = SignatureRegistry::new();
        let report = other.import_bundle(tampered.as_bytes());
        assert_eq!(report.added, 2);
        assert_eq!(report.issues.len(), 1);
        assert!(matches!(
            report.issues[0],
            (2, ImportError::DigestMismatch) | (2, ImportError::MalformedEntry(_))
        ));
    }

    #[test]
    fn duplicate_id_and_version_rejected() {
        let reg = three_sig_registry();
        let bundle = reg.export_all();
        let mut other = three_sig_registry();
        let report = other.import_bundle(&bundle);
        assert_eq!(report.added, 0);
        assert_eq!(report.issues.len(), 3);
        assert!(
            report
                .issues
                .iter()
                .all(|(_, e)| matches!(e, ImportError::DuplicateNetworkIdSameVersion { .. }))
        );
    }

    #[test]
    fn multiple_versions_coexist_and_latest_wins() {
        let mut reg = SignatureRegistry::new();
        for patch in [0, 2, 1] {
            let mut sig = presets::push_signature();
            sig.version = Version(1, 0, patch);
            reg.add(&sig).unwrap();
        }
        assert_eq!(reg.len(), 3);
        let latest = reg.latest(&presets::push_signature().network_id).unwrap();
        assert_eq!(latest.signature.version, Version(1, 0, 2));
    }

    #[test]
    fn export_unknown_id_fails() {
        let reg = three_sig_registry();
        assert!(matches!(
            reg.export_bundle(&["nope"]),
            Err(RegistryError::UnknownNetworkId(_))
        ));
    }
}
