use std::io::{BufRead, Write};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::{Mask, MisclassType};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArchivedMask {
    pub fitness: f64,
    #[serde(rename = "type")]
    pub misclass_type: MisclassType,
}

/// One line of the archive file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveEntry {
    pub instance: String,
    pub mask: Mask,
    pub fitness: f64,
    #[serde(rename = "type")]
    pub misclass_type: MisclassType,
}

/// Unique misclassifying masks per instance, in first-insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdversarialArchive {
    entries: IndexMap<(String, Mask), ArchivedMask>,
}

impl AdversarialArchive {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts unless the mask is already archived for this instance or its
    /// fitness is not positive. Returns whether it was inserted.
    pub fn insert(&mut self, instance: &str, mask: Mask, entry: ArchivedMask) -> bool {
        if !(entry.fitness > 0.0) {
            return false;
        }
        let key = (instance.to_string(), mask);
        if self.entries.contains_key(&key) {
            return false;
        }
        self.entries.insert(key, entry);
        true
    }

    pub fn extend(&mut self, instance: &str, delta: impl IntoIterator<Item = (Mask, ArchivedMask)>) {
        for (mask, entry) in delta {
            self.insert(instance, mask, entry);
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// All entries in insertion order.
    pub fn journal(&self) -> impl Iterator<Item = (&str, &Mask, &ArchivedMask)> {
        self.entries.iter().map(|((i, m), e)| (i.as_str(), m, e))
    }

    pub fn for_instance<'a>(&'a self, instance: &'a str) -> impl Iterator<Item = (&'a Mask, &'a ArchivedMask)> + 'a {
        self.journal()
            .filter(move |(i, _, _)| *i == instance)
            .map(|(_, m, e)| (m, e))
    }

    /// Number of unique masks per instance, in first-seen instance order.
    pub fn unique_counts(&self) -> IndexMap<&str, usize> {
        let mut out: IndexMap<&str, usize> = IndexMap::new();
        for (i, _, _) in self.journal() {
            *out.entry(i).or_default() += 1;
        }
        out
    }

    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        for (instance, mask, e) in self.journal() {
            let line = serde_json::to_string(&ArchiveEntryRef {
                instance,
                mask,
                fitness: e.fitness,
                misclass_type: e.misclass_type,
            })
            .expect("archive entry serializes");
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    /// Reads archive lines, skipping blank lines and `{"config": ...}` headers.
    pub fn read_from(r: impl BufRead) -> Result<Self, String> {
        let mut archive = AdversarialArchive::new();
        for (i, line) in r.lines().enumerate() {
            let line = line.map_err(|e| e.to_string())?;
            if line.trim().is_empty() || is_header(&line) {
                continue;
            }
            let e: ArchiveEntry = serde_json::from_str(&line).map_err(|e| format!("line {}: {e}", i + 1))?;
            if !(e.fitness > 0.0) {
                return Err(format!("line {}: archived fitness must be positive", i + 1));
            }
            archive.insert(
                &e.instance,
                e.mask,
                ArchivedMask {
                    fitness: e.fitness,
                    misclass_type: e.misclass_type,
                },
            );
        }
        Ok(archive)
    }
}

pub(crate) fn is_header(line: &str) -> bool {
    line.starts_with("{\"config\"")
}

#[derive(Serialize)]
struct ArchiveEntryRef<'a> {
    instance: &'a str,
    mask: &'a Mask,
    fitness: f64,
    #[serde(rename = "type")]
    misclass_type: MisclassType,
}
