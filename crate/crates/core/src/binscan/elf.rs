//! Read-only data extraction from ELF binaries.

use object::{Object, ObjectSection, SectionKind};

use super::BinscanError;

/// An allocated, non-writable, non-executable data section, copied out with
/// its file placement.
#[derive(Clone, Debug)]
pub struct RoSection {
    pub name: String,
    pub file_offset: u64,
    pub addr: u64,
    pub data: Vec<u8>,
}

/// All read-only data sections of an ELF image. Sections without file
/// backing (`.bss`-like) cannot hold string constants and are skipped.
pub fn read_only_sections(image: &[u8]) -> Result<Vec<RoSection>, BinscanError> {
    let file = object::File::parse(image)?;
    let mut out = Vec::new();
    for section in file.sections() {
        let readonly_data = matches!(
            section.kind(),
            SectionKind::ReadOnlyData | SectionKind::ReadOnlyString
        );
        if !readonly_data {
            continue;
        }
        let Some((file_offset, _)) = section.file_range() else {
            continue;
        };
        out.push(RoSection {
            name: section.name().unwrap_or("<unnamed>").to_string(),
            file_offset,
            addr: section.address(),
            data: section.data()?.to_vec(),
        });
    }
    if out.is_empty() {
        return Err(BinscanError::NoReadOnlyData);
    }
    out.sort_by_key(|s| s.file_offset);
    Ok(out)
}
