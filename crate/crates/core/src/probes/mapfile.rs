//! Read-only shared mappings of target files, used by the backends that need
//! a virtual address per probed location (page-idle, flush+reload).

use std::fs::File;
use std::os::unix::io::AsRawFd;
use std::path::Path;
use std::ptr;

use crate::probes::ProbeError;
use crate::types::{Granularity, Location, RegionSet, SourceId};

/// One mmapped window of one file: `[file_off, file_off + len)`.
pub struct MappedRegion {
    pub source: SourceId,
    pub file_off: u64,
    pub len: u64,
    base: *mut libc::c_void,
    _file: File,
}

// The mapping is read-only and owned; nothing shares the pointer mutably.
unsafe impl Send for MappedRegion {}

impl MappedRegion {
    fn map(source: &str, file_off: u64, want_len: u64) -> Result<Option<Self>, ProbeError> {
        let file = File::open(Path::new(source))
            .map_err(|e| ProbeError::io(format!("opening {source}"), e))?;
        let meta = file
            .metadata()
            .map_err(|e| ProbeError::io(format!("stat {source}"), e))?;
        let page = Granularity::PAGE_4K.bytes();
        let aligned_off = Granularity::PAGE_4K.align_down(file_off);
        // Mappings can extend past EOF in /proc maps; clamp so we never fault
        // beyond the file (SIGBUS).
        let file_end = meta.len().min(file_off + want_len);
        if file_end <= aligned_off {
            return Ok(None);
        }
        let len = (file_end - aligned_off).div_ceil(page) * page;
        let base = unsafe {
            libc::mmap(
                ptr::null_mut(),
                len as usize,
                libc::PROT_READ,
                libc::MAP_SHARED,
                file.as_raw_fd(),
                aligned_off as libc::off_t,
            )
        };
        if base == libc::MAP_FAILED {
            return Err(ProbeError::io(
                format!("mmap {source}+{aligned_off:#x}"),
                std::io::Error::last_os_error(),
            ));
        }
        // Kill kernel readahead on this mapping: probes must fault exactly
        // the page they ask for.
        unsafe {
            libc::madvise(base, len as usize, libc::MADV_RANDOM);
        }
        Ok(Some(MappedRegion {
            source: source.to_string(),
            file_off: aligned_off,
            len,
            base,
            _file: file,
        }))
    }

    pub fn va_of(&self, file_offset: u64) -> Option<*const u8> {
        if file_offset < self.file_off || file_offset >= self.file_off + self.len {
            return None;
        }
        Some(unsafe { (self.base as *const u8).add((file_offset - self.file_off) as usize) })
    }
}

impl Drop for MappedRegion {
    fn drop(&mut self) {
        unsafe {
            libc::munmap(self.base, self.len as usize);
        }
    }
}

/// All the mappings a backend needs for a region set. Regions of files that
/// turn out shorter than declared are clipped; entirely-phantom regions are
/// skipped (their locations read as unknown).
pub struct MappedTarget {
    regions: Vec<MappedRegion>,
}

impl MappedTarget {
    pub fn map_all(regions: &RegionSet) -> Result<Self, ProbeError> {
        let mut out = Vec::new();
        for r in regions.iter() {
            if let Some(m) = MappedRegion::map(&r.source, r.offset, r.length)? {
                out.push(m);
            }
        }
        Ok(MappedTarget { regions: out })
    }

    pub fn va_of(&self, loc: &Location) -> Option<*const u8> {
        self.regions
            .iter()
            .filter(|m| m.source == loc.source)
            .find_map(|m| m.va_of(loc.offset))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::MemoryRegion;
    use std::io::Write;

    #[test]
    fn maps_and_translates_offsets() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("blob");
        let mut f = File::create(&path).unwrap();
        f.write_all(&vec![0xabu8; 3 * 4096 + 100]).unwrap();
        drop(f);
        let src = path.to_str().unwrap().to_string();
        let rs = RegionSet::new(vec![MemoryRegion::new(src.clone(), 4096, 8 * 4096).unwrap()]).unwrap();
        let t = MappedTarget::map_all(&rs).unwrap();
        let loc = Location::enclosing(src.clone(), 2 * 4096, Granularity::PAGE_4K);
        let va = t.va_of(&loc).unwrap();
        assert_eq!(unsafe { *va }, 0xab);
        // before the mapped window, and past EOF: unmapped
        let below = Location::enclosing(src.clone(), 0, Granularity::PAGE_4K);
        assert!(t.va_of(&below).is_none());
        let beyond = Location::enclosing(src, 7 * 4096, Granularity::PAGE_4K);
        assert!(t.va_of(&beyond).is_none());
    }

    #[test]
    fn missing_file_is_an_io_error() {
        let rs = RegionSet::new(vec![
            MemoryRegion::new("/nonexistent/zzz", 0, 4096).unwrap(),
        ])
        .unwrap();
        assert!(MappedTarget::map_all(&rs).is_err());
    }
}
