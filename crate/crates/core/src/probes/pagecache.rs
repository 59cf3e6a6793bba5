//! Page-cache residency backend: `preadv2(..., RWF_NOWAIT)` answers "is this
//! file page resident?" without faulting it in. Unprivileged and
//! cross-process (the page cache is shared), but destructive in the round
//! sense: once a page is seen resident, it has to be evicted again before it
//! can signal anything new, and eviction of pages other processes hold is
//! best-effort.

use std::collections::HashMap;
use std::fs::File;
use std::io::Read;
use std::os::unix::io::AsRawFd;
use std::path::PathBuf;

use crate::probes::{run_hook, Capabilities, InjectionHook, Presence, ProbeBackend, ProbeError};
use crate::types::{EventId, Granularity, Location, RegionSet, SourceId};

/// How `reset` tries to push pages out of the cache.
#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EvictionStrategy {
    /// `posix_fadvise(DONTNEED)` on each probed page. Free, but the kernel
    /// ignores it for pages some process still has mapped.
    Fadvise,
    /// Fadvise first, then read `bytes` of scratch data at `path` to pressure
    /// the LRU into dropping what fadvise could not. Sized by the attacker's
    /// guess of the target's working set.
    FileSet { path: PathBuf, bytes: u64 },
}

pub struct PageCacheBackend {
    files: HashMap<SourceId, File>,
    eviction: EvictionStrategy,
    hook: Option<InjectionHook>,
}

impl PageCacheBackend {
    pub fn new(
        regions: &RegionSet,
        eviction: EvictionStrategy,
        hook: Option<InjectionHook>,
    ) -> Result<Self, ProbeError> {
        let mut files = HashMap::new();
        for r in regions.iter() {
            if files.contains_key(&r.source) {
                continue;
            }
            let f = File::open(&r.source)
                .map_err(|e| ProbeError::io(format!("opening {}", r.source), e))?;
            // Disable kernel readahead for our own reads: a touch must fault
            // exactly one page, anything else would defeat suppression.
            unsafe {
                libc::posix_fadvise(f.as_raw_fd(), 0, 0, libc::POSIX_FADV_RANDOM);
            }
            files.insert(r.source.clone(), f);
        }
        Ok(PageCacheBackend {
            files,
            eviction,
            hook,
        })
    }

    fn fd_for(&self, loc: &Location) -> Result<&File, ProbeError> {
        if loc.granularity != Granularity::PAGE_4K {
            return Err(ProbeError::WrongGranularity {
                expected: Granularity::PAGE_4K,
                got: loc.granularity,
            });
        }
        self.files
            .get(&loc.source)
            .ok_or_else(|| ProbeError::Backend(format!("{} is not part of this target", loc.source)))
    }

    /// One-byte non-blocking read at the page's first byte.
    fn residency(&self, loc: &Location) -> Result<Presence, ProbeError> {
        let fd = self.fd_for(loc)?.as_raw_fd();
        let mut byte = 0u8;
        let iov = libc::iovec {
            iov_base: &mut byte as *mut u8 as *mut libc::c_void,
            iov_len: 1,
        };
        let n = unsafe { libc::preadv2(fd, &iov, 1, loc.offset as libc::off_t, libc::RWF_NOWAIT) };
        if n > 0 {
            return Ok(Presence::Present);
        }
        if n == 0 {
            // Past EOF: nothing to observe there.
            return Ok(Presence::Unknown);
        }
        match std::io::Error::last_os_error().raw_os_error() {
            Some(libc::EAGAIN) => Ok(Presence::Idle),
            Some(libc::EOPNOTSUPP) | Some(libc::ENOSYS) => Err(ProbeError::Unsupported(
                "preadv2(RWF_NOWAIT) not supported here".into(),
            )),
            _ => Ok(Presence::Unknown),
        }
    }

    fn evict_pressure(&self) -> Result<(), ProbeError> {
        if let EvictionStrategy::FileSet { path, bytes } = &self.eviction {
            let mut f = File::open(path)
                .map_err(|e| ProbeError::io(format!("opening eviction set {}", path.display()), e))?;
            let mut buf = vec![0u8; 1 << 20];
            let mut left = *bytes;
            while left > 0 {
                let n = f
                    .read(&mut buf)
                    .map_err(|e| ProbeError::io("reading eviction set", e))?;
                if n == 0 {
                    break;
                }
                left = left.saturating_sub(n as u64);
            }
        }
        Ok(())
    }
}

impl ProbeBackend for PageCacheBackend {
    fn id(&self) -> &'static str {
        "pagecache"
    }

    fn granularity(&self) -> Granularity {
        Granularity::PAGE_4K
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            destructive_read: true,
            needs_privilege: false,
        }
    }

    fn reset(&mut self, locations: &[Location]) -> Result<(), ProbeError> {
        for loc in locations {
            let fd = self.fd_for(loc)?.as_raw_fd();
            unsafe {
                libc::posix_fadvise(
                    fd,
                    loc.offset as libc::off_t,
                    4096,
                    libc::POSIX_FADV_DONTNEED,
                );
            }
        }
        self.evict_pressure()
    }

    fn trigger(&mut self, event: &EventId) -> Result<(), ProbeError> {
        run_hook(self.hook.as_ref(), event)
    }

    fn check(&mut self, locations: &[Location]) -> Result<Vec<Presence>, ProbeError> {
        locations.iter().map(|l| self.residency(l)).collect()
    }

    fn touch(&mut self, locations: &[Location]) -> Result<(), ProbeError> {
        for loc in locations {
            let fd = self.fd_for(loc)?.as_raw_fd();
            let mut byte = 0u8;
            let iov = libc::iovec {
                iov_base: &mut byte as *mut u8 as *mut libc::c_void,
                iov_len: 1,
            };
            // Blocking read faults the page in; FADV_RANDOM means only it.
            let n = unsafe { libc::preadv2(fd, &iov, 1, loc.offset as libc::off_t, 0) };
            if n < 0 {
                return Err(ProbeError::io(
                    format!("touching {}", loc),
                    std::io::Error::last_os_error(),
                ));
            }
            // n == 0 (past EOF) is fine for a pre-warm: nothing to warm.
        }
        Ok(())
    }
}
