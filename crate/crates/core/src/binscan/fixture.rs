//! Minimal ELF64 image builder for layout tests.
//!
//! Hand-rolled on purpose: the scanner reads binaries through a parsing
//! library, so its tests need ground truth produced without one. The images
//! are tiny relocatable-style files — header, `.rodata` at file offset
//! 0x1000, an optional writable `.data`, `.shstrtab`, and the section
//! table — with `.rodata` contents laid out byte-exactly from a placement
//! list.

use std::io;
use std::path::Path;

pub const RODATA_FILE_OFFSET: u64 = 0x1000;
pub const RODATA_ADDR: u64 = 0x401000;

#[derive(Clone, Debug)]
pub struct FixtureElf {
    rodata: Vec<u8>,
    used: Vec<(u64, u64)>,
    data_section: Option<Vec<u8>>,
}

impl FixtureElf {
    pub fn new(rodata_size: u64) -> Self {
        assert!(rodata_size > 0, "rodata must not be empty");
        FixtureElf {
            rodata: vec![0u8; rodata_size as usize],
            used: Vec::new(),
            data_section: None,
        }
    }

    /// Writes raw bytes at an offset inside `.rodata`. Placements must not
    /// overlap — overlap means the fixture's declared layout is a lie.
    pub fn place(mut self, offset: u64, bytes: &[u8]) -> Self {
        let end = offset + bytes.len() as u64;
        assert!(
            end <= self.rodata.len() as u64,
            "placement {offset:#x}+{} beyond rodata size {:#x}",
            bytes.len(),
            self.rodata.len()
        );
        for &(s, e) in &self.used {
            assert!(end <= s || offset >= e, "placement at {offset:#x} overlaps {s:#x}..{e:#x}");
        }
        self.used.push((offset, end));
        self.rodata[offset as usize..end as usize].copy_from_slice(bytes);
        self
    }

    /// Places a string with its terminating NUL.
    pub fn place_str(self, offset: u64, s: &str) -> Self {
        let mut bytes = s.as_bytes().to_vec();
        bytes.push(0);
        self.place(offset, &bytes)
    }

    /// Adds a writable `.data` section with the given content; the scanner
    /// must ignore everything in it.
    pub fn writable(mut self, bytes: &[u8]) -> Self {
        self.data_section = Some(bytes.to_vec());
        self
    }

    pub fn build(&self) -> Vec<u8> {
        const EHSIZE: usize = 64;
        const SHENTSIZE: usize = 64;
        const SHF_WRITE: u64 = 1;
        const SHF_ALLOC: u64 = 2;

        // .shstrtab body; name offsets are fixed by construction
        let shstrtab: &[u8] = b"\0.rodata\0.data\0.shstrtab\0";
        let (name_rodata, name_data, name_shstrtab) = (1u32, 9u32, 15u32);

        let mut image = vec![0u8; EHSIZE];
        pad_to(&mut image, RODATA_FILE_OFFSET as usize);
        let rodata_off = image.len() as u64;
        image.extend_from_slice(&self.rodata);

        let data_off = self.data_section.as_ref().map(|d| {
            let aligned = align8(image.len());
            pad_to(&mut image, aligned);
            let off = image.len() as u64;
            image.extend_from_slice(d);
            off
        });

        let aligned = align8(image.len());
        pad_to(&mut image, aligned);
        let shstrtab_off = image.len() as u64;
        image.extend_from_slice(shstrtab);

        let aligned = align8(image.len());
        pad_to(&mut image, aligned);
        let shoff = image.len() as u64;

        struct Shdr {
            name: u32,
            kind: u32,
            flags: u64,
            addr: u64,
            offset: u64,
            size: u64,
            align: u64,
        }
        let mut sections = vec![
            Shdr { name: 0, kind: 0, flags: 0, addr: 0, offset: 0, size: 0, align: 0 },
            Shdr {
                name: name_rodata,
                kind: 1, // PROGBITS
                flags: SHF_ALLOC,
                addr: RODATA_ADDR,
                offset: rodata_off,
                size: self.rodata.len() as u64,
                align: 4096,
            },
        ];
        if let (Some(off), Some(d)) = (data_off, self.data_section.as_ref()) {
            sections.push(Shdr {
                name: name_data,
                kind: 1,
                flags: SHF_ALLOC | SHF_WRITE,
                addr: 0x600000,
                offset: off,
                size: d.len() as u64,
                align: 8,
            });
        }
        let shstrndx = sections.len() as u16;
        sections.push(Shdr {
            name: name_shstrtab,
            kind: 3, // STRTAB
            flags: 0,
            addr: 0,
            offset: shstrtab_off,
            size: shstrtab.len() as u64,
            align: 1,
        });

        for s in &sections {
            let base = image.len();
            image.resize(base + SHENTSIZE, 0);
            put_u32(&mut image, base, s.name);
            put_u32(&mut image, base + 0x04, s.kind);
            put_u64(&mut image, base + 0x08, s.flags);
            put_u64(&mut image, base + 0x10, s.addr);
            put_u64(&mut image, base + 0x18, s.offset);
            put_u64(&mut image, base + 0x20, s.size);
            // sh_link, sh_info stay zero
            put_u64(&mut image, base + 0x30, s.align);
            // sh_entsize stays zero
        }

        // ELF header
        image[0..4].copy_from_slice(&[0x7f, b'E', b'L', b'F']);
        image[4] = 2; // 64-bit
        image[5] = 1; // little endian
        image[6] = 1; // EV_CURRENT
        put_u16(&mut image, 0x10, 3); // ET_DYN
        put_u16(&mut image, 0x12, 62); // EM_X86_64
        put_u32(&mut image, 0x14, 1);
        put_u64(&mut image, 0x28, shoff);
        put_u16(&mut image, 0x34, EHSIZE as u16);
        put_u16(&mut image, 0x3a, SHENTSIZE as u16);
        put_u16(&mut image, 0x3c, sections.len() as u16);
        put_u16(&mut image, 0x3e, shstrndx);
        image
    }

    pub fn write_to(&self, path: &Path) -> io::Result<()> {
        std::fs::write(path, self.build())
    }
}

fn align8(n: usize) -> usize {
    n.div_ceil(8) * 8
}

fn pad_to(image: &mut Vec<u8>, len: usize) {
    assert!(len >= image.len());
    image.resize(len, 0);
}

fn put_u16(image: &mut [u8], at: usize, v: u16) {
    image[at..at + 2].copy_from_slice(&v.to_le_bytes());
}

fn put_u32(image: &mut [u8], at: usize, v: u32) {
    image[at..at + 4].copy_from_slice(&v.to_le_bytes());
}

fn put_u64(image: &mut [u8], at: usize, v: u64) {
    image[at..at + 8].copy_from_slice(&v.to_le_bytes());
}
