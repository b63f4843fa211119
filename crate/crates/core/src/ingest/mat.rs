//! Reader for the subset of MAT-file Level 5 used by bearing datasets:
//! real 2-D `double`/`single` matrices, stored plainly or inside
//! zlib-compressed elements.
//!
//! Layout reminders:
//!
//! * 128-byte header: 116 bytes of text, 8-byte subsystem offset, `u16`
//!   version (`0x0100`) and the two-byte endian indicator `IM` (little
//!   endian writer) or `MI` (big endian writer).
//! * Then a stream of data elements. Each has an 8-byte tag (`u32` type,
//!   `u32` byte count) and is padded to a multiple of 8 bytes. When the upper
//!   16 bits of the first tag word are non-zero the element is a "small data
//!   element": type in the low half, size (at most 4) in the high half, and
//!   the data packed in the remaining 4 tag bytes.
//! * `miCOMPRESSED` elements hold a zlib stream of further elements and are
//!   not padded.

use std::io::Read;

use crate::error::{Error, Result};

pub const MI_INT8: u32 = 1;
pub const MI_UINT8: u32 = 2;
pub const MI_INT16: u32 = 3;
pub const MI_UINT16: u32 = 4;
pub const MI_INT32: u32 = 5;
pub const MI_UINT32: u32 = 6;
pub const MI_SINGLE: u32 = 7;
pub const MI_DOUBLE: u32 = 9;
pub const MI_INT64: u32 = 12;
pub const MI_UINT64: u32 = 13;
pub const MI_MATRIX: u32 = 14;
pub const MI_COMPRESSED: u32 = 15;

pub const MX_DOUBLE_CLASS: u8 = 6;
pub const MX_SINGLE_CLASS: u8 = 7;

const HEADER_LEN: usize = 128;
const MAX_INFLATED: u64 = 512 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementClass {
    Double,
    Single,
}

/// A named 2-D numeric array, data in column-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct MatArray {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub class: ElementClass,
    pub data: Vec<f64>,
    pub little_endian: bool,
}

#[derive(Debug, Clone, Copy)]
struct Endian {
    little: bool,
}

impl Endian {
    fn u16(self, b: &[u8]) -> u16 {
        let a = [b[0], b[1]];
        if self.little {
            u16::from_le_bytes(a)
        } else {
            u16::from_be_bytes(a)
        }
    }

    fn u32(self, b: &[u8]) -> u32 {
        let a = [b[0], b[1], b[2], b[3]];
        if self.little {
            u32::from_le_bytes(a)
        } else {
            u32::from_be_bytes(a)
        }
    }

    fn u64(self, b: &[u8]) -> u64 {
        let mut a = [0u8; 8];
        a.copy_from_slice(&b[..8]);
        if self.little {
            u64::from_le_bytes(a)
        } else {
            u64::from_be_bytes(a)
        }
    }
}

#[derive(Debug)]
struct Element<'a> {
    kind: u32,
    data: &'a [u8],
    /// Offset of the tag, for error reporting.
    offset: usize,
}

fn corrupt(offset: usize, reason: impl Into<String>) -> Error {
    Error::CorruptElement {
        offset,
        reason: reason.into(),
    }
}

/// Cursor over an element stream. `base` maps local positions to file offsets.
struct Stream<'a> {
    buf: &'a [u8],
    pos: usize,
    base: usize,
    endian: Endian,
}

impl<'a> Stream<'a> {
    fn new(buf: &'a [u8], base: usize, endian: Endian) -> Self {
        Stream {
            buf,
            pos: 0,
            base,
            endian,
        }
    }

    fn at_end(&self) -> bool {
        self.pos >= self.buf.len()
    }

    fn next_element(&mut self, pad: bool) -> Result<Element<'a>> {
        let offset = self.base + self.pos;
        let rest = &self.buf[self.pos..];
        if rest.len() < 8 {
            return Err(corrupt(offset, format!("truncated tag ({} bytes left)", rest.len())));
        }
        let w0 = self.endian.u32(&rest[0..4]);
        if w0 >> 16 != 0 {
            let kind = w0 & 0xffff;
            let size = (w0 >> 16) as usize;
            if size > 4 {
                return Err(corrupt(offset, format!("small element claims {size} bytes")));
            }
            self.pos += 8;
            return Ok(Element {
                kind,
                data: &rest[4..4 + size],
                offset,
            });
        }
        let kind = w0;
        let size = self.endian.u32(&rest[4..8]) as usize;
        let body = &rest[8..];
        if size > body.len() {
            return Err(corrupt(
                offset,
                format!("element declares {size} bytes, {} available", body.len()),
            ));
        }
        let mut advance = 8 + size;
        if pad && kind != MI_COMPRESSED {
            let padded = 8 + size.div_ceil(8) * 8;
            // the final element of a stream may omit its padding
            advance = padded.min(rest.len()).max(advance);
        }
        self.pos += advance;
        Ok(Element {
            kind,
            data: &body[..size],
            offset,
        })
    }
}

fn parse_header(bytes: &[u8]) -> Result<Endian> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::BadMagic(format!(
            "{} bytes is shorter than the 128-byte header",
            bytes.len()
        )));
    }
    if bytes[..4].contains(&0) {
        return Err(Error::BadMagic(
            "leading zero bytes (MAT-file level 4 or not a MAT-file)".into(),
        ));
    }
    let endian = match &bytes[126..128] {
        b"IM" => Endian { little: true },
        b"MI" => Endian { little: false },
        other => {
            return Err(Error::BadMagic(format!("endian indicator {other:?}")));
        }
    };
    let version = endian.u16(&bytes[124..126]);
    if version != 0x0100 {
        return Err(Error::BadMagic(format!("version {version:#06x}")));
    }
    Ok(endian)
}

/// Matrix header fields plus the remaining subelements.
struct MatrixHeader<'a> {
    name: String,
    class: u8,
    complex: bool,
    dims: Vec<usize>,
    rest: Stream<'a>,
}

fn parse_matrix_header<'a>(el: &Element<'a>, endian: Endian) -> Result<MatrixHeader<'a>> {
    let base = el.offset + 8;
    let mut sub = Stream::new(el.data, base, endian);

    let flags = sub.next_element(true)?;
    if flags.kind != MI_UINT32 || flags.data.len() < 8 {
        return Err(corrupt(flags.offset, "array flags subelement malformed"));
    }
    let f = endian.u32(&flags.data[0..4]);
    let class = (f & 0xff) as u8;
    let complex = f & 0x0800 != 0;

    let dims_el = sub.next_element(true)?;
    if dims_el.kind != MI_INT32 || dims_el.data.len() % 4 != 0 || dims_el.data.len() < 8 {
        return Err(corrupt(dims_el.offset, "dimensions subelement malformed"));
    }
    let mut dims = Vec::with_capacity(dims_el.data.len() / 4);
    for c in dims_el.data.chunks_exact(4) {
        let d = endian.u32(c) as i32;
        if d < 0 {
            return Err(corrupt(dims_el.offset, format!("negative dimension {d}")));
        }
        dims.push(d as usize);
    }

    let name_el = sub.next_element(true)?;
    if name_el.kind != MI_INT8 {
        return Err(corrupt(name_el.offset, "array name subelement malformed"));
    }
    let name = String::from_utf8_lossy(name_el.data).into_owned();

    Ok(MatrixHeader {
        name,
        class,
        complex,
        dims,
        rest: sub,
    })
}

fn decode_numeric(el: &Element<'_>, endian: Endian) -> Result<Vec<f64>> {
    let d = el.data;
    let width = match el.kind {
        MI_INT8 | MI_UINT8 => 1,
        MI_INT16 | MI_UINT16 => 2,
        MI_INT32 | MI_UINT32 | MI_SINGLE => 4,
        MI_DOUBLE | MI_INT64 | MI_UINT64 => 8,
        other => {
            return Err(Error::UnsupportedElement(other));
        }
    };
    if d.len() % width != 0 {
        return Err(corrupt(el.offset, "numeric data not a whole number of elements"));
    }
    let out = d
        .chunks_exact(width)
        .map(|c| match el.kind {
            MI_INT8 => c[0] as i8 as f64,
            MI_UINT8 => c[0] as f64,
            MI_INT16 => endian.u16(c) as i16 as f64,
            MI_UINT16 => endian.u16(c) as f64,
            MI_INT32 => endian.u32(c) as i32 as f64,
            MI_UINT32 => endian.u32(c) as f64,
            MI_SINGLE => f32::from_bits(endian.u32(c)) as f64,
            MI_DOUBLE => f64::from_bits(endian.u64(c)),
            MI_INT64 => endian.u64(c) as i64 as f64,
            _ => endian.u64(c) as f64,
        })
        .collect();
    Ok(out)
}

fn finish_matrix(mut hdr: MatrixHeader<'_>, endian: Endian) -> Result<MatArray> {
    let class = match hdr.class {
        MX_DOUBLE_CLASS => ElementClass::Double,
        MX_SINGLE_CLASS => ElementClass::Single,
        _ => return Err(Error::UnsupportedElement(MI_MATRIX)),
    };
    if hdr.complex || hdr.dims.len() != 2 {
        return Err(Error::UnsupportedElement(MI_MATRIX));
    }
    let (rows, cols) = (hdr.dims[0], hdr.dims[1]);
    let count = rows
        .checked_mul(cols)
        .ok_or_else(|| corrupt(hdr.rest.base, "dimension overflow"))?;
    let real = hdr.rest.next_element(true)?;
    let data = decode_numeric(&real, endian)?;
    if data.len() != count {
        return Err(corrupt(
            real.offset,
            format!("{rows}x{cols} array holds {} values", data.len()),
        ));
    }
    Ok(MatArray {
        name: hdr.name,
        rows,
        cols,
        class,
        data,
        little_endian: endian.little,
    })
}

fn inflate(el: &Element<'_>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    flate2::read::ZlibDecoder::new(el.data)
        .take(MAX_INFLATED + 1)
        .read_to_end(&mut out)
        .map_err(|e| corrupt(el.offset, format!("zlib: {e}")))?;
    if out.len() as u64 > MAX_INFLATED {
        return Err(corrupt(el.offset, "decompressed element too large"));
    }
    Ok(out)
}

enum Visit {
    Continue,
    Stop,
}

/// Walk every top-level matrix, inflating compressed elements.
fn walk<F>(bytes: &[u8], mut f: F) -> Result<()>
where
    F: FnMut(MatrixHeader<'_>, Endian) -> Result<Visit>,
{
    let endian = parse_header(bytes)?;
    let mut stream = Stream::new(&bytes[HEADER_LEN..], HEADER_LEN, endian);
    while !stream.at_end() {
        let el = stream.next_element(true)?;
        let visit = match el.kind {
            MI_MATRIX => f(parse_matrix_header(&el, endian)?, endian)?,
            MI_COMPRESSED => {
                let inflated = inflate(&el)?;
                let mut inner = Stream::new(&inflated, el.offset, endian);
                let mut visit = Visit::Continue;
                while !inner.at_end() {
                    let iel = inner.next_element(true)?;
                    if iel.kind != MI_MATRIX {
                        return Err(Error::UnsupportedElement(iel.kind));
                    }
                    // inflated buffers are temporary; offsets point at the compressed element
                    let hdr = parse_matrix_header(&iel, endian)?;
                    if let Visit::Stop = f(hdr, endian)? {
                        visit = Visit::Stop;
                        break;
                    }
                }
                visit
            }
            other => return Err(Error::UnsupportedElement(other)),
        };
        if let Visit::Stop = visit {
            break;
        }
    }
    Ok(())
}

/// Names of all top-level variables.
pub fn list_variables(bytes: &[u8]) -> Result<Vec<String>> {
    let mut names = Vec::new();
    walk(bytes, |hdr, _| {
        names.push(hdr.name);
        Ok(Visit::Continue)
    })?;
    Ok(names)
}

/// Extract one variable by name.
pub fn read_variable(bytes: &[u8], name: &str) -> Result<MatArray> {
    let mut found = Vec::new();
    let mut result = None;
    walk(bytes, |hdr, endian| {
        if hdr.name == name {
            result = Some(finish_matrix(hdr, endian)?);
            Ok(Visit::Stop)
        } else {
            found.push(hdr.name);
            Ok(Visit::Continue)
        }
    })?;
    result.ok_or_else(|| Error::VariableNotFound {
        name: name.to_string(),
        found,
    })
}

/// Every supported variable in file order; unsupported ones are skipped.
pub fn read_all(bytes: &[u8]) -> Result<Vec<MatArray>> {
    let mut out = Vec::new();
    walk(bytes, |hdr, endian| {
        match finish_matrix(hdr, endian) {
            Ok(a) => out.push(a),
            Err(Error::UnsupportedElement(_)) => {}
            Err(e) => return Err(e),
        }
        Ok(Visit::Continue)
    })?;
    Ok(out)
}

/// Positions (relative to the first element) at which each top-level element
/// ends. Used to check the 8-byte alignment of uncompressed streams.
pub fn element_boundaries(bytes: &[u8]) -> Result<Vec<usize>> {
    let endian = parse_header(bytes)?;
    let mut stream = Stream::new(&bytes[HEADER_LEN..], HEADER_LEN, endian);
    let mut out = Vec::new();
    while !stream.at_end() {
        stream.next_element(true)?;
        out.push(stream.pos);
    }
    Ok(out)
}
