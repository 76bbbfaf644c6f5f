//! In-memory frames and Netpbm (PGM/PPM) file I/O.

use thiserror::Error;

use crate::flowgraph::{DataDescriptor, DescriptorError};

#[derive(Debug, Error)]
pub enum FrameError {
    #[error("buffer length {got} does not match descriptor size {want}")]
    LengthMismatch { got: usize, want: u64 },
    #[error("malformed Netpbm file: {0}")]
    Malformed(String),
    #[error("no Netpbm encoding for {0} frames")]
    Unsupported(String),
    #[error(transparent)]
    Descriptor(#[from] DescriptorError),
}

/// A frame: geometry plus a row-major, channel-interleaved byte buffer.
/// Multi-byte samples are big-endian, following the Netpbm convention.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    desc: DataDescriptor,
    bytes: Vec<u8>,
}

impl Frame {
    pub fn new(desc: DataDescriptor, bytes: Vec<u8>) -> Result<Frame, FrameError> {
        if bytes.len() as u64 != desc.byte_size() {
            return Err(FrameError::LengthMismatch { got: bytes.len(), want: desc.byte_size() });
        }
        Ok(Frame { desc, bytes })
    }

    /// A frame with every byte set to `value`.
    pub fn filled(desc: DataDescriptor, value: u8) -> Frame {
        Frame { desc, bytes: vec![value; desc.byte_size() as usize] }
    }

    pub fn descriptor(&self) -> DataDescriptor {
        self.desc
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.bytes
    }

    /// Parse a binary PGM (`P5`) or PPM (`P6`) file. A maxval above 255
    /// selects 16-bit big-endian samples.
    pub fn read_pnm(data: &[u8]) -> Result<Frame, FrameError> {
        let mut reader = PnmReader { data, pos: 0 };
        let magic = reader.token()?;
        let channels = match magic {
            "P5" => 1,
            "P6" => 3,
            other => return Err(FrameError::Malformed(format!("magic \"{other}\""))),
        };
        let width: u32 = reader.number()?;
        let height: u32 = reader.number()?;
        let maxval: u32 = reader.number()?;
        if maxval == 0 || maxval > 65_535 {
            return Err(FrameError::Malformed(format!("maxval {maxval}")));
        }
        let bit_depth = if maxval > 255 { 16 } else { 8 };
        reader.raster_separator()?;
        let desc = DataDescriptor::new(height, width, bit_depth, channels)?;
        let raster = &reader.data[reader.pos..];
        if raster.len() as u64 != desc.byte_size() {
            return Err(FrameError::Malformed(format!(
                "raster holds {} bytes, expected {}",
                raster.len(),
                desc.byte_size()
            )));
        }
        Ok(Frame { desc, bytes: raster.to_vec() })
    }

    /// Encode as binary PGM/PPM: `P5` for 1-channel 8- or 16-bit frames,
    /// `P6` for 3-channel 8-bit frames.
    pub fn write_pnm(&self) -> Result<Vec<u8>, FrameError> {
        let (magic, maxval) = match (self.desc.channels(), self.desc.bit_depth()) {
            (1, 8) => ("P5", 255u32),
            (1, 16) => ("P5", 65_535),
            (3, 8) => ("P6", 255),
            _ => return Err(FrameError::Unsupported(self.desc.to_string())),
        };
        let mut out = format!(
            "{magic}\n{} {}\n{maxval}\n",
            self.desc.width(),
            self.desc.height()
        )
        .into_bytes();
        out.extend_from_slice(&self.bytes);
        Ok(out)
    }
}

struct PnmReader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> PnmReader<'a> {
    /// Next whitespace-delimited token, skipping `#` comments.
    fn token(&mut self) -> Result<&'a str, FrameError> {
        loop {
            match self.data.get(self.pos) {
                Some(b) if b.is_ascii_whitespace() => self.pos += 1,
                Some(b'#') => {
                    while !matches!(self.data.get(self.pos), None | Some(b'\n')) {
                        self.pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(FrameError::Malformed("truncated header".into())),
            }
        }
        let start = self.pos;
        while matches!(self.data.get(self.pos), Some(b) if !b.is_ascii_whitespace()) {
            self.pos += 1;
        }
        std::str::from_utf8(&self.data[start..self.pos])
            .map_err(|_| FrameError::Malformed("non-ASCII header".into()))
    }

    fn number(&mut self) -> Result<u32, FrameError> {
        let tok = self.token()?;
        tok.parse()
            .map_err(|_| FrameError::Malformed(format!("expected a number, found \"{tok}\"")))
    }

    /// Exactly one whitespace byte separates the header from the raster.
    fn raster_separator(&mut self) -> Result<(), FrameError> {
        match self.data.get(self.pos) {
            Some(b) if b.is_ascii_whitespace() => {
                self.pos += 1;
                Ok(())
            }
            _ => Err(FrameError::Malformed("missing raster separator".into())),
        }
    }
}
