//! Binary dumps of fields and cell measures on 1D and 2D grids.
//!
//! Layout (all little-endian):
//!
//! ```text
//! magic     8 bytes  "MRMGRID\0"
//! version   u32      1
//! ndim      u32      1 or 2
//! payload   u32      0 = field values, 1 = cell masses
//! dims      ndim × u64
//! l         f64      resolution scale
//! scale     f64      integral scale T (1D) or radius R (2D)
//! seed      u64
//! method    u32      synthesis method (1D) or kernel kind (2D)
//! origin    ndim × f64
//! spacing   f64
//! data      Π dims × f64, row-major (x fastest)
//! ```

use std::io::{Read, Write};

use crate::chaos2d::{Field2D, Kernel2D, Measure2D};
use crate::error::{MrmError, Result};
use crate::measure::MeasureGrid;
use crate::synthesis::Field1D;

pub const MAGIC: &[u8; 8] = b"MRMGRID\0";
pub const VERSION: u32 = 1;

/// Largest payload accepted when reading.
const MAX_VALUES: u64 = 1 << 28;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Payload {
    Field,
    Mass,
}

impl Payload {
    fn code(self) -> u32 {
        match self {
            Payload::Field => 0,
            Payload::Mass => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridDump {
    pub dims: Vec<u64>,
    pub payload: Payload,
    pub resolution: f64,
    pub scale: f64,
    pub seed: u64,
    pub method: u32,
    pub origin: Vec<f64>,
    pub spacing: f64,
    pub data: Vec<f64>,
}

fn kernel_code(k: &Kernel2D) -> u32 {
    match k {
        Kernel2D::Lognormal { .. } => 0,
        Kernel2D::GffDisk { .. } => 1,
    }
}

fn kernel_scales(k: &Kernel2D, spacing: f64) -> (f64, f64) {
    match *k {
        Kernel2D::Lognormal {
            radius, resolution, ..
        } => (resolution, radius),
        Kernel2D::GffDisk { radius, .. } => (spacing, radius),
    }
}

impl GridDump {
    pub fn field1d(field: &Field1D) -> Self {
        GridDump {
            dims: vec![field.grid.n as u64],
            payload: Payload::Field,
            resolution: field.cone.resolution,
            scale: field.cone.integral_scale,
            seed: field.seed,
            method: field.method.code(),
            origin: vec![field.grid.start],
            spacing: field.grid.spacing,
            data: field.values.clone(),
        }
    }

    /// Cell masses of `measure`, labelled with the field it was built from.
    pub fn measure1d(field: &Field1D, measure: &MeasureGrid) -> Self {
        GridDump {
            payload: Payload::Mass,
            origin: vec![measure.start()],
            spacing: measure.spacing(),
            dims: vec![measure.masses().len() as u64],
            data: measure.masses().to_vec(),
            ..GridDump::field1d(field)
        }
    }

    pub fn field2d(field: &Field2D) -> Self {
        let (resolution, scale) = kernel_scales(&field.kernel, field.grid.spacing);
        GridDump {
            dims: vec![field.grid.n as u64, field.grid.n as u64],
            payload: Payload::Field,
            resolution,
            scale,
            seed: field.seed,
            method: kernel_code(&field.kernel),
            origin: field.grid.origin.to_vec(),
            spacing: field.grid.spacing,
            data: field.values.clone(),
        }
    }

    pub fn measure2d(field: &Field2D, measure: &Measure2D) -> Self {
        GridDump {
            payload: Payload::Mass,
            data: measure.masses().to_vec(),
            ..GridDump::field2d(field)
        }
    }

    fn validate(&self) -> Result<()> {
        let nd = self.dims.len();
        if !(1..=2).contains(&nd) || self.origin.len() != nd {
            return Err(MrmError::Validation(format!(
                "dump must have 1 or 2 dimensions, got {nd}"
            )));
        }
        let count: u64 = self.dims.iter().product();
        if count != self.data.len() as u64 {
            return Err(MrmError::Validation(format!(
                "dump shape {:?} needs {count} values, found {}",
                self.dims,
                self.data.len()
            )));
        }
        Ok(())
    }
}

pub fn write_dump<W: Write>(mut w: W, dump: &GridDump) -> Result<()> {
    dump.validate()?;
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(dump.dims.len() as u32).to_le_bytes())?;
    w.write_all(&dump.payload.code().to_le_bytes())?;
    for d in &dump.dims {
        w.write_all(&d.to_le_bytes())?;
    }
    w.write_all(&dump.resolution.to_le_bytes())?;
    w.write_all(&dump.scale.to_le_bytes())?;
    w.write_all(&dump.seed.to_le_bytes())?;
    w.write_all(&dump.method.to_le_bytes())?;
    for o in &dump.origin {
        w.write_all(&o.to_le_bytes())?;
    }
    w.write_all(&dump.spacing.to_le_bytes())?;
    let mut buf = Vec::with_capacity(dump.data.len() * 8);
    for v in &dump.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    w.flush()?;
    Ok(())
}

fn malformed(what: &str) -> MrmError {
    MrmError::Validation(format!("malformed grid dump: {what}"))
}

fn take<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => malformed("truncated header or payload"),
        _ => MrmError::Io(e),
    })?;
    Ok(b)
}

fn u32_of<R: Read>(r: &mut R) -> Result<u32> {
    Ok(u32::from_le_bytes(take(r)?))
}

fn u64_of<R: Read>(r: &mut R) -> Result<u64> {
    Ok(u64::from_le_bytes(take(r)?))
}

fn f64_of<R: Read>(r: &mut R) -> Result<f64> {
    Ok(f64::from_le_bytes(take(r)?))
}

pub fn read_dump<R: Read>(mut r: R) -> Result<GridDump> {
    let magic: [u8; 8] = take(&mut r)?;
    if &magic != MAGIC {
        return Err(malformed("bad magic"));
    }
    let version = u32_of(&mut r)?;
    if version != VERSION {
        return Err(malformed(&format!("unsupported version {version}")));
    }
    let nd = u32_of(&mut r)? as usize;
    if !(1..=2).contains(&nd) {
        return Err(malformed(&format!("{nd} dimensions")));
    }
    let payload = match u32_of(&mut r)? {
        0 => Payload::Field,
        1 => Payload::Mass,
        c => return Err(malformed(&format!("payload code {c}"))),
    };
    let dims = (0..nd)
        .map(|_| u64_of(&mut r))
        .collect::<Result<Vec<_>>>()?;
    let count = dims
        .iter()
        .try_fold(1u64, |acc, &d| acc.checked_mul(d))
        .filter(|&c| c <= MAX_VALUES);
    let count = count.ok_or_else(|| malformed(&format!("shape {dims:?} is too large")))?;
    let resolution = f64_of(&mut r)?;
    let scale = f64_of(&mut r)?;
    let seed = u64_of(&mut r)?;
    let method = u32_of(&mut r)?;
    let origin = (0..nd)
        .map(|_| f64_of(&mut r))
        .collect::<Result<Vec<_>>>()?;
    let spacing = f64_of(&mut r)?;
    let data = (0..count)
        .map(|_| f64_of(&mut r))
        .collect::<Result<Vec<_>>>()?;
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(malformed("trailing bytes after payload"));
    }
    Ok(GridDump {
        dims,
        payload,
        resolution,
        scale,
        seed,
        method,
        origin,
        spacing,
        data,
    })
}
