use std::io::{BufRead, Write};

use super::tokens::Tokens;
use super::{Descriptor, Feature, SfmError, DESCRIPTOR_LEN};

/// Parses a Lowe SIFT keyfile. The stored `row col` pair becomes
/// `y = row`, `x = col`.
pub fn parse_keyfile<R: BufRead>(reader: R) -> Result<Vec<Feature>, SfmError> {
    let mut t = Tokens::new(reader);
    let n: usize = t.parse("feature count")?;
    let dim: usize = t.parse("descriptor length")?;
    if dim != DESCRIPTOR_LEN {
        return Err(SfmError::DimensionMismatch {
            line: t.line_no(),
            found: dim,
        });
    }
    let mut out = Vec::with_capacity(n.min(1 << 20));
    for _ in 0..n {
        let row: f64 = t.parse("keypoint row")?;
        let col: f64 = t.parse("keypoint column")?;
        let scale: f64 = t.parse("keypoint scale")?;
        let orientation: f64 = t.parse("keypoint orientation")?;
        let mut d = [0u8; DESCRIPTOR_LEN];
        for v in &mut d {
            *v = t.parse("descriptor value")?;
        }
        out.push(Feature {
            x: col,
            y: row,
            scale,
            orientation,
            descriptor: Descriptor(d),
        });
    }
    Ok(out)
}

/// Writes features in Lowe keyfile layout (20 descriptor values per line).
pub fn write_keyfile<W: Write>(features: &[Feature], mut w: W) -> std::io::Result<()> {
    writeln!(w, "{} {}", features.len(), DESCRIPTOR_LEN)?;
    for f in features {
        writeln!(w, "{} {} {} {}", f.y, f.x, f.scale, f.orientation)?;
        for chunk in f.descriptor.0.chunks(20) {
            for v in chunk {
                write!(w, " {v}")?;
            }
            writeln!(w)?;
        }
    }
    Ok(())
}
