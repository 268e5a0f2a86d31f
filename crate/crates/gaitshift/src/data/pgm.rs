//! Binary PGM (P5) frames with pixel values exactly 0 or 255.

use crate::encoder::SilhouetteFrame;

pub fn encode_pgm(frame: &SilhouetteFrame) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", frame.width(), frame.height()).into_bytes();
    out.extend(
        frame
            .pixels()
            .iter()
            .map(|&p| if p == 1.0 { 255u8 } else { 0u8 }),
    );
    out
}

/// Parses a P5 image into a silhouette; `Err` carries a human-readable reason.
pub fn decode_pgm(bytes: &[u8]) -> Result<SilhouetteFrame, String> {
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        // whitespace and comments between header fields
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err("truncated PGM header".into()),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| !b.is_ascii_whitespace()) {
            pos += 1;
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if fields[0] != "P5" {
        return Err(format!("expected P5 magic, found {:?}", fields[0]));
    }
    let num = |s: &str, what: &str| {
        s.parse::<usize>()
            .map_err(|_| format!("bad {what} {s:?} in PGM header"))
    };
    let width = num(&fields[1], "width")?;
    let height = num(&fields[2], "height")?;
    if num(&fields[3], "maxval")? != 255 {
        return Err(format!("maxval must be 255, found {}", fields[3]));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let raster = bytes
        .get(pos..)
        .filter(|r| r.len() == width * height)
        .ok_or_else(|| {
            format!(
                "raster has {} bytes, expected {}",
                bytes.len().saturating_sub(pos),
                width * height
            )
        })?;
    let mut pixels = Vec::with_capacity(raster.len());
    for (i, &v) in raster.iter().enumerate() {
        pixels.push(match v {
            0 => 0.0,
            255 => 1.0,
            other => {
                return Err(format!(
                    "non-binary pixel value {other} at row {}, col {}",
                    i / width,
                    i % width
                ))
            }
        });
    }
    SilhouetteFrame::new(height, width, pixels).map_err(|e| e.to_string())
}
