//! Binary little-endian PLY with `x y z` (float) and `red green blue` (uchar) vertices.
//!
//! Property order in the header is honored on read; writes always use
//! `x y z red green blue`. Any other vertex property or element is rejected.

use std::io::{BufRead, Write};

use super::Point;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Prop {
    X,
    Y,
    Z,
    Red,
    Green,
    Blue,
}

pub fn read_ply(mut reader: impl BufRead) -> Result<Vec<Point>, String> {
    let mut line = String::new();
    let mut next_line = |reader: &mut dyn BufRead| -> Result<String, String> {
        line.clear();
        let n = reader.read_line(&mut line).map_err(|e| e.to_string())?;
        if n == 0 {
            return Err("unexpected end of header".into());
        }
        Ok(line.trim_end_matches(['\r', '\n']).to_string())
    };

    if next_line(&mut reader)? != "ply" {
        return Err("missing `ply` magic".into());
    }
    let mut count: Option<usize> = None;
    let mut props = Vec::new();
    loop {
        let l = next_line(&mut reader)?;
        let tokens: Vec<&str> = l.split_whitespace().collect();
        match tokens.as_slice() {
            ["format", "binary_little_endian", "1.0"] => {}
            ["format", other, ..] => return Err(format!("unsupported format `{other}`")),
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", "vertex", n] => {
                count = Some(n.parse().map_err(|_| format!("bad vertex count `{n}`"))?);
            }
            ["element", other, ..] => return Err(format!("unsupported element `{other}`")),
            ["property", ty, name] => {
                let (prop, want) = match *name {
                    "x" => (Prop::X, "float"),
                    "y" => (Prop::Y, "float"),
                    "z" => (Prop::Z, "float"),
                    "red" => (Prop::Red, "uchar"),
                    "green" => (Prop::Green, "uchar"),
                    "blue" => (Prop::Blue, "uchar"),
                    _ => return Err(format!("unsupported vertex property `{name}`")),
                };
                let ok = match want {
                    "float" => matches!(*ty, "float" | "float32"),
                    _ => matches!(*ty, "uchar" | "uint8"),
                };
                if !ok {
                    return Err(format!("property `{name}` must be {want}, found {ty}"));
                }
                if props.contains(&prop) {
                    return Err(format!("duplicate property `{name}`"));
                }
                props.push(prop);
            }
            ["end_header"] => break,
            _ => return Err(format!("unrecognized header line `{l}`")),
        }
    }
    let count = count.ok_or("missing vertex element")?;
    if props.len() != 6 {
        return Err("vertex must declare x, y, z, red, green, blue".into());
    }
    let stride: usize = props
        .iter()
        .map(|p| match p {
            Prop::X | Prop::Y | Prop::Z => 4,
            _ => 1,
        })
        .sum();
    let mut body = vec![0u8; count * stride];
    reader
        .read_exact(&mut body)
        .map_err(|_| format!("truncated vertex data: expected {count} vertices"))?;

    let mut points = Vec::with_capacity(count);
    for chunk in body.chunks_exact(stride) {
        let mut p = Point {
            xyz: [0.0; 3],
            rgb: [0; 3],
        };
        let mut off = 0;
        for prop in &props {
            match prop {
                Prop::X | Prop::Y | Prop::Z => {
                    let v = f32::from_le_bytes(chunk[off..off + 4].try_into().unwrap());
                    let k = *prop as usize;
                    p.xyz[k] = v as f64;
                    off += 4;
                }
                _ => {
                    p.rgb[*prop as usize - 3] = chunk[off];
                    off += 1;
                }
            }
        }
        points.push(p);
    }
    Ok(points)
}

/// Writes points as binary PLY. Coordinates are narrowed to `f32`.
pub fn write_ply(mut writer: impl Write, points: &[Point]) -> std::io::Result<()> {
    write!(
        writer,
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\n\
         property float x\nproperty float y\nproperty float z\n\
         property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n",
        points.len()
    )?;
    let mut buf = Vec::with_capacity(points.len() * 15);
    for p in points {
        for c in p.xyz {
            buf.extend_from_slice(&(c as f32).to_le_bytes());
        }
        buf.extend_from_slice(&p.rgb);
    }
    writer.write_all(&buf)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let pts = vec![
            Point {
                xyz: [0.5, -1.25, 3.0],
                rgb: [1, 2, 3],
            },
            Point {
                xyz: [10.0, 0.0, -0.125],
                rgb: [255, 0, 128],
            },
        ];
        let mut buf = Vec::new();
        write_ply(&mut buf, &pts).unwrap();
        assert_eq!(read_ply(&buf[..]).unwrap(), pts);
    }

    #[test]
    fn honors_header_property_order() {
        let mut buf = b"ply\nformat binary_little_endian 1.0\nelement vertex 1\n\
            property uchar red\nproperty uchar green\nproperty uchar blue\n\
            property float x\nproperty float y\nproperty float z\nend_header\n"
            .to_vec();
        buf.extend_from_slice(&[9, 8, 7]);
        for v in [1.0f32, 2.0, 3.0] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        let pts = read_ply(&buf[..]).unwrap();
        assert_eq!(pts[0].xyz, [1.0, 2.0, 3.0]);
        assert_eq!(pts[0].rgb, [9, 8, 7]);
    }

    #[test]
    fn rejects_ascii_and_truncation() {
        let ascii = b"ply\nformat ascii 1.0\nelement vertex 0\nend_header\n";
        assert!(read_ply(&ascii[..])
            .unwrap_err()
            .contains("unsupported format"));

        let mut buf = Vec::new();
        write_ply(
            &mut buf,
            &[Point {
                xyz: [0.0; 3],
                rgb: [0; 3],
            }],
        )
        .unwrap();
        buf.truncate(buf.len() - 2);
        assert!(read_ply(&buf[..]).unwrap_err().contains("truncated"));
    }
}
