//! Surfel scenes as PLY point clouds.
//!
//! Written as `binary_little_endian` with every property stored as `double`,
//! so a scene survives a write/read cycle bit for bit:
//!
//! ```text
//! x y z  nx ny nz  red green blue  opacity  sx sy
//! ```
//!
//! The reader also takes ASCII and big-endian files, any scalar property
//! type, extra properties and extra elements. Integer colors are read as
//! `value / 255`; normals are renormalized; a missing opacity defaults to
//! 0.9. `scale_x`/`scale_y` are accepted for `sx`/`sy`.

use std::io::{BufRead, Write};
use std::path::Path;

use surfelsplat_core::math::{Vec2, Vec3};
use surfelsplat_core::{GaussianSurfel, SurfelScene};

use crate::error::{Error, Result};

const PROPERTIES: [&str; 12] = [
    "x", "y", "z", "nx", "ny", "nz", "red", "green", "blue", "opacity", "sx", "sy",
];

const DEFAULT_OPACITY: f64 = 0.9;

pub fn write_ply<W: Write>(w: &mut W, scene: &SurfelScene) -> std::io::Result<()> {
    writeln!(w, "ply")?;
    writeln!(w, "format binary_little_endian 1.0")?;
    writeln!(w, "comment surfelsplat gaussian surfels")?;
    writeln!(w, "element vertex {}", scene.len())?;
    for p in PROPERTIES {
        writeln!(w, "property double {p}")?;
    }
    writeln!(w, "end_header")?;
    for s in scene.surfels() {
        let values = [
            s.center.x, s.center.y, s.center.z, s.normal.x, s.normal.y, s.normal.z, s.color.x, s.color.y, s.color.z,
            s.opacity, s.scale.x, s.scale.y,
        ];
        for v in values {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn save_ply(path: &Path, scene: &SurfelScene) -> Result<()> {
    super::write_atomic(path, |w| write_ply(w, scene))
}

pub fn load_ply(path: &Path) -> Result<SurfelScene> {
    read_ply(&mut super::open(path)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Encoding {
    Ascii,
    Little,
    Big,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn is_integer(self) -> bool {
        !matches!(self, Scalar::F32 | Scalar::F64)
    }

    fn decode(self, b: &[u8], enc: Encoding) -> f64 {
        macro_rules! num {
            ($t:ty, $n:expr) => {{
                let mut a = [0u8; $n];
                a.copy_from_slice(&b[..$n]);
                (if enc == Encoding::Big { <$t>::from_be_bytes(a) } else { <$t>::from_le_bytes(a) }) as f64
            }};
        }
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => num!(i16, 2),
            Scalar::U16 => num!(u16, 2),
            Scalar::I32 => num!(i32, 4),
            Scalar::U32 => num!(u32, 4),
            Scalar::F32 => num!(f32, 4),
            Scalar::F64 => num!(f64, 8),
        }
    }
}

#[derive(Debug, Clone)]
enum Property {
    Scalar(String, Scalar),
    List(Scalar, Scalar),
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<Property>,
}

fn bad(reason: impl Into<String>) -> Error {
    Error::format("PLY", reason)
}

fn parse_header<R: BufRead>(r: &mut R) -> Result<(Encoding, Vec<Element>)> {
    let mut line = String::new();
    let mut next = |r: &mut R| -> Result<String> {
        line.clear();
        let n = r.read_line(&mut line).map_err(|e| bad(e.to_string()))?;
        if n == 0 {
            return Err(bad("unexpected end of header"));
        }
        Ok(line.trim_end_matches(['\r', '\n']).to_string())
    };
    if next(r)? != "ply" {
        return Err(bad("missing 'ply' magic"));
    }
    let mut encoding = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        let l = next(r)?;
        let tok: Vec<&str> = l.split_whitespace().collect();
        match tok.as_slice() {
            ["end_header"] => break,
            ["format", f, _] => {
                encoding = Some(match *f {
                    "ascii" => Encoding::Ascii,
                    "binary_little_endian" => Encoding::Little,
                    "binary_big_endian" => Encoding::Big,
                    other => return Err(bad(format!("unknown format '{other}'"))),
                })
            }
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count.parse().map_err(|_| bad(format!("bad element count '{count}'")))?,
                properties: Vec::new(),
            }),
            ["property", "list", c, t, _name] => {
                let el = elements.last_mut().ok_or_else(|| bad("property before element"))?;
                let c = Scalar::parse(c).ok_or_else(|| bad(format!("unknown type '{c}'")))?;
                let t = Scalar::parse(t).ok_or_else(|| bad(format!("unknown type '{t}'")))?;
                el.properties.push(Property::List(c, t));
            }
            ["property", t, name] => {
                let el = elements.last_mut().ok_or_else(|| bad("property before element"))?;
                let t = Scalar::parse(t).ok_or_else(|| bad(format!("unknown type '{t}'")))?;
                el.properties.push(Property::Scalar(name.to_string(), t));
            }
            _ => return Err(bad(format!("unrecognized header line '{l}'"))),
        }
    }
    Ok((encoding.ok_or_else(|| bad("missing format line"))?, elements))
}

struct Values<'a, R> {
    r: &'a mut R,
    enc: Encoding,
    tokens: std::vec::IntoIter<String>,
}

impl<R: BufRead> Values<'_, R> {
    fn next(&mut self, t: Scalar) -> Result<f64> {
        if self.enc == Encoding::Ascii {
            loop {
                if let Some(tok) = self.tokens.next() {
                    return tok.parse::<f64>().map_err(|_| bad(format!("bad number '{tok}'")));
                }
                let mut line = String::new();
                if self.r.read_line(&mut line).map_err(|e| bad(e.to_string()))? == 0 {
                    return Err(bad("unexpected end of data"));
                }
                self.tokens = line.split_whitespace().map(str::to_string).collect::<Vec<_>>().into_iter();
            }
        }
        let mut buf = [0u8; 8];
        self.r.read_exact(&mut buf[..t.size()]).map_err(|_| bad("unexpected end of data"))?;
        Ok(t.decode(&buf, self.enc))
    }
}

pub fn read_ply<R: BufRead>(r: &mut R) -> Result<SurfelScene> {
    let (enc, elements) = parse_header(r)?;
    let mut values = Values { r, enc, tokens: Vec::new().into_iter() };
    let mut surfels = None;
    for el in &elements {
        if el.name != "vertex" {
            for _ in 0..el.count {
                for p in &el.properties {
                    match p {
                        Property::Scalar(_, t) => {
                            values.next(*t)?;
                        }
                        Property::List(c, t) => {
                            let n = values.next(*c)? as usize;
                            for _ in 0..n {
                                values.next(*t)?;
                            }
                        }
                    }
                }
            }
            continue;
        }
        let slot = |name: &str| {
            let alias = match name {
                "sx" => "scale_x",
                "sy" => "scale_y",
                other => other,
            };
            el.properties.iter().position(|p| matches!(p, Property::Scalar(n, _) if n == name || n == alias))
        };
        let slots: Vec<Option<usize>> = PROPERTIES.iter().map(|p| slot(p)).collect();
        for (name, s) in PROPERTIES.iter().zip(&slots) {
            if s.is_none() && *name != "opacity" {
                return Err(bad(format!("vertex element lacks property '{name}'")));
            }
        }
        let color_integer: Vec<bool> = (6..9)
            .map(|i| matches!(el.properties[slots[i].unwrap()], Property::Scalar(_, t) if t.is_integer()))
            .collect();
        let mut out = Vec::with_capacity(el.count);
        let mut row = vec![0.0; el.properties.len()];
        for _ in 0..el.count {
            for (j, p) in el.properties.iter().enumerate() {
                match p {
                    Property::Scalar(_, t) => row[j] = values.next(*t)?,
                    Property::List(c, t) => {
                        let n = values.next(*c)? as usize;
                        for _ in 0..n {
                            values.next(*t)?;
                        }
                    }
                }
            }
            let get = |i: usize| slots[i].map(|s| row[s]);
            let color = |i: usize| {
                let v = get(i).unwrap();
                if color_integer[i - 6] {
                    v / 255.0
                } else {
                    v
                }
            };
            let normal = Vec3::new(get(3).unwrap(), get(4).unwrap(), get(5).unwrap());
            let len = normal.norm();
            out.push(GaussianSurfel {
                center: Vec3::new(get(0).unwrap(), get(1).unwrap(), get(2).unwrap()),
                // exact unit normals are left untouched so round trips stay bit-exact
                normal: if (len - 1.0).abs() < 1e-15 || len == 0.0 { normal } else { normal / len },
                color: Vec3::new(color(6), color(7), color(8)),
                opacity: get(9).unwrap_or(DEFAULT_OPACITY),
                scale: Vec2::new(get(10).unwrap(), get(11).unwrap()),
            });
        }
        surfels = Some(out);
    }
    let surfels = surfels.ok_or_else(|| bad("no vertex element"))?;
    Ok(SurfelScene::new(surfels)?)
}
