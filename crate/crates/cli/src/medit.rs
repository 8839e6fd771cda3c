//! ASCII MEDIT `.mesh` and `.sol` files.
//!
//! Only surface meshes are supported: one `Vertices` and one `Triangles`
//! section. Vertex and triangle references are written as 0 and ignored on
//! input. `Edges`, `Corners`, `Ridges` and the `Required*` sections that
//! mesh generators commonly add are skipped.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use neumann_core::{Surface, SurfaceMesh};

#[derive(Debug, thiserror::Error)]
pub enum MeditError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("{0} values for a mesh with {1} vertices")]
    Count(usize, usize),

    #[error("value {index} is not finite ({value})")]
    NotFinite { index: usize, value: f64 },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Mesh(#[from] neumann_core::Error),
}

pub fn write_medit_mesh(mesh: &SurfaceMesh, path: impl AsRef<Path>) -> Result<(), MeditError> {
    let mut out = BufWriter::new(File::create(path)?);
    write_mesh(mesh, &mut out)?;
    out.flush()?;
    Ok(())
}

pub fn write_mesh<W: Write>(mesh: &SurfaceMesh, out: &mut W) -> io::Result<()> {
    writeln!(out, "MeshVersionFormatted 2\n\nDimension 3\n")?;
    writeln!(out, "Vertices\n{}", mesh.n_vertices())?;
    for [x, y, z] in mesh.vertices() {
        writeln!(out, "{x} {y} {z} 0")?;
    }
    writeln!(out, "\nTriangles\n{}", mesh.n_triangles())?;
    for [a, b, c] in mesh.triangles() {
        writeln!(out, "{} {} {} 0", a + 1, b + 1, c + 1)?;
    }
    writeln!(out, "\nEnd")
}

/// Per-vertex scalar field for `mesh`; non-finite values are rejected
/// before anything is written.
pub fn write_medit_sol(mesh: &SurfaceMesh, values: &[f64], path: impl AsRef<Path>) -> Result<(), MeditError> {
    check_sol(mesh, values)?;
    let mut out = BufWriter::new(File::create(path)?);
    write_sol(values, &mut out)?;
    out.flush()?;
    Ok(())
}

fn check_sol(mesh: &SurfaceMesh, values: &[f64]) -> Result<(), MeditError> {
    if values.len() != mesh.n_vertices() {
        return Err(MeditError::Count(values.len(), mesh.n_vertices()));
    }
    if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(MeditError::NotFinite { index, value });
    }
    Ok(())
}

pub fn write_sol<W: Write>(values: &[f64], out: &mut W) -> io::Result<()> {
    writeln!(out, "MeshVersionFormatted 2\n\nDimension 3\n")?;
    writeln!(out, "SolAtVertices\n{}\n1 1\n", values.len())?;
    for v in values {
        writeln!(out, "{v}")?;
    }
    writeln!(out, "\nEnd")
}

pub fn read_medit_mesh(path: impl AsRef<Path>) -> Result<SurfaceMesh, MeditError> {
    parse_mesh(&std::fs::read_to_string(path)?)
}

pub fn read_medit_sol(path: impl AsRef<Path>) -> Result<Vec<f64>, MeditError> {
    parse_sol(&std::fs::read_to_string(path)?)
}

struct Tokens<'a> {
    items: Vec<(usize, &'a str)>,
    pos: usize,
}

impl<'a> Tokens<'a> {
    fn new(text: &'a str) -> Self {
        let items = text
            .lines()
            .enumerate()
            .flat_map(|(i, line)| {
                let line = line.split('#').next().unwrap_or("");
                line.split_whitespace().map(move |t| (i + 1, t))
            })
            .collect();
        Self { items, pos: 0 }
    }

    /// Line just past the last token, for errors at end of input.
    fn eof_line(&self) -> usize {
        self.items.last().map_or(1, |(l, _)| l + 1)
    }

    fn next(&mut self, what: &str) -> Result<(usize, &'a str), MeditError> {
        match self.items.get(self.pos) {
            Some(&item) => {
                self.pos += 1;
                Ok(item)
            }
            None => Err(MeditError::Parse {
                line: self.eof_line(),
                message: format!("unexpected end of file, expected {what}"),
            }),
        }
    }

    fn parse<T: std::str::FromStr>(&mut self, what: &str) -> Result<(usize, T), MeditError> {
        let (line, tok) = self.next(what)?;
        tok.parse().map(|v| (line, v)).map_err(|_| MeditError::Parse {
            line,
            message: format!("expected {what}, found `{tok}`"),
        })
    }

    fn header(&mut self) -> Result<(), MeditError> {
        let (line, tok) = self.next("MeshVersionFormatted")?;
        if tok != "MeshVersionFormatted" {
            return Err(parse_error(
                line,
                format!("expected MeshVersionFormatted, found `{tok}`"),
            ));
        }
        let (line, version) = self.parse::<u32>("format version")?;
        if !(1..=4).contains(&version) {
            return Err(parse_error(line, format!("unsupported format version {version}")));
        }
        Ok(())
    }

    fn dimension(&mut self) -> Result<(), MeditError> {
        let (line, dim) = self.parse::<u32>("dimension")?;
        if dim != 3 {
            return Err(parse_error(line, format!("dimension must be 3, got {dim}")));
        }
        Ok(())
    }
}

fn parse_error(line: usize, message: String) -> MeditError {
    MeditError::Parse { line, message }
}

fn skipped_width(keyword: &str) -> Option<usize> {
    match keyword {
        "Edges" => Some(3),
        "Corners" | "Ridges" | "RequiredVertices" | "RequiredEdges" | "RequiredTriangles" => Some(1),
        _ => None,
    }
}

pub fn parse_mesh(text: &str) -> Result<SurfaceMesh, MeditError> {
    let mut tokens = Tokens::new(text);
    tokens.header()?;
    let mut vertices: Option<Vec<[f64; 3]>> = None;
    let mut triangles: Option<(usize, Vec<[usize; 3]>)> = None;
    loop {
        let (line, keyword) = tokens.next("section keyword or End")?;
        match keyword {
            "End" => break,
            "Dimension" => tokens.dimension()?,
            "Vertices" => {
                if vertices.is_some() {
                    return Err(parse_error(line, "duplicate Vertices section".into()));
                }
                let (_, count) = tokens.parse::<usize>("vertex count")?;
                let mut list = Vec::with_capacity(count);
                for _ in 0..count {
                    let (_, x) = tokens.parse::<f64>("vertex coordinate")?;
                    let (_, y) = tokens.parse::<f64>("vertex coordinate")?;
                    let (_, z) = tokens.parse::<f64>("vertex coordinate")?;
                    tokens.parse::<i64>("vertex reference")?;
                    list.push([x, y, z]);
                }
                vertices = Some(list);
            }
            "Triangles" => {
                if triangles.is_some() {
                    return Err(parse_error(line, "duplicate Triangles section".into()));
                }
                let (_, count) = tokens.parse::<usize>("triangle count")?;
                let mut list = Vec::with_capacity(count);
                for _ in 0..count {
                    let mut tri = [0; 3];
                    for slot in &mut tri {
                        let (l, v) = tokens.parse::<usize>("vertex index")?;
                        if v == 0 {
                            return Err(parse_error(l, "vertex indices are 1-based".into()));
                        }
                        *slot = v - 1;
                    }
                    tokens.parse::<i64>("triangle reference")?;
                    list.push(tri);
                }
                triangles = Some((line, list));
            }
            other => match skipped_width(other) {
                Some(width) => {
                    let (_, count) = tokens.parse::<usize>("entry count")?;
                    for _ in 0..count * width {
                        tokens.parse::<i64>("integer entry")?;
                    }
                }
                None => return Err(parse_error(line, format!("unknown section `{other}`"))),
            },
        }
    }
    let eof = tokens.eof_line();
    let vertices = vertices.ok_or_else(|| parse_error(eof, "missing Vertices section".into()))?;
    let (tri_line, triangles) = triangles.ok_or_else(|| parse_error(eof, "missing Triangles section".into()))?;
    if let Some(bad) = triangles.iter().flatten().find(|&&v| v >= vertices.len()) {
        return Err(parse_error(
            tri_line,
            format!("vertex index {} exceeds vertex count {}", bad + 1, vertices.len()),
        ));
    }
    Ok(SurfaceMesh::new(vertices, triangles, Surface::Imported)?)
}

pub fn parse_sol(text: &str) -> Result<Vec<f64>, MeditError> {
    let mut tokens = Tokens::new(text);
    tokens.header()?;
    let mut values = None;
    loop {
        let (line, keyword) = tokens.next("section keyword or End")?;
        match keyword {
            "End" => break,
            "Dimension" => tokens.dimension()?,
            "SolAtVertices" => {
                let (_, count) = tokens.parse::<usize>("value count")?;
                let (l, fields) = tokens.parse::<usize>("field count")?;
                let (_, kind) = tokens.parse::<usize>("field type")?;
                if fields != 1 || kind != 1 {
                    return Err(parse_error(l, "only one scalar field is supported".into()));
                }
                let mut list = Vec::with_capacity(count);
                for _ in 0..count {
                    list.push(tokens.parse::<f64>("value")?.1);
                }
                values = Some(list);
            }
            other => return Err(parse_error(line, format!("unknown section `{other}`"))),
        }
    }
    values.ok_or_else(|| parse_error(tokens.eof_line(), "missing SolAtVertices section".into()))
}
