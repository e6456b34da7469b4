//! On-disk formats: CSV tables, JSON documents and ASCII PLY point sets.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    DepthField, EdgeLengths, Intrinsics, NeighborGraph, Reconstruction, TrackSet,
};
use crate::incremental::DensifyStage;
use crate::synth::{SceneConfig, SyntheticScene};

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        file: path.display().to_string(),
        line,
        message: message.into(),
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.kind() {
        csv::ErrorKind::Io(_) => Error::io(path, std::io::Error::other(e.to_string())),
        csv::ErrorKind::Deserialize { err, .. } => {
            let field = err
                .field()
                .map_or(String::new(), |f| format!("field {}: ", f + 1));
            parse_err(path, line, format!("{field}{}", err.kind()))
        }
        _ => parse_err(path, line, e.to_string()),
    }
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(BufWriter::new(
        fs::File::create(path).map_err(|e| Error::io(path, e))?,
    ))
}

/// Reads every record of a headed CSV file, with the line of each record.
fn read_records<T: DeserializeOwned>(path: &Path) -> Result<Vec<(usize, T)>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    let mut out = Vec::new();
    for rec in rdr.deserialize::<T>() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        out.push((out.len() + 2, rec));
    }
    Ok(out)
}

fn write_records<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| parse_err(path, e.line(), e.to_string()))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::io(path, e.into()))?;
    writeln!(w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

#[derive(Debug, Serialize, Deserialize)]
struct TrackRow {
    view: usize,
    point: usize,
    x: f64,
    y: f64,
    visible: u8,
}

/// Rows for invisible observations may be omitted.
pub fn read_tracks(path: &Path) -> Result<TrackSet> {
    let rows: Vec<(usize, TrackRow)> = read_records(path)?;
    if rows.is_empty() {
        return Err(parse_err(path, 1, "no observations"));
    }
    let nv = rows.iter().map(|(_, r)| r.view).max().unwrap_or(0) + 1;
    let np = rows.iter().map(|(_, r)| r.point).max().unwrap_or(0) + 1;
    let mut pixel = vec![[f64::NAN; 2]; nv * np];
    let mut visible = vec![false; nv * np];
    let mut seen = vec![false; nv * np];
    for (line, r) in rows {
        let idx = r.view * np + r.point;
        if seen[idx] {
            return Err(parse_err(
                path,
                line,
                format!(
                    "duplicate observation of point {} in view {}",
                    r.point, r.view
                ),
            ));
        }
        seen[idx] = true;
        visible[idx] = match r.visible {
            0 => false,
            1 => true,
            v => {
                return Err(parse_err(
                    path,
                    line,
                    format!("field 5: visible must be 0 or 1, got {v}"),
                ))
            }
        };
        if visible[idx] && !(r.x.is_finite() && r.y.is_finite()) {
            return Err(parse_err(path, line, "non-finite pixel"));
        }
        if visible[idx] {
            pixel[idx] = [r.x, r.y];
        }
    }
    TrackSet::new(nv, np, pixel, visible)
}

/// Writes visible observations only.
pub fn write_tracks(path: &Path, tracks: &TrackSet) -> Result<()> {
    let rows = (0..tracks.num_views()).flat_map(|l| {
        tracks.visible_points(l).map(move |i| {
            let [x, y] = tracks.raw_pixel(l, i);
            TrackRow {
                view: l,
                point: i,
                x,
                y,
                visible: 1,
            }
        })
    });
    write_records(path, rows)
}

pub fn read_intrinsics(path: &Path) -> Result<Intrinsics> {
    let k: Intrinsics = read_json(path)?;
    k.validate()?;
    Ok(k)
}

pub fn write_intrinsics(path: &Path, k: &Intrinsics) -> Result<()> {
    write_json(path, k)
}

#[derive(Debug, Serialize, Deserialize)]
struct EdgeRow {
    i: usize,
    j: usize,
    d: f64,
}

/// Undirected `(i, j) -> d` table.
pub fn read_template_table(path: &Path) -> Result<HashMap<(usize, usize), f64>> {
    let mut table = HashMap::new();
    for (line, r) in read_records::<EdgeRow>(path)? {
        if !(r.d.is_finite() && r.d >= 0.0) {
            return Err(parse_err(
                path,
                line,
                format!("field 3: invalid length {}", r.d),
            ));
        }
        if table.insert((r.i.min(r.j), r.i.max(r.j)), r.d).is_some() {
            return Err(parse_err(
                path,
                line,
                format!("edge ({}, {}) listed twice", r.i, r.j),
            ));
        }
    }
    Ok(table)
}

pub fn read_template(path: &Path, graph: &NeighborGraph) -> Result<EdgeLengths> {
    EdgeLengths::for_graph(graph, &read_template_table(path)?)
}

pub fn write_template(path: &Path, graph: &NeighborGraph, lengths: &EdgeLengths) -> Result<()> {
    write_records(
        path,
        graph
            .edges()
            .iter()
            .zip(lengths.as_slice())
            .map(|(&(i, j), &d)| EdgeRow { i, j, d }),
    )
}

#[derive(Debug, Serialize, Deserialize)]
struct DepthRow {
    view: usize,
    point: usize,
    lambda: f64,
}

pub fn read_depths(path: &Path, tracks: &TrackSet, k: &Intrinsics) -> Result<DepthField> {
    let (nv, np) = (tracks.num_views(), tracks.num_points());
    let mut depth = vec![None; nv * np];
    for (line, r) in read_records::<DepthRow>(path)? {
        if r.view >= nv || r.point >= np {
            return Err(parse_err(
                path,
                line,
                format!(
                    "observation ({}, {}) is outside the tracks",
                    r.view, r.point
                ),
            ));
        }
        if !tracks.is_visible(r.view, r.point) {
            return Err(parse_err(
                path,
                line,
                format!("point {} is not visible in view {}", r.point, r.view),
            ));
        }
        if !(r.lambda.is_finite() && r.lambda > 0.0) {
            return Err(parse_err(
                path,
                line,
                format!("field 3: invalid depth {}", r.lambda),
            ));
        }
        depth[r.view * np + r.point] = Some(r.lambda);
    }
    DepthField::new(tracks, *k, depth)
}

pub fn write_depths(path: &Path, field: &DepthField) -> Result<()> {
    let np = field.num_points();
    let rows = field
        .depths()
        .iter()
        .enumerate()
        .filter_map(move |(idx, d)| {
            d.map(|lambda| DepthRow {
                view: idx / np,
                point: idx % np,
                lambda,
            })
        });
    write_records(path, rows)
}

pub fn write_ply(path: &Path, points: &[Vector3<f64>]) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    write!(
        w,
        "ply\nformat ascii 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\nend_header\n",
        points.len()
    )
    .map_err(io)?;
    for p in points {
        writeln!(w, "{} {} {}", p.x, p.y, p.z).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Vertices of an ASCII PLY file. Only the vertex element is read; its
/// `x`, `y`, `z` properties may appear among others.
pub fn read_ply(path: &Path) -> Result<Vec<Vector3<f64>>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file)
        .lines()
        .enumerate()
        .map(|(n, l)| (n + 1, l));
    let mut next = || -> Result<(usize, String)> {
        match lines.next() {
            Some((n, Ok(l))) => Ok((n, l)),
            Some((_, Err(e))) => Err(Error::io(path, e)),
            None => Err(parse_err(path, 0, "unexpected end of file")),
        }
    };
    let (n, magic) = next()?;
    if magic.trim() != "ply" {
        return Err(parse_err(path, n, "missing ply magic"));
    }
    let (mut count, mut props, mut in_vertex) = (None, Vec::new(), false);
    loop {
        let (n, line) = next()?;
        let tok: Vec<&str> = line.split_whitespace().collect();
        match tok.as_slice() {
            ["format", "ascii", _] => {}
            ["format", ..] => return Err(parse_err(path, n, "only ascii PLY is supported")),
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, c] => {
                in_vertex = *name == "vertex";
                if in_vertex {
                    count = Some(
                        c.parse::<usize>()
                            .map_err(|_| parse_err(path, n, format!("bad vertex count {c}")))?,
                    );
                } else if count.is_none() {
                    return Err(parse_err(
                        path,
                        n,
                        format!("element {name} before vertex is not supported"),
                    ));
                }
            }
            ["property", "list", ..] if in_vertex => {
                return Err(parse_err(
                    path,
                    n,
                    "list properties on vertices are not supported",
                ))
            }
            ["property", _, name] if in_vertex => props.push(name.to_string()),
            ["property", ..] => {}
            ["end_header"] => break,
            _ => {
                return Err(parse_err(
                    path,
                    n,
                    format!("unexpected header line '{line}'"),
                ))
            }
        }
    }
    let count = count.ok_or_else(|| parse_err(path, 0, "no vertex element"))?;
    let col = |name: &str| {
        props
            .iter()
            .position(|p| p == name)
            .ok_or_else(|| parse_err(path, 0, format!("vertex has no {name} property")))
    };
    let (cx, cy, cz) = (col("x")?, col("y")?, col("z")?);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let (n, line) = next()?;
        let vals: Vec<f64> = line
            .split_whitespace()
            .enumerate()
            .map(|(f, t)| {
                t.parse::<f64>().map_err(|_| {
                    parse_err(path, n, format!("field {}: '{t}' is not a number", f + 1))
                })
            })
            .collect::<Result<_>>()?;
        if vals.len() != props.len() {
            return Err(parse_err(
                path,
                n,
                format!("expected {} values, found {}", props.len(), vals.len()),
            ));
        }
        out.push(Vector3::new(vals[cx], vals[cy], vals[cz]));
    }
    Ok(out)
}

/// One PLY per view, `view_NNN.ply`, with invisible observations omitted.
pub fn write_reconstruction(dir: &Path, recon: &Reconstruction) -> Result<Vec<PathBuf>> {
    (0..recon.num_views())
        .map(|l| {
            let path = dir.join(format!("view_{l:03}.ply"));
            let pts: Vec<Vector3<f64>> = recon.view_points(l).map(|(_, p)| p).collect();
            write_ply(&path, &pts)?;
            Ok(path)
        })
        .collect()
}

/// Names of the files in a scene bundle.
pub mod bundle {
    pub const TRACKS: &str = "tracks.csv";
    pub const INTRINSICS: &str = "intrinsics.json";
    pub const GT_DEPTHS: &str = "gt_depths.csv";
    pub const TEMPLATE: &str = "template.csv";
    pub const MANIFEST: &str = "manifest.json";
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SceneManifest {
    pub config: SceneConfig,
    pub num_views: usize,
    pub num_points: usize,
    /// Neighbors per point of the graph the template was written for.
    pub k: usize,
    pub files: Vec<String>,
}

/// Writes tracks, ground-truth intrinsics and depths, the template over a
/// `k`-neighbor graph and a manifest.
pub fn write_scene(dir: &Path, scene: &SyntheticScene, k: usize) -> Result<NeighborGraph> {
    let graph = NeighborGraph::build_default(&scene.tracks, k)?;
    write_tracks(&dir.join(bundle::TRACKS), &scene.tracks)?;
    write_intrinsics(&dir.join(bundle::INTRINSICS), &scene.intrinsics)?;
    write_depths(
        &dir.join(bundle::GT_DEPTHS),
        &DepthField::new(&scene.tracks, scene.intrinsics, scene.depths())?,
    )?;
    write_template(&dir.join(bundle::TEMPLATE), &graph, &scene.template(&graph))?;
    let manifest = SceneManifest {
        config: scene.config.clone(),
        num_views: scene.num_views(),
        num_points: scene.num_points(),
        k,
        files: [
            bundle::TRACKS,
            bundle::INTRINSICS,
            bundle::GT_DEPTHS,
            bundle::TEMPLATE,
        ]
        .map(String::from)
        .to_vec(),
    };
    write_json(&dir.join(bundle::MANIFEST), &manifest)?;
    Ok(graph)
}

const CHECKPOINT_MANIFEST: &str = "checkpoint.json";
const CHECKPOINT_DEPTHS: &str = "depths.csv";

#[derive(Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub intrinsics: Intrinsics,
    pub num_views: usize,
    pub num_points: usize,
    pub stages: Vec<DensifyStage>,
}

/// Persists a densification stage: per-view PLYs, the depths and a manifest.
pub fn write_checkpoint(dir: &Path, recon: &Reconstruction, stages: &[DensifyStage]) -> Result<()> {
    write_reconstruction(dir, recon)?;
    write_depths(&dir.join(CHECKPOINT_DEPTHS), recon.depths())?;
    let ck = Checkpoint {
        intrinsics: *recon.intrinsics(),
        num_views: recon.num_views(),
        num_points: recon.num_points(),
        stages: stages.to_vec(),
    };
    write_json(&dir.join(CHECKPOINT_MANIFEST), &ck)
}

/// A previously written checkpoint, if `dir` holds one.
pub fn read_checkpoint(dir: &Path, tracks: &TrackSet) -> Result<Option<(Checkpoint, DepthField)>> {
    let path = dir.join(CHECKPOINT_MANIFEST);
    if !path.exists() {
        return Ok(None);
    }
    let ck: Checkpoint = read_json(&path)?;
    if ck.num_views != tracks.num_views() || ck.num_points != tracks.num_points() {
        return Err(Error::InvalidInput(format!(
            "checkpoint in {} belongs to different tracks",
            dir.display()
        )));
    }
    let field = read_depths(&dir.join(CHECKPOINT_DEPTHS), tracks, &ck.intrinsics)?;
    Ok(Some((ck, field)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn tracks_round_trip_and_omitted_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "t.csv",
            "view,point,x,y,visible\n0,0,1,2,1\n0,1,3,4,1\n1,1,5,6,1\n1,2,7,8,1\n0,2,0,0,0\n",
        );
        let t = read_tracks(&p).unwrap();
        assert_eq!((t.num_views(), t.num_points()), (2, 3));
        assert!(!t.is_visible(1, 0) && !t.is_visible(0, 2));
        assert_eq!(t.pixel(1, 2), Some([7.0, 8.0]));
        let q = dir.path().join("u.csv");
        write_tracks(&q, &t).unwrap();
        let u = read_tracks(&q).unwrap();
        assert_eq!(u.visibility_mask(), t.visibility_mask());
        for l in 0..2 {
            for i in 0..3 {
                assert_eq!(u.pixel(l, i), t.pixel(l, i));
            }
        }
    }

    #[test]
    fn malformed_field_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "t.csv",
            "view,point,x,y,visible\n0,0,1,2,1\n0,1,abc,4,1\n",
        );
        match read_tracks(&p) {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 3);
                assert!(message.contains("field 3"), "{message}");
            }
            other => panic!("{other:?}"),
        }
        let p = write(
            dir.path(),
            "v.csv",
            "view,point,x,y,visible\n0,0,1,2,1\n0,1,3,4,2\n",
        );
        assert!(matches!(read_tracks(&p), Err(Error::Parse { line: 3, .. })));
    }

    #[test]
    fn one_point_view_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "t.csv",
            "view,point,x,y,visible\n0,0,1,2,1\n0,1,3,4,1\n1,0,5,6,1\n",
        );
        assert!(matches!(read_tracks(&p), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn template_and_intrinsics_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let g = NeighborGraph::from_edges(3, 1, 0, [(0, 1), (1, 2)]);
        let d = EdgeLengths::new(vec![0.5, 0.25]).unwrap();
        let p = dir.path().join("tmpl.csv");
        write_template(&p, &g, &d).unwrap();
        assert_eq!(read_template(&p, &g).unwrap(), d);
        let k = Intrinsics::new(500.0, 510.0, 0.5, 320.0, 240.0, 640.0, 480.0).unwrap();
        let q = dir.path().join("k.json");
        write_intrinsics(&q, &k).unwrap();
        assert_eq!(read_intrinsics(&q).unwrap(), k);
        let bad = write(
            dir.path(),
            "bad.json",
            "{\"fx\":1,\"fy\":1,\"skew\":0,\"cx\":0,\"cy\":0,\"width\":1,\"height\":1,\"zoom\":2}",
        );
        assert!(matches!(read_intrinsics(&bad), Err(Error::Parse { .. })));
    }

    #[test]
    fn ply_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.ply");
        let pts = vec![Vector3::new(0.1, -2.0, 3.5), Vector3::new(1e-9, 0.0, 7.0)];
        write_ply(&p, &pts).unwrap();
        assert_eq!(read_ply(&p).unwrap(), pts);
        let q = write(
            dir.path(),
            "b.ply",
            "ply\nformat ascii 1.0\ncomment x\nelement vertex 1\nproperty float z\nproperty float y\nproperty float x\nend_header\n3 2 1\n",
        );
        assert_eq!(read_ply(&q).unwrap(), vec![Vector3::new(1.0, 2.0, 3.0)]);
    }

    #[test]
    fn depths_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let t = TrackSet::fully_visible(1, 2, vec![[1.0, 2.0], [3.0, 4.0]]).unwrap();
        let k = Intrinsics::centered(500.0, 640.0, 480.0).unwrap();
        let f = DepthField::new(&t, k, vec![Some(1.5), Some(2.5)]).unwrap();
        let p = dir.path().join("d.csv");
        write_depths(&p, &f).unwrap();
        assert_eq!(read_depths(&p, &t, &k).unwrap(), f);
    }
}
