//! Plain-text dataset formats and windowing.
//!
//! A sequence lives in one directory as `scene.xyz` (one point per
//! line), `motion.txt` (one frame per line, 3 values per joint), and
//! `skeleton.txt` (a keyword-per-line descriptor). Everything is
//! whitespace-separated decimal text so files diff cleanly.

use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::sync::Arc;

use ndarray::{Array2, Array3};

use crate::error::{Error, Result};
use crate::types::{MotionSequence, SceneCloud, Skeleton};

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

fn parse_f64(path: &Path, line: usize, tok: &str) -> Result<f64> {
    tok.parse::<f64>()
        .map_err(|_| parse_err(path, line, format!("expected a number, got '{tok}'")))
}

fn parse_usize(path: &Path, line: usize, tok: &str) -> Result<usize> {
    tok.parse::<usize>()
        .map_err(|_| parse_err(path, line, format!("expected an index, got '{tok}'")))
}

/// Writes a scene as one `x y z` triple per line.
pub fn write_scene(path: &Path, scene: &SceneCloud) -> Result<()> {
    let mut out = String::new();
    for row in scene.points().rows() {
        out.push_str(&format!("{} {} {}\n", row[0], row[1], row[2]));
    }
    fs::write(path, out).map_err(|e| Error::file(path, e))?;
    Ok(())
}

/// Reads a scene written by [`write_scene`].
pub fn read_scene(path: &Path) -> Result<SceneCloud> {
    let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 3 {
            return Err(parse_err(path, i + 1, format!("expected 3 values, got {}", toks.len())));
        }
        for t in &toks {
            rows.push(parse_f64(path, i + 1, t)?);
        }
    }
    if rows.is_empty() {
        return Err(parse_err(path, 1, "scene file holds no points"));
    }
    let n = rows.len() / 3;
    let points = Array2::from_shape_vec((n, 3), rows).expect("triple-per-line layout");
    SceneCloud::new(points)
}

/// Writes a motion as one frame per line, `3 * V` values in joint order.
pub fn write_motion(path: &Path, motion: &MotionSequence) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::file(path, e))?;
    let v = motion.joint_count();
    for t in 0..motion.frame_count() {
        let mut line = String::new();
        for j in 0..v {
            let p = motion.joint(t, j);
            if j > 0 {
                line.push(' ');
            }
            line.push_str(&format!("{} {} {}", p[0], p[1], p[2]));
        }
        writeln!(f, "{line}")?;
    }
    Ok(())
}

/// Reads a motion written by [`write_motion`]; the skeleton fixes V.
pub fn read_motion(path: &Path, skeleton: Arc<Skeleton>) -> Result<MotionSequence> {
    let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    let v = skeleton.joint_count();
    let mut values = Vec::new();
    let mut frames = 0;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 3 * v {
            return Err(parse_err(
                path,
                i + 1,
                format!("expected {} values for {v} joints, got {}", 3 * v, toks.len()),
            ));
        }
        for t in &toks {
            values.push(parse_f64(path, i + 1, t)?);
        }
        frames += 1;
    }
    if frames == 0 {
        return Err(parse_err(path, 1, "motion file holds no frames"));
    }
    let data = Array3::from_shape_vec((frames, v, 3), values).expect("frame-per-line layout");
    MotionSequence::new(data, skeleton)
}

/// Writes a skeleton descriptor: `joint <name>` lines in index order,
/// then `edge a b`, `root i`, `feet i...`, `wrists i...`.
pub fn write_skeleton(path: &Path, skeleton: &Skeleton) -> Result<()> {
    let mut out = String::new();
    for name in &skeleton.joint_names {
        out.push_str(&format!("joint {name}\n"));
    }
    for (a, b) in &skeleton.edges {
        out.push_str(&format!("edge {a} {b}\n"));
    }
    out.push_str(&format!("root {}\n", skeleton.root_index));
    let list = |ids: &[usize]| {
        ids.iter()
            .map(|i| i.to_string())
            .collect::<Vec<_>>()
            .join(" ")
    };
    out.push_str(&format!("feet {}\n", list(&skeleton.feet_indices)));
    out.push_str(&format!("wrists {}\n", list(&skeleton.wrist_indices)));
    fs::write(path, out).map_err(|e| Error::file(path, e))?;
    Ok(())
}

/// Reads a skeleton descriptor written by [`write_skeleton`].
pub fn read_skeleton(path: &Path) -> Result<Arc<Skeleton>> {
    let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    let mut names = Vec::new();
    let mut edges = Vec::new();
    let mut root = None;
    let mut feet = Vec::new();
    let mut wrists = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut toks = line.split_whitespace();
        let keyword = toks.next().expect("non-empty line");
        let rest: Vec<&str> = toks.collect();
        match keyword {
            "joint" => {
                if rest.len() != 1 {
                    return Err(parse_err(path, i + 1, "joint takes exactly one name"));
                }
                names.push(rest[0].to_string());
            }
            "edge" => {
                if rest.len() != 2 {
                    return Err(parse_err(path, i + 1, "edge takes two indices"));
                }
                edges.push((
                    parse_usize(path, i + 1, rest[0])?,
                    parse_usize(path, i + 1, rest[1])?,
                ));
            }
            "root" => {
                if rest.len() != 1 {
                    return Err(parse_err(path, i + 1, "root takes one index"));
                }
                root = Some(parse_usize(path, i + 1, rest[0])?);
            }
            "feet" => {
                for t in &rest {
                    feet.push(parse_usize(path, i + 1, t)?);
                }
            }
            "wrists" => {
                for t in &rest {
                    wrists.push(parse_usize(path, i + 1, t)?);
                }
            }
            other => {
                return Err(parse_err(path, i + 1, format!("unknown keyword '{other}'")));
            }
        }
    }
    let root = root.ok_or_else(|| parse_err(path, 1, "missing root line"))?;
    Skeleton::new(names, edges, root, feet, wrists).map(Arc::new)
}

/// One stored sequence: its scene and its motion.
#[derive(Debug, Clone)]
pub struct Sequence {
    pub scene: SceneCloud,
    pub motion: MotionSequence,
}

/// Writes `scene.xyz`, `motion.txt`, and `skeleton.txt` into `dir`.
pub fn write_sequence(dir: &Path, scene: &SceneCloud, motion: &MotionSequence) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_scene(&dir.join("scene.xyz"), scene)?;
    write_motion(&dir.join("motion.txt"), motion)?;
    write_skeleton(&dir.join("skeleton.txt"), motion.skeleton())?;
    Ok(())
}

/// Reads one sequence directory.
pub fn read_sequence(dir: &Path) -> Result<Sequence> {
    let skeleton = read_skeleton(&dir.join("skeleton.txt"))?;
    let scene = read_scene(&dir.join("scene.xyz"))?;
    let motion = read_motion(&dir.join("motion.txt"), skeleton)?;
    Ok(Sequence { scene, motion })
}

/// Loads every sequence under `root/split/`, sorted by directory name
/// so iteration order is stable across machines.
pub fn load_dataset(root: &Path, split: &str) -> Result<Vec<(String, Sequence)>> {
    let dir = root.join(split);
    let mut ids: Vec<String> = Vec::new();
    for entry in fs::read_dir(&dir)? {
        let entry = entry?;
        if entry.file_type()?.is_dir() {
            ids.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    ids.sort();
    if ids.is_empty() {
        return Err(Error::EmptyInput("dataset split holds no sequences"));
    }
    let mut out = Vec::with_capacity(ids.len());
    for id in ids {
        let seq = read_sequence(&dir.join(&id))?;
        out.push((id, seq));
    }
    Ok(out)
}

/// Splits a sequence into windows of `t_obs + f_fut` frames starting at
/// multiples of `stride`; tails shorter than a window are dropped.
/// Returns `(start_frame, window)` pairs in ascending order.
pub fn window_split(
    motion: &MotionSequence,
    t_obs: usize,
    f_fut: usize,
    stride: usize,
) -> Result<Vec<(usize, MotionSequence)>> {
    if stride == 0 {
        return Err(Error::InvalidConfig("window stride must be positive".into()));
    }
    let len = t_obs + f_fut;
    let mut out = Vec::new();
    let mut start = 0;
    while start + len <= motion.frame_count() {
        out.push((start, motion.window(start, len)?));
        start += stride;
    }
    Ok(out)
}

/// Builds a square grid of ground points centered under the final root
/// position, for motions captured without any scene. The ground height
/// is the lowest coordinate any joint reaches, so planted feet define
/// the floor.
pub fn planar_ground_scene(
    motion: &MotionSequence,
    extent: f64,
    spacing: f64,
) -> Result<SceneCloud> {
    if extent <= 0.0 || spacing <= 0.0 {
        return Err(Error::InvalidConfig(
            "ground extent and spacing must be positive".into(),
        ));
    }
    let root = motion.skeleton().root_index;
    let last = motion.joint(motion.frame_count() - 1, root);
    let ground = motion
        .data()
        .slice(ndarray::s![.., .., 2])
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);

    let per_side = (extent / spacing + 1e-9).floor() as usize + 1;
    let half = (per_side - 1) as f64 * spacing / 2.0;
    let mut points = Array2::zeros((per_side * per_side, 3));
    for ix in 0..per_side {
        for iy in 0..per_side {
            let r = ix * per_side + iy;
            points[[r, 0]] = last[0] - half + ix as f64 * spacing;
            points[[r, 1]] = last[1] - half + iy as f64 * spacing;
            points[[r, 2]] = ground;
        }
    }
    SceneCloud::new(points)
}
