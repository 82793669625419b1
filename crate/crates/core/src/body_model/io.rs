//! Little-endian binary container for body models.
//!
//! ```text
//! magic    "CHMPBODY"
//! version  u32 (= 1)
//! V K S P L F   u32 each
//! template_vertices  f64[V*3]
//! shape_dirs         f64[V*3*S]
//! pose_dirs          f64[V*3*P]   (absent when P = 0)
//! skin_weights       f64[V*K]
//! joint_regressor    f64[K*V]
//! parents            i32[K]
//! part_labels        u32[V]
//! faces              u32[F*3]
//! ```

use std::collections::VecDeque;
use std::path::Path;

use super::BodyModel;
use crate::error::{Error, Result};

pub const BODY_MAGIC: &[u8; 8] = b"CHMPBODY";
pub const BODY_VERSION: u32 = 1;

pub fn write_body_model(model: &BodyModel, path: &Path) -> Result<()> {
    model.validate()?;
    let bytes = encode(model);
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_body_model(path: &Path) -> Result<BodyModel> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| match e {
        Error::Format { message, .. } => Error::format(path.display().to_string(), message),
        Error::InvalidArgument(m) | Error::Dimension(m) => {
            Error::format(path.display().to_string(), m)
        }
        other => other,
    })
}

pub(crate) fn encode(model: &BodyModel) -> Vec<u8> {
    let v = model.num_vertices();
    let p = model.pose_dirs.as_ref().map_or(0, |_| model.num_pose_features());
    let mut out = Vec::new();
    out.extend_from_slice(BODY_MAGIC);
    for x in [
        BODY_VERSION,
        v as u32,
        model.num_joints() as u32,
        model.num_shape as u32,
        p as u32,
        model.num_labels as u32,
        model.faces.len() as u32,
    ] {
        out.extend_from_slice(&x.to_le_bytes());
    }
    let put_f64 = |out: &mut Vec<u8>, xs: &[f64]| {
        for x in xs {
            out.extend_from_slice(&x.to_le_bytes());
        }
    };
    let flat: Vec<f64> = model.template_vertices.iter().flatten().copied().collect();
    put_f64(&mut out, &flat);
    put_f64(&mut out, &model.shape_dirs);
    if let Some(pd) = &model.pose_dirs {
        put_f64(&mut out, pd);
    }
    put_f64(&mut out, &model.skin_weights);
    put_f64(&mut out, &model.joint_regressor);
    for p in &model.parents {
        out.extend_from_slice(&p.to_le_bytes());
    }
    for l in &model.part_labels {
        out.extend_from_slice(&l.to_le_bytes());
    }
    for f in model.faces.iter().flatten() {
        out.extend_from_slice(&f.to_le_bytes());
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::format(
                "body model",
                format!("truncated while reading {what} at byte {}", self.pos),
            )),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| overflow(what))?, what)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn u32s(&mut self, n: usize, what: &str) -> Result<Vec<u32>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| overflow(what))?, what)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

fn overflow(what: &str) -> Error {
    Error::format("body model", format!("size of {what} overflows"))
}

pub(crate) fn decode(bytes: &[u8]) -> Result<BodyModel> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(8, "magic")? != BODY_MAGIC {
        return Err(Error::format("body model", "bad magic, expected CHMPBODY"));
    }
    let version = c.u32("version")?;
    if version != BODY_VERSION {
        return Err(Error::format(
            "body model",
            format!("unsupported version {version}, expected {BODY_VERSION}"),
        ));
    }
    let v = c.u32("V")? as usize;
    let k = c.u32("K")? as usize;
    let s = c.u32("S")? as usize;
    let p = c.u32("P")? as usize;
    let l = c.u32("L")? as usize;
    let f = c.u32("F")? as usize;
    if k == 0 {
        return Err(Error::format("body model", "K = 0"));
    }
    if p != 0 && p != 9 * (k - 1) {
        return Err(Error::format(
            "body model",
            format!("P = {p}, expected 0 or 9*(K-1) = {}", 9 * (k - 1)),
        ));
    }
    let verts = c.f64s(v * 3, "template_vertices")?;
    let shape_dirs = c.f64s(v * 3 * s, "shape_dirs")?;
    let pose_dirs = if p > 0 {
        Some(c.f64s(v * 3 * p, "pose_dirs")?)
    } else {
        None
    };
    let skin_weights = c.f64s(v * k, "skin_weights")?;
    let joint_regressor = c.f64s(k * v, "joint_regressor")?;
    let parents: Vec<i32> = c.u32s(k, "parents")?.into_iter().map(|x| x as i32).collect();
    let part_labels = c.u32s(v, "part_labels")?;
    let faces_flat = c.u32s(f * 3, "faces")?;
    if c.pos != bytes.len() {
        return Err(Error::format(
            "body model",
            format!("{} trailing bytes after faces", bytes.len() - c.pos),
        ));
    }

    let mut model = BodyModel {
        template_vertices: verts.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
        shape_dirs,
        num_shape: s,
        pose_dirs,
        skin_weights,
        joint_regressor,
        parents,
        part_labels,
        num_labels: l,
        faces: faces_flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
    };
    sort_kinematic_tree(&mut model)?;
    model.validate()?;
    Ok(model)
}

/// Reorders joints breadth-first from the root when `parents[i] < i` does
/// not already hold, remapping every joint-indexed array.
pub(crate) fn sort_kinematic_tree(model: &mut BodyModel) -> Result<()> {
    let k = model.num_joints();
    let sorted = model.parents.first() == Some(&-1)
        && model
            .parents
            .iter()
            .enumerate()
            .skip(1)
            .all(|(i, &p)| p >= 0 && (p as usize) < i);
    if sorted {
        return Ok(());
    }

    let roots: Vec<usize> = (0..k).filter(|&i| model.parents[i] == -1).collect();
    if roots.len() != 1 {
        return Err(Error::format(
            "body model",
            format!("kinematic tree needs exactly one root, found {}", roots.len()),
        ));
    }
    let mut children = vec![Vec::new(); k];
    for (i, &p) in model.parents.iter().enumerate() {
        if p == -1 {
            continue;
        }
        if p < 0 || p as usize >= k || p as usize == i {
            return Err(Error::format(
                "body model",
                format!("parents[{i}] = {p} is out of range"),
            ));
        }
        children[p as usize].push(i);
    }
    let mut order = Vec::with_capacity(k);
    let mut queue = VecDeque::from([roots[0]]);
    while let Some(j) = queue.pop_front() {
        order.push(j);
        queue.extend(children[j].iter().copied());
    }
    if order.len() != k {
        return Err(Error::format(
            "body model",
            "kinematic tree has a cycle or unreachable joints",
        ));
    }
    if model.pose_dirs.is_some() && roots[0] != 0 {
        return Err(Error::format(
            "body model",
            "pose correctives require the root at joint index 0",
        ));
    }

    let mut new_index = vec![0usize; k];
    for (new, &old) in order.iter().enumerate() {
        new_index[old] = new;
    }
    let v = model.num_vertices();
    model.parents = order
        .iter()
        .map(|&old| match model.parents[old] {
            -1 => -1,
            p => new_index[p as usize] as i32,
        })
        .collect();

    let mut skin = vec![0.0; v * k];
    for vi in 0..v {
        for old in 0..k {
            skin[vi * k + new_index[old]] = model.skin_weights[vi * k + old];
        }
    }
    model.skin_weights = skin;

    let mut reg = vec![0.0; k * v];
    for old in 0..k {
        let new = new_index[old];
        reg[new * v..(new + 1) * v].copy_from_slice(&model.joint_regressor[old * v..(old + 1) * v]);
    }
    model.joint_regressor = reg;

    if let Some(pd) = &model.pose_dirs {
        let p = 9 * (k - 1);
        let mut out = vec![0.0; pd.len()];
        for row in 0..v * 3 {
            for old in 1..k {
                let new = new_index[old];
                for e in 0..9 {
                    out[row * p + (new - 1) * 9 + e] = pd[row * p + (old - 1) * 9 + e];
                }
            }
        }
        model.pose_dirs = Some(out);
    }
    Ok(())
}
