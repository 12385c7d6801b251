//! Wavefront OBJ ingestion. Triangles inherit the label of the active group
//! (`g`, `o` or `usemtl` name), looked up in a JSON sidecar of the form
//! `{"leaf_node_3": {"class": 1, "instance": 3}, "stem": {"class": -1}}`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Label, LabeledMesh, SceneError, SemanticClass, NO_INSTANCE};
use crate::geometry::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupLabel {
    pub class: SemanticClass,
    #[serde(default = "no_instance")]
    pub instance: i32,
}

fn no_instance() -> i32 {
    NO_INSTANCE
}

pub type LabelSidecar = BTreeMap<String, GroupLabel>;

const DEFAULT_GROUP: &str = "default";

pub fn parse_obj(text: &str, sidecar: &LabelSidecar) -> Result<LabeledMesh, SceneError> {
    let mut vertices: Vec<Vec3> = Vec::new();
    let mut triangles = Vec::new();
    let mut labels = Vec::new();
    let mut group = DEFAULT_GROUP.to_string();

    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        let mut tokens = line.split_whitespace();
        let Some(tag) = tokens.next() else { continue };
        let parse_err = |msg: String| SceneError::Parse { line: lineno + 1, msg };
        match tag {
            "v" => {
                let coords: Vec<f64> = tokens
                    .take(3)
                    .map(|t| t.parse::<f64>().map_err(|e| parse_err(format!("bad vertex coordinate `{t}`: {e}"))))
                    .collect::<Result<_, _>>()?;
                if coords.len() != 3 {
                    return Err(parse_err("vertex needs three coordinates".into()));
                }
                vertices.push(Vec3::new(coords[0], coords[1], coords[2]));
            }
            "f" => {
                let idx: Vec<u32> = tokens
                    .map(|t| resolve_index(t, vertices.len()).ok_or_else(|| parse_err(format!("bad face index `{t}`"))))
                    .collect::<Result<_, _>>()?;
                if idx.len() < 3 {
                    return Err(parse_err("face needs at least three vertices".into()));
                }
                let label = sidecar
                    .get(&group)
                    .map(|g| Label {
                        class: g.class,
                        instance: g.instance,
                    })
                    .ok_or_else(|| SceneError::UnlabeledGroup(group.clone()))?;
                // Fan triangulation of convex polygons.
                for k in 1..idx.len() - 1 {
                    triangles.push([idx[0], idx[k], idx[k + 1]]);
                    labels.push(label);
                }
            }
            "g" | "o" | "usemtl" => {
                group = tokens.next().unwrap_or(DEFAULT_GROUP).to_string();
            }
            _ => {}
        }
    }
    LabeledMesh::new(vertices, triangles, labels)
}

/// OBJ indices are 1-based; negative values count back from the last vertex.
fn resolve_index(token: &str, count: usize) -> Option<u32> {
    let first = token.split('/').next()?;
    let i: i64 = first.parse().ok()?;
    let resolved = if i > 0 { i - 1 } else { count as i64 + i };
    (0..count as i64).contains(&resolved).then_some(resolved as u32)
}

pub fn load_labeled_obj(obj_path: &Path, sidecar_path: &Path) -> Result<LabeledMesh, SceneError> {
    let text = std::fs::read_to_string(obj_path)?;
    let sidecar: LabelSidecar = serde_json::from_str(&std::fs::read_to_string(sidecar_path)?)?;
    parse_obj(&text, &sidecar)
}

/// Writes one OBJ group per distinct label, plus the matching sidecar.
pub fn write_obj(mesh: &LabeledMesh) -> (String, LabelSidecar) {
    let mut out = String::new();
    for v in &mesh.vertices {
        let _ = writeln!(out, "v {} {} {}", v.x, v.y, v.z);
    }
    let mut groups: BTreeMap<(i8, i32), Vec<usize>> = BTreeMap::new();
    for (i, l) in mesh.labels.iter().enumerate() {
        groups.entry((l.class.code(), l.instance)).or_default().push(i);
    }
    let mut sidecar = LabelSidecar::new();
    for ((class, instance), tris) in groups {
        let class = SemanticClass::try_from(class).expect("label codes come from SemanticClass");
        let name = format!("{class}_{instance}");
        let _ = writeln!(out, "g {name}");
        for t in tris {
            let [a, b, c] = mesh.triangles[t];
            let _ = writeln!(out, "f {} {} {}", a + 1, b + 1, c + 1);
        }
        sidecar.insert(name, GroupLabel { class, instance });
    }
    (out, sidecar)
}
