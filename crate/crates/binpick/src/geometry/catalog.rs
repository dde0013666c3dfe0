use super::Shape;
use serde::Deserialize;
use std::collections::BTreeMap;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("i/o error reading catalog: {0}")]
    Io(#[from] std::io::Error),
    #[error("catalog is not valid json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("catalog entry '{name}': {message}")]
    BadEntry { name: String, message: String },
    #[error("duplicate shape name '{0}'")]
    Duplicate(String),
}

/// Named shapes resolvable from scenes and grasp databases.
#[derive(Clone, Debug, Default)]
pub struct ShapeCatalog {
    shapes: BTreeMap<String, Shape>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CatalogEntry {
    name: String,
    #[serde(rename = "type")]
    kind: String,
    #[serde(default)]
    extents: Option<[f64; 3]>,
    #[serde(default)]
    radius: Option<f64>,
    #[serde(default)]
    height: Option<f64>,
    #[serde(default)]
    path: Option<String>,
}

impl ShapeCatalog {
    /// The two experiment parts: a cylinder (r 15 mm, h 80 mm) and a box
    /// (30 x 40 x 90 mm).
    pub fn builtin() -> Self {
        let mut cat = Self::default();
        cat.insert("cylinder", Shape::cylinder(0.015, 0.08).unwrap())
            .unwrap();
        cat.insert("box", Shape::box_extents(0.03, 0.04, 0.09).unwrap())
            .unwrap();
        cat
    }

    pub fn insert(&mut self, name: &str, shape: Shape) -> Result<(), CatalogError> {
        if self.shapes.contains_key(name) {
            return Err(CatalogError::Duplicate(name.to_string()));
        }
        self.shapes.insert(name.to_string(), shape);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Shape> {
        self.shapes.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.shapes.keys().map(String::as_str)
    }

    /// Loads a JSON catalog file: an array of
    /// `{"name", "type": "box"|"cylinder"|"mesh", ...}` entries. Boxes take
    /// `extents: [w,d,h]`, cylinders `radius`/`height`, meshes a PLY `path`
    /// relative to the catalog file. Entries extend the built-in parts.
    pub fn load_json(path: &Path) -> Result<Self, CatalogError> {
        let text = std::fs::read_to_string(path)?;
        let entries: Vec<CatalogEntry> = serde_json::from_str(&text)?;
        let base_dir = path.parent().unwrap_or(Path::new("."));
        let mut cat = Self::builtin();
        for e in entries {
            let bad = |message: &str| CatalogError::BadEntry {
                name: e.name.clone(),
                message: message.to_string(),
            };
            let shape = match e.kind.as_str() {
                "box" => {
                    let [w, d, h] = e.extents.ok_or_else(|| bad("box requires extents"))?;
                    Shape::box_extents(w, d, h).map_err(|err| bad(&err.to_string()))?
                }
                "cylinder" => {
                    let r = e.radius.ok_or_else(|| bad("cylinder requires radius"))?;
                    let h = e.height.ok_or_else(|| bad("cylinder requires height"))?;
                    Shape::cylinder(r, h).map_err(|err| bad(&err.to_string()))?
                }
                "mesh" => {
                    let rel = e.path.as_ref().ok_or_else(|| bad("mesh requires path"))?;
                    let mesh = crate::ply::read_mesh(&base_dir.join(rel))
                        .map_err(|err| bad(&err.to_string()))?;
                    Shape::mesh(mesh).map_err(|err| bad(&err.to_string()))?
                }
                other => return Err(bad(&format!("unknown shape type '{other}'"))),
            };
            // User entries may shadow built-ins.
            cat.shapes.insert(e.name, shape);
        }
        Ok(cat)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_parts_present() {
        let cat = ShapeCatalog::builtin();
        assert!(matches!(cat.get("cylinder"), Some(Shape::Cylinder { .. })));
        assert!(matches!(cat.get("box"), Some(Shape::Box { .. })));
    }

    #[test]
    fn load_json_catalog_with_mesh() {
        let dir = tempfile::tempdir().unwrap();
        // Tiny ascii tetrahedron.
        std::fs::write(
            dir.path().join("tetra.ply"),
            "ply\nformat ascii 1.0\nelement vertex 4\nproperty float x\nproperty float y\nproperty float z\nelement face 4\nproperty list uchar int vertex_indices\nend_header\n\
             0 0 0\n0.02 0 0\n0 0.02 0\n0 0 0.02\n3 0 2 1\n3 0 1 3\n3 0 3 2\n3 1 2 3\n",
        )
        .unwrap();
        let catalog_path = dir.path().join("catalog.json");
        std::fs::write(
            &catalog_path,
            r#"[
                {"name": "slab", "type": "box", "extents": [0.05, 0.05, 0.01]},
                {"name": "rod", "type": "cylinder", "radius": 0.005, "height": 0.1},
                {"name": "tetra", "type": "mesh", "path": "tetra.ply"}
            ]"#,
        )
        .unwrap();
        let cat = ShapeCatalog::load_json(&catalog_path).unwrap();
        assert!(cat.get("slab").is_some());
        assert!(cat.get("rod").is_some());
        assert!(matches!(cat.get("tetra"), Some(Shape::Mesh(_))));
        // Built-ins still there.
        assert!(cat.get("box").is_some());
    }

    #[test]
    fn rejects_unknown_type() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("catalog.json");
        std::fs::write(&p, r#"[{"name": "x", "type": "sphere", "radius": 1.0}]"#).unwrap();
        assert!(ShapeCatalog::load_json(&p).is_err());
    }
}
