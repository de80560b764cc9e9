//! JSON-Lines scene files: one scene per line under a versioned schema tag.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Scene, SceneError};

pub const SCENE_SCHEMA: &str = "biff-scene/1";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneLine {
    schema: String,
    scene: Scene,
}

pub fn write_scenes_to_string(scenes: &[Scene]) -> String {
    let mut out = String::new();
    for scene in scenes {
        let line = SceneLine { schema: SCENE_SCHEMA.to_string(), scene: scene.clone() };
        out.push_str(&serde_json::to_string(&line).expect("scene serialization is infallible"));
        out.push('\n');
    }
    out
}

pub fn write_scenes(path: &Path, scenes: &[Scene]) -> Result<(), SceneError> {
    let f = fs::File::create(path)?;
    let mut w = BufWriter::new(f);
    w.write_all(write_scenes_to_string(scenes).as_bytes())?;
    w.flush()?;
    Ok(())
}

pub fn read_scenes_from_str(text: &str) -> Result<Vec<Scene>, SceneError> {
    let mut scenes = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let parsed: SceneLine = serde_json::from_str(raw)
            .map_err(|e| SceneError::Parse { line: line_no, msg: e.to_string() })?;
        if parsed.schema != SCENE_SCHEMA {
            return Err(SceneError::Parse {
                line: line_no,
                msg: format!("unsupported schema '{}', expected '{SCENE_SCHEMA}'", parsed.schema),
            });
        }
        parsed
            .scene
            .validate()
            .map_err(|e| SceneError::Parse { line: line_no, msg: e.to_string() })?;
        scenes.push(parsed.scene);
    }
    Ok(scenes)
}

pub fn read_scenes(path: &Path) -> Result<Vec<Scene>, SceneError> {
    let text = fs::read_to_string(path)?;
    read_scenes_from_str(&text)
}
