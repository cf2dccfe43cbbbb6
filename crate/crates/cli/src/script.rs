//! Edit scripts: one JSON object per line, `#` comments and blank lines ignored.
//! Each object is an edit command (`{"op": "add_topology_deformer", "saddle": 0}`)
//! or `{"op": "undo"}`.

use anyhow::{bail, Context, Result};
use morphield::session::EditCommand;
use serde_json::Value;

#[derive(Debug, Clone, PartialEq)]
pub enum Step {
    Apply(EditCommand),
    Undo,
}

pub fn parse_script(text: &str) -> Result<Vec<Step>> {
    let mut steps = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let value: Value = serde_json::from_str(line).with_context(|| format!("line {}: not JSON", i + 1))?;
        if value.get("op").and_then(Value::as_str) == Some("undo") {
            if value.as_object().is_some_and(|o| o.len() != 1) {
                bail!("line {}: undo takes no arguments", i + 1);
            }
            steps.push(Step::Undo);
        } else {
            let cmd = serde_json::from_value(value).with_context(|| format!("line {}: bad edit command", i + 1))?;
            steps.push(Step::Apply(cmd));
        }
    }
    Ok(steps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use morphield::deformer::DeformerKind;
    use morphield::Vec3;

    #[test]
    fn parses_every_command() {
        let text = r#"
# join the spheres
{"op": "add_topology_deformer", "saddle": 0, "rho": 3.0}
{"op": "add_geometry_deformer", "point": [0.5, 0.5, 0.6], "kind": "bulge"}
{"op": "retune", "id": 1, "rho": 5.0}
{"op": "remove", "id": 2}
{"op": "undo"}
"#;
        let steps = parse_script(text).unwrap();
        assert_eq!(steps.len(), 5);
        assert_eq!(
            steps[0],
            Step::Apply(EditCommand::AddTopologyDeformer { saddle: 0, mu: None, phi: None, rho: Some(3.0) })
        );
        assert_eq!(
            steps[1],
            Step::Apply(EditCommand::AddGeometryDeformer {
                point: Vec3::new(0.5, 0.5, 0.6),
                kind: DeformerKind::Bulge,
                radius: None,
                amplitude: None
            })
        );
        assert_eq!(steps[3], Step::Apply(EditCommand::Remove { id: 2 }));
        assert_eq!(steps[4], Step::Undo);
    }

    #[test]
    fn reports_the_offending_line() {
        let err = parse_script("{\"op\": \"remove\", \"id\": 1}\n{\"op\": \"fly\"}").unwrap_err();
        assert!(format!("{err:#}").contains("line 2"));
        assert!(parse_script("{\"op\": \"undo\", \"n\": 2}").is_err());
        assert!(parse_script("nope").is_err());
    }
}
