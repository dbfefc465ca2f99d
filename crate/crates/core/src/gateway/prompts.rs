//! Versioned prompt templates keyed by prompt id (`<name>.v<N>`).

use std::collections::BTreeMap;
use std::path::Path;

use super::GatewayError;

pub const ROLLOUT: &str = "rollout.v1";
pub const SOFT_UNIFY: &str = "soft_unify.v1";
pub const FORMALIZE: &str = "formalize.v1";
pub const REFINE: &str = "refine.v1";

const BUILTIN: [(&str, &str); 4] = [
    (ROLLOUT, include_str!("../../prompts/rollout.v1.txt")),
    (SOFT_UNIFY, include_str!("../../prompts/soft_unify.v1.txt")),
    (FORMALIZE, include_str!("../../prompts/formalize.v1.txt")),
    (REFINE, include_str!("../../prompts/refine.v1.txt")),
];

#[derive(Debug, Clone)]
pub struct PromptLibrary {
    templates: BTreeMap<String, String>,
}

impl Default for PromptLibrary {
    fn default() -> Self {
        Self::builtin()
    }
}

impl PromptLibrary {
    /// The templates shipped with the crate.
    pub fn builtin() -> Self {
        Self {
            templates: BUILTIN.iter().map(|(id, t)| (id.to_string(), t.to_string())).collect(),
        }
    }

    /// Built-in templates overridden by every `<prompt_id>.txt` in `dir`.
    pub fn with_overrides(dir: &Path) -> Result<Self, GatewayError> {
        let mut lib = Self::builtin();
        let io = |e: std::io::Error| GatewayError::Config(format!("prompts dir {}: {e}", dir.display()));
        for entry in std::fs::read_dir(dir).map_err(io)? {
            let path = entry.map_err(io)?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("txt") {
                continue;
            }
            if let Some(id) = path.file_stem().and_then(|s| s.to_str()) {
                lib.templates
                    .insert(id.to_string(), std::fs::read_to_string(&path).map_err(io)?);
            }
        }
        Ok(lib)
    }

    pub fn template(&self, prompt_id: &str) -> Result<&str, GatewayError> {
        self.templates
            .get(prompt_id)
            .map(String::as_str)
            .ok_or_else(|| GatewayError::Config(format!("unknown prompt id `{prompt_id}`")))
    }

    /// Substitutes each literal placeholder with its value, in order.
    pub fn render(&self, prompt_id: &str, vars: &[(&str, &str)]) -> Result<String, GatewayError> {
        let mut out = self.template(prompt_id)?.to_string();
        for (placeholder, value) in vars {
            out = out.replace(placeholder, value);
        }
        Ok(out)
    }

    /// Rollout prompt for a problem; also the prompt of SFT/DPO records.
    pub fn rollout_prompt(&self, problem: &crate::trace::Problem) -> Result<String, GatewayError> {
        let premises = problem.premises.join(" ");
        self.render(ROLLOUT, &[("[PREMISES]", &premises), ("[QUESTION]", &problem.question)])
    }
}
