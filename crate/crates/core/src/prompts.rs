//! Prompt templates. Placeholders are written `{{name}}`.
//!
//! The defaults are compiled in from `prompts/*.txt`; [`PromptSet::load_dir`]
//! swaps in edited copies from disk (any file missing there keeps its default).

use std::path::Path;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSet {
    pub agent_system: String,
    pub agent_developer: String,
    pub dedup_system: String,
    pub dedup_user: String,
    pub arbiter_system: String,
    pub arbiter_user: String,
}

impl Default for PromptSet {
    fn default() -> Self {
        Self {
            agent_system: include_str!("../prompts/agent_system.txt").to_string(),
            agent_developer: include_str!("../prompts/agent_developer.txt").to_string(),
            dedup_system: include_str!("../prompts/dedup_system.txt").to_string(),
            dedup_user: include_str!("../prompts/dedup_user.txt").to_string(),
            arbiter_system: include_str!("../prompts/arbiter_system.txt").to_string(),
            arbiter_user: include_str!("../prompts/arbiter_user.txt").to_string(),
        }
    }
}

impl PromptSet {
    pub fn load_dir(dir: &Path) -> std::io::Result<Self> {
        let mut set = Self::default();
        let slots: [(&str, &mut String); 6] = [
            ("agent_system.txt", &mut set.agent_system),
            ("agent_developer.txt", &mut set.agent_developer),
            ("dedup_system.txt", &mut set.dedup_system),
            ("dedup_user.txt", &mut set.dedup_user),
            ("arbiter_system.txt", &mut set.arbiter_system),
            ("arbiter_user.txt", &mut set.arbiter_user),
        ];
        for (name, slot) in slots {
            let path = dir.join(name);
            if path.exists() {
                *slot = std::fs::read_to_string(path)?;
            }
        }
        Ok(set)
    }
}

/// Substitute `{{key}}` placeholders. Unknown placeholders are left as-is.
pub fn render(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = template.to_string();
    for (key, value) in vars {
        out = out.replace(&format!("{{{{{key}}}}}"), value);
    }
    out
}
