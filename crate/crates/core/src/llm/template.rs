use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CpmError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptRole {
    Keyphrase,
    InitProposal,
    ReplaceProposal,
    Annotation,
}

impl PromptRole {
    pub const ALL: [PromptRole; 4] = [
        PromptRole::Keyphrase,
        PromptRole::InitProposal,
        PromptRole::ReplaceProposal,
        PromptRole::Annotation,
    ];

    pub fn placeholders(self) -> &'static [&'static str] {
        match self {
            PromptRole::Keyphrase => &["note"],
            PromptRole::InitProposal => &["top_keyphrases", "k"],
            PromptRole::ReplaceProposal => &["top_keyphrases", "current_concepts", "m"],
            PromptRole::Annotation => &["note", "question"],
        }
    }

    /// Response-format instructions appended after the editable body.
    pub fn footer(self) -> &'static str {
        match self {
            PromptRole::Keyphrase => {
                "Respond only with a JSON array of keyphrase strings, for example \
                 [\"fall from standing\", \"vomiting\"]. Do not include any other text."
            }
            PromptRole::InitProposal | PromptRole::ReplaceProposal => {
                "Respond only with a JSON array of objects of the form \
                 {\"question\": \"Does the note mention ...?\", \"prior\": \"risk\"}, where \
                 prior is one of \"risk\", \"protective\" or \"unknown\" and every question \
                 ends with a question mark. Do not include any other text."
            }
            PromptRole::Annotation => "Respond with exactly one word: yes or no.",
        }
    }

    /// Suffix added when a previous response could not be parsed.
    pub fn reminder(self) -> &'static str {
        match self {
            PromptRole::Keyphrase => "Respond only with the JSON array of strings.",
            PromptRole::InitProposal | PromptRole::ReplaceProposal => {
                "Respond only with the JSON array of question objects."
            }
            PromptRole::Annotation => "Respond only with the single word yes or no.",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PromptRole::Keyphrase => "keyphrase",
            PromptRole::InitProposal => "init_proposal",
            PromptRole::ReplaceProposal => "replace_proposal",
            PromptRole::Annotation => "annotation",
        }
    }
}

impl fmt::Display for PromptRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for PromptRole {
    type Err = CpmError;

    fn from_str(s: &str) -> Result<Self> {
        PromptRole::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| CpmError::InvalidArgument(format!("unknown prompt role `{s}`")))
    }
}

/// A human-editable prompt body with `{name}` placeholders.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub role: PromptRole,
    pub body: String,
}

impl PromptTemplate {
    pub fn new(role: PromptRole, body: impl Into<String>) -> Result<Self> {
        let body = body.into();
        for name in role.placeholders() {
            if !body.contains(&format!("{{{name}}}")) {
                return Err(CpmError::MissingPlaceholder {
                    role: role.name().to_string(),
                    placeholder: name.to_string(),
                });
            }
        }
        Ok(PromptTemplate { role, body })
    }

    /// Fills the role's placeholders and appends the fixed format footer.
    /// Braces that are not one of the role's placeholders are left alone.
    pub fn render(&self, vars: &BTreeMap<String, String>, reminder: bool) -> Result<String> {
        let mut out = self.body.clone();
        for name in self.role.placeholders() {
            let value = vars.get(*name).ok_or_else(|| {
                CpmError::InvalidArgument(format!("no value for placeholder {{{name}}}"))
            })?;
            out = out.replace(&format!("{{{name}}}"), value);
        }
        out.push_str("\n\n");
        out.push_str(self.role.footer());
        if reminder {
            out.push_str("\n\n");
            out.push_str(self.role.reminder());
        }
        Ok(out)
    }

    /// Hash of the body plus footer, the part of the prompt fixed per round.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.role.name().as_bytes());
        h.update([0]);
        h.update(self.body.as_bytes());
        h.update([0]);
        h.update(self.role.footer().as_bytes());
        hex::encode(h.finalize())
    }
}
