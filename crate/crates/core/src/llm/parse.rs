//! Parsers for the machine-readable response envelopes.

use serde::Deserialize;

use crate::model::SignPrior;

fn json_array(raw: &str) -> Option<Vec<serde_json::Value>> {
    let start = raw.find('[')?;
    let end = raw.rfind(']')?;
    if end < start {
        return None;
    }
    serde_json::from_str(&raw[start..=end]).ok()
}

/// Lowercased, trimmed, de-duplicated keyphrases in first-seen order.
pub fn parse_keyphrases(raw: &str) -> Option<Vec<String>> {
    let items = json_array(raw)?;
    let mut out: Vec<String> = Vec::with_capacity(items.len());
    for item in items {
        let phrase = item.as_str()?.trim().to_lowercase();
        if !phrase.is_empty() && !out.contains(&phrase) {
            out.push(phrase);
        }
    }
    Some(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProposedItem {
    pub question: String,
    pub prior: SignPrior,
}

#[derive(Deserialize)]
struct ProposalObject {
    question: String,
    #[serde(default, alias = "sign", alias = "sign_prior", alias = "direction")]
    prior: Option<String>,
}

/// Proposal items as objects `{question, prior}`; bare strings are accepted
/// with an unknown prior.
pub fn parse_proposals(raw: &str) -> Option<Vec<ProposedItem>> {
    let items = json_array(raw)?;
    items
        .into_iter()
        .map(|item| match item {
            serde_json::Value::String(q) => Some(ProposedItem {
                question: q.trim().to_string(),
                prior: SignPrior::Unknown,
            }),
            other => {
                let obj: ProposalObject = serde_json::from_value(other).ok()?;
                Some(ProposedItem {
                    question: obj.question.trim().to_string(),
                    prior: obj.prior.as_deref().map_or(SignPrior::Unknown, SignPrior::parse_loose),
                })
            }
        })
        .collect()
}

/// A single yes/no token, case-insensitive, trailing punctuation allowed.
pub fn parse_yes_no(raw: &str) -> Option<bool> {
    let token = raw
        .trim()
        .trim_matches(|c: char| c.is_ascii_punctuation() || c.is_whitespace())
        .to_ascii_lowercase();
    match token.as_str() {
        "yes" => Some(true),
        "no" => Some(false),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keyphrases_are_normalized() {
        assert_eq!(
            parse_keyphrases(r#"["fall", "vomiting"]"#).unwrap(),
            vec!["fall", "vomiting"]
        );
        assert_eq!(
            parse_keyphrases(r#"Sure: [" Fall", "fall", "LOC", ""]"#).unwrap(),
            vec!["fall", "loc"]
        );
        assert_eq!(parse_keyphrases("[]").unwrap(), Vec::<String>::new());
        assert!(parse_keyphrases("fall, vomiting").is_none());
        assert!(parse_keyphrases("[1, 2]").is_none());
    }

    #[test]
    fn proposals_accept_objects_and_strings() {
        let items = parse_proposals(
            r#"[{"question": "Did the patient fall?", "prior": "risk"},
                {"question": "Is the patient awake?", "sign": "protective"},
                "Any seizure?"]"#,
        )
        .unwrap();
        assert_eq!(items.len(), 3);
        assert_eq!(items[0].prior, SignPrior::Risk);
        assert_eq!(items[1].prior, SignPrior::Protective);
        assert_eq!(items[2].prior, SignPrior::Unknown);
        assert!(parse_proposals("no list here").is_none());
        assert!(parse_proposals(r#"[{"q": 1}]"#).is_none());
    }

    #[test]
    fn yes_no_tokens() {
        assert_eq!(parse_yes_no("Yes"), Some(true));
        assert_eq!(parse_yes_no(" no. "), Some(false));
        assert_eq!(parse_yes_no("YES!"), Some(true));
        assert_eq!(parse_yes_no("yes, definitely"), None);
        assert_eq!(parse_yes_no("maybe"), None);
    }
}
