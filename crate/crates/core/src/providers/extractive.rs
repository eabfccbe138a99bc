use super::{ClusterText, ProviderError, Summarizer};

/// Joins node and edge texts in canonical order as
/// `"id: text; ...; edges: src–dst: text; ..."` and keeps at most `budget`
/// whitespace tokens (never fewer than one).
pub fn extractive_summarize(cluster: &ClusterText, budget: usize) -> String {
    let mut nodes: Vec<&(String, String)> = cluster.nodes.iter().collect();
    nodes.sort();
    let mut edges: Vec<(&str, &str, Option<&str>)> = cluster
        .edges
        .iter()
        .map(|(s, d, t)| {
            let (a, b) = if s <= d { (s, d) } else { (d, s) };
            (a.as_str(), b.as_str(), t.as_deref())
        })
        .collect();
    edges.sort();

    let mut parts: Vec<String> = nodes.iter().map(|(id, text)| format!("{id}: {text}")).collect();
    for (i, (s, d, t)) in edges.iter().enumerate() {
        let head = if i == 0 { "edges: " } else { "" };
        parts.push(match t {
            Some(t) => format!("{head}{s}–{d}: {t}"),
            None => format!("{head}{s}–{d}"),
        });
    }
    truncate_tokens(&parts.join("; "), budget)
}

fn truncate_tokens(text: &str, budget: usize) -> String {
    let tokens: Vec<&str> = text.split_whitespace().collect();
    if tokens.len() <= budget {
        return text.trim().to_string();
    }
    tokens[..budget.max(1)].join(" ")
}

#[derive(Debug, Clone)]
pub struct ExtractiveSummarizer {
    budget: usize,
}

impl ExtractiveSummarizer {
    pub fn new(budget: usize) -> Self {
        Self { budget }
    }
}

impl Summarizer for ExtractiveSummarizer {
    fn id(&self) -> String {
        format!("extractive-v1:budget={}", self.budget)
    }

    fn summarize(&self, cluster: &ClusterText) -> Result<String, ProviderError> {
        if cluster.nodes.is_empty() {
            return Err(ProviderError::Malformed("cluster without nodes".into()));
        }
        Ok(extractive_summarize(cluster, self.budget))
    }
}
