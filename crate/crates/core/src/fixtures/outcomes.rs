use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::board::MetricScope;

/// A metric value in a fixture; accepts `"NaN"`, `"inf"` and `"-inf"`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FixtureValue(#[serde(with = "crate::board::finite")] pub f64);

/// What one simulated job run does.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobOutcome {
    pub duration_s: u64,
    #[serde(default)]
    pub exit_code: i32,
    #[serde(default)]
    pub metrics: BTreeMap<String, FixtureValue>,
    #[serde(default = "full_scope")]
    pub scope: MetricScope,
    /// Text written to the attempt's log file.
    #[serde(default)]
    pub log: String,
}

fn full_scope() -> MetricScope {
    MetricScope::Full
}

/// Outcomes for experiments whose name matches `pattern` (`*` is a wildcard).
/// `attempts[i]` is used for the i-th launch; the last entry repeats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeRule {
    pub pattern: String,
    pub attempts: Vec<JobOutcome>,
}

/// Priority-ordered outcome rules: the first matching pattern wins.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct OutcomeTable {
    pub rules: Vec<OutcomeRule>,
}

impl OutcomeTable {
    pub fn lookup(&self, name: &str, attempt: u32) -> Option<&JobOutcome> {
        let rule = self
            .rules
            .iter()
            .find(|r| wildcard_match(&r.pattern, name))?;
        let idx = (attempt as usize).min(rule.attempts.len().checked_sub(1)?);
        rule.attempts.get(idx)
    }
}

/// Glob-style match where `*` spans any run of characters.
pub fn wildcard_match(pattern: &str, text: &str) -> bool {
    let p: Vec<char> = pattern.chars().collect();
    let t: Vec<char> = text.chars().collect();
    let (mut pi, mut ti) = (0, 0);
    let mut star: Option<(usize, usize)> = None;
    while ti < t.len() {
        if pi < p.len() && p[pi] != '*' && p[pi] == t[ti] {
            pi += 1;
            ti += 1;
        } else if pi < p.len() && p[pi] == '*' {
            star = Some((pi, ti));
            pi += 1;
        } else if let Some((sp, st)) = star {
            pi = sp + 1;
            ti = st + 1;
            star = Some((sp, st + 1));
        } else {
            return false;
        }
    }
    p[pi..].iter().all(|&c| c == '*')
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wildcards() {
        assert!(wildcard_match("exp_*", "exp_001"));
        assert!(wildcard_match("*", ""));
        assert!(wildcard_match("a*c*e", "abcde"));
        assert!(!wildcard_match("a*c", "abd"));
        assert!(wildcard_match("exact", "exact"));
        assert!(!wildcard_match("exact", "exactly"));
    }

    #[test]
    fn first_rule_wins_and_last_attempt_repeats() {
        let ok = JobOutcome {
            duration_s: 10,
            exit_code: 0,
            metrics: BTreeMap::new(),
            scope: MetricScope::Full,
            log: String::new(),
        };
        let bad = JobOutcome {
            exit_code: 1,
            ..ok.clone()
        };
        let table = OutcomeTable {
            rules: vec![
                OutcomeRule {
                    pattern: "flaky".into(),
                    attempts: vec![bad.clone(), ok.clone()],
                },
                OutcomeRule {
                    pattern: "*".into(),
                    attempts: vec![ok.clone()],
                },
            ],
        };
        assert_eq!(table.lookup("flaky", 0), Some(&bad));
        assert_eq!(table.lookup("flaky", 5), Some(&ok));
        assert_eq!(table.lookup("other", 0), Some(&ok));
    }
}
