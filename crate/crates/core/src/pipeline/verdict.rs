use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    Pass,
    NeedsFixes,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Critical,
    Minor,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub severity: Severity,
    /// `file:line` as the critic wrote it; may be empty.
    pub location: String,
    pub description: String,
}

impl Finding {
    pub fn critical(location: impl Into<String>, description: impl Into<String>) -> Self {
        Self {
            severity: Severity::Critical,
            location: location.into(),
            description: description.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CriticVerdict {
    pub verdict: Verdict,
    pub findings: Vec<Finding>,
}

impl CriticVerdict {
    pub fn criticals(&self) -> impl Iterator<Item = &Finding> {
        self.findings.iter().filter(|f| f.severity == Severity::Critical)
    }
}

fn parse_finding(line: &str) -> Option<Finding> {
    let rest = line.trim().strip_prefix(['-', '*'])?.trim_start();
    let rest = rest.strip_prefix('[')?;
    let (sev, rest) = rest.split_once(']')?;
    let severity = match sev.trim().to_ascii_lowercase().as_str() {
        "critical" => Severity::Critical,
        "minor" => Severity::Minor,
        _ => return None,
    };
    let rest = rest.trim();
    let (location, description) = match rest.split_once(" - ") {
        Some((l, d)) if !l.contains(' ') => (l.trim(), d.trim()),
        _ => ("", rest),
    };
    Some(Finding {
        severity,
        location: location.to_string(),
        description: description.to_string(),
    })
}

/// Reads the `VERDICT:` line and the `- [severity] file:line - text` findings.
///
/// A verdict of NEEDS_FIXES always carries at least one critical finding and
/// PASS carries none: a PASS line next to critical findings is read as
/// NEEDS_FIXES, and a report with no recognisable verdict becomes NEEDS_FIXES
/// with the raw text as its finding.
pub fn parse_verdict(text: &str) -> CriticVerdict {
    let mut verdict = None;
    let mut findings = Vec::new();
    for line in text.lines() {
        let t = line.trim();
        if let Some(head) = t.get(..8).filter(|h| h.eq_ignore_ascii_case("VERDICT:")) {
            let token: String = t[head.len()..]
                .trim()
                .trim_matches(['*', '`', '"', '.'])
                .chars()
                .map(|c| if c == '_' || c == '-' { ' ' } else { c.to_ascii_uppercase() })
                .collect();
            let token = token.split_whitespace().collect::<Vec<_>>().join(" ");
            let v = match token.as_str() {
                "PASS" | "PASSED" => Some(Verdict::Pass),
                "NEEDS FIXES" | "NEEDS FIX" => Some(Verdict::NeedsFixes),
                _ => None,
            };
            verdict = verdict.or(v);
        } else if let Some(f) = parse_finding(t) {
            findings.push(f);
        }
    }
    let has_critical = findings.iter().any(|f| f.severity == Severity::Critical);
    match verdict {
        Some(Verdict::Pass) if !has_critical => CriticVerdict {
            verdict: Verdict::Pass,
            findings,
        },
        Some(_) if has_critical => CriticVerdict {
            verdict: Verdict::NeedsFixes,
            findings,
        },
        Some(Verdict::NeedsFixes) => {
            findings.push(Finding::critical("", "critic asked for fixes without naming a critical finding"));
            CriticVerdict {
                verdict: Verdict::NeedsFixes,
                findings,
            }
        }
        _ => {
            findings.push(Finding::critical("", format!("unparseable critic report: {}", text.trim())));
            CriticVerdict {
                verdict: Verdict::NeedsFixes,
                findings,
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestsVerdict {
    Pass,
    Fail,
}

/// The tester's last `TESTS:` line. No line counts as a failure.
pub fn parse_tests_verdict(text: &str) -> TestsVerdict {
    text.lines()
        .rev()
        .find_map(|l| {
            let t = l.trim();
            let head = t.get(..6).filter(|h| h.eq_ignore_ascii_case("TESTS:"))?;
            Some(match t[head.len()..].trim().to_ascii_uppercase().as_str() {
                "PASS" | "PASSED" => TestsVerdict::Pass,
                _ => TestsVerdict::Fail,
            })
        })
        .unwrap_or(TestsVerdict::Fail)
}
