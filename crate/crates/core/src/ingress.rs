//! Request normalization, modality detection and rule-based safety checks.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use regex::Regex;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum IngressError {
    #[error("no content")]
    NoContent,
    #[error("rules line {line}: {reason}")]
    BadRule { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MediaKind {
    Image,
    Audio,
    Pdf,
    Html,
    PlainText,
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attachment {
    pub name: String,
    pub media_kind: MediaKind,
    #[serde(with = "payload_b64")]
    pub payload: Vec<u8>,
    #[serde(default)]
    pub sniffed: bool,
}

impl Attachment {
    pub fn new(name: impl Into<String>, media_kind: MediaKind, payload: Vec<u8>) -> Self {
        Self {
            name: name.into(),
            media_kind,
            payload,
            sniffed: false,
        }
    }
}

mod payload_b64 {
    use base64::Engine;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&base64::engine::general_purpose::STANDARD.encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        base64::engine::general_purpose::STANDARD
            .decode(s.as_bytes())
            .map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Request {
    pub id: String,
    #[serde(default)]
    pub text: Option<String>,
    #[serde(default)]
    pub attachments: Vec<Attachment>,
    #[serde(default)]
    pub declared_urls: Vec<String>,
    #[serde(default)]
    pub overrides: BTreeMap<String, serde_json::Value>,
    /// Non-fatal problems found during normalization, e.g. malformed URLs.
    #[serde(default)]
    pub flags: Vec<String>,
}

impl Request {
    pub fn text(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            text: Some(text.into()),
            attachments: Vec::new(),
            declared_urls: Vec::new(),
            overrides: BTreeMap::new(),
            flags: Vec::new(),
        }
    }

    pub fn query(&self) -> &str {
        self.text.as_deref().unwrap_or("")
    }

    fn has_content(&self) -> bool {
        self.text.as_deref().is_some_and(|t| !t.trim().is_empty())
            || !self.attachments.is_empty()
            || !self.declared_urls.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Text,
    Image,
    Audio,
    Document,
    Url,
}

impl Modality {
    pub fn as_str(&self) -> &'static str {
        match self {
            Modality::Text => "text",
            Modality::Image => "image",
            Modality::Audio => "audio",
            Modality::Document => "document",
            Modality::Url => "url",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SafetyVerdict {
    Allow,
    Flag,
    Deny,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngressSummary {
    pub modalities: BTreeSet<Modality>,
    pub safety: SafetyVerdict,
    /// Modality names joined by `+`, e.g. `audio+text`.
    pub intent_hint: String,
}

/// Kind implied by leading magic bytes, if recognizable.
pub fn sniff(payload: &[u8]) -> Option<MediaKind> {
    const PNG: &[u8] = b"\x89PNG\r\n\x1a\n";
    if payload.starts_with(PNG) {
        return Some(MediaKind::Image);
    }
    if payload.starts_with(b"\xFF\xD8\xFF") {
        return Some(MediaKind::Image);
    }
    if payload.len() >= 12 && &payload[0..4] == b"RIFF" && &payload[8..12] == b"WAVE" {
        return Some(MediaKind::Audio);
    }
    if payload.starts_with(b"%PDF-") {
        return Some(MediaKind::Pdf);
    }
    let head = String::from_utf8_lossy(&payload[..payload.len().min(512)]).to_ascii_lowercase();
    let trimmed = head.trim_start_matches('\u{feff}').trim_start();
    if trimmed.starts_with("<!doctype html") || trimmed.starts_with("<html") {
        return Some(MediaKind::Html);
    }
    None
}

fn looks_like_text(payload: &[u8]) -> bool {
    std::str::from_utf8(payload).is_ok_and(|s| !s.chars().any(|c| c.is_control() && !c.is_whitespace()))
}

/// Sniffs media kinds, trims text, validates and deduplicates URLs.
pub fn normalize_request(request: &Request) -> Request {
    let mut out = request.clone();
    out.text = request.text.as_ref().map(|t| t.trim().to_string());
    for att in &mut out.attachments {
        match sniff(&att.payload) {
            Some(kind) => {
                att.media_kind = kind;
                att.sniffed = true;
            }
            None => {
                // a declared plain_text survives if the bytes are text
                if att.media_kind == MediaKind::PlainText && looks_like_text(&att.payload) {
                    att.sniffed = true;
                } else if !att.sniffed {
                    att.media_kind = if looks_like_text(&att.payload) {
                        MediaKind::PlainText
                    } else {
                        MediaKind::Unknown
                    };
                    att.sniffed = true;
                }
            }
        }
    }
    let mut seen = HashSet::new();
    let mut urls = Vec::new();
    for raw in &request.declared_urls {
        let candidate = raw.trim();
        let ok = url::Url::parse(candidate)
            .map(|u| matches!(u.scheme(), "http" | "https") && u.host().is_some())
            .unwrap_or(false);
        if !ok {
            let flag = format!("malformed_url:{candidate}");
            if !out.flags.contains(&flag) {
                out.flags.push(flag);
            }
            continue;
        }
        if seen.insert(candidate.to_string()) {
            urls.push(candidate.to_string());
        }
    }
    out.declared_urls = urls;
    out
}

pub fn detect_modalities(request: &Request) -> Result<BTreeSet<Modality>, IngressError> {
    if !request.has_content() {
        return Err(IngressError::NoContent);
    }
    let mut set = BTreeSet::new();
    if request.text.as_deref().is_some_and(|t| !t.trim().is_empty()) {
        set.insert(Modality::Text);
    }
    for att in &request.attachments {
        match att.media_kind {
            MediaKind::Image => {
                set.insert(Modality::Image);
            }
            MediaKind::Audio => {
                set.insert(Modality::Audio);
            }
            MediaKind::Pdf | MediaKind::Html | MediaKind::PlainText => {
                set.insert(Modality::Document);
            }
            MediaKind::Unknown => {}
        }
    }
    if !request.declared_urls.is_empty() {
        set.insert(Modality::Url);
    }
    if set.is_empty() {
        return Err(IngressError::NoContent);
    }
    Ok(set)
}

#[derive(Debug, Clone)]
pub struct SafetyRule {
    pub verdict: SafetyVerdict,
    pub pattern: Regex,
}

/// Ordered deny/flag patterns; the first match decides.
#[derive(Debug, Clone, Default)]
pub struct SafetyRules {
    rules: Vec<SafetyRule>,
}

impl SafetyRules {
    /// Parses the rules file format: one `deny:<regex>` or `flag:<regex>` per
    /// line. Blank lines and lines starting with `#` are ignored.
    pub fn parse(text: &str) -> Result<Self, IngressError> {
        let mut rules = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (verdict, pattern) = if let Some(p) = line.strip_prefix("deny:") {
                (SafetyVerdict::Deny, p)
            } else if let Some(p) = line.strip_prefix("flag:") {
                (SafetyVerdict::Flag, p)
            } else {
                return Err(IngressError::BadRule {
                    line: i + 1,
                    reason: "expected deny: or flag: prefix".into(),
                });
            };
            let pattern = Regex::new(pattern).map_err(|e| IngressError::BadRule {
                line: i + 1,
                reason: e.to_string(),
            })?;
            rules.push(SafetyRule { verdict, pattern });
        }
        Ok(Self { rules })
    }

    pub fn from_lines<S: AsRef<str>>(lines: &[S]) -> Result<Self, IngressError> {
        let joined: Vec<&str> = lines.iter().map(AsRef::as_ref).collect();
        Self::parse(&joined.join("\n"))
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    /// The first rule matching `text`, if any.
    pub fn first_match(&self, text: &str) -> Option<&SafetyRule> {
        self.rules.iter().find(|r| r.pattern.is_match(text))
    }
}

pub fn safety_check(request: &Request, rules: &SafetyRules) -> SafetyVerdict {
    rules
        .first_match(request.query())
        .map(|r| r.verdict)
        .unwrap_or(SafetyVerdict::Allow)
}

/// Normalizes nothing; expects an already normalized request.
pub fn summarize(request: &Request, rules: &SafetyRules) -> Result<IngressSummary, IngressError> {
    let modalities = detect_modalities(request)?;
    let intent_hint = modalities
        .iter()
        .map(Modality::as_str)
        .collect::<Vec<_>>()
        .join("+");
    Ok(IngressSummary {
        safety: safety_check(request, rules),
        modalities,
        intent_hint,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn with_attachment(name: &str, kind: MediaKind, payload: &[u8]) -> Request {
        let mut r = Request::text("r1", "look");
        r.attachments.push(Attachment::new(name, kind, payload.to_vec()));
        r
    }

    #[test]
    fn text_only() {
        let r = Request::text("r", "hello");
        assert_eq!(detect_modalities(&r).unwrap(), BTreeSet::from([Modality::Text]));
    }

    #[test]
    fn png_attachment_is_image() {
        let r = normalize_request(&with_attachment(
            "x.bin",
            MediaKind::Unknown,
            b"\x89PNG\r\n\x1a\nrest",
        ));
        assert_eq!(
            detect_modalities(&r).unwrap(),
            BTreeSet::from([Modality::Text, Modality::Image])
        );
    }

    #[test]
    fn url_only() {
        let mut r = Request::text("r", "");
        r.text = None;
        r.declared_urls.push("https://example.com/a".into());
        let r = normalize_request(&r);
        assert_eq!(detect_modalities(&r).unwrap(), BTreeSet::from([Modality::Url]));
    }

    #[test]
    fn empty_request_errors() {
        let mut r = Request::text("r", "   ");
        r.text = Some("   ".into());
        assert!(matches!(detect_modalities(&r), Err(IngressError::NoContent)));
    }

    #[test]
    fn sniff_overrides_name() {
        let r = normalize_request(&with_attachment("a.txt", MediaKind::PlainText, b"%PDF-1.7\n..."));
        assert_eq!(r.attachments[0].media_kind, MediaKind::Pdf);
        assert!(r.attachments[0].sniffed);
    }

    #[test]
    fn sniff_keeps_agreeing_declaration() {
        let r = normalize_request(&with_attachment("a.wav", MediaKind::Audio, b"RIFF\0\0\0\0WAVEfmt "));
        assert_eq!(r.attachments[0].media_kind, MediaKind::Audio);
        let html = normalize_request(&with_attachment("p", MediaKind::Html, b"  <!DOCTYPE html><html>"));
        assert_eq!(html.attachments[0].media_kind, MediaKind::Html);
    }

    #[test]
    fn unknown_bytes_are_unknown() {
        let r = normalize_request(&with_attachment("blob", MediaKind::Pdf, &[0u8, 1, 2, 3, 0xff]));
        assert_eq!(r.attachments[0].media_kind, MediaKind::Unknown);
    }

    #[test]
    fn urls_deduplicated_and_validated() {
        let mut r = Request::text("r", "  hi  ");
        r.declared_urls = vec![
            "https://a.example/x".into(),
            "not a url".into(),
            "https://a.example/x".into(),
            "https://b.example/".into(),
        ];
        let n = normalize_request(&r);
        assert_eq!(n.text.as_deref(), Some("hi"));
        assert_eq!(n.declared_urls, vec!["https://a.example/x", "https://b.example/"]);
        assert_eq!(n.flags, vec!["malformed_url:not a url"]);
    }

    #[test]
    fn normalization_idempotent() {
        let mut r = with_attachment("a.txt", MediaKind::PlainText, b"%PDF-1.4");
        r.declared_urls = vec!["http://x.org".into(), "http://x.org".into(), "bad".into()];
        let once = normalize_request(&r);
        let twice = normalize_request(&once);
        assert_eq!(once, twice);
        assert_eq!(detect_modalities(&once).unwrap(), detect_modalities(&twice).unwrap());
    }

    #[test]
    fn safety_first_match_wins() {
        let r = Request::text("r", "please rm -rf the disk");
        assert_eq!(safety_check(&r, &SafetyRules::default()), SafetyVerdict::Allow);
        let deny = SafetyRules::parse("deny:rm -rf").unwrap();
        assert_eq!(safety_check(&r, &deny), SafetyVerdict::Deny);
        let both = SafetyRules::parse("# comment\nflag:disk\ndeny:rm -rf\n").unwrap();
        assert_eq!(safety_check(&r, &both), SafetyVerdict::Flag);
    }

    #[test]
    fn bad_rule_line_reported() {
        match SafetyRules::parse("deny:ok\nallow:x") {
            Err(IngressError::BadRule { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        assert!(SafetyRules::parse("deny:(").is_err());
    }
}
