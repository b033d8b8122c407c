//! Markup to blocks: boilerplate stripping, section/code/figure extraction.
//!
//! Handles a constrained tag subset with a small tokenizer. Every tag must
//! be closed explicitly except the void tags; script and style bodies are
//! raw text. Character references are left undecoded.

use serde::{Deserialize, Serialize};

use crate::schema::{content_id, CharSpan, ContextState, Entity, EntityKind, Observation, Provenance, Relation, RelationKind};

/// Subtrees rooted at these tags are boilerplate.
pub const BOILERPLATE_TAGS: [&str; 5] = ["nav", "footer", "aside", "script", "style"];
pub const VOID_TAGS: [&str; 5] = ["img", "br", "meta", "link", "hr"];
const RAW_TEXT_TAGS: [&str; 2] = ["script", "style"];

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum WebError {
    #[error("unbalanced tag <{tag}> at offset {offset}")]
    Unbalanced { tag: String, offset: usize },
    #[error("malformed tag at offset {offset}")]
    MalformedTag { offset: usize },
}

impl WebError {
    /// Character offset of the problem.
    pub fn offset(&self) -> usize {
        match self {
            WebError::Unbalanced { offset, .. } | WebError::MalformedTag { offset } => *offset,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    Section,
    Paragraph,
    Code,
    Figure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomBlock {
    pub kind: BlockKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level: Option<u8>,
    pub text: String,
    /// Character interval of the whole element in the input markup.
    pub source_offset: CharSpan,
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Text { start: usize, end: usize },
    Open { name: String, attrs: Vec<(String, String)>, start: usize, end: usize, self_closing: bool },
    Close { name: String, start: usize, end: usize },
    /// Comments and doctype.
    Other { start: usize, end: usize },
}

fn tokenize(src: &str) -> Result<Vec<Token>, WebError> {
    let bytes = src.as_bytes();
    let mut tokens = Vec::new();
    let mut pos = 0;
    let mut text_start = 0;
    let flush = |tokens: &mut Vec<Token>, from: usize, to: usize| {
        if to > from {
            tokens.push(Token::Text { start: from, end: to });
        }
    };
    while pos < bytes.len() {
        if bytes[pos] != b'<' {
            pos += 1;
            continue;
        }
        let next = bytes.get(pos + 1).copied();
        if src[pos..].starts_with("<!--") {
            flush(&mut tokens, text_start, pos);
            let end = src[pos + 4..]
                .find("-->")
                .map(|i| pos + 4 + i + 3)
                .ok_or(WebError::MalformedTag { offset: char_offset(src, pos) })?;
            tokens.push(Token::Other { start: pos, end });
            pos = end;
            text_start = pos;
        } else if next == Some(b'!') || next == Some(b'?') {
            flush(&mut tokens, text_start, pos);
            let end = src[pos..]
                .find('>')
                .map(|i| pos + i + 1)
                .ok_or(WebError::MalformedTag { offset: char_offset(src, pos) })?;
            tokens.push(Token::Other { start: pos, end });
            pos = end;
            text_start = pos;
        } else if next == Some(b'/') && bytes.get(pos + 2).is_some_and(u8::is_ascii_alphabetic) {
            flush(&mut tokens, text_start, pos);
            let (name, after) = read_name(src, pos + 2);
            let gt = src[after..]
                .find('>')
                .map(|i| after + i)
                .ok_or(WebError::MalformedTag { offset: char_offset(src, pos) })?;
            if !src[after..gt].trim().is_empty() {
                return Err(WebError::MalformedTag { offset: char_offset(src, pos) });
            }
            tokens.push(Token::Close { name, start: pos, end: gt + 1 });
            pos = gt + 1;
            text_start = pos;
        } else if next.is_some_and(|c| c.is_ascii_alphabetic()) {
            flush(&mut tokens, text_start, pos);
            let (name, end, attrs, self_closing) = read_open_tag(src, pos)?;
            tokens.push(Token::Open { name: name.clone(), attrs, start: pos, end, self_closing });
            pos = end;
            text_start = pos;
            if RAW_TEXT_TAGS.contains(&name.as_str()) && !self_closing {
                let close = format!("</{name}");
                let lower = src[pos..].to_ascii_lowercase();
                let body_end = lower
                    .find(&close)
                    .map(|i| pos + i)
                    .ok_or(WebError::Unbalanced { tag: name.clone(), offset: char_offset(src, tokens_last_start(&tokens)) })?;
                flush(&mut tokens, pos, body_end);
                pos = body_end;
                text_start = pos;
            }
        } else {
            // a bare '<' is text
            pos += 1;
        }
    }
    flush(&mut tokens, text_start, bytes.len());
    Ok(tokens)
}

fn tokens_last_start(tokens: &[Token]) -> usize {
    match tokens.last() {
        Some(Token::Open { start, .. }) => *start,
        _ => 0,
    }
}

fn read_name(src: &str, from: usize) -> (String, usize) {
    let end = src[from..]
        .find(|c: char| !(c.is_ascii_alphanumeric() || c == '-'))
        .map(|i| from + i)
        .unwrap_or(src.len());
    (src[from..end].to_ascii_lowercase(), end)
}

type OpenTag = (String, usize, Vec<(String, String)>, bool);

fn read_open_tag(src: &str, start: usize) -> Result<OpenTag, WebError> {
    let bad = || WebError::MalformedTag { offset: char_offset(src, start) };
    let (name, mut pos) = read_name(src, start + 1);
    let bytes = src.as_bytes();
    let mut attrs = Vec::new();
    loop {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        match bytes.get(pos) {
            None => return Err(bad()),
            Some(b'>') => return Ok((name, pos + 1, attrs, false)),
            Some(b'/') if bytes.get(pos + 1) == Some(&b'>') => return Ok((name, pos + 2, attrs, true)),
            _ => {}
        }
        let key_end = src[pos..]
            .find(|c: char| c.is_ascii_whitespace() || c == '=' || c == '>' || c == '/')
            .map(|i| pos + i)
            .ok_or_else(bad)?;
        if key_end == pos {
            return Err(bad());
        }
        let key = src[pos..key_end].to_ascii_lowercase();
        pos = key_end;
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let mut value = String::new();
        if bytes.get(pos) == Some(&b'=') {
            pos += 1;
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            match bytes.get(pos) {
                Some(&q) if q == b'"' || q == b'\'' => {
                    let close = src[pos + 1..].find(q as char).map(|i| pos + 1 + i).ok_or_else(bad)?;
                    value = src[pos + 1..close].to_string();
                    pos = close + 1;
                }
                Some(_) => {
                    let end = src[pos..]
                        .find(|c: char| c.is_ascii_whitespace() || c == '>')
                        .map(|i| pos + i)
                        .ok_or_else(bad)?;
                    value = src[pos..end].to_string();
                    pos = end;
                }
                None => return Err(bad()),
            }
        }
        attrs.push((key, value));
    }
}

fn char_offset(src: &str, byte: usize) -> usize {
    src[..byte].chars().count()
}

#[derive(Debug)]
struct Element {
    name: String,
    attrs: Vec<(String, String)>,
    start: usize,
    end: usize,
    children: Vec<Node>,
}

#[derive(Debug)]
enum Node {
    Text { start: usize, end: usize },
    Element(Element),
}

fn parse(src: &str) -> Result<Vec<Node>, WebError> {
    let tokens = tokenize(src)?;
    let mut stack: Vec<Element> = Vec::new();
    let mut roots: Vec<Node> = Vec::new();
    fn push(stack: &mut [Element], roots: &mut Vec<Node>, node: Node) {
        match stack.last_mut() {
            Some(parent) => parent.children.push(node),
            None => roots.push(node),
        }
    }
    for tok in tokens {
        match tok {
            Token::Text { start, end } => push(&mut stack, &mut roots, Node::Text { start, end }),
            Token::Other { .. } => {}
            Token::Open { name, attrs, start, end, self_closing } => {
                let el = Element { name, attrs, start, end, children: Vec::new() };
                if self_closing || VOID_TAGS.contains(&el.name.as_str()) {
                    push(&mut stack, &mut roots, Node::Element(el));
                } else {
                    stack.push(el);
                }
            }
            Token::Close { name, start, end } => {
                if VOID_TAGS.contains(&name.as_str()) {
                    continue;
                }
                match stack.pop() {
                    Some(mut el) if el.name == name => {
                        el.end = end;
                        push(&mut stack, &mut roots, Node::Element(el));
                    }
                    _ => {
                        return Err(WebError::Unbalanced { tag: format!("/{name}"), offset: char_offset(src, start) });
                    }
                }
            }
        }
    }
    if let Some(el) = stack.into_iter().next_back() {
        return Err(WebError::Unbalanced { tag: el.name, offset: char_offset(src, el.start) });
    }
    Ok(roots)
}

/// Removes boilerplate subtrees; everything else is kept byte-for-byte.
pub fn strip_boilerplate(markup: &str) -> Result<String, WebError> {
    let roots = parse(markup)?;
    let mut cuts = Vec::new();
    fn collect(nodes: &[Node], cuts: &mut Vec<(usize, usize)>) {
        for n in nodes {
            if let Node::Element(el) = n {
                if BOILERPLATE_TAGS.contains(&el.name.as_str()) {
                    cuts.push((el.start, el.end));
                } else {
                    collect(&el.children, cuts);
                }
            }
        }
    }
    collect(&roots, &mut cuts);
    let mut out = String::with_capacity(markup.len());
    let mut pos = 0;
    for (s, e) in cuts {
        out.push_str(&markup[pos..s]);
        pos = e;
    }
    out.push_str(&markup[pos..]);
    Ok(out)
}

fn heading_level(name: &str) -> Option<u8> {
    match name.as_bytes() {
        [b'h', d @ b'1'..=b'6'] => Some(d - b'0'),
        _ => None,
    }
}

fn raw_text(src: &str, nodes: &[Node], out: &mut String) {
    for n in nodes {
        match n {
            Node::Text { start, end } => out.push_str(&src[*start..*end]),
            Node::Element(el) if el.name == "br" => out.push('\n'),
            Node::Element(el) if !RAW_TEXT_TAGS.contains(&el.name.as_str()) => raw_text(src, &el.children, out),
            Node::Element(_) => {}
        }
    }
}

fn collapsed_text(src: &str, nodes: &[Node]) -> String {
    let mut raw = String::new();
    raw_text(src, nodes, &mut raw);
    raw.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Blocks in document order. Headings give sections; `pre` and standalone
/// `code` give code blocks with their inner text verbatim; `img` with `alt`
/// gives figures; `p` gives paragraphs. Inline code inside a paragraph or
/// heading stays part of its text.
pub fn extract_blocks(markup: &str) -> Result<Vec<DomBlock>, WebError> {
    let roots = parse(markup)?;
    let mut blocks = Vec::new();
    walk(markup, &roots, &mut blocks);
    blocks.sort_by_key(|b| b.source_offset.start);
    Ok(blocks)
}

fn walk(src: &str, nodes: &[Node], out: &mut Vec<DomBlock>) {
    for n in nodes {
        let Node::Element(el) = n else { continue };
        let span = CharSpan::new(char_offset(src, el.start), char_offset(src, el.end));
        let name = el.name.as_str();
        if let Some(level) = heading_level(name) {
            let text = collapsed_text(src, &el.children);
            if !text.is_empty() {
                out.push(DomBlock { kind: BlockKind::Section, level: Some(level), text, source_offset: span });
            }
            figures(src, &el.children, out);
        } else if name == "pre" || name == "code" {
            let mut text = String::new();
            raw_text(src, &el.children, &mut text);
            if !text.is_empty() {
                out.push(DomBlock { kind: BlockKind::Code, level: None, text, source_offset: span });
            }
        } else if name == "p" {
            let text = collapsed_text(src, &el.children);
            if !text.is_empty() {
                out.push(DomBlock { kind: BlockKind::Paragraph, level: None, text, source_offset: span });
            }
            figures(src, &el.children, out);
        } else if name == "img" {
            push_figure(src, el, out);
        } else if !RAW_TEXT_TAGS.contains(&name) {
            walk(src, &el.children, out);
        }
    }
}

fn figures(src: &str, nodes: &[Node], out: &mut Vec<DomBlock>) {
    for n in nodes {
        if let Node::Element(el) = n {
            if el.name == "img" {
                push_figure(src, el, out);
            } else {
                figures(src, &el.children, out);
            }
        }
    }
}

fn push_figure(src: &str, el: &Element, out: &mut Vec<DomBlock>) {
    let alt = el.attrs.iter().find(|(k, _)| k == "alt").map(|(_, v)| v.trim()).unwrap_or("");
    if !alt.is_empty() {
        out.push(DomBlock {
            kind: BlockKind::Figure,
            level: None,
            text: alt.to_string(),
            source_offset: CharSpan::new(char_offset(src, el.start), char_offset(src, el.end)),
        });
    }
}

/// Sections, code and figures become entities, paragraphs observations.
/// Each block after a section gets a `contains` relation from the nearest
/// preceding section of lower level; for a section that is the nearest
/// section with a smaller level, for other blocks the nearest section.
pub fn blocks_to_state(blocks: &[DomBlock], source: &Provenance) -> ContextState {
    let mut state = ContextState::new();
    // (level, id) of open sections, outermost first
    let mut sections: Vec<(u8, String)> = Vec::new();
    for (i, b) in blocks.iter().enumerate() {
        let prov = source
            .clone()
            .with_locator(format!("chars={}-{}", b.source_offset.start, b.source_offset.end));
        let id = content_id(
            match b.kind {
                BlockKind::Section => "sec",
                BlockKind::Paragraph => "para",
                BlockKind::Code => "code",
                BlockKind::Figure => "fig",
            },
            &[&source.source_id, &i.to_string(), &b.text],
        );
        let parent = match (b.kind, b.level) {
            (BlockKind::Section, Some(level)) => {
                while sections.last().is_some_and(|(l, _)| *l >= level) {
                    sections.pop();
                }
                sections.last().map(|(_, id)| id.clone())
            }
            _ => sections.last().map(|(_, id)| id.clone()),
        };
        let span = b.source_offset;
        match b.kind {
            BlockKind::Paragraph => state.observations.push(Observation {
                id: id.clone(),
                text: b.text.clone(),
                score: 0.0,
                provenance: vec![prov.clone()],
            }),
            kind => {
                let ek = match kind {
                    BlockKind::Section => EntityKind::Section,
                    BlockKind::Code => EntityKind::CodeBlock,
                    _ => EntityKind::Figure,
                };
                let mut e = Entity::new(&id, ek, 1.0, prov.clone()).with_text(b.text.clone()).with_span(span);
                if let Some(level) = b.level {
                    e.attributes.insert("level".into(), level.to_string());
                }
                state.entities.push(e);
            }
        }
        if let Some(parent) = parent {
            state.relations.push(Relation::new(RelationKind::Contains, parent, &id, prov));
        }
        if let (BlockKind::Section, Some(level)) = (b.kind, b.level) {
            sections.push((level, id));
        }
    }
    state.reindex_provenance();
    state
}

/// Strip, extract and convert in one go.
pub fn page_to_state(markup: &str, source: &Provenance) -> Result<(Vec<DomBlock>, ContextState), WebError> {
    let stripped = strip_boilerplate(markup)?;
    let blocks = extract_blocks(&stripped)?;
    let state = blocks_to_state(&blocks, source);
    Ok((blocks, state))
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{TimeZone, Utc};

    fn src() -> Provenance {
        Provenance::for_bytes("url:https://example.com/", b"x", Utc.with_ymd_and_hms(2026, 1, 1, 0, 0, 0).unwrap())
    }

    #[test]
    fn strip_examples() {
        assert_eq!(strip_boilerplate("<nav><a href='/'>home</a></nav>").unwrap(), "");
        let plain = "<main><h1>T</h1><p>x</p></main>";
        assert_eq!(strip_boilerplate(plain).unwrap(), plain);
        let nested = "<main><p>a</p><nav><p>menu</p></nav><p>b</p></main>";
        assert_eq!(strip_boilerplate(nested).unwrap(), "<main><p>a</p><p>b</p></main>");
        let s = "<body><script>if (a < b && c > d) {}</script><p>k</p><style>p>a{}</style></body>";
        assert_eq!(strip_boilerplate(s).unwrap(), "<body><p>k</p></body>");
    }

    #[test]
    fn unbalanced_reports_offset() {
        let err = strip_boilerplate("<main><p>x</main>").unwrap_err();
        assert_eq!(err.offset(), 10);
        let err = extract_blocks("<div><p>open").unwrap_err();
        assert!(matches!(err, WebError::Unbalanced { ref tag, offset: 5 } if tag == "p"));
    }

    #[test]
    fn extract_examples() {
        let b = extract_blocks("<h1>T</h1><p>x</p>").unwrap();
        assert_eq!(b.len(), 2);
        assert_eq!((b[0].kind, b[0].level, b[0].text.as_str()), (BlockKind::Section, Some(1), "T"));
        assert_eq!((b[1].kind, b[1].text.as_str()), (BlockKind::Paragraph, "x"));
        assert_eq!(b[0].source_offset, CharSpan::new(0, 10));

        let code = extract_blocks("<pre><code>a\n  b</code></pre>").unwrap();
        assert_eq!(code.len(), 1);
        assert_eq!(code[0].kind, BlockKind::Code);
        assert_eq!(code[0].text, "a\n  b");
    }

    #[test]
    fn figures_need_alt() {
        let b = extract_blocks(r#"<div><img src="a.png" alt="A chart"><img src="b.png"/></div>"#).unwrap();
        assert_eq!(b.len(), 1);
        assert_eq!((b[0].kind, b[0].text.as_str()), (BlockKind::Figure, "A chart"));
    }

    #[test]
    fn inline_code_stays_in_paragraph() {
        let b = extract_blocks("<p>call <code>f(x)</code> now</p>").unwrap();
        assert_eq!(b.len(), 1);
        assert_eq!(b[0].text, "call f(x) now");
    }

    #[test]
    fn offsets_are_characters() {
        let b = extract_blocks("<p>é</p><p>z</p>").unwrap();
        assert_eq!(b[1].source_offset, CharSpan::new(8, 16));
    }

    #[test]
    fn state_examples() {
        let b = extract_blocks("<h1>T</h1><p>x</p>").unwrap();
        let s = blocks_to_state(&b, &src());
        assert_eq!((s.entities.len(), s.observations.len(), s.relations.len()), (1, 1, 1));
        assert_eq!(s.relations[0].subject, s.entities[0].id);
        s.validate().unwrap();

        let b = extract_blocks("<p>first</p><h2>S</h2>").unwrap();
        assert!(blocks_to_state(&b, &src()).relations.is_empty());
    }

    #[test]
    fn subsections_hang_off_lower_level() {
        let b = extract_blocks("<h1>A</h1><h2>B</h2><p>p</p><h2>C</h2><h1>D</h1>").unwrap();
        let s = blocks_to_state(&b, &src());
        let id = |t: &str| s.entities.iter().find(|e| e.text.as_deref() == Some(t)).unwrap().id.clone();
        let pairs: Vec<(String, String)> = s.relations.iter().map(|r| (r.subject.clone(), r.object.clone())).collect();
        assert!(pairs.contains(&(id("A"), id("B"))));
        assert!(pairs.contains(&(id("B"), s.observations[0].id.clone())));
        assert!(pairs.contains(&(id("A"), id("C"))));
        assert_eq!(s.relations.len(), 3);
    }
}
